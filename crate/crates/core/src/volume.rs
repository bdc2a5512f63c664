//! Synthetic phantom volumes, raw-file I/O, random cropping, and splits.
//!
//! A phantom is a randomly posed ellipsoid (semi-axes 15–35% of each
//! extent) with 1–3 attached capsule protrusions, mimicking an atrial
//! body with appendage/vein stumps. The image is a two-level intensity
//! field (background/foreground) plus a low-frequency cosine texture and
//! additive Gaussian noise. Everything is bitwise-deterministic per
//! `(seed, index, shape, config)`.
//!
//! On-disk format per array: `<base>.json` sidecar (shape, dtype,
//! spacing, optional seed and crop origin) next to `<base>.raw` holding
//! the little-endian row-major payload (`f64` for images, `u8` for
//! masks). A sample is stored as the `<base>_image` / `<base>_mask`
//! pair.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{idx3, Real, Tensor};

const TAG_PHANTOM: u64 = 0x7068_616e;
const TAG_CROP: u64 = 0x6372_6f70;
const TAG_SPLIT: u64 = 0x7370_6c69;

/// Default isotropic voxel spacing in millimetres.
pub const DEFAULT_SPACING: Real = 0.625;

/// Per-sample metadata carried alongside the voxel arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    /// Seed of the RNG stream that produced this sample.
    pub seed: u64,
    /// Isotropic voxel spacing in millimetres.
    pub spacing: Real,
    /// Where a crop was taken from its source volume, if it is one.
    pub crop_origin: Option<[usize; 3]>,
}

/// An intensity volume with its binary segmentation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSample {
    pub image: Tensor,
    pub mask: Tensor,
    pub meta: VolumeMeta,
}

impl VolumeSample {
    pub fn new(image: Tensor, mask: Tensor, meta: VolumeMeta) -> Result<Self> {
        if image.rank() != 3 {
            return Err(Error::RankMismatch {
                context: "volume sample image".into(),
                expected: 3,
                shape: image.shape().to_vec(),
            });
        }
        if !image.same_shape(&mask) {
            return Err(Error::shape("volume sample image vs mask", image.shape(), mask.shape()));
        }
        if !mask.is_binary() {
            return Err(Error::NonBinaryMask { context: "volume sample mask".into() });
        }
        Ok(VolumeSample { image, mask, meta })
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.image.shape();
        [s[0], s[1], s[2]]
    }

    /// Fraction of voxels labelled foreground.
    pub fn foreground_fraction(&self) -> Real {
        self.mask.data().iter().sum::<Real>() / self.mask.len() as Real
    }
}

/// Knobs for the phantom generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    /// Base intensity outside the foreground.
    pub bg_intensity: Real,
    /// Base intensity inside the foreground.
    pub fg_intensity: Real,
    /// Standard deviation of the additive Gaussian noise
    /// (default: 10% of the foreground/background contrast).
    pub noise_sigma: Real,
    /// Amplitude of the low-frequency cosine texture.
    pub texture_amp: Real,
    /// Isotropic voxel spacing recorded in sample metadata (mm).
    pub spacing: Real,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let bg = 0.2;
        let fg = 0.8;
        PhantomConfig {
            bg_intensity: bg,
            fg_intensity: fg,
            noise_sigma: 0.1 * (fg - bg),
            texture_amp: 0.05,
            spacing: DEFAULT_SPACING,
        }
    }
}

/// Capsule (cylinder with hemispherical caps) in voxel coordinates.
struct Capsule {
    p0: [f64; 3],
    axis: [f64; 3],
    len2: f64,
    r2: f64,
}

impl Capsule {
    fn contains(&self, p: [f64; 3]) -> bool {
        let v = [p[0] - self.p0[0], p[1] - self.p0[1], p[2] - self.p0[2]];
        let t = if self.len2 > 0.0 {
            ((v[0] * self.axis[0] + v[1] * self.axis[1] + v[2] * self.axis[2]) / self.len2)
                .clamp(0.0, 1.0)
        } else {
            0.0
        };
        let dx = v[0] - t * self.axis[0];
        let dy = v[1] - t * self.axis[1];
        let dz = v[2] - t * self.axis[2];
        dx * dx + dy * dy + dz * dz <= self.r2
    }
}

/// Random pose drawn once per sample. The ellipsoid lives in normalized
/// `[0,1]^3` coordinates (so its volume fraction is independent of the
/// voxel grid), rotated about the depth axis; protrusions are capsules
/// in voxel space so they stay roughly round on anisotropic grids.
struct Phantom {
    center: [f64; 3],
    semi: [f64; 3],
    cos_t: f64,
    sin_t: f64,
    capsules: Vec<Capsule>,
}

impl Phantom {
    /// Rotate an offset from lab frame into the ellipsoid frame.
    fn to_body(&self, d: [f64; 3]) -> [f64; 3] {
        [
            self.cos_t * d[0] + self.sin_t * d[1],
            -self.sin_t * d[0] + self.cos_t * d[1],
            d[2],
        ]
    }

    fn in_ellipsoid(&self, x: [f64; 3]) -> bool {
        let d = self.to_body([x[0] - self.center[0], x[1] - self.center[1], x[2] - self.center[2]]);
        let a = d[0] / self.semi[0];
        let b = d[1] / self.semi[1];
        let c = d[2] / self.semi[2];
        a * a + b * b + c * c <= 1.0
    }

    /// Distance from the center to the surface along unit direction `u`.
    fn surface_t(&self, u: [f64; 3]) -> f64 {
        let d = self.to_body(u);
        let a = d[0] / self.semi[0];
        let b = d[1] / self.semi[1];
        let c = d[2] / self.semi[2];
        1.0 / (a * a + b * b + c * c).sqrt()
    }
}

fn check_shape(shape: [usize; 3]) -> Result<()> {
    if shape.iter().any(|&s| s < 16) {
        return Err(Error::InvalidArgument(format!(
            "phantom shape {shape:?} must be at least 16 per dimension"
        )));
    }
    Ok(())
}

/// Generates `count` deterministic phantom samples.
pub fn synth_generate(
    seed: u64,
    count: usize,
    shape: [usize; 3],
    cfg: &PhantomConfig,
) -> Result<Vec<VolumeSample>> {
    check_shape(shape)?;
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if cfg.noise_sigma < 0.0 || cfg.texture_amp < 0.0 || cfg.spacing <= 0.0 {
        return Err(Error::InvalidArgument(
            "noise / texture amplitudes must be non-negative and spacing positive".into(),
        ));
    }
    (0..count)
        .into_par_iter()
        .map(|i| generate_one(seed, i as u64, shape, cfg))
        .collect()
}

/// Draws all pose and texture parameters in a fixed order; changing the
/// order would silently reshuffle every dataset, so append new draws at
/// the end only. Returns the phantom plus texture frequencies and phase.
fn draw_pose(r: &mut rand_chacha::ChaCha8Rng, shape: [usize; 3]) -> (Phantom, [f64; 3], f64) {
    let ext = [shape[0] as f64, shape[1] as f64, shape[2] as f64];
    let min_ext = ext[0].min(ext[1]).min(ext[2]);
    let center = [r.gen_range(0.40..0.60), r.gen_range(0.40..0.60), r.gen_range(0.40..0.60)];
    let semi = [r.gen_range(0.15..0.35), r.gen_range(0.15..0.35), r.gen_range(0.15..0.35)];
    let theta = r.gen_range(0.0..PI);
    let freq = [
        r.gen_range(1..=3u32) as f64,
        r.gen_range(1..=3u32) as f64,
        r.gen_range(1..=3u32) as f64,
    ];
    let phase = r.gen_range(0.0..TAU);
    let mut phantom = Phantom {
        center,
        semi,
        cos_t: theta.cos(),
        sin_t: theta.sin(),
        capsules: Vec::new(),
    };
    let n_prot = r.gen_range(1..=3usize);
    for _ in 0..n_prot {
        let u: [f64; 3] = UnitSphere.sample(r);
        let radius = r.gen_range(0.04..0.08) * min_ext;
        let length = r.gen_range(0.15..0.30) * min_ext;
        let t = phantom.surface_t(u);
        let p0 = [
            (phantom.center[0] + t * u[0]) * ext[0],
            (phantom.center[1] + t * u[1]) * ext[1],
            (phantom.center[2] + t * u[2]) * ext[2],
        ];
        // Unit axis in voxel space, so the capsule is round in voxels.
        let mut v = [u[0] * ext[0], u[1] * ext[1], u[2] * ext[2]];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v = [v[0] / norm, v[1] / norm, v[2] / norm];
        phantom.capsules.push(Capsule {
            p0,
            axis: [v[0] * length, v[1] * length, v[2] * length],
            len2: length * length,
            r2: radius * radius,
        });
    }
    (phantom, freq, phase)
}

fn rasterize(phantom: &Phantom, shape: [usize; 3]) -> Vec<Real> {
    let [h, w, d] = shape;
    let ext = [h as f64, w as f64, d as f64];
    let mut mask = vec![0.0 as Real; h * w * d];
    for ih in 0..h {
        for iw in 0..w {
            for id in 0..d {
                let vox = [ih as f64 + 0.5, iw as f64 + 0.5, id as f64 + 0.5];
                let nx = [vox[0] / ext[0], vox[1] / ext[1], vox[2] / ext[2]];
                let fg = phantom.in_ellipsoid(nx)
                    || phantom.capsules.iter().any(|c| c.contains(vox));
                if fg {
                    mask[idx3([h, w, d], ih, iw, id)] = 1.0;
                }
            }
        }
    }
    mask
}

fn generate_one(master: u64, index: u64, shape: [usize; 3], cfg: &PhantomConfig) -> Result<VolumeSample> {
    let sample_seed = rng::derive_seed(master, &[TAG_PHANTOM, index]);
    let mut r = rng::stream(master, &[TAG_PHANTOM, index]);
    let [h, w, d] = shape;
    let ext = [h as f64, w as f64, d as f64];

    let (phantom, freq, phase) = draw_pose(&mut r, shape);
    let mask = rasterize(&phantom, shape);

    let n = h * w * d;
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    let contrast = cfg.fg_intensity - cfg.bg_intensity;
    let mut image = vec![0.0 as Real; n];
    let mut i = 0;
    for ih in 0..h {
        for iw in 0..w {
            for id in 0..d {
                let nx = [
                    (ih as f64 + 0.5) / ext[0],
                    (iw as f64 + 0.5) / ext[1],
                    (id as f64 + 0.5) / ext[2],
                ];
                let base = cfg.bg_intensity + contrast * mask[i];
                let tex = cfg.texture_amp as f64
                    * (TAU * (freq[0] * nx[0] + freq[1] * nx[1] + freq[2] * nx[2]) + phase).cos();
                let noise = if cfg.noise_sigma > 0.0 {
                    cfg.noise_sigma as f64 * normal.sample(&mut r)
                } else {
                    0.0
                };
                image[i] = base + (tex + noise) as Real;
                i += 1;
            }
        }
    }

    VolumeSample::new(
        Tensor::from_vec(&[h, w, d], image)?,
        Tensor::from_vec(&[h, w, d], mask)?,
        VolumeMeta { seed: sample_seed, spacing: cfg.spacing, crop_origin: None },
    )
}

/// Crops image and mask identically at a uniformly random origin.
pub fn random_crop(sample: &VolumeSample, crop: [usize; 3], rng_seed: u64) -> Result<VolumeSample> {
    let vol = sample.shape();
    if crop.iter().zip(vol.iter()).any(|(&c, &v)| c > v) || crop.contains(&0) {
        return Err(Error::WindowTooLarge { window: crop, volume: vol });
    }
    let mut r = rng::stream(rng_seed, &[TAG_CROP]);
    let origin = [
        r.gen_range(0..=vol[0] - crop[0]),
        r.gen_range(0..=vol[1] - crop[1]),
        r.gen_range(0..=vol[2] - crop[2]),
    ];
    crop_at(sample, crop, origin)
}

/// Extracts the crop with its origin pinned (used by `random_crop` and
/// by tests that need a known window).
pub fn crop_at(sample: &VolumeSample, crop: [usize; 3], origin: [usize; 3]) -> Result<VolumeSample> {
    let vol = sample.shape();
    for a in 0..3 {
        if origin[a] + crop[a] > vol[a] {
            return Err(Error::WindowTooLarge { window: crop, volume: vol });
        }
    }
    let n = crop[0] * crop[1] * crop[2];
    let mut image = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for ih in 0..crop[0] {
        for iw in 0..crop[1] {
            for id in 0..crop[2] {
                let src = idx3(vol, origin[0] + ih, origin[1] + iw, origin[2] + id);
                image.push(sample.image.data()[src]);
                mask.push(sample.mask.data()[src]);
            }
        }
    }
    VolumeSample::new(
        Tensor::from_vec(&crop, image)?,
        Tensor::from_vec(&crop, mask)?,
        VolumeMeta {
            seed: sample.meta.seed,
            spacing: sample.meta.spacing,
            crop_origin: Some(origin),
        },
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    shape: [usize; 3],
    dtype: String,
    spacing: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    crop_origin: Option<[usize; 3]>,
}

fn suffixed(base: &Path, suffix: &str, ext: &str) -> PathBuf {
    let name = base.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    base.with_file_name(format!("{name}_{suffix}.{ext}"))
}

fn write_array(json_path: &Path, raw_path: &Path, sidecar: &Sidecar, payload: &[u8]) -> Result<()> {
    fs::write(json_path, serde_json::to_vec_pretty(sidecar)?)?;
    fs::write(raw_path, payload)?;
    Ok(())
}

fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::VolumeFormat {
        path: path.display().to_string(),
        message: format!("bad sidecar: {e}"),
    })
}

fn read_raw(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected {
        return Err(Error::VolumeFormat {
            path: path.display().to_string(),
            message: format!("payload size mismatch: expected {expected} bytes, got {}", bytes.len()),
        });
    }
    Ok(bytes)
}

/// Writes `<base>_image.{json,raw}` (f64) and `<base>_mask.{json,raw}` (u8).
pub fn save_volume(sample: &VolumeSample, base: &Path) -> Result<()> {
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let shape = sample.shape();
    let image_payload: Vec<u8> =
        sample.image.data().iter().flat_map(|&v| (v as f64).to_le_bytes()).collect();
    write_array(
        &suffixed(base, "image", "json"),
        &suffixed(base, "image", "raw"),
        &Sidecar {
            shape,
            dtype: "f64".into(),
            spacing: sample.meta.spacing as f64,
            seed: Some(sample.meta.seed),
            crop_origin: sample.meta.crop_origin,
        },
        &image_payload,
    )?;
    let mask_payload: Vec<u8> = sample.mask.data().iter().map(|&v| v as u8).collect();
    write_array(
        &suffixed(base, "mask", "json"),
        &suffixed(base, "mask", "raw"),
        &Sidecar {
            shape,
            dtype: "u8".into(),
            spacing: sample.meta.spacing as f64,
            seed: Some(sample.meta.seed),
            crop_origin: sample.meta.crop_origin,
        },
        &mask_payload,
    )?;
    Ok(())
}

/// Writes a standalone rank-3 scalar field (probabilities, boundary
/// weights, …) as `<base>_<suffix>.{json,raw}` with dtype `"f64"`.
pub fn save_field(field: &Tensor, base: &Path, suffix: &str, spacing: Real) -> Result<()> {
    if field.rank() != 3 {
        return Err(Error::RankMismatch {
            context: "field volume".into(),
            expected: 3,
            shape: field.shape().to_vec(),
        });
    }
    if spacing <= 0.0 {
        return Err(Error::InvalidArgument("spacing must be positive".into()));
    }
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let shape = [field.shape()[0], field.shape()[1], field.shape()[2]];
    let payload: Vec<u8> = field.data().iter().flat_map(|&v| (v as f64).to_le_bytes()).collect();
    write_array(
        &suffixed(base, suffix, "json"),
        &suffixed(base, suffix, "raw"),
        &Sidecar { shape, dtype: "f64".into(), spacing: spacing as f64, seed: None, crop_origin: None },
        &payload,
    )
}

/// Loads any single array through its sidecar: `json_path` names the
/// `.json` half of a pair written by [`save_volume`] or [`save_field`];
/// the payload sits next to it with a `.raw` extension. `"u8"` arrays
/// (masks) come back as 0/1 reals. Returns the tensor and its spacing.
pub fn load_field(json_path: &Path) -> Result<(Tensor, Real)> {
    let side = read_sidecar(json_path)?;
    let raw_path = json_path.with_extension("raw");
    let n: usize = side.shape.iter().product();
    let data: Vec<Real> = match side.dtype.as_str() {
        "f64" => read_raw(&raw_path, n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]) as Real)
            .collect(),
        "u8" => read_raw(&raw_path, n)?.iter().map(|&b| b as Real).collect(),
        other => {
            return Err(Error::VolumeFormat {
                path: json_path.display().to_string(),
                message: format!("dtype must be \"f64\" or \"u8\", got {other:?}"),
            })
        }
    };
    Ok((Tensor::from_vec(&side.shape, data)?, side.spacing as Real))
}

/// Loads the `<base>_image` / `<base>_mask` pair written by [`save_volume`].
pub fn load_volume(base: &Path) -> Result<VolumeSample> {
    let img_json = suffixed(base, "image", "json");
    let img_side = read_sidecar(&img_json)?;
    if img_side.dtype != "f64" {
        return Err(Error::VolumeFormat {
            path: img_json.display().to_string(),
            message: format!("image dtype must be \"f64\", got {:?}", img_side.dtype),
        });
    }
    let n: usize = img_side.shape.iter().product();
    let raw = read_raw(&suffixed(base, "image", "raw"), n * 8)?;
    let image_data: Vec<Real> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]) as Real)
        .collect();

    let mask_json = suffixed(base, "mask", "json");
    let mask_side = read_sidecar(&mask_json)?;
    if mask_side.dtype != "u8" {
        return Err(Error::VolumeFormat {
            path: mask_json.display().to_string(),
            message: format!("mask dtype must be \"u8\", got {:?}", mask_side.dtype),
        });
    }
    if mask_side.shape != img_side.shape {
        return Err(Error::VolumeFormat {
            path: mask_json.display().to_string(),
            message: format!("mask shape {:?} != image shape {:?}", mask_side.shape, img_side.shape),
        });
    }
    let mask_raw = read_raw(&suffixed(base, "mask", "raw"), n)?;
    let mask_data: Vec<Real> = mask_raw.iter().map(|&b| b as Real).collect();

    VolumeSample::new(
        Tensor::from_vec(&img_side.shape, image_data)?,
        Tensor::from_vec(&img_side.shape, mask_data)?,
        VolumeMeta {
            seed: img_side.seed.unwrap_or(0),
            spacing: img_side.spacing as Real,
            crop_origin: img_side.crop_origin,
        },
    )
}

/// Deterministic shuffled split into `(train, test)`.
pub fn split<T>(items: Vec<T>, train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    use rand::seq::SliceRandom;
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[TAG_SPLIT]));
    let k = ((n as f64) * train_fraction).round() as usize;
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let train = order[..k].iter().map(|&i| slots[i].take().unwrap()).collect();
    let test = order[k..].iter().map(|&i| slots[i].take().unwrap()).collect();
    Ok((train, test))
}
