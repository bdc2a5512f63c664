//! Sliding-window inference with overlap averaging.
//!
//! Window origins advance by the stride along each axis; a final origin
//! is clamped so the last window abuts the volume boundary, which keeps
//! every voxel covered at least once (this requires stride ≤ window —
//! larger strides would leave gaps and are rejected). Overlapping
//! probabilities are summed and divided by the per-voxel coverage
//! count. Windows run in parallel against the read-only parameters;
//! accumulation happens in fixed origin order so the result is
//! deterministic.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{self, ModelParams};
use crate::tensor::{idx3, Real, Tensor};

/// Origins along one axis: `0, stride, 2·stride, …` plus a clamped
/// final origin at `size - window`.
pub fn axis_origins(size: usize, window: usize, stride: usize) -> Vec<usize> {
    let last = size - window;
    let mut out = Vec::new();
    let mut p = 0;
    while p < last {
        out.push(p);
        p += stride;
    }
    out.push(last);
    out
}

/// All window origins in row-major order.
pub fn window_origins(
    volume: [usize; 3],
    window: [usize; 3],
    stride: [usize; 3],
) -> Result<Vec<[usize; 3]>> {
    for a in 0..3 {
        if window[a] > volume[a] || window[a] == 0 {
            return Err(Error::WindowTooLarge { window, volume });
        }
        if stride[a] == 0 || stride[a] > window[a] {
            return Err(Error::InvalidArgument(format!(
                "stride {stride:?} must be in [1, window] per axis (window {window:?})"
            )));
        }
    }
    let hs = axis_origins(volume[0], window[0], stride[0]);
    let ws = axis_origins(volume[1], window[1], stride[1]);
    let ds = axis_origins(volume[2], window[2], stride[2]);
    let mut out = Vec::with_capacity(hs.len() * ws.len() * ds.len());
    for &h in &hs {
        for &w in &ws {
            for &d in &ds {
                out.push([h, w, d]);
            }
        }
    }
    Ok(out)
}

fn extract_window(volume: &Tensor, vol: [usize; 3], window: [usize; 3], o: [usize; 3]) -> Tensor {
    let mut data = Vec::with_capacity(window[0] * window[1] * window[2]);
    for h in 0..window[0] {
        for w in 0..window[1] {
            for d in 0..window[2] {
                data.push(volume.data()[idx3(vol, o[0] + h, o[1] + w, o[2] + d)]);
            }
        }
    }
    Tensor::new_unchecked(vec![1, window[0], window[1], window[2]], data)
}

/// Per-voxel number of windows covering each position (the divisor used
/// by the averaging step).
pub fn coverage_counts(
    volume: [usize; 3],
    window: [usize; 3],
    stride: [usize; 3],
) -> Result<Vec<u32>> {
    let mut counts = vec![0u32; volume[0] * volume[1] * volume[2]];
    for o in window_origins(volume, window, stride)? {
        for h in 0..window[0] {
            for w in 0..window[1] {
                for d in 0..window[2] {
                    counts[idx3(volume, o[0] + h, o[1] + w, o[2] + d)] += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// Runs the model over every window and averages overlapping
/// probabilities. `volume` is a rank-3 intensity tensor.
pub fn sliding_window_infer(
    params: &ModelParams,
    volume: &Tensor,
    window: [usize; 3],
    stride: [usize; 3],
) -> Result<Tensor> {
    if volume.rank() != 3 {
        return Err(Error::RankMismatch {
            context: "sliding-window volume".into(),
            expected: 3,
            shape: volume.shape().to_vec(),
        });
    }
    let vol = volume.spatial()?;
    let origins = window_origins(vol, window, stride)?;

    let probs: Vec<(usize, Tensor)> = origins
        .par_iter()
        .enumerate()
        .map(|(i, &o)| {
            let x = extract_window(volume, vol, window, o);
            net::forward(params, &x).map(|p| (i, p))
        })
        .collect::<Result<_>>()?;

    let mut sum = vec![0.0 as Real; volume.len()];
    let mut count = vec![0u32; volume.len()];
    for (i, p) in &probs {
        let o = origins[*i];
        let mut src = 0;
        for h in 0..window[0] {
            for w in 0..window[1] {
                for d in 0..window[2] {
                    let dst = idx3(vol, o[0] + h, o[1] + w, o[2] + d);
                    sum[dst] += p.data()[src];
                    count[dst] += 1;
                    src += 1;
                }
            }
        }
    }
    for (s, &c) in sum.iter_mut().zip(&count) {
        debug_assert!(c > 0, "uncovered voxel");
        *s /= c as Real;
    }
    Tensor::from_vec(volume.shape(), sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::net::ArchDescriptor;
    use crate::rng;

    fn random_volume(shape: [usize; 3], seed: u64) -> Tensor {
        let mut r = rng::stream(seed, &[0x766f6c]);
        let n: usize = shape.iter().product();
        Tensor::from_vec(&shape, (0..n).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn small_model(seed: u64) -> ModelParams {
        let arch = ArchDescriptor { channels: vec![4, 8], sram: vec![false, false], ..ArchDescriptor::default() };
        net::init_model(&arch, seed).unwrap()
    }

    /// The default head is zero-initialized (p ≡ 0.5), which would make
    /// aggregation tests vacuous; give it spatially varying outputs.
    fn varied_model(seed: u64) -> ModelParams {
        let mut m = small_model(seed);
        let mut r = rng::stream(seed, &[0x68656164]);
        for v in m.head.w.data_mut() {
            *v = r.gen_range(-0.5..0.5);
        }
        for v in m.head.b.data_mut() {
            *v = r.gen_range(-0.5..0.5);
        }
        m
    }

    #[test]
    fn origin_progression_clamps_final_window() {
        assert_eq!(axis_origins(48, 32, 16), vec![0, 16]);
        assert_eq!(axis_origins(32, 32, 16), vec![0]);
        assert_eq!(axis_origins(40, 32, 16), vec![0, 8]);
        assert_eq!(axis_origins(64, 32, 32), vec![0, 32]);
        assert_eq!(axis_origins(65, 32, 32), vec![0, 32, 33]);
    }

    #[test]
    fn reference_coverage_counts() {
        // Volume 48, window 32, stride 16 per dim: origins {0, 16};
        // independent counter: voxel covered by windows whose origin is
        // in [v-31, v] ∩ {0, 16}.
        let counts = coverage_counts([48, 48, 48], [32, 32, 32], [16, 16, 16]).unwrap();
        let axis = |v: usize| -> u32 {
            [0usize, 16].iter().filter(|&&o| o <= v && v < o + 32).count() as u32
        };
        for h in 0..48 {
            for w in 0..48 {
                for d in 0..48 {
                    let expect = axis(h) * axis(w) * axis(d);
                    assert!(expect >= 1);
                    assert_eq!(counts[idx3([48, 48, 48], h, w, d)], expect, "({h},{w},{d})");
                }
            }
        }
        // Per-axis counts are {1, 2}: overlap band is 16..32.
        assert_eq!(axis(0), 1);
        assert_eq!(axis(20), 2);
        assert_eq!(axis(40), 1);
    }

    #[test]
    fn every_voxel_is_covered() {
        for (vol, win, st) in [
            ([48usize, 40, 32], [32usize, 32, 16], [16usize, 8, 16]),
            ([33, 33, 33], [32, 32, 32], [1, 16, 32]),
            ([16, 16, 16], [16, 16, 16], [16, 16, 16]),
        ] {
            let counts = coverage_counts(vol, win, st).unwrap();
            assert!(counts.iter().all(|&c| c >= 1), "{vol:?} {win:?} {st:?}");
        }
    }

    #[test]
    fn single_window_equals_direct_forward() {
        let params = varied_model(3);
        let v = random_volume([16, 16, 16], 7);
        let direct = net::forward(&params, &v.reshaped(&[1, 16, 16, 16]).unwrap()).unwrap();
        let swi = sliding_window_infer(&params, &v, [16, 16, 16], [16, 16, 16]).unwrap();
        assert_eq!(swi.shape(), &[16, 16, 16]);
        let spread = direct.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |m, &x| {
            (m.0.min(x as f64), m.1.max(x as f64))
        });
        assert!(spread.1 - spread.0 > 1e-3, "model output is constant; test is vacuous");
        for (a, b) in swi.data().iter().zip(direct.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn constant_model_output_stays_constant() {
        // Zeroing the output head forces p ≡ 0.5 everywhere; averaging
        // overlapping windows must not disturb it.
        let mut params = small_model(1);
        for v in params.head.w.data_mut() {
            *v = 0.0;
        }
        let v = random_volume([24, 24, 16], 11);
        let p = sliding_window_infer(&params, &v, [16, 16, 16], [8, 8, 4]).unwrap();
        for &x in p.data() {
            assert!((x - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn overlap_averages_probabilities() {
        // Check the aggregation rule against hand-assembled sums: run
        // the two windows directly, average them over the overlap band,
        // and compare voxel by voxel.
        let params = varied_model(5);
        let v = random_volume([24, 16, 16], 13);
        let p = sliding_window_infer(&params, &v, [16, 16, 16], [8, 16, 16]).unwrap();
        assert_eq!(p.shape(), &[24, 16, 16]);
        let win = |o: [usize; 3]| {
            net::forward(&params, &extract_window(&v, [24, 16, 16], [16, 16, 16], o)).unwrap()
        };
        let w0 = win([0, 0, 0]);
        let w1 = win([8, 0, 0]);
        for h in 0..24 {
            for w in 0..16 {
                for d in 0..16 {
                    let got = p.data()[idx3([24, 16, 16], h, w, d)];
                    let expect = if h < 8 {
                        w0.data()[idx3([16, 16, 16], h, w, d)]
                    } else if h < 16 {
                        (w0.data()[idx3([16, 16, 16], h, w, d)]
                            + w1.data()[idx3([16, 16, 16], h - 8, w, d)])
                            / 2.0
                    } else {
                        w1.data()[idx3([16, 16, 16], h - 8, w, d)]
                    };
                    assert_eq!(got.to_bits(), expect.to_bits(), "({h},{w},{d})");
                }
            }
        }
        // All outputs are probabilities.
        assert!(p.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn bad_window_and_stride_error() {
        let params = small_model(2);
        let v = random_volume([16, 16, 16], 1);
        assert!(matches!(
            sliding_window_infer(&params, &v, [32, 16, 16], [16, 16, 16]),
            Err(Error::WindowTooLarge { .. })
        ));
        assert!(matches!(
            sliding_window_infer(&params, &v, [16, 16, 16], [0, 16, 16]),
            Err(Error::InvalidArgument(_))
        ));
        // Stride beyond the window would leave coverage gaps.
        assert!(matches!(
            window_origins([64, 64, 64], [16, 16, 16], [32, 16, 16]),
            Err(Error::InvalidArgument(_))
        ));
    }
}
