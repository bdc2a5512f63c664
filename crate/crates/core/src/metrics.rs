//! Segmentation quality metrics: Dice, Jaccard, HD95, ASSD.
//!
//! Surface voxels are foreground voxels with at least one background
//! 6-neighbor, where the volume border counts as background. Distances
//! are Euclidean between voxel centers in millimetres (isotropic
//! spacing). HD95 is the 95th percentile — linear interpolation between
//! order statistics — of the union of both directed nearest-distance
//! lists; ASSD is the mean of that union. These conventions are pinned
//! so results are exactly reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{idx3, Real, Tensor};

/// Validates a binary pair and returns (|a|, |b|, |a∩b|).
fn counts(a: &Tensor, b: &Tensor, context: &str) -> Result<(usize, usize, usize)> {
    if !a.same_shape(b) {
        return Err(Error::shape(context, a.shape(), b.shape()));
    }
    if !a.is_binary() || !b.is_binary() {
        return Err(Error::NonBinaryMask { context: context.into() });
    }
    let mut na = 0;
    let mut nb = 0;
    let mut inter = 0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        if x == 1.0 {
            na += 1;
        }
        if y == 1.0 {
            nb += 1;
        }
        if x == 1.0 && y == 1.0 {
            inter += 1;
        }
    }
    Ok((na, nb, inter))
}

/// Dice overlap `2|a∩b| / (|a|+|b|)`; 1 when both masks are empty.
pub fn dice(a: &Tensor, b: &Tensor) -> Result<Real> {
    let (na, nb, inter) = counts(a, b, "dice")?;
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as Real / (na + nb) as Real)
}

/// Jaccard index `|a∩b| / |a∪b|`; 1 when both masks are empty.
pub fn jaccard(a: &Tensor, b: &Tensor) -> Result<Real> {
    let (na, nb, inter) = counts(a, b, "jaccard")?;
    let union = na + nb - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as Real / union as Real)
}

/// Thresholds probabilities into a binary mask: `mask = (p >= threshold)`.
pub fn binarize(p: &Tensor, threshold: Real) -> Tensor {
    p.map(|v| if v >= threshold { 1.0 } else { 0.0 })
}

/// Foreground voxels with at least one background 6-neighbor (the
/// volume border counts as background).
pub fn surface_voxels(m: &Tensor) -> Result<Vec<[usize; 3]>> {
    let [h, w, d] = m.spatial()?;
    if m.rank() != 3 {
        return Err(Error::RankMismatch {
            context: "surface extraction".into(),
            expected: 3,
            shape: m.shape().to_vec(),
        });
    }
    if !m.is_binary() {
        return Err(Error::NonBinaryMask { context: "surface extraction".into() });
    }
    let at = |ih: isize, iw: isize, id: isize| -> Real {
        if ih < 0 || iw < 0 || id < 0 || ih >= h as isize || iw >= w as isize || id >= d as isize {
            0.0
        } else {
            m.data()[idx3([h, w, d], ih as usize, iw as usize, id as usize)]
        }
    };
    let mut out = Vec::new();
    for ih in 0..h {
        for iw in 0..w {
            for id in 0..d {
                if m.data()[idx3([h, w, d], ih, iw, id)] != 1.0 {
                    continue;
                }
                let (x, y, z) = (ih as isize, iw as isize, id as isize);
                let exposed = at(x - 1, y, z) == 0.0
                    || at(x + 1, y, z) == 0.0
                    || at(x, y - 1, z) == 0.0
                    || at(x, y + 1, z) == 0.0
                    || at(x, y, z - 1) == 0.0
                    || at(x, y, z + 1) == 0.0;
                if exposed {
                    out.push([ih, iw, id]);
                }
            }
        }
    }
    Ok(out)
}

fn directed_distances(from: &[[usize; 3]], to: &[[usize; 3]], spacing: Real) -> Vec<Real> {
    let mut out: Vec<Real> = from
        .iter()
        .map(|a| {
            let mut best = f64::INFINITY;
            for b in to {
                let dh = a[0] as f64 - b[0] as f64;
                let dw = a[1] as f64 - b[1] as f64;
                let dd = a[2] as f64 - b[2] as f64;
                let d2 = dh * dh + dw * dw + dd * dd;
                if d2 < best {
                    best = d2;
                }
            }
            spacing * best.sqrt() as Real
        })
        .collect();
    out.sort_by(|x, y| x.partial_cmp(y).unwrap());
    out
}

/// Sorted nearest-surface distances in both directions, in mm.
pub fn surface_distances(a: &Tensor, b: &Tensor, spacing: Real) -> Result<(Vec<Real>, Vec<Real>)> {
    if !a.same_shape(b) {
        return Err(Error::shape("surface distances", a.shape(), b.shape()));
    }
    let sa = surface_voxels(a)?;
    let sb = surface_voxels(b)?;
    if sa.is_empty() {
        return Err(Error::EmptySurface { context: "first".into() });
    }
    if sb.is_empty() {
        return Err(Error::EmptySurface { context: "second".into() });
    }
    Ok((directed_distances(&sa, &sb, spacing), directed_distances(&sb, &sa, spacing)))
}

/// Percentile with linear interpolation between order statistics
/// (`rank = p/100 * (n-1)`), over an ascending-sorted slice.
pub fn percentile_linear(sorted: &[Real], p: Real) -> Real {
    assert!(!sorted.is_empty(), "percentile of empty list");
    let rank = (p / 100.0) * (sorted.len() - 1) as Real;
    let lo = rank.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let frac = rank - lo as Real;
    sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
}

fn union_sorted(da: &[Real], db: &[Real]) -> Vec<Real> {
    let mut all = Vec::with_capacity(da.len() + db.len());
    all.extend_from_slice(da);
    all.extend_from_slice(db);
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    all
}

/// 95th-percentile symmetric Hausdorff distance in mm.
pub fn hd95(a: &Tensor, b: &Tensor, spacing: Real) -> Result<Real> {
    let (da, db) = surface_distances(a, b, spacing)?;
    Ok(percentile_linear(&union_sorted(&da, &db), 95.0))
}

/// Average symmetric surface distance in mm.
pub fn assd(a: &Tensor, b: &Tensor, spacing: Real) -> Result<Real> {
    let (da, db) = surface_distances(a, b, spacing)?;
    let all = union_sorted(&da, &db);
    Ok(all.iter().sum::<Real>() / all.len() as Real)
}

/// All four metrics for one prediction/reference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case: String,
    pub dice: Real,
    pub jaccard: Real,
    pub hd95: Real,
    pub assd: Real,
}

pub fn evaluate_pair(case: &str, pred: &Tensor, reference: &Tensor, spacing: Real) -> Result<CaseMetrics> {
    let d = dice(pred, reference)?;
    let j = jaccard(pred, reference)?;
    let (da, db) = surface_distances(pred, reference, spacing)?;
    let all = union_sorted(&da, &db);
    Ok(CaseMetrics {
        case: case.into(),
        dice: d,
        jaccard: j,
        hd95: percentile_linear(&all, 95.0),
        assd: all.iter().sum::<Real>() / all.len() as Real,
    })
}

/// Mean and population standard deviation of one metric across cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: Real,
    pub std: Real,
}

pub fn mean_std(values: &[Real]) -> MeanStd {
    let n = values.len() as Real;
    let mean = values.iter().sum::<Real>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
    MeanStd { mean, std: var.sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsAggregate {
    pub dice: MeanStd,
    pub jaccard: MeanStd,
    pub hd95: MeanStd,
    pub assd: MeanStd,
}

/// Per-case metrics plus aggregates and an echo of the run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub window: [usize; 3],
    pub stride: [usize; 3],
    pub threshold: Real,
    pub checkpoint: String,
    pub cases: Vec<CaseMetrics>,
    pub aggregate: MetricsAggregate,
}

impl MetricsReport {
    pub fn new(
        window: [usize; 3],
        stride: [usize; 3],
        threshold: Real,
        checkpoint: String,
        cases: Vec<CaseMetrics>,
    ) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::InvalidArgument("metrics report needs at least one case".into()));
        }
        let col = |f: fn(&CaseMetrics) -> Real| -> Vec<Real> { cases.iter().map(f).collect() };
        let aggregate = MetricsAggregate {
            dice: mean_std(&col(|c| c.dice)),
            jaccard: mean_std(&col(|c| c.jaccard)),
            hd95: mean_std(&col(|c| c.hd95)),
            assd: mean_std(&col(|c| c.assd)),
        };
        Ok(MetricsReport { window, stride, threshold, checkpoint, cases, aggregate })
    }

    /// One row per case, then `mean` and `std` aggregate rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("case,dice,jaccard,hd95_mm,assd_mm\n");
        for c in &self.cases {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                c.case, c.dice, c.jaccard, c.hd95, c.assd
            ));
        }
        let a = &self.aggregate;
        s.push_str(&format!(
            "mean,{:.6},{:.6},{:.6},{:.6}\n",
            a.dice.mean, a.jaccard.mean, a.hd95.mean, a.assd.mean
        ));
        s.push_str(&format!(
            "std,{:.6},{:.6},{:.6},{:.6}\n",
            a.dice.std, a.jaccard.std, a.hd95.std, a.assd.std
        ));
        s
    }
}
