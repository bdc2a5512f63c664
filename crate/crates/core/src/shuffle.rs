//! Spatial shuffle/reorder permutations and shuffle-ratio selection.
//!
//! Each spatial dimension of size `n = g·r` is permuted by the transpose
//! of a `g × r` index grid: writing `i − 1 = q·g + m` (1-based `i`),
//! `κ(i) = m·r + q + 1`. Shuffling *scatters* entries to their κ target
//! (`out[κ(i)] = in[i]`), which interleaves the `g` groups; reordering is
//! the exact inverse gather, so `reorder(shuffle(F)) == F` bitwise.
//!
//! Ratios are chosen per dimension from a divisor-constrained candidate
//! menu by hard argmax over logits — a discrete, non-differentiable pick.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Real, Tensor};

/// Candidate shuffle ratios considered for every dimension (before the
/// divisibility filter). Always includes the identity ratio 1.
pub const RATIO_CANDIDATES: [usize; 5] = [1, 2, 4, 8, 16];

/// The κ index permutation (1-based): `κ(i) = ((i−1) mod g)·r + ⌊(i−1)/g⌋ + 1`.
pub fn kappa(i: usize, g: usize, r: usize) -> Result<usize> {
    let n = g * r;
    if i < 1 || i > n {
        return Err(Error::InvalidArgument(format!(
            "kappa index {i} out of range [1, {n}]"
        )));
    }
    let z = i - 1;
    Ok((z % g) * r + z / g + 1)
}

/// Permutation tables for one spatial dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimPlan {
    pub size: usize,
    pub ratio: usize,
    pub groups: usize,
    /// `forward[j] = κ(j+1) − 1`: the 0-based target slot of source `j`.
    pub forward: Vec<u32>,
    /// Inverse table: `inverse[forward[j]] == j`.
    pub inverse: Vec<u32>,
}

impl DimPlan {
    fn build(dim: usize, size: usize, ratio: usize) -> Result<Self> {
        if ratio == 0 || !size.is_multiple_of(ratio) {
            return Err(Error::InvalidRatio { dim, size, ratio });
        }
        let groups = size / ratio;
        let mut forward = vec![0u32; size];
        let mut inverse = vec![0u32; size];
        for (j, slot) in forward.iter_mut().enumerate() {
            let target = kappa(j + 1, groups, ratio)? - 1;
            *slot = target as u32;
            inverse[target] = j as u32;
        }
        Ok(DimPlan { size, ratio, groups, forward, inverse })
    }

    fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(j, &t)| t as usize == j)
    }
}

/// Precomputed permutations for the three spatial dimensions of a
/// `[C, H, W, D]` feature map, plus the flattened composite gather maps.
#[derive(Debug, Clone)]
pub struct ShufflePlan {
    pub dims: [DimPlan; 3],
    shuffle_gather: Arc<Vec<u32>>,
    reorder_gather: Arc<Vec<u32>>,
}

impl ShufflePlan {
    pub fn build(shape: [usize; 3], ratios: [usize; 3]) -> Result<Self> {
        let dims = [
            DimPlan::build(0, shape[0], ratios[0])?,
            DimPlan::build(1, shape[1], ratios[1])?,
            DimPlan::build(2, shape[2], ratios[2])?,
        ];
        let [h, w, d] = shape;
        // Composite flat maps over H×W×D. The shuffle scatters by κ per
        // axis, i.e. gathers by the inverse tables; reorder gathers by the
        // forward tables.
        let mut shuffle_gather = Vec::with_capacity(h * w * d);
        let mut reorder_gather = Vec::with_capacity(h * w * d);
        for hh in 0..h {
            for ww in 0..w {
                for dd in 0..d {
                    let s = (dims[0].inverse[hh] as usize * w + dims[1].inverse[ww] as usize) * d
                        + dims[2].inverse[dd] as usize;
                    let r = (dims[0].forward[hh] as usize * w + dims[1].forward[ww] as usize) * d
                        + dims[2].forward[dd] as usize;
                    shuffle_gather.push(s as u32);
                    reorder_gather.push(r as u32);
                }
            }
        }
        Ok(ShufflePlan {
            dims,
            shuffle_gather: Arc::new(shuffle_gather),
            reorder_gather: Arc::new(reorder_gather),
        })
    }

    pub fn spatial_shape(&self) -> [usize; 3] {
        [self.dims[0].size, self.dims[1].size, self.dims[2].size]
    }

    pub fn ratios(&self) -> [usize; 3] {
        [self.dims[0].ratio, self.dims[1].ratio, self.dims[2].ratio]
    }

    pub fn is_identity(&self) -> bool {
        self.dims.iter().all(|d| d.is_identity())
    }

    /// Flat gather map applied by [`shuffle`], with [`reorder`]'s map as
    /// its inverse. Shared with the autodiff tape.
    pub fn shuffle_maps(&self) -> (Arc<Vec<u32>>, Arc<Vec<u32>>) {
        (self.shuffle_gather.clone(), self.reorder_gather.clone())
    }

    fn check_shape(&self, f: &Tensor) -> Result<()> {
        let sp = f.spatial()?;
        if f.rank() != 4 || sp != self.spatial_shape() {
            return Err(Error::shape(
                "shuffle plan vs tensor",
                &self.spatial_shape(),
                f.shape(),
            ));
        }
        Ok(())
    }
}

/// Applies the plan's shuffle permutation to the spatial axes of
/// `F: [C, H, W, D]`.
pub fn shuffle(f: &Tensor, plan: &ShufflePlan) -> Result<Tensor> {
    plan.check_shape(f)?;
    ops::apply_spatial_map(f, &plan.shuffle_gather)
}

/// Exact inverse of [`shuffle`] under the same plan.
pub fn reorder(f: &Tensor, plan: &ShufflePlan) -> Result<Tensor> {
    plan.check_shape(f)?;
    ops::apply_spatial_map(f, &plan.reorder_gather)
}

/// Valid shuffle-ratio candidates for a dimension of the given size:
/// `{1} ∪ (divisors of size ∩ {2,4,8,16})`, ascending.
pub fn ratio_menu(size: usize) -> Vec<usize> {
    RATIO_CANDIDATES
        .iter()
        .copied()
        .filter(|&r| r == 1 || size.is_multiple_of(r))
        .collect()
}

/// Argmax ratio selection over per-dimension candidate menus.
///
/// `logits` concatenates the candidates of all three dimensions in order.
/// Ties break toward the smallest ratio; an empty menu yields the
/// identity ratio 1.
pub fn select_ratios(
    logits: &[Real],
    dim_sizes: [usize; 3],
    menus: &[Vec<usize>; 3],
) -> Result<[usize; 3]> {
    let total: usize = menus.iter().map(|m| m.len()).sum();
    if logits.len() != total {
        return Err(Error::InvalidArgument(format!(
            "expected {total} logits for the candidate menus, got {}",
            logits.len()
        )));
    }
    let mut out = [1usize; 3];
    let mut offset = 0;
    for dim in 0..3 {
        let menu = &menus[dim];
        for &ratio in menu {
            if ratio == 0 || !dim_sizes[dim].is_multiple_of(ratio) {
                return Err(Error::InvalidRatio { dim, size: dim_sizes[dim], ratio });
            }
        }
        let mut best: Option<(Real, usize)> = None;
        for (&ratio, &logit) in menu.iter().zip(&logits[offset..offset + menu.len()]) {
            let better = match best {
                None => true,
                Some((bl, br)) => logit > bl || (logit == bl && ratio < br),
            };
            if better {
                best = Some((logit, ratio));
            }
        }
        out[dim] = best.map_or(1, |(_, r)| r);
        offset += menu.len();
    }
    Ok(out)
}
