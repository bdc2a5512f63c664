//! Boundary-weighted segmentation losses.
//!
//! The central object is the dual fine-grained boundary (DFB) map: a
//! per-voxel weight derived from how mixed a voxel's k³ neighbourhood is.
//! Foreground voxels near background get large weights (up to k³), and so
//! do background voxels near foreground; interior voxels of either class
//! get weight 1. The DFB loss is a weighted soft Dice under that map, and
//! the total training loss adds mean binary cross-entropy.

use crate::conv::{self, Padding};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Stabilizer added to both sides of the Dice quotient.
pub const DEFAULT_EPS: Real = 1e-5;
/// Probability clamp for cross-entropy.
pub const CE_CLAMP: Real = 1e-7;

/// Per-voxel boundary weights computed from a ground-truth mask.
#[derive(Debug, Clone)]
pub struct DfbMap {
    pub weights: Tensor,
    pub k: usize,
}

fn require_binary(g: &Tensor, context: &str) -> Result<()> {
    if !g.is_binary() {
        return Err(Error::NonBinaryMask { context: context.into() });
    }
    Ok(())
}

fn require_odd_neighborhood(k: usize) -> Result<()> {
    if k.is_multiple_of(2) {
        return Err(Error::EvenKernel { k });
    }
    if k < 3 {
        return Err(Error::InvalidArgument(format!(
            "neighborhood size must be >= 3, got {k}"
        )));
    }
    Ok(())
}

/// Number of foreground voxels in the k×k×k neighbourhood around each
/// voxel (center included). Out-of-bounds taps replicate the border, so a
/// crop edge never looks like a class transition.
pub fn neighbor_count(g: &Tensor, k: usize) -> Result<Tensor> {
    require_binary(g, "neighbor_count")?;
    require_odd_neighborhood(k)?;
    let [h, w, d] = g.spatial()?;
    if g.rank() != 3 {
        return Err(Error::RankMismatch {
            context: "neighbor_count mask".into(),
            expected: 3,
            shape: g.shape().to_vec(),
        });
    }
    let input = g.reshaped(&[1, h, w, d])?;
    let kernel = Tensor::full(&[1, 1, k, k, k], 1.0);
    let bias = Tensor::zeros(&[1]);
    let counts = conv::conv3d(&input, &kernel, &bias, 1, Padding::Replicate)?;
    counts.reshaped(&[h, w, d])
}

/// Builds the DFB map: `w = k³ − f + 1` on foreground, `w = f + 1` on
/// background, where `f` is the neighbourhood foreground count.
pub fn dfb_map(g: &Tensor, k: usize) -> Result<DfbMap> {
    let f = neighbor_count(g, k)?;
    let k3 = (k * k * k) as Real;
    let data = g
        .data()
        .iter()
        .zip(f.data())
        .map(|(&gi, &fi)| if gi == 1.0 { k3 - fi + 1.0 } else { fi + 1.0 })
        .collect();
    Ok(DfbMap {
        weights: Tensor::new_unchecked(g.shape().to_vec(), data),
        k,
    })
}

/// Single-sided uniform boundary weights: 2 on foreground voxels that have
/// at least one background voxel in their k³ neighbourhood, 1 elsewhere.
pub fn edge_weights(g: &Tensor, k: usize) -> Result<Tensor> {
    let f = neighbor_count(g, k)?;
    let k3 = (k * k * k) as Real;
    let data = g
        .data()
        .iter()
        .zip(f.data())
        .map(|(&gi, &fi)| if gi == 1.0 && fi < k3 { 2.0 } else { 1.0 })
        .collect();
    Ok(Tensor::new_unchecked(g.shape().to_vec(), data))
}

fn dice_sums(p: &Tensor, g: &Tensor, w: &Tensor, eps: Real) -> Result<(Real, Real)> {
    if !p.same_shape(g) {
        return Err(Error::shape("weighted soft dice", p.shape(), g.shape()));
    }
    if !p.same_shape(w) {
        return Err(Error::shape("weighted soft dice weights", p.shape(), w.shape()));
    }
    require_binary(g, "weighted soft dice")?;
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&pi, &gi), &wi) in p.data().iter().zip(g.data()).zip(w.data()) {
        num += wi * pi * gi;
        den += wi * (pi + gi);
    }
    Ok((num + eps, den + eps))
}

/// Weighted soft Dice loss `1 − 2(Σ w p g + ε)/(Σ w (p + g) + ε)`.
pub fn weighted_soft_dice(p: &Tensor, g: &Tensor, w: &Tensor, eps: Real) -> Result<Real> {
    let (num, den) = dice_sums(p, g, w, eps)?;
    Ok(1.0 - 2.0 * num / den)
}

/// Exact derivative of [`weighted_soft_dice`] with respect to each `p_i`:
/// `−2 w_i g_i / S_den + 2 S_num w_i / S_den²`.
pub fn weighted_soft_dice_grad(p: &Tensor, g: &Tensor, w: &Tensor, eps: Real) -> Result<Tensor> {
    let (num, den) = dice_sums(p, g, w, eps)?;
    let den2 = den * den;
    let data = g
        .data()
        .iter()
        .zip(w.data())
        .map(|(&gi, &wi)| -2.0 * wi * gi / den + 2.0 * num * wi / den2)
        .collect();
    Ok(Tensor::new_unchecked(p.shape().to_vec(), data))
}

/// DFB loss: weighted soft Dice under a precomputed DFB map.
pub fn dfb_loss(p: &Tensor, g: &Tensor, map: &DfbMap, eps: Real) -> Result<Real> {
    weighted_soft_dice(p, g, &map.weights, eps)
}

/// Per-voxel gradient of [`dfb_loss`]. The map is a function of the
/// ground truth only, so no gradient flows through the weights.
pub fn dfb_loss_grad(p: &Tensor, g: &Tensor, map: &DfbMap, eps: Real) -> Result<Tensor> {
    weighted_soft_dice_grad(p, g, &map.weights, eps)
}

/// Ablation comparator: soft Dice with the single-sided uniform edge
/// weights instead of the DFB map.
pub fn edge_loss(p: &Tensor, g: &Tensor, k: usize, eps: Real) -> Result<Real> {
    let w = edge_weights(g, k)?;
    weighted_soft_dice(p, g, &w, eps)
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[1e-7, 1 − 1e-7]`.
pub fn ce_loss(p: &Tensor, g: &Tensor) -> Result<Real> {
    if !p.same_shape(g) {
        return Err(Error::shape("ce_loss", p.shape(), g.shape()));
    }
    require_binary(g, "ce_loss")?;
    let n = p.len() as Real;
    let mut acc = 0.0;
    for (&pi, &gi) in p.data().iter().zip(g.data()) {
        let pc = pi.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
        acc -= gi * pc.ln() + (1.0 - gi) * (1.0 - pc).ln();
    }
    Ok(acc / n)
}

/// Gradient of [`ce_loss`]; zero where the clamp is active.
pub fn ce_grad(p: &Tensor, g: &Tensor) -> Result<Tensor> {
    if !p.same_shape(g) {
        return Err(Error::shape("ce_grad", p.shape(), g.shape()));
    }
    require_binary(g, "ce_grad")?;
    let n = p.len() as Real;
    let data = p
        .data()
        .iter()
        .zip(g.data())
        .map(|(&pi, &gi)| {
            if pi <= CE_CLAMP || pi >= 1.0 - CE_CLAMP {
                0.0
            } else {
                (-gi / pi + (1.0 - gi) / (1.0 - pi)) / n
            }
        })
        .collect();
    Ok(Tensor::new_unchecked(p.shape().to_vec(), data))
}

/// Cross-entropy plus DFB loss, with the components reported separately.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub total: Real,
    pub ce: Real,
    pub dfb: Real,
}

pub fn total_loss(p: &Tensor, g: &Tensor, k: usize, eps: Real) -> Result<LossBreakdown> {
    let map = dfb_map(g, k)?;
    let ce = ce_loss(p, g)?;
    let dfb = dfb_loss(p, g, &map, eps)?;
    Ok(LossBreakdown { total: ce + dfb, ce, dfb })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::idx3;
    use rand::Rng;

    /// O(N·k³) nested-loop neighbourhood count with replicate semantics,
    /// used as the oracle for the conv-based implementation.
    fn neighbor_count_brute(g: &Tensor, k: usize) -> Tensor {
        let sp = g.spatial().unwrap();
        let r = (k / 2) as i64;
        let mut out = vec![0.0; g.len()];
        for h in 0..sp[0] as i64 {
            for w in 0..sp[1] as i64 {
                for d in 0..sp[2] as i64 {
                    let mut count = 0.0;
                    for dh in -r..=r {
                        for dw in -r..=r {
                            for dd in -r..=r {
                                let hh = (h + dh).clamp(0, sp[0] as i64 - 1) as usize;
                                let ww = (w + dw).clamp(0, sp[1] as i64 - 1) as usize;
                                let dd2 = (d + dd).clamp(0, sp[2] as i64 - 1) as usize;
                                count += g.data()[idx3(sp, hh, ww, dd2)];
                            }
                        }
                    }
                    out[idx3(sp, h as usize, w as usize, d as usize)] = count;
                }
            }
        }
        Tensor::new_unchecked(g.shape().to_vec(), out)
    }

    fn random_mask(shape: [usize; 3], fg_prob: f64, rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| if rng.gen_bool(fg_prob) { 1.0 } else { 0.0 })
            .collect();
        Tensor::from_vec(&[shape[0], shape[1], shape[2]], data).unwrap()
    }

    fn random_probs(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn neighbor_count_constant_masks() {
        for k in [3usize, 5] {
            let fg = Tensor::full(&[6, 5, 7], 1.0);
            let counts = neighbor_count(&fg, k).unwrap();
            let k3 = (k * k * k) as Real;
            assert!(counts.data().iter().all(|&v| v == k3));
            let bg = Tensor::zeros(&[6, 5, 7]);
            assert!(neighbor_count(&bg, k).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn neighbor_count_single_center_voxel() {
        let mut g = Tensor::zeros(&[5, 5, 5]);
        g.data_mut()[idx3([5, 5, 5], 2, 2, 2)] = 1.0;
        let counts = neighbor_count(&g, 3).unwrap();
        for h in 0..5 {
            for w in 0..5 {
                for d in 0..5 {
                    let near = (h as i64 - 2).abs() <= 1
                        && (w as i64 - 2).abs() <= 1
                        && (d as i64 - 2).abs() <= 1;
                    let expect = if near { 1.0 } else { 0.0 };
                    assert_eq!(counts.data()[idx3([5, 5, 5], h, w, d)], expect);
                }
            }
        }
    }

    #[test]
    fn neighbor_count_rejects_bad_input() {
        let g = Tensor::from_vec(&[2, 2, 2], vec![0.5; 8]).unwrap();
        assert!(matches!(
            neighbor_count(&g, 3),
            Err(Error::NonBinaryMask { .. })
        ));
        let ok = Tensor::zeros(&[2, 2, 2]);
        assert!(matches!(neighbor_count(&ok, 4), Err(Error::EvenKernel { k: 4 })));
    }

    #[test]
    fn neighbor_count_matches_brute_force_on_random_masks() {
        // Integer counts, so equality is exact.
        for seed in 0..50u64 {
            let mut rng = crate::rng::stream(101, &[seed]);
            let k = [3usize, 5, 7][(seed % 3) as usize];
            let g = random_mask([12, 12, 12], 0.4, &mut rng);
            let fast = neighbor_count(&g, k).unwrap();
            let slow = neighbor_count_brute(&g, k);
            assert_eq!(fast.data(), slow.data(), "seed {seed}, k {k}");
        }
    }

    #[test]
    fn dfb_map_constant_mask_is_uniform() {
        for mask in [Tensor::zeros(&[4, 4, 4]), Tensor::full(&[4, 4, 4], 1.0)] {
            let map = dfb_map(&mask, 3).unwrap();
            assert!(map.weights.data().iter().all(|&w| w == 1.0));
        }
    }

    #[test]
    fn dfb_map_single_foreground_voxel() {
        let sp = [9, 9, 9];
        let mut g = Tensor::zeros(&sp);
        g.data_mut()[idx3(sp, 4, 4, 4)] = 1.0;
        let map = dfb_map(&g, 3).unwrap();
        for h in 0..9 {
            for w in 0..9 {
                for d in 0..9 {
                    let v = map.weights.data()[idx3(sp, h, w, d)];
                    let dist = (h as i64 - 4)
                        .abs()
                        .max((w as i64 - 4).abs())
                        .max((d as i64 - 4).abs());
                    let expect = match dist {
                        0 => 27.0, // 27 − 1 + 1
                        1 => 2.0,  // 1 + 1
                        _ => 1.0,
                    };
                    assert_eq!(v, expect, "at ({h},{w},{d})");
                }
            }
        }
    }

    #[test]
    fn dfb_map_weight_range_invariants() {
        for seed in 0..20u64 {
            let mut rng = crate::rng::stream(202, &[seed]);
            let k = [3usize, 5, 7][(seed % 3) as usize];
            let g = random_mask([10, 10, 10], 0.5, &mut rng);
            let map = dfb_map(&g, k).unwrap();
            let k3 = (k * k * k) as Real;
            for (&w, &gi) in map.weights.data().iter().zip(g.data()) {
                assert!((1.0..=k3).contains(&w), "w={w} outside [1, {k3}] (g={gi})");
            }
        }
    }

    #[test]
    fn dice_perfect_prediction_is_near_zero() {
        let mut rng = crate::rng::stream(7, &[0]);
        let g = random_mask([6, 6, 6], 0.3, &mut rng);
        let w = Tensor::full(&[6, 6, 6], 1.0);
        let loss = weighted_soft_dice(&g, &g, &w, DEFAULT_EPS).unwrap();
        assert!((-1e-4..=0.0).contains(&loss), "loss {loss}");
    }

    #[test]
    fn dice_zero_overlap_is_near_one() {
        // Half-foreground volume predicted exactly inverted.
        let mut g = Tensor::zeros(&[4, 4, 4]);
        for v in g.data_mut().iter_mut().take(32) {
            *v = 1.0;
        }
        let p = g.map(|v| 1.0 - v);
        let w = Tensor::full(&[4, 4, 4], 1.0);
        let loss = weighted_soft_dice(&p, &g, &w, DEFAULT_EPS).unwrap();
        let sum_w = 64.0;
        let expect = 1.0 - 2.0 * DEFAULT_EPS / (sum_w + DEFAULT_EPS);
        assert!((loss - expect).abs() < 1e-12);
        assert!(loss > 0.999);
    }

    #[test]
    fn unit_weights_equal_plain_soft_dice() {
        // Independently coded unweighted soft Dice. Multiplying by a unit
        // weight is exact, so per-voxel accumulation in the same order
        // gives bitwise equality.
        let plain = |p: &Tensor, g: &Tensor, eps: Real| -> Real {
            let mut inter = 0.0;
            let mut total = 0.0;
            for (&a, &b) in p.data().iter().zip(g.data()) {
                inter += a * b;
                total += a + b;
            }
            1.0 - 2.0 * (inter + eps) / (total + eps)
        };
        for seed in 0..30u64 {
            let mut rng = crate::rng::stream(303, &[seed]);
            let g = random_mask([5, 6, 4], 0.4, &mut rng);
            let p = random_probs(&[5, 6, 4], &mut rng);
            let w = Tensor::full(&[5, 6, 4], 1.0);
            let ours = weighted_soft_dice(&p, &g, &w, DEFAULT_EPS).unwrap();
            let reference = plain(&p, &g, DEFAULT_EPS);
            assert_eq!(ours, reference, "seed {seed}");
        }
    }

    // Central differences at h = 1e-6 need f64 precision.
    #[cfg(not(feature = "f32"))]
    #[test]
    fn dfb_grad_matches_finite_differences_everywhere() {
        for &k in &[3usize, 5] {
            let mut rng = crate::rng::stream(404, &[k as u64]);
            let g = random_mask([8, 8, 8], 0.35, &mut rng);
            let p = random_probs(&[8, 8, 8], &mut rng);
            let map = dfb_map(&g, k).unwrap();
            let grad = dfb_loss_grad(&p, &g, &map, DEFAULT_EPS).unwrap();
            let h = 1e-6;
            for i in 0..p.len() {
                let mut plus = p.clone();
                plus.data_mut()[i] += h;
                let mut minus = p.clone();
                minus.data_mut()[i] -= h;
                let fd = (dfb_loss(&plus, &g, &map, DEFAULT_EPS).unwrap()
                    - dfb_loss(&minus, &g, &map, DEFAULT_EPS).unwrap())
                    / (2.0 * h);
                let a = grad.data()[i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(rel <= 1e-5, "voxel {i}: analytic {a}, fd {fd}, rel {rel}");
            }
        }
    }

    #[test]
    fn dfb_grad_on_empty_truth_pushes_down() {
        let g = Tensor::zeros(&[4, 4, 4]);
        let mut rng = crate::rng::stream(505, &[0]);
        let p = random_probs(&[4, 4, 4], &mut rng);
        let map = dfb_map(&g, 3).unwrap();
        let grad = dfb_loss_grad(&p, &g, &map, DEFAULT_EPS).unwrap();
        // Closed form with g ≡ 0: +2εw_i/S_den², strictly positive.
        let den: Real =
            p.data().iter().zip(map.weights.data()).map(|(&pi, &wi)| wi * pi).sum::<Real>()
                + DEFAULT_EPS;
        for (i, &gv) in grad.data().iter().enumerate() {
            let expect = 2.0 * DEFAULT_EPS * map.weights.data()[i] / (den * den);
            assert!(gv > 0.0);
            assert!((gv - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn dfb_grad_negative_at_true_foreground_when_perfect() {
        // w ≡ 1, p == g: the ε→0 limit of the gradient at a fg voxel is
        // −2/S_den + 2·S_num/S_den² with S_num ≈ N_fg, S_den ≈ 2N_fg ⇒ −1/(2N_fg) ≤ 0.
        let mut rng = crate::rng::stream(606, &[1]);
        let g = random_mask([6, 6, 6], 0.4, &mut rng);
        let w = Tensor::full(&[6, 6, 6], 1.0);
        let grad = weighted_soft_dice_grad(&g, &g, &w, 1e-12).unwrap();
        for (&gv, &gi) in grad.data().iter().zip(g.data()) {
            if gi == 1.0 {
                assert!(gv <= 0.0, "fg gradient {gv} not ≤ 0");
            }
        }
    }

    #[test]
    fn degenerate_all_background_value_is_minus_one() {
        let g = Tensor::zeros(&[3, 3, 3]);
        let p = Tensor::zeros(&[3, 3, 3]);
        let map = dfb_map(&g, 3).unwrap();
        let loss = dfb_loss(&p, &g, &map, DEFAULT_EPS).unwrap();
        assert_eq!(loss, -1.0);
    }

    #[test]
    fn ce_reference_values() {
        let g = Tensor::from_vec(&[4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let p = Tensor::full(&[4], 0.5);
        let loss = ce_loss(&p, &g).unwrap();
        assert!((loss - (2.0f64.ln() as Real)).abs() < 1e-12);
        // Perfect prediction bottoms out at the clamp floor −log(1−1e-7).
        let perfect = ce_loss(&g, &g).unwrap();
        assert!(perfect > 0.0 && perfect <= 1.7e-6, "got {perfect}");
    }

    // Central differences at h = 1e-6 need f64 precision.
    #[cfg(not(feature = "f32"))]
    #[test]
    fn ce_grad_matches_finite_differences() {
        let mut rng = crate::rng::stream(707, &[0]);
        let g = random_mask([5, 5, 5], 0.5, &mut rng);
        let p = random_probs(&[5, 5, 5], &mut rng);
        let grad = ce_grad(&p, &g).unwrap();
        let h = 1e-6;
        for i in (0..p.len()).step_by(7) {
            let mut plus = p.clone();
            plus.data_mut()[i] += h;
            let mut minus = p.clone();
            minus.data_mut()[i] -= h;
            let fd = (ce_loss(&plus, &g).unwrap() - ce_loss(&minus, &g).unwrap()) / (2.0 * h);
            let a = grad.data()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            assert!(rel <= 1e-6, "voxel {i}: analytic {a}, fd {fd}, rel {rel}");
        }
    }

    #[test]
    fn total_is_sum_of_components() {
        let mut rng = crate::rng::stream(808, &[0]);
        let g = random_mask([6, 6, 6], 0.3, &mut rng);
        let p = random_probs(&[6, 6, 6], &mut rng);
        let br = total_loss(&p, &g, 5, DEFAULT_EPS).unwrap();
        assert_eq!(br.total, br.ce + br.dfb);
        let near_perfect = total_loss(&g, &g, 5, DEFAULT_EPS).unwrap();
        assert!(near_perfect.total.abs() < 1e-3, "got {}", near_perfect.total);
    }

    #[test]
    fn edge_weights_definition() {
        // Constant masks: no boundary, plain Dice.
        let full = Tensor::full(&[4, 4, 4], 1.0);
        assert!(edge_weights(&full, 3).unwrap().data().iter().all(|&w| w == 1.0));
        // Single fg voxel: only it is boundary.
        let sp = [7, 7, 7];
        let mut g = Tensor::zeros(&sp);
        g.data_mut()[idx3(sp, 3, 3, 3)] = 1.0;
        let ew = edge_weights(&g, 3).unwrap();
        for (i, &w) in ew.data().iter().enumerate() {
            let expect = if i == idx3(sp, 3, 3, 3) { 2.0 } else { 1.0 };
            assert_eq!(w, expect);
        }
    }

    #[test]
    fn edge_loss_equals_dfb_kernel_under_same_weights() {
        let mut rng = crate::rng::stream(909, &[0]);
        let g = random_mask([6, 6, 6], 0.4, &mut rng);
        let p = random_probs(&[6, 6, 6], &mut rng);
        let ew = edge_weights(&g, 5).unwrap();
        let via_edge = edge_loss(&p, &g, 5, DEFAULT_EPS).unwrap();
        let via_kernel = weighted_soft_dice(&p, &g, &ew, DEFAULT_EPS).unwrap();
        assert_eq!(via_edge, via_kernel);
    }
}
