//! Shuffle-then-reorder attention module (SRAM).
//!
//! The module summarizes a feature map two ways: a channel descriptor
//! (per-channel spatial max ++ mean, `[2C]`) that drives shuffle-ratio
//! selection, and a spatial descriptor (per-voxel channel max/mean,
//! `[2, H, W, D]`) that feeds the attention convolution. The attention
//! map is computed on the *shuffled* descriptor and reordered back:
//!
//! ```text
//! A = sigmoid(reorder(conv(shuffle(descriptor))))
//! out = (A + 1) ⊗ F_org
//! ```
//!
//! Ratio selection is a hard argmax and carries no gradient; the head
//! emits one logit per entry of the fixed candidate set for each
//! dimension, and candidates that do not divide the current spatial size
//! are skipped at selection time. That keeps the head's shape independent
//! of the input, so the same parameters serve training crops and
//! full-volume inference alike.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::conv::{self, Padding};
use crate::error::Result;
use crate::ops::{self, PoolMode};
use crate::shuffle::{self, ShufflePlan, RATIO_CANDIDATES};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Real, Tensor};

/// Default attention-conv stencil size.
pub const DEFAULT_KERNEL: usize = 7;

/// Bias value that makes a zero-weight SRAM a near-identity
/// (`sigmoid(-20) ≈ 2e-9`).
pub const NEAR_IDENTITY_BIAS: Real = -20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SramParams {
    /// Ratio head `[3·|candidates|, 2C]`.
    pub head_w: Tensor,
    /// Ratio head bias `[3·|candidates|]`.
    pub head_b: Tensor,
    /// Attention convolution `[1, 2, k, k, k]`.
    pub conv_w: Tensor,
    /// Attention convolution bias `[1]`.
    pub conv_b: Tensor,
}

impl SramParams {
    /// Trainable initialization: fan-in-scaled uniform attention conv,
    /// zero conv bias, zero ratio head (so initial ratios tie-break to
    /// the identity).
    pub fn init(channels: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        let k3 = kernel * kernel * kernel;
        let bound = 1.0 / ((2 * k3) as Real).sqrt();
        let conv_w = Tensor::new_unchecked(
            vec![1, 2, kernel, kernel, kernel],
            (0..2 * k3).map(|_| rng.gen_range(-bound..bound)).collect(),
        );
        let logits = 3 * RATIO_CANDIDATES.len();
        SramParams {
            head_w: Tensor::zeros(&[logits, 2 * channels]),
            head_b: Tensor::zeros(&[logits]),
            conv_w,
            conv_b: Tensor::zeros(&[1]),
        }
    }

    /// Zero conv weights with a strongly negative bias: the attention map
    /// is ≈ 2e-9, so the module is an identity up to 1e-8 relative.
    pub fn near_identity(channels: usize, kernel: usize) -> Self {
        let logits = 3 * RATIO_CANDIDATES.len();
        SramParams {
            head_w: Tensor::zeros(&[logits, 2 * channels]),
            head_b: Tensor::zeros(&[logits]),
            conv_w: Tensor::zeros(&[1, 2, kernel, kernel, kernel]),
            conv_b: Tensor::full(&[1], NEAR_IDENTITY_BIAS),
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.conv_w.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.head_w.shape()[1] / 2
    }
}

/// Per-channel spatial max, then per-channel spatial mean: `[2C]`.
pub fn channel_descriptor(f: &Tensor) -> Result<Tensor> {
    let mx = ops::pool_spatial(f, PoolMode::Max)?;
    let avg = ops::pool_spatial(f, PoolMode::Avg)?;
    ops::concat0(&mx, &avg)
}

/// Channel 0 = per-voxel max over channels, channel 1 = per-voxel mean:
/// `[2, H, W, D]`.
pub fn spatial_descriptor(f: &Tensor) -> Result<Tensor> {
    let mx = ops::pool_channel(f, PoolMode::Max)?;
    let avg = ops::pool_channel(f, PoolMode::Avg)?;
    ops::concat0(&mx, &avg)
}

/// Slices the head's fixed-candidate logits down to the entries whose
/// ratios divide the given spatial sizes. Returns the per-dimension menus
/// and the matching logit subset.
fn menu_logits(full: &[Real], sizes: [usize; 3]) -> ([Vec<usize>; 3], Vec<Real>) {
    let mut menus: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut logits = Vec::new();
    for dim in 0..3 {
        for (ci, &cand) in RATIO_CANDIDATES.iter().enumerate() {
            if cand == 1 || sizes[dim].is_multiple_of(cand) {
                menus[dim].push(cand);
                logits.push(full[dim * RATIO_CANDIDATES.len() + ci]);
            }
        }
    }
    (menus, logits)
}

/// Runs the ratio head on the channel descriptor and builds the shuffle
/// plan for this input. Pure and gradient-free.
pub fn select_plan(f: &Tensor, params: &SramParams) -> Result<ShufflePlan> {
    let cd = channel_descriptor(f)?;
    let full = ops::linear(&cd, &params.head_w, &params.head_b)?;
    let sizes = f.spatial()?;
    let (menus, logits) = menu_logits(full.data(), sizes);
    let ratios = shuffle::select_ratios(&logits, sizes, &menus)?;
    ShufflePlan::build(sizes, ratios)
}

/// Pure SRAM forward with the plan recomputed from the input.
pub fn sram_forward(f_org: &Tensor, params: &SramParams) -> Result<Tensor> {
    let plan = select_plan(f_org, params)?;
    sram_forward_with_plan(f_org, params, &plan)
}

/// Pure SRAM forward under a fixed plan (used for gradient checks and by
/// the tape path's value computation).
pub fn sram_forward_with_plan(
    f_org: &Tensor,
    params: &SramParams,
    plan: &ShufflePlan,
) -> Result<Tensor> {
    let sd = spatial_descriptor(f_org)?;
    let shuffled = shuffle::shuffle(&sd, plan)?;
    let cv = conv::conv3d(&shuffled, &params.conv_w, &params.conv_b, 1, Padding::Zero)?;
    let reordered = shuffle::reorder(&cv, plan)?;
    let a = ops::sigmoid(&reordered);
    ops::residual_gate(&a, f_org)
}

/// Tape nodes of the SRAM parameters that receive gradients. The ratio
/// head stays off-tape: selection is a hard argmax with no gradient.
#[derive(Debug, Clone, Copy)]
pub struct SramNodes {
    pub conv_w: NodeId,
    pub conv_b: NodeId,
}

/// Records the SRAM forward on a tape. The plan must have been selected
/// beforehand (see [`select_plan`]) and acts as a constant.
pub fn sram_forward_on_tape(
    tape: &mut Tape,
    f_org: NodeId,
    nodes: &SramNodes,
    plan: &ShufflePlan,
) -> Result<NodeId> {
    let mx = tape.pool_channel(f_org, PoolMode::Max)?;
    let avg = tape.pool_channel(f_org, PoolMode::Avg)?;
    let sd = tape.concat0(mx, avg)?;
    let (shuffle_map, reorder_map) = plan.shuffle_maps();
    let shuffled = tape.spatial_map(sd, shuffle_map.clone(), reorder_map.clone())?;
    let cv = tape.conv3d(shuffled, nodes.conv_w, nodes.conv_b, 1, Padding::Zero)?;
    let reordered = tape.spatial_map(cv, reorder_map, shuffle_map)?;
    let a = tape.sigmoid(reordered);
    tape.residual_gate(a, f_org)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_map(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = crate::rng::stream(31, &[seed]);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn channel_descriptor_examples() {
        let constant = Tensor::full(&[3, 2, 2, 2], 4.5);
        let cd = channel_descriptor(&constant).unwrap();
        assert_eq!(cd.shape(), &[6]);
        assert!(cd.data().iter().all(|&v| v == 4.5));

        let mut f = Tensor::zeros(&[1, 2, 2, 2]);
        f.data_mut()[7] = 10.0;
        let cd = channel_descriptor(&f).unwrap();
        assert_eq!(cd.data(), &[10.0, 1.25]);
    }

    #[test]
    fn channel_descriptor_shuffle_invariant() {
        let f = random_map(&[3, 4, 6, 8], 0);
        let plan = ShufflePlan::build([4, 6, 8], [2, 3, 2]).unwrap();
        let a = channel_descriptor(&f).unwrap();
        let b = channel_descriptor(&shuffle::shuffle(&f, &plan).unwrap()).unwrap();
        // Per-channel means sum the same values in permuted order, so
        // only summation round-off separates the two.
        #[cfg(not(feature = "f32"))]
        const TOL: Real = 1e-12;
        #[cfg(feature = "f32")]
        const TOL: Real = 1e-5;
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < TOL);
        }
    }

    #[test]
    fn spatial_descriptor_examples() {
        let zeros = Tensor::zeros(&[1, 2, 2, 2]);
        let ones = Tensor::full(&[1, 2, 2, 2], 1.0);
        let f = ops::concat0(&zeros, &ones).unwrap();
        let sd = spatial_descriptor(&f).unwrap();
        assert_eq!(sd.shape(), &[2, 2, 2, 2]);
        assert!(sd.data()[..8].iter().all(|&v| v == 1.0), "max map");
        assert!(sd.data()[8..].iter().all(|&v| v == 0.5), "avg map");

        let single = random_map(&[1, 3, 3, 3], 1);
        let sd1 = spatial_descriptor(&single).unwrap();
        assert_eq!(&sd1.data()[..27], single.data());
        assert_eq!(&sd1.data()[27..], single.data());
    }

    #[test]
    fn spatial_descriptor_commutes_with_shuffle() {
        let f = random_map(&[4, 4, 6, 8], 2);
        let plan = ShufflePlan::build([4, 6, 8], [2, 2, 4]).unwrap();
        let lhs = spatial_descriptor(&shuffle::shuffle(&f, &plan).unwrap()).unwrap();
        let rhs = shuffle::shuffle(&spatial_descriptor(&f).unwrap(), &plan).unwrap();
        assert_eq!(lhs.data(), rhs.data());
    }

    #[test]
    fn near_identity_initialization() {
        let f = random_map(&[4, 8, 8, 8], 3);
        let params = SramParams::near_identity(4, 3);
        let out = sram_forward(&f, &params).unwrap();
        let mut max_rel: Real = 0.0;
        let mut max_abs: Real = 0.0;
        for (o, i) in out.data().iter().zip(f.data()) {
            max_abs = max_abs.max(i.abs());
            max_rel = max_rel.max((o - i).abs());
        }
        assert!(max_rel / max_abs <= 1e-8, "rel {max_rel}");
    }

    #[test]
    fn zero_conv_zero_bias_scales_by_1_5() {
        let f = random_map(&[2, 4, 4, 4], 4);
        let mut params = SramParams::near_identity(2, 3);
        params.conv_b = Tensor::zeros(&[1]);
        let out = sram_forward(&f, &params).unwrap();
        for (o, i) in out.data().iter().zip(f.data()) {
            assert_eq!(*o, 1.5 * i);
        }
    }

    #[test]
    fn identity_ratios_match_plain_attention_reference() {
        // Zero head ⇒ tie-break ⇒ identity ratios; the permutations become
        // copies and the module must equal a shuffle-free reference.
        let f = random_map(&[3, 6, 6, 6], 5);
        let mut rng = crate::rng::stream(32, &[0]);
        let params = SramParams::init(3, 5, &mut rng);
        let out = sram_forward(&f, &params).unwrap();

        let sd = spatial_descriptor(&f).unwrap();
        let cv = conv::conv3d(&sd, &params.conv_w, &params.conv_b, 1, Padding::Zero).unwrap();
        let a = ops::sigmoid(&cv);
        let reference = ops::residual_gate(&a, &f).unwrap();
        assert_eq!(out.data(), reference.data());
    }

    #[test]
    fn shape_preserved_and_amplification_bounded() {
        let f = random_map(&[2, 8, 4, 16], 6);
        let mut rng = crate::rng::stream(33, &[1]);
        let mut params = SramParams::init(2, 3, &mut rng);
        // Non-trivial ratios via head bias: favour ratio 2 on H, 4 on D.
        params.head_b.data_mut()[1] = 5.0;
        params.head_b.data_mut()[2 * RATIO_CANDIDATES.len() + 2] = 5.0;
        let plan = select_plan(&f, &params).unwrap();
        assert_eq!(plan.ratios(), [2, 1, 4]);
        let out = sram_forward(&f, &params).unwrap();
        assert_eq!(out.shape(), f.shape());
        for (o, i) in out.data().iter().zip(f.data()) {
            if *i != 0.0 {
                let m = o / i;
                assert!(m > 1.0 && m < 2.0, "multiplier {m}");
            }
        }
    }

    #[test]
    fn menu_logits_skip_non_divisors() {
        let full: Vec<Real> = (0..15).map(|i| i as Real).collect();
        let (menus, logits) = menu_logits(&full, [12, 7, 16]);
        assert_eq!(menus[0], vec![1, 2, 4]);
        assert_eq!(menus[1], vec![1]);
        assert_eq!(menus[2], vec![1, 2, 4, 8, 16]);
        assert_eq!(logits, vec![0.0, 1.0, 2.0, 5.0, 10.0, 11.0, 12.0, 13.0, 14.0]);
    }

    #[test]
    fn tape_path_matches_pure_path_bitwise() {
        let f = random_map(&[3, 8, 8, 8], 7);
        let mut rng = crate::rng::stream(34, &[2]);
        let mut params = SramParams::init(3, 3, &mut rng);
        params.head_b.data_mut()[3] = 2.0; // ratio 8 on H
        let plan = select_plan(&f, &params).unwrap();
        let pure = sram_forward_with_plan(&f, &params, &plan).unwrap();

        let mut tape = Tape::new();
        let f_id = tape.input(f.clone());
        let nodes = SramNodes {
            conv_w: tape.input(params.conv_w.clone()),
            conv_b: tape.input(params.conv_b.clone()),
        };
        let out = sram_forward_on_tape(&mut tape, f_id, &nodes, &plan).unwrap();
        assert_eq!(tape.value(out).data(), pure.data());
    }
}
