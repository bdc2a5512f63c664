//! Finite-difference validation of analytic gradients.
//!
//! Each suite rebuilds a differentiable computation twice per probed
//! coordinate (central differences) and compares the slope against the
//! reverse-mode gradient, reporting the worst relative error. The suites
//! back the `gradcheck` CLI subcommand and the acceptance gate.

use crate::conv::Padding;
use crate::loss::{self, DEFAULT_EPS};
use crate::net::{self, ArchDescriptor, ModelParams};
use crate::ops::{self, PoolMode};
use crate::rng;
use crate::shuffle::ShufflePlan;
use crate::sram::{self, SramNodes, SramParams};
use crate::tape::Tape;
use crate::tensor::{Real, Tensor};
use crate::train::{self, LossMode};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// Tolerance for individual tape ops probed through composite graphs.
pub const OPS_TOL: Real = 1e-6;
/// Tolerance for the cross-entropy gradient.
pub const CE_TOL: Real = 1e-6;
/// Tolerance for the boundary-loss gradient and the combined loss.
pub const LOSS_TOL: Real = 1e-5;
/// Tolerance for the attention block with a frozen shuffle plan.
pub const SRAM_TOL: Real = 1e-5;
/// Tolerance for end-to-end network gradients (deep composition
/// accumulates more round-off than a single op).
pub const NET_TOL: Real = 1e-4;

const OPS_STEP: Real = 1e-5;
const LOSS_STEP: Real = 1e-6;
const SRAM_STEP: Real = 1e-5;
const NET_STEP: Real = 1e-5;

/// Denominator floor for [`rel_err`]: coordinates whose gradient is below
/// this on both sides compare absolutely against the floor, so round-off
/// on exactly-zero gradients does not register as a huge relative error.
const REL_FLOOR: Real = 1e-6;

/// Floor for the end-to-end net suite. Central differences through an
/// O(1) loss resolve a slope only to ~1e-10 absolute, so gradients below
/// this magnitude are compared absolutely against the floor — still a
/// 1e-9-absolute bound at the suite tolerance, far below any real defect.
const NET_FLOOR: Real = 1e-5;

/// Piecewise ops (ReLU, max pools) must not sit closer to a kink or a
/// tie than this; random draws are rejected until the margin holds so a
/// finite-difference step cannot jump across a non-smooth point.
const KINK_MARGIN: Real = 2e-3;

const TAG_FD: u64 = 0x6664_6368;

/// Relative error between an analytic and a numeric derivative.
pub fn rel_err(analytic: Real, numeric: Real) -> Real {
    rel_err_floored(analytic, numeric, REL_FLOOR)
}

fn rel_err_floored(analytic: Real, numeric: Real, floor: Real) -> Real {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Outcome of one finite-difference suite.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub name: &'static str,
    pub checked: usize,
    pub max_rel_err: Real,
    pub tolerance: Real,
    floor: Real,
}

impl FdReport {
    fn new(name: &'static str, tolerance: Real) -> Self {
        Self::with_floor(name, tolerance, REL_FLOOR)
    }

    fn with_floor(name: &'static str, tolerance: Real, floor: Real) -> Self {
        FdReport { name, checked: 0, max_rel_err: 0.0, tolerance, floor }
    }

    fn observe(&mut self, analytic: Real, numeric: Real) {
        self.checked += 1;
        self.max_rel_err = self.max_rel_err.max(rel_err_floored(analytic, numeric, self.floor));
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err <= self.tolerance
    }
}

impl fmt::Display for FdReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} gradients checked, max relative error {:.3e} (tolerance {:.0e}): {}",
            self.name,
            self.checked,
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Central-difference slope of `eval` in one coordinate. `eval` receives
/// the perturbed value and must recompute the scalar from scratch.
fn fd_slope(mut eval: impl FnMut(Real) -> Real, x0: Real, step: Real) -> Real {
    (eval(x0 + step) - eval(x0 - step)) / (2.0 * step)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: Real, hi: Real) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Random binary mask that is neither empty nor full.
fn random_mask(rng: &mut ChaCha8Rng, shape: &[usize], fg: f64) -> Tensor {
    loop {
        let t = Tensor::from_vec(
            shape,
            (0..shape.iter().product())
                .map(|_| if rng.gen::<f64>() < fg { 1.0 } else { 0.0 })
                .collect(),
        )
        .unwrap();
        let s: Real = t.data().iter().sum();
        if s > 0.0 && (s as usize) < t.len() {
            return t;
        }
    }
}

// ---------------------------------------------------------------------
// Op coverage through two composite graphs
// ---------------------------------------------------------------------

/// Inputs of the first composite graph: a convolution feeding ReLU,
/// sigmoid, mul, add, channel pools, concat, a spatial permutation and
/// the residual gate.
struct GraphA {
    x: Tensor,
    w: Tensor,
    b: Tensor,
}

impl GraphA {
    /// Rejection-samples inputs so every ReLU argument stays clear of 0
    /// and the channel-wise max has a unique winner at every voxel.
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        loop {
            let x = random_tensor(rng, &[2, 4, 4, 4], -1.0, 1.0);
            let w = random_tensor(rng, &[2, 2, 3, 3, 3], -0.5, 0.5);
            let b = random_tensor(rng, &[2], -0.2, 0.2);
            let c = crate::conv::conv3d(&x, &w, &b, 1, Padding::Replicate).unwrap();
            if c.data().iter().any(|v| v.abs() < KINK_MARGIN) {
                continue;
            }
            let m = ops::mul(&ops::relu(&c), &ops::sigmoid(&c)).unwrap();
            let q = ops::add(&m, &x).unwrap();
            let n = q.len() / 2;
            let (q0, q1) = q.data().split_at(n);
            if q0.iter().zip(q1).any(|(a, b)| (a - b).abs() < KINK_MARGIN) {
                continue;
            }
            return GraphA { x, w, b };
        }
    }

    fn eval(&self, plan: &ShufflePlan) -> (Tape, crate::tape::NodeId, [crate::tape::NodeId; 3]) {
        let mut tape = Tape::new();
        let x = tape.input(self.x.clone());
        let w = tape.input(self.w.clone());
        let b = tape.input(self.b.clone());
        let c = tape.conv3d(x, w, b, 1, Padding::Replicate).unwrap();
        let r = tape.relu(c);
        let s = tape.sigmoid(c);
        let m = tape.mul(r, s).unwrap();
        let q = tape.add(m, x).unwrap();
        let mx = tape.pool_channel(q, PoolMode::Max).unwrap();
        let av = tape.pool_channel(q, PoolMode::Avg).unwrap();
        let sd = tape.concat0(mx, av).unwrap();
        let (fwd, inv) = plan.shuffle_maps();
        let sm = tape.spatial_map(sd, fwd, inv).unwrap();
        let a = tape.sigmoid(sm);
        let a1 = tape.pool_channel(a, PoolMode::Avg).unwrap();
        let rg = tape.residual_gate(a1, q).unwrap();
        let sum = tape.sum_all(rg);
        let n = self.x.len() as Real;
        let l = tape.scale(sum, 1.0 / n);
        (tape, l, [x, w, b])
    }
}

/// Inputs of the second composite graph: upsampling into spatial pools,
/// a dense layer, reshape, and both loss nodes.
struct GraphB {
    y: Tensor,
    lw: Tensor,
    lb: Tensor,
    g: Tensor,
    wmap: Tensor,
}

impl GraphB {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let y = loop {
            let y = random_tensor(rng, &[1, 2, 2, 2], -1.0, 1.0);
            let d = y.data();
            let tied = (0..d.len())
                .any(|i| (0..i).any(|j| (d[i] - d[j]).abs() < KINK_MARGIN));
            if !tied {
                break y;
            }
        };
        GraphB {
            y,
            lw: random_tensor(rng, &[2, 2], -0.5, 0.5),
            lb: random_tensor(rng, &[2], -0.2, 0.2),
            g: random_mask(rng, &[4, 4, 4], 0.4),
            wmap: random_tensor(rng, &[4, 4, 4], 1.0, 27.0),
        }
    }

    fn eval(&self) -> (Tape, crate::tape::NodeId, [crate::tape::NodeId; 3]) {
        let mut tape = Tape::new();
        let y = tape.input(self.y.clone());
        let lw = tape.input(self.lw.clone());
        let lb = tape.input(self.lb.clone());
        let u = tape.upsample2x(y).unwrap();
        let p = tape.sigmoid(u);
        let p3 = tape.reshape(p, &[4, 4, 4]).unwrap();
        let ce = tape.ce_loss(p3, &self.g).unwrap();
        let wd = tape.weighted_dice_loss(p3, &self.g, &self.wmap, DEFAULT_EPS).unwrap();
        let ps = tape.pool_spatial(u, PoolMode::Max).unwrap();
        let pa = tape.pool_spatial(u, PoolMode::Avg).unwrap();
        let cat = tape.concat0(ps, pa).unwrap();
        let li = tape.linear(cat, lw, lb).unwrap();
        let ls = tape.sum_all(li);
        let t = tape.add(ce, wd).unwrap();
        let t = tape.add(t, ls).unwrap();
        let l = tape.scale(t, 0.5);
        (tape, l, [y, lw, lb])
    }
}

/// Checks every input coordinate of both composite graphs, which
/// together route gradients through each differentiable tape op.
pub fn check_ops(seed: u64) -> FdReport {
    let mut report = FdReport::new("ops", OPS_TOL);
    let plan = ShufflePlan::build([4, 4, 4], [2, 2, 2]).unwrap();
    for draw in 0..3u64 {
        let mut rng = rng::stream(seed, &[TAG_FD, 0, draw]);

        let ga = GraphA::draw(&mut rng);
        let (mut tape, l, inputs) = ga.eval(&plan);
        tape.backward(l).unwrap();
        let grads: Vec<Tensor> =
            inputs.iter().map(|&id| tape.grad(id).unwrap().clone()).collect();
        for (slot, grad) in grads.iter().enumerate() {
            for i in 0..grad.len() {
                let x0 = [&ga.x, &ga.w, &ga.b][slot].data()[i];
                let numeric = fd_slope(
                    |v| {
                        let mut gp =
                            GraphA { x: ga.x.clone(), w: ga.w.clone(), b: ga.b.clone() };
                        [&mut gp.x, &mut gp.w, &mut gp.b][slot].data_mut()[i] = v;
                        let (tape, l, _) = gp.eval(&plan);
                        tape.value(l).data()[0]
                    },
                    x0,
                    OPS_STEP,
                );
                report.observe(grad.data()[i], numeric);
            }
        }

        let gb = GraphB::draw(&mut rng);
        let (mut tape, l, inputs) = gb.eval();
        tape.backward(l).unwrap();
        let grads: Vec<Tensor> =
            inputs.iter().map(|&id| tape.grad(id).unwrap().clone()).collect();
        for (slot, grad) in grads.iter().enumerate() {
            for i in 0..grad.len() {
                let x0 = [&gb.y, &gb.lw, &gb.lb][slot].data()[i];
                let numeric = fd_slope(
                    |v| {
                        let mut gp = GraphB {
                            y: gb.y.clone(),
                            lw: gb.lw.clone(),
                            lb: gb.lb.clone(),
                            g: gb.g.clone(),
                            wmap: gb.wmap.clone(),
                        };
                        [&mut gp.y, &mut gp.lw, &mut gp.lb][slot].data_mut()[i] = v;
                        let (tape, l, _) = gp.eval();
                        tape.value(l).data()[0]
                    },
                    x0,
                    OPS_STEP,
                );
                report.observe(grad.data()[i], numeric);
            }
        }
    }
    report
}

// ---------------------------------------------------------------------
// Loss gradients
// ---------------------------------------------------------------------

/// Cross-entropy gradient at every voxel of random instances.
pub fn check_ce(seed: u64) -> FdReport {
    let mut report = FdReport::new("ce", CE_TOL);
    for draw in 0..2u64 {
        let mut rng = rng::stream(seed, &[TAG_FD, 1, draw]);
        let g = random_mask(&mut rng, &[8, 8, 8], 0.3);
        let mut p = random_tensor(&mut rng, &[8, 8, 8], 0.05, 0.95);
        let analytic = loss::ce_grad(&p, &g).unwrap();
        for i in 0..p.len() {
            let x0 = p.data()[i];
            let numeric = fd_slope(
                |v| {
                    p.data_mut()[i] = v;
                    loss::ce_loss(&p, &g).unwrap()
                },
                x0,
                LOSS_STEP,
            );
            p.data_mut()[i] = x0;
            report.observe(analytic.data()[i], numeric);
        }
    }
    report
}

/// Boundary-loss gradient at every voxel, for both stencil sizes.
pub fn check_dfb(seed: u64) -> FdReport {
    let mut report = FdReport::new("dfb", LOSS_TOL);
    for (draw, k) in [(0u64, 3usize), (1, 5), (2, 3), (3, 5)] {
        let mut rng = rng::stream(seed, &[TAG_FD, 2, draw]);
        let g = random_mask(&mut rng, &[8, 8, 8], 0.3);
        let map = loss::dfb_map(&g, k).unwrap();
        let mut p = random_tensor(&mut rng, &[8, 8, 8], 0.05, 0.95);
        let analytic = loss::dfb_loss_grad(&p, &g, &map, DEFAULT_EPS).unwrap();
        for i in 0..p.len() {
            let x0 = p.data()[i];
            let numeric = fd_slope(
                |v| {
                    p.data_mut()[i] = v;
                    loss::dfb_loss(&p, &g, &map, DEFAULT_EPS).unwrap()
                },
                x0,
                LOSS_STEP,
            );
            p.data_mut()[i] = x0;
            report.observe(analytic.data()[i], numeric);
        }
    }
    report
}

/// Combined loss gradient (cross-entropy plus boundary term).
pub fn check_total(seed: u64) -> FdReport {
    let mut report = FdReport::new("total", LOSS_TOL);
    let k = 5;
    for draw in 0..2u64 {
        let mut rng = rng::stream(seed, &[TAG_FD, 3, draw]);
        let g = random_mask(&mut rng, &[8, 8, 8], 0.3);
        let map = loss::dfb_map(&g, k).unwrap();
        let mut p = random_tensor(&mut rng, &[8, 8, 8], 0.05, 0.95);
        let ce = loss::ce_grad(&p, &g).unwrap();
        let dfb = loss::dfb_loss_grad(&p, &g, &map, DEFAULT_EPS).unwrap();
        let analytic = ops::add(&ce, &dfb).unwrap();
        for i in 0..p.len() {
            let x0 = p.data()[i];
            let numeric = fd_slope(
                |v| {
                    p.data_mut()[i] = v;
                    loss::total_loss(&p, &g, k, DEFAULT_EPS).unwrap().total
                },
                x0,
                LOSS_STEP,
            );
            p.data_mut()[i] = x0;
            report.observe(analytic.data()[i], numeric);
        }
    }
    report
}

// ---------------------------------------------------------------------
// Attention block and full network
// ---------------------------------------------------------------------

/// Attention-block gradients with the shuffle plan frozen: every feature
/// coordinate plus the attention convolution's weights and bias. The
/// scalar under test projects the output onto fixed random coefficients
/// so no gradient component can cancel away.
pub fn check_sram(seed: u64) -> FdReport {
    let mut report = FdReport::new("sram", SRAM_TOL);
    let plan = ShufflePlan::build([4, 6, 8], [2, 3, 2]).unwrap();
    for draw in 0..2u64 {
        let mut rng = rng::stream(seed, &[TAG_FD, 4, draw]);
        let mut params = SramParams::init(3, 3, &mut rng);
        params.conv_b = random_tensor(&mut rng, &[1], -0.2, 0.2);
        // Unique per-voxel channel maxima keep the descriptor smooth.
        let f = loop {
            let f = random_tensor(&mut rng, &[3, 4, 6, 8], -1.0, 1.0);
            let sp = 4 * 6 * 8;
            let tied = (0..sp).any(|s| {
                let a = f.data()[s];
                let b = f.data()[sp + s];
                let c = f.data()[2 * sp + s];
                (a - b).abs() < KINK_MARGIN
                    || (a - c).abs() < KINK_MARGIN
                    || (b - c).abs() < KINK_MARGIN
            });
            if !tied {
                break f;
            }
        };
        let coeff = random_tensor(&mut rng, &[3, 4, 6, 8], -1.0, 1.0);
        let n = f.len() as Real;

        let pure = |f: &Tensor, params: &SramParams| -> Real {
            let out = sram::sram_forward_with_plan(f, params, &plan).unwrap();
            ops::sum_all(&ops::mul(&out, &coeff).unwrap()).data()[0] / n
        };

        let mut tape = Tape::new();
        let f_id = tape.input(f.clone());
        let nodes = SramNodes {
            conv_w: tape.input(params.conv_w.clone()),
            conv_b: tape.input(params.conv_b.clone()),
        };
        let out = sram::sram_forward_on_tape(&mut tape, f_id, &nodes, &plan).unwrap();
        let c_id = tape.input(coeff.clone());
        let proj = tape.mul(out, c_id).unwrap();
        let sum = tape.sum_all(proj);
        let l = tape.scale(sum, 1.0 / n);
        debug_assert!((tape.value(l).data()[0] - pure(&f, &params)).abs() <= 1e-12);
        tape.backward(l).unwrap();
        let f_grad = tape.grad(f_id).unwrap().clone();
        let w_grad = tape.grad(nodes.conv_w).unwrap().clone();
        let b_grad = tape.grad(nodes.conv_b).unwrap().clone();

        let mut fp = f.clone();
        for i in 0..fp.len() {
            let x0 = fp.data()[i];
            let numeric = fd_slope(
                |v| {
                    fp.data_mut()[i] = v;
                    pure(&fp, &params)
                },
                x0,
                SRAM_STEP,
            );
            fp.data_mut()[i] = x0;
            report.observe(f_grad.data()[i], numeric);
        }
        for i in 0..params.conv_w.len() {
            let x0 = params.conv_w.data()[i];
            let numeric = fd_slope(
                |v| {
                    params.conv_w.data_mut()[i] = v;
                    pure(&f, &params)
                },
                x0,
                SRAM_STEP,
            );
            params.conv_w.data_mut()[i] = x0;
            report.observe(w_grad.data()[i], numeric);
        }
        {
            let x0 = params.conv_b.data()[0];
            let numeric = fd_slope(
                |v| {
                    params.conv_b.data_mut()[0] = v;
                    pure(&f, &params)
                },
                x0,
                SRAM_STEP,
            );
            params.conv_b.data_mut()[0] = x0;
            report.observe(b_grad.data()[0], numeric);
        }
    }
    report
}

fn set_param(params: &mut ModelParams, tensor: usize, coord: usize, v: Real) {
    *params.named_tensors_mut()[tensor].1.data_mut().get_mut(coord).unwrap() = v;
}

/// Central difference of `loss` in parameter coordinate `(t, c)` around
/// `anchor`; the coordinate is reset to `restore` afterwards.
fn param_slope(
    work: &mut ModelParams,
    t: usize,
    c: usize,
    anchor: Real,
    step: Real,
    restore: Real,
    loss: &impl Fn(&ModelParams) -> Real,
) -> Real {
    let n = fd_slope(
        |v| {
            set_param(work, t, c, v);
            loss(work)
        },
        anchor,
        step,
    );
    set_param(work, t, c, restore);
    n
}

/// End-to-end gradient of the training loss through the full network on
/// a 16×16×8 volume, on a random subsample of parameters. Ratio heads
/// are excluded: selection is a hard argmax and carries no gradient.
///
/// Probing a parameter shifts every downstream ReLU input at once, so the
/// loss along one coordinate is piecewise smooth, and for bias
/// coordinates the kinks can be dense: a conv bias sits at the
/// zero-quantile of its channel's pre-activation distribution, giving
/// segments only a few e-5 wide. When analytic and numeric disagree, the
/// coordinate is retried on a ladder of nudged anchors and shrinking
/// steps until the probe interval fits inside one smooth segment, with
/// the analytic gradient recomputed at each new anchor. A kink stays
/// behind when the anchor moves, while a genuine defect in the gradient
/// code follows the coordinate and still fails. Shrinking the step only
/// raises the round-off floor, so it can turn a sound gradient's probe
/// into an honest retry, never a defective one into a pass.
pub fn check_net(seed: u64) -> FdReport {
    const SAMPLES: usize = 240;
    let mut report = FdReport::with_floor("net", NET_TOL, NET_FLOOR);
    let mut rng = rng::stream(seed, &[TAG_FD, 5]);
    let arch = ArchDescriptor {
        in_channels: 1,
        channels: vec![4, 8],
        sram: vec![true, true],
        sram_kernel: 3,
        dfb_k: 3,
    };
    let params = net::init_model(&arch, rng.gen()).unwrap();
    let x = random_tensor(&mut rng, &[1, 16, 16, 8], 0.0, 1.0);
    let g = random_mask(&mut rng, &[16, 16, 8], 0.2);
    let weights = loss::dfb_map(&g, arch.dfb_k).unwrap().weights;

    let pure = |params: &ModelParams| -> Real {
        let p = net::forward(params, &x).unwrap();
        loss::ce_loss(&p, &g).unwrap()
            + loss::weighted_soft_dice(&p, &g, &weights, DEFAULT_EPS).unwrap()
    };
    let grads_at = |params: &ModelParams| -> Vec<Option<Tensor>> {
        let mut tape = Tape::new();
        let tn = net::forward_on_tape(&mut tape, params, &x).unwrap();
        let (total, _, _) =
            train::loss_on_tape(&mut tape, tn.prob, &g, LossMode::CeDfb, arch.dfb_k, DEFAULT_EPS)
                .unwrap();
        debug_assert!((tape.value(total).data()[0] - pure(params)).abs() <= 1e-12);
        tape.backward(total).unwrap();
        tn.param_nodes
            .iter()
            .map(|(name, node)| {
                node.map(|id| {
                    tape.grad(id).unwrap_or_else(|| panic!("no gradient for {name}")).clone()
                })
            })
            .collect()
    };

    let named = params.named_tensors();
    let grads = grads_at(&params);
    assert_eq!(named.len(), grads.len());
    let eligible: Vec<usize> = (0..named.len()).filter(|&i| grads[i].is_some()).collect();

    let mut work = params.clone();
    let mut probed: Vec<(usize, usize)> = Vec::new();
    while probed.len() < SAMPLES {
        let (t, c) = loop {
            let t = eligible[rng.gen_range(0..eligible.len())];
            let c = rng.gen_range(0..named[t].1.len());
            if !probed.contains(&(t, c)) {
                break (t, c);
            }
        };
        probed.push((t, c));
        let x0 = work.named_tensors()[t].1.data()[c];
        let numeric = param_slope(&mut work, t, c, x0, NET_STEP, x0, &pure);
        let analytic = grads[t].as_ref().unwrap().data()[c];
        if rel_err_floored(analytic, numeric, NET_FLOOR) <= 0.8 * NET_TOL {
            report.observe(analytic, numeric);
            continue;
        }
        let ladder: [(Real, Real); 8] = [
            (5.0 * NET_STEP, NET_STEP),
            (-5.0 * NET_STEP, NET_STEP),
            (0.0, NET_STEP / 10.0),
            (NET_STEP / 2.0, NET_STEP / 10.0),
            (-NET_STEP / 2.0, NET_STEP / 10.0),
            (0.0, NET_STEP / 100.0),
            (NET_STEP / 20.0, NET_STEP / 100.0),
            (-NET_STEP / 20.0, NET_STEP / 100.0),
        ];
        let mut resolved = false;
        for (offset, step) in ladder {
            let anchor = x0 + offset;
            set_param(&mut work, t, c, anchor);
            let shifted = grads_at(&work)[t].as_ref().unwrap().data()[c];
            let clean = param_slope(&mut work, t, c, anchor, step, x0, &pure);
            if rel_err_floored(shifted, clean, NET_FLOOR) <= 0.8 * NET_TOL {
                report.observe(shifted, clean);
                resolved = true;
                break;
            }
        }
        if !resolved {
            report.observe(analytic, numeric);
        }
    }
    report
}

/// Every suite, in a stable order.
pub fn check_all(seed: u64) -> Vec<FdReport> {
    vec![
        check_ops(seed),
        check_ce(seed),
        check_dfb(seed),
        check_total(seed),
        check_sram(seed),
        check_net(seed),
    ]
}
