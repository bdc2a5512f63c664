//! VNet-style 3D encoder-decoder for binary segmentation.
//!
//! The backbone is deliberately small: a stem conv, `S` encoder stages of
//! two 3³ convs with an additive residual, stride-2 conv downsampling
//! between stages, a mirrored decoder using nearest-neighbour upsampling
//! plus conv and additive skip connections, and a 1×1×1 sigmoid head.
//! Each encoder stage can optionally be followed by an SRAM attention
//! block. The pure [`forward`] and the tape-recorded
//! [`forward_on_tape`] run the same kernels and produce bitwise-identical
//! outputs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{self, Padding};
use crate::error::{Error, Result};
use crate::ops;
use crate::rng;
use crate::sram::{self, SramNodes, SramParams};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Real, Tensor};

/// Architecture descriptor, serialized into checkpoints and configs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    /// Input channels (1 for intensity volumes).
    pub in_channels: usize,
    /// Channel width per encoder stage; the length is the stage count.
    pub channels: Vec<usize>,
    /// One SRAM on/off flag per encoder stage.
    pub sram: Vec<bool>,
    /// Attention conv stencil for SRAM blocks.
    pub sram_kernel: usize,
    /// Neighbourhood size for the boundary loss attached to this model.
    pub dfb_k: usize,
}

impl Default for ArchDescriptor {
    fn default() -> Self {
        ArchDescriptor {
            in_channels: 1,
            channels: vec![8, 16, 32],
            sram: vec![false, false, false],
            sram_kernel: sram::DEFAULT_KERNEL,
            dfb_k: 5,
        }
    }
}

impl ArchDescriptor {
    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    /// Input spatial extents must be divisible by this (one halving per
    /// downsampling step).
    pub fn divisor(&self) -> usize {
        1 << (self.stages() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 stages, got {}",
                self.stages()
            )));
        }
        if self.in_channels == 0 || self.channels.contains(&0) {
            return Err(Error::InvalidConfig("channel widths must be positive".into()));
        }
        if self.sram.len() != self.stages() {
            return Err(Error::InvalidConfig(format!(
                "{} SRAM flags for {} stages",
                self.sram.len(),
                self.stages()
            )));
        }
        if self.sram_kernel.is_multiple_of(2) {
            return Err(Error::EvenKernel { k: self.sram_kernel });
        }
        if self.dfb_k.is_multiple_of(2) {
            return Err(Error::EvenKernel { k: self.dfb_k });
        }
        Ok(())
    }
}

/// One convolution's weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub w: Tensor,
    pub b: Tensor,
}

impl ConvBlock {
    fn init(c_out: usize, c_in: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = c_in * k * k * k;
        let bound = 1.0 / (fan_in as Real).sqrt();
        let w = Tensor::new_unchecked(
            vec![c_out, c_in, k, k, k],
            (0..c_out * fan_in).map(|_| rng.gen_range(-bound..bound)).collect(),
        );
        ConvBlock { w, b: Tensor::zeros(&[c_out]) }
    }
}

/// Two-conv residual stage: `relu(conv2(relu(conv1(x))) + x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    pub conv1: ConvBlock,
    pub conv2: ConvBlock,
}

impl StageParams {
    fn init(ch: usize, rng: &mut ChaCha8Rng) -> Self {
        StageParams {
            conv1: ConvBlock::init(ch, ch, 3, rng),
            conv2: ConvBlock::init(ch, ch, 3, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchDescriptor,
    pub stem: ConvBlock,
    pub enc: Vec<StageParams>,
    pub down: Vec<ConvBlock>,
    pub sram: Vec<Option<SramParams>>,
    pub up: Vec<ConvBlock>,
    pub dec: Vec<StageParams>,
    pub head: ConvBlock,
}

/// Deterministic model initialization from a seed.
pub fn init_model(arch: &ArchDescriptor, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = rng::stream(seed, &[0x6d6f64656c]); // "model"
    let s = arch.stages();
    let ch = &arch.channels;

    let stem = ConvBlock::init(ch[0], arch.in_channels, 3, &mut rng);
    let enc: Vec<StageParams> = (0..s).map(|i| StageParams::init(ch[i], &mut rng)).collect();
    let down: Vec<ConvBlock> =
        (0..s - 1).map(|i| ConvBlock::init(ch[i + 1], ch[i], 3, &mut rng)).collect();
    let sram = (0..s)
        .map(|i| {
            arch.sram[i].then(|| SramParams::init(ch[i], arch.sram_kernel, &mut rng))
        })
        .collect();
    let up: Vec<ConvBlock> =
        (0..s - 1).map(|i| ConvBlock::init(ch[i], ch[i + 1], 3, &mut rng)).collect();
    let dec: Vec<StageParams> = (0..s - 1).map(|i| StageParams::init(ch[i], &mut rng)).collect();
    let head = ConvBlock::init(1, ch[0], 1, &mut rng);

    Ok(ModelParams { arch: arch.clone(), stem, enc, down, sram, up, dec, head })
}

impl ModelParams {
    /// All parameter tensors in a stable order with stable names; the
    /// checkpoint format, the optimizer, and gradient extraction all key
    /// off this list.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.push(("stem.w".into(), &self.stem.w));
        out.push(("stem.b".into(), &self.stem.b));
        for (i, st) in self.enc.iter().enumerate() {
            out.push((format!("enc{i}.conv1.w"), &st.conv1.w));
            out.push((format!("enc{i}.conv1.b"), &st.conv1.b));
            out.push((format!("enc{i}.conv2.w"), &st.conv2.w));
            out.push((format!("enc{i}.conv2.b"), &st.conv2.b));
        }
        for (i, d) in self.down.iter().enumerate() {
            out.push((format!("down{i}.w"), &d.w));
            out.push((format!("down{i}.b"), &d.b));
        }
        for (i, sp) in self.sram.iter().enumerate() {
            if let Some(sp) = sp {
                out.push((format!("sram{i}.head.w"), &sp.head_w));
                out.push((format!("sram{i}.head.b"), &sp.head_b));
                out.push((format!("sram{i}.conv.w"), &sp.conv_w));
                out.push((format!("sram{i}.conv.b"), &sp.conv_b));
            }
        }
        for (i, u) in self.up.iter().enumerate() {
            out.push((format!("up{i}.w"), &u.w));
            out.push((format!("up{i}.b"), &u.b));
        }
        for (i, st) in self.dec.iter().enumerate() {
            out.push((format!("dec{i}.conv1.w"), &st.conv1.w));
            out.push((format!("dec{i}.conv1.b"), &st.conv1.b));
            out.push((format!("dec{i}.conv2.w"), &st.conv2.w));
            out.push((format!("dec{i}.conv2.b"), &st.conv2.b));
        }
        out.push(("head.w".into(), &self.head.w));
        out.push(("head.b".into(), &self.head.b));
        out
    }

    /// Mutable access by the same names/order as [`Self::named_tensors`].
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        out.push(("stem.w".into(), &mut self.stem.w));
        out.push(("stem.b".into(), &mut self.stem.b));
        for (i, st) in self.enc.iter_mut().enumerate() {
            out.push((format!("enc{i}.conv1.w"), &mut st.conv1.w));
            out.push((format!("enc{i}.conv1.b"), &mut st.conv1.b));
            out.push((format!("enc{i}.conv2.w"), &mut st.conv2.w));
            out.push((format!("enc{i}.conv2.b"), &mut st.conv2.b));
        }
        for (i, d) in self.down.iter_mut().enumerate() {
            out.push((format!("down{i}.w"), &mut d.w));
            out.push((format!("down{i}.b"), &mut d.b));
        }
        for (i, sp) in self.sram.iter_mut().enumerate() {
            if let Some(sp) = sp {
                out.push((format!("sram{i}.head.w"), &mut sp.head_w));
                out.push((format!("sram{i}.head.b"), &mut sp.head_b));
                out.push((format!("sram{i}.conv.w"), &mut sp.conv_w));
                out.push((format!("sram{i}.conv.b"), &mut sp.conv_b));
            }
        }
        for (i, u) in self.up.iter_mut().enumerate() {
            out.push((format!("up{i}.w"), &mut u.w));
            out.push((format!("up{i}.b"), &mut u.b));
        }
        for (i, st) in self.dec.iter_mut().enumerate() {
            out.push((format!("dec{i}.conv1.w"), &mut st.conv1.w));
            out.push((format!("dec{i}.conv1.b"), &mut st.conv1.b));
            out.push((format!("dec{i}.conv2.w"), &mut st.conv2.w));
            out.push((format!("dec{i}.conv2.b"), &mut st.conv2.b));
        }
        out.push(("head.w".into(), &mut self.head.w));
        out.push(("head.b".into(), &mut self.head.b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Rebuilds a model from checkpoint tensors. Entries whose names do
    /// not belong to the model (e.g. optimizer state) are ignored; missing
    /// or shape-mismatched model tensors are errors.
    pub fn from_named(arch: &ArchDescriptor, tensors: &[(String, Tensor)]) -> Result<ModelParams> {
        let mut model = init_model(arch, 0)?;
        let lookup: std::collections::HashMap<&str, &Tensor> =
            tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (name, slot) in model.named_tensors_mut() {
            let found = lookup.get(name.as_str()).ok_or_else(|| {
                Error::InvalidConfig(format!("checkpoint is missing tensor {name}"))
            })?;
            if found.shape() != slot.shape() {
                return Err(Error::shape(
                    format!("checkpoint tensor {name}"),
                    slot.shape(),
                    found.shape(),
                ));
            }
            *slot = (*found).clone();
        }
        Ok(model)
    }
}

fn validate_input(arch: &ArchDescriptor, x: &Tensor) -> Result<[usize; 3]> {
    if x.rank() != 4 || x.shape()[0] != arch.in_channels {
        return Err(Error::RankMismatch {
            context: format!("seg-net input (expected [{}, H, W, D])", arch.in_channels),
            expected: 4,
            shape: x.shape().to_vec(),
        });
    }
    let sp = x.spatial()?;
    let div = arch.divisor();
    if sp.iter().any(|&d| d % div != 0) {
        return Err(Error::IndivisibleShape {
            context: "seg-net input".into(),
            shape: sp.to_vec(),
            divisor: div,
        });
    }
    Ok(sp)
}

fn stage_pure(st: &StageParams, x: &Tensor) -> Result<Tensor> {
    let t = ops::relu(&conv::conv3d(x, &st.conv1.w, &st.conv1.b, 1, Padding::Zero)?);
    let t = conv::conv3d(&t, &st.conv2.w, &st.conv2.b, 1, Padding::Zero)?;
    Ok(ops::relu(&ops::add(&t, x)?))
}

/// Pure forward pass: per-voxel foreground probabilities `[H, W, D]`.
pub fn forward(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    let sp = validate_input(&params.arch, x)?;
    let s = params.arch.stages();

    let mut f = ops::relu(&conv::conv3d(x, &params.stem.w, &params.stem.b, 1, Padding::Zero)?);
    let mut skips: Vec<Tensor> = Vec::with_capacity(s - 1);
    for i in 0..s {
        f = stage_pure(&params.enc[i], &f)?;
        if let Some(sp) = &params.sram[i] {
            f = sram::sram_forward(&f, sp)?;
        }
        if i < s - 1 {
            skips.push(f.clone());
            f = ops::relu(&conv::conv3d(
                &f,
                &params.down[i].w,
                &params.down[i].b,
                2,
                Padding::Zero,
            )?);
        }
    }
    for i in (0..s - 1).rev() {
        let u = ops::upsample2x(&f)?;
        let u = ops::relu(&conv::conv3d(&u, &params.up[i].w, &params.up[i].b, 1, Padding::Zero)?);
        let z = ops::add(&u, &skips[i])?;
        f = stage_pure(&params.dec[i], &z)?;
    }
    let logits = conv::conv3d(&f, &params.head.w, &params.head.b, 1, Padding::Zero)?;
    let p = ops::sigmoid(&logits);
    p.reshaped(&sp)
}

/// Handles returned by [`forward_on_tape`].
pub struct TapeNet {
    /// Probability node, shape `[H, W, D]`.
    pub prob: NodeId,
    /// One entry per [`ModelParams::named_tensors`] entry, in the same
    /// order. `None` marks parameters that stay off-tape (the SRAM ratio
    /// heads, which receive no gradient by design).
    pub param_nodes: Vec<(String, Option<NodeId>)>,
}

struct TapeConv {
    w: NodeId,
    b: NodeId,
}

/// Records the full forward pass on a tape for training. SRAM shuffle
/// plans are selected from the running values as constants, exactly as in
/// the pure path.
pub fn forward_on_tape(tape: &mut Tape, params: &ModelParams, x: &Tensor) -> Result<TapeNet> {
    let sp = validate_input(&params.arch, x)?;
    let s = params.arch.stages();
    let mut param_nodes: Vec<(String, Option<NodeId>)> = Vec::new();

    fn reg(
        tape: &mut Tape,
        nodes: &mut Vec<(String, Option<NodeId>)>,
        name: String,
        t: &Tensor,
    ) -> NodeId {
        let id = tape.input(t.clone());
        nodes.push((name, Some(id)));
        id
    }

    let stem = TapeConv {
        w: reg(tape, &mut param_nodes, "stem.w".into(), &params.stem.w),
        b: reg(tape, &mut param_nodes, "stem.b".into(), &params.stem.b),
    };
    let enc: Vec<[TapeConv; 2]> = params
        .enc
        .iter()
        .enumerate()
        .map(|(i, st)| {
            [
                TapeConv {
                    w: reg(tape, &mut param_nodes, format!("enc{i}.conv1.w"), &st.conv1.w),
                    b: reg(tape, &mut param_nodes, format!("enc{i}.conv1.b"), &st.conv1.b),
                },
                TapeConv {
                    w: reg(tape, &mut param_nodes, format!("enc{i}.conv2.w"), &st.conv2.w),
                    b: reg(tape, &mut param_nodes, format!("enc{i}.conv2.b"), &st.conv2.b),
                },
            ]
        })
        .collect();
    let down: Vec<TapeConv> = params
        .down
        .iter()
        .enumerate()
        .map(|(i, d)| TapeConv {
            w: reg(tape, &mut param_nodes, format!("down{i}.w"), &d.w),
            b: reg(tape, &mut param_nodes, format!("down{i}.b"), &d.b),
        })
        .collect();
    let mut sram_nodes: Vec<Option<SramNodes>> = Vec::with_capacity(s);
    for (i, sp) in params.sram.iter().enumerate() {
        match sp {
            Some(sp) => {
                // Ratio heads are parameters (checkpointed, uniformly
                // optimized) but never enter the tape.
                param_nodes.push((format!("sram{i}.head.w"), None));
                param_nodes.push((format!("sram{i}.head.b"), None));
                let nodes = SramNodes {
                    conv_w: reg(tape, &mut param_nodes, format!("sram{i}.conv.w"), &sp.conv_w),
                    conv_b: reg(tape, &mut param_nodes, format!("sram{i}.conv.b"), &sp.conv_b),
                };
                sram_nodes.push(Some(nodes));
            }
            None => sram_nodes.push(None),
        }
    }
    let up: Vec<TapeConv> = params
        .up
        .iter()
        .enumerate()
        .map(|(i, u)| TapeConv {
            w: reg(tape, &mut param_nodes, format!("up{i}.w"), &u.w),
            b: reg(tape, &mut param_nodes, format!("up{i}.b"), &u.b),
        })
        .collect();
    let dec: Vec<[TapeConv; 2]> = params
        .dec
        .iter()
        .enumerate()
        .map(|(i, st)| {
            [
                TapeConv {
                    w: reg(tape, &mut param_nodes, format!("dec{i}.conv1.w"), &st.conv1.w),
                    b: reg(tape, &mut param_nodes, format!("dec{i}.conv1.b"), &st.conv1.b),
                },
                TapeConv {
                    w: reg(tape, &mut param_nodes, format!("dec{i}.conv2.w"), &st.conv2.w),
                    b: reg(tape, &mut param_nodes, format!("dec{i}.conv2.b"), &st.conv2.b),
                },
            ]
        })
        .collect();
    let head = TapeConv {
        w: reg(tape, &mut param_nodes, "head.w".into(), &params.head.w),
        b: reg(tape, &mut param_nodes, "head.b".into(), &params.head.b),
    };

    let stage = |tape: &mut Tape, st: &[TapeConv; 2], x: NodeId| -> Result<NodeId> {
        let t = tape.conv3d(x, st[0].w, st[0].b, 1, Padding::Zero)?;
        let t = tape.relu(t);
        let t = tape.conv3d(t, st[1].w, st[1].b, 1, Padding::Zero)?;
        let sum = tape.add(t, x)?;
        Ok(tape.relu(sum))
    };

    let x_id = tape.input(x.clone());
    let c = tape.conv3d(x_id, stem.w, stem.b, 1, Padding::Zero)?;
    let mut f = tape.relu(c);
    let mut skips: Vec<NodeId> = Vec::with_capacity(s - 1);
    for i in 0..s {
        f = stage(tape, &enc[i], f)?;
        if let Some(nodes) = &sram_nodes[i] {
            let plan = sram::select_plan(tape.value(f), params.sram[i].as_ref().unwrap())?;
            f = sram::sram_forward_on_tape(tape, f, nodes, &plan)?;
        }
        if i < s - 1 {
            skips.push(f);
            let d = tape.conv3d(f, down[i].w, down[i].b, 2, Padding::Zero)?;
            f = tape.relu(d);
        }
    }
    for i in (0..s - 1).rev() {
        let u = tape.upsample2x(f)?;
        let u = tape.conv3d(u, up[i].w, up[i].b, 1, Padding::Zero)?;
        let u = tape.relu(u);
        let z = tape.add(u, skips[i])?;
        f = stage(tape, &dec[i], z)?;
    }
    let logits = tape.conv3d(f, head.w, head.b, 1, Padding::Zero)?;
    let p4 = tape.sigmoid(logits);
    let prob = tape.reshape(p4, &sp)?;

    Ok(TapeNet { prob, param_nodes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = crate::rng::stream(41, &[seed]);
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let arch = ArchDescriptor::default();
        let a = init_model(&arch, 7).unwrap();
        let b = init_model(&arch, 7).unwrap();
        assert_eq!(a, b);
        let c = init_model(&arch, 8).unwrap();
        assert!(a
            .named_tensors()
            .iter()
            .zip(c.named_tensors())
            .any(|((_, x), (_, y))| x.data() != y.data()));
    }

    #[test]
    fn default_param_count_is_stable() {
        // Analytic count: conv params = C_out·C_in·k³ + C_out.
        let cv = |co: usize, ci: usize, k: usize| co * ci * k * k * k + co;
        let expected = cv(8, 1, 3)                     // stem
            + 2 * cv(8, 8, 3) + 2 * cv(16, 16, 3) + 2 * cv(32, 32, 3) // encoder stages
            + cv(16, 8, 3) + cv(32, 16, 3)             // down convs
            + cv(8, 16, 3) + cv(16, 32, 3)             // up convs
            + 2 * cv(8, 8, 3) + 2 * cv(16, 16, 3)      // decoder stages
            + cv(1, 8, 1); // head
        let model = init_model(&ArchDescriptor::default(), 1).unwrap();
        assert_eq!(model.param_count(), expected);

        // Adding SRAM at stage 0 contributes head [15, 2C] + [15] and the
        // 2-channel attention conv.
        let arch = ArchDescriptor {
            sram: vec![true, false, false],
            sram_kernel: 7,
            ..ArchDescriptor::default()
        };
        let with_sram = init_model(&arch, 1).unwrap();
        let sram_extra = 15 * 16 + 15 + cv(1, 2, 7);
        assert_eq!(with_sram.param_count(), expected + sram_extra);
    }

    #[test]
    fn forward_shape_and_range() {
        let arch = ArchDescriptor::default();
        let model = init_model(&arch, 3).unwrap();
        let x = random_input(&[1, 8, 8, 8], 0);
        let p = forward(&model, &x).unwrap();
        assert_eq!(p.shape(), &[8, 8, 8]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        // Determinism.
        let p2 = forward(&model, &x).unwrap();
        assert_eq!(p.data(), p2.data());
    }

    #[test]
    fn indivisible_input_is_rejected_with_divisor() {
        let model = init_model(&ArchDescriptor::default(), 3).unwrap();
        let x = Tensor::zeros(&[1, 6, 8, 8]);
        match forward(&model, &x) {
            Err(Error::IndivisibleShape { divisor, .. }) => assert_eq!(divisor, 4),
            other => panic!("expected IndivisibleShape, got {other:?}"),
        }
    }

    #[test]
    fn zero_head_outputs_half() {
        let mut model = init_model(&ArchDescriptor::default(), 3).unwrap();
        model.head.w = Tensor::zeros(model.head.w.shape());
        model.head.b = Tensor::zeros(model.head.b.shape());
        let x = random_input(&[1, 8, 8, 8], 1);
        let p = forward(&model, &x).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn tape_forward_matches_pure_forward_bitwise() {
        for sram_on in [false, true] {
            let arch = ArchDescriptor {
                sram: vec![sram_on, sram_on, false],
                sram_kernel: 3,
                ..ArchDescriptor::default()
            };
            let model = init_model(&arch, 5).unwrap();
            let x = random_input(&[1, 8, 8, 8], 2);
            let pure = forward(&model, &x).unwrap();
            let mut tape = Tape::new();
            let tn = forward_on_tape(&mut tape, &model, &x).unwrap();
            assert_eq!(tape.value(tn.prob).data(), pure.data(), "sram={sram_on}");
        }
    }

    #[test]
    fn param_nodes_align_with_named_tensors() {
        let arch = ArchDescriptor {
            sram: vec![true, false, true],
            sram_kernel: 3,
            ..ArchDescriptor::default()
        };
        let model = init_model(&arch, 9).unwrap();
        let mut tape = Tape::new();
        let tn = forward_on_tape(&mut tape, &model, &random_input(&[1, 8, 8, 8], 3)).unwrap();
        let named = model.named_tensors();
        assert_eq!(named.len(), tn.param_nodes.len());
        for ((n1, t), (n2, node)) in named.iter().zip(&tn.param_nodes) {
            assert_eq!(n1, n2);
            match node {
                Some(id) => assert_eq!(tape.value(*id).data(), t.data()),
                None => assert!(n1.contains("head."), "off-tape param {n1}"),
            }
        }
    }

    #[test]
    fn sram_free_net_records_no_permutation_ops() {
        let model = init_model(&ArchDescriptor::default(), 4).unwrap();
        let mut tape = Tape::new();
        forward_on_tape(&mut tape, &model, &random_input(&[1, 8, 8, 8], 4)).unwrap();
        assert!(tape.op_names().all(|n| n != "spatial_map"));

        let arch = ArchDescriptor {
            sram: vec![true, false, false],
            sram_kernel: 3,
            ..ArchDescriptor::default()
        };
        let with = init_model(&arch, 4).unwrap();
        let mut tape2 = Tape::new();
        forward_on_tape(&mut tape2, &with, &random_input(&[1, 8, 8, 8], 4)).unwrap();
        assert!(tape2.op_names().any(|n| n == "spatial_map"));
    }

    #[test]
    fn from_named_roundtrip_and_missing_tensor() {
        let arch = ArchDescriptor {
            sram: vec![false, true, false],
            sram_kernel: 3,
            ..ArchDescriptor::default()
        };
        let model = init_model(&arch, 11).unwrap();
        let tensors: Vec<(String, Tensor)> = model
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let rebuilt = ModelParams::from_named(&arch, &tensors).unwrap();
        assert_eq!(rebuilt, model);

        let truncated = &tensors[..tensors.len() - 1];
        assert!(ModelParams::from_named(&arch, truncated).is_err());
    }

    #[test]
    fn invalid_descriptors_are_rejected() {
        let one_stage = ArchDescriptor {
            channels: vec![8],
            sram: vec![false],
            ..ArchDescriptor::default()
        };
        assert!(init_model(&one_stage, 0).is_err());
        let bad_flags = ArchDescriptor { sram: vec![false], ..ArchDescriptor::default() };
        assert!(init_model(&bad_flags, 0).is_err());
    }
}
