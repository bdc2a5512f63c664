//! Adam with bias correction and coupled L2 weight decay.
//!
//! The decay term is added to the gradient before the moment updates
//! (the classic formulation), so a zero-initialized parameter with no
//! gradient stays exactly zero. Updates are elementwise:
//!
//! ```text
//! g   = grad + wd·θ
//! m   = β₁·m + (1−β₁)·g          m̂ = m / (1−β₁^t)
//! v   = β₂·v + (1−β₂)·g²         v̂ = v / (1−β₂^t)
//! θ  -= lr · m̂ / (√v̂ + ε)
//! ```
//!
//! State serializes as `optim.m.<name>` / `optim.v.<name>` tensors plus
//! a scalar `optim.step`, appended to model checkpoints so a resumed
//! run continues bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub weight_decay: Real,
    pub eps: Real,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, weight_decay: 1e-4, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.weight_decay < 0.0 || self.eps <= 0.0 {
            return Err(Error::InvalidConfig(
                "weight decay must be non-negative and eps positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    name: String,
    m: Tensor,
    v: Tensor,
}

/// First/second moment estimates for every named parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    slots: Vec<Slot>,
}

impl AdamState {
    /// Fresh zero state aligned with a parameter list.
    pub fn new(params: &[(String, &Tensor)]) -> Self {
        AdamState {
            step: 0,
            slots: params
                .iter()
                .map(|(name, t)| Slot {
                    name: name.clone(),
                    m: Tensor::zeros(t.shape()),
                    v: Tensor::zeros(t.shape()),
                })
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Checkpoint representation: `optim.step` plus both moments per
    /// parameter, in parameter order.
    pub fn to_named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(1 + 2 * self.slots.len());
        out.push(("optim.step".to_string(), Tensor::scalar(self.step as Real)));
        for s in &self.slots {
            out.push((format!("optim.m.{}", s.name), s.m.clone()));
            out.push((format!("optim.v.{}", s.name), s.v.clone()));
        }
        out
    }

    /// Rebuilds state from checkpoint tensors, validating against the
    /// parameter list it will drive.
    pub fn from_named(params: &[(String, &Tensor)], tensors: &[(String, Tensor)]) -> Result<Self> {
        let find = |name: &str| -> Result<&Tensor> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("checkpoint is missing optimizer tensor {name}"))
                })
        };
        let step_t = find("optim.step")?;
        let step = step_t.item() as u64;
        let mut slots = Vec::with_capacity(params.len());
        for (name, p) in params {
            let m = find(&format!("optim.m.{name}"))?;
            let v = find(&format!("optim.v.{name}"))?;
            if !m.same_shape(p) || !v.same_shape(p) {
                return Err(Error::shape(
                    format!("optimizer moments for {name}"),
                    p.shape(),
                    m.shape(),
                ));
            }
            slots.push(Slot { name: name.clone(), m: m.clone(), v: v.clone() });
        }
        Ok(AdamState { step, slots })
    }
}

/// One Adam update over an aligned parameter list. `grads[i]` pairs
/// with `params[i]`; `None` means zero gradient (parameters detached
/// from the loss this step). Any non-finite gradient aborts the step
/// before touching state, naming the offending tensor.
pub fn adam_step(
    params: &mut [(String, &mut Tensor)],
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    if params.len() != grads.len() || params.len() != state.slots.len() {
        return Err(Error::InvalidArgument(format!(
            "adam_step alignment: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.slots.len()
        )));
    }
    for ((name, p), (g, slot)) in params.iter().zip(grads.iter().zip(&state.slots)) {
        if name != &slot.name {
            return Err(Error::InvalidArgument(format!(
                "adam_step parameter order mismatch: {name} vs state {}",
                slot.name
            )));
        }
        if let Some(g) = g {
            if !g.same_shape(p) {
                return Err(Error::shape(format!("gradient for {name}"), p.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NanGradient { name: name.clone() });
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((_, p), (g, slot)) in params.iter_mut().zip(grads.iter().zip(&mut state.slots)) {
        let pd = p.data_mut();
        let m = slot.m.data_mut();
        let v = slot.v.data_mut();
        for i in 0..pd.len() {
            let grad = g.as_ref().map_or(0.0, |g| g.data()[i]) + cfg.weight_decay * pd[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad * grad;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            pd[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: Real) -> (Vec<(String, Tensor)>, AdamState) {
        let params = vec![("theta".to_string(), Tensor::scalar(value))];
        let state = AdamState::new(
            &params.iter().map(|(n, t)| (n.clone(), t)).collect::<Vec<_>>(),
        );
        (params, state)
    }

    fn step_one(
        params: &mut [(String, Tensor)],
        grads: &[Option<Tensor>],
        state: &mut AdamState,
        cfg: &AdamConfig,
    ) -> Result<()> {
        let mut view: Vec<(String, &mut Tensor)> =
            params.iter_mut().map(|(n, t)| (n.clone(), t)).collect();
        adam_step(&mut view, grads, state, cfg)
    }

    #[test]
    fn first_step_moves_by_lr() {
        // g = 1 at t = 1: m̂ = 1, v̂ = 1, so Δθ = −lr / (1 + eps·…) ≈ −lr.
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        let (mut params, mut state) = single(1.0);
        step_one(&mut params, &[Some(Tensor::scalar(1.0))], &mut state, &cfg).unwrap();
        let expected = 1.0 - cfg.lr / (1.0 + cfg.eps);
        assert!(
            (params[0].1.item() - expected).abs() < 1e-18,
            "got {}, want {expected}",
            params[0].1.item()
        );
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        let (mut params, mut state) = single(0.7);
        for _ in 0..5 {
            step_one(&mut params, &[None], &mut state, &cfg).unwrap();
        }
        assert_eq!(params[0].1.item().to_bits(), (0.7 as Real).to_bits());
        // Explicit zero tensors behave the same as None.
        step_one(&mut params, &[Some(Tensor::scalar(0.0))], &mut state, &cfg).unwrap();
        assert_eq!(params[0].1.item().to_bits(), (0.7 as Real).to_bits());
    }

    #[test]
    fn weight_decay_shrinks_detached_parameters() {
        // Coupled L2 turns zero-grad into g = wd·θ, pulling θ toward 0 —
        // but an exactly-zero parameter stays exactly zero.
        let cfg = AdamConfig::default();
        let (mut params, mut state) = single(0.5);
        for _ in 0..10 {
            step_one(&mut params, &[None], &mut state, &cfg).unwrap();
        }
        let v = params[0].1.item();
        assert!(v < 0.5 && v > 0.0, "decayed value {v}");

        let (mut zparams, mut zstate) = single(0.0);
        for _ in 0..10 {
            step_one(&mut zparams, &[None], &mut zstate, &cfg).unwrap();
        }
        assert_eq!(zparams[0].1.item().to_bits(), (0.0 as Real).to_bits());
    }

    #[test]
    fn nan_gradient_aborts_naming_tensor() {
        let cfg = AdamConfig::default();
        let (mut params, mut state) = single(1.0);
        let before = params[0].1.item();
        let bad = Tensor::new_unchecked(vec![1], vec![Real::NAN]);
        match step_one(&mut params, &[Some(bad)], &mut state, &cfg) {
            Err(Error::NanGradient { name }) => assert_eq!(name, "theta"),
            other => panic!("expected NanGradient, got {other:?}"),
        }
        // Step aborted before mutating anything.
        assert_eq!(params[0].1.item().to_bits(), before.to_bits());
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn converges_on_a_quadratic() {
        // Minimize (θ−3)²; gradient 2(θ−3).
        let cfg = AdamConfig { lr: 0.05, weight_decay: 0.0, ..AdamConfig::default() };
        let (mut params, mut state) = single(-1.0);
        for _ in 0..2000 {
            let g = 2.0 * (params[0].1.item() - 3.0);
            step_one(&mut params, &[Some(Tensor::scalar(g))], &mut state, &cfg).unwrap();
        }
        assert!((params[0].1.item() - 3.0).abs() < 1e-3, "theta = {}", params[0].1.item());
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let cfg = AdamConfig::default();
        let run = || {
            let (mut params, mut state) = single(0.3);
            for i in 0..50 {
                let g = Tensor::scalar(((i * 7919) % 13) as Real / 13.0 - 0.5);
                step_one(&mut params, &[Some(g)], &mut state, &cfg).unwrap();
            }
            (params[0].1.item().to_bits(), state)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn state_roundtrips_through_named_tensors() {
        let cfg = AdamConfig::default();
        let mut params = [
            ("a.w".to_string(), Tensor::full(&[2, 3], 0.4)),
            ("a.b".to_string(), Tensor::full(&[3], -0.2)),
        ];
        let mut state = AdamState::new(
            &params.iter().map(|(n, t)| (n.clone(), t)).collect::<Vec<_>>(),
        );
        for i in 0..7 {
            let grads = vec![
                Some(Tensor::full(&[2, 3], 0.1 * (i as Real + 1.0))),
                Some(Tensor::full(&[3], -0.05)),
            ];
            let mut view: Vec<(String, &mut Tensor)> =
                params.iter_mut().map(|(n, t)| (n.clone(), t)).collect();
            adam_step(&mut view, &grads, &mut state, &cfg).unwrap();
        }
        let named = state.to_named();
        assert_eq!(named[0].0, "optim.step");
        let view: Vec<(String, &Tensor)> = params.iter().map(|(n, t)| (n.clone(), t)).collect();
        let restored = AdamState::from_named(&view, &named).unwrap();
        assert_eq!(restored, state);

        // Missing moment tensor is a clear error.
        let truncated: Vec<(String, Tensor)> =
            named.iter().filter(|(n, _)| n != "optim.v.a.b").cloned().collect();
        match AdamState::from_named(&view, &truncated) {
            Err(Error::InvalidArgument(msg)) => assert!(msg.contains("optim.v.a.b"), "{msg}"),
            other => panic!("expected InvalidArgument, got {other:?}"),
        }
    }

    #[test]
    fn misalignment_is_rejected() {
        let cfg = AdamConfig::default();
        let (mut params, mut state) = single(1.0);
        // Wrong gradient count.
        assert!(step_one(&mut params, &[], &mut state, &cfg).is_err());
        // Wrong gradient shape.
        let bad = Some(Tensor::zeros(&[2]));
        assert!(matches!(
            step_one(&mut params, &[bad], &mut state, &cfg),
            Err(Error::ShapeMismatch { .. })
        ));
        // Invalid config.
        let bad_cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        assert!(step_one(&mut params, &[None], &mut state, &bad_cfg).is_err());
    }
}
