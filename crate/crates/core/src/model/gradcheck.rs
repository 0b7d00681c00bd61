//! End-to-end finite-difference verification of the backward pass.
//!
//! Runs in 64-bit and in eval mode: running statistics are frozen and
//! dropout is inert, so the loss is a pure function of parameters and input
//! and central differences are valid. A discarded train-mode pass first
//! moves the BN running statistics off their 0/1 defaults so eval-mode
//! normalization is exercised with nontrivial scale and shift.

use crate::error::Result;
use crate::rng::RngState;
use crate::tensor::{
    cross_entropy_with_logits, finite_diff_grad, gradient_max_rel_err, no_grad, Mode, Tensor,
};

use super::config::ModelConfig;
use super::forward::Deformer;

pub struct GradCheckGroup {
    pub name: String,
    pub max_rel_err: f64,
}

pub struct GradCheckReport {
    pub groups: Vec<GradCheckGroup>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() < self.tolerance
    }

    pub fn failures(&self) -> Vec<&GradCheckGroup> {
        self.groups
            .iter()
            .filter(|g| g.max_rel_err >= self.tolerance)
            .collect()
    }
}

/// Compares the backward gradient of the training loss against central
/// finite differences, one group per parameter tensor plus one for the
/// input itself.
pub fn gradcheck(config: &ModelConfig, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let root = RngState::new(seed);
    let model = Deformer::<f64>::new(config.clone(), &root.derive(1))?;

    let batch = 2usize;
    let mut data_rng = root.derive(2);
    let n = batch * config.channels * config.segment_len;
    let x = Tensor::param(
        (0..n).map(|_| data_rng.normal(0.0, 1.0)).collect(),
        &[batch, config.channels, config.segment_len],
    )?;
    let labels: Vec<usize> = (0..batch)
        .map(|_| data_rng.below(config.n_classes))
        .collect();

    no_grad(|| {
        let mut warm = root.derive(3);
        model.forward(&x, Mode::Train, &mut warm).map(|_| ())
    })?;

    let loss_of = |probe: &Tensor<f64>| -> Result<f64> {
        let _ = probe;
        let trace = model.forward(&x, Mode::Eval, &mut RngState::new(0))?;
        Ok(cross_entropy_with_logits(&trace.logits, &labels)?.item())
    };

    model.params.zero_grads();
    x.zero_grad();
    let trace = model.forward(&x, Mode::Eval, &mut RngState::new(0))?;
    cross_entropy_with_logits(&trace.logits, &labels)?.backward()?;

    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let mut targets: Vec<(String, Tensor<f64>)> = model.params.named().to_vec();
    targets.push(("input".into(), x.clone()));

    let mut groups = Vec::with_capacity(targets.len());
    for (name, tensor) in targets {
        let analytic = tensor
            .grad()
            .unwrap_or_else(|| vec![0.0; tensor.numel()]);
        let numeric = finite_diff_grad(&tensor, H, loss_of)?;
        groups.push(GradCheckGroup {
            name,
            max_rel_err: gradient_max_rel_err(&analytic, &numeric, FLOOR),
        });
    }

    Ok(GradCheckReport { groups, tolerance })
}
