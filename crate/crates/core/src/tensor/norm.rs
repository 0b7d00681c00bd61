//! Batch and layer normalization.

use super::activation::Mode;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Running statistics owned by a batch-norm layer. Updated only by
/// train-mode forward passes; eval-mode passes read them.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T: Scalar> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BatchNormState<T> {
    /// Fresh state: mean 0, variance 1, momentum 0.1, eps 1e-5.
    pub fn new(features: usize) -> Self {
        BatchNormState {
            running_mean: vec![T::ZERO; features],
            running_var: vec![T::ONE; features],
            momentum: T::from_f64(0.1),
            eps: T::from_f64(1e-5),
        }
    }

    pub fn with(features: usize, momentum: f64, eps: f64) -> Result<Self> {
        if !(0.0 < momentum && momentum <= 1.0) {
            return Err(Error::Config(format!(
                "batchnorm momentum {momentum} outside (0, 1]"
            )));
        }
        if eps <= 0.0 {
            return Err(Error::Config(format!("batchnorm eps {eps} must be positive")));
        }
        Ok(BatchNormState {
            running_mean: vec![T::ZERO; features],
            running_var: vec![T::ONE; features],
            momentum: T::from_f64(momentum),
            eps: T::from_f64(eps),
        })
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }
}

/// Index helpers for a feature axis inside an arbitrary-rank tensor.
fn feature_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let features = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, features, inner)
}

impl<T: Scalar> Tensor<T> {
    /// Batch normalization over `feature_axis`.
    ///
    /// Train mode normalizes with the batch mean and biased batch variance,
    /// then folds those statistics into `state` with its momentum. Eval mode
    /// normalizes with the running statistics and leaves `state` untouched.
    pub fn batchnorm(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        state: &mut BatchNormState<T>,
        mode: Mode,
        feature_axis: usize,
    ) -> Result<Tensor<T>> {
        if feature_axis >= self.ndim() {
            return Err(Error::shape(
                "batchnorm",
                format!("feature axis {feature_axis} out of range for {:?}", self.shape()),
            ));
        }
        let (outer, features, inner) = feature_layout(self.shape(), feature_axis);
        if gamma.shape() != [features] || beta.shape() != [features] {
            return Err(Error::shape(
                "batchnorm",
                format!(
                    "gamma {:?} / beta {:?} vs {features} features",
                    gamma.shape(),
                    beta.shape()
                ),
            ));
        }
        if state.features() != features {
            return Err(Error::shape(
                "batchnorm",
                format!("state has {} features, input has {features}", state.features()),
            ));
        }
        let count = outer * inner;
        if count == 0 {
            return Err(Error::shape("batchnorm", "empty batch"));
        }

        // Statistics used for normalization in this pass.
        let (mean, var) = match mode {
            Mode::Train => {
                let d = self.data();
                let inv = T::ONE / T::from_usize(count);
                let mut mean = vec![T::ZERO; features];
                let mut var = vec![T::ZERO; features];
                for f in 0..features {
                    let mut sum = T::ZERO;
                    for o in 0..outer {
                        let base = (o * features + f) * inner;
                        for &x in &d[base..base + inner] {
                            sum += x;
                        }
                    }
                    mean[f] = sum * inv;
                    let mut sq = T::ZERO;
                    for o in 0..outer {
                        let base = (o * features + f) * inner;
                        for &x in &d[base..base + inner] {
                            let dx = x - mean[f];
                            sq += dx * dx;
                        }
                    }
                    var[f] = sq * inv;
                }
                // Fold the biased batch statistics into the running ones.
                let m = state.momentum;
                for f in 0..features {
                    state.running_mean[f] = (T::ONE - m) * state.running_mean[f] + m * mean[f];
                    state.running_var[f] = (T::ONE - m) * state.running_var[f] + m * var[f];
                }
                (mean, var)
            }
            Mode::Eval => (state.running_mean.clone(), state.running_var.clone()),
        };

        let eps = state.eps;
        let istd: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
        let data: Vec<T> = {
            let (d, gd, bd) = (self.data(), gamma.data(), beta.data());
            let mut out = vec![T::ZERO; d.len()];
            for o in 0..outer {
                for f in 0..features {
                    let base = (o * features + f) * inner;
                    for i in 0..inner {
                        out[base + i] = gd[f] * (d[base + i] - mean[f]) * istd[f] + bd[f];
                    }
                }
            }
            out
        };

        let (x_c, g_c) = (self.clone(), gamma.clone());
        let train = matches!(mode, Mode::Train);
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            &[self, gamma, beta],
            move |dy| {
                let (xd, gd) = (x_c.data(), g_c.data());
                let n = T::from_usize(count);
                let mut gx = vec![T::ZERO; xd.len()];
                let mut ggamma = vec![T::ZERO; gd.len()];
                let mut gbeta = vec![T::ZERO; gd.len()];
                for f in 0..gd.len() {
                    // Per-feature reductions of dy and dy·x̂.
                    let mut sum_dy = T::ZERO;
                    let mut sum_dy_xhat = T::ZERO;
                    for o in 0..outer {
                        let base = (o * gd.len() + f) * inner;
                        for i in 0..inner {
                            let xhat = (xd[base + i] - mean[f]) * istd[f];
                            sum_dy += dy[base + i];
                            sum_dy_xhat += dy[base + i] * xhat;
                        }
                    }
                    ggamma[f] = sum_dy_xhat;
                    gbeta[f] = sum_dy;
                    for o in 0..outer {
                        let base = (o * gd.len() + f) * inner;
                        for i in 0..inner {
                            let xhat = (xd[base + i] - mean[f]) * istd[f];
                            gx[base + i] = if train {
                                // Batch statistics depend on x, so their
                                // gradients feed back into every element.
                                gd[f] * istd[f]
                                    * (dy[base + i] - sum_dy / n - xhat * sum_dy_xhat / n)
                            } else {
                                gd[f] * istd[f] * dy[base + i]
                            };
                        }
                    }
                }
                vec![Some(gx), Some(ggamma), Some(gbeta)]
            },
        ))
    }

    /// Layer normalization over the last axis with affine scale and shift.
    pub fn layernorm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        if self.ndim() == 0 {
            return Err(Error::shape("layernorm", "rank-0 tensor"));
        }
        let d_model = *self.shape().last().expect("ndim >= 1");
        if gamma.shape() != [d_model] || beta.shape() != [d_model] {
            return Err(Error::shape(
                "layernorm",
                format!(
                    "gamma {:?} / beta {:?} vs last axis {d_model}",
                    gamma.shape(),
                    beta.shape()
                ),
            ));
        }
        let rows = self.numel() / d_model;
        let inv = T::ONE / T::from_usize(d_model);

        let mut mean = vec![T::ZERO; rows];
        let mut istd = vec![T::ZERO; rows];
        let data: Vec<T> = {
            let (xd, gd, bd) = (self.data(), gamma.data(), beta.data());
            let mut out = vec![T::ZERO; xd.len()];
            for r in 0..rows {
                let row = &xd[r * d_model..(r + 1) * d_model];
                let mut mu = T::ZERO;
                for &x in row {
                    mu += x;
                }
                mu *= inv;
                let mut var = T::ZERO;
                for &x in row {
                    let dx = x - mu;
                    var += dx * dx;
                }
                var *= inv;
                let is = T::ONE / (var + eps).sqrt();
                mean[r] = mu;
                istd[r] = is;
                for (i, &x) in row.iter().enumerate() {
                    out[r * d_model + i] = gd[i] * (x - mu) * is + bd[i];
                }
            }
            out
        };

        let (x_c, g_c) = (self.clone(), gamma.clone());
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            &[self, gamma, beta],
            move |dy| {
                let (xd, gd) = (x_c.data(), g_c.data());
                let d_model = gd.len();
                let inv = T::ONE / T::from_usize(d_model);
                let mut gx = vec![T::ZERO; xd.len()];
                let mut ggamma = vec![T::ZERO; d_model];
                let mut gbeta = vec![T::ZERO; d_model];
                for r in 0..rows {
                    let row = &xd[r * d_model..(r + 1) * d_model];
                    let dyr = &dy[r * d_model..(r + 1) * d_model];
                    let mut mean_dxhat = T::ZERO;
                    let mut mean_dxhat_xhat = T::ZERO;
                    for i in 0..d_model {
                        let xhat = (row[i] - mean[r]) * istd[r];
                        let dxhat = dyr[i] * gd[i];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat;
                        ggamma[i] += dyr[i] * xhat;
                        gbeta[i] += dyr[i];
                    }
                    mean_dxhat *= inv;
                    mean_dxhat_xhat *= inv;
                    for i in 0..d_model {
                        let xhat = (row[i] - mean[r]) * istd[r];
                        let dxhat = dyr[i] * gd[i];
                        gx[r * d_model + i] =
                            istd[r] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
                vec![Some(gx), Some(ggamma), Some(gbeta)]
            },
        ))
    }
}
