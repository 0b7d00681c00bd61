//! Adam with bias correction and coupled L2 weight decay.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// First and second moment buffers, one pair per parameter tensor, in the
/// same canonical order as the model registry.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[(String, Tensor<T>)]) -> Self {
        AdamState {
            m: params.iter().map(|(_, t)| vec![T::ZERO; t.numel()]).collect(),
            v: params.iter().map(|(_, t)| vec![T::ZERO; t.numel()]).collect(),
            step: 0,
        }
    }

    /// One update over every parameter. Weight decay enters the gradient as
    /// `wd·p` before the moment updates (coupled form). Parameters with no
    /// accumulated gradient are treated as zero-gradient, so decay still
    /// applies to them.
    pub fn step(
        &mut self,
        params: &[(String, Tensor<T>)],
        lr: f64,
        betas: (f64, f64),
        eps: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, model has {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64(betas.0), T::from_f64(betas.1));
        let one_m_b1 = T::from_f64(1.0 - betas.0);
        let one_m_b2 = T::from_f64(1.0 - betas.1);
        let bc1 = T::from_f64(1.0 - libm::pow(betas.0, f64::from(t)));
        let bc2 = T::from_f64(1.0 - libm::pow(betas.1, f64::from(t)));
        let lr_t = T::from_f64(lr);
        let eps_t = T::from_f64(eps);
        let wd = T::from_f64(weight_decay);

        for (i, (name, tensor)) in params.iter().enumerate() {
            if tensor.numel() != self.m[i].len() {
                return Err(Error::Config(format!(
                    "optimizer buffer for {name} has {} values, tensor has {}",
                    self.m[i].len(),
                    tensor.numel()
                )));
            }
            let grad = tensor.grad();
            let grad = grad.as_deref().unwrap_or(&[]);
            let mut data = tensor.data_mut();
            for j in 0..data.len() {
                let g = grad.get(j).copied().unwrap_or(T::ZERO) + wd * data[j];
                self.m[i][j] = b1 * self.m[i][j] + one_m_b1 * g;
                self.v[i][j] = b2 * self.v[i][j] + one_m_b2 * g * g;
                let m_hat = self.m[i][j] / bc1;
                let v_hat = self.v[i][j] / bc2;
                data[j] -= lr_t * m_hat / (v_hat.sqrt() + eps_t);
            }
        }
        Ok(())
    }
}
