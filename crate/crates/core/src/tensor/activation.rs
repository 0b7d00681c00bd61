//! Activations, softmax, and dropout.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Whether stochastic/stateful layers behave as in training or inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl<T: Scalar> Tensor<T> {
    /// Exponential linear unit: x for x > 0, eˣ - 1 otherwise (α = 1).
    pub fn elu(&self) -> Tensor<T> {
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&x| if x > T::ZERO { x } else { x.exp() - T::ONE })
            .collect();
        let x = self.clone();
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |g| {
            let xd = x.data();
            vec![Some(
                g.iter()
                    .zip(xd.iter())
                    .map(|(&gi, &xi)| {
                        // d/dx = 1 for x > 0, eˣ (= y + 1) otherwise.
                        if xi > T::ZERO {
                            gi
                        } else {
                            gi * xi.exp()
                        }
                    })
                    .collect(),
            )]
        })
    }

    /// Gaussian error linear unit, exact form: x · Φ(x) with the normal CDF
    /// expressed through erf.
    pub fn gelu(&self) -> Tensor<T> {
        let half = T::from_f64(0.5);
        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let phi = move |x: T| half * (T::ONE + (x * inv_sqrt2).erf());
        let data: Vec<T> = self.data().iter().map(|&x| x * phi(x)).collect();
        let x = self.clone();
        Tensor::from_op(data, self.shape().to_vec(), &[self], move |g| {
            let xd = x.data();
            let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
            vec![Some(
                g.iter()
                    .zip(xd.iter())
                    .map(|(&gi, &xi)| {
                        let pdf = inv_sqrt_2pi * (-(xi * xi) * half).exp();
                        gi * (phi(xi) + xi * pdf)
                    })
                    .collect(),
            )]
        })
    }

    /// Softmax along `axis`, computed with the max subtracted per lane so
    /// large logits cannot overflow.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() {
            return Err(Error::shape("softmax", format!("axis {axis} out of range")));
        }
        let extent = self.shape()[axis];
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();

        let mut out = vec![T::ZERO; self.numel()];
        {
            let d = self.data();
            for o in 0..outer {
                for i in 0..inner {
                    let at = |e: usize| (o * extent + e) * inner + i;
                    let mut m = d[at(0)];
                    for e in 1..extent {
                        m = m.maximum(d[at(e)]);
                    }
                    let mut z = T::ZERO;
                    for e in 0..extent {
                        let v = (d[at(e)] - m).exp();
                        out[at(e)] = v;
                        z += v;
                    }
                    for e in 0..extent {
                        out[at(e)] = out[at(e)] / z;
                    }
                }
            }
        }

        let probs = out.clone();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            &[self],
            move |g| {
                // dx = y ⊙ (g - Σ_axis g ⊙ y)
                let mut gx = vec![T::ZERO; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |e: usize| (o * extent + e) * inner + i;
                        let mut dot = T::ZERO;
                        for e in 0..extent {
                            dot += g[at(e)] * probs[at(e)];
                        }
                        for e in 0..extent {
                            gx[at(e)] = probs[at(e)] * (g[at(e)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by 1/(1-p), so the
    /// expectation matches eval mode, which is the identity. Mask draws
    /// consume `rng` sequentially, one per element.
    pub fn dropout(&self, p: f64, mode: Mode, rng: &mut RngState) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if matches!(mode, Mode::Eval) || p == 0.0 {
            return Ok(self.clone());
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.numel())
            .map(|_| {
                if rng.next_f64() >= p {
                    keep_scale
                } else {
                    T::ZERO
                }
            })
            .collect();
        let data: Vec<T> = self
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            &[self],
            move |g| {
                vec![Some(
                    g.iter().zip(&mask).map(|(&gi, &m)| gi * m).collect(),
                )]
            },
        ))
    }
}
