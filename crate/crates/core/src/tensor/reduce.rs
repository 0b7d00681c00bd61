//! Fused reductions: per-row statistics over the last axis and the
//! cross-entropy loss on raw logits.
//!
//! Both exist as single graph nodes rather than op chains so the hot paths
//! (information purification taps, the training loss) stay numerically
//! stable and cheap. Independent brute-force recomputations of these values
//! live in the test suites, not here.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Statistic computed over the last axis by [`Tensor::row_stat_last`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowStat {
    /// log of mean squared amplitude: ln(Σx²/L + eps).
    LogPower { eps: f64 },
    /// Arithmetic mean.
    Mean,
    /// Population standard deviation: √(Σ(x-μ)²/L + eps).
    Std { eps: f64 },
}

impl<T: Scalar> Tensor<T> {
    /// Reduces the last axis to a single statistic per row; the output drops
    /// that axis.
    pub fn row_stat_last(&self, stat: RowStat) -> Result<Tensor<T>> {
        if self.ndim() == 0 {
            return Err(Error::shape("row_stat_last", "rank-0 tensor"));
        }
        let l = *self.shape().last().expect("ndim >= 1");
        let rows = self.numel() / l;
        let inv_l = T::ONE / T::from_usize(l);
        let out_shape = self.shape()[..self.ndim() - 1].to_vec();
        let x = self.clone();

        match stat {
            RowStat::LogPower { eps } => {
                let eps = T::from_f64(eps);
                let mut power = vec![T::ZERO; rows];
                let data: Vec<T> = {
                    let d = self.data();
                    (0..rows)
                        .map(|r| {
                            let mut acc = T::ZERO;
                            for &v in &d[r * l..(r + 1) * l] {
                                acc += v * v;
                            }
                            power[r] = acc * inv_l + eps;
                            power[r].ln()
                        })
                        .collect()
                };
                Ok(Tensor::from_op(data, out_shape, &[self], move |g| {
                    let xd = x.data();
                    let two = T::from_f64(2.0);
                    let mut gx = vec![T::ZERO; xd.len()];
                    for r in 0..rows {
                        let scale = g[r] * two * inv_l / power[r];
                        for i in 0..l {
                            gx[r * l + i] = scale * xd[r * l + i];
                        }
                    }
                    vec![Some(gx)]
                }))
            }
            RowStat::Mean => {
                let data: Vec<T> = {
                    let d = self.data();
                    (0..rows)
                        .map(|r| {
                            d[r * l..(r + 1) * l]
                                .iter()
                                .fold(T::ZERO, |acc, &v| acc + v)
                                * inv_l
                        })
                        .collect()
                };
                Ok(Tensor::from_op(data, out_shape, &[self], move |g| {
                    let mut gx = vec![T::ZERO; rows * l];
                    for r in 0..rows {
                        let gr = g[r] * inv_l;
                        for v in &mut gx[r * l..(r + 1) * l] {
                            *v = gr;
                        }
                    }
                    vec![Some(gx)]
                }))
            }
            RowStat::Std { eps } => {
                let eps = T::from_f64(eps);
                let mut mean = vec![T::ZERO; rows];
                let mut std = vec![T::ZERO; rows];
                let data: Vec<T> = {
                    let d = self.data();
                    (0..rows)
                        .map(|r| {
                            let row = &d[r * l..(r + 1) * l];
                            let mut mu = T::ZERO;
                            for &v in row {
                                mu += v;
                            }
                            mu *= inv_l;
                            let mut var = T::ZERO;
                            for &v in row {
                                let dv = v - mu;
                                var += dv * dv;
                            }
                            var *= inv_l;
                            mean[r] = mu;
                            std[r] = (var + eps).sqrt();
                            std[r]
                        })
                        .collect()
                };
                Ok(Tensor::from_op(data, out_shape, &[self], move |g| {
                    let xd = x.data();
                    let mut gx = vec![T::ZERO; xd.len()];
                    for r in 0..rows {
                        let scale = g[r] * inv_l / std[r];
                        for i in 0..l {
                            gx[r * l + i] = scale * (xd[r * l + i] - mean[r]);
                        }
                    }
                    vec![Some(gx)]
                }))
            }
        }
    }
}

/// Mean cross-entropy between raw logits `[batch, classes]` and integer
/// labels, computed through a shifted log-sum-exp.
pub fn cross_entropy_with_logits<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>> {
    if logits.ndim() != 2 {
        return Err(Error::shape(
            "cross_entropy_with_logits",
            format!("logits must be [batch, classes], got {:?}", logits.shape()),
        ));
    }
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(Error::shape(
            "cross_entropy_with_logits",
            format!("{} labels for batch of {batch}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }

    let mut probs = vec![T::ZERO; batch * classes];
    let mut total = T::ZERO;
    {
        let d = logits.data();
        for b in 0..batch {
            let row = &d[b * classes..(b + 1) * classes];
            let mut m = row[0];
            for &v in row {
                m = m.maximum(v);
            }
            let mut z = T::ZERO;
            for (c, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                probs[b * classes + c] = e;
                z += e;
            }
            for c in 0..classes {
                probs[b * classes + c] = probs[b * classes + c] / z;
            }
            let lse = m + z.ln();
            total += lse - row[labels[b]];
        }
    }
    let inv_b = T::ONE / T::from_usize(batch);
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        vec![total * inv_b],
        Vec::new(),
        &[logits],
        move |g| {
            let mut gx = vec![T::ZERO; batch * classes];
            for b in 0..batch {
                for c in 0..classes {
                    let onehot = if labels[b] == c { T::ONE } else { T::ZERO };
                    gx[b * classes + c] = g[0] * (probs[b * classes + c] - onehot) * inv_b;
                }
            }
            vec![Some(gx)]
        },
    ))
}
