//! Convolutions (correlation convention, zero-padded "same" output) and the
//! weight-normalized reparameterization.
//!
//! Kernels are applied as cross-correlations: `out[t] = Σ_u w[u]·x[t+u-pad]`
//! with `pad = (κ-1)/2`, so kernel lengths must be odd and output length
//! equals input length. All convolutions accept an optional leading batch
//! axis; the output rank mirrors the input rank.

use super::linalg::{mm_nn, mm_nt, mm_tn};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn require_odd(op: &'static str, kernel_len: usize) -> Result<usize> {
    if kernel_len.is_multiple_of(2) || kernel_len == 0 {
        return Err(Error::Config(format!(
            "{op}: kernel length {kernel_len} must be odd for symmetric same-padding"
        )));
    }
    Ok((kernel_len - 1) / 2)
}

/// dst[t] += Σ_u w[u] · src[t+u-pad] over the in-range part of the window.
fn corr_same_axpy<T: Scalar>(dst: &mut [T], src: &[T], w: &[T], pad: usize) {
    let len = dst.len();
    for (u, &wu) in w.iter().enumerate() {
        let shift = u as isize - pad as isize;
        let (t0, t1) = valid_range(len, shift);
        for t in t0..t1 {
            dst[t] += wu * src[(t as isize + shift) as usize];
        }
    }
}

/// Transpose of `corr_same_axpy` in the signal argument:
/// dst[t+u-pad] += w[u] · src[t].
fn corr_same_transpose_axpy<T: Scalar>(dst: &mut [T], src: &[T], w: &[T], pad: usize) {
    let len = dst.len();
    for (u, &wu) in w.iter().enumerate() {
        let shift = u as isize - pad as isize;
        let (t0, t1) = valid_range(len, shift);
        for t in t0..t1 {
            dst[(t as isize + shift) as usize] += wu * src[t];
        }
    }
}

/// dw[u] += Σ_t src[t+u-pad] · dy[t].
fn corr_same_weight_grad<T: Scalar>(dw: &mut [T], src: &[T], dy: &[T], pad: usize) {
    let len = dy.len();
    for (u, slot) in dw.iter_mut().enumerate() {
        let shift = u as isize - pad as isize;
        let (t0, t1) = valid_range(len, shift);
        let mut acc = T::ZERO;
        for t in t0..t1 {
            acc += src[(t as isize + shift) as usize] * dy[t];
        }
        *slot += acc;
    }
}

/// Range of t for which t+shift lands inside [0, len).
fn valid_range(len: usize, shift: isize) -> (usize, usize) {
    let t0 = (-shift).max(0) as usize;
    let t1 = ((len as isize - shift).min(len as isize)).max(0) as usize;
    (t0, t1)
}

/// Splits a leading batch axis off `x` if present: returns (batch, core
/// shape) where `expected_rank` is the rank without the batch axis.
fn batch_split<'s>(
    op: &'static str,
    shape: &'s [usize],
    expected_rank: usize,
) -> Result<(usize, &'s [usize], bool)> {
    if shape.len() == expected_rank {
        Ok((1, shape, false))
    } else if shape.len() == expected_rank + 1 {
        Ok((shape[0], &shape[1..], true))
    } else {
        Err(Error::shape(
            op,
            format!("input rank {} not {expected_rank} or {}", shape.len(), expected_rank + 1),
        ))
    }
}

impl<T: Scalar> Tensor<T> {
    /// Temporal convolution: kernels slide along the time axis of every EEG
    /// channel independently.
    ///
    /// `self`: `[k_in, c, l]` or `[batch, k_in, c, l]`;
    /// `w`: `[k_out, k_in, 1, κ]` (κ odd); `b`: `[k_out]`.
    /// Output: `[.., k_out, c, l]`.
    pub fn conv_temporal(&self, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, core, batched) = batch_split("conv_temporal", self.shape(), 3)?;
        let (k_in, c, l) = (core[0], core[1], core[2]);
        let ws = w.shape();
        if ws.len() != 4 || ws[1] != k_in || ws[2] != 1 {
            return Err(Error::shape(
                "conv_temporal",
                format!("weight {ws:?} incompatible with input {:?}", self.shape()),
            ));
        }
        let (k_out, kappa) = (ws[0], ws[3]);
        let pad = require_odd("conv_temporal", kappa)?;
        if b.shape() != [k_out] {
            return Err(Error::shape(
                "conv_temporal",
                format!("bias {:?} vs k_out {k_out}", b.shape()),
            ));
        }

        let mut out = vec![T::ZERO; batch * k_out * c * l];
        {
            let (xd, wd, bd) = (self.data(), w.data(), b.data());
            for n in 0..batch {
                for j in 0..k_out {
                    let dst_base = ((n * k_out) + j) * c * l;
                    out[dst_base..dst_base + c * l].fill(bd[j]);
                    for i in 0..k_in {
                        let wrow = &wd[(j * k_in + i) * kappa..(j * k_in + i + 1) * kappa];
                        for ch in 0..c {
                            let src = ((n * k_in + i) * c + ch) * l;
                            let dst = dst_base + ch * l;
                            corr_same_axpy(
                                &mut out[dst..dst + l],
                                &xd[src..src + l],
                                wrow,
                                pad,
                            );
                        }
                    }
                }
            }
        }
        let out_shape = if batched {
            vec![batch, k_out, c, l]
        } else {
            vec![k_out, c, l]
        };

        let (x_c, w_c) = (self.clone(), w.clone());
        Ok(Tensor::from_op(out, out_shape, &[self, w, b], move |g| {
            let (xd, wd) = (x_c.data(), w_c.data());
            let mut gx = vec![T::ZERO; xd.len()];
            let mut gw = vec![T::ZERO; wd.len()];
            let mut gb = vec![T::ZERO; k_out];
            for n in 0..batch {
                for (j, gbj) in gb.iter_mut().enumerate() {
                    let dy_base = ((n * k_out) + j) * c * l;
                    for v in &g[dy_base..dy_base + c * l] {
                        *gbj += *v;
                    }
                    for i in 0..k_in {
                        let widx = (j * k_in + i) * kappa;
                        let wrow = &wd[widx..widx + kappa];
                        for ch in 0..c {
                            let xoff = ((n * k_in + i) * c + ch) * l;
                            let dy = &g[dy_base + ch * l..dy_base + (ch + 1) * l];
                            corr_same_transpose_axpy(&mut gx[xoff..xoff + l], dy, wrow, pad);
                            corr_same_weight_grad(
                                &mut gw[widx..widx + kappa],
                                &xd[xoff..xoff + l],
                                dy,
                                pad,
                            );
                        }
                    }
                }
            }
            vec![Some(gx), Some(gw), Some(gb)]
        }))
    }

    /// Spatial convolution: a 1×1-in-time kernel spanning all EEG channels,
    /// collapsing the channel axis.
    ///
    /// `self`: `[k_in, c, l]` or `[batch, k_in, c, l]`;
    /// `w`: `[k_out, k_in, c, 1]`; `b`: `[k_out]`.
    /// Output: `[.., k_out, 1, l]`.
    pub fn conv_spatial(&self, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, core, batched) = batch_split("conv_spatial", self.shape(), 3)?;
        let (k_in, c, l) = (core[0], core[1], core[2]);
        let ws = w.shape();
        if ws.len() != 4 || ws[1] != k_in || ws[2] != c || ws[3] != 1 {
            return Err(Error::shape(
                "conv_spatial",
                format!("weight {ws:?} incompatible with input {:?}", self.shape()),
            ));
        }
        let k_out = ws[0];
        if b.shape() != [k_out] {
            return Err(Error::shape(
                "conv_spatial",
                format!("bias {:?} vs k_out {k_out}", b.shape()),
            ));
        }

        // At every time step the op is a dense map over the (kernel,
        // channel) pairs, so each sample is one [k_out, k_in·c]·[k_in·c, l]
        // product; both operands are already contiguous in that layout.
        let kc = k_in * c;
        let mut out = vec![T::ZERO; batch * k_out * l];
        {
            let (xd, wd, bd) = (self.data(), w.data(), b.data());
            for n in 0..batch {
                let o = &mut out[n * k_out * l..(n + 1) * k_out * l];
                for j in 0..k_out {
                    o[j * l..(j + 1) * l].fill(bd[j]);
                }
                mm_nn(&wd, &xd[n * kc * l..(n + 1) * kc * l], k_out, kc, l, o);
            }
        }
        let out_shape = if batched {
            vec![batch, k_out, 1, l]
        } else {
            vec![k_out, 1, l]
        };

        let (x_c, w_c) = (self.clone(), w.clone());
        Ok(Tensor::from_op(out, out_shape, &[self, w, b], move |g| {
            let (xd, wd) = (x_c.data(), w_c.data());
            let mut gx = vec![T::ZERO; xd.len()];
            let mut gw = vec![T::ZERO; wd.len()];
            let mut gb = vec![T::ZERO; k_out];
            for n in 0..batch {
                let dy = &g[n * k_out * l..(n + 1) * k_out * l];
                for j in 0..k_out {
                    for v in &dy[j * l..(j + 1) * l] {
                        gb[j] += *v;
                    }
                }
                mm_tn(&wd, dy, k_out, kc, l, &mut gx[n * kc * l..(n + 1) * kc * l]);
                mm_nt(dy, &xd[n * kc * l..(n + 1) * kc * l], k_out, l, kc, &mut gw);
            }
            vec![Some(gx), Some(gw), Some(gb)]
        }))
    }

    /// 1-D same-padded convolution over the last axis, mixing input rows.
    ///
    /// `self`: `[k_in, l]` or `[batch, k_in, l]`;
    /// `w`: `[k_out, k_in, κ]` (κ odd); `b`: `[k_out]`.
    /// Output: `[.., k_out, l]`.
    pub fn conv1d_same(&self, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, core, batched) = batch_split("conv1d_same", self.shape(), 2)?;
        let (k_in, l) = (core[0], core[1]);
        let ws = w.shape();
        if ws.len() != 3 || ws[1] != k_in {
            return Err(Error::shape(
                "conv1d_same",
                format!("weight {ws:?} incompatible with input {:?}", self.shape()),
            ));
        }
        let (k_out, kappa) = (ws[0], ws[2]);
        let pad = require_odd("conv1d_same", kappa)?;
        if b.shape() != [k_out] {
            return Err(Error::shape(
                "conv1d_same",
                format!("bias {:?} vs k_out {k_out}", b.shape()),
            ));
        }

        let mut out = vec![T::ZERO; batch * k_out * l];
        {
            let (xd, wd, bd) = (self.data(), w.data(), b.data());
            for n in 0..batch {
                for j in 0..k_out {
                    let dst = (n * k_out + j) * l;
                    out[dst..dst + l].fill(bd[j]);
                    for i in 0..k_in {
                        let src = (n * k_in + i) * l;
                        corr_same_axpy(
                            &mut out[dst..dst + l],
                            &xd[src..src + l],
                            &wd[(j * k_in + i) * kappa..(j * k_in + i + 1) * kappa],
                            pad,
                        );
                    }
                }
            }
        }
        let out_shape = if batched {
            vec![batch, k_out, l]
        } else {
            vec![k_out, l]
        };

        let (x_c, w_c) = (self.clone(), w.clone());
        Ok(Tensor::from_op(out, out_shape, &[self, w, b], move |g| {
            let (xd, wd) = (x_c.data(), w_c.data());
            let mut gx = vec![T::ZERO; xd.len()];
            let mut gw = vec![T::ZERO; wd.len()];
            let mut gb = vec![T::ZERO; k_out];
            for n in 0..batch {
                for j in 0..k_out {
                    let dy = &g[(n * k_out + j) * l..(n * k_out + j + 1) * l];
                    for v in dy {
                        gb[j] += *v;
                    }
                    for i in 0..k_in {
                        let xoff = (n * k_in + i) * l;
                        let widx = (j * k_in + i) * kappa;
                        corr_same_transpose_axpy(
                            &mut gx[xoff..xoff + l],
                            dy,
                            &wd[widx..widx + kappa],
                            pad,
                        );
                        corr_same_weight_grad(
                            &mut gw[widx..widx + kappa],
                            &xd[xoff..xoff + l],
                            dy,
                            pad,
                        );
                    }
                }
            }
            vec![Some(gx), Some(gw), Some(gb)]
        }))
    }
}

/// Weight-normalized reparameterization `w_j = g_j · v_j / ‖v_j‖₂`, one norm
/// per output kernel (leading axis of `v`).
pub fn weight_norm<T: Scalar>(v: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    if v.ndim() < 2 {
        return Err(Error::shape(
            "weight_norm",
            format!("direction tensor must have rank >= 2, got {:?}", v.shape()),
        ));
    }
    let k_out = v.shape()[0];
    if g.shape() != [k_out] {
        return Err(Error::shape(
            "weight_norm",
            format!("gain {:?} vs leading axis {k_out}", g.shape()),
        ));
    }
    let row = v.numel() / k_out;
    let mut norms = vec![T::ZERO; k_out];
    {
        let vd = v.data();
        for (j, norm) in norms.iter_mut().enumerate() {
            let mut acc = T::ZERO;
            for &x in &vd[j * row..(j + 1) * row] {
                acc += x * x;
            }
            *norm = acc.sqrt();
            if *norm == T::ZERO {
                return Err(Error::Domain(format!(
                    "weight_norm: direction row {j} has zero norm"
                )));
            }
        }
    }
    let data: Vec<T> = {
        let (vd, gd) = (v.data(), g.data());
        vd.iter()
            .enumerate()
            .map(|(idx, &x)| {
                let j = idx / row;
                gd[j] * x / norms[j]
            })
            .collect()
    };

    let (v_c, g_c) = (v.clone(), g.clone());
    Ok(Tensor::from_op(
        data,
        v.shape().to_vec(),
        &[v, g],
        move |dy| {
            let (vd, gd) = (v_c.data(), g_c.data());
            let mut gv = vec![T::ZERO; vd.len()];
            let mut gg = vec![T::ZERO; gd.len()];
            for j in 0..gd.len() {
                let vj = &vd[j * row..(j + 1) * row];
                let dyj = &dy[j * row..(j + 1) * row];
                let n = norms[j];
                let mut dot = T::ZERO;
                for (&d, &x) in dyj.iter().zip(vj) {
                    dot += d * x;
                }
                gg[j] = dot / n;
                let a = gd[j] / n;
                let b = gd[j] * dot / (n * n * n);
                for ((slot, &d), &x) in gv[j * row..(j + 1) * row].iter_mut().zip(dyj).zip(vj) {
                    *slot = a * d - b * x;
                }
            }
            vec![Some(gv), Some(gg)]
        },
    ))
}
