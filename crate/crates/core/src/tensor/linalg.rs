//! Matrix products and data-movement ops (reshape, permute, narrow, concat).

use super::{strides_of, Scalar, Tensor};
use crate::error::{Error, Result};

/// C[m,n] = A[m,k] · B[k,n], accumulated into `out`.
pub(super) fn mm_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// C[m,k] = A[m,n] · B[k,n]ᵀ, accumulated into `out`.
pub(super) fn mm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize, out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let b_row = &b[j * n..(j + 1) * n];
            let mut acc = T::ZERO;
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * k + j] += acc;
        }
    }
}

/// C[k,n] = A[m,k]ᵀ · B[m,n], accumulated into `out`.
pub(super) fn mm_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &b_ij) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_ij;
            }
        }
    }
}

pub(crate) fn permute_raw<T: Scalar>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut out = vec![T::ZERO; src.len()];
    let rank = shape.len();
    let mut out_idx = vec![0usize; rank];
    for (lin, slot) in out.iter_mut().enumerate() {
        // Decompose the output linear index, then gather from the input.
        let mut rem = lin;
        for (axis, idx) in out_idx.iter_mut().enumerate() {
            let stride: usize = out_shape[axis + 1..].iter().product();
            *idx = rem / stride;
            rem %= stride;
        }
        let src_lin: usize = out_idx
            .iter()
            .enumerate()
            .map(|(axis, &idx)| idx * in_strides[perm[axis]])
            .sum();
        *slot = src[src_lin];
    }
    out
}

impl<T: Scalar> Tensor<T> {
    /// Matrix product. Supported rank pairs:
    /// - `[m,k] · [k,n] -> [m,n]`
    /// - `[b,m,k] · [k,n] -> [b,m,n]` (shared right operand)
    /// - `[b,m,k] · [b,k,n] -> [b,m,n]` (batched)
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape().to_vec(), rhs.shape().to_vec());
        let (batch, m, k, n, rhs_batched) = match (sa.len(), sb.len()) {
            (2, 2) => (1, sa[0], sa[1], sb[1], false),
            (3, 2) => (sa[0], sa[1], sa[2], sb[1], false),
            (3, 3) => {
                if sa[0] != sb[0] {
                    return Err(Error::shape(
                        "matmul",
                        format!("batch extents differ: {sa:?} vs {sb:?}"),
                    ));
                }
                (sa[0], sa[1], sa[2], sb[2], true)
            }
            _ => {
                return Err(Error::shape(
                    "matmul",
                    format!("unsupported ranks {sa:?} vs {sb:?}"),
                ))
            }
        };
        let k_rhs = sb[sb.len() - 2];
        if k != k_rhs {
            return Err(Error::shape(
                "matmul",
                format!("inner extents differ: {sa:?} vs {sb:?}"),
            ));
        }

        let mut out = vec![T::ZERO; batch * m * n];
        {
            let (a, b) = (self.data(), rhs.data());
            for bi in 0..batch {
                let b_off = if rhs_batched { bi * k * n } else { 0 };
                mm_nn(
                    &a[bi * m * k..(bi + 1) * m * k],
                    &b[b_off..b_off + k * n],
                    m,
                    k,
                    n,
                    &mut out[bi * m * n..(bi + 1) * m * n],
                );
            }
        }
        let out_shape = if sa.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };

        let (lhs_c, rhs_c) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            out,
            out_shape,
            &[self, rhs],
            move |g| {
                let (a, b) = (lhs_c.data(), rhs_c.data());
                let mut ga = vec![T::ZERO; a.len()];
                let mut gb = vec![T::ZERO; b.len()];
                for bi in 0..batch {
                    let gc = &g[bi * m * n..(bi + 1) * m * n];
                    let b_off = if rhs_batched { bi * k * n } else { 0 };
                    // dA = dC · Bᵀ
                    mm_nt(
                        gc,
                        &b[b_off..b_off + k * n],
                        m,
                        n,
                        k,
                        &mut ga[bi * m * k..(bi + 1) * m * k],
                    );
                    // dB = Aᵀ · dC (summed over the batch when B is shared)
                    mm_tn(
                        &a[bi * m * k..(bi + 1) * m * k],
                        gc,
                        m,
                        k,
                        n,
                        &mut gb[b_off..b_off + k * n],
                    );
                }
                vec![Some(ga), Some(gb)]
            },
        ))
    }

    /// Reinterprets the buffer with a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape()),
            ));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            &[self],
            |g| vec![Some(g.to_vec())],
        ))
    }

    pub fn unsqueeze(&self, axis: usize) -> Result<Tensor<T>> {
        if axis > self.ndim() {
            return Err(Error::shape("unsqueeze", format!("axis {axis} out of range")));
        }
        let mut shape = self.shape().to_vec();
        shape.insert(axis, 1);
        self.reshape(&shape)
    }

    pub fn squeeze(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() || self.shape()[axis] != 1 {
            return Err(Error::shape(
                "squeeze",
                format!("axis {axis} of {:?} is not 1", self.shape()),
            ));
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        self.reshape(&shape)
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let rank = self.ndim();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(
                "permute",
                format!("{perm:?} is not a permutation of 0..{rank}"),
            ));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let data = permute_raw(&self.data(), self.shape(), perm);
        let mut inverse = vec![0usize; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let grad_shape = out_shape.clone();
        Ok(Tensor::from_op(data, out_shape, &[self], move |g| {
            vec![Some(permute_raw(g, &grad_shape, &inverse))]
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&self) -> Result<Tensor<T>> {
        let rank = self.ndim();
        if rank < 2 {
            return Err(Error::shape("transpose_last2", format!("rank {rank} < 2")));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(&perm)
    }

    /// Contiguous slice of length `len` starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() {
            return Err(Error::shape("narrow", format!("axis {axis} out of range")));
        }
        let extent = self.shape()[axis];
        if len == 0 || start + len > extent {
            return Err(Error::shape(
                "narrow",
                format!("[{start}, {start}+{len}) out of axis extent {extent}"),
            ));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut out = vec![T::ZERO; outer * len * inner];
        {
            let d = self.data();
            for o in 0..outer {
                let src = o * extent * inner + start * inner;
                let dst = o * len * inner;
                out[dst..dst + len * inner].copy_from_slice(&d[src..src + len * inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let full = self.numel();
        Ok(Tensor::from_op(out, shape, &[self], move |g| {
            let mut gx = vec![T::ZERO; full];
            for o in 0..outer {
                let dst = o * extent * inner + start * inner;
                let src = o * len * inner;
                gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no tensors given"))?;
        let rank = first.ndim();
        if axis >= rank {
            return Err(Error::shape("concat", format!("axis {axis} out of range")));
        }
        let mut axis_total = 0usize;
        for p in parts {
            if p.ndim() != rank
                || p.shape()[..axis] != first.shape()[..axis]
                || p.shape()[axis + 1..] != first.shape()[axis + 1..]
            {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} incompatible with {:?} on axis {axis}", p.shape(), first.shape()),
                ));
            }
            axis_total += p.shape()[axis];
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let mut shape = first.shape().to_vec();
        shape[axis] = axis_total;

        let mut out = vec![T::ZERO; outer * axis_total * inner];
        let mut offset = 0usize;
        let mut extents = Vec::with_capacity(parts.len());
        for p in parts {
            let e = p.shape()[axis];
            let d = p.data();
            for o in 0..outer {
                let dst = (o * axis_total + offset) * inner;
                let src = o * e * inner;
                out[dst..dst + e * inner].copy_from_slice(&d[src..src + e * inner]);
            }
            offset += e;
            extents.push(e);
        }

        Ok(Tensor::from_op(out, shape, parts, move |g| {
            let mut grads = Vec::with_capacity(extents.len());
            let mut offset = 0usize;
            for &e in &extents {
                let mut gp = vec![T::ZERO; outer * e * inner];
                for o in 0..outer {
                    let src = (o * axis_total + offset) * inner;
                    let dst = o * e * inner;
                    gp[dst..dst + e * inner].copy_from_slice(&g[src..src + e * inner]);
                }
                offset += e;
                grads.push(Some(gp));
            }
            grads
        }))
    }

    /// Flattens to rank 1.
    pub fn flatten(&self) -> Tensor<T> {
        self.reshape(&[self.numel()]).expect("numel preserved")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_2x2_known_product_and_grads() {
        let a = Tensor::param(vec![1.0f64, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::param(vec![5.0f64, 6.0, 7.0, 8.0], &[2, 2]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.to_vec(), vec![19.0, 22.0, 43.0, 50.0]);
        c.sum().backward().unwrap();
        // d(sum AB)/dA = 1·Bᵀ, row sums of B columns.
        assert_eq!(a.grad().unwrap(), vec![11.0, 15.0, 11.0, 15.0]);
        assert_eq!(b.grad().unwrap(), vec![4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn matmul_shared_rhs_sums_gradient_over_batch() {
        let a = Tensor::param(vec![1.0f64; 2 * 2 * 3], &[2, 2, 3]).unwrap();
        let w = Tensor::param(vec![0.5f64; 3 * 4], &[3, 4]).unwrap();
        let y = a.matmul(&w).unwrap();
        assert_eq!(y.shape(), &[2, 2, 4]);
        y.sum().backward().unwrap();
        // Each W element sees batch·m = 4 rows of ones.
        assert_eq!(w.grad().unwrap(), vec![4.0; 12]);
    }

    #[test]
    fn matmul_batched_rank3() {
        let a = Tensor::from_vec(vec![1.0f64, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 2.0], &[2, 2, 2])
            .unwrap();
        let b = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], &[2, 2, 2])
            .unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 10.0, 12.0, 14.0, 16.0]);
    }

    #[test]
    fn matmul_rejects_bad_inner_extent() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    #[allow(clippy::identity_op)] // index math spells out the strides
    fn permute_roundtrip_and_values() {
        let x = Tensor::param((0..24).map(|i| i as f64).collect(), &[2, 3, 4]).unwrap();
        let p = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        // p[a, b, c] = x[b, c, a]
        let pd = p.to_vec();
        assert_eq!(pd[0], 0.0); // x[0,0,0]
        assert_eq!(pd[1 * 6 + 1 * 3 + 2], x.to_vec()[1 * 12 + 2 * 4 + 1]); // p[1,1,2] = x[1,2,1]
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
        back.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 24]);
    }

    #[test]
    fn permute_rejects_non_permutation() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        assert!(x.permute(&[0, 0]).is_err());
        assert!(x.permute(&[0]).is_err());
    }

    #[test]
    fn narrow_concat_roundtrip() {
        let x = Tensor::param((0..12).map(|i| i as f64).collect(), &[3, 4]).unwrap();
        let left = x.narrow(1, 0, 2).unwrap();
        let right = x.narrow(1, 2, 2).unwrap();
        let glued = Tensor::concat(&[&left, &right], 1).unwrap();
        assert_eq!(glued.to_vec(), x.to_vec());
        glued.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 12]);
    }

    #[test]
    fn narrow_rejects_out_of_range() {
        let x = Tensor::<f64>::zeros(&[3, 4]);
        assert!(x.narrow(1, 3, 2).is_err());
        assert!(x.narrow(2, 0, 1).is_err());
    }

    #[test]
    fn concat_rejects_mismatched_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[3, 3]);
        assert!(Tensor::concat(&[&a, &b], 1).is_err());
        assert!(Tensor::concat(&[&a, &b], 0).is_ok());
    }

    #[test]
    fn reshape_preserves_data_and_grads() {
        let x = Tensor::param(vec![1.0f64, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let y = x.reshape(&[4]).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
        assert!(x.reshape(&[3]).is_err());
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }
}
