//! Max pooling with window 2, stride 2.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

impl<T: Scalar> Tensor<T> {
    /// Halves `axis` by taking pairwise maxima (window 2, stride 2). An odd
    /// trailing element is dropped (floor semantics); on ties the earlier
    /// element wins and receives the gradient.
    pub fn maxpool_half(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() {
            return Err(Error::shape("maxpool_half", format!("axis {axis} out of range")));
        }
        let extent = self.shape()[axis];
        if extent < 2 {
            return Err(Error::shape(
                "maxpool_half",
                format!("axis {axis} extent {extent} < 2 cannot be pooled"),
            ));
        }
        let out_extent = extent / 2;
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();

        let mut out = vec![T::ZERO; outer * out_extent * inner];
        let mut argmax = vec![0usize; out.len()];
        {
            let d = self.data();
            for o in 0..outer {
                for t in 0..out_extent {
                    for i in 0..inner {
                        let a = (o * extent + 2 * t) * inner + i;
                        let b = a + inner;
                        let dst = (o * out_extent + t) * inner + i;
                        // `>` keeps the earlier element on ties.
                        if d[b] > d[a] {
                            out[dst] = d[b];
                            argmax[dst] = b;
                        } else {
                            out[dst] = d[a];
                            argmax[dst] = a;
                        }
                    }
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = out_extent;
        let in_numel = self.numel();
        Ok(Tensor::from_op(out, shape, &[self], move |g| {
            let mut gx = vec![T::ZERO; in_numel];
            for (gi, &src) in g.iter().zip(&argmax) {
                gx[src] += *gi;
            }
            vec![Some(gx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_maxima_with_floor() {
        let x = Tensor::from_vec(vec![1.0f64, 5.0, 2.0, 2.0, 9.0, 3.0, 4.0], &[7]).unwrap();
        let y = x.maxpool_half(0).unwrap();
        // Length 7 floors to 3; the trailing 4.0 is dropped.
        assert_eq!(y.to_vec(), vec![5.0, 2.0, 9.0]);
    }

    #[test]
    fn gradient_routes_to_argmax_and_first_on_ties() {
        let x = Tensor::param(vec![1.0f64, 5.0, 7.0, 7.0], &[4]).unwrap();
        let y = x.maxpool_half(0).unwrap();
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn pools_interior_axis() {
        // [2, 4] pooled on axis 1 -> [2, 2]
        let x = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, 4.0, 8.0, 7.0, 6.0, 5.0], &[2, 4])
            .unwrap();
        let y = x.maxpool_half(1).unwrap();
        assert_eq!(y.shape(), &[2, 2]);
        assert_eq!(y.to_vec(), vec![2.0, 4.0, 8.0, 6.0]);
    }

    #[test]
    fn rejects_axis_too_short() {
        let x = Tensor::<f64>::zeros(&[1, 3]);
        assert!(x.maxpool_half(0).is_err());
    }
}
