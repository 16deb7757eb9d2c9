//! Dense float64 tensors and the small set of differentiable layers the
//! quality model is assembled from.
//!
//! Layout is always N×H×W×C, row-major, channels innermost.

mod adam;
mod gradcheck;
mod layers;
mod loss;
mod stack;

pub use adam::{AdamState, ParamTensor, ParamTensorMut, Parameters};
pub use gradcheck::{grad_check, GradCheckable, LayerFragment, DEFAULT_EPS};
pub use layers::{init_params, layer_backward, layer_forward, LayerCache, LayerParams, LayerSpec};
pub use loss::{l2_penalty, loss_mse_l2, LossValue};
pub use stack::Stack;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        let len = shape.iter().product();
        Self {
            n: shape[0],
            h: shape[1],
            w: shape[2],
            c: shape[3],
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            n: shape[0],
            h: shape[1],
            w: shape[2],
            c: shape[3],
            data,
        })
    }

    /// Flat vector of `len` units as a single `1×1×1×len` item.
    pub fn vector(data: Vec<f64>) -> Self {
        let len = data.len();
        Self {
            n: 1,
            h: 1,
            w: 1,
            c: len,
            data,
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements per item (`h·w·c`).
    pub fn item_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, y: usize, x: usize, ch: usize) -> usize {
        ((n * self.h + y) * self.w + x) * self.c + ch
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize, ch: usize) -> f64 {
        self.data[self.offset(n, y, x, ch)]
    }

    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(self, shape: [usize; 4]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// Selects items by index along the first axis, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let len = self.item_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            if i >= self.n {
                return Err(Error::Dimension(format!("item {i} out of range {}", self.n)));
            }
            data.extend_from_slice(self.item(i));
        }
        Self::from_vec([indices.len(), self.h, self.w, self.c], data)
    }

    /// Concatenates along the first axis; all parts must share `h, w, c`.
    pub fn concat(parts: &[&Tensor4]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let [_, h, w, c] = first.shape();
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.h != h || p.w != w || p.c != c {
                return Err(Error::Dimension(format!(
                    "concat mismatch {:?} vs {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
            n += p.n;
            data.extend_from_slice(&p.data);
        }
        Self::from_vec([n, h, w, c], data)
    }

    /// Splits along the first axis into chunks of the given item counts.
    pub fn split(&self, counts: &[usize]) -> Result<Vec<Tensor4>> {
        if counts.iter().sum::<usize>() != self.n {
            return Err(Error::Dimension(format!(
                "split counts {counts:?} do not sum to {}",
                self.n
            )));
        }
        let len = self.item_len();
        let mut start = 0;
        counts
            .iter()
            .map(|&k| {
                let t = Self::from_vec(
                    [k, self.h, self.w, self.c],
                    self.data[start * len..(start + k) * len].to_vec(),
                );
                start += k;
                t
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// `c = a·b + beta·c` for row-major `a: m×k`, `b: k×n`, `c: m×n`, with
/// optional transposition of `a` (stored `k×m`) or `b` (stored `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted slice lengths cover every index reachable from
    // the given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor4::from_vec([1, 2, 2, 1], vec![0.0; 3]).is_err());
        let t = Tensor4::from_vec([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at(0, 1, 0, 0), 3.0);
    }

    #[test]
    fn split_and_concat_are_inverse() {
        let t = Tensor4::from_vec([3, 1, 1, 2], (0..6).map(f64::from).collect()).unwrap();
        let parts = t.split(&[1, 2]).unwrap();
        let back = Tensor4::concat(&[&parts[0], &parts[1]]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
