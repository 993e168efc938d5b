//! Dense row-major f64 tensors and the small GEMM kernel the layer
//! implementations are built on.

use crate::error::{Error, Result};

/// Dense n-dimensional real array, row-major, 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::Dimension(format!("zero extent in shape {shape:?}")));
        }
        if data.len() != n {
            return Err(Error::Dimension(format!(
                "data length {} does not match shape {:?} (product {})",
                data.len(),
                shape,
                n
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    /// All-zero vector with a 1 at `index`.
    pub fn one_hot(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::Argument(format!("one-hot index {index} out of range {len}")));
        }
        let mut data = vec![0.0; len];
        data[index] = 1.0;
        Ok(Tensor { shape: vec![len], data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Reinterpret without copying; element count must be preserved.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("non-finite value in {what}")))
        }
    }
}

/// C[m,n] = A[m,k] * B[k,n] (+ C when `accumulate`), all row-major.
///
/// k-blocked so the active slab of B stays cache-resident; the inner loop is
/// an axpy over contiguous rows, which the compiler vectorizes.
pub fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if !accumulate {
        c.fill(0.0);
    }
    const KB: usize = 128;
    let mut k0 = 0;
    while k0 < k {
        let k1 = (k0 + KB).min(k);
        for i in 0..m {
            let a_row = &a[i * k..(i + 1) * k];
            let c_row = &mut c[i * n..(i + 1) * n];
            // Four B rows per pass: one load+store of the C row serves
            // four multiply-adds, which the single-row axpy cannot do.
            let mut kk = k0;
            while kk + 4 <= k1 {
                let (a0, a1, a2, a3) = (a_row[kk], a_row[kk + 1], a_row[kk + 2], a_row[kk + 3]);
                if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0 {
                    kk += 4;
                    continue;
                }
                let (b0, rest) = b[kk * n..(kk + 4) * n].split_at(n);
                let (b1, rest) = rest.split_at(n);
                let (b2, b3) = rest.split_at(n);
                for ((((cj, &b0j), &b1j), &b2j), &b3j) in
                    c_row.iter_mut().zip(b0).zip(b1).zip(b2).zip(b3)
                {
                    *cj += a0 * b0j + a1 * b1j + a2 * b2j + a3 * b3j;
                }
                kk += 4;
            }
            while kk < k1 {
                let aik = a_row[kk];
                if aik != 0.0 {
                    let b_row = &b[kk * n..(kk + 1) * n];
                    for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                        *cj += aik * bj;
                    }
                }
                kk += 1;
            }
        }
        k0 = k1;
    }
}

/// C[m,n] = A^T * B where A is [k,m] row-major and B is [k,n] row-major.
pub fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if !accumulate {
        c.fill(0.0);
    }
    let mut kk = 0;
    while kk + 4 <= k {
        let (b0, rest) = b[kk * n..(kk + 4) * n].split_at(n);
        let (b1, rest) = rest.split_at(n);
        let (b2, b3) = rest.split_at(n);
        for i in 0..m {
            let (a0, a1, a2, a3) =
                (a[kk * m + i], a[(kk + 1) * m + i], a[(kk + 2) * m + i], a[(kk + 3) * m + i]);
            if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for ((((cj, &b0j), &b1j), &b2j), &b3j) in
                c_row.iter_mut().zip(b0).zip(b1).zip(b2).zip(b3)
            {
                *cj += a0 * b0j + a1 * b1j + a2 * b2j + a3 * b3j;
            }
        }
        kk += 4;
    }
    while kk < k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for i in 0..m {
            let aki = a_row[i];
            if aki == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aki * bj;
            }
        }
        kk += 1;
    }
}

/// C[m,n] = A[m,k] * B^T where B is [n,k] row-major.
pub fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if !accumulate {
        c.fill(0.0);
    }
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            // Eight accumulator chains keep the dot product from being
            // serialized on floating-point add latency.
            let mut acc = [0.0f64; 8];
            let mut ac = a_row.chunks_exact(8);
            let mut bc = b_row.chunks_exact(8);
            for (av, bv) in (&mut ac).zip(&mut bc) {
                for l in 0..8 {
                    acc[l] += av[l] * bv[l];
                }
            }
            let mut tail = 0.0;
            for (&av, &bv) in ac.remainder().iter().zip(bc.remainder()) {
                tail += av * bv;
            }
            let s = ((acc[0] + acc[1]) + (acc[2] + acc[3]))
                + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
            c_row[j] += s + tail;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    c[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let (m, k, n) = (7, 11, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let want = naive(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        gemm_nn(&a, &b, &mut c, m, k, n, false);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // A^T layout: store a as [k,m]
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for kk in 0..k {
                at[kk * m + i] = a[i * k + kk];
            }
        }
        let mut c2 = vec![0.0; m * n];
        gemm_tn(&at, &b, &mut c2, m, k, n, false);
        for (x, y) in c2.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // B^T layout: store b as [n,k]
        let mut bt = vec![0.0; n * k];
        for kk in 0..k {
            for j in 0..n {
                bt[j * k + kk] = b[kk * n + j];
            }
        }
        let mut c3 = vec![1.0; m * n];
        gemm_nt(&a, &bt, &mut c3, m, k, n, true);
        for (x, y) in c3.iter().zip(&want) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_shape_checks() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        let t = Tensor::zeros(vec![2, 3]);
        assert!(t.clone().reshape(vec![6]).is_ok());
        assert!(t.reshape(vec![4]).is_err());
    }

    #[test]
    fn one_hot_basics() {
        let t = Tensor::one_hot(4, 2).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 1.0, 0.0]);
        assert!(Tensor::one_hot(4, 4).is_err());
    }
}
