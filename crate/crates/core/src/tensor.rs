//! Dense row-major tensors and the numeric operations the engine is built on.
//!
//! Public operations validate shapes and reject non-finite results; the
//! forward and backward passes reuse the same slice kernels through thin
//! wrappers. All reductions accumulate left to right per output element, so
//! results are bit-reproducible for identical inputs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBase<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> TensorBase<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = element_count(shape).expect("shape overflow");
        TensorBase { shape: shape.to_vec(), data: vec![F::zero(); n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let n = element_count(shape)
            .ok_or_else(|| Error::Shape(format!("element count overflows: {shape:?}")))?;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(TensorBase { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[F] {
        assert_eq!(self.shape.len(), 2, "row() needs a 2-D tensor");
        let n = self.shape[1];
        &self.data[i * n..(i + 1) * n]
    }

    pub fn at(&self, i: usize, j: usize) -> F {
        assert_eq!(self.shape.len(), 2, "at() needs a 2-D tensor");
        self.data[i * self.shape[1] + j]
    }

    /// Converts element-wise; used to move between f32 experiments and f64
    /// oracles.
    pub fn cast<G: Scalar>(&self) -> TensorBase<G> {
        TensorBase {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| G::from_f64_(x.to_f64_())).collect(),
        }
    }
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

// ── public operations ───────────────────────────────────────────────────────

/// 2-D matrix product with left-to-right accumulation per output element.
pub fn matmul<F: Scalar>(a: &TensorBase<F>, b: &TensorBase<F>) -> Result<TensorBase<F>> {
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(Error::Shape(format!(
            "matmul needs 2-D operands, got {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions differ: lhs {:?} vs rhs {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = TensorBase::zeros(&[m, n]);
    kernels::matmul(&mut out.data, &a.data, &b.data, m, k, n);
    check_finite(&out, "matmul")?;
    Ok(out)
}

/// Numerically stable softmax of a 1-D tensor.
pub fn softmax<F: Scalar>(x: &TensorBase<F>) -> Result<TensorBase<F>> {
    if x.shape.len() != 1 || x.data.is_empty() {
        return Err(Error::Shape(format!(
            "softmax needs a non-empty 1-D tensor, got {:?}",
            x.shape
        )));
    }
    if !x.is_finite() {
        return Err(Error::Numeric("softmax: non-finite input".into()));
    }
    let mut out = x.clone();
    kernels::softmax(&mut out.data);
    check_finite(&out, "softmax")?;
    Ok(out)
}

/// Layer normalization of a 1-D tensor with learned gain and bias.
/// Uses the population variance.
pub fn layer_norm<F: Scalar>(
    x: &TensorBase<F>,
    gain: &TensorBase<F>,
    bias: &TensorBase<F>,
    eps: F,
) -> Result<TensorBase<F>> {
    if x.shape.len() != 1 || x.data.is_empty() {
        return Err(Error::Shape(format!(
            "layer_norm needs a non-empty 1-D tensor, got {:?}",
            x.shape
        )));
    }
    if gain.shape != x.shape || bias.shape != x.shape {
        return Err(Error::Shape(format!(
            "layer_norm parameter shapes {:?}/{:?} do not match input {:?}",
            gain.shape, bias.shape, x.shape
        )));
    }
    if eps < F::zero() {
        return Err(Error::Numeric("layer_norm: negative eps".into()));
    }
    let mut out = x.clone();
    kernels::layer_norm(&mut out.data, &gain.data, &bias.data, eps);
    check_finite(&out, "layer_norm")?;
    Ok(out)
}

/// Exact GELU: `x * Phi(x)` with the Gaussian CDF via the error function.
pub fn gelu<F: Scalar>(x: &TensorBase<F>) -> Result<TensorBase<F>> {
    let mut out = x.clone();
    for v in &mut out.data {
        *v = kernels::gelu_scalar(*v);
    }
    check_finite(&out, "gelu")?;
    Ok(out)
}

/// Cross entropy of a 1-D logit vector against a target index, computed in
/// log space so saturated logits do not overflow.
pub fn cross_entropy<F: Scalar>(logits: &TensorBase<F>, target: usize) -> Result<F> {
    if logits.shape.len() != 1 || logits.data.is_empty() {
        return Err(Error::Shape(format!(
            "cross_entropy needs a non-empty 1-D tensor, got {:?}",
            logits.shape
        )));
    }
    if target >= logits.data.len() {
        return Err(Error::Shape(format!(
            "cross_entropy target {} out of range for {} logits",
            target,
            logits.data.len()
        )));
    }
    if !logits.is_finite() {
        return Err(Error::Numeric("cross_entropy: non-finite input".into()));
    }
    let loss = kernels::log_sum_exp(&logits.data) - logits.data[target];
    if !loss.is_finite() {
        return Err(Error::Numeric("cross_entropy: non-finite result".into()));
    }
    Ok(loss)
}

fn check_finite<F: Scalar>(t: &TensorBase<F>, op: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{op}: non-finite result")))
    }
}

// ── slice kernels ───────────────────────────────────────────────────────────

/// Kernels shared by the public operations and the model's forward/backward
/// passes. They operate on raw row-major slices and keep a fixed accumulation
/// order.
pub(crate) mod kernels {
    use crate::scalar::Scalar;

    /// Rows per register tile in the blocked matmuls.
    const MR: usize = 6;
    /// Columns per register tile; two 8-lane vectors at f32.
    const NR: usize = 16;

    /// `out = a @ b`, `a` is `m x k`, `b` is `k x n`.
    ///
    /// Every output element is one fused-multiply-add chain in ascending-k
    /// order, so the value of each element is independent of the blocking
    /// below and of the shape remainders — results are deterministic and
    /// identical between the tiled fast path and the scalar tail paths.
    pub fn matmul<F: Scalar>(out: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(out.len(), m * n);
        for v in out.iter_mut() {
            *v = F::zero();
        }
        matmul_acc(out, a, b, m, k, n);
    }

    /// `out += a @ b` with the same per-element ordering as [`matmul`].
    ///
    /// Tiles of `MR x NR` output elements accumulate in registers, so each
    /// row of `b` loads once per row block instead of once per row.
    pub fn matmul_acc<F: Scalar>(out: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(out.len(), m * n);
        let mut i = 0;
        while i + MR <= m {
            let mut j = 0;
            while j + NR <= n {
                let mut acc = [[F::zero(); NR]; MR];
                for (r, accr) in acc.iter_mut().enumerate() {
                    let row = (i + r) * n + j;
                    accr.copy_from_slice(&out[row..row + NR]);
                }
                for kk in 0..k {
                    let brow = &b[kk * n + j..kk * n + j + NR];
                    for (r, accr) in acc.iter_mut().enumerate() {
                        let av = a[(i + r) * k + kk];
                        for (o, &bv) in accr.iter_mut().zip(brow) {
                            *o = av.mul_add(bv, *o);
                        }
                    }
                }
                for (r, accr) in acc.iter().enumerate() {
                    let row = (i + r) * n + j;
                    out[row..row + NR].copy_from_slice(accr);
                }
                j += NR;
            }
            if j < n {
                for r in 0..MR {
                    let row = i + r;
                    row_fma(&mut out[row * n..(row + 1) * n], &a[row * k..(row + 1) * k], b, n, j);
                }
            }
            i += MR;
        }
        while i < m {
            row_fma(&mut out[i * n..(i + 1) * n], &a[i * k..(i + 1) * k], b, n, 0);
            i += 1;
        }
    }

    /// One output row, columns `j0..`, accumulated in ascending-k order.
    fn row_fma<F: Scalar>(orow: &mut [F], arow: &[F], b: &[F], n: usize, j0: usize) {
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n + j0..(kk + 1) * n];
            for (o, &bv) in orow[j0..].iter_mut().zip(brow) {
                *o = av.mul_add(bv, *o);
            }
        }
    }

    /// `out = a^T @ b`, `a` is `k x m`, `b` is `k x n`.
    pub fn matmul_tn<F: Scalar>(out: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
        for v in out.iter_mut() {
            *v = F::zero();
        }
        matmul_tn_acc(out, a, b, m, k, n);
    }

    /// `out += a^T @ b`, `a` is `k x m`, `b` is `k x n`.
    ///
    /// Register tiles as in [`matmul_acc`]; the k-loop stays innermost so
    /// each output element keeps its ascending-k fused-multiply-add chain.
    pub fn matmul_tn_acc<F: Scalar>(out: &mut [F], a: &[F], b: &[F], m: usize, k: usize, n: usize) {
        debug_assert_eq!(a.len(), k * m);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(out.len(), m * n);
        let mut i = 0;
        while i + MR <= m {
            let mut j = 0;
            while j + NR <= n {
                let mut acc = [[F::zero(); NR]; MR];
                for (r, accr) in acc.iter_mut().enumerate() {
                    let row = (i + r) * n + j;
                    accr.copy_from_slice(&out[row..row + NR]);
                }
                for kk in 0..k {
                    let brow = &b[kk * n + j..kk * n + j + NR];
                    for (r, accr) in acc.iter_mut().enumerate() {
                        let av = a[kk * m + i + r];
                        for (o, &bv) in accr.iter_mut().zip(brow) {
                            *o = av.mul_add(bv, *o);
                        }
                    }
                }
                for (r, accr) in acc.iter().enumerate() {
                    let row = (i + r) * n + j;
                    out[row..row + NR].copy_from_slice(accr);
                }
                j += NR;
            }
            if j < n {
                for kk in 0..k {
                    for r in 0..MR {
                        let av = a[kk * m + i + r];
                        let orow = &mut out[(i + r) * n..(i + r + 1) * n];
                        for (o, &bv) in orow[j..].iter_mut().zip(&b[kk * n + j..(kk + 1) * n]) {
                            *o = av.mul_add(bv, *o);
                        }
                    }
                }
            }
            i += MR;
        }
        if i < m {
            for kk in 0..k {
                let brow = &b[kk * n..(kk + 1) * n];
                for r in i..m {
                    let av = a[kk * m + r];
                    let orow = &mut out[r * n..(r + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o = av.mul_add(bv, *o);
                    }
                }
            }
        }
    }

    /// Dot product with eight independent fused-multiply-add accumulators so
    /// the reduction has no loop-carried dependency (the compiler can
    /// vectorize it). The summation order differs from a naive left-to-right
    /// loop but is fixed, so results stay deterministic.
    pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = [F::zero(); 8];
        let chunks = a.len() / 8;
        for c in 0..chunks {
            let av = &a[c * 8..c * 8 + 8];
            let bv = &b[c * 8..c * 8 + 8];
            for j in 0..8 {
                acc[j] = av[j].mul_add(bv[j], acc[j]);
            }
        }
        let mut tail = F::zero();
        for i in chunks * 8..a.len() {
            tail = a[i].mul_add(b[i], tail);
        }
        ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
    }

    /// `out += s * v`, fused per element.
    pub fn axpy<F: Scalar>(out: &mut [F], s: F, v: &[F]) {
        debug_assert_eq!(out.len(), v.len());
        for (o, &x) in out.iter_mut().zip(v) {
            *o = s.mul_add(x, *o);
        }
    }

    /// Copies one head's stripe of a `[len, d_model]` buffer into a packed
    /// `[len, head_dim]` buffer so the attention matmuls see contiguous rows.
    pub fn pack_head<F: Scalar>(
        packed: &mut [F],
        full: &[F],
        len: usize,
        d: usize,
        off: usize,
        dh: usize,
    ) {
        debug_assert_eq!(packed.len(), len * dh);
        debug_assert_eq!(full.len(), len * d);
        for t in 0..len {
            packed[t * dh..(t + 1) * dh].copy_from_slice(&full[t * d + off..t * d + off + dh]);
        }
    }

    /// As [`pack_head`], but transposed: the packed buffer is
    /// `[head_dim, len]`, ready to be the right operand of a matmul.
    pub fn pack_head_t<F: Scalar>(
        packed: &mut [F],
        full: &[F],
        len: usize,
        d: usize,
        off: usize,
        dh: usize,
    ) {
        debug_assert_eq!(packed.len(), len * dh);
        debug_assert_eq!(full.len(), len * d);
        for t in 0..len {
            for c in 0..dh {
                packed[c * len + t] = full[t * d + off + c];
            }
        }
    }

    /// `dst = src^T`; `src` is `rows x cols`, `dst` is `cols x rows`.
    pub fn transpose<F: Scalar>(dst: &mut [F], src: &[F], rows: usize, cols: usize) {
        debug_assert_eq!(dst.len(), rows * cols);
        debug_assert_eq!(src.len(), rows * cols);
        for r in 0..rows {
            for (c, &v) in src[r * cols..(r + 1) * cols].iter().enumerate() {
                dst[c * rows + r] = v;
            }
        }
    }

    /// In-place stable softmax over a slice.
    pub fn softmax<F: Scalar>(x: &mut [F]) {
        let mut max = x[0];
        for &v in x.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = F::zero();
        for v in x.iter_mut() {
            *v = (*v - max).exp_();
            sum += *v;
        }
        for v in x.iter_mut() {
            *v = *v / sum;
        }
    }

    pub fn log_sum_exp<F: Scalar>(x: &[F]) -> F {
        let mut max = x[0];
        for &v in x.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = F::zero();
        for &v in x.iter() {
            sum += (v - max).exp_();
        }
        max + sum.ln_()
    }

    /// In-place layer norm over one row, population variance.
    pub fn layer_norm<F: Scalar>(x: &mut [F], gain: &[F], bias: &[F], eps: F) {
        let n = F::from_f64_(x.len() as f64);
        let mut mean = F::zero();
        for &v in x.iter() {
            mean += v;
        }
        mean = mean / n;
        let mut var = F::zero();
        for &v in x.iter() {
            let d = v - mean;
            var += d * d;
        }
        var = var / n;
        let inv = (var + eps).sqrt().recip();
        for (v, (&g, &b)) in x.iter_mut().zip(gain.iter().zip(bias)) {
            *v = (*v - mean) * inv * g + b;
        }
    }

    pub fn gelu_scalar<F: Scalar>(x: F) -> F {
        let half = F::from_f64_(0.5);
        let inv_sqrt2 = F::from_f64_(std::f64::consts::FRAC_1_SQRT_2);
        x * half * (F::one() + (x * inv_sqrt2).erf_())
    }

    /// Derivative of GELU: `Phi(x) + x * phi(x)`.
    pub fn gelu_grad_scalar<F: Scalar>(x: F) -> F {
        let half = F::from_f64_(0.5);
        let inv_sqrt2 = F::from_f64_(std::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi = F::from_f64_(0.3989422804014327);
        let phi_cdf = half * (F::one() + (x * inv_sqrt2).erf_());
        let pdf = inv_sqrt_2pi * (-(x * x) * half).exp_();
        phi_cdf + x * pdf
    }
}
