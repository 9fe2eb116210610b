//! Exact softmax attention with and without a trainable prefix.
//!
//! Attention is full (no causal mask) and every exponent is scaled by
//! `1/√d`. With prefix rows `P` the keys and values come from the stacked
//! sequence `S = [P; X]`, prefix first, while queries come from `X` only.

use alloc::vec;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::matrix::{dot, row_softmax, DenseMatrix};

/// Frozen attention projections plus a trainable prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixModel {
    pub w_q: DenseMatrix,
    pub w_k: DenseMatrix,
    pub w_v: DenseMatrix,
    /// `m × d`; zero rows means no prefix.
    pub prefix_p: DenseMatrix,
}

impl PrefixModel {
    pub fn new(
        w_q: DenseMatrix,
        w_k: DenseMatrix,
        w_v: DenseMatrix,
        prefix_p: DenseMatrix,
    ) -> Result<Self> {
        let d = w_q.rows();
        for (name, w) in [("w_q", &w_q), ("w_k", &w_k), ("w_v", &w_v)] {
            if w.shape() != (d, d) {
                return Err(shape_err!("{name} is {}x{}, expected {d}x{d}", w.rows(), w.cols()));
            }
        }
        if prefix_p.cols() != d && prefix_p.rows() != 0 {
            return Err(shape_err!("prefix has {} columns, expected {d}", prefix_p.cols()));
        }
        let prefix_p = if prefix_p.rows() == 0 { DenseMatrix::zeros(0, d) } else { prefix_p };
        Ok(Self { w_q, w_k, w_v, prefix_p })
    }

    pub fn d(&self) -> usize {
        self.w_q.rows()
    }

    /// Prefix length.
    pub fn m(&self) -> usize {
        self.prefix_p.rows()
    }

    /// `(K_C, V_C) = (P W_K, P W_V)`.
    pub fn prefix_keys_values(&self) -> Result<(DenseMatrix, DenseMatrix)> {
        Ok((self.prefix_p.matmul(&self.w_k)?, self.prefix_p.matmul(&self.w_v)?))
    }

    pub(crate) fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.d() {
            return Err(shape_err!("input has {} columns, model dimension is {}", x.cols(), self.d()));
        }
        Ok(())
    }
}

/// `1/√d`, the exponent scale shared by every attention variant.
pub fn inv_sqrt_d(d: usize) -> f64 {
    1.0 / math::sqrt(d as f64)
}

/// `Softmax(Q Kᵀ/√d) V` for already projected queries, keys and values.
pub fn softmax_attention(q: &DenseMatrix, k: &DenseMatrix, v: &DenseMatrix) -> Result<DenseMatrix> {
    if k.rows() != v.rows() {
        return Err(shape_err!("{} keys but {} values", k.rows(), v.rows()));
    }
    let scores = q.matmul_transposed(k)?.scale(inv_sqrt_d(q.cols()));
    row_softmax(&scores).matmul(v)
}

/// Attention over the input alone.
pub fn vanilla_attention(model: &PrefixModel, x: &DenseMatrix) -> Result<DenseMatrix> {
    model.check_input(x)?;
    attend_over(model, x, x)
}

/// Attention whose keys and values come from `[P; X]`.
pub fn prefix_attention(model: &PrefixModel, x: &DenseMatrix) -> Result<DenseMatrix> {
    model.check_input(x)?;
    let stacked = model.prefix_p.vstack(x)?;
    attend_over(model, x, &stacked)
}

fn attend_over(model: &PrefixModel, x: &DenseMatrix, source: &DenseMatrix) -> Result<DenseMatrix> {
    let q = x.matmul(&model.w_q)?;
    let k = source.matmul(&model.w_k)?;
    let v = source.matmul(&model.w_v)?;
    softmax_attention(&q, &k, &v)
}

/// Prefix attention computed as separate input and prefix sums.
///
/// Row `i` is
/// `[exp(QᵢKᵀ/√d)V + exp(QᵢK_Cᵀ/√d)V_C] / [exp(QᵢKᵀ/√d)1 + exp(QᵢK_Cᵀ/√d)1]`,
/// with numerator and denominator sharing one per-row shift.
pub fn prefix_attention_decomposed(model: &PrefixModel, x: &DenseMatrix) -> Result<DenseMatrix> {
    model.check_input(x)?;
    let q = x.matmul(&model.w_q)?;
    let k = x.matmul(&model.w_k)?;
    let v = x.matmul(&model.w_v)?;
    let (kc, vc) = model.prefix_keys_values()?;
    decomposed_rows(&q, &k, &v, &kc, &vc)
}

/// Shared by the decomposed reference and the exact-correction NTK path.
pub(crate) fn decomposed_rows(
    q: &DenseMatrix,
    k: &DenseMatrix,
    v: &DenseMatrix,
    kc: &DenseMatrix,
    vc: &DenseMatrix,
) -> Result<DenseMatrix> {
    let d = q.cols();
    let scale = inv_sqrt_d(d);
    let mut out = DenseMatrix::zeros(q.rows(), v.cols());
    let mut input_scores = vec![0.0; k.rows()];
    let mut prefix_scores = vec![0.0; kc.rows()];
    for i in 0..q.rows() {
        let qi = q.row(i);
        for (s, kj) in input_scores.iter_mut().zip(k.row_iter()) {
            *s = dot(qi, kj) * scale;
        }
        for (s, kj) in prefix_scores.iter_mut().zip(kc.row_iter()) {
            *s = dot(qi, kj) * scale;
        }
        let shift = input_scores
            .iter()
            .chain(&prefix_scores)
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let row = out.row_mut(i);
        let mut input_den = 0.0;
        for (&s, vj) in input_scores.iter().zip(v.row_iter()) {
            let w = math::exp(s - shift);
            input_den += w;
            for (o, &vv) in row.iter_mut().zip(vj) {
                *o += w * vv;
            }
        }
        let mut prefix_den = 0.0;
        let mut prefix_num = vec![0.0; v.cols()];
        for (&s, vj) in prefix_scores.iter().zip(vc.row_iter()) {
            let w = math::exp(s - shift);
            prefix_den += w;
            for (o, &vv) in prefix_num.iter_mut().zip(vj) {
                *o += w * vv;
            }
        }
        let den = input_den + prefix_den;
        if !(den > 0.0) {
            return Err(Error::Numerical(alloc::format!("row {i}: attention denominator {den}")));
        }
        for (o, p) in row.iter_mut().zip(&prefix_num) {
            *o = (*o + p) / den;
        }
    }
    Ok(out)
}
