//! NTK-Attention: a prefix compressed into a trainable pair `(Z, k)`.
//!
//! With `K_C = P W_K`, `V_C = P W_V` and a feature lift `φ`,
//!
//! ```text
//! Z = Σ_j φ(K_C,j) V_C,jᵀ        (r × d)
//! k = Σ_j φ(K_C,j)               (r)
//! T = D̂⁻¹ (Â V + Φ(Q) Z),   D̂ = diag(Â 1 + Φ(Q) k),   Â = exp(Q Kᵀ/√d)
//! ```
//!
//! The forward pass never touches the prefix, so its cost does not depend
//! on the prefix length `m` that produced `(Z, k)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{inv_sqrt_d, PrefixModel};
use crate::error::{shape_err, Error, Result};
use crate::feature_map::{apply_feature_map_rows, phi, FeatureMapSpec};
use crate::math;
use crate::matrix::{dot, DenseMatrix};

/// Frozen projections plus the trainable compressed prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct NtkAttnModel {
    pub w_q: DenseMatrix,
    pub w_k: DenseMatrix,
    pub w_v: DenseMatrix,
    /// `r × d`.
    pub z: DenseMatrix,
    /// Length `r`.
    pub k_vec: Vec<f64>,
    pub feature_map: FeatureMapSpec,
}

impl NtkAttnModel {
    pub fn new(
        w_q: DenseMatrix,
        w_k: DenseMatrix,
        w_v: DenseMatrix,
        z: DenseMatrix,
        k_vec: Vec<f64>,
        feature_map: FeatureMapSpec,
    ) -> Result<Self> {
        let d = w_q.rows();
        for (name, w) in [("w_q", &w_q), ("w_k", &w_k), ("w_v", &w_v)] {
            if w.shape() != (d, d) {
                return Err(shape_err!("{name} is {}x{}, expected {d}x{d}", w.rows(), w.cols()));
            }
        }
        if feature_map.d != d {
            return Err(shape_err!("feature map dimension {} but model dimension {d}", feature_map.d));
        }
        let r = feature_map.output_dim()?;
        if z.shape() != (r, d) {
            return Err(shape_err!("Z is {}x{}, expected {r}x{d}", z.rows(), z.cols()));
        }
        if k_vec.len() != r {
            return Err(shape_err!("k has length {}, expected {r}", k_vec.len()));
        }
        Ok(Self { w_q, w_k, w_v, z, k_vec, feature_map })
    }

    /// A model whose correction terms vanish.
    pub fn zero_correction(w_q: DenseMatrix, w_k: DenseMatrix, w_v: DenseMatrix, feature_map: FeatureMapSpec) -> Result<Self> {
        let r = feature_map.output_dim()?;
        let d = w_q.rows();
        Self::new(w_q, w_k, w_v, DenseMatrix::zeros(r, d), vec![0.0; r], feature_map)
    }

    pub fn d(&self) -> usize {
        self.w_q.rows()
    }

    pub fn r(&self) -> usize {
        self.k_vec.len()
    }

    /// One gradient step `Z ← Z − η g_Z`, `k ← k − η g_k`.
    pub fn apply_update(&mut self, g_z: &DenseMatrix, g_k: &[f64], eta: f64) -> Result<()> {
        if g_z.shape() != self.z.shape() || g_k.len() != self.k_vec.len() {
            return Err(shape_err!("gradient shapes do not match (Z, k)"));
        }
        for (z, g) in self.z.data_mut().iter_mut().zip(g_z.data()) {
            *z -= eta * g;
        }
        for (k, g) in self.k_vec.iter_mut().zip(g_k) {
            *k -= eta * g;
        }
        Ok(())
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.d() {
            return Err(shape_err!("input has {} columns, model dimension is {}", x.cols(), self.d()));
        }
        Ok(())
    }
}

/// Compresses the prefix of `model` into `(Z, k)` under the lift `spec`.
pub fn compress_prefix(model: &PrefixModel, spec: &FeatureMapSpec) -> Result<NtkAttnModel> {
    let d = model.d();
    if spec.d != d {
        return Err(shape_err!("feature map dimension {} but model dimension {d}", spec.d));
    }
    let r = spec.output_dim()?;
    let (kc, vc) = model.prefix_keys_values()?;
    let mut z = DenseMatrix::try_zeros(r, d)?;
    let mut k_vec = vec![0.0; r];
    for (key, value) in kc.row_iter().zip(vc.row_iter()) {
        let f = phi(key, spec)?;
        for (t, &ft) in f.iter().enumerate() {
            k_vec[t] += ft;
            for (zz, &v) in z.row_mut(t).iter_mut().zip(value) {
                *zz += ft * v;
            }
        }
    }
    NtkAttnModel::new(model.w_q.clone(), model.w_k.clone(), model.w_v.clone(), z, k_vec, *spec)
}

/// Source of the prefix contribution to one attention row.
trait PrefixCorrection {
    /// Largest log-weight the correction contributes, if it has exponentials.
    fn max_log_weight(&self, row: usize) -> Option<f64>;
    /// Adds `e^{-shift}·(numerator, denominator)` of the correction for `row`.
    fn accumulate(&self, row: usize, shift: f64, num: &mut [f64], den: &mut f64);
}

struct FeatureCorrection<'a> {
    phi_q: &'a DenseMatrix,
    z: &'a DenseMatrix,
    k_vec: &'a [f64],
}

impl PrefixCorrection for FeatureCorrection<'_> {
    fn max_log_weight(&self, _row: usize) -> Option<f64> {
        None
    }

    fn accumulate(&self, row: usize, shift: f64, num: &mut [f64], den: &mut f64) {
        let f = self.phi_q.row(row);
        let scale = math::exp(-shift);
        let mut corr = vec![0.0; num.len()];
        for (&ft, zt) in f.iter().zip(self.z.row_iter()) {
            for (c, &zz) in corr.iter_mut().zip(zt) {
                *c += ft * zz;
            }
        }
        for (n, c) in num.iter_mut().zip(&corr) {
            *n += scale * c;
        }
        *den += scale * dot(f, self.k_vec);
    }
}

/// `exp(Q K_Cᵀ/√d) V_C` and `exp(Q K_Cᵀ/√d) 1`: what the features approximate.
struct ExactCorrection {
    prefix_scores: DenseMatrix,
    vc: DenseMatrix,
}

impl PrefixCorrection for ExactCorrection {
    fn max_log_weight(&self, row: usize) -> Option<f64> {
        self.prefix_scores.row(row).iter().copied().reduce(f64::max)
    }

    fn accumulate(&self, row: usize, shift: f64, num: &mut [f64], den: &mut f64) {
        let mut corr = vec![0.0; num.len()];
        let mut total = 0.0;
        for (&s, v) in self.prefix_scores.row(row).iter().zip(self.vc.row_iter()) {
            let w = math::exp(s - shift);
            total += w;
            for (c, &vv) in corr.iter_mut().zip(v) {
                *c += w * vv;
            }
        }
        for (n, c) in num.iter_mut().zip(&corr) {
            *n += c;
        }
        *den += total;
    }
}

/// Output rows plus `1/D̂ᵢ` per row (the unshifted inverse denominator).
struct ForwardPass {
    out: DenseMatrix,
    inv_den: Vec<f64>,
}

fn corrected_forward(
    q: &DenseMatrix,
    k: &DenseMatrix,
    v: &DenseMatrix,
    correction: &dyn PrefixCorrection,
) -> Result<ForwardPass> {
    let scale = inv_sqrt_d(q.cols());
    let dv = v.cols();
    let mut out = DenseMatrix::zeros(q.rows(), dv);
    let mut inv_den = vec![0.0; q.rows()];
    let mut scores = vec![0.0; k.rows()];
    for i in 0..q.rows() {
        let qi = q.row(i);
        for (s, kj) in scores.iter_mut().zip(k.row_iter()) {
            *s = dot(qi, kj) * scale;
        }
        let input_max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shift = match correction.max_log_weight(i) {
            Some(c) => input_max.max(c),
            None => input_max,
        };
        let mut num = vec![0.0; dv];
        let mut den = 0.0;
        for (&s, vj) in scores.iter().zip(v.row_iter()) {
            let w = math::exp(s - shift);
            den += w;
            for (n, &vv) in num.iter_mut().zip(vj) {
                *n += w * vv;
            }
        }
        correction.accumulate(i, shift, &mut num, &mut den);
        // guard the unshifted denominator: D̂ᵢ = e^{shift}·den must exceed 1e-300
        if !(den > 1e-300 * math::exp(-shift)) || !den.is_finite() {
            return Err(Error::Numerical(alloc::format!(
                "row {i}: NTK-Attention denominator is not positive ({:e})",
                den * math::exp(shift)
            )));
        }
        for (o, n) in out.row_mut(i).iter_mut().zip(&num) {
            *o = n / den;
        }
        inv_den[i] = math::exp(-shift) / den;
    }
    Ok(ForwardPass { out, inv_den })
}

fn project(model: &NtkAttnModel, x: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix)> {
    Ok((x.matmul(&model.w_q)?, x.matmul(&model.w_k)?, x.matmul(&model.w_v)?))
}

/// `T = D̂⁻¹(ÂV + Φ(Q)Z)`.
pub fn ntk_attention_forward(model: &NtkAttnModel, x: &DenseMatrix) -> Result<DenseMatrix> {
    model.check_input(x)?;
    let (q, k, v) = project(model, x)?;
    let phi_q = apply_feature_map_rows(&q, &model.feature_map)?;
    let correction = FeatureCorrection { phi_q: &phi_q, z: &model.z, k_vec: &model.k_vec };
    Ok(corrected_forward(&q, &k, &v, &correction)?.out)
}

/// The NTK-Attention forward pass with the exact prefix terms
/// `exp(QK_Cᵀ/√d)V_C` and `exp(QK_Cᵀ/√d)1_m` in place of `Φ(Q)Z` and `Φ(Q)k`.
///
/// Algebraically identical to prefix attention; used as a reference that
/// isolates the forward machinery from feature-map quality.
pub fn exact_correction_forward(model: &PrefixModel, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols() != model.d() {
        return Err(shape_err!("input has {} columns, model dimension is {}", x.cols(), model.d()));
    }
    let q = x.matmul(&model.w_q)?;
    let k = x.matmul(&model.w_k)?;
    let v = x.matmul(&model.w_v)?;
    let (kc, vc) = model.prefix_keys_values()?;
    let prefix_scores = q.matmul_transposed(&kc)?.scale(inv_sqrt_d(model.d()));
    let correction = ExactCorrection { prefix_scores, vc };
    Ok(corrected_forward(&q, &k, &v, &correction)?.out)
}

/// Gradients of `⟨upstream, T⟩` with respect to `Z` and `k`.
///
/// Row `i` of `T` is `Nᵢ/Dᵢ` with `Nᵢ` affine in `Z` and `Dᵢ` affine in `k`, so
/// `∂/∂Z = Σᵢ φ(Qᵢ) Uᵢᵀ / Dᵢ` and `∂/∂k = −Σᵢ φ(Qᵢ) ⟨Uᵢ, Tᵢ⟩ / Dᵢ`.
pub fn ntk_attention_grad_zk(
    model: &NtkAttnModel,
    x: &DenseMatrix,
    upstream: &DenseMatrix,
) -> Result<(DenseMatrix, Vec<f64>)> {
    model.check_input(x)?;
    if upstream.shape() != (x.rows(), model.d()) {
        return Err(shape_err!(
            "upstream is {}x{}, expected {}x{}",
            upstream.rows(),
            upstream.cols(),
            x.rows(),
            model.d()
        ));
    }
    let (q, k, v) = project(model, x)?;
    let phi_q = apply_feature_map_rows(&q, &model.feature_map)?;
    let correction = FeatureCorrection { phi_q: &phi_q, z: &model.z, k_vec: &model.k_vec };
    let pass = corrected_forward(&q, &k, &v, &correction)?;

    let mut g_z = DenseMatrix::zeros(model.r(), model.d());
    let mut g_k = vec![0.0; model.r()];
    for i in 0..x.rows() {
        let u = upstream.row(i);
        let w = pass.inv_den[i];
        let ut = dot(u, pass.out.row(i));
        for (t, &ft) in phi_q.row(i).iter().enumerate() {
            let a = ft * w;
            for (g, &uu) in g_z.row_mut(t).iter_mut().zip(u) {
                *g += a * uu;
            }
            g_k[t] -= a * ut;
        }
    }
    Ok((g_z, g_k))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Prefix,
    Ntk,
}

/// Parameter count including the frozen `3d²` projections.
///
/// Prefix attention holds `m·d + 3d²`; NTK-Attention holds `3d² + r·d + r`.
pub fn count_params(kind: ParamKind, m: usize, d: usize, r: usize) -> usize {
    let frozen = 3 * d * d;
    match kind {
        ParamKind::Prefix => m * d + frozen,
        ParamKind::Ntk => frozen + r * d + r,
    }
}
