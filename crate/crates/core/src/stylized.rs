//! The two-layer stylized attention model and its neural tangent kernel.
//!
//! ```text
//! F(W, x, a) = m · Σ_r exp(w_rᵀx) a_r w_r / Σ_r exp(w_rᵀx)
//! L(W)       = ½ Σ_i ‖F(W, x_i, a) − y_i‖²
//! ```
//!
//! `W` is `d × m` with columns `w_r`; the signs `a` are fixed at
//! construction. Inputs are single vectors (one-token sequences).
//!
//! Notation used for intermediates, per sample `i` and coordinate `k`:
//! `u_i = exp(Wᵀx_i)`, `α_i = ⟨u_i, 1⟩`, `S_i = u_i/α_i`,
//! `β_k = W_{k,*} ∘ a`, `θ_{k,i} = β_k/α_i`, `v_{k,r} = β_{k,r}1 − β_k`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::eigen::{default_tol, min_eigen_sym};
use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::matrix::{dot, softmax_into, DenseMatrix};
use crate::rng::SeededRng;

/// Default ceiling on `n·d` for [`kernel_gram`].
pub const DEFAULT_GRAM_CAP: usize = 512;

/// Hidden weights `W` (`d × m`) and frozen output signs `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct StylizedModel {
    pub w: DenseMatrix,
    a: Vec<f64>,
    sigma: f64,
}

impl StylizedModel {
    pub fn new(w: DenseMatrix, a: Vec<f64>, sigma: f64) -> Result<Self> {
        if a.len() != w.cols() {
            return Err(shape_err!("{} signs for {} hidden columns", a.len(), w.cols()));
        }
        if let Some(bad) = a.iter().find(|&&s| s != 1.0 && s != -1.0) {
            return Err(Error::Parameter(alloc::format!("output sign {bad} is not ±1")));
        }
        w.ensure_finite()?;
        Ok(Self { w, a, sigma })
    }

    /// `w_r ~ N(0, σ² I_d)` and `a_r ~ Uniform{−1, +1}`, all independent.
    pub fn init(d: usize, m: usize, sigma: f64, rng: &mut SeededRng) -> Result<Self> {
        let w = rng.gaussian_matrix(d, m, sigma)?;
        let a = rng.rademacher_vector(m);
        Self::new(w, a, sigma)
    }

    pub fn d(&self) -> usize {
        self.w.rows()
    }

    pub fn m(&self) -> usize {
        self.w.cols()
    }

    pub fn signs(&self) -> &[f64] {
        &self.a
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `β = W diag(a)`, row `k` is `β_k`.
    pub fn beta(&self) -> DenseMatrix {
        let m = self.m();
        DenseMatrix::from_fn(self.d(), m, |k, r| self.w[(k, r)] * self.a[r])
    }

    /// `S = softmax(Wᵀx)`.
    pub fn softmax_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d() {
            return Err(shape_err!("input of length {} for model dimension {}", x.len(), self.d()));
        }
        let scores: Vec<f64> = (0..self.m()).map(|r| column_dot(&self.w, r, x)).collect();
        let mut s = vec![0.0; self.m()];
        softmax_into(&scores, &mut s);
        Ok(s)
    }
}

fn column_dot(w: &DenseMatrix, r: usize, x: &[f64]) -> f64 {
    let mut s = 0.0;
    for (k, &xk) in x.iter().enumerate() {
        s += w[(k, r)] * xk;
    }
    s
}

/// Which targets [`Dataset::generate`] produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    /// `y_i` uniform on the unit sphere, independent of `x_i`.
    RandomUnit,
    /// `y_i = b + A x_i` with symmetric `A`, rescaled so `max_i ‖y_i‖ = 1`.
    ///
    /// Near a small-σ initialization the model behaves like
    /// `x ↦ c + (Σ_r a_r w_r w_rᵀ) x`, whose linear part is symmetric, so
    /// these targets are reachable without leaving the kernel regime.
    SymmetricAffine,
}

/// Training pairs `(x_i, y_i)` with `‖x_i‖ ≤ 1` and `‖y_i‖ ≤ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n × d`, one input per row.
    pub xs: DenseMatrix,
    /// `n × d`, one target per row.
    pub ys: DenseMatrix,
}

const NORM_SLACK: f64 = 1e-12;

impl Dataset {
    pub fn new(xs: DenseMatrix, ys: DenseMatrix) -> Result<Self> {
        if xs.shape() != ys.shape() {
            return Err(shape_err!(
                "inputs are {}x{} but targets are {}x{}",
                xs.rows(),
                xs.cols(),
                ys.rows(),
                ys.cols()
            ));
        }
        xs.ensure_finite()?;
        ys.ensure_finite()?;
        for (name, mat) in [("x", &xs), ("y", &ys)] {
            for (i, row) in mat.row_iter().enumerate() {
                let norm = math::sqrt(dot(row, row));
                if norm > 1.0 + NORM_SLACK {
                    return Err(Error::Parameter(alloc::format!("‖{name}_{i}‖ = {norm} exceeds 1")));
                }
            }
        }
        Ok(Self { xs, ys })
    }

    /// `n` unit-norm inputs and targets of the requested kind.
    pub fn generate(n: usize, d: usize, targets: TargetKind, rng: &mut SeededRng) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Parameter("dataset needs n ≥ 1 and d ≥ 1".into()));
        }
        let mut xs = DenseMatrix::zeros(n, d);
        for i in 0..n {
            xs.row_mut(i).copy_from_slice(&rng.unit_vector(d));
        }
        let ys = match targets {
            TargetKind::RandomUnit => {
                let mut ys = DenseMatrix::zeros(n, d);
                for i in 0..n {
                    ys.row_mut(i).copy_from_slice(&rng.unit_vector(d));
                }
                ys
            }
            TargetKind::SymmetricAffine => {
                let g = rng.gaussian_matrix(d, d, 1.0)?;
                let sym = DenseMatrix::from_fn(d, d, |i, j| 0.5 * (g[(i, j)] + g[(j, i)]));
                let offset: Vec<f64> = (0..d).map(|_| 0.5 * rng.standard_normal()).collect();
                let mut ys = xs.matmul(&sym)?;
                for i in 0..n {
                    for (y, b) in ys.row_mut(i).iter_mut().zip(&offset) {
                        *y += b;
                    }
                }
                let largest = ys.row_iter().map(|r| math::sqrt(dot(r, r))).fold(0.0, f64::max);
                if largest > 0.0 {
                    ys = ys.scale(1.0 / largest);
                }
                ys
            }
        };
        Self::new(xs, ys)
    }

    pub fn n(&self) -> usize {
        self.xs.rows()
    }

    pub fn d(&self) -> usize {
        self.xs.cols()
    }
}

fn check_data(model: &StylizedModel, data: &Dataset) -> Result<()> {
    if data.d() != model.d() {
        return Err(shape_err!("data dimension {} but model dimension {}", data.d(), model.d()));
    }
    Ok(())
}

/// `F(W, x, a) = m·W(a ∘ S)`.
pub fn stylized_forward(model: &StylizedModel, x: &[f64]) -> Result<Vec<f64>> {
    let s = model.softmax_weights(x)?;
    Ok(forward_from_weights(model, &s))
}

fn forward_from_weights(model: &StylizedModel, s: &[f64]) -> Vec<f64> {
    let m = model.m() as f64;
    (0..model.d())
        .map(|k| {
            let row = model.w.row(k);
            let mut acc = 0.0;
            for ((&w, &a), &sr) in row.iter().zip(&model.a).zip(s) {
                acc += w * a * sr;
            }
            m * acc
        })
        .collect()
}

/// Three algebraically equal ways of writing the prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionForms {
    /// `m α⁻¹ W (a ∘ u)` with raw exponentials.
    pub direct: Vec<f64>,
    /// `F_k = m ⟨β_k, S⟩`.
    pub via_beta: Vec<f64>,
    /// `F_k = m ⟨θ_k, u⟩` with `θ_k = β_k / α`.
    pub via_theta: Vec<f64>,
}

pub fn prediction_forms(model: &StylizedModel, x: &[f64]) -> Result<PredictionForms> {
    let s = model.softmax_weights(x)?;
    let m = model.m() as f64;
    let u: Vec<f64> = (0..model.m()).map(|r| math::exp(column_dot(&model.w, r, x))).collect();
    let alpha: f64 = u.iter().sum();
    let beta = model.beta();

    let au: Vec<f64> = u.iter().zip(&model.a).map(|(u, a)| u * a).collect();
    let direct = (0..model.d()).map(|k| m / alpha * dot(model.w.row(k), &au)).collect();
    let via_beta = (0..model.d()).map(|k| m * dot(beta.row(k), &s)).collect();
    let via_theta = (0..model.d())
        .map(|k| {
            let theta: Vec<f64> = beta.row(k).iter().map(|b| b / alpha).collect();
            m * dot(&theta, &u)
        })
        .collect();
    Ok(PredictionForms { direct, via_beta, via_theta })
}

/// `½ Σ_i ‖F(x_i) − y_i‖²`.
pub fn stylized_loss(model: &StylizedModel, data: &Dataset) -> Result<f64> {
    check_data(model, data)?;
    let mut total = 0.0;
    for i in 0..data.n() {
        let f = stylized_forward(model, data.xs.row(i))?;
        for (fk, yk) in f.iter().zip(data.ys.row(i)) {
            total += (fk - yk) * (fk - yk);
        }
    }
    Ok(0.5 * total)
}

/// Loss and `ΔW` (column `r` is `Δw_r`) from one pass over the data.
///
/// `Δw_r = m Σ_i Σ_k (F_{k,i} − y_{k,i})(⟨v_{k,r}, S_i⟩ S_{i,r} x_i + a_r S_{i,r} e_k)`.
pub fn stylized_loss_and_grad(model: &StylizedModel, data: &Dataset) -> Result<(f64, DenseMatrix)> {
    check_data(model, data)?;
    let (d, m) = (model.d(), model.m());
    let mf = m as f64;
    let beta = model.beta();
    let mut grad = DenseMatrix::zeros(d, m);
    let mut loss = 0.0;
    for i in 0..data.n() {
        let x = data.xs.row(i);
        let s = model.softmax_weights(x)?;
        let f = forward_from_weights(model, &s);
        let resid: Vec<f64> = f.iter().zip(data.ys.row(i)).map(|(f, y)| f - y).collect();
        loss += 0.5 * dot(&resid, &resid);

        let s_total: f64 = s.iter().sum(); // ⟨1, S_i⟩
        let beta_s: Vec<f64> = (0..d).map(|k| dot(beta.row(k), &s)).collect();
        for r in 0..m {
            // Σ_k R_k ⟨v_{k,r}, S_i⟩
            let mut along_x = 0.0;
            for k in 0..d {
                along_x += resid[k] * (beta[(k, r)] * s_total - beta_s[k]);
            }
            let cx = mf * along_x * s[r];
            let ce = mf * model.a[r] * s[r];
            for k in 0..d {
                grad[(k, r)] += cx * x[k] + ce * resid[k];
            }
        }
    }
    Ok((loss, grad))
}

pub fn stylized_grad(model: &StylizedModel, data: &Dataset) -> Result<DenseMatrix> {
    Ok(stylized_loss_and_grad(model, data)?.1)
}

/// The `nd × nd` kernel `H(W)`; row/column index `k·n + i` for coordinate `k`, sample `i`.
///
/// `[H_{k₁,k₂}]_{i,j} = (1/m) x_iᵀx_j Σ_r G_{k₁,i,r} G_{k₂,j,r}` with
/// `G_{k,i,r} = m S_{i,r} ⟨v_{k,r}, S_i⟩`.
pub fn kernel_gram(model: &StylizedModel, data: &Dataset, cap: usize) -> Result<DenseMatrix> {
    check_data(model, data)?;
    let (n, d, m) = (data.n(), model.d(), model.m());
    let size = n * d;
    if size > cap {
        return Err(Error::Resource(alloc::format!("kernel of size {size} exceeds the cap of {cap}")));
    }
    let mf = m as f64;
    let beta = model.beta();
    // g[(k·n + i), r] = G_{k,i,r}
    let mut g = DenseMatrix::zeros(size, m);
    for i in 0..n {
        let s = model.softmax_weights(data.xs.row(i))?;
        let s_total: f64 = s.iter().sum();
        for k in 0..d {
            let bs = dot(beta.row(k), &s);
            let row = g.row_mut(k * n + i);
            for r in 0..m {
                row[r] = mf * s[r] * (beta[(k, r)] * s_total - bs);
            }
        }
    }
    let gram_x = data.xs.matmul_transposed(&data.xs)?;
    let mut h = DenseMatrix::zeros(size, size);
    for a in 0..size {
        for b in a..size {
            let (i, j) = (a % n, b % n);
            let v = gram_x[(i, j)] * dot(g.row(a), g.row(b)) / mf;
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    Ok(h)
}

/// `‖H_t − H_0‖_F`.
pub fn kernel_drift(h0: &DenseMatrix, ht: &DenseMatrix) -> Result<f64> {
    Ok(ht.sub(h0)?.frobenius())
}

/// `drift / (R √(nd))` with `R` the largest column displacement; `NaN` when `R = 0`.
pub fn drift_displacement_ratio(drift: f64, max_disp: f64, n: usize, d: usize) -> f64 {
    let scale = max_disp * math::sqrt((n * d) as f64);
    if scale > 0.0 {
        drift / scale
    } else {
        f64::NAN
    }
}

/// `α·exp(−η λ m d n t / α)` with `α = n d` and unit constants.
///
/// A shape predictor for the loss curve, not an absolute value.
pub fn scaling_law_predict(n: usize, d: usize, m: usize, eta: f64, lambda: f64, t: f64) -> f64 {
    let alpha = (n * d) as f64;
    let compute = (m * d) as f64 * n as f64 * t;
    alpha * math::exp(-eta * lambda * compute / alpha)
}

/// `max_r ‖w_r − w0_r‖₂`.
pub fn max_column_displacement(w: &DenseMatrix, w0: &DenseMatrix) -> f64 {
    max_column_norm(&w.sub(w0).expect("same shape"))
}

fn max_column_norm(m: &DenseMatrix) -> f64 {
    let mut sq = vec![0.0; m.cols()];
    for row in m.row_iter() {
        for (s, v) in sq.iter_mut().zip(row) {
            *s += v * v;
        }
    }
    math::sqrt(sq.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EtaMode {
    Fixed,
    /// Largest `η ∈ {2^{−j}/m}` whose first [`AUTO_ETA_PROBE_STEPS`] steps never raise the loss.
    Auto,
}

pub const AUTO_ETA_PROBE_STEPS: usize = 10;
const AUTO_ETA_MAX_HALVINGS: u32 = 60;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Learning rate; only read in [`EtaMode::Fixed`].
    pub eta: f64,
    pub steps: usize,
    pub eta_mode: EtaMode,
}

/// Optional, more expensive measurements during training.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// Record `‖H(t) − H(0)‖_F` every this many steps (and at the last step).
    pub kernel_drift_every: Option<usize>,
    /// Compute `λ_min(H(0))`.
    pub lambda_min: bool,
    /// Cap on `n·d` for kernel computations.
    pub gram_cap: usize,
}

impl Diagnostics {
    pub fn full(drift_every: usize) -> Self {
        Self { kernel_drift_every: Some(drift_every), lambda_min: true, gram_cap: DEFAULT_GRAM_CAP }
    }
}

/// Per-step record of a GD run; step `t` is index `t`, from `0` to `steps`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainReport {
    pub eta: f64,
    pub loss: Vec<f64>,
    /// `max_r ‖w_r(t) − w_r(0)‖₂`.
    pub max_disp: Vec<f64>,
    /// `η · max_r ‖Δw_r(t)‖₂`.
    pub max_eta_grad: Vec<f64>,
    /// `‖H(t) − H(0)‖_F` at sampled steps.
    pub kernel_drift: Vec<Option<f64>>,
    pub h0_frobenius: Option<f64>,
    pub lambda_min_h0: Option<f64>,
    /// `‖F(W(0)) − Y‖_F`.
    pub initial_residual: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.loss.last().unwrap_or(&f64::NAN)
    }

    /// Last recorded drift divided by `‖H(0)‖_F`.
    pub fn final_relative_drift(&self) -> Option<f64> {
        let drift = self.kernel_drift.iter().rev().find_map(|d| *d)?;
        Some(drift / self.h0_frobenius?)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize, report: Box<TrainReport> },
    #[error(transparent)]
    Core(#[from] Error),
}

/// Picks the learning rate for [`EtaMode::Auto`].
pub fn auto_eta(model: &StylizedModel, data: &Dataset) -> Result<f64> {
    let m = model.m() as f64;
    'search: for j in 0..=AUTO_ETA_MAX_HALVINGS {
        let eta = math::powf(2.0, -(j as f64)) / m;
        let mut probe = model.clone();
        let (mut prev, mut grad) = stylized_loss_and_grad(&probe, data)?;
        for _ in 0..AUTO_ETA_PROBE_STEPS {
            gd_step(&mut probe.w, &grad, eta);
            let (loss, g) = stylized_loss_and_grad(&probe, data)?;
            if !loss.is_finite() || loss > prev {
                continue 'search;
            }
            prev = loss;
            grad = g;
        }
        return Ok(eta);
    }
    Err(Error::Numerical("no learning rate in the search grid keeps the loss monotone".into()))
}

fn gd_step(w: &mut DenseMatrix, grad: &DenseMatrix, eta: f64) {
    for (wv, g) in w.data_mut().iter_mut().zip(grad.data()) {
        *wv -= eta * g;
    }
}

/// Full-batch gradient descent `W(t+1) = W(t) − η ΔW(t)`.
pub fn gd_train(
    model: &mut StylizedModel,
    data: &Dataset,
    cfg: &TrainConfig,
    diagnostics: &Diagnostics,
) -> core::result::Result<TrainReport, TrainError> {
    check_data(model, data)?;
    let eta = match cfg.eta_mode {
        EtaMode::Fixed => {
            if !(cfg.eta >= 0.0 && cfg.eta.is_finite()) {
                return Err(Error::Parameter(alloc::format!("learning rate {} is invalid", cfg.eta)).into());
            }
            cfg.eta
        }
        EtaMode::Auto => auto_eta(model, data)?,
    };
    let w0 = model.w.clone();
    let wants_h0 = diagnostics.lambda_min || diagnostics.kernel_drift_every.is_some();
    let h0 = if wants_h0 { Some(kernel_gram(model, data, diagnostics.gram_cap)?) } else { None };

    let mut report = TrainReport { eta, ..TrainReport::default() };
    if let Some(h0) = &h0 {
        report.h0_frobenius = Some(h0.frobenius());
        if diagnostics.lambda_min {
            report.lambda_min_h0 = Some(min_eigen_sym(h0, default_tol(h0))?);
        }
    }
    let mut resid = 0.0;
    for i in 0..data.n() {
        let f = stylized_forward(model, data.xs.row(i))?;
        resid += f.iter().zip(data.ys.row(i)).map(|(f, y)| (f - y) * (f - y)).sum::<f64>();
    }
    report.initial_residual = math::sqrt(resid);

    let (mut loss, mut grad) = stylized_loss_and_grad(model, data)?;
    for t in 0..=cfg.steps {
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step: t, report: Box::new(report) });
        }
        report.loss.push(loss);
        report.max_disp.push(max_column_displacement(&model.w, &w0));
        report.max_eta_grad.push(eta * max_column_norm(&grad));
        let drift = match (diagnostics.kernel_drift_every, &h0) {
            (Some(every), Some(h0)) if every > 0 && (t % every == 0 || t == cfg.steps) => {
                Some(kernel_drift(h0, &kernel_gram(model, data, diagnostics.gram_cap)?)?)
            }
            _ => None,
        };
        report.kernel_drift.push(drift);
        if t == cfg.steps {
            break;
        }
        gd_step(&mut model.w, &grad, eta);
        (loss, grad) = stylized_loss_and_grad(model, data)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::vec::Vec;

    const E: f64 = core::f64::consts::E;

    fn two_unit_model() -> StylizedModel {
        StylizedModel::new(DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap(), vec![1.0, -1.0], 1.0).unwrap()
    }

    fn single(x: &[f64], y: &[f64]) -> Dataset {
        Dataset::new(DenseMatrix::row_vector(x), DenseMatrix::row_vector(y)).unwrap()
    }

    fn random_instance(seed: u64, n: usize, d: usize, m: usize, sigma: f64) -> (StylizedModel, Dataset) {
        let mut rng = SeededRng::new(seed);
        let model = StylizedModel::init(d, m, sigma, &mut rng).unwrap();
        let data = Dataset::generate(n, d, TargetKind::RandomUnit, &mut rng).unwrap();
        (model, data)
    }

    // Scalar-loop loss straight from the definition, independent of the model code.
    fn loss_oracle(model: &StylizedModel, data: &Dataset) -> f64 {
        let (d, m) = (model.d(), model.m());
        let mut total = 0.0;
        for i in 0..data.n() {
            let x = data.xs.row(i);
            let e: Vec<f64> = (0..m).map(|r| (0..d).map(|k| model.w[(k, r)] * x[k]).sum::<f64>().exp()).collect();
            let denom: f64 = e.iter().sum();
            for k in 0..d {
                let num: f64 = (0..m).map(|r| e[r] * model.w[(k, r)] * model.signs()[r]).sum();
                let f = m as f64 * num / denom;
                total += (f - data.ys[(i, k)]).powi(2);
            }
        }
        0.5 * total
    }

    fn central_difference(model: &StylizedModel, data: &Dataset, h: f64) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(model.d(), model.m());
        for k in 0..model.d() {
            for r in 0..model.m() {
                let mut plus = model.clone();
                plus.w[(k, r)] += h;
                let mut minus = model.clone();
                minus.w[(k, r)] -= h;
                out[(k, r)] = (loss_oracle(&plus, data) - loss_oracle(&minus, data)) / (2.0 * h);
            }
        }
        out
    }

    fn max_rel_err(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    #[test]
    fn identical_columns_with_balanced_signs_cancel() {
        let w = DenseMatrix::from_fn(3, 4, |k, _| 0.3 * (k as f64 + 1.0));
        let model = StylizedModel::new(w, vec![1.0, -1.0, 1.0, -1.0], 0.1).unwrap();
        let f = stylized_forward(&model, &[0.2, -0.5, 0.1]).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn single_unit_returns_its_column() {
        let w = DenseMatrix::from_rows(&[[0.4], [-1.2]]).unwrap();
        let model = StylizedModel::new(w, vec![1.0], 0.1).unwrap();
        assert_eq!(stylized_forward(&model, &[0.6, 0.8]).unwrap(), vec![0.4, -1.2]);
    }

    #[test]
    fn two_unit_scalar_forward() {
        let f = stylized_forward(&two_unit_model(), &[1.0]).unwrap();
        let expected = 2.0 * E / (1.0 + E);
        assert!((f[0] - expected).abs() < 1e-15);
        assert!((f[0] - 1.462117).abs() < 1e-6);
    }

    #[test]
    fn loss_examples() {
        let w = DenseMatrix::from_rows(&[[0.6], [0.8]]).unwrap();
        let model = StylizedModel::new(w, vec![1.0], 0.1).unwrap();
        // F ≡ w₁ = (0.6, 0.8), so targets equal to it give zero loss
        assert_eq!(stylized_loss(&model, &single(&[1.0, 0.0], &[0.6, 0.8])).unwrap(), 0.0);
        let w = DenseMatrix::from_rows(&[[3.0], [4.0]]).unwrap();
        let model = StylizedModel::new(w, vec![1.0], 0.1).unwrap();
        assert_eq!(stylized_loss(&model, &single(&[1.0, 0.0], &[0.0, 0.0])).unwrap(), 12.5);
    }

    #[test]
    fn loss_matches_scalar_loop() {
        let (model, data) = random_instance(17, 5, 4, 12, 0.7);
        let a = stylized_loss(&model, &data).unwrap();
        let b = loss_oracle(&model, &data);
        assert!((a - b).abs() <= 1e-12 * b.abs());
        let (c, _) = stylized_loss_and_grad(&model, &data).unwrap();
        assert!((c - b).abs() <= 1e-12 * b.abs());
    }

    #[test]
    fn gradient_vanishes_at_interpolation() {
        let w = DenseMatrix::from_rows(&[[0.6], [0.8]]).unwrap();
        let model = StylizedModel::new(w, vec![-1.0], 0.1).unwrap();
        let grad = stylized_grad(&model, &single(&[1.0, 0.0], &[-0.6, -0.8])).unwrap();
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_unit_gradient_closed_form() {
        let w = DenseMatrix::from_rows(&[[0.2], [-0.3], [0.5]]).unwrap();
        let model = StylizedModel::new(w, vec![-1.0], 0.1).unwrap();
        let mut rng = SeededRng::new(4);
        let data = Dataset::generate(3, 3, TargetKind::RandomUnit, &mut rng).unwrap();
        let grad = stylized_grad(&model, &data).unwrap();
        for k in 0..3 {
            let expected: f64 = (0..3).map(|i| model.w[(k, 0)] + data.ys[(i, k)]).sum();
            assert!((grad[(k, 0)] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (model, data) = random_instance(23, 3, 3, 8, 0.5);
        let analytic = stylized_grad(&model, &data).unwrap();
        let numeric = central_difference(&model, &data, 1e-6);
        assert!(max_rel_err(&analytic, &numeric) <= 1e-5);
    }

    #[test]
    fn kernel_scalar_fixture() {
        let h = kernel_gram(&two_unit_model(), &single(&[1.0], &[0.0]), DEFAULT_GRAM_CAP).unwrap();
        let s1 = E / (1.0 + E);
        let s2 = 1.0 / (1.0 + E);
        let expected = (2.0 * s1 * s2).powi(2);
        assert!((h[(0, 0)] - expected).abs() < 1e-15);
        assert!((h[(0, 0)] - 0.154625).abs() < 1e-6);
    }

    #[test]
    fn kernel_vanishes_for_zero_inputs() {
        let mut rng = SeededRng::new(1);
        let model = StylizedModel::init(2, 6, 0.5, &mut rng).unwrap();
        let data = Dataset::new(DenseMatrix::zeros(3, 2), rng.uniform_matrix(3, 2, 0.5)).unwrap();
        let h = kernel_gram(&model, &data, DEFAULT_GRAM_CAP).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kernel_cap_is_enforced() {
        let (model, data) = random_instance(2, 5, 4, 3, 0.1);
        assert!(matches!(kernel_gram(&model, &data, 19), Err(Error::Resource(_))));
        assert!(kernel_gram(&model, &data, 20).is_ok());
    }

    #[test]
    fn drift_examples() {
        let (model, data) = random_instance(3, 2, 2, 5, 0.3);
        let h0 = kernel_gram(&model, &data, DEFAULT_GRAM_CAP).unwrap();
        assert_eq!(kernel_drift(&h0, &h0).unwrap(), 0.0);
        let e = DenseMatrix::from_fn(4, 4, |i, j| 1e-3 * (i as f64 - j as f64 * 0.5));
        let moved = h0.add(&e).unwrap();
        assert!((kernel_drift(&h0, &moved).unwrap() - e.frobenius()).abs() <= 1e-13);
        assert!(kernel_drift(&h0, &DenseMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn scaling_law_shape() {
        let p0 = scaling_law_predict(4, 3, 64, 0.01, 0.5, 0.0);
        assert_eq!(p0, 12.0);
        let p1 = scaling_law_predict(4, 3, 64, 0.01, 0.5, 1.0) / 12.0;
        let p2 = scaling_law_predict(4, 3, 64, 0.01, 0.5, 2.0) / 12.0;
        assert!((p2 - p1 * p1).abs() < 1e-15);
    }

    #[test]
    fn log_loss_tracks_exponential_decay() {
        let mut rng = SeededRng::new(12);
        let mut model = StylizedModel::init(3, 512, 0.05, &mut rng).unwrap();
        let data = Dataset::generate(4, 3, TargetKind::SymmetricAffine, &mut rng).unwrap();
        let cfg = TrainConfig { eta: 0.0, steps: 1000, eta_mode: EtaMode::Auto };
        let report = gd_train(&mut model, &data, &cfg, &Diagnostics::default()).unwrap();
        let span = report.loss.len() * 4 / 5;
        let t: Vec<f64> = (0..span).map(|t| t as f64).collect();
        let log_loss: Vec<f64> = report.loss[..span].iter().map(|l| l.ln()).collect();
        let predicted: Vec<f64> =
            t.iter().map(|&t| scaling_law_predict(4, 3, 512, report.eta, 1e-3, t).ln()).collect();
        let corr = |a: &[f64], b: &[f64]| {
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
            cov / (va * vb).sqrt()
        };
        assert!(corr(&t, &log_loss) < -0.9);
        assert!(corr(&predicted, &log_loss) > 0.9);
        assert!(log_loss.windows(2).skip(1).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn drift_ratio_scaling() {
        assert_eq!(drift_displacement_ratio(6.0, 0.5, 4, 9), 2.0);
        assert!(drift_displacement_ratio(1.0, 0.0, 1, 1).is_nan());
    }

    #[test]
    fn zero_steps_and_zero_eta() {
        let (mut model, data) = random_instance(8, 3, 2, 16, 0.1);
        let cfg = TrainConfig { eta: 0.1, steps: 0, eta_mode: EtaMode::Fixed };
        let report = gd_train(&mut model.clone(), &data, &cfg, &Diagnostics::default()).unwrap();
        assert_eq!(report.loss.len(), 1);
        assert_eq!(report.loss[0], stylized_loss(&model, &data).unwrap());

        let cfg = TrainConfig { eta: 0.0, steps: 5, eta_mode: EtaMode::Fixed };
        let report = gd_train(&mut model, &data, &cfg, &Diagnostics::default()).unwrap();
        assert_eq!(report.loss.len(), 6);
        assert!(report.loss.iter().all(|&l| l == report.loss[0]));
        assert!(report.max_disp.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn huge_learning_rate_diverges_with_partial_report() {
        let (mut model, data) = random_instance(9, 3, 2, 8, 1.0);
        let cfg = TrainConfig { eta: 1e200, steps: 50, eta_mode: EtaMode::Fixed };
        match gd_train(&mut model, &data, &cfg, &Diagnostics::default()) {
            Err(TrainError::Diverged { step, report }) => {
                assert_eq!(report.loss.len(), step);
                assert!(step >= 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let run = || {
            let mut rng = SeededRng::new(5);
            let mut model = StylizedModel::init(3, 256, 0.05, &mut rng).unwrap();
            let data = Dataset::generate(4, 3, TargetKind::SymmetricAffine, &mut rng).unwrap();
            let cfg = TrainConfig { eta: 0.0, steps: 200, eta_mode: EtaMode::Auto };
            gd_train(&mut model, &data, &cfg, &Diagnostics::full(50)).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.final_loss() < a.loss[0]);
        assert_eq!(a.kernel_drift.iter().filter(|d| d.is_some()).count(), 5);
        assert!(a.lambda_min_h0.unwrap() >= -1e-10);
        assert!(a.loss.len() == 201 && a.max_disp.len() == 201 && a.max_eta_grad.len() == 201);
    }

    #[test]
    fn dataset_rejects_large_norms() {
        let x = DenseMatrix::from_rows(&[[0.8, 0.8]]).unwrap();
        let y = DenseMatrix::from_rows(&[[0.1, 0.1]]).unwrap();
        assert!(matches!(Dataset::new(x, y), Err(Error::Parameter(_))));
    }

    #[test]
    fn signs_must_be_plus_minus_one() {
        let w = DenseMatrix::zeros(2, 2);
        assert!(StylizedModel::new(w.clone(), vec![1.0, 0.5], 0.1).is_err());
        assert!(StylizedModel::new(w, vec![1.0], 0.1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn kernel_is_symmetric_psd(seed in any::<u64>(), n in 1usize..=4, d in 1usize..=4, m in 1usize..=16) {
            let (model, data) = random_instance(seed, n, d, m, 0.8);
            let h = kernel_gram(&model, &data, DEFAULT_GRAM_CAP).unwrap();
            prop_assert!(h.max_abs_diff(&h.transpose()).unwrap() <= 1e-12);
            prop_assert!(min_eigen_sym(&h, default_tol(&h)).unwrap() >= -1e-10);
        }

        #[test]
        fn gradient_matches_fd_on_fuzzed(seed in any::<u64>(), n in 1usize..=4, d in 1usize..=4, m in 1usize..=16) {
            let (model, data) = random_instance(seed, n, d, m, 0.5);
            let analytic = stylized_grad(&model, &data).unwrap();
            let numeric = central_difference(&model, &data, 1e-6);
            // entries near zero are judged on the absolute scale of the gradient
            let scale = analytic.max_abs().max(1e-8);
            let err = analytic.data().iter().zip(numeric.data())
                .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-3 * scale))
                .fold(0.0, f64::max);
            prop_assert!(err <= 1e-5, "err {}", err);
        }

        #[test]
        fn prediction_forms_agree(seed in any::<u64>(), d in 1usize..=5, m in 1usize..=32) {
            let mut rng = SeededRng::new(seed);
            let model = StylizedModel::init(d, m, 0.7, &mut rng).unwrap();
            let x = rng.unit_vector(d);
            let forms = prediction_forms(&model, &x).unwrap();
            let f = stylized_forward(&model, &x).unwrap();
            for (k, &fk) in f.iter().enumerate() {
                let scale = 1.0 + fk.abs();
                prop_assert!((forms.direct[k] - fk).abs() <= 1e-12 * scale);
                prop_assert!((forms.via_beta[k] - fk).abs() <= 1e-12 * scale);
                prop_assert!((forms.via_theta[k] - fk).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn softmax_weights_sum_to_one(seed in any::<u64>(), d in 1usize..=5, m in 1usize..=64) {
            let mut rng = SeededRng::new(seed);
            let model = StylizedModel::init(d, m, 2.0, &mut rng).unwrap();
            let s = model.softmax_weights(&rng.unit_vector(d)).unwrap();
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
