//! Central finite differences, the single-token prefix model `f(x, P)`, and a
//! registry that certifies every analytic gradient in the crate.
//!
//! ```text
//! s(x, P_r) = exp(xᵀ W_qk P_r)      v(P_r) = ⟨P_r, w_v⟩
//! f(x, P)   = (Σ_r s_r v_r + s_x v_x) / (Σ_r s_r + s_x)
//! ```

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::attention::PrefixModel;
use crate::error::{shape_err, Error, Result};
use crate::feature_map::FeatureMapSpec;
use crate::math;
use crate::matrix::{dot, DenseMatrix};
use crate::ntk_attention::{compress_prefix, ntk_attention_forward, ntk_attention_grad_zk, NtkAttnModel};
use crate::rng::SeededRng;
use crate::stylized::{stylized_grad, stylized_loss, Dataset, StylizedModel, TargetKind};

/// Step for functions containing exponentials.
pub const DEFAULT_H: f64 = 1e-6;
/// Step for quadratics.
pub const QUADRATIC_H: f64 = 1e-5;
/// Largest accepted relative error in [`run_all_checks`].
pub const PASS_THRESHOLD: f64 = 1e-4;
/// Floor of the relative-error denominator.
pub const REL_FLOOR: f64 = 1e-8;
/// Fuzzed instances per gradient family.
pub const INSTANCES_PER_FAMILY: usize = 10;

/// `(∂f/∂A)_{ij} ≈ (f(A + h e_ij) − f(A − h e_ij)) / 2h` for every entry.
pub fn finite_diff(mut f: impl FnMut(&DenseMatrix) -> f64, at: &DenseMatrix, h: f64) -> Result<DenseMatrix> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Parameter(format!("step {h} must be positive and finite")));
    }
    let mut probe = at.clone();
    let mut out = DenseMatrix::zeros(at.rows(), at.cols());
    for i in 0..at.rows() {
        for j in 0..at.cols() {
            let orig = at[(i, j)];
            probe[(i, j)] = orig + h;
            let plus = f(&probe);
            probe[(i, j)] = orig - h;
            let minus = f(&probe);
            probe[(i, j)] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numerical(format!("function is not finite around entry ({i}, {j})")));
            }
            out[(i, j)] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(out)
}

/// `max |a − n| / max(|a|, |n|, 1e-8)` over all entries.
pub fn max_rel_err(analytic: &DenseMatrix, numeric: &DenseMatrix) -> Result<f64> {
    if analytic.shape() != numeric.shape() {
        return Err(shape_err!(
            "comparing {}x{} with {}x{}",
            analytic.rows(),
            analytic.cols(),
            numeric.rows(),
            numeric.cols()
        ));
    }
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max))
}

/// Query-key product `W_qk`, value vector `w_v` and prefix rows `P_r`.
#[derive(Clone, Debug, PartialEq)]
pub struct AppendixModel {
    pub w_qk: DenseMatrix,
    pub w_v_vec: Vec<f64>,
    pub prefix_p: DenseMatrix,
}

impl AppendixModel {
    pub fn new(w_qk: DenseMatrix, w_v_vec: Vec<f64>, prefix_p: DenseMatrix) -> Result<Self> {
        let d = w_qk.rows();
        if !w_qk.is_square() {
            return Err(shape_err!("W_qk is {}x{}, expected square", w_qk.rows(), w_qk.cols()));
        }
        if w_v_vec.len() != d {
            return Err(shape_err!("w_v has length {}, expected {d}", w_v_vec.len()));
        }
        let prefix_p = if prefix_p.rows() == 0 { DenseMatrix::zeros(0, d) } else { prefix_p };
        if prefix_p.cols() != d {
            return Err(shape_err!("prefix rows have length {}, expected {d}", prefix_p.cols()));
        }
        Ok(Self { w_qk, w_v_vec, prefix_p })
    }

    pub fn d(&self) -> usize {
        self.w_qk.rows()
    }

    pub fn m(&self) -> usize {
        self.prefix_p.rows()
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d() {
            return Err(shape_err!("x has length {}, expected {}", x.len(), self.d()));
        }
        Ok(())
    }

    /// `W_qkᵀ x`.
    fn key_direction(&self, x: &[f64]) -> Vec<f64> {
        let d = self.d();
        (0..d).map(|j| (0..d).map(|i| self.w_qk[(i, j)] * x[i]).sum()).collect()
    }

    /// `v(p) = ⟨p, w_v⟩`.
    pub fn value(&self, p: &[f64]) -> f64 {
        dot(p, &self.w_v_vec)
    }

    /// `s(x, p) = exp(xᵀ W_qk p)`.
    pub fn score(&self, x: &[f64], p: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        self.check_x(p)?;
        Ok(math::exp(dot(&self.key_direction(x), p)))
    }
}

struct Terms {
    /// `s_r` for the prefix rows followed by `s_x`, all scaled by a common `e^{−shift}`.
    weights: Vec<f64>,
    values: Vec<f64>,
    denom: f64,
    f: f64,
    key_dir: Vec<f64>,
}

fn terms(model: &AppendixModel, x: &[f64]) -> Result<Terms> {
    model.check_x(x)?;
    let key_dir = model.key_direction(x);
    let rows: Vec<&[f64]> = model.prefix_p.row_iter().chain(core::iter::once(x)).collect();
    let logits: Vec<f64> = rows.iter().map(|p| dot(&key_dir, p)).collect();
    let shift = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| math::exp(l - shift)).collect();
    let values: Vec<f64> = rows.iter().map(|p| model.value(p)).collect();
    let denom: f64 = weights.iter().sum();
    let f = weights.iter().zip(&values).map(|(s, v)| s * v).sum::<f64>() / denom;
    Ok(Terms { weights, values, denom, f, key_dir })
}

/// The scalar `f(x, P)`.
pub fn appendix_f_forward(model: &AppendixModel, x: &[f64]) -> Result<f64> {
    Ok(terms(model, x)?.f)
}

/// Row `s` is `∂f/∂P_s = s_s[(v_s − f) W_qkᵀx + w_v] / (Σ_r s_r + s_x)`.
pub fn appendix_f_grad(model: &AppendixModel, x: &[f64]) -> Result<DenseMatrix> {
    let t = terms(model, x)?;
    let d = model.d();
    let mut grad = DenseMatrix::zeros(model.m(), d);
    for s in 0..model.m() {
        let c = t.weights[s] / t.denom;
        let gap = t.values[s] - t.f;
        for (j, g) in grad.row_mut(s).iter_mut().enumerate() {
            *g = c * (gap * t.key_dir[j] + model.w_v_vec[j]);
        }
    }
    Ok(grad)
}

/// `∂s(x, P_r)/∂P_r = s(x, P_r) W_qkᵀx`.
pub fn ds_dp(model: &AppendixModel, x: &[f64], r: usize) -> Result<Vec<f64>> {
    if r >= model.m() {
        return Err(shape_err!("prefix row {r} out of range for m = {}", model.m()));
    }
    let s = model.score(x, model.prefix_p.row(r))?;
    Ok(model.key_direction(x).into_iter().map(|k| s * k).collect())
}

/// `∂v(P_r)/∂P_r = w_v`.
pub fn dv_dp(model: &AppendixModel) -> Vec<f64> {
    model.w_v_vec.clone()
}

/// The same gradient assembled by the quotient rule from [`ds_dp`] and [`dv_dp`].
pub fn appendix_f_grad_assembled(model: &AppendixModel, x: &[f64]) -> Result<DenseMatrix> {
    let mut denom = model.score(x, x)?;
    let mut numer = denom * model.value(x);
    for p in model.prefix_p.row_iter() {
        let s = model.score(x, p)?;
        denom += s;
        numer += s * model.value(p);
    }
    let f = numer / denom;
    let dv = dv_dp(model);
    let mut grad = DenseMatrix::zeros(model.m(), model.d());
    for r in 0..model.m() {
        let p = model.prefix_p.row(r);
        let s = model.score(x, p)?;
        let v = model.value(p);
        let ds = ds_dp(model, x, r)?;
        for (j, g) in grad.row_mut(r).iter_mut().enumerate() {
            // ∂N/∂P_r = ds·v + s·dv, ∂D/∂P_r = ds
            *g = (ds[j] * v + s * dv[j] - f * ds[j]) / denom;
        }
    }
    Ok(grad)
}

/// One analytic gradient under test.
pub trait GradientFamily {
    fn name(&self) -> &'static str;

    /// Draws one instance and returns the maximum relative error against finite differences.
    fn check_instance(&self, rng: &mut SeededRng) -> Result<f64>;
}

/// Result of certifying one family.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

pub struct StylizedFamily;

impl GradientFamily for StylizedFamily {
    fn name(&self) -> &'static str {
        "stylized_grad"
    }

    fn check_instance(&self, rng: &mut SeededRng) -> Result<f64> {
        let n = 1 + rng.below(4);
        let d = 1 + rng.below(4);
        let m = 1 + rng.below(16);
        let model = StylizedModel::init(d, m, 0.5, rng)?;
        let data = Dataset::generate(n, d, TargetKind::RandomUnit, rng)?;
        let analytic = stylized_grad(&model, &data)?;
        let numeric = finite_diff(
            |w| {
                let probe = StylizedModel::new(w.clone(), model.signs().to_vec(), model.sigma()).expect("same shape");
                stylized_loss(&probe, &data).unwrap_or(f64::NAN)
            },
            &model.w,
            DEFAULT_H,
        )?;
        max_rel_err(&analytic, &numeric)
    }
}

pub struct NtkZkFamily;

impl GradientFamily for NtkZkFamily {
    fn name(&self) -> &'static str {
        "ntk_attention_grad_zk"
    }

    fn check_instance(&self, rng: &mut SeededRng) -> Result<f64> {
        let d = 1 + rng.below(4);
        let m = 1 + rng.below(8);
        let l = 1 + rng.below(6);
        let prefix = PrefixModel::new(
            rng.uniform_matrix(d, d, 1.0),
            rng.uniform_matrix(d, d, 1.0),
            rng.uniform_matrix(d, d, 1.0),
            rng.uniform_matrix(m, d, 1.0),
        )?;
        let model = compress_prefix(&prefix, &FeatureMapSpec::first_order(d))?;
        let x = rng.uniform_matrix(l, d, 1.0);
        let upstream = rng.uniform_matrix(l, d, 1.0);
        let (g_z, g_k) = ntk_attention_grad_zk(&model, &x, &upstream)?;

        let objective = |m: &NtkAttnModel| {
            ntk_attention_forward(m, &x)
                .map(|t| dot(t.data(), upstream.data()))
                .unwrap_or(f64::NAN)
        };
        let num_z = finite_diff(
            |z| objective(&NtkAttnModel { z: z.clone(), ..model.clone() }),
            &model.z,
            DEFAULT_H,
        )?;
        let num_k = finite_diff(
            |k| objective(&NtkAttnModel { k_vec: k.data().to_vec(), ..model.clone() }),
            &DenseMatrix::row_vector(&model.k_vec),
            DEFAULT_H,
        )?;
        let err_z = max_rel_err(&g_z, &num_z)?;
        let err_k = max_rel_err(&DenseMatrix::row_vector(&g_k), &num_k)?;
        Ok(err_z.max(err_k))
    }
}

pub struct AppendixFamily;

impl GradientFamily for AppendixFamily {
    fn name(&self) -> &'static str {
        "appendix_f_grad"
    }

    fn check_instance(&self, rng: &mut SeededRng) -> Result<f64> {
        let d = 1 + rng.below(5);
        let m = 1 + rng.below(8);
        let model = AppendixModel::new(
            rng.uniform_matrix(d, d, 1.0),
            (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            rng.uniform_matrix(m, d, 1.0),
        )?;
        let x: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let analytic = appendix_f_grad(&model, &x)?;
        let numeric = finite_diff(
            |p| {
                let probe = AppendixModel { prefix_p: p.clone(), ..model.clone() };
                appendix_f_forward(&probe, &x).unwrap_or(f64::NAN)
            },
            &model.prefix_p,
            DEFAULT_H,
        )?;
        max_rel_err(&analytic, &numeric)
    }
}

/// The families certified by [`run_all_checks`], in report order.
pub fn registered_families() -> Vec<Box<dyn GradientFamily>> {
    vec![Box::new(StylizedFamily), Box::new(NtkZkFamily), Box::new(AppendixFamily)]
}

/// Runs each family on [`INSTANCES_PER_FAMILY`] instances drawn from a stream derived from `seed` and the family name.
pub fn run_checks(families: &[Box<dyn GradientFamily>], seed: u64) -> Result<Vec<CheckRow>> {
    families
        .iter()
        .map(|family| {
            let mut rng = SeededRng::derived(seed, family.name());
            let mut worst = 0.0_f64;
            for _ in 0..INSTANCES_PER_FAMILY {
                let err = family.check_instance(&mut rng)?;
                worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
            }
            Ok(CheckRow {
                name: family.name(),
                instances: INSTANCES_PER_FAMILY,
                max_rel_err: worst,
                pass: worst <= PASS_THRESHOLD,
            })
        })
        .collect()
}

pub fn run_all_checks(seed: u64) -> Result<Vec<CheckRow>> {
    run_checks(&registered_families(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::vec::Vec;

    fn scalar_model() -> AppendixModel {
        AppendixModel::new(
            DenseMatrix::from_rows(&[[1.0]]).unwrap(),
            vec![1.0],
            DenseMatrix::from_rows(&[[2.0]]).unwrap(),
        )
        .unwrap()
    }

    fn random_model(rng: &mut SeededRng, d: usize, m: usize) -> AppendixModel {
        AppendixModel::new(
            rng.uniform_matrix(d, d, 1.0),
            (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            rng.uniform_matrix(m, d, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn quadratic_gradient_is_the_matrix() {
        let mut rng = SeededRng::new(1);
        let a = rng.uniform_matrix(4, 3, 2.0);
        let g = finite_diff(|m| 0.5 * dot(m.data(), m.data()), &a, QUADRATIC_H).unwrap();
        assert!(g.max_abs_diff(&a).unwrap() <= 1e-10);
    }

    #[test]
    fn linear_gradient_is_exact() {
        let c = DenseMatrix::from_rows(&[[1.0, -2.0], [0.5, 4.0]]).unwrap();
        let at = DenseMatrix::from_rows(&[[0.25, 0.5], [-1.0, 2.0]]).unwrap();
        let g = finite_diff(|m| dot(m.data(), c.data()), &at, 0.5).unwrap();
        assert_eq!(g, c);
    }

    #[test]
    fn exponential_sum_gradient() {
        let mut rng = SeededRng::new(2);
        let a = rng.uniform_matrix(3, 3, 1.0);
        let g = finite_diff(|m| m.data().iter().map(|v| v.exp()).sum(), &a, DEFAULT_H).unwrap();
        assert!(g.max_abs_diff(&a.map(f64::exp)).unwrap() <= 1e-8);
    }

    #[test]
    fn non_finite_evaluation_names_entry() {
        let at = DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let err = finite_diff(|m| if m[(0, 1)] < 0.0 { f64::NAN } else { m.data().iter().sum() }, &at, 1e-3);
        let err = err.unwrap_err();
        assert!(matches!(&err, Error::Numerical(msg) if msg.contains("(0, 1)")), "{err}");
        assert!(finite_diff(|_| 0.0, &at, 0.0).is_err());
    }

    #[test]
    fn central_difference_error_is_second_order() {
        let mut rng = SeededRng::new(3);
        let model = StylizedModel::init(2, 6, 0.5, &mut rng).unwrap();
        let data = Dataset::generate(3, 2, TargetKind::RandomUnit, &mut rng).unwrap();
        let analytic = stylized_grad(&model, &data).unwrap();
        let loss = |w: &DenseMatrix| {
            stylized_loss(&StylizedModel::new(w.clone(), model.signs().to_vec(), 0.5).unwrap(), &data).unwrap()
        };
        let err = |h: f64| finite_diff(loss, &model.w, h).unwrap().max_abs_diff(&analytic).unwrap();
        let ratio = err(1e-2) / err(5e-3);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn scalar_forward() {
        let e = core::f64::consts::E;
        let f = appendix_f_forward(&scalar_model(), &[1.0]).unwrap();
        assert!((f - (2.0 * e * e + e) / (e * e + e)).abs() < 1e-15);
        assert!((f - 1.731059).abs() < 1e-6);
    }

    #[test]
    fn zero_qk_is_plain_average() {
        let mut rng = SeededRng::new(4);
        let mut model = random_model(&mut rng, 3, 5);
        model.w_qk = DenseMatrix::zeros(3, 3);
        let x = [0.3, -0.2, 0.9];
        let mut expected = model.value(&x);
        for p in model.prefix_p.row_iter() {
            expected += model.value(p);
        }
        expected /= 6.0;
        assert!((appendix_f_forward(&model, &x).unwrap() - expected).abs() < 1e-15);
        let grad = appendix_f_grad(&model, &x).unwrap();
        for row in grad.row_iter() {
            for (g, w) in row.iter().zip(&model.w_v_vec) {
                assert!((g - w / 6.0).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn empty_prefix_is_self_value() {
        let mut rng = SeededRng::new(5);
        let model = random_model(&mut rng, 3, 0);
        let x = [0.5, 0.1, -0.4];
        assert_eq!(appendix_f_forward(&model, &x).unwrap(), model.value(&x));
        assert_eq!(appendix_f_grad(&model, &x).unwrap().shape(), (0, 3));
    }

    #[test]
    fn value_gradient_ignores_prefix() {
        let mut rng = SeededRng::new(6);
        let a = random_model(&mut rng, 3, 2);
        let b = AppendixModel { prefix_p: rng.uniform_matrix(2, 3, 5.0), ..a.clone() };
        assert_eq!(dv_dp(&a), a.w_v_vec);
        assert_eq!(dv_dp(&a), dv_dp(&b));
    }

    #[test]
    fn score_gradient_matches_fd() {
        let mut rng = SeededRng::new(7);
        let model = random_model(&mut rng, 3, 2);
        let x = [0.2, 0.7, -0.5];
        let g = ds_dp(&model, &x, 1).unwrap();
        let numeric = finite_diff(|p| model.score(&x, p.data()).unwrap(), &DenseMatrix::row_vector(model.prefix_p.row(1)), DEFAULT_H)
            .unwrap();
        assert!(max_rel_err(&DenseMatrix::row_vector(&g), &numeric).unwrap() < 1e-8);
    }

    #[test]
    fn grad_matches_fd_on_random_instance() {
        let mut rng = SeededRng::new(8);
        let model = random_model(&mut rng, 3, 4);
        let x: Vec<f64> = (0..3).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let analytic = appendix_f_grad(&model, &x).unwrap();
        let numeric = finite_diff(
            |p| appendix_f_forward(&AppendixModel { prefix_p: p.clone(), ..model.clone() }, &x).unwrap(),
            &model.prefix_p,
            DEFAULT_H,
        )
        .unwrap();
        assert!(analytic.max_abs_diff(&numeric).unwrap() <= 1e-6);
    }

    #[test]
    fn assembled_gradient_matches_direct() {
        for seed in 0..20 {
            let mut rng = SeededRng::new(seed);
            let d = 1 + rng.below(5);
            let m = 1 + rng.below(6);
            let model = random_model(&mut rng, d, m);
            let x: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let direct = appendix_f_grad(&model, &x).unwrap();
            let assembled = appendix_f_grad_assembled(&model, &x).unwrap();
            assert!(direct.max_abs_diff(&assembled).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let model = scalar_model();
        assert!(appendix_f_forward(&model, &[1.0, 2.0]).is_err());
        assert!(AppendixModel::new(DenseMatrix::zeros(2, 2), vec![1.0], DenseMatrix::zeros(1, 2)).is_err());
        assert!(AppendixModel::new(DenseMatrix::zeros(2, 3), vec![1.0; 2], DenseMatrix::zeros(1, 2)).is_err());
        assert!(ds_dp(&model, &[1.0], 3).is_err());
    }

    #[test]
    fn all_families_pass_and_repeat() {
        let a = run_all_checks(2024).unwrap();
        assert_eq!(a.iter().map(|r| r.name).collect::<Vec<_>>(), ["stylized_grad", "ntk_attention_grad_zk", "appendix_f_grad"]);
        assert!(a.iter().all(|r| r.pass), "{a:?}");
        assert_eq!(a, run_all_checks(2024).unwrap());
    }

    struct Corrupted;

    impl GradientFamily for Corrupted {
        fn name(&self) -> &'static str {
            "corrupted_appendix_f"
        }

        fn check_instance(&self, rng: &mut SeededRng) -> Result<f64> {
            let model = random_model(rng, 3, 3);
            let x = [0.1, 0.2, 0.3];
            let mut analytic = appendix_f_grad(&model, &x)?;
            analytic[(1, 2)] += 1e-2;
            let numeric = finite_diff(
                |p| appendix_f_forward(&AppendixModel { prefix_p: p.clone(), ..model.clone() }, &x).unwrap(),
                &model.prefix_p,
                DEFAULT_H,
            )?;
            max_rel_err(&analytic, &numeric)
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let families: Vec<Box<dyn GradientFamily>> = vec![Box::new(AppendixFamily), Box::new(Corrupted)];
        let rows = run_checks(&families, 9).unwrap();
        assert!(rows[0].pass);
        assert!(!rows[1].pass);
        assert_eq!(rows[1].name, "corrupted_appendix_f");
    }
}
