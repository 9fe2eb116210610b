//! Experiment drivers shared by the command line and the test suites.

use ntk_attn_core::feature_map::{FeatureKind, FeatureMapSpec, ScaleMode};
use ntk_attn_core::ntk_attention::ntk_attention_forward;
use ntk_attn_core::{compress_prefix, prefix_attention, DenseMatrix, PrefixModel, SeededRng};
use serde::Serialize;

/// Parameters of the truncation-error sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ApproxConfig {
    pub d: usize,
    pub l: usize,
    pub m: usize,
    pub g_min: usize,
    pub g_max: usize,
    /// Largest entry magnitude of `X` and `P`.
    pub bound: f64,
    pub kind: String,
    pub scale_mode: String,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            d: 8,
            l: 8,
            m: 64,
            g_min: 1,
            g_max: 10,
            bound: 0.5,
            kind: FeatureKind::TaylorCompact.to_string(),
            scale_mode: ScaleMode::InvSqrtD.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApproxRow {
    pub g: usize,
    pub inf_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ApproxSweep {
    pub rows: Vec<ApproxRow>,
    /// Orders that could not be run, with the reason.
    pub skipped: Vec<(usize, String)>,
}

/// A model with identity projections, so `Q`, `K_C` and `V_C` inherit the entry bound of `X` and `P`.
pub fn bounded_instance(cfg: &ApproxConfig, rng: &mut SeededRng) -> (PrefixModel, DenseMatrix) {
    let eye = DenseMatrix::identity(cfg.d);
    let p = rng.uniform_matrix(cfg.m, cfg.d, cfg.bound);
    let x = rng.uniform_matrix(cfg.l, cfg.d, cfg.bound);
    let model = PrefixModel::new(eye.clone(), eye.clone(), eye, p).expect("square identity projections");
    (model, x)
}

/// `‖NTK-Attention(X) − PrefixAttention(X)‖_∞` for each Taylor order in range.
pub fn approx_error_sweep(cfg: &ApproxConfig, rng: &mut SeededRng) -> ntk_attn_core::Result<ApproxSweep> {
    let kind: FeatureKind = cfg.kind.parse()?;
    let mode: ScaleMode = cfg.scale_mode.parse()?;
    if kind == FeatureKind::FirstOrder {
        return Err(ntk_attn_core::Error::Parameter("the order sweep needs a Taylor feature map".into()));
    }
    let (model, x) = bounded_instance(cfg, rng);
    let exact = prefix_attention(&model, &x)?;
    let mut sweep = ApproxSweep::default();
    for g in cfg.g_min..=cfg.g_max {
        let spec = match kind {
            FeatureKind::Taylor => FeatureMapSpec::taylor(cfg.d, g, mode),
            _ => FeatureMapSpec::taylor_compact(cfg.d, g, mode),
        };
        let compressed = match compress_prefix(&model, &spec) {
            Ok(c) => c,
            Err(e @ ntk_attn_core::Error::Resource(_)) => {
                sweep.skipped.push((g, e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let approx = ntk_attention_forward(&compressed, &x)?;
        sweep.rows.push(ApproxRow { g, inf_error: approx.max_abs_diff(&exact)? });
    }
    Ok(sweep)
}

pub fn approx_csv(rows: &[ApproxRow]) -> String {
    let mut out = String::from("g,inf_error\n");
    for r in rows {
        out.push_str(&format!("{},{:e}\n", r.g, r.inf_error));
    }
    out
}
