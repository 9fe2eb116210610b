//! Row-wise feature lifts `φ` with `⟨φ(q), φ(k)⟩ ≈ exp(s·qᵀk)`.
//!
//! Three lifts are available:
//!
//! * [`FeatureKind::FirstOrder`]: the cheap `r = d` map
//!   `φ(z) = d^{-1/4}·(z∘1[z≥0] + exp(z)∘1[z<0]) + 1`. Its kernel accuracy
//!   is not quantified; it is positive everywhere, which keeps NTK-Attention
//!   denominators positive.
//! * [`FeatureKind::Taylor`]: the truncated Taylor series of `exp` realized
//!   with every ordered monomial of degree `t ≤ g`, scaled by
//!   `s^{t/2}/√(t!)`, giving `r = Σ_t d^t`.
//! * [`FeatureKind::TaylorCompact`]: the same kernel using one feature per
//!   multiset of indices, `s^{t/2}·z^α/√(α!)`, giving `r = C(d+g, g)`.
//!
//! Both Taylor lifts satisfy `⟨φ(q), φ(k)⟩ = Σ_{t≤g} (s·qᵀk)^t / t!`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::matrix::{dot, DenseMatrix};

pub const DEFAULT_FEATURE_BUDGET: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    FirstOrder,
    Taylor,
    TaylorCompact,
}

/// Denominator of the kernel exponent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScaleMode {
    /// `exp(qᵀk/√d)`, as used by the attention algorithms.
    #[default]
    InvSqrtD,
    /// `exp(qᵀk/d)`.
    InvD,
}

impl ScaleMode {
    pub fn factor(self, d: usize) -> f64 {
        match self {
            ScaleMode::InvSqrtD => 1.0 / math::sqrt(d as f64),
            ScaleMode::InvD => 1.0 / d as f64,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScaleMode::InvSqrtD => "inv_sqrt_d",
            ScaleMode::InvD => "inv_d",
        }
    }
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::FirstOrder => "first_order",
            FeatureKind::Taylor => "taylor",
            FeatureKind::TaylorCompact => "taylor_compact",
        }
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first_order" => Ok(FeatureKind::FirstOrder),
            "taylor" => Ok(FeatureKind::Taylor),
            "taylor_compact" => Ok(FeatureKind::TaylorCompact),
            other => Err(Error::Parameter(alloc::format!("unknown feature map kind {other:?}"))),
        }
    }
}

impl FromStr for ScaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inv_sqrt_d" => Ok(ScaleMode::InvSqrtD),
            "inv_d" => Ok(ScaleMode::InvD),
            other => Err(Error::Parameter(alloc::format!("unknown scale mode {other:?}"))),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for ScaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which lift to use, on what input dimension, at what Taylor order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureMapSpec {
    pub kind: FeatureKind,
    pub d: usize,
    /// Taylor order `g`; ignored by the first-order map.
    pub order: usize,
    pub scale_mode: ScaleMode,
    /// Largest admissible output dimension `r`.
    pub budget: usize,
}

impl FeatureMapSpec {
    pub fn first_order(d: usize) -> Self {
        Self { kind: FeatureKind::FirstOrder, d, order: 1, scale_mode: ScaleMode::InvSqrtD, budget: DEFAULT_FEATURE_BUDGET }
    }

    pub fn taylor(d: usize, order: usize, scale_mode: ScaleMode) -> Self {
        Self { kind: FeatureKind::Taylor, d, order, scale_mode, budget: DEFAULT_FEATURE_BUDGET }
    }

    pub fn taylor_compact(d: usize, order: usize, scale_mode: ScaleMode) -> Self {
        Self { kind: FeatureKind::TaylorCompact, d, order, scale_mode, budget: DEFAULT_FEATURE_BUDGET }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    /// Exponent scale `s` of the approximated kernel `exp(s·qᵀk)`.
    pub fn scale(&self) -> f64 {
        self.scale_mode.factor(self.d)
    }

    /// Output dimension `r`, or a resource error when it exceeds the budget.
    pub fn output_dim(&self) -> Result<usize> {
        let over = || {
            Error::Resource(alloc::format!(
                "{} feature map with d={} g={} exceeds the budget of {} features",
                self.kind,
                self.d,
                self.order,
                self.budget
            ))
        };
        let r = match self.kind {
            FeatureKind::FirstOrder => Some(self.d),
            FeatureKind::Taylor => {
                let mut total: usize = 0;
                let mut block: usize = 1;
                let mut ok = true;
                for t in 0..=self.order {
                    if t > 0 {
                        match block.checked_mul(self.d) {
                            Some(b) => block = b,
                            None => ok = false,
                        }
                    }
                    match total.checked_add(block) {
                        Some(s) if ok => total = s,
                        _ => ok = false,
                    }
                }
                ok.then_some(total)
            }
            FeatureKind::TaylorCompact => binomial(self.d + self.order, self.order),
        };
        match r {
            Some(r) if r <= self.budget => Ok(r),
            _ => Err(over()),
        }
    }
}

/// `C(n, k)` for `k ≤ n`, with overflow reported as `None`.
fn binomial(n: usize, k: usize) -> Option<usize> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return None;
        }
    }
    usize::try_from(acc).ok()
}

/// `φ(z) = d^{-1/4}·(z∘1[z≥0] + exp(z)∘1[z<0]) + 1`, entrywise.
pub fn phi_first_order(z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    phi_first_order_into(z, &mut out);
    out
}

fn phi_first_order_into(z: &[f64], out: &mut [f64]) {
    let c = math::powf(z.len() as f64, -0.25);
    for (o, &v) in out.iter_mut().zip(z) {
        let lifted = if v >= 0.0 { v } else { math::exp(v) };
        *o = c * lifted + 1.0;
    }
}

/// Full-tensor Taylor lift, features ordered by degree then lexicographically.
pub fn phi_taylor(z: &[f64], spec: &FeatureMapSpec) -> Result<Vec<f64>> {
    if spec.kind != FeatureKind::Taylor {
        return Err(Error::Parameter(alloc::format!("phi_taylor called with a {} spec", spec.kind)));
    }
    check_len(z, spec)?;
    let r = spec.output_dim()?;
    let s = spec.scale();
    let mut out = Vec::with_capacity(r);
    out.push(1.0);
    let mut block = vec![1.0];
    let mut coef = 1.0; // s^{t/2} / √(t!)
    for t in 1..=spec.order {
        let mut next = Vec::with_capacity(block.len() * z.len());
        for &prev in &block {
            for &zi in z {
                next.push(prev * zi);
            }
        }
        coef *= math::sqrt(s / t as f64);
        out.extend(next.iter().map(|v| v * coef));
        block = next;
    }
    Ok(out)
}

/// Compact Taylor lift: one feature per sorted index tuple `i₁ ≤ … ≤ i_t`.
pub fn phi_taylor_compact(z: &[f64], spec: &FeatureMapSpec) -> Result<Vec<f64>> {
    if spec.kind != FeatureKind::TaylorCompact {
        return Err(Error::Parameter(alloc::format!(
            "phi_taylor_compact called with a {} spec",
            spec.kind
        )));
    }
    check_len(z, spec)?;
    let r = spec.output_dim()?;
    let s = spec.scale();
    let mut out = Vec::with_capacity(r);
    out.push(1.0);

    // (z^α / √(α!), last index, multiplicity of the last index)
    let mut level: Vec<(f64, usize, u32)> = vec![(1.0, 0, 0)];
    let mut coef = 1.0; // s^{t/2}
    let s_half = math::sqrt(s);
    for _ in 1..=spec.order {
        let mut next = Vec::new();
        for &(val, last, mult) in &level {
            for (i, &zi) in z.iter().enumerate().skip(last) {
                let m = if i == last && mult > 0 { mult + 1 } else { 1 };
                next.push((val * zi / math::sqrt(f64::from(m)), i, m));
            }
        }
        coef *= s_half;
        out.extend(next.iter().map(|&(v, _, _)| v * coef));
        level = next;
    }
    debug_assert_eq!(out.len(), r);
    Ok(out)
}

fn check_len(z: &[f64], spec: &FeatureMapSpec) -> Result<()> {
    if z.len() != spec.d {
        return Err(shape_err!("feature map expects length {}, got {}", spec.d, z.len()));
    }
    Ok(())
}

/// `φ(z)` for whichever lift `spec` names.
pub fn phi(z: &[f64], spec: &FeatureMapSpec) -> Result<Vec<f64>> {
    match spec.kind {
        FeatureKind::FirstOrder => {
            check_len(z, spec)?;
            Ok(phi_first_order(z))
        }
        FeatureKind::Taylor => phi_taylor(z, spec),
        FeatureKind::TaylorCompact => phi_taylor_compact(z, spec),
    }
}

/// `Φ(A)`: the lift applied to every row, giving an `L × r` matrix.
pub fn apply_feature_map_rows(a: &DenseMatrix, spec: &FeatureMapSpec) -> Result<DenseMatrix> {
    if a.cols() != spec.d {
        return Err(shape_err!("feature map expects {} columns, got {}", spec.d, a.cols()));
    }
    let r = spec.output_dim()?;
    let mut out = DenseMatrix::try_zeros(a.rows(), r)?;
    for i in 0..a.rows() {
        match spec.kind {
            FeatureKind::FirstOrder => phi_first_order_into(a.row(i), out.row_mut(i)),
            _ => out.row_mut(i).copy_from_slice(&phi(a.row(i), spec)?),
        }
    }
    Ok(out)
}

/// `⟨φ(q), φ(k)⟩`.
pub fn kernel_estimate(q: &[f64], k: &[f64], spec: &FeatureMapSpec) -> Result<f64> {
    if q.len() != k.len() {
        return Err(shape_err!("kernel of vectors with lengths {} and {}", q.len(), k.len()));
    }
    Ok(dot(&phi(q, spec)?, &phi(k, spec)?))
}
