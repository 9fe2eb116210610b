//! Wall-clock timing of prefix attention against NTK-Attention as the prefix grows.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use ntk_attn_core::feature_map::FeatureMapSpec;
use ntk_attn_core::ntk_attention::ntk_attention_forward;
use ntk_attn_core::{compress_prefix, count_params, prefix_attention, DenseMatrix, NtkAttnModel, ParamKind, PrefixModel, SeededRng};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Prefix,
    Ntk,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Prefix => "prefix",
            Algo::Ntk => "ntk",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "prefix" => Ok(Algo::Prefix),
            "ntk" => Ok(Algo::Ntk),
            other => Err(format!("unknown algorithm {other:?} (expected prefix or ntk)")),
        }
    }
}

/// A ready-to-run forward pass.
pub enum Workload {
    Prefix(PrefixModel),
    Ntk(NtkAttnModel),
}

impl Workload {
    fn run(&self, x: &DenseMatrix) -> DenseMatrix {
        match self {
            Workload::Prefix(m) => prefix_attention(m, x),
            Workload::Ntk(m) => ntk_attention_forward(m, x),
        }
        .expect("benchmark shapes are consistent")
    }
}

/// Seconds for one forward pass; the output is summed and passed through `black_box`.
pub fn time_once(work: &Workload, x: &DenseMatrix) -> f64 {
    let start = Instant::now();
    let out = work.run(black_box(x));
    let checksum: f64 = out.data().iter().sum();
    black_box(checksum);
    start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchConfig {
    pub d: usize,
    pub ls: Vec<usize>,
    pub ms: Vec<usize>,
    pub trials: usize,
    pub algos: Vec<Algo>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            d: 32,
            ls: vec![32, 64, 128, 256],
            ms: (0..=16).map(|e| 1usize << e).collect(),
            trials: 50,
            algos: vec![Algo::Prefix, Algo::Ntk],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub algo: Algo,
    pub m: usize,
    pub l: usize,
    pub d: usize,
    pub params: usize,
    pub trial: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub algo: Algo,
    pub m: usize,
    pub l: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<BenchRow>,
    pub skipped: Vec<Skipped>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub algo: Algo,
    pub m: usize,
    pub l: usize,
    pub d: usize,
    pub params: usize,
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

fn build(algo: Algo, d: usize, m: usize, l: usize, rng: &mut SeededRng) -> ntk_attn_core::Result<(Workload, DenseMatrix, usize)> {
    let scale = 1.0 / (d as f64).sqrt();
    let w_q = rng.gaussian_matrix(d, d, scale)?;
    let w_k = rng.gaussian_matrix(d, d, scale)?;
    let w_v = rng.gaussian_matrix(d, d, scale)?;
    let mut prefix_p = DenseMatrix::try_zeros(m, d)?;
    for v in prefix_p.data_mut() {
        *v = rng.uniform_range(-1.0, 1.0);
    }
    let prefix = PrefixModel::new(w_q, w_k, w_v, prefix_p)?;
    let x = rng.uniform_matrix(l, d, 1.0);
    Ok(match algo {
        Algo::Prefix => (Workload::Prefix(prefix), x, count_params(ParamKind::Prefix, m, d, 0)),
        Algo::Ntk => {
            let model = compress_prefix(&prefix, &FeatureMapSpec::first_order(d))?;
            let r = model.r();
            (Workload::Ntk(model), x, count_params(ParamKind::Ntk, m, d, r))
        }
    })
}

/// Times every `(algo, L, m)` configuration; rows come out in that nesting order.
///
/// Each configuration gets fresh inputs and one discarded warm-up pass.
/// Within an `(algo, L)` group the timed passes run round-robin over the
/// prefix lengths, so slow drift in machine speed affects every `m` alike.
pub fn bench_sweep(cfg: &BenchConfig, rng: &mut SeededRng) -> SweepResult {
    assert!(cfg.trials >= 1, "at least one trial");
    let mut result = SweepResult::default();
    for &algo in &cfg.algos {
        for &l in &cfg.ls {
            let mut group = Vec::new();
            for &m in &cfg.ms {
                match build(algo, cfg.d, m, l, rng) {
                    Ok((work, x, params)) => {
                        time_once(&work, &x);
                        group.push((m, work, x, params, Vec::with_capacity(cfg.trials)));
                    }
                    Err(e) => result.skipped.push(Skipped { algo, m, l, reason: e.to_string() }),
                }
            }
            for _ in 0..cfg.trials {
                for (_, work, x, _, times) in group.iter_mut() {
                    times.push(time_once(work, x));
                }
            }
            for (m, _, _, params, times) in group {
                for (trial, seconds) in times.into_iter().enumerate() {
                    result.rows.push(BenchRow { algo, m, l, d: cfg.d, params, trial, seconds });
                }
            }
        }
    }
    result
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One summary per configuration, in the order configurations first appear.
pub fn summarize(rows: &[BenchRow]) -> Vec<SummaryRow> {
    let mut out: Vec<(SummaryRow, Vec<f64>)> = Vec::new();
    for r in rows {
        let key = (r.algo, r.m, r.l, r.d);
        match out.iter_mut().find(|(s, _)| (s.algo, s.m, s.l, s.d) == key) {
            Some((_, times)) => times.push(r.seconds),
            None => out.push((
                SummaryRow { algo: r.algo, m: r.m, l: r.l, d: r.d, params: r.params, min: 0.0, mean: 0.0, median: 0.0, max: 0.0 },
                vec![r.seconds],
            )),
        }
    }
    out.into_iter()
        .map(|(mut s, times)| {
            s.min = times.iter().copied().fold(f64::INFINITY, f64::min);
            s.max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            s.mean = times.iter().sum::<f64>() / times.len() as f64;
            s.median = median(&times);
            s
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

pub const ROWS_HEADER: &str = "algo,m,L,d,params,trial,seconds";
pub const SUMMARY_HEADER: &str = "algo,m,L,d,params,min,mean,median,max";

pub fn rows_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(ROWS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{},{},{},{:e}\n", r.algo, r.m, r.l, r.d, r.params, r.trial, r.seconds));
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:e},{:e},{:e},{:e}\n",
            s.algo, s.m, s.l, s.d, s.params, s.min, s.mean, s.median, s.max
        ));
    }
    out
}
