use ntk_attn::bench::{bench_sweep, summarize, Algo, BenchConfig};
use ntk_attn_core::SeededRng;

#[test]
fn prefix_cost_doubles_and_ntk_cost_is_flat() {
    let prefix = BenchConfig { d: 32, ls: vec![128], ms: vec![1 << 10, 1 << 11], trials: 15, algos: vec![Algo::Prefix] };
    let ntk = BenchConfig { ms: vec![1 << 6, 1 << 14], algos: vec![Algo::Ntk], ..prefix.clone() };

    let p = summarize(&bench_sweep(&prefix, &mut SeededRng::new(1)).rows);
    let ratio = p[1].median / p[0].median;
    assert!((1.5..=3.0).contains(&ratio), "prefix median ratio {ratio}");

    let n = summarize(&bench_sweep(&ntk, &mut SeededRng::new(2)).rows);
    let ratio = n[1].median / n[0].median;
    assert!(ratio <= 1.2, "ntk median ratio {ratio}");
}
