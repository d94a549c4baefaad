use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use feeder::admm::{run_admm, AdmmConfig};
use feeder::config::parse_pv_config;
use feeder::exec::Execution;
use feeder::netmodel::parse_case;
use feeder::opf::{chance_rows, solve_centralized};
use feeder::uncertainty::monte_carlo_violation;

fn bench(c: &mut Criterion) {
    let net = parse_case(include_str!("../../../data/case33bw.m")).unwrap();
    let cfg = parse_pv_config(include_str!("../../../data/pv_fleet33.cfg"), net.base_mva()).unwrap();
    let sol = solve_centralized(&net, &cfg.specs, Some(&cfg.model)).unwrap();
    let rows = chance_rows(&net, &cfg.specs, &cfg.model, &sol).unwrap();

    let mut g = c.benchmark_group("monte_carlo_1e5");
    g.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &e| {
            b.iter(|| monte_carlo_violation(&cfg.model, &rows, 100_000, 1, e).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("admm_case33");
    g.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let a = AdmmConfig { exec, ..Default::default() };
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &a, |b, a| {
            b.iter(|| run_admm(&net, &cfg.specs, Some(&cfg.model), a).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
