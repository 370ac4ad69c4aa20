use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use serp_audit::compare::{pairwise_compare, AgentRanking, Metric, MetricSettings};
use serp_audit::orchestrator::AgentConfig;
use serp_audit::sim::{Layout, Requester, SimEngineSpec};
use serp_audit::stats::{permutation_test, Effect};
use serp_audit::{AgentId, BrowserId, EngineId, Execution, MachineId, QueryId, RankedList};

const STRATEGIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn fleet(n: usize) -> Vec<AgentRanking> {
    let q = QueryId::new("us elections");
    let engines: Vec<SimEngineSpec> = (0..6)
        .map(|k| {
            let pool = (0..150).map(|i| format!("https://d{}.test/{k}/{i}", i % 40)).collect();
            SimEngineSpec::new(format!("e{k}"), Layout::Classic, 1)
                .with_ranking(q.as_str(), pool)
                .with_volatility(0.5)
        })
        .collect();
    (0..n)
        .map(|i| {
            let spec = &engines[i % 6];
            let agent = AgentId::new(format!("a{i:03}"));
            let browser = BrowserId::new(if (i / 6) % 2 == 0 { "chrome" } else { "firefox" });
            let list = spec
                .ranking(&q, Requester { agent: &agent, browser: &browser, session: 0 })
                .unwrap();
            AgentRanking {
                agent: AgentConfig {
                    machine: MachineId::new(format!("m{:03}", i / 2)),
                    agent,
                    browser,
                    engine: EngineId::new(spec.engine.as_str()),
                },
                query: q.clone(),
                list: RankedList::new(list).unwrap(),
            }
        })
        .collect()
}

fn bench_pairwise(c: &mut Criterion) {
    let lists = fleet(192);
    let settings = MetricSettings::default();
    let mut g = c.benchmark_group("pairwise_compare_192");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| pairwise_compare(black_box(&lists), &settings, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_permutation(c: &mut Criterion) {
    let lists: Vec<AgentRanking> = fleet(192).into_iter().filter(|l| l.agent.engine.as_str() == "e0").collect();
    let recs = pairwise_compare(&lists, &MetricSettings::default(), Execution::Sequential).unwrap();
    let effect = Effect::Browser {
        a: BrowserId::new("chrome"),
        b: BrowserId::new("firefox"),
    };
    let mut g = c.benchmark_group("permutation_test_2000");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| permutation_test(black_box(&recs), &effect, Metric::Rbo95, 2000, 7, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_pairwise, bench_permutation);
criterion_main!(benches);
