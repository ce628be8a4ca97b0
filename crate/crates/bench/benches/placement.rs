use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ctxadapt_bench::crowded_ring;
use ctxadapt_core::adaptation::{observe, select_deployment, ObservationMemory};
use ctxadapt_core::kernel::QosWeights;

fn placement(c: &mut Criterion) {
    let mut g = c.benchmark_group("select_deployment");
    // 3^4 and 4^6 are searched exhaustively, 4^8 by hill climbing
    for (comps, hosts) in [(4, 3), (6, 4), (8, 4), (12, 6)] {
        let k = crowded_ring(comps, hosts);
        let obs = observe(&k, 0, &mut ObservationMemory::default());
        let w = QosWeights::default();
        g.bench_with_input(BenchmarkId::from_parameter(format!("{comps}x{hosts}")), &(), |b, _| {
            b.iter(|| select_deployment(k.model(), &obs, &w).expect("feasible"))
        });
    }
    g.finish();
}

criterion_group!(benches, placement);
criterion_main!(benches);
