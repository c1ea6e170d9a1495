use std::hint::black_box;

use aeric_bench::{calibration_scores, scored_rows};
use aeric_core::calibrate::{select_threshold, CalibrationInput};
use aeric_core::eval::{auroc, BenchFixture};
use aeric_core::monitor::CompiledMonitor;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

fn monitor(c: &mut Criterion) {
    let fixture = BenchFixture {
        traces: 4,
        ..BenchFixture::default()
    };
    let (art, records) = fixture.build().expect("fixture");
    let mon = CompiledMonitor::new(&art).expect("compile");
    let rec = &records[0];

    let mut g = c.benchmark_group("monitor");
    g.throughput(Throughput::Elements(1));
    g.bench_function("step d=4096", |b| {
        let mut stream = mon.start(&rec.prompt_summary).unwrap();
        let h = rec.frame(1);
        b.iter(|| black_box(stream.push(black_box(h)).unwrap()))
    });
    g.bench_function("step detailed d=4096", |b| {
        let mut stream = mon.start(&rec.prompt_summary).unwrap();
        let h = rec.frame(1);
        b.iter(|| black_box(stream.push_detailed(black_box(h)).unwrap()))
    });
    g.throughput(Throughput::Elements(rec.token_count as u64));
    g.bench_function("score_trace T=64 d=4096", |b| {
        b.iter(|| black_box(mon.score_trace(black_box(rec)).unwrap()))
    });
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("metrics");
    for n in [200, 2000, 20000] {
        let rows = scored_rows(n, 1);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_function(format!("auroc n={n}"), |b| {
            b.iter(|| black_box(auroc(black_box(&rows)).unwrap()))
        });
    }
    g.finish();
}

fn calibration(c: &mut Criterion) {
    let mut g = c.benchmark_group("calibration");
    for n in [200, 2000] {
        let (safe, harm) = calibration_scores(n, 2);
        g.throughput(Throughput::Elements(2 * n as u64));
        g.bench_function(format!("select_threshold n={n}"), |b| {
            b.iter_batched(
                || CalibrationInput {
                    safe_max_scores: safe.clone(),
                    harm_window_scores: harm.clone(),
                    budget: 0.1,
                    window: 16,
                },
                |input| black_box(select_threshold(&input).unwrap()),
                BatchSize::SmallInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, monitor, metrics, calibration);
criterion_main!(benches);
