//! Fixed-replay latency of the monitor over recorded frames.
//!
//! Both paths decode every frame from the framed byte stream (the same
//! encoding the `score` command reads on stdin) into a reused buffer. The
//! no-stop path hands each frame to a no-op consumer; the monitored path
//! pushes it through a [`MonitorStream`](crate::monitor::MonitorStream).

use std::hint::black_box;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::featurize::{fit_feature_map, FeatureError, ProjectionMethod};
use crate::linalg::{percentile_sorted, Matrix};
use crate::monitor::framing::{decode_values, encode_frame, FrameSlices};
use crate::monitor::{CompiledMonitor, MonitorArtifact};
use crate::trace_store::{Label, Split, TraceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub reps: usize,
    pub warmup: usize,
    /// Time the no-op path against itself; the overhead should sit in the noise band.
    pub self_check: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            reps: 30,
            warmup: 3,
            self_check: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub traces: usize,
    pub frames: usize,
    pub reps: usize,
    pub mean_ms_nostop: f64,
    pub mean_ms_monitored: f64,
    pub median_ms_nostop: f64,
    pub median_ms_monitored: f64,
    pub p95_ms_nostop: f64,
    pub p95_ms_monitored: f64,
    /// Median-over-median slowdown of the monitored replay, in percent.
    pub overhead_pct: f64,
    /// Relative standard deviation of the no-stop timings, in percent.
    pub noise_pct: f64,
    pub triggered: usize,
}

fn replay_nostop(streams: &[Vec<u8>], frame: &mut Vec<f32>) -> usize {
    let mut consumed = 0;
    for bytes in streams {
        let mut slices = FrameSlices::new(bytes);
        let prompt = slices.next().expect("prompt frame");
        decode_values(prompt, frame);
        black_box(&*frame);
        for raw in slices {
            decode_values(raw, frame);
            black_box(&*frame);
            consumed += 1;
        }
    }
    consumed
}

fn replay_monitored(
    monitor: &CompiledMonitor,
    streams: &[Vec<u8>],
    prompt: &mut Vec<f32>,
    frame: &mut Vec<f32>,
) -> Result<usize, EvalError> {
    let mut triggered = 0;
    for bytes in streams {
        let mut slices = FrameSlices::new(bytes);
        decode_values(slices.next().expect("prompt frame"), prompt);
        let mut stream = monitor.start(prompt)?;
        for raw in slices {
            black_box(stream.push_encoded(raw, frame)?);
            black_box(&*frame);
        }
        triggered += stream.state.triggered as usize;
    }
    Ok(triggered)
}

/// Shape of a synthetic replay workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchFixture {
    pub d: usize,
    pub k: usize,
    pub tokens: usize,
    pub traces: usize,
    pub seed: u64,
}

impl Default for BenchFixture {
    fn default() -> Self {
        Self {
            d: 4096,
            k: 128,
            tokens: 64,
            traces: 64,
            seed: 1,
        }
    }
}

impl BenchFixture {
    /// Random-projection artifact with random heads (never triggers) and
    /// uniform `[-1, 1)` traces. Timing does not depend on the values.
    pub fn build(&self) -> Result<(MonitorArtifact, Vec<TraceRecord>), FeatureError> {
        let (d, k) = (self.d, self.k);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut states = Matrix::with_cols(d);
        for _ in 0..8 {
            let row: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            states.push_row(&row);
        }
        let fm = fit_feature_map(
            &states,
            &states,
            k,
            ProjectionMethod::Random {
                seed: self.seed.wrapping_add(2),
            },
        )?;
        let mut art = MonitorArtifact::untrained(fm, crate::monitor::DEFAULT_LAMBDA, 16);
        for head in [&mut art.hazard, &mut art.support, &mut art.residual] {
            head.weights = (0..k).map(|_| rng.gen_range(-0.5..0.5)).collect();
        }
        art.alpha = 1.0;
        art.beta = 0.5;
        art.threshold = Some(f64::INFINITY);
        let records = (0..self.traces)
            .map(|i| TraceRecord {
                trace_id: format!("bench-{i}"),
                hidden_dim: d,
                token_count: self.tokens,
                prompt_summary: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                frames: (0..d * self.tokens)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect(),
                label: Label::Safe,
                split: Split::Test,
                role_tags: vec![],
                meta: Default::default(),
            })
            .collect();
        Ok((art, records))
    }
}

fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn bench_overhead(
    monitor: &CompiledMonitor,
    records: &[&TraceRecord],
    cfg: &BenchConfig,
) -> Result<BenchReport, EvalError> {
    let streams: Vec<Vec<u8>> = records
        .iter()
        .filter(|r| r.token_count > 0)
        .map(|r| {
            let mut buf = Vec::with_capacity(4 + 4 * r.hidden_dim * (r.token_count + 1));
            encode_frame(&mut buf, &r.prompt_summary);
            for frame in r.frame_rows() {
                encode_frame(&mut buf, frame);
            }
            buf
        })
        .collect();
    let frames: usize = records.iter().map(|r| r.token_count).sum();
    if frames == 0 {
        return Err(EvalError::NoFrames);
    }
    let reps = cfg.reps.max(1);
    let mut prompt = Vec::with_capacity(monitor.d());
    let mut frame = Vec::with_capacity(monitor.d());

    let run_monitored = |prompt: &mut Vec<f32>, frame: &mut Vec<f32>| {
        if cfg.self_check {
            replay_nostop(&streams, frame);
            Ok(0)
        } else {
            replay_monitored(monitor, &streams, prompt, frame)
        }
    };

    for _ in 0..cfg.warmup {
        replay_nostop(&streams, &mut frame);
        run_monitored(&mut prompt, &mut frame)?;
    }
    let mut nostop = Vec::with_capacity(reps);
    let mut monitored = Vec::with_capacity(reps);
    let mut triggered = 0;
    for rep in 0..reps {
        // alternate order so slow drift hits both paths equally
        let time_nostop = |frame: &mut Vec<f32>| {
            let start = Instant::now();
            black_box(replay_nostop(&streams, frame));
            millis(start.elapsed())
        };
        if rep % 2 == 0 {
            nostop.push(time_nostop(&mut frame));
            let start = Instant::now();
            triggered = run_monitored(&mut prompt, &mut frame)?;
            monitored.push(millis(start.elapsed()));
        } else {
            let start = Instant::now();
            triggered = run_monitored(&mut prompt, &mut frame)?;
            monitored.push(millis(start.elapsed()));
            nostop.push(time_nostop(&mut frame));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let pct = |v: &[f64], q: f64| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        percentile_sorted(&s, q)
    };
    let mean_nostop = mean(&nostop);
    let mean_monitored = mean(&monitored);
    if mean_nostop <= 1e-3 {
        return Err(EvalError::TimerResolution(format!(
            "no-stop replay took {mean_nostop:.6} ms per repetition; add traces or frames"
        )));
    }
    let var = nostop
        .iter()
        .map(|t| (t - mean_nostop).powi(2))
        .sum::<f64>()
        / nostop.len() as f64;
    Ok(BenchReport {
        traces: streams.len(),
        frames,
        reps,
        mean_ms_nostop: mean_nostop,
        mean_ms_monitored: mean_monitored,
        median_ms_nostop: pct(&nostop, 0.5),
        median_ms_monitored: pct(&monitored, 0.5),
        p95_ms_nostop: pct(&nostop, 0.95),
        p95_ms_monitored: pct(&monitored, 0.95),
        overhead_pct: (pct(&monitored, 0.5) - pct(&nostop, 0.5)) / pct(&nostop, 0.5) * 100.0,
        noise_pct: var.sqrt() / mean_nostop * 100.0,
        triggered,
    })
}

pub fn format_bench(report: &BenchReport) -> String {
    format!(
        "traces {}  frames {}  reps {}\n\
         no-stop    median {:.3} ms  mean {:.3} ms  p95 {:.3} ms\n\
         monitored  median {:.3} ms  mean {:.3} ms  p95 {:.3} ms\n\
         overhead   {:.2}%  (no-stop noise {:.2}%)\n",
        report.traces,
        report.frames,
        report.reps,
        report.median_ms_nostop,
        report.mean_ms_nostop,
        report.p95_ms_nostop,
        report.median_ms_monitored,
        report.mean_ms_monitored,
        report.p95_ms_monitored,
        report.overhead_pct,
        report.noise_pct
    )
}
