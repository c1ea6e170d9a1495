use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use aeric_core::calibrate::{calibration_input, format_report, select_threshold};
use aeric_core::eval::{
    ablation_eval, bench_overhead, format_bench, format_lambda_table, format_ranking_table,
    format_trigger_table, lambda_sweep, AblationMode, BenchConfig, EvalOptions,
};
use aeric_core::monitor::framing::read_frame;
use aeric_core::monitor::{load_artifact, save_artifact, CompiledMonitor, MonitorArtifact};
use aeric_core::pipeline::{assemble, fit_features as fit_train_features, train_heads};
use aeric_core::probes::grid_select as select_grid;
use aeric_core::synth::generate_dataset;
use aeric_core::trace_store::{
    parse_dataset, read_dataset, write_dataset, Label, Split, TraceDataset, TraceRecord,
};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::{Provenance, Reporter};

fn reporter(subcommand: &'static str, cfg: &RunConfig) -> Reporter {
    Reporter {
        dir: cfg.paths.reports.clone(),
        provenance: Provenance::new(subcommand, cfg),
        echo: true,
    }
}

pub fn parse_split(s: &str) -> Result<Split, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "train" => Ok(Split::Train),
        "cal" | "calibration" => Ok(Split::Cal),
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        other => Err(CliError::Config(format!(
            "unknown split {other:?} (train, cal, dev, test)"
        ))),
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<TraceDataset, CliError> {
    let path = RunConfig::require(&cfg.paths.dataset, "dataset")?;
    read_dataset(&path).map_err(|e| with_path(e.into(), &path))
}

fn load_art(path: &Path) -> Result<MonitorArtifact, CliError> {
    load_artifact(path).map_err(|e| with_path(e.into(), path))
}

fn save_art(art: &MonitorArtifact, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| with_path(e.into(), dir))?;
    }
    save_artifact(art, path).map_err(|e| with_path(e.into(), path))
}

fn with_path(e: CliError, path: &Path) -> CliError {
    let p = path.display();
    match e {
        CliError::Io(m) => CliError::Io(format!("{p}: {m}")),
        CliError::Validation(m) => CliError::Validation(format!("{p}: {m}")),
        CliError::Config(m) => CliError::Config(format!("{p}: {m}")),
    }
}

/// Traces with frames and a safe/unsafe label.
fn scorable(ds: &TraceDataset, split: Split) -> Vec<&TraceRecord> {
    ds.split(split)
        .filter(|r| r.token_count > 0 && r.label != Label::PromptOnly)
        .collect()
}

fn nonempty(records: Vec<&TraceRecord>, split: Split) -> Result<Vec<&TraceRecord>, CliError> {
    if records.is_empty() {
        Err(CliError::Validation(format!(
            "split {split} has no scorable traces"
        )))
    } else {
        Ok(records)
    }
}

fn split_counts(ds: &TraceDataset) -> BTreeMap<String, BTreeMap<&'static str, usize>> {
    let mut out: BTreeMap<String, BTreeMap<&'static str, usize>> = BTreeMap::new();
    for r in &ds.records {
        let label = match r.label {
            Label::Safe => "safe",
            Label::Unsafe { .. } => "unsafe",
            Label::PromptOnly => "prompt_only",
        };
        *out.entry(r.split.to_string())
            .or_default()
            .entry(label)
            .or_default() += 1;
    }
    out
}

pub fn gen_synth(cfg: &RunConfig, truth: Option<PathBuf>) -> Result<(), CliError> {
    let out = RunConfig::require(&cfg.paths.out, "out")?;
    let truth = truth.unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".truth.json");
        PathBuf::from(s)
    });
    let (ds, gt) = generate_dataset(&cfg.synth)?;
    write_dataset(&ds, &out).map_err(|e| with_path(e.into(), &out))?;
    let mut doc = serde_json::to_string_pretty(&gt)?;
    doc.push('\n');
    std::fs::write(&truth, doc).map_err(|e| with_path(e.into(), &truth))?;

    let counts = split_counts(&ds);
    let mut text = format!(
        "wrote {} traces (d = {}) to {}\nground truth: {}\n",
        ds.records.len(),
        ds.hidden_dim,
        out.display(),
        truth.display()
    );
    for (split, labels) in &counts {
        let _ = writeln!(text, "  {split:<6} {labels:?}");
    }
    reporter("gen-synth", cfg).emit(
        &text,
        &json!({ "traces": ds.records.len(), "d": ds.hidden_dim, "counts": counts }),
    )
}

pub fn fit_features(cfg: &RunConfig) -> Result<(), CliError> {
    let out = RunConfig::require(&cfg.paths.out, "out")?;
    let ds = load_dataset(cfg)?;
    let fm = fit_train_features(&ds, &cfg.pipeline())?;
    let mut art = MonitorArtifact::untrained(fm, cfg.lambda, cfg.train.horizon as u32);
    let rep = reporter("fit-features", cfg);
    rep.provenance.stamp(&mut art);
    save_art(&art, &out)?;
    let fm = &art.feature_map;
    let text = format!(
        "feature map: d = {}, k = {}, method {:?}\nwrote {}\n",
        fm.d,
        fm.k,
        fm.method,
        out.display()
    );
    rep.emit(&text, &json!({ "d": fm.d, "k": fm.k, "method": fm.method }))
}

fn rho_file(dir: &Path, rho: f64) -> PathBuf {
    dir.join(format!("rho-{rho}.aerm"))
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let out = RunConfig::require(&cfg.paths.heads, "heads")?;
    let features = RunConfig::require(&cfg.paths.artifact, "artifact")?;
    let ds = load_dataset(cfg)?;
    let fm = load_art(&features)?.feature_map;
    if fm.d != ds.hidden_dim {
        return Err(CliError::Validation(format!(
            "feature map expects d = {}, dataset has d = {}",
            fm.d, ds.hidden_dim
        )));
    }
    let pipe = cfg.pipeline();
    let heads = train_heads(&ds, &fm, &pipe)?;
    let rep = reporter("train", cfg);
    let mut text = format!(
        "hazard head converged: {}\nsupport head converged: {}\nunsafe traces skipped for hazard labels: {}\n",
        heads.hazard_converged, heads.support_converged, heads.skipped_for_hazard
    );
    for (rho, _) in &heads.residual {
        // alpha = beta = 0 until grid selection
        let mut art = assemble(&fm, &heads, 0.0, 0.0, *rho, &pipe);
        rep.provenance.stamp(&mut art);
        let path = rho_file(&out, *rho);
        save_art(&art, &path)?;
        let _ = writeln!(text, "wrote {}", path.display());
    }
    let norm = |w: &[f32]| w.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let body = json!({
        "hazard_converged": heads.hazard_converged,
        "support_converged": heads.support_converged,
        "skipped_for_hazard": heads.skipped_for_hazard,
        "weight_norms": {
            "hazard": norm(&heads.hazard.weights),
            "support": norm(&heads.support.weights),
            "residual": heads.residual.iter().map(|(rho, h)| (rho.to_string(), norm(&h.weights))).collect::<BTreeMap<_, _>>(),
        },
    });
    rep.emit(&text, &body)
}

pub fn grid_select(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = RunConfig::require(&cfg.paths.heads, "heads")?;
    let out = RunConfig::require(&cfg.paths.out, "out")?;
    let ds = load_dataset(cfg)?;
    let mut loaded = Vec::new();
    for &rho in &cfg.grids.rho {
        loaded.push((rho, load_art(&rho_file(&dir, rho))?));
    }
    let base = &loaded[0].1;
    for (rho, art) in &loaded[1..] {
        if art.feature_map != base.feature_map
            || art.hazard != base.hazard
            || art.support != base.support
        {
            return Err(CliError::Validation(format!(
                "head artifact for rho = {rho} was trained with a different feature map or shared heads"
            )));
        }
    }
    let residual: Vec<_> = loaded
        .iter()
        .map(|(rho, a)| (*rho, a.residual.clone()))
        .collect();
    let dev = nonempty(scorable(&ds, Split::Dev), Split::Dev)?;
    let grid = select_grid(
        &dev,
        &base.feature_map,
        &base.hazard,
        &base.support,
        &residual,
        &cfg.grids.alpha,
        &cfg.grids.beta,
        cfg.lambda,
    )?;
    let sel = &grid.selected;
    let mut art = loaded
        .iter()
        .find(|(rho, _)| *rho == sel.rho)
        .map(|(_, a)| a.clone())
        .expect("selected rho comes from the loaded set");
    art.alpha = sel.alpha;
    art.beta = sel.beta;
    art.lambda = cfg.lambda;
    let rep = reporter("grid-select", cfg);
    rep.provenance.stamp(&mut art);
    save_art(&art, &out)?;

    let mut text = format!("{:<8} {:<8} {:<8} {:>8}\n", "alpha", "beta", "rho", "AUROC");
    for c in &grid.cells {
        let _ = writeln!(
            text,
            "{:<8} {:<8} {:<8} {:>8.4}",
            c.alpha, c.beta, c.rho, c.auroc
        );
    }
    let _ = writeln!(
        text,
        "selected alpha = {}, beta = {}, rho = {} (dev AUROC {:.4}; {} tied cells lost the tie-break)\nwrote {}",
        sel.alpha,
        sel.beta,
        sel.rho,
        sel.auroc,
        grid.tied,
        out.display()
    );
    rep.emit(&text, &grid)
}

pub fn calibrate(cfg: &RunConfig, split: Split) -> Result<(), CliError> {
    let path = RunConfig::require(&cfg.paths.artifact, "artifact")?;
    let out = RunConfig::require(&cfg.paths.out, "out")?;
    let ds = load_dataset(cfg)?;
    let mut art = load_art(&path)?;
    let records = nonempty(scorable(&ds, split), split)?;
    let monitor = CompiledMonitor::new(&art)?;
    let input = calibration_input(
        &monitor,
        records.iter().copied(),
        cfg.calibration.budget,
        cfg.calibration.window,
    )?;
    let result = select_threshold(&input)?;
    art.threshold = Some(result.threshold);
    art.provenance
        .insert("budget".into(), cfg.calibration.budget.to_string());
    art.provenance
        .insert("window".into(), cfg.calibration.window.to_string());
    let rep = reporter("calibrate", cfg);
    rep.provenance.stamp(&mut art);
    save_art(&art, &out)?;
    let mut text = format_report(std::slice::from_ref(&result));
    let _ = writeln!(text, "wrote {}", out.display());
    rep.emit(&text, &result)
}

#[derive(Serialize)]
struct ScoreSummary {
    frames: usize,
    threshold: f64,
    trigger_step: Option<usize>,
    terminal_m: Option<f64>,
}

pub fn score(cfg: &RunConfig, threshold: Option<f64>) -> Result<(), CliError> {
    let path = RunConfig::require(&cfg.paths.artifact, "artifact")?;
    let art = load_art(&path)?;
    let tau = threshold.or(art.threshold).ok_or_else(|| {
        CliError::Validation("artifact has no threshold; run calibrate or pass --threshold".into())
    })?;
    let monitor = CompiledMonitor::new(&art)?.with_threshold(Some(tau));
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let stdout = std::io::stdout();
    let mut output = BufWriter::new(stdout.lock());
    let (mut frame, mut scratch) = (Vec::new(), Vec::new());
    if !read_frame(&mut input, &mut frame, &mut scratch)? {
        return Err(CliError::Validation(
            "empty stream: expected a prompt-summary frame".into(),
        ));
    }
    let mut stream = monitor.start(&frame)?;
    let mut last = None;
    while read_frame(&mut input, &mut frame, &mut scratch)? {
        let s = stream.push_detailed(&frame)?;
        writeln!(
            output,
            "{} {} {} {} {} {} {}",
            s.t, s.m, s.g, s.f, s.c, s.r, s.triggered as u8
        )?;
        last = Some(s.m);
    }
    output.flush()?;
    let summary = ScoreSummary {
        frames: stream.state.t,
        threshold: tau,
        trigger_step: stream.state.trigger_step,
        terminal_m: last,
    };
    let text = format!(
        "scored {} frames; trigger step {}\n",
        summary.frames,
        summary
            .trigger_step
            .map_or("none".to_string(), |s| s.to_string())
    );
    eprint!("{text}");
    Reporter {
        echo: false,
        ..reporter("score", cfg)
    }
    .emit(&text, &summary)
}

fn eval_options(cfg: &RunConfig) -> EvalOptions {
    EvalOptions {
        n_boot: cfg.eval.n_boot,
        level: cfg.eval.level,
        seed: cfg.eval.seed,
        trigger_ks: cfg.eval.ks.clone(),
    }
}

pub fn eval(cfg: &RunConfig, split: Split, mode: Option<AblationMode>) -> Result<(), CliError> {
    let path = RunConfig::require(&cfg.paths.artifact, "artifact")?;
    let ds = load_dataset(cfg)?;
    let art = load_art(&path)?;
    let records = nonempty(scorable(&ds, split), split)?;
    let modes: Vec<AblationMode> = match mode {
        Some(m) => vec![m],
        None => AblationMode::ALL.to_vec(),
    };
    let opts = eval_options(cfg);
    let reports = modes
        .iter()
        .map(|&m| ablation_eval(&art, &records, m, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let mut text = format!(
        "split {split}: {} traces, {} unsafe; {} bootstrap replicates, seed {}\n\n",
        reports[0].n_rows, reports[0].n_positive, opts.n_boot, opts.seed
    );
    text.push_str(&format_ranking_table(&reports));
    text.push('\n');
    text.push_str(&format_trigger_table(&reports));
    reporter("eval", cfg).emit(&text, &reports)
}

pub fn sweep_lambda(cfg: &RunConfig, split: Split) -> Result<(), CliError> {
    let path = RunConfig::require(&cfg.paths.artifact, "artifact")?;
    let ds = load_dataset(cfg)?;
    let art = load_art(&path)?;
    let records = nonempty(scorable(&ds, split), split)?;
    let sweep = lambda_sweep(&art, &records, &cfg.grids.lambda_set)?;
    reporter("sweep-lambda", cfg).emit(&format_lambda_table(&sweep), &sweep)
}

pub fn bench(cfg: &RunConfig, split: Split) -> Result<(), CliError> {
    let bcfg = BenchConfig {
        reps: cfg.bench.reps,
        warmup: cfg.bench.warmup,
        self_check: cfg.bench.self_check,
    };
    let (art, owned, source) = match (&cfg.paths.artifact, &cfg.paths.dataset) {
        (Some(a), Some(_)) => {
            let art = load_art(a)?;
            let ds = load_dataset(cfg)?;
            let records: Vec<TraceRecord> = scorable(&ds, split).into_iter().cloned().collect();
            (art, records, format!("dataset split {split}"))
        }
        (None, None) => {
            let f = cfg.bench.fixture;
            let (art, records) = f.build()?;
            let source = format!(
                "synthetic fixture d = {}, k = {}, T = {}, {} traces",
                f.d, f.k, f.tokens, f.traces
            );
            (art, records, source)
        }
        _ => {
            return Err(CliError::Config(
                "bench needs both --artifact and --dataset, or neither (synthetic fixture)".into(),
            ))
        }
    };
    let refs: Vec<&TraceRecord> = owned.iter().collect();
    let monitor = CompiledMonitor::new(&art)?;
    let report = bench_overhead(&monitor, &refs, &bcfg)?;
    let text = format!("workload: {source}\n{}", format_bench(&report));
    reporter("bench", cfg).emit(&text, &report)
}

pub fn inspect(cfg: &RunConfig) -> Result<(), CliError> {
    let path = RunConfig::require(&cfg.paths.artifact, "artifact")?;
    let art = load_art(&path)?;
    let k = art.k();
    let params = art.trainable_parameters();
    let expected = 3 * (k + 1);
    let mut text = String::new();
    let _ = writeln!(text, "artifact: {}", path.display());
    let _ = writeln!(text, "version: {}", art.version);
    let _ = writeln!(text, "hidden dim d: {}", art.d());
    let _ = writeln!(text, "projection dim k: {k} ({:?})", art.feature_map.method);
    let _ = writeln!(
        text,
        "alpha: {}  beta: {}  lambda: {}",
        art.alpha, art.beta, art.lambda
    );
    let _ = writeln!(
        text,
        "threshold: {}",
        art.threshold.map_or("unset".to_string(), |t| t.to_string())
    );
    let _ = writeln!(text, "horizon H: {}", art.horizon);
    let _ = writeln!(text, "trainable head parameters: {params}");
    let _ = writeln!(
        text,
        "parameter check 3 x (k + 1) = {expected}: {}",
        if params == expected { "ok" } else { "MISMATCH" }
    );
    let _ = writeln!(text, "stored scalars: {}", art.stored_scalars());
    for (key, value) in &art.provenance {
        let _ = writeln!(text, "provenance {key}: {value}");
    }
    let body = json!({
        "version": art.version,
        "d": art.d(),
        "k": k,
        "method": art.feature_map.method,
        "alpha": art.alpha,
        "beta": art.beta,
        "lambda": art.lambda,
        "threshold": art.threshold,
        "horizon": art.horizon,
        "trainable_parameters": params,
        "stored_scalars": art.stored_scalars(),
        "provenance": art.provenance,
    });
    reporter("inspect", cfg).emit(&text, &body)?;
    if params != expected {
        return Err(CliError::Validation(format!(
            "trainable parameter count {params} != {expected}"
        )));
    }
    Ok(())
}

pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let rep = reporter("validate", cfg);
    match (&cfg.paths.dataset, &cfg.paths.artifact) {
        (Some(path), None) => {
            let bytes = std::fs::read(path).map_err(|e| with_path(e.into(), path))?;
            let violations = match parse_dataset(&bytes) {
                Ok(ds) => ds.violations(),
                Err(e) => vec![("<container>".to_string(), e.to_string())],
            };
            let mut text = String::new();
            for (id, v) in &violations {
                let _ = writeln!(text, "{id}: {v}");
            }
            let _ = writeln!(
                text,
                "{}: {} violation(s)",
                path.display(),
                violations.len()
            );
            rep.emit(&text, &json!({ "violations": violations }))?;
            if violations.is_empty() {
                Ok(())
            } else {
                Err(CliError::Validation(format!(
                    "{} failed validation",
                    path.display()
                )))
            }
        }
        (None, Some(path)) => {
            let art = load_art(path)?;
            let text = format!(
                "{}: artifact ok (d = {}, k = {})\n",
                path.display(),
                art.d(),
                art.k()
            );
            rep.emit(&text, &json!({ "violations": [] }))
        }
        _ => Err(CliError::Config(
            "validate takes exactly one of --dataset or --artifact".into(),
        )),
    }
}
