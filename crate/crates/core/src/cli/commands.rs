use super::output::{comparison_text, csv_string, to_json, write_file, CompareReport, CsvRow, SimulateReport, SweepPoint};
use super::{parse_percentiles, CliError, CommonOpts, ExperimentConfig};
use crate::cache::{compare_policies, render_table, simulate, Policy, PolicyKind};
use crate::gmm::{features, fit_em, read_model, select_threshold, GmmModel, TrainReport};
use crate::trace::{generate_synthetic, parse_trace, preprocess, write_trace, PreprocessConfig, Sample, TraceRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

const MODEL_FILE: &str = "model.gmm";
const TRAIN_FILE: &str = "train.json";

/// Contents of train.json, written next to the model.
#[derive(Debug, Serialize, Deserialize)]
struct TrainOutput {
    config: ExperimentConfig,
    trace_sha256: String,
    model_sha256: String,
    train_samples: usize,
    threshold: f64,
    report: TrainReport,
}

fn load_config(opts: &CommonOpts) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &opts.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(path) = &opts.trace {
        cfg.trace.path = Some(path.clone());
        cfg.trace.synthetic = None;
    }
    if opts.max_records.is_some() {
        cfg.max_records = opts.max_records;
    }
    if let Some(p) = &opts.percentile {
        cfg.percentile = parse_percentiles(p)?[0];
    }
    cfg.resolve_seeds(opts.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn load_records(cfg: &ExperimentConfig) -> Result<Vec<TraceRecord>, CliError> {
    if let Some(path) = &cfg.trace.path {
        let file = File::open(path).map_err(|e| CliError::Data(format!("cannot open trace {}: {e}", path.display())))?;
        return Ok(parse_trace(BufReader::new(file), cfg.max_records)?);
    }
    let spec = cfg.trace.synthetic.as_ref().expect("validated trace source");
    let mut records = generate_synthetic(spec, cfg.seed)?;
    if let Some(n) = cfg.max_records {
        records.truncate(n);
    }
    Ok(records)
}

/// Resolves, parses and preprocesses the configured trace. Returns the
/// trace fingerprint alongside the samples.
pub fn load_samples(cfg: &ExperimentConfig) -> Result<(String, Vec<Sample>), CliError> {
    let records = load_records(cfg)?;
    let fingerprint = trace_fingerprint(&records, &cfg.preprocess);
    let samples = preprocess(&records, &cfg.preprocess)?;
    Ok((fingerprint, samples))
}

/// SHA-256 over the canonical trace text and the preprocessing parameters.
pub fn trace_fingerprint(records: &[TraceRecord], pre: &PreprocessConfig) -> String {
    let mut text = Vec::new();
    write_trace(&mut text, records).expect("writing to memory");
    let mut h = Sha256::new();
    h.update(&text);
    h.update(serde_json::to_vec(pre).expect("plain struct"));
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Leading share used for training and the samples to simulate.
fn split(samples: &[Sample], train_fraction: f64) -> (&[Sample], &[Sample]) {
    if train_fraction >= 1.0 {
        return (samples, samples);
    }
    let n = ((samples.len() as f64 * train_fraction).ceil() as usize).clamp(1, samples.len());
    let (train, rest) = samples.split_at(n);
    (train, if rest.is_empty() { train } else { rest })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

pub fn cmd_gen_trace(opts: &CommonOpts) -> Result<(), CliError> {
    let mut cfg = match &opts.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => return Err(CliError::Usage("gen-trace needs --config with a [trace.synthetic] section".into())),
    };
    cfg.resolve_seeds(opts.seed);
    let Some(spec) = &cfg.trace.synthetic else {
        return Err(CliError::Data("config has no [trace.synthetic] section".into()));
    };
    spec.validate()?;
    let mut records = generate_synthetic(spec, cfg.seed)?;
    if let Some(n) = opts.max_records.or(cfg.max_records) {
        records.truncate(n);
    }
    ensure_dir(&opts.out)?;
    let path = opts.out.join("trace.txt");
    let file = File::create(&path).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    write_trace(&mut w, &records)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    println!("{} records written to {}", records.len(), path.display());
    Ok(())
}

pub fn cmd_train(opts: &CommonOpts) -> Result<(), CliError> {
    let cfg = load_config(opts)?;
    let (fingerprint, samples) = load_samples(&cfg)?;
    let (train, _) = split(&samples, cfg.train_fraction);
    let points = features(train);
    let (mut model, report) = fit_em(&points, cfg.components, &cfg.em)?;
    let threshold = select_threshold(&mut model, &points, cfg.percentile)?;

    let model_path = opts.model.clone().unwrap_or_else(|| opts.out.join(MODEL_FILE));
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let text = model.to_text();
    fs::write(&model_path, &text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", model_path.display())))?;
    let out = TrainOutput {
        config: cfg,
        trace_sha256: fingerprint,
        model_sha256: hex(&Sha256::digest(text.as_bytes())),
        train_samples: train.len(),
        threshold,
        report,
    };
    let train_json = train_json_path(&model_path);
    fs::write(&train_json, to_json(&out)?)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", train_json.display())))?;

    println!("iterations        {}", out.report.iterations);
    println!("converged         {}", out.report.converged);
    println!("log-likelihood    {:.6}", out.report.final_log_likelihood);
    println!("threshold (p{})  {:.6e}", out.config.percentile, threshold);
    println!("model             {}", model_path.display());
    Ok(())
}

fn train_json_path(model_path: &Path) -> PathBuf {
    model_path.with_file_name(TRAIN_FILE)
}

/// Reads the model and checks it was trained on the same trace.
fn load_model(path: &Path, fingerprint: &str, allow_mismatch: bool) -> Result<(GmmModel, String), CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read model {}: {e}", path.display())))?;
    let model = read_model(text.as_bytes())?;
    let train_json = train_json_path(path);
    if !allow_mismatch && train_json.exists() {
        let echo = fs::read_to_string(&train_json)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", train_json.display())))?;
        let echo: TrainOutput =
            serde_json::from_str(&echo).map_err(|e| CliError::Data(format!("{}: {e}", train_json.display())))?;
        if echo.trace_sha256 != fingerprint {
            return Err(CliError::Data(format!(
                "model {} was trained on a different trace or preprocessing (pass --allow-mismatch to override)",
                path.display()
            )));
        }
    }
    Ok((model, hex(&Sha256::digest(text.as_bytes()))))
}

fn model_path(opts: &CommonOpts) -> Option<PathBuf> {
    opts.model.clone().or_else(|| {
        let p = opts.out.join(MODEL_FILE);
        p.exists().then_some(p)
    })
}

pub fn cmd_simulate(opts: &CommonOpts) -> Result<(), CliError> {
    let kind: PolicyKind = opts.policy.as_deref().unwrap_or("lru").parse()?;
    let cfg = load_config(opts)?;
    let (fingerprint, samples) = load_samples(&cfg)?;
    let (train, eval) = split(&samples, cfg.train_fraction);

    let mut model = None;
    let mut model_sha = None;
    if kind.uses_model() {
        let Some(path) = model_path(opts) else {
            return Err(CliError::Usage(format!("policy {kind} needs --model")));
        };
        let (m, sha) = load_model(&path, &fingerprint, opts.allow_mismatch)?;
        model = Some(m);
        model_sha = Some(sha);
    }
    let mut percentile = None;
    if let Some(m) = model.as_mut() {
        if opts.percentile.is_some() || m.threshold().is_none() {
            select_threshold(m, &features(train), cfg.percentile)?;
            percentile = Some(cfg.percentile);
        }
    }
    let policy = Policy::new(kind, model.as_ref())?;
    let report = simulate(eval, &cfg.cache, policy)?;

    let json = to_json(&SimulateReport {
        command: "simulate",
        config: &cfg,
        trace_sha256: &fingerprint,
        model_sha256: model_sha.as_deref(),
        percentile,
        report: &report,
    })?;
    let table = render_table(std::slice::from_ref(&report));
    let csv = csv_string(&[CsvRow::from_single(&report, percentile)])?;
    ensure_dir(&opts.out)?;
    write_file(&opts.out, "report.json", &json)?;
    write_file(&opts.out, "report.csv", &csv)?;
    write_file(&opts.out, "report.txt", &table)?;
    print!("{table}");
    Ok(())
}

pub fn cmd_compare(opts: &CommonOpts) -> Result<(), CliError> {
    let cfg = load_config(opts)?;
    let percentiles = match &opts.percentile {
        Some(p) => parse_percentiles(p)?,
        None => vec![cfg.percentile],
    };
    let (fingerprint, samples) = load_samples(&cfg)?;
    let (train, eval) = split(&samples, cfg.train_fraction);
    let Some(path) = model_path(opts) else {
        return Err(CliError::Usage("compare needs --model".into()));
    };
    let (model, model_sha) = load_model(&path, &fingerprint, opts.allow_mismatch)?;
    let points = features(train);

    let mut sweep = Vec::with_capacity(percentiles.len());
    for &p in &percentiles {
        let mut m = model.clone();
        let threshold = select_threshold(&mut m, &points, p)?;
        let comparison = compare_policies(eval, &cfg.cache, &m)?;
        sweep.push(SweepPoint { percentile: p, threshold, comparison });
    }

    let mut rows = Vec::new();
    let mut text = String::new();
    for pt in &sweep {
        rows.extend(CsvRow::from_comparison(&pt.comparison, Some(pt.percentile)));
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&comparison_text(&pt.comparison, pt.percentile, pt.threshold));
    }
    let json = to_json(&CompareReport {
        command: "compare",
        config: &cfg,
        trace_sha256: &fingerprint,
        model_sha256: &model_sha,
        sweep: &sweep,
    })?;
    let csv = csv_string(&rows)?;
    ensure_dir(&opts.out)?;
    write_file(&opts.out, "report.json", &json)?;
    write_file(&opts.out, "report.csv", &csv)?;
    write_file(&opts.out, "report.txt", &text)?;
    print!("{text}");
    Ok(())
}
