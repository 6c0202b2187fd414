//! Subcommand bodies.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use beamkit::channel::{self, attach_labels, checksum, write_atomic, Dataset, DatasetKind, DatasetSpec, PathLoss};
use beamkit::gnn::{load_params, save_params, ArchSpec, Mode};
use beamkit::model::Scheme;
use beamkit::sca::{grid_oracle, sca_solve, GridSpec, ScaOptions, GRID_MAX_USERS};
use beamkit::trainer::{evaluate, train as fit, EvalReport, Strategy, TrainConfig};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::failure::{NumericFailure, UsageError};
use crate::manifest::{display, manifest_for, manifest_name, InputRef, RunManifest};
use crate::settings::Settings;
use crate::{BaselineArgs, EvalArgs, GenArgs, TrainArgs};

pub const THREADS_ENV: &str = "BEAMKIT_THREADS";

/// Prints a line to stdout; a closed pipe is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn path_flag(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.display().to_string())
}

/// Parses a lowercase serde enum name.
fn enum_value<T: DeserializeOwned>(key: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| UsageError(format!("--{key}: unknown value '{s}'")).into())
}

fn dataset_input(path: &Path) -> Result<(Dataset, InputRef)> {
    let ds = channel::load(path).with_context(|| format!("loading dataset {}", path.display()))?;
    let crc = channel::read_manifest(path)?.checksum_crc64;
    Ok((
        ds,
        InputRef {
            path: display(path),
            crc64: crc,
        },
    ))
}

/// Worker count from the environment, or rayon's default.
fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(UsageError(format!("{THREADS_ENV} must be a positive integer, got '{v}'")).into()),
        },
        Err(_) => Ok(None),
    }
}

pub fn gen(a: GenArgs, config: Option<&Path>) -> Result<()> {
    let mut s = Settings::load(
        config,
        &["nt", "k", "gamma", "xi", "count", "seed", "kind", "path-loss", "p-max", "p-circuit", "out"],
    )?;
    let out = PathBuf::from(s.require::<String>("out", path_flag(a.out))?);
    let nt = s.require("nt", a.nt)?;
    let ks = s.list("k", a.k)?;
    if ks.is_empty() {
        return Err(UsageError("--k is required".into()).into());
    }
    let mut sorted = ks.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != ks.len() {
        return Err(UsageError("--k values must be distinct".into()).into());
    }
    let gamma = s.require("gamma", a.gamma)?;
    let xi = s.require("xi", a.xi)?;
    let count = s.require("count", a.count)?;
    let seed = s.pick("seed", a.seed, 0u64)?;
    let kind: DatasetKind = enum_value("kind", &s.pick("kind", a.kind, "both".to_string())?)?;
    let path_loss: PathLoss = enum_value("path-loss", &s.pick("path-loss", a.path_loss, "normalized".to_string())?)?;
    let mut spec = DatasetSpec::new(nt, ks[0], gamma, xi, count, seed);
    spec.k_users_list = ks;
    spec.kind = kind;
    spec.path_loss = path_loss;
    spec.p_max = s.pick("p-max", a.p_max, spec.p_max)?;
    spec.p_circuit = s.pick("p-circuit", a.p_circuit, spec.p_circuit)?;
    if !(spec.p_max > 0.0) || !(spec.p_circuit >= 0.0) {
        return Err(UsageError("--p-max must be positive and --p-circuit non-negative".into()).into());
    }

    let t0 = Instant::now();
    let ds = channel::generate(&spec)?;
    let dm = channel::save(&ds, &out)?;
    let mut m = RunManifest::new("gen", s.snapshot());
    m.seeds.insert("dataset".into(), seed);
    m.outputs = vec![display(&out), display(&channel::manifest_path(&out))];
    m.wall_time_s = t0.elapsed().as_secs_f64();
    m.write(&manifest_for(&out))?;
    emit(&format!(
        "wrote {} samples (K = {:?}, N_T = {nt}) to {} [crc64 {}]",
        ds.len(),
        spec.k_users_list,
        out.display(),
        dm.checksum_crc64
    ))?;
    Ok(())
}

/// One baseline result; `ee` is absent when the sample could not be solved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub index: usize,
    pub ee: Option<f64>,
    pub iterations: usize,
    pub feasible: bool,
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelFile {
    pub manifest: String,
    pub method: String,
    pub samples: usize,
    pub feasible: usize,
    pub mean_iterations: f64,
    pub labels: Vec<Label>,
}

impl LabelFile {
    /// Per-sample label values; `NaN` where no feasible optimum exists.
    pub fn values(&self) -> Vec<f64> {
        self.labels
            .iter()
            .map(|l| match (l.feasible, l.ee) {
                (true, Some(v)) => v,
                _ => f64::NAN,
            })
            .collect()
    }
}

enum Method {
    Sca(ScaOptions),
    Grid(Vec<Scheme>, GridSpec),
}

fn label_one(ds: &Dataset, i: usize, method: &Method) -> Label {
    let ch = &ds.samples[i];
    let cfg = ds.system_config(i);
    let t0 = Instant::now();
    let out = match method {
        Method::Sca(opts) => sca_solve(ch, &cfg, opts).map(|r| {
            let it = r.iterations();
            (r.report, it)
        }),
        Method::Grid(schemes, grid) => {
            let mut best: Option<beamkit::model::PerfReport> = None;
            let mut last_err = None;
            let mut evaluated = 0;
            for s in schemes {
                match grid_oracle(ch, &cfg, *s, *grid) {
                    Ok(g) => {
                        evaluated += g.evaluated;
                        if best.as_ref().map_or(true, |b| g.report.ee > b.ee) {
                            best = Some(g.report);
                        }
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            match (best, last_err) {
                (Some(r), _) => Ok((r, evaluated)),
                (None, Some(e)) => Err(e),
                (None, None) => unreachable!("at least one scheme is searched"),
            }
        }
    };
    let wall_time = t0.elapsed().as_secs_f64();
    match out {
        Ok((report, iterations)) => Label {
            index: i,
            ee: Some(report.ee),
            iterations,
            feasible: report.feasible,
            wall_time,
            error: None,
        },
        Err(e) => Label {
            index: i,
            ee: None,
            iterations: 0,
            feasible: false,
            wall_time,
            error: Some(e.to_string()),
        },
    }
}

pub fn baseline(a: BaselineArgs, config: Option<&Path>) -> Result<()> {
    let mut s = Settings::load(
        config,
        &["data", "out", "max-outer", "tol", "scheme", "power-step", "alpha-step", "attach"],
    )?;
    let data = PathBuf::from(s.require::<String>("data", path_flag(a.data))?);
    let out = PathBuf::from(s.require::<String>("out", path_flag(a.out))?);
    let attach = s.optional::<String>("attach", path_flag(a.attach))?.map(PathBuf::from);
    let method = match a.method.as_str() {
        "sca" => {
            if a.scheme.is_some() || a.power_step.is_some() || a.alpha_step.is_some() {
                return Err(UsageError("--scheme, --power-step and --alpha-step apply to grid only".into()).into());
            }
            let d = ScaOptions::default();
            let opts = ScaOptions {
                max_outer: s.pick("max-outer", a.max_outer, d.max_outer)?,
                rel_tol: s.pick("tol", a.tol, d.rel_tol)?,
                ..d
            };
            opts.validate()?;
            Method::Sca(opts)
        }
        "grid" => {
            if a.max_outer.is_some() || a.tol.is_some() {
                return Err(UsageError("--max-outer and --tol apply to sca only".into()).into());
            }
            let d = GridSpec::default();
            let grid = GridSpec {
                power_step: s.pick("power-step", a.power_step, d.power_step)?,
                alpha_step: s.pick("alpha-step", a.alpha_step, d.alpha_step)?,
            };
            let schemes = match s.pick("scheme", a.scheme, "both".to_string())?.as_str() {
                "mmse" => vec![Scheme::Mmse],
                "hzm" => vec![Scheme::Hzm],
                "both" => vec![Scheme::Mmse, Scheme::Hzm],
                other => return Err(UsageError(format!("--scheme: unknown value '{other}'")).into()),
            };
            Method::Grid(schemes, grid)
        }
        other => return Err(UsageError(format!("unknown baseline '{other}', expected sca or grid")).into()),
    };
    let (ds, input) = dataset_input(&data)?;
    if let Method::Grid(..) = method {
        if let Some(k) = ds.k_values().into_iter().find(|k| *k > GRID_MAX_USERS) {
            return Err(beamkit::error::BeamError::Capacity(format!(
                "grid search supports at most {GRID_MAX_USERS} users, dataset has K = {k}"
            ))
            .into());
        }
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    let t0 = Instant::now();
    let labels: Vec<Label> = pool.install(|| (0..ds.len()).into_par_iter().map(|i| label_one(&ds, i, &method)).collect());
    let feasible = labels.iter().filter(|l| l.feasible).count();
    let solved: Vec<&Label> = labels.iter().filter(|l| l.ee.is_some()).collect();
    let mean_iterations = if solved.is_empty() {
        0.0
    } else {
        solved.iter().map(|l| l.iterations as f64).sum::<f64>() / solved.len() as f64
    };
    let file = LabelFile {
        manifest: manifest_name(&out),
        method: a.method.clone(),
        samples: labels.len(),
        feasible,
        mean_iterations,
        labels,
    };
    write_atomic(&out, serde_json::to_string_pretty(&file)?.as_bytes())?;
    let mut m = RunManifest::new("baseline", s.snapshot());
    m.config.insert("method".into(), a.method.clone());
    m.inputs.push(input);
    m.outputs.push(display(&out));
    if let Some(p) = &attach {
        let labelled = attach_labels(ds.clone(), file.values())?;
        channel::save(&labelled, p)?;
        m.outputs.push(display(p));
    }
    m.threads = pool.current_num_threads();
    m.wall_time_s = t0.elapsed().as_secs_f64();
    m.write(&manifest_for(&out))?;
    emit(&format!(
        "{}: {} samples, {} feasible, mean iterations {:.2}",
        a.method,
        file.samples,
        file.feasible,
        file.mean_iterations
    ))?;
    Ok(())
}

pub fn train(a: TrainArgs, config: Option<&Path>) -> Result<()> {
    let mut s = Settings::load(
        config,
        &[
            "data", "scheme", "strategy", "epochs", "batch", "lr", "lambda", "arch", "seed", "val-fraction",
            "eval-every", "out", "csv",
        ],
    )?;
    let d = TrainConfig::default();
    let data = PathBuf::from(s.require::<String>("data", path_flag(a.data))?);
    let out = PathBuf::from(s.require::<String>("out", path_flag(a.out))?);
    let csv = s.optional::<String>("csv", path_flag(a.csv))?.map(PathBuf::from);
    let scheme: Mode = s.pick("scheme", a.scheme, "mmse".to_string())?.parse()?;
    let strategy: Strategy = s.pick("strategy", a.strategy, "constant".to_string())?.parse()?;
    let cfg = TrainConfig {
        epochs: s.pick("epochs", a.epochs, d.epochs)?,
        batch_size: s.pick("batch", a.batch, d.batch_size)?,
        lr: s.pick("lr", a.lr, d.lr)?,
        lambda: s.pick("lambda", a.lambda, d.lambda)?,
        strategy,
        scheme,
        seed: s.pick("seed", a.seed, d.seed)?,
        eval_every: s.pick("eval-every", a.eval_every, d.eval_every)?,
        val_fraction: s.pick("val-fraction", a.val_fraction, d.val_fraction)?,
    };
    cfg.validate()?;
    let preset = s.pick("arch", a.arch, "desk".to_string())?;
    let (ds, input) = dataset_input(&data)?;
    let k0 = ds.samples.first().map(|c| c.k_users()).unwrap_or(1);
    let arch = ArchSpec::from_preset(&preset, ds.spec.n_antennas, k0, &scheme.branches())?;

    let t0 = Instant::now();
    let res = fit::<f64>(&ds, &cfg, &arch)?;
    let log = {
        let mut p = out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    };
    save_params(&res.params, &out)?;
    write_atomic(&log, res.history.to_json_lines()?.as_bytes())?;
    let mut m = RunManifest::new("train", s.snapshot());
    m.seeds.insert("train".into(), cfg.seed);
    m.inputs.push(input);
    m.outputs = vec![display(&out), display(&log)];
    if let Some(c) = &csv {
        write_atomic(c, res.history.to_csv().as_bytes())?;
        m.outputs.push(display(c));
    }
    m.epoch_wall_times = res.history.epochs.iter().map(|e| e.wall_time).collect();
    m.wall_time_s = t0.elapsed().as_secs_f64();
    m.write(&manifest_for(&out))?;
    if let Some(reason) = res.aborted {
        return Err(NumericFailure(format!("training aborted ({reason}); best checkpoint saved")).into());
    }
    let last = res.history.epochs.last();
    emit(&format!(
        "trained {} epochs, best epoch {:?}, final train loss {:.6}, {} parameters -> {}",
        res.history.epochs.len(),
        res.history.best_epoch,
        last.map_or(f64::NAN, |e| e.train_loss),
        res.params.n_params(),
        out.display()
    ))?;
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    manifest: String,
    model_crc64: String,
    #[serde(flatten)]
    report: &'a EvalReport,
    /// False when the data carry no usable labels.
    optimality_available: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_mean_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    speedup: Option<f64>,
}

pub fn eval(a: EvalArgs, config: Option<&Path>) -> Result<()> {
    let mut s = Settings::load(
        config,
        &["model", "data", "mode", "labels", "report", "csv", "timing", "warmup"],
    )?;
    let model = PathBuf::from(s.require::<String>("model", path_flag(a.model))?);
    let data = PathBuf::from(s.require::<String>("data", path_flag(a.data))?);
    let labels_path = s.optional::<String>("labels", path_flag(a.labels))?.map(PathBuf::from);
    let report_path = s.optional::<String>("report", path_flag(a.report))?.map(PathBuf::from);
    let csv = s.optional::<String>("csv", path_flag(a.csv))?.map(PathBuf::from);
    let mode: Mode = s.pick("mode", a.mode, "select".to_string())?.parse()?;
    let timing = s.pick("timing", a.timing.then_some(true), false)?;
    let warmup = s.pick("warmup", a.warmup, 100usize)?;

    let bytes = std::fs::read(&model).with_context(|| format!("reading model {}", model.display()))?;
    let model_crc = format!("{:016x}", checksum(&bytes));
    let params = load_params::<f64>(&model)?;
    let (mut ds, input) = dataset_input(&data)?;
    let mut m = RunManifest::new("eval", s.snapshot());
    m.inputs.push(input);
    m.inputs.push(InputRef {
        path: display(&model),
        crc64: model_crc.clone(),
    });
    let mut baseline_time = None;
    if let Some(p) = &labels_path {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading labels {}", p.display()))?;
        let file: LabelFile = serde_json::from_str(&text)?;
        if file.labels.len() != ds.len() {
            return Err(beamkit::error::BeamError::Format {
                offset: 0,
                msg: format!("{} labels for {} samples", file.labels.len(), ds.len()),
            }
            .into());
        }
        let solved: Vec<f64> = file.labels.iter().filter(|l| l.ee.is_some()).map(|l| l.wall_time).collect();
        if !solved.is_empty() {
            baseline_time = Some(solved.iter().sum::<f64>() / solved.len() as f64);
        }
        ds = attach_labels(ds, file.values())?;
        m.inputs.push(InputRef {
            path: display(p),
            crc64: format!("{:016x}", checksum(text.as_bytes())),
        });
    }

    let t0 = Instant::now();
    let report = evaluate(&ds, &params, mode, timing.then_some(warmup))?;
    let available = report.ratio_count > 0;
    if !available {
        eprintln!("note: no usable labels; optimality metrics unavailable");
    }
    let speedup = match (&report.inference_time, baseline_time) {
        (Some(t), Some(b)) if t.mean_s > 0.0 => Some(b / t.mean_s),
        _ => None,
    };
    let anchor = report_path.clone().unwrap_or_else(|| model.with_extension("eval"));
    let outcome = EvalOutput {
        manifest: manifest_name(&anchor),
        model_crc64: model_crc,
        report: &report,
        optimality_available: available,
        baseline_mean_time_s: baseline_time.filter(|_| timing),
        speedup,
    };
    let json = serde_json::to_string_pretty(&outcome)?;
    match &report_path {
        Some(p) => {
            write_atomic(p, json.as_bytes())?;
            m.outputs.push(display(p));
        }
        None => emit(&json)?,
    }
    if let Some(c) = &csv {
        write_atomic(c, report.records_csv().as_bytes())?;
        m.outputs.push(display(c));
    }
    m.wall_time_s = t0.elapsed().as_secs_f64();
    m.write(&manifest_for(&anchor))?;
    if report_path.is_some() {
        let opt = report
            .optimality
            .map_or_else(|| "n/a".to_string(), |v| format!("{:.4}", v));
        emit(&format!(
            "{} samples, feasibility {:.4}, optimality {opt}, mean EE {:.6}",
            report.samples, report.feasibility_rate, report.mean_ee
        ))?;
    }
    Ok(())
}
