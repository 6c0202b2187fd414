//! Unsupervised training on the penalized energy-efficiency loss and
//! evaluation against reference labels.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamState, Tape};
use crate::channel::{checksum, Dataset};
use crate::error::{BeamError, Result};
use crate::gnn::{
    branch_loss, build, full_forward, ArchSpec, Batch, BnMode, Bound, ForwardOutput, GnnParams, Mode, BN_MOMENTUM,
};
use crate::model::{ChannelSet, Scheme, SystemConfig};
use crate::scalar::Real;

/// Ratio metrics above `1 + OPTIMALITY_SLACK` flag a suboptimal label.
pub const OPTIMALITY_SLACK: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Every sample has the same user count.
    Constant,
    /// Several user counts; batches stay homogeneous.
    Various,
}

impl std::str::FromStr for Strategy {
    type Err = BeamError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Strategy::Constant),
            "various" => Ok(Strategy::Various),
            _ => Err(BeamError::Config(format!("unknown strategy '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Weight of the rate-floor penalty.
    pub lambda: f64,
    pub strategy: Strategy,
    /// Branches trained: one scheme, or both with their losses summed.
    pub scheme: Mode,
    pub seed: u64,
    /// Validation loss is computed every `eval_every` epochs and on the last.
    pub eval_every: usize,
    /// Fraction of samples held out for checkpoint selection.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 25,
            lr: 1e-3,
            lambda: 10.0,
            strategy: Strategy::Constant,
            scheme: Mode::Mmse,
            seed: 0,
            eval_every: 1,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(BeamError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return bad("epochs, batch size and eval interval must be positive");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("learning rate must be positive");
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("penalty weight must be non-negative");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Seconds since training started; excluded from reproducibility checks.
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// User count of every batch, in visiting order.
    pub batch_k: Vec<usize>,
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    /// One JSON object per epoch, without wall times, so equal seeds give
    /// identical bytes.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.epochs {
            let line = serde_json::json!({
                "epoch": e.epoch,
                "train_loss": e.train_loss,
                "val_loss": e.val_loss,
            });
            s.push_str(&serde_json::to_string(&line)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// `epoch,train_loss,val_loss` for plotting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let v = e.val_loss.map(|v| format!("{v:.17e}")).unwrap_or_default();
            s.push_str(&format!("{},{:.17e},{}\n", e.epoch, e.train_loss, v));
        }
        s
    }

    /// CRC-64 of the per-epoch training losses.
    pub fn digest(&self) -> String {
        let bytes: Vec<u8> = self
            .epochs
            .iter()
            .flat_map(|e| e.train_loss.to_bits().to_le_bytes())
            .collect();
        format!("{:016x}", checksum(&bytes))
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult<T = f64> {
    /// Parameters of the epoch with the lowest validation loss.
    pub params: GnnParams<T>,
    pub history: TrainHistory,
    /// Set when training stopped on a non-finite loss or gradient; `params`
    /// then holds the last good checkpoint.
    pub aborted: Option<String>,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(epoch as u64 + 1);
    r
}

/// Shuffles `pool`, splits it by user count into chunks of at most
/// `batch_size`, and interleaves the user counts round-robin in ascending
/// order. With a single user count this is a plain shuffle-and-chunk.
pub fn plan_batches(ks: &[usize], pool: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order = pool.to_vec();
    order.shuffle(&mut epoch_rng(seed, epoch));
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in order {
        groups.entry(ks[i]).or_default().push(i);
    }
    let mut chunks: Vec<std::collections::VecDeque<Vec<usize>>> = groups
        .into_values()
        .map(|g| g.chunks(batch_size).map(|c| c.to_vec()).collect())
        .collect();
    let mut out = Vec::new();
    while chunks.iter().any(|c| !c.is_empty()) {
        for c in chunks.iter_mut() {
            if let Some(b) = c.pop_front() {
                out.push(b);
            }
        }
    }
    out
}

/// Splits indices into (train, validation) deterministically in `seed`.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut epoch_rng(seed, 0));
    let n_val = ((n as f64) * fraction).floor() as usize;
    let n_val = if n_val >= n { 0 } else { n_val };
    let val = {
        let mut v = idx[..n_val].to_vec();
        v.sort_unstable();
        v
    };
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    (train, val)
}

struct Prepared<'a, T> {
    batch: Batch<'a, T>,
    size: usize,
}

fn prepare<'a, T: Real>(
    samples: &'a [ChannelSet<T>],
    cfgs: &[SystemConfig],
    idx: &[usize],
    branches: &[Scheme],
    arch: &ArchSpec,
) -> Result<Prepared<'a, T>> {
    let refs: Vec<&ChannelSet<T>> = idx.iter().map(|&i| &samples[i]).collect();
    let cs: Vec<SystemConfig> = idx.iter().map(|&i| cfgs[i].clone()).collect();
    Ok(Prepared {
        batch: Batch::new(&refs, &cs, branches, arch.topology)?,
        size: idx.len(),
    })
}

/// Summed branch losses for one batch; also returns per-sample loss values
/// so a non-finite one can be attributed.
fn batch_loss<T: Real>(
    tape: &mut Tape<T>,
    params: &GnnParams<T>,
    bound: &Bound,
    batch: &Batch<'_, T>,
    branches: &[Scheme],
    lambda: T,
    bn: BnMode,
) -> Result<(crate::autodiff::Var, Vec<Option<crate::gnn::BnStats<T>>>, Vec<T>)> {
    let net = build(tape, params, bound, batch, branches, bn)?;
    let mut total = None;
    let mut per = vec![T::zero(); batch.len()];
    for br in &net.branches {
        let lv = branch_loss(tape, batch, br, lambda)?;
        for (p, v) in per.iter_mut().zip(&tape.value(lv.per_sample).data) {
            *p += *v;
        }
        total = Some(match total {
            None => lv.loss,
            Some(t) => tape.add(t, lv.loss)?,
        });
    }
    Ok((total.expect("at least one branch"), net.bn_batch, per))
}

/// Mean loss over `idx` with running normalization statistics.
pub fn dataset_loss<T: Real>(
    params: &GnnParams<T>,
    samples: &[ChannelSet<T>],
    cfgs: &[SystemConfig],
    idx: &[usize],
    scheme: Mode,
    lambda: f64,
    batch_size: usize,
) -> Result<f64> {
    let branches = scheme.branches();
    let ks: Vec<usize> = samples.iter().map(|s| s.k_users()).collect();
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in idx {
        groups.entry(ks[i]).or_default().push(i);
    }
    let mut sum = 0.0;
    for g in groups.values() {
        for chunk in g.chunks(batch_size.max(1)) {
            let p = prepare(samples, cfgs, chunk, &branches, &params.arch)?;
            let mut tape = Tape::new();
            let bound = Bound::new(&mut tape, params, false);
            let (l, _, _) = batch_loss(&mut tape, params, &bound, &p.batch, &branches, T::lit(lambda), BnMode::Running)?;
            sum += tape.value(l).data[0].as_f64() * p.size as f64;
        }
    }
    Ok(sum / idx.len().max(1) as f64)
}

/// Trains `arch` from a seeded initialization on the training samples of
/// `data` and returns the best-validation checkpoint.
pub fn train<T: Real>(data: &Dataset, cfg: &TrainConfig, arch: &ArchSpec) -> Result<TrainResult<T>> {
    cfg.validate()?;
    arch.validate()?;
    if !data.spec.kind.has_train() {
        return Err(BeamError::Config("dataset holds no training samples".into()));
    }
    if data.is_empty() {
        return Err(BeamError::InvalidInput("empty dataset".into()));
    }
    let kvals = data.k_values();
    match cfg.strategy {
        Strategy::Various if kvals.len() < 2 => {
            return Err(BeamError::Config("various-input strategy needs several user counts".into()))
        }
        Strategy::Constant if kvals.len() > 1 => {
            return Err(BeamError::Config("constant-input strategy needs a single user count".into()))
        }
        _ => {}
    }
    let branches = cfg.scheme.branches();
    for b in &branches {
        if !arch.has_branch(*b) {
            return Err(BeamError::Config(format!("architecture has no {b} branch")));
        }
    }
    let samples: Vec<ChannelSet<T>> = data.samples.iter().map(|s| s.cast()).collect();
    let cfgs: Vec<SystemConfig> = (0..data.len()).map(|i| data.system_config(i)).collect();
    let ks: Vec<usize> = samples.iter().map(|s| s.k_users()).collect();
    let (train_idx, val_idx) = split_validation(data.len(), cfg.val_fraction, cfg.seed);

    let mut params: GnnParams<T> = GnnParams::init(arch, cfg.seed)?;
    let sizes: Vec<usize> = params.blocks.iter().map(|b| b.data.len()).collect();
    let mut adam = AdamState::new(&sizes, T::lit(cfg.lr));
    let lambda = T::lit(cfg.lambda);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, GnnParams<T>)> = None;
    let start = Instant::now();
    let mut batch_no = 0usize;
    let mut aborted = None;

    'epochs: for epoch in 0..cfg.epochs {
        let plan = plan_batches(&ks, &train_idx, cfg.batch_size, cfg.seed, epoch);
        let mut sum = 0.0;
        let mut count = 0usize;
        for idx in &plan {
            let p = prepare(&samples, &cfgs, idx, &branches, arch)?;
            let mut tape = Tape::new();
            let bound = Bound::new(&mut tape, &params, true);
            let (loss, stats, per) = batch_loss(&mut tape, &params, &bound, &p.batch, &branches, lambda, BnMode::Batch)?;
            if let Some(bad) = per.iter().position(|v| !v.is_finite()) {
                aborted = Some(BeamError::NonFinite {
                    sample: idx[bad],
                    what: format!("loss in epoch {epoch}"),
                }
                .to_string());
                break 'epochs;
            }
            let grads = tape.backward(loss)?;
            let g: Vec<Vec<T>> = bound.vars.iter().map(|v| grads.get(*v).data).collect();
            let mut blocks: Vec<Vec<T>> = params.blocks.iter_mut().map(|b| std::mem::take(&mut b.data)).collect();
            let step = adam_step(&mut blocks, &g, &mut adam, batch_no);
            for (b, d) in params.blocks.iter_mut().zip(blocks) {
                b.data = d;
            }
            if let Err(e) = step {
                aborted = Some(e.to_string());
                break 'epochs;
            }
            for (run, s) in params.bn.iter_mut().zip(stats) {
                if let Some(s) = s {
                    run.update(&s, T::lit(BN_MOMENTUM));
                }
            }
            history.batch_k.push(p.batch.k_users);
            sum += tape.value(loss).data[0].as_f64() * p.size as f64;
            count += p.size;
            batch_no += 1;
        }
        let train_loss = sum / count.max(1) as f64;
        let last = epoch + 1 == cfg.epochs;
        let val_loss = if (epoch + 1) % cfg.eval_every == 0 || last {
            let pool = if val_idx.is_empty() { &train_idx } else { &val_idx };
            Some(dataset_loss(&params, &samples, &cfgs, pool, cfg.scheme, cfg.lambda, cfg.batch_size)?)
        } else {
            None
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if let Some(v) = val_loss {
            if !v.is_finite() {
                aborted = Some(format!("non-finite validation loss in epoch {epoch}"));
                break;
            }
            if best.as_ref().map_or(true, |(b, _)| v < *b) {
                best = Some((v, params.clone()));
                history.best_epoch = Some(epoch);
            }
        }
    }
    let mut params = match best {
        Some((_, p)) => p,
        None => params,
    };
    params.meta.dataset_checksum = None;
    params.meta.epochs = history.epochs.len();
    params.meta.best_epoch = history.best_epoch;
    params.meta.seed = Some(cfg.seed);
    params.meta.scheme = Some(format!("{:?}", cfg.scheme).to_lowercase());
    params.meta.loss_history_digest = Some(history.digest());
    params.meta.trained_k = kvals;
    Ok(TrainResult {
        params,
        history,
        aborted,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeBreakdown {
    pub scheme: Scheme,
    pub feasibility_rate: f64,
    pub optimality: Option<f64>,
    pub mean_ee: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_s: f64,
    pub median_s: f64,
    pub samples: usize,
    pub warmup: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub k_users: usize,
    pub scheme: Scheme,
    pub ee: f64,
    pub label: Option<f64>,
    pub ratio: Option<f64>,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub samples: usize,
    pub k_users: Vec<usize>,
    /// Mean EE ratio against labels over feasible outputs, on user counts
    /// seen in training. `None` when no ratio is available.
    pub optimality: Option<f64>,
    /// Same ratio on user counts not seen in training.
    pub scalability: Option<f64>,
    pub ratio_count: usize,
    pub feasibility_rate: f64,
    pub mean_ee: f64,
    pub per_scheme: Vec<SchemeBreakdown>,
    pub selected: BTreeMap<String, usize>,
    pub inference_time: Option<Timing>,
    #[serde(skip)]
    pub records: Vec<SampleRecord>,
}

impl EvalReport {
    /// Per-sample CSV.
    pub fn records_csv(&self) -> String {
        let mut s = String::from("index,k_users,scheme,ee,label,ratio,feasible\n");
        let f = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        for r in &self.records {
            s.push_str(&format!(
                "{},{},{},{:.17e},{},{},{}\n",
                r.index,
                r.k_users,
                r.scheme,
                r.ee,
                f(r.label),
                f(r.ratio),
                r.feasible
            ));
        }
        s
    }
}

fn usable_label(labels: Option<&Vec<f64>>, i: usize) -> Option<f64> {
    labels.and_then(|l| l.get(i).copied()).filter(|v| v.is_finite() && *v > 0.0)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Evaluates `params` sample by sample. With `warmup > 0` the mean and
/// median single-sample inference time is measured after `warmup`
/// untimed passes.
pub fn evaluate<T: Real>(data: &Dataset, params: &GnnParams<T>, mode: Mode, warmup: Option<usize>) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(BeamError::InvalidInput("empty dataset".into()));
    }
    let samples: Vec<ChannelSet<T>> = data.samples.iter().map(|s| s.cast()).collect();
    let cfgs: Vec<SystemConfig> = (0..data.len()).map(|i| data.system_config(i)).collect();
    if let Some(w) = warmup {
        for i in 0..w {
            let j = i % samples.len();
            full_forward(&samples[j], &cfgs[j], params, mode)?;
        }
    }
    let trained = &params.meta.trained_k;
    let mut times = Vec::with_capacity(samples.len());
    let mut outs: Vec<ForwardOutput<T>> = Vec::with_capacity(samples.len());
    for (s, c) in samples.iter().zip(&cfgs) {
        let t0 = Instant::now();
        let o = full_forward(s, c, params, mode)?;
        times.push(t0.elapsed().as_secs_f64());
        outs.push(o);
    }
    let labels = data.labels.as_ref();
    let (mut seen, mut unseen) = (Vec::new(), Vec::new());
    let mut records = Vec::with_capacity(outs.len());
    let mut selected = BTreeMap::new();
    let mut feasible = 0usize;
    let mut ee_sum = 0.0;
    for (i, o) in outs.iter().enumerate() {
        let label = usable_label(labels, i);
        let ratio = label.filter(|_| o.feasible).map(|l| o.ee() / l);
        if let Some(r) = ratio {
            if trained.is_empty() || trained.contains(&samples[i].k_users()) {
                seen.push(r);
            } else {
                unseen.push(r);
            }
        }
        feasible += o.feasible as usize;
        ee_sum += o.ee();
        *selected.entry(o.scheme().to_string()).or_insert(0) += 1;
        records.push(SampleRecord {
            index: i,
            k_users: samples[i].k_users(),
            scheme: o.scheme(),
            ee: o.ee(),
            label,
            ratio,
            feasible: o.feasible,
        });
    }
    let per_scheme = mode
        .branches()
        .into_iter()
        .map(|s| {
            let mut f = 0usize;
            let mut ee = 0.0;
            let mut ratios = Vec::new();
            for (i, o) in outs.iter().enumerate() {
                let b = o.branch(s).expect("branch evaluated");
                f += b.report.feasible as usize;
                ee += b.report.ee;
                if let (true, Some(l)) = (b.report.feasible, usable_label(labels, i)) {
                    ratios.push(b.report.ee / l);
                }
            }
            SchemeBreakdown {
                scheme: s,
                feasibility_rate: f as f64 / outs.len() as f64,
                optimality: mean(&ratios),
                mean_ee: ee / outs.len() as f64,
            }
        })
        .collect();
    let inference_time = warmup.map(|w| {
        let mut sorted = times.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Timing {
            mean_s: times.iter().sum::<f64>() / n as f64,
            median_s: median,
            samples: n,
            warmup: w,
        }
    });
    Ok(EvalReport {
        mode,
        samples: outs.len(),
        k_users: data.k_values(),
        optimality: mean(&seen),
        scalability: mean(&unseen),
        ratio_count: seen.len() + unseen.len(),
        feasibility_rate: feasible as f64 / outs.len() as f64,
        mean_ee: ee_sum / outs.len() as f64,
        per_scheme,
        selected,
        inference_time,
        records,
    })
}
