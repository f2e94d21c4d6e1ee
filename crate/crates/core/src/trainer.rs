//! Word-count batching, Adam optimization, checkpointing and
//! perplexity-based early stopping.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nmt::{batch_loss, loss_and_grad, Checkpoint, Example, FactoredBatch, OptimizerState, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// Linear warmup to `lr`, then decay with the inverse square root of the step.
    InverseSqrt,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Upper bound on target tokens per batch.
    pub batch_words: usize,
    /// Updates between validation checkpoints.
    pub checkpoint_interval: usize,
    /// Consecutive non-improving checkpoints before stopping.
    pub patience: usize,
    /// Hard cap on updates.
    pub max_updates: usize,
    pub lr: f64,
    pub warmup: usize,
    pub schedule: LrSchedule,
    /// Constant step size used by [`fine_tune`].
    pub fine_tune_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Pairs with either side longer than this many tokens are skipped.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_words: 500,
            checkpoint_interval: 50,
            patience: 8,
            max_updates: 100_000,
            lr: 2e-3,
            warmup: 200,
            schedule: LrSchedule::InverseSqrt,
            fine_tune_lr: 3e-4,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            clip_norm: 1.0,
            max_len: 128,
            seed: 1,
        }
    }
}

impl TrainConfig {
    /// Batch of 6000 words, checkpoint every 2000 updates, patience 32.
    pub fn full_preset() -> Self {
        TrainConfig {
            batch_words: 6000,
            checkpoint_interval: 2000,
            patience: 32,
            lr: 5e-4,
            warmup: 4000,
            max_len: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_words == 0 || self.checkpoint_interval == 0 || self.patience == 0 || self.max_len == 0 {
            return Err(Error::config("batch_words, checkpoint_interval, patience and max_len must be positive"));
        }
        if !(self.lr > 0.0 && self.fine_tune_lr > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return Err(Error::config("invalid Adam settings"));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64, schedule: LrSchedule, base: f64) -> f64 {
        match schedule {
            LrSchedule::Constant => base,
            LrSchedule::InverseSqrt => {
                let s = step.max(1) as f64;
                let w = self.warmup.max(1) as f64;
                base * (s / w).min((w / s).sqrt())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    /// Indices into the example slice, one vector per batch.
    pub batches: Vec<Vec<usize>>,
    /// Examples dropped for exceeding `max_len`.
    pub skipped: usize,
}

/// Shuffles under `seed`, orders by target length (stable, so equal lengths
/// stay shuffled), packs greedily so each batch holds at most `batch_words`
/// target tokens (a longer sentence gets a batch of its own), then shuffles
/// the batch order.
pub fn make_batches(examples: &[Example], batch_words: usize, max_len: usize, seed: u64) -> BatchPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut skipped = 0;
    let mut idx: Vec<usize> = (0..examples.len())
        .filter(|&i| {
            let e = &examples[i];
            let ok = e.src.len() <= max_len && e.tgt.len() < max_len;
            skipped += usize::from(!ok);
            ok
        })
        .collect();
    if skipped > 0 {
        tracing::warn!(skipped, max_len, "skipping over-long training pairs");
    }
    idx.shuffle(&mut rng);
    idx.sort_by_key(|&i| examples[i].tgt.len());
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut words = 0;
    for i in idx {
        let w = examples[i].tgt.len();
        if !cur.is_empty() && words + w > batch_words {
            batches.push(std::mem::take(&mut cur));
            words = 0;
        }
        cur.push(i);
        words += w;
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches.shuffle(&mut rng);
    BatchPlan { batches, skipped }
}

/// `exp(total NLL / target tokens)` without dropout, over a fixed batching
/// of `data` (so repeated calls agree bit for bit).
pub fn evaluate_perplexity(params: &Params<f32>, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("perplexity of an empty data set".into()));
    }
    let (mut nll, mut tokens) = (0.0f64, 0usize);
    for chunk in data.chunks(64) {
        let s = batch_loss(params, &FactoredBatch::new(chunk))?;
        nll += s.nll;
        tokens += s.tokens;
    }
    Ok((nll / tokens as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: u64,
    /// Mean label-smoothed training loss since the previous checkpoint.
    pub train_loss: f64,
    pub valid_ppl: f64,
    pub is_best: bool,
    pub wall_time: f64,
}

pub const LOG_HEADER: &str = "step\ttrain_loss\tvalid_ppl\tis_best\twall_time";

impl HistoryRow {
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{}\t{:.3}",
            self.step, self.train_loss, self.valid_ppl, self.is_best as u8, self.wall_time
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxUpdates,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: Vec<HistoryRow>,
    pub stop: StopReason,
    pub updates: u64,
    pub skipped: usize,
}

/// Index file kept next to `best.ckpt` / `latest.ckpt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub best_step: u64,
    pub best_valid_ppl: f64,
    pub latest_step: u64,
}

pub fn best_path(dir: &Path) -> PathBuf {
    dir.join("best.ckpt")
}

pub fn latest_path(dir: &Path) -> PathBuf {
    dir.join("latest.ckpt")
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    schedule: LrSchedule,
    base_lr: f64,
    /// Score the starting parameters first, so training can only improve on them.
    eval_initial: bool,
    dir: Option<&'a Path>,
}

fn adam_step(p: &mut [f32], g: &[f32], st: &mut OptimizerState, lr: f64, cfg: &TrainConfig) {
    st.step += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(st.step as i32);
    let c2 = 1.0 - b2.powi(st.step as i32);
    let step_size = (lr * c2.sqrt() / c1) as f32;
    let eps = (cfg.adam_eps * c2.sqrt()) as f32;
    let (b1, b2) = (b1 as f32, b2 as f32);
    for i in 0..p.len() {
        let gi = g[i];
        st.m[i] = b1 * st.m[i] + (1.0 - b1) * gi;
        st.v[i] = b2 * st.v[i] + (1.0 - b2) * gi * gi;
        p[i] -= step_size * st.m[i] / (st.v[i].sqrt() + eps);
    }
}

fn write_log(dir: &Path, history: &[HistoryRow]) -> Result<()> {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for h in history {
        let _ = writeln!(s, "{}", h.tsv());
    }
    let path = dir.join("train_log.tsv");
    fs::write(&path, s).map_err(|e| Error::io(&path, e))
}

fn run(init: &Checkpoint, train: &[Example], valid: &[Example], r: Run) -> Result<TrainOutcome> {
    let cfg = r.cfg;
    cfg.validate()?;
    if valid.is_empty() {
        return Err(Error::Input("validation set is empty".into()));
    }
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let clock = Instant::now();
    let mut params = init.params.clone();
    let mut opt = OptimizerState { step: 0, m: vec![0.0; params.data.len()], v: vec![0.0; params.data.len()] };
    let mut history: Vec<HistoryRow> = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut bad = 0usize;
    let snapshot = |params: &Params<f32>, opt: Option<&OptimizerState>, step: u64, ppl: f64, hist: &[HistoryRow]| {
        let mut c = init.clone();
        c.params = params.clone();
        c.optimizer = opt.cloned();
        c.step = step;
        c.valid_ppl = ppl;
        c.ppl_history = hist.iter().map(|h| (h.step, h.valid_ppl)).collect();
        c
    };
    if let Some(dir) = r.dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if r.eval_initial {
        let ppl = evaluate_perplexity(&params, valid)?;
        history.push(HistoryRow { step: 0, train_loss: f64::NAN, valid_ppl: ppl, is_best: true, wall_time: 0.0 });
        let mut c = snapshot(&params, None, 0, ppl, &history);
        c.is_best = true;
        best = Some(c);
    }

    let mut step: u64 = 0;
    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;
    let mut skipped = 0;
    let mut epoch = 0u64;
    let stop = 'outer: loop {
        let plan = make_batches(train, cfg.batch_words, cfg.max_len, cfg.seed.wrapping_add(epoch.wrapping_mul(0x9E37_79B9)));
        if plan.batches.is_empty() {
            return Err(Error::Input("every training pair exceeds max_len".into()));
        }
        if epoch == 0 {
            skipped = plan.skipped;
        }
        for batch in &plan.batches {
            if step >= cfg.max_updates as u64 {
                break 'outer StopReason::MaxUpdates;
            }
            step += 1;
            let fb = FactoredBatch::new(batch.iter().map(|&i| &train[i]));
            let dseed = cfg.seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ step;
            let (stats, mut grads) = loss_and_grad(&params, &fb, Some(dseed))?;
            let norm = grads.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
            if !stats.loss.is_finite() || !norm.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    detail: format!("loss {} gradient norm {norm}; last finite checkpoint kept", stats.loss),
                });
            }
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                let s = (cfg.clip_norm / norm) as f32;
                grads.iter_mut().for_each(|g| *g *= s);
            }
            let lr = cfg.lr_at(step, r.schedule, r.base_lr);
            adam_step(&mut params.data, &grads, &mut opt, lr, cfg);
            loss_sum += stats.loss;
            loss_n += 1;

            if step % cfg.checkpoint_interval as u64 == 0 {
                let ppl = evaluate_perplexity(&params, valid)?;
                if !ppl.is_finite() {
                    return Err(Error::NonFinite { step, detail: format!("validation perplexity {ppl}") });
                }
                let is_best = best.as_ref().map_or(true, |b| ppl < b.valid_ppl);
                history.push(HistoryRow {
                    step,
                    train_loss: loss_sum / loss_n as f64,
                    valid_ppl: ppl,
                    is_best,
                    wall_time: clock.elapsed().as_secs_f64(),
                });
                loss_sum = 0.0;
                loss_n = 0;
                tracing::info!(step, ppl, is_best, "checkpoint");
                let latest = snapshot(&params, Some(&opt), step, ppl, &history);
                if is_best {
                    bad = 0;
                    let mut b = latest.clone();
                    b.is_best = true;
                    b.optimizer = None;
                    best = Some(b);
                } else {
                    bad += 1;
                }
                if let Some(dir) = r.dir {
                    let b = best.as_ref().unwrap();
                    if is_best {
                        b.save(best_path(dir))?;
                    }
                    latest.save(latest_path(dir))?;
                    let index = CheckpointIndex { best_step: b.step, best_valid_ppl: b.valid_ppl, latest_step: step };
                    let path = dir.join("index.json");
                    fs::write(&path, serde_json::to_string_pretty(&index).unwrap()).map_err(|e| Error::io(&path, e))?;
                    write_log(dir, &history)?;
                }
                if bad >= cfg.patience {
                    break 'outer StopReason::Patience;
                }
            }
        }
        epoch += 1;
    };

    let mut best = match best {
        Some(b) => b,
        None => {
            // stopped before the first checkpoint: score what we have
            let ppl = evaluate_perplexity(&params, valid)?;
            history.push(HistoryRow {
                step,
                train_loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN },
                valid_ppl: ppl,
                is_best: true,
                wall_time: clock.elapsed().as_secs_f64(),
            });
            let mut b = snapshot(&params, None, step, ppl, &history);
            b.is_best = true;
            if let Some(dir) = r.dir {
                b.save(best_path(dir))?;
                write_log(dir, &history)?;
            }
            b
        }
    };
    best.ppl_history = history.iter().map(|h| (h.step, h.valid_ppl)).collect();
    Ok(TrainOutcome { best, history, stop, updates: step, skipped })
}

/// Trains from the parameters in `init` with the configured schedule.
pub fn train(
    init: &Checkpoint,
    train_set: &[Example],
    valid: &[Example],
    cfg: &TrainConfig,
    dir: Option<&Path>,
) -> Result<TrainOutcome> {
    run(
        init,
        train_set,
        valid,
        Run { cfg, schedule: cfg.schedule, base_lr: cfg.lr, eval_initial: false, dir },
    )
}

/// Continues training from `parent` on new data: fresh optimizer state,
/// constant `fine_tune_lr`, same early stopping. The parent itself is the
/// first candidate, so the result never has a worse validation perplexity.
pub fn fine_tune(
    parent: &Checkpoint,
    train_set: &[Example],
    valid: &[Example],
    cfg: &TrainConfig,
    dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut start = parent.clone();
    start.optimizer = None;
    start.provenance.parent = Some(parent.fingerprint());
    run(
        &start,
        train_set,
        valid,
        Run { cfg, schedule: LrSchedule::Constant, base_lr: cfg.fine_tune_lr, eval_initial: true, dir },
    )
}
