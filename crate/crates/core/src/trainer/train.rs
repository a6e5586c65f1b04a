use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::batch::{make_batches, sequential_batches, Batch};
use super::config::{Reduction, TrainConfig};
use super::loss::LossBreakdown;
use super::optim::{adam_step, one_cycle_lr, AdamConfig, AdamState};
use crate::autodiff::{Graph, ParamStore, Real, Var};
use crate::corpus::{Dataset, NormalizedClip};
use crate::net::{apply_bn_updates, forward_padded, init_params, Checkpoint, CheckpointMeta, ModelConfig, Pass};
use crate::{Error, Result};

pub const HISTORY_HEADER: &str = "iteration,epoch,train_loss,val_loss,lr";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const HISTORY_FILE: &str = "history.csv";

/// Composite loss of one batch.
///
/// Each clip is decoded separately. When the gate is trained the decoder
/// runs over the padded length so padding frames feed the stop-token loss;
/// otherwise it stops at the clip's real length. Landmark terms are masked
/// to real frames.
pub fn batch_loss<T: Real>(
    g: &mut Graph<T>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    batch: &Batch,
    pass: &mut Pass,
) -> Result<(Var, LossBreakdown)> {
    let gate_on = cfg.gate_trained();
    let beta = T::of(cfg.smooth_l1_beta);
    let (mut dec, mut post, mut gate) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..batch.len() {
        let real = batch.frame_lengths[i];
        let rows = if gate_on { batch.max_frames } else { real };
        let targets = batch.clip_targets::<T>(i, rows);
        let out = forward_padded(g, model, batch.clip_tokens(i), &targets, real, pass)?;
        let mask = batch.clip_element_mask::<T>(i, rows);
        dec.push(g.tape.smooth_l1_sum(out.frames, targets.data(), &mask, beta)?);
        if let Some(pf) = out.postnet_frames {
            let real_targets = &targets.data()[..real * batch.width];
            post.push(
                g.tape
                    .squared_error_sum(pf, real_targets, &mask[..real * batch.width])?,
            );
        }
        if gate_on {
            let gt = batch.clip_gate_targets::<T>(i, rows);
            gate.push(g.tape.bce_logits_sum(out.gate, &gt, &vec![T::one(); rows])?);
        }
    }
    let (elems, gate_elems) = match cfg.loss_reduction {
        Reduction::Mean => (batch.real_elements() as f64, (batch.len() * batch.max_frames) as f64),
        Reduction::Sum => (1.0, 1.0),
    };
    let reduce = |g: &mut Graph<T>, terms: &[Var], scale: f64| -> Result<Option<Var>> {
        let Some((&first, rest)) = terms.split_first() else {
            return Ok(None);
        };
        let mut s = first;
        for &t in rest {
            s = g.tape.add(s, t)?;
        }
        Ok(Some(g.tape.scale(s, T::of(scale))))
    };
    let dec = reduce(g, &dec, 1.0 / elems)?.expect("batches are non-empty");
    let post = reduce(g, &post, 1.0 / elems)?;
    let gate = reduce(g, &gate, cfg.gate_weight / gate_elems)?;
    let mut total = dec;
    for t in [post, gate].into_iter().flatten() {
        total = g.tape.add(total, t)?;
    }
    let value = |g: &Graph<T>, v: Var| g.value(v).item().as_f64();
    let breakdown = LossBreakdown {
        decoder: value(g, dec),
        postnet: post.map(|v| value(g, v)),
        gate: gate.map(|v| value(g, v)),
        total: value(g, total),
    };
    Ok((total, breakdown))
}

/// Mean composite loss over a split in eval mode.
pub fn evaluate(
    params: &ParamStore<f32>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    clips: &[&NormalizedClip],
) -> Result<f64> {
    let batches = sequential_batches(clips, cfg.batch_size)?;
    let mut sum = 0.0;
    for b in &batches {
        let mut g = Graph::inference(params);
        sum += batch_loss(&mut g, model, cfg, b, &mut Pass::eval())?.1.total;
    }
    Ok(sum / batches.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    /// Optimizer steps taken by the end of the epoch.
    pub iteration: usize,
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub val_loss: f64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
    pub best: Option<BestRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.rows {
            let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{},{}", r.iteration, r.epoch, r.train_loss, val, r.lr).expect("writing to a String");
        }
        s
    }

    /// Parses the rows of a history CSV; `best` is recomputed from them.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(HISTORY_HEADER) {
            return Err(Error::Format(format!("history CSV must start with `{HISTORY_HEADER}`")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let parse_err = |column: &str, message: String| Error::Parse {
                row: i + 1,
                column: column.to_string(),
                message,
            };
            if f.len() != 5 {
                return Err(parse_err("*", format!("expected 5 fields, got {}", f.len())));
            }
            let num = |k: usize, name: &str| f[k].parse::<f64>().map_err(|e| parse_err(name, e.to_string()));
            let int = |k: usize, name: &str| f[k].parse::<usize>().map_err(|e| parse_err(name, e.to_string()));
            rows.push(HistoryRow {
                iteration: int(0, "iteration")?,
                epoch: int(1, "epoch")?,
                train_loss: num(2, "train_loss")?,
                val_loss: if f[3].is_empty() {
                    None
                } else {
                    Some(num(3, "val_loss")?)
                },
                lr: num(4, "lr")?,
            });
        }
        let mut h = TrainHistory { rows, best: None };
        h.best = h.best_from_rows();
        Ok(h)
    }

    fn best_from_rows(&self) -> Option<BestRecord> {
        let mut best: Option<BestRecord> = None;
        for r in &self.rows {
            if let Some(v) = r.val_loss {
                if best.as_ref().map_or(true, |b| v < b.val_loss) {
                    best = Some(BestRecord {
                        epoch: r.epoch,
                        iteration: r.iteration,
                        val_loss: v,
                        checkpoint: None,
                    });
                }
            }
        }
        best
    }

    pub fn val_losses(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.val_loss.map(|v| (r.epoch, v)))
            .collect()
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.train_loss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Starting weights; fresh seeded initialization when absent.
    pub init: Option<ParamStore<f32>>,
    /// Where `best.ckpt`, `last.ckpt` and `history.csv` are written.
    pub out_dir: Option<&'a Path>,
    pub on_epoch: Option<&'a mut dyn FnMut(&HistoryRow)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub best: Checkpoint,
    pub last: Checkpoint,
}

fn step_seed(seed: u64, iteration: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ iteration as u64
}

fn check_compatible(dataset: &Dataset, model: &ModelConfig) -> Result<()> {
    dataset.validate()?;
    if model.output_width != dataset.width() {
        return Err(Error::shape(
            "train",
            format!(
                "model output width {} but dataset width {}",
                model.output_width,
                dataset.width()
            ),
        ));
    }
    if model.charset_size != dataset.charset.len() {
        return Err(Error::shape(
            "train",
            format!(
                "model charset size {} but dataset charset has {}",
                model.charset_size,
                dataset.charset.len()
            ),
        ));
    }
    Ok(())
}

/// Teacher-forced training with Adam and the one-cycle schedule.
///
/// Validation runs every `validation_interval` epochs and after the last
/// epoch; the lowest validation loss selects the best checkpoint.
pub fn train(dataset: &Dataset, model: &ModelConfig, cfg: &TrainConfig, opts: TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    check_compatible(dataset, model)?;
    let TrainOptions {
        init,
        out_dir,
        mut on_epoch,
    } = opts;
    let mut params = match init {
        Some(p) => p,
        None => init_params(model, cfg.seed)?,
    };
    params.set_frozen_prefix("", false);
    for prefix in &cfg.freeze {
        params.set_frozen_prefix(prefix, true);
    }
    let adam = AdamConfig {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    };
    let train_clips = dataset.train();
    let val_clips = dataset.validation();
    let reference = train_clips.first().map(|c| c.reference.clone());
    let meta = |epoch: usize, iteration: usize, val_loss: Option<f64>| CheckpointMeta {
        epoch,
        iteration,
        val_loss,
        frozen: cfg.freeze.clone(),
        charset: Some(dataset.charset.as_string()),
        reference: reference.clone(),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut state = AdamState::new();
    let mut history = TrainHistory::default();
    let mut best: Option<Checkpoint> = None;
    let mut iteration = 0usize;
    let mut lr = one_cycle_lr(0, cfg.peak_lr, cfg.scheduler_step);
    for epoch in 1..=cfg.epochs {
        let batches = make_batches(&train_clips, cfg.batch_size, cfg.seed, epoch as u64)?;
        let mut epoch_loss = 0.0;
        for batch in &batches {
            lr = one_cycle_lr(iteration, cfg.peak_lr, cfg.scheduler_step);
            let mut pass = Pass::train(step_seed(cfg.seed, iteration));
            let mut g = Graph::new(&params);
            let (loss, breakdown) = batch_loss(&mut g, model, cfg, batch, &mut pass)?;
            let grads = g.backward(loss)?;
            if !breakdown.total.is_finite() || !grads.all_finite() {
                return Err(Error::NonFinite {
                    iteration,
                    lr,
                    grad_norms: grads.norms(5).1,
                });
            }
            adam_step(&mut params, &grads, &mut state, lr, &adam)?;
            apply_bn_updates(&mut params, &pass.take_bn_updates())?;
            epoch_loss += breakdown.total;
            iteration += 1;
        }
        let validate = epoch % cfg.validation_interval == 0 || epoch == cfg.epochs;
        let val_loss = if validate {
            let v = evaluate(&params, model, cfg, &val_clips)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    iteration,
                    lr,
                    grad_norms: Vec::new(),
                });
            }
            if history.best.as_ref().map_or(true, |b| v < b.val_loss) {
                let ckpt = Checkpoint {
                    params: params.clone(),
                    config: model.clone(),
                    meta: meta(epoch, iteration, Some(v)),
                };
                let path = match out_dir {
                    Some(dir) => {
                        let p = dir.join(BEST_CHECKPOINT);
                        ckpt.save(&p)?;
                        Some(p)
                    }
                    None => None,
                };
                history.best = Some(BestRecord {
                    epoch,
                    iteration,
                    val_loss: v,
                    checkpoint: path,
                });
                best = Some(ckpt);
            }
            Some(v)
        } else {
            None
        };
        let row = HistoryRow {
            iteration,
            epoch,
            train_loss: epoch_loss / batches.len() as f64,
            val_loss,
            lr,
        };
        if let Some(f) = on_epoch.as_mut() {
            f(&row);
        }
        history.rows.push(row);
    }

    let last_val = history.rows.last().and_then(|r| r.val_loss);
    let last = Checkpoint {
        params,
        config: model.clone(),
        meta: meta(cfg.epochs, iteration, last_val),
    };
    if let Some(dir) = out_dir {
        last.save(&dir.join(LAST_CHECKPOINT))?;
        history.save(&dir.join(HISTORY_FILE))?;
    }
    Ok(TrainOutcome {
        history,
        best: best.expect("the last epoch is always validated"),
        last,
    })
}
