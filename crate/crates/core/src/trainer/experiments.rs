use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::config::TrainConfig;
use super::train::{train, TrainOptions, TrainOutcome};
use crate::autodiff::ParamStore;
use crate::corpus::Dataset;
use crate::net::{init_params, load_partial, ModelConfig, PartialLoadReport, TRANSFER_PREFIXES};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub phase1: TrainOutcome,
    pub phase2: TrainOutcome,
    pub report: PartialLoadReport,
}

fn with_transfer_freeze(cfg: &TrainConfig) -> TrainConfig {
    let mut cfg = cfg.clone();
    for p in TRANSFER_PREFIXES {
        if !cfg.freeze.iter().any(|f| f == p) {
            cfg.freeze.push(p.to_string());
        }
    }
    cfg
}

/// Fresh weights for `model` with the encoder and gate copied from `source`.
pub fn transfer_init(
    model: &ModelConfig,
    seed: u64,
    source: &ParamStore<f32>,
) -> Result<(ParamStore<f32>, PartialLoadReport)> {
    let mut params = init_params(model, seed)?;
    let report = load_partial(&mut params, source, &TRANSFER_PREFIXES)?;
    Ok((params, report))
}

/// Phase 1 trains every parameter on `corpus_a`. Phase 2 starts from fresh
/// weights, copies `encoder.*` and `gate.*` from the phase-1 best checkpoint,
/// freezes them, and trains the rest on `corpus_b`.
pub fn pretrain_then_transfer(
    corpus_a: &Dataset,
    corpus_b: &Dataset,
    model: &ModelConfig,
    phase1: &TrainConfig,
    phase2: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TransferOutcome> {
    if corpus_a.charset != corpus_b.charset {
        return Err(Error::Contract(
            "pretraining and target corpora use different charsets".into(),
        ));
    }
    let sub = |name: &str| out_dir.map(|d| d.join(name));
    let (dir1, dir2) = (sub("phase1"), sub("phase2"));
    let mut cfg1 = phase1.clone();
    cfg1.freeze.clear();
    let first = train(
        corpus_a,
        model,
        &cfg1,
        TrainOptions {
            out_dir: dir1.as_deref(),
            ..Default::default()
        },
    )?;
    let cfg2 = with_transfer_freeze(phase2);
    let (init, report) = transfer_init(model, cfg2.seed, &first.best.params)?;
    let second = train(
        corpus_b,
        model,
        &cfg2,
        TrainOptions {
            init: Some(init),
            out_dir: dir2.as_deref(),
            ..Default::default()
        },
    )?;
    Ok(TransferOutcome {
        phase1: first,
        phase2: second,
        report,
    })
}

/// Per-row training budget of the ablation.
pub const ABLATION_EPOCH_CAP: usize = 50;

/// `(postnet, prenet, pretrained)` for each ablation row, top to bottom.
pub const ABLATION_CONFIGS: [(bool, bool, bool); 4] = [
    (true, true, true),
    (false, true, true),
    (false, false, true),
    (false, false, false),
];

/// Published validation losses for the same four rows on the original
/// 93-clip corpus. Documentation only; never compared against.
pub const ABLATION_REFERENCE_LOSSES: [f64; 4] = [1.7127e-1, 7.1896e-2, 1.5066e-2, 8.9430e-3];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub postnet: bool,
    pub prenet: bool,
    pub pretrained: bool,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub final_val_loss: f64,
    pub epochs: usize,
    pub reference_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

pub const ABLATION_HEADER: &str = "val_loss,epoch,postnet,prenet,pretrained";

impl AblationTable {
    /// Best validation loss and its epoch per row, with check marks.
    pub fn to_csv(&self) -> String {
        let mark = |b: bool| if b { "✓" } else { "" };
        let mut s = String::from(ABLATION_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{:.4e},{},{},{},{}",
                r.best_val_loss,
                r.best_epoch,
                mark(r.postnet),
                mark(r.prenet),
                mark(r.pretrained)
            )
            .expect("writing to a String");
        }
        s
    }
}

/// Trains the four ablation configurations on `dataset`, each capped at
/// [`ABLATION_EPOCH_CAP`] epochs. Rows marked pretrained start from
/// `pretrained`'s encoder and gate and keep them frozen.
pub fn ablate(
    dataset: &Dataset,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    pretrained: &ParamStore<f32>,
    out_dir: Option<&Path>,
) -> Result<AblationTable> {
    let mut table = AblationTable::default();
    for (i, &(postnet, prenet, is_pre)) in ABLATION_CONFIGS.iter().enumerate() {
        let mut model = base_model.clone();
        model.use_postnet = postnet;
        model.use_prenet = prenet;
        let mut cfg = base_train.clone();
        cfg.epochs = cfg.epochs.min(ABLATION_EPOCH_CAP);
        cfg.freeze.clear();
        let init = if is_pre {
            cfg = with_transfer_freeze(&cfg);
            Some(transfer_init(&model, cfg.seed, pretrained)?.0)
        } else {
            None
        };
        let dir = out_dir.map(|d| d.join(format!("row{}", i + 1)));
        let outcome = train(
            dataset,
            &model,
            &cfg,
            TrainOptions {
                init,
                out_dir: dir.as_deref(),
                ..Default::default()
            },
        )?;
        let best = outcome.history.best.as_ref().expect("last epoch is validated");
        table.rows.push(AblationRow {
            postnet,
            prenet,
            pretrained: is_pre,
            best_val_loss: best.val_loss,
            best_epoch: best.epoch,
            final_val_loss: outcome.history.rows.last().and_then(|r| r.val_loss).unwrap_or(f64::NAN),
            epochs: outcome.history.rows.len(),
            reference_val_loss: ABLATION_REFERENCE_LOSSES[i],
        });
    }
    Ok(table)
}
