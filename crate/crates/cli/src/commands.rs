use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lipmotion::corpus::{build_dataset, encode_text, synth_corpus, Charset, Dataset, ReferenceFrame, Split};
use lipmotion::metrics::{compare_report, export_trajectory, import_csv, manhattan_error, ExportFormat, Trajectory};
use lipmotion::net::{infer, load_checkpoint_for, Checkpoint, ModelConfig};
use lipmotion::trainer::{
    ablate, evaluate, pretrain_then_transfer, train, HistoryRow, TrainOptions, TrainOutcome, BEST_CHECKPOINT,
    HISTORY_FILE, LAST_CHECKPOINT,
};
use lipmotion::Error;
use serde::Serialize;

use crate::config::RunConfig;

pub const DATASET_FILE: &str = "dataset.ltds";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";

/// Files produced by a command, in creation order.
#[derive(Debug, Default)]
pub struct Artifacts(pub Vec<PathBuf>);

impl Artifacts {
    fn push(&mut self, p: impl Into<PathBuf>) {
        self.0.push(p.into());
    }

    fn json<T: Serialize>(&mut self, path: PathBuf, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        self.push(path);
        Ok(())
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Model dimensions that must agree with the data.
fn fit_model(model: &ModelConfig, dataset: &Dataset) -> ModelConfig {
    let mut m = model.clone();
    m.charset_size = dataset.charset.len();
    m.output_width = dataset.width();
    m
}

fn progress(label: &str) -> impl FnMut(&HistoryRow) + '_ {
    move |r: &HistoryRow| {
        if let Some(v) = r.val_loss {
            eprintln!(
                "{label}epoch {} iteration {} train {:.4e} val {:.4e} lr {:.3e}",
                r.epoch, r.iteration, r.train_loss, v, r.lr
            );
        }
    }
}

fn train_artifacts(dir: &Path, arts: &mut Artifacts) {
    for f in [BEST_CHECKPOINT, LAST_CHECKPOINT, HISTORY_FILE] {
        arts.push(dir.join(f));
    }
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    iterations: usize,
    final_train_loss: Option<f64>,
    best_epoch: Option<usize>,
    best_val_loss: Option<f64>,
}

fn summary(o: &TrainOutcome) -> TrainSummary {
    TrainSummary {
        epochs: o.history.rows.len(),
        iterations: o.history.rows.last().map_or(0, |r| r.iteration),
        final_train_loss: o.history.final_train_loss(),
        best_epoch: o.history.best.as_ref().map(|b| b.epoch),
        best_val_loss: o.history.best.as_ref().map(|b| b.val_loss),
    }
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<Artifacts> {
    let dir = out.join("corpus");
    let summary = synth_corpus(cfg.synth.seed, cfg.synth.clips, &Charset::default(), &dir)?;
    let mut arts = Artifacts::default();
    for (clip, _, _) in &summary.clips {
        arts.push(dir.join(format!("{clip}.csv")));
        arts.push(dir.join(format!("{clip}.txt")));
    }
    arts.push(dir.join(lipmotion::corpus::SPEAKERS_MANIFEST));
    Ok(arts)
}

pub fn prepare(cfg: &RunConfig, corpus: &Path, out: &Path) -> Result<Artifacts> {
    let (dataset, report) = build_dataset(corpus, &cfg.prepare)?;
    for issue in &report.rejected {
        eprintln!("rejected {}: {}", issue.clip_id, issue.reason);
    }
    eprintln!(
        "accepted {} clips ({} train, {} validation), rejected {}",
        report.accepted.len(),
        dataset.train().len(),
        dataset.validation().len(),
        report.rejected.len()
    );
    let mut arts = Artifacts::default();
    let path = out.join(DATASET_FILE);
    dataset.save(&path)?;
    arts.push(path);
    arts.json(out.join("prepare_report.json"), &report)?;
    Ok(arts)
}

pub fn train_cmd(cfg: &RunConfig, dataset: &Path, init: Option<&Path>, out: &Path) -> Result<Artifacts> {
    let ds = load_dataset(dataset)?;
    let model = fit_model(&cfg.model, &ds);
    let init = match init {
        Some(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            Some(load_checkpoint_for(&bytes, &model)?.params)
        }
        None => None,
    };
    let mut cb = progress("");
    let outcome = train(
        &ds,
        &model,
        &cfg.trainer,
        TrainOptions {
            init,
            out_dir: Some(out),
            on_epoch: Some(&mut cb),
        },
    )?;
    let mut arts = Artifacts::default();
    train_artifacts(out, &mut arts);
    arts.json(out.join("train_summary.json"), &summary(&outcome))?;
    Ok(arts)
}

pub fn pretrain(cfg: &RunConfig, source: &Path, target: &Path, out: &Path) -> Result<Artifacts> {
    let a = load_dataset(source)?;
    let b = load_dataset(target)?;
    if a.width() != b.width() {
        bail!(Error::Contract(format!(
            "source width {} differs from target width {}",
            a.width(),
            b.width()
        )));
    }
    let model = fit_model(&cfg.model, &b);
    let outcome = pretrain_then_transfer(&a, &b, &model, &cfg.pretrain, &cfg.trainer, Some(out))?;
    let mut arts = Artifacts::default();
    train_artifacts(&out.join("phase1"), &mut arts);
    train_artifacts(&out.join("phase2"), &mut arts);
    #[derive(Serialize)]
    struct Report<'a> {
        transferred: &'a [String],
        fresh: &'a [String],
        phase1: TrainSummary,
        phase2: TrainSummary,
    }
    arts.json(
        out.join("transfer_report.json"),
        &Report {
            transferred: &outcome.report.loaded,
            fresh: &outcome.report.fresh,
            phase1: summary(&outcome.phase1),
            phase2: summary(&outcome.phase2),
        },
    )?;
    Ok(arts)
}

pub fn ablate_cmd(cfg: &RunConfig, dataset: &Path, pretrained: &Path, out: &Path) -> Result<Artifacts> {
    let ds = load_dataset(dataset)?;
    let model = fit_model(&cfg.model, &ds);
    let source = load_ckpt(pretrained)?;
    let table = ablate(&ds, &model, &cfg.trainer, &source.params, Some(out))?;
    let mut arts = Artifacts::default();
    for i in 1..=table.rows.len() {
        train_artifacts(&out.join(format!("row{i}")), &mut arts);
    }
    let csv = out.join("ablation.csv");
    fs::write(&csv, table.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    eprint!("{}", table.to_csv());
    arts.push(csv);
    arts.json(out.join("ablation.json"), &table)?;
    Ok(arts)
}

fn checkpoint_charset(ckpt: &Checkpoint) -> Result<Charset> {
    match &ckpt.meta.charset {
        Some(s) => Ok(Charset::from_symbols(s.chars().collect())?),
        None => Ok(Charset::default()),
    }
}

fn pick_reference(ckpt: &Checkpoint, dataset: Option<&Dataset>, speaker: Option<&str>) -> Result<ReferenceFrame> {
    match (dataset, speaker) {
        (Some(ds), Some(s)) => ds
            .reference(s)
            .cloned()
            .ok_or_else(|| Error::Usage(format!("speaker {s:?} is not in the dataset")).into()),
        (Some(ds), None) => ds
            .clips
            .first()
            .map(|c| c.reference.clone())
            .ok_or_else(|| Error::EmptyInput("dataset has no clips".into()).into()),
        (None, Some(_)) => bail!(Error::Usage("--speaker needs --dataset".into())),
        (None, None) => Ok(match &ckpt.meta.reference {
            Some(r) => r.clone(),
            None => {
                eprintln!("warning: checkpoint has no reference frame; exporting raw displacements");
                ReferenceFrame::zeros("none")
            }
        }),
    }
}

fn landmark_set(width: usize) -> Result<lipmotion::corpus::LandmarkSet> {
    lipmotion::corpus::LandmarkSet::from_width(width)
        .ok_or_else(|| Error::Contract(format!("model width {width} is neither lips nor all landmarks")).into())
}

fn export_to(traj: &Trajectory, format: ExportFormat, out: &Path, arts: &mut Artifacts) -> Result<()> {
    let target = match format {
        ExportFormat::Csv => out.join(TRAJECTORY_FILE),
        ExportFormat::SvgFrames => out.join("frames"),
    };
    arts.0.extend(export_trajectory(traj, format, &target)?);
    Ok(())
}

pub struct InferArgs<'a> {
    pub text: &'a str,
    pub checkpoint: &'a Path,
    pub dataset: Option<&'a Path>,
    pub speaker: Option<&'a str>,
    pub format: ExportFormat,
}

pub fn infer_cmd(cfg: &RunConfig, args: InferArgs, out: &Path) -> Result<Artifacts> {
    let ckpt = load_ckpt(args.checkpoint)?;
    let charset = checkpoint_charset(&ckpt)?;
    let text = args.text.to_uppercase();
    let tokens = encode_text(&text, &charset)?;
    if tokens.is_empty() {
        bail!(Error::Usage("--text is empty".into()));
    }
    let ds = args.dataset.map(load_dataset).transpose()?;
    let reference = pick_reference(&ckpt, ds.as_ref(), args.speaker)?;
    let result = infer(&ckpt.params, &ckpt.config, &tokens, &cfg.infer)?;
    let set = landmark_set(ckpt.config.output_width)?;
    let traj = Trajectory::from_displacements(&result.frames, &reference, set)?;
    let mut arts = Artifacts::default();
    export_to(&traj, args.format, out, &mut arts)?;
    #[derive(Serialize)]
    struct Report<'a> {
        text: &'a str,
        frames: usize,
        width: usize,
        duration_seconds: f64,
        stopped_by_gate: bool,
        speaker: &'a str,
    }
    arts.json(
        out.join("inference.json"),
        &Report {
            text: &text,
            frames: result.frames.rows(),
            width: result.frames.width(),
            duration_seconds: result.duration_seconds(),
            stopped_by_gate: result.stopped_by_gate,
            speaker: &reference.speaker_id,
        },
    )?;
    Ok(arts)
}

pub fn eval_checkpoint(
    cfg: &RunConfig,
    checkpoint: &Path,
    dataset: &Path,
    split: Split,
    out: &Path,
) -> Result<Artifacts> {
    let ckpt = load_ckpt(checkpoint)?;
    let ds = load_dataset(dataset)?;
    if ckpt.config.output_width != ds.width() || ckpt.config.charset_size != ds.charset.len() {
        bail!(Error::Compatibility {
            message: "checkpoint does not match the dataset".into(),
            names: vec!["output_width".into(), "charset_size".into()],
        });
    }
    let clips = ds.split(split);
    if clips.is_empty() {
        bail!(Error::EmptyInput(format!("dataset has no {split:?} clips")));
    }
    let set = ds.landmarks;
    #[derive(Serialize)]
    struct Row {
        clip_id: String,
        pred_frames: usize,
        truth_frames: usize,
        mean_manhattan_mm: f64,
        mean_landmark_l1_mm: f64,
        mean_abs_mm: f64,
        note: Option<String>,
    }
    let mut rows = Vec::new();
    for clip in &clips {
        let pred = infer(&ckpt.params, &ckpt.config, &clip.tokens, &cfg.infer)?;
        let p = Trajectory::from_displacements(&pred.frames, &clip.reference, set)?;
        let t = Trajectory::from_displacements(&clip.displacements.frames, &clip.reference, set)?;
        let r = manhattan_error(&p, &t)?;
        rows.push(Row {
            clip_id: clip.clip_id.clone(),
            pred_frames: r.pred_frames,
            truth_frames: r.truth_frames,
            mean_manhattan_mm: r.mean_manhattan_mm,
            mean_landmark_l1_mm: r.mean_landmark_l1_mm,
            mean_abs_mm: r.mean_abs_mm,
            note: r.note,
        });
    }
    let teacher_forced_loss = evaluate(&ckpt.params, &ckpt.config, &cfg.trainer, &clips)?;
    let mut arts = Artifacts::default();
    let csv_path = out.join("eval.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    arts.push(csv_path);
    let mean = |f: fn(&Row) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    #[derive(Serialize)]
    struct Summary {
        split: Split,
        clips: usize,
        teacher_forced_loss: f64,
        mean_manhattan_mm: f64,
        mean_landmark_l1_mm: f64,
        mean_abs_mm: f64,
    }
    let s = Summary {
        split,
        clips: rows.len(),
        teacher_forced_loss,
        mean_manhattan_mm: mean(|r| r.mean_manhattan_mm),
        mean_landmark_l1_mm: mean(|r| r.mean_landmark_l1_mm),
        mean_abs_mm: mean(|r| r.mean_abs_mm),
    };
    eprintln!(
        "{} clips: mean Manhattan {:.3} mm/frame, {:.3} mm/landmark, teacher-forced loss {:.4e}",
        s.clips, s.mean_manhattan_mm, s.mean_landmark_l1_mm, s.teacher_forced_loss
    );
    arts.json(out.join("eval_summary.json"), &s)?;
    Ok(arts)
}

pub fn eval_compare(truth: &Path, preds: &[String], out: &Path) -> Result<Artifacts> {
    let truth = import_csv(truth)?;
    let mut loaded = Vec::new();
    for p in preds {
        let (label, path) = p
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--pred {p:?} is not LABEL=CSV")))?;
        loaded.push((label.to_string(), import_csv(Path::new(path))?));
    }
    let pairs: Vec<(&str, &Trajectory)> = loaded.iter().map(|(l, t)| (l.as_str(), t)).collect();
    let report = compare_report(&pairs, &truth)?;
    let mut arts = Artifacts::default();
    let csv_path = out.join("comparison.csv");
    fs::write(&csv_path, report.to_csv()).with_context(|| format!("writing {}", csv_path.display()))?;
    eprint!("{}", report.to_csv());
    arts.push(csv_path);
    arts.json(out.join("comparison.json"), &report)?;
    Ok(arts)
}

pub fn export_cmd(
    input: Option<&Path>,
    dataset: Option<&Path>,
    clip: Option<&str>,
    format: ExportFormat,
    out: &Path,
) -> Result<Artifacts> {
    let traj = match (input, dataset, clip) {
        (Some(p), None, None) => import_csv(p)?,
        (None, Some(d), Some(id)) => {
            let ds = load_dataset(d)?;
            let c = ds
                .clip(id)
                .ok_or_else(|| Error::Usage(format!("clip {id:?} is not in the dataset")))?;
            Trajectory::from_displacements(&c.displacements.frames, &c.reference, ds.landmarks)?
        }
        _ => bail!(Error::Usage(
            "export needs either --input CSV or --dataset FILE --clip ID".into()
        )),
    };
    let mut arts = Artifacts::default();
    export_to(&traj, format, out, &mut arts)?;
    Ok(arts)
}

pub fn seeds(cfg: &RunConfig) -> serde_json::Value {
    serde_json::json!({
        "synth": cfg.synth.seed,
        "prepare": cfg.prepare.seed,
        "pretrain": cfg.pretrain.seed,
        "trainer": cfg.trainer.seed,
    })
}
