//! `lipmotion`: synthesize, prepare, train, infer and evaluate from the command line.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use lipmotion::corpus::Split;
use lipmotion::metrics::ExportFormat;
use lipmotion::net::Preset;
use lipmotion::Error;
use serde::Serialize;

use commands::InferArgs;
use config::RunConfig;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "LIPMOTION_OUT";
const DEFAULT_OUT_ROOT: &str = "lipmotion-runs";

#[derive(Debug, Parser)]
#[command(name = "lipmotion", version, about = "Text-driven lip landmark trajectory synthesis")]
struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `trainer.epochs=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for synthesis, splitting and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: $LIPMOTION_OUT/<command> or ./lipmotion-runs/<command>].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, PartialEq)]
enum Command {
    /// Write a synthetic OpenFace corpus.
    Synth {
        #[arg(long)]
        clips: Option<usize>,
    },
    /// Build a dataset file from a corpus directory.
    Prepare {
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
    },
    /// Train on a source dataset, then transfer encoder and gate to a target dataset.
    Pretrain {
        /// Dataset for phase 1, where every parameter trains.
        #[arg(long, value_name = "FILE")]
        source: PathBuf,
        /// Dataset for phase 2, with encoder and gate frozen.
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
    },
    /// Train a model.
    Train {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Start from this checkpoint's weights.
        #[arg(long, value_name = "CKPT")]
        init: Option<PathBuf>,
    },
    /// Run the Pre-Net/Post-Net/pretraining ablation.
    Ablate {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Checkpoint supplying the pretrained encoder and gate.
        #[arg(long, value_name = "CKPT")]
        pretrained: PathBuf,
    },
    /// Generate a trajectory for a sentence.
    Infer {
        #[arg(long)]
        text: String,
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        /// Dataset providing the speaker reference frame.
        #[arg(long, value_name = "FILE")]
        dataset: Option<PathBuf>,
        #[arg(long, requires = "dataset")]
        speaker: Option<String>,
        /// csv or svg-frames.
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Score a checkpoint on a dataset split, or compare trajectory CSVs.
    Eval {
        #[arg(long, value_name = "CKPT", requires = "dataset", conflicts_with_all = ["truth", "preds"])]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        dataset: Option<PathBuf>,
        /// train or validation.
        #[arg(long, default_value = "validation")]
        split: String,
        /// Ground-truth trajectory CSV.
        #[arg(long, value_name = "CSV", requires = "preds")]
        truth: Option<PathBuf>,
        /// Labelled model trajectory, e.g. `A=model_a.csv`. Repeatable.
        #[arg(long = "pred", value_name = "LABEL=CSV")]
        preds: Vec<String>,
    },
    /// Export a trajectory CSV or a dataset clip as CSV or SVG frames.
    Export {
        #[arg(long, value_name = "CSV", conflicts_with_all = ["dataset", "clip"])]
        input: Option<PathBuf>,
        #[arg(long, value_name = "FILE", requires = "clip")]
        dataset: Option<PathBuf>,
        #[arg(long, requires = "dataset")]
        clip: Option<String>,
        /// csv or svg-frames.
        #[arg(long, default_value = "svg-frames")]
        format: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Prepare { .. } => "prepare",
            Command::Pretrain { .. } => "pretrain",
            Command::Train { .. } => "train",
            Command::Ablate { .. } => "ablate",
            Command::Infer { .. } => "infer",
            Command::Eval { .. } => "eval",
            Command::Export { .. } => "export",
        }
    }
}

fn schema_help() -> String {
    let defaults = serde_json::to_string_pretty(&RunConfig::defaults(Preset::Toy)).expect("config serializes");
    format!(
        "Configuration schema (toy defaults; `model.preset=full` switches to the full-size defaults):\n{defaults}\n\n\
         Exit codes: 0 success, 1 other failure, 2 usage, 3 malformed input, 4 empty or insufficient data,\n\
         5 inconsistent data or vocabulary, 6 shape or contract violation, 7 incompatible checkpoint,\n\
         8 non-finite numerics, 9 i/o"
    )
}

fn parse_args<I, T>(argv: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = Cli::command()
        .after_long_help(schema_help())
        .try_get_matches_from(argv)?;
    Cli::from_arg_matches(&matches)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|e| e.downcast_ref::<Error>()) else {
        return 1;
    };
    match e {
        Error::Usage(_) => 2,
        Error::Format(_) | Error::Parse { .. } | Error::Json(_) => 3,
        Error::EmptyInput(_) | Error::InsufficientData(_) => 4,
        Error::Consistency(_) | Error::Vocabulary { .. } => 5,
        Error::Shape { .. } | Error::Contract(_) => 6,
        Error::Compatibility { .. } => 7,
        Error::NonFinite { .. } | Error::NumericDomain(_) => 8,
        Error::Io { .. } => 9,
    }
}

fn output_dir(cli: &Cli) -> PathBuf {
    match &cli.out {
        Some(p) => p.clone(),
        None => std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
            .join(cli.command.name()),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    version: &'a str,
    seeds: serde_json::Value,
    config: &'a RunConfig,
    artifacts: &'a [PathBuf],
}

fn parse_format(s: &str) -> Result<ExportFormat> {
    Ok(s.parse::<ExportFormat>()?)
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "validation" | "val" => Ok(Split::Validation),
        other => Err(Error::Usage(format!("unknown split {other:?} (expected train or validation)")).into()),
    }
}

fn run(cli: &Cli, argv: Vec<String>) -> Result<Vec<PathBuf>> {
    let mut cfg = config::resolve(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    if let Command::Synth { clips: Some(n) } = cli.command {
        cfg.synth.clips = n;
    }
    // Flag-level validation happens before any output is created.
    let format = match &cli.command {
        Command::Infer { format, .. } | Command::Export { format, .. } => Some(parse_format(format)?),
        _ => None,
    };
    let split = match &cli.command {
        Command::Eval { split, .. } => Some(parse_split(split)?),
        _ => None,
    };
    if let Command::Eval {
        checkpoint: None,
        truth: None,
        ..
    } = &cli.command
    {
        return Err(Error::Usage("eval needs --checkpoint with --dataset, or --truth with --pred".into()).into());
    }
    let out = output_dir(cli);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let arts = match &cli.command {
        Command::Synth { .. } => commands::synth(&cfg, &out)?,
        Command::Prepare { corpus } => commands::prepare(&cfg, corpus, &out)?,
        Command::Pretrain { source, dataset } => commands::pretrain(&cfg, source, dataset, &out)?,
        Command::Train { dataset, init } => commands::train_cmd(&cfg, dataset, init.as_deref(), &out)?,
        Command::Ablate { dataset, pretrained } => commands::ablate_cmd(&cfg, dataset, pretrained, &out)?,
        Command::Infer {
            text,
            checkpoint,
            dataset,
            speaker,
            ..
        } => commands::infer_cmd(
            &cfg,
            InferArgs {
                text,
                checkpoint,
                dataset: dataset.as_deref(),
                speaker: speaker.as_deref(),
                format: format.expect("parsed above"),
            },
            &out,
        )?,
        Command::Eval {
            checkpoint: Some(ckpt),
            dataset,
            ..
        } => commands::eval_checkpoint(
            &cfg,
            ckpt,
            dataset.as_deref().expect("clap requires --dataset"),
            split.expect("parsed above"),
            &out,
        )?,
        Command::Eval { truth, preds, .. } => {
            commands::eval_compare(truth.as_deref().expect("checked above"), preds, &out)?
        }
        Command::Export {
            input, dataset, clip, ..
        } => commands::export_cmd(
            input.as_deref(),
            dataset.as_deref(),
            clip.as_deref(),
            format.expect("parsed above"),
            &out,
        )?,
    };
    let mut artifacts = arts.0;
    let manifest_path = out.join("manifest.json");
    let manifest = Manifest {
        command: cli.command.name(),
        argv,
        version: env!("CARGO_PKG_VERSION"),
        seeds: commands::seeds(&cfg),
        config: &cfg,
        artifacts: &artifacts,
    };
    write_json(&manifest_path, &manifest)?;
    artifacts.push(manifest_path);
    Ok(artifacts)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match parse_args(&argv) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli, argv) {
        Ok(artifacts) => {
            for a in artifacts {
                println!("{}", a.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_with_override() {
        let cli = parse_args([
            "lipmotion",
            "train",
            "--config",
            "c.json",
            "--set",
            "trainer.epochs=50",
            "--dataset",
            "d.ltds",
        ])
        .unwrap();
        assert_eq!(cli.config, Some(PathBuf::from("c.json")));
        assert_eq!(cli.overrides, vec!["trainer.epochs=50".to_string()]);
        assert_eq!(
            cli.command,
            Command::Train {
                dataset: "d.ltds".into(),
                init: None
            }
        );
    }

    #[test]
    fn infer_hello_world() {
        let cli = parse_args([
            "lipmotion",
            "infer",
            "--text",
            "HELLO WORLD",
            "--checkpoint",
            "best.ckpt",
        ])
        .unwrap();
        match cli.command {
            Command::Infer {
                text,
                checkpoint,
                format,
                ..
            } => {
                assert_eq!(text, "HELLO WORLD");
                assert_eq!(checkpoint, PathBuf::from("best.ckpt"));
                assert_eq!(format, "csv");
            }
            other => panic!("parsed {other:?}"),
        }
    }

    #[test]
    fn unknown_subcommand_and_flag_are_usage_errors() {
        for argv in [
            vec!["lipmotion", "bogus"],
            vec!["lipmotion", "train", "--dataset", "d", "--frobnicate"],
        ] {
            let e = parse_args(argv).unwrap_err();
            assert_eq!(e.exit_code(), 2);
        }
        let help = parse_args(["lipmotion", "--help"]).unwrap_err();
        assert_eq!(help.exit_code(), 0);
        assert!(help.to_string().contains("\"trainer\""));
    }

    #[test]
    fn error_kinds_map_to_distinct_codes() {
        let errs = [
            Error::Usage(String::new()),
            Error::Format(String::new()),
            Error::EmptyInput(String::new()),
            Error::Consistency(String::new()),
            Error::Contract(String::new()),
            Error::Compatibility {
                message: String::new(),
                names: vec![],
            },
            Error::NonFinite {
                iteration: 0,
                lr: 0.0,
                grad_norms: vec![],
            },
            Error::Io {
                path: "x".into(),
                source: std::io::Error::other("x"),
            },
        ];
        let codes: Vec<u8> = errs.into_iter().map(|e| exit_code(&anyhow::Error::from(e))).collect();
        assert_eq!(codes, vec![2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
        let wrapped = anyhow::Error::from(Error::Usage("u".into())).context("while resolving");
        assert_eq!(exit_code(&wrapped), 2);
    }
}
