use std::path::Path;

use anyhow::{Context, Result};
use lipmotion::corpus::PrepareConfig;
use lipmotion::net::{InferOptions, ModelConfig, Preset};
use lipmotion::trainer::TrainConfig;
use lipmotion::Error;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub seed: u64,
    pub clips: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self { seed: 0, clips: 10 }
    }
}

/// Everything a run can be configured with. `pretrain` drives phase 1 of
/// `pretrain`; `trainer` drives `train`, phase 2 and every ablation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthSettings,
    pub prepare: PrepareConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub trainer: TrainConfig,
    pub infer: InferOptions,
}

impl RunConfig {
    pub fn defaults(preset: Preset) -> Self {
        let model = match preset {
            Preset::Full => ModelConfig::full(30, 60),
            Preset::Toy => ModelConfig::default(),
        };
        Self {
            synth: SynthSettings::default(),
            prepare: PrepareConfig::default(),
            model,
            pretrain: TrainConfig::default(),
            trainer: TrainConfig::default(),
            infer: InferOptions::default(),
        }
    }
}

fn usage(msg: String) -> anyhow::Error {
    Error::Usage(msg).into()
}

/// `a.b.c=value`; the value is JSON when it parses as JSON, else a string.
pub fn parse_override(raw: &str) -> Result<(Vec<String>, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| usage(format!("override {raw:?} is not KEY=VALUE")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(usage(format!("override key {key:?} has an empty segment")));
    }
    let value = serde_json::from_str(value.trim()).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((path, value))
}

fn merge(base: &mut Value, patch: Value, at: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                let slot = b
                    .get_mut(&k)
                    .ok_or_else(|| usage(format!("unknown config key {here:?}")))?;
                merge(slot, v, &here)?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

fn set_path(root: &mut Value, path: &[String], value: Value) -> Result<()> {
    let mut node = root;
    for (i, seg) in path.iter().enumerate() {
        let here = path[..=i].join(".");
        let obj = node
            .as_object_mut()
            .ok_or_else(|| usage(format!("config key {here:?} is below a non-object value")))?;
        node = obj
            .get_mut(seg)
            .ok_or_else(|| usage(format!("unknown config key {here:?}")))?;
    }
    *node = value;
    Ok(())
}

fn lookup<'a>(v: &'a Value, path: &[&str]) -> Option<&'a Value> {
    path.iter().try_fold(v, |node, seg| node.get(seg))
}

/// Defaults for the chosen preset, then the config file, then `--set`
/// overrides, then `--seed`. Unknown keys and ill-typed values are usage
/// errors raised before any work starts.
pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let file_value = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| usage(format!("config {} is not valid JSON: {e}", path.display())))?;
            if !v.is_object() {
                return Err(usage(format!("config {} must be a JSON object", path.display())));
            }
            v
        }
        None => Value::Object(Map::new()),
    };
    let parsed: Vec<(Vec<String>, Value)> = overrides.iter().map(|o| parse_override(o)).collect::<Result<_>>()?;

    let preset_value = parsed
        .iter()
        .rev()
        .find(|(p, _)| p == &["model", "preset"])
        .map(|(_, v)| v.clone())
        .or_else(|| lookup(&file_value, &["model", "preset"]).cloned());
    let preset = match preset_value {
        Some(v) => serde_json::from_value(v).map_err(|e| usage(format!("model.preset: {e}")))?,
        None => Preset::Toy,
    };

    let mut value = serde_json::to_value(RunConfig::defaults(preset)).expect("config serializes");
    merge(&mut value, file_value, "")?;
    for (path, v) in parsed {
        set_path(&mut value, &path, v)?;
    }
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| usage(format!("invalid config: {e}")))?;
    if let Some(s) = seed {
        cfg.synth.seed = s;
        cfg.prepare.seed = s;
        cfg.pretrain.seed = s;
        cfg.trainer.seed = s;
    }
    cfg.model.validate()?;
    cfg.pretrain.validate()?;
    cfg.trainer.validate()?;
    if !(0.0..1.0).contains(&cfg.prepare.val_fraction) {
        return Err(usage(format!(
            "prepare.val_fraction {} outside [0, 1)",
            cfg.prepare.val_fraction
        )));
    }
    if cfg.infer.max_frames == 0 {
        return Err(usage("infer.max_frames must be positive".into()));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(e: &anyhow::Error) -> Option<&Error> {
        e.downcast_ref::<Error>()
    }

    #[test]
    fn overrides_parse_json_or_string() {
        assert_eq!(
            parse_override("trainer.epochs=50").unwrap(),
            (vec!["trainer".into(), "epochs".into()], Value::from(50))
        );
        assert_eq!(parse_override("prepare.landmarks=all").unwrap().1, Value::from("all"));
        assert!(parse_override("trainer.epochs").is_err());
        assert!(parse_override("trainer..epochs=1").is_err());
    }

    #[test]
    fn resolution_order_and_validation() {
        let cfg = resolve(
            None,
            &["trainer.epochs=50".into(), "model.use_postnet=false".into()],
            Some(9),
        )
        .unwrap();
        assert_eq!(cfg.trainer.epochs, 50);
        assert!(!cfg.model.use_postnet);
        assert_eq!((cfg.synth.seed, cfg.prepare.seed, cfg.trainer.seed), (9, 9, 9));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"trainer": {"epochs": 7, "freeze": ["encoder."]}, "model": {"preset": "full"}}"#,
        )
        .unwrap();
        let cfg = resolve(Some(&path), &["trainer.epochs=8".into()], None).unwrap();
        assert_eq!(cfg.trainer.epochs, 8);
        assert_eq!(cfg.trainer.freeze, vec!["encoder.".to_string()]);
        assert_eq!(cfg.model, ModelConfig::full(30, 60));

        for bad in [
            "trainer.epoch=5",
            "trainer.epochs=\"many\"",
            "model.output_width=61",
            "nope=1",
        ] {
            let e = resolve(None, &[bad.into()], None).unwrap_err();
            assert!(
                matches!(code(&e), Some(Error::Usage(_)) | Some(Error::Contract(_))),
                "{bad}: {e}"
            );
        }
        std::fs::write(&path, r#"{"trainer": {"bogus": 1}}"#).unwrap();
        assert!(matches!(
            code(&resolve(Some(&path), &[], None).unwrap_err()),
            Some(Error::Usage(_))
        ));
    }
}
