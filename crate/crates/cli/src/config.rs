//! Flat `key = value` configuration with a closed schema.
//!
//! Precedence, lowest to highest: built-in defaults, the `TSGCL_SEED`
//! environment variable (seed only), the `--config` file, command-line
//! flags. Every run writes the full effective configuration to
//! `config.resolved` in the output directory; feeding that file back via
//! `--config` reproduces the run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use tsgcl_core::contrastive::KernelConfig;
use tsgcl_core::data::format::read_header;
use tsgcl_core::data::synth::SynthConfig;
use tsgcl_core::data::{LabelScheme, ModalityDims, Polarity};
use tsgcl_core::model::{ModelConfig, Variant};
use tsgcl_core::train::{SplitConfig, TrainConfig};

use crate::error::{CliError, CliResult};

/// Environment variable consulted for the seed before file and flags.
pub const SEED_ENV: &str = "TSGCL_SEED";

/// The closed schema: every key with its default value. Unknown keys in a
/// configuration file are errors.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "7"),
    ("out", "out"),
    ("jobs", "1"),
    ("scheme", "iemocap"),
    ("scheme.labels", ""),
    ("data.train", ""),
    ("data.val", ""),
    ("data.test", ""),
    ("eval.pred", ""),
    ("synth.dialogues", "60"),
    ("synth.utterances", "10"),
    ("synth.classes", "6"),
    ("synth.speakers", "2"),
    ("synth.dim_text", "10"),
    ("synth.dim_audio", "10"),
    ("synth.dim_visual", "10"),
    ("synth.separation", "1"),
    ("synth.noise", "0.5"),
    ("model.d_hidden", "64"),
    ("model.d_speaker", "16"),
    ("model.head_hidden", "128"),
    ("model.layers", "4"),
    ("model.kappa", "0.1"),
    ("model.lambda_decay", "1"),
    ("model.omega", "0.5"),
    ("model.conditioned", "true"),
    ("model.zeta", "1"),
    ("model.alpha", "1"),
    ("model.kernel", "median"),
    ("model.kernel.gamma", "1"),
    ("model.variant", "full"),
    ("train.epochs", "200"),
    ("train.lr", "0.001"),
    ("train.beta1", "0.9"),
    ("train.beta2", "0.999"),
    ("train.eps", "0.00000001"),
    ("train.patience", "10"),
    ("split.train", "0.7"),
    ("split.val", "0.15"),
    ("split.test", "0.15"),
    ("ablate.seeds", "1,2,3,4,5"),
];

/// Merged configuration; keys are fixed by [`DEFAULTS`].
#[derive(Debug, Clone)]
pub struct ConfigMap {
    map: BTreeMap<&'static str, String>,
}

fn schema_key(key: &str) -> Option<&'static str> {
    DEFAULTS.iter().map(|(k, _)| *k).find(|k| *k == key)
}

impl ConfigMap {
    /// Defaults plus the seed environment fallback.
    pub fn new() -> Self {
        let mut map: BTreeMap<&'static str, String> =
            DEFAULTS.iter().map(|(k, v)| (*k, v.to_string())).collect();
        if let Ok(seed) = std::env::var(SEED_ENV) {
            map.insert("seed", seed);
        }
        ConfigMap { map }
    }

    /// Layer a configuration file over the current values.
    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "{}:{}: expected `key = value`, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            let known = schema_key(key).ok_or_else(|| {
                CliError::Config(format!(
                    "{}:{}: unknown key {key:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.map.insert(known, value.trim().to_string());
        }
        Ok(())
    }

    /// Override one key; callers pass schema keys only.
    pub fn set(&mut self, key: &str, value: String) {
        let known = schema_key(key).expect("flag mapped to a key outside the schema");
        self.map.insert(known, value);
    }

    pub fn get(&self, key: &str) -> &str {
        self.map.get(key).map(String::as_str).expect("schema key")
    }

    pub fn get_usize(&self, key: &str) -> CliResult<usize> {
        self.get(key)
            .parse()
            .map_err(|_| CliError::Config(format!("{key}: expected an integer, got {:?}", self.get(key))))
    }

    pub fn get_u64(&self, key: &str) -> CliResult<u64> {
        self.get(key)
            .parse()
            .map_err(|_| CliError::Config(format!("{key}: expected an integer, got {:?}", self.get(key))))
    }

    pub fn get_f64(&self, key: &str) -> CliResult<f64> {
        self.get(key)
            .parse()
            .map_err(|_| CliError::Config(format!("{key}: expected a number, got {:?}", self.get(key))))
    }

    pub fn get_bool(&self, key: &str) -> CliResult<bool> {
        match self.get(key) {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(CliError::Config(format!(
                "{key}: expected true or false, got {other:?}"
            ))),
        }
    }

    /// Full effective configuration as sorted `key = value` lines.
    pub fn resolved_text(&self) -> String {
        let mut text = String::new();
        for (k, v) in &self.map {
            text.push_str(k);
            text.push_str(" = ");
            text.push_str(v);
            text.push('\n');
        }
        text
    }

    /// Write `config.resolved` into the output directory.
    pub fn write_resolved(&self, out_dir: &Path) -> CliResult<()> {
        fs::write(out_dir.join("config.resolved"), self.resolved_text())?;
        Ok(())
    }
}

pub fn model_config(cfg: &ConfigMap) -> CliResult<ModelConfig> {
    let kernel = match cfg.get("model.kernel") {
        "median" => KernelConfig::MedianHeuristic,
        "fixed" => KernelConfig::Fixed(cfg.get_f64("model.kernel.gamma")?),
        other => {
            return Err(CliError::Config(format!(
                "model.kernel: expected median or fixed, got {other:?}"
            )))
        }
    };
    let mc = ModelConfig {
        d_hidden: cfg.get_usize("model.d_hidden")?,
        d_speaker: cfg.get_usize("model.d_speaker")?,
        head_hidden: cfg.get_usize("model.head_hidden")?,
        gcn_layers: cfg.get_usize("model.layers")?,
        kappa: cfg.get_f64("model.kappa")?,
        lambda_decay: cfg.get_f64("model.lambda_decay")?,
        omega: cfg.get_f64("model.omega")?,
        conditioned: cfg.get_bool("model.conditioned")?,
        zeta: cfg.get_f64("model.zeta")?,
        alpha: cfg.get_f64("model.alpha")?,
        kernel,
        variant: variant(cfg.get("model.variant"))?,
    };
    mc.validate()?;
    Ok(mc)
}

pub fn variant(name: &str) -> CliResult<Variant> {
    match name {
        "full" => Ok(Variant::Full),
        "no-gcl" => Ok(Variant::NoContrastive),
        "no-ts" => Ok(Variant::NoTwoStage),
        other => Err(CliError::Config(format!(
            "model.variant: expected full, no-gcl, or no-ts, got {other:?}"
        ))),
    }
}

pub fn train_config(cfg: &ConfigMap) -> CliResult<TrainConfig> {
    let tc = TrainConfig {
        epochs: cfg.get_usize("train.epochs")?,
        lr: cfg.get_f64("train.lr")?,
        beta1: cfg.get_f64("train.beta1")?,
        beta2: cfg.get_f64("train.beta2")?,
        eps: cfg.get_f64("train.eps")?,
        patience: cfg.get_usize("train.patience")?,
        seed: cfg.get_u64("seed")?,
    };
    tc.validate()?;
    Ok(tc)
}

pub fn split_config(cfg: &ConfigMap) -> CliResult<SplitConfig> {
    let sc = SplitConfig {
        train: cfg.get_f64("split.train")?,
        val: cfg.get_f64("split.val")?,
        test: cfg.get_f64("split.test")?,
        seed: cfg.get_u64("seed")?,
    };
    sc.validate()?;
    Ok(sc)
}

pub fn synth_config(cfg: &ConfigMap) -> CliResult<SynthConfig> {
    Ok(SynthConfig {
        dialogues: cfg.get_usize("synth.dialogues")?,
        utterances_per_dialogue: cfg.get_usize("synth.utterances")?,
        classes: cfg.get_usize("synth.classes")?,
        speakers: cfg.get_usize("synth.speakers")?,
        dims: ModalityDims {
            text: cfg.get_usize("synth.dim_text")?,
            audio: cfg.get_usize("synth.dim_audio")?,
            visual: cfg.get_usize("synth.dim_visual")?,
        },
        separation: cfg.get_f64("synth.separation")?,
        noise: cfg.get_f64("synth.noise")?,
        seed: cfg.get_u64("seed")?,
    })
}

pub fn ablation_seeds(cfg: &ConfigMap) -> CliResult<Vec<u64>> {
    let raw = cfg.get("ablate.seeds");
    let seeds: Result<Vec<u64>, _> = raw.split(',').map(|s| s.trim().parse()).collect();
    let seeds = seeds
        .map_err(|_| CliError::Config(format!("ablate.seeds: expected integers, got {raw:?}")))?;
    if seeds.is_empty() {
        return Err(CliError::Config("ablate.seeds: at least one seed required".into()));
    }
    Ok(seeds)
}

fn parse_polarity(tag: &str) -> CliResult<Polarity> {
    match tag {
        "+" | "+1" => Ok(Polarity::Positive),
        "0" => Ok(Polarity::Neutral),
        "-" | "-1" => Ok(Polarity::Negative),
        other => Err(CliError::Config(format!(
            "scheme.labels: polarity must be one of +, 0, -, got {other:?}"
        ))),
    }
}

/// Build the label scheme for reading a dataset file. The `cycling` scheme
/// derives its names from the file header (the synthetic-data convention),
/// so it needs the path.
pub fn scheme_for_file(cfg: &ConfigMap, path: &Path) -> CliResult<LabelScheme> {
    match cfg.get("scheme") {
        "iemocap" => Ok(LabelScheme::iemocap()),
        "meld" => Ok(LabelScheme::meld()),
        "cycling" => {
            let header = read_header(path).map_err(|e| CliError::from(e).with_path(path))?;
            Ok(LabelScheme::from_names_cycling(&header.label_names)?)
        }
        "custom" => {
            let raw = cfg.get("scheme.labels");
            if raw.is_empty() {
                return Err(CliError::Config(
                    "scheme.labels must be set when scheme = custom".into(),
                ));
            }
            let mut classes = Vec::new();
            for item in raw.split(',') {
                let (name, tag) = item.trim().split_once(':').ok_or_else(|| {
                    CliError::Config(format!("scheme.labels: expected name:polarity, got {item:?}"))
                })?;
                classes.push((name.trim().to_string(), parse_polarity(tag.trim())?));
            }
            Ok(LabelScheme::custom(classes)?)
        }
        other => Err(CliError::Config(format!(
            "scheme: expected iemocap, meld, cycling, or custom, got {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_cover_every_schema_key_once() {
        let mut keys: Vec<&str> = DEFAULTS.iter().map(|(k, _)| *k).collect();
        let n = keys.len();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), n);
    }

    #[test]
    fn file_overrides_defaults_and_rejects_unknown_keys() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# comment\n\ntrain.epochs = 5\nseed=11").unwrap();
        let mut cfg = ConfigMap::new();
        cfg.apply_file(file.path()).unwrap();
        assert_eq!(cfg.get("train.epochs"), "5");
        assert_eq!(cfg.get("seed"), "11");

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "no.such.key = 1").unwrap();
        let err = ConfigMap::new().apply_file(bad.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut cfg = ConfigMap::new();
        cfg.set("train.lr", "0.005".into());
        cfg.set("data.train", "some/path.tsgcl".into());
        let text = cfg.resolved_text();

        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(text.as_bytes()).unwrap();
        let mut reread = ConfigMap::new();
        reread.apply_file(file.path()).unwrap();
        assert_eq!(reread.resolved_text(), text);
    }

    #[test]
    fn typed_getters_reject_malformed_values() {
        let mut cfg = ConfigMap::new();
        cfg.set("train.epochs", "many".into());
        assert_eq!(cfg.get_usize("train.epochs").unwrap_err().exit_code(), 2);
        cfg.set("model.kappa", "high".into());
        assert_eq!(cfg.get_f64("model.kappa").unwrap_err().exit_code(), 2);
        cfg.set("model.conditioned", "yes".into());
        assert_eq!(cfg.get_bool("model.conditioned").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn model_config_resolves_kernel_and_variant() {
        let mut cfg = ConfigMap::new();
        let mc = model_config(&cfg).unwrap();
        assert!(matches!(mc.kernel, KernelConfig::MedianHeuristic));
        assert!(matches!(mc.variant, Variant::Full));

        cfg.set("model.kernel", "fixed".into());
        cfg.set("model.kernel.gamma", "2.5".into());
        cfg.set("model.variant", "no-gcl".into());
        let mc = model_config(&cfg).unwrap();
        assert!(matches!(mc.kernel, KernelConfig::Fixed(g) if g == 2.5));
        assert!(matches!(mc.variant, Variant::NoContrastive));

        cfg.set("model.variant", "bogus".into());
        assert_eq!(model_config(&cfg).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn ablation_seed_list_parses() {
        let mut cfg = ConfigMap::new();
        assert_eq!(ablation_seeds(&cfg).unwrap(), vec![1, 2, 3, 4, 5]);
        cfg.set("ablate.seeds", "9, 8".into());
        assert_eq!(ablation_seeds(&cfg).unwrap(), vec![9, 8]);
        cfg.set("ablate.seeds", "one".into());
        assert_eq!(ablation_seeds(&cfg).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn custom_scheme_parses_polarities() {
        let mut cfg = ConfigMap::new();
        cfg.set("scheme", "custom".into());
        cfg.set("scheme.labels", "joy:+, sad:-1, flat:0".into());
        let s = scheme_for_file(&cfg, Path::new("/nonexistent")).unwrap();
        assert_eq!(s.names(), ["joy", "sad", "flat"]);
        assert_eq!(s.polarity(0), Polarity::Positive);
        assert_eq!(s.polarity(1), Polarity::Negative);
        assert_eq!(s.polarity(2), Polarity::Neutral);
    }
}
