//! Key=value run configuration.
//!
//! One flat namespace covers dataset, model, training, loss, and evaluation
//! knobs. Files hold `key = value` lines with `#` comments; the same keys
//! can be set on the command line. Unknown keys are rejected so typos never
//! pass silently, and every key carries a provenance tag saying whether its
//! default comes from the method description or is an artifact choice.

use std::path::Path;

use crate::data::SyntheticDatasetSpec;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::trainer::TrainSchedule;

/// Where a default comes from: the method description or this artifact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Paper,
    Chosen,
}

impl Provenance {
    pub fn label(self) -> &'static str {
        match self {
            Provenance::Paper => "paper",
            Provenance::Chosen => "chosen",
        }
    }
}

/// One configurable key: name, rendered default, provenance, one-line help.
pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub provenance: Provenance,
    pub help: &'static str,
}

pub const KEYS: &[KeySpec] = &[
    KeySpec { name: "seed", default: "7", provenance: Provenance::Chosen, help: "master seed for weight init and batch sampling" },
    KeySpec { name: "data.train_identities", default: "20", provenance: Provenance::Chosen, help: "identities in the train split" },
    KeySpec { name: "data.test_identities", default: "10", provenance: Provenance::Chosen, help: "identities in the test split" },
    KeySpec { name: "data.images_per_modality", default: "8", provenance: Provenance::Chosen, help: "images per identity per modality" },
    KeySpec { name: "data.height", default: "32", provenance: Provenance::Chosen, help: "image height in pixels" },
    KeySpec { name: "data.width", default: "16", provenance: Provenance::Chosen, help: "image width in pixels" },
    KeySpec { name: "data.radial_gain_scale", default: "0.6", provenance: Provenance::Chosen, help: "strength of the infrared high-frequency attenuation, in [0,1)" },
    KeySpec { name: "data.gain_jitter", default: "0.2", provenance: Provenance::Chosen, help: "half-width of the per-sample jitter on the gain strength" },
    KeySpec { name: "data.noise_sigma", default: "0.02", provenance: Provenance::Chosen, help: "per-pixel Gaussian noise level" },
    KeySpec { name: "data.seed", default: "17", provenance: Provenance::Chosen, help: "seed of the synthetic image generator" },
    KeySpec { name: "model.stage_channels", default: "8,16,32", provenance: Provenance::Chosen, help: "backbone stage widths, comma-separated" },
    KeySpec { name: "model.disc_hidden", default: "16", provenance: Provenance::Chosen, help: "discriminator hidden width (architecture unstated in the method)" },
    KeySpec { name: "model.iaf_hidden", default: "8", provenance: Provenance::Chosen, help: "filter projection width C_hidden (method says only 'higher dimension')" },
    KeySpec { name: "model.iaf_log_compress", default: "true", provenance: Provenance::Chosen, help: "feed log(1+A) to the filter projection instead of raw amplitude" },
    KeySpec { name: "model.ppnorm_stages", default: "3", provenance: Provenance::Paper, help: "1-based backbone stages whose norm preserves phase (default: final stage)" },
    KeySpec { name: "model.norm_eps", default: "1e-5", provenance: Provenance::Chosen, help: "epsilon inside every normalization (method gives it symbolically)" },
    KeySpec { name: "toggles.iaf", default: "true", provenance: Provenance::Paper, help: "enable the instance-adaptive amplitude filter" },
    KeySpec { name: "toggles.ppnorm", default: "true", provenance: Provenance::Paper, help: "enable phase-preserving normalization" },
    KeySpec { name: "toggles.mal", default: "true", provenance: Provenance::Paper, help: "enable the adversarial modality branch" },
    KeySpec { name: "toggles.grayscale_guidance", default: "true", provenance: Provenance::Paper, help: "forward grayscale copies of visible images and tie them with the consistency loss" },
    KeySpec { name: "train.epochs", default: "40", provenance: Provenance::Chosen, help: "training epochs (desk-scale stand-in for the full budget)" },
    KeySpec { name: "train.base_lr", default: "0.01", provenance: Provenance::Chosen, help: "initial learning rate (full-scale training uses 0.1 on a pretrained backbone)" },
    KeySpec { name: "train.milestones", default: "0.2,0.5", provenance: Provenance::Paper, help: "epoch fractions where the rate decays (20% and 50% of the budget)" },
    KeySpec { name: "train.lr_decay", default: "0.1", provenance: Provenance::Paper, help: "multiplicative decay at each milestone" },
    KeySpec { name: "train.batch_identities", default: "4", provenance: Provenance::Chosen, help: "identities per batch (P)" },
    KeySpec { name: "train.images_per_modality", default: "2", provenance: Provenance::Chosen, help: "images per identity per modality per batch (K)" },
    KeySpec { name: "train.momentum", default: "0.9", provenance: Provenance::Chosen, help: "SGD momentum (unstated in the method; conventional value)" },
    KeySpec { name: "train.weight_decay", default: "5e-4", provenance: Provenance::Chosen, help: "SGD weight decay (unstated in the method; conventional value)" },
    KeySpec { name: "train.gray_identity_loss", default: "false", provenance: Provenance::Chosen, help: "also apply the identity loss to grayscale copies" },
    KeySpec { name: "loss.lambda1", default: "1", provenance: Provenance::Chosen, help: "consistency-loss weight (unstated; toy-scale grid search)" },
    KeySpec { name: "loss.lambda2", default: "0.5", provenance: Provenance::Chosen, help: "center-cluster-loss weight (unstated; toy-scale grid search)" },
    KeySpec { name: "loss.rho", default: "1", provenance: Provenance::Chosen, help: "center-separation margin (unstated; toy-scale grid search)" },
    KeySpec { name: "eval.splits", default: "10", provenance: Provenance::Paper, help: "repeated random gallery draws per evaluation" },
    KeySpec { name: "demo.bands", default: "0.1,0.4", provenance: Provenance::Chosen, help: "low/mid and mid/high radius cutoffs for the band demo (unstated; qualitative figure)" },
];

/// Everything a run needs, assembled from defaults, a config file, and
/// command-line overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: SyntheticDatasetSpec,
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub weights: LossWeights,
    pub gray_identity_loss: bool,
    pub eval_splits: usize,
    /// Low/mid and mid/high cutoffs of the three-band demo.
    pub demo_bands: (f64, f64),
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            data: SyntheticDatasetSpec::default(),
            model: ModelConfig::default(),
            schedule: TrainSchedule::default(),
            weights: LossWeights::default(),
            gray_identity_loss: false,
            eval_splits: 10,
            demo_bands: (0.1, 0.4),
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("key {key}: cannot parse {value:?} as {want}"))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(key, v, "an unsigned integer"))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| bad(key, v, "an unsigned integer"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| bad(key, v, "a number"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(bad(key, v, "a boolean (true/false)")),
    }
}

fn parse_usize_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|p| p.trim().parse().map_err(|_| bad(key, v, "comma-separated integers")))
        .collect()
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|p| p.trim().parse().map_err(|_| bad(key, v, "comma-separated numbers")))
        .collect()
}

impl RunConfig {
    /// Sets one key. Unknown keys and malformed values are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_u64(key, v)?,
            "data.train_identities" => self.data.train_identities = parse_usize(key, v)?,
            "data.test_identities" => self.data.test_identities = parse_usize(key, v)?,
            "data.images_per_modality" => self.data.images_per_modality = parse_usize(key, v)?,
            "data.height" => self.data.height = parse_usize(key, v)?,
            "data.width" => self.data.width = parse_usize(key, v)?,
            "data.radial_gain_scale" => self.data.radial_gain_scale = parse_f64(key, v)?,
            "data.gain_jitter" => self.data.gain_jitter = parse_f64(key, v)?,
            "data.noise_sigma" => self.data.noise_sigma = parse_f64(key, v)?,
            "data.seed" => self.data.seed = parse_u64(key, v)?,
            "model.stage_channels" => self.model.stage_channels = parse_usize_list(key, v)?,
            "model.disc_hidden" => self.model.disc_hidden = parse_usize(key, v)?,
            "model.iaf_hidden" => self.model.iaf.hidden_channels = parse_usize(key, v)?,
            "model.iaf_log_compress" => self.model.iaf.log_compress = parse_bool(key, v)?,
            "model.ppnorm_stages" => self.model.ppnorm.stages = parse_usize_list(key, v)?,
            "model.norm_eps" => {
                let eps = parse_f64(key, v)?;
                self.model.bn_eps = eps;
                self.model.iaf.bn_eps = eps;
                self.model.ppnorm.eps = eps;
            }
            "toggles.iaf" => self.model.toggles.iaf = parse_bool(key, v)?,
            "toggles.ppnorm" => self.model.toggles.ppnorm = parse_bool(key, v)?,
            "toggles.mal" => self.model.toggles.mal = parse_bool(key, v)?,
            "toggles.grayscale_guidance" => {
                self.model.toggles.grayscale_guidance = parse_bool(key, v)?
            }
            "train.epochs" => self.schedule.epochs = parse_usize(key, v)?,
            "train.base_lr" => self.schedule.base_lr = parse_f64(key, v)?,
            "train.milestones" => self.schedule.milestones = parse_f64_list(key, v)?,
            "train.lr_decay" => self.schedule.lr_decay = parse_f64(key, v)?,
            "train.batch_identities" => self.schedule.batch_identities = parse_usize(key, v)?,
            "train.images_per_modality" => {
                self.schedule.images_per_modality = parse_usize(key, v)?
            }
            "train.momentum" => self.schedule.momentum = parse_f64(key, v)?,
            "train.weight_decay" => self.schedule.weight_decay = parse_f64(key, v)?,
            "train.gray_identity_loss" => self.gray_identity_loss = parse_bool(key, v)?,
            "loss.lambda1" => self.weights.lambda1 = parse_f64(key, v)?,
            "loss.lambda2" => self.weights.lambda2 = parse_f64(key, v)?,
            "loss.rho" => self.weights.rho = parse_f64(key, v)?,
            "eval.splits" => self.eval_splits = parse_usize(key, v)?,
            "demo.bands" => {
                let cuts = parse_f64_list(key, v)?;
                if cuts.len() != 2 {
                    return Err(Error::Config(format!(
                        "key {key}: expected two cutoffs, got {}",
                        cuts.len()
                    )));
                }
                self.demo_bands = (cuts[0], cuts[1]);
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown config key {key:?}; see --help for the key list"
                )))
            }
        }
        Ok(())
    }

    /// Applies a `key = value` file with `#` comments and blank lines.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::Config(format!("cannot read config file {}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key = value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies one `key=value` command-line override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.apply(key.trim(), value.trim())
    }

    /// Syncs derived fields and validates every section.
    pub fn finalize(mut self) -> Result<RunConfig> {
        self.model.num_identities = self.data.train_identities;
        self.model.iaf.in_channels = self.model.in_channels;
        self.data.validate()?;
        self.model.validate()?;
        self.schedule.validate()?;
        self.weights.validate()?;
        if self.eval_splits == 0 {
            return Err(Error::Config("eval.splits must be at least 1".into()));
        }
        let (lo, hi) = self.demo_bands;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "demo.bands cutoffs must satisfy 0 < low < high < 1, got {lo}, {hi}"
            )));
        }
        Ok(self)
    }
}

/// The key table rendered for --help: name, default, provenance, summary.
pub fn help_text() -> String {
    let name_w = KEYS.iter().map(|k| k.name.len()).max().unwrap_or(0);
    let def_w = KEYS.iter().map(|k| k.default.len()).max().unwrap_or(0);
    let mut out = String::from(
        "Config keys (file lines or --set key=value; provenance: [paper] = \
         stated by the method, [chosen] = artifact default):\n",
    );
    for k in KEYS {
        out.push_str(&format!(
            "  {:<name_w$}  {:<def_w$}  [{}] {}\n",
            k.name,
            k.default,
            k.provenance.label(),
            k.help
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn applying_every_default_reproduces_the_defaults() {
        let mut cfg = RunConfig::default();
        for k in KEYS {
            cfg.apply(k.name, k.default).unwrap();
        }
        assert_eq!(cfg, RunConfig::default());
        cfg.finalize().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply("train.epochz", "40").unwrap_err();
        assert!(format!("{err}").contains("train.epochz"));
        let err = cfg.apply("train.epochs", "soup").unwrap_err();
        assert!(format!("{err}").contains("soup"));
        assert!(cfg.apply("demo.bands", "0.1,0.4,0.7").is_err());
    }

    #[test]
    fn file_parsing_skips_comments_and_sets_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# toy run\n\ntrain.epochs = 3\nloss.lambda2=0.25\n  toggles.mal = off\n",
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.schedule.epochs, 3);
        assert_eq!(cfg.weights.lambda2, 0.25);
        assert!(!cfg.model.toggles.mal);

        std::fs::write(&path, "train.epochs 3\n").unwrap();
        let err = cfg.apply_file(&path).unwrap_err();
        assert!(format!("{err}").contains(":1:"));
        assert!(cfg.apply_file(&dir.path().join("missing.cfg")).is_err());
    }

    #[test]
    fn finalize_syncs_the_classifier_to_the_train_split() {
        let mut cfg = RunConfig::default();
        cfg.apply("data.train_identities", "6").unwrap();
        let cfg = cfg.finalize().unwrap();
        assert_eq!(cfg.model.num_identities, 6);

        let mut cfg = RunConfig::default();
        cfg.apply("demo.bands", "0.5,0.2").unwrap();
        assert!(cfg.finalize().is_err());
    }

    #[test]
    fn help_lists_every_key_with_provenance() {
        let help = help_text();
        for k in KEYS {
            assert!(help.contains(k.name), "help is missing {}", k.name);
        }
        assert!(help.contains("[paper]"));
        assert!(help.contains("[chosen]"));
    }

    #[test]
    fn overrides_require_key_equals_value() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("train.epochs=5").unwrap();
        assert_eq!(cfg.schedule.epochs, 5);
        assert!(cfg.apply_override("train.epochs").is_err());
    }
}
