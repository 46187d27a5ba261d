//! Experiment configuration: one TOML file, per-field `--set` overrides,
//! validated before any command does work.

use std::path::{Path, PathBuf};

use beta_evidence::data::GaussianOverlap;
use beta_evidence::evidential::{AnnealedWeight, RegularizerMode};
use beta_evidence::net::{DropoutPlacement, EvidenceActivation, Head, NetworkSpec};
use beta_evidence::selection::{UncertaintySource, DEFAULT_COVERAGES, DEFAULT_EPSILONS};
use beta_evidence::train::{OptimizerKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Separation whose Bayes-optimal ROC-AUC is 0.90: `√2 · Φ⁻¹(0.9)`.
pub const SEPARATION_AUC_090: f64 = 1.812_387_604_873_647_1;

/// Environment variable naming the output directory when neither `--out`
/// nor `output_dir` is given.
pub const OUT_ENV: &str = "BETAEV_OUT";

pub const DEFAULT_OUT: &str = "betaev-out";

/// Field reference printed by `--help`.
pub const CONFIG_REFERENCE: &str = "\
CONFIG FIELDS (TOML; every field optional, override any with --set section.key=value)
  seed                        u64    master seed for generation, training and subsampling [0]
  output_dir                  path   output directory; --out wins, then this, then $BETAEV_OUT, then ./betaev-out

  [data]
  data.source                 gaussian | files                                       [gaussian]
  data.n                      total samples generated before splitting               [3500]
  data.dim                    feature dimension                                      [2]
  data.separation             distance between the two class means                   [1.8123876 (Bayes AUC 0.90)]
  data.flip_rate              probability each label is flipped, in [0, 0.5)          [0.1]
  data.positive_fraction      share of positive samples by true class                [0.5]
  data.group_size             consecutive ids share a group of this size             [unset: no groups]
  data.fractions              [train, val, test] shares, nonnegative, summing to 1   [4/7, 1/7, 2/7]
  data.clean_test_labels      undo injected flips in the test split                  [true]
  data.ood_offset_sigmas      shift of the out-of-distribution probe                 [8.0]
  data.ood_n                  probe size; 0 skips the probe                          [500]
  data.train_file             CSV used when source = files                           [unset]
  data.val_file               CSV used when source = files                           [unset]
  data.test_file              CSV used when source = files                           [unset]
  data.ood_file               optional probe CSV when source = files                 [unset]

  [model]
  model.hidden_layers         hidden widths, e.g. [64, 64]                            [[32, 32]]
  model.dropout_rate          in [0, 1)                                              [0.0]
  model.dropout_placement     every_hidden | last_hidden                             [every_hidden]
  model.evidence_activation   relu | softplus                                        [relu]

  [train]
  train.epochs_max            maximum epochs                                         [50]
  train.batch_size            minibatch size                                         [128]
  train.patience              epochs without validation improvement before stopping  [3]
  train.lr                    learning rate                                          [0.001]
  train.optimizer             adam | sgd                                             [adam]
  train.lambda_zero           initial KL weight                                      [0.1]
  train.lambda_max            final KL weight (also used for validation loss)        [1.0]
  train.anneal_epochs         epochs to ramp the KL weight; 0 = lambda_max at once   [10]
  train.regularizer           keep_assigned | keep_misleading                        [keep_assigned]
  train.ensemble_m            ensemble members                                       [1]
  train.ensemble_subset_frac  share of the training set each member sees             [0.8]

  [baseline]
  baseline.enabled            also train a sigmoid/cross-entropy model for contrast  [true]

  [eval]
  eval.coverages              coverage levels for uncertainty rejection              [[1.0, 0.9, 0.75, 0.5]]
  eval.threshold              decision threshold on p+ for F1                        [0.5]
  eval.deltas                 probability-interval half-widths for the baseline      [0.0, 0.05, ..., 0.45]
  eval.histogram_bins         bins of the uncertainty histogram                      [20]

  [bootstrap]
  bootstrap.epsilons          training fractions to drop, each in [0, 1)             [[0.05, 0.1, 0.15]]
  bootstrap.uncertainty       in_sample | held_out_folds                             [in_sample]
  bootstrap.folds             folds for held_out_folds                               [5]
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Gaussian,
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    pub n: usize,
    pub dim: usize,
    pub separation: f64,
    pub flip_rate: f64,
    pub positive_fraction: f64,
    pub group_size: Option<usize>,
    pub fractions: [f64; 3],
    pub clean_test_labels: bool,
    pub ood_offset_sigmas: f64,
    pub ood_n: usize,
    pub train_file: Option<PathBuf>,
    pub val_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    pub ood_file: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Gaussian,
            n: 3500,
            dim: 2,
            separation: SEPARATION_AUC_090,
            flip_rate: 0.1,
            positive_fraction: 0.5,
            group_size: None,
            fractions: [4.0 / 7.0, 1.0 / 7.0, 2.0 / 7.0],
            clean_test_labels: true,
            ood_offset_sigmas: 8.0,
            ood_n: 500,
            train_file: None,
            val_file: None,
            test_file: None,
            ood_file: None,
        }
    }
}

impl DataSection {
    pub fn generator(&self, seed: u64) -> GaussianOverlap {
        GaussianOverlap {
            n: self.n,
            dim: self.dim,
            separation: self.separation,
            flip_rate: self.flip_rate,
            positive_fraction: self.positive_fraction,
            group_size: self.group_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_layers: Vec<usize>,
    pub dropout_rate: f64,
    pub dropout_placement: DropoutPlacement,
    pub evidence_activation: EvidenceActivation,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_layers: vec![32, 32],
            dropout_rate: 0.0,
            dropout_placement: DropoutPlacement::default(),
            evidence_activation: EvidenceActivation::default(),
        }
    }
}

impl ModelSection {
    pub fn spec(&self, input_dim: usize, head: Head) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            hidden_layers: self.hidden_layers.clone(),
            dropout_rate: self.dropout_rate,
            dropout_placement: self.dropout_placement,
            evidence_activation: self.evidence_activation,
            head,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs_max: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub lambda_zero: f64,
    pub lambda_max: f64,
    pub anneal_epochs: usize,
    pub regularizer: RegularizerMode,
    pub ensemble_m: usize,
    pub ensemble_subset_frac: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs_max: t.epochs_max,
            batch_size: t.batch_size,
            patience: t.patience,
            lr: t.lr,
            optimizer: t.optimizer,
            lambda_zero: t.anneal.lambda_zero,
            lambda_max: t.anneal.lambda_max,
            anneal_epochs: t.anneal.anneal_epochs,
            regularizer: t.regularizer,
            ensemble_m: t.ensemble_m,
            ensemble_subset_frac: t.ensemble_subset_frac,
        }
    }
}

impl TrainSection {
    pub fn config(&self, seed: u64) -> Result<TrainConfig, CliError> {
        let anneal = AnnealedWeight::new(self.lambda_zero, self.lambda_max, self.anneal_epochs)
            .map_err(|e| CliError::config("train.lambda_zero", e.to_string()))?;
        Ok(TrainConfig {
            epochs_max: self.epochs_max,
            batch_size: self.batch_size,
            patience: self.patience,
            lr: self.lr,
            optimizer: self.optimizer,
            anneal,
            regularizer: self.regularizer,
            ensemble_m: self.ensemble_m,
            ensemble_subset_frac: self.ensemble_subset_frac,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub enabled: bool,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub coverages: Vec<f64>,
    pub threshold: f64,
    pub deltas: Vec<f64>,
    pub histogram_bins: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            coverages: DEFAULT_COVERAGES.to_vec(),
            threshold: 0.5,
            deltas: (0..10).map(|k| k as f64 / 20.0).collect(),
            histogram_bins: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyKind {
    #[default]
    InSample,
    HeldOutFolds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapSection {
    pub epsilons: Vec<f64>,
    pub uncertainty: UncertaintyKind,
    pub folds: usize,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self {
            epsilons: DEFAULT_EPSILONS.to_vec(),
            uncertainty: UncertaintyKind::InSample,
            folds: 5,
        }
    }
}

impl BootstrapSection {
    pub fn source(&self) -> UncertaintySource {
        match self.uncertainty {
            UncertaintyKind::InSample => UncertaintySource::InSample,
            UncertaintyKind::HeldOutFolds => UncertaintySource::HeldOutFolds { folds: self.folds },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub baseline: BaselineSection,
    pub eval: EvalSection,
    pub bootstrap: BootstrapSection,
}

/// Command-line adjustments applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sets: Vec<String>,
}

fn parse_value(raw: &str) -> toml::Value {
    // Anything that is not a TOML literal is taken as a bare string.
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_set(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config("--set", format!("expected section.key=value, got `{assignment}`")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::config("--set", format!("malformed key `{key}`")));
    }
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config("--set", format!("`{part}` in `{key}` is not a section")))?;
    }
    node.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Field path named in a serde error such as "unknown field `lr2`".
fn field_of(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "config".to_string())
}

impl ExperimentConfig {
    /// Read `path` (defaults when `None`), apply overrides and validate.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::config("config", one_line(&format!("{}: {e}", p.display()))))?
            }
            None => toml::Table::new(),
        };
        for s in &overrides.sets {
            apply_set(&mut table, s)?;
        }
        let mut cfg: ExperimentConfig =
            toml::Value::Table(table.clone())
                .try_into()
                .map_err(|e: toml::de::Error| {
                    let field = failing_key(&table).unwrap_or_else(|| field_of(e.message()));
                    CliError::config(field, one_line(e.message()))
                })?;
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &overrides.out {
            cfg.output_dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// `--out`, then `output_dir`, then `$BETAEV_OUT`, then `./betaev-out`.
    pub fn output_root(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        let fr = d.fractions;
        if fr.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CliError::config(
                "data.fractions",
                format!("{fr:?} must be nonnegative and sum to 1"),
            ));
        }
        if fr[0] == 0.0 || fr[1] == 0.0 {
            return Err(CliError::config(
                "data.fractions",
                "train and validation shares must be positive",
            ));
        }
        match d.source {
            DataSource::Gaussian => {
                d.generator(self.seed).validate().map_err(|e| core_field("data", e))?;
                if !d.ood_offset_sigmas.is_finite() {
                    return Err(CliError::config("data.ood_offset_sigmas", "must be finite"));
                }
            }
            DataSource::Files => {
                for (field, p) in [
                    ("data.train_file", &d.train_file),
                    ("data.val_file", &d.val_file),
                    ("data.test_file", &d.test_file),
                ] {
                    match p {
                        None => return Err(CliError::config(field, "required when data.source = files")),
                        Some(p) if !p.is_file() => {
                            return Err(CliError::config(field, format!("{} does not exist", p.display())))
                        }
                        Some(_) => {}
                    }
                }
                if let Some(p) = &d.ood_file {
                    if !p.is_file() {
                        return Err(CliError::config(
                            "data.ood_file",
                            format!("{} does not exist", p.display()),
                        ));
                    }
                }
            }
        }
        self.model
            .spec(1, Head::Evidential)
            .validate()
            .map_err(|e| core_field("model", e))?;
        self.train
            .config(self.seed)?
            .validate()
            .map_err(|e| core_field("train", e))?;

        let e = &self.eval;
        if e.coverages.is_empty() || e.coverages.iter().any(|c| !(*c > 0.0 && *c <= 1.0)) {
            return Err(CliError::config(
                "eval.coverages",
                "need at least one value, each in (0, 1]",
            ));
        }
        if !(0.0..=1.0).contains(&e.threshold) {
            return Err(CliError::config("eval.threshold", "must be in [0, 1]"));
        }
        if e.deltas.iter().any(|d| !(0.0..0.5).contains(d)) {
            return Err(CliError::config("eval.deltas", "each value must be in [0, 0.5)"));
        }
        if e.histogram_bins == 0 {
            return Err(CliError::config("eval.histogram_bins", "must be >= 1"));
        }

        let b = &self.bootstrap;
        if b.epsilons.iter().any(|x| !(0.0..1.0).contains(x)) {
            return Err(CliError::config("bootstrap.epsilons", "each value must be in [0, 1)"));
        }
        if b.uncertainty == UncertaintyKind::HeldOutFolds && b.folds < 2 {
            return Err(CliError::config("bootstrap.folds", "must be >= 2"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Dotted path of the first key in `table` that fails to deserialize on its
/// own, found by retrying one key at a time against the all-default config.
fn failing_key(table: &toml::Table) -> Option<String> {
    let fails = |t: toml::Table| toml::Value::Table(t).try_into::<ExperimentConfig>().is_err();
    for (key, value) in table {
        let single = toml::Table::from_iter([(key.clone(), value.clone())]);
        if !fails(single) {
            continue;
        }
        if let Some(section) = value.as_table() {
            for (field, v) in section {
                let inner = toml::Table::from_iter([(field.clone(), v.clone())]);
                if fails(toml::Table::from_iter([(key.clone(), toml::Value::Table(inner))])) {
                    return Some(format!("{key}.{field}"));
                }
            }
        }
        return Some(key.clone());
    }
    None
}

/// Qualify a core validation error with its config section.
fn core_field(section: &str, e: beta_evidence::Error) -> CliError {
    match e {
        beta_evidence::Error::Invalid { field, reason } => CliError::config(format!("{section}.{field}"), reason),
        other => CliError::config(section, other.to_string()),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_with(sets: &[&str]) -> Result<ExperimentConfig, CliError> {
        let o = Overrides {
            sets: sets.iter().map(|s| s.to_string()).collect(),
            ..Overrides::default()
        };
        ExperimentConfig::load(None, &o)
    }

    #[test]
    fn defaults_validate() {
        let cfg = load_with(&[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.train.config(0).unwrap(), TrainConfig::default());
    }

    #[test]
    fn separation_constant_gives_auc_090() {
        // Φ(s/√2) = 0.9 with Φ⁻¹(0.9) = 1.2815515655446004.
        assert!((SEPARATION_AUC_090 / 2f64.sqrt() - 1.281_551_565_544_600_4).abs() < 1e-15);
    }

    #[test]
    fn set_overrides_typed_values() {
        let cfg = load_with(&[
            "train.lr=0.01",
            "model.hidden_layers=[8, 4]",
            "model.evidence_activation=softplus",
            "train.regularizer=\"keep_misleading\"",
            "seed=9",
        ])
        .unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.model.hidden_layers, vec![8, 4]);
        assert_eq!(cfg.model.evidence_activation, EvidenceActivation::Softplus);
        assert_eq!(cfg.train.regularizer, RegularizerMode::KeepMisleading);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn errors_name_the_field() {
        let e = load_with(&["data.fractions=[0.5, 0.5, 0.5]"]).unwrap_err();
        assert!(e.to_string().contains("data.fractions"), "{e}");
        let e = load_with(&["train.lrr=0.1"]).unwrap_err();
        assert!(
            matches!(&e, CliError::Config { field, .. } if field == "train.lrr"),
            "{e}"
        );
        let e = load_with(&["model.dropout_rate=\"high\""]).unwrap_err();
        assert!(
            matches!(&e, CliError::Config { field, .. } if field == "model.dropout_rate"),
            "{e}"
        );
        let e = load_with(&["data.flip_rate=0.7"]).unwrap_err();
        assert!(e.to_string().contains("data.flip_rate"), "{e}");
        let e = load_with(&["train.batch_size=0"]).unwrap_err();
        assert!(e.to_string().contains("train.batch_size"), "{e}");
        let e = load_with(&["data.source=files"]).unwrap_err();
        assert!(e.to_string().contains("data.train_file"), "{e}");
        assert!(load_with(&["nonsense"]).is_err());
    }

    #[test]
    fn reference_lists_every_field() {
        let value = toml::Value::try_from(ExperimentConfig::default()).unwrap();
        let mut keys = Vec::new();
        for (k, v) in value.as_table().unwrap() {
            match v.as_table() {
                Some(t) => keys.extend(t.keys().map(|f| format!("{k}.{f}"))),
                None => keys.push(k.clone()),
            }
        }
        keys.extend(
            [
                "output_dir",
                "data.group_size",
                "data.train_file",
                "data.val_file",
                "data.test_file",
                "data.ood_file",
            ]
            .map(String::from),
        );
        for k in keys {
            assert!(CONFIG_REFERENCE.contains(&format!("  {k} ")), "help is missing `{k}`");
        }
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.data.group_size = Some(4);
        cfg.bootstrap.uncertainty = UncertaintyKind::HeldOutFolds;
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
