//! Experiment configuration, read from TOML with unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dynalign::dynsys::{EncodingConfig, SystemParams};
use dynalign::snn::TrainConfig;

use crate::error::{config_err, HarnessError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Output directory; the `--out` flag overrides it. Not part of the hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub encoding: EncodingConfig,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attractors: Option<AttractorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rl: Option<RlSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<BindingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheorySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportSpec>,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
pub fn default_train() -> TrainConfig {
    TrainConfig::new(1e-3, 500, 0)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: default_name(),
            seeds: default_seeds(),
            out: None,
            dataset: DatasetSpec::default(),
            encoding: EncodingConfig::default(),
            network: NetworkSpec::default(),
            train: default_train(),
            sweep: None,
            attractors: None,
            rl: None,
            binding: None,
            theory: None,
            report: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian blobs in the unit cube.
    Blobs {
        #[serde(default = "default_blob_n")]
        n: usize,
        #[serde(default = "default_blob_d")]
        d: usize,
        #[serde(default = "default_blob_classes")]
        classes: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default = "default_data_seed")]
        seed: u64,
        #[serde(default)]
        split: SplitSpec,
    },
    /// Pre-split CSV files (`f0,...,f{d-1},label`); validation comes out of train.
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
        #[serde(default = "default_split_seed")]
        split_seed: u64,
    },
    /// Shape/colour feature binding, PCA-reduced with the basis fit on train.
    Binding {
        #[serde(default = "default_binding_n")]
        n: usize,
        #[serde(default = "default_binding_dim")]
        dim: usize,
        #[serde(default = "default_binding_noise")]
        noise: f64,
        #[serde(default = "default_pca_dims")]
        pca_dims: usize,
        #[serde(default = "default_binding_seed")]
        seed: u64,
        #[serde(default)]
        split: SplitSpec,
    },
}

fn default_blob_n() -> usize {
    2000
}
fn default_blob_d() -> usize {
    7
}
fn default_blob_classes() -> usize {
    10
}
fn default_spread() -> f64 {
    0.12
}
fn default_data_seed() -> u64 {
    42
}
fn default_binding_n() -> usize {
    5000
}
fn default_binding_dim() -> usize {
    1000
}
fn default_binding_noise() -> f64 {
    0.25
}
fn default_pca_dims() -> usize {
    64
}
fn default_binding_seed() -> u64 {
    7
}
fn default_val_fraction() -> f64 {
    0.1
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_split_seed() -> u64 {
    1
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs {
            n: default_blob_n(),
            d: default_blob_d(),
            classes: default_blob_classes(),
            spread: default_spread(),
            seed: default_data_seed(),
            split: SplitSpec::default(),
        }
    }
}

impl DatasetSpec {
    pub fn default_binding() -> Self {
        DatasetSpec::Binding {
            n: default_binding_n(),
            dim: default_binding_dim(),
            noise: default_binding_noise(),
            pca_dims: default_pca_dims(),
            seed: default_binding_seed(),
            split: SplitSpec::default(),
        }
    }
}

/// Stratified test and validation fractions. Validation is taken from the
/// training part after the test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_split_seed")]
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: default_test_fraction(),
            val_fraction: default_val_fraction(),
            seed: default_split_seed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64, 64]
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            hidden: default_hidden(),
        }
    }
}

/// An input regime: a mixed-oscillator encoding at `delta`, or the
/// non-spiking twin fed static features when `delta` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl Mode {
    pub fn spiking(name: &str, delta: f64) -> Self {
        Mode {
            name: name.into(),
            delta: Some(delta),
        }
    }

    pub fn twin() -> Self {
        Mode {
            name: "mlp".into(),
            delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub deltas: Vec<f64>,
    /// Also train the non-spiking twin once per seed.
    #[serde(default = "default_true")]
    pub twin: bool,
    /// Neuron deletion probabilities evaluated on every trained model.
    #[serde(default)]
    pub deletion: Vec<f64>,
    #[serde(default = "default_deletion_reps")]
    pub deletion_reps: usize,
}

fn default_true() -> bool {
    true
}
fn default_deletion_reps() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttractorSpec {
    #[serde(default = "default_systems")]
    pub systems: Vec<String>,
    #[serde(default = "default_t_max_grid")]
    pub t_max: Vec<f64>,
    #[serde(default = "default_steps_grid")]
    pub n_steps: Vec<usize>,
}

fn default_systems() -> Vec<String> {
    SystemParams::attractors()
        .iter()
        .map(|s| s.name().to_string())
        .collect()
}
fn default_t_max_grid() -> Vec<f64> {
    vec![8.0]
}
fn default_steps_grid() -> Vec<usize> {
    vec![1, 5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlSpec {
    #[serde(default = "default_rl_modes")]
    pub modes: Vec<Mode>,
    #[serde(default = "default_rl_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub config: dynalign::tasks::RlConfig,
}

fn default_rl_modes() -> Vec<Mode> {
    vec![
        Mode::spiking("expansive", -1.5),
        Mode::spiking("dissipative", 10.0),
        Mode::spiking("transition", 2.5),
        Mode::twin(),
    ]
}
fn default_rl_hidden() -> Vec<usize> {
    vec![32, 32, 32]
}

impl Default for RlSpec {
    fn default() -> Self {
        RlSpec {
            modes: default_rl_modes(),
            hidden: default_rl_hidden(),
            config: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindingSpec {
    #[serde(default = "default_binding_modes")]
    pub modes: Vec<Mode>,
}

fn default_binding_modes() -> Vec<Mode> {
    vec![
        Mode::spiking("expansive", -1.5),
        Mode::spiking("dissipative", 10.0),
        Mode::spiking("transition", 2.0),
        Mode::twin(),
    ]
}

impl Default for BindingSpec {
    fn default() -> Self {
        BindingSpec {
            modes: default_binding_modes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySpec {
    /// tau_corr / tau_m ratios for the effective-variance table.
    #[serde(default = "default_ratios")]
    pub ratios: Vec<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// (mu, sigma) pairs for the firing-rate table.
    #[serde(default = "default_rate_points")]
    pub rate_points: Vec<[f64; 2]>,
    /// Monte-Carlo duration in membrane time constants; 0 skips simulation.
    #[serde(default = "default_mc_duration")]
    pub mc_duration: f64,
}

fn default_ratios() -> Vec<f64> {
    vec![0.0, 0.025, 0.083, 0.8]
}
fn default_beta() -> f64 {
    0.95
}
fn default_dt() -> f64 {
    1.6
}
fn default_rate_points() -> Vec<[f64; 2]> {
    vec![[0.8, 0.4], [1.0, 0.3], [1.2, 0.3], [0.9, 0.5], [1.5, 0.2]]
}
fn default_mc_duration() -> f64 {
    2000.0
}

impl Default for TheorySpec {
    fn default() -> Self {
        TheorySpec {
            ratios: default_ratios(),
            beta: default_beta(),
            dt: default_dt(),
            rate_points: default_rate_points(),
            mc_duration: default_mc_duration(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    pub checkpoint: PathBuf,
    /// Encoding of the checkpoint's inputs; absent means static features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default = "default_report_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_report_samples() -> usize {
    500
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(config_err("seeds must be non-empty"));
        }
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return Err(config_err("network.hidden needs at least one non-empty layer"));
        }
        self.encoding
            .validate()
            .map_err(|e| config_err(format!("encoding: {e}")))?;
        self.train.validate().map_err(|e| config_err(format!("train: {e}")))?;
        let frac = |name: &str, f: f64| {
            if f > 0.0 && f < 1.0 {
                Ok(())
            } else {
                Err(config_err(format!("{name} must lie in (0, 1), got {f}")))
            }
        };
        match &self.dataset {
            DatasetSpec::Blobs {
                n,
                d,
                classes,
                spread,
                split,
                ..
            } => {
                if *n == 0 || *d == 0 || *classes < 2 || !(*spread > 0.0) {
                    return Err(config_err("blobs need n, d >= 1, classes >= 2 and spread > 0"));
                }
                frac("test_fraction", split.test_fraction)?;
                frac("val_fraction", split.val_fraction)?;
            }
            DatasetSpec::Csv { val_fraction, .. } => frac("val_fraction", *val_fraction)?,
            DatasetSpec::Binding {
                n,
                dim,
                pca_dims,
                split,
                ..
            } => {
                if *n < 2 || *pca_dims == 0 || *pca_dims > *dim {
                    return Err(config_err("binding needs n >= 2 and 1 <= pca_dims <= dim"));
                }
                frac("test_fraction", split.test_fraction)?;
                frac("val_fraction", split.val_fraction)?;
            }
        }
        if let Some(s) = &self.sweep {
            if s.deltas.is_empty() {
                return Err(config_err("sweep.deltas must be non-empty"));
            }
            if s.deltas.iter().any(|d| !d.is_finite()) {
                return Err(config_err("sweep.deltas must be finite"));
            }
            if s.deletion.iter().any(|p| !(0.0..=0.8).contains(p)) {
                return Err(config_err("sweep.deletion probabilities must lie in [0, 0.8]"));
            }
            if s.deletion_reps == 0 {
                return Err(config_err("sweep.deletion_reps must be >= 1"));
            }
        }
        if let Some(a) = &self.attractors {
            for name in &a.systems {
                SystemParams::from_name(name, None).map_err(|e| config_err(format!("attractors: {e}")))?;
            }
            if a.t_max.is_empty() || a.n_steps.is_empty() {
                return Err(config_err("attractors.t_max and attractors.n_steps must be non-empty"));
            }
            for &t in &a.t_max {
                for &n in &a.n_steps {
                    EncodingConfig {
                        t_max: t,
                        n_steps: n,
                        ..self.encoding
                    }
                    .validate()
                    .map_err(|e| config_err(format!("attractors grid: {e}")))?;
                }
            }
        }
        if let Some(r) = &self.rl {
            validate_modes("rl", &r.modes)?;
            r.config.validate().map_err(|e| config_err(format!("rl.config: {e}")))?;
            if r.hidden.is_empty() || r.hidden.contains(&0) {
                return Err(config_err("rl.hidden needs at least one non-empty layer"));
            }
        }
        if let Some(b) = &self.binding {
            validate_modes("binding", &b.modes)?;
            if !matches!(self.dataset, DatasetSpec::Binding { .. }) {
                return Err(config_err("a [binding] section needs dataset.kind = \"binding\""));
            }
        }
        if let Some(t) = &self.theory {
            if !(t.beta > 0.0 && t.beta < 1.0) || !(t.dt > 0.0) {
                return Err(config_err("theory needs 0 < beta < 1 and dt > 0"));
            }
            if t.ratios.iter().any(|r| !(*r >= 0.0)) {
                return Err(config_err("theory.ratios must be >= 0"));
            }
            if t.rate_points.iter().any(|p| !(p[1] > 0.0)) {
                return Err(config_err("theory.rate_points need sigma > 0"));
            }
        }
        if let Some(r) = &self.report {
            if r.samples == 0 {
                return Err(config_err("report.samples must be >= 1"));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything except the output path.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn validate_modes(section: &str, modes: &[Mode]) -> Result<(), HarnessError> {
    if modes.is_empty() {
        return Err(config_err(format!("{section}.modes must be non-empty")));
    }
    for (i, m) in modes.iter().enumerate() {
        if modes[..i].iter().any(|o| o.name == m.name) {
            return Err(config_err(format!("{section}.modes: duplicate name '{}'", m.name)));
        }
        if m.delta.is_some_and(|d| !d.is_finite()) {
            return Err(config_err(format!(
                "{section}.modes: '{}' has a non-finite delta",
                m.name
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml("name = \"x\"\n").unwrap();
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.network.hidden, vec![64, 64, 64]);
        assert_eq!(cfg.train.lr, 1e-3);
        assert!(matches!(cfg.dataset, DatasetSpec::Blobs { n: 2000, .. }));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("nmae = \"x\"\n").is_err());
        assert!(ExperimentConfig::from_toml("[network]\nhiden = [3]\n").is_err());
        assert!(ExperimentConfig::from_toml("[sweep]\ndeltas = [1.0]\nextra = 1\n").is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seeds = vec![5];
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn invalid_sections_fail_validation() {
        assert!(ExperimentConfig::from_toml("[sweep]\ndeltas = []\n").is_err());
        assert!(ExperimentConfig::from_toml("[binding]\n").is_err());
        assert!(ExperimentConfig::from_toml("seeds = []\n").is_err());
        assert!(ExperimentConfig::from_toml("[attractors]\nsystems = [\"lorenz\", \"nope\"]\n").is_err());
    }
}
