use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sgp_core::data::{CsvFormat, LoadOptions, SynthConfig};
use sgp_core::decoder::{DecoderConfig, Variant};
use sgp_core::encoder::PrecomputeSpec;
use sgp_core::graph::Normalization;
use sgp_core::optim::AdamConfig;
use sgp_core::reservoir::ReservoirConfig;
use sgp_core::training::{SplitSpec, TrainConfig};
use sgp_core::{Result, SgpError};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub synth: SynthSection,
    pub reservoir: ReservoirSection,
    pub layout: LayoutSection,
    pub decoder: DecoderSection,
    pub train: TrainSection,
    pub split: SplitSection,
    pub benchmark: BenchmarkSection,
    pub output: OutputSection,
}

/// Input files. Without `path` the dataset is generated from `[synth]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub format: String,
    pub period_steps: Option<usize>,
    pub num_nodes: Option<usize>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            edges: None,
            format: "auto".into(),
            period_steps: None,
            num_nodes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub nodes: usize,
    pub steps: usize,
    pub k_true: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub self_coef: f64,
    pub neighbor_coef: f64,
    pub seasonal_coef: f64,
    pub period: usize,
    pub bandwidth: f64,
    pub threshold: f64,
    /// 0 keeps every neighbour above the threshold.
    pub max_neighbors: usize,
    pub out_dir: PathBuf,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        SynthSection {
            nodes: d.num_nodes,
            steps: d.num_steps,
            k_true: d.k_true,
            noise_std: d.noise_std,
            seed: d.seed,
            self_coef: d.self_coef,
            neighbor_coef: d.neighbor_coef,
            seasonal_coef: d.seasonal_coef,
            period: d.period,
            bandwidth: d.bandwidth,
            threshold: d.threshold,
            max_neighbors: d.max_neighbors.unwrap_or(0),
            out_dir: PathBuf::from("synth"),
        }
    }
}

impl SynthSection {
    pub fn to_core(&self) -> SynthConfig {
        SynthConfig {
            num_nodes: self.nodes,
            num_steps: self.steps,
            k_true: self.k_true,
            noise_std: self.noise_std,
            seed: self.seed,
            self_coef: self.self_coef,
            neighbor_coef: self.neighbor_coef,
            seasonal_coef: self.seasonal_coef,
            period: self.period,
            bandwidth: self.bandwidth,
            threshold: self.threshold,
            max_neighbors: (self.max_neighbors > 0).then_some(self.max_neighbors),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReservoirSection {
    pub layers: usize,
    pub units: usize,
    pub spectral_radius: f64,
    pub leak: f64,
    pub leak_decrement: f64,
    pub leak_floor: f64,
    pub density: f64,
    pub input_scale: f64,
    pub seed: u64,
    pub washout: usize,
}

impl Default for ReservoirSection {
    fn default() -> Self {
        let d = ReservoirConfig::default();
        ReservoirSection {
            layers: d.units.len(),
            units: d.units[0],
            spectral_radius: d.spectral_radius,
            leak: d.leak_initial,
            leak_decrement: d.leak_decrement,
            leak_floor: d.leak_floor,
            density: d.density,
            input_scale: d.input_scale,
            seed: d.seed,
            washout: 12,
        }
    }
}

impl ReservoirSection {
    pub fn to_core(&self) -> ReservoirConfig {
        ReservoirConfig {
            units: vec![self.units; self.layers],
            spectral_radius: self.spectral_radius,
            leak_initial: self.leak,
            leak_decrement: self.leak_decrement,
            leak_floor: self.leak_floor,
            input_scale: self.input_scale,
            density: self.density,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSection {
    pub spatial_orders: usize,
    pub bidirectional: bool,
    pub include_global: bool,
    pub normalization: String,
}

impl Default for LayoutSection {
    fn default() -> Self {
        LayoutSection {
            spatial_orders: 2,
            bidirectional: false,
            include_global: false,
            normalization: "auto".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderSection {
    pub variant: String,
    pub group_width: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub pos_enc_dim: usize,
    pub pos_enc_std: f64,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for DecoderSection {
    fn default() -> Self {
        let d = DecoderConfig::default();
        DecoderSection {
            variant: "full".into(),
            group_width: d.group_width,
            hidden: d.hidden,
            dropout: d.dropout,
            pos_enc_dim: d.pos_enc_dim,
            pos_enc_std: d.pos_enc_std,
            horizon: d.horizon,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_gamma: f64,
    pub lr_milestones: Option<Vec<usize>>,
    pub max_epochs: usize,
    pub batches_per_epoch: usize,
    pub patience: usize,
    pub seed: u64,
    pub max_updates: Option<u64>,
    pub max_seconds: Option<f64>,
    pub val_samples: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            batch_size: d.batch_size,
            lr: d.lr,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            eps: d.adam.eps,
            lr_gamma: d.lr_gamma,
            lr_milestones: d.lr_milestones,
            max_epochs: d.max_epochs,
            batches_per_epoch: d.batches_per_epoch,
            patience: d.patience,
            seed: d.seed,
            max_updates: d.max_updates,
            max_seconds: d.max_seconds,
            val_samples: d.val_samples,
        }
    }
}

impl TrainSection {
    pub fn to_core(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr: self.lr,
            adam: AdamConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            lr_gamma: self.lr_gamma,
            lr_milestones: self.lr_milestones.clone(),
            max_epochs: self.max_epochs,
            batches_per_epoch: self.batches_per_epoch,
            patience: self.patience,
            seed: self.seed,
            max_updates: self.max_updates,
            max_seconds: self.max_seconds,
            val_samples: self.val_samples,
        }
    }
}

/// Chronological split, by fractions or by the first timestamps of the
/// validation and test periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub val_start: Option<i64>,
    pub test_start: Option<i64>,
    pub end: Option<i64>,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train: 0.7,
            val: 0.1,
            test: 0.2,
            val_start: None,
            test_start: None,
            end: None,
        }
    }
}

impl SplitSection {
    pub fn to_core(&self) -> Result<SplitSpec> {
        match (self.val_start, self.test_start) {
            (Some(val_start), Some(test_start)) => Ok(SplitSpec::Boundaries {
                val_start,
                test_start,
                end: self.end,
            }),
            (None, None) if self.end.is_none() => Ok(SplitSpec::Fractions {
                train: self.train,
                val: self.val,
                test: self.test,
            }),
            _ => Err(SgpError::Config(
                "split boundaries need both split.val_start and split.test_start".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub nodes: Vec<usize>,
    pub steps: usize,
    pub batches: usize,
    pub trim: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            nodes: vec![100, 1000],
            steps: 64,
            batches: 200,
            trim: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub store: PathBuf,
    pub run_dir: PathBuf,
    /// Recompute the store even when one with a different fingerprint exists.
    pub force: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            store: PathBuf::from("store.sgpe"),
            run_dir: PathBuf::from("run"),
            force: false,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> SgpError {
    SgpError::Config(e.to_string().trim().replace('\n', " "))
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `section.key=value` assignments to a parsed TOML table.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[(String, String)]) -> Result<()> {
    for (key, raw) in overrides {
        let (section, field) = key
            .split_once('.')
            .filter(|(s, f)| !s.is_empty() && !f.is_empty() && !f.contains('.'))
            .ok_or_else(|| SgpError::Config(format!("override `{key}` is not of the form section.key")))?;
        let entry = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let sec = entry
            .as_table_mut()
            .ok_or_else(|| SgpError::Config(format!("`{section}` is not a section")))?;
        sec.insert(field.to_string(), override_value(raw));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(config_err)?;
        apply_overrides(&mut table, overrides)?;
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| SgpError::MissingArtifact(format!("config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    /// Checks every section by building the library configurations.
    pub fn validate(&self) -> Result<()> {
        self.load_options()?;
        self.variant()?;
        self.precompute_spec()?;
        self.reservoir.to_core().validate()?;
        self.decoder_config(1)?.validate()?;
        self.train.to_core().validate()?;
        self.split.to_core()?;
        if self.data.path.is_none() && self.data.edges.is_some() {
            return Err(SgpError::Config("data.edges given without data.path".into()));
        }
        if self.synth.nodes == 0 || self.synth.steps == 0 {
            return Err(SgpError::Config("synth.nodes and synth.steps must be positive".into()));
        }
        if self.benchmark.nodes.is_empty() || self.benchmark.nodes.contains(&0) {
            return Err(SgpError::Config("benchmark.nodes must list positive node counts".into()));
        }
        if self.benchmark.batches <= 2 * self.benchmark.trim {
            return Err(SgpError::Config("benchmark.batches must exceed twice benchmark.trim".into()));
        }
        Ok(())
    }

    pub fn load_options(&self) -> Result<LoadOptions> {
        Ok(LoadOptions {
            format: CsvFormat::from_str(&self.data.format)?,
            num_nodes: self.data.num_nodes,
            period_steps: self.data.period_steps,
        })
    }

    pub fn variant(&self) -> Result<Variant> {
        Variant::from_str(&self.decoder.variant)
    }

    pub fn precompute_spec(&self) -> Result<PrecomputeSpec> {
        let variant = self.variant()?;
        Ok(PrecomputeSpec {
            reservoir: self.reservoir.to_core(),
            spatial_orders: variant.spatial_orders(self.layout.spatial_orders),
            bidirectional: self.layout.bidirectional,
            include_global: self.layout.include_global,
            normalization: Normalization::from_str(&self.layout.normalization)?,
            washout: self.reservoir.washout,
        })
    }

    pub fn decoder_config(&self, channels: usize) -> Result<DecoderConfig> {
        let base = DecoderConfig {
            group_width: self.decoder.group_width,
            hidden: self.decoder.hidden.clone(),
            dropout: self.decoder.dropout,
            pos_enc_dim: self.decoder.pos_enc_dim,
            pos_enc_std: self.decoder.pos_enc_std,
            horizon: self.decoder.horizon,
            channels,
            dense_first: false,
            seed: self.decoder.seed,
        };
        Ok(self.variant()?.configure(self.layout.spatial_orders, &base).1)
    }
}
