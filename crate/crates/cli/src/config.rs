//! Pipeline configuration: one TOML file with a section per stage, plus
//! `--set section.key=value` overrides applied before validation.

use std::path::Path;

use panoptic_core::model::{ModelConfig, TrainConfig};
use panoptic_core::postprocess::{Objective, ParameterGrid, PostprocessConfig};
use panoptic_core::synth::SceneConfig;
use panoptic_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// File name of the effective configuration written into every output directory.
pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub tiles: usize,
    pub scene: SceneConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { tiles: 20, scene: SceneConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetsSection {
    /// Boundary band width in pixels (Chebyshev).
    pub boundary_width: usize,
}

impl Default for TargetsSection {
    fn default() -> Self {
        Self { boundary_width: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    /// Test-time passes; 0 runs one plain eval pass without dropout.
    pub tta_passes: usize,
    /// Stain intensities are scaled by factors in `[1 - hed_range, 1 + hed_range]`.
    pub hed_range: f64,
    pub seed: u64,
}

impl Default for InferSection {
    fn default() -> Self {
        Self { tta_passes: 16, hed_range: 0.1, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSection {
    pub objective: Objective,
    pub rounds: usize,
    /// Central crop for counting when the objective is R².
    pub crop: Option<usize>,
    pub grid: ParameterGrid,
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            objective: Objective::Mpq,
            rounds: 2,
            crop: None,
            grid: ParameterGrid {
                seed: vec![0.4, 0.5, 0.6, 0.7],
                foreground: vec![0.4, 0.5, 0.6],
                min_area: vec![4, 8, 16],
                max_area: Vec::new(),
                min_solidity: vec![0.6, 0.7, 0.8],
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Central crop for instance counting (R²); `None` counts the full tile.
    pub crop: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Worker threads; 0 defers to `PANOPTIC_THREADS`, then to the core count.
    pub threads: usize,
    pub synth: SynthSection,
    pub targets: TargetsSection,
    pub model: ModelConfig,
    /// Validation inside training uses the `[postprocess]` section.
    pub train: TrainConfig,
    pub infer: InferSection,
    pub postprocess: PostprocessConfig,
    pub tune: TuneSection,
    pub evaluate: EvaluateSection,
}

impl PipelineConfig {
    /// Reads `path` (or starts from defaults), applies overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if table.get("train").and_then(|t| t.get("postprocess")).is_some() {
            return Err(Error::Config("set validation post-processing in [postprocess], not [train.postprocess]".into()));
        }
        let mut cfg: PipelineConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.train.postprocess = cfg.postprocess.clone();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.scene.validate()?;
        self.model.validate()?;
        self.postprocess.validate()?;
        if self.postprocess.num_classes() != self.model.num_classes {
            return Err(Error::Config(format!(
                "[postprocess] has thresholds for {} classes, [model] predicts {}",
                self.postprocess.num_classes(),
                self.model.num_classes
            )));
        }
        if self.synth.scene.num_nucleus_classes() + 1 != self.model.num_classes {
            return Err(Error::Config(format!(
                "[synth.scene] has {} nucleus classes, [model] expects {}",
                self.synth.scene.num_nucleus_classes(),
                self.model.num_classes - 1
            )));
        }
        if self.targets.boundary_width == 0 {
            return Err(Error::Config("targets.boundary_width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.infer.hed_range) {
            return Err(Error::Config(format!("infer.hed_range {} outside [0,1)", self.infer.hed_range)));
        }
        Ok(())
    }

    /// The effective configuration as TOML, for provenance.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_ECHO);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }
}

/// `a.b.c=value`: the value is read as a TOML literal, or as a bare string if
/// it does not parse as one.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override {spec:?} has an empty key")));
    }
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut cur = table;
    for k in parents {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config(format!("override {spec:?}: {k} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
