//! TOML run configuration with `--section.key=value` overrides.

use std::path::{Path, PathBuf};

use goldisim::compositor::SimParams;
use goldisim::curriculum::CurriculumConfig;
use goldisim::training::{OptimizerConfig, OptimizerKind};
use goldisim::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Directory of normal images; phantoms are generated when absent.
    pub normals_dir: Option<PathBuf>,
    pub phantom_count: usize,
    pub phantom_size: usize,
    /// Normals held out (from the end of the list) for validation data.
    pub val_normals: usize,
    pub lesions_per_image: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            normals_dir: None,
            phantom_count: 20,
            phantom_size: 256,
            val_normals: 10,
            lesions_per_image: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorSection {
    pub persistence: f64,
    pub lacunarity: f64,
    pub res: u32,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        Self {
            persistence: 0.6,
            lacunarity: 3.0,
            res: 3,
            alpha: 0.5,
            beta: 0.55,
        }
    }
}

impl SimulatorSection {
    pub fn phi(&self) -> Result<SimParams> {
        let phi = SimParams {
            persistence: self.persistence,
            lacunarity: self.lacunarity,
            res: self.res,
            alpha: self.alpha,
            beta: self.beta,
        };
        phi.validate()
            .map_err(|e| Error::Parameter(format!("simulator: {e}")))?;
        Ok(phi)
    }
}

/// Optimizer settings with defaults sized for the toy detector, whose
/// features need far larger steps than a convolutional network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub variability_scale_b: f64,
    pub seed: u64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::NvrmSgd,
            learning_rate: 1.0,
            batch_size: 64,
            epochs: 40,
            variability_scale_b: 0.01,
            seed: 0,
        }
    }
}

impl OptimizerSection {
    pub fn config(&self) -> Result<OptimizerConfig> {
        let c = OptimizerConfig {
            kind: self.kind,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            variability_scale_b: self.variability_scale_b,
            seed: self.seed,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub simulator: SimulatorSection,
    pub optimizer: OptimizerSection,
    pub curriculum: CurriculumConfig,
}

/// Split `--section.key=value` arguments out of argv.
pub fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    for a in args {
        let parsed = a.strip_prefix("--").and_then(|body| {
            let (key, value) = body.split_once('=')?;
            key.contains('.').then(|| (key.to_string(), value.to_string()))
        });
        match parsed {
            Some(kv) => overrides.push(kv),
            None => rest.push(a),
        }
    }
    (rest, overrides)
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Read `path` (or start from defaults), apply overrides, and resolve
/// relative paths against the config file's directory.
pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            toml::from_str::<toml::Table>(&text)
                .map_err(|e| Error::Parameter(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (key, raw) in overrides {
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| Error::Parameter(format!("override {key:?} needs section.key")))?;
        let entry = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let sec = entry
            .as_table_mut()
            .ok_or_else(|| Error::Parameter(format!("{section} is not a section")))?;
        sec.insert(field.to_string(), parse_value(raw));
    }
    let mut cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Parameter(e.message().to_string()))?;
    let base = path
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    if let Some(d) = &cfg.run.normals_dir {
        if d.is_relative() {
            cfg.run.normals_dir = Some(base.join(d));
        }
    }
    cfg.curriculum.validate()?;
    Ok(cfg)
}
