//! Run manifests: the resolved invocation plus input and output digests.
//! Paths are stored relative to the output directory and no timestamps are
//! written, so rerunning an invocation reproduces the manifest byte for byte.

use std::path::{Component, Path, PathBuf};

use goldisim::training::hex_digest;
use goldisim::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Phantom {
        n: usize,
        size: usize,
        seed: u64,
    },
    Simulate {
        config: RunConfig,
        uniform: bool,
    },
    Train {
        config: RunConfig,
        train: PathBuf,
        val: PathBuf,
        init: Option<PathBuf>,
    },
    Eval {
        data: PathBuf,
        checkpoint: Option<PathBuf>,
        predictions: Option<PathBuf>,
    },
    Run {
        config: RunConfig,
    },
    BoTrace {
        config: RunConfig,
        checkpoint: Option<PathBuf>,
    },
    LesionPreview {
        config: RunConfig,
        seed: u64,
    },
}

impl Invocation {
    pub fn map_paths(&self, f: &dyn Fn(&Path) -> PathBuf) -> Invocation {
        let cfg = |c: &RunConfig| {
            let mut c = c.clone();
            c.run.normals_dir = c.run.normals_dir.as_deref().map(f);
            c
        };
        let opt = |p: &Option<PathBuf>| p.as_deref().map(f);
        match self {
            Invocation::Phantom { .. } => self.clone(),
            Invocation::Simulate { config, uniform } => Invocation::Simulate {
                config: cfg(config),
                uniform: *uniform,
            },
            Invocation::Train {
                config,
                train,
                val,
                init,
            } => Invocation::Train {
                config: cfg(config),
                train: f(train),
                val: f(val),
                init: opt(init),
            },
            Invocation::Eval {
                data,
                checkpoint,
                predictions,
            } => Invocation::Eval {
                data: f(data),
                checkpoint: opt(checkpoint),
                predictions: opt(predictions),
            },
            Invocation::Run { config } => Invocation::Run {
                config: cfg(config),
            },
            Invocation::BoTrace { config, checkpoint } => Invocation::BoTrace {
                config: cfg(config),
                checkpoint: opt(checkpoint),
            },
            Invocation::LesionPreview { config, seed } => Invocation::LesionPreview {
                config: cfg(config),
                seed: *seed,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub invocation: Invocation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_ranges: Option<serde_json::Value>,
    pub outputs: Vec<FileDigest>,
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex_digest(&bytes))
}

/// `path` relative to `base`, both made absolute first.
pub fn relativize(path: &Path, base: &Path) -> PathBuf {
    let abs = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (p, b) = (abs(path), abs(base));
    let pc: Vec<Component> = p.components().collect();
    let bc: Vec<Component> = b.components().collect();
    let common = pc.iter().zip(&bc).take_while(|(a, b)| a == b).count();
    if common == 0 {
        return p;
    }
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &pc[common..] {
        out.push(c.as_os_str());
    }
    out
}

impl Manifest {
    /// Digest `outputs` (relative to `out_dir`) and write the manifest there.
    pub fn write(
        out_dir: &Path,
        invocation: &Invocation,
        parameter_ranges: Option<serde_json::Value>,
        mut outputs: Vec<String>,
    ) -> Result<Manifest> {
        outputs.sort();
        let outputs = outputs
            .into_iter()
            .map(|p| {
                Ok(FileDigest {
                    sha256: digest_file(&out_dir.join(&p))?,
                    path: p,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = Manifest {
            tool: "goldisim".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            invocation: invocation.map_paths(&|p| relativize(p, out_dir)),
            parameter_ranges,
            outputs,
        };
        let path = out_dir.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// The invocation with paths resolved against the manifest's directory.
    pub fn resolved_invocation(&self, manifest_dir: &Path) -> Invocation {
        self.invocation.map_paths(&|p| {
            if p.is_relative() {
                manifest_dir.join(p)
            } else {
                p.to_path_buf()
            }
        })
    }
}
