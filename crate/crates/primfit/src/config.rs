//! Optional JSON config file for training and decomposition settings.
//! Precedence: built-in defaults, then config file, then command-line
//! flags.

use std::fs;
use std::path::Path;

use primfit_core::fit::PrimitiveKind;
use primfit_core::train::TrainConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub steps: Option<usize>,
    pub batch_unlabeled: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub seed: Option<u64>,
    pub warmup_fraction: Option<f64>,
    pub primitive: Option<String>,
    pub hidden: Option<usize>,
    pub dim: Option<usize>,
    pub classes: Option<usize>,
    pub subsample: Option<usize>,
    pub surface_samples: Option<usize>,
    pub interior_samples: Option<usize>,
    pub grad_clip: Option<f64>,
    pub ssl_fraction: Option<f64>,
}

pub fn load_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))
}

pub fn parse_kind(s: &str) -> Result<PrimitiveKind, CliError> {
    match s {
        "ellipsoid" => Ok(PrimitiveKind::Ellipsoid),
        "cuboid" => Ok(PrimitiveKind::Cuboid),
        other => Err(CliError::Io(format!(
            "unknown primitive kind {other:?} (expected ellipsoid or cuboid)"
        ))),
    }
}

/// Overlay the config file onto built-in defaults. Flags are applied on
/// top by the caller.
pub fn apply_file(cfg: &mut TrainConfig, file: &FileConfig) -> Result<(), CliError> {
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = file.$field {
                cfg.$field = v;
            }
        };
    }
    take!(steps);
    take!(batch_unlabeled);
    take!(learning_rate);
    take!(momentum);
    take!(seed);
    take!(warmup_fraction);
    take!(hidden);
    take!(dim);
    take!(classes);
    take!(subsample);
    take!(surface_samples);
    take!(interior_samples);
    take!(grad_clip);
    take!(ssl_fraction);
    if let Some(p) = &file.primitive {
        cfg.kind = parse_kind(p)?;
    }
    Ok(())
}
