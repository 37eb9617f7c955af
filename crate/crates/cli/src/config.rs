//! Config file schema. Every section is optional and every field falls back
//! to the preset default of its section, so a file only needs the values it
//! changes:
//!
//! ```toml
//! [dataset]
//! preset = "desk"
//! seed = 7
//!
//! [train]
//! epochs = 50
//! [train.loss]
//! gamma = 6.0
//!
//! [serve]
//! bind = "127.0.0.1:9000"
//! ```
//!
//! Sections: `dataset`, `train` (with `loss` and `model`), `eval` (with
//! `zmin`), `traverse`, `sweep`, `ablate`, `serve`.

use std::path::Path;

use favae_core::eval::EvalConfig;
use favae_core::experiments::{Variant, DEFAULT_SWEEP_DIMS};
use favae_core::train::TrainConfig;
use favae_core::traverse::TraversalSpec;
use serde::{Deserialize, Serialize};

use crate::service::ServeConfig;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub preset: String,
    pub seed: u64,
    /// Overrides the preset resolution.
    pub resolution: Option<usize>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            preset: "desk".into(),
            seed: 0,
            resolution: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub dims: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            dims: DEFAULT_SWEEP_DIMS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            variants: Variant::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: DatasetSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub traverse: TraversalSpec,
    pub sweep: SweepSection,
    pub ablate: AblateSection,
    pub serve: ServeConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let usage = |e: &dyn std::fmt::Display| CliError::Usage(format!("{}: {e}", path.display()));
        let file: toml::Table = toml::from_str(&text).map_err(|e| usage(&e))?;
        // Layer the file over the serialized defaults so a partial nested
        // table keeps the preset values of its parent section rather than
        // the nested type's own defaults.
        let mut merged = toml::Table::try_from(Self::default()).map_err(|e| usage(&e))?;
        merge(&mut merged, file);
        toml::Value::Table(merged).try_into().map_err(|e| usage(&e))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Writes the effective settings of a subcommand to stderr as TOML.
pub fn echo<T: Serialize>(section: &str, value: &T) {
    let wrapped = std::collections::BTreeMap::from([(section, value)]);
    match toml::to_string_pretty(&wrapped) {
        Ok(text) => eprintln!("# effective config\n{text}"),
        Err(e) => log::warn!("could not render effective config: {e}"),
    }
}
