//! Model checkpoints and prediction files.
//!
//! A checkpoint is a JSON object `{format: "deari-checkpoint", version: 1,
//! model: {config, params}, stats, run}` where `params` maps every parameter
//! name (e.g. `l2.attn.fwd.enc0.wq` or `l1.fwd.rnn.w.rho`) to `{shape, data}`
//! and `config` carries the stack header (variant, sizes, cell type).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Array;

pub const CHECKPOINT_FORMAT: &str = "deari-checkpoint";
pub const PREDICTION_FORMAT: &str = "deari-prediction";
pub const FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: Model,
    pub stats: NormStats,
    pub run: Option<RunConfig>,
}

/// Imputation in raw units, `[B, T, D]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub format: String,
    pub version: u32,
    pub imputation: Array,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    serde_json::from_reader(r).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn check_header(path: &Path, format: &str, version: u32, want: &str) -> Result<()> {
    if format != want || version != FILE_VERSION {
        return Err(Error::Data(format!(
            "{}: expected {want} v{FILE_VERSION}, found {format} v{version}",
            path.display()
        )));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new(model: Model, stats: NormStats, run: Option<RunConfig>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: FILE_VERSION,
            model,
            stats,
            run,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = read_json(path)?;
        check_header(path, &c.format, c.version, CHECKPOINT_FORMAT)?;
        c.model.config.validate()?;
        Ok(c)
    }
}

impl Prediction {
    pub fn new(imputation: Array) -> Self {
        Prediction {
            format: PREDICTION_FORMAT.into(),
            version: FILE_VERSION,
            imputation,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: Prediction = read_json(path)?;
        check_header(path, &p.format, p.version, PREDICTION_FORMAT)?;
        Ok(p)
    }
}
