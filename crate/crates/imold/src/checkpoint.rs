//! Versioned JSON checkpoints: the run configuration, the seed and epoch
//! that produced the state, and the full model state including the
//! codebook. Training randomness is a pure function of `(seed, epoch)`,
//! so these two numbers are the whole RNG state.

use std::fs;
use std::path::Path;

use imold_core::model::ModelState;
use imold_core::train::RunConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_text;

pub const FORMAT: &str = "imold-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub seed: u64,
    /// Epoch whose end-of-epoch state this is.
    pub epoch: usize,
    pub state: ModelState,
}

impl Checkpoint {
    pub fn new(config: RunConfig, seed: u64, epoch: usize, state: ModelState) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config,
            seed,
            epoch,
            state,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self).expect("checkpoints always serialize");
        text.push('\n');
        write_text(path, &text)
    }

    /// Reads and validates a checkpoint; any defect is a checkpoint error.
    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::checkpoint(path, e.to_string()))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::checkpoint(
                path,
                format!("unsupported format {:?} version {}", ck.format, ck.version),
            ));
        }
        ck.state
            .check_shapes()
            .map_err(|e| Error::checkpoint(path, e.to_string()))?;
        ck.config
            .validate()
            .map_err(|e| Error::checkpoint(path, e.to_string()))?;
        if ck.state.hidden_dim() != ck.config.hidden_dim
            || ck.state.codebook.size() != ck.config.codebook_size
        {
            return Err(Error::checkpoint(path, "state does not match its configuration"));
        }
        Ok(ck)
    }
}
