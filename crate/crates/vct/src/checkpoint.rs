//! Full training state as JSON: parameters, EMA shadows, optimizer moments,
//! the iteration counter and both random streams.

use serde::{Deserialize, Serialize};

use vct_core::optim::Moments;
use vct_core::rng::RngSnapshot;
use vct_core::training::{EncoderState, TrainState};
use vct_core::{DetRng, ParamSet};

use crate::error::{CliError, Result};
use crate::rundir::{RunDir, CHECKPOINT_FILE};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    /// sha256 of the config snapshot the run was started with.
    pub config_sha256: String,
    pub seed: u64,
    pub k: u64,
    pub theta: ParamSet,
    pub theta_ema: ParamSet,
    pub theta_moments: Moments,
    pub encoder: Option<EncoderState>,
    pub rng: RngSnapshot,
    pub probe_rng: RngSnapshot,
    pub grad_var_ema: Option<f64>,
}

impl Checkpoint {
    pub fn capture(
        config_sha256: &str,
        seed: u64,
        state: &TrainState,
        probe_rng: &DetRng,
        grad_var_ema: Option<f64>,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            config_sha256: config_sha256.to_string(),
            seed,
            k: state.k,
            theta: state.theta.clone(),
            theta_ema: state.theta_ema.clone(),
            theta_moments: state.theta_moments.clone(),
            encoder: state.encoder.clone(),
            rng: state.rng.snapshot(),
            probe_rng: probe_rng.snapshot(),
            grad_var_ema,
        }
    }

    pub fn train_state(&self) -> TrainState {
        TrainState {
            theta: self.theta.clone(),
            theta_ema: self.theta_ema.clone(),
            theta_moments: self.theta_moments.clone(),
            encoder: self.encoder.clone(),
            k: self.k,
            rng: DetRng::restore(&self.rng),
        }
    }

    pub fn save(&self, dir: &RunDir) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| CliError::Checkpoint(format!("cannot serialize checkpoint: {e}")))?;
        dir.write_atomic(CHECKPOINT_FILE, text.as_bytes())
    }

    pub fn load(dir: &RunDir) -> Result<Checkpoint> {
        if !dir.exists(CHECKPOINT_FILE) {
            return Err(CliError::Checkpoint(format!(
                "no checkpoint in {}",
                dir.root().display()
            )));
        }
        let text = dir.read_string(CHECKPOINT_FILE)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| CliError::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(CliError::Checkpoint(format!(
                "unsupported checkpoint format {}",
                ck.format_version
            )));
        }
        Ok(ck)
    }
}
