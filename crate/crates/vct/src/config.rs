//! Run configuration: TOML schema, shipped presets and validation.
//!
//! Every section and field has a default; an empty file is the
//! `toy-appendix-e` preset. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use vct_core::couplings::{CouplingKind, KlReduction};
use vct_core::data::GaussianMixture;
use vct_core::eval::EvalSettings;
use vct_core::networks::{MlpSpec, TimeInput};
use vct_core::optim::{LrSchedule, OptimizerConfig, OptimizerKind};
use vct_core::schedules::WeightingKind;
use vct_core::training::{ObjectiveConfig, ScheduleConfig, ScheduleMode, TrainConfig};
use vct_core::{KernelKind, TransitionKernel};

use crate::error::CliError;

pub const PRESETS: &[&str] = &["toy-appendix-e", "toy-independent", "toy-ot"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub means: Vec<Vec<f64>>,
    pub std: f64,
    pub weights: Vec<f64>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let g = GaussianMixture::two_gaussians_vertical();
        DatasetSection {
            means: g.means,
            std: g.std,
            weights: g.weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub kind: KernelKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_data: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            kind: KernelKind::Li,
            sigma_min: 0.002,
            sigma_max: 0.1,
            sigma_data: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub mode: ScheduleMode,
    pub rho: f64,
    pub s0: usize,
    pub s1: usize,
    pub p_mean: f64,
    pub p_std: f64,
    pub ecm_k: f64,
    pub ecm_b: f64,
    pub ecm_q: f64,
    pub ecm_halvings: u64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = ScheduleConfig::default();
        ScheduleSection {
            mode: s.mode,
            rho: s.rho,
            s0: 10,
            s1: 80,
            p_mean: s.p_mean,
            p_std: s.p_std,
            ecm_k: s.ecm_k,
            ecm_b: s.ecm_b,
            ecm_q: s.ecm_q,
            ecm_halvings: s.ecm_halvings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSection {
    pub kind: CouplingKind,
}

impl Default for CouplingSection {
    fn default() -> Self {
        CouplingSection {
            kind: CouplingKind::Variational,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
    pub time_input: TimeInput,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = MlpSpec::consistency_default();
        ModelSection {
            hidden_dim: m.hidden_dim,
            depth: m.depth,
            time_embed_dim: m.time_embed_dim,
            time_input: m.time_input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub hidden_dim: usize,
    pub depth: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let m = MlpSpec::encoder_default();
        EncoderSection {
            hidden_dim: m.hidden_dim,
            depth: m.depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    pub weighting: WeightingKind,
    pub beta: f64,
    /// Pseudo-Huber constant; defaults to `0.00054 sqrt(d)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub huber_c: Option<f64>,
    pub kl_reduction: KlReduction,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        ObjectiveSection {
            weighting: WeightingKind::AdaptiveInverseGap,
            beta: 0.001,
            huber_c: None,
            kl_reduction: KlReduction::SumDims,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr_schedule: LrSchedule,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            kind: OptimizerKind::RAdam,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub iterations: u64,
    pub ema_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            batch_size: 256,
            iterations: 40_000,
            ema_rate: 0.999,
            clip_norm: 200.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    /// Intermediate re-noising times, decreasing; `steps - 1` of them are used.
    pub time_points: Vec<f64>,
    /// Sample from the EMA weights rather than the live ones.
    pub use_ema: bool,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            time_points: vec![0.07],
            use_ema: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoggingSection {
    /// Iterations per metrics row.
    pub interval: u64,
    /// Iterations between checkpoints; a multiple of `interval`.
    pub checkpoint_interval: u64,
    /// Minibatches per gradient-variance probe; 0 disables the probe.
    pub probe_count: usize,
    pub probe_batch: usize,
    /// Smoothing factor of the variance trace.
    pub variance_ema: f64,
}

impl Default for LoggingSection {
    fn default() -> Self {
        LoggingSection {
            interval: 100,
            checkpoint_interval: 1000,
            probe_count: 8,
            probe_batch: 256,
            variance_ema: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_samples: usize,
    pub chain_ns: Vec<usize>,
    pub chain_batch: usize,
    /// Defaults to `kernel.sigma_data`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoder_sigma: Option<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_samples: 8192,
            chain_ns: vec![4, 16, 64],
            chain_batch: 256,
            decoder_sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub kernel: KernelSection,
    pub schedule: ScheduleSection,
    pub coupling: CouplingSection,
    pub model: ModelSection,
    pub encoder: EncoderSection,
    pub objective: ObjectiveSection,
    pub optimizer: OptimizerSection,
    pub training: TrainingSection,
    pub sampling: SamplingSection,
    pub logging: LoggingSection,
    pub eval: EvalSection,
}

/// Field path and reason for one invalid setting.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: &'static str,
    pub message: String,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        match name {
            "toy-appendix-e" => {}
            "toy-independent" => cfg.coupling.kind = CouplingKind::Independent,
            "toy-ot" => cfg.coupling.kind = CouplingKind::MinibatchOt,
            other => {
                return Err(CliError::Argument(format!(
                    "unknown preset `{other}`; available: {}",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(cfg)
    }

    /// Parses and validates; nothing is written before this succeeds.
    pub fn from_toml_str(text: &str) -> Result<RunConfig, CliError> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| CliError::Config(e.message().replace('\n', " ")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn data_dim(&self) -> usize {
        self.dataset.means.first().map_or(0, Vec::len)
    }

    pub fn mixture(&self) -> GaussianMixture {
        GaussianMixture {
            means: self.dataset.means.clone(),
            std: self.dataset.std,
            weights: self.dataset.weights.clone(),
        }
    }

    pub fn kernel(&self) -> TransitionKernel {
        TransitionKernel {
            kind: self.kernel.kind,
            sigma_min: self.kernel.sigma_min,
            sigma_max: self.kernel.sigma_max,
            sigma_data: self.kernel.sigma_data,
        }
    }

    pub fn huber_c(&self) -> f64 {
        self.objective
            .huber_c
            .unwrap_or(0.00054 * (self.data_dim() as f64).sqrt())
    }

    pub fn train_config(&self) -> TrainConfig {
        let s = &self.schedule;
        TrainConfig {
            kernel: self.kernel(),
            schedule: ScheduleConfig {
                mode: s.mode,
                rho: s.rho,
                s0: s.s0,
                s1: s.s1,
                p_mean: s.p_mean,
                p_std: s.p_std,
                ecm_k: s.ecm_k,
                ecm_b: s.ecm_b,
                ecm_q: s.ecm_q,
                ecm_halvings: s.ecm_halvings,
            },
            coupling: self.coupling.kind,
            model: MlpSpec {
                hidden_dim: self.model.hidden_dim,
                depth: self.model.depth,
                time_embed_dim: self.model.time_embed_dim,
                time_input: self.model.time_input,
            },
            encoder: MlpSpec {
                hidden_dim: self.encoder.hidden_dim,
                depth: self.encoder.depth,
                ..MlpSpec::encoder_default()
            },
            objective: ObjectiveConfig {
                weighting: self.objective.weighting,
                beta: self.objective.beta,
                huber_c: self.huber_c(),
                kl_reduction: self.objective.kl_reduction,
            },
            optimizer: OptimizerConfig {
                kind: self.optimizer.kind,
                lr: self.optimizer.lr,
                beta1: self.optimizer.beta1,
                beta2: self.optimizer.beta2,
                eps: self.optimizer.eps,
                lr_schedule: self.optimizer.lr_schedule,
            },
            batch_size: self.training.batch_size,
            iterations: self.training.iterations,
            ema_rate: self.training.ema_rate,
            clip_norm: self.training.clip_norm,
            data_dim: self.data_dim(),
        }
    }

    pub fn eval_settings(&self, n_samples: usize) -> EvalSettings {
        EvalSettings {
            n_samples,
            multistep_times: self.sampling.time_points.iter().take(1).copied().collect(),
            chain_ns: self.eval.chain_ns.clone(),
            chain_batch: self.eval.chain_batch,
            decoder_sigma: self.eval.decoder_sigma.unwrap_or(self.kernel.sigma_data),
        }
    }

    /// All field-level problems, in schema order.
    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        let mut bad = |field: &'static str, ok: bool, message: &str| {
            if !ok {
                errs.push(FieldError {
                    field,
                    message: message.to_string(),
                });
            }
        };
        let d = &self.dataset;
        bad("dataset.means", !d.means.is_empty(), "at least one mixture component is required");
        let dim = self.data_dim();
        bad(
            "dataset.means",
            dim > 0 && d.means.iter().all(|m| m.len() == dim),
            "all means must share one positive dimension",
        );
        bad("dataset.std", d.std > 0.0, "must be positive");
        bad(
            "dataset.weights",
            d.weights.len() == d.means.len(),
            "one weight per mixture component is required",
        );
        bad(
            "dataset.weights",
            d.weights.iter().all(|w| *w >= 0.0) && d.weights.iter().sum::<f64>() > 0.0,
            "weights must be nonnegative with a positive sum",
        );
        let k = &self.kernel;
        bad("kernel.sigma_min", k.sigma_min > 0.0, "must be positive");
        bad("kernel.sigma_max", k.sigma_max > k.sigma_min, "must exceed sigma_min");
        bad("kernel.sigma_data", k.sigma_data > 0.0, "must be positive");
        let s = &self.schedule;
        bad("schedule.rho", s.rho > 0.0, "must be positive");
        bad("schedule.s0", s.s0 > 0, "must be positive");
        bad("schedule.s1", s.s1 >= s.s0, "must be at least s0");
        bad("schedule.p_std", s.p_std > 0.0, "must be positive");
        bad("schedule.ecm_q", s.ecm_q > 1.0, "must exceed 1");
        bad("schedule.ecm_halvings", s.ecm_halvings > 0, "must be positive");
        let m = &self.model;
        bad("model.hidden_dim", m.hidden_dim > 0, "must be positive");
        bad("model.depth", m.depth > 0, "must be positive");
        bad(
            "model.time_embed_dim",
            m.time_embed_dim > 0 && m.time_embed_dim.is_multiple_of(2),
            "must be positive and even",
        );
        bad("encoder.hidden_dim", self.encoder.hidden_dim > 0, "must be positive");
        bad("encoder.depth", self.encoder.depth > 0, "must be positive");
        let o = &self.objective;
        bad("objective.beta", o.beta >= 0.0, "must be nonnegative");
        bad(
            "objective.huber_c",
            o.huber_c.is_none_or(|c| c >= 0.0),
            "must be nonnegative",
        );
        let op = &self.optimizer;
        bad("optimizer.lr", op.lr > 0.0, "must be positive");
        bad("optimizer.beta1", (0.0..1.0).contains(&op.beta1), "must lie in [0, 1)");
        bad("optimizer.beta2", (0.0..1.0).contains(&op.beta2), "must lie in [0, 1)");
        bad("optimizer.eps", op.eps >= 0.0, "must be nonnegative");
        bad(
            "optimizer.lr_schedule.i_ref",
            !matches!(op.lr_schedule, LrSchedule::InvSqrt { i_ref: 0 }),
            "must be positive",
        );
        let t = &self.training;
        bad("training.batch_size", t.batch_size > 0, "must be positive");
        bad("training.iterations", t.iterations > 0, "must be positive");
        bad("training.ema_rate", (0.0..1.0).contains(&t.ema_rate), "must lie in [0, 1)");
        bad("training.clip_norm", t.clip_norm > 0.0, "must be positive");
        let tp = &self.sampling.time_points;
        bad(
            "sampling.time_points",
            tp.windows(2).all(|w| w[0] > w[1])
                && tp.iter().all(|&x| x > k.sigma_min && x < k.sigma_max),
            "must be strictly decreasing inside (sigma_min, sigma_max)",
        );
        let l = &self.logging;
        bad("logging.interval", l.interval > 0, "must be positive");
        bad(
            "logging.checkpoint_interval",
            l.interval > 0 && l.checkpoint_interval > 0 && l.checkpoint_interval.is_multiple_of(l.interval),
            "must be a positive multiple of logging.interval",
        );
        bad(
            "logging.probe_count",
            l.probe_count == 0 || l.probe_count >= 2,
            "must be 0 (disabled) or at least 2",
        );
        bad("logging.probe_batch", l.probe_batch > 0, "must be positive");
        bad("logging.variance_ema", (0.0..1.0).contains(&l.variance_ema), "must lie in [0, 1)");
        let e = &self.eval;
        bad("eval.n_samples", e.n_samples >= 2, "must be at least 2");
        bad(
            "eval.chain_ns",
            !e.chain_ns.is_empty() && e.chain_ns.iter().all(|&n| n >= 2),
            "needs at least one partition size, each >= 2",
        );
        bad("eval.chain_batch", e.chain_batch > 0, "must be positive");
        bad(
            "eval.decoder_sigma",
            e.decoder_sigma.is_none_or(|s| s > 0.0),
            "must be positive",
        );
        errs
    }

    /// First field error as a [`CliError::Config`], then the core's own checks.
    pub fn check(&self) -> Result<(), CliError> {
        if let Some(e) = self.field_errors().into_iter().next() {
            return Err(CliError::Config(format!("{}: {}", e.field, e.message)));
        }
        self.mixture()
            .validate()
            .and_then(|_| self.train_config().validate())
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_preset() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::preset("toy-appendix-e").unwrap());
        assert_eq!(cfg.training.iterations, 40_000);
        assert_eq!(cfg.training.batch_size, 256);
        assert_eq!(cfg.optimizer.lr, 1e-4);
        assert_eq!(cfg.objective.beta, 0.001);
        assert_eq!(cfg.sampling.time_points, vec![0.07]);
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for name in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            let text = cfg.to_toml_string();
            assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        }
        assert!(RunConfig::preset("toy-moons").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("[training]\nbatchsize = 3\n").unwrap_err();
        assert!(err.to_string().contains("batchsize"), "{err}");
        assert!(RunConfig::from_toml_str("[nonsense]\n").is_err());
    }

    #[test]
    fn field_diagnostics_name_the_field() {
        let err = RunConfig::from_toml_str("[dataset]\nmeans = []\nweights = []\n").unwrap_err();
        assert!(err.to_string().contains("dataset.means"), "{err}");
        let err = RunConfig::from_toml_str("[logging]\ninterval = 30\ncheckpoint_interval = 100\n")
            .unwrap_err();
        assert!(err.to_string().contains("logging.checkpoint_interval"), "{err}");
    }

    #[test]
    fn huber_default_scales_with_dimension() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.huber_c(), 0.00054 * 2f64.sqrt());
    }
}
