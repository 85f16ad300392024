use serde::{Deserialize, Serialize};

use crate::objective::{ClassAggregation, LossSpec};
use crate::optimizers::{AdamHyper, OptimizerHyper, OptimizerKind};

use super::TrainError;

/// Run-level settings of one full-batch training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub eta: f64,
    pub optimizer: OptimizerKind,
    pub steps: usize,
    pub seed: u64,
    /// Hidden width `h`; `d` and `c` come from the dataset.
    pub hidden: usize,
    #[serde(default = "defaults::rho")]
    pub rho: f64,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default = "defaults::beta_act")]
    pub beta_act: f64,
    #[serde(default = "defaults::beta_loss")]
    pub beta_loss: f64,
    #[serde(default)]
    pub class_aggregation: ClassAggregation,
    #[serde(default = "defaults::adam_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "defaults::yes")]
    pub adam_bias_correction: bool,
    /// A run diverges once its loss exceeds this multiple of the initial loss.
    #[serde(default = "defaults::divergence_factor")]
    pub divergence_factor: f64,
    #[serde(default = "defaults::record_every")]
    pub record_every: usize,
}

mod defaults {
    pub fn rho() -> f64 {
        0.999
    }
    pub fn epsilon() -> f64 {
        1e-8
    }
    pub fn beta_act() -> f64 {
        5.0
    }
    pub fn beta_loss() -> f64 {
        20.0
    }
    pub fn adam_beta1() -> f64 {
        0.9
    }
    pub fn yes() -> bool {
        true
    }
    pub fn divergence_factor() -> f64 {
        1e6
    }
    pub fn record_every() -> usize {
        1
    }
}

impl Default for TrainConfig {
    /// The full-scale settings: h = 1000, 5000 steps, modified RMSProp.
    fn default() -> Self {
        Self {
            alpha: 1.0,
            eta: 1e-3,
            optimizer: OptimizerKind::ModifiedRmsprop,
            steps: 5000,
            seed: 0,
            hidden: 1000,
            rho: defaults::rho(),
            epsilon: defaults::epsilon(),
            beta_act: defaults::beta_act(),
            beta_loss: defaults::beta_loss(),
            class_aggregation: ClassAggregation::Sum,
            adam_beta1: defaults::adam_beta1(),
            adam_bias_correction: true,
            divergence_factor: defaults::divergence_factor(),
            record_every: defaults::record_every(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden width must be at least 1".into());
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        for (name, v) in [
            ("beta_act", self.beta_act),
            ("beta_loss", self.beta_loss),
            ("divergence_factor", self.divergence_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.adam_beta1 >= 0.0 && self.adam_beta1 < 1.0) {
            return bad(format!("adam_beta1 must lie in [0, 1), got {}", self.adam_beta1));
        }
        self.hyper()
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn hyper(&self) -> OptimizerHyper {
        OptimizerHyper {
            eta: self.eta,
            rho: self.rho,
            epsilon: self.epsilon,
            alpha: self.alpha,
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.adam_beta1,
            bias_correction: self.adam_bias_correction,
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            beta: self.beta_loss,
            aggregation: self.class_aggregation,
        }
    }
}
