//! Central-difference check of the analytic parameter gradient.

use serde::{Deserialize, Serialize};

use crate::data::one_vs_all;
use crate::model::{backward, forward, ActivationSpec, ModelDims, ModelParams};
use crate::numerics::{derive_seed, gaussian_matrix, SeededRng};
use crate::objective::{scaled_loss, scaled_objective, LossSpec, ObjectiveContext};

use super::TrainError;

/// Largest `d·h·c` accepted; finite differences cost one loss pair per parameter.
pub const MAX_GRADCHECK_SIZE: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckOptions {
    #[serde(default = "defaults::input")]
    pub input: usize,
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,
    #[serde(default = "defaults::classes")]
    pub classes: usize,
    #[serde(default = "defaults::samples")]
    pub samples: usize,
    #[serde(default = "defaults::instances")]
    pub instances: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::step")]
    pub step: f64,
    #[serde(default = "defaults::beta_act")]
    pub beta_act: f64,
    #[serde(default = "defaults::beta_loss")]
    pub beta_loss: f64,
    /// Test hook: perturbs the analytic gradient so the check must fail.
    #[serde(default)]
    pub corrupt: bool,
}

mod defaults {
    pub fn input() -> usize {
        3
    }
    pub fn hidden() -> usize {
        4
    }
    pub fn classes() -> usize {
        2
    }
    pub fn samples() -> usize {
        5
    }
    pub fn instances() -> usize {
        20
    }
    pub fn step() -> f64 {
        1e-5
    }
    pub fn beta_act() -> f64 {
        5.0
    }
    pub fn beta_loss() -> f64 {
        20.0
    }
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            input: defaults::input(),
            hidden: defaults::hidden(),
            classes: defaults::classes(),
            samples: defaults::samples(),
            instances: defaults::instances(),
            seed: 0,
            step: defaults::step(),
            beta_act: defaults::beta_act(),
            beta_loss: defaults::beta_loss(),
            corrupt: false,
        }
    }
}

impl GradcheckOptions {
    pub fn validate(&self) -> Result<(), TrainError> {
        let size = self.input * self.hidden * self.classes;
        if self.input == 0 || self.hidden == 0 || self.classes < 2 || self.samples == 0 {
            return Err(TrainError::Config(format!(
                "gradcheck needs d, h, n >= 1 and c >= 2 (d={}, h={}, c={}, n={})",
                self.input, self.hidden, self.classes, self.samples
            )));
        }
        if size > MAX_GRADCHECK_SIZE {
            return Err(TrainError::Config(format!(
                "gradcheck dims d*h*c = {size} exceed {MAX_GRADCHECK_SIZE}"
            )));
        }
        if self.instances == 0 {
            return Err(TrainError::Config("gradcheck needs at least one instance".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(TrainError::Config(format!(
                "finite-difference step must be positive, got {}",
                self.step
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    pub worst_instance: usize,
    pub worst_parameter: usize,
    pub instances: usize,
    pub parameters: usize,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// `|a − b| / max(|a|, |b|)`, with both magnitudes floored at `scale`, the
/// largest gradient entry of the instance, times 1e-3.
fn relative_error(a: f64, b: f64, scale: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-3 * scale).max(f64::MIN_POSITIVE);
    (a - b).abs() / denom
}

/// Compares analytic gradients with central differences on random instances.
///
/// Each instance draws Gaussian inputs, random classes, a Gaussian `θ₀`,
/// a scaling factor in `[0.5, 2]`, and evaluates at `θ₀ + 0.3·noise` so the
/// shifted output is nonzero.
pub fn gradcheck(options: &GradcheckOptions) -> Result<GradcheckReport, TrainError> {
    options.validate()?;
    let dims = ModelDims::new(options.input, options.hidden, options.classes);
    let spec = ActivationSpec::calibrated(options.beta_act)?;
    let loss = LossSpec {
        beta: options.beta_loss,
        ..LossSpec::default()
    };
    let mut report = GradcheckReport {
        max_relative_error: 0.0,
        worst_instance: 0,
        worst_parameter: 0,
        instances: options.instances,
        parameters: dims.param_count(),
    };
    for instance in 0..options.instances {
        let mut rng = SeededRng::new(derive_seed(options.seed, &[instance as u64]));
        let x = gaussian_matrix(&mut rng, options.samples, options.input);
        let classes: Vec<usize> = (0..options.samples)
            .map(|_| rng.below(options.classes as u64) as usize)
            .collect();
        let y = one_vs_all(&classes, options.classes);
        let theta0 = ModelParams::init(dims, &mut rng);
        let alpha = 0.5 * 4f64.powf(rng.uniform());
        let ctx = ObjectiveContext::capture(alpha, forward(&theta0, &spec, &x)?.output)?;
        let mut theta = theta0.clone();
        for t in theta.as_mut_slice() {
            *t += 0.3 * rng.normal();
        }

        let trace = forward(&theta, &spec, &x)?;
        let objective = scaled_objective(&trace.output, &ctx, &y, &loss)?;
        let mut analytic = backward(&theta, &spec, &x, &trace, &objective.dl_df)?.into_vec();
        if options.corrupt {
            analytic[0] += 1e-3 * analytic[0].abs().max(1.0);
        }

        let loss_at = |p: &ModelParams| -> Result<f64, TrainError> {
            Ok(scaled_loss(&forward(p, &spec, &x)?.output, &ctx, &y, &loss)?)
        };
        let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let mut probe = theta.clone();
        for (k, &a) in analytic.iter().enumerate() {
            let original = probe.as_slice()[k];
            probe.as_mut_slice()[k] = original + options.step;
            let up = loss_at(&probe)?;
            probe.as_mut_slice()[k] = original - options.step;
            let down = loss_at(&probe)?;
            probe.as_mut_slice()[k] = original;
            let numeric = (up - down) / (2.0 * options.step);
            let err = relative_error(a, numeric, scale);
            if err > report.max_relative_error || err.is_nan() {
                report.max_relative_error = err;
                report.worst_instance = instance;
                report.worst_parameter = k;
            }
        }
    }
    Ok(report)
}
