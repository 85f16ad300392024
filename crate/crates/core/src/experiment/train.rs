use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::model::{backward, forward, ActivationSpec, ForwardTrace, ModelDims, ModelError, ModelParams};
use crate::numerics::{Matrix, SeededRng};
use crate::objective::{scaled_objective, ObjectiveContext, ObjectiveError};
use crate::optimizers::Optimizer;

use super::metrics::{accuracy, detect_divergence, detect_frozen, hidden_consistency};
use super::{TrainConfig, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Top-1 accuracy of the shifted output `f(θ, x) − f(θ₀, x)`.
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
    /// Accuracies of the initial parameters.
    pub initial_train_accuracy: f64,
    pub initial_eval_accuracy: f64,
    pub consistency: f64,
    pub diverged: bool,
    pub frozen: bool,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub divergence_threshold: f64,
    pub steps_completed: usize,
    /// Loss before steps `0, k, 2k, ...` with `k = record_every`.
    pub loss_trace: Vec<f64>,
    pub record_every: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub initial: ModelParams,
    pub final_params: ModelParams,
}

/// Full-batch training from a seeded standard Gaussian initialization.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    eval_set: &Dataset,
) -> Result<TrainOutcome, TrainError> {
    let dims = model_dims(config, train_set, eval_set)?;
    let init = ModelParams::init(dims, &mut SeededRng::new(config.seed));
    train_from(config, init, train_set, eval_set)
}

fn model_dims(
    config: &TrainConfig,
    train_set: &Dataset,
    eval_set: &Dataset,
) -> Result<ModelDims, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::Config(format!(
            "training set {} is empty",
            train_set.name
        )));
    }
    if train_set.input_dim() != eval_set.input_dim() || train_set.num_classes() != eval_set.num_classes() {
        return Err(TrainError::Config(format!(
            "train set is {}x{} (d x c) but eval set is {}x{}",
            train_set.input_dim(),
            train_set.num_classes(),
            eval_set.input_dim(),
            eval_set.num_classes()
        )));
    }
    Ok(ModelDims::new(
        train_set.input_dim(),
        config.hidden,
        train_set.num_classes(),
    ))
}

fn is_numeric_blowup(e: &ModelError) -> bool {
    matches!(e, ModelError::NonFinite { .. })
}

/// Full-batch training from given initial parameters.
///
/// Runs exactly `config.steps` steps unless the loss diverges; divergence
/// and frozen parameters are reported as data. After divergence the report
/// describes the last state whose forward pass was finite.
pub fn train_from(
    config: &TrainConfig,
    init: ModelParams,
    train_set: &Dataset,
    eval_set: &Dataset,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let dims = model_dims(config, train_set, eval_set)?;
    if init.dims() != dims {
        return Err(TrainError::Config(format!(
            "initial parameters have dims {:?}, data needs {dims:?}",
            init.dims()
        )));
    }
    let spec = ActivationSpec::calibrated(config.beta_act)?;
    let loss_spec = config.loss_spec();
    let x = &train_set.inputs;
    let y = &train_set.labels;

    let initial_trace = forward(&init, &spec, x)?;
    let ctx = ObjectiveContext::capture(config.alpha, initial_trace.output.clone())?;
    // Predictions are the shifted outputs f − f₀; their argmax does not
    // depend on α. At θ₀ every class ties.
    let initial_eval_output = forward(&init, &spec, &eval_set.inputs)?.output;
    let shifted = |out: &Matrix, base: &Matrix| out.sub(base).expect("output shapes agree");
    let initial_train_accuracy = accuracy(&shifted(&initial_trace.output, ctx.initial_output()), y);
    let initial_eval_accuracy = accuracy(
        &shifted(&initial_eval_output, &initial_eval_output),
        &eval_set.labels,
    );

    let mut optimizer = Optimizer::new(
        config.optimizer,
        config.hyper(),
        config.adam(),
        dims.param_count(),
    )?;
    let mut params = init.clone();
    let mut trace: ForwardTrace = initial_trace;
    let mut loss_trace = Vec::with_capacity(config.steps / config.record_every + 1);
    let mut diverged = false;
    let mut initial_loss = f64::NAN;
    let mut threshold = f64::INFINITY;
    let mut steps_completed = 0;
    let mut last_loss = f64::NAN;

    for step in 0..=config.steps {
        let objective = match scaled_objective(&trace.output, &ctx, y, &loss_spec) {
            Ok(v) => v,
            Err(ObjectiveError::NonFinite(loss)) => {
                last_loss = loss;
                diverged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        last_loss = objective.loss;
        if step == 0 {
            initial_loss = objective.loss;
            threshold = config.divergence_factor * initial_loss;
        }
        if step % config.record_every == 0 || step == config.steps {
            loss_trace.push(objective.loss);
        }
        if detect_divergence(objective.loss, threshold) {
            diverged = true;
            break;
        }
        if step == config.steps {
            break;
        }
        let grad = backward(&params, &spec, x, &trace, &objective.dl_df)?;
        let mut candidate = params.clone();
        let diag = optimizer.step(candidate.as_mut_slice(), grad.as_slice())?;
        if diag.diverged {
            diverged = true;
            break;
        }
        match forward(&candidate, &spec, x) {
            Ok(t) => {
                params = candidate;
                trace = t;
                steps_completed += 1;
            }
            Err(e) if is_numeric_blowup(&e) => {
                last_loss = f64::INFINITY;
                diverged = true;
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }

    let train_accuracy = accuracy(&shifted(&trace.output, ctx.initial_output()), y);
    let eval_accuracy = match forward(&params, &spec, &eval_set.inputs) {
        Ok(t) => accuracy(&shifted(&t.output, &initial_eval_output), &eval_set.labels),
        Err(e) if is_numeric_blowup(&e) => {
            diverged = true;
            0.0
        }
        Err(e) => return Err(e.into()),
    };
    let consistency = hidden_consistency(&init, &params, &eval_set.inputs)?;
    let frozen = detect_frozen(&init, &params);

    Ok(TrainOutcome {
        report: TrainReport {
            train_accuracy,
            eval_accuracy,
            initial_train_accuracy,
            initial_eval_accuracy,
            consistency,
            diverged,
            frozen,
            initial_loss,
            final_loss: last_loss,
            divergence_threshold: threshold,
            steps_completed,
            loss_trace,
            record_every: config.record_every,
        },
        initial: init,
        final_params: params,
    })
}
