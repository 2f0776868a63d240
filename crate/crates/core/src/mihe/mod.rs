//! Multiple instance hybrid estimator: objective, gradients and training.

mod model;
mod train;

pub use model::{
    code_instance, eps_den, generalized_mean, grad_column, log_generalized_mean, objective,
    prob_negative, prob_positive, prob_positive_from_residuals, CodeSet,
};
pub use train::{
    initialize, ista_settings, train, IterationRecord, TrainingState, MAX_HALVINGS,
    TARGET_INIT_FRACTION,
};
