//! Optimization on population moments (λ-sweeps) and on sampled data (linear or MLP models).

mod empirical;
mod model;
mod population;
mod svg;
mod sweep;

pub use empirical::{
    evaluate, train_empirical, EmpiricalConfig, Evaluation, HistoryPoint, StepRule, TrainedModel,
};
pub use model::{Architecture, Forward, MlpSpec, Model};
pub use population::{
    normalized_objective, train_population, OptimConfig, Optimizer, TrainOutcome, TrajectoryPoint,
};
pub use svg::sweep_svg;
pub use sweep::{default_grid, lambda_sweep, parse_grid, sweep_csv, SweepRecord};
