//! Ensemble Kalman inversion for multiscale elliptic problems with a
//! homogenized finite-element surrogate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod enkf;
pub mod error;
pub mod fem;
pub mod flux;
pub mod homogenize;
pub mod linalg;
pub mod mesh;
pub mod pipeline;
pub mod model_error;
pub mod prior;
pub mod quadrature;
pub mod rng;
pub mod scenario;
pub mod study;
pub mod tensor;
pub mod transport;

pub use error::{ConfigError, Error, Result};
pub use fem::{assemble_stiffness, l2_distance, l2_error, FemSolution, FemSpace};
pub use flux::{flux_observation, AlignmentPolicy, FluxOperator, FluxWeight};
pub use homogenize::{effective_tensor, solve_cell_problem, CellMesh, EffectiveMap, HomogenizedMap, RangePolicy};
pub use mesh::{build_structured_mesh, BoundaryEdge, Side, TriMesh};
pub use quadrature::QuadRule;
pub use rng::{SeedStream, StreamTag};
pub use tensor::{FnTensor, Sym2, TensorField};
pub use enkf::{
    analysis_step, empirical_covariances, empirical_measure, ensemble_norm, run_enkf, Ensemble,
    EnkfOutput, ForwardModel, KalmanConfig, Mode, NoiseModel,
};
pub use model_error::{
    apply_correction, estimate_offline, run_online, sample_size_cov, sample_size_mean,
    ModellingErrorModel, OnlineSchedule,
};
pub use prior::{build_covariance, kl_decompose, kl_expand, sample_prior_coefficients, KLBasis, PriorCovariance};
pub use pipeline::{ForwardChoice, Inversion, Problem};
pub use scenario::{
    dirichlet_data, generate_observations, multiscale_tensor, observation_layout, truth_sigma,
    HomogenizedForward, MacroPrior, MultiscaleForward, ScenarioConfig,
};
pub use transport::{
    discretization_error, homogenization_error, wasserstein_discrete, wasserstein_upper_bound,
    DiscreteMeasure,
};
