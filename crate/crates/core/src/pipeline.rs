//! End-to-end inversion: data, prior ensemble, optional modelling-error
//! correction, EnKF, and reconstruction of σ.

use std::sync::Arc;

use nalgebra::DVector;

use crate::enkf::{run_enkf, Ensemble, EnkfOutput, KalmanConfig, NoiseModel};
use crate::error::{Error, Result};
use crate::fem::FemSolution;
use crate::homogenize::{EffectiveMap, RangePolicy, DEFAULT_CELL_N, DEFAULT_GRID_POINTS};
use crate::model_error::{
    modelling_error_samples, pilot_constant, prior_parameter_draws, run_online, ModellingErrorModel,
    OnlineSchedule,
};
use crate::prior::sample_prior_coefficients;
use crate::rng::{SeedStream, StreamTag};
use crate::scenario::{
    build_homogenized_map, effective_map, generate_observations, relative_sigma_error, HomogenizedForward, MacroPrior,
    ModelErrorMode, MultiscaleForward, Observations, ScenarioConfig,
};

/// Pilot batch size for the boundedness constant.
pub const PILOT_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardChoice {
    /// Homogenized surrogate on the macro mesh.
    Surrogate,
    /// Fine-mesh multiscale model.
    Multiscale,
}

/// Everything built once per configuration.
#[derive(Debug)]
pub struct Problem {
    pub config: ScenarioConfig,
    pub prior: MacroPrior,
    pub fine: MultiscaleForward,
    pub surrogate: HomogenizedForward,
    pub noise: NoiseModel,
    /// Keep every intermediate ensemble in the output.
    pub record_history: bool,
}

/// Result of one inversion.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub output: EnkfOutput,
    pub models: Vec<ModellingErrorModel>,
    pub pilot_c_e: Option<f64>,
    pub sigma: FemSolution,
}

impl Inversion {
    pub fn relative_error(&self) -> f64 {
        relative_sigma_error(&self.sigma)
    }
}

impl Problem {
    pub fn new(config: ScenarioConfig, policy: RangePolicy) -> Result<Self> {
        config.validate()?;
        let table = build_homogenized_map(&config, DEFAULT_CELL_N, DEFAULT_GRID_POINTS)?;
        Self::with_map(config, Arc::new(effective_map(table, policy, DEFAULT_CELL_N)?))
    }

    pub fn with_map(config: ScenarioConfig, map: Arc<EffectiveMap>) -> Result<Self> {
        config.validate()?;
        let prior = MacroPrior::build(&config)?;
        let fine = MultiscaleForward::new(&config, prior.clone())?;
        let surrogate = HomogenizedForward::new(&config, prior.clone(), map)?;
        let noise = NoiseModel::isotropic(config.gamma, config.observation_dim())?;
        Ok(Self {
            config,
            prior,
            fine,
            surrogate,
            noise,
            record_history: false,
        })
    }

    /// Synthetic data at the configured noise level, or noiseless.
    pub fn observations(&self, noiseless: bool) -> Result<Observations> {
        let gamma = if noiseless { 0.0 } else { self.config.gamma };
        generate_observations(&self.fine, gamma, self.config.seed)
    }

    pub fn initial_ensemble(&self) -> Result<Ensemble> {
        let mut rng = SeedStream::new(self.config.seed, StreamTag::InitialEnsemble).rng(&[]);
        Ensemble::new(sample_prior_coefficients(&mut rng, self.config.m, self.config.j))
    }

    pub fn kalman_config(&self) -> KalmanConfig {
        let mut k = KalmanConfig::new(self.config.n, self.config.mode, self.config.seed);
        k.record_history = self.record_history;
        k
    }

    /// Offline modelling-error model from prior draws and the pilot C_E.
    pub fn estimate_model_error(&self, samples: usize) -> Result<(ModellingErrorModel, f64)> {
        let params = prior_parameter_draws(self.config.seed, self.config.m, samples);
        let errors = modelling_error_samples(&params, &self.fine, &self.surrogate)?;
        let c_e = pilot_constant(&errors[..errors.len().min(PILOT_SAMPLES)], self.config.epsilon, self.config.h, 1);
        Ok((ModellingErrorModel::from_samples(&errors)?, c_e))
    }

    /// Runs the configured inversion against `y`.
    pub fn invert(&self, y: &DVector<f64>, forward: ForwardChoice) -> Result<Inversion> {
        if y.len() != self.config.observation_dim() {
            return Err(Error::DimensionMismatch {
                what: "observation vector",
                expected: self.config.observation_dim(),
                found: y.len(),
            });
        }
        let initial = self.initial_ensemble()?;
        let mut kalman = self.kalman_config();
        let (output, models, pilot) = match (forward, self.config.model_error) {
            (ForwardChoice::Multiscale, ModelErrorMode::None) => {
                (run_enkf(&kalman, &self.fine, y, &self.noise, initial)?, Vec::new(), None)
            }
            (ForwardChoice::Multiscale, _) => {
                return Err(Error::invalid("modelling-error correction applies to the surrogate only"))
            }
            (ForwardChoice::Surrogate, ModelErrorMode::None) => {
                (run_enkf(&kalman, &self.surrogate, y, &self.noise, initial)?, Vec::new(), None)
            }
            (ForwardChoice::Surrogate, ModelErrorMode::Offline) => {
                let (model, c_e) = self.estimate_model_error(self.config.n_e)?;
                log::info!("offline modelling error: {} samples, pilot C_E = {c_e:.4}", model.samples);
                kalman.model_error = Some(model.clone());
                let out = run_enkf(&kalman, &self.surrogate, y, &self.noise, initial)?;
                (out, vec![model], Some(c_e))
            }
            (ForwardChoice::Surrogate, ModelErrorMode::Online) => {
                let schedule = OnlineSchedule::uniform(self.config.levels, self.config.n_e, self.config.n)?;
                let out = run_online(&kalman, &schedule, &self.fine, &self.surrogate, y, &self.noise, initial)?;
                (out.output, out.models, None)
            }
        };
        let sigma = self.prior.sigma_field(&output.estimate)?;
        Ok(Inversion {
            output,
            models,
            pilot_c_e: pilot,
            sigma,
        })
    }
}
