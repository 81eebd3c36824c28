//! Iterative ensemble Kalman inversion with perturbed observations.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model_error::{apply_correction, ModellingErrorModel};
use crate::rng::{SeedStream, StreamTag};
use crate::transport::DiscreteMeasure;

/// Map from parameters u ∈ ℝ^M to observations in ℝ^L.
pub trait ForwardModel: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>>;
}

impl<T: ForwardModel + ?Sized> ForwardModel for &T {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).evaluate(u)
    }
}

/// G(u) = B u + c.
#[derive(Debug, Clone)]
pub struct LinearForward {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LinearForward {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let offset = DVector::zeros(matrix.nrows());
        Self { matrix, offset }
    }
}

impl ForwardModel for LinearForward {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("forward input", self.input_dim(), u.len())?;
        Ok(&self.matrix * u + &self.offset)
    }
}

/// Forward model given by a closure.
pub struct FnForward<F> {
    pub input_dim: usize,
    pub output_dim: usize,
    pub f: F,
}

impl<F> ForwardModel for FnForward<F>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        (self.f)(u)
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

/// J particles in ℝ^M at iteration `iteration`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<DVector<f64>>,
    pub iteration: usize,
}

impl Ensemble {
    pub fn new(particles: Vec<DVector<f64>>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::invalid("ensemble must contain at least one particle"));
        }
        let m = particles[0].len();
        for p in &particles {
            check_len("particle dimension", m, p.len())?;
        }
        Ok(Self {
            particles,
            iteration: 0,
        })
    }

    pub fn size(&self) -> usize {
        self.particles.len()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }

    pub fn mean(&self) -> DVector<f64> {
        mean_of(&self.particles)
    }

    /// Largest distance of a particle from the ensemble mean.
    pub fn spread(&self) -> f64 {
        let mean = self.mean();
        self.particles
            .iter()
            .map(|p| (p - &mean).norm())
            .fold(0.0, f64::max)
    }

    /// Appends `iter,particle,coeff_index,value` rows (no header).
    pub fn write_snapshot_rows<W: Write>(&self, out: &mut csv::Writer<W>) -> Result<()> {
        for (j, p) in self.particles.iter().enumerate() {
            for (m, v) in p.iter().enumerate() {
                out.write_record(&[
                    self.iteration.to_string(),
                    j.to_string(),
                    m.to_string(),
                    format!("{v:e}"),
                ])?;
            }
        }
        Ok(())
    }
}

pub(crate) fn mean_of(vs: &[DVector<f64>]) -> DVector<f64> {
    let mut m = DVector::zeros(vs[0].len());
    for v in vs {
        m += v;
    }
    m / vs.len() as f64
}

/// Observation noise covariance with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl NoiseModel {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::invalid("noise covariance must be square"));
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-12 * cov.abs().max() {
            return Err(Error::invalid("noise covariance must be symmetric"));
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::invalid("noise covariance is not positive definite"))?;
        Ok(Self { cov, chol })
    }

    /// γ²·I in ℝ^{L×L}.
    pub fn isotropic(gamma: f64, l: usize) -> Result<Self> {
        Self::new(DMatrix::identity(l, l) * (gamma * gamma))
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.cov * factor)
    }

    /// One draw from N(0, Γ).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample(StandardNormal));
        self.chol.l() * z
    }

    /// ½‖Γ^{-1/2} r‖².
    pub fn misfit(&self, r: &DVector<f64>) -> f64 {
        0.5 * r.dot(&self.chol.solve(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Plain iteration with Γ.
    #[default]
    PointEstimate,
    /// Iteration with Δ⁻¹Γ, Δ = 1/N.
    Bayesian,
}

/// Covariance used to draw the perturbed observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerturbationScaling {
    /// Same covariance as the gain (Δ⁻¹Γ in Bayesian mode).
    #[default]
    Effective,
    /// Unscaled Γ in both modes.
    Base,
}

#[derive(Debug, Clone)]
pub struct KalmanConfig {
    pub iterations: usize,
    pub mode: Mode,
    pub seed: u64,
    pub perturbations: PerturbationScaling,
    /// Global index of the first iteration; keys the perturbation streams so
    /// consecutive runs compose into one.
    pub first_iteration: usize,
    pub model_error: Option<ModellingErrorModel>,
    /// Keep every intermediate ensemble.
    pub record_history: bool,
}

impl KalmanConfig {
    pub fn new(iterations: usize, mode: Mode, seed: u64) -> Self {
        Self {
            iterations,
            mode,
            seed,
            perturbations: PerturbationScaling::Effective,
            first_iteration: 0,
            model_error: None,
            record_history: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iteration count must be at least 1"));
        }
        Ok(())
    }

    /// Δ⁻¹ factor applied to Γ in the gain.
    pub fn gain_scale(&self) -> f64 {
        match self.mode {
            Mode::PointEstimate => 1.0,
            Mode::Bayesian => self.iterations as f64,
        }
    }
}

/// C_up (M×L) and C_pp (L×L) with 1/J normalization.
pub fn empirical_covariances(
    particles: &[DVector<f64>],
    gvalues: &[DVector<f64>],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_len("forward evaluations", particles.len(), gvalues.len())?;
    if particles.len() < 2 {
        return Err(Error::invalid("covariances need at least two particles"));
    }
    let m = particles[0].len();
    let l = gvalues[0].len();
    for g in gvalues {
        check_len("forward output", l, g.len())?;
    }
    let j = particles.len() as f64;
    let ubar = mean_of(particles);
    let gbar = mean_of(gvalues);
    let du = DMatrix::from_fn(m, particles.len(), |r, c| particles[c][r] - ubar[r]);
    let dg = DMatrix::from_fn(l, gvalues.len(), |r, c| gvalues[c][r] - gbar[r]);
    let cup = &du * dg.transpose() / j;
    let mut cpp = &dg * dg.transpose() / j;
    crate::linalg::symmetrize(&mut cpp);
    Ok((cup, cpp))
}

/// One analysis step u_j ← u_j + C_up (C_pp + Γ_eff)⁻¹ (y + η_j − G(u_j)).
pub fn analysis_step(
    ensemble: &Ensemble,
    gvalues: &[DVector<f64>],
    y: &DVector<f64>,
    gamma_eff: &DMatrix<f64>,
    perturbations: &[DVector<f64>],
) -> Result<Ensemble> {
    check_len("perturbations", ensemble.size(), perturbations.len())?;
    check_len("data", gamma_eff.nrows(), y.len())?;
    let (cup, cpp) = empirical_covariances(&ensemble.particles, gvalues)?;
    check_len("data", cpp.nrows(), y.len())?;
    let s = &cpp + gamma_eff;
    let chol = Cholesky::new(s.clone())
        .ok_or_else(|| Error::Numeric("C_pp + Γ is not positive definite".into()))?;
    debug_assert!(gain_suppression_holds(&s, gamma_eff));
    let jn = ensemble.size();
    let resid = DMatrix::from_fn(y.len(), jn, |r, c| y[r] + perturbations[c][r] - gvalues[c][r]);
    let update = &cup * chol.solve(&resid);
    let particles = ensemble
        .particles
        .iter()
        .enumerate()
        .map(|(c, u)| u + update.column(c))
        .collect();
    Ok(Ensemble {
        particles,
        iteration: ensemble.iteration + 1,
    })
}

fn gain_suppression_holds(s: &DMatrix<f64>, gamma: &DMatrix<f64>) -> bool {
    let inv_norm = |m: &DMatrix<f64>| 1.0 / crate::linalg::min_eigenvalue(m);
    inv_norm(s) <= inv_norm(gamma) * (1.0 + 1e-9)
}

/// Evaluates the forward model on every particle, in parallel.
pub fn evaluate_ensemble(
    forward: &dyn ForwardModel,
    particles: &[DVector<f64>],
    iteration: usize,
) -> Result<Vec<DVector<f64>>> {
    particles
        .par_iter()
        .enumerate()
        .map(|(j, u)| {
            let g = forward.evaluate(u).map_err(|e| Error::Forward {
                particle: j,
                iteration,
                source: Box::new(e),
            })?;
            check_len("forward output", forward.output_dim(), g.len())?;
            Ok(g)
        })
        .collect()
}

/// Perturbations for all particles at a global iteration index.
pub fn draw_perturbations(noise: &NoiseModel, seed: u64, iteration: usize, count: usize) -> Vec<DVector<f64>> {
    let stream = SeedStream::new(seed, StreamTag::Perturbations);
    (0..count)
        .map(|j| noise.sample(&mut stream.rng(&[iteration as u64, j as u64])))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRow {
    pub iter: usize,
    /// ½‖Γ^{-1/2}(y − G(ū))‖² with the (corrected) unscaled Γ.
    pub misfit: f64,
    pub spread: f64,
    pub mean_norm: f64,
}

pub fn write_diagnostics_csv<W: Write>(w: W, rows: &[DiagnosticsRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iter", "misfit", "spread", "mean_norm"])?;
    for r in rows {
        out.write_record(&[
            r.iter.to_string(),
            format!("{:e}", r.misfit),
            format!("{:e}", r.spread),
            format!("{:e}", r.mean_norm),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EnkfOutput {
    pub ensemble: Ensemble,
    /// Final ensemble mean.
    pub estimate: DVector<f64>,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub history: Vec<Ensemble>,
}

impl EnkfOutput {
    pub fn write_snapshot_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iter", "particle", "coeff_index", "value"])?;
        for e in self.history.iter().chain(std::iter::once(&self.ensemble)) {
            e.write_snapshot_rows(&mut out)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs `config.iterations` analysis steps from `initial`.
pub fn run_enkf(
    config: &KalmanConfig,
    forward: &dyn ForwardModel,
    y: &DVector<f64>,
    noise: &NoiseModel,
    initial: Ensemble,
) -> Result<EnkfOutput> {
    config.validate()?;
    check_len("parameter dimension", forward.input_dim(), initial.dim())?;
    check_len("data", forward.output_dim(), y.len())?;
    check_len("noise covariance", y.len(), noise.dim())?;
    if initial.size() < 2 {
        return Err(Error::invalid("ensemble Kalman iteration needs at least two particles"));
    }
    let (y, base) = match &config.model_error {
        Some(model) => {
            let (yt, gt) = apply_correction(y, noise.covariance(), model)?;
            (yt, NoiseModel::new(gt)?)
        }
        None => (y.clone(), noise.clone()),
    };
    let scale = config.gain_scale();
    let gain_noise = base.scaled(scale)?;
    let perturb_noise = match config.perturbations {
        PerturbationScaling::Effective => gain_noise.clone(),
        PerturbationScaling::Base => base.clone(),
    };

    let mut ensemble = initial;
    ensemble.iteration = config.first_iteration;
    let mut diagnostics = Vec::with_capacity(config.iterations + 1);
    let mut history = Vec::new();
    let initial_spread = ensemble.spread();
    let mut warned = false;
    for n in 0..=config.iterations {
        let global = config.first_iteration + n;
        let mean = ensemble.mean();
        let g_mean = forward.evaluate(&mean).map_err(|e| Error::Forward {
            particle: usize::MAX,
            iteration: global,
            source: Box::new(e),
        })?;
        let spread = ensemble.spread();
        diagnostics.push(DiagnosticsRow {
            iter: global,
            misfit: base.misfit(&(&y - &g_mean)),
            spread,
            mean_norm: mean.norm(),
        });
        if !warned && initial_spread > 0.0 && spread > 10.0 * initial_spread {
            log::warn!(
                "ensemble spread {spread:.3e} at iteration {global} exceeds ten times the initial spread {initial_spread:.3e}"
            );
            warned = true;
        }
        if n == config.iterations {
            break;
        }
        let g = evaluate_ensemble(forward, &ensemble.particles, global)?;
        let eta = draw_perturbations(&perturb_noise, config.seed, global, ensemble.size());
        let next = analysis_step(&ensemble, &g, &y, gain_noise.covariance(), &eta)?;
        if config.record_history {
            history.push(std::mem::replace(&mut ensemble, next));
        } else {
            ensemble = next;
        }
    }
    let estimate = ensemble.mean();
    Ok(EnkfOutput {
        ensemble,
        estimate,
        diagnostics,
        history,
    })
}

/// (1/J) Σ_j ‖a_j − b_j‖₂.
pub fn ensemble_norm(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    check_len("ensemble size", a.size(), b.size())?;
    check_len("particle dimension", a.dim(), b.dim())?;
    Ok(a.particles
        .iter()
        .zip(&b.particles)
        .map(|(x, y)| (x - y).norm())
        .sum::<f64>()
        / a.size() as f64)
}

/// Equal-weight measure on the particle locations.
pub fn empirical_measure(ensemble: &Ensemble) -> DiscreteMeasure {
    DiscreteMeasure::uniform(ensemble.particles.clone()).expect("non-empty ensemble")
}
