//! Modelling-error statistics of 𝓔 = G_full − G_cheap and their use in
//! the inversion, offline and online.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::enkf::{check_len, run_enkf, Ensemble, EnkfOutput, ForwardModel, KalmanConfig, NoiseModel};
use crate::error::{Error, Result};
use crate::rng::{SeedStream, StreamTag};

/// Gaussian model N(m, Σ) of the modelling error.
#[derive(Debug, Clone, PartialEq)]
pub struct ModellingErrorModel {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub samples: usize,
    /// Per-component sample skewness (NaN for constant components).
    pub skewness: Vec<f64>,
    /// Per-component sample excess kurtosis (NaN for constant components).
    pub excess_kurtosis: Vec<f64>,
}

impl ModellingErrorModel {
    pub fn zero(l: usize) -> Self {
        Self {
            mean: DVector::zeros(l),
            cov: DMatrix::zeros(l, l),
            samples: 0,
            skewness: vec![f64::NAN; l],
            excess_kurtosis: vec![f64::NAN; l],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample mean and 1/(N−1) sample covariance.
    pub fn from_samples(errors: &[DVector<f64>]) -> Result<Self> {
        let n = errors.len();
        if n < 2 {
            return Err(Error::invalid("modelling-error estimation needs at least two samples"));
        }
        let l = errors[0].len();
        for e in errors {
            check_len("modelling-error sample", l, e.len())?;
        }
        let mean = crate::enkf::mean_of(errors);
        let dev = DMatrix::from_fn(l, n, |r, c| errors[c][r] - mean[r]);
        let mut cov = &dev * dev.transpose() / (n - 1) as f64;
        crate::linalg::symmetrize(&mut cov);
        let mut skewness = Vec::with_capacity(l);
        let mut excess_kurtosis = Vec::with_capacity(l);
        for r in 0..l {
            let row = dev.row(r);
            let m2 = row.iter().map(|d| d * d).sum::<f64>() / n as f64;
            let m3 = row.iter().map(|d| d.powi(3)).sum::<f64>() / n as f64;
            let m4 = row.iter().map(|d| d.powi(4)).sum::<f64>() / n as f64;
            if m2 > 0.0 {
                skewness.push(m3 / m2.powf(1.5));
                excess_kurtosis.push(m4 / (m2 * m2) - 3.0);
            } else {
                skewness.push(f64::NAN);
                excess_kurtosis.push(f64::NAN);
            }
        }
        Ok(Self {
            mean,
            cov,
            samples: n,
            skewness,
            excess_kurtosis,
        })
    }

    /// Writes the mean as `index,value` and Σ as a headerless square matrix.
    pub fn write_csv<W1: Write, W2: Write>(&self, mean_out: W1, cov_out: W2) -> Result<()> {
        let mut m = csv::Writer::from_writer(mean_out);
        m.write_record(["index", "value"])?;
        for (i, v) in self.mean.iter().enumerate() {
            m.write_record(&[i.to_string(), format!("{v:e}")])?;
        }
        m.flush()?;
        let mut c = csv::WriterBuilder::new().has_headers(false).from_writer(cov_out);
        for r in 0..self.cov.nrows() {
            c.write_record(self.cov.row(r).iter().map(|v| format!("{v:e}")))?;
        }
        c.flush()?;
        Ok(())
    }

    pub fn read_csv<R1: std::io::Read, R2: std::io::Read>(mean_in: R1, cov_in: R2, samples: usize) -> Result<Self> {
        let mut mean = Vec::new();
        for rec in csv::Reader::from_reader(mean_in).records() {
            let rec = rec?;
            mean.push(parse_f64(&rec[1])?);
        }
        let l = mean.len();
        let mut cov = Vec::with_capacity(l * l);
        let mut rows = 0;
        for rec in csv::ReaderBuilder::new().has_headers(false).from_reader(cov_in).records() {
            let rec = rec?;
            check_len("covariance row", l, rec.len())?;
            for v in rec.iter() {
                cov.push(parse_f64(v)?);
            }
            rows += 1;
        }
        check_len("covariance rows", l, rows)?;
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov: DMatrix::from_row_slice(l, l, &cov),
            samples,
            skewness: vec![f64::NAN; l],
            excess_kurtosis: vec![f64::NAN; l],
        })
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|e| Error::invalid(format!("bad number `{s}`: {e}")))
}

/// Evaluates 𝓔_i = G_full(u_i) − G_cheap(u_i) for every parameter.
pub fn modelling_error_samples(
    params: &[DVector<f64>],
    full: &dyn ForwardModel,
    cheap: &dyn ForwardModel,
) -> Result<Vec<DVector<f64>>> {
    check_len("forward output", full.output_dim(), cheap.output_dim())?;
    params
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let wrap = |e| Error::Sample {
                index: i,
                source: Box::new(e),
            };
            let a = full.evaluate(u).map_err(wrap)?;
            let b = cheap.evaluate(u).map_err(wrap)?;
            Ok(a - b)
        })
        .collect()
}

/// Offline estimate from the given parameter draws.
pub fn estimate_offline(
    params: &[DVector<f64>],
    full: &dyn ForwardModel,
    cheap: &dyn ForwardModel,
) -> Result<ModellingErrorModel> {
    if params.len() < 2 {
        return Err(Error::invalid("modelling-error estimation needs at least two samples"));
    }
    ModellingErrorModel::from_samples(&modelling_error_samples(params, full, cheap)?)
}

/// Standard normal parameter draws for offline estimation.
pub fn prior_parameter_draws(seed: u64, m: usize, count: usize) -> Vec<DVector<f64>> {
    let stream = SeedStream::new(seed, StreamTag::ModelErrorSampling);
    crate::prior::sample_prior_coefficients(&mut stream.rng(&[]), m, count)
}

/// ỹ = y − m, Γ̃ = Γ + Σ.
pub fn apply_correction(
    y: &DVector<f64>,
    gamma: &DMatrix<f64>,
    model: &ModellingErrorModel,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_len("modelling-error mean", y.len(), model.dim())?;
    check_len("noise covariance", y.len(), gamma.nrows())?;
    let yt = y - &model.mean;
    let gt = gamma + &model.cov;
    if Cholesky::new(gt.clone()).is_none() {
        return Err(Error::Numeric("corrected noise covariance is not positive definite".into()));
    }
    Ok((yt, gt))
}

/// Sample count and iteration count of each online level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OnlineSchedule {
    pub levels: Vec<(usize, usize)>,
}

impl OnlineSchedule {
    pub fn new(levels: Vec<(usize, usize)>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("online schedule needs at least one level"));
        }
        if levels.iter().any(|&(ne, n)| ne < 2 || n < 1) {
            return Err(Error::invalid(
                "every online level needs at least two samples and one iteration",
            ));
        }
        Ok(Self { levels })
    }

    /// Splits totals evenly over `levels`, remainders to the first levels.
    pub fn uniform(levels: usize, total_samples: usize, total_iterations: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::invalid("online schedule needs at least one level"));
        }
        let split = |total: usize, l: usize| -> usize { total / levels + usize::from(l < total % levels) };
        Self::new(
            (0..levels)
                .map(|l| (split(total_samples, l), split(total_iterations, l)))
                .collect(),
        )
    }

    pub fn total_iterations(&self) -> usize {
        self.levels.iter().map(|l| l.1).sum()
    }

    pub fn total_samples(&self) -> usize {
        self.levels.iter().map(|l| l.0).sum()
    }
}

#[derive(Debug, Clone)]
pub struct OnlineOutput {
    pub output: EnkfOutput,
    pub models: Vec<ModellingErrorModel>,
}

/// Indices drawn uniformly with replacement for level `level`.
pub fn resample_indices(seed: u64, level: usize, population: usize, count: usize) -> Vec<usize> {
    let mut rng = SeedStream::new(seed, StreamTag::ModelErrorSampling).rng(&[1 + level as u64]);
    (0..count).map(|_| rng.random_range(0..population)).collect()
}

/// Multilevel run: before each level the modelling error is re-estimated
/// from parameters resampled out of the current ensemble, then the level's
/// iterations run against the corrected data. Any model in `config` is
/// ignored.
pub fn run_online(
    config: &KalmanConfig,
    schedule: &OnlineSchedule,
    full: &dyn ForwardModel,
    cheap: &dyn ForwardModel,
    y: &DVector<f64>,
    noise: &NoiseModel,
    initial: Ensemble,
) -> Result<OnlineOutput> {
    let mut ensemble = initial;
    let mut models = Vec::with_capacity(schedule.levels.len());
    let mut diagnostics = Vec::new();
    let mut history = Vec::new();
    let mut offset = config.first_iteration;
    let mut last = None;
    for (level, &(ne, iters)) in schedule.levels.iter().enumerate() {
        let idx = resample_indices(config.seed, level, ensemble.size(), ne);
        let params: Vec<DVector<f64>> = idx.iter().map(|&i| ensemble.particles[i].clone()).collect();
        let model = estimate_offline(&params, full, cheap)?;
        let mut cfg = config.clone();
        cfg.iterations = iters;
        cfg.first_iteration = offset;
        cfg.model_error = Some(model.clone());
        let out = run_enkf(&cfg, cheap, y, noise, ensemble)?;
        let skip = usize::from(level > 0);
        diagnostics.extend_from_slice(&out.diagnostics[skip..]);
        history.extend(out.history.iter().cloned());
        ensemble = out.ensemble.clone();
        offset += iters;
        models.push(model);
        last = Some(out);
    }
    let mut output = last.expect("at least one level");
    output.diagnostics = diagnostics;
    output.history = history;
    Ok(OnlineOutput { output, models })
}

fn check_bound_inputs(eta: f64, alpha: f64, l: usize, c_e: f64, eps: f64, h: f64) -> Result<()> {
    if !(eta > 0.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "sample-size bound needs η > 0 and α ∈ (0, 1), got η = {eta}, α = {alpha}"
        )));
    }
    if l == 0 || !(c_e >= 0.0) || !(eps >= 0.0) || !(h >= 0.0) {
        return Err(Error::invalid("sample-size bound needs L ≥ 1 and non-negative C_E, ε, h"));
    }
    Ok(())
}

fn ceil_count(x: f64) -> usize {
    if x.is_finite() {
        (x.ceil() as usize).max(2)
    } else {
        usize::MAX
    }
}

/// Real-valued sample count 4 C_E² (L/η²) log(2L/α) (ε² + h^{2(s+1)}).
pub fn sample_size_mean_bound(eta: f64, alpha: f64, l: usize, c_e: f64, eps: f64, h: f64, s: u32) -> Result<f64> {
    check_bound_inputs(eta, alpha, l, c_e, eps, h)?;
    let lf = l as f64;
    Ok(4.0 * c_e.powi(2) * (lf / (eta * eta)) * (2.0 * lf / alpha).ln()
        * (eps * eps + h.powi(2 * (s as i32 + 1))))
}

/// Samples needed for ‖m − m*‖ ≤ η with probability ≥ 1 − α (at least 2).
pub fn sample_size_mean(eta: f64, alpha: f64, l: usize, c_e: f64, eps: f64, h: f64, s: u32) -> Result<usize> {
    Ok(ceil_count(sample_size_mean_bound(eta, alpha, l, c_e, eps, h, s)?))
}

/// Real-valued sample count 2304 C_E⁴ (L²/η²) log(2L²/α) (ε⁴ + h^{4(s+1)}).
pub fn sample_size_cov_bound(eta: f64, alpha: f64, l: usize, c_e: f64, eps: f64, h: f64, s: u32) -> Result<f64> {
    check_bound_inputs(eta, alpha, l, c_e, eps, h)?;
    let l2 = (l * l) as f64;
    Ok(2304.0 * c_e.powi(4) * (l2 / (eta * eta)) * (2.0 * l2 / alpha).ln()
        * (eps.powi(4) + h.powi(4 * (s as i32 + 1))))
}

/// Samples needed for ‖Σ − Σ*‖ ≤ η with probability ≥ 1 − α (at least 2).
pub fn sample_size_cov(eta: f64, alpha: f64, l: usize, c_e: f64, eps: f64, h: f64, s: u32) -> Result<usize> {
    Ok(ceil_count(sample_size_cov_bound(eta, alpha, l, c_e, eps, h, s)?))
}

/// max_i ‖𝓔_i‖₂ / (ε + h^{s+1}) over a pilot batch.
pub fn pilot_constant(errors: &[DVector<f64>], eps: f64, h: f64, s: u32) -> f64 {
    let scale = eps + h.powi(s as i32 + 1);
    errors.iter().map(|e| e.norm()).fold(0.0, f64::max) / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enkf::{LinearForward, Mode};
    use rand_distr::StandardNormal;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn forward(seed: f64) -> LinearForward {
        LinearForward::new(DMatrix::from_fn(3, 2, |i, j| ((i * 2 + j) as f64 + seed).cos()))
    }

    #[test]
    fn identical_operators_give_zero_model() {
        let g = forward(0.0);
        let params = prior_parameter_draws(1, 2, 5);
        let m = estimate_offline(&params, &g, &g).unwrap();
        assert_eq!(m.mean, DVector::zeros(3));
        assert_eq!(m.cov, DMatrix::zeros(3, 3));
    }

    #[test]
    fn constant_shift_gives_mean_only() {
        let g = forward(0.0);
        let mut shifted = g.clone();
        shifted.offset = DVector::from_row_slice(&[0.5, -1.0, 2.0]);
        let params = prior_parameter_draws(2, 2, 7);
        let m = estimate_offline(&params, &shifted, &g).unwrap();
        assert!((&m.mean - &shifted.offset).abs().max() < 1e-12);
        assert!(m.cov.abs().max() < 1e-24);
        assert!(estimate_offline(&params[..1], &shifted, &g).is_err());
    }

    #[test]
    fn synthetic_gaussian_errors_converge() {
        let mstar = DVector::from_row_slice(&[0.3, -0.2]);
        let lchol = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.2, 0.3]);
        let sstar = &lchol * lchol.transpose();
        let mut rng = SeedStream::new(5, StreamTag::Study).rng(&[]);
        let mut errs = Vec::new();
        for n in [100usize, 10_000] {
            let draws: Vec<DVector<f64>> = (0..n)
                .map(|_| &mstar + &lchol * DVector::from_fn(2, |_, _| rng.sample(StandardNormal)))
                .collect();
            let m = ModellingErrorModel::from_samples(&draws).unwrap();
            let scale = 4.0 / (n as f64).sqrt();
            assert!((&m.mean - &mstar).norm() <= scale);
            assert!((&m.cov - &sstar).norm() <= scale);
            errs.push((&m.mean - &mstar).norm() + (&m.cov - &sstar).norm());
            assert!(m.skewness.iter().all(|s| s.abs() < 1.0));
        }
        assert!(errs[1] < errs[0]);
    }

    #[test]
    fn correction_trivial_cases() {
        let y = DVector::from_row_slice(&[1.0, 2.0]);
        let gamma = DMatrix::identity(2, 2) * 0.01;
        let (yt, gt) = apply_correction(&y, &gamma, &ModellingErrorModel::zero(2)).unwrap();
        assert_eq!((yt, gt), (y.clone(), gamma.clone()));
        let mut model = ModellingErrorModel::zero(2);
        model.mean = y.clone();
        model.cov = gamma.clone();
        let (yt, gt) = apply_correction(&y, &gamma, &model).unwrap();
        assert_eq!(yt, DVector::zeros(2));
        assert_eq!(gt, &gamma * 2.0);
    }

    #[test]
    fn model_csv_round_trip() {
        let draws: Vec<DVector<f64>> = (0..5).map(|i| DVector::from_row_slice(&[i as f64, (i * i) as f64 * 0.1])).collect();
        let m = ModellingErrorModel::from_samples(&draws).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        m.write_csv(&mut a, &mut b).unwrap();
        let back = ModellingErrorModel::read_csv(a.as_slice(), b.as_slice(), 5).unwrap();
        assert!((back.mean - &m.mean).abs().max() < 1e-15);
        assert!((back.cov - &m.cov).abs().max() < 1e-15);
    }

    #[test]
    fn sample_size_examples() {
        assert_eq!(sample_size_mean(0.1, 0.1, 12, 1.0, 0.0, 0.0, 1).unwrap(), 2);
        assert_eq!(sample_size_cov(0.1, 0.1, 12, 1.0, 0.0, 0.0, 1).unwrap(), 2);
        let a = sample_size_mean_bound(0.1, 0.1, 12, 1.0, 0.1, 0.0, 1).unwrap();
        let b = sample_size_mean_bound(0.1, 0.1, 12, 1.0, 0.2, 0.0, 1).unwrap();
        assert!((b / a - 4.0).abs() < 1e-12);
        let a = sample_size_cov_bound(0.1, 0.1, 12, 1.0, 0.1, 0.0, 1).unwrap();
        let b = sample_size_cov_bound(0.1, 0.1, 12, 1.0, 0.2, 0.0, 1).unwrap();
        assert!((b / a - 16.0).abs() < 1e-12);
        assert!(sample_size_mean(0.0, 0.1, 12, 1.0, 0.1, 0.1, 1).is_err());
        assert!(sample_size_mean(0.1, 1.0, 12, 1.0, 0.1, 0.1, 1).is_err());
        assert!(sample_size_cov(0.1, 0.0, 12, 1.0, 0.1, 0.1, 1).is_err());
    }

    #[test]
    fn sample_size_regression_values() {
        let mean = sample_size_mean(0.1, 0.1, 12, 1.0, 0.25, 1.0 / 16.0, 1).unwrap();
        let cov = sample_size_cov(0.1, 0.1, 12, 1.0, 0.25, 1.0 / 16.0, 1).unwrap();
        assert_eq!(mean, 1645);
        assert_eq!(cov, 1_032_335);
        assert!(cov > mean);
    }

    #[test]
    fn schedule_construction() {
        let s = OnlineSchedule::uniform(5, 20, 500).unwrap();
        assert_eq!(s.levels, vec![(4, 100); 5]);
        let s = OnlineSchedule::uniform(3, 11, 10).unwrap();
        assert_eq!(s.levels, vec![(4, 4), (4, 3), (3, 3)]);
        assert!(OnlineSchedule::uniform(3, 5, 10).is_err());
        assert!(OnlineSchedule::new(vec![]).is_err());
    }

    struct Counting<'a> {
        inner: &'a LinearForward,
        calls: AtomicUsize,
    }

    impl ForwardModel for Counting<'_> {
        fn input_dim(&self) -> usize {
            self.inner.input_dim()
        }
        fn output_dim(&self) -> usize {
            self.inner.output_dim()
        }
        fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.inner.evaluate(u)
        }
    }

    fn initial(seed: u64, j: usize) -> Ensemble {
        let s = SeedStream::new(seed, StreamTag::InitialEnsemble);
        Ensemble::new(crate::prior::sample_prior_coefficients(&mut s.rng(&[]), 2, j)).unwrap()
    }

    #[test]
    fn online_schedule_counts_full_solves() {
        let cheap = forward(0.0);
        let full_inner = forward(0.1);
        let full = Counting {
            inner: &full_inner,
            calls: AtomicUsize::new(0),
        };
        let noise = NoiseModel::isotropic(0.1, 3).unwrap();
        let y = DVector::from_row_slice(&[0.2, 0.1, -0.3]);
        let cfg = KalmanConfig::new(500, Mode::PointEstimate, 4);
        let sched = OnlineSchedule::new(vec![(4, 100); 5]).unwrap();
        let out = run_online(&cfg, &sched, &full, &cheap, &y, &noise, initial(1, 10)).unwrap();
        assert_eq!(full.calls.load(Ordering::Relaxed), 20);
        assert_eq!(out.models.len(), 5);
        assert_eq!(out.output.diagnostics.len(), 501);
        assert_eq!(out.output.diagnostics.last().unwrap().iter, 500);
    }

    #[test]
    fn online_with_exact_surrogate_equals_plain_run() {
        let g = forward(0.0);
        let noise = NoiseModel::isotropic(0.1, 3).unwrap();
        let y = DVector::from_row_slice(&[0.2, 0.1, -0.3]);
        let cfg = KalmanConfig::new(12, Mode::PointEstimate, 8);
        let sched = OnlineSchedule::new(vec![(3, 4), (2, 5), (4, 3)]).unwrap();
        let online = run_online(&cfg, &sched, &g, &g, &y, &noise, initial(2, 8)).unwrap();
        assert!(online.models.iter().all(|m| m.mean.iter().all(|v| *v == 0.0) && m.cov.iter().all(|v| *v == 0.0)));
        let plain = run_enkf(&cfg, &g, &y, &noise, initial(2, 8)).unwrap();
        assert_eq!(online.output.ensemble.particles, plain.ensemble.particles);
    }

    #[test]
    fn single_level_equals_offline_then_plain_run() {
        let cheap = forward(0.0);
        let full = forward(0.3);
        let noise = NoiseModel::isotropic(0.1, 3).unwrap();
        let y = DVector::from_row_slice(&[0.2, 0.1, -0.3]);
        let cfg = KalmanConfig::new(6, Mode::Bayesian, 3);
        let sched = OnlineSchedule::new(vec![(5, 6)]).unwrap();
        let init = initial(3, 9);
        let online = run_online(&cfg, &sched, &full, &cheap, &y, &noise, init.clone()).unwrap();
        let idx = resample_indices(3, 0, 9, 5);
        let params: Vec<_> = idx.iter().map(|&i| init.particles[i].clone()).collect();
        let model = estimate_offline(&params, &full, &cheap).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.model_error = Some(model.clone());
        let plain = run_enkf(&cfg2, &cheap, &y, &noise, init).unwrap();
        assert_eq!(online.models[0], model);
        assert_eq!(online.output.ensemble.particles, plain.ensemble.particles);
    }
}
