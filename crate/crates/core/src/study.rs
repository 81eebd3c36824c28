//! Numerical studies behind the acceptance checks: convergence rates,
//! transport bounds, covariance lemmas, concentration coverage and the
//! linear-Gaussian posterior check.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::enkf::{empirical_covariances, empirical_measure, ensemble_norm, run_enkf, Ensemble, KalmanConfig, LinearForward, Mode, NoiseModel};
use crate::error::{Error, Result};
use crate::fem::{l2_error, FemSpace};
use crate::homogenize::{effective_tensor, CellMesh, EffectiveMap};
use crate::linalg::{min_eigenvalue, spectral_norm};
use crate::model_error::{sample_size_cov, sample_size_mean};
use crate::quadrature::QuadRule;
use crate::rng::{SeedStream, StreamTag};
use crate::scenario::{HomogenizedForward, MacroPrior, MultiscaleForward, ScenarioConfig};
use crate::tensor::Sym2;
use crate::transport::{wasserstein_discrete, wasserstein_upper_bound};

/// Tabular study output.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl StudyReport {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

/// Least-squares slope of log y against log x.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

// ---------------------------------------------------------------- FEM rate

/// Manufactured solution p = sin(πx) sin(πy) + xy with A = diag(1 + x², 1 + y²).
pub mod manufactured {
    use super::*;

    pub fn tensor(x: [f64; 2]) -> Sym2 {
        Sym2::diag(1.0 + x[0] * x[0], 1.0 + x[1] * x[1])
    }

    pub fn solution(x: [f64; 2]) -> f64 {
        (PI * x[0]).sin() * (PI * x[1]).sin() + x[0] * x[1]
    }

    pub fn load(x: [f64; 2]) -> f64 {
        let (s1, c1) = (PI * x[0]).sin_cos();
        let (s2, c2) = (PI * x[1]).sin_cos();
        let px = PI * c1 * s2 + x[1];
        let py = PI * s1 * c2 + x[0];
        let lap = -PI * PI * s1 * s2;
        -(2.0 * x[0] * px + (1.0 + x[0] * x[0]) * lap) - (2.0 * x[1] * py + (1.0 + x[1] * x[1]) * lap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateStudy {
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
}

impl RateStudy {
    fn new(steps: Vec<f64>, errors: Vec<f64>) -> Self {
        let slope = log_log_slope(&steps, &errors);
        Self { steps, errors, slope }
    }

    pub fn report(&self, step_name: &str, lo: f64, hi: f64) -> StudyReport {
        let mut r = StudyReport::new(&[step_name, "error", "slope", "pass"]);
        let pass = self.slope >= lo && self.slope <= hi;
        for (s, e) in self.steps.iter().zip(&self.errors) {
            r.push(vec![fmt(*s), fmt(*e), fmt(self.slope), pass.to_string()]);
        }
        r
    }
}

/// L² error of the P1 solution of the manufactured problem on each mesh.
pub fn fem_rate_study(subdivisions: &[usize]) -> Result<RateStudy> {
    let mut steps = Vec::new();
    let mut errors = Vec::new();
    for &n in subdivisions {
        let space = FemSpace::structured(n)?;
        let rule = QuadRule::ThreePoint;
        let k = space.assemble_with(rule, |_, _, x| manufactured::tensor(x))?;
        let f = space.assemble_load(QuadRule::SixPoint, manufactured::load);
        let sol = space.solve_dirichlet(&k, Some(&f), &manufactured::solution)?;
        steps.push(1.0 / n as f64);
        errors.push(l2_error(&sol, manufactured::solution));
    }
    Ok(RateStudy::new(steps, errors))
}

// ---------------------------------------------------------- homogenization

/// Layered tensor diag(2 + cos²(2πy₁), 1 + ½ sin(2πy₁)).
pub fn laminate_tensor(y: [f64; 2]) -> Sym2 {
    let c = (2.0 * PI * y[0]).cos();
    Sym2::diag(2.0 + c * c, 1.0 + 0.5 * (2.0 * PI * y[0]).sin())
}

/// Closed form: harmonic mean √6 across the layers, arithmetic mean 1 along them.
pub fn laminate_exact() -> Sym2 {
    Sym2::diag(6f64.sqrt(), 1.0)
}

pub fn laminate_study(n_cell: usize) -> Result<(Sym2, Sym2)> {
    let cell = CellMesh::new(n_cell)?;
    Ok((effective_tensor(&laminate_tensor, &cell)?, laminate_exact()))
}

/// e(ε, u) at u = 0 for each ε, with both models solved on h_obs = ε/16.
pub fn homogenization_rate_study(
    base: &ScenarioConfig,
    epsilons: &[f64],
    map: Arc<EffectiveMap>,
) -> Result<RateStudy> {
    let prior = MacroPrior::build(base)?;
    let u = DVector::zeros(base.m);
    let mut errors = Vec::new();
    for &eps in epsilons {
        let n = (16.0 / eps).round() as usize;
        let fine = MultiscaleForward::with_mesh(n, eps, base.k, prior.clone())?;
        let hom = HomogenizedForward::with_mesh(n, base.k, prior.clone(), map.clone())?;
        use crate::enkf::ForwardModel;
        errors.push((fine.evaluate(&u)? - hom.evaluate(&u)?).norm());
    }
    Ok(RateStudy::new(epsilons.to_vec(), errors))
}

// ----------------------------------------------------------- transport

#[derive(Debug, Clone, PartialEq)]
pub struct WassersteinReport {
    pub pairs: usize,
    pub violations: usize,
    /// Largest W − bound seen (negative when every pair is strictly inside).
    pub max_excess: f64,
}

pub const WASSERSTEIN_EXPONENTS: [(f64, f64); 3] = [(1.0, 2.0), (2.0, 2.0), (1.0, f64::INFINITY)];

fn random_ensemble<R: Rng>(rng: &mut R, j: usize, m: usize, scale: f64) -> Ensemble {
    Ensemble::new(
        (0..j)
            .map(|_| DVector::from_fn(m, |_, _| scale * rng.sample::<f64, _>(StandardNormal)))
            .collect(),
    )
    .expect("non-empty")
}

/// Exact W_{p,s} against the identity-coupling bound on random pairs.
pub fn wasserstein_study(pairs: usize, seed: u64, slack: f64) -> Result<WassersteinReport> {
    let stream = SeedStream::new(seed, StreamTag::Study);
    let mut violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for i in 0..pairs {
        let mut rng = stream.rng(&[0x7761, i as u64]);
        let j = rng.random_range(1..=25);
        let m = rng.random_range(1..=6);
        let a = random_ensemble(&mut rng, j, m, 1.0);
        let shift = rng.random_range(0.0..2.0);
        let spread = rng.random_range(0.2..2.0);
        let b = random_ensemble(&mut rng, j, m, spread);
        let b = Ensemble::new(b.particles.into_iter().map(|x| x.add_scalar(shift)).collect())?;
        let (p, s) = WASSERSTEIN_EXPONENTS[i % 3];
        let w = wasserstein_discrete(&empirical_measure(&a), &empirical_measure(&b), p, s)?;
        let bound = wasserstein_upper_bound(&a, &b, p, s)?;
        max_excess = max_excess.max(w - bound);
        if w > bound + slack {
            violations += 1;
        }
    }
    Ok(WassersteinReport {
        pairs,
        violations,
        max_excess,
    })
}

impl WassersteinReport {
    pub fn report(&self) -> StudyReport {
        let mut r = StudyReport::new(&["pairs", "violations", "max_excess", "pass"]);
        r.push(vec![
            self.pairs.to_string(),
            self.violations.to_string(),
            fmt(self.max_excess),
            (self.violations == 0).to_string(),
        ]);
        r
    }
}

// --------------------------------------------------- covariance lemmas

/// Bounds on the empirical covariances of ensembles in B_R(u*).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceBounds {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl CovarianceBounds {
    /// `center_norm` = ‖u*‖, `image_norm` = ‖G(u*)‖, `lipschitz` = C_G.
    pub fn new(radius: f64, center_norm: f64, image_norm: f64, lipschitz: f64, j: usize) -> Self {
        let m = radius + center_norm;
        let big = lipschitz * radius + image_norm;
        let jp = (j + 1) as f64;
        Self {
            c1: 4.0 * big * m,
            c2: 4.0 * big * big,
            c3: 2.0 * jp * (m * lipschitz + big),
            c4: 4.0 * jp * big * lipschitz,
        }
    }
}

/// Violation counts per inequality, in the order C₁, C₂, C₃, C₄,
/// inverse difference, inverse sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub instances: usize,
    pub violations: [usize; 6],
    /// Largest observed lhs/rhs ratio per inequality.
    pub max_ratio: [f64; 6],
}

pub const LEMMA_NAMES: [&str; 6] = [
    "cup_bound",
    "cpp_bound",
    "cup_lipschitz",
    "cpp_lipschitz",
    "inverse_difference",
    "inverse_sum",
];

fn point_in_ball<R: Rng>(rng: &mut R, center: &DVector<f64>, radius: f64) -> DVector<f64> {
    let d = DVector::from_fn(center.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let r = radius * rng.random::<f64>().powf(1.0 / center.len() as f64);
    center + d.normalize() * r
}

fn clamp_to_ball(x: DVector<f64>, center: &DVector<f64>, radius: f64) -> DVector<f64> {
    let d = &x - center;
    let n = d.norm();
    if n <= radius {
        x
    } else {
        center + d * (radius / n)
    }
}

fn random_spd<R: Rng>(rng: &mut R, n: usize, rank: usize, shift: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() + DMatrix::identity(n, n) * shift
}

pub fn lemma_suite(instances: usize, seed: u64) -> Result<LemmaReport> {
    let stream = SeedStream::new(seed, StreamTag::Study);
    let mut violations = [0usize; 6];
    let mut max_ratio = [0f64; 6];
    let mut record = |k: usize, lhs: f64, rhs: f64| {
        if rhs > 0.0 {
            max_ratio[k] = max_ratio[k].max(lhs / rhs);
        }
        if lhs > rhs * (1.0 + 1e-10) + 1e-14 {
            violations[k] += 1;
        }
    };
    for i in 0..instances {
        let mut rng = stream.rng(&[0x6c65, i as u64]);
        let j = rng.random_range(2..=20);
        let m = rng.random_range(1..=5);
        let l = rng.random_range(1..=6);
        let b = DMatrix::from_fn(l, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = DVector::from_fn(l, |_, _| rng.sample::<f64, _>(StandardNormal));
        // G(u) = B tanh(u) + c is Lipschitz with constant ‖B‖₂.
        let g = |u: &DVector<f64>| &b * u.map(f64::tanh) + &c;
        let c_g = spectral_norm(&b);
        let center = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let radius = rng.random_range(0.1..3.0);
        let bounds = CovarianceBounds::new(radius, center.norm(), g(&center).norm(), c_g, j);

        let u1: Vec<_> = (0..j).map(|_| point_in_ball(&mut rng, &center, radius)).collect();
        let step = rng.random_range(1e-3..0.5);
        let u2: Vec<_> = u1
            .iter()
            .map(|x| {
                let d = DVector::from_fn(m, |_, _| step * rng.sample::<f64, _>(StandardNormal));
                clamp_to_ball(x + d, &center, radius)
            })
            .collect();
        let g1: Vec<_> = u1.iter().map(&g).collect();
        let g2: Vec<_> = u2.iter().map(&g).collect();
        let (cup1, cpp1) = empirical_covariances(&u1, &g1)?;
        let (cup2, cpp2) = empirical_covariances(&u2, &g2)?;
        let dist = ensemble_norm(&Ensemble::new(u1)?, &Ensemble::new(u2)?)?;
        record(0, spectral_norm(&cup1), bounds.c1);
        record(1, spectral_norm(&cpp1), bounds.c2);
        record(2, spectral_norm(&(&cup1 - &cup2)), bounds.c3 * dist);
        record(3, spectral_norm(&(&cpp1 - &cpp2)), bounds.c4 * dist);

        let n = rng.random_range(1..=6);
        let (sa, sb) = (rng.random_range(0.01..1.0), rng.random_range(0.01..1.0));
        let a = random_spd(&mut rng, n, n, sa);
        let bm = random_spd(&mut rng, n, n, sb);
        let inv = |x: &DMatrix<f64>| x.clone().cholesky().map(|c| c.inverse()).ok_or_else(|| Error::Numeric("matrix not SPD".into()));
        let (ai, bi) = (inv(&a)?, inv(&bm)?);
        record(4, spectral_norm(&(&ai - &bi)), spectral_norm(&ai) * spectral_norm(&bi) * spectral_norm(&(&a - &bm)));
        let rank = rng.random_range(0..=n);
        let psd = random_spd(&mut rng, n, rank, 0.0);
        debug_assert!(rank == n || min_eigenvalue(&psd) > -1e-10);
        record(5, spectral_norm(&inv(&(&psd + &bm))?), spectral_norm(&bi));
    }
    Ok(LemmaReport {
        instances,
        violations,
        max_ratio,
    })
}

// ---------------------------------------------------- concentration

/// Synthetic modelling errors bounded by `radius` in ‖·‖₂.
#[derive(Debug, Clone)]
pub struct BoundedErrors {
    pub radius: f64,
    center: DVector<f64>,
}

impl BoundedErrors {
    /// Each component is (R/√L)(c_l + U_l)/2 with c_l ∈ [−1, 1] fixed and
    /// U_l uniform on [−1, 1].
    pub fn new(l: usize, radius: f64) -> Self {
        Self {
            radius,
            center: DVector::from_fn(l, |i, _| (1.7 * i as f64 + 0.3).cos()),
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let s = self.radius / (self.dim() as f64).sqrt();
        DVector::from_fn(self.dim(), |i, _| 0.5 * s * (self.center[i] + rng.random_range(-1.0..=1.0)))
    }
}

fn moments(samples: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples.len() as f64;
    let l = samples[0].len();
    let mean = samples.iter().fold(DVector::zeros(l), |a, x| a + x) / n;
    let mut cov = DMatrix::zeros(l, l);
    for x in samples {
        let d = x - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    (mean, cov / (n - 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub kind: &'static str,
    pub l: usize,
    pub samples: usize,
    pub repetitions: usize,
    pub hits: usize,
    pub max_error_norm: f64,
    pub eta: f64,
    pub alpha: f64,
}

impl CoverageReport {
    pub fn coverage(&self) -> f64 {
        self.hits as f64 / self.repetitions as f64
    }

    pub fn passed(&self) -> bool {
        self.coverage() >= 1.0 - self.alpha
    }
}

/// Parameters shared by both coverage checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageSetup {
    pub eta: f64,
    pub alpha: f64,
    pub c_e: f64,
    pub epsilon: f64,
    pub h: f64,
    pub s: u32,
    pub repetitions: usize,
    pub reference_samples: usize,
}

impl Default for CoverageSetup {
    fn default() -> Self {
        Self {
            eta: 0.1,
            alpha: 0.1,
            c_e: 1.0,
            epsilon: 0.25,
            h: 1.0 / 16.0,
            s: 1,
            repetitions: 200,
            reference_samples: 100_000,
        }
    }
}

impl CoverageSetup {
    fn errors(&self, l: usize) -> BoundedErrors {
        BoundedErrors::new(l, self.c_e * (self.epsilon + self.h.powi(self.s as i32 + 1)))
    }
}

/// Coverage of ‖m − m*‖₂ ≤ η with N_E from the mean bound.
pub fn hoeffding_study(setup: &CoverageSetup, l: usize, seed: u64) -> Result<CoverageReport> {
    let n = sample_size_mean(setup.eta, setup.alpha, l, setup.c_e, setup.epsilon, setup.h, setup.s)?;
    coverage_study(setup, l, n, seed, "mean", |s| moments(s).0, |a, b| (a - b).norm())
}

/// Coverage of ‖Σ − Σ*‖₂ ≤ η with N_E from the covariance bound.
pub fn mcdiarmid_study(setup: &CoverageSetup, l: usize, seed: u64) -> Result<CoverageReport> {
    let n = sample_size_cov(setup.eta, setup.alpha, l, setup.c_e, setup.epsilon, setup.h, setup.s)?;
    coverage_study(setup, l, n, seed, "covariance", |s| moments(s).1, |a, b| spectral_norm(&(a - b)))
}

fn coverage_study<T>(
    setup: &CoverageSetup,
    l: usize,
    n: usize,
    seed: u64,
    kind: &'static str,
    stat: impl Fn(&[DVector<f64>]) -> T,
    dist: impl Fn(&T, &T) -> f64,
) -> Result<CoverageReport> {
    if n > 50_000_000 / l.max(1) {
        return Err(Error::invalid(format!("{kind} coverage study would need {n} samples per repetition")));
    }
    let dist_model = setup.errors(l);
    let stream = SeedStream::new(seed, StreamTag::ModelErrorSampling);
    let draw = |key: u64, count: usize| {
        let mut rng = stream.rng(&[key]);
        (0..count).map(|_| dist_model.sample(&mut rng)).collect::<Vec<_>>()
    };
    let reference = stat(&draw(u64::MAX, setup.reference_samples));
    let mut hits = 0;
    let mut max_err = 0f64;
    for r in 0..setup.repetitions {
        let batch = draw(r as u64, n);
        debug_assert!(batch.iter().all(|e| e.norm() <= dist_model.radius * (1.0 + 1e-12)));
        let e = dist(&stat(&batch), &reference);
        max_err = max_err.max(e);
        if e <= setup.eta {
            hits += 1;
        }
    }
    Ok(CoverageReport {
        kind,
        l,
        samples: n,
        repetitions: setup.repetitions,
        hits,
        max_error_norm: max_err,
        eta: setup.eta,
        alpha: setup.alpha,
    })
}

pub fn coverage_report(reports: &[CoverageReport]) -> StudyReport {
    let mut r = StudyReport::new(&[
        "statistic",
        "L",
        "N_E",
        "repetitions",
        "coverage",
        "max_error",
        "eta",
        "alpha",
        "pass",
    ]);
    for c in reports {
        r.push(vec![
            c.kind.to_string(),
            c.l.to_string(),
            c.samples.to_string(),
            c.repetitions.to_string(),
            fmt(c.coverage()),
            fmt(c.max_error_norm),
            fmt(c.eta),
            fmt(c.alpha),
            c.passed().to_string(),
        ]);
    }
    r
}

// ------------------------------------------------------ linear Gaussian

#[derive(Debug, Clone, PartialEq)]
pub struct BayesLinearReport {
    pub ensemble_size: usize,
    /// max_i |ū_i − m_i| / (σ_i/√J).
    pub max_mean_z: f64,
    pub cov_relative_error: f64,
}

impl BayesLinearReport {
    pub fn passed(&self) -> bool {
        self.max_mean_z <= 5.0 && self.cov_relative_error <= 0.1
    }

    pub fn report(&self) -> StudyReport {
        let mut r = StudyReport::new(&["J", "max_mean_z", "cov_relative_error", "pass"]);
        r.push(vec![
            self.ensemble_size.to_string(),
            fmt(self.max_mean_z),
            fmt(self.cov_relative_error),
            self.passed().to_string(),
        ]);
        r
    }
}

/// Conjugate posterior N(m, C) for y = Bu + η, u ~ N(0, I), η ~ N(0, Γ).
pub fn gaussian_posterior(b: &DMatrix<f64>, gamma: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let gi = gamma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("noise covariance not SPD".into()))?
        .inverse();
    let prec = DMatrix::identity(b.ncols(), b.ncols()) + b.transpose() * &gi * b;
    let c = prec
        .cholesky()
        .ok_or_else(|| Error::Numeric("posterior precision not SPD".into()))?
        .inverse();
    let m = &c * b.transpose() * gi * y;
    Ok((m, c))
}

/// Bayesian-mode EnKF on a fixed 3-parameter, 4-observation linear problem.
pub fn bayes_linear_study(j: usize, iterations: usize, seed: u64) -> Result<BayesLinearReport> {
    let b = DMatrix::from_row_slice(4, 3, &[1.0, 0.5, 0.0, 0.0, 1.0, -0.3, 0.4, 0.0, 1.2, -0.6, 0.2, 0.3]);
    let y = DVector::from_row_slice(&[0.8, -0.5, 1.1, 0.2]);
    let noise = NoiseModel::isotropic(0.5, 4)?;
    let (m, c) = gaussian_posterior(&b, noise.covariance(), &y)?;
    let mut rng = SeedStream::new(seed, StreamTag::InitialEnsemble).rng(&[]);
    let initial = Ensemble::new(crate::prior::sample_prior_coefficients(&mut rng, 3, j))?;
    let cfg = KalmanConfig::new(iterations, Mode::Bayesian, seed);
    let out = run_enkf(&cfg, &LinearForward::new(b), &y, &noise, initial)?;
    let (mean, cov) = moments(&out.ensemble.particles);
    let sj = (j as f64).sqrt();
    let max_mean_z = (0..3)
        .map(|i| (mean[i] - m[i]).abs() / (c[(i, i)].sqrt() / sj))
        .fold(0.0, f64::max);
    Ok(BayesLinearReport {
        ensemble_size: j,
        max_mean_z,
        cov_relative_error: (&cov - &c).norm() / c.norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 0.5, 0.25];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((log_log_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn manufactured_load_matches_finite_differences() {
        let x = [0.3, 0.7];
        let h = 1e-4;
        let flux = |x: [f64; 2], d: usize| {
            let mut a = x;
            let mut b = x;
            a[d] += h;
            b[d] -= h;
            let t = manufactured::tensor(x);
            let g = (manufactured::solution(a) - manufactured::solution(b)) / (2.0 * h);
            if d == 0 { t.a11 * g } else { t.a22 * g }
        };
        let mut div = 0.0;
        for d in 0..2 {
            let mut a = x;
            let mut b = x;
            a[d] += h;
            b[d] -= h;
            div += (flux(a, d) - flux(b, d)) / (2.0 * h);
        }
        assert!((manufactured::load(x) + div).abs() < 1e-5);
    }

    #[test]
    fn laminate_exact_values_by_quadrature() {
        let n = 100_000;
        let (mut inv, mut mean) = (0.0, 0.0);
        for q in 0..n {
            let y = [(q as f64 + 0.5) / n as f64, 0.0];
            let a = laminate_tensor(y);
            inv += 1.0 / a.a11;
            mean += a.a22;
        }
        let e = laminate_exact();
        assert!((n as f64 / inv - e.a11).abs() < 1e-9);
        assert!((mean / n as f64 - e.a22).abs() < 1e-9);
    }

    #[test]
    fn bounded_errors_respect_radius() {
        let d = BoundedErrors::new(7, 0.3);
        let mut rng = SeedStream::new(0, StreamTag::Study).rng(&[]);
        for _ in 0..1000 {
            assert!(d.sample(&mut rng).norm() <= 0.3);
        }
    }

    #[test]
    fn posterior_formula_scalar() {
        let b = DMatrix::from_element(1, 1, 2.0);
        let g = DMatrix::from_element(1, 1, 0.25);
        let (m, c) = gaussian_posterior(&b, &g, &DVector::from_element(1, 1.0)).unwrap();
        assert!((c[(0, 0)] - 1.0 / 17.0).abs() < 1e-15);
        assert!((m[0] - 8.0 / 17.0).abs() < 1e-15);
    }

    #[test]
    fn small_studies_run() {
        assert_eq!(wasserstein_study(30, 1, 1e-9).unwrap().violations, 0);
        let l = lemma_suite(30, 2).unwrap();
        assert_eq!(l.violations, [0; 6]);
        let r = fem_rate_study(&[4, 8]).unwrap();
        assert!(r.errors[1] < r.errors[0]);
        let mut buf = Vec::new();
        r.report("h", 1.8, 2.2).write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("h,error,slope,pass\n"));
    }
}
