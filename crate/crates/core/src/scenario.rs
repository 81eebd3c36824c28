//! The benchmark problem: a locally periodic tensor driven by a slow field
//! σ, recovered from boundary-flux data for a few Dirichlet conditions.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::enkf::{check_len, ForwardModel};
use crate::error::{ConfigError, Error, Result};
use crate::fem::{FemSolution, FemSpace};
use crate::flux::{AlignmentPolicy, FluxOperator, FluxWeight};
use crate::homogenize::{CellMesh, EffectiveMap, HomogenizedMap, RangePolicy};
use crate::mesh::{build_structured_mesh, Side, TriMesh};
use crate::prior::{build_covariance, kl_decompose, kl_expand, KLBasis};
use crate::quadrature::QuadRule;
use crate::rng::{SeedStream, StreamTag};
use crate::tensor::Sym2;

/// Number of observation segments.
pub const SEGMENTS: usize = 12;
const INTERVALS: [(f64, f64); 3] = [(0.1, 0.3), (0.4, 0.6), (0.7, 0.9)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelErrorMode {
    #[default]
    None,
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

/// All constants of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub epsilon: f64,
    pub h_obs: f64,
    pub h: f64,
    pub k: usize,
    pub i: usize,
    pub gamma: f64,
    pub delta: f64,
    pub lambda: f64,
    pub m: usize,
    pub j: usize,
    pub n: usize,
    pub seed: u64,
    pub sigma_minus: f64,
    pub sigma_plus: f64,
    pub mode: crate::enkf::Mode,
    pub model_error: ModelErrorMode,
    pub n_e: usize,
    pub levels: usize,
}

const KEYS: [&str; 18] = [
    "epsilon",
    "h_obs",
    "h",
    "K",
    "I",
    "gamma",
    "delta",
    "lambda",
    "M",
    "J",
    "N",
    "seed",
    "sigma_minus",
    "sigma_plus",
    "mode",
    "model_error",
    "N_E",
    "levels",
];

const REQUIRED: [&str; 7] = ["epsilon", "h_obs", "h", "gamma", "J", "N", "seed"];

impl ScenarioConfig {
    pub fn preset(p: Preset) -> Self {
        let base = Self {
            epsilon: 1.0 / 16.0,
            h_obs: 1.0 / 256.0,
            h: 1.0 / 16.0,
            k: 3,
            i: SEGMENTS,
            gamma: 0.01,
            delta: 0.05,
            lambda: 0.5,
            m: 64,
            j: 200,
            n: 100,
            seed: 1,
            sigma_minus: 0.9f64.ln() - 0.5,
            sigma_plus: 1.6f64.ln() + 0.5,
            mode: crate::enkf::Mode::PointEstimate,
            model_error: ModelErrorMode::None,
            n_e: 20,
            levels: 5,
        };
        match p {
            Preset::Desk => base,
            Preset::Paper => Self {
                epsilon: 1.0 / 64.0,
                h_obs: 1.0 / 4096.0,
                h: 1.0 / 32.0,
                m: 100,
                j: 1000,
                n: 500,
                ..base
            },
        }
    }

    /// Parses `key = value` lines; keys missing from the text (other than
    /// the required ones) keep their value from `base`.
    pub fn parse(text: &str, base: &ScenarioConfig) -> std::result::Result<Self, ConfigError> {
        let mut seen = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: ln + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(ConfigError::Syntax { line: ln + 1 });
            }
            if !KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey(k.to_string()));
            }
            seen.insert(k.to_string(), v.to_string());
        }
        for key in REQUIRED {
            if !seen.contains_key(key) {
                return Err(ConfigError::MissingKey(key.to_string()));
            }
        }
        let mut cfg = base.clone();
        for (k, v) in &seen {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        let real = || parse_real(value).ok_or_else(|| bad("expected a number or fraction"));
        let int = || value.parse::<usize>().map_err(|_| bad("expected a non-negative integer"));
        match key {
            "epsilon" => self.epsilon = real()?,
            "h_obs" => self.h_obs = real()?,
            "h" => self.h = real()?,
            "K" => self.k = int()?,
            "I" => self.i = int()?,
            "gamma" => self.gamma = real()?,
            "delta" => self.delta = real()?,
            "lambda" => self.lambda = real()?,
            "M" => self.m = int()?,
            "J" => self.j = int()?,
            "N" => self.n = int()?,
            "seed" => self.seed = value.parse().map_err(|_| bad("expected an unsigned integer"))?,
            "sigma_minus" => self.sigma_minus = real()?,
            "sigma_plus" => self.sigma_plus = real()?,
            "mode" => {
                self.mode = match value {
                    "point" | "point_estimate" => crate::enkf::Mode::PointEstimate,
                    "bayes" | "bayesian" => crate::enkf::Mode::Bayesian,
                    _ => return Err(bad("expected point or bayes")),
                }
            }
            "model_error" => {
                self.model_error = match value {
                    "none" => ModelErrorMode::None,
                    "offline" => ModelErrorMode::Offline,
                    "online" => ModelErrorMode::Online,
                    _ => return Err(bad("expected none, offline or online")),
                }
            }
            "N_E" => self.n_e = int()?,
            "levels" => self.levels = int()?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        let inc = |m: String| Err(ConfigError::Inconsistent(m));
        for (name, v) in [("h", self.h), ("h_obs", self.h_obs)] {
            if subdivisions(v).is_none() {
                return inc(format!("{name} = {v} must be the reciprocal of a positive integer"));
            }
        }
        if !(self.epsilon > 0.0) {
            return inc("epsilon must be positive".into());
        }
        if self.h_obs > self.epsilon / 8.0 + 1e-12 {
            return inc(format!(
                "h_obs = {} does not resolve the micro scale (needs h_obs ≤ epsilon/8 = {})",
                self.h_obs,
                self.epsilon / 8.0
            ));
        }
        if self.i != SEGMENTS {
            return inc(format!("the observation layout has {SEGMENTS} segments, got I = {}", self.i));
        }
        if self.k == 0 {
            return inc("K must be at least 1".into());
        }
        if !(self.gamma > 0.0) || !(self.delta > 0.0) || !(self.lambda > 0.0) {
            return inc("gamma, delta and lambda must be positive".into());
        }
        let nh = (self.macro_n() + 1).pow(2);
        if self.m == 0 || self.m > nh {
            return inc(format!("M = {} must lie in [1, {nh}] for this macro mesh", self.m));
        }
        if self.j < 2 || self.n == 0 {
            return inc("need J ≥ 2 and N ≥ 1".into());
        }
        if !(self.sigma_minus < self.sigma_plus) {
            return inc("sigma_minus must be below sigma_plus".into());
        }
        if self.model_error != ModelErrorMode::None && self.n_e < 2 {
            return inc("N_E must be at least 2".into());
        }
        if self.model_error == ModelErrorMode::Online
            && (self.levels == 0 || self.n_e < 2 * self.levels || self.n < self.levels)
        {
            return inc("online estimation needs levels ≥ 1, N_E ≥ 2·levels and N ≥ levels".into());
        }
        Ok(())
    }

    pub fn macro_n(&self) -> usize {
        subdivisions(self.h).expect("validated h")
    }

    pub fn fine_n(&self) -> usize {
        subdivisions(self.h_obs).expect("validated h_obs")
    }

    pub fn observation_dim(&self) -> usize {
        self.i * self.k
    }

    /// Canonical `key = value` text, stable across runs.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mode = match self.mode {
            crate::enkf::Mode::PointEstimate => "point",
            crate::enkf::Mode::Bayesian => "bayes",
        };
        let me = match self.model_error {
            ModelErrorMode::None => "none",
            ModelErrorMode::Offline => "offline",
            ModelErrorMode::Online => "online",
        };
        let _ = writeln!(s, "epsilon = {:e}", self.epsilon);
        let _ = writeln!(s, "h_obs = {:e}", self.h_obs);
        let _ = writeln!(s, "h = {:e}", self.h);
        let _ = writeln!(s, "K = {}", self.k);
        let _ = writeln!(s, "I = {}", self.i);
        let _ = writeln!(s, "gamma = {:e}", self.gamma);
        let _ = writeln!(s, "delta = {:e}", self.delta);
        let _ = writeln!(s, "lambda = {:e}", self.lambda);
        let _ = writeln!(s, "M = {}", self.m);
        let _ = writeln!(s, "J = {}", self.j);
        let _ = writeln!(s, "N = {}", self.n);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "sigma_minus = {:e}", self.sigma_minus);
        let _ = writeln!(s, "sigma_plus = {:e}", self.sigma_plus);
        let _ = writeln!(s, "mode = {mode}");
        let _ = writeln!(s, "model_error = {me}");
        let _ = writeln!(s, "N_E = {}", self.n_e);
        let _ = writeln!(s, "levels = {}", self.levels);
        s
    }
}

fn parse_real(v: &str) -> Option<f64> {
    let x = match v.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?,
        None => v.parse::<f64>().ok()?,
    };
    x.is_finite().then_some(x)
}

/// n with n·h = 1, if h is the reciprocal of a positive integer.
pub fn subdivisions(h: f64) -> Option<usize> {
    if !(h > 0.0 && h <= 1.0) {
        return None;
    }
    let n = (1.0 / h).round();
    ((n * h - 1.0).abs() < 1e-9).then_some(n as usize)
}

/// log(1.3 + 0.3·1_{D1} − 0.4·1_{D2}).
pub fn truth_sigma(x: [f64; 2]) -> f64 {
    let in_disc = |c: [f64; 2]| (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) <= 0.025;
    let mut v = 1.3;
    if in_disc([5.0 / 16.0, 11.0 / 16.0]) {
        v += 0.3;
    }
    if in_disc([11.0 / 16.0, 5.0 / 16.0]) {
        v -= 0.4;
    }
    f64::ln(v)
}

/// Oscillating factors at cell coordinate y.
#[derive(Debug, Clone, Copy)]
struct CellFactors {
    b11: f64,
    c11: f64,
    b22: f64,
    c22: f64,
}

impl CellFactors {
    fn at(y: [f64; 2]) -> Self {
        let c1 = (2.0 * PI * y[0]).cos();
        let c2 = (2.0 * PI * y[1]).cos();
        Self {
            b11: c1 * c1 + 1.0,
            c11: c2 * c2,
            b22: (2.0 * PI * y[1]).sin() + 2.0,
            c22: c1 * c1,
        }
    }

    fn tensor(&self, t: f64) -> Sym2 {
        let e = t.exp();
        Sym2::diag(e * self.b11 + self.c11, e * self.b22 + self.c22)
    }
}

/// A(t, y) with y the cell coordinate.
pub fn multiscale_tensor(t: f64, y: [f64; 2]) -> Sym2 {
    CellFactors::at(y).tensor(t)
}

/// g_k(x) = kπ·√2·sin(kπ x₁), k = 1..=count.
pub fn dirichlet_data(k: usize, count: usize) -> Result<impl Fn([f64; 2]) -> f64 + Sync + Copy> {
    if k == 0 || k > count {
        return Err(Error::invalid(format!("Dirichlet datum index {k} outside 1..={count}")));
    }
    let kf = k as f64;
    Ok(move |x: [f64; 2]| kf * PI * 2f64.sqrt() * (kf * PI * x[0]).sin())
}

/// Three hats per side in the order bottom, right, top, left.
pub fn observation_layout() -> Vec<FluxWeight> {
    Side::ALL
        .iter()
        .flat_map(|&side| {
            INTERVALS
                .iter()
                .map(move |&(a, b)| FluxWeight::new(side, a, b).expect("valid interval"))
        })
        .collect()
}

/// Prior on the macro mesh nodes and its KL basis.
#[derive(Debug, Clone)]
pub struct MacroPrior {
    pub mesh: Arc<TriMesh>,
    pub basis: Arc<KLBasis>,
}

impl MacroPrior {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self> {
        let mesh = Arc::new(build_structured_mesh(cfg.macro_n())?);
        let cov = build_covariance(mesh.nodes(), cfg.delta, cfg.lambda)?;
        let basis = kl_decompose(&cov, cfg.m, DVector::zeros(mesh.num_nodes()))?;
        Ok(Self {
            mesh,
            basis: Arc::new(basis),
        })
    }

    /// Nodal σ for coefficients u.
    pub fn sigma(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        kl_expand(&self.basis, u)
    }

    pub fn sigma_field(&self, u: &DVector<f64>) -> Result<FemSolution> {
        FemSolution::from_values(self.mesh.clone(), self.sigma(u)?.as_slice().to_vec())
    }
}

/// Per-quadrature-point location in the macro mesh.
#[derive(Debug)]
struct MacroLookup {
    points: Vec<(u32, [f64; 3])>,
}

impl MacroLookup {
    fn new(space: &FemSpace, macro_mesh: &TriMesh, rule: QuadRule) -> Self {
        let mesh = space.mesh();
        let nq = rule.len();
        let mut points = Vec::with_capacity(mesh.num_triangles() * nq);
        for t in 0..mesh.num_triangles() {
            for (bary, _) in rule.points() {
                let (mt, mb) = macro_mesh.locate(mesh.point(t, *bary));
                points.push((mt as u32, mb));
            }
        }
        Self { points }
    }

    fn sigma(&self, macro_mesh: &TriMesh, nodal: &[f64], idx: usize) -> f64 {
        let (t, b) = self.points[idx];
        let tri = macro_mesh.triangles()[t as usize];
        b[0] * nodal[tri[0]] + b[1] * nodal[tri[1]] + b[2] * nodal[tri[2]]
    }
}

/// Solves for every Dirichlet datum and returns fluxes ordered l = k·I + i.
fn observe_all(space: &FemSpace, flux: &FluxOperator, k: &crate::linalg::SparseMatrix, count: usize) -> Result<DVector<f64>> {
    let data: Vec<_> = (1..=count)
        .map(|kk| dirichlet_data(kk, count))
        .collect::<Result<_>>()?;
    let refs: Vec<&dyn Fn([f64; 2]) -> f64> = data.iter().map(|g| g as &dyn Fn([f64; 2]) -> f64).collect();
    let sols = space.solve_dirichlet_many(k, None, &refs)?;
    let mut out = Vec::with_capacity(count * flux.len());
    for s in &sols {
        out.extend(flux.apply(s));
    }
    Ok(DVector::from_vec(out))
}

/// Fine-mesh solves with the oscillating tensor A(σ(x), x/ε).
#[derive(Debug)]
pub struct MultiscaleForward {
    space: FemSpace,
    flux: FluxOperator,
    epsilon: f64,
    count: usize,
    prior: MacroPrior,
    lookup: MacroLookup,
    rule: QuadRule,
}

impl MultiscaleForward {
    pub fn new(cfg: &ScenarioConfig, prior: MacroPrior) -> Result<Self> {
        Self::with_mesh(cfg.fine_n(), cfg.epsilon, cfg.k, prior)
    }

    pub fn with_mesh(n: usize, epsilon: f64, count: usize, prior: MacroPrior) -> Result<Self> {
        let space = FemSpace::structured(n)?;
        let flux = FluxOperator::new(space.mesh(), &observation_layout(), AlignmentPolicy::Interpolate)?;
        let rule = QuadRule::ThreePoint;
        let lookup = MacroLookup::new(&space, &prior.mesh, rule);
        Ok(Self {
            space,
            flux,
            epsilon,
            count,
            prior,
            lookup,
            rule,
        })
    }

    pub fn space(&self) -> &FemSpace {
        &self.space
    }

    /// Observations for an arbitrary slow field given pointwise.
    pub fn observe_field(&self, sigma: impl Fn([f64; 2]) -> f64) -> Result<DVector<f64>> {
        let eps = self.epsilon;
        let k = self.space.assemble_with(self.rule, |_, _, x| {
            CellFactors::at([x[0] / eps, x[1] / eps]).tensor(sigma(x))
        })?;
        observe_all(&self.space, &self.flux, &k, self.count)
    }

    fn observe_nodal(&self, nodal: &[f64]) -> Result<DVector<f64>> {
        let eps = self.epsilon;
        let nq = self.rule.len();
        let k = self.space.assemble_with(self.rule, |t, q, x| {
            let s = self.lookup.sigma(&self.prior.mesh, nodal, t * nq + q);
            CellFactors::at([x[0] / eps, x[1] / eps]).tensor(s)
        })?;
        observe_all(&self.space, &self.flux, &k, self.count)
    }
}

impl ForwardModel for MultiscaleForward {
    fn input_dim(&self) -> usize {
        self.prior.basis.truncation()
    }

    fn output_dim(&self) -> usize {
        self.count * self.flux.len()
    }

    fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("KL coefficients", self.input_dim(), u.len())?;
        let s = self.prior.sigma(u)?;
        self.observe_nodal(s.as_slice())
    }
}

/// Surrogate solves with the tabulated effective tensor A⁰(σ(x)).
#[derive(Debug)]
pub struct HomogenizedForward {
    space: FemSpace,
    flux: FluxOperator,
    map: Arc<EffectiveMap>,
    count: usize,
    prior: MacroPrior,
    lookup: MacroLookup,
    rule: QuadRule,
}

impl HomogenizedForward {
    pub fn new(cfg: &ScenarioConfig, prior: MacroPrior, map: Arc<EffectiveMap>) -> Result<Self> {
        Self::with_mesh(cfg.macro_n(), cfg.k, prior, map)
    }

    pub fn with_mesh(n: usize, count: usize, prior: MacroPrior, map: Arc<EffectiveMap>) -> Result<Self> {
        let space = FemSpace::structured(n)?;
        let flux = FluxOperator::new(space.mesh(), &observation_layout(), AlignmentPolicy::Interpolate)?;
        let rule = QuadRule::ThreePoint;
        let lookup = MacroLookup::new(&space, &prior.mesh, rule);
        Ok(Self {
            space,
            flux,
            map,
            count,
            prior,
            lookup,
            rule,
        })
    }

    pub fn map(&self) -> &EffectiveMap {
        &self.map
    }

    pub fn space(&self) -> &FemSpace {
        &self.space
    }

    /// Observations for a slow field given pointwise.
    pub fn observe_field(&self, sigma: impl Fn([f64; 2]) -> f64) -> Result<DVector<f64>> {
        let mut err = None;
        let k = self.space.assemble_with(self.rule, |_, _, x| match self.map.eval(sigma(x)) {
            Ok(a) => a,
            Err(e) => {
                err.get_or_insert(e);
                Sym2::IDENTITY
            }
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        observe_all(&self.space, &self.flux, &k, self.count)
    }
}

impl ForwardModel for HomogenizedForward {
    fn input_dim(&self) -> usize {
        self.prior.basis.truncation()
    }

    fn output_dim(&self) -> usize {
        self.count * self.flux.len()
    }

    fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("KL coefficients", self.input_dim(), u.len())?;
        let s = self.prior.sigma(u)?;
        let nq = self.rule.len();
        let mut err = None;
        let k = self.space.assemble_with(self.rule, |t, q, _| {
            let sv = self.lookup.sigma(&self.prior.mesh, s.as_slice(), t * nq + q);
            match self.map.eval(sv) {
                Ok(a) => a,
                Err(e) => {
                    err.get_or_insert(e);
                    Sym2::IDENTITY
                }
            }
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        observe_all(&self.space, &self.flux, &k, self.count)
    }
}

/// Effective-tensor table over [σ⁻ − 0.1, σ⁺ + 0.1].
pub fn build_homogenized_map(cfg: &ScenarioConfig, n_cell: usize, points: usize) -> Result<HomogenizedMap> {
    let cell = CellMesh::new(n_cell)?;
    HomogenizedMap::build(
        multiscale_tensor,
        cfg.sigma_minus - 0.1,
        cfg.sigma_plus + 0.1,
        points,
        &cell,
    )
}

/// Wraps a table of the scenario tensor with the given range policy;
/// extensions use cells with `n_cell` subdivisions.
pub fn effective_map(table: HomogenizedMap, policy: RangePolicy, n_cell: usize) -> Result<EffectiveMap> {
    Ok(match policy {
        RangePolicy::Strict => EffectiveMap::fixed(table),
        RangePolicy::Extend => EffectiveMap::extendable(table, multiscale_tensor, CellMesh::new(n_cell)?),
    })
}

/// Synthetic data and the noiseless vector it was drawn around.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub y: DVector<f64>,
    pub noiseless: DVector<f64>,
    pub gamma: f64,
}

impl Observations {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_vector_csv(w, &self.y)
    }
}

pub fn write_vector_csv<W: Write>(w: W, v: &DVector<f64>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["index", "value"])?;
    for (i, x) in v.iter().enumerate() {
        out.write_record(&[i.to_string(), format!("{x:e}")])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_vector_csv<R: std::io::Read>(r: R) -> Result<DVector<f64>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().collect::<Vec<_>>() != ["index", "value"] {
        return Err(Error::invalid("vector file header must be index,value"));
    }
    let mut v = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let i: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad index `{}`", &rec[0])))?;
        if i != n {
            return Err(Error::invalid(format!("vector indices must be consecutive from 0 (row {n} has {i})")));
        }
        v.push(
            rec[1]
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad value `{}`", &rec[1])))?,
        );
    }
    Ok(DVector::from_vec(v))
}

/// Noiseless fine-mesh fluxes of the true field, plus N(0, γ²) noise.
pub fn generate_observations(forward: &MultiscaleForward, gamma: f64, seed: u64) -> Result<Observations> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid("noise level must be non-negative"));
    }
    let noiseless = forward.observe_field(truth_sigma)?;
    let mut rng = SeedStream::new(seed, StreamTag::DataNoise).rng(&[]);
    let y = if gamma == 0.0 {
        noiseless.clone()
    } else {
        DVector::from_fn(noiseless.len(), |i, _| noiseless[i] + gamma * rng.sample::<f64, _>(StandardNormal))
    };
    Ok(Observations { y, noiseless, gamma })
}

/// Relative L²(Ω) error of a macro-mesh P1 field against the true field,
/// integrated with the six-point rule on an n = 256 mesh.
pub fn relative_sigma_error(field: &FemSolution) -> f64 {
    let quad = build_structured_mesh(256).expect("n > 0");
    let (mut num, mut den) = (0.0, 0.0);
    for t in 0..quad.num_triangles() {
        let area = quad.area(t);
        for (bary, w) in QuadRule::SixPoint.points() {
            let x = quad.point(t, *bary);
            let s = truth_sigma(x);
            num += w * area * (field.eval(x) - s).powi(2);
            den += w * area * s * s;
        }
    }
    (num / den).sqrt()
}
