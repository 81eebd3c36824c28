use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use msenkf_core::enkf::write_diagnostics_csv;
use msenkf_core::homogenize::DEFAULT_CELL_N;
use msenkf_core::scenario::{
    build_homogenized_map, effective_map, read_vector_csv, relative_sigma_error, write_vector_csv, ModelErrorMode,
    Preset,
};
use msenkf_core::study::{
    bayes_linear_study, coverage_report, fem_rate_study, homogenization_rate_study, hoeffding_study,
    mcdiarmid_study, wasserstein_study, CoverageSetup, StudyReport,
};
use msenkf_core::{
    generate_observations, truth_sigma, Error, FemSolution, ForwardChoice, HomogenizedMap, MacroPrior, Mode,
    ModellingErrorModel, MultiscaleForward, Problem, RangePolicy, ScenarioConfig,
};

use crate::manifest::{lookup, sha256_hex, Manifest, MANIFEST_FILE};
use crate::{Command, ForwardArg, ModeArg, ModelErrorArg, PresetArg, ScenarioArgs, StudyKind};

/// A failed command and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_input_error() { 2 } else { 3 },
            message: e.to_string(),
        }
    }
}

impl From<msenkf_core::ConfigError> for Failure {
    fn from(e: msenkf_core::ConfigError) -> Self {
        Error::from(e).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type Outcome = Result<(), Failure>;

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Generate { scenario, out, noiseless } => generate(&scenario, &out, noiseless),
        Command::Invert {
            scenario,
            data,
            out,
            forward,
            homog_table,
            strict_range,
            snapshot,
        } => invert(&scenario, &data, &out, forward, homog_table.as_deref(), strict_range, snapshot),
        Command::Study { kind, scenario, out } => study(kind, &scenario, &out),
        Command::HomogTable {
            scenario,
            out,
            n_cell,
            points,
        } => homog_table(&scenario, &out, n_cell, points),
        Command::ModelErrorEstimate {
            scenario,
            out,
            samples,
            homog_table,
        } => model_error_estimate(&scenario, &out, samples, homog_table.as_deref()),
    }
}

fn resolve(args: &ScenarioArgs) -> Result<ScenarioConfig, Failure> {
    let base = ScenarioConfig::preset(match args.preset {
        PresetArg::Desk => Preset::Desk,
        PresetArg::Paper => Preset::Paper,
    });
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
            ScenarioConfig::parse(&text, &base)?
        }
        None => base,
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeArg::Point => Mode::PointEstimate,
            ModeArg::Bayes => Mode::Bayesian,
        };
    }
    if let Some(m) = args.model_error {
        cfg.model_error = match m {
            ModelErrorArg::None => ModelErrorMode::None,
            ModelErrorArg::Offline => ModelErrorMode::Offline,
            ModelErrorArg::Online => ModelErrorMode::Online,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(path: &Path) -> Outcome {
    fs::create_dir_all(path).map_err(|e| Failure::input(format!("cannot create {}: {e}", path.display())))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn start(command: &str, dir: &Path, cfg: &ScenarioConfig) -> Result<Manifest, Failure> {
    out_dir(dir)?;
    let mut m = Manifest::new(command, dir);
    m.entry("seed", cfg.seed);
    m.config(&cfg.to_text());
    Ok(m)
}

fn load_map(
    cfg: &ScenarioConfig,
    table: Option<&Path>,
    strict: bool,
    manifest: &mut Manifest,
) -> Result<Arc<msenkf_core::EffectiveMap>, Failure> {
    let table = match table {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
            manifest.entry("homog_table", path.display());
            manifest.entry("homog_table_sha256", sha256_hex(&bytes));
            HomogenizedMap::read_csv(bytes.as_slice())?
        }
        None => manifest.time("homog_table", || build_homogenized_map(cfg, DEFAULT_CELL_N, 41))?,
    };
    let policy = if strict { RangePolicy::Strict } else { RangePolicy::Extend };
    Ok(Arc::new(effective_map(table, policy, DEFAULT_CELL_N)?))
}

fn generate(args: &ScenarioArgs, out: &Path, noiseless: bool) -> Outcome {
    let cfg = resolve(args)?;
    let mut m = start("generate", out, &cfg)?;
    let prior = MacroPrior::build(&cfg)?;
    let fine = MultiscaleForward::new(&cfg, prior.clone())?;
    let gamma = if noiseless { 0.0 } else { cfg.gamma };
    let obs = m.time("forward", || generate_observations(&fine, gamma, cfg.seed))?;

    obs.write_csv(create(out, "observations.csv")?)?;
    write_vector_csv(create(out, "noiseless.csv")?, &obs.noiseless)?;
    FemSolution::interpolant(prior.mesh.clone(), truth_sigma).write_csv(create(out, "truth_sigma.csv")?)?;
    m.entry("noiseless", noiseless);
    m.entry("noise_level", gamma);
    m.entry("observations", obs.y.len());
    m.entry("truth", "truth_sigma");
    for f in ["observations.csv", "noiseless.csv", "truth_sigma.csv"] {
        m.output(f);
    }
    m.write()?;
    println!("wrote {} observations to {}", obs.y.len(), out.display());
    Ok(())
}

fn invert(
    args: &ScenarioArgs,
    data: &Path,
    out: &Path,
    forward: ForwardArg,
    table: Option<&Path>,
    strict: bool,
    snapshot: bool,
) -> Outcome {
    let cfg = resolve(args)?;
    let bytes = fs::read(data).map_err(|e| Failure::input(format!("cannot read {}: {e}", data.display())))?;
    let y = read_vector_csv(bytes.as_slice())?;
    if y.len() != cfg.observation_dim() {
        return Err(Failure::input(format!(
            "data has {} observations but the configuration implies K·I = {}",
            y.len(),
            cfg.observation_dim()
        )));
    }
    let mut m = start("invert", out, &cfg)?;
    m.entry("data", data.display());
    m.entry("data_sha256", sha256_hex(&bytes));
    let choice = match forward {
        ForwardArg::Surrogate => ForwardChoice::Surrogate,
        ForwardArg::Multiscale => ForwardChoice::Multiscale,
    };
    m.entry("forward", format!("{forward:?}").to_lowercase());

    let map = load_map(&cfg, table, strict, &mut m)?;
    let mut problem = m.time("setup", || Problem::with_map(cfg.clone(), map))?;
    problem.record_history = snapshot;
    let inv = m.time("enkf", || problem.invert(&y, choice))?;

    inv.sigma.write_csv(create(out, "sigma.csv")?)?;
    write_vector_csv(create(out, "estimate.csv")?, &inv.output.estimate)?;
    write_diagnostics_csv(create(out, "diagnostics.csv")?, &inv.output.diagnostics)?;
    for f in ["sigma.csv", "estimate.csv", "diagnostics.csv"] {
        m.output(f);
    }
    if snapshot {
        inv.output.write_snapshot_csv(create(out, "ensemble.csv")?)?;
        m.output("ensemble.csv");
    }
    if let Some(model) = inv.models.last() {
        write_model(out, model, &mut m)?;
    }
    if let Some(c_e) = inv.pilot_c_e {
        m.entry("pilot_c_e", c_e);
    }
    m.entry("levels_estimated", inv.models.len());
    if truth_available(data) {
        let err = relative_sigma_error(&inv.sigma);
        m.entry("relative_error", format!("{err:e}"));
        println!("relative L2 error of sigma: {err:.6}");
    }
    if let Some(d) = inv.output.diagnostics.last() {
        println!("final misfit {:.6e}, spread {:.6e}", d.misfit, d.spread);
    }
    m.write()?;
    Ok(())
}

/// True when `data` was written by `generate` next to its manifest.
fn truth_available(data: &Path) -> bool {
    let Some(dir) = data.parent() else { return false };
    let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
    fs::read_to_string(dir.join(MANIFEST_FILE))
        .map(|t| lookup(&t, "command").as_deref() == Some("generate") && lookup(&t, "truth").is_some())
        .unwrap_or(false)
}

fn write_model(out: &Path, model: &ModellingErrorModel, m: &mut Manifest) -> Outcome {
    model.write_csv(create(out, "model_error_mean.csv")?, create(out, "model_error_cov.csv")?)?;
    m.output("model_error_mean.csv");
    m.output("model_error_cov.csv");
    m.entry("model_error_samples", model.samples);
    Ok(())
}

fn study(kind: StudyKind, args: &ScenarioArgs, out: &Path) -> Outcome {
    let cfg = resolve(args)?;
    let mut m = start("study", out, &cfg)?;
    let name = format!("{kind:?}");
    m.entry("kind", &name);
    let report: StudyReport = m.time("study", || -> Result<StudyReport, Error> {
        Ok(match kind {
            StudyKind::FemRate => fem_rate_study(&[8, 16, 32, 64, 128])?.report("h", 1.8, 2.2),
            StudyKind::HomogRate => {
                let map = Arc::new(effective_map(
                    build_homogenized_map(&cfg, DEFAULT_CELL_N, 41)?,
                    RangePolicy::Extend,
                    DEFAULT_CELL_N,
                )?);
                homogenization_rate_study(&cfg, &[0.25, 0.125, 0.0625], map)?.report("epsilon", 0.7, f64::INFINITY)
            }
            StudyKind::WassersteinBound => wasserstein_study(1000, cfg.seed, 1e-9)?.report(),
            StudyKind::Hoeffding => {
                let setup = CoverageSetup::default();
                coverage_report(&[
                    hoeffding_study(&setup, 36, cfg.seed)?,
                    mcdiarmid_study(&setup, 3, cfg.seed.wrapping_add(1))?,
                ])
            }
            StudyKind::BayesLinear => bayes_linear_study(10_000, 10, cfg.seed)?.report(),
        })
    })?;
    let file = format!("{}.csv", snake(&name));
    report.write_csv(create(out, &file)?)?;
    m.output(&file);
    m.write()?;
    println!("{}", report.header.join(","));
    for row in &report.rows {
        println!("{}", row.join(","));
    }
    Ok(())
}

fn snake(camel: &str) -> String {
    let mut s = String::new();
    for (i, c) in camel.chars().enumerate() {
        if c.is_ascii_uppercase() && i > 0 {
            s.push('_');
        }
        s.push(c.to_ascii_lowercase());
    }
    s
}

fn homog_table(args: &ScenarioArgs, out: &Path, n_cell: usize, points: usize) -> Outcome {
    let cfg = resolve(args)?;
    if points < 2 || n_cell < 2 {
        return Err(Failure::input("need at least 2 table points and 2 cell subdivisions"));
    }
    let mut m = start("homog-table", out, &cfg)?;
    let table = m.time("cell_problems", || build_homogenized_map(&cfg, n_cell, points))?;
    table.write_csv(create(out, "homog_table.csv")?)?;
    m.entry("n_cell", n_cell);
    m.entry("points", points);
    let (lo, hi) = table.range();
    m.entry("range", format!("{lo:e},{hi:e}"));
    m.output("homog_table.csv");
    m.write()?;
    println!("tabulated {points} points on [{lo:.4}, {hi:.4}]");
    Ok(())
}

fn model_error_estimate(args: &ScenarioArgs, out: &Path, samples: Option<usize>, table: Option<&Path>) -> Outcome {
    let mut cfg = resolve(args)?;
    if let Some(s) = samples {
        cfg.n_e = s;
    }
    if cfg.n_e < 2 {
        return Err(Failure::input("at least 2 samples are needed"));
    }
    let mut m = start("model-error-estimate", out, &cfg)?;
    let map = load_map(&cfg, table, false, &mut m)?;
    let problem = Problem::with_map(cfg.clone(), map)?;
    let (model, c_e) = m.time("samples", || problem.estimate_model_error(cfg.n_e))?;
    write_model(out, &model, &mut m)?;
    m.entry("epsilon", format!("{:e}", cfg.epsilon));
    m.entry("h", format!("{:e}", cfg.h));
    m.entry("pilot_c_e", format!("{c_e:e}"));
    m.write()?;
    println!(
        "N_E = {}, epsilon = {}, h = {}, pilot C_E = {c_e:.6}, |mean| = {:.6}",
        model.samples,
        cfg.epsilon,
        cfg.h,
        model.mean.norm()
    );
    Ok(())
}
