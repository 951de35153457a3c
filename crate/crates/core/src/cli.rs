//! Command implementations and the command-line interface.
//!
//! The `cmd_*` functions do the work and are usable from tests; [`run`]
//! parses arguments and maps outcomes to exit codes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, FixedHypers};
use crate::error::{Error, Result};
use crate::evaluation::{
    cross_validate, format_table, make_test_set, median, median_rows, rollout_model, stream_grid, CvOptions, CvOutcome,
    EvalReport, GridSample, ModelFamily, SummaryRow,
};
use crate::exec::Execution;
use crate::io::{self, Header};
use crate::regression::{
    fit_baseline, fit_helmholtz_with_seeds, BaselineModel, Dataset, HelmholtzModel, Hyperparameters,
};
use crate::seed::SeedPlan;
use crate::systems::{generate_dataset, simulate, NoiseSpec, Trajectory};
use crate::VectorField;

/// Exit code for invalid input or any runtime error.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code when `reproduce` misses an acceptance threshold.
pub const EXIT_THRESHOLD: i32 = 2;

/// Training data of one seed.
pub struct SimulatedData {
    pub dataset: Dataset,
    pub trajectories: Vec<Trajectory>,
}

pub fn simulate_training(cfg: &ExperimentConfig, plan: &SeedPlan) -> Result<SimulatedData> {
    let protocol = cfg.data.protocol();
    let ics = &cfg.data.initial_conditions;
    let dataset =
        generate_dataset(&cfg.system, ics, &protocol, &NoiseSpec { sigma_n: cfg.data.noise_sigma, seed: plan.noise })?;
    let trajectories = simulate(&cfg.system, ics, &protocol)?;
    Ok(SimulatedData { dataset, trajectories })
}

pub fn test_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    make_test_set(&cfg.system, &cfg.test.x0, cfg.test.h, cfg.test.t_end, cfg.test.substeps)
}

/// Both fitted models of one seed and the searches that chose them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedPair {
    pub helmholtz: HelmholtzModel,
    pub baseline: BaselineModel,
    pub helmholtz_search: Option<CvOutcome>,
    pub baseline_search: Option<CvOutcome>,
}

/// Chooses hyperparameters (search or fixed) and fits both families.
pub fn fit_pair(cfg: &ExperimentConfig, train: &Dataset, plan: &SeedPlan, execution: Execution) -> Result<FittedPair> {
    let d = cfg.model.features;
    let (h_hyper, b_hyper, h_search, b_search) = match cfg.fixed_hyperparameters()? {
        Some(h) => (h, Hyperparameters::single(h.sigma.get(), h.lambda1, d)?, None, None),
        None => {
            let space = cfg.search.space();
            let search = |family| {
                let options = CvOptions { execution, ..CvOptions::from_plan(family, d, plan) };
                cross_validate(train, &space, &options)
            };
            let hs = search(ModelFamily::Helmholtz)?;
            let bs = search(ModelFamily::Baseline)?;
            (hs.best, bs.best, Some(hs), Some(bs))
        }
    };
    Ok(FittedPair {
        helmholtz: fit_helmholtz_with_seeds(train, &h_hyper, plan.basis_c, plan.basis_s)?,
        baseline: fit_baseline(train, &b_hyper, plan.basis_c)?,
        helmholtz_search: h_search,
        baseline_search: b_search,
    })
}

impl FittedPair {
    pub fn reports(&self, system: &str, plan: &SeedPlan, train: &Dataset, test: &Dataset) -> Result<[EvalReport; 2]> {
        Ok([
            EvalReport::evaluate(
                system,
                ModelFamily::Helmholtz,
                &self.helmholtz,
                &self.helmholtz.hyper,
                *plan,
                train,
                test,
            )?,
            EvalReport::evaluate(
                system,
                ModelFamily::Baseline,
                &self.baseline,
                &self.baseline.hyper,
                *plan,
                train,
                test,
            )?,
        ])
    }
}

/// Everything produced for one master seed.
pub struct SeedRun {
    pub plan: SeedPlan,
    pub data: SimulatedData,
    pub models: FittedPair,
    pub reports: [EvalReport; 2],
}

pub fn run_seed(cfg: &ExperimentConfig, master: u64, test: &Dataset, execution: Execution) -> Result<SeedRun> {
    let plan = SeedPlan::from_master(master);
    let data = simulate_training(cfg, &plan)?;
    let models = fit_pair(cfg, &data.dataset, &plan, execution)?;
    let reports = models.reports(cfg.system.name(), &plan, &data.dataset, test)?;
    Ok(SeedRun { plan, data, models, reports })
}

/// Master seeds `seed, seed + 1, …` used by a multi-seed run.
pub fn master_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.run.seeds as u64).map(|i| cfg.run.seed.wrapping_add(i)).collect()
}

/// Runs every seed (in parallel when `execution` allows), in seed order.
pub fn run_protocol(cfg: &ExperimentConfig, execution: Execution) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    let test = test_dataset(cfg)?;
    execution.map(&master_seeds(cfg), |&m| run_seed(cfg, m, &test, execution)).into_iter().collect()
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of seeds (reproduce).
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip the search and use `σ,λ1,λ2`.
    #[arg(long, value_name = "SIGMA,L1,L2")]
    pub fixed_hypers: Option<FixedHypers>,
    /// Noise standard deviation on training samples.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Random features per map.
    #[arg(long)]
    pub features: Option<usize>,
    /// Run seeds and grid points one at a time.
    #[arg(long)]
    pub sequential: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(s) = self.seeds {
            cfg.run.seeds = s;
        }
        if let Some(o) = &self.out {
            cfg.run.out = o.clone();
        }
        if let Some(f) = self.fixed_hypers {
            cfg.model.fixed = Some(f);
        }
        if let Some(n) = self.noise_sigma {
            cfg.data.noise_sigma = n;
        }
        if let Some(d) = self.features {
            cfg.model.features = d;
        }
        cfg.validate()
    }

    pub fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

/// Loads `source` as a file path, or as a bundled experiment name when no
/// such file exists.
pub fn load_config(source: &str) -> Result<ExperimentConfig> {
    let path = Path::new(source);
    if path.exists() {
        ExperimentConfig::from_path(path)
    } else {
        ExperimentConfig::bundled(source)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub points: usize,
    pub test_points: usize,
    pub dataset: Dataset,
}

/// Writes `train.csv`, `train.json`, `trajectories.csv` and `test.csv`.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<SimulateSummary> {
    let plan = SeedPlan::from_master(cfg.run.seed);
    let header = Header::new(cfg, &[plan]);
    let out = &cfg.run.out;
    let data = simulate_training(cfg, &plan)?;
    let test = test_dataset(cfg)?;
    io::write_dataset_csv(&out.join("train.csv"), &header, &data.dataset)?;
    io::write_json(&out.join("train.json"), &header, &DatasetPayload { dataset: data.dataset.clone() })?;
    io::write_trajectories_csv(&out.join("trajectories.csv"), &header, &data.trajectories)?;
    io::write_dataset_csv(&out.join("test.csv"), &header, &test)?;
    Ok(SimulateSummary { points: data.dataset.len(), test_points: test.len(), dataset: data.dataset })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetPayload {
    pub dataset: Dataset,
}

/// A model file: either family, tagged.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", content = "model", rename_all = "lowercase")]
pub enum ModelArtifact {
    Helmholtz(HelmholtzModel),
    Gaussian(BaselineModel),
}

impl ModelArtifact {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelArtifact::Helmholtz(_) => ModelFamily::Helmholtz,
            ModelArtifact::Gaussian(_) => ModelFamily::Baseline,
        }
    }

    pub fn hyper(&self) -> &Hyperparameters {
        match self {
            ModelArtifact::Helmholtz(m) => &m.hyper,
            ModelArtifact::Gaussian(m) => &m.hyper,
        }
    }

    pub fn field(&self) -> &dyn VectorField {
        match self {
            ModelArtifact::Helmholtz(m) => m,
            ModelArtifact::Gaussian(m) => m,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitPayload {
    pub reports: Vec<EvalReport>,
    pub helmholtz_search: Option<CvOutcome>,
    pub baseline_search: Option<CvOutcome>,
}

/// Fits both families on `data` (or on freshly simulated data) and writes
/// `helmholtz_model.json`, `gaussian_model.json` and `eval_report.json`.
pub fn cmd_fit(cfg: &ExperimentConfig, data: Option<&Path>, execution: Execution) -> Result<FitPayload> {
    let plan = SeedPlan::from_master(cfg.run.seed);
    let header = Header::new(cfg, &[plan]);
    let train = match data {
        Some(p) => io::read_dataset_csv(p)?,
        None => simulate_training(cfg, &plan)?.dataset,
    };
    let test = test_dataset(cfg)?;
    let pair = fit_pair(cfg, &train, &plan, execution)?;
    let reports = pair.reports(cfg.system.name(), &plan, &train, &test)?;
    let out = &cfg.run.out;
    io::write_json(&out.join("helmholtz_model.json"), &header, &ModelArtifact::Helmholtz(pair.helmholtz))?;
    io::write_json(&out.join("gaussian_model.json"), &header, &ModelArtifact::Gaussian(pair.baseline))?;
    let payload = FitPayload {
        reports: reports.to_vec(),
        helmholtz_search: pair.helmholtz_search,
        baseline_search: pair.baseline_search,
    };
    io::write_json(&out.join("eval_report.json"), &header, &payload)?;
    Ok(payload)
}

/// Evaluates a saved model on `data` (or freshly simulated data) and the
/// test trajectory; writes `<family>_eval.json`.
pub fn cmd_eval(cfg: &ExperimentConfig, model: &Path, data: Option<&Path>) -> Result<EvalReport> {
    let plan = SeedPlan::from_master(cfg.run.seed);
    let (model_header, artifact): (Header, ModelArtifact) = io::read_json(model)?;
    let train = match data {
        Some(p) => io::read_dataset_csv(p)?,
        None => simulate_training(cfg, &plan)?.dataset,
    };
    let test = test_dataset(cfg)?;
    let seeds = model_header.seeds.first().copied().unwrap_or(plan);
    let report = EvalReport::evaluate(
        cfg.system.name(),
        artifact.family(),
        artifact.field(),
        artifact.hyper(),
        seeds,
        &train,
        &test,
    )?;
    let header = Header::new(cfg, &[seeds]);
    io::write_json(&cfg.run.out.join(format!("{}_eval.json", artifact.family().name())), &header, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReproduceOutcome {
    pub rows: Vec<SummaryRow>,
    pub medians: Vec<SummaryRow>,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub elapsed_seconds: f64,
    /// Rollouts that left the finite range, by model name.
    pub diverged_rollouts: Vec<String>,
    /// Sign of the learned energy rate along the first seed's Helmholtz
    /// rollout; reported, not enforced by the model.
    pub energy_rate: Option<EnergyRate>,
}

/// `∇Ĥ(x)^T f_d(x)` along a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRate {
    pub states: usize,
    pub nonpositive_fraction: f64,
    pub max: f64,
}

pub fn energy_rate(model: &HelmholtzModel, traj: &Trajectory) -> Result<EnergyRate> {
    let mut rates = Vec::with_capacity(traj.len());
    for x in &traj.states {
        let grad = model.hamiltonian_gradient(x)?;
        let fd = model.decompose(x)?.dissipative;
        rates.push(grad.iter().zip(&fd).map(|(a, b)| a * b).sum::<f64>());
    }
    let nonpositive = rates.iter().filter(|&&r| r <= 0.0).count();
    Ok(EnergyRate {
        states: rates.len(),
        nonpositive_fraction: nonpositive as f64 / rates.len() as f64,
        max: rates.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

fn median_of(rows: &[SummaryRow], family: ModelFamily, pick: fn(&SummaryRow) -> f64) -> f64 {
    median(&rows.iter().filter(|r| r.model == family.name()).map(pick).collect::<Vec<_>>())
}

fn acceptance_checks(cfg: &ExperimentConfig, rows: &[SummaryRow]) -> Vec<Check> {
    let acc = &cfg.acceptance;
    let h_train = median_of(rows, ModelFamily::Helmholtz, |r| r.train_mse);
    let h_test = median_of(rows, ModelFamily::Helmholtz, |r| r.test_mse);
    let b_test = median_of(rows, ModelFamily::Baseline, |r| r.test_mse);
    let mut checks = Vec::new();
    let mut upper = |name: &str, value: f64, limit: Option<f64>| {
        if let Some(t) = limit {
            checks.push(Check { name: name.into(), value, threshold: t, passed: value <= t });
        }
    };
    upper("helmholtz_train_mse", h_train, acc.max_helmholtz_train_mse);
    upper("helmholtz_test_mse", h_test, acc.max_helmholtz_test_mse);
    if let Some(t) = acc.min_baseline_ratio {
        let ratio = b_test / h_test;
        checks.push(Check {
            name: "baseline_over_helmholtz_test_mse".into(),
            value: ratio,
            threshold: t,
            passed: ratio >= t,
        });
    }
    checks
}

fn write_grid(path: &Path, header: &Header, grid: &[GridSample]) -> Result<()> {
    io::write_grid_csv(path, header, grid)
}

/// Runs the full multi-seed protocol and writes the summary, per-seed
/// reports, the four phase-plane grids and the rollouts of the first seed.
pub fn cmd_reproduce(cfg: &ExperimentConfig, execution: Execution) -> Result<ReproduceOutcome> {
    let start = Instant::now();
    let runs = run_protocol(cfg, execution)?;
    let elapsed_seconds = start.elapsed().as_secs_f64();
    let plans: Vec<SeedPlan> = runs.iter().map(|r| r.plan).collect();
    let header = Header::new(cfg, &plans);
    let out = &cfg.run.out;

    let rows: Vec<SummaryRow> = runs.iter().flat_map(|r| r.reports.iter().map(SummaryRow::from_report)).collect();
    let medians = median_rows(&rows);
    let mut table_rows = rows.clone();
    table_rows.extend(medians.iter().cloned());
    io::write_summary_csv(&out.join("results.csv"), &header, &table_rows)?;
    std::fs::write(out.join("summary.txt"), format_table(&medians))?;

    for run in &runs {
        let seed_header = Header::new(cfg, &[run.plan]);
        let payload = FitPayload {
            reports: run.reports.to_vec(),
            helmholtz_search: run.models.helmholtz_search.clone(),
            baseline_search: run.models.baseline_search.clone(),
        };
        io::write_json(&out.join("reports").join(format!("seed_{}.json", run.plan.master)), &seed_header, &payload)?;
    }

    let first = &runs[0];
    let first_header = Header::new(cfg, &[first.plan]);
    let bounds = cfg.plot.bounds();
    let res = cfg.plot.resolution;
    write_grid(&out.join("grid_true.csv"), &first_header, &stream_grid(&cfg.system, &bounds, res)?)?;
    let overlay: Vec<GridSample> = first
        .data
        .dataset
        .states()
        .iter()
        .zip(first.data.dataset.derivatives())
        .map(|(x, xdot)| GridSample { x: x.clone(), xdot: xdot.clone() })
        .collect();
    write_grid(&out.join("grid_data.csv"), &first_header, &overlay)?;
    write_grid(&out.join("grid_gaussian.csv"), &first_header, &stream_grid(&first.models.baseline, &bounds, res)?)?;
    write_grid(&out.join("grid_helmholtz.csv"), &first_header, &stream_grid(&first.models.helmholtz, &bounds, res)?)?;

    let mut diverged_rollouts = Vec::new();
    let mut rate = None;
    let rollouts: [(&str, &dyn VectorField); 3] =
        [("true", &cfg.system), ("gaussian", &first.models.baseline), ("helmholtz", &first.models.helmholtz)];
    for (name, field) in rollouts {
        match rollout_model(field, &cfg.test.x0, cfg.plot.rollout_h, cfg.test.t_end) {
            Ok(traj) => {
                if name == "helmholtz" {
                    rate = Some(energy_rate(&first.models.helmholtz, &traj)?);
                }
                io::write_trajectories_csv(&out.join(format!("rollout_{name}.csv")), &first_header, &[traj])?
            }
            Err(Error::NonFinite { .. }) => diverged_rollouts.push(name.to_string()),
            Err(e) => return Err(e),
        }
    }

    let checks = acceptance_checks(cfg, &rows);
    let passed = checks.iter().all(|c| c.passed);
    let outcome =
        ReproduceOutcome { rows, medians, checks, passed, elapsed_seconds, diverged_rollouts, energy_rate: rate };
    io::write_json(&out.join("acceptance.json"), &header, &outcome)?;
    Ok(outcome)
}

#[derive(Debug, Parser)]
#[command(name = "helmholtz-rff", version, about = "Learn dissipative Hamiltonian vector fields from noisy samples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate training data and the test trajectory.
    Simulate {
        /// Config file, or `msd` / `pendulum` for a bundled one.
        #[arg(long)]
        config: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Select hyperparameters and fit both model families.
    Fit {
        #[arg(long)]
        config: String,
        /// Training CSV from `simulate`; simulated afresh when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a saved model file.
    Eval {
        #[arg(long)]
        config: String,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a benchmark experiment over several seeds and check thresholds.
    Reproduce {
        /// `msd` or `pendulum`.
        experiment: String,
        /// Replaces the bundled config of the experiment.
        #[arg(long)]
        config: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn configured(source: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = load_config(source)?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

/// Executes a parsed command line, printing results; returns the exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_VALIDATION
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate { config, overrides } => {
            let cfg = configured(&config, &overrides)?;
            let s = cmd_simulate(&cfg)?;
            println!("N = {}", s.points);
            println!("test points = {}", s.test_points);
            println!("wrote {}", cfg.run.out.display());
            Ok(0)
        }
        Command::Fit { config, data, overrides } => {
            let cfg = configured(&config, &overrides)?;
            let payload = cmd_fit(&cfg, data.as_deref(), overrides.execution())?;
            let rows: Vec<SummaryRow> = payload.reports.iter().map(SummaryRow::from_report).collect();
            print!("{}", format_table(&rows));
            for r in &payload.reports {
                println!(
                    "{}: sigma = {}, lambda1 = {}, lambda2 = {}",
                    r.model,
                    r.hyper.sigma.get(),
                    r.hyper.lambda1,
                    r.hyper.lambda2
                );
            }
            Ok(0)
        }
        Command::Eval { config, model, data, overrides } => {
            let cfg = configured(&config, &overrides)?;
            let report = cmd_eval(&cfg, &model, data.as_deref())?;
            print!("{}", format_table(&[SummaryRow::from_report(&report)]));
            Ok(0)
        }
        Command::Reproduce { experiment, config, overrides } => {
            let mut cfg = match config {
                Some(c) => load_config(&c)?,
                None => ExperimentConfig::bundled(&experiment)?,
            };
            if cfg.system.name() != experiment {
                return Err(Error::InvalidParameter(format!(
                    "config describes '{}', not '{experiment}'",
                    cfg.system.name()
                )));
            }
            overrides.apply(&mut cfg)?;
            let outcome = cmd_reproduce(&cfg, overrides.execution())?;
            print!("{}", format_table(&outcome.medians));
            println!("{} seeds in {:.2} s", cfg.run.seeds, outcome.elapsed_seconds);
            for c in &outcome.checks {
                let verdict = if c.passed { "PASS" } else { "FAIL" };
                println!("{verdict} {} = {:.6} (threshold {})", c.name, c.value, c.threshold);
            }
            if let Some(r) = &outcome.energy_rate {
                println!(
                    "learned energy rate along helmholtz rollout: non-positive at {:.1}% of {} states, max {:.3e}",
                    100.0 * r.nonpositive_fraction,
                    r.states,
                    r.max
                );
            }
            for name in &outcome.diverged_rollouts {
                println!("note: {name} rollout diverged; no rollout file written");
            }
            Ok(if outcome.passed { 0 } else { EXIT_THRESHOLD })
        }
    }
}
