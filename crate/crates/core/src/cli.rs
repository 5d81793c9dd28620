//! Batch front end: experiment configs, report files, listings.
//!
//! Config grammar (TOML):
//!
//! ```toml
//! schema_version = 1
//! output = "out"                      # optional, overridden by --out
//!
//! [experiment]
//! name = "comparison_experiment"      # see `jumplab list experiments`
//! x0 = [0.0, 0.0]                     # experiment parameters follow
//!
//! [[models]]
//! name = "affine"                     # see `jumplab list models`
//! s0 = 1.0
//!
//! [noise]
//! t_end = 1.0
//! base_step = 1e-3
//! # measure = "lebesgue_on_interval" | "stable_symmetric" | "stable_positive"
//! # z_min = 0.0, z_max = 1.0, alpha = 1.5 (window override; omitted z_max = unbounded)
//!
//! [seeds]
//! root = 0
//! offset = 0
//! count = 100
//!
//! [tolerance]
//! # k = 2.0                           # omitted: the calibrated constant
//!
//! [solver]
//! # explosion_guard = 1e6
//! # compensator = "analytic" | "quadrature"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{
    big_jump_equivalence_experiment, calibrated_k, comparison_experiment, lattice_experiment,
    slanted_zero_experiment, spectrally_positive_experiment, strong_order_experiment,
    uniqueness_gap_experiment, ExperimentReport, ExperimentVerdict, HarnessError, RunSettings,
};
use crate::model::{builtin_in_window, GFunction, ModelError, ModelLabel, SdeSpec};
use crate::noise::{
    Atom, Interval, LevyMeasure, MeasureKind, NoiseError, NoiseRealization, TimeGrid,
};
use crate::solver::{solve, CompensatorMode, SolveConfig, SolverError, DEFAULT_EXPLOSION_GUARD};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_OUTPUT: &str = "out";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_REFUSED: i32 = 2;
pub const EXIT_ERROR: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Schema(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        EXIT_ERROR
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn exit_code(verdict: ExperimentVerdict) -> i32 {
    match verdict {
        ExperimentVerdict::Pass => EXIT_PASS,
        ExperimentVerdict::Fail => EXIT_FAIL,
        ExperimentVerdict::Refused | ExperimentVerdict::Inconclusive => EXIT_REFUSED,
    }
}

fn default_threshold() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    1.5
}
fn default_x0() -> f64 {
    1.0
}

/// Experiment name plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentSpec {
    #[serde(alias = "uniqueness_gap")]
    UniquenessGapExperiment {
        x0: f64,
        deltas: Vec<f64>,
        /// Box for the Lipschitz preconditions; default x0 ± 5.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        state_box: Option<[f64; 2]>,
    },
    #[serde(alias = "slanted_zero")]
    SlantedZeroExperiment { x0: [f64; 2] },
    #[serde(alias = "comparison")]
    ComparisonExperiment {
        x0: [f64; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        state_box: Option<[f64; 2]>,
        #[serde(default)]
        negative_control: bool,
    },
    #[serde(alias = "lattice")]
    LatticeExperiment {
        x0: [f64; 2],
        #[serde(default)]
        refinement: Vec<f64>,
    },
    #[serde(alias = "big_jump_equivalence")]
    BigJumpEquivalenceExperiment {
        x0: f64,
        #[serde(default = "default_threshold")]
        threshold: f64,
        /// (time, mark) pairs replacing the sampled atoms.
        #[serde(default)]
        forced_atoms: Vec<[f64; 2]>,
    },
    #[serde(alias = "spectrally_positive")]
    SpectrallyPositiveExperiment {
        g: GFunction,
        #[serde(default = "default_alpha")]
        alpha: f64,
        x0: f64,
        deltas: Vec<f64>,
    },
    #[serde(alias = "strong_order")]
    StrongOrderExperiment {
        mu: f64,
        sigma: f64,
        #[serde(default = "default_x0")]
        x0: f64,
        steps: Vec<f64>,
    },
}

pub struct ExperimentInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub params: &'static str,
}

pub fn experiment_catalog() -> Vec<ExperimentInfo> {
    vec![
        ExperimentInfo {
            name: "uniqueness_gap_experiment",
            description: "coupled solutions from x0 and x0+delta; gap against the Gronwall envelope (1 model)",
            params: "x0, deltas = [...], state_box = [lo, hi] (default x0 +- 5)",
        },
        ExperimentInfo {
            name: "slanted_zero_experiment",
            description: "slanted local time at 0 of X1 - X2 must vanish within tau (1 or 2 models)",
            params: "x0 = [x1, x2]",
        },
        ExperimentInfo {
            name: "comparison_experiment",
            description: "ordered drifts and starts keep X1 <= X2 + tau at every knot (2 models)",
            params: "x0 = [x1, x2], state_box = [lo, hi], negative_control = false",
        },
        ExperimentInfo {
            name: "lattice_experiment",
            description: "max and min of two solutions solve the same equation up to tau (1 model)",
            params: "x0 = [x1, x2], refinement = [dt, ...]",
        },
        ExperimentInfo {
            name: "big_jump_equivalence_experiment",
            description: "restarting at big jumps reproduces the direct solve bit for bit (1 model)",
            params: "x0, threshold = 1, forced_atoms = [[t, z], ...]",
        },
        ExperimentInfo {
            name: "spectrally_positive_experiment",
            description: "dX = G(X-) dZ with Z spectrally positive stable: gap and local time checks (no models)",
            params: "g = { kind = ... }, alpha = 1.5, x0, deltas = [...]",
        },
        ExperimentInfo {
            name: "strong_order_experiment",
            description: "Euler strong order on geometric Brownian motion against the exact solution (no models)",
            params: "mu, sigma, x0 = 1, steps = [dt, ...]",
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub t_end: f64,
    pub base_step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_min: Option<f64>,
    /// Absent means unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub root: u64,
    #[serde(default)]
    pub offset: u64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explosion_guard: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compensator: Option<CompensatorMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub models: Vec<ModelLabel>,
    pub noise: NoiseConfig,
    pub seeds: SeedConfig,
    #[serde(default)]
    pub tolerance: ToleranceConfig,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A report JSON (its embedded `config`) or a bare config JSON.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        if let Some(c) = v.get_mut("config") {
            v = c.take();
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(v).map_err(|e| CliError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Schema(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seeds.count == 0 {
            return Err(CliError::Schema("seeds.count must be positive".into()));
        }
        let (lo, hi) = match self.experiment {
            ExperimentSpec::SlantedZeroExperiment { .. } => (1, 2),
            ExperimentSpec::ComparisonExperiment { .. } => (2, 2),
            ExperimentSpec::SpectrallyPositiveExperiment { .. }
            | ExperimentSpec::StrongOrderExperiment { .. } => (0, 0),
            _ => (1, 1),
        };
        let n = self.models.len();
        if n < lo || n > hi {
            return Err(CliError::Schema(format!(
                "{} takes {} model(s), got {n}",
                self.experiment_name(),
                if lo == hi {
                    lo.to_string()
                } else {
                    format!("{lo} or {hi}")
                }
            )));
        }
        Ok(())
    }

    pub fn experiment_name(&self) -> &'static str {
        match self.experiment {
            ExperimentSpec::UniquenessGapExperiment { .. } => "uniqueness_gap_experiment",
            ExperimentSpec::SlantedZeroExperiment { .. } => "slanted_zero_experiment",
            ExperimentSpec::ComparisonExperiment { .. } => "comparison_experiment",
            ExperimentSpec::LatticeExperiment { .. } => "lattice_experiment",
            ExperimentSpec::BigJumpEquivalenceExperiment { .. } => {
                "big_jump_equivalence_experiment"
            }
            ExperimentSpec::SpectrallyPositiveExperiment { .. } => "spectrally_positive_experiment",
            ExperimentSpec::StrongOrderExperiment { .. } => "strong_order_experiment",
        }
    }

    /// Fill every default so the config alone reproduces the run. The output
    /// directory is dropped: it does not affect results.
    pub fn resolved(&self, extra_seed_offset: u64) -> ExperimentConfig {
        let mut c = self.clone();
        c.output = None;
        c.seeds.offset = c.seeds.offset.wrapping_add(extra_seed_offset);
        c.tolerance.k = Some(c.tolerance.k.unwrap_or_else(calibrated_k));
        c.solver.explosion_guard =
            Some(c.solver.explosion_guard.unwrap_or(DEFAULT_EXPLOSION_GUARD));
        c.solver.compensator = Some(c.solver.compensator.unwrap_or(CompensatorMode::Analytic));
        match &mut c.experiment {
            ExperimentSpec::UniquenessGapExperiment { x0, state_box, .. } => {
                state_box.get_or_insert([*x0 - 5.0, *x0 + 5.0]);
            }
            ExperimentSpec::ComparisonExperiment { x0, state_box, .. } => {
                state_box.get_or_insert([x0[0].min(x0[1]) - 5.0, x0[0].max(x0[1]) + 5.0]);
            }
            _ => {}
        }
        c
    }

    pub fn run_settings(&self) -> Result<RunSettings, CliError> {
        let seeds = RunSettings::seed_range(self.seeds.root, self.seeds.offset, self.seeds.count);
        let mut run = RunSettings::new(self.noise.t_end, self.noise.base_step, seeds);
        if let Some(k) = self.tolerance.k {
            run.k = k;
        }
        let mut solve = SolveConfig::new(self.noise.base_step);
        if let Some(g) = self.solver.explosion_guard {
            solve.explosion_guard = g;
        }
        if let Some(m) = self.solver.compensator {
            solve.compensator = m;
        }
        run.solve = solve;
        Ok(run)
    }

    /// Window override from [noise], if any key is set.
    fn window(&self) -> Result<Option<LevyMeasure>, CliError> {
        let n = &self.noise;
        if n.measure.is_none() && n.z_min.is_none() && n.z_max.is_none() && n.alpha.is_none() {
            return Ok(None);
        }
        let natural = match self.models.first() {
            Some(m) => m.default_measure()?,
            None => match self.experiment {
                ExperimentSpec::SpectrallyPositiveExperiment { alpha, .. } => {
                    LevyMeasure::stable_positive(alpha, 0.05, f64::INFINITY)?
                }
                _ => LevyMeasure::empty(),
            },
        };
        let kind = n.measure.unwrap_or(natural.kind());
        let alpha = n.alpha.or(natural.alpha());
        let z_min = n.z_min.unwrap_or(natural.z_min());
        let z_max = n.z_max.unwrap_or(if n.measure.is_some() {
            f64::INFINITY
        } else {
            natural.z_max()
        });
        Ok(Some(LevyMeasure::new(kind, z_min, z_max, alpha)?))
    }

    pub fn specs(&self) -> Result<Vec<SdeSpec>, CliError> {
        let window = self.window()?;
        let mut specs = Vec::with_capacity(self.models.len());
        for m in &self.models {
            specs.push(builtin_in_window(m, window)?);
        }
        Ok(specs)
    }
}

/// Run a resolved config and build its report (no files written).
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    let run = cfg.run_settings()?;
    let specs = cfg.specs()?;
    let box_of = |b: &Option<[f64; 2]>| {
        let b = b.expect("resolved config has a state box");
        Interval::new(b[0], b[1])
    };
    let mut report = match &cfg.experiment {
        ExperimentSpec::UniquenessGapExperiment {
            x0,
            deltas,
            state_box,
        } => uniqueness_gap_experiment(&specs[0], *x0, deltas, box_of(state_box), &run)?,
        ExperimentSpec::SlantedZeroExperiment { x0 } => {
            let second = specs.get(1).unwrap_or(&specs[0]);
            slanted_zero_experiment((&specs[0], second), (x0[0], x0[1]), &run)?
        }
        ExperimentSpec::ComparisonExperiment {
            x0,
            state_box,
            negative_control,
        } => comparison_experiment(
            (&specs[0], &specs[1]),
            (x0[0], x0[1]),
            box_of(state_box),
            *negative_control,
            &run,
        )?,
        ExperimentSpec::LatticeExperiment { x0, refinement } => {
            lattice_experiment(&specs[0], (x0[0], x0[1]), refinement, &run)?
        }
        ExperimentSpec::BigJumpEquivalenceExperiment {
            x0,
            threshold,
            forced_atoms,
        } => {
            big_jump_equivalence_experiment(&specs[0], *x0, *threshold, &atoms(forced_atoms), &run)?
        }
        ExperimentSpec::SpectrallyPositiveExperiment {
            g,
            alpha,
            x0,
            deltas,
        } => spectrally_positive_experiment(*g, *alpha, *x0, deltas, cfg.window()?, &run)?,
        ExperimentSpec::StrongOrderExperiment {
            mu,
            sigma,
            x0,
            steps,
        } => strong_order_experiment(*mu, *sigma, *x0, steps, &run)?,
    };
    report.config = Some(serde_json::to_value(cfg).map_err(|e| CliError::Schema(e.to_string()))?);
    Ok(report)
}

fn atoms(pairs: &[[f64; 2]]) -> Vec<Atom> {
    pairs
        .iter()
        .map(|p| Atom {
            time: p[0],
            mark: p[1],
        })
        .collect()
}

/// Solution legs (spec, x0) to dump as path CSVs.
fn dump_legs(cfg: &ExperimentConfig) -> Result<Vec<(SdeSpec, f64)>, CliError> {
    let specs = cfg.specs()?;
    Ok(match &cfg.experiment {
        ExperimentSpec::UniquenessGapExperiment { x0, deltas, .. } => {
            let mut legs = vec![(specs[0].clone(), *x0)];
            legs.extend(deltas.iter().map(|d| (specs[0].clone(), x0 + d)));
            legs
        }
        ExperimentSpec::SlantedZeroExperiment { x0 } => {
            let second = specs.get(1).unwrap_or(&specs[0]).clone();
            vec![(specs[0].clone(), x0[0]), (second, x0[1])]
        }
        ExperimentSpec::ComparisonExperiment { x0, .. } => {
            vec![(specs[0].clone(), x0[0]), (specs[1].clone(), x0[1])]
        }
        ExperimentSpec::LatticeExperiment { x0, .. } => {
            vec![(specs[0].clone(), x0[0]), (specs[0].clone(), x0[1])]
        }
        ExperimentSpec::BigJumpEquivalenceExperiment { x0, .. } => vec![(specs[0].clone(), *x0)],
        ExperimentSpec::SpectrallyPositiveExperiment { g, alpha, x0, .. } => {
            let label = ModelLabel::SpectrallyPositive {
                g: *g,
                alpha: *alpha,
                drift: 0.0,
                vol: 0.0,
            };
            vec![(builtin_in_window(&label, cfg.window()?)?, *x0)]
        }
        ExperimentSpec::StrongOrderExperiment { mu, sigma, x0, .. } => {
            vec![(
                builtin_in_window(
                    &ModelLabel::Gbm {
                        mu: *mu,
                        sigma: *sigma,
                    },
                    None,
                )?,
                *x0,
            )]
        }
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Write `<paths>/<experiment>.seed<seed>.leg<i>.csv` for every seed and leg.
fn dump_paths(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let legs = dump_legs(cfg)?;
    let run = cfg.run_settings()?;
    let grid = TimeGrid::uniform(run.t_end, run.base_step)?;
    let forced = match &cfg.experiment {
        ExperimentSpec::BigJumpEquivalenceExperiment { forced_atoms, .. } => atoms(forced_atoms),
        _ => Vec::new(),
    };
    let measure = *legs[0].0.measure();
    let paths_dir = dir.join("paths");
    fs::create_dir_all(&paths_dir).map_err(io_err(&paths_dir))?;
    let mut written = Vec::new();
    for &seed in &run.seeds {
        let noise = if forced.is_empty() {
            NoiseRealization::sample(&grid, &measure, seed)?
        } else {
            NoiseRealization::with_atoms(&grid, &measure, seed, forced.clone())?
        };
        for (i, (spec, x0)) in legs.iter().enumerate() {
            let path = solve(spec, &noise, *x0, &run.solve)?;
            let file = paths_dir.join(format!("{}.seed{seed}.leg{i}.csv", cfg.experiment_name()));
            write(&file, &path.to_csv())?;
            written.push(file);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed_offset: u64,
    pub out: Option<PathBuf>,
    pub dump_paths: bool,
}

pub struct RunOutcome {
    pub report: ExperimentReport,
    pub report_path: PathBuf,
    pub seeds_path: PathBuf,
    pub path_dumps: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        exit_code(self.report.verdict)
    }
}

/// Resolve, run and write `<out>/<experiment>.report.json` and `.seeds.csv`.
pub fn run(config_path: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    let resolved = cfg.resolved(opts.seed_offset);
    let report = execute(&resolved)?;
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let name = resolved.experiment_name();
    let report_path = out.join(format!("{name}.report.json"));
    let seeds_path = out.join(format!("{name}.seeds.csv"));
    write(&report_path, &(report.to_json() + "\n"))?;
    write(&seeds_path, &report.seeds_csv())?;
    let path_dumps = if opts.dump_paths {
        dump_paths(&resolved, &out)?
    } else {
        Vec::new()
    };
    Ok(RunOutcome {
        report,
        report_path,
        seeds_path,
        path_dumps,
    })
}

/// Listing for `list <kind>`.
pub fn list(kind: &str) -> Result<String, CliError> {
    let rows: Vec<(&str, &str, &str)> = match kind {
        "experiments" => experiment_catalog()
            .into_iter()
            .map(|e| (e.name, e.description, e.params))
            .collect(),
        "models" => crate::model::catalog()
            .into_iter()
            .map(|m| (m.name, m.description, m.params))
            .collect(),
        other => {
            return Err(CliError::Usage(format!(
                "unknown list kind `{other}` (expected `experiments` or `models`)"
            )))
        }
    };
    let mut out = String::new();
    for (name, desc, params) in rows {
        out.push_str(&format!("{name}\n    {desc}\n    params: {params}\n"));
    }
    Ok(out)
}
