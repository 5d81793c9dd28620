//! Named Monte Carlo experiments: each one couples solutions on shared noise,
//! computes per-seed statistics, and folds them (in seed order) into a
//! verdict.
//!
//! Tolerances follow τ(Δt) = K·√Δt. K is calibrated once, deterministically,
//! from the strong error of the Euler scheme on geometric Brownian motion.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localtime::{slanted_local_time, LocalTimeError};
use crate::model::{
    builtin_in_window, check_F_L1_lipschitz, check_lipschitz_b, check_monotone_jump_map,
    ConditionReport, GFunction, ModelError, ModelLabel, SamplePlan, SdeSpec, Verdict, Witness,
};
use crate::noise::{Atom, Interval, LevyMeasure, NoiseError, NoiseRealization, TimeGrid};
use crate::solver::{
    coupled_solve, sde_residual, segmented_solve, solve, JumpPath, SolveConfig, SolverError,
};
use crate::stats::{loglog_slope, mean, std_err};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("invalid experiment setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    LocalTime(#[from] LocalTimeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentVerdict {
    Pass,
    Fail,
    /// A precondition failed; nothing was simulated.
    Refused,
    Inconclusive,
}

impl ExperimentVerdict {
    /// Fail dominates Inconclusive dominates Pass.
    fn worst(self, other: ExperimentVerdict) -> ExperimentVerdict {
        use ExperimentVerdict::*;
        match (self, other) {
            (Refused, _) | (_, Refused) => Refused,
            (Fail, _) | (_, Fail) => Fail,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub stats: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub experiment: String,
    pub specs: Vec<String>,
    pub seeds: Vec<u64>,
    pub rows: Vec<SeedRow>,
    pub aggregate: BTreeMap<String, f64>,
    pub verdict: ExperimentVerdict,
    pub tolerances: BTreeMap<String, f64>,
    pub preconditions: Vec<ConditionReport>,
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sub_reports: Vec<ExperimentReport>,
    /// Fully resolved configuration that produced this report (set by the CLI).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl ExperimentReport {
    fn new(experiment: &str, specs: Vec<String>, run: &RunSettings) -> Self {
        let mut tolerances = BTreeMap::new();
        tolerances.insert("K".to_string(), run.k);
        tolerances.insert("tau".to_string(), run.tau());
        tolerances.insert("base_step".to_string(), run.base_step);
        tolerances.insert("t_end".to_string(), run.t_end);
        ExperimentReport {
            schema_version: REPORT_SCHEMA_VERSION,
            experiment: experiment.to_string(),
            specs,
            seeds: run.seeds.clone(),
            rows: Vec::new(),
            aggregate: BTreeMap::new(),
            verdict: ExperimentVerdict::Pass,
            tolerances,
            preconditions: Vec::new(),
            notes: Vec::new(),
            sub_reports: Vec::new(),
            config: None,
        }
    }

    fn refuse(mut self, reports: Vec<ConditionReport>) -> Self {
        self.verdict = ExperimentVerdict::Refused;
        self.notes
            .push("a precondition failed; no paths were simulated".to_string());
        self.preconditions = reports;
        self
    }

    /// Per-seed values of one statistic, in seed order (rows lacking it are skipped).
    pub fn column(&self, stat: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.stats.get(stat).copied())
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.verdict == ExperimentVerdict::Pass
    }

    /// Long-format CSV: seed, statistic, value.
    pub fn seeds_csv(&self) -> String {
        let mut out = String::from("seed,statistic,value\n");
        for row in &self.rows {
            for (k, v) in &row.stats {
                out.push_str(&format!("{},{},{:?}\n", row.seed, k, v));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Horizon, grid, seeds and tolerance shared by every experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub t_end: f64,
    pub base_step: f64,
    pub seeds: Vec<u64>,
    /// Tolerance constant K in τ = K√Δt.
    pub k: f64,
    pub solve: SolveConfig,
}

impl RunSettings {
    pub fn new(t_end: f64, base_step: f64, seeds: Vec<u64>) -> Self {
        RunSettings {
            t_end,
            base_step,
            seeds,
            k: calibrated_k(),
            solve: SolveConfig::new(base_step),
        }
    }

    /// Seeds `root + offset + i` for i < count.
    pub fn seed_range(root: u64, offset: u64, count: usize) -> Vec<u64> {
        (0..count as u64)
            .map(|i| root.wrapping_add(offset).wrapping_add(i))
            .collect()
    }

    pub fn with_k(mut self, k: f64) -> Self {
        self.k = k;
        self
    }

    pub fn with_step(&self, base_step: f64) -> Self {
        RunSettings {
            base_step,
            solve: SolveConfig {
                base_step,
                ..self.solve
            },
            ..self.clone()
        }
    }

    pub fn tau(&self) -> f64 {
        self.k * self.base_step.sqrt()
    }

    fn grid(&self) -> Result<TimeGrid, HarnessError> {
        Ok(TimeGrid::uniform(self.t_end, self.base_step)?)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Invalid("seed range is empty".into()));
        }
        if !(self.k >= 0.0) {
            return Err(HarnessError::Invalid(format!(
                "tolerance constant must be >= 0, got {}",
                self.k
            )));
        }
        if self.solve.base_step != self.base_step {
            return Err(HarnessError::Invalid(
                "solver step differs from the grid step".into(),
            ));
        }
        Ok(())
    }
}

/// Run `f` on every seed in parallel; rows come back in seed order.
fn per_seed<T, F>(run: &RunSettings, f: F) -> Result<Vec<T>, HarnessError>
where
    T: Send,
    F: Fn(u64) -> Result<T, HarnessError> + Sync,
{
    run.seeds.par_iter().map(|&s| f(s)).collect()
}

fn row(seed: u64, stats: &[(&str, f64)]) -> SeedRow {
    SeedRow {
        seed,
        stats: stats.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

fn aborted_row(seed: u64, path: &JumpPath) -> SeedRow {
    let a = path.abort.as_ref().expect("aborted path");
    row(seed, &[("aborted", 1.0), ("abort_time", a.time)])
}

fn shared_measure(specs: (&SdeSpec, &SdeSpec)) -> Result<LevyMeasure, HarnessError> {
    if specs.0.measure() != specs.1.measure() {
        return Err(SolverError::MeasureMismatch {
            first: specs.0.label().to_string(),
            second: specs.1.label().to_string(),
        }
        .into());
    }
    Ok(*specs.0.measure())
}

fn note_window(report: &mut ExperimentReport, m: &LevyMeasure) {
    if m.mass() > 0.0 {
        report.notes.push(format!(
            "jump window: {} z_min={} z_max={}{}; jumps outside it are neither sampled nor compensated",
            m.kind(),
            m.z_min(),
            m.z_max(),
            m.alpha().map_or(String::new(), |a| format!(" alpha={a}"))
        ));
    }
}

// ---------------------------------------------------------------------------
// Tolerance calibration

/// Calibration model: gbm with μ = 0.05, σ = 1, x0 = 1, T = 1.
pub const CALIBRATION_MU: f64 = 0.05;
pub const CALIBRATION_SIGMA: f64 = 1.0;
pub const CALIBRATION_STEPS: [f64; 2] = [1e-2, 1e-3];
pub const CALIBRATION_SEEDS: u64 = 100;

/// max over calibration seeds and steps of sup_t |X − X_exact| / √Δt.
pub fn calibrated_k() -> f64 {
    static K: OnceLock<f64> = OnceLock::new();
    *K.get_or_init(|| {
        let seeds: Vec<u64> = (0..CALIBRATION_SEEDS).collect();
        CALIBRATION_STEPS
            .iter()
            .map(|&dt| {
                let errs =
                    gbm_strong_errors(CALIBRATION_MU, CALIBRATION_SIGMA, 1.0, 1.0, dt, &seeds)
                        .expect("calibration model is valid");
                errs.iter().fold(0.0f64, |m, e| m.max(*e)) / dt.sqrt()
            })
            .fold(0.0, f64::max)
    })
}

/// sup over knots of |Euler − exact| for gbm, one entry per seed.
pub fn gbm_strong_errors(
    mu: f64,
    sigma: f64,
    x0: f64,
    t_end: f64,
    dt: f64,
    seeds: &[u64],
) -> Result<Vec<f64>, HarnessError> {
    let spec = builtin_in_window(&ModelLabel::Gbm { mu, sigma }, None)?;
    let grid = TimeGrid::uniform(t_end, dt)?;
    let cfg = SolveConfig::new(dt);
    seeds
        .par_iter()
        .map(|&seed| {
            let noise = NoiseRealization::sample(&grid, &LevyMeasure::empty(), seed)?;
            let path = solve(&spec, &noise, x0, &cfg)?;
            let w = &noise.brownian().values;
            let err = path
                .times
                .iter()
                .zip(&path.values)
                .zip(w)
                .map(|((t, x), w)| {
                    (x - x0 * ((mu - 0.5 * sigma * sigma) * t + sigma * w).exp()).abs()
                })
                .fold(0.0f64, f64::max);
            Ok(err)
        })
        .collect()
}

/// Strong convergence order of Euler on gbm: slope of the mean sup-error
/// against Δt on log-log axes.
pub fn strong_order_experiment(
    mu: f64,
    sigma: f64,
    x0: f64,
    steps: &[f64],
    run: &RunSettings,
) -> Result<ExperimentReport, HarnessError> {
    run.validate()?;
    if steps.len() < 2 {
        return Err(HarnessError::Invalid(
            "strong order needs at least two step sizes".into(),
        ));
    }
    let label = ModelLabel::Gbm { mu, sigma }.tag();
    let mut report = ExperimentReport::new("strong_order", vec![label], run);
    let mut errors = Vec::new();
    let mut per_step = Vec::new();
    for &dt in steps {
        let e = gbm_strong_errors(mu, sigma, x0, run.t_end, dt, &run.seeds)?;
        let m = mean(&e);
        report
            .aggregate
            .insert(format!("mean_sup_error[{dt:e}]"), m);
        report
            .aggregate
            .insert(format!("std_err[{dt:e}]"), std_err(&e));
        errors.push(m);
        per_step.push(e);
    }
    for (i, &seed) in run.seeds.iter().enumerate() {
        let stats: Vec<(String, f64)> = steps
            .iter()
            .zip(&per_step)
            .map(|(dt, e)| (format!("sup_error[{dt:e}]"), e[i]))
            .collect();
        report.rows.push(SeedRow {
            seed,
            stats: stats.into_iter().collect(),
        });
    }
    let order = loglog_slope(steps, &errors);
    report.aggregate.insert("order".into(), order);
    report
        .tolerances
        .insert("order_lo".into(), STRONG_ORDER_BAND.0);
    report
        .tolerances
        .insert("order_hi".into(), STRONG_ORDER_BAND.1);
    report.verdict = if (STRONG_ORDER_BAND.0..=STRONG_ORDER_BAND.1).contains(&order) {
        ExperimentVerdict::Pass
    } else {
        ExperimentVerdict::Fail
    };
    Ok(report)
}

pub const STRONG_ORDER_BAND: (f64, f64) = (0.35, 0.65);

// ---------------------------------------------------------------------------
// Uniqueness gap

/// Mean sup-gap / δ must stay below this factor times e^{cT}.
pub const GRONWALL_SLACK: f64 = 1.5;

/// Coupled solutions from x0 and x0 + δ; pass when E sup|X¹ − X²| ≤ 1.5·e^{cT}·δ
/// for every δ, with c = c_b + 2c_F from the precondition checks.
pub fn uniqueness_gap_experiment(
    spec: &SdeSpec,
    x0: f64,
    deltas: &[f64],
    state_box: Interval,
    run: &RunSettings,
) -> Result<ExperimentReport, HarnessError> {
    run.validate()?;
    if deltas.is_empty() {
        return Err(HarnessError::Invalid(
            "at least one gap δ is required".into(),
        ));
    }
    let mut report = ExperimentReport::new(
        "uniqueness_gap_experiment",
        vec![spec.label().to_string()],
        run,
    );
    let plan = SamplePlan::new(200);
    let lb = check_lipschitz_b(spec, state_box, &plan);
    let lf = check_F_L1_lipschitz(spec, state_box, &plan);
    if !(lb.passed() && lf.passed()) {
        return Ok(report.refuse(vec![lb, lf]));
    }
    let c = lb.estimate.unwrap_or(0.0) + 2.0 * lf.estimate.unwrap_or(0.0);
    let envelope = GRONWALL_SLACK * (c * run.t_end).exp();
    report.preconditions = vec![lb, lf];
    report.tolerances.insert("lipschitz_c".into(), c);
    report.tolerances.insert("envelope".into(), envelope);
    note_window(&mut report, spec.measure());
    report.notes.push(
        "c = c_b + 2 c_F: the compensated jump integral is bounded by its μ and ν parts".into(),
    );

    let grid = run.grid()?;
    let measure = *spec.measure();
    let rows: Vec<SeedRow> = per_seed(run, |seed| {
        let noise = NoiseRealization::sample(&grid, &measure, seed)?;
        let base = solve(spec, &noise, x0, &run.solve)?;
        if base.abort.is_some() {
            return Ok(aborted_row(seed, &base));
        }
        let mut stats = BTreeMap::new();
        for &d in deltas {
            let other = solve(spec, &noise, x0 + d, &run.solve)?;
            if other.abort.is_some() {
                return Ok(aborted_row(seed, &other));
            }
            let gap = JumpPath::difference(&other, &base)?.sup_abs();
            stats.insert(format!("sup_gap[{d:e}]"), gap);
        }
        Ok(SeedRow { seed, stats })
    })?;
    report.rows = rows;

    let mut verdict = ExperimentVerdict::Pass;
    if report.rows.iter().any(|r| r.stats.contains_key("aborted")) {
        verdict = ExperimentVerdict::Inconclusive;
        report
            .notes
            .push("some paths hit the explosion guard".into());
    }
    for &d in deltas {
        let key = format!("sup_gap[{d:e}]");
        let gaps = report.column(&key);
        let m = mean(&gaps);
        report.aggregate.insert(format!("mean_{key}"), m);
        report
            .aggregate
            .insert(format!("std_err_{key}"), std_err(&gaps));
        let ok = if d == 0.0 {
            gaps.iter().all(|&g| g == 0.0)
        } else {
            let ratio = m / d.abs();
            report.aggregate.insert(format!("ratio[{d:e}]"), ratio);
            ratio <= envelope
        };
        if !ok {
            verdict = verdict.worst(ExperimentVerdict::Fail);
        }
    }
    report.verdict = verdict;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Slanted local time of the difference

/// ℒ⁰_T(X¹ − X²) per seed; pass when max |ℒ̂⁰| ≤ τ.
pub fn slanted_zero_experiment(
    specs: (&SdeSpec, &SdeSpec),
    x0s: (f64, f64),
    run: &RunSettings,
) -> Result<ExperimentReport, HarnessError> {
    run.validate()?;
    let measure = shared_measure(specs)?;
    let mut report = ExperimentReport::new(
        "slanted_zero_experiment",
        vec![specs.0.label().to_string(), specs.1.label().to_string()],
        run,
    );
    note_window(&mut report, &measure);
    let grid = run.grid()?;
    let rows: Vec<SeedRow> = per_seed(run, |seed| {
        let noise = NoiseRealization::sample(&grid, &measure, seed)?;
        let (a, b) = coupled_solve(specs, x0s, &noise, &run.solve)?;
        if a.abort.is_some() {
            return Ok(aborted_row(seed, &a));
        }
        if b.abort.is_some() {
            return Ok(aborted_row(seed, &b));
        }
        let diff = JumpPath::difference(&a, &b)?;
        let lt = slanted_local_time(&diff, 0.0);
        Ok(row(
            seed,
            &[
                ("slanted_lt0", lt.value),
                ("end_term", lt.end_term),
                ("start_term", lt.start_term),
                ("sign_integral", lt.sign_integral),
                ("sup_abs_diff", diff.sup_abs()),
            ],
        ))
    })?;
    report.rows = rows;
    let lts = report.column("slanted_lt0");
    let max_abs = lts.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    report
        .aggregate
        .insert("max_abs_slanted_lt0".into(), max_abs);
    report
        .aggregate
        .insert("mean_slanted_lt0".into(), mean(&lts));
    report
        .aggregate
        .insert("std_err_slanted_lt0".into(), std_err(&lts));
    let mut verdict = if max_abs <= run.tau() {
        ExperimentVerdict::Pass
    } else {
        ExperimentVerdict::Fail
    };
    if lts.len() < report.rows.len() {
        verdict = verdict.worst(ExperimentVerdict::Inconclusive);
    }
    report.verdict = verdict;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Comparison

pub const COMPARISON_STATE_MESH: usize = 2001;
pub const COMPARISON_Z_MESH: usize = 41;

fn mesh(state_box: Interval, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| state_box.lo + state_box.width() * (i as f64 / (n - 1) as f64))
        .collect()
}

fn order_report(
    condition: &str,
    violation: Option<(Vec<f64>, f64, String)>,
    samples: usize,
) -> ConditionReport {
    ConditionReport {
        condition: condition.to_string(),
        verdict: if violation.is_some() {
            Verdict::Fail
        } else {
            Verdict::Pass
        },
        witness: violation.map(|(points, value, description)| Witness {
            points,
            value,
            description,
        }),
        estimate: None,
        samples,
        seed: 0,
        notes: Vec::new(),
    }
}

/// Hypotheses of the comparison theorems on a state mesh: x0¹ ≤ x0², b₁ ≤ b₂,
/// σ₁ = σ₂, and x₁ ≤ x₂ ⇒ x₁ + F₁(x₁, z) ≤ x₂ + F₂(x₂, z).
pub fn comparison_preconditions(
    specs: (&SdeSpec, &SdeSpec),
    x0s: (f64, f64),
    state_box: Interval,
) -> Vec<ConditionReport> {
    let xs = mesh(state_box, COMPARISON_STATE_MESH);
    let initial = order_report(
        "initial_order",
        (x0s.0 > x0s.1).then(|| {
            (
                vec![x0s.0, x0s.1],
                x0s.0 - x0s.1,
                "x0 of the first leg exceeds the second".into(),
            )
        }),
        1,
    );
    let drift = order_report(
        "drift_order",
        xs.iter().find_map(|&x| {
            let (b1, b2) = (specs.0.drift(x), specs.1.drift(x));
            (b1 > b2).then(|| (vec![x], b1 - b2, format!("b1({x}) = {b1} > b2({x}) = {b2}")))
        }),
        xs.len(),
    );
    let sigma = order_report(
        "common_sigma",
        xs.iter().find_map(|&x| {
            let (s1, s2) = (specs.0.sigma(x), specs.1.sigma(x));
            (s1 != s2).then(|| {
                (
                    vec![x],
                    s1 - s2,
                    format!("sigma1({x}) = {s1} differs from sigma2({x}) = {s2}"),
                )
            })
        }),
        xs.len(),
    );
    // Jump ordering on (x1 <= x2, z): coarse state mesh keeps this quadratic loop cheap.
    let coarse = mesh(state_box, 101);
    let zs = z_mesh(specs.0.measure(), COMPARISON_Z_MESH);
    let mut witness = None;
    let mut samples = 0;
    'outer: for &z in &zs {
        for (i, &x1) in coarse.iter().enumerate() {
            for &x2 in &coarse[i..] {
                samples += 1;
                let l = x1 + specs.0.jump(x1, z);
                let r = x2 + specs.1.jump(x2, z);
                if l > r + 1e-12 * (1.0 + r.abs()) {
                    witness = Some((
                        vec![x1, x2, z],
                        l - r,
                        format!("x1 + F1(x1, z) = {l} > x2 + F2(x2, z) = {r}"),
                    ));
                    break 'outer;
                }
            }
        }
    }
    let jumps = order_report("jump_order", witness, samples);
    vec![initial, drift, sigma, jumps]
}

fn z_mesh(m: &LevyMeasure, per_piece: usize) -> Vec<f64> {
    let mut zs = Vec::new();
    for p in m.pieces() {
        for i in 0..per_piece {
            let f = i as f64 / (per_piece - 1) as f64;
            let z = if p.hi.is_finite() {
                p.lo + f * (p.hi - p.lo)
            } else {
                p.lo * 1e6f64.powf(f)
            };
            if m.contains(z) {
                zs.push(z);
            }
        }
    }
    zs
}

/// Count knots where X¹ > X² + τ. Pass iff there are none. With
/// `negative_control` the run proceeds even when the hypotheses fail (the
/// point is to see violations).
pub fn comparison_experiment(
    specs: (&SdeSpec, &SdeSpec),
    x0s: (f64, f64),
    state_box: Interval,
    negative_control: bool,
    run: &RunSettings,
) -> Result<ExperimentReport, HarnessError> {
    run.validate()?;
    let measure = shared_measure(specs)?;
    let mut report = ExperimentReport::new(
        "comparison_experiment",
        vec![specs.0.label().to_string(), specs.1.label().to_string()],
        run,
    );
    let pre = comparison_preconditions(specs, x0s, state_box);
    let all_pass = pre.iter().all(|r| r.passed());
    if !all_pass && !negative_control {
        return Ok(report.refuse(pre));
    }
    if negative_control {
        report
            .notes
            .push("negative control: simulated regardless of the hypothesis checks".into());
    }
    report.preconditions = pre;
    report.notes.push(
        "ordering is checked at grid knots only; crossings between knots are not observed".into(),
    );
    note_window(&mut report, &measure);
    let tau = run.tau();
    let grid = run.grid()?;
    let rows: Vec<SeedRow> = per_seed(run, |seed| {
        let noise = NoiseRealization::sample(&grid, &measure, seed)?;
        let (a, b) = coupled_solve(specs, x0s, &noise, &run.solve)?;
        if a.abort.is_some() {
            return Ok(aborted_row(seed, &a));
        }
        if b.abort.is_some() {
            return Ok(aborted_row(seed, &b));
        }
        let mut violations = 0usize;
        let mut worst = f64::NEG_INFINITY;
        for (x1, x2) in a.values.iter().zip(&b.values) {
            let d = x1 - x2;
            worst = worst.max(d);
            if d > tau {
                violations += 1;
            }
        }
        Ok(row(
            seed,
            &[("violations", violations as f64), ("max_excess", worst)],
        ))
    })?;
    report.rows = rows;
    let v = report.column("violations");
    let total: f64 = v.iter().sum();
    let seeds_with = v.iter().filter(|&&x| x > 0.0).count();
    report.aggregate.insert("violations".into(), total);
    report
        .aggregate
        .insert("seeds_with_violations".into(), seeds_with as f64);
    let excess = report.column("max_excess");
    report.aggregate.insert(
        "max_excess".into(),
        excess.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let mut verdict = if total == 0.0 {
        ExperimentVerdict::Pass
    } else {
        ExperimentVerdict::Fail
    };
    if v.len() < report.rows.len() {
        verdict = verdict.worst(ExperimentVerdict::Inconclusive);
    }
    report.verdict = verdict;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Lattice closure

/// Residuals below this count as zero when fitting the refinement order.
const RESIDUAL_FLOOR: f64 = 1e-300;

/// Refinement exponents at or above this pass (order ½ with the same slack
/// as the strong-order band).
pub const LATTICE_ORDER_MIN: f64 = 0.35;

/// Y = X¹ ∨ X², Z = X¹ ∧ X²; pass when sup|R| ≤ τ for both on the base step.
/// With a refinement list, also fit the order of the mean residual in Δt.
pub fn lattice_experiment(
    spec: &SdeSpec,
    x0s: (f64, f64),
    refinement: &[f64],
    run: &RunSettings,
) -> Result<ExperimentReport, HarnessError> {
    run.validate()?;
    let mut report =
        ExperimentReport::new("lattice_experiment", vec![spec.label().to_string()], run);
    report.notes.push(
        "only the lattice-closure step is exercised; uniqueness in law is assumed, not checked"
            .into(),
    );
    note_window(&mut report, spec.measure());
    let mut steps = vec![run.base_step];
    for &dt in refinement {
        if !steps.contains(&dt) {
            steps.push(dt);
        }
    }
    let mut verdict = ExperimentVerdict::Pass;
    let mut mean_residuals = Vec::new();
    let mut per_step_rows: Vec<Vec<SeedRow>> = Vec::new();
    for (i, &dt) in steps.iter().enumerate() {
        let r = run.with_step(dt);
        let grid = r.grid()?;
        let measure = *spec.measure();
        let rows: Vec<SeedRow> = per_seed(&r, |seed| {
            let noise = NoiseRealization::sample(&grid, &measure, seed)?;
            let (a, b) = coupled_solve((spec, spec), x0s, &noise, &r.solve)?;
            if a.abort.is_some() {
                return Ok(aborted_row(seed, &a));
            }
            if b.abort.is_some() {
                return Ok(aborted_row(seed, &b));
            }
            let y = JumpPath::combine(&a, &b, "max", f64::max)?;
            let z = JumpPath::combine(&a, &b, "min", f64::min)?;
            let sup = |p: &JumpPath| -> Result<f64, HarnessError> {
                Ok(sde_residual(spec, &noise, p, &r.solve)?
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs())))
            };
            Ok(row(
                seed,
                &[
                    (&format!("residual_max[{dt:e}]"), sup(&y)?),
                    (&format!("residual_min[{dt:e}]"), sup(&z)?),
                ],
            ))
        })?;
        let ry: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.stats.get(&format!("residual_max[{dt:e}]")).copied())
            .collect();
        let rz: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.stats.get(&format!("residual_min[{dt:e}]")).copied())
            .collect();
        if ry.len() < rows.len() {
            verdict = verdict.worst(ExperimentVerdict::Inconclusive);
        }
        let sup_all = ry.iter().chain(&rz).fold(0.0f64, |m, v| m.max(*v));
        report
            .aggregate
            .insert(format!("sup_residual[{dt:e}]"), sup_all);
        let m = 0.5 * (mean(&ry) + mean(&rz));
        report.aggregate.insert(format!("mean_residual[{dt:e}]"), m);
        mean_residuals.push(m);
        if i == 0 && sup_all > run.tau() {
            verdict = verdict.worst(ExperimentVerdict::Fail);
        }
        per_step_rows.push(rows);
    }
    // Merge rows across steps (same seed order everywhere).
    report.rows = (0..run.seeds.len())
        .map(|i| {
            let mut stats = BTreeMap::new();
            for rows in &per_step_rows {
                stats.extend(rows[i].stats.clone());
            }
            SeedRow {
                seed: run.seeds[i],
                stats,
            }
        })
        .collect();
    if steps.len() > 1 {
        report
            .tolerances
            .insert("order_min".into(), LATTICE_ORDER_MIN);
        if mean_residuals.iter().all(|&m| m <= RESIDUAL_FLOOR) {
            report
                .notes
                .push("residual is identically zero at every step: the legs never switch".into());
        } else if mean_residuals.iter().any(|&m| m <= RESIDUAL_FLOOR) {
            report
                .notes
                .push("residual vanished at some steps; refinement order not fitted".into());
        } else {
            let order = loglog_slope(&steps, &mean_residuals);
            report.aggregate.insert("residual_order".into(), order);
            if order < LATTICE_ORDER_MIN {
                verdict = verdict.worst(ExperimentVerdict::Fail);
            }
        }
    }
    report.verdict = verdict;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Big-jump restart

/// segmented_solve must reproduce solve bit for bit on every seed.
/// `forced_atoms`, when nonempty, replaces the sampled atom list.
pub fn big_jump_equivalence_experiment(
    spec: &SdeSpec,
    x0: f64,
    threshold: f64,
    forced_atoms: &[Atom],
    run: &RunSettings,
) -> Result<ExperimentReport, HarnessError> {
    run.validate()?;
    let mut report = ExperimentReport::new(
        "big_jump_equivalence_experiment",
        vec![spec.label().to_string()],
        run,
    );
    report
        .tolerances
        .insert("big_jump_threshold".into(), threshold);
    note_window(&mut report, spec.measure());
    if !forced_atoms.is_empty() {
        report.notes.push(format!(
            "{} forced atoms replace the sampled ones",
            forced_atoms.len()
        ));
    }
    let grid = run.grid()?;
    let measure = *spec.measure();
    let rows: Vec<SeedRow> = per_seed(run, |seed| {
        let noise = if forced_atoms.is_empty() {
            NoiseRealization::sample(&grid, &measure, seed)?
        } else {
            NoiseRealization::with_atoms(&grid, &measure, seed, forced_atoms.to_vec())?
        };
        let direct = solve(spec, &noise, x0, &run.solve)?;
        let seg = segmented_solve(spec, &noise, x0, &run.solve, threshold)?;
        let equal = direct.bitwise_eq(&seg.path);
        Ok(row(
            seed,
            &[
                ("equal", if equal { 1.0 } else { 0.0 }),
                ("segments", seg.segments.len() as f64),
                ("atoms", noise.atoms().len() as f64),
                ("aborted", if direct.abort.is_some() { 1.0 } else { 0.0 }),
            ],
        ))
    })?;
    report.rows = rows;
    let eq = report.column("equal");
    let seg = report.column("segments");
    report
        .aggregate
        .insert("seeds_equal".into(), eq.iter().sum());
    report.aggregate.insert("mean_segments".into(), mean(&seg));
    report.aggregate.insert(
        "max_segments".into(),
        seg.iter().copied().fold(0.0, f64::max),
    );
    report.verdict = if eq.iter().all(|&e| e == 1.0) {
        ExperimentVerdict::Pass
    } else {
        ExperimentVerdict::Fail
    };
    Ok(report)
}

// ---------------------------------------------------------------------------
// Spectrally positive stable driver

pub const G_MESH: Interval = Interval::new(-5.0, 5.0);

/// dX = G(X−) dZ: check G(0) = 0 and monotonicity, the monotone jump map,
/// then run the uniqueness-gap and slanted-zero experiments on the induced spec.
pub fn spectrally_positive_experiment(
    g: GFunction,
    alpha: f64,
    x0: f64,
    deltas: &[f64],
    window: Option<LevyMeasure>,
    run: &RunSettings,
) -> Result<ExperimentReport, HarnessError> {
    run.validate()?;
    let label = ModelLabel::SpectrallyPositive {
        g,
        alpha,
        drift: 0.0,
        vol: 0.0,
    };
    let mut report =
        ExperimentReport::new("spectrally_positive_experiment", vec![label.tag()], run);

    let g0 = g.eval(0.0);
    let zero_check = order_report(
        "g_vanishes_at_zero",
        (g0 != 0.0).then(|| (vec![0.0], g0, format!("G(0) = {g0}"))),
        1,
    );
    let xs = mesh(G_MESH, COMPARISON_STATE_MESH);
    let mono = order_report(
        "g_nondecreasing",
        xs.windows(2).find_map(|w| {
            let (a, b) = (g.eval(w[0]), g.eval(w[1]));
            (a > b).then(|| {
                (
                    vec![w[0], w[1]],
                    a - b,
                    format!("G({}) = {a} > G({}) = {b}", w[0], w[1]),
                )
            })
        }),
        xs.len(),
    );
    let index = order_report(
        "alpha_in_(1,2)",
        (!(alpha > 1.0 && alpha < 2.0))
            .then(|| (vec![alpha], alpha, "stability index outside (1, 2)".into())),
        1,
    );
    if !(zero_check.passed() && mono.passed() && index.passed()) {
        return Ok(report.refuse(vec![zero_check, mono, index]));
    }
    let spec = builtin_in_window(&label, window)?;
    let jump_map = check_monotone_jump_map(&spec, Interval::new(-1.0, 1.0), 41)?;
    let jump_ok = jump_map.passed();
    report.preconditions = vec![zero_check, mono, index, jump_map];
    if !jump_ok {
        report.verdict = ExperimentVerdict::Refused;
        return Ok(report);
    }
    let state_box = Interval::new(x0 - 2.0, x0 + 2.0);
    let gap = uniqueness_gap_experiment(&spec, x0, deltas, state_box, run)?;
    let d_max = deltas
        .iter()
        .copied()
        .fold(0.0f64, |m, d| if d.abs() > m.abs() { d } else { m });
    let slanted = slanted_zero_experiment((&spec, &spec), (x0, x0 + d_max), run)?;
    report.verdict = gap.verdict.worst(slanted.verdict);
    for (k, v) in gap.aggregate.iter() {
        report.aggregate.insert(format!("gap.{k}"), *v);
    }
    for (k, v) in slanted.aggregate.iter() {
        report.aggregate.insert(format!("slanted.{k}"), *v);
    }
    report.rows = gap
        .rows
        .iter()
        .zip(&slanted.rows)
        .map(|(a, b)| {
            let mut stats = a.stats.clone();
            for (k, v) in &b.stats {
                stats.insert(format!("slanted.{k}"), *v);
            }
            SeedRow {
                seed: a.seed,
                stats,
            }
        })
        .collect();
    note_window(&mut report, spec.measure());
    report.sub_reports = vec![gap, slanted];
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin;

    fn quick(seeds: usize, dt: f64) -> RunSettings {
        RunSettings::new(1.0, dt, RunSettings::seed_range(7, 0, seeds))
    }

    #[test]
    fn calibration_is_deterministic_and_positive() {
        let k = calibrated_k();
        assert!(k > 0.0 && k.is_finite());
        assert_eq!(k, calibrated_k());
    }

    #[test]
    fn zero_delta_gap_is_exactly_zero() {
        let spec = builtin(&ModelLabel::Gbm {
            mu: 0.05,
            sigma: 0.2,
        })
        .unwrap();
        let r = uniqueness_gap_experiment(
            &spec,
            1.0,
            &[0.0],
            Interval::new(-1.0, 3.0),
            &quick(5, 1e-2),
        )
        .unwrap();
        assert_eq!(r.verdict, ExperimentVerdict::Pass);
        assert!(r.column("sup_gap[0e0]").iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_lipschitz_drift_is_refused() {
        let spec = SdeSpec::builder("sqrt")
            .drift(|x: f64| x.abs().sqrt())
            .build()
            .unwrap();
        let r = uniqueness_gap_experiment(
            &spec,
            0.0,
            &[1e-3],
            Interval::new(-1.0, 1.0),
            &quick(3, 1e-2),
        )
        .unwrap();
        assert_eq!(r.verdict, ExperimentVerdict::Refused);
        assert!(r.rows.is_empty());
    }

    #[test]
    fn swapped_drifts_refused_unless_negative_control() {
        let a = builtin(&ModelLabel::Affine {
            b0: 3.0,
            b1: 0.0,
            s0: 1.0,
            s1: 0.0,
        })
        .unwrap();
        let b = builtin(&ModelLabel::Affine {
            b0: 0.0,
            b1: 0.0,
            s0: 1.0,
            s1: 0.0,
        })
        .unwrap();
        let run = quick(5, 1e-2);
        let bx = Interval::new(-3.0, 3.0);
        assert_eq!(
            comparison_experiment((&a, &b), (0.0, 0.0), bx, false, &run)
                .unwrap()
                .verdict,
            ExperimentVerdict::Refused
        );
        let neg = comparison_experiment((&a, &b), (0.0, 0.0), bx, true, &run).unwrap();
        assert_eq!(neg.verdict, ExperimentVerdict::Fail);
        assert!(neg.aggregate["violations"] > 0.0);
    }

    #[test]
    fn g_with_nonzero_origin_is_refused() {
        let r = spectrally_positive_experiment(
            GFunction::Constant { c: 1.0 },
            1.5,
            0.0,
            &[1e-3],
            None,
            &quick(2, 1e-2),
        )
        .unwrap();
        assert_eq!(r.verdict, ExperimentVerdict::Refused);
    }

    #[test]
    fn csv_rows_are_long_format() {
        let spec = builtin(&ModelLabel::ConstantJump { c: 0.5 }).unwrap();
        let r = big_jump_equivalence_experiment(&spec, 0.0, 1.0, &[], &quick(2, 1e-2)).unwrap();
        let csv = r.seeds_csv();
        assert!(csv.starts_with("seed,statistic,value\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * 4);
    }
}
