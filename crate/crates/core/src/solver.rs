//! Jump-adapted Euler scheme driven by a frozen `NoiseRealization`.
//!
//! Per merged step: X ← X + σ(X)ΔW + b(X)Δt − Δt·C(X) with C the compensator
//! evaluated at the left endpoint; at an atom (s, z) the jump F(X_{s−}, z) is
//! added to the value reached by that step. `advance` and `apply_jump` are the
//! only places that arithmetic happens, so every caller (plain, coupled,
//! segmented, residual) reproduces the same bits.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SdeSpec;
use crate::noise::{NoiseRealization, NoiseWindow, Step};
use crate::quad::QuadError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error("solver base step {cfg} differs from the noise grid step {noise}")]
    GridMismatch { cfg: f64, noise: f64 },
    #[error("spec `{label}` uses a different Lévy measure than the noise realization")]
    NoiseMismatch { label: String },
    #[error("coupled specs `{first}` and `{second}` do not share a Lévy measure")]
    MeasureMismatch { first: String, second: String },
    #[error("paths are not on the same merged grid")]
    PathMismatch,
    #[error("compensator quadrature failed at t = {t}, x = {x}: {source}")]
    Compensator { t: f64, x: f64, source: QuadError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompensatorMode {
    /// Closed form when the spec provides one, quadrature otherwise.
    Analytic,
    /// Always adaptive quadrature over window ∩ z-support.
    Quadrature,
}

pub const DEFAULT_EXPLOSION_GUARD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub base_step: f64,
    /// Abort once |X| exceeds this.
    pub explosion_guard: f64,
    pub compensator: CompensatorMode,
}

impl SolveConfig {
    pub fn new(base_step: f64) -> Self {
        SolveConfig {
            base_step,
            explosion_guard: DEFAULT_EXPLOSION_GUARD,
            compensator: CompensatorMode::Analytic,
        }
    }

    pub fn with_compensator(mut self, mode: CompensatorMode) -> Self {
        self.compensator = mode;
        self
    }

    fn validate(&self, noise: &NoiseRealization, x0: f64) -> Result<(), SolverError> {
        if !(self.base_step > 0.0) {
            return Err(SolverError::InvalidConfig(format!(
                "base_step must be positive, got {}",
                self.base_step
            )));
        }
        if !(self.explosion_guard > x0.abs()) {
            return Err(SolverError::InvalidConfig(format!(
                "explosion guard {} must exceed |x0| = {}",
                self.explosion_guard,
                x0.abs()
            )));
        }
        let noise_step = noise.grid().base_step();
        if self.base_step != noise_step {
            return Err(SolverError::GridMismatch {
                cfg: self.base_step,
                noise: noise_step,
            });
        }
        Ok(())
    }
}

/// Jump applied at an atom time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpMark {
    /// Knot index in the path (the post-jump value lives there).
    pub knot: usize,
    /// Index into the realization's atom list.
    pub atom: usize,
    pub time: f64,
    pub mark: f64,
    /// X_{s−}
    pub pre: f64,
    /// ΔX_s = F(X_{s−}, z)
    pub jump: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub knot: usize,
    pub time: f64,
    pub value: f64,
    pub reason: String,
}

/// Càdlàg path on the merged grid; `values[i]` is the (post-jump) value at
/// `times[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath {
    pub label: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub marks: Vec<JumpMark>,
    pub abort: Option<Abort>,
}

impl JumpPath {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn x0(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        *self
            .values
            .last()
            .expect("path has at least the initial knot")
    }

    pub fn is_complete(&self) -> bool {
        self.abort.is_none()
    }

    /// Exact equality of every stored float (NaN compares equal to itself).
    pub fn bitwise_eq(&self, other: &JumpPath) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        same(&self.times, &other.times)
            && same(&self.values, &other.values)
            && self.marks.len() == other.marks.len()
            && self.marks.iter().zip(&other.marks).all(|(a, b)| {
                a.knot == b.knot
                    && a.atom == b.atom
                    && same(
                        &[a.time, a.mark, a.pre, a.jump],
                        &[b.time, b.mark, b.pre, b.jump],
                    )
            })
            && self.abort == other.abort
    }

    /// Knot-wise combination of two coupled paths (difference, max, min).
    /// Jump marks combine the pre-jump values with the same operation.
    pub fn combine(
        a: &JumpPath,
        b: &JumpPath,
        label: &str,
        op: impl Fn(f64, f64) -> f64,
    ) -> Result<JumpPath, SolverError> {
        let n = a.len().min(b.len());
        if a.times[..n]
            .iter()
            .zip(&b.times[..n])
            .any(|(s, t)| s.to_bits() != t.to_bits())
        {
            return Err(SolverError::PathMismatch);
        }
        let values: Vec<f64> = a.values[..n]
            .iter()
            .zip(&b.values[..n])
            .map(|(&x, &y)| op(x, y))
            .collect();
        let mut marks = Vec::new();
        for (ma, mb) in a.marks.iter().zip(&b.marks) {
            if ma.knot != mb.knot || ma.atom != mb.atom {
                return Err(SolverError::PathMismatch);
            }
            if ma.knot >= n {
                break;
            }
            let pre = op(ma.pre, mb.pre);
            marks.push(JumpMark {
                pre,
                jump: values[ma.knot] - pre,
                ..*ma
            });
        }
        let abort = a.abort.clone().or_else(|| b.abort.clone());
        Ok(JumpPath {
            label: label.to_string(),
            times: a.times[..n].to_vec(),
            values,
            marks,
            abort,
        })
    }

    pub fn difference(a: &JumpPath, b: &JumpPath) -> Result<JumpPath, SolverError> {
        Self::combine(a, b, &format!("{} - {}", a.label, b.label), |x, y| x - y)
    }

    /// sup over knots of |X|.
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// CSV with columns t, X, is_atom, z, delta_X.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,X,is_atom,z,delta_X\n");
        let mut marks = self.marks.iter().peekable();
        for (i, (t, x)) in self.times.iter().zip(&self.values).enumerate() {
            match marks.peek() {
                Some(m) if m.knot == i => {
                    let _ = writeln!(out, "{t:?},{x:?},1,{:?},{:?}", m.mark, m.jump);
                    marks.next();
                }
                _ => {
                    let _ = writeln!(out, "{t:?},{x:?},0,,");
                }
            }
        }
        out
    }
}

/// Compensator C(x) under the configured mode.
pub fn compensator(spec: &SdeSpec, x: f64, mode: CompensatorMode) -> Result<f64, QuadError> {
    if spec.measure().mass() == 0.0 {
        return Ok(0.0);
    }
    match (mode, spec.analytic_compensator(x)) {
        (CompensatorMode::Analytic, Some(c)) => Ok(c),
        _ => spec.compensator_by_quadrature(x),
    }
}

/// One explicit step over `step`, without the jump.
#[inline]
pub fn advance(
    spec: &SdeSpec,
    x: f64,
    step: &Step,
    mode: CompensatorMode,
) -> Result<f64, SolverError> {
    let c = if step.dt == 0.0 {
        0.0
    } else {
        compensator(spec, x, mode).map_err(|source| SolverError::Compensator {
            t: step.t,
            x,
            source,
        })?
    };
    Ok(x + spec.sigma(x) * step.dw + spec.drift(x) * step.dt - step.dt * c)
}

#[inline]
pub fn apply_jump(spec: &SdeSpec, pre: f64, z: f64) -> (f64, f64) {
    let jump = spec.jump(pre, z);
    (pre + jump, jump)
}

fn check_noise(spec: &SdeSpec, noise: &NoiseRealization) -> Result<(), SolverError> {
    if spec.measure().mass() > 0.0 && spec.measure() != noise.measure() {
        return Err(SolverError::NoiseMismatch {
            label: spec.label().to_string(),
        });
    }
    Ok(())
}

/// Output of running the scheme over a window of steps.
struct WindowRun {
    values: Vec<f64>,
    marks: Vec<JumpMark>,
    /// Window-relative index of the step that carried a big jump.
    stopped_at: Option<usize>,
    abort: Option<Abort>,
}

fn run_window(
    spec: &SdeSpec,
    noise: &NoiseRealization,
    window: NoiseWindow<'_>,
    x_start: f64,
    cfg: &SolveConfig,
    big_jump: Option<f64>,
) -> Result<WindowRun, SolverError> {
    let atoms = &noise.atoms().atoms;
    let mut run = WindowRun {
        values: Vec::with_capacity(window.steps.len()),
        marks: Vec::new(),
        stopped_at: None,
        abort: None,
    };
    let mut x = x_start;
    for (i, step) in window.steps.iter().enumerate() {
        let knot = window.first + i + 1;
        let mut value = advance(spec, x, step, cfg.compensator)?;
        let mut big = false;
        if let Some(k) = step.atom {
            let z = atoms[k].mark;
            let (post, jump) = apply_jump(spec, value, z);
            run.marks.push(JumpMark {
                knot,
                atom: k,
                time: step.t,
                mark: z,
                pre: value,
                jump,
            });
            big = big_jump.is_some_and(|th| jump.abs() >= th);
            value = post;
        }
        run.values.push(value);
        if !(value.abs() <= cfg.explosion_guard) {
            run.abort = Some(Abort {
                knot,
                time: step.t,
                value,
                reason: format!("|X| exceeded the explosion guard {}", cfg.explosion_guard),
            });
            break;
        }
        if big {
            run.stopped_at = Some(i);
            break;
        }
        x = value;
    }
    Ok(run)
}

fn times_of(noise: &NoiseRealization) -> Vec<f64> {
    std::iter::once(0.0)
        .chain(noise.steps().iter().map(|s| s.t))
        .collect()
}

/// Solve from `x0` on the merged grid of `noise`.
pub fn solve(
    spec: &SdeSpec,
    noise: &NoiseRealization,
    x0: f64,
    cfg: &SolveConfig,
) -> Result<JumpPath, SolverError> {
    cfg.validate(noise, x0)?;
    check_noise(spec, noise)?;
    let run = run_window(spec, noise, noise.window(0), x0, cfg, None)?;
    let mut times = times_of(noise);
    let mut values = Vec::with_capacity(times.len());
    values.push(x0);
    values.extend(run.values);
    times.truncate(values.len());
    Ok(JumpPath {
        label: spec.label().to_string(),
        times,
        values,
        marks: run.marks,
        abort: run.abort,
    })
}

/// Solve two specs on the same realization. Equal inputs give bitwise-equal
/// paths.
pub fn coupled_solve(
    specs: (&SdeSpec, &SdeSpec),
    x0s: (f64, f64),
    noise: &NoiseRealization,
    cfg: &SolveConfig,
) -> Result<(JumpPath, JumpPath), SolverError> {
    if specs.0.measure() != specs.1.measure() {
        return Err(SolverError::MeasureMismatch {
            first: specs.0.label().to_string(),
            second: specs.1.label().to_string(),
        });
    }
    let a = solve(specs.0, noise, x0s.0, cfg)?;
    let b = solve(specs.1, noise, x0s.1, cfg)?;
    // Both legs consumed the same atoms, in the same order, at the same knots.
    let shared = a.marks.len().min(b.marks.len());
    assert!(
        a.marks[..shared]
            .iter()
            .zip(&b.marks[..shared])
            .all(|(p, q)| p.atom == q.atom && p.knot == q.knot),
        "coupled legs consumed different atoms"
    );
    Ok((a, b))
}

/// Where a segmented solve restarted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// First knot of the segment (the restart knot for all but the first).
    pub start_knot: usize,
    pub start_time: f64,
    pub start_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedPath {
    pub path: JumpPath,
    pub segments: Vec<Segment>,
}

/// Solve up to each big jump (|ΔX| ≥ threshold), apply it, and restart from
/// X_S = X_{S−} + F(X_{S−}, z) on the remaining noise.
pub fn segmented_solve(
    spec: &SdeSpec,
    noise: &NoiseRealization,
    x0: f64,
    cfg: &SolveConfig,
    big_jump_threshold: f64,
) -> Result<SegmentedPath, SolverError> {
    cfg.validate(noise, x0)?;
    check_noise(spec, noise)?;
    if !(big_jump_threshold > 0.0) {
        return Err(SolverError::InvalidConfig(
            "big jump threshold must be positive".into(),
        ));
    }
    let mut values = vec![x0];
    let mut marks = Vec::new();
    let mut segments = vec![Segment {
        start_knot: 0,
        start_time: 0.0,
        start_value: x0,
    }];
    let mut abort = None;
    let mut first = 0;
    let mut x = x0;
    let n_steps = noise.steps().len();
    while first < n_steps {
        let window = noise.window(first);
        let run = run_window(spec, noise, window, x, cfg, Some(big_jump_threshold))?;
        let consumed = run.values.len();
        values.extend(run.values);
        marks.extend(run.marks);
        if run.abort.is_some() {
            abort = run.abort;
            break;
        }
        match run.stopped_at {
            Some(i) => {
                first += i + 1;
                x = *values.last().expect("nonempty");
                segments.push(Segment {
                    start_knot: first,
                    start_time: noise.steps()[first - 1].t,
                    start_value: x,
                });
            }
            None => {
                debug_assert_eq!(first + consumed, n_steps);
                break;
            }
        }
    }
    let mut times = times_of(noise);
    times.truncate(values.len());
    Ok(SegmentedPath {
        path: JumpPath {
            label: spec.label().to_string(),
            times,
            values,
            marks,
            abort,
        },
        segments,
    })
}

/// Defect of a path against one step of the scheme, accumulated over time:
/// R_t = Σ_{steps ≤ t} [(Y_{s−} − Euler(Y_prev)) + (Y_s − Y_{s−} − F(Y_{s−}, z))].
/// A path produced by `solve` for `spec` has R ≡ 0 exactly.
pub fn sde_residual(
    spec: &SdeSpec,
    noise: &NoiseRealization,
    path: &JumpPath,
    cfg: &SolveConfig,
) -> Result<Vec<f64>, SolverError> {
    let steps = noise.steps();
    if path.len() > steps.len() + 1 {
        return Err(SolverError::PathMismatch);
    }
    let atoms = &noise.atoms().atoms;
    let mut marks = path.marks.iter().peekable();
    let mut residual = Vec::with_capacity(path.len());
    let mut r = 0.0;
    residual.push(r);
    for (j, step) in steps.iter().enumerate().take(path.len() - 1) {
        let prev = path.values[j];
        let value = path.values[j + 1];
        let predicted = advance(spec, prev, step, cfg.compensator)?;
        let defect = match step.atom {
            Some(k) => {
                let pre = match marks.peek() {
                    Some(m) if m.knot == j + 1 => {
                        let pre = m.pre;
                        marks.next();
                        pre
                    }
                    _ => return Err(SolverError::PathMismatch),
                };
                let (post, _) = apply_jump(spec, pre, atoms[k].mark);
                (pre - predicted) + (value - post)
            }
            None => value - predicted,
        };
        r += defect;
        residual.push(r);
    }
    Ok(residual)
}
