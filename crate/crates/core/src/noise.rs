//! Frozen driving noise: a Brownian path and the atoms of a Poisson random
//! measure, sampled once per seed and then shared read-only by every solver
//! that should see "the same" W and μ.
//!
//! Atom times are merged into the base grid. The Brownian value at an atom
//! time is drawn from the Brownian bridge between the surrounding base knots
//! on its own stream, so the base-grid path does not depend on the jump
//! window.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::quad::{self, QuadError, DEFAULT_REL_TOL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid Lévy measure: {0}")]
    InvalidMeasure(String),
    #[error(
        "{kind} window z_min={z_min}, z_max={z_max} has infinite λ-mass; \
         sampling needs a small-jump truncation z_min > 0 (and a finite z_max for Lebesgue)"
    )]
    Truncation {
        kind: MeasureKind,
        z_min: f64,
        z_max: f64,
    },
    #[error("{0}")]
    Unsupported(String),
    #[error("atoms were sampled from a different measure than the one supplied")]
    MeasureMismatch,
    #[error("invalid atom: {0}")]
    InvalidAtom(String),
    #[error("quadrature: {0}")]
    Quadrature(#[from] QuadError),
    #[error("noise text, line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Named sub-streams of a root seed. Each stream is an independent ChaCha
/// stream keyed by the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Brownian,
    Poisson,
    Bridge,
    Checks,
    Named(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Brownian => 1,
            Stream::Poisson => 2,
            Stream::Bridge => 3,
            Stream::Checks => 4,
            Stream::Named(n) => 1 << 32 | n,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Closed interval, possibly unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn symmetric(r: f64) -> Self {
        Interval { lo: -r, hi: r }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo <= self.hi)
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let r = Interval::new(self.lo.max(other.lo), self.hi.min(other.hi));
        (!r.is_empty()).then_some(r)
    }

    pub fn is_subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }
}

/// Knots of the base discretization of `[0, t_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t_end: f64,
    base_step: f64,
    knots: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid; the step is shrunk slightly when it does not divide
    /// `t_end`. `t_end = 0` gives the single knot `{0}`.
    pub fn uniform(t_end: f64, base_step: f64) -> Result<Self, NoiseError> {
        if !(base_step > 0.0 && base_step.is_finite()) {
            return Err(NoiseError::InvalidGrid(format!(
                "base_step must be positive, got {base_step}"
            )));
        }
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(NoiseError::InvalidGrid(format!(
                "t_end must be finite and >= 0, got {t_end}"
            )));
        }
        if t_end == 0.0 {
            return Ok(TimeGrid {
                t_end,
                base_step,
                knots: vec![0.0],
            });
        }
        let ratio = t_end / base_step;
        let n = if (ratio - ratio.round()).abs() <= 1e-9 * ratio {
            ratio.round()
        } else {
            ratio.ceil()
        } as usize;
        let n = n.max(1);
        let mut knots: Vec<f64> = (0..=n).map(|i| t_end * (i as f64 / n as f64)).collect();
        knots[n] = t_end;
        Ok(TimeGrid {
            t_end,
            base_step,
            knots,
        })
    }

    pub fn from_knots(knots: Vec<f64>, base_step: f64) -> Result<Self, NoiseError> {
        if knots.first() != Some(&0.0) {
            return Err(NoiseError::InvalidGrid("first knot must be 0".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(NoiseError::InvalidGrid(
                "knots must be strictly increasing".into(),
            ));
        }
        if !(base_step > 0.0) {
            return Err(NoiseError::InvalidGrid("base_step must be positive".into()));
        }
        let t_end = *knots.last().expect("nonempty");
        Ok(TimeGrid {
            t_end,
            base_step,
            knots,
        })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn base_step(&self) -> f64 {
        self.base_step
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    LebesgueOnInterval,
    StableSymmetric,
    StablePositive,
}

impl MeasureKind {
    pub fn is_stable(self) -> bool {
        !matches!(self, MeasureKind::LebesgueOnInterval)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MeasureKind::LebesgueOnInterval => "lebesgue_on_interval",
            MeasureKind::StableSymmetric => "stable_symmetric",
            MeasureKind::StablePositive => "stable_positive",
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeasureKind {
    type Err = NoiseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lebesgue_on_interval" => Ok(MeasureKind::LebesgueOnInterval),
            "stable_symmetric" => Ok(MeasureKind::StableSymmetric),
            "stable_positive" => Ok(MeasureKind::StablePositive),
            other => Err(NoiseError::InvalidMeasure(format!(
                "unknown measure kind `{other}`"
            ))),
        }
    }
}

/// Jump intensity λ(dz) restricted to a window.
///
/// * `LebesgueOnInterval`: density 1 on `{z_min <= |z| <= z_max}`.
///   `z_min = 0` means no hole around the origin.
/// * `StableSymmetric`: density `|z|^{-α-1}` on the same annulus, α ∈ (0, 2).
/// * `StablePositive`: density `z^{-α-1}` on `[z_min, z_max]`, α ∈ (1, 2).
///
/// `z_min = 0` (stable) or `z_max = inf` (Lebesgue) describe infinite-mass
/// measures; they are valid for analytic work but cannot be sampled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevyMeasure {
    kind: MeasureKind,
    z_min: f64,
    z_max: f64,
    alpha: Option<f64>,
}

impl LevyMeasure {
    pub fn lebesgue(z_min: f64, z_max: f64) -> Result<Self, NoiseError> {
        Self::check_window(z_min, z_max)?;
        Ok(LevyMeasure {
            kind: MeasureKind::LebesgueOnInterval,
            z_min,
            z_max,
            alpha: None,
        })
    }

    /// The zero measure: no atoms, no compensator.
    pub fn empty() -> Self {
        LevyMeasure {
            kind: MeasureKind::LebesgueOnInterval,
            z_min: 0.0,
            z_max: 0.0,
            alpha: None,
        }
    }

    pub fn stable_symmetric(alpha: f64, z_min: f64, z_max: f64) -> Result<Self, NoiseError> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(NoiseError::InvalidMeasure(format!(
                "stable index must lie in (0, 2), got {alpha}"
            )));
        }
        Self::check_window(z_min, z_max)?;
        Ok(LevyMeasure {
            kind: MeasureKind::StableSymmetric,
            z_min,
            z_max,
            alpha: Some(alpha),
        })
    }

    pub fn stable_positive(alpha: f64, z_min: f64, z_max: f64) -> Result<Self, NoiseError> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(NoiseError::InvalidMeasure(format!(
                "spectrally positive stable index must lie in (1, 2), got {alpha}"
            )));
        }
        Self::check_window(z_min, z_max)?;
        Ok(LevyMeasure {
            kind: MeasureKind::StablePositive,
            z_min,
            z_max,
            alpha: Some(alpha),
        })
    }

    pub fn new(
        kind: MeasureKind,
        z_min: f64,
        z_max: f64,
        alpha: Option<f64>,
    ) -> Result<Self, NoiseError> {
        match kind {
            MeasureKind::LebesgueOnInterval => Self::lebesgue(z_min, z_max),
            MeasureKind::StableSymmetric | MeasureKind::StablePositive => {
                let alpha = alpha.ok_or_else(|| {
                    NoiseError::InvalidMeasure(format!("{kind} needs a stability index"))
                })?;
                if kind == MeasureKind::StableSymmetric {
                    Self::stable_symmetric(alpha, z_min, z_max)
                } else {
                    Self::stable_positive(alpha, z_min, z_max)
                }
            }
        }
    }

    fn check_window(z_min: f64, z_max: f64) -> Result<(), NoiseError> {
        if !(z_min >= 0.0 && z_min.is_finite()) {
            return Err(NoiseError::InvalidMeasure(format!(
                "z_min must be finite and >= 0, got {z_min}"
            )));
        }
        if !(z_max >= z_min) {
            return Err(NoiseError::InvalidMeasure(format!(
                "need z_min <= z_max, got {z_min} > {z_max}"
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn z_min(&self) -> f64 {
        self.z_min
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn contains(&self, z: f64) -> bool {
        match self.kind {
            MeasureKind::StablePositive => self.z_min <= z && z <= self.z_max && z > 0.0,
            MeasureKind::StableSymmetric => {
                let a = z.abs();
                self.z_min <= a && a <= self.z_max && a > 0.0
            }
            MeasureKind::LebesgueOnInterval => {
                let a = z.abs();
                self.z_min <= a && a <= self.z_max && self.z_min < self.z_max
            }
        }
    }

    /// λ-density at `z` (zero outside the window).
    pub fn density(&self, z: f64) -> f64 {
        if !self.contains(z) {
            return 0.0;
        }
        match self.alpha {
            Some(alpha) => z.abs().powf(-alpha - 1.0),
            None => 1.0,
        }
    }

    /// Bounding interval of the window (the declared z-support of F must
    /// fit inside it).
    pub fn outer_interval(&self) -> Interval {
        match self.kind {
            MeasureKind::StablePositive => Interval::new(self.z_min, self.z_max),
            _ => Interval::symmetric(self.z_max),
        }
    }

    /// Disjoint intervals whose union is the window.
    pub fn pieces(&self) -> Vec<Interval> {
        if !(self.z_min < self.z_max) {
            return Vec::new();
        }
        match self.kind {
            MeasureKind::StablePositive => vec![Interval::new(self.z_min, self.z_max)],
            _ if self.z_min == 0.0 => vec![Interval::symmetric(self.z_max)],
            _ => vec![
                Interval::new(-self.z_max, -self.z_min),
                Interval::new(self.z_min, self.z_max),
            ],
        }
    }

    /// λ-mass of `|z|` in `[a, b]`, `0 <= a <= b`, one side only.
    fn half_mass(&self, a: f64, b: f64) -> f64 {
        match self.alpha {
            None => b - a,
            Some(alpha) => {
                let lo = if a == 0.0 {
                    f64::INFINITY
                } else {
                    a.powf(-alpha)
                };
                let hi = if b.is_infinite() { 0.0 } else { b.powf(-alpha) };
                (lo - hi) / alpha
            }
        }
    }

    /// Total λ-mass of the window.
    pub fn mass(&self) -> f64 {
        if !(self.z_min < self.z_max) {
            return 0.0;
        }
        let one_side = self.half_mass(self.z_min, self.z_max);
        match self.kind {
            MeasureKind::StablePositive => one_side,
            _ => 2.0 * one_side,
        }
    }

    pub fn has_finite_mass(&self) -> bool {
        self.mass().is_finite()
    }

    /// ∫ z λ(dz) over the window (zero for the symmetric kinds).
    pub fn first_moment(&self) -> f64 {
        if !(self.z_min < self.z_max) {
            return 0.0;
        }
        match (self.kind, self.alpha) {
            (MeasureKind::StablePositive, Some(alpha)) => {
                let lo = self.z_min.powf(1.0 - alpha);
                let hi = if self.z_max.is_infinite() {
                    0.0
                } else {
                    self.z_max.powf(1.0 - alpha)
                };
                (lo - hi) / (alpha - 1.0)
            }
            _ => 0.0,
        }
    }

    /// ∫ f(z) λ(dz) over the window.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64, QuadError> {
        self.integrate_within(f, None, DEFAULT_REL_TOL)
    }

    /// ∫ f(z) λ(dz) over the window intersected with `support`.
    ///
    /// Stable densities are integrated in `s = ln|z|`, which turns the power
    /// law into a smooth exponential weight.
    pub fn integrate_within<F: Fn(f64) -> f64>(
        &self,
        f: F,
        support: Option<Interval>,
        rel_tol: f64,
    ) -> Result<f64, QuadError> {
        self.integrate_within_tol(f, support, rel_tol, 0.0)
    }

    /// As `integrate_within` with an absolute error floor per piece.
    pub fn integrate_within_tol<F: Fn(f64) -> f64>(
        &self,
        f: F,
        support: Option<Interval>,
        rel_tol: f64,
        abs_tol: f64,
    ) -> Result<f64, QuadError> {
        let mut total = 0.0;
        for piece in self.pieces() {
            let piece = match support {
                Some(s) => match piece.intersect(&s) {
                    Some(p) => p,
                    None => continue,
                },
                None => piece,
            };
            if piece.lo == piece.hi {
                continue;
            }
            total += match self.alpha {
                None => quad::integrate_tol(&f, piece.lo, piece.hi, rel_tol, abs_tol)?.value,
                Some(alpha) => {
                    let (sign, a, b) = if piece.lo >= 0.0 {
                        (1.0, piece.lo, piece.hi)
                    } else {
                        (-1.0, -piece.hi, -piece.lo)
                    };
                    if a <= 0.0 {
                        return Err(QuadError::BadInterval { a, b });
                    }
                    let g = |s: f64| {
                        let weight = (-alpha * s).exp();
                        // Far tail of an unbounded window: the weight has underflowed.
                        if weight == 0.0 {
                            return 0.0;
                        }
                        f(sign * s.exp()) * weight
                    };
                    quad::integrate_tol(g, a.ln(), b.ln(), rel_tol, abs_tol)?.value
                }
            };
        }
        Ok(total)
    }

    fn sample_mark<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match self.kind {
            MeasureKind::StablePositive => self.sample_abs(u),
            MeasureKind::StableSymmetric | MeasureKind::LebesgueOnInterval => {
                let positive: bool = rng.random();
                let a = self.sample_abs(u);
                if positive {
                    a
                } else {
                    -a
                }
            }
        }
    }

    /// Inverse-CDF draw of |z| from the normalized one-sided window.
    fn sample_abs(&self, u: f64) -> f64 {
        let (a, b) = (self.z_min, self.z_max);
        match self.alpha {
            None => a + u * (b - a),
            Some(alpha) => {
                let lo = a.powf(-alpha);
                let hi = if b.is_infinite() { 0.0 } else { b.powf(-alpha) };
                let z = (lo - u * (lo - hi)).powf(-1.0 / alpha);
                z.clamp(a, b)
            }
        }
    }
}

/// Brownian motion sampled at the knots of a base grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

pub fn sample_brownian(grid: &TimeGrid, seed: u64) -> BrownianPath {
    let mut rng = stream_rng(seed, Stream::Brownian);
    let mut values = Vec::with_capacity(grid.len());
    let mut w = 0.0;
    values.push(w);
    for pair in grid.knots().windows(2) {
        let n: f64 = StandardNormal.sample(&mut rng);
        w += (pair[1] - pair[0]).sqrt() * n;
        values.push(w);
    }
    BrownianPath {
        grid: grid.clone(),
        values,
    }
}

/// One atom `(s, z)` of the Poisson random measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub time: f64,
    pub mark: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonAtoms {
    pub atoms: Vec<Atom>,
    pub measure: LevyMeasure,
    pub t_end: f64,
    /// Number of adjacent atoms sharing a time; they are kept in draw order.
    pub ties: usize,
}

impl PoissonAtoms {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Σ z over atoms with time <= t.
    pub fn mark_sum(&self, t: f64) -> f64 {
        self.atoms
            .iter()
            .take_while(|a| a.time <= t)
            .map(|a| a.mark)
            .sum()
    }

    fn sorted(mut atoms: Vec<Atom>, measure: LevyMeasure, t_end: f64) -> Self {
        atoms.sort_by(|a, b| a.time.total_cmp(&b.time));
        let ties = atoms.windows(2).filter(|w| w[0].time == w[1].time).count();
        PoissonAtoms {
            atoms,
            measure,
            t_end,
            ties,
        }
    }
}

pub fn sample_poisson_atoms(
    measure: &LevyMeasure,
    t_end: f64,
    seed: u64,
) -> Result<PoissonAtoms, NoiseError> {
    let mass = measure.mass();
    if !mass.is_finite() {
        return Err(NoiseError::Truncation {
            kind: measure.kind(),
            z_min: measure.z_min(),
            z_max: measure.z_max(),
        });
    }
    let mean = mass * t_end;
    let mut rng = stream_rng(seed, Stream::Poisson);
    let count = if mean > 0.0 {
        let dist = Poisson::new(mean).map_err(|e| NoiseError::InvalidMeasure(e.to_string()))?;
        dist.sample(&mut rng) as usize
    } else {
        0
    };
    let mut atoms = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.random();
        let time = t_end * (1.0 - u);
        let mark = measure.sample_mark(&mut rng);
        atoms.push(Atom { time, mark });
    }
    Ok(PoissonAtoms::sorted(atoms, *measure, t_end))
}

/// One step of the merged (base ∪ atom) grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    /// Time at the end of the step.
    pub t: f64,
    pub dt: f64,
    pub dw: f64,
    /// Index into the atom list when this knot carries a jump.
    pub atom: Option<usize>,
}

/// Suffix of the merged steps, seen from a restart time.
#[derive(Debug, Clone, Copy)]
pub struct NoiseWindow<'a> {
    pub steps: &'a [Step],
    /// Index of `steps[0]` within the full step list.
    pub first: usize,
    /// Time the window restarts from.
    pub origin: f64,
}

impl NoiseWindow<'_> {
    /// Time of step `i` measured from the window origin.
    pub fn local_time(&self, i: usize) -> f64 {
        self.steps[i].t - self.origin
    }
}

/// One frozen realization of (W, μ). Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    seed: u64,
    w: BrownianPath,
    atoms: PoissonAtoms,
    /// W at each atom time (Brownian bridge between base knots).
    w_at_atoms: Vec<f64>,
    steps: Vec<Step>,
}

impl NoiseRealization {
    pub fn sample(grid: &TimeGrid, measure: &LevyMeasure, seed: u64) -> Result<Self, NoiseError> {
        let w = sample_brownian(grid, seed);
        let atoms = sample_poisson_atoms(measure, grid.t_end(), seed)?;
        Self::with_bridge(seed, w, atoms)
    }

    /// Same Brownian path as `sample`, but with a caller-chosen atom list.
    pub fn with_atoms(
        grid: &TimeGrid,
        measure: &LevyMeasure,
        seed: u64,
        atoms: Vec<Atom>,
    ) -> Result<Self, NoiseError> {
        for a in &atoms {
            if !(a.time > 0.0 && a.time <= grid.t_end()) {
                return Err(NoiseError::InvalidAtom(format!(
                    "time {} outside (0, {}]",
                    a.time,
                    grid.t_end()
                )));
            }
            if !measure.contains(a.mark) {
                return Err(NoiseError::InvalidAtom(format!(
                    "mark {} outside the measure window",
                    a.mark
                )));
            }
        }
        let w = sample_brownian(grid, seed);
        let atoms = PoissonAtoms::sorted(atoms, *measure, grid.t_end());
        Self::with_bridge(seed, w, atoms)
    }

    fn with_bridge(seed: u64, w: BrownianPath, atoms: PoissonAtoms) -> Result<Self, NoiseError> {
        let mut rng = stream_rng(seed, Stream::Bridge);
        let knots = w.grid.knots();
        let mut w_at_atoms = Vec::with_capacity(atoms.len());
        let mut k = 0;
        let mut left = (0.0, 0.0);
        for i in 0..knots.len().saturating_sub(1) {
            let right = (knots[i + 1], w.values[i + 1]);
            left = if k > 0 && atoms.atoms[k - 1].time > knots[i] {
                left
            } else {
                (knots[i], w.values[i])
            };
            while k < atoms.len() && atoms.atoms[k].time <= right.0 {
                let s = atoms.atoms[k].time;
                let n: f64 = StandardNormal.sample(&mut rng);
                let value = if s >= right.0 {
                    right.1
                } else {
                    let span = right.0 - left.0;
                    let mean = left.1 + (s - left.0) / span * (right.1 - left.1);
                    let var = ((s - left.0) * (right.0 - s) / span).max(0.0);
                    mean + var.sqrt() * n
                };
                w_at_atoms.push(value);
                left = (s, value);
                k += 1;
            }
        }
        Self::from_parts(seed, w, atoms, w_at_atoms)
    }

    /// Assemble a realization from stored parts (used by replay).
    pub fn from_parts(
        seed: u64,
        w: BrownianPath,
        atoms: PoissonAtoms,
        w_at_atoms: Vec<f64>,
    ) -> Result<Self, NoiseError> {
        if w.values.len() != w.grid.len() || w.values.first() != Some(&0.0) {
            return Err(NoiseError::InvalidGrid(
                "Brownian path must start at 0 and match its grid".into(),
            ));
        }
        if w_at_atoms.len() != atoms.len() {
            return Err(NoiseError::InvalidAtom(
                "one Brownian value per atom is required".into(),
            ));
        }
        if (atoms.t_end - w.grid.t_end()).abs() > 0.0 {
            return Err(NoiseError::InvalidAtom(
                "atoms and grid disagree on the horizon".into(),
            ));
        }
        let steps = merge_steps(&w, &atoms, &w_at_atoms);
        Ok(NoiseRealization {
            seed,
            w,
            atoms,
            w_at_atoms,
            steps,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn brownian(&self) -> &BrownianPath {
        &self.w
    }

    pub fn atoms(&self) -> &PoissonAtoms {
        &self.atoms
    }

    pub fn measure(&self) -> &LevyMeasure {
        &self.atoms.measure
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.w.grid
    }

    pub fn t_end(&self) -> f64 {
        self.w.grid.t_end()
    }

    pub fn w_at_atoms(&self) -> &[f64] {
        &self.w_at_atoms
    }

    /// Merged steps in time order; `steps()[j]` leads to knot `j + 1`.
    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Steps from index `first` on, with time measured from the knot that
    /// precedes them.
    pub fn window(&self, first: usize) -> NoiseWindow<'_> {
        let origin = if first == 0 {
            0.0
        } else {
            self.steps[first - 1].t
        };
        NoiseWindow {
            steps: &self.steps[first..],
            first,
            origin,
        }
    }

    /// Line-oriented text form; floats use the shortest round-trip
    /// representation so a parse restores the realization bit for bit.
    pub fn to_text(&self) -> String {
        let m = self.measure();
        let mut out = String::new();
        let alpha = m
            .alpha()
            .map_or_else(|| "none".to_string(), |a| format!("{a:?}"));
        let _ = writeln!(
            out,
            "jumplab-noise v1 seed={} t_end={:?} base_step={:?} knots={} atoms={} measure={} z_min={:?} z_max={:?} alpha={}",
            self.seed,
            self.t_end(),
            self.w.grid.base_step(),
            self.w.grid.len(),
            self.atoms.len(),
            m.kind(),
            m.z_min(),
            m.z_max(),
            alpha
        );
        for (t, w) in self.w.grid.knots().iter().zip(&self.w.values) {
            let _ = writeln!(out, "k {t:?} {w:?}");
        }
        for (a, w) in self.atoms.atoms.iter().zip(&self.w_at_atoms) {
            let _ = writeln!(out, "a {:?} {:?} {:?}", a.time, a.mark, w);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, NoiseError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(NoiseError::Parse {
            line: 1,
            msg: "empty input".into(),
        })?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("jumplab-noise") || fields.next() != Some("v1") {
            return Err(NoiseError::Parse {
                line: 1,
                msg: "expected `jumplab-noise v1` header".into(),
            });
        }
        let mut kv = std::collections::BTreeMap::new();
        for f in fields {
            let (k, v) = f.split_once('=').ok_or(NoiseError::Parse {
                line: 1,
                msg: format!("malformed header field `{f}`"),
            })?;
            kv.insert(k, v);
        }
        let get = |k: &str| -> Result<&str, NoiseError> {
            kv.get(k).copied().ok_or(NoiseError::Parse {
                line: 1,
                msg: format!("missing header field `{k}`"),
            })
        };
        let num = |k: &str| -> Result<f64, NoiseError> {
            get(k)?.parse::<f64>().map_err(|e| NoiseError::Parse {
                line: 1,
                msg: format!("{k}: {e}"),
            })
        };
        let count = |k: &str| -> Result<usize, NoiseError> {
            get(k)?.parse::<usize>().map_err(|e| NoiseError::Parse {
                line: 1,
                msg: format!("{k}: {e}"),
            })
        };
        let seed = get("seed")?.parse::<u64>().map_err(|e| NoiseError::Parse {
            line: 1,
            msg: format!("seed: {e}"),
        })?;
        let base_step = num("base_step")?;
        let n_knots = count("knots")?;
        let n_atoms = count("atoms")?;
        let kind: MeasureKind = get("measure")?.parse()?;
        let alpha = match get("alpha")? {
            "none" => None,
            _ => Some(num("alpha")?),
        };
        let measure = LevyMeasure::new(kind, num("z_min")?, num("z_max")?, alpha)?;

        let mut knots = Vec::with_capacity(n_knots);
        let mut values = Vec::with_capacity(n_knots);
        let mut atoms = Vec::with_capacity(n_atoms);
        let mut w_at_atoms = Vec::with_capacity(n_atoms);
        for (i, line) in lines {
            let line_no = i + 1;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| -> Result<f64, NoiseError> {
                s.parse::<f64>().map_err(|e| NoiseError::Parse {
                    line: line_no,
                    msg: e.to_string(),
                })
            };
            match parts.as_slice() {
                [] => continue,
                ["k", t, w] => {
                    knots.push(parse(t)?);
                    values.push(parse(w)?);
                }
                ["a", s, z, w] => {
                    atoms.push(Atom {
                        time: parse(s)?,
                        mark: parse(z)?,
                    });
                    w_at_atoms.push(parse(w)?);
                }
                _ => {
                    return Err(NoiseError::Parse {
                        line: line_no,
                        msg: format!("unrecognized record `{line}`"),
                    })
                }
            }
        }
        if knots.len() != n_knots || atoms.len() != n_atoms {
            return Err(NoiseError::Parse {
                line: 1,
                msg: format!(
                    "header announces {n_knots} knots / {n_atoms} atoms, found {} / {}",
                    knots.len(),
                    atoms.len()
                ),
            });
        }
        let grid = TimeGrid::from_knots(knots, base_step)?;
        let t_end = grid.t_end();
        let w = BrownianPath { grid, values };
        let ties = atoms.windows(2).filter(|p| p[0].time == p[1].time).count();
        if atoms.windows(2).any(|p| p[0].time > p[1].time) {
            return Err(NoiseError::Parse {
                line: 1,
                msg: "atom times must be nondecreasing".into(),
            });
        }
        let atoms = PoissonAtoms {
            atoms,
            measure,
            t_end,
            ties,
        };
        Self::from_parts(seed, w, atoms, w_at_atoms)
    }
}

fn merge_steps(w: &BrownianPath, atoms: &PoissonAtoms, w_at_atoms: &[f64]) -> Vec<Step> {
    let knots = w.grid.knots();
    let mut steps = Vec::with_capacity(knots.len() + atoms.len());
    let mut prev = (0.0, 0.0);
    let mut k = 0;
    let push =
        |steps: &mut Vec<Step>, prev: &mut (f64, f64), t: f64, wv: f64, atom: Option<usize>| {
            steps.push(Step {
                t,
                dt: t - prev.0,
                dw: wv - prev.1,
                atom,
            });
            *prev = (t, wv);
        };
    for (&t, &wv) in knots.iter().zip(&w.values).skip(1) {
        let mut knot_taken = false;
        while k < atoms.len() && atoms.atoms[k].time <= t {
            let s = atoms.atoms[k].time;
            if s == t {
                push(&mut steps, &mut prev, t, wv, Some(k));
                knot_taken = true;
            } else {
                push(&mut steps, &mut prev, s, w_at_atoms[k], Some(k));
            }
            k += 1;
        }
        if !knot_taken {
            push(&mut steps, &mut prev, t, wv, None);
        }
    }
    steps
}

/// Characteristic-function diagnostic for the compensated sum of atoms of a
/// stable measure.
#[derive(Debug, Clone, PartialEq)]
pub struct StableIncrementReport {
    pub frequencies: Vec<f64>,
    pub paths: usize,
    pub horizon: f64,
    /// Empirical E exp(iθ Y) over the ensemble.
    pub empirical: Vec<Complex64>,
    /// ∫_window (e^{iθz} - 1 - iθz) λ(dz), by quadrature.
    pub truncated_exponent: Vec<Complex64>,
    /// exp(t · truncated_exponent).
    pub truncated_cf: Vec<Complex64>,
    /// Exponent of the untruncated stable measure (closed form).
    pub stable_exponent: Vec<Complex64>,
    pub max_deviation: f64,
    pub truncation_error: f64,
}

/// Compare the compensated sums `Σ z − t ∫ z λ(dz)` of an ensemble of atom
/// lists with the truncated Lévy–Khintchine exponent of `measure`.
pub fn stable_increment_check(
    ensemble: &[PoissonAtoms],
    measure: &LevyMeasure,
    t: f64,
    frequencies: &[f64],
) -> Result<StableIncrementReport, NoiseError> {
    if !measure.kind().is_stable() {
        return Err(NoiseError::Unsupported(format!(
            "stable_increment_check needs a stable measure, got {}",
            measure.kind()
        )));
    }
    if ensemble.iter().any(|a| a.measure != *measure) {
        return Err(NoiseError::MeasureMismatch);
    }
    let compensator = t * measure.first_moment();
    let sums: Vec<f64> = ensemble
        .iter()
        .map(|a| a.mark_sum(t) - compensator)
        .collect();
    let n = sums.len().max(1) as f64;

    let mut empirical = Vec::with_capacity(frequencies.len());
    let mut truncated_exponent = Vec::with_capacity(frequencies.len());
    let mut truncated_cf = Vec::with_capacity(frequencies.len());
    let mut stable_exponent = Vec::with_capacity(frequencies.len());
    let mut max_deviation: f64 = 0.0;
    let mut truncation_error: f64 = 0.0;
    for &theta in frequencies {
        let (re, im) = sums.iter().fold((0.0, 0.0), |(re, im), y| {
            (re + (theta * y).cos(), im + (theta * y).sin())
        });
        let emp = Complex64::new(re / n, im / n);
        let psi = truncated_stable_exponent(measure, theta)?;
        let cf = (psi * t).exp();
        let full = stable_exponent_closed_form(measure, theta);
        max_deviation = max_deviation.max((emp - cf).norm());
        truncation_error = truncation_error.max((psi - full).norm());
        empirical.push(emp);
        truncated_exponent.push(psi);
        truncated_cf.push(cf);
        stable_exponent.push(full);
    }
    Ok(StableIncrementReport {
        frequencies: frequencies.to_vec(),
        paths: ensemble.len(),
        horizon: t,
        empirical,
        truncated_exponent,
        truncated_cf,
        stable_exponent,
        max_deviation,
        truncation_error,
    })
}

/// ∫_window (e^{iθz} − 1 − iθz) λ(dz) by quadrature.
pub fn truncated_stable_exponent(
    measure: &LevyMeasure,
    theta: f64,
) -> Result<Complex64, NoiseError> {
    // cos(x) - 1 = -2 sin²(x/2) avoids cancellation for small |θz|.
    let re = measure.integrate_within(
        |z| {
            let h = (0.5 * theta * z).sin();
            -2.0 * h * h
        },
        None,
        1e-9,
    )?;
    let im = measure.integrate_within(|z| (theta * z).sin() - theta * z, None, 1e-9)?;
    Ok(Complex64::new(re, im))
}

/// Lévy–Khintchine exponent of the untruncated stable measure with the same
/// kind and index:
/// positive: Γ(−α)(−iθ)^α; symmetric: 2Γ(−α)cos(πα/2)|θ|^α.
pub fn stable_exponent_closed_form(measure: &LevyMeasure, theta: f64) -> Complex64 {
    let alpha = measure.alpha().expect("stable measure");
    let mag = theta.abs().powf(alpha);
    match measure.kind() {
        MeasureKind::StablePositive => {
            let phase = -std::f64::consts::FRAC_PI_2 * alpha * theta.signum();
            Complex64::from_polar(gamma(-alpha) * mag, phase)
        }
        MeasureKind::StableSymmetric => {
            let c = if (alpha - 1.0).abs() < 1e-12 {
                -std::f64::consts::PI
            } else {
                2.0 * gamma(-alpha) * (std::f64::consts::FRAC_PI_2 * alpha).cos()
            };
            Complex64::new(c * mag, 0.0)
        }
        MeasureKind::LebesgueOnInterval => unreachable!("guarded by caller"),
    }
}
