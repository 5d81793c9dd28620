//! Coefficient triples (σ, b, F), the hypotheses placed on them, and the
//! built-in example models.
//!
//! Checkers sample; they do not prove. A `Fail` always carries a concrete
//! witness, a `Pass` only means nothing went wrong on the sampled set.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{stream_rng, Interval, LevyMeasure, MeasureKind, NoiseError, Stream};
use crate::quad::{self, QuadError, DEFAULT_REL_TOL};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type JumpFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("model `{model}`: {msg}")]
    InvalidParameter { model: String, msg: String },
    #[error("invalid spec `{label}`: {msg}")]
    InvalidSpec { label: String, msg: String },
    #[error("modulus `{label}` is not positive at u = {at} (h = {value})")]
    NonPositiveModulus { label: String, at: f64, value: f64 },
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Coefficients of dX = σ(X)dW + b(X)dt + ∫F(X−, z)(μ − ν)(dz, dt).
#[derive(Clone)]
pub struct SdeSpec {
    label: String,
    sigma: ScalarFn,
    drift: ScalarFn,
    jump: JumpFn,
    measure: LevyMeasure,
    z_support: Interval,
    compensator: Option<ScalarFn>,
    notes: Vec<String>,
}

impl fmt::Debug for SdeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeSpec")
            .field("label", &self.label)
            .field("measure", &self.measure)
            .field("z_support", &self.z_support)
            .field("analytic_compensator", &self.compensator.is_some())
            .finish_non_exhaustive()
    }
}

impl SdeSpec {
    pub fn builder(label: impl Into<String>) -> SdeBuilder {
        SdeBuilder {
            label: label.into(),
            sigma: Arc::new(|_| 0.0),
            drift: Arc::new(|_| 0.0),
            jump: Arc::new(|_, _| 0.0),
            measure: LevyMeasure::empty(),
            z_support: None,
            compensator: None,
            notes: Vec::new(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn measure(&self) -> &LevyMeasure {
        &self.measure
    }

    pub fn z_support(&self) -> Interval {
        self.z_support
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        (self.sigma)(x)
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    /// F(x, z); zero outside the declared z-support.
    #[inline]
    pub fn jump(&self, x: f64, z: f64) -> f64 {
        if self.z_support.contains(z) {
            (self.jump)(x, z)
        } else {
            0.0
        }
    }

    pub fn has_analytic_compensator(&self) -> bool {
        self.compensator.is_some()
    }

    pub fn analytic_compensator(&self, x: f64) -> Option<f64> {
        self.compensator.as_ref().map(|c| c(x))
    }

    /// C(x) = ∫ F(x, z) λ(dz) over the window, by quadrature.
    pub fn compensator_by_quadrature(&self, x: f64) -> Result<f64, QuadError> {
        if self.measure.mass() == 0.0 {
            return Ok(0.0);
        }
        self.measure
            .integrate_within(|z| (self.jump)(x, z), Some(self.z_support), DEFAULT_REL_TOL)
    }

    /// ∫ g(z) λ(dz) over window ∩ z-support.
    pub fn integrate_z<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64, QuadError> {
        if self.measure.mass() == 0.0 {
            return Ok(0.0);
        }
        self.measure
            .integrate_within(g, Some(self.z_support), DEFAULT_REL_TOL)
    }

    /// As `integrate_z`, accepting once the error estimate is below `abs_tol`.
    pub fn integrate_z_tol<G: Fn(f64) -> f64>(&self, g: G, abs_tol: f64) -> Result<f64, QuadError> {
        if self.measure.mass() == 0.0 {
            return Ok(0.0);
        }
        self.measure
            .integrate_within_tol(g, Some(self.z_support), DEFAULT_REL_TOL, abs_tol)
    }

    /// Copy with a different label.
    pub fn relabeled(&self, label: impl Into<String>) -> Self {
        SdeSpec {
            label: label.into(),
            ..self.clone()
        }
    }
}

pub struct SdeBuilder {
    label: String,
    sigma: ScalarFn,
    drift: ScalarFn,
    jump: JumpFn,
    measure: LevyMeasure,
    z_support: Option<Interval>,
    compensator: Option<ScalarFn>,
    notes: Vec<String>,
}

impl SdeBuilder {
    pub fn sigma(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.sigma = Arc::new(f);
        self
    }

    pub fn drift(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn jump(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.jump = Arc::new(f);
        self
    }

    pub fn measure(mut self, m: LevyMeasure) -> Self {
        self.measure = m;
        self
    }

    pub fn z_support(mut self, s: Interval) -> Self {
        self.z_support = Some(s);
        self
    }

    /// Closed form of x ↦ ∫ F(x, z) λ(dz); must agree with the quadrature.
    pub fn compensator(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.compensator = Some(Arc::new(f));
        self
    }

    pub fn note(mut self, n: impl Into<String>) -> Self {
        self.notes.push(n.into());
        self
    }

    pub fn build(self) -> Result<SdeSpec, ModelError> {
        let outer = self.measure.outer_interval();
        let z_support = self.z_support.unwrap_or(outer);
        let bad = |msg: String| ModelError::InvalidSpec {
            label: self.label.clone(),
            msg,
        };
        if z_support.is_empty() {
            return Err(bad("empty z-support".into()));
        }
        if self.measure.mass() > 0.0 && !z_support.is_subset_of(&outer) {
            return Err(bad(format!(
                "z-support [{}, {}] exceeds the measure window [{}, {}]",
                z_support.lo, z_support.hi, outer.lo, outer.hi
            )));
        }
        // F must be finite where the measure lives.
        for piece in self.measure.pieces() {
            let Some(p) = piece.intersect(&z_support) else {
                continue;
            };
            let hi = if p.hi.is_finite() {
                p.hi
            } else {
                p.lo.max(1.0) * 1e6
            };
            for i in 0..=8 {
                let z = p.lo + (hi - p.lo) * (i as f64 / 8.0);
                if !self.measure.contains(z) {
                    continue;
                }
                for x in [-1.0, 0.0, 1.0] {
                    let v = (self.jump)(x, z);
                    if !v.is_finite() {
                        return Err(bad(format!("F({x}, {z}) = {v} is not finite")));
                    }
                }
            }
        }
        Ok(SdeSpec {
            label: self.label,
            sigma: self.sigma,
            drift: self.drift,
            jump: self.jump,
            measure: self.measure,
            z_support,
            compensator: self.compensator,
            notes: self.notes,
        })
    }
}

/// Modulus of continuity h with h(0) = 0 and h > 0 on (0, ε₀].
#[derive(Clone)]
pub struct ModulusH {
    label: String,
    h: ScalarFn,
    eps0: f64,
}

impl fmt::Debug for ModulusH {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModulusH({}, eps0={})", self.label, self.eps0)
    }
}

impl ModulusH {
    pub fn new(
        label: impl Into<String>,
        eps0: f64,
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ModulusH {
            label: label.into(),
            h: Arc::new(h),
            eps0,
        }
    }

    /// h(u) = u^p on (0, 1].
    pub fn power(p: f64) -> Self {
        Self::new(format!("u^{p}"), 1.0, move |u: f64| u.powf(p))
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        (self.h)(u)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    /// Error if h is not positive and finite at `u`.
    pub fn require_positive(&self, u: f64) -> Result<f64, ModelError> {
        let v = self.eval(u);
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(ModelError::NonPositiveModulus {
                label: self.label.clone(),
                at: u,
                value: v,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// Sample point(s): (x, y), (x₁, x₂, z), or the δ-levels of a divergence test.
    pub points: Vec<f64>,
    pub value: f64,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    /// Best-constant or ratio estimate, when the check produces one.
    pub estimate: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    pub notes: Vec<String>,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// How a pairwise checker samples its state box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePlan {
    /// Number of base points (after the fixed anchors).
    pub n_samples: usize,
    pub seed: u64,
    /// Quotients above this count as a violation.
    pub ceiling: f64,
    /// Gap halvings per base point.
    pub gap_levels: u32,
}

impl SamplePlan {
    pub fn new(n_samples: usize) -> Self {
        SamplePlan {
            n_samples,
            seed: 0,
            ceiling: 1e3,
            gap_levels: 30,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn ceiling(mut self, ceiling: f64) -> Self {
        self.ceiling = ceiling;
        self
    }
}

/// Base points: box ends, midpoint and 0 (if inside), then uniform draws.
/// Extending `n_samples` only appends points.
fn base_points(state_box: Interval, plan: &SamplePlan) -> Vec<f64> {
    let mut pts = vec![
        state_box.lo,
        state_box.hi,
        0.5 * (state_box.lo + state_box.hi),
    ];
    if state_box.contains(0.0) {
        pts.push(0.0);
    }
    let mut rng = stream_rng(plan.seed, Stream::Checks);
    for _ in 0..plan.n_samples {
        let u: f64 = rng.random();
        pts.push(state_box.lo + u * state_box.width());
    }
    pts
}

/// Pairs (x, y) with |x − y| = width·2^{−k}, k = 0..=levels, y inside the box.
fn pair_ladder(x: f64, state_box: Interval, levels: u32) -> impl Iterator<Item = (f64, f64)> {
    let w = state_box.width();
    (0..=levels).filter_map(move |k| {
        let g = w * 0.5f64.powi(k as i32 + 1);
        let y = if x + g <= state_box.hi { x + g } else { x - g };
        (y != x && state_box.contains(y)).then_some((x, y))
    })
}

/// Shared driver for difference-quotient checks.
fn quotient_check<Q>(
    condition: &str,
    state_box: Interval,
    plan: &SamplePlan,
    detect_growth: bool,
    quotient: Q,
) -> ConditionReport
where
    Q: Fn(f64, f64) -> Result<f64, String>,
{
    let mut report = ConditionReport {
        condition: condition.to_string(),
        verdict: Verdict::Pass,
        witness: None,
        estimate: Some(0.0),
        samples: 0,
        seed: plan.seed,
        notes: Vec::new(),
    };
    if state_box.is_empty() || state_box.width() == 0.0 {
        report.verdict = Verdict::Inconclusive;
        report.estimate = None;
        report.notes.push("state box has no interior".into());
        return report;
    }
    let mut best = 0.0f64;
    let mut fail: Option<Witness> = None;
    let mut inconclusive: Option<Witness> = None;
    for x in base_points(state_box, plan) {
        let mut ladder: Vec<(f64, f64, f64)> = Vec::new();
        for (x, y) in pair_ladder(x, state_box, plan.gap_levels) {
            report.samples += 1;
            match quotient(x, y) {
                Ok(q) if q.is_finite() => {
                    ladder.push((x, y, q));
                    if q > best {
                        best = q;
                    }
                    if q > plan.ceiling && fail.is_none() {
                        fail = Some(Witness {
                            points: vec![x, y],
                            value: q,
                            description: format!(
                                "difference quotient {q:.6e} exceeds ceiling {}",
                                plan.ceiling
                            ),
                        });
                    }
                }
                Ok(q) => {
                    inconclusive.get_or_insert(Witness {
                        points: vec![x, y],
                        value: q,
                        description: "non-finite evaluation".into(),
                    });
                }
                Err(msg) => {
                    inconclusive.get_or_insert(Witness {
                        points: vec![x, y],
                        value: f64::NAN,
                        description: msg,
                    });
                }
            }
        }
        // Quotients still growing geometrically as the gap shrinks: unbounded.
        if detect_growth && fail.is_none() && ladder.len() > 8 {
            let tail = &ladder[ladder.len() - 9..];
            let growing = tail.windows(2).all(|w| w[1].2 > w[0].2);
            if growing && tail[8].2 >= 2.0 * tail[0].2 && tail[8].2 > 0.0 {
                let (x, y, q) = tail[8];
                fail = Some(Witness {
                    points: vec![x, y],
                    value: q,
                    description: format!(
                        "difference quotient grows from {:.4e} to {q:.4e} over 8 gap halvings",
                        tail[0].2
                    ),
                });
            }
        }
    }
    report.estimate = Some(best);
    if let Some(w) = fail {
        report.verdict = Verdict::Fail;
        report.witness = Some(w);
    } else if let Some(w) = inconclusive {
        report.verdict = Verdict::Inconclusive;
        report.witness = Some(w);
    }
    report
}

/// |b(x) − b(y)| ≤ c|x − y| on the box; estimate = best sampled c.
pub fn check_lipschitz_b(
    spec: &SdeSpec,
    state_box: Interval,
    plan: &SamplePlan,
) -> ConditionReport {
    quotient_check("lipschitz_b", state_box, plan, true, |x, y| {
        Ok((spec.drift(x) - spec.drift(y)).abs() / (x - y).abs())
    })
}

/// |σ(x) − σ(y)| ≤ c|x − y| on the box.
pub fn check_lipschitz_sigma(
    spec: &SdeSpec,
    state_box: Interval,
    plan: &SamplePlan,
) -> ConditionReport {
    quotient_check("lipschitz_sigma", state_box, plan, true, |x, y| {
        Ok((spec.sigma(x) - spec.sigma(y)).abs() / (x - y).abs())
    })
}

/// ∫|F(x, z) − F(y, z)| λ(dz) ≤ c|x − y| on the box.
#[allow(non_snake_case)]
pub fn check_F_L1_lipschitz(
    spec: &SdeSpec,
    state_box: Interval,
    plan: &SamplePlan,
) -> ConditionReport {
    quotient_check("F_L1_lipschitz", state_box, plan, true, |x, y| {
        let d = spec
            .integrate_z(|z| (spec.jump(x, z) - spec.jump(y, z)).abs())
            .map_err(|e| e.to_string())?;
        Ok(d / (x - y).abs())
    })
}

/// (|b|² + |σ|² + ∫F²λ)(x) ≤ c(1 + x²); estimate = sup of the ratio.
pub fn check_linear_growth(
    spec: &SdeSpec,
    state_box: Interval,
    plan: &SamplePlan,
) -> ConditionReport {
    let mut report = ConditionReport {
        condition: "linear_growth".into(),
        verdict: Verdict::Pass,
        witness: None,
        estimate: None,
        samples: 0,
        seed: plan.seed,
        notes: Vec::new(),
    };
    let mut best = 0.0f64;
    for x in base_points(state_box, plan) {
        report.samples += 1;
        let f2 = match spec.integrate_z(|z| spec.jump(x, z).powi(2)) {
            Ok(v) => v,
            Err(e) => {
                report.verdict = Verdict::Inconclusive;
                report.witness = Some(Witness {
                    points: vec![x],
                    value: f64::NAN,
                    description: e.to_string(),
                });
                break;
            }
        };
        let ratio = (spec.drift(x).powi(2) + spec.sigma(x).powi(2) + f2) / (1.0 + x * x);
        if !ratio.is_finite() {
            report.verdict = Verdict::Inconclusive;
            report.witness = Some(Witness {
                points: vec![x],
                value: ratio,
                description: "non-finite growth ratio".into(),
            });
            break;
        }
        if ratio > best {
            best = ratio;
            if ratio > plan.ceiling {
                report.verdict = Verdict::Fail;
                report.witness = Some(Witness {
                    points: vec![x],
                    value: ratio,
                    description: format!(
                        "growth ratio {ratio:.6e} exceeds ceiling {}",
                        plan.ceiling
                    ),
                });
            }
        }
    }
    report.estimate = Some(best);
    report
}

/// Increments below this on three consecutive levels mean convergence.
pub const OSGOOD_CAUCHY_TOL: f64 = 1e-6;
/// Partial integrals above this (with non-shrinking increments) mean divergence.
pub const OSGOOD_DIVERGENCE_THRESHOLD: f64 = 1e3;
const OSGOOD_MAX_LEVELS: usize = 300;

/// Numerical test of ∫₀^ε du / h²(u) = ∞ on the decades δ_k = ε·10^{−k}.
///
/// * fail: three consecutive decade increments below 1e-6 (Cauchy);
/// * pass: the partial integral exceeds 1e3 while increments do not shrink,
///   or, when the levels run out first, the last ten increments do not shrink
///   (log-type divergence such as h = √u never reaches 1e3 in f64 range);
/// * inconclusive otherwise.
pub fn check_osgood(
    h: &ModulusH,
    eps: f64,
    refinement_levels: usize,
) -> Result<ConditionReport, ModelError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ModelError::InvalidParameter {
            model: h.label().to_string(),
            msg: format!("eps must be positive, got {eps}"),
        });
    }
    let levels = refinement_levels.min(OSGOOD_MAX_LEVELS);
    let mut notes = Vec::new();
    if levels < refinement_levels {
        notes.push(format!(
            "refinement levels capped at {OSGOOD_MAX_LEVELS} (f64 range)"
        ));
    }
    let mut increments: Vec<f64> = Vec::with_capacity(levels);
    let mut deltas: Vec<f64> = Vec::with_capacity(levels);
    let mut partial = 0.0;
    let mut upper = eps;
    let mut verdict = Verdict::Inconclusive;
    let non_shrinking = |inc: &[f64]| inc.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9));
    for k in 1..=levels {
        let lower = eps * 10f64.powi(-(k as i32));
        for u in [lower, upper, lower.sqrt() * upper.sqrt()] {
            h.require_positive(u)?;
        }
        // ∫ du/h² in s = ln u.
        let g = |s: f64| {
            let u = s.exp();
            let hu = h.eval(u);
            u / (hu * hu)
        };
        let inc = quad::integrate(g, lower.ln(), upper.ln(), 1e-10)?.value;
        if !(inc.is_finite() && inc >= 0.0) {
            return Err(ModelError::NonPositiveModulus {
                label: h.label().to_string(),
                at: lower,
                value: h.eval(lower),
            });
        }
        increments.push(inc);
        deltas.push(lower);
        partial += inc;
        upper = lower;
        let n = increments.len();
        if n >= 3 && increments[n - 3..].iter().all(|&i| i < OSGOOD_CAUCHY_TOL) {
            verdict = Verdict::Fail;
            break;
        }
        if partial > OSGOOD_DIVERGENCE_THRESHOLD && n >= 3 && non_shrinking(&increments[n - 3..]) {
            verdict = Verdict::Pass;
            break;
        }
    }
    let n = increments.len();
    if verdict == Verdict::Inconclusive && n >= 10 && non_shrinking(&increments[n - 10..]) {
        verdict = Verdict::Pass;
        notes.push(format!(
            "partial integral {partial:.4e} below {OSGOOD_DIVERGENCE_THRESHOLD:e} but decade increments do not shrink"
        ));
    }
    let description = match verdict {
        Verdict::Pass => {
            "divergence estimate: partial integral with non-shrinking decade increments"
        }
        Verdict::Fail => "convergence: decade increments below the Cauchy tolerance",
        Verdict::Inconclusive => "neither criterion met within the refinement levels",
    };
    Ok(ConditionReport {
        condition: format!("osgood[{}]", h.label()),
        verdict,
        witness: Some(Witness {
            points: deltas[n.saturating_sub(3)..].to_vec(),
            value: partial,
            description: description.into(),
        }),
        estimate: Some(partial),
        samples: n,
        seed: 0,
        notes,
    })
}

/// Sample marks in window ∩ z-support: evenly spaced per piece, geometric on
/// unbounded pieces.
fn z_mesh(spec: &SdeSpec, per_piece: usize) -> Vec<f64> {
    let mut zs = Vec::new();
    let per_piece = per_piece.max(2);
    for piece in spec.measure().pieces() {
        let Some(p) = piece.intersect(&spec.z_support()) else {
            continue;
        };
        for i in 0..per_piece {
            let f = i as f64 / (per_piece - 1) as f64;
            let z = if p.hi.is_finite() {
                p.lo + f * (p.hi - p.lo)
            } else {
                p.lo * 1e6f64.powf(f)
            };
            if spec.measure().contains(z) {
                zs.push(z);
            }
        }
    }
    zs
}

pub const MONOTONE_STATE_MESH: usize = 2001;

/// x ↦ x + F(x, z) nondecreasing on `neighborhood` for sampled z.
pub fn check_monotone_jump_map(
    spec: &SdeSpec,
    neighborhood: Interval,
    z_samples: usize,
) -> Result<ConditionReport, ModelError> {
    if !neighborhood.contains(0.0) || neighborhood.width() <= 0.0 {
        return Err(ModelError::InvalidParameter {
            model: spec.label().to_string(),
            msg: format!(
                "neighborhood [{}, {}] must contain 0 in its interior",
                neighborhood.lo, neighborhood.hi
            ),
        });
    }
    let zs = z_mesh(spec, z_samples);
    let xs: Vec<f64> = (0..MONOTONE_STATE_MESH)
        .map(|i| {
            neighborhood.lo + neighborhood.width() * (i as f64 / (MONOTONE_STATE_MESH - 1) as f64)
        })
        .collect();
    let mut report = ConditionReport {
        condition: "monotone_jump_map".into(),
        verdict: Verdict::Pass,
        witness: None,
        estimate: None,
        samples: 0,
        seed: 0,
        notes: Vec::new(),
    };
    if zs.is_empty() {
        report
            .notes
            .push("empty jump window: the map is the identity".into());
    }
    let mut worst_drop = 0.0f64;
    for &z in &zs {
        let mut prev = (xs[0], xs[0] + spec.jump(xs[0], z));
        for &x in &xs[1..] {
            report.samples += 1;
            let g = x + spec.jump(x, z);
            if !g.is_finite() {
                report.verdict = Verdict::Inconclusive;
                report.witness.get_or_insert(Witness {
                    points: vec![x, x, z],
                    value: g,
                    description: "non-finite jump map".into(),
                });
                continue;
            }
            let drop = prev.1 - g;
            if drop > 1e-12 * (1.0 + g.abs()) && drop > worst_drop {
                worst_drop = drop;
                report.verdict = Verdict::Fail;
                report.witness = Some(Witness {
                    points: vec![prev.0, x, z],
                    value: drop,
                    description: format!(
                        "x1 + F(x1, z) = {} > x2 + F(x2, z) = {g} with x1 < x2",
                        prev.1
                    ),
                });
            }
            prev = (x, g);
        }
    }
    report.estimate = Some(worst_drop);
    Ok(report)
}

/// |b(x) − b(y)|² + ∫|F(x, z) − F(y, z)|² λ(dz) ≤ h²(|x − y|) on sampled pairs.
pub fn check_combined_modulus(
    spec: &SdeSpec,
    h: &ModulusH,
    state_box: Interval,
    plan: &SamplePlan,
) -> ConditionReport {
    let mut report = quotient_check(
        "combined_modulus",
        state_box,
        &plan.ceiling(1.0),
        false,
        |x, y| {
            let db = spec.drift(x) - spec.drift(y);
            let f2 = spec
                .integrate_z(|z| (spec.jump(x, z) - spec.jump(y, z)).powi(2))
                .map_err(|e| e.to_string())?;
            let hu = h.eval((x - y).abs());
            let lhs = db * db + f2;
            let rhs = hu * hu;
            if lhs == 0.0 {
                return Ok(0.0);
            }
            // Ratio > 1 + 1e-9 is a violation.
            Ok(lhs / rhs / (1.0 + 1e-9))
        },
    );
    report.condition = format!("combined_modulus[{}]", h.label());
    report
}

/// Monotone, Lipschitz multiplier G for F(x, z) = z·G(x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GFunction {
    Zero,
    Constant {
        c: f64,
    },
    /// min(x⁺, cap)
    ClampedPositive {
        #[serde(default = "one")]
        cap: f64,
    },
    /// slope·x⁺
    LinearPositive {
        #[serde(default = "one")]
        slope: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl GFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            GFunction::Zero => 0.0,
            GFunction::Constant { c } => c,
            GFunction::ClampedPositive { cap } => x.max(0.0).min(cap),
            GFunction::LinearPositive { slope } => slope * x.max(0.0),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            GFunction::Zero | GFunction::Constant { .. } => 0.0,
            GFunction::ClampedPositive { .. } => 1.0,
            GFunction::LinearPositive { slope } => slope.abs(),
        }
    }
}

fn half() -> f64 {
    0.5
}
fn minus_one() -> f64 {
    -1.0
}
fn default_stable_index() -> f64 {
    1.5
}
fn default_alpha_lo() -> f64 {
    0.8
}
fn default_alpha_hi() -> f64 {
    1.6
}
fn gbm_mu() -> f64 {
    0.05
}
fn gbm_sigma() -> f64 {
    0.2
}

/// Built-in models, named as in experiment configs (`name = "..."`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelLabel {
    /// σ = b = 0, F(x, z) = 1/|z|^{1+α(x)} with α increasing from
    /// `alpha_lo` to `alpha_hi`; Lebesgue window 0.5 ≤ |z| ≤ 1.
    StableLike {
        #[serde(default = "default_alpha_lo")]
        alpha_lo: f64,
        #[serde(default = "default_alpha_hi")]
        alpha_hi: f64,
    },
    /// dX = vol dW + drift dt + G(X−) dZ, Z spectrally positive α-stable;
    /// window z ≥ 0.05.
    SpectrallyPositive {
        g: GFunction,
        #[serde(default = "default_stable_index")]
        alpha: f64,
        #[serde(default)]
        drift: f64,
        #[serde(default)]
        vol: f64,
    },
    /// dX = sign(X) dW with sign(0) = `zero_sign`.
    TanakaSign {
        #[serde(default = "minus_one")]
        zero_sign: f64,
    },
    /// F ≡ c on |z| ≤ 1, σ = b = 0.
    ConstantJump { c: f64 },
    /// dX = μX dt + σX dW.
    Gbm {
        #[serde(default = "gbm_mu")]
        mu: f64,
        #[serde(default = "gbm_sigma")]
        sigma: f64,
    },
    /// b = b0 + b1·x, σ = s0 + s1·x, no jumps.
    Affine {
        #[serde(default)]
        b0: f64,
        #[serde(default)]
        b1: f64,
        #[serde(default)]
        s0: f64,
        #[serde(default)]
        s1: f64,
    },
    /// σ = min(√|x|, 1), b = b0 − κx, F = j·z·tanh(x) on |z| ≤ 1.
    SqrtDiffusion {
        #[serde(default = "one")]
        kappa: f64,
        #[serde(default)]
        b0: f64,
        #[serde(default = "half")]
        jump: f64,
    },
}

pub struct ModelInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub params: &'static str,
}

pub fn catalog() -> Vec<ModelInfo> {
    vec![
        ModelInfo {
            name: "stable_like",
            description: "pure jump, F(x,z) = 1/|z|^(1+alpha(x)), Lebesgue window 0.5 <= |z| <= 1",
            params: "alpha_lo = 0.8, alpha_hi = 1.6",
        },
        ModelInfo {
            name: "spectrally_positive",
            description: "dX = vol dW + drift dt + G(X-) dZ, Z spectrally positive alpha-stable, window z >= 0.05",
            params: "g = { kind = zero|constant|clamped_positive|linear_positive, ... }, alpha = 1.5, drift = 0, vol = 0",
        },
        ModelInfo {
            name: "tanaka_sign",
            description: "dX = sign(X) dW, no drift or jumps",
            params: "zero_sign = -1",
        },
        ModelInfo {
            name: "constant_jump",
            description: "F = c on |z| <= 1, no diffusion or drift",
            params: "c (required)",
        },
        ModelInfo {
            name: "gbm",
            description: "geometric Brownian motion dX = mu X dt + sigma X dW",
            params: "mu = 0.05, sigma = 0.2",
        },
        ModelInfo {
            name: "affine",
            description: "b = b0 + b1 x, sigma = s0 + s1 x, no jumps",
            params: "b0 = 0, b1 = 0, s0 = 0, s1 = 0",
        },
        ModelInfo {
            name: "sqrt_diffusion",
            description: "sigma = min(sqrt|x|, 1), b = b0 - kappa x, F = jump z tanh(x) on |z| <= 1",
            params: "kappa = 1, b0 = 0, jump = 0.5",
        },
    ]
}

impl ModelLabel {
    pub fn name(&self) -> &'static str {
        match self {
            ModelLabel::StableLike { .. } => "stable_like",
            ModelLabel::SpectrallyPositive { .. } => "spectrally_positive",
            ModelLabel::TanakaSign { .. } => "tanaka_sign",
            ModelLabel::ConstantJump { .. } => "constant_jump",
            ModelLabel::Gbm { .. } => "gbm",
            ModelLabel::Affine { .. } => "affine",
            ModelLabel::SqrtDiffusion { .. } => "sqrt_diffusion",
        }
    }

    /// Natural jump window of the model.
    pub fn default_measure(&self) -> Result<LevyMeasure, ModelError> {
        Ok(match self {
            ModelLabel::StableLike { .. } => LevyMeasure::lebesgue(0.5, 1.0)?,
            ModelLabel::SpectrallyPositive { alpha, .. } => {
                LevyMeasure::stable_positive(*alpha, 0.05, f64::INFINITY)
                    .map_err(|e| self.invalid(e.to_string()))?
            }
            ModelLabel::ConstantJump { .. } | ModelLabel::SqrtDiffusion { .. } => {
                LevyMeasure::lebesgue(0.0, 1.0)?
            }
            ModelLabel::TanakaSign { .. } | ModelLabel::Gbm { .. } | ModelLabel::Affine { .. } => {
                LevyMeasure::empty()
            }
        })
    }

    fn invalid(&self, msg: impl Into<String>) -> ModelError {
        ModelError::InvalidParameter {
            model: self.name().to_string(),
            msg: msg.into(),
        }
    }

    /// Short identifier including parameters, used as the spec label.
    pub fn tag(&self) -> String {
        match self {
            ModelLabel::StableLike { alpha_lo, alpha_hi } => {
                format!("stable_like({alpha_lo},{alpha_hi})")
            }
            ModelLabel::SpectrallyPositive {
                g,
                alpha,
                drift,
                vol,
            } => {
                let g = match g {
                    GFunction::Zero => "0".to_string(),
                    GFunction::Constant { c } => format!("{c}"),
                    GFunction::ClampedPositive { cap } => format!("min(x+,{cap})"),
                    GFunction::LinearPositive { slope } => format!("{slope}x+"),
                };
                format!("spectrally_positive(G={g},alpha={alpha},drift={drift},vol={vol})")
            }
            ModelLabel::TanakaSign { zero_sign } => format!("tanaka_sign(sign0={zero_sign})"),
            ModelLabel::ConstantJump { c } => format!("constant_jump({c})"),
            ModelLabel::Gbm { mu, sigma } => format!("gbm({mu},{sigma})"),
            ModelLabel::Affine { b0, b1, s0, s1 } => format!("affine(b={b0}+{b1}x,s={s0}+{s1}x)"),
            ModelLabel::SqrtDiffusion { kappa, b0, jump } => {
                format!("sqrt_diffusion({kappa},{b0},{jump})")
            }
        }
    }
}

/// Build a built-in model on its natural jump window.
pub fn builtin(label: &ModelLabel) -> Result<SdeSpec, ModelError> {
    builtin_in_window(label, None)
}

/// Build a built-in model, optionally on a caller-chosen window of the same
/// measure kind.
pub fn builtin_in_window(
    label: &ModelLabel,
    window: Option<LevyMeasure>,
) -> Result<SdeSpec, ModelError> {
    let natural = label.default_measure()?;
    let measure = match window {
        None => natural,
        Some(w) => {
            if natural.mass() == 0.0 && natural.kind() == MeasureKind::LebesgueOnInterval {
                // Jump-free models ignore the window but keep it for coupling.
                w
            } else if w.kind() != natural.kind() {
                return Err(label.invalid(format!(
                    "measure kind {} does not match the model's {}",
                    w.kind(),
                    natural.kind()
                )));
            } else if w.alpha() != natural.alpha() {
                return Err(label.invalid(format!(
                    "stability index {:?} does not match the model's {:?}",
                    w.alpha(),
                    natural.alpha()
                )));
            } else {
                w
            }
        }
    };
    let tag = label.tag();
    let spec = match *label {
        ModelLabel::StableLike { alpha_lo, alpha_hi } => {
            if !(0.0 < alpha_lo && alpha_lo <= alpha_hi && alpha_hi < 2.0) {
                return Err(label.invalid("need 0 < alpha_lo <= alpha_hi < 2"));
            }
            if measure.z_min() == 0.0 {
                return Err(label.invalid("F = 1/|z|^(1+alpha) needs a window with z_min > 0"));
            }
            let alpha = move |x: f64| alpha_lo + (alpha_hi - alpha_lo) * 0.5 * (1.0 + x.tanh());
            let (a, b) = (measure.z_min(), measure.z_max());
            SdeSpec::builder(tag)
                .measure(measure)
                .z_support(Interval::symmetric(b))
                .jump(move |x, z| z.abs().powf(-1.0 - alpha(x)))
                .compensator(move |x| {
                    let al = alpha(x);
                    2.0 * (a.powf(-al) - b.powf(-al)) / al
                })
                .note(
                    "F(x,z) = 1/|z|^(1+alpha(x)) is used literally as a jump amplitude on the Lebesgue window; \
                     it can also be read as the jump kernel density of a stable-like generator",
                )
                .build()?
        }
        ModelLabel::SpectrallyPositive {
            g,
            alpha: _,
            drift,
            vol,
        } => {
            let m1 = measure.first_moment();
            SdeSpec::builder(tag)
                .measure(measure)
                .sigma(move |_| vol)
                .drift(move |_| drift)
                .jump(move |x, z| z * g.eval(x))
                .compensator(move |x| g.eval(x) * m1)
                .note("jumps below z_min are dropped from both atoms and compensator")
                .build()?
        }
        ModelLabel::TanakaSign { zero_sign } => {
            if zero_sign.abs() != 1.0 {
                return Err(label.invalid("zero_sign must be -1 or 1"));
            }
            SdeSpec::builder(tag)
                .measure(measure)
                .sigma(move |x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        zero_sign
                    }
                })
                .compensator(|_| 0.0)
                .build()?
        }
        ModelLabel::ConstantJump { c } => {
            let support = Interval::symmetric(1.0);
            let mass = lebesgue_mass_within(&measure, support);
            SdeSpec::builder(tag)
                .measure(measure)
                .z_support(
                    support
                        .intersect(&measure.outer_interval())
                        .unwrap_or(support),
                )
                .jump(move |_, _| c)
                .compensator(move |_| c * mass)
                .build()?
        }
        ModelLabel::Gbm { mu, sigma } => SdeSpec::builder(tag)
            .measure(measure)
            .drift(move |x| mu * x)
            .sigma(move |x| sigma * x)
            .compensator(|_| 0.0)
            .build()?,
        ModelLabel::Affine { b0, b1, s0, s1 } => SdeSpec::builder(tag)
            .measure(measure)
            .drift(move |x| b0 + b1 * x)
            .sigma(move |x| s0 + s1 * x)
            .compensator(|_| 0.0)
            .build()?,
        ModelLabel::SqrtDiffusion { kappa, b0, jump } => {
            if !(jump.abs() < 1.0) {
                return Err(label.invalid("|jump| < 1 keeps x + F(x,z) increasing"));
            }
            let support = Interval::symmetric(1.0);
            SdeSpec::builder(tag)
                .measure(measure)
                .z_support(
                    support
                        .intersect(&measure.outer_interval())
                        .unwrap_or(support),
                )
                .sigma(|x: f64| x.abs().sqrt().min(1.0))
                .drift(move |x| b0 - kappa * x)
                .jump(move |x, z| jump * z * x.tanh())
                // Odd in z on a symmetric window.
                .compensator(|_| 0.0)
                .build()?
        }
    };
    Ok(spec)
}

/// λ-mass of window ∩ `support` for a Lebesgue window (0 for other kinds).
fn lebesgue_mass_within(m: &LevyMeasure, support: Interval) -> f64 {
    if m.kind() != MeasureKind::LebesgueOnInterval {
        return 0.0;
    }
    m.pieces()
        .iter()
        .filter_map(|p| p.intersect(&support))
        .map(|p| p.width())
        .sum()
}
