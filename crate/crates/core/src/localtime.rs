//! Quadratic variation, Tanaka and slanted local times of discrete càdlàg
//! paths, the occupation-density identity, and the Yamada–Watanabe
//! mollifiers φ_n.
//!
//! An atom knot is read as two sub-knots: the step ends at the pre-jump value
//! X_{s−} (continuous move), then the jump takes it to X_s. Sign integrals
//! and quadratic variation are taken over that refined sequence, with
//! sign(x) = 1 for x > 0 and −1 for x ≤ 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ConditionReport, ModelError, ModulusH, SdeSpec, Verdict, Witness};
use crate::quad::{self, kronrod15, QuadError};
use crate::solver::JumpPath;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocalTimeError {
    #[error("level grid [{lo}, {hi}] does not span the path range [{min}, {max}]")]
    LevelsDoNotSpan {
        lo: f64,
        hi: f64,
        min: f64,
        max: f64,
    },
    #[error("level grid needs at least two increasing levels")]
    BadLevels,
    #[error("phi index must be >= 1")]
    BadIndex,
    #[error("breakpoint a_{k}: ∫du/h² over (0, a_{prev}) stays below {k} (h too flat or not Osgood): {msg}", prev = k - 1)]
    Bisection { k: usize, msg: String },
    #[error(transparent)]
    Modulus(#[from] ModelError),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Cumulative [X] per knot with its continuous/jump split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticVariation {
    pub times: Vec<f64>,
    pub total: Vec<f64>,
    pub jump: Vec<f64>,
    /// total − jump, clipped at 0.
    pub continuous: Vec<f64>,
}

impl QuadraticVariation {
    pub fn at_end(&self) -> (f64, f64, f64) {
        let i = self.total.len() - 1;
        (self.total[i], self.continuous[i], self.jump[i])
    }
}

/// Visit the refined increments: `f(knot, left, right, is_jump)`.
fn for_each_piece(path: &JumpPath, mut f: impl FnMut(usize, f64, f64, bool)) {
    let mut marks = path.marks.iter().peekable();
    for i in 1..path.len() {
        let left = path.values[i - 1];
        let right = path.values[i];
        match marks.peek() {
            Some(m) if m.knot == i => {
                f(i, left, m.pre, false);
                f(i, m.pre, right, true);
                marks.next();
            }
            _ => f(i, left, right, false),
        }
    }
}

pub fn quadratic_variation(path: &JumpPath) -> QuadraticVariation {
    let n = path.len();
    let mut total = vec![0.0; n];
    let mut jump = vec![0.0; n];
    let (mut t, mut j) = (0.0, 0.0);
    let mut last = 0;
    for_each_piece(path, |i, l, r, is_jump| {
        for k in last + 1..i {
            total[k] = t;
            jump[k] = j;
        }
        let d = r - l;
        t += d * d;
        if is_jump {
            j += d * d;
        }
        total[i] = t;
        jump[i] = j;
        last = i;
    });
    let continuous = total
        .iter()
        .zip(&jump)
        .map(|(t, j)| (t - j).max(0.0))
        .collect();
    QuadraticVariation {
        times: path.times.clone(),
        total,
        jump,
        continuous,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalTimeKind {
    Tanaka,
    Slanted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTimeEstimate {
    pub kind: LocalTimeKind,
    pub level: f64,
    pub horizon: f64,
    pub value: f64,
    /// |X_t − a|
    pub end_term: f64,
    /// |X_0 − a|
    pub start_term: f64,
    /// ∫ sign(X_{s−} − a) dX_s
    pub sign_integral: f64,
    /// Σ_s {|X_s − a| − |X_{s−} − a| − sign(X_{s−} − a)ΔX_s}; absent for the slanted variant.
    pub jump_correction: Option<f64>,
}

impl LocalTimeEstimate {
    /// Re-add the terms; equals `value` bit for bit.
    pub fn recombine(&self) -> f64 {
        self.end_term - self.start_term - self.sign_integral - self.jump_correction.unwrap_or(0.0)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

fn local_time(path: &JumpPath, a: f64, kind: LocalTimeKind) -> LocalTimeEstimate {
    let mut sign_integral = 0.0;
    let mut correction = 0.0;
    for_each_piece(path, |_, l, r, is_jump| {
        let s = sign(l - a);
        sign_integral += s * (r - l);
        if is_jump {
            correction += (r - a).abs() - (l - a).abs() - s * (r - l);
        }
    });
    let end_term = (path.last() - a).abs();
    let start_term = (path.x0() - a).abs();
    let jump_correction = match kind {
        LocalTimeKind::Tanaka => Some(correction),
        LocalTimeKind::Slanted => None,
    };
    let value = end_term - start_term - sign_integral - jump_correction.unwrap_or(0.0);
    LocalTimeEstimate {
        kind,
        level: a,
        horizon: *path.times.last().expect("nonempty"),
        value,
        end_term,
        start_term,
        sign_integral,
        jump_correction,
    }
}

/// L^a_t = |X_t − a| − |X_0 − a| − ∫sign(X_{s−} − a)dX_s − jump correction.
pub fn tanaka_local_time(path: &JumpPath, a: f64) -> LocalTimeEstimate {
    local_time(path, a, LocalTimeKind::Tanaka)
}

/// ℒ^a_t: the Tanaka expression without the jump correction.
pub fn slanted_local_time(path: &JumpPath, a: f64) -> LocalTimeEstimate {
    local_time(path, a, LocalTimeKind::Slanted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationReport {
    /// ∫ L^a_t f(a) da by the trapezoidal rule on the level grid.
    pub level_side: f64,
    /// Σ f(X_{left knot}) · (continuous QV increment).
    pub time_side: f64,
    pub relative_gap: f64,
    pub levels: usize,
    pub level_spacing: f64,
}

/// `n` equally spaced levels covering the path range with a small margin.
pub fn level_grid_for(path: &JumpPath, n: usize) -> Vec<f64> {
    let (lo, hi) = path_range(path);
    let pad = 1e-9 + 1e-6 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let n = n.max(2);
    (0..n)
        .map(|i| lo + (hi - lo) * (i as f64 / (n - 1) as f64))
        .collect()
}

fn path_range(path: &JumpPath) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in path.values.iter().chain(path.marks.iter().map(|m| &m.pre)) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

pub fn occupation_identity_check(
    path: &JumpPath,
    f: impl Fn(f64) -> f64,
    levels: &[f64],
) -> Result<OccupationReport, LocalTimeError> {
    if levels.len() < 2 || levels.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(LocalTimeError::BadLevels);
    }
    let (min, max) = path_range(path);
    let (lo, hi) = (levels[0], levels[levels.len() - 1]);
    if lo > min || hi < max {
        return Err(LocalTimeError::LevelsDoNotSpan { lo, hi, min, max });
    }
    let weighted: Vec<f64> = levels
        .iter()
        .map(|&a| tanaka_local_time(path, a).value * f(a))
        .collect();
    let level_side: f64 = levels
        .windows(2)
        .zip(weighted.windows(2))
        .map(|(a, g)| 0.5 * (g[0] + g[1]) * (a[1] - a[0]))
        .sum();
    let mut time_side = 0.0;
    for_each_piece(path, |_, l, r, is_jump| {
        if !is_jump {
            time_side += f(l) * (r - l) * (r - l);
        }
    });
    let scale = level_side.abs().max(time_side.abs());
    let relative_gap = if scale == 0.0 {
        0.0
    } else {
        (level_side - time_side).abs() / scale
    };
    Ok(OccupationReport {
        level_side,
        time_side,
        relative_gap,
        levels: levels.len(),
        level_spacing: (hi - lo) / (levels.len() - 1) as f64,
    })
}

/// Width of the linear tapers of the ψ_n profile, in cumulative coordinates.
pub const PHI_TAPER: f64 = 0.25;
const PHI_PANELS: usize = 48;

/// φ_n built from a modulus h.
///
/// Breakpoints: a_0 = ε₀ and ∫_{a_k}^{a_{k−1}} du/h² = k. With
/// G(u) = (1/n)∫_{a_n}^u dv/h² (normalized to end at 1), the weight is
/// ψ_n(u) = c·w(G(u))·G'(u), w a trapezoid with tapers of width η and
/// c = 1/(1 − η), so ∫ψ_n = 1 and ψ_n ≤ c/(n h²) ≤ 2/(n h²).
#[derive(Debug, Clone)]
pub struct PhiSequence {
    h: ModulusH,
    n: usize,
    breakpoints: Vec<f64>,
    /// Geometric panel edges spanning [a_n, a_{n−1}].
    edges: Vec<f64>,
    /// G at each edge (before normalization the last entry is ≈ 1).
    g_at: Vec<f64>,
    g_norm: f64,
    /// ∫_{a_n}^{edge} Ψ
    phi_at: Vec<f64>,
    /// a_{n−1} − ∫_{a_n}^{a_{n−1}} Ψ, so φ(x) = |x| − offset beyond a_{n−1}.
    offset: f64,
}

/// ∫_lo^hi du/h²(u), integrated in ln u.
fn inv_h2_integral(h: &ModulusH, lo: f64, hi: f64) -> Result<f64, QuadError> {
    if lo == hi {
        return Ok(0.0);
    }
    let g = |s: f64| {
        let u = s.exp();
        let v = h.eval(u);
        u / (v * v)
    };
    Ok(quad::integrate(g, lo.ln(), hi.ln(), 1e-12)?.value)
}

/// Breakpoints a_0 = ε₀ > a_1 > … > a_n.
pub fn phi_breakpoints(h: &ModulusH, n: usize) -> Result<Vec<f64>, LocalTimeError> {
    let mut a = vec![h.eps0()];
    for k in 1..=n {
        let upper = a[k - 1];
        h.require_positive(upper)?;
        let target = k as f64;
        // Bracket in ln u: find a lower end whose integral exceeds k.
        let mut lo_ln = upper.ln();
        let mut span = 1.0;
        let mut found = false;
        while span < 1400.0 {
            let cand = (upper.ln() - span).exp();
            if cand <= 0.0 || cand < f64::MIN_POSITIVE {
                break;
            }
            h.require_positive(cand)?;
            let v = inv_h2_integral(h, cand, upper)?;
            if v >= target {
                lo_ln = cand.ln();
                found = true;
                break;
            }
            span *= 2.0;
        }
        if !found {
            return Err(LocalTimeError::Bisection {
                k,
                msg: format!("integral still below {target} at u = exp(ln a - {span})"),
            });
        }
        let mut hi_ln = upper.ln();
        for _ in 0..200 {
            let mid = 0.5 * (lo_ln + hi_ln);
            if mid <= lo_ln || mid >= hi_ln {
                break;
            }
            if inv_h2_integral(h, mid.exp(), upper)? >= target {
                lo_ln = mid;
            } else {
                hi_ln = mid;
            }
        }
        a.push((0.5 * (lo_ln + hi_ln)).exp());
    }
    Ok(a)
}

#[inline]
fn taper(g: f64) -> f64 {
    (g / PHI_TAPER).min((1.0 - g) / PHI_TAPER).clamp(0.0, 1.0)
}

/// ∫_0^g taper
#[inline]
fn taper_integral(g: f64) -> f64 {
    let eta = PHI_TAPER;
    let g = g.clamp(0.0, 1.0);
    if g <= eta {
        g * g / (2.0 * eta)
    } else if g <= 1.0 - eta {
        eta / 2.0 + (g - eta)
    } else {
        let r = 1.0 - g;
        (1.0 - eta) - r * r / (2.0 * eta)
    }
}

const TAPER_NORM: f64 = 1.0 / (1.0 - PHI_TAPER);

pub fn build_phi(h: &ModulusH, n: usize) -> Result<PhiSequence, LocalTimeError> {
    if n == 0 {
        return Err(LocalTimeError::BadIndex);
    }
    let breakpoints = phi_breakpoints(h, n)?;
    let lo = breakpoints[n];
    let hi = breakpoints[n - 1];
    let ratio = (hi / lo).ln();
    let mut edges: Vec<f64> = (0..=PHI_PANELS)
        .map(|j| lo * (ratio * j as f64 / PHI_PANELS as f64).exp())
        .collect();
    edges[0] = lo;
    edges[PHI_PANELS] = hi;
    let inv_n = 1.0 / n as f64;
    let density = |u: f64| {
        let v = h.eval(u);
        inv_n / (v * v)
    };
    let mut g_at = vec![0.0; PHI_PANELS + 1];
    for j in 0..PHI_PANELS {
        g_at[j + 1] = g_at[j] + kronrod15(&density, edges[j], edges[j + 1]).0;
    }
    let g_norm = g_at[PHI_PANELS];
    if !(g_norm > 0.0 && g_norm.is_finite()) {
        return Err(LocalTimeError::Bisection {
            k: n,
            msg: format!("cumulative weight {g_norm} is not positive"),
        });
    }
    let mut phi = PhiSequence {
        h: h.clone(),
        n,
        breakpoints,
        edges,
        g_at,
        g_norm,
        phi_at: vec![0.0; PHI_PANELS + 1],
        offset: 0.0,
    };
    for j in 0..PHI_PANELS {
        let (a, b) = (phi.edges[j], phi.edges[j + 1]);
        let step = kronrod15(&|u| phi.cum_psi(u), a, b).0;
        phi.phi_at[j + 1] = phi.phi_at[j] + step;
    }
    phi.offset = hi - phi.phi_at[PHI_PANELS];
    Ok(phi)
}

impl PhiSequence {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn modulus(&self) -> &ModulusH {
        &self.h
    }

    /// a_0 > a_1 > … > a_n.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// a_n: ψ_n vanishes below.
    pub fn support_lo(&self) -> f64 {
        self.breakpoints[self.n]
    }

    /// a_{n−1}: ψ_n vanishes above.
    pub fn support_hi(&self) -> f64 {
        self.breakpoints[self.n - 1]
    }

    fn panel(&self, u: f64) -> usize {
        match self.edges.binary_search_by(|e| e.total_cmp(&u)) {
            Ok(j) => j.min(PHI_PANELS - 1),
            Err(j) => j.saturating_sub(1).min(PHI_PANELS - 1),
        }
    }

    /// Normalized G(u) for u in [a_n, a_{n−1}].
    fn g(&self, u: f64) -> f64 {
        let j = self.panel(u);
        let inv_n = 1.0 / self.n as f64;
        let partial = if u == self.edges[j] {
            0.0
        } else {
            kronrod15(
                &|v: f64| {
                    let hv = self.h.eval(v);
                    inv_n / (hv * hv)
                },
                self.edges[j],
                u,
            )
            .0
        };
        ((self.g_at[j] + partial) / self.g_norm).clamp(0.0, 1.0)
    }

    /// Ψ(u) = ∫_0^u ψ_n for u ≥ 0.
    fn cum_psi(&self, u: f64) -> f64 {
        if u <= self.support_lo() {
            0.0
        } else if u >= self.support_hi() {
            1.0
        } else {
            (TAPER_NORM * taper_integral(self.g(u))).min(1.0)
        }
    }

    /// ψ_n(u) for u ≥ 0.
    pub fn psi(&self, u: f64) -> f64 {
        let u = u.abs();
        if u <= self.support_lo() || u >= self.support_hi() {
            return 0.0;
        }
        let hv = self.h.eval(u);
        TAPER_NORM * taper(self.g(u)) / (self.n as f64 * hv * hv * self.g_norm)
    }

    pub fn phi(&self, x: f64) -> f64 {
        let u = x.abs();
        if u <= self.support_lo() {
            0.0
        } else if u >= self.support_hi() {
            u - self.offset
        } else {
            let j = self.panel(u);
            let partial = if u == self.edges[j] {
                0.0
            } else {
                kronrod15(&|v| self.cum_psi(v), self.edges[j], u).0
            };
            (self.phi_at[j] + partial).min(u)
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        x.signum() * self.cum_psi(x.abs())
    }

    pub fn d2(&self, x: f64) -> f64 {
        self.psi(x)
    }
}

/// max over pairs of φ''_n(x − y)(σ(x) − σ(y))²; the (c) hypothesis asks for ≤ 2/n.
pub fn check_prop4_condition_c(
    spec: &SdeSpec,
    phi: &PhiSequence,
    pairs: &[(f64, f64)],
) -> ConditionReport {
    let bound = 2.0 / phi.n() as f64;
    let mut worst = (0.0f64, (0.0, 0.0));
    for &(x, y) in pairs {
        let ds = spec.sigma(x) - spec.sigma(y);
        let v = phi.d2(x - y) * ds * ds;
        if v > worst.0 || !v.is_finite() {
            worst = (v, (x, y));
        }
    }
    let fail = !(worst.0 <= bound);
    ConditionReport {
        condition: format!("prop4_c[n={}]", phi.n()),
        verdict: if fail { Verdict::Fail } else { Verdict::Pass },
        witness: fail.then(|| Witness {
            points: vec![worst.1 .0, worst.1 .1],
            value: worst.0,
            description: format!(
                "phi''(x-y)(sigma(x)-sigma(y))^2 = {:.6e} > 2/n = {bound:.6e}",
                worst.0
            ),
        }),
        estimate: Some(worst.0),
        samples: pairs.len(),
        seed: 0,
        notes: Vec::new(),
    }
}

/// Tolerance the (d) maxima must fall below at the largest n.
pub const CONDITION_D_TOL: f64 = 0.05;
/// Absolute quadrature floor for the (d) integrals: the integrand is a
/// second-order Taylor remainder and sits at roundoff level for tiny gaps.
pub const CONDITION_D_ABS_TOL: f64 = 1e-13;

/// Per-n maxima of the (d) integral on a fixed pair set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionDReport {
    pub n: Vec<usize>,
    pub maxima: Vec<f64>,
    pub argmax: Vec<(f64, f64)>,
    pub tolerance: f64,
    pub report: ConditionReport,
}

/// ∫ [φ_n(x − y + ΔF) − φ_n(x − y) − φ′_n(x − y)ΔF] λ(dz), ΔF = F(x,z) − F(y,z),
/// maximized over `pairs` for each φ in `phis` (increasing n).
/// Pass when the maxima never increase and the last one is ≤ `tolerance`.
pub fn check_prop4_condition_d(
    spec: &SdeSpec,
    phis: &[PhiSequence],
    pairs: &[(f64, f64)],
    tolerance: f64,
) -> ConditionDReport {
    let mut n = Vec::new();
    let mut maxima = Vec::new();
    let mut argmax = Vec::new();
    let mut failure: Option<Witness> = None;
    for phi in phis {
        let mut best = (0.0f64, (f64::NAN, f64::NAN));
        for &(x, y) in pairs {
            let d = x - y;
            let (p0, p1) = (phi.phi(d), phi.d1(d));
            let v = spec.integrate_z_tol(
                |z| {
                    let df = spec.jump(x, z) - spec.jump(y, z);
                    if df == 0.0 {
                        0.0
                    } else {
                        phi.phi(d + df) - p0 - p1 * df
                    }
                },
                CONDITION_D_ABS_TOL,
            );
            match v {
                Ok(v) if v.is_finite() => {
                    if v.abs() > best.0 || best.1 .0.is_nan() {
                        best = (v.abs(), (x, y));
                    }
                }
                Ok(v) => {
                    failure.get_or_insert(Witness {
                        points: vec![x, y, phi.n() as f64],
                        value: v,
                        description: "non-finite integral".into(),
                    });
                }
                Err(e) => {
                    failure.get_or_insert(Witness {
                        points: vec![x, y, phi.n() as f64],
                        value: f64::NAN,
                        description: e.to_string(),
                    });
                }
            }
        }
        n.push(phi.n());
        maxima.push(best.0);
        argmax.push(best.1);
    }
    let non_increasing = maxima
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-300);
    let last = maxima.last().copied().unwrap_or(0.0);
    let (verdict, witness) = if let Some(w) = failure {
        (Verdict::Inconclusive, Some(w))
    } else if !non_increasing {
        let i = maxima
            .windows(2)
            .position(|w| w[1] > w[0] * (1.0 + 1e-9) + 1e-300)
            .unwrap()
            + 1;
        (
            Verdict::Fail,
            Some(Witness {
                points: vec![argmax[i].0, argmax[i].1, n[i] as f64],
                value: maxima[i],
                description: format!(
                    "maximum rose from {:.4e} to {:.4e} at n = {}",
                    maxima[i - 1],
                    maxima[i],
                    n[i]
                ),
            }),
        )
    } else if last > tolerance {
        let i = maxima.len() - 1;
        (
            Verdict::Fail,
            Some(Witness {
                points: vec![argmax[i].0, argmax[i].1, n[i] as f64],
                value: last,
                description: format!(
                    "maximum {last:.4e} above tolerance {tolerance:e} at n = {}",
                    n[i]
                ),
            }),
        )
    } else {
        (Verdict::Pass, None)
    };
    ConditionDReport {
        report: ConditionReport {
            condition: "prop4_d".into(),
            verdict,
            witness,
            estimate: Some(last),
            samples: pairs.len() * phis.len(),
            seed: 0,
            notes: vec![
                "pointwise pair sampling stands in for uniformity over |x|, |y| <= m".into(),
            ],
        },
        n,
        maxima,
        argmax,
        tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::JumpMark;

    fn single_jump_path() -> JumpPath {
        JumpPath {
            label: "hand".into(),
            times: vec![0.0, 0.5, 1.0],
            values: vec![-1.0, 1.0, 1.0],
            marks: vec![JumpMark {
                knot: 1,
                atom: 0,
                time: 0.5,
                mark: 0.0,
                pre: -1.0,
                jump: 2.0,
            }],
            abort: None,
        }
    }

    #[test]
    fn hand_single_jump() {
        let p = single_jump_path();
        let l = tanaka_local_time(&p, 0.0);
        assert_eq!(l.value, 0.0);
        assert_eq!(
            (l.end_term, l.start_term, l.sign_integral, l.jump_correction),
            (1.0, 1.0, -2.0, Some(2.0))
        );
        let s = slanted_local_time(&p, 0.0);
        assert_eq!(s.value, 2.0);
        assert_eq!(s.recombine(), s.value);
    }

    #[test]
    fn pure_jump_qv() {
        let p = JumpPath {
            label: "jumps".into(),
            times: vec![0.0, 0.3, 0.6],
            values: vec![0.0, 1.0, -1.0],
            marks: vec![
                JumpMark {
                    knot: 1,
                    atom: 0,
                    time: 0.3,
                    mark: 0.0,
                    pre: 0.0,
                    jump: 1.0,
                },
                JumpMark {
                    knot: 2,
                    atom: 1,
                    time: 0.6,
                    mark: 0.0,
                    pre: 1.0,
                    jump: -2.0,
                },
            ],
            abort: None,
        };
        assert_eq!(quadratic_variation(&p).at_end(), (5.0, 0.0, 5.0));
    }

    #[test]
    fn breakpoints_for_identity_modulus() {
        let a = phi_breakpoints(&ModulusH::power(1.0), 10).unwrap();
        for (k, ak) in a.iter().enumerate() {
            let kf = k as f64;
            let oracle = 1.0 / (1.0 + kf * (kf + 1.0) / 2.0);
            assert!(
                (ak - oracle).abs() <= 1e-9 * oracle,
                "a_{k} = {ak}, expected {oracle}"
            );
        }
    }

    #[test]
    fn phi_basic_shape() {
        let phi = build_phi(&ModulusH::power(1.0), 3).unwrap();
        assert_eq!(phi.phi(0.0), 0.0);
        // ψ integrates to one and φ' reaches one at a_{n−1}.
        let mass = quad::integrate(|u| phi.psi(u), phi.support_lo(), phi.support_hi(), 1e-10)
            .unwrap()
            .value;
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
        assert_eq!(phi.d1(phi.support_hi()), 1.0);
        assert_eq!(phi.d1(-2.0), -1.0);
        // φ is continuous at a_{n−1}.
        let eps = 1e-9;
        let hi = phi.support_hi();
        assert!((phi.phi(hi - eps) - phi.phi(hi + eps)).abs() < 1e-8);
    }

    #[test]
    fn non_osgood_modulus_fails_bisection() {
        // ∫_0^1 du/u^{0.8} = 5 < 6 = 1 + 2 + 3 so a_3 does not exist.
        let err = phi_breakpoints(&ModulusH::power(0.4), 3).unwrap_err();
        assert!(
            matches!(err, LocalTimeError::Bisection { k: 3, .. }),
            "{err:?}"
        );
    }
}
