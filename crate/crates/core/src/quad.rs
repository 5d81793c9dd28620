//! Adaptive Gauss–Kronrod quadrature.
//!
//! Everything that integrates against a Lévy measure, a modulus of
//! continuity, or the φ_n mollifiers goes through here. The rule is the
//! QUADPACK 7/15 pair with global bisection of the worst panel; an infinite
//! upper limit is mapped onto [0, 1) by `z = a + s / (1 - s)`.

#![allow(clippy::excessive_precision)] // published node/weight tables

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

/// Default relative tolerance for every λ(dz) integral in the crate.
pub const DEFAULT_REL_TOL: f64 = 1e-6;

const MAX_PANELS: usize = 4000;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss 7-point weights, paired with XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("integrand is not finite at {at}")]
    NonFinite { at: f64 },
    #[error("quadrature did not converge on [{a}, {b}]: estimate {value}, error {error} after {panels} panels")]
    NoConvergence {
        a: f64,
        b: f64,
        value: f64,
        error: f64,
        panels: usize,
    },
    #[error("invalid interval [{a}, {b}]")]
    BadInterval { a: f64, b: f64 },
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

/// Fixed 15-point Kronrod rule on `[a, b]`; returns (kronrod, |kronrod - gauss|).
pub fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * half, ((k - g) * half).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Integrate `f` over `[a, b]` to the given relative tolerance. `b` may be
/// `+inf`. An empty interval integrates to zero.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
) -> Result<Integral, QuadError> {
    integrate_tol(f, a, b, rel_tol, 0.0)
}

/// As `integrate`, but also accepts once the error estimate is below `abs_tol`.
pub fn integrate_tol<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<Integral, QuadError> {
    if a.is_nan() || b.is_nan() || a == f64::INFINITY || b < a {
        return Err(QuadError::BadInterval { a, b });
    }
    if a == b {
        return Ok(Integral {
            value: 0.0,
            abs_error: 0.0,
            evaluations: 0,
        });
    }
    if a.is_infinite() {
        return Err(QuadError::BadInterval { a, b });
    }
    if b.is_infinite() {
        let g = |s: f64| {
            if s >= 1.0 {
                return 0.0;
            }
            let t = 1.0 - s;
            f(a + s / t) / (t * t)
        };
        return integrate_finite(&g, 0.0, 1.0, rel_tol, abs_tol);
    }
    integrate_finite(&f, a, b, rel_tol, abs_tol)
}

fn integrate_finite<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<Integral, QuadError> {
    let (value, error) = kronrod15(f, a, b);
    if !value.is_finite() {
        return Err(non_finite(f, a, b));
    }
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value, error });
    let mut total = value;
    let mut total_err = error;
    let mut l1 = value.abs();
    let mut evaluations = 15;
    loop {
        // Integrals that cancel to ~0 are judged against ∫|f| instead.
        let target = (rel_tol * total.abs())
            .max(1e-12 * l1)
            .max(abs_tol)
            .max(f64::MIN_POSITIVE);
        if total_err <= target {
            break;
        }
        if heap.len() >= MAX_PANELS {
            // Accept when the remaining error is dominated by roundoff.
            if total_err <= 1e3 * f64::EPSILON * heap.iter().map(|p| p.value.abs()).sum::<f64>() {
                break;
            }
            return Err(QuadError::NoConvergence {
                a,
                b,
                value: total,
                error: total_err,
                panels: heap.len(),
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel is at floating-point resolution; keep it and stop refining.
            heap.push(worst);
            break;
        }
        let (v1, e1) = kronrod15(f, worst.a, mid);
        let (v2, e2) = kronrod15(f, mid, worst.b);
        evaluations += 30;
        if !(v1.is_finite() && v2.is_finite()) {
            return Err(non_finite(f, worst.a, worst.b));
        }
        total += v1 + v2 - worst.value;
        l1 += v1.abs() + v2.abs() - worst.value.abs();
        total_err += e1 + e2 - worst.error;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum to shed accumulated drift from the incremental updates.
    let value: f64 = heap.iter().map(|p| p.value).sum();
    let abs_error: f64 = heap.iter().map(|p| p.error).sum();
    Ok(Integral {
        value,
        abs_error,
        evaluations,
    })
}

fn non_finite<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> QuadError {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut at = center;
    for x in XGK
        .iter()
        .flat_map(|x| [center - half * x, center + half * x])
    {
        if !f(x).is_finite() {
            at = x;
            break;
        }
    }
    QuadError::NonFinite { at }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| 3.0 * x * x, 0.0, 2.0, 1e-12).unwrap();
        assert!((r.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn infinite_tail() {
        // ∫_1^∞ z^{-2.5} dz = 2/3
        let r = integrate(|z| z.powf(-2.5), 1.0, f64::INFINITY, 1e-10).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn endpoint_singularity_converges() {
        // ∫_0^1 x^{-1/2} dx = 2
        let r = integrate(|x| x.powf(-0.5), 0.0, 1.0, 1e-8).unwrap();
        assert!((r.value - 2.0).abs() < 1e-6, "{}", r.value);
    }

    #[test]
    fn oscillatory() {
        let r = integrate(|x| (20.0 * x).cos(), 0.0, 10.0, 1e-10).unwrap();
        let exact = (200.0_f64).sin() / 20.0;
        assert!((r.value - exact).abs() < 1e-9);
    }

    #[test]
    fn empty_and_bad_intervals() {
        assert_eq!(integrate(|x| x, 1.0, 1.0, 1e-6).unwrap().value, 0.0);
        assert!(matches!(
            integrate(|x| x, 2.0, 1.0, 1e-6),
            Err(QuadError::BadInterval { .. })
        ));
    }

    #[test]
    fn non_finite_integrand_reported() {
        let r = integrate(|x| if x > 0.5 { f64::NAN } else { 1.0 }, 0.0, 1.0, 1e-6);
        assert!(matches!(r, Err(QuadError::NonFinite { .. })));
    }
}
