use jumplab::model::*;
use jumplab::noise::*;
use jumplab::solver::*;
use proptest::prelude::*;

fn noise(t_end: f64, dt: f64, m: &LevyMeasure, seed: u64) -> NoiseRealization {
    NoiseRealization::sample(&TimeGrid::uniform(t_end, dt).unwrap(), m, seed).unwrap()
}

#[test]
fn constant_drift_closed_form() {
    let spec = builtin(&ModelLabel::Affine {
        b0: 0.7,
        b1: 0.0,
        s0: 0.0,
        s1: 0.0,
    })
    .unwrap();
    let n = noise(2.0, 1e-3, &LevyMeasure::empty(), 1);
    let p = solve(&spec, &n, -1.0, &SolveConfig::new(1e-3)).unwrap();
    for (t, x) in p.times.iter().zip(&p.values) {
        assert!((x - (-1.0 + 0.7 * t)).abs() <= 1e-12, "t = {t}");
    }
}

#[test]
fn constant_jump_closed_form() {
    // X_t = x0 + c·(N_t − λ(|z| ≤ 1)·t) with λ Lebesgue on [−1, 1] (mass 2).
    let c = 0.3;
    let spec = builtin(&ModelLabel::ConstantJump { c }).unwrap();
    for seed in 0..20 {
        let n = noise(1.0, 1e-2, spec.measure(), seed);
        let p = solve(&spec, &n, 0.5, &SolveConfig::new(1e-2)).unwrap();
        for (t, x) in p.times.iter().zip(&p.values) {
            let count = n.atoms().atoms.iter().filter(|a| a.time <= *t).count() as f64;
            let exact = 0.5 + c * (count - 2.0 * t);
            assert!(
                (x - exact).abs() <= 1e-12,
                "seed {seed}, t = {t}: {x} vs {exact}"
            );
        }
    }
}

#[test]
fn pure_brownian_reproduces_w() {
    let spec = builtin(&ModelLabel::Affine {
        b0: 0.0,
        b1: 0.0,
        s0: 1.0,
        s1: 0.0,
    })
    .unwrap();
    let grid = TimeGrid::uniform(1.0, 1e-2).unwrap();
    let n = NoiseRealization::sample(&grid, &LevyMeasure::empty(), 3).unwrap();
    let p = solve(&spec, &n, 0.0, &SolveConfig::new(1e-2)).unwrap();
    for (x, w) in p.values.iter().zip(&n.brownian().values) {
        assert!((x - w).abs() < 1e-12);
    }
}

#[test]
fn jumps_are_recorded_with_pre_values() {
    let spec = builtin(&ModelLabel::SqrtDiffusion {
        kappa: 1.0,
        b0: 0.0,
        jump: 0.5,
    })
    .unwrap();
    let n = noise(1.0, 1e-2, spec.measure(), 11);
    let p = solve(&spec, &n, 0.4, &SolveConfig::new(1e-2)).unwrap();
    assert_eq!(p.marks.len(), n.atoms().len());
    for m in &p.marks {
        assert_eq!(p.values[m.knot], m.pre + m.jump);
        assert_eq!(m.jump, spec.jump(m.pre, m.mark));
        assert_eq!(p.times[m.knot], m.time);
    }
}

#[test]
fn quadrature_compensator_tracks_analytic() {
    let spec = builtin(&ModelLabel::SpectrallyPositive {
        g: GFunction::ClampedPositive { cap: 1.0 },
        alpha: 1.5,
        drift: 0.0,
        vol: 0.0,
    })
    .unwrap();
    let n = noise(1.0, 1e-2, spec.measure(), 2);
    let a = solve(&spec, &n, 0.3, &SolveConfig::new(1e-2)).unwrap();
    let q = solve(
        &spec,
        &n,
        0.3,
        &SolveConfig::new(1e-2).with_compensator(CompensatorMode::Quadrature),
    )
    .unwrap();
    let gap = JumpPath::difference(&a, &q).unwrap().sup_abs();
    assert!(gap < 1e-5, "{gap}");
}

#[test]
fn coupled_solve_rejects_different_windows() {
    let a = builtin(&ModelLabel::ConstantJump { c: 1.0 }).unwrap();
    let b = builtin_in_window(
        &ModelLabel::ConstantJump { c: 1.0 },
        Some(LevyMeasure::lebesgue(0.0, 0.5).unwrap()),
    )
    .unwrap();
    let n = noise(1.0, 0.1, a.measure(), 0);
    let err = coupled_solve((&a, &b), (0.0, 0.0), &n, &SolveConfig::new(0.1)).unwrap_err();
    assert!(matches!(err, SolverError::MeasureMismatch { .. }));
}

#[test]
fn realization_must_match_model_window() {
    let spec = builtin(&ModelLabel::ConstantJump { c: 1.0 }).unwrap();
    let n = noise(1.0, 0.1, &LevyMeasure::lebesgue(0.0, 2.0).unwrap(), 0);
    assert!(solve(&spec, &n, 0.0, &SolveConfig::new(0.1)).is_err());
}

#[test]
fn forced_big_atom_restarts_once() {
    let spec = builtin(&ModelLabel::SpectrallyPositive {
        g: GFunction::Constant { c: 1.0 },
        alpha: 1.5,
        drift: 0.0,
        vol: 0.0,
    })
    .unwrap();
    let grid = TimeGrid::uniform(1.0, 1e-2).unwrap();
    let n = NoiseRealization::with_atoms(
        &grid,
        spec.measure(),
        4,
        vec![Atom {
            time: 0.37,
            mark: 3.0,
        }],
    )
    .unwrap();
    let direct = solve(&spec, &n, 0.0, &SolveConfig::new(1e-2)).unwrap();
    let seg = segmented_solve(&spec, &n, 0.0, &SolveConfig::new(1e-2), 1.0).unwrap();
    assert!(direct.bitwise_eq(&seg.path));
    assert_eq!(seg.segments.len(), 2);
    assert_eq!(seg.segments[1].start_time, 0.37);
}

#[test]
fn no_big_jumps_means_one_segment() {
    let spec = builtin(&ModelLabel::ConstantJump { c: 0.2 }).unwrap();
    let n = noise(1.0, 1e-2, spec.measure(), 8);
    let seg = segmented_solve(&spec, &n, 0.0, &SolveConfig::new(1e-2), 1.0).unwrap();
    assert_eq!(seg.segments.len(), 1);
}

#[test]
fn csv_marks_atom_rows() {
    let spec = builtin(&ModelLabel::ConstantJump { c: 0.5 }).unwrap();
    let grid = TimeGrid::uniform(1.0, 0.5).unwrap();
    let n = NoiseRealization::with_atoms(
        &grid,
        spec.measure(),
        0,
        vec![Atom {
            time: 0.25,
            mark: 0.1,
        }],
    )
    .unwrap();
    let p = solve(&spec, &n, 0.0, &SolveConfig::new(0.5)).unwrap();
    let csv = p.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,X,is_atom,z,delta_X");
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[2].starts_with("0.25,") && lines[2].ends_with(",1,0.1,0.5"));
    assert!(lines[3].ends_with(",0,,"));
}

#[test]
fn residual_detects_a_foreign_path() {
    let a = builtin(&ModelLabel::Affine {
        b0: 1.0,
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
    let n = noise(1.0, 1e-2, &LevyMeasure::empty(), 6);
    let cfg = SolveConfig::new(1e-2);
    let p = solve(&b, &n, 0.0, &cfg).unwrap();
    let r = sde_residual(&a, &n, &p, &cfg).unwrap();
    // b's path misses a's unit drift: R_t = −t.
    assert!((r.last().unwrap() + 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solve_is_deterministic(seed in any::<u64>(), x0 in -2.0f64..2.0) {
        let spec = builtin(&ModelLabel::SqrtDiffusion { kappa: 1.0, b0: 0.2, jump: 0.5 }).unwrap();
        let a = solve(&spec, &noise(1.0, 1e-2, spec.measure(), seed), x0, &SolveConfig::new(1e-2)).unwrap();
        let b = solve(&spec, &noise(1.0, 1e-2, spec.measure(), seed), x0, &SolveConfig::new(1e-2)).unwrap();
        prop_assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn segmented_equals_direct(seed in any::<u64>(), threshold in 0.05f64..3.0, x0 in -1.0f64..1.0) {
        let spec = builtin(&ModelLabel::SpectrallyPositive {
            g: GFunction::ClampedPositive { cap: 1.0 }, alpha: 1.5, drift: 0.1, vol: 0.3,
        }).unwrap();
        let n = noise(1.0, 1e-2, spec.measure(), seed);
        let cfg = SolveConfig::new(1e-2);
        let direct = solve(&spec, &n, x0, &cfg).unwrap();
        let seg = segmented_solve(&spec, &n, x0, &cfg, threshold).unwrap();
        prop_assert!(direct.bitwise_eq(&seg.path));
        let big = direct.marks.iter().filter(|m| m.jump.abs() >= threshold).count();
        prop_assert_eq!(seg.segments.len(), 1 + big);
    }

    #[test]
    fn own_path_has_zero_residual(seed in any::<u64>(), x0 in -1.0f64..1.0) {
        let spec = builtin(&ModelLabel::SqrtDiffusion { kappa: 1.0, b0: 0.0, jump: 0.5 }).unwrap();
        let n = noise(1.0, 1e-2, spec.measure(), seed);
        let cfg = SolveConfig::new(1e-2);
        let p = solve(&spec, &n, x0, &cfg).unwrap();
        prop_assert!(sde_residual(&spec, &n, &p, &cfg).unwrap().iter().all(|r| *r == 0.0));
    }

    #[test]
    fn max_and_min_bracket_both_legs(seed in any::<u64>(), x1 in -1.0f64..1.0, x2 in -1.0f64..1.0) {
        let spec = builtin(&ModelLabel::SqrtDiffusion { kappa: 1.0, b0: 0.0, jump: 0.5 }).unwrap();
        let n = noise(1.0, 1e-2, spec.measure(), seed);
        let (a, b) = coupled_solve((&spec, &spec), (x1, x2), &n, &SolveConfig::new(1e-2)).unwrap();
        let y = JumpPath::combine(&a, &b, "max", f64::max).unwrap();
        let z = JumpPath::combine(&a, &b, "min", f64::min).unwrap();
        for i in 0..y.len() {
            prop_assert!(z.values[i] <= a.values[i].min(b.values[i]) && y.values[i] >= a.values[i].max(b.values[i]));
            prop_assert_eq!(y.values[i] + z.values[i], a.values[i] + b.values[i]);
        }
    }
}
