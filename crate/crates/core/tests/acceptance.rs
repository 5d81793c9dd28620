//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Tolerances are pinned here; runtimes are wall clock on this machine.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use jumplab::cli::{self, RunOptions};
use jumplab::harness::*;
use jumplab::localtime::*;
use jumplab::model::*;
use jumplab::noise::*;
use jumplab::solver::*;
use jumplab::stats::{ks_p_value, ks_statistic_normal, loglog_slope, mean};
use rayon::prelude::*;

const KS_LEVEL: f64 = 1e-3;
const POISSON_MEAN_TOL: f64 = 0.042;
const ROUNDOFF: f64 = 1e-12;
const LOCAL_TIME_TOL: f64 = 0.05;
const OCCUPATION_GAP_MAX: f64 = 0.1;
const PHI_MESH: usize = 20_001;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(budget: Duration, t: Instant) -> (bool, String) {
    let e = t.elapsed();
    (
        e < budget,
        format!("{:.2}s < {}s", e.as_secs_f64(), budget.as_secs()),
    )
}

fn brownian_motion() -> SdeSpec {
    builtin(&ModelLabel::Affine {
        b0: 0.0,
        b1: 0.0,
        s0: 1.0,
        s1: 0.0,
    })
    .unwrap()
}

fn bm_path(dt: f64, seed: u64) -> JumpPath {
    let grid = TimeGrid::uniform(1.0, dt).unwrap();
    let n = NoiseRealization::sample(&grid, &LevyMeasure::empty(), seed).unwrap();
    solve(&brownian_motion(), &n, 0.0, &SolveConfig::new(dt)).unwrap()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let grid = TimeGrid::uniform(1.0, 1e-3).unwrap();
    let z: Vec<f64> = (0..100u64)
        .flat_map(|s| {
            let w = sample_brownian(&grid, s);
            w.values
                .windows(2)
                .map(|p| (p[1] - p[0]) / 1e-3f64.sqrt())
                .collect::<Vec<_>>()
        })
        .collect();
    let d = ks_statistic_normal(&z);
    let p = ks_p_value(d, z.len());
    let m = LevyMeasure::lebesgue(0.0, 1.0).unwrap();
    let counts: Vec<f64> = (0..10_000u64)
        .map(|s| sample_poisson_atoms(&m, 1.0, s).unwrap().len() as f64)
        .collect();
    let cm = mean(&counts);
    let (fast, rt) = within(Duration::from_secs(10), t);
    check(
        p > KS_LEVEL && (cm - 2.0).abs() <= POISSON_MEAN_TOL && fast,
        format!("KS n={} D={d:.5} p={p:.3} (> {KS_LEVEL}); Poisson mean {cm:.4} (2 ± {POISSON_MEAN_TOL}); {rt}", z.len()),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let dt = 1e-3;
    let grid = TimeGrid::uniform(1.0, dt).unwrap();
    let drift = builtin(&ModelLabel::Affine {
        b0: 0.7,
        b1: 0.0,
        s0: 0.0,
        s1: 0.0,
    })
    .unwrap();
    let jump = builtin(&ModelLabel::ConstantJump { c: 0.3 }).unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let n = NoiseRealization::sample(&grid, &LevyMeasure::empty(), seed).unwrap();
        let p = solve(&drift, &n, -1.0, &SolveConfig::new(dt)).unwrap();
        for (s, x) in p.times.iter().zip(&p.values) {
            worst = worst.max((x - (-1.0 + 0.7 * s)).abs());
        }
        // X_t = x0 + c(N_t − 2t) for Lebesgue on |z| ≤ 1.
        let n = NoiseRealization::sample(&grid, jump.measure(), seed).unwrap();
        let p = solve(&jump, &n, 0.5, &SolveConfig::new(dt)).unwrap();
        for (s, x) in p.times.iter().zip(&p.values) {
            let count = n.atoms().atoms.iter().filter(|a| a.time <= *s).count() as f64;
            worst = worst.max((x - (0.5 + 0.3 * (count - 2.0 * s))).abs());
        }
    }
    let run = RunSettings::new(1.0, 1e-2, RunSettings::seed_range(0, 0, 100));
    let r = strong_order_experiment(0.05, 0.2, 1.0, &[1e-2, 1e-3, 1e-4], &run).unwrap();
    let order = r.aggregate["order"];
    let (fast, rt) = within(Duration::from_secs(60), t);
    check(
        worst <= ROUNDOFF && r.passed() && fast,
        format!(
            "closed-form max error {worst:.2e} (<= {ROUNDOFF:e}); gbm strong order {order:.3} in [{}, {}]; {rt}",
            STRONG_ORDER_BAND.0, STRONG_ORDER_BAND.1
        ),
    )
}

fn hand_path(x0: f64, x1: f64) -> JumpPath {
    JumpPath {
        label: "hand".into(),
        times: vec![0.0, 0.5, 1.0],
        values: vec![x0, x1, x1],
        marks: vec![JumpMark {
            knot: 1,
            atom: 0,
            time: 0.5,
            mark: 0.0,
            pre: x0,
            jump: x1 - x0,
        }],
        abort: None,
    }
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let l: Vec<f64> = (0..1000u64)
        .into_par_iter()
        .map(|s| tanaka_local_time(&bm_path(1e-4, s), 0.0).value)
        .collect();
    let m = mean(&l);
    let target = (2.0 / std::f64::consts::PI).sqrt();
    // Jumps −1 → 1 and 1 → −1 across 0: L⁰ = 0, ℒ⁰ = 2.
    let hand_ok = [(-1.0, 1.0), (1.0, -1.0)].iter().all(|&(a, b)| {
        let p = hand_path(a, b);
        tanaka_local_time(&p, 0.0).value == 0.0 && slanted_local_time(&p, 0.0).value == 2.0
    });
    let (fast, rt) = within(Duration::from_secs(120), t);
    check(
        (m - target).abs() <= LOCAL_TIME_TOL && hand_ok && fast,
        format!("mean L0_1 {m:.4} vs sqrt(2/pi) {target:.4} (± {LOCAL_TIME_TOL}); hand examples exact: {hand_ok}; {rt}"),
    )
}

fn criterion_4() -> Outcome {
    // Level count tied to the step: 2/√Δt levels.
    let gap_at = |dt: f64| -> f64 {
        let n = (2.0 / dt.sqrt()).round() as usize;
        let gaps: Vec<f64> = (0..10u64)
            .map(|s| {
                let p = bm_path(dt, s);
                occupation_identity_check(&p, |_| 1.0, &level_grid_for(&p, n))
                    .unwrap()
                    .relative_gap
            })
            .collect();
        mean(&gaps)
    };
    let gaps: Vec<f64> = [1e-2, 1e-3, 1e-4].iter().map(|&dt| gap_at(dt)).collect();
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    check(
        gaps[2] <= OCCUPATION_GAP_MAX && decreasing,
        format!(
            "mean relative gap {:.2e} / {:.2e} / {:.2e} at dt 1e-2 / 1e-3 / 1e-4 (last <= {OCCUPATION_GAP_MAX}, decreasing: {decreasing})",
            gaps[0], gaps[1], gaps[2]
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [0.3, 0.4, 0.5, 0.75, 1.0] {
        let v = check_osgood(&ModulusH::power(p), 1.0, 300).unwrap().verdict;
        let expected = if p >= 0.5 {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        ok &= v == expected;
        parts.push(format!("p={p}: {v:?}"));
    }
    check(ok, parts.join(", "))
}

fn criterion_6() -> Outcome {
    let h = ModulusH::power(1.0);
    let phis: Vec<PhiSequence> = (1..=10).map(|n| build_phi(&h, n).unwrap()).collect();
    let mut envelope_ok = true;
    let mut slope_ok = true;
    for phi in &phis {
        let a_prev = phi.support_hi();
        for i in 0..PHI_MESH {
            let z = -1.5 + 3.0 * i as f64 / (PHI_MESH - 1) as f64;
            let gap = z.abs() - phi.phi(z);
            envelope_ok &= gap >= -ROUNDOFF && gap <= a_prev + ROUNDOFF;
            slope_ok &= phi.d1(z).abs() <= 1.0 + ROUNDOFF;
        }
    }
    // (c) with σ = sin, which has |σ(x) − σ(y)| ≤ |x − y|.
    let sigma = SdeSpec::builder("sin")
        .sigma(|x: f64| x.sin())
        .build()
        .unwrap();
    let pairs: Vec<(f64, f64)> = (0..=40)
        .flat_map(|i| (0..=40).map(move |k| (-1.0 + i as f64 / 20.0, 10f64.powf(-k as f64 / 10.0))))
        .map(|(x, g)| (x + g, x))
        .collect();
    let c_ok = phis
        .iter()
        .all(|phi| check_prop4_condition_c(&sigma, phi, &pairs).passed());
    // (d) with F = z·G(x) on Lebesgue |z| ≤ 1, G = sin and G = x⁺ ∧ 1.
    let d_pairs: Vec<(f64, f64)> = (0..=10)
        .flat_map(|i| {
            (0..20).map(move |k| {
                (
                    -1.0 + 0.2 * i as f64,
                    10f64.powf(-3.0 + 3.0 * k as f64 / 19.0),
                )
            })
        })
        .map(|(x, g)| (x + g, x))
        .collect();
    let mut d_detail = Vec::new();
    let mut d_ok = true;
    for (name, g) in [
        ("sin", (|x: f64| x.sin()) as fn(f64) -> f64),
        ("min(x+,1)", |x: f64| x.clamp(0.0, 1.0)),
    ] {
        let spec = SdeSpec::builder(format!("z*{name}"))
            .jump(move |x, z| z * g(x))
            .measure(LevyMeasure::lebesgue(0.0, 1.0).unwrap())
            .build()
            .unwrap();
        let d = check_prop4_condition_d(&spec, &phis, &d_pairs, CONDITION_D_TOL);
        d_ok &= d.report.passed();
        d_detail.push(format!(
            "{name}: {:.3e} -> {:.3e}",
            d.maxima[0], d.maxima[9]
        ));
    }
    check(
        envelope_ok && slope_ok && c_ok && d_ok,
        format!(
            "(a) envelope {envelope_ok}, (b) |phi'| <= 1 {slope_ok}, (c) 2/n {c_ok}, (d) max n=1 -> n=10 [{}] (<= {CONDITION_D_TOL})",
            d_detail.join("; ")
        ),
    )
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let seeds = |n: usize| RunSettings::seed_range(7000, 0, n);
    let run = |dt: f64, n: usize| RunSettings::new(1.0, dt, seeds(n));
    let mut parts = Vec::new();
    let mut ok = true;
    let mut record = |name: &str, pass: bool, detail: String| {
        ok &= pass;
        parts.push(format!(
            "{name} {}: {detail}",
            if pass { "ok" } else { "FAIL" }
        ));
    };

    // Linear drift with additive noise: the gap is δ·e^t.
    let linear = builtin(&ModelLabel::Affine {
        b0: 0.0,
        b1: 1.0,
        s0: 0.5,
        s1: 0.0,
    })
    .unwrap();
    let r = uniqueness_gap_experiment(
        &linear,
        1.0,
        &[0.0, 1e-3, 1e-2, 1e-1],
        Interval::new(-5.0, 5.0),
        &run(1e-3, 100),
    )
    .unwrap();
    record(
        "gap",
        r.passed(),
        format!(
            "ratio {:.4} <= {:.4}",
            r.aggregate["ratio[1e-1]"], r.tolerances["envelope"]
        ),
    );

    // Theorem-14 setting: common σ, b₁ = 0 ≤ b₂ = 1.
    let bm = builtin(&ModelLabel::Affine {
        b0: 0.0,
        b1: 0.0,
        s0: 1.0,
        s1: 0.0,
    })
    .unwrap();
    let up = builtin(&ModelLabel::Affine {
        b0: 1.0,
        b1: 0.0,
        s0: 1.0,
        s1: 0.0,
    })
    .unwrap();
    let bx = Interval::new(-5.0, 5.0);
    let r = comparison_experiment((&bm, &up), (0.0, 0.0), bx, false, &run(1e-3, 1000)).unwrap();
    record(
        "cmp-diffusion",
        r.passed(),
        format!("{} violations", r.aggregate["violations"]),
    );
    // Theorem-15 setting: F = zG(x), monotone jump map, drifts 0 ≤ 0.5, starts 0.2 ≤ 0.3.
    let g = GFunction::ClampedPositive { cap: 1.0 };
    let sp = |drift: f64| {
        builtin(&ModelLabel::SpectrallyPositive {
            g,
            alpha: 1.5,
            drift,
            vol: 0.0,
        })
        .unwrap()
    };
    let (s1, s2) = (sp(0.0), sp(0.5));
    let r = comparison_experiment((&s1, &s2), (0.2, 0.3), bx, false, &run(1e-3, 1000)).unwrap();
    record(
        "cmp-jumps",
        r.passed(),
        format!("{} violations", r.aggregate["violations"]),
    );
    let r = comparison_experiment((&up, &bm), (0.0, 0.0), bx, true, &run(1e-3, 1000)).unwrap();
    record(
        "cmp-swapped",
        r.verdict == ExperimentVerdict::Fail,
        format!("{} violations detected", r.aggregate["violations"]),
    );

    // Corollary-6 models and the tanaka_sign control at Δt = 1e-4.
    let sq = builtin(&ModelLabel::SqrtDiffusion {
        kappa: 1.0,
        b0: 0.0,
        jump: 0.5,
    })
    .unwrap();
    let r = slanted_zero_experiment((&sq, &sq), (0.5, 0.6), &run(1e-4, 100)).unwrap();
    record(
        "slanted-sqrt",
        r.passed(),
        format!(
            "max {:.2e} <= tau {:.3}",
            r.aggregate["max_abs_slanted_lt0"], r.tolerances["tau"]
        ),
    );
    let r = slanted_zero_experiment((&s1, &s1), (0.2, 0.3), &run(1e-4, 100)).unwrap();
    record(
        "slanted-stable",
        r.passed(),
        format!("max {:.2e}", r.aggregate["max_abs_slanted_lt0"]),
    );
    let minus = builtin(&ModelLabel::TanakaSign { zero_sign: -1.0 }).unwrap();
    let plus = builtin(&ModelLabel::TanakaSign { zero_sign: 1.0 }).unwrap();
    let r = slanted_zero_experiment((&minus, &plus), (0.0, 0.0), &run(1e-4, 100)).unwrap();
    record(
        "slanted-tanaka",
        r.verdict == ExperimentVerdict::Fail,
        format!("max {:.3} > tau", r.aggregate["max_abs_slanted_lt0"]),
    );

    // Lattice residual under refinement.
    let r = lattice_experiment(&sq, (0.5, 0.6), &[1e-3, 1e-4], &run(1e-2, 100)).unwrap();
    let sup_order = loglog_slope(
        &[1e-2, 1e-3, 1e-4],
        &[
            r.aggregate["sup_residual[1e-2]"],
            r.aggregate["sup_residual[1e-3]"],
            r.aggregate["sup_residual[1e-4]"],
        ],
    );
    record(
        "lattice",
        r.passed(),
        format!(
            "mean-residual order {:.3} (>= {LATTICE_ORDER_MIN}), sup-residual order {sup_order:.3}",
            r.aggregate["residual_order"]
        ),
    );

    let one = builtin(&ModelLabel::SpectrallyPositive {
        g: GFunction::Constant { c: 1.0 },
        alpha: 1.5,
        drift: 0.0,
        vol: 0.0,
    })
    .unwrap();
    let r = big_jump_equivalence_experiment(&one, 0.0, 1.0, &[], &run(1e-3, 100)).unwrap();
    record(
        "big-jump",
        r.passed(),
        format!(
            "{}/100 equal, max {} segments",
            r.aggregate["seeds_equal"], r.aggregate["max_segments"]
        ),
    );

    let (fast, rt) = within(Duration::from_secs(600), t);
    check(ok && fast, format!("{}; {rt}", parts.join("; ")))
}

const CONFIGS: &[(&str, &str)] = &[
    ("uniqueness_gap_experiment", "x0 = 1.0\ndeltas = [0.0, 0.01]\n[[models]]\nname = \"affine\"\nb1 = 1.0\ns0 = 0.5"),
    ("slanted_zero_experiment", "x0 = [0.5, 0.6]\n[[models]]\nname = \"sqrt_diffusion\""),
    (
        "comparison_experiment",
        "x0 = [0.2, 0.3]\n[[models]]\nname = \"spectrally_positive\"\ng = { kind = \"clamped_positive\" }\n[[models]]\nname = \"spectrally_positive\"\ng = { kind = \"clamped_positive\" }\ndrift = 0.5",
    ),
    ("lattice_experiment", "x0 = [0.5, 0.6]\nrefinement = [0.001]\n[[models]]\nname = \"sqrt_diffusion\""),
    (
        "big_jump_equivalence_experiment",
        "x0 = 0.0\nforced_atoms = [[0.5, 2.0]]\n[[models]]\nname = \"spectrally_positive\"\ng = { kind = \"constant\", c = 1.0 }",
    ),
    ("spectrally_positive_experiment", "g = { kind = \"clamped_positive\" }\nx0 = 0.2\ndeltas = [0.01]"),
    ("strong_order_experiment", "mu = 0.05\nsigma = 0.2\nsteps = [0.01, 0.001]"),
];

fn rerun_identical(dir: &Path, name: &str, body: &str) -> Result<bool, String> {
    let (params, models) = body
        .split_once("[[models]]")
        .map_or((body, ""), |(p, m)| (p, m));
    let models = if models.is_empty() {
        String::new()
    } else {
        format!("[[models]]{models}")
    };
    let text = format!(
        "schema_version = 1\n[experiment]\nname = \"{name}\"\n{params}\n{models}\n[noise]\nt_end = 1.0\nbase_step = 0.01\n[seeds]\nroot = 11\ncount = 12\n"
    );
    let cfg = dir.join(format!("{name}.toml"));
    fs::write(&cfg, text).map_err(|e| e.to_string())?;
    let first = RunOptions {
        out: Some(dir.join("first")),
        seed_offset: 3,
        ..Default::default()
    };
    let a = cli::run(&cfg, &first).map_err(|e| e.to_string())?;
    let second = RunOptions {
        out: Some(dir.join("second")),
        ..Default::default()
    };
    let b = cli::run(&a.report_path, &second).map_err(|e| e.to_string())?;
    let same = |x: &Path, y: &Path| fs::read(x).ok() == fs::read(y).ok();
    Ok(same(&a.report_path, &b.report_path) && same(&a.seeds_path, &b.seeds_path))
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = Vec::new();
    for (name, body) in CONFIGS {
        match rerun_identical(dir.path(), name, body) {
            Ok(true) => {}
            Ok(false) => bad.push(format!("{name} differs")),
            Err(e) => bad.push(format!("{name}: {e}")),
        }
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            format!(
                "{} experiments rerun from their embedded config byte for byte",
                CONFIGS.len()
            )
        } else {
            bad.join("; ")
        },
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("noise statistics", criterion_1),
        ("exact-solution oracles", criterion_2),
        ("local time", criterion_3),
        ("occupation density", criterion_4),
        ("osgood checker", criterion_5),
        ("phi_n suite", criterion_6),
        ("theorem experiments", criterion_7),
        ("determinism", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        println!(
            "criterion {} [{name}]: {} | {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
