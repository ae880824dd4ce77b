//! Acceptance criteria, one line of output per criterion.
//!
//! Runs as a plain binary so the PASS/FAIL lines are always printed.

use std::f64::consts::{PI, TAU};
use std::process::ExitCode;
use std::time::Instant;

use memloss_core::bounds::{tau_piecewise, tau_smooth, FamilyConstants};
use memloss_core::coupling::{certify, run_coupled};
use memloss_core::covering::{cylinders_of, positivity_horizon};
use memloss_core::presets::random_bv;
use memloss_core::rng::{stream, LabRng};
use memloss_core::scenario::{self, lasota_yorke_suite, MapSpec, Scenario, ScenarioKind, DEFAULT_EPS_LOC};
use memloss_core::transfer::{backend_consistency, push, push_sequence};
use memloss_core::{CurveFamily, Density, DensitySpec, Error, KappaMode, MapCurve, PiecewiseMap};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s(e: Error) -> String {
    e.to_string()
}

fn builtin_maps() -> Vec<(&'static str, PiecewiseMap)> {
    vec![
        ("doubling", PiecewiseMap::doubling()),
        ("slope-3", PiecewiseMap::slope3_two_branch()),
        ("slope-2.5", PiecewiseMap::slope_2_5()),
        ("two-slope-wrap", PiecewiseMap::two_slope_wrap()),
        ("sine", PiecewiseMap::sine_perturbed(2.0, 0.05).unwrap()),
    ]
}

fn ac1() -> Check {
    let g = 4096;
    let phi = Density::from_fn(g, |x| 1.0 + 0.5 * (TAU * x).sin()).map_err(e2s)?;
    let one = Density::uniform(g).map_err(e2s)?;
    let step = Density::from_fn(g, |x| if x < 0.5 { 1.2 } else { 0.8 }).map_err(e2s)?;
    let start = Instant::now();
    let d1 = push(&PiecewiseMap::doubling(), &phi).map_err(e2s)?.l1_distance(&one).map_err(e2s)?;
    let d2 = push(&PiecewiseMap::slope_2_5(), &one).map_err(e2s)?.l1_distance(&step).map_err(e2s)?;
    let secs = start.elapsed().as_secs_f64();
    ensure(d1 <= 1e-4, || format!("doubling error {d1:.3e} > 1e-4"))?;
    ensure(d2 <= 4.0 / g as f64, || format!("slope-2.5 error {d2:.3e} > 4/G"))?;
    ensure(secs < 1.0, || format!("runtime {secs:.3} s"))?;
    Ok(format!("doubling L1 {d1:.2e}, slope-2.5 L1 {d2:.2e}, {secs:.3} s"))
}

fn ac2() -> Check {
    let maps: Vec<PiecewiseMap> = builtin_maps().into_iter().filter(|(n, _)| *n != "sine").map(|(_, m)| m).collect();
    let trials = lasota_yorke_suite(&maps, 100, 50.0, 1 << 14, 2024, 0.02).map_err(e2s)?;
    let bad: Vec<_> = trials.iter().filter(|t| t.variation_out > t.bound).collect();
    let worst = trials.iter().map(|t| t.variation_out / t.bound).fold(0.0, f64::max);
    ensure(bad.is_empty(), || format!("{} violations, first {:?}", bad.len(), bad[0]))?;
    Ok(format!("{} checks, 0 violations, worst lhs/rhs {worst:.3}", trials.len()))
}

/// Two-slope maps `2.5x` on `[0, 0.2)` and `s2*x + c` on `[0.2, 1)`.
fn ac3_member(rng: &mut LabRng) -> PiecewiseMap {
    PiecewiseMap::two_slope(0.2, 2.5, rng.uniform(3.0, 3.5), rng.uniform(0.0, 0.1)).unwrap()
}

fn ac3() -> Check {
    let corners: Vec<PiecewiseMap> = [(3.0, 0.0), (3.5, 0.1), (3.0, 0.1), (3.5, 0.0)]
        .iter()
        .map(|&(s2, c)| PiecewiseMap::two_slope(0.2, 2.5, s2, c).unwrap())
        .collect();
    let fam = FamilyConstants::from_maps(&corners).map_err(e2s)?;
    let tau = tau_piecewise(200.0, 25.0, fam.lambda0, fam.a0).map_err(e2s)?;
    ensure(tau == 17, || format!("tau = {tau} (lambda0 {}, A0 {})", fam.lambda0, fam.a0))?;
    let g = 1 << 13;
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let phi = random_bv(g, 200.0, &mut LabRng::new(seed, stream::PHI)).map_err(e2s)?;
        let mut rng = LabRng::new(seed, stream::SEQUENCE);
        let maps: Vec<PiecewiseMap> = (0..tau).map(|_| ac3_member(&mut rng)).collect();
        let fam_seq = FamilyConstants::from_maps(&maps).map_err(e2s)?;
        ensure(fam_seq.lambda0 >= fam.lambda0 && fam_seq.a0 <= fam.a0 + 1e-12, || "draw outside family".into())?;
        let out = push_sequence(&maps, &phi).map_err(e2s)?;
        let v = out.last().unwrap().variation();
        worst = worst.max(v);
        ensure(v <= 25.0 * 1.05, || format!("seed {seed}: variation {v:.3} after {tau} steps (start {:.1})", phi.variation()))?;
    }
    Ok(format!("lambda0 {:.3}, A0 {:.3}, tau {tau}, worst variation {worst:.3} <= 26.25", fam.lambda0, fam.a0))
}

fn ac4() -> Check {
    let gmap = PiecewiseMap::slope3_two_branch();
    let a_star = 10.0;
    let eps = 0.01;
    let rep = positivity_horizon(&gmap, a_star, eps).map_err(e2s)?;
    // length table oracle: cylinders of depth n have length 3^(1-n)/2
    let n1_oracle = (1..).find(|&n| 0.5 * 3f64.powi(1 - n) < 1.0 / (2.0 * a_star)).unwrap() as usize;
    ensure(rep.n_env == 1, || format!("N = {}", rep.n_env))?;
    ensure(rep.n1 == n1_oracle, || format!("n1 = {} vs oracle {n1_oracle}", rep.n1))?;
    // exhaustive recheck of the escape table
    let cyl = cylinders_of(&gmap, rep.n1).map_err(e2s)?;
    ensure(cyl.len() == rep.s_table.len(), || "escape table incomplete".into())?;
    let s0 = rep.s_table.iter().map(|e| e.s).max().unwrap();
    ensure(rep.s0 == s0 && rep.n0 == s0 + 1, || format!("s0 {} n0 {}", rep.s0, rep.n0))?;
    let kappa0 = 0.5 * 3f64.powi(-(rep.n0 as i32));
    ensure((rep.kappa0 - kappa0).abs() < 1e-15, || format!("kappa0 {}", rep.kappa0))?;

    let g = 1 << 13;
    let slack = 1.0 - 10.0 / g as f64;
    let kappa_eps = 0.5 * (3.0 + eps).powi(-(rep.n0 as i32));
    let center = MapSpec::Slope3;
    let nb = Scenario {
        schema_version: 1,
        name: "ac4".into(),
        kind: ScenarioKind::Neighborhood { center, eps, slope_radius: 0.005, amplitude_radius: 2e-4 },
        grid: g,
        n_max: Some(rep.n0),
        seed: 0,
        phi: DensitySpec::Uniform,
        psi: DensitySpec::Uniform,
        a_star: Some(a_star),
        kappa_mode: KappaMode::Theoretical,
        matching: true,
        eps_loc: DEFAULT_EPS_LOC,
    };
    let (mut worst_fixed, mut worst_nb) = (f64::INFINITY, f64::INFINITY);
    for seed in 0..20u64 {
        let phi = random_bv(g, a_star, &mut LabRng::new(seed, stream::PHI)).map_err(e2s)?;
        let fixed = push_sequence(&vec![gmap.clone(); rep.n0], &phi).map_err(e2s)?;
        let m = fixed.last().unwrap().min_value();
        worst_fixed = worst_fixed.min(m);
        ensure(m >= kappa0 * slack, || format!("seed {seed}: fixed-map min {m:.4e} < kappa0"))?;
        let seq = scenario::build_sequence(&Scenario { seed, ..nb.clone() }).map_err(e2s)?;
        let out = push_sequence(&seq.maps, &phi).map_err(e2s)?;
        let m = out.last().unwrap().min_value();
        worst_nb = worst_nb.min(m);
        ensure(m >= kappa_eps * slack, || format!("seed {seed}: neighborhood min {m:.4e} < kappa_eps"))?;
    }
    Ok(format!(
        "N 1, n1 {} (length-table oracle), s0 {}, n0 {}, kappa0 {kappa0:.4e} <= min {worst_fixed:.4e}; kappa_eps {kappa_eps:.4e} <= min {worst_nb:.4e}",
        rep.n1, rep.s0, rep.n0
    ))
}

fn ac5_scenario() -> Scenario {
    Scenario {
        schema_version: 1,
        name: "theorem-b".into(),
        kind: ScenarioKind::Neighborhood {
            center: MapSpec::Slope3,
            eps: 0.01,
            slope_radius: 0.005,
            amplitude_radius: 2e-4,
        },
        grid: 1 << 13,
        n_max: Some(40),
        seed: 11,
        phi: DensitySpec::SineNoise { k: 1, amplitude: 0.5, steps: 8, jump: 0.1 },
        psi: DensitySpec::Uniform,
        a_star: None,
        kappa_mode: KappaMode::Theoretical,
        matching: true,
        eps_loc: DEFAULT_EPS_LOC,
    }
}

fn ac5() -> Check {
    let start = Instant::now();
    let out = scenario::run_scenario(&ac5_scenario()).map_err(e2s)?;
    let secs = start.elapsed().as_secs_f64();
    let fit = out.fit.clone()?;
    ensure(fit.R2 >= 0.98, || format!("R2 {:.4} over {:?}", fit.R2, fit.n_range))?;
    ensure(fit.Lambda_emp < 1.0, || format!("Lambda_emp {}", fit.Lambda_emp))?;
    ensure(out.certificate.pass, || format!("certificate: {:?}", out.certificate.failures))?;
    ensure(!out.ledger.blocks.is_empty(), || "no block completed".into())?;
    ensure(secs < 30.0, || format!("runtime {secs:.1} s"))?;
    Ok(format!(
        "R2 {:.4}, Lambda_emp {:.3}, {} blocks of {} certified (worst ratio {:.2e}), {secs:.2} s",
        fit.R2,
        fit.Lambda_emp,
        out.ledger.blocks.len(),
        out.bounds.block,
        out.certificate.worst_ratio
    ))
}

fn ac6_scenario(mesh_factor: f64) -> Scenario {
    Scenario {
        schema_version: 1,
        name: "theorem-c".into(),
        kind: ScenarioKind::CurveDriven {
            curve: MapCurve::new(0.0, 1.0, CurveFamily::Slope { base: 2.5, rate: 1.0 }).unwrap(),
            eps: 0.01,
            mesh: None,
            mesh_factor: Some(mesh_factor),
            probe_spacing: None,
            override_mesh: false,
        },
        grid: 1 << 13,
        n_max: None,
        seed: 3,
        phi: DensitySpec::SineNoise { k: 1, amplitude: 0.5, steps: 8, jump: 0.1 },
        psi: DensitySpec::Uniform,
        a_star: None,
        kappa_mode: KappaMode::Theoretical,
        matching: true,
        eps_loc: DEFAULT_EPS_LOC,
    }
}

fn ac6() -> Check {
    let out = scenario::run_scenario(&ac6_scenario(1.0)).map_err(e2s)?;
    let delta0 = out.bounds.delta0.ok_or("no delta0")?;
    let steps = out.ledger.rows.len() - 1;
    let cap = ((1.0 / delta0).ceil() as usize).min(10_000);
    ensure(steps <= cap, || format!("{steps} steps > {cap}"))?;
    ensure(out.certificate.pass, || format!("certificate: {:?}", out.certificate.failures))?;
    let last = *out.ledger.distances().last().unwrap();
    ensure(last <= 1e-6, || format!("final distance {last:.3e}"))?;
    let code = match scenario::run_scenario(&ac6_scenario(2.0)) {
        Ok(o) => o.exit_code(),
        Err(e) => scenario::exit_code(&e),
    };
    ensure(code == 2, || format!("mesh 2*delta0 exited with {code}"))?;
    Ok(format!(
        "delta0 {delta0:.3e}, {steps} steps, final L1 {last:.2e}, {} blocks certified; 2*delta0 exits 2",
        out.ledger.blocks.len()
    ))
}

fn ac7() -> Check {
    let amp = 0.05;
    let s = Scenario {
        schema_version: 1,
        name: "theorem-a".into(),
        kind: ScenarioKind::Smooth { slope: 2.0, amplitude_max: amp },
        grid: 1 << 13,
        n_max: Some(1),
        seed: 5,
        phi: DensitySpec::Sine { k: 1, amplitude: 0.5 },
        psi: DensitySpec::Sine { k: 3, amplitude: -0.3 },
        a_star: None,
        kappa_mode: KappaMode::Theoretical,
        matching: true,
        eps_loc: DEFAULT_EPS_LOC,
    };
    // the family constants are known in closed form
    let lambda0 = 2.0 - TAU * amp;
    let c1 = 4.0 * PI * PI * amp / lambda0;
    let probe = scenario::prepare(&s).map_err(e2s)?;
    let b = &probe.bounds;
    ensure((b.lambda0 - lambda0).abs() < 1e-9 && (b.C1 - c1).abs() < 1e-9, || format!("lambda0 {} C1 {}", b.lambda0, b.C1))?;
    let l_star = 4.0 * c1 / (lambda0 - 1.0);
    ensure((b.L_star - l_star).abs() < 1e-9, || format!("L* {}", b.L_star))?;
    ensure(b.block == tau_smooth(2.0 * l_star, lambda0, l_star / 4.0).map_err(e2s)?, || "block".into())?;
    let n_max = b.tau + 30 * b.block;
    let s = Scenario { n_max: Some(n_max), ..s };
    let p = scenario::prepare(&s).map_err(e2s)?;
    let b = &p.bounds;

    // direct check of the cone after tau(L_init) steps, independent of the ledger
    let head = &p.sequence.maps[..b.tau];
    for d in [&p.phi, &p.psi] {
        let end = push_sequence(head, d).map_err(e2s)?.pop().unwrap_or_else(|| d.clone());
        let l = end.ratio_class_l(DEFAULT_EPS_LOC);
        ensure(l <= b.L_star, || format!("ratio class {l:.3} > L* {:.3} after {} steps", b.L_star, b.tau))?;
    }
    let ledger = run_coupled(&p.sequence.maps, &p.phi, &p.psi, b, &p.options).map_err(e2s)?;
    ensure(ledger.cone_failures.is_empty(), || format!("{:?}", ledger.cone_failures))?;
    ensure(ledger.blocks.len() >= 30, || format!("{} blocks", ledger.blocks.len()))?;
    let cert = certify(&ledger, b);
    ensure(cert.pass, || format!("{:?}", cert.failures))?;
    for (k, blk) in ledger.blocks.iter().enumerate() {
        let env = 2.0 * (1.0 - 0.5 * b.kappa).powi(k as i32 + 1);
        ensure((2.0 * blk.residual_mass - env).abs() < 1e-9, || format!("block {k} envelope"))?;
    }
    Ok(format!(
        "L* {:.3}, tau(L_init) {}, block {}, kappa {:.4}, {} blocks certified (worst ratio {:.2e})",
        b.L_star,
        b.tau,
        b.block,
        b.kappa,
        ledger.blocks.len(),
        cert.worst_ratio
    ))
}

fn ac8() -> Check {
    let g = 8192;
    let phi = Density::from_fn(g, |x| 1.0 + 0.3 * (2.0 * TAU * x + 0.7).cos() + 0.2 * (4.0 * TAU * x).sin() + 0.1 * (TAU * x).cos())
        .map_err(e2s)?;
    let mut notes = Vec::new();
    for (name, m) in builtin_maps() {
        let c512 = backend_consistency(&m, &phi, 512).map_err(e2s)?;
        let c1024 = backend_consistency(&m, &phi, 1024).map_err(e2s)?;
        ensure(c512 <= 4.0 / 512.0, || format!("{name}: {c512:.3e} > 4/B"))?;
        let ratio = c1024 / c512;
        ensure(ratio <= 0.75, || format!("{name}: ratio {ratio:.3} ({c512:.3e} -> {c1024:.3e})"))?;
        notes.push(format!("{name} {c512:.1e}/{ratio:.2}"));
    }
    Ok(notes.join(", "))
}

fn ac9() -> Check {
    let mut s = ac5_scenario();
    s.name = "determinism".into();
    s.n_max = Some(15);
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    for d in &dirs {
        scenario::run_scenario(&s).map_err(e2s)?.write(d.path()).map_err(e2s)?;
    }
    let mut files = 0;
    for name in ["ledger.csv", "bounds.json", "covering.json", "fit.json", "certificate.json"] {
        let a = std::fs::read(dirs[0].path().join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(name)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{name} differs between reruns"))?;
        files += 1;
    }
    Ok(format!("{files} artifacts byte-identical across reruns"))
}

type Criterion = (&'static str, fn() -> Check);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("AC1 transfer correctness", ac1),
        ("AC2 Lasota-Yorke suite", ac2),
        ("AC3 absorption", ac3),
        ("AC4 positivity horizon", ac4),
        ("AC5 neighborhood decay", ac5),
        ("AC6 curve drive", ac6),
        ("AC7 smooth mode", ac7),
        ("AC8 backend equivalence", ac8),
        ("AC9 determinism", ac9),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(msg) => println!("PASS {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
