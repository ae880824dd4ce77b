use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use memloss_core::scenario::{self, lasota_yorke_suite, Outcome, Prepared, Scenario, ScenarioKind};
use memloss_core::transfer::push_sequence;
use memloss_core::{Error, MapCurve, Mode, PiecewiseMap};

#[derive(Parser)]
#[command(name = "memloss", version, about = "Memory-loss experiments for sequences of expanding circle maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (JSON); may be repeated.
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
    /// Output directory; artifacts go to `<out>/<scenario name>/`.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the grid resolution.
    #[arg(long)]
    grid: Option<usize>,
    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Scenarios run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic constants of the scenario's reference maps.
    AnalyzeMap(Common),
    /// Lasota-Yorke inequality on random densities for the reference maps.
    VerifyLy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 50.0)]
        max_variation: f64,
        #[arg(long, default_value_t = 0.02)]
        tol: f64,
    },
    /// Variation of the evolved densities after the theoretical waiting time.
    Absorb(Common),
    /// Runs the coupling and certifies the raw distance against the envelope.
    EnvelopeCheck(Common),
    /// Enveloping time, refinement depth, escape table and floors.
    Covering(Common),
    /// Runs the coupling and fits the empirical decay rate.
    Decay(Common),
    /// Curve-driven run with the safe mesh.
    DriveCurve(Common),
    /// Full pipeline with every artifact.
    Couple(Common),
}

/// Result of one scenario: exit code and a one-line summary.
type Report = (i32, String);

fn load(path: &Path, c: &Common) -> Result<Scenario, Error> {
    let mut s = Scenario::load(path)?;
    if let Some(g) = c.grid {
        s.grid = g;
    }
    if let Some(seed) = c.seed {
        s.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

fn write_json(dir: &Path, name: &str, v: &serde_json::Value) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn curve_ends(curve: &MapCurve) -> Result<Vec<(String, PiecewiseMap)>, Error> {
    Ok(vec![
        (format!("gamma({})", curve.a), curve.at(curve.a)?),
        (format!("gamma({})", curve.b), curve.at(curve.b)?),
    ])
}

fn reference_maps(s: &Scenario) -> Result<Vec<(String, PiecewiseMap)>, Error> {
    match &s.kind {
        ScenarioKind::FixedMap { map, .. } => Ok(vec![("map".into(), map.build()?)]),
        ScenarioKind::Neighborhood { center, .. } => Ok(vec![("center".into(), center.build()?)]),
        ScenarioKind::CurveDriven { curve, .. } => curve_ends(curve),
        ScenarioKind::Smooth { slope, amplitude_max } => Ok(vec![
            (format!("amplitude {}", -amplitude_max), PiecewiseMap::sine_perturbed(*slope, -amplitude_max)?),
            (format!("amplitude {amplitude_max}"), PiecewiseMap::sine_perturbed(*slope, *amplitude_max)?),
        ]),
    }
}

fn summary(o: &Outcome) -> String {
    let fit = match &o.fit {
        Ok(f) => format!("Lambda_emp {:.4} (R2 {:.4})", f.Lambda_emp, f.R2),
        Err(e) => e.clone(),
    };
    format!(
        "{}: {} blocks, residual {:.4e}, final L1 {:.3e}, {fit}, certificate {}",
        o.name,
        o.ledger.blocks.len(),
        o.ledger.residual(),
        o.ledger.distances().last().copied().unwrap_or(0.0),
        if o.certificate.pass { "pass" } else { "FAIL" }
    )
}

fn full_run(s: &Scenario, dir: &Path) -> Result<Report, Error> {
    let o = scenario::run_scenario(s)?;
    o.write(dir)?;
    Ok((o.exit_code(), summary(&o)))
}

fn run_one(cmd: &Command, path: &Path, c: &Common) -> Result<Report, Error> {
    let s = load(path, c)?;
    let dir = c.out.join(&s.name);
    match cmd {
        Command::AnalyzeMap(_) => {
            let maps = reference_maps(&s)?;
            let v: Vec<_> = maps.iter().map(|(label, m)| json!({ "label": label, "analysis": m.analyze() })).collect();
            write_json(&dir, "analysis.json", &json!(v))?;
            let lines: Vec<String> = maps
                .iter()
                .map(|(label, m)| {
                    let a = m.analyze();
                    format!("{label}: lambda {:.4}, M0 {:.4}, A {:.4}, C1 {:.4}", a.lambda_min, a.m0, a.a, a.c1)
                })
                .collect();
            Ok((0, format!("{}: {}", s.name, lines.join("; "))))
        }
        Command::VerifyLy { trials, max_variation, tol, .. } => {
            let maps: Vec<PiecewiseMap> = reference_maps(&s)?.into_iter().map(|(_, m)| m).collect();
            let out = lasota_yorke_suite(&maps, *trials, *max_variation, s.grid, s.seed, *tol)?;
            let bad = out.iter().filter(|t| t.variation_out > t.bound).count();
            write_json(&dir, "ly.json", &json!({ "checks": out.len(), "violations": bad, "trials": out }))?;
            Ok((i32::from(bad > 0), format!("{}: {} checks, {bad} violations", s.name, out.len())))
        }
        Command::Absorb(_) => {
            let p: Prepared = scenario::prepare(&s)?;
            if p.bounds.mode != Mode::Piecewise {
                return Err(Error::Config("absorb needs a piecewise scenario".into()));
            }
            let a_star = p.bounds.a_star.unwrap_or(f64::INFINITY);
            let tau = p.bounds.tau.min(p.sequence.maps.len());
            let head = &p.sequence.maps[..tau];
            let mut vars = Vec::new();
            for d in [&p.phi, &p.psi] {
                let end = push_sequence(head, d)?.pop().unwrap_or_else(|| d.clone());
                vars.push((d.variation(), end.variation()));
            }
            let slack = memloss_core::coupling::grid_slack(&p.bounds, s.grid);
            let pass = vars.iter().all(|v| v.1 <= a_star + slack);
            write_json(
                &dir,
                "absorb.json",
                &json!({
                    "tau": tau, "a_star": a_star, "slack": slack, "pass": pass,
                    "variation_phi": { "initial": vars[0].0, "final": vars[0].1 },
                    "variation_psi": { "initial": vars[1].0, "final": vars[1].1 },
                }),
            )?;
            Ok((
                i32::from(!pass),
                format!("{}: tau {tau}, variations {:.3} / {:.3} against a* {a_star:.3}", s.name, vars[0].1, vars[1].1),
            ))
        }
        Command::Covering(_) => {
            let p = scenario::prepare(&s)?;
            write_json(&dir, "covering.json", &serde_json::to_value(&p.covering)?)?;
            write_json(&dir, "bounds.json", &serde_json::to_value(&p.bounds)?)?;
            if let Some(m) = &p.mesh {
                write_json(&dir, "mesh.json", &serde_json::to_value(m)?)?;
            }
            let msg = match &p.covering {
                Some(c) => format!(
                    "{}: N {}, n1 {}, s0 {}, n0 {}, kappa0 {:.4e}, kappa_eps {:.4e}",
                    s.name, c.n_env, c.n1, c.s0, c.n0, c.kappa0, c.kappa_eps
                ),
                None => format!("{}: smooth mode, floor {:.4e}", s.name, p.bounds.kappa),
            };
            Ok((0, msg))
        }
        Command::DriveCurve(_) => {
            if !matches!(s.kind, ScenarioKind::CurveDriven { .. }) {
                return Err(Error::Config(format!("{} is not a curve-driven scenario", s.name)));
            }
            full_run(&s, &dir)
        }
        Command::EnvelopeCheck(_) | Command::Decay(_) | Command::Couple(_) => full_run(&s, &dir),
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::AnalyzeMap(c)
        | Command::Absorb(c)
        | Command::EnvelopeCheck(c)
        | Command::Covering(c)
        | Command::Decay(c)
        | Command::DriveCurve(c)
        | Command::Couple(c) => c,
        Command::VerifyLy { common, .. } => common,
    }
}

fn main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let c = common(&cli.command);
    let run = |path: &PathBuf| {
        run_one(&cli.command, path, c)
            .unwrap_or_else(|e| (scenario::exit_code(&e), format!("{}: error: {e}", path.display())))
    };
    // with one job the per-step pushes keep the global pool
    let reports: Vec<Report> = if c.jobs <= 1 {
        c.configs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(c.jobs)
            .build()
            .context("building the worker pool")?;
        pool.install(|| c.configs.par_iter().map(run).collect())
    };
    let mut code = 0;
    for (rc, line) in &reports {
        if *rc == 0 {
            println!("{line}");
        } else {
            eprintln!("{line}");
        }
        code = code.max(*rc);
    }
    Ok(ExitCode::from(code as u8))
}
