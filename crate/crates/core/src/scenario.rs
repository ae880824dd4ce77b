//! Scenario files: map sequence assembly, the bounds/covering/coupling
//! pipeline, and artifact output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::{delta0_of_curve, lambda_local, probe_curve, BoundsReport, CurveMesh, FamilyConstants, Mode};
use crate::coupling::{certify, fit_decay, run_coupled, Certificate, CouplingLedger, CouplingOptions, DecayFit, KappaMode, Schedule};
use crate::covering::{positivity_horizon, CoveringReport};
use crate::curve::MapCurve;
use crate::density::Density;
use crate::error::{Error, Result};
use crate::map::{neighborhood_distance, BranchSpec, PiecewiseMap};
use crate::presets::{random_bv, DensitySpec};
use crate::rng::{stream, LabRng};
use crate::transfer::push;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_GRID: usize = 8192;
/// Redraws allowed for an inadmissible random map before aborting.
pub const MAX_REDRAWS: usize = 100;
/// Cap on the number of steps of a curve-driven run.
pub const MAX_CURVE_STEPS: usize = 10_000;
pub const DEFAULT_EPS_LOC: f64 = 0.05;

/// Named maps accepted by scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum MapSpec {
    Doubling,
    Slope3,
    #[serde(rename = "slope-2.5")]
    Slope2_5,
    TwoSlopeWrap,
    Affine { slope: f64, offset: f64 },
    TwoSlope { p: f64, s1: f64, s2: f64, c: f64 },
    Sine { slope: f64, amplitude: f64 },
    Custom { branches: Vec<BranchSpec> },
}

impl MapSpec {
    pub fn build(&self) -> Result<PiecewiseMap> {
        match self {
            MapSpec::Doubling => Ok(PiecewiseMap::doubling()),
            MapSpec::Slope3 => Ok(PiecewiseMap::slope3_two_branch()),
            MapSpec::Slope2_5 => Ok(PiecewiseMap::slope_2_5()),
            MapSpec::TwoSlopeWrap => Ok(PiecewiseMap::two_slope_wrap()),
            MapSpec::Affine { slope, offset } => PiecewiseMap::affine_mod1(*slope, *offset),
            MapSpec::TwoSlope { p, s1, s2, c } => PiecewiseMap::two_slope(*p, *s1, *s2, *c),
            MapSpec::Sine { slope, amplitude } => PiecewiseMap::sine_perturbed(*slope, *amplitude),
            MapSpec::Custom { branches } => PiecewiseMap::new(branches.clone()),
        }
    }
}

fn default_mode() -> Mode {
    Mode::Piecewise
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// The same map at every step.
    FixedMap {
        map: MapSpec,
        #[serde(default = "default_mode")]
        mode: Mode,
    },
    /// I.i.d. perturbations of `center` in slope and sine amplitude, each
    /// admitted only if within `eps` of the center.
    Neighborhood {
        center: MapSpec,
        eps: f64,
        slope_radius: f64,
        amplitude_radius: f64,
    },
    /// `f_i = gamma(t_i)` with `t_i = a + i * mesh` clipped to `b`.
    CurveDriven {
        curve: MapCurve,
        eps: f64,
        /// Explicit mesh; defaults to `mesh_factor * delta0`.
        #[serde(default)]
        mesh: Option<f64>,
        #[serde(default)]
        mesh_factor: Option<f64>,
        #[serde(default)]
        probe_spacing: Option<f64>,
        /// Allows a mesh above `delta0`, voiding the guarantee.
        #[serde(default)]
        override_mesh: bool,
    },
    /// `x -> slope*x + a_i sin(2 pi x)` with `a_i` uniform in `[-amplitude_max, amplitude_max]`.
    Smooth { slope: f64, amplitude_max: f64 },
}

fn default_grid() -> usize {
    DEFAULT_GRID
}

fn default_true() -> bool {
    true
}

fn default_eps_loc() -> f64 {
    DEFAULT_EPS_LOC
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(flatten)]
    pub kind: ScenarioKind,
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Number of steps; curve-driven runs default to traversing the curve.
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub phi: DensitySpec,
    pub psi: DensitySpec,
    #[serde(default)]
    pub a_star: Option<f64>,
    #[serde(default)]
    pub kappa_mode: KappaMode,
    #[serde(default = "default_true")]
    pub matching: bool,
    /// Locality scale of the smooth cone.
    #[serde(default = "default_eps_loc")]
    pub eps_loc: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("invalid scenario name {:?}", self.name));
        }
        if !self.grid.is_power_of_two() || self.grid < 64 {
            return bad(format!("grid {} must be a power of two >= 64", self.grid));
        }
        if self.n_max == Some(0) {
            return bad("n_max must be positive".into());
        }
        if !matches!(self.kind, ScenarioKind::CurveDriven { .. }) && self.n_max.is_none() {
            return bad("n_max is required for this scenario kind".into());
        }
        if !(self.eps_loc > 0.0) {
            return bad(format!("eps_loc {} must be positive", self.eps_loc));
        }
        match &self.kind {
            ScenarioKind::Neighborhood { eps, slope_radius, amplitude_radius, .. } => {
                if !(*eps > 0.0) || !(*slope_radius >= 0.0) || !(*amplitude_radius >= 0.0) {
                    return bad("neighborhood radii must be nonnegative and eps positive".into());
                }
            }
            ScenarioKind::CurveDriven { curve, eps, mesh, mesh_factor, probe_spacing, .. } => {
                MapCurve::new(curve.a, curve.b, curve.family)?;
                if !(*eps > 0.0) {
                    return bad(format!("eps {eps} must be positive"));
                }
                if mesh.is_some() && mesh_factor.is_some() {
                    return bad("give either mesh or mesh_factor, not both".into());
                }
                for v in [mesh, mesh_factor, probe_spacing].into_iter().flatten() {
                    if !(*v > 0.0) {
                        return bad(format!("mesh parameters must be positive, got {v}"));
                    }
                }
            }
            ScenarioKind::Smooth { amplitude_max, .. } => {
                if !(*amplitude_max >= 0.0) {
                    return bad(format!("amplitude_max {amplitude_max} must be nonnegative"));
                }
            }
            ScenarioKind::FixedMap { .. } => {}
        }
        Ok(())
    }
}

/// Maps and, for curve-driven scenarios, their parameters.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub maps: Vec<PiecewiseMap>,
    pub times: Option<Vec<f64>>,
}

/// Everything needed to run the coupling.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub sequence: Sequence,
    pub bounds: BoundsReport,
    pub covering: Option<CoveringReport>,
    pub mesh: Option<CurveMesh>,
    pub phi: Density,
    pub psi: Density,
    pub options: CouplingOptions,
}

fn draw_admissible(
    center: &PiecewiseMap,
    eps: f64,
    rng: &mut LabRng,
    mut draw: impl FnMut(&mut LabRng) -> Result<PiecewiseMap>,
) -> Result<PiecewiseMap> {
    for _ in 0..MAX_REDRAWS {
        let f = draw(rng)?;
        if matches!(neighborhood_distance(&f, center), Some(d) if d <= eps) {
            return Ok(f);
        }
    }
    Err(Error::Config(format!("no admissible map within eps = {eps} after {MAX_REDRAWS} draws")))
}

fn symmetric(rng: &mut LabRng, r: f64) -> f64 {
    if r > 0.0 {
        rng.uniform(-r, r)
    } else {
        0.0
    }
}

/// Curve step count and parameters `t_i = min(a + i*mesh, b)`.
pub fn curve_times(curve: &MapCurve, mesh: f64, n_max: Option<usize>) -> Vec<f64> {
    let n = n_max.unwrap_or_else(|| ((curve.len() / mesh).ceil() as usize).min(MAX_CURVE_STEPS));
    (0..n).map(|i| (curve.a + i as f64 * mesh).min(curve.b)).collect()
}

/// Default probe spacing: nine-point prescan of the admissible radius.
fn probe_grid(curve: &MapCurve, spacing: Option<f64>, a_star: f64, fam: &FamilyConstants, eps: f64) -> Result<Vec<f64>> {
    let rule = move |_: &PiecewiseMap| eps;
    let spacing = match spacing {
        Some(s) => s,
        None => {
            let mut min_alpha = f64::INFINITY;
            for z in curve.grid(8) {
                min_alpha = min_alpha.min(probe_curve(curve, z, a_star, fam, &rule)?.alpha);
            }
            0.9 * min_alpha
        }
    };
    let n = (curve.len() / spacing).ceil().max(1.0) as usize;
    Ok(curve.grid(n))
}

/// Builds the map sequence of a scenario, drawing random maps from the
/// sequence stream of `seed`.
pub fn build_sequence(s: &Scenario) -> Result<Sequence> {
    let mut rng = LabRng::new(s.seed, stream::SEQUENCE);
    let n = s.n_max.unwrap_or(0);
    match &s.kind {
        ScenarioKind::FixedMap { map, .. } => Ok(Sequence { maps: vec![map.build()?; n], times: None }),
        ScenarioKind::Neighborhood { center, eps, slope_radius, amplitude_radius } => {
            let g = center.build()?;
            let maps = (0..n)
                .map(|_| {
                    draw_admissible(&g, *eps, &mut rng, |r| {
                        let ds = symmetric(r, *slope_radius);
                        let da = symmetric(r, *amplitude_radius);
                        g.perturbed(ds, da)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Sequence { maps, times: None })
        }
        ScenarioKind::Smooth { slope, amplitude_max } => {
            let maps = (0..n)
                .map(|_| PiecewiseMap::sine_perturbed(*slope, symmetric(&mut rng, *amplitude_max)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Sequence { maps, times: None })
        }
        ScenarioKind::CurveDriven { .. } => {
            let mesh = prepare_curve(s)?.1;
            curve_sequence(s, mesh)
        }
    }
}

fn curve_sequence(s: &Scenario, mesh: f64) -> Result<Sequence> {
    let ScenarioKind::CurveDriven { curve, .. } = &s.kind else {
        return Err(Error::Config("not a curve-driven scenario".into()));
    };
    let times = curve_times(curve, mesh, s.n_max);
    let maps = times.iter().map(|&t| curve.at(t)).collect::<Result<Vec<_>>>()?;
    Ok(Sequence { maps, times: Some(times) })
}

/// Curve mesh data and the mesh used for driving.
fn prepare_curve(s: &Scenario) -> Result<(CurveMesh, f64, FamilyConstants, f64)> {
    let ScenarioKind::CurveDriven { curve, eps, mesh, mesh_factor, probe_spacing, override_mesh } = &s.kind else {
        return Err(Error::Config("not a curve-driven scenario".into()));
    };
    let fam = FamilyConstants::of_curve(curve, 256)?;
    let a_star = resolve_a_star(s, &fam)?;
    let rule = move |_: &PiecewiseMap| *eps;
    let grid = probe_grid(curve, *probe_spacing, a_star, &fam, *eps)?;
    let cm = delta0_of_curve(curve, &grid, a_star, &fam, &rule).map_err(|e| match e {
        Error::CoverFailure(t) => Error::Config(format!("probe grid leaves parameter {t} uncovered")),
        e => e,
    })?;
    let delta = match (mesh, mesh_factor) {
        (Some(m), _) => *m,
        (None, Some(k)) => k * cm.delta0,
        (None, None) => cm.delta0,
    };
    if delta > cm.delta0 * (1.0 + 1e-12) && !override_mesh {
        return Err(Error::Config(format!(
            "mesh {delta:.6e} exceeds delta0 = {:.6e}; set override_mesh to run without the guarantee",
            cm.delta0
        )));
    }
    Ok((cm, delta, fam, a_star))
}

fn resolve_a_star(s: &Scenario, fam: &FamilyConstants) -> Result<f64> {
    let threshold = fam.cone_threshold().map_err(|e| Error::Config(e.to_string()))?;
    match s.a_star {
        Some(a) if a > threshold => Ok(a),
        Some(a) => Err(Error::Config(format!("a_star {a} must exceed A0/(1 - 2/lambda0) = {threshold}"))),
        None => Ok(1.25 * threshold),
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        e => Error::Config(e.to_string()),
    }
}

/// Validates the scenario and computes sequence, densities and constants.
pub fn prepare(s: &Scenario) -> Result<Prepared> {
    s.validate()?;
    let g = s.grid;
    let phi = s.phi.build(g, &mut LabRng::new(s.seed, stream::PHI)).map_err(config_err)?;
    let psi = s.psi.build(g, &mut LabRng::new(s.seed, stream::PSI)).map_err(config_err)?;
    let a_init = phi.variation().max(psi.variation());
    let mut options = CouplingOptions {
        kappa_mode: s.kappa_mode,
        matching: s.matching,
        eps_loc: s.eps_loc,
        schedule: Schedule::Fixed,
    };
    let smooth_bounds = |fam: &FamilyConstants| {
        let l_init = phi.ratio_class_l(s.eps_loc).max(psi.ratio_class_l(s.eps_loc));
        if !l_init.is_finite() {
            return Err(Error::Config("smooth mode needs strictly positive initial densities".into()));
        }
        BoundsReport::smooth(fam, l_init).map_err(config_err)
    };

    match &s.kind {
        ScenarioKind::FixedMap { map, mode } => {
            let f = map.build().map_err(config_err)?;
            let sequence = build_sequence(s)?;
            let fam = FamilyConstants::from_maps([&f])?;
            let (bounds, covering) = match mode {
                Mode::Smooth => (smooth_bounds(&fam)?, None),
                Mode::Piecewise => {
                    let a_star = resolve_a_star(s, &fam)?;
                    let cov = positivity_horizon(&f, a_star, 0.0).map_err(config_err)?;
                    (BoundsReport::piecewise(&fam, a_star, &cov, a_init).map_err(config_err)?, Some(cov))
                }
            };
            Ok(Prepared { sequence, bounds, covering, mesh: None, phi, psi, options })
        }
        ScenarioKind::Neighborhood { center, eps, slope_radius, amplitude_radius } => {
            let c = center.build().map_err(config_err)?;
            let sequence = build_sequence(s)?;
            let mut family = vec![c.clone()];
            for ds in [-slope_radius, *slope_radius] {
                for da in [-amplitude_radius, *amplitude_radius] {
                    family.push(c.perturbed(ds, da).map_err(config_err)?);
                }
            }
            let fam = FamilyConstants::from_maps(family.iter().chain(&sequence.maps))?;
            let a_star = resolve_a_star(s, &fam)?;
            let cov = positivity_horizon(&c, a_star, *eps).map_err(config_err)?;
            let bounds = BoundsReport::piecewise(&fam, a_star, &cov, a_init).map_err(config_err)?;
            Ok(Prepared { sequence, bounds, covering: Some(cov), mesh: None, phi, psi, options })
        }
        ScenarioKind::Smooth { slope, amplitude_max } => {
            let sequence = build_sequence(s)?;
            let mut family = vec![];
            for a in [-amplitude_max, *amplitude_max] {
                family.push(PiecewiseMap::sine_perturbed(*slope, a).map_err(config_err)?);
            }
            let fam = FamilyConstants::from_maps(family.iter().chain(&sequence.maps))?;
            Ok(Prepared { sequence, bounds: smooth_bounds(&fam)?, covering: None, mesh: None, phi, psi, options })
        }
        ScenarioKind::CurveDriven { curve, eps, .. } => {
            let (cm, delta, fam, a_star) = prepare_curve(s)?;
            let sequence = curve_sequence(s, delta)?;
            let cov = positivity_horizon(&curve.at(curve.a)?, a_star, *eps).map_err(config_err)?;
            let mut bounds = BoundsReport::piecewise(&fam, a_star, &cov, a_init).map_err(config_err)?;
            bounds.kappa = cm.probes.iter().map(|p| p.kappa).fold(f64::INFINITY, f64::min);
            bounds.block = cm.probes.iter().map(|p| p.n).max().unwrap_or(1);
            bounds.Lambda = lambda_local(bounds.kappa, bounds.block);
            bounds.delta0 = Some(cm.delta0);
            options.schedule = Schedule::Curve { mesh: cm.clone(), times: sequence.times.clone().unwrap_or_default() };
            Ok(Prepared { sequence, bounds, covering: Some(cov), mesh: Some(cm), phi, psi, options })
        }
    }
}

/// Results of a full scenario run.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: String,
    pub bounds: BoundsReport,
    pub covering: Option<CoveringReport>,
    pub mesh: Option<CurveMesh>,
    pub ledger: CouplingLedger,
    pub fit: std::result::Result<DecayFit, String>,
    pub certificate: Certificate,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.certificate.pass {
            0
        } else {
            1
        }
    }

    /// Writes `bounds.json`, `covering.json`, `ledger.csv`, `fit.json`,
    /// `certificate.json` and, for curves, `mesh.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let json = |name: &str, v: serde_json::Value| -> Result<()> {
            fs::write(dir.join(name), serde_json::to_string_pretty(&v)? + "\n")?;
            Ok(())
        };
        json("bounds.json", serde_json::to_value(&self.bounds)?)?;
        json("covering.json", serde_json::to_value(&self.covering)?)?;
        if let Some(m) = &self.mesh {
            json("mesh.json", serde_json::to_value(m)?)?;
        }
        fs::write(dir.join("ledger.csv"), self.ledger.to_csv())?;
        let fit = match &self.fit {
            Ok(f) => serde_json::to_value(f)?,
            Err(e) => serde_json::json!({ "error": e }),
        };
        json("fit.json", fit)?;
        let cert = serde_json::json!({
            "pass": self.certificate.pass,
            "worst_ratio": self.certificate.worst_ratio,
            "blocks_checked": self.certificate.blocks_checked,
            "failures": self.certificate.failures,
            "n_wait": self.ledger.n_wait,
            "prefactor": self.ledger.prefactor,
            "residual_mass": self.ledger.residual(),
            "cone_failures": self.ledger.cone_failures,
        });
        json("certificate.json", cert)
    }
}

pub fn run_prepared(name: &str, p: &Prepared) -> Result<Outcome> {
    let ledger = run_coupled(&p.sequence.maps, &p.phi, &p.psi, &p.bounds, &p.options)?;
    let certificate = certify(&ledger, &p.bounds);
    let fit = fit_decay(&ledger.distances()).map_err(|e| e.to_string());
    Ok(Outcome {
        name: name.to_string(),
        bounds: p.bounds.clone(),
        covering: p.covering.clone(),
        mesh: p.mesh.clone(),
        ledger,
        fit,
        certificate,
    })
}

pub fn run_scenario(s: &Scenario) -> Result<Outcome> {
    run_prepared(&s.name, &prepare(s)?)
}

/// Process exit code for a failed run: 1 for certificate and numerical
/// failures during the coupling, 2 for everything caught by validation.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Certificate(_) | Error::Renormalization(_) | Error::OverSubtraction { .. } | Error::RootFinding { .. } => 1,
        _ => 2,
    }
}

/// One Lasota-Yorke check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyTrial {
    pub map: usize,
    pub trial: usize,
    pub variation_in: f64,
    pub variation_out: f64,
    pub bound: f64,
}

/// `var(P_f phi) <= 2 var(phi)/lambda + A + tol * (1 + var(phi))` for
/// `trials` random densities with variation at most `max_var`.
pub fn lasota_yorke_suite(
    maps: &[PiecewiseMap],
    trials: usize,
    max_var: f64,
    g: usize,
    seed: u64,
    tol: f64,
) -> Result<Vec<LyTrial>> {
    let mut rng = LabRng::new(seed, stream::SUITE);
    let densities = (0..trials).map(|_| random_bv(g, max_var, &mut rng)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(maps.len() * trials);
    for (mi, f) in maps.iter().enumerate() {
        let an = f.analyze();
        for (ti, phi) in densities.iter().enumerate() {
            let v = phi.variation();
            out.push(LyTrial {
                map: mi,
                trial: ti,
                variation_in: v,
                variation_out: push(f, phi)?.variation(),
                bound: 2.0 * v / an.lambda_min + an.a + tol * (1.0 + v),
            });
        }
    }
    Ok(out)
}
