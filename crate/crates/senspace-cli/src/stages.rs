//! Pipeline stages. Each reads only the config and writes its artifacts
//! into the run directory; `<stage>.json` carries the numbers the report
//! evaluates.

use std::f64::consts::PI;
use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector4;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use senspace::adiabatic_solver::{
    apply_laplacian, commutator_scan, invariant_poisson, mode_poisson, AdiabaticBackground, FibredField, KernelCache,
    PatchSettings, PatchedInverse,
};
use senspace::atiyah_hitchin::integrate_profile;
use senspace::conv::Grid3;
use senspace::ellipse::{appendix_a_suite, worked_pair_holds};
use senspace::fields3d::{eval_potential, multipole_expand, PotentialSpec, Vec3};
use senspace::gauge::{assemble_connection, flux_report};
use senspace::gluing::{defect_scan, PatchConfig};
use senspace::io::{write_grid, GridHeader};
use senspace::perturb::{contract_solve, linearization_check, perturbed_flat, Torus, TripleField};
use senspace::quad::{self, ols_slope};
use senspace::triples::{gh_triple_at, metric_from_triple, normalized_defect};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Artifact {
    pub path: String,
    /// Absent for non-deterministic files, so the manifest itself reproduces.
    pub sha256: Option<String>,
    pub bytes: Option<u64>,
    /// False for files holding wall-clock timings.
    pub deterministic: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects the files one stage writes.
pub struct Writer<'a> {
    dir: &'a Path,
    pub artifacts: Vec<Artifact>,
}

impl<'a> Writer<'a> {
    pub fn new(dir: &'a Path) -> Self {
        Writer { dir, artifacts: Vec::new() }
    }

    fn record(&mut self, name: &str, deterministic: bool) -> CliResult<()> {
        let bytes = fs::read(self.dir.join(name))?;
        let (sha256, len) = if deterministic { (Some(sha256_hex(&bytes)), Some(bytes.len() as u64)) } else { (None, None) };
        self.artifacts.push(Artifact { path: name.into(), sha256, bytes: len, deterministic });
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &Value) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        fs::write(self.dir.join(name), text)?;
        self.record(name, true)
    }

    pub fn csv<R: Serialize>(&mut self, name: &str, rows: &[R], deterministic: bool) -> CliResult<()> {
        let mut w = csv::Writer::from_path(self.dir.join(name)).map_err(|e| CliError::Io(e.to_string()))?;
        for r in rows {
            w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush()?;
        drop(w);
        self.record(name, deterministic)
    }

    pub fn grid(&mut self, name: &str, header: &GridHeader, values: &[f64]) -> CliResult<()> {
        let f = fs::File::create(self.dir.join(name))?;
        write_grid(BufWriter::new(f), header, values).map_err(|e| CliError::Io(e.to_string()))?;
        self.record(name, true)
    }
}

pub fn json_name(stage: &str) -> String {
    format!("{stage}.json")
}

/// Runs one stage, returning its artifacts.
pub fn run_stage(stage: &str, cfg: &RunConfig, dir: &Path) -> CliResult<Vec<Artifact>> {
    let mut w = Writer::new(dir);
    let start = Instant::now();
    let value = match stage {
        "potential" => potential(cfg, &mut w),
        "connection" => connection(cfg),
        "triples" => triples(cfg),
        "verify-appendix-a" => appendix_a(cfg),
        "glue-scan" => glue_scan(cfg, &mut w),
        "defect-profile" => defect_profile(cfg, &mut w),
        "profile-ah" => profile_ah(&mut w),
        "mode-solvers" => mode_solvers(cfg),
        "commutator-scan" => commutator(cfg),
        "patched-inverse" => patched(cfg, &mut w),
        "perturb" => perturb(cfg, &mut w),
        other => return Err(CliError::ConfigInvalid(format!("unknown stage {other:?}"))),
    }
    .map_err(|e| match e {
        CliError::StageFailure { message, .. } => CliError::stage(stage, message),
        CliError::ConfigInvalid(m) => CliError::stage(stage, m),
        io => io,
    })?;
    w.json(&json_name(stage), &value)?;
    eprintln!("{stage}: {:.1}s", start.elapsed().as_secs_f64());
    Ok(w.artifacts)
}

type StageOut = CliResult<Value>;

fn potential(cfg: &RunConfig, w: &mut Writer) -> StageOut {
    let spec = cfg.spec()?;
    let grid = Grid3::new(cfg.grid.n, cfg.grid.extent);
    let values: Vec<f64> = grid.nodes().iter().map(|x| eval_potential(&spec, x).unwrap_or(f64::NAN)).collect();
    let finite = values.iter().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let radius = 2.0 * spec.max_center_norm() + 1.0;
    let mp = multipole_expand(&spec, 8, radius)?;
    let n = cfg.grid.n;
    w.grid("potential.grid", &GridHeader::new("h", vec![n, n, n], Some(cfg.grid.extent)), &values)?;
    Ok(json!({
        "k": spec.k(),
        "epsilon": spec.epsilon,
        "hole_weight": spec.hole_weight,
        "total_weight": spec.total_weight(),
        "min_separation": spec.min_separation(),
        "grid_min": lo,
        "grid_max": hi,
        "multipole_radius": radius,
        "multipole": mp.rows(),
    }))
}

fn connection(cfg: &RunConfig) -> StageOut {
    let spec = cfg.spec()?;
    let recs = flux_report(&spec);
    // the flux of a term w ε/|x − c| is 2w
    let err = recs.iter().map(|r| (r.flux_over_2pi - 2.0 * r.coeff).abs()).fold(0.0, f64::max);
    Ok(json!({ "records": recs, "max_error": err }))
}

fn triples(cfg: &RunConfig) -> StageOut {
    let spec = cfg.spec()?;
    let conn = assemble_connection(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.fuzz);
    let l = cfg.grid.extent;
    let (mut defect, mut metric) = (0.0f64, 0.0f64);
    let mut taken = 0;
    while taken < 1000 {
        let x = Vec3::new(rng.gen_range(-l..l), rng.gen_range(-l..l), rng.gen_range(-l..l));
        let near = x.norm() < 0.05 || spec.centers.iter().any(|c| (x - c).norm() < 0.05);
        let h = match eval_potential(&spec, &x) {
            Ok(h) if h > 0.05 && !near => h,
            _ => continue,
        };
        taken += 1;
        let t = gh_triple_at(&spec, &conn, &x)?;
        defect = defect.max(normalized_defect(&t));
        let g = metric_from_triple(&t)?;
        let a = conn.base_form(&x) * spec.epsilon;
        let alpha = Vector4::new(1.0, a.x, a.y, a.z);
        let mut oracle = alpha * alpha.transpose() / h;
        for i in 1..4 {
            oracle[(i, i)] += h;
        }
        metric = metric.max((g.components - oracle).abs().max() / oracle.abs().max());
    }
    Ok(json!({ "samples": taken, "max_defect": defect, "max_metric_error": metric }))
}

fn appendix_a(cfg: &RunConfig) -> StageOut {
    let rep = appendix_a_suite(10_000, cfg.seeds.fuzz);
    Ok(json!({
        "max_residual": rep.max_residual(),
        "worked_pair": rep.worked_pair && worked_pair_holds(),
        "report": rep,
    }))
}

#[derive(Serialize)]
struct GlueRow {
    epsilon: f64,
    sup_defect: f64,
    sup_outside_shell: f64,
    min_gram_eigenvalue: f64,
    slope_running: f64,
    slope: f64,
}

fn scan(cfg: &RunConfig) -> CliResult<senspace::gluing::DefectScan> {
    let pc = PatchConfig::new(cfg.spec()?, cfg.system.delta, cfg.system.epsilon_list.clone())?;
    Ok(defect_scan(&pc)?)
}

fn glue_scan(cfg: &RunConfig, w: &mut Writer) -> StageOut {
    let s = scan(cfg)?;
    let rows: Vec<GlueRow> = s
        .rows
        .iter()
        .map(|r| GlueRow {
            epsilon: r.epsilon,
            sup_defect: r.sup_defect,
            sup_outside_shell: r.sup_outside_shell,
            min_gram_eigenvalue: r.min_gram_eigenvalue,
            slope_running: r.slope_running,
            slope: s.fitted_slope,
        })
        .collect();
    w.csv("glue_scan.csv", &rows, true)?;
    let outside = s.rows.iter().map(|r| r.sup_outside_shell).fold(0.0, f64::max);
    let min_eig = s.rows.iter().map(|r| r.min_gram_eigenvalue).fold(f64::INFINITY, f64::min);
    Ok(json!({
        "delta": s.delta,
        "fitted_slope": s.fitted_slope,
        "slope_stderr": s.slope_stderr,
        "max_outside_shell": outside,
        "min_gram_eigenvalue": min_eig,
        "rows": rows.len(),
        "note": s.note,
    }))
}

#[derive(Serialize)]
struct ProfileRow {
    epsilon: f64,
    radius: f64,
    sup_defect: f64,
}

fn defect_profile(cfg: &RunConfig, w: &mut Writer) -> StageOut {
    let s = scan(cfg)?;
    let rows: Vec<ProfileRow> = s
        .rows
        .iter()
        .flat_map(|r| r.annulus_profile.iter().map(move |&(radius, d)| ProfileRow { epsilon: r.epsilon, radius, sup_defect: d }))
        .collect();
    w.csv("defect_profile.csv", &rows, true)?;
    Ok(json!({ "points": rows.len(), "peak": rows.iter().map(|r| r.sup_defect).fold(0.0, f64::max) }))
}

#[derive(Serialize)]
struct AhRow {
    tau: f64,
    a: f64,
    b: f64,
    c: f64,
    f: f64,
    a_inf: f64,
    c_inf: f64,
    log_abs_a_minus_b: f64,
}

fn profile_ah(w: &mut Writer) -> StageOut {
    let p = integrate_profile(60.0, 3.2)?;
    let rows: Vec<AhRow> = p
        .rows()
        .iter()
        .map(|r| AhRow { tau: r[0], a: r[1], b: r[2], c: r[3], f: r[4], a_inf: r[5], c_inf: r[6], log_abs_a_minus_b: r[7] })
        .collect();
    w.csv("profile_ah.csv", &rows, true)?;
    let v = p.at(30.0)?;
    let s = (1.0 - 2.0 / 30.0f64).sqrt();
    let ts: Vec<f64> = (0..=60).map(|i| 15.0 + 0.25 * i as f64).collect();
    let mut ys = Vec::with_capacity(ts.len());
    for t in &ts {
        ys.push(p.at(*t)?.a_minus_b.abs().ln());
    }
    Ok(json!({
        "tau_seed": 60.0,
        "a_match_30": (v.a / (30.0 * s) - 1.0).abs(),
        "c_match_30": (v.c * s + 2.0).abs(),
        "decay_slope": ols_slope(&ts, &ys),
        "bolt_tau": p.bolt_tau,
        "bolt_b": p.bolt_b,
        "shooting_constant": p.k,
        "samples": rows.len(),
    }))
}

fn gauss(s: f64) -> impl Fn(&Vec3) -> f64 {
    move |x: &Vec3| (-x.norm_squared() / (2.0 * s * s)).exp()
}

fn mode_solvers(cfg: &RunConfig) -> StageOut {
    let n = cfg.grid.n;
    let grid = Grid3::new(n, 1.0);
    let eps = 0.1;
    let cache = KernelCache::new(grid);
    let bg = AdiabaticBackground::flat(grid, eps)?;
    let fc: Vec<C64> = grid.sample(gauss(0.15)).iter().map(|&x| C64::new(x, 0.0)).collect();
    let mut field = FibredField::new(grid, eps, false);
    field.insert(1, mode_poisson(&fc, 1, eps, &cache)?)?;
    let lu = apply_laplacian(&field, &bg, 10)?;
    let yukawa = (0..grid.len())
        .filter(|&i| grid.interior(i, 5))
        .map(|i| (lu.modes[&1][i] - fc[i]).norm())
        .fold(0.0, f64::max);
    let grid = Grid3::new(n, 1.6);
    let bg = AdiabaticBackground::flat(grid, 1.0)?;
    let s = 0.15;
    let u = invariant_poisson(&grid.sample(gauss(s)), &bg, &KernelCache::new(grid))?;
    let q = quad::integrate(|r| 4.0 * PI * r * r * (-r * r / (2.0 * s * s)).exp(), 0.0, 12.0 * s, 1e-13)?;
    let invariant = grid
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, x)| x.norm() > 6.0 * s)
        .map(|(i, x)| {
            let exact = q / (4.0 * PI * x.norm());
            (u[i] - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    Ok(json!({ "grid": n, "yukawa_residual": yukawa, "invariant_vs_quadrature": invariant }))
}

fn commutator(cfg: &RunConfig) -> StageOut {
    let c = &cfg.commutator;
    let scan = commutator_scan(&c.deltas, c.battery, cfg.seeds.battery)?;
    let ratio = scan.rows.get(1).and_then(|r| r.ratio);
    Ok(json!({ "ratio": ratio, "predicted": 0.5, "scan": scan }))
}

fn patched(cfg: &RunConfig, w: &mut Writer) -> StageOut {
    let s = &cfg.solver;
    let spec: PotentialSpec = cfg.spec_at(s.epsilon)?;
    let grid = Grid3::new(cfg.grid.n, cfg.grid.extent);
    let bg = AdiabaticBackground::new(&spec, grid)?;
    let warning = bg.resolution_warning();
    let inv = PatchedInverse::new(bg, PatchSettings::new(s.delta, &grid))?;
    let f = inv.battery_field(cfg.seeds.battery, s.max_mode);
    let sol = inv.solve(&f, s.refinements)?;
    let u0 = sol.u.invariant_part();
    let n = cfg.grid.n;
    w.grid("patched_u0.grid", &GridHeader::new("u0", vec![n, n, n], Some(cfg.grid.extent)), &u0)?;
    Ok(json!({
        "epsilon": s.epsilon,
        "delta": s.delta,
        "history": sol.history,
        "report": sol.report,
        "resolution_warning": warning,
    }))
}

#[derive(Serialize)]
struct LogRow {
    step: usize,
    #[serde(rename = "residual_Q")]
    residual_q: f64,
    residual_fixed_point: f64,
    cpu_ms: f64,
}

fn perturb(cfg: &RunConfig, w: &mut Writer) -> StageOut {
    let p = &cfg.perturb;
    let torus = Torus::new(p.n)?;
    let lin = linearization_check(&torus, &TripleField::flat(p.n), cfg.seeds.fuzz, &[1e-2, 1e-3, 1e-4])?;
    let omega = perturbed_flat(&torus, p.amplitude, cfg.seeds.fuzz);
    let out = contract_solve(&torus, &omega, p.tol, p.max_steps)?;
    let rows: Vec<LogRow> = out
        .log
        .iter()
        .map(|r| LogRow { step: r.step, residual_q: r.residual_q, residual_fixed_point: r.residual_fixed_point, cpu_ms: r.cpu_ms })
        .collect();
    w.csv("perturb_log.csv", &rows, false)?;
    let fixed = omega.plus(1.0, &torus.exterior(&out.a));
    let recomputed = (0..torus.len()).map(|i| normalized_defect(&fixed.triple(i))).fold(0.0, f64::max);
    let residuals: Vec<f64> = out.log.iter().map(|r| r.residual_q).collect();
    Ok(json!({
        "n": p.n,
        "amplitude": p.amplitude,
        "steps": out.log.len() - 1,
        "residuals": residuals,
        "quadratic_constants": out.quadratic_constants(1e-13),
        "recomputed_defect": recomputed,
        "linearization": lin,
    }))
}
