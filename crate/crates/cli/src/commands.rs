//! Subcommand implementations. Each writes its artifacts to the output
//! directory and a summary to stdout.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use causal_sde::builtin::{self, ChemParams};
use causal_sde::stats::{identifiability_check, IdentifiabilityOptions, TestReport, Verdict};
use causal_sde::system::{halton_points, ProbeBox};
use causal_sde::{
    check_commutation, compute_terms, convergence_study, full_process_lift, generator::generator_from_terms,
    intervene_sde, ito_counterexample, ou_intervene, ou_marginal, simulate, simulate_terminal, test_field_battery,
    GaussianLaw, GeneratorForm, GeneratorTerms, Grid, InterventionSpec, ItoReport, ScalarFn, SdeSystem,
};
use serde::Serialize;

use crate::config::{Overrides, Resolved};
use crate::error::{config_err, Failure};

pub const DEMO_NAMES: [&str; 4] = ["chem", "ou", "two-signatures", "ito-counterexample"];

/// Default tolerance for the commutation check.
const COMMUTE_TOL: f64 = 1e-12;

pub struct Context {
    pub out: PathBuf,
}

impl Context {
    fn path(&self, name: &str) -> Result<PathBuf, Failure> {
        fs::create_dir_all(&self.out)?;
        Ok(self.out.join(name))
    }

    fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<String, Failure> {
        let text = to_json(value)?;
        fs::write(self.path(name)?, format!("{text}\n"))?;
        Ok(text)
    }
}

/// Writes to stdout; a closed pipe ends output quietly.
fn emit(text: &str) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

pub fn to_json<S: Serialize>(value: &S) -> Result<String, Failure> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn write_paths(ctx: &Context, name: &str, ens: &causal_sde::PathEnsemble<f64>) -> Result<PathBuf, Failure> {
    let path = ctx.path(name)?;
    let mut w = BufWriter::new(File::create(&path)?);
    ens.write_csv(&mut w)?;
    w.flush()?;
    Ok(path)
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

pub fn simulate_cmd(ctx: &Context, cfg: &Resolved) -> Result<(), Failure> {
    let grid = cfg.grid_or_default()?;
    let ens = simulate(&cfg.system, &grid, cfg.paths_or(1000), cfg.seed)?;
    let path = write_paths(ctx, "paths.csv", &ens)?;
    emit(&format!(
        "simulated {} paths x {} steps ({} exploded) -> {}",
        ens.n_paths(),
        grid.steps(),
        ens.exploded_count(),
        display(&path)
    ))
}

#[derive(Serialize)]
struct SystemSummary {
    labels: Vec<String>,
    p: usize,
    d: usize,
    coefficients: causal_sde::system::FieldSource,
    signature: Vec<(String, String)>,
}

fn summarize(system: &SdeSystem<f64>) -> Result<SystemSummary, Failure> {
    let sig = system.signature()?;
    Ok(SystemSummary {
        labels: system.labels.clone(),
        p: system.p(),
        d: system.d(),
        coefficients: system.coeff.source().clone(),
        signature: sig
            .edges()
            .map(|(i, j)| (system.labels[i].clone(), system.labels[j].clone()))
            .collect(),
    })
}

#[derive(Serialize)]
struct InterventionSummary {
    target: String,
    value: String,
    before: SystemSummary,
    after: SystemSummary,
    driver_unchanged: bool,
}

pub fn intervene_cmd(ctx: &Context, cfg: &Resolved) -> Result<(), Failure> {
    let spec = cfg.require_intervention()?;
    let m = spec.coordinate()?;
    let post = intervene_sde(&cfg.system, spec)?;
    let summary = InterventionSummary {
        target: cfg.system.labels[m].clone(),
        value: spec.zeta.describe(),
        before: summarize(&cfg.system)?,
        after: summarize(&post)?,
        driver_unchanged: post.driver == cfg.system.driver,
    };
    emit(&ctx.write_json("intervention.json", &summary)?)?;
    if let Some(grid) = cfg.grid {
        let reduced = simulate(&post, &grid, cfg.paths_or(1000), cfg.seed)?;
        let lifted = full_process_lift(&reduced, spec, &cfg.system.labels[m])?;
        let path = write_paths(ctx, "intervened_paths.csv", &lifted)?;
        eprintln!("postintervention paths -> {}", display(&path));
    }
    Ok(())
}

pub fn signature_cmd(ctx: &Context, cfg: &Resolved) -> Result<(), Failure> {
    let sig = cfg.system.signature()?;
    let labels = &cfg.system.labels;
    let edges: Vec<String> = sig.edges().map(|(i, j)| format!("{} -> {}", labels[i], labels[j])).collect();
    emit(&edges.join("\n"))?;
    let path = ctx.path("signature.dot")?;
    fs::write(&path, sig.to_dot(labels))?;
    eprintln!("{} edges; DOT -> {}", sig.edge_count(), display(&path));
    Ok(())
}

#[derive(Serialize)]
struct FieldValue {
    field: String,
    d_based: f64,
    e_based: f64,
}

#[derive(Serialize)]
struct GeneratorPoint {
    terms: GeneratorTerms<f64>,
    values: Vec<FieldValue>,
}

#[derive(Serialize)]
struct GeneratorOutput {
    r_e: f64,
    points: Vec<GeneratorPoint>,
}

/// Default number of probe points for `generator`.
const GENERATOR_POINTS: usize = 8;

pub fn generator_cmd(ctx: &Context, cfg: &Resolved) -> Result<(), Failure> {
    let system = &cfg.system;
    let p = system.p();
    let r_e = cfg.generator.r_e.unwrap_or(1.0);
    let points = match &cfg.generator.points {
        Some(pts) => {
            if let Some(bad) = pts.iter().find(|x| x.len() != p) {
                return Err(Failure::Config(format!("generator point {bad:?} does not have {p} coordinates")));
            }
            pts.clone()
        }
        None => {
            let bx = system
                .coeff
                .probe_box()
                .cloned()
                .unwrap_or_else(|| ProbeBox::cube(p, -5.0, 5.0));
            halton_points(p, GENERATOR_POINTS)
                .into_iter()
                .map(|u| (0..p).map(|k| bx.lower[k] + (bx.upper[k] - bx.lower[k]) * u[k]).collect())
                .collect()
        }
    };
    let fields = test_field_battery(system.initial.mean());
    let mut out = Vec::with_capacity(points.len());
    for x in &points {
        let terms = compute_terms(system, x, r_e)?;
        let values = fields
            .iter()
            .map(|f| FieldValue {
                field: f.name().to_owned(),
                d_based: generator_from_terms(&terms, f, GeneratorForm::DBased),
                e_based: generator_from_terms(&terms, f, GeneratorForm::EBased),
            })
            .collect();
        out.push(GeneratorPoint { terms, values });
    }
    emit(&ctx.write_json("generator.json", &GeneratorOutput { r_e, points: out })?)?;
    Ok(())
}

pub fn check_commute_cmd(ctx: &Context, cfg: &Resolved) -> Result<(), Failure> {
    let spec = cfg.require_intervention()?;
    let grid = match cfg.grid {
        Some(g) => g,
        None => Grid::new(1.0, 2f64.powi(-8)).map_err(config_err)?,
    };
    let tol = cfg.test.tol.unwrap_or(COMMUTE_TOL);
    let report = check_commutation(&cfg.system, spec, &grid, cfg.paths_or(100), cfg.seed, tol)?;
    emit(&ctx.write_json("commutation.json", &report)?)?;
    if report.commutes {
        Ok(())
    } else {
        Err(Failure::Verdict(format!(
            "max discrepancy {:e} exceeds {:e}",
            report.max_abs_diff, report.tol
        )))
    }
}

fn identify_options(cfg: &Resolved) -> IdentifiabilityOptions {
    let base = IdentifiabilityOptions::default();
    IdentifiabilityOptions {
        times: cfg.test.times.clone().unwrap_or(base.times.clone()),
        n_paths: cfg.paths_or(base.n_paths),
        delta: cfg.grid.map_or(base.delta, |g| g.delta()),
        seed: cfg.seed,
        alpha: cfg.test.alpha.unwrap_or(base.alpha),
        n_permutations: cfg.test.n_permutations.unwrap_or(base.n_permutations),
        generator_tol: cfg.test.tol.unwrap_or(base.generator_tol),
        r_e: cfg.generator.r_e.unwrap_or(base.r_e),
        ..base
    }
}

fn verdict_result(report: &TestReport) -> Result<(), Failure> {
    match report.verdict {
        Verdict::Consistent => Ok(()),
        Verdict::Inconsistent => Err(Failure::Verdict(format!(
            "postintervention laws differ (smallest adjusted p-value {:e})",
            report.p_value.unwrap_or(f64::NAN)
        ))),
    }
}

pub fn check_identify_cmd(ctx: &Context, cfg: &Resolved) -> Result<(), Failure> {
    let spec = cfg.require_intervention()?;
    let b = cfg
        .system_b
        .as_ref()
        .ok_or_else(|| Failure::Config("check-identify needs `system_b`".into()))?;
    let report = identifiability_check(&cfg.system, b, spec, &identify_options(cfg))?;
    emit(&ctx.write_json("report.json", &report)?)?;
    verdict_result(&report)
}

pub fn convergence_cmd(ctx: &Context, cfg: &Resolved) -> Result<(), Failure> {
    let grid = cfg.grid_or_default()?;
    let deltas = match &cfg.convergence.deltas {
        Some(d) => d.clone(),
        None => {
            let steps = grid.steps();
            [16, 8, 4, 2, 1]
                .iter()
                .filter(|&&k| steps % k == 0)
                .map(|&k| grid.delta() * k as f64)
                .collect()
        }
    };
    if deltas.len() < 2 {
        return Err(Failure::Config("convergence needs at least two step sizes".into()));
    }
    let table = convergence_study(&cfg.system, None, &deltas, grid.horizon(), cfg.paths_or(1000), cfg.seed)?;
    let path = ctx.path("convergence.csv")?;
    let mut text = String::from("delta,rms_sup_error,used_paths,exploded_paths\n");
    for r in &table.rows {
        text.push_str(&format!("{},{},{},{}\n", r.delta, r.rms_sup_error, r.used_paths, r.exploded_paths));
    }
    fs::write(&path, &text)?;
    let slope = table.slope.map_or("undefined".to_owned(), |s| s.to_string());
    emit(&format!(
        "{text}slope {slope}, monotone {}, reference {}",
        table.monotone, table.reference
    ))
}

#[derive(Serialize)]
struct ChemDemo {
    system: SystemSummary,
    intervention: String,
    postintervention: SystemSummary,
    commutation: causal_sde::CommutationReport,
}

#[derive(Serialize)]
struct OuDemo {
    intervention: String,
    closed_form: GaussianLaw<f64>,
    simulated_mean: Vec<f64>,
    simulated_cov: Vec<Vec<f64>>,
    n_paths: usize,
    delta: f64,
    commutation: causal_sde::CommutationReport,
}

fn sample_moments(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len() as f64;
    let q = rows.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..q).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n).collect();
    let cov = (0..q)
        .map(|i| {
            (0..q)
                .map(|j| rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect();
    (mean, cov)
}

pub fn demo_cmd(ctx: &Context, name: &str, over: &Overrides) -> Result<(), Failure> {
    let seed = over.seed.unwrap_or(0);
    let file = format!("demo-{name}.json");
    match name {
        "chem" => {
            let system = builtin::chem::<f64>(ChemParams::default());
            let spec = InterventionSpec::constant(1, 1.0);
            let post = intervene_sde(&system, &spec)?;
            let grid = Grid::new(over.horizon.unwrap_or(1.0), over.delta.unwrap_or(2f64.powi(-8))).map_err(config_err)?;
            let commutation = check_commutation(&system, &spec, &grid, over.paths.unwrap_or(100), seed, COMMUTE_TOL)?;
            let demo = ChemDemo {
                system: summarize(&system)?,
                intervention: "Y := 1".into(),
                postintervention: summarize(&post)?,
                commutation,
            };
            emit(&ctx.write_json(&file, &demo)?)?;
            Ok(())
        }
        "ou" => {
            let model = builtin::ou_model::<f64>();
            let (m, zeta) = (0, 2.0);
            let spec = InterventionSpec::constant(m, zeta);
            let horizon = over.horizon.unwrap_or(1.0);
            let delta = over.delta.unwrap_or(1e-2);
            let closed_form = ou_marginal(&ou_intervene(&model, m, zeta)?, horizon)?;
            let system = builtin::ou_builtin::<f64>();
            let post = intervene_sde(&system, &spec)?;
            let grid = Grid::new(horizon, delta).map_err(config_err)?;
            let n_paths = over.paths.unwrap_or(10_000);
            let sample = simulate_terminal(&post, &grid, n_paths, seed)?;
            let rows: Vec<Vec<f64>> = (0..sample.n_paths()).map(|i| sample.state(i).to_vec()).collect();
            let (simulated_mean, simulated_cov) = sample_moments(&rows);
            let commutation = check_commutation(&system, &spec, &grid, 100, seed, COMMUTE_TOL)?;
            let demo = OuDemo {
                intervention: "x1 := 2".into(),
                closed_form,
                simulated_mean,
                simulated_cov,
                n_paths,
                delta,
                commutation,
            };
            emit(&ctx.write_json(&file, &demo)?)?;
            Ok(())
        }
        "two-signatures" => {
            let a = builtin::two_signatures_a::<f64>();
            let b = builtin::two_signatures_b::<f64>();
            let base = IdentifiabilityOptions::default();
            let opts = IdentifiabilityOptions {
                n_paths: over.paths.unwrap_or(base.n_paths),
                delta: over.delta.unwrap_or(base.delta),
                alpha: over.alpha.unwrap_or(base.alpha),
                seed,
                ..base
            };
            let report = identifiability_check(&a, &b, &InterventionSpec::constant(1, 1.0), &opts)?;
            emit(&ctx.write_json(&file, &report)?)?;
            verdict_result(&report)
        }
        "ito-counterexample" => {
            let report: ItoReport = ito_counterexample(
                &ScalarFn::square(),
                1.0,
                over.horizon.unwrap_or(1.0),
                over.delta.unwrap_or(1e-3),
                over.paths.unwrap_or(100),
                seed,
            )?;
            emit(&ctx.write_json(&file, &report)?)?;
            Ok(())
        }
        other => Err(Failure::Config(format!(
            "unknown demo `{other}`; choose one of {}",
            DEMO_NAMES.join(", ")
        ))),
    }
}
