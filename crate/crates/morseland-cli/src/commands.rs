//! Command implementations. Each returns the verdict status; reports and
//! data files go through `Run` so every artifact is listed in the manifest.

use std::fs;
use std::path::Path;

use morseland::bifurcation::{
    builtin_family, cusp_check, linspace, locate_events, sweep, two_parameter_scan, BracketKind, EventKind,
    ParameterFamily, SweepOptions, SweepReport,
};
use morseland::connectome::{build_dag, dag_edit_diff, DagEdit};
use morseland::critical::{counts, find_critical_points, morse_report, poincare_hopf_check, CensusOptions};
use morseland::diffusion::{
    cluster_by_centroid, reverse_sde_sample, time_potential_family, GmmData, NoiseSchedule, ScheduleKind,
};
use morseland::flow::boundary_transversality;
use morseland::hopfield::{
    disc_seeds, hebbian_pgd, mh_attractor_census, mh_rank_check, outer_product_rule, cosine_similarity, recall,
    stability_check, Activation, CensusMode, HopfieldNet, ModernHopfield, Verdict,
};
use morseland::io::{matrix_to_csv, read_matrix_csv};
use morseland::landscape::{make_builtin_named, LandscapeSpec};
use morseland::stochastic::{empirical_invariant_measure, euler_maruyama, fw_action, gibbs_measure, zero_noise_weights};
use morseland::Landscape;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::run::{CmdResult, Failure, Run, Status};

pub fn dispatch(cli: &Cli) -> CmdResult<Status> {
    let name = command_name(&cli.command);
    let mut run = Run::new(&cli.out, &name)?;
    let status = match &cli.command {
        Command::Analyze(a) => analyze(&mut run, a),
        Command::Dag(a) => dag(&mut run, a),
        Command::Sweep(a) => sweep_cmd(&mut run, a),
        Command::Gibbs(a) => gibbs(&mut run, a),
        Command::Langevin(a) => langevin(&mut run, a),
        Command::Action(a) => action(&mut run, a),
        Command::Hopfield(c) => hopfield(&mut run, c),
        Command::Mhn(c) => mhn(&mut run, c),
        Command::Diffusion(c) => diffusion(&mut run, c),
    }?;
    run.finish(cli, &status)?;
    Ok(status)
}

fn command_name(c: &Command) -> String {
    match c {
        Command::Analyze(_) => "analyze".into(),
        Command::Dag(_) => "dag".into(),
        Command::Sweep(_) => "sweep".into(),
        Command::Gibbs(_) => "gibbs".into(),
        Command::Langevin(_) => "langevin".into(),
        Command::Action(_) => "action".into(),
        Command::Hopfield(h) => format!(
            "hopfield {}",
            match h {
                HopfieldCmd::Train { .. } => "train",
                HopfieldCmd::Recall { .. } => "recall",
                HopfieldCmd::Check { .. } => "check",
            }
        ),
        Command::Mhn(m) => format!(
            "mhn {}",
            match m {
                MhnCmd::Census { .. } => "census",
                MhnCmd::Check { .. } => "check",
                MhnCmd::Energy { .. } => "energy",
            }
        ),
        Command::Diffusion(d) => format!(
            "diffusion {}",
            match d {
                DiffusionCmd::Generate { .. } => "generate",
                DiffusionCmd::Cascade { .. } => "cascade",
            }
        ),
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn vec_of(x: &DVector<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}

/// Verdict from a list of (holds, description) checks.
fn verdict(checks: &[(bool, &str)]) -> Status {
    let failed: Vec<&str> = checks.iter().filter(|(ok, _)| !ok).map(|(_, d)| *d).collect();
    if failed.is_empty() {
        Status::Ok
    } else {
        Status::Violation(failed.join(", "))
    }
}

fn landscape(run: &mut Run, a: &LandscapeArgs) -> CmdResult<Landscape> {
    let mut land = match (&a.builtin, &a.landscape) {
        (Some(name), _) => make_builtin_named(name, &a.params)?,
        (None, Some(src)) => {
            let text = if src.trim_start().starts_with('{') {
                src.clone()
            } else {
                fs::read_to_string(src).map_err(|e| usage(format!("{src}: {e}")))?
            };
            LandscapeSpec::from_json(&text)?.build()?
        }
        (None, None) => return Err(usage("give --builtin NAME or --landscape JSON|FILE")),
    };
    if !a.tilt.is_empty() {
        if a.tilt.len() != land.dimension() {
            return Err(usage(format!(
                "--tilt has {} entries for a {}-dimensional landscape",
                a.tilt.len(),
                land.dimension()
            )));
        }
        land = land.with_tilt(&a.tilt);
    }
    if let Some(r) = a.radius {
        if !(r > 0.0) {
            return Err(usage("--radius must be positive"));
        }
        land = land.with_radius(r);
    }
    run.resolve("landscape", &land.spec())?;
    Ok(land)
}

fn analyze(run: &mut Run, a: &AnalyzeArgs) -> CmdResult<Status> {
    let land = landscape(run, &a.land)?;
    let census = find_critical_points(&land, a.grid_density)?;
    let morse = morse_report(&census);
    let ph = poincare_hopf_check(&census, land.dimension());
    let transversality = boundary_transversality(&land, a.boundary_samples)?;
    let (dag, dag_error) = match build_dag(&land, &census) {
        Ok(d) => (Some(d), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let axioms_ok = dag.as_ref().is_some_and(|d| d.axioms.all());
    let report = json!({
        "landscape": land.spec(),
        "critical_points": census,
        "counts": counts(&census),
        "morse": morse,
        "poincare_hopf": ph,
        "transversality": transversality,
        "dag": dag.as_ref().map(|d| json!({
            "nodes": d.nodes,
            "direct_edges": d.direct_edges,
            "edges": d.edges,
            "axioms": d.axioms,
            "witnesses": d.witnesses,
        })),
        "dag_error": dag_error,
    });
    run.write_report("analyze.json", &report, true)?;
    if let Some(d) = &dag {
        run.write_text("dag.dot", &d.to_dot())?;
    }
    Ok(verdict(&[
        (transversality.pass, "flow not inward on the boundary"),
        (ph.pass, "Poincare-Hopf index sum differs from 1"),
        (morse.morse_ok, "non-hyperbolic critical point"),
        (axioms_ok, "DAG missing or failing its axioms"),
    ]))
}

fn dag(run: &mut Run, a: &DagArgs) -> CmdResult<Status> {
    let land = landscape(run, &a.land)?;
    let census = find_critical_points(&land, a.grid_density)?;
    let d = build_dag(&land, &census)?;
    let report = json!({
        "nodes": d.nodes,
        "direct_edges": d.direct_edges,
        "edges": d.edges,
        "axioms": d.axioms,
        "witnesses": d.witnesses,
    });
    run.write_report("dag.json", &report, true)?;
    run.write_text("dag.dot", &d.to_dot())?;
    Ok(verdict(&[(d.axioms.all(), "DAG axioms fail")]))
}

fn gmm_inputs(run: &mut Run, g: &GmmArgs) -> CmdResult<(GmmData, NoiseSchedule)> {
    let data = GmmData::preset(&g.gmm)?;
    let kind = match g.schedule {
        Schedule::Vp => ScheduleKind::Vp,
        Schedule::SubVp => ScheduleKind::SubVp,
        Schedule::Ve => ScheduleKind::Ve,
    };
    let schedule = NoiseSchedule::new(kind, g.beta_min, g.beta_max)?;
    run.resolve("gmm", &json!({
        "centroids": data.centroids,
        "weights": data.weights,
        "sigma0": data.sigma0,
    }))?;
    run.resolve("schedule", &schedule)?;
    Ok((data, schedule))
}

#[derive(Serialize)]
struct SweepRow {
    eta: f64,
    evaluated_at: f64,
    attractors: usize,
    saddles: usize,
    repellors: usize,
    min_abs_eigenvalue: Option<f64>,
}

#[derive(Serialize)]
struct DagStep {
    from_eta: f64,
    to_eta: f64,
    edits: Vec<DagEdit>,
}

/// Located events plus the DAG edit script between consecutive grid
/// points, ordered by parameter value.
fn one_parameter(run: &mut Run, family: &ParameterFamily, grid: &[f64], with_dag: bool) -> CmdResult<Status> {
    let opts = SweepOptions {
        with_dag,
        ..Default::default()
    };
    let rep: SweepReport = sweep(family, grid, &opts)?;
    let mut events = Vec::new();
    let mut failures = Vec::new();
    for r in locate_events(family, &rep, &opts.census) {
        match r {
            Ok(e) => events.push(e),
            Err(e) => failures.push(e.to_string()),
        }
    }
    events.sort_by(|a, b| a.value[0].total_cmp(&b.value[0]));
    let mut dag_edits = Vec::new();
    for w in rep.points.windows(2) {
        if let (Some(a), Some(b)) = (&w[0].dag, &w[1].dag) {
            let diff = dag_edit_diff(a, b);
            if !diff.is_empty() {
                dag_edits.push(DagStep {
                    from_eta: w[0].eta,
                    to_eta: w[1].eta,
                    edits: diff.edits,
                });
            }
        }
    }
    let rows: Vec<SweepRow> = rep
        .points
        .iter()
        .map(|p| SweepRow {
            eta: p.eta,
            evaluated_at: p.evaluated_at,
            attractors: p.counts.attractors,
            saddles: p.counts.saddles,
            repellors: p.counts.repellors,
            min_abs_eigenvalue: p.morse.min_abs_eigenvalue,
        })
        .collect();
    let count = |k: EventKind| events.iter().filter(|e| e.kind == k).count();
    let boundary = rep.brackets.iter().filter(|b| b.kind == BracketKind::BoundaryCrossing).count();
    let ph_failures: Vec<f64> = rep
        .points
        .iter()
        .filter(|p| !p.poincare_hopf.pass && !p.census.is_empty())
        .map(|p| p.eta)
        .collect();
    let report = json!({
        "family": rep.family,
        "points": rows,
        "brackets": rep.brackets,
        "events": events,
        "summary": {
            "saddle_node": count(EventKind::SaddleNode),
            "heteroclinic_flip": count(EventKind::HeteroclinicFlip),
            "boundary_crossings": boundary,
            "final_attractors": rep.points.last().map(|p| p.counts.attractors),
        },
        "failures": failures,
        "poincare_hopf_failures": ph_failures,
        "dag_edits": dag_edits,
    });
    run.write_report("sweep.json", &report, true)?;
    run.write_with("sweep.csv", |buf| rep.write_csv(buf))?;
    if ph_failures.is_empty() {
        Ok(Status::Ok)
    } else {
        Ok(Status::Violation(format!(
            "Poincare-Hopf fails at {} grid points, first at {}",
            ph_failures.len(),
            ph_failures[0]
        )))
    }
}

fn sweep_cmd(run: &mut Run, a: &SweepArgs) -> CmdResult<Status> {
    let mut family = if a.family == "diffusion-cascade" {
        let (d, s) = gmm_inputs(run, &a.gmm)?;
        time_potential_family(&d, &s)
    } else {
        builtin_family(&a.family)?
    };
    if let Some(r) = &a.range {
        if !(r[0] < r[1]) {
            return Err(usage("--range needs LO < HI"));
        }
        family.range = vec![(r[0], r[1]); family.arity()];
    }
    if a.grid < 3 {
        return Err(usage("--grid must be at least 3"));
    }
    run.resolve("range", &family.range)?;
    match family.arity() {
        1 => {
            let (lo, hi) = family.range[0];
            one_parameter(run, &family, &linspace(lo, hi, a.grid), !a.no_dag)
        }
        2 => {
            let rep = two_parameter_scan(&family, a.grid, &CensusOptions::default())?;
            let checks: Vec<serde_json::Value> = rep
                .cusp_candidates
                .iter()
                .map(|c| match cusp_check(&family, c) {
                    Ok(r) => json!(r),
                    Err(e) => json!({ "eta": c.eta, "error": e.to_string() }),
                })
                .collect();
            run.write_report("scan.json", &json!({ "scan": rep, "cusp_checks": checks }), true)?;
            Ok(Status::Ok)
        }
        n => Err(usage(format!("families of arity {n} are not supported"))),
    }
}

fn gibbs(run: &mut Run, a: &GibbsArgs) -> CmdResult<Status> {
    let land = landscape(run, &a.land)?;
    let g = gibbs_measure(&land, a.eps, a.grid)?;
    run.write_with("gibbs.csv", |buf| g.write_csv(buf))?;
    let zero_noise = if a.epsilons.is_empty() {
        None
    } else {
        let census = find_critical_points(&land, 24)?;
        Some(zero_noise_weights(&land, &census, &a.epsilons, a.ball_radius, a.grid)?)
    };
    let report = json!({
        "epsilon": a.eps,
        "grid": a.grid,
        "log_z": g.log_z,
        "underresolved": g.underresolved,
        "half_plane_mass": g.mass_where(|x| x[0] > 0.0),
        "zero_noise": zero_noise,
    });
    run.write_report("gibbs.json", &report, true)?;
    Ok(Status::Ok)
}

fn langevin(run: &mut Run, a: &LangevinArgs) -> CmdResult<Status> {
    let land = landscape(run, &a.land)?;
    let rep = empirical_invariant_measure(&land, a.eps, a.dt, a.steps, a.burn_in, a.seed, a.grid)?;
    run.write_with("histogram.csv", |buf| rep.histogram.write_csv(buf))?;
    let pass = rep.tv_to_gibbs < a.tv_threshold;
    let report = json!({
        "epsilon": a.eps,
        "dt": a.dt,
        "steps": a.steps,
        "burn_in": a.burn_in,
        "seed": a.seed,
        "grid": a.grid,
        "samples": rep.histogram.samples,
        "tv_to_gibbs": rep.tv_to_gibbs,
        "tv_threshold": a.tv_threshold,
        "pass": pass,
    });
    run.write_report("langevin.json", &report, true)?;
    Ok(verdict(&[(pass, "occupancy too far from the Gibbs measure")]))
}

fn action(run: &mut Run, a: &ActionArgs) -> CmdResult<Status> {
    let land = landscape(run, &a.land)?;
    let seed = match (a.eps > 0.0, a.seed) {
        (true, None) => return Err(usage("--seed is required when --eps > 0")),
        (_, s) => s.unwrap_or(0),
    };
    if a.eps < 0.0 || a.paths == 0 {
        return Err(usage("--eps must be nonnegative and --paths positive"));
    }
    let x0 = if a.x0.is_empty() {
        DVector::from_element(land.dimension(), 0.3 * land.radius())
    } else if a.x0.len() == land.dimension() {
        DVector::from_column_slice(&a.x0)
    } else {
        return Err(usage("--x0 dimension does not match the landscape"));
    };
    run.resolve("x0", &vec_of(&x0))?;
    let mut actions = Vec::new();
    for p in 0..a.paths {
        let path = euler_maruyama(&land, a.eps, &x0, a.dt, a.steps, seed + p)?;
        if p == 0 {
            run.write_with("path.csv", |buf| path.write_csv(buf))?;
        }
        actions.push(fw_action(&land, &path)?);
    }
    let mut sorted = actions.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let report = json!({
        "epsilon": a.eps,
        "dt": a.dt,
        "steps": a.steps,
        "x0": vec_of(&x0),
        "seeds": (0..a.paths).map(|p| seed + p).collect::<Vec<_>>(),
        "actions": actions,
        "median": median,
    });
    run.write_report("action.json", &report, true)?;
    Ok(Status::Ok)
}

fn activation(a: ActivationArg) -> Activation {
    match a {
        ActivationArg::Tanh => Activation::Tanh,
        ActivationArg::Sigmoid => Activation::Sigmoid,
    }
}

fn read_matrix(path: &Path) -> CmdResult<DMatrix<f64>> {
    if !path.exists() {
        return Err(usage(format!("{}: no such file", path.display())));
    }
    Ok(read_matrix_csv(path)?)
}

fn hopfield(run: &mut Run, c: &HopfieldCmd) -> CmdResult<Status> {
    match c {
        HopfieldCmd::Train { patterns, rate, c, tol, seed } => {
            let m = read_matrix(patterns)?;
            let pats: Vec<DVector<f64>> = m.row_iter().map(|r| r.transpose()).collect();
            let res = hebbian_pgd(&pats, *rate, *c, *tol, *seed)?;
            run.write_text("W.csv", &matrix_to_csv(&res.w))?;
            let report = json!({
                "iterations": res.iterations,
                "frobenius_norm": res.w.norm(),
                "cosine_to_outer_product": cosine_similarity(&res.w, &outer_product_rule(&pats)),
                "neurons": res.w.nrows(),
                "patterns": pats.len(),
            });
            run.write_report("train.json", &report, true)?;
            Ok(Status::Ok)
        }
        HopfieldCmd::Recall {
            weights,
            rinv,
            activation: act,
            v0,
            dt,
            t_max,
        } => {
            let w = read_matrix(weights)?;
            let net = HopfieldNet::with_uniform_rinv(w, *rinv, activation(*act))?;
            if v0.len() != net.size() {
                return Err(usage(format!("--v0 has {} entries for {} neurons", v0.len(), net.size())));
            }
            let start = DVector::from_column_slice(v0);
            let v = recall(&net, &start, *dt, *t_max)?;
            let report = json!({
                "v0": v0,
                "fixed_point": vec_of(&v),
                "sign_pattern": v.iter().map(|x| x.signum()).collect::<Vec<_>>(),
                "energy": net.energy(&v)?,
            });
            run.write_report("recall.json", &report, true)?;
            Ok(Status::Ok)
        }
        HopfieldCmd::Check {
            weights,
            rinv,
            activation: act,
        } => {
            let w = read_matrix(weights)?;
            let n = w.nrows();
            let net = HopfieldNet::new_with_diagonal(w, DVector::zeros(n), DVector::from_element(n, *rinv), activation(*act))?;
            let rep = stability_check(&net);
            run.write_report("check.json", &rep, true)?;
            Ok(verdict(&[(rep.verdict == Verdict::StructurallyStable, "not structurally stable")]))
        }
    }
}

/// Patterns CSV rows become the columns of the pattern matrix.
fn modern(patterns: &Path, beta: f64) -> CmdResult<ModernHopfield> {
    Ok(ModernHopfield::new(read_matrix(patterns)?.transpose(), beta)?)
}

fn mhn(run: &mut Run, c: &MhnCmd) -> CmdResult<Status> {
    match c {
        MhnCmd::Census {
            patterns,
            beta,
            mode,
            seeds_per_axis,
        } => {
            let m = modern(patterns, beta[0])?;
            let seeds = disc_seeds(m.dim(), m.c(), *seeds_per_axis);
            let mode = match mode {
                CensusModeArg::FixedPoint => CensusMode::FixedPoint,
                CensusModeArg::GradientFlow => CensusMode::GradientFlow,
            };
            let census = mh_attractor_census(&m, beta, &seeds, mode)?;
            let report = json!({
                "seeds": seeds.len(),
                "census": census,
                "counts": census.iter().map(|c| c.count()).collect::<Vec<_>>(),
            });
            run.write_report("census.json", &report, true)?;
            Ok(Status::Ok)
        }
        MhnCmd::Check { patterns, beta } => {
            let m = modern(patterns, *beta)?;
            let seeds = disc_seeds(m.dim(), m.c(), 15);
            let fixed: Vec<DVector<f64>> = mh_attractor_census(&m, &[*beta], &seeds, CensusMode::FixedPoint)?
                .remove(0)
                .attractors
                .iter()
                .map(|a| DVector::from_column_slice(a))
                .collect();
            let rep = mh_rank_check(&m, &fixed);
            run.write_report("check.json", &rep, true)?;
            Ok(verdict(&[(rep.necessary_condition, "fewer than d + 1 patterns with d independent")]))
        }
        MhnCmd::Energy { patterns, beta, v } => {
            let m = modern(patterns, *beta)?;
            if v.len() != m.dim() {
                return Err(usage(format!("--v has {} entries for dimension {}", v.len(), m.dim())));
            }
            let x = DVector::from_column_slice(v);
            let report = json!({
                "v": v,
                "energy": m.energy(&x),
                "gradient": vec_of(&m.energy_gradient(&x)),
                "update": vec_of(&m.update(&x)),
                "probabilities": vec_of(&m.probabilities(&x)),
            });
            run.write_report("energy.json", &report, true)?;
            Ok(Status::Ok)
        }
    }
}

fn diffusion(run: &mut Run, c: &DiffusionCmd) -> CmdResult<Status> {
    match c {
        DiffusionCmd::Generate { gmm, n, steps, seed } => {
            let (d, s) = gmm_inputs(run, gmm)?;
            let xs = reverse_sde_sample(&d, &s, *n, *steps, *seed)?;
            let m = DMatrix::from_fn(xs.len(), d.dim(), |i, j| xs[i][j]);
            run.write_text("samples.csv", &matrix_to_csv(&m))?;
            let report = json!({
                "samples": xs.len(),
                "steps": steps,
                "seed": seed,
                "clusters": cluster_by_centroid(&d, &xs),
            });
            run.write_report("generate.json", &report, true)?;
            Ok(Status::Ok)
        }
        DiffusionCmd::Cascade { gmm, grid } => {
            let (d, s) = gmm_inputs(run, gmm)?;
            if *grid < 3 {
                return Err(usage("--grid must be at least 3"));
            }
            let family = time_potential_family(&d, &s);
            let (lo, hi) = family.range[0];
            one_parameter(run, &family, &linspace(lo, hi, *grid), false)
        }
    }
}
