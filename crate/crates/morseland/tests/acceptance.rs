//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::{builtins, census, random_morse_landscapes, v2};
use morseland::bifurcation::{
    flip_family, linspace, locate_events, locate_saddle_node_tol, saddle_node_family, sweep,
    EventKind, SweepOptions, Witness,
};
use morseland::connectome::{build_dag, diagram_isomorphic};
use morseland::critical::{counts, find_critical_points, poincare_hopf_check, CensusOptions, Counts, Kind};
use morseland::diffusion::{
    cluster_by_centroid, pf_marginal_check, reverse_sde_sample, time_potential_family, GmmData, NoiseSchedule,
};
use morseland::flow::{integrate, ENERGY_SLACK};
use morseland::hopfield::{
    corrupt, cosine_similarity, disc_seeds, hebbian_pgd, mh_attractor_census, mh_rank_check, outer_product_rule,
    recall, stability_check, three_patterns, Activation, CensusMode, HopfieldNet, ModernHopfield, Verdict,
    MH_RANK_TOL,
};
use morseland::landscape::{fd_gradient, make_builtin, PotentialForm};
use morseland::linalg::numeric_rank;
use morseland::stochastic::{empirical_invariant_measure, euler_maruyama, fw_action, zero_noise_weights};
use morseland::Landscape;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn dual_well() -> Landscape {
    make_builtin(PotentialForm::DualWell, &[]).unwrap()
}

fn criterion_1() -> Outcome {
    let land = dual_well();
    let c = find_critical_points(&land, 24).unwrap();
    let r2 = 2f64.sqrt();
    let att: Vec<_> = c.iter().filter(|p| p.kind == Kind::Attractor).collect();
    let sad: Vec<_> = c.iter().filter(|p| p.kind == Kind::Saddle).collect();
    let located = [v2(r2, 0.0), v2(-r2, 0.0)]
        .iter()
        .all(|x| att.iter().any(|p| (&p.location - x).norm() < 1e-6 && (p.value + 1.0).abs() < 1e-9));
    let saddle_ok = sad.len() == 1 && sad[0].location.norm() < 1e-6 && sad[0].index == 1;
    let ph = poincare_hopf_check(&c, 2);
    outcome(
        c.len() == 3 && att.len() == 2 && located && saddle_ok && ph.sum == 1,
        format!("{} points, {} attractors located, saddle ok {saddle_ok}, index sum {}", c.len(), att.len(), ph.sum),
    )
}

fn criterion_2() -> Outcome {
    let land = make_builtin(PotentialForm::DualCusp, &[]).unwrap();
    let c = find_critical_points(&land, 24).unwrap();
    let k = counts(&c);
    let dag = build_dag(&land, &c).unwrap();
    let sa = dag
        .direct_edges
        .iter()
        .filter(|&&(i, j)| c[i].kind == Kind::Saddle && c[j].kind == Kind::Attractor)
        .count();
    outcome(
        k.attractors == 3 && k.saddles == 2 && k.repellors == 0 && sa == 4 && dag.axioms.all(),
        format!("{} attractors, {} saddles, {sa} saddle->attractor edges, axioms {:?}", k.attractors, k.saddles, dag.axioms),
    )
}

fn distinct_counts(seq: impl Iterator<Item = Counts>) -> Vec<Counts> {
    let mut out: Vec<Counts> = Vec::new();
    for c in seq {
        if out.last() != Some(&c) {
            out.push(c);
        }
    }
    out
}

fn criterion_3() -> Outcome {
    let fam = saddle_node_family();
    let opts = SweepOptions {
        with_dag: false,
        ..Default::default()
    };
    let rep = sweep(&fam, &linspace(-1.0, 1.0, 41), &opts).unwrap();
    let events: Vec<_> = locate_events(&fam, &rep, &opts.census).into_iter().filter_map(|e| e.ok()).collect();
    let sn: Vec<_> = events.iter().filter(|e| e.kind == EventKind::SaddleNode).collect();
    let mut generic = true;
    let mut stable = true;
    for e in &sn {
        if let Witness::SaddleNode { a, b, .. } = &e.witness {
            generic &= a.abs() > 1e-4 && b.abs() > 1e-4;
        }
        // Relocating with half the tolerance moves the value by less than 1e-6.
        let again = locate_saddle_node_tol(&fam, e.bracket.0, e.bracket.1, &opts.census, 5e-7);
        stable &= again.is_ok_and(|r| (r.value[0] - e.value[0]).abs() < 1e-6);
    }
    let seq = distinct_counts(rep.points.iter().map(|p| p.counts));
    let one = Counts {
        attractors: 1,
        saddles: 0,
        repellors: 0,
    };
    let two = Counts {
        attractors: 2,
        saddles: 1,
        repellors: 0,
    };
    let pattern = seq == vec![one, two, one];
    let values: Vec<f64> = sn.iter().map(|e| e.value[0]).collect();
    outcome(
        sn.len() == 2 && generic && stable && pattern,
        format!("saddle-nodes at {values:?}, generic {generic}, bisection-stable {stable}, count pattern {pattern}"),
    )
}

fn criterion_4() -> Outcome {
    let fam = flip_family();
    let opts = SweepOptions::default();
    let rep = sweep(&fam, &linspace(-1.0, 1.0, 41), &opts).unwrap();
    let located = locate_events(&fam, &rep, &opts.census);
    let failures = located.iter().filter(|e| e.is_err()).count();
    let flips: Vec<_> = located
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.kind == EventKind::HeteroclinicFlip)
        .collect();
    let mut detail = format!("{} flip events, {failures} location failures", flips.len());
    let mut pass = flips.len() == 1 && failures == 0;
    if let Some(Witness::Flip {
        closest_approach,
        single_retarget,
        ..
    }) = flips.first().map(|e| &e.witness)
    {
        pass &= *closest_approach < 1e-3 && *single_retarget;
        detail += &format!(
            " at {:.7}, closest approach {closest_approach:.2e}, single retarget {single_retarget}",
            flips[0].value[0]
        );
    }
    outcome(pass, detail)
}

fn criterion_5() -> Outcome {
    let land = dual_well();
    let c = census(&land);
    let sym = zero_noise_weights(&land, &c, &[0.2], 1.0, 400).unwrap();
    let sym_ok = sym.limit_weights.len() == 2 && sym.limit_weights.iter().all(|w| (w - 0.5).abs() < 0.02);

    let tilted = dual_well().with_tilt(&[0.1, 0.0]);
    let ct = census(&tilted);
    let rep = zero_noise_weights(&tilted, &ct, &[0.15], 1.0, 400).unwrap();
    let att: Vec<_> = ct.iter().filter(|p| p.kind == Kind::Attractor).collect();
    let (lo, hi) = if att[0].value < att[1].value { (0, 1) } else { (1, 0) };
    let w = &rep.limit_weights;
    let minority = w[hi];
    let eps = 0.15f64;
    let laplace = (-(att[hi].value - att[lo].value) / (eps * eps)).exp();
    let ratio = (w[hi] / w[lo]) / laplace;
    let tilt_ok = minority < 0.01 && (0.5..=2.0).contains(&ratio);
    outcome(
        sym_ok && tilt_ok,
        format!(
            "symmetric weights {:?}; tilted minority mass {minority:.3e}, mass ratio / Laplace ratio = {ratio:.3}",
            sym.limit_weights
        ),
    )
}

fn criterion_6() -> Outcome {
    let land = dual_well();
    let (dt, steps, burn) = (1e-2, 2_000_000, 10_000);
    let a = empirical_invariant_measure(&land, 0.7, dt, steps, burn, 7, 50).unwrap();
    let b = empirical_invariant_measure(&land, 0.7, dt, steps, burn, 8, 50).unwrap();
    let between = morseland::stochastic::tv_distance(&a.histogram.mass, &b.histogram.mass);
    let worst = a.tv_to_gibbs.max(b.tv_to_gibbs);
    outcome(
        a.tv_to_gibbs < 0.1 && b.tv_to_gibbs < 0.1 && a.tv_to_gibbs < between + 0.05,
        format!(
            "TV to Gibbs {:.4} / {:.4} (worst {worst:.4}), TV between seeds {between:.4}",
            a.tv_to_gibbs, b.tv_to_gibbs
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_7() -> Outcome {
    let land = dual_well();
    let x0 = v2(1.0, 0.5);
    let (dt, steps) = (1e-3, 1000);
    let det = fw_action(&land, &euler_maruyama(&land, 0.0, &x0, dt, steps, 0).unwrap()).unwrap();
    let medians: Vec<f64> = [0.05, 0.1, 0.2]
        .iter()
        .map(|&eps| {
            median(
                (0..20u64)
                    .map(|s| fw_action(&land, &euler_maruyama(&land, eps, &x0, dt, steps, s).unwrap()).unwrap())
                    .collect(),
            )
        })
        .collect();
    let increasing = medians[0] > 0.0 && medians.windows(2).all(|w| w[1] > w[0]);
    outcome(
        det < 1e-8 && increasing,
        format!("J(deterministic) = {det:.2e}, median J over eps {{0.05, 0.1, 0.2}} = {medians:.4?}"),
    )
}

fn criterion_8() -> Outcome {
    let patterns = vec![v2(-1.0, 1.0), v2(1.0, -1.0)];
    let Ok(trained) = hebbian_pgd(&patterns, 0.1, 2.0, 1e-12, 0) else {
        return outcome(false, "Algorithm 1 did not converge".into());
    };
    let proportional = cosine_similarity(&trained.w, &outer_product_rule(&patterns)) > 0.999;
    let doubled = hebbian_pgd(&patterns, 0.1, 4.0, 1e-12, 0).unwrap();
    let scaling = (&doubled.w - &trained.w * 2.0).norm() / (&trained.w * 2.0).norm();

    let net = HopfieldNet::with_uniform_rinv(trained.w.clone(), 0.85, Activation::Tanh).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut hits = 0;
    for trial in 0..100 {
        let p = &patterns[trial % 2];
        let v0 = corrupt(p, 0.3, Activation::Tanh, &mut rng);
        if let Ok(v) = recall(&net, &v0, 0.05, 1e4) {
            if v.iter().zip(p.iter()).all(|(a, b)| a.signum() == b.signum()) {
                hits += 1;
            }
        }
    }

    let xi = DVector::from_vec(vec![1.0, -1.0, 1.0]);
    let rank_one = &xi * xi.transpose();
    let deficient = HopfieldNet::new_with_diagonal(rank_one, DVector::zeros(3), DVector::zeros(3), Activation::Tanh)
        .map(|n| stability_check(&n).verdict == Verdict::NotStructurallyStable)
        .unwrap_or(false);
    outcome(
        proportional && hits >= 95 && scaling < 1e-6 && deficient,
        format!(
            "converged in {} sweeps, proportional {proportional}, recall {hits}/100, 2c scaling error {scaling:.2e}, rank-deficient flagged {deficient}",
            trained.iterations
        ),
    )
}

fn criterion_9() -> Outcome {
    let xi = three_patterns(0.0);
    let m = ModernHopfield::new(xi.clone(), 1.0).unwrap();
    let seeds = disc_seeds(2, m.c(), 15);
    let cs = mh_attractor_census(&m, &[1.0, 30.0], &seeds, CensusMode::FixedPoint).unwrap();
    let near_patterns = cs[1]
        .attractors
        .iter()
        .all(|a| (0..3).any(|k| (DVector::from_column_slice(a) - xi.column(k)).norm() < 0.1));
    let census_ok = cs[0].count() == 1 && cs[1].count() == 3 && near_patterns;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let bound = numeric_rank(&xi, MH_RANK_TOL).min(xi.ncols() - 1);
    let mut rank_ok = true;
    for _ in 0..1000 {
        let v = v2(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let beta = rng.random_range(0.1..50.0);
        let mb = m.with_beta(beta).unwrap();
        let p = mb.probabilities(&v);
        let softmax_jac = DMatrix::from_diagonal(&p) - &p * p.transpose();
        rank_ok &= numeric_rank(&(softmax_jac * beta), MH_RANK_TOL) < xi.ncols();
        rank_ok &= numeric_rank(&mb.jacobian(&v), MH_RANK_TOL) <= bound;
    }
    let identity = ModernHopfield::new(DMatrix::identity(2, 2), 3.0).unwrap();
    let fails = !mh_rank_check(&identity, &[]).necessary_condition;
    outcome(
        census_ok && rank_ok && fails,
        format!(
            "attractors at beta 1: {}, at beta 30: {} (near patterns {near_patterns}); rank bound holds {rank_ok}; identity config fails {fails}",
            cs[0].count(),
            cs[1].count()
        ),
    )
}

fn criterion_10() -> Outcome {
    let d = GmmData::four_centroids();
    let s = NoiseSchedule::vp(0.1, 20.0);
    let fam = time_potential_family(&d, &s);
    // 200 uniform values of t in [0.01, 1], as eta = 1 - t in [0, 0.99].
    let grid = linspace(0.0, 0.99, 200);
    let opts = SweepOptions {
        with_dag: false,
        census: CensusOptions::default(),
    };
    let rep = sweep(&fam, &grid, &opts).unwrap();
    let att: Vec<usize> = rep.points.iter().map(|p| p.counts.attractors).collect();
    let monotone = att.windows(2).all(|w| w[1] >= w[0]);
    let endpoints = att.first() == Some(&1) && att.last() == Some(&4);
    let sn = locate_events(&fam, &rep, &opts.census)
        .into_iter()
        .filter(|e| e.as_ref().is_ok_and(|e| e.kind == EventKind::SaddleNode))
        .count();

    let samples = reverse_sde_sample(&d, &s, 4000, 1000, 10).unwrap();
    let cl = cluster_by_centroid(&d, &samples);
    let clusters_ok = cl.max_mean_error < 0.1 && cl.fractions.iter().all(|f| *f >= 0.15);
    let pf = pf_marginal_check(&d, &s, 4000, 0.5, 400, 11, 0.03).unwrap();
    let steps = distinct(&att);
    outcome(
        monotone && endpoints && sn >= 3 && clusters_ok && pf.pass,
        format!(
            "attractor counts along backward time {steps:?} (monotone {monotone}), {sn} saddle-nodes; cluster fractions {:.3?}, max mean error {:.3}; PF mean/var error {:.4}/{:.4}",
            cl.fractions, cl.max_mean_error, pf.mean_error, pf.variance_error
        ),
    )
}

fn distinct(v: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for &x in v {
        if out.last() != Some(&x) {
            out.push(x);
        }
    }
    out
}

fn criterion_11() -> Outcome {
    let mut cases: Vec<(String, Landscape)> = builtins().into_iter().map(|(n, l)| (n.to_string(), l)).collect();
    for (k, (l, _)) in random_morse_landscapes(20, 11).into_iter().enumerate() {
        cases.push((format!("random-{k}"), l));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failed: Vec<String> = Vec::new();
    for (name, land) in &cases {
        let c = census(land);
        let r = 0.9 * land.radius();
        let mut probes = Vec::new();
        while probes.len() < 8 {
            let x = v2(rng.random_range(-r..r), rng.random_range(-r..r));
            if x.norm() < r {
                probes.push(x);
            }
        }
        let energy = probes.iter().all(|x| {
            integrate(land, x, 1e-2, 5.0)
                .is_ok_and(|rec| rec.energies.windows(2).all(|w| w[1] <= w[0] + ENERGY_SLACK))
        });
        let gradient = probes
            .iter()
            .all(|x| (land.gradient(x) - fd_gradient(|y| land.value(y), x)).norm() < 1e-6);
        let dag = build_dag(land, &c);
        let axioms = dag.as_ref().is_ok_and(|d| d.axioms.all());
        let ph = poincare_hopf_check(&c, 2).pass;
        let fine = find_critical_points(land, 48).unwrap();
        let refinement = fine.len() == c.len()
            && c.iter().all(|p| fine.iter().any(|q| (&p.location - &q.location).norm() < 1e-6 && p.kind == q.kind));
        let dir = v2(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize() * 1e-3;
        let perturbed = land.clone().with_tilt(dir.as_slice());
        let isomorphic = match (&dag, build_dag(&perturbed, &census(&perturbed))) {
            (Ok(a), Ok(b)) => diagram_isomorphic(a, &b),
            _ => false,
        };
        let checks = [
            ("energy", energy),
            ("gradient", gradient),
            ("axioms", axioms),
            ("poincare-hopf", ph),
            ("refinement", refinement),
            ("isomorphism", isomorphic),
        ];
        for (what, ok) in checks {
            if !ok {
                failed.push(format!("{name}:{what}"));
            }
        }
    }
    outcome(
        failed.is_empty(),
        format!("{} landscapes x 6 properties, failures {failed:?}", cases.len()),
    )
}

/// Name, check and runtime budget.
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 11] = [
        ("dual-well census", criterion_1, Duration::from_secs(1)),
        ("dual-cusp census and DAG", criterion_2, Duration::from_secs(2)),
        ("saddle-node family sweep", criterion_3, Duration::from_secs(30)),
        ("flip family sweep", criterion_4, Duration::from_secs(30)),
        ("zero-noise concentration", criterion_5, Duration::from_secs(20)),
        ("Langevin vs Gibbs", criterion_6, Duration::from_secs(180)),
        ("Freidlin-Wentzell action", criterion_7, Duration::from_secs(60)),
        ("Hopfield training, recall, stability", criterion_8, Duration::from_secs(60)),
        ("modern Hopfield census and rank", criterion_9, Duration::from_secs(60)),
        ("diffusion cascade", criterion_10, Duration::from_secs(300)),
        ("property suites", criterion_11, Duration::from_secs(300)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (k, (name, run, budget)) in criteria.iter().enumerate() {
        let id = format!("{}", k + 1);
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let in_time = took <= *budget;
        let pass = out.pass && in_time;
        if !pass {
            failures += 1;
        }
        println!(
            "{} criterion {id:>2} ({name}): {} [{:.2}s of {}s budget{}]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
