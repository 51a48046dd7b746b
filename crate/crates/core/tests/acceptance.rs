//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::time::{Duration, Instant};

use modshadow::bracket::{audit_local_product, nak_decompose};
use modshadow::experiments::{
    density_experiment, leaf_density_experiment, transitivity_experiment, LeafGrid, TransitivityBudget,
};
use modshadow::flow::{
    geodesic_flow, stable_move, unstable_move, verify_anosov_bounds, AnosovConstants, DEFAULT_DISPLACEMENT,
    DEFAULT_T_GRID,
};
use modshadow::frame::{chart_dist, FrameElement, HalfPlanePoint, UnitTangent};
use modshadow::oracle::{canonical_word, enumerate_classes, match_orbit};
use modshadow::par::{sample_rng, Execution, Window};
use modshadow::shadowing::{
    audit_lemma_bound, dual_run_uniqueness, find_periodic_orbit_detailed, lemma_bound_k, p_function, validate_result,
    FinderBudget, FinderOutcome, PeriodicOrbitResult, DEFAULT_GRID_POINTS, DEFAULT_K_MAX, PERIOD_TOL,
};
use rand::Rng;

struct Verdict {
    id: usize,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn report(v: &Verdict) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("criterion {} {tag} ({:.2} s): {}", v.id, v.elapsed.as_secs_f64(), v.detail);
}

fn timed(id: usize, limit: Option<Duration>, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let start = Instant::now();
    let (ok, detail) = f();
    let elapsed = start.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let detail = if in_time { detail } else { format!("{detail}; over the {:?} limit", limit.unwrap()) };
    let v = Verdict { id, pass: ok && in_time, detail, elapsed };
    report(&v);
    v
}

fn bulk() -> Window {
    Window::strip(1.0, 2.0).unwrap()
}

fn criterion_1() -> (bool, String) {
    let w = Window::strip(1.0, 4.0).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let mut rng = sample_rng(101, i);
        let g = w.sample(&mut rng);
        let s = rng.random_range(-0.5..0.5);
        let t = rng.random_range(0.0..4.0);
        let lhs = geodesic_flow(&stable_move(&g, s), t).unwrap();
        let rhs = stable_move(&geodesic_flow(&g, t).unwrap(), s * (-t).exp());
        worst = worst.max(chart_dist(&lhs, &rhs));
        let lhs = geodesic_flow(&unstable_move(&g, s), -t).unwrap();
        let rhs = unstable_move(&geodesic_flow(&g, -t).unwrap(), s * (-t).exp());
        worst = worst.max(chart_dist(&lhs, &rhs));
    }
    let a = verify_anosov_bounds(&w, AnosovConstants::default(), &DEFAULT_T_GRID, DEFAULT_DISPLACEMENT, 2000, 102, Execution::default())
        .unwrap();
    let ok = worst <= 1e-13 && a.passed();
    (
        ok,
        format!(
            "conjugation residual {worst:.2e} over 1e4 cases; stable ratio {:.4}, unstable ratio {:.4}, forward-unstable control {:.1}",
            a.stable_ratio, a.unstable_ratio, a.negative_control_ratio
        ),
    )
}

fn criterion_2() -> (bool, String) {
    let lambda = (-1.0f64).exp();
    let mut ok = true;
    let mut worst_ratio: f64 = 0.0;
    for (i, t0) in [0.5, 1.0, 2.0, 4.0, 6.0].into_iter().enumerate() {
        let a = audit_lemma_bound(t0, lambda, 1000, 200, 200 + i as u64);
        worst_ratio = worst_ratio.max(a.max_ratio);
        ok &= a.max_p <= a.k + 1e-12;
    }
    // m = 0 against the closed form, and the limit m → ∞ with c = 0 against the geometric series
    let mut closed: f64 = 0.0;
    for i in 0..=100 {
        let t0 = 2.0;
        let t = t0 * i as f64 / 100.0;
        closed = closed.max((p_function(t, t0, lambda, &[], 0) - (lambda.powf(t) + lambda.powf(t0 - t))).abs());
        let series = lambda.powf(t) * (1.0 / (1.0 - lambda.powf(t0))) + lambda.powf(t0 - t);
        closed = closed.max((p_function(t, t0, lambda, &[0.0; 200], 200) - series).abs());
    }
    ok &= closed <= 1e-12;
    let k2 = lemma_bound_k(2.0, lambda);
    ok &= (k2 - 2.5819767068693267).abs() < 1e-12;
    (ok, format!("max P/K = {worst_ratio:.4} over t0 in {{0.5, 1, 2, 4, 6}}, 1000 trials each; closed-form residual {closed:.1e}; K(2) = {k2:.10}"))
}

/// Independent `n⁺(σ)·n⁻(ν)·a(c) = h` solve by damped Newton iteration on
/// three entries with a finite-difference Jacobian.
fn root_find(h: &FrameElement) -> [f64; 3] {
    let target = h.entries();
    let eval = |p: [f64; 3]| {
        let m = FrameElement::upper(p[0]).compose(&FrameElement::lower(p[1])).compose(&FrameElement::diag(p[2])).entries();
        [m[1] - target[1], m[2] - target[2], m[3] - target[3]]
    };
    let mut p = [0.0; 3];
    for _ in 0..100 {
        let f = eval(p);
        if f.iter().all(|x| x.abs() < 1e-15) {
            break;
        }
        let mut jac = [[0.0; 3]; 3];
        for j in 0..3 {
            let mut q = p;
            let e = 1e-7;
            q[j] += e;
            let fq = eval(q);
            let mut r = p;
            r[j] -= e;
            let fr = eval(r);
            for i in 0..3 {
                jac[i][j] = (fq[i] - fr[i]) / (2.0 * e);
            }
        }
        let d = solve3(jac, f);
        for j in 0..3 {
            p[j] -= d[j];
        }
    }
    p
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    let mut x = [0.0; 3];
    for (j, xj) in x.iter_mut().enumerate() {
        let mut m = a;
        for i in 0..3 {
            m[i][j] = b[i];
        }
        *xj = det(m) / d;
    }
    x
}

fn criterion_3() -> (bool, String) {
    let mut roundtrip: f64 = 0.0;
    let mut oracle: f64 = 0.0;
    for i in 0..10_000 {
        let mut rng = sample_rng(301, i);
        let (s, u, c) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        let h = FrameElement::upper(s).compose(&FrameElement::lower(u)).compose(&FrameElement::diag(c));
        let p = nak_decompose(&h).unwrap();
        let back = p.recompose();
        roundtrip = roundtrip.max(back.entry_distance(&h));
        if i < 100 {
            let r = root_find(&h);
            oracle = oracle.max((r[0] - p.sigma).abs().max((r[1] - p.nu).abs()).max((r[2] - p.c).abs()));
        }
    }
    let bases = [(0.0, 1.1, 0.3), (0.3, 1.5, 2.0), (-0.45, 2.5, 4.0), (0.2, 4.0, 1.0), (0.1, 8.0, 5.5)];
    let mut failures = 0;
    let (mut worst, mut landing) = (0.0f64, 0.0f64);
    for (i, (re, im, th)) in bases.into_iter().enumerate() {
        let x = UnitTangent::new(HalfPlanePoint { re, im }, th).to_frame();
        let a = audit_local_product(&x, 0.2, 1000, 310 + i as u64);
        failures += a.failures;
        worst = worst.max(a.worst_magnitude);
        landing = landing.max(a.worst_landing);
    }
    let ok = roundtrip <= 1e-12 && oracle <= 1e-8 && failures == 0;
    (
        ok,
        format!(
            "roundtrip {roundtrip:.1e} on 1e4; root-find gap {oracle:.1e} on 100; product audit {failures} failures in 5 x 1000 pairs (worst |coords|/eta {worst:.3}, landing/eps {landing:.3})"
        ),
    )
}

fn finder_runs(n: usize, seed: u64) -> Vec<(FrameElement, Result<FinderOutcome, String>)> {
    let budget = FinderBudget::default();
    Execution::default().map_indexed(n, |i| {
        let x0 = bulk().sample(&mut sample_rng(seed, i));
        let out = find_periodic_orbit_detailed(&x0, 0.2, &budget).map_err(|e| e.to_string()).and_then(|o| {
            validate_result(&x0, &o.result, 0.2).map_err(|e| e.to_string())?;
            Ok(o)
        });
        (x0, out)
    })
}

fn criterion_4(runs: &[(FrameElement, Result<FinderOutcome, String>)]) -> (bool, String) {
    let ok_runs: Vec<&PeriodicOrbitResult> = runs.iter().filter_map(|(_, r)| r.as_ref().ok()).map(|o| &o.result).collect();
    let rate = ok_runs.len() as f64 / runs.len() as f64;
    let closure = ok_runs.iter().map(|r| r.closure_residual).fold(0.0, f64::max);
    let period = ok_runs.iter().map(|r| (r.period - r.oracle_period).abs()).fold(0.0, f64::max);
    let start = ok_runs.iter().map(|r| r.start_distance).fold(0.0, f64::max);
    let hyperbolic = ok_runs.iter().all(|r| r.gamma.trace().abs() > 2);
    let ok = rate >= 0.9 && closure <= 1e-9 && period <= 1e-8 && start <= 0.2 && hyperbolic;
    (
        ok,
        format!(
            "{}/{} found; max closure {closure:.1e}, max |T - oracle| {period:.1e}, max start distance {start:.4}",
            ok_runs.len(),
            runs.len()
        ),
    )
}

fn criterion_5(found: &[&PeriodicOrbitResult], density_min: f64) -> (bool, String) {
    let classes = enumerate_classes(12).unwrap();
    let small: Vec<&&PeriodicOrbitResult> = found.iter().filter(|r| r.gamma.trace().abs() <= 12).collect();
    let matched = small
        .iter()
        .filter(|r| matches!(match_orbit(r, &classes, PERIOD_TOL), Ok(Some(c)) if canonical_word(&r.gamma).ok() == Some(c.word.clone())))
        .count();
    let rl = 2.0 * 1.5f64.acosh();
    let ok = matched == small.len() && (density_min - rl).abs() <= 1e-6;
    (
        ok,
        format!(
            "{matched}/{} orbits with |trace| <= 12 match an enumerated class; minimum length {density_min:.10} vs {rl:.10}",
            small.len()
        ),
    )
}

fn criterion_7(runs: &[(FrameElement, Result<FinderOutcome, String>)]) -> (bool, String, String) {
    let outcomes: Vec<&FinderOutcome> = runs.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
    let mut ok = true;
    let mut worst_ratio: f64 = 0.0;
    let mut worst_s: f64 = 0.0;
    let mut user_ratio: f64 = 0.0;
    for o in &outcomes {
        for orbit in [&o.forward, &o.backward] {
            ok &= orbit.k_max == DEFAULT_K_MAX && orbit.residuals.len() == DEFAULT_K_MAX + 1;
            let bound = o.params.epsilon / 3.0;
            worst_ratio = worst_ratio.max(orbit.max_residual() / bound);
            worst_s = worst_s.max(orbit.s.abs() / o.params.eta);
            user_ratio = user_ratio.max(orbit.max_residual() / (0.2 / 3.0));
        }
    }
    ok &= worst_ratio <= 1.0 && worst_s <= 1.0;
    let mut unique = 0;
    let pairs = outcomes.iter().take(20).collect::<Vec<_>>();
    for (i, o) in pairs.iter().enumerate() {
        let u0 = o.params.delta / 30.0 * sample_rng(700, i).random_range(-1.0..1.0);
        if matches!(dual_run_uniqueness(o, u0, 200), Ok(r) if r.unique) {
            unique += 1;
        }
    }
    ok &= pairs.len() == 20 && unique == 20;
    let run_eps: Vec<f64> = outcomes.iter().map(|o| o.params.epsilon).collect();
    let median = {
        let mut v = run_eps.clone();
        v.sort_by(f64::total_cmp);
        v.get(v.len() / 2).copied().unwrap_or(f64::NAN)
    };
    (
        ok,
        format!(
            "{} runs, k <= {DEFAULT_K_MAX}, {DEFAULT_GRID_POINTS}-point grid: max residual/(eps_run/3) {worst_ratio:.3}, max |s|/eta {worst_s:.2e}; uniqueness {unique}/{}",
            outcomes.len(),
            pairs.len()
        ),
        format!(
            "diagnostic: eps_run median {median:.2}; max residual/(0.2/3) against the requested epsilon is {user_ratio:.2}"
        ),
    )
}

fn criterion_8() -> (bool, String) {
    let w = bulk();
    let x = w.sample(&mut sample_rng(800, 0));
    let leaf = leaf_density_experiment(&x, &w, 0.25, &LeafGrid::default(), Execution::default()).unwrap();
    let budget = TransitivityBudget::default();
    let hits: Vec<Option<f64>> = Execution::default().map_indexed(10, |i| {
        let mut rng = sample_rng(801, i);
        let u = w.sample(&mut rng);
        let v = w.sample(&mut rng);
        transitivity_experiment(&u, &v, 0.1, &budget).ok().filter(|h| h.replay_distance <= 0.1 && h.t <= 200.0).map(|h| h.t)
    });
    let n_hits = hits.iter().flatten().count();
    let t_max = hits.iter().flatten().fold(0.0f64, |m, t| m.max(*t));
    let ok = leaf.coverage >= 0.95 && leaf.audit_residual <= 1e-9 && leaf.inclusion_violations == 0 && n_hits == 10;
    (
        ok,
        format!(
            "leaf coverage {:.3} of {} net points (orbit-only control {:.3}), identity residual {:.1e}, {} inclusion violations; {n_hits}/10 hits, latest at t = {t_max:.2}",
            leaf.coverage, leaf.net_points, leaf.control_coverage, leaf.audit_residual, leaf.inclusion_violations
        ),
    )
}

fn main() {
    // cargo passes harness flags such as --list; only a plain run executes
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut verdicts = Vec::new();
    verdicts.push(timed(1, Some(Duration::from_secs(10)), criterion_1));
    verdicts.push(timed(2, Some(Duration::from_secs(5)), criterion_2));
    verdicts.push(timed(3, None, criterion_3));

    let mut runs = Vec::new();
    verdicts.push(timed(4, Some(Duration::from_secs(120)), || {
        runs = finder_runs(50, 400);
        criterion_4(&runs)
    }));

    let start = Instant::now();
    let density =
        density_experiment(&bulk(), 0.2, 500, 7, &FinderBudget::default(), Execution::Sequential).unwrap();
    let density_time = start.elapsed();

    let mut found: Vec<&PeriodicOrbitResult> = runs.iter().filter_map(|(_, r)| r.as_ref().ok()).map(|o| &o.result).collect();
    found.extend(density.records.iter().filter(|r| r.succeeded()).filter_map(|r| r.result.as_ref()));
    verdicts.push(timed(5, None, || criterion_5(&found, density.min_period)));

    let v6 = Verdict {
        id: 6,
        pass: density.coverage >= 0.99 && density_time <= Duration::from_secs(300),
        detail: format!(
            "coverage {:.3} ({}/{}) single-threaded; max start distance {:.4}, max closure {:.1e}",
            density.coverage, density.successes, density.samples, density.max_start_distance, density.max_closure
        ),
        elapsed: density_time,
    };
    report(&v6);
    verdicts.push(v6);

    let mut diagnostic = String::new();
    verdicts.push(timed(7, None, || {
        let (ok, detail, diag) = criterion_7(&runs);
        diagnostic = diag;
        (ok, detail)
    }));
    println!("criterion 7 {diagnostic}");
    verdicts.push(timed(8, None, criterion_8));

    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", verdicts.len());
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
