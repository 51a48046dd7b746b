//! Batch experiments: density of closed orbits over a window, density of a
//! weak-unstable leaf, and orbit hitting between two open sets.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{chart_dist, FrameElement, HalfPlanePoint, UnitTangent};
use crate::lattice::{quotient_dist, reduce_frame, translates};
use crate::oracle::{canonical_word, enumerate_classes, match_orbit, ConjClass};
use crate::par::{sample_rng, Execution, Window};
use crate::shadowing::{find_periodic_orbit, validate_result, FinderBudget, PeriodicOrbitResult, PERIOD_TOL};

/// Traces up to this bound are matched against the enumerated spectrum.
pub const ORACLE_TRACE: i64 = 400;

/// Enumerated classes up to [`ORACLE_TRACE`], built once per process.
fn oracle_table() -> &'static [ConjClass] {
    static TABLE: std::sync::OnceLock<Vec<ConjClass>> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| enumerate_classes(ORACLE_TRACE).expect("trace bound is valid"))
}

/// Frame `g·a(t)` with the flow advanced in reduced steps of at most `step`.
///
/// Rounding in each step only perturbs the frame along the stable direction
/// (which contracts) or along the weak-unstable leaf, so the result stays on
/// the weak-unstable leaf of `g` to working precision.
pub fn flow_reduced(g: &FrameElement, t: f64, step: f64) -> FrameElement {
    let n = (t.abs() / step).ceil().max(1.0) as usize;
    let a = FrameElement::diag(t / n as f64);
    let mut x = reduce_frame(g).frame;
    for _ in 0..n {
        x = reduce_frame(&x.compose(&a)).frame;
    }
    x
}

/// Precomputed images of one target, for repeated distance queries from
/// reduced frames.
struct Target {
    images: Vec<(FrameElement, HalfPlanePoint)>,
}

impl Target {
    fn new(h: &FrameElement) -> Self {
        let r = reduce_frame(h).frame;
        let images = translates(&r).into_iter().map(|f| (f, f.base())).collect();
        Target { images }
    }

    /// Whether reduced `g` is within `radius` of the target. Base points
    /// farther than `2·radius + 0.1` apart are never within chart `radius`.
    fn within(&self, g: &FrameElement, base: &HalfPlanePoint, radius: f64, cosh_bound: f64) -> bool {
        self.images
            .iter()
            .any(|(f, b)| base.cosh_dist(b) <= cosh_bound && chart_dist(g, f) <= radius)
    }

    fn distance(&self, g: &FrameElement) -> f64 {
        self.images.iter().map(|(f, _)| chart_dist(g, f)).fold(f64::INFINITY, f64::min)
    }
}

fn cosh_bound(radius: f64) -> f64 {
    (2.0 * radius + 0.1).cosh()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub index: usize,
    pub x0: FrameElement,
    pub result: Option<PeriodicOrbitResult>,
    /// Canonical R/L word of the closing element.
    pub word: Option<String>,
    /// Whether the enumerated spectrum contains the orbit; `None` above
    /// [`ORACLE_TRACE`].
    pub oracle_match: Option<bool>,
    pub error: Option<String>,
}

impl OrbitRecord {
    pub fn succeeded(&self) -> bool {
        self.result.is_some() && self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub epsilon: f64,
    pub seed: u64,
    pub samples: usize,
    pub successes: usize,
    pub coverage: f64,
    pub max_start_distance: f64,
    pub min_period: f64,
    pub max_period: f64,
    pub max_closure: f64,
    pub oracle_matched: usize,
    pub wall_time_s: f64,
    pub records: Vec<OrbitRecord>,
}

fn density_sample(
    index: usize,
    window: &Window,
    epsilon: f64,
    seed: u64,
    budget: &FinderBudget,
    classes: &[ConjClass],
) -> OrbitRecord {
    let x0 = window.sample(&mut sample_rng(seed, index));
    let mut rec = OrbitRecord { index, x0, result: None, word: None, oracle_match: None, error: None };
    let found = find_periodic_orbit(&x0, epsilon, budget).and_then(|r| {
        validate_result(&x0, &r, epsilon)?;
        Ok(r)
    });
    match found {
        Ok(r) => {
            rec.word = canonical_word(&r.gamma).ok();
            if r.gamma.trace().abs() <= ORACLE_TRACE {
                let matched = matches!(match_orbit(&r, classes, PERIOD_TOL), Ok(Some(_)));
                rec.oracle_match = Some(matched);
                if !matched {
                    rec.error = Some("no matching class in the enumerated spectrum".into());
                }
            }
            rec.result = Some(r);
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Runs the periodic-orbit finder from `n_samples` uniform starts in the
/// window and revalidates every reported orbit independently.
pub fn density_experiment(
    window: &Window,
    epsilon: f64,
    n_samples: usize,
    seed: u64,
    budget: &FinderBudget,
    exec: Execution,
) -> Result<DensityReport> {
    window.validate()?;
    if window.im_lo < 1.0 {
        return Err(Error::InvalidArgument(format!("window must lie in im ≥ 1, got {}", window.im_lo)));
    }
    if !(epsilon > 0.0) || n_samples == 0 {
        return Err(Error::InvalidArgument("epsilon and sample count must be positive".into()));
    }
    budget.validate()?;
    let classes = oracle_table();
    let start = Instant::now();
    let records = exec.map_indexed(n_samples, |i| density_sample(i, window, epsilon, seed, budget, classes));
    let ok: Vec<&PeriodicOrbitResult> = records.iter().filter(|r| r.succeeded()).filter_map(|r| r.result.as_ref()).collect();
    let fold = |f: fn(&PeriodicOrbitResult) -> f64, init: f64, m: fn(f64, f64) -> f64| ok.iter().map(|r| f(r)).fold(init, m);
    Ok(DensityReport {
        epsilon,
        seed,
        samples: n_samples,
        successes: ok.len(),
        coverage: ok.len() as f64 / n_samples as f64,
        max_start_distance: fold(|r| r.start_distance, 0.0, f64::max),
        min_period: fold(|r| r.period, f64::INFINITY, f64::min),
        max_period: fold(|r| r.period, 0.0, f64::max),
        max_closure: fold(|r| r.closure_residual, 0.0, f64::max),
        oracle_matched: records.iter().filter(|r| r.oracle_match == Some(true)).count(),
        wall_time_s: start.elapsed().as_secs_f64(),
        records,
    })
}

/// Sample grid on the weak-unstable leaf `x·a(τ)·n⁻(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafGrid {
    pub tau_max: f64,
    pub tau_step: f64,
    /// `|u|` runs log-uniformly over `[u_min, u_max]`, both signs, plus `u = 0`.
    pub u_min: f64,
    pub u_max: f64,
    pub u_per_sign: usize,
}

impl Default for LeafGrid {
    fn default() -> Self {
        LeafGrid { tau_max: 30.0, tau_step: 0.1, u_min: 1e-2, u_max: 1e2, u_per_sign: 24 }
    }
}

impl LeafGrid {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau_max >= 0.0
            && self.tau_max <= 100.0
            && self.tau_step > 0.0
            && self.u_min > 0.0
            && self.u_max >= self.u_min
            && self.u_per_sign >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid leaf grid {self:?}")))
        }
    }

    fn u_values(&self) -> Vec<f64> {
        let n = self.u_per_sign;
        let (lo, hi) = (self.u_min.ln(), self.u_max.ln());
        let mut us = vec![0.0];
        for i in 0..n {
            let m = if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }.exp();
            us.push(m);
            us.push(-m);
        }
        us
    }
}

/// Frames forming an `ε`-net of the window in chart distance: steps
/// `√2·ε·y` in `re`, `√2·ε` in `ln y` and in angle.
pub fn epsilon_net(window: &Window, epsilon: f64) -> Result<Vec<FrameElement>> {
    window.validate()?;
    let h = std::f64::consts::SQRT_2 * epsilon;
    let cells = |len: f64, step: f64| ((len / step).ceil().max(1.0)) as usize;
    let centers = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect()
    };
    let mut net = Vec::new();
    for ly in centers(window.im_lo.ln(), window.im_hi.ln(), cells(window.im_hi.ln() - window.im_lo.ln(), h)) {
        let y = ly.exp();
        for x in centers(window.re_lo, window.re_hi, cells(window.re_hi - window.re_lo, h * y)) {
            for th in centers(window.angle_lo, window.angle_hi, cells(window.angle_hi - window.angle_lo, h)) {
                net.push(UnitTangent::new(HalfPlanePoint { re: x, im: y }, th).to_frame());
            }
        }
    }
    if net.len() > 1_000_000 {
        return Err(Error::InvalidArgument(format!("epsilon-net of {} points", net.len())));
    }
    Ok(net)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafReport {
    pub epsilon: f64,
    pub net_points: usize,
    pub leaf_samples: usize,
    pub covered: usize,
    pub coverage: f64,
    /// Coverage by the orbit segment alone (`u = 0`).
    pub control_covered: usize,
    pub control_coverage: f64,
    /// Largest residual of the leaf reparametrization identity.
    pub audit_residual: f64,
    /// Net points covered by the leaf of a point `y` on the leaf of `x` but
    /// not by the leaf of `x`.
    pub inclusion_violations: usize,
}

/// Reduced leaf samples `x·a(τ)·n⁻(u)` over the grid; with `orbit_only`
/// just the `u = 0` column.
pub fn leaf_samples(x: &FrameElement, grid: &LeafGrid, orbit_only: bool) -> Result<Vec<FrameElement>> {
    grid.validate()?;
    let us = if orbit_only { vec![0.0] } else { grid.u_values() };
    let n = (grid.tau_max / grid.tau_step).round() as usize;
    let a = FrameElement::diag(grid.tau_step);
    let mut g = reduce_frame(x).frame;
    let mut out = Vec::with_capacity((n + 1) * us.len());
    for k in 0..=n {
        if k > 0 {
            g = reduce_frame(&g.compose(&a)).frame;
        }
        for &u in &us {
            out.push(if u == 0.0 { g } else { reduce_frame(&g.compose(&FrameElement::lower(u))).frame });
        }
    }
    Ok(out)
}

fn covered_mask(net: &[Target], samples: &[FrameElement], epsilon: f64, exec: Execution) -> Vec<bool> {
    let bases: Vec<HalfPlanePoint> = samples.iter().map(|s| s.base()).collect();
    let cb = cosh_bound(epsilon);
    exec.map_indexed(net.len(), |i| samples.iter().zip(&bases).any(|(s, b)| net[i].within(s, b, epsilon, cb)))
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&c| c).count()
}

/// Largest chart residual of `y·a(τ)·n⁻(u) = x·a(τ₁+τ)·n⁻(u₁e^τ + u)` for
/// `y = x·a(τ₁)·n⁻(u₁)` over a small parameter grid.
pub fn leaf_identity_residual(x: &FrameElement, tau1: f64, u1: f64) -> f64 {
    let y = x.compose(&FrameElement::diag(tau1)).compose(&FrameElement::lower(u1));
    let mut worst: f64 = 0.0;
    for i in 0..=10 {
        let tau = 0.5 * i as f64;
        for j in -5..=5 {
            let u = 0.2 * j as f64;
            let lhs = y.compose(&FrameElement::diag(tau)).compose(&FrameElement::lower(u));
            let rhs = x.compose(&FrameElement::diag(tau1 + tau)).compose(&FrameElement::lower(u1 * tau.exp() + u));
            worst = worst.max(chart_dist(&lhs, &rhs));
        }
    }
    worst
}

/// Fraction of an `ε`-net of the window within `ε` of sampled points of the
/// weak-unstable leaf of `x`, with the orbit-only control.
pub fn leaf_density_experiment(
    x: &FrameElement,
    window: &Window,
    epsilon: f64,
    grid: &LeafGrid,
    exec: Execution,
) -> Result<LeafReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0, 1)")));
    }
    let net: Vec<Target> = epsilon_net(window, epsilon)?.iter().map(Target::new).collect();
    let leaf = leaf_samples(x, grid, false)?;
    let orbit = leaf_samples(x, grid, true)?;
    let covered = covered_mask(&net, &leaf, epsilon, exec);
    let control_covered = count(&covered_mask(&net, &orbit, epsilon, exec));
    // y = x·a(τ₁)·n⁻(u₁) shares the leaf of x
    let (tau1, u1) = (1.3, 0.7);
    let y = x.compose(&FrameElement::diag(tau1)).compose(&FrameElement::lower(u1));
    let y_covered = covered_mask(&net, &leaf_samples(&y, grid, false)?, epsilon, exec);
    let inclusion_violations = y_covered.iter().zip(&covered).filter(|&(&yc, &xc)| yc && !xc).count();
    let covered = count(&covered);
    Ok(LeafReport {
        epsilon,
        net_points: net.len(),
        leaf_samples: leaf.len(),
        covered,
        coverage: covered as f64 / net.len() as f64,
        control_covered,
        control_coverage: control_covered as f64 / net.len() as f64,
        audit_residual: leaf_identity_residual(x, tau1, u1),
        inclusion_violations,
    })
}

/// Search limits for [`transitivity_experiment`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitivityBudget {
    pub t_max: f64,
    pub dt: f64,
    /// Leaf points examined per time step.
    pub max_leaf_points: usize,
}

impl Default for TransitivityBudget {
    fn default() -> Self {
        TransitivityBudget { t_max: 200.0, dt: 0.05, max_leaf_points: 2048 }
    }
}

/// A point `p = U·n⁻(v)` of the first ball whose orbit meets the second ball
/// at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingRecord {
    pub p: FrameElement,
    pub v: f64,
    pub t: f64,
    pub start_distance: f64,
    pub target_distance: f64,
    /// Target distance recomputed by flowing `p` afresh.
    pub replay_distance: f64,
}

/// Recomputes the distance from `φ^t(p)` to `target`.
pub fn replay_hit(p: &FrameElement, t: f64, target: &FrameElement) -> f64 {
    quotient_dist(&flow_reduced(p, t, 0.25), target)
}

/// Finds `p` within `0.9·radius` of `u` whose forward orbit comes within
/// `radius` of `v` by time `t_max`.
///
/// Points `U·n⁻(w·e^{-t})` all flow to `U·a(t)·n⁻(w)` at time `t`, so each
/// time step scans a segment of the unstable horocycle through `φ^t(U)`.
pub fn transitivity_experiment(
    u: &FrameElement,
    v: &FrameElement,
    radius: f64,
    budget: &TransitivityBudget,
) -> Result<HittingRecord> {
    if !(radius > 0.0 && radius < 1.0) {
        return Err(Error::InvalidArgument(format!("radius {radius} outside (0, 1)")));
    }
    if !(budget.t_max >= 0.0 && budget.t_max <= crate::flow::MAX_FLOW_TIME && budget.dt > 0.0 && budget.max_leaf_points > 0) {
        return Err(Error::InvalidArgument(format!("invalid transitivity budget {budget:?}")));
    }
    let target = Target::new(v);
    let goal = 0.95 * radius;
    let spacing = 0.25 * radius;
    let half_cap = 0.5 * spacing * budget.max_leaf_points as f64;
    let a = FrameElement::diag(budget.dt);
    let steps = (budget.t_max / budget.dt).floor() as usize;
    // g ≡ u·a(t)
    let mut g = reduce_frame(u).frame;
    for k in 0..=steps {
        let t = k as f64 * budget.dt;
        if k > 0 {
            g = reduce_frame(&g.compose(&a)).frame;
        }
        let w_max = (0.9 * radius * t.exp()).min(half_cap);
        let n = (w_max / spacing).floor() as i64;
        let mut best: Option<(f64, f64)> = None;
        for j in -n..=n {
            let w = if n == 0 { 0.0 } else { w_max * j as f64 / n as f64 };
            let q = reduce_frame(&g.compose(&FrameElement::lower(w))).frame;
            let d = target.distance(&q);
            if d <= goal && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, w));
            }
        }
        if let Some((d, w)) = best {
            let vv = w * (-t).exp();
            let p = u.compose(&FrameElement::lower(vv));
            let replay = replay_hit(&p, t, v);
            if replay <= radius {
                return Ok(HittingRecord {
                    p,
                    v: vv,
                    t,
                    start_distance: chart_dist(u, &p),
                    target_distance: d,
                    replay_distance: replay,
                });
            }
        }
    }
    Err(Error::BudgetExhausted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{axis_frame, DeckElement};

    fn base_frame(re: f64, im: f64, angle: f64) -> FrameElement {
        UnitTangent::new(HalfPlanePoint { re, im }, angle).to_frame()
    }

    #[test]
    fn reduced_flow_matches_direct_flow() {
        let g = base_frame(0.1, 1.4, 0.8);
        for t in [0.0, 0.7, 3.0, 9.0] {
            let direct = g.compose(&FrameElement::diag(t));
            assert!(quotient_dist(&flow_reduced(&g, t, 0.3), &direct) < 1e-9);
        }
    }

    #[test]
    fn net_covers_window() {
        let w = Window::strip(1.0, 2.0).unwrap();
        let eps = 0.25;
        let net: Vec<Target> = epsilon_net(&w, eps).unwrap().iter().map(Target::new).collect();
        let mut rng = sample_rng(3, 0);
        for _ in 0..300 {
            let x = reduce_frame(&w.sample(&mut rng)).frame;
            let b = x.base();
            assert!(net.iter().any(|t| t.within(&x, &b, eps, cosh_bound(eps))));
        }
    }

    #[test]
    fn target_filter_agrees_with_quotient_distance() {
        let v = base_frame(0.2, 1.3, 2.0);
        let t = Target::new(&v);
        let mut rng = sample_rng(5, 1);
        let w = Window::strip(1.0, 3.0).unwrap();
        for _ in 0..500 {
            let x = reduce_frame(&w.sample(&mut rng)).frame;
            let d = quotient_dist(&x, &v);
            assert!((t.distance(&x) - d).abs() < 1e-12);
            for r in [0.1, 0.3, 0.6] {
                assert_eq!(t.within(&x, &x.base(), r, cosh_bound(r)), d <= r);
            }
        }
    }

    #[test]
    fn leaf_identity() {
        assert!(leaf_identity_residual(&base_frame(-0.3, 1.2, 4.0), 1.3, 0.7) < 1e-11);
    }

    #[test]
    fn density_on_the_shortest_orbit() {
        let (g, _) = axis_frame(&DeckElement::new(2, 1, 1, 1).unwrap()).unwrap();
        let w = Window::point(&g);
        let r = density_experiment(&w, 0.2, 1, 0, &FinderBudget::default(), Execution::Sequential).unwrap();
        assert_eq!(r.successes, 1);
        assert!(r.max_start_distance < 1e-6);
        assert_eq!(r.records[0].word.as_deref(), Some("RL"));
        assert_eq!(r.records[0].oracle_match, Some(true));
    }

    #[test]
    fn density_is_mode_independent() {
        let w = Window::strip(1.0, 2.0).unwrap();
        let b = FinderBudget::default();
        let s = density_experiment(&w, 0.2, 6, 11, &b, Execution::Sequential).unwrap();
        let p = density_experiment(&w, 0.2, 6, 11, &b, Execution::Parallel).unwrap();
        assert_eq!(s.records, p.records);
        assert!(density_experiment(&Window::strip(0.5, 2.0).unwrap(), 0.2, 1, 0, &b, Execution::Sequential).is_err());
    }

    #[test]
    fn hitting_self_and_nearby() {
        let u = base_frame(0.1, 1.5, 1.0);
        let b = TransitivityBudget::default();
        let r = transitivity_experiment(&u, &u, 0.1, &b).unwrap();
        assert_eq!(r.t, 0.0);
        let v = base_frame(0.2, 1.3, 2.5);
        let r = transitivity_experiment(&u, &v, 0.1, &b).unwrap();
        assert!(r.start_distance <= 0.09 + 1e-12);
        assert!(r.replay_distance <= 0.1);
        assert!((replay_hit(&r.p, r.t, &v) - r.replay_distance).abs() < 1e-12);
    }
}
