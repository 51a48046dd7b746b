//! Shadowing of return segments and the periodic-orbit finder.
//!
//! A return of `x₀` is a deck element `κ` and a time `t₀` with
//! `κ·x₀·a(t₀)` close to `x₀` in the plane. The forward iteration brackets
//! the returned point against the current iterate, pulls the unstable-leaf
//! representative back by `t₀`, and converges to a point `y` whose forward
//! orbit shadows the repeated segment. The backward iteration is the same
//! machinery applied to the time-reversed flow. Bracketing the two limits
//! gives a point on the closed geodesic of `γ = κ⁻¹`.
//!
//! All iterations run in coordinates relative to `x₀`; the bracket is
//! left-invariant, so this only removes rounding from large entries.

use serde::{Deserialize, Serialize};

use crate::bracket::{bowen_bracket, local_product_constants, nak_decompose, nak_entries, BracketParams};
use crate::error::{Error, Result};
use crate::flow::AnosovConstants;
use crate::frame::{chart_dist, flip, rel_dist, FrameElement};
use crate::lattice::{
    axis_frame, classify, injectivity_radius, quotient_dist, reduce_frame, reduced_quotient_dist,
    translation_length, DeckElement, ElementKind, BULK_RADIUS,
};
use crate::par::sample_rng;

/// Convergence threshold on successive iterate gaps.
pub const CONVERGENCE_GAP: f64 = 1e-12;
/// Default number of shadowed segment repetitions checked.
pub const DEFAULT_K_MAX: usize = 20;
/// Default number of flow-time grid points per segment.
pub const DEFAULT_GRID_POINTS: usize = 32;
/// Largest chart distance from the axis accepted for the bracketed limit.
pub const AXIS_TOL: f64 = 1e-7;
/// Closure tolerance of a periodic-orbit result.
pub const CLOSURE_TOL: f64 = 1e-9;
/// Agreement required between the shadowed and the algebraic period.
pub const PERIOD_TOL: f64 = 1e-8;

/// Constants of one shadowing run. `k` is the uniform bound on the
/// P-function and `l` the subdivision count used for the precision `η/(4l)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowParameters {
    pub epsilon: f64,
    pub delta: f64,
    pub eta: f64,
    pub t0: f64,
    pub c: f64,
    pub lambda: f64,
    pub k: f64,
    pub l: u32,
}

impl ShadowParameters {
    /// Checks every structural inequality; returns the first violated one.
    pub fn validate(&self) -> Result<()> {
        let k = lemma_bound_k(self.t0, self.lambda);
        let checks: [(bool, &str); 7] = [
            (self.t0 > 2.0 * self.eta, "t0 > 2 eta"),
            (self.c * self.k * self.eta <= self.epsilon / 3.0 * (1.0 + 1e-12), "C K eta <= epsilon / 3"),
            (self.c * self.lambda.powf(self.t0) * self.eta < self.delta / 3.0, "C lambda^t0 eta < delta / 3"),
            (self.delta / 3.0 < self.epsilon, "delta / 3 < epsilon"),
            (self.eta / (self.l as f64) < self.delta, "eta / l < delta"),
            ((self.k - k).abs() <= 1e-12 * k, "K = 2 + L"),
            (self.eta > 0.0 && self.delta > 0.0 && self.l >= 1, "positivity"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, name)) => Err(Error::InfeasibleParameters(format!("{name} fails for {self:?}"))),
            None => Ok(()),
        }
    }

    /// Precision at which the shadowing segments are matched.
    pub fn precision(&self) -> f64 {
        self.eta / (4.0 * self.l as f64)
    }
}

/// `λ^t + λ^{t₀-t} + Σ_{j=1}^{m} λ^{t + j·t₀ + c₁ + … + c_j}`.
pub fn p_function(t: f64, t0: f64, lambda: f64, c_seq: &[f64], m: usize) -> f64 {
    let mut total = lambda.powf(t) + lambda.powf(t0 - t);
    let mut partial = 0.0;
    for j in 1..=m {
        partial += c_seq.get(j - 1).copied().unwrap_or(0.0);
        total += lambda.powf(t + j as f64 * t0 + partial);
    }
    total
}

/// Uniform bound `K = 2 + λ^{t₀/2} / (1 - λ^{t₀/2})` of the P-function.
pub fn lemma_bound_k(t0: f64, lambda: f64) -> f64 {
    let h = lambda.powf(0.5 * t0);
    2.0 + h / (1.0 - h)
}

/// `f(t) = ε (1 - λ^{t/2}) / (2 - λ^{t/2})`, increasing to `ε/2`.
pub fn f_map(t: f64, epsilon: f64, lambda: f64) -> f64 {
    let h = lambda.powf(0.5 * t);
    epsilon * (1.0 - h) / (2.0 - h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaAudit {
    pub trials: usize,
    pub max_ratio: f64,
    pub max_p: f64,
    pub k: f64,
}

/// Randomized audit of `P ≤ K` over admissible `(t, m, c)` with `|c_i| < η`
/// and `t₀ > 2η`.
pub fn audit_lemma_bound(t0: f64, lambda: f64, trials: usize, m_max: usize, seed: u64) -> LemmaAudit {
    use rand::Rng;
    let k = lemma_bound_k(t0, lambda);
    let mut rng = sample_rng(seed, 0);
    let mut max_p = 0.0f64;
    let mut max_ratio = 0.0f64;
    for _ in 0..trials {
        let eta = rng.random_range(0.0..0.5 * t0);
        let m = rng.random_range(0..=m_max);
        let c: Vec<f64> = (0..m).map(|_| rng.random_range(-eta..=eta) * (1.0 - 1e-12)).collect();
        let t = rng.random_range(0.0..=t0);
        let p = p_function(t, t0, lambda, &c, m);
        max_p = max_p.max(p);
        max_ratio = max_ratio.max(p / k);
    }
    LemmaAudit { trials, max_ratio, max_p, k }
}

/// Parameter chain at a point with injectivity scale `scale = inj/r₀`:
/// `(δ, η)` from the local product structure, `η` capped by `ε/(3CK)` and by
/// `δ/(3Cλ^{t₀})`, and `l` from the subdivision rule.
pub fn derive_parameters(epsilon: f64, scale: f64, t0: f64, constants: AnosovConstants) -> Result<ShadowParameters> {
    if !(epsilon > 0.0) || !(t0 > 0.0) || !(scale > 0.0) {
        return Err(Error::InfeasibleParameters(format!("epsilon {epsilon}, t0 {t0}")));
    }
    let (c, lambda) = (constants.c, constants.lambda);
    let delta = epsilon * scale / crate::bracket::DELTA_DIVISOR;
    let eta_lpc = epsilon * scale / crate::bracket::ETA_DIVISOR;
    let k = lemma_bound_k(t0, lambda);
    let mut eta = eta_lpc.min(epsilon / (3.0 * c * k));
    let cap = delta / (3.0 * c * lambda.powf(t0));
    if eta >= cap {
        eta = 0.99 * cap;
    }
    if !(t0 > 2.0 * eta) {
        eta = eta.min(0.49 * t0);
    }
    let mut l = ((eta / delta).ceil() as u32 + 1).max(2);
    while !continuity_audit(eta, l) {
        l += 1;
    }
    let p = ShadowParameters { epsilon, delta, eta, t0, c, lambda, k, l };
    p.validate()?;
    Ok(p)
}

/// Sampled check that points `η/l` apart stay within `η` under the flow for
/// `|r| ≤ 3η`.
fn continuity_audit(eta: f64, l: u32) -> bool {
    use rand::Rng;
    let mut rng = sample_rng(0x5eed, l as usize);
    let step = eta / l as f64;
    (0..64).all(|_| {
        let x = crate::bracket::sample_ball(&FrameElement::IDENTITY, 1.0, &mut rng);
        let w = crate::bracket::sample_ball(&x, step, &mut rng);
        let r = rng.random_range(-3.0 * eta..=3.0 * eta);
        let d = chart_dist(&x.compose(&FrameElement::diag(r)), &w.compose(&FrameElement::diag(r)));
        d <= eta
    })
}

/// Parameters for `ε` at `x₀` with the default constants. The target must
/// not exceed the injectivity radius at `x₀`.
pub fn select_parameters(epsilon: f64, x0: &FrameElement, t0_hint: f64) -> Result<ShadowParameters> {
    let limit = injectivity_radius(x0);
    if epsilon > limit {
        return Err(Error::EpsilonTooLarge { epsilon, limit });
    }
    let scale = limit / BULK_RADIUS;
    let (_, eta_lpc) = local_product_constants(x0, epsilon);
    let t0 = t0_hint.max(2.0 * eta_lpc + 1e-3);
    derive_parameters(epsilon, scale, t0, AnosovConstants::default())
}

/// Smallest `ε` whose parameter chain admits brackets of size `magnitude`
/// and a return at chart distance `distance`, with the resulting parameters.
pub fn fit_return(x0: &FrameElement, t0: f64, magnitude: f64, distance: f64) -> Result<ShadowParameters> {
    let constants = AnosovConstants::default();
    let scale = injectivity_radius(x0) / BULK_RADIUS;
    let k = lemma_bound_k(t0, constants.lambda);
    let dd = crate::bracket::DELTA_DIVISOR;
    let need = [
        magnitude * crate::bracket::ETA_DIVISOR / scale,
        magnitude * 3.0 * constants.c * k,
        magnitude * 3.0 * dd * constants.c * constants.lambda.powf(t0) / (0.99 * scale),
        3.0 * dd * distance / scale,
        1e-12,
    ];
    let epsilon = 1.01 * need.iter().copied().fold(0.0, f64::max);
    let p = derive_parameters(epsilon, scale, t0, constants)?;
    if p.eta < magnitude || distance >= p.delta / 3.0 {
        return Err(Error::InfeasibleParameters(format!("fit failed for magnitude {magnitude}")));
    }
    Ok(p)
}

/// A return of a point to itself: `deck·x·a(t0)` is `distance` away from `x`
/// in the chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Return {
    pub t0: f64,
    pub deck: DeckElement,
    pub distance: f64,
}

impl Return {
    /// `x⁻¹·κ·x·a(t₀)`, the return mismatch in coordinates relative to `x`.
    pub fn mismatch(&self, x: &FrameElement) -> FrameElement {
        let moved = self.deck.act(x).compose(&FrameElement::diag(self.t0));
        FrameElement::renormalized(x.relative(&moved))
    }

    /// The same return seen from the time-reversed flow at the returned point.
    fn reversed(&self) -> Return {
        Return { t0: self.t0, deck: self.deck.inverse(), distance: self.distance }
    }
}

/// First sampled time in `[t_min, t_max]` at which the orbit of `x0` is back
/// within `delta/3` of `x0` in the quotient. The orbit is advanced in steps
/// of `dt` from the reduced frame, so the deck bookkeeping stays exact.
pub fn detect_recurrence(x0: &FrameElement, delta: f64, t_max: f64, dt: f64) -> Result<Return> {
    if !(delta > 0.0) || !(dt > 0.0) || !(t_max > 0.0) || t_max > 1e4 {
        return Err(Error::InvalidArgument(format!("delta {delta}, dt {dt}, t_max {t_max}")));
    }
    let radius = delta / 3.0;
    let r0 = reduce_frame(x0);
    let step = FrameElement::diag(dt);
    let mut current = r0.frame;
    let mut deck = r0.deck.without_word();
    let mut left = false;
    let mut n = 0usize;
    loop {
        n += 1;
        let t = n as f64 * dt;
        if t > t_max {
            return Err(Error::NoReturn);
        }
        let r = reduce_frame(&current.compose(&step));
        current = r.frame;
        deck = r.deck.without_word().compose(&deck)?;
        let (d, w) = reduced_quotient_dist(&current, &r0.frame);
        // the orbit must leave the ball before a return counts
        if d >= radius {
            left = true;
            continue;
        }
        if !left {
            continue;
        }
        // κ·x0·a(t) ≈ x0 with κ = κ0⁻¹·w·deck
        let kappa = r0.deck.inverse().without_word().compose(&w.without_word())?.compose(&deck)?;
        if kappa.is_identity() {
            continue;
        }
        return Ok(Return { t0: t, deck: kappa, distance: d });
    }
}

/// One step of the forward iteration. Frames are absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowIterate {
    pub n: usize,
    pub y: FrameElement,
    pub theta: FrameElement,
    pub z: FrameElement,
    /// Transition time with `φ^{s}(θ) = z`.
    pub s: f64,
    /// Stable parameter of `z` relative to the previous iterate.
    pub sigma: f64,
    /// Gap `chart_dist(y_n, y_{n-1})`.
    pub gap: f64,
}

/// Relative-coordinate forward iteration from `y0 = x0·n⁻(u0)`.
fn iterate_relative(
    h: &FrameElement,
    t0: f64,
    params: &ShadowParameters,
    n_steps: usize,
    u0: f64,
) -> Result<Vec<(f64, BracketParams, f64)>> {
    let decay = (-t0).exp();
    let mut u = u0;
    let mut out = Vec::with_capacity(16);
    for n in 1..=n_steps {
        // z_n = [x1, y_{n-1}] with x1 = h and y_{n-1} = n⁻(u)
        let y_prev = FrameElement::lower(u);
        let b = bowen_bracket(h, &y_prev, params.eta)?;
        let v = -b.params.nu * b.params.c.exp();
        let u_next = v * decay;
        let distance = u_next.abs();
        if distance > params.delta / 3.0 {
            return Err(Error::LeftDeltaBall { step: n, distance, limit: params.delta / 3.0 });
        }
        let gap = (u_next - u).abs();
        out.push((u_next, b.params, gap));
        u = u_next;
        if gap < CONVERGENCE_GAP {
            return Ok(out);
        }
    }
    let gap = out.last().map(|o| o.2).unwrap_or(f64::INFINITY);
    Err(Error::NotConverged { gap, steps: n_steps })
}

/// Forward shadow iteration of the return `ret` of `x0`, starting at `y₀ = x0`.
/// Stops at convergence (gap below `1e-12`).
pub fn shadow_iteration(x0: &FrameElement, ret: &Return, params: &ShadowParameters, n_steps: usize) -> Result<Vec<ShadowIterate>> {
    shadow_iteration_from(x0, ret, params, n_steps, 0.0)
}

/// As [`shadow_iteration`], starting from `y₀ = x0·n⁻(u0)`.
pub fn shadow_iteration_from(
    x0: &FrameElement,
    ret: &Return,
    params: &ShadowParameters,
    n_steps: usize,
    u0: f64,
) -> Result<Vec<ShadowIterate>> {
    let h = ret.mismatch(x0);
    let steps = iterate_relative(&h, ret.t0, params, n_steps, u0)?;
    let x1 = x0.compose(&h);
    let mut prev = u0;
    let mut out = Vec::with_capacity(steps.len());
    for (n, (u, b, gap)) in steps.into_iter().enumerate() {
        let z = x0.compose(&FrameElement::lower(prev)).compose(&FrameElement::upper(b.sigma));
        let theta = x1.compose(&FrameElement::lower(-b.nu * b.c.exp()));
        let y = x0.compose(&FrameElement::lower(u));
        // (ec11): d(φ^t y_n, φ^t x0) = |u|e^t must stay below Cλ^{t0-t}η
        let worst = u.abs() * ret.t0.exp() / (params.c * params.eta);
        if worst > 1.0 + 1e-9 && u.abs() > 1e-15 {
            return Err(Error::VerificationFailed { k: n + 1, t: ret.t0, residual: u.abs(), bound: params.c * params.eta * (-ret.t0).exp() });
        }
        out.push(ShadowIterate { n: n + 1, y, theta, z, s: -b.c, sigma: b.sigma, gap });
        prev = u;
    }
    Ok(out)
}

/// How the `k`-th repetition of a shadowing orbit is located.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OrbitModel {
    /// Flow `y` directly; only meaningful while `e^{time}` stays moderate.
    Direct,
    /// Use the exact return relation `deck·y·a(period) = y·n⁺(stable_offset)`,
    /// which gives `φ^{k·period}(y) ≡ y·n⁺(stable_offset·Σ_{j<k} e^{-j·period})`.
    Return { deck: DeckElement, period: f64, stable_offset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowCheck {
    pub k: usize,
    pub t: f64,
    pub residual: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowReport {
    pub checks: Vec<ShadowCheck>,
    pub max_residual: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// Equispaced grid of `n` points on `[0, t0]`.
pub fn default_t_grid(t0: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0];
    }
    (0..n).map(|i| t0 * i as f64 / (n - 1) as f64).collect()
}

/// Piecewise shadowing check: `d(φ^t(φ^{k·t0 + s_1 + … + s_k}(y)), φ^t(x0)) ≤ ε`
/// for every grid `t` and `k ≤ k_max`. The backward direction applies the
/// same test to the time-reversed flow.
#[allow(clippy::too_many_arguments)]
pub fn verify_piecewise_shadow(
    y: &FrameElement,
    x0: &FrameElement,
    t0: f64,
    transitions: &[f64],
    epsilon: f64,
    k_max: usize,
    t_grid: &[f64],
    model: &OrbitModel,
    direction: Direction,
) -> ShadowReport {
    let (y, x0) = match direction {
        Direction::Forward => (*y, *x0),
        Direction::Backward => (y.compose(&flip()), x0.compose(&flip())),
    };
    let mut checks = Vec::with_capacity((k_max + 1) * t_grid.len());
    let mut shift = 0.0;
    for k in 0..=k_max {
        if k > 0 {
            shift += t0 + transitions.get(k - 1).copied().unwrap_or(0.0);
        }
        let start = match model {
            OrbitModel::Direct => y.compose(&FrameElement::diag(shift)),
            OrbitModel::Return { period, stable_offset, .. } => {
                let sum: f64 = (0..k).map(|j| (-(j as f64) * period).exp()).sum();
                y.compose(&FrameElement::upper(stable_offset * sum))
            }
        };
        for &t in t_grid {
            let a = FrameElement::diag(t);
            let residual = quotient_dist(&start.compose(&a), &x0.compose(&a));
            checks.push(ShadowCheck { k, t, residual, passed: residual <= epsilon });
        }
    }
    let max_residual = checks.iter().map(|c| c.residual).fold(0.0, f64::max);
    let passed = checks.iter().all(|c| c.passed);
    ShadowReport { checks, max_residual, passed }
}

/// Converged shadow of a return segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowOrbit {
    pub y: FrameElement,
    /// Limit transition time.
    pub s: f64,
    pub t0: f64,
    /// Limit stable offset: `κ·y·a(t0 + s) = y·n⁺(sigma)`.
    pub sigma: f64,
    pub deck: DeckElement,
    pub k_max: usize,
    /// `(k, max over the grid)` of the shadowing residual.
    pub residuals: Vec<(usize, f64)>,
    pub iterations: usize,
}

impl ShadowOrbit {
    pub fn period(&self) -> f64 {
        self.t0 + self.s
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.1).fold(0.0, f64::max)
    }
}

/// Limit of a converged iteration and the shadowing check against `x0` for
/// `k ≤ k_max` with bound `ε/3`.
pub fn shadow_limit(
    x0: &FrameElement,
    ret: &Return,
    iterates: &[ShadowIterate],
    params: &ShadowParameters,
    k_max: usize,
) -> Result<ShadowOrbit> {
    let last = iterates.last().ok_or(Error::NotConverged { gap: f64::INFINITY, steps: 0 })?;
    if last.gap >= CONVERGENCE_GAP {
        return Err(Error::NotConverged { gap: last.gap, steps: iterates.len() });
    }
    let grid = default_t_grid(ret.t0, DEFAULT_GRID_POINTS);
    let model = OrbitModel::Return { deck: ret.deck.clone(), period: ret.t0 + last.s, stable_offset: last.sigma };
    let transitions = vec![last.s; k_max];
    let report = verify_piecewise_shadow(
        &last.y,
        x0,
        ret.t0,
        &transitions,
        params.epsilon / 3.0 + 1e-9,
        k_max,
        &grid,
        &model,
        Direction::Forward,
    );
    let mut residuals = vec![0.0f64; k_max + 1];
    for c in &report.checks {
        residuals[c.k] = residuals[c.k].max(c.residual);
    }
    if let Some(bad) = report.checks.iter().find(|c| !c.passed) {
        return Err(Error::VerificationFailed { k: bad.k, t: bad.t, residual: bad.residual, bound: params.epsilon / 3.0 });
    }
    Ok(ShadowOrbit {
        y: last.y,
        s: last.s,
        t0: ret.t0,
        sigma: last.sigma,
        deck: ret.deck.clone(),
        k_max,
        residuals: residuals.into_iter().enumerate().collect(),
        iterations: iterates.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub unique: bool,
    pub forward_max: f64,
    pub backward_max: f64,
    pub bracket: Option<BracketParams>,
    pub transition_gap: f64,
}

/// Two points shadowing the same segment must coincide: both stay `η`-close
/// under the flow in both directions, so they lie on each other's local
/// strong-stable and center-unstable leaves, and the bracket coordinates of
/// the pair vanish.
#[allow(clippy::too_many_arguments)]
pub fn uniqueness_check(
    y1: &FrameElement,
    y2: &FrameElement,
    params: &ShadowParameters,
    t0: f64,
    transitions1: &[f64],
    transitions2: &[f64],
    t_grid: &[f64],
) -> Result<UniquenessReport> {
    let _ = t0;
    let mut forward_max = 0.0f64;
    let mut backward_max = 0.0f64;
    for &t in t_grid {
        let f = FrameElement::diag(t);
        let b = FrameElement::diag(-t);
        forward_max = forward_max.max(quotient_dist(&y1.compose(&f), &y2.compose(&f)));
        backward_max = backward_max.max(quotient_dist(&y1.compose(&b), &y2.compose(&b)));
    }
    let transition_gap = transitions1
        .iter()
        .zip(transitions2)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if forward_max > params.eta || backward_max > params.eta {
        return Ok(UniquenessReport { unique: false, forward_max, backward_max, bracket: None, transition_gap });
    }
    let b = crate::bracket::bracket_in_quotient(y2, y1, f64::INFINITY)?;
    let unique = b.params.max_abs() <= 1e-9;
    Ok(UniquenessReport { unique, forward_max, backward_max, bracket: Some(b.params), transition_gap })
}

/// Reruns the forward shadow of a finder outcome from the perturbed start
/// `n⁻(u0)` and checks that both limits coincide.
pub fn dual_run_uniqueness(outcome: &FinderOutcome, u0: f64, max_iterations: usize) -> Result<UniquenessReport> {
    let a = shadow_iteration(&outcome.base, &outcome.ret, &outcome.params, max_iterations)?;
    let b = shadow_iteration_from(&outcome.base, &outcome.ret, &outcome.params, max_iterations, u0)?;
    let (ya, yb) = match (a.last(), b.last()) {
        (Some(ya), Some(yb)) => (ya, yb),
        _ => return Err(Error::NotConverged { gap: f64::INFINITY, steps: 0 }),
    };
    for it in [ya, yb] {
        if it.gap >= CONVERGENCE_GAP {
            return Err(Error::NotConverged { gap: it.gap, steps: max_iterations });
        }
    }
    let grid = default_t_grid(outcome.ret.t0, 8);
    uniqueness_check(&ya.y, &yb.y, &outcome.params, outcome.ret.t0, &[ya.s], &[yb.s], &grid)
}

/// Search limits of the periodic-orbit finder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinderBudget {
    /// Orbit segment `[-half_window, half_window]` searched for closing pairs.
    pub half_window: f64,
    pub dt: f64,
    /// Largest chart distance of a closing pair.
    pub max_pair_distance: f64,
    /// Shortest return time considered.
    pub min_return: f64,
    /// Closing pairs tried before giving up.
    pub max_candidates: usize,
    pub max_iterations: usize,
    pub k_max: usize,
    /// Extra starts tried when no closing pair of `x0` itself qualifies:
    /// `x0·n⁺(±ε/2)` and `x0·n⁻(±ε/2)`, in that order.
    pub restarts: usize,
}

impl Default for FinderBudget {
    fn default() -> Self {
        FinderBudget {
            half_window: 7.0,
            dt: 0.1,
            max_pair_distance: 0.5,
            min_return: 1.0,
            max_candidates: 64,
            max_iterations: 200,
            k_max: DEFAULT_K_MAX,
            restarts: 4,
        }
    }
}

impl FinderBudget {
    pub fn validate(&self) -> Result<()> {
        let ok = self.half_window > 0.0
            && self.half_window <= 8.0
            && self.dt > 0.0
            && self.dt <= self.half_window
            && self.max_pair_distance > 0.0
            && self.max_pair_distance < 1.0
            && self.min_return > 0.0
            && self.max_candidates > 0
            && self.max_iterations > 0
            && self.restarts <= 4;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid finder budget {self:?}")))
        }
    }
}

/// A closing pair on the orbit of `x0`: `deck·x0·a(t_b) ≈ x0·a(t_a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosingPair {
    pub t_a: f64,
    pub t_b: f64,
    pub deck: DeckElement,
    pub distance: f64,
}

/// All closing pairs on the sampled segment, one per deck element, sorted
/// by return time and then distance.
pub fn closing_pairs(x0: &FrameElement, budget: &FinderBudget) -> Result<Vec<ClosingPair>> {
    budget.validate()?;
    let n = (budget.half_window / budget.dt).round() as i64;
    let samples: Vec<(f64, crate::lattice::ReducedFrame)> = (-n..=n)
        .map(|i| {
            let t = i as f64 * budget.dt;
            (t, reduce_frame(&x0.compose(&FrameElement::diag(t))))
        })
        .collect();
    let mut best: std::collections::HashMap<[i64; 4], ClosingPair> = std::collections::HashMap::new();
    for (ia, (ta, ra)) in samples.iter().enumerate() {
        for (tb, rb) in samples.iter().skip(ia + 1) {
            if tb - ta < budget.min_return - 1e-12 {
                continue;
            }
            let (d, w) = reduced_quotient_dist(&rb.frame, &ra.frame);
            if d >= budget.max_pair_distance {
                continue;
            }
            let deck = ra.deck.inverse().without_word().compose(&w.without_word())?.compose(&rb.deck.without_word())?;
            if deck.is_identity() {
                continue;
            }
            let key = deck.projective_key();
            let better = best.get(&key).is_none_or(|p| d < p.distance);
            if better {
                best.insert(key, ClosingPair { t_a: *ta, t_b: *tb, deck, distance: d });
            }
        }
    }
    let mut pairs: Vec<ClosingPair> = best.into_values().collect();
    pairs.sort_by(|p, q| {
        (p.t_b - p.t_a)
            .total_cmp(&(q.t_b - q.t_a))
            .then(p.distance.total_cmp(&q.distance))
            .then(p.deck.projective_key().cmp(&q.deck.projective_key()))
    });
    Ok(pairs)
}

/// Closed orbit near a sample point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbitResult {
    /// Point of the closed orbit closest to the start along the flow.
    pub y: FrameElement,
    /// Period from the shadowing limit.
    pub period: f64,
    /// Deck element closing the orbit: `γ·y = φ^T(y)` in the plane.
    pub gamma: DeckElement,
    pub closure_residual: f64,
    /// `2·arccosh(|tr γ|/2)`.
    pub oracle_period: f64,
    pub start_distance: f64,
}

/// Full record of a finder run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinderOutcome {
    pub result: PeriodicOrbitResult,
    /// Recurrent point the segment starts from.
    pub base: FrameElement,
    pub ret: Return,
    /// Parameters fitted to the return.
    pub params: ShadowParameters,
    /// Parameters selected for the requested `ε` at the start point.
    pub nominal: ShadowParameters,
    pub forward: ShadowOrbit,
    /// Backward shadow, in time-reversed coordinates.
    pub backward: ShadowOrbit,
    pub backward_base: FrameElement,
    /// Distance of the bracketed limit from the axis before projection.
    pub axis_gap: f64,
    pub candidates_tried: usize,
}

/// Closed orbit within `ε` of `x0`; see [`find_periodic_orbit_detailed`].
pub fn find_periodic_orbit(x0: &FrameElement, epsilon: f64, budget: &FinderBudget) -> Result<PeriodicOrbitResult> {
    find_periodic_orbit_detailed(x0, epsilon, budget).map(|o| o.result)
}

/// Searches the orbit segment of `x0` for closing pairs in order of return
/// time, shadows each return forward and backward, brackets the two limits
/// onto the closed orbit of the return deck element, and accepts the first
/// orbit passing every check and within `ε` of `x0`. When none qualifies the
/// search is repeated from nearby starts on the horocycles through `x0`.
pub fn find_periodic_orbit_detailed(x0: &FrameElement, epsilon: f64, budget: &FinderBudget) -> Result<FinderOutcome> {
    let nominal = select_parameters(epsilon, x0, 2.0)?;
    budget.validate()?;
    let offset = 0.5 * epsilon;
    let moves = [
        FrameElement::upper(offset),
        FrameElement::upper(-offset),
        FrameElement::lower(offset),
        FrameElement::lower(-offset),
    ];
    let starts = std::iter::once(*x0).chain(moves.iter().take(budget.restarts).map(|m| x0.compose(m)));
    let mut last_err = Error::NoReturn;
    let mut tried = 0;
    for origin in starts {
        match search_from(&origin, x0, epsilon, budget, &nominal, &mut tried) {
            Ok(outcome) => return Ok(outcome),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

fn search_from(
    origin: &FrameElement,
    x0: &FrameElement,
    epsilon: f64,
    budget: &FinderBudget,
    nominal: &ShadowParameters,
    tried: &mut usize,
) -> Result<FinderOutcome> {
    let pairs = closing_pairs(origin, budget)?;
    if pairs.is_empty() {
        return Err(Error::NoReturn);
    }
    let mut last_err = Error::BudgetExhausted;
    let mut saw_hyperbolic = false;
    for pair in pairs.iter().take(budget.max_candidates) {
        if classify(&pair.deck) != ElementKind::Hyperbolic {
            last_err = Error::NonHyperbolicReturn { trace: pair.deck.trace() };
            continue;
        }
        saw_hyperbolic = true;
        *tried += 1;
        match shadow_pair(origin, x0, pair, epsilon, budget, nominal) {
            Ok(mut outcome) => {
                outcome.candidates_tried = *tried;
                return Ok(outcome);
            }
            Err(e) => last_err = e,
        }
    }
    if !saw_hyperbolic {
        return Err(last_err);
    }
    Err(match last_err {
        Error::NonHyperbolicReturn { .. } => Error::BudgetExhausted,
        e => e,
    })
}

fn shadow_pair(
    origin: &FrameElement,
    x0: &FrameElement,
    pair: &ClosingPair,
    epsilon: f64,
    budget: &FinderBudget,
    nominal: &ShadowParameters,
) -> Result<FinderOutcome> {
    let base = origin.compose(&FrameElement::diag(pair.t_a));
    // remove the flow component of the mismatch so the return has c = 0
    let raw = Return { t0: pair.t_b - pair.t_a, deck: pair.deck.clone(), distance: pair.distance };
    let c = nak_decompose(&raw.mismatch(&base))?.c;
    let t0 = raw.t0 - c;
    if !(t0 > 0.0) {
        return Err(Error::Rejected("non-positive return time".into()));
    }
    let mut ret = Return { t0, deck: pair.deck.clone(), distance: 0.0 };
    let h = ret.mismatch(&base);
    ret.distance = rel_dist(&h.entries());
    let bp = nak_decompose(&h)?;
    let magnitude = 1.5 * bp.sigma.abs().max(bp.nu.abs()) + 1e-9;
    let params = fit_return(&base, t0, magnitude, ret.distance)?;

    let fwd_iter = shadow_iteration(&base, &ret, &params, budget.max_iterations)?;
    let forward = shadow_limit(&base, &ret, &fwd_iter, &params, budget.k_max)?;

    // backward: time-reversed flow from the returned point x1 = base·h
    let backward_base = base.compose(&h).compose(&flip());
    let bret = ret.reversed();
    let bh = bret.mismatch(&backward_base);
    let mut bret = bret;
    bret.distance = rel_dist(&bh.entries());
    let bwd_iter = shadow_iteration(&backward_base, &bret, &params, budget.max_iterations)?;
    let backward = shadow_limit(&backward_base, &bret, &bwd_iter, &params, budget.k_max)?;
    let z = backward.y.compose(&flip().inverse());

    // the closed orbit is W^{cu}(z) ∩ W^{ss}(y)
    let w = bowen_bracket(&z, &forward.y, f64::INFINITY)?.w;
    let gamma = pair.deck.inverse();
    let (g_axis, oracle_period) = axis_frame(&gamma)?;
    let on_axis = nak_entries(&g_axis.relative(&w))?;
    let foot = g_axis.compose(&FrameElement::diag(on_axis.c));
    let axis_gap = chart_dist(&foot, &w);
    if axis_gap > AXIS_TOL {
        return Err(Error::Rejected(format!("bracketed limit {axis_gap:.3e} from the axis")));
    }
    let period = forward.period();
    if (period - oracle_period).abs() > PERIOD_TOL {
        return Err(Error::Rejected(format!("period {period} against {oracle_period}")));
    }

    // slide along the orbit to the point closest to x0 in this lift
    let to_start = on_axis.c - pair.t_a;
    let near = nak_entries(&x0.relative(&g_axis.compose(&FrameElement::diag(to_start))))
        .map_err(|_| Error::Rejected("orbit passes x0 in the opposite direction".into()))?;
    let y = g_axis.compose(&FrameElement::diag(to_start - near.c));
    let start_distance = quotient_dist(&y, x0);
    if start_distance > epsilon {
        return Err(Error::Rejected(format!("start distance {start_distance:.4} exceeds {epsilon}")));
    }
    let closure_residual = closure_residual(&y, period);
    if closure_residual > CLOSURE_TOL {
        return Err(Error::Rejected(format!("closure residual {closure_residual:.3e}")));
    }
    let result = PeriodicOrbitResult { y, period, gamma, closure_residual, oracle_period, start_distance };
    Ok(FinderOutcome {
        result,
        base,
        ret,
        params,
        nominal: *nominal,
        forward,
        backward,
        backward_base,
        axis_gap,
        candidates_tried: 0,
    })
}

/// `quotient_dist(φ^T(y), y)`.
pub fn closure_residual(y: &FrameElement, period: f64) -> f64 {
    quotient_dist(&y.compose(&FrameElement::diag(period)), y)
}

/// Independent re-validation of a finder result against its start point.
pub fn validate_result(x0: &FrameElement, r: &PeriodicOrbitResult, epsilon: f64) -> Result<()> {
    if classify(&r.gamma) != ElementKind::Hyperbolic {
        return Err(Error::NonHyperbolicReturn { trace: r.gamma.trace() });
    }
    let oracle = translation_length(&r.gamma)?;
    if (r.period - oracle).abs() > PERIOD_TOL {
        return Err(Error::Rejected(format!("period {} against oracle {oracle}", r.period)));
    }
    let closure = closure_residual(&r.y, r.period);
    if closure > CLOSURE_TOL {
        return Err(Error::Rejected(format!("closure residual {closure:.3e}")));
    }
    // γ·y = φ^T(y) in the plane
    let lifted = r.gamma.act(&r.y);
    let algebraic = chart_dist(&lifted, &r.y.compose(&FrameElement::diag(r.period)));
    if algebraic > CLOSURE_TOL {
        return Err(Error::Rejected(format!("deck relation residual {algebraic:.3e}")));
    }
    let start = quotient_dist(&r.y, x0);
    if start > epsilon {
        return Err(Error::Rejected(format!("start distance {start:.4} exceeds {epsilon}")));
    }
    Ok(())
}
