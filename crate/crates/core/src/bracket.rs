//! Local product structure. Near the identity every frame factors uniquely
//! as `n⁺(σ)·n⁻(ν)·a(c)`; the bracket `[y, z]` is read off that
//! factorization of `z⁻¹·y`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{chart_dist, flip, FrameElement};
use crate::lattice::{injectivity_radius, quotient_dist_with_deck, DeckElement, BULK_RADIUS};
use crate::par::sample_rng;

/// Smallest admissible `h22` of the sign representative.
pub const CHART_FLOOR: f64 = 1e-8;
/// `δ = ε / DELTA_DIVISOR`, before cusp scaling.
pub const DELTA_DIVISOR: f64 = 12.0;
/// `η = ε / ETA_DIVISOR`, before cusp scaling.
pub const ETA_DIVISOR: f64 = 4.0;

/// Coordinates `(σ, ν, c)` of `h = n⁺(σ)·n⁻(ν)·a(c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BracketParams {
    pub sigma: f64,
    pub nu: f64,
    pub c: f64,
}

impl BracketParams {
    pub fn max_abs(&self) -> f64 {
        self.sigma.abs().max(self.nu.abs()).max(self.c.abs())
    }

    pub fn recompose(&self) -> FrameElement {
        FrameElement::upper(self.sigma)
            .compose(&FrameElement::lower(self.nu))
            .compose(&FrameElement::diag(self.c))
    }
}

/// Which pair of transverse leaves the bracket intersects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Orientation {
    /// `W^{cu}(y) ∩ W^{ss}(z)`.
    #[default]
    CenterUnstable,
    /// `W^{cs}(y) ∩ W^{uu}(z)`, obtained by reversing the flow.
    CenterStable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketResult {
    pub w: FrameElement,
    pub params: BracketParams,
    /// Deck element applied to `y` before bracketing (identity in the plane).
    pub deck: DeckElement,
    /// Larger of the two leaf-membership residuals.
    pub residual: f64,
}

/// Closed-form `n⁺·n⁻·a` factorization.
pub fn nak_decompose(h: &FrameElement) -> Result<BracketParams> {
    nak_entries(&h.entries())
}

pub(crate) fn nak_entries(m: &[f64; 4]) -> Result<BracketParams> {
    let sign = if m[3] < 0.0 { -1.0 } else { 1.0 };
    let (h12, h21, h22) = (sign * m[1], sign * m[2], sign * m[3]);
    if h22 <= CHART_FLOOR {
        return Err(Error::OutsideProductChart { h22 });
    }
    Ok(BracketParams { sigma: h12 / h22, nu: h21 * h22, c: -2.0 * h22.ln() })
}

/// Distance of `g⁻¹·w` from the upper unipotent subgroup.
fn stable_leaf_residual(g: &FrameElement, w: &FrameElement) -> f64 {
    let r = g.relative(w);
    let s = if r[0] + r[3] < 0.0 { -1.0 } else { 1.0 };
    ((s * r[0] - 1.0).abs()).max(r[2].abs()).max((s * r[3] - 1.0).abs())
}

/// `[y, z]`: the point `z·n⁺(σ) = y·a(-c)·n⁻(-ν)` on the strong-stable leaf
/// of `z` and the center-unstable leaf of `y`.
pub fn bowen_bracket(y: &FrameElement, z: &FrameElement, eta: f64) -> Result<BracketResult> {
    let params = nak_entries(&z.relative(y))?;
    if params.max_abs() > eta {
        return Err(Error::ExceedsEta { eta, sigma: params.sigma, nu: params.nu, c: params.c });
    }
    let w = z.compose(&FrameElement::upper(params.sigma));
    let via_y = y.compose(&FrameElement::diag(-params.c)).compose(&FrameElement::lower(-params.nu));
    let residual = stable_leaf_residual(z, &w).max(chart_dist(&w, &via_y));
    Ok(BracketResult { w, params, deck: DeckElement::identity(), residual })
}

/// Bracket with a chosen orientation. The mirrored bracket conjugates by the
/// flow-reversing frame, so it lies on `W^{cs}(y) ∩ W^{uu}(z)`.
pub fn oriented_bracket(
    y: &FrameElement,
    z: &FrameElement,
    eta: f64,
    orientation: Orientation,
) -> Result<BracketResult> {
    match orientation {
        Orientation::CenterUnstable => bowen_bracket(y, z, eta),
        Orientation::CenterStable => {
            let w = flip();
            let mut r = bowen_bracket(&y.compose(&w), &z.compose(&w), eta)?;
            r.w = r.w.compose(&w.inverse());
            Ok(r)
        }
    }
}

/// Aligns `y` with `z` by the deck element minimizing their chart distance,
/// then brackets in the plane.
pub fn bracket_in_quotient(y: &FrameElement, z: &FrameElement, eta: f64) -> Result<BracketResult> {
    let (d, deck) = quotient_dist_with_deck(y, z);
    if !d.is_finite() {
        return Err(Error::NoCandidateDeck);
    }
    let mut r = bowen_bracket(&deck.act(y), z, eta)?;
    r.deck = deck;
    Ok(r)
}

/// Local product sizes at `x` for a target `ε`: `δ = ε/12`, `η = ε/4`, both
/// scaled by `injectivity_radius(x)/r₀`.
pub fn local_product_constants(x: &FrameElement, epsilon: f64) -> (f64, f64) {
    let f = injectivity_radius(x) / BULK_RADIUS;
    (epsilon / DELTA_DIVISOR * f, epsilon / ETA_DIVISOR * f)
}

/// Uniform sample in the chart ball of radius `r` around `x`, drawn as
/// `x·(I + X)` for a random traceless-plus-correction `X`.
pub fn sample_ball(x: &FrameElement, r: f64, rng: &mut impl Rng) -> FrameElement {
    loop {
        let v: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1.0 {
            continue;
        }
        // coordinates (m11 - 1, m12, m21); m22 from the determinant
        let (p, q, s) = (r * v[0], r * v[1], r * v[2]);
        let m11 = 1.0 + p;
        let m22 = (1.0 + q * s) / m11;
        let h = FrameElement::renormalized([m11, q, s, m22]);
        let g = x.compose(&h);
        if chart_dist(x, &g) <= r {
            return g;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductAudit {
    pub delta: f64,
    pub eta: f64,
    pub pairs: usize,
    pub failures: usize,
    /// Largest `max(|σ|, |ν|, |c|) / η` observed.
    pub worst_magnitude: f64,
    /// Largest `chart_dist(x, [y, z]) / ε` observed.
    pub worst_landing: f64,
}

impl ProductAudit {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Brackets `pairs` random pairs from the `δ`-ball at `x` and checks that
/// each succeeds at size `η` and lands in the `ε`-ball.
pub fn audit_local_product(x: &FrameElement, epsilon: f64, pairs: usize, seed: u64) -> ProductAudit {
    let (delta, eta) = local_product_constants(x, epsilon);
    let eps_x = epsilon * injectivity_radius(x) / BULK_RADIUS;
    let mut rng = sample_rng(seed, 0);
    let mut failures = 0;
    let mut worst_magnitude = 0.0f64;
    let mut worst_landing = 0.0f64;
    for _ in 0..pairs {
        let y = sample_ball(x, delta, &mut rng);
        let z = sample_ball(x, delta, &mut rng);
        match bowen_bracket(&y, &z, f64::INFINITY) {
            Ok(r) => {
                let mag = r.params.max_abs() / eta;
                let land = chart_dist(x, &r.w) / eps_x;
                worst_magnitude = worst_magnitude.max(mag);
                worst_landing = worst_landing.max(land);
                if mag > 1.0 || land > 1.0 || r.residual > 1e-10 {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    ProductAudit { delta, eta, pairs, failures, worst_magnitude, worst_landing }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{HalfPlanePoint, UnitTangent};
    use crate::lattice::Gen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn at(re: f64, im: f64, angle: f64) -> FrameElement {
        UnitTangent::new(HalfPlanePoint { re, im }, angle).to_frame()
    }

    #[test]
    fn decompose_examples() {
        let p = nak_decompose(&FrameElement::IDENTITY).unwrap();
        assert_eq!((p.sigma, p.nu, p.c), (0.0, 0.0, 0.0));
        let p = nak_decompose(&FrameElement::upper(0.3)).unwrap();
        assert!((p.sigma - 0.3).abs() < 1e-15 && p.nu == 0.0 && p.c.abs() < 1e-15);
        let h = FrameElement::new(2.0, 1.0, 1.0, 1.0).unwrap();
        let p = nak_decompose(&h).unwrap();
        assert!((p.sigma - 1.0).abs() < 1e-15 && (p.nu - 1.0).abs() < 1e-15 && p.c.abs() < 1e-15);
        assert!(p.recompose().entry_distance(&h) < 1e-15);
        let bad = FrameElement::new(0.0, -1.0, 1.0, 0.0).unwrap();
        assert!(matches!(nak_decompose(&bad), Err(Error::OutsideProductChart { .. })));
    }

    #[test]
    fn decompose_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let p = BracketParams {
                sigma: rng.random_range(-0.5..0.5),
                nu: rng.random_range(-0.5..0.5),
                c: rng.random_range(-0.5..0.5),
            };
            let q = nak_decompose(&p.recompose()).unwrap();
            assert!((p.sigma - q.sigma).abs() < 1e-12);
            assert!((p.nu - q.nu).abs() < 1e-12);
            assert!((p.c - q.c).abs() < 1e-12);
        }
    }

    #[test]
    fn bracket_trivial_cases() {
        let y = at(0.1, 1.3, 2.0);
        let r = bowen_bracket(&y, &y, 0.1).unwrap();
        assert!(r.w.entry_distance(&y) < 1e-15 && r.params.max_abs() < 1e-15);

        let z = crate::flow::stable_move(&y, 0.02);
        let r = bowen_bracket(&y, &z, 0.1).unwrap();
        assert!(chart_dist(&r.w, &y) < 1e-14);
        assert!((r.params.sigma + 0.02).abs() < 1e-14 && r.params.nu.abs() < 1e-14 && r.params.c.abs() < 1e-14);
    }

    #[test]
    fn bracket_leaves() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..200 {
            let x = at(rng.random_range(-0.5..0.5), rng.random_range(1.0..2.0), rng.random_range(0.0..std::f64::consts::TAU));
            let y = sample_ball(&x, 0.03, &mut rng);
            let z = sample_ball(&x, 0.03, &mut rng);
            let r = bowen_bracket(&y, &z, 0.2).unwrap();
            assert!(r.residual < 1e-12);
            let lam = (-1.0f64).exp();
            for t in [1.0, 2.0, 4.0, 8.0] {
                // forward along the stable leaf of z
                let d = chart_dist(&r.w.compose(&FrameElement::diag(t)), &z.compose(&FrameElement::diag(t)));
                assert!(d <= 2.0 * lam.powf(t) * 0.2);
            }
            // backward along the unstable leaf of the flowed y
            let yc = y.compose(&FrameElement::diag(-r.params.c));
            let mut last = f64::INFINITY;
            for t in [0.0, 1.0, 2.0, 4.0, 8.0] {
                let d = chart_dist(&r.w.compose(&FrameElement::diag(-t)), &yc.compose(&FrameElement::diag(-t)));
                assert!(d <= last + 1e-15);
                last = d;
            }
            // idempotent on a point already on the stable leaf of z
            let again = bowen_bracket(&r.w, &z, 0.2).unwrap();
            assert!(again.w.entry_distance(&r.w) < 1e-12);
        }
    }

    #[test]
    fn mirrored_bracket_leaves() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = at(0.2, 1.5, 1.0);
        let y = sample_ball(&x, 0.03, &mut rng);
        let z = sample_ball(&x, 0.03, &mut rng);
        let r = oriented_bracket(&y, &z, 0.2, Orientation::CenterStable).unwrap();
        // on the unstable leaf of z: z⁻¹w lower unipotent
        let rel = z.relative(&r.w);
        let s = rel[0].signum();
        assert!((s * rel[0] - 1.0).abs() < 1e-12 && rel[1].abs() < 1e-12);
        // on the center-stable leaf of y: y⁻¹w = a(τ)n⁺(s), upper triangular
        assert!(y.relative(&r.w)[2].abs() < 1e-12);
    }

    #[test]
    fn quotient_bracket() {
        let y = at(0.1, 1.2, 0.4);
        let k = DeckElement::from_word(&[Gen::S, Gen::T, Gen::T]).unwrap();
        let r = bracket_in_quotient(&k.act(&y), &y, 0.01).unwrap();
        assert!(r.params.max_abs() < 1e-12);

        // straddling the wall re = 1/2
        let a = at(0.49, 1.5, 1.0);
        let b = at(-0.49, 1.5, 1.02);
        let r = bracket_in_quotient(&a, &b, 0.1).unwrap();
        assert!(r.deck == Gen::TInv.deck(), "{:?}", r.deck);

        let far = at(0.0, 1.5, 1.0);
        let near = far.compose(&FrameElement::upper(0.2));
        assert!(matches!(bracket_in_quotient(&near, &far, 0.02), Err(Error::ExceedsEta { .. })));
    }

    #[test]
    fn product_constants() {
        let (d, e) = local_product_constants(&FrameElement::IDENTITY, 0.1);
        assert!((d - 0.1 / 12.0).abs() < 1e-15 && (e - 0.025).abs() < 1e-15);
        let (dc, ec) = local_product_constants(&at(0.0, 10.0, 1.0), 0.1);
        assert!((dc - d * 0.25).abs() < 1e-15 && (ec - e * 0.25).abs() < 1e-15);
    }

    #[test]
    fn product_audit_bulk() {
        let a = audit_local_product(&at(0.0, 1.0, 1.0), 0.1, 1000, 3);
        assert!(a.passed(), "{a:?}");
    }
}
