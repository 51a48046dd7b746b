//! The modular group acting on frames: fundamental-domain reduction with
//! deck bookkeeping, distance on the quotient, element classification, and
//! the cusp-dependent injectivity radius.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{rel_dist, FrameElement, HalfPlanePoint};

/// Bulk value of the injectivity radius, chart units.
pub const BULK_RADIUS: f64 = 0.2;
/// Cusp constant: the radius at reduced height `y > C_CUSP / BULK_RADIUS` is `C_CUSP / y`.
pub const CUSP_CONSTANT: f64 = 0.5;
/// Word length of the short-word candidate set used by [`quotient_dist`].
pub const CANDIDATE_WORD_LENGTH: usize = 6;

const ENTRY_LIMIT: i128 = 1 << 62;
const MAX_WORD: usize = 4096;
const MAX_REDUCTION_STEPS: usize = 100_000;
const BOUNDARY_TOL: f64 = 1e-12;

/// Generators of the modular group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gen {
    S,
    T,
    TInv,
}

impl Gen {
    pub fn deck(self) -> DeckElement {
        match self {
            Gen::S => DeckElement::raw(0, -1, 1, 0),
            Gen::T => DeckElement::raw(1, 1, 0, 1),
            Gen::TInv => DeckElement::raw(1, -1, 0, 1),
        }
    }

    fn inverse(self) -> Gen {
        match self {
            Gen::S => Gen::S,
            Gen::T => Gen::TInv,
            Gen::TInv => Gen::T,
        }
    }
}

/// Integer unit-determinant matrix, optionally carrying a generator word
/// whose product is `±` the matrix.
#[derive(Clone, Serialize, Deserialize)]
pub struct DeckElement {
    pub a: i64,
    pub b: i64,
    pub c: i64,
    pub d: i64,
    pub word: Option<Vec<Gen>>,
}

impl fmt::Debug for DeckElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.a, self.b, self.c, self.d)
    }
}

impl PartialEq for DeckElement {
    /// Equality in the projective group: matrices agree up to sign.
    fn eq(&self, other: &Self) -> bool {
        self.entries() == other.entries()
            || self.entries() == [-other.a, -other.b, -other.c, -other.d]
    }
}

impl DeckElement {
    const fn raw(a: i64, b: i64, c: i64, d: i64) -> Self {
        DeckElement { a, b, c, d, word: None }
    }

    pub fn new(a: i64, b: i64, c: i64, d: i64) -> Result<Self> {
        let det = a as i128 * d as i128 - b as i128 * c as i128;
        if det != 1 {
            return Err(Error::InvalidDeck(format!("determinant {det}")));
        }
        Ok(Self::raw(a, b, c, d))
    }

    pub fn identity() -> Self {
        DeckElement { word: Some(Vec::new()), ..Self::raw(1, 0, 0, 1) }
    }

    pub fn generator(g: Gen) -> Self {
        DeckElement { word: Some(vec![g]), ..g.deck() }
    }

    /// Product of a generator word.
    pub fn from_word(word: &[Gen]) -> Result<Self> {
        let mut acc = Self::raw(1, 0, 0, 1);
        for g in word {
            acc = acc.mul_raw(&g.deck())?;
        }
        acc.word = Some(word.to_vec());
        Ok(acc)
    }

    pub fn entries(&self) -> [i64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn trace(&self) -> i64 {
        self.a + self.d
    }

    pub fn is_identity(&self) -> bool {
        self.entries() == [1, 0, 0, 1] || self.entries() == [-1, 0, 0, -1]
    }

    fn mul_raw(&self, o: &DeckElement) -> Result<DeckElement> {
        let p = |x: i64, y: i64, z: i64, w: i64| -> Result<i64> {
            let v = x as i128 * y as i128 + z as i128 * w as i128;
            if v.abs() > ENTRY_LIMIT {
                Err(Error::DeckOverflow)
            } else {
                Ok(v as i64)
            }
        };
        Ok(DeckElement {
            a: p(self.a, o.a, self.b, o.c)?,
            b: p(self.a, o.b, self.b, o.d)?,
            c: p(self.c, o.a, self.d, o.c)?,
            d: p(self.c, o.b, self.d, o.d)?,
            word: None,
        })
    }

    /// Product `self · other`; words concatenate when both are present.
    pub fn compose(&self, other: &DeckElement) -> Result<DeckElement> {
        let mut out = self.mul_raw(other)?;
        if let (Some(w1), Some(w2)) = (&self.word, &other.word) {
            if w1.len() + w2.len() <= MAX_WORD {
                out.word = Some(w1.iter().chain(w2.iter()).copied().collect());
            }
        }
        Ok(out)
    }

    pub fn inverse(&self) -> DeckElement {
        DeckElement {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
            word: self.word.as_ref().map(|w| w.iter().rev().map(|g| g.inverse()).collect()),
        }
    }

    /// Integer power (negative exponents use the inverse).
    pub fn pow(&self, k: i64) -> Result<DeckElement> {
        let base = if k < 0 { self.inverse() } else { self.clone() };
        let mut acc = DeckElement::identity();
        for _ in 0..k.unsigned_abs() {
            acc = acc.compose(&base)?;
        }
        Ok(acc)
    }

    /// Drops the word, keeping only the matrix.
    pub fn without_word(&self) -> DeckElement {
        Self::raw(self.a, self.b, self.c, self.d)
    }

    pub fn to_frame(&self) -> FrameElement {
        FrameElement::renormalized([self.a as f64, self.b as f64, self.c as f64, self.d as f64])
    }

    /// `self · g`.
    pub fn act(&self, g: &FrameElement) -> FrameElement {
        self.to_frame().compose(g)
    }

    /// Checks the word invariant (product equals `±` matrix).
    pub fn word_consistent(&self) -> bool {
        match &self.word {
            None => true,
            Some(w) => DeckElement::from_word(w).map(|p| p == *self).unwrap_or(false),
        }
    }

    /// Canonical integer matrix up to sign, for hashing and ordering.
    pub fn projective_key(&self) -> [i64; 4] {
        let e = self.entries();
        let lead = e.iter().copied().find(|&x| x != 0).unwrap_or(1);
        if lead < 0 {
            [-e[0], -e[1], -e[2], -e[3]]
        } else {
            e
        }
    }
}

/// Frame whose base point lies in the closed standard fundamental domain,
/// with the deck element that moved it there.
#[derive(Debug, Clone)]
pub struct ReducedFrame {
    pub frame: FrameElement,
    pub deck: DeckElement,
}

/// Conjugacy type of a modular-group element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementKind {
    Identity,
    Elliptic,
    Parabolic,
    Hyperbolic,
}

impl ElementKind {
    pub fn name(self) -> &'static str {
        match self {
            ElementKind::Identity => "identity",
            ElementKind::Elliptic => "elliptic",
            ElementKind::Parabolic => "parabolic",
            ElementKind::Hyperbolic => "hyperbolic",
        }
    }
}

fn push_run(word: &mut Vec<Gen>, n: i64, overflow: &mut bool) {
    if *overflow {
        return;
    }
    let g = if n > 0 { Gen::T } else { Gen::TInv };
    if word.len() + n.unsigned_abs() as usize > MAX_WORD {
        *overflow = true;
        return;
    }
    word.extend(std::iter::repeat_n(g, n.unsigned_abs() as usize));
}

/// Moves `z` into the standard fundamental domain `|re| ≤ 1/2, |z| ≥ 1`.
///
/// Ties are broken deterministically: `|re| = 1/2` goes to `re = -1/2`, and
/// points on the unit circle end with `re ≤ 0`.
pub fn reduce_point(z: HalfPlanePoint) -> (HalfPlanePoint, DeckElement) {
    reduce_point_counted(z).0
}

/// Reduction plus the number of translate/invert steps taken.
pub fn reduce_point_counted(z: HalfPlanePoint) -> ((HalfPlanePoint, DeckElement), usize) {
    let (mut x, mut y) = (z.re, z.im);
    // deck accumulated as an integer matrix; word collected in application order
    let mut m = DeckElement::raw(1, 0, 0, 1);
    let mut applied: Vec<Gen> = Vec::new();
    let mut word_overflow = false;
    let mut matrix_overflow = false;
    let mut steps = 0;
    loop {
        steps += 1;
        let n = (x + 0.5).floor();
        if n != 0.0 && n.is_finite() {
            let k = n as i64;
            x -= n;
            if !matrix_overflow {
                match DeckElement::raw(1, -k, 0, 1).mul_raw(&m) {
                    Ok(p) => m = p,
                    Err(_) => matrix_overflow = true,
                }
            }
            push_run(&mut applied, -k, &mut word_overflow);
        }
        let r2 = x * x + y * y;
        let invert = r2 < 1.0 - BOUNDARY_TOL || (r2 <= 1.0 + BOUNDARY_TOL && x > BOUNDARY_TOL);
        if !invert || steps >= MAX_REDUCTION_STEPS {
            break;
        }
        x = -x / r2;
        y /= r2;
        if !matrix_overflow {
            match Gen::S.deck().mul_raw(&m) {
                Ok(p) => m = p,
                Err(_) => matrix_overflow = true,
            }
        }
        if !word_overflow {
            applied.push(Gen::S);
        }
    }
    debug_assert!(!matrix_overflow, "deck overflow while reducing {z:?}");
    if !word_overflow && applied.len() <= MAX_WORD {
        applied.reverse();
        m.word = Some(applied);
    }
    ((HalfPlanePoint { re: x, im: y }, m), steps)
}

/// Applies [`reduce_point`] to the base point and left-multiplies the frame.
pub fn reduce_frame(g: &FrameElement) -> ReducedFrame {
    let (_, deck) = reduce_point(g.base());
    let frame = deck.act(g);
    ReducedFrame { frame, deck }
}

pub fn in_fundamental_domain(z: HalfPlanePoint, tol: f64) -> bool {
    z.re.abs() <= 0.5 + tol && z.re * z.re + z.im * z.im >= 1.0 - tol
}

struct Candidate {
    deck: DeckElement,
    inv: [f64; 4],
}

fn short_words() -> &'static [Candidate] {
    static CELL: OnceLock<Vec<Candidate>> = OnceLock::new();
    CELL.get_or_init(|| {
        let gens = [Gen::S, Gen::T, Gen::TInv];
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        let mut frontier = vec![DeckElement::identity()];
        seen.insert(DeckElement::identity().projective_key());
        out.push(DeckElement::identity());
        for _ in 0..CANDIDATE_WORD_LENGTH {
            let mut next = Vec::new();
            for w in &frontier {
                for g in gens {
                    let p = w.compose(&DeckElement::generator(g)).expect("short word");
                    if seen.insert(p.projective_key()) {
                        next.push(p.clone());
                        out.push(p);
                    }
                }
            }
            frontier = next;
        }
        out.into_iter()
            .map(|deck| {
                let inv = deck.inverse();
                Candidate { inv: [inv.a as f64, inv.b as f64, inv.c as f64, inv.d as f64], deck }
            })
            .collect()
    })
}

/// Number of distinct short-word candidates.
pub fn candidate_count() -> usize {
    short_words().len()
}

/// Images `w⁻¹·h` over the short-word candidate set. For reduced `g` and
/// `h`, `reduced_quotient_dist(g, h)` is the least chart distance from `g`
/// to one of them.
pub fn translates(h: &FrameElement) -> Vec<FrameElement> {
    let he = h.entries();
    short_words()
        .iter()
        .map(|c| FrameElement::renormalized(crate::frame::mul(&c.inv, &he)))
        .collect()
}

/// Quotient distance plus a deck element `κ` realizing it:
/// `chart_dist(κ·g, h) = distance`.
pub fn quotient_dist_with_deck(g: &FrameElement, h: &FrameElement) -> (f64, DeckElement) {
    let rg = reduce_frame(g);
    let rh = reduce_frame(h);
    let (d, w) = reduced_quotient_dist(&rg.frame, &rh.frame);
    let deck = rh
        .deck
        .inverse()
        .without_word()
        .compose(&w.without_word())
        .and_then(|p| p.compose(&rg.deck.without_word()))
        .unwrap_or_else(|_| DeckElement::identity());
    (d, deck)
}

/// Quotient distance between two frames already in the fundamental domain,
/// returning the short word `w` with `chart_dist(w·g, h)` minimal.
pub fn reduced_quotient_dist(g: &FrameElement, h: &FrameElement) -> (f64, DeckElement) {
    let gi = g.inverse().entries();
    let he = h.entries();
    let mut best = f64::INFINITY;
    let mut best_deck = DeckElement::identity();
    let mut consider = |inv: &[f64; 4], deck: &DeckElement| {
        // (w g)⁻¹ h = g⁻¹ w⁻¹ h
        let r = crate::frame::mul(&gi, &crate::frame::mul(inv, &he));
        let d = rel_dist(&r);
        if d < best {
            best = d;
            best_deck = deck.clone();
        }
    };
    for c in short_words() {
        consider(&c.inv, &c.deck);
    }
    (best, best_deck)
}

/// Distance on the quotient: minimum of the chart distance over the
/// candidate deck set around the reduced pair.
pub fn quotient_dist(g: &FrameElement, h: &FrameElement) -> f64 {
    let rg = reduce_frame(g);
    let rh = reduce_frame(h);
    reduced_quotient_dist(&rg.frame, &rh.frame).0
}

pub fn classify(gamma: &DeckElement) -> ElementKind {
    if gamma.is_identity() {
        return ElementKind::Identity;
    }
    match gamma.trace().abs() {
        0 | 1 => ElementKind::Elliptic,
        2 => ElementKind::Parabolic,
        _ => ElementKind::Hyperbolic,
    }
}

/// Period of the closed geodesic fixed by a hyperbolic element.
pub fn translation_length(gamma: &DeckElement) -> Result<f64> {
    match classify(gamma) {
        ElementKind::Hyperbolic => Ok(2.0 * (gamma.trace().abs() as f64 / 2.0).acosh()),
        other => Err(Error::NoClosedGeodesic(other.name())),
    }
}

/// A frame on the axis of `γ`, oriented so that `g⁻¹·γ·g = ±a(T)`, together
/// with the period `T`. The frame is the one based at the top of the axis
/// (or at height one for vertical axes).
pub fn axis_frame(gamma: &DeckElement) -> Result<(FrameElement, f64)> {
    let period = translation_length(gamma)?;
    let sign = if gamma.trace() < 0 { -1.0 } else { 1.0 };
    let (a, b, c, d) =
        (sign * gamma.a as f64, sign * gamma.b as f64, sign * gamma.c as f64, sign * gamma.d as f64);
    let tr = a + d;
    let disc = ((tr - 2.0) * (tr + 2.0)).sqrt();
    let big = 0.5 * (tr + disc);
    let small = 1.0 / big;
    let eigvec = |lam: f64| -> (f64, f64) {
        let v1 = (b, lam - a);
        let v2 = (lam - d, c);
        if v1.0.hypot(v1.1) >= v2.0.hypot(v2.1) {
            v1
        } else {
            v2
        }
    };
    let (p, r) = eigvec(big);
    let (mut q, mut s) = eigvec(small);
    let mut det = p * s - q * r;
    if det < 0.0 {
        q = -q;
        s = -s;
        det = -det;
    }
    let k = 1.0 / det.sqrt();
    let g = FrameElement::renormalized([p * k, q * k, r * k, s * k]);
    // slide along the axis to the highest base point: e^τ = |m22/m21|
    let g = if g.m21().abs() > 1e-300 && g.m22().abs() > 1e-300 {
        let tau = (g.m22() / g.m21()).abs().ln();
        g.compose(&FrameElement::diag(tau))
    } else {
        g
    };
    Ok((g, period))
}

/// Injectivity-radius model: `min(r₀, c_cusp / y)` at reduced height `y`.
pub fn injectivity_radius(g: &FrameElement) -> f64 {
    let (z, _) = reduce_point(g.base());
    BULK_RADIUS.min(CUSP_CONSTANT / z.im)
}

/// Point-dependent local-manifold size `ε(x)`: a quarter of the injectivity radius.
pub fn local_size(g: &FrameElement) -> f64 {
    0.25 * injectivity_radius(g)
}
