//! Frames of the hyperbolic plane.
//!
//! A frame is a unit-determinant 2x2 real matrix taken up to sign. It is
//! identified with a unit tangent vector of the upper half-plane through the
//! base point `g·i` and the image of the vertical direction under `g`. The
//! frame group acts on the left by isometries; the geodesic and horocycle
//! flows act on the right.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries below this magnitude are skipped when choosing the sign representative.
const SIGN_EPS: f64 = 1e-14;
/// Largest determinant deviation accepted by [`FrameElement::new`].
const DET_TOL: f64 = 1e-9;

/// Unit-determinant 2x2 real matrix, sign-normalized.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameElement {
    m: [f64; 4],
}

impl fmt::Debug for FrameElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{:.12}, {:.12}], [{:.12}, {:.12}]]",
            self.m[0], self.m[1], self.m[2], self.m[3]
        )
    }
}

impl FrameElement {
    pub const IDENTITY: FrameElement = FrameElement { m: [1.0, 0.0, 0.0, 1.0] };

    /// Validated constructor: the determinant must be within `1e-9` of one.
    /// The result is rescaled to exact unit determinant and sign-normalized.
    pub fn new(m11: f64, m12: f64, m21: f64, m22: f64) -> Result<Self> {
        let entries = [m11, m12, m21, m22];
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidFrame("non-finite entry".into()));
        }
        let det = m11 * m22 - m12 * m21;
        if (det - 1.0).abs() > DET_TOL {
            return Err(Error::InvalidFrame(format!("determinant {det} is not 1")));
        }
        Ok(Self::renormalized(entries))
    }

    /// Rescales a matrix with positive determinant to unit determinant and
    /// picks the sign representative.
    pub(crate) fn renormalized(m: [f64; 4]) -> Self {
        let det = m[0] * m[3] - m[1] * m[2];
        debug_assert!(det > 0.0, "renormalized called with det {det}");
        let s = if (det - 1.0).abs() < 1e-15 { 1.0 } else { 1.0 / det.sqrt() };
        Self::sign_normalized([m[0] * s, m[1] * s, m[2] * s, m[3] * s])
    }

    fn sign_normalized(m: [f64; 4]) -> Self {
        let lead = m[..3].iter().copied().find(|x| x.abs() > SIGN_EPS).unwrap_or(m[3]);
        if lead < 0.0 {
            FrameElement { m: [-m[0], -m[1], -m[2], -m[3]] }
        } else {
            FrameElement { m }
        }
    }

    pub fn m11(&self) -> f64 {
        self.m[0]
    }
    pub fn m12(&self) -> f64 {
        self.m[1]
    }
    pub fn m21(&self) -> f64 {
        self.m[2]
    }
    pub fn m22(&self) -> f64 {
        self.m[3]
    }

    /// Entries in row-major order.
    pub fn entries(&self) -> [f64; 4] {
        self.m
    }

    pub fn det(&self) -> f64 {
        self.m[0] * self.m[3] - self.m[1] * self.m[2]
    }

    /// Geodesic flow subgroup `a(t) = diag(e^{t/2}, e^{-t/2})`.
    pub fn diag(t: f64) -> Self {
        let h = (0.5 * t).exp();
        FrameElement { m: [h, 0.0, 0.0, 1.0 / h] }
    }

    /// Stable horocycle subgroup `n⁺(s) = [[1, s], [0, 1]]`.
    pub fn upper(s: f64) -> Self {
        FrameElement { m: [1.0, s, 0.0, 1.0] }
    }

    /// Unstable horocycle subgroup `n⁻(u) = [[1, 0], [u, 1]]`.
    pub fn lower(u: f64) -> Self {
        FrameElement { m: [1.0, 0.0, u, 1.0] }
    }

    /// Rotation about `i`, turning tangent vectors by `2·phi`.
    pub fn rotation(phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        Self::sign_normalized([c, s, -s, c])
    }

    /// Matrix product, renormalized.
    pub fn compose(&self, other: &FrameElement) -> FrameElement {
        Self::renormalized(mul(&self.m, &other.m))
    }

    pub fn inverse(&self) -> FrameElement {
        Self::sign_normalized([self.m[3], -self.m[1], -self.m[2], self.m[0]])
    }

    /// `self⁻¹ · other` without intermediate renormalization.
    pub fn relative(&self, other: &FrameElement) -> [f64; 4] {
        let inv = [self.m[3], -self.m[1], -self.m[2], self.m[0]];
        mul(&inv, &other.m)
    }

    /// Möbius action on the upper half-plane.
    pub fn mobius_act(&self, z: HalfPlanePoint) -> HalfPlanePoint {
        let w = self.act_complex(z.to_complex());
        HalfPlanePoint { re: w.re, im: w.im }
    }

    pub(crate) fn act_complex(&self, z: Complex64) -> Complex64 {
        let [a, b, c, d] = self.m;
        let num = z * a + b;
        let den = z * c + d;
        num / den
    }

    /// Base point `g·i`.
    pub fn base(&self) -> HalfPlanePoint {
        let [a, b, c, d] = self.m;
        let den = c * c + d * d;
        HalfPlanePoint { re: (a * c + b * d) / den, im: 1.0 / den }
    }

    /// Frobenius distance to `other` under the sign ambiguity, without the
    /// left-invariant pull-back. Used for entrywise comparisons.
    pub fn entry_distance(&self, other: &FrameElement) -> f64 {
        let plus: f64 = self.m.iter().zip(other.m.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        let minus: f64 = self.m.iter().zip(other.m.iter()).map(|(a, b)| (a + b).powi(2)).sum();
        plus.min(minus).sqrt()
    }

    pub fn to_tangent(&self) -> UnitTangent {
        frame_to_tangent(self)
    }
}

pub(crate) fn mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

/// Free-function form of [`FrameElement::compose`].
pub fn compose(g: &FrameElement, h: &FrameElement) -> FrameElement {
    g.compose(h)
}

/// Free-function form of [`FrameElement::inverse`].
pub fn inverse(g: &FrameElement) -> FrameElement {
    g.inverse()
}

/// Point of the upper half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlanePoint {
    pub re: f64,
    pub im: f64,
}

impl HalfPlanePoint {
    pub fn new(re: f64, im: f64) -> Result<Self> {
        if !(im > 0.0) || !re.is_finite() || !im.is_finite() {
            return Err(Error::InvalidPoint(im));
        }
        Ok(HalfPlanePoint { re, im })
    }

    pub const I: HalfPlanePoint = HalfPlanePoint { re: 0.0, im: 1.0 };

    pub fn to_complex(self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    /// `cosh` of the hyperbolic distance to `other`.
    pub fn cosh_dist(&self, other: &HalfPlanePoint) -> f64 {
        let dx = self.re - other.re;
        let dy = self.im - other.im;
        1.0 + (dx * dx + dy * dy) / (2.0 * self.im * other.im)
    }

    pub fn hyperbolic_dist(&self, other: &HalfPlanePoint) -> f64 {
        self.cosh_dist(other).acosh()
    }
}

/// Unit tangent vector: base point plus direction angle in `[0, 2π)`,
/// measured from the positive real direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitTangent {
    pub base: HalfPlanePoint,
    pub angle: f64,
}

impl UnitTangent {
    pub fn new(base: HalfPlanePoint, angle: f64) -> Self {
        UnitTangent { base, angle: wrap_angle(angle) }
    }

    pub fn to_frame(&self) -> FrameElement {
        tangent_to_frame(self)
    }
}

/// Wraps into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// The identity frame is the upward vertical vector at `i`.
pub fn frame_to_tangent(g: &FrameElement) -> UnitTangent {
    let c = g.m21();
    let d = g.m22();
    // derivative of z ↦ g·z at i is (ci + d)⁻², turning the vertical by -2·arg(d + ci)
    let angle = FRAC_PI_2 - 2.0 * c.atan2(d);
    UnitTangent { base: g.base(), angle: wrap_angle(angle) }
}

pub fn tangent_to_frame(u: &UnitTangent) -> FrameElement {
    let HalfPlanePoint { re: x, im: y } = u.base;
    let sy = y.sqrt();
    let translate = FrameElement::renormalized([sy, x / sy, 0.0, 1.0 / sy]);
    let phi = 0.5 * (u.angle - FRAC_PI_2);
    translate.compose(&FrameElement::rotation(phi))
}

/// Left-invariant chart distance: Frobenius norm of `g⁻¹h ∓ I`, minimized
/// over the sign.
pub fn chart_dist(g: &FrameElement, h: &FrameElement) -> f64 {
    rel_dist(&g.relative(h))
}

pub(crate) fn rel_dist(r: &[f64; 4]) -> f64 {
    let plus = (r[0] - 1.0).powi(2) + r[1] * r[1] + r[2] * r[2] + (r[3] - 1.0).powi(2);
    let minus = (r[0] + 1.0).powi(2) + r[1] * r[1] + r[2] * r[2] + (r[3] + 1.0).powi(2);
    plus.min(minus).sqrt()
}

/// Angle `π` as the half-turn frame `w` reversing the flow: `w⁻¹ a(t) w = a(-t)`.
pub fn flip() -> FrameElement {
    FrameElement::rotation(PI / 2.0)
}
