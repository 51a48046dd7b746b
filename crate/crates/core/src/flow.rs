//! Geodesic and horocycle flows on frames, local invariant-manifold patches
//! and an empirical check of the hyperbolicity estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::FrameElement;
use crate::lattice::{local_size, quotient_dist};
use crate::par::{sample_rng, Execution, Window};

/// Largest supported flow time; beyond it `e^{t/2}` loses all precision.
pub const MAX_FLOW_TIME: f64 = 700.0;
/// Default flow-time grid for [`verify_anosov_bounds`].
pub const DEFAULT_T_GRID: [f64; 6] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0];
/// Default leaf displacement for [`verify_anosov_bounds`].
pub const DEFAULT_DISPLACEMENT: f64 = 1e-3;

/// Hyperbolicity constants: leaf distances contract like `C·λ^t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnosovConstants {
    pub c: f64,
    pub lambda: f64,
}

impl Default for AnosovConstants {
    fn default() -> Self {
        AnosovConstants { c: 2.0, lambda: (-1.0f64).exp() }
    }
}

impl AnosovConstants {
    pub fn new(c: f64, lambda: f64) -> Result<Self> {
        if !(c >= 1.0) || !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::InvalidArgument(format!("constants C = {c}, lambda = {lambda}")));
        }
        Ok(AnosovConstants { c, lambda })
    }

    /// `C·λ^t`.
    pub fn bound(&self, t: f64) -> f64 {
        self.c * self.lambda.powf(t)
    }
}

/// Tangent directions at a frame, as left-translated Lie algebra elements:
/// stable (upper nilpotent), unstable (lower nilpotent) and flow (diagonal).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplittingBasis {
    pub e_s: [f64; 4],
    pub e_u: [f64; 4],
    pub e_c: [f64; 4],
}

impl SplittingBasis {
    pub fn at(g: &FrameElement) -> Self {
        let left = |x: [f64; 4]| crate::frame::mul(&g.entries(), &x);
        SplittingBasis {
            e_s: left([0.0, 1.0, 0.0, 0.0]),
            e_u: left([0.0, 0.0, 1.0, 0.0]),
            e_c: left([0.5, 0.0, 0.0, -0.5]),
        }
    }

    /// Determinant of the three directions in the traceless coordinates
    /// `(m11, m12, m21)` of `g⁻¹·v`; nonzero iff they span.
    pub fn volume(&self, g: &FrameElement) -> f64 {
        let gi = g.inverse().entries();
        let coords = |v: &[f64; 4]| {
            let x = crate::frame::mul(&gi, v);
            [x[0], x[1], x[2]]
        };
        let (a, b, c) = (coords(&self.e_s), coords(&self.e_u), coords(&self.e_c));
        a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0])
    }
}

/// `g·a(t)` with `a(t) = diag(e^{t/2}, e^{-t/2})`.
pub fn geodesic_flow(g: &FrameElement, t: f64) -> Result<FrameElement> {
    if !(t.abs() <= MAX_FLOW_TIME) {
        return Err(Error::FlowRange(t));
    }
    Ok(g.compose(&FrameElement::diag(t)))
}

/// `g·n⁺(s)`: motion along the strong-stable horocycle.
pub fn stable_move(g: &FrameElement, s: f64) -> FrameElement {
    g.compose(&FrameElement::upper(s))
}

/// `g·n⁻(u)`: motion along the strong-unstable horocycle.
pub fn unstable_move(g: &FrameElement, u: f64) -> FrameElement {
    g.compose(&FrameElement::lower(u))
}

/// `g·a(τ)·n⁻(u)`, a point of the center-unstable leaf of `g`.
pub fn center_unstable_point(g: &FrameElement, tau: f64, u: f64) -> Result<FrameElement> {
    Ok(unstable_move(&geodesic_flow(g, tau)?, u))
}

/// `g·a(τ)·n⁺(s)`, a point of the center-stable leaf of `g`.
pub fn center_stable_point(g: &FrameElement, tau: f64, s: f64) -> Result<FrameElement> {
    Ok(stable_move(&geodesic_flow(g, tau)?, s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifoldKind {
    StrongStable,
    StrongUnstable,
    CenterStable,
    CenterUnstable,
}

/// Leaf coordinates of a patch sample: flow time and horocycle parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafCoords {
    pub tau: f64,
    pub param: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalManifoldPatch {
    pub base: FrameElement,
    pub kind: ManifoldKind,
    /// Half-width of the parameter range.
    pub size: f64,
    pub coords: Vec<LeafCoords>,
    pub samples: Vec<FrameElement>,
}

impl LocalManifoldPatch {
    /// Largest leaf-identity residual over the samples: after flowing base
    /// and sample by `t`, the relative frame must be the horocycle element
    /// with parameter rescaled by `e^{∓t}`.
    pub fn membership_residual(&self, t: f64) -> f64 {
        let bt = self.base.compose(&FrameElement::diag(t));
        self.coords
            .iter()
            .zip(&self.samples)
            .map(|(k, s)| {
                let st = s.compose(&FrameElement::diag(t));
                let rel = FrameElement::renormalized(bt.relative(&st));
                let expected = match self.kind {
                    ManifoldKind::StrongStable => FrameElement::upper(k.param * (-t).exp()),
                    ManifoldKind::StrongUnstable => FrameElement::lower(k.param * t.exp()),
                    ManifoldKind::CenterStable => FrameElement::diag(k.tau)
                        .compose(&FrameElement::upper(k.param * (-t).exp())),
                    ManifoldKind::CenterUnstable => FrameElement::diag(k.tau)
                        .compose(&FrameElement::lower(k.param * t.exp())),
                };
                rel.entry_distance(&expected)
            })
            .fold(0.0, f64::max)
    }
}

fn equispaced(n: usize, half: f64) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect()
}

/// Samples a local leaf through `g` with parameter half-width `ε(g)/4`.
/// Center leaves use a square grid in `(τ, param)` with `n_samples` points
/// taken in row order.
pub fn local_manifold(g: &FrameElement, kind: ManifoldKind, n_samples: usize) -> LocalManifoldPatch {
    let size = 0.25 * local_size(g);
    let n = n_samples.max(1);
    let coords: Vec<LeafCoords> = match kind {
        ManifoldKind::StrongStable | ManifoldKind::StrongUnstable => {
            equispaced(n, size).into_iter().map(|param| LeafCoords { tau: 0.0, param }).collect()
        }
        ManifoldKind::CenterStable | ManifoldKind::CenterUnstable => {
            let side = (n as f64).sqrt().ceil() as usize;
            let axis = equispaced(side, size);
            axis.iter()
                .flat_map(|&tau| axis.iter().map(move |&param| LeafCoords { tau, param }))
                .take(n)
                .collect()
        }
    };
    let samples = coords
        .iter()
        .map(|k| {
            let flowed = g.compose(&FrameElement::diag(k.tau));
            match kind {
                ManifoldKind::StrongStable | ManifoldKind::CenterStable => stable_move(&flowed, k.param),
                ManifoldKind::StrongUnstable | ManifoldKind::CenterUnstable => {
                    unstable_move(&flowed, k.param)
                }
            }
        })
        .collect();
    LocalManifoldPatch { base: *g, kind, size, coords, samples }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnosovReport {
    pub samples: usize,
    /// Largest `d(φ^t g, φ^t g') / (C λ^t d(g, g'))` over stable displacements, `t ≥ 0`.
    pub stable_ratio: f64,
    /// Same for unstable displacements under the backward flow.
    pub unstable_ratio: f64,
    /// Unstable displacements under the forward flow; expected to exceed one.
    pub negative_control_ratio: f64,
    /// Largest deviation of the leaf parameter from exact `e^{-t}` contraction.
    pub parameter_residual: f64,
}

impl AnosovReport {
    pub fn passed(&self) -> bool {
        self.stable_ratio <= 1.0 && self.unstable_ratio <= 1.0
    }
}

/// Empirical hyperbolicity audit on frames sampled from `window`.
pub fn verify_anosov_bounds(
    window: &Window,
    constants: AnosovConstants,
    t_grid: &[f64],
    displacement: f64,
    n_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<AnosovReport> {
    window.validate()?;
    if window.im_hi > 10.0 {
        return Err(Error::InvalidArgument("window must satisfy im <= 10".into()));
    }
    if t_grid.iter().any(|t| !(*t >= 0.0 && *t <= 40.0)) {
        return Err(Error::InvalidArgument("t grid must lie in [0, 40]".into()));
    }
    let h = displacement;
    let per_sample = exec.map_indexed(n_samples, |i| {
        let mut rng = sample_rng(seed, i);
        let g = window.sample(&mut rng);
        let gs = stable_move(&g, h);
        let gu = unstable_move(&g, h);
        let d0s = quotient_dist(&g, &gs);
        let d0u = quotient_dist(&g, &gu);
        let mut out = [0.0f64; 4];
        for &t in t_grid {
            let bound = constants.bound(t);
            let ft = g.compose(&FrameElement::diag(t));
            let bt = g.compose(&FrameElement::diag(-t));
            let s = quotient_dist(&ft, &gs.compose(&FrameElement::diag(t)));
            let u = quotient_dist(&bt, &gu.compose(&FrameElement::diag(-t)));
            let nc = quotient_dist(&ft, &gu.compose(&FrameElement::diag(t)));
            out[0] = out[0].max(s / (bound * d0s));
            out[1] = out[1].max(u / (bound * d0u));
            out[2] = out[2].max(nc / (bound * d0u));
            // relative frame after flowing is exactly n⁺(h e^{-t})
            let rel = FrameElement::renormalized(ft.relative(&gs.compose(&FrameElement::diag(t))));
            out[3] = out[3].max((rel.m12() / rel.m22() - h * (-t).exp()).abs() / h);
        }
        out
    });
    let fold = |k: usize| per_sample.iter().map(|o| o[k]).fold(0.0, f64::max);
    Ok(AnosovReport {
        samples: n_samples,
        stable_ratio: fold(0),
        unstable_ratio: fold(1),
        negative_control_ratio: fold(2),
        parameter_residual: fold(3),
    })
}
