//! Hyperbolic conjugacy classes of the modular group and the length
//! spectrum of closed geodesics.
//!
//! A hyperbolic element with positive trace is conjugate to a product of
//! `R = [[1,1],[0,1]]` and `L = [[1,0],[1,1]]` containing both letters, and
//! the cyclic word is a complete conjugacy invariant.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{classify, DeckElement, ElementKind, Gen};
use crate::shadowing::PeriodicOrbitResult;

/// Largest trace accepted by [`enumerate_classes`].
pub const MAX_TRACE: i64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjClass {
    pub representative: DeckElement,
    pub trace: i64,
    pub length: f64,
    /// Least cyclic rotation of the R/L word, with `R < L`.
    pub word: String,
}

type Mat = [i128; 4];

const R: Mat = [1, 1, 0, 1];
const L: Mat = [1, 0, 1, 1];

fn mul(a: &Mat, b: &Mat) -> Mat {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

fn letter(c: u8) -> Mat {
    if c == b'R' {
        R
    } else {
        L
    }
}

/// Product of an R/L word.
pub fn word_matrix(word: &str) -> Result<DeckElement> {
    let mut m: Mat = [1, 0, 0, 1];
    for c in word.bytes() {
        if c != b'R' && c != b'L' {
            return Err(Error::InvalidArgument(format!("letter {:?} in word", c as char)));
        }
        m = mul(&m, &letter(c));
        if m.iter().any(|x| x.abs() > 1 << 62) {
            return Err(Error::DeckOverflow);
        }
    }
    let mut d = DeckElement::new(m[0] as i64, m[1] as i64, m[2] as i64, m[3] as i64)?;
    // R = T, L = S·T⁻¹·S⁻¹ up to sign
    let mut gens = Vec::new();
    for c in word.bytes() {
        if c == b'R' {
            gens.push(Gen::T);
        } else {
            gens.extend([Gen::S, Gen::TInv, Gen::S]);
        }
    }
    d.word = Some(gens);
    Ok(d)
}

fn rank(c: u8) -> u8 {
    if c == b'R' {
        0
    } else {
        1
    }
}

/// Least rotation of a cyclic word under `R < L`.
pub fn canonical_rotation(word: &str) -> String {
    let b = word.as_bytes();
    let n = b.len();
    if n == 0 {
        return String::new();
    }
    let key = |s: usize| (0..n).map(move |i| rank(b[(s + i) % n]));
    let best = (0..n).min_by(|&x, &y| key(x).cmp(key(y))).unwrap_or(0);
    (0..n).map(|i| b[(best + i) % n] as char).collect()
}

fn is_canonical(word: &[u8]) -> bool {
    let n = word.len();
    let w: Vec<u8> = word.iter().map(|&c| rank(c)).collect();
    (1..n).all(|s| {
        let rot = w[s..].iter().chain(&w[..s]);
        w.iter().cmp(rot) != std::cmp::Ordering::Greater
    })
}

fn class_of(word: String) -> Result<ConjClass> {
    let representative = word_matrix(&word)?;
    let trace = representative.trace();
    let length = 2.0 * (trace as f64 / 2.0).acosh();
    Ok(ConjClass { representative, trace, length, word })
}

/// Every hyperbolic class with trace at most `trace_max`, once each, sorted
/// by `(trace, word)`.
pub fn enumerate_classes(trace_max: i64) -> Result<Vec<ConjClass>> {
    if !(3..=MAX_TRACE).contains(&trace_max) {
        return Err(Error::InvalidArgument(format!("trace_max {trace_max} outside [3, {MAX_TRACE}]")));
    }
    let mut out = Vec::new();
    let mut word = vec![b'R'];
    dfs(&mut word, R, trace_max as i128, &mut out);
    let mut classes = out.into_iter().map(class_of).collect::<Result<Vec<_>>>()?;
    classes.sort_by(|a, b| a.trace.cmp(&b.trace).then_with(|| a.word.cmp(&b.word)));
    Ok(classes)
}

// Appending a letter never lowers the trace of a nonnegative matrix, so a
// branch dies once its trace (or, before any L, the trace after one L)
// exceeds the bound.
fn dfs(word: &mut Vec<u8>, m: Mat, trace_max: i128, out: &mut Vec<String>) {
    let has_l = word.contains(&b'L');
    if has_l && m[0] + m[3] > trace_max {
        return;
    }
    if !has_l && m[0] + m[3] + m[1] > trace_max {
        return;
    }
    if has_l && is_canonical(word) {
        out.push(String::from_utf8(word.clone()).expect("ascii"));
    }
    for c in *b"RL" {
        word.push(c);
        dfs(word, mul(&m, &letter(c)), trace_max, out);
        word.pop();
    }
}

fn conj(g: &Mat, m: &Mat) -> Mat {
    let gi = [g[3], -g[1], -g[2], g[0]];
    mul(&mul(g, m), &gi)
}

fn fixed_points(m: &Mat) -> (f64, f64) {
    let (a, c, d) = (m[0] as f64, m[2] as f64, m[3] as f64);
    let tr = a + d;
    let disc = ((tr - 2.0) * (tr + 2.0)).sqrt();
    let x1 = (a - d - disc) / (2.0 * c);
    let x2 = (a - d + disc) / (2.0 * c);
    (x1.min(x2), x1.max(x2))
}

/// Canonical R/L word of the conjugacy class of a hyperbolic element.
///
/// The element is conjugated until its two fixed points lie on opposite
/// sides of `0` (and hence of `∞`); the conjugate, possibly after `S`, then
/// has nonnegative entries and is peeled letter by letter.
pub fn canonical_word(gamma: &DeckElement) -> Result<String> {
    if classify(gamma) != ElementKind::Hyperbolic {
        return Err(Error::NoClosedGeodesic(classify(gamma).name()));
    }
    let s = if gamma.trace() < 0 { -1 } else { 1 };
    let mut m: Mat = [
        (s * gamma.a) as i128,
        (s * gamma.b) as i128,
        (s * gamma.c) as i128,
        (s * gamma.d) as i128,
    ];
    for _ in 0..10_000 {
        let (lo, hi) = fixed_points(&m);
        let k = lo.floor() + 1.0;
        if k < hi {
            // an integer separates the fixed points; move it to 0
            m = conj(&[1, -(k as i128), 0, 1], &m);
            break;
        }
        // both in (k-1, k): x ↦ -1/(x - (k-1)) spreads them apart
        let j = (k - 1.0) as i128;
        m = conj(&[0, -1, 1, -j], &m);
    }
    if m[1] < 0 && m[2] < 0 {
        m = conj(&[0, -1, 1, 0], &m);
    }
    if m.iter().any(|&x| x < 0) {
        return Err(Error::InvalidDeck(format!("could not reach a positive conjugate of {gamma:?}")));
    }
    let mut letters = Vec::new();
    while m != [1, 0, 0, 1] {
        let [a, b, c, d] = m;
        if a >= b && c >= d {
            letters.push(b'L');
            m = [a - b, b, c - d, d];
        } else if b >= a && d >= c {
            letters.push(b'R');
            m = [a, b - a, c, d - c];
        } else {
            return Err(Error::InvalidDeck(format!("positive conjugate of {gamma:?} is not an R/L word")));
        }
        if letters.len() > 1_000_000 {
            return Err(Error::InvalidDeck("word too long".into()));
        }
    }
    letters.reverse();
    Ok(canonical_rotation(std::str::from_utf8(&letters).expect("ascii")))
}

/// The enumerated class of a finder result: length within `tol` of the
/// period and equal canonical word. `None` when the trace exceeds the table.
pub fn match_orbit(result: &PeriodicOrbitResult, classes: &[ConjClass], tol: f64) -> Result<Option<ConjClass>> {
    let max_trace = classes.iter().map(|c| c.trace).max().unwrap_or(0);
    if result.gamma.trace().abs() > max_trace {
        return Ok(None);
    }
    let word = canonical_word(&result.gamma)?;
    let found: Vec<&ConjClass> = classes
        .iter()
        .filter(|c| (c.length - result.period).abs() <= tol && c.word == word)
        .collect();
    match found.len() {
        0 => Ok(None),
        1 => Ok(Some(found[0].clone())),
        n => Err(Error::AmbiguousMatch(n)),
    }
}

/// `x` with `digits` significant digits, positional notation.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Spectrum as CSV with header `trace,word,length`.
pub fn spectrum_csv(classes: &[ConjClass]) -> String {
    let mut s = String::from("trace,word,length\n");
    for c in classes {
        let _ = writeln!(s, "{},{},{}", c.trace, c.word, format_significant(c.length, 15));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::FrameElement;
    use crate::lattice::{axis_frame, quotient_dist};

    #[test]
    fn smallest_classes() {
        let c3 = enumerate_classes(3).unwrap();
        assert_eq!(c3.len(), 1);
        assert_eq!(c3[0].word, "RL");
        assert_eq!(c3[0].representative.entries(), [2, 1, 1, 1]);
        assert!((c3[0].length - 1.9248473002384139).abs() < 1e-12);

        let c4 = enumerate_classes(4).unwrap();
        let words: Vec<&str> = c4.iter().map(|c| c.word.as_str()).collect();
        assert_eq!(words, ["RL", "RLL", "RRL"]);
        assert_eq!(c4[2].representative.entries(), [3, 2, 1, 1]);
        assert_eq!(c4[1].representative.entries(), [3, 1, 2, 1]);
        assert!((c4[1].length - 2.6339157938496336).abs() < 1e-12);
    }

    #[test]
    fn counts_are_monotone_and_words_distinct() {
        let mut last = 0;
        for t in 3..=30 {
            let c = enumerate_classes(t).unwrap();
            assert!(c.len() >= last);
            last = c.len();
            let mut words: Vec<&str> = c.iter().map(|x| x.word.as_str()).collect();
            words.sort();
            words.dedup();
            assert_eq!(words.len(), c.len());
        }
    }

    #[test]
    fn representatives_close_up() {
        for c in enumerate_classes(20).unwrap() {
            assert_eq!(classify(&c.representative), ElementKind::Hyperbolic);
            let (g, t) = axis_frame(&c.representative).unwrap();
            assert!((t - c.length).abs() < 1e-12);
            assert!(quotient_dist(&g.compose(&FrameElement::diag(t)), &g) < 1e-10);
            assert!(c.representative.word_consistent());
            assert_eq!(canonical_word(&c.representative).unwrap(), c.word);
        }
    }

    #[test]
    fn reversal_symmetry() {
        let classes = enumerate_classes(25).unwrap();
        for c in &classes {
            let rev: String = c.word.chars().rev().collect();
            let rc = canonical_rotation(&rev);
            let partner = classes.iter().find(|x| x.word == rc).expect("reversed class");
            assert_eq!(partner.length, c.length);
        }
    }

    #[test]
    fn words_are_conjugacy_invariants() {
        let k = DeckElement::new(7, 3, 2, 1).unwrap();
        for c in enumerate_classes(15).unwrap() {
            let g = k.compose(&c.representative).unwrap().compose(&k.inverse()).unwrap();
            assert_eq!(canonical_word(&g).unwrap(), c.word);
            let neg = DeckElement::new(-g.a, -g.b, -g.c, -g.d).unwrap();
            assert_eq!(canonical_word(&neg).unwrap(), c.word);
        }
        assert!(canonical_word(&DeckElement::new(1, 1, 0, 1).unwrap()).is_err());
    }

    #[test]
    fn matching() {
        let classes = enumerate_classes(12).unwrap();
        let (y, t) = axis_frame(&DeckElement::new(2, 1, 1, 1).unwrap()).unwrap();
        let mut r = PeriodicOrbitResult {
            y,
            period: t,
            gamma: DeckElement::new(2, 1, 1, 1).unwrap(),
            closure_residual: 0.0,
            oracle_period: t,
            start_distance: 0.0,
        };
        assert_eq!(match_orbit(&r, &classes, 1e-8).unwrap().unwrap().word, "RL");
        r.period += 1e-3;
        assert!(match_orbit(&r, &classes, 1e-8).unwrap().is_none());
        r.gamma = word_matrix("RRRRRRRRRRRRRRL").unwrap();
        assert!(match_orbit(&r, &classes, 1e-8).unwrap().is_none());
    }

    #[test]
    fn csv_format() {
        let csv = spectrum_csv(&enumerate_classes(4).unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "trace,word,length");
        assert_eq!(lines[1], "3,RL,1.92484730023841");
        assert_eq!(lines.len(), 4);
    }
}
