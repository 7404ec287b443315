//! Finitely supported measures on quadruples `(I, X, S, σ)`.
//!
//! All grid values are integers in units of the grid step `h`; `h` only
//! enters when a quantity must be expressed in price units.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::rational::{self, Rational};
use crate::{Error, Result};

/// Direction of the most recent strict record: `Plus` after a new maximum,
/// `Minus` after a new minimum (and at time zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    pub fn as_i64(self) -> i64 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

impl TryFrom<i64> for Sign {
    type Error = String;

    fn try_from(v: i64) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(format!("sigma must be +1 or -1, got {other}")),
        }
    }
}

impl From<Sign> for i64 {
    fn from(s: Sign) -> i64 {
        s.as_i64()
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.as_i64())
    }
}

/// One point `(I, X, S, σ)` of the state space, in grid units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quad {
    pub i: i64,
    pub x: i64,
    pub s: i64,
    pub sigma: Sign,
}

impl Quad {
    /// Builds a quad, enforcing the support and signature rules.
    pub fn new(i: i64, x: i64, s: i64, sigma: Sign) -> Result<Quad> {
        let q = Quad { i, x, s, sigma };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::Support {
                at: self.to_string(),
                reason: reason.to_string(),
            })
        };
        if !(self.i <= self.x && self.x <= self.s) {
            return fail("requires i <= x <= s");
        }
        if !(self.i <= 0 && 0 <= self.s) {
            return fail("requires i <= 0 <= s");
        }
        match (self.i, self.s, self.sigma) {
            (0, s, Sign::Minus) if s > 0 => fail("s > 0 and i = 0 force sigma = +1"),
            (i, 0, Sign::Plus) if i < 0 => fail("i < 0 and s = 0 force sigma = -1"),
            (0, 0, Sign::Plus) => fail("i = s = 0 forces sigma = -1"),
            _ => Ok(()),
        }
    }

    /// Mirror image under the reflection `ξ -> -ξ`. The origin keeps
    /// `σ = -1`, which is forced there.
    pub fn reflect(&self) -> Quad {
        let sigma = if self.i == 0 && self.s == 0 { Sign::Minus } else { self.sigma.flip() };
        Quad {
            i: -self.s,
            x: -self.x,
            s: -self.i,
            sigma,
        }
    }

    pub fn range(&self) -> i64 {
        self.s - self.i
    }
}

impl fmt::Display for Quad {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(i={}, x={}, s={}, sigma={})", self.i, self.x, self.s, self.sigma)
    }
}

/// Enumerates every coherent quad with `-box_a <= i` and `s <= box_b`.
pub fn box_quads(box_a: i64, box_b: i64) -> Vec<Quad> {
    let mut out = Vec::new();
    for i in -box_a..=0 {
        for s in 0..=box_b {
            for x in i..=s {
                for sigma in [Sign::Minus, Sign::Plus] {
                    let q = Quad { i, x, s, sigma };
                    if q.validate().is_ok() {
                        out.push(q);
                    }
                }
            }
        }
    }
    out
}

/// Probability measure on quads with exact rational weights.
///
/// Immutable once built: total mass is exactly one and every atom passes
/// [`Quad::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMeasure {
    h: Rational,
    atoms: BTreeMap<Quad, Rational>,
}

impl GridMeasure {
    pub fn new(h: Rational, atoms: impl IntoIterator<Item = (Quad, Rational)>) -> Result<Self> {
        if !h.is_positive() {
            return Err(Error::Parse(format!("grid step h must be positive, got {h}")));
        }
        let mut map = BTreeMap::new();
        for (q, p) in atoms {
            q.validate()?;
            if !p.is_positive() {
                return Err(Error::Mass(format!("atom {q} has non-positive weight {p}")));
            }
            if map.insert(q, p).is_some() {
                return Err(Error::Parse(format!("duplicate atom {q}")));
            }
        }
        let total: Rational = map.values().sum();
        if total != rational::one() {
            return Err(Error::Mass(format!("total mass is {total}, expected 1")));
        }
        Ok(GridMeasure { h, atoms: map })
    }

    /// Builds a measure from weights that may contain zeros or repeated
    /// quads; zeros are dropped and repeats merged.
    pub fn from_weights(
        h: Rational,
        weights: impl IntoIterator<Item = (Quad, Rational)>,
    ) -> Result<Self> {
        let mut map: BTreeMap<Quad, Rational> = BTreeMap::new();
        for (q, p) in weights {
            *map.entry(q).or_insert_with(Rational::zero) += p;
        }
        map.retain(|_, p| !p.is_zero());
        Self::new(h, map)
    }

    /// Point mass at the origin: the walk stopped immediately.
    pub fn point_at_origin(h: Rational) -> Self {
        let q = Quad { i: 0, x: 0, s: 0, sigma: Sign::Minus };
        Self::new(h, [(q, rational::one())]).expect("origin point mass is valid")
    }

    pub fn h(&self) -> &Rational {
        &self.h
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&Quad, &Rational)> {
        self.atoms.iter()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mass(&self, q: &Quad) -> Rational {
        self.atoms.get(q).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn max_s(&self) -> i64 {
        self.atoms.keys().map(|q| q.s).max().unwrap_or(0)
    }

    pub fn min_i(&self) -> i64 {
        self.atoms.keys().map(|q| q.i).min().unwrap_or(0)
    }

    /// `max(S) - min(I)` over the support, in grid units.
    pub fn support_range(&self) -> i64 {
        self.max_s() - self.min_i()
    }

    /// `Σ f(q) m(q)`, exact.
    pub fn expectation(&self, f: impl Fn(&Quad) -> Rational) -> Rational {
        self.atoms.iter().map(|(q, p)| f(q) * p).sum()
    }

    /// `m(event)`.
    pub fn probability(&self, event: impl Fn(&Quad) -> bool) -> Rational {
        self.atoms.iter().filter(|(q, _)| event(q)).map(|(_, p)| p.clone()).sum()
    }

    /// Joint law of `(S, X)`.
    pub fn marginal_sx(&self) -> SxMarginal {
        let mut map: BTreeMap<(i64, i64), Rational> = BTreeMap::new();
        for (q, p) in &self.atoms {
            *map.entry((q.s, q.x)).or_insert_with(Rational::zero) += p;
        }
        SxMarginal { h: self.h.clone(), atoms: map }
    }

    /// Law of the reflected walk.
    pub fn reflect(&self) -> GridMeasure {
        GridMeasure {
            h: self.h.clone(),
            atoms: self.atoms.iter().map(|(q, p)| (q.reflect(), p.clone())).collect(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: MeasureFile = serde_json::from_str(text)?;
        file.into_measure()
    }

    pub fn to_json_string(&self) -> String {
        let file = MeasureFile::from_measure(self);
        serde_json::to_string_pretty(&file).expect("measure serializes")
    }
}

/// Reads and validates a measure file.
pub fn load_measure(path: impl AsRef<Path>) -> Result<GridMeasure> {
    let text = std::fs::read_to_string(path)?;
    GridMeasure::from_json_str(&text)
}

pub fn save_measure(m: &GridMeasure, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, m.to_json_string() + "\n")?;
    Ok(())
}

/// On-disk form: `{"h": "1", "atoms": [{"i":-1,"x":-1,"s":0,"sigma":-1,"p":"1/2"}]}`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureFile {
    pub h: String,
    pub atoms: Vec<AtomRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomRecord {
    pub i: i64,
    pub x: i64,
    pub s: i64,
    pub sigma: i64,
    pub p: String,
}

impl MeasureFile {
    pub fn from_measure(m: &GridMeasure) -> Self {
        MeasureFile {
            h: rational::format(&m.h),
            atoms: m
                .atoms
                .iter()
                .map(|(q, p)| AtomRecord {
                    i: q.i,
                    x: q.x,
                    s: q.s,
                    sigma: q.sigma.as_i64(),
                    p: rational::format(p),
                })
                .collect(),
        }
    }

    pub fn into_measure(self) -> Result<GridMeasure> {
        let h = rational::parse(&self.h)?;
        let mut atoms = Vec::with_capacity(self.atoms.len());
        for a in self.atoms {
            let sigma = Sign::try_from(a.sigma).map_err(|reason| Error::Support {
                at: format!("(i={}, x={}, s={}, sigma={})", a.i, a.x, a.s, a.sigma),
                reason,
            })?;
            let q = Quad::new(a.i, a.x, a.s, sigma)?;
            atoms.push((q, rational::parse(&a.p)?));
        }
        GridMeasure::new(h, atoms)
    }
}

/// Joint law of `(S, X)` on the grid, used by the maximum/terminal checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SxMarginal {
    pub h: Rational,
    pub atoms: BTreeMap<(i64, i64), Rational>,
}

impl SxMarginal {
    pub fn new(h: Rational, atoms: impl IntoIterator<Item = ((i64, i64), Rational)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for ((s, x), p) in atoms {
            if s < 0 || x > s {
                return Err(Error::Parse(format!("(s={s}, x={x}) violates s >= max(x, 0)")));
            }
            if p.is_negative() {
                return Err(Error::Mass(format!("(s={s}, x={x}) has negative weight {p}")));
            }
            if map.insert((s, x), p).is_some() {
                return Err(Error::Parse(format!("duplicate (s={s}, x={x})")));
            }
        }
        let total: Rational = map.values().sum();
        if total != rational::one() {
            return Err(Error::Mass(format!("total mass is {total}, expected 1")));
        }
        Ok(SxMarginal { h, atoms: map })
    }

    pub fn total(&self) -> Rational {
        self.atoms.values().sum()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: SxFile = serde_json::from_str(text)?;
        let h = match file.h {
            Some(h) => rational::parse(&h)?,
            None => rational::one(),
        };
        let mut atoms = Vec::new();
        for a in file.atoms {
            atoms.push(((a.s, a.x), rational::parse(&a.p)?));
        }
        Self::new(h, atoms)
    }

    pub fn to_json_string(&self) -> String {
        let file = SxFile {
            h: Some(rational::format(&self.h)),
            atoms: self
                .atoms
                .iter()
                .map(|(&(s, x), p)| SxRecord { s, x, p: rational::format(p) })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("marginal serializes")
    }
}

/// On-disk form of an `(S, X)` marginal:
/// `{"h": "1", "atoms": [{"s": 1, "x": 1, "p": "1"}]}`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SxFile {
    #[serde(default)]
    h: Option<String>,
    atoms: Vec<SxRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SxRecord {
    s: i64,
    x: i64,
    p: String,
}

/// Shared fixtures used by tests, examples and the CLI.
pub mod fixtures {
    use super::*;
    use crate::rational::ratio;

    /// Law of `T = H_{-1} ∧ H_2` for the unit-step walk.
    pub fn m0() -> GridMeasure {
        GridMeasure::new(
            rational::one(),
            [
                (Quad { i: -1, x: -1, s: 0, sigma: Sign::Minus }, ratio(1, 2)),
                (Quad { i: -1, x: -1, s: 1, sigma: Sign::Minus }, ratio(1, 6)),
                (Quad { i: 0, x: 2, s: 2, sigma: Sign::Plus }, ratio(1, 3)),
            ],
        )
        .expect("M0 is valid")
    }

    pub fn mpoint() -> GridMeasure {
        GridMeasure::point_at_origin(rational::one())
    }

    /// Random valid (not necessarily consistent) measure: up to `atoms`
    /// quads from the box with integer weights 1..=9, normalized.
    pub fn random_measure(box_a: i64, box_b: i64, atoms: usize, seed: u64) -> GridMeasure {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let quads = box_quads(box_a, box_b);
        let picks: Vec<(Quad, i64)> = (0..atoms.max(1))
            .map(|_| (quads[rng.random_range(0..quads.len())], rng.random_range(1..=9)))
            .collect();
        let total: i64 = picks.iter().map(|(_, w)| w).sum();
        GridMeasure::from_weights(rational::one(), picks.into_iter().map(|(q, w)| (q, ratio(w, total))))
            .expect("weights are positive and sum to one")
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::{m0, mpoint};
    use super::*;
    use crate::rational::{int, ratio};
    use proptest::prelude::*;

    #[test]
    fn loads_point_mass_and_m0() {
        let text = r#"{"h":"1","atoms":[{"i":0,"x":0,"s":0,"sigma":-1,"p":"1"}]}"#;
        assert_eq!(GridMeasure::from_json_str(text).unwrap(), mpoint());

        let text = r#"{"h":"1","atoms":[
            {"i":-1,"x":-1,"s":0,"sigma":-1,"p":"1/2"},
            {"i":-1,"x":-1,"s":1,"sigma":-1,"p":"1/6"},
            {"i":0,"x":2,"s":2,"sigma":1,"p":"1/3"}]}"#;
        assert_eq!(GridMeasure::from_json_str(text).unwrap(), m0());
    }

    #[test]
    fn rejects_incoherent_signature() {
        let text = r#"{"h":"1","atoms":[{"i":0,"x":1,"s":1,"sigma":-1,"p":"1"}]}"#;
        assert!(matches!(GridMeasure::from_json_str(text), Err(Error::Support { .. })));
        let text = r#"{"h":"1","atoms":[{"i":-1,"x":0,"s":0,"sigma":1,"p":"1"}]}"#;
        assert!(matches!(GridMeasure::from_json_str(text), Err(Error::Support { .. })));
        let text = r#"{"h":"1","atoms":[{"i":0,"x":0,"s":0,"sigma":1,"p":"1"}]}"#;
        assert!(matches!(GridMeasure::from_json_str(text), Err(Error::Support { .. })));
        let text = r#"{"h":"1","atoms":[{"i":0,"x":0,"s":0,"sigma":0,"p":"1"}]}"#;
        assert!(matches!(GridMeasure::from_json_str(text), Err(Error::Support { .. })));
    }

    #[test]
    fn rejects_bad_support_mass_and_format() {
        let text = r#"{"h":"1","atoms":[{"i":-1,"x":2,"s":1,"sigma":1,"p":"1"}]}"#;
        assert!(matches!(GridMeasure::from_json_str(text), Err(Error::Support { .. })));
        let text = r#"{"h":"1","atoms":[{"i":1,"x":1,"s":1,"sigma":1,"p":"1"}]}"#;
        assert!(matches!(GridMeasure::from_json_str(text), Err(Error::Support { .. })));
        let text = r#"{"h":"1","atoms":[{"i":0,"x":0,"s":0,"sigma":-1,"p":"1/2"}]}"#;
        assert!(matches!(GridMeasure::from_json_str(text), Err(Error::Mass(_))));
        let text = r#"{"h":"1","atoms":[
            {"i":0,"x":0,"s":0,"sigma":-1,"p":"1/2"},
            {"i":0,"x":0,"s":0,"sigma":-1,"p":"1/2"}]}"#;
        assert!(matches!(GridMeasure::from_json_str(text), Err(Error::Parse(_))));
        let text = r#"{"h":"1","atoms":[{"i":0,"x":0,"s":0,"sigma":-1,"p":"one"}]}"#;
        assert!(matches!(GridMeasure::from_json_str(text), Err(Error::Parse(_))));
        let text = r#"{"h":"0","atoms":[{"i":0,"x":0,"s":0,"sigma":-1,"p":"1"}]}"#;
        assert!(matches!(GridMeasure::from_json_str(text), Err(Error::Parse(_))));
        assert!(matches!(GridMeasure::from_json_str("{"), Err(Error::Json(_))));
    }

    #[test]
    fn marginal_projection() {
        let mu = m0().marginal_sx();
        let expected: BTreeMap<_, _> =
            [((0, -1), ratio(1, 2)), ((1, -1), ratio(1, 6)), ((2, 2), ratio(1, 3))].into();
        assert_eq!(mu.atoms, expected);
        assert_eq!(mpoint().marginal_sx().atoms, [((0, 0), int(1))].into());
        assert_eq!(mu.total(), int(1));
    }

    #[test]
    fn expectations_on_fixtures() {
        assert_eq!(m0().expectation(|q| int(q.x)), int(0));
        assert_eq!(mpoint().expectation(|q| int(q.s - q.i)), int(0));
        assert_eq!(m0().expectation(|q| int(q.s - q.i)), ratio(3, 2));
    }

    #[test]
    fn box_quad_count_matches_enumeration() {
        assert_eq!(box_quads(0, 0).len(), 1);
        assert_eq!(box_quads(4, 4).len(), 221);
    }

    fn arb_measure() -> impl Strategy<Value = GridMeasure> {
        let quads = box_quads(3, 3);
        proptest::collection::btree_map(0..quads.len(), 1u32..20, 1..8).prop_map(move |w| {
            let total: u32 = w.values().sum();
            GridMeasure::new(
                rational::one(),
                w.into_iter().map(|(k, v)| (quads[k], ratio(v as i64, total as i64))),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn json_round_trip(m in arb_measure()) {
            let text = m.to_json_string();
            let back = GridMeasure::from_json_str(&text).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.to_json_string(), text);
        }

        #[test]
        fn expectation_is_linear(m in arb_measure(), an in -9i64..9, ad in 1i64..9, bn in -9i64..9, bd in 1i64..9) {
            let (alpha, beta) = (ratio(an, ad), ratio(bn, bd));
            let f = |q: &Quad| int(q.s - q.x);
            let g = |q: &Quad| int(q.i * q.x + q.sigma.as_i64());
            let lhs = m.expectation(|q| alpha.clone() * f(q) + beta.clone() * g(q));
            let rhs = alpha.clone() * m.expectation(f) + beta.clone() * m.expectation(g);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn marginal_preserves_mass(m in arb_measure()) {
            prop_assert_eq!(m.marginal_sx().total(), int(1));
        }
    }
}
