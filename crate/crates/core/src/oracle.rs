//! Exact absorption laws of stopping rules.
//!
//! Given any randomized stopping rule, the joint law of `(I, X, S, σ)` at
//! absorption is computed without sampling. Between two consecutive
//! records the walk stays inside one cell `[i, s]`; the expected number of
//! visits to each position solves a small linear system, which gives both
//! the stopped mass and the mass handed to the next cells.

use std::collections::BTreeMap;

use num_traits::{Signed, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constructor::{stream_rng, CellKey, StoppingRule};
use crate::linalg::solve_exact;
use crate::measure::{GridMeasure, Quad, Sign};
use crate::rational::{self, int, ratio, Rational};
use crate::{Error, Result};

/// Largest box range `A + B` the exact solver accepts.
pub const MAX_BOX_RANGE: i64 = 48;

/// Full state of the walk: position, running minimum and maximum, and the
/// direction of the last record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WalkState {
    pub pos: i64,
    pub i: i64,
    pub s: i64,
    pub side: Sign,
}

impl WalkState {
    pub fn new(pos: i64, i: i64, s: i64, side: Sign) -> Self {
        WalkState { pos, i, s, side }
    }

    fn is_coherent(&self) -> bool {
        Quad { i: self.i, x: self.pos, s: self.s, sigma: self.side }.validate().is_ok()
    }
}

/// Stopping rule on the walk confined to `[-A, B]`: stop probability per
/// state, zero where unspecified, and always one on `-A` and `B`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabularRule {
    pub box_a: i64,
    pub box_b: i64,
    stop: BTreeMap<WalkState, Rational>,
}

impl TabularRule {
    pub fn new(box_a: i64, box_b: i64, stop: impl IntoIterator<Item = (WalkState, Rational)>) -> Result<Self> {
        if box_a < 1 || box_b < 1 {
            return Err(Error::InvalidRule(format!("box ({box_a}, {box_b}) must have A, B >= 1")));
        }
        if box_a + box_b > MAX_BOX_RANGE {
            return Err(Error::Unbounded(format!(
                "box range {} exceeds the limit {MAX_BOX_RANGE}",
                box_a + box_b
            )));
        }
        let mut table = BTreeMap::new();
        for (state, p) in stop {
            if !state.is_coherent() || state.i < -box_a || state.s > box_b {
                return Err(Error::InvalidRule(format!("state {state:?} is not a walk state inside the box")));
            }
            if !rational::is_probability(&p) {
                return Err(Error::InvalidRule(format!("stop probability {p} at {state:?}")));
            }
            if (state.pos == -box_a || state.pos == box_b) && p != rational::one() {
                return Err(Error::InvalidRule(format!("boundary state {state:?} must stop with probability 1")));
            }
            if table.insert(state, p).is_some() {
                return Err(Error::InvalidRule(format!("duplicate state {state:?}")));
            }
        }
        Ok(TabularRule { box_a, box_b, stop: table })
    }

    pub fn stop_prob(&self, state: &WalkState) -> Rational {
        if state.pos <= -self.box_a || state.pos >= self.box_b {
            return rational::one();
        }
        self.stop.get(state).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&WalkState, &Rational)> {
        self.stop.iter()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: TabularFile = serde_json::from_str(text)?;
        let mut entries = Vec::with_capacity(file.stop.len());
        for (pos, i, s, side, p) in file.stop {
            let side = Sign::try_from(side).map_err(Error::Parse)?;
            entries.push((WalkState::new(pos, i, s, side), rational::parse(&p)?));
        }
        TabularRule::new(file.r#box[0], file.r#box[1], entries)
    }

    pub fn to_json_string(&self) -> String {
        let file = TabularFile {
            r#box: [self.box_a, self.box_b],
            stop: self
                .stop
                .iter()
                .map(|(w, p)| (w.pos, w.i, w.s, w.side.as_i64(), rational::format(p)))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("rule serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TabularFile {
    r#box: [i64; 2],
    stop: Vec<(i64, i64, i64, i64, String)>,
}

/// Exact absorption law together with the probability of entering each
/// cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainLaw {
    pub law: BTreeMap<Quad, Rational>,
    /// Probability that the walk ever enters cell `(side, a, b)`; the
    /// origin cell is `(Minus, 0, 0)`.
    pub reach: BTreeMap<CellKey, Rational>,
}

impl ChainLaw {
    pub fn total_mass(&self) -> Rational {
        self.law.values().sum()
    }

    pub fn reach_of(&self, key: CellKey) -> Rational {
        self.reach.get(&key).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn to_measure(&self, h: Rational) -> Result<GridMeasure> {
        GridMeasure::new(h, self.law.iter().map(|(q, p)| (*q, p.clone())))
    }
}

/// Anything whose absorption law can be computed exactly.
pub trait AbsorbingChain {
    fn absorb(&self) -> Result<ChainLaw>;
}

impl AbsorbingChain for TabularRule {
    fn absorb(&self) -> Result<ChainLaw> {
        chain_law(self)
    }
}

impl AbsorbingChain for StoppingRule {
    /// Propagates mass through the cell table. Mass that would move past
    /// the largest tabulated range is reported as leakage.
    fn absorb(&self) -> Result<ChainLaw> {
        let origin = Quad { i: 0, x: 0, s: 0, sigma: Sign::Minus };
        let mut law = BTreeMap::new();
        let mut reach = BTreeMap::new();
        if self.origin_stop.is_positive() {
            law.insert(origin, self.origin_stop.clone());
        }
        reach.insert(CellKey::new(Sign::Minus, 0, 0), rational::one());

        let max_range = self.cells.keys().map(|k| k.range()).max().unwrap_or(0);
        let mut pending: BTreeMap<(i64, CellKey), Rational> = BTreeMap::new();
        let entering = (rational::one() - &self.origin_stop) / int(2);
        if entering.is_positive() {
            for k in CellKey::first() {
                pending.insert((k.range(), k), entering.clone());
            }
        }
        while let Some(((range, key), mass)) = pending.pop_first() {
            if range > max_range {
                let leaked: Rational = pending.values().sum::<Rational>() + &mass;
                return Err(Error::Leakage { absorbed: (rational::one() - leaked).to_string() });
            }
            reach.insert(key, mass.clone());
            let c = self.cell(key);
            if c.stop.is_positive() {
                for (&x, px) in &c.x_law {
                    let q = Quad { i: -key.a, x, s: key.b, sigma: key.side };
                    *law.entry(q).or_insert_with(Rational::zero) += &mass * &c.stop * px;
                }
            }
            for (next, p) in [(key.up(), &c.up), (key.down(), &c.down)] {
                if p.is_positive() {
                    *pending.entry((next.range(), next)).or_insert_with(Rational::zero) += &mass * p;
                }
            }
        }
        law.retain(|_, p| p.is_positive());
        Ok(ChainLaw { law, reach })
    }
}

/// Exact law of `(I, X, S, σ)` when `rule` stops the walk.
pub fn chain_law(rule: &TabularRule) -> Result<ChainLaw> {
    let mut law: BTreeMap<Quad, Rational> = BTreeMap::new();
    let mut reach: BTreeMap<CellKey, Rational> = BTreeMap::new();
    // Cells keyed by (range, side, i, s) so they are processed in order.
    let mut pending: BTreeMap<(i64, Sign, i64, i64), Rational> = BTreeMap::new();
    pending.insert((0, Sign::Minus, 0, 0), rational::one());

    while let Some(((_, side, i, s), inflow)) = pending.pop_first() {
        reach.insert(CellKey::new(side, -i, s), inflow.clone());
        let entry = match side {
            Sign::Plus => s,
            Sign::Minus => i,
        };
        let visits = expected_visits(rule, i, s, side, entry)?;
        for (k, n) in visits.iter().enumerate() {
            let pos = i + k as i64;
            let state = WalkState::new(pos, i, s, side);
            let stop = rule.stop_prob(&state);
            if stop.is_positive() && n.is_positive() {
                let q = Quad { i, x: pos, s, sigma: side };
                *law.entry(q).or_insert_with(Rational::zero) += &inflow * n * &stop;
            }
        }
        let half = ratio(1, 2);
        let leave = |pos: i64| {
            let n = &visits[(pos - i) as usize];
            let stop = rule.stop_prob(&WalkState::new(pos, i, s, side));
            &inflow * n * (rational::one() - stop) * &half
        };
        let up = leave(s);
        if up.is_positive() {
            *pending.entry((s + 1 - i, Sign::Plus, i, s + 1)).or_insert_with(Rational::zero) += up;
        }
        let down = leave(i);
        if down.is_positive() {
            *pending.entry((s - i + 1, Sign::Minus, i - 1, s)).or_insert_with(Rational::zero) += down;
        }
    }
    Ok(ChainLaw { law, reach })
}

/// Expected visits to each position of `[i, s]` for a walk entering at
/// `entry`, killed on stopping or on leaving the interval.
fn expected_visits(rule: &TabularRule, i: i64, s: i64, side: Sign, entry: i64) -> Result<Vec<Rational>> {
    let n = (s - i + 1) as usize;
    let go: Vec<Rational> = (i..=s)
        .map(|pos| (rational::one() - rule.stop_prob(&WalkState::new(pos, i, s, side))) / int(2))
        .collect();
    // N(q) - Σ_p N(p) Q(p, q) = 1{q = entry}
    let mut a = vec![vec![Rational::zero(); n]; n];
    for q in 0..n {
        a[q][q] = rational::one();
        if q > 0 {
            a[q][q - 1] -= &go[q - 1];
        }
        if q + 1 < n {
            a[q][q + 1] -= &go[q + 1];
        }
    }
    let mut rhs = vec![Rational::zero(); n];
    rhs[(entry - i) as usize] = rational::one();
    solve_exact(&a, &rhs).ok_or_else(|| Error::Unbounded(format!("walk never leaves cell [{i}, {s}]")))
}

/// Random tabular rule on `[-A, B]`: each interior state independently
/// stops with probability 0 (half the time) or one of 1/4, 1/2, 3/4, 1.
pub fn random_rule(box_a: i64, box_b: i64, seed: u64) -> Result<TabularRule> {
    let mut rng = stream_rng(seed, 0);
    let mut entries = Vec::new();
    for i in -box_a..=0 {
        for s in 0..=box_b {
            let sides: &[Sign] = match (i, s) {
                (0, 0) => &[Sign::Minus],
                (0, _) => &[Sign::Plus],
                (_, 0) => &[Sign::Minus],
                _ => &[Sign::Minus, Sign::Plus],
            };
            for &side in sides {
                for pos in i..=s {
                    if pos == -box_a || pos == box_b {
                        continue;
                    }
                    let p = match rng.random_range(0..8) {
                        0..=3 => continue,
                        4 => ratio(1, 4),
                        5 => ratio(1, 2),
                        6 => ratio(3, 4),
                        _ => rational::one(),
                    };
                    entries.push((WalkState::new(pos, i, s, side), p));
                }
            }
        }
    }
    TabularRule::new(box_a, box_b, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructor::derive_rule;
    use crate::measure::fixtures::m0;
    use std::collections::HashMap;

    /// Step-by-step propagation of the state distribution in floating
    /// point, as an independent check of the exact solver.
    fn forward_law(rule: &TabularRule) -> BTreeMap<Quad, f64> {
        let mut law = BTreeMap::new();
        let mut dist: HashMap<WalkState, f64> = [(WalkState::new(0, 0, 0, Sign::Minus), 1.0)].into();
        for _ in 0..20_000 {
            let mut next: HashMap<WalkState, f64> = HashMap::new();
            for (w, p) in dist {
                let stop = rational::to_f64(&rule.stop_prob(&w));
                *law.entry(Quad { i: w.i, x: w.pos, s: w.s, sigma: w.side }).or_insert(0.0) += p * stop;
                let go = p * (1.0 - stop) / 2.0;
                if go == 0.0 {
                    continue;
                }
                let up = if w.pos + 1 > w.s {
                    WalkState::new(w.pos + 1, w.i, w.pos + 1, Sign::Plus)
                } else {
                    WalkState::new(w.pos + 1, w.i, w.s, w.side)
                };
                let down = if w.pos - 1 < w.i {
                    WalkState::new(w.pos - 1, w.pos - 1, w.s, Sign::Minus)
                } else {
                    WalkState::new(w.pos - 1, w.i, w.s, w.side)
                };
                *next.entry(up).or_insert(0.0) += go;
                *next.entry(down).or_insert(0.0) += go;
            }
            dist = next;
            if dist.values().sum::<f64>() < 1e-14 {
                break;
            }
        }
        law.retain(|_, p| *p > 0.0);
        law
    }

    #[test]
    fn two_barrier_box_gives_m0() {
        let rule = TabularRule::new(1, 2, []).unwrap();
        let law = chain_law(&rule).unwrap().to_measure(int(1)).unwrap();
        assert_eq!(law, m0());
    }

    #[test]
    fn one_sided_exit_law() {
        let n = 6;
        let rule = TabularRule::new(n, 1, []).unwrap();
        let law = chain_law(&rule).unwrap().law;
        for k in 0..n {
            let q = Quad { i: -k, x: 1, s: 1, sigma: Sign::Plus };
            assert_eq!(law[&q], ratio(1, (k + 1) * (k + 2)));
        }
        assert_eq!(law[&Quad { i: -n, x: -n, s: 0, sigma: Sign::Minus }], ratio(1, n + 1));
    }

    #[test]
    fn matches_forward_propagation() {
        for seed in 0..6 {
            let rule = random_rule(3, 2, seed).unwrap();
            let exact = chain_law(&rule).unwrap();
            assert_eq!(exact.total_mass(), rational::one());
            let approx = forward_law(&rule);
            for q in exact.law.keys().chain(approx.keys()) {
                let e = exact.law.get(q).map(rational::to_f64).unwrap_or(0.0);
                let f = approx.get(q).copied().unwrap_or(0.0);
                assert!((e - f).abs() < 1e-9, "seed {seed} at {q}: {e} vs {f}");
            }
        }
    }

    #[test]
    fn random_rules_are_deterministic() {
        assert_eq!(random_rule(4, 4, 7).unwrap(), random_rule(4, 4, 7).unwrap());
        assert_ne!(random_rule(4, 4, 7).unwrap(), random_rule(4, 4, 8).unwrap());
    }

    #[test]
    fn rejects_bad_rules() {
        let w = WalkState::new(2, 0, 2, Sign::Plus);
        assert!(TabularRule::new(1, 2, [(w, ratio(1, 2))]).is_err());
        let w = WalkState::new(1, 0, 1, Sign::Minus);
        assert!(TabularRule::new(1, 2, [(w, ratio(1, 2))]).is_err());
        assert!(matches!(TabularRule::new(40, 40, []), Err(Error::Unbounded(_))));
    }

    #[test]
    fn json_round_trip() {
        let rule = random_rule(2, 3, 5).unwrap();
        assert_eq!(TabularRule::from_json_str(&rule.to_json_string()).unwrap(), rule);
    }

    #[test]
    fn derived_rule_reabsorbs_m0() {
        let chain = derive_rule(&m0()).unwrap().absorb().unwrap();
        assert_eq!(chain.to_measure(int(1)).unwrap(), m0());
    }

    #[test]
    fn cell_chain_reports_leakage() {
        let mut rule = derive_rule(&m0()).unwrap();
        rule.cells.remove(&CellKey::new(Sign::Plus, 0, 2));
        assert!(matches!(rule.absorb(), Err(Error::Leakage { .. })));
    }
}
