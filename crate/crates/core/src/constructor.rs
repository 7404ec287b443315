//! Randomized cell stopping rules and trajectory sampling.
//!
//! A consistent measure is turned into a chain on cells `(side, a, b)`:
//! on entering a cell the walk stops with probability `stop`, otherwise it
//! reaches the next maximum `b + 1` (`up`) or the next minimum `-a - 1`
//! (`down`). On stopping, the terminal value is drawn from the cell's
//! conditional law. The joint law of `(I, X, S, σ)` produced this way is
//! exactly the input measure.

use std::collections::{BTreeMap, HashMap};

use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consistency::{check_consistent, WindowTable};
use crate::measure::{GridMeasure, Quad, Sign};
use crate::rational::{self, int, Rational};
use crate::{Error, Result};

/// Extremal state of the range process: current maximum `b`, current
/// minimum `-a`, and which of the two was set last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub side: Sign,
    pub a: i64,
    pub b: i64,
}

impl CellKey {
    pub fn new(side: Sign, a: i64, b: i64) -> Self {
        CellKey { side, a, b }
    }

    /// Cell entered when the walk sets a new maximum `b + 1`.
    pub fn up(self) -> CellKey {
        CellKey::new(Sign::Plus, self.a, self.b + 1)
    }

    /// Cell entered when the walk sets a new minimum `-a - 1`.
    pub fn down(self) -> CellKey {
        CellKey::new(Sign::Minus, self.a + 1, self.b)
    }

    pub fn range(self) -> i64 {
        self.a + self.b
    }

    /// Position of the walk on entry.
    pub fn entry_level(self) -> i64 {
        match self.side {
            Sign::Plus => self.b,
            Sign::Minus => -self.a,
        }
    }

    /// Whether a walk can actually be in this cell (a `+` cell needs a
    /// positive maximum, a `-` cell a negative minimum).
    pub fn is_reachable_shape(self) -> bool {
        match self.side {
            Sign::Plus => self.b > 0 && self.a >= 0,
            Sign::Minus => self.a > 0 && self.b >= 0,
        }
    }

    /// The two cells of range one.
    pub fn first() -> [CellKey; 2] {
        [CellKey::new(Sign::Plus, 0, 1), CellKey::new(Sign::Minus, 1, 0)]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellRule {
    pub stop: Rational,
    pub up: Rational,
    pub down: Rational,
    /// Conditional law of the terminal value given a stop in this cell.
    pub x_law: BTreeMap<i64, Rational>,
}

impl CellRule {
    /// Unstopped walk: exits up before down with probability
    /// `(a+b+1)/(a+b+2)` from a `+` cell, and the mirror for `-`.
    pub fn natural(key: CellKey) -> CellRule {
        let n = key.range();
        let far = rational::ratio(n + 1, n + 2);
        let near = rational::ratio(1, n + 2);
        let (up, down) = match key.side {
            Sign::Plus => (far, near),
            Sign::Minus => (near, far),
        };
        CellRule { stop: Rational::zero(), up, down, x_law: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingRule {
    pub h: Rational,
    /// Probability of stopping at time zero.
    pub origin_stop: Rational,
    pub cells: BTreeMap<CellKey, CellRule>,
    /// Support range of the measure the rule was derived from.
    pub support_range: i64,
}

impl StoppingRule {
    /// Rule for `key`; cells absent from the table follow the natural walk.
    pub fn cell(&self, key: CellKey) -> CellRule {
        self.cells.get(&key).cloned().unwrap_or_else(|| CellRule::natural(key))
    }

    pub fn validate(&self) -> Result<()> {
        if !rational::is_probability(&self.origin_stop) {
            return Err(Error::InvalidRule(format!("origin_stop {} is not a probability", self.origin_stop)));
        }
        for (k, c) in &self.cells {
            let all = [&c.stop, &c.up, &c.down];
            if all.iter().any(|p| p.is_negative()) || c.stop.clone() + &c.up + &c.down != rational::one() {
                return Err(Error::InvalidRule(format!("cell {k:?} split does not form a distribution")));
            }
            if c.stop.is_positive() {
                let total: Rational = c.x_law.values().sum();
                if total != rational::one() || c.x_law.values().any(|p| p.is_negative()) {
                    return Err(Error::InvalidRule(format!("cell {k:?} terminal law is not a distribution")));
                }
                if c.x_law.keys().any(|&x| x < -k.a || x > k.b) {
                    return Err(Error::InvalidRule(format!("cell {k:?} terminal law leaves [-a, b]")));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: RuleFile = serde_json::from_str(text)?;
        let mut cells = BTreeMap::new();
        for c in file.cells {
            let side = Sign::try_from(c.side).map_err(Error::Parse)?;
            let mut x_law = BTreeMap::new();
            for e in c.x_law {
                x_law.insert(e.x, rational::parse(&e.p)?);
            }
            let rule = CellRule {
                stop: rational::parse(&c.stop)?,
                up: rational::parse(&c.up)?,
                down: rational::parse(&c.down)?,
                x_law,
            };
            if cells.insert(CellKey::new(side, c.a, c.b), rule).is_some() {
                return Err(Error::Parse(format!("duplicate cell ({}, {}, {})", c.side, c.a, c.b)));
            }
        }
        let rule = StoppingRule {
            h: rational::parse(&file.h)?,
            origin_stop: rational::parse(&file.origin_stop)?,
            cells,
            support_range: file.support_range,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn to_json_string(&self) -> String {
        let file = RuleFile {
            h: rational::format(&self.h),
            origin_stop: rational::format(&self.origin_stop),
            support_range: self.support_range,
            cells: self
                .cells
                .iter()
                .map(|(k, c)| CellRecord {
                    side: k.side.as_i64(),
                    a: k.a,
                    b: k.b,
                    stop: rational::format(&c.stop),
                    up: rational::format(&c.up),
                    down: rational::format(&c.down),
                    x_law: c
                        .x_law
                        .iter()
                        .map(|(&x, p)| XLawRecord { x, p: rational::format(p) })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("rule serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    h: String,
    origin_stop: String,
    support_range: i64,
    cells: Vec<CellRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellRecord {
    side: i64,
    a: i64,
    b: i64,
    stop: String,
    up: String,
    down: String,
    x_law: Vec<XLawRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct XLawRecord {
    x: i64,
    p: String,
}

/// Builds the cell stopping rule that realizes `m`.
///
/// Every cell with `0 < a + b <= R + 1` gets an entry. Cells that `m`
/// never reaches (ψ = 0) follow the natural walk.
pub fn derive_rule(m: &GridMeasure) -> Result<StoppingRule> {
    let report = check_consistent(m);
    if !report.consistent {
        return Err(Error::InconsistentMeasure {
            count: report.violations.len() + report.tail_violations.len(),
            first: report.describe_first(),
        });
    }

    let table = WindowTable::new(m);
    let origin = Quad { i: 0, x: 0, s: 0, sigma: Sign::Minus };
    let range = m.support_range();
    let mut cells = BTreeMap::new();

    for n in 1..=range + 1 {
        for a in 0..=n {
            for side in [Sign::Plus, Sign::Minus] {
                let key = CellKey::new(side, a, n - a);
                if !key.is_reachable_shape() {
                    continue;
                }
                let psi = table.psi(a, n - a, side)?;
                let (p0, mx) = table.cell_mass(side, a, n - a);
                let rule = if psi.is_zero() {
                    CellRule::natural(key)
                } else {
                    cell_rule(key, &psi, &p0, &mx, m)
                };
                cells.insert(key, rule);
            }
        }
    }

    let rule = StoppingRule {
        h: m.h().clone(),
        origin_stop: m.mass(&origin),
        cells,
        support_range: range,
    };
    check_absorption(&rule)?;
    Ok(rule)
}

fn cell_rule(key: CellKey, psi: &Rational, p0: &Rational, mx: &Rational, m: &GridMeasure) -> CellRule {
    let (a, b) = (key.a, key.b);
    let denom = int(a + b + 2);
    // (a+h+v) t0 and (b+h-v) t0 with v t0 = m(X; cell) / ψ, grid units.
    let lower_weight = (int(a + 1) * p0 + mx) / psi;
    let upper_weight = (int(b + 1) * p0 - mx) / psi;
    let (up, down) = match key.side {
        Sign::Plus => (
            (int(a + b + 1) - lower_weight) / &denom,
            (rational::one() - upper_weight) / &denom,
        ),
        Sign::Minus => (
            (rational::one() - lower_weight) / &denom,
            (int(a + b + 1) - upper_weight) / &denom,
        ),
    };
    let x_law = if p0.is_zero() {
        BTreeMap::new()
    } else {
        m.atoms()
            .filter(|(q, _)| q.i == -a && q.s == b && q.sigma == key.side)
            .map(|(q, p)| (q.x, p / p0))
            .collect()
    };
    CellRule { stop: p0 / psi, up, down, x_law }
}

/// Exact mass bookkeeping of the cell chain: everything that leaves the
/// origin must be absorbed inside the table.
fn check_absorption(rule: &StoppingRule) -> Result<()> {
    rule.validate()?;
    let mut reach: BTreeMap<CellKey, Rational> = BTreeMap::new();
    let entering = (rational::one() - &rule.origin_stop) / int(2);
    for k in CellKey::first() {
        reach.insert(k, entering.clone());
    }
    let mut absorbed = rule.origin_stop.clone();
    let max_range = rule.cells.keys().map(|k| k.range()).max().unwrap_or(0);
    let mut escaped = Rational::zero();
    while let Some((key, mass)) = reach.pop_first() {
        if mass.is_zero() {
            continue;
        }
        if key.range() > max_range {
            escaped += mass;
            continue;
        }
        let c = rule.cell(key);
        absorbed += &mass * &c.stop;
        for (next, p) in [(key.up(), &c.up), (key.down(), &c.down)] {
            if !p.is_zero() {
                *reach.entry(next).or_insert_with(Rational::zero) += &mass * p;
            }
        }
    }
    if absorbed != rational::one() || !escaped.is_zero() {
        return Err(Error::Leakage { absorbed: absorbed.to_string() });
    }
    Ok(())
}

/// A new running maximum or minimum, in grid units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Extreme {
    NewMax(i64),
    NewMin(i64),
}

/// Record sequence of a stopped walk: enough to evaluate every quantity
/// that depends on the order in which levels are first hit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Trajectory {
    pub extremes: Vec<Extreme>,
    pub x_final: i64,
    pub sigma: Sign,
}

impl Trajectory {
    pub fn stopped_at_origin() -> Self {
        Trajectory { extremes: Vec::new(), x_final: 0, sigma: Sign::Minus }
    }

    /// Builds a trajectory from its record sequence; `σ` is read off the
    /// last record.
    pub fn from_extremes(extremes: Vec<Extreme>, x_final: i64) -> Result<Self> {
        let sigma = match extremes.last() {
            Some(Extreme::NewMax(_)) => Sign::Plus,
            _ => Sign::Minus,
        };
        let t = Trajectory { extremes, x_final, sigma };
        t.validate()?;
        Ok(t)
    }

    pub fn max_level(&self) -> i64 {
        self.extremes
            .iter()
            .filter_map(|e| match e {
                Extreme::NewMax(l) => Some(*l),
                Extreme::NewMin(_) => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn min_level(&self) -> i64 {
        self.extremes
            .iter()
            .filter_map(|e| match e {
                Extreme::NewMin(l) => Some(*l),
                Extreme::NewMax(_) => None,
            })
            .min()
            .unwrap_or(0)
    }

    pub fn quad(&self) -> Quad {
        Quad { i: self.min_level(), x: self.x_final, s: self.max_level(), sigma: self.sigma }
    }

    /// Time rank at which `level` is first hit: 0 for the origin, `k + 1`
    /// for the `k`-th record; `None` if never hit.
    pub fn hit_rank(&self, level: i64) -> Option<usize> {
        if level == 0 {
            return Some(0);
        }
        self.extremes
            .iter()
            .position(|e| match *e {
                Extreme::NewMax(l) => level > 0 && l == level,
                Extreme::NewMin(l) => level < 0 && l == level,
            })
            .map(|k| k + 1)
    }

    /// Running minimum at the first hitting time of `level > 0`.
    pub fn min_before(&self, level: i64) -> Option<i64> {
        let rank = self.hit_rank(level)?;
        Some(self.extremes[..rank.saturating_sub(1)].iter().fold(0, |acc, e| match *e {
            Extreme::NewMin(l) => acc.min(l),
            Extreme::NewMax(_) => acc,
        }))
    }

    pub fn validate(&self) -> Result<()> {
        let (mut hi, mut lo) = (0i64, 0i64);
        for e in &self.extremes {
            match *e {
                Extreme::NewMax(l) if l == hi + 1 => hi = l,
                Extreme::NewMin(l) if l == lo - 1 => lo = l,
                other => {
                    return Err(Error::Parse(format!("record {other:?} does not extend the range by one step")))
                }
            }
        }
        let expected = match self.extremes.last() {
            Some(Extreme::NewMax(_)) => Sign::Plus,
            _ => Sign::Minus,
        };
        if self.sigma != expected {
            return Err(Error::Parse("signature does not match the last record".into()));
        }
        self.quad().validate()
    }

    /// Mirror image under `ξ -> -ξ`.
    pub fn reflect(&self) -> Trajectory {
        let extremes: Vec<Extreme> = self
            .extremes
            .iter()
            .map(|e| match *e {
                Extreme::NewMax(l) => Extreme::NewMin(-l),
                Extreme::NewMin(l) => Extreme::NewMax(-l),
            })
            .collect();
        let sigma = if extremes.is_empty() { Sign::Minus } else { self.sigma.flip() };
        Trajectory { extremes, x_final: -self.x_final, sigma }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SampleOptions {
    /// Largest range `S - I` (grid units) a trajectory may reach; defaults
    /// to the rule's support range plus 8.
    pub range_cap: Option<i64>,
}

struct CompiledCell {
    stop: f64,
    stop_or_up: f64,
    x_cdf: Vec<(i64, f64)>,
}

/// Floating-point view of a rule for fast sampling.
struct CompiledRule {
    origin_stop: f64,
    cells: HashMap<CellKey, CompiledCell>,
    cap: i64,
}

impl CompiledRule {
    fn new(rule: &StoppingRule, opts: &SampleOptions) -> Self {
        let cells = rule.cells.iter().map(|(k, c)| (*k, compile_cell(c))).collect();
        CompiledRule {
            origin_stop: rational::to_f64(&rule.origin_stop),
            cells,
            cap: opts.range_cap.unwrap_or(rule.support_range + 8),
        }
    }

    fn draw(&self, seed: u64, index: u64) -> Result<Trajectory> {
        let mut rng = stream_rng(seed, index);
        if rng.random::<f64>() < self.origin_stop {
            return Ok(Trajectory::stopped_at_origin());
        }
        let mut key = if rng.random::<f64>() < 0.5 {
            CellKey::new(Sign::Plus, 0, 1)
        } else {
            CellKey::new(Sign::Minus, 1, 0)
        };
        let mut extremes = vec![match key.side {
            Sign::Plus => Extreme::NewMax(1),
            Sign::Minus => Extreme::NewMin(-1),
        }];
        loop {
            if key.range() > self.cap {
                return Err(Error::NonTermination { index, cap: self.cap });
            }
            let natural;
            let cell = match self.cells.get(&key) {
                Some(c) => c,
                None => {
                    natural = compile_cell(&CellRule::natural(key));
                    &natural
                }
            };
            let u = rng.random::<f64>();
            if u < cell.stop {
                let v = rng.random::<f64>();
                let x = cell
                    .x_cdf
                    .iter()
                    .find(|(_, c)| v < *c)
                    .or(cell.x_cdf.last())
                    .map(|(x, _)| *x)
                    .unwrap_or(key.entry_level());
                return Ok(Trajectory { extremes, x_final: x, sigma: key.side });
            } else if u < cell.stop_or_up {
                key = key.up();
                extremes.push(Extreme::NewMax(key.b));
            } else {
                key = key.down();
                extremes.push(Extreme::NewMin(-key.a));
            }
        }
    }
}

fn compile_cell(c: &CellRule) -> CompiledCell {
    let stop = rational::to_f64(&c.stop);
    let mut acc = Rational::zero();
    let x_cdf = c
        .x_law
        .iter()
        .map(|(&x, p)| {
            acc += p;
            (x, rational::to_f64(&acc))
        })
        .collect();
    CompiledCell { stop, stop_or_up: rational::to_f64(&(c.stop.clone() + &c.up)), x_cdf }
}

/// Independent stream for trajectory `index`: ChaCha8 keyed by `seed`,
/// stream id `index`. Results do not depend on scheduling.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn sample(rule: &StoppingRule, n: u64, seed: u64) -> Result<Vec<Trajectory>> {
    sample_with(rule, n, seed, &SampleOptions::default())
}

pub fn sample_with(rule: &StoppingRule, n: u64, seed: u64, opts: &SampleOptions) -> Result<Vec<Trajectory>> {
    let compiled = CompiledRule::new(rule, opts);
    (0..n).into_par_iter().map(|k| compiled.draw(seed, k)).collect()
}

/// Samples `n` trajectories and keeps only the quad counts.
pub fn sample_counts(rule: &StoppingRule, n: u64, seed: u64, opts: &SampleOptions) -> Result<EmpiricalLaw> {
    let compiled = CompiledRule::new(rule, opts);
    let counts = (0..n)
        .into_par_iter()
        .try_fold(BTreeMap::new, |mut acc: BTreeMap<Quad, u64>, k| {
            let t = compiled.draw(seed, k)?;
            *acc.entry(t.quad()).or_insert(0) += 1;
            Ok::<_, Error>(acc)
        })
        .try_reduce(BTreeMap::new, |mut a, b| {
            for (q, c) in b {
                *a.entry(q).or_insert(0) += c;
            }
            Ok(a)
        })?;
    Ok(EmpiricalLaw { total: n, counts })
}

/// Frequency table of sampled quads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmpiricalLaw {
    pub total: u64,
    pub counts: BTreeMap<Quad, u64>,
}

impl EmpiricalLaw {
    pub fn frequencies(&self) -> BTreeMap<Quad, f64> {
        let n = self.total as f64;
        self.counts.iter().map(|(q, &c)| (*q, c as f64 / n)).collect()
    }

    pub fn tv_distance(&self, m: &GridMeasure) -> f64 {
        tv_distance(&self.frequencies(), m)
    }
}

pub fn empirical_law(trajs: &[Trajectory]) -> EmpiricalLaw {
    let mut counts = BTreeMap::new();
    for t in trajs {
        *counts.entry(t.quad()).or_insert(0) += 1;
    }
    EmpiricalLaw { total: trajs.len() as u64, counts }
}

/// `½ Σ |freq(q) - m(q)|` over the union of supports.
pub fn tv_distance(freq: &BTreeMap<Quad, f64>, m: &GridMeasure) -> f64 {
    let mut sum = 0.0;
    for (q, p) in m.atoms() {
        sum += (freq.get(q).copied().unwrap_or(0.0) - rational::to_f64(p)).abs();
    }
    for (q, f) in freq {
        if m.mass(q).is_zero() {
            sum += f.abs();
        }
    }
    0.5 * sum
}
