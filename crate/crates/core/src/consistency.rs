//! Window algebra φ/ψ, the per-cell HE1 inequalities, and the complete
//! consistency decision for finitely supported measures.
//!
//! Event conventions are fixed here and nowhere else:
//!
//! - φ windows use the strict event `{S < b, I > -a}`;
//! - the `(S, X)` and tail identities use the non-strict events
//!   `{S >= b}` and `{I <= -a}`.
//!
//! Cells are addressed by `(side, a, b)`: current maximum `b`, current
//! minimum `-a`, and which of the two was set last.

use std::collections::BTreeMap;

use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::measure::{GridMeasure, Sign, SxMarginal};
use crate::rational::{self, int, Rational};
use crate::{Error, Result};

/// Precomputed window and cell aggregates of one measure.
///
/// Every φ evaluation is O(1) after construction.
pub struct WindowTable<'a> {
    m: &'a GridMeasure,
    a0: i64,
    b0: i64,
    // cum[b][a] = (m(S < b, I > -a), m(X; S < b, I > -a)), clamped to the support.
    cum: Vec<Vec<(Rational, Rational)>>,
    // (side, a, b) -> (m(cell), m(X; cell))
    cells: BTreeMap<(Sign, i64, i64), (Rational, Rational)>,
}

impl<'a> WindowTable<'a> {
    pub fn new(m: &'a GridMeasure) -> Self {
        let a0 = -m.min_i();
        let b0 = m.max_s();
        let (nb, na) = ((b0 + 2) as usize, (a0 + 2) as usize);

        let mut grid = vec![vec![(Rational::zero(), Rational::zero()); na]; nb];
        let mut cells: BTreeMap<(Sign, i64, i64), (Rational, Rational)> = BTreeMap::new();
        for (q, p) in m.atoms() {
            let cell = &mut grid[q.s as usize][(-q.i) as usize];
            cell.0 += p;
            cell.1 += p * int(q.x);
            let e = cells
                .entry((q.sigma, -q.i, q.s))
                .or_insert_with(|| (Rational::zero(), Rational::zero()));
            e.0 += p;
            e.1 += p * int(q.x);
        }

        let mut cum = vec![vec![(Rational::zero(), Rational::zero()); na]; nb];
        for b in 1..nb {
            for a in 1..na {
                let (g0, g1) = &grid[b - 1][a - 1];
                let mass = g0 + &cum[b - 1][a].0 + &cum[b][a - 1].0 - &cum[b - 1][a - 1].0;
                let xsum = g1 + &cum[b - 1][a].1 + &cum[b][a - 1].1 - &cum[b - 1][a - 1].1;
                cum[b][a] = (mass, xsum);
            }
        }

        WindowTable { m, a0, b0, cum, cells }
    }

    pub fn measure(&self) -> &GridMeasure {
        self.m
    }

    /// `(m(S < b, I > -a), m(X; S < b, I > -a))`.
    pub fn window(&self, b: i64, a: i64) -> (&Rational, &Rational) {
        let bi = b.clamp(0, self.b0 + 1) as usize;
        let ai = a.clamp(0, self.a0 + 1) as usize;
        let (p, x) = &self.cum[bi][ai];
        (p, x)
    }

    /// `(m(cell), m(X; cell))` for the stopping cell `S = b, I = -a, σ = side`.
    pub fn cell_mass(&self, side: Sign, a: i64, b: i64) -> (Rational, Rational) {
        self.cells
            .get(&(side, a, b))
            .cloned()
            .unwrap_or_else(|| (Rational::zero(), Rational::zero()))
    }

    /// φ(b, -a) for `Plus`, φ(-a, b) for `Minus`.
    pub fn phi(&self, b: i64, a: i64, orientation: Sign) -> Result<Rational> {
        if a < 0 || b < 0 || a + b == 0 {
            return Err(Error::DegenerateWindow { a, b });
        }
        let (p, x) = self.window(b, a);
        let num = match orientation {
            Sign::Plus => int(a) - (int(a) * p + x),
            Sign::Minus => int(b) - (int(b) * p - x),
        };
        Ok(num / int(a + b))
    }

    /// ψ₊(-a, b) = φ(b, -a-1) - φ(b, -a); ψ₋(-a, b) = φ(-a, b+1) - φ(-a, b).
    pub fn psi(&self, a: i64, b: i64, side: Sign) -> Result<Rational> {
        Ok(match side {
            Sign::Plus => self.phi(b, a + 1, Sign::Plus)? - self.phi(b, a, Sign::Plus)?,
            Sign::Minus => self.phi(b + 1, a, Sign::Minus)? - self.phi(b, a, Sign::Minus)?,
        })
    }

    pub fn cell_stats(&self, side: Sign, a: i64, b: i64) -> Result<CellStats> {
        let psi = self.psi(a, b, side)?;
        let (p0, mx) = self.cell_mass(side, a, b);
        let lhs_grid = match side {
            Sign::Plus => int(b + 1) * &p0 - &mx,
            Sign::Minus => int(a + 1) * &p0 + &mx,
        };
        let v = (!p0.is_zero()).then(|| &mx / &p0);
        let theta = psi.is_positive().then(|| &lhs_grid / &psi);
        let h = self.m.h();
        Ok(CellStats {
            side,
            a,
            b,
            lhs_he1: &lhs_grid * h,
            rhs_he1: &psi * h,
            psi,
            p0,
            mx,
            v,
            theta,
        })
    }
}

/// Derived statistics of one cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellStats {
    pub side: Sign,
    pub a: i64,
    pub b: i64,
    /// ψ_side(-a, b).
    pub psi: Rational,
    /// Mass stopped in the cell, `m(S = b, I = -a, σ = side)`.
    pub p0: Rational,
    /// `m(X; S = b, I = -a, σ = side)` in grid units.
    pub mx: Rational,
    /// Conditional mean of `X` in the cell; `None` when `p0 = 0`.
    pub v: Option<Rational>,
    /// Barrier randomization probability; `None` unless ψ > 0.
    pub theta: Option<Rational>,
    /// `m(b+h-X; cell)` (side +) or `m(a+h+X; cell)` (side -), price units.
    pub lhs_he1: Rational,
    /// `h ψ_side(-a, b)`, price units.
    pub rhs_he1: Rational,
}

impl CellStats {
    pub fn holds(&self) -> bool {
        self.lhs_he1 <= self.rhs_he1
    }
}

pub fn phi(m: &GridMeasure, b: i64, a: i64, orientation: Sign) -> Result<Rational> {
    WindowTable::new(m).phi(b, a, orientation)
}

pub fn psi(m: &GridMeasure, a: i64, b: i64, side: Sign) -> Result<Rational> {
    WindowTable::new(m).psi(a, b, side)
}

pub fn cell_stats(m: &GridMeasure, side: Sign, a: i64, b: i64) -> Result<CellStats> {
    WindowTable::new(m).cell_stats(side, a, b)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub side: Sign,
    pub a: i64,
    pub b: i64,
    #[serde(serialize_with = "ser_rational")]
    pub lhs: Rational,
    #[serde(serialize_with = "ser_rational")]
    pub rhs: Rational,
}

impl Violation {
    pub fn excess(&self) -> Rational {
        &self.lhs - &self.rhs
    }
}

/// A tail identity that every finitely supported consistent law satisfies
/// (the stopped walk is bounded, hence uniformly integrable).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailViolation {
    /// `m(X) != 0`.
    Mean {
        #[serde(serialize_with = "ser_rational")]
        value: Rational,
    },
    /// `m(b - X; S >= b) != 0`.
    UpperLevel {
        b: i64,
        #[serde(serialize_with = "ser_rational")]
        value: Rational,
    },
    /// `m(a + X; I <= -a) != 0`.
    LowerLevel {
        a: i64,
        #[serde(serialize_with = "ser_rational")]
        value: Rational,
    },
}

impl TailViolation {
    pub fn value(&self) -> &Rational {
        match self {
            TailViolation::Mean { value }
            | TailViolation::UpperLevel { value, .. }
            | TailViolation::LowerLevel { value, .. } => value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConsistencyReport {
    pub consistent: bool,
    pub violations: Vec<Violation>,
    pub tail_violations: Vec<TailViolation>,
    /// Largest `a + b` examined.
    pub checked_box: i64,
}

impl ConsistencyReport {
    /// Largest violation size, as a float (0 when consistent).
    pub fn worst_excess(&self) -> f64 {
        let cells = self.violations.iter().map(|v| rational::to_f64(&v.excess()));
        let tails = self.tail_violations.iter().map(|t| rational::to_f64(t.value()).abs());
        cells.chain(tails).fold(0.0, f64::max)
    }

    pub fn describe_first(&self) -> String {
        if let Some(v) = self.violations.first() {
            format!("cell ({}, a={}, b={}): lhs {} > rhs {}", v.side.symbol(), v.a, v.b, v.lhs, v.rhs)
        } else if let Some(t) = self.tail_violations.first() {
            format!("{t:?}")
        } else {
            "none".to_string()
        }
    }
}

/// Decides consistency of `m`.
///
/// Checks HE1 on both sides for every cell with `0 < a + b <= R + 1`,
/// `R = max(S) - min(I)`, together with the tail identities. Beyond that
/// box both sides of HE1 vanish once the tail identities hold.
pub fn check_consistent(m: &GridMeasure) -> ConsistencyReport {
    let table = WindowTable::new(m);
    let reach = m.support_range() + 1;
    let mut violations = Vec::new();
    for n in 1..=reach {
        for a in 0..=n {
            for side in [Sign::Plus, Sign::Minus] {
                let stats = table.cell_stats(side, a, n - a).expect("a + b > 0");
                if !stats.holds() {
                    violations.push(Violation {
                        side,
                        a,
                        b: n - a,
                        lhs: stats.lhs_he1,
                        rhs: stats.rhs_he1,
                    });
                }
            }
        }
    }
    let tail_violations = tail_identities(m);
    ConsistencyReport {
        consistent: violations.is_empty() && tail_violations.is_empty(),
        violations,
        tail_violations,
        checked_box: reach,
    }
}

fn tail_identities(m: &GridMeasure) -> Vec<TailViolation> {
    let mut out = Vec::new();
    let mean = m.expectation(|q| int(q.x));
    if !mean.is_zero() {
        out.push(TailViolation::Mean { value: mean });
    }
    for b in 1..=m.max_s() {
        let value = m.expectation(|q| if q.s >= b { int(b - q.x) } else { Rational::zero() });
        if !value.is_zero() {
            out.push(TailViolation::UpperLevel { b, value });
        }
    }
    for a in 1..=-m.min_i() {
        let value = m.expectation(|q| if q.i <= -a { int(a + q.x) } else { Rational::zero() });
        if !value.is_zero() {
            out.push(TailViolation::LowerLevel { a, value });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SxMode {
    /// Almost-surely finite stopping: `b μ(S >= b) >= μ(X; S >= b)`, `b > 0`.
    Stopped,
    /// Uniformly integrable: equality for every `b >= 0` (so `μ(X) = 0`).
    UniformlyIntegrable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SxLevel {
    pub b: i64,
    /// `b μ(S >= b)`.
    #[serde(serialize_with = "ser_rational")]
    pub lhs: Rational,
    /// `μ(X; S >= b)`.
    #[serde(serialize_with = "ser_rational")]
    pub rhs: Rational,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SxReport {
    pub mode: SxMode,
    pub pass: bool,
    #[serde(serialize_with = "ser_rational")]
    pub mean: Rational,
    pub levels: Vec<SxLevel>,
}

/// Checks the maximum/terminal-value conditions on an `(S, X)` marginal,
/// in grid units.
pub fn check_sx(mu: &SxMarginal, mode: SxMode) -> SxReport {
    let max_s = mu.atoms.keys().map(|&(s, _)| s).max().unwrap_or(0);
    let mean: Rational = mu.atoms.iter().map(|(&(_, x), p)| p * int(x)).sum();
    let first = match mode {
        SxMode::Stopped => 1,
        SxMode::UniformlyIntegrable => 0,
    };
    let levels: Vec<SxLevel> = (first..=max_s)
        .map(|b| {
            let (mut tail, mut xsum) = (Rational::zero(), Rational::zero());
            for (&(s, x), p) in &mu.atoms {
                if s >= b {
                    tail += p;
                    xsum += p * int(x);
                }
            }
            let lhs = int(b) * tail;
            let ok = match mode {
                SxMode::Stopped => lhs >= xsum,
                SxMode::UniformlyIntegrable => lhs == xsum,
            };
            SxLevel { b, lhs, rhs: xsum, ok }
        })
        .collect();
    let pass = levels.iter().all(|l| l.ok);
    SxReport { mode, pass, mean, levels }
}

pub(crate) fn ser_rational<S: serde::Serializer>(r: &Rational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&rational::format(r))
}
