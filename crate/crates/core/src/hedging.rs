//! Barrier hedging variables.
//!
//! For a cell `(a, b)` on the `+` side, `Z` is the measure-side random
//! variable whose expectation is `h ψ₊ - m(b + h - X; cell)` (under the
//! uniform-integrability identities), and `Y` is a tradeable portfolio of
//! three forward positions, all opened when the walk first reaches `b`:
//!
//! 1. `h / (a + b + h)` units if the minimum so far is above `-a - h`,
//!    closed at `H_{-a-h}`;
//! 2. `-h / (a + b)` units if the minimum so far is above `-a`, closed at
//!    `H_{-a}`;
//! 3. one unit if the minimum so far equals `-a`, closed at the first of
//!    `H_{b+h}` and `H_{-a-h}`.
//!
//! Positions still open when the walk stops settle at `X`. Pathwise
//! `Y <= Z`, with equality except when the levels are hit in the order
//! `H_{-a} < H_b < H_{-a-h} < H_{b+h}`. The `-` side is the mirror image.
//!
//! Levels are integers in grid units; every value is returned in price
//! units (scaled by `h`).

use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;

use crate::constructor::{Extreme, Trajectory};
use crate::measure::{Quad, Sign};
use crate::rational::{int, ratio, Rational};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HedgeContext {
    pub a: i64,
    pub b: i64,
    pub h: Rational,
    pub side: Sign,
}

impl HedgeContext {
    pub fn new(a: i64, b: i64, h: Rational, side: Sign) -> Result<Self> {
        if a < 0 || b < 0 || a + b == 0 {
            return Err(Error::DegenerateWindow { a, b });
        }
        if h <= Rational::zero() {
            return Err(Error::Parse(format!("grid step must be positive, got {h}")));
        }
        Ok(HedgeContext { a, b, h, side })
    }

    /// The `+` context this one maps to under reflection.
    fn as_plus(&self) -> (i64, i64) {
        match self.side {
            Sign::Plus => (self.a, self.b),
            Sign::Minus => (self.b, self.a),
        }
    }
}

/// Every context with `0 < a + b <= max_range`, both sides.
pub fn all_contexts(max_range: i64, h: &Rational) -> Vec<HedgeContext> {
    let mut out = Vec::new();
    for side in [Sign::Plus, Sign::Minus] {
        for n in 1..=max_range {
            for a in 0..=n {
                out.push(HedgeContext { a, b: n - a, h: h.clone(), side });
            }
        }
    }
    out
}

/// First hitting ranks of the four levels `-a-1, -a, b, b+1` (grid units,
/// `+` orientation). Rank 0 is time zero; `None` means never hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HitOrder {
    pub below: Option<usize>,
    pub low: Option<usize>,
    pub high: Option<usize>,
    pub above: Option<usize>,
}

impl HitOrder {
    pub fn of(a: i64, b: i64, traj: &Trajectory) -> Self {
        HitOrder {
            below: traj.hit_rank(-a - 1),
            low: traj.hit_rank(-a),
            high: traj.hit_rank(b),
            above: traj.hit_rank(b + 1),
        }
    }

    /// `H_{-a} < H_b < H_{-a-h} < H_{b+h}`, the one order where the
    /// portfolio falls strictly short of `Z`.
    pub fn is_exceptional(&self) -> bool {
        match (self.low, self.high, self.below) {
            (Some(l), Some(hi), Some(bl)) => l < hi && hi < bl && self.above.is_none_or(|ab| bl < ab),
            _ => false,
        }
    }
}

/// `Z` of a `+` cell in grid units (h = 1).
fn z_plus_grid(a: i64, b: i64, q: &Quad) -> Rational {
    if q.s < b {
        return Rational::zero();
    }
    let gap = int(b - q.x);
    let mut z = Rational::zero();
    if q.i == -a {
        z += int(1);
    }
    if q.i > -a - 1 {
        z -= &gap / int(a + b + 1);
    }
    if q.i > -a {
        z += &gap / int(a + b);
    }
    if q.s == b && q.i == -a && q.sigma == Sign::Plus {
        z -= int(b + 1 - q.x);
    }
    z
}

/// `Y` of a `+` cell in grid units (h = 1).
fn y_plus_grid(a: i64, b: i64, t: &Trajectory) -> Rational {
    let Some(entry_rank) = t.hit_rank(b) else {
        return Rational::zero();
    };
    let min_at_entry = t.min_before(b).unwrap_or(0);
    // Level at which a position closed by reaching one of `exits` is
    // settled, or X if none is reached after entry.
    let exit_price = |exits: &[i64]| -> i64 {
        t.extremes[entry_rank.min(t.extremes.len())..]
            .iter()
            .find_map(|e| {
                let l = match *e {
                    Extreme::NewMax(l) | Extreme::NewMin(l) => l,
                };
                exits.contains(&l).then_some(l)
            })
            .unwrap_or(t.x_final)
    };
    let mut y = Rational::zero();
    if min_at_entry > -a - 1 {
        y += ratio(exit_price(&[-a - 1]) - b, a + b + 1);
    }
    if min_at_entry > -a {
        y -= ratio(exit_price(&[-a]) - b, a + b);
    }
    if min_at_entry == -a {
        y += int(exit_price(&[b + 1, -a - 1]) - b);
    }
    y
}

/// `Z` on a realized quad, price units.
pub fn z_of_quad(ctx: &HedgeContext, q: &Quad) -> Rational {
    let (a, b) = ctx.as_plus();
    let z = match ctx.side {
        Sign::Plus => z_plus_grid(a, b, q),
        Sign::Minus => z_plus_grid(a, b, &q.reflect()),
    };
    z * &ctx.h
}

pub fn eval_z(ctx: &HedgeContext, traj: &Trajectory) -> Rational {
    z_of_quad(ctx, &traj.quad())
}

/// Terminal value of the three-position portfolio, price units.
pub fn eval_y(ctx: &HedgeContext, traj: &Trajectory) -> Rational {
    let (a, b) = ctx.as_plus();
    let y = match ctx.side {
        Sign::Plus => y_plus_grid(a, b, traj),
        Sign::Minus => y_plus_grid(a, b, &traj.reflect()),
    };
    y * &ctx.h
}

/// Hit order of the `+` levels the context is evaluated on.
pub fn hit_order(ctx: &HedgeContext, traj: &Trajectory) -> HitOrder {
    let (a, b) = ctx.as_plus();
    match ctx.side {
        Sign::Plus => HitOrder::of(a, b, traj),
        Sign::Minus => HitOrder::of(a, b, &traj.reflect()),
    }
}

/// The seven generic level orders, plus the exceptional one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TableRow {
    /// `H_b < H_{b+h} < ∞ = H_{-a}`
    UpThroughNoLow = 1,
    /// `H_b < ∞ = H_{b+h} = H_{-a}`
    StopAtHigh = 2,
    /// `H_{-a} < H_b < H_{b+h} < ∞`
    LowThenUpThrough = 3,
    /// `H_{-a} < H_b < ∞ = H_{b+h}`, `σ = +`
    LowThenHigh = 4,
    /// `H_b < H_{-a} < H_{b+h} < ∞`
    HighLowUpThrough = 5,
    /// `H_b < H_{-a} < ∞ = H_{b+h}`, `σ = -`
    HighThenLow = 6,
    /// `H_b < H_{b+h} < H_{-a} < ∞`
    UpThroughThenLow = 7,
}

impl TableRow {
    pub const ALL: [TableRow; 7] = [
        TableRow::UpThroughNoLow,
        TableRow::StopAtHigh,
        TableRow::LowThenUpThrough,
        TableRow::LowThenHigh,
        TableRow::HighLowUpThrough,
        TableRow::HighThenLow,
        TableRow::UpThroughThenLow,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    /// Record sequence realizing the row for a `+` cell with `a, b >= 1`.
    pub fn extremes(self, a: i64, b: i64) -> Vec<Extreme> {
        let mins = |to: i64| (1..=to).map(|l| Extreme::NewMin(-l));
        let maxs = |from: i64, to: i64| (from..=to).map(Extreme::NewMax);
        match self {
            TableRow::UpThroughNoLow => mins(a - 1).chain(maxs(1, b + 1)).collect(),
            TableRow::StopAtHigh => mins(a - 1).chain(maxs(1, b)).collect(),
            TableRow::LowThenUpThrough => mins(a).chain(maxs(1, b + 1)).collect(),
            TableRow::LowThenHigh => mins(a).chain(maxs(1, b)).collect(),
            TableRow::HighLowUpThrough => maxs(1, b).chain(mins(a)).chain(maxs(b + 1, b + 1)).collect(),
            TableRow::HighThenLow => maxs(1, b).chain(mins(a)).collect(),
            TableRow::UpThroughThenLow => maxs(1, b + 1).chain(mins(a)).collect(),
        }
    }

    /// Every trajectory of this row, one per terminal value in `[I, S]`.
    pub fn trajectories(self, a: i64, b: i64) -> Vec<Trajectory> {
        terminal_sweep(self.extremes(a, b))
    }
}

/// `H_{-a} < H_b < H_{-a-h} < H_{b+h}` record sequences, with and
/// without the final new maximum.
pub fn exceptional_trajectories(a: i64, b: i64) -> Vec<Trajectory> {
    let mut base: Vec<Extreme> = (1..=a).map(|l| Extreme::NewMin(-l)).collect();
    base.extend((1..=b).map(Extreme::NewMax));
    base.push(Extreme::NewMin(-a - 1));
    let mut out = terminal_sweep(base.clone());
    base.push(Extreme::NewMax(b + 1));
    out.extend(terminal_sweep(base));
    out
}

fn terminal_sweep(extremes: Vec<Extreme>) -> Vec<Trajectory> {
    let probe = Trajectory::from_extremes(extremes.clone(), 0).expect("row sequences are valid");
    let (lo, hi) = (probe.min_level(), probe.max_level());
    (lo..=hi)
        .map(|x| Trajectory { extremes: extremes.clone(), x_final: x, sigma: probe.sigma })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TableEntry {
    pub row: u8,
    pub a: i64,
    pub b: i64,
    #[serde(serialize_with = "crate::consistency::ser_rational")]
    pub h: Rational,
    pub x: i64,
    #[serde(serialize_with = "crate::consistency::ser_rational")]
    pub z: Rational,
    #[serde(serialize_with = "crate::consistency::ser_rational")]
    pub y: Rational,
}

impl TableEntry {
    pub fn matches(&self) -> bool {
        self.z == self.y
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TableReport {
    pub entries: Vec<TableEntry>,
    /// Exceptional-order evaluations: `Y - Z` should be `-(a + b + 2h)`.
    pub exceptional: Vec<TableEntry>,
}

impl TableReport {
    pub fn rows_match(&self) -> bool {
        self.entries.iter().all(TableEntry::matches)
    }

    pub fn exceptional_gap_ok(&self) -> bool {
        self.exceptional.iter().all(|e| {
            let expected = -(int(e.a + e.b) * &e.h + int(2) * &e.h);
            e.y.clone() - &e.z == expected
        })
    }

    pub fn passed(&self) -> bool {
        self.rows_match() && self.exceptional_gap_ok()
    }
}

/// Evaluates all seven rows and the exceptional order for one `+` cell,
/// sweeping the terminal value over `[I, S]`.
pub fn verify_table(a: i64, b: i64, h: &Rational) -> Result<TableReport> {
    if a < 1 || b < 1 {
        return Err(Error::DegenerateWindow { a, b });
    }
    let ctx = HedgeContext::new(a, b, h.clone(), Sign::Plus)?;
    let entry = |row: u8, t: &Trajectory| TableEntry {
        row,
        a,
        b,
        h: h.clone(),
        x: t.x_final,
        z: eval_z(&ctx, t),
        y: eval_y(&ctx, t),
    };
    let mut entries = Vec::new();
    for row in TableRow::ALL {
        for t in row.trajectories(a, b) {
            entries.push(entry(row.number(), &t));
        }
    }
    let exceptional = exceptional_trajectories(a, b).iter().map(|t| entry(0, t)).collect();
    Ok(TableReport { entries, exceptional })
}

#[derive(Debug, Clone, Serialize)]
pub struct DominationViolation {
    pub a: i64,
    pub b: i64,
    pub side: Sign,
    pub quad: Quad,
    #[serde(serialize_with = "crate::consistency::ser_rational")]
    pub z: Rational,
    #[serde(serialize_with = "crate::consistency::ser_rational")]
    pub y: Rational,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DominationReport {
    pub checked: u64,
    /// Pairs with `Y > Z`.
    pub violations: Vec<DominationViolation>,
    /// Pairs with `Y < Z`.
    pub strict_gaps: u64,
    /// Strict gaps whose hit order is not the exceptional one.
    pub unexpected_gaps: Vec<DominationViolation>,
}

impl DominationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.unexpected_gaps.is_empty()
    }

    fn merge(mut self, other: DominationReport) -> DominationReport {
        self.checked += other.checked;
        self.strict_gaps += other.strict_gaps;
        self.violations.extend(other.violations);
        self.unexpected_gaps.extend(other.unexpected_gaps);
        self
    }
}

/// Checks `Y <= Z` for every context against every trajectory.
pub fn verify_domination(ctxs: &[HedgeContext], trajs: &[Trajectory]) -> DominationReport {
    trajs
        .par_iter()
        .map(|t| {
            let mut rep = DominationReport::default();
            for ctx in ctxs {
                let z = eval_z(ctx, t);
                let y = eval_y(ctx, t);
                rep.checked += 1;
                if y == z {
                    continue;
                }
                let record = || DominationViolation {
                    a: ctx.a,
                    b: ctx.b,
                    side: ctx.side,
                    quad: t.quad(),
                    z: z.clone(),
                    y: y.clone(),
                };
                if y > z {
                    rep.violations.push(record());
                } else {
                    rep.strict_gaps += 1;
                    if !hit_order(ctx, t).is_exceptional() {
                        rep.unexpected_gaps.push(record());
                    }
                }
            }
            rep
        })
        .reduce(DominationReport::default, DominationReport::merge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::fixtures::m0;
    use proptest::prelude::*;
    use Extreme::*;

    fn plus(a: i64, b: i64) -> HedgeContext {
        HedgeContext::new(a, b, int(1), Sign::Plus).unwrap()
    }

    fn traj(ext: Vec<Extreme>, x: i64) -> Trajectory {
        Trajectory::from_extremes(ext, x).unwrap()
    }

    #[test]
    fn below_barrier_is_zero() {
        let t = traj(vec![NewMax(1), NewMin(-1)], 0);
        assert_eq!(eval_z(&plus(1, 2), &t), int(0));
        assert_eq!(eval_y(&plus(1, 2), &t), int(0));
    }

    #[test]
    fn worked_rows() {
        let ctx = plus(1, 2);
        let row3 = traj(vec![NewMin(-1), NewMax(1), NewMax(2), NewMax(3)], 0);
        assert_eq!(eval_z(&ctx, &row3), ratio(1, 2));
        assert_eq!(eval_y(&ctx, &row3), ratio(1, 2));
        let row4 = traj(vec![NewMin(-1), NewMax(1), NewMax(2)], 1);
        assert_eq!(eval_z(&ctx, &row4), ratio(-5, 4));
        assert_eq!(eval_y(&ctx, &row4), ratio(-5, 4));
        let row1 = traj(vec![NewMax(1), NewMax(2), NewMax(3)], 1);
        assert_eq!(eval_z(&ctx, &row1), ratio(1, 12));
        assert_eq!(eval_y(&ctx, &row1), ratio(1, 12));
        let row5 = traj(vec![NewMax(1), NewMax(2), NewMin(-1), NewMax(3)], 0);
        assert_eq!(eval_z(&ctx, &row5), ratio(1, 2));
        assert_eq!(eval_y(&ctx, &row5), ratio(1, 2));
    }

    #[test]
    fn exceptional_order() {
        let ctx = plus(1, 2);
        let t = traj(vec![NewMin(-1), NewMax(1), NewMax(2), NewMin(-2), NewMax(3)], 0);
        assert!(hit_order(&ctx, &t).is_exceptional());
        assert_eq!(eval_z(&ctx, &t), int(0));
        assert_eq!(eval_y(&ctx, &t), int(-5));
    }

    #[test]
    fn penultimate_row_uses_signature() {
        // Same (I, S) as row 4 but the minimum came last: no cell term.
        let ctx = plus(1, 2);
        let t = traj(vec![NewMax(1), NewMax(2), NewMin(-1)], 0);
        assert_eq!(t.sigma, Sign::Minus);
        assert_eq!(eval_z(&ctx, &t), ratio(1, 2));
        assert_eq!(eval_y(&ctx, &t), ratio(1, 2));
    }

    #[test]
    fn table_holds_for_small_cells() {
        for a in 1..4 {
            for b in 1..4 {
                let rep = verify_table(a, b, &ratio(1, 3)).unwrap();
                assert!(rep.passed(), "cell ({a}, {b})");
            }
        }
    }

    #[test]
    fn minus_side_is_the_mirror() {
        let t = traj(vec![NewMax(1), NewMin(-1), NewMin(-2), NewMax(2)], 1);
        let minus = HedgeContext::new(2, 1, int(1), Sign::Minus).unwrap();
        let mirrored = HedgeContext::new(1, 2, int(1), Sign::Plus).unwrap();
        assert_eq!(eval_z(&minus, &t), eval_z(&mirrored, &t.reflect()));
        assert_eq!(eval_y(&minus, &t), eval_y(&mirrored, &t.reflect()));
    }

    #[test]
    fn point_mass_trajectories_vanish() {
        let t = Trajectory::stopped_at_origin();
        for ctx in all_contexts(3, &int(1)) {
            assert_eq!(eval_z(&ctx, &t), int(0));
            assert_eq!(eval_y(&ctx, &t), int(0));
        }
    }

    #[test]
    fn m0_expectation_of_z_is_slack() {
        // Under a consistent UI law E[Z] = hψ - m(b + h - X; cell) >= 0.
        let m = m0();
        let table = crate::consistency::WindowTable::new(&m);
        for ctx in all_contexts(3, &int(1)) {
            let ez = m.expectation(|q| z_of_quad(&ctx, q));
            let stats = table.cell_stats(ctx.side, ctx.a, ctx.b).unwrap();
            assert_eq!(ez, stats.rhs_he1 - stats.lhs_he1, "{ctx:?}");
        }
    }

    fn arb_trajectory() -> impl Strategy<Value = Trajectory> {
        (proptest::collection::vec(any::<bool>(), 0..10), any::<u32>()).prop_map(|(steps, pick)| {
            let (mut hi, mut lo) = (0, 0);
            let ext: Vec<Extreme> = steps
                .into_iter()
                .map(|up| {
                    if up {
                        hi += 1;
                        NewMax(hi)
                    } else {
                        lo -= 1;
                        NewMin(lo)
                    }
                })
                .collect();
            let x = lo + (pick as i64).rem_euclid(hi - lo + 1);
            Trajectory::from_extremes(ext, x).unwrap()
        })
    }

    proptest! {
        #[test]
        fn y_never_exceeds_z(t in arb_trajectory(), hn in 1i64..5, hd in 1i64..5) {
            let ctxs = all_contexts(6, &ratio(hn, hd));
            let rep = verify_domination(&ctxs, &[t]);
            prop_assert!(rep.passed(), "{:?}", rep);
        }

        #[test]
        fn off_event_zeros(t in arb_trajectory(), a in 0i64..4, b in 1i64..4) {
            let ctx = plus(a, b);
            let q = t.quad();
            if q.s < b || q.i <= -a - 1 {
                prop_assert_eq!(eval_z(&ctx, &t), int(0));
            }
            if q.s < b {
                prop_assert_eq!(eval_y(&ctx, &t), int(0));
            }
        }
    }
}
