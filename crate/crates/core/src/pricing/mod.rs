//! Model-free price bounds and robust hedges.
//!
//! The largest price of a payoff `G(I, X, S, σ)` over all stopped-walk laws
//! that match a finite set of call prices is a linear program in the law
//! `m` on a finite box of quads. Its dual is a superhedge: cash, calls,
//! forwards opened at new highs and lows, and the barrier portfolios `Y`
//! of the hedging module.

pub mod simplex;

use std::collections::BTreeMap;

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::constructor::{derive_rule, sample, CellKey, Trajectory};
use crate::hedging::{eval_y, z_of_quad, HedgeContext};
use crate::linalg::solve_exact;
use crate::measure::{box_quads, GridMeasure, Quad, Sign};
use crate::rational::{self, int, Rational};
use crate::{Error, Result};

use simplex::{maximize, solve_dense, StandardLp};

/// Quoted call prices on a grid, with the box the law is confined to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Market {
    pub h: Rational,
    pub box_a: i64,
    pub box_b: i64,
    /// `(K, C(K))`, strikes in price units.
    pub calls: Vec<(Rational, Rational)>,
}

impl Market {
    pub fn new(h: Rational, box_a: i64, box_b: i64, calls: Vec<(Rational, Rational)>) -> Result<Self> {
        if !h.is_positive() {
            return Err(Error::Parse(format!("grid step must be positive, got {h}")));
        }
        if box_a < 1 || box_b < 1 {
            return Err(Error::BoxTooSmall(format!("box ({box_a}, {box_b}) must have A, B >= 1")));
        }
        let lo = -int(box_a) * &h;
        let hi = int(box_b) * &h;
        for (k, _) in &calls {
            if k < &lo || k > &hi {
                return Err(Error::BoxTooSmall(format!("strike {k} outside [{lo}, {hi}]")));
            }
        }
        Ok(Market { h, box_a, box_b, calls })
    }

    /// Call prices implied by `m`.
    pub fn from_measure(m: &GridMeasure, strikes: &[Rational], box_a: i64, box_b: i64) -> Result<Self> {
        if m.min_i() < -box_a || m.max_s() > box_b {
            return Err(Error::BoxTooSmall(format!("measure support exceeds box ({box_a}, {box_b})")));
        }
        let h = m.h().clone();
        let calls = strikes
            .iter()
            .map(|k| (k.clone(), m.expectation(|q| call_payoff(&(int(q.x) * &h), k))))
            .collect();
        Market::new(h, box_a, box_b, calls)
    }

    /// Departures from a decreasing convex call curve. Reported only.
    pub fn shape_warnings(&self) -> Vec<String> {
        let mut sorted = self.calls.clone();
        sorted.sort();
        let mut out = Vec::new();
        for w in sorted.windows(2) {
            if w[1].1 > w[0].1 {
                out.push(format!("C({}) = {} exceeds C({}) = {}", w[1].0, w[1].1, w[0].0, w[0].1));
            }
        }
        for w in sorted.windows(3) {
            let s1 = (&w[1].1 - &w[0].1) / (&w[1].0 - &w[0].0);
            let s2 = (&w[2].1 - &w[1].1) / (&w[2].0 - &w[1].0);
            if s2 < s1 {
                out.push(format!("call prices not convex around K = {}", w[1].0));
            }
        }
        out
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: MarketFile = serde_json::from_str(text)?;
        let calls = file
            .calls
            .iter()
            .map(|c| Ok((rational::parse(&c.k)?, rational::parse(&c.c)?)))
            .collect::<Result<Vec<_>>>()?;
        Market::new(rational::parse(&file.h)?, file.r#box[0], file.r#box[1], calls)
    }

    pub fn to_json_string(&self) -> String {
        let file = MarketFile {
            h: rational::format(&self.h),
            r#box: [self.box_a, self.box_b],
            calls: self
                .calls
                .iter()
                .map(|(k, c)| CallRecord { k: rational::format(k), c: rational::format(c) })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("market serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketFile {
    h: String,
    r#box: [i64; 2],
    calls: Vec<CallRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CallRecord {
    #[serde(rename = "K")]
    k: String,
    #[serde(rename = "C")]
    c: String,
}

fn call_payoff(x: &Rational, k: &Rational) -> Rational {
    if x > k {
        x - k
    } else {
        Rational::zero()
    }
}

/// Payoff `G(I, X, S, σ)`; levels in grid units, values in price units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PayoffSpec {
    /// `(S - I) h`
    Range,
    /// `(S - X) h`
    LookbackMax,
    /// `1{S >= b}`
    DigitalMax(i64),
    /// `1{I <= -a}`
    DigitalMin(i64),
    /// `1{σ = sign}`
    SignatureDigital(Sign),
    /// Explicit values; quads missing from the table take `default`.
    Table { values: BTreeMap<Quad, Rational>, default: Option<Rational> },
}

impl PayoffSpec {
    /// Tabulates `f` over every quad of the box.
    pub fn from_fn(box_a: i64, box_b: i64, f: impl Fn(&Quad) -> Rational) -> Self {
        let values = box_quads(box_a, box_b).into_iter().map(|q| (q, f(&q))).collect();
        PayoffSpec::Table { values, default: None }
    }

    pub fn value(&self, q: &Quad, h: &Rational) -> Result<Rational> {
        let bit = |b: bool| if b { rational::one() } else { Rational::zero() };
        Ok(match self {
            PayoffSpec::Range => int(q.s - q.i) * h,
            PayoffSpec::LookbackMax => int(q.s - q.x) * h,
            PayoffSpec::DigitalMax(b) => bit(q.s >= *b),
            PayoffSpec::DigitalMin(a) => bit(q.i <= -a),
            PayoffSpec::SignatureDigital(sign) => bit(q.sigma == *sign),
            PayoffSpec::Table { values, default } => match values.get(q) {
                Some(v) => v.clone(),
                None => default
                    .clone()
                    .ok_or_else(|| Error::Parse(format!("payoff table has no value for {q}")))?,
            },
        })
    }

    /// Table JSON: `{"default": "0", "values": [{"i":..,"x":..,"s":..,"sigma":..,"g":".."}]}`.
    pub fn table_from_json_str(text: &str) -> Result<Self> {
        let file: PayoffFile = serde_json::from_str(text)?;
        let mut values = BTreeMap::new();
        for r in file.values {
            let q = Quad::new(r.i, r.x, r.s, r.sigma)?;
            if values.insert(q, rational::parse(&r.g)?).is_some() {
                return Err(Error::Parse(format!("duplicate payoff entry for {q}")));
            }
        }
        let default = file.default.as_deref().map(rational::parse).transpose()?;
        Ok(PayoffSpec::Table { values, default })
    }

    pub fn name(&self) -> String {
        match self {
            PayoffSpec::Range => "range".into(),
            PayoffSpec::LookbackMax => "lookback_max".into(),
            PayoffSpec::DigitalMax(b) => format!("digital_max:{b}"),
            PayoffSpec::DigitalMin(a) => format!("digital_min:{a}"),
            PayoffSpec::SignatureDigital(s) => format!("signature_digital:{s}"),
            PayoffSpec::Table { .. } => "table".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PayoffFile {
    #[serde(default)]
    default: Option<String>,
    values: Vec<PayoffRecord>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PayoffRecord {
    i: i64,
    x: i64,
    s: i64,
    sigma: Sign,
    g: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowKind {
    Mass,
    /// Index into `Market::calls`.
    Call(usize),
    /// `m(b - X; S >= b) = 0`; `b = 0` is `m(X) = 0`.
    UiMax(i64),
    /// `m(a + X; I <= -a) = 0`.
    UiMin(i64),
    /// `E[Z(cell)] = w >= 0`.
    Cell(CellKey),
}

#[derive(Debug, Clone)]
pub struct LpRow {
    pub kind: RowKind,
    /// Coefficient per quad, in `PricingLp::quads` order.
    pub coeffs: Vec<Rational>,
    pub rhs: Rational,
}

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    pub consistency_rows: bool,
}

impl Default for LpOptions {
    fn default() -> Self {
        LpOptions { consistency_rows: true }
    }
}

/// `max Σ G m` over laws on the box, in equality form with one slack per
/// cell row. Columns are the quads followed by the slacks.
#[derive(Debug, Clone)]
pub struct PricingLp {
    pub market: Market,
    pub quads: Vec<Quad>,
    pub objective: Vec<Rational>,
    pub rows: Vec<LpRow>,
}

pub fn build_lp(market: &Market, payoff: &PayoffSpec) -> Result<PricingLp> {
    build_lp_with(market, payoff, &LpOptions::default())
}

pub fn build_lp_with(market: &Market, payoff: &PayoffSpec, opts: &LpOptions) -> Result<PricingLp> {
    let (box_a, box_b, h) = (market.box_a, market.box_b, &market.h);
    if let PayoffSpec::Table { values, .. } = payoff {
        if let Some(q) = values.keys().find(|q| q.i < -box_a || q.s > box_b) {
            return Err(Error::BoxTooSmall(format!("payoff entry {q} lies outside box ({box_a}, {box_b})")));
        }
    }
    let quads = box_quads(box_a, box_b);
    let objective = quads.iter().map(|q| payoff.value(q, h)).collect::<Result<Vec<_>>>()?;
    let row = |kind: RowKind, f: &dyn Fn(&Quad) -> Rational, rhs: Rational| LpRow {
        kind,
        coeffs: quads.iter().map(f).collect(),
        rhs,
    };

    let mut rows = vec![row(RowKind::Mass, &|_| rational::one(), rational::one())];
    for (k, (strike, price)) in market.calls.iter().enumerate() {
        rows.push(row(RowKind::Call(k), &|q| call_payoff(&(int(q.x) * h), strike), price.clone()));
    }
    for b in 0..=box_b {
        let f = move |q: &Quad| if q.s >= b { int(b - q.x) * h } else { Rational::zero() };
        rows.push(row(RowKind::UiMax(b), &f, Rational::zero()));
    }
    for a in 1..=box_a {
        let f = move |q: &Quad| if q.i <= -a { int(a + q.x) * h } else { Rational::zero() };
        rows.push(row(RowKind::UiMin(a), &f, Rational::zero()));
    }
    if opts.consistency_rows {
        for side in [Sign::Plus, Sign::Minus] {
            for n in 1..=box_a + box_b {
                for a in 0..=n {
                    let ctx = HedgeContext::new(a, n - a, h.clone(), side)?;
                    let key = CellKey::new(side, a, n - a);
                    rows.push(row(RowKind::Cell(key), &|q| z_of_quad(&ctx, q), Rational::zero()));
                }
            }
        }
    }
    Ok(PricingLp { market: market.clone(), quads, objective, rows })
}

impl PricingLp {
    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn slack_rows(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&r| matches!(self.rows[r].kind, RowKind::Cell(_))).collect()
    }

    /// Total number of columns: quads then slacks.
    pub fn column_count(&self) -> usize {
        self.quads.len() + self.slack_rows().len()
    }

    /// Exact column `j` of the constraint matrix.
    fn column(&self, j: usize, slacks: &[usize]) -> Vec<Rational> {
        let nq = self.quads.len();
        if j < nq {
            self.rows.iter().map(|r| r.coeffs[j].clone()).collect()
        } else {
            let mut col = vec![Rational::zero(); self.rows.len()];
            col[slacks[j - nq]] = -rational::one();
            col
        }
    }

    fn cost(&self, j: usize) -> Rational {
        self.objective.get(j).cloned().unwrap_or_else(Rational::zero)
    }

    fn standard(&self) -> StandardLp {
        let slacks = self.slack_rows();
        let nq = self.quads.len();
        let n = nq + slacks.len();
        let mut a: Vec<Vec<f64>> = self
            .rows
            .iter()
            .map(|r| {
                let mut v: Vec<f64> = r.coeffs.iter().map(rational::to_f64).collect();
                v.resize(n, 0.0);
                v
            })
            .collect();
        for (k, &r) in slacks.iter().enumerate() {
            a[r][nq + k] = -1.0;
        }
        let mut c: Vec<f64> = self.objective.iter().map(rational::to_f64).collect();
        c.resize(n, 0.0);
        StandardLp { a, b: self.rows.iter().map(|r| rational::to_f64(&r.rhs)).collect(), c }
    }
}

/// Basic solution recomputed exactly from the final simplex basis.
#[derive(Debug, Clone)]
pub struct ExactVertex {
    pub primal: Vec<Rational>,
    pub duals: Vec<Rational>,
    pub value: Rational,
    pub primal_feasible: bool,
    /// Every reduced cost is `<= 0`: the vertex is provably optimal.
    pub dual_feasible: bool,
}

impl ExactVertex {
    pub fn optimal(&self) -> bool {
        self.primal_feasible && self.dual_feasible
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub value: f64,
    pub dual_value: f64,
    /// Quads then slacks.
    pub primal: Vec<f64>,
    pub duals: Vec<f64>,
    /// Objective after each phase-two pivot.
    pub trace: Vec<f64>,
    pub pivots: usize,
    pub exact: Option<ExactVertex>,
}

impl LpSolution {
    /// Phase-two objectives never decrease and never exceed the dual value.
    pub fn trace_respects_duality(&self, tol: f64) -> bool {
        self.trace.windows(2).all(|w| w[1] >= w[0] - tol) && self.trace.iter().all(|v| *v <= self.dual_value + tol)
    }

    /// Optimal law on the quads: exact when the vertex was recovered
    /// exactly, otherwise rounded to denominators of at most `10^6` and
    /// renormalized.
    pub fn measure(&self, lp: &PricingLp) -> Result<GridMeasure> {
        let nq = lp.quads.len();
        let h = lp.market.h.clone();
        if let Some(ex) = self.exact.as_ref().filter(|e| e.primal_feasible) {
            let atoms = lp.quads.iter().zip(&ex.primal[..nq]).filter(|(_, p)| p.is_positive());
            return GridMeasure::new(h, atoms.map(|(q, p)| (*q, p.clone())));
        }
        let rounded: Vec<(Quad, Rational)> = lp
            .quads
            .iter()
            .zip(&self.primal[..nq])
            .map(|(q, &p)| (*q, rational::approximate(p, 1_000_000)))
            .filter(|(_, p)| p.is_positive())
            .collect();
        let total: Rational = rounded.iter().map(|(_, p)| p).sum();
        if !total.is_positive() {
            return Err(Error::Mass("optimizer carries no mass".into()));
        }
        GridMeasure::new(h, rounded.into_iter().map(|(q, p)| (q, p / &total)))
    }
}

pub fn solve_lp(lp: &PricingLp) -> Result<LpSolution> {
    let std = lp.standard();
    let res = maximize(&std)?;
    let (m, n) = (std.rows(), std.cols());
    let slacks = lp.slack_rows();

    // Basis columns in the original (unsigned) system; leftover
    // artificials are unit columns.
    let unit = |r: usize| {
        let mut v = vec![Rational::zero(); m];
        v[r] = rational::one();
        v
    };
    let basis_cols: Vec<Vec<Rational>> = res
        .basis
        .iter()
        .map(|&j| if j < n { lp.column(j, &slacks) } else { unit(j - n) })
        .collect();
    let basis_cost: Vec<Rational> = res.basis.iter().map(|&j| if j < n { lp.cost(j) } else { Rational::zero() }).collect();

    let exact = exact_vertex(lp, &res.basis, &basis_cols, &basis_cost, n, &slacks);

    let duals = match &exact {
        Some(ex) => ex.duals.iter().map(rational::to_f64).collect(),
        None => {
            let bt: Vec<Vec<f64>> = basis_cols.iter().map(|c| c.iter().map(rational::to_f64).collect()).collect();
            let cb: Vec<f64> = basis_cost.iter().map(rational::to_f64).collect();
            solve_dense(bt, cb).ok_or_else(|| Error::CertificationFailure("final basis is singular".into()))?
        }
    };
    let primal = match &exact {
        Some(ex) if ex.primal_feasible => ex.primal.iter().map(rational::to_f64).collect(),
        _ => res.x.clone(),
    };
    let value = std.c.iter().zip(&primal).map(|(c, x)| c * x).sum();
    let dual_value = std.b.iter().zip(&duals).map(|(b, y)| b * y).sum();
    Ok(LpSolution { value, dual_value, primal, duals, trace: res.trace, pivots: res.pivots, exact })
}

fn exact_vertex(
    lp: &PricingLp,
    basis: &[usize],
    basis_cols: &[Vec<Rational>],
    basis_cost: &[Rational],
    n: usize,
    slacks: &[usize],
) -> Option<ExactVertex> {
    let m = basis.len();
    let bmat: Vec<Vec<Rational>> = (0..m).map(|r| basis_cols.iter().map(|c| c[r].clone()).collect()).collect();
    let rhs: Vec<Rational> = lp.rows.iter().map(|r| r.rhs.clone()).collect();
    let xb = solve_exact(&bmat, &rhs)?;
    let duals = solve_exact(basis_cols, basis_cost)?;

    let mut primal = vec![Rational::zero(); n];
    let mut primal_feasible = true;
    for (&j, v) in basis.iter().zip(xb) {
        if v.is_negative() || (j >= n && !v.is_zero()) {
            primal_feasible = false;
        }
        if j < n {
            primal[j] = v;
        }
    }
    let dual_feasible = (0..n).all(|j| {
        let col = lp.column(j, slacks);
        let reduced = lp.cost(j) - col.iter().zip(&duals).map(|(a, y)| a * y).sum::<Rational>();
        !reduced.is_positive()
    });
    let value = (0..lp.quads.len()).map(|j| &lp.objective[j] * &primal[j]).sum();
    Some(ExactVertex { primal, duals, value, primal_feasible, dual_feasible })
}

#[derive(Debug, Clone, Serialize)]
pub struct CallWeight {
    pub strike: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BarrierWeight {
    pub a: i64,
    pub b: i64,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ForwardPosition {
    /// Grid level at which the forward is bought.
    pub level: i64,
    pub units: f64,
}

/// Dual solution read as a trading strategy: cash, static calls, forwards
/// bought when the walk first reaches a level, and barrier portfolios.
#[derive(Debug, Clone, Serialize)]
pub struct HedgePortfolio {
    pub alpha: f64,
    pub eta: Vec<CallWeight>,
    pub lambda_plus: Vec<BarrierWeight>,
    pub lambda_minus: Vec<BarrierWeight>,
    /// Bought at the first hit of a new maximum `b` (`b = 0` at time zero).
    pub forward_max: Vec<ForwardPosition>,
    /// Bought at the first hit of a new minimum `-a`.
    pub forward_min: Vec<ForwardPosition>,
    #[serde(skip)]
    h: f64,
    #[serde(skip)]
    strikes: Vec<f64>,
    #[serde(skip)]
    contexts: Vec<(HedgeContext, f64)>,
}

pub fn extract_hedge(lp: &PricingLp, sol: &LpSolution) -> HedgePortfolio {
    let h = lp.market.h.clone();
    let mut p = HedgePortfolio {
        alpha: 0.0,
        eta: Vec::new(),
        lambda_plus: Vec::new(),
        lambda_minus: Vec::new(),
        forward_max: Vec::new(),
        forward_min: Vec::new(),
        h: rational::to_f64(&h),
        strikes: Vec::new(),
        contexts: Vec::new(),
    };
    for (row, &y) in lp.rows.iter().zip(&sol.duals) {
        match row.kind {
            RowKind::Mass => p.alpha = y,
            RowKind::Call(k) => {
                let strike = &lp.market.calls[k].0;
                p.eta.push(CallWeight { strike: rational::format(strike), weight: y });
                p.strikes.push(rational::to_f64(strike));
            }
            RowKind::UiMax(b) => p.forward_max.push(ForwardPosition { level: b, units: -y }),
            RowKind::UiMin(a) => p.forward_min.push(ForwardPosition { level: -a, units: y }),
            RowKind::Cell(key) => {
                let w = BarrierWeight { a: key.a, b: key.b, weight: 0.0 - y };
                if -y > 0.0 {
                    let ctx = HedgeContext::new(key.a, key.b, h.clone(), key.side).expect("cell rows are non-degenerate");
                    p.contexts.push((ctx, -y));
                }
                match key.side {
                    Sign::Plus => p.lambda_plus.push(w),
                    Sign::Minus => p.lambda_minus.push(w),
                }
            }
        }
    }
    p
}

impl HedgePortfolio {
    /// Cash, calls and level-triggered forwards; all of these depend on
    /// the path only through `(I, X, S)`.
    pub fn static_value(&self, q: &Quad) -> f64 {
        let x = q.x as f64 * self.h;
        let calls: f64 = self.eta.iter().zip(&self.strikes).map(|(c, k)| c.weight * (x - k).max(0.0)).sum();
        let fmax: f64 = self
            .forward_max
            .iter()
            .filter(|f| q.s >= f.level)
            .map(|f| f.units * (q.x - f.level) as f64 * self.h)
            .sum();
        let fmin: f64 = self
            .forward_min
            .iter()
            .filter(|f| q.i <= f.level)
            .map(|f| f.units * (q.x - f.level) as f64 * self.h)
            .sum();
        self.alpha + calls + fmax + fmin
    }

    /// Superhedge value with barrier terms in `Z` form.
    pub fn z_form(&self, q: &Quad) -> f64 {
        let barrier: f64 = self.contexts.iter().map(|(ctx, l)| l * rational::to_f64(&z_of_quad(ctx, q))).sum();
        self.static_value(q) - barrier
    }

    /// Terminal value of the tradeable strategy with barrier portfolios `Y`.
    pub fn y_form(&self, t: &Trajectory) -> f64 {
        let barrier: f64 = self.contexts.iter().map(|(ctx, l)| l * rational::to_f64(&eval_y(ctx, t))).sum();
        self.static_value(&t.quad()) - barrier
    }

    /// Initial cost: cash plus calls at market prices.
    pub fn cost(&self, market: &Market) -> f64 {
        self.alpha
            + self.eta.iter().zip(&market.calls).map(|(c, (_, price))| c.weight * rational::to_f64(price)).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub gap: f64,
    pub dual: f64,
    pub slackness: f64,
    pub path: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { gap: 1e-8, dual: 1e-8, slackness: 1e-8, path: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificationReport {
    pub value: f64,
    pub dual_value: f64,
    pub gap: f64,
    /// `min_q (Z-form hedge - G)(q)` over the box.
    pub min_dual_residual: f64,
    pub worst_quad: Option<Quad>,
    /// `max λ·w` over cell rows.
    pub max_slackness: f64,
    pub paths: u64,
    /// `min (Y-form hedge - G)` over the sampled trajectories.
    pub min_path_residual: f64,
    /// `max |Y-form hedge - G|` over trajectories ending on the optimizer's support.
    pub max_support_deviation: f64,
    pub exact_optimal: bool,
    pub trace_ok: bool,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Re-checks an LP solution and its hedge independently of the solver.
pub fn verify_hedge(
    lp: &PricingLp,
    sol: &LpSolution,
    portfolio: &HedgePortfolio,
    support: &GridMeasure,
    trajs: &[Trajectory],
    tol: &Tolerances,
) -> CertificationReport {
    use rayon::prelude::*;
    let gap = (sol.value - sol.dual_value).abs();

    let (min_dual_residual, worst_quad) = lp
        .quads
        .iter()
        .zip(&lp.objective)
        .map(|(q, g)| (portfolio.z_form(q) - rational::to_f64(g), Some(*q)))
        .fold((f64::INFINITY, None), |acc, cur| if cur.0 < acc.0 { cur } else { acc });

    let nq = lp.quads.len();
    let max_slackness = lp
        .slack_rows()
        .iter()
        .enumerate()
        .map(|(k, &r)| (-sol.duals[r]).max(0.0) * sol.primal[nq + k].max(0.0))
        .fold(0.0, f64::max);

    let payoff_of = |q: &Quad| -> f64 {
        lp.quads
            .binary_search(q)
            .ok()
            .map(|j| rational::to_f64(&lp.objective[j]))
            .unwrap_or(f64::NAN)
    };
    let (min_path_residual, max_support_deviation) = trajs
        .par_iter()
        .map(|t| {
            let q = t.quad();
            let r = portfolio.y_form(t) - payoff_of(&q);
            let on_support = support.mass(&q).is_positive();
            (r, if on_support { r.abs() } else { 0.0 })
        })
        .reduce(|| (f64::INFINITY, 0.0), |a, b| (a.0.min(b.0), a.1.max(b.1)));
    let min_path_residual = if trajs.is_empty() { 0.0 } else { min_path_residual };

    let mut failures = Vec::new();
    if !(gap <= tol.gap) {
        failures.push(format!("duality gap {gap:e}"));
    }
    if !(min_dual_residual >= -tol.dual) {
        failures.push(format!("dual infeasibility {min_dual_residual:e} at {worst_quad:?}"));
    }
    if !(max_slackness <= tol.slackness) {
        failures.push(format!("complementary slackness {max_slackness:e}"));
    }
    if !(min_path_residual >= -tol.path) {
        failures.push(format!("pathwise shortfall {min_path_residual:e}"));
    }
    if !(max_support_deviation <= tol.path) {
        failures.push(format!("replication error {max_support_deviation:e} on support"));
    }
    let trace_ok = sol.trace_respects_duality(tol.gap);
    if !trace_ok {
        failures.push("phase-two objective trace breaks weak duality".into());
    }
    CertificationReport {
        value: sol.value,
        dual_value: sol.dual_value,
        gap,
        min_dual_residual,
        worst_quad,
        max_slackness,
        paths: trajs.len() as u64,
        min_path_residual,
        max_support_deviation,
        exact_optimal: sol.exact.as_ref().is_some_and(ExactVertex::optimal),
        trace_ok,
        passed: failures.is_empty(),
        failures,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PriceOptions {
    pub paths: u64,
    pub seed: u64,
    pub tol: Tolerances,
    pub lp: LpOptions,
}

impl Default for PriceOptions {
    fn default() -> Self {
        PriceOptions { paths: 100_000, seed: 0, tol: Tolerances::default(), lp: LpOptions::default() }
    }
}

/// Everything produced by one pricing run.
#[derive(Debug, Clone)]
pub struct PricingResult {
    pub lp: PricingLp,
    pub solution: LpSolution,
    pub measure: GridMeasure,
    pub portfolio: HedgePortfolio,
    pub certification: CertificationReport,
}

impl PricingResult {
    pub fn to_json_value(&self) -> serde_json::Value {
        let measure: serde_json::Value =
            serde_json::from_str(&self.measure.to_json_string()).expect("measure JSON is valid");
        serde_json::json!({
            "value": self.solution.value,
            "dual_value": self.solution.dual_value,
            "exact_value": self.solution.exact.as_ref().filter(|e| e.optimal()).map(|e| rational::format(&e.value)),
            "variables": self.lp.column_count(),
            "rows": self.lp.row_count(),
            "pivots": self.solution.pivots,
            "measure": measure,
            "portfolio": self.portfolio,
            "certification": self.certification,
        })
    }
}

/// Builds and solves the LP, extracts the hedge and certifies it on
/// trajectories sampled from the optimal law.
pub fn price(market: &Market, payoff: &PayoffSpec, opts: &PriceOptions) -> Result<PricingResult> {
    let lp = build_lp_with(market, payoff, &opts.lp)?;
    let solution = solve_lp(&lp)?;
    let measure = solution.measure(&lp)?;
    let portfolio = extract_hedge(&lp, &solution);
    let trajs = if opts.lp.consistency_rows && opts.paths > 0 {
        sample(&derive_rule(&measure)?, opts.paths, opts.seed)?
    } else {
        Vec::new()
    };
    let certification = verify_hedge(&lp, &solution, &portfolio, &measure, &trajs, &opts.tol);
    Ok(PricingResult { lp, solution, measure, portfolio, certification })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::fixtures::m0;
    use crate::rational::ratio;

    fn m0_market(box_a: i64, box_b: i64) -> Market {
        let strikes: Vec<Rational> = (-1..=2).map(int).collect();
        Market::from_measure(&m0(), &strikes, box_a, box_b).unwrap()
    }

    #[test]
    fn m0_market_prices() {
        let mk = m0_market(4, 4);
        let prices: Vec<Rational> = mk.calls.iter().map(|(_, c)| c.clone()).collect();
        assert_eq!(prices, vec![int(1), ratio(2, 3), ratio(1, 3), int(0)]);
        assert!(mk.shape_warnings().is_empty());
    }

    #[test]
    fn lp_dimensions() {
        let lp = build_lp(&m0_market(4, 4), &PayoffSpec::Range).unwrap();
        assert_eq!(lp.quads.len(), box_quads(4, 4).len());
        assert_eq!(lp.row_count(), 1 + 4 + 9 + 2 * 44);
    }

    #[test]
    fn m0_satisfies_every_row() {
        let mk = m0_market(4, 4);
        let lp = build_lp(&mk, &PayoffSpec::Range).unwrap();
        let m = m0();
        let slacks = lp.slack_rows();
        for (r, row) in lp.rows.iter().enumerate() {
            let lhs: Rational = lp.quads.iter().zip(&row.coeffs).map(|(q, c)| c * m.mass(q)).sum();
            if slacks.contains(&r) {
                assert!(!lhs.is_negative(), "{:?}", row.kind);
            } else {
                assert_eq!(lhs, row.rhs, "{:?}", row.kind);
            }
        }
    }

    #[test]
    fn strikes_outside_box_are_rejected() {
        assert!(matches!(Market::new(int(1), 1, 1, vec![(int(3), int(0))]), Err(Error::BoxTooSmall(_))));
    }

    #[test]
    fn constant_payoff_prices_at_constant() {
        let mk = m0_market(3, 3);
        let payoff = PayoffSpec::from_fn(3, 3, |_| ratio(7, 2));
        let sol = solve_lp(&build_lp(&mk, &payoff).unwrap()).unwrap();
        assert!((sol.value - 3.5).abs() < 1e-9);
        assert_eq!(sol.exact.unwrap().value, ratio(7, 2));
    }

    #[test]
    fn market_json_round_trip() {
        let mk = m0_market(4, 4);
        assert_eq!(Market::from_json_str(&mk.to_json_string()).unwrap(), mk);
    }

    #[test]
    fn missing_table_value_is_an_error() {
        let payoff = PayoffSpec::Table { values: BTreeMap::new(), default: None };
        assert!(build_lp(&m0_market(2, 2), &payoff).is_err());
    }
}
