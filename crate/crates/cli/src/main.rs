//! `rangewalk`: check, construct, simulate and price stopped-walk laws.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use rangewalk_core::consistency::{check_consistent, check_sx, SxMode, WindowTable};
use rangewalk_core::constructor::{derive_rule, sample, sample_counts, SampleOptions};
use rangewalk_core::hedging::{all_contexts, verify_domination, verify_table};
use rangewalk_core::measure::{GridMeasure, SxMarginal};
use rangewalk_core::oracle::{chain_law, TabularRule};
use rangewalk_core::pricing::{price, LpOptions, Market, PayoffSpec, PriceOptions, Tolerances};
use rangewalk_core::rational::{self, to_f64};
use rangewalk_core::{Error, Sign};

use output::{fmt_float, read, to_pretty, write_atomic};

#[derive(Parser, Debug)]
#[command(name = "rangewalk", version, about = "Joint laws of the minimum, terminal value and maximum of a stopped random walk")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "RANGEWALK_THREADS")]
    threads: Option<usize>,
    /// Print machine-readable JSON instead of the text report.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decide whether a measure is the law of a stopped walk.
    Check {
        measure: PathBuf,
        /// Write the full per-cell report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build the cell stopping rule realizing a consistent measure.
    Derive {
        measure: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the derived rule and compare frequencies with the target.
    Simulate {
        measure: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        paths: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Range cap in grid steps (default: support range + 8).
        #[arg(long)]
        range_cap: Option<i64>,
    },
    /// Exact law of a tabular stopping rule.
    Oracle {
        rule: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the barrier hedge table and pathwise domination.
    HedgeVerify {
        measure: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        paths: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest a + b checked (default: support range + 1).
        #[arg(long)]
        max_range: Option<i64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Upper price bound and robust hedge for a payoff given call prices.
    Price {
        market: PathBuf,
        /// range | lookback_max | digital_max:B | digital_min:A | signature_digital:+1|-1 | table:<file>
        #[arg(long, default_value = "range")]
        payoff: String,
        /// Override the market box, as `A,B`.
        #[arg(long = "box")]
        box_: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        paths: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Tolerance for the duality gap, dual feasibility and slackness.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Tolerance for the pathwise hedge checks.
        #[arg(long, default_value_t = 1e-6)]
        path_tol: f64,
        /// Drop the consistency rows (calls and martingale rows only).
        #[arg(long)]
        no_consistency: bool,
    },
    /// Check the maximum/terminal-value conditions on an (S, X) marginal.
    Maxcheck {
        marginal: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Stopped)]
        mode: ModeArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Stopped,
    Ui,
}

/// Outcome of a command that ran to completion.
enum Verdict {
    Pass,
    Fail,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            let failed_check = matches!(
                e.downcast_ref::<Error>(),
                Some(Error::InconsistentMeasure { .. } | Error::CertificationFailure(_) | Error::Infeasible(_))
            );
            ExitCode::from(if failed_check { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<Verdict> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker pool")?;
    }
    let json = cli.json;
    match cli.command {
        Command::Check { measure, report } => cmd_check(&measure, report.as_deref(), json),
        Command::Derive { measure, out } => cmd_derive(&measure, &out, json),
        Command::Simulate { measure, paths, seed, csv, range_cap } => {
            cmd_simulate(&measure, paths, seed, csv.as_deref(), range_cap, json)
        }
        Command::Oracle { rule, out } => cmd_oracle(&rule, &out, json),
        Command::HedgeVerify { measure, paths, seed, max_range, csv } => {
            cmd_hedge_verify(&measure, paths, seed, max_range, csv.as_deref(), json)
        }
        Command::Price { market, payoff, box_, out, paths, seed, tol, path_tol, no_consistency } => {
            let tol = Tolerances { gap: tol, dual: tol, slackness: tol, path: path_tol };
            let opts = PriceOptions { paths, seed, tol, lp: LpOptions { consistency_rows: !no_consistency } };
            cmd_price(&market, &payoff, box_.as_deref(), out.as_deref(), &opts, json)
        }
        Command::Maxcheck { marginal, mode } => cmd_maxcheck(&marginal, mode, json),
    }
}

fn load_measure(path: &Path) -> Result<GridMeasure> {
    GridMeasure::from_json_str(&read(path)?).with_context(|| format!("loading measure {}", path.display()))
}

fn emit(json: bool, value: Value, text: String) {
    if json {
        print!("{}", to_pretty(value));
    } else {
        print!("{text}");
    }
}

fn cmd_check(path: &Path, report_path: Option<&Path>, json: bool) -> Result<Verdict> {
    let m = load_measure(path)?;
    let report = check_consistent(&m);
    let table = WindowTable::new(&m);
    let mut cells = Vec::new();
    for n in 1..=report.checked_box {
        for a in 0..=n {
            for side in [Sign::Plus, Sign::Minus] {
                let s = table.cell_stats(side, a, n - a)?;
                let opt = |r: &Option<rational::Rational>| r.as_ref().map(rational::format);
                cells.push(json!({
                    "side": side.as_i64(), "a": a, "b": n - a,
                    "psi": rational::format(&s.psi), "p0": rational::format(&s.p0),
                    "v": opt(&s.v), "theta": opt(&s.theta),
                    "lhs": rational::format(&s.lhs_he1), "rhs": rational::format(&s.rhs_he1),
                    "holds": s.holds(),
                }));
            }
        }
    }
    let value = json!({
        "consistent": report.consistent,
        "checked_box": report.checked_box,
        "violations": report.violations,
        "tail_violations": report.tail_violations,
        "worst_excess": report.worst_excess(),
    });
    if let Some(p) = report_path {
        let mut full = value.clone();
        full["cells"] = Value::Array(cells);
        write_atomic(p, to_pretty(full).as_bytes())?;
    }
    let text = if report.consistent {
        format!("consistent: cells with a+b <= {} and tail identities hold\n", report.checked_box)
    } else {
        format!(
            "inconsistent: {} cell violations, {} tail violations; first {}; worst excess {}\n",
            report.violations.len(),
            report.tail_violations.len(),
            report.describe_first(),
            fmt_float(report.worst_excess())
        )
    };
    emit(json, value, text);
    Ok(if report.consistent { Verdict::Pass } else { Verdict::Fail })
}

fn cmd_derive(path: &Path, out: &Path, json: bool) -> Result<Verdict> {
    let m = load_measure(path)?;
    let rule = derive_rule(&m)?;
    write_atomic(out, (rule.to_json_string() + "\n").as_bytes())?;
    let stopping = rule.cells.values().filter(|c| c.stop != rational::zero()).count();
    let value = json!({
        "cells": rule.cells.len(),
        "stopping_cells": stopping,
        "origin_stop": rational::format(&rule.origin_stop),
        "out": out.display().to_string(),
    });
    let text = format!(
        "derived {} cells ({} with stopping mass), origin stop {}; wrote {}\n",
        rule.cells.len(),
        stopping,
        rule.origin_stop,
        out.display()
    );
    emit(json, value, text);
    Ok(Verdict::Pass)
}

#[derive(Serialize)]
struct SimRow {
    i: i64,
    x: i64,
    s: i64,
    sigma: i64,
    count: u64,
    freq: String,
    target: String,
    abs_err: String,
}

fn cmd_simulate(path: &Path, paths: u64, seed: u64, csv_path: Option<&Path>, cap: Option<i64>, json: bool) -> Result<Verdict> {
    if paths == 0 {
        bail!("--paths must be positive");
    }
    let m = load_measure(path)?;
    let rule = derive_rule(&m)?;
    let emp = sample_counts(&rule, paths, seed, &SampleOptions { range_cap: cap })?;
    let tv = emp.tv_distance(&m);
    let freq = emp.frequencies();

    let mut quads: Vec<_> = m.atoms().map(|(q, _)| *q).chain(freq.keys().copied()).collect();
    quads.sort();
    quads.dedup();
    let rows: Vec<SimRow> = quads
        .iter()
        .map(|q| {
            let f = freq.get(q).copied().unwrap_or(0.0);
            let t = to_f64(&m.mass(q));
            SimRow {
                i: q.i,
                x: q.x,
                s: q.s,
                sigma: q.sigma.as_i64(),
                count: emp.counts.get(q).copied().unwrap_or(0),
                freq: fmt_float(f),
                target: fmt_float(t),
                abs_err: fmt_float((f - t).abs()),
            }
        })
        .collect();
    if let Some(p) = csv_path {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &rows {
            w.serialize(r)?;
        }
        let mut bytes = w.into_inner().context("flushing CSV")?;
        bytes.extend_from_slice(format!("# tv_distance={}\n", fmt_float(tv)).as_bytes());
        write_atomic(p, &bytes)?;
    }
    let value = json!({ "paths": paths, "seed": seed, "tv_distance": tv, "rows": rows });
    let mut text = format!("{paths} paths, seed {seed}\n");
    for r in &rows {
        text.push_str(&format!(
            "({}, {}, {}, {:+}) count {} freq {} target {}\n",
            r.i, r.x, r.s, r.sigma, r.count, r.freq, r.target
        ));
    }
    text.push_str(&format!("tv_distance {}\n", fmt_float(tv)));
    emit(json, value, text);
    Ok(Verdict::Pass)
}

fn cmd_oracle(path: &Path, out: &Path, json: bool) -> Result<Verdict> {
    let rule = TabularRule::from_json_str(&read(path)?).with_context(|| format!("loading rule {}", path.display()))?;
    let law = chain_law(&rule)?.to_measure(rational::one())?;
    write_atomic(out, (law.to_json_string() + "\n").as_bytes())?;
    let value = json!({ "atoms": law.len(), "box": [rule.box_a, rule.box_b], "out": out.display().to_string() });
    let text = format!("exact law with {} atoms on box ({}, {}); wrote {}\n", law.len(), rule.box_a, rule.box_b, out.display());
    emit(json, value, text);
    Ok(Verdict::Pass)
}

#[derive(Serialize)]
struct TableRowOut {
    row: u8,
    a: i64,
    b: i64,
    x: i64,
    z: String,
    y: String,
    matches: bool,
}

fn cmd_hedge_verify(
    path: &Path,
    paths: u64,
    seed: u64,
    max_range: Option<i64>,
    csv_path: Option<&Path>,
    json: bool,
) -> Result<Verdict> {
    let m = load_measure(path)?;
    let max_range = max_range.unwrap_or(m.support_range() + 1).max(2);
    let h = m.h().clone();

    let mut rows = Vec::new();
    let mut table_ok = true;
    for n in 2..=max_range {
        for a in 1..n {
            let rep = verify_table(a, n - a, &h)?;
            table_ok &= rep.passed();
            for e in rep.entries.iter().chain(&rep.exceptional) {
                rows.push(TableRowOut {
                    row: e.row,
                    a: e.a,
                    b: e.b,
                    x: e.x,
                    z: rational::format(&e.z),
                    y: rational::format(&e.y),
                    matches: e.matches(),
                });
            }
        }
    }
    if let Some(p) = csv_path {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &rows {
            w.serialize(r)?;
        }
        write_atomic(p, &w.into_inner().context("flushing CSV")?)?;
    }

    let trajs = sample(&derive_rule(&m)?, paths, seed)?;
    let dom = verify_domination(&all_contexts(max_range, &h), &trajs);
    let pass = table_ok && dom.passed();
    let value = json!({
        "table_rows": rows.len(),
        "table_ok": table_ok,
        "paths": paths,
        "pairs_checked": dom.checked,
        "violations": dom.violations,
        "strict_gaps": dom.strict_gaps,
        "unexpected_gaps": dom.unexpected_gaps,
        "pass": pass,
    });
    let text = format!(
        "hedge table: {} evaluations, {}\ndomination: {} pairs, {} violations, {} strict gaps ({} outside the exceptional order)\n{}\n",
        rows.len(),
        if table_ok { "Z = Y on all seven rows, exceptional gap exact" } else { "MISMATCH" },
        dom.checked,
        dom.violations.len(),
        dom.strict_gaps,
        dom.unexpected_gaps.len(),
        if pass { "pass" } else { "FAIL" }
    );
    emit(json, value, text);
    Ok(if pass { Verdict::Pass } else { Verdict::Fail })
}

fn parse_payoff(spec: &str) -> Result<PayoffSpec> {
    let (kind, arg) = match spec.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (spec, None),
    };
    let level = |a: Option<&str>| -> Result<i64> {
        a.context("missing level")?.parse().with_context(|| format!("bad level in payoff {spec:?}"))
    };
    Ok(match kind {
        "range" => PayoffSpec::Range,
        "lookback_max" => PayoffSpec::LookbackMax,
        "digital_max" => PayoffSpec::DigitalMax(level(arg)?),
        "digital_min" => PayoffSpec::DigitalMin(level(arg)?),
        "signature_digital" => {
            let v: i64 = level(arg)?;
            PayoffSpec::SignatureDigital(Sign::try_from(v).map_err(anyhow::Error::msg)?)
        }
        "table" => {
            let file = Path::new(arg.context("table payoff needs a file")?);
            PayoffSpec::table_from_json_str(&read(file)?).with_context(|| format!("loading payoff {}", file.display()))?
        }
        other => bail!("unknown payoff {other:?}"),
    })
}

fn parse_box(text: &str) -> Result<(i64, i64)> {
    let (a, b) = text.split_once(',').context("--box expects A,B")?;
    Ok((a.trim().parse().context("bad A in --box")?, b.trim().parse().context("bad B in --box")?))
}

fn cmd_price(
    path: &Path,
    payoff: &str,
    box_: Option<&str>,
    out: Option<&Path>,
    opts: &PriceOptions,
    json: bool,
) -> Result<Verdict> {
    let payoff = parse_payoff(payoff)?;
    let mut market = Market::from_json_str(&read(path)?).with_context(|| format!("loading market {}", path.display()))?;
    if let Some(b) = box_ {
        let (a, b) = parse_box(b)?;
        market = Market::new(market.h, a, b, market.calls)?;
    }
    for w in market.shape_warnings() {
        eprintln!("warning: {w}");
    }
    let res = price(&market, &payoff, opts)?;
    let value = res.to_json_value();
    if let Some(p) = out {
        write_atomic(p, to_pretty(value.clone()).as_bytes())?;
    }
    let c = &res.certification;
    let mut text = format!(
        "payoff {} on box ({}, {}): {} variables, {} rows\nupper price {}",
        payoff.name(),
        market.box_a,
        market.box_b,
        res.lp.column_count(),
        res.lp.row_count(),
        fmt_float(res.solution.value)
    );
    if let Some(ex) = res.solution.exact.as_ref().filter(|e| e.optimal()) {
        text.push_str(&format!(" (exactly {})", ex.value));
    }
    text.push_str(&format!(
        "\ngap {}, dual residual {}, slackness {}, path residual {} over {} paths, support deviation {}\n{}\n",
        fmt_float(c.gap),
        fmt_float(c.min_dual_residual),
        fmt_float(c.max_slackness),
        fmt_float(c.min_path_residual),
        c.paths,
        fmt_float(c.max_support_deviation),
        if c.passed { "certified".to_string() } else { format!("NOT certified: {}", c.failures.join("; ")) }
    ));
    emit(json, value, text);
    Ok(if c.passed { Verdict::Pass } else { Verdict::Fail })
}

fn cmd_maxcheck(path: &Path, mode: ModeArg, json: bool) -> Result<Verdict> {
    let mu = SxMarginal::from_json_str(&read(path)?).with_context(|| format!("loading marginal {}", path.display()))?;
    let mode = match mode {
        ModeArg::Stopped => SxMode::Stopped,
        ModeArg::Ui => SxMode::UniformlyIntegrable,
    };
    let report = check_sx(&mu, mode);
    let mut text = String::new();
    for l in &report.levels {
        text.push_str(&format!("b={}: b*mu(S>=b)={} mu(X;S>=b)={} {}\n", l.b, l.lhs, l.rhs, if l.ok { "ok" } else { "FAIL" }));
    }
    text.push_str(if report.pass { "pass\n" } else { "fail\n" });
    emit(json, serde_json::to_value(&report)?, text);
    Ok(if report.pass { Verdict::Pass } else { Verdict::Fail })
}
