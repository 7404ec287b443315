use rangewalk_core::consistency::check_consistent;
use rangewalk_core::measure::fixtures::m0;
use rangewalk_core::pricing::{
    build_lp, build_lp_with, extract_hedge, price, solve_lp, LpOptions, Market, PayoffSpec, PriceOptions,
};
use rangewalk_core::rational::{int, ratio};
use rangewalk_core::Sign;

fn m0_market() -> Market {
    let strikes: Vec<_> = (-1..=2).map(int).collect();
    Market::from_measure(&m0(), &strikes, 4, 4).unwrap()
}

fn quick() -> PriceOptions {
    PriceOptions { paths: 20_000, seed: 3, ..PriceOptions::default() }
}

#[test]
fn range_on_m0_market_certifies() {
    let res = price(&m0_market(), &PayoffSpec::Range, &quick()).unwrap();
    assert!(res.solution.value >= 1.5 - 1e-8);
    assert!(res.certification.passed, "{:?}", res.certification.failures);
    assert!(check_consistent(&res.measure).consistent);
}

#[test]
fn builtin_payoffs_certify() {
    for payoff in [
        PayoffSpec::LookbackMax,
        PayoffSpec::DigitalMax(2),
        PayoffSpec::DigitalMin(2),
        PayoffSpec::SignatureDigital(Sign::Plus),
    ] {
        let res = price(&m0_market(), &payoff, &quick()).unwrap();
        assert!(res.certification.passed, "{}: {:?}", payoff.name(), res.certification.failures);
        assert!(res.solution.exact.as_ref().unwrap().optimal(), "{}", payoff.name());
    }
}

#[test]
fn thin_market_certifies() {
    // Only the mean is pinned: the law may spread over the whole box.
    let market = Market::new(int(1), 3, 3, vec![(int(0), ratio(1, 2))]).unwrap();
    let res = price(&market, &PayoffSpec::Range, &quick()).unwrap();
    assert!(res.certification.passed, "{:?}", res.certification.failures);
}

#[test]
fn consistency_rows_bind() {
    let market = m0_market();
    let with = solve_lp(&build_lp(&market, &PayoffSpec::Range).unwrap()).unwrap();
    let lp = build_lp_with(&market, &PayoffSpec::Range, &LpOptions { consistency_rows: false }).unwrap();
    let without = solve_lp(&lp).unwrap();
    assert!(without.value >= with.value - 1e-9);
}

#[test]
fn quoted_call_prices_at_its_quote() {
    let market = m0_market();
    let payoff = PayoffSpec::from_fn(4, 4, |q| int((q.x - 1).max(0)));
    let lp = build_lp(&market, &payoff).unwrap();
    let sol = solve_lp(&lp).unwrap();
    assert!((sol.value - 1.0 / 3.0).abs() < 1e-9);
    assert_eq!(sol.exact.as_ref().unwrap().value, ratio(1, 3));
    let hedge = extract_hedge(&lp, &sol);
    assert!((hedge.cost(&market) - 1.0 / 3.0).abs() < 1e-9);
}

#[test]
fn weak_duality_along_the_pivot_path() {
    let lp = build_lp(&m0_market(), &PayoffSpec::LookbackMax).unwrap();
    let sol = solve_lp(&lp).unwrap();
    assert!(sol.trace_respects_duality(1e-8));
}

#[test]
fn incompatible_quotes_are_infeasible() {
    // A call worth more than the underlying range allows.
    let market = Market::new(int(1), 2, 2, vec![(int(0), int(5))]).unwrap();
    assert!(solve_lp(&build_lp(&market, &PayoffSpec::Range).unwrap()).is_err());
}
