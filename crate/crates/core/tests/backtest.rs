mod fixtures;
mod oracles;

use metatrend::backtest::{cumulative_return, run_backtest, BacktestConfig, Side};
use metatrend::labeling::TrendLabel;
use metatrend::market_data::{build_universe, AlignmentPolicy};

use fixtures::*;
use oracles::*;

#[test]
fn random_scenarios_match_the_straight_loop() {
    for seed in 0..50 {
        let sc = scenario(5, 20, seed);
        let res = run_scenario(&sc);
        let got = res.curve.points.last().unwrap().1;
        let want = straight_loop_final_value(&sc.stocks, &sc.dates, &sc.prices, &sc.signals, 1.0);
        assert!(
            (got - want).abs() <= 1e-9 * want.abs(),
            "seed {seed}: {got} vs {want}"
        );
        assert!(
            res.max_rebalance_drift <= 1e-12,
            "seed {seed}: drift {}",
            res.max_rebalance_drift
        );
        for st in &res.states {
            assert!(st.cash >= 0.0);
            assert!(st.holdings.values().all(|&h| h >= 0.0));
        }
    }
}

#[test]
fn no_buys_keep_the_curve_flat() {
    let mut sc = scenario(3, 15, 1);
    for l in sc.signals.values_mut() {
        *l = TrendLabel::Fall;
    }
    let res = run_scenario(&sc);
    assert!(res.curve.points.iter().all(|&(_, v)| v == 1.0));
    assert!(res.trades.is_empty());
}

#[test]
fn ten_percent_by_hand() {
    let dates = days(2);
    let u = build_universe(
        vec![series("A", &dates, &[100.0, 110.0])],
        AlignmentPolicy::Intersect,
    )
    .unwrap();
    let records = vec![
        record("A", dates[0], TrendLabel::Rise, TrendLabel::Rise),
        record("A", dates[1], TrendLabel::Fall, TrendLabel::Fall),
    ];
    let res = run_backtest(&records, &u, &BacktestConfig::default()).unwrap();
    assert_eq!(res.curve.points[1].1, 1.1);
    assert_eq!(cumulative_return(&res.curve), 1.1 - 1.0);
    assert_eq!(res.trades.len(), 2);
    assert_eq!(
        (res.trades[0].side, res.trades[0].shares),
        (Side::Buy, 0.01)
    );
    assert_eq!(
        (res.trades[1].side, res.trades[1].price),
        (Side::Sell, 110.0)
    );
}

#[test]
fn reruns_give_identical_trade_logs() {
    let sc = scenario(4, 30, 9);
    let (a, b) = (run_scenario(&sc), run_scenario(&sc));
    assert_eq!(a.trades, b.trades);
    assert_eq!(a.curve, b.curve);
}

#[test]
fn chained_daily_returns_reach_the_endpoint() {
    let res = run_scenario(&scenario(5, 40, 3));
    let mut prev = res.curve.initial;
    let mut growth = 1.0;
    for &(_, v) in &res.curve.points {
        growth *= v / prev;
        prev = v;
    }
    assert!((growth - 1.0 - cumulative_return(&res.curve)).abs() < 1e-12);
}
