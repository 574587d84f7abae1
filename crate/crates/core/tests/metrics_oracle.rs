mod common;

use common::{day, daily_vol, rel_err};
use finmem_core::backtest::*;
use finmem_core::market_data::{PriceRow, PriceSeries};
use proptest::prelude::*;

fn series(prices: &[f64]) -> PriceSeries {
    let rows = prices
        .iter()
        .enumerate()
        .map(|(i, &p)| PriceRow {
            date: day(i as i64),
            open: p,
            high: p,
            low: p,
            close: p,
            adj_close: p,
            volume: 10,
        })
        .collect();
    PriceSeries::from_rows("T", rows).unwrap()
}

fn ledger_case() -> impl Strategy<Value = (Vec<f64>, Vec<Action>)> {
    (1usize..=30).prop_flat_map(|n| {
        (
            prop::collection::vec(20.0f64..200.0, n + 1),
            prop::collection::vec(prop::sample::select(vec![Action::Buy, Action::Sell, Action::Hold]), n),
        )
    })
}

fn ledger(prices: &PriceSeries, actions: &[Action]) -> TradeLedger {
    let pairs: Vec<_> = prices.dates().zip(actions.iter().copied()).collect();
    TradeLedger::from_actions(prices, &pairs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn metrics_match_brute_force((prices, actions) in ledger_case(), annualize in any::<bool>()) {
        let p = series(&prices);
        let l = ledger(&p, &actions);
        let r = l.returns();
        for (i, a) in actions.iter().enumerate() {
            prop_assert_eq!(r[i], (prices[i + 1] / prices[i]).ln() * a.position() as f64);
        }
        prop_assert!(rel_err(cumulative_return(&r).unwrap(), common::cumulative_return(&r)) <= 1e-9);
        prop_assert!((max_drawdown(&r) - common::max_drawdown(&r)).abs() <= 1e-9 * common::max_drawdown(&r).max(1.0));
        match (sharpe(&r, 0.0, annualize), common::sharpe(&r, 0.0, annualize)) {
            (Ok(a), Some(b)) => prop_assert!(rel_err(a, b) <= 1e-9 || (a - b).abs() < 1e-9, "{a} vs {b}"),
            (Err(_), None) => {}
            (a, b) => prop_assert!(false, "sharpe {a:?} vs oracle {b:?}"),
        }
        if r.len() >= 2 {
            let (d, a) = volatility(&r).unwrap();
            prop_assert!(rel_err(d, daily_vol(&r)) <= 1e-9 || (d - daily_vol(&r)).abs() < 1e-12);
            prop_assert_eq!(a, d * 252f64.sqrt());
        }
    }

    #[test]
    fn buy_and_hold_telescopes(prices in prop::collection::vec(20.0f64..200.0, 2..60)) {
        let p = series(&prices);
        let l = ledger(&p, &vec![Action::Buy; prices.len() - 1]);
        let cr = cumulative_return(&l.returns()).unwrap();
        let expected = 100.0 * (prices[prices.len() - 1] / prices[0]).ln();
        prop_assert!((cr - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    }

    #[test]
    fn sign_flip((prices, actions) in ledger_case()) {
        let p = series(&prices);
        let r = ledger(&p, &actions).returns();
        let negated: Vec<Action> = actions.iter().map(|a| a.negated()).collect();
        let rn = ledger(&p, &negated).returns();
        prop_assert_eq!(cumulative_return(&rn).unwrap(), -cumulative_return(&r).unwrap());
        if r.len() >= 2 {
            let (a, b) = (volatility(&r).unwrap(), volatility(&rn).unwrap());
            prop_assert!((a.0 - b.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn worked_examples() {
    let p = series(&[100.0, 110.0, 99.0]);
    let r = ledger(&p, &[Action::Buy, Action::Sell]).returns();
    let hand = 100.0 * ((1.1f64).ln() + (110.0f64 / 99.0).ln());
    assert!((cumulative_return(&r).unwrap() - hand).abs() < 1e-12);
    assert!((cumulative_return(&r).unwrap() - 20.067).abs() < 1e-3);

    let dd = [(1.2f64).ln(), (0.75f64).ln(), (130.0f64 / 90.0).ln()];
    assert!((max_drawdown(&dd) - 25.0).abs() < 1e-9);
    assert!((common::max_drawdown(&dd) - 25.0).abs() < 1e-9);

    let s = sharpe(&[0.02, 0.0, 0.01], 0.0, true).unwrap();
    assert!(rel_err(s, common::sharpe(&[0.02, 0.0, 0.01], 0.0, true).unwrap()) < 1e-12);
}
