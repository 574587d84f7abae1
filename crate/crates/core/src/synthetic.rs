//! Deterministic synthetic market fixtures.
//!
//! Prices follow a seeded Gaussian log-return walk over weekdays. News items
//! carry a tone that matches the *next* day's move with probability
//! `news_accuracy`, so 0.5 gives pure noise and values near 1 give news that
//! leads prices. An optional losing streak pairs falling prices with upbeat news.

use std::path::Path;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agent::ProfileMetadata;
use crate::backtest::Windows;
use crate::market_data::{write_documents, DocumentKind, PriceRow, PriceSeries, RawDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LosingStreak {
    /// Index of the first trading day whose next-day move is forced down.
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub ticker: String,
    pub start: NaiveDate,
    pub trading_days: usize,
    pub news_count: usize,
    pub start_price: f64,
    /// Mean daily log return.
    pub drift: f64,
    /// Standard deviation of the daily log return.
    pub volatility: f64,
    pub news_accuracy: f64,
    /// News items moved from a Monday onto the preceding weekend.
    pub weekend_news: usize,
    pub losing_streak: Option<LosingStreak>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 60 trading days, 150 news items, news leading prices at 85% accuracy.
    pub fn leading_news(seed: u64) -> Self {
        Self {
            ticker: "TSLA".into(),
            start: NaiveDate::from_ymd_opt(2022, 8, 1).expect("valid date"),
            trading_days: 60,
            news_count: 150,
            start_price: 250.0,
            drift: 0.0,
            volatility: 0.025,
            news_accuracy: 0.85,
            weekend_news: 6,
            losing_streak: None,
            seed,
        }
    }

    pub fn down_trend(seed: u64) -> Self {
        Self {
            drift: -0.006,
            ..Self::leading_news(seed)
        }
    }

    pub fn noise(seed: u64) -> Self {
        Self {
            news_accuracy: 0.5,
            ..Self::leading_news(seed)
        }
    }

    /// Leading news plus a forced 3-day losing streak early in the test window.
    pub fn with_losing_streak(seed: u64) -> Self {
        Self {
            losing_streak: Some(LosingStreak { start: 25, len: 3 }),
            ..Self::leading_news(seed)
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub prices: PriceSeries,
    pub documents: Vec<RawDocument>,
    pub metadata: ProfileMetadata,
}

pub const PRICES_FILE: &str = "prices.csv";
pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const METADATA_FILE: &str = "metadata.json";

impl SyntheticData {
    /// First `train_days` trading days train, the rest test.
    pub fn windows(&self, train_days: usize) -> Windows {
        let dates: Vec<NaiveDate> = self.prices.dates().collect();
        assert!(train_days >= 1 && train_days + 1 < dates.len());
        Windows {
            train_start: dates[0],
            train_end: dates[train_days - 1],
            test_start: dates[train_days],
            test_end: dates[dates.len() - 1],
        }
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let file = std::fs::File::create(dir.join(PRICES_FILE))?;
        self.prices.write_csv(file).map_err(std::io::Error::other)?;
        let file = std::fs::File::create(dir.join(DOCUMENTS_FILE))?;
        write_documents(&self.documents, std::io::BufWriter::new(file))?;
        let meta = serde_json::to_string_pretty(&self.metadata)?;
        std::fs::write(dir.join(METADATA_FILE), meta + "\n")
    }
}

const POSITIVE_NEWS: &[&str] = &[
    "{T} shares surge after deliveries beat estimates. Analysts upgrade the stock on strong demand",
    "{T} posts record production week. Margins widen as savings boost profit",
    "{T} rallies on bullish analyst note. Orders show robust growth in Europe",
    "{T} stock gains as new factory ramps ahead of plan. Investors cheer the upgrade",
    "{T} wins large fleet contract. Outlook for growth looks strong",
];

const NEGATIVE_NEWS: &[&str] = &[
    "{T} shares plunge after deliveries miss estimates. Analysts downgrade the stock on weak demand",
    "{T} faces recall of older vehicles. Regulators open a probe into the issue",
    "{T} slumps on bearish analyst note. Orders show a slowdown in China",
    "{T} stock drops as factory output declines. Investors voice concern over losses",
    "{T} hit by lawsuit over autopilot claims. Shortfall in deliveries weighs on shares",
];

const FILLER: &[&str] = &[
    "The company did not comment further.",
    "Trading volume was above its monthly average.",
    "Shares are widely held by retail investors.",
    "The report cited people familiar with the matter.",
];

fn weekdays_from(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn news_text<R: Rng>(ticker: &str, positive: bool, rng: &mut R) -> String {
    let pool = if positive { POSITIVE_NEWS } else { NEGATIVE_NEWS };
    let head = pool.choose(rng).expect("non-empty pool").replace("{T}", ticker);
    let tail = FILLER.choose(rng).expect("non-empty pool");
    format!("{head}. {tail}")
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticData {
    assert!(spec.trading_days >= 3, "need at least 3 trading days");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.trading_days;
    let dates = weekdays_from(spec.start, n);
    let normal = Normal::new(spec.drift, spec.volatility).expect("volatility must be >= 0");

    // moves[i] is the log return from day i to day i + 1.
    let mut moves: Vec<f64> = (0..n - 1).map(|_| normal.sample(&mut rng)).collect();
    let in_streak = |i: usize| {
        spec.losing_streak
            .is_some_and(|s| i >= s.start && i < s.start + s.len)
    };
    for (i, m) in moves.iter_mut().enumerate() {
        if in_streak(i) {
            *m = -m.abs() - spec.volatility;
        }
    }

    let mut rows = Vec::with_capacity(n);
    let mut log_price = spec.start_price.ln();
    for (i, &date) in dates.iter().enumerate() {
        if i > 0 {
            log_price += moves[i - 1];
        }
        let close = log_price.exp();
        let prev = if i > 0 { (log_price - moves[i - 1]).exp() } else { close };
        let open = prev * (1.0 + rng.gen_range(-0.3..0.3) * spec.volatility);
        let high = open.max(close) * (1.0 + rng.gen_range(0.0..0.5) * spec.volatility);
        let low = open.min(close) * (1.0 - rng.gen_range(0.0..0.5) * spec.volatility);
        rows.push(PriceRow {
            date,
            open,
            high,
            low,
            close,
            adj_close: close,
            volume: rng.gen_range(1_000_000..5_000_000),
        });
    }
    let prices = PriceSeries::from_rows(spec.ticker.clone(), rows).expect("generated rows are valid");

    let mut documents = Vec::with_capacity(spec.news_count + 2);
    let mut weekend_left = spec.weekend_news;
    for j in 0..spec.news_count {
        let day = j * n / spec.news_count.max(1);
        let positive = if in_streak(day) {
            true
        } else if let Some(&m) = moves.get(day) {
            (m > 0.0) == rng.gen_bool(spec.news_accuracy)
        } else {
            rng.gen_bool(0.5)
        };
        let mut date = dates[day];
        if weekend_left > 0 && day > 0 && date.weekday() == Weekday::Mon {
            date = date - Days::new(1 + (weekend_left % 2) as u64);
            weekend_left -= 1;
        }
        documents.push(RawDocument {
            id: format!("news-{:04}", j + 1),
            ticker: spec.ticker.clone(),
            date,
            kind: DocumentKind::News,
            text: news_text(&spec.ticker, positive, &mut rng),
        });
    }
    documents.push(RawDocument {
        id: "filing-10k-0001".into(),
        ticker: spec.ticker.clone(),
        date: dates[1],
        kind: DocumentKind::Filing10K,
        text: format!(
            "{} annual report. Revenue growth continued while gross margin saw a decline. \
             Management reiterated long-term capacity plans.",
            spec.ticker
        ),
    });
    documents.push(RawDocument {
        id: "filing-10q-0001".into(),
        ticker: spec.ticker.clone(),
        date: dates[n / 2],
        kind: DocumentKind::Filing10Q,
        text: format!(
            "{} quarterly report. Automotive profit rose while energy storage posted a loss. \
             Cash position remained stable.",
            spec.ticker
        ),
    });

    SyntheticData {
        prices,
        documents,
        metadata: ProfileMetadata {
            ticker: spec.ticker.clone(),
            sector_text: format!(
                "{} designs and sells electric vehicles and energy storage systems; its shares \
                 react strongly to delivery figures, analyst ratings and regulatory news.",
                spec.ticker
            ),
        },
    }
}
