//! Price and document warehouse.
//!
//! Daily OHLCV rows and dated text documents (news, 10-Q, 10-K) are loaded from
//! flat files, validated, and indexed by ticker and date. Everything here is
//! immutable once loaded.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("line {line}: non-positive price on {date}")]
    NonPositivePrice { line: usize, date: NaiveDate },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: unknown document kind `{kind}`")]
    UnknownKind { line: usize, kind: String },
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: document text is empty")]
    EmptyText { line: usize },
    #[error("{0} is the last trading day; no next-day price")]
    NoNextDay(NaiveDate),
    #[error("no trading row for {0}")]
    DateNotFound(NaiveDate),
    #[error("need {needed} trading days of history ending at {date}, have {available}")]
    InsufficientHistory {
        date: NaiveDate,
        needed: usize,
        available: usize,
    },
    #[error("unknown ticker `{0}`")]
    UnknownTicker(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One daily OHLCV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceRow {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adj_close: f64,
    pub volume: u64,
}

impl PriceRow {
    fn prices(&self) -> [f64; 5] {
        [self.open, self.high, self.low, self.close, self.adj_close]
    }
}

/// Next-day price direction used as the training label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MarketDirection {
    Buy,
    Sell,
}

impl fmt::Display for MarketDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarketDirection::Buy => "Buy",
            MarketDirection::Sell => "Sell",
        })
    }
}

/// Validated daily price series for one ticker. Dates strictly increase and
/// every price is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    ticker: String,
    rows: Vec<PriceRow>,
}

impl PriceSeries {
    /// Builds a series from unordered rows. Rows are sorted by date; the line
    /// numbers in errors refer to positions in the input (1-based, header = 1).
    pub fn from_rows(ticker: impl Into<String>, rows: Vec<PriceRow>) -> Result<Self, DataError> {
        for (i, row) in rows.iter().enumerate() {
            if row.prices().iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(DataError::NonPositivePrice {
                    line: i + 2,
                    date: row.date,
                });
            }
        }
        let mut rows = rows;
        rows.sort_by_key(|r| r.date);
        if let Some(w) = rows.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(DataError::DuplicateDate(w[0].date));
        }
        Ok(Self {
            ticker: ticker.into(),
            rows,
        })
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn rows(&self) -> &[PriceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.rows.iter().map(|r| r.date)
    }

    pub fn index_of(&self, date: NaiveDate) -> Result<usize, DataError> {
        self.rows
            .binary_search_by_key(&date, |r| r.date)
            .map_err(|_| DataError::DateNotFound(date))
    }

    pub fn row(&self, date: NaiveDate) -> Result<&PriceRow, DataError> {
        Ok(&self.rows[self.index_of(date)?])
    }

    /// First trading date on or after `date`.
    pub fn trading_day_on_or_after(&self, date: NaiveDate) -> Option<NaiveDate> {
        let i = self.rows.partition_point(|r| r.date < date);
        self.rows.get(i).map(|r| r.date)
    }

    /// Trading date following `date`, if any.
    pub fn next_trading_day(&self, date: NaiveDate) -> Option<NaiveDate> {
        let i = self.rows.partition_point(|r| r.date <= date);
        self.rows.get(i).map(|r| r.date)
    }

    /// Rows dated on or before `date`; the view a test-phase decision is allowed to see.
    pub fn history_through(&self, date: NaiveDate) -> PriceHistory<'_> {
        let end = self.rows.partition_point(|r| r.date <= date);
        PriceHistory {
            ticker: &self.ticker,
            rows: &self.rows[..end],
        }
    }

    /// Sell iff the next adjusted close is strictly lower; no change counts as Buy.
    pub fn direction_label(&self, date: NaiveDate) -> Result<MarketDirection, DataError> {
        let i = self.index_of(date)?;
        let next = self.rows.get(i + 1).ok_or(DataError::NoNextDay(date))?;
        Ok(if next.adj_close < self.rows[i].adj_close {
            MarketDirection::Sell
        } else {
            MarketDirection::Buy
        })
    }

    /// Sum of the last `m` daily log returns of adjusted close, ending at `date`.
    pub fn trailing_cumulative_return(&self, date: NaiveDate, m: usize) -> Result<f64, DataError> {
        self.history_through(date).trailing_cumulative_return_at(date, m)
    }

    pub fn read_csv(reader: impl std::io::Read, ticker: &str) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| DataError::MalformedRow {
                line: 1,
                reason: e.to_string(),
            })?
            .clone();
        let expected = ["date", "open", "high", "low", "close", "adj_close", "volume"];
        if headers.iter().ne(expected.iter().copied()) {
            return Err(DataError::MalformedRow {
                line: 1,
                reason: format!("expected header `{}`", expected.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (i, record) in rdr.deserialize::<PriceRow>().enumerate() {
            let row = record.map_err(|e| DataError::MalformedRow {
                line: i + 2,
                reason: e.to_string(),
            })?;
            rows.push(row);
        }
        Self::from_rows(ticker, rows)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads an OHLCV CSV file with header `date,open,high,low,close,adj_close,volume`.
pub fn load_ohlcv(path: impl AsRef<Path>, ticker: &str) -> Result<PriceSeries, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    PriceSeries::read_csv(file, ticker)
}

/// Borrowed prefix of a price series. Holds no row after its last date, so
/// anything computed from it cannot look ahead.
#[derive(Debug, Clone, Copy)]
pub struct PriceHistory<'a> {
    ticker: &'a str,
    rows: &'a [PriceRow],
}

impl<'a> PriceHistory<'a> {
    pub fn ticker(&self) -> &'a str {
        self.ticker
    }

    pub fn rows(&self) -> &'a [PriceRow] {
        self.rows
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.rows.last().map(|r| r.date)
    }

    /// Trailing log return over the last `m` steps of this history.
    pub fn trailing_cumulative_return(&self, m: usize) -> Result<f64, DataError> {
        match self.last_date() {
            Some(d) => self.trailing_cumulative_return_at(d, m),
            None => Err(DataError::InsufficientHistory {
                date: NaiveDate::MIN,
                needed: m + 1,
                available: 0,
            }),
        }
    }

    fn trailing_cumulative_return_at(&self, date: NaiveDate, m: usize) -> Result<f64, DataError> {
        let end = match self.rows.last() {
            Some(r) if r.date == date => self.rows.len() - 1,
            _ => return Err(DataError::DateNotFound(date)),
        };
        if end < m {
            return Err(DataError::InsufficientHistory {
                date,
                needed: m + 1,
                available: end + 1,
            });
        }
        Ok(self.rows[end - m..=end]
            .windows(2)
            .map(|w| (w[1].adj_close / w[0].adj_close).ln())
            .sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DocumentKind {
    #[serde(rename = "news")]
    News,
    #[serde(rename = "10q")]
    Filing10Q,
    #[serde(rename = "10k")]
    Filing10K,
}

impl DocumentKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "news" => Some(Self::News),
            "10q" => Some(Self::Filing10Q),
            "10k" => Some(Self::Filing10K),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::News => "news",
            Self::Filing10Q => "10q",
            Self::Filing10K => "10k",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub ticker: String,
    pub date: NaiveDate,
    pub kind: DocumentKind,
    pub text: String,
}

/// Parses newline-delimited JSON documents. Blank lines are ignored.
pub fn read_documents(reader: impl BufRead) -> Result<Vec<RawDocument>, DataError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| DataError::MalformedRow {
            line: lineno,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| DataError::MalformedRow {
                line: lineno,
                reason: e.to_string(),
            })?;
        let field = |name: &'static str| -> Result<&str, DataError> {
            value
                .get(name)
                .and_then(|v| v.as_str())
                .ok_or(DataError::MissingField {
                    line: lineno,
                    field: name,
                })
        };
        let id = field("id")?;
        let ticker = field("ticker")?;
        let date_str = field("date")?;
        let kind_str = field("kind")?;
        let text = field("text")?;
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d").map_err(|e| {
            DataError::MalformedRow {
                line: lineno,
                reason: format!("bad date `{date_str}`: {e}"),
            }
        })?;
        let kind = DocumentKind::parse(kind_str).ok_or_else(|| DataError::UnknownKind {
            line: lineno,
            kind: kind_str.to_string(),
        })?;
        if text.trim().is_empty() {
            return Err(DataError::EmptyText { line: lineno });
        }
        if !seen.insert(id.to_string()) {
            return Err(DataError::DuplicateId(id.to_string()));
        }
        docs.push(RawDocument {
            id: id.to_string(),
            ticker: ticker.to_string(),
            date,
            kind,
            text: text.to_string(),
        });
    }
    Ok(docs)
}

pub fn load_documents(path: impl AsRef<Path>) -> Result<Vec<RawDocument>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    read_documents(BufReader::new(file))
}

pub fn write_documents(docs: &[RawDocument], mut writer: impl Write) -> std::io::Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut writer, doc)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Everything the agent receives for one trading day.
#[derive(Debug, Clone)]
pub struct DailyBundle<'a> {
    pub date: NaiveDate,
    pub price_row: Option<&'a PriceRow>,
    pub documents: Vec<&'a RawDocument>,
}

/// Multi-ticker store of prices and documents. Queries are ticker-scoped.
#[derive(Debug, Clone, Default)]
pub struct Warehouse {
    prices: BTreeMap<String, PriceSeries>,
    documents: BTreeMap<String, Vec<RawDocument>>,
}

impl Warehouse {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_prices(&mut self, series: PriceSeries) {
        self.prices.insert(series.ticker().to_string(), series);
    }

    /// Adds documents, keeping each ticker's list ordered by (date, id).
    pub fn insert_documents(&mut self, docs: Vec<RawDocument>) -> Result<(), DataError> {
        let mut ids: HashSet<String> = self
            .documents
            .values()
            .flatten()
            .map(|d| d.id.clone())
            .collect();
        for doc in docs {
            if !ids.insert(doc.id.clone()) {
                return Err(DataError::DuplicateId(doc.id));
            }
            self.documents.entry(doc.ticker.clone()).or_default().push(doc);
        }
        for list in self.documents.values_mut() {
            list.sort_by(|a, b| (a.date, &a.id).cmp(&(b.date, &b.id)));
        }
        Ok(())
    }

    pub fn tickers(&self) -> impl Iterator<Item = &str> {
        self.prices.keys().map(String::as_str)
    }

    pub fn prices(&self, ticker: &str) -> Result<&PriceSeries, DataError> {
        self.prices
            .get(ticker)
            .ok_or_else(|| DataError::UnknownTicker(ticker.to_string()))
    }

    pub fn documents(&self, ticker: &str) -> &[RawDocument] {
        self.documents.get(ticker).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all_documents(&self) -> impl Iterator<Item = &RawDocument> {
        self.documents.values().flatten()
    }

    /// Documents dated in `(after, through]`, ordered by id. With `after = None`
    /// every document up to `through` is included, which is how documents
    /// published before the first simulated day reach the agent.
    pub fn documents_between(
        &self,
        ticker: &str,
        after: Option<NaiveDate>,
        through: NaiveDate,
    ) -> Vec<&RawDocument> {
        let mut out: Vec<&RawDocument> = self
            .documents(ticker)
            .iter()
            .filter(|d| d.date <= through && after.is_none_or(|a| d.date > a))
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// One bundle per trading day. Documents dated on non-trading days roll
    /// forward to the next trading day; documents after the last trading day
    /// are not attributed to any bundle.
    pub fn daily_bundles(&self, ticker: &str) -> Result<Vec<DailyBundle<'_>>, DataError> {
        let series = self.prices(ticker)?;
        let mut prev = None;
        Ok(series
            .rows()
            .iter()
            .map(|row| {
                let bundle = DailyBundle {
                    date: row.date,
                    price_row: Some(row),
                    documents: self.documents_between(ticker, prev, row.date),
                };
                prev = Some(row.date);
                bundle
            })
            .collect())
    }
}
