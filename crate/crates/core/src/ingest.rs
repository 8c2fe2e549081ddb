//! Loading of price panels, category maps and index series, the equal-weight
//! custom index, and one-day-lag pairing of two trading calendars.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DATE_FORMAT: &str = "%Y-%m-%d";

/// Strictly increasing, nonempty list of trading days.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradingCalendar {
    dates: Vec<NaiveDate>,
}

impl TradingCalendar {
    pub fn new(dates: Vec<NaiveDate>) -> Result<Self> {
        if dates.is_empty() {
            return Err(Error::Data("trading calendar is empty".into()));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "trading calendar not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self { dates })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Subset of the calendar at the given (increasing) positions.
    pub fn select(&self, positions: &[usize]) -> Result<Self> {
        Self::new(positions.iter().map(|&p| self.dates[p]).collect())
    }
}

/// Aligned closing prices, one row per ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    tickers: Vec<String>,
    calendar: TradingCalendar,
    prices: Vec<Vec<f64>>,
}

impl PricePanel {
    pub fn new(tickers: Vec<String>, calendar: TradingCalendar, prices: Vec<Vec<f64>>) -> Result<Self> {
        if tickers.is_empty() {
            return Err(Error::Data("price panel has no tickers".into()));
        }
        if calendar.len() < 2 {
            return Err(Error::Data("price panel needs at least 2 dates".into()));
        }
        if prices.len() != tickers.len() {
            return Err(Error::Data("price rows do not match ticker count".into()));
        }
        let mut seen = BTreeSet::new();
        for (ticker, row) in tickers.iter().zip(&prices) {
            if !seen.insert(ticker.as_str()) {
                return Err(Error::Data(format!("duplicate ticker {ticker:?}")));
            }
            if row.len() != calendar.len() {
                return Err(Error::Data(format!("price row for {ticker:?} has wrong length")));
            }
            if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                return Err(Error::Data(format!("non-positive or non-finite price {p} for {ticker:?}")));
            }
        }
        Ok(Self {
            tickers,
            calendar,
            prices,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn calendar(&self) -> &TradingCalendar {
        &self.calendar
    }

    pub fn prices(&self) -> &[Vec<f64>] {
        &self.prices
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_dates(&self) -> usize {
        self.calendar.len()
    }

    /// Restrict to the given calendar positions, keeping all tickers.
    pub fn select_dates(&self, positions: &[usize]) -> Result<Self> {
        let calendar = self.calendar.select(positions)?;
        let prices = self
            .prices
            .iter()
            .map(|row| positions.iter().map(|&p| row[p]).collect())
            .collect();
        Self::new(self.tickers.clone(), calendar, prices)
    }
}

/// Ticker to industry category label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMap {
    assignments: BTreeMap<String, String>,
}

impl CategoryMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ticker: impl Into<String>, category: impl Into<String>) -> Option<String> {
        self.assignments.insert(ticker.into(), category.into())
    }

    pub fn get(&self, ticker: &str) -> Option<&str> {
        self.assignments.get(ticker).map(String::as_str)
    }

    pub fn category_of(&self, ticker: &str) -> Result<&str> {
        self.get(ticker).ok_or_else(|| Error::MissingCategory(ticker.to_string()))
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.assignments.iter().map(|(t, c)| (t.as_str(), c.as_str()))
    }

    /// Fails on the first ticker without an assignment.
    pub fn check_covers<'a>(&self, tickers: impl IntoIterator<Item = &'a String>) -> Result<()> {
        for t in tickers {
            self.category_of(t)?;
        }
        Ok(())
    }
}

impl FromIterator<(String, String)> for CategoryMap {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        Self {
            assignments: iter.into_iter().collect(),
        }
    }
}

/// Index levels on a calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSeries {
    calendar: TradingCalendar,
    values: Vec<f64>,
}

impl IndexSeries {
    pub fn new(calendar: TradingCalendar, values: Vec<f64>) -> Result<Self> {
        if values.len() != calendar.len() {
            return Err(Error::Data("index length does not match its calendar".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("index contains non-finite values".into()));
        }
        Ok(Self { calendar, values })
    }

    pub fn calendar(&self) -> &TradingCalendar {
        &self.calendar
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn select_dates(&self, positions: &[usize]) -> Result<Self> {
        Self::new(
            self.calendar.select(positions)?,
            positions.iter().map(|&p| self.values[p]).collect(),
        )
    }
}

/// Pairs of (external date, domestic date) with the external day strictly earlier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaggedAlignment {
    pairs: Vec<(NaiveDate, NaiveDate)>,
    domestic_indices: Vec<usize>,
    external_indices: Vec<usize>,
}

impl LaggedAlignment {
    pub fn pairs(&self) -> &[(NaiveDate, NaiveDate)] {
        &self.pairs
    }

    pub fn domestic_indices(&self) -> &[usize] {
        &self.domestic_indices
    }

    pub fn external_indices(&self) -> &[usize] {
        &self.external_indices
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Keep only tickers observed on every date.
    #[default]
    DropIncomplete,
    /// Carry the last observed close across gaps of at most `max_days` dates.
    ForwardFill { max_days: usize },
}

/// Header names of the long-form price file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub date: String,
    pub ticker: String,
    pub close: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            ticker: "ticker".into(),
            close: "close".into(),
        }
    }
}

/// A ticker left out of the panel by the gap policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExcludedTicker {
    pub ticker: String,
    pub missing_dates: usize,
}

#[derive(Debug, Clone)]
pub struct PanelLoad {
    pub panel: PricePanel,
    pub excluded: Vec<ExcludedTicker>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

pub fn load_panel(path: &Path, schema: &CsvSchema, policy: GapPolicy) -> Result<PanelLoad> {
    read_panel(open(path)?, &source_name(path), schema, policy)
}

pub fn load_categories(path: &Path) -> Result<CategoryMap> {
    read_categories(open(path)?, &source_name(path))
}

pub fn load_index(path: &Path) -> Result<IndexSeries> {
    read_index(open(path)?, &source_name(path))
}

struct Columns<'a> {
    reader: csv::Reader<Box<dyn Read + 'a>>,
    positions: Vec<usize>,
    name: &'a str,
}

fn columns<'a, R: Read + 'a>(input: R, name: &'a str, wanted: &[&str]) -> Result<Columns<'a>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(Box::new(input) as Box<dyn Read + 'a>);
    let headers = reader
        .headers()
        .map_err(|e| csv_error(name, e))?
        .clone();
    let positions = wanted
        .iter()
        .map(|w| {
            headers
                .iter()
                .position(|h| h.trim_start_matches('\u{feff}') == *w)
                .ok_or_else(|| Error::parse(name, 1, format!("missing column {w:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Columns {
        reader,
        positions,
        name,
    })
}

fn csv_error(name: &str, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::parse(name, line, e.to_string())
}

impl Columns<'_> {
    /// Visit each record's selected fields together with its 1-based line number.
    fn for_each(mut self, mut f: impl FnMut(u64, &[&str]) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {}
                Err(e) => return Err(csv_error(self.name, e)),
            }
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let mut fields: Vec<&str> = Vec::with_capacity(self.positions.len());
            for &p in &self.positions {
                match record.get(p) {
                    Some(v) => fields.push(v),
                    None => return Err(Error::parse(self.name, line, "row has too few fields")),
                }
            }
            f(line, &fields)?;
        }
    }
}

fn parse_date(name: &str, line: u64, raw: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw, DATE_FORMAT)
        .map_err(|e| Error::parse(name, line, format!("bad date {raw:?}: {e}")))
}

fn parse_close(name: &str, line: u64, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| Error::parse(name, line, format!("bad close {raw:?}")))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::parse(name, line, format!("close must be positive and finite, got {raw:?}")));
    }
    Ok(v)
}

/// Parse a long-form `date,ticker,close` file and apply the gap policy.
///
/// The calendar is the union of all dates in the file. Surviving tickers are
/// ordered lexicographically.
pub fn read_panel<R: Read>(input: R, name: &str, schema: &CsvSchema, policy: GapPolicy) -> Result<PanelLoad> {
    let cols = columns(input, name, &[&schema.date, &schema.ticker, &schema.close])?;
    let mut observations: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    let mut dates = BTreeSet::new();
    cols.for_each(|line, f| {
        let date = parse_date(name, line, f[0])?;
        if f[1].is_empty() {
            return Err(Error::parse(name, line, "empty ticker"));
        }
        let close = parse_close(name, line, f[2])?;
        let series = observations.entry(f[1].to_string()).or_default();
        if series.insert(date, close).is_some() {
            return Err(Error::parse(name, line, format!("duplicate row for {} on {date}", f[1])));
        }
        dates.insert(date);
        Ok(())
    })?;

    let dates: Vec<NaiveDate> = dates.into_iter().collect();
    let mut tickers = Vec::new();
    let mut prices = Vec::new();
    let mut excluded = Vec::new();
    for (ticker, series) in observations {
        let missing = dates.len() - series.len();
        match fill_row(&dates, &series, policy) {
            Some(row) => {
                tickers.push(ticker);
                prices.push(row);
            }
            None => {
                log::warn!("{name}: excluding {ticker} ({missing} of {} dates missing)", dates.len());
                excluded.push(ExcludedTicker {
                    ticker,
                    missing_dates: missing,
                });
            }
        }
    }
    if tickers.is_empty() {
        return Err(Error::Data(format!("{name}: no ticker survives the gap policy")));
    }
    let calendar = TradingCalendar::new(dates)?;
    Ok(PanelLoad {
        panel: PricePanel::new(tickers, calendar, prices)?,
        excluded,
    })
}

fn fill_row(dates: &[NaiveDate], series: &BTreeMap<NaiveDate, f64>, policy: GapPolicy) -> Option<Vec<f64>> {
    let max_gap = match policy {
        GapPolicy::DropIncomplete => 0,
        GapPolicy::ForwardFill { max_days } => max_days,
    };
    let mut row = Vec::with_capacity(dates.len());
    let mut last = None;
    let mut gap = 0;
    for d in dates {
        match series.get(d) {
            Some(&p) => {
                last = Some(p);
                gap = 0;
            }
            None => {
                gap += 1;
                if gap > max_gap {
                    return None;
                }
            }
        }
        // Leading gaps have nothing to carry forward.
        row.push(last?);
    }
    Some(row)
}

pub fn read_categories<R: Read>(input: R, name: &str) -> Result<CategoryMap> {
    let cols = columns(input, name, &["ticker", "category"])?;
    let mut map = CategoryMap::new();
    cols.for_each(|line, f| {
        if f[0].is_empty() {
            return Err(Error::parse(name, line, "empty ticker"));
        }
        match map.get(f[0]) {
            Some(prev) if prev != f[1] => Err(Error::parse(
                name,
                line,
                format!("ticker {} assigned to both {prev:?} and {:?}", f[0], f[1]),
            )),
            _ => {
                map.insert(f[0], f[1]);
                Ok(())
            }
        }
    })?;
    Ok(map)
}

pub fn read_index<R: Read>(input: R, name: &str) -> Result<IndexSeries> {
    let cols = columns(input, name, &["date", "close"])?;
    let mut rows = Vec::new();
    cols.for_each(|line, f| {
        rows.push((line, parse_date(name, line, f[0])?, parse_close(name, line, f[1])?));
        Ok(())
    })?;
    rows.sort_by_key(|r| r.1);
    if let Some(w) = rows.windows(2).find(|w| w[0].1 == w[1].1) {
        return Err(Error::parse(name, w[1].0.max(w[0].0), format!("duplicate date {}", w[1].1)));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{name}: index file has no rows")));
    }
    let calendar = TradingCalendar::new(rows.iter().map(|r| r.1).collect())?;
    IndexSeries::new(calendar, rows.into_iter().map(|r| r.2).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexBase {
    /// Average of raw closing prices.
    #[default]
    Raw,
    /// Average of prices rescaled to 1.0 on the first date.
    Normalized,
}

/// Equal-weight average of the panel's prices on each date.
pub fn build_custom_index(panel: &PricePanel, base: IndexBase) -> IndexSeries {
    let n = panel.n_tickers() as f64;
    // Summing in ticker-name order makes the result independent of row order.
    let mut order: Vec<usize> = (0..panel.n_tickers()).collect();
    order.sort_by_key(|&i| &panel.tickers()[i]);
    let values = (0..panel.n_dates())
        .map(|t| {
            let sum: f64 = order
                .iter()
                .map(|&i| &panel.prices()[i])
                .map(|row| match base {
                    IndexBase::Raw => row[t],
                    IndexBase::Normalized => row[t] / row[0],
                })
                .sum();
            sum / n
        })
        .collect();
    IndexSeries::new(panel.calendar().clone(), values).expect("panel prices are finite")
}

/// Pair each domestic day with the latest earlier external day.
///
/// Domestic days are visited in order. A domestic day is dropped when no
/// external day precedes it, or when its latest preceding external day was
/// already taken by an earlier domestic day.
pub fn align_lagged(domestic: &TradingCalendar, external: &TradingCalendar) -> Result<LaggedAlignment> {
    let ext = external.dates();
    let mut pairs = Vec::new();
    let mut domestic_indices = Vec::new();
    let mut external_indices = Vec::new();
    let mut cursor = 0usize;
    let mut last_used: Option<usize> = None;
    for (di, &d) in domestic.dates().iter().enumerate() {
        while cursor < ext.len() && ext[cursor] < d {
            cursor += 1;
        }
        let Some(ei) = cursor.checked_sub(1) else {
            continue;
        };
        if last_used.is_some_and(|u| u >= ei) {
            continue;
        }
        last_used = Some(ei);
        pairs.push((ext[ei], d));
        domestic_indices.push(di);
        external_indices.push(ei);
    }
    if pairs.is_empty() {
        return Err(Error::NoAlignment);
    }
    let dropped = domestic.len() - pairs.len();
    if dropped > 0 {
        log::info!("lagged alignment: {} pairs, {dropped} domestic dates unpaired", pairs.len());
    }
    Ok(LaggedAlignment {
        pairs,
        domestic_indices,
        external_indices,
    })
}

/// Rebuild an alignment from index pairs, checking every invariant.
pub fn alignment_from_indices(
    domestic: &TradingCalendar,
    external: &TradingCalendar,
    indices: &[(usize, usize)],
) -> Result<LaggedAlignment> {
    let mut out = LaggedAlignment {
        pairs: Vec::with_capacity(indices.len()),
        domestic_indices: Vec::with_capacity(indices.len()),
        external_indices: Vec::with_capacity(indices.len()),
    };
    for (k, &(di, ei)) in indices.iter().enumerate() {
        let (Some(&d), Some(&e)) = (domestic.dates().get(di), external.dates().get(ei)) else {
            return Err(Error::Data(format!("alignment pair {k} out of range")));
        };
        if e >= d {
            return Err(Error::Data(format!("alignment pair {k}: external {e} not before domestic {d}")));
        }
        if k > 0 && (di <= out.domestic_indices[k - 1] || ei <= out.external_indices[k - 1]) {
            return Err(Error::Data(format!("alignment pair {k} breaks ordering")));
        }
        out.pairs.push((e, d));
        out.domestic_indices.push(di);
        out.external_indices.push(ei);
    }
    if out.pairs.is_empty() {
        return Err(Error::NoAlignment);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 1, day).unwrap()
    }

    fn cal(days: &[u32]) -> TradingCalendar {
        TradingCalendar::new(days.iter().map(|&x| d(x)).collect()).unwrap()
    }

    fn load(text: &str, policy: GapPolicy) -> Result<PanelLoad> {
        read_panel(text.as_bytes(), "test.csv", &CsvSchema::default(), policy)
    }

    #[test]
    fn loads_complete_panel() {
        let text = "date,ticker,close\n\
                    2024-01-02,B,10\n2024-01-02,A,5\n\
                    2024-01-03,A,6\n2024-01-03,B,11\n\
                    2024-01-04,A,7\n2024-01-04,B,12\n";
        let load = load(text, GapPolicy::DropIncomplete).unwrap();
        assert_eq!(load.panel.tickers(), ["A", "B"]);
        assert_eq!(load.panel.n_dates(), 3);
        assert_eq!(load.panel.prices()[1], vec![10.0, 11.0, 12.0]);
        assert!(load.excluded.is_empty());
    }

    #[test]
    fn drops_incomplete_ticker() {
        let mut text = String::from("date,ticker,close\n");
        for day in 1..=10 {
            text += &format!("2024-01-{day:02},A,1\n2024-01-{day:02},B,2\n");
            if day > 4 {
                text += &format!("2024-01-{day:02},C,3\n");
            }
        }
        let load = load(&text, GapPolicy::DropIncomplete).unwrap();
        assert_eq!(load.panel.tickers(), ["A", "B"]);
        assert_eq!(
            load.excluded,
            vec![ExcludedTicker {
                ticker: "C".into(),
                missing_dates: 4
            }]
        );
    }

    #[test]
    fn forward_fill_bridges_short_gaps_only() {
        let text = "date,ticker,close\n\
                    2024-01-01,A,1\n2024-01-01,B,5\n\
                    2024-01-02,A,2\n\
                    2024-01-03,A,3\n\
                    2024-01-04,A,4\n2024-01-04,B,6\n";
        let load = load(text, GapPolicy::ForwardFill { max_days: 2 }).unwrap();
        assert_eq!(load.panel.prices()[1], vec![5.0, 5.0, 5.0, 6.0]);
        let load = super::read_panel(
            text.as_bytes(),
            "t",
            &CsvSchema::default(),
            GapPolicy::ForwardFill { max_days: 1 },
        )
        .unwrap();
        assert_eq!(load.panel.tickers(), ["A"]);
    }

    #[test]
    fn zero_price_names_the_row() {
        let text = "date,ticker,close\n2024-01-02,A,5\n2024-01-02,B,0\n";
        match load(text, GapPolicy::DropIncomplete) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_are_rejected() {
        for text in [
            "date,ticker,close\n2024-13-02,A,5\n",
            "date,ticker,close\n2024-01-02,A,abc\n",
            "date,ticker,close\n2024-01-02,A,5\n2024-01-02,A,6\n",
            "date,ticker\n2024-01-02,A\n",
            "date,ticker,close\n2024-01-02,A,NaN\n",
        ] {
            assert!(matches!(load(text, GapPolicy::DropIncomplete), Err(Error::Parse { .. })), "{text}");
        }
    }

    #[test]
    fn empty_result_is_fatal() {
        let text = "date,ticker,close\n";
        assert!(matches!(load(text, GapPolicy::DropIncomplete), Err(Error::Data(_))));
    }

    #[test]
    fn custom_index_examples() {
        let calendar = cal(&[1, 2]);
        let panel = PricePanel::new(
            vec!["A".into(), "B".into()],
            calendar.clone(),
            vec![vec![100.0, 110.0], vec![200.0, 190.0]],
        )
        .unwrap();
        assert_eq!(build_custom_index(&panel, IndexBase::Raw).values(), [150.0, 150.0]);
        assert_eq!(build_custom_index(&panel, IndexBase::Normalized).values(), [1.0, 1.025]);

        let flat = PricePanel::new(
            vec!["A".into(), "B".into()],
            calendar.clone(),
            vec![vec![100.0, 100.0], vec![200.0, 200.0]],
        )
        .unwrap();
        assert_eq!(build_custom_index(&flat, IndexBase::Raw).values(), [150.0, 150.0]);

        let single = PricePanel::new(vec!["A".into()], calendar, vec![vec![3.0, 4.5]]).unwrap();
        assert_eq!(build_custom_index(&single, IndexBase::Raw).values(), [3.0, 4.5]);
    }

    #[test]
    fn align_identical_calendars_shifts_by_one() {
        let c = cal(&[1, 2, 3, 4, 5]);
        let a = align_lagged(&c, &c).unwrap();
        assert_eq!(a.pairs(), &[(d(1), d(2)), (d(2), d(3)), (d(3), d(4)), (d(4), d(5))]);
        assert_eq!(a.domestic_indices(), [1, 2, 3, 4]);
        assert_eq!(a.external_indices(), [0, 1, 2, 3]);
    }

    #[test]
    fn align_domestic_holiday() {
        let a = align_lagged(&cal(&[1, 2, 4]), &cal(&[1, 2, 3])).unwrap();
        assert_eq!(a.pairs(), &[(d(1), d(2)), (d(3), d(4))]);
    }

    #[test]
    fn align_external_holiday_drops_domestic_day() {
        // Day 3's latest earlier external day is day 1, already paired with day 2.
        let a = align_lagged(&cal(&[2, 3, 4]), &cal(&[1, 3])).unwrap();
        assert_eq!(a.pairs(), &[(d(1), d(2)), (d(3), d(4))]);
    }

    #[test]
    fn align_disjoint_is_fatal() {
        assert!(matches!(align_lagged(&cal(&[1, 2]), &cal(&[5, 6])), Err(Error::NoAlignment)));
    }

    #[test]
    fn alignment_from_indices_validates() {
        let c = cal(&[1, 2, 3]);
        assert!(alignment_from_indices(&c, &c, &[(1, 0), (2, 1)]).is_ok());
        assert!(alignment_from_indices(&c, &c, &[(1, 1)]).is_err());
        assert!(alignment_from_indices(&c, &c, &[(2, 1), (1, 0)]).is_err());
    }

    #[test]
    fn categories_and_index_parse() {
        let map = read_categories("ticker,category\nA,x\nB,y\nA,x\n".as_bytes(), "c").unwrap();
        assert_eq!(map.get("A"), Some("x"));
        assert!(read_categories("ticker,category\nA,x\nA,y\n".as_bytes(), "c").is_err());
        assert!(map.check_covers(&["A".to_string(), "Z".to_string()]).is_err());

        let idx = read_index("date,close\n2024-01-03,2\n2024-01-02,1\n".as_bytes(), "i").unwrap();
        assert_eq!(idx.values(), [1.0, 2.0]);
        assert!(read_index("date,close\n2024-01-02,1\n2024-01-02,2\n".as_bytes(), "i").is_err());
    }

    #[test]
    fn calendar_rejects_unordered() {
        assert!(TradingCalendar::new(vec![d(2), d(1)]).is_err());
        assert!(TradingCalendar::new(vec![d(1), d(1)]).is_err());
        assert!(TradingCalendar::new(vec![]).is_err());
    }
}
