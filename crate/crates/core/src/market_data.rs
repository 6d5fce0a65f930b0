//! Security-level price records, universe filtering and the date-aligned
//! price panel that every later stage consumes.
//!
//! Panels are stored column-major (one vector per security) since almost
//! every consumer walks a single security's history. Missing values are
//! `NaN`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Open {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: mapped column `{column}` not found in header")]
    MissingColumn { path: String, column: String },
    #[error("{path}: row {row}: {message}")]
    BadRow { path: String, row: usize, message: String },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("no records to build a panel from")]
    NoRecords,
    #[error("every security was dropped (min_coverage = {min_coverage}, max_fill = {max_fill})")]
    AllDropped { min_coverage: f64, max_fill: usize },
    #[error("invalid date split: {0}")]
    BadSplit(String),
    #[error("panel: {0}")]
    BadPanel(String),
    #[error("security `{0}` is not in the panel")]
    UnknownSecurity(SecurityId),
}

/// Panel-level identifier of a security (the ticker, disambiguated with the
/// dscode when two listings share a ticker).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SecurityId(pub String);

impl SecurityId {
    pub fn new(id: impl Into<String>) -> Self {
        SecurityId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SecurityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One security-day row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityRecord {
    pub infocode: String,
    pub dscode: String,
    pub isin: String,
    pub ticker: String,
    pub name: String,
    pub region: String,
    pub currency: Option<String>,
    pub marketdate: NaiveDate,
    pub adjclose: Option<f64>,
    pub marketcap: Option<f64>,
    pub general_industry: String,
    pub industry_group: String,
}

impl SecurityRecord {
    fn listing_key(&self) -> (&str, &str) {
        (&self.infocode, &self.dscode)
    }
}

/// Header names for each record field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub infocode: String,
    pub dscode: String,
    pub isin: String,
    pub ticker: String,
    pub name: String,
    pub region: String,
    /// Optional: when the header lacks it every record has `currency = None`.
    pub currency: String,
    pub marketdate: String,
    pub adjclose: String,
    pub marketcap: String,
    pub general_industry: String,
    pub industry_group: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        ColumnSchema {
            infocode: "infocode".into(),
            dscode: "dscode".into(),
            isin: "isin".into(),
            ticker: "ticker".into(),
            name: "dssecname".into(),
            region: "region".into(),
            currency: "currency".into(),
            marketdate: "marketdate".into(),
            adjclose: "adjclose".into(),
            marketcap: "marketcap".into(),
            general_industry: "general_industry_desc".into(),
            industry_group: "industry_group_desc".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub schema: ColumnSchema,
    pub delimiter: u8,
    /// Skip unparseable rows (recording them) instead of failing.
    pub lenient: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            schema: ColumnSchema::default(),
            delimiter: b',',
            lenient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowIssue {
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<SecurityRecord>,
    pub rows_read: usize,
    pub duplicates_dropped: usize,
    pub skipped: Vec<RowIssue>,
}

struct ColumnIndex {
    infocode: usize,
    dscode: usize,
    isin: Option<usize>,
    ticker: usize,
    name: Option<usize>,
    region: usize,
    currency: Option<usize>,
    marketdate: usize,
    adjclose: usize,
    marketcap: usize,
    general_industry: Option<usize>,
    industry_group: Option<usize>,
}

impl ColumnIndex {
    fn resolve(header: &csv::StringRecord, schema: &ColumnSchema, path: &str) -> Result<Self, DataError> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let require = |name: &str| {
            find(name).ok_or_else(|| DataError::MissingColumn {
                path: path.to_string(),
                column: name.to_string(),
            })
        };
        Ok(ColumnIndex {
            infocode: require(&schema.infocode)?,
            dscode: require(&schema.dscode)?,
            isin: find(&schema.isin),
            ticker: require(&schema.ticker)?,
            name: find(&schema.name),
            region: require(&schema.region)?,
            currency: find(&schema.currency),
            marketdate: require(&schema.marketdate)?,
            adjclose: require(&schema.adjclose)?,
            marketcap: require(&schema.marketcap)?,
            general_industry: find(&schema.general_industry),
            industry_group: find(&schema.industry_group),
        })
    }
}

fn parse_optional_number(raw: &str, what: &str) -> Result<Option<f64>, String> {
    let raw = raw.trim();
    if raw.is_empty() || raw.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    raw.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("unparseable {what} `{raw}`"))
}

fn parse_row(row: &csv::StringRecord, cols: &ColumnIndex) -> Result<SecurityRecord, String> {
    let get = |i: usize| row.get(i).unwrap_or("").trim().to_string();
    let opt = |i: Option<usize>| i.map(get).unwrap_or_default();

    let date_raw = get(cols.marketdate);
    let marketdate =
        NaiveDate::parse_from_str(&date_raw, "%Y-%m-%d").map_err(|_| format!("unparseable marketdate `{date_raw}`"))?;
    let adjclose = parse_optional_number(&get(cols.adjclose), "adjclose")?;
    if let Some(p) = adjclose {
        if !(p > 0.0 && p.is_finite()) {
            return Err(format!("adjclose must be positive, got {p}"));
        }
    }
    let marketcap = parse_optional_number(&get(cols.marketcap), "marketcap")?;
    let currency = cols.currency.map(get).filter(|c| !c.is_empty());

    Ok(SecurityRecord {
        infocode: get(cols.infocode),
        dscode: get(cols.dscode),
        isin: opt(cols.isin),
        ticker: get(cols.ticker),
        name: opt(cols.name),
        region: get(cols.region),
        currency,
        marketdate,
        adjclose,
        marketcap,
        general_industry: opt(cols.general_industry),
        industry_group: opt(cols.industry_group),
    })
}

/// Reads a delimited file of security-day rows.
///
/// Duplicate `(infocode, dscode, marketdate)` rows collapse to the first
/// occurrence. Row numbers in errors are 1-based data rows (header excluded).
pub fn load_records(path: &Path, opts: &LoadOptions) -> Result<LoadReport, DataError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| DataError::Open {
        path: display.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .flexible(true)
        .from_reader(std::io::BufReader::new(file));
    let header = reader.headers()?.clone();
    let cols = ColumnIndex::resolve(&header, &opts.schema, &display)?;

    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        report.rows_read += 1;
        let parsed = row.map_err(|e| e.to_string()).and_then(|r| parse_row(&r, &cols));
        let record = match parsed {
            Ok(r) => r,
            Err(message) if opts.lenient => {
                log::warn!("{display}: skipping row {row_no}: {message}");
                report.skipped.push(RowIssue { row: row_no, message });
                continue;
            }
            Err(message) => {
                return Err(DataError::BadRow {
                    path: display,
                    row: row_no,
                    message,
                })
            }
        };
        let key = (record.infocode.clone(), record.dscode.clone(), record.marketdate);
        if seen.insert(key) {
            report.records.push(record);
        } else {
            report.duplicates_dropped += 1;
        }
    }
    log::info!(
        "{display}: {} rows read, {} records kept, {} duplicates, {} skipped",
        report.rows_read,
        report.records.len(),
        report.duplicates_dropped,
        report.skipped.len()
    );
    Ok(report)
}

/// Static universe membership rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseFilter {
    pub min_marketcap: f64,
    pub region: String,
    pub currency: String,
    pub start_date: NaiveDate,
}

impl Default for UniverseFilter {
    fn default() -> Self {
        UniverseFilter {
            min_marketcap: 1e9,
            region: "US".into(),
            currency: "USD".into(),
            start_date: NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date"),
        }
    }
}

/// Keeps the in-range records of every security that passes the filter.
///
/// Membership is decided once per listing, from its first record dated on
/// or after `start_date`: market cap strictly above the threshold, matching
/// region and (when the record carries one) matching currency.
pub fn filter_universe(records: &[SecurityRecord], filter: &UniverseFilter) -> Vec<SecurityRecord> {
    let mut first_in_range: HashMap<(&str, &str), &SecurityRecord> = HashMap::new();
    for r in records.iter().filter(|r| r.marketdate >= filter.start_date) {
        first_in_range
            .entry(r.listing_key())
            .and_modify(|cur| {
                if r.marketdate < cur.marketdate {
                    *cur = r;
                }
            })
            .or_insert(r);
    }
    let eligible: HashSet<(&str, &str)> = first_in_range
        .into_iter()
        .filter(|(_, r)| {
            r.marketcap.is_some_and(|mc| mc > filter.min_marketcap)
                && r.region == filter.region
                && r.currency.as_deref().is_none_or(|c| c == filter.currency)
        })
        .map(|(k, _)| k)
        .collect();
    records
        .iter()
        .filter(|r| r.marketdate >= filter.start_date && eligible.contains(&r.listing_key()))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelOptions {
    /// Minimum fraction of panel dates a security must actually trade on.
    pub min_coverage: f64,
    /// Longest run of missing days that is forward-filled.
    pub max_fill: usize,
    /// A date enters the panel when at least this fraction of securities trade.
    pub min_active_fraction: f64,
}

impl Default for PanelOptions {
    fn default() -> Self {
        PanelOptions {
            min_coverage: 0.95,
            max_fill: 5,
            min_active_fraction: 0.5,
        }
    }
}

/// Date-aligned closes and simple returns.
#[derive(Debug, Clone)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    securities: Vec<SecurityId>,
    closes: Vec<Vec<f64>>,
    returns: Vec<Vec<f64>>,
    filled: Vec<Vec<bool>>,
}

fn same_floats(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.len() == y.len() && x.iter().zip(y).all(|(u, v)| u == v || (u.is_nan() && v.is_nan())))
}

/// Missing values compare equal to each other.
impl PartialEq for PricePanel {
    fn eq(&self, other: &Self) -> bool {
        self.dates == other.dates
            && self.securities == other.securities
            && self.filled == other.filled
            && same_floats(&self.closes, &other.closes)
            && same_floats(&self.returns, &other.returns)
    }
}

fn simple_returns(closes: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NAN; closes.len()];
    for t in 1..closes.len() {
        out[t] = closes[t] / closes[t - 1] - 1.0;
    }
    out
}

impl PricePanel {
    /// Builds a panel from per-security close columns; returns are derived.
    pub fn from_closes(
        dates: Vec<NaiveDate>,
        securities: Vec<SecurityId>,
        closes: Vec<Vec<f64>>,
    ) -> Result<Self, DataError> {
        let filled = closes.iter().map(|c| vec![false; c.len()]).collect();
        Self::with_fill_mask(dates, securities, closes, filled)
    }

    fn with_fill_mask(
        dates: Vec<NaiveDate>,
        securities: Vec<SecurityId>,
        closes: Vec<Vec<f64>>,
        filled: Vec<Vec<bool>>,
    ) -> Result<Self, DataError> {
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::BadPanel("dates must be strictly increasing".into()));
        }
        if securities.len() != closes.len() {
            return Err(DataError::BadPanel("one close column per security required".into()));
        }
        if closes.iter().any(|c| c.len() != dates.len()) {
            return Err(DataError::BadPanel(
                "close column length differs from date count".into(),
            ));
        }
        let unique: BTreeSet<_> = securities.iter().collect();
        if unique.len() != securities.len() {
            return Err(DataError::BadPanel("duplicate security id".into()));
        }
        let returns = closes.iter().map(|c| simple_returns(c)).collect();
        Ok(PricePanel {
            dates,
            securities,
            closes,
            returns,
            filled,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn securities(&self) -> &[SecurityId] {
        &self.securities
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_securities(&self) -> usize {
        self.securities.len()
    }

    pub fn index_of(&self, id: &SecurityId) -> Result<usize, DataError> {
        self.securities
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| DataError::UnknownSecurity(id.clone()))
    }

    pub fn closes(&self, k: usize) -> &[f64] {
        &self.closes[k]
    }

    /// Simple returns; entry `t` is the return from `t-1` to `t`. The first
    /// entry is `NaN` for a freshly built panel; a panel sliced out of a
    /// longer one keeps the return against the preceding day.
    pub fn returns(&self, k: usize) -> &[f64] {
        &self.returns[k]
    }

    pub fn is_filled(&self, t: usize, k: usize) -> bool {
        self.filled[k][t]
    }

    pub fn close(&self, t: usize, k: usize) -> f64 {
        self.closes[k][t]
    }

    pub fn series(&self, id: &SecurityId) -> Result<&[f64], DataError> {
        Ok(self.closes(self.index_of(id)?))
    }

    /// Rows `range` of this panel, keeping returns computed against the
    /// row before the slice.
    pub fn slice(&self, range: std::ops::Range<usize>) -> PricePanel {
        let cut = |m: &Vec<Vec<f64>>| m.iter().map(|c| c[range.clone()].to_vec()).collect();
        PricePanel {
            dates: self.dates[range.clone()].to_vec(),
            securities: self.securities.clone(),
            closes: cut(&self.closes),
            returns: cut(&self.returns),
            filled: self.filled.iter().map(|c| c[range.clone()].to_vec()).collect(),
        }
    }

    /// Rows whose date lies in `[start, end]`.
    pub fn between(&self, start: NaiveDate, end: NaiveDate) -> PricePanel {
        let lo = self.dates.partition_point(|d| *d < start);
        let hi = self.dates.partition_point(|d| *d <= end);
        self.slice(lo..hi.max(lo))
    }

    /// Appends `later` (same securities, strictly later dates). Returns of
    /// the appended rows are kept as they are.
    pub fn concat(&self, later: &PricePanel) -> Result<PricePanel, DataError> {
        if self.securities != later.securities {
            return Err(DataError::BadPanel(
                "cannot concatenate panels with different securities".into(),
            ));
        }
        if let (Some(a), Some(b)) = (self.dates.last(), later.dates.first()) {
            if a >= b {
                return Err(DataError::BadPanel("concatenated dates must be increasing".into()));
            }
        }
        let join = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.iter().chain(y).copied().collect())
                .collect()
        };
        let mut returns: Vec<Vec<f64>> = join(&self.returns, &later.returns);
        // the first appended row may have been a panel head with no prior close
        if !self.dates.is_empty() && !later.dates.is_empty() {
            let t = self.dates.len();
            for (k, col) in returns.iter_mut().enumerate() {
                if col[t].is_nan() {
                    col[t] = later.closes[k][0] / self.closes[k][t - 1] - 1.0;
                }
            }
        }
        Ok(PricePanel {
            dates: self.dates.iter().chain(&later.dates).copied().collect(),
            securities: self.securities.clone(),
            closes: join(&self.closes, &later.closes),
            returns,
            filled: self
                .filled
                .iter()
                .zip(&later.filled)
                .map(|(x, y)| x.iter().chain(y).copied().collect())
                .collect(),
        })
    }

    /// Writes the aligned close matrix as `date,<id>,<id>,...`. Missing
    /// closes are empty cells; values use round-trip float formatting.
    pub fn write_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.securities.iter().map(|s| s.0.clone()));
        w.write_record(&header)?;
        for (t, d) in self.dates.iter().enumerate() {
            let mut row = vec![d.format("%Y-%m-%d").to_string()];
            row.extend(
                self.closes
                    .iter()
                    .map(|c| if c[t].is_nan() { String::new() } else { c[t].to_string() }),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a matrix written by [`PricePanel::write_csv`].
    pub fn read_csv(path: &Path) -> Result<PricePanel, DataError> {
        let display = path.display().to_string();
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let securities: Vec<SecurityId> = header.iter().skip(1).map(SecurityId::new).collect();
        let mut dates = Vec::new();
        let mut closes = vec![Vec::new(); securities.len()];
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let bad = |message: String| DataError::BadRow {
                path: display.clone(),
                row: i + 1,
                message,
            };
            let d = row.get(0).unwrap_or("");
            dates.push(NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|_| bad(format!("unparseable date `{d}`")))?);
            for (k, col) in closes.iter_mut().enumerate() {
                let v = parse_optional_number(row.get(k + 1).unwrap_or(""), "close").map_err(bad)?;
                col.push(v.unwrap_or(f64::NAN));
            }
        }
        PricePanel::from_closes(dates, securities, closes)
    }
}

/// Builds the aligned panel.
///
/// Dates are the days on which at least `min_active_fraction` of the
/// candidate securities trade. A security is dropped when it trades on fewer
/// than `min_coverage` of those dates or when any run of missing days after
/// its first observation exceeds `max_fill`; shorter runs are forward-filled
/// (zero return on the filled days). Dropping securities changes the date
/// set, so the rules are reapplied until nothing more is dropped.
pub fn build_panel(records: &[SecurityRecord], opts: &PanelOptions) -> Result<PricePanel, DataError> {
    if records.is_empty() {
        return Err(DataError::NoRecords);
    }
    // (infocode, dscode) -> (ticker, closes by date)
    type Listing<'a> = (&'a str, BTreeMap<NaiveDate, f64>);
    let mut listings: BTreeMap<(&str, &str), Listing> = BTreeMap::new();
    for r in records {
        let entry = listings
            .entry(r.listing_key())
            .or_insert_with(|| (r.ticker.as_str(), BTreeMap::new()));
        if let Some(p) = r.adjclose {
            entry.1.entry(r.marketdate).or_insert(p);
        }
    }
    listings.retain(|_, (_, obs)| !obs.is_empty());

    let mut ticker_count: HashMap<&str, usize> = HashMap::new();
    for (ticker, _) in listings.values() {
        *ticker_count.entry(ticker).or_default() += 1;
    }
    let mut candidates: Vec<(SecurityId, BTreeMap<NaiveDate, f64>)> = listings
        .into_iter()
        .map(|((_, dscode), (ticker, obs))| {
            let id = if ticker_count[ticker] > 1 || ticker.is_empty() {
                format!("{ticker}:{dscode}")
            } else {
                ticker.to_string()
            };
            (SecurityId(id), obs)
        })
        .collect();
    candidates.sort_by(|a, b| a.0.cmp(&b.0));

    loop {
        if candidates.is_empty() {
            return Err(DataError::AllDropped {
                min_coverage: opts.min_coverage,
                max_fill: opts.max_fill,
            });
        }
        let mut active: BTreeMap<NaiveDate, usize> = BTreeMap::new();
        for (_, obs) in &candidates {
            for d in obs.keys() {
                *active.entry(*d).or_default() += 1;
            }
        }
        let needed = opts.min_active_fraction * candidates.len() as f64;
        let dates: Vec<NaiveDate> = active
            .into_iter()
            .filter(|(_, n)| *n as f64 >= needed)
            .map(|(d, _)| d)
            .collect();

        let before = candidates.len();
        candidates.retain(|(id, obs)| {
            let present: Vec<bool> = dates.iter().map(|d| obs.contains_key(d)).collect();
            let coverage = present.iter().filter(|p| **p).count() as f64 / dates.len().max(1) as f64;
            if coverage < opts.min_coverage {
                log::info!("dropping {id}: coverage {coverage:.3} below {}", opts.min_coverage);
                return false;
            }
            let longest = longest_gap_after_first(&present);
            if longest > opts.max_fill {
                log::info!("dropping {id}: {longest}-day gap exceeds fill limit {}", opts.max_fill);
                return false;
            }
            true
        });
        if candidates.len() != before {
            continue;
        }

        let mut securities = Vec::with_capacity(candidates.len());
        let mut closes = Vec::with_capacity(candidates.len());
        let mut filled = Vec::with_capacity(candidates.len());
        for (id, obs) in candidates {
            let mut col = Vec::with_capacity(dates.len());
            let mut fill = Vec::with_capacity(dates.len());
            let mut last = f64::NAN;
            for d in &dates {
                match obs.get(d) {
                    Some(p) => {
                        last = *p;
                        col.push(*p);
                        fill.push(false);
                    }
                    None => {
                        col.push(last);
                        fill.push(!last.is_nan());
                    }
                }
            }
            securities.push(id);
            closes.push(col);
            filled.push(fill);
        }
        return PricePanel::with_fill_mask(dates, securities, closes, filled);
    }
}

fn longest_gap_after_first(present: &[bool]) -> usize {
    let Some(first) = present.iter().position(|p| *p) else {
        return present.len();
    };
    let mut longest = 0;
    let mut run = 0;
    for p in &present[first..] {
        if *p {
            run = 0;
        } else {
            run += 1;
            longest = longest.max(run);
        }
    }
    longest
}

/// Inclusive train and test date ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateSplit {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

impl DateSplit {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.train_start > self.train_end {
            return Err(DataError::BadSplit("train_start is after train_end".into()));
        }
        if self.test_start > self.test_end {
            return Err(DataError::BadSplit("test_start is after test_end".into()));
        }
        if self.train_end >= self.test_start {
            return Err(DataError::BadSplit(format!(
                "train_end {} must precede test_start {}",
                self.train_end, self.test_start
            )));
        }
        Ok(())
    }
}

pub fn split_panel(panel: &PricePanel, split: &DateSplit) -> Result<(PricePanel, PricePanel), DataError> {
    split.validate()?;
    let train = panel.between(split.train_start, split.train_end);
    let test = panel.between(split.test_start, split.test_end);
    if train.n_dates() == 0 {
        return Err(DataError::BadSplit("training range contains no panel dates".into()));
    }
    if test.n_dates() == 0 {
        return Err(DataError::BadSplit("test range contains no panel dates".into()));
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn record(ticker: &str, d: &str, close: f64) -> SecurityRecord {
        SecurityRecord {
            infocode: format!("{ticker}-info"),
            dscode: format!("{ticker}-ds"),
            isin: String::new(),
            ticker: ticker.into(),
            name: ticker.into(),
            region: "US".into(),
            currency: Some("USD".into()),
            marketdate: date(d),
            adjclose: Some(close),
            marketcap: Some(2e9),
            general_industry: String::new(),
            industry_group: String::new(),
        }
    }

    fn business_days(n: usize) -> Vec<NaiveDate> {
        let mut d = date("2018-01-01");
        let mut out = Vec::new();
        while out.len() < n {
            use chrono::Datelike;
            if d.weekday().num_days_from_monday() < 5 {
                out.push(d);
            }
            d = d.succ_opt().unwrap();
        }
        out
    }

    const SCCO: &str = "\
infocode,dscode,isin,ticker,dssecname,region,marketdate,adjclose,marketcap,general_industry_desc,industry_group_desc
6347.0,151928,US84265V1052,SCCO,SOUTHERN COPPER,US,2018-01-02,48.127152,3.7e10,INDUSTRIAL,COPPER PRODUCERS
6347.0,151928,US84265V1052,SCCO,SOUTHERN COPPER,US,2018-01-03,48.215742,3.7e10,INDUSTRIAL,COPPER PRODUCERS
6347.0,151928,US84265V1052,SCCO,SOUTHERN COPPER,US,2018-01-04,47.969693,3.7e10,INDUSTRIAL,COPPER PRODUCERS
6347.0,151928,US84265V1052,SCCO,SOUTHERN COPPER,US,2018-01-05,48.343677,3.7e10,INDUSTRIAL,COPPER PRODUCERS
6347.0,151928,US84265V1052,SCCO,SOUTHERN COPPER,US,2018-01-08,48.570053,3.7e10,INDUSTRIAL,COPPER PRODUCERS
";

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_table_layout() {
        let f = write_tmp(SCCO);
        let rep = load_records(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(rep.records.len(), 5);
        assert_eq!(rep.rows_read, 5);
        let first = &rep.records[0];
        assert_eq!(first.ticker, "SCCO");
        assert_eq!(first.marketdate, date("2018-01-02"));
        assert_eq!(first.adjclose, Some(48.127152));
        assert_eq!(first.infocode, "6347.0");
        assert_eq!(first.industry_group, "COPPER PRODUCERS");
        assert_eq!(first.currency, None);
    }

    #[test]
    fn empty_file_with_header() {
        let header = SCCO.lines().next().unwrap();
        let f = write_tmp(&format!("{header}\n"));
        let rep = load_records(f.path(), &LoadOptions::default()).unwrap();
        assert!(rep.records.is_empty());
    }

    #[test]
    fn duplicate_rows_collapse_to_first() {
        let mut lines: Vec<&str> = SCCO.lines().take(2).collect();
        let dup = lines[1].replace("48.127152", "99.0");
        lines.push(&dup);
        let f = write_tmp(&lines.join("\n"));
        let rep = load_records(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(rep.records.len(), 1);
        assert_eq!(rep.duplicates_dropped, 1);
        assert_eq!(rep.records[0].adjclose, Some(48.127152));
    }

    #[test]
    fn dedup_is_idempotent() {
        let f = write_tmp(SCCO);
        let once = load_records(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(once.duplicates_dropped, 0);
        assert_eq!(once.records.len(), once.rows_read);
    }

    #[test]
    fn missing_file_and_column() {
        let err = load_records(Path::new("/nonexistent/prices.csv"), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, DataError::Open { .. }));

        let f = write_tmp("ticker,marketdate\nA,2018-01-02\n");
        let err = load_records(f.path(), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn { .. }));
    }

    #[test]
    fn bad_rows_fatal_or_skipped() {
        let bad = SCCO.replace("2018-01-04", "2018-13-04");
        let f = write_tmp(&bad);
        match load_records(f.path(), &LoadOptions::default()) {
            Err(DataError::BadRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected BadRow, got {other:?}"),
        }
        let lenient = LoadOptions {
            lenient: true,
            ..Default::default()
        };
        let rep = load_records(f.path(), &lenient).unwrap();
        assert_eq!(rep.records.len(), 4);
        assert_eq!(rep.skipped.len(), 1);
        assert_eq!(rep.skipped[0].row, 3);
    }

    #[test]
    fn filter_thresholds() {
        let mut small = record("SMALL", "2018-01-02", 10.0);
        small.marketcap = Some(5e8);
        let mut uk = record("UKCO", "2018-01-02", 10.0);
        uk.region = "UK".into();
        let f = UniverseFilter::default();
        assert!(filter_universe(&[small], &f).is_empty());
        assert!(filter_universe(&[uk], &f).is_empty());
    }

    #[test]
    fn filter_mixed_set() {
        // per-record predicate oracle over ten single-record securities
        let mut recs = Vec::new();
        for i in 0..10 {
            let mut r = record(&format!("S{i}"), "2018-03-01", 10.0);
            match i {
                0 => r.marketcap = Some(1e9), // not strictly greater
                1 => r.marketcap = Some(5e8),
                2 => r.region = "CA".into(),
                3 => r.currency = Some("CAD".into()),
                4 => r.marketdate = date("2017-12-29"),
                5 => r.marketcap = None,
                _ => {}
            }
            recs.push(r);
        }
        let f = UniverseFilter::default();
        let oracle: Vec<&SecurityRecord> = recs
            .iter()
            .filter(|r| {
                r.marketcap.is_some_and(|m| m > 1e9)
                    && r.region == "US"
                    && r.currency.as_deref() == Some("USD")
                    && r.marketdate >= f.start_date
            })
            .collect();
        let kept = filter_universe(&recs, &f);
        assert_eq!(kept.len(), 4);
        assert_eq!(kept.len(), oracle.len());
        for (a, b) in kept.iter().zip(oracle) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn filter_uses_first_in_range_marketcap() {
        let mut early = record("A", "2017-12-01", 10.0);
        early.marketcap = Some(1e8);
        let first = record("A", "2018-01-02", 10.0);
        let mut later = record("A", "2018-06-01", 10.0);
        later.marketcap = Some(1e8);
        let kept = filter_universe(&[early, later, first], &UniverseFilter::default());
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn aligned_two_securities() {
        let days = business_days(10);
        let mut recs = Vec::new();
        for (t, d) in days.iter().enumerate() {
            let ds = d.format("%Y-%m-%d").to_string();
            recs.push(record("A", &ds, 10.0 + t as f64));
            recs.push(record("B", &ds, 20.0 + t as f64));
        }
        let p = build_panel(&recs, &PanelOptions::default()).unwrap();
        assert_eq!(p.n_securities(), 2);
        assert_eq!(p.n_dates(), 10);
        assert!((0..10).all(|t| !p.is_filled(t, 0) && !p.is_filled(t, 1)));
        assert!(p.returns(0)[0].is_nan());
        assert!((p.returns(0)[1] - (11.0 / 10.0 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn low_coverage_security_dropped() {
        let days = business_days(10);
        let mut recs = Vec::new();
        for (t, d) in days.iter().enumerate() {
            let ds = d.format("%Y-%m-%d").to_string();
            recs.push(record("A", &ds, 10.0));
            recs.push(record("C", &ds, 30.0));
            if t >= 2 {
                recs.push(record("B", &ds, 20.0));
            }
        }
        let p = build_panel(&recs, &PanelOptions::default()).unwrap();
        assert_eq!(p.securities(), &[SecurityId::new("A"), SecurityId::new("C")]);
    }

    #[test]
    fn short_gap_forward_filled() {
        // hand-built 10-day series with a three-day hole at t = 4..=6
        let days = business_days(10);
        let b_prices = [20.0, 21.0, 22.0, 23.0, f64::NAN, f64::NAN, f64::NAN, 24.0, 25.0, 26.0];
        let mut recs = Vec::new();
        for (t, d) in days.iter().enumerate() {
            let ds = d.format("%Y-%m-%d").to_string();
            recs.push(record("A", &ds, 10.0));
            if !b_prices[t].is_nan() {
                recs.push(record("B", &ds, b_prices[t]));
            }
        }
        let opts = PanelOptions {
            min_coverage: 0.5,
            ..Default::default()
        };
        let p = build_panel(&recs, &opts).unwrap();
        let b = p.index_of(&SecurityId::new("B")).unwrap();
        assert_eq!(
            p.closes(b),
            &[20.0, 21.0, 22.0, 23.0, 23.0, 23.0, 23.0, 24.0, 25.0, 26.0]
        );
        for t in 4..=6 {
            assert!(p.is_filled(t, b));
            assert_eq!(p.returns(b)[t], 0.0);
        }
        assert!((p.returns(b)[7] - (24.0 / 23.0 - 1.0)).abs() < 1e-15);

        let strict = PanelOptions {
            min_coverage: 0.5,
            max_fill: 2,
            ..Default::default()
        };
        let p = build_panel(&recs, &strict).unwrap();
        assert_eq!(p.securities(), &[SecurityId::new("A")]);
    }

    #[test]
    fn all_dropped_is_an_error() {
        let recs = vec![record("A", "2018-01-02", 10.0)];
        let opts = PanelOptions {
            min_coverage: 1.5,
            ..Default::default()
        };
        assert!(matches!(build_panel(&recs, &opts), Err(DataError::AllDropped { .. })));
        assert!(matches!(build_panel(&[], &opts), Err(DataError::NoRecords)));
    }

    #[test]
    fn sparse_days_excluded_from_calendar() {
        // a day only one of three securities trades on is not a panel date
        let days = business_days(5);
        let mut recs = Vec::new();
        for d in &days {
            let ds = d.format("%Y-%m-%d").to_string();
            for s in ["A", "B", "C"] {
                recs.push(record(s, &ds, 10.0));
            }
        }
        recs.push(record("A", "2018-01-06", 10.0)); // a Saturday
        let p = build_panel(&recs, &PanelOptions::default()).unwrap();
        assert_eq!(p.dates(), &days[..]);
    }

    fn synthetic_panel(n: usize) -> PricePanel {
        let dates = business_days(n);
        let a: Vec<f64> = (0..n).map(|t| 10.0 + (t as f64 * 0.3).sin()).collect();
        let b: Vec<f64> = (0..n).map(|t| 20.0 + (t as f64 * 0.7).cos()).collect();
        PricePanel::from_closes(dates, vec![SecurityId::new("A"), SecurityId::new("B")], vec![a, b]).unwrap()
    }

    #[test]
    fn split_at_midpoint_partitions() {
        let p = synthetic_panel(20);
        let split = DateSplit {
            train_start: p.dates()[0],
            train_end: p.dates()[9],
            test_start: p.dates()[10],
            test_end: p.dates()[19],
        };
        let (train, test) = split_panel(&p, &split).unwrap();
        assert_eq!(train.n_dates() + test.n_dates(), p.n_dates());
        assert_eq!(train.securities(), test.securities());
        assert_eq!(train.concat(&test).unwrap(), p);
    }

    #[test]
    fn split_calendar_years() {
        let start = date("2018-01-01");
        let dates: Vec<NaiveDate> = (0..365 * 5).map(|i| start + chrono::Days::new(i)).collect();
        let n = dates.len();
        let p = PricePanel::from_closes(dates, vec![SecurityId::new("A")], vec![vec![1.0; n]]).unwrap();
        let split = DateSplit {
            train_start: date("2018-01-01"),
            train_end: date("2020-12-31"),
            test_start: date("2021-01-01"),
            test_end: date("2022-12-31"),
        };
        let (train, test) = split_panel(&p, &split).unwrap();
        assert_eq!(*train.dates().last().unwrap(), date("2020-12-31"));
        assert_eq!(test.dates()[0], date("2021-01-01"));
    }

    #[test]
    fn split_rejects_overlap_and_empty() {
        let p = synthetic_panel(20);
        let overlap = DateSplit {
            train_start: p.dates()[0],
            train_end: p.dates()[12],
            test_start: p.dates()[10],
            test_end: p.dates()[19],
        };
        assert!(matches!(split_panel(&p, &overlap), Err(DataError::BadSplit(_))));
        let empty = DateSplit {
            train_start: p.dates()[0],
            train_end: p.dates()[19],
            test_start: date("2030-01-01"),
            test_end: date("2030-12-31"),
        };
        assert!(matches!(split_panel(&p, &empty), Err(DataError::BadSplit(_))));
    }

    #[test]
    fn panel_csv_round_trip() {
        let p = synthetic_panel(15);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        p.write_csv(&path).unwrap();
        let q = PricePanel::read_csv(&path).unwrap();
        assert_eq!(p.dates(), q.dates());
        assert_eq!(p.closes(0), q.closes(0));
        assert_eq!(p.closes(1), q.closes(1));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn returns_reconstruct_closes(prices in proptest::collection::vec(0.5f64..500.0, 2..60)) {
                let n = prices.len();
                let p = PricePanel::from_closes(business_days(n), vec![SecurityId::new("X")], vec![prices.clone()]).unwrap();
                for t in 1..n {
                    let rebuilt = (1.0 + p.returns(0)[t]) * prices[t - 1];
                    prop_assert!(((rebuilt - prices[t]) / prices[t]).abs() <= 1e-12);
                }
            }

            #[test]
            fn any_split_point_round_trips(n in 4usize..40, cut_frac in 0.1f64..0.9) {
                let p = synthetic_panel(n);
                let cut = ((n as f64 * cut_frac) as usize).clamp(1, n - 1);
                let split = DateSplit {
                    train_start: p.dates()[0],
                    train_end: p.dates()[cut - 1],
                    test_start: p.dates()[cut],
                    test_end: p.dates()[n - 1],
                };
                let (train, test) = split_panel(&p, &split).unwrap();
                prop_assert_eq!(train.concat(&test).unwrap(), p);
            }
        }
    }
}
