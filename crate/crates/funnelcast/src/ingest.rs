//! Parsing and joining of exported analytics tables.
//!
//! Canonical interchange is one delimited-text file per table (users,
//! sessions, hits). A GA Reporting-v4-shaped JSON adapter maps report
//! dimension/metric names onto the same canonical schemas. Parsed rows are
//! joined into per-user [`Journey`] records; every anomaly (orphan hits,
//! hitless sessions, duplicate users) is counted in a [`DropReport`] rather
//! than aborting the join.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed header: expected {expected:?}, got {got:?}")]
    MalformedHeader { expected: Vec<String>, got: Vec<String> },
    #[error("bad value at line {line}, column {column}: {detail}")]
    BadValue { line: usize, column: String, detail: String },
    #[error("duplicate session_id {0}")]
    DuplicateKey(String),
    #[error("required column {0} missing from report")]
    MissingColumn(String),
    #[error("row {row} has {got} values, header declares {expected}")]
    ShapeMismatch { row: usize, got: usize, expected: usize },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Which of the three canonical tables a stream holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Users,
    Sessions,
    Hits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UserType {
    New,
    Returning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceCategory {
    Desktop,
    Mobile,
    Tablet,
}

/// Funnel tokens recorded per session by enhanced e-commerce tracking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShoppingStage {
    AllVisits,
    ProductView,
    AddToCart,
    Checkout,
    Transaction,
}

impl ShoppingStage {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ALL_VISITS" => Some(Self::AllVisits),
            "PRODUCT_VIEW" => Some(Self::ProductView),
            "ADD_TO_CART" => Some(Self::AddToCart),
            "CHECKOUT" => Some(Self::Checkout),
            "TRANSACTION" => Some(Self::Transaction),
            _ => None,
        }
    }

    pub fn token(&self) -> &'static str {
        match self {
            Self::AllVisits => "ALL_VISITS",
            Self::ProductView => "PRODUCT_VIEW",
            Self::AddToCart => "ADD_TO_CART",
            Self::Checkout => "CHECKOUT",
            Self::Transaction => "TRANSACTION",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawUserRow {
    pub client_id: String,
    pub user_type: UserType,
    pub device_category: DeviceCategory,
    pub browser_name: String,
    pub device_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSessionRow {
    pub client_id: String,
    pub session_id: String,
    pub duration_s: f64,
    pub unique_pageviews: u64,
    pub transactions: u64,
    pub revenue: f64,
    pub unique_purchases: u64,
    pub days_since_last_session: u64,
    pub site_search_used: bool,
    pub results_pageviews: u64,
    pub total_unique_searches: u64,
    pub search_depth: u64,
    pub search_refinements: u64,
    pub shopping_stages: BTreeSet<ShoppingStage>,
}

impl RawSessionRow {
    /// Millisecond timestamp embedded after the last `.` of the session id.
    pub fn timestamp_millis(&self) -> Option<i64> {
        self.session_id.rsplit('.').next()?.parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawHitRow {
    pub client_id: String,
    pub session_id: String,
    pub minute_of_day: u32,
    pub time_on_page_s: f64,
    pub product_detail_view: bool,
}

/// One user's ordered sessions with their ordered hits — the unit of training.
#[derive(Debug, Clone, PartialEq)]
pub struct Journey {
    pub user: RawUserRow,
    pub sessions: Vec<(RawSessionRow, Vec<RawHitRow>)>,
}

/// Join anomaly counters. Nothing here is fatal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DropReport {
    pub sessions_without_hits: usize,
    pub orphan_hits: usize,
    pub sessions_without_user: usize,
    pub duplicate_users: usize,
    pub users_without_sessions: usize,
}

pub const USERS_HEADER: &[&str] = &[
    "client_id",
    "user_type",
    "device_category",
    "browser_name",
    "device_name",
];

pub const SESSIONS_HEADER: &[&str] = &[
    "client_id",
    "session_id",
    "duration_s",
    "unique_pageviews",
    "transactions",
    "revenue",
    "unique_purchases",
    "days_since_last_session",
    "site_search_used",
    "results_pageviews",
    "total_unique_searches",
    "search_depth",
    "search_refinements",
    "shopping_stages",
];

pub const HITS_HEADER: &[&str] =
    &["client_id", "session_id", "minute_of_day", "time_on_page_s", "product_detail_view"];

/// Rows of one parsed table.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedTable {
    Users(Vec<RawUserRow>),
    Sessions(Vec<RawSessionRow>),
    Hits(Vec<RawHitRow>),
}

impl ParsedTable {
    pub fn len(&self) -> usize {
        match self {
            Self::Users(v) => v.len(),
            Self::Sessions(v) => v.len(),
            Self::Hits(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Cell<'a> {
    line: usize,
    column: &'static str,
    raw: &'a str,
}

impl<'a> Cell<'a> {
    fn err(&self, detail: impl Into<String>) -> IngestError {
        IngestError::BadValue {
            line: self.line,
            column: self.column.to_string(),
            detail: detail.into(),
        }
    }

    fn string_nonempty(&self) -> Result<String, IngestError> {
        if self.raw.is_empty() {
            return Err(self.err("empty"));
        }
        Ok(self.raw.to_string())
    }

    fn f64_nonneg(&self) -> Result<f64, IngestError> {
        let v: f64 = self.raw.parse().map_err(|_| self.err("not a number"))?;
        if !v.is_finite() || v < 0.0 {
            return Err(self.err("must be finite and non-negative"));
        }
        Ok(v)
    }

    fn u64(&self) -> Result<u64, IngestError> {
        self.raw.parse().map_err(|_| self.err("not a non-negative integer"))
    }

    fn bool01(&self) -> Result<bool, IngestError> {
        match self.raw {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(self.err("expected 0 or 1")),
        }
    }
}

fn check_header(got: &csv::StringRecord, expected: &[&str]) -> Result<(), IngestError> {
    let got_vec: Vec<String> = got.iter().map(str::to_string).collect();
    if got_vec != expected {
        return Err(IngestError::MalformedHeader {
            expected: expected.iter().map(|s| s.to_string()).collect(),
            got: got_vec,
        });
    }
    Ok(())
}

fn cell<'a>(rec: &'a csv::StringRecord, idx: usize, line: usize, column: &'static str) -> Cell<'a> {
    Cell { line, column, raw: rec.get(idx).unwrap_or("") }
}

pub fn parse_user_fields(fields: &[(&'static str, &str)], line: usize) -> Result<RawUserRow, IngestError> {
    let get = |name: &'static str| -> Cell<'_> {
        let raw = fields.iter().find(|(n, _)| *n == name).map(|(_, v)| *v).unwrap_or("");
        Cell { line, column: name, raw }
    };
    let user_type = match get("user_type").raw {
        "New" => UserType::New,
        "Returning" => UserType::Returning,
        other => return Err(get("user_type").err(format!("unknown user_type {other:?}"))),
    };
    let device_category = match get("device_category").raw {
        "desktop" => DeviceCategory::Desktop,
        "mobile" => DeviceCategory::Mobile,
        "tablet" => DeviceCategory::Tablet,
        other => {
            return Err(get("device_category").err(format!("unknown device_category {other:?}")))
        }
    };
    Ok(RawUserRow {
        client_id: get("client_id").string_nonempty()?,
        user_type,
        device_category,
        browser_name: get("browser_name").string_nonempty()?,
        device_name: get("device_name").string_nonempty()?,
    })
}

pub fn parse_session_fields(
    fields: &[(&'static str, &str)],
    line: usize,
) -> Result<RawSessionRow, IngestError> {
    let get = |name: &'static str| -> Cell<'_> {
        let raw = fields.iter().find(|(n, _)| *n == name).map(|(_, v)| *v).unwrap_or("");
        Cell { line, column: name, raw }
    };
    let stages_cell = get("shopping_stages");
    let mut shopping_stages = BTreeSet::new();
    for token in stages_cell.raw.split('|').filter(|t| !t.is_empty()) {
        let stage = ShoppingStage::parse(token)
            .ok_or_else(|| stages_cell.err(format!("unknown stage token {token:?}")))?;
        shopping_stages.insert(stage);
    }
    let row = RawSessionRow {
        client_id: get("client_id").string_nonempty()?,
        session_id: get("session_id").string_nonempty()?,
        duration_s: get("duration_s").f64_nonneg()?,
        unique_pageviews: get("unique_pageviews").u64()?,
        transactions: get("transactions").u64()?,
        revenue: get("revenue").f64_nonneg()?,
        unique_purchases: get("unique_purchases").u64()?,
        days_since_last_session: get("days_since_last_session").u64()?,
        site_search_used: get("site_search_used").bool01()?,
        results_pageviews: get("results_pageviews").u64()?,
        total_unique_searches: get("total_unique_searches").u64()?,
        search_depth: get("search_depth").u64()?,
        search_refinements: get("search_refinements").u64()?,
        shopping_stages,
    };
    if row.transactions > 0 && row.unique_purchases == 0 {
        return Err(get("unique_purchases").err("transactions > 0 requires unique_purchases >= 1"));
    }
    if row.timestamp_millis().is_none() {
        return Err(get("session_id").err("timestamp suffix not parseable as integer"));
    }
    Ok(row)
}

pub fn parse_hit_fields(fields: &[(&'static str, &str)], line: usize) -> Result<RawHitRow, IngestError> {
    let get = |name: &'static str| -> Cell<'_> {
        let raw = fields.iter().find(|(n, _)| *n == name).map(|(_, v)| *v).unwrap_or("");
        Cell { line, column: name, raw }
    };
    let minute_cell = get("minute_of_day");
    let minute_of_day = minute_cell.u64()? as u32;
    if minute_of_day > 1439 {
        return Err(minute_cell.err("minute_of_day must be in 0..=1439"));
    }
    Ok(RawHitRow {
        client_id: get("client_id").string_nonempty()?,
        session_id: get("session_id").string_nonempty()?,
        minute_of_day,
        time_on_page_s: get("time_on_page_s").f64_nonneg()?,
        product_detail_view: get("product_detail_view").bool01()?,
    })
}

/// Parse one canonical delimited-text table.
pub fn parse_table<R: Read>(kind: TableKind, source: R) -> Result<ParsedTable, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = reader.headers()?.clone();
    match kind {
        TableKind::Users => {
            check_header(&header, USERS_HEADER)?;
            let mut rows = Vec::new();
            for (i, rec) in reader.records().enumerate() {
                let rec = rec?;
                let line = i + 2;
                let fields: Vec<(&'static str, &str)> = USERS_HEADER
                    .iter()
                    .enumerate()
                    .map(|(j, name)| (*name, cell(&rec, j, line, name).raw))
                    .collect();
                rows.push(parse_user_fields(&fields, line)?);
            }
            Ok(ParsedTable::Users(rows))
        }
        TableKind::Sessions => {
            check_header(&header, SESSIONS_HEADER)?;
            let mut rows = Vec::new();
            let mut seen = HashSet::new();
            for (i, rec) in reader.records().enumerate() {
                let rec = rec?;
                let line = i + 2;
                let fields: Vec<(&'static str, &str)> = SESSIONS_HEADER
                    .iter()
                    .enumerate()
                    .map(|(j, name)| (*name, cell(&rec, j, line, name).raw))
                    .collect();
                let row = parse_session_fields(&fields, line)?;
                if !seen.insert(row.session_id.clone()) {
                    return Err(IngestError::DuplicateKey(row.session_id));
                }
                rows.push(row);
            }
            Ok(ParsedTable::Sessions(rows))
        }
        TableKind::Hits => {
            check_header(&header, HITS_HEADER)?;
            let mut rows = Vec::new();
            for (i, rec) in reader.records().enumerate() {
                let rec = rec?;
                let line = i + 2;
                let fields: Vec<(&'static str, &str)> = HITS_HEADER
                    .iter()
                    .enumerate()
                    .map(|(j, name)| (*name, cell(&rec, j, line, name).raw))
                    .collect();
                rows.push(parse_hit_fields(&fields, line)?);
            }
            Ok(ParsedTable::Hits(rows))
        }
    }
}

/// Canonical field names and their accepted GA report column aliases.
fn ga_aliases(canonical: &str) -> Vec<String> {
    let mut v = vec![canonical.to_string(), format!("ga:{canonical}")];
    let extra = match canonical {
        "client_id" => Some("ga:clientId"),
        "session_id" => Some("ga:sessionId"),
        "user_type" => Some("ga:userType"),
        "device_category" => Some("ga:deviceCategory"),
        "browser_name" => Some("ga:browser"),
        "device_name" => Some("ga:mobileDeviceModel"),
        "duration_s" => Some("ga:sessionDuration"),
        "unique_pageviews" => Some("ga:uniquePageviews"),
        "transactions" => Some("ga:transactions"),
        "revenue" => Some("ga:transactionRevenue"),
        "unique_purchases" => Some("ga:uniquePurchases"),
        "days_since_last_session" => Some("ga:daysSinceLastSession"),
        "site_search_used" => Some("ga:searchUsed"),
        "results_pageviews" => Some("ga:searchResultViews"),
        "total_unique_searches" => Some("ga:searchUniques"),
        "search_depth" => Some("ga:searchDepth"),
        "search_refinements" => Some("ga:searchRefinements"),
        "shopping_stages" => Some("ga:shoppingStage"),
        "minute_of_day" => Some("ga:dateHourMinute"),
        "time_on_page_s" => Some("ga:timeOnPage"),
        "product_detail_view" => Some("ga:productDetailViews"),
        _ => None,
    };
    if let Some(e) = extra {
        v.push(e.to_string());
    }
    v
}

#[derive(Deserialize)]
struct GaReport {
    #[serde(rename = "columnHeader")]
    column_header: GaColumnHeader,
    #[serde(default)]
    data: GaData,
}

#[derive(Deserialize)]
struct GaColumnHeader {
    #[serde(default)]
    dimensions: Vec<String>,
    #[serde(rename = "metricHeader", default)]
    metric_header: GaMetricHeader,
}

#[derive(Deserialize, Default)]
struct GaMetricHeader {
    #[serde(rename = "metricHeaderEntries", default)]
    metric_header_entries: Vec<GaMetricEntry>,
}

#[derive(Deserialize)]
struct GaMetricEntry {
    name: String,
}

#[derive(Deserialize, Default)]
struct GaData {
    #[serde(default)]
    rows: Vec<GaRow>,
}

#[derive(Deserialize)]
struct GaRow {
    #[serde(default)]
    dimensions: Vec<String>,
    #[serde(default)]
    metrics: Vec<GaMetricValues>,
}

#[derive(Deserialize)]
struct GaMetricValues {
    #[serde(default)]
    values: Vec<String>,
}

/// Parse one GA Reporting-v4-shaped report object into canonical rows.
///
/// Unknown report columns are skipped; the count of skipped columns comes
/// back alongside the rows.
pub fn parse_ga_report_json<R: Read>(
    source: R,
    kind: TableKind,
) -> Result<(ParsedTable, usize), IngestError> {
    let report: GaReport = serde_json::from_reader(source)?;
    let schema: &[&str] = match kind {
        TableKind::Users => USERS_HEADER,
        TableKind::Sessions => SESSIONS_HEADER,
        TableKind::Hits => HITS_HEADER,
    };

    // flatten header: dimensions first, then metrics
    let mut columns: Vec<String> = report.column_header.dimensions.clone();
    columns.extend(
        report.column_header.metric_header.metric_header_entries.iter().map(|e| e.name.clone()),
    );
    let n_dims = report.column_header.dimensions.len();

    // canonical field -> position in the flattened row
    let mut mapping: BTreeMap<&str, usize> = BTreeMap::new();
    let mut unknown = 0usize;
    for (idx, col) in columns.iter().enumerate() {
        let mut matched = false;
        for field in schema {
            if ga_aliases(field).iter().any(|a| a == col) {
                mapping.insert(field, idx);
                matched = true;
                break;
            }
        }
        if !matched {
            unknown += 1;
        }
    }
    for field in schema {
        if !mapping.contains_key(field) {
            return Err(IngestError::MissingColumn(field.to_string()));
        }
    }

    let mut flat_rows: Vec<Vec<String>> = Vec::with_capacity(report.data.rows.len());
    for (i, row) in report.data.rows.iter().enumerate() {
        let mut flat = row.dimensions.clone();
        for m in &row.metrics {
            flat.extend(m.values.iter().cloned());
        }
        if row.dimensions.len() != n_dims || flat.len() != columns.len() {
            return Err(IngestError::ShapeMismatch {
                row: i,
                got: flat.len(),
                expected: columns.len(),
            });
        }
        flat_rows.push(flat);
    }

    let table = match kind {
        TableKind::Users => {
            let mut rows = Vec::new();
            for (i, flat) in flat_rows.iter().enumerate() {
                let fields: Vec<(&'static str, &str)> = USERS_HEADER
                    .iter()
                    .map(|name| (*name, flat[mapping[*name]].as_str()))
                    .collect();
                rows.push(parse_user_fields(&fields, i + 1)?);
            }
            ParsedTable::Users(rows)
        }
        TableKind::Sessions => {
            let mut rows = Vec::new();
            let mut seen = HashSet::new();
            for (i, flat) in flat_rows.iter().enumerate() {
                let fields: Vec<(&'static str, &str)> = SESSIONS_HEADER
                    .iter()
                    .map(|name| (*name, flat[mapping[*name]].as_str()))
                    .collect();
                let row = parse_session_fields(&fields, i + 1)?;
                if !seen.insert(row.session_id.clone()) {
                    return Err(IngestError::DuplicateKey(row.session_id));
                }
                rows.push(row);
            }
            ParsedTable::Sessions(rows)
        }
        TableKind::Hits => {
            let mut rows = Vec::new();
            for (i, flat) in flat_rows.iter().enumerate() {
                let fields: Vec<(&'static str, &str)> = HITS_HEADER
                    .iter()
                    .map(|name| (*name, flat[mapping[*name]].as_str()))
                    .collect();
                rows.push(parse_hit_fields(&fields, i + 1)?);
            }
            ParsedTable::Hits(rows)
        }
    };
    Ok((table, unknown))
}

/// Join the three parsed tables into per-user journeys.
///
/// Sessions are ordered by the timestamp embedded in the session id (full id
/// breaks ties), hits by minute of day with input order preserved on ties.
/// Sessions without hits and hits without a session are dropped and counted.
pub fn join_journeys(
    users: &[RawUserRow],
    sessions: &[RawSessionRow],
    hits: &[RawHitRow],
) -> (Vec<Journey>, DropReport) {
    let mut report = DropReport::default();

    // duplicate client_id rows: last one wins
    let mut user_map: BTreeMap<&str, &RawUserRow> = BTreeMap::new();
    for u in users {
        if user_map.insert(u.client_id.as_str(), u).is_some() {
            report.duplicate_users += 1;
        }
    }

    // hits keyed by (client_id, session_id); stable sort keeps input order on ties
    let mut hit_map: HashMap<(&str, &str), Vec<&RawHitRow>> = HashMap::new();
    for h in hits {
        hit_map.entry((h.client_id.as_str(), h.session_id.as_str())).or_default().push(h);
    }

    let session_keys: HashSet<(&str, &str)> =
        sessions.iter().map(|s| (s.client_id.as_str(), s.session_id.as_str())).collect();
    for (key, v) in &hit_map {
        if !session_keys.contains(key) {
            report.orphan_hits += v.len();
        }
    }

    let mut sessions_by_user: BTreeMap<&str, Vec<&RawSessionRow>> = BTreeMap::new();
    for s in sessions {
        sessions_by_user.entry(s.client_id.as_str()).or_default().push(s);
    }

    let mut journeys = Vec::new();
    for (client_id, user) in &user_map {
        let Some(user_sessions) = sessions_by_user.get(client_id) else {
            report.users_without_sessions += 1;
            continue;
        };
        let mut ordered: Vec<&RawSessionRow> = user_sessions.clone();
        ordered.sort_by_key(|s| (s.timestamp_millis().unwrap_or(i64::MAX), s.session_id.clone()));

        let mut kept = Vec::new();
        for s in ordered {
            match hit_map.get(&(s.client_id.as_str(), s.session_id.as_str())) {
                Some(session_hits) if !session_hits.is_empty() => {
                    let mut hs: Vec<RawHitRow> =
                        session_hits.iter().map(|h| (*h).clone()).collect();
                    hs.sort_by_key(|h| h.minute_of_day);
                    kept.push((s.clone(), hs));
                }
                _ => report.sessions_without_hits += 1,
            }
        }
        if kept.is_empty() {
            continue;
        }
        journeys.push(Journey { user: (*user).clone(), sessions: kept });
    }

    for client_id in sessions_by_user.keys() {
        if !user_map.contains_key(client_id) {
            report.sessions_without_user += sessions_by_user[client_id].len();
        }
    }

    (journeys, report)
}
