//! Feature engineering: revenue-per-transaction statistics, shopping-stage
//! class mapping, numeric encodings of the three tables, normalizers, and the
//! descriptive statistics reports (category histograms, Pearson correlation).

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DeviceCategory, Journey, RawHitRow, RawSessionRow, RawUserRow, ShoppingStage, UserType};
use crate::scalar::Scalar;

pub const USER_DIM: usize = 5;
pub const SESSION_DIM: usize = 11;
pub const HIT_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("no journeys supplied")]
    EmptyCorpus,
    #[error("session carries no shopping stages")]
    EmptyStages,
    #[error("normalizer used before fitting")]
    NotFitted,
    #[error("need at least 2 rows for correlation")]
    InsufficientRows,
}

/// Revenue-per-transaction statistics per browser and device category value.
///
/// Categories with zero transactions fall back to the global
/// transaction-weighted mean. When no transaction exists anywhere, all
/// values are zero and `no_transactions` is set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RptStats {
    pub browser_rpt: BTreeMap<String, f64>,
    pub device_rpt: BTreeMap<String, f64>,
    pub global_browser_rpt: f64,
    pub global_device_rpt: f64,
    pub no_transactions: bool,
}

impl RptStats {
    pub fn browser(&self, name: &str) -> f64 {
        *self.browser_rpt.get(name).unwrap_or(&self.global_browser_rpt)
    }

    pub fn device(&self, name: &str) -> f64 {
        *self.device_rpt.get(name).unwrap_or(&self.global_device_rpt)
    }
}

/// Sum revenue and transactions per category, keyed by the journey's user.
fn accumulate<'a>(
    journeys: &'a [Journey],
    key: impl Fn(&'a RawUserRow) -> &'a str,
) -> BTreeMap<String, (f64, u64)> {
    let mut acc: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    for j in journeys {
        let k = key(&j.user).to_string();
        let e = acc.entry(k).or_insert((0.0, 0));
        for (s, _) in &j.sessions {
            e.0 += s.revenue;
            e.1 += s.transactions;
        }
    }
    acc
}

fn rpt_from_acc(acc: &BTreeMap<String, (f64, u64)>) -> (BTreeMap<String, f64>, f64) {
    let total_rev: f64 = acc.values().map(|(r, _)| r).sum();
    let total_tx: u64 = acc.values().map(|(_, t)| t).sum();
    let global = if total_tx > 0 { total_rev / total_tx as f64 } else { 0.0 };
    let map = acc
        .iter()
        .map(|(k, (rev, tx))| {
            let v = if *tx > 0 { rev / *tx as f64 } else { global };
            (k.clone(), v)
        })
        .collect();
    (map, global)
}

/// Revenue per transaction per browser and per device, with global fallback.
pub fn compute_rpt_stats(journeys: &[Journey]) -> Result<RptStats, FeatureError> {
    if journeys.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let browsers = accumulate(journeys, |u| u.browser_name.as_str());
    let devices = accumulate(journeys, |u| u.device_name.as_str());
    let (browser_rpt, global_browser_rpt) = rpt_from_acc(&browsers);
    let (device_rpt, global_device_rpt) = rpt_from_acc(&devices);
    let total_tx: u64 = browsers.values().map(|(_, t)| t).sum();
    Ok(RptStats {
        browser_rpt,
        device_rpt,
        global_browser_rpt,
        global_device_rpt,
        no_transactions: total_tx == 0,
    })
}

/// Collapse a session's stage set to one of the six disjoint path classes.
/// The deepest stage reached wins.
pub fn map_shopping_stage(stages: &BTreeSet<ShoppingStage>) -> Result<usize, FeatureError> {
    use ShoppingStage::*;
    if stages.is_empty() {
        return Err(FeatureError::EmptyStages);
    }
    let has = |s: ShoppingStage| stages.contains(&s);
    Ok(if has(Transaction) {
        5
    } else if has(ProductView) && has(Checkout) && !has(AddToCart) {
        4
    } else if has(ProductView) && has(AddToCart) && has(Checkout) {
        3
    } else if has(ProductView) && has(AddToCart) {
        2
    } else if has(ProductView) {
        1
    } else {
        0
    })
}

/// [user_type, is_mobile, is_tablet, browser_rpt, device_rpt]
pub fn encode_user<F: Scalar>(row: &RawUserRow, stats: &RptStats) -> Vec<F> {
    let returning = matches!(row.user_type, UserType::Returning);
    let (mobile, tablet) = match row.device_category {
        DeviceCategory::Desktop => (0.0, 0.0),
        DeviceCategory::Mobile => (1.0, 0.0),
        DeviceCategory::Tablet => (0.0, 1.0),
    };
    vec![
        F::from_f64_lossy(if returning { 1.0 } else { 0.0 }),
        F::from_f64_lossy(mobile),
        F::from_f64_lossy(tablet),
        F::from_f64_lossy(stats.browser(&row.browser_name)),
        F::from_f64_lossy(stats.device(&row.device_name)),
    ]
}

pub fn encode_session<F: Scalar>(row: &RawSessionRow) -> Vec<F> {
    [
        row.duration_s,
        row.unique_pageviews as f64,
        row.transactions as f64,
        row.revenue,
        row.unique_purchases as f64,
        row.days_since_last_session as f64,
        if row.site_search_used { 1.0 } else { 0.0 },
        row.results_pageviews as f64,
        row.total_unique_searches as f64,
        row.search_depth as f64,
        row.search_refinements as f64,
    ]
    .iter()
    .map(|&x| F::from_f64_lossy(x))
    .collect()
}

/// [minute_of_day / 1440, time_on_page_s, product_detail_view]
pub fn encode_hit<F: Scalar>(row: &RawHitRow) -> Vec<F> {
    vec![
        F::from_f64_lossy(f64::from(row.minute_of_day) / 1440.0),
        F::from_f64_lossy(row.time_on_page_s),
        F::from_f64_lossy(if row.product_detail_view { 1.0 } else { 0.0 }),
    ]
}

/// Numeric tensors for one journey.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedJourney<F: Scalar> {
    pub user_vec: Vec<F>,
    pub session_vecs: Vec<Vec<F>>,
    pub hit_vecs: Vec<Vec<Vec<F>>>,
    pub class_ids: Vec<usize>,
}

impl<F: Scalar> EncodedJourney<F> {
    pub fn n_sessions(&self) -> usize {
        self.session_vecs.len()
    }
}

pub fn encode_journey<F: Scalar>(
    journey: &Journey,
    stats: &RptStats,
) -> Result<EncodedJourney<F>, FeatureError> {
    let user_vec = encode_user(&journey.user, stats);
    let mut session_vecs = Vec::with_capacity(journey.sessions.len());
    let mut hit_vecs = Vec::with_capacity(journey.sessions.len());
    let mut class_ids = Vec::with_capacity(journey.sessions.len());
    for (s, hits) in &journey.sessions {
        session_vecs.push(encode_session(s));
        hit_vecs.push(hits.iter().map(encode_hit).collect());
        class_ids.push(map_shopping_stage(&s.shopping_stages)?);
    }
    Ok(EncodedJourney { user_vec, session_vecs, hit_vecs, class_ids })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMethod {
    MinMax,
    Standardize,
}

impl NormMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormMethod::MinMax => "minmax",
            NormMethod::Standardize => "standard",
        }
    }
}

/// Per-dimension statistics for one feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DimStats<F> {
    // MinMax: (min, max); Standardize: (mean, stddev)
    a: Vec<F>,
    b: Vec<F>,
}

/// Feature scaler fit on the training split only and applied identically at
/// inference. Constant dimensions map to zero under both methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer<F> {
    pub method: NormMethod,
    user: DimStats<F>,
    session: DimStats<F>,
    hit: DimStats<F>,
}

fn fit_dims<F: Scalar>(rows: &[&Vec<F>], dim: usize, method: NormMethod) -> DimStats<F> {
    let mut a = vec![F::zero(); dim];
    let mut b = vec![F::zero(); dim];
    if rows.is_empty() {
        return DimStats { a, b };
    }
    match method {
        NormMethod::MinMax => {
            for d in 0..dim {
                let mut lo = rows[0][d];
                let mut hi = rows[0][d];
                for r in rows {
                    lo = lo.min(r[d]);
                    hi = hi.max(r[d]);
                }
                a[d] = lo;
                b[d] = hi;
            }
        }
        NormMethod::Standardize => {
            let n = F::from_f64_lossy(rows.len() as f64);
            for d in 0..dim {
                let mut sum = F::zero();
                for r in rows {
                    sum += r[d];
                }
                let mean = sum / n;
                let mut sq = F::zero();
                for r in rows {
                    let dv = r[d] - mean;
                    sq += dv * dv;
                }
                a[d] = mean;
                b[d] = (sq / n).sqrt();
            }
        }
    }
    DimStats { a, b }
}

fn apply_dims<F: Scalar>(stats: &DimStats<F>, v: &mut [F], method: NormMethod) {
    for (d, x) in v.iter_mut().enumerate() {
        let (a, b) = (stats.a[d], stats.b[d]);
        *x = match method {
            NormMethod::MinMax => {
                let span = b - a;
                if span == F::zero() {
                    F::zero()
                } else {
                    (*x - a) / span
                }
            }
            NormMethod::Standardize => {
                if b == F::zero() {
                    F::zero()
                } else {
                    (*x - a) / b
                }
            }
        };
    }
}

/// Fit per-dimension statistics over the user, session, and hit feature
/// spaces of a training corpus.
pub fn fit_normalizer<F: Scalar>(
    journeys: &[EncodedJourney<F>],
    method: NormMethod,
) -> Result<Normalizer<F>, FeatureError> {
    if journeys.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let user_rows: Vec<&Vec<F>> = journeys.iter().map(|j| &j.user_vec).collect();
    let session_rows: Vec<&Vec<F>> =
        journeys.iter().flat_map(|j| j.session_vecs.iter()).collect();
    let hit_rows: Vec<&Vec<F>> =
        journeys.iter().flat_map(|j| j.hit_vecs.iter().flatten()).collect();
    Ok(Normalizer {
        method,
        user: fit_dims(&user_rows, USER_DIM, method),
        session: fit_dims(&session_rows, SESSION_DIM, method),
        hit: fit_dims(&hit_rows, HIT_DIM, method),
    })
}

pub fn apply_normalizer<F: Scalar>(
    norm: &Normalizer<F>,
    journeys: &mut [EncodedJourney<F>],
) {
    for j in journeys {
        apply_dims(&norm.user, &mut j.user_vec, norm.method);
        for s in &mut j.session_vecs {
            apply_dims(&norm.session, s, norm.method);
        }
        for hits in &mut j.hit_vecs {
            for h in hits {
                apply_dims(&norm.hit, h, norm.method);
            }
        }
    }
}

/// Pearson correlation matrix over the columns of a row-major table.
/// Constant columns correlate 0 with everything and 1 with themselves.
pub fn pearson_correlation_matrix<F: Scalar>(
    rows: &[Vec<F>],
) -> Result<Array2<F>, FeatureError> {
    if rows.len() < 2 {
        return Err(FeatureError::InsufficientRows);
    }
    let n = rows.len();
    let d = rows[0].len();
    let nf = F::from_f64_lossy(n as f64);
    let mut mean = vec![F::zero(); d];
    for r in rows {
        for (j, &x) in r.iter().enumerate() {
            mean[j] += x;
        }
    }
    for m in &mut mean {
        *m = *m / nf;
    }
    let mut cov: Array2<F> = Array2::zeros((d, d));
    let mut var = vec![F::zero(); d];
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            var[i] += di * di;
            for j in (i + 1)..d {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    let mut out = Array2::zeros((d, d));
    for i in 0..d {
        out[(i, i)] = F::one();
        for j in (i + 1)..d {
            let denom = (var[i] * var[j]).sqrt();
            let r = if denom == F::zero() { F::zero() } else { cov[(i, j)] / denom };
            out[(i, j)] = r;
            out[(j, i)] = r;
        }
    }
    Ok(out)
}

/// One histogram bucket for a browser or device value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryBucket {
    pub users: usize,
    pub revenue: f64,
    pub transactions: u64,
    pub rpt: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CategoryHistograms {
    pub by_browser: BTreeMap<String, CategoryBucket>,
    pub by_device: BTreeMap<String, CategoryBucket>,
}

pub fn category_histograms(journeys: &[Journey]) -> Result<CategoryHistograms, FeatureError> {
    if journeys.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let build = |key: fn(&RawUserRow) -> &str| -> BTreeMap<String, CategoryBucket> {
        let mut map: BTreeMap<String, CategoryBucket> = BTreeMap::new();
        for j in journeys {
            let e = map.entry(key(&j.user).to_string()).or_insert(CategoryBucket {
                users: 0,
                revenue: 0.0,
                transactions: 0,
                rpt: 0.0,
            });
            e.users += 1;
            for (s, _) in &j.sessions {
                e.revenue += s.revenue;
                e.transactions += s.transactions;
            }
        }
        for b in map.values_mut() {
            b.rpt = if b.transactions > 0 { b.revenue / b.transactions as f64 } else { 0.0 };
        }
        map
    };
    Ok(CategoryHistograms {
        by_browser: build(|u| &u.browser_name),
        by_device: build(|u| &u.device_name),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_table, ParsedTable, TableKind};
    use approx::assert_abs_diff_eq;

    fn journey(browser: &str, device: &str, sessions: &[(f64, u64)]) -> Journey {
        let user = RawUserRow {
            client_id: "c".into(),
            user_type: UserType::Returning,
            device_category: DeviceCategory::Desktop,
            browser_name: browser.into(),
            device_name: device.into(),
        };
        let mut csv = String::from(
            "client_id,session_id,duration_s,unique_pageviews,transactions,revenue,\
             unique_purchases,days_since_last_session,site_search_used,results_pageviews,\
             total_unique_searches,search_depth,search_refinements,shopping_stages\n",
        );
        for (i, (rev, tx)) in sessions.iter().enumerate() {
            let up = if *tx > 0 { 1 } else { 0 };
            csv.push_str(&format!("c,s{i}.{},60,2,{tx},{rev},{up},1,0,0,0,0,0,ALL_VISITS\n", 100 + i));
        }
        let ParsedTable::Sessions(rows) = parse_table(TableKind::Sessions, csv.as_bytes()).unwrap()
        else {
            panic!()
        };
        Journey {
            user,
            sessions: rows
                .into_iter()
                .map(|s| {
                    let h = RawHitRow {
                        client_id: "c".into(),
                        session_id: s.session_id.clone(),
                        minute_of_day: 10,
                        time_on_page_s: 5.0,
                        product_detail_view: false,
                    };
                    (s, vec![h])
                })
                .collect(),
        }
    }

    #[test]
    fn rpt_simple_mean() {
        let j = journey("Chrome", "Pixel", &[(100.0, 1), (50.0, 1)]);
        let stats = compute_rpt_stats(std::slice::from_ref(&j)).unwrap();
        assert_abs_diff_eq!(stats.browser("Chrome"), 75.0);
    }

    #[test]
    fn rpt_zero_transaction_category_falls_back() {
        let js = vec![
            journey("Chrome", "Pixel", &[(100.0, 1), (50.0, 1)]),
            journey("Lynx", "Terminal", &[(0.0, 0)]),
        ];
        let stats = compute_rpt_stats(&js).unwrap();
        assert_abs_diff_eq!(stats.browser("Lynx"), 75.0);
        // unseen categories also hit the global mean
        assert_abs_diff_eq!(stats.browser("Netscape"), 75.0);
    }

    #[test]
    fn rpt_no_transactions_anywhere() {
        let js = vec![journey("Chrome", "Pixel", &[(0.0, 0)])];
        let stats = compute_rpt_stats(&js).unwrap();
        assert!(stats.no_transactions);
        assert_eq!(stats.browser("Chrome"), 0.0);
    }

    #[test]
    fn rpt_conservation() {
        let js = vec![
            journey("A", "d1", &[(120.0, 2), (30.0, 1)]),
            journey("B", "d2", &[(200.0, 4)]),
            journey("C", "d3", &[(0.0, 0)]),
        ];
        let stats = compute_rpt_stats(&js).unwrap();
        let mut recovered = 0.0;
        for (name, (rev, tx)) in [("A", (150.0, 3u64)), ("B", (200.0, 4)), ("C", (0.0, 0))] {
            let _ = rev;
            recovered += stats.browser(name) * tx as f64;
        }
        assert_abs_diff_eq!(recovered, 350.0, epsilon = 350.0 * 1e-6);
    }

    /// Brute-force precedence oracle over the funnel depth order.
    fn stage_oracle(stages: &BTreeSet<ShoppingStage>) -> usize {
        use ShoppingStage::*;
        let combos: [(&[ShoppingStage], usize); 5] = [
            (&[Transaction], 5),
            (&[ProductView, AddToCart, Checkout], 3),
            (&[ProductView, Checkout], 4),
            (&[ProductView, AddToCart], 2),
            (&[ProductView], 1),
        ];
        // transaction beats everything; otherwise deepest matching path
        if stages.contains(&Transaction) {
            return 5;
        }
        for (req, class) in &combos[1..] {
            if req.iter().all(|s| stages.contains(s)) {
                // path 4 only without add-to-cart
                if *class == 4 && stages.contains(&AddToCart) {
                    continue;
                }
                if *class == 3 {
                    return 3;
                }
                return *class;
            }
        }
        0
    }

    #[test]
    fn stage_mapping_published_examples() {
        use ShoppingStage::*;
        let s = |v: &[ShoppingStage]| v.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(map_shopping_stage(&s(&[AllVisits])).unwrap(), 0);
        assert_eq!(
            map_shopping_stage(&s(&[AllVisits, ProductView, AddToCart, Checkout])).unwrap(),
            3
        );
        assert_eq!(
            map_shopping_stage(&s(&[Transaction, AddToCart, ProductView])).unwrap(),
            5
        );
        assert_eq!(map_shopping_stage(&s(&[AllVisits, ProductView, Checkout])).unwrap(), 4);
    }

    #[test]
    fn stage_mapping_matches_oracle_on_all_31_subsets() {
        use ShoppingStage::*;
        let all = [AllVisits, ProductView, AddToCart, Checkout, Transaction];
        for bits in 1u32..32 {
            let stages: BTreeSet<ShoppingStage> = all
                .iter()
                .enumerate()
                .filter(|(i, _)| bits >> i & 1 == 1)
                .map(|(_, s)| *s)
                .collect();
            assert_eq!(
                map_shopping_stage(&stages).unwrap(),
                stage_oracle(&stages),
                "subset {stages:?}"
            );
        }
    }

    #[test]
    fn stage_mapping_rejects_empty() {
        assert!(matches!(
            map_shopping_stage(&BTreeSet::new()),
            Err(FeatureError::EmptyStages)
        ));
    }

    #[test]
    fn user_encoding_examples() {
        let stats = RptStats {
            browser_rpt: BTreeMap::from([("Chrome".to_string(), 75.0)]),
            device_rpt: BTreeMap::new(),
            global_browser_rpt: 0.0,
            global_device_rpt: 0.0,
            no_transactions: false,
        };
        let row = RawUserRow {
            client_id: "c".into(),
            user_type: UserType::Returning,
            device_category: DeviceCategory::Desktop,
            browser_name: "Chrome".into(),
            device_name: "X".into(),
        };
        assert_eq!(encode_user::<f64>(&row, &stats), vec![1.0, 0.0, 0.0, 75.0, 0.0]);
        let row2 = RawUserRow {
            user_type: UserType::New,
            device_category: DeviceCategory::Tablet,
            browser_name: "Z".into(),
            ..row
        };
        let stats0 = RptStats {
            browser_rpt: BTreeMap::new(),
            device_rpt: BTreeMap::new(),
            global_browser_rpt: 0.0,
            global_device_rpt: 0.0,
            no_transactions: true,
        };
        assert_eq!(encode_user::<f64>(&row2, &stats0), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn hit_encoding_examples() {
        let h = RawHitRow {
            client_id: "c".into(),
            session_id: "s.1".into(),
            minute_of_day: 720,
            time_on_page_s: 30.0,
            product_detail_view: true,
        };
        assert_eq!(encode_hit::<f64>(&h), vec![0.5, 30.0, 1.0]);
        let h0 = RawHitRow { minute_of_day: 0, time_on_page_s: 0.0, product_detail_view: false, ..h };
        assert_eq!(encode_hit::<f64>(&h0), vec![0.0, 0.0, 0.0]);
    }

    fn enc(vals: &[&[f64]]) -> EncodedJourney<f64> {
        EncodedJourney {
            user_vec: vec![0.0; USER_DIM],
            session_vecs: vals
                .iter()
                .map(|v| {
                    let mut s = vec![0.0; SESSION_DIM];
                    s[..v.len()].copy_from_slice(v);
                    s
                })
                .collect(),
            hit_vecs: vals.iter().map(|_| vec![vec![0.0; HIT_DIM]]).collect(),
            class_ids: vals.iter().map(|_| 0).collect(),
        }
    }

    #[test]
    fn minmax_basic_and_constant_dims() {
        let mut js = vec![enc(&[&[0.0], &[10.0]])];
        let norm = fit_normalizer(&js, NormMethod::MinMax).unwrap();
        apply_normalizer(&norm, &mut js);
        assert_eq!(js[0].session_vecs[0][0], 0.0);
        assert_eq!(js[0].session_vecs[1][0], 1.0);
        // remaining dims are constant 0 -> stay 0
        assert!(js[0].session_vecs[0][1..].iter().all(|&x| x == 0.0));

        let mut cs = vec![enc(&[&[5.0], &[5.0]])];
        for method in [NormMethod::MinMax, NormMethod::Standardize] {
            let norm = fit_normalizer(&cs, method).unwrap();
            let mut copy = cs.clone();
            apply_normalizer(&norm, &mut copy);
            assert_eq!(copy[0].session_vecs[0][0], 0.0);
            assert_eq!(copy[0].session_vecs[1][0], 0.0);
        }
        let _ = &mut cs;
    }

    #[test]
    fn standardize_recomputation_oracle() {
        let mut js = vec![enc(&[&[1.0, 4.0], &[3.0, 8.0], &[7.0, 6.0], &[2.0, 2.0]])];
        let norm = fit_normalizer(&js, NormMethod::Standardize).unwrap();
        apply_normalizer(&norm, &mut js);
        for d in 0..2 {
            let vals: Vec<f64> = js[0].session_vecs.iter().map(|s| s[d]).collect();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(var.sqrt(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn pearson_identity_and_anticorrelation() {
        let rows: Vec<Vec<f64>> =
            (0..10).map(|i| vec![i as f64, -(i as f64), 3.0]).collect();
        let m = pearson_correlation_matrix(&rows).unwrap();
        assert_abs_diff_eq!(m[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m[(0, 1)], -1.0, epsilon = 1e-12);
        // constant column
        assert_abs_diff_eq!(m[(0, 2)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m[(2, 2)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_matches_two_pass_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> =
            (0..100).map(|_| (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let m = pearson_correlation_matrix(&rows).unwrap();
        let n = rows.len() as f64;
        for i in 0..4 {
            for j in 0..4 {
                let mi: f64 = rows.iter().map(|r| r[i]).sum::<f64>() / n;
                let mj: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                let num: f64 = rows.iter().map(|r| (r[i] - mi) * (r[j] - mj)).sum();
                let di: f64 = rows.iter().map(|r| (r[i] - mi).powi(2)).sum::<f64>().sqrt();
                let dj: f64 = rows.iter().map(|r| (r[j] - mj).powi(2)).sum::<f64>().sqrt();
                assert_abs_diff_eq!(m[(i, j)], num / (di * dj), epsilon = 1e-12);
                assert_abs_diff_eq!(m[(i, j)], m[(j, i)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pearson_needs_two_rows() {
        let rows = vec![vec![1.0f64, 2.0]];
        assert!(matches!(
            pearson_correlation_matrix(&rows),
            Err(FeatureError::InsufficientRows)
        ));
    }

    #[test]
    fn histograms_consistent_with_rpt() {
        let js = vec![
            journey("A", "d1", &[(120.0, 2)]),
            journey("A", "d1", &[(30.0, 1)]),
            journey("B", "d2", &[(0.0, 0)]),
        ];
        let h = category_histograms(&js).unwrap();
        assert_eq!(h.by_browser["A"].users, 2);
        assert_abs_diff_eq!(h.by_browser["A"].rpt, 50.0);
        assert_eq!(h.by_browser["B"].transactions, 0);
        assert_eq!(h.by_browser["B"].rpt, 0.0);
    }
}
