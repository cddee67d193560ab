//! Synthetic corpus generator.
//!
//! Emits the three canonical tables plus a truth file, with planted,
//! recoverable structure: each user draws an archetype, the archetype fixes a
//! browser/device pair with a planted revenue-per-transaction value and a
//! Markov transition matrix over the six shopping-stage classes, and every
//! session's features are populated consistently with its sampled class.
//! History therefore predicts the next stage, which gives the network a real
//! signal to learn.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::NUM_CLASSES;
use crate::ingest::ShoppingStage;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// The three user archetypes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Archetype {
    Browser,
    Researcher,
    Buyer,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [Archetype::Browser, Archetype::Researcher, Archetype::Buyer];

    pub fn as_str(&self) -> &'static str {
        match self {
            Archetype::Browser => "browser",
            Archetype::Researcher => "researcher",
            Archetype::Buyer => "buyer",
        }
    }
}

/// Browser/device identity and planted revenue-per-transaction for one
/// archetype.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategorySpec {
    pub browser: String,
    pub device: String,
    pub rpt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    /// Probabilities for [browser, researcher, buyer]; must sum to 1.
    pub archetype_mix: [f64; 3],
    /// Geometric mean of sessions per user (>= 1).
    pub sessions_mean: f64,
    /// Geometric mean of hits per session (>= 1).
    pub hits_mean: f64,
    pub categories: [CategorySpec; 3],
    /// Lognormal sigma of per-transaction revenue.
    pub revenue_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 100,
            archetype_mix: [0.6, 0.3, 0.1],
            sessions_mean: 3.0,
            hits_mean: 3.0,
            categories: [
                CategorySpec { browser: "Lynx".into(), device: "BasicPhone".into(), rpt: 40.0 },
                CategorySpec { browser: "Firefox".into(), device: "MidTablet".into(), rpt: 80.0 },
                CategorySpec { browser: "Chrome".into(), device: "ProPhone".into(), rpt: 200.0 },
            ],
            revenue_sigma: 0.4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_users == 0 {
            return Err(SynthError::InvalidConfig("n_users must be >= 1".into()));
        }
        let s: f64 = self.archetype_mix.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.archetype_mix.iter().any(|&p| p < 0.0) {
            return Err(SynthError::InvalidConfig("archetype_mix must be a distribution".into()));
        }
        if self.sessions_mean < 1.0 || self.hits_mean < 1.0 {
            return Err(SynthError::InvalidConfig("geometric means must be >= 1".into()));
        }
        if self.categories.iter().any(|c| c.rpt <= 0.0) {
            return Err(SynthError::InvalidConfig("planted rpt must be positive".into()));
        }
        Ok(())
    }
}

/// Markov transition matrix over class ids for one archetype. Rows are the
/// current class, columns the next-session class. Also used for the first
/// session via the stationary start row.
pub fn transition_matrix(archetype: Archetype) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
    match archetype {
        // window shoppers: dominated by classes 0 and 1
        Archetype::Browser => [
            [0.70, 0.25, 0.03, 0.01, 0.01, 0.00],
            [0.45, 0.45, 0.06, 0.02, 0.01, 0.01],
            [0.30, 0.40, 0.20, 0.05, 0.03, 0.02],
            [0.30, 0.35, 0.15, 0.10, 0.05, 0.05],
            [0.35, 0.35, 0.10, 0.05, 0.10, 0.05],
            [0.40, 0.40, 0.08, 0.05, 0.04, 0.03],
        ],
        // funnel walkers: drift deeper, occasionally buy
        Archetype::Researcher => [
            [0.25, 0.45, 0.15, 0.08, 0.05, 0.02],
            [0.10, 0.35, 0.30, 0.12, 0.08, 0.05],
            [0.05, 0.20, 0.35, 0.20, 0.08, 0.12],
            [0.05, 0.15, 0.20, 0.25, 0.10, 0.25],
            [0.05, 0.20, 0.15, 0.15, 0.25, 0.20],
            [0.10, 0.30, 0.25, 0.15, 0.10, 0.10],
        ],
        // repeat purchasers: transaction state is sticky
        Archetype::Buyer => [
            [0.10, 0.20, 0.15, 0.10, 0.05, 0.40],
            [0.05, 0.15, 0.15, 0.10, 0.05, 0.50],
            [0.03, 0.10, 0.15, 0.12, 0.05, 0.55],
            [0.02, 0.08, 0.10, 0.15, 0.05, 0.60],
            [0.03, 0.10, 0.10, 0.10, 0.12, 0.55],
            [0.02, 0.08, 0.08, 0.07, 0.05, 0.70],
        ],
    }
}

/// Stationary distribution of an archetype's chain, by power iteration.
pub fn stationary_distribution(archetype: Archetype) -> [f64; NUM_CLASSES] {
    let t = transition_matrix(archetype);
    let mut p = [1.0 / NUM_CLASSES as f64; NUM_CLASSES];
    for _ in 0..200 {
        let mut next = [0.0; NUM_CLASSES];
        for (i, &pi) in p.iter().enumerate() {
            for j in 0..NUM_CLASSES {
                next[j] += pi * t[i][j];
            }
        }
        p = next;
    }
    p
}

/// Stage set emitted for each class: the funnel prefix that reaches it.
pub fn stages_for_class(class: usize) -> BTreeSet<ShoppingStage> {
    use ShoppingStage::*;
    let v: &[ShoppingStage] = match class {
        0 => &[AllVisits],
        1 => &[AllVisits, ProductView],
        2 => &[AllVisits, ProductView, AddToCart],
        3 => &[AllVisits, ProductView, AddToCart, Checkout],
        4 => &[AllVisits, ProductView, Checkout],
        _ => &[AllVisits, ProductView, AddToCart, Checkout, Transaction],
    };
    v.iter().copied().collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct UserTruth {
    pub client_id: String,
    pub archetype: Archetype,
    pub classes: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthTruth {
    pub users: Vec<UserTruth>,
    pub planted_rpt: [f64; 3],
}

/// Generated corpus as in-memory CSV documents plus ground truth.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub users_csv: String,
    pub sessions_csv: String,
    pub hits_csv: String,
    pub truth_csv: String,
    pub truth: SynthTruth,
}

impl SynthCorpus {
    pub fn write_to(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("users.csv"), &self.users_csv)?;
        std::fs::write(dir.join("sessions.csv"), &self.sessions_csv)?;
        std::fs::write(dir.join("hits.csv"), &self.hits_csv)?;
        std::fs::write(dir.join("truth.csv"), &self.truth_csv)?;
        Ok(())
    }
}

/// 1 + Geometric(1/mean), so the support starts at 1 with the given mean.
fn geometric_at_least_one<R: Rng>(rng: &mut R, mean: f64) -> usize {
    let p = (1.0 / mean).clamp(1e-9, 1.0);
    let mut n = 1usize;
    while rng.gen_range(0.0..1.0) >= p && n < 64 {
        n += 1;
    }
    n
}

fn sample_discrete<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let mut u = rng.gen_range(0.0..1.0);
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    config.validate()?;

    let mut users_csv = crate::ingest::USERS_HEADER.join(",") + "\n";
    let mut sessions_csv = crate::ingest::SESSIONS_HEADER.join(",") + "\n";
    let mut hits_csv = crate::ingest::HITS_HEADER.join(",") + "\n";
    let mut truth_csv = String::from("client_id,archetype,session_classes\n");
    let mut truth_users = Vec::with_capacity(config.n_users);

    for uidx in 0..config.n_users {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(uidx as u64 + 1);

        let arch_idx = sample_discrete(&mut rng, &config.archetype_mix);
        let archetype = Archetype::ALL[arch_idx];
        let spec = &config.categories[arch_idx];
        let transition = transition_matrix(archetype);
        let start = stationary_distribution(archetype);
        // lognormal mean equals the planted rpt
        let sigma = config.revenue_sigma;
        let mu = spec.rpt.ln() - sigma * sigma / 2.0;
        let revenue_dist = LogNormal::new(mu, sigma)
            .map_err(|e| SynthError::InvalidConfig(format!("lognormal: {e}")))?;

        let client_id = format!("u{uidx:06}");
        let device_category = match arch_idx {
            0 => "mobile",
            1 => "tablet",
            _ => "desktop",
        };
        let user_type = if rng.gen_bool(0.5) { "Returning" } else { "New" };
        let _ = writeln!(
            users_csv,
            "{client_id},{user_type},{device_category},{},{}",
            spec.browser, spec.device
        );

        let n_sessions = geometric_at_least_one(&mut rng, config.sessions_mean);
        let mut classes = Vec::with_capacity(n_sessions);
        let mut class = sample_discrete(&mut rng, &start);
        let mut millis: i64 = 1_600_000_000_000 + uidx as i64;
        for sidx in 0..n_sessions {
            classes.push(class);
            let session_id = format!("u{uidx:06}s{sidx:03}.{millis}");

            let transactions: u64 = if class == 5 {
                1 + u64::from(rng.gen_bool(0.2))
            } else {
                0
            };
            let revenue: f64 = if transactions > 0 {
                let per_tx: f64 = revenue_dist.sample(&mut rng);
                ((per_tx * transactions as f64) * 100.0).round() / 100.0
            } else {
                0.0
            };
            let unique_purchases = transactions;
            let unique_pageviews = class as u64 + geometric_at_least_one(&mut rng, 2.0) as u64;
            let duration_s =
                (30.0 * (1 + class) as f64 + rng.gen_range(0.0..120.0) * 10.0).round() / 10.0;
            let days_since = if sidx == 0 {
                0
            } else {
                geometric_at_least_one(&mut rng, 3.0) as u64 - 1
            };
            let site_search = rng.gen_bool(0.15 + 0.1 * arch_idx as f64);
            let (results_pv, uniq_searches, depth, refinements) = if site_search {
                (
                    geometric_at_least_one(&mut rng, 2.0) as u64,
                    geometric_at_least_one(&mut rng, 1.5) as u64,
                    geometric_at_least_one(&mut rng, 2.0) as u64,
                    geometric_at_least_one(&mut rng, 1.2) as u64 - 1,
                )
            } else {
                (0, 0, 0, 0)
            };
            let stages: Vec<&str> =
                stages_for_class(class).iter().map(|s| s.token()).collect();
            let _ = writeln!(
                sessions_csv,
                "{client_id},{session_id},{duration_s},{unique_pageviews},{transactions},\
                 {revenue},{unique_purchases},{days_since},{},{results_pv},{uniq_searches},\
                 {depth},{refinements},{}",
                u8::from(site_search),
                stages.join("|")
            );

            // hits ascend by minute; deeper funnel classes view product pages
            let n_hits = geometric_at_least_one(&mut rng, config.hits_mean);
            let mut minute = rng.gen_range(0..600u32);
            let detail_hit = if class >= 1 { rng.gen_range(0..n_hits) } else { n_hits };
            for hidx in 0..n_hits {
                let time_on_page = (rng.gen_range(2.0..180.0f64) * 10.0).round() / 10.0;
                let detail = u8::from(hidx == detail_hit || (class >= 1 && rng.gen_bool(0.3)));
                let _ = writeln!(
                    hits_csv,
                    "{client_id},{session_id},{minute},{time_on_page},{detail}"
                );
                minute = (minute + rng.gen_range(1..30)).min(1439);
            }

            millis += 86_400_000 * (days_since.max(1) as i64) + sidx as i64 + 1;
            class = sample_discrete(&mut rng, &transition[class]);
        }

        let class_str: Vec<String> = classes.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(truth_csv, "{client_id},{},{}", archetype.as_str(), class_str.join("|"));
        truth_users.push(UserTruth { client_id, archetype, classes });
    }

    let planted_rpt = [
        config.categories[0].rpt,
        config.categories[1].rpt,
        config.categories[2].rpt,
    ];
    Ok(SynthCorpus {
        users_csv,
        sessions_csv,
        hits_csv,
        truth_csv,
        truth: SynthTruth { users: truth_users, planted_rpt },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::compute_rpt_stats;
    use crate::ingest::{join_journeys, parse_table, ParsedTable, TableKind};

    fn parse_all(corpus: &SynthCorpus) -> (Vec<crate::ingest::Journey>, crate::ingest::DropReport) {
        let ParsedTable::Users(users) =
            parse_table(TableKind::Users, corpus.users_csv.as_bytes()).unwrap()
        else {
            panic!()
        };
        let ParsedTable::Sessions(sessions) =
            parse_table(TableKind::Sessions, corpus.sessions_csv.as_bytes()).unwrap()
        else {
            panic!()
        };
        let ParsedTable::Hits(hits) =
            parse_table(TableKind::Hits, corpus.hits_csv.as_bytes()).unwrap()
        else {
            panic!()
        };
        join_journeys(&users, &sessions, &hits)
    }

    #[test]
    fn single_user_minimal_corpus() {
        let config = SynthConfig { n_users: 1, sessions_mean: 1.0, ..SynthConfig::default() };
        let corpus = generate(&config).unwrap();
        let (journeys, report) = parse_all(&corpus);
        assert_eq!(journeys.len(), 1);
        assert!(!journeys[0].sessions.is_empty());
        assert_eq!(report, crate::ingest::DropReport::default());
    }

    #[test]
    fn seeded_runs_byte_identical() {
        let config = SynthConfig { n_users: 20, seed: 9, ..SynthConfig::default() };
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.users_csv, b.users_csv);
        assert_eq!(a.sessions_csv, b.sessions_csv);
        assert_eq!(a.hits_csv, b.hits_csv);
        assert_eq!(a.truth_csv, b.truth_csv);
    }

    #[test]
    fn round_trip_reproduces_structure() {
        let config = SynthConfig { n_users: 50, seed: 4, ..SynthConfig::default() };
        let corpus = generate(&config).unwrap();
        let (journeys, report) = parse_all(&corpus);
        assert_eq!(journeys.len(), config.n_users);
        assert_eq!(report, crate::ingest::DropReport::default());
        // session counts and per-session class match the recorded truth
        for truth in &corpus.truth.users {
            let j = journeys.iter().find(|j| j.user.client_id == truth.client_id).unwrap();
            assert_eq!(j.sessions.len(), truth.classes.len());
            for ((s, hits), &class) in j.sessions.iter().zip(&truth.classes) {
                assert!(!hits.is_empty());
                assert_eq!(
                    crate::features::map_shopping_stage(&s.shopping_stages).unwrap(),
                    class
                );
                if class == 5 {
                    assert!(s.transactions >= 1);
                    assert!(s.shopping_stages.contains(&ShoppingStage::Transaction));
                } else {
                    assert_eq!(s.transactions, 0);
                }
            }
        }
    }

    #[test]
    fn buyer_only_corpus_matches_stationary_transaction_mass() {
        let config = SynthConfig {
            n_users: 400,
            archetype_mix: [0.0, 0.0, 1.0],
            sessions_mean: 4.0,
            seed: 11,
            ..SynthConfig::default()
        };
        let corpus = generate(&config).unwrap();
        let all_classes: Vec<usize> =
            corpus.truth.users.iter().flat_map(|u| u.classes.iter().copied()).collect();
        let rate =
            all_classes.iter().filter(|&&c| c == 5).count() as f64 / all_classes.len() as f64;
        let pi5 = stationary_distribution(Archetype::Buyer)[5];
        // 3 sigma of a binomial around the stationary class-5 mass
        let sigma = (pi5 * (1.0 - pi5) / all_classes.len() as f64).sqrt();
        assert!(
            (rate - pi5).abs() < 3.0 * sigma + 0.02,
            "rate {rate} vs stationary {pi5}"
        );
    }

    #[test]
    fn planted_rpt_recovered() {
        let config = SynthConfig { n_users: 3000, seed: 13, ..SynthConfig::default() };
        let corpus = generate(&config).unwrap();
        let (journeys, _) = parse_all(&corpus);
        let stats = compute_rpt_stats(&journeys).unwrap();
        // the buyer archetype's browser is planted at rpt 200
        let planted = config.categories[2].rpt;
        let got = stats.browser(&config.categories[2].browser);
        assert!(
            (got - planted).abs() / planted < 0.05,
            "recovered {got}, planted {planted}"
        );
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = SynthConfig { archetype_mix: [0.5, 0.2, 0.2], ..SynthConfig::default() };
        assert!(matches!(generate(&bad), Err(SynthError::InvalidConfig(_))));
        let bad = SynthConfig { n_users: 0, ..SynthConfig::default() };
        assert!(matches!(generate(&bad), Err(SynthError::InvalidConfig(_))));
    }

    #[test]
    fn transition_rows_are_distributions() {
        for arch in Archetype::ALL {
            for row in transition_matrix(arch) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-9, "{arch:?} row sums to {s}");
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }
}
