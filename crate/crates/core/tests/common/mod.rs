//! Independent oracles shared by the integration tests. Nothing here calls
//! into the miner or the measure code.

#![allow(dead_code)]

use std::{
    collections::BTreeMap,
    path::{Path, PathBuf},
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rulefine::{basket::ItemSet, codes::Item};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Item names for synthetic databases: `A....`, `B....`, …
pub fn letter_item(i: usize) -> Item {
    let c = (b'A' + i as u8) as char;
    Item::parse(&format!("{c}....")).unwrap()
}

pub struct RandomDb {
    pub items: Vec<Item>,
    /// One bitmask per basket over `items`.
    pub masks: Vec<u32>,
}

impl RandomDb {
    pub fn generate(rng: &mut ChaCha8Rng, max_baskets: usize, max_items: usize) -> Self {
        let n_items = rng.gen_range(2..=max_items);
        let m = rng.gen_range(1..=max_baskets);
        let p: Vec<f64> = (0..n_items).map(|_| rng.gen_range(0.02..0.7)).collect();
        let masks = (0..m)
            .map(|_| {
                let mut mask = 0u32;
                for (i, &pi) in p.iter().enumerate() {
                    if rng.gen_bool(pi) {
                        mask |= 1 << i;
                    }
                }
                if mask == 0 {
                    mask = 1 << rng.gen_range(0..n_items);
                }
                mask
            })
            .collect();
        RandomDb {
            items: (0..n_items).map(letter_item).collect(),
            masks,
        }
    }

    pub fn baskets(&self) -> Vec<(String, ItemSet)> {
        self.masks
            .iter()
            .enumerate()
            .map(|(k, &mask)| (format!("{k:05}"), self.itemset(mask)))
            .collect()
    }

    pub fn itemset(&self, mask: u32) -> ItemSet {
        (0..self.items.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| self.items[i].clone())
            .collect()
    }

    pub fn count(&self, mask: u32) -> u64 {
        self.masks.iter().filter(|&&b| b & mask == mask).count() as u64
    }
}

/// Measures computed directly from integer counts.
#[derive(Clone, Copy, Debug)]
pub struct OracleMeasures {
    pub left_support: f64,
    pub support: f64,
    pub confidence: f64,
    pub lift: f64,
    pub chi_squared: f64,
}

/// Pearson's statistic on the 2x2 table of counts; zero when any expected
/// count is zero.
pub fn chi_squared_counts(xy: u64, x: u64, y: u64, m: u64) -> f64 {
    let cells = [xy, x - xy, y - xy, m + xy - x - y];
    let rows = [x, x, m - x, m - x];
    let cols = [y, m - y, y, m - y];
    let mut chi = 0.0;
    for i in 0..4 {
        let e = rows[i] as f64 * cols[i] as f64 / m as f64;
        if e == 0.0 {
            return 0.0;
        }
        chi += (cells[i] as f64 - e).powi(2) / e;
    }
    chi
}

pub fn oracle_measures(xy: u64, x: u64, y: u64, m: u64) -> OracleMeasures {
    let mf = m as f64;
    OracleMeasures {
        left_support: x as f64 / mf,
        support: xy as f64 / mf,
        confidence: xy as f64 / x as f64,
        lift: (xy as f64 * mf) / (x as f64 * y as f64),
        chi_squared: chi_squared_counts(xy, x, y, m),
    }
}

/// Every rule `X => c` with `|X| <= max_antecedent`, found by enumerating
/// all antecedent bitmasks.
pub fn brute_force_rules(
    db: &RandomDb,
    min_left_support: f64,
    min_confidence: f64,
    max_antecedent: usize,
) -> BTreeMap<(ItemSet, Item), OracleMeasures> {
    let n = db.items.len();
    let m = db.masks.len() as u64;
    let mut out = BTreeMap::new();
    for x in 1u32..(1 << n) {
        if x.count_ones() as usize > max_antecedent {
            continue;
        }
        let cx = db.count(x);
        if cx == 0 || (cx as f64 / m as f64) < min_left_support {
            continue;
        }
        for c in 0..n {
            let bit = 1u32 << c;
            if x & bit != 0 {
                continue;
            }
            let cxy = db.count(x | bit);
            if cxy == 0 || (cxy as f64 / cx as f64) < min_confidence {
                continue;
            }
            out.insert(
                (db.itemset(x), db.items[c].clone()),
                oracle_measures(cxy, cx, db.count(bit), m),
            );
        }
    }
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub mod scenario {
    use std::{collections::HashMap, path::Path};

    use chrono::{Duration, NaiveDate};
    use rulefine::{
        basket::BasketDatabase,
        codes::{Code, Item, ReadCode},
        events::{EventStore, LoadOptions},
        mining::{mine_rules, MiningConstraints},
        refine::{refine, RefineParams, SignalReport},
        signal::SignalSpec,
        synth::{generate, Cause, Cohort, ScenarioConfig},
    };

    pub const HOI: &str = "J12..";

    fn base(seed: u64, patient_count: usize) -> serde_json::Value {
        serde_json::json!({
            "seed": seed,
            "patient_count": patient_count,
            "start_date": "2000-01-01",
            "span_days": 3650,
            "doi_code": "5.1.12.0",
            "hoi_code": HOI,
            "catalog": [
                {"code_type": "READ", "code": "A01..", "daily_rate": 0.0004},
                {"code_type": "READ", "code": "B12..", "daily_rate": 0.0003},
                {"code_type": "READ", "code": "C03..", "daily_rate": 0.0005},
                {"code_type": "READ", "code": "D20..", "daily_rate": 0.0002},
                {"code_type": "READ", "code": "E11..", "daily_rate": 0.0004},
                {"code_type": "READ", "code": "G21..", "daily_rate": 0.0003},
                {"code_type": "READ", "code": "K30..", "daily_rate": 0.0005},
                {"code_type": "READ", "code": "M12..", "daily_rate": 0.0004},
                {"code_type": "BNF", "code": "2.2.1.0", "daily_rate": 0.0004},
                {"code_type": "BNF", "code": "4.7.2.0", "daily_rate": 0.0003},
                {"code_type": "BNF", "code": "6.1.2.0", "daily_rate": 0.0005}
            ]
        })
    }

    fn antecedent() -> serde_json::Value {
        serde_json::json!([
            {"code_type": "READ", "code": "H33.."},
            {"code_type": "READ", "code": "F45.."}
        ])
    }

    /// The drug/outcome association is produced entirely by a condition
    /// that both prompts the drug and causes the outcome.
    pub fn confounded(seed: u64, patient_count: usize) -> ScenarioConfig {
        let mut v = base(seed, patient_count);
        v["confounder"] = serde_json::json!({
            "antecedent": antecedent(),
            "prevalence": 0.03,
            "record_probability": 0.7,
            "activation_probability": 0.25,
            "coprescription_probability": 0.8,
            "onset_window": [0, 29]
        });
        v["adr"] = serde_json::json!({
            "exposure_probability": 0.9,
            "exposure_window": [120, 3560],
            "reaction_probability": 0.0
        });
        serde_json::from_value(v).unwrap()
    }

    /// A true reaction plus an unrelated condition that also causes the
    /// outcome but never leads to the drug.
    pub fn planted_adr(seed: u64, patient_count: usize) -> ScenarioConfig {
        let mut v = base(seed, patient_count);
        v["confounder"] = serde_json::json!({
            "antecedent": antecedent(),
            "prevalence": 0.05,
            "record_probability": 0.7,
            "activation_probability": 0.04,
            "coprescription_probability": 0.0,
            "onset_window": [0, 29]
        });
        v["adr"] = serde_json::json!({
            "exposure_probability": 0.8,
            "exposure_window": [120, 3560],
            "reaction_probability": 0.005
        });
        serde_json::from_value(v).unwrap()
    }

    pub fn spec() -> SignalSpec {
        serde_json::from_value(serde_json::json!({
            "doi_items": ["5.1.0.0"],
            "hoi_code": HOI
        }))
        .unwrap()
    }

    /// Writes the cohort to `dir`, reads it back and runs mining and
    /// refinement with default parameters.
    pub fn run_pipeline(config: &ScenarioConfig, dir: &Path) -> (Cohort, SignalReport) {
        let cohort = generate(config).unwrap();
        cohort.write(dir, config).unwrap();
        let store = EventStore::load(
            &dir.join("patients.csv"),
            &dir.join("events.csv"),
            &LoadOptions::default(),
        )
        .unwrap()
        .apply_prescription_exclusions(12, 30);
        let db = BasketDatabase::build(&store, 24).unwrap();
        let hoi = Item::read(&ReadCode::parse(HOI).unwrap());
        let rules = mine_rules(&db, &hoi, &MiningConstraints::default()).unwrap();
        let report = refine(&spec(), &rules, &store, &RefineParams::default(), None).unwrap();
        (cohort, report)
    }

    /// Direct scan of the generated records: among confounder-caused
    /// outcomes falling 1..=60 days after the patient's first drug
    /// prescription, how many have every antecedent code recorded earlier.
    pub fn scan_confounder_instances(config: &ScenarioConfig, cohort: &Cohort) -> (usize, usize) {
        let antecedent: Vec<Code> = config
            .confounder
            .as_ref()
            .unwrap()
            .antecedent
            .iter()
            .map(|c| Code::parse(c.code_type, &c.code).unwrap())
            .collect();
        let doi = Code::parse(rulefine::codes::CodeType::Bnf, &config.doi_code).unwrap();
        let mut by_patient: HashMap<&str, Vec<(NaiveDate, Code)>> = HashMap::new();
        for (p, e) in &cohort.events {
            by_patient.entry(p).or_default().push((e.date, e.code));
        }
        let (mut total, mut carrying) = (0, 0);
        for t in cohort.truth.iter().filter(|t| t.cause == Cause::Confounder) {
            let events = &by_patient[t.patient_id.as_str()];
            let Some(first_rx) = events
                .iter()
                .filter(|(_, c)| *c == doi)
                .map(|(d, _)| *d)
                .min()
            else {
                continue;
            };
            if t.hoi_date < first_rx + Duration::days(1)
                || t.hoi_date > first_rx + Duration::days(60)
            {
                continue;
            }
            total += 1;
            let before = |code: &Code| events.iter().any(|(d, c)| c == code && *d < t.hoi_date);
            if antecedent.iter().all(before) {
                carrying += 1;
            }
        }
        (total, carrying)
    }

    /// Binomial standard error of a proportion `p` over `n` trials.
    pub fn proportion_se(p: f64, n: usize) -> f64 {
        (p * (1.0 - p) / n as f64).sqrt()
    }
}
