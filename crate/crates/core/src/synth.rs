//! Reproducible synthetic cohorts with planted structure.
//!
//! Each patient is generated from its own ChaCha8 stream seeded with
//! `splitmix64(seed ^ splitmix64(ordinal))`, so output is identical for a
//! given seed regardless of thread count. Per patient, in order:
//!
//! 1. gender (fair coin) and year of birth (uniform 1930..=1990);
//! 2. background catalog: `Poisson(daily_rate * span_days)` events per entry
//!    at uniform days in `[0, span_days]`;
//! 3. confounder: with `prevalence` the patient has the condition, with
//!    onset uniform in `onset_window`. With `record_probability` every
//!    antecedent code is recorded on the onset day. With
//!    `coprescription_probability` the drug of interest follows onset after
//!    a `coprescription_delay`. With `activation_probability` the outcome
//!    follows the later of onset and that prescription after a `latency`;
//! 4. planted reaction: with `exposure_probability` the drug is prescribed
//!    on a day uniform in `exposure_window`, and with
//!    `reaction_probability` the outcome follows after a `latency`;
//! 5. with `background_outcome_probability`, one outcome on a uniform day.
//!
//! Day ranges are inclusive offsets from `start_date`.

use std::{
    fs::{self, File},
    io::BufWriter,
    path::Path,
};

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    codes::{BnfCode, Code, CodeType, Gender, Item, ReadCode},
    error::{Error, Result},
    events::{
        write_events_csv, write_patients_csv, EventRecord, EventStore, LoadOptions, PatientInfo,
        DATE_FORMAT,
    },
};

pub const GENERATOR_ID: &str = "chacha8-splitmix64-per-patient/v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSpec {
    pub code_type: CodeType,
    pub code: String,
}

impl CodeSpec {
    fn parse(&self) -> Result<Code> {
        Code::parse(self.code_type, &self.code)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub code_type: CodeType,
    pub code: String,
    pub daily_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfounder {
    pub antecedent: Vec<CodeSpec>,
    pub prevalence: f64,
    pub record_probability: f64,
    pub activation_probability: f64,
    pub coprescription_probability: f64,
    pub onset_window: [u32; 2],
    #[serde(default = "default_delay")]
    pub coprescription_delay: [u32; 2],
    #[serde(default = "default_latency")]
    pub latency: [u32; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedAdr {
    pub exposure_probability: f64,
    pub exposure_window: [u32; 2],
    pub reaction_probability: f64,
    #[serde(default = "default_latency")]
    pub latency: [u32; 2],
}

fn default_delay() -> [u32; 2] {
    [1, 30]
}

fn default_latency() -> [u32; 2] {
    [1, 60]
}

fn default_registration_lead() -> u32 {
    730
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub patient_count: usize,
    pub start_date: NaiveDate,
    pub span_days: u32,
    /// Days between registration and `start_date`.
    #[serde(default = "default_registration_lead")]
    pub registration_lead_days: u32,
    /// BNF code prescribed as the drug of interest.
    pub doi_code: String,
    /// Read code recorded as the outcome.
    pub hoi_code: String,
    pub catalog: Vec<CatalogEntry>,
    #[serde(default)]
    pub confounder: Option<PlantedConfounder>,
    #[serde(default)]
    pub adr: Option<PlantedAdr>,
    #[serde(default)]
    pub background_outcome_probability: f64,
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    pub fn validate(&self) -> Result<()> {
        self.compile().map(drop)
    }

    fn compile(&self) -> Result<Compiled> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "{name} must be a probability, got {p}"
                )))
            }
        };
        let range = |name: &str, [lo, hi]: [u32; 2]| {
            if lo <= hi {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "{name} must satisfy lo <= hi, got [{lo}, {hi}]"
                )))
            }
        };
        let within_span = |name: &str, last: u32| {
            if last <= self.span_days {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "{name} can reach day {last}, beyond span_days {}",
                    self.span_days
                )))
            }
        };
        let config_err = |e: Error| Error::config(e.to_string());

        if self.patient_count == 0 {
            return Err(Error::config("patient_count must be positive"));
        }
        if self.catalog.is_empty() {
            return Err(Error::config("the background catalog is empty"));
        }
        let doi = BnfCode::parse(&self.doi_code).map_err(config_err)?;
        let hoi = ReadCode::parse(&self.hoi_code).map_err(config_err)?;
        let doi_item = Item::bnf(&doi);

        let mut catalog = Vec::with_capacity(self.catalog.len());
        for entry in &self.catalog {
            let code = Code::parse(entry.code_type, &entry.code).map_err(config_err)?;
            if !(entry.daily_rate >= 0.0 && entry.daily_rate.is_finite()) {
                return Err(Error::config(format!(
                    "daily_rate of {} must be non-negative",
                    entry.code
                )));
            }
            match code {
                Code::Read(c) if c.is_descendant_of(&hoi) || hoi.is_descendant_of(&c) => {
                    return Err(Error::config(format!(
                        "catalog code {c} overlaps the outcome {hoi}"
                    )));
                }
                Code::Bnf(_) if Item::from_code(&code) == doi_item => {
                    return Err(Error::config(format!(
                        "catalog code {code} belongs to the drug of interest family"
                    )));
                }
                _ => {}
            }
            catalog.push((code, entry.daily_rate * f64::from(self.span_days)));
        }

        let mut antecedent = Vec::new();
        if let Some(c) = &self.confounder {
            prob("prevalence", c.prevalence)?;
            prob("record_probability", c.record_probability)?;
            prob("activation_probability", c.activation_probability)?;
            prob("coprescription_probability", c.coprescription_probability)?;
            range("onset_window", c.onset_window)?;
            range("coprescription_delay", c.coprescription_delay)?;
            range("latency", c.latency)?;
            if c.coprescription_delay[0] == 0 || c.latency[0] == 0 {
                return Err(Error::config("confounder delays must be at least one day"));
            }
            within_span(
                "a confounder outcome",
                c.onset_window[1] + c.coprescription_delay[1] + c.latency[1],
            )?;
            if c.antecedent.is_empty() {
                return Err(Error::config("the confounder antecedent is empty"));
            }
            for spec in &c.antecedent {
                let code = spec.parse().map_err(config_err)?;
                let item = Item::from_code(&code);
                if catalog.iter().any(|(cat, _)| Item::from_code(cat) == item) {
                    return Err(Error::config(format!(
                        "antecedent code {code} also appears in the background catalog"
                    )));
                }
                if item == doi_item || item == Item::read(&hoi) {
                    return Err(Error::config(format!(
                        "antecedent code {code} is the drug or the outcome"
                    )));
                }
                antecedent.push(code);
            }
        }
        if let Some(a) = &self.adr {
            prob("exposure_probability", a.exposure_probability)?;
            prob("reaction_probability", a.reaction_probability)?;
            range("exposure_window", a.exposure_window)?;
            range("latency", a.latency)?;
            if a.latency[0] == 0 {
                return Err(Error::config("reaction latency must be at least one day"));
            }
            within_span("a reaction outcome", a.exposure_window[1] + a.latency[1])?;
        }
        prob(
            "background_outcome_probability",
            self.background_outcome_probability,
        )?;
        let start = self.start_date;
        if start
            .checked_add_signed(Duration::days(self.span_days.into()))
            .is_none()
            || start
                .checked_sub_signed(Duration::days(self.registration_lead_days.into()))
                .is_none()
        {
            return Err(Error::config("dates out of range"));
        }
        Ok(Compiled {
            doi: Code::Bnf(doi),
            hoi: Code::Read(hoi),
            catalog,
            antecedent,
        })
    }
}

struct Compiled {
    doi: Code,
    hoi: Code,
    /// Code and expected event count over the span.
    catalog: Vec<(Code, f64)>,
    antecedent: Vec<Code>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cause {
    Confounder,
    Adr,
    Background,
}

impl Cause {
    pub fn as_str(self) -> &'static str {
        match self {
            Cause::Confounder => "confounder",
            Cause::Adr => "adr",
            Cause::Background => "background",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub patient_id: String,
    pub hoi_date: NaiveDate,
    pub cause: Cause,
}

#[derive(Clone, Debug)]
pub struct Cohort {
    pub patients: Vec<PatientInfo>,
    /// Date-sorted per patient, patients in ordinal order.
    pub events: Vec<(String, EventRecord)>,
    pub truth: Vec<GroundTruth>,
}

impl Cohort {
    pub fn to_store(&self) -> Result<EventStore> {
        EventStore::from_records(
            self.patients.clone(),
            self.events.iter().cloned(),
            &LoadOptions::default(),
        )
    }

    /// Writes `patients.csv`, `events.csv`, `ground_truth.csv` and
    /// `metadata.json` into `dir`.
    pub fn write(&self, dir: &Path, config: &ScenarioConfig) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let path = dir.join(name);
            File::create(&path)
                .map(BufWriter::new)
                .map_err(|e| Error::io(path, e))
        };
        let csv_err = |name: &str, e: csv::Error| Error::io(dir.join(name), e.into());

        write_patients_csv(create("patients.csv")?, &self.patients)
            .map_err(|e| csv_err("patients.csv", e))?;
        write_events_csv(
            create("events.csv")?,
            self.events.iter().map(|(p, e)| (p.as_str(), e)),
        )
        .map_err(|e| csv_err("events.csv", e))?;

        let mut w = csv::Writer::from_writer(create("ground_truth.csv")?);
        let write_truth = |w: &mut csv::Writer<_>| -> csv::Result<()> {
            w.write_record(["patient_id", "hoi_date", "cause"])?;
            for t in &self.truth {
                w.write_record([
                    t.patient_id.as_str(),
                    &t.hoi_date.format(DATE_FORMAT).to_string(),
                    t.cause.as_str(),
                ])?;
            }
            w.flush()?;
            Ok(())
        };
        write_truth(&mut w).map_err(|e| csv_err("ground_truth.csv", e))?;

        let meta = serde_json::json!({
            "seed": config.seed,
            "generator": GENERATOR_ID,
            "config": config,
        });
        serde_json::to_writer_pretty(create("metadata.json")?, &meta)?;
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn patient_rng(seed: u64, ordinal: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(ordinal)))
}

pub fn patient_id(ordinal: usize, patient_count: usize) -> String {
    let width = patient_count.to_string().len().max(7);
    format!("P{:0width$}", ordinal + 1)
}

struct PatientDraw {
    info: PatientInfo,
    events: Vec<EventRecord>,
    truth: Vec<GroundTruth>,
}

fn draw_patient(config: &ScenarioConfig, compiled: &Compiled, ordinal: usize) -> PatientDraw {
    let mut rng = patient_rng(config.seed, ordinal as u64);
    let start = config.start_date;
    let day = |offset: u32| start + Duration::days(offset.into());
    let uniform = |rng: &mut ChaCha8Rng, [lo, hi]: [u32; 2]| rng.gen_range(lo..=hi);
    let id = patient_id(ordinal, config.patient_count);

    let gender = if rng.gen_bool(0.5) {
        Gender::M
    } else {
        Gender::F
    };
    let year_of_birth = rng.gen_range(1930..=1990);
    let info = PatientInfo {
        patient_id: id.clone(),
        gender,
        year_of_birth,
        registration_date: start - Duration::days(config.registration_lead_days.into()),
    };

    let mut events = Vec::new();
    let mut truth = Vec::new();
    let mut outcome = |events: &mut Vec<EventRecord>, date: NaiveDate, cause: Cause| {
        events.push(EventRecord {
            date,
            code: compiled.hoi,
        });
        truth.push(GroundTruth {
            patient_id: id.clone(),
            hoi_date: date,
            cause,
        });
    };

    for &(code, mean) in &compiled.catalog {
        if mean <= 0.0 {
            continue;
        }
        let n = Poisson::new(mean).expect("positive mean").sample(&mut rng) as u64;
        for _ in 0..n {
            events.push(EventRecord {
                date: day(uniform(&mut rng, [0, config.span_days])),
                code,
            });
        }
    }

    if let Some(c) = &config.confounder {
        if rng.gen_bool(c.prevalence) {
            let onset = uniform(&mut rng, c.onset_window);
            if rng.gen_bool(c.record_probability) {
                for &code in &compiled.antecedent {
                    events.push(EventRecord {
                        date: day(onset),
                        code,
                    });
                }
            }
            let mut anchor = onset;
            if rng.gen_bool(c.coprescription_probability) {
                anchor = onset + uniform(&mut rng, c.coprescription_delay);
                events.push(EventRecord {
                    date: day(anchor),
                    code: compiled.doi,
                });
            }
            if rng.gen_bool(c.activation_probability) {
                let at = anchor + uniform(&mut rng, c.latency);
                outcome(&mut events, day(at), Cause::Confounder);
            }
        }
    }

    if let Some(a) = &config.adr {
        if rng.gen_bool(a.exposure_probability) {
            let rx = uniform(&mut rng, a.exposure_window);
            events.push(EventRecord {
                date: day(rx),
                code: compiled.doi,
            });
            if rng.gen_bool(a.reaction_probability) {
                let at = rx + uniform(&mut rng, a.latency);
                outcome(&mut events, day(at), Cause::Adr);
            }
        }
    }

    if rng.gen_bool(config.background_outcome_probability) {
        let at = uniform(&mut rng, [0, config.span_days]);
        outcome(&mut events, day(at), Cause::Background);
    }

    events.sort_by_key(|e| e.date);
    truth.sort_by_key(|t| t.hoi_date);
    PatientDraw {
        info,
        events,
        truth,
    }
}

/// Generates the cohort described by `config`.
pub fn generate(config: &ScenarioConfig) -> Result<Cohort> {
    let compiled = config.compile()?;
    let draws: Vec<PatientDraw> = (0..config.patient_count)
        .into_par_iter()
        .map(|i| draw_patient(config, &compiled, i))
        .collect();
    let mut cohort = Cohort {
        patients: Vec::with_capacity(draws.len()),
        events: Vec::new(),
        truth: Vec::new(),
    };
    for d in draws {
        let id = d.info.patient_id.clone();
        cohort
            .events
            .extend(d.events.into_iter().map(|e| (id.clone(), e)));
        cohort.truth.extend(d.truth);
        cohort.patients.push(d.info);
    }
    Ok(cohort)
}

/// Expected fraction of confounder-caused outcomes whose patient has the
/// whole antecedent recorded before the outcome.
///
/// Antecedent codes never come from the background catalog, are recorded
/// together on the onset day, and every confounder outcome falls strictly
/// after onset, so the fraction is the recording probability.
pub fn expected_filter_rate(config: &ScenarioConfig) -> f64 {
    config
        .confounder
        .as_ref()
        .map_or(0.0, |c| c.record_probability)
}

/// Expected fraction of instances *not* caused by the confounder whose
/// patient nevertheless carries the recorded antecedent before the outcome.
///
/// Defined only when the condition is independent of exposure (no
/// co-prescription), every condition outcome precedes the exposure window
/// so none of them can form an instance, and there are no background
/// outcomes. The antecedent then precedes every instance outcome and the
/// rate is `prevalence * record_probability`.
pub fn background_match_rate(config: &ScenarioConfig) -> Option<f64> {
    let Some(a) = &config.adr else {
        return Some(0.0);
    };
    let Some(c) = &config.confounder else {
        return Some(0.0);
    };
    let last_condition_outcome = c.onset_window[1] + c.latency[1];
    let separated = c.coprescription_probability == 0.0
        && config.background_outcome_probability == 0.0
        && last_condition_outcome < a.exposure_window[0] + a.latency[0].max(1);
    separated.then_some(c.prevalence * c.record_probability)
}
