//! Drug/outcome signal generation: the after/before ratio and the
//! per-patient signal instances.

use std::{collections::BTreeSet, fs::File, io, path::Path};

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    codes::{BnfCode, Code, Item, ReadCode, BNF_ITEM_LEVEL},
    error::{Error, Result},
    events::{EventRecord, EventStore, PatientRef, DATE_FORMAT},
};

/// Inclusive day offsets after exposure in which an outcome counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "[u32; 2]", try_from = "[u32; 2]")]
pub struct Window {
    pub start: u32,
    pub end: u32,
}

impl Default for Window {
    fn default() -> Self {
        Window { start: 1, end: 60 }
    }
}

impl Window {
    pub fn new(start: u32, end: u32) -> Result<Self> {
        if start < 1 || start > end {
            return Err(Error::config(format!(
                "window must satisfy 1 <= start <= end, got [{start}, {end}]"
            )));
        }
        Ok(Window { start, end })
    }

    pub fn contains_gap(&self, days: i64) -> bool {
        days >= i64::from(self.start) && days <= i64::from(self.end)
    }
}

impl From<Window> for [u32; 2] {
    fn from(w: Window) -> Self {
        [w.start, w.end]
    }
}

impl TryFrom<[u32; 2]> for Window {
    type Error = Error;
    fn try_from([start, end]: [u32; 2]) -> Result<Self> {
        Window::new(start, end)
    }
}

/// The drug of interest: level-2 BNF families and/or exact BNF codes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DoiSet {
    families: BTreeSet<Item>,
    exact: BTreeSet<BnfCode>,
}

impl DoiSet {
    /// Entries at BNF level 2 or above name a family; deeper entries match
    /// that exact code.
    pub fn parse<S: AsRef<str>>(entries: &[S]) -> Result<Self> {
        let mut doi = DoiSet::default();
        for entry in entries {
            let code = BnfCode::parse(entry.as_ref())?;
            if code.level() <= BNF_ITEM_LEVEL {
                doi.families.insert(Item::bnf(&code));
            } else {
                doi.exact.insert(code);
            }
        }
        if doi.is_empty() {
            return Err(Error::config(
                "the drug of interest needs at least one BNF code",
            ));
        }
        Ok(doi)
    }

    pub fn is_empty(&self) -> bool {
        self.families.is_empty() && self.exact.is_empty()
    }

    pub fn matches(&self, record: &EventRecord) -> bool {
        match &record.code {
            Code::Bnf(code) => {
                self.exact.contains(code) || self.families.contains(&Item::bnf(code))
            }
            Code::Read(_) => false,
        }
    }

    /// Whether `item` is one of the drug families.
    pub fn contains_item(&self, item: &Item) -> bool {
        self.families.contains(item) || self.exact.iter().any(|c| &Item::bnf(c) == item)
    }

    pub fn entries(&self) -> Vec<String> {
        self.families
            .iter()
            .map(|i| i.to_string())
            .chain(self.exact.iter().map(|c| c.to_string()))
            .collect()
    }
}

/// A drug/outcome pair to investigate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignalSpec {
    pub name: Option<String>,
    pub doi: DoiSet,
    pub hoi: ReadCode,
    pub window: Window,
    /// Overrides the number of exposed patients used as the risk
    /// denominator.
    pub exposure_count: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    doi_items: Vec<String>,
    hoi_code: ReadCode,
    #[serde(default)]
    window: Window,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exposure_count: Option<usize>,
}

impl Serialize for SignalSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SpecFile {
            name: self.name.clone(),
            doi_items: self.doi.entries(),
            hoi_code: self.hoi,
            window: self.window,
            exposure_count: self.exposure_count,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SignalSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = SpecFile::deserialize(d)?;
        Ok(SignalSpec {
            name: f.name,
            doi: DoiSet::parse(&f.doi_items).map_err(serde::de::Error::custom)?,
            hoi: f.hoi_code,
            window: f.window,
            exposure_count: f.exposure_count,
        })
    }
}

impl SignalSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(io::BufReader::new(file))?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SignalInstance {
    pub patient_id: String,
    pub doi_date: NaiveDate,
    pub hoi_date: NaiveDate,
}

/// Whether a diagnosis record is the outcome or one of its descendants.
pub fn hoi_matches(record: &EventRecord, hoi: &ReadCode) -> bool {
    match &record.code {
        Code::Read(code) => code.is_descendant_of(hoi),
        Code::Bnf(_) => false,
    }
}

pub fn first_doi_date(patient: &PatientRef<'_>, doi: &DoiSet) -> Option<NaiveDate> {
    // events are date sorted
    patient
        .events
        .iter()
        .find(|e| doi.matches(e))
        .map(|e| e.date)
}

/// Number of patients ever prescribed the drug of interest.
pub fn exposure_count(doi: &DoiSet, store: &EventStore) -> usize {
    let patients: Vec<_> = store.patients().collect();
    patients
        .par_iter()
        .filter(|p| first_doi_date(p, doi).is_some())
        .count()
}

fn hoi_dates(patient: &PatientRef<'_>, hoi: &ReadCode) -> Vec<NaiveDate> {
    patient
        .events
        .iter()
        .filter(|e| hoi_matches(e, hoi))
        .map(|e| e.date)
        .collect()
}

/// First date in sorted `dates` within `[lo, hi]`.
fn first_in(dates: &[NaiveDate], lo: NaiveDate, hi: NaiveDate) -> Option<NaiveDate> {
    let i = dates.partition_point(|&d| d < lo);
    dates.get(i).copied().filter(|&d| d <= hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbRatio {
    pub after_count: usize,
    pub before_count: usize,
    pub ratio: f64,
}

/// Counts distinct (patient, date) prescriptions of the drug with the
/// outcome recorded within the window after, and within the mirrored
/// window before. `ratio = after / max(before, 1)`.
pub fn ab_ratio(spec: &SignalSpec, store: &EventStore) -> AbRatio {
    let w = spec.window;
    let (start, end) = (Duration::days(w.start.into()), Duration::days(w.end.into()));
    let patients: Vec<_> = store.patients().collect();
    let (after_count, before_count) = patients
        .par_iter()
        .map(|p| {
            let hois = hoi_dates(p, &spec.hoi);
            let mut rx: Vec<NaiveDate> = p
                .events
                .iter()
                .filter(|e| spec.doi.matches(e))
                .map(|e| e.date)
                .collect();
            rx.dedup();
            let mut counts = (0, 0);
            for d in rx {
                counts.0 += usize::from(first_in(&hois, d + start, d + end).is_some());
                counts.1 += usize::from(first_in(&hois, d - end, d - start).is_some());
            }
            counts
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    AbRatio {
        after_count,
        before_count,
        ratio: after_count as f64 / before_count.max(1) as f64,
    }
}

/// One instance per exposed patient whose outcome follows the first
/// prescription within the window; the earliest such outcome is used.
pub fn find_instances(spec: &SignalSpec, store: &EventStore) -> Vec<SignalInstance> {
    let w = spec.window;
    let patients: Vec<_> = store.patients().collect();
    // patients() is in id order and collect keeps it
    patients
        .par_iter()
        .filter_map(|p| {
            let doi_date = first_doi_date(p, &spec.doi)?;
            let hois = hoi_dates(p, &spec.hoi);
            let hoi_date = first_in(
                &hois,
                doi_date + Duration::days(w.start.into()),
                doi_date + Duration::days(w.end.into()),
            )?;
            Some(SignalInstance {
                patient_id: p.id().to_owned(),
                doi_date,
                hoi_date,
            })
        })
        .collect()
}

pub fn write_instances_csv<W: io::Write>(out: W, instances: &[SignalInstance]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "doi_date", "hoi_date"])?;
    for i in instances {
        w.write_record([
            i.patient_id.as_str(),
            &i.doi_date.format(DATE_FORMAT).to_string(),
            &i.hoi_date.format(DATE_FORMAT).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_instances_csv(path: &Path) -> Result<Vec<SignalInstance>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().ne(["patient_id", "doi_date", "hoi_date"]) {
        return Err(parse_err(
            1,
            "expected header \"patient_id,doi_date,hoi_date\"".into(),
        ));
    }
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(parse_err(line, e.to_string())),
        }
        let date = |s: &str| {
            NaiveDate::parse_from_str(s, DATE_FORMAT)
                .map_err(|e| parse_err(line, format!("bad date {s:?}: {e}")))
        };
        if record.len() != 3 {
            return Err(parse_err(line, "expected 3 fields".into()));
        }
        out.push(SignalInstance {
            patient_id: record[0].to_owned(),
            doi_date: date(&record[1])?,
            hoi_date: date(&record[2])?,
        });
    }
    Ok(out)
}
