//! Patient demographics and date-stamped coded events.

use std::{collections::HashMap, fs::File, io, path::Path};

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::{
    codes::{Code, CodeType, Gender, Item},
    error::{Error, Result},
};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientInfo {
    pub patient_id: String,
    pub gender: Gender,
    pub year_of_birth: i32,
    pub registration_date: NaiveDate,
}

/// One row of `events.csv` before its code has been parsed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawEvent {
    pub patient_id: String,
    pub date: NaiveDate,
    pub code_type: CodeType,
    pub code: String,
}

/// A retained event. The owning patient is implied by where it is stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventRecord {
    pub date: NaiveDate,
    pub code: Code,
}

impl EventRecord {
    pub fn item(&self) -> Item {
        Item::from_code(&self.code)
    }

    pub fn is_prescription(&self) -> bool {
        matches!(self.code, Code::Bnf(_))
    }
}

/// Parses the raw code and maps it to its basket item.
pub fn normalize_item(raw: &RawEvent) -> Result<Item> {
    Code::parse(raw.code_type, &raw.code)
        .map(|c| Item::from_code(&c))
        .map_err(|e| {
            Error::domain(format!(
                "{e} in event (patient {}, {}, {})",
                raw.patient_id,
                raw.date.format(DATE_FORMAT),
                raw.code_type.as_str()
            ))
        })
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Last date covered by the database; defaults to the latest event date.
    pub db_end_date: Option<NaiveDate>,
}

/// Borrowed view of one patient and their date-ordered events.
#[derive(Clone, Copy, Debug)]
pub struct PatientRef<'a> {
    pub info: &'a PatientInfo,
    pub events: &'a [EventRecord],
}

impl<'a> PatientRef<'a> {
    pub fn id(&self) -> &'a str {
        &self.info.patient_id
    }
}

/// Immutable, per-patient, date-sorted event store.
#[derive(Clone, Debug)]
pub struct EventStore {
    patients: Vec<PatientInfo>,
    index: HashMap<String, usize>,
    events: Vec<Vec<EventRecord>>,
    db_end_date: Option<NaiveDate>,
}

#[derive(Deserialize)]
struct PatientRow {
    patient_id: String,
    gender: String,
    year_of_birth: String,
    registration_date: String,
}

#[derive(Deserialize)]
struct EventRow {
    patient_id: String,
    date: String,
    code_type: String,
    code: String,
}

fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, DATE_FORMAT).map_err(|e| format!("bad date {s:?}: {e}"))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn check_header(rdr: &mut csv::Reader<File>, path: &Path, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            message: format!("expected header {:?}", expected.join(",")),
        });
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            path: path.into(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

impl EventStore {
    /// Streams both CSV files into a store.
    pub fn load(patients: &Path, events: &Path, opts: &LoadOptions) -> Result<Self> {
        let mut store = EventStore::empty(read_patients(patients)?)?;

        let mut rdr = csv_reader(events)?;
        check_header(
            &mut rdr,
            events,
            &["patient_id", "date", "code_type", "code"],
        )?;
        let mut record = csv::StringRecord::new();
        loop {
            let line = rdr.position().line();
            match rdr.read_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {}
                Err(e) => return Err(csv_error(events, e)),
            }
            let parse_err = |message: String| Error::Parse {
                path: events.into(),
                line,
                message,
            };
            let row: EventRow = record
                .deserialize(None)
                .map_err(|e| parse_err(e.to_string()))?;
            let date = parse_date(&row.date).map_err(parse_err)?;
            let code_type = row.code_type.parse::<CodeType>().map_err(parse_err)?;
            let code = Code::parse(code_type, &row.code).map_err(|e| parse_err(e.to_string()))?;
            store
                .push_event(&row.patient_id, EventRecord { date, code })
                .map_err(parse_err)?;
        }
        store.finish(opts)
    }

    /// Builds a store from in-memory records, applying the same checks as
    /// [`EventStore::load`].
    pub fn from_records(
        patients: Vec<PatientInfo>,
        events: impl IntoIterator<Item = (String, EventRecord)>,
        opts: &LoadOptions,
    ) -> Result<Self> {
        let mut store = EventStore::empty(patients)?;
        for (i, (pid, ev)) in events.into_iter().enumerate() {
            store
                .push_event(&pid, ev)
                .map_err(|m| Error::domain(format!("event {}: {m}", i + 1)))?;
        }
        store.finish(opts)
    }

    fn empty(mut patients: Vec<PatientInfo>) -> Result<Self> {
        patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        if let Some(w) = patients
            .windows(2)
            .find(|w| w[0].patient_id == w[1].patient_id)
        {
            return Err(Error::domain(format!(
                "duplicate patient_id {:?}",
                w[0].patient_id
            )));
        }
        let index = patients
            .iter()
            .enumerate()
            .map(|(i, p)| (p.patient_id.clone(), i))
            .collect();
        let events = vec![Vec::new(); patients.len()];
        Ok(EventStore {
            patients,
            index,
            events,
            db_end_date: None,
        })
    }

    fn push_event(&mut self, patient_id: &str, ev: EventRecord) -> std::result::Result<(), String> {
        let &i = self
            .index
            .get(patient_id)
            .ok_or_else(|| format!("unknown patient_id {patient_id:?}"))?;
        let reg = self.patients[i].registration_date;
        if ev.date < reg {
            return Err(format!(
                "event dated {} precedes registration {} of patient {patient_id:?}",
                ev.date.format(DATE_FORMAT),
                reg.format(DATE_FORMAT)
            ));
        }
        self.events[i].push(ev);
        Ok(())
    }

    fn finish(mut self, opts: &LoadOptions) -> Result<Self> {
        let max_date = self.events.iter().flatten().map(|e| e.date).max();
        if let (Some(end), Some(max)) = (opts.db_end_date, max_date) {
            if max > end {
                return Err(Error::domain(format!(
                    "event dated {} after database end {}",
                    max.format(DATE_FORMAT),
                    end.format(DATE_FORMAT)
                )));
            }
        }
        self.db_end_date = opts.db_end_date.or(max_date);
        for evs in &mut self.events {
            // stable: same-day events keep ingestion order
            evs.sort_by_key(|e| e.date);
        }
        Ok(self)
    }

    pub fn db_end_date(&self) -> Option<NaiveDate> {
        self.db_end_date
    }

    pub fn patient_count(&self) -> usize {
        self.patients.len()
    }

    pub fn event_count(&self) -> usize {
        self.events.iter().map(Vec::len).sum()
    }

    /// Patients in `patient_id` order.
    pub fn patients(&self) -> impl ExactSizeIterator<Item = PatientRef<'_>> + '_ {
        self.patients
            .iter()
            .zip(&self.events)
            .map(|(info, events)| PatientRef { info, events })
    }

    pub fn patient(&self, patient_id: &str) -> Option<PatientRef<'_>> {
        self.index.get(patient_id).map(|&i| PatientRef {
            info: &self.patients[i],
            events: &self.events[i],
        })
    }

    /// Drops prescriptions issued in the first `exclusion_months` after a
    /// patient's registration, and those dated within `end_buffer_days` of
    /// the database end date. Diagnosis events are kept.
    pub fn apply_prescription_exclusions(
        &self,
        exclusion_months: u32,
        end_buffer_days: u32,
    ) -> Self {
        let end_cutoff = self
            .db_end_date
            .map(|end| end - chrono::Duration::days(i64::from(end_buffer_days)));
        let events = self
            .patients
            .iter()
            .zip(&self.events)
            .map(|(info, evs)| {
                let settled = info
                    .registration_date
                    .checked_add_months(Months::new(exclusion_months))
                    .unwrap_or(NaiveDate::MAX);
                evs.iter()
                    .filter(|e| {
                        !e.is_prescription()
                            || (e.date >= settled && end_cutoff.is_none_or(|c| e.date <= c))
                    })
                    .copied()
                    .collect()
            })
            .collect();
        EventStore {
            patients: self.patients.clone(),
            index: self.index.clone(),
            events,
            db_end_date: self.db_end_date,
        }
    }

    /// Patients whose retained history spans at least `min_active_months`.
    pub fn eligible_patients(&self, min_active_months: u32) -> Vec<PatientRef<'_>> {
        self.patients()
            .filter(|p| active_months(p) >= min_active_months)
            .collect()
    }
}

fn read_patients(path: &Path) -> Result<Vec<PatientInfo>> {
    let mut rdr = csv_reader(path)?;
    check_header(
        &mut rdr,
        path,
        &["patient_id", "gender", "year_of_birth", "registration_date"],
    )?;
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(path, e)),
        }
        let parse_err = |message: String| Error::Parse {
            path: path.into(),
            line,
            message,
        };
        let row: PatientRow = record
            .deserialize(None)
            .map_err(|e| parse_err(e.to_string()))?;
        out.push(PatientInfo {
            gender: row.gender.parse().map_err(parse_err)?,
            year_of_birth: row
                .year_of_birth
                .parse()
                .map_err(|_| parse_err(format!("bad year_of_birth {:?}", row.year_of_birth)))?,
            registration_date: parse_date(&row.registration_date).map_err(parse_err)?,
            patient_id: row.patient_id,
        });
    }
    Ok(out)
}

/// Whole calendar months from `from` to `to`: the largest `n` such that
/// `from + n months <= to`, with month ends clamped.
pub fn months_between(from: NaiveDate, to: NaiveDate) -> u32 {
    if to <= from {
        return 0;
    }
    let estimate = (to.year() - from.year()) * 12 + to.month() as i32 - from.month() as i32;
    let mut n = estimate.max(0) as u32;
    let add = |n: u32| {
        from.checked_add_months(Months::new(n))
            .unwrap_or(NaiveDate::MAX)
    };
    while n > 0 && add(n) > to {
        n -= 1;
    }
    while add(n + 1) <= to {
        n += 1;
    }
    n
}

/// Months between a patient's first and last retained event.
pub fn active_months(patient: &PatientRef<'_>) -> u32 {
    match (patient.events.first(), patient.events.last()) {
        (Some(first), Some(last)) => months_between(first.date, last.date),
        _ => 0,
    }
}

pub fn write_patients_csv<W: io::Write>(out: W, patients: &[PatientInfo]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "gender", "year_of_birth", "registration_date"])?;
    for p in patients {
        w.write_record([
            p.patient_id.as_str(),
            p.gender.as_str(),
            &p.year_of_birth.to_string(),
            &p.registration_date.format(DATE_FORMAT).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_csv<'a, W: io::Write>(
    out: W,
    events: impl IntoIterator<Item = (&'a str, &'a EventRecord)>,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "date", "code_type", "code"])?;
    for (pid, e) in events {
        w.write_record([
            pid,
            &e.date.format(DATE_FORMAT).to_string(),
            e.code.code_type().as_str(),
            &e.code.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
