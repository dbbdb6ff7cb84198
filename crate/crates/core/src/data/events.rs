//! Event logs and the patient × code × code co-occurrence tensor built from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SparseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Medication,
    LabAbnormal,
    Diagnosis,
}

impl EventKind {
    /// Name used for the tensor mode built from this kind.
    pub fn mode_name(self) -> &'static str {
        match self {
            EventKind::Medication => "medication",
            EventKind::LabAbnormal => "lab",
            EventKind::Diagnosis => "diagnosis",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Medication => "medication",
            EventKind::LabAbnormal => "lab_abnormal",
            EventKind::Diagnosis => "diagnosis",
        })
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "medication" | "med" => Ok(EventKind::Medication),
            "lab_abnormal" | "lab" => Ok(EventKind::LabAbnormal),
            "diagnosis" | "dx" => Ok(EventKind::Diagnosis),
            other => Err(Error::InvalidArgument(format!("unknown event kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub patient_id: String,
    pub event_kind: EventKind,
    pub code: String,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
}

/// Parses an ISO-8601 timestamp; values without an offset are taken as UTC.
pub fn parse_timestamp(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp());
    }
    Err(Error::InvalidArgument(format!("unparseable timestamp {s:?}")))
}

/// Reads `patient_id,kind,code,timestamp_iso8601` rows; a header row is required.
pub fn read_events<R: Read>(reader: R) -> Result<Vec<EventRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["patient_id", "kind", "code", "timestamp"];
    if headers.len() != 4
        || !headers
            .iter()
            .zip(expected)
            .all(|(h, e)| h.eq_ignore_ascii_case(e) || (e == "timestamp" && h.starts_with("timestamp")))
    {
        return Err(Error::Parse {
            line: 1,
            reason: format!("expected header patient_id,kind,code,timestamp; got {headers:?}"),
        });
    }
    let mut events = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |n: usize| row.get(n).unwrap_or("");
        let wrap = |e: Error| Error::Parse {
            line,
            reason: e.to_string(),
        };
        let code = field(2).to_string();
        if code.is_empty() {
            return Err(Error::Parse {
                line,
                reason: "empty code".into(),
            });
        }
        events.push(EventRecord {
            patient_id: field(0).to_string(),
            event_kind: field(1).parse().map_err(wrap)?,
            code,
            timestamp: parse_timestamp(field(3)).map_err(wrap)?,
        });
    }
    Ok(events)
}

pub fn read_events_file(path: impl AsRef<Path>) -> Result<Vec<EventRecord>> {
    read_events(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CooccurrenceSpec {
    pub kind_a: EventKind,
    pub kind_b: EventKind,
    pub window_seconds: i64,
    pub cap: u32,
}

impl Default for CooccurrenceSpec {
    fn default() -> Self {
        Self {
            kind_a: EventKind::Medication,
            kind_b: EventKind::LabAbnormal,
            window_seconds: 3 * 3600,
            cap: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceTensor {
    pub tensor: SparseTensor,
    /// Patient ids in mode-0 order.
    pub patients: Vec<String>,
    pub codes_a: Vec<String>,
    pub codes_b: Vec<String>,
    pub warning: Option<String>,
}

/// Counts, per patient, the pairs of kind-A and kind-B events no more than
/// `window_seconds` apart, truncated at `cap`. Vocabularies are sorted.
pub fn build_cooccurrence_tensor(events: &[EventRecord], spec: &CooccurrenceSpec) -> Result<CooccurrenceTensor> {
    if spec.window_seconds <= 0 {
        return Err(Error::InvalidArgument("window must be positive".into()));
    }
    if spec.cap < 1 {
        return Err(Error::InvalidArgument("cap must be at least 1".into()));
    }
    if spec.kind_a == spec.kind_b {
        return Err(Error::InvalidArgument("the two event kinds must differ".into()));
    }
    let names = vec![
        "patient".to_string(),
        spec.kind_a.mode_name().to_string(),
        spec.kind_b.mode_name().to_string(),
    ];

    let relevant: Vec<&EventRecord> = events
        .iter()
        .filter(|e| e.event_kind == spec.kind_a || e.event_kind == spec.kind_b)
        .collect();
    if relevant.is_empty() {
        return Ok(CooccurrenceTensor {
            tensor: SparseTensor::zeros(vec![0, 0, 0])?.with_mode_names(names)?,
            patients: Vec::new(),
            codes_a: Vec::new(),
            codes_b: Vec::new(),
            warning: Some("no events of the requested kinds; tensor is empty".into()),
        });
    }

    let patients: Vec<String> = relevant
        .iter()
        .map(|e| e.patient_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let vocab = |kind| -> Vec<String> {
        relevant
            .iter()
            .filter(|e| e.event_kind == kind)
            .map(|e| e.code.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    };
    let codes_a = vocab(spec.kind_a);
    let codes_b = vocab(spec.kind_b);
    let pos = |list: &[String], s: &str| list.binary_search_by(|x| x.as_str().cmp(s)).expect("code in vocabulary");

    // patient -> (kind A events, kind B events) as (time, code index), sorted
    let mut per_patient: BTreeMap<usize, (Vec<(i64, usize)>, Vec<(i64, usize)>)> = BTreeMap::new();
    for e in &relevant {
        let p = pos(&patients, &e.patient_id);
        let slot = per_patient.entry(p).or_default();
        if e.event_kind == spec.kind_a {
            slot.0.push((e.timestamp, pos(&codes_a, &e.code)));
        } else {
            slot.1.push((e.timestamp, pos(&codes_b, &e.code)));
        }
    }

    let mut counts: BTreeMap<(usize, usize, usize), u64> = BTreeMap::new();
    for (&p, (a_events, b_events)) in per_patient.iter_mut() {
        a_events.sort_unstable();
        b_events.sort_unstable();
        for &(ta, ca) in a_events.iter() {
            let lo = b_events.partition_point(|&(tb, _)| tb < ta - spec.window_seconds);
            let hi = b_events.partition_point(|&(tb, _)| tb <= ta + spec.window_seconds);
            for &(_, cb) in &b_events[lo..hi] {
                *counts.entry((p, ca, cb)).or_default() += 1;
            }
        }
    }

    let cap = u64::from(spec.cap);
    let entries = counts
        .into_iter()
        .map(|((p, a, b), c)| (vec![p, a, b], c.min(cap) as f64))
        .collect();
    let tensor = SparseTensor::new(vec![patients.len(), codes_a.len(), codes_b.len()], entries)?
        .with_mode_names(names)?;
    Ok(CooccurrenceTensor {
        tensor,
        patients,
        codes_a,
        codes_b,
        warning: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(p: &str, kind: EventKind, code: &str, t: i64) -> EventRecord {
        EventRecord {
            patient_id: p.into(),
            event_kind: kind,
            code: code.into(),
            timestamp: t,
        }
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("1970-01-01T02:00:00Z").unwrap(), 7200);
        assert_eq!(parse_timestamp("1970-01-01T02:00:00").unwrap(), 7200);
        assert_eq!(parse_timestamp("1970-01-01 01:00:00+01:00").unwrap(), 0);
        assert_eq!(parse_timestamp("1970-01-02").unwrap(), 86400);
        assert!(parse_timestamp("yesterday").is_err());
    }

    #[test]
    fn reads_csv_with_header() {
        let text = "patient_id,kind,code,timestamp_iso8601\np1,medication,aspirin,1970-01-01T00:00:00Z\np1,lab_abnormal,K,1970-01-01T01:00:00Z\n";
        let evs = read_events(text.as_bytes()).unwrap();
        assert_eq!(evs.len(), 2);
        assert_eq!(evs[1].event_kind, EventKind::LabAbnormal);
        assert_eq!(evs[1].timestamp, 3600);
        assert!(read_events("p1,medication,a,1970-01-01\n".as_bytes()).is_err());
        let bad_kind = "patient_id,kind,code,timestamp\np1,vitals,a,1970-01-01\n";
        assert!(matches!(read_events(bad_kind.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_input_gives_empty_tensor_with_warning() {
        let out = build_cooccurrence_tensor(&[], &CooccurrenceSpec::default()).unwrap();
        assert_eq!(out.tensor.shape(), &[0, 0, 0]);
        assert!(out.warning.is_some());
    }

    #[test]
    fn vocabularies_are_sorted_and_counted() {
        let events = vec![
            ev("b", EventKind::Medication, "zz", 0),
            ev("a", EventKind::Medication, "aa", 0),
            ev("a", EventKind::LabAbnormal, "L2", 10),
            ev("b", EventKind::LabAbnormal, "L1", 20),
            ev("a", EventKind::Diagnosis, "ignored", 5),
        ];
        let out = build_cooccurrence_tensor(&events, &CooccurrenceSpec::default()).unwrap();
        assert_eq!(out.patients, vec!["a", "b"]);
        assert_eq!(out.codes_a, vec!["aa", "zz"]);
        assert_eq!(out.codes_b, vec!["L1", "L2"]);
        assert_eq!(out.tensor.nnz(), 2);
        assert_eq!(out.tensor.index(0), &[0, 0, 1]);
        assert_eq!(out.tensor.index(1), &[1, 1, 0]);
    }
}
