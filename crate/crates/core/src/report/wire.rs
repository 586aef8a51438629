use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use serde_json::{Map, Value};

use super::{Outcome, ReportError, ScanReport};

const BENIGN: &str = "BENIGN";
const DATE_FMT: &str = "%Y-%m-%d";

/// Parses one JSON Lines record:
/// `{"id": .., "date": "YYYY-MM-DD", "scans": {av: label | "BENIGN" | null}}`.
pub fn parse_report_line(line: &str) -> Result<ScanReport, ReportError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| ReportError::MalformedLine(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ReportError::MalformedLine("expected a JSON object".into()))?;

    let id = match obj.get("id") {
        None => return Err(ReportError::MissingField("id")),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(ReportError::MalformedLine("`id` must be a string".into())),
    };
    let date = match obj.get("date") {
        None => return Err(ReportError::MissingField("date")),
        Some(Value::String(s)) => {
            NaiveDate::parse_from_str(s, DATE_FMT).map_err(|_| ReportError::BadDate(s.clone()))?
        }
        Some(other) => return Err(ReportError::BadDate(other.to_string())),
    };
    let scans = match obj.get("scans") {
        None => return Err(ReportError::MissingField("scans")),
        Some(Value::Object(m)) => m,
        Some(_) => return Err(ReportError::MalformedLine("`scans` must be an object".into())),
    };

    let mut results = BTreeMap::new();
    for (av, v) in scans {
        let outcome = match v {
            Value::Null => Outcome::Abstain,
            Value::String(s) if s == BENIGN => Outcome::Benign,
            Value::String(s) => Outcome::Label(s.clone()),
            _ => {
                return Err(ReportError::MalformedLine(format!(
                    "scan result for {av:?} must be a string or null"
                )))
            }
        };
        results.insert(av.clone(), outcome);
    }
    Ok(ScanReport { id, date, results })
}

/// Inverse of [`parse_report_line`]; emits a single line without a newline.
pub fn serialize_report(report: &ScanReport) -> String {
    let mut scans = Map::new();
    for (av, outcome) in &report.results {
        let v = match outcome {
            Outcome::Label(s) => Value::String(s.clone()),
            Outcome::Benign => Value::String(BENIGN.into()),
            Outcome::Abstain => Value::Null,
        };
        scans.insert(av.clone(), v);
    }
    let mut obj = Map::new();
    obj.insert("id".into(), Value::String(report.id.clone()));
    obj.insert("date".into(), Value::String(report.date.format(DATE_FMT).to_string()));
    obj.insert("scans".into(), Value::Object(scans));
    Value::Object(obj).to_string()
}

/// Reads every non-blank line. Errors carry the 1-based line number.
pub fn read_reports<R: BufRead>(reader: R) -> Result<Vec<ScanReport>, ReportError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ReportError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = parse_report_line(&line).map_err(|e| match e {
            ReportError::MalformedLine(m) => ReportError::MalformedLine(format!("line {}: {m}", n + 1)),
            other => other,
        })?;
        out.push(r);
    }
    Ok(out)
}

pub fn write_reports<W: Write>(mut w: W, reports: &[ScanReport]) -> std::io::Result<()> {
    for r in reports {
        writeln!(w, "{}", serialize_report(r))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_each_outcome_kind() {
        let r = parse_report_line(
            r#"{"id":"r1","date":"2019-05-01","scans":{"AvA":"Ransom.Win32.Wanna","AvB":null,"AvC":"BENIGN"}}"#,
        )
        .unwrap();
        assert_eq!(r.id, "r1");
        assert_eq!(r.date, NaiveDate::from_ymd_opt(2019, 5, 1).unwrap());
        assert_eq!(r.results["AvA"], Outcome::Label("Ransom.Win32.Wanna".into()));
        assert_eq!(r.results["AvB"], Outcome::Abstain);
        assert_eq!(r.results["AvC"], Outcome::Benign);
    }

    #[test]
    fn error_kinds() {
        assert_eq!(parse_report_line(r#"{"id":"r2"}"#).unwrap_err(), ReportError::MissingField("date"));
        assert_eq!(
            parse_report_line(r#"{"date":"2019-01-01","scans":{}}"#).unwrap_err(),
            ReportError::MissingField("id")
        );
        assert!(matches!(parse_report_line("{not json"), Err(ReportError::MalformedLine(_))));
        assert!(matches!(parse_report_line("[1,2]"), Err(ReportError::MalformedLine(_))));
        assert!(matches!(
            parse_report_line(r#"{"id":"x","date":"2019-13-01","scans":{}}"#),
            Err(ReportError::BadDate(_))
        ));
        assert!(matches!(
            parse_report_line(r#"{"id":"x","date":"2019-01-01","scans":{"a":3}}"#),
            Err(ReportError::MalformedLine(_))
        ));
    }

    #[test]
    fn read_skips_blank_lines() {
        let text = "\n{\"id\":\"a\",\"date\":\"2020-02-02\",\"scans\":{}}\n\n";
        assert_eq!(read_reports(text.as_bytes()).unwrap().len(), 1);
    }

    fn arb_outcome() -> impl Strategy<Value = Outcome> {
        prop_oneof![
            Just(Outcome::Benign),
            Just(Outcome::Abstain),
            "[A-Za-z0-9./!:_ -]{1,30}"
                .prop_filter("BENIGN is reserved", |s| s != BENIGN)
                .prop_map(Outcome::Label),
        ]
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(
            id in "\\PC{0,12}",
            days in 0i64..20_000,
            scans in proptest::collection::btree_map("[A-Za-z]{1,8}", arb_outcome(), 0..10),
        ) {
            let r = ScanReport {
                id,
                date: NaiveDate::from_ymd_opt(1990, 1, 1).unwrap() + chrono::Duration::days(days),
                results: scans,
            };
            prop_assert_eq!(parse_report_line(&serialize_report(&r)).unwrap(), r);
        }
    }
}
