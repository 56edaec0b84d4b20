//! CSV ingestion with quality control, and the matching writer.
//!
//! One row per (station, valid time, member):
//!
//! ```text
//! station_id,valid_time,member_id,u,v,obs_u,obs_v
//! KSEA,2008-01-01T00:00:00Z,m1,1.5,-2.25,0.5,-1
//! ```
//!
//! The observation columns may be empty. Rows sharing a station and valid
//! time form one case; all of them must carry the same observation.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};

use crate::error::{Error, Result};
use crate::wind::{EnsembleForecast, ForecastCase, WindVector};

pub const HEADER: [&str; 7] = ["station_id", "valid_time", "member_id", "u", "v", "obs_u", "obs_v"];
/// Metres per second in one knot.
pub const KNOT: f64 = 0.5144;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Drop cases without an observation.
    pub require_observations: bool,
    /// Input values are in knots and are converted to m/s.
    pub knots: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { require_observations: true, knots: false }
    }
}

/// Quality-control counters. `rows_in == rows_kept + rows_dropped`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QcReport {
    pub rows_in: usize,
    pub rows_kept: usize,
    pub rows_dropped: usize,
    pub cases_kept: usize,
    /// Cases with a missing member forecast.
    pub cases_incomplete: usize,
    /// Cases dropped for lack of an observation.
    pub cases_missing_obs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Cases ordered by valid time, then station.
    pub cases: Vec<ForecastCase>,
    /// Member ids in order of first appearance.
    pub member_ids: Vec<String>,
    pub qc: QcReport,
}

impl Dataset {
    pub fn ensemble_size(&self) -> usize {
        self.member_ids.len()
    }

    pub fn stations(&self) -> Vec<String> {
        let mut s: Vec<String> = self.cases.iter().map(|c| c.station_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

pub fn parse_time(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
        .map_err(|_| format!("invalid timestamp {s:?}"))
}

pub fn format_time(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn parse_value(s: &str, col: &str) -> std::result::Result<Option<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(Some(x)),
        _ => Err(format!("{col}: not a finite number: {s:?}")),
    }
}

struct Row {
    member: usize,
    forecast: Option<WindVector>,
    obs: Option<WindVector>,
    line: usize,
}

pub fn load_dataset(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, &path.display().to_string(), opts)
}

pub fn read_dataset<R: Read>(reader: R, name: &str, opts: LoadOptions) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse { path: name.to_string(), line, message };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != HEADER {
        return Err(parse_err(1, format!("expected header {}, found {}", HEADER.join(","), header.join(","))));
    }
    let scale = if opts.knots { KNOT } else { 1.0 };

    let mut member_ids: Vec<String> = Vec::new();
    let mut member_index: HashMap<String, usize> = HashMap::new();
    let mut groups: BTreeMap<(DateTime<Utc>, String), Vec<Row>> = BTreeMap::new();
    let mut qc = QcReport::default();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        qc.rows_in += 1;
        let station = rec[0].trim();
        if station.is_empty() {
            return Err(parse_err(line, "empty station_id".into()));
        }
        let time = parse_time(rec[1].trim()).map_err(|m| parse_err(line, m))?;
        let mid = rec[2].trim();
        if mid.is_empty() {
            return Err(parse_err(line, "empty member_id".into()));
        }
        let vals: Vec<Option<f64>> = (3..7)
            .map(|i| parse_value(&rec[i], HEADER[i]))
            .collect::<std::result::Result<_, _>>()
            .map_err(|m| parse_err(line, m))?;
        let pair = |a: Option<f64>, b: Option<f64>, what: &str| match (a, b) {
            (Some(u), Some(v)) => Ok(Some(WindVector::new(u * scale, v * scale))),
            (None, None) => Ok(None),
            _ => Err(parse_err(line, format!("{what} has only one component"))),
        };
        let forecast = pair(vals[0], vals[1], "forecast")?;
        let obs = pair(vals[2], vals[3], "observation")?;
        let member = *member_index.entry(mid.to_string()).or_insert_with(|| {
            member_ids.push(mid.to_string());
            member_ids.len() - 1
        });
        groups.entry((time, station.to_string())).or_default().push(Row { member, forecast, obs, line });
    }

    let m = member_ids.len();
    let mut cases = Vec::with_capacity(groups.len());
    for ((time, station), rows) in groups {
        let mut slots: Vec<Option<WindVector>> = vec![None; m];
        let mut seen = vec![false; m];
        for r in &rows {
            if std::mem::replace(&mut seen[r.member], true) {
                return Err(Error::DatasetShape(format!(
                    "{name}:{}: duplicate member {} for {station} at {}",
                    r.line,
                    member_ids[r.member],
                    format_time(time)
                )));
            }
            slots[r.member] = r.forecast;
        }
        let obs = rows[0].obs;
        if let Some(r) = rows.iter().find(|r| r.obs != obs) {
            return Err(Error::DatasetShape(format!(
                "{name}:{}: observation differs between members of {station} at {}",
                r.line,
                format_time(time)
            )));
        }
        if slots.iter().any(Option::is_none) {
            qc.cases_incomplete += 1;
            qc.rows_dropped += rows.len();
            continue;
        }
        if obs.is_none() && opts.require_observations {
            qc.cases_missing_obs += 1;
            qc.rows_dropped += rows.len();
            continue;
        }
        qc.rows_kept += rows.len();
        let members = slots.into_iter().map(|s| s.expect("checked complete")).collect();
        cases.push(ForecastCase {
            station_id: station,
            valid_time: time,
            ensemble: EnsembleForecast::with_ids(members, member_ids.clone())?,
            observation: obs,
        });
    }
    qc.cases_kept = cases.len();
    if qc.rows_dropped > 0 {
        log::info!(
            "{name}: dropped {} rows ({} incomplete cases, {} without observation)",
            qc.rows_dropped,
            qc.cases_incomplete,
            qc.cases_missing_obs
        );
    }
    Ok(Dataset { cases, member_ids, qc })
}

pub fn write_dataset(path: impl AsRef<Path>, cases: &[ForecastCase]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_cases(std::io::BufWriter::new(file), cases)
}

/// Write cases in the ingestion format. Numbers use the shortest
/// representation that parses back to the same value.
pub fn write_cases<W: Write>(writer: W, cases: &[ForecastCase]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for c in cases {
        let t = format_time(c.valid_time);
        let (ou, ov) = c.observation.map_or((String::new(), String::new()), |o| (o.u.to_string(), o.v.to_string()));
        for (id, x) in c.ensemble.member_ids.iter().zip(&c.ensemble.members) {
            w.write_record([&c.station_id, &t, id, &x.u.to_string(), &x.v.to_string(), &ou, &ov])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, opts: LoadOptions) -> Result<Dataset> {
        read_dataset(text.as_bytes(), "test.csv", opts)
    }

    fn rows(station: &str, day: u32, m: usize, obs: &str) -> String {
        (1..=m).map(|i| format!("{station},2008-01-{day:02}T00:00:00Z,m{i},{i}.5,-{i},{obs}\n")).collect()
    }

    const HEAD: &str = "station_id,valid_time,member_id,u,v,obs_u,obs_v\n";

    #[test]
    fn eight_rows_make_one_case() {
        let d = load(&format!("{HEAD}{}", rows("A", 1, 8, "1,2")), LoadOptions::default()).unwrap();
        assert_eq!(d.cases.len(), 1);
        assert_eq!(d.cases[0].ensemble.len(), 8);
        assert_eq!(d.cases[0].ensemble.members[2], WindVector::new(3.5, -3.0));
        assert_eq!(d.cases[0].observation, Some(WindVector::new(1.0, 2.0)));
        assert_eq!(d.qc.rows_in, 8);
        assert_eq!(d.qc.rows_kept, 8);
    }

    #[test]
    fn incomplete_case_is_dropped() {
        let text = format!("{HEAD}{}{}", rows("A", 1, 8, "1,2"), rows("B", 1, 7, "1,2"));
        let d = load(&text, LoadOptions::default()).unwrap();
        assert_eq!(d.cases.len(), 1);
        assert_eq!(d.qc.cases_incomplete, 1);
        assert_eq!(d.qc.rows_in, d.qc.rows_kept + d.qc.rows_dropped);
        assert_eq!(d.qc.rows_dropped, 7);
    }

    #[test]
    fn missing_observation_handling() {
        let text = format!("{HEAD}{}{}", rows("A", 1, 3, "1,2"), rows("A", 2, 3, ","));
        let d = load(&text, LoadOptions::default()).unwrap();
        assert_eq!((d.cases.len(), d.qc.cases_missing_obs), (1, 1));
        let d = load(&text, LoadOptions { require_observations: false, knots: false }).unwrap();
        assert_eq!(d.cases.len(), 2);
        assert_eq!(d.cases[1].observation, None);
    }

    #[test]
    fn knots_are_converted() {
        let text = format!("{HEAD}A,2008-01-01T00:00:00Z,m1,2,0,0,0\nA,2008-01-01T00:00:00Z,m2,0,0,0,0\n");
        let d = load(&text, LoadOptions { require_observations: true, knots: true }).unwrap();
        assert!((d.cases[0].ensemble.members[0].u - 1.0288).abs() < 1e-12);
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let text = format!("{HEAD}{}A,2008-01-02T00:00:00Z,m1,abc,1,0,0\n", rows("A", 1, 2, "0,0"));
        match load(&text, LoadOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let bad_time = format!("{HEAD}A,yesterday,m1,1,1,0,0\n");
        assert!(matches!(load(&bad_time, LoadOptions::default()), Err(Error::Parse { line: 2, .. })));
        let nan = format!("{HEAD}A,2008-01-01,m1,NaN,1,0,0\n");
        assert!(matches!(load(&nan, LoadOptions::default()), Err(Error::Parse { .. })));
        assert!(matches!(load("a,b\n1,2\n", LoadOptions::default()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn shape_errors() {
        let dup = format!("{HEAD}{}{}", rows("A", 1, 2, "0,0"), rows("A", 1, 1, "0,0"));
        assert!(matches!(load(&dup, LoadOptions::default()), Err(Error::DatasetShape(_))));
        let text = format!("{HEAD}A,2008-01-01,m1,1,1,0,0\nA,2008-01-01,m2,1,1,0,1\n");
        assert!(matches!(load(&text, LoadOptions::default()), Err(Error::DatasetShape(_))));
    }

    #[test]
    fn members_follow_first_appearance() {
        let text = format!(
            "{HEAD}A,2008-01-01,zeta,1,0,0,0\nA,2008-01-01,alpha,2,0,0,0\nB,2008-01-01,alpha,3,0,0,0\nB,2008-01-01,zeta,4,0,0,0\n"
        );
        let d = load(&text, LoadOptions::default()).unwrap();
        assert_eq!(d.member_ids, vec!["zeta", "alpha"]);
        assert_eq!(d.cases[1].ensemble.u_values(), vec![4.0, 3.0]);
    }

    #[test]
    fn write_then_load_is_identity() {
        let text = format!(
            "{HEAD}{}{}{}",
            rows("B", 2, 3, "0.1,-7.000000000000001"),
            rows("A", 1, 3, ","),
            rows("A", 2, 3, "1e-300,3.3")
        );
        let opts = LoadOptions { require_observations: false, knots: false };
        let d = load(&text, opts).unwrap();
        let mut buf = Vec::new();
        write_cases(&mut buf, &d.cases).unwrap();
        let again = read_dataset(buf.as_slice(), "mem", opts).unwrap();
        assert_eq!(again.cases, d.cases);
        let mut buf2 = Vec::new();
        write_cases(&mut buf2, &again.cases).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn time_formats() {
        let t = parse_time("2008-01-01T00:00:00Z").unwrap();
        assert_eq!(format_time(t), "2008-01-01T00:00:00Z");
        assert_eq!(parse_time("2008-01-01").unwrap(), t);
        assert_eq!(parse_time("2008-01-01T01:00:00+01:00").unwrap(), t);
    }
}
