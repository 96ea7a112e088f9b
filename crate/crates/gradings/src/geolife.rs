//! GeoLife v1.3 ingestion: PLT trajectory files, labels.txt transportation
//! modes, and mode/region-filtered dataset construction.
//!
//! Expected layout under the data root:
//!
//! ```text
//! <root>/Data/<user>/Trajectory/*.plt
//! <root>/Data/<user>/labels.txt
//! ```

use crate::error::{Error, Result};
use crate::trajectory::{LocationPoint, Trajectory};
use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

/// Number of header lines in a PLT file before the first record.
const PLT_HEADER_LINES: usize = 6;

/// Days from 1899-12-30 (the PLT serial-date origin) to the Unix epoch.
const PLT_EPOCH_OFFSET_DAYS: f64 = 25_569.0;

/// Transportation modes found in GeoLife labels.txt. Unknown strings map to
/// `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransportMode {
    Car,
    Bus,
    Walk,
    Bike,
    Train,
    Taxi,
    Subway,
    Other,
}

impl FromStr for TransportMode {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "car" => TransportMode::Car,
            "bus" => TransportMode::Bus,
            "walk" => TransportMode::Walk,
            "bike" => TransportMode::Bike,
            "train" => TransportMode::Train,
            "taxi" => TransportMode::Taxi,
            "subway" => TransportMode::Subway,
            _ => TransportMode::Other,
        })
    }
}

impl fmt::Display for TransportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TransportMode::Car => "car",
            TransportMode::Bus => "bus",
            TransportMode::Walk => "walk",
            TransportMode::Bike => "bike",
            TransportMode::Train => "train",
            TransportMode::Taxi => "taxi",
            TransportMode::Subway => "subway",
            TransportMode::Other => "other",
        };
        f.write_str(s)
    }
}

/// A labeled time interval from labels.txt.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInterval {
    pub start: f64,
    pub end: f64,
    pub mode: TransportMode,
}

/// Geographic filter, closed on all sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        if !(lat_min < lat_max) || !(lon_min < lon_max) {
            return Err(Error::InvalidParameter(format!(
                "degenerate bounding box [{lat_min}, {lat_max}] x [{lon_min}, {lon_max}]"
            )));
        }
        Ok(Self {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        })
    }

    /// Default Beijing region filter.
    pub fn beijing() -> Self {
        Self {
            lat_min: 39.4,
            lat_max: 41.1,
            lon_min: 115.4,
            lon_max: 117.6,
        }
    }

    pub fn contains(&self, p: &LocationPoint) -> bool {
        p.lat >= self.lat_min && p.lat <= self.lat_max && p.lon >= self.lon_min && p.lon <= self.lon_max
    }
}

fn parse_plt_timestamp(date: &str, time: &str, line: usize) -> Result<f64> {
    let d = NaiveDate::parse_from_str(date, "%Y-%m-%d")
        .map_err(|e| Error::parse(line, format!("bad date `{date}`: {e}")))?;
    let dt = NaiveDateTime::parse_from_str(&format!("{date} {time}"), "%Y-%m-%d %H:%M:%S")
        .map_err(|e| Error::parse(line, format!("bad time `{time}`: {e}")))?;
    let _ = d;
    Ok(dt.and_utc().timestamp() as f64)
}

/// Parses a GeoLife PLT file: 6 header lines, then
/// `lat,lon,0,altitude_feet,serial_days,YYYY-MM-DD,HH:MM:SS` records (GMT).
///
/// Records with a timestamp equal to the previous one are dropped (first
/// occurrence wins); a decreasing timestamp is a validation error.
pub fn parse_plt<R: BufRead>(reader: R, id: &str) -> Result<Trajectory> {
    let mut points: Vec<LocationPoint> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line_no <= PLT_HEADER_LINES {
            continue;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::parse(
                line_no,
                format!("expected 7 fields, found {}", fields.len()),
            ));
        }
        let lat: f64 = fields[0]
            .parse()
            .map_err(|e| Error::parse(line_no, format!("bad latitude `{}`: {e}", fields[0])))?;
        let lon: f64 = fields[1]
            .parse()
            .map_err(|e| Error::parse(line_no, format!("bad longitude `{}`: {e}", fields[1])))?;
        let ts = parse_plt_timestamp(fields[5], fields[6], line_no)?;
        let point = LocationPoint::new(lat, lon, ts)
            .map_err(|e| Error::parse(line_no, e.to_string()))?;

        if let Some(prev) = points.last() {
            if ts == prev.timestamp {
                continue; // duplicate timestamp: keep first
            }
            if ts < prev.timestamp {
                return Err(Error::Validation(format!(
                    "trajectory `{id}`: timestamp decreases at record index {} (line {line_no})",
                    points.len()
                )));
            }
        }
        points.push(point);
    }
    Trajectory::new(id, points)
}

/// Serializes points back to PLT record format (header plus one record per
/// point), inverse of [`parse_plt`] on the (lat, lon, timestamp) triple.
pub fn write_plt<W: Write>(out: &mut W, traj: &Trajectory) -> Result<()> {
    writeln!(out, "Geolife trajectory")?;
    writeln!(out, "WGS 84")?;
    writeln!(out, "Altitude is in Feet")?;
    writeln!(out, "Reserved 3")?;
    writeln!(out, "0,2,255,My Track,0,0,2,8421376")?;
    writeln!(out, "0")?;
    for p in traj.points() {
        writeln!(out, "{}", plt_record(p))?;
    }
    Ok(())
}

fn plt_record(p: &LocationPoint) -> String {
    let secs = p.timestamp as i64;
    let dt = chrono::DateTime::from_timestamp(secs, 0).expect("finite timestamp");
    let serial = PLT_EPOCH_OFFSET_DAYS + p.timestamp / 86_400.0;
    format!(
        "{},{},0,0,{},{},{}",
        p.lat,
        p.lon,
        serial,
        dt.format("%Y-%m-%d"),
        dt.format("%H:%M:%S")
    )
}

/// Parses a GeoLife labels.txt: one header line, then tab-separated
/// `YYYY/MM/DD HH:MM:SS<TAB>YYYY/MM/DD HH:MM:SS<TAB>mode` lines.
pub fn parse_labels<R: BufRead>(reader: R) -> Result<Vec<LabeledInterval>> {
    let mut intervals = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line_no == 1 {
            continue; // header
        }
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let parse_dt = |s: &str| -> Result<f64> {
            NaiveDateTime::parse_from_str(s.trim(), "%Y/%m/%d %H:%M:%S")
                .map(|dt| dt.and_utc().timestamp() as f64)
                .map_err(|e| Error::parse(line_no, format!("bad timestamp `{s}`: {e}")))
        };
        let start = parse_dt(fields[0])?;
        let end = parse_dt(fields[1])?;
        if start >= end {
            return Err(Error::parse(
                line_no,
                format!("interval start {} not before end {}", fields[0], fields[1]),
            ));
        }
        let mode = TransportMode::from_str(fields[2]).expect("infallible");
        intervals.push(LabeledInterval { start, end, mode });
    }
    Ok(intervals)
}

/// Mode- and region-filtered trajectories plus non-fatal skip notices.
#[derive(Debug, Clone)]
pub struct IngestResult {
    pub trajectories: Vec<Trajectory>,
    pub warnings: Vec<String>,
}

/// Walks a GeoLife root and extracts, per labeled interval of the requested
/// mode, the sub-trajectory of points with timestamps inside the (closed)
/// interval. A sub-trajectory is kept only if it has at least 2 points and
/// every point lies inside `bbox`. Users without labels.txt and unreadable
/// PLT files are skipped with a warning. Output order is deterministic:
/// sorted by user id, then interval start.
pub fn build_dataset(root: &Path, mode: TransportMode, bbox: &BoundingBox) -> Result<IngestResult> {
    let data_dir = root.join("Data");
    if !data_dir.is_dir() {
        return Err(Error::Validation(format!(
            "`{}` is not a GeoLife root (missing Data/ directory)",
            root.display()
        )));
    }

    let mut users: Vec<String> = std::fs::read_dir(&data_dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    users.sort();

    let mut trajectories = Vec::new();
    let mut warnings = Vec::new();

    for user in &users {
        let user_dir = data_dir.join(user);
        let labels_path = user_dir.join("labels.txt");
        if !labels_path.is_file() {
            warnings.push(format!("user {user}: no labels.txt, skipped"));
            continue;
        }
        let mut intervals = match File::open(&labels_path)
            .map_err(Error::from)
            .and_then(|f| parse_labels(BufReader::new(f)))
        {
            Ok(iv) => iv,
            Err(e) => {
                warnings.push(format!("user {user}: unreadable labels.txt ({e}), skipped"));
                continue;
            }
        };
        intervals.retain(|iv| iv.mode == mode);
        if intervals.is_empty() {
            continue;
        }
        intervals.sort_by(|a, b| a.start.total_cmp(&b.start));

        let points = collect_user_points(&user_dir, user, &mut warnings)?;
        if points.is_empty() {
            continue;
        }

        for iv in &intervals {
            let lo = points.partition_point(|p| p.timestamp < iv.start);
            let hi = points.partition_point(|p| p.timestamp <= iv.end);
            let slice = &points[lo..hi];
            if slice.len() < 2 || !slice.iter().all(|p| bbox.contains(p)) {
                continue;
            }
            let id = format!("{user}/{}", iv.start as i64);
            trajectories.push(Trajectory::new(id, slice.to_vec())?);
        }
    }

    Ok(IngestResult {
        trajectories,
        warnings,
    })
}

/// All of a user's PLT points merged in time order; equal timestamps keep
/// the first occurrence (file-name order).
fn collect_user_points(user_dir: &Path, user: &str, warnings: &mut Vec<String>) -> Result<Vec<LocationPoint>> {
    let traj_dir = user_dir.join("Trajectory");
    if !traj_dir.is_dir() {
        warnings.push(format!("user {user}: no Trajectory/ directory, skipped"));
        return Ok(Vec::new());
    }
    let mut files: Vec<_> = std::fs::read_dir(&traj_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "plt").unwrap_or(false))
        .collect();
    files.sort();

    let mut points: Vec<LocationPoint> = Vec::new();
    for file in &files {
        let name = file.file_name().unwrap_or_default().to_string_lossy().into_owned();
        match File::open(file)
            .map_err(Error::from)
            .and_then(|f| parse_plt(BufReader::new(f), &format!("{user}/{name}")))
        {
            Ok(t) => points.extend_from_slice(t.points()),
            Err(e) => warnings.push(format!("user {user}: skipped {name} ({e})")),
        }
    }
    points.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    points.dedup_by(|next, prev| next.timestamp == prev.timestamp);
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    const PLT_HEADER: &str = "Geolife trajectory\nWGS 84\nAltitude is in Feet\nReserved 3\n0,2,255,My Track,0,0,2,8421376\n0\n";

    /// Independent civil-date-to-epoch oracle (days-from-civil algorithm),
    /// deliberately not going through chrono.
    fn epoch_oracle(y: i64, m: i64, d: i64, hh: i64, mm: i64, ss: i64) -> f64 {
        let y = if m <= 2 { y - 1 } else { y };
        let era = if y >= 0 { y } else { y - 399 } / 400;
        let yoe = y - era * 400;
        let mp = (m + 9) % 12;
        let doy = (153 * mp + 2) / 5 + d - 1;
        let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
        let days = era * 146_097 + doe - 719_468;
        (days * 86_400 + hh * 3600 + mm * 60 + ss) as f64
    }

    #[test]
    fn parses_reference_record() {
        let body = format!(
            "{PLT_HEADER}39.906631,116.385564,0,492,39882.55,2009-03-10,13:12:00\n"
        );
        let traj = parse_plt(Cursor::new(body), "u/f").unwrap();
        assert_eq!(traj.len(), 1);
        let p = traj.points()[0];
        assert_eq!(p.lat, 39.906631);
        assert_eq!(p.lon, 116.385564);
        assert_eq!(p.timestamp, epoch_oracle(2009, 3, 10, 13, 12, 0));
    }

    #[test]
    fn header_only_file_is_an_empty_trajectory_error() {
        let err = parse_plt(Cursor::new(PLT_HEADER.to_string()), "u/f").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn short_record_names_the_line() {
        let body = format!("{PLT_HEADER}39.9,116.4,0,492,39882.55\n");
        let err = parse_plt(Cursor::new(body), "u/f").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn duplicate_timestamps_keep_first_decreasing_errors() {
        let dup = format!(
            "{PLT_HEADER}1.0,2.0,0,0,0,2009-03-10,13:12:00\n1.5,2.5,0,0,0,2009-03-10,13:12:00\n1.6,2.6,0,0,0,2009-03-10,13:12:01\n"
        );
        let traj = parse_plt(Cursor::new(dup), "u/f").unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj.points()[0].lat, 1.0);

        let dec = format!(
            "{PLT_HEADER}1.0,2.0,0,0,0,2009-03-10,13:12:00\n1.5,2.5,0,0,0,2009-03-10,13:11:00\n"
        );
        let err = parse_plt(Cursor::new(dec), "u/f").unwrap_err();
        assert!(err.to_string().contains("index 1"), "{err}");
    }

    #[test]
    fn parses_reference_label_line() {
        let body = "Start Time\tEnd Time\tTransportation Mode\n2008/04/02 11:24:21\t2008/04/02 11:50:45\tbus\n";
        let intervals = parse_labels(Cursor::new(body)).unwrap();
        assert_eq!(intervals.len(), 1);
        assert_eq!(intervals[0].mode, TransportMode::Bus);
        assert_eq!(intervals[0].start, epoch_oracle(2008, 4, 2, 11, 24, 21));
        assert_eq!(intervals[0].end, epoch_oracle(2008, 4, 2, 11, 50, 45));
    }

    #[test]
    fn label_edge_cases() {
        let empty = "Start Time\tEnd Time\tTransportation Mode\n";
        assert!(parse_labels(Cursor::new(empty)).unwrap().is_empty());

        let unknown = "hdr\n2008/04/02 11:24:21\t2008/04/02 11:50:45\tairplane\n";
        assert_eq!(
            parse_labels(Cursor::new(unknown)).unwrap()[0].mode,
            TransportMode::Other
        );

        let bad = "hdr\n2008/04/02 11:24:21,2008/04/02 11:50:45,bus\n";
        match parse_labels(Cursor::new(bad)).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    fn write_root(dir: &Path, user: &str, labels: &str, plts: &[(&str, &str)]) {
        let traj_dir = dir.join("Data").join(user).join("Trajectory");
        std::fs::create_dir_all(&traj_dir).unwrap();
        std::fs::write(dir.join("Data").join(user).join("labels.txt"), labels).unwrap();
        for (name, body) in plts {
            std::fs::write(traj_dir.join(name), body).unwrap();
        }
    }

    fn plt_with_records(records: &[&str]) -> String {
        format!("{PLT_HEADER}{}\n", records.join("\n"))
    }

    #[test]
    fn build_dataset_filters_by_mode_bbox_and_interval() {
        let tmp = tempfile::tempdir().unwrap();
        let labels = "Start Time\tEnd Time\tTransportation Mode\n\
            2009/03/10 13:00:00\t2009/03/10 13:30:00\tcar\n\
            2009/03/10 14:00:00\t2009/03/10 14:30:00\tbus\n\
            2010/01/01 00:00:00\t2010/01/01 01:00:00\tcar\n";
        let plt = plt_with_records(&[
            "39.9,116.4,0,0,0,2009-03-10,13:10:00",
            "39.91,116.41,0,0,0,2009-03-10,13:12:00",
            "39.92,116.42,0,0,0,2009-03-10,14:10:00",
            "39.93,116.43,0,0,0,2009-03-10,14:12:00",
        ]);
        write_root(tmp.path(), "001", labels, &[("a.plt", &plt)]);
        // user without labels.txt is skipped with a warning
        std::fs::create_dir_all(tmp.path().join("Data").join("002").join("Trajectory")).unwrap();

        let bbox = BoundingBox::beijing();
        let car = build_dataset(tmp.path(), TransportMode::Car, &bbox).unwrap();
        // 13:00 interval matches two points; 2010 interval has no points.
        assert_eq!(car.trajectories.len(), 1);
        assert_eq!(car.trajectories[0].len(), 2);
        assert!(car.warnings.iter().any(|w| w.contains("002")));

        let bus = build_dataset(tmp.path(), TransportMode::Bus, &bbox).unwrap();
        assert_eq!(bus.trajectories.len(), 1);

        // One point outside the bbox excludes the whole sub-trajectory.
        let tight = BoundingBox::new(39.905, 39.915, 116.405, 116.415).unwrap();
        let none = build_dataset(tmp.path(), TransportMode::Car, &tight).unwrap();
        assert!(none.trajectories.is_empty());
    }

    #[test]
    fn build_dataset_is_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        for user in ["010", "003"] {
            let labels = "hdr\n2009/03/10 13:00:00\t2009/03/10 13:30:00\tcar\n";
            let plt = plt_with_records(&[
                "39.9,116.4,0,0,0,2009-03-10,13:10:00",
                "39.91,116.41,0,0,0,2009-03-10,13:12:00",
            ]);
            write_root(tmp.path(), user, labels, &[("a.plt", &plt)]);
        }
        let bbox = BoundingBox::beijing();
        let a = build_dataset(tmp.path(), TransportMode::Car, &bbox).unwrap();
        let b = build_dataset(tmp.path(), TransportMode::Car, &bbox).unwrap();
        assert_eq!(a.trajectories, b.trajectories);
        assert_eq!(
            a.trajectories.iter().map(|t| t.id()).collect::<Vec<_>>(),
            vec!["003/1236690000", "010/1236690000"]
        );
    }

    proptest! {
        #[test]
        fn plt_round_trip(
            n in 1usize..20,
            lat0 in -80.0f64..80.0,
            lon0 in -170.0f64..170.0,
            t0 in 0i64..2_000_000_000,
        ) {
            let points: Vec<LocationPoint> = (0..n)
                .map(|i| LocationPoint::new(
                    lat0 + i as f64 * 1e-4,
                    lon0 + i as f64 * 1e-4,
                    (t0 + 30 * i as i64) as f64,
                ).unwrap())
                .collect();
            let traj = Trajectory::new("rt", points).unwrap();
            let mut buf = Vec::new();
            write_plt(&mut buf, &traj).unwrap();
            let back = parse_plt(Cursor::new(buf), "rt").unwrap();
            prop_assert_eq!(back.points(), traj.points());
        }
    }
}
