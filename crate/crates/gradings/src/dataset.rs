//! Trajectory dataset artifacts: a plain CSV with one point per row,
//! grouped by trajectory id, written deterministically so repeated runs
//! produce identical bytes.

use crate::error::{Error, Result};
use crate::trajectory::{LocationPoint, Trajectory};
use std::io::{BufRead, Write};

const HEADER: &str = "trajectory_id,lat,lon,timestamp";

pub fn write_csv<W: Write>(out: &mut W, trajs: &[Trajectory]) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    for t in trajs {
        for p in t.points() {
            writeln!(out, "{},{},{},{}", t.id(), p.lat, p.lon, p.timestamp)?;
        }
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(reader: R) -> Result<Vec<Trajectory>> {
    let mut trajs: Vec<Trajectory> = Vec::new();
    let mut current_id: Option<String> = None;
    let mut points: Vec<LocationPoint> = Vec::new();
    let mut seen: std::collections::HashSet<String> = std::collections::HashSet::new();

    let mut flush = |id: Option<String>, points: &mut Vec<LocationPoint>| -> Result<()> {
        if let Some(id) = id {
            if !seen.insert(id.clone()) {
                return Err(Error::Validation(format!(
                    "trajectory `{id}` appears in non-consecutive row groups"
                )));
            }
            trajs.push(Trajectory::new(id, std::mem::take(points))?);
        }
        Ok(())
    };

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line_no == 1 {
            if line.trim() != HEADER {
                return Err(Error::parse(1, format!("expected header `{HEADER}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::parse(line_no, format!("bad {what} `{s}`: {e}")))
        };
        let point = LocationPoint::new(
            parse(fields[1], "latitude")?,
            parse(fields[2], "longitude")?,
            parse(fields[3], "timestamp")?,
        )
        .map_err(|e| Error::parse(line_no, e.to_string()))?;

        if current_id.as_deref() != Some(fields[0]) {
            flush(current_id.take(), &mut points)?;
            current_id = Some(fields[0].to_string());
        }
        points.push(point);
    }
    flush(current_id, &mut points)?;
    Ok(trajs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn traj(id: &str, n: usize) -> Trajectory {
        let points = (0..n)
            .map(|i| LocationPoint::new(1.0 + i as f64 * 0.125, -2.5, 60.0 * i as f64).unwrap())
            .collect();
        Trajectory::new(id, points).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let trajs = vec![traj("a/1", 3), traj("b/2", 5)];
        let mut buf = Vec::new();
        write_csv(&mut buf, &trajs).unwrap();
        let back = read_csv(Cursor::new(&buf)).unwrap();
        assert_eq!(back, trajs);

        // byte determinism
        let mut buf2 = Vec::new();
        write_csv(&mut buf2, &trajs).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn rejects_interleaved_groups_and_bad_rows() {
        let text = "trajectory_id,lat,lon,timestamp\na,1,2,0\nb,1,2,0\na,1,2,60\n";
        assert!(matches!(
            read_csv(Cursor::new(text)),
            Err(Error::Validation(_))
        ));
        let text = "trajectory_id,lat,lon,timestamp\na,1,2\n";
        match read_csv(Cursor::new(text)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
