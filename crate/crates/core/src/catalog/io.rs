use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use log::warn;

use super::{Catalog, StormTrack, TrackPoint, MIN_TRACK_POINTS};
use crate::error::{Error, Result};

pub const CATALOG_HEADER: [&str; 5] = ["storm_id", "time_index", "lon", "lat", "vorticity"];

const YEARS_KEY: &str = "years_of_record";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub rows: usize,
    pub storms: usize,
    /// Storms dropped for having fewer than eight points.
    pub rejected_short: usize,
}

/// Load a flat CSV track catalog.
///
/// `years_of_record` overrides a `# years_of_record=<x>` header comment; one
/// of the two must be present.
pub fn load_catalog(path: &Path, years_of_record: Option<f64>) -> Result<(Catalog, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_catalog(BufReader::new(file), path, years_of_record)
}

pub fn read_catalog<R: Read>(
    reader: R,
    source: &Path,
    years_of_record: Option<f64>,
) -> Result<(Catalog, LoadReport)> {
    let mut text = String::new();
    BufReader::new(reader)
        .read_to_string(&mut text)
        .map_err(|e| Error::io(source, e))?;

    let mut header_years = None;
    for line in text.lines() {
        let Some(comment) = line.trim_start().strip_prefix('#') else {
            continue;
        };
        if let Some((key, value)) = comment.split_once('=') {
            if key.trim() == YEARS_KEY {
                header_years = value.trim().parse::<f64>().ok();
            }
        }
    }
    let years = years_of_record.or(header_years).ok_or_else(|| {
        Error::Validation(format!(
            "{}: years_of_record not given and no `# {YEARS_KEY}=` header",
            source.display()
        ))
    })?;

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: source.to_path_buf(),
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let idx = [
        col("storm_id")?,
        col("time_index")?,
        col("lon")?,
        col("lat")?,
        col("vorticity")?,
    ];

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<TrackPoint>> = HashMap::new();
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str, raw: &str| Error::Parse {
            path: source.to_path_buf(),
            line,
            message: format!("cannot parse {what} from `{raw}`"),
        };
        let num = |i: usize, what: &str| -> Result<f64> {
            let raw = field(i);
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(what, raw))
        };
        let id = field(idx[0]).to_string();
        if id.is_empty() {
            return Err(bad("storm_id", ""));
        }
        let time_index = field(idx[1])
            .parse::<i64>()
            .map_err(|_| bad("time_index", field(idx[1])))?;
        let point = TrackPoint {
            lon: num(idx[2], "lon")?,
            lat: num(idx[3], "lat")?,
            time_index,
            vorticity: num(idx[4], "vorticity")?,
        };
        rows += 1;
        groups
            .entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(point);
    }

    let mut report = LoadReport {
        rows,
        ..LoadReport::default()
    };
    let mut storms = Vec::with_capacity(order.len());
    for id in order {
        let mut pts = groups.remove(&id).unwrap_or_default();
        pts.sort_by_key(|p| p.time_index);
        if let Some(w) = pts.windows(2).find(|w| w[0].time_index == w[1].time_index) {
            return Err(Error::Validation(format!(
                "storm {id}: duplicate time_index {}",
                w[0].time_index
            )));
        }
        if pts.len() < MIN_TRACK_POINTS {
            report.rejected_short += 1;
            continue;
        }
        storms.push(StormTrack::new(id, pts)?);
    }
    if report.rejected_short > 0 {
        warn!(
            "{}: rejected {} storm(s) shorter than {MIN_TRACK_POINTS} steps",
            source.display(),
            report.rejected_short
        );
    }
    report.storms = storms.len();
    if storms.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no storm has a lifespan of at least {MIN_TRACK_POINTS} steps",
            source.display()
        )));
    }
    Ok((Catalog::new(storms, years)?, report))
}

/// Write a catalog in the input CSV schema. Each entry of `comments` becomes a
/// leading `# ` line; the years of record are always recorded.
pub fn write_catalog<W: Write>(out: W, catalog: &Catalog, comments: &[String]) -> Result<()> {
    let mut out = out;
    write_comments(&mut out, catalog.years_of_record, comments)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CATALOG_HEADER)?;
    for s in &catalog.storms {
        for p in s.points() {
            w.write_record([
                s.id.clone(),
                p.time_index.to_string(),
                p.lon.to_string(),
                p.lat.to_string(),
                p.vorticity.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(PathBuf::from("<catalog>"), e))?;
    Ok(())
}

pub(crate) fn write_comments<W: Write>(out: &mut W, years: f64, comments: &[String]) -> Result<()> {
    let io = |e| Error::io(PathBuf::from("<catalog>"), e);
    for c in comments {
        writeln!(out, "# {c}").map_err(io)?;
    }
    writeln!(out, "# {YEARS_KEY}={years}").map_err(io)?;
    Ok(())
}

/// Header comment lines (without the leading `#`) of a CSV file.
pub fn header_comments(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        match line.strip_prefix('#') {
            Some(c) => out.push(c.trim().to_string()),
            None => break,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_for(storms: &[(&str, usize)]) -> String {
        let mut s = String::from("storm_id,time_index,lon,lat,vorticity\n");
        for (id, n) in storms {
            for t in 0..*n {
                s.push_str(&format!("{id},{t},{},{},{}\n", -50.0 + t as f64, 45.0, 2.0 + t as f64 * 0.1));
            }
        }
        s
    }

    fn read(text: &str, years: Option<f64>) -> Result<(Catalog, LoadReport)> {
        read_catalog(text.as_bytes(), Path::new("mem.csv"), years)
    }

    #[test]
    fn two_storms_of_ten() {
        let (c, rep) = read(&csv_for(&[("a", 10), ("b", 10)]), Some(1.0)).unwrap();
        assert_eq!(c.storms.len(), 2);
        assert!(c.storms.iter().all(|s| s.speed().len() == 9));
        assert_eq!(rep.rows, 20);
    }

    #[test]
    fn single_short_storm_is_rejected() {
        let err = read(&csv_for(&[("a", 3)]), Some(1.0)).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("lifespan"));
    }

    #[test]
    fn short_storms_are_counted() {
        let (c, rep) = read(&csv_for(&[("a", 3), ("b", 9)]), Some(1.0)).unwrap();
        assert_eq!(c.storms.len(), 1);
        assert_eq!(rep.rejected_short, 1);
    }

    #[test]
    fn duplicate_time_index() {
        let mut text = csv_for(&[("a", 9)]);
        text.push_str("a,3,-47,45,2\n");
        let err = read(&text, Some(1.0)).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let mut text = csv_for(&[("a", 9)]);
        text.push_str("a,9,abc,45,2\n");
        match read(&text, Some(1.0)).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 11),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn years_from_header_comment() {
        let text = format!("# years_of_record=36\n{}", csv_for(&[("a", 8)]));
        let (c, _) = read(&text, None).unwrap();
        assert_eq!(c.years_of_record, 36.0);
        assert!(read(&csv_for(&[("a", 8)]), None).is_err());
    }

    #[test]
    fn write_then_read() {
        let (c, _) = read(&csv_for(&[("a", 10), ("b", 12)]), Some(3.5)).unwrap();
        let mut buf = Vec::new();
        write_catalog(&mut buf, &c, &["test".into()]).unwrap();
        let (back, _) = read_catalog(buf.as_slice(), Path::new("buf"), None).unwrap();
        assert_eq!(back, c);
    }
}
