use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use super::sim::{SyntheticCatalog, TerminationCause};
use crate::catalog::{write_comments, Catalog, CATALOG_HEADER};
use crate::error::{Error, Result};

/// Write a synthetic catalog in the input schema plus provenance columns.
pub fn write_synthetic<W: Write>(out: W, catalog: &SyntheticCatalog, comments: &[String]) -> Result<()> {
    let mut out = out;
    write_comments(&mut out, catalog.years_of_record, comments)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = CATALOG_HEADER.to_vec();
    header.extend(["seed", "sampler_tag", "termination_cause"]);
    w.write_record(&header)?;
    for s in &catalog.storms {
        for (p, tag) in s.track.points().iter().zip(&s.tags) {
            w.write_record([
                s.track.id.clone(),
                p.time_index.to_string(),
                p.lon.to_string(),
                p.lat.to_string(),
                p.vorticity.to_string(),
                s.seed.to_string(),
                tag.as_str().to_string(),
                s.cause.as_str().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(PathBuf::from("<synthetic>"), e))?;
    Ok(())
}

/// Censoring flags aligned with `catalog.storms`, read from a
/// `termination_cause` column. `None` when the file has no such column.
pub fn read_censoring(path: &Path, catalog: &Catalog) -> Result<Option<Vec<bool>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file));
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(id_col), Some(cause_col)) = (col("storm_id"), col("termination_cause")) else {
        return Ok(None);
    };
    let mut causes: HashMap<String, TerminationCause> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let raw = rec.get(cause_col).unwrap_or("").trim();
        let cause = TerminationCause::parse(raw)
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: rec.position().map_or(0, |p| p.line()),
                message: format!("unknown termination cause `{raw}`"),
            })?;
        causes.insert(rec.get(id_col).unwrap_or("").trim().to_string(), cause);
    }
    Ok(Some(
        catalog
            .storms
            .iter()
            .map(|s| causes.get(&s.id).is_some_and(|&c| c != TerminationCause::Hazard))
            .collect(),
    ))
}
