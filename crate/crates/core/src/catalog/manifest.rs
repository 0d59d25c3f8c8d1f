//! Manifest ingestion with a machine-readable rejection report.
//!
//! The manifest is UTF-8 CSV with a required header row and fixed field
//! order: `photo_id,image_path,year,context,description,city,nation`.
//! Invalid rows are rejected and reported, never repaired or silently
//! dropped.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::{Catalog, ContextClass, PhotoRecord, Split, ARCHIVE_YEAR_MAX, ARCHIVE_YEAR_MIN};

/// Required manifest fields, in order.
pub const MANIFEST_FIELDS: [&str; 7] =
    ["photo_id", "image_path", "year", "context", "description", "city", "nation"];

/// One rejected manifest row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the manifest (header is line 1).
    pub line: u64,
    pub photo_id: Option<String>,
    pub reason: String,
}

/// All rows that failed validation, with reasons.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RejectionReport {
    pub rejected: Vec<RejectedRow>,
}

impl RejectionReport {
    pub fn is_empty(&self) -> bool {
        self.rejected.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rejected.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| CoreError::io(path, e))
    }
}

/// Load and validate a manifest file.
///
/// Returns the catalog of valid records together with the rejection report.
/// A missing file or a wrong header is a hard error; invalid rows are not.
pub fn load_manifest(path: &Path) -> Result<(Catalog, RejectionReport)> {
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| CoreError::Manifest(format!("cannot read header: {e}")))?
        .clone();
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != MANIFEST_FIELDS {
        return Err(CoreError::Manifest(format!(
            "header mismatch: expected {:?}, got {:?}",
            MANIFEST_FIELDS, got
        )));
    }

    let mut records = Vec::new();
    let mut report = RejectionReport::default();
    let mut seen = std::collections::HashSet::new();

    for (idx, row) in reader.records().enumerate() {
        // Header occupies line 1; data starts at line 2.
        let line = idx as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.rejected.push(RejectedRow {
                    line,
                    photo_id: None,
                    reason: format!("unparsable row: {e}"),
                });
                continue;
            }
        };
        match parse_row(&row, &mut seen) {
            Ok(record) => records.push(record),
            Err((photo_id, reason)) => {
                report.rejected.push(RejectedRow { line, photo_id, reason })
            }
        }
    }

    let catalog = Catalog::new(records)?;
    Ok((catalog, report))
}

fn parse_row(
    row: &csv::StringRecord,
    seen: &mut std::collections::HashSet<String>,
) -> std::result::Result<PhotoRecord, (Option<String>, String)> {
    if row.len() != MANIFEST_FIELDS.len() {
        return Err((None, format!("unparsable row: expected {} fields, got {}", MANIFEST_FIELDS.len(), row.len())));
    }
    let photo_id = row[0].trim().to_string();
    let id = if photo_id.is_empty() { None } else { Some(photo_id.clone()) };
    if photo_id.is_empty() {
        return Err((None, "empty photo_id".to_string()));
    }
    if !seen.insert(photo_id.clone()) {
        return Err((id, "duplicate photo_id".to_string()));
    }
    let image_path = row[1].trim();
    if image_path.is_empty() {
        return Err((id, "empty image_path".to_string()));
    }
    let year: i32 = row[2]
        .trim()
        .parse()
        .map_err(|_| (id.clone(), format!("unparsable year {:?}", &row[2])))?;
    if !(ARCHIVE_YEAR_MIN..=ARCHIVE_YEAR_MAX).contains(&year) {
        return Err((id, "year out of archive range".to_string()));
    }
    let context = ContextClass::parse(&row[3])
        .ok_or_else(|| (id.clone(), "unknown context label".to_string()))?;

    Ok(PhotoRecord {
        photo_id,
        image_ref: PathBuf::from(image_path),
        year,
        context,
        description: row[4].to_string(),
        city: row[5].to_string(),
        nation: row[6].to_string(),
        split: Split::Unassigned,
    })
}

/// Persist a validated catalog so later stages can reload it without
/// re-running manifest validation.
pub fn save_catalog(catalog: &Catalog, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(catalog)?;
    std::fs::write(path, json).map_err(|e| CoreError::io(path, e))
}

pub fn load_catalog(path: &Path) -> Result<Catalog> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut catalog: Catalog = serde_json::from_str(&text)?;
    catalog.reindex();
    Ok(catalog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_manifest(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "photo_id,image_path,year,context,description,city,nation\n";

    #[test]
    fn valid_rows_ingest_cleanly() {
        let f = write_manifest(&format!(
            "{HEADER}p1,img/p1.png,1950,Work,\"factory, outside\",Rimini,Italy\np2,img/p2.png,1960,Free-time,,,\np3,img/p3.png,1845,Rites,,,\n"
        ));
        let (catalog, report) = load_manifest(f.path()).unwrap();
        assert_eq!(catalog.len(), 3);
        assert!(report.is_empty());
        let p1 = catalog.get("p1").unwrap();
        assert_eq!(p1.description, "factory, outside");
        assert_eq!(p1.context, ContextClass::Work);
    }

    #[test]
    fn unknown_context_label_is_rejected() {
        let f = write_manifest(&format!("{HEADER}p1,img/p1.png,1950,Dance,,,\n"));
        let (catalog, report) = load_manifest(f.path()).unwrap();
        assert_eq!(catalog.len(), 0);
        assert_eq!(report.len(), 1);
        assert_eq!(report.rejected[0].reason, "unknown context label");
        assert_eq!(report.rejected[0].line, 2);
    }

    #[test]
    fn year_outside_archive_range_is_rejected() {
        let f = write_manifest(&format!("{HEADER}p1,img/p1.png,1844,Work,,,\np2,img/p2.png,2010,Work,,,\n"));
        let (catalog, report) = load_manifest(f.path()).unwrap();
        assert_eq!(catalog.len(), 0);
        assert_eq!(report.len(), 2);
        assert!(report.rejected.iter().all(|r| r.reason == "year out of archive range"));
    }

    #[test]
    fn archive_bounds_are_inclusive() {
        let f = write_manifest(&format!("{HEADER}p1,img/p1.png,1845,Work,,,\np2,img/p2.png,2009,Work,,,\n"));
        let (catalog, report) = load_manifest(f.path()).unwrap();
        assert_eq!(catalog.len(), 2);
        assert!(report.is_empty());
    }

    #[test]
    fn duplicate_photo_id_is_rejected() {
        let f = write_manifest(&format!("{HEADER}p1,img/a.png,1950,Work,,,\np1,img/b.png,1951,Music,,,\n"));
        let (catalog, report) = load_manifest(f.path()).unwrap();
        assert_eq!(catalog.len(), 1);
        assert_eq!(report.len(), 1);
        assert_eq!(report.rejected[0].reason, "duplicate photo_id");
    }

    #[test]
    fn missing_file_is_a_hard_error() {
        assert!(load_manifest(Path::new("/nonexistent/manifest.csv")).is_err());
    }

    #[test]
    fn header_mismatch_is_a_hard_error() {
        let f = write_manifest("id,path,year\np1,img,1950\n");
        assert!(load_manifest(f.path()).is_err());
    }

    #[test]
    fn catalog_round_trips_through_disk() {
        let f = write_manifest(&format!("{HEADER}p1,img/p1.png,1950,Work,desc,Bologna,Italy\n"));
        let (catalog, _) = load_manifest(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_catalog(&catalog, out.path()).unwrap();
        let loaded = load_catalog(out.path()).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded.get("p1").unwrap().city, "Bologna");
    }
}
