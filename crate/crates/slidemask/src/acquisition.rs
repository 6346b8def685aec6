//! Candidate-image acquisition behind a pluggable provider contract, with
//! pixel-level dedupe, provenance records, and a human-triage worksheet.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use image::GenericImageView;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchQuery {
    pub terms: String,
    pub max_results: usize,
    pub min_width: u32,
    pub min_height: u32,
}

impl FetchQuery {
    fn validate(&self) -> Result<()> {
        if self.max_results == 0 {
            return Err(Error::Config("max_results must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchRecord {
    pub url: String,
    pub local_path: String,
    pub checksum: String,
    pub width: u32,
    pub height: u32,
    pub provider: String,
    pub retrieved_at: DateTime<Utc>,
}

/// Narrow provider contract: a search returns (url, encoded image bytes)
/// pairs. Real web providers are optional plugins; the offline fixture
/// provider reads a directory so the suite needs no network.
pub trait ImageProvider {
    fn name(&self) -> &str;
    fn search(&self, terms: &str, max_results: usize) -> Result<Vec<(String, Vec<u8>)>>;
}

/// Offline provider serving the image files found in a directory, sorted by
/// filename for reproducibility.
pub struct FixtureProvider {
    root: PathBuf,
}

impl FixtureProvider {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FixtureProvider { root: root.into() }
    }
}

impl ImageProvider for FixtureProvider {
    fn name(&self) -> &str {
        "fixture"
    }

    fn search(&self, _terms: &str, max_results: usize) -> Result<Vec<(String, Vec<u8>)>> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&self.root)
            .map_err(|e| Error::Fetch(format!("fixture root {}: {e}", self.root.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("png" | "jpg" | "jpeg" | "bmp")
                )
            })
            .collect();
        entries.sort();
        entries.truncate(max_results);
        entries
            .into_iter()
            .map(|p| {
                let bytes = std::fs::read(&p).map_err(|e| Error::Fetch(format!("{}: {e}", p.display())))?;
                Ok((format!("fixture://{}", p.file_name().unwrap().to_string_lossy()), bytes))
            })
            .collect()
    }
}

/// Content hash over decoded RGB pixel bytes, so recompressed duplicates
/// collapse to one record.
fn pixel_checksum(img: &image::DynamicImage) -> String {
    let rgb = img.to_rgb8();
    let mut hasher = Sha256::new();
    hasher.update(rgb.width().to_le_bytes());
    hasher.update(rgb.height().to_le_bytes());
    hasher.update(rgb.as_raw());
    format!("{:x}", hasher.finalize())
}

/// Fetch up to `max_results` candidate images, dropping undersized images
/// and duplicate pixel content (first occurrence wins). Decoded images are
/// saved as PNG under `out_dir`.
pub fn fetch_images(query: &FetchQuery, provider: &dyn ImageProvider, out_dir: &Path) -> Result<Vec<FetchRecord>> {
    query.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    // Over-fetch so dimension/dup drops can still fill the quota.
    let raw = provider.search(&query.terms, query.max_results.saturating_mul(4))?;
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for (url, bytes) in raw {
        if records.len() == query.max_results {
            break;
        }
        let img = match image::load_from_memory(&bytes) {
            Ok(img) => img,
            Err(_) => continue, // undecodable result, skip
        };
        let (w, h) = img.dimensions();
        if w < query.min_width || h < query.min_height {
            continue;
        }
        let checksum = pixel_checksum(&img);
        if !seen.insert(checksum.clone()) {
            continue;
        }
        let filename = format!("{:03}_{}.png", records.len(), &checksum[..12]);
        let local = out_dir.join(&filename);
        img.save(&local).map_err(|e| Error::Fetch(format!("saving {}: {e}", local.display())))?;
        records.push(FetchRecord {
            url,
            local_path: local.to_string_lossy().into_owned(),
            checksum,
            width: w,
            height: h,
            provider: provider.name().to_string(),
            retrieved_at: Utc::now(),
        });
    }
    Ok(records)
}

/// Emit a tab-delimited worksheet (path, width, height, blank keep column)
/// for offline visual triage.
pub fn write_triage_worksheet(records: &[FetchRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Contract("cannot triage an empty record list".into()));
    }
    let mut out = String::from("path\twidth\theight\tkeep\n");
    for r in records {
        out.push_str(&format!("{}\t{}\t{}\t\n", r.local_path, r.width, r.height));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Apply keep/drop decisions from a filled-in worksheet. Rows marked `drop`
/// (or `n`/`no`) are removed; everything else survives. A worksheet row
/// whose path matches no record is an error.
pub fn import_triage_decisions(records: &[FetchRecord], worksheet: &str) -> Result<Vec<FetchRecord>> {
    let known: BTreeSet<&str> = records.iter().map(|r| r.local_path.as_str()).collect();
    let mut dropped = BTreeSet::new();
    for (i, line) in worksheet.lines().enumerate() {
        if i == 0 && line.starts_with("path\t") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let path = cols.next().unwrap_or("").trim();
        let decision = cols.nth(2).unwrap_or("").trim().to_ascii_lowercase();
        if !known.contains(path) {
            return Err(Error::UnknownWorksheetPath(path.to_string()));
        }
        if matches!(decision.as_str(), "drop" | "n" | "no" | "0") {
            dropped.insert(path.to_string());
        }
    }
    Ok(records
        .iter()
        .filter(|r| !dropped.contains(&r.local_path))
        .cloned()
        .collect())
}

pub fn write_records(records: &[FetchRecord], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(records).map_err(|e| Error::json("serializing fetch records", e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
