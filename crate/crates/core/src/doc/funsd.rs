//! Loader for FUNSD-style annotation directories.
//!
//! Each page is one JSON file with a `form` array of segments; segment words
//! become page words in file order and each non-`other` segment becomes an
//! entity. Raw pixel boxes are quantized against the page size, read from a
//! `<stem>.size.json` sidecar (`{"width": .., "height": ..}`) or from the PNG
//! header of `../images/<stem>.png`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{normalize_bbox, BoundingBox, Dataset, Entity, Page};
use crate::error::{Error, Result};

pub const FUNSD_LABELS: [&str; 3] = ["header", "question", "answer"];
const IGNORED_LABEL: &str = "other";

#[derive(Deserialize)]
struct FormFile {
    form: Vec<Segment>,
}

#[derive(Deserialize)]
struct Segment {
    label: String,
    words: Vec<RawWord>,
}

#[derive(Deserialize)]
struct RawWord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    text: String,
}

#[derive(Deserialize)]
struct SizeFile {
    width: f64,
    height: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FunsdOptions {
    /// Page size used when neither a sidecar nor an image is found.
    pub fallback_size: (f64, f64),
}

impl Default for FunsdOptions {
    fn default() -> Self {
        FunsdOptions {
            fallback_size: (1000.0, 1000.0),
        }
    }
}

/// Width and height from a PNG IHDR chunk.
pub fn png_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    const SIG: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    if bytes.len() < 24 || bytes[..8] != SIG || &bytes[12..16] != b"IHDR" {
        return None;
    }
    let w = u32::from_be_bytes(bytes[16..20].try_into().ok()?);
    let h = u32::from_be_bytes(bytes[20..24].try_into().ok()?);
    Some((w, h))
}

fn page_size(json_path: &Path, opts: &FunsdOptions) -> Result<(f64, f64)> {
    let stem = json_path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let dir = json_path.parent().unwrap_or(Path::new("."));
    let sidecar = dir.join(format!("{stem}.size.json"));
    if sidecar.exists() {
        let raw = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let s: SizeFile = serde_json::from_str(&raw).map_err(|e| Error::parse(&sidecar, e))?;
        return Ok((s.width, s.height));
    }
    let png = dir.join("..").join("images").join(format!("{stem}.png"));
    if let Ok(bytes) = fs::read(&png) {
        if let Some((w, h)) = png_dimensions(&bytes) {
            return Ok((w as f64, h as f64));
        }
        log::warn!("{}: not a PNG, using fallback page size", png.display());
    }
    Ok(opts.fallback_size)
}

/// Parse one annotation file.
pub fn load_page(path: &Path, opts: &FunsdOptions) -> Result<Page> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: FormFile = serde_json::from_str(&raw).map_err(|e| Error::parse(path, e))?;
    let (w, h) = page_size(path, opts)?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    let mut words: Vec<(String, BoundingBox)> = Vec::new();
    let mut entities = Vec::new();
    for seg in file.form {
        let start = words.len();
        for rw in seg.words {
            let text = rw.text.trim();
            if text.is_empty() {
                continue;
            }
            let bbox = normalize_bbox(rw.bbox, w, h).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
            words.push((text.to_string(), bbox));
        }
        if words.len() > start && seg.label != IGNORED_LABEL {
            entities.push(Entity::new(start, words.len() - 1, seg.label.to_lowercase()));
        }
    }
    Page::new(id, w, h, words, entities)
}

/// Directory holding the JSON files: `dir/annotations` if present, else `dir`.
fn annotation_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("annotations");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Load every page of a split directory, sorted by file name.
pub fn load_funsd_dir(dir: &Path, opts: &FunsdOptions) -> Result<Dataset> {
    let dir = annotation_dir(dir);
    let listing = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|s| s.to_str()).unwrap_or_default();
            name.ends_with(".json") && !name.ends_with(".size.json")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        log::warn!("{}: no annotation files", dir.display());
    }
    let pages = files.iter().map(|p| load_page(p, opts)).collect::<Result<Vec<_>>>()?;
    let ds = Dataset::new("funsd", FUNSD_LABELS.iter().map(|s| s.to_string()).collect(), pages);
    ds.validate()?;
    Ok(ds)
}

/// `(train, test)` from a dataset root with `training_data/` and `testing_data/`.
pub fn load_funsd(root: &Path, opts: &FunsdOptions) -> Result<(Dataset, Dataset)> {
    let train = load_funsd_dir(&root.join("training_data"), opts)?;
    let test = load_funsd_dir(&root.join("testing_data"), opts)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_header_is_parsed() {
        let mut bytes = vec![0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, 0, 0, 0, 13];
        bytes.extend_from_slice(b"IHDR");
        bytes.extend_from_slice(&762u32.to_be_bytes());
        bytes.extend_from_slice(&1000u32.to_be_bytes());
        assert_eq!(png_dimensions(&bytes), Some((762, 1000)));
        assert_eq!(png_dimensions(b"not a png at all, definitely"), None);
    }
}
