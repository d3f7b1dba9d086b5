use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Modality};

/// Input record of the report repository.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub report_id: String,
    pub modality: Modality,
    pub image_path: String,
    pub report_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub report_id: String,
    pub modality: Modality,
    pub image_ref: String,
    pub report_text: String,
    #[serde(with = "hex_u64")]
    pub phash: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

const GRID_W: u64 = 9;
const GRID_H: u64 = 8;

/// Difference hash of an encoded image (any format the `image` crate reads).
pub fn perceptual_hash(bytes: &[u8]) -> Result<u64, CorpusError> {
    let img = image::load_from_memory(bytes).map_err(|e| CorpusError::Decode {
        source_name: "<memory>".into(),
        message: e.to_string(),
    })?;
    Ok(dhash_rgb(&img.to_rgb8()))
}

pub fn perceptual_hash_file(path: &Path) -> Result<u64, CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    perceptual_hash(&bytes).map_err(|e| match e {
        CorpusError::Decode { message, .. } => CorpusError::Decode {
            source_name: path.display().to_string(),
            message,
        },
        other => other,
    })
}

/// 64-bit dHash over a 9x8 area-averaged downsample of integer luma
/// (`299 R + 587 G + 114 B`). Bit `row * 8 + col` is set when cell `col` is
/// darker than cell `col + 1` in that row.
///
/// Source pixels are mapped onto the grid with exact integer coverage
/// weights, so every grid cell carries the same total weight and cells can
/// be compared as raw weighted sums.
pub fn dhash_rgb(img: &RgbImage) -> u64 {
    let (w, h) = img.dimensions();
    assert!(w > 0 && h > 0, "image must have at least one pixel");
    let xw = axis_weights(w as u64, GRID_W);
    let yw = axis_weights(h as u64, GRID_H);

    let mut cells = [[0u64; GRID_W as usize]; GRID_H as usize];
    for (gy, ys) in yw.iter().enumerate() {
        for (gx, xs) in xw.iter().enumerate() {
            let mut acc = 0u64;
            for &(sy, wy) in ys {
                for &(sx, wx) in xs {
                    let p = img.get_pixel(sx as u32, sy as u32).0;
                    let luma = 299 * p[0] as u64 + 587 * p[1] as u64 + 114 * p[2] as u64;
                    acc += wx * wy * luma;
                }
            }
            cells[gy][gx] = acc;
        }
    }

    let mut hash = 0u64;
    for (row, line) in cells.iter().enumerate() {
        for col in 0..(GRID_W as usize - 1) {
            if line[col] < line[col + 1] {
                hash |= 1 << (row * 8 + col);
            }
        }
    }
    hash
}

/// For each of `cells` output bins, the source indices it covers and the
/// integer overlap length. Source pixel `s` spans `[s*cells, (s+1)*cells)`
/// and bin `c` spans `[c*len, (c+1)*len)` in the shared scaled axis.
fn axis_weights(len: u64, cells: u64) -> Vec<Vec<(u64, u64)>> {
    (0..cells)
        .map(|c| {
            let lo = c * len;
            let hi = (c + 1) * len;
            (lo / cells..=(hi - 1) / cells)
                .map(|s| {
                    let overlap = hi.min((s + 1) * cells) - lo.max(s * cells);
                    (s, overlap)
                })
                .collect()
        })
        .collect()
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome {
    pub kept: Vec<ReportEntry>,
    /// removed report_id -> report_id of the kept entry it collapsed into
    pub duplicates: BTreeMap<String, String>,
}

/// Greedy first-seen dedup: an entry is dropped when some already-kept
/// entry lies within `threshold` bits; it collapses into the earliest such
/// entry.
pub fn dedup_reports(entries: Vec<ReportEntry>, threshold: u32) -> DedupOutcome {
    let mut kept: Vec<ReportEntry> = Vec::new();
    let mut duplicates = BTreeMap::new();
    for entry in entries {
        match kept.iter().find(|k| hamming(k.phash, entry.phash) <= threshold) {
            Some(k) => {
                duplicates.insert(entry.report_id, k.report_id.clone());
            }
            None => kept.push(entry),
        }
    }
    DedupOutcome { kept, duplicates }
}
