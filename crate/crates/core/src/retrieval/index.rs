use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use super::{RetrievalError, ScoredHit};

const MAGIC: [u8; 8] = *b"PSDENSE\0";
const VERSION: u32 = 1;
const NORM_TOLERANCE: f64 = 1e-6;

/// Exact cosine index over unit-normalized rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    model_id: String,
    dims: usize,
    ids: Vec<String>,
    /// row-major, `ids.len() * dims`
    data: Vec<f64>,
}

impl DenseIndex {
    /// Normalizes each vector. Ids must be unique and vectors non-zero.
    pub fn build(
        model_id: impl Into<String>,
        dims: usize,
        items: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self, RetrievalError> {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut seen = HashSet::new();
        for (id, v) in items {
            if v.len() != dims {
                return Err(RetrievalError::DimensionMismatch { expected: dims, got: v.len() });
            }
            if !seen.insert(id.clone()) {
                return Err(RetrievalError::DuplicateId(id));
            }
            let norm = l2(&v);
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(RetrievalError::ZeroVector(id));
            }
            data.extend(v.iter().map(|x| x / norm));
            ids.push(id);
        }
        Ok(Self {
            model_id: model_id.into(),
            dims,
            ids,
            data,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    /// Every row is scored; returns `min(k, len)` hits by cosine
    /// similarity, ties broken by ascending id.
    pub fn knn_search(&self, query: &[f64], k: usize) -> Result<Vec<ScoredHit>, RetrievalError> {
        if query.len() != self.dims {
            return Err(RetrievalError::DimensionMismatch { expected: self.dims, got: query.len() });
        }
        if k == 0 {
            return Err(RetrievalError::InvalidParameter("k must be at least 1".into()));
        }
        let norm = l2(query);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(RetrievalError::ZeroVector("<query>".into()));
        }
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|i| {
                let dot: f64 = self.row(i).iter().zip(query).map(|(a, b)| a * b).sum();
                (i, dot / norm)
            })
            .collect();
        let order = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.ids[a.0].cmp(&self.ids[b.0]))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(r, (i, score))| ScoredHit {
                item_id: self.ids[i].clone(),
                score,
                rank: r + 1,
            })
            .collect())
    }

    /// Header `{magic, version, model_id, dims, count}`, then ids, then
    /// row-major little-endian f64 data.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(w, &self.model_id)?;
        w.write_all(&(self.dims as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for id in &self.ids {
            write_str(w, id)?;
        }
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, RetrievalError> {
        let bad = |m: &str| RetrievalError::Format(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(RetrievalError::Format(format!("unsupported version {version}")));
        }
        let model_id = read_str(r)?;
        let dims = read_u32(r)? as usize;
        let count = read_u64(r)? as usize;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        let mut seen = HashSet::new();
        for _ in 0..count {
            let id = read_str(r)?;
            if !seen.insert(id.clone()) {
                return Err(RetrievalError::DuplicateId(id));
            }
            ids.push(id);
        }
        let mut data = Vec::with_capacity(count * dims);
        let mut buf = [0u8; 8];
        for _ in 0..count * dims {
            r.read_exact(&mut buf).map_err(|_| bad("truncated vector data"))?;
            data.push(f64::from_le_bytes(buf));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(|_| bad("read failure"))? != 0 {
            return Err(bad("trailing bytes after vector data"));
        }
        let index = Self { model_id, dims, ids, data };
        for i in 0..index.len() {
            let n = l2(index.row(i));
            if !((n - 1.0).abs() <= NORM_TOLERANCE) {
                return Err(RetrievalError::Format(format!(
                    "row '{}' has norm {n}, expected unit",
                    index.ids[i]
                )));
            }
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32(r: &mut impl Read) -> Result<u32, RetrievalError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| RetrievalError::Format("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, RetrievalError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| RetrievalError::Format("truncated header".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String, RetrievalError> {
    let len = read_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(|_| RetrievalError::Format("truncated string".into()))?;
    String::from_utf8(b).map_err(|_| RetrievalError::Format("string is not UTF-8".into()))
}
