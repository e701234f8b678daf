//! Target-aware multimodal similarity features.
//!
//! Multimodal vectors are frozen inputs produced outside the engine; they
//! are L2-normalized once at load so each candidate's similarity vector is
//! a single matrix-vector product against the cached history matrix.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::bucketing::uniform_histogram;
use crate::error::{DmfError, Result};
use crate::mlp::Mlp;
use crate::numerics::{dot, Matrix};
use crate::real::Real;

const MMF_MAGIC: &[u8; 4] = b"MMF1";

/// Frozen multimodal embedding table; every stored vector is unit norm.
#[derive(Debug, Clone)]
pub struct MultimodalTable {
    dim: usize,
    index: HashMap<u64, usize>,
    vectors: Matrix<f32>,
}

/// Counters produced while assembling per-request feature inputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct FeatureStats {
    pub missing_multimodal: u64,
}

/// Cosine scores between one candidate and each history position, aligned
/// with the history; positions without a multimodal entry are invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityVector {
    pub scores: Vec<f32>,
    pub valid: Vec<bool>,
}

impl SimilarityVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn all_invalid(len: usize) -> Self {
        SimilarityVector { scores: vec![0.0; len], valid: vec![false; len] }
    }
}

fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

/// `a . b / (|a| |b|)`, clamped to [-1, 1].
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f32> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(DmfError::ZeroNormVector { item_id: u64::MAX });
    }
    Ok(((dot(a, b) / (na * nb)) as f32).clamp(-1.0, 1.0))
}

impl MultimodalTable {
    pub fn new(dim: usize) -> Self {
        MultimodalTable { dim, index: HashMap::new(), vectors: Matrix::zeros(0, dim) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Inserts a raw vector, normalizing it to unit length. Zero-norm and
    /// non-finite vectors are rejected with the offending item id.
    pub fn insert(&mut self, item_id: u64, raw: &[f32]) -> Result<()> {
        if raw.len() != self.dim {
            return Err(DmfError::DimensionMismatch {
                op: "multimodal_insert",
                detail: format!("item {}: dim {} vs table {}", item_id, raw.len(), self.dim),
            });
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(DmfError::BadFormat(format!("item {} has non-finite components", item_id)));
        }
        let n = norm(raw);
        if n == 0.0 {
            return Err(DmfError::ZeroNormVector { item_id });
        }
        let unit: Vec<f32> = raw.iter().map(|&x| (x as f64 / n) as f32).collect();
        let row = self.vectors.rows();
        let mut grown = Matrix::zeros(row + 1, self.dim);
        grown.data_mut()[..row * self.dim].copy_from_slice(self.vectors.data());
        grown.row_mut(row).copy_from_slice(&unit);
        self.vectors = grown;
        self.index.insert(item_id, row);
        Ok(())
    }

    /// All item ids with a stored vector, ascending.
    pub fn ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.index.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn get(&self, item_id: u64) -> Option<&[f32]> {
        self.index.get(&item_id).map(|&i| self.vectors.row(i))
    }

    /// Stacks the normalized vectors of `ids` into an L x d_m matrix.
    /// Missing items produce a zero row with `valid = false` and are counted
    /// in the returned stats.
    pub fn history_matrix(&self, ids: &[u64]) -> (Matrix<f32>, Vec<bool>, FeatureStats) {
        let mut m = Matrix::zeros(ids.len(), self.dim);
        let mut valid = vec![false; ids.len()];
        let mut stats = FeatureStats::default();
        for (j, id) in ids.iter().enumerate() {
            match self.get(*id) {
                Some(v) => {
                    m.row_mut(j).copy_from_slice(v);
                    valid[j] = true;
                }
                None => stats.missing_multimodal += 1,
            }
        }
        (m, valid, stats)
    }

    /// Writes the MMF1 binary format: magic, u32 dim, u64 count, then
    /// `{u64 item_id, dim LE f32}` records in ascending id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MMF_MAGIC)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u64::<LittleEndian>(self.index.len() as u64)?;
        let mut ids: Vec<u64> = self.index.keys().copied().collect();
        ids.sort_unstable();
        for id in ids {
            w.write_u64::<LittleEndian>(id)?;
            for &x in self.get(id).unwrap() {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MultimodalTable> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MMF_MAGIC {
            return Err(DmfError::BadFormat("missing MMF1 magic".into()));
        }
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let count = r.read_u64::<LittleEndian>()? as usize;
        let mut table = MultimodalTable::new(dim);
        let mut buf = vec![0f32; dim];
        for _ in 0..count {
            let id = r.read_u64::<LittleEndian>()?;
            for x in buf.iter_mut() {
                *x = r.read_f32::<LittleEndian>()?;
            }
            table.insert(id, &buf)?;
        }
        Ok(table)
    }
}

/// One matrix-vector product of the normalized target against pre-normalized
/// history rows. Invalid positions carry score 0.
pub fn similarity_vector(
    target_mm: &[f32],
    history_mm: &Matrix<f32>,
    valid: &[bool],
) -> Result<SimilarityVector> {
    if history_mm.cols() != target_mm.len() {
        return Err(DmfError::DimensionMismatch {
            op: "similarity_vector",
            detail: format!("target dim {} vs history {}", target_mm.len(), history_mm.cols()),
        });
    }
    let tn = norm(target_mm);
    if tn == 0.0 {
        return Err(DmfError::ZeroNormVector { item_id: u64::MAX });
    }
    let mut scores = vec![0.0f32; history_mm.rows()];
    for j in 0..history_mm.rows() {
        if valid[j] {
            scores[j] = ((dot(history_mm.row(j), target_mm) / tn) as f32).clamp(-1.0, 1.0);
        }
    }
    Ok(SimilarityVector { scores, valid: valid.to_vec() })
}

/// The N-bin histogram input to the modality-centric MLP. Counts are scaled
/// by `1 / max(1, valid_count)` when `normalize` is set.
pub fn histogram_input(sim: &SimilarityVector, n: usize, normalize: bool) -> Vec<f64> {
    let scores: Vec<f64> = sim
        .scores
        .iter()
        .zip(&sim.valid)
        .filter(|(_, &v)| v)
        .map(|(&s, _)| s as f64)
        .collect();
    let counts = uniform_histogram(&scores, n);
    let scale = if normalize { 1.0 / (scores.len().max(1) as f64) } else { 1.0 };
    counts.into_iter().map(|c| c as f64 * scale).collect()
}

/// Modality-centric representation: histogram of valid similarity scores
/// fed through the histogram MLP.
pub fn histogram_representation<T: Real>(
    sim: &SimilarityVector,
    n: usize,
    normalize: bool,
    mlp: &Mlp<T>,
) -> Result<Vec<T>> {
    crate::mlp::check_widths(mlp, n)?;
    let input: Vec<T> = histogram_input(sim, n, normalize)
        .into_iter()
        .map(T::from_f64)
        .collect();
    Ok(mlp.forward(&input))
}
