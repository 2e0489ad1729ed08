//! Vector quantization of SH-rest coefficients.

mod finetune;
mod kmeans;
mod search;

pub use finetune::{vq_finetune, vq_finetune_with_rates};
pub use kmeans::{assign, kmeans_init, quantization_sse, MAX_LLOYD_ITERATIONS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GaussianCloud;
use crate::significance::{fraction_count, significance_order};

pub const DEFAULT_VQ_RATIO: f64 = 0.6;
pub const DEFAULT_CODEBOOK_SIZE: usize = 8192;
pub const DEFAULT_DECAY: f64 = 0.8;
pub const DEFAULT_UPDATE_EPOCHS: usize = 5;
pub const DEFAULT_BATCH_SIZE: usize = 4096;

/// Code vectors stored row-major, `k × dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub vectors: Vec<f64>,
    pub dim: usize,
    pub decay: f64,
}

impl Codebook {
    pub fn new(vectors: Vec<f64>, dim: usize, decay: f64) -> Self {
        Self { vectors, dim, decay }
    }

    /// A codebook with no codes, as used when nothing is quantized.
    pub fn empty(dim: usize) -> Self {
        Self::new(Vec::new(), dim, DEFAULT_DECAY)
    }

    pub fn k(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.vectors.len() / self.dim
        }
    }

    pub fn code(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.dim..(j + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 && !self.vectors.is_empty() {
            return Err(Error::Shape("codebook has values but zero width".into()));
        }
        if self.dim > 0 && !self.vectors.len().is_multiple_of(self.dim) {
            return Err(Error::Shape(format!(
                "codebook holds {} values, not a multiple of {}",
                self.vectors.len(),
                self.dim
            )));
        }
        if self.vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("codebook contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Per-Gaussian code index; `None` marks a Gaussian whose SH-rest is kept raw.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentVector {
    pub codes: Vec<Option<u32>>,
}

impl AssignmentVector {
    pub fn none(n: usize) -> Self {
        Self { codes: vec![None; n] }
    }

    /// Builds assignments from a membership mask and one index per member,
    /// in ascending Gaussian order.
    pub fn from_membership(members: &[bool], indices: &[u32]) -> Result<Self> {
        let count = members.iter().filter(|&&m| m).count();
        if count != indices.len() {
            return Err(Error::Shape(format!("{} indices for {count} members", indices.len())));
        }
        let mut it = indices.iter();
        Ok(Self {
            codes: members
                .iter()
                .map(|&m| if m { it.next().copied() } else { None })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn is_member(&self, i: usize) -> bool {
        self.codes[i].is_some()
    }

    pub fn membership(&self) -> Vec<bool> {
        self.codes.iter().map(Option::is_some).collect()
    }

    pub fn member_count(&self) -> usize {
        self.codes.iter().filter(|c| c.is_some()).count()
    }

    /// Member Gaussian indices, ascending.
    pub fn members(&self) -> Vec<usize> {
        (0..self.codes.len()).filter(|&i| self.codes[i].is_some()).collect()
    }

    pub fn validate(&self, n: usize, k: usize) -> Result<()> {
        if self.codes.len() != n {
            return Err(Error::Shape(format!("{} assignments for {n} Gaussians", self.codes.len())));
        }
        if let Some(bad) = self.codes.iter().flatten().find(|&&c| c as usize >= k) {
            return Err(Error::InvalidArgument(format!("code index {bad} out of range for k = {k}")));
        }
        Ok(())
    }
}

/// Marks the `floor(ratio · N)` lowest-scoring Gaussians as VQ members.
/// Equal scores rank higher indices lower.
pub fn select_vq_set(scores: &[f64], ratio: f64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("vq ratio must be in [0, 1], got {ratio}")));
    }
    let mut members = vec![false; scores.len()];
    for &i in significance_order(scores).iter().take(fraction_count(ratio, scores.len())) {
        members[i] = true;
    }
    Ok(members)
}

/// Significance-weighted moving-average update of every code that received
/// at least one vector of the batch.
///
/// `c ← λ·c + (1 − λ)·Σ s_j g_j / Σ s_j` over the vectors `g_j` assigned to
/// `c`, evaluated as `c + (1 − λ)·Σ s_j (g_j − c) / Σ s_j` so a code whose
/// vectors all equal it stays bit-identical. Codes with no assigned vectors,
/// or whose assigned scores sum to zero, are left unchanged.
pub fn update_codebook(codebook: &mut Codebook, vectors: &[f64], indices: &[u32], scores: &[f64]) -> Result<()> {
    let dim = codebook.dim;
    if dim == 0 || vectors.len() != indices.len() * dim || scores.len() != indices.len() {
        return Err(Error::Shape(format!(
            "batch of {} values, {} indices and {} scores for width {dim}",
            vectors.len(),
            indices.len(),
            scores.len()
        )));
    }
    let k = codebook.k();
    if let Some(bad) = indices.iter().find(|&&c| c as usize >= k) {
        return Err(Error::InvalidArgument(format!("code index {bad} out of range for k = {k}")));
    }
    let mut sums = vec![0.0; k * dim];
    let mut totals = vec![0.0; k];
    for ((v, &c), &s) in vectors.chunks_exact(dim).zip(indices).zip(scores) {
        let c = c as usize;
        totals[c] += s;
        let code = &codebook.vectors[c * dim..(c + 1) * dim];
        for ((acc, x), y) in sums[c * dim..(c + 1) * dim].iter_mut().zip(v).zip(code) {
            *acc += s * (x - y);
        }
    }
    let lambda = codebook.decay;
    for c in 0..k {
        if totals[c] == 0.0 {
            continue;
        }
        for (code, acc) in codebook.vectors[c * dim..(c + 1) * dim]
            .iter_mut()
            .zip(&sums[c * dim..(c + 1) * dim])
        {
            *code += (1.0 - lambda) * (acc / totals[c]);
        }
    }
    Ok(())
}

/// Runs `epochs` passes of batched assign-then-update over the member rows
/// in their given order.
pub fn refine_codebook(
    codebook: &mut Codebook,
    vectors: &[f64],
    scores: &[f64],
    epochs: usize,
    batch_size: usize,
) -> Result<()> {
    let dim = codebook.dim;
    if dim == 0 || vectors.len() != scores.len() * dim {
        return Err(Error::Shape(format!(
            "{} values and {} scores for width {dim}",
            vectors.len(),
            scores.len()
        )));
    }
    let batch = batch_size.max(1);
    for _ in 0..epochs {
        for (rows, s) in vectors.chunks(batch * dim).zip(scores.chunks(batch)) {
            let idx = assign(rows, codebook)?;
            update_codebook(codebook, rows, &idx, s)?;
        }
    }
    Ok(())
}

/// Copies each member's code vector into its SH-rest row.
pub fn materialize(cloud: &GaussianCloud, codebook: &Codebook, assignments: &AssignmentVector) -> Result<GaussianCloud> {
    let mut out = cloud.clone();
    materialize_into(&mut out, codebook, assignments)?;
    Ok(out)
}

pub(crate) fn materialize_into(
    cloud: &mut GaussianCloud,
    codebook: &Codebook,
    assignments: &AssignmentVector,
) -> Result<()> {
    assignments.validate(cloud.len(), codebook.k())?;
    if assignments.member_count() > 0 && codebook.dim != cloud.rest_width() {
        return Err(Error::Shape(format!(
            "codebook width {} does not match SH-rest width {}",
            codebook.dim,
            cloud.rest_width()
        )));
    }
    for (i, c) in assignments.codes.iter().enumerate() {
        if let Some(c) = c {
            cloud.rest_mut(i).copy_from_slice(codebook.code(*c as usize));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqConfig {
    pub ratio: f64,
    pub codebook_size: usize,
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self {
            ratio: DEFAULT_VQ_RATIO,
            codebook_size: DEFAULT_CODEBOOK_SIZE,
            decay: DEFAULT_DECAY,
            epochs: DEFAULT_UPDATE_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Quantized {
    /// The input cloud with member SH-rest rows replaced by their codes.
    pub cloud: GaussianCloud,
    pub codebook: Codebook,
    pub assignments: AssignmentVector,
}

/// Selects members by score, fits a codebook to their SH-rest rows, refines
/// it with weighted moving averages and assigns every member its nearest
/// code. A cloud without SH-rest coefficients has nothing to quantize.
pub fn quantize(cloud: &GaussianCloud, scores: &[f64], cfg: &VqConfig) -> Result<Quantized> {
    if scores.len() != cloud.len() {
        return Err(Error::Shape(format!("{} scores for {} Gaussians", scores.len(), cloud.len())));
    }
    let dim = cloud.rest_width();
    let membership = select_vq_set(scores, cfg.ratio)?;
    let members: Vec<usize> = (0..cloud.len()).filter(|&i| membership[i]).collect();
    if dim == 0 || members.is_empty() {
        return Ok(Quantized {
            cloud: cloud.clone(),
            codebook: Codebook::empty(dim),
            assignments: AssignmentVector::none(cloud.len()),
        });
    }
    let mut rows = Vec::with_capacity(members.len() * dim);
    for &i in &members {
        rows.extend_from_slice(cloud.rest(i));
    }
    let member_scores: Vec<f64> = members.iter().map(|&i| scores[i]).collect();
    let mut codebook = kmeans_init(&rows, dim, cfg.codebook_size, cfg.seed)?;
    codebook.decay = cfg.decay;
    refine_codebook(&mut codebook, &rows, &member_scores, cfg.epochs, cfg.batch_size)?;
    let idx = assign(&rows, &codebook)?;
    let assignments = AssignmentVector::from_membership(&membership, &idx)?;
    let cloud = materialize(cloud, &codebook, &assignments)?;
    Ok(Quantized {
        cloud,
        codebook,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn select_counts() {
        let scores: Vec<f64> = (0..10).map(|i| ((i * 7) % 10) as f64).collect();
        assert!(select_vq_set(&scores, 0.0).unwrap().iter().all(|&m| !m));
        let m = select_vq_set(&scores, 0.6).unwrap();
        assert_eq!(m.iter().filter(|&&x| x).count(), 6);
        for i in 0..10 {
            assert_eq!(m[i], scores[i] < 6.0);
        }
        assert!(select_vq_set(&scores, 1.5).is_err());
    }

    #[test]
    fn select_ties_keep_lower_index_raw() {
        let m = select_vq_set(&[1.0; 4], 0.5).unwrap();
        assert_eq!(m, vec![false, false, true, true]);
    }

    #[test]
    fn default_constants() {
        assert_eq!(DEFAULT_CODEBOOK_SIZE, 8192);
        assert_eq!(DEFAULT_DECAY, 0.8);
        assert_eq!(VqConfig::default().ratio, 0.6);
    }

    #[test]
    fn empty_batch_is_identity() {
        let mut cb = Codebook::new(vec![1.0, 2.0, 3.0, 4.0], 2, 0.8);
        let before = cb.clone();
        update_codebook(&mut cb, &[], &[], &[]).unwrap();
        assert_eq!(cb, before);
    }

    #[test]
    fn two_vector_update_matches_expansion() {
        let c = [0.3, -1.2, 2.0];
        let g1 = [1.0, 0.5, -0.25];
        let g2 = [-2.0, 4.0, 0.125];
        let mut cb = Codebook::new(c.to_vec(), 3, 0.8);
        let vectors: Vec<f64> = g1.iter().chain(&g2).copied().collect();
        update_codebook(&mut cb, &vectors, &[0, 0], &[1.0, 3.0]).unwrap();
        for d in 0..3 {
            let expected = 0.8 * c[d] + 0.2 * (1.0 * g1[d] + 3.0 * g2[d]) / 4.0;
            assert!((cb.vectors[d] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weight_code_unchanged() {
        let mut cb = Codebook::new(vec![1.0, 1.0], 1, 0.8);
        update_codebook(&mut cb, &[5.0, 7.0], &[0, 1], &[0.0, 2.0]).unwrap();
        assert_eq!(cb.vectors[0], 1.0);
        assert!((cb.vectors[1] - (0.8 + 0.2 * 7.0)).abs() < 1e-15);
    }

    #[test]
    fn decay_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vectors: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let indices: Vec<u32> = (0..20).map(|i| (i % 2) as u32).collect();
        let scores: Vec<f64> = (0..20).map(|_| rng.random_range(0.1..2.0)).collect();
        let mut keep = Codebook::new(vec![0.5, 0.5, -0.5, -0.5], 2, 1.0);
        update_codebook(&mut keep, &vectors, &indices, &scores).unwrap();
        assert_eq!(keep.vectors, vec![0.5, 0.5, -0.5, -0.5]);

        let mut mean = Codebook::new(vec![0.5, 0.5, -0.5, -0.5], 2, 0.0);
        update_codebook(&mut mean, &vectors, &indices, &[0.7; 20]).unwrap();
        for c in 0..2 {
            for d in 0..2 {
                let m: f64 = (0..20).filter(|i| i % 2 == c).map(|i| vectors[i * 2 + d]).sum::<f64>() / 10.0;
                assert!((mean.vectors[c * 2 + d] - m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn assignment_vector_roundtrip() {
        let a = AssignmentVector::from_membership(&[true, false, true], &[4, 1]).unwrap();
        assert_eq!(a.codes, vec![Some(4), None, Some(1)]);
        assert_eq!(a.members(), vec![0, 2]);
        assert!(a.validate(3, 5).is_ok());
        assert!(a.validate(3, 4).is_err());
        assert!(AssignmentVector::from_membership(&[true], &[]).is_err());
    }
}
