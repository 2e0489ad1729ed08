use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::search::CodeTable;
use super::{Codebook, DEFAULT_DECAY};

pub const MAX_LLOYD_ITERATIONS: usize = 25;

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance_bounded(a, b, f64::INFINITY)
}

/// Squared distance, abandoned once it exceeds `bound`. The partial sum only
/// grows, so any return value `> bound` proves the full distance is too.
#[inline]
fn squared_distance_bounded(a: &[f64], b: &[f64], bound: f64) -> f64 {
    let mut acc = 0.0;
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        let d0 = x[0] - y[0];
        let d1 = x[1] - y[1];
        let d2 = x[2] - y[2];
        let d3 = x[3] - y[3];
        acc += d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3;
        if acc > bound {
            return acc;
        }
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        acc += (x - y) * (x - y);
    }
    acc
}

/// Index of the nearest code for every row of `vectors`; ties go to the
/// lowest code index.
pub fn assign(vectors: &[f64], codebook: &Codebook) -> Result<Vec<u32>> {
    if codebook.dim == 0 || !vectors.len().is_multiple_of(codebook.dim) {
        return Err(Error::Shape(format!(
            "{} values are not rows of width {}",
            vectors.len(),
            codebook.dim
        )));
    }
    if codebook.k() == 0 {
        return Err(Error::InvalidArgument("cannot assign to an empty codebook".into()));
    }
    let table = CodeTable::new(&codebook.vectors, codebook.dim);
    Ok(table.nearest(vectors).into_iter().map(|n| n.index).collect())
}

/// Sum of squared distances from each row to its assigned code.
pub fn quantization_sse(vectors: &[f64], codebook: &Codebook, indices: &[u32]) -> f64 {
    vectors
        .chunks_exact(codebook.dim)
        .zip(indices)
        .map(|(v, &k)| squared_distance(v, codebook.code(k as usize)))
        .sum()
}

/// Lloyd iterations with Hamerly's distance bounds: a point is rescanned only
/// when the upper bound on its distance to its own center may exceed the
/// lower bound on its distance to every other center. Stops early once no
/// assignment changes.
fn lloyd(vectors: &[f64], dim: usize, codes: &mut [f64]) {
    let k = codes.len() / dim;
    // Bounds are loosened by a relative margin so rounding never lets a
    // skipped point keep a center that a full scan would replace.
    const SLACK: f64 = 1e-9;
    let init = CodeTable::new(codes, dim).nearest(vectors);
    let mut labels: Vec<u32> = init.iter().map(|n| n.index).collect();
    let mut upper: Vec<f64> = init.iter().map(|n| n.distance.sqrt()).collect();
    let mut lower: Vec<f64> = init.iter().map(|n| n.runner_up.sqrt()).collect();
    drop(init);

    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (v, &l) in vectors.chunks_exact(dim).zip(&labels) {
            let l = l as usize;
            counts[l] += 1;
            for (s, x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(v) {
                *s += x;
            }
        }
        let mut moved = vec![0.0; k];
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                let old = codes[j * dim..(j + 1) * dim].to_vec();
                for (c, s) in codes[j * dim..(j + 1) * dim].iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                    *c = s * inv;
                }
                moved[j] = squared_distance(&old, &codes[j * dim..(j + 1) * dim]).sqrt();
            }
        }
        let (mut top, mut top_j, mut runner) = (0.0, 0, 0.0);
        for (j, &m) in moved.iter().enumerate() {
            if m > top {
                runner = top;
                top = m;
                top_j = j;
            } else if m > runner {
                runner = m;
            }
        }
        let codes_ref: &[f64] = codes;
        let rescan: Vec<usize> = labels
            .par_iter()
            .zip(upper.par_iter_mut())
            .zip(lower.par_iter_mut())
            .zip(vectors.par_chunks_exact(dim))
            .enumerate()
            .filter_map(|(i, (((&a, u), l), v))| {
                let a = a as usize;
                *u = (*u + moved[a]) * (1.0 + SLACK);
                *l = (*l - if a == top_j { runner } else { top }) * (1.0 - SLACK);
                if *u < *l {
                    return None;
                }
                *u = squared_distance(v, &codes_ref[a * dim..(a + 1) * dim]).sqrt() * (1.0 + SLACK);
                (*u >= *l).then_some(i)
            })
            .collect();
        if rescan.is_empty() {
            break;
        }
        let mut rows = Vec::with_capacity(rescan.len() * dim);
        for &i in &rescan {
            rows.extend_from_slice(&vectors[i * dim..(i + 1) * dim]);
        }
        let mut changed = false;
        for (&i, n) in rescan.iter().zip(CodeTable::new(codes, dim).nearest(&rows)) {
            changed |= labels[i] != n.index;
            labels[i] = n.index;
            upper[i] = n.distance.sqrt();
            lower[i] = n.runner_up.sqrt();
        }
        if !changed {
            break;
        }
    }
}

fn distinct_rows(vectors: &[f64], dim: usize, limit: usize) -> Option<Vec<f64>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in vectors.chunks_exact(dim) {
        let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            if seen.len() > limit {
                return None;
            }
            out.extend_from_slice(row);
        }
    }
    Some(out)
}

/// k-means++ seeding followed by at most [`MAX_LLOYD_ITERATIONS`] Lloyd
/// iterations under Euclidean distance.
///
/// When the rows contain at most `k` distinct vectors, each distinct vector
/// becomes its own code (in first-occurrence order) and the codebook holds
/// exactly that many codes.
pub fn kmeans_init(vectors: &[f64], dim: usize, k: usize, seed: u64) -> Result<Codebook> {
    if dim == 0 || !vectors.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!("{} values are not rows of width {dim}", vectors.len())));
    }
    let n = vectors.len() / dim;
    if n == 0 {
        return Err(Error::EmptyMembers);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("codebook size must be >= 1".into()));
    }
    if let Some(distinct) = distinct_rows(vectors, dim, k) {
        return Ok(Codebook::new(distinct, dim, DEFAULT_DECAY));
    }

    let row = |i: usize| &vectors[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codes = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    codes.extend_from_slice(row(first));
    let mut d2: Vec<f64> = vectors.par_chunks_exact(dim).map(|v| squared_distance(v, row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            // Rounding can leave the scan on an already-chosen row.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).expect("total > 0");
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        d2.par_iter_mut().zip(vectors.par_chunks_exact(dim)).for_each(|(d, v)| {
            let nd = squared_distance_bounded(v, &c, *d);
            if nd < *d {
                *d = nd;
            }
        });
        codes.extend_from_slice(&c);
    }

    lloyd(vectors, dim, &mut codes);
    Ok(Codebook::new(codes, dim, DEFAULT_DECAY))
}
