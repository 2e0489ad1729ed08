//! Nearest-code search.
//!
//! Distances to every code are first estimated for a block of rows with one
//! matrix product, `|x|² + |c|² − 2 x·c`. Every code whose estimate lies
//! within the estimate's rounding bound of the smallest one is then measured
//! directly, so the chosen code is exactly the one an exhaustive scan of
//! direct distances would pick, including the lowest-index tie rule.

use rayon::prelude::*;

use super::kmeans::squared_distance;

const ROWS_PER_BLOCK: usize = 32;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Nearest {
    pub index: u32,
    /// Exact squared distance to the chosen code.
    pub distance: f64,
    /// Lower bound on the squared distance to every other code.
    pub runner_up: f64,
}

pub(crate) struct CodeTable<'a> {
    codes: &'a [f64],
    dim: usize,
    k: usize,
    norms: Vec<f64>,
    max_norm: f64,
}

impl<'a> CodeTable<'a> {
    pub fn new(codes: &'a [f64], dim: usize) -> Self {
        let norms: Vec<f64> = codes.chunks_exact(dim).map(|c| c.iter().map(|v| v * v).sum()).collect();
        let max_norm = norms.iter().fold(0.0f64, |m, &v| m.max(v)).sqrt();
        Self {
            codes,
            dim,
            k: norms.len(),
            norms,
            max_norm,
        }
    }

    pub fn nearest(&self, rows: &[f64]) -> Vec<Nearest> {
        rows.par_chunks(ROWS_PER_BLOCK * self.dim)
            .flat_map_iter(|block| self.nearest_block(block))
            .collect()
    }

    fn nearest_block(&self, block: &[f64]) -> Vec<Nearest> {
        let (dim, k) = (self.dim, self.k);
        let m = block.len() / dim;
        let mut dots = vec![0.0; m * k];
        // SAFETY: the strides describe `block` as m × dim row-major, the
        // codes as the dim × k transpose of the row-major k × dim table and
        // `dots` as m × k row-major; all three buffers have those sizes.
        unsafe {
            matrixmultiply::dgemm(
                m,
                dim,
                k,
                1.0,
                block.as_ptr(),
                dim as isize,
                1,
                self.codes.as_ptr(),
                1,
                dim as isize,
                0.0,
                dots.as_mut_ptr(),
                k as isize,
                1,
            );
        }
        let unit = f64::EPSILON;
        block
            .chunks_exact(dim)
            .zip(dots.chunks_exact_mut(k))
            .map(|(x, dots)| {
                let xn: f64 = x.iter().map(|v| v * v).sum();
                let xl = xn.sqrt();
                let slack = 4.0 * (dim as f64 + 4.0) * unit * (xn + 2.0 * xl * self.max_norm + self.max_norm * self.max_norm);
                let (mut lowest, mut lowest_j, mut second) = (f64::INFINITY, 0, f64::INFINITY);
                for (j, (&cn, d)) in self.norms.iter().zip(dots.iter_mut()).enumerate() {
                    let v = cn - 2.0 * *d;
                    *d = v;
                    if v < second {
                        if v < lowest {
                            second = lowest;
                            lowest = v;
                            lowest_j = j;
                        } else {
                            second = v;
                        }
                    }
                }
                let cutoff = lowest + 2.0 * slack;
                let mut best = (f64::INFINITY, usize::MAX);
                for (j, &v) in dots.iter().enumerate() {
                    if v <= cutoff {
                        let exact = squared_distance(x, &self.codes[j * dim..(j + 1) * dim]);
                        if exact < best.0 {
                            best = (exact, j);
                        }
                    }
                }
                let runner = if best.1 == lowest_j { second } else { lowest };
                Nearest {
                    index: best.1 as u32,
                    distance: best.0,
                    runner_up: (xn + runner - slack).max(0.0),
                }
            })
            .collect()
    }
}
