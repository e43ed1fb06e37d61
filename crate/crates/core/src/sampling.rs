//! Deterministic sampling plans and seeded generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::DomainBox;

/// Seeded generator used by every randomized procedure.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` derived from `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn uniform_in(rng: &mut impl Rng, b: &DomainBox) -> Vec<f64> {
    b.lower
        .iter()
        .zip(&b.upper)
        .map(|(l, u)| rng.gen_range(*l..*u))
        .collect()
}

/// Tensor grid over a box.
///
/// `inclusive` grids place nodes on the faces (`lower + i*w/(m-1)`);
/// cell-centred grids sit at `lower + (i + 1/2)*w/m` and never touch a face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub per_axis: usize,
    pub inclusive: bool,
}

impl Grid {
    pub fn inclusive(b: &DomainBox, per_axis: usize) -> Self {
        Grid {
            lower: b.lower.clone(),
            upper: b.upper.clone(),
            per_axis,
            inclusive: true,
        }
    }

    pub fn cell_centered(b: &DomainBox, per_axis: usize) -> Self {
        Grid {
            lower: b.lower.clone(),
            upper: b.upper.clone(),
            per_axis,
            inclusive: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn axis(&self, i: usize) -> Vec<f64> {
        let (l, u, m) = (self.lower[i], self.upper[i], self.per_axis);
        if self.inclusive {
            if m <= 1 {
                return vec![0.5 * (l + u)];
            }
            (0..m)
                .map(|k| {
                    if k + 1 == m {
                        u
                    } else {
                        l + (u - l) * k as f64 / (m - 1) as f64
                    }
                })
                .collect()
        } else {
            (0..m)
                .map(|k| l + (u - l) * (k as f64 + 0.5) / m as f64)
                .collect()
        }
    }

    pub fn len(&self) -> usize {
        self.per_axis.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.per_axis == 0 || self.dim() == 0
    }

    /// Grid nodes in lexicographic order (first coordinate slowest).
    pub fn points(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|i| self.axis(i)).collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        out
    }
}
