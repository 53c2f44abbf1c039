//! Optimal-transport distance between two sets of sampled curves: exact
//! minimum-cost perfect matching (Hungarian algorithm with potentials) on
//! Euclidean curve-to-curve costs, averaged over the matched pairs.

use rand::seq::SliceRandom;

use crate::{seeds, Error, Result};

/// Largest matching size solved exactly; beyond this the cubic algorithm's
/// cost is no longer desk-scale.
pub const OT_MAX_SAMPLES: usize = 256;

#[derive(Debug, Clone, Copy)]
pub struct OtReport {
    /// Mean Euclidean distance over the optimal pairing.
    pub distance: f64,
    /// Number of matched pairs.
    pub pairs: usize,
    /// True when the corresponding side was subsampled to match sizes.
    pub subsampled_a: bool,
    pub subsampled_b: bool,
}

/// Exact minimum-cost assignment on a square cost matrix.
/// Returns (column assigned to each row, total cost).
pub fn hungarian(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = cost.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty cost matrix".into()));
    }
    for row in cost {
        if row.len() != n {
            return Err(Error::InvalidInput("cost matrix must be square".into()));
        }
        if row.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite cost".into()));
        }
    }
    // Shortest-augmenting-path formulation with dual potentials u, v.
    // Columns are 1-based with a virtual column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // row matched to each column, 0 = free
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = assign
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum::<f64>();
    Ok((assign, total))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Seeded choice of `k` indices out of `n`, returned in ascending order so
/// the subsample is canonical.
fn subsample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeds::rng(seeds::mix(seed, &[n as u64, k as u64]));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// OT distance between two sets of curves over a shared grid. Each curve is
/// a point in R^m; unequal set sizes are reconciled by seeded subsampling of
/// the larger side.
pub fn ot_curves(a: &[Vec<f64>], b: &[Vec<f64>], seed: u64) -> Result<OtReport> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: a.len().min(b.len()),
        });
    }
    let m = a[0].len();
    if m == 0 {
        return Err(Error::InvalidInput("empty curves".into()));
    }
    for curve in a.iter().chain(b) {
        if curve.len() != m {
            return Err(Error::InvalidInput(
                "curves must share one grid length".into(),
            ));
        }
        if curve.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite curve value".into()));
        }
    }
    let n = a.len().min(b.len());
    if n > OT_MAX_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "matching size {n} exceeds the exact-solver limit {OT_MAX_SAMPLES}"
        )));
    }
    let pick = |side: &[Vec<f64>], tag: u64| -> (Vec<Vec<f64>>, bool) {
        if side.len() == n {
            (side.to_vec(), false)
        } else {
            let idx = subsample_indices(side.len(), n, seeds::mix(seed, &[tag]));
            (idx.into_iter().map(|i| side[i].clone()).collect(), true)
        }
    };
    let (sa, sub_a) = pick(a, 0);
    let (sb, sub_b) = pick(b, 1);
    let cost: Vec<Vec<f64>> = sa
        .iter()
        .map(|ca| sb.iter().map(|cb| euclidean(ca, cb)).collect())
        .collect();
    let (_, total) = hungarian(&cost)?;
    Ok(OtReport {
        distance: total / n as f64,
        pairs: n,
        subsampled_a: sub_a,
        subsampled_b: sub_b,
    })
}
