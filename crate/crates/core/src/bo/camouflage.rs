//! Adversarial initialization for the shifted-Branin study: pick starting
//! observations whose values are nearly indistinguishable between the
//! canonical and the shifted surface, so the early evidence actively
//! camouflages the displaced well.

use crate::bo::objective::{branin, hidden_well_center, shifted_branin, BRANIN_DOMAIN};
use crate::error::{Error, Result};
use crate::seeds;

/// Strict agreement threshold: a candidate is camouflaged when the shifted
/// and canonical values differ by less than this.
pub const CAMOUFLAGE_TOL_STRICT: f64 = 2.0;
/// Fallback threshold used when too few candidates pass the strict test.
pub const CAMOUFLAGE_TOL_RELAXED: f64 = 2.5;
/// Number of uniform candidate draws screened per initialization.
pub const CAMOUFLAGE_CANDIDATE_BUDGET: usize = 4000;
/// Number of random subsets scored when selecting the initial design.
pub const CAMOUFLAGE_SUBSET_DRAWS: usize = 2000;

/// Picks `n` initial observation sites for the shifted Branin that look like
/// canonical Branin data. Uniform candidates are screened by
/// `|f_shift - f_branin| < tol` (strict 2.0, relaxed to 2.5 when fewer than
/// a quorum survive), then [`CAMOUFLAGE_SUBSET_DRAWS`] random `n`-subsets are
/// scored and the lowest-scoring subset wins. The score rewards small value
/// gaps and preserved within-subset ranking while penalizing proximity to the
/// hidden well and clustering:
///
/// `Score(S) = mean|Δf| + 2·RankMismatch(S) + WellProximity(S) - 0.3·Spread(S)`
///
/// where RankMismatch is the fraction of discordant pairs between shifted and
/// canonical values on `S`, WellProximity is the mean of `exp(-d^2 / 2)` over
/// distances to the hidden-well center, and Spread is the mean pairwise
/// distance. Fails with `InitFailure` when even the relaxed screen retains
/// fewer than `n` candidates.
pub fn camouflaged_init(n: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    camouflaged_init_with(
        n,
        seed,
        CAMOUFLAGE_TOL_STRICT,
        CAMOUFLAGE_TOL_RELAXED,
        CAMOUFLAGE_CANDIDATE_BUDGET,
        CAMOUFLAGE_SUBSET_DRAWS,
    )
}

/// [`camouflaged_init`] with every knob exposed, for stress tests.
pub fn camouflaged_init_with(
    n: usize,
    seed: u64,
    tol_strict: f64,
    tol_relaxed: f64,
    candidate_budget: usize,
    subset_draws: usize,
) -> Result<Vec<[f64; 2]>> {
    if n == 0 {
        return Err(Error::InvalidInput("camouflaged init needs n >= 1".into()));
    }
    if candidate_budget < n {
        return Err(Error::InvalidInput(format!(
            "candidate budget {candidate_budget} smaller than subset size {n}"
        )));
    }

    let mut rng = seeds::rng(seeds::mix(seed, &[0xca30]));
    let mut candidates = Vec::with_capacity(candidate_budget);
    for _ in 0..candidate_budget {
        let x1 = BRANIN_DOMAIN[0].0
            + (BRANIN_DOMAIN[0].1 - BRANIN_DOMAIN[0].0) * rand::Rng::gen::<f64>(&mut rng);
        let x2 = BRANIN_DOMAIN[1].0
            + (BRANIN_DOMAIN[1].1 - BRANIN_DOMAIN[1].0) * rand::Rng::gen::<f64>(&mut rng);
        candidates.push(Screened::new([x1, x2]));
    }

    // Require enough strict survivors that the subset search has real
    // choices; otherwise fall back to the relaxed threshold.
    let quorum = (4 * n).max(24);
    let strict: Vec<&Screened> =
        candidates.iter().filter(|c| c.delta_abs < tol_strict).collect();
    let retained: Vec<&Screened> = if strict.len() >= quorum {
        strict
    } else {
        candidates.iter().filter(|c| c.delta_abs < tol_relaxed).collect()
    };
    if retained.len() < n {
        return Err(Error::InitFailure(format!(
            "only {} of {candidate_budget} candidates are camouflaged within {tol_relaxed}, need {n}",
            retained.len()
        )));
    }

    let well = hidden_well_center();
    let mut subset_rng = seeds::rng(seeds::mix(seed, &[0xca31]));
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut indices: Vec<usize> = (0..retained.len()).collect();
    for _ in 0..subset_draws {
        // Partial Fisher-Yates: the first n entries become the subset.
        for i in 0..n {
            let j = rand::Rng::gen_range(&mut subset_rng, i..indices.len());
            indices.swap(i, j);
        }
        let subset = &indices[..n];
        let score = subset_score(&retained, subset, well);
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, subset.to_vec()));
        }
    }
    let (_, chosen) = best.expect("subset_draws >= 1 always yields a candidate");
    Ok(chosen.iter().map(|&i| retained[i].x).collect())
}

struct Screened {
    x: [f64; 2],
    f_shift: f64,
    f_branin: f64,
    delta_abs: f64,
}

impl Screened {
    fn new(x: [f64; 2]) -> Self {
        let f_shift = shifted_branin(x[0], x[1]);
        let f_branin = branin(x[0], x[1]);
        Screened { x, f_shift, f_branin, delta_abs: (f_shift - f_branin).abs() }
    }
}

fn subset_score(retained: &[&Screened], subset: &[usize], well: [f64; 2]) -> f64 {
    let n = subset.len();
    let mean_gap =
        subset.iter().map(|&i| retained[i].delta_abs).sum::<f64>() / n as f64;
    let proximity = subset
        .iter()
        .map(|&i| {
            let dx = retained[i].x[0] - well[0];
            let dy = retained[i].x[1] - well[1];
            (-(dx * dx + dy * dy) / 2.0).exp()
        })
        .sum::<f64>()
        / n as f64;
    let mut discordant = 0usize;
    let mut pairs = 0usize;
    let mut dist_sum = 0.0;
    for a in 0..n {
        for b in (a + 1)..n {
            let (i, j) = (subset[a], subset[b]);
            let ds = retained[i].f_shift - retained[j].f_shift;
            let db = retained[i].f_branin - retained[j].f_branin;
            if ds * db < 0.0 {
                discordant += 1;
            }
            pairs += 1;
            let dx = retained[i].x[0] - retained[j].x[0];
            let dy = retained[i].x[1] - retained[j].x[1];
            dist_sum += (dx * dx + dy * dy).sqrt();
        }
    }
    let (mismatch, spread) = if pairs == 0 {
        (0.0, 0.0)
    } else {
        (discordant as f64 / pairs as f64, dist_sum / pairs as f64)
    };
    mean_gap + 2.0 * mismatch + proximity - 0.3 * spread
}

/// Fraction of pairs ranked oppositely by two value vectors (0 = identical
/// order, 1 = fully reversed); ties are not counted as disagreements.
pub fn rank_mismatch(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput("rank mismatch needs equal-length inputs".into()));
    }
    if a.len() < 2 {
        return Ok(0.0);
    }
    let mut discordant = 0usize;
    let mut pairs = 0usize;
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            if (a[i] - a[j]) * (b[i] - b[j]) < 0.0 {
                discordant += 1;
            }
            pairs += 1;
        }
    }
    Ok(discordant as f64 / pairs as f64)
}
