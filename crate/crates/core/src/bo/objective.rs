//! Test objectives for the consequence studies: the Branin function in
//! reward form, a warped ("shifted") variant that relocates its wells while
//! presering the value range, and a fixed battery-design library with a
//! hand-shaped score distribution.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Rectangular search domain of the Branin function: x1 in [-5, 10],
/// x2 in [0, 15].
pub const BRANIN_DOMAIN: [(f64, f64); 2] = [(-5.0, 10.0), (0.0, 15.0)];

/// Global minimum value of the Branin function, 5 / (4 pi).
pub const BRANIN_MINIMUM: f64 = 0.397_887_357_729_738_16;

/// The three global minimizers of the Branin function. The squared term
/// vanishes at x2 = b x1^2 - c x1 + r, which is exactly 12.275, 2.275 and
/// 2.475 at x1 = -pi, pi and 3 pi.
pub const BRANIN_MINIMIZERS: [[f64; 2]; 3] =
    [[-PI, 12.275], [PI, 2.275], [3.0 * PI, 2.475]];

/// The Branin function with the standard constants a = 1, b = 5.1/(4 pi^2),
/// c = 5/pi, r = 6, s = 10, t = 1/(8 pi).
pub fn branin(x1: f64, x2: f64) -> f64 {
    let a = 1.0;
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let r = 6.0;
    let s = 10.0;
    let t = 1.0 / (8.0 * PI);
    a * (x2 - b * x1 * x1 + c * x1 - r).powi(2) + s * (1.0 - t) * x1.cos() + s
}

/// Branin in reward form: `BRANIN_MINIMUM - branin(x)`, so larger is better
/// and the optimum is exactly 0.
pub fn branin_reward(x1: f64, x2: f64) -> f64 {
    BRANIN_MINIMUM - branin(x1, x2)
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Endpoint-normalized logistic warp of the unit interval:
/// `(sigma(k (z - b)) - sigma(-k b)) / (sigma(k (1 - b)) - sigma(-k b))`.
/// Strictly increasing with `warp(0) = 0` and `warp(1) = 1` exactly.
pub fn logistic_warp(z: f64, k: f64, b: f64) -> f64 {
    let lo = logistic(-k * b);
    let hi = logistic(k * (1.0 - b));
    (logistic(k * (z - b)) - lo) / (hi - lo)
}

/// Warp parameters for the first coordinate of the shifted Branin.
pub const SHIFT_WARP_X1: (f64, f64) = (7.5, 0.33);
/// Warp parameters for the second coordinate of the shifted Branin.
pub const SHIFT_WARP_X2: (f64, f64) = (5.5, 0.62);

/// Branin composed with smooth monotone warps of each coordinate. The warps
/// fix the domain corners, so the shifted surface agrees with the canonical
/// one at all four corners and attains the same minimum value, but its wells
/// sit at the warp preimages of the canonical minimizers.
pub fn shifted_branin(x1: f64, x2: f64) -> f64 {
    let u = (x1 + 5.0) / 15.0;
    let v = x2 / 15.0;
    let (k1, b1) = SHIFT_WARP_X1;
    let (k2, b2) = SHIFT_WARP_X2;
    let w1 = -5.0 + 15.0 * logistic_warp(u, k1, b1);
    let w2 = 15.0 * logistic_warp(v, k2, b2);
    branin(w1, w2)
}

/// Shifted Branin in reward form (same offset as [`branin_reward`]; the warp
/// is a bijection of the domain, so the attained minimum value is unchanged).
pub fn shifted_branin_reward(x1: f64, x2: f64) -> f64 {
    BRANIN_MINIMUM - shifted_branin(x1, x2)
}

/// Center of the displaced global well of the shifted Branin: the argmin of
/// [`shifted_branin`] on a dense 301x301 grid over the domain. Deterministic;
/// computed once and cached.
pub fn hidden_well_center() -> [f64; 2] {
    static CENTER: OnceLock<[f64; 2]> = OnceLock::new();
    *CENTER.get_or_init(|| {
        let n = 301;
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for i in 0..n {
            let x1 = BRANIN_DOMAIN[0].0
                + (BRANIN_DOMAIN[0].1 - BRANIN_DOMAIN[0].0) * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let x2 = BRANIN_DOMAIN[1].0
                    + (BRANIN_DOMAIN[1].1 - BRANIN_DOMAIN[1].0) * j as f64 / (n - 1) as f64;
                let f = shifted_branin(x1, x2);
                if f < best.0 {
                    best = (f, [x1, x2]);
                }
            }
        }
        best.1
    })
}

/// A continuous 2D objective in reward form on the Branin domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousObjective {
    /// Reward form of the canonical Branin function.
    CanonicalBranin,
    /// Reward form of the warped Branin with displaced wells.
    ShiftedBranin,
}

impl ContinuousObjective {
    /// Reward at a point (larger is better, optimum 0).
    pub fn reward(&self, x: [f64; 2]) -> f64 {
        match self {
            ContinuousObjective::CanonicalBranin => branin_reward(x[0], x[1]),
            ContinuousObjective::ShiftedBranin => shifted_branin_reward(x[0], x[1]),
        }
    }

    /// Search domain, per coordinate.
    pub fn domain(&self) -> [(f64, f64); 2] {
        BRANIN_DOMAIN
    }
}

/// Reference discharge energy (J) of the low-rate protocol used to normalize
/// battery sub-scores.
pub const BATTERY_Q_LOW: f64 = 943.05;
/// Reference discharge energy (J) of the high-rate protocol.
pub const BATTERY_Q_HIGH: f64 = 509.35;
/// Bonus added when a design is strong under both protocols
/// (`s_high >= 1.0` and `s_low >= 0.9`).
pub const BATTERY_BONUS: f64 = 0.25;

/// Combined battery design score: the harmonic mean of the normalized low-
/// and high-rate sub-scores, plus a 0.25 bonus when the design clears both
/// strength thresholds. Returns the score and a flag that is set when both
/// sub-scores are zero (the degenerate case is defined as score 0).
pub fn battery_score(ed_low: f64, ed_high: f64) -> (f64, bool) {
    let s_low = ed_low / BATTERY_Q_LOW;
    let s_high = ed_high / BATTERY_Q_HIGH;
    let denom = s_high + s_low;
    if denom == 0.0 {
        return (0.0, true);
    }
    let harmonic = 2.0 * s_high * s_low / denom;
    let bonus = if s_high >= 1.0 && s_low >= 0.9 { BATTERY_BONUS } else { 0.0 };
    (harmonic + bonus, false)
}

/// One pre-evaluated design in a fixed candidate library.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolCandidate {
    /// Design vector (for the battery pool: positive-electrode thickness in
    /// meters and positive-electrode porosity).
    pub design: Vec<f64>,
    /// Objective value in reward form (larger is better).
    pub value: f64,
    /// Auxiliary named quantities behind the value (sub-scores, raw
    /// simulator outputs) for prompt rendering and reporting.
    pub components: Vec<(String, f64)>,
}

/// A fixed library of pre-evaluated candidates, searched by index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPool {
    /// Candidate designs with their objective values.
    pub candidates: Vec<PoolCandidate>,
    /// Per-coordinate bounds of the design space (used to rescale GP inputs).
    pub bounds: Vec<(f64, f64)>,
    /// Human-readable names of the design coordinates.
    pub design_names: Vec<String>,
}

impl FixedPool {
    /// Wraps a candidate library, rejecting empty pools, non-finite values,
    /// and dimension mismatches between designs and bounds.
    pub fn new(
        candidates: Vec<PoolCandidate>,
        bounds: Vec<(f64, f64)>,
        design_names: Vec<String>,
    ) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::InvalidInput("fixed pool must be non-empty".into()));
        }
        if bounds.len() != design_names.len() {
            return Err(Error::InvalidInput(
                "fixed pool bounds and design names must have equal length".into(),
            ));
        }
        for (i, c) in candidates.iter().enumerate() {
            if c.design.len() != bounds.len() {
                return Err(Error::InvalidInput(format!(
                    "candidate {i} has {} design coordinates, expected {}",
                    c.design.len(),
                    bounds.len()
                )));
            }
            if !c.value.is_finite() || c.design.iter().any(|d| !d.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "candidate {i} has a non-finite design or value"
                )));
            }
        }
        Ok(FixedPool { candidates, bounds, design_names })
    }

    /// Number of candidates in the pool.
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    /// True when the pool holds no candidates (never, for a constructed pool).
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Index of the best candidate (ties broken by lowest index).
    pub fn best_index(&self) -> usize {
        let mut best = 0usize;
        for i in 1..self.candidates.len() {
            if self.candidates[i].value > self.candidates[best].value {
                best = i;
            }
        }
        best
    }

    /// Best objective value in the pool.
    pub fn best_value(&self) -> f64 {
        self.candidates[self.best_index()].value
    }
}

/// Bounds of the battery design space: positive-electrode thickness (m) and
/// positive-electrode porosity.
pub const BATTERY_BOUNDS: [(f64, f64); 2] = [(4.0e-5, 1.5e-4), (0.22, 0.45)];

/// Target score for the best design in the desk-scale battery pool.
pub const BATTERY_POOL_MAX: f64 = 1.2123;

/// Builds the desk-scale battery candidate library: 200 designs whose score
/// distribution is shaped into three bands — exactly 5 designs score at
/// least 0.95 (of which exactly 2 reach 1.0, the best hitting
/// [`BATTERY_POOL_MAX`]), 25 land in [0.50, 0.90], and the remaining 170 sit
/// at or below 0.20. Scores are synthesized by fixing a high-rate sub-score
/// per design and solving the harmonic mean for the low-rate sub-score, so
/// every stored value reproduces exactly under [`battery_score`].
pub fn make_battery_desk_pool(seed: u64) -> Result<FixedPool> {
    let mut rng = seeds::rng(seeds::mix(seed, &[0xba77]));

    // (target score, high-rate sub-score). The top design earns the dual-
    // strength bonus (harmonic mean 0.9623 at s_high = 1.0 puts s_low at
    // 0.9273, above the 0.9 threshold); the runner-up at 1.05 keeps s_high
    // just under 1.0 so the bonus predicate stays false and exactly two
    // designs reach 1.0.
    let mut specs: Vec<(f64, f64)> = vec![
        (BATTERY_POOL_MAX - BATTERY_BONUS, 1.0),
        (1.05, 0.99),
        (0.99, 0.98),
        (0.97, 0.96),
        (0.95, 0.94),
    ];
    for _ in 0..25 {
        let target = uniform(&mut rng, 0.50, 0.90);
        specs.push((target, target * 1.05));
    }
    for _ in 0..170 {
        let target = uniform(&mut rng, 0.02, 0.20);
        specs.push((target, target * 1.05));
    }

    let mut candidates = Vec::with_capacity(specs.len());
    for (harmonic, s_high) in specs {
        // Invert the harmonic mean for the low-rate sub-score:
        // 2 s_h s_l / (s_h + s_l) = H  =>  s_l = H s_h / (2 s_h - H).
        let s_low = harmonic * s_high / (2.0 * s_high - harmonic);
        let ed_low = s_low * BATTERY_Q_LOW;
        let ed_high = s_high * BATTERY_Q_HIGH;
        let (score, flagged) = battery_score(ed_low, ed_high);
        debug_assert!(!flagged);
        let design = vec![
            uniform(&mut rng, BATTERY_BOUNDS[0].0, BATTERY_BOUNDS[0].1),
            uniform(&mut rng, BATTERY_BOUNDS[1].0, BATTERY_BOUNDS[1].1),
        ];
        candidates.push(PoolCandidate {
            design,
            value: score,
            components: vec![
                ("ed_low_j".to_string(), ed_low),
                ("ed_high_j".to_string(), ed_high),
                ("s_low".to_string(), s_low),
                ("s_high".to_string(), s_high),
            ],
        });
    }

    // Shuffle so pool order carries no information about the score bands.
    shuffle(&mut rng, &mut candidates);

    FixedPool::new(
        candidates,
        BATTERY_BOUNDS.to_vec(),
        vec!["l_pos_m".to_string(), "eps_pos".to_string()],
    )
}

fn uniform(rng: &mut impl rand::Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn shuffle<T>(rng: &mut impl rand::Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branin_minimum_matches_analytic_value() {
        // The analytic minimum is 10 t = 5 / (4 pi); the frozen constant is
        // the value `branin` actually evaluates to at the minimizers, a few
        // ulps from the correctly rounded quotient.
        assert!((BRANIN_MINIMUM - 10.0 / (8.0 * PI)).abs() < 1e-15);
        for m in BRANIN_MINIMIZERS {
            assert_eq!(branin(m[0], m[1]), BRANIN_MINIMUM);
            assert_eq!(branin_reward(m[0], m[1]), 0.0);
        }
    }

    #[test]
    fn branin_reward_is_nonpositive_on_a_grid() {
        for i in 0..=60 {
            for j in 0..=60 {
                let x1 = -5.0 + 15.0 * i as f64 / 60.0;
                let x2 = 15.0 * j as f64 / 60.0;
                assert!(branin_reward(x1, x2) <= 1e-12);
            }
        }
    }

    #[test]
    fn logistic_warp_fixes_endpoints_and_increases() {
        for &(k, b) in &[SHIFT_WARP_X1, SHIFT_WARP_X2] {
            assert_eq!(logistic_warp(0.0, k, b), 0.0);
            assert_eq!(logistic_warp(1.0, k, b), 1.0);
            let mut prev = 0.0;
            for i in 1..=100 {
                let z = i as f64 / 100.0;
                let w = logistic_warp(z, k, b);
                assert!(w > prev, "warp not strictly increasing at z={z}");
                prev = w;
            }
        }
    }

    #[test]
    fn logistic_warp_spot_value() {
        // At the inflection point b the numerator is sigma(0) - sigma(-k b).
        let w = logistic_warp(0.33, 7.5, 0.33);
        assert!((w - 0.4612).abs() < 5e-4, "got {w}");
    }

    #[test]
    fn shifted_branin_agrees_at_corners() {
        for x1 in [-5.0, 10.0] {
            for x2 in [0.0, 15.0] {
                assert_eq!(shifted_branin(x1, x2), branin(x1, x2));
            }
        }
    }

    #[test]
    fn shifted_branin_attains_the_same_minimum_on_a_dense_grid() {
        let n = 601;
        let mut min_shift = f64::INFINITY;
        for i in 0..n {
            let x1 = -5.0 + 15.0 * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let x2 = 15.0 * j as f64 / (n - 1) as f64;
                min_shift = min_shift.min(shifted_branin(x1, x2));
            }
        }
        assert!((min_shift - BRANIN_MINIMUM).abs() < 1e-2, "grid min {min_shift}");
    }

    #[test]
    fn hidden_well_center_is_not_a_canonical_minimizer() {
        let c = hidden_well_center();
        assert!(shifted_branin(c[0], c[1]) < BRANIN_MINIMUM + 1e-2);
        for m in BRANIN_MINIMIZERS {
            let d = ((c[0] - m[0]).powi(2) + (c[1] - m[1]).powi(2)).sqrt();
            assert!(d > 0.5, "well center {c:?} too close to canonical minimizer {m:?}");
        }
    }

    #[test]
    fn battery_score_frozen_examples() {
        // Balanced strong design with the dual-strength bonus.
        let (s, f) = battery_score(943.05, 509.35);
        assert!(!f);
        assert!((s - 1.25).abs() < 1e-12);
        // Slightly weak low-rate leg: harmonic mean of 0.9 and 1.0 plus the
        // bonus (0.9 is on the threshold).
        let (s, _) = battery_score(0.9 * 943.05, 509.35);
        assert!((s - (2.0 * 0.9 / 1.9 + 0.25)).abs() < 1e-9);
        assert!((s - 1.1974).abs() < 1e-4);
        // Unbalanced design: strong high-rate, weak low-rate, no bonus.
        let (s, _) = battery_score(0.8 * 943.05, 1.1 * 509.35);
        assert!((s - 2.0 * 1.1 * 0.8 / 1.9).abs() < 1e-9);
        assert!((s - 0.9263).abs() < 1e-4);
        // Degenerate: both sub-scores zero.
        let (s, f) = battery_score(0.0, 0.0);
        assert_eq!(s, 0.0);
        assert!(f);
    }

    #[test]
    fn battery_desk_pool_has_the_required_band_structure() {
        let pool = make_battery_desk_pool(7).unwrap();
        assert_eq!(pool.len(), 200);
        let scores: Vec<f64> = pool.candidates.iter().map(|c| c.value).collect();
        let high = scores.iter().filter(|&&s| s >= 0.95).count();
        let mid = scores.iter().filter(|&&s| (0.50..=0.90).contains(&s)).count();
        let low = scores.iter().filter(|&&s| s <= 0.20).count();
        assert_eq!((high, mid, low), (5, 25, 170));
        let ge_one = scores.iter().filter(|&&s| s >= 1.0).count();
        assert_eq!(ge_one, 2);
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((max - BATTERY_POOL_MAX).abs() < 1e-4, "pool max {max}");
        assert_eq!(pool.best_value(), max);
    }

    #[test]
    fn battery_desk_pool_scores_are_self_consistent() {
        let pool = make_battery_desk_pool(7).unwrap();
        for c in &pool.candidates {
            let ed_low = c.components.iter().find(|(n, _)| n == "ed_low_j").unwrap().1;
            let ed_high = c.components.iter().find(|(n, _)| n == "ed_high_j").unwrap().1;
            let (score, flagged) = battery_score(ed_low, ed_high);
            assert!(!flagged);
            assert!((score - c.value).abs() < 1e-9);
            assert!(BATTERY_BOUNDS[0].0 <= c.design[0] && c.design[0] <= BATTERY_BOUNDS[0].1);
            assert!(BATTERY_BOUNDS[1].0 <= c.design[1] && c.design[1] <= BATTERY_BOUNDS[1].1);
        }
    }

    #[test]
    fn battery_desk_pool_is_seed_deterministic() {
        let a = make_battery_desk_pool(7).unwrap();
        let b = make_battery_desk_pool(7).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = make_battery_desk_pool(8).unwrap();
        assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn fixed_pool_rejects_bad_input() {
        assert!(FixedPool::new(vec![], vec![], vec![]).is_err());
        let bad = PoolCandidate { design: vec![0.5], value: f64::NAN, components: vec![] };
        assert!(FixedPool::new(vec![bad], vec![(0.0, 1.0)], vec!["x".into()]).is_err());
        let wrong_dim = PoolCandidate { design: vec![0.5, 0.5], value: 1.0, components: vec![] };
        assert!(FixedPool::new(vec![wrong_dim], vec![(0.0, 1.0)], vec!["x".into()]).is_err());
    }
}
