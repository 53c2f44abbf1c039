//! Parametric scalar function families used as ground truth: sampling,
//! evaluation, candidate pools, and the shared observation/grid types.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seeds, Error, Result};

/// Two candidate points closer than this in x must agree in y.
pub const REPEATED_LOCATION_TOL: f64 = 1e-9;

/// Default task domain.
pub const DEFAULT_DOMAIN: (f64, f64) = (-5.0, 5.0);

/// Number of locations in the default query grid.
pub const DEFAULT_GRID_POINTS: usize = 41;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Gaussian,
    Logistic,
    Linear,
    Quadratic,
    Sinusoidal,
    Exponential,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 6] = [
        FamilyKind::Gaussian,
        FamilyKind::Logistic,
        FamilyKind::Linear,
        FamilyKind::Quadratic,
        FamilyKind::Sinusoidal,
        FamilyKind::Exponential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Logistic => "logistic",
            FamilyKind::Linear => "linear",
            FamilyKind::Quadratic => "quadratic",
            FamilyKind::Sinusoidal => "sinusoidal",
            FamilyKind::Exponential => "exponential",
        }
    }

    pub fn from_name(name: &str) -> Option<FamilyKind> {
        FamilyKind::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Human-readable description used in structure-aware prompts.
    pub fn description(self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "gaussian (bell-shaped)",
            FamilyKind::Logistic => "logistic (s-shaped)",
            FamilyKind::Linear => "linear",
            FamilyKind::Quadratic => "quadratic (parabolic)",
            FamilyKind::Sinusoidal => "sinusoidal (periodic)",
            FamilyKind::Exponential => "exponential",
        }
    }

    /// Symbolic formula used in structure-aware prompts.
    pub fn formula(self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "y = A * exp(-(x - c)^2 / (2 * w^2))",
            FamilyKind::Logistic => "y = L / (1 + exp(-k * (x - x0)))",
            FamilyKind::Linear => "y = a * x + b",
            FamilyKind::Quadratic => "y = a * x^2 + b * x + c",
            FamilyKind::Sinusoidal => "y = A * sin(f * (x - p)) + b",
            FamilyKind::Exponential => "y = A * exp(r * x) + b",
        }
    }
}

impl std::fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters for one family member. Field-name sets are disjoint across
/// variants, so untagged (de)serialization is unambiguous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Params {
    Gaussian {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    Logistic {
        max_value: f64,
        steepness: f64,
        midpoint: f64,
    },
    Linear {
        slope: f64,
        intercept: f64,
    },
    Quadratic {
        a: f64,
        b: f64,
        c: f64,
    },
    Sinusoidal {
        amplitude: f64,
        frequency: f64,
        phase: f64,
        offset: f64,
    },
    Exponential {
        scale: f64,
        rate: f64,
        shift: f64,
    },
}

impl Params {
    pub fn kind(&self) -> FamilyKind {
        match self {
            Params::Gaussian { .. } => FamilyKind::Gaussian,
            Params::Logistic { .. } => FamilyKind::Logistic,
            Params::Linear { .. } => FamilyKind::Linear,
            Params::Quadratic { .. } => FamilyKind::Quadratic,
            Params::Sinusoidal { .. } => FamilyKind::Sinusoidal,
            Params::Exponential { .. } => FamilyKind::Exponential,
        }
    }

    /// Parameters as ordered (name, value) pairs, for prompt rendering.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        match *self {
            Params::Gaussian {
                amplitude,
                center,
                width,
            } => vec![("A", amplitude), ("c", center), ("w", width)],
            Params::Logistic {
                max_value,
                steepness,
                midpoint,
            } => vec![("L", max_value), ("k", steepness), ("x0", midpoint)],
            Params::Linear { slope, intercept } => vec![("a", slope), ("b", intercept)],
            Params::Quadratic { a, b, c } => vec![("a", a), ("b", b), ("c", c)],
            Params::Sinusoidal {
                amplitude,
                frequency,
                phase,
                offset,
            } => vec![
                ("A", amplitude),
                ("f", frequency),
                ("p", phase),
                ("b", offset),
            ],
            Params::Exponential { scale, rate, shift } => {
                vec![("A", scale), ("r", rate), ("b", shift)]
            }
        }
    }
}

/// One concrete ground-truth function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionInstance {
    pub kind: FamilyKind,
    pub params: Params,
    /// Closed interval the task lives on.
    pub domain: (f64, f64),
}

impl FunctionInstance {
    pub fn new(params: Params, domain: (f64, f64)) -> Result<Self> {
        if !(domain.0.is_finite() && domain.1.is_finite()) || domain.0 >= domain.1 {
            return Err(Error::InvalidInput(format!(
                "domain must be a finite interval, got [{}, {}]",
                domain.0, domain.1
            )));
        }
        Ok(FunctionInstance {
            kind: params.kind(),
            params,
            domain,
        })
    }
}

/// Evaluate an instance at x.
pub fn evaluate(f: &FunctionInstance, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite x: {x}")));
    }
    Ok(match f.params {
        Params::Gaussian {
            amplitude,
            center,
            width,
        } => {
            let d = x - center;
            amplitude * (-d * d / (2.0 * width * width)).exp()
        }
        Params::Logistic {
            max_value,
            steepness,
            midpoint,
        } => max_value / (1.0 + (-steepness * (x - midpoint)).exp()),
        Params::Linear { slope, intercept } => slope * x + intercept,
        Params::Quadratic { a, b, c } => (a * x + b) * x + c,
        Params::Sinusoidal {
            amplitude,
            frequency,
            phase,
            offset,
        } => amplitude * (frequency * (x - phase)).sin() + offset,
        Params::Exponential { scale, rate, shift } => scale * (rate * x).exp() + shift,
    })
}

/// Evaluate an instance over a slice of locations.
pub fn evaluate_many(f: &FunctionInstance, xs: &[f64]) -> Result<Vec<f64>> {
    xs.iter().map(|&x| evaluate(f, x)).collect()
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Uniform magnitude in [zone, hi] with a random sign: keeps the parameter
/// inside [-hi, hi] while excluding the near-degenerate band |v| < zone.
fn signed_excluding(rng: &mut impl Rng, zone: f64, hi: f64) -> f64 {
    let mag = uniform(rng, zone, hi);
    if rng.gen::<bool>() {
        mag
    } else {
        -mag
    }
}

/// Draw an instance of `kind` with parameters in the family's sampling bounds.
/// Deterministic in (kind, seed); the domain is the default task domain.
pub fn sample_instance(kind: FamilyKind, seed: u64) -> FunctionInstance {
    let mut rng = seeds::rng(seeds::mix(seed, &[kind as u64]));
    let params = match kind {
        FamilyKind::Gaussian => Params::Gaussian {
            amplitude: uniform(&mut rng, 0.3, 3.0),
            center: uniform(&mut rng, -3.0, 3.0),
            width: uniform(&mut rng, 0.5, 2.5),
        },
        FamilyKind::Logistic => Params::Logistic {
            max_value: uniform(&mut rng, 0.5, 3.0),
            steepness: uniform(&mut rng, 0.5, 3.0),
            midpoint: uniform(&mut rng, -3.0, 3.0),
        },
        FamilyKind::Linear => Params::Linear {
            slope: uniform(&mut rng, -3.0, 3.0),
            intercept: uniform(&mut rng, -3.0, 3.0),
        },
        FamilyKind::Quadratic => Params::Quadratic {
            a: signed_excluding(&mut rng, 0.05, 1.0),
            b: uniform(&mut rng, -3.0, 3.0),
            c: uniform(&mut rng, -3.0, 3.0),
        },
        FamilyKind::Sinusoidal => Params::Sinusoidal {
            amplitude: uniform(&mut rng, 0.5, 3.0),
            frequency: uniform(&mut rng, 0.3, 1.5),
            phase: uniform(&mut rng, 0.0, std::f64::consts::TAU),
            offset: uniform(&mut rng, -2.0, 2.0),
        },
        FamilyKind::Exponential => Params::Exponential {
            scale: uniform(&mut rng, 0.2, 2.0),
            rate: signed_excluding(&mut rng, 0.05, 0.8),
            shift: uniform(&mut rng, -2.0, 2.0),
        },
    };
    FunctionInstance {
        kind,
        params,
        domain: DEFAULT_DOMAIN,
    }
}

/// A set of (x, y) observations. Duplicate x locations are allowed only when
/// their y values agree to [`REPEATED_LOCATION_TOL`], except in sets built
/// with [`ObservationSet::new_allowing_conflicts`] for deliberately injected
/// contradictory evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    points: Vec<(f64, f64)>,
}

impl ObservationSet {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        for &(x, y) in &points {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite observation ({x}, {y})"
                )));
            }
        }
        for (i, &(xi, yi)) in points.iter().enumerate() {
            for &(xj, yj) in points.iter().skip(i + 1) {
                if (xi - xj).abs() <= REPEATED_LOCATION_TOL && (yi - yj).abs() > REPEATED_LOCATION_TOL
                {
                    return Err(Error::InvalidInput(format!(
                        "conflicting observations at x={xi}: y={yi} vs y={yj}"
                    )));
                }
            }
        }
        Ok(ObservationSet { points })
    }

    /// Like [`ObservationSet::new`] but skipping the repeated-location
    /// consistency check. Sequential conflict orders inject an observation
    /// that contradicts the evidence on purpose, and the contradiction may
    /// land at an already-observed x.
    pub fn new_allowing_conflicts(points: Vec<(f64, f64)>) -> Result<Self> {
        for &(x, y) in &points {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite observation ({x}, {y})"
                )));
            }
        }
        Ok(ObservationSet { points })
    }

    pub fn empty() -> Self {
        ObservationSet { points: Vec::new() }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    /// New set with one more point, re-validated.
    pub fn with_point(&self, x: f64, y: f64) -> Result<Self> {
        let mut pts = self.points.clone();
        pts.push((x, y));
        ObservationSet::new(pts)
    }

    /// True when every point of `self` appears in `other` (bitwise equality,
    /// multiset semantics). Used to validate nested evidence sets.
    pub fn is_subset_of(&self, other: &ObservationSet) -> bool {
        let mut used = vec![false; other.points.len()];
        'outer: for &(x, y) in &self.points {
            for (j, &(ox, oy)) in other.points.iter().enumerate() {
                if !used[j] && ox == x && oy == y {
                    used[j] = true;
                    continue 'outer;
                }
            }
            return false;
        }
        true
    }
}

/// Strictly increasing query locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGrid {
    locations: Vec<f64>,
}

impl QueryGrid {
    pub fn new(locations: Vec<f64>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::InvalidInput("empty query grid".into()));
        }
        if locations.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite grid location".into()));
        }
        // Any ordering is allowed (pointwise queries are independent and may
        // be issued in permuted order); duplicates are not, since results are
        // keyed by location.
        let mut sorted = locations.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("duplicate grid location".into()));
        }
        Ok(QueryGrid { locations })
    }

    /// Uniform grid of `n` points on [a, b], endpoints included.
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("grid needs >= 2 points, got {n}")));
        }
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::InvalidInput(format!("bad grid interval [{a}, {b}]")));
        }
        let step = (b - a) / (n - 1) as f64;
        let mut locations: Vec<f64> = (0..n).map(|j| a + step * j as f64).collect();
        locations[n - 1] = b;
        QueryGrid::new(locations)
    }

    /// The default measurement grid: 41 points on [-5, 5].
    pub fn default_grid() -> Self {
        QueryGrid::uniform(DEFAULT_DOMAIN.0, DEFAULT_DOMAIN.1, DEFAULT_GRID_POINTS)
            .expect("default grid parameters are valid")
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

/// Evaluate `f` on a uniform pool of `t` locations spanning its domain,
/// endpoints included, spacing (b - a) / (t - 1).
pub fn make_candidate_pool(f: &FunctionInstance, t: usize) -> Result<ObservationSet> {
    if t < 2 {
        return Err(Error::InvalidInput(format!("pool needs >= 2 points, got {t}")));
    }
    let grid = QueryGrid::uniform(f.domain.0, f.domain.1, t)?;
    let points = grid
        .locations()
        .iter()
        .map(|&x| evaluate(f, x).map(|y| (x, y)))
        .collect::<Result<Vec<_>>>()?;
    ObservationSet::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_midpoint_is_half_max() {
        let f = FunctionInstance::new(
            Params::Logistic {
                max_value: 2.0,
                steepness: 1.0,
                midpoint: 0.0,
            },
            DEFAULT_DOMAIN,
        )
        .unwrap();
        assert_eq!(evaluate(&f, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn sinusoid_at_own_phase_returns_offset() {
        // amplitude * sin(0) + offset = offset at x = phase, for every draw.
        for seed in 0..50u64 {
            let f = sample_instance(FamilyKind::Sinusoidal, seed);
            let Params::Sinusoidal { phase, offset, .. } = f.params else {
                panic!("wrong params variant");
            };
            let y = evaluate(&f, phase).unwrap();
            assert!(
                (y - offset).abs() < 1e-12,
                "seed {seed}: y={y} offset={offset}"
            );
        }
    }

    #[test]
    fn candidate_pool_is_inclusive_uniform() {
        let f = FunctionInstance::new(
            Params::Linear {
                slope: 1.0,
                intercept: 0.0,
            },
            DEFAULT_DOMAIN,
        )
        .unwrap();
        let pool = make_candidate_pool(&f, 5).unwrap();
        let xs = pool.xs();
        assert_eq!(xs, vec![-5.0, -2.5, 0.0, 2.5, 5.0]);
        for &(x, y) in pool.points() {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn pool_of_one_rejected() {
        let f = sample_instance(FamilyKind::Linear, 0);
        assert!(matches!(
            make_candidate_pool(&f, 1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn evaluate_rejects_non_finite_x() {
        let f = sample_instance(FamilyKind::Gaussian, 0);
        assert!(matches!(
            evaluate(&f, f64::NAN),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            evaluate(&f, f64::INFINITY),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn sampled_params_respect_bounds() {
        for seed in 0..200u64 {
            match sample_instance(FamilyKind::Gaussian, seed).params {
                Params::Gaussian {
                    amplitude,
                    center,
                    width,
                } => {
                    assert!((0.3..=3.0).contains(&amplitude));
                    assert!((-3.0..=3.0).contains(&center));
                    assert!((0.5..=2.5).contains(&width));
                }
                _ => panic!("wrong variant"),
            }
            match sample_instance(FamilyKind::Quadratic, seed).params {
                Params::Quadratic { a, .. } => {
                    assert!(a.abs() >= 0.05 && a.abs() <= 1.0, "a={a}");
                }
                _ => panic!("wrong variant"),
            }
            match sample_instance(FamilyKind::Exponential, seed).params {
                Params::Exponential { rate, .. } => {
                    assert!(rate.abs() >= 0.05 && rate.abs() <= 0.8, "r={rate}");
                }
                _ => panic!("wrong variant"),
            }
            match sample_instance(FamilyKind::Sinusoidal, seed).params {
                Params::Sinusoidal {
                    amplitude,
                    frequency,
                    phase,
                    offset,
                } => {
                    assert!((0.5..=3.0).contains(&amplitude));
                    assert!((0.3..=1.5).contains(&frequency));
                    assert!((0.0..std::f64::consts::TAU).contains(&phase));
                    assert!((-2.0..=2.0).contains(&offset));
                }
                _ => panic!("wrong variant"),
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_instance(FamilyKind::Logistic, 123);
        let b = sample_instance(FamilyKind::Logistic, 123);
        assert_eq!(a, b);
        let c = sample_instance(FamilyKind::Logistic, 124);
        assert_ne!(a, c);
    }

    #[test]
    fn instance_serialization_round_trips() {
        for kind in FamilyKind::ALL {
            let f = sample_instance(kind, 9);
            let text = serde_json::to_string(&f).unwrap();
            let back: FunctionInstance = serde_json::from_str(&text).unwrap();
            assert_eq!(f, back, "{kind} failed to round-trip: {text}");
        }
    }

    #[test]
    fn observation_set_rejects_conflicting_duplicates() {
        assert!(ObservationSet::new(vec![(1.0, 2.0), (1.0, 2.0)]).is_ok());
        assert!(ObservationSet::new(vec![(1.0, 2.0), (1.0, 2.5)]).is_err());
        assert!(ObservationSet::new(vec![(f64::NAN, 0.0)]).is_err());
    }

    #[test]
    fn subset_check_uses_multiset_semantics() {
        let small = ObservationSet::new(vec![(0.0, 1.0)]).unwrap();
        let large = ObservationSet::new(vec![(0.0, 1.0), (2.0, 3.0)]).unwrap();
        assert!(small.is_subset_of(&large));
        assert!(!large.is_subset_of(&small));
    }

    #[test]
    fn default_grid_shape() {
        let g = QueryGrid::default_grid();
        assert_eq!(g.len(), 41);
        assert_eq!(g.locations()[0], -5.0);
        assert_eq!(g.locations()[40], 5.0);
        assert_eq!(g.locations()[20], 0.0);
    }

    #[test]
    fn grid_rejects_duplicates_and_empty_but_allows_any_order() {
        assert!(QueryGrid::new(vec![0.0, 0.0]).is_err());
        assert!(QueryGrid::new(vec![]).is_err());
        assert!(QueryGrid::new(vec![f64::NAN, 0.0]).is_err());
        let permuted = QueryGrid::new(vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(permuted.locations(), &[1.0, -2.0, 0.5]);
    }
}
