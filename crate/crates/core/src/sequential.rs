//! Sequential-evidence replays: information-ranked reveal orders, synthesized
//! conflict observations, per-step elicitation traces with valley statistics,
//! and a fixed-hyperparameter GP control replayed over the same prefixes.

use serde::{Deserialize, Serialize};

use crate::elicit::{elicit, ElicitOptions, Oracle, PromptSpec, Protocol};
use crate::families::{evaluate, evaluate_many, FunctionInstance, ObservationSet, QueryGrid};
use crate::gp::GpModel;
use crate::metrics::NRMSE_RANGE_FLOOR;
use crate::{seeds, Error, Result};

/// Weight of the grid-wide variance-reduction term in the information score.
pub const INFO_WEIGHT_GLOBAL: f64 = 0.35;
/// Weight of the locally weighted variance-reduction term.
pub const INFO_WEIGHT_LOCAL: f64 = 0.65;
/// Bandwidth of the Gaussian weight centered on the candidate location.
pub const INFO_LOCAL_BANDWIDTH: f64 = 1.5;
/// Scale applied to the synthesized contradiction magnitude.
pub const CONFLICT_LAMBDA: f64 = 3.0;
/// Slack when deciding whether a confidence series is monotone.
pub const TRAJECTORY_SLACK: f64 = 0.02;

/// Lower bound on the contradiction magnitude for a given scale.
pub fn conflict_delta_min(lambda: f64) -> f64 {
    // Evaluated as lambda*35/100 so the default scale 3.0 yields exactly
    // 1.05 (the literal 0.35 is already rounded; multiplying it by 3 lands
    // one ulp low).
    (lambda * 35.0 / 100.0).max(0.8)
}

/// Contradiction magnitude before the lower bound is applied: a mix of the
/// observed spread, the surrogate's residual uncertainty, and the
/// surrogate-vs-truth mismatch at the conflict location.
pub fn conflict_delta(lambda: f64, s_obs: f64, sigma: f64, mismatch: f64) -> f64 {
    lambda * (0.8 * s_obs + 0.6 * sigma + 0.7 * mismatch + 0.25)
}

/// Evidence-order condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    HighInfoFirst,
    LowInfoFirst,
    Random,
    ConflictMiddle,
    ConflictLate,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::HighInfoFirst,
        Condition::LowInfoFirst,
        Condition::Random,
        Condition::ConflictMiddle,
        Condition::ConflictLate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Condition::HighInfoFirst => "high_info_first",
            Condition::LowInfoFirst => "low_info_first",
            Condition::Random => "random",
            Condition::ConflictMiddle => "conflict_middle",
            Condition::ConflictLate => "conflict_late",
        }
    }

    pub fn from_name(name: &str) -> Option<Condition> {
        Condition::ALL.iter().copied().find(|c| c.name() == name)
    }

    pub fn is_conflict(&self) -> bool {
        matches!(self, Condition::ConflictMiddle | Condition::ConflictLate)
    }
}

/// A synthesized contradictory observation and the quantities behind it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConflictPoint {
    /// Location: the grid point where the prefix-fitted surrogate is most
    /// confident.
    pub x: f64,
    /// Injected target, shifted away from the surrogate mean.
    pub y: f64,
    /// Shift sign, +1 or -1.
    pub eta: f64,
    /// Surrogate posterior mean at `x` under the supportive prefix.
    pub mu: f64,
    /// Surrogate posterior sigma at `x` under the supportive prefix.
    pub sigma: f64,
    /// Final shift magnitude |y - mu| after the lower bound.
    pub delta: f64,
    /// True function value at `x` (what an honest observation would read).
    pub truth_y: f64,
}

/// An ordered reveal sequence for one condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RevealOrder {
    pub condition: Condition,
    /// Observations in reveal order, conflict point included when present.
    pub sequence: Vec<(f64, f64)>,
    /// 1-based step at which the conflict point appears.
    pub conflict_index: Option<usize>,
    pub conflict: Option<ConflictPoint>,
}

impl RevealOrder {
    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// The evidence revealed after `t` steps, in reveal order. Prefixes that
    /// include the injected conflict bypass the repeated-location check —
    /// the contradiction is the point.
    pub fn prefix(&self, t: usize) -> Result<ObservationSet> {
        if t > self.sequence.len() {
            return Err(Error::InvalidInput(format!(
                "prefix length {t} exceeds sequence length {}",
                self.sequence.len()
            )));
        }
        let points = self.sequence[..t].to_vec();
        match self.conflict_index {
            Some(tc) if t >= tc => ObservationSet::new_allowing_conflicts(points),
            _ => ObservationSet::new(points),
        }
    }
}

fn fit_points_1d(points: &[(f64, f64)]) -> Result<GpModel> {
    let pts: Vec<(Vec<f64>, f64)> = points.iter().map(|&(x, y)| (vec![x], y)).collect();
    GpModel::fit(&pts)
}

/// Grid-mean sigma reduction from conditioning on a pseudo-observation
/// (x, 0), weighted `INFO_WEIGHT_GLOBAL` for the unweighted mean and
/// `INFO_WEIGHT_LOCAL` for the mean under a Gaussian weight centered at x.
/// The pseudo-target is 0 because, at fixed hyperparameters, the variance
/// reduction depends only on the candidate location.
pub fn info_score(revealed: &ObservationSet, x: f64, grid: &QueryGrid) -> Result<f64> {
    let base = fit_points_1d(revealed.points())?;
    let base_sigma: Vec<f64> = grid
        .locations()
        .iter()
        .map(|&xp| base.posterior_1d(xp).1)
        .collect();
    candidate_score(&base_sigma, revealed.points(), x, grid)
}

fn candidate_score(
    base_sigma: &[f64],
    revealed: &[(f64, f64)],
    x: f64,
    grid: &QueryGrid,
) -> Result<f64> {
    let mut aug = revealed.to_vec();
    aug.push((x, 0.0));
    let model = fit_points_1d(&aug)?;
    let locs = grid.locations();
    let denom = 2.0 * INFO_LOCAL_BANDWIDTH * INFO_LOCAL_BANDWIDTH;
    let mut g_global = 0.0;
    let mut g_local = 0.0;
    for (j, &xp) in locs.iter().enumerate() {
        let reduction = base_sigma[j] - model.posterior_1d(xp).1;
        let w = (-(xp - x) * (xp - x) / denom).exp();
        g_global += reduction;
        g_local += w * reduction;
    }
    let m = locs.len() as f64;
    Ok(INFO_WEIGHT_GLOBAL * g_global / m + INFO_WEIGHT_LOCAL * g_local / m)
}

/// Greedy reveal order by information score, recomputed after each reveal.
/// Ties keep the earliest pool position, so orders are deterministic.
fn greedy_order(pool: &ObservationSet, grid: &QueryGrid, take_max: bool) -> Result<Vec<(f64, f64)>> {
    let mut remaining: Vec<(f64, f64)> = pool.points().to_vec();
    let mut revealed: Vec<(f64, f64)> = Vec::new();
    let mut out = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let base = fit_points_1d(&revealed)?;
        let base_sigma: Vec<f64> = grid
            .locations()
            .iter()
            .map(|&xp| base.posterior_1d(xp).1)
            .collect();
        let mut best = 0usize;
        let mut best_score = f64::NAN;
        for (i, &(x, _)) in remaining.iter().enumerate() {
            let score = candidate_score(&base_sigma, &revealed, x, grid)?;
            let better = if take_max {
                score > best_score
            } else {
                score < best_score
            };
            if i == 0 || better {
                best = i;
                best_score = score;
            }
        }
        let picked = remaining.remove(best);
        revealed.push(picked);
        out.push(picked);
    }
    Ok(out)
}

/// Synthesize the contradictory observation for a supportive prefix: placed
/// where the prefix-fitted surrogate is most confident, shifted off the
/// surrogate mean by at least [`conflict_delta_min`].
pub fn make_conflict_point(
    truth: &FunctionInstance,
    prefix: &ObservationSet,
    grid: &QueryGrid,
    lambda: f64,
    eta: f64,
) -> Result<ConflictPoint> {
    if prefix.is_empty() {
        return Err(Error::InvalidInput(
            "conflict synthesis needs a nonempty prefix".into(),
        ));
    }
    if eta != 1.0 && eta != -1.0 {
        return Err(Error::InvalidInput(format!("eta must be +/-1, got {eta}")));
    }
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::InvalidInput(format!("bad conflict scale {lambda}")));
    }
    let model = GpModel::fit_1d(prefix)?;
    let mut x_c = grid.locations()[0];
    let mut mu_c = 0.0;
    let mut sigma_c = f64::INFINITY;
    for &x in grid.locations() {
        let (mu, sigma) = model.posterior_1d(x);
        if sigma < sigma_c {
            x_c = x;
            mu_c = mu;
            sigma_c = sigma;
        }
    }
    let ys = prefix.ys();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let pop_var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / ys.len() as f64;
    let s_obs = pop_var.sqrt().max(0.2);
    let truth_y = evaluate(truth, x_c)?;
    let delta = conflict_delta(lambda, s_obs, sigma_c, (mu_c - truth_y).abs())
        .max(conflict_delta_min(lambda));
    Ok(ConflictPoint {
        x: x_c,
        y: mu_c + eta * delta,
        eta,
        mu: mu_c,
        sigma: sigma_c,
        delta,
        truth_y,
    })
}

/// Build the reveal order for one condition over a shared candidate pool.
///
/// Non-conflict conditions are permutations of the pool. Conflict conditions
/// keep the first T-1 points of the high-information order and insert the
/// synthesized contradiction at step floor(T/2)+1 (middle) or T-1 (late).
pub fn build_order(
    truth: &FunctionInstance,
    pool: &ObservationSet,
    condition: Condition,
    grid: &QueryGrid,
    lambda: f64,
    seed: u64,
) -> Result<RevealOrder> {
    let t_total = pool.len();
    if t_total == 0 {
        return Err(Error::InvalidInput("empty candidate pool".into()));
    }
    let plain = |sequence| RevealOrder {
        condition,
        sequence,
        conflict_index: None,
        conflict: None,
    };
    match condition {
        Condition::HighInfoFirst => Ok(plain(greedy_order(pool, grid, true)?)),
        Condition::LowInfoFirst => Ok(plain(greedy_order(pool, grid, false)?)),
        Condition::Random => {
            use rand::seq::SliceRandom;
            let mut sequence = pool.points().to_vec();
            sequence.shuffle(&mut seeds::rng(seeds::mix(seed, &[0x51])));
            Ok(plain(sequence))
        }
        Condition::ConflictMiddle | Condition::ConflictLate => {
            if t_total < 4 {
                return Err(Error::InvalidInput(format!(
                    "conflict conditions need a pool of at least 4, got {t_total}"
                )));
            }
            let supportive = greedy_order(pool, grid, true)?;
            let supportive = &supportive[..t_total - 1];
            let t_c = match condition {
                Condition::ConflictMiddle => t_total / 2 + 1,
                _ => t_total - 1,
            };
            let prefix = ObservationSet::new(supportive[..t_c - 1].to_vec())?;
            let eta = if seeds::mix(seed, &[0xe7a]) & 1 == 0 {
                1.0
            } else {
                -1.0
            };
            let conflict = make_conflict_point(truth, &prefix, grid, lambda, eta)?;
            let mut sequence = Vec::with_capacity(t_total);
            sequence.extend_from_slice(&supportive[..t_c - 1]);
            sequence.push((conflict.x, conflict.y));
            sequence.extend_from_slice(&supportive[t_c - 1..]);
            Ok(RevealOrder {
                condition,
                sequence,
                conflict_index: Some(t_c),
                conflict: Some(conflict),
            })
        }
    }
}

/// One step of a sequential trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: usize,
    /// Observation revealed at this step.
    pub x: f64,
    pub y: f64,
    /// Prediction at each grid location (None where the completion was
    /// invalid).
    pub predictions: Vec<Option<f64>>,
    /// 1 - NRMSE against the truth on the grid, over valid locations,
    /// normalized by the truth range on the full grid.
    pub accuracy: f64,
    /// Grid-mean token confidence, when the oracle exposes logprobs.
    pub mean_confidence: Option<f64>,
    /// Surprise of this step's observation under the previous-step GP.
    pub conflict_surprise: f64,
    /// Whether the surprise computation hit the sigma floor.
    pub sigma_floor_hit: bool,
    /// Grid-mean change in the GP max-density log versus the previous step.
    pub info_gain: f64,
}

/// A full per-step trace for one reveal order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequentialTrace {
    pub condition: Condition,
    pub steps: Vec<StepRecord>,
    /// 1-based step of the confidence minimum (first on ties).
    pub t_valley: Option<usize>,
    /// First-step confidence minus the minimum confidence.
    pub valley_depth: Option<f64>,
    /// Step at which elicitation returned an empty belief, if it did; the
    /// trace then holds the completed steps only.
    pub aborted_at_step: Option<usize>,
}

/// First argmin (1-based) and depth of a confidence series.
pub fn valley_stats(confidences: &[f64]) -> Option<(usize, f64)> {
    let first = *confidences.first()?;
    let mut t_valley = 1;
    let mut low = first;
    for (i, &c) in confidences.iter().enumerate().skip(1) {
        if c < low {
            low = c;
            t_valley = i + 1;
        }
    }
    Some((t_valley, first - low))
}

fn finish_trace(
    condition: Condition,
    steps: Vec<StepRecord>,
    aborted_at_step: Option<usize>,
) -> SequentialTrace {
    let confidences: Vec<f64> = steps.iter().filter_map(|s| s.mean_confidence).collect();
    let (t_valley, valley_depth) = match valley_stats(&confidences) {
        // Map the argmin back to the step index when some steps lack
        // confidence (text-only oracles).
        Some((k, depth)) => {
            let step = steps
                .iter()
                .filter(|s| s.mean_confidence.is_some())
                .nth(k - 1)
                .map(|s| s.step);
            (step, Some(depth))
        }
        None => (None, None),
    };
    SequentialTrace {
        condition,
        steps,
        t_valley,
        valley_depth,
        aborted_at_step,
    }
}

/// GP reference stats shared by the elicited trace and the GP replay.
struct GpStepper {
    truth_grid: Vec<f64>,
    prev_model: GpModel,
    prev_density_log: Vec<f64>,
}

impl GpStepper {
    fn new(truth: &FunctionInstance, grid: &QueryGrid) -> Result<Self> {
        let prev_model = fit_points_1d(&[])?;
        let prev_density_log = grid
            .locations()
            .iter()
            .map(|&x| prev_model.max_density_log(&[x]))
            .collect();
        Ok(GpStepper {
            truth_grid: evaluate_many(truth, grid.locations())?,
            prev_model,
            prev_density_log,
        })
    }

    /// Advance to step t (observations sequence[..t]) and return
    /// (surprise of point t under the step t-1 model, sigma-floor flag,
    /// grid-mean density-log gain, step-t model).
    fn advance(
        &mut self,
        sequence: &[(f64, f64)],
        t: usize,
        grid: &QueryGrid,
    ) -> Result<(f64, bool, f64)> {
        let (x_t, y_t) = sequence[t - 1];
        let (surprise, floor_hit) = self.prev_model.predictive_nll(&[x_t], y_t);
        let model = fit_points_1d(&sequence[..t])?;
        let density_log: Vec<f64> = grid
            .locations()
            .iter()
            .map(|&x| model.max_density_log(&[x]))
            .collect();
        let info_gain = density_log
            .iter()
            .zip(&self.prev_density_log)
            .map(|(l1, l0)| l1 - l0)
            .sum::<f64>()
            / density_log.len() as f64;
        self.prev_model = model;
        self.prev_density_log = density_log;
        Ok((surprise, floor_hit, info_gain))
    }

    fn accuracy(&self, predictions: &[Option<f64>]) -> Result<f64> {
        let mut sq = 0.0;
        let mut count = 0usize;
        for (p, t) in predictions.iter().zip(&self.truth_grid) {
            if let Some(p) = p {
                sq += (p - t) * (p - t);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::EmptyBelief);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &t in &self.truth_grid {
            lo = lo.min(t);
            hi = hi.max(t);
        }
        let nrmse = (sq / count as f64).sqrt() / ((hi - lo) + NRMSE_RANGE_FLOOR);
        Ok(1.0 - nrmse)
    }
}

/// Replay a reveal order against an oracle, eliciting a greedy pointwise
/// prediction over the grid after every reveal.
pub fn run_sequential(
    oracle: &dyn Oracle,
    truth: &FunctionInstance,
    order: &RevealOrder,
    grid: &QueryGrid,
    spec: &PromptSpec,
    seed: u64,
) -> Result<SequentialTrace> {
    if spec.protocol != Protocol::Pointwise {
        return Err(Error::InvalidInput(
            "sequential traces use the pointwise protocol".into(),
        ));
    }
    if order.is_empty() {
        return Err(Error::InvalidInput("empty reveal order".into()));
    }
    let mut stepper = GpStepper::new(truth, grid)?;
    let mut steps = Vec::with_capacity(order.len());
    let mut aborted = None;
    for t in 1..=order.len() {
        let (surprise, floor_hit, info_gain) = stepper.advance(&order.sequence, t, grid)?;
        let prefix = order.prefix(t)?;
        let opts = ElicitOptions {
            repeats: 1,
            temperature: 0.0,
            seed: seeds::mix(seed, &[t as u64]),
            max_concurrency: 8,
        };
        let sample = match elicit(oracle, spec, &prefix, grid, Some(truth), &opts) {
            Ok(s) => s,
            Err(Error::EmptyBelief) => {
                aborted = Some(t);
                break;
            }
            Err(e) => return Err(e),
        };
        let predictions = sample.completions[0].values.clone();
        let accuracy = stepper.accuracy(&predictions)?;
        let mean_confidence = match sample.token_confidence() {
            Ok(c) => Some(c.iter().sum::<f64>() / c.len() as f64),
            Err(Error::ProxyUnavailable) | Err(Error::InsufficientSamples { .. }) => None,
            Err(e) => return Err(e),
        };
        let (x, y) = order.sequence[t - 1];
        steps.push(StepRecord {
            step: t,
            x,
            y,
            predictions,
            accuracy,
            mean_confidence,
            conflict_surprise: surprise,
            sigma_floor_hit: floor_hit,
            info_gain,
        });
    }
    Ok(finish_trace(order.condition, steps, aborted))
}

/// Replay the same prefixes with the fixed-hyperparameter GP control:
/// prediction is the posterior mean, confidence is 1 minus the grid-mean
/// sigma clipped to [0, 1].
pub fn gp_replay(
    truth: &FunctionInstance,
    order: &RevealOrder,
    grid: &QueryGrid,
) -> Result<SequentialTrace> {
    if order.is_empty() {
        return Err(Error::InvalidInput("empty reveal order".into()));
    }
    let mut stepper = GpStepper::new(truth, grid)?;
    let mut steps = Vec::with_capacity(order.len());
    for t in 1..=order.len() {
        let (surprise, floor_hit, info_gain) = stepper.advance(&order.sequence, t, grid)?;
        let mut mean_sigma = 0.0;
        let predictions: Vec<Option<f64>> = grid
            .locations()
            .iter()
            .map(|&x| {
                let (mu, sigma) = stepper.prev_model.posterior_1d(x);
                mean_sigma += sigma;
                Some(mu)
            })
            .collect();
        mean_sigma /= grid.len() as f64;
        let accuracy = stepper.accuracy(&predictions)?;
        let (x, y) = order.sequence[t - 1];
        steps.push(StepRecord {
            step: t,
            x,
            y,
            predictions,
            accuracy,
            mean_confidence: Some((1.0 - mean_sigma).clamp(0.0, 1.0)),
            conflict_surprise: surprise,
            sigma_floor_hit: floor_hit,
            info_gain,
        });
    }
    Ok(finish_trace(order.condition, steps, None))
}

/// Coarse descriptive shape of a confidence trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajectoryClass {
    /// Non-decreasing within [`TRAJECTORY_SLACK`].
    MonotoneUp,
    /// Dips to an interior minimum without a preceding peak.
    UShape,
    /// Rises to an interior peak before dipping.
    InvertedUThenUp,
}

/// Classify a confidence series. Classes are checked in priority order:
/// monotone first, then peak-before-valley, then the plain dip.
pub fn classify_trajectory(confidences: &[f64]) -> Result<TrajectoryClass> {
    if confidences.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "trajectory needs >= 3 points, got {}",
            confidences.len()
        )));
    }
    if confidences.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("non-finite confidence".into()));
    }
    if confidences
        .windows(2)
        .all(|w| w[1] >= w[0] - TRAJECTORY_SLACK)
    {
        return Ok(TrajectoryClass::MonotoneUp);
    }
    let (t_valley, _) = valley_stats(confidences).expect("nonempty");
    let m = t_valley - 1;
    let peak_before = (1..m).any(|j| confidences[j] > confidences[0] + TRAJECTORY_SLACK);
    if peak_before {
        Ok(TrajectoryClass::InvertedUThenUp)
    } else {
        Ok(TrajectoryClass::UShape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elicit::{EchoOracle, GpBeliefOracle, Style, Structure};
    use crate::families::{make_candidate_pool, sample_instance, FamilyKind, DEFAULT_DOMAIN};

    fn grid() -> QueryGrid {
        QueryGrid::default_grid()
    }

    fn neutral_spec() -> PromptSpec {
        PromptSpec::new(Protocol::Pointwise, Style::Neutral, Structure::Unknown)
    }

    #[test]
    fn delta_min_at_default_scale() {
        assert_eq!(conflict_delta_min(CONFLICT_LAMBDA), 1.05);
        assert_eq!(conflict_delta_min(1.0), 0.8);
    }

    #[test]
    fn conflict_delta_matches_hand_arithmetic() {
        // lambda 3, s_obs 0.2 (constant prefix), sigma 0.01, no mismatch:
        // 3 * (0.16 + 0.006 + 0 + 0.25) = 1.248.
        let d = conflict_delta(3.0, 0.2, 0.01, 0.0);
        assert!((d - 1.248).abs() < 1e-12, "delta {d}");
    }

    #[test]
    fn info_score_prefers_center_over_edge_when_nothing_revealed() {
        let g = grid();
        let empty = ObservationSet::empty();
        let center = info_score(&empty, 0.0, &g).unwrap();
        let edge = info_score(&empty, -5.0, &g).unwrap();
        assert!(
            center > edge,
            "center {center} should beat edge {edge}"
        );
    }

    #[test]
    fn info_score_near_zero_at_revealed_location() {
        let g = grid();
        let revealed = ObservationSet::new(vec![(0.0, 1.0), (2.0, -1.0)]).unwrap();
        let dup = info_score(&revealed, 0.0, &g).unwrap();
        assert!(dup.abs() <= 1e-3, "duplicate score {dup}");
        let fresh = info_score(&revealed, -4.0, &g).unwrap();
        assert!(fresh > dup + 1e-3);
    }

    #[test]
    fn non_conflict_orders_are_permutations_of_the_pool() {
        let truth = sample_instance(FamilyKind::Quadratic, 3);
        let pool = make_candidate_pool(&truth, 12).unwrap();
        let g = grid();
        let mut reference: Vec<(u64, u64)> = pool
            .points()
            .iter()
            .map(|&(x, y)| (x.to_bits(), y.to_bits()))
            .collect();
        reference.sort_unstable();
        for condition in [
            Condition::HighInfoFirst,
            Condition::LowInfoFirst,
            Condition::Random,
        ] {
            let order = build_order(&truth, &pool, condition, &g, CONFLICT_LAMBDA, 5).unwrap();
            assert_eq!(order.len(), 12);
            assert!(order.conflict_index.is_none());
            let mut got: Vec<(u64, u64)> = order
                .sequence
                .iter()
                .map(|&(x, y)| (x.to_bits(), y.to_bits()))
                .collect();
            got.sort_unstable();
            assert_eq!(got, reference, "{}", condition.name());
        }
    }

    #[test]
    fn random_order_is_seed_deterministic() {
        let truth = sample_instance(FamilyKind::Linear, 1);
        let pool = make_candidate_pool(&truth, 10).unwrap();
        let g = grid();
        let a = build_order(&truth, &pool, Condition::Random, &g, CONFLICT_LAMBDA, 9).unwrap();
        let b = build_order(&truth, &pool, Condition::Random, &g, CONFLICT_LAMBDA, 9).unwrap();
        let c = build_order(&truth, &pool, Condition::Random, &g, CONFLICT_LAMBDA, 10).unwrap();
        assert_eq!(a.sequence, b.sequence);
        assert_ne!(a.sequence, c.sequence);
    }

    #[test]
    fn conflict_orders_insert_at_the_stated_step() {
        let truth = sample_instance(FamilyKind::Gaussian, 2);
        let pool = make_candidate_pool(&truth, 20).unwrap();
        let g = grid();
        for (condition, expected_tc) in [
            (Condition::ConflictMiddle, 11),
            (Condition::ConflictLate, 19),
        ] {
            let order = build_order(&truth, &pool, condition, &g, CONFLICT_LAMBDA, 4).unwrap();
            assert_eq!(order.len(), 20);
            assert_eq!(order.conflict_index, Some(expected_tc));
            let conflict = order.conflict.unwrap();
            let injected = order.sequence[expected_tc - 1];
            assert_eq!(injected, (conflict.x, conflict.y));
            // The injected target contradicts both the surrogate and the
            // truth at its location.
            assert!((conflict.y - conflict.mu).abs() >= conflict_delta_min(CONFLICT_LAMBDA));
            assert!(conflict.y != conflict.truth_y);
            // Everything else comes from the pool.
            for (i, p) in order.sequence.iter().enumerate() {
                if i + 1 != expected_tc {
                    assert!(pool.points().contains(p), "step {} not from pool", i + 1);
                }
            }
        }
    }

    #[test]
    fn conflict_needs_at_least_four_points() {
        let truth = sample_instance(FamilyKind::Linear, 6);
        let pool = make_candidate_pool(&truth, 3).unwrap();
        let r = build_order(
            &truth,
            &pool,
            Condition::ConflictMiddle,
            &grid(),
            CONFLICT_LAMBDA,
            0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn conflict_magnitude_lower_bound_holds_across_seeds() {
        let g = grid();
        for seed in 0..10u64 {
            let kind = FamilyKind::ALL[seed as usize % FamilyKind::ALL.len()];
            let truth = sample_instance(kind, seed);
            let pool = make_candidate_pool(&truth, 8).unwrap();
            let prefix = ObservationSet::new(pool.points()[..4].to_vec()).unwrap();
            let eta = if seed % 2 == 0 { 1.0 } else { -1.0 };
            let c = make_conflict_point(&truth, &prefix, &g, CONFLICT_LAMBDA, eta).unwrap();
            assert!(
                (c.y - c.mu).abs() >= conflict_delta_min(CONFLICT_LAMBDA) - 1e-12,
                "seed {seed}: shift {}",
                (c.y - c.mu).abs()
            );
        }
    }

    #[test]
    fn echo_trace_is_flat_and_valleyless() {
        let truth = sample_instance(FamilyKind::Linear, 0);
        let pool = make_candidate_pool(&truth, 5).unwrap();
        let g = QueryGrid::uniform(DEFAULT_DOMAIN.0, DEFAULT_DOMAIN.1, 9).unwrap();
        let order = build_order(&truth, &pool, Condition::Random, &g, CONFLICT_LAMBDA, 0).unwrap();
        let oracle = EchoOracle::exact(truth.clone()).with_nll(0.0);
        let trace = run_sequential(&oracle, &truth, &order, &g, &neutral_spec(), 0).unwrap();
        assert_eq!(trace.steps.len(), 5);
        assert!(trace.aborted_at_step.is_none());
        for s in &trace.steps {
            assert!((s.accuracy - 1.0).abs() < 1e-12, "step {} acc {}", s.step, s.accuracy);
            assert_eq!(s.mean_confidence, Some(1.0));
        }
        assert_eq!(trace.t_valley, Some(1));
        assert_eq!(trace.valley_depth, Some(0.0));
    }

    #[test]
    fn valley_stats_find_first_minimum() {
        assert_eq!(valley_stats(&[1.0, 0.4, 0.8]), Some((2, 0.6)));
        assert_eq!(valley_stats(&[0.5, 0.5, 0.5]), Some((1, 0.0)));
        assert_eq!(valley_stats(&[]), None);
    }

    #[test]
    fn trajectory_classes_match_reference_shapes() {
        assert_eq!(
            classify_trajectory(&[0.2, 0.5, 0.9]).unwrap(),
            TrajectoryClass::MonotoneUp
        );
        assert_eq!(
            classify_trajectory(&[0.9, 0.3, 0.8]).unwrap(),
            TrajectoryClass::UShape
        );
        assert_eq!(
            classify_trajectory(&[0.5, 0.8, 0.3, 0.9]).unwrap(),
            TrajectoryClass::InvertedUThenUp
        );
        // Flat-with-jitter stays monotone under the slack.
        assert_eq!(
            classify_trajectory(&[0.5, 0.49, 0.5, 0.495]).unwrap(),
            TrajectoryClass::MonotoneUp
        );
        assert!(classify_trajectory(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn gp_replay_confidence_monotone_for_non_conflict_orders() {
        let g = grid();
        for seed in 0..4u64 {
            let kind = FamilyKind::ALL[seed as usize % FamilyKind::ALL.len()];
            let truth = sample_instance(kind, seed);
            let pool = make_candidate_pool(&truth, 10).unwrap();
            for condition in [
                Condition::HighInfoFirst,
                Condition::LowInfoFirst,
                Condition::Random,
            ] {
                let order =
                    build_order(&truth, &pool, condition, &g, CONFLICT_LAMBDA, seed).unwrap();
                let trace = gp_replay(&truth, &order, &g).unwrap();
                let conf: Vec<f64> = trace
                    .steps
                    .iter()
                    .map(|s| s.mean_confidence.unwrap())
                    .collect();
                for w in conf.windows(2) {
                    assert!(
                        w[1] >= w[0] - 1e-9,
                        "{} seed {seed}: confidence dropped {w:?}",
                        condition.name()
                    );
                }
            }
        }
    }

    #[test]
    fn conflict_step_out_surprises_the_supportive_trend_before_it() {
        // The injected point is maximally surprising relative to the trend
        // revealed before it. Steps after the injection are evaluated under
        // a model that already swallowed the contradiction, so they can
        // legitimately inherit elevated surprise and are not compared.
        let g = grid();
        for (i, kind) in FamilyKind::ALL.into_iter().enumerate() {
            let seed = i as u64;
            let truth = sample_instance(kind, seed);
            let pool = make_candidate_pool(&truth, 12).unwrap();
            let order = build_order(
                &truth,
                &pool,
                Condition::ConflictMiddle,
                &g,
                CONFLICT_LAMBDA,
                seed,
            )
            .unwrap();
            let trace = gp_replay(&truth, &order, &g).unwrap();
            let tc = order.conflict_index.unwrap();
            let at_conflict = trace.steps[tc - 1].conflict_surprise;
            for s in trace.steps.iter().filter(|s| s.step < tc) {
                assert!(
                    at_conflict > s.conflict_surprise,
                    "{kind:?} seed {seed}: step {} surprise {} >= conflict {}",
                    s.step,
                    s.conflict_surprise,
                    at_conflict
                );
            }
        }
    }

    #[test]
    fn gp_replay_info_gain_is_nonnegative() {
        let truth = sample_instance(FamilyKind::Sinusoidal, 7);
        let pool = make_candidate_pool(&truth, 10).unwrap();
        let g = grid();
        let order =
            build_order(&truth, &pool, Condition::Random, &g, CONFLICT_LAMBDA, 3).unwrap();
        let trace = gp_replay(&truth, &order, &g).unwrap();
        for s in &trace.steps {
            assert!(s.info_gain >= -1e-9, "step {} gain {}", s.step, s.info_gain);
        }
    }

    #[test]
    fn high_info_first_shrinks_gp_sigma_faster_than_low() {
        // One-instance check; the acceptance suite runs the 20-seed version.
        let g = grid();
        let truth = sample_instance(FamilyKind::Quadratic, 11);
        let pool = make_candidate_pool(&truth, 20).unwrap();
        let half = 10;
        let mid_sigma = |condition| {
            let order = build_order(&truth, &pool, condition, &g, CONFLICT_LAMBDA, 11).unwrap();
            let model = fit_points_1d(&order.sequence[..half]).unwrap();
            g.locations()
                .iter()
                .map(|&x| model.posterior_1d(x).1)
                .sum::<f64>()
                / g.len() as f64
        };
        let high = mid_sigma(Condition::HighInfoFirst);
        let low = mid_sigma(Condition::LowInfoFirst);
        assert!(high < low, "high {high} vs low {low}");
    }

    #[test]
    fn sequential_trace_is_deterministic_with_gp_oracle() {
        let truth = sample_instance(FamilyKind::Gaussian, 5);
        let pool = make_candidate_pool(&truth, 6).unwrap();
        let g = QueryGrid::uniform(DEFAULT_DOMAIN.0, DEFAULT_DOMAIN.1, 11).unwrap();
        let order =
            build_order(&truth, &pool, Condition::HighInfoFirst, &g, CONFLICT_LAMBDA, 2).unwrap();
        let oracle = GpBeliefOracle::default();
        let run = || {
            let t = run_sequential(&oracle, &truth, &order, &g, &neutral_spec(), 8).unwrap();
            serde_json::to_string(&t).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn joint_protocol_is_rejected() {
        let truth = sample_instance(FamilyKind::Linear, 0);
        let pool = make_candidate_pool(&truth, 4).unwrap();
        let g = grid();
        let order =
            build_order(&truth, &pool, Condition::Random, &g, CONFLICT_LAMBDA, 0).unwrap();
        let spec = PromptSpec::new(Protocol::Joint, Style::Neutral, Structure::Unknown);
        let oracle = EchoOracle::exact(truth.clone());
        assert!(run_sequential(&oracle, &truth, &order, &g, &spec, 0).is_err());
    }

    #[test]
    fn conflict_prefixes_tolerate_repeated_locations() {
        // An injected conflict may land exactly on an observed x; the prefix
        // construction must not reject the contradictory pair.
        let order = RevealOrder {
            condition: Condition::ConflictMiddle,
            sequence: vec![(0.0, 1.0), (1.0, 2.0), (0.0, 5.0), (2.0, 3.0)],
            conflict_index: Some(3),
            conflict: None,
        };
        assert_eq!(order.prefix(2).unwrap().len(), 2);
        assert_eq!(order.prefix(4).unwrap().len(), 4);
    }
}
