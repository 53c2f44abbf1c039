//! Consequence studies: batched optimization on continuous 2D surfaces and
//! fixed design libraries, with the candidate-scoring surrogate drawn either
//! from a GP or from an oracle's stated beliefs, so that miscalibrated
//! uncertainty shows up as regret rather than as an abstract score.

pub mod camouflage;
pub mod objective;
pub mod prompt2d;

pub use camouflage::{
    camouflaged_init, rank_mismatch, CAMOUFLAGE_TOL_RELAXED, CAMOUFLAGE_TOL_STRICT,
};
pub use objective::{
    battery_score, branin, branin_reward, hidden_well_center, logistic_warp,
    make_battery_desk_pool, shifted_branin, shifted_branin_reward, ContinuousObjective, FixedPool,
    PoolCandidate, BRANIN_DOMAIN, BRANIN_MINIMIZERS, BRANIN_MINIMUM,
};
pub use prompt2d::{
    parse_design_task, parse_prompt_task_2d, render_design_prompt, render_prompt_2d,
    GpDesignOracle, GpSurfaceOracle, Query2d, SurfaceEchoOracle,
};

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::elicit::oracle::{complete_with_retry, Oracle, OracleRequest};
use crate::elicit::parse::{joint_nlls, parse_joint, parse_pointwise, pointwise_nll};
use crate::elicit::prompt::{Protocol, Style};
use crate::gp::GpModel;
use crate::metrics::spearman;
use crate::{seeds, Error, Result};

/// Exploration weight of the GP upper-confidence score, `mu + beta * sigma`.
pub const BO_BETA: f64 = 3.0;
/// Exploration weight applied to the token-NLL width in the belief-based
/// upper-confidence score, `mu + lambda * nll`.
pub const BO_LAMBDA: f64 = 3.0;
/// Floor applied to the token NLL when it stands in for a predictive width.
pub const BO_NLL_FLOOR: f64 = 1e-6;
/// Below this width the expected-improvement integrand is treated as a point
/// mass and the score degenerates to `max(mu - y_best, 0)`.
pub const EI_SIGMA_TINY: f64 = 1e-12;

/// Upper-confidence score: predicted value plus a weighted width.
pub fn ucb(mu: f64, width: f64, weight: f64) -> f64 {
    mu + weight * width
}

/// Expected improvement of a Gaussian belief `N(mu, sigma^2)` over the
/// incumbent `y_best`: `(mu - y_best) Phi(z) + sigma phi(z)` with
/// `z = (mu - y_best) / sigma`. Returns the score and a flag that is set
/// when `sigma` was too small to integrate and the degenerate point-mass
/// value `max(mu - y_best, 0)` was used instead.
pub fn expected_improvement(mu: f64, sigma: f64, y_best: f64) -> (f64, bool) {
    let gap = mu - y_best;
    if sigma < EI_SIGMA_TINY {
        return (gap.max(0.0), true);
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal is valid");
    let z = gap / sigma;
    let ei = gap * normal.cdf(z) + sigma * normal.pdf(z);
    (ei.max(0.0), false)
}

/// Candidate-scoring rule. The `gp_*` rules fit a GP to the observations so
/// far; the `llm_*` rules ask the oracle for a point belief per candidate
/// and use the numeric-token NLL as the width; `random` ignores beliefs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acquisition {
    GpUcb,
    GpEi,
    LlmUcb,
    LlmEi,
    Random,
}

impl Acquisition {
    pub const ALL: [Acquisition; 5] = [
        Acquisition::GpUcb,
        Acquisition::GpEi,
        Acquisition::LlmUcb,
        Acquisition::LlmEi,
        Acquisition::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Acquisition::GpUcb => "gp_ucb",
            Acquisition::GpEi => "gp_ei",
            Acquisition::LlmUcb => "llm_ucb",
            Acquisition::LlmEi => "llm_ei",
            Acquisition::Random => "random",
        }
    }

    pub fn from_name(name: &str) -> Option<Acquisition> {
        Acquisition::ALL.into_iter().find(|a| a.name() == name)
    }

    /// True for the rules that score candidates through an oracle.
    pub fn needs_oracle(&self) -> bool {
        matches!(self, Acquisition::LlmUcb | Acquisition::LlmEi)
    }
}

/// Configuration of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub acquisition: Acquisition,
    /// Observations taken before the first scored step.
    pub n_init: usize,
    /// Scored steps after initialization.
    pub n_steps: usize,
    /// Fresh candidates drawn per step (continuous objectives only; fixed
    /// pools score every remaining candidate).
    pub pool_size: usize,
    /// Candidates taken per step.
    pub batch: usize,
    /// GP upper-confidence exploration weight.
    pub beta: f64,
    /// Belief-width exploration weight for `llm_ucb`.
    pub lambda: f64,
    pub seed: u64,
    /// Prompt protocol for oracle-backed rules.
    pub protocol: Protocol,
    /// Prompt style for oracle-backed rules.
    pub style: Style,
    /// Decimal places in rendered prompts.
    pub precision: usize,
}

impl BoConfig {
    /// Continuous-surface defaults: 5 initial observations, 10 steps of 3
    /// picks from a fresh 80-candidate pool.
    pub fn branin(acquisition: Acquisition, seed: u64) -> Self {
        BoConfig {
            acquisition,
            n_init: 5,
            n_steps: 10,
            pool_size: 80,
            batch: 3,
            beta: BO_BETA,
            lambda: BO_LAMBDA,
            seed,
            protocol: Protocol::Pointwise,
            style: Style::Neutral,
            precision: 2,
        }
    }

    /// Fixed-library defaults: 3 initial observations, up to 20 single-pick
    /// steps over all remaining candidates.
    pub fn fixed_pool(acquisition: Acquisition, seed: u64) -> Self {
        BoConfig {
            acquisition,
            n_init: 3,
            n_steps: 20,
            pool_size: 0,
            batch: 1,
            beta: BO_BETA,
            lambda: BO_LAMBDA,
            seed,
            protocol: Protocol::Pointwise,
            style: Style::Neutral,
            precision: 4,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_init == 0 || self.n_steps == 0 || self.batch == 0 {
            return Err(Error::InvalidInput(
                "n_init, n_steps, and batch must all be at least 1".into(),
            ));
        }
        if !(self.beta.is_finite() && self.lambda.is_finite()) {
            return Err(Error::InvalidInput("beta and lambda must be finite".into()));
        }
        Ok(())
    }
}

/// What is being optimized.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum BoObjective {
    /// A continuous 2D reward surface; every step draws fresh candidates.
    Continuous(ContinuousObjective),
    /// A fixed pre-evaluated library; candidates are consumed.
    Pool(FixedPool),
}

impl BoObjective {
    /// Best attainable value: 0 for the reward-form surfaces, the pool
    /// maximum for a fixed library.
    pub fn optimum(&self) -> f64 {
        match self {
            BoObjective::Continuous(_) => 0.0,
            BoObjective::Pool(pool) => pool.best_value(),
        }
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        match self {
            BoObjective::Continuous(obj) => obj.domain().to_vec(),
            BoObjective::Pool(pool) => pool.bounds.clone(),
        }
    }
}

/// The seed-determined parts of a run that must be identical across scoring
/// rules: initial observation sites and the per-step candidate pools. Built
/// once per (objective, seed) and passed to every method's [`run_bo`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SharedEnv {
    Continuous {
        init: Vec<[f64; 2]>,
        step_pools: Vec<Vec<[f64; 2]>>,
    },
    Pool {
        init: Vec<usize>,
    },
}

/// Builds the shared environment for one seed. Continuous canonical surfaces
/// draw uniform initial sites; the shifted surface uses the camouflaged
/// initialization. Fixed pools draw distinct initial indices. Only the
/// objective, the counts, and the seed enter — never the scoring rule.
pub fn shared_env(
    objective: &BoObjective,
    n_init: usize,
    n_steps: usize,
    pool_size: usize,
    seed: u64,
) -> Result<SharedEnv> {
    if n_init == 0 {
        return Err(Error::InvalidInput("n_init must be at least 1".into()));
    }
    match objective {
        BoObjective::Continuous(obj) => {
            if pool_size == 0 {
                return Err(Error::InvalidInput(
                    "continuous objectives need pool_size >= 1".into(),
                ));
            }
            let domain = obj.domain();
            let init = match obj {
                ContinuousObjective::CanonicalBranin => {
                    let mut rng = seeds::rng(seeds::mix(seed, &[0xb0, 0]));
                    (0..n_init).map(|_| uniform_point(&mut rng, domain)).collect()
                }
                ContinuousObjective::ShiftedBranin => camouflaged_init(n_init, seed)?,
            };
            let step_pools = (1..=n_steps)
                .map(|t| {
                    let mut rng = seeds::rng(seeds::mix(seed, &[0xb0, t as u64]));
                    (0..pool_size).map(|_| uniform_point(&mut rng, domain)).collect()
                })
                .collect();
            Ok(SharedEnv::Continuous { init, step_pools })
        }
        BoObjective::Pool(pool) => {
            if n_init > pool.len() {
                return Err(Error::InvalidInput(format!(
                    "n_init {n_init} exceeds pool size {}",
                    pool.len()
                )));
            }
            let mut rng = seeds::rng(seeds::mix(seed, &[0xb0]));
            let mut indices: Vec<usize> = (0..pool.len()).collect();
            for i in 0..n_init {
                let j = rand::Rng::gen_range(&mut rng, i..indices.len());
                indices.swap(i, j);
            }
            indices.truncate(n_init);
            Ok(SharedEnv::Pool { init: indices })
        }
    }
}

fn uniform_point(rng: &mut impl rand::Rng, domain: [(f64, f64); 2]) -> [f64; 2] {
    [
        domain[0].0 + (domain[0].1 - domain[0].0) * rng.gen::<f64>(),
        domain[1].0 + (domain[1].1 - domain[1].0) * rng.gen::<f64>(),
    ]
}

/// One observed point in a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedPoint {
    pub x: Vec<f64>,
    pub value: f64,
    /// Library index for fixed-pool runs.
    pub pool_index: Option<usize>,
}

/// One scored step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoStep {
    /// 1-based step number.
    pub step: usize,
    pub selected: Vec<SelectedPoint>,
    /// Incumbent after this step (non-decreasing across steps).
    pub best_so_far: f64,
    /// Simple regret `optimum - best_so_far` (non-increasing).
    pub regret: f64,
    /// No candidate had a usable score; selection fell back to random.
    pub failed: bool,
    /// Step after early termination; nothing was selected.
    pub padded: bool,
    /// Expected improvement hit its degenerate point-mass branch for at
    /// least one candidate.
    pub ei_degenerate: bool,
    /// An oracle-backed rule was missing token log-probabilities for at
    /// least one scored candidate.
    pub proxy_missing: bool,
    /// Rank correlation between surrogate predictions and true candidate
    /// values over this step's pool (None for random or failed steps).
    pub rank_corr: Option<f64>,
    /// Whether the selected batch contains a top-decile candidate of this
    /// step's pool.
    pub top_decile_hit: Option<bool>,
}

/// Full record of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoTrace {
    pub acquisition: Acquisition,
    pub seed: u64,
    pub init: Vec<SelectedPoint>,
    pub steps: Vec<BoStep>,
    pub final_regret: f64,
    /// Step at which the pool optimum was observed (0 = during init);
    /// later steps are padded.
    pub stopped_early_at: Option<usize>,
}

struct Candidate {
    coords: Vec<f64>,
    true_value: f64,
    pool_index: Option<usize>,
}

/// Runs one optimization trace: `n_init` shared initial observations, then
/// `n_steps` rounds of scoring candidates with the configured rule and
/// taking the top `batch`. Fixed-pool runs stop early once the library
/// optimum is observed and pad the remaining steps at the final incumbent;
/// steps where no candidate could be scored fall back to a random pick and
/// are flagged as failed.
pub fn run_bo(
    objective: &BoObjective,
    env: &SharedEnv,
    oracle: Option<&dyn Oracle>,
    config: &BoConfig,
) -> Result<BoTrace> {
    config.validate()?;
    if config.acquisition.needs_oracle() {
        if oracle.is_none() {
            return Err(Error::InvalidInput(format!(
                "{} scoring needs an oracle",
                config.acquisition.name()
            )));
        }
        match (config.protocol, config.style) {
            (Protocol::Pointwise, Style::Neutral | Style::Underdetermined) => {}
            (Protocol::Joint, Style::Neutral) => {
                if matches!(objective, BoObjective::Pool(_)) {
                    return Err(Error::InvalidInput(
                        "fixed-pool runs support only the pointwise protocol".into(),
                    ));
                }
            }
            (p, s) => {
                return Err(Error::InvalidInput(format!(
                    "unsupported surrogate prompt condition: {p:?} / {s:?}"
                )));
            }
        }
    }

    let bounds = objective.bounds();
    let y_star = objective.optimum();

    // Initial observations from the shared environment.
    let mut observed: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut observed_mask: Vec<bool> = match objective {
        BoObjective::Pool(pool) => vec![false; pool.len()],
        BoObjective::Continuous(_) => Vec::new(),
    };
    let init: Vec<SelectedPoint> = match (objective, env) {
        (BoObjective::Continuous(obj), SharedEnv::Continuous { init, step_pools }) => {
            if init.len() != config.n_init
                || step_pools.len() != config.n_steps
                || step_pools.iter().any(|p| p.len() != config.pool_size)
            {
                return Err(Error::InvalidInput(
                    "shared environment does not match the configured counts".into(),
                ));
            }
            init.iter()
                .map(|&p| SelectedPoint {
                    x: p.to_vec(),
                    value: obj.reward(p),
                    pool_index: None,
                })
                .collect()
        }
        (BoObjective::Pool(pool), SharedEnv::Pool { init }) => {
            if init.len() != config.n_init {
                return Err(Error::InvalidInput(
                    "shared environment does not match the configured counts".into(),
                ));
            }
            init.iter()
                .map(|&i| {
                    observed_mask[i] = true;
                    SelectedPoint {
                        x: pool.candidates[i].design.clone(),
                        value: pool.candidates[i].value,
                        pool_index: Some(i),
                    }
                })
                .collect()
        }
        _ => {
            return Err(Error::InvalidInput(
                "shared environment kind does not match the objective".into(),
            ));
        }
    };
    let mut y_best = f64::NEG_INFINITY;
    for p in &init {
        observed.push((p.x.clone(), p.value));
        y_best = y_best.max(p.value);
    }

    let mut stopped_early_at: Option<usize> = None;
    if let BoObjective::Pool(pool) = objective {
        if observed_mask[pool.best_index()] {
            stopped_early_at = Some(0);
        }
    }

    let mut steps = Vec::with_capacity(config.n_steps);
    for t in 1..=config.n_steps {
        if stopped_early_at.is_some() {
            steps.push(BoStep {
                step: t,
                selected: Vec::new(),
                best_so_far: y_best,
                regret: y_star - y_best,
                failed: false,
                padded: true,
                ei_degenerate: false,
                proxy_missing: false,
                rank_corr: None,
                top_decile_hit: None,
            });
            continue;
        }

        let candidates: Vec<Candidate> = match (objective, env) {
            (BoObjective::Continuous(obj), SharedEnv::Continuous { step_pools, .. }) => {
                step_pools[t - 1]
                    .iter()
                    .map(|&p| Candidate {
                        coords: p.to_vec(),
                        true_value: obj.reward(p),
                        pool_index: None,
                    })
                    .collect()
            }
            (BoObjective::Pool(pool), SharedEnv::Pool { .. }) => (0..pool.len())
                .filter(|&i| !observed_mask[i])
                .map(|i| Candidate {
                    coords: pool.candidates[i].design.clone(),
                    true_value: pool.candidates[i].value,
                    pool_index: Some(i),
                })
                .collect(),
            _ => unreachable!("environment kind checked above"),
        };
        if candidates.is_empty() {
            stopped_early_at = Some(t);
            steps.push(BoStep {
                step: t,
                selected: Vec::new(),
                best_so_far: y_best,
                regret: y_star - y_best,
                failed: false,
                padded: true,
                ei_degenerate: false,
                proxy_missing: false,
                rank_corr: None,
                top_decile_hit: None,
            });
            continue;
        }

        // Score the pool with the configured rule.
        let mut ei_degenerate = false;
        let mut proxy_missing = false;
        let mut predictions: Option<Vec<Option<f64>>> = None;
        let scores: Option<Vec<Option<f64>>> = match config.acquisition {
            Acquisition::Random => None,
            Acquisition::GpUcb | Acquisition::GpEi => {
                let points: Vec<(Vec<f64>, f64)> = observed
                    .iter()
                    .map(|(x, y)| (rescale(x, &bounds), *y))
                    .collect();
                let model = GpModel::fit(&points)?;
                let mut mus = Vec::with_capacity(candidates.len());
                let mut scored = Vec::with_capacity(candidates.len());
                for c in &candidates {
                    let (mu, sigma) = model.posterior(&rescale(&c.coords, &bounds));
                    mus.push(Some(mu));
                    let s = match config.acquisition {
                        Acquisition::GpUcb => ucb(mu, sigma, config.beta),
                        _ => {
                            let (ei, degenerate) = expected_improvement(mu, sigma, y_best);
                            ei_degenerate |= degenerate;
                            ei
                        }
                    };
                    scored.push(Some(s));
                }
                predictions = Some(mus);
                Some(scored)
            }
            Acquisition::LlmUcb | Acquisition::LlmEi => {
                let oracle = oracle.expect("checked above");
                let beliefs =
                    elicit_candidate_beliefs(oracle, objective, &observed, &candidates, config, t)?;
                let mut scored = Vec::with_capacity(candidates.len());
                for (mu, nll) in beliefs.iter() {
                    let Some(mu) = mu else {
                        scored.push(None);
                        continue;
                    };
                    if nll.is_none() {
                        proxy_missing = true;
                    }
                    let s = match config.acquisition {
                        Acquisition::LlmUcb => ucb(*mu, nll.unwrap_or(0.0), config.lambda),
                        _ => {
                            let sigma = nll.unwrap_or(BO_NLL_FLOOR).max(BO_NLL_FLOOR);
                            let (ei, degenerate) = expected_improvement(*mu, sigma, y_best);
                            ei_degenerate |= degenerate;
                            ei
                        }
                    };
                    scored.push(Some(s));
                }
                predictions = Some(beliefs.iter().map(|(mu, _)| *mu).collect());
                Some(scored)
            }
        };

        // Select the batch: highest score first, ties by candidate index;
        // random (or a fully failed scoring pass) picks uniformly.
        let take = config.batch.min(candidates.len());
        let mut failed = false;
        let chosen: Vec<usize> = match &scores {
            None => random_pick(candidates.len(), take, seeds::mix(config.seed, &[0x5e1, t as u64])),
            Some(scored) => {
                let mut valid: Vec<(usize, f64)> = scored
                    .iter()
                    .enumerate()
                    .filter_map(|(i, s)| s.map(|s| (i, s)))
                    .collect();
                if valid.is_empty() {
                    failed = true;
                    random_pick(
                        candidates.len(),
                        take,
                        seeds::mix(config.seed, &[0xfa11, t as u64]),
                    )
                } else {
                    valid.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    valid.iter().take(take).map(|&(i, _)| i).collect()
                }
            }
        };

        // Observe the selected candidates.
        let mut selected = Vec::with_capacity(chosen.len());
        for &i in &chosen {
            let c = &candidates[i];
            observed.push((c.coords.clone(), c.true_value));
            if let Some(pi) = c.pool_index {
                observed_mask[pi] = true;
            }
            y_best = y_best.max(c.true_value);
            selected.push(SelectedPoint {
                x: c.coords.clone(),
                value: c.true_value,
                pool_index: c.pool_index,
            });
        }

        // Diagnostics against the true pool values.
        let truths: Vec<f64> = candidates.iter().map(|c| c.true_value).collect();
        let rank_corr = match (&predictions, failed) {
            (Some(preds), false) => {
                let pairs: (Vec<f64>, Vec<f64>) = preds
                    .iter()
                    .zip(&truths)
                    .filter_map(|(p, &t)| p.map(|p| (p, t)))
                    .unzip();
                spearman(&pairs.0, &pairs.1).ok()
            }
            _ => None,
        };
        let top_decile_hit = Some(top_decile_hit(&truths, &chosen));

        if let BoObjective::Pool(pool) = objective {
            if chosen.iter().any(|&i| candidates[i].pool_index == Some(pool.best_index())) {
                stopped_early_at = Some(t);
            }
        }

        steps.push(BoStep {
            step: t,
            selected,
            best_so_far: y_best,
            regret: y_star - y_best,
            failed,
            padded: false,
            ei_degenerate,
            proxy_missing,
            rank_corr,
            top_decile_hit,
        });
    }

    let final_regret = steps.last().map_or(y_star - y_best, |s| s.regret);
    Ok(BoTrace {
        acquisition: config.acquisition,
        seed: config.seed,
        init,
        steps,
        final_regret,
        stopped_early_at,
    })
}

fn rescale(x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(bounds)
        .map(|(&v, &(lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

fn random_pick(n: usize, take: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeds::rng(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..take.min(n) {
        let j = rand::Rng::gen_range(&mut rng, i..indices.len());
        indices.swap(i, j);
    }
    indices.truncate(take.min(n));
    indices
}

/// Whether the chosen candidates include one of the top 10% of the pool by
/// true value (at least one candidate always qualifies).
fn top_decile_hit(truths: &[f64], chosen: &[usize]) -> bool {
    let k = (truths.len() / 10).max(1);
    let mut sorted = truths.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[sorted.len() - k];
    chosen.iter().any(|&i| truths[i] >= threshold)
}

/// Per-candidate (mean, token NLL) beliefs from the oracle, in candidate
/// order; a candidate whose completion did not parse carries None.
fn elicit_candidate_beliefs(
    oracle: &dyn Oracle,
    objective: &BoObjective,
    observed: &[(Vec<f64>, f64)],
    candidates: &[Candidate],
    config: &BoConfig,
    step: usize,
) -> Result<Vec<(Option<f64>, Option<f64>)>> {
    match (objective, config.protocol) {
        (BoObjective::Continuous(_), Protocol::Pointwise) => {
            let obs: Vec<([f64; 2], f64)> =
                observed.iter().map(|(x, y)| ([x[0], x[1]], *y)).collect();
            let mut out = Vec::with_capacity(candidates.len());
            for (i, c) in candidates.iter().enumerate() {
                let prompt = render_prompt_2d(
                    config.protocol,
                    config.style,
                    &obs,
                    Query2d::One([c.coords[0], c.coords[1]]),
                    config.precision,
                )?;
                out.push(pointwise_call(oracle, prompt, config.seed, step, i)?);
            }
            Ok(out)
        }
        (BoObjective::Continuous(_), Protocol::Joint) => {
            let obs: Vec<([f64; 2], f64)> =
                observed.iter().map(|(x, y)| ([x[0], x[1]], *y)).collect();
            let queries: Vec<[f64; 2]> =
                candidates.iter().map(|c| [c.coords[0], c.coords[1]]).collect();
            let prompt = render_prompt_2d(
                config.protocol,
                config.style,
                &obs,
                Query2d::Many(&queries),
                config.precision,
            )?;
            let req = OracleRequest {
                prompt,
                temperature: 0.0,
                seed: seeds::mix(config.seed, &[step as u64]),
            };
            let m = candidates.len();
            match complete_with_retry(oracle, &req)? {
                Err(_) => Ok(vec![(None, None); m]),
                Ok(reply) => match parse_joint(&reply.text, m) {
                    None => Ok(vec![(None, None); m]),
                    Some(values) => {
                        let nlls = reply
                            .tokens
                            .as_deref()
                            .and_then(|t| joint_nlls(t, m))
                            .unwrap_or_else(|| vec![None; m]);
                        Ok(values
                            .into_iter()
                            .zip(nlls)
                            .map(|(v, n)| (Some(v), n))
                            .collect())
                    }
                },
            }
        }
        (BoObjective::Pool(pool), Protocol::Pointwise) => {
            let mut out = Vec::with_capacity(candidates.len());
            for (i, c) in candidates.iter().enumerate() {
                let prompt = render_design_prompt(
                    &pool.design_names,
                    observed,
                    &c.coords,
                    config.precision,
                )?;
                out.push(pointwise_call(oracle, prompt, config.seed, step, i)?);
            }
            Ok(out)
        }
        (BoObjective::Pool(_), Protocol::Joint) => Err(Error::InvalidInput(
            "fixed-pool runs support only the pointwise protocol".into(),
        )),
    }
}

fn pointwise_call(
    oracle: &dyn Oracle,
    prompt: String,
    seed: u64,
    step: usize,
    index: usize,
) -> Result<(Option<f64>, Option<f64>)> {
    let req = OracleRequest {
        prompt,
        temperature: 0.0,
        seed: seeds::mix(seed, &[step as u64, index as u64]),
    };
    match complete_with_retry(oracle, &req)? {
        Err(_) => Ok((None, None)),
        Ok(reply) => {
            let mu = parse_pointwise(&reply.text);
            let nll = match (&mu, reply.tokens.as_deref()) {
                (Some(_), Some(tokens)) => pointwise_nll(tokens),
                _ => None,
            };
            Ok((mu, nll))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elicit::oracle::{OracleFailure, OracleReply};

    #[test]
    fn ei_closed_form_and_limits() {
        let (ei, flagged) = expected_improvement(0.0, 1.0, 0.0);
        assert!(!flagged);
        assert!((ei - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);

        // Vanishing width degenerates to the positive part of the gap.
        let (ei, flagged) = expected_improvement(2.0, 0.0, 1.0);
        assert!(flagged);
        assert_eq!(ei, 1.0);
        let (ei, flagged) = expected_improvement(0.0, 0.0, 1.0);
        assert!(flagged);
        assert_eq!(ei, 0.0);

        // Tiny but positive width integrates to the same limits.
        let (ei, flagged) = expected_improvement(1.0, 1e-9, 0.0);
        assert!(!flagged);
        assert!((ei - 1.0).abs() < 1e-9);

        // EI shrinks as the incumbent improves.
        let lo = expected_improvement(0.5, 0.3, 0.9).0;
        let hi = expected_improvement(0.5, 0.3, 0.1).0;
        assert!(lo < hi);
    }

    #[test]
    fn ei_matches_monte_carlo() {
        let (mu, sigma, y_best) = (0.3, 0.7, 0.5);
        let (ei, _) = expected_improvement(mu, sigma, y_best);
        let mut rng = seeds::rng(42);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 200_000;
        let mc: f64 = (0..n)
            .map(|_| {
                let y = mu + sigma * rand::distributions::Distribution::sample(&normal, &mut rng);
                (y - y_best).max(0.0)
            })
            .sum::<f64>()
            / n as f64;
        assert!((ei - mc).abs() < 1e-2, "closed form {ei} vs MC {mc}");
    }

    #[test]
    fn ucb_frozen_example() {
        assert!((ucb(1.0, 0.2, 3.0) - 1.6).abs() < 1e-12);
        assert_eq!(ucb(0.5, 0.0, 3.0), 0.5);
    }

    #[test]
    fn acquisition_names_round_trip() {
        for a in Acquisition::ALL {
            assert_eq!(Acquisition::from_name(a.name()), Some(a));
        }
        assert_eq!(Acquisition::from_name("bogus"), None);
    }

    fn canonical() -> BoObjective {
        BoObjective::Continuous(ContinuousObjective::CanonicalBranin)
    }

    fn shifted() -> BoObjective {
        BoObjective::Continuous(ContinuousObjective::ShiftedBranin)
    }

    fn battery() -> BoObjective {
        BoObjective::Pool(make_battery_desk_pool(7).unwrap())
    }

    fn assert_trace_invariants(trace: &BoTrace, config: &BoConfig) {
        assert_eq!(trace.init.len(), config.n_init);
        assert_eq!(trace.steps.len(), config.n_steps);
        let mut best = trace.init.iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
        let mut prev_regret = f64::INFINITY;
        for s in &trace.steps {
            for p in &s.selected {
                best = best.max(p.value);
            }
            assert_eq!(s.best_so_far, best, "incumbent mismatch at step {}", s.step);
            assert!(s.regret <= prev_regret + 1e-12, "regret rose at step {}", s.step);
            if s.padded {
                assert!(s.selected.is_empty());
            }
            prev_regret = s.regret;
        }
        assert_eq!(trace.final_regret, trace.steps.last().unwrap().regret);
    }

    #[test]
    fn shared_env_is_seed_deterministic_and_method_free() {
        let obj = canonical();
        let a = shared_env(&obj, 5, 10, 80, 3).unwrap();
        let b = shared_env(&obj, 5, 10, 80, 3).unwrap();
        assert_eq!(a, b);
        let c = shared_env(&obj, 5, 10, 80, 4).unwrap();
        assert_ne!(a, c);

        let SharedEnv::Continuous { init, step_pools } = &a else { panic!() };
        assert_eq!(init.len(), 5);
        assert_eq!(step_pools.len(), 10);
        assert!(step_pools.iter().all(|p| p.len() == 80));
    }

    #[test]
    fn shifted_env_uses_camouflaged_init() {
        let obj = shifted();
        let env = shared_env(&obj, 5, 2, 10, 3).unwrap();
        let SharedEnv::Continuous { init, .. } = &env else { panic!() };
        assert_eq!(init, &camouflaged_init(5, 3).unwrap());
    }

    #[test]
    fn gp_ucb_trace_on_canonical_surface() {
        let obj = canonical();
        let config = BoConfig::branin(Acquisition::GpUcb, 11);
        let env = shared_env(&obj, config.n_init, config.n_steps, config.pool_size, 11).unwrap();
        let trace = run_bo(&obj, &env, None, &config).unwrap();
        assert_trace_invariants(&trace, &config);
        assert!(trace.stopped_early_at.is_none());
        for s in &trace.steps {
            assert_eq!(s.selected.len(), 3);
            assert!(!s.failed && !s.padded);
            assert!(s.rank_corr.is_some());
            assert!(s.top_decile_hit.is_some());
            for p in &s.selected {
                assert!((-5.0..=10.0).contains(&p.x[0]));
                assert!((0.0..=15.0).contains(&p.x[1]));
                assert!(p.value <= 1e-12, "reward above optimum: {}", p.value);
            }
        }
        // The GP run must actually learn: the final incumbent beats the
        // best initial observation.
        let init_best = trace.init.iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
        assert!(trace.steps.last().unwrap().best_so_far > init_best);
    }

    #[test]
    fn runs_are_deterministic() {
        let obj = battery();
        let config = BoConfig::fixed_pool(Acquisition::GpEi, 5);
        let env = shared_env(&obj, config.n_init, config.n_steps, config.pool_size, 5).unwrap();
        let a = run_bo(&obj, &env, None, &config).unwrap();
        let b = run_bo(&obj, &env, None, &config).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_trace_invariants(&a, &config);
    }

    #[test]
    fn random_pool_run_stops_early_and_pads() {
        let obj = battery();
        let mut config = BoConfig::fixed_pool(Acquisition::Random, 2);
        config.n_steps = 250; // more steps than candidates: must exhaust or hit the max
        let env = shared_env(&obj, config.n_init, config.n_steps, config.pool_size, 2).unwrap();
        let trace = run_bo(&obj, &env, None, &config).unwrap();
        assert_trace_invariants(&trace, &config);
        let stop = trace.stopped_early_at.expect("random must eventually observe the max");
        assert!(trace.final_regret.abs() < 1e-12);
        for s in &trace.steps {
            assert_eq!(s.padded, s.step > stop, "padding wrong at step {}", s.step);
        }
        // Padded steps hold the final incumbent.
        let last_best = trace.steps.last().unwrap().best_so_far;
        for s in trace.steps.iter().filter(|s| s.padded) {
            assert_eq!(s.best_so_far, last_best);
        }
    }

    #[test]
    fn pool_max_in_init_pads_from_the_start() {
        let pool = make_battery_desk_pool(7).unwrap();
        let best = pool.best_index();
        // Find a seed whose shared init contains the best candidate.
        let obj = BoObjective::Pool(pool);
        let mut hit = None;
        for seed in 0..200 {
            let env = shared_env(&obj, 3, 5, 0, seed).unwrap();
            let SharedEnv::Pool { init } = &env else { panic!() };
            if init.contains(&best) {
                hit = Some((seed, env));
                break;
            }
        }
        let (seed, env) = hit.expect("some seed draws the best candidate into init");
        let mut config = BoConfig::fixed_pool(Acquisition::GpUcb, seed);
        config.n_steps = 5;
        let trace = run_bo(&obj, &env, None, &config).unwrap();
        assert_eq!(trace.stopped_early_at, Some(0));
        assert!(trace.steps.iter().all(|s| s.padded));
        assert!(trace.final_regret.abs() < 1e-12);
    }

    #[test]
    fn llm_ucb_echo_oracle_exploits_the_truth() {
        let obj = canonical();
        let oracle = SurfaceEchoOracle::exact(ContinuousObjective::CanonicalBranin);
        let config = BoConfig::branin(Acquisition::LlmUcb, 3);
        let env = shared_env(&obj, config.n_init, config.n_steps, config.pool_size, 3).unwrap();
        let trace = run_bo(&obj, &env, Some(&oracle), &config).unwrap();
        assert_trace_invariants(&trace, &config);
        assert!(trace.steps.iter().all(|s| !s.failed));
        // The echo's predictions rank candidates almost perfectly (prompt
        // rounding is the only noise), so every batch lands in the top decile.
        for s in &trace.steps {
            assert_eq!(s.top_decile_hit, Some(true), "step {}", s.step);
            assert!(s.rank_corr.unwrap() > 0.99, "rank corr {:?}", s.rank_corr);
        }
    }

    #[test]
    fn llm_joint_selects_like_pointwise_for_exact_echo() {
        let obj = canonical();
        let oracle = SurfaceEchoOracle::exact(ContinuousObjective::CanonicalBranin);
        let mut pw = BoConfig::branin(Acquisition::LlmUcb, 9);
        pw.n_steps = 3;
        let mut joint = pw.clone();
        joint.protocol = Protocol::Joint;
        let env = shared_env(&obj, pw.n_init, pw.n_steps, pw.pool_size, 9).unwrap();
        let a = run_bo(&obj, &env, Some(&oracle), &pw).unwrap();
        let b = run_bo(&obj, &env, Some(&oracle), &joint).unwrap();
        for (sa, sb) in a.steps.iter().zip(&b.steps) {
            assert_eq!(sa.selected, sb.selected, "step {}", sa.step);
        }
    }

    #[test]
    fn llm_ei_with_gp_surface_oracle_runs_clean() {
        let obj = shifted();
        let oracle = GpSurfaceOracle::new(BRANIN_DOMAIN);
        let mut config = BoConfig::branin(Acquisition::LlmEi, 5);
        config.n_steps = 4;
        config.style = Style::Underdetermined;
        let env = shared_env(&obj, config.n_init, config.n_steps, config.pool_size, 5).unwrap();
        let trace = run_bo(&obj, &env, Some(&oracle), &config).unwrap();
        assert_trace_invariants(&trace, &config);
        assert!(trace.steps.iter().all(|s| !s.failed && !s.proxy_missing));
    }

    #[test]
    fn llm_on_battery_pool_runs_pointwise() {
        let obj = battery();
        let BoObjective::Pool(pool) = &obj else { panic!() };
        let oracle = GpDesignOracle::new(pool.bounds.clone());
        let mut config = BoConfig::fixed_pool(Acquisition::LlmUcb, 4);
        config.n_steps = 5;
        let env = shared_env(&obj, config.n_init, config.n_steps, config.pool_size, 4).unwrap();
        let trace = run_bo(&obj, &env, Some(&oracle), &config).unwrap();
        assert_trace_invariants(&trace, &config);
        assert!(trace.steps.iter().all(|s| !s.failed));
    }

    struct ProseOnly;
    impl Oracle for ProseOnly {
        fn complete(&self, _req: &OracleRequest) -> std::result::Result<OracleReply, OracleFailure> {
            Ok(OracleReply::text_only("It is hard to say without more context."))
        }
        fn name(&self) -> &str {
            "prose"
        }
    }

    #[test]
    fn unparseable_oracle_falls_back_to_flagged_random_steps() {
        let obj = canonical();
        let mut config = BoConfig::branin(Acquisition::LlmUcb, 6);
        config.n_steps = 3;
        let env = shared_env(&obj, config.n_init, config.n_steps, config.pool_size, 6).unwrap();
        let trace = run_bo(&obj, &env, Some(&ProseOnly), &config).unwrap();
        assert_trace_invariants(&trace, &config);
        for s in &trace.steps {
            assert!(s.failed, "step {} should be failed", s.step);
            assert_eq!(s.selected.len(), 3);
            assert!(s.rank_corr.is_none());
        }
    }

    #[test]
    fn config_and_environment_mismatches_are_rejected() {
        let obj = canonical();
        let config = BoConfig::branin(Acquisition::LlmUcb, 0);
        let env = shared_env(&obj, config.n_init, config.n_steps, config.pool_size, 0).unwrap();
        // Oracle-backed rule without an oracle.
        assert!(run_bo(&obj, &env, None, &config).is_err());

        // Environment counts that disagree with the config.
        let mut wrong = BoConfig::branin(Acquisition::GpUcb, 0);
        wrong.n_init = 4;
        assert!(run_bo(&obj, &wrong_env_guard(&env), None, &wrong).is_err());

        // Environment kind that disagrees with the objective.
        let pool_env = shared_env(&battery(), 3, 5, 0, 0).unwrap();
        let gp = BoConfig::branin(Acquisition::GpUcb, 0);
        assert!(run_bo(&obj, &pool_env, None, &gp).is_err());

        // Joint protocol on a fixed pool.
        let pool_obj = battery();
        let mut joint = BoConfig::fixed_pool(Acquisition::LlmUcb, 0);
        joint.protocol = Protocol::Joint;
        let oracle = SurfaceEchoOracle::exact(ContinuousObjective::CanonicalBranin);
        assert!(run_bo(&pool_obj, &pool_env, Some(&oracle), &joint).is_err());

        // Degenerate counts.
        let mut zero = BoConfig::branin(Acquisition::GpUcb, 0);
        zero.batch = 0;
        assert!(run_bo(&obj, &env, None, &zero).is_err());
    }

    fn wrong_env_guard(env: &SharedEnv) -> SharedEnv {
        env.clone()
    }

    #[test]
    fn top_decile_threshold_counts() {
        // 20 candidates: top decile is the best 2.
        let mut truths: Vec<f64> = (0..20).map(|i| i as f64).collect();
        truths.reverse(); // values 19..0 at indices 0..19
        assert!(top_decile_hit(&truths, &[0]));
        assert!(top_decile_hit(&truths, &[1]));
        assert!(!top_decile_hit(&truths, &[2]));
        // Tiny pools: the single best candidate is the whole decile.
        assert!(top_decile_hit(&[1.0, 5.0, 3.0], &[1]));
        assert!(!top_decile_hit(&[1.0, 5.0, 3.0], &[0, 2]));
    }

    #[test]
    fn random_pick_is_deterministic_and_distinct() {
        let a = random_pick(80, 3, 7);
        let b = random_pick(80, 3, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a[0] != a[1] && a[1] != a[2] && a[0] != a[2]);
        let c = random_pick(2, 5, 7);
        assert_eq!(c.len(), 2);
    }
}
