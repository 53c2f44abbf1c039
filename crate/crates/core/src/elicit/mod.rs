//! Belief elicitation: render prompts for a condition, query an oracle with
//! bounded concurrency, parse completions strictly, and assemble repeated
//! samples into a [`BeliefSample`].

pub mod belief;
pub mod oracle;
pub mod parse;
pub mod prompt;
pub mod synthetic;

pub use belief::{BeliefSample, Completion};
pub use oracle::{
    complete_with_retry, HttpOracle, HttpOracleConfig, Oracle, OracleFailure, OracleReply,
    OracleRequest, RecordedCall, RecordingOracle, TokenLogProb,
};
pub use prompt::{render_prompt, PromptSpec, Protocol, QueryInput, Structure, Style};
pub use synthetic::{EchoOracle, GpBeliefOracle, ScriptedOracle};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::families::{FunctionInstance, ObservationSet, QueryGrid};
use crate::{seeds, Error, Result};

/// Seed for one POINTWISE call: derived from the run seed, the repeat
/// index, and the query location's bits — never from the grid position, so
/// permuting the grid permutes nothing but bookkeeping.
pub fn call_seed_pointwise(seed: u64, repeat: usize, x: f64) -> u64 {
    seeds::mix(seed, &[repeat as u64, x.to_bits()])
}

/// Seed for one JOINT call: one completion covers the whole list.
pub fn call_seed_joint(seed: u64, repeat: usize) -> u64 {
    seeds::mix(seed, &[repeat as u64])
}

#[derive(Debug, Clone, Copy)]
pub struct ElicitOptions {
    /// Repeated samples per condition.
    pub repeats: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Upper bound on in-flight oracle calls.
    pub max_concurrency: usize,
}

impl Default for ElicitOptions {
    fn default() -> Self {
        ElicitOptions {
            repeats: 50,
            temperature: 1.0,
            seed: 0,
            max_concurrency: 8,
        }
    }
}

/// Run every request, at most `max_concurrency` in flight, and return the
/// outcomes in request order (Err(text) marks an invalid completion after
/// retries; a fatal oracle error aborts the whole batch).
fn run_calls(
    oracle: &dyn Oracle,
    reqs: &[OracleRequest],
    max_concurrency: usize,
) -> Result<Vec<std::result::Result<OracleReply, String>>> {
    let slots: Vec<Mutex<Option<Result<std::result::Result<OracleReply, String>>>>> =
        reqs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = max_concurrency.max(1).min(reqs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= reqs.len() {
                    break;
                }
                let outcome = complete_with_retry(oracle, &reqs[i]);
                *slots[i].lock().expect("slot lock") = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("slot filled"))
        .collect()
}

/// Elicit a belief sample for one prompt condition.
///
/// POINTWISE issues `repeats x |grid|` independent calls and reassembles
/// them by query index; JOINT issues `repeats` whole-list calls. With a
/// deterministic oracle the result depends only on the inputs and the seed,
/// not on scheduling.
pub fn elicit(
    oracle: &dyn Oracle,
    spec: &PromptSpec,
    obs: &ObservationSet,
    grid: &QueryGrid,
    truth: Option<&FunctionInstance>,
    opts: &ElicitOptions,
) -> Result<BeliefSample> {
    if opts.repeats == 0 {
        return Err(Error::InvalidInput("repeats must be >= 1".into()));
    }
    if !opts.temperature.is_finite() || opts.temperature < 0.0 {
        return Err(Error::InvalidInput(format!(
            "temperature must be finite and nonnegative, got {}",
            opts.temperature
        )));
    }
    let m = grid.len();
    let n = opts.repeats;
    let completions = match spec.protocol {
        Protocol::Pointwise => {
            let prompts: Vec<String> = grid
                .locations()
                .iter()
                .map(|&x| render_prompt(spec, obs, QueryInput::One(x), truth))
                .collect::<Result<_>>()?;
            let mut reqs = Vec::with_capacity(n * m);
            for r in 0..n {
                for (j, prompt) in prompts.iter().enumerate() {
                    reqs.push(OracleRequest {
                        prompt: prompt.clone(),
                        temperature: opts.temperature,
                        seed: call_seed_pointwise(opts.seed, r, grid.locations()[j]),
                    });
                }
            }
            let outcomes = run_calls(oracle, &reqs, opts.max_concurrency)?;
            outcomes
                .chunks(m)
                .map(|row| {
                    let mut values = Vec::with_capacity(m);
                    let mut nlls = Vec::with_capacity(m);
                    let mut raw = Vec::with_capacity(m);
                    for outcome in row {
                        match outcome {
                            Ok(reply) => {
                                values.push(parse::parse_pointwise(&reply.text));
                                nlls.push(
                                    reply
                                        .tokens
                                        .as_deref()
                                        .and_then(parse::pointwise_nll),
                                );
                                raw.push(reply.text.clone());
                            }
                            Err(failure) => {
                                values.push(None);
                                nlls.push(None);
                                raw.push(failure.clone());
                            }
                        }
                    }
                    Completion { values, nlls, raw }
                })
                .collect::<Vec<_>>()
        }
        Protocol::Joint => {
            let prompt = render_prompt(spec, obs, QueryInput::Many(grid.locations()), truth)?;
            let reqs: Vec<OracleRequest> = (0..n)
                .map(|r| OracleRequest {
                    prompt: prompt.clone(),
                    temperature: opts.temperature,
                    seed: call_seed_joint(opts.seed, r),
                })
                .collect();
            let outcomes = run_calls(oracle, &reqs, opts.max_concurrency)?;
            outcomes
                .into_iter()
                .map(|outcome| match outcome {
                    Ok(reply) => {
                        let parsed = parse::parse_joint(&reply.text, m);
                        let nlls = match (&parsed, &reply.tokens) {
                            (Some(_), Some(tokens)) => parse::joint_nlls(tokens, m)
                                .unwrap_or_else(|| vec![None; m]),
                            _ => vec![None; m],
                        };
                        let values = match parsed {
                            Some(vs) => vs.into_iter().map(Some).collect(),
                            None => vec![None; m],
                        };
                        Completion {
                            values,
                            nlls,
                            raw: vec![reply.text],
                        }
                    }
                    Err(failure) => Completion {
                        values: vec![None; m],
                        nlls: vec![None; m],
                        raw: vec![failure],
                    },
                })
                .collect()
        }
    };
    let (total_calls, invalid_calls) = match spec.protocol {
        Protocol::Pointwise => {
            let invalid: usize = completions
                .iter()
                .flat_map(|c| &c.values)
                .filter(|v| v.is_none())
                .count();
            (n * m, invalid)
        }
        Protocol::Joint => {
            let invalid = completions
                .iter()
                .filter(|c| c.values.iter().all(|v| v.is_none()))
                .count();
            (n, invalid)
        }
    };
    let sample = BeliefSample {
        spec: spec.clone(),
        grid: grid.clone(),
        completions,
        invalid_rate: invalid_calls as f64 / total_calls as f64,
    };
    if (0..m).all(|j| sample.values_at(j).is_empty()) {
        return Err(Error::EmptyBelief);
    }
    Ok(sample)
}
