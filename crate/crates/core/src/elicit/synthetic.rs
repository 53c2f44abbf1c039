//! Deterministic offline oracles: an echo of the true function, a GP
//! posterior sampler, and a scripted replayer. The whole test suite runs on
//! these with no network.

use std::collections::HashMap;

use rand::distributions::Distribution;
use sha2::{Digest, Sha256};

use crate::elicit::oracle::{Oracle, OracleFailure, OracleReply, OracleRequest, TokenLogProb};
use crate::elicit::RecordedCall;
use crate::families::{FunctionInstance, ObservationSet};
use crate::gp::GpModel;
use crate::{seeds, Error, Result};

/// The task a rendered prompt asks about, recovered by introspection.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTask {
    pub observations: Vec<(f64, f64)>,
    pub queries: Vec<f64>,
    pub joint: bool,
}

fn parse_observation_line(line: &str) -> Option<(f64, f64)> {
    // "[k] x=A y=B"
    let rest = line.trim().strip_prefix('[')?;
    let (idx, rest) = rest.split_once("] ")?;
    idx.parse::<usize>().ok()?;
    let rest = rest.strip_prefix("x=")?;
    let (x, y) = rest.split_once(" y=")?;
    Some((x.trim().parse().ok()?, y.trim().parse().ok()?))
}

fn parse_joint_query_line(line: &str) -> Option<f64> {
    // "[k] x=A"
    let rest = line.trim().strip_prefix('[')?;
    let (idx, rest) = rest.split_once("] ")?;
    idx.parse::<usize>().ok()?;
    let rest = rest.strip_prefix("x=")?;
    if rest.contains("y=") {
        return None;
    }
    rest.trim().parse().ok()
}

/// Recover observations and query locations from a rendered prompt.
///
/// Synthetic oracles see exactly what a remote model would see — the prompt
/// text — so they reconstruct the task from it rather than being handed the
/// structures directly.
pub fn parse_prompt_task(prompt: &str) -> Result<PromptTask> {
    let joint = prompt.contains("QUERY LIST:");
    let marker = if joint {
        "QUERY LIST:"
    } else {
        "Predict the y value for:"
    };
    let split = prompt
        .find(marker)
        .ok_or_else(|| Error::Oracle("prompt has no query section".into()))?;
    let (head, tail) = prompt.split_at(split);
    let observations: Vec<(f64, f64)> =
        head.lines().filter_map(parse_observation_line).collect();
    let queries: Vec<f64> = if joint {
        tail.lines().filter_map(parse_joint_query_line).collect()
    } else {
        tail.lines()
            .filter_map(|l| l.trim().strip_prefix("x="))
            .filter_map(|v| v.trim().parse().ok())
            .collect()
    };
    if queries.is_empty() {
        return Err(Error::Oracle("prompt has no parsable queries".into()));
    }
    if !joint && queries.len() != 1 {
        return Err(Error::Oracle(format!(
            "pointwise prompt has {} queries",
            queries.len()
        )));
    }
    Ok(PromptTask {
        observations,
        queries,
        joint,
    })
}

fn prompt_hash(prompt: &str) -> u64 {
    let digest = Sha256::digest(prompt.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

pub(crate) fn call_rng(req: &OracleRequest) -> rand_chacha::ChaCha12Rng {
    seeds::rng(seeds::mix(req.seed, &[prompt_hash(&req.prompt)]))
}

/// Render values as a reply in the format the protocol expects, with one
/// digit-bearing token per value at the requested NLL.
pub(crate) fn reply_for(values: &[f64], nlls: &[f64], joint: bool, with_logprobs: bool) -> OracleReply {
    assert_eq!(values.len(), nlls.len());
    let mut tokens: Vec<TokenLogProb> = Vec::new();
    let text = if joint {
        let mut text = String::from("{\"y\":[");
        tokens.push(TokenLogProb {
            text: text.clone(),
            logprob: -0.01,
        });
        for (i, (&v, &nll)) in values.iter().zip(nlls).enumerate() {
            if i > 0 {
                text.push(',');
                tokens.push(TokenLogProb {
                    text: ",".into(),
                    logprob: -0.01,
                });
            }
            let rendered = format!("{v}");
            text.push_str(&rendered);
            tokens.push(TokenLogProb {
                text: rendered,
                logprob: -nll,
            });
        }
        text.push_str("]}");
        tokens.push(TokenLogProb {
            text: "]}".into(),
            logprob: -0.01,
        });
        text
    } else {
        let rendered = format!("{}", values[0]);
        tokens.push(TokenLogProb {
            text: rendered.clone(),
            logprob: -nlls[0],
        });
        rendered
    };
    OracleReply {
        text,
        tokens: with_logprobs.then_some(tokens),
    }
}

/// Returns the true function's values, optionally jittered when sampling at
/// temperature > 0, with a constant per-value token NLL.
pub struct EchoOracle {
    truth: FunctionInstance,
    jitter_sd: f64,
    nll: f64,
    with_logprobs: bool,
}

impl EchoOracle {
    pub fn exact(truth: FunctionInstance) -> Self {
        EchoOracle {
            truth,
            jitter_sd: 0.0,
            nll: 0.1,
            with_logprobs: true,
        }
    }

    /// Gaussian jitter with this standard deviation, applied only at
    /// temperature > 0 (greedy calls stay exact).
    pub fn with_jitter(mut self, sd: f64) -> Self {
        self.jitter_sd = sd;
        self
    }

    pub fn with_nll(mut self, nll: f64) -> Self {
        self.nll = nll;
        self
    }

    pub fn without_logprobs(mut self) -> Self {
        self.with_logprobs = false;
        self
    }
}

impl Oracle for EchoOracle {
    fn complete(&self, req: &OracleRequest) -> std::result::Result<OracleReply, OracleFailure> {
        let task = parse_prompt_task(&req.prompt).map_err(|e| OracleFailure::Fatal(e.to_string()))?;
        let mut rng = call_rng(req);
        let normal = statrs::distribution::Normal::new(0.0, 1.0).expect("valid normal");
        let values: Vec<f64> = task
            .queries
            .iter()
            .map(|&x| {
                let base = crate::families::evaluate(&self.truth, x)
                    .map_err(|e| OracleFailure::Fatal(e.to_string()))?;
                let jitter = if req.temperature > 0.0 && self.jitter_sd > 0.0 {
                    self.jitter_sd * normal.sample(&mut rng)
                } else {
                    0.0
                };
                Ok(base + jitter)
            })
            .collect::<std::result::Result<_, OracleFailure>>()?;
        let nlls = vec![self.nll; values.len()];
        Ok(reply_for(&values, &nlls, task.joint, self.with_logprobs))
    }

    fn name(&self) -> &str {
        "synthetic-echo"
    }
}

/// Samples from a GP posterior fitted to the observations in the prompt;
/// token NLL is an affine function of the posterior standard deviation.
pub struct GpBeliefOracle {
    pub nll_base: f64,
    pub nll_scale: f64,
}

impl Default for GpBeliefOracle {
    fn default() -> Self {
        GpBeliefOracle {
            nll_base: 0.1,
            nll_scale: 1.0,
        }
    }
}

impl Oracle for GpBeliefOracle {
    fn complete(&self, req: &OracleRequest) -> std::result::Result<OracleReply, OracleFailure> {
        let task = parse_prompt_task(&req.prompt).map_err(|e| OracleFailure::Fatal(e.to_string()))?;
        let obs = ObservationSet::new(task.observations.clone())
            .map_err(|e| OracleFailure::Fatal(e.to_string()))?;
        let model = GpModel::fit_1d(&obs).map_err(|e| OracleFailure::Fatal(e.to_string()))?;
        let mut rng = call_rng(req);
        let normal = statrs::distribution::Normal::new(0.0, 1.0).expect("valid normal");
        let mut values = Vec::with_capacity(task.queries.len());
        let mut nlls = Vec::with_capacity(task.queries.len());
        for &x in &task.queries {
            let (mu, sigma) = model.posterior_1d(x);
            let v = if req.temperature > 0.0 {
                mu + req.temperature * sigma * normal.sample(&mut rng)
            } else {
                mu
            };
            values.push(v);
            nlls.push(self.nll_base + self.nll_scale * sigma);
        }
        Ok(reply_for(&values, &nlls, task.joint, true))
    }

    fn name(&self) -> &str {
        "synthetic-gp"
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CallKey {
    prompt: String,
    seed: u64,
    temperature_bits: u64,
}

impl CallKey {
    fn of(req: &OracleRequest) -> Self {
        CallKey {
            prompt: req.prompt.clone(),
            seed: req.seed,
            temperature_bits: req.temperature.to_bits(),
        }
    }
}

/// Replays recorded completions keyed by exact (prompt, seed, temperature).
/// A request with no scripted reply is a fatal error, not an invalid
/// completion — a missing line means the script is wrong.
#[derive(Default)]
pub struct ScriptedOracle {
    replies: HashMap<CallKey, OracleReply>,
}

impl ScriptedOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, req: &OracleRequest, reply: OracleReply) {
        self.replies.insert(CallKey::of(req), reply);
    }

    /// Load a JSONL file of recorded calls (one `RecordedCall` per line).
    pub fn from_jsonl(path: &std::path::Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let mut oracle = ScriptedOracle::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordedCall = serde_json::from_str(line).map_err(|e| {
                Error::Config(format!("bad recorded call on line {}: {e}", i + 1))
            })?;
            oracle.insert(&rec.request, rec.reply);
        }
        Ok(oracle)
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

impl Oracle for ScriptedOracle {
    fn complete(&self, req: &OracleRequest) -> std::result::Result<OracleReply, OracleFailure> {
        self.replies
            .get(&CallKey::of(req))
            .cloned()
            .ok_or_else(|| {
                OracleFailure::Fatal(format!(
                    "no scripted reply for seed {} (prompt {} bytes)",
                    req.seed,
                    req.prompt.len()
                ))
            })
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elicit::prompt::{render_prompt, PromptSpec, Protocol, QueryInput, Structure, Style};
    use crate::families::{evaluate, sample_instance, FamilyKind, ObservationSet};

    fn spec(protocol: Protocol) -> PromptSpec {
        PromptSpec::new(protocol, Style::Neutral, Structure::Unknown)
    }

    fn obs() -> ObservationSet {
        ObservationSet::new(vec![(-1.0, 0.2), (0.0, 1.0), (1.0, 0.25)]).unwrap()
    }

    #[test]
    fn introspection_round_trips_pointwise_and_joint() {
        let p = render_prompt(&spec(Protocol::Pointwise), &obs(), QueryInput::One(-0.5), None)
            .unwrap();
        let task = parse_prompt_task(&p).unwrap();
        assert!(!task.joint);
        assert_eq!(task.queries, vec![-0.5]);
        assert_eq!(task.observations, vec![(-1.0, 0.2), (0.0, 1.0), (1.0, 0.25)]);

        let xs = [-0.5, 0.5, 1.5, -1.5];
        let p = render_prompt(&spec(Protocol::Joint), &obs(), QueryInput::Many(&xs), None).unwrap();
        let task = parse_prompt_task(&p).unwrap();
        assert!(task.joint);
        assert_eq!(task.queries, xs.to_vec());
        assert_eq!(task.observations.len(), 3);
    }

    #[test]
    fn introspection_rejects_taskless_text() {
        assert!(parse_prompt_task("no task here").is_err());
    }

    fn req(prompt: String, temperature: f64, seed: u64) -> OracleRequest {
        OracleRequest {
            prompt,
            temperature,
            seed,
        }
    }

    #[test]
    fn echo_returns_exact_values_greedily() {
        let truth = sample_instance(FamilyKind::Gaussian, 5);
        let oracle = EchoOracle::exact(truth.clone()).with_jitter(0.5);
        let p = render_prompt(&spec(Protocol::Pointwise), &obs(), QueryInput::One(0.75), None)
            .unwrap();
        let reply = oracle.complete(&req(p, 0.0, 3)).unwrap();
        let expected = evaluate(&truth, 0.75).unwrap();
        assert_eq!(reply.text.parse::<f64>().unwrap(), expected);
    }

    #[test]
    fn echo_joint_reply_is_strict_json_with_value_tokens() {
        let truth = sample_instance(FamilyKind::Linear, 1);
        let oracle = EchoOracle::exact(truth.clone()).with_nll(0.3);
        let xs = [0.0, 1.0];
        let p = render_prompt(&spec(Protocol::Joint), &obs(), QueryInput::Many(&xs), None).unwrap();
        let reply = oracle.complete(&req(p, 0.0, 0)).unwrap();
        let parsed = crate::elicit::parse::parse_joint(&reply.text, 2).unwrap();
        assert_eq!(parsed[0], evaluate(&truth, 0.0).unwrap());
        let nlls = crate::elicit::parse::joint_nlls(reply.tokens.as_ref().unwrap(), 2).unwrap();
        assert!((nlls[0].unwrap() - 0.3).abs() < 1e-12);
        assert!((nlls[1].unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn echo_is_deterministic_per_seed_and_varies_across_seeds() {
        let truth = sample_instance(FamilyKind::Quadratic, 2);
        let oracle = EchoOracle::exact(truth).with_jitter(0.4);
        let p = render_prompt(&spec(Protocol::Pointwise), &obs(), QueryInput::One(0.5), None)
            .unwrap();
        let a = oracle.complete(&req(p.clone(), 1.0, 11)).unwrap();
        let b = oracle.complete(&req(p.clone(), 1.0, 11)).unwrap();
        let c = oracle.complete(&req(p, 1.0, 12)).unwrap();
        assert_eq!(a.text, b.text);
        assert_ne!(a.text, c.text);
    }

    #[test]
    fn gp_belief_tracks_observations_and_scales_nll_with_sd() {
        let oracle = GpBeliefOracle::default();
        // Greedy at an observed location: posterior mean is close to the
        // observation and sd is near zero, so NLL is near the base.
        let p = render_prompt(&spec(Protocol::Pointwise), &obs(), QueryInput::One(0.0), None)
            .unwrap();
        let reply = oracle.complete(&req(p, 0.0, 0)).unwrap();
        let near: f64 = reply.text.parse().unwrap();
        assert!((near - 1.0).abs() < 0.05, "posterior mean {near}");
        let nll_near = crate::elicit::parse::pointwise_nll(reply.tokens.as_ref().unwrap()).unwrap();

        // Far from every observation the sd approaches the prior, so the
        // affine NLL must be visibly larger.
        let p = render_prompt(&spec(Protocol::Pointwise), &obs(), QueryInput::One(4.5), None)
            .unwrap();
        let reply = oracle.complete(&req(p, 0.0, 0)).unwrap();
        let nll_far = crate::elicit::parse::pointwise_nll(reply.tokens.as_ref().unwrap()).unwrap();
        assert!(nll_far > nll_near + 0.5, "near {nll_near} far {nll_far}");
    }

    #[test]
    fn scripted_replays_by_request_key() {
        let mut oracle = ScriptedOracle::new();
        let r1 = req("prompt-a".into(), 1.0, 1);
        let r2 = req("prompt-a".into(), 1.0, 2);
        oracle.insert(&r1, OracleReply::text_only("1.5"));
        oracle.insert(&r2, OracleReply::text_only("2.5"));
        assert_eq!(oracle.len(), 2);
        assert_eq!(oracle.complete(&r1).unwrap().text, "1.5");
        assert_eq!(oracle.complete(&r2).unwrap().text, "2.5");
        let missing = req("prompt-b".into(), 1.0, 1);
        assert!(matches!(
            oracle.complete(&missing),
            Err(OracleFailure::Fatal(_))
        ));
    }

    #[test]
    fn scripted_loads_recorded_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calls.jsonl");
        let rec = RecordedCall {
            request: req("p".into(), 0.5, 9),
            reply: OracleReply::text_only("42"),
        };
        std::fs::write(&path, format!("{}\n", serde_json::to_string(&rec).unwrap())).unwrap();
        let oracle = ScriptedOracle::from_jsonl(&path).unwrap();
        assert_eq!(oracle.complete(&req("p".into(), 0.5, 9)).unwrap().text, "42");
    }
}
