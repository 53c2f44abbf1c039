//! Prompt rendering and synthetic oracles for the two-dimensional and
//! fixed-design optimization studies. The 1D elicitation templates carry
//! over with the coordinate pair spelled out; fixed-design libraries use a
//! named-parameter variant of the same layout.

use rand::distributions::Distribution;

use crate::bo::objective::ContinuousObjective;
use crate::elicit::oracle::{Oracle, OracleFailure, OracleReply, OracleRequest};
use crate::elicit::prompt::{Protocol, Style};
use crate::elicit::synthetic::{call_rng, reply_for};
use crate::gp::GpModel;
use crate::{Error, Result};

/// Ambiguity warning used by the underdetermination-aware 2D condition.
pub const UNDERDETERMINED_2D_WARNING: &str = "WARNING: This problem is strongly underdetermined. The observed points do not uniquely determine the underlying surface.\nMultiple substantially different surfaces, with different slopes, curvature, and local extrema, can fit these same observations equally well.\nDo not assume a single confident interpretation from sparse evidence.\nTreat this as a high-uncertainty inference task and make a cautious prediction that reflects ambiguity rather than overconfident extrapolation.";

/// Query input for one 2D oracle call.
#[derive(Debug, Clone, Copy)]
pub enum Query2d<'a> {
    One([f64; 2]),
    Many(&'a [[f64; 2]]),
}

fn fmt_num(v: f64, precision: usize) -> String {
    format!("{v:.precision$}")
}

fn fmt_point(x: [f64; 2], precision: usize) -> String {
    format!("({},{})", fmt_num(x[0], precision), fmt_num(x[1], precision))
}

fn observation_lines_2d(obs: &[([f64; 2], f64)], precision: usize) -> String {
    obs.iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            format!("[{}] x={} y={}", i + 1, fmt_point(x, precision), fmt_num(y, precision))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Render a 2D surrogate prompt. Supported conditions are pointwise neutral,
/// pointwise underdetermination-aware, and joint neutral; the warning
/// condition replaces the role header rather than adding to it.
pub fn render_prompt_2d(
    protocol: Protocol,
    style: Style,
    obs: &[([f64; 2], f64)],
    query: Query2d<'_>,
    precision: usize,
) -> Result<String> {
    let lines = observation_lines_2d(obs, precision);
    match (protocol, style, query) {
        (Protocol::Pointwise, Style::Neutral, Query2d::One(q)) => Ok(format!(
            "You are a function approximator. Given examples of ((x_1,x_2),y) pairs from an unknown 2D function, predict the y value for a new (x_1,x_2) input.\n\n\
             Rules:\n1. Output only the numeric y value.\n2. Use the same precision as the examples.\n3. Do not include explanation or extra text.\n\n\
             Here are example points from an unknown 2D function:\n\n{lines}\n\n\
             Given the pattern, predict the y value for:\nx={}, y=",
            fmt_point(q, precision)
        )),
        (Protocol::Pointwise, Style::Underdetermined, Query2d::One(q)) => Ok(format!(
            "Here are example points from an unknown 2D function.\n{UNDERDETERMINED_2D_WARNING}\n\n{lines}\n\n\
             Given this uncertainty, predict the y value for:\nx={}, y=",
            fmt_point(q, precision)
        )),
        (Protocol::Joint, Style::Neutral, Query2d::Many(qs)) => {
            if qs.is_empty() {
                return Err(Error::InvalidInput("joint query list is empty".into()));
            }
            let list = qs
                .iter()
                .enumerate()
                .map(|(i, &q)| format!("[{}] x={}", i + 1, fmt_point(q, precision)))
                .collect::<Vec<_>>()
                .join("\n");
            let tail = if qs.len() == 1 {
                "{\"y\":[y1]}".to_string()
            } else {
                format!("{{\"y\":[y1,...,y{}]}}", qs.len())
            };
            Ok(format!(
                "You are a function approximator. Given examples of ((x_1,x_2),y) pairs from an unknown 2D function, predict the y values for a list of new (x_1,x_2) inputs.\n\
                 Return strict JSON only. Output must contain exactly one key \"y\" with a list of numeric values in query order.\n\n\
                 Here are example points from an unknown 2D function:\n\n{lines}\n\n\
                 Predict y for each query in order.\nQUERY LIST:\n{list}\n\nReturn: {tail}"
            ))
        }
        (Protocol::Pointwise, _, Query2d::Many(_)) => Err(Error::InvalidInput(
            "pointwise 2D rendering takes exactly one query".into(),
        )),
        (Protocol::Joint, _, Query2d::One(_)) => Err(Error::InvalidInput(
            "joint 2D rendering takes the full query list".into(),
        )),
        (p, s, _) => Err(Error::InvalidInput(format!(
            "unsupported 2D prompt condition: {p:?} / {s:?}"
        ))),
    }
}

/// Render a score-prediction prompt for a fixed design library: observed
/// designs as named parameters with their scores, one query design.
pub fn render_design_prompt(
    design_names: &[String],
    obs: &[(Vec<f64>, f64)],
    query: &[f64],
    precision: usize,
) -> Result<String> {
    if query.len() != design_names.len() {
        return Err(Error::InvalidInput(format!(
            "query design has {} coordinates, expected {}",
            query.len(),
            design_names.len()
        )));
    }
    let design_string = |d: &[f64]| {
        d.iter()
            .zip(design_names)
            .map(|(&v, name)| format!("{name}={v:.6}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let lines = obs
        .iter()
        .enumerate()
        .map(|(i, (d, s))| {
            format!("[{}] {} score={}", i + 1, design_string(d), fmt_num(*s, precision))
        })
        .collect::<Vec<_>>()
        .join("\n");
    Ok(format!(
        "You are assisting with design optimization. Given examples of evaluated designs and their scores, predict the score for a new design.\n\n\
         Rules:\n1. Output only the numeric score.\n2. Use the same precision as the examples.\n3. Do not include explanation or extra text.\n\n\
         Here are evaluated designs:\n\n{lines}\n\n\
         Predict the score for:\n{}, score=",
        design_string(query)
    ))
}

/// The task a 2D prompt asks about, recovered by introspection.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTask2d {
    pub observations: Vec<([f64; 2], f64)>,
    pub queries: Vec<[f64; 2]>,
    pub joint: bool,
}

fn parse_point(text: &str) -> Option<[f64; 2]> {
    // "(a,b)"
    let inner = text.trim().strip_prefix('(')?.strip_suffix(')')?;
    let (a, b) = inner.split_once(',')?;
    Some([a.trim().parse().ok()?, b.trim().parse().ok()?])
}

fn parse_observation_line_2d(line: &str) -> Option<([f64; 2], f64)> {
    // "[k] x=(a,b) y=c"
    let rest = line.trim().strip_prefix('[')?;
    let (idx, rest) = rest.split_once("] ")?;
    idx.parse::<usize>().ok()?;
    let rest = rest.strip_prefix("x=")?;
    let (x, y) = rest.split_once(" y=")?;
    Some((parse_point(x)?, y.trim().parse().ok()?))
}

fn parse_joint_query_line_2d(line: &str) -> Option<[f64; 2]> {
    // "[k] x=(a,b)" with no y.
    let rest = line.trim().strip_prefix('[')?;
    let (idx, rest) = rest.split_once("] ")?;
    idx.parse::<usize>().ok()?;
    let rest = rest.strip_prefix("x=")?;
    if rest.contains("y=") {
        return None;
    }
    parse_point(rest)
}

/// Recover observations and queries from a rendered 2D prompt.
pub fn parse_prompt_task_2d(prompt: &str) -> Result<PromptTask2d> {
    let joint = prompt.contains("QUERY LIST:");
    let marker = if joint { "QUERY LIST:" } else { "predict the y value for:" };
    let split = prompt
        .find(marker)
        .ok_or_else(|| Error::Oracle("2D prompt has no query section".into()))?;
    let (head, tail) = prompt.split_at(split);
    let observations: Vec<([f64; 2], f64)> =
        head.lines().filter_map(parse_observation_line_2d).collect();
    let queries: Vec<[f64; 2]> = if joint {
        tail.lines().filter_map(parse_joint_query_line_2d).collect()
    } else {
        tail.lines()
            .filter_map(|l| l.trim().strip_prefix("x="))
            .filter_map(|v| parse_point(v.trim().trim_end_matches(", y=").trim()))
            .collect()
    };
    if queries.is_empty() {
        return Err(Error::Oracle("2D prompt has no parsable queries".into()));
    }
    if !joint && queries.len() != 1 {
        return Err(Error::Oracle(format!(
            "pointwise 2D prompt has {} queries",
            queries.len()
        )));
    }
    Ok(PromptTask2d { observations, queries, joint })
}

/// The task a design prompt asks about.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignTask {
    pub observations: Vec<(Vec<f64>, f64)>,
    pub query: Vec<f64>,
}

fn parse_design_values(text: &str) -> Option<Vec<f64>> {
    // "name=v name=v ..." — values only; names are display labels.
    let mut values = Vec::new();
    for part in text.split_whitespace() {
        let (_, v) = part.split_once('=')?;
        values.push(v.parse().ok()?);
    }
    if values.is_empty() {
        None
    } else {
        Some(values)
    }
}

/// Recover observed designs and the query design from a design prompt.
pub fn parse_design_task(prompt: &str) -> Result<DesignTask> {
    let marker = "Predict the score for:";
    let split = prompt
        .find(marker)
        .ok_or_else(|| Error::Oracle("design prompt has no query section".into()))?;
    let (head, tail) = prompt.split_at(split);
    let mut observations = Vec::new();
    for line in head.lines() {
        let Some(rest) = line.trim().strip_prefix('[') else { continue };
        let Some((idx, rest)) = rest.split_once("] ") else { continue };
        if idx.parse::<usize>().is_err() {
            continue;
        }
        let Some((design, score)) = rest.rsplit_once(" score=") else { continue };
        let (Some(d), Ok(s)) = (parse_design_values(design), score.trim().parse::<f64>()) else {
            continue;
        };
        observations.push((d, s));
    }
    let query = tail
        .lines()
        .skip(1)
        .find_map(|l| {
            let l = l.trim().trim_end_matches(", score=");
            parse_design_values(l)
        })
        .ok_or_else(|| Error::Oracle("design prompt has no parsable query".into()))?;
    Ok(DesignTask { observations, query })
}

/// Echoes the true reward surface of a continuous 2D objective, optionally
/// jittered at temperature > 0, with a constant token NLL.
pub struct SurfaceEchoOracle {
    objective: ContinuousObjective,
    jitter_sd: f64,
    nll: f64,
}

impl SurfaceEchoOracle {
    pub fn exact(objective: ContinuousObjective) -> Self {
        SurfaceEchoOracle { objective, jitter_sd: 0.0, nll: 0.1 }
    }

    pub fn with_jitter(mut self, sd: f64) -> Self {
        self.jitter_sd = sd;
        self
    }

    pub fn with_nll(mut self, nll: f64) -> Self {
        self.nll = nll;
        self
    }
}

impl Oracle for SurfaceEchoOracle {
    fn complete(&self, req: &OracleRequest) -> std::result::Result<OracleReply, OracleFailure> {
        let task =
            parse_prompt_task_2d(&req.prompt).map_err(|e| OracleFailure::Fatal(e.to_string()))?;
        let mut rng = call_rng(req);
        let normal = statrs::distribution::Normal::new(0.0, 1.0).expect("valid normal");
        let values: Vec<f64> = task
            .queries
            .iter()
            .map(|&q| {
                let jitter = if req.temperature > 0.0 && self.jitter_sd > 0.0 {
                    self.jitter_sd * normal.sample(&mut rng)
                } else {
                    0.0
                };
                self.objective.reward(q) + jitter
            })
            .collect();
        let nlls = vec![self.nll; values.len()];
        Ok(reply_for(&values, &nlls, task.joint, true))
    }

    fn name(&self) -> &str {
        "synthetic-surface-echo"
    }
}

/// Answers 2D prompts from a GP fitted to the parsed observations, with
/// inputs rescaled to the unit square by the given bounds; token NLL is an
/// affine function of the posterior standard deviation.
pub struct GpSurfaceOracle {
    pub bounds: [(f64, f64); 2],
    pub nll_base: f64,
    pub nll_scale: f64,
}

impl GpSurfaceOracle {
    pub fn new(bounds: [(f64, f64); 2]) -> Self {
        GpSurfaceOracle { bounds, nll_base: 0.1, nll_scale: 1.0 }
    }

    fn rescale(&self, x: [f64; 2]) -> Vec<f64> {
        x.iter()
            .zip(self.bounds.iter())
            .map(|(&v, &(lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }
}

impl Oracle for GpSurfaceOracle {
    fn complete(&self, req: &OracleRequest) -> std::result::Result<OracleReply, OracleFailure> {
        let task =
            parse_prompt_task_2d(&req.prompt).map_err(|e| OracleFailure::Fatal(e.to_string()))?;
        let points: Vec<(Vec<f64>, f64)> = task
            .observations
            .iter()
            .map(|&(x, y)| (self.rescale(x), y))
            .collect();
        let model = GpModel::fit(&points).map_err(|e| OracleFailure::Fatal(e.to_string()))?;
        let mut rng = call_rng(req);
        let normal = statrs::distribution::Normal::new(0.0, 1.0).expect("valid normal");
        let mut values = Vec::with_capacity(task.queries.len());
        let mut nlls = Vec::with_capacity(task.queries.len());
        for &q in &task.queries {
            let (mu, sigma) = model.posterior(&self.rescale(q));
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
        "synthetic-surface-gp"
    }
}

/// Answers design prompts from a GP fitted to the parsed (design, score)
/// observations, rescaled by the given bounds.
pub struct GpDesignOracle {
    pub bounds: Vec<(f64, f64)>,
    pub nll_base: f64,
    pub nll_scale: f64,
}

impl GpDesignOracle {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        GpDesignOracle { bounds, nll_base: 0.1, nll_scale: 1.0 }
    }

    fn rescale(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.bounds.iter())
            .map(|(&v, &(lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }
}

impl Oracle for GpDesignOracle {
    fn complete(&self, req: &OracleRequest) -> std::result::Result<OracleReply, OracleFailure> {
        let task =
            parse_design_task(&req.prompt).map_err(|e| OracleFailure::Fatal(e.to_string()))?;
        let points: Vec<(Vec<f64>, f64)> = task
            .observations
            .iter()
            .map(|(x, y)| (self.rescale(x), *y))
            .collect();
        let model = GpModel::fit(&points).map_err(|e| OracleFailure::Fatal(e.to_string()))?;
        let (mu, sigma) = model.posterior(&self.rescale(&task.query));
        let mut rng = call_rng(req);
        let normal = statrs::distribution::Normal::new(0.0, 1.0).expect("valid normal");
        let v = if req.temperature > 0.0 {
            mu + req.temperature * sigma * normal.sample(&mut rng)
        } else {
            mu
        };
        Ok(reply_for(&[v], &[self.nll_base + self.nll_scale * sigma], false, true))
    }

    fn name(&self) -> &str {
        "synthetic-design-gp"
    }
}
