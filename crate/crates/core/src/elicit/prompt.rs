//! Prompt rendering for every protocol, style, and structure condition.

use serde::{Deserialize, Serialize};

use crate::families::{FamilyKind, FunctionInstance, ObservationSet, Params};
use crate::{Error, Result};

/// How query locations are posed to the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Each location asked in its own completion.
    Pointwise,
    /// The whole query list answered in one completion.
    Joint,
}

/// Warning-sentence condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Neutral,
    /// Task-relevant ambiguity warning.
    Underdetermined,
    /// Warning-shaped sentence with no task relevance.
    UnrelatedWarning,
}

/// How much verbal structural information the prompt carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Unknown,
    TellNonlinear,
    TellType,
    TellTypeStructure,
    TellTypeParams,
    WrongType,
}

pub const UNDERDETERMINED_WARNING: &str = "Warning: this description is underdetermined. \
With only a few points, many functions of the stated family can still fit the observations.";

pub const UNRELATED_WARNING: &str = "Warning: descriptive details such as color, texture, \
and smell can matter when discussing food.";

/// Full prompt condition: protocol, style, structure, and formatting knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub protocol: Protocol,
    pub style: Style,
    pub structure: Structure,
    /// Decimal places used for observations, queries, and parameter values.
    pub precision: usize,
    /// Declared family label for the wrong-type condition.
    pub wrong_type: Option<FamilyKind>,
    /// Overrides the derived qualitative hint in the type+structure condition.
    pub structural_hint: Option<String>,
    /// Free-form block appended after the warnings (e.g. domain physics).
    pub extra_text: Option<String>,
}

impl PromptSpec {
    pub fn new(protocol: Protocol, style: Style, structure: Structure) -> Self {
        PromptSpec {
            protocol,
            style,
            structure,
            precision: 2,
            wrong_type: None,
            structural_hint: None,
            extra_text: None,
        }
    }

    pub fn with_wrong_type(mut self, kind: FamilyKind) -> Self {
        self.wrong_type = Some(kind);
        self
    }
}

/// Query input for one oracle call.
#[derive(Debug, Clone, Copy)]
pub enum QueryInput<'a> {
    One(f64),
    Many(&'a [f64]),
}

fn fmt_num(v: f64, precision: usize) -> String {
    format!("{v:.precision$}")
}

/// Default qualitative hint derived from the sampled instance: a coarse
/// claim about location, orientation, or period, never exact parameters.
pub fn derived_structural_hint(truth: &FunctionInstance) -> String {
    match truth.params {
        Params::Gaussian { center, .. } => {
            format!("Structure: the curve has a single peak near x={center:.1}.")
        }
        Params::Logistic { midpoint, .. } => {
            format!("Structure: the transition midpoint is near x={midpoint:.1}.")
        }
        Params::Linear { slope, .. } => {
            if slope >= 0.0 {
                "Structure: the line is non-decreasing.".to_string()
            } else {
                "Structure: the line is decreasing.".to_string()
            }
        }
        Params::Quadratic { a, .. } => {
            if a > 0.0 {
                "Structure: the parabola opens upward.".to_string()
            } else {
                "Structure: the parabola opens downward.".to_string()
            }
        }
        Params::Sinusoidal { frequency, .. } => {
            let period = std::f64::consts::TAU / frequency;
            format!("Structure: the period is approximately {period:.1}.")
        }
        Params::Exponential { rate, .. } => {
            if rate > 0.0 {
                "Structure: the curve grows as x increases.".to_string()
            } else {
                "Structure: the curve decays as x increases.".to_string()
            }
        }
    }
}

fn params_string(truth: &FunctionInstance, precision: usize) -> String {
    truth
        .params
        .named()
        .into_iter()
        .map(|(name, v)| format!("{name}={}", fmt_num(v, precision)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn structure_block(
    spec: &PromptSpec,
    truth: Option<&FunctionInstance>,
) -> Result<String> {
    let need_truth = || truth.ok_or(Error::MissingStructureInfo);
    Ok(match spec.structure {
        Structure::Unknown => "IMPORTANT: The underlying function type is unknown.".to_string(),
        Structure::TellNonlinear => {
            "IMPORTANT: The underlying function is nonlinear, not a straight line.".to_string()
        }
        Structure::TellType => {
            let t = need_truth()?;
            format!(
                "IMPORTANT: The underlying function is {}.\nFormula family: {}.",
                t.kind.description(),
                t.kind.formula()
            )
        }
        Structure::TellTypeStructure => {
            let t = need_truth()?;
            let hint = spec
                .structural_hint
                .clone()
                .unwrap_or_else(|| derived_structural_hint(t));
            format!(
                "IMPORTANT: The underlying function is {}.\nFormula family: {}.\n{hint}",
                t.kind.description(),
                t.kind.formula()
            )
        }
        Structure::TellTypeParams => {
            let t = need_truth()?;
            format!(
                "IMPORTANT: Here are example points from a {} function.\nThe exact formula is {}. Parameters: {}.",
                t.kind.description(),
                t.kind.formula(),
                params_string(t, spec.precision)
            )
        }
        Structure::WrongType => {
            let wrong = spec.wrong_type.ok_or(Error::MissingStructureInfo)?;
            if let Some(t) = truth {
                if t.kind == wrong {
                    return Err(Error::InvalidInput(format!(
                        "wrong-type label {} equals the true family",
                        wrong
                    )));
                }
            }
            format!(
                "IMPORTANT: The underlying function is {}.",
                wrong.description()
            )
        }
    })
}

fn style_block(style: Style) -> Option<&'static str> {
    match style {
        Style::Neutral => None,
        Style::Underdetermined => Some(UNDERDETERMINED_WARNING),
        Style::UnrelatedWarning => Some(UNRELATED_WARNING),
    }
}

fn observation_lines(obs: &ObservationSet, precision: usize) -> String {
    obs.points()
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            format!(
                "[{}] x={} y={}",
                i + 1,
                fmt_num(x, precision),
                fmt_num(y, precision)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Render the full prompt for one oracle call.
///
/// POINTWISE takes exactly one query location, JOINT the whole list. The
/// structure conditions that describe the true family need `truth`; rendering
/// them without it is a `MissingStructureInfo` error.
pub fn render_prompt(
    spec: &PromptSpec,
    obs: &ObservationSet,
    queries: QueryInput<'_>,
    truth: Option<&FunctionInstance>,
) -> Result<String> {
    let mut blocks: Vec<String> = Vec::new();
    match spec.protocol {
        Protocol::Pointwise => {
            blocks.push(
                "You are a function approximator. Given examples of (x, y) pairs from a function, predict the y value for a new x."
                    .to_string(),
            );
            blocks.push(
                "Rules:\n1. Output only the numeric y value.\n2. Use the same precision as the examples.\n3. Do not include explanation or extra text."
                    .to_string(),
            );
        }
        Protocol::Joint => {
            blocks.push(
                "You are a function approximator. Return strict JSON only. Output must contain exactly one key \"y\" with a list of numeric values. The list order must match the query list order."
                    .to_string(),
            );
        }
    }
    blocks.push(structure_block(spec, truth)?);
    if let Some(w) = style_block(spec.style) {
        blocks.push(w.to_string());
    }
    if let Some(extra) = &spec.extra_text {
        blocks.push(extra.clone());
    }
    let mut examples = String::from("Here are example points from an unknown function:");
    if !obs.is_empty() {
        examples.push_str("\n\n");
        examples.push_str(&observation_lines(obs, spec.precision));
    }
    blocks.push(examples);

    match (spec.protocol, queries) {
        (Protocol::Pointwise, QueryInput::One(x)) => {
            blocks.push(format!(
                "Predict the y value for:\n\nx={}\ny=",
                fmt_num(x, spec.precision)
            ));
        }
        (Protocol::Joint, QueryInput::Many(xs)) => {
            if xs.is_empty() {
                return Err(Error::InvalidInput("joint query list is empty".into()));
            }
            let list = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| format!("[{}] x={}", i + 1, fmt_num(x, spec.precision)))
                .collect::<Vec<_>>()
                .join("\n");
            let tail = if xs.len() == 1 {
                "{\"y\":[y1]}".to_string()
            } else {
                format!("{{\"y\":[y1,...,y{}]}}", xs.len())
            };
            blocks.push(format!(
                "Predict y for each query in order.\n\nQUERY LIST:\n{list}\n\nReturn: {tail}"
            ));
        }
        (Protocol::Pointwise, QueryInput::Many(_)) => {
            return Err(Error::InvalidInput(
                "pointwise rendering takes exactly one query".into(),
            ));
        }
        (Protocol::Joint, QueryInput::One(_)) => {
            return Err(Error::InvalidInput(
                "joint rendering takes the full query list".into(),
            ));
        }
    }
    Ok(blocks.join("\n\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::sample_instance;

    fn obs_one() -> ObservationSet {
        ObservationSet::new(vec![(0.0, 1.0)]).unwrap()
    }

    #[test]
    fn pointwise_neutral_unknown_shape() {
        let spec = PromptSpec::new(Protocol::Pointwise, Style::Neutral, Structure::Unknown);
        let p = render_prompt(&spec, &obs_one(), QueryInput::One(0.5), None).unwrap();
        assert!(p.contains("x=0.00 y=1.00"), "{p}");
        assert!(p.contains("IMPORTANT: The underlying function type is unknown."));
        assert!(p.contains("Output only the numeric y value."));
        assert!(p.ends_with("y="), "{p}");
        assert!(!p.contains("Warning:"));
    }

    #[test]
    fn joint_return_instruction_counts_queries() {
        let spec = PromptSpec::new(Protocol::Joint, Style::Neutral, Structure::Unknown);
        let xs = [-0.5, 0.5, 1.5, -1.5];
        let p = render_prompt(&spec, &obs_one(), QueryInput::Many(&xs), None).unwrap();
        assert!(p.contains("QUERY LIST:"));
        assert!(p.contains("[4] x=-1.50"));
        assert!(p.contains("Return: {\"y\":[y1,...,y4]}"), "{p}");
        assert!(p.contains("strict JSON"));
    }

    #[test]
    fn style_warnings_inserted_verbatim() {
        let spec = PromptSpec::new(
            Protocol::Pointwise,
            Style::Underdetermined,
            Structure::Unknown,
        );
        let p = render_prompt(&spec, &obs_one(), QueryInput::One(0.0), None).unwrap();
        assert!(p.contains(UNDERDETERMINED_WARNING));
        let spec = PromptSpec::new(
            Protocol::Pointwise,
            Style::UnrelatedWarning,
            Structure::Unknown,
        );
        let p = render_prompt(&spec, &obs_one(), QueryInput::One(0.0), None).unwrap();
        assert!(p.contains(UNRELATED_WARNING));
    }

    #[test]
    fn structure_conditions_need_truth() {
        for structure in [
            Structure::TellType,
            Structure::TellTypeStructure,
            Structure::TellTypeParams,
        ] {
            let spec = PromptSpec::new(Protocol::Pointwise, Style::Neutral, structure);
            let r = render_prompt(&spec, &obs_one(), QueryInput::One(0.0), None);
            assert!(matches!(r, Err(Error::MissingStructureInfo)), "{structure:?}");
        }
    }

    #[test]
    fn tell_type_params_renders_parameters() {
        let truth = sample_instance(FamilyKind::Gaussian, 0);
        let spec = PromptSpec::new(Protocol::Pointwise, Style::Neutral, Structure::TellTypeParams);
        let p = render_prompt(&spec, &obs_one(), QueryInput::One(0.0), Some(&truth)).unwrap();
        assert!(p.contains("The exact formula is y = A * exp(-(x - c)^2 / (2 * w^2))."));
        assert!(p.contains("Parameters: A="), "{p}");
    }

    #[test]
    fn wrong_type_must_differ_from_truth() {
        let truth = sample_instance(FamilyKind::Gaussian, 0);
        let spec = PromptSpec::new(Protocol::Pointwise, Style::Neutral, Structure::WrongType)
            .with_wrong_type(FamilyKind::Gaussian);
        let r = render_prompt(&spec, &obs_one(), QueryInput::One(0.0), Some(&truth));
        assert!(matches!(r, Err(Error::InvalidInput(_))));

        let spec = spec.with_wrong_type(FamilyKind::Linear);
        let p = render_prompt(&spec, &obs_one(), QueryInput::One(0.0), Some(&truth)).unwrap();
        assert!(p.contains("IMPORTANT: The underlying function is linear."));

        // Undeclared wrong label cannot render.
        let spec = PromptSpec::new(Protocol::Pointwise, Style::Neutral, Structure::WrongType);
        let r = render_prompt(&spec, &obs_one(), QueryInput::One(0.0), Some(&truth));
        assert!(matches!(r, Err(Error::MissingStructureInfo)));
    }

    #[test]
    fn derived_hints_are_qualitative() {
        let truth = sample_instance(FamilyKind::Quadratic, 1);
        let hint = derived_structural_hint(&truth);
        assert!(hint.starts_with("Structure: the parabola opens"));
        let spec = PromptSpec::new(
            Protocol::Pointwise,
            Style::Neutral,
            Structure::TellTypeStructure,
        );
        let p = render_prompt(&spec, &obs_one(), QueryInput::One(0.0), Some(&truth)).unwrap();
        assert!(p.contains(&hint));
    }

    #[test]
    fn protocol_query_shape_mismatch_rejected() {
        let spec = PromptSpec::new(Protocol::Pointwise, Style::Neutral, Structure::Unknown);
        assert!(render_prompt(&spec, &obs_one(), QueryInput::Many(&[0.0]), None).is_err());
        let spec = PromptSpec::new(Protocol::Joint, Style::Neutral, Structure::Unknown);
        assert!(render_prompt(&spec, &obs_one(), QueryInput::One(0.0), None).is_err());
        assert!(render_prompt(&spec, &obs_one(), QueryInput::Many(&[]), None).is_err());
    }

    #[test]
    fn precision_controls_rendering() {
        let mut spec = PromptSpec::new(Protocol::Pointwise, Style::Neutral, Structure::Unknown);
        spec.precision = 3;
        let obs = ObservationSet::new(vec![(1.0, 2.0)]).unwrap();
        let p = render_prompt(&spec, &obs, QueryInput::One(0.25), None).unwrap();
        assert!(p.contains("x=1.000 y=2.000"));
        assert!(p.contains("x=0.250"));
    }
}
