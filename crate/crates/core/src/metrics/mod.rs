//! Belief metrics: accuracy, information-criterion family selection,
//! constraint-satisfaction rates, family resemblance, rank alignment with
//! reference ambiguity, and optimal-transport distances between samples.

pub mod csr;
pub mod fit;
pub mod ot;
pub mod rank;

pub use csr::{csr_feasible, csr_rate, CsrReport};
pub use ot::{hungarian, ot_curves, OtReport};
pub use rank::{average_ranks, spearman};

use crate::ambiguity::AmbiguityProfile;
use crate::elicit::BeliefSample;
use crate::families::{FamilyKind, ObservationSet, REPEATED_LOCATION_TOL};
use crate::{Error, Result};

/// Optimal-transport distance between the complete curves of two belief
/// samples (each completion with a value at every location is one curve).
pub fn ot_distance(a: &BeliefSample, b: &BeliefSample, seed: u64) -> Result<OtReport> {
    ot_curves(&a.curve_vectors(), &b.curve_vectors(), seed)
}

/// Floor added inside the AIC log to keep perfect fits finite.
pub const AIC_RSS_FLOOR: f64 = 1e-12;
/// Denominator guard for range normalization.
pub const NRMSE_RANGE_FLOOR: f64 = 1e-9;
/// Aggregate resemblance scale used when pooling heterogeneous cases.
pub const FRS_TAU_AGGREGATE: f64 = 0.64;

/// Range-normalized root-mean-square error of `pred` against `truth`.
pub fn nrmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidInput(format!(
            "length mismatch or empty: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    let lo = truth.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(mse.sqrt() / (hi - lo + NRMSE_RANGE_FLOOR))
}

/// One candidate family's fit under the information criterion.
#[derive(Debug, Clone)]
pub struct CandidateFit {
    pub kind: FamilyKind,
    pub params: Vec<f64>,
    pub rss: f64,
    /// Number of mean-function parameters.
    pub mean_params: usize,
    pub aic: f64,
    pub aicc: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SelectionReport {
    pub winner: FamilyKind,
    pub fits: Vec<CandidateFit>,
}

/// Candidate set for curve-shape selection, in tie-break order.
pub const SELECTION_CANDIDATES: [FamilyKind; 4] = [
    FamilyKind::Gaussian,
    FamilyKind::Sinusoidal,
    FamilyKind::Quadratic,
    FamilyKind::Linear,
];

fn mean_param_count(kind: FamilyKind) -> usize {
    match kind {
        FamilyKind::Linear => 2,
        FamilyKind::Quadratic => 3,
        FamilyKind::Gaussian | FamilyKind::Sinusoidal => 4,
        // Not part of the candidate set; counts follow their native forms.
        FamilyKind::Logistic | FamilyKind::Exponential => 3,
    }
}

/// Select the best-fitting candidate family by small-sample-corrected AIC.
///
/// Each candidate contributes its mean parameters plus one noise-variance
/// parameter to the penalty. Ties prefer fewer parameters, then the
/// candidate listed first.
pub fn select_family_aicc(xs: &[f64], ys: &[f64]) -> Result<SelectionReport> {
    let n = xs.len();
    if n != ys.len() || n < 6 {
        return Err(Error::InvalidInput(format!(
            "need >= 6 aligned points, got {} and {}",
            n,
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    let mut fits = Vec::with_capacity(SELECTION_CANDIDATES.len());
    for kind in SELECTION_CANDIDATES {
        let fitted = match kind {
            FamilyKind::Gaussian => fit::fit_gaussian_offset(xs, ys),
            FamilyKind::Sinusoidal => fit::fit_sinusoid(xs, ys),
            FamilyKind::Quadratic => {
                let (p, rss) = fit::fit_poly2(xs, ys);
                fit::NlsFit {
                    params: p.to_vec(),
                    rss,
                    converged: rss.is_finite(),
                }
            }
            FamilyKind::Linear => {
                let (p, rss) = fit::fit_line(xs, ys);
                fit::NlsFit {
                    params: p.to_vec(),
                    rss,
                    converged: rss.is_finite(),
                }
            }
            _ => unreachable!("not a selection candidate"),
        };
        let k_mean = mean_param_count(kind);
        let k_total = k_mean + 1;
        let rss = if fitted.rss.is_finite() {
            fitted.rss.max(0.0)
        } else {
            f64::INFINITY
        };
        let nf = n as f64;
        let aic = nf * (rss / nf + AIC_RSS_FLOOR).ln() + 2.0 * k_total as f64;
        let correction =
            2.0 * (k_total * (k_total + 1)) as f64 / (n.saturating_sub(k_total + 1)).max(1) as f64;
        fits.push(CandidateFit {
            kind,
            params: fitted.params,
            rss,
            mean_params: k_mean,
            aic,
            aicc: aic + correction,
            converged: fitted.converged,
        });
    }
    let winner = fits
        .iter()
        .min_by(|a, b| {
            a.aicc
                .total_cmp(&b.aicc)
                .then(a.mean_params.cmp(&b.mean_params))
        })
        .expect("candidate list is non-empty")
        .kind;
    Ok(SelectionReport { winner, fits })
}

/// Fraction of (winner, truth) pairs that agree.
pub fn winner_rate(pairs: &[(FamilyKind, FamilyKind)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no selection outcomes".into()));
    }
    Ok(pairs.iter().filter(|(w, t)| w == t).count() as f64 / pairs.len() as f64)
}

/// Interquartile range with linearly interpolated quartiles.
pub fn iqr(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InvalidInput("iqr needs >= 2 values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantile = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    };
    Ok(quantile(0.75) - quantile(0.25))
}

/// Per-case resemblance scale: squared interquartile range of the target
/// values.
pub fn frs_tau(target_ys: &[f64]) -> Result<f64> {
    let r = iqr(target_ys)?;
    Ok(r * r)
}

#[derive(Debug, Clone)]
pub struct FrsReport {
    /// exp(-mse / tau) of the best within-family fit.
    pub score: f64,
    pub mse: f64,
    /// False when every fit start diverged; the score then comes from the
    /// best available parameters.
    pub converged: bool,
}

/// Family resemblance: how closely the predicted points track the nearest
/// member of `kind`, on the scale `tau`.
pub fn frs(kind: FamilyKind, points: &[(f64, f64)], tau: f64) -> Result<FrsReport> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("need >= 2 points".into()));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidInput("non-finite point".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let fitted = fit::fit_family(kind, &xs, &ys);
    let mse = if fitted.rss.is_finite() {
        fitted.rss.max(0.0) / points.len() as f64
    } else {
        f64::INFINITY
    };
    Ok(FrsReport {
        score: (-mse / tau).exp(),
        mse,
        converged: fitted.converged,
    })
}

/// Rank agreement between elicited uncertainty proxies and the reference
/// ambiguity profile.
#[derive(Debug, Clone)]
pub struct AlignmentReport {
    /// Spearman rho of sampling variance against ambiguity variance.
    pub rho_variance: f64,
    /// Spearman rho of mean token NLL against ambiguity variance; absent
    /// when the oracle exposes no log-probabilities.
    pub rho_nll: Option<f64>,
    /// Grid locations used after excluding observed anchors.
    pub locations_used: usize,
}

fn keep_mask(profile: &AmbiguityProfile, anchors: &ObservationSet) -> Vec<bool> {
    profile
        .grid
        .locations()
        .iter()
        .map(|&x| {
            !anchors
                .points()
                .iter()
                .any(|&(ax, _)| (x - ax).abs() <= REPEATED_LOCATION_TOL)
        })
        .collect()
}

fn masked(values: &[f64], mask: &[bool]) -> Vec<f64> {
    values
        .iter()
        .zip(mask)
        .filter_map(|(&v, &keep)| keep.then_some(v))
        .collect()
}

/// Spearman rho of one per-location uncertainty vector against the profile's
/// variance, excluding grid locations that coincide with observed anchors.
pub fn alignment_rho(
    uncertainty: &[f64],
    profile: &AmbiguityProfile,
    anchors: &ObservationSet,
) -> Result<f64> {
    if uncertainty.len() != profile.grid.len() {
        return Err(Error::InvalidInput(format!(
            "uncertainty length {} does not match grid length {}",
            uncertainty.len(),
            profile.grid.len()
        )));
    }
    let mask = keep_mask(profile, anchors);
    spearman(&masked(uncertainty, &mask), &masked(&profile.variance, &mask))
}

/// Full alignment report from both uncertainty proxies.
pub fn alignment(
    sampling_variance: &[f64],
    mean_nll: Option<&[f64]>,
    profile: &AmbiguityProfile,
    anchors: &ObservationSet,
) -> Result<AlignmentReport> {
    let rho_variance = alignment_rho(sampling_variance, profile, anchors)?;
    let rho_nll = match mean_nll {
        Some(nll) => Some(alignment_rho(nll, profile, anchors)?),
        None => None,
    };
    let used = keep_mask(profile, anchors).iter().filter(|k| **k).count();
    Ok(AlignmentReport {
        rho_variance,
        rho_nll,
        locations_used: used,
    })
}
