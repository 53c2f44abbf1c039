//! Constraint-satisfaction predicates: could a predicted point, together with
//! two anchor observations, belong to a single member of the stated family?

use crate::families::{FamilyKind, REPEATED_LOCATION_TOL};
use crate::{Error, Result};

/// Tolerance on the anchor-line deviation for the linear predicate.
pub const CSR_LINEAR_TOL: f64 = 1e-3;
/// Curvature tolerance for the log-quadratic gaussian predicate.
pub const CSR_GAUSSIAN_CURVATURE_TOL: f64 = 1e-12;
/// Tolerance on logit-space collinearity for the logistic predicate.
pub const CSR_LOGISTIC_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CsrReport {
    /// Fraction of predictions judged feasible.
    pub rate: f64,
    pub verdicts: Vec<bool>,
}

fn sorted3(points: [(f64, f64); 3]) -> [(f64, f64); 3] {
    let mut p = points;
    p.sort_by(|a, b| a.0.total_cmp(&b.0));
    p
}

/// Leading coefficient of the quadratic interpolating three distinct-x
/// points, via second-order divided differences.
fn interpolant_curvature(p: [(f64, f64); 3]) -> f64 {
    let [(x1, y1), (x2, y2), (x3, y3)] = p;
    let d12 = (y2 - y1) / (x2 - x1);
    let d23 = (y3 - y2) / (x3 - x2);
    (d23 - d12) / (x3 - x1)
}

/// Collinearity residual of the three logit-transformed points for an
/// assumed upper asymptote `level`: the middle point's deviation from the
/// chord through the outer two.
fn logistic_residual(p: [(f64, f64); 3], level: f64) -> f64 {
    let z = |y: f64| (y / (level - y)).ln();
    let [(x1, y1), (x2, y2), (x3, y3)] = p;
    let (z1, z2, z3) = (z(y1), z(y2), z(y3));
    let chord = z1 + (z3 - z1) * (x2 - x1) / (x3 - x1);
    (z2 - chord).abs()
}

/// Minimize `f` on [a, b] by golden-section search.
fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let inv_phi = 0.618_033_988_749_894_9;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    fc.min(fd)
}

/// Smallest logit-collinearity residual over upper asymptotes in
/// (ymax * (1 + 1e-6), ymax * 100]: coarse log-spaced scan, then
/// golden-section refinement around the best cell.
fn best_logistic_residual(p: [(f64, f64); 3]) -> f64 {
    let ymax = p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = ymax * (1.0 + 1e-6);
    let hi = ymax * 100.0;
    let n = 128usize;
    let level_at = |i: usize| lo * (hi / lo).powf(i as f64 / n as f64);
    let mut best_i = 0usize;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let r = logistic_residual(p, level_at(i));
        if r < best {
            best = r;
            best_i = i;
        }
    }
    let a = level_at(best_i.saturating_sub(1));
    let b = level_at((best_i + 1).min(n));
    best.min(golden_min(|l| logistic_residual(p, l), a, b, 60))
}

/// Feasibility of one prediction against two anchors under `kind`.
///
/// Anchors must have distinct x. A non-finite prediction is infeasible. A
/// prediction at an anchor's x location is feasible exactly when its value
/// matches that anchor to the repeated-location tolerance, regardless of
/// family.
pub fn csr_feasible(
    kind: FamilyKind,
    anchors: [(f64, f64); 2],
    pred: (f64, f64),
) -> Result<bool> {
    let [(ax1, ay1), (ax2, ay2)] = anchors;
    if ![ax1, ay1, ax2, ay2].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite anchor".into()));
    }
    if (ax1 - ax2).abs() <= REPEATED_LOCATION_TOL {
        return Err(Error::InvalidInput(
            "anchors must have distinct x locations".into(),
        ));
    }
    let (px, py) = pred;
    if !px.is_finite() || !py.is_finite() {
        return Ok(false);
    }
    for &(ax, ay) in &anchors {
        if (px - ax).abs() <= REPEATED_LOCATION_TOL {
            return Ok((py - ay).abs() <= REPEATED_LOCATION_TOL);
        }
    }
    let triple = sorted3([anchors[0], anchors[1], pred]);
    Ok(match kind {
        FamilyKind::Linear => {
            let slope = (ay2 - ay1) / (ax2 - ax1);
            let on_line = ay1 + slope * (px - ax1);
            (py - on_line).abs() <= CSR_LINEAR_TOL
        }
        FamilyKind::Gaussian => {
            if triple.iter().any(|q| q.1 <= 0.0) {
                false
            } else {
                let logged = triple.map(|(x, y)| (x, y.ln()));
                interpolant_curvature(logged) < CSR_GAUSSIAN_CURVATURE_TOL
            }
        }
        FamilyKind::Logistic => {
            if triple.iter().any(|q| q.1 <= 0.0) {
                false
            } else {
                best_logistic_residual(triple) <= CSR_LOGISTIC_TOL
            }
        }
        // Families with three or more free mean parameters interpolate any
        // three distinct-x finite points.
        FamilyKind::Quadratic | FamilyKind::Exponential | FamilyKind::Sinusoidal => true,
    })
}

/// Feasibility rate of a batch of predictions against shared anchors.
pub fn csr_rate(
    kind: FamilyKind,
    anchors: [(f64, f64); 2],
    preds: &[(f64, f64)],
) -> Result<CsrReport> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("no predictions".into()));
    }
    let verdicts = preds
        .iter()
        .map(|&p| csr_feasible(kind, anchors, p))
        .collect::<Result<Vec<bool>>>()?;
    let rate = verdicts.iter().filter(|v| **v).count() as f64 / verdicts.len() as f64;
    Ok(CsrReport { rate, verdicts })
}
