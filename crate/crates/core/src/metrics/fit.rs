//! Least-squares curve fitting: closed forms for the polynomial families and
//! damped Gauss-Newton (Levenberg-Marquardt style) with coarse sweeps over
//! the nonlinear parameter for the rest.

use nalgebra::{DMatrix, DVector};

use crate::families::FamilyKind;

#[derive(Debug, Clone)]
pub struct NlsFit {
    pub params: Vec<f64>,
    pub rss: f64,
    /// False when no start produced a finite residual (diverged fit).
    pub converged: bool,
}

fn rss_of(xs: &[f64], ys: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - f(x);
            r * r
        })
        .sum()
}

/// Ordinary least squares line. Returns ([slope, intercept], rss).
pub fn fit_line(xs: &[f64], ys: &[f64]) -> ([f64; 2], f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rss = rss_of(xs, ys, |x| slope * x + intercept);
    ([slope, intercept], rss)
}

/// Least-squares parabola a x^2 + b x + c via normal equations.
pub fn fit_poly2(xs: &[f64], ys: &[f64]) -> ([f64; 3], f64) {
    let n = xs.len();
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => xs[i] * xs[i],
        1 => xs[i],
        _ => 1.0,
    });
    let rhs = DVector::from_column_slice(ys);
    let jtj = design.transpose() * &design;
    let jty = design.transpose() * rhs;
    let sol = jtj
        .lu()
        .solve(&jty)
        .unwrap_or_else(|| DVector::zeros(3));
    let p = [sol[0], sol[1], sol[2]];
    let rss = rss_of(xs, ys, |x| (p[0] * x + p[1]) * x + p[2]);
    (p, rss)
}

/// Damped least squares from one start.
pub(crate) fn lm_fit<M, J>(
    xs: &[f64],
    ys: &[f64],
    p0: &[f64],
    model: M,
    jac: J,
    max_iter: usize,
) -> NlsFit
where
    M: Fn(&[f64], f64) -> f64,
    J: Fn(&[f64], f64) -> Vec<f64>,
{
    let np = p0.len();
    let mut p = p0.to_vec();
    let mut rss = rss_of(xs, ys, |x| model(&p, x));
    if !rss.is_finite() {
        return NlsFit {
            params: p,
            rss: f64::INFINITY,
            converged: false,
        };
    }
    let mut lambda = 1e-3;
    for _ in 0..max_iter {
        let mut jtj = DMatrix::<f64>::zeros(np, np);
        let mut jtr = DVector::<f64>::zeros(np);
        for (&x, &y) in xs.iter().zip(ys) {
            let ji = jac(&p, x);
            let r = y - model(&p, x);
            for a in 0..np {
                jtr[a] += ji[a] * r;
                for b in 0..np {
                    jtj[(a, b)] += ji[a] * ji[b];
                }
            }
        }
        if !jtr.iter().all(|v| v.is_finite()) {
            break;
        }
        if jtr.amax() < 1e-13 {
            break; // gradient flat: at a stationary point
        }
        let mut improved = false;
        for _ in 0..16 {
            let mut damped = jtj.clone();
            for a in 0..np {
                damped[(a, a)] += lambda * jtj[(a, a)].max(1e-12);
            }
            let Some(delta) = damped.lu().solve(&jtr) else {
                lambda *= 5.0;
                continue;
            };
            let cand: Vec<f64> = p.iter().zip(delta.iter()).map(|(v, d)| v + d).collect();
            let cand_rss = rss_of(xs, ys, |x| model(&cand, x));
            if cand_rss.is_finite() && cand_rss <= rss {
                let step = delta.amax();
                let gain = rss - cand_rss;
                p = cand;
                rss = cand_rss;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if step < 1e-13 || gain <= 1e-15 * (rss + 1e-300) {
                    return NlsFit {
                        params: p,
                        rss,
                        converged: true,
                    };
                }
                break;
            }
            lambda *= 5.0;
            if lambda > 1e12 {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    NlsFit {
        params: p,
        rss,
        converged: rss.is_finite(),
    }
}

fn best_of(fits: impl IntoIterator<Item = NlsFit>) -> NlsFit {
    let mut best: Option<NlsFit> = None;
    for fit in fits {
        let better = match &best {
            None => true,
            Some(b) => fit.rss < b.rss,
        };
        if better {
            best = Some(fit);
        }
    }
    best.unwrap_or(NlsFit {
        params: Vec::new(),
        rss: f64::INFINITY,
        converged: false,
    })
}

fn gaussian_peak_model(p: &[f64], x: f64) -> f64 {
    // p = [amplitude, center, width, offset?]
    let d = x - p[1];
    let w2 = p[2] * p[2];
    let base = p[0] * (-d * d / (2.0 * w2)).exp();
    if p.len() > 3 {
        base + p[3]
    } else {
        base
    }
}

fn gaussian_jac(p: &[f64], x: f64) -> Vec<f64> {
    let d = x - p[1];
    let w2 = p[2] * p[2];
    let e = (-d * d / (2.0 * w2)).exp();
    let mut j = vec![e, p[0] * e * d / w2, p[0] * e * d * d / (p[2] * w2)];
    if p.len() > 3 {
        j.push(1.0);
    }
    j
}

/// Multi-start starts for a bell-shaped fit: peak and valley orientations,
/// center at the extremum and at the midpoint, two width scales.
fn gaussian_starts(xs: &[f64], ys: &[f64], with_offset: bool) -> Vec<Vec<f64>> {
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut x_at_max, mut x_at_min) = (xs[0], xs[0]);
    for (&x, &y) in xs.iter().zip(ys) {
        if y > ymax {
            ymax = y;
            x_at_max = x;
        }
        if y < ymin {
            ymin = y;
            x_at_min = x;
        }
    }
    let span = xs[xs.len() - 1] - xs[0];
    let mid = 0.5 * (xs[0] + xs[xs.len() - 1]);
    let amp = (ymax - ymin).max(1e-3);
    let mut starts = Vec::new();
    for &w in &[1.0, (span / 4.0).max(0.5)] {
        for &(a, c, d) in &[
            (amp, x_at_max, ymin),
            (amp, mid, ymin),
            (-amp, x_at_min, ymax),
            (-amp, mid, ymax),
        ] {
            let mut p = vec![a, c, w];
            if with_offset {
                p.push(d);
            }
            starts.push(p);
        }
    }
    starts
}

/// Fit amplitude * exp(-(x-c)^2 / (2 w^2)) + offset (4 mean parameters).
pub fn fit_gaussian_offset(xs: &[f64], ys: &[f64]) -> NlsFit {
    best_of(
        gaussian_starts(xs, ys, true)
            .into_iter()
            .map(|p0| lm_fit(xs, ys, &p0, gaussian_peak_model, gaussian_jac, 200)),
    )
}

/// Fit the native 3-parameter gaussian family member.
pub fn fit_gaussian_native(xs: &[f64], ys: &[f64]) -> NlsFit {
    best_of(
        gaussian_starts(xs, ys, false)
            .into_iter()
            .map(|p0| lm_fit(xs, ys, &p0, gaussian_peak_model, gaussian_jac, 200)),
    )
}

fn sin_phase_model(p: &[f64], x: f64) -> f64 {
    // p = [amplitude, frequency, phase_angle, offset]
    p[0] * (p[1] * x + p[2]).sin() + p[3]
}

fn sin_phase_jac(p: &[f64], x: f64) -> Vec<f64> {
    let arg = p[1] * x + p[2];
    vec![arg.sin(), p[0] * x * arg.cos(), p[0] * arg.cos(), 1.0]
}

/// For a fixed frequency, amplitude/phase/offset are linear in
/// (a sin(fx) + b cos(fx) + d); solve exactly and return ([a, b, d], rss).
fn solve_sin_linear(xs: &[f64], ys: &[f64], freq: f64) -> ([f64; 3], f64) {
    let n = xs.len();
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => (freq * xs[i]).sin(),
        1 => (freq * xs[i]).cos(),
        _ => 1.0,
    });
    let rhs = DVector::from_column_slice(ys);
    let jtj = design.transpose() * &design;
    let jty = design.transpose() * rhs;
    let sol = jtj.lu().solve(&jty).unwrap_or_else(|| DVector::zeros(3));
    let p = [sol[0], sol[1], sol[2]];
    let rss = rss_of(xs, ys, |x| {
        p[0] * (freq * x).sin() + p[1] * (freq * x).cos() + p[2]
    });
    (p, rss)
}

/// Fit amplitude * sin(f x + phase) + offset. Coarse frequency sweep over
/// [0.1, 3.0] (30 steps) with exact linear subproblems, then damped
/// refinement from the best few frequencies.
pub fn fit_sinusoid(xs: &[f64], ys: &[f64]) -> NlsFit {
    let mut swept: Vec<(f64, [f64; 3], f64)> = (0..30)
        .map(|i| {
            let f = 0.1 + (3.0 - 0.1) * i as f64 / 29.0;
            let (p, rss) = solve_sin_linear(xs, ys, f);
            (f, p, rss)
        })
        .collect();
    swept.sort_by(|a, b| a.2.total_cmp(&b.2));
    best_of(swept.into_iter().take(3).map(|(f, lin, _)| {
        let amp = (lin[0] * lin[0] + lin[1] * lin[1]).sqrt();
        let phase = lin[1].atan2(lin[0]);
        let p0 = vec![amp.max(1e-6), f, phase, lin[2]];
        lm_fit(xs, ys, &p0, sin_phase_model, sin_phase_jac, 200)
    }))
}

fn logistic_model(p: &[f64], x: f64) -> f64 {
    p[0] / (1.0 + (-p[1] * (x - p[2])).exp())
}

fn logistic_jac(p: &[f64], x: f64) -> Vec<f64> {
    let s = 1.0 / (1.0 + (-p[1] * (x - p[2])).exp());
    vec![s, p[0] * s * (1.0 - s) * (x - p[2]), -p[0] * s * (1.0 - s) * p[1]]
}

/// Fit the native logistic family member L / (1 + exp(-k (x - x0))).
pub fn fit_logistic_native(xs: &[f64], ys: &[f64]) -> NlsFit {
    let ymax = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ymin = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let level = (ymax.abs().max(1e-3)) * 1.05;
    let half = 0.5 * (ymin + ymax);
    let x0 = xs
        .iter()
        .zip(ys)
        .min_by(|a, b| (a.1 - half).abs().total_cmp(&(b.1 - half).abs()))
        .map(|(&x, _)| x)
        .unwrap_or(0.0);
    let starts: Vec<Vec<f64>> = [0.5, 1.0, 2.0, -0.5, -1.0, -2.0]
        .iter()
        .map(|&k| vec![level, k, x0])
        .collect();
    best_of(
        starts
            .into_iter()
            .map(|p0| lm_fit(xs, ys, &p0, logistic_model, logistic_jac, 200)),
    )
}

fn exp_model(p: &[f64], x: f64) -> f64 {
    p[0] * (p[1] * x).exp() + p[2]
}

fn exp_jac(p: &[f64], x: f64) -> Vec<f64> {
    let e = (p[1] * x).exp();
    vec![e, p[0] * x * e, 1.0]
}

/// Fit A exp(r x) + b: rate sweep with exact linear subproblems, then
/// damped refinement.
pub fn fit_exponential_native(xs: &[f64], ys: &[f64]) -> NlsFit {
    let n = xs.len();
    let mut swept: Vec<(f64, [f64; 2], f64)> = (0..33)
        .map(|i| {
            let r = -0.8 + 1.6 * i as f64 / 32.0;
            let design = DMatrix::from_fn(n, 2, |row, j| if j == 0 { (r * xs[row]).exp() } else { 1.0 });
            let rhs = DVector::from_column_slice(ys);
            let jtj = design.transpose() * &design;
            let jty = design.transpose() * rhs;
            let sol = jtj.lu().solve(&jty).unwrap_or_else(|| DVector::zeros(2));
            let rss = rss_of(xs, ys, |x| sol[0] * (r * x).exp() + sol[1]);
            (r, [sol[0], sol[1]], rss)
        })
        .collect();
    swept.sort_by(|a, b| a.2.total_cmp(&b.2));
    best_of(swept.into_iter().take(3).map(|(r, lin, _)| {
        let p0 = vec![lin[0], r, lin[1]];
        lm_fit(xs, ys, &p0, exp_model, exp_jac, 200)
    }))
}

/// Best fit within a family's own parameterization; used by family
/// resemblance scoring. Returns parameters in the family's canonical order.
pub fn fit_family(kind: FamilyKind, xs: &[f64], ys: &[f64]) -> NlsFit {
    match kind {
        FamilyKind::Linear => {
            let (p, rss) = fit_line(xs, ys);
            NlsFit {
                params: p.to_vec(),
                rss,
                converged: rss.is_finite(),
            }
        }
        FamilyKind::Quadratic => {
            let (p, rss) = fit_poly2(xs, ys);
            NlsFit {
                params: p.to_vec(),
                rss,
                converged: rss.is_finite(),
            }
        }
        FamilyKind::Gaussian => fit_gaussian_native(xs, ys),
        FamilyKind::Logistic => fit_logistic_native(xs, ys),
        FamilyKind::Exponential => fit_exponential_native(xs, ys),
        FamilyKind::Sinusoidal => {
            // Convert the fitted phase angle to the family's shift form
            // A sin(f (x - p)) + b, i.e. p = -phase / f.
            let mut fit = fit_sinusoid(xs, ys);
            if fit.params.len() == 4 && fit.params[1].abs() > 1e-12 {
                fit.params[2] = -fit.params[2] / fit.params[1];
            }
            fit
        }
    }
}
