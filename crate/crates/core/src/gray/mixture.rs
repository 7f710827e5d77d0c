//! Two-component Beta mixture over certainty values, fitted by EM.
//!
//! The M-step solves the weighted Beta likelihood equations
//! `ψ(a) − ψ(a+b) = E[ln x]`, `ψ(b) − ψ(a+b) = E[ln(1−x)]` by Newton's method.
//! The threshold is where the two weighted densities cross between the
//! component means.

use serde::Serialize;
use statrs::function::gamma::{digamma, ln_gamma};

use super::{CertaintySeries, GrayError, Result};

pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-8;

/// Values are clamped into `[EDGE, 1 − EDGE]` so that `ln x` and `ln(1 − x)` exist.
const EDGE: f64 = 1e-6;
const MIN_SHAPE: f64 = 1e-3;
const MAX_SHAPE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaComponent {
    pub alpha: f64,
    pub beta: f64,
    pub weight: f64,
}

impl BetaComponent {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    /// `ln(weight × pdf(x))`.
    fn ln_weighted_pdf(&self, x: f64) -> f64 {
        self.weight.ln() + (self.alpha - 1.0) * x.ln() + (self.beta - 1.0) * (1.0 - x).ln()
            - ln_beta(self.alpha, self.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureFit {
    /// Lower-mean component (the gray-area cluster) first.
    pub components: [BetaComponent; 2],
    pub fitted_threshold: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits the mixture and returns the density-crossing threshold.
///
/// Non-convergence within `max_iter` is reported through `converged`; only
/// degenerate input is an error.
pub fn fit_threshold(c: &CertaintySeries, max_iter: usize, tol: f64) -> Result<MixtureFit> {
    let mut x: Vec<f64> = c.values().to_vec();
    x.sort_by(f64::total_cmp);
    if x.len() < 2 || x.first() == x.last() {
        return Err(GrayError::DegenerateData);
    }
    for v in &mut x {
        *v = v.clamp(EDGE, 1.0 - EDGE);
    }
    let ln_x: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ln_1mx: Vec<f64> = x.iter().map(|v| (1.0 - v).ln()).collect();

    let half = x.len() / 2;
    let mut comps = [
        moments_component(&x[..half], 0.5),
        moments_component(&x[half..], 0.5),
    ];
    let mut resp = vec![[0.0; 2]; x.len()];
    let mut ll = e_step(&x, &comps, &mut resp);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        for k in 0..2 {
            let total: f64 = resp.iter().map(|r| r[k]).sum();
            if total <= f64::MIN_POSITIVE {
                continue;
            }
            let s1 = resp.iter().zip(&ln_x).map(|(r, l)| r[k] * l).sum::<f64>() / total;
            let s2 = resp.iter().zip(&ln_1mx).map(|(r, l)| r[k] * l).sum::<f64>() / total;
            let (alpha, beta) = beta_mle(s1, s2, comps[k].alpha, comps[k].beta);
            comps[k] = BetaComponent {
                alpha,
                beta,
                weight: total / x.len() as f64,
            };
        }
        let next = e_step(&x, &comps, &mut resp);
        let delta = (next - ll).abs();
        ll = next;
        if delta < tol {
            converged = true;
            break;
        }
    }

    if comps[0].mean() > comps[1].mean() {
        comps.swap(0, 1);
    }
    let (lo, hi) = (comps[0].mean(), comps[1].mean());
    if !(hi - lo > 1e-12) {
        return Err(GrayError::DegenerateData);
    }
    Ok(MixtureFit {
        components: comps,
        fitted_threshold: crossing(&comps, lo, hi),
        log_likelihood: ll,
        iterations,
        converged,
    })
}

/// Fills responsibilities and returns the log-likelihood.
fn e_step(x: &[f64], comps: &[BetaComponent; 2], resp: &mut [[f64; 2]]) -> f64 {
    let mut ll = 0.0;
    for (xi, r) in x.iter().zip(resp.iter_mut()) {
        let l0 = comps[0].ln_weighted_pdf(*xi);
        let l1 = comps[1].ln_weighted_pdf(*xi);
        let m = l0.max(l1);
        let norm = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
        r[0] = (l0 - norm).exp();
        r[1] = (l1 - norm).exp();
        ll += norm;
    }
    ll
}

/// Method-of-moments Beta for an initial cluster.
fn moments_component(x: &[f64], weight: f64) -> BetaComponent {
    let n = x.len() as f64;
    let mean = (x.iter().sum::<f64>() / n).clamp(EDGE, 1.0 - EDGE);
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let max_var = mean * (1.0 - mean);
    let var = var.clamp(max_var * 1e-6, max_var * 0.5);
    let common = max_var / var - 1.0;
    BetaComponent {
        alpha: (mean * common).clamp(MIN_SHAPE, MAX_SHAPE),
        beta: ((1.0 - mean) * common).clamp(MIN_SHAPE, MAX_SHAPE),
        weight,
    }
}

/// Newton iteration for the Beta maximum-likelihood equations.
fn beta_mle(mean_ln_x: f64, mean_ln_1mx: f64, mut a: f64, mut b: f64) -> (f64, f64) {
    for _ in 0..100 {
        let psi_ab = digamma(a + b);
        let g1 = digamma(a) - psi_ab - mean_ln_x;
        let g2 = digamma(b) - psi_ab - mean_ln_1mx;
        let t_ab = trigamma(a + b);
        let (j11, j12, j22) = (trigamma(a) - t_ab, -t_ab, trigamma(b) - t_ab);
        let det = j11 * j22 - j12 * j12;
        if !(det.is_finite() && det.abs() > 0.0) {
            break;
        }
        let da = (j22 * g1 - j12 * g2) / det;
        let db = (j11 * g2 - j12 * g1) / det;
        // Halve the step until both shapes stay positive.
        let mut step = 1.0;
        while a - step * da <= 0.0 || b - step * db <= 0.0 {
            step *= 0.5;
        }
        let (na, nb) = (
            (a - step * da).clamp(MIN_SHAPE, MAX_SHAPE),
            (b - step * db).clamp(MIN_SHAPE, MAX_SHAPE),
        );
        let moved = ((na - a) / a).abs().max(((nb - b) / b).abs());
        a = na;
        b = nb;
        if moved < 1e-12 || a >= MAX_SHAPE || b >= MAX_SHAPE {
            break;
        }
    }
    (a, b)
}

/// Point in `(lo, hi)` where the weighted log-densities are equal.
fn crossing(comps: &[BetaComponent; 2], lo: f64, hi: f64) -> f64 {
    let g = |x: f64| comps[0].ln_weighted_pdf(x) - comps[1].ln_weighted_pdf(x);
    let inset = (hi - lo) * 1e-9;
    let (mut a, mut b) = (lo + inset, hi - inset);
    let (ga, gb) = (g(a), g(b));
    if ga.is_finite() && gb.is_finite() && ga.signum() != gb.signum() {
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if g(mid).signum() == ga.signum() {
                a = mid;
            } else {
                b = mid;
            }
        }
        return 0.5 * (a + b);
    }
    // No sign change: one component dominates the whole interval. Take the
    // point where the two come closest.
    (1..1000)
        .map(|i| lo + (hi - lo) * i as f64 / 1000.0)
        .min_by(|p, q| g(*p).abs().total_cmp(&g(*q).abs()))
        .expect("non-empty grid")
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// ψ₁(x) by upward recurrence and the asymptotic series.
pub(crate) fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        + inv2 / 2.0
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigamma_known_values() {
        // ψ₁(1) = π²/6, ψ₁(1/2) = π²/2
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-10);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-10);
        assert!((trigamma(100.0) - 0.010_050_166_663_333_571).abs() < 1e-12);
    }

    #[test]
    fn mle_recovers_shape_from_exact_statistics() {
        // E[ln X] = ψ(a) − ψ(a+b) for X ~ Beta(a, b)
        let (a, b) = (2.5, 7.0);
        let s1 = digamma(a) - digamma(a + b);
        let s2 = digamma(b) - digamma(a + b);
        let (fa, fb) = beta_mle(s1, s2, 1.0, 1.0);
        assert!((fa - a).abs() < 1e-8 && (fb - b).abs() < 1e-8, "{fa} {fb}");
    }

    #[test]
    fn degenerate_inputs() {
        let same = CertaintySeries::new(vec![0.9; 50]).unwrap();
        assert!(matches!(
            fit_threshold(&same, DEFAULT_MAX_ITER, DEFAULT_TOL),
            Err(GrayError::DegenerateData)
        ));
        let one = CertaintySeries::new(vec![0.4]).unwrap();
        assert!(fit_threshold(&one, DEFAULT_MAX_ITER, DEFAULT_TOL).is_err());
    }

    #[test]
    fn separated_clusters_threshold_between() {
        let mut v = vec![0.1; 200];
        v.extend(vec![0.95; 200]);
        let fit = fit_threshold(&CertaintySeries::new(v).unwrap(), 200, 1e-8).unwrap();
        assert!(
            fit.fitted_threshold > 0.1 && fit.fitted_threshold < 0.95,
            "{fit:?}"
        );
        let [lo, hi] = fit.components;
        assert!(lo.mean() < fit.fitted_threshold && fit.fitted_threshold < hi.mean());
        assert!((lo.weight + hi.weight - 1.0).abs() < 1e-9);
    }
}
