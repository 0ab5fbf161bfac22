//! Bayesian optimization: Matern 5/2 Gaussian process surrogate fit by
//! log-grid marginal likelihood, expected-improvement acquisition over
//! quasi-random candidates.

use super::{from_unit, plain_response, Recommender, RecommendationRequest, RecommendationResponse};
use crate::error::Result;
use crate::param_space::ParameterVector;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

const INIT_RANDOM: usize = 3;
const JITTER: f64 = 1e-6;
const EI_CANDIDATES: usize = 2048;
const LOCAL_CANDIDATES: usize = 32;
const LOCAL_SIGMA: f64 = 0.05;

/// Matern 5/2 correlation at distance `r` with length scale `ell`.
fn matern52(r: f64, ell: f64) -> f64 {
    let s = 5.0_f64.sqrt() * r / ell;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

struct Gp {
    xs: Vec<Vec<f64>>,
    alpha: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    ell: f64,
    y_mean: f64,
    y_sd: f64,
}

impl Gp {
    /// Fit on unit-cube inputs with standardized targets; the length scale
    /// maximizes the log marginal likelihood over a log-spaced grid.
    fn fit(xs: &[Vec<f64>], ys: &[f64], jitter: f64) -> Option<Gp> {
        let n = xs.len();
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        let t = DVector::from_iterator(n, ys.iter().map(|y| (y - y_mean) / y_sd));

        let grid: Vec<f64> =
            (0..12).map(|i| 0.05 * (2.0_f64 / 0.05).powf(i as f64 / 11.0)).collect();
        let mut best: Option<(f64, Cholesky<f64, nalgebra::Dyn>, f64)> = None;
        for &ell in &grid {
            let mut k = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    k[(i, j)] = matern52(dist(&xs[i], &xs[j]), ell);
                }
                k[(i, i)] += jitter;
            }
            let Some(chol) = Cholesky::new(k) else { continue };
            let alpha = chol.solve(&t);
            let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
            let lml = -0.5 * t.dot(&alpha) - 0.5 * log_det;
            if best.as_ref().is_none_or(|(b, _, _)| lml > *b) {
                best = Some((lml, chol, ell));
            }
        }
        let (_, chol, ell) = best?;
        let alpha = chol.solve(&t);
        Some(Gp { xs: xs.to_vec(), alpha, chol, ell, y_mean, y_sd })
    }

    /// Posterior mean and standard deviation in standardized target units.
    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let n = self.xs.len();
        let k_star =
            DVector::from_iterator(n, self.xs.iter().map(|xi| matern52(dist(xi, x), self.ell)));
        let mean = k_star.dot(&self.alpha);
        let v = self.chol.solve(&k_star);
        let var = (1.0 + JITTER - k_star.dot(&v)).max(0.0);
        (mean, var.sqrt())
    }
}

/// Expected improvement below `f_best` at predicted `(mean, sd)`; zero at
/// zero predictive variance.
pub(crate) fn expected_improvement(mean: f64, sd: f64, f_best: f64) -> f64 {
    if sd <= 0.0 {
        return 0.0;
    }
    let normal = Normal::standard();
    let z = (f_best - mean) / sd;
    ((f_best - mean) * normal.cdf(z) + sd * normal.pdf(z)).max(0.0)
}

/// Halton low-discrepancy point in `d` dimensions.
fn halton(index: usize, d: usize) -> Vec<f64> {
    const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    (0..d)
        .map(|dim| {
            let base = PRIMES[dim % PRIMES.len()];
            let mut f = 1.0;
            let mut r = 0.0;
            let mut i = index + 1;
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        })
        .collect()
}

pub struct BoRecommender {
    rng: ChaCha12Rng,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
}

impl BoRecommender {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha12Rng::seed_from_u64(seed), xs: Vec::new(), ys: Vec::new() }
    }

    fn random_coords(&mut self, d: usize) -> Vec<f64> {
        (0..d).map(|_| self.rng.random_range(0.0..=1.0)).collect()
    }
}

impl Recommender for BoRecommender {
    fn name(&self) -> &'static str {
        "bo"
    }

    fn observe(&mut self, evaluated: &[(ParameterVector, f64)]) {
        // targets arrive in proposal order and pair with pending inputs; an
        // evaluation with no pending proposal is the run's initial point
        for (_, e) in evaluated {
            if self.ys.len() < self.xs.len() {
                self.ys.push(if e.is_finite() { *e } else { f64::INFINITY });
            }
        }
    }

    fn propose(&mut self, req: &RecommendationRequest) -> Result<Vec<RecommendationResponse>> {
        let d = req.bounds.searchable().len();
        // only pair inputs that already have a target
        let n = self.ys.len().min(self.xs.len());
        let coords = 'picked: {
            if n < INIT_RANDOM {
                break 'picked self.random_coords(d);
            }
            let xs = self.xs[..n].to_vec();
            // infinite targets carry no gradient signal; cap them above the
            // finite worst so the GP stays numeric
            let finite_max = self.ys[..n]
                .iter()
                .filter(|y| y.is_finite())
                .fold(f64::MIN, |a, &b| a.max(b));
            let ys: Vec<f64> = self.ys[..n]
                .iter()
                .map(|y| if y.is_finite() { *y } else { finite_max + 1.0 })
                .collect();
            if ys.iter().all(|y| !y.is_finite()) {
                break 'picked self.random_coords(d);
            }
            let Some(gp) = Gp::fit(&xs, &ys, JITTER) else {
                log::warn!("bo: singular GP fit, falling back to a random proposal");
                break 'picked self.random_coords(d);
            };
            let f_best = ys
                .iter()
                .map(|y| (y - gp.y_mean) / gp.y_sd)
                .fold(f64::MAX, f64::min);
            let best_x = xs[ys
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0)]
            .clone();

            let mut best_cand: Option<(f64, Vec<f64>)> = None;
            let mut consider = |x: Vec<f64>| {
                let (m, s) = gp.predict(&x);
                let ei = expected_improvement(m, s, f_best);
                if best_cand.as_ref().is_none_or(|(b, _)| ei > *b) {
                    best_cand = Some((ei, x));
                }
            };
            for i in 0..EI_CANDIDATES {
                consider(halton(i, d));
            }
            for _ in 0..LOCAL_CANDIDATES {
                let x: Vec<f64> = best_x
                    .iter()
                    .map(|v| {
                        let u1: f64 = self.rng.random_range(f64::MIN_POSITIVE..1.0);
                        let u2: f64 = self.rng.random_range(0.0..1.0);
                        let g = (-2.0 * u1.ln()).sqrt()
                            * (2.0 * std::f64::consts::PI * u2).cos();
                        (v + LOCAL_SIGMA * g).clamp(0.0, 1.0)
                    })
                    .collect();
                consider(x);
            }
            best_cand.map(|(_, x)| x).unwrap_or_else(|| self.random_coords(d))
        };
        self.xs.push(coords.clone());
        let params = from_unit(&req.bounds, &coords, &req.current_params)?;
        Ok(vec![plain_response(req, params, 0.5, "expected-improvement acquisition")])
    }
}
