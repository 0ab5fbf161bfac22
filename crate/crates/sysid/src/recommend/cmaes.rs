//! CMA-ES in the normalized parameter cube. One proposed batch is one full
//! generation; boundary handling is coordinate-wise reflection.

use super::{from_unit, plain_response, to_unit, Recommender, RecommendationRequest, RecommendationResponse};
use crate::error::Result;
use crate::param_space::ParameterVector;
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

const SIGMA0: f64 = 0.3;
const EIGEN_FLOOR: f64 = 1e-14;

/// Population size `4 + floor(3 ln(d + 1))`.
pub fn population_size(d: usize) -> usize {
    4 + (3.0 * ((d + 1) as f64).ln()).floor() as usize
}

/// Fold a coordinate into [0, 1] by reflection at the boundaries. Maps any
/// real into the cube and leaves in-cube values untouched.
pub fn reflect_unit(x: f64) -> f64 {
    let r = x.rem_euclid(2.0);
    if r > 1.0 { 2.0 - r } else { r }
}

struct Strategy {
    d: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    cc: f64,
    c1: f64,
    c_mu: f64,
    chi_n: f64,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    eigen_b: DMatrix<f64>,
    eigen_d: DVector<f64>,
    generation: usize,
}

impl Strategy {
    fn new(mean: DVector<f64>) -> Self {
        let d = mean.len();
        let lambda = population_size(d);
        let mu = lambda / 2;
        let raw: Vec<f64> =
            (0..mu).map(|i| ((mu as f64) + 0.5).ln() - ((i + 1) as f64).ln()).collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let dn = d as f64;
        let c_sigma = (mu_eff + 2.0) / (dn + mu_eff + 5.0);
        let d_sigma =
            1.0 + 2.0 * (((mu_eff - 1.0) / (dn + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let cc = (4.0 + mu_eff / dn) / (dn + 4.0 + 2.0 * mu_eff / dn);
        let c1 = 2.0 / ((dn + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c1)
            .min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((dn + 2.0).powi(2) + mu_eff));
        let chi_n = dn.sqrt() * (1.0 - 1.0 / (4.0 * dn) + 1.0 / (21.0 * dn * dn));
        Self {
            d,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            cc,
            c1,
            c_mu,
            chi_n,
            mean,
            sigma: SIGMA0,
            cov: DMatrix::identity(d, d),
            p_sigma: DVector::zeros(d),
            p_c: DVector::zeros(d),
            eigen_b: DMatrix::identity(d, d),
            eigen_d: DVector::from_element(d, 1.0),
            generation: 0,
        }
    }

    fn refresh_eigen(&mut self) {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(sym);
        let mut vals = eig.eigenvalues;
        let mut floored = false;
        for v in vals.iter_mut() {
            if *v < EIGEN_FLOOR {
                *v = EIGEN_FLOOR;
                floored = true;
            }
        }
        if floored {
            log::warn!("cma-es: covariance eigenvalue floored at {EIGEN_FLOOR}");
            self.cov = &eig.eigenvectors
                * DMatrix::from_diagonal(&vals)
                * eig.eigenvectors.transpose();
        }
        self.eigen_b = eig.eigenvectors;
        self.eigen_d = vals.map(|v| v.sqrt());
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> DVector<f64> {
        let z = DVector::from_iterator(self.d, (0..self.d).map(|_| standard_normal(rng)));
        let y = &self.eigen_b * self.eigen_d.component_mul(&z);
        let x = &self.mean + self.sigma * y;
        x.map(reflect_unit)
    }

    fn update(&mut self, ranked: &[(DVector<f64>, f64)]) {
        let old_mean = self.mean.clone();
        let mut new_mean = DVector::zeros(self.d);
        for (w, (x, _)) in self.weights.iter().zip(ranked.iter().take(self.mu)) {
            new_mean += x * *w;
        }
        self.mean = new_mean;
        let y_w = (&self.mean - &old_mean) / self.sigma;

        // cumulative step-size adaptation with C^(-1/2) y_w
        let inv_sqrt = &self.eigen_b
            * DMatrix::from_diagonal(&self.eigen_d.map(|v| 1.0 / v.max(1e-12)))
            * self.eigen_b.transpose();
        self.p_sigma = (1.0 - self.c_sigma) * &self.p_sigma
            + (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt() * (&inv_sqrt * &y_w);

        self.generation += 1;
        let expected_decay = (1.0 - self.c_sigma).powi(2 * self.generation as i32);
        let h_sigma = self.p_sigma.norm() / (1.0 - expected_decay).sqrt() / self.chi_n
            < 1.4 + 2.0 / (self.d as f64 + 1.0);
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = (1.0 - self.cc) * &self.p_c
            + h * (self.cc * (2.0 - self.cc) * self.mu_eff).sqrt() * &y_w;

        // rank-one and rank-mu covariance update
        let mut rank_mu = DMatrix::zeros(self.d, self.d);
        for (w, (x, _)) in self.weights.iter().zip(ranked.iter().take(self.mu)) {
            let y = (x - &old_mean) / self.sigma;
            rank_mu += *w * &y * y.transpose();
        }
        let delta_h = (1.0 - h) * self.cc * (2.0 - self.cc);
        self.cov = (1.0 - self.c1 - self.c_mu) * &self.cov
            + self.c1 * (&self.p_c * self.p_c.transpose() + delta_h * &self.cov)
            + self.c_mu * rank_mu;

        self.sigma *=
            ((self.c_sigma / self.d_sigma) * (self.p_sigma.norm() / self.chi_n - 1.0)).exp();
        self.refresh_eigen();
    }
}

fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    // Box-Muller; u1 bounded away from zero
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub struct CmaEsRecommender {
    rng: ChaCha12Rng,
    strategy: Option<Strategy>,
    pending: Vec<DVector<f64>>,
}

impl CmaEsRecommender {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha12Rng::seed_from_u64(seed), strategy: None, pending: Vec::new() }
    }

    pub fn lambda_for(d: usize) -> usize {
        population_size(d)
    }
}

impl Recommender for CmaEsRecommender {
    fn name(&self) -> &'static str {
        "cma_es"
    }

    fn observe(&mut self, evaluated: &[(ParameterVector, f64)]) {
        let Some(strategy) = self.strategy.as_mut() else { return };
        if self.pending.is_empty() {
            return;
        }
        if evaluated.len() != self.pending.len() {
            log::warn!(
                "cma-es: expected {} evaluations, got {}",
                self.pending.len(),
                evaluated.len()
            );
        }
        let mut ranked: Vec<(DVector<f64>, f64)> = self
            .pending
            .drain(..)
            .zip(evaluated)
            .map(|(x, (_, e))| (x, if e.is_finite() { *e } else { f64::INFINITY }))
            .collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
        strategy.update(&ranked);
    }

    fn propose(&mut self, req: &RecommendationRequest) -> Result<Vec<RecommendationResponse>> {
        let strategy = self.strategy.get_or_insert_with(|| {
            let x0 = to_unit(&req.bounds, &req.current_params);
            Strategy::new(DVector::from_vec(x0))
        });
        let mut out = Vec::with_capacity(strategy.lambda);
        self.pending.clear();
        for _ in 0..strategy.lambda {
            let x = strategy.sample(&mut self.rng);
            let coords: Vec<f64> = x.iter().copied().collect();
            let params = from_unit(&req.bounds, &coords, &req.current_params)?;
            self.pending.push(x);
            out.push(plain_response(req, params, 0.5, "cma-es generation sample"));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::Platform;
    use crate::param_space::{BoundEntry, ParamKind, ParameterBounds};
    use crate::recommend::{Flags, MediaRefs, RunHistory};

    #[test]
    fn population_size_for_four_dims_is_eight() {
        assert_eq!(population_size(4), 8);
    }

    #[test]
    fn reflection_examples_and_idempotence() {
        assert!((reflect_unit(1.2) - 0.8).abs() < 1e-12);
        assert!((reflect_unit(-0.3) - 0.3).abs() < 1e-12);
        assert_eq!(reflect_unit(0.4), 0.4);
        for i in 0..100 {
            let x = -3.0 + 0.07 * i as f64;
            let r = reflect_unit(x);
            assert!((0.0..=1.0).contains(&r), "reflect({x}) = {r}");
            assert!((reflect_unit(r) - r).abs() < 1e-12, "not idempotent at {x}");
        }
    }

    fn cube_bounds(d: usize) -> ParameterBounds {
        ParameterBounds::new(
            (0..d)
                .map(|i| BoundEntry {
                    name: format!("p{i}"),
                    min: 0.0,
                    max: 1.0,
                    unit: String::new(),
                    kind: ParamKind::Physics,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sphere_function_converges_for_most_seeds() {
        let bounds = cube_bounds(4);
        let target = [0.3, 0.7, 0.5, 0.2];
        let control = Platform::Finger.training_profile(&[30.0, 30.0]).unwrap();
        let mut hits = 0;
        for seed in 0..3 {
            let start = bounds.sample_uniform(100 + seed);
            let mut rec = CmaEsRecommender::new(seed);
            let mut best = f64::INFINITY;
            let mut best_p = start.clone();
            for _ in 0..10 {
                let req = RecommendationRequest {
                    current_params: start.clone(),
                    current_control: control.clone(),
                    current_error: best,
                    bounds: bounds.clone(),
                    history: RunHistory::default(),
                    media: MediaRefs::default(),
                    flags: Flags::default(),
                };
                let batch = rec.propose(&req).unwrap();
                assert_eq!(batch.len(), 8);
                let evaluated: Vec<(ParameterVector, f64)> = batch
                    .into_iter()
                    .map(|r| {
                        let p = bounds.clamp(&r.params).unwrap();
                        let e: f64 = p
                            .raw()
                            .iter()
                            .zip(target)
                            .map(|(v, t)| (v - t) * (v - t))
                            .sum();
                        (p, e)
                    })
                    .collect();
                for (p, e) in &evaluated {
                    if *e < best {
                        best = *e;
                        best_p = p.clone();
                    }
                }
                rec.observe(&evaluated);
            }
            let dist = best_p
                .raw()
                .iter()
                .zip(target)
                .map(|(v, t)| (v - t) * (v - t))
                .sum::<f64>()
                .sqrt();
            if dist < 0.1 * (4.0_f64).sqrt() {
                hits += 1;
            }
        }
        assert!(hits >= 2, "converged on {hits}/3 seeds");
    }

    #[test]
    fn samples_stay_inside_the_unit_cube() {
        let bounds = cube_bounds(4);
        let control = Platform::Finger.training_profile(&[30.0, 30.0]).unwrap();
        let mut rec = CmaEsRecommender::new(9);
        let req = RecommendationRequest {
            current_params: bounds.sample_uniform(1),
            current_control: control,
            current_error: 1.0,
            bounds: bounds.clone(),
            history: RunHistory::default(),
            media: MediaRefs::default(),
            flags: Flags::default(),
        };
        for _ in 0..5 {
            let batch = rec.propose(&req).unwrap();
            let evaluated: Vec<(ParameterVector, f64)> = batch
                .into_iter()
                .map(|r| {
                    let p = r.params;
                    assert_eq!(req.bounds.clamp(&p).unwrap(), p, "sample left bounds");
                    let e = p.raw().iter().map(|v| v * v).sum();
                    (p, e)
                })
                .collect();
            rec.observe(&evaluated);
        }
    }
}
