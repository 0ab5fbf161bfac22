//! Uniform random search: fresh independent samples within bounds.

use super::{plain_response, Recommender, RecommendationRequest, RecommendationResponse};
use crate::error::Result;
use crate::param_space::ParameterVector;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub struct RandomRecommender {
    rng: ChaCha12Rng,
}

impl RandomRecommender {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha12Rng::seed_from_u64(seed) }
    }
}

impl Recommender for RandomRecommender {
    fn name(&self) -> &'static str {
        "random"
    }

    fn observe(&mut self, _evaluated: &[(ParameterVector, f64)]) {}

    fn propose(&mut self, req: &RecommendationRequest) -> Result<Vec<RecommendationResponse>> {
        let sub = req.bounds.searchable();
        let sample = sub.sample_with(&mut self.rng);
        let mut params = req.current_params.clone();
        for (n, v) in &sample.values {
            params.set(n, *v);
        }
        Ok(vec![plain_response(req, params, 0.5, "random")])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::Platform;
    use crate::recommend::{Flags, MediaRefs, RunHistory};

    fn request() -> RecommendationRequest {
        let bounds = Platform::Finger.bounds();
        RecommendationRequest {
            current_params: bounds.sample_uniform(0),
            current_control: Platform::Finger.training_profile(&[30.0, 30.0]).unwrap(),
            current_error: 50.0,
            bounds,
            history: RunHistory::default(),
            media: MediaRefs::default(),
            flags: Flags::default(),
        }
    }

    #[test]
    fn same_seed_gives_same_sequence() {
        let req = request();
        let run = |seed| {
            let mut r = RandomRecommender::new(seed);
            (0..10).map(|_| r.propose(&req).unwrap().remove(0).params).collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn proposals_pass_clamp_unchanged_and_keep_confidence_half() {
        let req = request();
        let mut r = RandomRecommender::new(3);
        for _ in 0..10 {
            let resp = r.propose(&req).unwrap().remove(0);
            assert_eq!(resp.confidence, 0.5);
            assert_eq!(resp.rationale, "random");
            let clamped = req.bounds.clamp(&resp.params).unwrap();
            assert_eq!(clamped, resp.params);
        }
    }

    #[test]
    fn draws_look_uniform_per_coordinate() {
        // one-sample Kolmogorov-Smirnov against the uniform CDF; critical
        // value at alpha = 0.01 for n = 1000 is 1.63 / sqrt(n)
        let req = request();
        let mut r = RandomRecommender::new(11);
        let n = 1000;
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 4];
        for _ in 0..n {
            let p = r.propose(&req).unwrap().remove(0).params;
            let coords = crate::recommend::to_unit(&req.bounds, &p);
            for (c, v) in cols.iter_mut().zip(coords) {
                c.push(v);
            }
        }
        let critical = 1.63 / (n as f64).sqrt();
        for c in &mut cols {
            c.sort_by(|a, b| a.total_cmp(b));
            let d = c
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let lo = i as f64 / n as f64;
                    let hi = (i + 1) as f64 / n as f64;
                    (v - lo).abs().max((v - hi).abs())
                })
                .fold(0.0, f64::max);
            assert!(d < critical, "KS statistic {d} over critical {critical}");
        }
    }
}
