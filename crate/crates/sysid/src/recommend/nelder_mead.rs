//! Nelder-Mead simplex search in the normalized parameter cube, run as an
//! ask/tell state machine: one function evaluation per loop iteration.

use super::{from_unit, plain_response, to_unit, Recommender, RecommendationRequest, RecommendationResponse};
use crate::error::Result;
use crate::param_space::ParameterVector;

const ALPHA: f64 = 1.0; // reflection
const GAMMA: f64 = 2.0; // expansion
const RHO: f64 = 0.5; // contraction
const SIGMA: f64 = 0.5; // shrink
const STEP: f64 = 0.05; // initial simplex offset, fraction of range
const STEP_AT_ZERO: f64 = 0.00025;

#[derive(Debug, Clone)]
enum Await {
    Vertex(usize),
    Reflect,
    Expand,
    Contract,
}

pub struct NelderMeadRecommender {
    verts: Vec<Vec<f64>>,
    fv: Vec<f64>,
    awaiting: Option<Await>,
    queued: Option<(Vec<f64>, Await)>,
    xr: Vec<f64>,
    fr: f64,
    trial: Vec<f64>,
    initialized: bool,
}

impl NelderMeadRecommender {
    pub fn new() -> Self {
        Self {
            verts: Vec::new(),
            fv: Vec::new(),
            awaiting: None,
            queued: None,
            xr: Vec::new(),
            fr: f64::INFINITY,
            trial: Vec::new(),
            initialized: false,
        }
    }

    fn build_simplex(x0: &[f64]) -> Vec<Vec<f64>> {
        let mut verts = vec![x0.to_vec()];
        for i in 0..x0.len() {
            let mut v = x0.to_vec();
            let step = if v[i] == 0.0 { STEP_AT_ZERO } else { STEP };
            // step away from the nearer bound so the vertex stays inside
            v[i] = if v[i] + step <= 1.0 { v[i] + step } else { v[i] - step };
            verts.push(v);
        }
        verts
    }

    fn order(&self) -> (usize, usize, usize) {
        // (best, second worst, worst) by error
        let mut idx: Vec<usize> = (0..self.verts.len()).collect();
        idx.sort_by(|a, b| self.fv[*a].total_cmp(&self.fv[*b]));
        (idx[0], idx[idx.len() - 2], idx[idx.len() - 1])
    }

    fn centroid_excluding(&self, skip: usize) -> Vec<f64> {
        let d = self.verts[0].len();
        let mut c = vec![0.0; d];
        for (i, v) in self.verts.iter().enumerate() {
            if i == skip {
                continue;
            }
            for (ci, vi) in c.iter_mut().zip(v) {
                *ci += vi;
            }
        }
        for ci in &mut c {
            *ci /= (self.verts.len() - 1) as f64;
        }
        c
    }

    fn is_degenerate(&self) -> bool {
        let spread = self
            .verts
            .iter()
            .flat_map(|v| {
                self.verts[0]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| (a - b).abs())
            })
            .fold(0.0, f64::max);
        spread < 1e-9
    }

    /// Next point to evaluate; `None` means a fresh Nelder-Mead step is due.
    fn next_pending(&mut self) -> Option<(Vec<f64>, Await)> {
        if let Some(q) = self.queued.take() {
            return Some(q);
        }
        if let Some(i) = self.fv.iter().position(|f| f.is_nan()) {
            return Some((self.verts[i].clone(), Await::Vertex(i)));
        }
        None
    }
}

impl Default for NelderMeadRecommender {
    fn default() -> Self {
        Self::new()
    }
}

fn clamp_unit(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

impl Recommender for NelderMeadRecommender {
    fn name(&self) -> &'static str {
        "nelder_mead"
    }

    fn observe(&mut self, evaluated: &[(ParameterVector, f64)]) {
        let Some((_, raw)) = evaluated.last() else { return };
        let f = if raw.is_finite() { *raw } else { f64::INFINITY };
        let Some(awaiting) = self.awaiting.take() else {
            // the run's initial-point evaluation; consumed via the first
            // request's current_error instead
            return;
        };
        match awaiting {
            Await::Vertex(i) => self.fv[i] = f,
            Await::Reflect => {
                let (best, second_worst, worst) = self.order();
                if f < self.fv[best] {
                    let c = self.centroid_excluding(worst);
                    let mut xe: Vec<f64> = c
                        .iter()
                        .zip(&self.xr)
                        .map(|(ci, ri)| ci + GAMMA * (ri - ci))
                        .collect();
                    clamp_unit(&mut xe);
                    self.fr = f;
                    self.queued = Some((xe, Await::Expand));
                } else if f < self.fv[second_worst] {
                    self.verts[worst] = self.xr.clone();
                    self.fv[worst] = f;
                } else {
                    let c = self.centroid_excluding(worst);
                    // outside contraction toward the reflected point when it
                    // improved on the worst vertex, inside otherwise
                    let target = if f < self.fv[worst] {
                        self.xr.clone()
                    } else {
                        self.verts[worst].clone()
                    };
                    let mut xc: Vec<f64> = c
                        .iter()
                        .zip(&target)
                        .map(|(ci, ti)| ci + RHO * (ti - ci))
                        .collect();
                    clamp_unit(&mut xc);
                    self.fr = f;
                    self.queued = Some((xc, Await::Contract));
                }
            }
            Await::Expand => {
                let (_, _, worst) = self.order();
                if f < self.fr {
                    self.verts[worst] = self.trial.clone();
                    self.fv[worst] = f;
                } else {
                    self.verts[worst] = self.xr.clone();
                    self.fv[worst] = self.fr;
                }
            }
            Await::Contract => {
                let (best, _, worst) = self.order();
                if f < self.fr.min(self.fv[worst]) {
                    self.verts[worst] = self.trial.clone();
                    self.fv[worst] = f;
                } else {
                    let best_v = self.verts[best].clone();
                    for i in 0..self.verts.len() {
                        if i == best {
                            continue;
                        }
                        for (vi, bi) in self.verts[i].iter_mut().zip(&best_v) {
                            *vi = bi + SIGMA * (*vi - bi);
                        }
                        self.fv[i] = f64::NAN;
                    }
                }
            }
        }
    }

    fn propose(&mut self, req: &RecommendationRequest) -> Result<Vec<RecommendationResponse>> {
        if !self.initialized {
            let x0 = to_unit(&req.bounds, &req.current_params);
            self.verts = Self::build_simplex(&x0);
            self.fv = vec![f64::NAN; self.verts.len()];
            // the loop already evaluated the starting point
            self.fv[0] = if req.current_error.is_finite() {
                req.current_error
            } else {
                f64::INFINITY
            };
            self.initialized = true;
        }
        if self.awaiting.is_some() {
            log::warn!("nelder-mead: propose called with an evaluation still pending");
        }
        if self.fv.iter().all(|f| !f.is_nan()) && self.queued.is_none() && self.is_degenerate() {
            log::warn!("nelder-mead: degenerate simplex, re-perturbing around the best vertex");
            let (best, _, _) = self.order();
            let base = self.verts[best].clone();
            let keep = self.fv[best];
            self.verts = Self::build_simplex(&base);
            self.fv = vec![f64::NAN; self.verts.len()];
            self.fv[0] = keep;
        }
        let (point, awaiting) = match self.next_pending() {
            Some(p) => p,
            None => {
                let (_, _, worst) = self.order();
                let c = self.centroid_excluding(worst);
                let mut xr: Vec<f64> = c
                    .iter()
                    .zip(&self.verts[worst])
                    .map(|(ci, wi)| ci + ALPHA * (ci - wi))
                    .collect();
                clamp_unit(&mut xr);
                self.xr = xr.clone();
                (xr, Await::Reflect)
            }
        };
        self.trial = point.clone();
        self.awaiting = Some(awaiting);
        let params = from_unit(&req.bounds, &point, &req.current_params)?;
        Ok(vec![plain_response(req, params, 0.5, "nelder-mead simplex step")])
    }
}
