//! Gaussian-process surrogate over encoded configurations and the
//! expected-improvement search that drives per-class exploration.
//!
//! Targets are modelled as log PLT with a constant prior mean (the sample
//! mean) and a squared-exponential kernel with fixed hyperparameters.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::config_space::{ConfigId, Configuration, ENCODED_DIM};
use crate::error::{Error, Result};

pub type Point = [f64; ENCODED_DIM];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    pub lengthscale: f64,
    /// Noise variance as a fraction of the signal variance.
    pub noise_ratio: f64,
    /// Lower bound on the signal variance, used when targets barely vary.
    pub min_signal_var: f64,
}

impl Default for GpParams {
    fn default() -> Self {
        GpParams { lengthscale: 2.0, noise_ratio: 0.05, min_signal_var: 0.01 }
    }
}

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct GpModel {
    params: GpParams,
    x: Vec<Point>,
    prior_mean: f64,
    signal_var: f64,
    noise_var: f64,
    chol_l: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl GpModel {
    /// Fits to PLT targets in milliseconds (log-transformed internally).
    pub fn fit(x: &[Point], y_ms: &[f64], params: GpParams) -> Result<Self> {
        let log_y: Vec<f64> = y_ms.iter().map(|v| v.ln()).collect();
        Self::fit_log(x, &log_y, params)
    }

    pub fn fit_log(x: &[Point], log_y: &[f64], params: GpParams) -> Result<Self> {
        if x.is_empty() || x.len() != log_y.len() {
            return Err(Error::NoData);
        }
        let n = x.len();
        let mean = log_y.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            log_y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let signal_var = var.max(params.min_signal_var);
        let noise_var = params.noise_ratio * signal_var;
        let k = DMatrix::from_fn(n, n, |i, j| se_kernel(&x[i], &x[j], signal_var, params.lengthscale));
        let mut jitter = JITTER_START;
        let chol = loop {
            let mut m = k.clone();
            for i in 0..n {
                m[(i, i)] += noise_var + jitter;
            }
            if let Some(c) = m.cholesky() {
                break c;
            }
            jitter *= 10.0;
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                return Err(Error::NotPositiveDefinite);
            }
        };
        let resid = DVector::from_iterator(n, log_y.iter().map(|v| v - mean));
        let alpha = chol.solve(&resid);
        Ok(GpModel { params, x: x.to_vec(), prior_mean: mean, signal_var, noise_var, chol_l: chol.l(), alpha })
    }

    pub fn signal_var(&self) -> f64 {
        self.signal_var
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn kernel(&self, a: &Point, b: &Point) -> f64 {
        se_kernel(a, b, self.signal_var, self.params.lengthscale)
    }

    /// Posterior predictive mean and standard deviation of log PLT at `x`,
    /// observation noise included.
    pub fn predict(&self, x: &Point) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| self.kernel(xi, x)));
        let mu = self.prior_mean + ks.dot(&self.alpha);
        let v = self.chol_l.solve_lower_triangular(&ks).expect("cholesky factor has a non-zero diagonal");
        let var = (self.signal_var - v.dot(&v)).max(0.0) + self.noise_var;
        (mu, var.sqrt())
    }

    pub fn expected_improvement(&self, x: &Point, y_best: f64, xi: f64) -> f64 {
        let (mu, sigma) = self.predict(x);
        expected_improvement(mu, sigma, y_best, xi)
    }
}

fn se_kernel(a: &Point, b: &Point, signal_var: f64, lengthscale: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    signal_var * (-d2 / (2.0 * lengthscale * lengthscale)).exp()
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement for minimization at a Gaussian posterior (mu, sigma).
pub fn expected_improvement(mu: f64, sigma: f64, y_best: f64, xi: f64) -> f64 {
    let gain = y_best - mu - xi;
    if sigma <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    (gain * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpSearchParams {
    pub init_sample: usize,
    pub min_sample_tested: usize,
    /// Stop once the best candidate's expected fractional PLT improvement
    /// over the incumbent falls below this.
    pub ei_rel_threshold: f64,
    /// Exploration margin in log-PLT units.
    pub xi: f64,
    pub gp: GpParams,
}

impl Default for GpSearchParams {
    fn default() -> Self {
        GpSearchParams { init_sample: 4, min_sample_tested: 7, ei_rel_threshold: 0.05, xi: 0.01, gp: GpParams::default() }
    }
}

/// Observations and lazily refit surrogate for one class.
///
/// Repeated measurements of one configuration are averaged in log space, so
/// the model sees one point per tested configuration.
#[derive(Clone, Debug)]
pub struct GpSearch {
    pub params: GpSearchParams,
    observations: BTreeMap<ConfigId, (f64, usize)>,
    model: Option<GpModel>,
}

impl GpSearch {
    pub fn new(params: GpSearchParams) -> Self {
        GpSearch { params, observations: BTreeMap::new(), model: None }
    }

    pub fn observe(&mut self, config: &Configuration, plt_ms: f64) {
        let e = self.observations.entry(config.id()).or_insert((0.0, 0));
        e.0 += plt_ms.ln();
        e.1 += 1;
        self.model = None;
    }

    pub fn tested_count(&self) -> usize {
        self.observations.len()
    }

    pub fn is_tested(&self, id: ConfigId) -> bool {
        self.observations.contains_key(&id)
    }

    pub fn tested(&self) -> impl Iterator<Item = ConfigId> + '_ {
        self.observations.keys().copied()
    }

    /// Mean log PLT per tested configuration.
    pub fn mean_log(&self, id: ConfigId) -> Option<f64> {
        self.observations.get(&id).map(|(s, n)| s / *n as f64)
    }

    /// Lowest mean log PLT among tested configurations.
    pub fn incumbent(&self) -> Option<(ConfigId, f64)> {
        let mut best: Option<(ConfigId, f64)> = None;
        for (&id, (s, n)) in &self.observations {
            let m = s / *n as f64;
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((id, m));
            }
        }
        best
    }

    pub fn model(&mut self) -> Result<&GpModel> {
        if self.model.is_none() {
            let (x, y): (Vec<Point>, Vec<f64>) = self
                .observations
                .iter()
                .map(|(&id, (s, n))| (Configuration::from_id(id).encode(), s / *n as f64))
                .unzip();
            self.model = Some(GpModel::fit_log(&x, &y, self.params.gp)?);
        }
        Ok(self.model.as_ref().expect("model fitted above"))
    }

    /// Untested candidate with the largest EI; ties go to the lowest id.
    pub fn suggest_next(&mut self, candidates: &[Configuration]) -> Result<(Configuration, f64)> {
        let xi = self.params.xi;
        let Some((_, y_best)) = self.incumbent() else {
            return candidates.iter().min_by_key(|c| c.id()).map(|c| (*c, 0.0)).ok_or(Error::SpaceExhausted);
        };
        let tested = self.observations.keys().copied().collect::<std::collections::BTreeSet<_>>();
        let model = self.model()?;
        let mut best: Option<(Configuration, f64)> = None;
        for c in candidates.iter().filter(|c| !tested.contains(&c.id())) {
            let ei = model.expected_improvement(&c.encode(), y_best, xi);
            let better = match best {
                None => true,
                Some((b, v)) => ei > v || (ei == v && c.id() < b.id()),
            };
            if better {
                best = Some((*c, ei));
            }
        }
        best.ok_or(Error::SpaceExhausted)
    }

    /// True once enough configurations were tested and the best remaining
    /// EI is below the relative threshold. An exhausted space also stops.
    pub fn should_stop(&mut self, candidates: &[Configuration]) -> bool {
        if self.tested_count() < self.params.min_sample_tested {
            return false;
        }
        match self.suggest_next(candidates) {
            Ok((_, ei)) => ei < self.params.ei_rel_threshold,
            Err(_) => true,
        }
    }
}
