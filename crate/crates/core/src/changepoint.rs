//! Bayesian online changepoint detection over a univariate series.
//!
//! Run-length recursion with a constant hazard `1/lambda` and a Gaussian
//! observation model under a normal-inverse-gamma prior, so the predictive
//! for each run length is a Student-t. Probabilities are kept in log space.

use serde::{Deserialize, Serialize};

/// Normal-inverse-gamma prior on the observation mean and variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsPrior {
    pub mean: f64,
    /// Prior scale of the observation variance (the inverse-gamma `beta`).
    pub var_scale: f64,
    pub kappa: f64,
    pub alpha: f64,
}

impl ObsPrior {
    pub fn new(mean: f64, var_scale: f64) -> Self {
        ObsPrior { mean, var_scale, kappa: 1.0, alpha: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BocdParams {
    pub hazard_lambda: f64,
    pub prior: ObsPrior,
    /// When set, a committed changepoint is kept only if the segment means
    /// on either side differ by at least this many pooled standard deviations.
    pub min_snr: Option<f64>,
}

impl BocdParams {
    pub fn new(hazard_lambda: f64, prior: ObsPrior) -> Self {
        BocdParams { hazard_lambda, prior, min_snr: None }
    }
}

pub const DEFAULT_HAZARD_LAMBDA: f64 = 250.0;

/// MAP run length must exceed this before a collapse counts.
const ARM_RUN_LENGTH: usize = 4;
/// A collapse below this run length commits a changepoint.
const COMMIT_RUN_LENGTH: usize = 2;

#[derive(Clone, Debug)]
struct Stats {
    mu: f64,
    kappa: f64,
    alpha: f64,
    beta: f64,
}

impl Stats {
    fn prior(p: &ObsPrior) -> Self {
        Stats { mu: p.mean, kappa: p.kappa, alpha: p.alpha, beta: p.var_scale }
    }

    fn log_predictive(&self, x: f64) -> f64 {
        let nu = 2.0 * self.alpha;
        let scale2 = self.beta * (self.kappa + 1.0) / (self.alpha * self.kappa);
        let z2 = (x - self.mu).powi(2) / scale2;
        ln_gamma((nu + 1.0) / 2.0)
            - ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI * scale2).ln()
            - (nu + 1.0) / 2.0 * (1.0 + z2 / nu).ln()
    }

    fn updated(&self, x: f64) -> Self {
        let kappa = self.kappa + 1.0;
        Stats {
            mu: (self.kappa * self.mu + x) / kappa,
            kappa,
            alpha: self.alpha + 0.5,
            beta: self.beta + self.kappa * (x - self.mu).powi(2) / (2.0 * kappa),
        }
    }
}

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Streaming detector state.
#[derive(Clone, Debug)]
pub struct Bocd {
    params: BocdParams,
    log_h: f64,
    log_1mh: f64,
    /// `log P(r_t = i | x_1..t)` for each run length `i`.
    log_post: Vec<f64>,
    stats: Vec<Stats>,
    t: usize,
    armed: bool,
    committed: Vec<usize>,
}

impl Bocd {
    pub fn new(params: BocdParams) -> Self {
        assert!(params.hazard_lambda > 1.0, "hazard lambda must exceed 1");
        let h = 1.0 / params.hazard_lambda;
        Bocd {
            params,
            log_h: h.ln(),
            log_1mh: (1.0 - h).ln(),
            log_post: vec![0.0],
            stats: vec![Stats::prior(&params.prior)],
            t: 0,
            armed: false,
            committed: Vec::new(),
        }
    }

    /// Absorbs one observation; returns a changepoint index if one commits.
    pub fn step(&mut self, x: f64) -> Option<usize> {
        let preds: Vec<f64> = self.stats.iter().map(|s| s.log_predictive(x)).collect();
        let joint: Vec<f64> = self.log_post.iter().zip(&preds).map(|(p, l)| p + l).collect();
        let mut next = Vec::with_capacity(joint.len() + 1);
        next.push(log_sum_exp(&joint) + self.log_h);
        next.extend(joint.iter().map(|j| j + self.log_1mh));
        let norm = log_sum_exp(&next);
        for v in &mut next {
            *v -= norm;
        }
        self.log_post = next;

        let mut stats = Vec::with_capacity(self.stats.len() + 1);
        stats.push(Stats::prior(&self.params.prior));
        stats.extend(self.stats.iter().map(|s| s.updated(x)));
        self.stats = stats;

        let t = self.t;
        self.t += 1;
        let map = self.map_run_length();
        if map > ARM_RUN_LENGTH {
            self.armed = true;
        }
        if self.armed && map < COMMIT_RUN_LENGTH {
            self.armed = false;
            let index = t.saturating_sub(map);
            if self.committed.last().is_none_or(|&last| index > last) {
                self.committed.push(index);
                return Some(index);
            }
        }
        None
    }

    /// Posterior over run lengths after the latest observation.
    pub fn posterior(&self) -> Vec<f64> {
        self.log_post.iter().map(|v| v.exp()).collect()
    }

    pub fn map_run_length(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.log_post.iter().enumerate() {
            if *v > self.log_post[best] {
                best = i;
            }
        }
        best
    }

    pub fn committed(&self) -> &[usize] {
        &self.committed
    }
}

/// Indices where a changepoint commits: the MAP run length collapses below
/// 2 after having exceeded 4. Strictly increasing.
pub fn detect_changepoints(series: &[f64], hazard_lambda: f64, prior: ObsPrior) -> Vec<usize> {
    detect_with(series, &BocdParams::new(hazard_lambda, prior))
}

pub fn detect_with(series: &[f64], params: &BocdParams) -> Vec<usize> {
    let mut det = Bocd::new(*params);
    for &x in series {
        det.step(x);
    }
    let found = det.committed().to_vec();
    match params.min_snr {
        None => found,
        Some(min_snr) => snr_filter(series, &found, min_snr),
    }
}

fn snr_filter(series: &[f64], cps: &[usize], min_snr: f64) -> Vec<usize> {
    let mean_var = |s: &[f64]| {
        let n = s.len() as f64;
        let m = s.iter().sum::<f64>() / n;
        (m, s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
    };
    let mut kept: Vec<usize> = Vec::new();
    for (i, &cp) in cps.iter().enumerate() {
        let start = kept.last().copied().unwrap_or(0);
        let end = cps.get(i + 1).copied().unwrap_or(series.len());
        if cp <= start || cp >= end {
            continue;
        }
        let (m1, v1) = mean_var(&series[start..cp]);
        let (m2, v2) = mean_var(&series[cp..end]);
        let pooled = ((v1 + v2) / 2.0).sqrt();
        let snr = if pooled > 0.0 { (m2 - m1).abs() / pooled } else { f64::INFINITY };
        if snr >= min_snr {
            kept.push(cp);
        }
    }
    kept
}
