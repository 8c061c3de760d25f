//! Network classes: k-means clustering of clients over standardized
//! network features, and the nearest-centroid rules pushed to agents.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{NetworkCondition, Website};

pub const FEATURE_COUNT: usize = 4;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = ["bandwidth", "rtt", "loss", "complexity"];

const MAX_LLOYD_ITERATIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureMask(u8);

impl FeatureMask {
    pub fn all() -> Self {
        FeatureMask((1 << FEATURE_COUNT) - 1)
    }

    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        let bits = indices.iter().fold(0u8, |m, &i| m | (1 << i));
        let mask = FeatureMask(bits & Self::all().0);
        if mask.0 == 0 {
            return Err(Error::InvalidConfig("feature mask selects no features".into()));
        }
        Ok(mask)
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 & (1 << i) != 0
    }

    pub fn active(self) -> Vec<usize> {
        (0..FEATURE_COUNT).filter(|&i| self.contains(i)).collect()
    }
}

impl Default for FeatureMask {
    fn default() -> Self {
        Self::all()
    }
}

impl FromStr for FeatureMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(Self::all());
        }
        let mut indices = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let i = match part {
                "bandwidth" | "bw" => 0,
                "rtt" | "latency" => 1,
                "loss" => 2,
                "complexity" | "website" => 3,
                _ => return Err(Error::InvalidConfig(format!("unknown feature {part:?}"))),
            };
            indices.push(i);
        }
        Self::from_indices(&indices)
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.active().into_iter().map(|i| FEATURE_NAMES[i]).collect();
        f.write_str(&names.join(","))
    }
}

/// Raw client features, already log-scaled where the magnitude spans decades.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_COUNT],
    pub mask: FeatureMask,
}

impl FeatureVector {
    pub fn new(n: &NetworkCondition, w: &Website, mask: FeatureMask) -> Self {
        FeatureVector {
            values: [n.bandwidth_kbps.ln(), n.rtt_ms.ln(), n.loss_rate, w.complexity_bytes().ln()],
            mask,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcModel {
    pub mask: FeatureMask,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Standardized centroids over the active features.
    pub centroids: Vec<Vec<f64>>,
}

impl NcModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn standardize(&self, f: &FeatureVector) -> Vec<f64> {
        standardize(&f.values, self.mask, &self.means, &self.stds)
    }

    /// Mean squared distance of samples to their assigned centroid, summed.
    pub fn inertia(&self, samples: &[FeatureVector]) -> f64 {
        samples
            .iter()
            .map(|s| {
                let z = self.standardize(s);
                dist2(&z, &self.centroids[nearest(&self.centroids, &z)])
            })
            .sum()
    }
}

fn standardize(values: &[f64; FEATURE_COUNT], mask: FeatureMask, means: &[f64], stds: &[f64]) -> Vec<f64> {
    mask.active().iter().enumerate().map(|(j, &i)| (values[i] - means[j]) / stds[j]).collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(centroids: &[Vec<f64>], z: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(c, z);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Standardization fitted to the samples: per active feature mean and
/// population standard deviation (1 for constant features).
fn fit_standardization(samples: &[FeatureVector], mask: FeatureMask) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let active = mask.active();
    let means: Vec<f64> = active.iter().map(|&i| samples.iter().map(|s| s.values[i]).sum::<f64>() / n).collect();
    let stds = active
        .iter()
        .zip(&means)
        .map(|(&i, m)| {
            let sd = (samples.iter().map(|s| (s.values[i] - m).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (means, stds)
}

fn kmeans_pp<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// One Lloyd run from `centroids`; returns (centroids, assignment).
fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = points[0].len();
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for (c, (s, &n)) in centroids.iter_mut().zip(sums.iter().zip(&counts)) {
            // An empty cluster keeps its previous centroid.
            if n > 0 {
                *c = s.iter().map(|v| v / n as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    (centroids, assign)
}

/// k-means++ seeding followed by Lloyd iterations on z-scored features.
pub fn fit<R: Rng + ?Sized>(samples: &[FeatureVector], k: usize, rng: &mut R) -> Result<NcModel> {
    if k == 0 || k > samples.len() {
        return Err(Error::TooFewSamples { k, samples: samples.len() });
    }
    let mask = samples[0].mask;
    let (means, stds) = fit_standardization(samples, mask);
    let points: Vec<Vec<f64>> = samples.iter().map(|s| standardize(&s.values, mask, &means, &stds)).collect();
    let seeds = kmeans_pp(&points, k, rng);
    let (centroids, _) = lloyd(&points, seeds);
    Ok(NcModel { mask, means, stds, centroids })
}

pub fn classify(model: &NcModel, f: &FeatureVector) -> usize {
    nearest(&model.centroids, &model.standardize(f))
}

/// Smallest k in `[2, k_max]` for which at least 90% of non-empty clusters
/// have a coefficient of variation of `default_plts` within `cv_threshold`.
pub fn choose_k<R: Rng + ?Sized>(
    samples: &[FeatureVector],
    default_plts: &[f64],
    cv_threshold: f64,
    k_max: usize,
    rng: &mut R,
) -> usize {
    assert_eq!(samples.len(), default_plts.len(), "samples and plts must align");
    let k_max = k_max.max(2);
    for k in 2..=k_max.min(samples.len()) {
        let Ok(model) = fit(samples, k, rng) else { break };
        let mut groups: Vec<Vec<f64>> = vec![Vec::new(); k];
        for (s, &y) in samples.iter().zip(default_plts) {
            groups[classify(&model, s)].push(y);
        }
        let nonempty: Vec<&Vec<f64>> = groups.iter().filter(|g| !g.is_empty()).collect();
        let tight = nonempty.iter().filter(|g| coefficient_of_variation(g) <= cv_threshold).count();
        if tight as f64 >= 0.9 * nonempty.len() as f64 {
            return k;
        }
    }
    k_max
}

fn coefficient_of_variation(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    if m == 0.0 {
        0.0
    } else {
        sd / m.abs()
    }
}

/// Versioned, serializable classification rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcRuleMap {
    pub version: u64,
    pub feature_names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub centroids: Vec<Vec<f64>>,
}

/// Hands out strictly increasing rule-map versions.
#[derive(Clone, Debug, Default)]
pub struct VersionClock {
    last: u64,
}

impl VersionClock {
    pub fn next(&mut self) -> u64 {
        self.last += 1;
        self.last
    }
}

pub fn export_rules(model: &NcModel, clock: &mut VersionClock) -> NcRuleMap {
    NcRuleMap {
        version: clock.next(),
        feature_names: model.mask.active().iter().map(|&i| FEATURE_NAMES[i].to_string()).collect(),
        means: model.means.clone(),
        stds: model.stds.clone(),
        centroids: model.centroids.clone(),
    }
}

pub fn import_rules(rules: &NcRuleMap) -> Result<NcModel> {
    let mut indices = Vec::new();
    for name in &rules.feature_names {
        match FEATURE_NAMES.iter().position(|n| n == name) {
            Some(i) => indices.push(i),
            None => return Err(Error::InvalidConfig(format!("unknown feature {name:?}"))),
        }
    }
    let mask = FeatureMask::from_indices(&indices)?;
    let d = indices.len();
    if rules.means.len() != d || rules.stds.len() != d || rules.centroids.is_empty() || rules.centroids.iter().any(|c| c.len() != d) {
        return Err(Error::InvalidConfig("rule map dimensions disagree".into()));
    }
    Ok(NcModel { mask, means: rules.means.clone(), stds: rules.stds.clone(), centroids: rules.centroids.clone() })
}
