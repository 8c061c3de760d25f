//! CART classification tree mapping client features to a configuration id.
//!
//! Splits maximize information gain (entropy criterion). Growth is
//! best-first: the frontier leaf with the largest gain is split next, until
//! the leaf budget is spent or no split has positive gain.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config_space::ConfigId;
use crate::error::{Error, Result};
use crate::netclass::{FeatureVector, FEATURE_COUNT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub features: FeatureVector,
    pub label: ConfigId,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_leaf_nodes: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_leaf_nodes: 80, min_samples_split: 2, min_samples_leaf: 1, max_depth: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { label: ConfigId, samples: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DTree {
    pub nodes: Vec<Node>,
}

/// Shannon entropy in bits of a label histogram.
pub fn entropy<I: IntoIterator<Item = usize>>(counts: I) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    -counts.iter().map(|&c| c as f64 / t).map(|p| p * p.log2()).sum::<f64>()
}

/// `c * log2(c)`, with `0 log 0 = 0`.
fn clogc(c: usize) -> f64 {
    if c == 0 {
        0.0
    } else {
        let c = c as f64;
        c * c.log2()
    }
}

/// Entropy of a histogram given `n` and the running sum of `c log2 c`.
fn entropy_from_sum(n: usize, sum_clogc: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    (n.log2() - sum_clogc / n).max(0.0)
}

#[derive(Clone, Copy, Debug)]
struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Builder<'a> {
    x: Vec<[f64; FEATURE_COUNT]>,
    y: Vec<usize>,
    n_labels: usize,
    features: Vec<usize>,
    params: &'a TreeParams,
}

impl Builder<'_> {
    fn majority(&self, idx: &[usize], labels: &[ConfigId]) -> ConfigId {
        let mut counts = vec![0usize; self.n_labels];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        // Dense labels are assigned in ascending config id order, so the
        // first maximum is the lowest id.
        let mut best = 0;
        for (l, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = l;
            }
        }
        labels[best]
    }

    fn best_split(&self, idx: &[usize], depth: usize) -> Option<Split> {
        let n = idx.len();
        if n < self.params.min_samples_split.max(2) || self.params.max_depth.is_some_and(|d| depth >= d) {
            return None;
        }
        let mut total = vec![0usize; self.n_labels];
        for &i in idx {
            total[self.y[i]] += 1;
        }
        let total_sum: f64 = total.iter().map(|&c| clogc(c)).sum();
        let parent = entropy_from_sum(n, total_sum);
        if parent <= 0.0 {
            return None;
        }
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<Split> = None;
        let mut order = idx.to_vec();
        let mut left = vec![0usize; self.n_labels];
        for &f in &self.features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            left.iter_mut().for_each(|c| *c = 0);
            let mut left_sum = 0.0;
            let mut right_sum = total_sum;
            for k in 0..n - 1 {
                let l = self.y[order[k]];
                let right_c = total[l] - left[l];
                left_sum += clogc(left[l] + 1) - clogc(left[l]);
                right_sum += clogc(right_c - 1) - clogc(right_c);
                left[l] += 1;
                let (a, b) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                let nl = k + 1;
                let nr = n - nl;
                if a == b || nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let child = (nl as f64 * entropy_from_sum(nl, left_sum) + nr as f64 * entropy_from_sum(nr, right_sum)) / n as f64;
                let gain = parent - child;
                let threshold = a + (b - a) / 2.0;
                // Features and thresholds are visited in ascending order, so a
                // strict comparison keeps the lowest on ties.
                if gain > 1e-12 && best.is_none_or(|s| gain > s.gain) {
                    best = Some(Split { gain, feature: f, threshold });
                }
            }
        }
        best
    }
}

struct Frontier {
    node: usize,
    idx: Vec<usize>,
    depth: usize,
    split: Option<Split>,
}

/// Trains a tree; labels on ties resolve to the lowest config id.
pub fn train(samples: &[TrainingSample], params: &TreeParams) -> Result<DTree> {
    if samples.is_empty() {
        return Err(Error::NoData);
    }
    let mut labels: Vec<ConfigId> = samples.iter().map(|s| s.label).collect();
    labels.sort();
    labels.dedup();
    let dense: HashMap<ConfigId, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let builder = Builder {
        x: samples.iter().map(|s| s.features.values).collect(),
        y: samples.iter().map(|s| dense[&s.label]).collect(),
        n_labels: labels.len(),
        features: samples[0].features.mask.active(),
        params,
    };

    let all: Vec<usize> = (0..samples.len()).collect();
    let mut nodes = vec![Node::Leaf { label: builder.majority(&all, &labels), samples: all.len() }];
    let split = builder.best_split(&all, 0);
    let mut frontier = vec![Frontier { node: 0, idx: all, depth: 0, split }];
    let mut leaves = 1;

    while leaves < params.max_leaf_nodes.max(1) {
        // Highest gain first; the earliest-created node wins ties.
        let mut pick: Option<usize> = None;
        for (i, f) in frontier.iter().enumerate() {
            if let Some(s) = f.split {
                let better = match pick {
                    None => true,
                    Some(p) => {
                        let ps = frontier[p].split.expect("picked entries have splits");
                        s.gain > ps.gain || (s.gain == ps.gain && f.node < frontier[p].node)
                    }
                };
                if better {
                    pick = Some(i);
                }
            }
        }
        let Some(p) = pick else { break };
        let leaf = frontier.swap_remove(p);
        let s = leaf.split.expect("picked entries have splits");
        let (li, ri): (Vec<usize>, Vec<usize>) = leaf.idx.iter().partition(|&&i| builder.x[i][s.feature] <= s.threshold);
        let (left, right) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { label: builder.majority(&li, &labels), samples: li.len() });
        nodes.push(Node::Leaf { label: builder.majority(&ri, &labels), samples: ri.len() });
        nodes[leaf.node] = Node::Split { feature: s.feature, threshold: s.threshold, left, right };
        let depth = leaf.depth + 1;
        let ls = builder.best_split(&li, depth);
        let rs = builder.best_split(&ri, depth);
        frontier.push(Frontier { node: left, idx: li, depth, split: ls });
        frontier.push(Frontier { node: right, idx: ri, depth, split: rs });
        leaves += 1;
    }
    Ok(DTree { nodes })
}

impl DTree {
    pub fn predict(&self, f: &FeatureVector) -> ConfigId {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { label, .. } => return label,
                Node::Split { feature, threshold, left, right } => {
                    i = if f.values[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn accuracy(&self, samples: &[TrainingSample]) -> f64 {
        let hits = samples.iter().filter(|s| self.predict(&s.features) == s.label).count();
        hits as f64 / samples.len() as f64
    }
}

/// Mean held-out accuracy over stratified folds, deterministic per seed.
pub fn cross_validate(samples: &[TrainingSample], folds: usize, params: &TreeParams, seed: u64) -> Result<f64> {
    if folds < 2 || samples.len() < folds {
        return Err(Error::TooFewForFolds { samples: samples.len(), folds });
    }
    let mut by_label: BTreeMap<ConfigId, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_label.entry(s.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; samples.len()];
    let mut next = 0;
    for idx in by_label.values_mut() {
        idx.shuffle(&mut rng);
        for &i in idx.iter() {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    let mut total = 0.0;
    for k in 0..folds {
        let train_set: Vec<TrainingSample> = samples.iter().zip(&fold_of).filter(|(_, &f)| f != k).map(|(s, _)| *s).collect();
        let test_set: Vec<TrainingSample> = samples.iter().zip(&fold_of).filter(|(_, &f)| f == k).map(|(s, _)| *s).collect();
        let tree = train(&train_set, params)?;
        total += tree.accuracy(&test_set);
    }
    Ok(total / folds as f64)
}
