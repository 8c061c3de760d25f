//! Per-class bandit ensemble: Latin-hypercube bootstrap, GP-directed
//! exploration, then decision-tree exploitation, with a population-wide
//! epsilon gate in front of all of it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::changepoint::{Bocd, BocdParams, ObsPrior, DEFAULT_HAZARD_LAMBDA};
use crate::config_space::{ConfigId, ConfigSpace, Configuration};
use crate::dtree::{self, DTree, TrainingSample, TreeParams};
use crate::error::{Error, Result};
use crate::gp::{GpSearch, GpSearchParams};
use crate::netclass::FeatureVector;

/// Which decision source produced a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmTag {
    Lhc,
    Gp,
    Epsilon,
    DTree,
    Default,
    /// Baseline exploration (round robin, random arm, bootstrap).
    Explore,
    /// Baseline exploitation of an incumbent.
    Exploit,
    /// Ground-truth choice of the optimal strategy.
    Oracle,
}

impl ArmTag {
    pub const ALL: [ArmTag; 8] = [
        ArmTag::Lhc,
        ArmTag::Gp,
        ArmTag::Epsilon,
        ArmTag::DTree,
        ArmTag::Default,
        ArmTag::Explore,
        ArmTag::Exploit,
        ArmTag::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArmTag::Lhc => "lhc",
            ArmTag::Gp => "gp",
            ArmTag::Epsilon => "epsilon",
            ArmTag::DTree => "dtree",
            ArmTag::Default => "default",
            ArmTag::Explore => "explore",
            ArmTag::Exploit => "exploit",
            ArmTag::Oracle => "oracle",
        }
    }
}

impl fmt::Display for ArmTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArmTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArmTag::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown arm tag {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformanceSample {
    pub ts_ms: u64,
    pub client: usize,
    pub class_id: usize,
    pub pop: usize,
    pub features: FeatureVector,
    pub website: usize,
    pub config: ConfigId,
    pub plt_ms: f64,
    pub arm: ArmTag,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleParams {
    pub epsilon: f64,
    pub search: GpSearchParams,
    pub tree: TreeParams,
    /// A challenger replaces the steady-state incumbent when its geometric
    /// mean PLT is lower by more than this fraction.
    pub switch_margin: f64,
    /// Observations a configuration needs before it can become the incumbent
    /// (ignored while no configuration has that many).
    pub min_incumbent_samples: usize,
    /// Observations a challenger needs before it can unseat the incumbent.
    pub min_switch_samples: usize,
    /// Number of most recent class samples used for incumbent means; `None`
    /// uses the whole history.
    pub staleness_window: Option<usize>,
    /// Tree training uses at most this many of the most recent samples.
    pub tree_sample_cap: usize,
    /// Re-enter GP exploration when a changepoint appears in the incumbent's
    /// PLT stream.
    pub drift_reset: bool,
    pub drift_hazard: f64,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        EnsembleParams {
            epsilon: 0.05,
            search: GpSearchParams::default(),
            tree: TreeParams::default(),
            switch_margin: 0.10,
            min_incumbent_samples: 3,
            min_switch_samples: 3,
            staleness_window: None,
            tree_sample_cap: 4_000,
            drift_reset: false,
            drift_hazard: DEFAULT_HAZARD_LAMBDA,
        }
    }
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if self.search.init_sample == 0 || self.tree.max_leaf_nodes == 0 {
            return Err(Error::Config("init_sample and max_leaf_nodes must be positive".into()));
        }
        Ok(())
    }
}

/// Arms switched off for ablations. Bookkeeping is unaffected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub no_gp: bool,
    pub no_dt: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassPhase {
    Bootstrap,
    GpExplore,
    Steady,
}

/// The decision a class publishes; served per session by [`ClassRule::serve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum ClassRule {
    /// Rotate through the bootstrap configurations still awaiting feedback.
    Bootstrap { slots: Vec<(ConfigId, ArmTag)> },
    Explore { config: ConfigId },
    /// Tree prediction when a tree is available, else the incumbent.
    Steady { best: ConfigId },
}

impl ClassRule {
    pub fn serve(&self, counter: &mut usize, tree: Option<&DTree>, features: &FeatureVector) -> (ConfigId, ArmTag) {
        match self {
            ClassRule::Bootstrap { slots } => {
                let slot = slots[*counter % slots.len()];
                *counter += 1;
                slot
            }
            ClassRule::Explore { config } => (*config, ArmTag::Gp),
            ClassRule::Steady { best } => (tree.map_or(*best, |t| t.predict(features)), ArmTag::DTree),
        }
    }

    /// The class-level configuration, ignoring per-session tree routing.
    pub fn primary(&self) -> ConfigId {
        match self {
            ClassRule::Bootstrap { slots } => slots[0].0,
            ClassRule::Explore { config } => *config,
            ClassRule::Steady { best } => *best,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClassState {
    pub class_id: usize,
    pub phase: ClassPhase,
    pub search: GpSearch,
    /// Sum of ln PLT and count per configuration over the whole
    /// history. Means are compared in log space so rare heavy-tailed loads
    /// do not dominate.
    stats: BTreeMap<ConfigId, (f64, usize)>,
    history: Vec<(ConfigId, f64)>,
    pub best: Option<ConfigId>,
    bootstrap: Vec<(ConfigId, ArmTag)>,
    pub dt_seeded: bool,
    suggestion: Option<ConfigId>,
    /// GP suggestions issued since the class was created or last reset.
    pub gp_steps: usize,
    /// GP suggestions issued before the most recent stop.
    pub steps_to_stop: Option<usize>,
    counter: usize,
    bocd: Option<Bocd>,
    pub resets: usize,
}

impl ClassState {
    pub fn sample_count(&self) -> usize {
        self.history.len()
    }

    /// Geometric mean of the PLT observed for `id`.
    pub fn mean_plt(&self, id: ConfigId) -> Option<f64> {
        self.stats.get(&id).map(|(s, n)| (s / *n as f64).exp())
    }

    pub fn bootstrap_configs(&self) -> &[(ConfigId, ArmTag)] {
        &self.bootstrap
    }

    fn windowed_stats(&self, window: Option<usize>) -> BTreeMap<ConfigId, (f64, usize)> {
        match window {
            None => self.stats.clone(),
            Some(w) => {
                let mut m = BTreeMap::new();
                for (id, v) in &self.history[self.history.len().saturating_sub(w)..] {
                    let e = m.entry(*id).or_insert((0.0, 0));
                    e.0 += v;
                    e.1 += 1;
                }
                m
            }
        }
    }

    fn argmin_mean(stats: &BTreeMap<ConfigId, (f64, usize)>, min_count: usize) -> Option<(ConfigId, f64)> {
        let mut best: Option<(ConfigId, f64)> = None;
        for (&id, &(s, n)) in stats {
            if n < min_count.max(1) {
                continue;
            }
            let m = s / n as f64;
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((id, m));
            }
        }
        best
    }

    /// Lowest mean log PLT among configurations with enough samples, falling
    /// back to any observed configuration.
    fn incumbent(&self, params: &EnsembleParams) -> Option<ConfigId> {
        let stats = self.windowed_stats(params.staleness_window);
        Self::argmin_mean(&stats, params.min_incumbent_samples)
            .or_else(|| Self::argmin_mean(&stats, 1))
            .map(|(id, _)| id)
    }

    pub fn rule(&self) -> ClassRule {
        match self.phase {
            ClassPhase::Bootstrap => {
                let pending: Vec<(ConfigId, ArmTag)> =
                    self.bootstrap.iter().copied().filter(|(id, _)| !self.stats.contains_key(id)).collect();
                ClassRule::Bootstrap { slots: if pending.is_empty() { self.bootstrap.clone() } else { pending } }
            }
            ClassPhase::GpExplore => match self.suggestion {
                Some(config) => ClassRule::Explore { config },
                None => ClassRule::Bootstrap { slots: self.bootstrap.clone() },
            },
            ClassPhase::Steady => ClassRule::Steady {
                best: self.best.or(self.bootstrap.first().map(|s| s.0)).expect("steady classes have data"),
            },
        }
    }
}

fn class_seed(seed: u64, class_id: usize) -> u64 {
    seed ^ (class_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Manager-side learning state for all classes.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub params: EnsembleParams,
    pub variant: Variant,
    pub space: ConfigSpace,
    seed: u64,
    classes: BTreeMap<usize, ClassState>,
    tree: Option<DTree>,
    samples: Vec<PerformanceSample>,
}

impl Ensemble {
    pub fn new(params: EnsembleParams, variant: Variant, space: ConfigSpace, seed: u64) -> Self {
        Ensemble { params, variant, space, seed, classes: BTreeMap::new(), tree: None, samples: Vec::new() }
    }

    pub fn class(&self, id: usize) -> Option<&ClassState> {
        self.classes.get(&id)
    }

    pub fn classes(&self) -> impl Iterator<Item = &ClassState> {
        self.classes.values()
    }

    pub fn tree(&self) -> Option<&DTree> {
        self.tree.as_ref()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Creates the class on first sight: a Latin-hypercube bootstrap set whose
    /// first slot is the tree's prediction when a tree already exists.
    pub fn ensure_class(&mut self, class_id: usize, features: &FeatureVector) -> &mut ClassState {
        if !self.classes.contains_key(&class_id) {
            let mut rng = ChaCha8Rng::seed_from_u64(class_seed(self.seed, class_id));
            let k = self.params.search.init_sample.min(self.space.len());
            let lhc = self.space.lhc_sample(k, &mut rng).expect("bootstrap size bounded by space size");
            let mut bootstrap: Vec<(ConfigId, ArmTag)> = lhc.iter().map(|c| (c.id(), ArmTag::Lhc)).collect();
            let mut dt_seeded = false;
            if let (Some(tree), false) = (&self.tree, self.variant.no_dt) {
                let predicted = tree.predict(features);
                bootstrap[0] = (predicted, ArmTag::DTree);
                dt_seeded = true;
            }
            let state = ClassState {
                class_id,
                phase: ClassPhase::Bootstrap,
                search: GpSearch::new(self.params.search),
                stats: BTreeMap::new(),
                history: Vec::new(),
                best: None,
                bootstrap,
                dt_seeded,
                suggestion: None,
                gp_steps: 0,
                steps_to_stop: None,
                counter: 0,
                bocd: None,
                resets: 0,
            };
            self.classes.insert(class_id, state);
        }
        self.classes.get_mut(&class_id).expect("inserted above")
    }

    /// Direct per-session decision: epsilon gate, then the class rule.
    pub fn on_session<R: Rng + ?Sized>(&mut self, class_id: usize, features: &FeatureVector, rng: &mut R) -> (Configuration, ArmTag) {
        let u: f64 = rng.random();
        if u < self.params.epsilon {
            return (self.space.random(rng), ArmTag::Epsilon);
        }
        self.ensure_class(class_id, features);
        self.refresh(class_id);
        let tree = if self.variant.no_dt { None } else { self.tree.clone() };
        let state = self.classes.get_mut(&class_id).expect("class ensured");
        let rule = state.rule();
        let (id, arm) = rule.serve(&mut state.counter, tree.as_ref(), features);
        (Configuration::from_id(id), arm)
    }

    pub fn on_feedback(&mut self, sample: PerformanceSample) {
        let params = self.params;
        let log_plt = sample.plt_ms.ln();
        let state = self.ensure_class(sample.class_id, &sample.features);
        let config = Configuration::from_id(sample.config);
        let e = state.stats.entry(sample.config).or_insert((0.0, 0));
        e.0 += log_plt;
        e.1 += 1;
        state.history.push((sample.config, log_plt));
        // Epsilon draws are single scattered samples; they inform the
        // incumbent statistics but not the GP's directed search.
        if sample.arm != ArmTag::Epsilon {
            state.search.observe(&config, sample.plt_ms);
        }

        let mut drifted = false;
        if state.phase != ClassPhase::Steady || state.best.is_none() {
            state.best = state.incumbent(&params);
        } else if let Some(best) = state.best {
            if sample.config != best {
                let stats = state.windowed_stats(params.staleness_window);
                let (cs, cn) = stats.get(&sample.config).copied().unwrap_or((0.0, 0));
                let incumbent_mean = stats.get(&best).map(|(s, n)| s / *n as f64);
                if cn >= params.min_switch_samples.max(1) {
                    if let Some(im) = incumbent_mean {
                        if cs / (cn as f64) < im + (1.0 - params.switch_margin).ln() {
                            state.best = Some(sample.config);
                            state.bocd = None;
                        }
                    }
                }
            } else if params.drift_reset {
                let x = log_plt;
                let det = state.bocd.get_or_insert_with(|| {
                    Bocd::new(BocdParams::new(params.drift_hazard, ObsPrior::new(x, 0.1)))
                });
                drifted = det.step(x).is_some();
            }
        }
        if drifted {
            self.reset_class_on_drift(sample.class_id);
        }
        self.samples.push(sample);
    }

    /// Advances the class's phase and GP suggestion given the feedback so far.
    pub fn refresh(&mut self, class_id: usize) {
        let variant = self.variant;
        let min_tested = self.params.search.min_sample_tested;
        let threshold = self.params.search.ei_rel_threshold;
        let space = &self.space;
        let Some(state) = self.classes.get_mut(&class_id) else { return };
        if state.phase == ClassPhase::Bootstrap && state.bootstrap.iter().all(|(id, _)| state.stats.contains_key(id)) {
            state.phase = if variant.no_gp { ClassPhase::Steady } else { ClassPhase::GpExplore };
            state.best = state.best.or(state.bootstrap.first().map(|s| s.0));
        }
        if state.phase == ClassPhase::GpExplore && state.suggestion.is_none_or(|s| state.stats.contains_key(&s)) {
            let next = state.search.suggest_next(space.configs());
            let stop = state.search.tested_count() >= min_tested && next.as_ref().map_or(true, |(_, ei)| *ei < threshold);
            match next {
                Ok((c, _)) if !stop => {
                    state.suggestion = Some(c.id());
                    state.gp_steps += 1;
                }
                _ => {
                    state.phase = ClassPhase::Steady;
                    state.suggestion = None;
                    state.steps_to_stop = Some(state.gp_steps);
                }
            }
        }
    }

    pub fn refresh_all(&mut self) {
        let ids: Vec<usize> = self.classes.keys().copied().collect();
        for id in ids {
            self.refresh(id);
        }
    }

    /// Back to GP exploration with the history kept.
    pub fn reset_class_on_drift(&mut self, class_id: usize) {
        if let Some(state) = self.classes.get_mut(&class_id) {
            state.phase = ClassPhase::GpExplore;
            state.suggestion = None;
            state.bootstrap.clear();
            if let Some(best) = state.best {
                state.bootstrap.push((best, ArmTag::Gp));
            }
            state.bocd = None;
            state.gp_steps = 0;
            state.resets += 1;
        }
    }

    /// Trains the cross-class tree: every recent sample labelled with its
    /// class's incumbent.
    pub fn update_models(&mut self) -> Result<&DTree> {
        let cap = self.params.tree_sample_cap.max(1);
        let start = self.samples.len().saturating_sub(cap);
        let training: Vec<TrainingSample> = self.samples[start..]
            .iter()
            .filter_map(|s| {
                let best = self.classes.get(&s.class_id)?.best?;
                Some(TrainingSample { features: s.features, label: best })
            })
            .collect();
        if training.is_empty() {
            return Err(Error::NoData);
        }
        self.tree = Some(dtree::train(&training, &self.params.tree)?);
        Ok(self.tree.as_ref().expect("trained above"))
    }

    /// Current per-class decisions.
    pub fn decisions(&self) -> BTreeMap<usize, ClassRule> {
        self.classes.iter().filter(|(_, s)| !s.bootstrap.is_empty() || s.best.is_some()).map(|(&id, s)| (id, s.rule())).collect()
    }
}

/// Per-bucket fraction of decisions by arm. Empty buckets yield empty maps.
pub fn arm_contributions(tags: impl IntoIterator<Item = (usize, ArmTag)>) -> Vec<BTreeMap<ArmTag, f64>> {
    let mut counts: Vec<BTreeMap<ArmTag, usize>> = Vec::new();
    for (bucket, tag) in tags {
        if counts.len() <= bucket {
            counts.resize(bucket + 1, BTreeMap::new());
        }
        *counts[bucket].entry(tag).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .map(|m| {
            let total: usize = m.values().sum();
            m.into_iter().map(|(k, v)| (k, v as f64 / total as f64)).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netclass::FeatureMask;
    use crate::plt_oracle::{noiseless_plt, OracleParams};
    use crate::workload::{NetworkCondition, Website};

    fn fv(x: f64) -> FeatureVector {
        FeatureVector { values: [x, 0.0, 0.0, 0.0], mask: FeatureMask::all() }
    }

    fn sample(class_id: usize, config: ConfigId, plt: f64, x: f64) -> PerformanceSample {
        PerformanceSample {
            ts_ms: 0,
            client: 0,
            class_id,
            pop: 0,
            features: fv(x),
            website: 0,
            config,
            plt_ms: plt,
            arm: ArmTag::Gp,
        }
    }

    fn greedy() -> EnsembleParams {
        EnsembleParams { epsilon: 0.0, ..EnsembleParams::default() }
    }

    #[test]
    fn new_class_serves_lhc_quartet_first() {
        let mut e = Ensemble::new(greedy(), Variant::default(), ConfigSpace::full(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let first: Vec<(ConfigId, ArmTag)> = (0..4).map(|_| {
            let (c, a) = e.on_session(3, &fv(0.0), &mut rng);
            (c.id(), a)
        }).collect();
        assert_eq!(first, e.class(3).unwrap().bootstrap_configs());
        assert!(first.iter().all(|(_, a)| *a == ArmTag::Lhc));
        let mut expected = ConfigSpace::full().lhc_sample(4, &mut ChaCha8Rng::seed_from_u64(class_seed(1, 3))).unwrap();
        expected.sort_by_key(|c| c.id());
        let mut got: Vec<ConfigId> = first.iter().map(|s| s.0).collect();
        got.sort();
        assert_eq!(got, expected.iter().map(|c| c.id()).collect::<Vec<_>>());
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let params = EnsembleParams { epsilon: 1.0, ..EnsembleParams::default() };
        let mut e = Ensemble::new(params, Variant::default(), ConfigSpace::full(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut hist = vec![0usize; 768];
        for _ in 0..76_800 {
            let (c, a) = e.on_session(0, &fv(0.0), &mut rng);
            assert_eq!(a, ArmTag::Epsilon);
            hist[c.id().index()] += 1;
        }
        // Chi-square with 767 dof; mean 767, sd about 39.
        let chi2: f64 = hist.iter().map(|&h| (h as f64 - 100.0).powi(2) / 100.0).sum();
        assert!(chi2 < 767.0 + 5.0 * 39.2, "{chi2}");
    }

    #[test]
    fn feedback_tracks_incumbent() {
        let mut e = Ensemble::new(greedy(), Variant::default(), ConfigSpace::full(), 1);
        e.on_feedback(sample(0, ConfigId(5), 400.0, 0.0));
        assert_eq!(e.class(0).unwrap().best, Some(ConfigId(5)));
        e.on_feedback(sample(0, ConfigId(9), 300.0, 0.0));
        assert_eq!(e.class(0).unwrap().best, Some(ConfigId(9)));
    }

    fn steady_class(e: &mut Ensemble, incumbent: ConfigId, mean: f64) {
        e.on_feedback(sample(0, incumbent, mean, 0.0));
        let s = e.classes.get_mut(&0).unwrap();
        s.phase = ClassPhase::Steady;
        for _ in 0..4 {
            e.on_feedback(sample(0, incumbent, mean, 0.0));
        }
    }

    #[test]
    fn steady_incumbent_switches_only_beyond_margin() {
        let mut e = Ensemble::new(greedy(), Variant::default(), ConfigSpace::full(), 1);
        steady_class(&mut e, ConfigId(1), 400.0);
        for _ in 0..5 {
            e.on_feedback(sample(0, ConfigId(2), 370.0, 0.0));
        }
        assert_eq!(e.class(0).unwrap().best, Some(ConfigId(1)));
        for _ in 0..3 {
            e.on_feedback(sample(0, ConfigId(3), 350.0, 0.0));
        }
        assert_eq!(e.class(0).unwrap().best, Some(ConfigId(3)));
    }

    #[test]
    fn models_predict_class_best() {
        let mut e = Ensemble::new(greedy(), Variant::default(), ConfigSpace::full(), 1);
        for i in 0..20 {
            e.on_feedback(sample(0, ConfigId(7), 300.0, i as f64 * 0.01));
        }
        let t = e.update_models().unwrap().clone();
        assert_eq!(t.predict(&fv(-100.0)), ConfigId(7));
        assert_eq!(t.predict(&fv(100.0)), ConfigId(7));

        for i in 0..20 {
            e.on_feedback(sample(1, ConfigId(99), 200.0, 10.0 + i as f64 * 0.01));
        }
        let t = e.update_models().unwrap();
        assert_eq!(t.predict(&fv(0.1)), ConfigId(7));
        assert_eq!(t.predict(&fv(10.1)), ConfigId(99));
    }

    #[test]
    fn update_without_data_errors() {
        let mut e = Ensemble::new(greedy(), Variant::default(), ConfigSpace::full(), 1);
        assert!(matches!(e.update_models(), Err(Error::NoData)));
    }

    #[test]
    fn dt_seeds_first_slot_only_when_tree_exists() {
        let mut e = Ensemble::new(greedy(), Variant::default(), ConfigSpace::full(), 1);
        e.ensure_class(0, &fv(0.0));
        assert!(!e.class(0).unwrap().dt_seeded);
        for _ in 0..5 {
            e.on_feedback(sample(0, ConfigId(42), 100.0, 0.0));
        }
        e.update_models().unwrap();
        e.ensure_class(1, &fv(0.0));
        let c = e.class(1).unwrap();
        assert!(c.dt_seeded);
        assert_eq!(c.bootstrap_configs()[0], (ConfigId(42), ArmTag::DTree));

        let mut nodt = Ensemble::new(greedy(), Variant { no_dt: true, no_gp: false }, ConfigSpace::full(), 1);
        nodt.on_feedback(sample(0, ConfigId(42), 100.0, 0.0));
        nodt.update_models().unwrap();
        nodt.ensure_class(1, &fv(0.0));
        assert!(!nodt.class(1).unwrap().dt_seeded);
    }

    /// One-condition class on the noiseless oracle; returns decisions issued.
    fn drive(variant: Variant, rounds: usize) -> (Ensemble, Vec<ConfigId>) {
        let w = Website::new("w", 30, 8_000, 40_000, "t");
        let n = NetworkCondition::new(3_000.0, 120.0, 0.03).unwrap();
        let p = OracleParams::default().noiseless();
        let mut e = Ensemble::new(greedy(), variant, ConfigSpace::full(), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut out = Vec::new();
        for _ in 0..rounds {
            let (c, arm) = e.on_session(0, &fv(0.0), &mut rng);
            out.push(c.id());
            let mut s = sample(0, c.id(), noiseless_plt(&c, &n, &w, &p), 0.0);
            s.arm = arm;
            e.on_feedback(s);
            if e.class(0).unwrap().phase == ClassPhase::Steady && e.tree().is_none() && !variant.no_dt {
                e.update_models().unwrap();
            }
        }
        (e, out)
    }

    #[test]
    fn converges_to_fixed_incumbent_on_noiseless_oracle() {
        let (e, out) = drive(Variant::default(), 80);
        let c = e.class(0).unwrap();
        assert_eq!(c.phase, ClassPhase::Steady);
        let stop_at = 4 + c.steps_to_stop.unwrap();
        assert!(stop_at < 60);
        let tail = &out[stop_at + 1..];
        assert!(tail.windows(2).all(|w| w[0] == w[1]), "{tail:?}");
        // The incumbent is the best configuration the class tested.
        let best_seen = out[..=stop_at].iter().map(|id| c.mean_plt(*id).unwrap()).fold(f64::INFINITY, f64::min);
        assert_eq!(c.mean_plt(tail[0]).unwrap(), best_seen);
    }

    #[test]
    fn variants_only_change_arm_selection() {
        let (nogp, out) = drive(Variant { no_gp: true, no_dt: false }, 30);
        assert!(nogp.classes().all(|c| c.gp_steps == 0));
        assert_eq!(nogp.class(0).unwrap().sample_count(), out.len());
        let (nodt, _) = drive(Variant { no_gp: false, no_dt: true }, 30);
        assert!(nodt.tree().is_none());
        assert_eq!(nodt.class(0).unwrap().sample_count(), 30);
    }

    #[test]
    fn reset_preserves_history() {
        let (mut e, _) = drive(Variant::default(), 40);
        let before = e.class(0).unwrap().sample_count();
        e.reset_class_on_drift(0);
        let c = e.class(0).unwrap();
        assert_eq!(c.phase, ClassPhase::GpExplore);
        assert_eq!(c.sample_count(), before);
        assert_eq!(c.resets, 1);
    }

    #[test]
    fn arm_fractions_sum_to_one() {
        let fr = arm_contributions([(0, ArmTag::Gp), (0, ArmTag::Gp), (2, ArmTag::DTree), (2, ArmTag::Gp), (2, ArmTag::Epsilon)]);
        assert_eq!(fr[0][&ArmTag::Gp], 1.0);
        assert!(fr[1].is_empty());
        assert!((fr[2].values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn arm_tag_names_round_trip() {
        for a in ArmTag::ALL {
            assert_eq!(a.name().parse::<ArmTag>().unwrap(), a);
        }
    }
}
