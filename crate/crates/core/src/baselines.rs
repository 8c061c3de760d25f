//! Every decision strategy behind one interface: the comparison baselines,
//! the full ensemble driven through the control plane, and its two
//! single-arm ablations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{ArmTag, Ensemble, EnsembleParams, PerformanceSample, Variant};
use crate::config_space::{default_config, ConfigId, ConfigSpace, Configuration};
use crate::control_plane::{ControlPlane, CpEvent, Lookup, Source, Topology};
use crate::error::{Error, Result};
use crate::gp::{GpSearch, GpSearchParams};
use crate::netclass::{FeatureVector, NcModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    Default,
    Brute,
    BruteNc,
    Bo,
    BoNc,
    CherryPickNc,
    MabNc,
    Optimal,
    ConfigTron,
    ConfigTronNoGp,
    ConfigTronNoDt,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 11] = [
        StrategyKind::Default,
        StrategyKind::Brute,
        StrategyKind::BruteNc,
        StrategyKind::Bo,
        StrategyKind::BoNc,
        StrategyKind::CherryPickNc,
        StrategyKind::MabNc,
        StrategyKind::Optimal,
        StrategyKind::ConfigTron,
        StrategyKind::ConfigTronNoGp,
        StrategyKind::ConfigTronNoDt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Default => "default",
            StrategyKind::Brute => "brute",
            StrategyKind::BruteNc => "brute-nc",
            StrategyKind::Bo => "bo",
            StrategyKind::BoNc => "bo-nc",
            StrategyKind::CherryPickNc => "cherrypick-nc",
            StrategyKind::MabNc => "mab-nc",
            StrategyKind::Optimal => "optimal",
            StrategyKind::ConfigTron => "configtron",
            StrategyKind::ConfigTronNoGp => "configtron-nogp",
            StrategyKind::ConfigTronNoDt => "configtron-nodt",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            StrategyKind::ConfigTron => Some(Variant::default()),
            StrategyKind::ConfigTronNoGp => Some(Variant { no_gp: true, no_dt: false }),
            StrategyKind::ConfigTronNoDt => Some(Variant { no_gp: false, no_dt: true }),
            _ => None,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm || k.name().replace('-', "") == norm)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyParams {
    pub ensemble: EnsembleParams,
    pub cherrypick_init_sample: usize,
    pub cherrypick_ei_threshold: f64,
    /// Base exploration rate for the per-class epsilon-greedy bandit.
    pub mab_epsilon0: f64,
}

impl Default for StrategyParams {
    fn default() -> Self {
        StrategyParams {
            ensemble: EnsembleParams::default(),
            cherrypick_init_sample: 6,
            cherrypick_ei_threshold: 0.10,
            mab_epsilon0: 1.0,
        }
    }
}

/// What a strategy sees when a session arrives or changes phase.
#[derive(Clone, Copy, Debug)]
pub struct DecisionRequest<'a> {
    /// Position of the session in arrival order.
    pub session: usize,
    pub client: usize,
    pub class_id: usize,
    pub pop: usize,
    pub features: &'a FeatureVector,
    pub t_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub config: ConfigId,
    pub arm: ArmTag,
    pub lookup: Option<Lookup>,
}

impl Decision {
    fn new(config: ConfigId, arm: ArmTag) -> Self {
        Decision { config, arm, lookup: None }
    }
}

pub trait Strategy {
    fn kind(&self) -> StrategyKind;

    fn decide(&mut self, req: &DecisionRequest) -> Decision;

    /// Called when a session enters phase `phase` (≥ 1). `None` keeps the
    /// current configuration.
    fn reconfigure(&mut self, _req: &DecisionRequest, _phase: usize, _current: &Decision) -> Option<Decision> {
        None
    }

    fn feedback(&mut self, sample: PerformanceSample);

    /// Model-update tick.
    fn tick(&mut self, _t_ms: u64) -> Result<()> {
        Ok(())
    }

    fn drain_events(&mut self) -> Vec<CpEvent> {
        Vec::new()
    }

    fn control_plane(&self) -> Option<&ControlPlane> {
        None
    }
}

pub struct DefaultStrategy;

impl Strategy for DefaultStrategy {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Default
    }

    fn decide(&mut self, _req: &DecisionRequest) -> Decision {
        Decision::new(default_config().id(), ArmTag::Default)
    }

    fn feedback(&mut self, _sample: PerformanceSample) {}
}

/// Serves the precomputed per-phase argmin under the true condition.
pub struct OptimalStrategy {
    table: Arc<Vec<Vec<ConfigId>>>,
}

impl OptimalStrategy {
    pub fn new(table: Arc<Vec<Vec<ConfigId>>>) -> Self {
        OptimalStrategy { table }
    }
}

impl Strategy for OptimalStrategy {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Optimal
    }

    fn decide(&mut self, req: &DecisionRequest) -> Decision {
        Decision::new(self.table[req.session][0], ArmTag::Oracle)
    }

    fn reconfigure(&mut self, req: &DecisionRequest, phase: usize, current: &Decision) -> Option<Decision> {
        let id = self.table[req.session][phase];
        (id != current.config).then(|| Decision::new(id, ArmTag::Oracle))
    }

    fn feedback(&mut self, _sample: PerformanceSample) {}
}

/// Tests every configuration once per key, then keeps the best mean.
#[derive(Clone, Debug, Default)]
pub struct BruteState {
    next: usize,
    stats: BTreeMap<ConfigId, (f64, usize)>,
}

impl BruteState {
    pub fn decide(&mut self, space: &ConfigSpace) -> (ConfigId, ArmTag) {
        if self.next < space.len() {
            self.next += 1;
            return (space.configs()[self.next - 1].id(), ArmTag::Explore);
        }
        (self.incumbent().unwrap_or_else(|| default_config().id()), ArmTag::Exploit)
    }

    pub fn observe(&mut self, id: ConfigId, plt_ms: f64) {
        let e = self.stats.entry(id).or_insert((0.0, 0));
        e.0 += plt_ms;
        e.1 += 1;
    }

    pub fn incumbent(&self) -> Option<ConfigId> {
        let mut best: Option<(ConfigId, f64)> = None;
        for (&id, &(s, n)) in &self.stats {
            let m = s / n as f64;
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((id, m));
            }
        }
        best.map(|b| b.0)
    }

    pub fn exhausted(&self, space: &ConfigSpace) -> bool {
        self.next >= space.len()
    }
}

/// Bootstrap, GP-guided exploration, then the incumbent forever.
#[derive(Clone, Debug)]
pub struct BoState {
    search: GpSearch,
    bootstrap: Vec<ConfigId>,
    counter: usize,
    suggestion: Option<ConfigId>,
    settled: Option<ConfigId>,
}

impl BoState {
    pub fn new(params: GpSearchParams, space: &ConfigSpace, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = params.init_sample.min(space.len());
        let bootstrap = space.lhc_sample(k, &mut rng).expect("bounded by space size").iter().map(|c| c.id()).collect();
        BoState { search: GpSearch::new(params), bootstrap, counter: 0, suggestion: None, settled: None }
    }

    pub fn decide(&mut self, space: &ConfigSpace) -> (ConfigId, ArmTag) {
        if let Some(id) = self.settled {
            return (id, ArmTag::Exploit);
        }
        let pending: Vec<ConfigId> = self.bootstrap.iter().copied().filter(|id| !self.search.is_tested(*id)).collect();
        if !pending.is_empty() {
            let id = pending[self.counter % pending.len()];
            self.counter += 1;
            return (id, ArmTag::Lhc);
        }
        if let Some(id) = self.suggestion.filter(|id| !self.search.is_tested(*id)) {
            return (id, ArmTag::Gp);
        }
        let p = self.search.params;
        let next = self.search.suggest_next(space.configs());
        let stop = self.search.tested_count() >= p.min_sample_tested && next.as_ref().map_or(true, |(_, ei)| *ei < p.ei_rel_threshold);
        match next {
            Ok((c, _)) if !stop => {
                self.suggestion = Some(c.id());
                (c.id(), ArmTag::Gp)
            }
            _ => {
                let id = self.search.incumbent().map_or_else(|| default_config().id(), |(id, _)| id);
                self.settled = Some(id);
                (id, ArmTag::Exploit)
            }
        }
    }

    pub fn observe(&mut self, id: ConfigId, plt_ms: f64) {
        self.search.observe(&Configuration::from_id(id), plt_ms);
    }

    pub fn settled(&self) -> Option<ConfigId> {
        self.settled
    }
}

/// Per-class epsilon-greedy over every configuration, exploration weighted
/// down as pulls accumulate.
#[derive(Clone, Debug, Default)]
pub struct MabState {
    pulls: u64,
    /// Running mean and count per arm.
    arms: BTreeMap<ConfigId, (f64, u64)>,
}

impl MabState {
    pub fn epsilon(&self, epsilon0: f64, arm_count: usize) -> f64 {
        epsilon0 * (arm_count as f64 / (self.pulls as f64 + 1.0)).min(1.0)
    }

    pub fn decide<R: Rng + ?Sized>(&mut self, space: &ConfigSpace, epsilon0: f64, rng: &mut R) -> (ConfigId, ArmTag) {
        let eps = self.epsilon(epsilon0, space.len());
        self.pulls += 1;
        let u: f64 = rng.random();
        match self.greedy() {
            Some(id) if u >= eps => (id, ArmTag::Exploit),
            _ => (space.random(rng).id(), ArmTag::Explore),
        }
    }

    pub fn observe(&mut self, id: ConfigId, plt_ms: f64) {
        let e = self.arms.entry(id).or_insert((0.0, 0));
        e.1 += 1;
        e.0 += (plt_ms - e.0) / e.1 as f64;
    }

    pub fn mean(&self, id: ConfigId) -> Option<f64> {
        self.arms.get(&id).map(|a| a.0)
    }

    pub fn greedy(&self) -> Option<ConfigId> {
        let mut best: Option<(ConfigId, f64)> = None;
        for (&id, &(m, _)) in &self.arms {
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((id, m));
            }
        }
        best.map(|b| b.0)
    }
}

fn key_seed(seed: u64, key: usize) -> u64 {
    (seed ^ 0xB0B0_5EED).wrapping_add((key as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Whether a baseline keeps state per client or per network class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Keying {
    Client,
    Class,
}

impl Keying {
    fn key(self, req: &DecisionRequest) -> usize {
        match self {
            Keying::Client => req.client,
            Keying::Class => req.class_id,
        }
    }

    fn sample_key(self, s: &PerformanceSample) -> usize {
        match self {
            Keying::Client => s.client,
            Keying::Class => s.class_id,
        }
    }
}

pub struct BruteStrategy {
    kind: StrategyKind,
    keying: Keying,
    space: ConfigSpace,
    states: BTreeMap<usize, BruteState>,
}

impl BruteStrategy {
    pub fn new(kind: StrategyKind, keying: Keying, space: ConfigSpace) -> Self {
        BruteStrategy { kind, keying, space, states: BTreeMap::new() }
    }

    pub fn state(&self, key: usize) -> Option<&BruteState> {
        self.states.get(&key)
    }
}

impl Strategy for BruteStrategy {
    fn kind(&self) -> StrategyKind {
        self.kind
    }

    fn decide(&mut self, req: &DecisionRequest) -> Decision {
        let (id, arm) = self.states.entry(self.keying.key(req)).or_default().decide(&self.space);
        Decision::new(id, arm)
    }

    fn feedback(&mut self, s: PerformanceSample) {
        self.states.entry(self.keying.sample_key(&s)).or_default().observe(s.config, s.plt_ms);
    }
}

pub struct BoStrategy {
    kind: StrategyKind,
    keying: Keying,
    params: GpSearchParams,
    space: ConfigSpace,
    seed: u64,
    states: BTreeMap<usize, BoState>,
}

impl BoStrategy {
    pub fn new(kind: StrategyKind, keying: Keying, params: GpSearchParams, space: ConfigSpace, seed: u64) -> Self {
        BoStrategy { kind, keying, params, space, seed, states: BTreeMap::new() }
    }

    fn state(&mut self, key: usize) -> &mut BoState {
        let (params, seed) = (self.params, self.seed);
        let space = &self.space;
        self.states.entry(key).or_insert_with(|| BoState::new(params, space, key_seed(seed, key)))
    }
}

impl Strategy for BoStrategy {
    fn kind(&self) -> StrategyKind {
        self.kind
    }

    fn decide(&mut self, req: &DecisionRequest) -> Decision {
        let key = self.keying.key(req);
        let space = self.space.clone();
        let (id, arm) = self.state(key).decide(&space);
        Decision::new(id, arm)
    }

    fn feedback(&mut self, s: PerformanceSample) {
        let key = self.keying.sample_key(&s);
        self.state(key).observe(s.config, s.plt_ms);
    }
}

pub struct MabStrategy {
    space: ConfigSpace,
    epsilon0: f64,
    rng: ChaCha8Rng,
    states: BTreeMap<usize, MabState>,
}

impl MabStrategy {
    pub fn new(space: ConfigSpace, epsilon0: f64, seed: u64) -> Self {
        MabStrategy { space, epsilon0, rng: ChaCha8Rng::seed_from_u64(seed ^ 0x3AB), states: BTreeMap::new() }
    }

    pub fn state(&self, class_id: usize) -> Option<&MabState> {
        self.states.get(&class_id)
    }
}

impl Strategy for MabStrategy {
    fn kind(&self) -> StrategyKind {
        StrategyKind::MabNc
    }

    fn decide(&mut self, req: &DecisionRequest) -> Decision {
        let state = self.states.entry(req.class_id).or_default();
        let (id, arm) = state.decide(&self.space, self.epsilon0, &mut self.rng);
        Decision::new(id, arm)
    }

    fn feedback(&mut self, s: PerformanceSample) {
        self.states.entry(s.class_id).or_default().observe(s.config, s.plt_ms);
    }
}

/// The ensemble served through per-PoP agents, with the epsilon gate drawn
/// from each agent's own stream.
pub struct EnsembleStrategy {
    kind: StrategyKind,
    epsilon: f64,
    space: ConfigSpace,
    plane: ControlPlane,
    rngs: Vec<ChaCha8Rng>,
}

impl EnsembleStrategy {
    pub fn new(kind: StrategyKind, params: EnsembleParams, space: ConfigSpace, model: NcModel, topology: Topology, seed: u64) -> Self {
        let variant = kind.variant().expect("ensemble kinds only");
        let ensemble = Ensemble::new(params, variant, space.clone(), seed);
        let rngs = (0..topology.pop_count).map(|p| ChaCha8Rng::seed_from_u64(key_seed(seed ^ 0xE95, p))).collect();
        EnsembleStrategy { kind, epsilon: params.epsilon, space, plane: ControlPlane::new(topology, ensemble, model), rngs }
    }
}

impl Strategy for EnsembleStrategy {
    fn kind(&self) -> StrategyKind {
        self.kind
    }

    fn decide(&mut self, req: &DecisionRequest) -> Decision {
        let rng = &mut self.rngs[req.pop];
        let u: f64 = rng.random();
        if u < self.epsilon {
            let config = self.space.random(rng).id();
            let version = self.plane.agents[req.pop].version();
            let lookup = Lookup { config, arm: ArmTag::Epsilon, source: Source::Epsilon, version };
            return Decision { config, arm: ArmTag::Epsilon, lookup: Some(lookup) };
        }
        let l = self.plane.lookup(req.pop, req.features, req.t_ms);
        Decision { config: l.config, arm: l.arm, lookup: Some(l) }
    }

    fn reconfigure(&mut self, req: &DecisionRequest, _phase: usize, current: &Decision) -> Option<Decision> {
        let prior = current.lookup?;
        let l = self.plane.reconfigure(req.pop, req.features, req.t_ms, &prior)?;
        Some(Decision { config: l.config, arm: current.arm, lookup: Some(l) })
    }

    fn feedback(&mut self, sample: PerformanceSample) {
        self.plane.report_telemetry(sample);
    }

    fn tick(&mut self, t_ms: u64) -> Result<()> {
        self.plane.tick(t_ms)
    }

    fn drain_events(&mut self) -> Vec<CpEvent> {
        self.plane.drain_events()
    }

    fn control_plane(&self) -> Option<&ControlPlane> {
        Some(&self.plane)
    }
}

/// Everything a strategy may need at construction.
pub struct StrategyContext {
    pub params: StrategyParams,
    pub space: ConfigSpace,
    pub model: NcModel,
    pub topology: Topology,
    pub seed: u64,
    pub optimal: Arc<Vec<Vec<ConfigId>>>,
}

pub fn make_strategy(kind: StrategyKind, ctx: &StrategyContext) -> Box<dyn Strategy> {
    let search = ctx.params.ensemble.search;
    let space = ctx.space.clone();
    match kind {
        StrategyKind::Default => Box::new(DefaultStrategy),
        StrategyKind::Optimal => Box::new(OptimalStrategy::new(Arc::clone(&ctx.optimal))),
        StrategyKind::Brute => Box::new(BruteStrategy::new(kind, Keying::Client, space)),
        StrategyKind::BruteNc => Box::new(BruteStrategy::new(kind, Keying::Class, space)),
        StrategyKind::Bo => Box::new(BoStrategy::new(kind, Keying::Client, search, space, ctx.seed)),
        StrategyKind::BoNc => Box::new(BoStrategy::new(kind, Keying::Class, search, space, ctx.seed)),
        StrategyKind::CherryPickNc => {
            let cp = GpSearchParams {
                init_sample: ctx.params.cherrypick_init_sample,
                ei_rel_threshold: ctx.params.cherrypick_ei_threshold,
                ..search
            };
            Box::new(BoStrategy::new(kind, Keying::Class, cp, space, ctx.seed))
        }
        StrategyKind::MabNc => Box::new(MabStrategy::new(space, ctx.params.mab_epsilon0, ctx.seed)),
        StrategyKind::ConfigTron | StrategyKind::ConfigTronNoGp | StrategyKind::ConfigTronNoDt => Box::new(
            EnsembleStrategy::new(kind, ctx.params.ensemble, space, ctx.model.clone(), ctx.topology, ctx.seed),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netclass::FeatureMask;
    use proptest::{prop_assert, proptest};

    fn fv() -> FeatureVector {
        FeatureVector { values: [8.0, 4.0, 0.01, 11.0], mask: FeatureMask::all() }
    }

    fn req(f: &FeatureVector, client: usize, class_id: usize) -> DecisionRequest<'_> {
        DecisionRequest { session: 0, client, class_id, pop: 0, features: f, t_ms: 0 }
    }

    fn sample(client: usize, class_id: usize, config: ConfigId, plt_ms: f64) -> PerformanceSample {
        PerformanceSample { ts_ms: 0, client, class_id, pop: 0, features: fv(), website: 0, config, plt_ms, arm: ArmTag::Explore }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert_eq!("ConfigTron_NoGP".parse::<StrategyKind>().unwrap(), StrategyKind::ConfigTronNoGp);
        assert!("nope".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn default_always_default() {
        let f = fv();
        let mut s = DefaultStrategy;
        for i in 0..100 {
            s.feedback(sample(i, 0, ConfigId(1), 1.0));
            assert_eq!(s.decide(&req(&f, i, 0)).config, default_config().id());
        }
    }

    #[test]
    fn brute_visits_every_config_once_then_exploits_argmin() {
        let f = fv();
        let mut s = BruteStrategy::new(StrategyKind::Brute, Keying::Client, ConfigSpace::full());
        let mut seen = vec![0u32; 768];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut means = BTreeMap::new();
        for _ in 0..768 {
            let d = s.decide(&req(&f, 7, 0));
            seen[d.config.index()] += 1;
            let plt: f64 = rng.random_range(100.0..1000.0);
            means.insert(d.config, plt);
            s.feedback(sample(7, 0, d.config, plt));
        }
        assert!(seen.iter().all(|&c| c == 1));
        let argmin = means.iter().min_by(|a, b| a.1.total_cmp(b.1)).map(|(k, _)| *k).unwrap();
        let d = s.decide(&req(&f, 7, 0));
        assert_eq!((d.config, d.arm), (argmin, ArmTag::Exploit));
    }

    #[test]
    fn brute_nc_explores_less_than_brute_with_shared_classes() {
        let f = fv();
        let space = ConfigSpace::full();
        let mut per_client = BruteStrategy::new(StrategyKind::Brute, Keying::Client, space.clone());
        let mut per_class = BruteStrategy::new(StrategyKind::BruteNc, Keying::Class, space.clone());
        let (mut cost_client, mut cost_class) = (0, 0);
        // Four clients, two per class.
        for i in 0..4 * 800 {
            let client = i % 4;
            let class = client / 2;
            if per_client.decide(&req(&f, client, class)).arm == ArmTag::Explore {
                cost_client += 1;
            }
            if per_class.decide(&req(&f, client, class)).arm == ArmTag::Explore {
                cost_class += 1;
            }
        }
        assert!(cost_class <= cost_client);
        assert!(per_class.state(0).unwrap().exhausted(&space));
    }

    #[test]
    fn bo_bootstraps_then_settles() {
        let f = fv();
        let space = ConfigSpace::full();
        let mut s = BoStrategy::new(StrategyKind::Bo, Keying::Client, GpSearchParams::default(), space.clone(), 9);
        let target = Configuration::from_id(ConfigId(300)).encode();
        let mut arms = Vec::new();
        for _ in 0..200 {
            let d = s.decide(&req(&f, 1, 0));
            arms.push(d.arm);
            let x = Configuration::from_id(d.config).encode();
            let dist: f64 = x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
            s.feedback(sample(1, 0, d.config, 200.0 + 100.0 * dist));
        }
        assert!(arms[..4].iter().all(|a| *a == ArmTag::Lhc));
        assert_eq!(*arms.last().unwrap(), ArmTag::Exploit);
        let settled = s.states[&1].settled().unwrap();
        assert!(arms.iter().skip_while(|a| **a != ArmTag::Exploit).all(|a| *a == ArmTag::Exploit));
        assert!(s.states[&1].search.is_tested(settled));
    }

    #[test]
    fn mab_epsilon_decays_with_pulls() {
        let st = MabState { pulls: 0, arms: BTreeMap::new() };
        assert_eq!(st.epsilon(1.0, 768), 1.0);
        let st = MabState { pulls: 1535, arms: BTreeMap::new() };
        assert!((st.epsilon(1.0, 768) - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mab_running_mean_matches_batch(xs in proptest::collection::vec(1.0f64..10_000.0, 1..200)) {
            let mut st = MabState::default();
            for x in &xs {
                st.observe(ConfigId(5), *x);
            }
            let batch = xs.iter().sum::<f64>() / xs.len() as f64;
            prop_assert!((st.mean(ConfigId(5)).unwrap() - batch).abs() <= 1e-9 * batch.max(1.0));
        }
    }

    #[test]
    fn optimal_recomputes_each_phase() {
        let f = fv();
        let table = Arc::new(vec![vec![ConfigId(3), ConfigId(3), ConfigId(9)]]);
        let mut s = OptimalStrategy::new(table);
        let d = s.decide(&req(&f, 0, 0));
        assert_eq!(d.config, ConfigId(3));
        assert!(s.reconfigure(&req(&f, 0, 0), 1, &d).is_none());
        assert_eq!(s.reconfigure(&req(&f, 0, 0), 2, &d).unwrap().config, ConfigId(9));
    }
}
