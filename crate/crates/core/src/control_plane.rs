//! Simulated manager/agent pair. Managers learn at each update tick and push
//! immutable, versioned rule maps; agents answer per-session lookups from
//! whichever snapshot they currently hold.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bandit::{ArmTag, ClassRule, Ensemble, PerformanceSample};
use crate::config_space::{default_config, ConfigId};
use crate::dtree::DTree;
use crate::error::{Error, Result};
use crate::netclass::{classify, export_rules, import_rules, FeatureVector, NcModel, NcRuleMap, VersionClock};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyMode {
    /// One manager learns from every PoP and pushes to all agents.
    Global,
    /// One manager per PoP, trained on that PoP's telemetry only.
    LocalPerPop,
}

impl FromStr for TopologyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(TopologyMode::Global),
            "local" | "local-per-pop" => Ok(TopologyMode::LocalPerPop),
            _ => Err(Error::Config(format!("unknown topology {s:?}"))),
        }
    }
}

impl fmt::Display for TopologyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyMode::Global => "global",
            TopologyMode::LocalPerPop => "local",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub mode: TopologyMode,
    pub pop_count: usize,
    /// Manager-to-agent propagation delay, also applied to telemetry.
    pub delay_ms: u64,
    pub update_interval_ms: u64,
}

impl Default for Topology {
    fn default() -> Self {
        Topology { mode: TopologyMode::Global, pop_count: 4, delay_ms: 1_000, update_interval_ms: 120_000 }
    }
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        if self.update_interval_ms == 0 {
            return Err(Error::Config("update interval must be positive".into()));
        }
        if self.pop_count == 0 {
            return Err(Error::Config("pop count must be positive".into()));
        }
        Ok(())
    }

    pub fn manager_count(&self) -> usize {
        match self.mode {
            TopologyMode::Global => 1,
            TopologyMode::LocalPerPop => self.pop_count,
        }
    }

    pub fn manager_of(&self, pop: usize) -> usize {
        match self.mode {
            TopologyMode::Global => 0,
            TopologyMode::LocalPerPop => pop,
        }
    }
}

/// A class decision stamped with the version of the map that carries it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDecision {
    pub version: u64,
    pub rule: ClassRule,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RuleMap {
    pub version: u64,
    pub published_ms: u64,
    pub rules: Option<NcRuleMap>,
    pub decisions: BTreeMap<usize, ClassDecision>,
    pub tree: Option<DTree>,
    #[serde(skip)]
    model: Option<NcModel>,
}

impl RuleMap {
    /// The version-0 snapshot every agent starts with.
    pub fn empty() -> Self {
        RuleMap { version: 0, published_ms: 0, rules: None, decisions: BTreeMap::new(), tree: None, model: None }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut map: RuleMap = serde_json::from_str(s)?;
        map.model = map.rules.as_ref().map(import_rules).transpose()?;
        Ok(map)
    }

    pub fn classify(&self, features: &FeatureVector) -> Option<usize> {
        self.model.as_ref().map(|m| classify(m, features))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Rule,
    Default,
    Epsilon,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lookup {
    pub config: ConfigId,
    pub arm: ArmTag,
    pub source: Source,
    /// Version of the snapshot that answered.
    pub version: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpEvent {
    pub ts_ms: u64,
    pub event: String,
    pub detail: String,
}

impl CpEvent {
    fn new(ts_ms: u64, event: &str, detail: String) -> Self {
        CpEvent { ts_ms, event: event.to_string(), detail }
    }
}

#[derive(Debug)]
pub struct Agent {
    pub pop: usize,
    current: Arc<RuleMap>,
    inflight: VecDeque<(u64, Arc<RuleMap>)>,
    pending: Vec<FeatureVector>,
    counters: BTreeMap<usize, usize>,
    lookups: u64,
    misses: u64,
    events: Vec<CpEvent>,
}

impl Agent {
    pub fn new(pop: usize) -> Self {
        Agent {
            pop,
            current: Arc::new(RuleMap::empty()),
            inflight: VecDeque::new(),
            pending: Vec::new(),
            counters: BTreeMap::new(),
            lookups: 0,
            misses: 0,
            events: Vec::new(),
        }
    }

    pub fn version(&self) -> u64 {
        self.current.version
    }

    pub fn snapshot(&self) -> &Arc<RuleMap> {
        &self.current
    }

    /// Fraction of lookups answered with the default configuration.
    pub fn miss_rate(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.misses as f64 / self.lookups as f64
        }
    }

    /// Queues a snapshot for delivery. Links are FIFO, so a version must
    /// exceed everything already held or in flight.
    pub fn push_rules(&mut self, map: Arc<RuleMap>, deliver_at_ms: u64) -> Result<()> {
        let newest = self.inflight.back().map_or(self.current.version, |(_, m)| m.version);
        if map.version <= newest {
            return Err(Error::VersionRegression { published: map.version, current: newest });
        }
        self.inflight.push_back((deliver_at_ms, map));
        Ok(())
    }

    /// Swaps in every snapshot delivered by `t_ms`.
    pub fn advance_to(&mut self, t_ms: u64) {
        while self.inflight.front().is_some_and(|(at, _)| *at <= t_ms) {
            let (at, map) = self.inflight.pop_front().expect("checked non-empty");
            self.events.push(CpEvent::new(at, "deliver", format!("pop={} version={}", self.pop, map.version)));
            self.current = map;
        }
    }

    pub fn lookup(&mut self, features: &FeatureVector, t_ms: u64) -> Lookup {
        self.advance_to(t_ms);
        self.lookups += 1;
        let snap = Arc::clone(&self.current);
        if let Some(class) = snap.classify(features) {
            if let Some(d) = snap.decisions.get(&class) {
                debug_assert_eq!(d.version, snap.version);
                let counter = self.counters.entry(class).or_insert(0);
                let (config, arm) = d.rule.serve(counter, snap.tree.as_ref(), features);
                return Lookup { config, arm, source: Source::Rule, version: d.version };
            }
        }
        self.misses += 1;
        self.pending.push(*features);
        self.events.push(CpEvent::new(t_ms, "pending_query", format!("pop={} version={}", self.pop, snap.version)));
        Lookup { config: default_config().id(), arm: ArmTag::Default, source: Source::Default, version: snap.version }
    }

    /// Re-evaluates an in-flight session after a newer snapshot arrived.
    /// Returns the new answer only when the configuration changes.
    pub fn reconfigure(&mut self, features: &FeatureVector, t_ms: u64, prior: &Lookup) -> Option<Lookup> {
        self.advance_to(t_ms);
        let snap = Arc::clone(&self.current);
        if prior.source == Source::Epsilon || snap.version <= prior.version {
            return None;
        }
        let d = snap.decisions.get(&snap.classify(features)?)?;
        let (config, arm) = match &d.rule {
            ClassRule::Bootstrap { slots } => {
                slots.iter().copied().find(|s| s.0 == prior.config).unwrap_or(slots[0])
            }
            rule => rule.serve(&mut 0, snap.tree.as_ref(), features),
        };
        if config == prior.config {
            return None;
        }
        self.events.push(CpEvent::new(
            t_ms,
            "reconfigure",
            format!("pop={} version={} from={} to={}", self.pop, d.version, prior.config, config),
        ));
        Some(Lookup { config, arm, source: Source::Rule, version: d.version })
    }

    pub fn take_pending(&mut self) -> Vec<FeatureVector> {
        std::mem::take(&mut self.pending)
    }

    pub fn drain_events(&mut self) -> Vec<CpEvent> {
        std::mem::take(&mut self.events)
    }
}

#[derive(Debug)]
pub struct Manager {
    pub ensemble: Ensemble,
    model: NcModel,
    clock: VersionClock,
    pending: Vec<FeatureVector>,
    inbox: Vec<PerformanceSample>,
    /// `(tick time, samples processed)` for every tick.
    pub processed: Vec<(u64, usize)>,
}

impl Manager {
    pub fn new(ensemble: Ensemble, model: NcModel) -> Self {
        Manager { ensemble, model, clock: VersionClock::default(), pending: Vec::new(), inbox: Vec::new(), processed: Vec::new() }
    }

    pub fn enqueue_query(&mut self, features: FeatureVector) {
        self.pending.push(features);
    }

    pub fn report_telemetry(&mut self, sample: PerformanceSample) {
        self.inbox.push(sample);
    }

    /// Runs one update. Returns the new snapshot, or `None` when nothing
    /// arrived since the previous tick.
    pub fn tick(&mut self, t_ms: u64) -> Option<Arc<RuleMap>> {
        let processed = self.inbox.len();
        for s in std::mem::take(&mut self.inbox) {
            self.ensemble.on_feedback(s);
        }
        let pending = std::mem::take(&mut self.pending);
        for f in &pending {
            self.ensemble.ensure_class(classify(&self.model, f), f);
        }
        self.processed.push((t_ms, processed));
        if processed == 0 && pending.is_empty() {
            return None;
        }
        self.ensemble.refresh_all();
        if !self.ensemble.variant.no_dt && self.ensemble.sample_count() > 0 {
            self.ensemble.update_models().expect("samples present");
        }
        let rules = export_rules(&self.model, &mut self.clock);
        let version = rules.version;
        let decisions = self
            .ensemble
            .decisions()
            .into_iter()
            .map(|(c, rule)| (c, ClassDecision { version, rule }))
            .collect();
        let tree = if self.ensemble.variant.no_dt { None } else { self.ensemble.tree().cloned() };
        Some(Arc::new(RuleMap {
            version,
            published_ms: t_ms,
            rules: Some(rules),
            decisions,
            tree,
            model: Some(self.model.clone()),
        }))
    }
}

/// Managers and agents wired according to a [`Topology`].
#[derive(Debug)]
pub struct ControlPlane {
    pub topology: Topology,
    pub managers: Vec<Manager>,
    pub agents: Vec<Agent>,
    events: Vec<CpEvent>,
}

impl ControlPlane {
    pub fn new(topology: Topology, ensemble: Ensemble, model: NcModel) -> Self {
        let managers = (0..topology.manager_count()).map(|_| Manager::new(ensemble.clone(), model.clone())).collect();
        let agents = (0..topology.pop_count).map(Agent::new).collect();
        ControlPlane { topology, managers, agents, events: Vec::new() }
    }

    pub fn lookup(&mut self, pop: usize, features: &FeatureVector, t_ms: u64) -> Lookup {
        let agent = &mut self.agents[pop];
        let out = agent.lookup(features, t_ms);
        let m = self.topology.manager_of(pop);
        for f in agent.take_pending() {
            self.managers[m].enqueue_query(f);
        }
        out
    }

    pub fn reconfigure(&mut self, pop: usize, features: &FeatureVector, t_ms: u64, prior: &Lookup) -> Option<Lookup> {
        self.agents[pop].reconfigure(features, t_ms, prior)
    }

    /// Hands a sample to its PoP's manager; the caller applies the delay.
    pub fn report_telemetry(&mut self, sample: PerformanceSample) {
        let m = self.topology.manager_of(sample.pop);
        self.managers[m].report_telemetry(sample);
    }

    /// Runs every manager's update and schedules deliveries.
    pub fn tick(&mut self, t_ms: u64) -> Result<()> {
        for m in 0..self.managers.len() {
            let processed_before = self.managers[m].processed.len();
            let published = self.managers[m].tick(t_ms);
            let processed = self.managers[m].processed[processed_before].1;
            let Some(map) = published else { continue };
            self.events.push(CpEvent::new(
                t_ms,
                "publish",
                format!("manager={m} version={} classes={} processed={processed}", map.version, map.decisions.len()),
            ));
            let deliver_at = t_ms + self.topology.delay_ms;
            for agent in self.agents.iter_mut().filter(|a| self.topology.manager_of(a.pop) == m) {
                agent.push_rules(Arc::clone(&map), deliver_at)?;
            }
        }
        Ok(())
    }

    /// Control-plane events so far, in time order, agents after managers on ties.
    pub fn drain_events(&mut self) -> Vec<CpEvent> {
        let mut out = std::mem::take(&mut self.events);
        for a in &mut self.agents {
            out.extend(a.drain_events());
        }
        out.sort_by_key(|e| e.ts_ms);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::{EnsembleParams, Variant};
    use crate::config_space::ConfigSpace;
    use crate::netclass::{fit, FeatureMask};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fv(x: f64) -> FeatureVector {
        FeatureVector { values: [x, 4.0, 0.01, 10.0], mask: FeatureMask::all() }
    }

    fn model() -> NcModel {
        let samples: Vec<FeatureVector> = (0..40).map(|i| fv(if i % 2 == 0 { 1.0 } else { 9.0 } + (i as f64) * 1e-3)).collect();
        fit(&samples, 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn plane(delay_ms: u64) -> ControlPlane {
        let ens = Ensemble::new(EnsembleParams { epsilon: 0.0, ..Default::default() }, Variant::default(), ConfigSpace::full(), 5);
        let topo = Topology { mode: TopologyMode::Global, pop_count: 2, delay_ms, update_interval_ms: 1_000 };
        ControlPlane::new(topo, ens, model())
    }

    fn sample(config: ConfigId, class_id: usize, x: f64) -> PerformanceSample {
        PerformanceSample { ts_ms: 0, client: 0, class_id, pop: 0, features: fv(x), website: 0, config, plt_ms: 500.0, arm: ArmTag::Lhc }
    }

    #[test]
    fn empty_snapshot_answers_default_and_queues_query() {
        let mut cp = plane(0);
        let l = cp.lookup(0, &fv(1.0), 10);
        assert_eq!((l.config, l.source, l.version), (default_config().id(), Source::Default, 0));
        assert_eq!(cp.managers[0].pending.len(), 1);
        assert_eq!(cp.agents[0].miss_rate(), 1.0);
    }

    #[test]
    fn pending_query_answered_at_next_tick() {
        let mut cp = plane(0);
        cp.lookup(0, &fv(1.0), 10);
        cp.tick(1_000).unwrap();
        let l = cp.lookup(0, &fv(1.0), 1_000);
        assert_eq!((l.source, l.version, l.arm), (Source::Rule, 1, ArmTag::Lhc));
        // The other PoP receives the same global snapshot.
        assert_eq!(cp.lookup(1, &fv(1.0), 1_000).version, 1);
    }

    #[test]
    fn no_data_no_publish() {
        let mut cp = plane(0);
        cp.tick(1_000).unwrap();
        assert_eq!(cp.agents[0].version(), 0);
        assert!(cp.agents[0].inflight.is_empty());
        assert_eq!(cp.managers[0].processed, vec![(1_000, 0)]);
    }

    #[test]
    fn delay_keeps_old_snapshot_inside_window() {
        let mut cp = plane(5_000);
        cp.lookup(0, &fv(1.0), 0);
        cp.tick(1_000).unwrap();
        assert_eq!(cp.lookup(0, &fv(1.0), 5_999).version, 0);
        assert_eq!(cp.lookup(0, &fv(1.0), 6_000).version, 1);
    }

    #[test]
    fn versions_arrive_in_order_and_regressions_fail() {
        let mut cp = plane(5_000);
        cp.lookup(0, &fv(1.0), 0);
        cp.tick(1_000).unwrap();
        cp.report_telemetry(sample(ConfigId(3), classify(&model(), &fv(1.0)), 1.0));
        cp.tick(2_000).unwrap();
        let mut seen = Vec::new();
        for t in (0..8_000).step_by(500) {
            seen.push(cp.lookup(0, &fv(1.0), t).version);
        }
        assert!(seen.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*seen.last().unwrap(), 2);

        let stale = Arc::new(RuleMap::empty());
        assert!(matches!(cp.agents[0].push_rules(stale, 9_000), Err(Error::VersionRegression { .. })));
    }

    #[test]
    fn repeated_lookups_are_stable_within_a_snapshot() {
        let mut cp = plane(0);
        let class = classify(&model(), &fv(1.0));
        for c in [1u16, 2, 3, 4] {
            for _ in 0..3 {
                cp.report_telemetry(sample(ConfigId(c), class, 1.0));
            }
        }
        cp.lookup(0, &fv(1.0), 0);
        cp.tick(1_000).unwrap();
        cp.advance_all(1_000);
        let snap = Arc::clone(cp.agents[0].snapshot());
        let rule = &snap.decisions[&class];
        assert_eq!(rule.version, snap.version);
        if matches!(rule.rule, ClassRule::Steady { .. } | ClassRule::Explore { .. }) {
            let a = cp.lookup(0, &fv(1.0), 1_500);
            let b = cp.lookup(0, &fv(1.0), 1_600);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn reconfigure_only_on_changed_decision() {
        let mut cp = plane(0);
        let prior = cp.lookup(0, &fv(1.0), 0);
        // Same version: nothing to do.
        assert!(cp.reconfigure(0, &fv(1.0), 10, &prior).is_none());
        cp.tick(1_000).unwrap();
        let changed = cp.reconfigure(0, &fv(1.0), 1_000, &prior);
        let slots = match &cp.agents[0].snapshot().decisions[&classify(&model(), &fv(1.0))].rule {
            ClassRule::Bootstrap { slots } => slots.clone(),
            r => panic!("{r:?}"),
        };
        if slots[0].0 == prior.config {
            assert!(changed.is_none());
        } else {
            assert_eq!(changed.unwrap().config, slots[0].0);
            assert!(cp.drain_events().iter().any(|e| e.event == "reconfigure"));
        }
        let epsilon = Lookup { source: Source::Epsilon, ..prior };
        assert!(cp.reconfigure(0, &fv(1.0), 2_000, &epsilon).is_none());
    }

    #[test]
    fn rule_map_json_round_trip_keeps_classification() {
        let mut cp = plane(0);
        cp.lookup(0, &fv(9.0), 0);
        cp.tick(1_000).unwrap();
        let snap = cp.managers[0].tick(2_000);
        assert!(snap.is_none());
        cp.advance_all(1_000);
        let map = cp.agents[0].snapshot();
        let back = RuleMap::from_json(&map.to_json().unwrap()).unwrap();
        assert_eq!(back.decisions, map.decisions);
        assert_eq!(back.classify(&fv(9.0)), map.classify(&fv(9.0)));
    }

    impl ControlPlane {
        fn advance_all(&mut self, t: u64) {
            for a in &mut self.agents {
                a.advance_to(t);
            }
        }
    }
}
