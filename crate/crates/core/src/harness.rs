//! Discrete-event experiment runner: sessions arrive in order, a strategy
//! picks configurations, the PLT oracle scores them under the true network
//! condition, and delayed telemetry feeds back at each model-update tick.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandit::{ArmTag, PerformanceSample};
use crate::baselines::{make_strategy, Decision, DecisionRequest, StrategyContext, StrategyKind, StrategyParams};
use crate::config_space::{default_config, ConfigId, ConfigSpace, Configuration, KnobMask};
use crate::control_plane::{CpEvent, Topology};
use crate::error::{Error, Result};
use crate::netclass::{self, classify, FeatureMask, FeatureVector, NcModel};
use crate::plt_oracle::{noise_factor, noiseless_plt, optimal_in, OracleParams};
use crate::workload::{generate_sessions, ingest_trace, standard_catalog, ClientSession, NetworkCondition, Website, WorkloadSpec};

pub const RESULTS_HEADER: [&str; 10] = [
    "ts_ms",
    "client_id",
    "class_id",
    "website_id",
    "algo",
    "arm",
    "config_ids",
    "plt_ms",
    "default_plt_ms",
    "optimal_plt_ms",
];

const NOISE_SALT: u64 = 0x6E6F_6973_65;
const ESTIMATE_SALT: u64 = 0x6573_7469_6D;
const WARMUP_SALT: u64 = 0x7761_726D;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSource {
    Synthetic { spec: WorkloadSpec },
    Trace { path: PathBuf, websites: Vec<Website> },
}

/// Client-side network estimate used for classification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorParams {
    /// Lognormal sigma applied to each dimension on a client's first session.
    pub first_sight_fuzz: f64,
    /// Weight of the newest observed condition in the running estimate.
    pub alpha: f64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        EstimatorParams { first_sight_fuzz: 0.1, alpha: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetclassParams {
    pub k: usize,
    /// Pick k by PLT dispersion instead of using `k` directly.
    pub choose_k: bool,
    pub k_max: usize,
    pub cv_threshold: f64,
    /// Sessions drawn for the offline clustering fit.
    pub warmup_sessions: usize,
}

impl Default for NetclassParams {
    fn default() -> Self {
        NetclassParams { k: 20, choose_k: false, k_max: 40, cv_threshold: 0.3, warmup_sessions: 5_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopAssignment {
    /// PoP = client index modulo PoP count.
    Client,
    /// PoP = network class modulo PoP count, so no class spans two PoPs.
    Class,
}

/// Oracle parameters switch to `params` for phases starting at or after `at_ms`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleDrift {
    pub at_ms: u64,
    pub params: OracleParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub workload: WorkloadSource,
    pub oracle: OracleParams,
    #[serde(default)]
    pub drift: Option<OracleDrift>,
    pub algo: StrategyKind,
    #[serde(default)]
    pub strategy: StrategyParams,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default = "default_pop_assignment")]
    pub pop_assignment: PopAssignment,
    #[serde(default)]
    pub feature_mask: FeatureMask,
    #[serde(default)]
    pub knob_mask: KnobMask,
    #[serde(default)]
    pub estimator: EstimatorParams,
    #[serde(default)]
    pub netclass: NetclassParams,
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_pop_assignment() -> PopAssignment {
    PopAssignment::Client
}

impl ExperimentConfig {
    /// The standard synthetic workload with default parameters everywhere.
    pub fn standard(algo: StrategyKind, seed: u64) -> Self {
        ExperimentConfig {
            workload: WorkloadSource::Synthetic { spec: WorkloadSpec::standard(seed) },
            oracle: OracleParams::default(),
            drift: None,
            algo,
            strategy: StrategyParams::default(),
            topology: Topology::default(),
            pop_assignment: PopAssignment::Client,
            feature_mask: FeatureMask::all(),
            knob_mask: KnobMask::all(),
            estimator: EstimatorParams::default(),
            netclass: NetclassParams::default(),
            seed,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.workload {
            WorkloadSource::Synthetic { spec } => spec.validate().map_err(|e| Error::Config(e.to_string()))?,
            WorkloadSource::Trace { path, websites } => {
                if !path.exists() {
                    return Err(Error::Config(format!("trace {} does not exist", path.display())));
                }
                if websites.is_empty() {
                    return Err(Error::Config("trace workload needs a website catalog".into()));
                }
            }
        }
        self.oracle.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(d) = &self.drift {
            d.params.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.topology.validate()?;
        self.strategy.ensemble.validate()?;
        if self.netclass.k == 0 || self.netclass.warmup_sessions == 0 {
            return Err(Error::Config("netclass k and warm-up size must be positive".into()));
        }
        if !(self.estimator.first_sight_fuzz >= 0.0 && (0.0..=1.0).contains(&self.estimator.alpha)) {
            return Err(Error::Config("estimator fuzz must be >= 0 and alpha in [0, 1]".into()));
        }
        if let Some(out) = &self.output {
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                if !dir.is_dir() {
                    return Err(Error::Config(format!("output directory {} does not exist", dir.display())));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding the output path.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    fn websites(&self) -> &[Website] {
        match &self.workload {
            WorkloadSource::Synthetic { spec } => &spec.websites,
            WorkloadSource::Trace { websites, .. } => websites,
        }
    }
}

/// Ground truth shared by every strategy run on the same workload, seed and
/// masks: estimates, classes, noise draws, and per-phase default/optimal
/// PLTs.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub sessions: Vec<ClientSession>,
    pub websites: Vec<Website>,
    pub website_of: Vec<usize>,
    pub client_of: Vec<usize>,
    pub client_ids: Vec<String>,
    pub features: Vec<FeatureVector>,
    pub class_of: Vec<usize>,
    pub pop_of: Vec<usize>,
    /// One multiplicative noise draw per session, shared by every column.
    pub noise: Vec<f64>,
    /// Per session and phase: oracle params in force (0 base, 1 drifted).
    pub phase_params: Vec<Vec<u8>>,
    pub default_plt: Vec<Vec<f64>>,
    pub optimal: Arc<Vec<Vec<ConfigId>>>,
    pub optimal_plt: Vec<Vec<f64>>,
    pub model: NcModel,
    pub space: ConfigSpace,
}

impl Prepared {
    fn params<'a>(&self, cfg: &'a ExperimentConfig, session: usize, phase: usize) -> &'a OracleParams {
        match (self.phase_params[session][phase], &cfg.drift) {
            (1, Some(d)) => &d.params,
            _ => &cfg.oracle,
        }
    }

    /// Phase-weighted noiseless PLT of a per-phase configuration list.
    pub fn blended(&self, cfg: &ExperimentConfig, session: usize, configs: &[ConfigId]) -> f64 {
        let s = &self.sessions[session];
        let w = &self.websites[self.website_of[session]];
        let values: Vec<f64> = s
            .phases
            .iter()
            .enumerate()
            .map(|(k, p)| noiseless_plt(&Configuration::from_id(configs[k]), &p.condition, w, self.params(cfg, session, k)))
            .collect();
        weighted(s, &values)
    }
}

fn weighted(s: &ClientSession, values: &[f64]) -> f64 {
    let total = s.duration_ms() as f64;
    if total == 0.0 {
        return values[0];
    }
    s.phases.iter().zip(values).map(|(p, v)| v * p.duration_ms as f64 / total).sum()
}

fn fuzz<R: Rng + ?Sized>(c: &NetworkCondition, sigma: f64, rng: &mut R) -> NetworkCondition {
    if sigma == 0.0 {
        return *c;
    }
    let n = Normal::new(0.0, sigma).expect("validated sigma");
    NetworkCondition::clamped(
        c.bandwidth_kbps * n.sample(rng).exp(),
        c.rtt_ms * n.sample(rng).exp(),
        c.loss_rate * n.sample(rng).exp(),
    )
}

fn ewma(est: &NetworkCondition, obs: &NetworkCondition, alpha: f64) -> NetworkCondition {
    NetworkCondition::clamped(
        alpha * obs.bandwidth_kbps + (1.0 - alpha) * est.bandwidth_kbps,
        alpha * obs.rtt_ms + (1.0 - alpha) * est.rtt_ms,
        alpha * obs.loss_rate + (1.0 - alpha) * est.loss_rate,
    )
}

fn load_sessions(cfg: &ExperimentConfig) -> Result<Vec<ClientSession>> {
    let mut sessions = match &cfg.workload {
        WorkloadSource::Synthetic { spec } => generate_sessions(spec)?,
        WorkloadSource::Trace { path, .. } => ingest_trace(path)?,
    };
    sessions.sort_by_key(|s| s.arrival_ms);
    Ok(sessions)
}

fn website_index(websites: &[Website], sessions: &[ClientSession]) -> Result<Vec<usize>> {
    let by_id: BTreeMap<&str, usize> = websites.iter().enumerate().map(|(i, w)| (w.website_id.as_str(), i)).collect();
    sessions
        .iter()
        .map(|s| {
            by_id
                .get(s.website_id.as_str())
                .copied()
                .ok_or_else(|| Error::Config(format!("website {:?} not in catalog", s.website_id)))
        })
        .collect()
}

/// Fits the class model offline on a separately drawn warm-up population.
fn fit_classes(cfg: &ExperimentConfig, sessions: &[ClientSession], features: &[FeatureVector]) -> Result<NcModel> {
    let p = &cfg.netclass;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ WARMUP_SALT);
    let (warm, plts): (Vec<FeatureVector>, Vec<f64>) = match &cfg.workload {
        WorkloadSource::Synthetic { spec } => {
            let mut ws = spec.clone();
            ws.seed ^= WARMUP_SALT;
            ws.session_count = p.warmup_sessions;
            let sessions = generate_sessions(&ws)?;
            let widx = website_index(&ws.websites, &sessions)?;
            sessions
                .iter()
                .zip(widx)
                .map(|(s, wi)| {
                    let n = fuzz(&s.phases[0].condition, cfg.estimator.first_sight_fuzz, &mut rng);
                    let w = &ws.websites[wi];
                    (FeatureVector::new(&n, w, cfg.feature_mask), noiseless_plt(&default_config(), &s.phases[0].condition, w, &cfg.oracle))
                })
                .unzip()
        }
        WorkloadSource::Trace { websites, .. } => {
            let m = p.warmup_sessions.min(sessions.len());
            let widx = website_index(websites, &sessions[..m])?;
            features[..m]
                .iter()
                .zip(&sessions[..m])
                .zip(widx)
                .map(|((f, s), wi)| (*f, noiseless_plt(&default_config(), &s.phases[0].condition, &websites[wi], &cfg.oracle)))
                .unzip()
        }
    };
    if p.choose_k {
        let k = netclass::choose_k(&warm, &plts, p.cv_threshold, p.k_max.min(warm.len()), &mut rng);
        netclass::fit(&warm, k, &mut rng)
    } else {
        netclass::fit(&warm, p.k.min(warm.len()), &mut rng)
    }
}

/// Computes everything about a run that does not depend on the strategy.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let sessions = load_sessions(cfg)?;
    if sessions.is_empty() {
        return Err(Error::Config("workload has no sessions".into()));
    }
    let websites = cfg.websites().to_vec();
    let website_of = website_index(&websites, &sessions)?;

    let mut client_idx: BTreeMap<String, usize> = BTreeMap::new();
    let mut client_ids = Vec::new();
    let client_of: Vec<usize> = sessions
        .iter()
        .map(|s| {
            *client_idx.entry(s.client_id.clone()).or_insert_with(|| {
                client_ids.push(s.client_id.clone());
                client_ids.len() - 1
            })
        })
        .collect();

    let mut est_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ESTIMATE_SALT);
    let mut estimates: Vec<Option<NetworkCondition>> = vec![None; client_ids.len()];
    let mut features = Vec::with_capacity(sessions.len());
    for (i, s) in sessions.iter().enumerate() {
        let c = client_of[i];
        let est = match estimates[c] {
            Some(e) => e,
            None => fuzz(&s.phases[0].condition, cfg.estimator.first_sight_fuzz, &mut est_rng),
        };
        features.push(FeatureVector::new(&est, &websites[website_of[i]], cfg.feature_mask));
        let mut next = est;
        for p in &s.phases {
            next = ewma(&next, &p.condition, cfg.estimator.alpha);
        }
        estimates[c] = Some(next);
    }

    let model = fit_classes(cfg, &sessions, &features)?;
    let class_of: Vec<usize> = features.iter().map(|f| classify(&model, f)).collect();
    let pop_of = (0..sessions.len())
        .map(|i| match cfg.pop_assignment {
            PopAssignment::Client => client_of[i] % cfg.topology.pop_count,
            PopAssignment::Class => class_of[i] % cfg.topology.pop_count,
        })
        .collect();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ NOISE_SALT);
    let noise = sessions.iter().map(|_| noise_factor(&cfg.oracle, &mut noise_rng)).collect();

    let space = ConfigSpace::restricted(cfg.knob_mask);
    let mut phase_params = Vec::with_capacity(sessions.len());
    let mut default_plt = Vec::with_capacity(sessions.len());
    let mut optimal = Vec::with_capacity(sessions.len());
    let mut optimal_plt = Vec::with_capacity(sessions.len());
    for (i, s) in sessions.iter().enumerate() {
        let w = &websites[website_of[i]];
        let tags: Vec<u8> = s
            .phase_starts()
            .iter()
            .map(|&t| u8::from(cfg.drift.as_ref().is_some_and(|d| t >= d.at_ms)))
            .collect();
        let (mut d, mut o, mut op) = (Vec::new(), Vec::new(), Vec::new());
        for (k, p) in s.phases.iter().enumerate() {
            let params = match (tags[k], &cfg.drift) {
                (1, Some(dr)) => &dr.params,
                _ => &cfg.oracle,
            };
            d.push(noiseless_plt(&default_config(), &p.condition, w, params));
            let (c, v) = optimal_in(&space, &p.condition, w, params);
            o.push(c.id());
            op.push(v);
        }
        phase_params.push(tags);
        default_plt.push(d);
        optimal.push(o);
        optimal_plt.push(op);
    }

    Ok(Prepared {
        sessions,
        websites,
        website_of,
        client_of,
        client_ids,
        features,
        class_of,
        pop_of,
        noise,
        phase_params,
        default_plt,
        optimal: Arc::new(optimal),
        optimal_plt,
        model,
        space,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub ts_ms: u64,
    pub client_id: String,
    pub class_id: usize,
    pub website_id: String,
    pub algo: String,
    pub arm: ArmTag,
    /// Active configuration per phase.
    pub config_ids: Vec<ConfigId>,
    pub plt_ms: f64,
    pub default_plt_ms: f64,
    pub optimal_plt_ms: f64,
}

impl SessionResult {
    /// Fractional PLT reduction relative to the default configuration.
    pub fn improvement(&self) -> f64 {
        (self.default_plt_ms - self.plt_ms) / self.default_plt_ms
    }

    pub fn distance_from_optimal(&self) -> f64 {
        (self.plt_ms - self.optimal_plt_ms) / self.optimal_plt_ms
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionLogRow {
    pub ts_ms: u64,
    pub session: usize,
    pub client_id: String,
    pub class_id: usize,
    pub phase: usize,
    pub config_id: ConfigId,
    pub arm: ArmTag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub algo: String,
    pub seed: u64,
    pub config_hash: String,
    pub update_interval_ms: u64,
    pub sessions: usize,
    pub updates: usize,
    pub publishes: usize,
    /// Samples handed to the strategy at each update tick.
    pub processed_per_update: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub rows: Vec<SessionResult>,
    pub decisions: Vec<DecisionLogRow>,
    pub events: Vec<CpEvent>,
    pub metadata: RunMetadata,
    /// GP steps taken before stopping, per class that stopped (ensemble
    /// strategies only, summed over managers).
    pub class_steps: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Tick,
    PhaseStart,
    Arrival,
}

/// Runs one strategy over prepared ground truth.
pub fn run_prepared(cfg: &ExperimentConfig, prep: &Prepared) -> Result<RunOutput> {
    cfg.validate()?;
    let ctx = StrategyContext {
        params: cfg.strategy,
        space: prep.space.clone(),
        model: prep.model.clone(),
        topology: cfg.topology,
        seed: cfg.seed,
        optimal: Arc::clone(&prep.optimal),
    };
    let mut strategy = make_strategy(cfg.algo, &ctx);
    let n = prep.sessions.len();
    let interval = cfg.topology.update_interval_ms;

    let mut queue: BinaryHeap<Reverse<(u64, EventKind, usize, usize)>> = BinaryHeap::new();
    let mut last_event = 0;
    for (i, s) in prep.sessions.iter().enumerate() {
        queue.push(Reverse((s.arrival_ms, EventKind::Arrival, i, 0)));
        last_event = last_event.max(*s.phase_starts().last().expect("sessions have phases"));
    }
    for k in 1..=last_event / interval {
        queue.push(Reverse((k * interval, EventKind::Tick, k as usize, 0)));
    }

    let mut decisions: Vec<Option<Decision>> = vec![None; n];
    let mut arrival_arm = vec![ArmTag::Default; n];
    let mut configs: Vec<Vec<ConfigId>> = vec![Vec::new(); n];
    let mut log = Vec::new();
    let mut telemetry: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let mut samples: Vec<Option<PerformanceSample>> = vec![None; n];
    let mut processed = Vec::new();

    while let Some(Reverse((t, kind, i, phase))) = queue.pop() {
        match kind {
            EventKind::Tick => {
                let mut count = 0;
                while telemetry.peek().is_some_and(|Reverse((at, _))| *at <= t) {
                    let Reverse((_, s)) = telemetry.pop().expect("peeked");
                    strategy.feedback(samples[s].take().expect("sample queued once"));
                    count += 1;
                }
                processed.push(count);
                strategy.tick(t)?;
            }
            EventKind::Arrival => {
                let s = &prep.sessions[i];
                let req = request(prep, i, t);
                let d = strategy.decide(&req);
                log.push(log_row(prep, i, 0, t, &d));
                let w = &prep.websites[prep.website_of[i]];
                let plt1 = prep.noise[i]
                    * noiseless_plt(&Configuration::from_id(d.config), &s.phases[0].condition, w, prep.params(cfg, i, 0));
                samples[i] = Some(PerformanceSample {
                    ts_ms: t,
                    client: prep.client_of[i],
                    class_id: prep.class_of[i],
                    pop: prep.pop_of[i],
                    features: prep.features[i],
                    website: prep.website_of[i],
                    config: d.config,
                    plt_ms: plt1,
                    arm: d.arm,
                });
                telemetry.push(Reverse((t + plt1.ceil() as u64 + cfg.topology.delay_ms, i)));
                configs[i].push(d.config);
                arrival_arm[i] = d.arm;
                decisions[i] = Some(d);
                for (k, start) in s.phase_starts().into_iter().enumerate().skip(1) {
                    queue.push(Reverse((start, EventKind::PhaseStart, i, k)));
                }
            }
            EventKind::PhaseStart => {
                let req = request(prep, i, t);
                let current = decisions[i].expect("arrival precedes phases");
                if let Some(d) = strategy.reconfigure(&req, phase, &current) {
                    log.push(log_row(prep, i, phase, t, &d));
                    decisions[i] = Some(d);
                }
                configs[i].push(decisions[i].expect("set above").config);
            }
        }
    }

    let rows = (0..n)
        .map(|i| {
            let s = &prep.sessions[i];
            SessionResult {
                ts_ms: s.arrival_ms,
                client_id: s.client_id.clone(),
                class_id: prep.class_of[i],
                website_id: s.website_id.clone(),
                algo: cfg.algo.name().to_string(),
                arm: arrival_arm[i],
                plt_ms: prep.noise[i] * prep.blended(cfg, i, &configs[i]),
                default_plt_ms: prep.noise[i] * weighted(s, &prep.default_plt[i]),
                optimal_plt_ms: prep.noise[i] * weighted(s, &prep.optimal_plt[i]),
                config_ids: std::mem::take(&mut configs[i]),
            }
        })
        .collect();

    let events = strategy.drain_events();
    let class_steps = strategy
        .control_plane()
        .map(|cp| {
            cp.managers
                .iter()
                .flat_map(|m| m.ensemble.classes().filter_map(|c| c.steps_to_stop.map(|s| (c.class_id, s))))
                .collect()
        })
        .unwrap_or_default();
    let metadata = RunMetadata {
        algo: cfg.algo.name().to_string(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        update_interval_ms: interval,
        sessions: n,
        updates: processed.len(),
        publishes: events.iter().filter(|e| e.event == "publish").count(),
        processed_per_update: processed,
    };
    Ok(RunOutput { rows, decisions: log, events, metadata, class_steps })
}

fn request(prep: &Prepared, i: usize, t_ms: u64) -> DecisionRequest<'_> {
    DecisionRequest {
        session: i,
        client: prep.client_of[i],
        class_id: prep.class_of[i],
        pop: prep.pop_of[i],
        features: &prep.features[i],
        t_ms,
    }
}

fn log_row(prep: &Prepared, i: usize, phase: usize, t: u64, d: &Decision) -> DecisionLogRow {
    DecisionLogRow {
        ts_ms: t,
        session: i,
        client_id: prep.sessions[i].client_id.clone(),
        class_id: prep.class_of[i],
        phase,
        config_id: d.config,
        arm: d.arm,
    }
}

/// Validates, prepares, runs and (when an output path is set) writes results.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let prep = prepare(cfg)?;
    let out = run_prepared(cfg, &prep)?;
    if let Some(path) = &cfg.output {
        write_outputs(&out, path)?;
    }
    Ok(out)
}

pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn format_ids(ids: &[ConfigId]) -> String {
    ids.iter().map(|c| c.0.to_string()).collect::<Vec<_>>().join(";")
}

pub fn write_results(rows: &[SessionResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.ts_ms.to_string(),
            r.client_id.clone(),
            r.class_id.to_string(),
            r.website_id.clone(),
            r.algo.clone(),
            r.arm.name().to_string(),
            format_ids(&r.config_ids),
            format!("{:.3}", r.plt_ms),
            format!("{:.3}", r.default_plt_ms),
            format!("{:.3}", r.optimal_plt_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct RawRow {
    ts_ms: u64,
    client_id: String,
    class_id: usize,
    website_id: String,
    algo: String,
    arm: String,
    config_ids: String,
    plt_ms: f64,
    default_plt_ms: f64,
    optimal_plt_ms: f64,
}

pub fn read_results(path: &Path) -> Result<Vec<SessionResult>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_HEADER {
        return Err(Error::Config(format!("{}: unexpected results header", path.display())));
    }
    let mut rows = Vec::new();
    for raw in r.deserialize::<RawRow>() {
        let raw = raw?;
        let config_ids = raw
            .config_ids
            .split(';')
            .map(|s| s.parse::<u16>().map(ConfigId).map_err(|e| Error::Config(format!("config id {s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(SessionResult {
            ts_ms: raw.ts_ms,
            client_id: raw.client_id,
            class_id: raw.class_id,
            website_id: raw.website_id,
            algo: raw.algo,
            arm: raw.arm.parse()?,
            config_ids,
            plt_ms: raw.plt_ms,
            default_plt_ms: raw.default_plt_ms,
            optimal_plt_ms: raw.optimal_plt_ms,
        });
    }
    Ok(rows)
}

/// Writes the results CSV plus `.meta.json`, `.decisions.csv` and
/// `.events.csv` sidecars.
pub fn write_outputs(out: &RunOutput, path: &Path) -> Result<()> {
    write_results(&out.rows, path)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(sidecar(path, ".meta.json"))?), &out.metadata)?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(sidecar(path, ".decisions.csv"))?));
    w.write_record(["ts_ms", "session", "client_id", "class_id", "phase", "config_id", "arm"])?;
    for d in &out.decisions {
        w.write_record([
            d.ts_ms.to_string(),
            d.session.to_string(),
            d.client_id.clone(),
            d.class_id.to_string(),
            d.phase.to_string(),
            d.config_id.0.to_string(),
            d.arm.name().to_string(),
        ])?;
    }
    w.flush()?;

    let mut f = BufWriter::new(File::create(sidecar(path, ".events.csv"))?);
    writeln!(f, "ts,event,detail")?;
    for e in &out.events {
        writeln!(f, "{},{},\"{}\"", e.ts_ms, e.event, e.detail)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_metadata(results_path: &Path) -> Result<RunMetadata> {
    Ok(serde_json::from_reader(File::open(sidecar(results_path, ".meta.json"))?)?)
}

/// Default website catalog for trace workloads without their own.
pub fn default_trace_source(path: PathBuf) -> WorkloadSource {
    WorkloadSource::Trace { path, websites: standard_catalog() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::Distribution;

    pub(crate) fn small(algo: StrategyKind, seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::standard(algo, seed);
        if let WorkloadSource::Synthetic { spec } = &mut cfg.workload {
            spec.session_count = 1_500;
            spec.client_count = 150;
            spec.change_time_ms = Distribution::Exponential { mean: 40_000.0 };
        }
        cfg.netclass.warmup_sessions = 400;
        cfg.netclass.k = 6;
        cfg.topology.update_interval_ms = 30_000;
        cfg
    }

    #[test]
    fn default_strategy_has_zero_improvement() {
        let out = run_experiment(&small(StrategyKind::Default, 1)).unwrap();
        assert_eq!(out.rows.len(), 1_500);
        assert!(out.rows.iter().all(|r| r.improvement() == 0.0));
    }

    #[test]
    fn optimal_without_noise_is_never_beaten() {
        let mut cfg = small(StrategyKind::Optimal, 2);
        cfg.oracle = cfg.oracle.noiseless();
        let prep = prepare(&cfg).unwrap();
        let opt = run_prepared(&cfg, &prep).unwrap();
        assert!(opt.rows.iter().all(|r| r.improvement() >= 0.0 && r.distance_from_optimal() == 0.0));
        cfg.algo = StrategyKind::ConfigTron;
        let ct = run_prepared(&cfg, &prep).unwrap();
        for (a, b) in opt.rows.iter().zip(&ct.rows) {
            assert!(b.plt_ms >= a.plt_ms - 1e-9 * a.plt_ms);
        }
    }

    #[test]
    fn multi_phase_optimal_reconfigures() {
        let cfg = small(StrategyKind::Optimal, 3);
        let prep = prepare(&cfg).unwrap();
        let out = run_prepared(&cfg, &prep).unwrap();
        for (i, r) in out.rows.iter().enumerate() {
            assert_eq!(r.config_ids, prep.optimal[i]);
        }
        assert!(out.rows.iter().any(|r| r.config_ids.len() > 1));
    }

    #[test]
    fn every_session_appears_once_and_telemetry_is_conserved() {
        let out = run_experiment(&small(StrategyKind::ConfigTron, 4)).unwrap();
        assert_eq!(out.rows.len(), 1_500);
        let mut ts: Vec<u64> = out.rows.iter().map(|r| r.ts_ms).collect();
        let sorted = {
            let mut s = ts.clone();
            s.sort();
            s
        };
        assert_eq!(ts, sorted);
        ts.dedup();
        assert!(out.metadata.processed_per_update.iter().sum::<usize>() <= 1_500);
        assert!(out.metadata.publishes > 0);
    }

    #[test]
    fn row_arm_is_arrival_arm() {
        let out = run_experiment(&small(StrategyKind::ConfigTron, 5)).unwrap();
        for (i, r) in out.rows.iter().enumerate() {
            let expected = out.decisions.iter().find(|d| d.session == i && d.phase == 0).unwrap().arm;
            assert_eq!(r.arm, expected);
        }
    }

    #[test]
    fn results_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut cfg = small(StrategyKind::BoNc, 6);
        cfg.output = Some(path.clone());
        let out = run_experiment(&cfg).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back.len(), out.rows.len());
        for (a, b) in back.iter().zip(&out.rows) {
            assert_eq!(a.config_ids, b.config_ids);
            assert!((a.plt_ms - b.plt_ms).abs() <= 5e-4);
        }
        assert_eq!(read_metadata(&path).unwrap(), out.metadata);
        assert!(sidecar(&path, ".events.csv").exists());
    }

    #[test]
    fn invalid_config_is_rejected_before_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(StrategyKind::Default, 1);
        cfg.topology.update_interval_ms = 0;
        cfg.output = Some(dir.path().join("x.csv"));
        assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
        assert!(!dir.path().join("x.csv").exists());
    }
}
