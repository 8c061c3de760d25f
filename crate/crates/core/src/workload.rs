//! Client sessions: synthetic generation, trace ingestion, and phase lookup.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_BANDWIDTH_KBPS: f64 = 16.0;
pub const MAX_BANDWIDTH_KBPS: f64 = 10_000_000.0;
pub const MIN_RTT_MS: f64 = 1.0;
pub const MAX_RTT_MS: f64 = 5_000.0;
pub const MAX_LOSS_RATE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCondition {
    pub bandwidth_kbps: f64,
    pub rtt_ms: f64,
    pub loss_rate: f64,
}

impl NetworkCondition {
    pub fn new(bandwidth_kbps: f64, rtt_ms: f64, loss_rate: f64) -> Result<Self> {
        let c = NetworkCondition { bandwidth_kbps, rtt_ms, loss_rate };
        c.validate()?;
        Ok(c)
    }

    /// Projects arbitrary finite values into the valid region.
    pub fn clamped(bandwidth_kbps: f64, rtt_ms: f64, loss_rate: f64) -> Self {
        NetworkCondition {
            bandwidth_kbps: bandwidth_kbps.clamp(MIN_BANDWIDTH_KBPS, MAX_BANDWIDTH_KBPS),
            rtt_ms: rtt_ms.clamp(MIN_RTT_MS, MAX_RTT_MS),
            loss_rate: loss_rate.clamp(0.0, MAX_LOSS_RATE),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.bandwidth_kbps.is_finite() && self.rtt_ms.is_finite() && self.loss_rate.is_finite();
        if !finite {
            return Err(Error::InvalidConfig("non-finite network condition".into()));
        }
        if self.bandwidth_kbps <= 0.0 {
            return Err(Error::InvalidConfig("bandwidth_kbps must be positive".into()));
        }
        if self.rtt_ms <= 0.0 {
            return Err(Error::InvalidConfig("rtt_ms must be positive".into()));
        }
        if !(0.0..=MAX_LOSS_RATE).contains(&self.loss_rate) {
            return Err(Error::InvalidConfig("loss_rate out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub condition: NetworkCondition,
    pub duration_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientSession {
    pub client_id: String,
    pub website_id: String,
    pub arrival_ms: u64,
    pub phases: Vec<Phase>,
}

impl ClientSession {
    pub fn duration_ms(&self) -> u64 {
        self.phases.iter().map(|p| p.duration_ms).sum()
    }

    pub fn end_ms(&self) -> u64 {
        self.arrival_ms + self.duration_ms()
    }

    /// Absolute start time of each phase.
    pub fn phase_starts(&self) -> Vec<u64> {
        let mut t = self.arrival_ms;
        self.phases
            .iter()
            .map(|p| {
                let start = t;
                t += p.duration_ms;
                start
            })
            .collect()
    }

    /// Index of the phase containing `t_ms`; intervals are half-open and the
    /// last phase persists past the session's end.
    pub fn phase_index_at(&self, t_ms: u64) -> Result<usize> {
        if t_ms < self.arrival_ms {
            return Err(Error::BeforeArrival { t_ms, arrival_ms: self.arrival_ms });
        }
        let mut end = self.arrival_ms;
        for (i, p) in self.phases.iter().enumerate() {
            end += p.duration_ms;
            if t_ms < end {
                return Ok(i);
            }
        }
        Ok(self.phases.len() - 1)
    }

    pub fn condition_at(&self, t_ms: u64) -> Result<NetworkCondition> {
        Ok(self.phases[self.phase_index_at(t_ms)?].condition)
    }
}

/// Free-function form of [`ClientSession::condition_at`].
pub fn condition_at(session: &ClientSession, t_ms: u64) -> Result<NetworkCondition> {
    session.condition_at(t_ms)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Website {
    pub website_id: String,
    pub object_count: u32,
    pub avg_object_bytes: u32,
    pub html_bytes: u32,
    pub category: String,
}

impl Website {
    pub fn new(id: &str, object_count: u32, avg_object_bytes: u32, html_bytes: u32, category: &str) -> Self {
        Website {
            website_id: id.to_string(),
            object_count,
            avg_object_bytes,
            html_bytes,
            category: category.to_string(),
        }
    }

    /// Page weight excluding HTML, the clustering complexity scalar.
    pub fn complexity_bytes(&self) -> f64 {
        self.object_count as f64 * self.avg_object_bytes as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.object_count == 0 || self.avg_object_bytes == 0 || self.html_bytes == 0 {
            return Err(Error::InvalidConfig(format!("website {} has zero size fields", self.website_id)));
        }
        Ok(())
    }
}

/// A small catalog spanning light text pages to heavy media pages.
pub fn standard_catalog() -> Vec<Website> {
    vec![
        Website::new("news-lite", 12, 6_000, 30_000, "text"),
        Website::new("search", 4, 12_000, 14_600, "text"),
        Website::new("shop", 60, 1_500, 60_000, "commerce"),
        Website::new("social", 90, 1_200, 45_000, "social"),
        Website::new("media", 25, 80_000, 40_000, "media"),
        Website::new("portal", 120, 9_000, 80_000, "portal"),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    /// `exp(N(mu, sigma^2))`.
    LogNormal { mu: f64, sigma: f64 },
    Uniform { low: f64, high: f64 },
    Empirical { values: Vec<f64> },
    Exponential { mean: f64 },
}

impl Distribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::LogNormal { mu, sigma } => LogNormal::new(*mu, *sigma).expect("valid lognormal").sample(rng),
            Self::Uniform { low, high } => {
                if high > low {
                    rng.random_range(*low..*high)
                } else {
                    *low
                }
            }
            Self::Empirical { values } => values[rng.random_range(0..values.len())],
            Self::Exponential { mean } => Exp::new(1.0 / mean).expect("positive mean").sample(rng),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Self::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && *sigma >= 0.0,
            Self::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            Self::Empirical { values } => !values.is_empty() && values.iter().all(|v| v.is_finite()),
            Self::Exponential { mean } => mean.is_finite() && *mean > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid distribution for {name}")))
        }
    }
}

/// Parameters for synthetic session generation.
///
/// Each client has a persistent base condition drawn from the per-dimension
/// distributions; every session jitters it multiplicatively. A session gets
/// a second phase when its change time falls inside the session duration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub bandwidth_kbps: Distribution,
    pub rtt_ms: Distribution,
    pub loss_rate: Distribution,
    pub session_count: usize,
    pub client_count: usize,
    pub arrival_rate_per_min: f64,
    pub session_duration_ms: u64,
    pub change_time_ms: Distribution,
    /// Lognormal sigma of the per-dimension post-change factor.
    pub perturbation_sigma: f64,
    /// Lognormal sigma of the per-session jitter around a client's base.
    pub session_jitter_sigma: f64,
    pub websites: Vec<Website>,
    pub seed: u64,
}

impl WorkloadSpec {
    /// The reference workload used by the experiment suite: 50k sessions
    /// from 2k clients over roughly 200 simulated minutes. Client base
    /// conditions come from two bandwidth tiers, two path lengths and two
    /// loss levels, so most network classes cover a single tier.
    pub fn standard(seed: u64) -> Self {
        WorkloadSpec {
            bandwidth_kbps: Distribution::Empirical { values: vec![10_000.0, 100_000.0] },
            rtt_ms: Distribution::Empirical { values: vec![60.0, 400.0] },
            loss_rate: Distribution::Empirical { values: vec![0.001, 0.05] },
            session_count: 50_000,
            client_count: 2_000,
            arrival_rate_per_min: 250.0,
            session_duration_ms: 60_000,
            change_time_ms: Distribution::Exponential { mean: 150_000.0 },
            perturbation_sigma: 0.3,
            session_jitter_sigma: 0.1,
            websites: standard_catalog(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.websites.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        for w in &self.websites {
            w.validate()?;
        }
        self.bandwidth_kbps.validate("bandwidth_kbps")?;
        self.rtt_ms.validate("rtt_ms")?;
        self.loss_rate.validate("loss_rate")?;
        self.change_time_ms.validate("change_time_ms")?;
        if self.client_count == 0 {
            return Err(Error::InvalidConfig("client_count must be positive".into()));
        }
        if !(self.arrival_rate_per_min > 0.0) {
            return Err(Error::InvalidConfig("arrival_rate_per_min must be positive".into()));
        }
        if self.session_duration_ms == 0 {
            return Err(Error::InvalidConfig("session_duration_ms must be positive".into()));
        }
        if !(self.perturbation_sigma >= 0.0 && self.session_jitter_sigma >= 0.0) {
            return Err(Error::InvalidConfig("perturbation scales must be non-negative".into()));
        }
        Ok(())
    }

    pub fn website(&self, id: &str) -> Option<&Website> {
        self.websites.iter().find(|w| w.website_id == id)
    }
}

fn jitter<R: Rng + ?Sized>(c: &NetworkCondition, sigma: f64, rng: &mut R) -> NetworkCondition {
    if sigma == 0.0 {
        return *c;
    }
    let n = Normal::new(0.0, sigma).expect("valid sigma");
    NetworkCondition::clamped(
        c.bandwidth_kbps * n.sample(rng).exp(),
        c.rtt_ms * n.sample(rng).exp(),
        c.loss_rate * n.sample(rng).exp(),
    )
}

/// Generates sessions in arrival order. Deterministic per `spec.seed`.
pub fn generate_sessions(spec: &WorkloadSpec) -> Result<Vec<ClientSession>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bases: Vec<NetworkCondition> = (0..spec.client_count)
        .map(|_| {
            NetworkCondition::clamped(
                spec.bandwidth_kbps.sample(&mut rng),
                spec.rtt_ms.sample(&mut rng),
                spec.loss_rate.sample(&mut rng),
            )
        })
        .collect();
    let gap = Exp::new(spec.arrival_rate_per_min / 60_000.0).expect("positive rate");

    let mut t = 0.0f64;
    let mut sessions = Vec::with_capacity(spec.session_count);
    for _ in 0..spec.session_count {
        t += gap.sample(&mut rng);
        let client = rng.random_range(0..spec.client_count);
        let website = &spec.websites[rng.random_range(0..spec.websites.len())];
        let first = jitter(&bases[client], spec.session_jitter_sigma, &mut rng);
        let change = spec.change_time_ms.sample(&mut rng).max(0.0).round() as u64;
        let second = jitter(&first, spec.perturbation_sigma, &mut rng);
        let phases = if change > 0 && change < spec.session_duration_ms {
            vec![
                Phase { condition: first, duration_ms: change },
                Phase { condition: second, duration_ms: spec.session_duration_ms - change },
            ]
        } else {
            vec![Phase { condition: first, duration_ms: spec.session_duration_ms }]
        };
        sessions.push(ClientSession {
            client_id: format!("c{client:05}"),
            website_id: website.website_id.clone(),
            arrival_ms: t as u64,
            phases,
        });
    }
    Ok(sessions)
}

/// Header of the trace CSV format, one row per phase.
pub const TRACE_HEADER: [&str; 7] = [
    "client_id",
    "arrival_ms",
    "website_id",
    "phase_start_ms",
    "bandwidth_kbps",
    "rtt_ms",
    "loss_rate",
];

/// The last phase of a traced session has no explicit end; it lasts this long.
pub const TRACE_LAST_PHASE_MS: u64 = 60_000;

struct TraceRow {
    line: u64,
    website_id: String,
    phase_start_ms: u64,
    condition: NetworkCondition,
}

/// Reads a session trace. Rows are grouped by `(client_id, arrival_ms)`;
/// phases must start at the arrival time and have distinct start times.
pub fn ingest_trace(path: impl AsRef<Path>) -> Result<Vec<ClientSession>> {
    let path = path.as_ref();
    let err = |line: u64, message: String| Error::Trace { path: path.to_path_buf(), line, message };

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if !header.is_empty() && header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(err(1, format!("expected header {}", TRACE_HEADER.join(","))));
    }

    let mut groups: BTreeMap<(u64, String), Vec<TraceRow>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != TRACE_HEADER.len() {
            return Err(err(line, format!("expected {} fields, got {}", TRACE_HEADER.len(), record.len())));
        }
        let int = |i: usize| {
            record[i]
                .parse::<u64>()
                .map_err(|_| err(line, format!("{}: not an integer: '{}'", TRACE_HEADER[i], &record[i])))
        };
        let real = |i: usize| {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, format!("{}: not a number: '{}'", TRACE_HEADER[i], &record[i])))
        };
        let client_id = record[0].to_string();
        let arrival_ms = int(1)?;
        let condition = NetworkCondition::new(real(4)?, real(5)?, real(6)?).map_err(|e| {
            let msg = match e {
                Error::InvalidConfig(m) => m,
                other => other.to_string(),
            };
            err(line, msg)
        })?;
        groups.entry((arrival_ms, client_id)).or_default().push(TraceRow {
            line,
            website_id: record[2].to_string(),
            phase_start_ms: int(3)?,
            condition,
        });
    }

    let mut sessions = Vec::with_capacity(groups.len());
    for ((arrival_ms, client_id), mut rows) in groups {
        rows.sort_by_key(|r| r.phase_start_ms);
        if rows[0].phase_start_ms != arrival_ms {
            return Err(err(rows[0].line, format!("non-contiguous phases: first phase starts at {} but arrival is {arrival_ms}", rows[0].phase_start_ms)));
        }
        let mut phases = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.website_id != rows[0].website_id {
                return Err(err(row.line, "website_id changes within a session".into()));
            }
            let duration_ms = match rows.get(i + 1) {
                Some(next) if next.phase_start_ms == row.phase_start_ms => {
                    return Err(err(next.line, "non-contiguous phases: duplicate phase start".into()))
                }
                Some(next) => next.phase_start_ms - row.phase_start_ms,
                None => TRACE_LAST_PHASE_MS,
            };
            phases.push(Phase { condition: row.condition, duration_ms });
        }
        sessions.push(ClientSession {
            client_id,
            website_id: rows[0].website_id.clone(),
            arrival_ms,
            phases,
        });
    }
    Ok(sessions)
}

/// Writes sessions in the trace CSV format accepted by [`ingest_trace`].
pub fn write_trace(path: impl AsRef<Path>, sessions: &[ClientSession]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    for s in sessions {
        for (p, start) in s.phases.iter().zip(s.phase_starts()) {
            w.write_record([
                s.client_id.clone(),
                s.arrival_ms.to_string(),
                s.website_id.clone(),
                start.to_string(),
                p.condition.bandwidth_kbps.to_string(),
                p.condition.rtt_ms.to_string(),
                p.condition.loss_rate.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn small_spec() -> WorkloadSpec {
        WorkloadSpec { session_count: 500, client_count: 50, ..WorkloadSpec::standard(42) }
    }

    fn cond(bw: f64) -> NetworkCondition {
        NetworkCondition::new(bw, 50.0, 0.01).unwrap()
    }

    fn two_phase() -> ClientSession {
        ClientSession {
            client_id: "a".into(),
            website_id: "w".into(),
            arrival_ms: 1_000,
            phases: vec![
                Phase { condition: cond(1_000.0), duration_ms: 500 },
                Phase { condition: cond(2_000.0), duration_ms: 500 },
            ],
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_sessions(&small_spec()).unwrap();
        let b = generate_sessions(&small_spec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
        assert!(a.windows(2).all(|w| w[0].arrival_ms <= w[1].arrival_ms));
        for s in &a {
            assert!(s.phases.len() == 1 || s.phases.len() == 2);
            assert_eq!(s.duration_ms(), 60_000);
            for p in &s.phases {
                p.condition.validate().unwrap();
                assert!(p.duration_ms > 0);
            }
        }
    }

    #[test]
    fn zero_change_probability_gives_single_phase() {
        let spec = WorkloadSpec {
            change_time_ms: Distribution::Uniform { low: 70_000.0, high: 80_000.0 },
            ..small_spec()
        };
        assert!(generate_sessions(&spec).unwrap().iter().all(|s| s.phases.len() == 1));
    }

    #[test]
    fn degenerate_bandwidth_distribution() {
        let spec = WorkloadSpec {
            bandwidth_kbps: Distribution::Uniform { low: 1000.0, high: 1000.0 },
            session_jitter_sigma: 0.0,
            perturbation_sigma: 0.0,
            ..small_spec()
        };
        for s in generate_sessions(&spec).unwrap() {
            for p in s.phases {
                assert_eq!(p.condition.bandwidth_kbps, 1000.0);
            }
        }
    }

    #[test]
    fn empty_catalog_is_rejected() {
        let spec = WorkloadSpec { websites: vec![], ..small_spec() };
        assert!(matches!(generate_sessions(&spec), Err(Error::EmptyCatalog)));
    }

    #[test]
    fn condition_lookup() {
        let s = two_phase();
        assert_eq!(s.condition_at(1_200).unwrap().bandwidth_kbps, 1_000.0);
        assert_eq!(s.condition_at(1_500).unwrap().bandwidth_kbps, 2_000.0);
        assert_eq!(s.condition_at(99_999).unwrap().bandwidth_kbps, 2_000.0);
        assert!(matches!(condition_at(&s, 999), Err(Error::BeforeArrival { .. })));
    }

    fn write_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_two_phase_session() {
        let f = write_file(
            "client_id,arrival_ms,website_id,phase_start_ms,bandwidth_kbps,rtt_ms,loss_rate\n\
             # comment\n\
             c1,0,shop,60000,2000,80,0.02\n\
             c1,0,shop,0,5000,40,0.001\n",
        );
        let sessions = ingest_trace(f.path()).unwrap();
        assert_eq!(sessions.len(), 1);
        let s = &sessions[0];
        assert_eq!(s.phases.len(), 2);
        assert_eq!(s.phases[0].duration_ms, 60_000);
        assert_eq!(s.phases[0].condition.bandwidth_kbps, 5000.0);
        assert_eq!(s.phases[1].condition.bandwidth_kbps, 2000.0);
    }

    #[test]
    fn ingest_empty_file() {
        let f = write_file("");
        assert!(ingest_trace(f.path()).unwrap().is_empty());
        let f = write_file("client_id,arrival_ms,website_id,phase_start_ms,bandwidth_kbps,rtt_ms,loss_rate\n");
        assert!(ingest_trace(f.path()).unwrap().is_empty());
    }

    #[test]
    fn ingest_rejects_bad_loss_with_line_number() {
        let f = write_file(
            "client_id,arrival_ms,website_id,phase_start_ms,bandwidth_kbps,rtt_ms,loss_rate\n\
             c1,0,shop,0,5000,40,0.001\n\
             c2,5,shop,5,5000,40,1.2\n",
        );
        let e = ingest_trace(f.path()).unwrap_err().to_string();
        assert!(e.contains("loss_rate out of range"), "{e}");
        assert!(e.contains(":3:"), "{e}");
    }

    #[test]
    fn ingest_rejects_non_contiguous_phases() {
        let f = write_file(
            "client_id,arrival_ms,website_id,phase_start_ms,bandwidth_kbps,rtt_ms,loss_rate\n\
             c1,0,shop,100,5000,40,0.001\n",
        );
        assert!(ingest_trace(f.path()).unwrap_err().to_string().contains("non-contiguous"));
        let f = write_file(
            "client_id,arrival_ms,website_id,phase_start_ms,bandwidth_kbps,rtt_ms,loss_rate\n\
             c1,0,shop,0,5000,40,0.001\n\
             c1,0,shop,0,4000,40,0.001\n",
        );
        assert!(ingest_trace(f.path()).unwrap_err().to_string().contains("non-contiguous"));
    }

    #[test]
    fn ingest_rejects_malformed_rows() {
        let f = write_file(
            "client_id,arrival_ms,website_id,phase_start_ms,bandwidth_kbps,rtt_ms,loss_rate\n\
             c1,zero,shop,0,5000,40,0.001\n",
        );
        let e = ingest_trace(f.path()).unwrap_err().to_string();
        assert!(e.contains(":2:") && e.contains("arrival_ms"), "{e}");
    }

    #[test]
    fn trace_round_trip() {
        let mut sessions = generate_sessions(&small_spec()).unwrap();
        sessions.sort_by(|a, b| (a.arrival_ms, &a.client_id).cmp(&(b.arrival_ms, &b.client_id)));
        let f = tempfile::NamedTempFile::new().unwrap();
        write_trace(f.path(), &sessions).unwrap();
        let back = ingest_trace(f.path()).unwrap();
        assert_eq!(back.len(), sessions.len());
        // The last phase's duration is not carried by the format.
        for (a, b) in sessions.iter().zip(&back) {
            assert_eq!(a.client_id, b.client_id);
            assert_eq!(a.phases.len(), b.phases.len());
            assert_eq!(a.phases[0].condition, b.phases[0].condition);
        }
    }
}
