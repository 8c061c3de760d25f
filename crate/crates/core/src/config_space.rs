//! The tunable web-stack configuration space.
//!
//! Seven knobs across TCP and HTTP. Every [`Configuration`] has a stable
//! integer id obtained by mixed-radix encoding of the knob value indices in
//! declaration order (congestion control is the most significant digit).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of configurations in the full space.
pub const SPACE_SIZE: usize = 768;
/// Length of [`Configuration::encode`] vectors.
pub const ENCODED_DIM: usize = 10;
/// Initial congestion window values in MSS units.
pub const ICW_VALUES: [u8; 6] = [1, 4, 10, 16, 20, 30];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConfigId(pub u16);

impl ConfigId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CongestionControl {
    Cubic,
    Reno,
    Vegas,
    Bbr,
}

impl CongestionControl {
    pub const ALL: [CongestionControl; 4] = [Self::Cubic, Self::Reno, Self::Vegas, Self::Bbr];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cubic => "cubic",
            Self::Reno => "reno",
            Self::Vegas => "vegas",
            Self::Bbr => "bbr",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pacing {
    PfifoFast,
    Fq,
}

impl Pacing {
    pub fn name(self) -> &'static str {
        match self {
            Self::PfifoFast => "pfifo_fast",
            Self::Fq => "fq",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HttpVersion {
    Http11,
    Http2,
}

impl HttpVersion {
    pub fn name(self) -> &'static str {
        match self {
            Self::Http11 => "1.1",
            Self::Http2 => "2",
        }
    }
}

/// One tunable knob, in id-encoding order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Knob {
    Cc,
    Icw,
    SlowStartAfterIdle,
    LowLatency,
    Autocorking,
    Pacing,
    Http,
}

impl Knob {
    pub const ALL: [Knob; 7] = [
        Self::Cc,
        Self::Icw,
        Self::SlowStartAfterIdle,
        Self::LowLatency,
        Self::Autocorking,
        Self::Pacing,
        Self::Http,
    ];

    pub fn cardinality(self) -> usize {
        match self {
            Self::Cc => 4,
            Self::Icw => 6,
            _ => 2,
        }
    }

    /// Short name used in canonical strings and CLI masks.
    pub fn name(self) -> &'static str {
        match self {
            Self::Cc => "cc",
            Self::Icw => "icw",
            Self::SlowStartAfterIdle => "ssai",
            Self::LowLatency => "ll",
            Self::Autocorking => "ac",
            Self::Pacing => "pacing",
            Self::Http => "http",
        }
    }

    fn position(self) -> usize {
        self as usize
    }
}

impl FromStr for Knob {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "cc" | "congestion_control" => Self::Cc,
            "icw" | "initcwnd" => Self::Icw,
            "ssai" | "slow_start_after_idle" => Self::SlowStartAfterIdle,
            "ll" | "low_latency" => Self::LowLatency,
            "ac" | "autocorking" => Self::Autocorking,
            "pacing" => Self::Pacing,
            "http" => Self::Http,
            other => return Err(Error::InvalidConfig(format!("unknown knob '{other}'"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration {
    pub cc: CongestionControl,
    pub icw: u8,
    pub slow_start_after_idle: bool,
    pub low_latency: bool,
    pub autocorking: bool,
    pub pacing: Pacing,
    pub http: HttpVersion,
}

/// Linux defaults.
pub fn default_config() -> Configuration {
    Configuration {
        cc: CongestionControl::Cubic,
        icw: 10,
        slow_start_after_idle: true,
        low_latency: false,
        autocorking: true,
        pacing: Pacing::PfifoFast,
        http: HttpVersion::Http11,
    }
}

/// All 768 configurations in id order.
pub fn enumerate_space() -> Vec<Configuration> {
    (0..SPACE_SIZE as u16).map(|i| Configuration::from_id(ConfigId(i))).collect()
}

/// Latin-hypercube sample of `k` distinct configurations from the full space.
pub fn lhc_sample<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<Vec<Configuration>> {
    ConfigSpace::full().lhc_sample(k, rng)
}

impl Configuration {
    pub fn knob_index(&self, knob: Knob) -> usize {
        match knob {
            Knob::Cc => self.cc as usize,
            Knob::Icw => ICW_VALUES
                .iter()
                .position(|&v| v == self.icw)
                .expect("icw outside value set"),
            Knob::SlowStartAfterIdle => self.slow_start_after_idle as usize,
            Knob::LowLatency => self.low_latency as usize,
            Knob::Autocorking => self.autocorking as usize,
            Knob::Pacing => self.pacing as usize,
            Knob::Http => self.http as usize,
        }
    }

    pub fn indices(&self) -> [usize; 7] {
        Knob::ALL.map(|k| self.knob_index(k))
    }

    /// Builds a configuration from per-knob value indices.
    ///
    /// Panics if an index is outside the knob's cardinality.
    pub fn from_indices(idx: [usize; 7]) -> Self {
        for (knob, &i) in Knob::ALL.iter().zip(idx.iter()) {
            assert!(i < knob.cardinality(), "{} index {i} out of range", knob.name());
        }
        Configuration {
            cc: CongestionControl::ALL[idx[0]],
            icw: ICW_VALUES[idx[1]],
            slow_start_after_idle: idx[2] == 1,
            low_latency: idx[3] == 1,
            autocorking: idx[4] == 1,
            pacing: if idx[5] == 0 { Pacing::PfifoFast } else { Pacing::Fq },
            http: if idx[6] == 0 { HttpVersion::Http11 } else { HttpVersion::Http2 },
        }
    }

    pub fn with_knob_index(&self, knob: Knob, index: usize) -> Self {
        let mut idx = self.indices();
        idx[knob.position()] = index;
        Self::from_indices(idx)
    }

    pub fn id(&self) -> ConfigId {
        let id = Knob::ALL
            .iter()
            .fold(0usize, |acc, &k| acc * k.cardinality() + self.knob_index(k));
        ConfigId(id as u16)
    }

    pub fn from_id(id: ConfigId) -> Self {
        assert!(id.index() < SPACE_SIZE, "config id {} out of range", id.0);
        let mut rest = id.index();
        let mut idx = [0usize; 7];
        for (pos, knob) in Knob::ALL.iter().enumerate().rev() {
            idx[pos] = rest % knob.cardinality();
            rest /= knob.cardinality();
        }
        Self::from_indices(idx)
    }

    /// Feature encoding for the GP and tree inputs: one-hot congestion
    /// control, icw scaled to `[0, 1]`, then the five binary knobs.
    pub fn encode(&self) -> [f64; ENCODED_DIM] {
        let mut v = [0.0; ENCODED_DIM];
        v[self.cc as usize] = 1.0;
        v[4] = (self.icw as f64 - 1.0) / 29.0;
        v[5] = self.slow_start_after_idle as u8 as f64;
        v[6] = self.low_latency as u8 as f64;
        v[7] = self.autocorking as u8 as f64;
        v[8] = (self.pacing == Pacing::Fq) as u8 as f64;
        v[9] = (self.http == HttpVersion::Http2) as u8 as f64;
        v
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cc={},icw={},ssai={},ll={},ac={},pacing={},http={}",
            self.cc.name(),
            self.icw,
            self.slow_start_after_idle as u8,
            self.low_latency as u8,
            self.autocorking as u8,
            self.pacing.name(),
            self.http.name()
        )
    }
}

impl FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidConfig(msg);
        let mut idx: [Option<usize>; 7] = [None; 7];
        for part in s.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got '{part}'")))?;
            let knob: Knob = key.parse()?;
            let i = match knob {
                Knob::Cc => CongestionControl::ALL.iter().position(|c| c.name() == value),
                Knob::Icw => value
                    .parse::<u8>()
                    .ok()
                    .and_then(|n| ICW_VALUES.iter().position(|&v| v == n)),
                Knob::Pacing => [Pacing::PfifoFast, Pacing::Fq]
                    .iter()
                    .position(|p| p.name() == value),
                Knob::Http => [HttpVersion::Http11, HttpVersion::Http2]
                    .iter()
                    .position(|h| h.name() == value),
                _ => match value {
                    "0" => Some(0),
                    "1" => Some(1),
                    _ => None,
                },
            };
            let i = i.ok_or_else(|| bad(format!("bad value '{value}' for {}", knob.name())))?;
            idx[knob.position()] = Some(i);
        }
        let mut out = [0usize; 7];
        for (pos, slot) in idx.iter().enumerate() {
            out[pos] = slot.ok_or_else(|| bad(format!("missing {}", Knob::ALL[pos].name())))?;
        }
        Ok(Self::from_indices(out))
    }
}

/// A set of knobs, stored as a bitmask in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KnobMask(u8);

impl KnobMask {
    pub fn all() -> Self {
        KnobMask(0x7f)
    }

    pub fn none() -> Self {
        KnobMask(0)
    }

    pub fn from_knobs(knobs: &[Knob]) -> Self {
        KnobMask(knobs.iter().fold(0u8, |m, k| m | (1 << k.position())))
    }

    pub fn contains(self, knob: Knob) -> bool {
        self.0 & (1 << knob.position()) != 0
    }

    pub fn knobs(self) -> Vec<Knob> {
        Knob::ALL.iter().copied().filter(|&k| self.contains(k)).collect()
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl Default for KnobMask {
    fn default() -> Self {
        Self::all()
    }
}

impl FromStr for KnobMask {
    type Err = Error;

    /// Comma-separated knob names; `all` and `none` are accepted.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(Self::all()),
            "" | "none" => Ok(Self::none()),
            list => {
                let knobs = list.split(',').map(str::parse).collect::<Result<Vec<Knob>>>()?;
                Ok(Self::from_knobs(&knobs))
            }
        }
    }
}

impl fmt::Display for KnobMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<_> = self.knobs().iter().map(|k| k.name()).collect();
        f.write_str(&names.join(","))
    }
}

/// The searchable configuration set: knobs outside `free` are pinned to
/// their defaults. The full space has every knob free.
#[derive(Clone, Debug)]
pub struct ConfigSpace {
    free: KnobMask,
    configs: Vec<Configuration>,
}

impl ConfigSpace {
    pub fn full() -> Self {
        Self::restricted(KnobMask::all())
    }

    pub fn restricted(free: KnobMask) -> Self {
        let base = default_config();
        let configs = enumerate_space()
            .into_iter()
            .filter(|c| {
                Knob::ALL
                    .iter()
                    .all(|&k| free.contains(k) || c.knob_index(k) == base.knob_index(k))
            })
            .collect();
        ConfigSpace { free, configs }
    }

    pub fn free_knobs(&self) -> KnobMask {
        self.free
    }

    /// Members in id order.
    pub fn configs(&self) -> &[Configuration] {
        &self.configs
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn contains(&self, c: &Configuration) -> bool {
        self.configs.binary_search_by_key(&c.id(), |x| x.id()).is_ok()
    }

    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        self.configs[rng.random_range(0..self.configs.len())]
    }

    /// Latin-hypercube sample of `k` distinct members.
    ///
    /// Each free knob's value list is split into `k` strata round-robin
    /// (starting from a shuffled value order) and the strata are permuted
    /// independently per knob. Row collisions are repaired by swapping
    /// values within a column, which preserves every knob's marginal counts.
    pub fn lhc_sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<Configuration>> {
        let n = self.len();
        if k > n {
            return Err(Error::SampleExceedsSpace { requested: k, available: n });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        if k == n {
            let mut all = self.configs.clone();
            all.shuffle(rng);
            return Ok(all);
        }
        if 2 * k > n {
            // The complement of a balanced subset of a full product is balanced.
            let excluded: Vec<ConfigId> = self.lhc_sample(n - k, rng)?.iter().map(|c| c.id()).collect();
            let mut rest: Vec<Configuration> = self
                .configs
                .iter()
                .copied()
                .filter(|c| !excluded.contains(&c.id()))
                .collect();
            rest.shuffle(rng);
            return Ok(rest);
        }
        loop {
            if let Some(rows) = self.try_lhc(k, rng) {
                return Ok(rows);
            }
        }
    }

    fn try_lhc<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Option<Vec<Configuration>> {
        let base = default_config().indices();
        let free: Vec<Knob> = self.free.knobs();
        let mut rows: Vec<[usize; 7]> = vec![base; k];
        for &knob in &free {
            let mut order: Vec<usize> = (0..knob.cardinality()).collect();
            order.shuffle(rng);
            let mut column: Vec<usize> = (0..k).map(|i| order[i % order.len()]).collect();
            column.shuffle(rng);
            for (row, v) in rows.iter_mut().zip(column) {
                row[knob.position()] = v;
            }
        }

        let mut counts: HashMap<[usize; 7], usize> = HashMap::new();
        for r in &rows {
            *counts.entry(*r).or_default() += 1;
        }
        let budget = 200 * k + 1000;
        let mut attempts = 0;
        loop {
            let dup = (0..k).find(|&i| counts[&rows[i]] > 1);
            let Some(r) = dup else { break };
            let mut fixed = false;
            while !fixed {
                attempts += 1;
                if attempts > budget || free.is_empty() {
                    return None;
                }
                let knob = free[rng.random_range(0..free.len())];
                let s = rng.random_range(0..k);
                let p = knob.position();
                if s == r || rows[s][p] == rows[r][p] {
                    continue;
                }
                let (mut new_r, mut new_s) = (rows[r], rows[s]);
                new_r[p] = rows[s][p];
                new_s[p] = rows[r][p];
                let occupied = |key: &[usize; 7]| {
                    let mut c = counts.get(key).copied().unwrap_or(0);
                    if *key == rows[r] {
                        c -= 1;
                    }
                    if *key == rows[s] {
                        c -= 1;
                    }
                    c > 0
                };
                if new_r == new_s || occupied(&new_r) || occupied(&new_s) {
                    continue;
                }
                for old in [rows[r], rows[s]] {
                    *counts.get_mut(&old).unwrap() -= 1;
                }
                rows[r] = new_r;
                rows[s] = new_s;
                *counts.entry(new_r).or_default() += 1;
                *counts.entry(new_s).or_default() += 1;
                fixed = true;
            }
        }
        Some(rows.into_iter().map(Configuration::from_indices).collect())
    }
}
