//! One run per feature or knob subset on a shared workload and seed.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config_space::KnobMask;
use crate::error::{Error, Result};
use crate::harness::{prepare, run_prepared, ExperimentConfig};
use crate::netclass::FeatureMask;
use crate::report::Percentiles;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Subsets of the clustering features.
    Features,
    /// Subsets of tunable knobs; the rest stay at their defaults for both the
    /// strategy and the optimal column.
    Knobs,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "features" | "feature" => Ok(Self::Features),
            "knobs" | "knob" => Ok(Self::Knobs),
            other => Err(Error::Config(format!("unknown ablation axis {other:?}"))),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Features => "features",
            Self::Knobs => "knobs",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub subset: String,
    pub sessions: usize,
    pub improvement: Percentiles,
}

/// Applies `subset` to a copy of `cfg`.
pub fn with_subset(cfg: &ExperimentConfig, axis: AblationAxis, subset: &str) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match axis {
        AblationAxis::Features => c.feature_mask = subset.parse::<FeatureMask>().map_err(|e| Error::Config(e.to_string()))?,
        AblationAxis::Knobs => c.knob_mask = subset.parse::<KnobMask>().map_err(|e| Error::Config(e.to_string()))?,
    }
    c.output = None;
    Ok(c)
}

pub fn ablate(cfg: &ExperimentConfig, axis: AblationAxis, subsets: &[String]) -> Result<Vec<AblationRow>> {
    let cfgs = subsets.iter().map(|s| with_subset(cfg, axis, s)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(cfgs.len());
    for (subset, c) in subsets.iter().zip(&cfgs) {
        let prep = prepare(c)?;
        let out = run_prepared(c, &prep)?;
        let imp: Vec<f64> = out.rows.iter().map(|r| r.improvement()).collect();
        rows.push(AblationRow { subset: subset.clone(), sessions: imp.len(), improvement: Percentiles::of(&imp)? });
    }
    Ok(rows)
}

pub fn write_ablation(rows: &[AblationRow], axis: AblationAxis, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["axis", "subset", "sessions", "p10", "p25", "p50", "p75", "p90", "p95", "p99"])?;
    for r in rows {
        let mut rec = vec![axis.to_string(), r.subset.clone(), r.sessions.to_string()];
        rec.extend(r.improvement.values().iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
