//! Summaries of results files: improvement percentiles and CDF, median
//! distance from optimal per model update, and arm fractions per update.
//!
//! Everything here is a pure function of [`SessionResult`] rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bandit::{arm_contributions, ArmTag};
use crate::error::{Error, Result};
use crate::harness::SessionResult;

pub const PERCENTILES: [f64; 7] = [0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99];
const CDF_POINTS: usize = 101;

/// Linear interpolation between closest ranks on sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile(&v, 0.5)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p10: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
}

impl Percentiles {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyResults);
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let p = PERCENTILES.map(|q| percentile(&v, q));
        Ok(Percentiles { p10: p[0], p25: p[1], p50: p[2], p75: p[3], p90: p[4], p95: p[5], p99: p[6] })
    }

    pub fn values(&self) -> [f64; 7] {
        [self.p10, self.p25, self.p50, self.p75, self.p90, self.p95, self.p99]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateBucket {
    pub update: usize,
    pub sessions: usize,
    pub median_distance: f64,
    pub arms: BTreeMap<ArmTag, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub algo: String,
    pub sessions: usize,
    pub improvement: Percentiles,
    /// `(improvement, cumulative fraction)` at evenly spaced fractions.
    pub cdf: Vec<(f64, f64)>,
    /// Non-empty buckets only, in update order.
    pub updates: Vec<UpdateBucket>,
}

impl Report {
    pub fn bucket(&self, update: usize) -> Option<&UpdateBucket> {
        self.updates.iter().find(|b| b.update == update)
    }
}

/// Buckets sessions by the number of model updates that preceded their
/// arrival: `floor(ts / interval)`.
pub fn report(rows: &[SessionResult], update_interval_ms: u64) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::EmptyResults);
    }
    if update_interval_ms == 0 {
        return Err(Error::Config("update interval must be positive".into()));
    }
    let mut improvements: Vec<f64> = rows.iter().map(SessionResult::improvement).collect();
    let pct = Percentiles::of(&improvements)?;
    improvements.sort_by(f64::total_cmp);
    let cdf = (0..CDF_POINTS)
        .map(|i| {
            let q = i as f64 / (CDF_POINTS - 1) as f64;
            (percentile(&improvements, q), q)
        })
        .collect();

    let bucket_of = |r: &SessionResult| (r.ts_ms / update_interval_ms) as usize;
    let mut distances: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        distances.entry(bucket_of(r)).or_default().push(r.distance_from_optimal());
    }
    let arms = arm_contributions(rows.iter().map(|r| (bucket_of(r), r.arm)));
    let updates = distances
        .into_iter()
        .map(|(update, d)| UpdateBucket { update, sessions: d.len(), median_distance: median(&d), arms: arms[update].clone() })
        .collect();
    Ok(Report { algo: rows[0].algo.clone(), sessions: rows.len(), improvement: pct, cdf, updates })
}

/// Writes `percentiles.csv`, `cdf.csv`, `convergence.csv` and `arms.csv`
/// (plus `cdf.svg` and `convergence.svg` when `svg` is set) into `dir`.
pub fn write_report(reports: &[Report], dir: &Path, svg: bool) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::EmptyResults);
    }
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("percentiles.csv"))?;
    w.write_record(["algo", "sessions", "p10", "p25", "p50", "p75", "p90", "p95", "p99"])?;
    for r in reports {
        let mut rec = vec![r.algo.clone(), r.sessions.to_string()];
        rec.extend(r.improvement.values().iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("cdf.csv"))?;
    w.write_record(["algo", "improvement", "fraction"])?;
    for r in reports {
        for (x, q) in &r.cdf {
            w.write_record([r.algo.clone(), format!("{x:.6}"), format!("{q:.2}")])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("convergence.csv"))?;
    w.write_record(["algo", "update", "sessions", "median_distance"])?;
    for r in reports {
        for b in &r.updates {
            w.write_record([r.algo.clone(), b.update.to_string(), b.sessions.to_string(), format!("{:.6}", b.median_distance)])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("arms.csv"))?;
    w.write_record(["algo", "update", "arm", "fraction"])?;
    for r in reports {
        for b in &r.updates {
            for (arm, f) in &b.arms {
                w.write_record([r.algo.clone(), b.update.to_string(), arm.name().to_string(), format!("{f:.6}")])?;
            }
        }
    }
    w.flush()?;

    if svg {
        let cdf: Vec<(String, Vec<(f64, f64)>)> = reports.iter().map(|r| (r.algo.clone(), r.cdf.clone())).collect();
        fs::write(dir.join("cdf.svg"), line_chart("PLT improvement over default", "improvement", "CDF", &cdf))?;
        let conv: Vec<(String, Vec<(f64, f64)>)> = reports
            .iter()
            .map(|r| (r.algo.clone(), r.updates.iter().map(|b| (b.update as f64, b.median_distance)).collect()))
            .collect();
        fs::write(dir.join("convergence.svg"), line_chart("Median distance from optimal", "model update", "distance", &conv))?;
    }
    Ok(())
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// A minimal multi-series line chart.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, m) = (640.0, 420.0, 50.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, w / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#, h / 2.0, h / 2.0, escape(y_label));
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="{anchor}">{v:.3}</text>"#, sx(v), h - m + 15.0);
    }
    for v in [y0, y1] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, m - 4.0, sy(v) + 4.0);
    }
    for (i, (name, p)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = p.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly:.1}" fill="{color}">{}</text>"#, w - m - 120.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config_space::default_config;
    use proptest::prelude::*;

    fn row(ts: u64, plt: f64, default: f64, optimal: f64, arm: ArmTag) -> SessionResult {
        SessionResult {
            ts_ms: ts,
            client_id: "c".into(),
            class_id: 0,
            website_id: "w".into(),
            algo: "test".into(),
            arm,
            config_ids: vec![default_config().id()],
            plt_ms: plt,
            default_plt_ms: default,
            optimal_plt_ms: optimal,
        }
    }

    #[test]
    fn constant_improvement_fills_every_percentile() {
        let rows: Vec<_> = (0..50).map(|i| row(i * 1000, 900.0, 1000.0, 800.0, ArmTag::Gp)).collect();
        let r = report(&rows, 10_000).unwrap();
        for v in r.improvement.values() {
            assert!((v - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_results_error() {
        assert!(matches!(report(&[], 1000), Err(Error::EmptyResults)));
    }

    #[test]
    fn percentile_matches_hand_interpolation() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert_eq!(percentile(&v, 0.1), 1.4);
        assert_eq!(percentile(&v, 1.0), 5.0);
    }

    #[test]
    fn buckets_follow_update_boundaries() {
        let rows = vec![
            row(0, 110.0, 200.0, 100.0, ArmTag::Lhc),
            row(999, 130.0, 200.0, 100.0, ArmTag::Gp),
            row(1000, 100.0, 200.0, 100.0, ArmTag::DTree),
            row(3500, 100.0, 200.0, 100.0, ArmTag::DTree),
        ];
        let r = report(&rows, 1000).unwrap();
        let ups: Vec<usize> = r.updates.iter().map(|b| b.update).collect();
        assert_eq!(ups, vec![0, 1, 3]);
        assert!((r.bucket(0).unwrap().median_distance - 0.2).abs() < 1e-12);
        assert_eq!(r.bucket(0).unwrap().arms[&ArmTag::Gp], 0.5);
        assert_eq!(r.bucket(3).unwrap().arms[&ArmTag::DTree], 1.0);
    }

    #[test]
    fn optimal_rows_have_zero_distance() {
        let rows: Vec<_> = (0..20).map(|i| row(i * 500, 70.0 + i as f64, 100.0 + i as f64, 70.0 + i as f64, ArmTag::Oracle)).collect();
        let r = report(&rows, 2000).unwrap();
        assert!(r.updates.iter().all(|b| b.median_distance == 0.0));
    }

    #[test]
    fn writes_all_tables() {
        let rows: Vec<_> = (0..30).map(|i| row(i * 400, 90.0, 100.0, 80.0, ArmTag::Gp)).collect();
        let r = report(&rows, 2000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report(&[r], dir.path(), true).unwrap();
        for f in ["percentiles.csv", "cdf.csv", "convergence.csv", "arms.csv", "cdf.svg", "convergence.svg"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let pct = fs::read_to_string(dir.path().join("percentiles.csv")).unwrap();
        assert!(pct.lines().nth(1).unwrap().starts_with("test,30,0.100000"));
    }

    proptest! {
        #[test]
        fn cdf_is_monotone(v in prop::collection::vec((1.0f64..1000.0, 1.0f64..1000.0), 1..200)) {
            let rows: Vec<_> = v.iter().enumerate().map(|(i, &(p, d))| row(i as u64, p, d, p.min(d), ArmTag::Gp)).collect();
            let r = report(&rows, 50).unwrap();
            for w in r.cdf.windows(2) {
                prop_assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1);
            }
            let fractions: f64 = r.updates.iter().map(|b| b.arms.values().sum::<f64>()).sum();
            prop_assert!((fractions - r.updates.len() as f64).abs() < 1e-9);
        }
    }
}
