//! Run records: a resolved config snapshot plus per-seed metrics, written
//! as the same flat key-value text as configs so records diff and replay.

use crate::error::{Error, Result};
use crate::harness::config::ConfigMap;
use std::io::Write;

/// Metrics for one seed of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedMetric {
    pub seed: u64,
    pub final_j: f64,
    pub nfe: usize,
    pub trajectory: Option<String>,
}

/// A reproducible run: the full config snapshot, the seed list, per-seed
/// metrics, and wall-clock. Replaying the snapshot reproduces every metric
/// value exactly.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub version: String,
    pub mode: String,
    pub wall_ms: u128,
    pub metrics: Vec<SeedMetric>,
    pub config: ConfigMap,
}

impl RunRecord {
    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# rfs-version: {}", self.version)?;
        let first_seed = self.metrics.first().map(|m| m.seed).unwrap_or(0);
        writeln!(w, "# seed: {first_seed}")?;
        writeln!(w, "record.version = {}", self.version)?;
        writeln!(w, "record.mode = {}", self.mode)?;
        writeln!(w, "record.wall_ms = {}", self.wall_ms)?;
        let seeds: Vec<String> = self.metrics.iter().map(|m| m.seed.to_string()).collect();
        writeln!(w, "record.seeds = {}", seeds.join(","))?;
        for m in &self.metrics {
            writeln!(w, "metric.{}.final_j = {}", m.seed, m.final_j)?;
            writeln!(w, "metric.{}.nfe = {}", m.seed, m.nfe)?;
            if let Some(path) = &m.trajectory {
                writeln!(w, "metric.{}.trajectory = {}", m.seed, path)?;
            }
        }
        for (k, v) in self.config.entries() {
            writeln!(w, "config.{k} = {v}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("records are utf-8")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let flat = ConfigMap::parse(text)?;
        let version = flat.require("record.version")?.to_string();
        let mode = flat.require("record.mode")?.to_string();
        let wall_ms = flat
            .require("record.wall_ms")?
            .parse::<u128>()
            .map_err(|_| Error::InvalidConfig {
                key: "record.wall_ms".into(),
                reason: "not an integer".into(),
            })?;
        let mut metrics = Vec::new();
        for raw_seed in flat.require("record.seeds")?.split(',') {
            let seed = raw_seed
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidConfig {
                    key: "record.seeds".into(),
                    reason: format!("`{raw_seed}` is not a seed"),
                })?;
            let jkey = format!("metric.{seed}.final_j");
            let final_j = flat
                .require(&jkey)?
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig {
                    key: jkey.clone(),
                    reason: "not a real number".into(),
                })?;
            let nkey = format!("metric.{seed}.nfe");
            let nfe = flat
                .require(&nkey)?
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig {
                    key: nkey.clone(),
                    reason: "not an integer".into(),
                })?;
            let trajectory = flat
                .get(&format!("metric.{seed}.trajectory"))
                .map(|s| s.to_string());
            metrics.push(SeedMetric {
                seed,
                final_j,
                nfe,
                trajectory,
            });
        }
        let mut config = ConfigMap::new();
        for (k, v) in flat.entries() {
            if let Some(stripped) = k.strip_prefix("config.") {
                config.set(stripped, v);
            }
        }
        Ok(RunRecord {
            version,
            mode,
            wall_ms,
            metrics,
            config,
        })
    }
}
