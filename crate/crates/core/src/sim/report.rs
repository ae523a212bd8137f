use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{run_replay, Policy, ReplayResult, Scenario};
use crate::domain::IncidentId;
use crate::error::{Error, Result};
use crate::planner::DecisionRecord;

/// Response times closer than this count as equal.
const SAME_RESPONSE_S: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncidentComparison {
    pub incident_id: IncidentId,
    pub response_time_base: f64,
    pub response_time_policy: f64,
}

impl IncidentComparison {
    /// Positive when the planner was faster.
    pub fn savings(&self) -> f64 {
        self.response_time_base - self.response_time_policy
    }

    pub fn impacted(&self) -> bool {
        self.savings().abs() > SAME_RESPONSE_S
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub incidents: Vec<IncidentComparison>,
    pub impacted_count: usize,
    /// Mean of base minus planner response time over impacted incidents.
    pub mean_savings_on_impacted: f64,
    pub mean_decision_compute_time: f64,
    pub mean_decision_compute_time_base: f64,
    pub mean_response_time_base: f64,
    pub mean_response_time_policy: f64,
    /// Savings of impacted incidents the planner served faster.
    pub positive_impacts: Vec<f64>,
    /// Savings (negative) of impacted incidents the planner served slower.
    pub negative_impacts: Vec<f64>,
}

impl ComparisonReport {
    pub fn from_runs(base: &ReplayResult, policy: &ReplayResult) -> Self {
        assert_eq!(
            base.outcomes.len(),
            policy.outcomes.len(),
            "runs replay the same stream"
        );
        let incidents: Vec<IncidentComparison> = base
            .outcomes
            .iter()
            .zip(&policy.outcomes)
            .map(|(b, p)| IncidentComparison {
                incident_id: b.incident_id,
                response_time_base: b.response_time,
                response_time_policy: p.response_time,
            })
            .collect();
        let impacted: Vec<f64> = incidents.iter().filter(|c| c.impacted()).map(|c| c.savings()).collect();
        let mean_savings_on_impacted = if impacted.is_empty() {
            0.0
        } else {
            impacted.iter().sum::<f64>() / impacted.len() as f64
        };
        ComparisonReport {
            impacted_count: impacted.len(),
            mean_savings_on_impacted,
            mean_decision_compute_time: policy.mean_decision_seconds(),
            mean_decision_compute_time_base: base.mean_decision_seconds(),
            mean_response_time_base: base.mean_response_time(),
            mean_response_time_policy: policy.mean_response_time(),
            positive_impacts: impacted.iter().copied().filter(|s| *s > 0.0).collect(),
            negative_impacts: impacted.iter().copied().filter(|s| *s < 0.0).collect(),
            incidents,
        }
    }
}

/// Replays the scenario under the base policy and the planner on the same
/// incidents and service times.
pub fn compare_policies(scenario: &Scenario, trace: bool) -> Result<(ComparisonReport, ReplayResult)> {
    let base = run_replay(scenario, Policy::Base(scenario.base_metric), false)?;
    let policy = run_replay(scenario, Policy::Planner, trace)?;
    Ok((ComparisonReport::from_runs(&base, &policy), policy))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Per-incident CSV preceded by the config as `#` comment lines.
pub fn write_report_csv(path: &Path, config_toml: &str, report: &ComparisonReport) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    for line in config_toml.lines() {
        writeln!(out, "# {line}").map_err(io)?;
    }
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["incident_id", "response_time_base", "response_time_policy", "savings"])
        .map_err(err)?;
    for c in &report.incidents {
        w.write_record([
            c.incident_id.to_string(),
            c.response_time_base.to_string(),
            c.response_time_policy.to_string(),
            c.savings().to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(io)
}

#[derive(Serialize)]
struct JsonReport<'a> {
    config: serde_json::Value,
    incidents: usize,
    impacted_count: usize,
    mean_savings_on_impacted: f64,
    mean_decision_compute_time: f64,
    mean_decision_compute_time_base: f64,
    mean_response_time_base: f64,
    mean_response_time_policy: f64,
    positive_impacts: &'a [f64],
    negative_impacts: &'a [f64],
}

/// Aggregates as JSON, with the config echoed under `config`.
pub fn write_report_json(path: &Path, config: &impl Serialize, report: &ComparisonReport) -> Result<()> {
    let doc = JsonReport {
        config: serde_json::to_value(config).map_err(|e| Error::Format(e.to_string()))?,
        incidents: report.incidents.len(),
        impacted_count: report.impacted_count,
        mean_savings_on_impacted: report.mean_savings_on_impacted,
        mean_decision_compute_time: report.mean_decision_compute_time,
        mean_decision_compute_time_base: report.mean_decision_compute_time_base,
        mean_response_time_base: report.mean_response_time_base,
        mean_response_time_policy: report.mean_response_time_policy,
        positive_impacts: &report.positive_impacts,
        negative_impacts: &report.negative_impacts,
    };
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

/// One JSON object per planner decision.
pub fn write_trace(path: &Path, records: &[DecisionRecord]) -> Result<()> {
    let mut out = create(path)?;
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Per-incident outcomes of one replay, preceded by the config as `#` lines.
pub fn write_replay_csv(path: &Path, config_toml: &str, replay: &ReplayResult) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    for line in config_toml.lines() {
        writeln!(out, "# {line}").map_err(io)?;
    }
    let mut w = csv::Writer::from_writer(out);
    for o in &replay.outcomes {
        w.serialize(o)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(io)
}

#[derive(Serialize)]
struct ReplaySummary {
    config: serde_json::Value,
    incidents: usize,
    queued: usize,
    mean_response_time: f64,
    max_response_time: f64,
    decisions: usize,
    mean_decision_compute_time: f64,
}

pub fn write_replay_json(path: &Path, config: &impl Serialize, replay: &ReplayResult) -> Result<()> {
    let doc = ReplaySummary {
        config: serde_json::to_value(config).map_err(|e| Error::Format(e.to_string()))?,
        incidents: replay.outcomes.len(),
        queued: replay.outcomes.iter().filter(|o| o.queued).count(),
        mean_response_time: replay.mean_response_time(),
        max_response_time: replay.outcomes.iter().map(|o| o.response_time).fold(0.0, f64::max),
        decisions: replay.decision_seconds.len(),
        mean_decision_compute_time: replay.mean_decision_seconds(),
    };
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}
