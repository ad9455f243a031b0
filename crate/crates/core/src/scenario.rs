//! Scenario files: one TOML document describing a complete experiment.
//!
//! Every tunable lives in the file. Nothing here supplies a default except
//! a relay's queue limit, which falls back to the controller's `s_max`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Circuit, CircuitId, LinkSpec, NetworkTopology, NodeId, NodeSpec};
use crate::ocp::ControllerConfig;
use crate::sim::{Policy, SimSetup, SourceModel};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Simulated seconds.
    pub duration: f64,
    pub policy: Policy,
    pub seed: u64,
    /// Client-side buffer per circuit, in packets.
    pub source_buffer: usize,
    /// Per-circuit queue cap under the baseline policy, in packets.
    pub baseline_queue_limit: usize,
    pub controller: ControllerSection,
    pub nodes: Vec<NodeEntry>,
    pub links: Vec<LinkSpec<f64>>,
    pub circuits: Vec<CircuitEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub dt: f64,
    pub horizon: usize,
    pub d0: f64,
    pub r_max: f64,
    /// Per-circuit queue limit, packets.
    pub s_max: f64,
    /// Part of `s_max` the plans keep free, packets.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: NodeId,
    pub capacity_in: f64,
    pub capacity_out: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitEntry {
    pub id: CircuitId,
    pub path: Vec<NodeId>,
    pub source: SourceModel,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ScenarioError::Parse(msg) => ScenarioError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario fields are all representable in TOML")
    }

    pub fn topology(&self) -> Result<NetworkTopology<f64>, ScenarioError> {
        let s_max = self.controller.s_max;
        let t = NetworkTopology {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeSpec {
                    id: n.id,
                    capacity_in: n.capacity_in,
                    capacity_out: n.capacity_out,
                    queue_limit: n.queue_limit.unwrap_or(s_max),
                })
                .collect(),
            links: self.links.clone(),
            circuits: self
                .circuits
                .iter()
                .map(|c| Circuit {
                    id: c.id,
                    path: c.path.clone(),
                })
                .collect(),
        };
        t.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))
    }

    pub fn controller(&self) -> ControllerConfig<f64> {
        let c = &self.controller;
        let mut cfg = ControllerConfig::new(c.dt, c.r_max, c.s_max);
        cfg.horizon = c.horizon;
        cfg.d0 = c.d0;
        cfg.queue_margin = c.margin;
        cfg
    }

    /// Checked simulation setup; circuit sources are taken in id order.
    pub fn setup(&self) -> Result<SimSetup, ScenarioError> {
        let topology = self.topology()?;
        let setup = SimSetup {
            topology,
            controller: self.controller(),
            sources: self.circuits.iter().map(|c| c.source.clone()).collect(),
            duration: self.duration,
            policy: self.policy,
            seed: self.seed,
            source_buffer: self.source_buffer,
            baseline_queue_limit: self.baseline_queue_limit,
        };
        setup.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(setup)
    }
}
