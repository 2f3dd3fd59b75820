//! Per-phase device drops.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::message::NodeId;
use super::{OrchestratorError, Result};

/// Points in a round where clients may disappear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropPhase {
    /// Before answering the ready poll.
    Ready,
    /// Before sending the data report to the head. A dropped head loses
    /// its whole cluster.
    Report,
    /// Non-head members after their reports were delivered.
    PostReport,
    /// Heads while training.
    HeadTraining,
}

impl DropPhase {
    pub const ALL: [DropPhase; 4] = [
        DropPhase::Ready,
        DropPhase::Report,
        DropPhase::PostReport,
        DropPhase::HeadTraining,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DropPhase::Ready => "ready",
            DropPhase::Report => "report",
            DropPhase::PostReport => "post_report",
            DropPhase::HeadTraining => "training",
        }
    }
}

impl fmt::Display for DropPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DropPhase {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown drop phase `{s}` (expected ready, report, post_report or training)"
                )
            })
    }
}

/// Independent drop probability for each phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DropModel {
    pub ready: f64,
    pub report: f64,
    pub post_report: f64,
    pub head_training: f64,
}

impl DropModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn get(&self, phase: DropPhase) -> f64 {
        match phase {
            DropPhase::Ready => self.ready,
            DropPhase::Report => self.report,
            DropPhase::PostReport => self.post_report,
            DropPhase::HeadTraining => self.head_training,
        }
    }

    pub fn set(&mut self, phase: DropPhase, p: f64) {
        match phase {
            DropPhase::Ready => self.ready = p,
            DropPhase::Report => self.report = p,
            DropPhase::PostReport => self.post_report = p,
            DropPhase::HeadTraining => self.head_training = p,
        }
    }

    pub fn with(mut self, phase: DropPhase, p: f64) -> Self {
        self.set(phase, p);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for phase in DropPhase::ALL {
            let p = self.get(phase);
            if !(0.0..=1.0).contains(&p) {
                return Err(OrchestratorError::Config(format!(
                    "drop probability {p} for {phase} not in [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Drops each client independently with the phase probability.
/// Returns `(survivors, dropped)`, both in input order.
pub fn apply_drop_model<R: Rng + ?Sized>(
    phase: DropPhase,
    clients: &[NodeId],
    model: &DropModel,
    rng: &mut R,
) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
    model.validate()?;
    let p = model.get(phase);
    let mut survivors = Vec::with_capacity(clients.len());
    let mut dropped = Vec::new();
    for &c in clients {
        if rng.random_bool(p) {
            dropped.push(c);
        } else {
            survivors.push(c);
        }
    }
    Ok((survivors, dropped))
}
