//! Append-only record of structural mutations, serialized as one JSON object
//! per line so runs are diffable and replayable.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::UnitId;

/// Growth applied to one layer: `(source, newborn)` unit pairs. Source
/// indices refer to the pre-event topology, newborn indices to the
/// post-event topology.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGrowth {
    pub layer: usize,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthEvent {
    pub epoch: usize,
    pub layers: Vec<LayerGrowth>,
    /// Output widths of every parameterized layer after the event.
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerZeroed {
    pub layer: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub epoch: usize,
    pub zeroed: Vec<LayerZeroed>,
    /// Units removed, in application order; each id is valid at its step.
    pub removed: Vec<UnitId>,
    /// Removals refused by the never-empty-layer floor.
    pub collapse_refusals: Vec<UnitId>,
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Growth(GrowthEvent),
    Prune(PruneEvent),
}

/// Append-only structural-mutation log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut events = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(line)?);
        }
        Ok(EventLog { events })
    }
}
