//! Declarative scenario files (TOML).
//!
//! ```toml
//! seed = 7
//! start = "2020-04-20T10:00:00Z"
//! duration_s = 900
//!
//! [radio]
//! adv_interval_ms = 250
//!
//! [[node]]
//! id = "A"
//! waypoints = [[0, 0.0, 0.0]]        # [t_s, x_m, y_m]
//!
//! [[node]]
//! id = "B"
//! waypoints = [[0, 1.0, 0.0]]
//!
//! [[step]]
//! at_s = 900
//! node = "A"
//! action = "report"
//! ```
//!
//! `step` entries are not interpreted by the simulator; they are kept with
//! their source positions for drivers that act on them.

use chrono::{DateTime, Utc};
use serde::Deserialize;
use toml::Spanned;

use crate::mobility::{Trajectory, Waypoint};
use crate::radio::{RadioConfig, RssiModel};
use crate::SimError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub start: DateTime<Utc>,
    pub duration_s: f64,
    #[serde(default)]
    pub radio: RadioConfig,
    #[serde(default)]
    pub rssi: RssiModel,
    #[serde(rename = "node")]
    pub nodes: Vec<NodeSpec>,
    #[serde(default, rename = "step")]
    pub steps: Vec<StepSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: Spanned<String>,
    pub waypoints: Spanned<Vec<[f64; 3]>>,
    #[serde(default = "yes")]
    pub scans: bool,
    /// Replays another node's TCN instead of advertising its own.
    #[serde(default)]
    pub replay: Vec<ReplaySpec>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplaySpec {
    pub source: Spanned<String>,
    /// When the replayed TCN was captured from `source`.
    pub captured_at_s: f64,
    pub from_s: f64,
    pub to_s: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub at_s: f64,
    pub node: Spanned<String>,
    pub action: Spanned<String>,
}

pub(crate) fn secs_to_us(s: f64) -> u64 {
    (s * 1e6).round() as u64
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| SimError::Parse {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_owned(),
        })?;
        scenario.validate(text)?;
        Ok(scenario)
    }

    fn validate(&self, text: &str) -> Result<(), SimError> {
        let at = |span: std::ops::Range<usize>, message: String| SimError::Parse {
            line: line_of(text, span.start),
            message,
        };
        if !(self.duration_s > 0.0) {
            return Err(SimError::Parse { line: 0, message: "duration_s must be positive".into() });
        }
        self.radio.validate()?;
        let mut seen = std::collections::HashSet::new();
        for node in &self.nodes {
            if !seen.insert(node.id.get_ref().as_str()) {
                return Err(at(node.id.span(), format!("duplicate node id {:?}", node.id.get_ref())));
            }
            self.trajectory(node).map_err(|e| at(node.waypoints.span(), e.to_string()))?;
            for r in &node.replay {
                if self.node(r.source.get_ref()).is_none() {
                    return Err(at(r.source.span(), format!("unknown node {:?}", r.source.get_ref())));
                }
                if !(r.from_s < r.to_s) {
                    return Err(at(r.source.span(), "replay window is empty".into()));
                }
            }
        }
        for step in &self.steps {
            if self.node(step.node.get_ref()).is_none() {
                return Err(at(step.node.span(), format!("unknown node {:?}", step.node.get_ref())));
            }
        }
        Ok(())
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id.get_ref() == id)
    }

    pub fn duration_us(&self) -> u64 {
        secs_to_us(self.duration_s)
    }

    pub fn trajectory(&self, node: &NodeSpec) -> Result<Trajectory, SimError> {
        let points = node
            .waypoints
            .get_ref()
            .iter()
            .map(|[t, x, y]| {
                if *t < 0.0 {
                    return Err(SimError::Config("waypoint time must not be negative".into()));
                }
                Ok(Waypoint { t_us: secs_to_us(*t), x: *x, y: *y })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Trajectory::new(points)
    }

    /// Source line of a span inside this scenario's text.
    pub fn line(text: &str, span: std::ops::Range<usize>) -> usize {
        line_of(text, span.start)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}
