//! Results of a scenario or attack run.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use contact_core::ExposureCategory;
use serde::{Deserialize, Serialize};

use crate::device::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Order {
    First,
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "DEFENDED")]
    Defended,
    #[serde(rename = "VULNERABLE")]
    Vulnerable,
    #[serde(rename = "N/A")]
    NotApplicable,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Defended => "DEFENDED",
            Verdict::Vulnerable => "VULNERABLE",
            Verdict::NotApplicable => "N/A",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub node: String,
    pub order: Order,
    /// Matched contacts per exposure category.
    pub categories: BTreeMap<ExposureCategory, usize>,
}

impl Notification {
    pub fn count(&self, category: ExposureCategory) -> usize {
        self.categories.get(&category).copied().unwrap_or(0)
    }

    /// Strongest category with at least one match.
    pub fn level(&self) -> Option<ExposureCategory> {
        self.categories.iter().rev().find(|(_, n)| **n > 0).map(|(c, _)| *c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub at_s: f64,
    pub node: String,
    pub action: String,
    pub notifications: Vec<Notification>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario: String,
    pub mode: Option<Mode>,
    pub verdict: Verdict,
    /// Verdict the test suite insists on, if any.
    pub required: Option<Verdict>,
    pub trials: usize,
    pub notifications: Vec<Notification>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timeline: Vec<TimelineEntry>,
    pub metrics: BTreeMap<String, serde_json::Value>,
}

impl ScenarioOutcome {
    pub fn new(scenario: impl Into<String>, mode: Option<Mode>) -> Self {
        ScenarioOutcome {
            scenario: scenario.into(),
            mode,
            verdict: Verdict::NotApplicable,
            required: None,
            trials: 0,
            notifications: Vec::new(),
            timeline: Vec::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn metric(&mut self, name: &str, value: impl Serialize) {
        self.metrics
            .insert(name.to_owned(), serde_json::to_value(value).expect("metric serializes"));
    }

    pub fn meets_requirement(&self) -> bool {
        self.required.map_or(true, |r| r == self.verdict)
    }

    pub fn notification(&self, node: &str, order: Order) -> Option<&Notification> {
        self.notifications.iter().find(|n| n.node == node && n.order == order)
    }

    /// Aligned text table for terminals.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mode = self.mode.map_or("-", Mode::as_str);
        let _ = writeln!(out, "scenario {}  mode {}  trials {}", self.scenario, mode, self.trials);
        let required = self.required.map_or(String::new(), |r| format!("  (required {})", r.as_str()));
        let _ = writeln!(out, "verdict  {}{}", self.verdict.as_str(), required);
        if !self.notifications.is_empty() {
            let _ = writeln!(out, "{:<12} {:<7} {:>5} {:>7} {:>5}", "node", "order", "HIGH", "MEDIUM", "LOW");
            for n in &self.notifications {
                let _ = writeln!(
                    out,
                    "{:<12} {:<7} {:>5} {:>7} {:>5}",
                    n.node,
                    match n.order {
                        Order::First => "FIRST",
                        Order::Second => "SECOND",
                    },
                    n.count(ExposureCategory::High),
                    n.count(ExposureCategory::Medium),
                    n.count(ExposureCategory::Low)
                );
            }
        }
        for t in &self.timeline {
            let seen: Vec<String> = t
                .notifications
                .iter()
                .map(|n| format!("{:?} {}", n.order, n.level().map_or("-", ExposureCategory::as_str)))
                .collect();
            let seen = if seen.is_empty() { "no notification".to_owned() } else { seen.join(", ") };
            let _ = writeln!(out, "t={:>7.0}s {:<12} {:<13} {}", t.at_s, t.node, t.action, seen);
        }
        let width = self.metrics.keys().map(String::len).max().unwrap_or(0);
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }
}
