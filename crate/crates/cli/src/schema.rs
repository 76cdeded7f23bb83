//! Circuit description files: a restricted JSON schema.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sigpass_core::dominance::Epsilon;
use sigpass_core::elements::PwlCurveSpec;
use sigpass_core::interconnect::Topology;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitFile {
    pub elements: Vec<Element>,
    pub subcircuits: Vec<Subcircuit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bridges: Vec<BridgeSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub connections: Vec<Connection>,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementKind {
    Capacitor,
    Inductor,
    ResistorPwl,
    ResistorLinear,
}

/// `value` is in F, H or Ω; `curve` is required for `resistor-pwl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Element {
    pub name: String,
    pub kind: ElementKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<PwlCurveSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prototype {
    RcSwitch,
    RlSwitch,
    ParallelRlc,
    SeriesRlc,
    RcLadder,
}

/// Prototype invocation; fields name elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subcircuit {
    pub name: String,
    pub prototype: Prototype,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacitor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inductor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resistor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacitors: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shunts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<Vec<String>>,
}

/// Linear bridges give `r_c` and `alpha`; active ones name a `resistor-pwl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeSpec {
    pub name: String,
    pub topology: Topology,
    pub r_a: f64,
    pub r_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConnectionKind {
    Neutral,
    Coupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Connection {
    pub name: String,
    pub kind: ConnectionKind,
    pub a: String,
    pub b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bridge: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    /// Rates to certify; empty means the middle of the rate window.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rates: Vec<f64>,
    /// Storage signs of the closed circuit; defaults to the physical signs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signs: Option<Vec<i8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Epsilon>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub x0: Vec<f64>,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

pub fn parse_str(text: &str) -> Result<CircuitFile, CliError> {
    let cf: CircuitFile = serde_json::from_str(text).map_err(|e| CliError::Schema {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cf.validate()?;
    Ok(cf)
}

pub fn parse(path: &Path) -> Result<CircuitFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_str(&text)
}

fn invalid(what: impl Into<String>) -> CliError {
    CliError::Invalid(what.into())
}

impl CircuitFile {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("circuit files always serialize")
    }

    /// Reference resolution, name uniqueness and unit sanity.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut seen = HashSet::new();
        for e in &self.elements {
            if !seen.insert(e.name.as_str()) {
                return Err(invalid(format!("duplicate element '{}'", e.name)));
            }
            match e.kind {
                ElementKind::ResistorPwl => {
                    if e.curve.is_none() {
                        return Err(invalid(format!("element '{}': resistor-pwl needs a curve", e.name)));
                    }
                    if e.value.is_some() {
                        return Err(invalid(format!("element '{}': resistor-pwl takes no value", e.name)));
                    }
                }
                _ => {
                    let v = e.value.ok_or_else(|| invalid(format!("element '{}' needs a value", e.name)))?;
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(invalid(format!("element '{}': value {v} must be positive", e.name)));
                    }
                    if e.curve.is_some() {
                        return Err(invalid(format!("element '{}': only resistor-pwl takes a curve", e.name)));
                    }
                }
            }
        }

        let mut nodes = HashSet::new();
        for s in &self.subcircuits {
            if !nodes.insert(s.name.as_str()) {
                return Err(invalid(format!("duplicate subcircuit '{}'", s.name)));
            }
            self.check_subcircuit(s)?;
        }
        let mut bridges = HashSet::new();
        for b in &self.bridges {
            if !bridges.insert(b.name.as_str()) {
                return Err(invalid(format!("duplicate bridge '{}'", b.name)));
            }
            match (&b.active, b.r_c, b.alpha) {
                (Some(c), None, None) => {
                    self.expect_kind(&b.name, c, ElementKind::ResistorPwl)?;
                }
                (None, Some(_), Some(_)) => {}
                _ => {
                    return Err(invalid(format!(
                        "bridge '{}' needs either 'active' or both 'r_c' and 'alpha'",
                        b.name
                    )))
                }
            }
        }
        let mut used = HashSet::new();
        for c in &self.connections {
            for side in [&c.a, &c.b] {
                if !nodes.contains(side.as_str()) {
                    return Err(invalid(format!("connection '{}': unknown circuit '{side}'", c.name)));
                }
                if !used.insert(side.clone()) {
                    return Err(invalid(format!("connection '{}': circuit '{side}' is already connected", c.name)));
                }
            }
            if c.a == c.b {
                return Err(invalid(format!("connection '{}' joins '{}' to itself", c.name, c.a)));
            }
            match (c.kind, &c.bridge) {
                (ConnectionKind::Neutral, None) => {}
                (ConnectionKind::Coupled, Some(b)) if bridges.contains(b.as_str()) => {}
                (ConnectionKind::Coupled, Some(b)) => {
                    return Err(invalid(format!("connection '{}': unknown bridge '{b}'", c.name)))
                }
                (ConnectionKind::Coupled, None) => {
                    return Err(invalid(format!("connection '{}': coupled connections need a bridge", c.name)))
                }
                (ConnectionKind::Neutral, Some(_)) => {
                    return Err(invalid(format!("connection '{}': neutral connections take no bridge", c.name)))
                }
            }
            if !nodes.insert(c.name.as_str()) {
                return Err(invalid(format!("duplicate circuit name '{}'", c.name)));
            }
        }
        let tops = self.top_candidates(&used);
        if tops.len() != 1 {
            return Err(invalid(format!("expected exactly one top-level circuit, found {tops:?}")));
        }

        if self.analysis.rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(invalid("analysis rates must be finite and non-negative"));
        }
        if let Some(signs) = &self.analysis.signs {
            if signs.iter().any(|s| *s != 1 && *s != -1) {
                return Err(invalid("analysis signs must be +1 or -1"));
            }
        }
        if let Some(s) = &self.simulation {
            if !(s.horizon > 0.0) {
                return Err(invalid("simulation horizon must be positive"));
            }
            if s.step.is_some_and(|h| !(h > 0.0)) {
                return Err(invalid("simulation step must be positive"));
            }
            if s.transient_fraction.is_some_and(|f| !(0.0..1.0).contains(&f)) {
                return Err(invalid("transient_fraction must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    fn top_candidates(&self, used: &HashSet<String>) -> Vec<String> {
        self.subcircuits
            .iter()
            .map(|s| &s.name)
            .chain(self.connections.iter().map(|c| &c.name))
            .filter(|n| !used.contains(n.as_str()))
            .cloned()
            .collect()
    }

    /// Name of the circuit no connection consumes.
    pub fn top(&self) -> String {
        let used: HashSet<String> = self.connections.iter().flat_map(|c| [c.a.clone(), c.b.clone()]).collect();
        self.top_candidates(&used).remove(0)
    }

    fn expect_kind(&self, owner: &str, name: &str, kind: ElementKind) -> Result<&Element, CliError> {
        let e = self.element(name).ok_or_else(|| invalid(format!("'{owner}': unknown element '{name}'")))?;
        if e.kind != kind {
            return Err(invalid(format!("'{owner}': element '{name}' is {:?}, expected {kind:?}", e.kind)));
        }
        Ok(e)
    }

    fn check_subcircuit(&self, s: &Subcircuit) -> Result<(), CliError> {
        let need = |field: &Option<String>, label: &str, kind: ElementKind| -> Result<(), CliError> {
            let name = field
                .as_ref()
                .ok_or_else(|| invalid(format!("subcircuit '{}' needs '{label}'", s.name)))?;
            self.expect_kind(&s.name, name, kind).map(|_| ())
        };
        let forbid = |present: bool, label: &str| -> Result<(), CliError> {
            if present {
                Err(invalid(format!("subcircuit '{}' does not take '{label}'", s.name)))
            } else {
                Ok(())
            }
        };
        let ladder_fields = s.capacitors.is_some() || s.shunts.is_some() || s.series.is_some();
        match s.prototype {
            Prototype::RcSwitch => {
                need(&s.capacitor, "capacitor", ElementKind::Capacitor)?;
                need(&s.resistor, "resistor", ElementKind::ResistorPwl)?;
                forbid(s.inductor.is_some(), "inductor")?;
                forbid(ladder_fields, "ladder lists")
            }
            Prototype::RlSwitch => {
                need(&s.inductor, "inductor", ElementKind::Inductor)?;
                need(&s.resistor, "resistor", ElementKind::ResistorPwl)?;
                forbid(s.capacitor.is_some(), "capacitor")?;
                forbid(ladder_fields, "ladder lists")
            }
            Prototype::ParallelRlc | Prototype::SeriesRlc => {
                need(&s.capacitor, "capacitor", ElementKind::Capacitor)?;
                need(&s.inductor, "inductor", ElementKind::Inductor)?;
                need(&s.resistor, "resistor", ElementKind::ResistorPwl)?;
                forbid(ladder_fields, "ladder lists")
            }
            Prototype::RcLadder => {
                forbid(s.capacitor.is_some() || s.inductor.is_some() || s.resistor.is_some(), "single elements")?;
                let list = |field: &Option<Vec<String>>, label: &str, kind| -> Result<usize, CliError> {
                    let names = field
                        .as_ref()
                        .ok_or_else(|| invalid(format!("subcircuit '{}' needs '{label}'", s.name)))?;
                    for n in names {
                        self.expect_kind(&s.name, n, kind)?;
                    }
                    Ok(names.len())
                };
                let n = list(&s.capacitors, "capacitors", ElementKind::Capacitor)?;
                let k = list(&s.shunts, "shunts", ElementKind::ResistorLinear)?;
                let j = list(&s.series, "series", ElementKind::ResistorLinear)?;
                if n == 0 || k != n || j + 1 != n {
                    return Err(invalid(format!(
                        "subcircuit '{}': ladder needs n capacitors, n shunts and n-1 series resistors",
                        s.name
                    )));
                }
                Ok(())
            }
        }
    }
}
