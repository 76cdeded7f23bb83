//! Builds the circuit, certifies it, simulates it and cross-checks the
//! observed behavior against the dominance index.

use std::collections::HashMap;

use serde::Serialize;
use sigpass_core::circuit::{
    parallel_rlc, parallel_rlc_supply, rc_ladder, rc_ladder_supply, rc_switch, rc_switch_supply, rl_switch,
    rl_switch_supply, series_rlc, series_rlc_supply, PortRole, PwlStateSpace, RcLadder,
};
use sigpass_core::dominance::{
    canonical_storage, check_dominance, check_signed_passivity, classify_behavior, natural_signs, rate_window,
    Behavior, CertificateReport, Epsilon, RateWindow, SignedStorage,
};
use sigpass_core::elements::{PwlCurve, SignedSupplyRate};
use sigpass_core::interconnect::{
    bridge_dissipation, check_coupling, closed_loop_condition, coupled_interconnect, neutral_interconnect,
    BridgeDissipation, Composition, CouplingBridge, CouplingVerdict, Topology,
};
use sigpass_core::matkernel::SymMatrix;
use sigpass_core::sim::{
    default_step, detect_attractor, equilibria, integrate, AttractorKind, AttractorReport, EquilibriumSet,
    InputSignal, IntegrateOptions, Substeps, Trajectory,
};
use sigpass_core::Exec;

use crate::schema::{CircuitFile, ConnectionKind, Prototype, Subcircuit};
use crate::CliError;

const DEFAULT_TRANSIENT: f64 = 0.5;
const DEFAULT_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupplyReport {
    pub q: Vec<Vec<f64>>,
    pub signature: Vec<i8>,
    pub r: Vec<Vec<f64>>,
}

fn rows(s: &SymMatrix) -> Vec<Vec<f64>> {
    (0..s.dim()).map(|r| s.as_mat().row(r).to_vec()).collect()
}

impl From<&SignedSupplyRate> for SupplyReport {
    fn from(s: &SignedSupplyRate) -> Self {
        SupplyReport { q: rows(&s.q), signature: s.signature.clone(), r: rows(&s.r) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubcircuitReport {
    pub name: String,
    pub supply: SupplyReport,
    pub certificate: CertificateReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeReport {
    pub name: String,
    pub connection: String,
    pub gain: f64,
    pub verdict: CouplingVerdict,
    pub dissipation: BridgeDissipation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub rate: f64,
    pub subcircuits: Vec<SubcircuitReport>,
    /// Closed-loop supply condition on the top-level ports, when it has any.
    pub closed_loop_condition: Option<bool>,
    pub certificate: Option<CertificateReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub step: f64,
    pub horizon: f64,
    pub substeps: usize,
    pub samples: usize,
    pub diverged: bool,
    pub attractor: AttractorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    /// Dominance index of the first certified rate.
    pub p: Option<usize>,
    pub behavior: Behavior,
    pub observed: Option<AttractorKind>,
    pub consistent: bool,
}

impl Classification {
    /// Prediction from the index and its consistency with the observed
    /// attractor. Bounded runs are assumed when nothing was simulated.
    pub fn evaluate(p: Option<usize>, observed: Option<AttractorKind>) -> Self {
        let bounded = observed != Some(AttractorKind::Unbounded);
        let behavior = match p {
            Some(p) => classify_behavior(p, bounded),
            None => Behavior::Unclassified,
        };
        let consistent = match (behavior, observed) {
            (_, None) | (Behavior::Unclassified, _) => true,
            (Behavior::UniqueEquilibrium | Behavior::Equilibria, Some(k)) => k == AttractorKind::Equilibrium,
            (Behavior::SimpleAttractor, Some(k)) => {
                matches!(k, AttractorKind::Equilibrium | AttractorKind::LimitCycle)
            }
        };
        Classification { p, behavior, observed, consistent }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub circuit: String,
    pub states: Vec<String>,
    pub ports: Vec<String>,
    pub regions: u64,
    pub rate_window: RateWindow,
    pub bridges: Vec<BridgeReport>,
    pub rates: Vec<RateReport>,
    pub equilibria: EquilibriumSet,
    pub simulation: Option<SimulationReport>,
    pub classification: Classification,
}

impl AnalysisReport {
    pub fn exit_code(&self) -> i32 {
        if self.classification.consistent {
            0
        } else {
            2
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

/// Report plus the simulated trajectory, if any.
pub struct Analysis {
    pub report: AnalysisReport,
    pub trajectory: Option<Trajectory>,
}

fn stage(name: &'static str) -> impl Fn(sigpass_core::Error) -> CliError {
    move |e| CliError::Stage { stage: name, source: e }
}

struct Part {
    model: PwlStateSpace,
    lower_rates: Vec<f64>,
    upper_rates: Vec<f64>,
}

struct Built<'f> {
    file: &'f CircuitFile,
    parts: HashMap<String, Part>,
    curves: HashMap<String, PwlCurve>,
}

impl<'f> Built<'f> {
    fn value(&self, name: &Option<String>) -> f64 {
        let n = name.as_deref().expect("validated");
        self.file.element(n).and_then(|e| e.value).expect("validated")
    }

    fn values(&self, names: &Option<Vec<String>>) -> Vec<f64> {
        names
            .as_ref()
            .expect("validated")
            .iter()
            .map(|n| self.file.element(n).and_then(|e| e.value).expect("validated"))
            .collect()
    }

    fn curve(&self, name: &Option<String>) -> &PwlCurve {
        &self.curves[name.as_deref().expect("validated")]
    }

    fn ladder(&self, s: &Subcircuit) -> RcLadder {
        RcLadder { caps: self.values(&s.capacitors), shunts: self.values(&s.shunts), series: self.values(&s.series) }
    }

    fn supply(&self, s: &Subcircuit, rate: f64) -> sigpass_core::Result<SignedSupplyRate> {
        match s.prototype {
            Prototype::RcSwitch => rc_switch_supply(self.value(&s.capacitor), self.curve(&s.resistor), rate),
            Prototype::RlSwitch => rl_switch_supply(self.value(&s.inductor), self.curve(&s.resistor), rate),
            Prototype::ParallelRlc => parallel_rlc_supply(
                self.value(&s.capacitor),
                self.value(&s.inductor),
                self.curve(&s.resistor),
                rate,
            ),
            Prototype::SeriesRlc => series_rlc_supply(
                self.value(&s.capacitor),
                self.value(&s.inductor),
                self.curve(&s.resistor),
                rate,
            ),
            Prototype::RcLadder => rc_ladder_supply(&self.ladder(s), rate),
        }
    }

    fn bridge(&self, name: &str) -> sigpass_core::Result<CouplingBridge> {
        let b = self.file.bridges.iter().find(|b| b.name == name).expect("validated");
        match (&b.active, b.r_c, b.alpha) {
            (Some(c), _, _) => CouplingBridge::active(b.topology, b.r_a, b.r_b, self.curves[c].clone()),
            (None, Some(rc), Some(alpha)) => CouplingBridge::linear(b.topology, b.r_a, b.r_b, rc, alpha),
            _ => unreachable!("validated"),
        }
    }
}

fn build(file: &CircuitFile) -> Result<Built<'_>, CliError> {
    let mut curves = HashMap::new();
    for e in &file.elements {
        if let Some(spec) = &e.curve {
            let c = PwlCurve::try_from(spec.clone()).map_err(stage("elements"))?;
            curves.insert(e.name.clone(), c);
        }
    }
    let mut built = Built { file, parts: HashMap::new(), curves };
    for s in &file.subcircuits {
        let (model, lower, upper) = match s.prototype {
            Prototype::RcSwitch => {
                let (c, g) = (built.value(&s.capacitor), built.curve(&s.resistor));
                (rc_switch(c, g), vec![g.slope_bounds().g_max / c], vec![])
            }
            Prototype::RlSwitch => {
                let (l, r) = (built.value(&s.inductor), built.curve(&s.resistor));
                (rl_switch(l, r), vec![r.slope_bounds().g_max / l], vec![])
            }
            Prototype::ParallelRlc => {
                let (c, l, g) = (built.value(&s.capacitor), built.value(&s.inductor), built.curve(&s.resistor));
                (parallel_rlc(c, l, g), vec![g.slope_bounds().g_max / c], vec![])
            }
            Prototype::SeriesRlc => {
                let (c, l, r) = (built.value(&s.capacitor), built.value(&s.inductor), built.curve(&s.resistor));
                (series_rlc(c, l, r), vec![r.slope_bounds().g_max / l], vec![])
            }
            Prototype::RcLadder => {
                let lad = built.ladder(s);
                let upper = lad.caps.iter().zip(&lad.shunts).map(|(c, r)| 1.0 / (r * c)).collect();
                (rc_ladder(&lad), vec![], upper)
            }
        };
        let model = model.map_err(stage("subcircuits"))?.with_label_prefix(&s.name);
        built.parts.insert(s.name.clone(), Part { model, lower_rates: lower, upper_rates: upper });
    }
    Ok(built)
}

fn storage_at(m: &PwlStateSpace, rate: f64) -> sigpass_core::Result<SignedStorage> {
    canonical_storage(m, &natural_signs(m))?.with_rate(rate, Epsilon::Value(0.0))
}

/// Composes all connections at one rate; returns the top-level composition
/// and the per-subcircuit reports.
fn compose_at(built: &Built, rate: f64, exec: Exec) -> Result<(Composition, Vec<SubcircuitReport>), CliError> {
    let file = built.file;
    let mut done: HashMap<String, Composition> = HashMap::new();
    let mut reports = Vec::new();
    for s in &file.subcircuits {
        let model = built.parts[&s.name].model.clone();
        let storage = storage_at(&model, rate).map_err(stage("storage"))?;
        let supply = built.supply(s, rate).map_err(stage("supply"))?;
        let certificate = check_signed_passivity(&model, &storage, &supply, exec).map_err(stage("passivity"))?;
        reports.push(SubcircuitReport { name: s.name.clone(), supply: (&supply).into(), certificate });
        done.insert(s.name.clone(), Composition { model, storage, supply });
    }
    for c in &file.connections {
        let a = done.remove(&c.a).expect("validated order");
        let b = done.remove(&c.b).expect("validated order");
        let out = match c.kind {
            ConnectionKind::Neutral => {
                neutral_interconnect(&a.model, &a.storage, &a.supply, &b.model, &b.storage, &b.supply)
            }
            ConnectionKind::Coupled => {
                let br = built.bridge(c.bridge.as_deref().expect("validated")).map_err(stage("bridges"))?;
                coupled_interconnect(&a.model, &a.storage, &a.supply, &b.model, &b.storage, &b.supply, &br)
            }
        }
        .map_err(stage("interconnect"))?;
        done.insert(c.name.clone(), out);
    }
    let top = done.remove(&file.top()).expect("validated top");
    Ok((top, reports))
}

/// Structure at rate 0, where every supply is valid, with the bridge verdicts
/// taken on the natural bridge ports.
fn top_model(built: &Built) -> Result<(PwlStateSpace, Vec<BridgeReport>), CliError> {
    let mut models: HashMap<String, (PwlStateSpace, SignedSupplyRate)> = HashMap::new();
    for s in &built.file.subcircuits {
        let m = built.parts[&s.name].model.clone();
        let sup = built.supply(s, 0.0).map_err(stage("supply"))?;
        models.insert(s.name.clone(), (m, sup));
    }
    let mut bridges = Vec::new();
    for c in &built.file.connections {
        let (ma, sa) = models.remove(&c.a).expect("validated order");
        let (mb, sb) = models.remove(&c.b).expect("validated order");
        let sta = storage_at(&ma, 0.0).map_err(stage("storage"))?;
        let stb = storage_at(&mb, 0.0).map_err(stage("storage"))?;
        let out = match c.kind {
            ConnectionKind::Neutral => neutral_interconnect(&ma, &sta, &sa, &mb, &stb, &sb),
            ConnectionKind::Coupled => {
                let bname = c.bridge.as_deref().expect("validated");
                let br = built.bridge(bname).map_err(stage("bridges"))?;
                let role = match br.topology {
                    Topology::Pi => PortRole::CurrentDriven,
                    Topology::T => PortRole::VoltageDriven,
                };
                let port_sig = |m: &PwlStateSpace, sup: &SignedSupplyRate, who: &str| {
                    m.ports().iter().position(|p| p.role == role).map(|j| sup.signature[j]).ok_or_else(|| {
                        CliError::Invalid(format!("connection '{}': '{who}' has no {role:?} port", c.name))
                    })
                };
                let (ga, gb) = (port_sig(&ma, &sa, &c.a)?, port_sig(&mb, &sb, &c.b)?);
                bridges.push(BridgeReport {
                    name: bname.to_string(),
                    connection: c.name.clone(),
                    gain: br.gain(),
                    verdict: check_coupling(&br, ga, gb).map_err(stage("bridges"))?,
                    dissipation: bridge_dissipation(&br, ga, gb).map_err(stage("bridges"))?,
                });
                coupled_interconnect(&ma, &sta, &sa, &mb, &stb, &sb, &br)
            }
        }
        .map_err(stage("interconnect"))?;
        models.insert(c.name.clone(), (out.model, out.supply));
    }
    Ok((models.remove(&built.file.top()).expect("validated top").0, bridges))
}

pub fn run_analysis(file: &CircuitFile) -> Result<Analysis, CliError> {
    let exec = Exec::default();
    let built = build(file)?;
    let (top, bridges) = top_model(&built)?;
    let closed = top.terminate();

    let lower: Vec<f64> = built.parts.values().flat_map(|p| p.lower_rates.clone()).collect();
    let upper: Vec<f64> = built.parts.values().flat_map(|p| p.upper_rates.clone()).collect();
    let window = rate_window(&lower, &upper);

    let rates = if file.analysis.rates.is_empty() {
        vec![window.midpoint().ok_or_else(|| {
            CliError::Invalid("no rates given and the rate window has no finite midpoint".into())
        })?]
    } else {
        file.analysis.rates.clone()
    };
    let eps = file.analysis.epsilon.unwrap_or(Epsilon::Auto);
    let mut rate_reports = Vec::new();
    for &rate in &rates {
        rate_reports.push(match compose_at(&built, rate, exec) {
            Ok((comp, subs)) => {
                let closed_loop =
                    if comp.model.m() > 0 { Some(closed_loop_condition(&comp.supply).map_err(stage("closed loop"))?) } else { None };
                let storage = match &file.analysis.signs {
                    Some(signs) => canonical_storage(&closed, signs).and_then(|s| s.with_rate(rate, eps)),
                    None => comp.storage.with_rate(rate, eps),
                }
                .map_err(stage("storage"))?;
                let cert = check_dominance(&closed, &storage, exec).map_err(stage("dominance"))?;
                RateReport { rate, subcircuits: subs, closed_loop_condition: closed_loop, certificate: Some(cert), error: None }
            }
            Err(e) => RateReport {
                rate,
                subcircuits: vec![],
                closed_loop_condition: None,
                certificate: None,
                error: Some(e.to_string()),
            },
        });
    }
    let p = rate_reports.iter().filter_map(|r| r.certificate.as_ref()).find(|c| c.certified()).map(|c| c.p);

    let eq = equilibria(&closed, exec).map_err(stage("equilibria"))?;

    let (simulation, trajectory) = match &file.simulation {
        None => (None, None),
        Some(s) => {
            let step = match s.step {
                Some(h) => h,
                None => default_step(&closed).map_err(stage("simulation"))?,
            };
            let opts = IntegrateOptions {
                step,
                horizon: s.horizon,
                substeps: s.substeps.map_or(Substeps::Auto, Substeps::Fixed),
                record_every: s.record_every.unwrap_or(1),
            };
            let tr = integrate(&closed, &s.x0, &InputSignal::Zero, &opts).map_err(stage("simulation"))?;
            let att = detect_attractor(
                &tr,
                s.transient_fraction.unwrap_or(DEFAULT_TRANSIENT),
                s.tol.unwrap_or(DEFAULT_TOL),
            )
            .map_err(stage("attractor"))?;
            let rep = SimulationReport {
                step,
                horizon: s.horizon,
                substeps: tr.substeps,
                samples: tr.len(),
                diverged: tr.diverged,
                attractor: att,
            };
            (Some(rep), Some(tr))
        }
    };
    let classification = Classification::evaluate(p, simulation.as_ref().map(|s| s.attractor.kind));

    let report = AnalysisReport {
        circuit: file.top(),
        states: closed.state_labels().to_vec(),
        ports: top.ports().iter().map(|p| p.label.clone()).collect(),
        regions: closed.region_count().min(u64::MAX as u128) as u64,
        rate_window: window,
        bridges,
        rates: rate_reports,
        equilibria: eq,
        simulation,
        classification,
    };
    Ok(Analysis { report, trajectory })
}
