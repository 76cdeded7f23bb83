use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use sigpass_cli::pipeline::Classification;
use sigpass_cli::{emit, parse, parse_str, run_analysis, Analysis, CliError, Overrides};
use sigpass_core::dominance::Behavior;
use sigpass_core::sim::{AttractorKind, Stability};

fn example() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/section6.circuit")
}

fn oscillator() -> &'static Analysis {
    static A: OnceLock<Analysis> = OnceLock::new();
    A.get_or_init(|| run_analysis(&parse(&example()).unwrap()).unwrap())
}

const RC_SWITCH: &str = r#"{
  "elements": [
    { "name": "C", "kind": "capacitor", "value": 1e-5 },
    { "name": "g", "kind": "resistor-pwl",
      "curve": { "kind": "voltage-controlled", "breakpoints": [2.0, 3.0], "anchor_value": 0.2, "slopes": [0.1, -0.1, 0.1] } }
  ],
  "subcircuits": [ { "name": "sw", "prototype": "rc_switch", "capacitor": "C", "resistor": "g" } ],
  "analysis": { "rates": [2e4] },
  "simulation": { "x0": [1.0], "horizon": 2e-3, "step": 1e-6, "tol": 1e-3 }
}"#;

const LADDER: &str = r#"{
  "elements": [
    { "name": "C1", "kind": "capacitor", "value": 1e-7 },
    { "name": "C2", "kind": "capacitor", "value": 2e-7 },
    { "name": "R1", "kind": "resistor-linear", "value": 1.0 },
    { "name": "R2", "kind": "resistor-linear", "value": 2.0 },
    { "name": "R12", "kind": "resistor-linear", "value": 0.5 }
  ],
  "subcircuits": [
    { "name": "load", "prototype": "rc_ladder", "capacitors": ["C1", "C2"], "shunts": ["R1", "R2"], "series": ["R12"] }
  ],
  "analysis": { "rates": [0.0] },
  "simulation": { "x0": [1.0, -1.0], "horizon": 5e-6, "tol": 1e-3 }
}"#;

#[test]
fn example_reproduces_oscillator() {
    let r = &oscillator().report;
    assert_eq!(r.states.len(), 5);
    assert_eq!(r.regions, 27);
    assert!((r.rate_window.lower / 1e4 - 1.0).abs() < 1e-6);
    assert!((r.rate_window.upper / 1e7 - 1.0).abs() < 1e-6);
    let cert = r.rates[0].certificate.as_ref().unwrap();
    assert!(cert.certified());
    assert_eq!(cert.p, 2);
    assert_eq!(r.rates[0].closed_loop_condition, Some(true));
    assert_eq!(r.equilibria.points.len(), 1);
    assert_eq!(r.equilibria.points[0].stability, Stability::Unstable);
    let sim = r.simulation.as_ref().unwrap();
    assert_eq!(sim.attractor.kind, AttractorKind::LimitCycle);
    let period = sim.attractor.period.unwrap();
    assert!((1e-3..=1e-1).contains(&period));
    assert_eq!(r.classification.behavior, Behavior::SimpleAttractor);
    assert!(r.classification.consistent);
    assert_eq!(r.exit_code(), 0);
    assert_eq!(r.bridges[0].verdict, sigpass_core::interconnect::CouplingVerdict::Dissipative);
}

#[test]
fn load_voltage_waveform() {
    // the last ladder node swings within tens of millivolts below zero
    let tr = oscillator().trajectory.as_ref().unwrap();
    let v3 = tr.column(4);
    let tail = &v3[v3.len() / 2..];
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(lo >= -0.040 && hi <= 0.020, "[{lo}, {hi}]");
    assert!(hi - lo > 0.01);
}

#[test]
fn corrupted_certificate_is_inconsistent() {
    let mut report = oscillator().report.clone();
    report.classification = Classification::evaluate(Some(0), report.classification.observed);
    assert!(!report.classification.consistent);
    assert_eq!(report.exit_code(), 2);
    assert!(!Classification::evaluate(Some(1), Some(AttractorKind::LimitCycle)).consistent);
    assert!(!Classification::evaluate(Some(2), Some(AttractorKind::BoundedUnclassified)).consistent);
    assert!(Classification::evaluate(Some(3), Some(AttractorKind::BoundedUnclassified)).consistent);
    assert!(Classification::evaluate(None, Some(AttractorKind::LimitCycle)).consistent);
}

#[test]
fn rc_switch_file_is_one_dominant() {
    let a = run_analysis(&parse_str(RC_SWITCH).unwrap()).unwrap();
    let r = &a.report;
    assert_eq!(r.rates[0].certificate.as_ref().unwrap().p, 1);
    assert_eq!(r.classification.behavior, Behavior::Equilibria);
    assert_eq!(r.simulation.as_ref().unwrap().attractor.kind, AttractorKind::Equilibrium);
    assert!(r.classification.consistent);
    assert_eq!(r.rates[0].closed_loop_condition, Some(true));
}

#[test]
fn passive_load_is_zero_dominant() {
    let a = run_analysis(&parse_str(LADDER).unwrap()).unwrap();
    let r = &a.report;
    assert_eq!(r.rates[0].certificate.as_ref().unwrap().p, 0);
    assert_eq!(r.classification.behavior, Behavior::UniqueEquilibrium);
    assert_eq!(r.equilibria.points.len(), 1);
    assert!(r.classification.consistent);
}

#[test]
fn rate_outside_validity_is_reported() {
    let mut cf = parse_str(LADDER).unwrap();
    cf.analysis.rates = vec![1e9];
    let a = run_analysis(&cf).unwrap();
    assert!(a.report.rates[0].certificate.is_none());
    assert!(a.report.rates[0].error.as_deref().unwrap().starts_with("supply"));
    assert_eq!(a.report.classification.p, None);
}

#[test]
fn unknown_key_reports_position() {
    let text = RC_SWITCH.replace("\"tol\": 1e-3", "\"tol\": 1e-3, \"tolerance\": 1");
    match parse_str(&text) {
        Err(CliError::Schema { line, column, message }) => {
            assert_eq!(line, 9);
            assert!(column > 0);
            assert!(message.contains("tolerance"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_curve_names_element() {
    let text = r#"{
      "elements": [ { "name": "gx", "kind": "resistor-pwl" }, { "name": "C", "kind": "capacitor", "value": 1.0 } ],
      "subcircuits": [ { "name": "sw", "prototype": "rc_switch", "capacitor": "C", "resistor": "gx" } ]
    }"#;
    let err = parse_str(text).unwrap_err().to_string();
    assert!(err.contains("'gx'") && err.contains("curve"), "{err}");
}

#[test]
fn duplicate_subcircuit_rejected() {
    let text = RC_SWITCH.replace(
        r#""subcircuits": [ { "name": "sw", "prototype": "rc_switch", "capacitor": "C", "resistor": "g" } ]"#,
        r#""subcircuits": [ { "name": "sw", "prototype": "rc_switch", "capacitor": "C", "resistor": "g" },
                            { "name": "sw", "prototype": "rc_switch", "capacitor": "C", "resistor": "g" } ]"#,
    );
    let err = parse_str(&text).unwrap_err().to_string();
    assert!(err.contains("duplicate subcircuit 'sw'"), "{err}");
}

#[test]
fn unit_and_reference_checks() {
    let neg = RC_SWITCH.replace("\"value\": 1e-5", "\"value\": -1e-5");
    assert!(parse_str(&neg).unwrap_err().to_string().contains("positive"));
    let dangling = RC_SWITCH.replace("\"resistor\": \"g\"", "\"resistor\": \"nope\"");
    assert!(parse_str(&dangling).unwrap_err().to_string().contains("unknown element 'nope'"));
    let wrong_kind = RC_SWITCH.replace("\"resistor\": \"g\"", "\"resistor\": \"C\"");
    assert!(parse_str(&wrong_kind).is_err());
}

#[test]
fn two_top_level_circuits_rejected() {
    let text = std::fs::read_to_string(example()).unwrap().replace(
        r#"{ "name": "oscillator", "kind": "coupled", "a": "switch", "b": "load", "bridge": "pi" }"#,
        "",
    );
    let text = text.replace(r#"{ "name": "switch", "kind": "neutral", "a": "sw_c", "b": "sw_l" },"#, r#"{ "name": "switch", "kind": "neutral", "a": "sw_c", "b": "sw_l" }"#);
    let err = parse_str(&text).unwrap_err().to_string();
    assert!(err.contains("exactly one top-level"), "{err}");
}

#[test]
fn serialize_round_trip() {
    for cf in [parse(&example()).unwrap(), parse_str(RC_SWITCH).unwrap(), parse_str(LADDER).unwrap()] {
        assert_eq!(parse_str(&cf.to_json()).unwrap(), cf);
    }
}

#[test]
fn overrides_take_precedence() {
    let mut cf = parse_str(RC_SWITCH).unwrap();
    Overrides { rate: Some(5e4), step: Some(2e-6), horizon: Some(1e-3) }.apply(&mut cf).unwrap();
    assert_eq!(cf.analysis.rates, vec![5e4]);
    let sim = cf.simulation.as_ref().unwrap();
    assert_eq!((sim.step, sim.horizon), (Some(2e-6), 1e-3));

    let mut cf = parse_str(RC_SWITCH).unwrap();
    cf.simulation = None;
    assert!(Overrides { step: Some(1e-6), ..Default::default() }.apply(&mut cf).is_err());
    assert!(Overrides { rate: Some(-1.0), ..Default::default() }.apply(&mut parse_str(RC_SWITCH).unwrap()).is_err());
}

#[test]
fn report_is_deterministic_and_csv_optional() {
    let dir = tempfile::tempdir().unwrap();
    let cf = parse_str(RC_SWITCH).unwrap();
    emit(&run_analysis(&cf).unwrap(), &dir.path().join("a")).unwrap();
    emit(&run_analysis(&cf).unwrap(), &dir.path().join("b")).unwrap();
    let a = std::fs::read(dir.path().join("a/report.json")).unwrap();
    let b = std::fs::read(dir.path().join("b/report.json")).unwrap();
    assert_eq!(a, b);

    let mut quiet = cf.clone();
    quiet.simulation = None;
    emit(&run_analysis(&quiet).unwrap(), &dir.path().join("c")).unwrap();
    assert!(dir.path().join("c/report.json").exists());
    assert!(!dir.path().join("c/trajectory.csv").exists());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sigpass"))
}

#[test]
fn binary_exit_codes_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("sw.circuit");
    std::fs::write(&file, RC_SWITCH).unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["analyze", file.to_str().unwrap(), "--out", out.to_str().unwrap(), "--rate", "3e4", "--horizon", "1e-3"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(out.join("report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["rates"][0]["rate"], 3e4);
    assert_eq!(report["simulation"]["horizon"], 1e-3);
    let order: Vec<usize> = ["\"circuit\"", "\"states\"", "\"rate_window\"", "\"equilibria\"", "\"classification\""]
        .iter()
        .map(|k| text.find(k).unwrap())
        .collect();
    assert!(order.windows(2).all(|w| w[0] < w[1]));

    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,sw.v_C"));
    let cell = lines.nth(1).unwrap().split(',').nth(1).unwrap();
    let mantissa = cell.split('e').next().unwrap().replace(['-', '.'], "");
    assert_eq!(mantissa.len(), 17, "{cell}");

    let bad = dir.path().join("bad.circuit");
    std::fs::write(&bad, "{ \"elements\": [], \"oops\": 1 }").unwrap();
    let o = bin().args(["analyze", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}
