//! Fixed-step simulation, equilibria, attractor detection and dissipation
//! audits along trajectory pairs.
//!
//! Each output step of length `h` is split into `substeps` classical RK4
//! steps. With [`Substeps::Auto`] the split keeps `h_sub·ρ ≤ 2`, where `ρ` is
//! the largest eigenvalue modulus over the region Jacobians, so stiff passive
//! loads do not leave the RK4 stability region. Inputs are held constant over
//! each output step.

use std::io::Write;

use serde::Serialize;

use crate::circuit::PwlStateSpace;
use crate::dominance::SignedStorage;
use crate::elements::{supply_eval, SignedSupplyRate};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matkernel::{general_eigenvalues, solve_affine, AffineSolution};

/// State norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub enum InputSignal {
    Zero,
    Constant(Vec<f64>),
    /// `values[k]` is applied on `[k·period, (k+1)·period)`; the last value
    /// is held afterwards.
    PiecewiseConstant { period: f64, values: Vec<Vec<f64>> },
}

impl InputSignal {
    fn check(&self, m: usize) -> Result<()> {
        let ok = match self {
            InputSignal::Zero => true,
            InputSignal::Constant(v) => v.len() == m,
            InputSignal::PiecewiseConstant { period, values } => {
                *period > 0.0 && !values.is_empty() && values.iter().all(|v| v.len() == m)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("input signal does not provide {m} port inputs")))
        }
    }

    fn write_at(&self, t: f64, out: &mut [f64]) {
        match self {
            InputSignal::Zero => out.fill(0.0),
            InputSignal::Constant(v) => out.copy_from_slice(v),
            InputSignal::PiecewiseConstant { period, values } => {
                let k = ((t / period).floor().max(0.0) as usize).min(values.len() - 1);
                out.copy_from_slice(&values[k]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Substeps {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub step: f64,
    pub horizon: f64,
    pub substeps: Substeps,
    /// Keep every `record_every`-th step.
    pub record_every: usize,
}

impl IntegrateOptions {
    pub fn new(step: f64, horizon: f64) -> Self {
        IntegrateOptions { step, horizon, substeps: Substeps::Auto, record_every: 1 }
    }
}

/// `1/(50·max|Re λ|)` over the region Jacobians.
pub fn default_step(m: &PwlStateSpace) -> Result<f64> {
    let rate = m.fastest_rate(Exec::default())?;
    if rate == 0.0 {
        return Err(Error::Unsupported("model has no finite time constant".into()));
    }
    Ok(1.0 / (50.0 * rate))
}

pub fn auto_substeps(m: &PwlStateSpace, h: f64) -> Result<usize> {
    let rho = m.spectral_radius_bound(Exec::Sequential)?;
    Ok(((h * rho / 2.0).ceil() as usize).max(1))
}

/// Samples on a uniform grid, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub m: usize,
    /// Spacing between consecutive samples.
    pub h: f64,
    /// RK4 steps between consecutive samples.
    pub steps_per_sample: usize,
    /// RK4 length of each step is `h / (steps_per_sample · substeps)`.
    pub substeps: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.n..(k + 1) * self.n]
    }

    pub fn input(&self, k: usize) -> &[f64] {
        &self.inputs[k * self.m..(k + 1) * self.m]
    }

    pub fn output(&self, k: usize) -> &[f64] {
        &self.outputs[k * 2 * self.m..(k + 1) * 2 * self.m]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.states[k * self.n + j]).collect()
    }

    /// CSV with header `t,<labels>` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, labels: &[String], mut w: W) -> std::io::Result<()> {
        write!(w, "t")?;
        for l in labels {
            write!(w, ",{l}")?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            write!(w, "{:.16e}", self.times[k])?;
            for v in self.state(k) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Scratch buffers for allocation-free RK4 steps.
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Rk4 { k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }

    /// Advances `x` in place by one classical RK4 step of length `h`.
    pub fn step(&mut self, m: &PwlStateSpace, x: &mut [f64], u: &[f64], h: f64) {
        let n = x.len();
        m.rhs_into(x, u, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        m.rhs_into(&self.tmp, u, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        m.rhs_into(&self.tmp, u, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        m.rhs_into(&self.tmp, u, &mut self.k4);
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

fn record(m: &PwlStateSpace, tr: &mut Trajectory, t: f64, x: &[f64], u: &[f64]) {
    tr.times.push(t);
    tr.states.extend_from_slice(x);
    tr.inputs.extend_from_slice(u);
    let mm = m.m();
    if mm > 0 {
        let start = tr.outputs.len();
        tr.outputs.resize(start + 2 * mm, 0.0);
        let y = &mut tr.outputs[start..];
        m.c_y().mul_vec_acc(x, y);
        m.d_y().mul_vec_acc(u, y);
    }
}

pub fn integrate(m: &PwlStateSpace, x0: &[f64], u: &InputSignal, opts: &IntegrateOptions) -> Result<Trajectory> {
    let (h, horizon) = (opts.step, opts.horizon);
    if !(h > 0.0 && h.is_finite()) || !(horizon >= h && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("need 0 < h <= T, got h={h}, T={horizon}")));
    }
    if x0.len() != m.n() {
        return Err(Error::Dimension(format!("x0 has {} entries, model has {} states", x0.len(), m.n())));
    }
    if opts.record_every == 0 {
        return Err(Error::InvalidParameter("record_every must be at least 1".into()));
    }
    u.check(m.m())?;
    let substeps = match opts.substeps {
        Substeps::Auto => auto_substeps(m, h)?,
        Substeps::Fixed(0) => return Err(Error::InvalidParameter("substeps must be at least 1".into())),
        Substeps::Fixed(k) => k,
    };
    let ratio = horizon / h;
    let steps = if (ratio - ratio.round()).abs() <= 1e-9 * ratio { ratio.round() } else { ratio.ceil() } as usize;
    let every = opts.record_every;
    let samples = steps / every + 1;
    let n = m.n();
    let mm = m.m();
    let mut tr = Trajectory {
        n,
        m: mm,
        h: h * every as f64,
        steps_per_sample: every,
        substeps,
        times: Vec::with_capacity(samples),
        states: Vec::with_capacity(samples * n),
        inputs: Vec::with_capacity(samples * mm),
        outputs: Vec::with_capacity(samples * 2 * mm),
        diverged: false,
    };
    let mut x = x0.to_vec();
    let mut uk = vec![0.0; mm];
    let mut rk = Rk4::new(n);
    let hs = h / substeps as f64;
    u.write_at(0.0, &mut uk);
    record(m, &mut tr, 0.0, &x, &uk);
    for step in 0..steps {
        let t = step as f64 * h;
        u.write_at(t, &mut uk);
        for _ in 0..substeps {
            rk.step(m, &mut x, &uk, hs);
        }
        let done = step + 1;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bad = !(norm <= DIVERGENCE_NORM);
        if done % every == 0 || bad {
            let tn = done as f64 * h;
            u.write_at(tn, &mut uk);
            record(m, &mut tr, tn, &x, &uk);
        }
        if bad {
            tr.diverged = true;
            break;
        }
    }
    Ok(tr)
}

/// Integrates independent initial conditions (and inputs) concurrently.
pub fn integrate_many(
    m: &PwlStateSpace,
    runs: &[(Vec<f64>, InputSignal)],
    opts: &IntegrateOptions,
    exec: Exec,
) -> Vec<Result<Trajectory>> {
    let mut opts = *opts;
    if opts.substeps == Substeps::Auto {
        match auto_substeps(m, opts.step) {
            Ok(k) => opts.substeps = Substeps::Fixed(k),
            Err(e) => return runs.iter().map(|_| Err(e.clone())).collect(),
        }
    }
    exec.map_slice(runs, |(x0, u)| integrate(m, x0, u, &opts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equilibrium {
    pub point: Vec<f64>,
    pub region: Vec<usize>,
    pub stability: Stability,
    /// `(re, im)` pairs of the region Jacobian.
    pub eigenvalues: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSet {
    pub points: Vec<Equilibrium>,
    /// Regions whose affine system is singular but consistent.
    pub continuum_regions: Vec<Vec<usize>>,
}

fn stability_of(ev: &[(f64, f64)]) -> Stability {
    let scale = ev.iter().fold(1.0f64, |m, (re, im)| m.max(re.hypot(*im)));
    let alpha = ev.iter().fold(f64::NEG_INFINITY, |m, (re, _)| m.max(*re));
    let tol = 1e-9 * scale;
    if alpha > tol {
        Stability::Unstable
    } else if alpha < -tol {
        Stability::Stable
    } else {
        Stability::Marginal
    }
}

/// Least-squares consistency of a singular system `J·x = b`.
fn singular_consistent(j: &crate::matkernel::Mat, b: &[f64]) -> bool {
    let n = j.rows();
    let a = nalgebra::DMatrix::from_row_slice(n, n, j.as_slice());
    let rhs = nalgebra::DVector::from_column_slice(b);
    let svd = a.clone().svd(true, true);
    let tol = 1e-10 * svd.singular_values.max().max(1.0);
    match svd.solve(&rhs, tol) {
        Ok(x) => (&a * x - &rhs).norm() <= 1e-9 * rhs.norm().max(1.0),
        Err(_) => false,
    }
}

enum RegionOutcome {
    None,
    Point(Equilibrium),
    Continuum(Vec<usize>),
}

pub fn equilibria(m: &PwlStateSpace, exec: Exec) -> Result<EquilibriumSet> {
    if !m.is_terminated() {
        return Err(Error::Dimension("equilibria needs a terminated model".into()));
    }
    let count = m.checked_region_count()?;
    let outcomes = exec.map_range(count, |idx| -> Result<RegionOutcome> {
        let r = m.region_at(idx)?;
        let rhs: Vec<f64> = r.offset.iter().map(|v| -v).collect();
        match solve_affine(&r.jacobian, &rhs)? {
            AffineSolution::Unique(x) => {
                let scale = x.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                if !r.contains_closed(&x, 1e-9 * scale) {
                    return Ok(RegionOutcome::None);
                }
                let ev = general_eigenvalues(&r.jacobian)?;
                Ok(RegionOutcome::Point(Equilibrium {
                    point: x,
                    region: r.segment_choice.clone(),
                    stability: stability_of(&ev),
                    eigenvalues: ev,
                }))
            }
            AffineSolution::Singular => Ok(if singular_consistent(&r.jacobian, &rhs) {
                RegionOutcome::Continuum(r.segment_choice.clone())
            } else {
                RegionOutcome::None
            }),
        }
    });
    let mut out = EquilibriumSet { points: Vec::new(), continuum_regions: Vec::new() };
    for o in outcomes {
        match o? {
            RegionOutcome::None => {}
            RegionOutcome::Continuum(c) => out.continuum_regions.push(c),
            RegionOutcome::Point(e) => {
                // boundary points are found from both adjacent regions
                let scale = e.point.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                let dup = out.points.iter().any(|p| {
                    p.point.iter().zip(&e.point).all(|(a, b)| (a - b).abs() <= 1e-9 * scale)
                });
                if !dup {
                    out.points.push(e);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttractorKind {
    Equilibrium,
    LimitCycle,
    BoundedUnclassified,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttractorReport {
    pub kind: AttractorKind,
    pub point: Option<Vec<f64>>,
    pub period: Option<f64>,
    /// Largest normalized distance at the detected returns.
    pub recurrence_distance: Option<f64>,
    pub recurrences: usize,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Distance from `p` to the segment `[a, b]` and the closest parameter.
fn segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut ab2 = 0.0;
    let mut apab = 0.0;
    for i in 0..p.len() {
        let d = b[i] - a[i];
        ab2 += d * d;
        apab += (p[i] - a[i]) * d;
    }
    let s = if ab2 > 0.0 { (apab / ab2).clamp(0.0, 1.0) } else { 0.0 };
    let dist = (0..p.len())
        .map(|i| {
            let q = a[i] + s * (b[i] - a[i]);
            (p[i] - q) * (p[i] - q)
        })
        .sum::<f64>()
        .sqrt();
    (dist, s)
}

/// Classifies the post-transient part of a trajectory.
///
/// States are normalized by their post-transient range. An equilibrium is a
/// terminal window narrower than `tol` (relative to the state magnitude). A
/// limit cycle needs at least three returns within `tol` of the first
/// post-transient state with periods agreeing to 5%.
pub fn detect_attractor(tr: &Trajectory, transient_fraction: f64, tol: f64) -> Result<AttractorReport> {
    if !(0.0..1.0).contains(&transient_fraction) {
        return Err(Error::InvalidParameter(format!(
            "transient fraction {transient_fraction} must lie in [0, 1)"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")));
    }
    let len = tr.len();
    let start = (len as f64 * transient_fraction).floor() as usize;
    if len < start + 10 {
        return Err(Error::Trajectory(format!(
            "{} samples after the transient, need at least 10",
            len.saturating_sub(start)
        )));
    }
    let n = tr.n;
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for k in start..len {
        for (j, &v) in tr.state(k).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let mut report = AttractorReport {
        kind: AttractorKind::BoundedUnclassified,
        point: None,
        period: None,
        recurrence_distance: None,
        recurrences: 0,
        min: lo.clone(),
        max: hi.clone(),
    };
    if tr.diverged {
        report.kind = AttractorKind::Unbounded;
        return Ok(report);
    }

    let post = len - start;
    let window = (post / 10).max(10).min(post);
    let mut diam = 0.0f64;
    let mut mag = 1.0f64;
    for j in 0..n {
        let (mut a, mut b) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in len - window..len {
            let v = tr.state(k)[j];
            a = a.min(v);
            b = b.max(v);
            mag = mag.max(v.abs());
        }
        diam = diam.max(b - a);
    }
    if diam < tol * mag {
        report.kind = AttractorKind::Equilibrium;
        report.point = Some(tr.state(len - 1).to_vec());
        return Ok(report);
    }

    let range: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| b - a).collect();
    let rmax = range.iter().fold(0.0f64, |a, b| a.max(*b));
    let norm = |x: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|j| if range[j] > 1e-12 * rmax { (x[j] - lo[j]) / range[j] } else { 0.0 })
            .collect()
    };
    let reference = norm(tr.state(start));
    let away = (10.0 * tol).max(0.1);
    let mut left = false;
    let mut returns: Vec<(f64, f64)> = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    let mut prev = reference.clone();
    for k in start..len - 1 {
        let next = norm(tr.state(k + 1));
        let (d, s) = segment_distance(&reference, &prev, &next);
        if d > away {
            left = true;
        }
        if left {
            if d < tol {
                let t = tr.times[k] + s * (tr.times[k + 1] - tr.times[k]);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, t));
                }
            } else if let Some(b) = best.take() {
                returns.push(b);
                left = d > away;
            }
        }
        prev = next;
    }
    if let Some(b) = best {
        returns.push(b);
    }

    report.recurrences = returns.len();
    if returns.len() >= 3 {
        let t0 = tr.times[start];
        let mut last = t0;
        let periods: Vec<f64> = returns
            .iter()
            .map(|&(_, t)| {
                let p = t - last;
                last = t;
                p
            })
            .collect();
        let mean = periods.iter().sum::<f64>() / periods.len() as f64;
        let spread = periods.iter().fold(0.0f64, |a, p| a.max((p - mean).abs()));
        if mean > 0.0 && spread <= 0.05 * mean + 2.0 * tr.h {
            report.kind = AttractorKind::LimitCycle;
            report.period = Some(mean);
            report.recurrence_distance = Some(returns.iter().fold(0.0f64, |a, r| a.max(r.0)));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditReport {
    /// `max(LHS − ½σ)` over the audited samples.
    pub worst_violation: f64,
    pub worst_sample: usize,
    pub samples: usize,
}

impl AuditReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst_violation <= tol
    }
}

/// Evaluates `2ΔxᵀPΔẋ + Δxᵀ(2λP+εI)Δx − ½σ(Δi, Δv)` at every interior sample
/// of a trajectory pair, with `Δẋ` from the model's right-hand side.
pub fn dissipation_audit(
    m: &PwlStateSpace,
    storage: &SignedStorage,
    supply: &SignedSupplyRate,
    tr1: &Trajectory,
    tr2: &Trajectory,
) -> Result<AuditReport> {
    if tr1.len() != tr2.len() || tr1.h != tr2.h || tr1.n != m.n() || tr2.n != m.n() {
        return Err(Error::Trajectory("trajectories do not share the model and grid".into()));
    }
    if tr1.times.iter().zip(&tr2.times).any(|(a, b)| a != b) {
        return Err(Error::Trajectory("sample times differ".into()));
    }
    if supply.port_dim() != m.m() || storage.dim() != m.n() {
        return Err(Error::Dimension("supply or storage does not match the model".into()));
    }
    if tr1.len() < 3 {
        return Err(Error::Trajectory("need at least three samples".into()));
    }
    let n = m.n();
    let mm = m.m();
    let mut f1 = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let mut ddx = vec![0.0; n];
    let mut di = vec![0.0; mm];
    let mut dv = vec![0.0; mm];
    let mut worst = f64::NEG_INFINITY;
    let mut worst_k = 1;
    for k in 1..tr1.len() - 1 {
        let (x1, x2) = (tr1.state(k), tr2.state(k));
        m.rhs_into(x1, tr1.input(k), &mut f1);
        m.rhs_into(x2, tr2.input(k), &mut f2);
        for i in 0..n {
            dx[i] = x1[i] - x2[i];
            ddx[i] = f1[i] - f2[i];
        }
        let (y1, y2) = (tr1.output(k), tr2.output(k));
        for j in 0..mm {
            di[j] = y1[2 * j] - y2[2 * j];
            dv[j] = y1[2 * j + 1] - y2[2 * j + 1];
        }
        let v = storage.dissipation_lhs(&dx, &ddx) - 0.5 * supply_eval(supply, &di, &dv)?;
        if v > worst {
            worst = v;
            worst_k = k;
        }
    }
    Ok(AuditReport { worst_violation: worst, worst_sample: worst_k, samples: tr1.len() - 2 })
}
