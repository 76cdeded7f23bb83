//! Port interconnections: the neutral pattern and static T / Π bridges.
//!
//! Composition only uses the natural port of each side (a current-driven
//! port for Π, voltage-driven for T, cc on `a` and vc on `b` for the neutral
//! pattern). Used port outputs must not depend on the inputs directly, which
//! rules out algebraic loops.
//!
//! Composed port order: the ports created by the interconnection first, then
//! the untouched ports of `a`, then those of `b`.

use serde::{Deserialize, Serialize};

use crate::circuit::{ModelParts, Port, PortRole, PwlStateSpace};
use crate::dominance::{Epsilon, SignedStorage};
use crate::elements::{CurveKind, PwlCurve, SignedSupplyRate};
use crate::error::{Error, Result};
use crate::matkernel::{max_eigenvalue, Mat, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    T,
    Pi,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingBridge {
    pub topology: Topology,
    pub r_a: f64,
    pub r_b: f64,
    pub r_c: Option<f64>,
    pub alpha: Option<f64>,
    /// Replaces the controlled-source branch. For Π it is a voltage-controlled
    /// curve of `ṽ_a − ṽ_b`; for T a current-controlled curve of `ĩ_a + ĩ_b`.
    pub active_curve: Option<PwlCurve>,
}

impl CouplingBridge {
    pub fn linear(topology: Topology, r_a: f64, r_b: f64, r_c: f64, alpha: f64) -> Result<Self> {
        for (n, v) in [("R_a", r_a), ("R_b", r_b), ("R_c", r_c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{n} must be positive, got {v}")));
            }
        }
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must exceed 1, got {alpha}")));
        }
        Ok(CouplingBridge { topology, r_a, r_b, r_c: Some(r_c), alpha: Some(alpha), active_curve: None })
    }

    pub fn active(topology: Topology, r_a: f64, r_b: f64, curve: PwlCurve) -> Result<Self> {
        for (n, v) in [("R_a", r_a), ("R_b", r_b)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{n} must be positive, got {v}")));
            }
        }
        let want = match topology {
            Topology::Pi => CurveKind::VoltageControlled,
            Topology::T => CurveKind::CurrentControlled,
        };
        if curve.kind() != want {
            return Err(Error::InvalidParameter(format!("{topology:?} bridge needs a {want:?} active curve")));
        }
        if curve.slope_bounds().g_neg <= 0.0 {
            return Err(Error::InvalidParameter("active curve has no negative-slope segment".into()));
        }
        Ok(CouplingBridge { topology, r_a, r_b, r_c: None, alpha: None, active_curve: Some(curve) })
    }

    /// `(α−1)/R_c` for Π, `R_c/(α−1)` for T; the negative-slope magnitude of
    /// the active curve when present.
    pub fn gain(&self) -> f64 {
        if let Some(c) = &self.active_curve {
            return c.slope_bounds().g_neg;
        }
        let (rc, alpha) = (self.r_c.unwrap_or(1.0), self.alpha.unwrap_or(2.0));
        match self.topology {
            Topology::Pi => (alpha - 1.0) / rc,
            Topology::T => rc / (alpha - 1.0),
        }
    }

    /// Verdicts for active bridges hold only inside the negative-slope range.
    pub fn is_local(&self) -> bool {
        self.active_curve.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BridgeDissipation {
    pub qt_a: f64,
    pub rt_a: f64,
    pub qt_b: f64,
    pub rt_b: f64,
    /// Sides were exchanged so that the `−1` signature plays the role of `a`.
    pub swapped: bool,
}

impl BridgeDissipation {
    pub fn is_dissipative(&self) -> bool {
        self.qt_a <= 0.0 && self.rt_a <= 0.0 && self.qt_b <= 0.0 && self.rt_b <= 0.0
    }

    pub fn is_neutral(&self) -> bool {
        self.qt_a == 0.0 && self.rt_a == 0.0 && self.qt_b == 0.0 && self.rt_b == 0.0
    }
}

pub fn bridge_dissipation(br: &CouplingBridge, sig_a: i8, sig_b: i8) -> Result<BridgeDissipation> {
    check_sig(sig_a)?;
    check_sig(sig_b)?;
    if sig_a == sig_b {
        return Err(Error::UnsupportedBridge(sig_a));
    }
    let swapped = sig_a == 1;
    // side "a" of the formulas is the one carrying signature −1
    let (ra, rb) = if swapped { (br.r_b, br.r_a) } else { (br.r_a, br.r_b) };
    let k = br.gain();
    let (qa, rta, qb, rtb) = match br.topology {
        Topology::T => (ra - k, 0.0, k - rb, 0.0),
        Topology::Pi => (0.0, 1.0 / ra - k, 0.0, k - 1.0 / rb),
    };
    let (qt_a, rt_a, qt_b, rt_b) = if swapped { (qb, rtb, qa, rta) } else { (qa, rta, qb, rtb) };
    Ok(BridgeDissipation { qt_a, rt_a, qt_b, rt_b, swapped })
}

fn check_sig(s: i8) -> Result<()> {
    if s == 1 || s == -1 {
        Ok(())
    } else {
        Err(Error::SignatureMismatch(format!("signature {s} is not ±1")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingVerdict {
    Neutral,
    Dissipative,
    NotDissipative,
}

pub fn check_coupling(br: &CouplingBridge, sig_a: i8, sig_b: i8) -> Result<CouplingVerdict> {
    let d = bridge_dissipation(br, sig_a, sig_b)?;
    Ok(if d.is_neutral() {
        CouplingVerdict::Neutral
    } else if d.is_dissipative() {
        CouplingVerdict::Dissipative
    } else {
        CouplingVerdict::NotDissipative
    })
}

/// Port increments of one interconnection sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PortIncrements {
    pub di_a: Vec<f64>,
    pub dv_a: Vec<f64>,
    pub di_b: Vec<f64>,
    pub dv_b: Vec<f64>,
    pub di: Vec<f64>,
    pub dv: Vec<f64>,
}

/// `Δi_aᵀ𝓘_aΔv_a + Δi_bᵀ𝓘_bΔv_b − Δiᵀ𝓘Δv`.
pub fn neutrality_residual(s: &PortIncrements, sig_a: &[i8], sig_b: &[i8], sig: &[i8]) -> Result<f64> {
    fn term(di: &[f64], sig: &[i8], dv: &[f64]) -> Result<f64> {
        if di.len() != sig.len() || dv.len() != sig.len() {
            return Err(Error::Dimension(format!(
                "{} currents, {} voltages for {} signatures",
                di.len(),
                dv.len(),
                sig.len()
            )));
        }
        Ok(di.iter().zip(sig).zip(dv).map(|((i, s), v)| i * *s as f64 * v).sum())
    }
    Ok(term(&s.di_a, sig_a, &s.dv_a)? + term(&s.di_b, sig_b, &s.dv_b)? - term(&s.di, sig, &s.dv)?)
}

/// Composed model, storage and supply.
#[derive(Debug, Clone)]
pub struct Composition {
    pub model: PwlStateSpace,
    pub storage: SignedStorage,
    pub supply: SignedSupplyRate,
}

fn first_port(m: &PwlStateSpace, role: PortRole, who: &str) -> Result<usize> {
    m.ports()
        .iter()
        .position(|p| p.role == role)
        .ok_or_else(|| Error::Unsupported(format!("{who} has no {role:?} port")))
}

fn check_no_feedthrough(m: &PwlStateSpace, who: &str) -> Result<()> {
    for (j, p) in m.ports().iter().enumerate() {
        let out = m.d_y().row(p.output_row(j));
        let inp = m.d_y().row(p.input_row(j));
        let passthrough = inp.iter().enumerate().all(|(c, &v)| v == if c == j { 1.0 } else { 0.0 });
        if out.iter().any(|&v| v != 0.0) || !passthrough {
            return Err(Error::IllPosed(format!("{who} port {} has direct feedthrough", p.label)));
        }
    }
    Ok(())
}

fn check_parts(
    m: &PwlStateSpace,
    s: &SignedStorage,
    sup: &SignedSupplyRate,
    who: &str,
) -> Result<()> {
    if s.dim() != m.n() {
        return Err(Error::Dimension(format!("{who}: storage is {0}x{0}, model has {1} states", s.dim(), m.n())));
    }
    if sup.port_dim() != m.m() {
        return Err(Error::Dimension(format!("{who}: supply has {} ports, model has {}", sup.port_dim(), m.m())));
    }
    check_no_feedthrough(m, who)
}

fn combined_storage(sa: &SignedStorage, sb: &SignedStorage) -> Result<SignedStorage> {
    let (la, lb) = (sa.rate(), sb.rate());
    if (la - lb).abs() > 1e-12 * la.abs().max(lb.abs()) {
        return Err(Error::RateMismatch(la, lb));
    }
    let p = Mat::block_diag(sa.p().as_mat(), sb.p().as_mat());
    SignedStorage::new(SymMatrix::new(p)?, la, Epsilon::Value(sa.epsilon().min(sb.epsilon())))
}

/// Wiring of two subsystems into one model: every subsystem input is a
/// linear function of the composed state, the new inputs and extra curves.
struct Wiring<'m> {
    a: &'m PwlStateSpace,
    b: &'m PwlStateSpace,
    kx: Mat,
    kw: Mat,
    extra: Vec<(PwlCurve, Vec<f64>, Vec<f64>)>,
    ports: Vec<Port>,
    outputs: Vec<Vec<f64>>,
}

impl<'m> Wiring<'m> {
    fn new(a: &'m PwlStateSpace, b: &'m PwlStateSpace, m_new: usize) -> Self {
        let n = a.n() + b.n();
        let mu = a.m() + b.m();
        Wiring {
            a,
            b,
            kx: Mat::zeros(mu, n),
            kw: Mat::zeros(mu, m_new),
            extra: Vec::new(),
            ports: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Index of input `j` of side `a` (false) or `b` (true) in the stacked input.
    fn input(&self, side_b: bool, j: usize) -> usize {
        if side_b {
            self.a.m() + j
        } else {
            j
        }
    }

    /// Composed-state row of the output variable of a port.
    fn output_of(&self, side_b: bool, j: usize) -> Vec<f64> {
        let (m, off) = if side_b { (self.b, self.a.n()) } else { (self.a, 0) };
        let mut row = vec![0.0; self.a.n() + self.b.n()];
        let src = m.c_y().row(m.ports()[j].output_row(j));
        row[off..off + m.n()].copy_from_slice(src);
        row
    }

    fn add_x(&mut self, input: usize, row: &[f64], scale: f64) {
        for (c, v) in row.iter().enumerate() {
            self.kx[(input, c)] += scale * v;
        }
    }

    fn push_port(&mut self, port: Port, output: Vec<f64>) -> usize {
        self.ports.push(port);
        self.outputs.push(output);
        self.ports.len() - 1
    }

    /// Passes every port of one side except `used` through unchanged.
    fn pass_leftovers(&mut self, side_b: bool, used: usize, tag: &str) -> Vec<usize> {
        let m = if side_b { self.b } else { self.a };
        let mut kept = Vec::new();
        for (j, p) in m.ports().iter().enumerate() {
            if j == used {
                continue;
            }
            let out = self.output_of(side_b, j);
            let w = self.push_port(Port { role: p.role, label: format!("{tag}.{}", p.label) }, out);
            let inp = self.input(side_b, j);
            self.kw[(inp, w)] = 1.0;
            kept.push(j);
        }
        kept
    }

    fn finish(self) -> Result<PwlStateSpace> {
        let (a, b) = (self.a, self.b);
        let n = a.n() + b.n();
        let mu = a.m() + b.m();
        let mw = self.ports.len();
        debug_assert_eq!(self.kw.cols(), mw);

        let a_blk = Mat::block_diag(a.a(), b.a());
        let bu_blk = Mat::block_diag(a.b_u(), b.b_u());
        let a_new = a_blk.add(&bu_blk.matmul(&self.kx)?)?;
        let b_u = bu_blk.matmul(&self.kw)?;

        let k_old = a.curves().len() + b.curves().len();
        let k_new = k_old + self.extra.len();
        let mut b_w = Mat::zeros(n, k_new);
        b_w.set_block(0, 0, &Mat::block_diag(a.b_w(), b.b_w()));
        let mut c_z = Mat::zeros(k_new, n);
        c_z.set_block(0, 0, &Mat::block_diag(a.c_z(), b.c_z()));
        let mut curves: Vec<PwlCurve> = a.curves().iter().chain(b.curves()).cloned().collect();
        for (e, (curve, cz, inj)) in self.extra.into_iter().enumerate() {
            debug_assert_eq!(inj.len(), mu);
            let col = bu_blk.mul_vec(&inj)?;
            for r in 0..n {
                b_w[(r, k_old + e)] = col[r];
            }
            c_z.row_mut(k_old + e).copy_from_slice(&cz);
            curves.push(curve);
        }

        let mut c_y = Mat::zeros(2 * mw, n);
        let mut d_y = Mat::zeros(2 * mw, mw);
        for (j, (p, out)) in self.ports.iter().zip(&self.outputs).enumerate() {
            c_y.row_mut(p.output_row(j)).copy_from_slice(out);
            d_y[(p.input_row(j), j)] = 1.0;
        }

        PwlStateSpace::new(ModelParts {
            state_labels: a.state_labels().iter().chain(b.state_labels()).cloned().collect(),
            a: a_new,
            offset: a.offset().iter().chain(b.offset()).copied().collect(),
            b_w,
            b_u,
            c_z,
            c_y,
            d_y,
            curves,
            ports: self.ports,
            storage_weights: a.storage_weights().iter().chain(b.storage_weights()).copied().collect(),
        })
    }
}

/// Neutral interconnection: `i_a = −i_b + i_cc`, `v_b = v_a − v_vc` between
/// the first current-driven port of `a` and the first voltage-driven port of
/// `b`. The new ports are `cc` (output `v_a`) and `vc` (output `−i_b`).
pub fn neutral_interconnect(
    ma: &PwlStateSpace,
    sa: &SignedStorage,
    supa: &SignedSupplyRate,
    mb: &PwlStateSpace,
    sb: &SignedStorage,
    supb: &SignedSupplyRate,
) -> Result<Composition> {
    check_parts(ma, sa, supa, "a")?;
    check_parts(mb, sb, supb, "b")?;
    let pa = first_port(ma, PortRole::CurrentDriven, "a")?;
    let pb = first_port(mb, PortRole::VoltageDriven, "b")?;
    if supa.signature[pa] != supb.signature[pb] {
        return Err(Error::SignatureMismatch(format!(
            "neutral interconnection needs equal signatures, got {} and {}",
            supa.signature[pa], supb.signature[pb]
        )));
    }
    let storage = combined_storage(sa, sb)?;

    let mw = ma.m() + mb.m();
    let mut w = Wiring::new(ma, mb, mw);
    let v_a = w.output_of(false, pa);
    let i_b = w.output_of(true, pb);
    let cc = w.push_port(Port::cc("cc"), v_a.clone());
    let vc = w.push_port(Port::vc("vc"), i_b.iter().map(|v| -v).collect());
    let (ua, ub) = (w.input(false, pa), w.input(true, pb));
    w.add_x(ua, &i_b, -1.0);
    w.kw[(ua, cc)] = 1.0;
    w.add_x(ub, &v_a, 1.0);
    w.kw[(ub, vc)] = -1.0;
    let left_a = w.pass_leftovers(false, pa, "a");
    let left_b = w.pass_leftovers(true, pb, "b");
    let model = w.finish()?;

    // old port variables as linear functions of the new ones
    let m_new = model.m();
    let (ma_n, mb_n) = (ma.m(), mb.m());
    let mut t = Mat::zeros(2 * (ma_n + mb_n), 2 * m_new);
    let ia = |j: usize| j;
    let va = |j: usize| ma_n + j;
    let ib = |j: usize| 2 * ma_n + j;
    let vb = |j: usize| 2 * ma_n + mb_n + j;
    let inew = |j: usize| j;
    let vnew = |j: usize| m_new + j;
    t[(ia(pa), inew(cc))] = 1.0;
    t[(ia(pa), inew(vc))] = 1.0;
    t[(va(pa), vnew(cc))] = 1.0;
    t[(ib(pb), inew(vc))] = -1.0;
    t[(vb(pb), vnew(cc))] = 1.0;
    t[(vb(pb), vnew(vc))] = -1.0;
    let mut next = 2;
    for &j in &left_a {
        t[(ia(j), inew(next))] = 1.0;
        t[(va(j), vnew(next))] = 1.0;
        next += 1;
    }
    for &j in &left_b {
        t[(ib(j), inew(next))] = 1.0;
        t[(vb(j), vnew(next))] = 1.0;
        next += 1;
    }
    let s_blk = Mat::block_diag(&supa.matrix(), &supb.matrix());
    let supply = supply_from_matrix(&t.transpose().matmul(&s_blk)?.matmul(&t)?, m_new)?;
    Ok(Composition { model, storage, supply })
}

/// Splits a `2m×2m` supply matrix into `(Q, 𝓘, R)`; the cross block must be
/// a ±1 diagonal.
pub fn supply_from_matrix(s: &Mat, m: usize) -> Result<SignedSupplyRate> {
    let scale = s.max_abs().max(1.0);
    let mut sig = Vec::with_capacity(m);
    for r in 0..m {
        for c in 0..m {
            let v = s[(r, m + c)];
            if r == c {
                if (v.abs() - 1.0).abs() > 1e-12 * scale {
                    return Err(Error::SignatureMismatch(format!("cross entry {v} on port {r}")));
                }
                sig.push(if v > 0.0 { 1 } else { -1 });
            } else if v.abs() > 1e-12 * scale {
                return Err(Error::SignatureMismatch(format!("cross coupling between ports {r} and {c}")));
            }
        }
    }
    let q = SymMatrix::new(s.block(0, 0, m, m))?;
    let r = SymMatrix::new(s.block(m, m, m, m))?;
    SignedSupplyRate::new(q, sig, r)
}

/// Interconnection through a T or Π bridge. Π joins the first current-driven
/// ports, T the first voltage-driven ports; the new ports `a.<label>` and
/// `b.<label>` keep the roles of the joined ones.
pub fn coupled_interconnect(
    ma: &PwlStateSpace,
    sa: &SignedStorage,
    supa: &SignedSupplyRate,
    mb: &PwlStateSpace,
    sb: &SignedStorage,
    supb: &SignedSupplyRate,
    br: &CouplingBridge,
) -> Result<Composition> {
    check_parts(ma, sa, supa, "a")?;
    check_parts(mb, sb, supb, "b")?;
    let role = match br.topology {
        Topology::Pi => PortRole::CurrentDriven,
        Topology::T => PortRole::VoltageDriven,
    };
    let pa = first_port(ma, role, "a")?;
    let pb = first_port(mb, role, "b")?;
    let (sig_a, sig_b) = (supa.signature[pa], supb.signature[pb]);
    let diss = bridge_dissipation(br, sig_a, sig_b)?;
    if !diss.is_dissipative() {
        return Err(Error::NotDissipative);
    }
    let storage = combined_storage(sa, sb)?;

    let mw = ma.m() + mb.m();
    let mut w = Wiring::new(ma, mb, mw);
    let ya = w.output_of(false, pa);
    let yb = w.output_of(true, pb);
    let pa_port = &ma.ports()[pa];
    let pb_port = &mb.ports()[pb];
    let na = w.push_port(Port { role, label: format!("a.{}", pa_port.label) }, ya.clone());
    let nb = w.push_port(Port { role, label: format!("b.{}", pb_port.label) }, yb.clone());
    let (ua, ub) = (w.input(false, pa), w.input(true, pb));
    w.kw[(ua, na)] = 1.0;
    w.kw[(ub, nb)] = 1.0;
    let mu = ma.m() + mb.m();

    match br.topology {
        Topology::Pi => {
            // u_k = −ĩ_k + i_k,cc with ĩ computed from the port voltages ṽ = y
            let z: Vec<f64> = ya.iter().zip(&yb).map(|(a, b)| a - b).collect();
            w.add_x(ua, &ya, -1.0 / br.r_a);
            w.add_x(ub, &yb, -1.0 / br.r_b);
            match &br.active_curve {
                None => {
                    let k = br.gain();
                    w.add_x(ua, &z, k);
                    w.add_x(ub, &z, -k);
                }
                Some(g) => {
                    let mut inj = vec![0.0; mu];
                    inj[ua] = -1.0;
                    inj[ub] = 1.0;
                    w.extra.push((g.clone(), z, inj));
                }
            }
        }
        Topology::T => {
            // ĩ_k = −i_k where i_k = y; u_k = ṽ_k + v_k,vc
            let s: Vec<f64> = ya.iter().zip(&yb).map(|(a, b)| -(a + b)).collect();
            w.add_x(ua, &ya, -br.r_a);
            w.add_x(ub, &yb, -br.r_b);
            match &br.active_curve {
                None => {
                    let rho = br.gain();
                    w.add_x(ua, &s, -rho);
                    w.add_x(ub, &s, -rho);
                }
                Some(r) => {
                    let mut inj = vec![0.0; mu];
                    inj[ua] = 1.0;
                    inj[ub] = 1.0;
                    w.extra.push((r.clone(), s, inj));
                }
            }
        }
    }
    let left_a = w.pass_leftovers(false, pa, "a");
    let left_b = w.pass_leftovers(true, pb, "b");
    let model = w.finish()?;

    let supply = bridged_supply(supa, pa, &left_a, supb, pb, &left_b, br.topology, &diss)?;
    Ok(Composition { model, storage, supply })
}

#[allow(clippy::too_many_arguments)]
fn bridged_supply(
    supa: &SignedSupplyRate,
    pa: usize,
    left_a: &[usize],
    supb: &SignedSupplyRate,
    pb: usize,
    left_b: &[usize],
    topo: Topology,
    d: &BridgeDissipation,
) -> Result<SignedSupplyRate> {
    for (sup, p, who) in [(supa, pa, "a"), (supb, pb, "b")] {
        let m = sup.port_dim();
        for c in 0..m {
            if c != p && (sup.q[(p, c)] != 0.0 || sup.r[(p, c)] != 0.0) {
                return Err(Error::Unsupported(format!(
                    "supply of {who} couples the bridge port with port {c}"
                )));
            }
        }
        let blocked = match topo {
            Topology::Pi => sup.q[(p, p)],
            Topology::T => sup.r[(p, p)],
        };
        if blocked != 0.0 {
            return Err(Error::Unsupported(format!(
                "supply of {who} has a {} term on the bridge port",
                if topo == Topology::Pi { "current" } else { "voltage" }
            )));
        }
    }
    let m = 2 + left_a.len() + left_b.len();
    let mut q = Mat::zeros(m, m);
    let mut r = Mat::zeros(m, m);
    let mut sig = vec![supa.signature[pa], supb.signature[pb]];
    q[(0, 0)] = supa.q[(pa, pa)] + d.qt_a;
    r[(0, 0)] = supa.r[(pa, pa)] + d.rt_a;
    q[(1, 1)] = supb.q[(pb, pb)] + d.qt_b;
    r[(1, 1)] = supb.r[(pb, pb)] + d.rt_b;
    let mut base = 2;
    for (sup, left) in [(supa, left_a), (supb, left_b)] {
        for (x, &jx) in left.iter().enumerate() {
            sig.push(sup.signature[jx]);
            for (y, &jy) in left.iter().enumerate() {
                q[(base + x, base + y)] = sup.q[(jx, jy)];
                r[(base + x, base + y)] = sup.r[(jx, jy)];
            }
        }
        base += left.len();
    }
    SignedSupplyRate::new(SymMatrix::new(q)?, sig, SymMatrix::new(r)?)
}

/// Closed-loop condition `Q̂ ⪯ 0 ∧ R̂ ⪯ 0` on a composed supply.
pub fn closed_loop_condition(sup: &SignedSupplyRate) -> Result<bool> {
    let ok = |s: &SymMatrix| -> Result<bool> { Ok(max_eigenvalue(s)? <= 1e-12 * s.norm().max(1.0)) };
    Ok(ok(&sup.q)? && ok(&sup.r)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{
        capacitor_supply, inductor, inductor_supply, parallel_rlc, parallel_rlc_supply, rc_ladder,
        rc_ladder_supply, rc_switch, rc_switch_supply, rl_switch, rl_switch_supply, RcLadder,
    };
    use crate::dominance::{canonical_storage, check_dominance, check_signed_passivity};
    use crate::elements::builtin::{g1, g2, r2};
    use crate::exec::Exec;
    use proptest::prelude::*;

    const C0: f64 = 10e-6;
    const L0: f64 = 0.05;

    fn storage(m: &PwlStateSpace, rate: f64) -> SignedStorage {
        let signs = crate::dominance::natural_signs(m);
        canonical_storage(m, &signs).unwrap().with_rate(rate, Epsilon::Value(0.0)).unwrap()
    }

    #[test]
    fn rc_switch_plus_inductor_is_parallel_rlc() {
        let rate = 2e4;
        let a = rc_switch(C0, &g1()).unwrap();
        let b = inductor(L0).unwrap();
        let out = neutral_interconnect(
            &a,
            &storage(&a, rate),
            &rc_switch_supply(C0, &g1(), rate).unwrap(),
            &b,
            &storage(&b, rate),
            &inductor_supply(L0, rate, -1).unwrap(),
        )
        .unwrap();
        let reference = parallel_rlc(C0, L0, &g1()).unwrap();
        assert_eq!(out.model.a(), reference.a());
        assert_eq!(out.model.b_u(), reference.b_u());
        assert_eq!(out.model.b_w(), reference.b_w());
        assert_eq!(out.model.c_y(), reference.c_y());
        assert_eq!(out.model.d_y(), reference.d_y());
        assert_eq!(out.storage.p().as_mat(), &Mat::diag(&[-C0 / 2.0, -L0 / 2.0]));
        assert_eq!(out.supply, parallel_rlc_supply(C0, L0, &g1(), rate).unwrap());
    }

    #[test]
    fn neutral_blocks_follow_formula() {
        let rate = 1e3;
        let a = rc_switch(C0, &g1()).unwrap();
        let b = rl_switch(L0, &r2()).unwrap();
        let (supa, supb) = (rc_switch_supply(C0, &g1(), rate).unwrap(), rl_switch_supply(L0, &r2(), rate).unwrap());
        let out = neutral_interconnect(&a, &storage(&a, rate), &supa, &b, &storage(&b, rate), &supb).unwrap();
        let (qa, qb, ra, rb) = (supa.q[(0, 0)], supb.q[(0, 0)], supa.r[(0, 0)], supb.r[(0, 0)]);
        let q = out.supply.q.as_mat();
        let r = out.supply.r.as_mat();
        assert_eq!(q, &Mat::from_rows(&[[qa, qa], [qa, qa + qb]]));
        assert_eq!(r, &Mat::from_rows(&[[ra + rb, -rb], [-rb, rb]]));
        assert_eq!(out.supply.signature, vec![-1, -1]);
    }

    #[test]
    fn neutral_requires_equal_signatures_and_rates() {
        let a = rc_switch(C0, &g1()).unwrap();
        let b = inductor(L0).unwrap();
        let sa = storage(&a, 1.0);
        let supa = rc_switch_supply(C0, &g1(), 1.0).unwrap();
        let err = neutral_interconnect(&a, &sa, &supa, &b, &storage(&b, 1.0), &inductor_supply(L0, 1.0, 1).unwrap());
        assert!(matches!(err, Err(Error::SignatureMismatch(_))));
        let err = neutral_interconnect(&a, &sa, &supa, &b, &storage(&b, 2.0), &inductor_supply(L0, 2.0, -1).unwrap());
        assert!(matches!(err, Err(Error::RateMismatch(_, _))));
    }

    #[test]
    fn neutral_with_lossless_capacitor_keeps_printed_form() {
        // Q_a = 0 here, so the printed and derived Q̂ coincide
        let rate = 5.0;
        let a = crate::circuit::capacitor(C0).unwrap();
        let b = inductor(L0).unwrap();
        let out = neutral_interconnect(
            &a,
            &storage(&a, rate),
            &capacitor_supply(C0, rate, -1).unwrap(),
            &b,
            &storage(&b, rate),
            &inductor_supply(L0, rate, -1).unwrap(),
        )
        .unwrap();
        let qb = -2.0 * rate * L0;
        assert_eq!(out.supply.q.as_mat(), &Mat::from_rows(&[[0.0, 0.0], [0.0, qb]]));
    }

    #[test]
    fn pi_bridge_example_numbers() {
        let br = CouplingBridge::linear(Topology::Pi, 20.0, 10.0, 1.0, 1.055).unwrap();
        let d = bridge_dissipation(&br, -1, 1).unwrap();
        assert!((d.rt_a + 0.005).abs() < 1e-12);
        assert!((d.rt_b + 0.045).abs() < 1e-12);
        assert_eq!(check_coupling(&br, -1, 1).unwrap(), CouplingVerdict::Dissipative);
        let act = CouplingBridge::active(Topology::Pi, 20.0, 10.0, g2()).unwrap();
        assert!(act.is_local());
        assert!((act.gain() - 0.055).abs() < 1e-15);
        assert_eq!(check_coupling(&act, -1, 1).unwrap(), CouplingVerdict::Dissipative);
    }

    #[test]
    fn t_bridge_cases() {
        let neutral = CouplingBridge::linear(Topology::T, 1.5, 1.5, 1.5, 2.0).unwrap();
        assert_eq!(check_coupling(&neutral, -1, 1).unwrap(), CouplingVerdict::Neutral);
        let bad = CouplingBridge::linear(Topology::T, 2.0, 1.0, 1.5, 2.0).unwrap();
        let d = bridge_dissipation(&bad, -1, 1).unwrap();
        assert_eq!((d.qt_a, d.rt_a, d.qt_b, d.rt_b), (0.5, 0.0, 0.5, 0.0));
        assert_eq!(check_coupling(&bad, -1, 1).unwrap(), CouplingVerdict::NotDissipative);
        assert!(matches!(bridge_dissipation(&bad, 1, 1), Err(Error::UnsupportedBridge(1))));
    }

    #[test]
    fn swapped_sides_relabel() {
        let br = CouplingBridge::linear(Topology::Pi, 10.0, 20.0, 1.0, 1.055).unwrap();
        let d = bridge_dissipation(&br, 1, -1).unwrap();
        assert!(d.swapped);
        // the −1 side is b (R_b = 20)
        assert!((d.rt_b + 0.005).abs() < 1e-12);
        assert!((d.rt_a + 0.045).abs() < 1e-12);
    }

    #[test]
    fn residual_examples() {
        let zero = PortIncrements {
            di_a: vec![0.0],
            dv_a: vec![0.0],
            di_b: vec![0.0],
            dv_b: vec![0.0],
            di: vec![0.0, 0.0],
            dv: vec![0.0, 0.0],
        };
        assert_eq!(neutrality_residual(&zero, &[1], &[1], &[1, 1]).unwrap(), 0.0);
        assert!(neutrality_residual(&zero, &[1], &[1], &[1]).is_err());
    }

    fn oscillator_parts(rate: f64) -> (Composition, SignedStorage, SignedSupplyRate, PwlStateSpace) {
        let a = rc_switch(C0, &g1()).unwrap();
        let b = rl_switch(L0, &r2()).unwrap();
        let sigma_a = neutral_interconnect(
            &a,
            &storage(&a, rate),
            &rc_switch_supply(C0, &g1(), rate).unwrap(),
            &b,
            &storage(&b, rate),
            &rl_switch_supply(L0, &r2(), rate).unwrap(),
        )
        .unwrap();
        let lad = RcLadder::three([1e-7; 3], [1.0; 3], 1.0, 1.0);
        let mb = rc_ladder(&lad).unwrap();
        (sigma_a, storage(&mb, rate), rc_ladder_supply(&lad, rate).unwrap(), mb)
    }

    #[test]
    fn oscillator_assembly() {
        let rate = 1e5;
        let (sa, sb, supb, mb) = oscillator_parts(rate);
        let br = CouplingBridge::active(Topology::Pi, 20.0, 10.0, g2()).unwrap();
        let out = coupled_interconnect(&sa.model, &sa.storage, &sa.supply, &mb, &sb, &supb, &br).unwrap();
        assert_eq!(out.model.n(), 5);
        assert_eq!(out.model.region_count(), 27);
        assert_eq!(out.model.ports().len(), 3);
        assert_eq!(out.supply.signature, vec![-1, 1, -1]);
        assert!(closed_loop_condition(&out.supply).unwrap());
        let closed = out.model.terminate();
        let s = out.storage.with_rate(rate, Epsilon::Auto).unwrap();
        assert_eq!(s.index(), 2);
        let rep = check_dominance(&closed, &s, Exec::Sequential).unwrap();
        assert!(rep.certified(), "{rep:?}");

        // hand-written closed equations at a sample state
        let x = [2.7, 0.05, -0.2, 0.1, 0.03];
        let f = closed.rhs(&x, &[]).unwrap();
        let gz = g2().eval(x[0] - x[2]);
        let ia = x[0] / 20.0 + gz;
        let ib = x[2] / 10.0 - gz;
        let expect = [
            (-g1().eval(x[0]) - x[1] - ia) / C0,
            (-r2().eval(x[1]) + x[0]) / L0,
            (-ib - x[2] - (x[2] - x[3])) / 1e-7,
            (-x[3] - (x[3] - x[2]) - (x[3] - x[4])) / 1e-7,
            (-x[4] - (x[4] - x[3])) / 1e-7,
        ];
        for (a, b) in f.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn linear_pi_matches_active_in_active_range() {
        let rate = 1e5;
        let (sa, sb, supb, mb) = oscillator_parts(rate);
        let lin = CouplingBridge::linear(Topology::Pi, 20.0, 10.0, 1.0, 1.055).unwrap();
        let act = CouplingBridge::active(Topology::Pi, 20.0, 10.0, g2()).unwrap();
        let l = coupled_interconnect(&sa.model, &sa.storage, &sa.supply, &mb, &sb, &supb, &lin).unwrap();
        let a = coupled_interconnect(&sa.model, &sa.storage, &sa.supply, &mb, &sb, &supb, &act).unwrap();
        // g2 passes through the origin on its active segment
        let x = [1.0, 0.0, 0.5, 0.2, 0.1];
        let u = [0.0; 3];
        let fl = l.model.rhs(&x, &u).unwrap();
        let fa = a.model.rhs(&x, &u).unwrap();
        for (p, q) in fl.iter().zip(&fa) {
            assert!((p - q).abs() <= 1e-9 * q.abs().max(1.0));
        }
        assert_eq!(l.supply, a.supply);
    }

    #[test]
    fn t_bridge_composition_runs() {
        let rate = 10.0;
        let a = rl_switch(L0, &r2()).unwrap();
        let b = inductor(0.2).unwrap();
        let sb = canonical_storage(&b, &[1]).unwrap().with_rate(rate, Epsilon::Value(0.0)).unwrap();
        let br = CouplingBridge::linear(Topology::T, 1.0, 3.0, 2.0, 2.0).unwrap();
        let out = coupled_interconnect(
            &a,
            &storage(&a, rate),
            &rl_switch_supply(L0, &r2(), rate).unwrap(),
            &b,
            &sb,
            &inductor_supply(0.2, rate, 1).unwrap(),
            &br,
        )
        .unwrap();
        assert_eq!(out.model.n(), 2);
        assert_eq!(out.model.ports().iter().filter(|p| p.role == PortRole::VoltageDriven).count(), 2);
        let q = out.supply.q.as_mat();
        assert_eq!(q[(0, 0)], 2.0 * (10.0 - rate * L0) + (1.0 - 2.0));
        assert_eq!(q[(1, 1)], 2.0 * rate * 0.2 + (2.0 - 3.0));
        // composed supply certifies the composed model
        let rep = check_signed_passivity(&out.model, &out.storage, &out.supply, Exec::Sequential).unwrap();
        assert!(rep.certified(), "{rep:?}");
    }

    #[test]
    fn not_dissipative_bridge_rejected() {
        let rate = 1e5;
        let (sa, sb, supb, mb) = oscillator_parts(rate);
        let br = CouplingBridge::linear(Topology::Pi, 5.0, 10.0, 1.0, 1.055).unwrap();
        let err = coupled_interconnect(&sa.model, &sa.storage, &sa.supply, &mb, &sb, &supb, &br);
        assert!(matches!(err, Err(Error::NotDissipative)));
    }

    #[test]
    fn feedthrough_is_ill_posed() {
        let a = rc_switch(C0, &g1()).unwrap();
        let mut p = inductor(L0).unwrap().parts();
        p.d_y[(0, 0)] = 0.5;
        let b = PwlStateSpace::new(p).unwrap();
        let err = neutral_interconnect(
            &a,
            &storage(&a, 1.0),
            &rc_switch_supply(C0, &g1(), 1.0).unwrap(),
            &b,
            &storage(&b, 1.0),
            &inductor_supply(L0, 1.0, -1).unwrap(),
        );
        assert!(matches!(err, Err(Error::IllPosed(_))));
    }

    proptest! {
        #[test]
        fn bridge_intervals_exact(ra in 0.01f64..100.0, rb in 0.01f64..100.0, rc in 0.01f64..100.0, alpha in 1.001f64..10.0) {
            let t = CouplingBridge::linear(Topology::T, ra, rb, rc, alpha).unwrap();
            let rho = rc / (alpha - 1.0);
            let d = bridge_dissipation(&t, -1, 1).unwrap();
            prop_assert_eq!(d.is_dissipative(), ra <= rho && rho <= rb);
            let p = CouplingBridge::linear(Topology::Pi, ra, rb, rc, alpha).unwrap();
            let k = (alpha - 1.0) / rc;
            let d = bridge_dissipation(&p, -1, 1).unwrap();
            prop_assert_eq!(d.is_dissipative(), 1.0 / ra <= k && k <= 1.0 / rb);
        }

        #[test]
        fn pi_terminated_residual_nonpositive(ra in 1.0f64..50.0, t in 0.0f64..1.0, u in 0.0f64..1.0, va in -5.0f64..5.0, vb in -5.0f64..5.0) {
            // 1/ra <= k <= 1/rb by construction
            let k = (1.0 / ra) * (1.0 + t);
            let rb = 1.0 / (k * (1.0 + u));
            let ia = -(va / ra - k * (va - vb));
            let ib = -(vb / rb + k * (va - vb));
            let s = PortIncrements { di_a: vec![ia], dv_a: vec![va], di_b: vec![ib], dv_b: vec![vb], di: vec![0.0, 0.0], dv: vec![va, vb] };
            prop_assert!(neutrality_residual(&s, &[-1], &[1], &[-1, 1]).unwrap() <= 1e-12);
        }

        #[test]
        fn termination_commutes_with_neutral(x in prop::array::uniform2(-4.0f64..4.0)) {
            let rate = 1e4;
            let a = rc_switch(C0, &g1()).unwrap();
            let b = rl_switch(L0, &r2()).unwrap();
            let out = neutral_interconnect(
                &a, &storage(&a, rate), &rc_switch_supply(C0, &g1(), rate).unwrap(),
                &b, &storage(&b, rate), &rl_switch_supply(L0, &r2(), rate).unwrap(),
            ).unwrap();
            let f = out.model.terminate().rhs(&x, &[]).unwrap();
            let expect = [(-g1().eval(x[0]) - x[1]) / C0, (x[0] - r2().eval(x[1])) / L0];
            for (p, q) in f.iter().zip(&expect) {
                prop_assert!((p - q).abs() <= 1e-12 * q.abs().max(1.0));
            }
        }
    }
}
