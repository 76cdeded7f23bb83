//! Prototype circuits and their signed supply rates.
//!
//! Supplies are stated for the storage `diag(storage_weights)` at rate `λ`
//! with the half-scaled convention used throughout the crate:
//! `2ΔxᵀPΔẋ + 2λΔxᵀPΔx ≤ ½σ(Δi, Δv)`.

use super::{ModelParts, Port, PwlStateSpace};
use crate::elements::{CurveKind, PwlCurve, SignedSupplyRate};
use crate::error::{Error, Result};
use crate::matkernel::{sym_eigenvalues, Mat, SymMatrix};

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

fn require_kind(c: &PwlCurve, kind: CurveKind, who: &str) -> Result<()> {
    if c.kind() == kind {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{who} needs a {kind:?} curve")))
    }
}

fn rate_ok(rate: f64) -> Result<()> {
    if rate >= 0.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("rate must be finite and nonnegative, got {rate}")))
    }
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Capacitor in parallel with a voltage-controlled resistor, driven by a
/// current source: `C·ẋ = −g(x) + i`.
pub fn rc_switch(c: f64, g: &PwlCurve) -> Result<PwlStateSpace> {
    positive("C", c)?;
    require_kind(g, CurveKind::VoltageControlled, "rc_switch")?;
    PwlStateSpace::new(ModelParts {
        state_labels: labels(&["v_C"]),
        a: Mat::zeros(1, 1),
        offset: vec![0.0],
        b_w: Mat::from_rows(&[[-1.0 / c]]),
        b_u: Mat::from_rows(&[[1.0 / c]]),
        c_z: Mat::identity(1),
        c_y: Mat::from_rows(&[[0.0], [1.0]]),
        d_y: Mat::from_rows(&[[1.0], [0.0]]),
        curves: vec![g.clone()],
        ports: vec![Port::cc("cc")],
        storage_weights: vec![-c / 2.0],
    })
}

/// Inductor in series with a current-controlled resistor, driven by a
/// voltage source: `L·ξ̇ = −r(ξ) + v`.
pub fn rl_switch(l: f64, r: &PwlCurve) -> Result<PwlStateSpace> {
    positive("L", l)?;
    require_kind(r, CurveKind::CurrentControlled, "rl_switch")?;
    PwlStateSpace::new(ModelParts {
        state_labels: labels(&["i_L"]),
        a: Mat::zeros(1, 1),
        offset: vec![0.0],
        b_w: Mat::from_rows(&[[-1.0 / l]]),
        b_u: Mat::from_rows(&[[1.0 / l]]),
        c_z: Mat::identity(1),
        c_y: Mat::from_rows(&[[1.0], [0.0]]),
        d_y: Mat::from_rows(&[[0.0], [1.0]]),
        curves: vec![r.clone()],
        ports: vec![Port::vc("vc")],
        storage_weights: vec![-l / 2.0],
    })
}

/// Lossless capacitor on a current-driven port.
pub fn capacitor(c: f64) -> Result<PwlStateSpace> {
    positive("C", c)?;
    PwlStateSpace::new(ModelParts {
        state_labels: labels(&["v_C"]),
        a: Mat::zeros(1, 1),
        offset: vec![0.0],
        b_w: Mat::zeros(1, 0),
        b_u: Mat::from_rows(&[[1.0 / c]]),
        c_z: Mat::zeros(0, 1),
        c_y: Mat::from_rows(&[[0.0], [1.0]]),
        d_y: Mat::from_rows(&[[1.0], [0.0]]),
        curves: vec![],
        ports: vec![Port::cc("cc")],
        storage_weights: vec![-c / 2.0],
    })
}

/// Lossless inductor on a voltage-driven port.
pub fn inductor(l: f64) -> Result<PwlStateSpace> {
    positive("L", l)?;
    PwlStateSpace::new(ModelParts {
        state_labels: labels(&["i_L"]),
        a: Mat::zeros(1, 1),
        offset: vec![0.0],
        b_w: Mat::zeros(1, 0),
        b_u: Mat::from_rows(&[[1.0 / l]]),
        c_z: Mat::zeros(0, 1),
        c_y: Mat::from_rows(&[[1.0], [0.0]]),
        d_y: Mat::from_rows(&[[0.0], [1.0]]),
        curves: vec![],
        ports: vec![Port::vc("vc")],
        storage_weights: vec![-l / 2.0],
    })
}

/// Parallel RLC oscillator with a voltage-controlled negative resistor.
///
/// States `(x, ξ)`; ports `[cc, vc]`:
/// `C·ẋ = −g(x) − ξ + i_cc`, `L·ξ̇ = x − v_vc`, with `v_cc = x` and
/// `i_vc = −ξ`. Terminated, this is the one-port oscillator.
pub fn parallel_rlc(c: f64, l: f64, g: &PwlCurve) -> Result<PwlStateSpace> {
    positive("C", c)?;
    positive("L", l)?;
    require_kind(g, CurveKind::VoltageControlled, "parallel_rlc")?;
    PwlStateSpace::new(ModelParts {
        state_labels: labels(&["v_C", "i_L"]),
        a: Mat::from_rows(&[[0.0, -1.0 / c], [1.0 / l, 0.0]]),
        offset: vec![0.0; 2],
        b_w: Mat::from_rows(&[[-1.0 / c], [0.0]]),
        b_u: Mat::from_rows(&[[1.0 / c, 0.0], [0.0, -1.0 / l]]),
        c_z: Mat::from_rows(&[[1.0, 0.0]]),
        c_y: Mat::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 0.0]]),
        d_y: Mat::from_rows(&[[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 1.0]]),
        curves: vec![g.clone()],
        ports: vec![Port::cc("cc"), Port::vc("vc")],
        storage_weights: vec![-c / 2.0, -l / 2.0],
    })
}

/// Series RLC oscillator with a current-controlled negative resistor.
///
/// States `(ξ, x)`; ports `[cc, vc]`:
/// `L·ξ̇ = −r(ξ) − x + v_vc`, `C·ẋ = ξ + i_cc`, with `i_vc = ξ` and `v_cc = x`.
pub fn series_rlc(c: f64, l: f64, r: &PwlCurve) -> Result<PwlStateSpace> {
    positive("C", c)?;
    positive("L", l)?;
    require_kind(r, CurveKind::CurrentControlled, "series_rlc")?;
    PwlStateSpace::new(ModelParts {
        state_labels: labels(&["i_L", "v_C"]),
        a: Mat::from_rows(&[[0.0, -1.0 / l], [1.0 / c, 0.0]]),
        offset: vec![0.0; 2],
        b_w: Mat::from_rows(&[[-1.0 / l], [0.0]]),
        b_u: Mat::from_rows(&[[0.0, 1.0 / l], [1.0 / c, 0.0]]),
        c_z: Mat::from_rows(&[[1.0, 0.0]]),
        c_y: Mat::from_rows(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 0.0]]),
        d_y: Mat::from_rows(&[[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 1.0]]),
        curves: vec![r.clone()],
        ports: vec![Port::cc("cc"), Port::vc("vc")],
        storage_weights: vec![-l / 2.0, -c / 2.0],
    })
}

/// Grounded RC ladder. Node `k` has `caps[k]` and `shunts[k]` to ground,
/// `series[k]` joins nodes `k` and `k+1`; the current-driven port is at the
/// first node.
#[derive(Debug, Clone, PartialEq)]
pub struct RcLadder {
    pub caps: Vec<f64>,
    pub shunts: Vec<f64>,
    pub series: Vec<f64>,
}

impl RcLadder {
    pub fn three(c: [f64; 3], r: [f64; 3], r12: f64, r23: f64) -> Self {
        RcLadder { caps: c.to_vec(), shunts: r.to_vec(), series: vec![r12, r23] }
    }

    fn validate(&self) -> Result<()> {
        let n = self.caps.len();
        if n == 0 || self.shunts.len() != n || self.series.len() + 1 != n {
            return Err(Error::Dimension(format!(
                "ladder with {} caps, {} shunts and {} series resistors",
                n,
                self.shunts.len(),
                self.series.len()
            )));
        }
        for (k, &c) in self.caps.iter().enumerate() {
            positive(&format!("C{}", k + 1), c)?;
        }
        for (k, &r) in self.shunts.iter().enumerate() {
            positive(&format!("R{}", k + 1), r)?;
        }
        for (k, &r) in self.series.iter().enumerate() {
            positive(&format!("R{}{}", k + 1, k + 2), r)?;
        }
        Ok(())
    }

    /// Nodal conductance matrix.
    pub fn conductance(&self) -> Mat {
        let n = self.caps.len();
        let mut g = Mat::diag(&self.shunts.iter().map(|r| 1.0 / r).collect::<Vec<_>>());
        for (k, &r) in self.series.iter().enumerate() {
            let y = 1.0 / r;
            g[(k, k)] += y;
            g[(k + 1, k + 1)] += y;
            g[(k, k + 1)] -= y;
            g[(k + 1, k)] -= y;
        }
        debug_assert_eq!(g.rows(), n);
        g
    }

    /// Slowest shunt leg rate `min 1/(R_k C_k)`.
    pub fn rate_bound(&self) -> f64 {
        self.caps
            .iter()
            .zip(&self.shunts)
            .map(|(c, r)| 1.0 / (r * c))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn rc_ladder(p: &RcLadder) -> Result<PwlStateSpace> {
    p.validate()?;
    let n = p.caps.len();
    let g = p.conductance();
    let mut a = Mat::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            a[(r, c)] = -g[(r, c)] / p.caps[r];
        }
    }
    let mut b_u = Mat::zeros(n, 1);
    b_u[(0, 0)] = 1.0 / p.caps[0];
    let mut c_y = Mat::zeros(2, n);
    c_y[(1, 0)] = 1.0;
    PwlStateSpace::new(ModelParts {
        state_labels: (1..=n).map(|k| format!("v{k}")).collect(),
        a,
        offset: vec![0.0; n],
        b_w: Mat::zeros(n, 0),
        b_u,
        c_z: Mat::zeros(0, n),
        c_y,
        d_y: Mat::from_rows(&[[1.0], [0.0]]),
        curves: vec![],
        ports: vec![Port::cc("cc")],
        storage_weights: p.caps.iter().map(|c| c / 2.0).collect(),
    })
}

/// `𝓘 = −1`, `Q = 0`, `R = 2(G^d − λC)`.
pub fn rc_switch_supply(c: f64, g: &PwlCurve, rate: f64) -> Result<SignedSupplyRate> {
    positive("C", c)?;
    rate_ok(rate)?;
    let gd = g.slope_bounds().g_max.max(0.0);
    SignedSupplyRate::scalar(0.0, -1, 2.0 * (gd - rate * c))
}

/// `𝓘 = −1`, `Q = 2(R^d − λL)`, `R = 0`.
pub fn rl_switch_supply(l: f64, r: &PwlCurve, rate: f64) -> Result<SignedSupplyRate> {
    positive("L", l)?;
    rate_ok(rate)?;
    let rd = r.slope_bounds().g_max.max(0.0);
    SignedSupplyRate::scalar(2.0 * (rd - rate * l), -1, 0.0)
}

/// Supply of a lossless capacitor whose storage carries `sign`.
pub fn capacitor_supply(c: f64, rate: f64, sign: i8) -> Result<SignedSupplyRate> {
    positive("C", c)?;
    rate_ok(rate)?;
    let s = unit_sign(sign)?;
    SignedSupplyRate::scalar(0.0, sign, 2.0 * s * rate * c)
}

/// Supply of a lossless inductor whose storage carries `sign`.
pub fn inductor_supply(l: f64, rate: f64, sign: i8) -> Result<SignedSupplyRate> {
    positive("L", l)?;
    rate_ok(rate)?;
    let s = unit_sign(sign)?;
    SignedSupplyRate::scalar(2.0 * s * rate * l, sign, 0.0)
}

fn unit_sign(sign: i8) -> Result<f64> {
    match sign {
        1 => Ok(1.0),
        -1 => Ok(-1.0),
        _ => Err(Error::InvalidParameter(format!("sign must be ±1, got {sign}"))),
    }
}

/// Two-port supply on `[cc, vc]`.
pub fn parallel_rlc_supply(c: f64, l: f64, g: &PwlCurve, rate: f64) -> Result<SignedSupplyRate> {
    positive("C", c)?;
    positive("L", l)?;
    rate_ok(rate)?;
    let gd = g.slope_bounds().g_max.max(0.0);
    SignedSupplyRate::diagonal(&[0.0, -2.0 * rate * l], vec![-1, -1], &[2.0 * (gd - rate * c), 0.0])
}

/// Two-port supply on `[cc, vc]`.
pub fn series_rlc_supply(c: f64, l: f64, r: &PwlCurve, rate: f64) -> Result<SignedSupplyRate> {
    positive("C", c)?;
    positive("L", l)?;
    rate_ok(rate)?;
    let rd = r.slope_bounds().g_max.max(0.0);
    SignedSupplyRate::diagonal(&[0.0, 2.0 * (rd - rate * l)], vec![-1, -1], &[-2.0 * rate * c, 0.0])
}

/// `𝓘 = +1`, `Q = 0`, `R = −2·s` with `s` the Schur complement at the port
/// node of `G − λ·diag(C)`.
pub fn rc_ladder_supply(p: &RcLadder, rate: f64) -> Result<SignedSupplyRate> {
    p.validate()?;
    rate_ok(rate)?;
    let n = p.caps.len();
    let mut m = p.conductance();
    for k in 0..n {
        m[(k, k)] -= rate * p.caps[k];
    }
    let sm = SymMatrix::new(m.clone())?;
    if sym_eigenvalues(&sm)?[0] <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "rate {rate} exceeds the ladder's passivity range"
        )));
    }
    let s = if n == 1 {
        m[(0, 0)]
    } else {
        let idx: Vec<usize> = (1..n).collect();
        let m22 = m.select(&idx, &idx);
        let m21 = m.select(&idx, &[0]).col(0);
        let x = match crate::matkernel::solve_affine(&m22, &m21)? {
            crate::matkernel::AffineSolution::Unique(x) => x,
            crate::matkernel::AffineSolution::Singular => {
                return Err(Error::Numerical("singular ladder block".into()))
            }
        };
        m[(0, 0)] - m21.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
    };
    SignedSupplyRate::scalar(0.0, 1, -2.0 * s)
}
