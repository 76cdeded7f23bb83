//! Piecewise-linear resistor characteristics, their slope bounds and the
//! signed supply rates they satisfy.
//!
//! A voltage-controlled resistor `i = g(v)` whose slopes lie in
//! `[-g_neg, g_max]` satisfies the two sector inequalities
//!
//! ```text
//!   0 <= Δi·Δv + g_neg·Δv²      (shortage of passivity)
//!   0 <= -Δi·Δv + g_max·Δv²     (shortage of anti-passivity)
//! ```
//!
//! and, when `g_max != g_neg`, the single signed supply
//! `0 <= [Δi;Δv]ᵀ [[Q, 𝓘],[𝓘, R]] [Δi;Δv]`. Current-controlled resistors
//! `v = r(i)` satisfy the dual statements with the roles of `i` and `v`
//! exchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matkernel::{Mat, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    VoltageControlled,
    CurrentControlled,
}

/// Serialized form of a [`PwlCurve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PwlCurveSpec {
    pub kind: CurveKind,
    pub breakpoints: Vec<f64>,
    /// Curve value at the first breakpoint, or at zero when there are none.
    pub anchor_value: f64,
    pub slopes: Vec<f64>,
}

/// Continuous piecewise-linear characteristic.
///
/// Stored as an anchor value plus one slope per segment so that continuity
/// holds by construction. Segment `j` covers `(b_j, b_{j+1}]` with
/// `b_0 = -∞` and `b_{k+1} = +∞`; a point sitting exactly on a breakpoint
/// belongs to the segment on its left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PwlCurveSpec", into = "PwlCurveSpec")]
pub struct PwlCurve {
    kind: CurveKind,
    breakpoints: Vec<f64>,
    anchor_value: f64,
    slopes: Vec<f64>,
    /// `value = intercepts[j] + slopes[j]·x` on segment `j`.
    intercepts: Vec<f64>,
}

impl PwlCurve {
    pub fn new(
        kind: CurveKind,
        breakpoints: Vec<f64>,
        anchor_value: f64,
        slopes: Vec<f64>,
    ) -> Result<Self> {
        if slopes.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidCurve(format!(
                "{} breakpoints need {} slopes, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                slopes.len()
            )));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) || !anchor_value.is_finite() {
            return Err(Error::InvalidCurve("breakpoints and anchor must be finite".into()));
        }
        if slopes.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidCurve("slopes must be finite".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidCurve("breakpoints must be strictly increasing".into()));
        }

        let mut intercepts = Vec::with_capacity(slopes.len());
        let first = breakpoints.first().copied().unwrap_or(0.0);
        intercepts.push(anchor_value - slopes[0] * first);
        let mut knot_value = anchor_value;
        for (j, &b) in breakpoints.iter().enumerate() {
            if j > 0 {
                knot_value += slopes[j] * (b - breakpoints[j - 1]);
            }
            intercepts.push(knot_value - slopes[j + 1] * b);
        }
        Ok(PwlCurve { kind, breakpoints, anchor_value, slopes, intercepts })
    }

    /// Linear resistor: `i = v/R` (voltage-controlled) or `v = R·i`
    /// (current-controlled).
    pub fn linear(kind: CurveKind, resistance: f64) -> Result<Self> {
        if !(resistance > 0.0) || !resistance.is_finite() {
            return Err(Error::InvalidParameter(format!("resistance {resistance} must be > 0")));
        }
        let slope = match kind {
            CurveKind::VoltageControlled => 1.0 / resistance,
            CurveKind::CurrentControlled => resistance,
        };
        PwlCurve::new(kind, vec![], 0.0, vec![slope])
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn anchor_value(&self) -> f64 {
        self.anchor_value
    }

    pub fn segment_count(&self) -> usize {
        self.slopes.len()
    }

    /// Segment index holding `x` (left-closed tie rule at breakpoints).
    #[inline]
    pub fn segment_of(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&b| b < x)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let j = self.segment_of(x);
        self.intercepts[j] + self.slopes[j] * x
    }

    /// Validity interval `(lo, hi]` of segment `j`, with infinite ends.
    pub fn segment_interval(&self, j: usize) -> (f64, f64) {
        let lo = if j == 0 { f64::NEG_INFINITY } else { self.breakpoints[j - 1] };
        let hi = self.breakpoints.get(j).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }

    pub fn slope_bounds(&self) -> SlopeBounds {
        slope_bounds(self)
    }

    pub fn spec(&self) -> PwlCurveSpec {
        PwlCurveSpec {
            kind: self.kind,
            breakpoints: self.breakpoints.clone(),
            anchor_value: self.anchor_value,
            slopes: self.slopes.clone(),
        }
    }
}

impl TryFrom<PwlCurveSpec> for PwlCurve {
    type Error = Error;
    fn try_from(s: PwlCurveSpec) -> Result<Self> {
        PwlCurve::new(s.kind, s.breakpoints, s.anchor_value, s.slopes)
    }
}

impl From<PwlCurve> for PwlCurveSpec {
    fn from(c: PwlCurve) -> Self {
        c.spec()
    }
}

pub fn eval_curve(c: &PwlCurve, x: f64) -> f64 {
    c.eval(x)
}

/// Extreme slopes of a characteristic: `g_max` (G^d or R^d) and the magnitude
/// `g_neg` (G^g or R^g) of the most negative slope, zero for monotone curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeBounds {
    pub g_max: f64,
    pub g_neg: f64,
}

pub fn slope_bounds(c: &PwlCurve) -> SlopeBounds {
    let g_max = c.slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = c.slopes.iter().copied().fold(f64::INFINITY, f64::min);
    SlopeBounds { g_max, g_neg: (-min).max(0.0) }
}

/// Sector residuals `(r_passivity, r_antipassivity)` for the pair of operating
/// points `x1`, `x2`; both are non-negative for a correctly bounded curve.
pub fn sector_residuals(c: &PwlCurve, x1: f64, x2: f64) -> Result<(f64, f64)> {
    if x1 == x2 {
        return Err(Error::DegenerateIncrement);
    }
    let b = c.slope_bounds();
    // For cc curves `x` is the current and the output a voltage; the sector
    // form is the same with the roles swapped.
    let dx = x1 - x2;
    let dy = c.eval(x1) - c.eval(x2);
    let cross = dx * dy;
    Ok((cross + b.g_neg * dx * dx, -cross + b.g_max * dx * dx))
}

/// Signed quadratic supply `[Δi;Δv]ᵀ [[Q, 𝓘],[𝓘, R]] [Δi;Δv]` on `m` ports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedSupplyRate {
    pub q: SymMatrix,
    pub signature: Vec<i8>,
    pub r: SymMatrix,
}

impl SignedSupplyRate {
    pub fn new(q: SymMatrix, signature: Vec<i8>, r: SymMatrix) -> Result<Self> {
        let m = signature.len();
        if m == 0 {
            return Err(Error::Dimension("supply needs at least one port".into()));
        }
        if q.dim() != m || r.dim() != m {
            return Err(Error::Dimension(format!(
                "Q is {0}x{0}, R is {1}x{1}, signature has {2} entries",
                q.dim(),
                r.dim(),
                m
            )));
        }
        if signature.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::SignatureMismatch("signature entries must be ±1".into()));
        }
        Ok(SignedSupplyRate { q, signature, r })
    }

    /// Single-port supply from scalar entries.
    pub fn scalar(q: f64, signature: i8, r: f64) -> Result<Self> {
        SignedSupplyRate::new(SymMatrix::diag(&[q])?, vec![signature], SymMatrix::diag(&[r])?)
    }

    /// Port-diagonal supply.
    pub fn diagonal(q: &[f64], signature: Vec<i8>, r: &[f64]) -> Result<Self> {
        SignedSupplyRate::new(SymMatrix::diag(q)?, signature, SymMatrix::diag(r)?)
    }

    pub fn port_dim(&self) -> usize {
        self.signature.len()
    }

    /// Full `2m×2m` matrix in the `(Δi, Δv)` stacking.
    pub fn matrix(&self) -> Mat {
        let m = self.port_dim();
        let mut out = Mat::zeros(2 * m, 2 * m);
        out.set_block(0, 0, self.q.as_mat());
        out.set_block(m, m, self.r.as_mat());
        for (k, &s) in self.signature.iter().enumerate() {
            out[(k, m + k)] = s as f64;
            out[(m + k, k)] = s as f64;
        }
        out
    }

    pub fn with_signature_flipped(&self) -> Self {
        let mut s = self.clone();
        for v in &mut s.signature {
            *v = -*v;
        }
        s
    }
}

/// Evaluates the supply on port increments.
pub fn supply_eval(s: &SignedSupplyRate, di: &[f64], dv: &[f64]) -> Result<f64> {
    let m = s.port_dim();
    if di.len() != m || dv.len() != m {
        return Err(Error::Dimension(format!(
            "increments of length {}/{} for a {m}-port supply",
            di.len(),
            dv.len()
        )));
    }
    let mut acc = 0.0;
    for a in 0..m {
        for b in 0..m {
            acc += di[a] * s.q[(a, b)] * di[b] + dv[a] * s.r[(a, b)] * dv[b];
        }
        acc += 2.0 * s.signature[a] as f64 * di[a] * dv[a];
    }
    Ok(acc)
}

/// Signed supply implied by slope bounds of a resistor, for the curve's own
/// port orientation. Voltage-controlled:
/// `𝓘 = sign(G^d−G^g)`, `Q = −2/|G^d−G^g|`, `R = 2G^gG^d/|G^d−G^g|`.
/// Current-controlled:
/// `𝓘 = sign(R^d−R^g)`, `Q = 2R^gR^d/|R^d−R^g|`, `R = −2/|R^d−R^g|`.
pub fn supply_rate_from_bounds(kind: CurveKind, b: SlopeBounds) -> Result<SignedSupplyRate> {
    let diff = b.g_max - b.g_neg;
    if diff == 0.0 {
        return Err(Error::DegenerateSignature(b.g_max));
    }
    let sig: i8 = if diff > 0.0 { 1 } else { -1 };
    let gap = diff.abs();
    let product = 2.0 * b.g_neg * b.g_max / gap;
    let (q, r) = match kind {
        CurveKind::VoltageControlled => (-2.0 / gap, product),
        CurveKind::CurrentControlled => (product, -2.0 / gap),
    };
    SignedSupplyRate::scalar(q, sig, r)
}

/// Built-in characteristics of the reference oscillator example.
pub mod builtin {
    use super::*;

    /// `g1`: 0.1·v below 2 V, −0.1·v + 0.4 on [2, 3] V, 0.1·v − 0.2 above.
    pub fn g1() -> PwlCurve {
        PwlCurve::new(CurveKind::VoltageControlled, vec![2.0, 3.0], 0.2, vec![0.1, -0.1, 0.1])
            .expect("valid builtin")
    }

    /// `r2`: 10·i + 5 below −0.2 A, −10·i + 1 on [−0.2, −0.1] A, 10·i + 3 above.
    pub fn r2() -> PwlCurve {
        PwlCurve::new(CurveKind::CurrentControlled, vec![-0.2, -0.1], 3.0, vec![10.0, -10.0, 10.0])
            .expect("valid builtin")
    }

    /// `g2`: active conductance −0.055 S on [−5, 5] V, 0.1375 S outside.
    pub fn g2() -> PwlCurve {
        PwlCurve::new(
            CurveKind::VoltageControlled,
            vec![-5.0, 5.0],
            0.275,
            vec![0.1375, -0.055, 0.1375],
        )
        .expect("valid builtin")
    }
}
