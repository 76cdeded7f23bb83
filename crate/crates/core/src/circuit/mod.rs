//! Lur'e-form circuit models.
//!
//! Every circuit is a linear core in feedback with piecewise-linear resistors:
//!
//! ```text
//!   ẋ = A·x + a + B_w·Φ(C_z·x) + B_u·u
//!   y = C_y·x + D_y·u
//! ```
//!
//! `Φ` applies each bound curve to its own row of `C_z·x`. Port `j` owns the
//! output rows `2j` (current) and `2j+1` (voltage); its input `u_j` is the
//! current for a current-driven port and the voltage for a voltage-driven one.
//!
//! Inside a region (one segment per curve) the dynamics are exactly affine
//! with Jacobian `A + B_w·diag(slopes)·C_z`.

mod prototypes;

pub use prototypes::*;

use serde::{Deserialize, Serialize};

use crate::elements::PwlCurve;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matkernel::Mat;

/// Cap on the number of regions any operation will enumerate.
pub const REGION_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PortRole {
    CurrentDriven,
    VoltageDriven,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Port {
    pub role: PortRole,
    pub label: String,
}

impl Port {
    pub fn cc(label: impl Into<String>) -> Self {
        Port { role: PortRole::CurrentDriven, label: label.into() }
    }

    pub fn vc(label: impl Into<String>) -> Self {
        Port { role: PortRole::VoltageDriven, label: label.into() }
    }

    /// Output row carrying the port's *output* variable (voltage for a
    /// current-driven port, current for a voltage-driven one).
    pub fn output_row(&self, index: usize) -> usize {
        match self.role {
            PortRole::CurrentDriven => 2 * index + 1,
            PortRole::VoltageDriven => 2 * index,
        }
    }

    /// Output row that passes the port's own input through.
    pub fn input_row(&self, index: usize) -> usize {
        match self.role {
            PortRole::CurrentDriven => 2 * index,
            PortRole::VoltageDriven => 2 * index + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlStateSpace {
    pub(crate) state_labels: Vec<String>,
    pub(crate) a: Mat,
    pub(crate) offset: Vec<f64>,
    pub(crate) b_w: Mat,
    pub(crate) b_u: Mat,
    pub(crate) c_z: Mat,
    pub(crate) c_y: Mat,
    pub(crate) d_y: Mat,
    pub(crate) curves: Vec<PwlCurve>,
    pub(crate) ports: Vec<Port>,
    pub(crate) storage_weights: Vec<f64>,
}

/// Constructor arguments for [`PwlStateSpace::new`].
#[derive(Debug, Clone)]
pub struct ModelParts {
    pub state_labels: Vec<String>,
    pub a: Mat,
    pub offset: Vec<f64>,
    pub b_w: Mat,
    pub b_u: Mat,
    pub c_z: Mat,
    pub c_y: Mat,
    pub d_y: Mat,
    pub curves: Vec<PwlCurve>,
    pub ports: Vec<Port>,
    pub storage_weights: Vec<f64>,
}

impl PwlStateSpace {
    pub fn new(p: ModelParts) -> Result<Self> {
        let n = p.state_labels.len();
        let k = p.curves.len();
        let m = p.ports.len();
        let dims = [
            ("A", p.a.rows(), p.a.cols(), n, n),
            ("B_w", p.b_w.rows(), p.b_w.cols(), n, k),
            ("B_u", p.b_u.rows(), p.b_u.cols(), n, m),
            ("C_z", p.c_z.rows(), p.c_z.cols(), k, n),
            ("C_y", p.c_y.rows(), p.c_y.cols(), 2 * m, n),
            ("D_y", p.d_y.rows(), p.d_y.cols(), 2 * m, m),
        ];
        for (name, r, c, er, ec) in dims {
            if r != er || c != ec {
                return Err(Error::Dimension(format!("{name} is {r}x{c}, expected {er}x{ec}")));
            }
        }
        if n == 0 {
            return Err(Error::Dimension("model needs at least one state".into()));
        }
        if p.offset.len() != n || p.storage_weights.len() != n {
            return Err(Error::Dimension("offset and storage weights need one entry per state".into()));
        }
        if p.storage_weights.iter().any(|&w| w == 0.0 || !w.is_finite()) {
            return Err(Error::InvalidParameter("storage weights must be finite and nonzero".into()));
        }
        Ok(PwlStateSpace {
            state_labels: p.state_labels,
            a: p.a,
            offset: p.offset,
            b_w: p.b_w,
            b_u: p.b_u,
            c_z: p.c_z,
            c_y: p.c_y,
            d_y: p.d_y,
            curves: p.curves,
            ports: p.ports,
            storage_weights: p.storage_weights,
        })
    }

    pub fn parts(&self) -> ModelParts {
        ModelParts {
            state_labels: self.state_labels.clone(),
            a: self.a.clone(),
            offset: self.offset.clone(),
            b_w: self.b_w.clone(),
            b_u: self.b_u.clone(),
            c_z: self.c_z.clone(),
            c_y: self.c_y.clone(),
            d_y: self.d_y.clone(),
            curves: self.curves.clone(),
            ports: self.ports.clone(),
            storage_weights: self.storage_weights.clone(),
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.state_labels.len()
    }

    /// Number of open ports.
    #[inline]
    pub fn m(&self) -> usize {
        self.ports.len()
    }

    pub fn is_terminated(&self) -> bool {
        self.ports.is_empty()
    }

    pub fn state_labels(&self) -> &[String] {
        &self.state_labels
    }

    pub fn ports(&self) -> &[Port] {
        &self.ports
    }

    pub fn curves(&self) -> &[PwlCurve] {
        &self.curves
    }

    pub fn storage_weights(&self) -> &[f64] {
        &self.storage_weights
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn b_w(&self) -> &Mat {
        &self.b_w
    }

    pub fn b_u(&self) -> &Mat {
        &self.b_u
    }

    pub fn c_z(&self) -> &Mat {
        &self.c_z
    }

    pub fn c_y(&self) -> &Mat {
        &self.c_y
    }

    pub fn d_y(&self) -> &Mat {
        &self.d_y
    }

    pub fn with_label_prefix(mut self, prefix: &str) -> Self {
        for l in &mut self.state_labels {
            *l = format!("{prefix}.{l}");
        }
        for p in &mut self.ports {
            p.label = format!("{prefix}.{}", p.label);
        }
        self
    }

    /// Evaluates `ẋ` into `out` without allocating.
    pub fn rhs_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let n = self.n();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(u.len(), self.m());
        out.copy_from_slice(&self.offset);
        self.a.mul_vec_acc(x, out);
        for (j, curve) in self.curves.iter().enumerate() {
            let z: f64 = self.c_z.row(j).iter().zip(x).map(|(c, v)| c * v).sum();
            let phi = curve.eval(z);
            if phi != 0.0 {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += self.b_w[(i, j)] * phi;
                }
            }
        }
        if !u.is_empty() {
            self.b_u.mul_vec_acc(u, out);
        }
    }

    pub fn rhs(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_xu(x, u)?;
        let mut out = vec![0.0; self.n()];
        self.rhs_into(x, u, &mut out);
        Ok(out)
    }

    /// Port variables `(i, v)`, one entry per port.
    pub fn port_variables(&self, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_xu(x, u)?;
        let m = self.m();
        let mut y = vec![0.0; 2 * m];
        self.c_y.mul_vec_acc(x, &mut y);
        self.d_y.mul_vec_acc(u, &mut y);
        let i = (0..m).map(|j| y[2 * j]).collect();
        let v = (0..m).map(|j| y[2 * j + 1]).collect();
        Ok((i, v))
    }

    fn check_xu(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.n() || u.len() != self.m() {
            return Err(Error::Dimension(format!(
                "state/input lengths {}/{} for a model with n={} m={}",
                x.len(),
                u.len(),
                self.n(),
                self.m()
            )));
        }
        Ok(())
    }

    /// Closes every port: current-driven inputs are held at zero current and
    /// voltage-driven inputs at zero voltage. Idempotent.
    pub fn terminate(&self) -> PwlStateSpace {
        let n = self.n();
        let mut out = self.clone();
        out.b_u = Mat::zeros(n, 0);
        out.c_y = Mat::zeros(0, n);
        out.d_y = Mat::zeros(0, 0);
        out.ports.clear();
        out
    }

    pub fn region_count(&self) -> u128 {
        self.curves.iter().map(|c| c.segment_count() as u128).product()
    }

    /// Segment choice for a lexicographic region index (first curve most
    /// significant).
    pub fn region_choice(&self, mut index: usize) -> Vec<usize> {
        let mut choice = vec![0; self.curves.len()];
        for (slot, curve) in choice.iter_mut().zip(&self.curves).rev() {
            let s = curve.segment_count();
            *slot = index % s;
            index /= s;
        }
        choice
    }

    /// Segment choice containing `x`, with breakpoint ties going to the lower
    /// segment.
    pub fn region_of(&self, x: &[f64]) -> Vec<usize> {
        self.curves
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let z: f64 = self.c_z.row(j).iter().zip(x).map(|(a, b)| a * b).sum();
                c.segment_of(z)
            })
            .collect()
    }

    pub fn region(&self, choice: &[usize]) -> Result<Region> {
        if choice.len() != self.curves.len() {
            return Err(Error::Dimension(format!(
                "segment choice of length {} for {} curves",
                choice.len(),
                self.curves.len()
            )));
        }
        let n = self.n();
        let mut jac = self.a.clone();
        let mut offset = self.offset.clone();
        let mut polyhedron = Vec::new();
        for (j, (&seg, curve)) in choice.iter().zip(&self.curves).enumerate() {
            if seg >= curve.segment_count() {
                return Err(Error::Dimension(format!("segment {seg} out of range for curve {j}")));
            }
            let slope = curve.slopes()[seg];
            let intercept = curve.intercepts()[seg];
            let cz = self.c_z.row(j);
            for r in 0..n {
                let bw = self.b_w[(r, j)];
                if bw == 0.0 {
                    continue;
                }
                offset[r] += bw * intercept;
                for c in 0..n {
                    jac[(r, c)] += bw * slope * cz[c];
                }
            }
            let (lo, hi) = curve.segment_interval(seg);
            if lo.is_finite() {
                polyhedron.push(HalfSpace {
                    normal: cz.iter().map(|v| -v).collect(),
                    bound: -lo,
                    strict: true,
                });
            }
            if hi.is_finite() {
                polyhedron.push(HalfSpace { normal: cz.to_vec(), bound: hi, strict: false });
            }
        }
        Ok(Region { segment_choice: choice.to_vec(), jacobian: jac, offset, polyhedron })
    }

    pub fn region_at(&self, index: usize) -> Result<Region> {
        self.region(&self.region_choice(index))
    }

    pub(crate) fn checked_region_count(&self) -> Result<usize> {
        let count = self.region_count();
        if count > REGION_CAP as u128 {
            return Err(Error::RegionExplosion { count, cap: REGION_CAP });
        }
        Ok(count as usize)
    }

    /// Largest eigenvalue modulus over all region Jacobians.
    pub fn spectral_radius_bound(&self, exec: Exec) -> Result<f64> {
        let count = self.checked_region_count()?;
        let radii = exec.map_range(count, |idx| -> Result<f64> {
            let r = self.region_at(idx)?;
            let ev = crate::matkernel::general_eigenvalues(&r.jacobian)?;
            Ok(ev.iter().fold(0.0, |m, (re, im)| m.max(re.hypot(*im))))
        });
        radii.into_iter().try_fold(0.0f64, |m, r| Ok(m.max(r?)))
    }

    /// Largest `|Re λ|` over all region Jacobians.
    pub fn fastest_rate(&self, exec: Exec) -> Result<f64> {
        let count = self.checked_region_count()?;
        let rates = exec.map_range(count, |idx| -> Result<f64> {
            let r = self.region_at(idx)?;
            let ev = crate::matkernel::general_eigenvalues(&r.jacobian)?;
            Ok(ev.iter().fold(0.0, |m, (re, _)| m.max(re.abs())))
        });
        rates.into_iter().try_fold(0.0f64, |m, r| Ok(m.max(r?)))
    }
}

/// Linear inequality `normal·x <= bound` (strict when `strict`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub bound: f64,
    pub strict: bool,
}

impl HalfSpace {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.normal.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub segment_choice: Vec<usize>,
    pub jacobian: Mat,
    pub offset: Vec<f64>,
    pub polyhedron: Vec<HalfSpace>,
}

impl Region {
    /// Exact membership with the tie-break rule of the model.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.polyhedron.iter().all(|h| {
            let v = h.value(x);
            if h.strict {
                v < h.bound
            } else {
                v <= h.bound
            }
        })
    }

    /// Membership in the closed polyhedron relaxed by `tol`.
    pub fn contains_closed(&self, x: &[f64], tol: f64) -> bool {
        self.polyhedron.iter().all(|h| h.value(x) <= h.bound + tol)
    }

    /// Affine dynamics `jacobian·x + offset` (zero input).
    pub fn affine_rhs(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.offset.clone();
        self.jacobian.mul_vec_acc(x, &mut out);
        out
    }
}

/// All regions in lexicographic segment order.
pub fn enumerate_regions(m: &PwlStateSpace, exec: Exec) -> Result<Vec<Region>> {
    let count = m.checked_region_count()?;
    exec.map_range(count, |idx| m.region_at(idx)).into_iter().collect()
}
