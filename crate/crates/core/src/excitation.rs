//! Zero-mean Dirichlet data on the rim: Fourier harmonics, affine profiles and
//! depleting potentials that concentrate away from a target region.

use std::collections::HashSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{linear_power_gap, LinearSolver, TriGeometry};
use crate::geometry::{CellRegion, StructuredTriMesh};
use crate::materials::{Contrast, MaterialAssignment, MaterialLaw};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryExcitation {
    /// Values at the rim vertices in loop order.
    pub values: Vec<f64>,
    pub label: String,
    pub normalization: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationFamily {
    pub members: Vec<BoundaryExcitation>,
    pub recipe: String,
}

impl ExcitationFamily {
    pub fn new(members: Vec<BoundaryExcitation>, recipe: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for m in &members {
            if !seen.insert(m.label.as_str()) {
                return Err(Error::InvalidBoundaryData(format!("duplicate excitation label `{}`", m.label)));
            }
        }
        Ok(Self { members, recipe: recipe.into() })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = &[f64]> {
        self.members.iter().map(|m| m.values.as_slice())
    }

    /// Concatenation; labels must stay distinct.
    pub fn concat(&self, other: &ExcitationFamily) -> Result<Self> {
        let mut members = self.members.clone();
        members.extend(other.members.iter().cloned());
        Self::new(members, format!("{} + {}", self.recipe, other.recipe))
    }

    /// The first `n` members.
    pub fn truncate(&self, n: usize) -> Self {
        Self { members: self.members[..n.min(self.len())].to_vec(), recipe: format!("{} [..{n}]", self.recipe) }
    }
}

/// Subtracts the rim-weighted mean. Errors if nothing is left.
pub fn zero_mean_project(weights: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::InvalidBoundaryData(format!(
            "need {} boundary values, got {}",
            weights.len(),
            values.len()
        )));
    }
    let wsum: f64 = weights.iter().sum();
    let mean = weights.iter().zip(values).map(|(w, v)| w * v).sum::<f64>() / wsum;
    let out: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let left = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if left <= 1e-12 * scale || left == 0.0 {
        return Err(Error::DegenerateExcitation);
    }
    Ok(out)
}

/// Weighted mean of rim data (zero for members of a family).
pub fn weighted_mean(mesh: &StructuredTriMesh, values: &[f64]) -> f64 {
    let w = mesh.boundary_weights();
    w.iter().zip(values).map(|(w, v)| w * v).sum::<f64>() / w.iter().sum::<f64>()
}

fn max_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    v.iter_mut().for_each(|x| *x /= m);
    v
}

/// `cos(2πkℓ/L)`, `sin(2πkℓ/L)` for `k = 1..=K` at the rim arclengths.
pub fn fourier_family(mesh: &StructuredTriMesh, k_max: usize) -> Result<ExcitationFamily> {
    if k_max == 0 {
        return Err(Error::InvalidParameter("Fourier family needs K ≥ 1".into()));
    }
    let w = mesh.boundary_weights();
    let ell = mesh.boundary_arclengths();
    let perim = mesh.perimeter();
    let mut members = Vec::with_capacity(2 * k_max);
    for k in 1..=k_max {
        for (name, trig) in [("cos", f64::cos as fn(f64) -> f64), ("sin", f64::sin)] {
            let raw: Vec<f64> = ell.iter().map(|l| trig(2.0 * PI * k as f64 * l / perim)).collect();
            members.push(BoundaryExcitation {
                values: max_normalize(zero_mean_project(&w, &raw)?),
                label: format!("{name}{k}"),
                normalization: "zero-mean, max-normalized".into(),
            });
        }
    }
    ExcitationFamily::new(members, format!("fourier K={k_max}"))
}

/// Trace of the affine field `a·x + b·y`, zero-mean projected.
pub fn affine_profile(mesh: &StructuredTriMesh, a: f64, b: f64) -> Result<BoundaryExcitation> {
    let raw: Vec<f64> = mesh.boundary_coordinates().iter().map(|p| a * p[0] + b * p[1]).collect();
    Ok(BoundaryExcitation {
        values: zero_mean_project(&mesh.boundary_weights(), &raw)?,
        label: format!("affine({a},{b})"),
        normalization: "zero-mean".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RimSide {
    Bottom,
    Right,
    Top,
    Left,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepletingParams {
    pub side: RimSide,
    pub x0: [f64; 2],
    /// Inward unit normal at the anchor side.
    pub nu: [f64; 2],
    /// Gap between the anchor side and the target's bounding box.
    pub delta: f64,
    pub deltas: Vec<f64>,
    pub betas: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepletingFamily {
    pub family: ExcitationFamily,
    pub params: DepletingParams,
}

/// `f_n = a_n·exp(−ξ_N/δ_n)·sin(β_n ξ₁)`, `δ_n = δ/2ⁿ`, `β_n = 1/δ_n`, scaled so
/// that the background power product of every member is one.
pub fn depleting_sequence(mesh: &StructuredTriMesh, bg: f64, d: &CellRegion, n_max: usize) -> Result<DepletingFamily> {
    if n_max == 0 {
        return Err(Error::InvalidParameter("depleting sequence needs n_max ≥ 1".into()));
    }
    d.check_mesh(mesh)?;
    let (i0, j0, i1, j1) = d.bounding_box().ok_or_else(|| Error::InvalidParameter("empty target region".into()))?;
    let (hx, hy) = mesh.cell_size();
    let (w, h) = mesh.extent;
    let gaps = [
        (RimSide::Bottom, j0 as f64 * hy),
        (RimSide::Right, w - (i1 + 1) as f64 * hx),
        (RimSide::Top, h - (j1 + 1) as f64 * hy),
        (RimSide::Left, i0 as f64 * hx),
    ];
    let (side, delta) = gaps.iter().copied().fold(gaps[0], |best, g| if g.1 > best.1 { g } else { best });
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter("target touches all four rim sides; no standoff".into()));
    }
    let centre = [0.5 * (i0 + i1 + 1) as f64 * hx, 0.5 * (j0 + j1 + 1) as f64 * hy];
    let (x0, nu) = match side {
        RimSide::Bottom => ([centre[0], 0.0], [0.0, 1.0]),
        RimSide::Right => ([w, centre[1]], [-1.0, 0.0]),
        RimSide::Top => ([centre[0], h], [0.0, -1.0]),
        RimSide::Left => ([0.0, centre[1]], [1.0, 0.0]),
    };
    // Tangent completes (ν, τ) to a frame; its sign is immaterial.
    let tau = [nu[1], -nu[0]];

    let weights = mesh.boundary_weights();
    let coords = mesh.boundary_coordinates();
    let material = MaterialAssignment::uniform(mesh.nx, mesh.ny, bg)?;
    let solver = LinearSolver::new(mesh, &material)?;
    let mut members = Vec::with_capacity(n_max);
    let (mut deltas, mut betas, mut amplitudes) = (Vec::new(), Vec::new(), Vec::new());
    for n in 1..=n_max {
        let dn = delta / f64::powi(2.0, n as i32);
        let beta = 1.0 / dn;
        let raw: Vec<f64> = coords
            .iter()
            .map(|p| {
                let r = [p[0] - x0[0], p[1] - x0[1]];
                let xi_n = r[0] * nu[0] + r[1] * nu[1];
                let xi_1 = r[0] * tau[0] + r[1] * tau[1];
                (-xi_n / dn).exp() * (beta * xi_1).sin()
            })
            .collect();
        let projected = zero_mean_project(&weights, &raw)?;
        let p_raw = solver.power(&projected)?;
        let a = 1.0 / p_raw.sqrt();
        members.push(BoundaryExcitation {
            values: projected.iter().map(|v| a * v).collect(),
            label: format!("deplete{n}"),
            normalization: "zero-mean, unit background power".into(),
        });
        deltas.push(dn);
        betas.push(beta);
        amplitudes.push(a);
    }
    Ok(DepletingFamily {
        family: ExcitationFamily::new(members, format!("depleting n_max={n_max}"))?,
        params: DepletingParams { side, x0, nu, delta, deltas, betas, amplitudes },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepletingRow {
    pub n: usize,
    pub p_empty: f64,
    /// `∫_D γ|∇u|² / ∫_Ω γ|∇u|²` for the background solution.
    pub ratio: f64,
    /// `e^{−δ/δ_n}·m(D)/m(Ω_{δ/2})`, reported alongside.
    pub ratio_bound: f64,
    /// `P_D(f_n) − P_∅(f_n)` with the linear value `d_value` in D.
    pub gap: f64,
}

/// Localization diagnostics of a depleting family over a constant background.
pub fn depleting_report(
    mesh: &StructuredTriMesh,
    bg: f64,
    d: &CellRegion,
    d_value: f64,
    dep: &DepletingFamily,
) -> Result<Vec<DepletingRow>> {
    let background = MaterialAssignment::uniform(mesh.nx, mesh.ny, bg)?;
    let contrast = if d_value > bg { Contrast::High } else { Contrast::Low };
    let with_d = MaterialAssignment::with_anomaly(vec![bg; mesh.num_pixels()], d.clone(), MaterialLaw::constant(d_value)?, contrast)?;
    let solver = LinearSolver::new(mesh, &background)?;
    let geo = TriGeometry::new(mesh);
    let m_d = d.count() as f64 * mesh.pixel_area();
    let mut rows = Vec::with_capacity(dep.family.len());
    for (k, f) in dep.family.values().enumerate() {
        let sol = solver.solve(f)?;
        let (mut g_d, mut g_all) = (0.0, 0.0);
        for (t, g) in sol.gradients.iter().enumerate() {
            let e = geo.area[t] * bg * (g[0] * g[0] + g[1] * g[1]);
            g_all += e;
            if d.contains(mesh.pixel_of_triangle(t)) {
                g_d += e;
            }
        }
        let p = &dep.params;
        let (w, h) = mesh.extent;
        // Ω_{δ/2}: the part of Ω within δ/2 of the anchor side.
        let strip = 0.5 * p.delta * if matches!(p.side, RimSide::Bottom | RimSide::Top) { w } else { h };
        rows.push(DepletingRow {
            n: k + 1,
            p_empty: sol.power_avg,
            ratio: g_d / g_all,
            ratio_bound: (-p.delta / p.deltas[k]).exp() * m_d / strip,
            gap: linear_power_gap(mesh, &with_d, &background, f)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_mesh;

    #[test]
    fn projection_examples() {
        let w = vec![1.0; 4];
        assert_eq!(zero_mean_project(&w, &[3.0; 4]), Err(Error::DegenerateExcitation));
        let alt = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(zero_mean_project(&w, &alt).unwrap(), alt.to_vec());
        let once = zero_mean_project(&w, &[1.0, 2.0, 5.0, 0.0]).unwrap();
        assert_eq!(zero_mean_project(&w, &once).unwrap(), once);
    }

    #[test]
    fn fourier_members_are_zero_mean_and_distinct() {
        let mesh = build_mesh(8, 8, (1.0, 1.0)).unwrap();
        let fam = fourier_family(&mesh, 1).unwrap();
        assert_eq!(fam.len(), 2);
        for m in &fam.members {
            assert!(weighted_mean(&mesh, &m.values).abs() < 1e-12);
            assert!((m.values.iter().fold(0.0f64, |a, v| a.max(v.abs())) - 1.0).abs() < 1e-15);
        }
        assert!(fourier_family(&mesh, 0).is_err());
        assert!(fam.concat(&fam).is_err());
    }

    #[test]
    fn fourier_orthogonality_on_fine_rim() {
        let mesh = build_mesh(32, 32, (1.0, 1.0)).unwrap();
        let fam = fourier_family(&mesh, 8).unwrap();
        let w = mesh.boundary_weights();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(&w).map(|((a, b), w)| a * b * w).sum::<f64>();
        for (i, a) in fam.members.iter().enumerate() {
            for b in &fam.members[i + 1..] {
                let k_a: String = a.label.chars().filter(|c| c.is_ascii_digit()).collect();
                let k_b: String = b.label.chars().filter(|c| c.is_ascii_digit()).collect();
                if k_a == k_b {
                    continue;
                }
                let c = dot(&a.values, &b.values) / (dot(&a.values, &a.values) * dot(&b.values, &b.values)).sqrt();
                assert!(c.abs() < 1e-2, "{} {} {c}", a.label, b.label);
            }
        }
    }

    #[test]
    fn depleting_members_have_unit_background_power() {
        let mesh = build_mesh(16, 16, (1.0, 1.0)).unwrap();
        let d = CellRegion::rect(16, 16, 6, 9, 4, 4).unwrap();
        let dep = depleting_sequence(&mesh, 1.0, &d, 3).unwrap();
        assert_eq!(dep.params.side, RimSide::Bottom);
        let bg = MaterialAssignment::uniform(16, 16, 1.0).unwrap();
        let solver = LinearSolver::new(&mesh, &bg).unwrap();
        for f in dep.family.values() {
            assert!((solver.power(f).unwrap() - 1.0).abs() < 1e-10);
            assert!(weighted_mean(&mesh, f).abs() < 1e-12);
        }
        assert!(dep.params.deltas.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn depleting_rejects_full_target() {
        let mesh = build_mesh(4, 4, (1.0, 1.0)).unwrap();
        assert!(depleting_sequence(&mesh, 1.0, &CellRegion::full(4, 4), 2).is_err());
        assert!(depleting_sequence(&mesh, 1.0, &CellRegion::rect(4, 4, 1, 1, 2, 2).unwrap(), 0).is_err());
    }
}
