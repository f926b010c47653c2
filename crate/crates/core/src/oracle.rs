//! Brute-force cross-checks that share no code path with the Newton solver:
//! coordinate-descent minimisation, cotangent stiffness matrices, finite
//! differences and randomized monotonicity trials.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::excitation::zero_mean_project;
use crate::forward::{discrete_energy, energy_gradient, power_product, SolverOptions};
use crate::geometry::{build_mesh, CellRegion, StructuredTriMesh};
use crate::materials::{Contrast, LawClass, LawShape, LocalLaw, MaterialAssignment, MaterialLaw};

pub const DENSE_DOF_LIMIT: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub quantity: String,
    pub main: f64,
    pub oracle: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    /// Passes when `rel_err ≤ tol` (`relative`) or `abs_err ≤ tol`.
    pub fn compare(quantity: impl Into<String>, main: f64, oracle: f64, tolerance: f64, relative: bool) -> Self {
        let abs_err = (main - oracle).abs();
        let rel_err = abs_err / oracle.abs().max(f64::MIN_POSITIVE);
        let err = if relative { rel_err } else { abs_err };
        Self { quantity: quantity.into(), main, oracle, abs_err, rel_err, tolerance, pass: err <= tolerance }
    }

    /// One-sided check `main ≤ oracle + tolerance`.
    pub fn at_most(quantity: impl Into<String>, main: f64, oracle: f64, tolerance: f64) -> Self {
        let abs_err = (main - oracle).max(0.0);
        Self {
            quantity: quantity.into(),
            main,
            oracle,
            abs_err,
            rel_err: abs_err / oracle.abs().max(f64::MIN_POSITIVE),
            tolerance,
            pass: main <= oracle + tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMinimum {
    pub energy: f64,
    pub u: Vec<f64>,
    pub sweeps: usize,
    /// Energy after every sweep; nonincreasing.
    pub history: Vec<f64>,
}

const GOLD: f64 = 0.618_033_988_749_894_8;

/// Minimises `φ` on a bracket `[a, b]` by golden-section search.
fn golden(phi: &mut impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - GOLD * (b - a);
    let mut d = a + GOLD * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLD * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLD * (b - a);
            fd = phi(d);
        }
    }
    0.5 * (a + b)
}

/// Line minimiser of a convex 1-D function starting at `x0`.
fn line_min(phi: &mut impl FnMut(f64) -> f64, x0: f64, h0: f64) -> f64 {
    let f0 = phi(x0);
    let (mut lo, mut hi);
    if phi(x0 + h0) < f0 {
        let (mut prev, mut h) = (x0, h0);
        loop {
            let next = x0 + 2.0 * h;
            if phi(next) >= phi(x0 + h) {
                lo = prev;
                hi = next;
                break;
            }
            prev = x0 + h;
            h *= 2.0;
        }
    } else if phi(x0 - h0) < f0 {
        let (mut prev, mut h) = (x0, h0);
        loop {
            let next = x0 - 2.0 * h;
            if phi(next) >= phi(x0 - h) {
                lo = next;
                hi = prev;
                break;
            }
            prev = x0 - h;
            h *= 2.0;
        }
    } else {
        lo = x0 - h0;
        hi = x0 + h0;
    }
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    golden(phi, lo, hi, 1e-10 * (1.0 + x0.abs()))
}

/// Cyclic coordinate descent over the interior vertex values, with golden-section
/// line searches on the local energy, until a sweep changes the energy by ≤ 1e−12.
pub fn dense_minimize(mesh: &StructuredTriMesh, material: &MaterialAssignment, f: &[f64]) -> Result<DenseMinimum> {
    let interior: Vec<usize> = (0..mesh.num_vertices()).filter(|&v| !mesh.is_boundary_vertex(v)).collect();
    if interior.len() > DENSE_DOF_LIMIT {
        return Err(Error::OracleLimit(format!("{} interior DOFs exceed the cap of {DENSE_DOF_LIMIT}", interior.len())));
    }
    if material.limit_class().is_some() {
        return Err(Error::NoEvaluator("limit material"));
    }
    if f.len() != mesh.boundary_vertices.len() {
        return Err(Error::InvalidBoundaryData(format!("expected {} values", mesh.boundary_vertices.len())));
    }
    let mut u = vec![0.0; mesh.num_vertices()];
    for (k, &v) in mesh.boundary_vertices.iter().enumerate() {
        u[v] = f[k];
    }
    let mut star: Vec<Vec<usize>> = vec![Vec::new(); mesh.num_vertices()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for &v in tri {
            star[v].push(t);
        }
    }
    let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let tri_energy = |t: usize, u: &[f64]| -> f64 {
        let [a, b, c] = mesh.triangles[t];
        let (pa, pb, pc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
        // Gradient from the 2×2 edge system, independent of the solver's basis tables.
        let (e1, e2) = ([pb[0] - pa[0], pb[1] - pa[1]], [pc[0] - pa[0], pc[1] - pa[1]]);
        let (d1, d2) = (u[b] - u[a], u[c] - u[a]);
        let det = e1[0] * e2[1] - e1[1] * e2[0];
        let gx = (d1 * e2[1] - d2 * e1[1]) / det;
        let gy = (e1[0] * d2 - e2[0] * d1) / det;
        let s = (gx * gx + gy * gy).sqrt();
        let q = match material.local(mesh.pixel_of_triangle(t)) {
            LocalLaw::Linear(c) => 0.5 * c * s * s,
            LocalLaw::Nonlinear(law) => law.q_primitive(s).unwrap_or(f64::INFINITY),
            LocalLaw::Limit(_) => f64::INFINITY,
        };
        0.5 * det.abs() * q
    };
    let total = |u: &[f64]| (0..mesh.triangles.len()).map(|t| tri_energy(t, u)).sum::<f64>();
    let mut energy = total(&u);
    let mut history = vec![energy];
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        for &v in &interior {
            let x0 = u[v];
            let mut phi = |x: f64| {
                let old = u[v];
                u[v] = x;
                let e = star[v].iter().map(|&t| tri_energy(t, &u)).sum::<f64>();
                u[v] = old;
                e
            };
            let x = line_min(&mut phi, x0, 1e-2 * scale);
            let better = phi(x) <= phi(x0);
            if better {
                u[v] = x;
            }
        }
        let e = total(&u);
        history.push(e);
        let change = energy - e;
        energy = e;
        if change.abs() <= 1e-12 || sweeps >= 200_000 {
            break;
        }
    }
    Ok(DenseMinimum { energy, u, sweeps, history })
}

/// Dense P1 stiffness matrix over all vertices from the cotangent formula,
/// for a per-pixel linear coefficient.
pub fn dense_stiffness(mesh: &StructuredTriMesh, coeffs: &[f64]) -> DMatrix<f64> {
    let n = mesh.num_vertices();
    let mut k = DMatrix::zeros(n, n);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let c = coeffs[mesh.pixel_of_triangle(t)];
        for i in 0..3 {
            let (a, b, o) = (tri[i], tri[(i + 1) % 3], tri[(i + 2) % 3]);
            let (pa, pb, po) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[o]);
            let (u, w) = ([pa[0] - po[0], pa[1] - po[1]], [pb[0] - po[0], pb[1] - po[1]]);
            let cot = (u[0] * w[0] + u[1] * w[1]) / (u[0] * w[1] - u[1] * w[0]).abs();
            let kab = -0.5 * c * cot;
            k[(a, b)] += kab;
            k[(b, a)] += kab;
            k[(a, a)] -= kab;
            k[(b, b)] -= kab;
        }
    }
    k
}

fn random_zero_mean(rng: &mut ChaCha8Rng, mesh: &StructuredTriMesh, amplitude: f64) -> Vec<f64> {
    let w = mesh.boundary_weights();
    loop {
        let raw: Vec<f64> = (0..w.len()).map(|_| amplitude * rng.random_range(-1.0..1.0)).collect();
        if let Ok(f) = zero_mean_project(&w, &raw) {
            return f;
        }
    }
}

fn random_region(rng: &mut ChaCha8Rng, n: usize) -> CellRegion {
    let w = rng.random_range(1..=n - 2);
    let h = rng.random_range(1..=n - 2);
    let i = rng.random_range(1..=n - 1 - w);
    let j = rng.random_range(1..=n - 1 - h);
    CellRegion::rect(n, n, i, j, w, h).expect("fits by construction")
}

fn random_sigmoid(rng: &mut ChaCha8Rng, a_min: f64) -> (f64, f64, f64) {
    (a_min + rng.random_range(0.0..1.0), rng.random_range(0.1..2.0), rng.random_range(0.2..2.0))
}

/// Randomized `γ₁ ≤ γ₂` pairs on small meshes; each trial checks `P₁ ≤ P₂`.
pub fn pointwise_monotonicity_suite(n_trials: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = SolverOptions::default();
    let mut out = Vec::with_capacity(n_trials + 2);

    let mesh = build_mesh(6, 6, (1.0, 1.0))?;
    let f = random_zero_mean(&mut rng, &mesh, 1.0);
    let bg: Vec<f64> = (0..36).map(|_| rng.random_range(0.5..1.5)).collect();
    let m1 = MaterialAssignment::background_only(6, 6, bg.clone())?;
    let m2 = MaterialAssignment::background_only(6, 6, bg.iter().map(|v| 2.0 * v).collect())?;
    let (p1, p2) = (power_product(&mesh, &m1, &f, &opts)?, power_product(&mesh, &m2, &f, &opts)?);
    out.push(OracleReport::compare("linear doubling P2 = 2 P1", p2, 2.0 * p1, 1e-9, true));
    let law = MaterialLaw::bounded(LawShape::Sigmoid { a: 2.0, b: 1.0, s0: 0.5 }, 2.0, 3.0)?;
    let same = MaterialAssignment::with_anomaly(bg.clone(), random_region(&mut rng, 6), law, Contrast::High)?;
    let p = power_product(&mesh, &same, &f, &opts)?;
    out.push(OracleReport::compare("identical materials", p, power_product(&mesh, &same.clone(), &f, &opts)?, 1e-12, true));

    for trial in 0..n_trials {
        let n = rng.random_range(3..=8);
        let mesh = build_mesh(n, n, (1.0, 1.0))?;
        let amp = rng.random_range(0.1..3.0);
        let f = random_zero_mean(&mut rng, &mesh, amp);
        let bg1: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.5..1.5)).collect();
        let bg2: Vec<f64> = bg1.iter().map(|v| (v + rng.random_range(0.0..0.4)).min(1.9)).collect();
        let region = random_region(&mut rng, n);
        let (a1, b1, s0) = random_sigmoid(&mut rng, 2.0);
        let (a2, b2) = (a1 + rng.random_range(0.0..0.5), b1 + rng.random_range(0.0..0.5));
        let l1 = MaterialLaw::bounded(LawShape::Sigmoid { a: a1, b: b1, s0 }, a1, a1 + b1)?;
        let l2 = MaterialLaw::bounded(LawShape::Sigmoid { a: a2, b: b2, s0 }, a2, a2 + b2)?;
        let g1 = MaterialAssignment::with_anomaly(bg1, region.clone(), l1, Contrast::High)?;
        let g2 = MaterialAssignment::with_anomaly(bg2, region, l2, Contrast::High)?;
        let (p1, p2) = (power_product(&mesh, &g1, &f, &opts)?, power_product(&mesh, &g2, &f, &opts)?);
        out.push(OracleReport::at_most(format!("trial {trial}: P1 ≤ P2"), p1, p2, 1e-8 * p2.abs().max(1.0)));
    }
    Ok(out)
}

/// Laws exercised by the gradient checks.
pub fn fd_laws() -> Vec<(&'static str, MaterialLaw)> {
    vec![
        ("linear", MaterialLaw::constant(2.5).expect("valid")),
        ("affine", MaterialLaw::bounded(LawShape::Affine { a: 2.0, b: 1.0 }, 2.0, 1e6).expect("valid")),
        (
            "power q=4",
            MaterialLaw::growth(LawShape::Power { c: 2.0, s0: 1.0, q: 4.0 }, None, 2.0, 4.0, 1.0).expect("valid"),
        ),
        ("sigmoid", MaterialLaw::bounded(LawShape::Sigmoid { a: 2.0, b: 1.0, s0: 0.5 }, 2.0, 3.0).expect("valid")),
    ]
}

/// Central differences of the discrete energy against its analytic gradient on
/// random states (step `1e−6·scale`, relative tolerance `1e−5`).
pub fn fd_gradient_suite(n_trials: usize, seed: u64) -> Result<Vec<OracleReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let laws = fd_laws();
    let mut out = Vec::with_capacity(n_trials);
    for trial in 0..n_trials {
        let (name, law) = &laws[trial % laws.len()];
        let n = rng.random_range(2..=5);
        let mesh = build_mesh(n, n, (1.0, 1.0))?;
        let material = if law.class == LawClass::Linear {
            MaterialAssignment::background_only(n, n, (0..n * n).map(|_| rng.random_range(0.5..2.0)).collect())?
        } else {
            // The region covers Ω, so the contrast side only selects which declared bound is read.
            let contrast = if law.lower.is_some() { Contrast::High } else { Contrast::Low };
            MaterialAssignment::with_anomaly(vec![1.0; n * n], CellRegion::full(n, n), law.clone(), contrast)?
        };
        let scale = rng.random_range(0.3..3.0);
        let u: Vec<f64> = (0..mesh.num_vertices()).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let g = energy_gradient(&mesh, &material, &u)?;
        let h = 1e-6 * scale;
        let (mut diff2, mut norm2) = (0.0, 0.0);
        for v in (0..mesh.num_vertices()).filter(|&v| !mesh.is_boundary_vertex(v)) {
            let mut up = u.clone();
            up[v] += h;
            let mut dn = u.clone();
            dn[v] -= h;
            let fd = (discrete_energy(&mesh, &material, &up)? - discrete_energy(&mesh, &material, &dn)?) / (2.0 * h);
            diff2 += (fd - g[v]).powi(2);
            norm2 += g[v] * g[v];
        }
        let rel = (diff2 / norm2.max(f64::MIN_POSITIVE)).sqrt();
        out.push(OracleReport {
            quantity: format!("trial {trial} ({name}, {n}×{n}): ‖∇E − FD‖/‖∇E‖"),
            main: rel,
            oracle: 0.0,
            abs_err: diff2.sqrt(),
            rel_err: rel,
            tolerance: 1e-5,
            pass: rel <= 1e-5,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_forward;

    #[test]
    fn dense_linear_affine_data() {
        let mesh = build_mesh(3, 3, (1.0, 1.0)).unwrap();
        let m = MaterialAssignment::uniform(3, 3, 1.0).unwrap();
        let f: Vec<f64> = mesh.boundary_coordinates().iter().map(|p| p[0]).collect();
        let d = dense_minimize(&mesh, &m, &f).unwrap();
        assert!((d.energy - 0.5).abs() < 1e-10);
        assert!(d.history.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn dense_matches_newton_on_sigmoid() {
        let mesh = build_mesh(3, 3, (1.0, 1.0)).unwrap();
        let law = MaterialLaw::bounded(LawShape::Sigmoid { a: 2.0, b: 1.0, s0: 0.5 }, 2.0, 3.0).unwrap();
        let m = MaterialAssignment::with_anomaly(vec![1.0; 9], CellRegion::rect(3, 3, 1, 1, 1, 1).unwrap(), law, Contrast::High)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_zero_mean(&mut rng, &mesh, 2.0);
        let d = dense_minimize(&mesh, &m, &f).unwrap();
        let s = solve_forward(&mesh, &m, &f, &SolverOptions::default()).unwrap();
        assert!((d.energy - s.energy).abs() < 1e-8, "{} {}", d.energy, s.energy);
    }

    #[test]
    fn dof_cap_enforced() {
        let mesh = build_mesh(8, 8, (1.0, 1.0)).unwrap();
        let m = MaterialAssignment::uniform(8, 8, 1.0).unwrap();
        assert!(dense_minimize(&mesh, &m, &[0.0; 32]).is_ok());
        let mesh = build_mesh(9, 9, (1.0, 1.0)).unwrap();
        let m = MaterialAssignment::uniform(9, 9, 1.0).unwrap();
        assert!(matches!(dense_minimize(&mesh, &m, &[0.0; 36]), Err(Error::OracleLimit(_))));
    }

    #[test]
    fn cotangent_stiffness_matches_linear_residual() {
        let mesh = build_mesh(4, 3, (1.0, 0.6)).unwrap();
        let coeffs: Vec<f64> = (0..12).map(|p| 1.0 + 0.1 * p as f64).collect();
        let m = MaterialAssignment::background_only(4, 3, coeffs.clone()).unwrap();
        let u: Vec<f64> = (0..mesh.num_vertices()).map(|v| ((v * 7) % 5) as f64 - 2.0).collect();
        let k = dense_stiffness(&mesh, &coeffs);
        let ku = &k * nalgebra::DVector::from_vec(u.clone());
        let r = energy_gradient(&mesh, &m, &u).unwrap();
        for v in (0..mesh.num_vertices()).filter(|&v| !mesh.is_boundary_vertex(v)) {
            assert!((ku[v] - r[v]).abs() < 1e-12);
        }
    }

    #[test]
    fn suites_pass_small() {
        assert!(fd_gradient_suite(8, 1).unwrap().iter().all(|r| r.pass));
        assert!(pointwise_monotonicity_suite(5, 2).unwrap().iter().all(|r| r.pass));
    }
}
