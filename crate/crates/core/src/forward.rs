//! P1 finite elements for `−div(γ(|∇u|)∇u) = 0` with Dirichlet data on the rim.
//!
//! The discrete solution minimises `E(u) = Σ_t area_t · Q_t(|∇u_t|)` over the
//! free vertex values. Perfect conductors tie all vertices of an anomaly
//! component to one unknown; perfect insulators drop the anomaly triangles
//! (natural zero-flux condition) and fill the inside harmonically afterwards.

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::StructuredTriMesh;
use crate::materials::{LawClass, LocalLaw, MaterialAssignment};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop when `‖r‖ ≤ rtol·(1 + ‖r₀‖)`.
    pub rtol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    pub armijo: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, max_iter: 200, max_backtracks: 40, armijo: 1e-4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub backtracks: usize,
    pub gradient_fallbacks: usize,
    pub tied_components: usize,
    pub floating_components: usize,
    pub linear: bool,
}

#[derive(Debug, Clone)]
pub struct ForwardSolution {
    /// Nodal values at every mesh vertex.
    pub u: Vec<f64>,
    /// Constant gradient on every triangle.
    pub gradients: Vec<[f64; 2]>,
    /// Discrete Dirichlet energy; equals the average power product.
    pub energy: f64,
    pub power_avg: f64,
    /// `Σ area·γ(|∇u|)·|∇u|²`.
    pub power_classical: f64,
    pub stats: SolveStats,
}

/// Per-triangle vertex lists, P1 basis gradients and areas.
#[derive(Debug, Clone)]
pub struct TriGeometry {
    pub verts: Vec<[usize; 3]>,
    pub grads: Vec<[[f64; 2]; 3]>,
    pub area: Vec<f64>,
}

impl TriGeometry {
    pub fn new(mesh: &StructuredTriMesh) -> Self {
        let mut grads = Vec::with_capacity(mesh.triangles.len());
        let mut area = Vec::with_capacity(mesh.triangles.len());
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let a = mesh.signed_area(t);
            let p = tri.map(|v| mesh.vertices[v]);
            let mut g = [[0.0; 2]; 3];
            for i in 0..3 {
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                g[i] = [(p[j][1] - p[k][1]) / (2.0 * a), (p[k][0] - p[j][0]) / (2.0 * a)];
            }
            grads.push(g);
            area.push(a);
        }
        Self { verts: mesh.triangles.clone(), grads, area }
    }

    pub fn gradient(&self, t: usize, u: &[f64]) -> [f64; 2] {
        let [a, b, c] = self.verts[t];
        let g = &self.grads[t];
        [
            u[a] * g[0][0] + u[b] * g[1][0] + u[c] * g[2][0],
            u[a] * g[0][1] + u[b] * g[1][1] + u[c] * g[2][1],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Dof {
    Fixed(usize),
    Free(usize),
    Inactive,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Unknown numbering and triangle roles for one material.
struct Layout {
    dofs: Vec<Dof>,
    n_free: usize,
    /// Triangles contributing to the energy.
    active: Vec<bool>,
    limit: Option<LawClass>,
    tied_components: usize,
    floating: Vec<Vec<usize>>,
    /// Vertices touched only by insulating triangles.
    fill: Vec<usize>,
}

impl Layout {
    fn new(mesh: &StructuredTriMesh, material: &MaterialAssignment) -> Self {
        let nv = mesh.num_vertices();
        let nt = mesh.triangles.len();
        let limit = material.limit_class();
        let in_anomaly: Vec<bool> = (0..nt).map(|t| material.anomaly().contains(mesh.pixel_of_triangle(t))).collect();
        let mut dofs = vec![Dof::Inactive; nv];
        let mut active = vec![true; nt];
        let mut tied_components = 0;
        let mut floating = Vec::new();
        let mut fill = Vec::new();
        let mut n_free = 0;

        match limit {
            Some(LawClass::Pec) => {
                let mut uf = UnionFind::new(nv);
                let mut tied = vec![false; nv];
                for t in (0..nt).filter(|&t| in_anomaly[t]) {
                    active[t] = false;
                    let [a, b, c] = mesh.triangles[t];
                    uf.union(a, b);
                    uf.union(a, c);
                    tied[a] = true;
                    tied[b] = true;
                    tied[c] = true;
                }
                let mut root_dof = vec![usize::MAX; nv];
                for v in 0..nv {
                    if let Some(slot) = mesh.boundary_slot(v) {
                        dofs[v] = Dof::Fixed(slot);
                    } else if tied[v] {
                        let r = uf.find(v);
                        if root_dof[r] == usize::MAX {
                            root_dof[r] = n_free;
                            n_free += 1;
                            tied_components += 1;
                        }
                        dofs[v] = Dof::Free(root_dof[r]);
                    } else {
                        dofs[v] = Dof::Free(n_free);
                        n_free += 1;
                    }
                }
            }
            Some(LawClass::Pei) => {
                // Vertex nv is a virtual node joining the whole rim.
                let mut uf = UnionFind::new(nv + 1);
                let mut touched = vec![false; nv];
                for t in 0..nt {
                    if in_anomaly[t] {
                        active[t] = false;
                        continue;
                    }
                    let [a, b, c] = mesh.triangles[t];
                    uf.union(a, b);
                    uf.union(a, c);
                    touched[a] = true;
                    touched[b] = true;
                    touched[c] = true;
                }
                for &v in &mesh.boundary_vertices {
                    uf.union(v, nv);
                }
                let rim_root = uf.find(nv);
                let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
                for v in 0..nv {
                    if !touched[v] {
                        fill.push(v);
                        continue;
                    }
                    let r = uf.find(v);
                    if r != rim_root {
                        match groups.iter_mut().find(|(root, _)| *root == r) {
                            Some((_, g)) => g.push(v),
                            None => groups.push((r, vec![v])),
                        }
                        continue;
                    }
                    if let Some(slot) = mesh.boundary_slot(v) {
                        dofs[v] = Dof::Fixed(slot);
                    } else {
                        dofs[v] = Dof::Free(n_free);
                        n_free += 1;
                    }
                }
                floating = groups.into_iter().map(|(_, g)| g).collect();
                // Floating cavities carry no energy.
                for t in 0..nt {
                    if active[t] && mesh.triangles[t].iter().any(|&v| dofs[v] == Dof::Inactive) {
                        active[t] = false;
                    }
                }
            }
            _ => {
                for v in 0..nv {
                    dofs[v] = match mesh.boundary_slot(v) {
                        Some(slot) => Dof::Fixed(slot),
                        None => {
                            n_free += 1;
                            Dof::Free(n_free - 1)
                        }
                    };
                }
            }
        }
        Self { dofs, n_free, active, limit, tied_components, floating, fill }
    }

    fn expand(&self, x: &[f64], f: &[f64]) -> Vec<f64> {
        self.dofs
            .iter()
            .map(|d| match *d {
                Dof::Fixed(s) => f[s],
                Dof::Free(k) => x[k],
                Dof::Inactive => 0.0,
            })
            .collect()
    }
}

fn check_inputs(mesh: &StructuredTriMesh, material: &MaterialAssignment, f: &[f64]) -> Result<()> {
    if material.dims() != (mesh.nx, mesh.ny) {
        return Err(Error::DimensionMismatch { expected: (mesh.nx, mesh.ny), found: material.dims() });
    }
    if f.len() != mesh.boundary_vertices.len() {
        return Err(Error::InvalidBoundaryData(format!(
            "expected {} boundary values, got {}",
            mesh.boundary_vertices.len(),
            f.len()
        )));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidBoundaryData("non-finite boundary value".into()));
    }
    Ok(())
}

/// Local energy density, coefficient `γ` and flux Hessian for gradient `g`.
fn local_response(law: LocalLaw<'_>, g: [f64; 2], with_hessian: bool) -> Result<(f64, f64, [[f64; 2]; 2])> {
    let s2 = g[0] * g[0] + g[1] * g[1];
    match law {
        LocalLaw::Linear(c) => Ok((0.5 * c * s2, c, [[c, 0.0], [0.0, c]])),
        LocalLaw::Nonlinear(law) => {
            let s = s2.sqrt();
            let q = law.q_primitive(s)?;
            let se = s.max(1e-14);
            let gamma = law.gamma(se);
            let mut h = [[gamma, 0.0], [0.0, gamma]];
            if with_hessian && s > 0.0 {
                // Eigenvalue along ĝ is (γ s)' = γ + γ' s; floored to stay positive.
                let along = (law.dgamma_or_secant(se) * s).max(1e-8 * gamma - gamma);
                let (ux, uy) = (g[0] / s, g[1] / s);
                h[0][0] += along * ux * ux;
                h[0][1] += along * ux * uy;
                h[1][0] += along * ux * uy;
                h[1][1] += along * uy * uy;
            }
            Ok((q, gamma, h))
        }
        LocalLaw::Limit(class) => Err(Error::NoEvaluator(class.name())),
    }
}

struct System<'a> {
    mesh: &'a StructuredTriMesh,
    geo: TriGeometry,
    layout: Layout,
    material: &'a MaterialAssignment,
}

struct Assembled {
    energy: f64,
    residual: Vec<f64>,
    hessian: Option<CscMatrix<f64>>,
}

impl<'a> System<'a> {
    fn new(mesh: &'a StructuredTriMesh, material: &'a MaterialAssignment) -> Self {
        Self { mesh, geo: TriGeometry::new(mesh), layout: Layout::new(mesh, material), material }
    }

    fn law(&self, t: usize) -> LocalLaw<'a> {
        self.material.local(self.mesh.pixel_of_triangle(t))
    }

    fn energy(&self, u: &[f64]) -> Result<f64> {
        let mut e = 0.0;
        for t in (0..self.geo.verts.len()).filter(|&t| self.layout.active[t]) {
            let g = self.geo.gradient(t, u);
            e += self.geo.area[t] * local_response(self.law(t), g, false)?.0;
        }
        Ok(e)
    }

    fn assemble(&self, u: &[f64], with_hessian: bool) -> Result<Assembled> {
        let n = self.layout.n_free;
        let mut residual = vec![0.0; n];
        let mut coo = with_hessian.then(|| CooMatrix::new(n, n));
        let mut energy = 0.0;
        for t in (0..self.geo.verts.len()).filter(|&t| self.layout.active[t]) {
            let g = self.geo.gradient(t, u);
            let (q, gamma, h) = local_response(self.law(t), g, with_hessian)?;
            let area = self.geo.area[t];
            energy += area * q;
            let grads = &self.geo.grads[t];
            let ids = self.geo.verts[t].map(|v| match self.layout.dofs[v] {
                Dof::Free(k) => Some(k),
                _ => None,
            });
            for i in 0..3 {
                let Some(ki) = ids[i] else { continue };
                residual[ki] += area * gamma * (g[0] * grads[i][0] + g[1] * grads[i][1]);
                if let Some(coo) = coo.as_mut() {
                    let hg = [
                        h[0][0] * grads[i][0] + h[0][1] * grads[i][1],
                        h[1][0] * grads[i][0] + h[1][1] * grads[i][1],
                    ];
                    for j in 0..3 {
                        if let Some(kj) = ids[j] {
                            coo.push(ki, kj, area * (hg[0] * grads[j][0] + hg[1] * grads[j][1]));
                        }
                    }
                }
            }
        }
        Ok(Assembled { energy, residual, hessian: coo.map(|c| CscMatrix::from(&c)) })
    }

    fn free_values(&self, u: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.layout.n_free];
        for (v, d) in self.layout.dofs.iter().enumerate() {
            if let Dof::Free(k) = *d {
                x[k] = u[v];
            }
        }
        x
    }

    /// PEI post-processing plus gradients, powers and stats.
    fn finish(&self, mut u: Vec<f64>, mut stats: SolveStats) -> Result<ForwardSolution> {
        if self.layout.limit == Some(LawClass::Pei) {
            self.fill_insulator(&mut u)?;
        }
        let nt = self.geo.verts.len();
        let mut gradients = Vec::with_capacity(nt);
        let (mut energy, mut classical) = (0.0, 0.0);
        for t in 0..nt {
            let g = self.geo.gradient(t, &u);
            if self.layout.active[t] {
                let (q, gamma, _) = local_response(self.law(t), g, false)?;
                energy += self.geo.area[t] * q;
                classical += self.geo.area[t] * gamma * (g[0] * g[0] + g[1] * g[1]);
            }
            gradients.push(if self.layout.limit == Some(LawClass::Pec) && !self.layout.active[t] {
                [0.0, 0.0]
            } else {
                g
            });
        }
        stats.tied_components = self.layout.tied_components;
        stats.floating_components = self.layout.floating.len();
        Ok(ForwardSolution { u, gradients, energy, power_avg: energy, power_classical: classical, stats })
    }

    /// Floating cavities take the mean of the trace on the insulator's outer
    /// border; the inside is then filled with a unit-coefficient harmonic extension.
    fn fill_insulator(&self, u: &mut [f64]) -> Result<()> {
        if !self.layout.floating.is_empty() {
            let nv = u.len();
            let mut on_border = vec![false; nv];
            for t in (0..self.geo.verts.len()).filter(|&t| self.material.anomaly().contains(self.mesh.pixel_of_triangle(t))) {
                for &v in &self.geo.verts[t] {
                    on_border[v] = true;
                }
            }
            let border: Vec<f64> = (0..nv)
                .filter(|&v| on_border[v] && !matches!(self.layout.dofs[v], Dof::Inactive))
                .map(|v| u[v])
                .collect();
            let c = if border.is_empty() { 0.0 } else { border.iter().sum::<f64>() / border.len() as f64 };
            for g in &self.layout.floating {
                for &v in g {
                    u[v] = c;
                }
            }
        }
        let fill = &self.layout.fill;
        if fill.is_empty() {
            return Ok(());
        }
        let mut index = vec![usize::MAX; u.len()];
        for (k, &v) in fill.iter().enumerate() {
            index[v] = k;
        }
        let n = fill.len();
        let mut coo = CooMatrix::new(n, n);
        let mut rhs = vec![0.0; n];
        for t in 0..self.geo.verts.len() {
            let verts = self.geo.verts[t];
            if !verts.iter().any(|&v| index[v] != usize::MAX) {
                continue;
            }
            let (grads, area) = (&self.geo.grads[t], self.geo.area[t]);
            for i in 0..3 {
                let ki = index[verts[i]];
                if ki == usize::MAX {
                    continue;
                }
                for j in 0..3 {
                    let kij = area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                    match index[verts[j]] {
                        usize::MAX => rhs[ki] -= kij * u[verts[j]],
                        kj => coo.push(ki, kj, kij),
                    }
                }
            }
        }
        let x = cholesky_solve(&CscMatrix::from(&coo), &rhs)?;
        for (k, &v) in fill.iter().enumerate() {
            u[v] = x[k];
        }
        Ok(())
    }
}

fn factor(a: &CscMatrix<f64>) -> Result<CscCholesky<f64>> {
    CscCholesky::factor(a).map_err(|e| Error::LinearSolve(format!("{e:?}")))
}

fn cholesky_solve(a: &CscMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    if b.is_empty() {
        return Ok(Vec::new());
    }
    let chol = factor(a)?;
    let x = chol.solve(&DMatrix::from_column_slice(b.len(), 1, b));
    Ok(x.as_slice().to_vec())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves the forward problem for boundary data `f` given in rim-loop order.
pub fn solve_forward(
    mesh: &StructuredTriMesh,
    material: &MaterialAssignment,
    f: &[f64],
    opts: &SolverOptions,
) -> Result<ForwardSolution> {
    check_inputs(mesh, material, f)?;
    if material.is_linear() || material.limit_class().is_some() {
        return LinearSolver::new(mesh, material)?.solve(f);
    }
    let sys = System::new(mesh, material);
    let bg = MaterialAssignment::background_only(mesh.nx, mesh.ny, material.background().to_vec())?;
    let u0 = LinearSolver::new(mesh, &bg)?.solve(f)?.u;
    let mut x = sys.free_values(&u0);
    let mut stats = SolveStats::default();
    let eps_e = 8.0 * f64::EPSILON;

    let mut r0 = None;
    loop {
        let u = sys.layout.expand(&x, f);
        let asm = sys.assemble(&u, true)?;
        let rn = norm(&asm.residual);
        stats.residual_history.push(rn);
        let r0n = *r0.get_or_insert(rn);
        if rn <= opts.rtol * (1.0 + r0n) {
            return sys.finish(u, stats);
        }
        if stats.iterations >= opts.max_iter {
            return Err(Error::NotConverged { iterations: stats.iterations, history: stats.residual_history });
        }
        stats.iterations += 1;

        let hessian = asm.hessian.as_ref().expect("assembled with Hessian");
        let neg: Vec<f64> = asm.residual.iter().map(|r| -r).collect();
        let newton = factor(hessian).map(|c| c.solve(&DMatrix::from_column_slice(neg.len(), 1, &neg)).as_slice().to_vec());

        let slack = eps_e * asm.energy.abs();
        let try_direction = |d: &[f64], stats: &mut SolveStats| -> Result<Option<Vec<f64>>> {
            let slope: f64 = asm.residual.iter().zip(d).map(|(r, d)| r * d).sum();
            if !(slope < 0.0) {
                return Ok(None);
            }
            let mut alpha = 1.0;
            for _ in 0..=opts.max_backtracks {
                let trial: Vec<f64> = x.iter().zip(d).map(|(x, d)| x + alpha * d).collect();
                let e = sys.energy(&sys.layout.expand(&trial, f))?;
                if e <= asm.energy + opts.armijo * alpha * slope + slack {
                    return Ok(Some(trial));
                }
                alpha *= 0.5;
                stats.backtracks += 1;
            }
            Ok(None)
        };

        let mut next = match &newton {
            Ok(d) => try_direction(d, &mut stats)?,
            Err(_) => None,
        };
        if next.is_none() {
            stats.gradient_fallbacks += 1;
            // Scale the steepest-descent step by the Newton-model curvature along −r.
            let hr = spmv(hessian, &asm.residual);
            let curv: f64 = asm.residual.iter().zip(&hr).map(|(a, b)| a * b).sum();
            let step = if curv > 0.0 { rn * rn / curv } else { 1.0 };
            let d: Vec<f64> = neg.iter().map(|v| v * step).collect();
            next = try_direction(&d, &mut stats)?;
        }
        match next {
            Some(trial) => x = trial,
            None => return Err(Error::Stalled { iterations: stats.iterations, residual: rn / (1.0 + r0n) }),
        }
    }
}

fn spmv(a: &CscMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    for (j, col) in (0..a.ncols()).map(|j| (j, a.col(j))) {
        for (&i, &v) in col.row_indices().iter().zip(col.values()) {
            y[i] += v * x[j];
        }
    }
    y
}

/// Linear material (possibly with a PEC/PEI limit) factored once for many excitations.
pub struct LinearSolver<'a> {
    sys: System<'a>,
    chol: Option<CscCholesky<f64>>,
}

impl<'a> LinearSolver<'a> {
    pub fn new(mesh: &'a StructuredTriMesh, material: &'a MaterialAssignment) -> Result<Self> {
        if material.dims() != (mesh.nx, mesh.ny) {
            return Err(Error::DimensionMismatch { expected: (mesh.nx, mesh.ny), found: material.dims() });
        }
        if !material.is_linear() && material.limit_class().is_none() {
            return Err(Error::InvalidParameter("linear solver needs an s-independent material".into()));
        }
        let sys = System::new(mesh, material);
        let zero = vec![0.0; mesh.num_vertices()];
        let chol = if sys.layout.n_free == 0 {
            None
        } else {
            let asm = sys.assemble(&zero, true)?;
            Some(factor(asm.hessian.as_ref().expect("assembled with Hessian"))?)
        };
        Ok(Self { sys, chol })
    }

    fn free_solution(&self, f: &[f64]) -> Result<Vec<f64>> {
        check_inputs(self.sys.mesh, self.sys.material, f)?;
        let u = self.sys.layout.expand(&vec![0.0; self.sys.layout.n_free], f);
        let r = self.sys.assemble(&u, false)?.residual;
        Ok(match &self.chol {
            Some(chol) => {
                let neg: Vec<f64> = r.iter().map(|v| -v).collect();
                chol.solve(&DMatrix::from_column_slice(neg.len(), 1, &neg)).as_slice().to_vec()
            }
            None => Vec::new(),
        })
    }

    pub fn solve(&self, f: &[f64]) -> Result<ForwardSolution> {
        let x = self.free_solution(f)?;
        let stats = SolveStats { linear: true, iterations: 1, ..SolveStats::default() };
        self.sys.finish(self.sys.layout.expand(&x, f), stats)
    }

    /// Average power product only (skips the insulator fill).
    pub fn power(&self, f: &[f64]) -> Result<f64> {
        let x = self.free_solution(f)?;
        self.sys.energy(&self.sys.layout.expand(&x, f))
    }
}

/// `P₁(f) − P₀(f)` for two linear materials without cancellation:
/// `½∫(γ₁−γ₀)|∇u₀|² − ½ wᵀK₁w` with `K₁w = −(K₁−K₀)u₀`.
pub fn linear_power_gap(
    mesh: &StructuredTriMesh,
    perturbed: &MaterialAssignment,
    reference: &MaterialAssignment,
    f: &[f64],
) -> Result<f64> {
    let (Some(c1), Some(c0)) = (perturbed.linear_coefficients(), reference.linear_coefficients()) else {
        return Err(Error::InvalidParameter("power gap needs two linear materials".into()));
    };
    let s0 = LinearSolver::new(mesh, reference)?;
    let s1 = LinearSolver::new(mesh, perturbed)?;
    let u0 = s0.sys.layout.expand(&s0.free_solution(f)?, f);
    let geo = &s0.sys.geo;
    let mut r = vec![0.0; s1.sys.layout.n_free];
    let mut gap = 0.0;
    for t in 0..geo.verts.len() {
        let p = mesh.pixel_of_triangle(t);
        let dc = c1[p] - c0[p];
        if dc == 0.0 {
            continue;
        }
        let g = geo.gradient(t, &u0);
        gap += 0.5 * geo.area[t] * dc * (g[0] * g[0] + g[1] * g[1]);
        for i in 0..3 {
            if let Dof::Free(k) = s1.sys.layout.dofs[geo.verts[t][i]] {
                r[k] += geo.area[t] * dc * (g[0] * geo.grads[t][i][0] + g[1] * geo.grads[t][i][1]);
            }
        }
    }
    if let Some(chol) = &s1.chol {
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let w = chol.solve(&DMatrix::from_column_slice(neg.len(), 1, &neg));
        gap += 0.5 * w.as_slice().iter().zip(&r).map(|(w, r)| w * r).sum::<f64>();
    }
    Ok(gap)
}

/// Average power product `⟨Λ̄(f), f⟩` of a material for one excitation.
pub fn power_product(
    mesh: &StructuredTriMesh,
    material: &MaterialAssignment,
    f: &[f64],
    opts: &SolverOptions,
) -> Result<f64> {
    Ok(solve_forward(mesh, material, f, opts)?.power_avg)
}

/// Energy of arbitrary nodal values under `material` (used by oracles and tests).
pub fn discrete_energy(mesh: &StructuredTriMesh, material: &MaterialAssignment, u: &[f64]) -> Result<f64> {
    if material.limit_class().is_some() {
        return Err(Error::NoEvaluator("limit material"));
    }
    let sys = System::new(mesh, material);
    sys.energy(u)
}

/// Free-vertex gradient of the discrete energy, indexed by mesh vertex (zero on the rim).
pub fn energy_gradient(mesh: &StructuredTriMesh, material: &MaterialAssignment, u: &[f64]) -> Result<Vec<f64>> {
    if material.limit_class().is_some() {
        return Err(Error::NoEvaluator("limit material"));
    }
    let sys = System::new(mesh, material);
    let r = sys.assemble(u, false)?.residual;
    Ok(sys
        .layout
        .dofs
        .iter()
        .map(|d| match *d {
            Dof::Free(k) => r[k],
            _ => 0.0,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, CellRegion};
    use crate::materials::{Contrast, LawShape, MaterialLaw};

    fn affine_data(mesh: &StructuredTriMesh) -> Vec<f64> {
        mesh.boundary_coordinates().iter().map(|p| p[0] - 0.5 * mesh.extent.0).collect()
    }

    #[test]
    fn linear_exact_for_affine_data() {
        let mesh = build_mesh(4, 4, (1.0, 1.0)).unwrap();
        let m = MaterialAssignment::uniform(4, 4, 1.0).unwrap();
        let sol = solve_forward(&mesh, &m, &affine_data(&mesh), &SolverOptions::default()).unwrap();
        assert!((sol.power_avg - 0.5).abs() < 1e-12);
        assert!((sol.power_classical - 1.0).abs() < 1e-12);
        for (v, p) in mesh.vertices.iter().enumerate() {
            assert!((sol.u[v] - (p[0] - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn one_by_one_mesh_has_no_unknowns() {
        let mesh = build_mesh(1, 1, (1.0, 1.0)).unwrap();
        let m = MaterialAssignment::uniform(1, 1, 2.0).unwrap();
        let sol = solve_forward(&mesh, &m, &[0.0, 1.0, 1.0, 0.0], &SolverOptions::default()).unwrap();
        assert!((sol.power_avg - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_data() {
        let mesh = build_mesh(2, 2, (1.0, 1.0)).unwrap();
        let m = MaterialAssignment::uniform(2, 2, 1.0).unwrap();
        assert!(matches!(
            solve_forward(&mesh, &m, &[0.0; 3], &SolverOptions::default()),
            Err(Error::InvalidBoundaryData(_))
        ));
        let m3 = MaterialAssignment::uniform(3, 3, 1.0).unwrap();
        assert!(matches!(
            solve_forward(&mesh, &m3, &[0.0; 8], &SolverOptions::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn newton_converges_quadratically_for_sigmoid() {
        let mesh = build_mesh(8, 8, (1.0, 1.0)).unwrap();
        let law = MaterialLaw::bounded(LawShape::Sigmoid { a: 2.0, b: 1.0, s0: 0.5 }, 2.0, 3.0).unwrap();
        let m = MaterialAssignment::with_anomaly(vec![1.0; 64], CellRegion::rect(8, 8, 2, 2, 4, 4).unwrap(), law, Contrast::High)
            .unwrap();
        let f: Vec<f64> = affine_data(&mesh).iter().map(|v| 3.0 * v).collect();
        let sol = solve_forward(&mesh, &m, &f, &SolverOptions::default()).unwrap();
        assert!(sol.stats.iterations < 15, "{:?}", sol.stats);
        let g = energy_gradient(&mesh, &m, &sol.u).unwrap();
        assert!(norm(&g) < 1e-9);
        assert!((sol.energy - discrete_energy(&mesh, &m, &sol.u).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pec_and_pei_bracket_the_anomaly() {
        let mesh = build_mesh(8, 8, (1.0, 1.0)).unwrap();
        let a = CellRegion::rect(8, 8, 3, 3, 2, 2).unwrap();
        let bg = vec![1.0; 64];
        let f = affine_data(&mesh);
        let opts = SolverOptions::default();
        let p0 = power_product(&mesh, &crate::materials::build_limit_material(&bg, &a, LawClass::Pei).unwrap(), &f, &opts).unwrap();
        let pinf = power_product(&mesh, &crate::materials::build_limit_material(&bg, &a, LawClass::Pec).unwrap(), &f, &opts).unwrap();
        let law = MaterialLaw::bounded(LawShape::Sigmoid { a: 2.0, b: 1.0, s0: 1.0 }, 2.0, 3.0).unwrap();
        let pa = power_product(&mesh, &MaterialAssignment::with_anomaly(bg.clone(), a, law, Contrast::High).unwrap(), &f, &opts)
            .unwrap();
        let pbg = power_product(&mesh, &MaterialAssignment::uniform(8, 8, 1.0).unwrap(), &f, &opts).unwrap();
        assert!(p0 < pbg && pbg < pa && pa < pinf, "{p0} {pbg} {pa} {pinf}");
    }

    #[test]
    fn pec_ring_counts_and_pei_cavity_floats() {
        let mesh = build_mesh(8, 8, (1.0, 1.0)).unwrap();
        let ring = CellRegion::rect(8, 8, 2, 2, 4, 4).unwrap().difference(&CellRegion::rect(8, 8, 3, 3, 2, 2).unwrap()).unwrap();
        let bg = vec![1.0; 64];
        let f = affine_data(&mesh);
        let opts = SolverOptions::default();
        let pec = solve_forward(&mesh, &crate::materials::build_limit_material(&bg, &ring, LawClass::Pec).unwrap(), &f, &opts).unwrap();
        assert_eq!(pec.stats.tied_components, 1);
        let pei = solve_forward(&mesh, &crate::materials::build_limit_material(&bg, &ring, LawClass::Pei).unwrap(), &f, &opts).unwrap();
        assert_eq!(pei.stats.floating_components, 1);
        assert!(pei.u.iter().all(|v| v.is_finite()));
        // The cavity sits at the mean of the odd datum: zero.
        let centre = mesh.vertex_index(4, 4);
        assert!(pei.u[centre].abs() < 1e-12);
        // Diagonal contact merges conductor components.
        let diag = CellRegion::from_pixels(8, 8, [2 * 8 + 2, 3 * 8 + 3]).unwrap();
        let pec = solve_forward(&mesh, &crate::materials::build_limit_material(&bg, &diag, LawClass::Pec).unwrap(), &f, &opts).unwrap();
        assert_eq!(pec.stats.tied_components, 1);
    }

    #[test]
    fn power_gap_matches_difference() {
        let mesh = build_mesh(8, 8, (1.0, 1.0)).unwrap();
        let bg = MaterialAssignment::uniform(8, 8, 1.0).unwrap();
        let d = MaterialAssignment::with_anomaly(
            vec![1.0; 64],
            CellRegion::rect(8, 8, 3, 3, 2, 2).unwrap(),
            MaterialLaw::constant(3.0).unwrap(),
            Contrast::High,
        )
        .unwrap();
        let f = affine_data(&mesh);
        let opts = SolverOptions::default();
        let direct = power_product(&mesh, &d, &f, &opts).unwrap() - power_product(&mesh, &bg, &f, &opts).unwrap();
        let gap = linear_power_gap(&mesh, &d, &bg, &f).unwrap();
        assert!(gap > 0.0 && (gap - direct).abs() < 1e-12, "{gap} {direct}");
    }

    #[test]
    fn custom_law_without_derivative_converges() {
        let mesh = build_mesh(6, 6, (1.0, 1.0)).unwrap();
        let law = MaterialLaw::custom(LawClass::Bounded, "sig", |s| 2.0 + (s / 0.5).tanh(), Some(2.0), Some(3.0));
        let m = MaterialAssignment::with_anomaly(vec![1.0; 36], CellRegion::rect(6, 6, 2, 2, 2, 2).unwrap(), law, Contrast::High)
            .unwrap();
        let reference = MaterialLaw::bounded(LawShape::Sigmoid { a: 2.0, b: 1.0, s0: 0.5 }, 2.0, 3.0).unwrap();
        let mr = MaterialAssignment::with_anomaly(vec![1.0; 36], CellRegion::rect(6, 6, 2, 2, 2, 2).unwrap(), reference, Contrast::High)
            .unwrap();
        let f: Vec<f64> = affine_data(&mesh).iter().map(|v| 2.0 * v).collect();
        let opts = SolverOptions::default();
        let a = power_product(&mesh, &m, &f, &opts).unwrap();
        let b = power_product(&mesh, &mr, &f, &opts).unwrap();
        assert!((a - b).abs() < 1e-9 * b);
    }
}
