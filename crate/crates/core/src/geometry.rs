//! Structured triangulations of a rectangle and pixel regions on top of them.
//!
//! Every pixel `(i, j)` of an `nx × ny` grid is split along the diagonal from its
//! lower-left to its upper-right corner, so pixel `p = j·nx + i` owns the triangles
//! `2p` and `2p + 1`. Vertices are numbered row by row from the corner at the origin.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A boundary edge of the mesh, stored as a pair of vertex indices plus its length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub start: usize,
    pub end: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredTriMesh {
    pub nx: usize,
    pub ny: usize,
    pub extent: (f64, f64),
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Counter-clockwise loop starting at the origin corner.
    pub boundary_vertices: Vec<usize>,
    /// `boundary_edges[k]` joins `boundary_vertices[k]` and `boundary_vertices[k + 1]` (cyclic).
    pub boundary_edges: Vec<BoundaryEdge>,
    pub pixel_to_triangles: Vec<[usize; 2]>,
    /// Position of a vertex in `boundary_vertices`, if it lies on the rim.
    boundary_slot: Vec<Option<usize>>,
}

impl StructuredTriMesh {
    pub fn new(nx: usize, ny: usize, extent: (f64, f64)) -> Result<Self> {
        build_mesh(nx, ny, extent)
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (self.extent.0 / self.nx as f64, self.extent.1 / self.ny as f64)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_pixels(&self) -> usize {
        self.nx * self.ny
    }

    pub fn vertex_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn pixel_of_triangle(&self, t: usize) -> usize {
        t / 2
    }

    pub fn boundary_slot(&self, v: usize) -> Option<usize> {
        self.boundary_slot[v]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_slot[v].is_some()
    }

    /// Signed area of triangle `t` (positive for counter-clockwise orientation).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    pub fn perimeter(&self) -> f64 {
        self.boundary_edges.iter().map(|e| e.length).sum()
    }

    /// Arclength of every boundary vertex measured along the loop from the origin corner.
    pub fn boundary_arclengths(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.boundary_vertices.len());
        let mut acc = 0.0;
        for e in &self.boundary_edges {
            out.push(acc);
            acc += e.length;
        }
        out
    }

    /// Lumped (trapezoidal) quadrature weights of the boundary vertices: half of each adjacent edge.
    pub fn boundary_weights(&self) -> Vec<f64> {
        let n = self.boundary_vertices.len();
        (0..n)
            .map(|k| 0.5 * (self.boundary_edges[k].length + self.boundary_edges[(k + n - 1) % n].length))
            .collect()
    }

    pub fn boundary_coordinates(&self) -> Vec<[f64; 2]> {
        self.boundary_vertices.iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn pixel_center(&self, p: usize) -> [f64; 2] {
        let (hx, hy) = self.cell_size();
        let (i, j) = (p % self.nx, p / self.nx);
        [(i as f64 + 0.5) * hx, (j as f64 + 0.5) * hy]
    }

    pub fn pixel_area(&self) -> f64 {
        let (hx, hy) = self.cell_size();
        hx * hy
    }
}

pub fn build_mesh(nx: usize, ny: usize, extent: (f64, f64)) -> Result<StructuredTriMesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidMesh(format!("cell counts must be positive, got {nx}×{ny}")));
    }
    if !(extent.0 > 0.0 && extent.1 > 0.0 && extent.0.is_finite() && extent.1.is_finite()) {
        return Err(Error::InvalidMesh(format!("extent must be positive, got {extent:?}")));
    }
    let (hx, hy) = (extent.0 / nx as f64, extent.1 / ny as f64);
    let vid = |i: usize, j: usize| j * (nx + 1) + i;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([i as f64 * hx, j as f64 * hy]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    let mut pixel_to_triangles = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v11, v01) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
            let t = triangles.len();
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
            pixel_to_triangles.push([t, t + 1]);
        }
    }

    let mut boundary_vertices = Vec::with_capacity(2 * (nx + ny));
    boundary_vertices.extend((0..nx).map(|i| vid(i, 0)));
    boundary_vertices.extend((0..ny).map(|j| vid(nx, j)));
    boundary_vertices.extend((1..=nx).rev().map(|i| vid(i, ny)));
    boundary_vertices.extend((1..=ny).rev().map(|j| vid(0, j)));

    let nb = boundary_vertices.len();
    let boundary_edges = (0..nb)
        .map(|k| {
            let (a, b) = (boundary_vertices[k], boundary_vertices[(k + 1) % nb]);
            let (pa, pb) = (vertices[a], vertices[b]);
            BoundaryEdge { start: a, end: b, length: ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt() }
        })
        .collect();

    let mut boundary_slot = vec![None; vertices.len()];
    for (k, &v) in boundary_vertices.iter().enumerate() {
        boundary_slot[v] = Some(k);
    }

    Ok(StructuredTriMesh {
        nx,
        ny,
        extent,
        vertices,
        triangles,
        boundary_vertices,
        boundary_edges,
        pixel_to_triangles,
        boundary_slot,
    })
}

/// Axis-aligned pixel rectangle or disc, rasterized by cell-centre inclusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// `[i0, j0, width, height]` in pixels.
    Rect([usize; 4]),
    /// `[cx, cy, radius]` in pixel units; pixel `(i, j)` has centre `(i + 0.5, j + 0.5)`.
    Disc([f64; 3]),
}

impl Shape {
    fn contains_pixel(&self, i: usize, j: usize) -> bool {
        match *self {
            Shape::Rect([i0, j0, w, h]) => i >= i0 && i < i0 + w && j >= j0 && j < j0 + h,
            Shape::Disc([cx, cy, r]) => {
                let (x, y) = (i as f64 + 0.5 - cx, j as f64 + 0.5 - cy);
                x * x + y * y <= r * r
            }
        }
    }
}

/// A set of pixels on an `nx × ny` grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellRegion {
    nx: usize,
    ny: usize,
    mask: Vec<bool>,
}

impl CellRegion {
    pub fn empty(nx: usize, ny: usize) -> Self {
        Self { nx, ny, mask: vec![false; nx * ny] }
    }

    pub fn full(nx: usize, ny: usize) -> Self {
        Self { nx, ny, mask: vec![true; nx * ny] }
    }

    pub fn from_mask(nx: usize, ny: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != nx * ny {
            return Err(Error::InvalidParameter(format!(
                "mask length {} does not match a {nx}×{ny} grid",
                mask.len()
            )));
        }
        Ok(Self { nx, ny, mask })
    }

    pub fn from_pixels(nx: usize, ny: usize, pixels: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut r = Self::empty(nx, ny);
        for p in pixels {
            if p >= nx * ny {
                return Err(Error::InvalidParameter(format!("pixel {p} outside a {nx}×{ny} grid")));
            }
            r.mask[p] = true;
        }
        Ok(r)
    }

    pub fn rect(nx: usize, ny: usize, i0: usize, j0: usize, w: usize, h: usize) -> Result<Self> {
        if i0 + w > nx || j0 + h > ny {
            return Err(Error::InvalidParameter(format!(
                "rectangle [{i0}, {j0}, {w}, {h}] exceeds a {nx}×{ny} grid"
            )));
        }
        Ok(Self::rasterize(nx, ny, &[Shape::Rect([i0, j0, w, h])]))
    }

    pub fn rasterize(nx: usize, ny: usize, shapes: &[Shape]) -> Self {
        let mut r = Self::empty(nx, ny);
        for j in 0..ny {
            for i in 0..nx {
                r.mask[j * nx + i] = shapes.iter().any(|s| s.contains_pixel(i, j));
            }
        }
        r
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, p: usize) -> bool {
        self.mask[p]
    }

    pub fn contains_ij(&self, i: usize, j: usize) -> bool {
        self.mask[j * self.nx + i]
    }

    pub fn insert(&mut self, p: usize) {
        self.mask[p] = true;
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn pixels(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &b)| b).map(|(p, _)| p)
    }

    pub fn is_rim_pixel(&self, p: usize) -> bool {
        let (i, j) = (p % self.nx, p / self.nx);
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    pub fn touches_rim(&self) -> bool {
        self.pixels().any(|p| self.is_rim_pixel(p))
    }

    /// Inclusive pixel bounding box `(i_min, j_min, i_max, j_max)`; `None` for the empty region.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        self.pixels().fold(None, |acc, p| {
            let (i, j) = (p % self.nx, p / self.nx);
            Some(match acc {
                None => (i, j, i, j),
                Some((a, b, c, d)) => (a.min(i), b.min(j), c.max(i), d.max(j)),
            })
        })
    }

    /// Triangles owned by the region's pixels on a matching mesh.
    pub fn triangles(&self, mesh: &StructuredTriMesh) -> Result<Vec<usize>> {
        self.check_mesh(mesh)?;
        Ok(self.pixels().flat_map(|p| mesh.pixel_to_triangles[p]).collect())
    }

    pub fn check_mesh(&self, mesh: &StructuredTriMesh) -> Result<()> {
        if (mesh.nx, mesh.ny) != self.dims() {
            return Err(Error::DimensionMismatch { expected: (mesh.nx, mesh.ny), found: self.dims() });
        }
        Ok(())
    }

    fn check_dims(&self, other: &CellRegion) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch { expected: self.dims(), found: other.dims() });
        }
        Ok(())
    }

    pub fn is_subset(&self, other: &CellRegion) -> Result<bool> {
        self.check_dims(other)?;
        Ok(self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b))
    }

    pub fn union(&self, other: &CellRegion) -> Result<CellRegion> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &CellRegion) -> Result<CellRegion> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &CellRegion) -> Result<CellRegion> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> CellRegion {
        CellRegion { nx: self.nx, ny: self.ny, mask: self.mask.iter().map(|&b| !b).collect() }
    }

    fn zip_with(&self, other: &CellRegion, op: impl Fn(bool, bool) -> bool) -> Result<CellRegion> {
        self.check_dims(other)?;
        let mask = self.mask.iter().zip(&other.mask).map(|(&a, &b)| op(a, b)).collect();
        Ok(CellRegion { nx: self.nx, ny: self.ny, mask })
    }

    fn neighbors(&self, p: usize) -> impl Iterator<Item = usize> {
        let (nx, ny) = (self.nx, self.ny);
        let (i, j) = (p % nx, p / nx);
        let left = (i > 0).then(|| p - 1);
        let right = (i + 1 < nx).then(|| p + 1);
        let down = (j > 0).then(|| p - nx);
        let up = (j + 1 < ny).then(|| p + nx);
        [left, right, down, up].into_iter().flatten()
    }
}

pub fn region_subset(a: &CellRegion, b: &CellRegion) -> Result<bool> {
    a.is_subset(b)
}

pub fn region_union(a: &CellRegion, b: &CellRegion) -> Result<CellRegion> {
    a.union(b)
}

pub fn region_intersect(a: &CellRegion, b: &CellRegion) -> Result<CellRegion> {
    a.intersection(b)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionComponents {
    pub count: usize,
    /// Component label of every pixel, `None` outside the region.
    pub labels: Vec<Option<usize>>,
    pub touches_domain_boundary: Vec<bool>,
}

/// 4-adjacency labelling of the region's pixels.
pub fn connected_components(r: &CellRegion) -> RegionComponents {
    let mut labels = vec![None; r.mask.len()];
    let mut touches = Vec::new();
    let mut queue = VecDeque::new();
    for seed in r.pixels() {
        if labels[seed].is_some() {
            continue;
        }
        let label = touches.len();
        let mut rim = false;
        labels[seed] = Some(label);
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            rim |= r.is_rim_pixel(p);
            for q in r.neighbors(p) {
                if r.mask[q] && labels[q].is_none() {
                    labels[q] = Some(label);
                    queue.push_back(q);
                }
            }
        }
        touches.push(rim);
    }
    RegionComponents { count: touches.len(), labels, touches_domain_boundary: touches }
}

/// The region plus every cavity of its complement that cannot reach the rim.
pub fn outer_support(a: &CellRegion) -> CellRegion {
    let mut reached = vec![false; a.mask.len()];
    let mut queue: VecDeque<usize> = (0..a.mask.len()).filter(|&p| a.is_rim_pixel(p) && !a.mask[p]).collect();
    for &p in &queue {
        reached[p] = true;
    }
    while let Some(p) = queue.pop_front() {
        for q in a.neighbors(p) {
            if !a.mask[q] && !reached[q] {
                reached[q] = true;
                queue.push_back(q);
            }
        }
    }
    CellRegion { nx: a.nx, ny: a.ny, mask: reached.into_iter().map(|b| !b).collect() }
}
