//! Triangulated 2D domains for the diffusion forward model, plus nodal
//! parameter fields and simple piecewise-constant phantoms.
//!
//! The built-in generator produces a structured disk: concentric rings of
//! nodes (ring i carries 6i nodes) stitched into strips of triangles. Ring
//! nodes sit exactly on their circle, so the outermost ring samples the
//! boundary circle exactly and the polygonal area deficit is O(h²).

use crate::{Error, Result, DEFAULT_LIGHT_SPEED};

#[derive(Clone, Debug)]
pub struct BoundaryEdge {
    /// Node pair ordered so the domain lies to the left (counter-clockwise
    /// traversal of the boundary loop).
    pub nodes: [usize; 2],
    /// Unit outward normal.
    pub normal: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
}

impl Mesh {
    /// Build a mesh from nodes and positively oriented triangles. Boundary
    /// edges (and their outward normals) are derived from the connectivity:
    /// an edge on the boundary belongs to exactly one triangle.
    pub fn new(nodes: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut mesh = Mesh { nodes, triangles, boundary_edges: Vec::new() };
        mesh.rebuild_boundary()?;
        mesh.validate()?;
        Ok(mesh)
    }

    fn rebuild_boundary(&mut self) -> Result<()> {
        use std::collections::HashMap;
        let n = self.nodes.len();
        // count undirected edges; remember the directed orientation seen
        let mut seen: HashMap<(usize, usize), (usize, usize, usize)> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                let a = tri[e];
                let b = tri[(e + 1) % 3];
                if a >= n || b >= n {
                    return Err(Error::InvalidArgument(format!(
                        "triangle {t} references node out of range"
                    )));
                }
                let key = (a.min(b), a.max(b));
                seen.entry(key).and_modify(|v| v.2 += 1).or_insert((a, b, 1));
            }
        }
        let mut edges = Vec::new();
        for (_, (a, b, count)) in seen {
            match count {
                1 => {
                    // direction (a,b) follows the owning triangle's CCW order,
                    // so the outward normal is the right-hand rotation
                    let d = [self.nodes[b][0] - self.nodes[a][0], self.nodes[b][1] - self.nodes[a][1]];
                    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
                    if len == 0.0 {
                        return Err(Error::InvalidGeometry("degenerate boundary edge".into()));
                    }
                    edges.push(BoundaryEdge { nodes: [a, b], normal: [d[1] / len, -d[0] / len] });
                }
                2 => {}
                c => {
                    return Err(Error::InvalidGeometry(format!(
                        "edge ({a},{b}) shared by {c} triangles"
                    )))
                }
            }
        }
        edges.sort_by_key(|e| (e.nodes[0], e.nodes[1]));
        self.boundary_edges = edges;
        Ok(())
    }

    /// Structural checks: positive triangle areas, boundary edges belonging to
    /// exactly one triangle each (guaranteed by construction), finite nodes.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.nodes.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::InvalidArgument(format!("node {i} is not finite")));
            }
        }
        for (t, _) in self.triangles.iter().enumerate() {
            let a = self.signed_area(t);
            if a <= 0.0 {
                return Err(Error::InvalidGeometry(format!(
                    "triangle {t} has non-positive area {a}"
                )));
            }
        }
        if self.boundary_edges.is_empty() {
            return Err(Error::InvalidGeometry("mesh has no boundary".into()));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [i, j, k] = self.triangles[t];
        let (p, q, r) = (self.nodes[i], self.nodes[j], self.nodes[k]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    /// Sorted unique node indices lying on the boundary.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.boundary_edges.iter().flat_map(|e| e.nodes).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn is_boundary_node(&self) -> Vec<bool> {
        let mut flags = vec![false; self.n_nodes()];
        for e in &self.boundary_edges {
            flags[e.nodes[0]] = true;
            flags[e.nodes[1]] = true;
        }
        flags
    }

    /// Mean edge length, a serviceable mesh-spacing estimate.
    pub fn mean_edge_length(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for tri in &self.triangles {
            for e in 0..3 {
                let a = self.nodes[tri[e]];
                let b = self.nodes[tri[(e + 1) % 3]];
                sum += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                count += 1;
            }
        }
        sum / count as f64
    }
}

/// Structured disk of the given radius with target spacing h: rings at radii
/// i·radius/m for m = round(radius/h), ring i holding 6i nodes.
pub fn build_disk_mesh(radius: f64, h: f64) -> Result<Mesh> {
    if !(radius > 0.0) || !(h > 0.0) || h >= radius {
        return Err(Error::InvalidArgument(format!(
            "disk mesh needs 0 < h < radius, got h={h}, radius={radius}"
        )));
    }
    let m = ((radius / h).round() as usize).max(1);
    let mut nodes = vec![[0.0, 0.0]];
    let mut ring_start = vec![0usize; m + 1]; // index of first node of ring i
    for i in 1..=m {
        ring_start[i] = nodes.len();
        let r = radius * i as f64 / m as f64;
        let count = 6 * i;
        for j in 0..count {
            let th = 2.0 * std::f64::consts::PI * j as f64 / count as f64;
            nodes.push([r * th.cos(), r * th.sin()]);
        }
    }

    let mut triangles = Vec::with_capacity(6 * m * m);
    // innermost fan around the center node
    for s in 0..6 {
        triangles.push([1 + s, 1 + (s + 1) % 6, 0]);
    }
    // strip between ring i-1 (6(i-1) nodes) and ring i (6i nodes), per sector
    for i in 2..=m {
        let outer = |j: usize| ring_start[i] + j % (6 * i);
        let inner = |j: usize| ring_start[i - 1] + j % (6 * (i - 1));
        for s in 0..6 {
            let o0 = s * i;
            let n0 = s * (i - 1);
            for t in 0..i {
                triangles.push([outer(o0 + t), outer(o0 + t + 1), inner(n0 + t)]);
            }
            for t in 0..i.saturating_sub(1) {
                triangles.push([outer(o0 + t + 1), inner(n0 + t + 1), inner(n0 + t)]);
            }
        }
    }
    Mesh::new(nodes, triangles)
}

/// Nodal optical parameters: absorption (1/mm) and diffusion (mm²/ns scale is
/// set by the light speed c, in mm/ns).
#[derive(Clone, Debug)]
pub struct ParamField {
    pub mu_a: Vec<f64>,
    pub diff: Vec<f64>,
    pub c: f64,
}

impl ParamField {
    pub fn homogeneous(mesh: &Mesh, mu_a: f64, diff: f64) -> Self {
        ParamField {
            mu_a: vec![mu_a; mesh.n_nodes()],
            diff: vec![diff; mesh.n_nodes()],
            c: DEFAULT_LIGHT_SPEED,
        }
    }

    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if self.mu_a.len() != mesh.n_nodes() || self.diff.len() != mesh.n_nodes() {
            return Err(Error::InvalidArgument(format!(
                "parameter field length ({}, {}) does not match mesh ({} nodes)",
                self.mu_a.len(),
                self.diff.len(),
                mesh.n_nodes()
            )));
        }
        if !(self.c > 0.0) {
            return Err(Error::InvalidArgument("light speed must be positive".into()));
        }
        if let Some(i) = self.mu_a.iter().position(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("mu_a[{i}] = {} is negative", self.mu_a[i])));
        }
        if let Some(i) = self.diff.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "diff[{i}] = {} is not positive",
                self.diff[i]
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Inclusion {
    pub center: [f64; 2],
    pub radius: f64,
    pub mu_a: f64,
    pub diff: f64,
}

/// Background plus circular inclusions; later entries take precedence where
/// they overlap earlier ones.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub background_mu_a: f64,
    pub background_diff: f64,
    pub inclusions: Vec<Inclusion>,
}

impl Phantom {
    pub fn validate(&self) -> Result<()> {
        if !(self.background_mu_a >= 0.0) || !(self.background_diff > 0.0) {
            return Err(Error::InvalidArgument("phantom background out of range".into()));
        }
        for (i, inc) in self.inclusions.iter().enumerate() {
            if !(inc.radius > 0.0) {
                return Err(Error::InvalidArgument(format!("inclusion {i} has radius {}", inc.radius)));
            }
            if !(inc.mu_a >= 0.0) || !(inc.diff > 0.0) {
                return Err(Error::InvalidArgument(format!("inclusion {i} values out of range")));
            }
        }
        Ok(())
    }
}

/// Sample a phantom at the mesh nodes. A node inside several inclusions takes
/// the last one listed. Light speed is set to the toolkit default; override
/// the `c` field afterwards if needed.
pub fn rasterize_phantom(phantom: &Phantom, mesh: &Mesh) -> Result<ParamField> {
    phantom.validate()?;
    let mut field = ParamField::homogeneous(mesh, phantom.background_mu_a, phantom.background_diff);
    for (k, p) in mesh.nodes.iter().enumerate() {
        for inc in &phantom.inclusions {
            let dx = p[0] - inc.center[0];
            let dy = p[1] - inc.center[1];
            if dx * dx + dy * dy <= inc.radius * inc.radius {
                field.mu_a[k] = inc.mu_a;
                field.diff[k] = inc.diff;
            }
        }
    }
    Ok(field)
}

/// Uniform-bin accelerator for point-in-triangle queries.
pub struct PointLocator<'m> {
    mesh: &'m Mesh,
    x0: f64,
    y0: f64,
    inv_cell: f64,
    nx: usize,
    ny: usize,
    bins: Vec<Vec<usize>>,
}

impl<'m> PointLocator<'m> {
    pub fn new(mesh: &'m Mesh) -> Self {
        let (mut xmin, mut ymin) = (f64::INFINITY, f64::INFINITY);
        let (mut xmax, mut ymax) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &mesh.nodes {
            xmin = xmin.min(p[0]);
            xmax = xmax.max(p[0]);
            ymin = ymin.min(p[1]);
            ymax = ymax.max(p[1]);
        }
        let cell = mesh.mean_edge_length().max(1e-12);
        let nx = (((xmax - xmin) / cell).ceil() as usize).max(1);
        let ny = (((ymax - ymin) / cell).ceil() as usize).max(1);
        let mut bins = vec![Vec::new(); nx * ny];
        let inv_cell = 1.0 / cell;
        let clamp = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let xs: Vec<f64> = tri.iter().map(|&i| mesh.nodes[i][0]).collect();
            let ys: Vec<f64> = tri.iter().map(|&i| mesh.nodes[i][1]).collect();
            let ix0 = clamp((xs.iter().cloned().fold(f64::INFINITY, f64::min) - xmin) * inv_cell, nx);
            let ix1 = clamp((xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xmin) * inv_cell, nx);
            let iy0 = clamp((ys.iter().cloned().fold(f64::INFINITY, f64::min) - ymin) * inv_cell, ny);
            let iy1 = clamp((ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ymin) * inv_cell, ny);
            for iy in iy0..=iy1 {
                for ix in ix0..=ix1 {
                    bins[iy * nx + ix].push(t);
                }
            }
        }
        PointLocator { mesh, x0: xmin, y0: ymin, inv_cell, nx, ny, bins }
    }

    /// Containing triangle and barycentric coordinates, if the point lies in
    /// the meshed domain (tolerance ~1e-10 on the barycentric test).
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, [f64; 3])> {
        let ix = (((p[0] - self.x0) * self.inv_cell).floor().max(0.0) as usize).min(self.nx - 1);
        let iy = (((p[1] - self.y0) * self.inv_cell).floor().max(0.0) as usize).min(self.ny - 1);
        // search the point's bin first, then a one-ring of neighbors
        let mut candidates: Vec<usize> = Vec::new();
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let jx = ix as i64 + dx;
                let jy = iy as i64 + dy;
                if jx < 0 || jy < 0 || jx >= self.nx as i64 || jy >= self.ny as i64 {
                    continue;
                }
                candidates.extend_from_slice(&self.bins[jy as usize * self.nx + jx as usize]);
            }
        }
        for &t in &candidates {
            if let Some(bary) = self.barycentric(t, p) {
                return Some((t, bary));
            }
        }
        None
    }

    fn barycentric(&self, t: usize, p: [f64; 2]) -> Option<[f64; 3]> {
        let [i, j, k] = self.mesh.triangles[t];
        let (a, b, c) = (self.mesh.nodes[i], self.mesh.nodes[j], self.mesh.nodes[k]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if det == 0.0 {
            return None;
        }
        let l1 = ((b[0] - p[0]) * (c[1] - p[1]) - (c[0] - p[0]) * (b[1] - p[1])) / det;
        let l2 = ((c[0] - p[0]) * (a[1] - p[1]) - (a[0] - p[0]) * (c[1] - p[1])) / det;
        let l3 = 1.0 - l1 - l2;
        let tol = -1e-10;
        if l1 >= tol && l2 >= tol && l3 >= tol {
            Some([l1, l2, l3])
        } else {
            None
        }
    }

    /// Interpolate a nodal field at a point.
    pub fn interpolate(&self, field: &[f64], p: [f64; 2]) -> Option<f64> {
        let (t, l) = self.locate(p)?;
        let [i, j, k] = self.mesh.triangles[t];
        Some(l[0] * field[i] + l[1] * field[j] + l[2] * field[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_mesh_counts_and_area() {
        // radius 1, h = 0.5: m = 2 rings, 19 nodes, 24 triangles, area of the
        // inscribed regular 12-gon = 3.
        let mesh = build_disk_mesh(1.0, 0.5).unwrap();
        assert_eq!(mesh.n_nodes(), 19);
        assert_eq!(mesh.n_triangles(), 24);
        assert!((mesh.total_area() - 3.0).abs() < 1e-12);
        assert!((mesh.total_area() - std::f64::consts::PI).abs() < 0.5 * 0.5);
        assert_eq!(mesh.boundary_edges.len(), 12);
        assert_eq!(mesh.boundary_nodes().len(), 12);
    }

    #[test]
    fn disk_mesh_rejects_bad_spacing() {
        assert!(matches!(build_disk_mesh(1.0, 2.0), Err(Error::InvalidArgument(_))));
        assert!(build_disk_mesh(1.0, -0.1).is_err());
        assert!(build_disk_mesh(0.0, 0.1).is_err());
    }

    #[test]
    fn area_deficit_shrinks_quadratically() {
        let err = |h: f64| {
            let mesh = build_disk_mesh(1.0, h).unwrap();
            std::f64::consts::PI - mesh.total_area()
        };
        let e1 = err(0.2);
        let e2 = err(0.1);
        let ratio = e1 / e2;
        assert!(ratio > 3.0 && ratio < 5.0, "O(h^2) deficit expected, ratio {ratio}");
    }

    #[test]
    fn refinement_quadruples_triangle_count() {
        let coarse = build_disk_mesh(1.0, 0.25).unwrap();
        let fine = build_disk_mesh(1.0, 0.125).unwrap();
        assert_eq!(fine.n_triangles(), 4 * coarse.n_triangles());
    }

    #[test]
    fn boundary_nodes_on_circle_and_normals_outward() {
        let mesh = build_disk_mesh(2.0, 0.4).unwrap();
        for &b in &mesh.boundary_nodes() {
            let p = mesh.nodes[b];
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 2.0).abs() < 1e-12);
        }
        for e in &mesh.boundary_edges {
            let a = mesh.nodes[e.nodes[0]];
            let b = mesh.nodes[e.nodes[1]];
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            // outward normal points away from the disk center
            let dot = mid[0] * e.normal[0] + mid[1] * e.normal[1];
            assert!(dot > 0.0);
            let len = (e.normal[0].powi(2) + e.normal[1].powi(2)).sqrt();
            assert!((len - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rasterize_last_inclusion_wins() {
        let mesh = build_disk_mesh(1.0, 0.25).unwrap();
        let phantom = Phantom {
            background_mu_a: 0.01,
            background_diff: 0.3,
            inclusions: vec![
                Inclusion { center: [0.0, 0.0], radius: 0.5, mu_a: 0.05, diff: 0.3 },
                Inclusion { center: [0.0, 0.0], radius: 0.3, mu_a: 0.09, diff: 0.2 },
            ],
        };
        let f = rasterize_phantom(&phantom, &mesh).unwrap();
        assert_eq!(f.mu_a[0], 0.09); // center node: inner inclusion wins
        let outer_node = mesh.boundary_nodes()[0];
        assert_eq!(f.mu_a[outer_node], 0.01);
        f.validate(&mesh).unwrap();
    }

    #[test]
    fn rasterize_is_idempotent_under_repetition() {
        let mesh = build_disk_mesh(1.0, 0.2).unwrap();
        let phantom = Phantom {
            background_mu_a: 0.01,
            background_diff: 0.33,
            inclusions: vec![Inclusion { center: [0.3, -0.2], radius: 0.25, mu_a: 0.04, diff: 0.25 }],
        };
        let a = rasterize_phantom(&phantom, &mesh).unwrap();
        let b = rasterize_phantom(&phantom, &mesh).unwrap();
        assert_eq!(a.mu_a, b.mu_a);
        assert_eq!(a.diff, b.diff);
    }

    #[test]
    fn locator_finds_interior_points_and_interpolates_linear_exactly() {
        let mesh = build_disk_mesh(1.0, 0.2).unwrap();
        let loc = PointLocator::new(&mesh);
        // nodal samples of an affine function are reproduced exactly by P1
        let field: Vec<f64> = mesh.nodes.iter().map(|p| 2.0 * p[0] - 3.0 * p[1] + 0.5).collect();
        for &p in &[[0.0, 0.0], [0.3, 0.4], [-0.6, 0.1], [0.05, -0.7]] {
            let v = loc.interpolate(&field, p).expect("interior point should locate");
            let want = 2.0 * p[0] - 3.0 * p[1] + 0.5;
            assert!((v - want).abs() < 1e-12);
        }
        assert!(loc.locate([1.5, 0.0]).is_none());
    }

    #[test]
    fn triangles_positively_oriented_everywhere() {
        for &(r, h) in &[(1.0, 0.3), (2.5, 0.4), (10.0, 1.0)] {
            let mesh = build_disk_mesh(r, h).unwrap();
            for t in 0..mesh.n_triangles() {
                assert!(mesh.signed_area(t) > 0.0);
            }
        }
    }
}
