//! Incremental 3-D convex hull (quickhull with outside sets).

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Triangulated convex hull. Faces are wound counter-clockwise seen from outside.
#[derive(Debug, Clone)]
pub struct ConvexHull {
    pub faces: Vec<[usize; 3]>,
    /// Sorted indices of the input points that are hull vertices.
    pub vertices: Vec<usize>,
}

struct Face {
    verts: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn new(points: &[Point3], verts: [usize; 3]) -> Self {
        let [a, b, c] = verts.map(|i| points[i]);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        let normal = if len > 0.0 { n / len } else { n };
        Face { verts, normal, offset: normal.dot(&a.coords), outside: Vec::new(), alive: true }
    }

    fn distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    fn edges(&self) -> [(usize, usize); 3] {
        let [a, b, c] = self.verts;
        [(a, b), (b, c), (c, a)]
    }
}

impl ConvexHull {
    /// Computes the hull of `points`. Fails with [`Error::DegenerateHull`] when the points
    /// do not span three dimensions.
    pub fn compute(points: &[Point3]) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::DegenerateHull);
        }
        let scale = points.iter().flat_map(|p| p.coords.iter().map(|c| c.abs())).fold(0.0, f64::max);
        let eps = 1e-12 * scale.max(1e-300) * 8.0;
        let simplex = initial_simplex(points, eps)?;

        let mut faces: Vec<Face> = Vec::new();
        let mut edge_face: HashMap<(usize, usize), usize> = HashMap::new();
        let [i0, i1, i2, i3] = simplex;
        for tri in [[i0, i1, i2], [i0, i3, i1], [i1, i3, i2], [i2, i3, i0]] {
            let mut face = Face::new(points, tri);
            let apex = simplex.iter().copied().find(|v| !tri.contains(v)).unwrap();
            if face.distance(&points[apex]) > 0.0 {
                face = Face::new(points, [tri[0], tri[2], tri[1]]);
            }
            let id = faces.len();
            for e in face.edges() {
                edge_face.insert(e, id);
            }
            faces.push(face);
        }

        for i in 0..points.len() {
            if simplex.contains(&i) {
                continue;
            }
            if let Some(face) = faces.iter_mut().find(|f| f.distance(&points[i]) > eps) {
                face.outside.push(i);
            }
        }

        let mut pending: Vec<usize> = (0..faces.len()).collect();
        while let Some(fid) = pending.pop() {
            if !faces[fid].alive || faces[fid].outside.is_empty() {
                continue;
            }
            let eye = *faces[fid]
                .outside
                .iter()
                .max_by(|&&a, &&b| faces[fid].distance(&points[a]).total_cmp(&faces[fid].distance(&points[b])))
                .unwrap();
            let eye_p = points[eye];

            // Flood the faces that see the eye point; their boundary is the horizon.
            let mut visible = vec![fid];
            let mut is_visible: HashMap<usize, bool> = HashMap::from([(fid, true)]);
            let mut horizon: Vec<(usize, usize)> = Vec::new();
            let mut cursor = 0;
            while cursor < visible.len() {
                let g = visible[cursor];
                cursor += 1;
                for (a, b) in faces[g].edges() {
                    let h = *edge_face.get(&(b, a)).ok_or(Error::DegenerateHull)?;
                    let seen = match is_visible.get(&h) {
                        Some(&s) => s,
                        None => {
                            let s = faces[h].distance(&eye_p) > eps;
                            is_visible.insert(h, s);
                            if s {
                                visible.push(h);
                            }
                            s
                        }
                    };
                    if !seen {
                        horizon.push((a, b));
                    }
                }
            }

            let mut orphans = Vec::new();
            for &g in &visible {
                let face = &mut faces[g];
                face.alive = false;
                orphans.append(&mut face.outside);
                for e in face.edges() {
                    if edge_face.get(&e) == Some(&g) {
                        edge_face.remove(&e);
                    }
                }
            }

            let first_new = faces.len();
            for &(a, b) in &horizon {
                let face = Face::new(points, [a, b, eye]);
                let id = faces.len();
                for e in face.edges() {
                    edge_face.insert(e, id);
                }
                faces.push(face);
            }
            for p in orphans {
                if p == eye {
                    continue;
                }
                if let Some(face) = faces[first_new..].iter_mut().find(|f| f.distance(&points[p]) > eps) {
                    face.outside.push(p);
                }
            }
            pending.extend(first_new..faces.len());
        }

        let faces: Vec<[usize; 3]> = faces.into_iter().filter(|f| f.alive).map(|f| f.verts).collect();
        let mut vertices: Vec<usize> = faces.iter().flatten().copied().collect();
        vertices.sort_unstable();
        vertices.dedup();
        Ok(ConvexHull { faces, vertices })
    }

    /// Sorted neighbor lists along hull edges, indexed by input point.
    pub fn adjacency(&self, point_count: usize) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); point_count];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    pub fn is_vertex(&self, index: usize) -> bool {
        self.vertices.binary_search(&index).is_ok()
    }
}

fn initial_simplex(points: &[Point3], eps: f64) -> Result<[usize; 4]> {
    let mut extremes = Vec::with_capacity(6);
    for axis in 0..3 {
        let cmp = |a: &usize, b: &usize| points[*a][axis].total_cmp(&points[*b][axis]);
        extremes.push((0..points.len()).min_by(cmp).unwrap());
        extremes.push((0..points.len()).max_by(cmp).unwrap());
    }
    let mut best = (0.0, 0, 0);
    for &a in &extremes {
        for &b in &extremes {
            let d = (points[a] - points[b]).norm_squared();
            if d > best.0 {
                best = (d, a, b);
            }
        }
    }
    let (_, i0, i1) = best;
    if best.0.sqrt() <= eps {
        return Err(Error::DegenerateHull);
    }
    let dir = (points[i1] - points[i0]).normalize();
    let line_dist = |i: usize| {
        let v = points[i] - points[i0];
        (v - dir * v.dot(&dir)).norm()
    };
    let i2 = (0..points.len()).max_by(|&a, &b| line_dist(a).total_cmp(&line_dist(b))).unwrap();
    if line_dist(i2) <= eps {
        return Err(Error::DegenerateHull);
    }
    let plane = Face::new(points, [i0, i1, i2]);
    let i3 = (0..points.len())
        .max_by(|&a, &b| plane.distance(&points[a]).abs().total_cmp(&plane.distance(&points[b]).abs()))
        .unwrap();
    if plane.distance(&points[i3]).abs() <= eps {
        return Err(Error::DegenerateHull);
    }
    Ok([i0, i1, i2, i3])
}
