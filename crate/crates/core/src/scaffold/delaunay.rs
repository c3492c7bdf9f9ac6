//! Delaunay triangulation as the lower convex hull of points lifted onto the
//! paraboloid `w = u² + v²`.
//!
//! The hull is built incrementally with conflict lists and exact orientation
//! predicates. Because no three lifted points are collinear, every face the
//! algorithm creates is a proper triangle; vertical faces (collinear points
//! on the 2-D hull boundary) and upper faces are discarded at the end.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robust::{orient2d, orient3d, Coord, Coord3D};

use super::ScaffoldError;

/// Triangles whose image-plane area is below this are dropped.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

const NONE: usize = usize::MAX;
const SHUFFLE_SEED: u64 = 0x5eed_de1a_0001;

/// Vertices in `(u, v, z)` and counterclockwise triangles over them.
///
/// Counterclockwise means positive signed area in the `(u, v)` coordinate
/// system, i.e. `(b − a) × (c − a) > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Triangulates the `(u, v)` projection of `vertices` and keeps their
    /// third coordinate as the interpolated attribute.
    pub fn triangulate(vertices: Vec<[f64; 3]>) -> Result<Self, ScaffoldError> {
        let planar: Vec<[f64; 2]> = vertices.iter().map(|p| [p[0], p[1]]).collect();
        let triangles = delaunay(&planar)?;
        Ok(Self { vertices, triangles })
    }

    /// Signed area of triangle `t` in the image plane.
    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    }
}

/// Maps `(u, v)` to `(u, v, u² + v²)`.
pub fn lift(points: &[[f64; 2]]) -> Vec<[f64; 3]> {
    points.iter().map(|&[u, v]| [u, v, u * u + v * v]).collect()
}

/// Delaunay triangulation of `points`; returns counterclockwise index
/// triples into `points`.
///
/// Exact duplicates are ignored (the first occurrence is used). Fails with
/// [`ScaffoldError::DegenerateInput`] for fewer than three distinct points or
/// when all points are collinear.
pub fn delaunay(points: &[[f64; 2]]) -> Result<Vec<[usize; 3]>, ScaffoldError> {
    if points.iter().flatten().any(|c| !c.is_finite()) {
        return Err(ScaffoldError::DegenerateInput("non-finite coordinate".into()));
    }
    let lifted = lift(points);
    let mut hull = Hull::new(&lifted);
    match hull.build() {
        Ok(()) => Ok(hull.lower_triangles()),
        Err(Flat::Collinear) => {
            Err(ScaffoldError::DegenerateInput("fewer than three distinct points or all points collinear".into()))
        }
        Err(Flat::Cocircular(ring)) => Ok(fan(points, &ring)),
    }
}

fn c2(p: &[f64; 3]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

fn c3(p: &[f64; 3]) -> Coord3D<f64> {
    Coord3D { x: p[0], y: p[1], z: p[2] }
}

/// Triangulates points that all lie on one circle: they are in convex
/// position, so any fan over the angularly sorted ring is Delaunay.
fn fan(points: &[[f64; 2]], ring: &[usize]) -> Vec<[usize; 3]> {
    let n = ring.len() as f64;
    let cu = ring.iter().map(|&i| points[i][0]).sum::<f64>() / n;
    let cv = ring.iter().map(|&i| points[i][1]).sum::<f64>() / n;
    let mut sorted = ring.to_vec();
    sorted.sort_by(|&a, &b| {
        let ta = (points[a][1] - cv).atan2(points[a][0] - cu);
        let tb = (points[b][1] - cv).atan2(points[b][0] - cu);
        ta.total_cmp(&tb)
    });
    let lifted = lift(points);
    let mut out = Vec::new();
    for k in 1..sorted.len() - 1 {
        let (a, b, c) = (sorted[0], sorted[k], sorted[k + 1]);
        let o = orient2d(c2(&lifted[a]), c2(&lifted[b]), c2(&lifted[c]));
        if o > 0.0 {
            out.push([a, b, c]);
        } else if o < 0.0 {
            out.push([a, c, b]);
        }
    }
    out
}

enum Flat {
    Collinear,
    /// All lifted points are coplanar; holds the distinct point indices.
    Cocircular(Vec<usize>),
}

#[derive(Debug, Clone)]
struct Face {
    v: [usize; 3],
    /// `adj[i]` is the face across edge `v[i] → v[(i + 1) % 3]`.
    adj: [usize; 3],
    alive: bool,
    conflicts: Vec<usize>,
}

struct Hull<'a> {
    pts: &'a [[f64; 3]],
    faces: Vec<Face>,
    /// Face each uninserted point can see, or `NONE`.
    conflict: Vec<usize>,
    mark: Vec<u32>,
    stamp: u32,
}

impl<'a> Hull<'a> {
    fn new(pts: &'a [[f64; 3]]) -> Self {
        Self { pts, faces: Vec::new(), conflict: vec![NONE; pts.len()], mark: Vec::new(), stamp: 0 }
    }

    /// `p` lies strictly on the outer side of face `f`.
    fn sees(&self, f: usize, p: usize) -> bool {
        let [a, b, c] = self.faces[f].v;
        orient3d(c3(&self.pts[a]), c3(&self.pts[b]), c3(&self.pts[c]), c3(&self.pts[p])) < 0.0
    }

    fn initial_simplex(&self) -> Result<[usize; 4], Flat> {
        let n = self.pts.len();
        if n == 0 {
            return Err(Flat::Collinear);
        }
        let p0 = 0;
        let p1 = (1..n).find(|&i| self.pts[i][..2] != self.pts[p0][..2]).ok_or(Flat::Collinear)?;
        let p2 = (1..n).find(|&i| orient2d(c2(&self.pts[p0]), c2(&self.pts[p1]), c2(&self.pts[i])) != 0.0);
        let Some(p2) = p2 else {
            return Err(Flat::Collinear);
        };
        let p3 = (1..n)
            .find(|&i| orient3d(c3(&self.pts[p0]), c3(&self.pts[p1]), c3(&self.pts[p2]), c3(&self.pts[i])) != 0.0);
        match p3 {
            Some(p3) => Ok([p0, p1, p2, p3]),
            None => {
                let mut ring: Vec<usize> = Vec::new();
                for i in 0..n {
                    if !ring.iter().any(|&j| self.pts[j][..2] == self.pts[i][..2]) {
                        ring.push(i);
                    }
                }
                Err(Flat::Cocircular(ring))
            }
        }
    }

    fn push_face(&mut self, v: [usize; 3]) -> usize {
        self.faces.push(Face { v, adj: [NONE; 3], alive: true, conflicts: Vec::new() });
        self.mark.push(0);
        self.faces.len() - 1
    }

    fn build(&mut self) -> Result<(), Flat> {
        let [p0, p1, p2, p3] = self.initial_simplex()?;
        let tetra = [[p0, p1, p2], [p0, p1, p3], [p0, p2, p3], [p1, p2, p3]];
        let opposite = [p3, p2, p1, p0];
        for (tri, &opp) in tetra.iter().zip(&opposite) {
            let [a, b, c] = *tri;
            let o = orient3d(c3(&self.pts[a]), c3(&self.pts[b]), c3(&self.pts[c]), c3(&self.pts[opp]));
            // Interior points must be on the positive side.
            if o > 0.0 {
                self.push_face([a, b, c]);
            } else {
                self.push_face([a, c, b]);
            }
        }
        let mut edges: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for f in 0..4 {
            for i in 0..3 {
                let v = self.faces[f].v;
                edges.insert((v[i], v[(i + 1) % 3]), (f, i));
            }
        }
        for f in 0..4 {
            for i in 0..3 {
                let v = self.faces[f].v;
                let (g, _) = edges[&(v[(i + 1) % 3], v[i])];
                self.faces[f].adj[i] = g;
            }
        }

        let mut order: Vec<usize> = (0..self.pts.len()).filter(|i| ![p0, p1, p2, p3].contains(i)).collect();
        for &q in &order {
            if let Some(f) = (0..4).find(|&f| self.sees(f, q)) {
                self.conflict[q] = f;
                self.faces[f].conflicts.push(q);
            }
        }
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(SHUFFLE_SEED));
        for p in order {
            if self.conflict[p] != NONE {
                self.insert(p);
            }
        }
        Ok(())
    }

    fn insert(&mut self, p: usize) {
        self.stamp += 1;
        let stamp = self.stamp;
        let start = self.conflict[p];

        // Visible region is connected; flood fill from the conflict face.
        let mut visible = vec![start];
        self.mark[start] = stamp;
        let mut k = 0;
        while k < visible.len() {
            let f = visible[k];
            k += 1;
            for i in 0..3 {
                let g = self.faces[f].adj[i];
                if self.mark[g] != stamp && self.sees(g, p) {
                    self.mark[g] = stamp;
                    visible.push(g);
                }
            }
        }

        // Horizon edges (a → b) with the hidden neighbour across them.
        let mut horizon: Vec<(usize, usize, usize)> = Vec::new();
        for &f in &visible {
            for i in 0..3 {
                let g = self.faces[f].adj[i];
                if self.mark[g] != stamp {
                    let v = self.faces[f].v;
                    horizon.push((v[i], v[(i + 1) % 3], g));
                }
            }
        }

        let mut by_start: HashMap<usize, usize> = HashMap::with_capacity(horizon.len());
        let mut by_end: HashMap<usize, usize> = HashMap::with_capacity(horizon.len());
        let mut created = Vec::with_capacity(horizon.len());
        for &(a, b, hidden) in &horizon {
            let f = self.push_face([a, b, p]);
            self.faces[f].adj[0] = hidden;
            let hv = self.faces[hidden].v;
            let slot =
                (0..3).find(|&i| hv[i] == b && hv[(i + 1) % 3] == a).expect("horizon edge must exist on hidden face");
            self.faces[hidden].adj[slot] = f;
            by_start.insert(a, f);
            by_end.insert(b, f);
            created.push(f);
        }
        for &f in &created {
            let [a, b, _] = self.faces[f].v;
            // edge b → p pairs with the face whose horizon edge starts at b;
            // edge p → a pairs with the face whose horizon edge ends at a.
            self.faces[f].adj[1] = by_start[&b];
            self.faces[f].adj[2] = by_end[&a];
        }

        let mut orphans = Vec::new();
        for &f in &visible {
            self.faces[f].alive = false;
            orphans.append(&mut self.faces[f].conflicts);
        }
        self.conflict[p] = NONE;
        for q in orphans {
            if q == p {
                continue;
            }
            let target = created
                .iter()
                .copied()
                .find(|&f| self.sees(f, q))
                .or_else(|| (0..self.faces.len()).find(|&f| self.faces[f].alive && self.sees(f, q)));
            match target {
                Some(f) => {
                    self.conflict[q] = f;
                    self.faces[f].conflicts.push(q);
                }
                None => self.conflict[q] = NONE,
            }
        }
    }

    fn lower_triangles(&self) -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        for f in self.faces.iter().filter(|f| f.alive) {
            let [a, b, c] = f.v;
            // Outward normal points down exactly when the projection is
            // clockwise.
            let o = orient2d(c2(&self.pts[a]), c2(&self.pts[b]), c2(&self.pts[c]));
            if o < 0.0 && -0.5 * o > MIN_TRIANGLE_AREA {
                out.push([a, c, b]);
            }
        }
        out
    }
}
