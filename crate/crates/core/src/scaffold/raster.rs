//! Barycentric rasterization of a triangle mesh onto the pixel grid.

use robust::{orient2d, Coord};

use super::delaunay::{TriangleMesh, MIN_TRIANGLE_AREA};
use super::DenseDepthMap;

/// Interpolates vertex depth linearly over each triangle.
///
/// Pixel `(u, v)` is sampled at its center `(u, v)`. A pixel is covered when
/// its center lies inside or on the boundary of a triangle; pixels on shared
/// edges take the value of the first covering triangle in index order.
/// Uncovered pixels are left invalid with depth 0.
pub fn rasterize(mesh: &TriangleMesh, width: usize, height: usize) -> DenseDepthMap {
    let mut out = DenseDepthMap::new(width, height);
    if width == 0 || height == 0 {
        return out;
    }
    for t in 0..mesh.triangles.len() {
        let area2 = 2.0 * mesh.area(t);
        if area2.abs() <= 2.0 * MIN_TRIANGLE_AREA {
            continue;
        }
        let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i]);
        // Keep (a, b, c) counterclockwise so inside means all edge tests ≥ 0.
        let (a, b, c, area2) = if area2 > 0.0 { (a, b, c, area2) } else { (a, c, b, -area2) };

        let min_u = a[0].min(b[0]).min(c[0]).ceil().max(0.0);
        let max_u = a[0].max(b[0]).max(c[0]).floor().min((width - 1) as f64);
        let min_v = a[1].min(b[1]).min(c[1]).ceil().max(0.0);
        let max_v = a[1].max(b[1]).max(c[1]).floor().min((height - 1) as f64);
        if min_u > max_u || min_v > max_v {
            continue;
        }
        let (ca, cb, cc) = (Coord { x: a[0], y: a[1] }, Coord { x: b[0], y: b[1] }, Coord { x: c[0], y: c[1] });
        for v in min_v as usize..=max_v as usize {
            for u in min_u as usize..=max_u as usize {
                let idx = v * width + u;
                if out.validity[idx] {
                    continue;
                }
                let p = Coord { x: u as f64, y: v as f64 };
                if orient2d(cb, cc, p) < 0.0 || orient2d(cc, ca, p) < 0.0 || orient2d(ca, cb, p) < 0.0 {
                    continue;
                }
                let (x, y) = (u as f64, v as f64);
                let lb = ((c[0] - x) * (a[1] - y) - (c[1] - y) * (a[0] - x)) / area2;
                let lc = ((a[0] - x) * (b[1] - y) - (a[1] - y) * (b[0] - x)) / area2;
                // λa·za + λb·zb + λc·zc with λa = 1 − λb − λc
                out.depth[idx] = a[2] + lb * (b[2] - a[2]) + lc * (c[2] - a[2]);
                out.validity[idx] = true;
            }
        }
    }
    out
}
