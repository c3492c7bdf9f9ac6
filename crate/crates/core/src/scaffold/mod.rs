//! Piecewise-planar scaffolding of sparse depth.
//!
//! Sparse measurements are triangulated in the image plane (Delaunay, via the
//! lower hull of the lifted points) and depth is interpolated linearly inside
//! each triangle. Pixels outside the convex hull of the measurements are
//! filled with the mean sparse depth and flagged invalid so that downstream
//! consumers can tell interpolated from filled pixels.

mod delaunay;
mod raster;

use thiserror::Error;

pub use delaunay::{delaunay, lift, TriangleMesh, MIN_TRIANGLE_AREA};
pub use raster::rasterize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScaffoldError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid sparse point ({u}, {v}, z={z}): {reason}")]
    InvalidPoint { u: usize, v: usize, z: f64, reason: &'static str },
    #[error("sparse depth map is empty")]
    Empty,
}

/// One sparse measurement at integer pixel `(u, v)`, depth in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsePoint {
    pub u: usize,
    pub v: usize,
    pub z: f64,
}

/// Sparse metric depth on a `width × height` image.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthMap {
    width: usize,
    height: usize,
    points: Vec<SparsePoint>,
}

impl SparseDepthMap {
    /// Validates and deduplicates `points`. When several measurements share a
    /// pixel the smallest depth is kept. Output points are sorted in
    /// row-major pixel order.
    pub fn new(
        width: usize,
        height: usize,
        points: impl IntoIterator<Item = SparsePoint>,
    ) -> Result<Self, ScaffoldError> {
        let mut best: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
        for p in points {
            if p.u >= width || p.v >= height {
                return Err(ScaffoldError::InvalidPoint { u: p.u, v: p.v, z: p.z, reason: "outside image" });
            }
            if !(p.z.is_finite() && p.z > 0.0) {
                return Err(ScaffoldError::InvalidPoint {
                    u: p.u,
                    v: p.v,
                    z: p.z,
                    reason: "depth must be positive and finite",
                });
            }
            best.entry((p.v, p.u)).and_modify(|z| *z = z.min(p.z)).or_insert(p.z);
        }
        let points = best.into_iter().map(|((v, u), z)| SparsePoint { u, v, z }).collect();
        Ok(Self { width, height, points })
    }

    /// Collects every valid pixel of a dense map.
    pub fn from_dense(map: &DenseDepthMap) -> Self {
        let points = (0..map.len())
            .filter(|&i| map.validity[i] && map.depth[i] > 0.0)
            .map(|i| SparsePoint { u: i % map.width, v: i / map.width, z: map.depth[i] })
            .collect();
        Self { width: map.width, height: map.height, points }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn points(&self) -> &[SparsePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean_depth(&self) -> Option<f64> {
        if self.points.is_empty() {
            None
        } else {
            Some(self.points.iter().map(|p| p.z).sum::<f64>() / self.points.len() as f64)
        }
    }

    /// Dense view: depth at measured pixels, invalid elsewhere.
    pub fn to_dense(&self) -> DenseDepthMap {
        let mut out = DenseDepthMap::new(self.width, self.height);
        for p in &self.points {
            let i = p.v * self.width + p.u;
            out.depth[i] = p.z;
            out.validity[i] = true;
        }
        out
    }
}

/// Per-pixel depth in meters with a validity flag, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub validity: Vec<bool>,
}

impl DenseDepthMap {
    /// All-invalid map with zero depth.
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, depth: vec![0.0; width * height], validity: vec![false; width * height] }
    }

    /// Map that is valid wherever `depth > 0`.
    pub fn from_depth(width: usize, height: usize, depth: Vec<f64>) -> Self {
        assert_eq!(depth.len(), width * height, "depth buffer does not match dimensions");
        let validity = depth.iter().map(|&z| z > 0.0 && z.is_finite()).collect();
        Self { width, height, depth, validity }
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.width + u]
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.validity[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.validity.iter().filter(|&&v| v).count()
    }
}

/// Builds the scaffold for `sparse`.
///
/// Interior pixels of the triangulation carry interpolated depth and
/// `validity = true`; every other pixel holds the mean sparse depth with
/// `validity = false`. If the points cannot be triangulated (fewer than three
/// or collinear) the whole map is mean-filled and no pixel is valid.
pub fn scaffold(sparse: &SparseDepthMap) -> Result<DenseDepthMap, ScaffoldError> {
    let mean = sparse.mean_depth().ok_or(ScaffoldError::Empty)?;
    let mut out = match try_scaffold(sparse) {
        Ok(map) => map,
        Err(ScaffoldError::DegenerateInput(_)) => DenseDepthMap::new(sparse.width, sparse.height),
        Err(e) => return Err(e),
    };
    for (z, &valid) in out.depth.iter_mut().zip(&out.validity) {
        if !valid {
            *z = mean;
        }
    }
    Ok(out)
}

/// Triangulation and rasterization only; uncovered pixels are left at 0 and
/// degenerate inputs are reported instead of filled.
pub fn try_scaffold(sparse: &SparseDepthMap) -> Result<DenseDepthMap, ScaffoldError> {
    let vertices: Vec<[f64; 3]> = sparse.points.iter().map(|p| [p.u as f64, p.v as f64, p.z]).collect();
    let mesh = TriangleMesh::triangulate(vertices)?;
    Ok(rasterize(&mesh, sparse.width, sparse.height))
}
