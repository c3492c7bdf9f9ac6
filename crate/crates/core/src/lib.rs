//! Unsupervised depth completion from sparse metric depth.
//!
//! The pipeline has two stages. Sparse depth is first turned into a dense,
//! piecewise-planar scaffold by Delaunay triangulation ([`scaffold`]); a
//! late-fusion encoder-decoder ([`models`]) then refines the scaffold using
//! the RGB image. Training needs no ground truth: the objective ([`losses`])
//! combines photometric reprojection error, sparse depth consistency,
//! forward/backward pose consistency and edge-aware smoothness, all built on
//! the small reverse-mode differentiation engine in [`diffgraph`].
//!
//! [`metrics`] holds the depth and trajectory error metrics, [`dataio`] the
//! file formats and a synthetic scene renderer.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod diffgraph;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod parallel;
pub mod scaffold;
