use ndarray::ArrayView2;

use super::SparseGraph;
use crate::error::{Result, SgpError};

const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMetric {
    /// Planar coordinates in arbitrary units.
    Euclidean,
    /// `(lat, lon)` in degrees; distances in kilometres.
    Haversine,
}

impl DistanceMetric {
    pub fn distance(self, a: [f64; 2], b: [f64; 2]) -> f64 {
        match self {
            DistanceMetric::Euclidean => ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt(),
            DistanceMetric::Haversine => {
                let (lat1, lon1) = (a[0].to_radians(), a[1].to_radians());
                let (lat2, lon2) = (b[0].to_radians(), b[1].to_radians());
                let h = ((lat2 - lat1) / 2.0).sin().powi(2)
                    + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
                2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
            }
        }
    }
}

/// Thresholded Gaussian kernel graph over pairwise distances.
///
/// `w(i,j) = exp(-dist(i,j)² / bandwidth²)`. Weights below `threshold` are
/// dropped first; `max_neighbors` then keeps the heaviest remaining edges of
/// each row (ties broken by lower column index). Self-loops are never emitted.
pub fn build_gaussian_kernel_graph(
    coords: ArrayView2<f64>,
    bandwidth: f64,
    threshold: f64,
    max_neighbors: Option<usize>,
    metric: DistanceMetric,
) -> Result<SparseGraph> {
    if coords.ncols() != 2 {
        return Err(SgpError::Shape(format!(
            "coordinates must have 2 columns, got {}",
            coords.ncols()
        )));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(SgpError::InvalidInput(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(SgpError::InvalidInput(format!(
            "threshold must lie in [0, 1), got {threshold}"
        )));
    }
    if coords.iter().any(|v| !v.is_finite()) {
        return Err(SgpError::InvalidInput("non-finite coordinate".into()));
    }
    let n = coords.nrows();
    let points: Vec<[f64; 2]> = coords.rows().into_iter().map(|r| [r[0], r[1]]).collect();
    let mut edges = Vec::new();
    let mut row = Vec::with_capacity(n);
    for i in 0..n {
        row.clear();
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = metric.distance(points[i], points[j]);
            let w = (-(d * d) / (bandwidth * bandwidth)).exp();
            if w > 0.0 && w >= threshold {
                row.push((j, w));
            }
        }
        if let Some(k) = max_neighbors {
            row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            row.truncate(k);
        }
        edges.extend(row.iter().map(|&(j, w)| (i, j, w)));
    }
    SparseGraph::from_edges(n, edges)
}
