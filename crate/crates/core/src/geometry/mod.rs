//! Areal geometry: units, contiguity, and graph Laplacians.
//!
//! A layer is an ordered collection of areal units plus a symmetric binary
//! neighbourhood matrix W and its graph Laplacian Q = diag(W1) - W. Two
//! constructors exist: regular grids (used by the simulation study) and
//! GeoJSON polygon collections (real data). Both share one contiguity rule:
//! after snapping coordinates to a tolerance, units are rook neighbours when
//! they share at least two vertices or a collinear overlapping boundary
//! segment; queen additionally accepts a single shared vertex.

mod geojson;

pub use geojson::{load_geojson, load_geojson_str, GeoJsonOptions};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

use crate::scalar::{cvt, Scalar};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("grid dimensions must be positive, got {nx} x {ny}")]
    EmptyGrid { nx: usize, ny: usize },
    #[error("bounding box is degenerate or non-finite")]
    BadBounds,
    #[error("duplicate unit id {id:?}")]
    DuplicateId { id: String },
    #[error("unit {id:?} has no polygon; adjacency needs boundary rings")]
    MissingPolygon { id: String },
    #[error("unit {id:?} ring {ring} has fewer than 3 distinct vertices")]
    DegenerateRing { id: String, ring: usize },
    #[error("unit {id:?} has zero or negative net polygon area")]
    DegenerateArea { id: String },
    #[error("coordinates overflow the snap grid at tolerance {tolerance}")]
    SnapOverflow { tolerance: f64 },
    #[error("snap tolerance must be positive and finite")]
    BadTolerance,
    #[error("weight matrix must be square, got {rows} x {cols}")]
    NonSquareWeights { rows: usize, cols: usize },
    #[error("weight matrix is asymmetric at ({i}, {j})")]
    AsymmetricWeights { i: usize, j: usize },
    #[error("weight matrix entry ({i}, {j}) = {value} is not 0 or 1")]
    NonBinaryWeight { i: usize, j: usize, value: f64 },
    #[error("weight matrix has nonzero diagonal at {i}")]
    NonzeroDiagonal { i: usize },
    #[error("GeoJSON: {message}")]
    GeoJson { message: String },
}

/// How boundary contact is turned into neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ContiguityRule {
    /// Shared edge: at least two snapped vertices in common, or a collinear
    /// overlapping boundary segment of positive length.
    #[default]
    Rook,
    /// Rook contact, or at least one shared snapped vertex.
    Queen,
}

/// One areal unit. Rings are closed implicitly (last vertex connects back to
/// the first) and the first ring of each polygon part is the exterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ArealUnit<T> {
    pub id: String,
    pub centroid: (T, T),
    pub area: Option<T>,
    /// Boundary rings, flattened across polygon parts; empty when the unit
    /// is known only by its centroid.
    pub rings: Vec<Vec<(T, T)>>,
}

/// Symmetric binary neighbourhood structure stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    /// Build from undirected edge pairs; indices must be `< n`.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in edges {
            assert!(i < n && j < n && i != j, "edge ({i}, {j}) out of range for n = {n}");
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Adjacency { neighbors }
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn neighbors_of(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn are_neighbors(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Indices with no neighbours.
    pub fn isolated(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.neighbors[i].is_empty()).collect()
    }

    /// Upper-triangle COO triplets (i < j), each with weight 1.
    pub fn triplets(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn w_dense<T: Scalar>(&self) -> DMatrix<T> {
        let n = self.n();
        let mut w = DMatrix::zeros(n, n);
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                w[(i, j)] = T::one();
            }
        }
        w
    }

    pub fn q_dense<T: Scalar>(&self) -> DMatrix<T> {
        let n = self.n();
        let mut q = DMatrix::zeros(n, n);
        for (i, list) in self.neighbors.iter().enumerate() {
            q[(i, i)] = cvt::<T>(list.len() as f64);
            for &j in list {
                q[(i, j)] = -T::one();
            }
        }
        q
    }

    /// Sparse application of the Laplacian: returns Q * m without forming Q.
    pub fn apply_laplacian<T: Scalar>(&self, m: &DMatrix<T>) -> DMatrix<T> {
        assert_eq!(m.nrows(), self.n(), "row count must match layer size");
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (i, list) in self.neighbors.iter().enumerate() {
            let deg = cvt::<T>(list.len() as f64);
            for c in 0..m.ncols() {
                let mut acc = deg * m[(i, c)];
                for &j in list {
                    acc -= m[(j, c)];
                }
                out[(i, c)] = acc;
            }
        }
        out
    }
}

/// An areal layer: units in fixed order plus their contiguity structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ArealLayer<T> {
    pub units: Vec<ArealUnit<T>>,
    pub adjacency: Adjacency,
    pub rule: ContiguityRule,
    /// Indices of units with no neighbours (kept as metadata, not an error).
    pub isolated: Vec<usize>,
}

impl<T: Scalar> ArealLayer<T> {
    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.units.iter().map(|u| u.id.as_str()).collect()
    }

    pub fn centroids(&self) -> Vec<(T, T)> {
        self.units.iter().map(|u| u.centroid).collect()
    }

    pub fn w_dense(&self) -> DMatrix<T> {
        self.adjacency.w_dense()
    }

    pub fn q_dense(&self) -> DMatrix<T> {
        self.adjacency.q_dense()
    }

    pub fn manifest(&self) -> LayerManifest {
        LayerManifest {
            n: self.n(),
            contiguity: self.rule,
            ids: self.units.iter().map(|u| u.id.clone()).collect(),
            centroids: self
                .units
                .iter()
                .map(|u| {
                    [
                        u.centroid.0.to_f64().expect("finite centroid"),
                        u.centroid.1.to_f64().expect("finite centroid"),
                    ]
                })
                .collect(),
            w_triplets: self
                .adjacency
                .triplets()
                .into_iter()
                .map(|(i, j)| [i, j, 1])
                .collect(),
            isolated_ids: self.isolated.iter().map(|&i| self.units[i].id.clone()).collect(),
        }
    }
}

/// Serializable audit snapshot of a layer (W in sparse COO form, i < j).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LayerManifest {
    pub n: usize,
    pub contiguity: ContiguityRule,
    pub ids: Vec<String>,
    pub centroids: Vec<[f64; 2]>,
    pub w_triplets: Vec<[usize; 3]>,
    pub isolated_ids: Vec<String>,
}

/// Regular nx x ny grid over `bbox = (xmin, ymin, xmax, ymax)`, row-major
/// (unit `iy * nx + ix`), rook contiguity.
pub fn build_grid_layer<T: Scalar>(
    nx: usize,
    ny: usize,
    bbox: (T, T, T, T),
) -> Result<ArealLayer<T>, GeometryError> {
    build_grid_layer_with_rule(nx, ny, bbox, ContiguityRule::Rook)
}

pub fn build_grid_layer_with_rule<T: Scalar>(
    nx: usize,
    ny: usize,
    bbox: (T, T, T, T),
    rule: ContiguityRule,
) -> Result<ArealLayer<T>, GeometryError> {
    if nx == 0 || ny == 0 {
        return Err(GeometryError::EmptyGrid { nx, ny });
    }
    let (x0, y0, x1, y1) = bbox;
    let finite = [x0, y0, x1, y1].iter().all(|v| v.is_finite());
    if !finite || x1 <= x0 || y1 <= y0 {
        return Err(GeometryError::BadBounds);
    }
    let dx = (x1 - x0) / cvt::<T>(nx as f64);
    let dy = (y1 - y0) / cvt::<T>(ny as f64);
    let half = cvt::<T>(0.5);

    let mut units = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let fx = cvt::<T>(ix as f64);
            let fy = cvt::<T>(iy as f64);
            let cx = x0 + (fx + half) * dx;
            let cy = y0 + (fy + half) * dy;
            let (lx, ly) = (x0 + fx * dx, y0 + fy * dy);
            let (hx, hy) = (lx + dx, ly + dy);
            units.push(ArealUnit {
                id: format!("r{iy}c{ix}"),
                centroid: (cx, cy),
                area: Some(dx * dy),
                rings: vec![vec![(lx, ly), (hx, ly), (hx, hy), (lx, hy)]],
            });
        }
    }

    let mut edges = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let i = iy * nx + ix;
            if ix + 1 < nx {
                edges.push((i, i + 1));
            }
            if iy + 1 < ny {
                edges.push((i, i + nx));
            }
            if rule == ContiguityRule::Queen && iy + 1 < ny {
                if ix + 1 < nx {
                    edges.push((i, i + nx + 1));
                }
                if ix > 0 {
                    edges.push((i, i + nx - 1));
                }
            }
        }
    }
    let adjacency = Adjacency::from_edges(nx * ny, &edges);
    let isolated = adjacency.isolated();
    Ok(ArealLayer { units, adjacency, rule, isolated })
}

/// Graph Laplacian Q = diag(W1) - W of a dense symmetric binary W.
pub fn laplacian<T: Scalar>(w: &DMatrix<T>) -> Result<DMatrix<T>, GeometryError> {
    let (rows, cols) = w.shape();
    if rows != cols {
        return Err(GeometryError::NonSquareWeights { rows, cols });
    }
    for i in 0..rows {
        if w[(i, i)] != T::zero() {
            return Err(GeometryError::NonzeroDiagonal { i });
        }
        for j in 0..cols {
            let v = w[(i, j)];
            if v != T::zero() && v != T::one() {
                return Err(GeometryError::NonBinaryWeight {
                    i,
                    j,
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
            if w[(i, j)] != w[(j, i)] {
                return Err(GeometryError::AsymmetricWeights { i, j });
            }
        }
    }
    let degrees = DVector::from_iterator(rows, w.row_iter().map(|r| r.iter().copied().sum::<T>()));
    Ok(DMatrix::from_diagonal(&degrees) - w)
}

/// Contiguity from polygon boundaries.
///
/// Coordinates are snapped to an integer lattice of pitch `snap_tolerance`
/// and all predicates run in exact integer arithmetic, so the result is
/// deterministic and immune to floating-point jitter below the tolerance.
/// Returns the adjacency plus the indices of isolated units.
pub fn build_adjacency<T: Scalar>(
    units: &[ArealUnit<T>],
    rule: ContiguityRule,
    snap_tolerance: f64,
) -> Result<(Adjacency, Vec<usize>), GeometryError> {
    if !(snap_tolerance.is_finite() && snap_tolerance > 0.0) {
        return Err(GeometryError::BadTolerance);
    }
    let mut snapped: Vec<SnappedBoundary> = Vec::with_capacity(units.len());
    for unit in units {
        if unit.rings.is_empty() {
            return Err(GeometryError::MissingPolygon { id: unit.id.clone() });
        }
        snapped.push(SnappedBoundary::build(unit, snap_tolerance)?);
    }

    // Sweep over x-sorted bounding boxes to prune the pair candidates.
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by_key(|&i| snapped[i].bbox.0);
    let mut edges = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[pos + 1..] {
            if snapped[j].bbox.0 > snapped[i].bbox.2 {
                break;
            }
            if snapped[j].bbox.1 > snapped[i].bbox.3 || snapped[j].bbox.3 < snapped[i].bbox.1 {
                continue;
            }
            if boundaries_touch(&snapped[i], &snapped[j], rule)? {
                edges.push((i.min(j), i.max(j)));
            }
        }
    }
    let adjacency = Adjacency::from_edges(units.len(), &edges);
    let isolated = adjacency.isolated();
    Ok((adjacency, isolated))
}

type IPoint = (i128, i128);

struct SnappedBoundary {
    vertices: BTreeSet<IPoint>,
    /// Non-degenerate boundary segments after snapping.
    segments: Vec<(IPoint, IPoint)>,
    /// (xmin, ymin, xmax, ymax) on the snap lattice.
    bbox: (i128, i128, i128, i128),
}

impl SnappedBoundary {
    fn build<T: Scalar>(unit: &ArealUnit<T>, tol: f64) -> Result<Self, GeometryError> {
        let mut vertices = BTreeSet::new();
        let mut segments = Vec::new();
        let mut bbox = (i128::MAX, i128::MAX, i128::MIN, i128::MIN);
        for (ring_idx, ring) in unit.rings.iter().enumerate() {
            let pts: Vec<IPoint> = ring
                .iter()
                .map(|&(x, y)| snap_point(x, y, tol))
                .collect::<Result<_, _>>()?;
            let distinct: BTreeSet<&IPoint> = pts.iter().collect();
            if distinct.len() < 3 {
                return Err(GeometryError::DegenerateRing {
                    id: unit.id.clone(),
                    ring: ring_idx,
                });
            }
            for k in 0..pts.len() {
                let a = pts[k];
                let b = pts[(k + 1) % pts.len()];
                vertices.insert(a);
                bbox.0 = bbox.0.min(a.0);
                bbox.1 = bbox.1.min(a.1);
                bbox.2 = bbox.2.max(a.0);
                bbox.3 = bbox.3.max(a.1);
                if a != b {
                    segments.push((a, b));
                }
            }
        }
        Ok(SnappedBoundary { vertices, segments, bbox })
    }
}

fn snap_point<T: Scalar>(x: T, y: T, tol: f64) -> Result<IPoint, GeometryError> {
    let to_lattice = |v: T| -> Result<i128, GeometryError> {
        let f = v.to_f64().ok_or(GeometryError::SnapOverflow { tolerance: tol })?;
        let q = (f / tol).round();
        if !q.is_finite() || q.abs() > 1e30 {
            return Err(GeometryError::SnapOverflow { tolerance: tol });
        }
        Ok(q as i128)
    };
    Ok((to_lattice(x)?, to_lattice(y)?))
}

fn boundaries_touch(
    a: &SnappedBoundary,
    b: &SnappedBoundary,
    rule: ContiguityRule,
) -> Result<bool, GeometryError> {
    let shared = a.vertices.intersection(&b.vertices).count();
    match rule {
        ContiguityRule::Queen if shared >= 1 => return Ok(true),
        ContiguityRule::Rook if shared >= 2 => return Ok(true),
        _ => {}
    }
    // Rook fallback (also completes queen): a collinear overlapping segment
    // of positive length counts even without two shared vertices.
    for &(p, q) in &a.segments {
        for &(r, s) in &b.segments {
            if segments_overlap(p, q, r, s)? {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

fn sub(a: IPoint, b: IPoint) -> IPoint {
    (a.0 - b.0, a.1 - b.1)
}

fn cross(u: IPoint, v: IPoint) -> Option<i128> {
    Some(u.0.checked_mul(v.1)?.checked_sub(u.1.checked_mul(v.0)?)?)
}

fn dot(u: IPoint, v: IPoint) -> Option<i128> {
    Some(u.0.checked_mul(v.0)?.checked_add(u.1.checked_mul(v.1)?)?)
}

/// True when segments pq and rs are collinear and overlap with positive
/// length (a single shared endpoint does not count).
fn segments_overlap(p: IPoint, q: IPoint, r: IPoint, s: IPoint) -> Result<bool, GeometryError> {
    let overflow = || GeometryError::SnapOverflow { tolerance: f64::NAN };
    let d = sub(q, p);
    if cross(d, sub(r, p)).ok_or_else(overflow)? != 0
        || cross(d, sub(s, p)).ok_or_else(overflow)? != 0
    {
        return Ok(false);
    }
    let len2 = dot(d, d).ok_or_else(overflow)?;
    let tr = dot(sub(r, p), d).ok_or_else(overflow)?;
    let ts = dot(sub(s, p), d).ok_or_else(overflow)?;
    let (lo, hi) = (tr.min(ts), tr.max(ts));
    Ok(hi.min(len2) > lo.max(0))
}

/// Validate unit ids are unique; used by every layer constructor.
pub(crate) fn check_unique_ids<T>(units: &[ArealUnit<T>]) -> Result<(), GeometryError> {
    let mut seen = BTreeSet::new();
    for u in units {
        if !seen.insert(u.id.as_str()) {
            return Err(GeometryError::DuplicateId { id: u.id.clone() });
        }
    }
    Ok(())
}
