//! Neighborhood graphs over spatial locations and their adjacency spectra.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FcarError, Result};
use crate::model::Variant;

/// Distance kept from each end of the admissible interval.
pub const BOUNDARY_GUARD: f64 = 1e-6;

/// Symmetric 0/1 adjacency stored as sorted neighbor lists.
#[derive(Debug, Clone)]
pub struct NeighborhoodGraph {
    neighbors: Vec<Vec<usize>>,
    row_sums: Vec<usize>,
    location_ids: Vec<String>,
    torus: Option<(usize, usize)>,
    spectrum: OnceLock<SpectrumCache>,
}

impl PartialEq for NeighborhoodGraph {
    fn eq(&self, other: &Self) -> bool {
        self.neighbors == other.neighbors && self.location_ids == other.location_ids
    }
}

impl NeighborhoodGraph {
    fn from_sets(sets: Vec<BTreeSet<usize>>, location_ids: Vec<String>, torus: Option<(usize, usize)>) -> Self {
        let neighbors: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let row_sums = neighbors.iter().map(Vec::len).collect();
        Self {
            neighbors,
            row_sums,
            location_ids,
            torus,
            spectrum: OnceLock::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn row_sums(&self) -> &[usize] {
        &self.row_sums
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.row_sums[i]
    }

    pub fn location_ids(&self) -> &[String] {
        &self.location_ids
    }

    /// `(rows, cols)` when built by [`build_torus`].
    pub fn torus_shape(&self) -> Option<(usize, usize)> {
        self.torus
    }

    /// Set when some location has no neighbors. Such graphs cannot host the nested model.
    pub fn has_isolated(&self) -> bool {
        self.row_sums.contains(&0)
    }

    pub fn edge_count(&self) -> usize {
        self.row_sums.iter().sum::<usize>() / 2
    }

    /// Undirected edges `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    /// Dense adjacency matrix. Only used for one-off eigensolves.
    pub fn dense_adjacency(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut w = DMatrix::zeros(n, n);
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb {
                w[(i, j)] = 1.0;
            }
        }
        w
    }

    /// `sum_{j in N_i} x_j`.
    pub fn neighbor_sum(&self, i: usize, x: &[f64]) -> f64 {
        self.neighbors[i].iter().map(|&j| x[j]).sum()
    }

    /// `x' W y` in O(edges).
    pub fn adjacency_form(&self, x: &[f64], y: &[f64]) -> f64 {
        self.neighbors
            .iter()
            .enumerate()
            .map(|(i, nb)| x[i] * nb.iter().map(|&j| y[j]).sum::<f64>())
            .sum()
    }

    /// Cached spectrum; analytic for tori, dense otherwise.
    pub fn spectrum(&self) -> &SpectrumCache {
        self.spectrum.get_or_init(|| normalized_spectrum(self))
    }
}

/// Four-nearest-neighbor lattice wrapped on a `rows x cols` torus.
///
/// Node `(r, c)` has index `r * cols + c`.
pub fn build_torus(rows: usize, cols: usize) -> Result<NeighborhoodGraph> {
    if rows < 3 || cols < 3 {
        return Err(FcarError::InvalidLattice(format!(
            "torus dimensions must be at least 3x3, got {rows}x{cols}"
        )));
    }
    let idx = |r: usize, c: usize| r * cols + c;
    let sets = (0..rows * cols)
        .map(|k| {
            let (r, c) = (k / cols, k % cols);
            BTreeSet::from([
                idx((r + rows - 1) % rows, c),
                idx((r + 1) % rows, c),
                idx(r, (c + cols - 1) % cols),
                idx(r, (c + 1) % cols),
            ])
        })
        .collect();
    let ids = (0..rows * cols).map(|i| i.to_string()).collect();
    Ok(NeighborhoodGraph::from_sets(sets, ids, Some((rows, cols))))
}

/// Symmetric closure of an undirected edge list. Duplicates collapse.
pub fn build_from_edge_list(n: usize, edges: &[(usize, usize)], ids: Vec<String>) -> Result<NeighborhoodGraph> {
    if ids.len() != n {
        return Err(FcarError::Validation(format!(
            "{} location ids for {n} nodes",
            ids.len()
        )));
    }
    let mut sets = vec![BTreeSet::new(); n];
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(FcarError::Validation(format!(
                "edge ({a}, {b}) out of range for {n} nodes"
            )));
        }
        if a == b {
            return Err(FcarError::Validation(format!("self-loop at node {a}")));
        }
        sets[a].insert(b);
        sets[b].insert(a);
    }
    let g = NeighborhoodGraph::from_sets(sets, ids, None);
    if g.has_isolated() {
        log::warn!("neighborhood graph has isolated locations");
    }
    Ok(g)
}

/// Eigenvalues of `W` and of `D^{-1/2} W D^{-1/2}`, both nonincreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumCache {
    pub w_eigenvalues: Vec<f64>,
    /// `None` when some row sum is zero.
    pub normalized_eigenvalues: Option<Vec<f64>>,
}

fn sort_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Symbol `2 cos(2 pi k / rows) + 2 cos(2 pi l / cols)` of the torus adjacency.
pub fn torus_w_eigenvalues(rows: usize, cols: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(rows * cols);
    for k in 0..rows {
        for l in 0..cols {
            v.push(2.0 * (2.0 * PI * k as f64 / rows as f64).cos() + 2.0 * (2.0 * PI * l as f64 / cols as f64).cos());
        }
    }
    sort_desc(v)
}

/// Dense symmetric eigensolve of `W` and its degree-normalized form.
pub fn dense_spectrum(g: &NeighborhoodGraph) -> SpectrumCache {
    let w = g.dense_adjacency();
    let w_eigenvalues = sort_desc(w.symmetric_eigenvalues().iter().copied().collect());
    let normalized_eigenvalues = (!g.has_isolated()).then(|| {
        let inv_sqrt: Vec<f64> = g.row_sums.iter().map(|&d| 1.0 / (d as f64).sqrt()).collect();
        let m = DMatrix::from_fn(g.n(), g.n(), |i, j| inv_sqrt[i] * w[(i, j)] * inv_sqrt[j]);
        sort_desc(m.symmetric_eigenvalues().iter().copied().collect())
    });
    SpectrumCache {
        w_eigenvalues,
        normalized_eigenvalues,
    }
}

/// Spectrum of `g`: the analytic torus symbol when available, else a dense solve.
pub fn normalized_spectrum(g: &NeighborhoodGraph) -> SpectrumCache {
    match g.torus {
        Some((rows, cols)) => {
            let w_eigenvalues = torus_w_eigenvalues(rows, cols);
            let normalized_eigenvalues = Some(w_eigenvalues.iter().map(|v| v / 4.0).collect());
            SpectrumCache {
                w_eigenvalues,
                normalized_eigenvalues,
            }
        }
        None => dense_spectrum(g),
    }
}

/// Open interval of dependence values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Dependence values keeping the precision matrix positive definite,
/// shrunk by [`BOUNDARY_GUARD`] at both ends.
pub fn admissible_interval(cache: &SpectrumCache, variant: Variant) -> Result<Interval> {
    let spectrum = match variant {
        Variant::General => &cache.w_eigenvalues,
        Variant::Nested => cache.normalized_eigenvalues.as_ref().ok_or_else(|| {
            FcarError::FitDomain("nested model requires every location to have a neighbor".into())
        })?,
    };
    let max = spectrum.first().copied().unwrap_or(0.0);
    let min = spectrum.last().copied().unwrap_or(0.0);
    if !(min < 0.0 && max > 0.0) {
        return Err(FcarError::NoValidInterval(format!(
            "adjacency spectrum [{min}, {max}] does not straddle zero"
        )));
    }
    Ok(Interval {
        lower: 1.0 / min + BOUNDARY_GUARD,
        upper: 1.0 / max - BOUNDARY_GUARD,
    })
}
