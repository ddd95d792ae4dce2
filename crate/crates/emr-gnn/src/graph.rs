//! Per-relation sparse graph operators: construction, symmetric
//! normalization with self-loops, sparse-dense products, and the
//! Laplacian smoothness score.

use crate::error::{EmrError, Result};
use crate::FeatureMatrix;

/// Compressed sparse row matrix over `f64`.
///
/// Invariants: `row_offsets.len() == n + 1`, column indices sorted and
/// unique within each row, all values nonnegative and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdj {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseAdj {
    /// Build from per-row sorted, deduplicated `(col, value)` entries.
    fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert_eq!(rows.len(), n);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_offsets.push(0);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0), "sorted, unique");
            for (col, val) in row {
                debug_assert!(col < n && val >= 0.0 && val.is_finite());
                col_indices.push(col);
                values.push(val);
            }
            row_offsets.push(col_indices.len());
        }
        SparseAdj {
            n,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Matrix dimension (square).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    /// Iterator over `(col, value)` entries of one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// Stored value at `(i, j)`, zero if absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Dense copy, used by the dense solvers and test oracles.
    pub fn to_dense(&self) -> FeatureMatrix {
        let mut out = FeatureMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out[(i, j)] = v;
            }
        }
        out
    }
}

/// One node set with `R` symmetric per-relation adjacencies.
#[derive(Debug, Clone)]
pub struct RelationalGraph {
    n: usize,
    relations: Vec<SparseAdj>,
    relation_names: Vec<String>,
}

impl RelationalGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of relations `R`.
    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn relations(&self) -> &[SparseAdj] {
        &self.relations
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    /// Single-relation view, for per-relation baselines. Index must be valid.
    pub fn single_relation(&self, r: usize) -> RelationalGraph {
        RelationalGraph {
            n: self.n,
            relations: vec![self.relations[r].clone()],
            relation_names: vec![self.relation_names[r].clone()],
        }
    }
}

/// Build a relational graph from per-relation edge lists.
///
/// Each relation is symmetrized (edge `(i, j)` implies `(j, i)`) and
/// deduplicated; surviving edges carry weight 1. Self-loop input edges are
/// dropped here; normalization adds the self-loop once. Names default to
/// `rel0, rel1, ...`; use [`build_named_graph`] to override.
pub fn build_graph(edge_lists: &[Vec<(usize, usize)>], n: usize) -> Result<RelationalGraph> {
    let names = (0..edge_lists.len()).map(|r| format!("rel{r}")).collect();
    build_named_graph(edge_lists, n, names)
}

/// [`build_graph`] with explicit relation names (manifest order).
pub fn build_named_graph(
    edge_lists: &[Vec<(usize, usize)>],
    n: usize,
    relation_names: Vec<String>,
) -> Result<RelationalGraph> {
    if n == 0 {
        return Err(EmrError::invalid("graph must have at least one node"));
    }
    if edge_lists.is_empty() {
        return Err(EmrError::invalid("graph must have at least one relation"));
    }
    if relation_names.len() != edge_lists.len() {
        return Err(EmrError::invalid(format!(
            "{} relation names for {} relations",
            relation_names.len(),
            edge_lists.len()
        )));
    }
    let mut relations = Vec::with_capacity(edge_lists.len());
    for edges in edge_lists {
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(src, dst) in edges {
            for idx in [src, dst] {
                if idx >= n {
                    return Err(EmrError::IndexOutOfRange { index: idx, n });
                }
            }
            if src == dst {
                continue;
            }
            neighbors[src].push(dst);
            neighbors[dst].push(src);
        }
        let rows = neighbors
            .into_iter()
            .map(|mut cols| {
                cols.sort_unstable();
                cols.dedup();
                cols.into_iter().map(|c| (c, 1.0)).collect()
            })
            .collect();
        relations.push(SparseAdj::from_rows(n, rows));
    }
    Ok(RelationalGraph {
        n,
        relations,
        relation_names,
    })
}

/// A relation's symmetrically normalized, self-looped adjacency
/// `(D + I)^{-1/2} (A + I) (D + I)^{-1/2}` together with the shifted
/// degree vector `d_i + 1`.
#[derive(Debug, Clone)]
pub struct NormalizedRelation {
    adj_norm: SparseAdj,
    deg_tilde: Vec<f64>,
}

impl NormalizedRelation {
    pub fn n(&self) -> usize {
        self.adj_norm.n
    }

    pub fn adj_norm(&self) -> &SparseAdj {
        &self.adj_norm
    }

    pub fn deg_tilde(&self) -> &[f64] {
        &self.deg_tilde
    }
}

/// Normalize every relation of a graph. The input is not modified.
///
/// The self-loop keeps every shifted degree positive, so isolated nodes
/// need no special casing and the result is always defined.
pub fn normalize(graph: &RelationalGraph) -> Vec<NormalizedRelation> {
    graph
        .relations()
        .iter()
        .map(normalize_relation)
        .collect()
}

fn normalize_relation(adj: &SparseAdj) -> NormalizedRelation {
    let n = adj.n;
    let deg_tilde: Vec<f64> = (0..n)
        .map(|i| (adj.row_offsets[i + 1] - adj.row_offsets[i]) as f64 + 1.0)
        .collect();
    // One rounding each for product, sqrt, and division keeps the weight
    // exactly symmetric and exact whenever the degree product is a
    // perfect square.
    let weight = |i: usize, j: usize| 1.0 / (deg_tilde[i] * deg_tilde[j]).sqrt();
    let rows = (0..n)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(adj.row_offsets[i + 1] - adj.row_offsets[i] + 1);
            let mut self_loop_placed = false;
            for (j, _) in adj.row(i) {
                if !self_loop_placed && j > i {
                    row.push((i, weight(i, i)));
                    self_loop_placed = true;
                }
                row.push((j, weight(i, j)));
            }
            if !self_loop_placed {
                row.push((i, weight(i, i)));
            }
            row
        })
        .collect();
    NormalizedRelation {
        adj_norm: SparseAdj::from_rows(n, rows),
        deg_tilde,
    }
}

/// Sparse-dense product `adj_norm * Z`.
pub fn spmm(rel: &NormalizedRelation, z: &FeatureMatrix) -> Result<FeatureMatrix> {
    let adj = &rel.adj_norm;
    if z.nrows() != adj.n {
        return Err(EmrError::ShapeMismatch {
            context: "spmm",
            expected: format!("{} rows", adj.n),
            got: format!("{} rows", z.nrows()),
        });
    }
    let mut out = FeatureMatrix::zeros(z.nrows(), z.ncols());
    // Column-major accumulation: contiguous writes per output column,
    // fixed per-row summation order keeps results deterministic.
    for c in 0..z.ncols() {
        for i in 0..adj.n {
            let mut acc = 0.0;
            for (j, v) in adj.row(i) {
                acc += v * z[(j, c)];
            }
            out[(i, c)] = acc;
        }
    }
    Ok(out)
}

/// Laplacian smoothness `tr(Zᵀ Z) - tr(Zᵀ adj_norm Z)`, the quadratic form
/// of `I - adj_norm`. Computed via the trace identity: one spmm and two
/// inner products, no edge re-enumeration. Nonnegative up to round-off.
pub fn smoothness_score(rel: &NormalizedRelation, z: &FeatureMatrix) -> Result<f64> {
    let az = spmm(rel, z)?;
    let mut zz = 0.0;
    let mut zaz = 0.0;
    for (zi, azi) in z.iter().zip(az.iter()) {
        zz += zi * zi;
        zaz += zi * azi;
    }
    Ok(zz - zaz)
}
