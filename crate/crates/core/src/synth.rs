//! Synthetic heterophilic graphs: a minesweeper-style grid and a chain with
//! shortcuts.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{build_graph, Edge, Graph};
use crate::split::seeded_rng;
use crate::tensor::Tensor2;

/// Mine probability giving an expected edge homophily of 0.68:
/// `p² + (1 − p)² = 0.68` at `p = 0.2`.
pub const MINE_RATE: f64 = 0.2;
/// Feature width of [`generate_grid_graph`].
pub const GRID_FEATURE_DIM: usize = 7;
/// Share of grid cells whose mine count is hidden.
pub const GRID_UNKNOWN_RATE: f64 = 0.5;
/// Feature width of [`generate_chain_graph`].
pub const CHAIN_FEATURE_DIM: usize = 8;

const LABEL_STREAM: u64 = 10;
const FEATURE_STREAM: u64 = 11;
const SHORTCUT_STREAM: u64 = 12;

/// `rows × cols` lattice where each cell links to its (up to) 8 neighbours.
///
/// Node `r·cols + c` is a mine (label 1) with probability `mine_rate`.
/// Features, 7 columns:
/// - columns 0–5: one-hot of the number of neighbouring mines, with counts
///   of 5 or more sharing column 5;
/// - column 6: set to 1 for cells whose count is hidden, in which case
///   columns 0–5 are all zero. Each cell is hidden independently with
///   probability [`GRID_UNKNOWN_RATE`].
pub fn generate_grid_graph(rows: usize, cols: usize, mine_rate: f64, seed: u64) -> Result<Graph> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidConfig(format!("grid must be non-empty, got {rows}×{cols}")));
    }
    if !(0.0..=1.0).contains(&mine_rate) {
        return Err(Error::InvalidConfig(format!("mine_rate must lie in [0,1], got {mine_rate}")));
    }
    let n = rows * cols;
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            // right, down, down-right, down-left: each undirected edge once
            if c + 1 < cols {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((id(r, c), id(r + 1, c)));
                if c + 1 < cols {
                    edges.push((id(r, c), id(r + 1, c + 1)));
                }
                if c > 0 {
                    edges.push((id(r, c), id(r + 1, c - 1)));
                }
            }
        }
    }
    let mut rng = seeded_rng(seed, LABEL_STREAM);
    let labels: Vec<usize> = (0..n).map(|_| usize::from(rng.gen_bool(mine_rate))).collect();
    let mut mines_near = vec![0usize; n];
    for &(i, j) in &edges {
        mines_near[i] += labels[j];
        mines_near[j] += labels[i];
    }
    let mut rng = seeded_rng(seed, FEATURE_STREAM);
    let mut features = Tensor2::zeros(n, GRID_FEATURE_DIM);
    for (v, &count) in mines_near.iter().enumerate() {
        if rng.gen_bool(GRID_UNKNOWN_RATE) {
            features.row_mut(v)[6] = 1.0;
        } else {
            features.row_mut(v)[count.min(5)] = 1.0;
        }
    }
    build_graph(&edges, features, labels)?.with_num_classes(2)
}

/// Path `0–1–…–(n−1)` plus `⌊shortcut_rate·n⌋` distinct random shortcuts.
///
/// Labels cycle `i mod num_classes`; features are i.i.d. uniform on
/// `[-1, 1)` with [`CHAIN_FEATURE_DIM`] columns.
pub fn generate_chain_graph(n: usize, shortcut_rate: f64, num_classes: usize, seed: u64) -> Result<Graph> {
    if n == 0 || num_classes == 0 {
        return Err(Error::InvalidConfig(format!(
            "chain needs n ≥ 1 and num_classes ≥ 1, got n={n}, num_classes={num_classes}"
        )));
    }
    if !(shortcut_rate >= 0.0) {
        return Err(Error::InvalidConfig(format!("shortcut_rate must be ≥ 0, got {shortcut_rate}")));
    }
    let shortcuts = (shortcut_rate * n as f64).floor() as usize;
    let path: HashSet<Edge> = (1..n).map(|i| Edge::new(i - 1, i)).collect();
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    let mut rng = seeded_rng(seed, SHORTCUT_STREAM);
    let extra = crate::split::sample_negatives_with(n, shortcuts, &path, &mut rng)?;
    edges.extend(extra.iter().map(|e| (e.lo(), e.hi())));

    let mut rng = seeded_rng(seed, FEATURE_STREAM);
    let features = Tensor2::from_fn(n, CHAIN_FEATURE_DIM, |_, _| rng.gen_range(-1.0..1.0));
    let labels = (0..n).map(|i| i % num_classes).collect();
    build_graph(&edges, features, labels)?.with_num_classes(num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::edge_homophily;

    #[test]
    fn two_by_two_is_complete() {
        let g = generate_grid_graph(2, 2, 0.5, 0).unwrap();
        assert_eq!(g.num_nodes(), 4);
        assert_eq!(g.num_edges(), 6);
    }

    #[test]
    fn thirty_grid_counts_and_degrees() {
        let g = generate_grid_graph(30, 30, 0.2, 1).unwrap();
        // 2·30·29 axis edges + 2·29² diagonals
        assert_eq!(g.num_edges(), 2 * 30 * 29 + 2 * 29 * 29);
        assert_eq!(g.degrees()[0], 3);
        assert_eq!(g.degrees()[1], 5);
        assert_eq!(g.degrees()[31], 8);
        assert_eq!(g.feature_dim(), GRID_FEATURE_DIM);
    }

    #[test]
    fn grid_features_match_mine_counts() {
        let g = generate_grid_graph(12, 9, 0.3, 4).unwrap();
        let labels = g.labels();
        let mut hidden = 0;
        for v in 0..g.num_nodes() {
            let row = g.features().row(v);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            if row[6] == 1.0 {
                hidden += 1;
                continue;
            }
            let (r, c) = ((v / 9) as i64, (v % 9) as i64);
            let mut count = 0;
            for dr in -1..=1i64 {
                for dc in -1..=1i64 {
                    let (rr, cc) = (r + dr, c + dc);
                    if (dr, dc) != (0, 0) && (0..12).contains(&rr) && (0..9).contains(&cc) {
                        count += labels[(rr * 9 + cc) as usize];
                    }
                }
            }
            assert_eq!(row[count.min(5)], 1.0, "node {v}");
        }
        assert!(hidden > 20 && hidden < 88);
    }

    #[test]
    fn no_mines_fully_homophilic() {
        let g = generate_grid_graph(5, 7, 0.0, 3).unwrap();
        assert!(g.labels().iter().all(|&l| l == 0));
        assert_eq!(g.num_classes(), 2);
        assert_eq!(edge_homophily(&g).unwrap(), 1.0);
    }

    #[test]
    fn grid_is_deterministic() {
        let a = generate_grid_graph(6, 6, 0.2, 9).unwrap();
        let b = generate_grid_graph(6, 6, 0.2, 9).unwrap();
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.features(), b.features());
    }

    #[test]
    fn chain_cases() {
        let g = generate_chain_graph(5, 0.0, 2, 0).unwrap();
        assert_eq!(g.num_edges(), 4);
        assert!((1..5).all(|i| g.has_edge(Edge::new(i - 1, i))));
        let g = generate_chain_graph(7, 0.0, 7, 0).unwrap();
        assert_eq!(edge_homophily(&g).unwrap(), 0.0);
    }

    #[test]
    fn long_chain_is_heterophilic() {
        let g = generate_chain_graph(1000, 0.05, 18, 2).unwrap();
        assert_eq!(g.num_edges(), 999 + 50);
        let same = g
            .edges()
            .iter()
            .filter(|e| e.lo() % 18 == e.hi() % 18)
            .count();
        let direct = same as f64 / g.num_edges() as f64;
        assert_eq!(edge_homophily(&g).unwrap(), direct);
        assert!(direct < 0.1);
    }
}
