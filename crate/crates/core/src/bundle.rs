//! On-disk graph bundles.
//!
//! A bundle is a directory holding
//! - `edges.tsv`: two zero-based node indices per line, whitespace separated,
//!   read as undirected;
//! - `features.csv`: one comma-separated row of reals per node, no header;
//! - `labels.txt`: one integer class per line;
//! - `meta.json`: `{"name", "num_nodes", "feature_dim", "num_classes"}`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub name: String,
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_bundle(dir: &Path) -> Result<(Graph, BundleMeta)> {
    let meta_path = dir.join("meta.json");
    let meta: BundleMeta =
        serde_json::from_str(&read(&meta_path)?).map_err(|e| Error::parse("bundle metadata", &meta_path, e))?;

    let feat_path = dir.join("features.csv");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(&feat_path)
        .map_err(|e| Error::parse("features", &feat_path, e))?;
    let mut data = Vec::with_capacity(meta.num_nodes * meta.feature_dim);
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::parse("features", &feat_path, e))?;
        if rec.len() != meta.feature_dim {
            return Err(Error::parse(
                "features",
                &feat_path,
                format!("row {rows} has {} columns, meta declares {}", rec.len(), meta.feature_dim),
            ));
        }
        for field in rec.iter() {
            data.push(
                field
                    .parse::<f64>()
                    .map_err(|e| Error::parse("features", &feat_path, format!("row {rows}: {e}")))?,
            );
        }
        rows += 1;
    }
    if rows != meta.num_nodes {
        return Err(Error::parse(
            "features",
            &feat_path,
            format!("{rows} rows, meta declares {} nodes", meta.num_nodes),
        ));
    }
    let features = Tensor2::from_vec(rows, meta.feature_dim, data)?;

    let label_path = dir.join("labels.txt");
    let labels = read(&label_path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| Error::parse("labels", &label_path, format!("line {}: {e}", k + 1)))
        })
        .collect::<Result<Vec<usize>>>()?;
    if labels.len() != meta.num_nodes {
        return Err(Error::parse(
            "labels",
            &label_path,
            format!("{} labels, meta declares {} nodes", labels.len(), meta.num_nodes),
        ));
    }

    let edge_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (k, line) in read(&edge_path)?.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [a, b] => {
                let parse = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|e| Error::parse("edges", &edge_path, format!("line {}: {e}", k + 1)))
                };
                edges.push((parse(a)?, parse(b)?));
            }
            _ => {
                return Err(Error::parse(
                    "edges",
                    &edge_path,
                    format!("line {}: expected two indices", k + 1),
                ))
            }
        }
    }
    let graph = build_graph(&edges, features, labels)?.with_num_classes(meta.num_classes)?;
    Ok((graph, meta))
}

pub fn write_bundle(dir: &Path, g: &Graph, name: &str) -> Result<BundleMeta> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = BundleMeta {
        name: name.to_string(),
        num_nodes: g.num_nodes(),
        feature_dim: g.feature_dim(),
        num_classes: g.num_classes(),
    };
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;

    let feat_path = dir.join("features.csv");
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&feat_path)
        .map_err(|e| Error::parse("features", &feat_path, e))?;
    for r in 0..g.num_nodes() {
        w.write_record(g.features().row(r).iter().map(|v| v.to_string()))
            .map_err(|e| Error::parse("features", &feat_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&feat_path, e))?;

    let label_path = dir.join("labels.txt");
    let mut labels = String::with_capacity(2 * g.num_nodes());
    for y in g.labels() {
        labels.push_str(&y.to_string());
        labels.push('\n');
    }
    fs::write(&label_path, labels).map_err(|e| Error::io(&label_path, e))?;

    let edge_path = dir.join("edges.tsv");
    let mut f = std::io::BufWriter::new(fs::File::create(&edge_path).map_err(|e| Error::io(&edge_path, e))?);
    for e in g.edges() {
        writeln!(f, "{}\t{}", e.lo(), e.hi()).map_err(|err| Error::io(&edge_path, err))?;
    }
    f.flush().map_err(|e| Error::io(&edge_path, e))?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_chain_graph;

    #[test]
    fn round_trip() {
        let g = generate_chain_graph(40, 0.1, 3, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let meta = write_bundle(dir.path(), &g, "chain").unwrap();
        assert_eq!(meta.num_nodes, 40);
        let (h, meta2) = read_bundle(dir.path()).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(h.edges(), g.edges());
        assert_eq!(h.labels(), g.labels());
        assert_eq!(h.features(), g.features());
    }

    fn write_minimal(dir: &Path, edges: &str, labels: &str) {
        fs::write(
            dir.join("meta.json"),
            r#"{"name":"t","num_nodes":3,"feature_dim":2,"num_classes":2}"#,
        )
        .unwrap();
        fs::write(dir.join("features.csv"), "0.5,1\n-2, 3e-1\n0,0\n").unwrap();
        fs::write(dir.join("labels.txt"), labels).unwrap();
        fs::write(dir.join("edges.tsv"), edges).unwrap();
    }

    #[test]
    fn reads_whitespace_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal(dir.path(), "0 1\n1\t0\n\n2   1\n", "0\n1\n1\n");
        let (g, _) = read_bundle(dir.path()).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.features().row(1), &[-2.0, 0.3]);
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal(dir.path(), "0 1 2\n", "0\n1\n1\n");
        assert!(matches!(read_bundle(dir.path()), Err(Error::Parse { what: "edges", .. })));
        write_minimal(dir.path(), "0 7\n", "0\n1\n1\n");
        assert!(matches!(read_bundle(dir.path()), Err(Error::IndexOutOfRange { index: 7, .. })));
        write_minimal(dir.path(), "0 1\n", "0\n1\n");
        assert!(matches!(read_bundle(dir.path()), Err(Error::Parse { what: "labels", .. })));
        write_minimal(dir.path(), "0 1\n", "0\n1\n5\n");
        assert!(matches!(read_bundle(dir.path()), Err(Error::InvalidConfig(_))));
        assert!(matches!(read_bundle(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
