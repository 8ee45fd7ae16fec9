//! Inference timing and parameter-count scaling tables.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NormalizedAdjacency};
use crate::model::{predict_edges, GraffConfig, Model, ModelKind};
use crate::split::{make_eval_set, EdgeSplit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceTiming {
    pub repeats: usize,
    pub mean_seconds: f64,
    /// Sample standard deviation; `None` with a single repeat.
    pub sd_seconds: Option<f64>,
}

/// Times [`predict_edges`] over the test evaluation set on the test
/// message-passing graph, after one untimed warm-up call.
pub fn measure_inference(model: &Model, g: &Graph, split: &EdgeSplit, repeats: usize) -> Result<InferenceTiming> {
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    let (edges, _) = make_eval_set(&split.test)?;
    let adj = NormalizedAdjacency::from_edges(g.num_nodes(), &split.test.message_passing);
    predict_edges(model, g, &adj, &edges)?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(predict_edges(model, g, &adj, &edges)?);
        times.push(t.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / repeats as f64;
    let sd = (repeats > 1).then(|| {
        (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64).sqrt()
    });
    Ok(InferenceTiming {
        repeats,
        mean_seconds: mean,
        sd_seconds: sd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub kind: ModelKind,
    pub layers: usize,
    pub hidden: usize,
    pub param_count: usize,
    pub message_passing_count: usize,
}

/// Parameter counts of `base` for every `(layers, hidden)` combination.
pub fn report_scaling(base: &GraffConfig, input_dim: usize, layers: &[usize], hidden: &[usize]) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::with_capacity(layers.len() * hidden.len());
    for &h in hidden {
        for &l in layers {
            let cfg = GraffConfig {
                layers: l,
                hidden: h,
                ..base.clone()
            };
            let m = Model::new(cfg, input_dim, 0)?;
            rows.push(ScalingRow {
                kind: base.kind,
                layers: l,
                hidden: h,
                param_count: m.param_count(),
                message_passing_count: m.params.message_passing_count(),
            });
        }
    }
    Ok(rows)
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut s = String::from("kind,layers,hidden,param_count,message_passing_count\n");
    for r in rows {
        let kind = serde_json::to_value(r.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        s.push_str(&format!("{kind},{},{},{},{}\n", r.layers, r.hidden, r.param_count, r.message_passing_count));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::split::{transductive_split, SplitConfig};
    use crate::synth::generate_grid_graph;

    #[test]
    fn single_repeat_has_no_sd() {
        let g = generate_grid_graph(6, 6, 0.2, 0).unwrap();
        let split = transductive_split(&g, &SplitConfig::default()).unwrap();
        let m = Model::new(GraffConfig { hidden: 8, ..Default::default() }, 7, 0).unwrap();
        let t = measure_inference(&m, &g, &split, 1).unwrap();
        assert_eq!(t.repeats, 1);
        assert!(t.sd_seconds.is_none());
        let t = measure_inference(&m, &g, &split, 3).unwrap();
        assert!(t.sd_seconds.is_some() && t.mean_seconds > 0.0);
        assert!(measure_inference(&m, &g, &split, 0).is_err());
        let json = serde_json::to_value(t).unwrap();
        let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["mean_seconds", "repeats", "sd_seconds"]);
    }

    #[test]
    fn graff_constant_gcn_affine() {
        let layers = [1, 3, 5, 7, 9, 12];
        let graff = report_scaling(&GraffConfig::default(), 7, &layers, &[16]).unwrap();
        assert!(graff.iter().all(|r| r.param_count == graff[0].param_count));
        let gcn_cfg = GraffConfig { kind: ModelKind::Gcn, ..Default::default() };
        let gcn = report_scaling(&gcn_cfg, 7, &layers, &[16]).unwrap();
        // slope d_h² per layer, intercept from the one-layer row
        for r in &gcn {
            assert_eq!(r.param_count, gcn[0].param_count + (r.layers - 1) * 16 * 16);
        }
        let csv = scaling_csv(&gcn);
        assert!(csv.lines().nth(1).unwrap().starts_with("gcn,1,16,"));
    }

    #[test]
    fn graff_block_quadruples_with_width() {
        let plain = GraffConfig { source_term: false, ..Default::default() };
        let rows = report_scaling(&plain, 7, &[3], &[16, 32]).unwrap();
        // Ω (d) + M (d²) + gate and residual (2d): 3d + d²
        assert_eq!(rows[0].message_passing_count, 16 * 16 + 3 * 16);
        assert_eq!(rows[1].message_passing_count, 32 * 32 + 3 * 32);
        // the quadratic part scales by exactly 4
        assert_eq!(rows[1].message_passing_count - 3 * 32, 4 * (rows[0].message_passing_count - 3 * 16));
    }
}
