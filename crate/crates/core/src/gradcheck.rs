//! Central finite-difference checks for analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::optim::ParamTensors;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are compared against round-off rather than against 0.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Coordinates probed per tensor; `None` probes all of them.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name and coordinate of the worst entry.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Compares `analytic` against central differences of `loss` around `params`.
///
/// The relative error of a coordinate is `|a − n| / max(|a|, |n|, REL_FLOOR)`.
/// A parameter set with no scalars yields a vacuous report with error 0.
pub fn grad_check<P, F>(mut loss: F, params: &P, analytic: &P, cfg: GradCheckConfig) -> GradCheckReport
where
    P: ParamTensors + Clone,
    F: FnMut(&P) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let names: Vec<(String, usize)> = params.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|(_, t)| t.as_slice().to_vec()).collect();
    let mut probe = params.clone();
    let mut report = GradCheckReport::default();
    for (t, (name, len)) in names.iter().enumerate() {
        let coords: Vec<usize> = match cfg.max_coords_per_tensor {
            Some(k) if k < *len => sample(&mut rng, *len, k).into_vec(),
            _ => (0..*len).collect(),
        };
        for k in coords {
            let orig = probe.tensors_mut()[t].as_slice()[k];
            probe.tensors_mut()[t].as_mut_slice()[k] = orig + cfg.step;
            let up = loss(&probe);
            probe.tensors_mut()[t].as_mut_slice()[k] = orig - cfg.step;
            let down = loss(&probe);
            probe.tensors_mut()[t].as_mut_slice()[k] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            let a = grads[t][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coords_checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), k));
            }
        }
    }
    report
}
