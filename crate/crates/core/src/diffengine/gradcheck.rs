//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::graph::Graph;
use super::params::ParamStore;
use super::{forward_backward, Model};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Entries probed per tensor; `None` probes every entry.
    pub max_entries_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_entries_per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries skipped because every tried step switched an activation case.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<M: Model<f64>>(model: &M, store: &ParamStore<f64>, batch: &[M::Sample]) -> Result<(f64, Vec<u64>)> {
    let mut total = 0.0;
    let mut sigs = Vec::with_capacity(batch.len());
    for sample in batch {
        let mut g = Graph::new();
        let loss = model.loss(&mut g, store, sample)?;
        total += g.value(loss).item();
        sigs.push(g.branch_signature());
    }
    Ok((total, sigs))
}

/// Computes analytic gradients with [`forward_backward`] and compares them
/// against central differences.
pub fn grad_check<M: Model<f64>>(
    model: &M,
    store: &ParamStore<f64>,
    batch: &[M::Sample],
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut work = store.clone();
    forward_backward(model, &mut work, batch)?;
    compare_gradients(model, &work, batch, config)
}

/// Tenfold step reductions tried before an entry is given up as sitting on a kink.
pub const STEP_REFINEMENTS: usize = 2;

/// Compares the gradient buffers already in `store` against central
/// differences of the loss. When a perturbation changes any activation case
/// the step is shrunk up to [`STEP_REFINEMENTS`] times; entries that still
/// switch a case are skipped and replaced by other entries.
pub fn compare_gradients<M: Model<f64>>(
    model: &M,
    store: &ParamStore<f64>,
    batch: &[M::Sample],
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut probe = store.clone();
    let (_, base_sigs) = eval(model, &probe, batch)?;
    let h = config.step;
    let mut tensors = Vec::new();
    for i in 0..store.len() {
        let (name, param) = store.by_index(i);
        let len = param.value.len();
        let order: Vec<usize> = sample(&mut rng, len, len).into_vec();
        let want = config.max_entries_per_tensor.unwrap_or(len).min(len);
        let mut check = TensorCheck {
            name: name.to_string(),
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        };
        for &j in &order {
            if check.checked == want {
                break;
            }
            let orig = param.value.data()[j];
            let mut numeric = None;
            let mut step = h;
            for _ in 0..=STEP_REFINEMENTS {
                probe.get_mut(name)?.value.data_mut()[j] = orig + step;
                let (fp, sp) = eval(model, &probe, batch)?;
                probe.get_mut(name)?.value.data_mut()[j] = orig - step;
                let (fm, sm) = eval(model, &probe, batch)?;
                probe.get_mut(name)?.value.data_mut()[j] = orig;
                if sp == base_sigs && sm == base_sigs {
                    numeric = Some((fp - fm) / (2.0 * step));
                    break;
                }
                step /= 10.0;
            }
            let Some(numeric) = numeric else {
                check.skipped += 1;
                continue;
            };
            let analytic = param.grad.data()[j];
            check.max_rel_error = check.max_rel_error.max(relative_error(analytic, numeric));
            check.checked += 1;
        }
        tensors.push(check);
    }
    let passed = tensors
        .iter()
        .all(|t| t.max_rel_error <= config.tolerance && (t.checked > 0 || t.skipped == 0));
    Ok(GradCheckReport {
        tensors,
        tolerance: config.tolerance,
        passed,
    })
}
