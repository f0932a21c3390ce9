//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Tensors with more entries than this are checked on a random sample of
    /// this many coordinates; smaller tensors are checked exhaustively.
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            samples_per_tensor: 25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss` around the
/// current parameter values.
pub fn grad_check<F>(
    params: &ParamStore,
    analytic: &Gradients,
    mut loss: F,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if analytic.len() != params.len() {
        return Err(Error::InvalidArgument(
            "gradient set does not match parameter store".into(),
        ));
    }
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("grad_check loss"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates_checked: 0,
    };
    for (id, name, tensor) in params.iter() {
        let coords: Vec<usize> = if tensor.len() <= config.samples_per_tensor {
            (0..tensor.len()).collect()
        } else {
            let mut picked = sample(&mut rng, tensor.len(), config.samples_per_tensor).into_vec();
            picked.sort_unstable();
            picked
        };
        for k in coords {
            let original = tensor.data()[k];
            probe.get_mut(id).data_mut()[k] = original + config.epsilon;
            let up = loss(&probe)?;
            probe.get_mut(id).data_mut()[k] = original - config.epsilon;
            let down = loss(&probe)?;
            probe.get_mut(id).data_mut()[k] = original;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite("grad_check loss"));
            }
            let numeric = (up - down) / (2.0 * config.epsilon);
            let a = analytic.get(id).data()[k];
            let err = relative_error(a, numeric);
            report.coordinates_checked += 1;
            if err > report.max_relative_error || report.worst_param.is_empty() {
                report.max_relative_error = err.max(report.max_relative_error);
                report.worst_param = name.to_string();
                report.worst_index = k;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Runs `build` once to get analytic gradients by backpropagation, then
/// checks them with [`grad_check`], rebuilding the graph for every probe.
pub fn check_graph<B>(params: &ParamStore, build: B, config: &GradCheckConfig) -> Result<GradCheckReport>
where
    B: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let loss = build(&mut graph, params)?;
    let grads = graph.backward(loss, params)?;
    grad_check(
        params,
        &grads,
        |p| {
            let mut g = Graph::new();
            let l = build(&mut g, p)?;
            Ok(g.value(l).item())
        },
        config,
    )
}
