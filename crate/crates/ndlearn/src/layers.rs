//! Layers built on top of [`Graph`]. Each layer owns the ids of its
//! parameters inside a shared [`ParamStore`] and adds nodes to a graph when
//! run.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{glorot_uniform, ParamId, ParamStore};
use crate::tensor::Tensor;

const GATES: [&str; 4] = ["i", "f", "c", "o"];

/// Parameters of one LSTM direction, gate order input/forget/cell/output.
#[derive(Debug, Clone)]
pub struct LstmDirection {
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
}

impl LstmDirection {
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut w = Vec::with_capacity(4);
        let mut u = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for gate in GATES {
            w.push(store.add(
                format!("{prefix}.w_{gate}"),
                glorot_uniform(&[hidden_dim, input_dim], input_dim, hidden_dim, rng),
            )?);
            u.push(store.add(
                format!("{prefix}.u_{gate}"),
                glorot_uniform(&[hidden_dim, hidden_dim], hidden_dim, hidden_dim, rng),
            )?);
            let fill = if gate == "f" { 1.0 } else { 0.0 };
            b.push(store.add(
                format!("{prefix}.b_{gate}"),
                Tensor::vector(vec![fill; hidden_dim]),
            )?);
        }
        Ok(Self {
            w: [w[0], w[1], w[2], w[3]],
            u: [u[0], u[1], u[2], u[3]],
            b: [b[0], b[1], b[2], b[3]],
        })
    }

    /// Hidden states for every position, in the order the positions were
    /// visited.
    fn run(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        seq: NodeId,
        order: impl Iterator<Item = usize>,
    ) -> Result<Vec<(usize, NodeId)>> {
        let mut projected = [seq; 4];
        for k in 0..4 {
            let w = graph.param(store, self.w[k]);
            let b = graph.param(store, self.b[k]);
            let xw = graph.linear_rows(seq, w)?;
            projected[k] = graph.add_bias_rows(xw, b)?;
        }
        let u: Vec<NodeId> = self.u.iter().map(|&id| graph.param(store, id)).collect();

        let mut h: Option<NodeId> = None;
        let mut c: Option<NodeId> = None;
        let mut out = Vec::new();
        for t in order {
            let mut pre = [seq; 4];
            for k in 0..4 {
                let xt = graph.row(projected[k], t)?;
                pre[k] = match h {
                    Some(h) => {
                        let uh = graph.matvec(u[k], h)?;
                        graph.add(xt, uh)?
                    }
                    None => xt,
                };
            }
            let i = graph.sigmoid(pre[0])?;
            let f = graph.sigmoid(pre[1])?;
            let g = graph.tanh(pre[2])?;
            let o = graph.sigmoid(pre[3])?;
            let ig = graph.mul(i, g)?;
            let c_new = match c {
                Some(c) => {
                    let fc = graph.mul(f, c)?;
                    graph.add(fc, ig)?
                }
                None => ig,
            };
            let tc = graph.tanh(c_new)?;
            let h_new = graph.mul(o, tc)?;
            out.push((t, h_new));
            h = Some(h_new);
            c = Some(c_new);
        }
        Ok(out)
    }
}

/// Bidirectional LSTM. Forget-gate biases start at 1.0, other biases at 0,
/// weight matrices Glorot-uniform.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

/// Graph nodes produced by [`BiLstm::forward`].
#[derive(Debug, Clone)]
pub struct BiLstmNodes {
    /// Forward-direction hidden state at each position.
    pub forward_states: Vec<NodeId>,
    /// Backward-direction hidden state at each position.
    pub backward_states: Vec<NodeId>,
    /// `[last forward state ‖ last backward state]`, length `2H`.
    pub summary: NodeId,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::InvalidArgument("LSTM dimensions must be positive".into()));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            forward: LstmDirection::new(store, &format!("{prefix}.fwd"), input_dim, hidden_dim, rng)?,
            backward: LstmDirection::new(store, &format!("{prefix}.bwd"), input_dim, hidden_dim, rng)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Runs both directions over `seq`, a `[T, input_dim]` matrix node.
    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, seq: NodeId) -> Result<BiLstmNodes> {
        let sv = graph.value(seq);
        if sv.shape().len() != 2 || sv.cols() != self.input_dim {
            return Err(Error::Shape {
                op: "bilstm_forward",
                expected: vec![0, self.input_dim],
                got: sv.shape().to_vec(),
            });
        }
        let len = sv.rows();
        let fwd = self.forward.run(graph, store, seq, 0..len)?;
        let mut bwd = self.backward.run(graph, store, seq, (0..len).rev())?;
        let summary = graph.concat(&[fwd[len - 1].1, bwd[len - 1].1])?;
        bwd.reverse();
        Ok(BiLstmNodes {
            forward_states: fwd.into_iter().map(|(_, n)| n).collect(),
            backward_states: bwd.into_iter().map(|(_, n)| n).collect(),
            summary,
        })
    }

    /// Eager evaluation: per-step `2H` states and the summary vector.
    pub fn run(&self, store: &ParamStore, seq: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut graph = Graph::new();
        let input = graph.constant(rows_to_matrix(seq, self.input_dim, "bilstm_forward")?);
        let nodes = self.forward(&mut graph, store, input)?;
        let states = nodes
            .forward_states
            .iter()
            .zip(&nodes.backward_states)
            .map(|(&f, &b)| {
                let mut v = graph.value(f).data().to_vec();
                v.extend_from_slice(graph.value(b).data());
                v
            })
            .collect();
        Ok((states, graph.value(nodes.summary).data().to_vec()))
    }
}

/// Converts a list of equally sized vectors into a `[T, dim]` matrix.
pub fn rows_to_matrix(rows: &[Vec<f64>], dim: usize, op: &'static str) -> Result<Tensor> {
    if rows.is_empty() {
        return Err(Error::Empty(op));
    }
    let mut data = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        if r.len() != dim {
            return Err(Error::Shape {
                op,
                expected: vec![dim],
                got: vec![r.len()],
            });
        }
        data.extend_from_slice(r);
    }
    Tensor::matrix(rows.len(), dim, data)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvBankSpec {
    pub widths: Vec<usize>,
    pub n_filters: usize,
}

impl Default for ConvBankSpec {
    fn default() -> Self {
        Self {
            widths: vec![2, 3, 4],
            n_filters: 50,
        }
    }
}

/// One-dimensional convolutions of several widths over a sequence of
/// vectors, each followed by ReLU and max-over-positions pooling.
#[derive(Debug, Clone)]
pub struct ConvBank {
    pub input_dim: usize,
    pub spec: ConvBankSpec,
    /// `(kernel [n_filters, width * input_dim], bias [n_filters])` per width.
    pub filters: Vec<(ParamId, ParamId)>,
}

impl ConvBank {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        spec: ConvBankSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if spec.widths.is_empty()
            || spec.widths.contains(&0)
            || !spec.widths.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::InvalidArgument(format!(
                "conv widths must be positive and strictly increasing, got {:?}",
                spec.widths
            )));
        }
        if spec.n_filters == 0 {
            return Err(Error::InvalidArgument("n_filters must be at least 1".into()));
        }
        let mut filters = Vec::new();
        for &w in &spec.widths {
            let fan_in = w * input_dim;
            let kernel = store.add(
                format!("{prefix}.w{w}.kernel"),
                glorot_uniform(&[spec.n_filters, fan_in], fan_in, spec.n_filters, rng),
            )?;
            let bias = store.add(
                format!("{prefix}.w{w}.bias"),
                Tensor::vector(vec![0.0; spec.n_filters]),
            )?;
            filters.push((kernel, bias));
        }
        Ok(Self {
            input_dim,
            spec,
            filters,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.spec.widths.len() * self.spec.n_filters
    }

    /// Context vector for `seq`, a `[T, input_dim]` matrix node.
    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, seq: NodeId) -> Result<NodeId> {
        let sv = graph.value(seq);
        if sv.shape().len() != 2 || sv.cols() != self.input_dim {
            return Err(Error::Shape {
                op: "conv_bank_forward",
                expected: vec![0, self.input_dim],
                got: sv.shape().to_vec(),
            });
        }
        let mut pooled = Vec::with_capacity(self.filters.len());
        for (&width, &(kernel, bias)) in self.spec.widths.iter().zip(&self.filters) {
            let windows = graph.unfold(seq, width)?;
            let k = graph.param(store, kernel);
            let b = graph.param(store, bias);
            let conv = graph.linear_rows(windows, k)?;
            let conv = graph.add_bias_rows(conv, b)?;
            let act = graph.relu(conv)?;
            pooled.push(graph.max_rows(act)?);
        }
        graph.concat(&pooled)
    }

    pub fn run(&self, store: &ParamStore, seq: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut graph = Graph::new();
        let input = graph.constant(rows_to_matrix(seq, self.input_dim, "conv_bank_forward")?);
        let out = self.forward(&mut graph, store, input)?;
        Ok(graph.value(out).data().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Identity,
    Softmax,
}

/// Fully connected layer `activation(W x + b)`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{prefix}.weight"),
            glorot_uniform(&[output_dim, input_dim], input_dim, output_dim, rng),
        )?;
        let bias = store.add(format!("{prefix}.bias"), Tensor::vector(vec![0.0; output_dim]))?;
        Ok(Self {
            input_dim,
            output_dim,
            weight,
            bias,
        })
    }

    /// Same shapes as [`Dense::new`] but with all-zero weights and bias.
    pub fn zeros(store: &mut ParamStore, prefix: &str, input_dim: usize, output_dim: usize) -> Result<Self> {
        let weight = store.add(format!("{prefix}.weight"), Tensor::zeros(&[output_dim, input_dim]))?;
        let bias = store.add(format!("{prefix}.bias"), Tensor::vector(vec![0.0; output_dim]))?;
        Ok(Self {
            input_dim,
            output_dim,
            weight,
            bias,
        })
    }

    /// Pre-activation `W x + b`.
    pub fn logits(&self, graph: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = graph.param(store, self.weight);
        let b = graph.param(store, self.bias);
        let wx = graph.matvec(w, x)?;
        graph.add(wx, b)
    }

    pub fn forward(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        activation: Activation,
    ) -> Result<NodeId> {
        let z = self.logits(graph, store, x)?;
        match activation {
            Activation::Sigmoid => graph.sigmoid(z),
            Activation::Identity => Ok(z),
            Activation::Softmax => graph.softmax(z),
        }
    }

    pub fn run(&self, store: &ParamStore, x: &[f64], activation: Activation) -> Result<Vec<f64>> {
        let mut graph = Graph::new();
        let input = graph.constant(Tensor::vector(x.to_vec()));
        let out = self.forward(&mut graph, store, input, activation)?;
        Ok(graph.value(out).data().to_vec())
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    check_rate(rate)?;
    let keep = 1.0 / (1.0 - rate);
    Ok(Tensor::vector(
        (0..len)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    ))
}

/// Graph-level inverted dropout. Identity when `rng` is `None` (inference)
/// or when `rate` is zero.
pub fn dropout_node(
    graph: &mut Graph,
    x: NodeId,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    check_rate(rate)?;
    match rng {
        Some(rng) if rate > 0.0 => {
            let mask = dropout_mask(graph.value(x).len(), rate, rng)?;
            let mask = Tensor::new(graph.value(x).shape().to_vec(), mask.into_data())?;
            let m = graph.constant(mask);
            graph.mul(x, m)
        }
        _ => Ok(x),
    }
}

/// Eager inverted dropout over a plain vector.
pub fn dropout(x: &[f64], rate: f64, seed: u64, training: bool) -> Result<Vec<f64>> {
    use rand::SeedableRng;
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = dropout_mask(x.len(), rate, &mut rng)?;
    Ok(x.iter().zip(mask.data()).map(|(a, m)| a * m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn zero_all(store: &mut ParamStore) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_lstm_gives_zero_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let lstm = BiLstm::new(&mut store, "enc", 3, 4, &mut rng).unwrap();
        zero_all(&mut store);
        let seq = vec![vec![0.3, -1.0, 2.0], vec![1.0, 1.0, 1.0]];
        let (states, summary) = lstm.run(&store, &seq).unwrap();
        assert_eq!(states.len(), 2);
        assert!(states.iter().flatten().all(|&v| v == 0.0));
        assert!(summary.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_summary_matches_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let lstm = BiLstm::new(&mut store, "enc", 3, 4, &mut rng).unwrap();
        let (states, summary) = lstm.run(&store, &[vec![0.1, 0.2, -0.3]]).unwrap();
        assert_eq!(states[0], summary);
        assert_eq!(summary.len(), 8);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        BiLstm::new(&mut store, "enc", 2, 3, &mut rng).unwrap();
        assert!(store.by_name("enc.fwd.b_f").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(store.by_name("enc.bwd.b_i").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let lstm = BiLstm::new(&mut store, "enc", 3, 2, &mut rng).unwrap();
        assert!(matches!(lstm.run(&store, &[]), Err(Error::Empty(_))));
        assert!(matches!(lstm.run(&store, &[vec![1.0; 4]]), Err(Error::Shape { .. })));
    }

    #[test]
    fn conv_bank_handles_short_documents() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let bank = ConvBank::new(&mut store, "ctx", 4, ConvBankSpec { widths: vec![2, 3, 4], n_filters: 5 }, &mut rng)
            .unwrap();
        let out = bank.run(&store, &[vec![0.5, -0.5, 1.0, 0.0]]).unwrap();
        assert_eq!(out.len(), 15);
        assert!(out.iter().all(|v| v.is_finite() && *v >= 0.0));

        zero_all(&mut store);
        let out = bank.run(&store, &vec![vec![0.5, -0.5, 1.0, 0.0]; 6]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_bank_rejects_unsorted_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let spec = ConvBankSpec { widths: vec![3, 2], n_filters: 2 };
        assert!(ConvBank::new(&mut store, "ctx", 4, spec, &mut rng).is_err());
    }

    #[test]
    fn dense_closed_forms() {
        let mut store = ParamStore::new();
        let d = Dense::zeros(&mut store, "d", 3, 3).unwrap();
        let x = [0.4, -2.0, 7.0];
        assert_eq!(d.run(&store, &x, Activation::Sigmoid).unwrap(), vec![0.5; 3]);
        let sm = d.run(&store, &x, Activation::Softmax).unwrap();
        assert!(sm.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));

        let eye = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        store.assign("d.weight", eye).unwrap();
        assert_eq!(d.run(&store, &x, Activation::Identity).unwrap(), x.to_vec());
    }

    #[test]
    fn dense_dim_mismatch() {
        let mut store = ParamStore::new();
        let d = Dense::zeros(&mut store, "d", 3, 2).unwrap();
        assert!(d.run(&store, &[1.0, 2.0], Activation::Identity).is_err());
    }

    #[test]
    fn dropout_modes() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(dropout(&x, 0.0, 1, true).unwrap(), x);
        assert_eq!(dropout(&x, 0.0, 1, false).unwrap(), x);
        assert_eq!(dropout(&x, 0.6, 1, false).unwrap(), x);
        assert!(dropout(&x, 1.0, 1, true).is_err());
        assert!(dropout(&x, -0.1, 1, false).is_err());
    }

    #[test]
    fn dropout_zeroes_a_quarter() {
        let x = vec![1.0; 10_000];
        let out = dropout(&x, 0.25, 42, true).unwrap();
        let zeroed = out.iter().filter(|&&v| v == 0.0).count() as f64 / 1e4;
        assert!((zeroed - 0.25).abs() < 0.02, "zeroed fraction {zeroed}");
        assert!(out.iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-15));
    }
}
