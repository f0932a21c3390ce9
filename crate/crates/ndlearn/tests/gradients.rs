use ndlearn::layers::rows_to_matrix;
use ndlearn::{
    check_graph, Activation, BiLstm, ConvBank, ConvBankSpec, Dense, GradCheckConfig, Graph, NodeId,
    ParamStore, Result, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn random_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

fn projection(rng: &mut ChaCha8Rng, len: usize) -> Tensor {
    Tensor::vector((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Scalar loss `Σ r_i · v_i` with a fixed random `r`.
fn project(g: &mut Graph, v: NodeId, r: &Tensor) -> Result<NodeId> {
    let r = g.constant(r.clone());
    let prod = g.mul(v, r)?;
    g.sum(prod)
}

#[test]
fn bilstm_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "enc", 4, 3, &mut rng).unwrap();
    let x = store
        .add("x", rows_to_matrix(&random_rows(&mut rng, 5, 4), 4, "test").unwrap())
        .unwrap();
    let r_summary = projection(&mut rng, 6);
    let r_state = projection(&mut rng, 3);
    let build = |g: &mut Graph, s: &ParamStore| {
        let xn = g.param(s, x);
        let out = lstm.forward(g, s, xn)?;
        let a = project(g, out.summary, &r_summary)?;
        // intermediate states also feed the loss
        let b = project(g, out.forward_states[2], &r_state)?;
        let c = project(g, out.backward_states[1], &r_state)?;
        g.add_n(&[a, b, c])
    };
    let report = check_graph(&store, build, &GradCheckConfig::default()).unwrap();
    assert!(report.passes(TOL), "{report:?}");
}

#[test]
fn conv_bank_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    let spec = ConvBankSpec { widths: vec![2, 3, 4], n_filters: 4 };
    let bank = ConvBank::new(&mut store, "ctx", 5, spec, &mut rng).unwrap();
    for (name, rows) in [("long", 6usize), ("short", 2usize)] {
        let x = store
            .add(name, rows_to_matrix(&random_rows(&mut rng, rows, 5), 5, "test").unwrap())
            .unwrap();
        let r = projection(&mut rng, 12);
        let build = |g: &mut Graph, s: &ParamStore| {
            let xn = g.param(s, x);
            let ctx = bank.forward(g, s, xn)?;
            project(g, ctx, &r)
        };
        let report = check_graph(&store, build, &GradCheckConfig::default()).unwrap();
        assert!(report.passes(TOL), "{name}: {report:?}");
    }
}

#[test]
fn dense_gradients_for_each_activation() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let dense = Dense::new(&mut store, "d", 6, 4, &mut rng).unwrap();
    let x = store.add("x", projection(&mut rng, 6)).unwrap();
    let r = projection(&mut rng, 4);
    for act in [Activation::Sigmoid, Activation::Identity, Activation::Softmax] {
        let build = |g: &mut Graph, s: &ParamStore| {
            let xn = g.param(s, x);
            let y = dense.forward(g, s, xn, act)?;
            project(g, y, &r)
        };
        let report = check_graph(&store, build, &GradCheckConfig::default()).unwrap();
        assert!(report.passes(TOL), "{act:?}: {report:?}");
    }
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut store = ParamStore::new();
    let logits = store.add("logits", projection(&mut rng, 8)).unwrap();
    let z = store.add("z", Tensor::scalar(0.3)).unwrap();
    let scores = store.add("scores", Tensor::vector(vec![0.1, 0.7, -0.4, 1.2])).unwrap();
    let build = |g: &mut Graph, s: &ParamStore| {
        let l = g.param(s, logits);
        let ce = g.cross_entropy(l, 3)?;
        let zn = g.param(s, z);
        let p = g.sigmoid(zn)?;
        let b0 = g.bce(p, 0.0)?;
        let b1 = g.bce(p, 1.0)?;
        let sn = g.param(s, scores);
        let sig = g.sigmoid(sn)?;
        let top = g.select_mean(sig, &[3, 1])?;
        let bt = g.bce(top, 1.0)?;
        g.add_n(&[ce, b0, b1, bt])
    };
    let report = check_graph(&store, build, &GradCheckConfig::default()).unwrap();
    assert!(report.passes(TOL), "{report:?}");
}

#[test]
fn bce_derivative_at_half() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::scalar(0.5)).unwrap();
    let mut g = Graph::new();
    let pn = g.param(&store, p);
    let loss = g.bce(pn, 1.0).unwrap();
    assert!((g.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
    let grads = g.backward(loss, &store).unwrap();
    let analytic = grads.get(p).item();
    assert!((analytic + 2.0).abs() < 1e-12);
    let eps = 1e-5;
    let numeric = (ndlearn::bce_value(0.5 + eps, 1.0) - ndlearn::bce_value(0.5 - eps, 1.0)) / (2.0 * eps);
    assert!(ndlearn::relative_error(analytic, numeric) < 1e-8);
}
