//! Random graphs, layers and losses for checking reverse-mode gradients
//! against central finite differences.

use density_softmax::density::{FlowArchitecture, FlowModel};
use density_softmax::numeric::{l2_penalty, Activation, DenseLayer, DenseNet, Matrix, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::new(r, c, (0..r * c).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Worst relative error over every coordinate of every parameter.
fn worst_error(f: &dyn Fn(&[Matrix]) -> (f64, Vec<Matrix>), params: &[Matrix]) -> f64 {
    let (_, grads) = f(params);
    assert_eq!(grads.len(), params.len());
    let mut worst = 0.0f64;
    for (p, g) in grads.iter().enumerate() {
        for i in 0..params[p].len() {
            let mut plus = params.to_vec();
            plus[p].data_mut()[i] += H;
            let mut minus = params.to_vec();
            minus[p].data_mut()[i] -= H;
            let numeric = (f(&plus).0 - f(&minus).0) / (2.0 * H);
            worst = worst.max(rel_err(g.data()[i], numeric));
        }
    }
    worst
}

fn random_net(rng: &mut ChaCha8Rng, input: usize) -> DenseNet {
    let depth = rng.random_range(1..=3);
    let mut layers = Vec::new();
    let mut width = input;
    for _ in 0..depth {
        let act = [Activation::Relu, Activation::Tanh, Activation::Linear][rng.random_range(0..3)];
        let residual = rng.random_bool(0.5);
        let out = if residual { width } else { rng.random_range(2..=5) };
        layers.push(DenseLayer::init(width, out, act, rng.random_bool(0.7), residual, rng).unwrap());
        width = out;
    }
    DenseNet::new(layers).unwrap()
}

fn set_params(net: &mut DenseNet, values: &[Matrix]) {
    for (dst, src) in net.params_mut().into_iter().zip(values) {
        *dst = src.clone();
    }
}

/// Encoder, linear head and cross-entropy; also checks the input gradient.
fn mlp_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, d, k) = (rng.random_range(1..=6), rng.random_range(1..=4), rng.random_range(2..=4));
    let net = random_net(rng, d);
    let head = random_matrix(rng, net.output_dim(), k, 1.0);
    let x = random_matrix(rng, n, d, 2.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut params: Vec<Matrix> = net.params().into_iter().cloned().collect();
    params.push(head);
    params.push(x);
    let f = move |p: &[Matrix]| {
        let mut net = net.clone();
        let np = p.len() - 2;
        set_params(&mut net, &p[..np]);
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let w = tape.leaf(p[np].clone());
        let xv = tape.leaf(p[np + 1].clone());
        let h = net.forward_tape(&mut tape, &vars, xv).unwrap();
        let u = tape.matmul(h, w).unwrap();
        let loss = tape.softmax_cross_entropy(u, &labels).unwrap();
        let mut leaves = vars.flat();
        leaves.push(w);
        leaves.push(xv);
        let g = tape.backward(loss).unwrap().collect(&leaves);
        (tape.value(loss).get(0, 0), g)
    };
    worst_error(&f, &params)
}

/// Logits scaled per row by a likelihood column, plus an L2 term.
fn scaled_head_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, d, k) = (rng.random_range(1..=6), rng.random_range(1..=5), rng.random_range(2..=5));
    let z = random_matrix(rng, n, d, 2.0);
    let s = Matrix::column_vector((0..n).map(|_| rng.random_range(0.01..1.0)).collect());
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let coef = rng.random_range(0.0..0.1);
    let params = vec![random_matrix(rng, d, k, 1.0), s];
    let f = move |p: &[Matrix]| {
        let mut tape = Tape::new();
        let w = tape.leaf(p[0].clone());
        let sv = tape.leaf(p[1].clone());
        let zv = tape.leaf(z.clone());
        let u = tape.matmul(zv, w).unwrap();
        let su = tape.mul_col(u, sv).unwrap();
        let mut loss = tape.softmax_cross_entropy(su, &labels).unwrap();
        if let Some(pen) = l2_penalty(&mut tape, &[w], coef).unwrap() {
            loss = tape.add(loss, pen).unwrap();
        }
        let g = tape.backward(loss).unwrap().collect(&[w, sv]);
        (tape.value(loss).get(0, 0), g)
    };
    worst_error(&f, &params)
}

/// Flow negative log-likelihood with every subnet weight non-zero.
fn coupling_case(rng: &mut ChaCha8Rng) -> f64 {
    let d = rng.random_range(2..=4);
    let arch = FlowArchitecture {
        coupling_layers: rng.random_range(1..=4),
        hidden_units: rng.random_range(2..=6),
        hidden_layers: rng.random_range(1..=2),
    };
    let mut flow = FlowModel::init(d, &arch, rng.random()).unwrap();
    for p in flow.params_mut() {
        for v in p.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let n = rng.random_range(1..=5);
    let z = random_matrix(rng, n, d, 1.5);
    let params: Vec<Matrix> = flow.params_mut().into_iter().map(|m| m.clone()).collect();
    let f = move |p: &[Matrix]| {
        let mut flow = flow.clone();
        for (dst, src) in flow.params_mut().into_iter().zip(p) {
            *dst = src.clone();
        }
        flow.nll_gradients(&z).unwrap()
    };
    worst_error(&f, &params)
}

/// Elementwise ops, row sums and means.
fn elementwise_case(rng: &mut ChaCha8Rng) -> f64 {
    let (n, d, m) = (rng.random_range(1..=5), rng.random_range(1..=4), rng.random_range(1..=4));
    let x = random_matrix(rng, n, d, 1.0);
    let params = vec![
        random_matrix(rng, d, m, 1.0),
        random_matrix(rng, d, m, 1.0),
        random_matrix(rng, 1, m, 1.0),
    ];
    let f = move |p: &[Matrix]| {
        let mut t = Tape::new();
        let (a, b, c) = (t.leaf(p[0].clone()), t.leaf(p[1].clone()), t.leaf(p[2].clone()));
        let xv = t.leaf(x.clone());
        let xa = t.matmul(xv, a).unwrap();
        let xb = t.matmul(xv, b).unwrap();
        let xa_c = t.add_row(xa, c).unwrap();
        let th = t.tanh(xa_c).unwrap();
        let sc = t.scale(xb, 0.3).unwrap();
        let ex = t.exp(sc).unwrap();
        let diff = t.sub(th, ex).unwrap();
        let sq = t.square(diff).unwrap();
        let rows = t.sum_rows(sq).unwrap();
        let first = t.mean(rows).unwrap();
        let r = t.relu(xa).unwrap();
        let prod = t.mul(r, xb).unwrap();
        let s = t.sum(prod).unwrap();
        let second = t.scale(s, 0.1).unwrap();
        let loss = t.add(first, second).unwrap();
        let g = t.backward(loss).unwrap().collect(&[a, b, c]);
        (t.value(loss).get(0, 0), g)
    };
    worst_error(&f, &params)
}

/// Column split and merge around a nonlinearity.
fn split_merge_case(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.random_range(1..=5);
    let d = rng.random_range(2..=6);
    let mut idx: Vec<usize> = (0..d).collect();
    for i in (1..d).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let cut = rng.random_range(1..d);
    let (ia, ib) = (idx[..cut].to_vec(), idx[cut..].to_vec());
    let params = vec![random_matrix(rng, n, d, 1.5), random_matrix(rng, ia.len(), ib.len(), 1.0)];
    let f = move |p: &[Matrix]| {
        let mut t = Tape::new();
        let (x, w) = (t.leaf(p[0].clone()), t.leaf(p[1].clone()));
        let a = t.select_cols(x, &ia).unwrap();
        let b = t.select_cols(x, &ib).unwrap();
        let aw = t.matmul(a, w).unwrap();
        let th = t.tanh(aw).unwrap();
        let e = t.exp(th).unwrap();
        let be = t.mul(b, e).unwrap();
        let merged = t.merge_cols(a, &ia, be, &ib).unwrap();
        let sq = t.square(merged).unwrap();
        let loss = t.mean(sq).unwrap();
        let g = t.backward(loss).unwrap().collect(&[x, w]);
        (t.value(loss).get(0, 0), g)
    };
    worst_error(&f, &params)
}

/// Runs `configs` random cases, cycling over the case kinds, and returns
/// one message per configuration whose worst relative error reaches the
/// tolerance.
pub fn oracle_failures(configs: u64) -> Vec<String> {
    let cases: [(&str, fn(&mut ChaCha8Rng) -> f64); 5] = [
        ("mlp", mlp_case),
        ("scaled_head", scaled_head_case),
        ("coupling", coupling_case),
        ("elementwise", elementwise_case),
        ("split_merge", split_merge_case),
    ];
    let mut failures = Vec::new();
    for seed in 0..configs {
        let (name, case) = cases[seed as usize % cases.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let err = case(&mut rng);
        if !(err < TOL) {
            failures.push(format!("seed {seed} ({name}): relative error {err:.3e}"));
        }
    }
    failures
}
