use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarmwind_autodiff::check::{flat_grads, numeric_gradient, relative_error};
use swarmwind_autodiff::{Axis, ParamId, ParamStore, Tape, Tensor, Var};

const FD_STEP: f64 = 1e-6;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, avoid_zero: bool) -> Tensor {
    let values = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.random_range(-1.5..1.5);
            if avoid_zero && v.abs() < 0.1 {
                v.signum() * 0.1 + v
            } else {
                v
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, values).unwrap()
}

/// Contracts an arbitrary-shaped output with fixed weights so every output
/// element contributes a distinct amount to the scalar loss.
fn contract(tape: &mut Tape, out: Var, weights: &Tensor) -> Var {
    let w = tape.input(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

fn check(
    params: &mut ParamStore,
    build: impl Fn(&mut Tape, &ParamStore) -> Var,
) -> f64 {
    params.zero_grad();
    let mut tape = Tape::new();
    let loss = build(&mut tape, params);
    tape.backward(loss, params).unwrap();
    let analytic = flat_grads(params);
    let numeric = numeric_gradient(params, FD_STEP, |p| {
        let mut t = Tape::new();
        let l = build(&mut t, p);
        t.scalar_value(l)
    });
    relative_error(&analytic, &numeric)
}

#[derive(Clone, Copy, Debug)]
enum Prim {
    MatMul,
    Add,
    AddRow,
    Sub,
    Mul,
    MulScalar,
    Tanh,
    Relu,
    Sigmoid,
    ConcatCols,
    ConcatRows,
    SliceCols,
    SliceRows,
    Sum,
    Mean,
    Square,
    Sin,
    Cos,
    Scale,
}

const ALL: [Prim; 19] = [
    Prim::MatMul,
    Prim::Add,
    Prim::AddRow,
    Prim::Sub,
    Prim::Mul,
    Prim::MulScalar,
    Prim::Tanh,
    Prim::Relu,
    Prim::Sigmoid,
    Prim::ConcatCols,
    Prim::ConcatRows,
    Prim::SliceCols,
    Prim::SliceRows,
    Prim::Sum,
    Prim::Mean,
    Prim::Square,
    Prim::Sin,
    Prim::Cos,
    Prim::Scale,
];

fn primitive_error(prim: Prim, rows: usize, cols: usize, inner: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    let avoid_zero = matches!(prim, Prim::Relu);
    let a = p.add("a", random_tensor(&mut rng, rows, cols, avoid_zero));
    let b_shape = match prim {
        Prim::MatMul => (cols, inner),
        Prim::AddRow => (1, cols),
        Prim::MulScalar => (1, 1),
        Prim::ConcatCols => (rows, inner),
        Prim::ConcatRows => (inner, cols),
        _ => (rows, cols),
    };
    let b = p.add("b", random_tensor(&mut rng, b_shape.0, b_shape.1, false));
    let out_shape = match prim {
        Prim::MatMul => (rows, inner),
        Prim::ConcatCols => (rows, cols + inner),
        Prim::ConcatRows => (rows + inner, cols),
        Prim::SliceCols => (rows, cols - cols / 2),
        Prim::SliceRows => (rows - rows / 2, cols),
        Prim::Sum | Prim::Mean => (1, 1),
        _ => (rows, cols),
    };
    let w = random_tensor(&mut rng, out_shape.0, out_shape.1, false);
    let build = move |t: &mut Tape, s: &ParamStore| {
        let (va, vb) = (t.param(s, a), t.param(s, b));
        let out = apply(t, prim, va, vb);
        contract(t, out, &w)
    };
    check(&mut p, build)
}

fn apply(t: &mut Tape, prim: Prim, a: Var, b: Var) -> Var {
    let (rows, cols) = t.shape(a);
    match prim {
        Prim::MatMul => t.matmul(a, b).unwrap(),
        Prim::Add | Prim::AddRow => t.add(a, b).unwrap(),
        Prim::Sub => t.sub(a, b).unwrap(),
        Prim::Mul | Prim::MulScalar => t.mul(a, b).unwrap(),
        Prim::Tanh => t.tanh(a),
        Prim::Relu => t.relu(a),
        Prim::Sigmoid => t.sigmoid(a),
        Prim::ConcatCols => t.concat(&[a, b], Axis::Cols).unwrap(),
        Prim::ConcatRows => t.concat(&[a, b], Axis::Rows).unwrap(),
        Prim::SliceCols => t.slice(a, Axis::Cols, cols / 2, cols).unwrap(),
        Prim::SliceRows => t.slice(a, Axis::Rows, rows / 2, rows).unwrap(),
        Prim::Sum => t.sum(a),
        Prim::Mean => t.mean(a),
        Prim::Square => t.square(a),
        Prim::Sin => t.sin(a),
        Prim::Cos => t.cos(a),
        Prim::Scale => t.scale(a, -2.5),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_primitive_matches_finite_differences(
        which in 0usize..ALL.len(),
        rows in 1usize..5,
        cols in 1usize..5,
        inner in 1usize..5,
        seed in any::<u64>(),
    ) {
        let err = primitive_error(ALL[which], rows, cols, inner, seed);
        prop_assert!(err < 1e-5, "{:?} rel err {}", ALL[which], err);
    }
}

#[test]
fn matmul_on_random_four_by_four() {
    for seed in 0..5 {
        let err = primitive_error(Prim::MatMul, 4, 4, 4, seed);
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

fn dense(t: &mut Tape, s: &ParamStore, x: Var, w: ParamId, b: ParamId) -> Var {
    let (vw, vb) = (t.param(s, w), t.param(s, b));
    let h = t.matmul(x, vw).unwrap();
    t.add(h, vb).unwrap()
}

#[test]
fn two_layer_network_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut p = ParamStore::new();
    let w1 = p.add("w1", random_tensor(&mut rng, 3, 6, false));
    let b1 = p.add("b1", random_tensor(&mut rng, 1, 6, false));
    let w2 = p.add("w2", random_tensor(&mut rng, 6, 2, false));
    let b2 = p.add("b2", random_tensor(&mut rng, 1, 2, false));
    let x = random_tensor(&mut rng, 5, 3, false);
    let y = random_tensor(&mut rng, 5, 2, false);
    let build = |t: &mut Tape, s: &ParamStore| {
        let vx = t.input(x.clone());
        let h = dense(t, s, vx, w1, b1);
        let h = t.tanh(h);
        let out = dense(t, s, h, w2, b2);
        let vy = t.input(y.clone());
        let e = t.sub(out, vy).unwrap();
        let e2 = t.square(e);
        t.mean(e2)
    };
    let err = check(&mut p, build);
    assert!(err < 1e-5, "{err}");
}

#[test]
fn unrolled_recurrent_cell_matches_finite_differences() {
    let hidden = 4;
    let steps = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p = ParamStore::new();
    let wx = p.add("wx", random_tensor(&mut rng, 2, 4 * hidden, false));
    let wh = p.add("wh", random_tensor(&mut rng, hidden, 4 * hidden, false));
    let b = p.add("b", random_tensor(&mut rng, 1, 4 * hidden, false));
    let xs: Vec<Tensor> = (0..steps).map(|_| random_tensor(&mut rng, 1, 2, false)).collect();
    let build = |t: &mut Tape, s: &ParamStore| {
        let (vx, vh, vb) = (t.param(s, wx), t.param(s, wh), t.param(s, b));
        let mut h = t.input(Tensor::zeros(1, hidden));
        let mut c = t.input(Tensor::zeros(1, hidden));
        for x in &xs {
            let xi = t.input(x.clone());
            let gx = t.matmul(xi, vx).unwrap();
            let gh = t.matmul(h, vh).unwrap();
            let g = t.add(gx, gh).unwrap();
            let g = t.add(g, vb).unwrap();
            let i = t.slice(g, Axis::Cols, 0, hidden).unwrap();
            let f = t.slice(g, Axis::Cols, hidden, 2 * hidden).unwrap();
            let gg = t.slice(g, Axis::Cols, 2 * hidden, 3 * hidden).unwrap();
            let o = t.slice(g, Axis::Cols, 3 * hidden, 4 * hidden).unwrap();
            let (i, f, gg, o) = (t.sigmoid(i), t.sigmoid(f), t.tanh(gg), t.sigmoid(o));
            let fc = t.mul(f, c).unwrap();
            let ig = t.mul(i, gg).unwrap();
            c = t.add(fc, ig).unwrap();
            let tc = t.tanh(c);
            h = t.mul(o, tc).unwrap();
        }
        let sq = t.square(h);
        t.sum(sq)
    };
    let err = check(&mut p, build);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn identical_inputs_give_bitwise_identical_gradients() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut p = ParamStore::new();
        let w = p.add("w", random_tensor(&mut rng, 8, 8, false));
        let x = random_tensor(&mut rng, 16, 8, false);
        p.zero_grad();
        let mut t = Tape::new();
        let vx = t.input(x);
        let vw = t.param(&p, w);
        let h = t.matmul(vx, vw).unwrap();
        let h = t.tanh(h);
        let l = t.mean(h);
        t.backward(l, &mut p).unwrap();
        flat_grads(&p)
    };
    assert_eq!(run(), run());
}
