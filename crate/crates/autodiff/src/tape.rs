use crate::gemm::matmul_into;
use crate::tensor::{ParamId, ParamStore, Tensor};
use crate::{AdError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// rhs is `1 x cols`, repeated for every row of lhs.
    Row,
    /// rhs is `1 x 1`.
    Scalar,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(usize, usize),
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Scale(usize, f64),
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Sin(usize),
    Cos(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Concat(Vec<usize>, Axis),
    Slice(usize, Axis, usize),
}

#[derive(Clone, Debug)]
struct Node {
    shape: (usize, usize),
    value: Vec<f64>,
    op: Op,
}

/// Records one forward evaluation for a single reverse sweep.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order of the graph.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: (usize, usize), value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), shape.0 * shape.1);
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Copies the value of `v` out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::from_vec(n.shape.0, n.shape.1, n.value.clone()).expect("node shape")
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Records a constant. No gradient flows into constants.
    pub fn input(&mut self, t: Tensor) -> Var {
        let shape = t.shape();
        self.push(shape, t.into_values(), Op::Input)
    }

    /// Records a trainable parameter; its gradient is routed back into the
    /// store by [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        self.push(t.shape(), t.values().to_vec(), Op::Param(id))
    }

    fn broadcast(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<Broadcast> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            Ok(Broadcast::Same)
        } else if sb == (1, 1) {
            Ok(Broadcast::Scalar)
        } else if sb.0 == 1 && sb.1 == sa.1 {
            Ok(Broadcast::Row)
        } else {
            Err(AdError::Shape { op, lhs: sa, rhs: sb })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(usize, usize, Broadcast) -> Op,
    ) -> Result<Var> {
        let bc = self.broadcast(name, a, b)?;
        let shape = self.shape(a);
        let cols = shape.1;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let value: Vec<f64> = match bc {
            Broadcast::Same => av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect(),
            Broadcast::Row => av
                .iter()
                .enumerate()
                .map(|(i, x)| f(*x, bv[i % cols]))
                .collect(),
            Broadcast::Scalar => av.iter().map(|x| f(*x, bv[0])).collect(),
        };
        Ok(self.push(shape, value, make(a.0, b.0, bc)))
    }

    /// Elementwise sum. `b` may also be a `1 x cols` row or a `1 x 1` scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise (Hadamard) product with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|x| x * factor).collect();
        self.push(shape, value, Op::Scale(a.0, factor))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(AdError::Shape {
                op: "matmul",
                lhs: (m, k),
                rhs: (k2, n),
            });
        }
        let mut value = vec![0.0; m * n];
        matmul_into(
            &self.nodes[a.0].value,
            false,
            &self.nodes[b.0].value,
            false,
            m,
            k,
            n,
            &mut value,
            false,
        );
        Ok(self.push((m, n), value, Op::MatMul(a.0, b.0)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let shape = self.shape(a);
        let value = self.nodes[a.0].value.iter().map(|x| f(*x)).collect();
        self.push(shape, value, op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, Op::Sin(a.0))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push((1, 1), vec![s], Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let m = if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        };
        self.push((1, 1), vec![m], Op::Mean(a.0))
    }

    /// Joins tensors along `axis`; the other dimension must agree.
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(AdError::Invalid {
                op: "concat",
                msg: "no inputs".into(),
            });
        };
        let s0 = self.shape(*first);
        for p in parts {
            let s = self.shape(*p);
            let ok = match axis {
                Axis::Rows => s.1 == s0.1,
                Axis::Cols => s.0 == s0.0,
            };
            if !ok {
                return Err(AdError::Shape {
                    op: "concat",
                    lhs: s0,
                    rhs: s,
                });
            }
        }
        let (shape, value) = match axis {
            Axis::Rows => {
                let rows = parts.iter().map(|p| self.shape(*p).0).sum();
                let mut value = Vec::with_capacity(rows * s0.1);
                for p in parts {
                    value.extend_from_slice(&self.nodes[p.0].value);
                }
                ((rows, s0.1), value)
            }
            Axis::Cols => {
                let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
                let mut value = Vec::with_capacity(s0.0 * cols);
                for r in 0..s0.0 {
                    for p in parts {
                        let c = self.shape(*p).1;
                        value.extend_from_slice(&self.nodes[p.0].value[r * c..(r + 1) * c]);
                    }
                }
                ((s0.0, cols), value)
            }
        };
        let ids = parts.iter().map(|p| p.0).collect();
        Ok(self.push(shape, value, Op::Concat(ids, axis)))
    }

    /// Takes rows or columns `start..end` of `a`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        let limit = match axis {
            Axis::Rows => r,
            Axis::Cols => c,
        };
        if start >= end || end > limit {
            return Err(AdError::Invalid {
                op: "slice",
                msg: format!("range {start}..{end} outside 0..{limit}"),
            });
        }
        let src = &self.nodes[a.0].value;
        let (shape, value) = match axis {
            Axis::Rows => ((end - start, c), src[start * c..end * c].to_vec()),
            Axis::Cols => {
                let w = end - start;
                let mut value = Vec::with_capacity(r * w);
                for row in 0..r {
                    value.extend_from_slice(&src[row * c + start..row * c + end]);
                }
                ((r, w), value)
            }
        };
        Ok(self.push(shape, value, Op::Slice(a.0, axis, start)))
    }

    /// Reverse sweep from a scalar `loss`. Returns one gradient buffer per
    /// node (`None` where nothing flowed).
    pub fn gradients(&mut self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AdError::NonScalarLoss(shape));
        }
        if self.consumed {
            return Err(AdError::Invalid {
                op: "backward",
                msg: "tape already swept; record a fresh forward pass".into(),
            });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(grads)
    }

    /// Reverse sweep that accumulates `d loss / d param` into `store`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.get_mut(*id).accumulate_grad(&g);
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[*a].shape;
                let n = self.nodes[*b].shape.1;
                // dA = G B^T, dB = A^T G
                let ga = slot(grads, *a, m * k);
                matmul_into(g, false, &self.nodes[*b].value, true, m, n, k, ga, true);
                let gb = slot(grads, *b, k * n);
                matmul_into(&self.nodes[*a].value, true, g, false, k, m, n, gb, true);
            }
            Op::Add(a, b, bc) => {
                add_into(slot(grads, *a, g.len()), g, 1.0);
                reduce_broadcast(grads, *b, g, *bc, node.shape.1, |_| 1.0);
            }
            Op::Sub(a, b, bc) => {
                add_into(slot(grads, *a, g.len()), g, 1.0);
                reduce_broadcast(grads, *b, g, *bc, node.shape.1, |_| -1.0);
            }
            Op::Mul(a, b, bc) => {
                let cols = node.shape.1;
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                {
                    let ga = slot(grads, *a, g.len());
                    for (i, gi) in g.iter().enumerate() {
                        let bi = match bc {
                            Broadcast::Same => bv[i],
                            Broadcast::Row => bv[i % cols],
                            Broadcast::Scalar => bv[0],
                        };
                        ga[i] += gi * bi;
                    }
                }
                reduce_broadcast(grads, *b, g, *bc, cols, |i| av[i]);
            }
            Op::Scale(a, f) => add_into(slot(grads, *a, g.len()), g, *f),
            Op::Tanh(a) => {
                let y = &node.value;
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::Relu(a) => {
                let x = &self.nodes[*a].value;
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    if x[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            }
            Op::Sin(a) => {
                let x = &self.nodes[*a].value;
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * x[i].cos();
                }
            }
            Op::Cos(a) => {
                let x = &self.nodes[*a].value;
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] -= g[i] * x[i].sin();
                }
            }
            Op::Square(a) => {
                let x = &self.nodes[*a].value;
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += 2.0 * g[i] * x[i];
                }
            }
            Op::Sum(a) => {
                let n = self.nodes[*a].value.len();
                for v in slot(grads, *a, n).iter_mut() {
                    *v += g[0];
                }
            }
            Op::Mean(a) => {
                let n = self.nodes[*a].value.len();
                let share = g[0] / n.max(1) as f64;
                for v in slot(grads, *a, n).iter_mut() {
                    *v += share;
                }
            }
            Op::Concat(parts, axis) => match axis {
                Axis::Rows => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[*p].value.len();
                        add_into(slot(grads, *p, n), &g[offset..offset + n], 1.0);
                        offset += n;
                    }
                }
                Axis::Cols => {
                    let rows = node.shape.0;
                    let total = node.shape.1;
                    let mut col0 = 0;
                    for p in parts {
                        let c = self.nodes[*p].shape.1;
                        let gp = slot(grads, *p, rows * c);
                        for r in 0..rows {
                            let src = &g[r * total + col0..r * total + col0 + c];
                            add_into(&mut gp[r * c..(r + 1) * c], src, 1.0);
                        }
                        col0 += c;
                    }
                }
            },
            Op::Slice(a, axis, start) => {
                let (r, c) = self.nodes[*a].shape;
                let ga = slot(grads, *a, r * c);
                match axis {
                    Axis::Rows => add_into(&mut ga[start * c..start * c + g.len()], g, 1.0),
                    Axis::Cols => {
                        let w = node.shape.1;
                        for row in 0..r {
                            add_into(
                                &mut ga[row * c + start..row * c + start + w],
                                &g[row * w..(row + 1) * w],
                                1.0,
                            );
                        }
                    }
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut [f64] {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], factor: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += factor * s;
    }
}

/// Routes `g * coeff(i)` back to a possibly broadcast right operand.
fn reduce_broadcast(
    grads: &mut [Option<Vec<f64>>],
    b: usize,
    g: &[f64],
    bc: Broadcast,
    cols: usize,
    coeff: impl Fn(usize) -> f64,
) {
    match bc {
        Broadcast::Same => {
            let gb = slot(grads, b, g.len());
            for i in 0..g.len() {
                gb[i] += g[i] * coeff(i);
            }
        }
        Broadcast::Row => {
            let gb = slot(grads, b, cols);
            for i in 0..g.len() {
                gb[i % cols] += g[i] * coeff(i);
            }
        }
        Broadcast::Scalar => {
            let gb = slot(grads, b, 1);
            for i in 0..g.len() {
                gb[0] += g[i] * coeff(i);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(rows: usize, cols: usize, values: Vec<f64>) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::from_vec(rows, cols, values).unwrap());
        s.zero_grad();
        (s, id)
    }

    #[test]
    fn tanh_at_zero() {
        let (mut s, id) = store_with(1, 1, vec![0.0]);
        let mut t = Tape::new();
        let x = t.param(&s, id);
        let y = t.tanh(x);
        assert_eq!(t.scalar_value(y), 0.0);
        t.backward(y, &mut s).unwrap();
        assert_eq!(s.get(id).grad().unwrap(), &[1.0]);
    }

    #[test]
    fn relu_of_negated_positive_input() {
        let (mut s, id) = store_with(1, 3, vec![0.5, 2.0, 7.0]);
        let mut t = Tape::new();
        let x = t.param(&s, id);
        let nx = t.scale(x, -1.0);
        let r = t.relu(nx);
        assert!(t.value(r).iter().all(|v| *v == 0.0));
        let l = t.sum(r);
        t.backward(l, &mut s).unwrap();
        assert_eq!(s.get(id).grad().unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn sum_gives_ones_and_half_norm_gives_identity() {
        let (mut s, id) = store_with(2, 2, vec![1.0, -2.0, 3.5, 0.25]);
        let mut t = Tape::new();
        let x = t.param(&s, id);
        let l = t.sum(x);
        t.backward(l, &mut s).unwrap();
        assert_eq!(s.get(id).grad().unwrap(), &[1.0; 4]);

        s.zero_grad();
        let mut t = Tape::new();
        let x = t.param(&s, id);
        let sq = t.square(x);
        let l = t.sum(sq);
        let l = t.scale(l, 0.5);
        t.backward(l, &mut s).unwrap();
        assert_eq!(s.get(id).grad().unwrap(), s.get(id).values());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let (mut s, id) = store_with(1, 2, vec![1.0, 2.0]);
        let mut t = Tape::new();
        let x = t.param(&s, id);
        assert!(matches!(
            t.backward(x, &mut s),
            Err(AdError::NonScalarLoss((1, 2)))
        ));
    }

    #[test]
    fn second_sweep_rejected() {
        let (mut s, id) = store_with(1, 1, vec![1.0]);
        let mut t = Tape::new();
        let x = t.param(&s, id);
        let l = t.sum(x);
        t.backward(l, &mut s).unwrap();
        assert!(t.backward(l, &mut s).is_err());
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.input(Tensor::zeros(2, 3));
        let b = t.input(Tensor::zeros(2, 3));
        assert!(t.matmul(a, b).is_err());
        let c = t.input(Tensor::zeros(3, 2));
        assert!(t.add(a, c).is_err());
        assert!(t.slice(a, Axis::Cols, 2, 4).is_err());
        assert!(t.concat(&[a, c], Axis::Rows).is_err());
        let row = t.input(Tensor::zeros(1, 3));
        assert!(t.add(a, row).is_ok());
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let mut t = Tape::new();
        let a = t.input(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = t.input(Tensor::from_vec(2, 1, vec![5.0, 6.0]).unwrap());
        let c = t.concat(&[a, b], Axis::Cols).unwrap();
        assert_eq!(t.value(c), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = t.slice(c, Axis::Cols, 2, 3).unwrap();
        assert_eq!(t.value(back), &[5.0, 6.0]);
        let r = t.concat(&[a, a], Axis::Rows).unwrap();
        assert_eq!(t.shape(r), (4, 2));
        let s = t.slice(r, Axis::Rows, 1, 3).unwrap();
        assert_eq!(t.value(s), &[3.0, 4.0, 1.0, 2.0]);
    }
}
