use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate adjoint corruption, used to check that the gradient oracle
/// actually catches broken derivatives.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Sigmoid backward drops the `(1 - s)` factor.
    SigmoidDerivative,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Sum(Var),
    MeanRows(Var),
    MaxRows { input: Var, argmax: Vec<usize> },
    Scale(Var, f64),
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Single-use tape of executed operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
    fault: Option<Fault>,
}

/// Gradients of the trainable leaves after one backward pass.
#[derive(Debug)]
pub struct Gradients {
    leaves: Vec<Option<Vec<f64>>>,
    order: Vec<Var>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf registered via [`Graph::param`].
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(v.0).and_then(|g| g.as_deref())
    }

    /// Nodes whose adjoints were propagated, in the order they were visited.
    pub fn visit_order(&self) -> &[Var] {
        &self.order
    }
}

fn mat_dims(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [n] => Some((1, *n)),
        [m, n] => Some((*m, *n)),
        _ => None,
    }
}

/// Kept strictly inside (0, 1): rounding would otherwise reach 1.0 above
/// x ~ 36.7 and 0.0 below x ~ -745.
fn stable_sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::from_bits(1), 1.0 - f64::EPSILON / 2.0)
}

/// Row-wise max-shifted softmax over the last axis.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: Fault) -> Self {
        Self {
            fault: Some(fault),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Result<Var, TensorError> {
        if !t.data().iter().all(|x| x.is_finite()) {
            return Err(TensorError::NonFinite("leaf"));
        }
        Ok(self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, requires_grad))
    }

    /// Records a constant input; no gradient flows into it.
    pub fn constant(&mut self, t: &Tensor) -> Result<Var, TensorError> {
        self.leaf(t, false)
    }

    /// Records a trainable leaf; its gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, t: &Tensor) -> Result<Var, TensorError> {
        self.leaf(t, true)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("recorded shapes are valid")
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Matrix-matrix, matrix-vector or vector-matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || TensorError::Shape {
            op: "matmul",
            left: sa.clone(),
            right: sb.clone(),
        };
        let (out_shape, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2]) if k == k2 => (vec![*m], *m, *k, 1),
            ([m, k], [k2, n]) if k == k2 => (vec![*m, *n], *m, *k, *n),
            ([k], [k2, n]) if k == k2 => (vec![*n], 1, *k, *n),
            _ => return Err(mismatch()),
        };
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for kk in 0..k {
                let aik = av[i * k + kk];
                let brow = &bv[kk * n..(kk + 1) * n];
                for (o, bj) in orow.iter_mut().zip(brow) {
                    *o += aik * bj;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out_shape, out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = match self.shape(a) {
            [m, n] => (*m, *n),
            s => {
                return Err(TensorError::Shape {
                    op: "transpose",
                    left: s.to_vec(),
                    right: vec![],
                })
            }
        };
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), rg))
    }

    /// Checks that `b` matches `a` exactly or is a row that broadcasts over `a`.
    fn broadcast_ok(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let ok = sa == sb || (sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0]);
        if ok {
            Ok(())
        } else {
            Err(TensorError::Shape {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        self.broadcast_ok(op_name, a, b)?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let bl = bv.len().max(1);
        let out: Vec<f64> = av
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv[i % bl]))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, op, rg))
    }

    /// Elementwise sum; `b` may be a row vector broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    /// Elementwise product; `b` may be a row vector broadcast over the rows of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, stable_sigmoid, Op::Sigmoid(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    /// Softmax along the last axis of a vector or matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (_, n) = mat_dims(self.shape(a)).ok_or_else(|| TensorError::Shape {
            op: "softmax_rows",
            left: self.shape(a).to_vec(),
            right: vec![],
        })?;
        if n == 0 {
            return Err(TensorError::Empty("softmax_rows"));
        }
        let mut out = self.nodes[a.0].value.clone();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, out, Op::SoftmaxRows(a), rg))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        let rg = self.rg(a);
        self.push(Vec::new(), vec![s], Op::Sum(a), rg)
    }

    fn rows_of(&self, op: &'static str, a: Var) -> Result<(usize, usize), TensorError> {
        match self.shape(a) {
            [0, _] => Err(TensorError::Empty(op)),
            [m, n] => Ok((*m, *n)),
            s => Err(TensorError::Shape {
                op,
                left: s.to_vec(),
                right: vec![],
            }),
        }
    }

    /// Column-wise mean over the rows of a matrix.
    ///
    /// Accumulated as `sum_i (1/m) * x_i` in row order, which makes it
    /// bit-identical to attention pooling with uniform weights.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.rows_of("mean_rows", a)?;
        let inv = 1.0 / m as f64;
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; n];
        for row in av.chunks(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += inv * x;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![n], out, Op::MeanRows(a), rg))
    }

    /// Column-wise maximum over rows; ties go to the lowest row index.
    pub fn max_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.rows_of("max_rows", a)?;
        let av = &self.nodes[a.0].value;
        let mut out = av[..n].to_vec();
        let mut argmax = vec![0usize; n];
        for i in 1..m {
            for j in 0..n {
                let x = av[i * n + j];
                if x > out[j] {
                    out[j] = x;
                    argmax[j] = i;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![n], out, Op::MaxRows { input: a, argmax }, rg))
    }

    /// `-log softmax(logits)[target]` via max-shifted log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, TensorError> {
        let n = match self.shape(logits) {
            [n] => *n,
            s => {
                return Err(TensorError::Shape {
                    op: "cross_entropy",
                    left: s.to_vec(),
                    right: vec![],
                })
            }
        };
        if target >= n {
            return Err(TensorError::Index { index: target, len: n });
        }
        let lv = &self.nodes[logits.0].value;
        let (max, tail) = shifted_tail(lv);
        let lse = max + tail;
        let loss = (max - lv[target]) + tail;
        let probs = lv.iter().map(|x| (x - lse).exp()).collect();
        let rg = self.rg(logits);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            rg,
        ))
    }

    /// Replays adjoints from a scalar `loss` in reverse execution order.
    ///
    /// The tape is consumed: a second call fails with
    /// [`TensorError::GraphConsumed`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        if !self.shape(loss).is_empty() {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;

        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut order = Vec::new();
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = adj[idx].take() else { continue };
            order.push(Var(idx));
            let y = &node.value;
            match &node.op {
                Op::Leaf => leaves[idx] = Some(dy),
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let sa = &self.nodes[a.0].shape;
                    let (m, k) = if sa.len() == 2 { (sa[0], sa[1]) } else { (1, sa[0]) };
                    let n = dy.len() / m;
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    if self.nodes[a.0].requires_grad {
                        // dA = dC . B^T
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            let drow = &dy[i * n..(i + 1) * n];
                            for kk in 0..k {
                                let brow = &bv[kk * n..(kk + 1) * n];
                                da[i * k + kk] = drow.iter().zip(brow).map(|(d, b)| d * b).sum();
                            }
                        }
                        accumulate(&mut adj[a.0], &da);
                    }
                    if self.nodes[b.0].requires_grad {
                        // dB = A^T . dC
                        let mut db = vec![0.0; k * n];
                        for i in 0..m {
                            let drow = &dy[i * n..(i + 1) * n];
                            for kk in 0..k {
                                let aik = av[i * k + kk];
                                let dbrow = &mut db[kk * n..(kk + 1) * n];
                                for (o, d) in dbrow.iter_mut().zip(drow) {
                                    *o += aik * d;
                                }
                            }
                        }
                        accumulate(&mut adj[b.0], &db);
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = dy[j * m + i];
                        }
                    }
                    accumulate(&mut adj[a.0], &da);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut adj[a.0], &dy);
                    }
                    if self.nodes[b.0].requires_grad {
                        let db = reduce_broadcast(&dy, self.nodes[b.0].value.len());
                        accumulate(&mut adj[b.0], &db);
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let bl = bv.len().max(1);
                    if self.nodes[a.0].requires_grad {
                        let da: Vec<f64> =
                            dy.iter().enumerate().map(|(i, d)| d * bv[i % bl]).collect();
                        accumulate(&mut adj[a.0], &da);
                    }
                    if self.nodes[b.0].requires_grad {
                        let prod: Vec<f64> = dy.iter().zip(av).map(|(d, x)| d * x).collect();
                        let db = reduce_broadcast(&prod, bl);
                        accumulate(&mut adj[b.0], &db);
                    }
                }
                Op::Relu(a) => {
                    // derivative at exactly 0 is taken as 0
                    let da: Vec<f64> = dy
                        .iter()
                        .zip(&self.nodes[a.0].value)
                        .map(|(d, &x)| if x > 0.0 { *d } else { 0.0 })
                        .collect();
                    accumulate(&mut adj[a.0], &da);
                }
                Op::Sigmoid(a) => {
                    let faulty = self.fault == Some(Fault::SigmoidDerivative);
                    let da: Vec<f64> = dy
                        .iter()
                        .zip(y)
                        .map(|(d, s)| if faulty { d * s } else { d * s * (1.0 - s) })
                        .collect();
                    accumulate(&mut adj[a.0], &da);
                }
                Op::Scale(a, s) => {
                    let da: Vec<f64> = dy.iter().map(|d| d * s).collect();
                    accumulate(&mut adj[a.0], &da);
                }
                Op::SoftmaxRows(a) => {
                    let n = *node.shape.last().expect("softmax input has rank >= 1");
                    let mut da = vec![0.0; y.len()];
                    for ((drow, yrow), out) in dy.chunks(n).zip(y.chunks(n)).zip(da.chunks_mut(n)) {
                        let dot: f64 = drow.iter().zip(yrow).map(|(d, s)| d * s).sum();
                        for ((o, d), s) in out.iter_mut().zip(drow).zip(yrow) {
                            *o = s * (d - dot);
                        }
                    }
                    accumulate(&mut adj[a.0], &da);
                }
                Op::Sum(a) => {
                    let da = vec![dy[0]; self.nodes[a.0].value.len()];
                    accumulate(&mut adj[a.0], &da);
                }
                Op::MeanRows(a) => {
                    let m = self.nodes[a.0].shape[0];
                    let inv = 1.0 / m as f64;
                    let da: Vec<f64> = (0..m).flat_map(|_| dy.iter().map(|d| d * inv)).collect();
                    accumulate(&mut adj[a.0], &da);
                }
                Op::MaxRows { input, argmax } => {
                    let len = self.nodes[input.0].value.len();
                    let n = dy.len();
                    let mut da = vec![0.0; len];
                    for (j, (&i, d)) in argmax.iter().zip(&dy).enumerate() {
                        da[i * n + j] = *d;
                    }
                    accumulate(&mut adj[input.0], &da);
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let mut da: Vec<f64> = probs.iter().map(|p| p * dy[0]).collect();
                    da[*target] -= dy[0];
                    accumulate(&mut adj[logits.0], &da);
                }
            }
        }
        Ok(Gradients { leaves, order })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        None => *slot = Some(delta.to_vec()),
    }
}

/// Sums a broadcast gradient back down to a row of length `n`.
fn reduce_broadcast(dy: &[f64], n: usize) -> Vec<f64> {
    if dy.len() == n {
        return dy.to_vec();
    }
    let mut out = vec![0.0; n];
    for row in dy.chunks(n) {
        out.iter_mut().zip(row).for_each(|(o, d)| *o += d);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_small_example() {
        let mut g = Graph::new();
        let a = g
            .constant(&Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap())
            .unwrap();
        let b = g.constant(&Tensor::vector(vec![5.0, 6.0])).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_identity_is_noop() {
        let v = vec![0.25, -3.5, 7.0];
        let mut g = Graph::new();
        let i = g.constant(&Tensor::identity(3)).unwrap();
        let x = g.constant(&Tensor::vector(v.clone())).unwrap();
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y), v.as_slice());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(&Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(&Tensor::zeros(&[2])).unwrap();
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::vector(vec![0.0, 0.0])).unwrap();
        let y = g.softmax_rows(x).unwrap();
        assert_eq!(g.value(y), &[0.5, 0.5]);

        let x = g.constant(&Tensor::vector(vec![1.0, 0.0])).unwrap();
        let y = g.softmax_rows(x).unwrap();
        assert!(close(g.value(y)[0], 0.7310585786, 1e-10));
        assert!(close(g.value(y)[1], 0.2689414214, 1e-10));

        let x = g.constant(&Tensor::vector(vec![3.0, 1003.0])).unwrap();
        let y = g.softmax_rows(x).unwrap();
        assert!(g.value(y)[0] < 1e-300 && close(g.value(y)[1], 1.0, 1e-15));
    }

    #[test]
    fn relu_sum_gradient() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::vector(vec![-1.0, 2.0])).unwrap();
        let r = g.relu(x);
        let l = g.sum(r);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_kink_has_zero_derivative() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::vector(vec![0.0])).unwrap();
        let r = g.relu(x);
        let l = g.sum(r);
        assert_eq!(g.backward(l).unwrap().get(x).unwrap(), &[0.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::scalar(0.0)).unwrap();
        let s = g.sigmoid(x);
        assert_eq!(g.value(s), &[0.5]);
        assert_eq!(g.backward(s).unwrap().get(x).unwrap(), &[0.25]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_second_pass() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::vector(vec![1.0, 2.0])).unwrap();
        let r = g.relu(x);
        assert!(matches!(g.backward(r), Err(TensorError::NonScalarLoss(_))));
        let l = g.sum(r);
        g.backward(l).unwrap();
        assert_eq!(g.backward(l).unwrap_err(), TensorError::GraphConsumed);
    }

    #[test]
    fn backward_visits_in_reverse_execution_order() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::vector(vec![0.3, -0.2])).unwrap();
        let a = g.sigmoid(x);
        let b = g.relu(a);
        let c = g.scale(b, 2.0);
        let l = g.sum(c);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.visit_order(), &[l, c, b, a, x]);
    }

    #[test]
    fn non_finite_leaf_rejected() {
        let mut g = Graph::new();
        let err = g.constant(&Tensor::vector(vec![1.0, f64::NAN])).unwrap_err();
        assert_eq!(err, TensorError::NonFinite("leaf"));
    }

    #[test]
    fn cross_entropy_values() {
        let mut g = Graph::new();
        let z = g.constant(&Tensor::vector(vec![0.0, 0.0])).unwrap();
        let l = g.cross_entropy(z, 0).unwrap();
        assert!(close(g.value(l)[0], std::f64::consts::LN_2, 1e-15));
        let z = g.constant(&Tensor::vector(vec![10.0, -10.0])).unwrap();
        let l = g.cross_entropy(z, 0).unwrap();
        let expected = (-20.0f64).exp().ln_1p();
        assert!(close(g.value(l)[0], expected, 1e-20));
        assert!(matches!(
            g.cross_entropy(z, 2),
            Err(TensorError::Index { index: 2, len: 2 })
        ));
    }

    #[test]
    fn max_rows_routes_gradient_to_first_max() {
        let mut g = Graph::new();
        let x = g
            .param(&Tensor::from_rows(&[vec![1.0, 3.0], vec![2.0, 3.0]]).unwrap())
            .unwrap();
        let m = g.max_rows(x).unwrap();
        assert_eq!(g.value(m), &[2.0, 3.0]);
        let l = g.sum(m);
        assert_eq!(g.backward(l).unwrap().get(x).unwrap(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_rows_rejected() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::zeros(&[0, 4])).unwrap();
        assert_eq!(g.mean_rows(x).unwrap_err(), TensorError::Empty("mean_rows"));
        assert_eq!(g.max_rows(x).unwrap_err(), TensorError::Empty("max_rows"));
    }
}

/// `(max, ln(sum exp(x - max)))`, the second term via `ln_1p` over the
/// non-maximal entries so tiny tails keep full precision.
fn shifted_tail(xs: &[f64]) -> (f64, f64) {
    let mut arg = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[arg] {
            arg = i;
        }
    }
    let max = xs[arg];
    let rest: f64 = xs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, x)| (x - max).exp())
        .sum();
    (max, rest.ln_1p())
}

/// Max-shifted `ln(sum exp(x))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let (max, tail) = shifted_tail(xs);
    max + tail
}

/// `-ln softmax(logits)[target]` on plain values, same arithmetic as the graph op.
pub fn cross_entropy_value(logits: &[f64], target: usize) -> f64 {
    let (max, tail) = shifted_tail(logits);
    (max - logits[target]) + tail
}
