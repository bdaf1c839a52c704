//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to the [`Tape`]; a node only refers to
//! nodes recorded before it, so the tape is topologically ordered by
//! construction and [`Tape::backward`] is a single reverse sweep. Gradients of
//! leaves created with [`Tape::param`] accumulate across `backward` calls until
//! [`Tape::zero_grad`].
//!
//! Broadcasting is deliberately absent. The only shape-mixing operations are
//! [`Tape::add_row`] (bias addition), [`Tape::scale`] and
//! [`Tape::add_scalar`].

use crate::tensor::{gemm, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    SoftmaxMasked(Var, Vec<bool>),
    Sum(Var),
    Mean(Var),
    WeightedSum(Var, Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    LogSumExp(Var),
    NeighborMean(Var, Vec<Vec<usize>>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for one forward/backward pass.
///
/// A tape is single-threaded; build one per thread when evaluating bags in
/// parallel.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(delta).for_each(|(a, d)| *a += d),
        None => *slot = Some(delta.to_vec()),
    }
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

    /// Constant leaf: never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        check_finite("constant", value.data())?;
        Ok(self.push_raw(value, Op::Leaf, false))
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        check_finite("param", value.data())?;
        Ok(self.push_raw(value, Op::Leaf, true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, `None` if no gradient reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Accumulated gradient as a tensor shaped like the leaf; zeros when unreached.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let value = self.value(v);
        let data = self
            .grad(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; value.len()]);
        Tensor::new(value.shape().to_vec(), data).expect("gradient shaped like its leaf")
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(name, value.data())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(name, out, op, &[x])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(name, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(name, out, op, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 2 || bv.ndim() != 2 || av.cols() != bv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let out = Tensor::matrix(m, n, gemm(av.data(), bv.data(), m, k, n))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the vector `row` (length n) to every row of the m×n matrix `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if xv.ndim() != 2 || rv.ndim() != 1 || rv.len() != xv.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: xv.shape().to_vec(),
                rhs: rv.shape().to_vec(),
            });
        }
        let cols = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + rv.data()[i % cols])
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("add_row", out, Op::AddRow(x, row), &[x, row])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("scale", x, |v| c * v, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    /// Natural log; every input must be strictly positive (and above 1e-300).
    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&v| v <= 1e-300) {
            return Err(TensorError::Domain { op: "log", value: bad });
        }
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    /// Square root of nonnegative inputs. The derivative at exactly 0 is taken as 0.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.value(x).data().iter().find(|&&v| v < 0.0) {
            return Err(TensorError::Domain { op: "sqrt", value: bad });
        }
        self.unary("sqrt", x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary("square", x, |v| v * v, Op::Square(x))
    }

    /// Softmax over the entries of a vector where `mask[i]` is true; masked
    /// entries are excluded before exponentiation and come out exactly 0.
    pub fn softmax_masked(&mut self, scores: Var, mask: &[bool]) -> Result<Var> {
        let sv = self.value(scores);
        if sv.ndim() != 1 || sv.len() != mask.len() {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_masked",
                lhs: sv.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let out = softmax_masked_values(sv.data(), mask)?;
        let out = Tensor::vector(out)?;
        self.push("softmax_masked", out, Op::SoftmaxMasked(scores, mask.to_vec()), &[scores])
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.len() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// `Σ_j w_j x_j` over the leading axis: a vector `x` gives a scalar, an
    /// n×e matrix gives an e-vector.
    pub fn weighted_sum(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.ndim() != 1 || xv.ndim() == 0 || xv.ndim() > 2 || xv.rows() != wv.len() {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_sum",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let cols = xv.cols();
        let mut acc = vec![0.0; cols];
        for (j, &wj) in wv.data().iter().enumerate() {
            for (a, &v) in acc.iter_mut().zip(&xv.data()[j * cols..(j + 1) * cols]) {
                *a += wj * v;
            }
        }
        let out = if xv.ndim() == 1 {
            Tensor::scalar(acc[0])
        } else {
            Tensor::vector(acc)?
        };
        self.push("weighted_sum", out, Op::WeightedSum(x, w), &[x, w])
    }

    /// Concatenates scalars and vectors into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Empty("concat"));
        }
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.ndim() > 1 {
                return Err(TensorError::Rank {
                    op: "concat",
                    expected: 1,
                    shape: pv.shape().to_vec(),
                });
            }
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::vector(data)?;
        self.push("concat", out, Op::Concat(parts.to_vec()), parts)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// Picks entries of a vector by index; indices may repeat.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 1 {
            return Err(TensorError::Rank {
                op: "gather",
                expected: 1,
                shape: xv.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(indices.len());
        for &i in indices {
            data.push(*xv.data().get(i).ok_or(TensorError::Index {
                index: i,
                len: xv.len(),
            })?);
        }
        let out = Tensor::vector(data)?;
        self.push("gather", out, Op::Gather(x, indices.to_vec()), &[x])
    }

    /// Stabilised `log Σ exp(x_i)` over a vector.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::scalar(logsumexp_values(xv.data()));
        self.push("logsumexp", out, Op::LogSumExp(x), &[x])
    }

    /// Row `i` of the output is the mean of row `i` and its neighbour rows,
    /// `x_i + Σ_{j∈N(i)} (x_j - x_i) / (|N(i)| + 1)`. Written as a correction to
    /// `x_i` so that identical rows stay bit-identical.
    pub fn neighbor_mean(&mut self, x: Var, neighbors: &[Vec<usize>]) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 || xv.rows() != neighbors.len() {
            return Err(TensorError::ShapeMismatch {
                op: "neighbor_mean",
                lhs: xv.shape().to_vec(),
                rhs: vec![neighbors.len()],
            });
        }
        let (n, c) = (xv.rows(), xv.cols());
        let mut out = xv.data().to_vec();
        for (i, nbrs) in neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            let deg = (nbrs.len() + 1) as f64;
            let xi = xv.row(i);
            let mut acc = vec![0.0; c];
            for &j in nbrs {
                if j >= n {
                    return Err(TensorError::Index { index: j, len: n });
                }
                for ((a, &xj), &xi) in acc.iter_mut().zip(xv.row(j)).zip(xi) {
                    *a += xj - xi;
                }
            }
            for (o, a) in out[i * c..(i + 1) * c].iter_mut().zip(acc) {
                *o += a / deg;
            }
        }
        let out = Tensor::matrix(n, c, out)?;
        self.push("neighbor_mean", out, Op::NeighborMean(x, neighbors.to_vec()), &[x])
    }

    /// Reverse sweep from a scalar `loss`, accumulating into every
    /// differentiable leaf reachable from it.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let y = &node.value;
            let send = |v: Var, delta: &[f64], adj: &mut Vec<Option<Vec<f64>>>| {
                if self.nodes[v.0].requires_grad {
                    add_into(&mut adj[v.0], delta);
                }
            };
            match &node.op {
                Op::Leaf => {
                    check_finite("backward", &g)?;
                    add_into(&mut self.grads[i], &g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if self.nodes[a.0].requires_grad {
                        let bt = bv.transpose()?;
                        let da = gemm(&g, bt.data(), m, n, k);
                        send(*a, &da, &mut adj);
                    }
                    if self.nodes[b.0].requires_grad {
                        let at = av.transpose()?;
                        let db = gemm(at.data(), &g, k, m, n);
                        send(*b, &db, &mut adj);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, &g, &mut adj);
                    send(*b, &g, &mut adj);
                }
                Op::Sub(a, b) => {
                    send(*a, &g, &mut adj);
                    let ng: Vec<f64> = g.iter().map(|v| -v).collect();
                    send(*b, &ng, &mut adj);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let da: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                    let db: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    send(*a, &da, &mut adj);
                    send(*b, &db, &mut adj);
                }
                Op::AddRow(x, row) => {
                    send(*x, &g, &mut adj);
                    let cols = y.cols();
                    let mut dr = vec![0.0; cols];
                    for (idx, gv) in g.iter().enumerate() {
                        dr[idx % cols] += gv;
                    }
                    send(*row, &dr, &mut adj);
                }
                Op::Scale(x, c) => {
                    let dx: Vec<f64> = g.iter().map(|v| c * v).collect();
                    send(*x, &dx, &mut adj);
                }
                Op::AddScalar(x) | Op::Reshape(x) => send(*x, &g, &mut adj),
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(xv)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    send(*x, &dx, &mut adj);
                }
                Op::Tanh(x) => {
                    let dx: Vec<f64> = g.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                    send(*x, &dx, &mut adj);
                }
                Op::Sigmoid(x) => {
                    let dx: Vec<f64> = g.iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                    send(*x, &dx, &mut adj);
                }
                Op::Log(x) => {
                    let xv = self.value(*x).data();
                    let dx: Vec<f64> = g.iter().zip(xv).map(|(g, v)| g / v).collect();
                    send(*x, &dx, &mut adj);
                }
                Op::Sqrt(x) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(y.data())
                        .map(|(g, s)| if *s > 0.0 { g / (2.0 * s) } else { 0.0 })
                        .collect();
                    send(*x, &dx, &mut adj);
                }
                Op::Square(x) => {
                    let xv = self.value(*x).data();
                    let dx: Vec<f64> = g.iter().zip(xv).map(|(g, v)| 2.0 * g * v).collect();
                    send(*x, &dx, &mut adj);
                }
                Op::SoftmaxMasked(x, mask) => {
                    let yv = y.data();
                    let dot: f64 = g.iter().zip(yv).map(|(g, y)| g * y).sum();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(yv)
                        .zip(mask)
                        .map(|((g, y), &m)| if m { y * (g - dot) } else { 0.0 })
                        .collect();
                    send(*x, &dx, &mut adj);
                }
                Op::Sum(x) => {
                    let dx = vec![g[0]; self.value(*x).len()];
                    send(*x, &dx, &mut adj);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    let dx = vec![g[0] / n as f64; n];
                    send(*x, &dx, &mut adj);
                }
                Op::WeightedSum(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let cols = xv.cols();
                    if self.nodes[x.0].requires_grad {
                        let mut dx = Vec::with_capacity(xv.len());
                        for &wj in wv.data() {
                            dx.extend(g.iter().map(|gv| wj * gv));
                        }
                        send(*x, &dx, &mut adj);
                    }
                    if self.nodes[w.0].requires_grad {
                        let dw: Vec<f64> = (0..wv.len())
                            .map(|j| {
                                xv.data()[j * cols..(j + 1) * cols]
                                    .iter()
                                    .zip(&g)
                                    .map(|(a, b)| a * b)
                                    .sum()
                            })
                            .collect();
                        send(*w, &dw, &mut adj);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        send(*p, &g[offset..offset + len], &mut adj);
                        offset += len;
                    }
                }
                Op::Gather(x, indices) => {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    for (gv, &i) in g.iter().zip(indices) {
                        dx[i] += gv;
                    }
                    send(*x, &dx, &mut adj);
                }
                Op::NeighborMean(x, neighbors) => {
                    let c = y.cols();
                    let mut dx = vec![0.0; g.len()];
                    for (i, nbrs) in neighbors.iter().enumerate() {
                        let inv = 1.0 / (nbrs.len() + 1) as f64;
                        let gi = &g[i * c..(i + 1) * c];
                        for (d, gv) in dx[i * c..(i + 1) * c].iter_mut().zip(gi) {
                            *d += gv * inv;
                        }
                        for &j in nbrs {
                            for (d, gv) in dx[j * c..(j + 1) * c].iter_mut().zip(gi) {
                                *d += gv * inv;
                            }
                        }
                    }
                    send(*x, &dx, &mut adj);
                }
                Op::LogSumExp(x) => {
                    let xv = self.value(*x).data();
                    let lse = y.item();
                    let dx: Vec<f64> = xv.iter().map(|v| g[0] * (v - lse).exp()).collect();
                    send(*x, &dx, &mut adj);
                }
            }
        }
        Ok(())
    }
}

/// Masked softmax on raw values, shared by the tape op and plain inference code.
pub fn softmax_masked_values(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(TensorError::AllMasked);
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    Ok(out)
}

pub fn logsumexp_values(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
