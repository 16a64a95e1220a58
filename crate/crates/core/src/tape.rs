//! Reverse-mode automatic differentiation over a recorded operation list.
//!
//! A `Tape` borrows one model's flat parameters. Operations are appended in
//! evaluation order, so the node list is topologically sorted by
//! construction; `backward` walks it once in reverse and accumulates the
//! gradient with respect to every parameter.

use crate::error::{invalid, shape_err, HaloError, Result};
use crate::params::ParamVector;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Location of a dense layer inside a parameter vector: `W` is `out x inp`
/// row-major, followed anywhere by the `out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub out: usize,
    pub inp: usize,
}

impl Linear {
    pub fn from_blocks(params: &ParamVector, weight: &str, bias: &str) -> Result<Self> {
        let w = params
            .block(weight)
            .ok_or_else(|| HaloError::InvalidArgument(format!("no block {weight}")))?;
        let b = params
            .block(bias)
            .ok_or_else(|| HaloError::InvalidArgument(format!("no block {bias}")))?;
        if w.dims.len() != 2 || b.dims.len() != 1 || b.dims[0] != w.dims[0] {
            return shape_err(format!("{weight}/{bias}: {:?} {:?}", w.dims, b.dims));
        }
        Ok(Self { weight: w.offset, bias: b.offset, out: w.dims[0], inp: w.dims[1] })
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    /// A contiguous slice of the parameters exposed as a tensor.
    Param { offset: usize },
    Affine { x: NodeId, layer: Linear },
    Swish(NodeId),
    Concat(Vec<NodeId>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Tensor times a one-element node.
    ScaleBy(NodeId, NodeId),
    Gather(NodeId, Vec<usize>),
    SqNorm(NodeId),
    LogSigmoid(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x * sigmoid(x)`.
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `log(sigmoid(x))` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(HaloError::NonFinite("log_sigmoid input".into()));
    }
    Ok(log_sigmoid_unchecked(x))
}

fn log_sigmoid_unchecked(x: f64) -> f64 {
    if x < 0.0 {
        x - x.exp().ln_1p()
    } else {
        -(-x).exp().ln_1p()
    }
}

fn affine_eval(params: &[f64], layer: &Linear, x: &[f64]) -> Vec<f64> {
    let w = &params[layer.weight..layer.weight + layer.out * layer.inp];
    let b = &params[layer.bias..layer.bias + layer.out];
    w.chunks_exact(layer.inp)
        .zip(b)
        .map(|(row, bi)| bi + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamVector) -> Self {
        Self { params: params.values(), nodes: Vec::new() }
    }

    /// A tape with no trainable parameters.
    pub fn constant() -> Tape<'static> {
        Tape { params: &[], nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn eval(&self, op: &Op, values: &[Node]) -> Result<Tensor> {
        let v = |id: &NodeId| &values[id.0].value;
        Ok(match op {
            Op::Input => unreachable!("inputs are not re-evaluated"),
            Op::Param { .. } => unreachable!("params are not re-evaluated"),
            Op::Affine { x, layer } => {
                let xv = v(x);
                if xv.len() != layer.inp {
                    return shape_err(format!("affine expects {} inputs, got {}", layer.inp, xv.len()));
                }
                Tensor::new(&[layer.out], affine_eval(self.params, layer, xv.data()))?
            }
            Op::Swish(x) => v(x).map(swish),
            Op::Concat(parts) => {
                let data: Vec<f64> = parts.iter().flat_map(|p| v(p).data().iter().copied()).collect();
                let n = data.len();
                Tensor::new(&[n], data)?
            }
            Op::Add(a, b) => v(a).axpby(1.0, v(b), 1.0)?,
            Op::Sub(a, b) => v(a).axpby(1.0, v(b), -1.0)?,
            Op::Scale(a, s) => v(a).map(|x| s * x),
            Op::ScaleBy(a, s) => {
                if v(s).len() != 1 {
                    return shape_err(format!("scale_by needs a one-element factor, got {:?}", v(s).dims()));
                }
                let k = v(s).data()[0];
                v(a).map(|x| k * x)
            }
            Op::Gather(a, idx) => {
                let src = v(a).data();
                if let Some(&bad) = idx.iter().find(|&&i| i >= src.len()) {
                    return shape_err(format!("gather index {bad} out of {}", src.len()));
                }
                Tensor::new(&[idx.len()], idx.iter().map(|&i| src[i]).collect())?
            }
            Op::SqNorm(a) => Tensor::scalar(v(a).sq_norm()),
            Op::LogSigmoid(a) => {
                let x = v(a);
                if x.len() != 1 {
                    return shape_err("log_sigmoid takes a scalar");
                }
                Tensor::scalar(log_sigmoid(x.data()[0])?)
            }
        })
    }

    fn record(&mut self, op: Op) -> Result<NodeId> {
        let value = self.eval(&op, &self.nodes)?;
        Ok(self.push(op, value))
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t)
    }

    /// Exposes parameters `offset..offset+prod(dims)` as a differentiable leaf.
    pub fn param(&mut self, offset: usize, dims: &[usize]) -> Result<NodeId> {
        let n: usize = dims.iter().product();
        if offset + n > self.params.len() {
            return shape_err(format!("param slice {offset}+{n} beyond {}", self.params.len()));
        }
        let value = Tensor::new(dims, self.params[offset..offset + n].to_vec())?;
        Ok(self.push(Op::Param { offset }, value))
    }

    /// `W x + b` for the dense layer at `layer`.
    pub fn affine(&mut self, x: NodeId, layer: Linear) -> Result<NodeId> {
        if layer.weight + layer.out * layer.inp > self.params.len() || layer.bias + layer.out > self.params.len() {
            return shape_err("affine layer lies outside the parameter vector");
        }
        self.record(Op::Affine { x, layer })
    }

    pub fn swish(&mut self, x: NodeId) -> NodeId {
        self.record(Op::Swish(x)).expect("elementwise op cannot fail")
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        self.record(Op::Concat(parts.to_vec())).expect("concat cannot fail")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.record(Op::Scale(a, s)).expect("scale cannot fail")
    }

    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        self.record(Op::ScaleBy(a, s))
    }

    /// Flat element selection; the output is a vector in `indices` order.
    pub fn gather(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.record(Op::Gather(a, indices))
    }

    pub fn sq_norm(&mut self, a: NodeId) -> NodeId {
        self.record(Op::SqNorm(a)).expect("sq_norm cannot fail")
    }

    pub fn log_sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::LogSigmoid(a))
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let mut iter = terms.iter();
        let Some(&first) = iter.next() else {
            return Ok(self.input(Tensor::scalar(0.0)));
        };
        let mut acc = first;
        for &t in iter {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Recomputes every node from the recorded inputs and parameters.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut nodes: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.op {
                Op::Input | Op::Param { .. } => node.value.clone(),
                op => self.eval(op, &nodes)?,
            };
            nodes.push(Node { op: node.op.clone(), value });
        }
        Ok(nodes.into_iter().map(|n| n.value).collect())
    }

    /// Gradient of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<f64>> {
        if self.value(loss).len() != 1 {
            return invalid(format!("backward from non-scalar node of shape {:?}", self.value(loss).dims()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut pgrad = vec![0.0; self.params.len()];

        fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, g: impl IntoIterator<Item = f64>) {
            match &mut grads[id.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(e, v)| *e += v),
                slot @ None => *slot = Some(g.into_iter().collect()),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param { offset } => {
                    for (p, g) in pgrad[*offset..*offset + gy.len()].iter_mut().zip(&gy) {
                        *p += g;
                    }
                }
                Op::Affine { x, layer } => {
                    let xv = self.value(*x).data();
                    let w = &self.params[layer.weight..layer.weight + layer.out * layer.inp];
                    let mut gx = vec![0.0; layer.inp];
                    for (o, &g) in gy.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let row = &w[o * layer.inp..(o + 1) * layer.inp];
                        for (gxi, wi) in gx.iter_mut().zip(row) {
                            *gxi += g * wi;
                        }
                        let gw = &mut pgrad[layer.weight + o * layer.inp..layer.weight + (o + 1) * layer.inp];
                        for (gwi, xi) in gw.iter_mut().zip(xv) {
                            *gwi += g * xi;
                        }
                        pgrad[layer.bias + o] += g;
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Swish(x) => {
                    let xv = self.value(*x).data();
                    acc(&mut grads, *x, gy.iter().zip(xv).map(|(g, &v)| g * swish_grad(v)));
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        acc(&mut grads, *p, gy[start..start + n].iter().copied());
                        start += n;
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, gy.iter().copied());
                    acc(&mut grads, *b, gy.iter().copied());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, gy.iter().copied());
                    acc(&mut grads, *b, gy.iter().map(|g| -g));
                }
                Op::Scale(a, s) => acc(&mut grads, *a, gy.iter().map(|g| s * g)),
                Op::ScaleBy(a, s) => {
                    let k = self.value(*s).data()[0];
                    let dk: f64 = gy.iter().zip(self.value(*a).data()).map(|(g, x)| g * x).sum();
                    acc(&mut grads, *a, gy.iter().map(|g| k * g));
                    acc(&mut grads, *s, [dk]);
                }
                Op::Gather(a, indices) => {
                    let mut ga = vec![0.0; self.value(*a).len()];
                    for (&i, g) in indices.iter().zip(&gy) {
                        ga[i] += g;
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SqNorm(a) => {
                    let g = gy[0];
                    acc(&mut grads, *a, self.value(*a).data().iter().map(|v| 2.0 * g * v));
                }
                Op::LogSigmoid(a) => {
                    let x = self.value(*a).data()[0];
                    // d/dx log sigmoid(x) = sigmoid(-x)
                    acc(&mut grads, *a, [gy[0] * sigmoid(-x)]);
                }
            }
        }
        if pgrad.iter().any(|g| !g.is_finite()) {
            return Err(HaloError::NonFinite("gradient".into()));
        }
        Ok(pgrad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn layer_params(rng: &mut SeededRng, out: usize, inp: usize) -> ParamVector {
        let mut p = ParamVector::layout().block("w", &[out, inp]).block("b", &[out]).zeros();
        p.init_normal("w", 1.0, rng);
        p.init_normal("b", 1.0, rng);
        p
    }

    #[test]
    fn affine_identity_and_zero_map() {
        let mut p = ParamVector::layout().block("w", &[3, 3]).block("b", &[3]).zeros();
        for i in 0..3 {
            p.values_mut()[i * 3 + i] = 1.0;
        }
        let layer = Linear::from_blocks(&p, "w", "b").unwrap();
        let x = Tensor::new(&[3], vec![0.5, -2.0, 7.0]).unwrap();
        let mut tape = Tape::new(&p);
        let xi = tape.input(x.clone());
        let y = tape.affine(xi, layer).unwrap();
        assert_eq!(tape.value(y).data(), x.data());

        let mut q = ParamVector::layout().block("w", &[3, 3]).block("b", &[3]).zeros();
        q.values_mut()[9..].copy_from_slice(&[1.5, 1.5, 1.5]);
        let mut tape = Tape::new(&q);
        let xi = tape.input(x);
        let y = tape.affine(xi, Linear::from_blocks(&q, "w", "b").unwrap()).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, 1.5, 1.5]);
    }

    #[test]
    fn affine_matches_naive_matmul() {
        let mut rng = SeededRng::new(11);
        let p = layer_params(&mut rng, 3, 3);
        let x: Vec<f64> = rng.normal_vec(3);
        let mut tape = Tape::new(&p);
        let xi = tape.input(Tensor::new(&[3], x.clone()).unwrap());
        let y = tape.affine(xi, Linear::from_blocks(&p, "w", "b").unwrap()).unwrap();
        let v = p.values();
        for i in 0..3 {
            let mut s = v[9 + i];
            for j in 0..3 {
                s += v[i * 3 + j] * x[j];
            }
            assert!((tape.value(y).data()[i] - s).abs() < 1e-14);
        }
    }

    #[test]
    fn affine_rejects_mismatch() {
        let mut rng = SeededRng::new(1);
        let p = layer_params(&mut rng, 2, 3);
        let mut tape = Tape::new(&p);
        let xi = tape.input(Tensor::zeros(&[4]));
        assert!(tape.affine(xi, Linear::from_blocks(&p, "w", "b").unwrap()).is_err());
    }

    #[test]
    fn swish_values() {
        assert_eq!(swish(0.0), 0.0);
        assert!((swish(40.0) - 40.0).abs() < 1e-12);
        // -1 * 1/(1+e)
        let oracle = -1.0 / (1.0 + std::f64::consts::E);
        assert!((swish(-1.0) - oracle).abs() < 1e-16);
    }

    #[test]
    fn log_sigmoid_values() {
        assert!((log_sigmoid(0.0).unwrap() + std::f64::consts::LN_2).abs() < 1e-16);
        assert!((log_sigmoid(-1000.0).unwrap() + 1000.0).abs() < 1e-12);
        assert!(log_sigmoid(1000.0).unwrap().abs() < 1e-300);
        // -ln(1 + e^-2.5), reference computed with 30-digit arithmetic
        let reference = -0.078_889_734_292_549_62_f64;
        assert!((log_sigmoid(2.5).unwrap() - reference).abs() < 1e-12);
        assert!(log_sigmoid(f64::NAN).is_err());
        assert!(log_sigmoid(f64::INFINITY).is_err());
    }

    #[test]
    fn backward_simple_cases() {
        let mut rng = SeededRng::new(5);
        let mut p = ParamVector::layout().block("theta", &[6]).zeros();
        p.init_normal("theta", 1.0, &mut rng);
        // constant loss
        let mut tape = Tape::new(&p);
        let c = tape.input(Tensor::scalar(3.0));
        assert!(tape.backward(c).unwrap().iter().all(|&g| g == 0.0));
        // 0.5 |theta|^2
        let mut tape = Tape::new(&p);
        let th = tape.param(0, &[6]).unwrap();
        let sq = tape.sq_norm(th);
        let half = tape.scale(sq, 0.5);
        let g = tape.backward(half).unwrap();
        for (a, b) in g.iter().zip(p.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        // non-scalar loss
        assert!(tape.backward(th).is_err());
    }

    fn composite(tape: &mut Tape, layer1: Linear, layer2: Linear, x: &Tensor) -> NodeId {
        let xi = tape.input(x.clone());
        let h = tape.affine(xi, layer1).unwrap();
        let h = tape.swish(h);
        let cat = tape.concat(&[h, xi]);
        let y = tape.affine(cat, layer2).unwrap();
        let k = tape.param(layer2.bias + 1, &[1]).unwrap();
        let y = tape.scale_by(y, k).unwrap();
        let sel = tape.gather(y, vec![0, 2, 2]).unwrap();
        let tgt = tape.input(Tensor::new(&[3], vec![0.1, -0.2, 0.3]).unwrap());
        let d = tape.sub(sel, tgt).unwrap();
        let n = tape.sq_norm(d);
        let s = tape.scale(n, -0.7);
        let ls = tape.log_sigmoid(s).unwrap();
        let neg = tape.scale(ls, -1.0);
        let sq = tape.sq_norm(y);
        tape.add(neg, sq).unwrap()
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = SeededRng::new(99);
        let mut p = ParamVector::layout()
            .block("w1", &[4, 3])
            .block("b1", &[4])
            .block("w2", &[3, 7])
            .block("b2", &[3])
            .zeros();
        for name in ["w1", "b1", "w2", "b2"] {
            p.init_normal(name, 0.5, &mut rng);
        }
        let l1 = Linear::from_blocks(&p, "w1", "b1").unwrap();
        let l2 = Linear::from_blocks(&p, "w2", "b2").unwrap();
        let x = Tensor::new(&[3], rng.normal_vec(3)).unwrap();
        let mut tape = Tape::new(&p);
        let loss = composite(&mut tape, l1, l2, &x);
        let grad = tape.backward(loss).unwrap();
        let h = 1e-5;
        for (k, &gk) in grad.iter().enumerate() {
            let mut plus = p.clone();
            plus.values_mut()[k] += h;
            let mut minus = p.clone();
            minus.values_mut()[k] -= h;
            let mut tp = Tape::new(&plus);
            let lp = composite(&mut tp, l1, l2, &x);
            let mut tm = Tape::new(&minus);
            let lm = composite(&mut tm, l1, l2, &x);
            let fd = (tp.scalar(lp) - tm.scalar(lm)) / (2.0 * h);
            let rel = (fd - gk).abs() / fd.abs().max(gk.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {k}: fd {fd} vs {gk}");
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = SeededRng::new(3);
        let mut p = ParamVector::layout()
            .block("w1", &[4, 3])
            .block("b1", &[4])
            .block("w2", &[3, 7])
            .block("b2", &[3])
            .zeros();
        for name in ["w1", "b1", "w2", "b2"] {
            p.init_normal(name, 0.5, &mut rng);
        }
        let l1 = Linear::from_blocks(&p, "w1", "b1").unwrap();
        let l2 = Linear::from_blocks(&p, "w2", "b2").unwrap();
        let x = Tensor::new(&[3], rng.normal_vec(3)).unwrap();
        let mut tape = Tape::new(&p);
        composite(&mut tape, l1, l2, &x);
        let replayed = tape.replay().unwrap();
        for (i, v) in replayed.iter().enumerate() {
            let a: Vec<u64> = v.data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = tape.value(NodeId(i)).data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
    }
}
