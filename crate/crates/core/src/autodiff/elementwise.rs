use super::{Op, Tape, Var};
use crate::tensor::{arg_err, shape_err, Scalar, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Relu,
    Add,
    Mul,
    SoftmaxChannel,
}

/// Output shape when broadcasting two equal-rank shapes (each axis equal or 1).
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>, TensorError> {
    if a.len() != b.len() {
        return Err(shape_err(op, format!("rank mismatch {a:?} vs {b:?}")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(shape_err(op, format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

/// For every output element, the linear index of the input element it reads.
fn source_indices(out: &[usize], input: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        strides[d] = if input[d] == 1 { 0 } else { acc };
        acc *= input[d];
    }
    let total: usize = out.iter().product();
    let mut idx = vec![0usize; rank];
    let mut map = Vec::with_capacity(total);
    for _ in 0..total {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

fn binary<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>, TensorError> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let shape = broadcast_shape(op, a.shape(), b.shape())?;
    let ia = source_indices(&shape, a.shape());
    let ib = source_indices(&shape, b.shape());
    let data = ia.iter().zip(&ib).map(|(&i, &j)| f(a.data()[i], b.data()[j])).collect();
    Tensor::new(shape, data)
}

/// Sums `grad` (output-shaped) back down to `shape`.
fn reduce_to<T: Scalar>(grad: Vec<T>, out_shape: &[usize], shape: &[usize]) -> Tensor<T> {
    if out_shape == shape {
        return Tensor::new(shape.to_vec(), grad).expect("shape preserved");
    }
    let mut acc = Tensor::zeros(shape.to_vec());
    let d = acc.data_mut();
    for (src, g) in source_indices(out_shape, shape).into_iter().zip(grad) {
        d[src] += g;
    }
    acc
}

impl<T: Scalar> Tape<T> {
    /// Dispatches one of the elementwise kinds; `inputs` holds one operand
    /// for unary kinds and two for binary ones.
    pub fn elementwise(&mut self, kind: ElementwiseKind, inputs: &[Var]) -> Result<Var, TensorError> {
        match (kind, inputs) {
            (ElementwiseKind::Relu, [x]) => self.relu(*x),
            (ElementwiseKind::SoftmaxChannel, [x]) => self.softmax_channel(*x),
            (ElementwiseKind::Add, [a, b]) => self.add(*a, *b),
            (ElementwiseKind::Mul, [a, b]) => self.mul(*a, *b),
            _ => Err(arg_err("elementwise", format!("{kind:?} given {} operands", inputs.len()))),
        }
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, TensorError> {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("relu", out, Op::Relu { input })
    }

    /// Elementwise sum; an operand with size-1 axes broadcasts over the other.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = binary("add", self.value(a), self.value(b), |x, y| x + y)?;
        self.push("add", out, Op::Add { a, b })
    }

    /// Elementwise product with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = binary("mul", self.value(a), self.value(b), |x, y| x * y)?;
        self.push("mul", out, Op::Mul { a, b })
    }

    /// Softmax over axis 1 of an N×C×H×W tensor.
    pub fn softmax_channel(&mut self, input: Var) -> Result<Var, TensorError> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4()?;
        let hw = h * w;
        let xd = x.data();
        let mut out = vec![T::zero(); xd.len()];
        let mut e = vec![0.0f64; c];
        for ni in 0..n {
            let base = ni * c * hw;
            for p in 0..hw {
                let max = (0..c).map(|ch| xd[base + ch * hw + p].to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (ch, ev) in e.iter_mut().enumerate() {
                    *ev = (xd[base + ch * hw + p].to_f64_lossy() - max).exp();
                    total += *ev;
                }
                for (ch, ev) in e.iter().enumerate() {
                    out[base + ch * hw + p] = T::from_f64_lossy(ev / total);
                }
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.push("softmax_channel", out, Op::SoftmaxChannel { input })
    }

    /// Concatenates N×Cᵢ×H×W tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var, TensorError> {
        let first = inputs.first().ok_or_else(|| arg_err("concat_channels", "no inputs"))?;
        let (n, _, h, w) = self.value(*first).dims4()?;
        let mut total_c = 0;
        for v in inputs {
            let (ni, ci, hi, wi) = self.value(*v).dims4()?;
            if (ni, hi, wi) != (n, h, w) {
                return Err(shape_err("concat_channels", format!("{:?} vs {:?}", self.shape(*first), self.shape(*v))));
            }
            total_c += ci;
        }
        let mut out = Vec::with_capacity(n * total_c * h * w);
        for ni in 0..n {
            for v in inputs {
                let t = self.value(*v);
                let len = t.shape()[1] * h * w;
                out.extend_from_slice(&t.data()[ni * len..(ni + 1) * len]);
            }
        }
        self.push("concat_channels", Tensor::new([n, total_c, h, w], out)?, Op::Concat { inputs: inputs.to_vec() })
    }
}

pub(super) fn relu_backward<T: Scalar>(out: &Tensor<T>, upstream: &Tensor<T>) -> Tensor<T> {
    let data = out
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(out.shape().to_vec(), data).expect("shape preserved")
}

pub(super) fn add_backward<T: Scalar>(a: &[usize], b: &[usize], upstream: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let g = upstream.data().to_vec();
    (reduce_to(g.clone(), upstream.shape(), a), reduce_to(g, upstream.shape(), b))
}

pub(super) fn mul_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, upstream: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let out_shape = upstream.shape();
    let (ga, gb): (Vec<T>, Vec<T>) = if a.shape() == b.shape() {
        upstream.data().iter().zip(a.data().iter().zip(b.data())).map(|(&g, (&x, &y))| (g * y, g * x)).unzip()
    } else {
        let ia = source_indices(out_shape, a.shape());
        let ib = source_indices(out_shape, b.shape());
        upstream
            .data()
            .iter()
            .zip(ia.iter().zip(&ib))
            .map(|(&g, (&i, &j))| (g * b.data()[j], g * a.data()[i]))
            .unzip()
    };
    (reduce_to(ga, out_shape, a.shape()), reduce_to(gb, out_shape, b.shape()))
}

pub(super) fn softmax_channel_backward<T: Scalar>(out: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = out.dims4()?;
    let hw = h * w;
    let y = out.data();
    let g = upstream.data();
    let mut dx = vec![T::zero(); y.len()];
    for ni in 0..n {
        let base = ni * c * hw;
        for p in 0..hw {
            let dot: f64 = (0..c).map(|ch| y[base + ch * hw + p].to_f64_lossy() * g[base + ch * hw + p].to_f64_lossy()).sum();
            for ch in 0..c {
                let i = base + ch * hw + p;
                dx[i] = T::from_f64_lossy(y[i].to_f64_lossy() * (g[i].to_f64_lossy() - dot));
            }
        }
    }
    Tensor::new(out.shape().to_vec(), dx)
}

pub(super) fn concat_backward<T: Scalar>(shapes: &[&[usize]], upstream: &Tensor<T>) -> Vec<Tensor<T>> {
    let (n, total_c, h, w) = upstream.dims4().expect("concat output is rank 4");
    let g = upstream.data();
    let mut offset = 0;
    shapes
        .iter()
        .map(|shape| {
            let c = shape[1];
            let len = c * h * w;
            let mut data = Vec::with_capacity(n * len);
            for ni in 0..n {
                let start = ni * total_c * h * w + offset * h * w;
                data.extend_from_slice(&g[start..start + len]);
            }
            offset += c;
            Tensor::new(shape.to_vec(), data).expect("shape preserved")
        })
        .collect()
}
