use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use super::kernels::{
    add_column_dots, add_column_sums, dot, gemm, gemm_nt, gemm_tn, sum, transpose_last2,
};
use super::tensor::numel;
use super::{NumError, Scalar, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    fn idx(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Transpose {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    GatherRows {
        x: Var,
        indices: Vec<usize>,
    },
    Softmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu {
        x: Var,
    },
    SumAll {
        x: Var,
    },
    SumLast {
        x: Var,
    },
    MeanAll {
        x: Var,
    },
    MeanLast {
        x: Var,
    },
    Sqrt {
        x: Var,
    },
    DivEps {
        a: Var,
        b: Var,
        eps: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of tensor operations.
///
/// Nodes are stored in creation order, which is a topological order: every
/// op's inputs already exist when it is recorded. [`Tape::backward`] walks
/// the nodes in reverse.
#[derive(Debug)]
pub struct Tape<T> {
    id: u32,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u32,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `var`, or `None` when the loss
    /// does not depend on it (or it does not require gradients).
    pub fn get(&self, var: Var) -> Option<&[T]> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.idx()).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.idx()).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, detail: alloc::string::String) -> NumError {
    NumError::ShapeMismatch { op, detail }
}

/// How `b` broadcasts against `a`: `b`'s shape must equal a trailing suffix of
/// `a`'s shape. Returns the number of repeats.
fn suffix_repeats(op: &'static str, a: &[usize], b: &[usize]) -> Result<usize, NumError> {
    if b.len() > a.len() || a[a.len() - b.len()..] != *b {
        return Err(mismatch(
            op,
            format!("cannot broadcast {:?} against {:?}", b, a),
        ));
    }
    Ok(numel(&a[..a.len() - b.len()]))
}

fn last_dim(op: &'static str, shape: &[usize]) -> Result<(usize, usize), NumError> {
    match shape.last() {
        Some(&d) => Ok((numel(shape) / d, d)),
        None => Err(mismatch(op, format!("empty shape {:?}", shape))),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Parameters are leaves with `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor<T>, NumError> {
        self.check(var)?;
        Ok(&self.nodes[var.idx()].value)
    }

    pub fn shape(&self, var: Var) -> Result<&[usize], NumError> {
        Ok(self.value(var)?.shape())
    }

    fn check(&self, var: Var) -> Result<(), NumError> {
        if var.tape != self.id || var.idx() >= self.nodes.len() {
            return Err(NumError::DetachedTensor);
        }
        Ok(())
    }

    fn val(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.idx()].value
    }

    fn rg(&self, var: Var) -> bool {
        self.nodes[var.idx()].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let index = u32::try_from(self.nodes.len()).expect("tape exceeds u32 nodes");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    fn out(&mut self, shape: &[usize], data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.rg(v));
        let value = Tensor::new(shape, data).expect("op produced inconsistent shape");
        self.push(value, op, requires_grad)
    }

    /// Matrix product over the last two axes. `a` is `[..., m, k]`; `b` is
    /// either `[k, n]` (shared across the batch) or `[..., k, n]` with the
    /// same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.check(a)?;
        self.check(b)?;
        let sa = self.val(a).shape().to_vec();
        let sb = self.val(b).shape().to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch(
                "matmul",
                format!("need rank >= 2, got {:?} x {:?}", sa, sb),
            ));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let lead = &sa[..sa.len() - 2];
        let shared_rhs = sb.len() == 2;
        if kb != k || (!shared_rhs && sb[..sb.len() - 2] != *lead) {
            return Err(mismatch("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let batch = numel(lead);
        let mut data = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.val(a).data(), self.val(b).data());
            for bi in 0..batch {
                let b_off = if shared_rhs { 0 } else { bi * k * n };
                gemm(
                    &av[bi * m * k..(bi + 1) * m * k],
                    &bv[b_off..b_off + k * n],
                    &mut data[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = lead.to_vec();
        shape.extend_from_slice(&[m, n]);
        Ok(self.out(
            &shape,
            data,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            },
            &[a, b],
        ))
    }

    /// Elementwise sum; `b` may broadcast over leading axes of `a` (or the
    /// reverse).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.check(a)?;
        self.check(b)?;
        let (a, b) = if self.val(b).len() > self.val(a).len() {
            (b, a)
        } else {
            (a, b)
        };
        let shape = self.val(a).shape().to_vec();
        suffix_repeats("add", &shape, self.val(b).shape())?;
        let bv = self.val(b).data();
        let data: Vec<T> = self
            .val(a)
            .data()
            .chunks(bv.len())
            .flat_map(|chunk| chunk.iter().zip(bv).map(|(&x, &y)| x + y))
            .collect();
        Ok(self.out(&shape, data, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.check(a)?;
        self.check(b)?;
        let (a, b) = if self.val(b).len() > self.val(a).len() {
            (b, a)
        } else {
            (a, b)
        };
        let shape = self.val(a).shape().to_vec();
        suffix_repeats("mul", &shape, self.val(b).shape())?;
        let bv = self.val(b).data();
        let data: Vec<T> = self
            .val(a)
            .data()
            .chunks(bv.len())
            .flat_map(|chunk| chunk.iter().zip(bv).map(|(&x, &y)| x * y))
            .collect();
        Ok(self.out(&shape, data, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, NumError> {
        self.check(x)?;
        let factor = T::from_f64(factor);
        let shape = self.val(x).shape().to_vec();
        let data = self.val(x).data().iter().map(|&v| v * factor).collect();
        Ok(self.out(&shape, data, Op::Scale { x, factor }, &[x]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var, NumError> {
        self.check(x)?;
        let shape = self.val(x).shape().to_vec();
        if shape.len() < 2 {
            return Err(mismatch(
                "transpose",
                format!("need rank >= 2, got {:?}", shape),
            ));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let batch = numel(&shape[..shape.len() - 2]);
        let mut data = vec![T::zero(); shape.iter().product()];
        transpose_last2(self.val(x).data(), &mut data, batch, r, c);
        let mut out_shape = shape;
        let rank = out_shape.len();
        out_shape.swap(rank - 2, rank - 1);
        Ok(self.out(&out_shape, data, Op::Transpose { x }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumError> {
        self.check(x)?;
        if numel(shape) != self.val(x).len() || shape.contains(&0) {
            return Err(mismatch(
                "reshape",
                format!("{:?} -> {:?}", self.val(x).shape(), shape),
            ));
        }
        let data = self.val(x).data().to_vec();
        Ok(self.out(shape, data, Op::Reshape { x }, &[x]))
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumError> {
        let Some(&first) = parts.first() else {
            return Err(mismatch("concat", "no inputs".into()));
        };
        for &p in parts {
            self.check(p)?;
        }
        let base = self.val(first).shape().to_vec();
        if axis >= base.len() {
            return Err(mismatch(
                "concat",
                format!("axis {} out of range for {:?}", axis, base),
            ));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.val(p).shape();
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return Err(mismatch(
                    "concat",
                    format!("{:?} vs {:?} on axis {}", base, s, axis),
                ));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.val(p).shape()[axis] * inner;
                data.extend_from_slice(&self.val(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.out(
            &shape,
            data,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Selects rows (first-axis slices) by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var, NumError> {
        self.check(x)?;
        let shape = self.val(x).shape().to_vec();
        let rows = shape[0];
        if indices.is_empty() {
            return Err(mismatch("gather_rows", "empty index list".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(mismatch(
                "gather_rows",
                format!("index {} out of {:?}", bad, shape),
            ));
        }
        let width = numel(&shape[1..]);
        let src = self.val(x).data();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        Ok(self.out(
            &out_shape,
            data,
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
            &[x],
        ))
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NumError> {
        self.check(x)?;
        let shape = self.val(x).shape().to_vec();
        let (_, d) = last_dim("softmax", &shape)?;
        let mut data = self.val(x).data().to_vec();
        for row in data.chunks_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            for v in row.iter_mut() {
                *v = (*v - max).exp();
            }
            let total = sum(row);
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(self.out(&shape, data, Op::Softmax { x }, &[x]))
    }

    /// Layer normalization over the last axis with learnable `gain` and
    /// `bias` (both shaped like the last axis). Uses the biased variance and
    /// `eps` inside the square root.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumError> {
        self.check(x)?;
        self.check(gain)?;
        self.check(bias)?;
        let shape = self.val(x).shape().to_vec();
        let (rows, d) = last_dim("layer_norm", &shape)?;
        if self.val(gain).shape() != [d] || self.val(bias).shape() != [d] {
            return Err(mismatch(
                "layer_norm",
                format!(
                    "x {:?} with gain {:?} bias {:?}",
                    shape,
                    self.val(gain).shape(),
                    self.val(bias).shape()
                ),
            ));
        }
        let xs = self.val(x).data();
        let (g, b) = (self.val(gain).data(), self.val(bias).data());
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut data = vec![T::zero(); rows * d];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().fold(0.0, |a, v| a + v.as_f64()) / d as f64;
            let var = row
                .iter()
                .fold(0.0, |a, v| a + (v.as_f64() - mean) * (v.as_f64() - mean))
                / d as f64;
            let rs = T::from_f64(1.0 / libm::sqrt(var + eps));
            let mean = T::from_f64(mean);
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                data[r * d + j] = h * g[j] + b[j];
            }
        }
        Ok(self.out(
            &shape,
            data,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var, NumError> {
        self.check(x)?;
        let shape = self.val(x).shape().to_vec();
        let half = T::from_f64(0.5);
        let inv_sqrt2 = T::from_f64(core::f64::consts::FRAC_1_SQRT_2);
        let data = self
            .val(x)
            .data()
            .iter()
            .map(|&v| half * v * (T::one() + (v * inv_sqrt2).erf()))
            .collect();
        Ok(self.out(&shape, data, Op::Gelu { x }, &[x]))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var, NumError> {
        self.check(x)?;
        let s = sum(self.val(x).data());
        Ok(self.out(&[1], vec![s], Op::SumAll { x }, &[x]))
    }

    /// Sum over the last axis (the axis is dropped; rank-1 input gives `[1]`).
    pub fn sum_last(&mut self, x: Var) -> Result<Var, NumError> {
        self.check(x)?;
        let shape = self.val(x).shape().to_vec();
        let (_, d) = last_dim("sum_last", &shape)?;
        let data = self.val(x).data().chunks(d).map(sum).collect();
        let out_shape = reduced_shape(&shape);
        Ok(self.out(&out_shape, data, Op::SumLast { x }, &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumError> {
        self.check(x)?;
        let v = self.val(x);
        let m = sum(v.data()) / T::from_f64(v.len() as f64);
        Ok(self.out(&[1], vec![m], Op::MeanAll { x }, &[x]))
    }

    pub fn mean_last(&mut self, x: Var) -> Result<Var, NumError> {
        self.check(x)?;
        let shape = self.val(x).shape().to_vec();
        let (_, d) = last_dim("mean_last", &shape)?;
        let n = T::from_f64(d as f64);
        let data = self.val(x).data().chunks(d).map(|r| sum(r) / n).collect();
        let out_shape = reduced_shape(&shape);
        Ok(self.out(&out_shape, data, Op::MeanLast { x }, &[x]))
    }

    /// Elementwise square root. Negative inputs are clamped to zero; the
    /// gradient at zero is defined as zero.
    pub fn sqrt(&mut self, x: Var) -> Result<Var, NumError> {
        self.check(x)?;
        let shape = self.val(x).shape().to_vec();
        let data = self
            .val(x)
            .data()
            .iter()
            .map(|&v| v.max(T::zero()).sqrt())
            .collect();
        Ok(self.out(&shape, data, Op::Sqrt { x }, &[x]))
    }

    /// `a / max(b, eps)` elementwise; `a` and `b` must have equal shapes.
    pub fn div_eps(&mut self, a: Var, b: Var, eps: f64) -> Result<Var, NumError> {
        self.check(a)?;
        self.check(b)?;
        let shape = self.val(a).shape().to_vec();
        if shape != self.val(b).shape() {
            return Err(mismatch(
                "div_eps",
                format!("{:?} / {:?}", shape, self.val(b).shape()),
            ));
        }
        let eps = T::from_f64(eps);
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(&x, &y)| x / y.max(eps))
            .collect();
        Ok(self.out(&shape, data, Op::DivEps { a, b, eps }, &[a, b]))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumError> {
        self.check(loss)?;
        let lv = self.val(loss);
        if lv.len() != 1 {
            return Err(NumError::LossNotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.idx() + 1, || None);
        grads[loss.idx()] = Some(vec![T::one()]);

        for i in (0..=loss.idx()).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        match op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            } => {
                let (av, bv) = (self.val(a).data(), self.val(b).data());
                if self.rg(a) {
                    let ga = buf(grads, a, av.len());
                    for bi in 0..batch {
                        let b_off = if shared_rhs { 0 } else { bi * k * n };
                        gemm_nt(
                            &dy[bi * m * n..(bi + 1) * m * n],
                            &bv[b_off..b_off + k * n],
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                }
                if self.rg(b) {
                    let gb = buf(grads, b, bv.len());
                    for bi in 0..batch {
                        let b_off = if shared_rhs { 0 } else { bi * k * n };
                        gemm_tn(
                            &av[bi * m * k..(bi + 1) * m * k],
                            &dy[bi * m * n..(bi + 1) * m * n],
                            &mut gb[b_off..b_off + k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            &Op::Add { a, b } => {
                if self.rg(a) {
                    add_into(buf(grads, a, dy.len()), dy);
                }
                if self.rg(b) {
                    add_column_sums(buf(grads, b, self.val(b).len()), dy);
                }
            }
            &Op::Mul { a, b } => {
                let (av, bv) = (self.val(a).data(), self.val(b).data());
                let w = bv.len();
                if self.rg(a) {
                    let ga = buf(grads, a, av.len());
                    for (gchunk, dchunk) in ga.chunks_mut(w).zip(dy.chunks(w)) {
                        for ((g, &d), &y) in gchunk.iter_mut().zip(dchunk).zip(bv) {
                            *g += d * y;
                        }
                    }
                }
                if self.rg(b) {
                    add_column_dots(buf(grads, b, w), dy, av);
                }
            }
            &Op::Scale { x, factor } => {
                for (g, &d) in buf(grads, x, dy.len()).iter_mut().zip(dy) {
                    *g += d * factor;
                }
            }
            &Op::Transpose { x } => {
                // out is [.., c, r]; transposing dy back gives [.., r, c].
                let s = out.shape();
                let (oc, or) = (s[s.len() - 2], s[s.len() - 1]);
                let batch = numel(&s[..s.len() - 2]);
                let mut tmp = vec![T::zero(); dy.len()];
                transpose_last2(dy, &mut tmp, batch, oc, or);
                add_into(buf(grads, x, dy.len()), &tmp);
            }
            &Op::Reshape { x } => add_into(buf(grads, x, dy.len()), dy),
            Op::Concat { parts, axis } => {
                let axis = *axis;
                let s = out.shape();
                let outer = numel(&s[..axis]);
                let inner = numel(&s[axis + 1..]);
                let row = s[axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = self.val(p).shape()[axis] * inner;
                    if self.rg(p) {
                        let gp = buf(grads, p, outer * chunk);
                        for o in 0..outer {
                            let src = &dy[o * row + offset..o * row + offset + chunk];
                            add_into(&mut gp[o * chunk..(o + 1) * chunk], src);
                        }
                    }
                    offset += chunk;
                }
            }
            Op::GatherRows { x, indices } => {
                let x = *x;
                let width = numel(&self.val(x).shape()[1..]);
                let gx = buf(grads, x, self.val(x).len());
                for (r, &i) in indices.iter().enumerate() {
                    add_into(
                        &mut gx[i * width..(i + 1) * width],
                        &dy[r * width..(r + 1) * width],
                    );
                }
            }
            &Op::Softmax { x } => {
                let d = *out.shape().last().unwrap();
                let gx = buf(grads, x, dy.len());
                for ((g, y), dyr) in gx.chunks_mut(d).zip(out.data().chunks(d)).zip(dy.chunks(d)) {
                    let s = dot(y, dyr);
                    for j in 0..d {
                        g[j] += y[j] * (dyr[j] - s);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let d = self.val(gain).len();
                let gv = self.val(gain).data();
                if self.rg(gain) {
                    add_column_dots(buf(grads, gain, d), dy, xhat);
                }
                if self.rg(bias) {
                    add_column_sums(buf(grads, bias, d), dy);
                }
                if self.rg(x) {
                    let n = T::from_f64(d as f64);
                    let gx = buf(grads, x, dy.len());
                    let mut dh = vec![T::zero(); d];
                    for (r, (dyr, hr)) in dy.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        for j in 0..d {
                            dh[j] = dyr[j] * gv[j];
                        }
                        let sum_dh = sum(&dh);
                        let sum_dh_h = dot(&dh, hr);
                        let scale = rstd[r] / n;
                        let gr = &mut gx[r * d..(r + 1) * d];
                        for j in 0..d {
                            gr[j] += scale * (n * dh[j] - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                }
            }
            &Op::Gelu { x } => {
                let half = T::from_f64(0.5);
                let inv_sqrt2 = T::from_f64(core::f64::consts::FRAC_1_SQRT_2);
                let inv_sqrt_2pi = T::from_f64(0.398_942_280_401_432_7);
                let xv = self.val(x).data();
                let gx = buf(grads, x, dy.len());
                for ((g, &d), &v) in gx.iter_mut().zip(dy).zip(xv) {
                    let cdf = half * (T::one() + (v * inv_sqrt2).erf());
                    let pdf = inv_sqrt_2pi * (-half * v * v).exp();
                    *g += d * (cdf + v * pdf);
                }
            }
            &Op::SumAll { x } => {
                let d = dy[0];
                for g in buf(grads, x, self.val(x).len()).iter_mut() {
                    *g += d;
                }
            }
            &Op::MeanAll { x } => {
                let len = self.val(x).len();
                let d = dy[0] / T::from_f64(len as f64);
                for g in buf(grads, x, len).iter_mut() {
                    *g += d;
                }
            }
            &Op::SumLast { x } | &Op::MeanLast { x } => {
                let len = self.val(x).len();
                let d = *self.val(x).shape().last().unwrap();
                let scale = if matches!(op, Op::MeanLast { .. }) {
                    T::one() / T::from_f64(d as f64)
                } else {
                    T::one()
                };
                let gx = buf(grads, x, len);
                for (row, &dv) in gx.chunks_mut(d).zip(dy) {
                    for g in row.iter_mut() {
                        *g += dv * scale;
                    }
                }
            }
            &Op::Sqrt { x } => {
                let two = T::from_f64(2.0);
                let gx = buf(grads, x, dy.len());
                for ((g, &d), &y) in gx.iter_mut().zip(dy).zip(out.data()) {
                    if y > T::zero() {
                        *g += d / (two * y);
                    }
                }
            }
            &Op::DivEps { a, b, eps } => {
                let (av, bv) = (self.val(a).data(), self.val(b).data());
                if self.rg(a) {
                    let ga = buf(grads, a, av.len());
                    for ((g, &d), &y) in ga.iter_mut().zip(dy).zip(bv) {
                        *g += d / y.max(eps);
                    }
                }
                if self.rg(b) {
                    let gb = buf(grads, b, bv.len());
                    for (((g, &d), &x), &y) in gb.iter_mut().zip(dy).zip(av).zip(bv) {
                        if y > eps {
                            *g -= d * x / (y * y);
                        }
                    }
                }
            }
        }
    }
}

fn reduced_shape(shape: &[usize]) -> Vec<usize> {
    if shape.len() <= 1 {
        vec![1]
    } else {
        shape[..shape.len() - 1].to_vec()
    }
}

fn buf<T: Scalar>(grads: &mut [Option<Vec<T>>], var: Var, len: usize) -> &mut [T] {
    grads[var.idx()].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
