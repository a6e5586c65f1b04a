use rand::Rng;

use super::array::{Array, Real};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        src: Var,
        axis: usize,
        start: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Conv1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    LstmCell {
        x: Var,
        h: Var,
        c: Var,
        weight: Var,
        bias: Var,
        gates: Vec<T>,
        tanh_c: Vec<T>,
    },
    Sum(Var),
    SmoothL1 {
        pred: Var,
        target: Vec<T>,
        mask: Vec<T>,
        beta: T,
    },
    SquaredError {
        pred: Var,
        target: Vec<T>,
        mask: Vec<T>,
    },
    BceLogits {
        logits: Var,
        target: Vec<T>,
        mask: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Array<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<T>,
}

/// Records primitive applications in execution (hence topological) order.
///
/// Every primitive stores its output value; the operation itself is only
/// recorded when some input requires a gradient.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn dims2<T: Real>(kind: &'static str, a: &Array<T>) -> Result<(usize, usize)> {
    a.dims2()
        .ok_or_else(|| Error::shape(kind, format!("expected a 2-D input, got shape {:?}", a.shape())))
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Array<T>, parents: &[Var], op: Op<T>) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = dims2("matmul", self.value(a))?;
        let (k2, m) = dims2("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("({n}, {k}) x ({k2}, {m})")));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for kk in 0..k {
                let s = av[i * k + kk];
                if s == T::zero() {
                    continue;
                }
                for (o, &bv) in row.iter_mut().zip(&bv[kk * m..(kk + 1) * m]) {
                    *o += s * bv;
                }
            }
        }
        Ok(self.push(Array::new(vec![n, m], out)?, &[a, b], Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "add",
                format!("{:?} + {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Array::new(shape, data)?, &[a, b], Op::Add(a, b)))
    }

    /// `x (n, m) + b` where `b` has `m` elements, added to every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = dims2("add_row", self.value(x))?;
        if self.value(b).numel() != m {
            return Err(Error::shape(
                "add_row",
                format!("rows of width {m} plus bias of {} elements", self.value(b).numel()),
            ));
        }
        let bv = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .chunks_exact(m)
            .flat_map(|r| r.iter().zip(bv).map(|(&u, &v)| u + v))
            .collect();
        Ok(self.push(Array::new(vec![n, m], data)?, &[x, b], Op::AddRow(x, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "mul",
                format!("{:?} * {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Array::new(shape, data)?, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a);
        let out = Array::new(v.shape().to_vec(), v.data().iter().map(|&x| x * s).collect()).unwrap();
        self.push(out, &[a], Op::Scale(a, s))
    }

    /// Concatenates 2-D arrays along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::shape(
                "concat",
                format!("{} parts along axis {axis}", parts.len()),
            ));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| dims2("concat", self.value(p)))
            .collect::<Result<_>>()?;
        let (r0, c0) = dims[0];
        let data = if axis == 0 {
            if let Some(d) = dims.iter().find(|d| d.1 != c0) {
                return Err(Error::shape("concat", format!("column mismatch {c0} vs {}", d.1)));
            }
            parts
                .iter()
                .flat_map(|&p| self.value(p).data().iter().copied())
                .collect::<Vec<_>>()
        } else {
            if let Some(d) = dims.iter().find(|d| d.0 != r0) {
                return Err(Error::shape("concat", format!("row mismatch {r0} vs {}", d.0)));
            }
            let mut out = Vec::with_capacity(r0 * dims.iter().map(|d| d.1).sum::<usize>());
            for r in 0..r0 {
                for (&p, &(_, c)) in parts.iter().zip(&dims) {
                    out.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
                }
            }
            out
        };
        let shape = if axis == 0 {
            vec![dims.iter().map(|d| d.0).sum(), c0]
        } else {
            vec![r0, dims.iter().map(|d| d.1).sum()]
        };
        Ok(self.push(
            Array::new(shape, data)?,
            parts,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// `len` rows (axis 0) or columns (axis 1) of a 2-D array starting at `start`.
    pub fn slice(&mut self, src: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2("slice", self.value(src))?;
        let extent = if axis == 0 { r } else { c };
        if axis > 1 || start + len > extent || len == 0 {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) along axis {axis} of ({r}, {c})", start + len),
            ));
        }
        let v = self.value(src).data();
        let (shape, data) = if axis == 0 {
            (vec![len, c], v[start * c..(start + len) * c].to_vec())
        } else {
            (
                vec![r, len],
                (0..r)
                    .flat_map(|i| v[i * c + start..i * c + start + len].iter().copied())
                    .collect(),
            )
        };
        Ok(self.push(Array::new(shape, data)?, &[src], Op::Slice { src, axis, start }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims2("transpose", self.value(a))?;
        let v = self.value(a).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        Ok(self.push(Array::new(vec![c, r], out)?, &[a], Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let data = self.value(a).data().to_vec();
        let out = Array::new(shape.to_vec(), data)
            .map_err(|_| Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(a))))?;
        Ok(self.push(out, &[a], Op::Reshape(a)))
    }

    /// Rows of `table (V, E)` selected by `ids`, giving `(ids.len(), E)`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, e) = dims2("embedding", self.value(table))?;
        if ids.is_empty() {
            return Err(Error::shape("embedding", "empty id sequence"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape("embedding", format!("id {bad} outside table of {v} rows")));
        }
        let tv = self.value(table).data();
        let data = ids
            .iter()
            .flat_map(|&i| tv[i * e..(i + 1) * e].iter().copied())
            .collect();
        Ok(self.push(
            Array::new(vec![ids.len(), e], data)?,
            &[table],
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Stride-1, same-padded convolution over time.
    ///
    /// `input (T, C_in)`, `weight (C_out, C_in, K)` with odd `K`, optional `bias (C_out)`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (t_len, c_in) = dims2("conv1d", self.value(input))?;
        let (c_out, wc, k) = match self.shape(weight) {
            [o, c, k] => (*o, *c, *k),
            s => return Err(Error::shape("conv1d", format!("weight shape {s:?}, expected 3-D"))),
        };
        if wc != c_in || k % 2 == 0 {
            return Err(Error::shape(
                "conv1d",
                format!("input channels {c_in}, weight ({c_out}, {wc}, {k}); kernel must be odd"),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).numel() != c_out {
                return Err(Error::shape(
                    "conv1d",
                    format!("bias of {} for {c_out} outputs", self.value(b).numel()),
                ));
            }
        }
        let pad = k / 2;
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let mut out = vec![T::zero(); t_len * c_out];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_exact_mut(c_out) {
                row.copy_from_slice(bv);
            }
        }
        for t in 0..t_len {
            for kk in 0..k {
                let src = t as isize + kk as isize - pad as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let xr = &x[src as usize * c_in..(src as usize + 1) * c_in];
                for o in 0..c_out {
                    let mut acc = T::zero();
                    for (c, &xv) in xr.iter().enumerate() {
                        acc += w[(o * c_in + c) * k + kk] * xv;
                    }
                    out[t * c_out + o] += acc;
                }
            }
        }
        let mut parents = vec![input, weight];
        parents.extend(bias);
        Ok(self.push(
            Array::new(vec![t_len, c_out], out)?,
            &parents,
            Op::Conv1d { input, weight, bias },
        ))
    }

    fn check_bn(&self, input: Var, gamma: Var, beta: Var) -> Result<(usize, usize)> {
        let (t, c) = dims2("batchnorm", self.value(input))?;
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::shape(
                "batchnorm",
                format!(
                    "{c} channels, affine params of {} / {}",
                    self.value(gamma).numel(),
                    self.value(beta).numel()
                ),
            ));
        }
        if t == 0 {
            return Err(Error::shape("batchnorm", "empty input"));
        }
        Ok((t, c))
    }

    fn bn_apply(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
        train: bool,
    ) -> Result<Var> {
        let (t, c) = dims2("batchnorm", self.value(input))?;
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let x = self.value(input).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); t * c];
        let mut out = vec![T::zero(); t * c];
        for i in 0..t {
            for j in 0..c {
                let h = (x[i * c + j] - mean[j]) * inv_std[j];
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        Ok(self.push(
            Array::new(vec![t, c], out)?,
            &[input, gamma, beta],
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        ))
    }

    /// Batch norm over the rows of `input (T, C)` using the batch's own statistics.
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let (t, c) = self.check_bn(input, gamma, beta)?;
        let x = self.value(input).data();
        let n = T::of(t as f64);
        let mut mean = vec![T::zero(); c];
        for row in x.chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![T::zero(); c];
        for row in x.chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let unbiased: Vec<T> = var.iter().map(|&s| s / T::of((t.max(2) - 1) as f64)).collect();
        var.iter_mut().for_each(|s| *s /= n);
        let out = self.bn_apply(input, gamma, beta, &mean, &var, eps, true)?;
        Ok((out, BatchStats { mean, var: unbiased }))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_eval(&mut self, input: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let (_, c) = self.check_bn(input, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("batchnorm", "running statistics do not match channels"));
        }
        self.bn_apply(input, gamma, beta, mean, var, eps, false)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(a);
        let out = Array::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect()).unwrap();
        self.push(out, &[a], op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    /// Softmax along the last axis of a 2-D array.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = dims2("softmax", self.value(a))?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_exact_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(self.push(Array::new(vec![r, c], out)?, &[a], Op::Softmax(a)))
    }

    /// Inverted dropout with a mask drawn from `rng`; `p = 0` is the identity.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::shape("dropout", format!("probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).numel())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let v = self.value(a);
        let out = Array::new(
            v.shape().to_vec(),
            v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect(),
        )?;
        Ok(self.push(out, &[a], Op::Dropout { input: a, mask }))
    }

    /// Fused LSTM cell, gate order `i, f, g, o`.
    ///
    /// `x (B, I)`, `h, c (B, H)`, `weight (I + H, 4H)`, `bias (4H)`.
    /// Returns `(B, 2H)` holding `[h', c']`; take them apart with [`Tape::slice`].
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, weight: Var, bias: Var) -> Result<Var> {
        let (b, i_dim) = dims2("lstm-cell", self.value(x))?;
        let (bh, h_dim) = dims2("lstm-cell", self.value(h))?;
        let (wr, wc) = dims2("lstm-cell", self.value(weight))?;
        if bh != b
            || self.shape(c) != self.shape(h)
            || wr != i_dim + h_dim
            || wc != 4 * h_dim
            || self.value(bias).numel() != 4 * h_dim
        {
            return Err(Error::shape(
                "lstm-cell",
                format!(
                    "x {:?}, h {:?}, c {:?}, weight {:?}, bias {:?}",
                    self.shape(x),
                    self.shape(h),
                    self.shape(c),
                    self.shape(weight),
                    self.shape(bias)
                ),
            ));
        }
        let (xv, hv, cv) = (self.value(x).data(), self.value(h).data(), self.value(c).data());
        let (w, bv) = (self.value(weight).data(), self.value(bias).data());
        let g4 = 4 * h_dim;
        let mut gates = vec![T::zero(); b * g4];
        for r in 0..b {
            let z = &mut gates[r * g4..(r + 1) * g4];
            z.copy_from_slice(bv);
            let inputs = xv[r * i_dim..(r + 1) * i_dim]
                .iter()
                .chain(&hv[r * h_dim..(r + 1) * h_dim]);
            for (row, &s) in inputs.enumerate() {
                if s == T::zero() {
                    continue;
                }
                for (zz, &ww) in z.iter_mut().zip(&w[row * g4..(row + 1) * g4]) {
                    *zz += s * ww;
                }
            }
            for (j, zz) in z.iter_mut().enumerate() {
                *zz = if (2 * h_dim..3 * h_dim).contains(&j) {
                    zz.tanh()
                } else {
                    sigmoid(*zz)
                };
            }
        }
        let mut out = vec![T::zero(); b * 2 * h_dim];
        let mut tanh_c = vec![T::zero(); b * h_dim];
        for r in 0..b {
            let z = &gates[r * g4..(r + 1) * g4];
            for j in 0..h_dim {
                let (ig, fg, gg, og) = (z[j], z[h_dim + j], z[2 * h_dim + j], z[3 * h_dim + j]);
                let c_new = fg * cv[r * h_dim + j] + ig * gg;
                let tc = c_new.tanh();
                tanh_c[r * h_dim + j] = tc;
                out[r * 2 * h_dim + j] = og * tc;
                out[r * 2 * h_dim + h_dim + j] = c_new;
            }
        }
        Ok(self.push(
            Array::new(vec![b, 2 * h_dim], out)?,
            &[x, h, c, weight, bias],
            Op::LstmCell {
                x,
                h,
                c,
                weight,
                bias,
                gates,
                tanh_c,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Array::scalar(s), &[a], Op::Sum(a))
    }

    fn check_target(&self, kind: &'static str, pred: Var, target: &[T], mask: &[T]) -> Result<()> {
        let n = self.value(pred).numel();
        if target.len() != n || mask.len() != n {
            return Err(Error::shape(
                kind,
                format!("prediction of {n} values, target {}, mask {}", target.len(), mask.len()),
            ));
        }
        Ok(())
    }

    /// `Σ mask · huber(pred − target)` with the smooth-L1 parameterisation.
    pub fn smooth_l1_sum(&mut self, pred: Var, target: &[T], mask: &[T], beta: T) -> Result<Var> {
        self.check_target("smooth_l1", pred, target, mask)?;
        let half = T::of(0.5);
        let s = self
            .value(pred)
            .data()
            .iter()
            .zip(target)
            .zip(mask)
            .map(|((&p, &t), &m)| {
                let d = (p - t).abs();
                m * if d < beta { half * d * d / beta } else { d - half * beta }
            })
            .sum();
        Ok(self.push(
            Array::scalar(s),
            &[pred],
            Op::SmoothL1 {
                pred,
                target: target.to_vec(),
                mask: mask.to_vec(),
                beta,
            },
        ))
    }

    /// `Σ mask · (pred − target)²`.
    pub fn squared_error_sum(&mut self, pred: Var, target: &[T], mask: &[T]) -> Result<Var> {
        self.check_target("squared_error", pred, target, mask)?;
        let s = self
            .value(pred)
            .data()
            .iter()
            .zip(target)
            .zip(mask)
            .map(|((&p, &t), &m)| m * (p - t) * (p - t))
            .sum();
        Ok(self.push(
            Array::scalar(s),
            &[pred],
            Op::SquaredError {
                pred,
                target: target.to_vec(),
                mask: mask.to_vec(),
            },
        ))
    }

    /// `Σ mask · BCE(sigmoid(logits), target)`, computed stably from logits.
    pub fn bce_logits_sum(&mut self, logits: Var, target: &[T], mask: &[T]) -> Result<Var> {
        self.check_target("bce", logits, target, mask)?;
        let s = self
            .value(logits)
            .data()
            .iter()
            .zip(target)
            .zip(mask)
            .map(|((&x, &y), &m)| m * (x.max(T::zero()) - x * y + (T::one() + (-x.abs()).exp()).ln()))
            .sum();
        Ok(self.push(
            Array::scalar(s),
            &[logits],
            Op::BceLogits {
                logits,
                target: target.to_vec(),
                mask: mask.to_vec(),
            },
        ))
    }

    /// Reverse pass from a scalar. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if nodes[v.0].requires_grad {
                let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()]);
                f(slot);
            }
        };
        let out = nodes[id].value.data();
        match &nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = nodes[a.0].value.dims2().unwrap();
                let m = nodes[b.0].value.dims2().unwrap().1;
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |da| {
                    for i in 0..n {
                        for kk in 0..k {
                            let brow = &bv[kk * m..(kk + 1) * m];
                            let grow = &g[i * m..(i + 1) * m];
                            da[i * k + kk] += grow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<T>();
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for kk in 0..k {
                            let s = av[i * k + kk];
                            if s == T::zero() {
                                continue;
                            }
                            for (d, &gg) in db[kk * m..(kk + 1) * m].iter_mut().zip(grow) {
                                *d += s * gg;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |d| d.iter_mut().zip(g).for_each(|(d, &gg)| *d += gg));
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(d, &gg)| *d += gg));
                let m = nodes[b.0].value.numel();
                acc(*b, &mut |d| {
                    for row in g.chunks_exact(m) {
                        d.iter_mut().zip(row).for_each(|(d, &gg)| *d += gg);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |d| {
                    for ((d, &gg), &y) in d.iter_mut().zip(g).zip(bv) {
                        *d += gg * y;
                    }
                });
                acc(*b, &mut |d| {
                    for ((d, &gg), &x) in d.iter_mut().zip(g).zip(av) {
                        *d += gg * x;
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, &gg)| *d += gg * *s)),
            Op::Concat { parts, axis } => {
                let total_c = nodes[id].value.dims2().unwrap().1;
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = nodes[p.0].value.dims2().unwrap();
                    if *axis == 0 {
                        acc(p, &mut |d| {
                            d.iter_mut()
                                .zip(&g[offset * c..(offset + r) * c])
                                .for_each(|(d, &gg)| *d += gg)
                        });
                        offset += r;
                    } else {
                        acc(p, &mut |d| {
                            for i in 0..r {
                                let src = &g[i * total_c + offset..i * total_c + offset + c];
                                d[i * c..(i + 1) * c].iter_mut().zip(src).for_each(|(d, &gg)| *d += gg);
                            }
                        });
                        offset += c;
                    }
                }
            }
            Op::Slice { src, axis, start } => {
                let (_, c) = nodes[src.0].value.dims2().unwrap();
                let (or, oc) = nodes[id].value.dims2().unwrap();
                acc(*src, &mut |d| {
                    if *axis == 0 {
                        d[start * c..(start + or) * c]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(d, &gg)| *d += gg);
                    } else {
                        for i in 0..or {
                            d[i * c + start..i * c + start + oc]
                                .iter_mut()
                                .zip(&g[i * oc..(i + 1) * oc])
                                .for_each(|(d, &gg)| *d += gg);
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = nodes[a.0].value.dims2().unwrap();
                acc(*a, &mut |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(d, &gg)| *d += gg)),
            Op::Embedding { table, ids } => {
                let e = nodes[table.0].value.dims2().unwrap().1;
                acc(*table, &mut |d| {
                    for (r, &i) in ids.iter().enumerate() {
                        d[i * e..(i + 1) * e]
                            .iter_mut()
                            .zip(&g[r * e..(r + 1) * e])
                            .for_each(|(d, &gg)| *d += gg);
                    }
                });
            }
            Op::Conv1d { input, weight, bias } => {
                let (t_len, c_in) = nodes[input.0].value.dims2().unwrap();
                let (c_out, k) = (nodes[weight.0].value.shape()[0], nodes[weight.0].value.shape()[2]);
                let pad = k / 2;
                let (x, w) = (val(*input), val(*weight));
                let src_of = |t: usize, kk: usize| -> Option<usize> {
                    let s = t as isize + kk as isize - pad as isize;
                    (s >= 0 && s < t_len as isize).then_some(s as usize)
                };
                acc(*input, &mut |dx| {
                    for t in 0..t_len {
                        for kk in 0..k {
                            let Some(s) = src_of(t, kk) else { continue };
                            for o in 0..c_out {
                                let go = g[t * c_out + o];
                                for c in 0..c_in {
                                    dx[s * c_in + c] += w[(o * c_in + c) * k + kk] * go;
                                }
                            }
                        }
                    }
                });
                acc(*weight, &mut |dw| {
                    for t in 0..t_len {
                        for kk in 0..k {
                            let Some(s) = src_of(t, kk) else { continue };
                            for o in 0..c_out {
                                let go = g[t * c_out + o];
                                for c in 0..c_in {
                                    dw[(o * c_in + c) * k + kk] += x[s * c_in + c] * go;
                                }
                            }
                        }
                    }
                });
                if let Some(b) = bias {
                    acc(*b, &mut |db| {
                        for row in g.chunks_exact(c_out) {
                            db.iter_mut().zip(row).for_each(|(d, &gg)| *d += gg);
                        }
                    });
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (t, c) = nodes[input.0].value.dims2().unwrap();
                let gm = val(*gamma);
                acc(*beta, &mut |db| {
                    for row in g.chunks_exact(c) {
                        db.iter_mut().zip(row).for_each(|(d, &gg)| *d += gg);
                    }
                });
                acc(*gamma, &mut |dg| {
                    for (row, hrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for j in 0..c {
                            dg[j] += row[j] * hrow[j];
                        }
                    }
                });
                acc(*input, &mut |dx| {
                    if *train {
                        let n = T::of(t as f64);
                        let mut sum_dh = vec![T::zero(); c];
                        let mut sum_dh_h = vec![T::zero(); c];
                        for i in 0..t {
                            for j in 0..c {
                                let dh = g[i * c + j] * gm[j];
                                sum_dh[j] += dh;
                                sum_dh_h[j] += dh * xhat[i * c + j];
                            }
                        }
                        for i in 0..t {
                            for j in 0..c {
                                let dh = g[i * c + j] * gm[j];
                                dx[i * c + j] += inv_std[j] / n * (n * dh - sum_dh[j] - xhat[i * c + j] * sum_dh_h[j]);
                            }
                        }
                    } else {
                        for i in 0..t {
                            for j in 0..c {
                                dx[i * c + j] += g[i * c + j] * gm[j] * inv_std[j];
                            }
                        }
                    }
                });
            }
            Op::Tanh(a) => acc(*a, &mut |d| {
                for ((d, &gg), &y) in d.iter_mut().zip(g).zip(out) {
                    *d += gg * (T::one() - y * y);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |d| {
                for ((d, &gg), &y) in d.iter_mut().zip(g).zip(out) {
                    *d += gg * y * (T::one() - y);
                }
            }),
            Op::Relu(a) => acc(*a, &mut |d| {
                for ((d, &gg), &y) in d.iter_mut().zip(g).zip(out) {
                    if y > T::zero() {
                        *d += gg;
                    }
                }
            }),
            Op::Softmax(a) => {
                let c = nodes[id].value.dims2().unwrap().1;
                acc(*a, &mut |d| {
                    for ((drow, grow), yrow) in d.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(out.chunks_exact(c)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&gg, &y)| gg * y).sum();
                        for ((d, &gg), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gg - dot);
                        }
                    }
                });
            }
            Op::Dropout { input, mask } => acc(*input, &mut |d| {
                for ((d, &gg), &m) in d.iter_mut().zip(g).zip(mask) {
                    *d += gg * m;
                }
            }),
            Op::LstmCell {
                x,
                h,
                c,
                weight,
                bias,
                gates,
                tanh_c,
            } => {
                let (b, i_dim) = nodes[x.0].value.dims2().unwrap();
                let h_dim = nodes[h.0].value.dims2().unwrap().1;
                let g4 = 4 * h_dim;
                let (xv, hv, cv, w) = (val(*x), val(*h), val(*c), val(*weight));
                let mut dz = vec![T::zero(); b * g4];
                let mut dc_prev = vec![T::zero(); b * h_dim];
                for r in 0..b {
                    let z = &gates[r * g4..(r + 1) * g4];
                    for j in 0..h_dim {
                        let (ig, fg, gg, og) = (z[j], z[h_dim + j], z[2 * h_dim + j], z[3 * h_dim + j]);
                        let tc = tanh_c[r * h_dim + j];
                        let dh = g[r * 2 * h_dim + j];
                        let dc = g[r * 2 * h_dim + h_dim + j] + dh * og * (T::one() - tc * tc);
                        let dzr = &mut dz[r * g4..(r + 1) * g4];
                        dzr[j] = dc * gg * ig * (T::one() - ig);
                        dzr[h_dim + j] = dc * cv[r * h_dim + j] * fg * (T::one() - fg);
                        dzr[2 * h_dim + j] = dc * ig * (T::one() - gg * gg);
                        dzr[3 * h_dim + j] = dh * tc * og * (T::one() - og);
                        dc_prev[r * h_dim + j] = dc * fg;
                    }
                }
                acc(*bias, &mut |db| {
                    for row in dz.chunks_exact(g4) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                });
                acc(*weight, &mut |dw| {
                    for r in 0..b {
                        let inputs = xv[r * i_dim..(r + 1) * i_dim]
                            .iter()
                            .chain(&hv[r * h_dim..(r + 1) * h_dim]);
                        let dzr = &dz[r * g4..(r + 1) * g4];
                        for (row, &s) in inputs.enumerate() {
                            if s == T::zero() {
                                continue;
                            }
                            for (d, &v) in dw[row * g4..(row + 1) * g4].iter_mut().zip(dzr) {
                                *d += s * v;
                            }
                        }
                    }
                });
                let input_grad = |r: usize, row: usize| -> T {
                    w[row * g4..(row + 1) * g4]
                        .iter()
                        .zip(&dz[r * g4..(r + 1) * g4])
                        .map(|(&a, &v)| a * v)
                        .sum()
                };
                acc(*x, &mut |dx| {
                    for r in 0..b {
                        for i in 0..i_dim {
                            dx[r * i_dim + i] += input_grad(r, i);
                        }
                    }
                });
                acc(*h, &mut |dh| {
                    for r in 0..b {
                        for j in 0..h_dim {
                            dh[r * h_dim + j] += input_grad(r, i_dim + j);
                        }
                    }
                });
                acc(*c, &mut |d| d.iter_mut().zip(&dc_prev).for_each(|(d, &v)| *d += v));
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::SmoothL1 {
                pred,
                target,
                mask,
                beta,
            } => {
                let pv = val(*pred);
                acc(*pred, &mut |d| {
                    for (((d, &p), &t), &m) in d.iter_mut().zip(pv).zip(target).zip(mask) {
                        let diff = p - t;
                        let slope = if diff.abs() < *beta {
                            diff / *beta
                        } else {
                            diff.signum()
                        };
                        *d += g[0] * m * slope;
                    }
                });
            }
            Op::SquaredError { pred, target, mask } => {
                let pv = val(*pred);
                acc(*pred, &mut |d| {
                    for (((d, &p), &t), &m) in d.iter_mut().zip(pv).zip(target).zip(mask) {
                        *d += g[0] * m * T::of(2.0) * (p - t);
                    }
                });
            }
            Op::BceLogits { logits, target, mask } => {
                let lv = val(*logits);
                acc(*logits, &mut |d| {
                    for (((d, &x), &y), &m) in d.iter_mut().zip(lv).zip(target).zip(mask) {
                        *d += g[0] * m * (sigmoid(x) - y);
                    }
                });
            }
        }
    }
}

/// Result of [`Tape::backward`]: one optional gradient per tape node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<Array<T>> {
        self.grads
            .get(v.0)?
            .as_ref()
            .map(|g| Array::new(self.shapes[v.0].clone(), g.clone()).unwrap())
    }

    pub(crate) fn take(&mut self, v: Var) -> Option<Array<T>> {
        let g = self.grads.get_mut(v.0)?.take()?;
        Some(Array::new(self.shapes[v.0].clone(), g).unwrap())
    }
}
