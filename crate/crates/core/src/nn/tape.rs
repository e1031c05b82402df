//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value; nodes are
//! created in topological order, so the reverse pass simply walks the node
//! list backwards.

use std::collections::HashMap;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::params::{ParamId, ParameterStore};
use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use crate::dsp::stft::{hann_periodic, reflect, stft_samples};
pub use crate::dsp::stft::StftSpec;
use crate::error::{ensure, Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}


enum Op {
    Constant,
    Param { store: u64, id: ParamId },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Sqrt(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sum(Var),
    RowSum(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    RepeatRows(Var, usize),
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        dilation: usize,
        pad_left: usize,
    },
    LogSoftmax(Var),
    GruUpdate { gi: Var, gh: Var, h: Var },
    StftMag {
        input: Var,
        spec: StftSpec,
        spectra: Vec<Complex<f64>>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Record of primitive operations for one forward/backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    param_cache: HashMap<(u64, ParamId), Var>,
    fft: FftPlanner<f64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape()))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) const STFT_POWER_FLOOR: f64 = 1e-14;

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_cache: HashMap::new(),
            fft: FftPlanner::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(
            value.is_finite() || matches!(op, Op::Constant | Op::Param { .. }),
            "non-finite forward value"
        );
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Loads a parameter onto the tape; repeated loads return the same node.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        let key = (store.store_id(), id);
        if let Some(&v) = self.param_cache.get(&key) {
            return v;
        }
        let v = self.push(
            store.value(id).clone(),
            Op::Param {
                store: store.store_id(),
                id,
            },
        );
        self.param_cache.insert(key, v);
        v
    }

    fn binary_same(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        ensure!(ta.len() == tb.len() && ta.rows() == tb.rows(), shape_err(op, ta, tb));
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    fn row_broadcast(&self, op: &str, a: Var, r: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tr) = (self.value(a), self.value(r));
        let cols = ta.cols();
        ensure!(tr.len() == cols, shape_err(op, ta, tr));
        let mut out = ta.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, &b) in row.iter_mut().zip(tr.data()) {
                *o = f(*o, b);
            }
        }
        Ok(out)
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.row_broadcast("add_row", a, row, |x, y| x + y)?;
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.row_broadcast("mul_row", a, row, |x, y| x * y)?;
        Ok(self.push(v, Op::MulRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    /// `a [m x k] * b [k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        ensure!(k == k2, shape_err("matmul", ta, tb));
        let mut out = vec![0.0; m * n];
        matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let v = Tensor::matrix(m, n, out)?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        ensure!(
            self.value(a).data().iter().all(|&x| x > 0.0),
            Error::InvalidArgument("log of non-positive value".into())
        );
        let v = self.value(a).map(f64::ln);
        Ok(self.push(v, Op::Log(a)))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        ensure!(
            self.value(a).data().iter().all(|&x| x >= 0.0),
            Error::InvalidArgument("sqrt of negative value".into())
        );
        let v = self.value(a).map(f64::sqrt);
        Ok(self.push(v, Op::Sqrt(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x >= 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sums each row, giving an `m x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let cols = ta.cols();
        let data: Vec<f64> = ta.data().chunks(cols).map(|r| r.iter().sum()).collect();
        let v = Tensor::matrix(ta.rows(), 1, data).expect("column");
        self.push(v, Op::RowSum(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), Error::InvalidArgument("concat of nothing".into()));
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            ensure!(t.rows() == rows, shape_err("concat_cols", self.value(parts[0]), t));
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let v = Tensor::matrix(rows, total, data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        ensure!(
            start < end && end <= ta.cols(),
            Error::Shape(format!("slice_cols {start}..{end} of {:?}", ta.shape()))
        );
        let mut data = Vec::with_capacity(ta.rows() * (end - start));
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row_slice(r)[start..end]);
        }
        let v = Tensor::matrix(ta.rows(), end - start, data)?;
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), Error::InvalidArgument("concat of nothing".into()));
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            ensure!(t.cols() == cols, shape_err("concat_rows", self.value(parts[0]), t));
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let v = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        ensure!(
            start < end && end <= ta.rows(),
            Error::Shape(format!("slice_rows {start}..{end} of {:?}", ta.shape()))
        );
        let c = ta.cols();
        let v = Tensor::matrix(end - start, c, ta.data()[start * c..end * c].to_vec())?;
        Ok(self.push(v, Op::SliceRows(a, start)))
    }

    /// Nearest-neighbour upsampling: each row repeated `factor` times.
    pub fn repeat_rows(&mut self, a: Var, factor: usize) -> Result<Var> {
        ensure!(factor >= 1, Error::InvalidArgument("repeat factor must be >= 1".into()));
        let ta = self.value(a);
        let c = ta.cols();
        let mut data = Vec::with_capacity(ta.len() * factor);
        for r in 0..ta.rows() {
            for _ in 0..factor {
                data.extend_from_slice(ta.row_slice(r));
            }
        }
        let v = Tensor::matrix(ta.rows() * factor, c, data)?;
        Ok(self.push(v, Op::RepeatRows(a, factor)))
    }

    /// Dilated 1-D cross-correlation over rows (time) of `input [T x C_in]`
    /// with `kernel [K x C_in x C_out]`. Output keeps `T` rows: padding is
    /// symmetric for non-causal and left-only for causal convolutions.
    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        dilation: usize,
        causal: bool,
    ) -> Result<Var> {
        ensure!(dilation >= 1, Error::InvalidArgument("dilation must be >= 1".into()));
        let (ti, tk) = (self.value(input), self.value(kernel));
        ensure!(tk.shape().len() == 3, Error::Shape(format!("kernel shape {:?}", tk.shape())));
        let (k, cin, cout) = (tk.shape()[0], tk.shape()[1], tk.shape()[2]);
        ensure!(k >= 1, Error::InvalidArgument("kernel width must be >= 1".into()));
        ensure!(
            ti.cols() == cin,
            Error::Shape(format!("conv1d expects {cin} input channels, got {}", ti.cols()))
        );
        if let Some(b) = bias {
            ensure!(
                self.value(b).len() == cout,
                Error::Shape(format!("conv1d bias length {} != {cout}", self.value(b).len()))
            );
        }
        let span = dilation * (k - 1);
        let pad_left = if causal { span } else { span / 2 };
        let t = ti.rows();
        let mut out = vec![0.0; t * cout];
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in out.chunks_mut(cout) {
                row.copy_from_slice(bd);
            }
        }
        for kk in 0..k {
            let off = (kk * dilation) as isize - pad_left as isize;
            let (t0, t1) = valid_range(off, t);
            if t0 >= t1 {
                continue;
            }
            let src0 = (t0 as isize + off) as usize;
            let w = &tk.data()[kk * cin * cout..(kk + 1) * cin * cout];
            matmul_acc(
                &ti.data()[src0 * cin..(src0 + t1 - t0) * cin],
                w,
                &mut out[t0 * cout..t1 * cout],
                t1 - t0,
                cin,
                cout,
            );
        }
        let v = Tensor::matrix(t, cout, out)?;
        Ok(self.push(
            v,
            Op::Conv1d {
                input,
                kernel,
                bias,
                dilation,
                pad_left,
            },
        ))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let c = ta.cols();
        let mut out = ta.clone();
        for row in out.data_mut().chunks_mut(c) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// Gated recurrent update from pre-activations.
    ///
    /// `gi` and `gh` are `m x 3H` input and hidden projections (gate order
    /// reset, update, candidate, biases included); `h` is `m x H`.
    /// Returns `(1 - z) * n + z * h`.
    pub fn gru_update(&mut self, gi: Var, gh: Var, h: Var) -> Result<Var> {
        let (tgi, tgh, th) = (self.value(gi), self.value(gh), self.value(h));
        let hs = th.cols();
        ensure!(
            tgi.cols() == 3 * hs && tgh.cols() == 3 * hs,
            Error::Shape(format!(
                "gru gates {:?}/{:?} vs hidden {:?}",
                tgi.shape(),
                tgh.shape(),
                th.shape()
            ))
        );
        ensure!(
            tgi.rows() == th.rows() && tgh.rows() == th.rows(),
            shape_err("gru_update", tgi, th)
        );
        let mut out = vec![0.0; th.len()];
        for r in 0..th.rows() {
            let (a, b, hp) = (tgi.row_slice(r), tgh.row_slice(r), th.row_slice(r));
            for j in 0..hs {
                let rg = sigmoid(a[j] + b[j]);
                let zg = sigmoid(a[hs + j] + b[hs + j]);
                let n = (a[2 * hs + j] + rg * b[2 * hs + j]).tanh();
                out[r * hs + j] = (1.0 - zg) * n + zg * hp[j];
            }
        }
        let v = Tensor::new(th.shape().to_vec(), out)?;
        Ok(self.push(v, Op::GruUpdate { gi, gh, h }))
    }

    /// Magnitude STFT of a `T x 1` signal: Hann window of `win_length`
    /// centered in `fft_size`, centered frames with reflection padding,
    /// `ceil(T / hop)` frames. Power is floored at 1e-14 before the square root.
    pub fn stft_mag(&mut self, input: Var, spec: StftSpec) -> Result<Var> {
        let x = self.value(input).data().to_vec();
        let (mags, spectra) = stft_forward(&mut self.fft, &x, spec)?;
        Ok(self.push(mags, Op::StftMag { input, spec, spectra }))
    }

    /// Reverse pass from a scalar `loss`; gradients of parameters that belong
    /// to `store` are accumulated into its gradient slots.
    pub fn backward(&mut self, loss: Var, store: &mut ParameterStore) -> Result<f64> {
        let grads = self.gradients(loss)?;
        let sid = store.store_id();
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param { store: s, id }, Some(g)) = (&node.op, g) {
                if *s == sid {
                    store.entry_mut(*id).grad.add_assign(&g);
                }
            }
        }
        Ok(self.scalar_value(loss))
    }

    /// Full reverse pass returning the gradient of `loss` w.r.t. every node
    /// (`None` for nodes the loss does not depend on).
    pub fn gradients(&mut self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        ensure!(
            self.value(loss).len() == 1,
            Error::Shape(format!("loss must be scalar, got {:?}", self.value(loss).shape()))
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let val = |v: Var| &nodes[v.0].value;
        let gd = g.data();
        match &node.op {
            Op::Constant | Op::Param { .. } => {}
            Op::Add(a, b) => {
                acc(grads, nodes, *a, |d| add_into(d, gd));
                acc(grads, nodes, *b, |d| add_into(d, gd));
            }
            Op::Sub(a, b) => {
                acc(grads, nodes, *a, |d| add_into(d, gd));
                acc(grads, nodes, *b, |d| d.iter_mut().zip(gd).for_each(|(o, g)| *o -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(grads, nodes, *a, |d| {
                    for ((o, g), y) in d.iter_mut().zip(gd).zip(vb) {
                        *o += g * y;
                    }
                });
                acc(grads, nodes, *b, |d| {
                    for ((o, g), x) in d.iter_mut().zip(gd).zip(va) {
                        *o += g * x;
                    }
                });
            }
            Op::AddRow(a, r) => {
                acc(grads, nodes, *a, |d| add_into(d, gd));
                let c = val(*r).len();
                acc(grads, nodes, *r, |d| {
                    for row in gd.chunks(c) {
                        add_into(d, row);
                    }
                });
            }
            Op::MulRow(a, r) => {
                let (va, vr) = (val(*a).data(), val(*r).data());
                let c = vr.len();
                acc(grads, nodes, *a, |d| {
                    for (drow, grow) in d.chunks_mut(c).zip(gd.chunks(c)) {
                        for ((o, g), y) in drow.iter_mut().zip(grow).zip(vr) {
                            *o += g * y;
                        }
                    }
                });
                acc(grads, nodes, *r, |d| {
                    for (grow, arow) in gd.chunks(c).zip(va.chunks(c)) {
                        for ((o, g), x) in d.iter_mut().zip(grow).zip(arow) {
                            *o += g * x;
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(grads, nodes, *a, |d| d.iter_mut().zip(gd).for_each(|(o, g)| *o += g * c));
            }
            Op::AddScalar(a) => acc(grads, nodes, *a, |d| add_into(d, gd)),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                acc(grads, nodes, *a, |d| matmul_bt_acc(gd, tb.data(), d, m, k, n));
                acc(grads, nodes, *b, |d| matmul_at_acc(ta.data(), gd, d, m, k, n));
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(grads, nodes, *a, |d| {
                    for ((o, g), y) in d.iter_mut().zip(gd).zip(y) {
                        *o += g * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(grads, nodes, *a, |d| {
                    for ((o, g), y) in d.iter_mut().zip(gd).zip(y) {
                        *o += g * (1.0 - y * y);
                    }
                });
            }
            Op::Exp(a) => {
                let y = node.value.data();
                acc(grads, nodes, *a, |d| {
                    for ((o, g), y) in d.iter_mut().zip(gd).zip(y) {
                        *o += g * y;
                    }
                });
            }
            Op::Log(a) => {
                let x = val(*a).data();
                acc(grads, nodes, *a, |d| {
                    for ((o, g), x) in d.iter_mut().zip(gd).zip(x) {
                        *o += g / x;
                    }
                });
            }
            Op::Abs(a) => {
                let x = val(*a).data();
                acc(grads, nodes, *a, |d| {
                    for ((o, g), x) in d.iter_mut().zip(gd).zip(x) {
                        *o += g * sign(*x);
                    }
                });
            }
            Op::Square(a) => {
                let x = val(*a).data();
                acc(grads, nodes, *a, |d| {
                    for ((o, g), x) in d.iter_mut().zip(gd).zip(x) {
                        *o += 2.0 * g * x;
                    }
                });
            }
            Op::Sqrt(a) => {
                let y = node.value.data();
                acc(grads, nodes, *a, |d| {
                    for ((o, g), y) in d.iter_mut().zip(gd).zip(y) {
                        if *y > 0.0 {
                            *o += g * 0.5 / y;
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                acc(grads, nodes, *a, |d| {
                    for ((o, g), x) in d.iter_mut().zip(gd).zip(x) {
                        if *x > 0.0 {
                            *o += g;
                        }
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let x = val(*a).data();
                acc(grads, nodes, *a, |d| {
                    for ((o, g), x) in d.iter_mut().zip(gd).zip(x) {
                        *o += if *x >= 0.0 { *g } else { g * slope };
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                acc(grads, nodes, *a, |d| d.iter_mut().for_each(|o| *o += g0));
            }
            Op::RowSum(a) => {
                let c = val(*a).cols();
                acc(grads, nodes, *a, |d| {
                    for (row, g) in d.chunks_mut(c).zip(gd) {
                        row.iter_mut().for_each(|o| *o += g);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let c = val(p).cols();
                    acc(grads, nodes, p, |d| {
                        for (drow, grow) in d.chunks_mut(c).zip(gd.chunks(total)) {
                            add_into(drow, &grow[off..off + c]);
                        }
                    });
                    off += c;
                }
            }
            Op::SliceCols(a, start) => {
                let (c, w) = (val(*a).cols(), node.value.cols());
                acc(grads, nodes, *a, |d| {
                    for (drow, grow) in d.chunks_mut(c).zip(gd.chunks(w)) {
                        add_into(&mut drow[*start..*start + w], grow);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    acc(grads, nodes, p, |d| add_into(d, &gd[off..off + n]));
                    off += n;
                }
            }
            Op::SliceRows(a, start) => {
                let c = val(*a).cols();
                acc(grads, nodes, *a, |d| add_into(&mut d[start * c..start * c + gd.len()], gd));
            }
            Op::RepeatRows(a, factor) => {
                let c = val(*a).cols();
                acc(grads, nodes, *a, |d| {
                    for (r, grow) in gd.chunks(c).enumerate() {
                        add_into(&mut d[(r / factor) * c..(r / factor + 1) * c], grow);
                    }
                });
            }
            Op::Conv1d {
                input,
                kernel,
                bias,
                dilation,
                pad_left,
            } => {
                let (ti, tk) = (val(*input), val(*kernel));
                let (k, cin, cout) = (tk.shape()[0], tk.shape()[1], tk.shape()[2]);
                let t = ti.rows();
                if let Some(b) = bias {
                    acc(grads, nodes, *b, |d| {
                        for row in gd.chunks(cout) {
                            add_into(d, row);
                        }
                    });
                }
                acc(grads, nodes, *input, |d| {
                    for kk in 0..k {
                        let off = (kk * dilation) as isize - *pad_left as isize;
                        let (t0, t1) = valid_range(off, t);
                        if t0 >= t1 {
                            continue;
                        }
                        let src0 = (t0 as isize + off) as usize;
                        let w = &tk.data()[kk * cin * cout..(kk + 1) * cin * cout];
                        matmul_bt_acc(
                            &gd[t0 * cout..t1 * cout],
                            w,
                            &mut d[src0 * cin..(src0 + t1 - t0) * cin],
                            t1 - t0,
                            cin,
                            cout,
                        );
                    }
                });
                acc(grads, nodes, *kernel, |d| {
                    for kk in 0..k {
                        let off = (kk * dilation) as isize - *pad_left as isize;
                        let (t0, t1) = valid_range(off, t);
                        if t0 >= t1 {
                            continue;
                        }
                        let src0 = (t0 as isize + off) as usize;
                        matmul_at_acc(
                            &ti.data()[src0 * cin..(src0 + t1 - t0) * cin],
                            &gd[t0 * cout..t1 * cout],
                            &mut d[kk * cin * cout..(kk + 1) * cin * cout],
                            t1 - t0,
                            cin,
                            cout,
                        );
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                acc(grads, nodes, *a, |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(c).zip(gd.chunks(c)).zip(y.chunks(c)) {
                        let gs: f64 = grow.iter().sum();
                        for ((o, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *o += g - y.exp() * gs;
                        }
                    }
                });
            }
            Op::GruUpdate { gi, gh, h } => {
                let (tgi, tgh, th) = (val(*gi), val(*gh), val(*h));
                let hs = th.cols();
                let rows = th.rows();
                let mut dgi = vec![0.0; rows * 3 * hs];
                let mut dgh = vec![0.0; rows * 3 * hs];
                let mut dh = vec![0.0; rows * hs];
                for r in 0..rows {
                    let (a, b, hp) = (tgi.row_slice(r), tgh.row_slice(r), th.row_slice(r));
                    for j in 0..hs {
                        let rg = sigmoid(a[j] + b[j]);
                        let zg = sigmoid(a[hs + j] + b[hs + j]);
                        let n = (a[2 * hs + j] + rg * b[2 * hs + j]).tanh();
                        let go = gd[r * hs + j];
                        let dn = go * (1.0 - zg);
                        let dz = go * (hp[j] - n);
                        dh[r * hs + j] = go * zg;
                        let dn_pre = dn * (1.0 - n * n);
                        let dr = dn_pre * b[2 * hs + j];
                        let dz_pre = dz * zg * (1.0 - zg);
                        let dr_pre = dr * rg * (1.0 - rg);
                        let base = r * 3 * hs;
                        dgi[base + j] = dr_pre;
                        dgh[base + j] = dr_pre;
                        dgi[base + hs + j] = dz_pre;
                        dgh[base + hs + j] = dz_pre;
                        dgi[base + 2 * hs + j] = dn_pre;
                        dgh[base + 2 * hs + j] = dn_pre * rg;
                    }
                }
                acc(grads, nodes, *gi, |d| add_into(d, &dgi));
                acc(grads, nodes, *gh, |d| add_into(d, &dgh));
                acc(grads, nodes, *h, |d| add_into(d, &dh));
            }
            Op::StftMag { input, spec, spectra } => {
                let len = val(*input).len();
                let dx = stft_backward(&mut self.fft, len, *spec, spectra, &node.value, gd);
                acc(grads, &self.nodes, *input, |d| add_into(d, &dx));
            }
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, s) in dst.iter_mut().zip(src) {
        *o += s;
    }
}

/// Output rows `t` for which `t + off` is a valid input row.
fn valid_range(off: isize, t: usize) -> (usize, usize) {
    let t0 = (-off).max(0) as usize;
    let t1 = (t as isize - off).clamp(0, t as isize) as usize;
    (t0.min(t), t1)
}

fn acc(grads: &mut [Option<Tensor>], nodes: &[Node], v: Var, f: impl FnOnce(&mut [f64])) {
    if matches!(nodes[v.0].op, Op::Constant) {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()));
    f(slot.data_mut());
}

fn stft_forward(
    planner: &mut FftPlanner<f64>,
    x: &[f64],
    spec: StftSpec,
) -> Result<(Tensor, Vec<Complex<f64>>)> {
    let sg = stft_samples(planner, x, spec)?;
    let (frames, bins, spectra) = (sg.frames, sg.bins, sg.data);
    let mags = spectra
        .iter()
        .map(|c| c.norm_sqr().max(STFT_POWER_FLOOR).sqrt())
        .collect();
    Ok((Tensor::matrix(frames, bins, mags)?, spectra))
}

fn stft_backward(
    planner: &mut FftPlanner<f64>,
    len: usize,
    spec: StftSpec,
    spectra: &[Complex<f64>],
    mags: &Tensor,
    g: &[f64],
) -> Vec<f64> {
    let n = spec.fft_size;
    let bins = n / 2 + 1;
    let win = hann_periodic(spec.win_length);
    let woff = (n - spec.win_length) / 2;
    let half = (n / 2) as isize;
    let ifft = planner.plan_fft_inverse(n);
    let mut dx = vec![0.0; len];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for f in 0..mags.rows() {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for k in 0..bins {
            let x = spectra[f * bins + k];
            if x.norm_sqr() > STFT_POWER_FLOOR {
                buf[k] = x * (g[f * bins + k] / mags.data()[f * bins + k]);
            }
        }
        ifft.process(&mut buf);
        let start = (f * spec.hop) as isize - half;
        for (i, w) in win.iter().enumerate() {
            let j = start + (woff + i) as isize;
            dx[reflect(j, len)] += w * buf[woff + i].re;
        }
    }
    dx
}
