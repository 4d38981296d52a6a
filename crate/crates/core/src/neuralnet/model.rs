//! Forward evaluation and reverse-mode gradients for the five forecasters.
//!
//! Each layer keeps what its backward pass needs on a tape during the
//! forward pass; [`Model::loss_and_gradient`] then walks the tape in
//! reverse and accumulates into a flat gradient with the parameter layout.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, ArrayViewMut2, Axis, Zip};

use super::params::{Layout, ParameterVector};
use super::spec::{Architecture, ModelSpec, KERNEL};
use super::ModelError;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn view2<'a>(p: &'a [f64], span: &Range<usize>, rows: usize, cols: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((rows, cols), &p[span.clone()]).expect("span matches shape")
}

fn view2_mut<'a>(g: &'a mut [f64], span: &Range<usize>, rows: usize, cols: usize) -> ArrayViewMut2<'a, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut g[span.clone()]).expect("span matches shape")
}

fn add_column_sums(g: &mut [f64], span: &Range<usize>, d: &ArrayView2<f64>) {
    for (slot, col_sum) in g[span.clone()].iter_mut().zip(d.sum_axis(Axis(0))) {
        *slot += col_sum;
    }
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes gradient entries where the ReLU output was not positive.
fn relu_backward(d: &mut Array2<f64>, out: &Array2<f64>) {
    Zip::from(d).and(out).for_each(|d, &o| {
        if o <= 0.0 {
            *d = 0.0;
        }
    });
}

#[derive(Debug, Clone)]
struct Dense {
    w: Range<usize>,
    b: Range<usize>,
    n_in: usize,
    n_out: usize,
}

impl Dense {
    fn forward(&self, p: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
        let w = view2(p, &self.w, self.n_out, self.n_in);
        let mut y = x.dot(&w.t());
        y += &ndarray::ArrayView1::from(&p[self.b.clone()]);
        y
    }

    /// Accumulates weight gradients and returns the input gradient when asked.
    fn backward(&self, p: &[f64], g: &mut [f64], x: &ArrayView2<f64>, dy: &Array2<f64>, want_dx: bool) -> Option<Array2<f64>> {
        general_mat_mul(1.0, &dy.t(), x, 1.0, &mut view2_mut(g, &self.w, self.n_out, self.n_in));
        add_column_sums(g, &self.b, &dy.view());
        want_dx.then(|| dy.dot(&view2(p, &self.w, self.n_out, self.n_in)))
    }
}

#[derive(Debug, Clone)]
struct Recurrent {
    kind: Architecture,
    wx: Range<usize>,
    wh: Range<usize>,
    b: Range<usize>,
    units: usize,
}

#[derive(Debug, Clone)]
struct Conv {
    w: Range<usize>,
    b: Range<usize>,
    c_in: usize,
    c_out: usize,
}

#[derive(Debug, Clone)]
enum Body {
    Mlp(Vec<Dense>),
    Recurrent(Recurrent),
    Cnn(Vec<Conv>),
}

/// A compiled model: parameter spans resolved against the canonical layout.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    layout: Layout,
    body: Body,
    head: Option<Dense>,
    output: Dense,
}

enum BodyTape {
    /// Input of every dense layer, including the output layer.
    Mlp(Vec<Array2<f64>>),
    Recurrent(RecurrentTape),
    Cnn(CnnTape),
}

struct RecurrentTape {
    /// Activated gate values per step, shape (batch, steps, gates·units).
    gates: Array3<f64>,
    /// Hidden state entering each step, shape (batch, steps, units).
    h_prev: Array3<f64>,
    /// LSTM cell state entering each step, and tanh of the cell state
    /// leaving it. GRU stores the hidden-side candidate projection in
    /// `extra` instead.
    c_prev: Array3<f64>,
    extra: Array3<f64>,
}

struct CnnTape {
    /// im2col matrix of each convolution's input.
    cols: Vec<Array2<f64>>,
    /// Post-ReLU output of each convolution, (batch·positions) × channels.
    outs: Vec<Array2<f64>>,
}

struct Tape {
    body: BodyTape,
    features: Array2<f64>,
    head_out: Option<Array2<f64>>,
}

impl Model {
    pub fn new(spec: &ModelSpec) -> Result<Self, ModelError> {
        spec.validate()?;
        let layout = Layout::for_spec(spec);
        let span = |name: &str| layout.get(name).expect("canonical tensor").span();
        let dense = |name: &str, n_in: usize, n_out: usize| Dense {
            w: span(&format!("{name}.weight")),
            b: span(&format!("{name}.bias")),
            n_in,
            n_out,
        };
        let (body, head, last) = match spec.architecture {
            Architecture::Mlp => {
                let mut prev = spec.input_size();
                let layers = spec
                    .mlp_hidden
                    .iter()
                    .enumerate()
                    .map(|(k, &h)| {
                        let d = dense(&format!("dense{k}"), prev, h);
                        prev = h;
                        d
                    })
                    .collect();
                (Body::Mlp(layers), None, prev)
            }
            Architecture::Rnn | Architecture::Lstm | Architecture::Gru => {
                let tag = spec.architecture.tag();
                let rec = Recurrent {
                    kind: spec.architecture,
                    wx: span(&format!("{tag}.weight_input")),
                    wh: span(&format!("{tag}.weight_hidden")),
                    b: span(&format!("{tag}.bias")),
                    units: spec.recurrent_units,
                };
                let head = dense("head", spec.recurrent_units, spec.head_units);
                (Body::Recurrent(rec), Some(head), spec.head_units)
            }
            Architecture::Cnn => {
                let mut prev = 1;
                let convs = spec
                    .conv_filters
                    .iter()
                    .enumerate()
                    .map(|(k, &f)| {
                        let c = Conv { w: span(&format!("conv{k}.weight")), b: span(&format!("conv{k}.bias")), c_in: prev, c_out: f };
                        prev = f;
                        c
                    })
                    .collect();
                let head = dense("head", prev, spec.head_units);
                (Body::Cnn(convs), Some(head), spec.head_units)
            }
        };
        let output = dense("output", last, spec.n_targets);
        Ok(Self { spec: spec.clone(), layout, body, head, output })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn check(&self, params: &ParameterVector, inputs: &[f64]) -> Result<usize, ModelError> {
        if params.layout != self.layout {
            return Err(ModelError::LayoutMismatch { expected: self.layout.len(), found: params.len() });
        }
        let per = self.spec.input_size();
        if inputs.len() % per != 0 {
            return Err(ModelError::ShapeMismatch(format!(
                "input length {} is not a multiple of window × features = {per}",
                inputs.len()
            )));
        }
        Ok(inputs.len() / per)
    }

    /// Predictions for a batch of flattened `(window, n_features)` inputs,
    /// shape `batch × n_targets`.
    pub fn forward(&self, params: &ParameterVector, inputs: &[f64]) -> Result<Array2<f64>, ModelError> {
        let batch = self.check(params, inputs)?;
        Ok(self.run(&params.values, inputs, batch).0)
    }

    /// Forward pass in chunks, returning row-major predictions.
    pub fn predict(&self, params: &ParameterVector, inputs: &[f64], chunk: usize) -> Result<Vec<f64>, ModelError> {
        self.check(params, inputs)?;
        let per = self.spec.input_size() * chunk.max(1);
        let mut out = Vec::with_capacity(inputs.len() / self.spec.input_size() * self.spec.n_targets);
        for part in inputs.chunks(per) {
            let pred = self.forward(params, part)?;
            out.extend(pred.iter());
        }
        Ok(out)
    }

    /// Which ReLU units are active for these inputs, in a fixed order.
    ///
    /// The loss is smooth in a parameter interval on which this pattern
    /// does not change, which is what finite-difference checks rely on.
    pub fn relu_pattern(&self, params: &ParameterVector, inputs: &[f64]) -> Result<Vec<bool>, ModelError> {
        let batch = self.check(params, inputs)?;
        let (_, tape) = self.run(&params.values, inputs, batch);
        let mut out = Vec::new();
        let mut push = |a: &Array2<f64>| out.extend(a.iter().map(|&v| v > 0.0));
        match &tape.body {
            BodyTape::Mlp(acts) => acts.iter().skip(1).for_each(&mut push),
            BodyTape::Recurrent(_) => {}
            BodyTape::Cnn(ct) => ct.outs.iter().for_each(&mut push),
        }
        push(&tape.features);
        if let Some(h) = &tape.head_out {
            push(h);
        }
        Ok(out)
    }

    /// Mean squared error and its gradient with respect to every parameter.
    pub fn loss_and_gradient(
        &self,
        params: &ParameterVector,
        inputs: &[f64],
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let batch = self.check(params, inputs)?;
        if targets.len() != batch * self.spec.n_targets {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} targets, found {}",
                batch * self.spec.n_targets,
                targets.len()
            )));
        }
        if batch == 0 {
            return Err(ModelError::ShapeMismatch("empty batch".into()));
        }
        let p = &params.values;
        let (pred, tape) = self.run(p, inputs, batch);
        let y = ArrayView2::from_shape(pred.raw_dim(), targets).expect("checked above");
        let diff = &pred - &y;
        let n = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        let dpred = diff * (2.0 / n);

        let mut g = vec![0.0; p.len()];
        self.backprop(p, &mut g, inputs, batch, tape, dpred);
        Ok((loss, g))
    }

    fn run(&self, p: &[f64], inputs: &[f64], batch: usize) -> (Array2<f64>, Tape) {
        let (t, d) = (self.spec.window, self.spec.n_features);
        let (features, body) = match &self.body {
            Body::Mlp(layers) => {
                let mut acts = Vec::with_capacity(layers.len() + 1);
                let mut a = ArrayView2::from_shape((batch, t * d), inputs).expect("checked").to_owned();
                for layer in layers {
                    let mut z = layer.forward(p, &a.view());
                    relu_inplace(&mut z);
                    acts.push(a);
                    a = z;
                }
                (a, BodyTape::Mlp(acts))
            }
            Body::Recurrent(rec) => {
                let x = ArrayView3::from_shape((batch, t, d), inputs).expect("checked");
                let (h, tape) = rec.forward(p, &x);
                (h, BodyTape::Recurrent(tape))
            }
            Body::Cnn(convs) => {
                let positions = t * d;
                let mut a = ArrayView2::from_shape((batch * positions, 1), inputs).expect("checked").to_owned();
                let mut cols = Vec::with_capacity(convs.len());
                let mut outs = Vec::with_capacity(convs.len());
                for conv in convs {
                    let c = im2col(&a, batch, t, d);
                    let w = view2(p, &conv.w, conv.c_out, conv.c_in * KERNEL * KERNEL);
                    let mut y = c.dot(&w.t());
                    y += &ndarray::ArrayView1::from(&p[conv.b.clone()]);
                    relu_inplace(&mut y);
                    cols.push(c);
                    outs.push(y.clone());
                    a = y;
                }
                let channels = a.ncols();
                let pooled = a
                    .into_shape_with_order((batch, positions, channels))
                    .expect("contiguous")
                    .mean_axis(Axis(1))
                    .expect("positions > 0");
                (pooled, BodyTape::Cnn(CnnTape { cols, outs }))
            }
        };
        let head_out = self.head.as_ref().map(|h| {
            let mut z = h.forward(p, &features.view());
            relu_inplace(&mut z);
            z
        });
        let last = head_out.as_ref().unwrap_or(&features);
        let pred = self.output.forward(p, &last.view());
        (pred, Tape { body, features, head_out })
    }

    fn backprop(&self, p: &[f64], g: &mut [f64], inputs: &[f64], batch: usize, tape: Tape, dpred: Array2<f64>) {
        let (t, d) = (self.spec.window, self.spec.n_features);
        let last = tape.head_out.as_ref().unwrap_or(&tape.features);
        let mut dlast = self.output.backward(p, g, &last.view(), &dpred, true).expect("dx requested");
        let dfeat = match (&self.head, &tape.head_out) {
            (Some(head), Some(out)) => {
                relu_backward(&mut dlast, out);
                head.backward(p, g, &tape.features.view(), &dlast, true).expect("dx requested")
            }
            _ => dlast,
        };
        match (&self.body, tape.body) {
            (Body::Mlp(layers), BodyTape::Mlp(acts)) => {
                let mut dz = dfeat;
                // acts[k] is the input of layer k; acts[k + 1] its ReLU output.
                for k in (0..layers.len()).rev() {
                    let out = if k + 1 < acts.len() { &acts[k + 1] } else { &tape.features };
                    relu_backward(&mut dz, out);
                    match layers[k].backward(p, g, &acts[k].view(), &dz, k > 0) {
                        Some(dx) => dz = dx,
                        None => break,
                    }
                }
            }
            (Body::Recurrent(rec), BodyTape::Recurrent(rt)) => {
                let x = ArrayView3::from_shape((batch, t, d), inputs).expect("checked");
                rec.backward(p, g, &x, rt, dfeat);
            }
            (Body::Cnn(convs), BodyTape::Cnn(ct)) => {
                let positions = t * d;
                let channels = dfeat.ncols();
                let mut dy = Array2::zeros((batch * positions, channels));
                for (row, mut dst) in dy.outer_iter_mut().enumerate() {
                    let b = row / positions;
                    dst.assign(&(&dfeat.row(b) / positions as f64));
                }
                for k in (0..convs.len()).rev() {
                    let conv = &convs[k];
                    relu_backward(&mut dy, &ct.outs[k]);
                    let kk = conv.c_in * KERNEL * KERNEL;
                    general_mat_mul(1.0, &dy.t(), &ct.cols[k], 1.0, &mut view2_mut(g, &conv.w, conv.c_out, kk));
                    add_column_sums(g, &conv.b, &dy.view());
                    if k > 0 {
                        let dcols = dy.dot(&view2(p, &conv.w, conv.c_out, kk));
                        dy = col2im(&dcols, batch, t, d, conv.c_in);
                    }
                }
            }
            _ => unreachable!("tape built by the same body"),
        }
    }
}

/// Unfolds 3×3 same-padded neighbourhoods. `a` is (batch·rows·cols) ×
/// channels; the result has one column per (channel, ki, kj).
fn im2col(a: &Array2<f64>, batch: usize, rows: usize, cols: usize) -> Array2<f64> {
    let channels = a.ncols();
    let k2 = KERNEL * KERNEL;
    let mut out = Array2::zeros((batch * rows * cols, channels * k2));
    let half = (KERNEL / 2) as isize;
    for b in 0..batch {
        for r in 0..rows {
            for c in 0..cols {
                let row = (b * rows + r) * cols + c;
                let mut dst = out.row_mut(row);
                for ki in 0..KERNEL {
                    let rr = r as isize + ki as isize - half;
                    if rr < 0 || rr >= rows as isize {
                        continue;
                    }
                    for kj in 0..KERNEL {
                        let cc = c as isize + kj as isize - half;
                        if cc < 0 || cc >= cols as isize {
                            continue;
                        }
                        let src = (b * rows + rr as usize) * cols + cc as usize;
                        let src_row = a.row(src);
                        for ch in 0..channels {
                            dst[ch * k2 + ki * KERNEL + kj] = src_row[ch];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`].
fn col2im(dcols: &Array2<f64>, batch: usize, rows: usize, cols: usize, channels: usize) -> Array2<f64> {
    let k2 = KERNEL * KERNEL;
    let mut out = Array2::zeros((batch * rows * cols, channels));
    let half = (KERNEL / 2) as isize;
    for b in 0..batch {
        for r in 0..rows {
            for c in 0..cols {
                let src = dcols.row((b * rows + r) * cols + c);
                for ki in 0..KERNEL {
                    let rr = r as isize + ki as isize - half;
                    if rr < 0 || rr >= rows as isize {
                        continue;
                    }
                    for kj in 0..KERNEL {
                        let cc = c as isize + kj as isize - half;
                        if cc < 0 || cc >= cols as isize {
                            continue;
                        }
                        let mut dst = out.row_mut((b * rows + rr as usize) * cols + cc as usize);
                        for ch in 0..channels {
                            dst[ch] += src[ch * k2 + ki * KERNEL + kj];
                        }
                    }
                }
            }
        }
    }
    out
}

impl Recurrent {
    fn gates(&self) -> usize {
        self.kind.gates() * self.units
    }

    /// Input projection for every step at once, with the bias folded in.
    fn project_inputs(&self, p: &[f64], x: &ArrayView3<f64>) -> Array3<f64> {
        let (batch, steps, d) = x.dim();
        let flat = x.to_shape((batch * steps, d)).expect("reshape");
        let wx = view2(p, &self.wx, self.gates(), d);
        let mut z = flat.dot(&wx.t());
        z += &ndarray::ArrayView1::from(&p[self.b.clone()]);
        z.into_shape_with_order((batch, steps, self.gates())).expect("contiguous")
    }

    fn forward(&self, p: &[f64], x: &ArrayView3<f64>) -> (Array2<f64>, RecurrentTape) {
        let (batch, steps, _) = x.dim();
        let h = self.units;
        let g = self.gates();
        let wh = view2(p, &self.wh, g, h);
        let mut gates = self.project_inputs(p, x);
        let mut h_prev = Array3::zeros((batch, steps, h));
        let mut c_prev = Array3::zeros((0, 0, 0));
        let mut extra = Array3::zeros((0, 0, 0));
        if self.kind == Architecture::Lstm {
            c_prev = Array3::zeros((batch, steps, h));
            extra = Array3::zeros((batch, steps, h));
        } else if self.kind == Architecture::Gru {
            extra = Array3::zeros((batch, steps, h));
        }

        let mut hidden = Array2::<f64>::zeros((batch, h));
        let mut cell = Array2::<f64>::zeros((batch, h));
        for t in 0..steps {
            h_prev.slice_mut(s![.., t, ..]).assign(&hidden);
            let rec = hidden.dot(&wh.t());
            let mut z = gates.slice_mut(s![.., t, ..]);
            match self.kind {
                Architecture::Rnn => {
                    Zip::from(&mut z).and(&rec).for_each(|z, &r| *z = (*z + r).tanh());
                    hidden.assign(&z);
                }
                Architecture::Lstm => {
                    c_prev.slice_mut(s![.., t, ..]).assign(&cell);
                    let mut tanh_c = extra.slice_mut(s![.., t, ..]);
                    for b in 0..batch {
                        let mut zr = z.row_mut(b);
                        let rr = rec.row(b);
                        for j in 0..h {
                            let i = sigmoid(zr[j] + rr[j]);
                            let f = sigmoid(zr[h + j] + rr[h + j]);
                            let gg = (zr[2 * h + j] + rr[2 * h + j]).tanh();
                            let o = sigmoid(zr[3 * h + j] + rr[3 * h + j]);
                            zr[j] = i;
                            zr[h + j] = f;
                            zr[2 * h + j] = gg;
                            zr[3 * h + j] = o;
                            let c = f * cell[[b, j]] + i * gg;
                            cell[[b, j]] = c;
                            let tc = c.tanh();
                            tanh_c[[b, j]] = tc;
                            hidden[[b, j]] = o * tc;
                        }
                    }
                }
                Architecture::Gru => {
                    let mut cand = extra.slice_mut(s![.., t, ..]);
                    for b in 0..batch {
                        let mut zr = z.row_mut(b);
                        let rr = rec.row(b);
                        for j in 0..h {
                            let r = sigmoid(zr[j] + rr[j]);
                            let u = sigmoid(zr[h + j] + rr[h + j]);
                            let n = (zr[2 * h + j] + r * rr[2 * h + j]).tanh();
                            zr[j] = r;
                            zr[h + j] = u;
                            zr[2 * h + j] = n;
                            cand[[b, j]] = rr[2 * h + j];
                            hidden[[b, j]] = (1.0 - u) * n + u * hidden[[b, j]];
                        }
                    }
                }
                Architecture::Mlp | Architecture::Cnn => unreachable!(),
            }
        }
        (hidden, RecurrentTape { gates, h_prev, c_prev, extra })
    }

    fn backward(&self, p: &[f64], grad: &mut [f64], x: &ArrayView3<f64>, tape: RecurrentTape, dh_last: Array2<f64>) {
        let (batch, steps, d) = x.dim();
        let h = self.units;
        let g = self.gates();
        let wh = view2(p, &self.wh, g, h);
        // Pre-activation gradients for the input side and the hidden side;
        // they differ only in the GRU candidate block.
        let mut dz_in = Array3::<f64>::zeros((batch, steps, g));
        let mut dz_rec = if self.kind == Architecture::Gru {
            Array3::<f64>::zeros((batch, steps, g))
        } else {
            Array3::<f64>::zeros((0, 0, 0))
        };
        let mut dh = dh_last;
        let mut dc = Array2::<f64>::zeros((batch, h));
        for t in (0..steps).rev() {
            let act = tape.gates.slice(s![.., t, ..]);
            let mut dz = dz_in.slice_mut(s![.., t, ..]);
            let mut dh_prev = Array2::<f64>::zeros((batch, h));
            match self.kind {
                Architecture::Rnn => {
                    Zip::from(&mut dz).and(&act).and(&dh).for_each(|dz, &a, &dh| *dz = dh * (1.0 - a * a));
                }
                Architecture::Lstm => {
                    let c_prev = tape.c_prev.slice(s![.., t, ..]);
                    let tanh_c = tape.extra.slice(s![.., t, ..]);
                    for b in 0..batch {
                        for j in 0..h {
                            let (i, f, gg, o) = (act[[b, j]], act[[b, h + j]], act[[b, 2 * h + j]], act[[b, 3 * h + j]]);
                            let tc = tanh_c[[b, j]];
                            let dhv = dh[[b, j]];
                            let dcv = dc[[b, j]] + dhv * o * (1.0 - tc * tc);
                            dz[[b, j]] = dcv * gg * i * (1.0 - i);
                            dz[[b, h + j]] = dcv * c_prev[[b, j]] * f * (1.0 - f);
                            dz[[b, 2 * h + j]] = dcv * i * (1.0 - gg * gg);
                            dz[[b, 3 * h + j]] = dhv * tc * o * (1.0 - o);
                            dc[[b, j]] = dcv * f;
                        }
                    }
                }
                Architecture::Gru => {
                    let hp = tape.h_prev.slice(s![.., t, ..]);
                    let cand = tape.extra.slice(s![.., t, ..]);
                    let mut dzr = dz_rec.slice_mut(s![.., t, ..]);
                    for b in 0..batch {
                        for j in 0..h {
                            let (r, u, n) = (act[[b, j]], act[[b, h + j]], act[[b, 2 * h + j]]);
                            let dhv = dh[[b, j]];
                            let dn = dhv * (1.0 - u) * (1.0 - n * n);
                            let du = dhv * (hp[[b, j]] - n) * u * (1.0 - u);
                            let dr = dn * cand[[b, j]] * r * (1.0 - r);
                            dz[[b, j]] = dr;
                            dz[[b, h + j]] = du;
                            dz[[b, 2 * h + j]] = dn;
                            dzr[[b, j]] = dr;
                            dzr[[b, h + j]] = du;
                            dzr[[b, 2 * h + j]] = dn * r;
                            dh_prev[[b, j]] = dhv * u;
                        }
                    }
                }
                Architecture::Mlp | Architecture::Cnn => unreachable!(),
            }
            if t > 0 {
                let dzh = if self.kind == Architecture::Gru { dz_rec.slice(s![.., t, ..]) } else { dz_in.slice(s![.., t, ..]) };
                general_mat_mul(1.0, &dzh, &wh, 1.0, &mut dh_prev);
                dh = dh_prev;
            }
        }

        let rows = batch * steps;
        let dz_in_flat = dz_in.to_shape((rows, g)).expect("reshape");
        let x_flat = x.to_shape((rows, d)).expect("reshape");
        let hp_flat = tape.h_prev.to_shape((rows, h)).expect("reshape");
        general_mat_mul(1.0, &dz_in_flat.t(), &x_flat, 1.0, &mut view2_mut(grad, &self.wx, g, d));
        add_column_sums(grad, &self.b, &dz_in_flat.view());
        let dz_h = if self.kind == Architecture::Gru { dz_rec.to_shape((rows, g)).expect("reshape") } else { dz_in_flat };
        general_mat_mul(1.0, &dz_h.t(), &hp_flat, 1.0, &mut view2_mut(grad, &self.wh, g, h));
    }
}
