//! Differentiable operations recorded on a [`Tape`].

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::gemm::gemm;
use crate::numerics::{Tape, Tensor, Var};

/// Batch-norm execution mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnState {
    pub fn new(channels: usize) -> Self {
        BnState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnOptions {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BnOptions {
    fn default() -> Self {
        BnOptions {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Output spatial size of a strided window. Fails when the window would skip
/// real input rows (not only padding) at the far edge.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Config("conv stride must be positive".into()));
    }
    let span = (input + 2 * pad)
        .checked_sub(kernel)
        .ok_or_else(|| Error::Config(format!("kernel {kernel} larger than padded input {input}+2*{pad}")))?;
    if span % stride > pad {
        return Err(Error::Config(format!(
            "input {input} with kernel {kernel}, stride {stride}, pad {pad} leaves a non-integer output size"
        )));
    }
    Ok(span / stride + 1)
}

fn im2col(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    cols: &mut [f64],
) {
    let hw_out = ho * wo;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(
    cols: &[f64],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    dx: &mut [f64],
) {
    let hw_out = ho * wo;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn expect_rank(op: &'static str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::Shape {
            op,
            lhs: shape.to_vec(),
            rhs: vec![rank],
        });
    }
    Ok(())
}

impl Tape {
    /// `x · weight + bias` for `x: [N, Cin]`, `weight: [Cin, Cout]`, `bias: [Cout]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x).to_vec(), self.shape(weight).to_vec(), self.shape(bias));
        expect_rank("linear", &xs, 2)?;
        expect_rank("linear", &ws, 2)?;
        if xs[1] != ws[0] {
            return Err(Error::shape("linear", &xs, &ws));
        }
        if bs != [ws[1]] {
            return Err(Error::shape("linear", &ws, bs));
        }
        let (n, cin, cout) = (xs[0], xs[1], ws[1]);
        let xv = self.shared(x);
        let wv = self.shared(weight);
        let bv = self.value(bias).data();
        let mut out = Vec::with_capacity(n * cout);
        for _ in 0..n {
            out.extend_from_slice(bv);
        }
        gemm(n, cin, cout, xv.data(), false, wv.data(), false, 1.0, &mut out);
        let value = Tensor::new(&[n, cout], out)?;
        self.record(
            "linear",
            value,
            vec![x, weight, bias],
            Box::new(move |g| {
                let mut dx = vec![0.0; n * cin];
                gemm(n, cout, cin, g, false, wv.data(), true, 0.0, &mut dx);
                let mut dw = vec![0.0; cin * cout];
                gemm(cin, n, cout, xv.data(), true, g, false, 0.0, &mut dw);
                let mut db = vec![0.0; cout];
                for row in g.chunks_exact(cout) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                vec![Some(dx), Some(dw), Some(db)]
            }),
        )
    }

    /// Cross-correlation of `x: [B, C, H, W]` with `kernel: [Cout, C, k, k]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        expect_rank("conv2d", &xs, 4)?;
        expect_rank("conv2d", &ks, 4)?;
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, k) = (ks[0], ks[2]);
        if ks[1] != c || ks[3] != k {
            return Err(Error::shape("conv2d", &xs, &ks));
        }
        if k != 1 && k != 3 {
            return Err(Error::Config(format!("conv2d kernel size {k} not in {{1, 3}}")));
        }
        if let Some(bias) = bias {
            if self.shape(bias) != [cout] {
                return Err(Error::shape("conv2d", &ks, self.shape(bias)));
            }
        }
        let ho = conv_out_dim(h, k, stride, pad)?;
        let wo = conv_out_dim(w, k, stride, pad)?;
        let ckk = c * k * k;
        let hw = ho * wo;
        let xv = self.shared(x);
        let kv = self.shared(kernel);
        let mut out = vec![0.0; b * cout * hw];
        let mut cols = vec![0.0; ckk * hw];
        for bi in 0..b {
            let xb = &xv.data()[bi * c * h * w..(bi + 1) * c * h * w];
            im2col(xb, (c, h, w), k, stride, pad, (ho, wo), &mut cols);
            let ob = &mut out[bi * cout * hw..(bi + 1) * cout * hw];
            if let Some(bias) = bias {
                let bv = self.value(bias).data();
                for (o, chunk) in ob.chunks_exact_mut(hw).enumerate() {
                    chunk.fill(bv[o]);
                }
            }
            gemm(cout, ckk, hw, kv.data(), false, &cols, false, 1.0, ob);
        }
        let value = Tensor::new(&[b, cout, ho, wo], out)?;
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        let has_bias = bias.is_some();
        self.record(
            "conv2d",
            value,
            inputs,
            Box::new(move |g| {
                let mut dx = vec![0.0; b * c * h * w];
                let mut dk = vec![0.0; cout * ckk];
                let mut cols = vec![0.0; ckk * hw];
                let mut dcols = vec![0.0; ckk * hw];
                for bi in 0..b {
                    let xb = &xv.data()[bi * c * h * w..(bi + 1) * c * h * w];
                    let gb = &g[bi * cout * hw..(bi + 1) * cout * hw];
                    im2col(xb, (c, h, w), k, stride, pad, (ho, wo), &mut cols);
                    gemm(cout, hw, ckk, gb, false, &cols, true, 1.0, &mut dk);
                    gemm(ckk, cout, hw, kv.data(), true, gb, false, 0.0, &mut dcols);
                    let dxb = &mut dx[bi * c * h * w..(bi + 1) * c * h * w];
                    col2im(&dcols, (c, h, w), k, stride, pad, (ho, wo), dxb);
                }
                let mut grads = vec![Some(dx), Some(dk)];
                if has_bias {
                    let mut db = vec![0.0; cout];
                    for gb in g.chunks_exact(cout * hw) {
                        for (o, chunk) in gb.chunks_exact(hw).enumerate() {
                            db[o] += chunk.iter().sum::<f64>();
                        }
                    }
                    grads.push(Some(db));
                }
                grads
            }),
        )
    }

    /// Per-channel normalization of `x: [B, C, H, W]`. In train mode the batch
    /// statistics normalize and `state` is updated with momentum; in infer mode
    /// the running statistics are used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BnState,
        mode: Mode,
        opts: BnOptions,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("batch_norm", &xs, 4)?;
        let (b, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("batch_norm", &xs, self.shape(gamma)));
        }
        if state.running_mean.len() != c || state.running_var.len() != c {
            return Err(Error::shape("batch_norm", &xs, &[state.running_mean.len()]));
        }
        if opts.eps <= 0.0 {
            return Err(Error::Config("batch_norm eps must be positive".into()));
        }
        let n = b * hw;
        if n == 0 {
            return Err(Error::Empty("batch_norm over a zero-size batch".into()));
        }
        let xv = self.shared(x);
        let xd = xv.data();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for bi in 0..b {
                        s += xd[(bi * c + ch) * hw..(bi * c + ch + 1) * hw].iter().sum::<f64>();
                    }
                    let m = s / n as f64;
                    let mut ss = 0.0;
                    for bi in 0..b {
                        ss += xd[(bi * c + ch) * hw..(bi * c + ch + 1) * hw]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                    mean[ch] = m;
                    var[ch] = ss / n as f64;
                }
                // Running variance tracks the same biased estimate used to normalize.
                for ch in 0..c {
                    state.running_mean[ch] =
                        (1.0 - opts.momentum) * state.running_mean[ch] + opts.momentum * mean[ch];
                    state.running_var[ch] =
                        (1.0 - opts.momentum) * state.running_var[ch] + opts.momentum * var[ch];
                }
                (mean, var)
            }
            Mode::Infer => (state.running_mean.clone(), state.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + opts.eps).sqrt()).collect();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * hw;
                for i in off..off + hw {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gv[ch] * h + bv[ch];
                }
            }
        }
        let value = Tensor::new(&xs, out)?;
        self.record(
            "batch_norm",
            value,
            vec![x, gamma, beta],
            Box::new(move |g| {
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bi in 0..b {
                    for ch in 0..c {
                        let off = (bi * c + ch) * hw;
                        for i in off..off + hw {
                            dgamma[ch] += g[i] * xhat[i];
                            dbeta[ch] += g[i];
                        }
                    }
                }
                let mut dx = vec![0.0; g.len()];
                for bi in 0..b {
                    for ch in 0..c {
                        let off = (bi * c + ch) * hw;
                        let scale = gv[ch] * inv_std[ch];
                        for i in off..off + hw {
                            dx[i] = match mode {
                                Mode::Train => {
                                    scale
                                        * (g[i]
                                            - dbeta[ch] / n as f64
                                            - xhat[i] * dgamma[ch] / n as f64)
                                }
                                Mode::Infer => scale * g[i],
                            };
                        }
                    }
                }
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }),
        )
    }

    fn unary(
        &mut self,
        op: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var> {
        let xv = self.shared(x);
        let out: Vec<f64> = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(xv.shape(), out)?;
        let yv: Rc<[f64]> = value.data().into();
        self.record(
            op,
            value,
            vec![x],
            Box::new(move |g| {
                let dx = g
                    .iter()
                    .zip(xv.data())
                    .zip(yv.iter())
                    .map(|((g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(dx)]
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary("scale", x, move |v| s * v, move |_, _| s)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.shared(x);
        let n = *xv.shape().last().unwrap_or(&1);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks_exact(n) {
            out.extend(softmax_row(row));
        }
        let value = Tensor::new(xv.shape(), out)?;
        let yv: Rc<[f64]> = value.data().into();
        self.record(
            "softmax",
            value,
            vec![x],
            Box::new(move |g| {
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks_exact(n).zip(yv.chunks_exact(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                }
                vec![Some(dx)]
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a), out)?;
        self.record(
            "add",
            value,
            vec![a, b],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.to_vec())]),
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let value = Tensor::scalar(self.value(x).sum());
        self.record("sum", value, vec![x], Box::new(move |g| vec![Some(vec![g[0]; n])]))
    }

    /// Sum of the elements at the given flat indices, as a scalar.
    pub fn pick_sum(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::shape("pick_sum", self.shape(x), &[bad]));
        }
        let s = indices.iter().map(|&i| self.value(x).data()[i]).sum();
        let indices = indices.to_vec();
        self.record(
            "pick_sum",
            Tensor::scalar(s),
            vec![x],
            Box::new(move |g| {
                let mut dx = vec![0.0; n];
                for &i in &indices {
                    dx[i] += g[0];
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Nearest-neighbour upsampling of `[B, C, H, W]` by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("upsample_nearest", &xs, 4)?;
        if factor == 0 {
            return Err(Error::Config("upsample factor must be positive".into()));
        }
        let (bc, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let (ho, wo) = (h * factor, w * factor);
        let xv = self.value(x).data();
        let mut out = vec![0.0; bc * ho * wo];
        for p in 0..bc {
            for oy in 0..ho {
                for ox in 0..wo {
                    out[(p * ho + oy) * wo + ox] = xv[(p * h + oy / factor) * w + ox / factor];
                }
            }
        }
        let value = Tensor::new(&[xs[0], xs[1], ho, wo], out)?;
        self.record(
            "upsample_nearest",
            value,
            vec![x],
            Box::new(move |g| {
                let mut dx = vec![0.0; bc * h * w];
                for p in 0..bc {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            dx[(p * h + oy / factor) * w + ox / factor] += g[(p * ho + oy) * wo + ox];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// `[B, C, H, W]` → `[B·H·W, C]`, one row per grid node in row-major order.
    pub fn to_nodes(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("to_nodes", &xs, 4)?;
        let (b, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for bi in 0..b {
            for ch in 0..c {
                for p in 0..hw {
                    out[(bi * hw + p) * c + ch] = xv[(bi * c + ch) * hw + p];
                }
            }
        }
        let value = Tensor::new(&[b * hw, c], out)?;
        self.record(
            "to_nodes",
            value,
            vec![x],
            Box::new(move |g| {
                let mut dx = vec![0.0; g.len()];
                for bi in 0..b {
                    for ch in 0..c {
                        for p in 0..hw {
                            dx[(bi * c + ch) * hw + p] = g[(bi * hw + p) * c + ch];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Inverse of [`Tape::to_nodes`].
    pub fn from_nodes(&mut self, x: Var, batch: usize, h: usize, w: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("from_nodes", &xs, 2)?;
        let (c, hw) = (xs[1], h * w);
        if xs[0] != batch * hw {
            return Err(Error::shape("from_nodes", &xs, &[batch, c, h, w]));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for bi in 0..batch {
            for ch in 0..c {
                for p in 0..hw {
                    out[(bi * c + ch) * hw + p] = xv[(bi * hw + p) * c + ch];
                }
            }
        }
        let value = Tensor::new(&[batch, c, h, w], out)?;
        self.record(
            "from_nodes",
            value,
            vec![x],
            Box::new(move |g| {
                let mut dx = vec![0.0; g.len()];
                for bi in 0..batch {
                    for ch in 0..c {
                        for p in 0..hw {
                            dx[(bi * hw + p) * c + ch] = g[(bi * c + ch) * hw + p];
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Max-relative graph convolution over `x: [M, C]`.
    ///
    /// `neighbors` holds `k` row indices per node (`M·k` entries). Output row
    /// `i` is `[x_i, max_j (x_j − x_i)]`, so the channel count doubles.
    pub fn max_relative_gc(&mut self, x: Var, neighbors: &[usize], k: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("max_relative_gc", &xs, 2)?;
        let (m, c) = (xs[0], xs[1]);
        if k == 0 {
            return Err(Error::Structure("max_relative_gc: empty neighbor row".into()));
        }
        if neighbors.len() != m * k {
            return Err(Error::shape("max_relative_gc", &xs, &[neighbors.len(), k]));
        }
        if let Some(&bad) = neighbors.iter().find(|&&j| j >= m) {
            return Err(Error::Structure(format!("neighbor index {bad} out of range for {m} nodes")));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; m * 2 * c];
        let mut argmax = vec![0usize; m * c];
        for i in 0..m {
            let xi = &xv[i * c..(i + 1) * c];
            let row = &mut out[i * 2 * c..(i + 1) * 2 * c];
            row[..c].copy_from_slice(xi);
            let rel = &mut row[c..];
            rel.fill(f64::NEG_INFINITY);
            let am = &mut argmax[i * c..(i + 1) * c];
            for &j in &neighbors[i * k..(i + 1) * k] {
                let xj = &xv[j * c..(j + 1) * c];
                for ch in 0..c {
                    let d = xj[ch] - xi[ch];
                    if d > rel[ch] {
                        rel[ch] = d;
                        am[ch] = j;
                    }
                }
            }
        }
        let value = Tensor::new(&[m, 2 * c], out)?;
        self.record(
            "max_relative_gc",
            value,
            vec![x],
            Box::new(move |g| {
                let mut dx = vec![0.0; m * c];
                for i in 0..m {
                    let gi = &g[i * 2 * c..(i + 1) * 2 * c];
                    for ch in 0..c {
                        let gr = gi[c + ch];
                        dx[i * c + ch] += gi[ch] - gr;
                        dx[argmax[i * c + ch] * c + ch] += gr;
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Mean over each sample's node rows: `[B·N, C]` → `[B, C]`.
    pub fn mean_pool_nodes(&mut self, x: Var, batch: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank("mean_pool_nodes", &xs, 2)?;
        if batch == 0 || xs[0] % batch != 0 {
            return Err(Error::shape("mean_pool_nodes", &xs, &[batch]));
        }
        let (nodes, c) = (xs[0] / batch, xs[1]);
        let xv = self.value(x).data();
        let mut out = vec![0.0; batch * c];
        for bi in 0..batch {
            for p in 0..nodes {
                let row = &xv[(bi * nodes + p) * c..(bi * nodes + p + 1) * c];
                out[bi * c..(bi + 1) * c].iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
        }
        out.iter_mut().for_each(|v| *v /= nodes as f64);
        let value = Tensor::new(&[batch, c], out)?;
        self.record(
            "mean_pool_nodes",
            value,
            vec![x],
            Box::new(move |g| {
                let mut dx = vec![0.0; batch * nodes * c];
                for bi in 0..batch {
                    for p in 0..nodes {
                        let off = (bi * nodes + p) * c;
                        for ch in 0..c {
                            dx[off + ch] = g[bi * c + ch] / nodes as f64;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Mean squared error over all elements of two equally shaped tensors.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape("mse_loss", self.shape(pred), self.shape(target)));
        }
        let diff: Vec<f64> = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(a, b)| a - b)
            .collect();
        let n = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
        self.record(
            "mse_loss",
            Tensor::scalar(loss),
            vec![pred, target],
            Box::new(move |g| {
                let dp: Vec<f64> = diff.iter().map(|d| 2.0 * d * g[0] / n).collect();
                let dt = dp.iter().map(|v| -v).collect();
                vec![Some(dp), Some(dt)]
            }),
        )
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        expect_rank("cross_entropy", &ls, 2)?;
        let (b, c) = (ls[0], ls[1]);
        if labels.len() != b {
            return Err(Error::shape("cross_entropy", &ls, &[labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let lv = self.value(logits).data();
        let mut probs = Vec::with_capacity(b * c);
        let mut loss = 0.0;
        for (row, &label) in lv.chunks_exact(c).zip(labels) {
            let lse = log_sum_exp(row);
            loss += lse - row[label];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        loss /= b as f64;
        let labels = labels.to_vec();
        self.record(
            "cross_entropy",
            Tensor::scalar(loss),
            vec![logits],
            Box::new(move |g| {
                let mut dl = probs.clone();
                for (i, &label) in labels.iter().enumerate() {
                    dl[i * c + label] -= 1.0;
                }
                dl.iter_mut().for_each(|v| *v *= g[0] / b as f64);
                vec![Some(dl)]
            }),
        )
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}
