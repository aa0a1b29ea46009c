//! Convolutional subnetwork with exact reverse-mode gradients.
//!
//! Inputs are `len x width` images stored row-major (`[t][w]`). The first
//! convolution spans the full image width, so every feature map after it
//! has width 1 and later kernels are `k x 1`. All convolutions therefore run
//! as 1-D convolutions over `t` with the image columns (or filters) as
//! channels, using valid padding and stride 1. Max pooling is `p x 1` with
//! floor semantics.
//!
//! Parameters live in one flat `f64` buffer. Conv kernels are stored as
//! `[k][c_in][c_out]`, dense weights as `[in][out]`, each block followed by
//! its bias.

use rand::Rng;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel_height: usize,
    /// Pool height after the activation; 1 disables pooling.
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// Image height (waypoint count N).
    pub input_len: usize,
    /// Image width: 2 for a CSI pair, 1 for a single vector.
    pub input_width: usize,
    pub convs: Vec<ConvSpec>,
    /// Hidden dense layer widths (rectified); the output layer is linear.
    pub hidden: Vec<usize>,
    pub outputs: usize,
}

impl Architecture {
    /// conv(64, 3) > pool 2 > conv(64, 3) > pool 2 > conv(64, 3) > dense 64 > dense `outputs`.
    pub fn standard(input_len: usize, input_width: usize, outputs: usize) -> Self {
        let conv = |pool| ConvSpec { filters: 64, kernel_height: 3, pool };
        Self {
            input_len,
            input_width,
            convs: vec![conv(2), conv(2), conv(1)],
            hidden: vec![64],
            outputs,
        }
    }

    /// Pairwise distance subnetwork: `N x 2` input, scalar output.
    pub fn pairwise(n: usize) -> Self {
        Self::standard(n, 2, 1)
    }

    /// Direct position regressor: `N x 1` input, 2 outputs.
    pub fn positional(n: usize) -> Self {
        Self::standard(n, 1, 2)
    }

    /// Reduced stack for gradient checks: two 2-filter convolutions on `N = 8`.
    pub fn tiny_pairwise() -> Self {
        Self {
            input_len: 8,
            input_width: 2,
            convs: vec![
                ConvSpec { filters: 2, kernel_height: 3, pool: 2 },
                ConvSpec { filters: 2, kernel_height: 3, pool: 1 },
            ],
            hidden: vec![4],
            outputs: 1,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_len * self.input_width
    }

    /// Per-layer output shapes `(height, width, channels)`, starting with the input.
    pub fn shape_trace(&self) -> Result<Vec<(&'static str, [usize; 3])>> {
        if self.input_len == 0 || self.input_width == 0 || self.outputs == 0 {
            return Err(invalid("architecture dimensions must be positive"));
        }
        let mut trace = vec![("input", [self.input_len, self.input_width, 1])];
        let mut len = self.input_len;
        for (i, c) in self.convs.iter().enumerate() {
            if c.filters == 0 || c.kernel_height == 0 || c.pool == 0 {
                return Err(invalid(format!("conv layer {i} has a zero dimension")));
            }
            if len < c.kernel_height {
                return Err(invalid(format!(
                    "conv layer {i}: feature length {len} is shorter than kernel {}",
                    c.kernel_height
                )));
            }
            len = len - c.kernel_height + 1;
            trace.push(("conv", [len, 1, c.filters]));
            if c.pool > 1 {
                len /= c.pool;
                if len == 0 {
                    return Err(invalid(format!("pooling after conv layer {i} leaves no features")));
                }
                trace.push(("pool", [len, 1, c.filters]));
            }
        }
        let channels = self.convs.last().map_or(self.input_width, |c| c.filters);
        trace.push(("flatten", [len * channels, 1, 1]));
        for &h in &self.hidden {
            if h == 0 {
                return Err(invalid("dense layer with zero units"));
            }
            trace.push(("dense", [h, 1, 1]));
        }
        trace.push(("dense", [self.outputs, 1, 1]));
        Ok(trace)
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    len_in: usize,
    c_in: usize,
    kernel: usize,
    len_out: usize,
    c_out: usize,
    pool: usize,
    pooled_len: usize,
    w_off: usize,
    b_off: usize,
}

impl ConvLayer {
    fn window(&self) -> usize {
        self.kernel * self.c_in
    }
    fn out_size(&self) -> usize {
        self.pooled_len * self.c_out
    }
}

#[derive(Debug, Clone, Copy)]
struct DenseLayer {
    n_in: usize,
    n_out: usize,
    relu: bool,
    w_off: usize,
    b_off: usize,
}

/// Compiled layer layout for an [`Architecture`].
#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    convs: Vec<ConvLayer>,
    dense: Vec<DenseLayer>,
    n_params: usize,
}

impl Network {
    pub fn new(arch: Architecture) -> Result<Self> {
        arch.shape_trace()?;
        let mut off = 0;
        let mut convs = Vec::with_capacity(arch.convs.len());
        let (mut len, mut ch) = (arch.input_len, arch.input_width);
        for c in &arch.convs {
            let len_out = len - c.kernel_height + 1;
            let w_off = off;
            off += c.kernel_height * ch * c.filters;
            let b_off = off;
            off += c.filters;
            let layer = ConvLayer {
                len_in: len,
                c_in: ch,
                kernel: c.kernel_height,
                len_out,
                c_out: c.filters,
                pool: c.pool,
                pooled_len: len_out / c.pool,
                w_off,
                b_off,
            };
            len = layer.pooled_len;
            ch = c.filters;
            convs.push(layer);
        }
        let mut n_in = len * ch;
        let mut dense = Vec::new();
        let widths = arch.hidden.iter().map(|&h| (h, true)).chain(std::iter::once((arch.outputs, false)));
        for (n_out, relu) in widths {
            let w_off = off;
            off += n_in * n_out;
            let b_off = off;
            off += n_out;
            dense.push(DenseLayer { n_in, n_out, relu, w_off, b_off });
            n_in = n_out;
        }
        Ok(Self { arch, convs, dense, n_params: off })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn num_params(&self) -> usize {
        self.n_params
    }

    pub fn outputs(&self) -> usize {
        self.arch.outputs
    }

    /// Fan-in scaled uniform weights, zero biases.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params];
        for c in &self.convs {
            let bound = (6.0 / c.window() as f64).sqrt();
            for w in &mut p[c.w_off..c.b_off] {
                *w = rng.random_range(-bound..bound);
            }
        }
        for d in &self.dense {
            let bound = ((if d.relu { 6.0 } else { 3.0 }) / d.n_in as f64).sqrt();
            for w in &mut p[d.w_off..d.b_off] {
                *w = rng.random_range(-bound..bound);
            }
        }
        p
    }

    /// Index range of the output-layer bias inside the parameter buffer.
    pub fn output_bias_range(&self) -> std::ops::Range<usize> {
        let d = self.dense.last().expect("network always has an output layer");
        d.b_off..d.b_off + d.n_out
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            conv_act: self.convs.iter().map(|c| vec![0.0; c.len_out * c.c_out]).collect(),
            conv_pooled: self
                .convs
                .iter()
                .map(|c| if c.pool > 1 { vec![0.0; c.out_size()] } else { Vec::new() })
                .collect(),
            argmax: self
                .convs
                .iter()
                .map(|c| if c.pool > 1 { vec![0; c.out_size()] } else { Vec::new() })
                .collect(),
            dense_act: self.dense.iter().map(|d| vec![0.0; d.n_out]).collect(),
            d_conv_act: self.convs.iter().map(|c| vec![0.0; c.len_out * c.c_out]).collect(),
            d_conv_out: self.convs.iter().map(|c| vec![0.0; c.out_size()]).collect(),
            d_dense: self.dense.iter().map(|d| vec![0.0; d.n_out]).collect(),
        }
    }

    fn conv_output<'a>(&self, ws: &'a Workspace, l: usize) -> &'a [f64] {
        if self.convs[l].pool > 1 {
            &ws.conv_pooled[l]
        } else {
            &ws.conv_act[l]
        }
    }

    fn dense_input<'a>(&self, ws: &'a Workspace, input: &'a [f64], l: usize) -> &'a [f64] {
        if l > 0 {
            &ws.dense_act[l - 1]
        } else if let Some(last) = self.convs.len().checked_sub(1) {
            self.conv_output(ws, last)
        } else {
            input
        }
    }

    /// Runs the stack on `input`; outputs stay in the workspace and are returned.
    pub fn forward<'a>(&self, params: &[f64], input: &[f64], ws: &'a mut Workspace) -> &'a [f64] {
        debug_assert_eq!(params.len(), self.n_params);
        assert_eq!(input.len(), self.arch.input_size(), "input size mismatch");
        for (l, c) in self.convs.iter().enumerate() {
            let (before, rest) = ws.conv_act.split_at_mut(l);
            let act = &mut rest[0];
            let x: &[f64] = if l == 0 {
                input
            } else if self.convs[l - 1].pool > 1 {
                &ws.conv_pooled[l - 1]
            } else {
                &before[l - 1]
            };
            conv_forward(c, &params[c.w_off..c.b_off], &params[c.b_off..c.b_off + c.c_out], x, act);
            if c.pool > 1 {
                max_pool(c, act, &mut ws.conv_pooled[l], &mut ws.argmax[l]);
            }
        }
        for (l, d) in self.dense.iter().enumerate() {
            let mut y = std::mem::take(&mut ws.dense_act[l]);
            {
                let x = self.dense_input(ws, input, l);
                dense_forward(d, &params[d.w_off..d.b_off], &params[d.b_off..d.b_off + d.n_out], x, &mut y);
            }
            ws.dense_act[l] = y;
        }
        ws.dense_act.last().expect("output layer")
    }

    /// Accumulates into `grad` the gradient of `sum_k d_out[k] * output[k]`
    /// for the last `forward` evaluated in `ws` on `input`.
    pub fn backward(&self, params: &[f64], input: &[f64], ws: &mut Workspace, d_out: &[f64], grad: &mut [f64]) {
        assert_eq!(d_out.len(), self.arch.outputs);
        let n_dense = self.dense.len();
        ws.d_dense[n_dense - 1].copy_from_slice(d_out);

        for l in (0..n_dense).rev() {
            let d = self.dense[l];
            let mut dy = std::mem::take(&mut ws.d_dense[l]);
            if d.relu {
                for (g, a) in dy.iter_mut().zip(&ws.dense_act[l]) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let (gw, gb) = grad[d.w_off..d.b_off + d.n_out].split_at_mut(d.n_in * d.n_out);
            for (b, g) in gb.iter_mut().zip(&dy) {
                *b += g;
            }
            let x = self.dense_input(ws, input, l);
            for (i, &xi) in x.iter().enumerate() {
                if xi != 0.0 {
                    axpy(xi, &dy, &mut gw[i * d.n_out..(i + 1) * d.n_out]);
                }
            }
            if l == 0 && self.convs.is_empty() {
                ws.d_dense[l] = dy;
                continue;
            }
            let w = &params[d.w_off..d.b_off];
            let dx: &mut Vec<f64> = if l > 0 { &mut ws.d_dense[l - 1] } else { ws.d_conv_out.last_mut().unwrap() };
            for (i, v) in dx.iter_mut().enumerate() {
                *v = dot(&w[i * d.n_out..(i + 1) * d.n_out], &dy);
            }
            ws.d_dense[l] = dy;
        }

        for l in (0..self.convs.len()).rev() {
            let c = self.convs[l];
            // d_act <- unpool(d_out), masked by the rectifier
            let mut d_act = std::mem::take(&mut ws.d_conv_act[l]);
            if c.pool > 1 {
                d_act.iter_mut().for_each(|v| *v = 0.0);
                for (&idx, &g) in ws.argmax[l].iter().zip(&ws.d_conv_out[l]) {
                    d_act[idx as usize] += g;
                }
            } else {
                d_act.copy_from_slice(&ws.d_conv_out[l]);
            }
            for (g, a) in d_act.iter_mut().zip(&ws.conv_act[l]) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            let x: &[f64] = if l == 0 { input } else { self.conv_output(ws, l - 1) };
            let (gw, gb) = grad[c.w_off..c.b_off + c.c_out].split_at_mut(c.window() * c.c_out);
            conv_backward_params(&c, x, &d_act, gw, gb);
            if l > 0 {
                let mut dx = std::mem::take(&mut ws.d_conv_out[l - 1]);
                conv_backward_input(&c, &params[c.w_off..c.b_off], &d_act, &mut dx);
                // previous layer without pooling reads its gradient from d_conv_out as well
                ws.d_conv_out[l - 1] = dx;
            }
            ws.d_conv_act[l] = d_act;
        }
    }
}

/// Per-evaluation activation caches and gradient scratch.
#[derive(Debug, Clone)]
pub struct Workspace {
    conv_act: Vec<Vec<f64>>,
    conv_pooled: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
    dense_act: Vec<Vec<f64>>,
    d_conv_act: Vec<Vec<f64>>,
    d_conv_out: Vec<Vec<f64>>,
    d_dense: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn output(&self) -> &[f64] {
        self.dense_act.last().expect("output layer")
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * k + j] * b[4 * k + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// `C[m x n] = alpha * A * B + beta * C` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!((m - 1) * rsa + (k.max(1) - 1) * csa < a.len() || k == 0);
    debug_assert!((k.max(1) - 1) * rsb + (n - 1) * csb < b.len() || k == 0);
    debug_assert!((m - 1) * rsc + n - 1 < c.len());
    // SAFETY: the debug assertions above spell out the bounds the strides
    // must respect; every call site derives them from the layer layout.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Valid 1-D convolution + rectifier. Row `t` of the implicit im2col matrix
/// is the contiguous slice `x[t * c_in .. (t + kernel) * c_in]`.
fn conv_forward(c: &ConvLayer, w: &[f64], b: &[f64], x: &[f64], act: &mut [f64]) {
    debug_assert_eq!(x.len(), c.len_in * c.c_in);
    for row in act.chunks_exact_mut(c.c_out) {
        row.copy_from_slice(b);
    }
    gemm(c.len_out, c.window(), c.c_out, x, c.c_in, 1, w, c.c_out, 1, 1.0, act, c.c_out);
    for v in act.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn max_pool(c: &ConvLayer, act: &[f64], out: &mut [f64], argmax: &mut [u32]) {
    for i in 0..c.pooled_len {
        for ch in 0..c.c_out {
            let mut best = i * c.pool * c.c_out + ch;
            for j in 1..c.pool {
                let idx = (i * c.pool + j) * c.c_out + ch;
                if act[idx] > act[best] {
                    best = idx;
                }
            }
            out[i * c.c_out + ch] = act[best];
            argmax[i * c.c_out + ch] = best as u32;
        }
    }
}

fn conv_backward_params(c: &ConvLayer, x: &[f64], d_act: &[f64], gw: &mut [f64], gb: &mut [f64]) {
    for row in d_act.chunks_exact(c.c_out) {
        for (b, g) in gb.iter_mut().zip(row) {
            *b += g;
        }
    }
    // gw[window x c_out] += X_win^T [window x len_out] * d_act [len_out x c_out]
    gemm(c.window(), c.len_out, c.c_out, x, 1, c.c_in, d_act, c.c_out, 1, 1.0, gw, c.c_out);
}

fn conv_backward_input(c: &ConvLayer, w: &[f64], d_act: &[f64], dx: &mut [f64]) {
    dx.iter_mut().for_each(|v| *v = 0.0);
    // rows t + k of dx receive d_act[t] * W_k^T, one GEMM per kernel tap
    for k in 0..c.kernel {
        let wk = &w[k * c.c_in * c.c_out..];
        let dst = &mut dx[k * c.c_in..];
        gemm(c.len_out, c.c_out, c.c_in, d_act, c.c_out, 1, wk, 1, c.c_out, 1.0, dst, c.c_in);
    }
}

fn dense_forward(d: &DenseLayer, w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
    y.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            axpy(xi, &w[i * d.n_out..(i + 1) * d.n_out], y);
        }
    }
    if d.relu {
        for v in y.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}
