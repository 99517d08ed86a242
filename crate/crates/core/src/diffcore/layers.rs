//! Dense, convolution and pooling kernels on flat slices.

use crate::rng::CounterRng;

/// Fully connected layer `y = W x + b`, `W` stored row-major (`out × inp`).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub inp: usize,
    pub out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Self { inp, out, w: vec![0.0; inp * out], b: vec![0.0; out] }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    pub fn seeded(inp: usize, out: usize, rng: &CounterRng, stream: u64) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        let mut s = rng.stream(stream);
        let mut draw = || (2.0 * s.next_uniform() - 1.0) * bound;
        let w = (0..inp * out).map(|_| draw()).collect();
        let b = (0..out).map(|_| draw()).collect();
        Self { inp, out, w, b }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.clone();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.w[o * self.inp..(o + 1) * self.inp];
            *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        y
    }

    /// `W u`, no bias.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.out)
            .map(|o| {
                let row = &self.w[o * self.inp..(o + 1) * self.inp];
                row.iter().zip(u).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// `Wᵀ v`.
    pub fn apply_t(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inp];
        for (o, &vo) in v.iter().enumerate() {
            if vo == 0.0 {
                continue;
            }
            let row = &self.w[o * self.inp..(o + 1) * self.inp];
            for (acc, &w) in out.iter_mut().zip(row) {
                *acc += w * vo;
            }
        }
        out
    }

    /// Accumulates `dW += v xᵀ`, `db += v` into `grad` laid out as `[w, b]`.
    pub fn accumulate_param_grad(&self, x: &[f64], v: &[f64], grad: &mut [f64]) {
        let (gw, gb) = grad.split_at_mut(self.w.len());
        for (o, &vo) in v.iter().enumerate() {
            gb[o] += vo;
            if vo == 0.0 {
                continue;
            }
            let row = &mut gw[o * self.inp..(o + 1) * self.inp];
            for (g, &xi) in row.iter_mut().zip(x) {
                *g += vo * xi;
            }
        }
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w);
        out.extend_from_slice(&self.b);
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let nw = self.w.len();
        let nb = self.b.len();
        self.w.copy_from_slice(&src[..nw]);
        self.b.copy_from_slice(&src[nw..nw + nb]);
        nw + nb
    }
}

/// 3×3 convolution with zero padding 1 and stride 1 over `[C, H, W]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Conv3x3 {
    pub in_c: usize,
    pub out_c: usize,
    pub h: usize,
    pub w: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3x3 {
    pub fn seeded(in_c: usize, out_c: usize, h: usize, w: usize, rng: &CounterRng, stream: u64) -> Self {
        let fan_in = in_c * 9;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut s = rng.stream(stream);
        let mut draw = || (2.0 * s.next_uniform() - 1.0) * bound;
        let weights = (0..out_c * fan_in).map(|_| draw()).collect();
        let bias = (0..out_c).map(|_| draw()).collect();
        Self { in_c, out_c, h, w, weights, bias }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    #[inline]
    fn widx(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_c + c) * 3 + ky) * 3 + kx
    }

    /// Linear part of the convolution (no bias).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let plane = h * w;
        let mut out = vec![0.0; self.out_c * plane];
        for o in 0..self.out_c {
            let dst = &mut out[o * plane..(o + 1) * plane];
            for c in 0..self.in_c {
                let src = &x[c * plane..(c + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = self.weights[self.widx(o, c, ky, kx)];
                        // output (y, x) reads input (y + ky - 1, x + kx - 1)
                        let y0 = if ky == 0 { 1 } else { 0 };
                        let y1 = if ky == 2 { h - 1 } else { h };
                        let x0 = if kx == 0 { 1 } else { 0 };
                        let x1 = if kx == 2 { w - 1 } else { w };
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            let drow = &mut dst[y * w..(y + 1) * w];
                            let srow = &src[sy * w..(sy + 1) * w];
                            for xx in x0..x1 {
                                drow[xx] += k * srow[xx + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let plane = self.h * self.w;
        let mut out = self.apply(x);
        for (o, &b) in self.bias.iter().enumerate() {
            for v in &mut out[o * plane..(o + 1) * plane] {
                *v += b;
            }
        }
        out
    }

    /// Adjoint of [`Conv3x3::apply`].
    pub fn apply_t(&self, g: &[f64]) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let plane = h * w;
        let mut out = vec![0.0; self.in_c * plane];
        for o in 0..self.out_c {
            let src = &g[o * plane..(o + 1) * plane];
            for c in 0..self.in_c {
                let dst = &mut out[c * plane..(c + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = self.weights[self.widx(o, c, ky, kx)];
                        let y0 = if ky == 0 { 1 } else { 0 };
                        let y1 = if ky == 2 { h - 1 } else { h };
                        let x0 = if kx == 0 { 1 } else { 0 };
                        let x1 = if kx == 2 { w - 1 } else { w };
                        for y in y0..y1 {
                            let sy = y + ky - 1;
                            for xx in x0..x1 {
                                dst[sy * w + xx + kx - 1] += k * src[y * w + xx];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }

    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let nw = self.weights.len();
        let nb = self.bias.len();
        self.weights.copy_from_slice(&src[..nw]);
        self.bias.copy_from_slice(&src[nw..nw + nb]);
        nw + nb
    }
}

/// 2×2 average pooling over `[C, H, W]`; trailing odd rows/columns are dropped.
pub(crate) fn avg_pool2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = vec![0.0; c * ph * pw];
    for ch in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let base = ch * h * w;
                let s = x[base + 2 * py * w + 2 * px]
                    + x[base + 2 * py * w + 2 * px + 1]
                    + x[base + (2 * py + 1) * w + 2 * px]
                    + x[base + (2 * py + 1) * w + 2 * px + 1];
                out[(ch * ph + py) * pw + px] = 0.25 * s;
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool2`].
pub(crate) fn avg_pool2_t(g: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let v = 0.25 * g[(ch * ph + py) * pw + px];
                let base = ch * h * w;
                out[base + 2 * py * w + 2 * px] += v;
                out[base + 2 * py * w + 2 * px + 1] += v;
                out[base + (2 * py + 1) * w + 2 * px] += v;
                out[base + (2 * py + 1) * w + 2 * px + 1] += v;
            }
        }
    }
    out
}

/// Pre-activations are clamped to this magnitude so the logistic output
/// stays strictly inside (0, 1) in double precision.
pub(crate) const SIGMOID_CLAMP: f64 = 36.0;

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
