use std::fmt;

use serde::{Deserialize, Serialize};

use super::layers::{avg_pool2, avg_pool2_t, sigmoid, Conv3x3, Dense, SIGMOID_CLAMP};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// The built-in map families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Linear,
    AffineSigmoid,
    ToyBackbone,
    MlpScorer,
    Composition,
    PairAdapter,
}

impl MapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MapKind::Linear => "linear",
            MapKind::AffineSigmoid => "affine_sigmoid",
            MapKind::ToyBackbone => "toy_backbone",
            MapKind::MlpScorer => "mlp_scorer",
            MapKind::Composition => "composition",
            MapKind::PairAdapter => "pair_adapter",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "linear" => MapKind::Linear,
            "affine_sigmoid" => MapKind::AffineSigmoid,
            "toy_backbone" => MapKind::ToyBackbone,
            "mlp_scorer" => MapKind::MlpScorer,
            "composition" => MapKind::Composition,
            "pair_adapter" => MapKind::PairAdapter,
            _ => return None,
        })
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// conv3x3 → tanh → 2×2 average pool → flatten → affine.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ToyBackbone {
    pub conv: Conv3x3,
    pub head: Dense,
}

impl ToyBackbone {
    fn pooled_dims(&self) -> (usize, usize, usize) {
        (self.conv.out_c, self.conv.h, self.conv.w)
    }

    /// Returns `(tanh activations, output)`.
    fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut act = self.conv.forward(x);
        for v in act.iter_mut() {
            *v = v.tanh();
        }
        let (c, h, w) = self.pooled_dims();
        let pooled = avg_pool2(&act, c, h, w);
        let y = self.head.forward(&pooled);
        (act, y)
    }

    fn jvp_with(&self, act: &[f64], u: &[f64]) -> Vec<f64> {
        let mut dz = self.conv.apply(u);
        for (d, a) in dz.iter_mut().zip(act) {
            *d *= 1.0 - a * a;
        }
        let (c, h, w) = self.pooled_dims();
        self.head.apply(&avg_pool2(&dz, c, h, w))
    }

    fn vjp_with(&self, act: &[f64], v: &[f64]) -> Vec<f64> {
        let (c, h, w) = self.pooled_dims();
        let mut g = avg_pool2_t(&self.head.apply_t(v), c, h, w);
        for (d, a) in g.iter_mut().zip(act) {
            *d *= 1.0 - a * a;
        }
        self.conv.apply_t(&g)
    }
}

/// Tanh hidden layers followed by a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Inputs to every layer plus the final output.
    fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(acts.last().unwrap());
            if i < last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(y);
        }
        acts
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        h
    }

    fn jvp_with(&self, acts: &[Vec<f64>], u: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut d = u.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            d = layer.apply(&d);
            if i < last {
                for (dv, a) in d.iter_mut().zip(&acts[i + 1]) {
                    *dv *= 1.0 - a * a;
                }
            }
        }
        d
    }

    /// Input cotangent; when `grad` is given, parameter cotangents are
    /// accumulated into it in layer order.
    fn vjp_with(&self, acts: &[Vec<f64>], v: &[f64], mut grad: Option<&mut [f64]>) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.param_count();
        }
        let mut g = v.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i < last {
                for (gv, a) in g.iter_mut().zip(&acts[i + 1]) {
                    *gv *= 1.0 - a * a;
                }
            }
            if let Some(grad) = grad.as_deref_mut() {
                let n = layer.param_count();
                layer.accumulate_param_grad(&acts[i], &g, &mut grad[offsets[i]..offsets[i] + n]);
            }
            g = layer.apply_t(&g);
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Body {
    Linear(Dense),
    AffineSigmoid(Dense),
    ToyBackbone(ToyBackbone),
    MlpScorer(Mlp),
    Composition {
        outer: Box<DifferentiableMap>,
        inner: Box<DifferentiableMap>,
    },
    /// Concatenates per-image features `[b(ref); b(dist)]`. With a fixed
    /// reference, the input is the distorted image alone.
    PairAdapter {
        backbone: Box<DifferentiableMap>,
        reference: Option<Vec<f64>>,
    },
}

/// An evaluable map with exact forward, Jacobian-vector and
/// vector-Jacobian products.
///
/// Maps are immutable during evaluation; `forward`, `jvp` and `vjp` take
/// `&self` and may be called concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentiableMap {
    pub(crate) body: Body,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    seed: u64,
}

impl DifferentiableMap {
    pub(crate) fn from_body(body: Body, input_shape: Vec<usize>, output_shape: Vec<usize>, seed: u64) -> Self {
        Self { body, input_shape, output_shape, seed }
    }

    /// `y = A x + b` between arbitrary shapes; `weights` is `out × in` row-major.
    pub fn linear_with_shapes(
        input_shape: Vec<usize>,
        output_shape: Vec<usize>,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let inp: usize = input_shape.iter().product();
        let out: usize = output_shape.iter().product();
        if inp == 0 || out == 0 || weights.len() != inp * out || bias.len() != out {
            return Err(Error::InvalidArgument(format!(
                "linear map {input_shape:?} -> {output_shape:?} needs {} weights and {out} biases, got {} and {}",
                inp * out,
                weights.len(),
                bias.len()
            )));
        }
        check_finite(&weights)?;
        check_finite(&bias)?;
        Ok(Self::from_body(Body::Linear(Dense { inp, out, w: weights, b: bias }), input_shape, output_shape, 0))
    }

    /// `y = A x` on vectors; `a` is `rows × cols` row-major.
    pub fn linear(rows: usize, cols: usize, a: Vec<f64>) -> Result<Self> {
        Self::linear_with_shapes(vec![cols], vec![rows], a, vec![0.0; rows])
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut a = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            a[i * n + i] = *d;
        }
        Self::linear(n, n, a)
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::diagonal(&vec![1.0; n])
    }

    /// A map that ignores its input.
    pub fn constant(input_shape: Vec<usize>, value: Tensor) -> Result<Self> {
        let inp: usize = input_shape.iter().product();
        let out = value.len();
        Self::linear_with_shapes(input_shape, value.shape().to_vec(), vec![0.0; inp * out], value.into_data())
    }

    /// Seeded random linear map with optional bias, entries uniform in ±1/sqrt(fan_in).
    pub fn seeded_linear(input_shape: Vec<usize>, output_shape: Vec<usize>, seed: u64) -> Result<Self> {
        let inp: usize = input_shape.iter().product();
        let out: usize = output_shape.iter().product();
        let dense = Dense::seeded(inp, out, &CounterRng::new(seed), 0);
        let mut map = Self::linear_with_shapes(input_shape, output_shape, dense.w, dense.b)?;
        map.seed = seed;
        Ok(map)
    }

    /// `y = sigmoid(W x + b)` with seeded uniform initialization.
    pub fn affine_sigmoid(in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        positive(&[in_dim, out_dim])?;
        let dense = Dense::seeded(in_dim, out_dim, &CounterRng::new(seed), 0);
        Ok(Self::from_body(Body::AffineSigmoid(dense), vec![in_dim], vec![out_dim], seed))
    }

    /// Affine-sigmoid map with every weight and bias zero.
    pub fn affine_sigmoid_zeros(in_dim: usize, out_dim: usize) -> Result<Self> {
        positive(&[in_dim, out_dim])?;
        Ok(Self::from_body(Body::AffineSigmoid(Dense::zeros(in_dim, out_dim)), vec![in_dim], vec![out_dim], 0))
    }

    /// Toy image backbone over `[C, H, W]` inputs (H, W ≥ 2).
    pub fn toy_backbone(input_shape: [usize; 3], channels: usize, out_dim: usize, seed: u64) -> Result<Self> {
        let [c, h, w] = input_shape;
        positive(&[c, channels, out_dim])?;
        if h < 2 || w < 2 {
            return Err(Error::InvalidArgument(format!("toy backbone needs H, W >= 2, got {h}x{w}")));
        }
        let rng = CounterRng::new(seed);
        let conv = Conv3x3::seeded(c, channels, h, w, &rng, 0);
        let pooled = channels * (h / 2) * (w / 2);
        let head = Dense::seeded(pooled, out_dim, &rng, 1);
        Ok(Self::from_body(
            Body::ToyBackbone(ToyBackbone { conv, head }),
            input_shape.to_vec(),
            vec![out_dim],
            seed,
        ))
    }

    /// Scalar-output MLP with tanh hidden layers of the given widths.
    pub fn mlp_scorer(in_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        positive(&[in_dim])?;
        positive(hidden)?;
        let rng = CounterRng::new(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for (i, &h) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            layers.push(Dense::seeded(prev, h, &rng, i as u64));
            prev = h;
        }
        Ok(Self::from_body(Body::MlpScorer(Mlp { layers }), vec![in_dim], vec![1], seed))
    }

    /// Wraps a single-image backbone into a map over `[2, C, H, W]` pairs
    /// (reference first) producing `[b(ref); b(dist)]`.
    pub fn pair_adapter(backbone: DifferentiableMap) -> Result<Self> {
        if backbone.output_shape.len() != 1 {
            return Err(Error::InvalidArgument("pair adapter needs a vector-valued backbone".into()));
        }
        let mut input_shape = vec![2];
        input_shape.extend_from_slice(&backbone.input_shape);
        let output_shape = vec![2 * backbone.output_len()];
        let seed = backbone.seed;
        Ok(Self::from_body(
            Body::PairAdapter { backbone: Box::new(backbone), reference: None },
            input_shape,
            output_shape,
            seed,
        ))
    }

    /// For a pair adapter: the map from the distorted image alone, with the
    /// reference features held fixed at `reference_features`.
    pub fn with_fixed_reference(&self, reference_features: &[f64]) -> Result<Self> {
        let Body::PairAdapter { backbone, .. } = &self.body else {
            return Err(Error::InvalidArgument(format!("{} map has no reference branch", self.kind())));
        };
        if reference_features.len() != backbone.output_len() {
            return Err(Error::shape(&[backbone.output_len()], &[reference_features.len()]));
        }
        Ok(Self::from_body(
            Body::PairAdapter { backbone: backbone.clone(), reference: Some(reference_features.to_vec()) },
            backbone.input_shape.clone(),
            self.output_shape.clone(),
            self.seed,
        ))
    }

    pub fn kind(&self) -> MapKind {
        match &self.body {
            Body::Linear(_) => MapKind::Linear,
            Body::AffineSigmoid(_) => MapKind::AffineSigmoid,
            Body::ToyBackbone(_) => MapKind::ToyBackbone,
            Body::MlpScorer(_) => MapKind::MlpScorer,
            Body::Composition { .. } => MapKind::Composition,
            Body::PairAdapter { .. } => MapKind::PairAdapter,
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.iter().product()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    /// Hidden widths of an MLP scorer (empty for other kinds).
    pub fn hidden_widths(&self) -> Vec<usize> {
        match &self.body {
            Body::MlpScorer(m) => m.layers[..m.layers.len() - 1].iter().map(|l| l.out).collect(),
            _ => Vec::new(),
        }
    }

    /// Convolution channels of a toy backbone (0 for other kinds).
    pub fn channels(&self) -> usize {
        match &self.body {
            Body::ToyBackbone(b) => b.conv.out_c,
            _ => 0,
        }
    }

    // ---- parameters ----

    pub fn param_count(&self) -> usize {
        match &self.body {
            Body::Linear(d) | Body::AffineSigmoid(d) => d.param_count(),
            Body::ToyBackbone(b) => b.conv.param_count() + b.head.param_count(),
            Body::MlpScorer(m) => m.layers.iter().map(Dense::param_count).sum(),
            Body::Composition { outer, inner } => inner.param_count() + outer.param_count(),
            Body::PairAdapter { backbone, .. } => backbone.param_count(),
        }
    }

    /// Flat parameter vector. Composition order is inner then outer.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.write_params(&mut out);
        out
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        match &self.body {
            Body::Linear(d) | Body::AffineSigmoid(d) => d.write_params(out),
            Body::ToyBackbone(b) => {
                b.conv.write_params(out);
                b.head.write_params(out);
            }
            Body::MlpScorer(m) => m.layers.iter().for_each(|l| l.write_params(out)),
            Body::Composition { outer, inner } => {
                inner.write_params(out);
                outer.write_params(out);
            }
            Body::PairAdapter { backbone, .. } => backbone.write_params(out),
        }
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        check_finite(params)?;
        self.read_params(params);
        Ok(())
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        match &mut self.body {
            Body::Linear(d) | Body::AffineSigmoid(d) => d.read_params(src),
            Body::ToyBackbone(b) => {
                let n = b.conv.read_params(src);
                n + b.head.read_params(&src[n..])
            }
            Body::MlpScorer(m) => {
                let mut n = 0;
                for l in &mut m.layers {
                    n += l.read_params(&src[n..]);
                }
                n
            }
            Body::Composition { outer, inner } => {
                let n = inner.read_params(src);
                n + outer.read_params(&src[n..])
            }
            Body::PairAdapter { backbone, .. } => backbone.read_params(src),
        }
    }

    /// Applies `params -= lr * grad` in place.
    pub(crate) fn sgd_step(&mut self, grad: &[f64], lr: f64) {
        let mut p = self.parameters();
        for (pi, gi) in p.iter_mut().zip(grad) {
            *pi -= lr * gi;
        }
        self.read_params(&p);
    }

    // ---- evaluation ----

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_shape(&self.input_shape)?;
        Ok(Tensor::from_parts(self.output_shape.clone(), self.forward_slice(x.data())))
    }

    pub fn jvp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        x.expect_shape(&self.input_shape)?;
        u.expect_shape(&self.input_shape)?;
        Ok(Tensor::from_parts(self.output_shape.clone(), self.jvp_slice(x.data(), u.data())))
    }

    pub fn vjp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        x.expect_shape(&self.input_shape)?;
        v.expect_shape(&self.output_shape)?;
        Ok(Tensor::from_parts(self.input_shape.clone(), self.vjp_slice(x.data(), v.data())))
    }

    /// Input cotangent together with the parameter cotangent (same layout
    /// as [`DifferentiableMap::parameters`]).
    pub fn vjp_with_params(&self, x: &Tensor, v: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        x.expect_shape(&self.input_shape)?;
        v.expect_shape(&self.output_shape)?;
        let mut grad = vec![0.0; self.param_count()];
        let gx = self.vjp_params_slice(x.data(), v.data(), &mut grad)?;
        Ok((Tensor::from_parts(self.input_shape.clone(), gx), grad))
    }

    pub(crate) fn forward_slice(&self, x: &[f64]) -> Vec<f64> {
        match &self.body {
            Body::Linear(d) => d.forward(x),
            Body::AffineSigmoid(d) => {
                let mut y = d.forward(x);
                y.iter_mut().for_each(|v| *v = sigmoid(*v));
                y
            }
            Body::ToyBackbone(b) => b.forward_cached(x).1,
            Body::MlpScorer(m) => m.forward(x),
            Body::Composition { outer, inner } => outer.forward_slice(&inner.forward_slice(x)),
            Body::PairAdapter { backbone, reference } => match reference {
                Some(r) => {
                    let mut y = r.clone();
                    y.extend(backbone.forward_slice(x));
                    y
                }
                None => {
                    let n = backbone.input_len();
                    let mut y = backbone.forward_slice(&x[..n]);
                    y.extend(backbone.forward_slice(&x[n..]));
                    y
                }
            },
        }
    }

    pub(crate) fn jvp_slice(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match &self.body {
            Body::Linear(d) => d.apply(u),
            Body::AffineSigmoid(d) => {
                let z = d.forward(x);
                let mut du = d.apply(u);
                for (dv, zv) in du.iter_mut().zip(&z) {
                    *dv *= sigmoid_slope(*zv);
                }
                du
            }
            Body::ToyBackbone(b) => {
                let (act, _) = b.forward_cached(x);
                b.jvp_with(&act, u)
            }
            Body::MlpScorer(m) => m.jvp_with(&m.forward_cached(x), u),
            Body::Composition { outer, inner } => {
                let mid = inner.forward_slice(x);
                outer.jvp_slice(&mid, &inner.jvp_slice(x, u))
            }
            Body::PairAdapter { backbone, reference } => match reference {
                Some(r) => {
                    let mut y = vec![0.0; r.len()];
                    y.extend(backbone.jvp_slice(x, u));
                    y
                }
                None => {
                    let n = backbone.input_len();
                    let mut y = backbone.jvp_slice(&x[..n], &u[..n]);
                    y.extend(backbone.jvp_slice(&x[n..], &u[n..]));
                    y
                }
            },
        }
    }

    pub(crate) fn vjp_slice(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        match &self.body {
            Body::Linear(d) => d.apply_t(v),
            Body::AffineSigmoid(d) => {
                let z = d.forward(x);
                let g: Vec<f64> = v.iter().zip(&z).map(|(vv, zv)| vv * sigmoid_slope(*zv)).collect();
                d.apply_t(&g)
            }
            Body::ToyBackbone(b) => {
                let (act, _) = b.forward_cached(x);
                b.vjp_with(&act, v)
            }
            Body::MlpScorer(m) => m.vjp_with(&m.forward_cached(x), v, None),
            Body::Composition { outer, inner } => {
                let mid = inner.forward_slice(x);
                inner.vjp_slice(x, &outer.vjp_slice(&mid, v))
            }
            Body::PairAdapter { backbone, reference } => {
                let d = backbone.output_len();
                match reference {
                    Some(_) => backbone.vjp_slice(x, &v[d..]),
                    None => {
                        let n = backbone.input_len();
                        let mut g = backbone.vjp_slice(&x[..n], &v[..d]);
                        g.extend(backbone.vjp_slice(&x[n..], &v[d..]));
                        g
                    }
                }
            }
        }
    }

    pub(crate) fn vjp_params_slice(&self, x: &[f64], v: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        match &self.body {
            Body::Linear(d) => {
                d.accumulate_param_grad(x, v, grad);
                Ok(d.apply_t(v))
            }
            Body::AffineSigmoid(d) => {
                let z = d.forward(x);
                let g: Vec<f64> = v.iter().zip(&z).map(|(vv, zv)| vv * sigmoid_slope(*zv)).collect();
                d.accumulate_param_grad(x, &g, grad);
                Ok(d.apply_t(&g))
            }
            Body::MlpScorer(m) => Ok(m.vjp_with(&m.forward_cached(x), v, Some(grad))),
            Body::Composition { outer, inner } => {
                let mid = inner.forward_slice(x);
                let ni = inner.param_count();
                let (gi, go) = grad.split_at_mut(ni);
                let gm = outer.vjp_params_slice(&mid, v, go)?;
                inner.vjp_params_slice(x, &gm, gi)
            }
            Body::ToyBackbone(_) | Body::PairAdapter { .. } => Err(Error::InvalidArgument(format!(
                "{} parameters are frozen; no parameter gradient is provided",
                self.kind()
            ))),
        }
    }
}

/// Derivative of the clamped logistic at pre-activation `z`.
#[inline]
fn sigmoid_slope(z: f64) -> f64 {
    if z.abs() >= SIGMOID_CLAMP {
        0.0
    } else {
        let y = sigmoid(z);
        y * (1.0 - y)
    }
}

/// `outer ∘ inner`.
pub fn compose(outer: DifferentiableMap, inner: DifferentiableMap) -> Result<DifferentiableMap> {
    if inner.output_shape != outer.input_shape {
        return Err(Error::shape(&outer.input_shape, &inner.output_shape));
    }
    let input_shape = inner.input_shape.clone();
    let output_shape = outer.output_shape.clone();
    let seed = inner.seed;
    Ok(DifferentiableMap::from_body(
        Body::Composition { outer: Box::new(outer), inner: Box::new(inner) },
        input_shape,
        output_shape,
        seed,
    ))
}

fn positive(dims: &[usize]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("dimensions must be positive: {dims:?}")));
    }
    Ok(())
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("parameters must be finite".into()));
    }
    Ok(())
}
