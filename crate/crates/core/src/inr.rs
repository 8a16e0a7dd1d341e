//! Implicit neural representation of the ROI image.
//!
//! A position `p` is lifted by random Fourier features
//! `γ(p) = [cos(2πBp); sin(2πBp)]`, passed through sine-activated hidden
//! layers `sin(κ(Wx + b))`, and mapped to a scattering coefficient by a
//! sigmoid output scaled to `(0, σ_max)`. Gradients are computed by hand.

use std::f64::consts::PI;
use std::fmt;
use std::io::Read;
use std::path::Path as FsPath;
use std::str::FromStr;

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binfmt::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scene::Point3;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RISC";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sine,
    Relu,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Sine => "sine",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" | "sin" => Ok(Activation::Sine),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::invalid(format!("unknown activation `{s}`"))),
        }
    }
}

/// Architecture and initialization hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    /// Fourier feature count N_pe (input width is `2 N_pe`).
    pub n_pe: usize,
    /// Standard deviation χ of the encoding matrix entries.
    pub chi: f64,
    /// Feed raw coordinates instead of Fourier features.
    pub positional_encoding: bool,
    pub hidden_width: usize,
    /// Weight layers including the output layer.
    pub layers: usize,
    /// Sine frequency κ.
    pub kappa: f64,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            n_pe: 256,
            chi: 10.0,
            positional_encoding: true,
            hidden_width: 256,
            layers: 6,
            kappa: 30.0,
            activation: Activation::Sine,
        }
    }
}

impl ModelSpec {
    pub fn input_width(&self) -> usize {
        if self.positional_encoding {
            2 * self.n_pe
        } else {
            3
        }
    }

    /// Layer widths from input to the scalar output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_width()];
        dims.resize(self.layers, self.hidden_width);
        dims.push(1);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.hidden_width < 1 || (self.positional_encoding && self.n_pe < 1) {
            return Err(Error::invalid("model needs at least one layer, width and feature"));
        }
        if !(self.kappa > 0.0) || !(self.chi > 0.0) {
            return Err(Error::invalid("kappa and chi must be positive"));
        }
        Ok(())
    }
}

/// Fixed random projection `B` with entries drawn from `N(0, χ²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingMatrix {
    pub b: Array2<f64>,
    pub chi: f64,
    pub seed: u64,
}

impl EncodingMatrix {
    pub fn new(n_pe: usize, chi: f64, seed: u64) -> Result<Self> {
        if n_pe == 0 || !(chi > 0.0) {
            return Err(Error::invalid("encoding needs N_pe >= 1 and chi > 0"));
        }
        let mut rng = rng::stream(seed, Stream::Encoding);
        let normal = Normal::new(0.0, chi).expect("positive chi");
        let b = Array2::from_shape_simple_fn((n_pe, 3), || normal.sample(&mut rng));
        Ok(Self { b, chi, seed })
    }

    pub fn n_pe(&self) -> usize {
        self.b.nrows()
    }
}

/// Rows `[cos(2πBp), sin(2πBp)]` for each point.
pub fn positional_encode(b: ArrayView2<f64>, points: &[Point3]) -> Array2<f64> {
    let p = points_matrix(points);
    let proj = p.dot(&b.t()) * (2.0 * PI);
    concatenate![Axis(1), proj.mapv(f64::cos), proj.mapv(f64::sin)]
}

fn points_matrix(points: &[Point3]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 3), |(i, j)| points[i].to_array()[j])
}

/// How positions enter the network.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoding {
    Fourier(EncodingMatrix),
    Raw,
}

impl Encoding {
    pub fn width(&self) -> usize {
        match self {
            Encoding::Fourier(e) => 2 * e.n_pe(),
            Encoding::Raw => 3,
        }
    }

    pub fn encode(&self, points: &[Point3]) -> Array2<f64> {
        match self {
            Encoding::Fourier(e) => positional_encode(e.b.view(), points),
            Encoding::Raw => points_matrix(points),
        }
    }
}

/// Fully connected layer `x ↦ W x + b`, with `W` shaped `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { w: Array2::zeros((n_out, n_in)), b: Array1::zeros(n_out) }
    }

    pub fn n_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.w.nrows()
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.n_in(), self.n_out())
    }
}

/// Weights of the MLP plus the activation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
    pub kappa: f64,
    pub activation: Activation,
    /// Sigmoid output is multiplied by this (σ_max).
    pub output_scale: f64,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) || *dims.last().unwrap() != 1 {
        return Err(Error::invalid(format!("invalid layer dims {dims:?}")));
    }
    Ok(())
}

/// SIREN initialization: first layer `U(-1/n, 1/n)`, later layers
/// `U(-√(6/n)/κ, √(6/n)/κ)`, biases `U(-√(1/n), √(1/n))` with `n` the
/// layer's fan-in.
pub fn init_siren(dims: &[usize], kappa: f64, seed: u64) -> Result<MlpParams> {
    check_dims(dims)?;
    if !(kappa > 0.0) {
        return Err(Error::invalid("kappa must be positive"));
    }
    let mut rng = rng::stream(seed, Stream::Weights);
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, d)| {
            let n_in = d[0] as f64;
            let bound = if i == 0 { 1.0 / n_in } else { (6.0 / n_in).sqrt() / kappa };
            uniform_layer(&mut rng, d[0], d[1], bound, (1.0 / n_in).sqrt())
        })
        .collect();
    Ok(MlpParams { layers, kappa, activation: Activation::Sine, output_scale: 1.0 })
}

fn uniform_layer(rng: &mut impl Rng, n_in: usize, n_out: usize, w_bound: f64, b_bound: f64) -> Dense {
    let w = Array2::from_shape_simple_fn((n_out, n_in), || rng.random_range(-w_bound..=w_bound));
    let b = Array1::from_shape_simple_fn(n_out, || rng.random_range(-b_bound..=b_bound));
    Dense { w, b }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Intermediate values of a forward pass, consumed by backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations `Wx + b` of each hidden layer.
    pre: Vec<Array2<f64>>,
    /// Sigmoid output before scaling.
    unit_output: Array1<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.unit_output.len()
    }
}

/// Parameter gradients, shaped like [`MlpParams::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self { layers: params.layers.iter().map(Dense::zeros_like).collect() }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.iter().chain(l.b.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.w *= factor;
            l.b *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
    }
}

impl MlpParams {
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].n_in()];
        d.extend(self.layers.iter().map(Dense::n_out));
        d
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Mutable access to the `i`-th parameter in layer order (weights
    /// row-major, then biases).
    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for l in &mut self.layers {
            if i < l.w.len() {
                let c = l.w.ncols();
                return &mut l.w[[i / c, i % c]];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return &mut l.b[i];
            }
            i -= l.b.len();
        }
        panic!("parameter index out of range")
    }

    fn activate(&self, z: &Array2<f64>) -> Array2<f64> {
        match self.activation {
            Activation::Sine => z.mapv(|v| (self.kappa * v).sin()),
            Activation::Relu => z.mapv(|v| (self.kappa * v).max(0.0)),
        }
    }

    /// Forward pass over encoded inputs (`batch × input_width`).
    pub fn forward(&self, x: &Array2<f64>) -> (Array1<f64>, ForwardCache) {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n - 1);
        let mut h = x.clone();
        for layer in &self.layers[..n - 1] {
            let z = layer.apply(&h);
            let a = self.activate(&z);
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        let z_out = self.layers[n - 1].apply(&h);
        inputs.push(h);
        let unit_output = z_out.column(0).mapv(sigmoid);
        let sigma = &unit_output * self.output_scale;
        (sigma, ForwardCache { inputs, pre, unit_output })
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, x: &Array2<f64>) -> Array1<f64> {
        let n = self.layers.len();
        let mut h = x.clone();
        for layer in &self.layers[..n - 1] {
            h = self.activate(&layer.apply(&h));
        }
        self.layers[n - 1].apply(&h).column(0).mapv(|z| sigmoid(z) * self.output_scale)
    }

    /// Gradients of `Σ_i dl_dsigma[i] · σ̂_i` with respect to every weight
    /// and bias.
    pub fn backward(&self, cache: &ForwardCache, dl_dsigma: ArrayView1<f64>) -> Result<Gradients> {
        if dl_dsigma.len() != cache.batch() || cache.inputs.len() != self.layers.len() {
            return Err(Error::invalid(format!(
                "upstream gradient has {} entries for a batch of {}",
                dl_dsigma.len(),
                cache.batch()
            )));
        }
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        // d σ̂ / d z_out = scale · s (1 - s)
        let dz_out = Zip::from(&dl_dsigma)
            .and(&cache.unit_output)
            .map_collect(|&g, &s| g * self.output_scale * s * (1.0 - s));
        let mut dz = dz_out.insert_axis(Axis(1));
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let x = &cache.inputs[i];
            grads.push(Dense { w: dz.t().dot(x), b: dz.sum_axis(Axis(0)) });
            if i > 0 {
                let dx = dz.dot(&layer.w);
                let z = &cache.pre[i - 1];
                dz = match self.activation {
                    Activation::Sine => {
                        let k = self.kappa;
                        Zip::from(&dx).and(z).map_collect(|&g, &zv| g * k * (k * zv).cos())
                    }
                    Activation::Relu => {
                        let k = self.kappa;
                        Zip::from(&dx).and(z).map_collect(|&g, &zv| if zv > 0.0 { g * k } else { 0.0 })
                    }
                };
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }
}

/// The encoding plus MLP: a continuous map from position to σ.
#[derive(Clone, Debug, PartialEq)]
pub struct InrModel {
    pub encoding: Encoding,
    pub params: MlpParams,
}

impl InrModel {
    pub fn new(spec: &ModelSpec, sigma_max: f64, seed: u64) -> Result<Self> {
        spec.validate()?;
        let encoding = if spec.positional_encoding {
            Encoding::Fourier(EncodingMatrix::new(spec.n_pe, spec.chi, seed)?)
        } else {
            Encoding::Raw
        };
        let dims = spec.dims();
        // the ReLU variant differs only in the nonlinearity
        let mut params = init_siren(&dims, spec.kappa, seed)?;
        params.activation = spec.activation;
        params.output_scale = sigma_max;
        Self::from_parts(encoding, params)
    }

    pub fn from_parts(encoding: Encoding, params: MlpParams) -> Result<Self> {
        if encoding.width() != params.input_width() {
            return Err(Error::invalid(format!(
                "encoding width {} does not match network input {}",
                encoding.width(),
                params.input_width()
            )));
        }
        Ok(Self { encoding, params })
    }

    pub fn encode(&self, points: &[Point3]) -> Array2<f64> {
        self.encoding.encode(points)
    }

    pub fn forward(&self, points: &[Point3]) -> (Array1<f64>, ForwardCache) {
        self.params.forward(&self.encode(points))
    }

    pub fn predict(&self, points: &[Point3]) -> Array1<f64> {
        self.params.predict(&self.encode(points))
    }

    pub fn backward(&self, cache: &ForwardCache, dl_dsigma: ArrayView1<f64>) -> Result<Gradients> {
        self.params.backward(cache, dl_dsigma)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(Vec::new());
        self.write_to(&mut w).expect("in-memory write");
        w.finish().expect("in-memory write")
    }

    pub(crate) fn write_to<W: std::io::Write>(&self, w: &mut Writer<W>) -> Result<()> {
        w.header(CHECKPOINT_MAGIC, binfmt::FORMAT_VERSION)?;
        w.u8(match self.params.activation {
            Activation::Sine => 0,
            Activation::Relu => 1,
        })?;
        match &self.encoding {
            Encoding::Fourier(e) => {
                w.u8(1)?;
                w.u64(e.seed)?;
                w.f64(e.chi)?;
                w.u64(e.n_pe() as u64)?;
                w.f64s(e.b.iter())?;
            }
            Encoding::Raw => w.u8(0)?,
        }
        w.f64(self.params.kappa)?;
        w.f64(self.params.output_scale)?;
        w.u64(self.params.layers.len() as u64)?;
        for l in &self.params.layers {
            w.u64(l.n_out() as u64)?;
            w.u64(l.n_in() as u64)?;
            w.f64s(l.w.iter())?;
            w.f64s(l.b.iter())?;
        }
        Ok(())
    }

    pub(crate) fn read_from<R: Read>(r: &mut Reader<R>) -> Result<Self> {
        r.header(CHECKPOINT_MAGIC, binfmt::FORMAT_VERSION)?;
        let activation = match r.u8()? {
            0 => Activation::Sine,
            1 => Activation::Relu,
            v => return Err(Error::Format(format!("unknown activation tag {v}"))),
        };
        let encoding = match r.u8()? {
            0 => Encoding::Raw,
            1 => {
                let seed = r.u64()?;
                let chi = r.f64()?;
                let n_pe = r.length()?;
                let b = Array2::from_shape_vec((n_pe, 3), r.f64s(n_pe * 3)?)
                    .map_err(|e| Error::Format(e.to_string()))?;
                Encoding::Fourier(EncodingMatrix { b, chi, seed })
            }
            v => return Err(Error::Format(format!("unknown encoding tag {v}"))),
        };
        let kappa = r.f64()?;
        let output_scale = r.f64()?;
        let n_layers = r.length()?;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let out = r.length()?;
            let inp = r.length()?;
            let w = Array2::from_shape_vec((out, inp), r.f64s(out * inp)?).map_err(|e| Error::Format(e.to_string()))?;
            let b = Array1::from(r.f64s(out)?);
            layers.push(Dense { w, b });
        }
        if layers.is_empty() || layers.windows(2).any(|p| p[0].n_out() != p[1].n_in()) {
            return Err(Error::Format("inconsistent layer shapes".into()));
        }
        Self::from_parts(encoding, MlpParams { layers, kappa, activation, output_scale })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        Self::read_from(&mut r)
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        binfmt::write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
