//! Two-branch regression network with exact reverse-mode gradients.
//!
//! Layout: spectra branch of dense layers each followed by a rational
//! activation, height branch of dense layers each followed by a sine
//! activation, then a head over the concatenated branch outputs ending in a
//! single linear unit.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pau::{PauParams, SineParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectraActivation {
    Pau,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeightActivation {
    Sine,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_width: usize,
    pub spectra_hidden: Vec<usize>,
    pub height_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub spectra_activation: SpectraActivation,
    pub height_activation: HeightActivation,
    /// One coefficient set per unit instead of one per layer.
    pub per_unit_pau: bool,
    /// `false` drops the height branch entirely.
    pub use_height: bool,
}

impl Architecture {
    pub fn new(input_width: usize) -> Self {
        Architecture {
            input_width,
            spectra_hidden: vec![128, 64],
            height_hidden: vec![64, 64],
            head_hidden: vec![64],
            spectra_activation: SpectraActivation::Pau,
            height_activation: HeightActivation::Sine,
            per_unit_pau: false,
            use_height: true,
        }
    }

    /// Spectra-only network for the ablation without height.
    pub fn vibration_only(input_width: usize) -> Self {
        Architecture {
            use_height: false,
            ..Self::new(input_width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = self
            .spectra_hidden
            .iter()
            .chain(&self.height_hidden)
            .chain(&self.head_hidden);
        if self.input_width == 0 || self.spectra_hidden.is_empty() || widths.clone().any(|&w| w == 0) {
            return Err(Error::InvalidInput(
                "every layer width and the input width must be positive".into(),
            ));
        }
        if self.use_height && self.height_hidden.is_empty() {
            return Err(Error::InvalidInput("height branch needs at least one layer".into()));
        }
        Ok(())
    }

    fn head_input(&self) -> usize {
        let s = *self.spectra_hidden.last().expect("validated");
        let h = if self.use_height {
            *self.height_hidden.last().expect("validated")
        } else {
            0
        };
        s + h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    Identity,
    Relu,
    /// Length 1 (shared across units) or the layer width.
    Pau {
        units: Vec<PauParams>,
    },
    Sine {
        params: SineParams,
    },
}

impl Activation {
    fn param_count(&self) -> usize {
        match self {
            Activation::Pau { units } => units.iter().map(|p| p.numer.len() + p.denom.len()).sum(),
            Activation::Sine { .. } => 1,
            _ => 0,
        }
    }

    fn forward(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        let mut a = z.clone();
        match self {
            Activation::Identity => {}
            Activation::Relu => a.mapv_inplace(|v| v.max(0.0)),
            Activation::Sine { params } => a.mapv_inplace(|v| (params.nu * v).sin()),
            Activation::Pau { units } => {
                for (j, mut col) in a.columns_mut().into_iter().enumerate() {
                    let p = &units[j % units.len()];
                    for v in col.iter_mut() {
                        let (num, _, q, _) = p.checked_parts(*v)?;
                        *v = num / q;
                    }
                }
            }
        }
        Ok(a)
    }

    /// Returns `dL/dz` and accumulates activation parameter gradients.
    fn backward(&self, z: &Array2<f64>, da: &Array2<f64>, grad: &mut Activation) -> Result<Array2<f64>> {
        let mut dz = da.clone();
        match (self, grad) {
            (Activation::Identity, _) => {}
            (Activation::Relu, _) => dz.zip_mut_with(z, |d, &v| {
                if v <= 0.0 {
                    *d = 0.0
                }
            }),
            (Activation::Sine { params }, Activation::Sine { params: g }) => {
                let nu = params.nu;
                ndarray::Zip::from(&mut dz).and(z).for_each(|d, &v| {
                    let c = (nu * v).cos();
                    g.nu += *d * v * c;
                    *d *= nu * c;
                });
            }
            (Activation::Pau { units }, Activation::Pau { units: g }) => {
                for (j, (mut dcol, zcol)) in dz.columns_mut().into_iter().zip(z.columns()).enumerate() {
                    let k = j % units.len();
                    for (d, &v) in dcol.iter_mut().zip(zcol) {
                        *d = units[k].backward_into(v, *d, &mut g[k])?;
                    }
                }
            }
            _ => unreachable!("gradient mirrors parameter structure"),
        }
        Ok(dz)
    }

    fn zeros_like(&self) -> Activation {
        match self {
            Activation::Pau { units } => Activation::Pau {
                units: units
                    .iter()
                    .map(|p| PauParams {
                        numer: vec![0.0; p.numer.len()],
                        denom: vec![0.0; p.denom.len()],
                    })
                    .collect(),
            },
            Activation::Sine { .. } => Activation::Sine {
                params: SineParams { nu: 0.0 },
            },
            other => other.clone(),
        }
    }
}

/// Dense layer `a = act(x W + b)` with `W` stored as `(in, out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    /// Uniform `±1/√fan_in` for weights and biases.
    fn init(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Layer {
            weight: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-bound..bound)),
            bias: Array1::from_shape_simple_fn(fan_out, || rng.gen_range(-bound..bound)),
            activation,
        }
    }

    fn zeros_like(&self) -> Layer {
        Layer {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
            activation: self.activation.zeros_like(),
        }
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len() + self.activation.param_count()
    }

    fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let z = x.dot(&self.weight) + &self.bias;
        let a = self.activation.forward(&z)?;
        Ok((z, a))
    }

    fn backward(&self, x: ArrayView2<f64>, z: &Array2<f64>, da: &Array2<f64>, grad: &mut Layer) -> Result<Array2<f64>> {
        let dz = self.activation.backward(z, da, &mut grad.activation)?;
        grad.weight += &x.t().dot(&dz);
        grad.bias += &dz.sum_axis(Axis(0));
        Ok(dz.dot(&self.weight.t()))
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a [f64])) {
        f(self.weight.as_slice().expect("standard layout"));
        f(self.bias.as_slice().expect("standard layout"));
        match &self.activation {
            Activation::Pau { units } => {
                for p in units {
                    f(&p.numer);
                    f(&p.denom);
                }
            }
            Activation::Sine { params } => f(std::slice::from_ref(&params.nu)),
            _ => {}
        }
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut [f64])) {
        f(self.weight.as_slice_mut().expect("standard layout"));
        f(self.bias.as_slice_mut().expect("standard layout"));
        match &mut self.activation {
            Activation::Pau { units } => {
                for p in units {
                    f(&mut p.numer);
                    f(&mut p.denom);
                }
            }
            Activation::Sine { params } => f(std::slice::from_mut(&mut params.nu)),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub spectra: Vec<Layer>,
    pub height: Vec<Layer>,
    pub head: Vec<Layer>,
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache {
    spectra: Vec<(Array2<f64>, Array2<f64>)>,
    height: Vec<(Array2<f64>, Array2<f64>)>,
    head: Vec<(Array2<f64>, Array2<f64>)>,
    head_input: Array2<f64>,
}

impl NetworkParams {
    pub fn init(arch: &Architecture, rng: &mut ChaCha8Rng) -> Result<Self> {
        arch.validate()?;
        let mut fan_in = arch.input_width;
        let mut spectra = Vec::new();
        for &w in &arch.spectra_hidden {
            let act = match arch.spectra_activation {
                SpectraActivation::Pau => Activation::Pau {
                    units: vec![PauParams::relu_init(); if arch.per_unit_pau { w } else { 1 }],
                },
                SpectraActivation::Identity => Activation::Identity,
            };
            spectra.push(Layer::init(fan_in, w, act, rng));
            fan_in = w;
        }
        let mut height = Vec::new();
        if arch.use_height {
            let mut fan_in = 1;
            for &w in &arch.height_hidden {
                let act = match arch.height_activation {
                    HeightActivation::Sine => Activation::Sine {
                        params: SineParams::default(),
                    },
                    HeightActivation::Identity => Activation::Identity,
                };
                height.push(Layer::init(fan_in, w, act, rng));
                fan_in = w;
            }
        }
        let mut head = Vec::new();
        let mut fan_in = arch.head_input();
        for &w in &arch.head_hidden {
            head.push(Layer::init(fan_in, w, Activation::Relu, rng));
            fan_in = w;
        }
        head.push(Layer::init(fan_in, 1, Activation::Identity, rng));
        Ok(NetworkParams {
            arch: arch.clone(),
            spectra,
            height,
            head,
        })
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.spectra.iter().chain(&self.height).chain(&self.head)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.spectra
            .iter_mut()
            .chain(self.height.iter_mut())
            .chain(self.head.iter_mut())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().map(Layer::param_count).sum()
    }

    pub fn zeros_like(&self) -> NetworkParams {
        NetworkParams {
            arch: self.arch.clone(),
            spectra: self.spectra.iter().map(Layer::zeros_like).collect(),
            height: self.height.iter().map(Layer::zeros_like).collect(),
            head: self.head.iter().map(Layer::zeros_like).collect(),
        }
    }

    /// All parameters in a fixed order (layer by layer: weights, biases,
    /// activation coefficients).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in self.layers() {
            l.visit(&mut |s| out.extend_from_slice(s));
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.parameter_count();
        if flat.len() != n {
            return Err(Error::WidthMismatch {
                expected: n,
                actual: flat.len(),
            });
        }
        let mut off = 0;
        for l in self.layers_mut() {
            l.visit_mut(&mut |s| {
                s.copy_from_slice(&flat[off..off + s.len()]);
                off += s.len();
            });
        }
        Ok(())
    }

    /// Applies `f(param, index)` over the flat order in place.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64, usize)) {
        let mut i = 0;
        for l in self.layers_mut() {
            l.visit_mut(&mut |s| {
                for v in s {
                    f(v, i);
                    i += 1;
                }
            });
        }
    }

    fn check_inputs(&self, spectra: &ArrayView2<f64>, height: &ArrayView2<f64>) -> Result<()> {
        if spectra.ncols() != self.arch.input_width {
            return Err(Error::WidthMismatch {
                expected: self.arch.input_width,
                actual: spectra.ncols(),
            });
        }
        if height.ncols() != 1 || height.nrows() != spectra.nrows() {
            return Err(Error::WidthMismatch {
                expected: spectra.nrows(),
                actual: height.nrows(),
            });
        }
        Ok(())
    }

    /// Batch forward on standardized inputs; `height` is `(n, 1)`.
    pub fn forward(&self, spectra: ArrayView2<f64>, height: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward_cached(spectra, height)?.0)
    }

    pub fn forward_cached(
        &self,
        spectra: ArrayView2<f64>,
        height: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, ForwardCache)> {
        self.check_inputs(&spectra, &height)?;
        let run = |layers: &[Layer], x: ArrayView2<f64>| -> Result<Vec<(Array2<f64>, Array2<f64>)>> {
            let mut out: Vec<(Array2<f64>, Array2<f64>)> = Vec::with_capacity(layers.len());
            for l in layers {
                let step = match out.last() {
                    Some((_, a)) => l.forward(a.view())?,
                    None => l.forward(x)?,
                };
                out.push(step);
            }
            Ok(out)
        };
        let s = run(&self.spectra, spectra)?;
        let h = run(&self.height, height)?;
        let s_out = s.last().expect("validated").1.view();
        let head_input = match h.last() {
            Some((_, a)) => concatenate![Axis(1), s_out, a.view()],
            None => s_out.to_owned(),
        };
        let hd = run(&self.head, head_input.view())?;
        let y = hd.last().expect("output layer").1.column(0).to_owned();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "network output".into(),
            });
        }
        Ok((
            y,
            ForwardCache {
                spectra: s,
                height: h,
                head: hd,
                head_input,
            },
        ))
    }

    /// Parameter gradient of `Σ dy_i · y_i` given the forward cache.
    pub fn backward(
        &self,
        spectra: ArrayView2<f64>,
        height: ArrayView2<f64>,
        cache: &ForwardCache,
        dy: &Array1<f64>,
    ) -> Result<NetworkParams> {
        let mut grad = self.zeros_like();
        fn back(
            layers: &[Layer],
            grads: &mut [Layer],
            acts: &[(Array2<f64>, Array2<f64>)],
            x: ArrayView2<f64>,
            mut da: Array2<f64>,
        ) -> Result<Array2<f64>> {
            for i in (0..layers.len()).rev() {
                let input = if i == 0 { x.view() } else { acts[i - 1].1.view() };
                da = layers[i].backward(input, &acts[i].0, &da, &mut grads[i])?;
            }
            Ok(da)
        }
        let dy2 = dy.view().insert_axis(Axis(1)).to_owned();
        let d_head = back(&self.head, &mut grad.head, &cache.head, cache.head_input.view(), dy2)?;
        let sw = *self.arch.spectra_hidden.last().expect("validated");
        back(
            &self.spectra,
            &mut grad.spectra,
            &cache.spectra,
            spectra,
            d_head.slice(s![.., ..sw]).to_owned(),
        )?;
        if !self.height.is_empty() {
            back(
                &self.height,
                &mut grad.height,
                &cache.height,
                height,
                d_head.slice(s![.., sw..]).to_owned(),
            )?;
        }
        Ok(grad)
    }
}

/// Mean absolute error and its gradient with respect to the predictions.
pub fn l1_loss(pred: &Array1<f64>, target: &Array1<f64>) -> (f64, Array1<f64>) {
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d.abs()).sum::<f64>() / n;
    let grad = diff.mapv(|d| {
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    });
    (loss, grad)
}
