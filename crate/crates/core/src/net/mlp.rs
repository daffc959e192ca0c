use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, check_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Elu,
    /// `sin(omega0 * z)`
    Sine,
    Linear,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Elu => 1,
            Activation::Sine => 2,
            Activation::Linear => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Elu),
            2 => Some(Activation::Sine),
            3 => Some(Activation::Linear),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Sine => "sine",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "elu" => Some(Activation::Elu),
            "sine" | "siren" => Some(Activation::Sine),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }

    #[inline]
    fn value(self, z: f64, omega: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Sine => (omega * z).sin(),
            Activation::Linear => z,
        }
    }

    /// First derivative; ReLU uses 0 at the kink.
    #[inline]
    fn d1(self, z: f64, omega: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Sine => omega * (omega * z).cos(),
            Activation::Linear => 1.0,
        }
    }

    #[inline]
    fn d2(self, z: f64, omega: f64) -> f64 {
        match self {
            Activation::Relu | Activation::Linear => 0.0,
            Activation::Elu => {
                if z > 0.0 {
                    0.0
                } else {
                    z.exp()
                }
            }
            Activation::Sine => -omega * omega * (omega * z).sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub activation: Activation,
    pub omega0: f64,
    /// `d_out x d_in`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn zeros(d_in: usize, d_out: usize, activation: Activation, omega0: f64) -> Self {
        Layer {
            activation,
            omega0,
            weights: DMatrix::zeros(d_out, d_in),
            bias: DVector::zeros(d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.nrows()
    }

    pub(crate) fn act(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let (a, w) = (self.activation, self.omega0);
        z.map(|v| a.value(v, w))
    }

    pub(crate) fn act_d1(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let (a, w) = (self.activation, self.omega0);
        z.map(|v| a.d1(v, w))
    }

    pub(crate) fn act_d2(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let (a, w) = (self.activation, self.omega0);
        z.map(|v| a.d2(v, w))
    }
}

/// Hidden-layer layout and activation; the output layer is always linear.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkArch {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Frequency of the first layer when `activation` is `Sine`.
    pub omega_first: f64,
    /// Frequency of later sine layers.
    pub omega_hidden: f64,
}

impl NetworkArch {
    pub fn critic_default() -> Self {
        NetworkArch {
            hidden: vec![64; 4],
            activation: Activation::Sine,
            omega_first: 30.0,
            omega_hidden: 1.0,
        }
    }

    pub fn actor_default() -> Self {
        NetworkArch {
            hidden: vec![64; 3],
            activation: Activation::Relu,
            omega_first: 30.0,
            omega_hidden: 1.0,
        }
    }

    /// Random initialization: SIREN scheme for sine networks (first layer
    /// `U(-1/d_in, 1/d_in)`, later layers `U(-sqrt(6/d_in)/omega, ..)`), He
    /// uniform weights and zero biases otherwise.
    pub fn build<R: Rng>(&self, d_in: usize, d_out: usize, rng: &mut R) -> MlpNetwork {
        let mut sizes = vec![d_in];
        sizes.extend(&self.hidden);
        sizes.push(d_out);
        let depth = sizes.len() - 1;
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let is_output = l + 1 == depth;
            let activation = if is_output {
                Activation::Linear
            } else {
                self.activation
            };
            let omega0 = if l == 0 {
                self.omega_first
            } else {
                self.omega_hidden
            };
            let mut layer = Layer::zeros(fan_in, fan_out, activation, omega0);
            let sine_net = self.activation == Activation::Sine;
            let bound = if sine_net && l == 0 {
                1.0 / fan_in as f64
            } else if sine_net {
                (6.0 / fan_in as f64).sqrt() / self.omega_hidden
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            for w in layer.weights.iter_mut() {
                *w = rng.gen_range(-bound..bound);
            }
            if sine_net {
                for b in layer.bias.iter_mut() {
                    *b = rng.gen_range(-bound..bound);
                }
            }
            layers.push(layer);
        }
        MlpNetwork { layers }
    }
}

/// Dense feed-forward network `h_l = phi_l(W_l h_{l-1} + b_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    pub layers: Vec<Layer>,
}

/// Per-layer pre- and post-activations for a batch laid out column-wise.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    pub input: DMatrix<f64>,
    pub pre: Vec<DMatrix<f64>>,
    pub post: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.post.last().unwrap()
    }
}

/// Parameter-shaped gradient (or moment) storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        ParamGrads {
            weights: net
                .layers
                .iter()
                .map(|l| DMatrix::zeros(l.d_out(), l.d_in()))
                .collect(),
            biases: net.layers.iter().map(|l| DVector::zeros(l.d_out())).collect(),
        }
    }

    /// Flattened in the same order as [`MlpNetwork::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }
}

impl MlpNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim("layer input", pair[0].d_out(), pair[1].d_in())?;
        }
        for l in &layers {
            check_dim("bias", l.d_out(), l.bias.len())?;
        }
        Ok(MlpNetwork { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().d_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer: weights (column-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim("parameters", self.param_count(), params.len())?;
        let mut it = params.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub(crate) fn forward_cache(&self, input: DMatrix<f64>) -> ForwardCache {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let h = if i == 0 { &input } else { &post[i - 1] };
            let mut z = &layer.weights * h;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            post.push(layer.act(&z));
            pre.push(z);
        }
        ForwardCache { input, pre, post }
    }

    /// Batch forward pass; columns of `inputs` are samples.
    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("network input", self.input_dim(), inputs.nrows())?;
        let mut h = inputs.clone();
        for layer in &self.layers {
            let mut z = &layer.weights * &h;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            h = layer.act(&z);
        }
        Ok(h)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), input.len())?;
        check_finite("network input", input)?;
        let out = self.forward_batch(&DMatrix::from_column_slice(input.len(), 1, input))?;
        Ok(out.iter().copied().collect())
    }

    /// Backward sweep of output seeds `seed` (`d_out x B`) through a cached
    /// forward pass. Returns the per-layer deltas `dy/dz_l` and the input
    /// gradient `W_1^T delta_1`.
    pub(crate) fn backward_deltas(
        &self,
        cache: &ForwardCache,
        seed: DMatrix<f64>,
    ) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        let depth = self.layers.len();
        let mut deltas: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); depth];
        let mut s = seed;
        for l in (0..depth).rev() {
            let d = self.layers[l].act_d1(&cache.pre[l]).component_mul(&s);
            s = self.layers[l].weights.transpose() * &d;
            deltas[l] = d;
        }
        (deltas, s)
    }

    /// Input gradients of a scalar-output network for a batch (`d_in x B`).
    pub fn input_gradient_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("network input", self.input_dim(), inputs.nrows())?;
        check_dim("network output", 1, self.output_dim())?;
        let cache = self.forward_cache(inputs.clone());
        let seed = DMatrix::from_element(1, inputs.ncols(), 1.0);
        Ok(self.backward_deltas(&cache, seed).1)
    }

    /// Jacobian of [`MlpNetwork::forward`] with respect to the input,
    /// `d_out x d_in`.
    pub fn input_gradient(&self, input: &[f64]) -> Result<DMatrix<f64>> {
        check_dim("network input", self.input_dim(), input.len())?;
        check_finite("network input", input)?;
        let d_out = self.output_dim();
        let x = DMatrix::from_fn(input.len(), d_out, |i, _| input[i]);
        let cache = self.forward_cache(x);
        let seed = DMatrix::identity(d_out, d_out);
        Ok(self.backward_deltas(&cache, seed).1.transpose())
    }

    /// Parameter gradients of `sum_b out_grad[:, b] . y_b` for a batch.
    pub(crate) fn backprop_output(&self, cache: &ForwardCache, out_grad: &DMatrix<f64>) -> ParamGrads {
        let mut grads = ParamGrads::zeros_like(self);
        let depth = self.layers.len();
        let mut zbar = self.layers[depth - 1]
            .act_d1(&cache.pre[depth - 1])
            .component_mul(out_grad);
        for l in (0..depth).rev() {
            let h_prev = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            grads.weights[l] = &zbar * h_prev.transpose();
            grads.biases[l] = zbar.column_sum();
            if l > 0 {
                let hbar = self.layers[l].weights.transpose() * &zbar;
                zbar = self.layers[l - 1].act_d1(&cache.pre[l - 1]).component_mul(&hbar);
            }
        }
        grads
    }

    /// Parameter gradients for an objective that depends on the outputs
    /// through `out_grad` and on the input gradient `W_1^T delta_1` through
    /// `input_grad_bar` (scalar-output networks only). The second part
    /// differentiates the backward sweep itself.
    pub(crate) fn backprop_with_input_grad(
        &self,
        cache: &ForwardCache,
        out_grad: &DMatrix<f64>,
        deltas: &[DMatrix<f64>],
        input_grad_bar: &DMatrix<f64>,
    ) -> ParamGrads {
        let depth = self.layers.len();
        let batch = cache.input.ncols();
        let mut grads = ParamGrads::zeros_like(self);
        let mut zbar_extra: Vec<DMatrix<f64>> = Vec::with_capacity(depth);

        // Reverse of the backward sweep, from the input side outwards.
        // G = W_1^T delta_1
        grads.weights[0] += &deltas[0] * input_grad_bar.transpose();
        let mut delta_bar = &self.layers[0].weights * input_grad_bar;
        for l in 0..depth {
            let layer = &self.layers[l];
            // delta_l = phi'(z_l) .* s_l, with s_l = W_{l+1}^T delta_{l+1} (or 1 at the output)
            let s = if l + 1 < depth {
                self.layers[l + 1].weights.transpose() * &deltas[l + 1]
            } else {
                DMatrix::from_element(1, batch, 1.0)
            };
            zbar_extra.push(layer.act_d2(&cache.pre[l]).component_mul(&delta_bar).component_mul(&s));
            if l + 1 < depth {
                let s_bar = layer.act_d1(&cache.pre[l]).component_mul(&delta_bar);
                grads.weights[l + 1] += &deltas[l + 1] * s_bar.transpose();
                delta_bar = &self.layers[l + 1].weights * &s_bar;
            }
        }

        // Reverse of the forward pass.
        let mut zbar = self.layers[depth - 1]
            .act_d1(&cache.pre[depth - 1])
            .component_mul(out_grad)
            + &zbar_extra[depth - 1];
        for l in (0..depth).rev() {
            let h_prev = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            grads.weights[l] += &zbar * h_prev.transpose();
            grads.biases[l] += zbar.column_sum();
            if l > 0 {
                let hbar = self.layers[l].weights.transpose() * &zbar;
                zbar = self.layers[l - 1].act_d1(&cache.pre[l - 1]).component_mul(&hbar)
                    + &zbar_extra[l - 1];
            }
        }
        grads
    }
}
