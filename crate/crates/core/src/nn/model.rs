use thiserror::Error;

use super::kernels::{self, Dims};
use crate::rng::SplitMix64;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model spec: {0}")]
    BadSpec(String),
    #[error("non-finite activation after layer {layer} ({kind})")]
    NonFiniteActivation { layer: usize, kind: String },
    #[error("non-finite weights after training step {step}")]
    NonFiniteWeights { step: u64 },
    #[error("model spec does not match: {0}")]
    SpecMismatch(String),
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("model I/O failed: {0}")]
    Io(String),
    #[error("training data is empty")]
    EmptyData,
    #[error("cannot freeze {k} layers of a model with {available} weighted layers")]
    BadK { k: usize, available: usize },
}

/// A `(channels, height, width)` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Dims,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self, NnError> {
        if data.len() != dims.0 * dims.1 * dims.2 {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for shape {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    /// Same-padded, stride-1 convolution with `filters` square kernels.
    Conv { filters: usize, kernel: usize },
    Relu,
    MaxPool { factor: usize },
    Fc { units: usize },
    Dropout { rate: f32 },
    /// Opens a residual block; its input is saved for the matching end.
    ShortcutBegin { id: u32 },
    /// Adds the saved block input to the block output.
    ShortcutEnd { id: u32, broadcast: bool },
}

impl LayerSpec {
    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Fc { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Fc { .. } => "fc",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::ShortcutBegin { .. } => "shortcut_begin",
            LayerSpec::ShortcutEnd { .. } => "shortcut_end",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub input: Dims,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn n_conv(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::Conv { .. })).count()
    }

    pub fn n_fc(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::Fc { .. })).count()
    }

    pub fn n_weighted(&self) -> usize {
        self.n_conv() + self.n_fc()
    }

    pub fn has_shortcuts(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::ShortcutEnd { .. }))
    }

    /// The same layer stack with every shortcut marker removed.
    pub fn without_shortcuts(&self) -> ModelSpec {
        ModelSpec {
            input: self.input,
            layers: self
                .layers
                .iter()
                .filter(|l| !matches!(l, LayerSpec::ShortcutBegin { .. } | LayerSpec::ShortcutEnd { .. }))
                .copied()
                .collect(),
        }
    }

    /// Output dims of every layer; checks nesting, broadcast legality and
    /// the scalar output.
    pub fn layer_dims(&self) -> Result<Vec<Dims>, NnError> {
        let mut cur = self.input;
        if cur.0 == 0 || cur.1 == 0 || cur.2 == 0 {
            return Err(NnError::BadSpec(format!("empty input {cur:?}")));
        }
        let mut open: Vec<(u32, Dims)> = vec![];
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Conv { filters, kernel } => {
                    if filters == 0 || kernel % 2 == 0 {
                        return Err(NnError::BadSpec(format!(
                            "layer {i}: conv needs filters > 0 and an odd kernel"
                        )));
                    }
                    (filters, cur.1, cur.2)
                }
                LayerSpec::Relu => cur,
                LayerSpec::MaxPool { factor } => {
                    if factor == 0 || !cur.1.is_multiple_of(factor) || !cur.2.is_multiple_of(factor) {
                        return Err(NnError::ShapeMismatch(format!(
                            "layer {i}: {}x{} not divisible by pool factor {factor}",
                            cur.1, cur.2
                        )));
                    }
                    (cur.0, cur.1 / factor, cur.2 / factor)
                }
                LayerSpec::Fc { units } => {
                    if units == 0 {
                        return Err(NnError::BadSpec(format!("layer {i}: fc with no units")));
                    }
                    (units, 1, 1)
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(NnError::BadSpec(format!("layer {i}: dropout rate {rate}")));
                    }
                    cur
                }
                LayerSpec::ShortcutBegin { id } => {
                    open.push((id, cur));
                    cur
                }
                LayerSpec::ShortcutEnd { id, broadcast } => {
                    let (open_id, begin) = open
                        .pop()
                        .ok_or_else(|| NnError::BadSpec(format!("layer {i}: shortcut end without begin")))?;
                    if open_id != id {
                        return Err(NnError::BadSpec(format!(
                            "layer {i}: shortcut end {id} closes begin {open_id}"
                        )));
                    }
                    let ok = if broadcast {
                        begin.0 == 1 && begin.1 == cur.1 && begin.2 == cur.2
                    } else {
                        begin == cur
                    };
                    if !ok {
                        return Err(NnError::ShapeMismatch(format!(
                            "layer {i}: shortcut from {begin:?} into {cur:?} (broadcast={broadcast})"
                        )));
                    }
                    cur
                }
            };
            out.push(cur);
        }
        if !open.is_empty() {
            return Err(NnError::BadSpec("unclosed shortcut".into()));
        }
        if cur != (1, 1, 1) {
            return Err(NnError::BadSpec(format!("final output {cur:?} is not a scalar")));
        }
        Ok(out)
    }
}

/// Weights and biases of one conv or fc layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Parameters of every weighted layer, in forward order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: Vec<LayerParams>,
    pub seed: u64,
    pub train_step: u64,
}

impl ModelState {
    pub fn zeros_like(&self) -> Vec<LayerParams> {
        self.params.iter().map(LayerParams::zeros_like).collect()
    }

    /// Same weights with every value set to zero.
    pub fn zeroed(&self) -> ModelState {
        ModelState {
            params: self.zeros_like(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from this seed.
    Train { dropout_seed: u64 },
}

/// Activations recorded by a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[i + 1]` the output of layer `i`.
    pub acts: Vec<Vec<f32>>,
    argmax: Vec<Vec<usize>>,
    masks: Vec<Vec<f32>>,
    /// For each shortcut end, the activation index of its saved input.
    skip_src: Vec<usize>,
}

impl Trace {
    pub fn output(&self) -> f32 {
        self.acts.last().expect("trace holds the input")[0]
    }
}

/// A validated spec with per-layer shapes and parameter bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    dims: Vec<Dims>,
    /// Parameter slot of each layer, if weighted.
    slot: Vec<Option<usize>>,
    /// Layer index of each parameter slot.
    weighted_layers: Vec<usize>,
}

impl Network {
    pub fn new(spec: ModelSpec) -> Result<Self, NnError> {
        let dims = spec.layer_dims()?;
        let mut slot = Vec::with_capacity(spec.layers.len());
        let mut weighted_layers = vec![];
        for (i, l) in spec.layers.iter().enumerate() {
            if l.is_weighted() {
                slot.push(Some(weighted_layers.len()));
                weighted_layers.push(i);
            } else {
                slot.push(None);
            }
        }
        Ok(Self {
            spec,
            dims,
            slot,
            weighted_layers,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_dims(&self) -> Dims {
        self.spec.input
    }

    pub fn input_len(&self) -> usize {
        let (c, h, w) = self.spec.input;
        c * h * w
    }

    pub fn in_dims(&self, layer: usize) -> Dims {
        if layer == 0 {
            self.spec.input
        } else {
            self.dims[layer - 1]
        }
    }

    pub fn out_dims(&self, layer: usize) -> Dims {
        self.dims[layer]
    }

    /// Largest layer output size.
    pub fn max_width(&self) -> usize {
        self.dims.iter().map(|d| d.0 * d.1 * d.2).max().unwrap_or(1)
    }

    pub fn weighted_layers(&self) -> &[usize] {
        &self.weighted_layers
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.weighted_layers
            .iter()
            .map(|&i| {
                let (cin, h, w) = self.in_dims(i);
                match self.spec.layers[i] {
                    LayerSpec::Conv { filters, kernel } => (filters * cin * kernel * kernel, filters),
                    LayerSpec::Fc { units } => (units * cin * h * w, units),
                    _ => unreachable!("only weighted layers have slots"),
                }
            })
            .collect()
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and biases, one
    /// seeded stream per layer.
    pub fn init(&self, seed: u64) -> ModelState {
        let params = self
            .param_shapes()
            .into_iter()
            .enumerate()
            .map(|(s, (nw, nb))| {
                let bound = 1.0 / ((nw / nb) as f64).sqrt();
                let mut rng = SplitMix64::stream(seed, s as u64);
                let mut draw = |n: usize| (0..n).map(|_| rng.uniform(-bound, bound) as f32).collect::<Vec<_>>();
                LayerParams {
                    weights: draw(nw),
                    bias: draw(nb),
                }
            })
            .collect();
        ModelState {
            params,
            seed,
            train_step: 0,
        }
    }

    /// Checks that a state carries one correctly sized block per weighted layer.
    pub fn check_state(&self, state: &ModelState) -> Result<(), NnError> {
        let shapes = self.param_shapes();
        if shapes.len() != state.params.len() {
            return Err(NnError::SpecMismatch(format!(
                "{} parameter blocks for {} weighted layers",
                state.params.len(),
                shapes.len()
            )));
        }
        for (k, ((nw, nb), p)) in shapes.iter().zip(&state.params).enumerate() {
            if p.weights.len() != *nw || p.bias.len() != *nb {
                return Err(NnError::SpecMismatch(format!(
                    "weighted layer {k}: {}+{} values, expected {nw}+{nb}",
                    p.weights.len(),
                    p.bias.len()
                )));
            }
        }
        Ok(())
    }

    /// Prediction for one input.
    pub fn predict(&self, state: &ModelState, input: &[f32]) -> Result<f32, NnError> {
        Ok(self.forward(state, input, Mode::Eval)?.output())
    }

    pub fn forward(&self, state: &ModelState, input: &[f32], mode: Mode) -> Result<Trace, NnError> {
        if input.len() != self.input_len() {
            return Err(NnError::ShapeMismatch(format!(
                "input of {} values for {:?}",
                input.len(),
                self.spec.input
            )));
        }
        let n = self.spec.layers.len();
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(n + 1);
        acts.push(input.to_vec());
        let mut argmax = vec![Vec::new(); n];
        let mut masks = vec![Vec::new(); n];
        let mut skip_src = vec![0; n];
        let mut open: Vec<usize> = vec![];
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let (ind, od) = (self.in_dims(i), self.out_dims(i));
            let x = &acts[i];
            let mut out = vec![0.0f32; od.0 * od.1 * od.2];
            match *layer {
                LayerSpec::Conv { kernel, .. } => {
                    let p = &state.params[self.slot[i].expect("weighted")];
                    kernels::conv_forward(x, ind, &p.weights, &p.bias, kernel, &mut out);
                }
                LayerSpec::Fc { .. } => {
                    let p = &state.params[self.slot[i].expect("weighted")];
                    kernels::fc_forward(x, &p.weights, &p.bias, &mut out);
                }
                LayerSpec::Relu => kernels::relu_forward(x, &mut out),
                LayerSpec::MaxPool { factor } => {
                    let mut am = vec![0usize; out.len()];
                    kernels::maxpool_forward(x, ind, factor, &mut out, &mut am);
                    argmax[i] = am;
                }
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Train { dropout_seed } if rate > 0.0 => {
                        let mut rng = SplitMix64::stream(dropout_seed, i as u64);
                        let keep = 1.0 / (1.0 - rate);
                        let mask: Vec<f32> = (0..x.len())
                            .map(|_| if rng.next_f64() < rate as f64 { 0.0 } else { keep })
                            .collect();
                        kernels::dropout_apply(x, &mask, &mut out);
                        masks[i] = mask;
                    }
                    _ => out.copy_from_slice(x),
                },
                LayerSpec::ShortcutBegin { .. } => {
                    open.push(i);
                    out.copy_from_slice(x);
                }
                LayerSpec::ShortcutEnd { broadcast, .. } => {
                    let begin = open.pop().expect("validated nesting");
                    skip_src[i] = begin;
                    kernels::shortcut_add(x, &acts[begin], broadcast, &mut out);
                }
            }
            if !out.iter().all(|v| v.is_finite()) {
                return Err(NnError::NonFiniteActivation {
                    layer: i,
                    kind: layer.name().to_string(),
                });
            }
            acts.push(out);
        }
        Ok(Trace {
            acts,
            argmax,
            masks,
            skip_src,
        })
    }

    /// Backpropagates `d loss / d output` through a trace, accumulating into
    /// `grads`. The first `frozen` weighted layers receive no gradient, and
    /// nothing below the last frozen layer is visited.
    pub fn backward(&self, state: &ModelState, trace: &Trace, dout: f32, grads: &mut [LayerParams], frozen: usize) {
        let stop = match frozen {
            0 => 0,
            k => self.weighted_layers[k.min(self.weighted_layers.len()) - 1] + 1,
        };
        let n = self.spec.layers.len();
        let mut g = vec![dout];
        // pending gradient for saved shortcut inputs, keyed by activation index
        let mut skip_grads: Vec<(usize, Vec<f32>)> = vec![];
        for i in (stop..n).rev() {
            let x = &trace.acts[i];
            let ind = self.in_dims(i);
            let mut dx = vec![0.0f32; x.len()];
            match self.spec.layers[i] {
                LayerSpec::Conv { kernel, .. } => {
                    let s = self.slot[i].expect("weighted");
                    let need_dx = i > stop;
                    let gp = &mut grads[s];
                    kernels::conv_backward(
                        x,
                        ind,
                        &state.params[s].weights,
                        kernel,
                        &g,
                        need_dx.then_some(dx.as_mut_slice()),
                        &mut gp.weights,
                        &mut gp.bias,
                    );
                }
                LayerSpec::Fc { .. } => {
                    let s = self.slot[i].expect("weighted");
                    let need_dx = i > stop;
                    let gp = &mut grads[s];
                    kernels::fc_backward(
                        x,
                        &state.params[s].weights,
                        &g,
                        need_dx.then_some(dx.as_mut_slice()),
                        &mut gp.weights,
                        &mut gp.bias,
                    );
                }
                LayerSpec::Relu => kernels::relu_backward(x, &g, &mut dx),
                LayerSpec::MaxPool { .. } => kernels::maxpool_backward(&g, &trace.argmax[i], &mut dx),
                LayerSpec::Dropout { .. } => {
                    if trace.masks[i].is_empty() {
                        dx.copy_from_slice(&g);
                    } else {
                        kernels::dropout_apply(&g, &trace.masks[i], &mut dx);
                    }
                }
                LayerSpec::ShortcutEnd { broadcast, .. } => {
                    let src = trace.skip_src[i];
                    let plane = trace.acts[src].len();
                    skip_grads.push((src, kernels::shortcut_input_grad(&g, broadcast, plane)));
                    dx.copy_from_slice(&g);
                }
                LayerSpec::ShortcutBegin { .. } => {
                    dx.copy_from_slice(&g);
                    if let Some(pos) = skip_grads.iter().position(|(src, _)| *src == i) {
                        let (_, sg) = skip_grads.swap_remove(pos);
                        for (a, b) in dx.iter_mut().zip(sg) {
                            *a += b;
                        }
                    }
                }
            }
            g = dx;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual() -> Network {
        Network::new(ModelSpec {
            input: (1, 4, 4),
            layers: vec![
                LayerSpec::ShortcutBegin { id: 0 },
                LayerSpec::Conv { filters: 2, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::Conv { filters: 2, kernel: 3 },
                LayerSpec::ShortcutEnd { id: 0, broadcast: true },
                LayerSpec::MaxPool { factor: 2 },
                LayerSpec::Fc { units: 3 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Fc { units: 1 },
            ],
        })
        .unwrap()
    }

    fn input() -> Vec<f32> {
        (0..16).map(|i| ((i * 7) % 16) as f32 / 16.0 - 0.3).collect()
    }

    #[test]
    fn shapes_and_bookkeeping() {
        let net = residual();
        assert_eq!(net.input_len(), 16);
        assert_eq!(net.out_dims(4), (2, 4, 4));
        assert_eq!(net.out_dims(5), (2, 2, 2));
        assert_eq!(net.weighted_layers(), &[1, 3, 6, 9]);
        assert_eq!(net.param_shapes(), vec![(18, 2), (36, 2), (24, 3), (3, 1)]);
        let state = net.init(3);
        assert_eq!(net.check_state(&state), Ok(()));
        let mut short = state.clone();
        short.params.pop();
        assert!(matches!(net.check_state(&short), Err(NnError::SpecMismatch(_))));
        assert!(matches!(net.predict(&state, &[0.0; 15]), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn eval_is_deterministic_and_dropout_free() {
        let net = residual();
        let state = net.init(11);
        let x = input();
        let a = net.predict(&state, &x).unwrap();
        assert_eq!(a, net.predict(&state, &x).unwrap());
        let t = net.forward(&state, &x, Mode::Train { dropout_seed: 5 }).unwrap();
        let u = net.forward(&state, &x, Mode::Train { dropout_seed: 5 }).unwrap();
        assert_eq!(t.output(), u.output());
        // the dropout layer's input is the same in both modes
        let e = net.forward(&state, &x, Mode::Eval).unwrap();
        assert_eq!(t.acts[8], e.acts[8]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = residual();
        let state = net.init(7);
        let x = input();
        let mode = Mode::Train { dropout_seed: 2 };
        let trace = net.forward(&state, &x, mode).unwrap();
        let mut grads = state.zeros_like();
        net.backward(&state, &trace, 1.0, &mut grads, 0);
        let h = 1e-2f32;
        for (s, p) in state.params.iter().enumerate() {
            for i in 0..p.weights.len() {
                let mut st = state.clone();
                st.params[s].weights[i] += h;
                let up = net.forward(&st, &x, mode).unwrap().output();
                st.params[s].weights[i] -= 2.0 * h;
                let down = net.forward(&st, &x, mode).unwrap().output();
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[s].weights[i];
                assert!(
                    (numeric - analytic).abs() <= 1e-3 + 1e-2 * analytic.abs(),
                    "slot {s} weight {i}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn frozen_layers_get_no_gradient() {
        let net = residual();
        let state = net.init(1);
        let trace = net.forward(&state, &input(), Mode::Eval).unwrap();
        let mut grads = state.zeros_like();
        net.backward(&state, &trace, 1.0, &mut grads, 2);
        assert!(grads[..2].iter().all(|g| g.weights.iter().chain(&g.bias).all(|&v| v == 0.0)));
        assert!(grads[3].weights.iter().any(|&v| v != 0.0));
    }
}
