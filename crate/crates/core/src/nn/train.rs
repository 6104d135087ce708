use crate::config::{ConfigError, KeyValues};
use crate::dataset::Dataset;
use crate::optics::{AerialImage, IMAGE_SIDE};
use crate::rng::{derive_seed, SplitMix64};

use super::adam::AdamState;
use super::model::{LayerParams, Mode, ModelState, Network, NnError};

/// Mean squared error and its gradient with respect to each prediction,
/// `2 (pred - label) / batch`.
pub fn mse_loss(pred: &[f32], label: &[f32]) -> (f64, Vec<f32>) {
    assert_eq!(pred.len(), label.len(), "prediction/label length mismatch");
    let n = pred.len() as f64;
    let loss = pred
        .iter()
        .zip(label)
        .map(|(&p, &y)| (p as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n;
    let grad = pred
        .iter()
        .zip(label)
        .map(|(&p, &y)| (2.0 * (p as f64 - y as f64) / n) as f32)
        .collect();
    (loss, grad)
}

/// Flattens an aerial image for a network with a `side x side` input,
/// average-pooling when the network is narrower than the raster.
pub fn image_input(image: &AerialImage, side: usize) -> Result<Vec<f32>, NnError> {
    if side == 0 || !IMAGE_SIDE.is_multiple_of(side) {
        return Err(NnError::ShapeMismatch(format!(
            "network input side {side} does not divide the {IMAGE_SIDE}-pixel raster"
        )));
    }
    if side == IMAGE_SIDE {
        return Ok(image.pixels.clone());
    }
    let f = IMAGE_SIDE / side;
    let norm = (f * f) as f64;
    let mut out = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            let mut s = 0.0f64;
            for dy in 0..f {
                for dx in 0..f {
                    s += image.at(r * f + dy, c * f + dx) as f64;
                }
            }
            out.push((s / norm) as f32);
        }
    }
    Ok(out)
}

/// Network inputs and labels drawn from a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub inputs: Vec<Vec<f32>>,
    pub labels: Vec<f32>,
}

impl TrainSet {
    pub fn from_dataset(net: &Network, ds: &Dataset) -> Result<Self, NnError> {
        let (c, h, w) = net.input_dims();
        if c != 1 || h != w {
            return Err(NnError::ShapeMismatch(format!(
                "aerial images feed square single-channel inputs, not {:?}",
                net.input_dims()
            )));
        }
        let inputs = ds
            .samples
            .iter()
            .map(|s| image_input(&s.image, h))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            inputs,
            labels: ds.thresholds(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> TrainSet {
        TrainSet {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 200,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Reads `batch_size`, `max_epochs`, `lr`, `seed`; missing keys keep
    /// their defaults.
    pub fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        let d = Self::default();
        Ok(Self {
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            max_epochs: kv.get_or("max_epochs", d.max_epochs)?,
            lr: kv.get_or("lr", d.lr)?,
            seed: kv.get_or("seed", d.seed)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: ModelState,
    /// Mean per-sample training loss of every epoch, in train mode.
    pub loss_history: Vec<f64>,
}

/// Mini-batch Adam on squared error for a fixed number of epochs.
///
/// Samples are reshuffled each epoch from the config seed; per-sample
/// gradients are accumulated in batch order, so the run is bitwise
/// reproducible. Gradients of the first `frozen` weighted layers are
/// discarded.
pub fn train(
    net: &Network,
    init: ModelState,
    data: &TrainSet,
    cfg: &TrainConfig,
    frozen: usize,
) -> Result<TrainOutcome, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyData);
    }
    net.check_state(&init)?;
    let n_weighted = net.weighted_layers().len();
    if frozen > n_weighted {
        return Err(NnError::BadK {
            k: frozen,
            available: n_weighted,
        });
    }
    let batch = cfg.batch_size.max(1);
    let mut state = init;
    let mut adam = AdamState::new(&state.params, cfg.lr);
    let mut grads: Vec<LayerParams> = state.zeros_like();
    let mut history = Vec::with_capacity(cfg.max_epochs);
    for epoch in 0..cfg.max_epochs {
        let order = SplitMix64::stream(cfg.seed, epoch as u64).permutation(data.len());
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grads.iter_mut().for_each(|g| {
                g.weights.iter_mut().for_each(|v| *v = 0.0);
                g.bias.iter_mut().for_each(|v| *v = 0.0);
            });
            let step_seed = derive_seed(cfg.seed, (1u64 << 40) + state.train_step);
            let b = chunk.len() as f32;
            for (j, &i) in chunk.iter().enumerate() {
                let trace = net.forward(
                    &state,
                    &data.inputs[i],
                    Mode::Train {
                        dropout_seed: derive_seed(step_seed, j as u64),
                    },
                )?;
                let err = trace.output() - data.labels[i];
                epoch_loss += (err as f64).powi(2);
                net.backward(&state, &trace, 2.0 * err / b, &mut grads, frozen);
            }
            adam.step(&mut state.params, &grads, frozen);
            state.train_step += 1;
            if !state.params.iter().all(LayerParams::is_finite) {
                return Err(NnError::NonFiniteWeights { step: state.train_step });
            }
        }
        history.push(epoch_loss / data.len() as f64);
    }
    Ok(TrainOutcome {
        state,
        loss_history: history,
    })
}

/// Eval-mode predictions.
pub fn predict_all(net: &Network, state: &ModelState, inputs: &[Vec<f32>]) -> Result<Vec<f32>, NnError> {
    inputs.iter().map(|x| net.predict(state, x)).collect()
}

/// Eval-mode mean squared error.
pub fn eval_mse(net: &Network, state: &ModelState, data: &TrainSet) -> Result<f64, NnError> {
    let pred = predict_all(net, state, &data.inputs)?;
    Ok(mse_loss(&pred, &data.labels).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[0.3, 0.4], &[0.3, 0.4]).0, 0.0);
        let (l, g) = mse_loss(&[3.0, 5.0], &[1.0, 3.0]);
        assert_eq!(l, 4.0);
        assert_eq!(g, vec![2.0, 2.0]);
    }

    #[test]
    fn mse_gradient_matches_finite_difference() {
        let pred = [0.3f32, -0.2, 1.1];
        let label = [0.1f32, 0.4, 0.9];
        let (_, g) = mse_loss(&pred, &label);
        let h = 1e-3;
        for i in 0..3 {
            let loss_at = |d: f64| {
                let p: Vec<f64> = pred.iter().enumerate().map(|(k, &v)| v as f64 + if k == i { d } else { 0.0 }).collect();
                p.iter().zip(&label).map(|(a, &b)| (a - b as f64).powi(2)).sum::<f64>() / 3.0
            };
            let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            assert!((fd - g[i] as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn downsampling_averages_blocks() {
        let pixels: Vec<f32> = (0..IMAGE_SIDE * IMAGE_SIDE).map(|i| (i % 2) as f32).collect();
        let img = AerialImage::new(pixels, 31.25);
        let small = image_input(&img, 16).unwrap();
        assert_eq!(small.len(), 256);
        assert!(small.iter().all(|&v| v == 0.5));
        assert!(image_input(&img, 48).is_err());
    }
}
