use super::model::LayerParams;

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub t: u64,
    m: Vec<LayerParams>,
    v: Vec<LayerParams>,
}

impl AdamState {
    /// Moment buffers shaped like `params`, with lr 1e-3, betas (0.9, 0.999)
    /// and eps 1e-8.
    pub fn new(params: &[LayerParams], lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(LayerParams::zeros_like).collect(),
            v: params.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    /// One update of every parameter block except the first `frozen`, which
    /// stay bitwise unchanged along with their moments.
    pub fn step(&mut self, params: &mut [LayerParams], grads: &[LayerParams], frozen: usize) {
        self.t += 1;
        let bc1 = 1.0 - (self.beta1 as f64).powi(self.t as i32);
        let bc2 = 1.0 - (self.beta2 as f64).powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let step_size = (self.lr as f64 / bc1) as f32;
        let inv_bc2_sqrt = (1.0 / bc2.sqrt()) as f32;
        for (k, ((p, g), (m, v))) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .enumerate()
        {
            if k < frozen {
                continue;
            }
            let blocks = [
                (&mut p.weights, &g.weights, &mut m.weights, &mut v.weights),
                (&mut p.bias, &g.bias, &mut m.bias, &mut v.bias),
            ];
            for (w, gw, mw, vw) in blocks {
                for i in 0..w.len() {
                    let gi = gw[i];
                    mw[i] = b1 * mw[i] + (1.0 - b1) * gi;
                    vw[i] = b2 * vw[i] + (1.0 - b2) * gi * gi;
                    w[i] -= step_size * mw[i] / (vw[i].sqrt() * inv_bc2_sqrt + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(w: &[f32]) -> Vec<LayerParams> {
        vec![LayerParams {
            weights: w.to_vec(),
            bias: vec![0.0],
        }]
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut p = block(&[0.5, -1.0]);
        let before = p.clone();
        let mut adam = AdamState::new(&p, 1e-3);
        adam.step(&mut p, &block(&[0.0, 0.0]), 0);
        assert_eq!(p, before);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn first_step_is_sign_times_lr() {
        let g = [2.0f32, -0.5, 1e-3];
        let mut p = block(&[0.0; 3]);
        let mut adam = AdamState::new(&p, 1e-3);
        adam.step(&mut p, &block(&g), 0);
        for (w, gi) in p[0].weights.iter().zip(g) {
            let want = -1e-3 * gi.signum();
            let tol = (1e-3 * 1e-8 / (gi.abs() + 1e-8)) + 1e-9;
            assert!((w - want).abs() <= tol, "{w} vs {want}");
        }
    }

    #[test]
    fn frozen_blocks_untouched() {
        let mut p = vec![block(&[1.0])[0].clone(), block(&[1.0])[0].clone()];
        let g = vec![block(&[1.0])[0].clone(), block(&[1.0])[0].clone()];
        let mut adam = AdamState::new(&p, 1e-2);
        adam.step(&mut p, &g, 1);
        assert_eq!(p[0].weights[0], 1.0);
        assert!(p[1].weights[0] < 1.0);
    }
}
