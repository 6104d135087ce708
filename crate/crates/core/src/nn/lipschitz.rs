use super::model::{LayerSpec, ModelState, Network};

/// Largest absolute weight sum over the output units of any conv or fc
/// layer. Biases do not affect the Lipschitz constant and are ignored.
pub fn alpha(net: &Network, state: &ModelState) -> f64 {
    let mut best = 0.0f64;
    for (&layer, p) in net.weighted_layers().iter().zip(&state.params) {
        let units = match net.spec().layers[layer] {
            LayerSpec::Conv { filters, .. } => filters,
            LayerSpec::Fc { units } => units,
            _ => unreachable!("only weighted layers carry parameters"),
        };
        let per_unit = p.weights.len() / units;
        for row in p.weights.chunks(per_unit) {
            let s: f64 = row.iter().map(|w| w.abs() as f64).sum();
            best = best.max(s);
        }
    }
    best
}

/// Upper bound on the Lipschitz constant of the eval-mode network:
/// `(1 + α√N)^L` with shortcuts and `(α√N)^L` without, where `N` is the
/// widest layer output and `L` the number of weighted layers.
pub fn lipschitz_bound(net: &Network, state: &ModelState) -> f64 {
    lipschitz_formula(
        alpha(net, state),
        net.max_width(),
        net.spec().n_weighted(),
        net.spec().has_shortcuts(),
    )
}

/// The bound for given `α`, `N`, layer count and topology.
pub fn lipschitz_formula(alpha: f64, width: usize, layers: usize, shortcuts: bool) -> f64 {
    let per_layer = alpha * (width as f64).sqrt();
    let base = if shortcuts { 1.0 + per_layer } else { per_layer };
    base.powi(layers as i32)
}
