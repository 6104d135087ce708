//! Analytic gradients of every layer kernel against central finite
//! differences, in `f64`. Each check runs one seeded random instance and
//! returns its worst relative error.

use litho_core::nn::kernels::*;
use litho_core::nn::mse_loss;
use litho_core::rng::SplitMix64;

const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-3;
pub const INSTANCES: u64 = 20;

fn uniform(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

/// Larger of two errors; NaN wins.
fn merge(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Checks `analytic` against the central difference of `loss` with respect
/// to every entry of `v`.
fn check(name: &str, v: &mut [f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        let orig = v[i];
        v[i] = orig + STEP;
        let up = loss(v);
        v[i] = orig - STEP;
        let down = loss(v);
        v[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let e = rel_err(analytic[i], numeric);
        if !(e < TOL) {
            eprintln!("{name}[{i}]: analytic {} vs numeric {numeric}", analytic[i]);
        }
        worst = merge(worst, e);
    }
    worst
}

fn project(out: &[f64], r: &[f64]) -> f64 {
    out.iter().zip(r).map(|(a, b)| a * b).sum()
}

pub fn conv(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = SplitMix64::new(seed);
    let cin = 1 + rng.below(3) as usize;
    let cout = 1 + rng.below(3) as usize;
    let k = [1, 3, 5][rng.below(3) as usize];
    let side = 3 + rng.below(4) as usize;
    let dims = (cin, side, side);
    let mut x = uniform(&mut rng, cin * side * side);
    let mut w = uniform(&mut rng, cout * cin * k * k);
    let mut b = uniform(&mut rng, cout);
    let r = uniform(&mut rng, cout * side * side);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; b.len()];
    conv_backward(&x, dims, &w, k, &r, Some(&mut dx), &mut dw, &mut db);

    let fwd = |x: &[f64], w: &[f64], b: &[f64]| {
        let mut out = vec![0.0; r.len()];
        conv_forward(x, dims, w, b, k, &mut out);
        project(&out, &r)
    };
    let (w0, b0) = (w.clone(), b.clone());
    worst = merge(worst, check("conv dx", &mut x, &dx, |x| fwd(x, &w0, &b0)));
    let x0 = x.clone();
    worst = merge(worst, check("conv dw", &mut w, &dw, |w| fwd(&x0, w, &b0)));
    let w0 = w.clone();
    worst = merge(worst, check("conv db", &mut b, &db, |b| fwd(&x0, &w0, b)));
    worst
}

pub fn fc(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = SplitMix64::new(100 + seed);
    let n_in = 1 + rng.below(12) as usize;
    let n_out = 1 + rng.below(6) as usize;
    let mut x = uniform(&mut rng, n_in);
    let mut w = uniform(&mut rng, n_out * n_in);
    let mut b = uniform(&mut rng, n_out);
    let r = uniform(&mut rng, n_out);
    let mut dx = vec![0.0; n_in];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; n_out];
    fc_backward(&x, &w, &r, Some(&mut dx), &mut dw, &mut db);
    let fwd = |x: &[f64], w: &[f64], b: &[f64]| {
        let mut out = vec![0.0; n_out];
        fc_forward(x, w, b, &mut out);
        project(&out, &r)
    };
    let (w0, b0) = (w.clone(), b.clone());
    worst = merge(worst, check("fc dx", &mut x, &dx, |x| fwd(x, &w0, &b0)));
    let x0 = x.clone();
    worst = merge(worst, check("fc dw", &mut w, &dw, |w| fwd(&x0, w, &b0)));
    let w0 = w.clone();
    worst = merge(worst, check("fc db", &mut b, &db, |b| fwd(&x0, &w0, b)));
    worst
}

pub fn relu(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = SplitMix64::new(200 + seed);
    let n = 1 + rng.below(40) as usize;
    // keep clear of the kink
    let mut x: Vec<f64> = uniform(&mut rng, n)
        .into_iter()
        .map(|v| if v.abs() < 1e-3 { 0.5 } else { v })
        .collect();
    let r = uniform(&mut rng, n);
    let mut dx = vec![0.0; n];
    relu_backward(&x, &r, &mut dx);
    worst = merge(worst, check("relu dx", &mut x, &dx, |x| {
        let mut out = vec![0.0; n];
        relu_forward(x, &mut out);
        project(&out, &r)
    }));
    worst
}

pub fn maxpool(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = SplitMix64::new(300 + seed);
    let f = 2 + rng.below(2) as usize;
    let c = 1 + rng.below(3) as usize;
    let side = f * (1 + rng.below(3) as usize);
    let dims = (c, side, side);
    // distinct values spaced well above the step, so no window has a near tie
    let n = c * side * side;
    let mut x: Vec<f64> = rng.permutation(n).into_iter().map(|p| p as f64 * 0.01).collect();
    let out_len = c * (side / f) * (side / f);
    let r = uniform(&mut rng, out_len);
    let mut out = vec![0.0; out_len];
    let mut am = vec![0; out_len];
    maxpool_forward(&x, dims, f, &mut out, &mut am);
    let mut dx = vec![0.0; n];
    maxpool_backward(&r, &am, &mut dx);
    worst = merge(worst, check("maxpool dx", &mut x, &dx, |x| {
        let mut out = vec![0.0; out_len];
        let mut am = vec![0; out_len];
        maxpool_forward(x, dims, f, &mut out, &mut am);
        project(&out, &r)
    }));
    worst
}

pub fn dropout(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = SplitMix64::new(400 + seed);
    let n = 1 + rng.below(30) as usize;
    let mut x = uniform(&mut rng, n);
    // inverted dropout at rate 0.5: kept units are scaled by 2
    let mask: Vec<f64> = (0..n).map(|_| if rng.next_f64() < 0.5 { 0.0 } else { 2.0 }).collect();
    let r = uniform(&mut rng, n);
    let mut dx = vec![0.0; n];
    dropout_apply(&r, &mask, &mut dx);
    worst = merge(worst, check("dropout dx", &mut x, &dx, |x| {
        let mut out = vec![0.0; n];
        dropout_apply(x, &mask, &mut out);
        project(&out, &r)
    }));
    worst
}

pub fn shortcut(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = SplitMix64::new(500 + seed);
    let broadcast = seed % 2 == 1;
    let plane = 1 + rng.below(16) as usize;
    let channels = 1 + rng.below(4) as usize;
    let n = channels * plane;
    let mut block_out = uniform(&mut rng, n);
    let mut block_in = uniform(&mut rng, if broadcast { plane } else { n });
    let r = uniform(&mut rng, n);
    let fwd = |bo: &[f64], bi: &[f64]| {
        let mut out = vec![0.0; n];
        shortcut_add(bo, bi, broadcast, &mut out);
        project(&out, &r)
    };
    let bi = block_in.clone();
    worst = merge(worst, check("shortcut block", &mut block_out, &r, |bo| fwd(bo, &bi)));
    let bo = block_out.clone();
    let d_in = shortcut_input_grad(&r, broadcast, plane);
    worst = merge(worst, check("shortcut input", &mut block_in, &d_in, |bi| fwd(&bo, bi)));
    worst
}

/// The loss is computed in f64 from f32 inputs, so the step is a
/// representable f32 value.
pub fn mse(seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = SplitMix64::new(600 + seed);
    let n = 1 + rng.below(32) as usize;
    let pred: Vec<f32> = (0..n).map(|_| rng.uniform(0.0, 1.0) as f32).collect();
    let label: Vec<f32> = (0..n).map(|_| rng.uniform(0.0, 1.0) as f32).collect();
    let (_, grad) = mse_loss(&pred, &label);
    for i in 0..n {
        let h = 1.0 / 1024.0;
        let mut p = pred.clone();
        p[i] = pred[i] + h;
        let up = mse_loss(&p, &label).0;
        p[i] = pred[i] - h;
        let down = mse_loss(&p, &label).0;
        // exact for a quadratic
        let numeric = (up - down) / (2.0 * h as f64);
        worst = merge(worst, rel_err(grad[i] as f64, numeric));
    }
    worst
}

/// Every layer kind with its per-instance check.
pub const KINDS: [(&str, fn(u64) -> f64); 7] = [
    ("conv", conv),
    ("fc", fc),
    ("relu", relu),
    ("maxpool", maxpool),
    ("dropout", dropout),
    ("shortcut", shortcut),
    ("mse", mse),
];
