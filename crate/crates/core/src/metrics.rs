//! Threshold and CD accuracy metrics.

use thiserror::Error;

use crate::dataset::Dataset;
use crate::geometry::Coord;
use crate::nn::{predict_all, ModelState, Network, NnError, TrainSet};
use crate::optics::edge_sample_cd;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{golden} golden values against {pred} predictions")]
    LengthMismatch { golden: usize, pred: usize },
    #[error("no values to compare")]
    Empty,
    #[error("golden value {index} is zero; relative error undefined")]
    ZeroGolden { index: usize },
    #[error("CD extraction failed for all {0} samples")]
    AllFailed(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
}

fn check(golden: &[f64], pred: &[f64]) -> Result<(), MetricsError> {
    if golden.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            golden: golden.len(),
            pred: pred.len(),
        });
    }
    if golden.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Root mean square difference.
pub fn rms(golden: &[f64], pred: &[f64]) -> Result<f64, MetricsError> {
    check(golden, pred)?;
    let ss: f64 = golden.iter().zip(pred).map(|(y, p)| (p - y) * (p - y)).sum();
    Ok((ss / golden.len() as f64).sqrt())
}

/// Root mean square of the relative differences `(pred - golden) / golden`.
pub fn relative_rms(golden: &[f64], pred: &[f64]) -> Result<f64, MetricsError> {
    check(golden, pred)?;
    if let Some(index) = golden.iter().position(|&y| y == 0.0) {
        return Err(MetricsError::ZeroGolden { index });
    }
    let ss: f64 = golden.iter().zip(pred).map(|(y, p)| ((p - y) / y).powi(2)).sum();
    Ok((ss / golden.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Threshold RMS error.
    pub eps: f64,
    /// Relative threshold RMS error.
    pub eps_r: f64,
    /// CD RMS error in nm over the samples that printed at both thresholds.
    pub eps_cd: f64,
    pub n: usize,
    pub printed_count: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "tag,fraction,seed,eps,eps_r,eps_cd,n,printed_count";

    pub fn csv_row(&self, tag: &str, fraction: f64, seed: u64) -> String {
        format!(
            "{tag},{fraction},{seed},{},{},{},{},{}",
            self.eps, self.eps_r, self.eps_cd, self.n, self.printed_count
        )
    }
}

/// Scores predicted thresholds against a test set. CDs are measured across
/// each sample's center contact at the golden and the predicted threshold;
/// samples where either measurement fails are left out of `eps_cd` and show
/// up as `n - printed_count`.
pub fn evaluate(test: &Dataset, pred: &[f32], contact_width: Coord) -> Result<EvalReport, MetricsError> {
    let golden: Vec<f64> = test.samples.iter().map(|s| s.threshold as f64).collect();
    let predicted: Vec<f64> = pred.iter().map(|&p| p as f64).collect();
    let eps = rms(&golden, &predicted)?;
    let eps_r = relative_rms(&golden, &predicted)?;
    let mut cd_gold = vec![];
    let mut cd_pred = vec![];
    for (s, &p) in test.samples.iter().zip(pred) {
        let cd = |t: f32| edge_sample_cd(&s.image, t, s.edge, s.aug, contact_width);
        if let (Ok(g), Ok(q)) = (cd(s.threshold), cd(p)) {
            cd_gold.push(g);
            cd_pred.push(q);
        }
    }
    if cd_gold.is_empty() {
        return Err(MetricsError::AllFailed(test.len()));
    }
    Ok(EvalReport {
        eps,
        eps_r,
        eps_cd: rms(&cd_gold, &cd_pred)?,
        n: test.len(),
        printed_count: cd_gold.len(),
    })
}

/// Predicts with `net` in eval mode and scores the result.
pub fn cd_rms(test: &Dataset, net: &Network, state: &ModelState, contact_width: Coord) -> Result<EvalReport, MetricsError> {
    let inputs = TrainSet::from_dataset(net, test)?;
    let pred = predict_all(net, state, &inputs.inputs)?;
    evaluate(test, &pred, contact_width)
}
