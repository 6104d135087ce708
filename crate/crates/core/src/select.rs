//! Pool-based sample selection: K-Means on raw images, medoids nearest to
//! the centroids, the coreset objective they minimize, and a runnable check
//! of the loss bound that objective controls.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::dataset::Dataset;
use crate::nn::{lipschitz_bound, ModelState, Network, NnError};
use crate::optics::GoldenResistModel;
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("cannot pick {k} of {n} points")]
    BadK { k: usize, n: usize },
    #[error("selection is empty")]
    EmptySelection,
    #[error("selection repeats index {0}")]
    DuplicateIndex(usize),
    #[error("index {index} out of range for {n} points")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("exhaustive search limited to n <= 15 and k <= 4 (got n={n}, k={k})")]
    TooLarge { n: usize, k: usize },
    #[error("training loss {loss:e} on the selection exceeds tolerance {tol:e}")]
    TrainingLossNotZero { loss: f64, tol: f64 },
    #[error("feature rows must be non-empty, equally long and finite")]
    BadFeatures,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("index list: {0}")]
    IndexList(String),
}

/// Row-major feature vectors, one row per pool point.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self, SelectError> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 || rows.iter().any(|r| r.len() != dim || !r.iter().all(|v| v.is_finite())) {
            return Err(SelectError::BadFeatures);
        }
        Ok(Self {
            n: rows.len(),
            dim,
            data: rows.concat(),
        })
    }

    pub fn from_f32(rows: &[Vec<f32>]) -> Result<Self, SelectError> {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        Self::new(&rows)
    }

    /// Flattened raw aerial images of a dataset.
    pub fn from_dataset(ds: &Dataset) -> Result<Self, SelectError> {
        let rows: Vec<Vec<f32>> = ds.samples.iter().map(|s| s.image.pixels.clone()).collect();
        Self::from_f32(&rows)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest candidate; ties go to the
/// earliest candidate.
fn nearest<'a>(p: &[f64], candidates: impl Iterator<Item = &'a [f64]>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in candidates.enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `k` centroids, row-major.
    pub centroids: Vec<Vec<f64>>,
    /// Centroid index of every point.
    pub assign: Vec<usize>,
    pub iterations: usize,
}

impl KMeansResult {
    /// Sum of squared distances to the assigned centroids.
    pub fn inertia(&self, points: &FeatureMatrix) -> f64 {
        (0..points.len())
            .map(|i| sq_dist(points.row(i), &self.centroids[self.assign[i]]))
            .sum()
    }
}

/// Lloyd's algorithm from a greedy D²-weighted seeding.
///
/// Each new seed is the best (lowest resulting potential) of `2 + ln k`
/// candidates drawn with probability proportional to squared distance.
/// Clusters that empty out are reseeded with the point farthest from its
/// centroid. Stops at an assignment fixpoint or after `max_iter` updates.
pub fn kmeans(points: &FeatureMatrix, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult, SelectError> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(SelectError::BadK { k, n });
    }
    let mut rng = SplitMix64::new(seed);
    let mut centers = vec![rng.below(n as u64) as usize];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(centers[0]))).collect();
    let trials = 2 + (k as f64).ln().floor() as usize;
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = if total > 0.0 {
                let mut r = rng.next_f64() * total;
                let mut pick = n - 1;
                for (i, &d) in d2.iter().enumerate() {
                    if d > 0.0 && r < d {
                        pick = i;
                        break;
                    }
                    r -= d;
                }
                // rounding can leave `r` past the last positive weight
                if d2[pick] == 0.0 {
                    pick = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
                }
                pick
            } else {
                // every point coincides with a seed: take the first unused index
                (0..n).find(|i| !centers.contains(i)).expect("k <= n")
            };
            let updated: Vec<f64> = (0..n)
                .map(|i| d2[i].min(sq_dist(points.row(i), points.row(cand))))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, cand, updated));
            }
        }
        let (_, cand, updated) = best.expect("at least one trial");
        centers.push(cand);
        d2 = updated;
    }

    let mut centroids: Vec<Vec<f64>> = centers.iter().map(|&c| points.row(c).to_vec()).collect();
    let mut assign = vec![usize::MAX; n];
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (j, d) = nearest(points.row(i), centroids.iter().map(Vec::as_slice));
            dist[i] = d;
            if assign[i] != j {
                assign[i] = j;
                changed = true;
            }
        }
        if !changed || iterations == max_iter {
            break;
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; points.dim()]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // farthest point from its own centroid; ties to the lowest index
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None, |acc: Option<usize>, i| match acc {
                        Some(b) if dist[b] >= dist[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("k <= n");
                taken[far] = true;
                dist[far] = 0.0;
                centroids[j] = points.row(far).to_vec();
            }
        }
    }
    Ok(KMeansResult {
        centroids,
        assign,
        iterations,
    })
}

/// The pool point nearest each centroid, ties to the lowest index; a point
/// already claimed by an earlier centroid passes to the next-nearest one.
pub fn medoids_from_centroids(points: &FeatureMatrix, centroids: &[Vec<f64>]) -> Vec<usize> {
    let mut used = vec![false; points.len()];
    let mut out = Vec::with_capacity(centroids.len());
    for c in centroids {
        let mut order: Vec<(f64, usize)> = (0..points.len())
            .filter(|&i| !used[i])
            .map(|i| (sq_dist(points.row(i), c), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some(&(_, i)) = order.first() {
            used[i] = true;
            out.push(i);
        }
    }
    out
}

/// Medoids of a selection with every point's nearest medoid.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub medoid_indices: Vec<usize>,
    /// Position in `medoid_indices` of each point's nearest medoid.
    pub assign: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
}

fn check_selection(n: usize, selected: &[usize]) -> Result<(), SelectError> {
    if selected.is_empty() {
        return Err(SelectError::EmptySelection);
    }
    let mut seen = vec![false; n];
    for &i in selected {
        if i >= n {
            return Err(SelectError::IndexOutOfRange { index: i, n });
        }
        if seen[i] {
            return Err(SelectError::DuplicateIndex(i));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Assigns every point to its nearest selected point, ties to the one listed
/// first.
pub fn assign_to_medoids(points: &FeatureMatrix, selected: &[usize]) -> Result<ClusterAssignment, SelectError> {
    check_selection(points.len(), selected)?;
    let mut sizes = vec![0; selected.len()];
    let assign = (0..points.len())
        .map(|i| {
            let (j, _) = nearest(points.row(i), selected.iter().map(|&s| points.row(s)));
            sizes[j] += 1;
            j
        })
        .collect();
    Ok(ClusterAssignment {
        medoid_indices: selected.to_vec(),
        assign,
        cluster_sizes: sizes,
    })
}

/// Sum over all points of the Euclidean distance to the nearest selected
/// point.
pub fn coreset_objective(points: &FeatureMatrix, selected: &[usize]) -> Result<f64, SelectError> {
    check_selection(points.len(), selected)?;
    Ok((0..points.len())
        .map(|i| nearest(points.row(i), selected.iter().map(|&s| points.row(s))).1.sqrt())
        .sum())
}

/// K-Means medoids of arbitrary features, sorted ascending.
pub fn select_from_features(points: &FeatureMatrix, k: usize, seed: u64) -> Result<Vec<usize>, SelectError> {
    let km = kmeans(points, k, seed, 100)?;
    let mut picked = medoids_from_centroids(points, &km.centroids);
    picked.sort_unstable();
    Ok(picked)
}

/// Picks `k` representative samples from the pool's images alone (labels
/// are never read). Indices are returned in ascending order.
pub fn select_samples(pool: &Dataset, k: usize, seed: u64) -> Result<Vec<usize>, SelectError> {
    let n = pool.len();
    if k == 0 || k > n {
        return Err(SelectError::BadK { k, n });
    }
    if k == n {
        return Ok((0..n).collect());
    }
    select_from_features(&FeatureMatrix::from_dataset(pool)?, k, seed)
}

/// Exact minimizer of the coreset objective over all `k`-subsets, ties to
/// the lexicographically smallest subset.
pub fn brute_force_medoids(points: &FeatureMatrix, k: usize) -> Result<(Vec<usize>, f64), SelectError> {
    let n = points.len();
    if n > 15 || k > 4 {
        return Err(SelectError::TooLarge { n, k });
    }
    if k == 0 || k > n {
        return Err(SelectError::BadK { k, n });
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best = (idx.clone(), coreset_objective(points, &idx)?);
    loop {
        // next combination in lexicographic order
        let Some(pos) = (0..k).rev().find(|&p| idx[p] < n - k + p) else {
            break;
        };
        idx[pos] += 1;
        for q in pos + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
        let obj = coreset_objective(points, &idx)?;
        if obj < best.1 {
            best = (idx.clone(), obj);
        }
    }
    Ok(best)
}

/// Constants of the average-loss bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzParams {
    /// Loss, as a function of the input.
    pub lambda_l: f64,
    /// Ground-truth labeling function.
    pub lambda_f: f64,
    /// Trained predictor.
    pub lambda_fhat: f64,
    /// Label-noise standard deviation.
    pub sigma: f64,
    /// Largest input norm.
    pub b1: f64,
    /// Largest absolute label.
    pub b2: f64,
    /// Residual of the predictor at a training point.
    pub delta: f64,
}

impl LipschitzParams {
    /// Assembles the constants, deriving the loss constant
    /// `(4 λf̂ b1 + 4 b2 + 2|δ|) · max(1, λf̂)`.
    pub fn new(lambda_f: f64, lambda_fhat: f64, sigma: f64, b1: f64, b2: f64, delta: f64) -> Self {
        let lambda_l = (4.0 * lambda_fhat * b1 + 4.0 * b2 + 2.0 * delta.abs()) * lambda_fhat.max(1.0);
        Self {
            lambda_l,
            lambda_f,
            lambda_fhat,
            sigma,
            b1,
            b2,
            delta,
        }
    }
}

/// Bound constants for a trained model on a pool: `λf̂` from the network
/// weights, `λf` from the oracle coefficients, `b1`/`b2` as pool maxima and
/// `δ` as the residual at pool point `delta_at`.
pub fn estimate_lipschitz_params(
    net: &Network,
    state: &ModelState,
    oracle: &GoldenResistModel,
    inputs: &[Vec<f32>],
    labels: &[f64],
    delta_at: usize,
) -> Result<LipschitzParams, SelectError> {
    if inputs.is_empty() || inputs.len() != labels.len() || delta_at >= inputs.len() {
        return Err(SelectError::EmptySelection);
    }
    let b1 = inputs
        .iter()
        .map(|x| x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let b2 = labels.iter().map(|y| y.abs()).fold(0.0, f64::max);
    let delta = net.predict(state, &inputs[delta_at])? as f64 - labels[delta_at];
    Ok(LipschitzParams::new(
        oracle.lipschitz_constant(),
        lipschitz_bound(net, state),
        0.0,
        b1,
        b2,
        delta,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// Mean squared error over the whole pool.
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Mean squared error over the selection.
    pub selected_loss: f64,
    pub coreset_objective: f64,
}

/// Evaluates the average-loss bound for a model trained on `selected`:
///
/// `mean loss ≤ λl (λf + 1) / n · coreset objective + 2 λl Σ|εᵢ|`
///
/// `noise` holds the known label-noise magnitudes (empty for noise-free
/// labels). Fails when the selection is not fit to within `tol` mean
/// squared error, since the bound assumes zero training loss.
#[allow(clippy::too_many_arguments)]
pub fn check_coreset_bound(
    net: &Network,
    state: &ModelState,
    inputs: &[Vec<f32>],
    labels: &[f64],
    selected: &[usize],
    params: &LipschitzParams,
    noise: &[f64],
    tol: f64,
) -> Result<BoundReport, SelectError> {
    let n = inputs.len();
    check_selection(n, selected)?;
    let sq_err = |i: usize| -> Result<f64, SelectError> { Ok((net.predict(state, &inputs[i])? as f64 - labels[i]).powi(2)) };
    let mut selected_loss = 0.0;
    for &i in selected {
        selected_loss += sq_err(i)?;
    }
    selected_loss /= selected.len() as f64;
    if !(selected_loss <= tol) {
        return Err(SelectError::TrainingLossNotZero {
            loss: selected_loss,
            tol,
        });
    }
    let mut lhs = 0.0;
    for i in 0..n {
        lhs += sq_err(i)?;
    }
    lhs /= n as f64;
    let objective = coreset_objective(&FeatureMatrix::from_f32(inputs)?, selected)?;
    let noise_sum: f64 = noise.iter().map(|e| e.abs()).sum();
    let rhs = params.lambda_l * (params.lambda_f + 1.0) / n as f64 * objective + 2.0 * params.lambda_l * noise_sum;
    Ok(BoundReport {
        lhs,
        rhs,
        holds: lhs <= rhs,
        selected_loss,
        coreset_objective: objective,
    })
}

/// Writes one index per line.
pub fn write_indices(path: impl AsRef<Path>, indices: &[usize]) -> Result<(), SelectError> {
    let mut text = Vec::new();
    for i in indices {
        writeln!(text, "{i}").expect("writing to a Vec");
    }
    std::fs::write(path.as_ref(), text).map_err(|e| SelectError::IndexList(format!("{}: {e}", path.as_ref().display())))
}

/// Reads an index list; blank lines are skipped.
pub fn read_indices(path: impl AsRef<Path>) -> Result<Vec<usize>, SelectError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| SelectError::IndexList(format!("{}: {e}", path.as_ref().display())))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(n, l)| {
            l.parse()
                .map_err(|_| SelectError::IndexList(format!("entry {}: `{l}` is not an index", n + 1)))
        })
        .collect()
}
