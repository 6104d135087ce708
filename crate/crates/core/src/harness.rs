//! Sweep runner: trains every scheme at every training fraction for every
//! seed, evaluates on the fixed test half and aggregates the curves.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::config::{ConfigError, KeyValues, LithoConfig};
use crate::dataset::{augment, split, Dataset, DatasetError};
use crate::metrics::{cd_rms, EvalReport, MetricsError};
use crate::nn::{eval_mse, train, Arch, ArchScale, LayerSpec, ModelSpec, ModelState, Network, NnError, TrainConfig, TrainSet};
use crate::optics::{GoldenResistModel, IMAGE_SIDE};
use crate::select::{check_coreset_bound, estimate_lipschitz_params, select_samples, BoundReport, LipschitzParams, SelectError};
use crate::transfer::{transfer_train, TransferPlan};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no dataset loaded for litho config `{0}`")]
    MissingDataset(String),
    #[error("invalid experiment: {0}")]
    BadExperiment(String),
    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),
    #[error("fraction {fraction} of {clips} clips leaves no training data")]
    EmptyTraining { fraction: f64, clips: usize },
    #[error("training clips at fraction {small} are not contained in those at {large} (seed {seed})")]
    NestingViolated { small: f64, large: f64, seed: u64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How the target model of one sweep cell is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    /// From scratch on a random clip prefix.
    Scratch(Arch),
    /// From scratch on K-Medoids-selected pool samples.
    ScratchAl(Arch),
    /// Transfer from the source model with `k` layers frozen.
    Tf { arch: Arch, k: usize },
    /// Transfer, finetuned on K-Medoids-selected pool samples.
    TfAl { arch: Arch, k: usize },
}

impl Scheme {
    pub fn arch(self) -> Arch {
        match self {
            Scheme::Scratch(a) | Scheme::ScratchAl(a) => a,
            Scheme::Tf { arch, .. } | Scheme::TfAl { arch, .. } => arch,
        }
    }

    pub fn uses_selection(self) -> bool {
        matches!(self, Scheme::ScratchAl(_) | Scheme::TfAl { .. })
    }

    pub fn frozen(self) -> Option<usize> {
        match self {
            Scheme::Tf { k, .. } | Scheme::TfAl { k, .. } => Some(k),
            _ => None,
        }
    }

    /// Name usable as a file stem.
    pub fn file_stem(self) -> String {
        match self {
            Scheme::Scratch(a) => format!("scratch_{a}"),
            Scheme::ScratchAl(a) => format!("scratch_al_{a}"),
            Scheme::Tf { arch, k } => format!("tf_{k}_{arch}"),
            Scheme::TfAl { arch, k } => format!("tf_{k}_plus_al_{arch}"),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Scratch(a) => write!(f, "scratch_{a}"),
            Scheme::ScratchAl(a) => write!(f, "scratch_al_{a}"),
            Scheme::Tf { arch, k } => write!(f, "tf_k({arch},{k})"),
            Scheme::TfAl { arch, k } => write!(f, "tf_k_plus_al({arch},{k})"),
        }
    }
}

impl FromStr for Scheme {
    type Err = HarnessError;

    /// `scratch_<arch>`, `scratch_al_<arch>`, `tf_k(<arch>,<k>)` or
    /// `tf_k_plus_al(<arch>,<k>)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::UnknownScheme(s.to_string());
        let t = s.trim();
        if let Some(a) = t.strip_prefix("scratch_al_") {
            return a.parse().map(Scheme::ScratchAl).map_err(|_| bad());
        }
        if let Some(a) = t.strip_prefix("scratch_") {
            return a.parse().map(Scheme::Scratch).map_err(|_| bad());
        }
        let (head, args) = t.split_once('(').ok_or_else(bad)?;
        let args = args.strip_suffix(')').ok_or_else(bad)?;
        let (a, k) = args.split_once(',').ok_or_else(bad)?;
        let arch: Arch = a.parse().map_err(|_| bad())?;
        let k: usize = k.trim().parse().map_err(|_| bad())?;
        match head.trim() {
            "tf_k" => Ok(Scheme::Tf { arch, k }),
            "tf_k_plus_al" => Ok(Scheme::TfAl { arch, k }),
            _ => Err(bad()),
        }
    }
}

/// Splits a scheme list on the commas that sit outside parentheses.
pub fn parse_schemes(list: &str) -> Result<Vec<Scheme>, HarnessError> {
    let mut out = vec![];
    let mut depth = 0;
    let mut start = 0;
    for (i, c) in list.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(list[start..i].parse()?);
                start = i + 1;
            }
            _ => {}
        }
    }
    if !list[start..].trim().is_empty() {
        out.push(list[start..].parse()?);
    }
    Ok(out)
}

pub const DEFAULT_FRACTIONS: [f64; 8] = [0.01, 0.05, 0.10, 0.15, 0.20, 0.30, 0.40, 0.50];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source_tag: String,
    pub target_tag: String,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub schemes: Vec<Scheme>,
    /// Target-side training; its seed is replaced by each sweep seed.
    pub train: TrainConfig,
    /// Source-model training (seed 0, full source pool).
    pub source_train: TrainConfig,
    pub scale: ArchScale,
}

impl ExperimentConfig {
    pub fn new(source_tag: &str, target_tag: &str, schemes: Vec<Scheme>) -> Self {
        Self {
            source_tag: source_tag.to_string(),
            target_tag: target_tag.to_string(),
            fractions: DEFAULT_FRACTIONS.to_vec(),
            seeds: (0..10).collect(),
            schemes,
            train: TrainConfig::default(),
            source_train: TrainConfig::default(),
            scale: ArchScale::desk(),
        }
    }

    /// Keys: `source`, `target`, `schemes`, `fractions`, `seeds`, the
    /// training keys, `source_max_epochs`, `scale` (`desk` or `full`) and
    /// the width overrides `input_side`, `channels`, `fc_units`,
    /// `cnn5_kernel`, `res_kernel`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self, HarnessError> {
        let schemes = parse_schemes(&kv.require::<String>("schemes")?)?;
        let mut cfg = Self::new(&kv.require::<String>("source")?, &kv.require::<String>("target")?, schemes);
        if let Some(f) = kv.get_list("fractions")? {
            cfg.fractions = f;
        }
        if let Some(s) = kv.get_list("seeds")? {
            cfg.seeds = s;
        }
        cfg.train = TrainConfig::from_kv(kv)?;
        cfg.source_train = TrainConfig {
            max_epochs: kv.get_or("source_max_epochs", cfg.train.max_epochs)?,
            seed: 0,
            ..cfg.train
        };
        let scale = scale_from_kv(kv)?;
        cfg.scale = scale;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::from_kv(&KeyValues::load(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.fractions.is_empty() || self.seeds.is_empty() || self.schemes.is_empty() {
            return Err(HarnessError::BadExperiment(
                "fractions, seeds and schemes must be non-empty".into(),
            ));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 0.5)) {
            return Err(HarnessError::BadExperiment(format!("fraction {f} outside (0, 0.5]")));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(HarnessError::BadExperiment("seeds must be distinct".into()));
        }
        for s in &self.schemes {
            let spec = s.arch().build(&self.scale);
            spec.layer_dims()?;
            if let Some(k) = s.frozen() {
                if k > spec.n_weighted() {
                    return Err(NnError::BadK {
                        k,
                        available: spec.n_weighted(),
                    }
                    .into());
                }
            }
        }
        Ok(())
    }
}

/// Network widths from `scale` (`desk`, the default, or `full`) and the
/// overrides `input_side`, `channels`, `fc_units`, `cnn5_kernel`,
/// `res_kernel`.
pub fn scale_from_kv(kv: &KeyValues) -> Result<ArchScale, HarnessError> {
    let mut scale = match kv.get_str("scale").unwrap_or("desk") {
        "desk" => ArchScale::desk(),
        "full" => ArchScale::full(),
        other => return Err(HarnessError::BadExperiment(format!("unknown scale `{other}`"))),
    };
    scale.input_side = kv.get_or("input_side", scale.input_side)?;
    scale.channels = kv.get_or("channels", scale.channels)?;
    scale.fc_units = kv.get_or("fc_units", scale.fc_units)?;
    scale.cnn5_kernel = kv.get_or("cnn5_kernel", scale.cnn5_kernel)?;
    scale.res_kernel = kv.get_or("res_kernel", scale.res_kernel)?;
    Ok(scale)
}

/// An un-augmented dataset together with the configuration that made it.
#[derive(Debug, Clone)]
pub struct SweepData {
    pub dataset: Dataset,
    pub litho: LithoConfig,
}

/// Mean and spread over seeds of one (scheme, fraction) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub fraction: f64,
    pub mean_eps_r: f64,
    pub std_eps_r: f64,
    pub mean_eps_cd: f64,
    pub std_eps_cd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scheme: Scheme,
    pub fraction: f64,
    pub seed: u64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub curves: BTreeMap<Scheme, Vec<CurvePoint>>,
    pub runs: Vec<RunRecord>,
}

pub const CURVE_HEADER: &str = "fraction,mean_eps_r,std_eps_r,mean_eps_cd,std_eps_cd";

impl SweepResult {
    pub fn curve_csv(&self, scheme: Scheme) -> Option<String> {
        let points = self.curves.get(&scheme)?;
        let mut out = format!("{CURVE_HEADER}\n");
        for p in points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.fraction, p.mean_eps_r, p.std_eps_r, p.mean_eps_cd, p.std_eps_cd
            ));
        }
        Some(out)
    }

    /// Every run as a metrics row tagged with its scheme.
    pub fn runs_csv(&self) -> String {
        let mut out = format!("{}\n", EvalReport::CSV_HEADER);
        for r in &self.runs {
            out.push_str(&r.report.csv_row(&r.scheme.file_stem(), r.fraction, r.seed));
            out.push('\n');
        }
        out
    }

    /// Writes `<scheme>.csv` per curve plus `runs.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), HarnessError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| HarnessError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for &scheme in self.curves.keys() {
            let path = dir.join(format!("{}.csv", scheme.file_stem()));
            std::fs::write(&path, self.curve_csv(scheme).expect("present")).map_err(io(&path))?;
        }
        let path = dir.join("runs.csv");
        std::fs::write(&path, self.runs_csv()).map_err(io(&path))
    }

    /// Fractions at which ranking the schemes by threshold error disagrees
    /// with ranking them by CD error.
    pub fn fidelity_warnings(&self) -> Vec<String> {
        let schemes: Vec<&Scheme> = self.curves.keys().collect();
        let mut out = vec![];
        let Some(first) = schemes.first() else {
            return out;
        };
        for (i, p) in self.curves[*first].iter().enumerate() {
            let cells: Vec<(Scheme, CurvePoint)> = schemes.iter().map(|s| (**s, self.curves[*s][i])).collect();
            for a in 0..cells.len() {
                for b in a + 1..cells.len() {
                    let (sa, pa) = cells[a];
                    let (sb, pb) = cells[b];
                    let by_r = pa.mean_eps_r.total_cmp(&pb.mean_eps_r);
                    let by_cd = pa.mean_eps_cd.total_cmp(&pb.mean_eps_cd);
                    if by_r != by_cd {
                        out.push(format!(
                            "fraction {}: {sa} vs {sb} ranked differently by eps_r and eps_cd",
                            p.fraction
                        ));
                    }
                }
            }
        }
        out
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// The source-domain model for an architecture: trained from seed 0 on the
/// augmented 50% pool of the source dataset.
pub fn train_source_model(
    arch: Arch,
    scale: &ArchScale,
    source: &Dataset,
    cfg: &TrainConfig,
) -> Result<ModelState, HarnessError> {
    let net = Network::new(arch.build(scale))?;
    let (pool, _) = split(source, 0.5, 0)?;
    let data = TrainSet::from_dataset(&net, &augment(&pool)?)?;
    Ok(train(&net, net.init(cfg.seed), &data, cfg, 0)?.state)
}

/// Runs every (scheme, fraction, seed) cell. Per seed, the clip split is
/// drawn from that seed; training subsets of increasing fractions are
/// nested, which is checked. Source models are trained once per
/// architecture and shared by all cells.
pub fn run_sweep(cfg: &ExperimentConfig, data: &HashMap<String, SweepData>) -> Result<SweepResult, HarnessError> {
    cfg.validate()?;
    let target = data
        .get(&cfg.target_tag)
        .ok_or_else(|| HarnessError::MissingDataset(cfg.target_tag.clone()))?;
    let needs_source = cfg.schemes.iter().any(|s| s.frozen().is_some());
    let source = if needs_source {
        Some(
            data.get(&cfg.source_tag)
                .ok_or_else(|| HarnessError::MissingDataset(cfg.source_tag.clone()))?,
        )
    } else {
        None
    };

    let mut sources: HashMap<Arch, ModelState> = HashMap::new();
    for s in &cfg.schemes {
        if let (Some(src), true) = (source, s.frozen().is_some()) {
            if let std::collections::hash_map::Entry::Vacant(e) = sources.entry(s.arch()) {
                let model = train_source_model(s.arch(), &cfg.scale, &src.dataset, &cfg.source_train)?;
                e.insert(model);
            }
        }
    }

    let nets: HashMap<Arch, Network> = cfg
        .schemes
        .iter()
        .map(|s| Ok((s.arch(), Network::new(s.arch().build(&cfg.scale))?)))
        .collect::<Result<_, NnError>>()?;
    let width = target.litho.rule.contact_width();
    let n_clips = target.dataset.clip_ids().len();
    let mut sorted_fracs = cfg.fractions.clone();
    sorted_fracs.sort_by(f64::total_cmp);

    let mut reports: BTreeMap<(Scheme, usize), Vec<EvalReport>> = BTreeMap::new();
    let mut runs = vec![];
    for &seed in &cfg.seeds {
        let (pool, test) = split(&target.dataset, 0.5, seed)?;
        let test = augment(&test)?;
        let mut prev: Option<(f64, BTreeSet<u32>)> = None;
        for &f in &sorted_fracs {
            let (random_train, _) = split(&target.dataset, f, seed)?;
            if random_train.is_empty() {
                return Err(HarnessError::EmptyTraining {
                    fraction: f,
                    clips: n_clips,
                });
            }
            let clips: BTreeSet<u32> = random_train.clip_ids().into_iter().collect();
            if let Some((pf, pc)) = &prev {
                if !pc.is_subset(&clips) {
                    return Err(HarnessError::NestingViolated {
                        small: *pf,
                        large: f,
                        seed,
                    });
                }
            }
            prev = Some((f, clips));

            let mut selected: Option<Dataset> = None;
            for &scheme in &cfg.schemes {
                let train_ds = if scheme.uses_selection() {
                    if selected.is_none() {
                        let idx = select_samples(&pool, random_train.len(), seed)?;
                        selected = Some(pool.subset(&idx));
                    }
                    selected.as_ref().expect("just filled")
                } else {
                    &random_train
                };
                let net = &nets[&scheme.arch()];
                let train_set = TrainSet::from_dataset(net, &augment(train_ds)?)?;
                let tcfg = TrainConfig { seed, ..cfg.train };
                let state = match scheme.frozen() {
                    None => train(net, net.init(seed), &train_set, &tcfg, 0)?.state,
                    Some(k) => {
                        let src = &sources[&scheme.arch()];
                        transfer_train(net, net.spec(), src, &train_set, &TransferPlan::new(k, tcfg))?.state
                    }
                };
                let report = cd_rms(&test, net, &state, width)?;
                let fi = cfg.fractions.iter().position(|x| *x == f).expect("from config");
                reports.entry((scheme, fi)).or_default().push(report);
                runs.push(RunRecord {
                    scheme,
                    fraction: f,
                    seed,
                    report,
                });
            }
        }
    }

    let mut curves = BTreeMap::new();
    for &scheme in &cfg.schemes {
        let points = cfg
            .fractions
            .iter()
            .enumerate()
            .map(|(fi, &fraction)| {
                let cell = &reports[&(scheme, fi)];
                let (mean_eps_r, std_eps_r) = mean_std(&cell.iter().map(|r| r.eps_r).collect::<Vec<_>>());
                let (mean_eps_cd, std_eps_cd) = mean_std(&cell.iter().map(|r| r.eps_cd).collect::<Vec<_>>());
                CurvePoint {
                    fraction,
                    mean_eps_r,
                    std_eps_r,
                    mean_eps_cd,
                    std_eps_cd,
                }
            })
            .collect();
        curves.insert(scheme, points);
    }
    Ok(SweepResult { curves, runs })
}

/// For each scheme and target CD error, the smallest fraction whose mean
/// CD error reaches the target, or `unreached`.
pub fn data_required_table(curves: &[(String, Vec<CurvePoint>)], targets: &[f64]) -> String {
    let mut out = String::from("scheme,target_eps_cd,fraction\n");
    for (name, points) in curves {
        let mut sorted = points.clone();
        sorted.sort_by(|a, b| a.fraction.total_cmp(&b.fraction));
        for &t in targets {
            let hit = sorted.iter().find(|p| p.mean_eps_cd <= t);
            let cell = hit.map_or_else(|| "unreached".to_string(), |p| p.fraction.to_string());
            out.push_str(&format!("{name},{t},{cell}\n"));
        }
    }
    out
}

/// Reads a curve CSV written by [`SweepResult::write`].
pub fn parse_curve_csv(text: &str) -> Result<Vec<CurvePoint>, HarnessError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CURVE_HEADER) {
        return Err(HarnessError::BadExperiment("curve CSV header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| HarnessError::BadExperiment(format!("curve CSV row `{l}`")))?;
            match v[..] {
                [fraction, mean_eps_r, std_eps_r, mean_eps_cd, std_eps_cd] => Ok(CurvePoint {
                    fraction,
                    mean_eps_r,
                    std_eps_r,
                    mean_eps_cd,
                    std_eps_cd,
                }),
                _ => Err(HarnessError::BadExperiment(format!("curve CSV row `{l}`"))),
            }
        })
        .collect()
}

/// Outcome of one run of the average-loss bound on a real pool.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInstance {
    pub selected: Vec<usize>,
    pub params: LipschitzParams,
    pub report: BoundReport,
    /// The same check with the labels of unselected samples pushed far
    /// from the model; must fail for the bound to be informative.
    pub probe: BoundReport,
    pub epochs: usize,
}

/// A small plain regressor on full-resolution images: 8x max-pooling,
/// then two fully connected layers.
pub fn bound_regressor() -> ModelSpec {
    ModelSpec {
        input: (1, IMAGE_SIDE, IMAGE_SIDE),
        layers: vec![
            LayerSpec::MaxPool { factor: 8 },
            LayerSpec::Fc { units: 16 },
            LayerSpec::Relu,
            LayerSpec::Fc { units: 1 },
        ],
    }
}

/// Selects `k` medoids of `pool`, fits [`bound_regressor`] to them until the
/// mean squared error is at most `tol` (or `max_epochs` pass), then checks
/// the bound on the whole pool and on a label-corrupted copy.
pub fn bound_instance(
    pool: &Dataset,
    oracle: &GoldenResistModel,
    k: usize,
    seed: u64,
    tol: f64,
    max_epochs: usize,
) -> Result<BoundInstance, HarnessError> {
    let net = Network::new(bound_regressor())?;
    let all = TrainSet::from_dataset(&net, pool)?;
    let labels: Vec<f64> = all.labels.iter().map(|&y| y as f64).collect();
    let selected = select_samples(pool, k, seed)?;
    let fit_set = all.subset(&selected);
    let cfg = TrainConfig {
        batch_size: k,
        max_epochs: 250,
        lr: 3e-3,
        seed,
    };
    let mut state = net.init(seed);
    let mut epochs = 0;
    while epochs < max_epochs && eval_mse(&net, &state, &fit_set)? > tol {
        state = train(&net, state, &fit_set, &cfg, 0)?.state;
        epochs += cfg.max_epochs;
    }
    let params = estimate_lipschitz_params(&net, &state, oracle, &all.inputs, &labels, selected[0])?;
    let report = check_coreset_bound(&net, &state, &all.inputs, &labels, &selected, &params, &[], tol)?;
    let offset = 2.0 * report.rhs.sqrt() + 1.0;
    let corrupted: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| if selected.contains(&i) { y } else { y + offset })
        .collect();
    let probe = check_coreset_bound(&net, &state, &all.inputs, &corrupted, &selected, &params, &[], tol)?;
    Ok(BoundInstance {
        selected,
        params,
        report,
        probe,
        epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_names_round_trip() {
        for s in [
            Scheme::Scratch(Arch::Cnn5),
            Scheme::ScratchAl(Arch::Cnn10),
            Scheme::Tf {
                arch: Arch::ResNet10,
                k: 8,
            },
            Scheme::TfAl {
                arch: Arch::ResNet10,
                k: 0,
            },
        ] {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert!(matches!("scratch_vgg".parse::<Scheme>(), Err(HarnessError::UnknownScheme(_))));
        assert!("tf_k(resnet10)".parse::<Scheme>().is_err());
        assert_eq!(
            parse_schemes("scratch_cnn5, tf_k(resnet10,0),tf_k_plus_al(resnet10, 8)").unwrap().len(),
            3
        );
    }

    #[test]
    fn experiment_validation() {
        let kv = KeyValues::parse("source = N7a\ntarget = N7b\nschemes = scratch_cnn5\nfractions = 0.05,0.5\nseeds = 0,1\n").unwrap();
        let cfg = ExperimentConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.fractions, vec![0.05, 0.5]);
        assert_eq!(cfg.scale, ArchScale::desk());
        for bad in ["fractions = 0.6", "seeds = 1,1", "schemes = tf_k(cnn5,6)", "scale = huge"] {
            let (k, _) = bad.split_once('=').unwrap();
            let mut kv = kv.clone();
            kv.set(k.trim(), bad.split_once('=').unwrap().1.trim());
            assert!(ExperimentConfig::from_kv(&kv).is_err(), "{bad}");
        }
    }

    #[test]
    fn required_fraction_table() {
        let pt = |fraction, mean_eps_cd| CurvePoint {
            fraction,
            mean_eps_r: 0.0,
            std_eps_r: 0.0,
            mean_eps_cd,
            std_eps_cd: 0.0,
        };
        let curves = vec![
            ("a".to_string(), vec![pt(0.01, 3.0), pt(0.05, 2.0), pt(0.1, 1.2)]),
            ("b".to_string(), vec![pt(0.01, 5.0), pt(0.05, 4.5), pt(0.1, 4.0)]),
        ];
        let table = data_required_table(&curves, &[1.5, 3.5, 6.0]);
        assert_eq!(
            table,
            "scheme,target_eps_cd,fraction\n\
             a,1.5,0.1\na,3.5,0.01\na,6,0.01\n\
             b,1.5,unreached\nb,3.5,unreached\nb,6,0.01\n"
        );
    }

    #[test]
    fn mean_and_sample_std() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }
}
