//! Layer-freezing transfer: start from a source model, keep its first `k`
//! weighted layers fixed and finetune the rest on target data.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::nn::{train, ModelSpec, ModelState, Network, NnError, TrainConfig, TrainOutcome, TrainSet};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("a transfer chain needs at least one stage")]
    NoStages,
    #[error("the first stage trains from scratch and cannot freeze {0} layers")]
    FrozenScratch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferPlan {
    /// Leading weighted (conv/fc) layers kept at their source values.
    pub k_fixed: usize,
    pub train: TrainConfig,
}

impl TransferPlan {
    pub fn new(k_fixed: usize, train: TrainConfig) -> Self {
        Self { k_fixed, train }
    }
}

/// Finetunes `source` on `target` with the first `plan.k_fixed` weighted
/// layers frozen. With `k_fixed = 0` this is plain training started from the
/// source weights.
pub fn transfer_train(
    net: &Network,
    source_spec: &ModelSpec,
    source: &ModelState,
    target: &TrainSet,
    plan: &TransferPlan,
) -> Result<TrainOutcome, NnError> {
    if source_spec != net.spec() {
        return Err(NnError::SpecMismatch(
            "source model was built for a different architecture".into(),
        ));
    }
    let available = net.spec().n_weighted();
    if plan.k_fixed > available {
        return Err(NnError::BadK {
            k: plan.k_fixed,
            available,
        });
    }
    train(net, source.clone(), target, &plan.train, plan.k_fixed)
}

/// One link of a transfer chain.
#[derive(Debug, Clone, Copy)]
pub struct ChainStage<'a> {
    pub data: &'a TrainSet,
    pub plan: TransferPlan,
}

/// Trains the first stage from scratch (initialized from its seed) and
/// seeds every later stage with the previous result. Returns the model
/// after each stage.
pub fn chain_transfer(net: &Network, stages: &[ChainStage<'_>]) -> Result<Vec<TrainOutcome>, TransferError> {
    let (first, rest) = stages.split_first().ok_or(TransferError::NoStages)?;
    if first.plan.k_fixed != 0 {
        return Err(TransferError::FrozenScratch(first.plan.k_fixed));
    }
    let mut out = vec![train(net, net.init(first.plan.train.seed), first.data, &first.plan.train, 0)?];
    for stage in rest {
        let prev = &out.last().expect("first stage present").state;
        let next = transfer_train(net, net.spec(), prev, stage.data, &stage.plan)?;
        out.push(next);
    }
    Ok(out)
}

/// A transfer job as read from a plan file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanFile {
    pub source_model: PathBuf,
    pub dataset: PathBuf,
    pub out: PathBuf,
    /// Fraction of the target dataset used for finetuning.
    pub fraction: f64,
    pub seed: u64,
    pub plan: TransferPlan,
}

impl PlanFile {
    /// Keys: `source_model`, `k_fixed`, `dataset`, `fraction`, `seed`, `out`,
    /// plus any training keys. Relative paths resolve against `base`.
    pub fn from_kv(kv: &KeyValues, base: &Path) -> Result<Self, ConfigError> {
        let path = |key: &str| -> Result<PathBuf, ConfigError> {
            let p = PathBuf::from(kv.require::<String>(key)?);
            Ok(if p.is_absolute() { p } else { base.join(p) })
        };
        let mut train = TrainConfig::from_kv(kv)?;
        let seed = kv.get_or("seed", 0u64)?;
        train.seed = seed;
        Ok(Self {
            source_model: path("source_model")?,
            dataset: path("dataset")?,
            out: path("out")?,
            fraction: kv.get_or("fraction", 1.0)?,
            seed,
            plan: TransferPlan::new(kv.require("k_fixed")?, train),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let kv = KeyValues::load(path)?;
        Self::from_kv(&kv, path.parent().unwrap_or(Path::new(".")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{predict_all, LayerSpec};

    fn tiny() -> Network {
        Network::new(ModelSpec {
            input: (1, 4, 4),
            layers: vec![
                LayerSpec::Conv { filters: 2, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { factor: 2 },
                LayerSpec::Fc { units: 4 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Fc { units: 1 },
            ],
        })
        .unwrap()
    }

    fn data(seed: u64) -> TrainSet {
        let mut rng = crate::rng::SplitMix64::new(seed);
        TrainSet {
            inputs: (0..10).map(|_| (0..16).map(|_| rng.next_f64() as f32).collect()).collect(),
            labels: (0..10).map(|_| rng.uniform(0.2, 0.5) as f32).collect(),
        }
    }

    fn cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            max_epochs: 5,
            lr: 1e-2,
            seed,
        }
    }

    #[test]
    fn frozen_layers_keep_source_weights() {
        let net = tiny();
        let src = net.init(1);
        for k in 0..=3 {
            let out = transfer_train(&net, net.spec(), &src, &data(2), &TransferPlan::new(k, cfg(3))).unwrap();
            for j in 0..3 {
                assert_eq!(out.state.params[j] == src.params[j], j < k, "k={k} layer {j}");
            }
        }
    }

    #[test]
    fn all_frozen_predicts_like_source() {
        let net = tiny();
        let src = net.init(1);
        let d = data(2);
        let out = transfer_train(&net, net.spec(), &src, &d, &TransferPlan::new(3, cfg(3))).unwrap();
        assert_eq!(
            predict_all(&net, &out.state, &d.inputs).unwrap(),
            predict_all(&net, &src, &d.inputs).unwrap()
        );
    }

    #[test]
    fn tf0_is_training_from_source() {
        let net = tiny();
        let src = net.init(1);
        let d = data(2);
        let a = transfer_train(&net, net.spec(), &src, &d, &TransferPlan::new(0, cfg(3))).unwrap();
        let b = train(&net, src, &d, &cfg(3), 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_k_and_spec() {
        let net = tiny();
        let src = net.init(1);
        assert!(matches!(
            transfer_train(&net, net.spec(), &src, &data(2), &TransferPlan::new(4, cfg(0))),
            Err(NnError::BadK { k: 4, available: 3 })
        ));
        let other = crate::nn::Arch::Cnn5.build(&crate::nn::ArchScale::desk());
        assert!(matches!(
            transfer_train(&net, &other, &src, &data(2), &TransferPlan::new(0, cfg(0))),
            Err(NnError::SpecMismatch(_))
        ));
    }

    #[test]
    fn chains_compose() {
        let net = tiny();
        let (d1, d2) = (data(5), data(6));
        let single = chain_transfer(&net, &[ChainStage { data: &d1, plan: TransferPlan::new(0, cfg(1)) }]).unwrap();
        assert_eq!(single[0], train(&net, net.init(1), &d1, &cfg(1), 0).unwrap());

        let two = chain_transfer(
            &net,
            &[
                ChainStage { data: &d1, plan: TransferPlan::new(0, cfg(1)) },
                ChainStage { data: &d2, plan: TransferPlan::new(3, cfg(2)) },
            ],
        )
        .unwrap();
        assert_eq!(
            predict_all(&net, &two[1].state, &d2.inputs).unwrap(),
            predict_all(&net, &two[0].state, &d2.inputs).unwrap()
        );
        assert!(matches!(chain_transfer(&net, &[]), Err(TransferError::NoStages)));
    }

    #[test]
    fn plan_file_resolves_relative_paths() {
        let kv = KeyValues::parse("source_model = src.nn\nk_fixed = 8\ndataset = /data/n7b.ds\nfraction = 0.05\nseed = 4\nout = tf8.nn\n").unwrap();
        let p = PlanFile::from_kv(&kv, Path::new("/runs")).unwrap();
        assert_eq!(p.source_model, PathBuf::from("/runs/src.nn"));
        assert_eq!(p.dataset, PathBuf::from("/data/n7b.ds"));
        assert_eq!(p.plan.k_fixed, 8);
        assert_eq!(p.plan.train.seed, 4);
        assert_eq!(p.fraction, 0.05);
        assert!(PlanFile::from_kv(&KeyValues::parse("k_fixed = 1").unwrap(), Path::new(".")).is_err());
    }
}
