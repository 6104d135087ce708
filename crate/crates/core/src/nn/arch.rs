//! The three regressor topologies: CNN-5, ResNet-10 and its shortcut-free
//! twin CNN-10.
//!
//! ResNet-10 layout (pooling sits between stages, never after the last one):
//!
//! ```text
//! stem   [begin0 conv relu conv end0(broadcast) relu] pool
//! block1 [begin1 conv relu conv end1 relu] pool
//! block2 [begin2 conv relu conv end2 relu] pool
//! block3 [begin3 conv relu conv end3 relu]
//! head   fc relu dropout(0.5) fc(1)
//! ```
//!
//! The stem's shortcut broadcasts the single-channel input across all
//! channels. CNN-10 is the same stack with the shortcut markers removed.

use std::fmt;
use std::str::FromStr;

use super::model::{LayerSpec, ModelSpec};

/// Width parameters shared by all three topologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchScale {
    /// Input edge in pixels; aerial images are average-pooled down to it.
    pub input_side: usize,
    /// Filters in every convolution layer.
    pub channels: usize,
    /// Hidden units of the first fully connected layer.
    pub fc_units: usize,
    /// Kernel edge of the CNN-5 convolutions.
    pub cnn5_kernel: usize,
    /// Kernel edge of the ResNet-10 / CNN-10 convolutions.
    pub res_kernel: usize,
}

impl ArchScale {
    /// Full size: 64x64 input, 64 filters, 7x7 CNN-5 kernels, 256 hidden units.
    pub const fn full() -> Self {
        Self {
            input_side: 64,
            channels: 64,
            fc_units: 256,
            cnn5_kernel: 7,
            res_kernel: 3,
        }
    }

    /// Reduced widths for single-core experiments.
    pub const fn desk() -> Self {
        Self {
            input_side: 16,
            channels: 8,
            fc_units: 32,
            cnn5_kernel: 5,
            res_kernel: 3,
        }
    }
}

impl Default for ArchScale {
    fn default() -> Self {
        Self::full()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arch {
    Cnn5,
    Cnn10,
    ResNet10,
}

impl Arch {
    pub fn build(self, scale: &ArchScale) -> ModelSpec {
        match self {
            Arch::Cnn5 => cnn5(scale),
            Arch::Cnn10 => resnet10(scale).without_shortcuts(),
            Arch::ResNet10 => resnet10(scale),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Cnn5 => "cnn5",
            Arch::Cnn10 => "cnn10",
            Arch::ResNet10 => "resnet10",
        })
    }
}

impl FromStr for Arch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cnn5" => Ok(Arch::Cnn5),
            "cnn10" => Ok(Arch::Cnn10),
            "resnet10" => Ok(Arch::ResNet10),
            other => Err(format!("unknown architecture `{other}`")),
        }
    }
}

fn head(layers: &mut Vec<LayerSpec>, fc_units: usize) {
    layers.extend([
        LayerSpec::Fc { units: fc_units },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Fc { units: 1 },
    ]);
}

pub fn cnn5(scale: &ArchScale) -> ModelSpec {
    let mut layers = vec![];
    for _ in 0..3 {
        layers.extend([
            LayerSpec::Conv {
                filters: scale.channels,
                kernel: scale.cnn5_kernel,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { factor: 2 },
        ]);
    }
    head(&mut layers, scale.fc_units);
    ModelSpec {
        input: (1, scale.input_side, scale.input_side),
        layers,
    }
}

pub fn resnet10(scale: &ArchScale) -> ModelSpec {
    let conv = LayerSpec::Conv {
        filters: scale.channels,
        kernel: scale.res_kernel,
    };
    let mut layers = vec![];
    for id in 0..4u32 {
        layers.extend([
            LayerSpec::ShortcutBegin { id },
            conv,
            LayerSpec::Relu,
            conv,
            LayerSpec::ShortcutEnd { id, broadcast: id == 0 },
            LayerSpec::Relu,
        ]);
        if id < 3 {
            layers.push(LayerSpec::MaxPool { factor: 2 });
        }
    }
    head(&mut layers, scale.fc_units);
    ModelSpec {
        input: (1, scale.input_side, scale.input_side),
        layers,
    }
}

/// Full-size CNN-5.
pub fn build_cnn5() -> ModelSpec {
    cnn5(&ArchScale::full())
}

/// Full-size ResNet-10.
pub fn build_resnet10() -> ModelSpec {
    resnet10(&ArchScale::full())
}

/// Full-size CNN-10 (ResNet-10 without shortcuts).
pub fn build_cnn10() -> ModelSpec {
    build_resnet10().without_shortcuts()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_counts() {
        let c5 = build_cnn5();
        assert_eq!((c5.n_conv(), c5.n_fc()), (3, 2));
        assert_eq!(c5.layers[0], LayerSpec::Conv { filters: 64, kernel: 7 });
        for spec in [build_resnet10(), build_cnn10()] {
            assert_eq!((spec.n_conv(), spec.n_fc()), (8, 2));
        }
        assert!(build_resnet10().has_shortcuts());
        assert!(!build_cnn10().has_shortcuts());
    }

    #[test]
    fn all_specs_validate_to_scalar() {
        for scale in [ArchScale::full(), ArchScale::desk()] {
            for arch in [Arch::Cnn5, Arch::Cnn10, Arch::ResNet10] {
                let dims = arch.build(&scale).layer_dims().unwrap();
                assert_eq!(*dims.last().unwrap(), (1, 1, 1));
            }
        }
    }

    #[test]
    fn arch_names_round_trip() {
        for arch in [Arch::Cnn5, Arch::Cnn10, Arch::ResNet10] {
            assert_eq!(arch.to_string().parse::<Arch>().unwrap(), arch);
        }
        assert!("vgg".parse::<Arch>().is_err());
    }
}
