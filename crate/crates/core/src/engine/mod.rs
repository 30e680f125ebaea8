//! Minimal feed-forward engine: forward passes with pre-activation capture,
//! input gradients, and a plain SGD trainer for producing fixtures.

pub mod layer;
pub mod network;
pub mod train;

pub use layer::{Conv2d, Layer, LayerKind, Linear, MaxPool2d};
pub use network::{argmax, cross_entropy, softmax, FeatureTrace, Gradients, LayerPlan, NetworkModel};
pub use train::{accuracy, train_sgd, EpochStats, TrainConfig};

/// Small CNN used for the desk-scale experiments: three conv layers and two
/// linear layers, giving five votable layers.
pub fn reference_cnn(num_classes: usize) -> Vec<LayerPlan> {
    use LayerPlan::*;
    vec![
        Conv2d { out_channels: 8, kernel: 3, stride: 1, padding: 1 },
        Relu,
        MaxPool2d { window: 2, stride: 2 },
        Conv2d { out_channels: 16, kernel: 3, stride: 1, padding: 1 },
        Relu,
        MaxPool2d { window: 2, stride: 2 },
        Conv2d { out_channels: 16, kernel: 3, stride: 1, padding: 1 },
        Relu,
        Flatten,
        Linear { out_dim: 64 },
        Relu,
        Linear { out_dim: num_classes },
    ]
}
