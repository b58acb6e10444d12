//! Named configs: laptop-scale versions of the published training setups.

use serde_json::{json, Value};

pub const PRESETS: [&str; 3] = ["mnist-2c2f-like", "blobs-fast", "fig1-sweep"];

pub fn preset(name: &str) -> Option<Value> {
    Some(match name {
        "blobs-fast" => json!({
            "name": "blobs-fast",
            "data": {
                "kind": "blobs", "classes": 10, "train_per_class": 100, "test_per_class": 20,
                "image_shape": [1, 16, 16], "spread": 0.5
            },
            "model": {
                "arch": {"kind": "mlp", "hidden": [64]},
                "hook": "blf",
                "gamma": {"mode": "fixed", "gamma": 1.0}
            },
            "train": {
                "epochs": 5, "batch_size": 32,
                "sgd": {"lr": 0.05, "momentum": 0.9, "weight_decay": 0.0005}
            },
            "attack": {"kind": "pgd", "epsilon": 0.1, "step_size": 0.01, "iterations": 10},
            "eval_epsilons": [0.0, 0.05, 0.1, 0.2],
            "twin": true,
            "surface": {"datapoints": [0, 1], "direction_seeds": [1, 2]}
        }),
        // 2C2F: conv 10@5x5, conv 20@5x5, dense 320→50→10, 50% dropout.
        "mnist-2c2f-like" => json!({
            "name": "mnist-2c2f-like",
            "data": {
                "kind": "idx",
                "train_images": "data/mnist/train-images-idx3-ubyte",
                "train_labels": "data/mnist/train-labels-idx1-ubyte",
                "test_images": "data/mnist/t10k-images-idx3-ubyte",
                "test_labels": "data/mnist/t10k-labels-idx1-ubyte",
                "train_subset": 1000,
                "test_subset": 200,
                "fallback": {
                    "classes": 10, "train_per_class": 100, "test_per_class": 20,
                    "image_shape": [1, 28, 28], "spread": 0.15
                }
            },
            "model": {
                "arch": {"kind": "cnn", "channels": [10, 20], "kernel": 5, "hidden": 50, "dropout": 0.5},
                "hook": "blf",
                "gamma": {"mode": "fixed", "gamma": 1.0}
            },
            "train": {
                "epochs": 10, "batch_size": 64,
                "sgd": {"lr": 0.05, "momentum": 0.9, "weight_decay": 0.0}
            },
            "attack": {"kind": "pgd", "epsilon": 0.3, "step_size": 0.01, "iterations": 20},
            "eval_epsilons": [0.0, 0.1, 0.2, 0.3],
            "twin": true
        }),
        // Grids follow the CIFAR-10 scatter lists; robust accuracy at a single budget.
        "fig1-sweep" => json!({
            "name": "fig1-sweep",
            "data": {
                "kind": "blobs", "classes": 4, "train_per_class": 60, "test_per_class": 30,
                "image_shape": [32], "spread": 0.2
            },
            "model": {"arch": {"kind": "mlp", "hidden": [32]}},
            "train": {
                "epochs": 10, "batch_size": 32,
                "sgd": {"lr": 0.1, "momentum": 0.9, "weight_decay": 0.0005}
            },
            "attack": {"kind": "pgd", "step_size": 0.02, "iterations": 10},
            "sweep": {
                "epsilon": 0.1,
                "baseline": true,
                "label_smoothing": [0.005, 0.01, 0.05, 0.1, 0.3, 0.5, 0.75, 0.85],
                "logit_squeezing": [0.005, 0.01, 0.05, 0.1, 0.3, 0.5, 0.75, 0.9],
                "tanh": [0.1, 0.2, 0.3, 0.4, 0.5, 0.8, 1.0, 1.2],
                "blf": [0.1, 0.2, 0.3, 0.4, 0.5, 0.8, 1.0, 1.2]
            }
        }),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{Command, ExperimentConfig};

    #[test]
    fn presets_parse_and_validate() {
        for name in PRESETS {
            let cfg = ExperimentConfig::from_value(preset(name).unwrap()).unwrap();
            for command in [Command::Theorems, Command::Train, Command::Sweep, Command::Surface, Command::Opnorms] {
                cfg.validate(command).unwrap();
            }
        }
        assert!(preset("cifar").is_none());
    }
}
