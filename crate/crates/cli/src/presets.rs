//! Built-in desk-scale experiment presets.
//!
//! Each preset is a complete, standalone TOML config, scaled down from the
//! reference protocol so a full run finishes in minutes on one CPU core.
//! The scaling factors are recorded as comments inside each document and
//! the resolved config is echoed into every run manifest, so a run remains
//! reproducible from its artifacts alone.
//!
//! The granularity sweep is the abrupt preset plus the `output-interp`
//! family (`s` in {0.02, 0.05, 0.1, 0.5, 1.0}); `--step-size` can override
//! `s` on any preset from the command line.

use crate::{CliError, Result};

/// `(name, document)` for every built-in preset.
pub const PRESETS: &[(&str, &str)] = &[
    ("smoke", SMOKE),
    ("random-label-abrupt", RANDOM_LABEL_ABRUPT),
    ("random-label-output-interp", RANDOM_LABEL_OUTPUT_INTERP),
    ("random-label-output-interp-s005", RANDOM_LABEL_OUTPUT_INTERP_S005),
    ("random-label-output-interp-s01", RANDOM_LABEL_OUTPUT_INTERP_S01),
    ("random-label-output-interp-s05", RANDOM_LABEL_OUTPUT_INTERP_S05),
    ("random-label-l2", RANDOM_LABEL_L2),
    ("random-label-shrink-perturb", RANDOM_LABEL_SHRINK_PERTURB),
    ("random-label-spectral", RANDOM_LABEL_SPECTRAL),
    ("random-label-redo", RANDOM_LABEL_REDO),
    ("pixel-permute-abrupt", PIXEL_PERMUTE_ABRUPT),
    ("pixel-permute-input-interp", PIXEL_PERMUTE_INPUT_INTERP),
    ("seq2seq-abrupt", SEQ2SEQ_ABRUPT),
    ("seq2seq-task-sample", SEQ2SEQ_TASK_SAMPLE),
    ("bigram-abrupt", BIGRAM_ABRUPT),
    ("bigram-task-sample", BIGRAM_TASK_SAMPLE),
];

/// Look up a preset document by name.
pub fn preset(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, doc)| *doc)
        .ok_or_else(|| CliError::UnknownPreset(name.to_string()))
}

/// Names of all built-in presets, in listing order.
pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// Tiny end-to-end exercise of the whole pipeline (a few seconds): used
/// for smoke checks and byte-reproducibility comparisons.
const SMOKE: &str = r#"
# Miniature pipeline check; not an experiment.
seeds = [1, 2]

[environment]
kind = "random_label"
input_dim = 16
classes = 4
samples = 256
noise = 1.0

[model]
hidden = [32, 32]

[schedule]
transition = "abrupt"
tasks = 3
epochs_per_task = 2

[optimizer]
batch = 64
"#;

// ─── Random-label family ─────────────────────────────────────────────────
//
// Reference protocol: 28x28 images (784 dims), 10 classes, 5120 samples,
// batch 512, 240 epochs/task, 50 tasks, 5 seeds.  Desk scale: 64-dim
// synthetic Gaussian clusters (dims /12), samples /4, batch /4, epochs /4,
// 3 seeds; 50 tasks kept, since the effect accumulates over the task count.

const RANDOM_LABEL_ABRUPT: &str = r#"
# Label memorization under wholesale task swaps: the trainability-collapse
# baseline.  Scale: dims 784->64, samples 5120->1280, batch 512->128,
# epochs 240->60, seeds 5->3.
seeds = [1, 2, 3]

[environment]
kind = "random_label"
input_dim = 64
classes = 10
samples = 1280
noise = 1.0

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "abrupt"
step_size = 1.0
tasks = 50
epochs_per_task = 60

[optimizer]
lr = 0.001
batch = 128
"#;

const RANDOM_LABEL_OUTPUT_INTERP: &str = r#"
# Same stream bridged by target interpolation at the finest sweep
# granularity (s = 0.02, 50 stages per transition), compute-matched to the
# abrupt budget.  Scale factors as in random-label-abrupt.
seeds = [1, 2, 3]

[environment]
kind = "random_label"
input_dim = 64
classes = 10
samples = 1280
noise = 1.0

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "output_interp"
step_size = 0.02
compute_matched = true
tasks = 50
epochs_per_task = 60

[optimizer]
lr = 0.001
batch = 128
"#;

const RANDOM_LABEL_OUTPUT_INTERP_S005: &str = r#"
# Granularity sweep point s = 0.05 (20 stages per transition).
seeds = [1, 2, 3]

[environment]
kind = "random_label"
input_dim = 64
classes = 10
samples = 1280
noise = 1.0

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "output_interp"
step_size = 0.05
compute_matched = true
tasks = 50
epochs_per_task = 60

[optimizer]
lr = 0.001
batch = 128
"#;

const RANDOM_LABEL_OUTPUT_INTERP_S01: &str = r#"
# Granularity sweep point s = 0.1 (10 stages per transition).
seeds = [1, 2, 3]

[environment]
kind = "random_label"
input_dim = 64
classes = 10
samples = 1280
noise = 1.0

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "output_interp"
step_size = 0.1
compute_matched = true
tasks = 50
epochs_per_task = 60

[optimizer]
lr = 0.001
batch = 128
"#;

const RANDOM_LABEL_OUTPUT_INTERP_S05: &str = r#"
# Granularity sweep point s = 0.5 (2 stages per transition).
seeds = [1, 2, 3]

[environment]
kind = "random_label"
input_dim = 64
classes = 10
samples = 1280
noise = 1.0

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "output_interp"
step_size = 0.5
compute_matched = true
tasks = 50
epochs_per_task = 60

[optimizer]
lr = 0.001
batch = 128
"#;

// Mitigation baselines run the abrupt schedule on the same budget.  The
// periodic interventions fire every 600 steps = once per task boundary
// (1280 rows / batch 128 = 10 steps per epoch, x 60 epochs).

const RANDOM_LABEL_L2: &str = r#"
# Abrupt stream with an L2 gradient penalty on the weight matrices.
seeds = [1, 2, 3]

[environment]
kind = "random_label"
input_dim = 64
classes = 10
samples = 1280
noise = 1.0

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "abrupt"
tasks = 50
epochs_per_task = 60

[optimizer]
lr = 0.001
batch = 128

[mitigation]
kind = "weight_decay"
lambda = 1e-4
"#;

const RANDOM_LABEL_SHRINK_PERTURB: &str = r#"
# Abrupt stream with periodic shrink-and-perturb (once per task boundary).
seeds = [1, 2, 3]

[environment]
kind = "random_label"
input_dim = 64
classes = 10
samples = 1280
noise = 1.0

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "abrupt"
tasks = 50
epochs_per_task = 60

[optimizer]
lr = 0.001
batch = 128

[mitigation]
kind = "shrink_perturb"
gamma = 0.8
noise_scale = 0.01
period = 600
"#;

const RANDOM_LABEL_SPECTRAL: &str = r#"
# Abrupt stream with a top-singular-value penalty on each weight matrix.
seeds = [1, 2, 3]

[environment]
kind = "random_label"
input_dim = 64
classes = 10
samples = 1280
noise = 1.0

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "abrupt"
tasks = 50
epochs_per_task = 60

[optimizer]
lr = 0.001
batch = 128

[mitigation]
kind = "spectral_penalty"
lambda = 0.01
"#;

const RANDOM_LABEL_REDO: &str = r#"
# Abrupt stream with periodic dormant-unit recycling (once per task
# boundary, dormancy threshold tau = 0.1).
seeds = [1, 2, 3]

[environment]
kind = "random_label"
input_dim = 64
classes = 10
samples = 1280
noise = 1.0

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "abrupt"
tasks = 50
epochs_per_task = 60

[optimizer]
lr = 0.001
batch = 128

[mitigation]
kind = "recycle_dormant"
tau = 0.1
period = 600
"#;

// ─── Pixel-permute family ────────────────────────────────────────────────
//
// Reference protocol: 784-dim images, 5120 samples, batch 512, 240
// epochs/task, lr 1e-4.  Desk scale: 64-dim clusters, 1280 train / 512
// test, batch 128, 20 epochs/task, 3 seeds, 50 tasks.

const PIXEL_PERMUTE_ABRUPT: &str = r#"
# Generalization stream: fixed labels, input coordinates re-permuted per
# task.  Scale: dims 784->64, samples 5120->1280 (+512 test),
# batch 512->128, epochs 240->20, seeds 5->3.
seeds = [1, 2, 3]

[environment]
kind = "pixel_permute"
input_dim = 64
classes = 10
train_samples = 1280
test_samples = 512
noise = 1.0

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "abrupt"
tasks = 50
epochs_per_task = 20

[optimizer]
lr = 0.0001
batch = 128
"#;

const PIXEL_PERMUTE_INPUT_INTERP: &str = r#"
# Same stream bridged by input interpolation (s = 0.1, 10 stages per
# transition), compute-matched to the abrupt budget.
seeds = [1, 2, 3]

[environment]
kind = "pixel_permute"
input_dim = 64
classes = 10
train_samples = 1280
test_samples = 512
noise = 1.0

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "input_interp"
step_size = 0.1
compute_matched = true
tasks = 50
epochs_per_task = 20

[optimizer]
lr = 0.0001
batch = 128
"#;

// ─── Random seq2seq family ───────────────────────────────────────────────
//
// Reference protocol: 50-token inputs, 5-token outputs, 5120 samples,
// batch 64, 900 epochs/task.  Desk scale: 10-token inputs, 128 samples,
// 100 epochs/task, 20 tasks, 3 seeds.

const SEQ2SEQ_ABRUPT: &str = r#"
# Sequence memorization stream (train split only).  Scale: input length
# 50->10, samples 5120->128, epochs 900->100, tasks 20, seeds 3.
seeds = [1, 2, 3]

[environment]
kind = "seq2seq"
vocab = 8
input_len = 10
output_len = 5
samples = 128

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "abrupt"
tasks = 20
epochs_per_task = 100

[optimizer]
lr = 0.0001
batch = 64
"#;

const SEQ2SEQ_TASK_SAMPLE: &str = r#"
# Same stream bridged by example mixing (s = 0.1), compute-matched.
seeds = [1, 2, 3]

[environment]
kind = "seq2seq"
vocab = 8
input_len = 10
output_len = 5
samples = 128

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "task_sample"
step_size = 0.1
compute_matched = true
tasks = 20
epochs_per_task = 100

[optimizer]
lr = 0.0001
batch = 64
"#;

// ─── Bigram-cipher family ────────────────────────────────────────────────
//
// Reference protocol: sequence length 10, 1280 train / 512 test, batch 64,
// 200 epochs/task.  Desk scale keeps the data sizes (vocab 8 instead of
// 26) and cuts epochs 200->10; 20 tasks, 3 seeds.

const BIGRAM_ABRUPT: &str = r#"
# Learnable cipher stream with a held-out test split scored by BLEU-2.
# Scale: vocab 26->8, epochs 200->10; data sizes kept (1280/512, length 10).
seeds = [1, 2, 3]

[environment]
kind = "bigram_cipher"
vocab = 8
seq_len = 10
train_samples = 1280
test_samples = 512

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "abrupt"
tasks = 20
epochs_per_task = 10

[optimizer]
lr = 0.001
batch = 64
"#;

const BIGRAM_TASK_SAMPLE: &str = r#"
# Same cipher stream bridged by example mixing (s = 0.05, 20 stages per
# transition), compute-matched to the abrupt budget.
seeds = [1, 2, 3]

[environment]
kind = "bigram_cipher"
vocab = 8
seq_len = 10
train_samples = 1280
test_samples = 512

[model]
hidden = [256, 256, 256]
layer_norm = true

[schedule]
transition = "task_sample"
step_size = 0.05
compute_matched = true
tasks = 20
epochs_per_task = 10

[optimizer]
lr = 0.001
batch = 64
"#;
