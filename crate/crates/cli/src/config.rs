//! Experiment configuration: a single TOML document, fully validated, with
//! every default resolved before a run starts.
//!
//! The schema mirrors the pieces of a run: an `[environment]` table picks
//! the task generator, `[model]` the MLP shape, `[schedule]` the transition
//! kind and granularity, `[optimizer]` Adam's settings, `[mitigation]` an
//! optional intervention, plus top-level `run_id` and `seeds`.  Unknown keys
//! are rejected, and validation errors name the offending key.
//!
//! Learning-rate and batch defaults depend on the environment kind (image
//! streams default to batch 512, sequence streams to batch 64; label
//! memorization and the cipher use lr 1e-3, the other two 1e-4), so the
//! optimizer table may be omitted entirely.

use serde::{Deserialize, Serialize};

use plastlab_core::mitigations::Mitigation;
use plastlab_core::nn::MlpConfig;
use plastlab_core::transitions::ScheduleMode;

use crate::{CliError, Result};

// ─── Environment ─────────────────────────────────────────────────────────

/// Which task stream to generate, with its generator parameters.
///
/// All sizes are desk-scale defaults; presets override them explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentCfg {
    /// Fixed synthetic images, labels re-drawn uniformly for every task.
    /// Pure trainability probe: train split only.
    RandomLabel {
        #[serde(default = "d_input_dim")]
        input_dim: usize,
        #[serde(default = "d_classes")]
        classes: usize,
        #[serde(default = "d_samples")]
        samples: usize,
        #[serde(default = "d_noise")]
        noise: f64,
    },
    /// Fixed synthetic images and labels, input coordinates re-permuted
    /// for every task; the same permutation is applied to train and test.
    PixelPermute {
        #[serde(default = "d_input_dim")]
        input_dim: usize,
        #[serde(default = "d_classes")]
        classes: usize,
        #[serde(default = "d_samples")]
        train_samples: usize,
        #[serde(default = "d_test_samples")]
        test_samples: usize,
        #[serde(default = "d_noise")]
        noise: f64,
    },
    /// Random token-sequence memorization: `input_len` tokens in,
    /// `output_len` tokens out, all drawn uniformly per task.
    Seq2seq {
        #[serde(default = "d_vocab")]
        vocab: usize,
        #[serde(default = "d_seq_len")]
        input_len: usize,
        #[serde(default = "d_output_len")]
        output_len: usize,
        #[serde(default = "d_seq_samples")]
        samples: usize,
    },
    /// Learnable substitution cipher over adjacent token pairs; fresh
    /// permutation per task, held-out test split scored with BLEU-2.
    BigramCipher {
        #[serde(default = "d_vocab")]
        vocab: usize,
        #[serde(default = "d_seq_len")]
        seq_len: usize,
        #[serde(default = "d_samples")]
        train_samples: usize,
        #[serde(default = "d_test_samples")]
        test_samples: usize,
    },
}

fn d_input_dim() -> usize {
    64
}
fn d_classes() -> usize {
    10
}
fn d_samples() -> usize {
    1280
}
fn d_test_samples() -> usize {
    512
}
fn d_noise() -> f64 {
    1.0
}
fn d_vocab() -> usize {
    8
}
fn d_seq_len() -> usize {
    10
}
fn d_output_len() -> usize {
    5
}
fn d_seq_samples() -> usize {
    128
}

impl EnvironmentCfg {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EnvironmentCfg::RandomLabel { .. } => "random_label",
            EnvironmentCfg::PixelPermute { .. } => "pixel_permute",
            EnvironmentCfg::Seq2seq { .. } => "seq2seq",
            EnvironmentCfg::BigramCipher { .. } => "bigram_cipher",
        }
    }

    /// Default learning rate for this stream (from the reference sweep:
    /// 1e-3 for label memorization and the cipher, 1e-4 otherwise).
    pub fn default_lr(&self) -> f64 {
        match self {
            EnvironmentCfg::RandomLabel { .. } | EnvironmentCfg::BigramCipher { .. } => 1e-3,
            EnvironmentCfg::PixelPermute { .. } | EnvironmentCfg::Seq2seq { .. } => 1e-4,
        }
    }

    /// Default batch size: 512 rows for image streams, 64 for sequence
    /// streams (a row is one encoded window, the MLP's training unit).
    pub fn default_batch(&self) -> usize {
        match self {
            EnvironmentCfg::RandomLabel { .. } | EnvironmentCfg::PixelPermute { .. } => 512,
            EnvironmentCfg::Seq2seq { .. } | EnvironmentCfg::BigramCipher { .. } => 64,
        }
    }

    /// Dimension of one encoded input row as fed to the MLP.
    pub fn encoded_input_dim(&self) -> usize {
        match *self {
            EnvironmentCfg::RandomLabel { input_dim, .. } => input_dim,
            EnvironmentCfg::PixelPermute { input_dim, .. } => input_dim,
            EnvironmentCfg::Seq2seq {
                vocab,
                input_len,
                output_len,
                ..
            } => input_len * vocab + output_len,
            EnvironmentCfg::BigramCipher { vocab, .. } => 2 * vocab + 1,
        }
    }

    /// Number of output classes (vocabulary size for sequence streams).
    pub fn output_classes(&self) -> usize {
        match *self {
            EnvironmentCfg::RandomLabel { classes, .. } => classes,
            EnvironmentCfg::PixelPermute { classes, .. } => classes,
            EnvironmentCfg::Seq2seq { vocab, .. } => vocab,
            EnvironmentCfg::BigramCipher { vocab, .. } => vocab,
        }
    }

    /// Encoded training rows per stage (constant across the stream: every
    /// transition preserves the row count of the pure datasets).
    pub fn train_rows(&self) -> usize {
        match *self {
            EnvironmentCfg::RandomLabel { samples, .. } => samples,
            EnvironmentCfg::PixelPermute { train_samples, .. } => train_samples,
            EnvironmentCfg::Seq2seq {
                output_len,
                samples,
                ..
            } => samples * output_len,
            EnvironmentCfg::BigramCipher {
                seq_len,
                train_samples,
                ..
            } => train_samples * seq_len,
        }
    }

    /// Whether the stream carries a meaningful held-out test split.
    pub fn has_test_split(&self) -> bool {
        matches!(
            self,
            EnvironmentCfg::PixelPermute { .. } | EnvironmentCfg::BigramCipher { .. }
        )
    }

    fn validate(&self) -> Result<()> {
        let pos = |key: &str, v: usize, min: usize| {
            if v < min {
                Err(CliError::config(
                    key,
                    format!("must be at least {min}, got {v}"),
                ))
            } else {
                Ok(())
            }
        };
        match *self {
            EnvironmentCfg::RandomLabel {
                input_dim,
                classes,
                samples,
                noise,
            } => {
                pos("environment.input_dim", input_dim, 1)?;
                pos("environment.classes", classes, 2)?;
                pos("environment.samples", samples, 1)?;
                check_noise(noise)?;
            }
            EnvironmentCfg::PixelPermute {
                input_dim,
                classes,
                train_samples,
                test_samples,
                noise,
            } => {
                pos("environment.input_dim", input_dim, 1)?;
                pos("environment.classes", classes, 2)?;
                pos("environment.train_samples", train_samples, 1)?;
                pos("environment.test_samples", test_samples, 1)?;
                check_noise(noise)?;
            }
            EnvironmentCfg::Seq2seq {
                vocab,
                input_len,
                output_len,
                samples,
            } => {
                pos("environment.vocab", vocab, 2)?;
                pos("environment.input_len", input_len, 1)?;
                pos("environment.output_len", output_len, 1)?;
                pos("environment.samples", samples, 1)?;
            }
            EnvironmentCfg::BigramCipher {
                vocab,
                seq_len,
                train_samples,
                test_samples,
            } => {
                pos("environment.vocab", vocab, 2)?;
                pos("environment.seq_len", seq_len, 1)?;
                pos("environment.train_samples", train_samples, 1)?;
                pos("environment.test_samples", test_samples, 1)?;
            }
        }
        Ok(())
    }
}

fn check_noise(noise: f64) -> Result<()> {
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(CliError::config(
            "environment.noise",
            format!("must be finite and >= 0, got {noise}"),
        ));
    }
    Ok(())
}

// ─── Model ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCfg {
    /// Hidden layer widths; the input/output dims come from the environment.
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "d_true")]
    pub layer_norm: bool,
}

fn d_hidden() -> Vec<usize> {
    vec![256, 256, 256]
}
fn d_true() -> bool {
    true
}

impl Default for ModelCfg {
    fn default() -> Self {
        Self {
            hidden: d_hidden(),
            layer_norm: true,
        }
    }
}

impl ModelCfg {
    /// Concrete network shape for a given environment.
    pub fn mlp_config(&self, env: &EnvironmentCfg) -> MlpConfig {
        MlpConfig::new(
            env.encoded_input_dim(),
            self.hidden.clone(),
            env.output_classes(),
            self.layer_norm,
        )
    }
}

// ─── Schedule ────────────────────────────────────────────────────────────

/// How one task turns into the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    /// Wholesale dataset swap at each boundary (`step_size` must be 1).
    Abrupt,
    /// Targets annealed through uniform to the next task's targets
    /// (random-label stream only: it shares inputs across tasks).
    OutputInterp,
    /// Convex combination of corresponding inputs (pixel-permute stream
    /// only: tasks share labels and align sample-for-sample).
    InputInterp,
    /// Intermediate datasets mix old- and new-task examples.
    TaskSample,
}

impl TransitionKind {
    pub fn name(&self) -> &'static str {
        match self {
            TransitionKind::Abrupt => "abrupt",
            TransitionKind::OutputInterp => "output_interp",
            TransitionKind::InputInterp => "input_interp",
            TransitionKind::TaskSample => "task_sample",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleCfg {
    #[serde(default = "d_transition")]
    pub transition: TransitionKind,
    /// Interpolation step `s`; each transition passes through the stages
    /// `alpha = s, 2s, …, 1`.  Must satisfy `1/s` integral.
    #[serde(default = "d_step_size")]
    pub step_size: f64,
    /// Split one task's step budget across the stages of each transition
    /// (`true`), or give every stage the full budget (`false`).
    #[serde(default = "d_true")]
    pub compute_matched: bool,
    #[serde(default = "d_tasks")]
    pub tasks: usize,
    #[serde(default = "d_epochs")]
    pub epochs_per_task: usize,
}

fn d_transition() -> TransitionKind {
    TransitionKind::Abrupt
}
fn d_step_size() -> f64 {
    1.0
}
fn d_tasks() -> usize {
    50
}
fn d_epochs() -> usize {
    60
}

impl Default for ScheduleCfg {
    fn default() -> Self {
        Self {
            transition: d_transition(),
            step_size: d_step_size(),
            compute_matched: true,
            tasks: d_tasks(),
            epochs_per_task: d_epochs(),
        }
    }
}

impl ScheduleCfg {
    pub fn mode(&self) -> ScheduleMode {
        if self.compute_matched {
            ScheduleMode::ComputeMatched
        } else {
            ScheduleMode::FixedPerStage
        }
    }
}

// ─── Optimizer & eval ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerCfg {
    pub lr: f64,
    /// Rows per optimizer step.
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerRaw {
    lr: Option<f64>,
    batch: Option<usize>,
    beta1: Option<f64>,
    beta2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCfg {
    /// Row cap for evaluation at fractional stages; pure-task stages are
    /// always evaluated on the full split.
    #[serde(default = "d_subsample")]
    pub subsample: usize,
}

fn d_subsample() -> usize {
    256
}

impl Default for EvalCfg {
    fn default() -> Self {
        Self {
            subsample: d_subsample(),
        }
    }
}

// ─── Top level ───────────────────────────────────────────────────────────

/// A fully resolved experiment: every default filled in, every invariant
/// checked.  Serialized verbatim into the run manifest.
///
/// Scalar fields come first so the TOML echo is well-formed (values must
/// precede tables).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub seeds: Vec<u64>,
    pub environment: EnvironmentCfg,
    pub model: ModelCfg,
    pub schedule: ScheduleCfg,
    pub optimizer: OptimizerCfg,
    pub mitigation: Mitigation,
    pub eval: EvalCfg,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    run_id: Option<String>,
    seeds: Option<Vec<u64>>,
    environment: EnvironmentCfg,
    #[serde(default)]
    model: ModelCfg,
    #[serde(default)]
    schedule: Option<ScheduleCfg>,
    #[serde(default)]
    optimizer: Option<OptimizerRaw>,
    #[serde(default)]
    mitigation: Option<Mitigation>,
    #[serde(default)]
    eval: Option<EvalCfg>,
}

/// Parse and validate a TOML experiment document.  `fallback_run_id` is
/// used when the document does not set `run_id` (callers pass the preset
/// name or the file stem).
pub fn parse_config(document: &str, fallback_run_id: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig =
        toml::from_str(document).map_err(|e| CliError::ConfigSyntax(e.to_string()))?;
    let optimizer = raw.optimizer.unwrap_or_default();
    let cfg = ExperimentConfig {
        run_id: raw
            .run_id
            .unwrap_or_else(|| fallback_run_id.to_string()),
        optimizer: OptimizerCfg {
            lr: optimizer.lr.unwrap_or_else(|| raw.environment.default_lr()),
            batch: optimizer
                .batch
                .unwrap_or_else(|| raw.environment.default_batch()),
            beta1: optimizer.beta1.unwrap_or(0.9),
            beta2: optimizer.beta2.unwrap_or(0.999),
        },
        environment: raw.environment,
        model: raw.model,
        schedule: raw.schedule.unwrap_or_default(),
        mitigation: raw.mitigation.unwrap_or(Mitigation::None),
        seeds: raw.seeds.unwrap_or_else(|| vec![1, 2, 3, 4, 5]),
        eval: raw.eval.unwrap_or_default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Optimizer steps in one epoch: full passes over the encoded training
    /// rows in shuffled minibatches, trailing partial batch dropped.
    pub fn steps_per_epoch(&self) -> usize {
        self.environment.train_rows() / self.optimizer.batch
    }

    /// Full per-task step budget (split across stages when compute-matched).
    pub fn steps_per_task(&self) -> usize {
        self.schedule.epochs_per_task * self.steps_per_epoch()
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() {
            return Err(CliError::config("run_id", "must not be empty"));
        }
        if self
            .run_id
            .contains([',', '\n', '\r'])
        {
            return Err(CliError::config(
                "run_id",
                "must not contain commas or newlines (it is a CSV field)",
            ));
        }
        self.environment.validate()?;

        if self.model.hidden.is_empty() {
            return Err(CliError::config(
                "model.hidden",
                "need at least one hidden layer",
            ));
        }
        if let Some(w) = self.model.hidden.iter().find(|&&w| w == 0) {
            return Err(CliError::config(
                "model.hidden",
                format!("layer width must be positive, got {w}"),
            ));
        }

        let sch = &self.schedule;
        if sch.tasks == 0 {
            return Err(CliError::config("schedule.tasks", "need at least one task"));
        }
        if sch.epochs_per_task == 0 {
            return Err(CliError::config(
                "schedule.epochs_per_task",
                "must be at least 1",
            ));
        }
        let s = sch.step_size;
        if !(s.is_finite() && s > 0.0 && s <= 1.0) {
            return Err(CliError::config(
                "schedule.step_size",
                format!("must lie in (0, 1], got {s}"),
            ));
        }
        if ((1.0 / s) - (1.0 / s).round()).abs() > 1e-9 {
            return Err(CliError::config(
                "schedule.step_size",
                format!("1/{s} must be an integer number of stages"),
            ));
        }
        if sch.transition == TransitionKind::Abrupt && s != 1.0 {
            return Err(CliError::config(
                "schedule.step_size",
                format!("must be 1.0 under abrupt transitions, got {s}"),
            ));
        }
        match (sch.transition, &self.environment) {
            (TransitionKind::OutputInterp, EnvironmentCfg::RandomLabel { .. }) => {}
            (TransitionKind::OutputInterp, env) => {
                return Err(CliError::config(
                    "schedule.transition",
                    format!(
                        "output_interp requires the random_label environment \
                         (tasks must share inputs), got {}",
                        env.kind_name()
                    ),
                ));
            }
            (TransitionKind::InputInterp, EnvironmentCfg::PixelPermute { .. }) => {}
            (TransitionKind::InputInterp, env) => {
                return Err(CliError::config(
                    "schedule.transition",
                    format!(
                        "input_interp requires the pixel_permute environment \
                         (tasks must share labels and align sample-for-sample), got {}",
                        env.kind_name()
                    ),
                ));
            }
            _ => {}
        }

        let opt = &self.optimizer;
        if !(opt.lr.is_finite() && opt.lr > 0.0) {
            return Err(CliError::config(
                "optimizer.lr",
                format!("must be finite and positive, got {}", opt.lr),
            ));
        }
        if opt.batch == 0 {
            return Err(CliError::config("optimizer.batch", "must be at least 1"));
        }
        let rows = self.environment.train_rows();
        if opt.batch > rows {
            return Err(CliError::config(
                "optimizer.batch",
                format!("exceeds the {rows} encoded training rows per stage"),
            ));
        }
        for (key, b) in [("optimizer.beta1", opt.beta1), ("optimizer.beta2", opt.beta2)] {
            if !(b.is_finite() && (0.0..1.0).contains(&b)) {
                return Err(CliError::config(key, format!("must lie in [0, 1), got {b}")));
            }
        }

        self.mitigation
            .validate()
            .map_err(|e| CliError::config("mitigation", e.to_string()))?;

        if self.seeds.is_empty() {
            return Err(CliError::config("seeds", "need at least one seed"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &s in &self.seeds {
            if !seen.insert(s) {
                return Err(CliError::config("seeds", format!("duplicate seed {s}")));
            }
        }

        if self.eval.subsample == 0 {
            return Err(CliError::config("eval.subsample", "must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_label_memorization_defaults() {
        let cfg = parse_config("[environment]\nkind = \"random_label\"\n", "demo").unwrap();
        assert_eq!(cfg.run_id, "demo");
        assert_eq!(cfg.optimizer.lr, 1e-3);
        assert_eq!(cfg.optimizer.batch, 512);
        assert_eq!(cfg.optimizer.beta1, 0.9);
        assert_eq!(cfg.optimizer.beta2, 0.999);
        assert_eq!(cfg.model.hidden, vec![256, 256, 256]);
        assert!(cfg.model.layer_norm);
        assert_eq!(cfg.schedule.tasks, 50);
        assert_eq!(cfg.schedule.epochs_per_task, 60);
        assert_eq!(cfg.schedule.transition, TransitionKind::Abrupt);
        assert_eq!(cfg.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(cfg.eval.subsample, 256);
        assert!(matches!(cfg.mitigation, Mitigation::None));
        // 1280 rows / 512 batch = 2 steps per epoch, 60 epochs.
        assert_eq!(cfg.steps_per_epoch(), 2);
        assert_eq!(cfg.steps_per_task(), 120);
    }

    #[test]
    fn per_environment_optimizer_defaults() {
        let cases = [
            ("random_label", 1e-3, 512),
            ("pixel_permute", 1e-4, 512),
            ("seq2seq", 1e-4, 64),
            ("bigram_cipher", 1e-3, 64),
        ];
        for (kind, lr, batch) in cases {
            let doc = format!("[environment]\nkind = \"{kind}\"\n");
            let cfg = parse_config(&doc, "x").unwrap();
            assert_eq!(cfg.optimizer.lr, lr, "{kind}");
            assert_eq!(cfg.optimizer.batch, batch, "{kind}");
        }
    }

    #[test]
    fn zero_step_size_is_rejected_naming_the_key() {
        let doc = "[environment]\nkind = \"random_label\"\n\
                   [schedule]\nstep_size = 0.0\n";
        let err = parse_config(doc, "x").unwrap_err().to_string();
        assert!(err.contains("schedule.step_size"), "{err}");
    }

    #[test]
    fn negative_epochs_are_rejected() {
        let doc = "[environment]\nkind = \"random_label\"\n\
                   [schedule]\nepochs_per_task = -3\n";
        let err = parse_config(doc, "x").unwrap_err().to_string();
        assert!(err.contains("epochs_per_task"), "{err}");
    }

    #[test]
    fn zero_epochs_are_rejected() {
        let doc = "[environment]\nkind = \"random_label\"\n\
                   [schedule]\nepochs_per_task = 0\n";
        let err = parse_config(doc, "x").unwrap_err().to_string();
        assert!(err.contains("schedule.epochs_per_task"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = "[environment]\nkind = \"random_label\"\nwibble = 3\n";
        assert!(parse_config(doc, "x").is_err());
        let doc = "typo_top_level = 1\n[environment]\nkind = \"random_label\"\n";
        assert!(parse_config(doc, "x").is_err());
    }

    #[test]
    fn fractional_step_size_must_have_integral_reciprocal() {
        let doc = "[environment]\nkind = \"random_label\"\n\
                   [schedule]\ntransition = \"output_interp\"\nstep_size = 0.3\n";
        let err = parse_config(doc, "x").unwrap_err().to_string();
        assert!(err.contains("schedule.step_size"), "{err}");
    }

    #[test]
    fn abrupt_requires_unit_step_size() {
        let doc = "[environment]\nkind = \"random_label\"\n\
                   [schedule]\ntransition = \"abrupt\"\nstep_size = 0.5\n";
        let err = parse_config(doc, "x").unwrap_err().to_string();
        assert!(err.contains("schedule.step_size"), "{err}");
    }

    #[test]
    fn transition_environment_compatibility() {
        // output_interp needs shared inputs: random_label only.
        let doc = "[environment]\nkind = \"pixel_permute\"\n\
                   [schedule]\ntransition = \"output_interp\"\nstep_size = 0.5\n";
        let err = parse_config(doc, "x").unwrap_err().to_string();
        assert!(err.contains("schedule.transition"), "{err}");
        // input_interp needs aligned inputs with fixed labels: pixel_permute.
        let doc = "[environment]\nkind = \"random_label\"\n\
                   [schedule]\ntransition = \"input_interp\"\nstep_size = 0.5\n";
        let err = parse_config(doc, "x").unwrap_err().to_string();
        assert!(err.contains("schedule.transition"), "{err}");
        // task_sample works everywhere.
        for kind in ["random_label", "pixel_permute", "seq2seq", "bigram_cipher"] {
            let doc = format!(
                "[environment]\nkind = \"{kind}\"\n\
                 [schedule]\ntransition = \"task_sample\"\nstep_size = 0.5\n"
            );
            parse_config(&doc, "x").unwrap();
        }
    }

    #[test]
    fn batch_larger_than_training_rows_is_rejected() {
        let doc = "[environment]\nkind = \"random_label\"\nsamples = 100\n\
                   [optimizer]\nbatch = 128\n";
        let err = parse_config(doc, "x").unwrap_err().to_string();
        assert!(err.contains("optimizer.batch"), "{err}");
    }

    #[test]
    fn duplicate_seeds_are_rejected() {
        let doc = "seeds = [1, 2, 1]\n[environment]\nkind = \"random_label\"\n";
        let err = parse_config(doc, "x").unwrap_err().to_string();
        assert!(err.contains("seeds"), "{err}");
    }

    #[test]
    fn mitigation_table_parses_and_validates() {
        let doc = "[environment]\nkind = \"random_label\"\n\
                   [mitigation]\nkind = \"shrink_perturb\"\ngamma = 0.8\n\
                   noise_scale = 0.01\nperiod = 100\n";
        let cfg = parse_config(doc, "x").unwrap();
        assert!(matches!(cfg.mitigation, Mitigation::ShrinkPerturb { .. }));
        let doc = "[environment]\nkind = \"random_label\"\n\
                   [mitigation]\nkind = \"shrink_perturb\"\ngamma = 1.5\n\
                   noise_scale = 0.01\nperiod = 100\n";
        let err = parse_config(doc, "x").unwrap_err().to_string();
        assert!(err.contains("mitigation"), "{err}");
    }

    #[test]
    fn encoded_shapes_for_sequence_streams() {
        let doc = "[environment]\nkind = \"bigram_cipher\"\nvocab = 8\nseq_len = 10\n\
                   train_samples = 1280\ntest_samples = 512\n";
        let cfg = parse_config(doc, "x").unwrap();
        assert_eq!(cfg.environment.encoded_input_dim(), 17);
        assert_eq!(cfg.environment.output_classes(), 8);
        assert_eq!(cfg.environment.train_rows(), 12800);

        let doc = "[environment]\nkind = \"seq2seq\"\nvocab = 8\ninput_len = 10\n\
                   output_len = 5\nsamples = 128\n";
        let cfg = parse_config(doc, "x").unwrap();
        assert_eq!(cfg.environment.encoded_input_dim(), 85);
        assert_eq!(cfg.environment.train_rows(), 640);
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let doc = "run_id = \"rt\"\nseeds = [7]\n\
                   [environment]\nkind = \"pixel_permute\"\nnoise = 0.5\n\
                   [schedule]\ntransition = \"input_interp\"\nstep_size = 0.1\n\
                   [mitigation]\nkind = \"weight_decay\"\nlambda = 1e-4\n";
        let cfg = parse_config(doc, "x").unwrap();
        let echoed = toml::to_string(&cfg).unwrap();
        let back = parse_config(&echoed, "x").unwrap();
        assert_eq!(cfg, back);
    }
}
