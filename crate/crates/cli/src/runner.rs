//! The continual-learning loop: build a task stream per seed, expand it
//! into stages, train through them with optional mitigation hooks, and
//! log one metrics record per stage per split.
//!
//! Determinism: each seed draws from fixed-purpose streams of the shared
//! counter-based generator (see [`streams`]), so a `(config, seed)` pair
//! fully determines every number in the run except wall-clock times.
//! Seed workers share nothing mutable; records are merged in the order
//! seeds appear in the config, each worker's records already ordered by
//! stage, so sequential and threaded execution emit identical rows.
//!
//! Split policy: every stage logs a `train` record evaluated on that
//! stage's (possibly interpolated or mixed) training data — the full rows
//! at pure-task stages, a strided subsample at fractional stages.  The
//! pixel-permute stream also logs a `test` record at every stage (its test
//! inputs interpolate exactly like its train inputs); the cipher stream
//! logs a `test` record with a BLEU-2 score at pure-task stages.  At
//! fractional interpolation stages the blended soft targets can be
//! near-uniform, so `accuracy` there (argmax of the blend) is
//! informational; acceptance thresholds only read pure-task rows.
//!
//! The `task` column is 1-based (`task = 1` is the first task); `stage`
//! counts expanded stream entries from 0.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use plastlab_core::envs::{
    self, ImageDataset, SeqDataset, Targets,
};
use plastlab_core::linalg::Matrix;
use plastlab_core::metrics::{argmax, bleu2, dormant_fraction, MetricsRecord, SharpnessProbe};
use plastlab_core::mitigations::{defaults, Mitigation, MitigationEngine};
use plastlab_core::nn::{
    adam_step, backward_ws, forward_ws, init_mlp, loss_grad_ws, ActivityStats, AdamCfg,
    AdamState, BatchTargets, MlpConfig, MlpState, MlpWorkspace,
};
use plastlab_core::rng::RngStream;
use plastlab_core::transitions::{
    build_stage_stream, input_interpolate, output_interpolate, task_sample_plan, Stage,
    TaskSamplePlan,
};

use crate::config::{EnvironmentCfg, ExperimentConfig, TransitionKind};
use crate::{CliError, Result};

/// Fixed stream ids: every random draw in a run comes from
/// `RngStream::new(seed, id)` for one of these ids (the example-mixing
/// stream is further split per stage via `substream(stage_index)`).
pub mod streams {
    /// Task-stream generation (datasets, labels, permutations, ciphers).
    pub const ENV: u64 = 1;
    /// Network initialization.
    pub const INIT: u64 = 2;
    /// Minibatch shuffling.
    pub const SHUFFLE: u64 = 3;
    /// Mitigation noise (shrink-and-perturb, unit recycling).
    pub const MITIGATION: u64 = 4;
    /// Example-mixing plans, one substream per stage.
    pub const SAMPLE_PLAN: u64 = 5;
}

fn stream_id_map() -> BTreeMap<String, u64> {
    BTreeMap::from([
        ("env".to_string(), streams::ENV),
        ("init".to_string(), streams::INIT),
        ("shuffle".to_string(), streams::SHUFFLE),
        ("mitigation".to_string(), streams::MITIGATION),
        ("sample_plan".to_string(), streams::SAMPLE_PLAN),
    ])
}

// ─── Manifest ────────────────────────────────────────────────────────────

/// One expanded stage as echoed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEcho {
    pub index: usize,
    pub from: usize,
    pub to: usize,
    pub alpha: f64,
    pub steps: usize,
}

impl From<&Stage> for StageEcho {
    fn from(s: &Stage) -> Self {
        StageEcho {
            index: s.index,
            from: s.pair.0,
            to: s.pair.1,
            alpha: s.alpha,
            steps: s.steps,
        }
    }
}

/// Per-seed outcome; a failed seed keeps the records it produced before
/// the failure and does not stop the other seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStatus {
    pub seed: u64,
    pub ok: bool,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub failed_stage: Option<usize>,
    pub wall_ms: u64,
}

/// Everything needed to reproduce a run: the resolved config, the code
/// version, the per-purpose stream ids, and the expanded stage stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub steps_per_epoch: usize,
    pub steps_per_task: usize,
    pub total_steps_per_seed: usize,
    pub stream_ids: BTreeMap<String, u64>,
    pub seeds: Vec<SeedStatus>,
    pub stage_stream: Vec<StageEcho>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

/// A completed run: manifest plus the merged metrics stream, ordered by
/// (seed position in the config, stage index).
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub records: Vec<MetricsRecord>,
}

impl RunOutput {
    pub fn all_seeds_ok(&self) -> bool {
        self.manifest.seeds.iter().all(|s| s.ok)
    }
}

fn now_unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

// ─── Entry point ─────────────────────────────────────────────────────────

/// Run every seed of the experiment.  `sequential` forces one seed at a
/// time; otherwise one worker thread runs per seed.  Both orders produce
/// the same records because seeds share nothing and are merged in config
/// order.
pub fn run_experiment(cfg: &ExperimentConfig, sequential: bool) -> Result<RunOutput> {
    cfg.validate()?;
    let stages = build_stage_stream(
        cfg.schedule.tasks,
        cfg.schedule.step_size,
        cfg.steps_per_task(),
        cfg.schedule.mode(),
    )?;
    let started_unix_ms = now_unix_ms();

    let mut outcomes: Vec<SeedOutcome> = Vec::with_capacity(cfg.seeds.len());
    if sequential || cfg.seeds.len() == 1 {
        for &seed in &cfg.seeds {
            outcomes.push(run_seed(cfg, &stages, seed));
        }
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = cfg
                .seeds
                .iter()
                .map(|&seed| {
                    let stages = &stages;
                    scope.spawn(move || run_seed(cfg, stages, seed))
                })
                .collect();
            for (&seed, handle) in cfg.seeds.iter().zip(handles) {
                outcomes.push(handle.join().unwrap_or_else(|_| SeedOutcome {
                    seed,
                    records: Vec::new(),
                    error: Some(("worker panicked".to_string(), None)),
                    wall_ms: 0,
                }));
            }
        });
    }

    let mut records = Vec::new();
    let mut statuses = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        let (error, failed_stage) = match &outcome.error {
            Some((msg, stage)) => (Some(msg.clone()), *stage),
            None => (None, None),
        };
        statuses.push(SeedStatus {
            seed: outcome.seed,
            ok: outcome.error.is_none(),
            error,
            failed_stage,
            wall_ms: outcome.wall_ms,
        });
        records.extend(outcome.records);
    }

    let manifest = RunManifest {
        run_id: cfg.run_id.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        steps_per_epoch: cfg.steps_per_epoch(),
        steps_per_task: cfg.steps_per_task(),
        total_steps_per_seed: stages.iter().map(|s| s.steps).sum(),
        stream_ids: stream_id_map(),
        seeds: statuses,
        stage_stream: stages.iter().map(StageEcho::from).collect(),
        started_unix_ms,
        finished_unix_ms: now_unix_ms(),
    };
    Ok(RunOutput { manifest, records })
}

struct SeedOutcome {
    seed: u64,
    records: Vec<MetricsRecord>,
    /// `(message, failing stage)` when the seed diverged or errored.
    error: Option<(String, Option<usize>)>,
    wall_ms: u64,
}

fn run_seed(cfg: &ExperimentConfig, stages: &[Stage], seed: u64) -> SeedOutcome {
    let t0 = Instant::now();
    let mut records = Vec::new();
    let error = match run_seed_inner(cfg, stages, seed, &mut records) {
        Ok(()) => None,
        Err((stage, e)) => Some((e.to_string(), stage)),
    };
    SeedOutcome {
        seed,
        records,
        error,
        wall_ms: t0.elapsed().as_millis() as u64,
    }
}

// ─── Per-seed environment data ───────────────────────────────────────────

enum EnvData {
    RandomLabel {
        /// Shared image pool, one row per sample.
        x: Matrix,
        /// Per-task uniformly re-drawn labels.
        labels: Vec<Vec<usize>>,
        classes: usize,
    },
    PixelPermute {
        base_train: Matrix,
        train_y: Vec<usize>,
        base_test: Matrix,
        test_y: Vec<usize>,
        /// Per-task coordinate permutation (applied to train and test).
        perms: Vec<Vec<usize>>,
    },
    Seq2seq {
        tasks: Vec<SeqDataset>,
        input_len: usize,
        output_len: usize,
    },
    Bigram {
        train: Vec<SeqDataset>,
        test: Vec<SeqDataset>,
    },
}

fn build_env(env: &EnvironmentCfg, tasks: usize, rng: &mut RngStream) -> Result<EnvData> {
    Ok(match *env {
        EnvironmentCfg::RandomLabel {
            input_dim,
            classes,
            samples,
            noise,
        } => {
            let means = envs::gen_class_means(classes, input_dim, rng);
            let pool = envs::gen_synthetic_images(&means, samples, noise, rng);
            let labels = (0..tasks)
                .map(|_| envs::random_label_task(samples, classes, rng))
                .collect();
            EnvData::RandomLabel {
                x: pool.x,
                labels,
                classes,
            }
        }
        EnvironmentCfg::PixelPermute {
            input_dim,
            classes,
            train_samples,
            test_samples,
            noise,
        } => {
            let (train, test) =
                envs::gen_image_pair(classes, input_dim, train_samples, test_samples, noise, rng);
            let perms = (0..tasks)
                .map(|_| envs::pixel_permutation(input_dim, rng))
                .collect();
            EnvData::PixelPermute {
                train_y: hard_labels(&train)?,
                base_train: train.x,
                test_y: hard_labels(&test)?,
                base_test: test.x,
                perms,
            }
        }
        EnvironmentCfg::Seq2seq {
            vocab,
            input_len,
            output_len,
            samples,
        } => {
            let tasks = (0..tasks)
                .map(|_| envs::random_seq2seq_task(vocab, input_len, output_len, samples, rng))
                .collect();
            EnvData::Seq2seq {
                tasks,
                input_len,
                output_len,
            }
        }
        EnvironmentCfg::BigramCipher {
            vocab,
            seq_len,
            train_samples,
            test_samples,
        } => {
            let mut train = Vec::with_capacity(tasks);
            let mut test = Vec::with_capacity(tasks);
            for _ in 0..tasks {
                let (tr, te, _cipher) =
                    envs::bigram_cipher_task(vocab, seq_len, train_samples, test_samples, rng)?;
                train.push(tr);
                test.push(te);
            }
            EnvData::Bigram { train, test }
        }
    })
}

fn hard_labels(ds: &ImageDataset) -> Result<Vec<usize>> {
    match &ds.targets {
        Targets::Hard(l) => Ok(l.clone()),
        Targets::Soft(_) => Err(CliError::Invalid(
            "generated image datasets carry hard labels".into(),
        )),
    }
}

// ─── Stage data (train and test views) ───────────────────────────────────

/// Borrow-or-own matrix, so pure stages avoid copying the shared pools.
enum MatRef<'a> {
    Borrowed(&'a Matrix),
    Owned(Matrix),
}

impl MatRef<'_> {
    fn get(&self) -> &Matrix {
        match self {
            MatRef::Borrowed(m) => m,
            MatRef::Owned(m) => m,
        }
    }
}

enum TgtRef<'a> {
    Hard(&'a [usize]),
    HardOwned(Vec<usize>),
    Soft(Matrix),
}

impl TgtRef<'_> {
    fn view(&self) -> TgtView<'_> {
        match self {
            TgtRef::Hard(l) => TgtView::Hard(l),
            TgtRef::HardOwned(l) => TgtView::Hard(l),
            TgtRef::Soft(m) => TgtView::Soft(m),
        }
    }
}

#[derive(Clone, Copy)]
enum TgtView<'a> {
    Hard(&'a [usize]),
    Soft(&'a Matrix),
}

struct StageData<'a> {
    x: MatRef<'a>,
    targets: TgtRef<'a>,
}

fn soft_labels(labels: &[usize], classes: usize) -> Result<Matrix> {
    Ok(Targets::Hard(labels.to_vec()).to_soft(classes)?)
}

fn mix_plan(m: usize, alpha: f64, plan_rng: &RngStream, stage_index: usize) -> Result<TaskSamplePlan> {
    let mut rng = plan_rng.substream(stage_index as u64);
    Ok(task_sample_plan(m, alpha, &mut rng)?)
}

fn gather_seq(cur: &SeqDataset, next: &SeqDataset, plan: &TaskSamplePlan) -> SeqDataset {
    let ncur = plan.from_current.len();
    let mut inputs = Vec::with_capacity(plan.order.len());
    let mut outputs = Vec::with_capacity(plan.order.len());
    for &slot in &plan.order {
        let (src, i) = if slot < ncur {
            (cur, plan.from_current[slot])
        } else {
            (next, plan.from_next[slot - ncur])
        };
        inputs.push(src.inputs[i].clone());
        outputs.push(src.outputs[i].clone());
    }
    SeqDataset {
        inputs,
        outputs,
        vocab: cur.vocab,
    }
}

fn pure_train_data<'a>(env: &'a EnvData, task: usize) -> Result<StageData<'a>> {
    Ok(match env {
        EnvData::RandomLabel { x, labels, .. } => StageData {
            x: MatRef::Borrowed(x),
            targets: TgtRef::Hard(&labels[task]),
        },
        EnvData::PixelPermute {
            base_train,
            train_y,
            perms,
            ..
        } => StageData {
            x: MatRef::Owned(envs::apply_pixel_permutation(base_train, &perms[task])?),
            targets: TgtRef::Hard(train_y),
        },
        EnvData::Seq2seq {
            tasks,
            input_len,
            output_len,
        } => {
            let (x, labels) = envs::encode_seq2seq(&tasks[task], *input_len, *output_len)?;
            StageData {
                x: MatRef::Owned(x),
                targets: TgtRef::HardOwned(labels),
            }
        }
        EnvData::Bigram { train, .. } => {
            let (x, labels) = envs::encode_cipher_windows(&train[task])?;
            StageData {
                x: MatRef::Owned(x),
                targets: TgtRef::HardOwned(labels),
            }
        }
    })
}

/// Training data for one stage.  Pure endpoints take the fast path; all
/// three transition constructions pass through bitwise at alpha 0 and 1,
/// so this is an optimization with identical results.
fn stage_train_data<'a>(
    transition: TransitionKind,
    env: &'a EnvData,
    stage: &Stage,
    plan_rng: &RngStream,
) -> Result<StageData<'a>> {
    let (t, u) = stage.pair;
    let a = stage.alpha;
    if a == 1.0 {
        return pure_train_data(env, u);
    }
    if a == 0.0 {
        return pure_train_data(env, t);
    }
    match (transition, env) {
        (TransitionKind::OutputInterp, EnvData::RandomLabel { x, labels, classes }) => {
            let y_t = soft_labels(&labels[t], *classes)?;
            let y_u = soft_labels(&labels[u], *classes)?;
            Ok(StageData {
                x: MatRef::Borrowed(x),
                targets: TgtRef::Soft(output_interpolate(&y_t, &y_u, a)?),
            })
        }
        (
            TransitionKind::InputInterp,
            EnvData::PixelPermute {
                base_train,
                train_y,
                perms,
                ..
            },
        ) => {
            let x_t = envs::apply_pixel_permutation(base_train, &perms[t])?;
            let x_u = envs::apply_pixel_permutation(base_train, &perms[u])?;
            Ok(StageData {
                x: MatRef::Owned(input_interpolate(&x_t, &x_u, a)?),
                targets: TgtRef::Hard(train_y),
            })
        }
        (TransitionKind::TaskSample, EnvData::RandomLabel { x, labels, .. }) => {
            let plan = mix_plan(x.rows(), a, plan_rng, stage.index)?;
            Ok(StageData {
                targets: TgtRef::HardOwned(plan.gather_labels(&labels[t], &labels[u])),
                x: MatRef::Owned(plan.gather_inputs(x, x)?),
            })
        }
        (
            TransitionKind::TaskSample,
            EnvData::PixelPermute {
                base_train,
                train_y,
                perms,
                ..
            },
        ) => {
            let x_t = envs::apply_pixel_permutation(base_train, &perms[t])?;
            let x_u = envs::apply_pixel_permutation(base_train, &perms[u])?;
            let plan = mix_plan(base_train.rows(), a, plan_rng, stage.index)?;
            Ok(StageData {
                x: MatRef::Owned(plan.gather_inputs(&x_t, &x_u)?),
                targets: TgtRef::HardOwned(plan.gather_labels(train_y, train_y)),
            })
        }
        (
            TransitionKind::TaskSample,
            EnvData::Seq2seq {
                tasks,
                input_len,
                output_len,
            },
        ) => {
            let plan = mix_plan(tasks[t].len(), a, plan_rng, stage.index)?;
            let mixed = gather_seq(&tasks[t], &tasks[u], &plan);
            let (x, labels) = envs::encode_seq2seq(&mixed, *input_len, *output_len)?;
            Ok(StageData {
                x: MatRef::Owned(x),
                targets: TgtRef::HardOwned(labels),
            })
        }
        (TransitionKind::TaskSample, EnvData::Bigram { train, .. }) => {
            let plan = mix_plan(train[t].len(), a, plan_rng, stage.index)?;
            let mixed = gather_seq(&train[t], &train[u], &plan);
            let (x, labels) = envs::encode_cipher_windows(&mixed)?;
            Ok(StageData {
                x: MatRef::Owned(x),
                targets: TgtRef::HardOwned(labels),
            })
        }
        _ => Err(CliError::Invalid(format!(
            "transition `{}` is not defined for this environment at fractional stages",
            transition.name()
        ))),
    }
}

/// Held-out evaluation data for one stage, when the stream has one.
struct TestData<'a> {
    x: MatRef<'a>,
    labels: TgtRef<'a>,
    /// Window lengths and reference outputs for BLEU-2 scoring.
    bleu: Option<(Vec<usize>, &'a [Vec<u32>])>,
}

fn stage_test_data<'a>(env: &'a EnvData, stage: &Stage) -> Result<Option<TestData<'a>>> {
    let (t, u) = stage.pair;
    let a = stage.alpha;
    match env {
        EnvData::PixelPermute {
            base_test,
            test_y,
            perms,
            ..
        } => {
            let x = if a == 1.0 {
                envs::apply_pixel_permutation(base_test, &perms[u])?
            } else if a == 0.0 {
                envs::apply_pixel_permutation(base_test, &perms[t])?
            } else {
                let x_t = envs::apply_pixel_permutation(base_test, &perms[t])?;
                let x_u = envs::apply_pixel_permutation(base_test, &perms[u])?;
                input_interpolate(&x_t, &x_u, a)?
            };
            Ok(Some(TestData {
                x: MatRef::Owned(x),
                labels: TgtRef::Hard(test_y),
                bleu: None,
            }))
        }
        EnvData::Bigram { test, .. } if a == 1.0 => {
            let ds = &test[u];
            let (x, labels) = envs::encode_cipher_windows(ds)?;
            let lens: Vec<usize> = ds.inputs.iter().map(|s| s.len()).collect();
            Ok(Some(TestData {
                x: MatRef::Owned(x),
                labels: TgtRef::HardOwned(labels),
                bleu: Some((lens, &ds.outputs)),
            }))
        }
        _ => Ok(None),
    }
}

// ─── Evaluation ──────────────────────────────────────────────────────────

const EVAL_CHUNK: usize = 512;

struct SplitEval {
    accuracy: f64,
    loss: f64,
    dormant_frac: f64,
    bleu2: Option<f64>,
}

/// Forward the selected rows in chunks; mean loss and accuracy over the
/// selection, per-unit mean |activation| for the dormancy fraction, and
/// (when sequence context is given, which implies full-row order) BLEU-2
/// of the argmax decode against the references.
fn eval_split(
    mlp_cfg: &MlpConfig,
    model: &MlpState,
    ws: &mut MlpWorkspace,
    x: &Matrix,
    targets: TgtView<'_>,
    cap: Option<usize>,
    bleu: Option<&(Vec<usize>, &[Vec<u32>])>,
) -> Result<SplitEval> {
    let rows = x.rows();
    let take: Vec<usize> = match cap {
        Some(c) if rows > c => (0..c).map(|i| i * rows / c).collect(),
        _ => (0..rows).collect(),
    };
    debug_assert!(bleu.is_none() || take.len() == rows);

    let mut scratch_x = Matrix::zeros(take.len().min(EVAL_CHUNK), x.cols());
    let mut hard_buf: Vec<usize> = Vec::new();
    let mut soft_buf = Matrix::zeros(0, 0);
    let mut loss_sum = 0.0;
    let mut hits = 0usize;
    let mut preds: Vec<usize> = Vec::with_capacity(take.len());
    let mut abs_sums: Vec<Vec<f64>> = mlp_cfg.hidden.iter().map(|&w| vec![0.0; w]).collect();

    ws.mark_weights_dirty();
    let mut done = 0usize;
    while done < take.len() {
        let n = (take.len() - done).min(EVAL_CHUNK);
        let idx = &take[done..done + n];
        if scratch_x.rows() != n {
            scratch_x = Matrix::zeros(n, x.cols());
        }
        gather_rows(x, idx, &mut scratch_x);
        ws.ensure_batch(mlp_cfg, model, n);
        forward_ws(mlp_cfg, model, ws, &scratch_x)?;

        let batch_targets = match targets {
            TgtView::Hard(labels) => {
                hard_buf.clear();
                hard_buf.extend(idx.iter().map(|&i| labels[i]));
                BatchTargets::Hard(&hard_buf)
            }
            TgtView::Soft(m) => {
                if soft_buf.rows() != n || soft_buf.cols() != m.cols() {
                    soft_buf = Matrix::zeros(n, m.cols());
                }
                gather_rows(m, idx, &mut soft_buf);
                BatchTargets::Soft(&soft_buf)
            }
        };
        let loss = loss_grad_ws(ws, batch_targets)?;
        loss_sum += loss * n as f64;

        for (s, h) in abs_sums.iter_mut().zip(ws.hidden_activations()) {
            for r in 0..h.rows() {
                for (si, v) in s.iter_mut().zip(h.row(r)) {
                    *si += v.abs();
                }
            }
        }

        for (r, &i) in idx.iter().enumerate() {
            let p = argmax(ws.logits.row(r));
            let want = match targets {
                TgtView::Hard(labels) => labels[i],
                TgtView::Soft(m) => argmax(m.row(i)),
            };
            if p == want {
                hits += 1;
            }
            preds.push(p);
        }
        done += n;
    }

    let n_eval = take.len() as f64;
    let mean_abs: Vec<Vec<f64>> = abs_sums
        .iter()
        .map(|s| s.iter().map(|v| v / n_eval).collect())
        .collect();
    let bleu_score = match bleu {
        Some((lens, refs)) => {
            let candidates = envs::decode_window_preds(&preds, lens)?;
            Some(bleu2(&candidates, refs)?)
        }
        None => None,
    };
    Ok(SplitEval {
        accuracy: hits as f64 / n_eval,
        loss: loss_sum / n_eval,
        dormant_frac: dormant_fraction(&mean_abs, defaults::RECYCLE_TAU),
        bleu2: bleu_score,
    })
}

fn gather_rows(src: &Matrix, idx: &[usize], out: &mut Matrix) {
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(src.row(i));
    }
}

// ─── The per-seed loop ───────────────────────────────────────────────────

type StageResult<T> = std::result::Result<T, (Option<usize>, CliError)>;

fn run_seed_inner(
    cfg: &ExperimentConfig,
    stages: &[Stage],
    seed: u64,
    records: &mut Vec<MetricsRecord>,
) -> StageResult<()> {
    let fail = |stage: Option<usize>| move |e: CliError| (stage, e);

    let mut env_rng = RngStream::new(seed, streams::ENV);
    let mut init_rng = RngStream::new(seed, streams::INIT);
    let mut shuffle_rng = RngStream::new(seed, streams::SHUFFLE);
    let mut mitigation_rng = RngStream::new(seed, streams::MITIGATION);
    let plan_rng = RngStream::new(seed, streams::SAMPLE_PLAN);

    let env = build_env(&cfg.environment, cfg.schedule.tasks, &mut env_rng)
        .map_err(fail(None))?;
    let mlp_cfg = cfg.model.mlp_config(&cfg.environment);
    let mut model = init_mlp(&mlp_cfg, &mut init_rng)
        .map_err(CliError::from)
        .map_err(fail(None))?;
    let mut adam = AdamState::new(&model);
    let adam_cfg = AdamCfg {
        lr: cfg.optimizer.lr,
        beta1: cfg.optimizer.beta1,
        beta2: cfg.optimizer.beta2,
        ..AdamCfg::default()
    };
    let mut engine = MitigationEngine::new(cfg.mitigation.clone())
        .map_err(CliError::from)
        .map_err(fail(None))?;
    let param_hook_period: Option<u64> = match cfg.mitigation {
        Mitigation::ShrinkPerturb { period, .. } | Mitigation::RecycleDormant { period, .. } => {
            Some(period as u64)
        }
        _ => None,
    };
    let mut activity = ActivityStats::new(&mlp_cfg);
    let mut probe = SharpnessProbe::new();

    let batch = cfg.optimizer.batch;
    let input_dim = cfg.environment.encoded_input_dim();
    let classes = cfg.environment.output_classes();
    let mut train_ws = MlpWorkspace::new(&mlp_cfg, &model, batch);
    let mut eval_ws = MlpWorkspace::new(&mlp_cfg, &model, EVAL_CHUNK.min(batch));
    let mut bx = Matrix::zeros(batch, input_dim);
    let mut bl: Vec<usize> = vec![0; batch];
    let mut bs = Matrix::zeros(batch, classes);

    let mut global_step: u64 = 0;

    for stage in stages {
        let stage_t0 = Instant::now();
        let on = fail(Some(stage.index));
        let data = stage_train_data(cfg.schedule.transition, &env, stage, &plan_rng)
            .map_err(fail(Some(stage.index)))?;
        let x = data.x.get();
        let rows = x.rows();
        if rows < batch {
            return Err((
                Some(stage.index),
                CliError::Invalid(format!(
                    "stage {} has {rows} rows, fewer than the batch size {batch}",
                    stage.index
                )),
            ));
        }

        // Train `stage.steps` minibatches, reshuffling after each full
        // pass (a trailing partial batch is dropped).
        let mut order = shuffle_rng.permutation(rows);
        let mut cursor = 0usize;
        for _ in 0..stage.steps {
            if cursor + batch > rows {
                order = shuffle_rng.permutation(rows);
                cursor = 0;
            }
            let idx = &order[cursor..cursor + batch];
            cursor += batch;

            gather_rows(x, idx, &mut bx);
            let batch_targets = match data.targets.view() {
                TgtView::Hard(labels) => {
                    for (slot, &i) in bl.iter_mut().zip(idx) {
                        *slot = labels[i];
                    }
                    BatchTargets::Hard(&bl)
                }
                TgtView::Soft(m) => {
                    gather_rows(m, idx, &mut bs);
                    BatchTargets::Soft(&bs)
                }
            };

            forward_ws(&mlp_cfg, &model, &mut train_ws, &bx)
                .map_err(CliError::from)
                .map_err(&on)?;
            if engine.needs_activity() {
                activity.accumulate(train_ws.hidden_activations());
            }
            let loss = loss_grad_ws(&mut train_ws, batch_targets)
                .map_err(CliError::from)
                .map_err(&on)?;
            if !loss.is_finite() {
                return Err((
                    Some(stage.index),
                    CliError::Invalid(format!(
                        "training diverged: non-finite loss at step {}",
                        global_step + 1
                    )),
                ));
            }
            backward_ws(&mlp_cfg, &model, &mut train_ws, &bx)
                .map_err(CliError::from)
                .map_err(&on)?;
            engine
                .grad_hook(&model, &mut train_ws.grads)
                .map_err(CliError::from)
                .map_err(&on)?;
            adam_step(&mut model, &mut adam, &adam_cfg, &train_ws.grads)
                .map_err(CliError::from)
                .map_err(&on)?;
            train_ws.mark_weights_dirty();
            global_step += 1;
            if engine.has_param_hook() {
                engine
                    .post_step_hook(
                        &mut model,
                        &mut adam,
                        &mut activity,
                        global_step,
                        &mut mitigation_rng,
                    )
                    .map_err(CliError::from)
                    .map_err(&on)?;
                if param_hook_period.is_some_and(|p| global_step.is_multiple_of(p)) {
                    train_ws.mark_weights_dirty();
                }
            }
        }

        // Per-stage metrics: model-level values once, then one record per
        // split.
        let max_sigma = probe
            .measure(&model)
            .map_err(CliError::from)
            .map_err(&on)?;
        let weight_l2 = model.param_l2();

        let cap = if stage.alpha == 1.0 {
            None
        } else {
            Some(cfg.eval.subsample)
        };
        let train_eval = eval_split(
            &mlp_cfg,
            &model,
            &mut eval_ws,
            x,
            data.targets.view(),
            cap,
            None,
        )
        .map_err(&on)?;

        let test = stage_test_data(&env, stage).map_err(fail(Some(stage.index)))?;
        let test_eval = match &test {
            Some(td) => Some(
                eval_split(
                    &mlp_cfg,
                    &model,
                    &mut eval_ws,
                    td.x.get(),
                    td.labels.view(),
                    None,
                    td.bleu.as_ref(),
                )
                .map_err(&on)?,
            ),
            None => None,
        };

        let wall_ms = stage_t0.elapsed().as_millis() as u64;
        let base = MetricsRecord {
            run_id: cfg.run_id.clone(),
            seed,
            stage: stage.index,
            task: stage.pair.1 + 1,
            alpha: stage.alpha,
            split: "train".to_string(),
            accuracy: train_eval.accuracy,
            bleu2: train_eval.bleu2,
            loss: train_eval.loss,
            max_sigma,
            dormant_frac: train_eval.dormant_frac,
            weight_l2,
            steps: global_step,
            wall_ms,
        };
        if let Some(ev) = test_eval {
            let test_record = MetricsRecord {
                split: "test".to_string(),
                accuracy: ev.accuracy,
                bleu2: ev.bleu2,
                loss: ev.loss,
                dormant_frac: ev.dormant_frac,
                ..base.clone()
            };
            records.push(base);
            records.push(test_record);
        } else {
            records.push(base);
        }
    }
    Ok(())
}
