//! Gradual transitions between consecutive tasks.
//!
//! A run over `T` tasks is expanded into a stream of *stages*.  With step
//! size `s` (so `1/s` stages per transition), stage `k` of a transition
//! sits at interpolation position `alpha = k * s`, computed fresh from `k`
//! for every stage so no floating-point drift accumulates.  Three
//! mechanisms realize a position `alpha` between task `t` and task `t+1`:
//!
//! * **objective blending** — target distributions move through the
//!   uniform distribution: for `alpha <= 1/2` the current task's targets
//!   are mixed with uniform, for `alpha >= 1/2` the next task's targets
//!   emerge from uniform;
//! * **input blending** — inputs are the pointwise convex combination
//!   `(1-alpha) x_t + alpha x_{t+1}`;
//! * **example mixing** — the training set holds `M - floor(alpha*M)`
//!   examples of the current task and `floor(alpha*M)` of the next, drawn
//!   without replacement and shuffled.
//!
//! Stage streams can keep per-stage training effort fixed, or split one
//! task's worth of effort across the stages of a transition so every run
//! consumes the same total compute regardless of `s`.

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use crate::rng::RngStream;

// ─── Stage streams ───────────────────────────────────────────────────────

/// How much training happens per stage when transitions are stretched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    /// Every stage trains for the full per-task step budget.
    FixedPerStage,
    /// One task's step budget is split evenly (integer remainder to the
    /// earliest stages) across the `1/s` stages of each transition.
    ComputeMatched,
}

/// One entry of the expanded stream: train at interpolation position
/// `alpha` between `pair.0` and `pair.1` for `steps` optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    /// Index in the expanded stream.
    pub index: usize,
    /// The two tasks being bridged; equal at pure-task stages with the
    /// exception of the final stage, which is `(T-1, T-1)` at alpha 1.
    pub pair: (usize, usize),
    /// Interpolation position in `[0, 1]`: 0 is pure `pair.0`, 1 is pure
    /// `pair.1`.
    pub alpha: f64,
    /// Optimizer steps to run at this stage.
    pub steps: usize,
}

/// Number of stages per transition for step size `s`, validating that
/// `1/s` is an integer within 1e-9.
pub fn stages_per_transition(s: f64) -> Result<usize> {
    if !(s.is_finite() && s > 0.0 && s <= 1.0) {
        return Err(CoreError::InvalidArgument(format!(
            "transition step size must be in (0, 1], got {s}"
        )));
    }
    let n = (1.0 / s).round();
    if ((1.0 / s) - n).abs() > 1e-9 {
        return Err(CoreError::InvalidArgument(format!(
            "1/{s} = {} is not an integer",
            1.0 / s
        )));
    }
    Ok(n as usize)
}

/// Expand `n_tasks` into a stage stream.  The first task trains as a pure
/// stage with the full per-task budget; each subsequent task is reached
/// through `1/s` stages at positions `k*s` for `k = 1..=1/s` (the last of
/// which is the pure next task).  With [`ScheduleMode::ComputeMatched`],
/// those `1/s` stages share one `steps_per_task` budget; the pure first
/// stage always gets the full budget.
pub fn build_stage_stream(
    n_tasks: usize,
    s: f64,
    steps_per_task: usize,
    mode: ScheduleMode,
) -> Result<Vec<Stage>> {
    if n_tasks == 0 {
        return Err(CoreError::InvalidArgument("need at least one task".into()));
    }
    let per = stages_per_transition(s)?;
    let mut stages = Vec::with_capacity(1 + (n_tasks - 1) * per);
    let mut index = 0usize;
    stages.push(Stage {
        index,
        pair: (0, 0),
        alpha: 1.0,
        steps: steps_per_task,
    });
    index += 1;
    for t in 0..n_tasks - 1 {
        for k in 1..=per {
            // Fresh from integers every stage: no accumulated drift.
            let alpha = k as f64 / per as f64;
            let steps = match mode {
                ScheduleMode::FixedPerStage => steps_per_task,
                ScheduleMode::ComputeMatched => {
                    let base = steps_per_task / per;
                    let extra = steps_per_task % per;
                    // Earliest stages of the transition absorb the remainder.
                    base + usize::from(k <= extra)
                }
            };
            stages.push(Stage {
                index,
                pair: (t, t + 1),
                alpha,
                steps,
            });
            index += 1;
        }
    }
    Ok(stages)
}

// ─── Objective blending ──────────────────────────────────────────────────

/// Target distributions at position `alpha` between target matrices `y_t`
/// and `y_next` over `k` classes: for `alpha <= 1/2` the mix is
/// `(1-2*alpha) y_t + 2*alpha u`, for `alpha >= 1/2` it is
/// `(2*alpha-1) y_next + (2-2*alpha) u`, with `u` the uniform distribution
/// `1/k`.  At `alpha` 0 and 1 the inputs pass through bitwise.
pub fn output_interpolate(y_t: &Matrix, y_next: &Matrix, alpha: f64) -> Result<Matrix> {
    if y_t.rows() != y_next.rows() || y_t.cols() != y_next.cols() {
        return Err(CoreError::DimMismatch {
            context: "objective blending",
            left_rows: y_t.rows(),
            left_cols: y_t.cols(),
            right_rows: y_next.rows(),
            right_cols: y_next.cols(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::InvalidArgument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return Ok(y_t.clone());
    }
    if alpha == 1.0 {
        return Ok(y_next.clone());
    }
    let k = y_t.cols();
    let u = 1.0 / k as f64;
    let mut out = Matrix::zeros(y_t.rows(), k);
    if alpha <= 0.5 {
        let a = 1.0 - 2.0 * alpha;
        let b = 2.0 * alpha * u;
        for (o, y) in out.data_mut().iter_mut().zip(y_t.data()) {
            *o = a.mul_add(*y, b);
        }
    } else {
        let a = 2.0 * alpha - 1.0;
        let b = (2.0 - 2.0 * alpha) * u;
        for (o, y) in out.data_mut().iter_mut().zip(y_next.data()) {
            *o = a.mul_add(*y, b);
        }
    }
    Ok(out)
}

// ─── Input blending ──────────────────────────────────────────────────────

/// Pointwise convex combination of the two tasks' inputs:
/// `(1-alpha) x_t + alpha x_next`.  Bitwise passthrough at the endpoints.
pub fn input_interpolate(x_t: &Matrix, x_next: &Matrix, alpha: f64) -> Result<Matrix> {
    if x_t.rows() != x_next.rows() || x_t.cols() != x_next.cols() {
        return Err(CoreError::DimMismatch {
            context: "input blending",
            left_rows: x_t.rows(),
            left_cols: x_t.cols(),
            right_rows: x_next.rows(),
            right_cols: x_next.cols(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::InvalidArgument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return Ok(x_t.clone());
    }
    if alpha == 1.0 {
        return Ok(x_next.clone());
    }
    let a = 1.0 - alpha;
    let mut out = Matrix::zeros(x_t.rows(), x_t.cols());
    for ((o, xa), xb) in out
        .data_mut()
        .iter_mut()
        .zip(x_t.data())
        .zip(x_next.data())
    {
        *o = a.mul_add(*xa, alpha * *xb);
    }
    Ok(out)
}

// ─── Example mixing ──────────────────────────────────────────────────────

/// Floor that first snaps values within `1e-9 * max(1, |x|)` of an integer
/// to that integer, so products like `0.8 * 1280` that land a hair above
/// or below their exact value do not floor to the wrong side.
fn fp_floor(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.floor()
    }
}

/// Index plan for a mixed training set at position `alpha`: which examples
/// of the current task and which of the next to use.  With `m` examples
/// per task, the next task contributes `floor(alpha * m)` examples and the
/// current task fills the remainder (`m` total); both sides are drawn
/// without replacement, concatenated, and shuffled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSamplePlan {
    /// Indices into the current task's examples.
    pub from_current: Vec<usize>,
    /// Indices into the next task's examples.
    pub from_next: Vec<usize>,
    /// Interleaving order over the concatenation `current ++ next`
    /// (values `< from_current.len()` refer to the current block).
    pub order: Vec<usize>,
}

/// Build the plan.  Counts derive from a single floor — the current-task
/// count is `m - floor(alpha*m)`, never an independently rounded ceiling —
/// so the two halves always sum to `m` even when `alpha*m` lands on the
/// wrong side of an integer in floating point.
pub fn task_sample_plan(m: usize, alpha: f64, rng: &mut RngStream) -> Result<TaskSamplePlan> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::InvalidArgument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if m == 0 {
        return Err(CoreError::InvalidArgument("empty task".into()));
    }
    let n_next = fp_floor(alpha * m as f64) as usize;
    let n_cur = m - n_next;
    let from_current = rng.sample_indices(m, n_cur);
    let from_next = rng.sample_indices(m, n_next);
    let order = rng.permutation(m);
    Ok(TaskSamplePlan {
        from_current,
        from_next,
        order,
    })
}

impl TaskSamplePlan {
    pub fn total(&self) -> usize {
        self.from_current.len() + self.from_next.len()
    }

    /// Materialize mixed inputs by gathering rows from the two tasks in
    /// the plan's shuffled order.
    pub fn gather_inputs(&self, x_cur: &Matrix, x_next: &Matrix) -> Result<Matrix> {
        if x_cur.cols() != x_next.cols() {
            return Err(CoreError::DimMismatch {
                context: "example mixing inputs",
                left_rows: x_cur.rows(),
                left_cols: x_cur.cols(),
                right_rows: x_next.rows(),
                right_cols: x_next.cols(),
            });
        }
        let ncur = self.from_current.len();
        let mut out = Matrix::zeros(self.total(), x_cur.cols());
        for (r, &slot) in self.order.iter().enumerate() {
            let src = if slot < ncur {
                x_cur.row(self.from_current[slot])
            } else {
                x_next.row(self.from_next[slot - ncur])
            };
            out.row_mut(r).copy_from_slice(src);
        }
        Ok(out)
    }

    /// Materialize mixed hard labels in the same order as
    /// [`TaskSamplePlan::gather_inputs`].
    pub fn gather_labels(&self, y_cur: &[usize], y_next: &[usize]) -> Vec<usize> {
        let ncur = self.from_current.len();
        self.order
            .iter()
            .map(|&slot| {
                if slot < ncur {
                    y_cur[self.from_current[slot]]
                } else {
                    y_next[self.from_next[slot - ncur]]
                }
            })
            .collect()
    }
}

// ─── Tests ───────────────────────────────────────────────────────────────
