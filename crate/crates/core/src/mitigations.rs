//! Plasticity-preserving training interventions.
//!
//! Four baselines, applied around the plain optimizer step:
//!
//! * **weight decay** — adds `lambda * w` to every weight-matrix gradient
//!   (biases and normalization parameters are left alone);
//! * **shrink & perturb** — periodically rescales every weight matrix
//!   toward zero and adds fresh-initialization-scaled Gaussian noise;
//! * **spectral penalty** — adds the gradient of
//!   `lambda * (sigma_max - 1)^2` per weight matrix, pulling the top
//!   singular value toward 1 (computed by warm-started power iteration);
//! * **dormant-unit recycling** — periodically reinitializes hidden units
//!   whose mean absolute activation, normalized by the layer mean, falls
//!   at or below a threshold: incoming weights are redrawn at the
//!   fresh-initialization scale, the incoming bias is zeroed, outgoing
//!   weights are zeroed (so the network function is unchanged at the
//!   moment of the reset), per-unit normalization parameters return to
//!   gain 1 / shift 0, and the optimizer moments of every touched slice
//!   are cleared.
//!
//! Gradient-side hooks run between backpropagation and the optimizer
//! step; parameter-side hooks run after it, on a global step counter.

use crate::error::{CoreError, Result};
use crate::linalg::top_singular;
use crate::nn::{he_std, ActivityStats, AdamState, Grads, MlpState};
use crate::rng::RngStream;
use serde::{Deserialize, Serialize};

// ─── Configuration ───────────────────────────────────────────────────────

/// Which intervention to run, with its hyperparameters.  `period` values
/// count optimizer steps on the run's global counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mitigation {
    None,
    WeightDecay {
        lambda: f64,
    },
    ShrinkPerturb {
        gamma: f64,
        noise_scale: f64,
        period: usize,
    },
    SpectralPenalty {
        lambda: f64,
    },
    RecycleDormant {
        tau: f64,
        period: usize,
    },
}

impl Mitigation {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::InvalidArgument(msg));
        match *self {
            Mitigation::None => Ok(()),
            Mitigation::WeightDecay { lambda } => {
                if !(lambda.is_finite() && lambda >= 0.0) {
                    return bad(format!("weight-decay strength must be >= 0, got {lambda}"));
                }
                Ok(())
            }
            Mitigation::ShrinkPerturb {
                gamma,
                noise_scale,
                period,
            } => {
                if !(0.0..=1.0).contains(&gamma) {
                    return bad(format!("shrink factor must lie in [0, 1], got {gamma}"));
                }
                if !(noise_scale.is_finite() && noise_scale >= 0.0) {
                    return bad(format!("noise scale must be >= 0, got {noise_scale}"));
                }
                if period == 0 {
                    return bad("shrink-perturb period must be positive".into());
                }
                Ok(())
            }
            Mitigation::SpectralPenalty { lambda } => {
                if !(lambda.is_finite() && lambda >= 0.0) {
                    return bad(format!("spectral strength must be >= 0, got {lambda}"));
                }
                Ok(())
            }
            Mitigation::RecycleDormant { tau, period } => {
                if !(tau.is_finite() && tau >= 0.0) {
                    return bad(format!("dormancy threshold must be >= 0, got {tau}"));
                }
                if period == 0 {
                    return bad("recycling period must be positive".into());
                }
                Ok(())
            }
        }
    }
}

/// Default hyperparameters used by the presets.
pub mod defaults {
    pub const WEIGHT_DECAY_LAMBDA: f64 = 1e-4;
    pub const SHRINK_GAMMA: f64 = 0.8;
    pub const SHRINK_NOISE_SCALE: f64 = 0.01;
    pub const SPECTRAL_LAMBDA: f64 = 0.01;
    pub const RECYCLE_TAU: f64 = 0.1;
}

// ─── Gradient-side interventions ─────────────────────────────────────────

/// Add `lambda * w` to every weight-matrix gradient (the gradient of the
/// penalty `lambda/2 * ||W||^2` summed over layers).  Biases, gains, and
/// shifts are not decayed.
pub fn weight_decay_grad(grads: &mut Grads, state: &MlpState, lambda: f64) {
    for (g, l) in grads.layers.iter_mut().zip(&state.layers) {
        for (gv, wv) in g.w.data_mut().iter_mut().zip(l.w.data()) {
            *gv = lambda.mul_add(*wv, *gv);
        }
    }
}

/// Add `2 * lambda * (sigma - 1) * u v^T` to each weight-matrix gradient —
/// the gradient of `lambda * (sigma_max(W) - 1)^2`.  `warm` holds one
/// optional right-singular-vector estimate per layer and is refreshed in
/// place so successive calls converge quickly on a slowly moving network.
pub fn spectral_penalty_grad(
    grads: &mut Grads,
    state: &MlpState,
    lambda: f64,
    warm: &mut Vec<Option<Vec<f64>>>,
) -> Result<()> {
    if warm.len() != state.layers.len() {
        *warm = vec![None; state.layers.len()];
    }
    for (li, (g, l)) in grads.layers.iter_mut().zip(&state.layers).enumerate() {
        // The gradient needs the singular VECTORS, whose error scales like
        // the square root of the sigma stopping tolerance — hence a much
        // tighter tolerance than a probe that only reports sigma.
        let res = top_singular(&l.w, 200, 1e-12, warm[li].as_deref())?;
        let res = if res.converged {
            res
        } else {
            top_singular(&l.w, 1000, 1e-12, Some(&res.v))?
        };
        if !res.converged {
            return Err(CoreError::NoConverge {
                context: "spectral penalty power iteration",
                iters: 1200,
            });
        }
        let coef = 2.0 * lambda * (res.sigma - 1.0);
        let cols = l.w.cols();
        for (i, &ui) in res.u.iter().enumerate() {
            let grow = &mut g.w.data_mut()[i * cols..(i + 1) * cols];
            let cu = coef * ui;
            for (gv, &vj) in grow.iter_mut().zip(&res.v) {
                *gv = cu.mul_add(vj, *gv);
            }
        }
        warm[li] = Some(res.v);
    }
    Ok(())
}

// ─── Parameter-side interventions ────────────────────────────────────────

/// Rescale every weight matrix by `gamma` and add Gaussian noise scaled by
/// `noise_scale` times the layer's fresh-initialization standard deviation.
/// Biases and normalization parameters are left alone.
pub fn shrink_perturb(state: &mut MlpState, gamma: f64, noise_scale: f64, rng: &mut RngStream) {
    for layer in &mut state.layers {
        let std = noise_scale * he_std(layer.w.cols());
        for w in layer.w.data_mut() {
            *w = gamma.mul_add(*w, std * rng.normal());
        }
    }
}

/// Outcome of one recycling pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecycleReport {
    /// Units reset per hidden layer.
    pub reset_per_layer: Vec<usize>,
}

impl RecycleReport {
    pub fn total(&self) -> usize {
        self.reset_per_layer.iter().sum()
    }
}

/// Reinitialize dormant hidden units.  `mean_abs` holds the per-unit mean
/// absolute activations per hidden layer (from [`ActivityStats`]); a unit
/// is dormant when its value divided by the layer mean is at or below
/// `tau` (a zero-activity layer counts as entirely dormant).  For each
/// dormant unit `i` of hidden layer `l`: row `i` of `W_l` is redrawn at
/// the fresh-initialization scale, `b_l[i]` becomes 0, normalization gain
/// and shift (when present) return to 1 and 0, column `i` of `W_{l+1}` is
/// zeroed, and all optimizer moments of those entries are cleared.
/// Because the outgoing column becomes zero, the network's outputs are
/// unchanged at the moment of the reset.
///
/// When units in consecutive layers are reset in the same pass, the single
/// weight connecting them is claimed by both rules; the downstream unit's
/// incoming redraw wins (layers are processed bottom-up), which keeps the
/// outputs unchanged regardless, since that unit's own outgoing column is
/// zeroed.
pub fn recycle_dormant_units(
    state: &mut MlpState,
    adam: &mut AdamState,
    mean_abs: &[Vec<f64>],
    tau: f64,
    rng: &mut RngStream,
) -> Result<RecycleReport> {
    let n_hidden = state.layers.len() - 1;
    if mean_abs.len() != n_hidden {
        return Err(CoreError::InvalidArgument(format!(
            "activity covers {} layers, network has {n_hidden} hidden layers",
            mean_abs.len()
        )));
    }
    let mut reset_per_layer = vec![0usize; n_hidden];
    for l in 0..n_hidden {
        let acts = &mean_abs[l];
        if acts.len() != state.layers[l].b.len() {
            return Err(CoreError::InvalidArgument(format!(
                "activity layer {l} has {} units, network layer has {}",
                acts.len(),
                state.layers[l].b.len()
            )));
        }
        let mean: f64 = acts.iter().sum::<f64>() / acts.len() as f64;
        for (i, &a) in acts.iter().enumerate() {
            let dormant = if mean <= 0.0 { true } else { a / mean <= tau };
            if !dormant {
                continue;
            }
            reset_per_layer[l] += 1;
            // Incoming row: fresh draw; bias 0; moments cleared.
            let fan_in = state.layers[l].w.cols();
            let std = he_std(fan_in);
            for w in state.layers[l].w.row_mut(i) {
                *w = std * rng.normal();
            }
            state.layers[l].b[i] = 0.0;
            adam.layers[l].w_m.row_mut(i).fill(0.0);
            adam.layers[l].w_v.row_mut(i).fill(0.0);
            adam.layers[l].b_m[i] = 0.0;
            adam.layers[l].b_v[i] = 0.0;
            // Per-unit normalization parameters back to identity.
            if let Some(g) = state.layers[l].gain.as_mut() {
                g[i] = 1.0;
            }
            if let Some(s) = state.layers[l].shift.as_mut() {
                s[i] = 0.0;
            }
            if let Some(gm) = adam.layers[l].gain_m.as_mut() {
                gm[i] = 0.0;
            }
            if let Some(gv) = adam.layers[l].gain_v.as_mut() {
                gv[i] = 0.0;
            }
            if let Some(sm) = adam.layers[l].shift_m.as_mut() {
                sm[i] = 0.0;
            }
            if let Some(sv) = adam.layers[l].shift_v.as_mut() {
                sv[i] = 0.0;
            }
            // Outgoing column in the next layer: zeroed with its moments.
            let next = l + 1;
            for r in 0..state.layers[next].w.rows() {
                state.layers[next].w.row_mut(r)[i] = 0.0;
                adam.layers[next].w_m.row_mut(r)[i] = 0.0;
                adam.layers[next].w_v.row_mut(r)[i] = 0.0;
            }
        }
    }
    Ok(RecycleReport { reset_per_layer })
}

// ─── Hook engine ─────────────────────────────────────────────────────────

/// Stateful wrapper that applies one configured intervention at the right
/// points of the training loop.
#[derive(Debug, Clone)]
pub struct MitigationEngine {
    pub cfg: Mitigation,
    /// Warm right-singular vectors for the spectral penalty.
    warm: Vec<Option<Vec<f64>>>,
}

impl MitigationEngine {
    pub fn new(cfg: Mitigation) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            warm: Vec::new(),
        })
    }

    /// Gradient-side hook; call between backpropagation and the optimizer
    /// step.
    pub fn grad_hook(&mut self, state: &MlpState, grads: &mut Grads) -> Result<()> {
        match self.cfg {
            Mitigation::WeightDecay { lambda } => {
                weight_decay_grad(grads, state, lambda);
                Ok(())
            }
            Mitigation::SpectralPenalty { lambda } => {
                spectral_penalty_grad(grads, state, lambda, &mut self.warm)
            }
            _ => Ok(()),
        }
    }

    /// Parameter-side hook; call after the optimizer step with the global
    /// step counter (first step = 1).  Fires every `period` steps.  On a
    /// recycling fire the accumulated activity window is consumed and
    /// reset.  Returns the recycle report when one ran.
    pub fn post_step_hook(
        &mut self,
        state: &mut MlpState,
        adam: &mut AdamState,
        activity: &mut ActivityStats,
        global_step: u64,
        rng: &mut RngStream,
    ) -> Result<Option<RecycleReport>> {
        match self.cfg {
            Mitigation::ShrinkPerturb {
                gamma,
                noise_scale,
                period,
            } => {
                if global_step.is_multiple_of(period as u64) {
                    shrink_perturb(state, gamma, noise_scale, rng);
                }
                Ok(None)
            }
            Mitigation::RecycleDormant { tau, period } => {
                if global_step.is_multiple_of(period as u64) {
                    let mean_abs = activity.mean_abs();
                    let report = recycle_dormant_units(state, adam, &mean_abs, tau, rng)?;
                    activity.reset();
                    return Ok(Some(report));
                }
                Ok(None)
            }
            _ => Ok(None),
        }
    }

    /// Whether the configured intervention mutates parameters outside the
    /// optimizer (callers must then refresh cached weight transposes).
    pub fn has_param_hook(&self) -> bool {
        matches!(
            self.cfg,
            Mitigation::ShrinkPerturb { .. } | Mitigation::RecycleDormant { .. }
        )
    }

    /// Whether the loop needs to accumulate activity statistics.
    pub fn needs_activity(&self) -> bool {
        matches!(self.cfg, Mitigation::RecycleDormant { .. })
    }
}

// ─── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{singular_values, Matrix};
    use crate::nn::{forward, init_mlp, AdamState, Grads, MlpConfig, MlpState};
    use approx::assert_relative_eq;

    fn small_net(layer_norm: bool, seed: u64) -> (MlpConfig, MlpState) {
        let cfg = MlpConfig::new(4, vec![6, 5], 3, layer_norm);
        let mut rng = RngStream::new(seed, 0);
        let state = init_mlp(&cfg, &mut rng).unwrap();
        (cfg, state)
    }

    #[test]
    fn weight_decay_touches_only_weight_matrices() {
        let (_, state) = small_net(true, 1);
        let mut grads = Grads::zeros_like(&state);
        // Seed the bias grad to check it stays put.
        grads.layers[0].b[2] = 7.0;
        weight_decay_grad(&mut grads, &state, 0.5);
        for (g, l) in grads.layers.iter().zip(&state.layers) {
            for (gv, wv) in g.w.data().iter().zip(l.w.data()) {
                assert_relative_eq!(*gv, 0.5 * wv, max_relative = 1e-15);
            }
        }
        assert_eq!(grads.layers[0].b[2], 7.0);
        assert!(grads.layers[0].b.iter().take(2).all(|&v| v == 0.0));
        assert!(grads.layers[0].gain.as_ref().unwrap().iter().all(|&v| v == 0.0));
    }

    /// Finite-difference check of the spectral penalty gradient
    /// `lambda * (sigma_max - 1)^2` summed over layers.
    #[test]
    fn spectral_penalty_matches_finite_differences() {
        let (_, mut state) = small_net(false, 2);
        let lambda = 0.03;
        let penalty = |state: &MlpState| -> f64 {
            state
                .layers
                .iter()
                .map(|l| {
                    let top = singular_values(&l.w)
                        .unwrap()
                        .into_iter()
                        .fold(0.0f64, f64::max);
                    lambda * (top - 1.0) * (top - 1.0)
                })
                .sum()
        };
        let mut grads = Grads::zeros_like(&state);
        let mut warm = Vec::new();
        spectral_penalty_grad(&mut grads, &state, lambda, &mut warm).unwrap();
        let h = 1e-6;
        for li in 0..state.layers.len() {
            for idx in 0..state.layers[li].w.data().len() {
                let orig = state.layers[li].w.data()[idx];
                state.layers[li].w.data_mut()[idx] = orig + h;
                let up = penalty(&state);
                state.layers[li].w.data_mut()[idx] = orig - h;
                let dn = penalty(&state);
                state.layers[li].w.data_mut()[idx] = orig;
                let fd = (up - dn) / (2.0 * h);
                let an = grads.layers[li].w.data()[idx];
                assert!(
                    (fd - an).abs() <= 1e-4 * an.abs().max(1e-4),
                    "layer {li} w[{idx}]: fd {fd} vs analytic {an}"
                );
            }
        }
        // Warm vectors persist per layer.
        assert_eq!(warm.len(), 3);
        assert!(warm.iter().all(|w| w.is_some()));
    }

    #[test]
    fn spectral_penalty_warm_start_converges_after_update() {
        let (_, mut state) = small_net(false, 3);
        let lambda = 0.01;
        let mut warm = Vec::new();
        let mut grads = Grads::zeros_like(&state);
        spectral_penalty_grad(&mut grads, &state, lambda, &mut warm).unwrap();
        // Small parameter drift, then a warm re-run must still match the
        // from-scratch oracle.
        for l in &mut state.layers {
            for w in l.w.data_mut() {
                *w *= 1.01;
            }
        }
        let mut grads2 = Grads::zeros_like(&state);
        spectral_penalty_grad(&mut grads2, &state, lambda, &mut warm).unwrap();
        let mut cold = Vec::new();
        let mut grads3 = Grads::zeros_like(&state);
        spectral_penalty_grad(&mut grads3, &state, lambda, &mut cold).unwrap();
        for (a, b) in grads2.layers.iter().zip(&grads3.layers) {
            for (x, y) in a.w.data().iter().zip(b.w.data()) {
                assert_relative_eq!(*x, *y, max_relative = 1e-4, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn shrink_perturb_shrinks_and_adds_scaled_noise() {
        let (_, mut state) = small_net(true, 4);
        let before = state.clone();
        // Pure shrink first: noise 0.
        let mut rng = RngStream::new(9, 9);
        shrink_perturb(&mut state, 0.5, 0.0, &mut rng);
        for (l, lb) in state.layers.iter().zip(&before.layers) {
            for (w, wb) in l.w.data().iter().zip(lb.w.data()) {
                assert_relative_eq!(*w, 0.5 * wb, max_relative = 1e-15);
            }
            assert_eq!(l.b, lb.b);
            assert_eq!(l.gain, lb.gain);
        }
        // Statistical check of the noise scale on a big layer.
        let cfg = MlpConfig::new(200, vec![200], 10, false);
        let mut rng2 = RngStream::new(5, 5);
        let mut big = init_mlp(&cfg, &mut rng2).unwrap();
        let before = big.clone();
        let noise_scale = 0.05;
        shrink_perturb(&mut big, 1.0, noise_scale, &mut rng2);
        let expect_std = noise_scale * he_std(200);
        let diffs: Vec<f64> = big.layers[0]
            .w
            .data()
            .iter()
            .zip(before.layers[0].w.data())
            .map(|(a, b)| a - b)
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 5.0 * expect_std / n.sqrt(), "noise mean {mean}");
        assert_relative_eq!(var.sqrt(), expect_std, max_relative = 0.05);
    }

    /// Construct exactly-dead units in a plain (non-normalized) network
    /// and verify recycling leaves the function bitwise unchanged.
    #[test]
    fn recycling_preserves_outputs_exactly() {
        let cfg = MlpConfig::new(5, vec![8, 8], 3, false);
        let mut rng = RngStream::new(21, 0);
        let mut state = init_mlp(&cfg, &mut rng).unwrap();
        // Kill units 2 and 5 of hidden layer 0, unit 0 of hidden layer 1:
        // zero incoming weights, bias -10 => pre = -10 < 0 => output 0
        // for every input.
        for &u in &[2usize, 5] {
            state.layers[0].w.row_mut(u).fill(0.0);
            state.layers[0].b[u] = -10.0;
        }
        state.layers[1].w.row_mut(0).fill(0.0);
        state.layers[1].b[0] = -10.0;
        let mut adam = AdamState::new(&state);
        // Nonzero moments everywhere to verify clearing.
        for al in &mut adam.layers {
            al.w_m.data_mut().fill(0.5);
            al.w_v.data_mut().fill(0.25);
            al.b_m.fill(0.5);
            al.b_v.fill(0.25);
        }
        let mut xr = RngStream::new(2, 2);
        let x = Matrix::from_fn(12, 5, |_, _| xr.normal());
        let (logits_before, trace) = forward(&cfg, &state, &x, true).unwrap();
        // Activity from the real forward pass: dead units measure 0.
        let mut activity = ActivityStats::new(&cfg);
        activity.accumulate(trace.unwrap().hidden_activations());
        let mean_abs = activity.mean_abs();
        assert_eq!(mean_abs[0][2], 0.0);
        assert_eq!(mean_abs[0][5], 0.0);
        assert_eq!(mean_abs[1][0], 0.0);

        let mut rrng = RngStream::new(77, 1);
        let report =
            recycle_dormant_units(&mut state, &mut adam, &mean_abs, 0.05, &mut rrng).unwrap();
        assert_eq!(report.reset_per_layer, vec![2, 1]);
        assert_eq!(report.total(), 3);

        // The reset unit's incoming row is alive again...
        assert!(state.layers[0].w.row(2).iter().any(|&w| w != 0.0));
        assert_eq!(state.layers[0].b[2], 0.0);
        // ...its outgoing column is zero — except the entry into layer-1
        // unit 0, which was itself reset afterwards and redrew its whole
        // incoming row (the documented overlap rule)...
        for r in 1..state.layers[1].w.rows() {
            assert_eq!(state.layers[1].w.row(r)[2], 0.0);
            assert_eq!(adam.layers[1].w_m.row(r)[2], 0.0);
        }
        // The overlapping entry carries the downstream unit's fresh draw,
        // and that unit's own outgoing column in the output layer is zero.
        for r in 0..state.layers[2].w.rows() {
            assert_eq!(state.layers[2].w.row(r)[0], 0.0);
        }
        // ...incoming moments cleared...
        assert!(adam.layers[0].w_m.row(2).iter().all(|&v| v == 0.0));
        assert!(adam.layers[0].w_v.row(2).iter().all(|&v| v == 0.0));
        assert_eq!(adam.layers[0].b_m[2], 0.0);
        // ...and untouched units keep their moments.
        assert!(adam.layers[0].w_m.row(1).iter().all(|&v| v == 0.5));

        // Function unchanged: outgoing zeros silence the fresh units.
        let (logits_after, _) = forward(&cfg, &state, &x, false).unwrap();
        let max_delta = logits_before
            .data()
            .iter()
            .zip(logits_after.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert_eq!(max_delta, 0.0, "recycling must not move the outputs");
    }

    #[test]
    fn recycling_uses_relative_scores() {
        let cfg = MlpConfig::new(3, vec![4], 2, false);
        let mut rng = RngStream::new(31, 0);
        let mut state = init_mlp(&cfg, &mut rng).unwrap();
        let mut adam = AdamState::new(&state);
        // Uniformly tiny activity: every unit scores exactly 1 relative to
        // the layer mean, so nothing is dormant at tau < 1.
        let mean_abs = vec![vec![1e-9; 4]];
        let mut rrng = RngStream::new(1, 1);
        let report =
            recycle_dormant_units(&mut state, &mut adam, &mean_abs, 0.5, &mut rrng).unwrap();
        assert_eq!(report.total(), 0);
        // One unit at a tenth of the others: score well under 0.5.
        let mean_abs = vec![vec![1.0, 1.0, 1.0, 0.1]];
        let report =
            recycle_dormant_units(&mut state, &mut adam, &mean_abs, 0.5, &mut rrng).unwrap();
        assert_eq!(report.reset_per_layer, vec![1]);
        // All-zero layer counts as fully dormant.
        let mean_abs = vec![vec![0.0; 4]];
        let report =
            recycle_dormant_units(&mut state, &mut adam, &mean_abs, 0.5, &mut rrng).unwrap();
        assert_eq!(report.total(), 4);
    }

    #[test]
    fn recycling_resets_normalization_parameters() {
        let cfg = MlpConfig::new(3, vec![4], 2, true);
        let mut rng = RngStream::new(41, 0);
        let mut state = init_mlp(&cfg, &mut rng).unwrap();
        state.layers[0].gain.as_mut().unwrap()[0] = 0.9;
        state.layers[0].gain.as_mut().unwrap()[1] = 0.001;
        state.layers[0].shift.as_mut().unwrap()[1] = -3.0;
        let mut adam = AdamState::new(&state);
        adam.layers[0].gain_m.as_mut().unwrap()[1] = 0.7;
        adam.layers[0].shift_v.as_mut().unwrap()[1] = 0.7;
        let mean_abs = vec![vec![1.0, 0.0, 1.0, 1.0]];
        let mut rrng = RngStream::new(2, 2);
        recycle_dormant_units(&mut state, &mut adam, &mean_abs, 0.1, &mut rrng).unwrap();
        assert_eq!(state.layers[0].gain.as_ref().unwrap()[1], 1.0);
        assert_eq!(state.layers[0].shift.as_ref().unwrap()[1], 0.0);
        assert_eq!(adam.layers[0].gain_m.as_ref().unwrap()[1], 0.0);
        assert_eq!(adam.layers[0].shift_v.as_ref().unwrap()[1], 0.0);
        // Unit 0 untouched.
        assert_eq!(state.layers[0].gain.as_ref().unwrap()[0], 0.9);
    }

    #[test]
    fn engine_fires_on_period_boundaries() {
        let cfg = MlpConfig::new(3, vec![4], 2, false);
        let mut rng = RngStream::new(51, 0);
        let mut state = init_mlp(&cfg, &mut rng).unwrap();
        let mut adam = AdamState::new(&state);
        let mut activity = ActivityStats::new(&cfg);
        // Accumulate a window marking unit 3 dormant.
        let h = Matrix::from_vec(1, 4, vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let mut engine = MitigationEngine::new(Mitigation::RecycleDormant {
            tau: 0.1,
            period: 10,
        })
        .unwrap();
        let mut hook_rng = RngStream::new(6, 6);
        let mut fires = Vec::new();
        for step in 1..=30u64 {
            activity.accumulate(std::slice::from_ref(&h));
            let r = engine
                .post_step_hook(&mut state, &mut adam, &mut activity, step, &mut hook_rng)
                .unwrap();
            if let Some(rep) = r {
                fires.push((step, rep.total()));
                // Activity window consumed.
                assert_eq!(activity.batches(), 0);
            }
        }
        assert_eq!(fires.iter().map(|f| f.0).collect::<Vec<_>>(), vec![10, 20, 30]);
        assert!(fires.iter().all(|f| f.1 == 1));
    }

    #[test]
    fn engine_shrink_fires_and_grad_hooks_apply() {
        let (_, mut state) = small_net(false, 61);
        let mut adam = AdamState::new(&state);
        let cfg = MlpConfig::new(4, vec![6, 5], 3, false);
        let mut activity = ActivityStats::new(&cfg);
        let mut engine = MitigationEngine::new(Mitigation::ShrinkPerturb {
            gamma: 0.5,
            noise_scale: 0.0,
            period: 7,
        })
        .unwrap();
        assert!(engine.has_param_hook());
        assert!(!engine.needs_activity());
        let w0 = state.layers[0].w.get(0, 0);
        let mut hook_rng = RngStream::new(3, 3);
        for step in 1..=6u64 {
            engine
                .post_step_hook(&mut state, &mut adam, &mut activity, step, &mut hook_rng)
                .unwrap();
            assert_eq!(state.layers[0].w.get(0, 0), w0, "must not fire early");
        }
        engine
            .post_step_hook(&mut state, &mut adam, &mut activity, 7, &mut hook_rng)
            .unwrap();
        assert_eq!(state.layers[0].w.get(0, 0), 0.5 * w0);

        // Gradient hook: decay engine adds lambda*w.
        let mut decay = MitigationEngine::new(Mitigation::WeightDecay { lambda: 0.1 }).unwrap();
        let mut grads = Grads::zeros_like(&state);
        decay.grad_hook(&state, &mut grads).unwrap();
        assert_relative_eq!(
            grads.layers[0].w.get(0, 0),
            0.1 * state.layers[0].w.get(0, 0),
            max_relative = 1e-15
        );
        // None engine is inert.
        let mut noop = MitigationEngine::new(Mitigation::None).unwrap();
        let mut grads2 = Grads::zeros_like(&state);
        noop.grad_hook(&state, &mut grads2).unwrap();
        assert!(grads2.layers[0].w.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        assert!(Mitigation::WeightDecay { lambda: -1.0 }.validate().is_err());
        assert!(Mitigation::ShrinkPerturb {
            gamma: 1.2,
            noise_scale: 0.01,
            period: 10
        }
        .validate()
        .is_err());
        assert!(Mitigation::ShrinkPerturb {
            gamma: 0.8,
            noise_scale: 0.01,
            period: 0
        }
        .validate()
        .is_err());
        assert!(Mitigation::SpectralPenalty { lambda: f64::NAN }.validate().is_err());
        assert!(Mitigation::RecycleDormant { tau: -0.1, period: 5 }.validate().is_err());
        assert!(Mitigation::None.validate().is_ok());
    }

    #[test]
    fn config_serde_roundtrip() {
        let cases = vec![
            Mitigation::None,
            Mitigation::WeightDecay { lambda: 1e-4 },
            Mitigation::ShrinkPerturb {
                gamma: 0.8,
                noise_scale: 0.01,
                period: 600,
            },
            Mitigation::SpectralPenalty { lambda: 0.01 },
            Mitigation::RecycleDormant {
                tau: 0.1,
                period: 600,
            },
        ];
        for c in cases {
            let js = serde_json::to_string(&c).unwrap();
            let back: Mitigation = serde_json::from_str(&js).unwrap();
            assert_eq!(c, back);
        }
        // Tag names are snake_case kind fields.
        let js = serde_json::to_string(&Mitigation::WeightDecay { lambda: 0.5 }).unwrap();
        assert!(js.contains("\"kind\":\"weight_decay\""), "{js}");
    }

    /// A dead unit inside a normalized network is still flagged by the
    /// relative activity score and its normalization parameters return to
    /// identity on reset.
    #[test]
    fn activity_scores_flag_dead_units_under_normalization() {
        let cfg = MlpConfig::new(5, vec![8], 3, true);
        let mut rng = RngStream::new(71, 0);
        let mut state = init_mlp(&cfg, &mut rng).unwrap();
        // Force unit 4's affine output negative for every sample: gain 0,
        // shift -1 => post = relu(-1) = 0 regardless of input.
        state.layers[0].gain.as_mut().unwrap()[4] = 0.0;
        state.layers[0].shift.as_mut().unwrap()[4] = -1.0;
        let mut xr = RngStream::new(8, 8);
        let x = Matrix::from_fn(16, 5, |_, _| xr.normal());
        let (_, trace) = forward(&cfg, &state, &x, true).unwrap();
        let mut activity = ActivityStats::new(&cfg);
        activity.accumulate(trace.unwrap().hidden_activations());
        let mean_abs = activity.mean_abs();
        assert_eq!(mean_abs[0][4], 0.0);
        let mut adam = AdamState::new(&state);
        let mut rrng = RngStream::new(4, 4);
        let report =
            recycle_dormant_units(&mut state, &mut adam, &mean_abs, 0.1, &mut rrng).unwrap();
        assert_eq!(report.reset_per_layer, vec![1]);
        assert_eq!(state.layers[0].gain.as_ref().unwrap()[4], 1.0);
    }
}
