//! A small fully-connected network with optional per-layer normalization.
//!
//! Architecture: for each hidden layer, `z = W x + b`, optionally
//! normalized per sample across features (`(z - mean) / sqrt(var + eps)`,
//! then an elementwise affine gain/shift), followed by ReLU; a final linear
//! layer produces logits.  The loss is softmax cross-entropy against either
//! hard labels or full target distributions (soft targets), which is what
//! gradually interpolated objectives require.
//!
//! Hot paths run through a caller-owned [`MlpWorkspace`] so that a training
//! step performs no heap allocation; thin allocating wrappers ([`forward`],
//! [`backward`]) cover tests and one-off evaluation.  All computation is
//! deterministic: matrix products come from [`crate::linalg`] and every
//! reduction runs in a fixed order.

use crate::error::{CoreError, Result};
use crate::linalg::{matmul_into, Matrix};
use crate::rng::RngStream;

// ─── Configuration and parameters ────────────────────────────────────────

/// Network shape and normalization choice.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub layer_norm: bool,
    pub ln_eps: f64,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, layer_norm: bool) -> Self {
        Self {
            input_dim,
            hidden,
            output_dim,
            layer_norm,
            ln_eps: 1e-5,
        }
    }

    /// `(fan_in, fan_out)` for each weight layer, hidden layers first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(CoreError::InvalidArgument(
                "all layer widths must be positive".into(),
            ));
        }
        if !(self.ln_eps.is_finite() && self.ln_eps > 0.0) {
            return Err(CoreError::InvalidArgument(
                "normalization epsilon must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// One weight layer; `w` is `out x in` row-major.  `gain`/`shift` are the
/// per-feature normalization parameters (present on hidden layers when the
/// config enables normalization).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub gain: Option<Vec<f64>>,
    pub shift: Option<Vec<f64>>,
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpState {
    pub layers: Vec<Layer>,
}

impl MlpState {
    /// L2 norm over every trainable tensor (weights, biases, gains, shifts).
    pub fn param_l2(&self) -> f64 {
        let mut acc = 0.0f64;
        for layer in &self.layers {
            for v in layer.w.data() {
                acc = v.mul_add(*v, acc);
            }
            for v in &layer.b {
                acc = v.mul_add(*v, acc);
            }
            if let Some(g) = &layer.gain {
                for v in g {
                    acc = v.mul_add(*v, acc);
                }
            }
            if let Some(s) = &layer.shift {
                for v in s {
                    acc = v.mul_add(*v, acc);
                }
            }
        }
        acc.sqrt()
    }
}

/// Standard deviation of the fan-in-scaled normal initialization used for
/// weight matrices (`sqrt(2 / fan_in)`).
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// Initialize parameters: weights `N(0, 2/fan_in)` drawn row-major,
/// biases and shifts zero, gains one.
pub fn init_mlp(cfg: &MlpConfig, rng: &mut RngStream) -> Result<MlpState> {
    cfg.validate()?;
    let n_layers = cfg.n_layers();
    let mut layers = Vec::with_capacity(n_layers);
    for (li, (fan_in, fan_out)) in cfg.layer_dims().into_iter().enumerate() {
        let std = he_std(fan_in);
        let mut w = Matrix::zeros(fan_out, fan_in);
        for v in w.data_mut() {
            *v = std * rng.normal();
        }
        let is_hidden = li + 1 < n_layers;
        let (gain, shift) = if cfg.layer_norm && is_hidden {
            (Some(vec![1.0; fan_out]), Some(vec![0.0; fan_out]))
        } else {
            (None, None)
        };
        layers.push(Layer {
            w,
            b: vec![0.0; fan_out],
            gain,
            shift,
        });
    }
    Ok(MlpState { layers })
}

// ─── Gradients ───────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub w: Matrix,
    pub b: Vec<f64>,
    pub gain: Option<Vec<f64>>,
    pub shift: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Grads {
    pub layers: Vec<LayerGrads>,
}

impl Grads {
    pub fn zeros_like(state: &MlpState) -> Self {
        let layers = state
            .layers
            .iter()
            .map(|l| LayerGrads {
                w: Matrix::zeros(l.w.rows(), l.w.cols()),
                b: vec![0.0; l.b.len()],
                gain: l.gain.as_ref().map(|g| vec![0.0; g.len()]),
                shift: l.shift.as_ref().map(|s| vec![0.0; s.len()]),
            })
            .collect();
        Self { layers }
    }
}

// ─── Targets ─────────────────────────────────────────────────────────────

/// Batch training targets: hard class labels or full distributions
/// (one row per sample, one column per class).
#[derive(Debug, Clone, Copy)]
pub enum BatchTargets<'a> {
    Hard(&'a [usize]),
    Soft(&'a Matrix),
}

impl BatchTargets<'_> {
    pub fn len(&self) -> usize {
        match self {
            BatchTargets::Hard(l) => l.len(),
            BatchTargets::Soft(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

// ─── Workspace ───────────────────────────────────────────────────────────

/// Preallocated buffers for one forward/backward pass at a fixed batch
/// size.  Reusing the workspace across steps keeps training allocation-free.
#[derive(Debug)]
pub struct MlpWorkspace {
    batch: usize,
    /// Pre-normalization affine output per hidden layer (`z = W x + b`).
    pre: Vec<Matrix>,
    /// Normalized activations per hidden layer (when normalization is on).
    xhat: Vec<Matrix>,
    /// Per-sample normalization scale `sqrt(var + eps)` per hidden layer.
    sigma: Vec<Vec<f64>>,
    /// Post-activation output per hidden layer.
    post: Vec<Matrix>,
    pub logits: Matrix,
    pub dlogits: Matrix,
    /// Cached transposes of layer weights (`in x out`), refreshed lazily.
    wt: Vec<Matrix>,
    wt_dirty: bool,
    /// Backward chain buffer per hidden layer (`batch x width`).
    dh: Vec<Matrix>,
    /// Scratch for transposed gradients (`out x batch` per layer).
    dzt: Vec<Matrix>,
    pub grads: Grads,
}

impl MlpWorkspace {
    pub fn new(cfg: &MlpConfig, state: &MlpState, batch: usize) -> Self {
        let dims = cfg.layer_dims();
        let nh = cfg.hidden.len();
        let pre: Vec<Matrix> = (0..nh).map(|l| Matrix::zeros(batch, dims[l].1)).collect();
        let xhat = pre.clone();
        let sigma = (0..nh).map(|_| vec![0.0; batch]).collect();
        let post = pre.clone();
        let logits = Matrix::zeros(batch, cfg.output_dim);
        let dlogits = Matrix::zeros(batch, cfg.output_dim);
        let wt = state
            .layers
            .iter()
            .map(|l| Matrix::zeros(l.w.cols(), l.w.rows()))
            .collect();
        let dh: Vec<Matrix> = (0..nh).map(|l| Matrix::zeros(batch, dims[l].1)).collect();
        let dzt = dims
            .iter()
            .map(|&(_, out)| Matrix::zeros(out, batch))
            .collect();
        let grads = Grads::zeros_like(state);
        Self {
            batch,
            pre,
            xhat,
            sigma,
            post,
            logits,
            dlogits,
            wt,
            wt_dirty: true,
            dh,
            dzt,
            grads,
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Resize batch-dependent buffers if the batch size changed.
    pub fn ensure_batch(&mut self, cfg: &MlpConfig, state: &MlpState, batch: usize) {
        if batch != self.batch {
            let dirty = self.wt_dirty;
            let mut fresh = MlpWorkspace::new(cfg, state, batch);
            std::mem::swap(&mut fresh.wt, &mut self.wt);
            fresh.wt_dirty = dirty;
            *self = fresh;
        }
    }

    /// Mark cached weight transposes stale (call after any parameter
    /// mutation outside [`adam_step`], which does it automatically).
    pub fn mark_weights_dirty(&mut self) {
        self.wt_dirty = true;
    }

    /// Post-activation buffers from the most recent forward pass (one per
    /// hidden layer) for activity accounting.
    pub fn hidden_activations(&self) -> &[Matrix] {
        &self.post
    }

    fn refresh_wt(&mut self, state: &MlpState) -> Result<()> {
        if self.wt_dirty {
            for (t, layer) in self.wt.iter_mut().zip(&state.layers) {
                layer.w.transpose_into(t)?;
            }
            self.wt_dirty = false;
        }
        Ok(())
    }
}

// ─── Forward ─────────────────────────────────────────────────────────────

fn add_bias_rows(m: &mut Matrix, b: &[f64]) {
    let cols = m.cols();
    debug_assert_eq!(cols, b.len());
    for i in 0..m.rows() {
        for (v, bv) in m.row_mut(i).iter_mut().zip(b) {
            *v += *bv;
        }
    }
}

/// Forward pass through the workspace: fills `pre`, `xhat`, `sigma`,
/// `post`, and `logits`.  Errors if `x` contains non-finite values or has
/// the wrong shape.
pub fn forward_ws(
    cfg: &MlpConfig,
    state: &MlpState,
    ws: &mut MlpWorkspace,
    x: &Matrix,
) -> Result<()> {
    if x.rows() != ws.batch || x.cols() != cfg.input_dim {
        return Err(CoreError::InvalidArgument(format!(
            "forward input is {}x{}, expected {}x{}",
            x.rows(),
            x.cols(),
            ws.batch,
            cfg.input_dim
        )));
    }
    if !x.is_finite() {
        return Err(CoreError::NonFinite {
            context: "forward input",
        });
    }
    ws.refresh_wt(state)?;
    let nh = cfg.hidden.len();
    for l in 0..nh {
        // z = input · Wᵀ + b
        {
            let input: &Matrix = if l == 0 { x } else { &ws.post[l - 1] };
            matmul_into(&mut ws.pre[l], input, &ws.wt[l])?;
        }
        add_bias_rows(&mut ws.pre[l], &state.layers[l].b);
        let width = cfg.hidden[l];
        if cfg.layer_norm {
            let gain = state.layers[l].gain.as_ref().expect("gain present");
            let shift = state.layers[l].shift.as_ref().expect("shift present");
            let inv_n = 1.0 / width as f64;
            for r in 0..ws.batch {
                let zrow = ws.pre[l].row(r);
                let mut mean = 0.0;
                for v in zrow {
                    mean += *v;
                }
                mean *= inv_n;
                let mut var = 0.0;
                for v in zrow {
                    let d = *v - mean;
                    var = d.mul_add(d, var);
                }
                var *= inv_n;
                let sig = (var + cfg.ln_eps).sqrt();
                ws.sigma[l][r] = sig;
                let inv_sig = 1.0 / sig;
                // xhat, then affine + ReLU into post.
                let zrow = ws.pre[l].row(r);
                let xrow = ws.xhat[l].row_mut(r);
                for (xh, z) in xrow.iter_mut().zip(zrow) {
                    *xh = (*z - mean) * inv_sig;
                }
                let xrow = ws.xhat[l].row(r);
                let prow = ws.post[l].row_mut(r);
                for j in 0..width {
                    let a = gain[j].mul_add(xrow[j], shift[j]);
                    prow[j] = if a > 0.0 { a } else { 0.0 };
                }
            }
        } else {
            for r in 0..ws.batch {
                let zrow = ws.pre[l].row(r);
                let prow = ws.post[l].row_mut(r);
                for (p, z) in prow.iter_mut().zip(zrow) {
                    *p = if *z > 0.0 { *z } else { 0.0 };
                }
            }
        }
    }
    {
        let last = nh.checked_sub(1);
        let input: &Matrix = match last {
            Some(l) => &ws.post[l],
            None => x,
        };
        let logits = &mut ws.logits;
        matmul_into(logits, input, &ws.wt[nh])?;
    }
    add_bias_rows(&mut ws.logits, &state.layers[nh].b);
    Ok(())
}

// ─── Loss ────────────────────────────────────────────────────────────────

/// Softmax cross-entropy over the workspace logits.  Fills `ws.dlogits`
/// with `(softmax(z) - y) / batch` and returns the mean loss
/// `mean_b [ logsumexp(z_b) - Σ_c y_c z_c ]` (for hard labels the inner sum
/// is the target logit).  Uses the shifted log-sum-exp for stability.
pub fn loss_grad_ws(ws: &mut MlpWorkspace, targets: BatchTargets<'_>) -> Result<f64> {
    let batch = ws.batch;
    let k = ws.logits.cols();
    if targets.len() != batch {
        return Err(CoreError::InvalidArgument(format!(
            "targets cover {} samples, batch is {batch}",
            targets.len()
        )));
    }
    if let BatchTargets::Soft(m) = targets {
        if m.cols() != k {
            return Err(CoreError::InvalidArgument(format!(
                "soft targets have {} classes, logits have {k}",
                m.cols()
            )));
        }
    }
    let mut total_loss = 0.0f64;
    for r in 0..batch {
        let zrow = ws.logits.row(r);
        let mut zmax = f64::NEG_INFINITY;
        for v in zrow {
            zmax = zmax.max(*v);
        }
        let mut sum_exp = 0.0f64;
        {
            let drow = ws.dlogits.row_mut(r);
            for (d, z) in drow.iter_mut().zip(zrow) {
                let e = (*z - zmax).exp();
                *d = e;
                sum_exp += e;
            }
        }
        let lse = zmax + sum_exp.ln();
        let inv_sum = 1.0 / sum_exp;
        let zrow = ws.logits.row(r);
        let drow = ws.dlogits.row_mut(r);
        for d in drow.iter_mut() {
            *d *= inv_sum;
        }
        match targets {
            BatchTargets::Hard(labels) => {
                let y = labels[r];
                if y >= k {
                    return Err(CoreError::LabelOutOfRange { label: y, classes: k });
                }
                total_loss += lse - zrow[y];
                drow[y] -= 1.0;
            }
            BatchTargets::Soft(m) => {
                let yrow = m.row(r);
                let mut row_loss = 0.0f64;
                for ((d, yv), zv) in drow.iter_mut().zip(yrow).zip(zrow) {
                    row_loss = yv.mul_add(lse - zv, row_loss);
                    *d -= yv;
                }
                total_loss += row_loss;
            }
        }
    }
    let inv_b = 1.0 / batch as f64;
    ws.dlogits.scale_mut(inv_b);
    Ok(total_loss * inv_b)
}

// ─── Backward ────────────────────────────────────────────────────────────

fn colsum_into(m: &Matrix, out: &mut [f64]) {
    debug_assert_eq!(m.cols(), out.len());
    out.fill(0.0);
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += *v;
        }
    }
}

/// Backward pass: consumes `ws.dlogits` and the cached forward activations,
/// filling `ws.grads`.  Must be called after [`forward_ws`] and
/// [`loss_grad_ws`] on the same input `x`.
pub fn backward_ws(
    cfg: &MlpConfig,
    state: &MlpState,
    ws: &mut MlpWorkspace,
    x: &Matrix,
) -> Result<()> {
    let nh = cfg.hidden.len();
    // Output layer: dW = dzᵀ · input, db = column sums, then push the
    // chain into the last hidden buffer.
    {
        let input: &Matrix = if nh == 0 { x } else { &ws.post[nh - 1] };
        ws.dlogits.transpose_into(&mut ws.dzt[nh])?;
        matmul_into(&mut ws.grads.layers[nh].w, &ws.dzt[nh], input)?;
        colsum_into(&ws.dlogits, &mut ws.grads.layers[nh].b);
    }
    if nh > 0 {
        matmul_into(&mut ws.dh[nh - 1], &ws.dlogits, &state.layers[nh].w)?;
    }
    for l in (0..nh).rev() {
        let width = cfg.hidden[l];
        // ReLU gate: post[l] == 0 where the unit was inactive.
        for r in 0..ws.batch {
            let prow = ws.post[l].row(r);
            let grow = ws.dh[l].row_mut(r);
            for (g, p) in grow.iter_mut().zip(prow) {
                if *p <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        if cfg.layer_norm {
            let gain = state.layers[l].gain.as_ref().expect("gain present");
            // Gain/shift gradients.
            {
                let lg = &mut ws.grads.layers[l];
                let dgain = lg.gain.as_mut().expect("gain grad present");
                let dshift = lg.shift.as_mut().expect("shift grad present");
                dgain.fill(0.0);
                dshift.fill(0.0);
                for r in 0..ws.batch {
                    let grow = ws.dh[l].row(r);
                    let xrow = ws.xhat[l].row(r);
                    for j in 0..width {
                        dgain[j] = grow[j].mul_add(xrow[j], dgain[j]);
                        dshift[j] += grow[j];
                    }
                }
            }
            // Through the normalization: dxhat = g ⊙ gain, then
            // dz = (dxhat - mean(dxhat) - xhat ⊙ mean(dxhat ⊙ xhat)) / sigma.
            let inv_n = 1.0 / width as f64;
            for r in 0..ws.batch {
                let xrow = ws.xhat[l].row(r);
                let grow = ws.dh[l].row_mut(r);
                let mut m1 = 0.0f64;
                let mut m2 = 0.0f64;
                for j in 0..width {
                    let dxh = grow[j] * gain[j];
                    grow[j] = dxh;
                    m1 += dxh;
                    m2 = dxh.mul_add(xrow[j], m2);
                }
                m1 *= inv_n;
                m2 *= inv_n;
                let inv_sig = 1.0 / ws.sigma[l][r];
                for j in 0..width {
                    grow[j] = (grow[j] - m1 - xrow[j] * m2) * inv_sig;
                }
            }
        }
        // Parameter gradients and the chain to the previous layer.
        {
            let input: &Matrix = if l == 0 { x } else { &ws.post[l - 1] };
            ws.dh[l].transpose_into(&mut ws.dzt[l])?;
            matmul_into(&mut ws.grads.layers[l].w, &ws.dzt[l], input)?;
            colsum_into(&ws.dh[l], &mut ws.grads.layers[l].b);
        }
        if l > 0 {
            let (lower, upper) = ws.dh.split_at_mut(l);
            matmul_into(&mut lower[l - 1], &upper[0], &state.layers[l].w)?;
        }
    }
    Ok(())
}

// ─── Adam optimizer ──────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct AdamCfg {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamCfg {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamLayer {
    pub w_m: Matrix,
    pub w_v: Matrix,
    pub b_m: Vec<f64>,
    pub b_v: Vec<f64>,
    pub gain_m: Option<Vec<f64>>,
    pub gain_v: Option<Vec<f64>>,
    pub shift_m: Option<Vec<f64>>,
    pub shift_v: Option<Vec<f64>>,
}

/// First/second-moment accumulators plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub layers: Vec<AdamLayer>,
}

impl AdamState {
    pub fn new(state: &MlpState) -> Self {
        let layers = state
            .layers
            .iter()
            .map(|l| AdamLayer {
                w_m: Matrix::zeros(l.w.rows(), l.w.cols()),
                w_v: Matrix::zeros(l.w.rows(), l.w.cols()),
                b_m: vec![0.0; l.b.len()],
                b_v: vec![0.0; l.b.len()],
                gain_m: l.gain.as_ref().map(|g| vec![0.0; g.len()]),
                gain_v: l.gain.as_ref().map(|g| vec![0.0; g.len()]),
                shift_m: l.shift.as_ref().map(|s| vec![0.0; s.len()]),
                shift_v: l.shift.as_ref().map(|s| vec![0.0; s.len()]),
            })
            .collect();
        Self { t: 0, layers }
    }
}

fn grads_finite(grads: &Grads) -> Option<(usize, &'static str)> {
    for (li, l) in grads.layers.iter().enumerate() {
        if !l.w.is_finite() {
            return Some((li, "weights"));
        }
        if !l.b.iter().all(|v| v.is_finite()) {
            return Some((li, "bias"));
        }
        if let Some(g) = &l.gain {
            if !g.iter().all(|v| v.is_finite()) {
                return Some((li, "gain"));
            }
        }
        if let Some(s) = &l.shift {
            if !s.iter().all(|v| v.is_finite()) {
                return Some((li, "shift"));
            }
        }
    }
    None
}

fn adam_update_slice(
    p: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    cfg: &AdamCfg,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..p.len() {
        let gi = g[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        p[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}

/// One optimizer step.  Validates every gradient tensor first and aborts
/// (state untouched) if any value is non-finite.
pub fn adam_step(
    state: &mut MlpState,
    adam: &mut AdamState,
    cfg: &AdamCfg,
    grads: &Grads,
) -> Result<()> {
    if let Some((layer, tensor)) = grads_finite(grads) {
        return Err(CoreError::NonFiniteGradient { layer, tensor });
    }
    adam.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(adam.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(adam.t as i32);
    for ((layer, alayer), glayer) in state
        .layers
        .iter_mut()
        .zip(adam.layers.iter_mut())
        .zip(&grads.layers)
    {
        adam_update_slice(
            layer.w.data_mut(),
            alayer.w_m.data_mut(),
            alayer.w_v.data_mut(),
            glayer.w.data(),
            cfg,
            bc1,
            bc2,
        );
        adam_update_slice(
            &mut layer.b,
            &mut alayer.b_m,
            &mut alayer.b_v,
            &glayer.b,
            cfg,
            bc1,
            bc2,
        );
        if let (Some(gain), Some(gm), Some(gv), Some(gg)) = (
            layer.gain.as_mut(),
            alayer.gain_m.as_mut(),
            alayer.gain_v.as_mut(),
            glayer.gain.as_ref(),
        ) {
            adam_update_slice(gain, gm, gv, gg, cfg, bc1, bc2);
        }
        if let (Some(shift), Some(sm), Some(sv), Some(sg)) = (
            layer.shift.as_mut(),
            alayer.shift_m.as_mut(),
            alayer.shift_v.as_mut(),
            glayer.shift.as_ref(),
        ) {
            adam_update_slice(shift, sm, sv, sg, cfg, bc1, bc2);
        }
    }
    Ok(())
}

/// Convenience: forward + loss + backward + optimizer step through a
/// workspace.  Returns the batch loss.  The workspace weight-transpose
/// cache is invalidated after the parameter update.
pub fn train_step(
    cfg: &MlpConfig,
    state: &mut MlpState,
    adam: &mut AdamState,
    adam_cfg: &AdamCfg,
    ws: &mut MlpWorkspace,
    x: &Matrix,
    targets: BatchTargets<'_>,
) -> Result<f64> {
    forward_ws(cfg, state, ws, x)?;
    let loss = loss_grad_ws(ws, targets)?;
    backward_ws(cfg, state, ws, x)?;
    adam_step(state, adam, adam_cfg, &ws.grads)?;
    ws.mark_weights_dirty();
    Ok(loss)
}

// ─── Allocating wrappers ─────────────────────────────────────────────────

/// Forward activations retained for a subsequent [`backward`] call.
#[derive(Debug)]
pub struct ForwardTrace {
    ws: MlpWorkspace,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Matrix {
        &self.ws.logits
    }

    pub fn hidden_activations(&self) -> &[Matrix] {
        self.ws.hidden_activations()
    }
}

/// Allocating forward pass; returns logits and, on request, the trace
/// needed for [`backward`].
pub fn forward(
    cfg: &MlpConfig,
    state: &MlpState,
    x: &Matrix,
    want_trace: bool,
) -> Result<(Matrix, Option<ForwardTrace>)> {
    let mut ws = MlpWorkspace::new(cfg, state, x.rows());
    forward_ws(cfg, state, &mut ws, x)?;
    let logits = ws.logits.clone();
    Ok((logits, want_trace.then_some(ForwardTrace { ws })))
}

/// Allocating loss + gradient computation from a forward trace.
pub fn backward(
    cfg: &MlpConfig,
    state: &MlpState,
    trace: &mut ForwardTrace,
    x: &Matrix,
    targets: BatchTargets<'_>,
) -> Result<(f64, Grads)> {
    let loss = loss_grad_ws(&mut trace.ws, targets)?;
    backward_ws(cfg, state, &mut trace.ws, x)?;
    Ok((loss, trace.ws.grads.clone()))
}

/// Mean loss over a dataset without gradient work (allocating; for
/// evaluation use sites that don't hold a workspace).
pub fn eval_loss(
    cfg: &MlpConfig,
    state: &MlpState,
    x: &Matrix,
    targets: BatchTargets<'_>,
) -> Result<(Matrix, f64)> {
    let mut ws = MlpWorkspace::new(cfg, state, x.rows());
    forward_ws(cfg, state, &mut ws, x)?;
    let loss = loss_grad_ws(&mut ws, targets)?;
    Ok((ws.logits, loss))
}

// ─── Activity statistics ─────────────────────────────────────────────────

/// Running per-unit activity: mean absolute post-activation output per
/// hidden unit, accumulated one batch mean per recorded step.
#[derive(Debug, Clone)]
pub struct ActivityStats {
    sums: Vec<Vec<f64>>,
    batches: u64,
}

impl ActivityStats {
    pub fn new(cfg: &MlpConfig) -> Self {
        Self {
            sums: cfg.hidden.iter().map(|&w| vec![0.0; w]).collect(),
            batches: 0,
        }
    }

    /// Record one batch of hidden activations (`post` from a forward pass).
    pub fn accumulate(&mut self, hidden: &[Matrix]) {
        debug_assert_eq!(hidden.len(), self.sums.len());
        for (sum, h) in self.sums.iter_mut().zip(hidden) {
            let inv_b = 1.0 / h.rows() as f64;
            for r in 0..h.rows() {
                for (s, v) in sum.iter_mut().zip(h.row(r)) {
                    *s = v.abs().mul_add(inv_b, *s);
                }
            }
        }
        self.batches += 1;
    }

    pub fn batches(&self) -> u64 {
        self.batches
    }

    /// Mean absolute activation per unit per hidden layer; zeros if nothing
    /// was accumulated yet.
    pub fn mean_abs(&self) -> Vec<Vec<f64>> {
        if self.batches == 0 {
            return self.sums.clone();
        }
        let inv = 1.0 / self.batches as f64;
        self.sums
            .iter()
            .map(|s| s.iter().map(|v| v * inv).collect())
            .collect()
    }

    pub fn reset(&mut self) {
        for s in &mut self.sums {
            s.fill(0.0);
        }
        self.batches = 0;
    }
}

// ─── Checkpoint I/O ──────────────────────────────────────────────────────

const CKPT_MAGIC: [u8; 4] = *b"PLNN";
const CKPT_VERSION: u32 = 1;

fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

struct ByteWriter(Vec<u8>);

impl ByteWriter {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn f64_slice(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CoreError::CheckpointCorrupt(format!(
                "needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.f64()?);
        }
        Ok(v)
    }
}

/// Serialize config, parameters, optimizer configuration, and optimizer
/// state.  Layout: magic, version, shape header, tensors as little-endian
/// f64, then a CRC32 of everything after the magic.
pub fn save_checkpoint(
    path: &std::path::Path,
    cfg: &MlpConfig,
    state: &MlpState,
    adam_cfg: &AdamCfg,
    adam: &AdamState,
) -> Result<()> {
    let mut w = ByteWriter(Vec::new());
    w.u32(CKPT_VERSION);
    w.u32(cfg.input_dim as u32);
    w.u32(cfg.hidden.len() as u32);
    for &h in &cfg.hidden {
        w.u32(h as u32);
    }
    w.u32(cfg.output_dim as u32);
    w.u8(cfg.layer_norm as u8);
    w.f64(cfg.ln_eps);
    w.f64(adam_cfg.lr);
    w.f64(adam_cfg.beta1);
    w.f64(adam_cfg.beta2);
    w.f64(adam_cfg.eps);
    w.u64(adam.t);
    for (layer, alayer) in state.layers.iter().zip(&adam.layers) {
        w.f64_slice(layer.w.data());
        w.f64_slice(&layer.b);
        let has_ln = layer.gain.is_some();
        w.u8(has_ln as u8);
        if let (Some(g), Some(s)) = (&layer.gain, &layer.shift) {
            w.f64_slice(g);
            w.f64_slice(s);
        }
        w.f64_slice(alayer.w_m.data());
        w.f64_slice(alayer.w_v.data());
        w.f64_slice(&alayer.b_m);
        w.f64_slice(&alayer.b_v);
        if has_ln {
            w.f64_slice(alayer.gain_m.as_ref().expect("moments match params"));
            w.f64_slice(alayer.gain_v.as_ref().expect("moments match params"));
            w.f64_slice(alayer.shift_m.as_ref().expect("moments match params"));
            w.f64_slice(alayer.shift_v.as_ref().expect("moments match params"));
        }
    }
    let crc = crc32(&w.0);
    let mut out = Vec::with_capacity(4 + w.0.len() + 4);
    out.extend_from_slice(&CKPT_MAGIC);
    out.extend_from_slice(&w.0);
    out.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, out)?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`], validating magic,
/// version, structure, and checksum.
pub fn load_checkpoint(
    path: &std::path::Path,
) -> Result<(MlpConfig, MlpState, AdamCfg, AdamState)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 || bytes[..4] != CKPT_MAGIC {
        return Err(CoreError::CheckpointBadMagic);
    }
    let payload = &bytes[4..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32(payload);
    if stored != computed {
        return Err(CoreError::CheckpointChecksum { stored, computed });
    }
    let mut r = ByteReader {
        buf: payload,
        pos: 0,
    };
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(CoreError::CheckpointBadVersion(version));
    }
    let input_dim = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    if n_hidden > 1024 {
        return Err(CoreError::CheckpointCorrupt(format!(
            "implausible hidden layer count {n_hidden}"
        )));
    }
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(r.u32()? as usize);
    }
    let output_dim = r.u32()? as usize;
    let layer_norm = r.u8()? != 0;
    let ln_eps = r.f64()?;
    let cfg = MlpConfig {
        input_dim,
        hidden,
        output_dim,
        layer_norm,
        ln_eps,
    };
    cfg.validate()?;
    let adam_cfg = AdamCfg {
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
    };
    let t = r.u64()?;
    let mut layers = Vec::new();
    let mut alayers = Vec::new();
    for (fan_in, fan_out) in cfg.layer_dims() {
        let w = Matrix::from_vec(fan_out, fan_in, r.f64_vec(fan_out * fan_in)?)
            .map_err(|e| CoreError::CheckpointCorrupt(e.to_string()))?;
        let b = r.f64_vec(fan_out)?;
        let has_ln = r.u8()? != 0;
        let (gain, shift) = if has_ln {
            (Some(r.f64_vec(fan_out)?), Some(r.f64_vec(fan_out)?))
        } else {
            (None, None)
        };
        let w_m = Matrix::from_vec(fan_out, fan_in, r.f64_vec(fan_out * fan_in)?)
            .map_err(|e| CoreError::CheckpointCorrupt(e.to_string()))?;
        let w_v = Matrix::from_vec(fan_out, fan_in, r.f64_vec(fan_out * fan_in)?)
            .map_err(|e| CoreError::CheckpointCorrupt(e.to_string()))?;
        let b_m = r.f64_vec(fan_out)?;
        let b_v = r.f64_vec(fan_out)?;
        let (gain_m, gain_v, shift_m, shift_v) = if has_ln {
            (
                Some(r.f64_vec(fan_out)?),
                Some(r.f64_vec(fan_out)?),
                Some(r.f64_vec(fan_out)?),
                Some(r.f64_vec(fan_out)?),
            )
        } else {
            (None, None, None, None)
        };
        layers.push(Layer { w, b, gain, shift });
        alayers.push(AdamLayer {
            w_m,
            w_v,
            b_m,
            b_v,
            gain_m,
            gain_v,
            shift_m,
            shift_v,
        });
    }
    if r.pos != payload.len() {
        return Err(CoreError::CheckpointCorrupt(format!(
            "{} trailing bytes",
            payload.len() - r.pos
        )));
    }
    Ok((
        cfg,
        MlpState { layers },
        adam_cfg,
        AdamState {
            t,
            layers: alayers,
        },
    ))
}

// ─── Tests ───────────────────────────────────────────────────────────────
