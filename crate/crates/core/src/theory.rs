//! Numerically checkable convergence guarantees on quadratic losses.
//!
//! This module builds the smallest landscape family on which every claim
//! about gradient descent under a gradually changing objective can be
//! verified to machine precision rather than estimated:
//!
//! - [`QuadraticLoss`] — a bowl `f(x) = ½(x−x*)ᵀA(x−x*)` with symmetric
//!   positive-definite curvature `A`, analytic minimizer `x*`, and a basin
//!   radius `r`.  Its smoothness constant `β = λ_max(A)` and strong-convexity
//!   constant `μ = λ_min(A)` are exact, so inequalities involving them are
//!   directly testable.
//! - [`basin_step_size`] — the step-size rule `η = min(1/β, (r−d)/(β·d))`
//!   that keeps every gradient-descent iterate inside the basin while
//!   contracting toward the minimizer.
//! - [`run_gd`] — gradient descent with per-step bookkeeping: the descent
//!   inequality `f(x') ≤ f(x) + ⟨∇f(x), x'−x⟩ + (β/2)‖x'−x‖²`, the
//!   contraction bound `‖x'−x*‖² ≤ (1−μη)‖x−x*‖²`, and basin membership are
//!   checked at every step and reported as flags.
//! - [`LinearReparam`] — a full-rank task-change matrix `W` with singular
//!   values confined to the multiplicative ball `[1/(1+ε), 1+ε]`, modeling
//!   one small environment change `g(x) = f(Wx)`.
//! - [`compose`] — the transformed bowl: `A_g = WᵀAW`, minimizer
//!   `x*_g = W⁻¹x*` (forced by `g(x) = f(Wx)`), shrunk radius `r_g = r(1−ε)`.
//! - `verify_*` operations and [`run_task_sequence`] — executable checks that
//!   the transformed landscape keeps bounded curvature, that the shrunk ball
//!   maps into the old basin, that a point near the old minimizer still
//!   converges to the new one, and that this tracking survives a long chain
//!   of task changes — plus a deliberate negative control with an oversized
//!   change that must be flagged as violating the hypotheses.
//!
//! All verification reports serialize to JSON for machine-readable logs.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::{
    dot, matmul, matvec, norm2, singular_values, solve, sym_eig_extremes, vsub, Matrix,
};
use crate::rng::RngStream;

// ─── Quadratic loss ──────────────────────────────────────────────────────

/// A quadratic bowl `f(x) = ½(x−x*)ᵀA(x−x*)` with known curvature extremes.
///
/// `A` must be symmetric positive-definite, which makes the smoothness
/// constant `β = λ_max(A)`, the strong-convexity constant `μ = λ_min(A)`,
/// and the minimizer `x*` analytic.  The basin radius `r > 0` bounds the
/// region in which the step-size rule is allowed to operate; any positive
/// radius is valid because a quadratic is strongly convex everywhere.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    a: Matrix,
    x_star: Vec<f64>,
    r: f64,
    beta: f64,
    mu: f64,
}

impl QuadraticLoss {
    /// Validates the curvature matrix and caches its eigenvalue extremes.
    pub fn new(a: Matrix, x_star: Vec<f64>, r: f64) -> Result<Self> {
        if a.rows() != x_star.len() {
            return Err(CoreError::InvalidArgument(format!(
                "quadratic loss: curvature is {}x{} but the minimizer has length {}",
                a.rows(),
                a.cols(),
                x_star.len()
            )));
        }
        if !a.is_finite() || x_star.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite {
                context: "quadratic loss definition",
            });
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "quadratic loss: basin radius must be positive and finite, got {r}"
            )));
        }
        // Also rejects non-square and non-symmetric curvature.
        let (mu, beta) = sym_eig_extremes(&a)?;
        if mu <= 0.0 {
            return Err(CoreError::InvalidArgument(format!(
                "quadratic loss: curvature must be positive-definite \
                 (smallest eigenvalue {mu:e})"
            )));
        }
        Ok(Self {
            a,
            x_star,
            r,
            beta,
            mu,
        })
    }

    /// Parameter dimension `d`.
    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    /// The curvature matrix `A`.
    pub fn curvature(&self) -> &Matrix {
        &self.a
    }

    /// The analytic minimizer `x*`.
    pub fn minimizer(&self) -> &[f64] {
        &self.x_star
    }

    /// Basin radius `r`.
    pub fn radius(&self) -> f64 {
        self.r
    }

    /// Smoothness constant `β = λ_max(A)` and strong-convexity constant
    /// `μ = λ_min(A)`, returned as `(beta, mu)`.
    pub fn constants(&self) -> (f64, f64) {
        (self.beta, self.mu)
    }

    /// `f(x) = ½(x−x*)ᵀA(x−x*)`.
    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        let d = vsub(x, &self.x_star);
        let ad = matvec(&self.a, &d)?;
        Ok(0.5 * dot(&d, &ad))
    }

    /// `∇f(x) = A(x−x*)`.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = vsub(x, &self.x_star);
        matvec(&self.a, &d)
    }

    /// Euclidean distance from `x` to the minimizer.
    pub fn dist_to_min(&self, x: &[f64]) -> f64 {
        norm2(&vsub(x, &self.x_star))
    }
}

// ─── Step-size rule ──────────────────────────────────────────────────────

/// Largest step that both contracts (`η ≤ 1/β`) and provably cannot leave a
/// basin of radius `radius` from distance `dist`:
/// `η = min(1/β, (radius − dist)/(β·dist))`, with the `1/β` cap when
/// `dist = 0`.  Errors if the point is already outside the basin.
pub fn basin_step_size(beta: f64, radius: f64, dist: f64) -> Result<f64> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "step size: smoothness constant must be positive and finite, got {beta}"
        )));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "step size: basin radius must be positive and finite, got {radius}"
        )));
    }
    if !(dist.is_finite() && dist >= 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "step size: distance must be non-negative and finite, got {dist}"
        )));
    }
    if dist >= radius {
        return Err(CoreError::OutsideBasin {
            dist,
            radius,
        });
    }
    if dist == 0.0 {
        return Ok(1.0 / beta);
    }
    Ok((1.0 / beta).min((radius - dist) / (beta * dist)))
}

// ─── Gradient descent with per-step verification ─────────────────────────

/// How the gradient-descent step size is chosen each iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Recompute [`basin_step_size`] from the current distance every step.
    BasinSafe,
    /// A constant step size.
    Fixed(f64),
}

/// A gradient-descent run with every inequality the theory promises checked
/// at every step.
#[derive(Debug, Clone)]
pub struct GdTrajectory {
    /// All iterates `x_0 .. x_K` (so `iterates.len() == steps.len() + 1`).
    pub iterates: Vec<Vec<f64>>,
    /// Step size used at each update.
    pub steps: Vec<f64>,
    /// Distance to the minimizer at each iterate.
    pub distances: Vec<f64>,
    /// Whether each iterate lies inside the basin (distance ≤ r, with a
    /// 1e−12 absolute allowance for round-off at the boundary).
    pub in_basin: Vec<bool>,
    /// The descent inequality
    /// `f(x_{k+1}) ≤ f(x_k) + ⟨∇f(x_k), x_{k+1}−x_k⟩ + (β/2)‖x_{k+1}−x_k‖²`
    /// held at every step (1e−12 relative tolerance).
    pub descent_ok: bool,
    /// The contraction bound `‖x_{k+1}−x*‖² ≤ (1−μη_k)‖x_k−x*‖² + 1e−12`
    /// held at every step.
    pub contraction_ok: bool,
    /// Largest violation of the descent inequality seen (negative when the
    /// inequality always held with slack).
    pub worst_descent_gap: f64,
    /// Largest violation of the contraction bound seen.
    pub worst_contraction_gap: f64,
    /// Distance to the minimizer at the final iterate.
    pub final_dist: f64,
    /// Whether the run stopped early because `final_dist < stop_tol`.
    pub converged: bool,
}

impl GdTrajectory {
    /// True when every recorded iterate stayed inside the basin.
    pub fn all_in_basin(&self) -> bool {
        self.in_basin.iter().all(|&b| b)
    }
}

/// Gradient descent failed in a way that still produced a trajectory.
#[derive(Debug, thiserror::Error)]
pub enum GdError {
    /// Input validation or linear-algebra failure.
    #[error(transparent)]
    Core(#[from] CoreError),
    /// Distance to the minimizer exceeded ten basin radii; the partial
    /// trajectory (including the diverging iterate) is attached.
    #[error("gradient descent diverged at step {step}: distance {dist:e} > 10 x radius {radius:e}")]
    Diverged {
        step: usize,
        dist: f64,
        radius: f64,
        trajectory: Box<GdTrajectory>,
    },
}

/// Runs gradient descent `x_{k+1} = x_k − η_k ∇f(x_k)` for at most
/// `max_steps` updates, stopping early once the distance to the minimizer
/// drops below `stop_tol`.
///
/// Records distances, basin membership, and the descent / contraction
/// inequality flags per step.  The starting point must lie strictly inside
/// the basin; a distance exceeding ten radii aborts with the partial
/// trajectory attached.
pub fn run_gd(
    f: &QuadraticLoss,
    x0: &[f64],
    max_steps: usize,
    rule: StepRule,
    stop_tol: f64,
) -> std::result::Result<GdTrajectory, GdError> {
    if x0.len() != f.dim() {
        return Err(GdError::Core(CoreError::InvalidArgument(format!(
            "gradient descent: start has length {} but the loss has dimension {}",
            x0.len(),
            f.dim()
        ))));
    }
    let d0 = f.dist_to_min(x0);
    if d0 >= f.r {
        return Err(GdError::Core(CoreError::OutsideBasin {
            dist: d0,
            radius: f.r,
        }));
    }
    let basin_tol = 1e-12;
    let mut traj = GdTrajectory {
        iterates: vec![x0.to_vec()],
        steps: Vec::new(),
        distances: vec![d0],
        in_basin: vec![d0 <= f.r + basin_tol],
        descent_ok: true,
        contraction_ok: true,
        worst_descent_gap: f64::NEG_INFINITY,
        worst_contraction_gap: f64::NEG_INFINITY,
        final_dist: d0,
        converged: d0 < stop_tol,
    };
    if traj.converged {
        return Ok(traj);
    }
    let mut x = x0.to_vec();
    let mut dist = d0;
    for k in 0..max_steps {
        let eta = match rule {
            StepRule::BasinSafe => basin_step_size(f.beta, f.r, dist)?,
            StepRule::Fixed(eta) => eta,
        };
        let g = f.grad(&x)?;
        let loss_before = f.loss(&x)?;
        let mut next = x.clone();
        for (n, gi) in next.iter_mut().zip(&g) {
            *n -= eta * gi;
        }

        // Descent inequality with 1e−12 relative tolerance.
        let delta = vsub(&next, &x);
        let loss_after = f.loss(&next)?;
        let rhs = loss_before + dot(&g, &delta) + 0.5 * f.beta * dot(&delta, &delta);
        let scale = 1.0f64.max(loss_after.abs()).max(rhs.abs());
        let descent_gap = loss_after - rhs;
        traj.worst_descent_gap = traj.worst_descent_gap.max(descent_gap);
        if descent_gap > 1e-12 * scale {
            traj.descent_ok = false;
        }

        // Contraction bound with 1e−12 absolute tolerance.
        let next_dist = f.dist_to_min(&next);
        let contraction_gap = next_dist * next_dist - (1.0 - f.mu * eta) * dist * dist;
        traj.worst_contraction_gap = traj.worst_contraction_gap.max(contraction_gap);
        if contraction_gap > 1e-12 {
            traj.contraction_ok = false;
        }

        traj.steps.push(eta);
        traj.iterates.push(next.clone());
        traj.distances.push(next_dist);
        traj.in_basin.push(next_dist <= f.r + basin_tol);
        traj.final_dist = next_dist;
        x = next;
        dist = next_dist;

        if dist > 10.0 * f.r {
            return Err(GdError::Diverged {
                step: k + 1,
                dist,
                radius: f.r,
                trajectory: Box::new(traj),
            });
        }
        if dist < stop_tol {
            traj.converged = true;
            break;
        }
    }
    Ok(traj)
}

// ─── Linear reparameterization ───────────────────────────────────────────

/// A full-rank task-change matrix `W` for the transformed loss
/// `g(x) = f(Wx)`, together with its measured deviation
/// `ε = max_i max(σ_i(W) − 1, 1/σ_i(W) − 1)` — the smallest `ε` such that
/// every singular value lies in the multiplicative ball `[1/(1+ε), 1+ε]`.
///
/// That ball is the exact hypothesis class on which everything downstream
/// is provable at once: `σ_max ≤ 1+ε` gives the curvature upper bound
/// `β_g ≤ β(1+ε)²`, `σ_min ≥ 1/(1+ε)` gives the lower bound
/// `μ_g ≥ μ/(1+ε)²`, and `1/σ_i ∈ [1/(1+ε), 1+ε]` gives the minimizer-shift
/// bound `‖I − W⁻¹‖₂ ≤ ε`.  The wider interval `[1/(1+ε), 1/(1−ε)]` would
/// keep the shift bound but admits changes whose top curvature exceeds
/// `β(1+ε)²` (σ_max up to `1/(1−ε) > 1+ε`), so it is not used here.
///
/// Sampled changes are built symmetric positive-definite
/// (`W = Q·diag(σ)·Qᵀ`) so that the shift bound is an exact operator-norm
/// fact rather than an estimate — a deliberate strengthening over general
/// full-rank `W`, for which singular-value bounds alone would not pin
/// `‖I − W⁻¹‖`.
#[derive(Debug, Clone)]
pub struct LinearReparam {
    w: Matrix,
    epsilon: f64,
}

impl LinearReparam {
    /// Wraps a square full-rank matrix, measuring
    /// `ε = max_i max(σ_i − 1, 1/σ_i − 1)` from its singular values.
    /// Errors if `W` is singular (a vanishing singular value) or if the
    /// measured `ε` reaches 1.
    pub fn from_matrix(w: Matrix) -> Result<Self> {
        if w.rows() != w.cols() {
            return Err(CoreError::NotSquare {
                rows: w.rows(),
                cols: w.cols(),
            });
        }
        if !w.is_finite() {
            return Err(CoreError::NonFinite {
                context: "task-change matrix",
            });
        }
        let svs = singular_values(&w)?;
        let max_sv = svs.iter().cloned().fold(0.0f64, f64::max);
        let mut epsilon = 0.0f64;
        for (i, &s) in svs.iter().enumerate() {
            if s <= 1e-12 * max_sv.max(1.0) {
                return Err(CoreError::Singular { pivot: s, col: i });
            }
            epsilon = epsilon.max((s - 1.0).max(1.0 / s - 1.0));
        }
        if epsilon >= 1.0 {
            return Err(CoreError::InvalidArgument(format!(
                "task change strays too far from the identity: \
                 max |1 - 1/sigma| = {epsilon} >= 1"
            )));
        }
        Ok(Self {
            w,
            epsilon,
        })
    }

    /// Samples a conforming change `W = Q·diag(σ)·Qᵀ` with a uniformly random
    /// orthogonal `Q` and each `σ_i` uniform in `[1/(1+ε), 1+ε]`.
    ///
    /// The result is symmetric positive-definite, so its singular values are
    /// its eigenvalues and `‖I − W⁻¹‖₂ = max_i |1 − 1/σ_i| ≤ ε` holds as an
    /// exact operator-norm fact.  `epsilon` must lie in `[0, 1)`; `ε = 0`
    /// degenerates to the identity (up to round-off).
    pub fn sample_conforming(d: usize, epsilon: f64, rng: &mut RngStream) -> Self {
        assert!(d > 0, "task-change dimension must be positive");
        assert!(
            (0.0..1.0).contains(&epsilon),
            "conforming sample needs epsilon in [0, 1), got {epsilon}"
        );
        let q = random_orthogonal(d, rng);
        let lo = 1.0 / (1.0 + epsilon);
        let hi = 1.0 + epsilon;
        let sigma: Vec<f64> = (0..d).map(|_| rng.uniform_in(lo, hi)).collect();
        // W = Q·diag(σ)·Qᵀ assembled directly: W_ij = Σ_k σ_k q_ik q_jk.
        let w = Matrix::from_fn(d, d, |i, j| {
            let mut acc = 0.0;
            for (k, &s) in sigma.iter().enumerate() {
                acc = (s * q.get(i, k)).mul_add(q.get(j, k), acc);
            }
            acc
        });
        Self::from_matrix(w).expect("conforming sample is full-rank by construction")
    }

    /// The change matrix `W`.
    pub fn matrix(&self) -> &Matrix {
        &self.w
    }

    /// Measured deviation `ε = max_i max(σ_i − 1, 1/σ_i − 1)`.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// A Haar-ish random orthogonal matrix via Gram–Schmidt on Gaussian columns.
fn random_orthogonal(d: usize, rng: &mut RngStream) -> Matrix {
    let mut q = Matrix::zeros(d, d);
    let mut col = vec![0.0f64; d];
    for j in 0..d {
        loop {
            for c in col.iter_mut() {
                *c = rng.normal();
            }
            // Remove components along the already-fixed columns.
            for prev in 0..j {
                let mut proj = 0.0;
                for (i, &ci) in col.iter().enumerate() {
                    proj = q.get(i, prev).mul_add(ci, proj);
                }
                for (i, c) in col.iter_mut().enumerate() {
                    *c -= proj * q.get(i, prev);
                }
            }
            let n = norm2(&col);
            if n > 1e-8 {
                for (i, c) in col.iter().enumerate() {
                    q.set(i, j, c / n);
                }
                break;
            }
            // Degenerate draw (astronomically rare): redraw this column.
        }
    }
    q
}

// ─── Composition: g(x) = f(Wx) ───────────────────────────────────────────

/// The transformed loss `g(x) = f(Wx)` as an explicit quadratic:
/// curvature `A_g = WᵀAW`, minimizer `x*_g = W⁻¹x*` (the point where
/// `Wx = x*`), and shrunk basin radius `r_g = r(1−ε)`.
pub fn compose(f: &QuadraticLoss, w: &LinearReparam) -> Result<QuadraticLoss> {
    let wt_a = matmul(&w.w.transpose(), &f.a)?;
    let mut a_g = matmul(&wt_a, &w.w)?;
    // WᵀAW is symmetric in exact arithmetic; average away round-off so
    // repeated composition cannot drift past the symmetry tolerance.
    for i in 0..a_g.rows() {
        for j in (i + 1)..a_g.cols() {
            let avg = 0.5 * (a_g.get(i, j) + a_g.get(j, i));
            a_g.set(i, j, avg);
            a_g.set(j, i, avg);
        }
    }
    let x_g = solve(&w.w, &f.x_star)?;
    let r_g = f.r * (1.0 - w.epsilon);
    QuadraticLoss::new(a_g, x_g, r_g)
}

// ─── Verification reports ────────────────────────────────────────────────

/// Matrices attached to a failing spectrum report for reproduction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterexampleMatrices {
    /// Rows of the original curvature matrix.
    pub a: Vec<Vec<f64>>,
    /// Rows of the task-change matrix.
    pub w: Vec<Vec<f64>>,
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Outcome of checking that a conforming change keeps curvature bounded:
/// `β_g ≤ β(1+ε)²` and `μ_g ≥ μ/(1+ε)²`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Smoothness constant of the original loss.
    pub beta: f64,
    /// Strong-convexity constant of the original loss.
    pub mu: f64,
    /// Measured smoothness constant of the transformed loss.
    pub beta_g: f64,
    /// Measured strong-convexity constant of the transformed loss.
    pub mu_g: f64,
    /// Measured deviation of the change matrix.
    pub epsilon: f64,
    /// The smoothness bound `β(1+ε)²`.
    pub beta_bound: f64,
    /// The strong-convexity bound `μ/(1+ε)²`.
    pub mu_bound: f64,
    /// `beta_bound − beta_g` (≥ −1e−9 when passing).
    pub beta_slack: f64,
    /// `mu_g − mu_bound` (≥ −1e−9 when passing).
    pub mu_slack: f64,
    /// Both bounds held within the 1e−9 allowance.
    pub passed: bool,
    /// The offending matrices, attached only on failure.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexampleMatrices>,
}

/// Checks that composing with `w` keeps the curvature of the transformed
/// loss inside the predicted envelope: `β_g ≤ β(1+ε)² + 1e−9` and
/// `μ_g ≥ μ/(1+ε)² − 1e−9`.
pub fn verify_spectrum_bounds(f: &QuadraticLoss, w: &LinearReparam) -> Result<SpectrumReport> {
    let g = compose(f, w)?;
    let (beta_g, mu_g) = g.constants();
    let e = w.epsilon;
    let beta_bound = f.beta * (1.0 + e) * (1.0 + e);
    let mu_bound = f.mu / ((1.0 + e) * (1.0 + e));
    let beta_slack = beta_bound - beta_g;
    let mu_slack = mu_g - mu_bound;
    let passed = beta_slack >= -1e-9 && mu_slack >= -1e-9;
    Ok(SpectrumReport {
        beta: f.beta,
        mu: f.mu,
        beta_g,
        mu_g,
        epsilon: e,
        beta_bound,
        mu_bound,
        beta_slack,
        mu_slack,
        passed,
        counterexample: if passed {
            None
        } else {
            Some(CounterexampleMatrices {
                a: matrix_rows(&f.a),
                w: matrix_rows(&w.w),
            })
        },
    })
}

/// Outcome of checking that the shrunk ball maps into the original basin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasinReport {
    /// Points tested (interior and boundary combined).
    pub samples: usize,
    /// Points `x` with `‖x − x*_g‖ ≤ r(1−ε)` whose image `Wx` left the
    /// original basin.
    pub violations: usize,
    /// Smallest observed slack `r − ‖Wx − x*‖` (≥ −1e−12·scale when passing).
    pub worst_slack: f64,
    /// No violations observed.
    pub passed: bool,
}

/// Samples points in the shrunk ball `‖x − x*_g‖ ≤ r(1−ε)` (every tenth
/// point exactly on the boundary) and checks that each image `Wx` stays
/// inside the original basin `‖Wx − x*‖ ≤ r`.
pub fn verify_basin_mapping(
    f: &QuadraticLoss,
    w: &LinearReparam,
    samples: usize,
    rng: &mut RngStream,
) -> Result<BasinReport> {
    let g = compose(f, w)?;
    let d = f.dim();
    let r_inner = g.radius();
    let tol = 1e-12 * f.r.max(1.0);
    let mut violations = 0usize;
    let mut worst_slack = f64::INFINITY;
    let mut x = vec![0.0f64; d];
    for s in 0..samples {
        // Uniform direction; boundary sample every tenth point, otherwise a
        // radius that makes the draw uniform over the ball's volume.
        for xi in x.iter_mut() {
            *xi = rng.normal();
        }
        let n = norm2(&x).max(1e-300);
        let radius = if s % 10 == 0 {
            r_inner
        } else {
            r_inner * rng.uniform().powf(1.0 / d as f64)
        };
        for (xi, ci) in x.iter_mut().zip(g.minimizer()) {
            *xi = ci + *xi / n * radius;
        }
        let wx = matvec(&w.w, &x)?;
        let slack = f.r - norm2(&vsub(&wx, &f.x_star));
        worst_slack = worst_slack.min(slack);
        if slack < -tol {
            violations += 1;
        }
    }
    Ok(BasinReport {
        samples,
        violations,
        worst_slack,
        passed: violations == 0,
    })
}

/// Outcome of the sampler self-check: singular-value bounds and the
/// inverse-gap bound `‖I − W⁻¹‖₂ ≤ ε` on freshly sampled changes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerReport {
    /// Number of sampled change matrices.
    pub samples: usize,
    /// Requested deviation bound.
    pub epsilon: f64,
    /// Samples with a singular value outside `[1/(1+ε), 1+ε]`.
    pub sigma_violations: usize,
    /// Samples with `‖I − W⁻¹‖₂ > ε`.
    pub inverse_gap_violations: usize,
    /// Largest observed `‖I − W⁻¹‖₂` across samples.
    pub worst_inverse_gap: f64,
    /// No violations observed.
    pub passed: bool,
}

/// Samples `samples` conforming changes of dimension `d` at deviation
/// `epsilon` and checks, via an independent singular-value decomposition,
/// that every singular value lands in `[1/(1+ε), 1+ε]` and that
/// `‖I − W⁻¹‖₂ ≤ ε` (both with a 1e−9 allowance).
pub fn verify_conforming_sampler(
    d: usize,
    epsilon: f64,
    samples: usize,
    rng: &mut RngStream,
) -> Result<SamplerReport> {
    let lo = 1.0 / (1.0 + epsilon);
    let hi = 1.0 + epsilon;
    let tol = 1e-9;
    let mut sigma_violations = 0usize;
    let mut inverse_gap_violations = 0usize;
    let mut worst_inverse_gap = 0.0f64;
    let eye = Matrix::eye(d);
    for _ in 0..samples {
        let w = LinearReparam::sample_conforming(d, epsilon, rng);
        let svs = singular_values(w.matrix())?;
        if svs.iter().any(|&s| s < lo - tol || s > hi + tol) {
            sigma_violations += 1;
        }
        // Build I − W⁻¹ column by column and take its largest singular value.
        let mut gap = Matrix::zeros(d, d);
        for j in 0..d {
            let e_j: Vec<f64> = (0..d).map(|i| f64::from(u8::from(i == j))).collect();
            let w_inv_col = solve(w.matrix(), &e_j)?;
            for (i, &v) in w_inv_col.iter().enumerate() {
                gap.set(i, j, eye.get(i, j) - v);
            }
        }
        let gap_svs = singular_values(&gap)?;
        let gap_norm = gap_svs.iter().cloned().fold(0.0f64, f64::max);
        worst_inverse_gap = worst_inverse_gap.max(gap_norm);
        if gap_norm > epsilon + tol {
            inverse_gap_violations += 1;
        }
    }
    Ok(SamplerReport {
        samples,
        epsilon,
        sigma_violations,
        inverse_gap_violations,
        worst_inverse_gap,
        passed: sigma_violations == 0 && inverse_gap_violations == 0,
    })
}

/// Outcome of checking that a point near the old minimizer converges to the
/// new minimizer after one conforming task change.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftReport {
    /// Measured deviation of the supplied change matrix.
    pub epsilon: f64,
    /// The largest deviation the hypotheses allow:
    /// `(r − c)/(r − c + ‖x*‖)`.
    pub epsilon_required: f64,
    /// Observed minimizer shift `‖x* − x*_g‖`.
    pub shift: f64,
    /// The shift bound `ε·‖x*‖`.
    pub shift_bound: f64,
    /// Distance from the starting point to the new minimizer.
    pub start_dist: f64,
    /// The start must lie within `r(1−ε)` of the new minimizer.
    pub start_bound: f64,
    /// Gradient-descent updates taken.
    pub steps: usize,
    /// Final distance to the new minimizer.
    pub final_dist: f64,
    /// The run reached the convergence tolerance.
    pub converged: bool,
    /// Descent inequality held at every step.
    pub descent_ok: bool,
    /// Contraction bound held at every step.
    pub contraction_ok: bool,
    /// Every iterate stayed inside the new basin.
    pub basin_ok: bool,
    /// All bounds and the convergence target held.
    pub passed: bool,
}

/// Verifies minimizer tracking across one conforming change: given
/// `0 < c < r`, a change with `ε ≤ (r−c)/(r−c+‖x*‖)`, and a start within
/// `c(1−ε)` of the old minimizer, the start provably lies within `r(1−ε)`
/// of the new minimizer and gradient descent with the basin-safe step rule
/// converges to it (final distance < `tol` within `max_steps`).
pub fn verify_shift_tracking(
    f: &QuadraticLoss,
    w: &LinearReparam,
    c: f64,
    x_current: &[f64],
    max_steps: usize,
    tol: f64,
) -> Result<ShiftReport> {
    if !(c.is_finite() && c > 0.0 && c < f.r) {
        return Err(CoreError::InvalidArgument(format!(
            "shift tracking: need 0 < c < r, got c = {c} with r = {}",
            f.r
        )));
    }
    let eps_required = (f.r - c) / (f.r - c + norm2(&f.x_star));
    if w.epsilon > eps_required + 1e-12 {
        return Err(CoreError::InvalidArgument(format!(
            "shift tracking: change deviation {:.6e} exceeds the allowed {:.6e}",
            w.epsilon, eps_required
        )));
    }
    let start_gap = norm2(&vsub(x_current, &f.x_star));
    let gap_bound = c * (1.0 - eps_required);
    if start_gap > gap_bound + 1e-12 {
        return Err(CoreError::OutsideBasin {
            dist: start_gap,
            radius: gap_bound,
        });
    }

    let g = compose(f, w)?;
    let shift = norm2(&vsub(g.minimizer(), &f.x_star));
    let shift_bound = eps_required * norm2(&f.x_star);
    let start_dist = norm2(&vsub(x_current, g.minimizer()));
    let start_bound = f.r * (1.0 - eps_required);
    let shift_ok = shift <= shift_bound + 1e-12;
    let chain_ok = start_dist <= start_bound + 1e-12;

    let mut report = ShiftReport {
        epsilon: w.epsilon,
        epsilon_required: eps_required,
        shift,
        shift_bound,
        start_dist,
        start_bound,
        steps: 0,
        final_dist: start_dist,
        converged: false,
        descent_ok: true,
        contraction_ok: true,
        basin_ok: true,
        passed: false,
    };
    if !chain_ok || start_dist >= g.radius() {
        // The guaranteed inclusion failed; nothing to run.
        return Ok(report);
    }
    match run_gd(&g, x_current, max_steps, StepRule::BasinSafe, tol) {
        Ok(traj) => {
            report.steps = traj.steps.len();
            report.final_dist = traj.final_dist;
            report.converged = traj.converged;
            report.descent_ok = traj.descent_ok;
            report.contraction_ok = traj.contraction_ok;
            report.basin_ok = traj.all_in_basin();
            report.passed = shift_ok
                && chain_ok
                && report.converged
                && report.descent_ok
                && report.contraction_ok
                && report.basin_ok;
        }
        Err(GdError::Diverged {
            step,
            dist,
            ..
        }) => {
            report.steps = step;
            report.final_dist = dist;
        }
        Err(GdError::Core(e)) => return Err(e),
    }
    Ok(report)
}

// ─── Long task sequences ─────────────────────────────────────────────────

/// Options for a chained task-change run.
#[derive(Debug, Clone)]
pub struct SequenceOptions {
    /// Number of task changes.
    pub tasks: usize,
    /// The tracking margin `c ∈ (0, r)`; each change draws
    /// `ε_t = (r_t − c)/(r_t − c + ‖x*_t‖)` from the current landscape.
    pub c: f64,
    /// Gradient-descent budget per task.
    pub steps_per_task: usize,
    /// Per-task convergence tolerance on the distance to the new minimizer.
    pub tol: f64,
    /// Override the deviation of every sampled change (negative control:
    /// an oversized change must be flagged, not asserted convergent).
    pub epsilon_override: Option<f64>,
}

/// One task change in a chained run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskReport {
    /// 1-based task index.
    pub task: usize,
    /// Measured deviation of the sampled change.
    pub epsilon: f64,
    /// Largest deviation the hypotheses allow at this task.
    pub epsilon_required: f64,
    /// Basin radius of the transformed loss.
    pub radius: f64,
    /// Smoothness constant of the transformed loss.
    pub beta: f64,
    /// Strong-convexity constant of the transformed loss.
    pub mu: f64,
    /// Norm of the new minimizer.
    pub x_star_norm: f64,
    /// Observed minimizer shift `‖x*_{t−1} − x*_t‖`.
    pub shift: f64,
    /// The hypothesis shift bound `ε_required·‖x*_{t−1}‖`.
    pub shift_bound: f64,
    /// Distance from the current parameters to the new minimizer.
    pub start_dist: f64,
    /// The hypothesis start bound `r_{t−1}(1−ε_required)`.
    pub start_bound: f64,
    /// Gradient-descent updates taken on this task.
    pub steps: usize,
    /// Final distance to the new minimizer.
    pub final_dist: f64,
    /// The change and start satisfied the tracking hypotheses.
    pub hypothesis_ok: bool,
    /// Descent inequality held at every step.
    pub descent_ok: bool,
    /// Contraction bound held at every step.
    pub contraction_ok: bool,
    /// Every iterate stayed inside the basin.
    pub basin_ok: bool,
    /// The run reached the convergence tolerance.
    pub converged: bool,
    /// Hypotheses held and the run converged with clean flags.
    pub passed: bool,
    /// Rows of the change matrix, attached only when the task failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_rows: Option<Vec<Vec<f64>>>,
    /// Final parameter vector, attached only when the task failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_iterate: Option<Vec<f64>>,
}

/// Runs a chain of conforming task changes from the minimizer of `f0`.
///
/// Each task samples a change at the largest hypothesis-allowed deviation
/// `ε_t = (r_t − c)/(r_t − c + ‖x*_t‖)` (unless overridden), composes the
/// new landscape, and resumes gradient descent from the previous converged
/// point under the basin-safe step rule.  Failures are reported per task —
/// with the change matrix and last iterate attached — rather than raised,
/// so a deliberate negative control (an oversized override) surfaces as
/// `hypothesis_ok = false` instead of a panic or a false convergence claim.
pub fn run_task_sequence(
    f0: &QuadraticLoss,
    opts: &SequenceOptions,
    rng: &mut RngStream,
) -> Result<Vec<TaskReport>> {
    if !(opts.c.is_finite() && opts.c > 0.0 && opts.c < f0.r) {
        return Err(CoreError::InvalidArgument(format!(
            "task sequence: need 0 < c < r, got c = {} with r = {}",
            opts.c, f0.r
        )));
    }
    if let Some(e) = opts.epsilon_override {
        if !(0.0..1.0).contains(&e) {
            return Err(CoreError::InvalidArgument(format!(
                "task sequence: deviation override must lie in [0, 1), got {e}"
            )));
        }
    }
    let mut f = f0.clone();
    let mut x = f.x_star.clone();
    let mut reports = Vec::with_capacity(opts.tasks);
    for t in 1..=opts.tasks {
        let x_star_norm_prev = norm2(&f.x_star);
        // With a fixed margin c the radius contracts toward c but never
        // crosses it (the drawn deviation shrinks as r_t → c), so this can
        // only fire if the caller's c was invalid for an override-shrunk
        // landscape.
        if opts.c >= f.r {
            return Err(CoreError::InvalidArgument(format!(
                "task sequence: margin c = {} no longer fits inside radius {} at task {t}",
                opts.c, f.r
            )));
        }
        let eps_required = (f.r - opts.c) / (f.r - opts.c + x_star_norm_prev);
        let eps_draw = opts.epsilon_override.unwrap_or(eps_required);
        let w = LinearReparam::sample_conforming(f.dim(), eps_draw, rng);
        let g = compose(&f, &w)?;
        let shift = norm2(&vsub(g.minimizer(), &f.x_star));
        let shift_bound = eps_required * x_star_norm_prev;
        let start_dist = norm2(&vsub(&x, g.minimizer()));
        let start_bound = f.r * (1.0 - eps_required);
        let hypothesis_ok = w.epsilon() <= eps_required + 1e-12
            && shift <= shift_bound + 1e-12
            && start_dist <= start_bound + 1e-12
            && start_dist < g.radius();

        let (beta_g, mu_g) = g.constants();
        let mut report = TaskReport {
            task: t,
            epsilon: w.epsilon(),
            epsilon_required: eps_required,
            radius: g.radius(),
            beta: beta_g,
            mu: mu_g,
            x_star_norm: norm2(g.minimizer()),
            shift,
            shift_bound,
            start_dist,
            start_bound,
            steps: 0,
            final_dist: start_dist,
            hypothesis_ok,
            descent_ok: true,
            contraction_ok: true,
            basin_ok: true,
            converged: false,
            passed: false,
            w_rows: None,
            last_iterate: None,
        };
        if start_dist < g.radius() {
            match run_gd(&g, &x, opts.steps_per_task, StepRule::BasinSafe, opts.tol) {
                Ok(traj) => {
                    report.steps = traj.steps.len();
                    report.final_dist = traj.final_dist;
                    report.converged = traj.converged;
                    report.descent_ok = traj.descent_ok;
                    report.contraction_ok = traj.contraction_ok;
                    report.basin_ok = traj.all_in_basin();
                    x = traj.iterates.last().expect("trajectory is non-empty").clone();
                }
                Err(GdError::Diverged {
                    step,
                    dist,
                    trajectory,
                    ..
                }) => {
                    report.steps = step;
                    report.final_dist = dist;
                    x = trajectory
                        .iterates
                        .last()
                        .expect("trajectory is non-empty")
                        .clone();
                }
                Err(GdError::Core(e)) => return Err(e),
            }
        }
        report.passed = report.hypothesis_ok
            && report.converged
            && report.descent_ok
            && report.contraction_ok
            && report.basin_ok;
        if !report.passed {
            report.w_rows = Some(matrix_rows(w.matrix()));
            report.last_iterate = Some(x.clone());
        }
        reports.push(report);
        f = g;
    }
    Ok(reports)
}

// ─── Full suite ──────────────────────────────────────────────────────────

/// Outcome of sampling the smoothness and strong-convexity inequalities on
/// random point pairs of a random bowl.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsReport {
    /// Point pairs tested.
    pub pairs: usize,
    /// Pairs violating `‖∇f(x) − ∇f(y)‖ ≤ β‖x − y‖`.
    pub smooth_violations: usize,
    /// Pairs violating
    /// `f(x) ≥ f(y) + ⟨∇f(y), x−y⟩ + (μ/2)‖x−y‖²`.
    pub convex_violations: usize,
    /// No violations observed.
    pub passed: bool,
}

/// Samples `pairs` random point pairs and checks the defining inequalities
/// of the cached constants `(β, μ)` directly (1e−9 relative allowance).
pub fn verify_constants(
    f: &QuadraticLoss,
    pairs: usize,
    rng: &mut RngStream,
) -> Result<ConstantsReport> {
    let d = f.dim();
    let (beta, mu) = f.constants();
    let mut smooth_violations = 0usize;
    let mut convex_violations = 0usize;
    for _ in 0..pairs {
        let x: Vec<f64> = (0..d).map(|_| f.x_star[0] + 3.0 * rng.normal()).collect();
        let y: Vec<f64> = (0..d).map(|_| f.x_star[0] + 3.0 * rng.normal()).collect();
        let gx = f.grad(&x)?;
        let gy = f.grad(&y)?;
        let dxy = norm2(&vsub(&x, &y));
        let dg = norm2(&vsub(&gx, &gy));
        if dg > beta * dxy * (1.0 + 1e-9) + 1e-12 {
            smooth_violations += 1;
        }
        let lhs = f.loss(&x)?;
        let rhs = f.loss(&y)? + dot(&gy, &vsub(&x, &y)) + 0.5 * mu * dxy * dxy;
        let scale = 1.0f64.max(lhs.abs()).max(rhs.abs());
        if lhs < rhs - 1e-9 * scale {
            convex_violations += 1;
        }
    }
    Ok(ConstantsReport {
        pairs,
        smooth_violations,
        convex_violations,
        passed: smooth_violations == 0 && convex_violations == 0,
    })
}

/// Results of every check in the module, run on pinned settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    /// Seed the suite was run with.
    pub seed: u64,
    /// Direct inequality sampling of `(β, μ)` on a random bowl.
    pub constants: ConstantsReport,
    /// Curvature-envelope checks on 100 random (bowl, change) instances.
    pub spectrum: Vec<SpectrumReport>,
    /// Shrunk-ball mapping check (10 000 samples).
    pub basin: BasinReport,
    /// Sampler self-check (1 000 samples).
    pub sampler: SamplerReport,
    /// Single-change minimizer tracking on the pinned example.
    pub shift: ShiftReport,
    /// Twenty chained task changes.
    pub sequence: Vec<TaskReport>,
    /// Oversized-change negative control (must be flagged, not convergent).
    pub control: TaskReport,
    /// Every section passed and the control was flagged.
    pub passed: bool,
}

/// Pinned example bowl: curvature `diag(1, 4)`, minimizer `(1, 0)`, radius 1.
fn example_bowl() -> QuadraticLoss {
    let a = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 4.0]).expect("square data");
    QuadraticLoss::new(a, vec![1.0, 0.0], 1.0).expect("valid example bowl")
}

/// Random bowl of dimension `d` with eigenvalues uniform in `[0.5, 5]`.
fn random_bowl(d: usize, rng: &mut RngStream) -> QuadraticLoss {
    let q = random_orthogonal(d, rng);
    let lambda: Vec<f64> = (0..d).map(|_| rng.uniform_in(0.5, 5.0)).collect();
    let a = Matrix::from_fn(d, d, |i, j| {
        let mut acc = 0.0;
        for (k, &l) in lambda.iter().enumerate() {
            acc = (l * q.get(i, k)).mul_add(q.get(j, k), acc);
        }
        acc
    });
    let x_star: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    QuadraticLoss::new(a, x_star, 1.0).expect("constructed curvature is positive-definite")
}

/// Runs every check in this module on pinned settings and collects the
/// reports.  `passed` is true only if all positive checks hold to their
/// tolerances and the oversized-change negative control is flagged as a
/// hypothesis violation.
pub fn full_suite(seed: u64) -> Result<SuiteReport> {
    // Constants: direct inequality sampling on a random 5-dimensional bowl.
    let mut rng = RngStream::new(seed, 900);
    let f5 = random_bowl(5, &mut rng);
    let constants = verify_constants(&f5, 1000, &mut rng)?;

    // Curvature envelope on 100 random instances of varying dimension.
    let mut spectrum = Vec::with_capacity(100);
    for i in 0..100u64 {
        let mut srng = RngStream::new(seed, 1000 + i);
        let d = 2 + (i % 5) as usize;
        let f = random_bowl(d, &mut srng);
        let eps = srng.uniform_in(0.01, 0.5);
        let w = LinearReparam::sample_conforming(d, eps, &mut srng);
        spectrum.push(verify_spectrum_bounds(&f, &w)?);
    }
    let spectrum_passed = spectrum.iter().all(|r| r.passed);

    // Shrunk-ball mapping on the pinned bowl with a mid-sized change.
    let mut rng = RngStream::new(seed, 2000);
    let f = example_bowl();
    let w = LinearReparam::sample_conforming(2, 0.25, &mut rng);
    let basin = verify_basin_mapping(&f, &w, 10_000, &mut rng)?;

    // Sampler self-check.
    let mut rng = RngStream::new(seed, 3000);
    let sampler = verify_conforming_sampler(4, 0.3, 1000, &mut rng)?;

    // Minimizer tracking on the pinned example: c = r/2 gives the largest
    // allowed deviation (1 − 0.5)/(1 − 0.5 + 1) = 1/3.
    let mut rng = RngStream::new(seed, 4000);
    let w = LinearReparam::sample_conforming(2, 1.0 / 3.0, &mut rng);
    let x_current = vec![1.0, 0.2];
    let shift = verify_shift_tracking(&f, &w, 0.5, &x_current, 10_000, 1e-8)?;

    // Twenty chained changes from a far-out minimizer.
    let a = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 4.0]).expect("square data");
    let f0 = QuadraticLoss::new(a, vec![4.0, 0.0], 1.0)?;
    let opts = SequenceOptions {
        tasks: 20,
        c: 0.5,
        steps_per_task: 20_000,
        tol: 1e-6,
        epsilon_override: None,
    };
    let mut rng = RngStream::new(seed, 5000);
    let sequence = run_task_sequence(&f0, &opts, &mut rng)?;
    let sequence_passed = sequence.iter().all(|r| r.passed);

    // Negative control: a change far beyond the allowed deviation must be
    // reported as a hypothesis violation.
    let control_opts = SequenceOptions {
        tasks: 1,
        epsilon_override: Some(0.9),
        ..opts
    };
    let mut rng = RngStream::new(seed, 6000);
    let control = run_task_sequence(&f0, &control_opts, &mut rng)?
        .pop()
        .expect("one control task");

    let passed = constants.passed
        && spectrum_passed
        && basin.passed
        && sampler.passed
        && shift.passed
        && sequence_passed
        && !control.hypothesis_ok
        && !control.passed;
    Ok(SuiteReport {
        seed,
        constants,
        spectrum,
        basin,
        sampler,
        shift,
        sequence,
        control,
        passed,
    })
}

// ─── Tests ───────────────────────────────────────────────────────────────
