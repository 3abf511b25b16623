//! Toy-scale fine-tuning of adapter cores.
//!
//! The objective is the quadratic `0.5 * ||W_eff - target||_F^2` against a
//! synthetic target. Gradients with respect to the core come from the
//! t-product adjoint, `C^T * (W_eff - target) * R^T`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adapter::{init_adapter, Adapter};
use crate::cur::{matrix_cur, tcur};
use crate::error::{Result, TcurError};
use crate::linalg::{Matrix, DEFAULT_SV_TOL};
use crate::report::{ComparisonReport, Method, ReportRecord};
use crate::tensor::{Dims, Tensor3};
use crate::tproduct::tprod;

/// How the synthetic target perturbs the base weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantMode {
    /// `C * G * R` for a random core `G`; reachable with zero loss.
    InSpan,
    /// Dense random perturbation.
    OutOfSpan,
}

impl PlantMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PlantMode::InSpan => "in_span",
            PlantMode::OutOfSpan => "out_of_span",
        }
    }
}

impl fmt::Display for PlantMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlantMode {
    type Err = TcurError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_span" | "in-span" => Ok(PlantMode::InSpan),
            "out_of_span" | "out-of-span" => Ok(PlantMode::OutOfSpan),
            other => Err(TcurError::InvalidArgument(format!("unknown plant mode {other:?}"))),
        }
    }
}

/// A random "pre-trained" tensor and the target it should be tuned towards.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub base: Tensor3,
    pub target: Tensor3,
    pub plant_mode: PlantMode,
    /// Rank whose CUR slabs span an in-span perturbation.
    pub rank: usize,
    pub seed: u64,
}

impl SyntheticTask {
    pub fn generate(dims: Dims, rank: usize, plant_mode: PlantMode, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Tensor3::random_normal(dims, &mut rng);
        let perturbation = match plant_mode {
            PlantMode::InSpan => {
                let f = tcur(&base, rank, DEFAULT_SV_TOL)?;
                let g = Tensor3::random_normal((rank, rank, dims.2), &mut rng);
                tprod(f.column_slab(), &tprod(&g, f.row_slab())?)?
            }
            PlantMode::OutOfSpan => Tensor3::random_normal(dims, &mut rng),
        };
        let target = base.add(&perturbation)?;
        Ok(Self {
            base,
            target,
            plant_mode,
            rank,
            seed,
        })
    }
}

/// `0.5 * ||w - t||_F^2`
pub fn loss_tensor_target(w: &Tensor3, t: &Tensor3) -> Result<f64> {
    let diff = w.sub(t)?;
    Ok(0.5 * diff.inner(&diff)?)
}

/// Gradient of the loss with respect to the core, given `g = dL/dW`:
/// `C^T * g * R^T`.
pub fn grad_core(a: &Adapter, g: &Tensor3) -> Result<Tensor3> {
    a.adjoint_apply(g)
}

fn core_loss(a: &Adapter, task: &SyntheticTask, u: &Tensor3) -> Result<f64> {
    let w = a.base().add(&a.delta_for(u)?)?;
    loss_tensor_target(&w, &task.target)
}

/// Central-difference gradient over every core entry, with step
/// `eps * (1 + |u|)` per entry. Costs `2 * r * r * n3` loss evaluations.
pub fn finite_diff_grad(a: &Adapter, task: &SyntheticTask, eps: f64) -> Result<Tensor3> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(TcurError::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let dims = a.core().dims();
    let mut grad = Tensor3::zeros(dims);
    let mut u = a.core().clone();
    for k in 0..dims.2 {
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                let orig = u.get(i, j, k);
                let h = eps * (1.0 + orig.abs());
                u.set(i, j, k, orig + h);
                let plus = core_loss(a, task, &u)?;
                u.set(i, j, k, orig - h);
                let minus = core_loss(a, task, &u)?;
                u.set(i, j, k, orig);
                grad.set(i, j, k, (plus - minus) / (2.0 * h));
            }
        }
    }
    Ok(grad)
}

/// Largest eigenvalue of the loss Hessian `V -> C^T * (C * V * R) * R^T`,
/// estimated by power iteration from a fixed start vector.
pub fn estimate_lipschitz(a: &Adapter, max_iters: usize, rel_tol: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = Tensor3::random_normal(a.core().dims(), &mut rng);
    v = v.scaled(1.0 / v.fro_norm());
    let mut lambda = 0.0;
    for _ in 0..max_iters {
        let hv = a.adjoint_apply(&a.delta_for(&v)?)?;
        let next = hv.fro_norm();
        if next == 0.0 {
            return Ok(0.0);
        }
        v = hv.scaled(1.0 / next);
        let converged = (next - lambda).abs() <= rel_tol * next;
        lambda = next;
        if converged {
            break;
        }
    }
    Ok(lambda)
}

/// Gradient-descent step size `1 / L`, with `L` from 20 power iterations at
/// 1e-6 relative tolerance.
pub fn safe_step_size(a: &Adapter) -> Result<f64> {
    let l = estimate_lipschitz(a, 20, 1e-6)?;
    if l <= 0.0 {
        return Err(TcurError::InvalidArgument(
            "adapter core has no effect on the weights (zero curvature)".into(),
        ));
    }
    Ok(1.0 / l)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Gd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl FromStr for Optimizer {
    type Err = TcurError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(Optimizer::Gd),
            "adam" => Ok(Optimizer::adam()),
            other => Err(TcurError::InvalidArgument(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    /// Stop once the loss falls to this fraction of the initial loss.
    pub stop_below: Option<f64>,
}

impl TrainConfig {
    pub fn gd(steps: usize, lr: f64) -> Self {
        Self {
            steps,
            lr,
            optimizer: Optimizer::Gd,
            stop_below: None,
        }
    }
}

/// State at the start of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub initial_loss: f64,
    /// Loss after the last update.
    pub final_loss: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// Losses before every step followed by the final loss.
    pub fn loss_curve(&self) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| s.loss)
            .chain(std::iter::once(self.final_loss))
            .collect()
    }

    pub fn is_monotone_non_increasing(&self) -> bool {
        self.loss_curve().windows(2).all(|w| w[1] <= w[0])
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Runs `cfg.steps` optimizer updates on the adapter core. Only the core is
/// modified.
pub fn train(a: &mut Adapter, task: &SyntheticTask, cfg: &TrainConfig) -> Result<TrainHistory> {
    if cfg.steps == 0 {
        return Err(TcurError::InvalidArgument("steps must be at least 1".into()));
    }
    if !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
        return Err(TcurError::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {}",
            cfg.lr
        )));
    }
    a.base().require_same_dims(&task.target)?;

    let mut adam = AdamState {
        m: vec![0.0; a.core().len()],
        v: vec![0.0; a.core().len()],
        t: 0,
    };
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut residual = a.effective_weights().sub(&task.target)?;
    let initial_loss = 0.5 * residual.inner(&residual)?;
    let mut loss = initial_loss;
    let mut stopped_early = false;

    for step in 0..cfg.steps {
        if let Some(frac) = cfg.stop_below {
            if loss <= frac * initial_loss {
                stopped_early = true;
                break;
            }
        }
        let grad = grad_core(a, &residual)?;
        let grad_norm = grad.fro_norm();
        steps.push(StepRecord {
            loss,
            grad_norm,
            lr: cfg.lr,
        });
        match cfg.optimizer {
            Optimizer::Gd => a.core_mut().axpy(-cfg.lr, &grad)?,
            Optimizer::Adam { beta1, beta2, eps } => {
                adam.t += 1;
                let bc1 = 1.0 - beta1.powi(adam.t);
                let bc2 = 1.0 - beta2.powi(adam.t);
                let core = a.core_mut();
                let mut updated = core.data().to_vec();
                for (idx, g) in grad.data().iter().enumerate() {
                    adam.m[idx] = beta1 * adam.m[idx] + (1.0 - beta1) * g;
                    adam.v[idx] = beta2 * adam.v[idx] + (1.0 - beta2) * g * g;
                    let m_hat = adam.m[idx] / bc1;
                    let v_hat = adam.v[idx] / bc2;
                    updated[idx] -= cfg.lr * m_hat / (v_hat.sqrt() + eps);
                }
                *core = Tensor3::from_vec(core.dims(), updated)
                    .map_err(|_| TcurError::DivergenceDetected { step, loss: f64::NAN, initial: initial_loss })?;
            }
        }
        residual = a.effective_weights().sub(&task.target)?;
        loss = 0.5 * residual.inner(&residual)?;
        if !loss.is_finite() || (loss > 1e6 * initial_loss && loss > 0.0) {
            return Err(TcurError::DivergenceDetected {
                step,
                loss,
                initial: initial_loss,
            });
        }
    }
    Ok(TrainHistory {
        steps,
        initial_loss,
        final_loss: loss,
        stopped_early,
    })
}

/// Fits `task` with the unconstrained update, per-slice matrix CUR adapters
/// and a tensor CUR adapter, and reports loss, parameter count and time.
///
/// The full update and the matrix baseline are solved in closed form
/// (`U_k = pinv(C_k) D_k pinv(R_k)` per slice); the tensor adapter is
/// trained by gradient descent at the power-iteration step size.
pub fn run_baselines(task: &SyntheticTask, r: usize, steps: usize) -> Result<ComparisonReport> {
    let dims = task.base.dims();
    let (n1, n2, n3) = dims;
    let target_norm = task.target.fro_norm();
    let rel = |w: &Tensor3| -> Result<f64> {
        let d = w.sub(&task.target)?.fro_norm();
        Ok(if target_norm > 0.0 { d / target_norm } else { d })
    };
    let record = |method, params, w: &Tensor3, wall_ms| -> Result<ReportRecord> {
        Ok(ReportRecord {
            method,
            params,
            final_loss: loss_tensor_target(w, &task.target)?,
            rel_error: rel(w)?,
            wall_ms,
            rank: r,
            n1,
            n2,
            n3,
        })
    };
    let mut records = Vec::with_capacity(3);

    // Free parameters reproduce the target exactly.
    let t0 = Instant::now();
    let full = task.target.clone();
    records.push(record(Method::Full, n1 * n2 * n3, &full, ms(t0))?);

    let t0 = Instant::now();
    let desired = task.target.sub(&task.base)?;
    let mut fitted = task.base.clone();
    for k in 0..n3 {
        let mc = matrix_cur(&Matrix::from_slice(&task.base, k), r, DEFAULT_SV_TOL)?;
        let d_k = Matrix::from_slice(&desired, k);
        let u = mc
            .c
            .pinv(DEFAULT_SV_TOL)
            .matmul(&d_k)?
            .matmul(&mc.r.pinv(DEFAULT_SV_TOL))?;
        let delta = mc.c.matmul(&u)?.matmul(&mc.r)?;
        for (w, dv) in fitted.slice_mut(k).iter_mut().zip(delta.data()) {
            *w += dv;
        }
    }
    records.push(record(Method::MatrixCur, n3 * r * r, &fitted, ms(t0))?);

    let t0 = Instant::now();
    let mut adapter = init_adapter(&task.base, r)?;
    let lr = safe_step_size(&adapter)?;
    let cfg = TrainConfig {
        steps,
        lr,
        optimizer: Optimizer::Gd,
        stop_below: Some(1e-20),
    };
    let history = train(&mut adapter, task, &cfg)?;
    records.push(record(
        Method::Tcur,
        adapter.learnable_params(),
        &adapter.effective_weights(),
        ms(t0),
    )?);

    Ok(ComparisonReport {
        seed: task.seed,
        plant_mode: task.plant_mode.to_string(),
        steps_run: history.steps.len(),
        records,
    })
}

fn ms(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1e3
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ttranspose;

    fn random_adapter(dims: Dims, r: usize, seed: u64) -> (Adapter, SyntheticTask) {
        let task = SyntheticTask::generate(dims, r, PlantMode::OutOfSpan, seed).unwrap();
        let mut a = init_adapter(&task.base, r).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        a.set_core(Tensor3::random_normal((r, r, dims.2), &mut rng)).unwrap();
        (a, task)
    }

    #[test]
    fn loss_values() {
        let t = Tensor3::zeros((2, 2, 2));
        assert_eq!(loss_tensor_target(&t, &t).unwrap(), 0.0);
        let ones = Tensor3::from_vec((2, 2, 2), vec![1.0; 8]).unwrap();
        assert_eq!(loss_tensor_target(&ones, &t).unwrap(), 4.0);
        assert!(loss_tensor_target(&ones, &Tensor3::zeros((2, 2, 1))).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let (a, _) = random_adapter((4, 5, 3), 2, 1);
        assert!(grad_core(&a, &Tensor3::zeros((4, 5, 3))).unwrap().is_zero());
    }

    #[test]
    fn gradient_is_the_literal_transpose_formula() {
        let (a, task) = random_adapter((5, 4, 3), 2, 2);
        let g = a.effective_weights().sub(&task.target).unwrap();
        let lit = tprod(
            &ttranspose(a.column_slab()),
            &tprod(&g, &ttranspose(a.row_slab())).unwrap(),
        )
        .unwrap();
        let fast = grad_core(&a, &g).unwrap();
        assert!(crate::tensor::rel_error(&fast, &lit).unwrap() < 1e-12);
    }

    #[test]
    fn adjoint_inner_product_identity() {
        let (a, _) = random_adapter((6, 5, 4), 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let g = Tensor3::random_normal((6, 5, 4), &mut rng);
        let v = Tensor3::random_normal((3, 3, 4), &mut rng);
        let lhs = grad_core(&a, &g).unwrap().inner(&v).unwrap();
        let rhs = g.inner(&a.delta_for(&v).unwrap()).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn finite_differences_agree() {
        let (a, task) = random_adapter((5, 6, 3), 2, 4);
        let g = grad_core(&a, &a.effective_weights().sub(&task.target).unwrap()).unwrap();
        let fd = finite_diff_grad(&a, &task, 1e-5).unwrap();
        let err = g.sub(&fd).unwrap().max_abs() / g.max_abs();
        assert!(err <= 1e-6, "relative discrepancy {err}");
        assert!(finite_diff_grad(&a, &task, 0.0).is_err());
    }

    #[test]
    fn step_validation() {
        let task = SyntheticTask::generate((4, 4, 2), 2, PlantMode::InSpan, 5).unwrap();
        let mut a = init_adapter(&task.base, 2).unwrap();
        assert!(train(&mut a, &task, &TrainConfig::gd(0, 0.1)).is_err());
        assert!(train(&mut a, &task, &TrainConfig::gd(1, -0.1)).is_err());
        let h = train(&mut a, &task, &TrainConfig::gd(1, 0.0)).unwrap();
        assert_eq!(h.steps.len(), 1);
        assert_eq!(h.final_loss, h.initial_loss);
    }

    #[test]
    fn in_span_converges_monotonically() {
        let task = SyntheticTask::generate((8, 7, 4), 2, PlantMode::InSpan, 6).unwrap();
        let mut a = init_adapter(&task.base, 2).unwrap();
        let (c0, r0, b0) = (a.column_slab().clone(), a.row_slab().clone(), a.base().clone());
        let lr = safe_step_size(&a).unwrap();
        // Stop well above the rounding floor (~1e-30 relative), where the loss
        // only jitters and monotonicity is meaningless.
        let cfg = TrainConfig {
            stop_below: Some(1e-12),
            ..TrainConfig::gd(5000, lr)
        };
        let h = train(&mut a, &task, &cfg).unwrap();
        assert!(h.stopped_early);
        assert!(h.final_loss <= 1e-8 * h.initial_loss, "{} vs {}", h.final_loss, h.initial_loss);
        assert!(h.is_monotone_non_increasing());
        assert_eq!(a.column_slab().data(), c0.data());
        assert_eq!(a.row_slab().data(), r0.data());
        assert_eq!(a.base().data(), b0.data());
    }

    #[test]
    fn adam_reduces_loss() {
        let task = SyntheticTask::generate((6, 6, 3), 2, PlantMode::InSpan, 7).unwrap();
        let mut a = init_adapter(&task.base, 2).unwrap();
        let cfg = TrainConfig {
            steps: 300,
            lr: 0.05,
            optimizer: Optimizer::adam(),
            stop_below: None,
        };
        let h = train(&mut a, &task, &cfg).unwrap();
        assert!(h.final_loss < 0.1 * h.initial_loss);
    }

    #[test]
    fn divergence_is_detected() {
        let task = SyntheticTask::generate((5, 5, 2), 2, PlantMode::InSpan, 8).unwrap();
        let mut a = init_adapter(&task.base, 2).unwrap();
        let lr = 10.0 * safe_step_size(&a).unwrap();
        assert!(matches!(
            train(&mut a, &task, &TrainConfig::gd(500, lr)),
            Err(TcurError::DivergenceDetected { .. })
        ));
    }

    #[test]
    fn baselines() {
        let task = SyntheticTask::generate((8, 8, 4), 2, PlantMode::InSpan, 9).unwrap();
        let rep = run_baselines(&task, 2, 5000).unwrap();
        let full = rep.record(Method::Full).unwrap();
        assert_eq!(full.final_loss, 0.0);
        assert_eq!(full.params, 8 * 8 * 4);
        let t = rep.record(Method::Tcur).unwrap();
        assert!(t.final_loss <= 1e-8, "tcur loss {}", t.final_loss);
        assert_eq!(t.params, 2 * 2 * 4);
        assert_eq!(rep.record(Method::MatrixCur).unwrap().params, 2 * 2 * 4);
    }
}
