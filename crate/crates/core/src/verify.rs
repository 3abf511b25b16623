//! Self-check suite run by `tcur verify`.
//!
//! Every check draws its inputs from a seeded generator and compares the
//! fast paths against oracles or algebraic identities. A [`Fault`] can be
//! injected to confirm the suite actually fails when an invariant breaks.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adapter::{
    count_params, count_params_matrix_cur, init_adapter, stack_layers, unstack_layers, Group,
    LayerWeights, StackingConfig,
};
use crate::checkpoint::{decode, encode, Checkpoint, Payload};
use crate::cur::{column_scores, matrix_cur, reconstruct, row_scores, tcur};
use crate::error::TcurError;
use crate::fft::{fft_mode3, ifft_mode3, DEFAULT_IMAG_TOL};
use crate::linalg::{Matrix, DEFAULT_SV_TOL};
use crate::report::Method;
use crate::tensor::{rel_error, tidentity, ttranspose, ComplexTensor3, Tensor3};
use crate::tproduct::{tpinv, tprod, tprod_bruteforce};
use crate::trainer::{
    finite_diff_grad, grad_core, run_baselines, safe_step_size, train, PlantMode, SyntheticTask,
    TrainConfig,
};

/// Deliberate defects for exercising the failure path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Perturb the fast t-product before comparing with the oracle.
    TprodOracle,
    /// Start adapters from a nonzero core.
    ZeroCore,
    /// Scale the analytic gradient by 1.01.
    Gradient,
    /// Skip the checksum comparison when decoding.
    Checksum,
}

impl Fault {
    pub const ALL: [Fault; 4] = [Fault::TprodOracle, Fault::ZeroCore, Fault::Gradient, Fault::Checksum];

    pub fn as_str(self) -> &'static str {
        match self {
            Fault::TprodOracle => "tprod_oracle",
            Fault::ZeroCore => "zero_core",
            Fault::Gradient => "gradient",
            Fault::Checksum => "checksum",
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Fault {
    type Err = TcurError;

    fn from_str(s: &str) -> Result<Self, TcurError> {
        Fault::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| TcurError::InvalidArgument(format!("unknown fault {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub fault: Option<Fault>,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    pub fault: Option<Fault>,
}

type CheckOutcome = Result<String, String>;

struct Ctx {
    seed: u64,
    fault: Option<Fault>,
}

impl Ctx {
    fn rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt)
    }

    fn has(&self, f: Fault) -> bool {
        self.fault == Some(f)
    }
}

fn e(err: TcurError) -> String {
    err.to_string()
}

fn within(name: &str, value: f64, bound: f64) -> Result<(), String> {
    if value <= bound {
        Ok(())
    } else {
        Err(format!("{name} = {value:.3e} exceeds {bound:.1e}"))
    }
}

fn random_pair(rng: &mut ChaCha8Rng, max: (usize, usize, usize, usize)) -> (Tensor3, Tensor3) {
    let n1 = rng.random_range(1..=max.0);
    let n2 = rng.random_range(1..=max.1);
    let l = rng.random_range(1..=max.2);
    let n3 = rng.random_range(1..=max.3);
    (
        Tensor3::random_normal((n1, n2, n3), rng),
        Tensor3::random_normal((n2, l, n3), rng),
    )
}

fn tubal_rank_tensor(rng: &mut ChaCha8Rng, dims: (usize, usize, usize), r: usize) -> Tensor3 {
    let a = Tensor3::random_normal((dims.0, r, dims.2), rng);
    let b = Tensor3::random_normal((r, dims.1, dims.2), rng);
    tprod(&a, &b).expect("conformable")
}

fn check_tprod_oracle(cx: &Ctx) -> CheckOutcome {
    let mut rng = cx.rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..60 {
        let (a, b) = random_pair(&mut rng, (8, 8, 8, 6));
        let mut fast = tprod(&a, &b).map_err(e)?;
        if cx.has(Fault::TprodOracle) {
            let v = fast.get(0, 0, 0);
            fast.set(0, 0, 0, v + 1e-6 * (1.0 + v.abs()));
        }
        let slow = tprod_bruteforce(&a, &b).map_err(e)?;
        worst = worst.max(rel_error(&fast, &slow).unwrap_or(0.0));
    }
    within("max rel error", worst, 1e-10)?;
    Ok(format!("60 pairs, max rel error {worst:.2e}"))
}

fn check_algebra_laws(cx: &Ctx) -> CheckOutcome {
    let mut rng = cx.rng(2);
    let (mut assoc, mut ident, mut adj): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..20 {
        let n3 = rng.random_range(1..=5);
        let d: Vec<usize> = (0..4).map(|_| rng.random_range(1..=6)).collect();
        let a = Tensor3::random_normal((d[0], d[1], n3), &mut rng);
        let b = Tensor3::random_normal((d[1], d[2], n3), &mut rng);
        let c = Tensor3::random_normal((d[2], d[3], n3), &mut rng);
        let left = tprod(&tprod(&a, &b).map_err(e)?, &c).map_err(e)?;
        let right = tprod(&a, &tprod(&b, &c).map_err(e)?).map_err(e)?;
        assoc = assoc.max(rel_error(&left, &right).unwrap_or(0.0));
        let ia = tprod(&tidentity(d[0], n3), &a).map_err(e)?;
        let ai = tprod(&a, &tidentity(d[1], n3)).map_err(e)?;
        ident = ident.max(rel_error(&ia, &a).map_err(e)?).max(rel_error(&ai, &a).map_err(e)?);
        let lhs = ttranspose(&tprod_bruteforce(&a, &b).map_err(e)?);
        let rhs = tprod(&ttranspose(&b), &ttranspose(&a)).map_err(e)?;
        adj = adj.max(rel_error(&rhs, &lhs).unwrap_or(0.0));
        if ttranspose(&ttranspose(&a)) != a {
            return Err("t-transpose is not an involution".into());
        }
    }
    within("associativity", assoc, 1e-9)?;
    within("identity", ident, 1e-12)?;
    within("adjoint", adj, 1e-10)?;
    Ok(format!("assoc {assoc:.1e}, identity {ident:.1e}, adjoint {adj:.1e}"))
}

fn check_fft(cx: &Ctx) -> CheckOutcome {
    let mut rng = cx.rng(3);
    let (mut rt, mut sym): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let dims = (rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=8));
        let t = Tensor3::random_normal(dims, &mut rng);
        let f = fft_mode3(&t);
        sym = sym.max(f.conj_symmetry_residual());
        rt = rt.max(rel_error(&ifft_mode3(&f, DEFAULT_IMAG_TOL).map_err(e)?, &t).map_err(e)?);
    }
    within("round trip", rt, 1e-12)?;
    within("symmetry residual", sym, 1e-12)?;
    let mut broken = ComplexTensor3::zeros((1, 1, 2));
    broken.set(0, 0, 1, num_complex::Complex64::new(0.0, 1.0));
    match ifft_mode3(&broken, DEFAULT_IMAG_TOL) {
        Err(TcurError::ResidualImaginary { .. }) => {}
        other => return Err(format!("asymmetric spectrum accepted: {other:?}")),
    }
    Ok(format!("round trip {rt:.1e}, symmetry {sym:.1e}"))
}

fn check_pinv(cx: &Ctx) -> CheckOutcome {
    let mut rng = cx.rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n3 = rng.random_range(1..=5);
        let a = Tensor3::random_normal((rng.random_range(1..=6), rng.random_range(1..=6), n3), &mut rng);
        let p = tpinv(&a, DEFAULT_SV_TOL).map_err(e)?;
        let apa = tprod(&a, &tprod(&p, &a).map_err(e)?).map_err(e)?;
        let pap = tprod(&p, &tprod(&a, &p).map_err(e)?).map_err(e)?;
        worst = worst.max(rel_error(&apa, &a).map_err(e)?).max(rel_error(&pap, &p).map_err(e)?);
    }
    within("Penrose residual", worst, 1e-8)?;
    let i = tidentity(3, 4);
    within("pinv(I) - I", rel_error(&tpinv(&i, DEFAULT_SV_TOL).map_err(e)?, &i).map_err(e)?, 1e-12)?;
    Ok(format!("20 tensors, worst {worst:.2e}"))
}

fn check_scores(cx: &Ctx) -> CheckOutcome {
    let mut rng = cx.rng(5);
    let mut worst_sum: f64 = 0.0;
    for _ in 0..20 {
        let dims = (rng.random_range(2..=8), rng.random_range(2..=8), rng.random_range(1..=5));
        let w = Tensor3::random_normal(dims, &mut rng);
        let r = rng.random_range(1..=dims.0.min(dims.1));
        let w_hat = fft_mode3(&w);
        let alpha = column_scores(&w_hat).map_err(e)?;
        let f = tcur(&w, r, DEFAULT_SV_TOL).map_err(e)?;
        let beta = row_scores(&w_hat, f.cols()).map_err(e)?;
        worst_sum = worst_sum.max((alpha.sum() - 1.0).abs()).max((beta.sum() - 1.0).abs());
        if alpha.values().iter().chain(beta.values()).any(|&v| v < 0.0) {
            return Err("negative score".into());
        }
        let again = tcur(&w, r, DEFAULT_SV_TOL).map_err(e)?;
        if again.rows() != f.rows() || again.cols() != f.cols() {
            return Err("selection is not deterministic".into());
        }
        for s in [1e-3, 1.0, 1e3] {
            let g = tcur(&w.scaled(s), r, DEFAULT_SV_TOL).map_err(e)?;
            if g.rows() != f.rows() || g.cols() != f.cols() {
                return Err(format!("selection changed under scaling by {s}"));
            }
        }
        // reversing the column order reverses alpha
        let n2 = dims.1;
        let perm: Vec<usize> = (0..n2).rev().collect();
        let alpha_p = column_scores(&fft_mode3(&w.select_cols(&perm))).map_err(e)?;
        for (j, &pj) in perm.iter().enumerate() {
            if (alpha_p.values()[j] - alpha.values()[pj]).abs() > 1e-12 {
                return Err("column scores are not permutation equivariant".into());
            }
        }
    }
    within("|sum - 1|", worst_sum, 1e-12)?;
    Ok(format!("20 tensors, worst |sum - 1| {worst_sum:.1e}"))
}

fn check_cur(cx: &Ctx) -> CheckOutcome {
    let mut rng = cx.rng(6);
    let (mut exact, mut commute): (f64, f64) = (0.0, 0.0);
    for _ in 0..50 {
        let dims = (rng.random_range(2..=12), rng.random_range(2..=12), rng.random_range(1..=6));
        let r = rng.random_range(1..=(dims.0.min(dims.1) / 2).clamp(1, 4));
        let w = tubal_rank_tensor(&mut rng, dims, r);
        let f = tcur(&w, r, DEFAULT_SV_TOL).map_err(e)?;
        exact = exact.max(rel_error(&reconstruct(&f).map_err(e)?, &w).map_err(e)?);
        let (i, j) = (f.rows().indices(), f.cols().indices());
        commute = commute
            .max(rel_error(f.column_slab(), &w.select_cols(j)).map_err(e)?)
            .max(rel_error(f.intersection(), &w.select(i, j)).map_err(e)?)
            .max(rel_error(f.row_slab(), &w.select_rows(i)).map_err(e)?);
    }
    within("reconstruction error", exact, 1e-8)?;
    within("sampling commutation", commute, 1e-12)?;

    let m = Tensor3::random_normal((6, 7, 1), &mut rng);
    let mc = matrix_cur(&Matrix::from_slice(&m, 0), 3, DEFAULT_SV_TOL).map_err(e)?;
    let tc = tcur(&m, 3, DEFAULT_SV_TOL).map_err(e)?;
    if &mc.rows != tc.rows() || &mc.cols != tc.cols() || mc.u0.fro_norm() != 0.0 {
        return Err("matrix CUR disagrees with single-slice tensor CUR".into());
    }
    Ok(format!("50 tensors, worst reconstruction {exact:.2e}, commutation {commute:.1e}"))
}

fn check_adapter(cx: &Ctx) -> CheckOutcome {
    let mut rng = cx.rng(7);
    let mut bilinear: f64 = 0.0;
    for _ in 0..10 {
        let dims = (rng.random_range(2..=8), rng.random_range(2..=8), rng.random_range(1..=6));
        let base = Tensor3::random_normal(dims, &mut rng);
        let r = rng.random_range(1..=dims.0.min(dims.1));
        let mut a = init_adapter(&base, r).map_err(e)?;
        if cx.has(Fault::ZeroCore) {
            a.set_core(Tensor3::random_normal((r, r, dims.2), &mut rng).scaled(1e-3))
                .map_err(e)?;
        }
        if a.effective_weights() != base {
            return Err(format!("effective weights differ from base at init for {dims:?}, r = {r}"));
        }
        let u1 = Tensor3::random_normal((r, r, dims.2), &mut rng);
        let u2 = Tensor3::random_normal((r, r, dims.2), &mut rng);
        let sum = a.delta_for(&u1.add(&u2).map_err(e)?).map_err(e)?;
        let parts = a.delta_for(&u1).map_err(e)?.add(&a.delta_for(&u2).map_err(e)?).map_err(e)?;
        bilinear = bilinear.max(sum.sub(&parts).map_err(e)?.max_abs() / (1.0 + parts.max_abs()));
    }
    within("bilinearity", bilinear, 1e-12)?;

    let cfg = StackingConfig::new(3, 2, 1).map_err(e)?;
    let mut m = |rows, cols| Matrix::from_slice(&Tensor3::random_normal((rows, cols, 1), &mut rng), 0);
    let layers: Vec<LayerWeights> = (0..cfg.n_layers)
        .map(|_| LayerWeights {
            q: m(3, 3),
            k: m(3, 3),
            v: m(3, 3),
            o: m(3, 3),
            up: m(3, 12),
            down: m(12, 3),
        })
        .collect();
    let stacked = stack_layers(&layers, &cfg).map_err(e)?;
    if unstack_layers(&stacked, &cfg).map_err(e)? != layers {
        return Err("stack/unstack round trip failed".into());
    }
    for r in 1..=3 {
        let enumerated: usize = Group::ALL
            .iter()
            .map(|&g| init_adapter(stacked.group(g), r).map(|a| a.learnable_params()))
            .sum::<Result<usize, _>>()
            .map_err(e)?;
        if count_params(&cfg, r).total != enumerated {
            return Err("parameter formula disagrees with enumeration".into());
        }
    }
    let unetr = StackingConfig::unetr_base();
    let (p, mp) = (count_params(&unetr, 8), count_params_matrix_cur(&unetr, 2));
    if p.total != 4608 || mp.total != 288 || mp.n_matrices != 72 {
        return Err(format!("UNETR counts {} / {} (expected 4608 / 288)", p.total, mp.total));
    }
    Ok(format!("bilinearity {bilinear:.1e}; UNETR r=8 cores {} entries", p.total))
}

fn check_gradients(cx: &Ctx) -> CheckOutcome {
    let mut rng = cx.rng(8);
    let (mut adjoint, mut fd): (f64, f64) = (0.0, 0.0);
    for trial in 0..10 {
        let dims = (rng.random_range(3..=6), rng.random_range(3..=6), rng.random_range(1..=4));
        let r = rng.random_range(1..=3);
        let task = SyntheticTask::generate(dims, r, PlantMode::OutOfSpan, cx.seed ^ (trial + 100))
            .map_err(e)?;
        let mut a = init_adapter(&task.base, r).map_err(e)?;
        a.set_core(Tensor3::random_normal((r, r, dims.2), &mut rng)).map_err(e)?;

        let g = Tensor3::random_normal(dims, &mut rng);
        let v = Tensor3::random_normal((r, r, dims.2), &mut rng);
        let lhs = grad_core(&a, &g).map_err(e)?.inner(&v).map_err(e)?;
        let rhs = g.inner(&a.delta_for(&v).map_err(e)?).map_err(e)?;
        adjoint = adjoint.max((lhs - rhs).abs() / (1.0 + lhs.abs()));

        let resid = a.effective_weights().sub(&task.target).map_err(e)?;
        let mut analytic = grad_core(&a, &resid).map_err(e)?;
        if cx.has(Fault::Gradient) {
            analytic = analytic.scaled(1.01);
        }
        let numeric = finite_diff_grad(&a, &task, 1e-5).map_err(e)?;
        fd = fd.max(analytic.sub(&numeric).map_err(e)?.max_abs() / analytic.max_abs().max(f64::MIN_POSITIVE));
    }
    within("adjoint identity", adjoint, 1e-10)?;
    within("finite-difference discrepancy", fd, 1e-6)?;
    Ok(format!("10 adapters, adjoint {adjoint:.1e}, fd {fd:.1e}"))
}

fn check_training(cx: &Ctx) -> CheckOutcome {
    let task = SyntheticTask::generate((16, 16, 8), 4, PlantMode::InSpan, cx.seed).map_err(e)?;
    let mut a = init_adapter(&task.base, 4).map_err(e)?;
    let before = (a.base().clone(), a.column_slab().clone(), a.row_slab().clone());
    let lr = safe_step_size(&a).map_err(e)?;
    let cfg = TrainConfig {
        stop_below: Some(1e-12),
        ..TrainConfig::gd(5000, lr)
    };
    let h = train(&mut a, &task, &cfg).map_err(e)?;
    let ratio = h.final_loss / h.initial_loss;
    within("final/initial loss", ratio, 1e-8)?;
    if !h.is_monotone_non_increasing() {
        return Err("loss increased during gradient descent".into());
    }
    let bits = |t: &Tensor3| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    if bits(a.base()) != bits(&before.0) || bits(a.column_slab()) != bits(&before.1) || bits(a.row_slab()) != bits(&before.2) {
        return Err("training modified frozen tensors".into());
    }

    let small = SyntheticTask::generate((8, 8, 4), 2, PlantMode::InSpan, cx.seed).map_err(e)?;
    let rep = run_baselines(&small, 2, 5000).map_err(e)?;
    let full = rep.record(Method::Full).ok_or("missing full record")?;
    let tc = rep.record(Method::Tcur).ok_or("missing tcur record")?;
    if full.final_loss != 0.0 {
        return Err(format!("full baseline loss {}", full.final_loss));
    }
    within("tcur baseline loss", tc.final_loss, 1e-8)?;
    Ok(format!("{} steps, loss ratio {ratio:.1e}", h.steps.len()))
}

fn check_checkpoint(cx: &Ctx) -> CheckOutcome {
    let mut rng = cx.rng(9);
    let base = Tensor3::random_normal((5, 6, 3), &mut rng);
    let mut a = init_adapter(&base, 2).map_err(e)?;
    a.set_core(Tensor3::random_normal((2, 2, 3), &mut rng)).map_err(e)?;
    let f = tcur(&base, 3, DEFAULT_SV_TOL).map_err(e)?;
    for payload in [Payload::RawTensor(base), Payload::TcurFactors(f), Payload::Adapter(a)] {
        let ckpt = Checkpoint::new(payload);
        let bytes = encode(&ckpt).map_err(e)?;
        let back = decode(&bytes).map_err(e)?;
        if back != ckpt || encode(&back).map_err(e)? != bytes {
            return Err(format!("{} round trip is not byte-exact", ckpt.payload.kind().name()));
        }
        for pos in (0..bytes.len()).step_by(7) {
            let mut b = bytes.clone();
            b[pos] ^= 0x01;
            if cx.has(Fault::Checksum) {
                // recompute the trailer so only structural validation remains
                let n = b.len() - 4;
                let crc = crc32fast::hash(&b[..n]);
                b[n..].copy_from_slice(&crc.to_le_bytes());
            }
            if decode(&b).is_ok() {
                return Err(format!("byte flip at {pos} not detected"));
            }
        }
    }
    Ok("3 payload kinds round trip; sampled byte flips all rejected".into())
}

type CheckFn = fn(&Ctx) -> CheckOutcome;

const CHECKS: [(&str, CheckFn); 10] = [
    ("tprod_oracle_equivalence", check_tprod_oracle),
    ("tprod_algebra_laws", check_algebra_laws),
    ("fft_round_trip_symmetry", check_fft),
    ("tpinv_penrose_laws", check_pinv),
    ("score_normalization_selection", check_scores),
    ("cur_exactness_sampling", check_cur),
    ("adapter_zero_core_stacking_params", check_adapter),
    ("gradient_adjoint_finite_diff", check_gradients),
    ("training_convergence_frozen", check_training),
    ("checkpoint_round_trip_corruption", check_checkpoint),
];

/// Names of all checks, in execution order.
pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

pub fn run_verify(opts: VerifyOptions) -> VerifyReport {
    let cx = Ctx {
        seed: opts.seed,
        fault: opts.fault,
    };
    let checks = CHECKS
        .iter()
        .map(|(name, f)| {
            let t0 = Instant::now();
            let outcome = f(&cx);
            let elapsed_ms = t0.elapsed().as_secs_f64() * 1e3;
            let (passed, detail) = match outcome {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult {
                name,
                passed,
                detail,
                elapsed_ms,
            }
        })
        .collect();
    VerifyReport {
        seed: opts.seed,
        fault: opts.fault,
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_run_passes() {
        let rep = run_verify(VerifyOptions::default());
        for c in &rep.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn each_fault_is_caught() {
        for fault in Fault::ALL {
            let rep = run_verify(VerifyOptions {
                seed: 0,
                fault: Some(fault),
            });
            assert!(!rep.all_passed(), "fault {fault} went unnoticed");
        }
    }

    #[test]
    fn fault_names_parse() {
        for f in Fault::ALL {
            assert_eq!(f.as_str().parse::<Fault>().unwrap(), f);
        }
        assert!("nope".parse::<Fault>().is_err());
    }
}
