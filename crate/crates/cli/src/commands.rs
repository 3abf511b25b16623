use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use tcur_core::adapter::{PARAM_CAVEAT, SA_LAYOUT};
use tcur_core::checkpoint::TENSOR_LAYOUT;
use tcur_core::{
    count_params, count_params_matrix_cur, init_adapter, read_checkpoint, reconstruct_with_tol,
    rel_error, run_baselines, run_verify, safe_step_size, tcur, tprod, train, write_checkpoint,
    Checkpoint, Dims, Fault, MatrixParamReport, Optimizer, ParamReport, Payload, StackingConfig,
    SyntheticTask, Tensor3, TrainConfig, VerifyOptions,
};

use crate::output::{emit, num, Table};
use crate::{
    CliError, DecomposeArgs, FinetuneArgs, GenerateArgs, OptimizerArg, ParamsArgs, ReconstructArgs,
    ReportArgs, VerifyArgs,
};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn read_kind(path: &Path, want: &str) -> Result<Payload, CliError> {
    let ckpt = read_checkpoint(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let got = ckpt.payload.kind().name();
    if got != want {
        return Err(usage(format!("{} holds a {got} payload, expected {want}", path.display())));
    }
    Ok(ckpt.payload)
}

fn write(path: &Path, ckpt: &Checkpoint) -> Result<(), CliError> {
    write_checkpoint(path, ckpt).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct GenerateSummary<'a> {
    seed: u64,
    dims: Dims,
    tubal_rank: Option<usize>,
    output: &'a Path,
}

pub fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (n1, n2, n3) = args.dims;
    let t = match args.tubal_rank {
        None => Tensor3::random_normal(args.dims, &mut rng),
        Some(r) => {
            if r == 0 || r > n1.min(n2) {
                return Err(usage(format!("tubal rank {r} out of range 1..={}", n1.min(n2))));
            }
            let a = Tensor3::random_normal((n1, r, n3), &mut rng);
            let b = Tensor3::random_normal((r, n2, n3), &mut rng);
            tprod(&a, &b)?
        }
    };
    write(&args.output, &Checkpoint::new(Payload::RawTensor(t)))?;
    let summary = GenerateSummary {
        seed: args.seed,
        dims: args.dims,
        tubal_rank: args.tubal_rank,
        output: &args.output,
    };
    println!("{}", serde_json::to_string(&summary).expect("serializable"));
    Ok(())
}

#[derive(Serialize)]
struct DecomposeSummary {
    dims: Dims,
    rank: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    rel_error: f64,
}

pub fn decompose(args: DecomposeArgs) -> Result<(), CliError> {
    let Payload::RawTensor(w) = read_kind(&args.input, "raw_tensor")? else {
        unreachable!()
    };
    let f = tcur(&w, args.rank, args.tol)?;
    let err = rel_error(&reconstruct_with_tol(&f, args.tol)?, &w)?;
    let summary = DecomposeSummary {
        dims: w.dims(),
        rank: f.rank(),
        rows: f.rows().indices().to_vec(),
        cols: f.cols().indices().to_vec(),
        rel_error: err,
    };
    write(&args.output, &Checkpoint::new(Payload::TcurFactors(f)))?;
    emit(&args.out, &summary, || Table {
        header: vec!["n1", "n2", "n3", "rank", "rows", "cols", "rel_error"],
        rows: vec![vec![
            summary.dims.0.to_string(),
            summary.dims.1.to_string(),
            summary.dims.2.to_string(),
            summary.rank.to_string(),
            join(&summary.rows),
            join(&summary.cols),
            num(summary.rel_error),
        ]],
    })
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

#[derive(Serialize)]
struct ReconstructSummary {
    dims: Dims,
    rank: usize,
    rel_error: Option<f64>,
}

pub fn reconstruct(args: ReconstructArgs) -> Result<(), CliError> {
    let Payload::TcurFactors(f) = read_kind(&args.input, "tcur_factors")? else {
        unreachable!()
    };
    let w = reconstruct_with_tol(&f, args.tol)?;
    let err = match &args.reference {
        Some(path) => {
            let Payload::RawTensor(reference) = read_kind(path, "raw_tensor")? else {
                unreachable!()
            };
            Some(rel_error(&w, &reference)?)
        }
        None => None,
    };
    let summary = ReconstructSummary {
        dims: w.dims(),
        rank: f.rank(),
        rel_error: err,
    };
    write(&args.output, &Checkpoint::new(Payload::RawTensor(w)))?;
    emit(&args.out, &summary, || Table {
        header: vec!["n1", "n2", "n3", "rank", "rel_error"],
        rows: vec![vec![
            summary.dims.0.to_string(),
            summary.dims.1.to_string(),
            summary.dims.2.to_string(),
            summary.rank.to_string(),
            summary.rel_error.map(num).unwrap_or_default(),
        ]],
    })
}

pub fn verify(args: VerifyArgs) -> Result<(), CliError> {
    let fault = args
        .inject_fault
        .as_deref()
        .map(str::parse::<Fault>)
        .transpose()?;
    let report = run_verify(VerifyOptions {
        seed: args.seed,
        fault,
    });
    for c in &report.checks {
        eprintln!(
            "[{}] {:<36} {:>9.1} ms  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.elapsed_ms,
            c.detail
        );
    }
    emit(&args.out, &report, || Table {
        header: vec!["seed", "check", "passed", "detail", "elapsed_ms"],
        rows: report
            .checks
            .iter()
            .map(|c| {
                vec![
                    report.seed.to_string(),
                    c.name.to_string(),
                    c.passed.to_string(),
                    c.detail.clone(),
                    num(c.elapsed_ms),
                ]
            })
            .collect(),
    })?;
    if report.all_passed() {
        Ok(())
    } else {
        let failed = report.checks.iter().filter(|c| !c.passed).count();
        Err(CliError::Verification(format!("{failed} check(s) failed")))
    }
}

#[derive(Serialize)]
struct FinetuneOutput {
    seed: u64,
    dims: Dims,
    rank: usize,
    plant_mode: String,
    optimizer: Optimizer,
    lr: f64,
    learnable_params: usize,
    history: tcur_core::TrainHistory,
}

pub fn finetune(args: FinetuneArgs) -> Result<(), CliError> {
    let t = &args.task;
    let task = SyntheticTask::generate(t.dims, t.rank, t.plant_mode.into(), t.seed)?;
    let mut adapter = init_adapter(&task.base, t.rank)?;
    let optimizer = match args.optimizer {
        OptimizerArg::Gd => Optimizer::Gd,
        OptimizerArg::Adam => Optimizer::adam(),
    };
    let lr = match (args.lr, args.optimizer) {
        (Some(lr), _) => lr,
        (None, OptimizerArg::Gd) => safe_step_size(&adapter)?,
        (None, OptimizerArg::Adam) => 1e-2,
    };
    let cfg = TrainConfig {
        steps: t.steps,
        lr,
        optimizer,
        stop_below: args.tol,
    };
    let history = train(&mut adapter, &task, &cfg)?;
    if let Some(path) = &args.output {
        let layout = format!("{TENSOR_LAYOUT};{SA_LAYOUT}");
        write(path, &Checkpoint::with_layout(Payload::Adapter(adapter.clone()), layout))?;
    }
    let out = FinetuneOutput {
        seed: t.seed,
        dims: t.dims,
        rank: t.rank,
        plant_mode: task.plant_mode.to_string(),
        optimizer,
        lr,
        learnable_params: adapter.learnable_params(),
        history,
    };
    emit(&args.out, &out, || Table {
        header: vec!["seed", "step", "loss", "grad_norm", "lr"],
        rows: out
            .history
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| vec![out.seed.to_string(), i.to_string(), num(s.loss), num(s.grad_norm), num(s.lr)])
            .collect(),
    })
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    let t = &args.task;
    let task = SyntheticTask::generate(t.dims, t.rank, t.plant_mode.into(), t.seed)?;
    let mut rep = run_baselines(&task, t.rank, t.steps)?;
    if args.omit_timing {
        rep = rep.without_timing();
    }
    emit(&args.out, &rep, || Table {
        header: vec![
            "seed", "plant_mode", "method", "params", "final_loss", "rel_error", "wall_ms", "rank", "n1", "n2", "n3",
        ],
        rows: rep
            .records
            .iter()
            .map(|r| {
                vec![
                    rep.seed.to_string(),
                    rep.plant_mode.clone(),
                    r.method.to_string(),
                    r.params.to_string(),
                    num(r.final_loss),
                    num(r.rel_error),
                    num(r.wall_ms),
                    r.rank.to_string(),
                    r.n1.to_string(),
                    r.n2.to_string(),
                    r.n3.to_string(),
                ]
            })
            .collect(),
    })
}

#[derive(Serialize)]
struct ParamsOutput {
    config: StackingConfig,
    head_dim: usize,
    tcur: ParamReport,
    matrix_cur: MatrixParamReport,
    caveat: &'static str,
}

pub fn params(args: ParamsArgs) -> Result<(), CliError> {
    let cfg = StackingConfig::new(args.d, args.layers, args.heads)?;
    if args.rank == 0 || args.baseline_rank == 0 {
        return Err(usage("ranks must be at least 1"));
    }
    let tcur = count_params(&cfg, args.rank);
    let matrix_cur = count_params_matrix_cur(&cfg, args.baseline_rank);
    eprintln!("{tcur}");
    eprintln!("{matrix_cur}");
    let out = ParamsOutput {
        config: cfg,
        head_dim: cfg.head_dim(),
        tcur,
        matrix_cur,
        caveat: PARAM_CAVEAT,
    };
    emit(&args.out, &out, || {
        let mut rows: Vec<Vec<String>> = out
            .tcur
            .groups
            .iter()
            .map(|g| {
                vec![
                    "tcur".into(),
                    g.group.name().into(),
                    format!("{}x{}x{}", g.core_dims.0, g.core_dims.1, g.core_dims.2),
                    g.learnable.to_string(),
                ]
            })
            .collect();
        rows.push(vec!["tcur".into(), "total".into(), String::new(), out.tcur.total.to_string()]);
        rows.push(vec![
            "matrix_cur".into(),
            format!("{} matrices", out.matrix_cur.n_matrices),
            format!("{0}x{0}", out.matrix_cur.rank),
            out.matrix_cur.total.to_string(),
        ]);
        Table {
            header: vec!["method", "group", "core", "learnable"],
            rows,
        }
    })
}
