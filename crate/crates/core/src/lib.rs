//! t-product tensor algebra, tensor CUR decomposition, and tCURLoRA
//! adapters with a toy-scale fine-tuning loop.
//!
//! Tensors are dense, real, third-order and stored slice-major
//! ([`Tensor3`]). The t-product ([`tprod`]) runs through the mode-3 FFT; a
//! block-circulant brute force ([`tprod_bruteforce`]) is kept alongside as
//! its oracle.

pub mod adapter;
pub mod checkpoint;
pub mod cur;
pub mod error;
pub mod fft;
pub mod linalg;
pub mod report;
pub mod tensor;
pub mod tproduct;
pub mod trainer;
pub mod verify;

pub use adapter::{
    count_params, count_params_matrix_cur, init_adapter, stack_layers, unstack_layers, Adapter,
    Group, LayerWeights, MatrixParamReport, ParamReport, Role, StackedWeights, StackingConfig,
};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, Payload, PayloadKind};
pub use cur::{
    column_scores, matrix_cur, reconstruct, reconstruct_with_tol, row_scores, select_top_r, tcur,
    IndexSet, MatrixCur, ScoreVector, TcurFactors,
};
pub use error::{Result, TcurError};
pub use fft::{fft_mode3, ifft_mode3, DEFAULT_IMAG_TOL};
pub use linalg::{Matrix, DEFAULT_SV_TOL};
pub use tensor::{fro_norm, rel_error, tidentity, ttranspose, ComplexTensor3, Dims, Tensor3};
pub use tproduct::{tpinv, tprod, tprod_bruteforce};
pub use report::{ComparisonReport, Method, ReportRecord};
pub use trainer::{
    finite_diff_grad, grad_core, loss_tensor_target, run_baselines, safe_step_size, train,
    Optimizer, PlantMode, SyntheticTask, TrainConfig, TrainHistory,
};
pub use verify::{run_verify, Fault, VerifyOptions, VerifyReport};
