//! tCURLoRA adapters.
//!
//! Per-layer transformer weights are stacked along the frontal dimension into
//! three tensors (self-attention, MLP up, MLP down). Each stacked tensor gets
//! its own adapter: frozen CUR slabs `C` and `R` plus a learnable core `U`
//! that starts at zero, so the effective weight is `W + C * U * R`.

use std::fmt;

use serde::Serialize;

use crate::cur::{check_rank, tcur};
use crate::error::{Result, TcurError};
use crate::fft::{fft_mode3, ifft_mode3, DEFAULT_IMAG_TOL};
use crate::linalg::{Matrix, DEFAULT_SV_TOL};
use crate::tensor::{ComplexTensor3, Dims, Tensor3};
use crate::tproduct::{conj_transpose_slices, slice_product};

/// Slice order of the self-attention stack: slice `4 * layer + role`, roles
/// in q, k, v, o order. Up/down stacks hold one slice per layer.
pub const SA_LAYOUT: &str = "sa:layer-major(q,k,v,o);up:layer;down:layer";

/// Which stacked tensor a weight belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    SelfAttention,
    MlpUp,
    MlpDown,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::SelfAttention, Group::MlpUp, Group::MlpDown];

    pub fn name(self) -> &'static str {
        match self {
            Group::SelfAttention => "sa",
            Group::MlpUp => "up",
            Group::MlpDown => "down",
        }
    }
}

/// Attention projection role within a layer; the discriminant is the slice
/// offset inside the layer's block of four.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Q = 0,
    K = 1,
    V = 2,
    O = 3,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Q, Role::K, Role::V, Role::O];
}

/// Shapes of a transformer encoder's adaptable weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StackingConfig {
    pub d: usize,
    pub n_layers: usize,
    /// Number of attention heads. Only recorded; heads are stored merged as
    /// `d x d` projections.
    pub n_heads: usize,
}

impl StackingConfig {
    pub fn new(d: usize, n_layers: usize, n_heads: usize) -> Result<Self> {
        if d == 0 || n_layers == 0 || n_heads == 0 {
            return Err(TcurError::InvalidArgument(format!(
                "d, n_layers and n_heads must be positive (got {d}, {n_layers}, {n_heads})"
            )));
        }
        Ok(Self { d, n_layers, n_heads })
    }

    /// ViT-B/16-sized encoder: d = 768, 12 layers, 12 heads.
    pub fn unetr_base() -> Self {
        Self {
            d: 768,
            n_layers: 12,
            n_heads: 12,
        }
    }

    /// Per-head width `d / n_heads` (rounded down).
    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }

    pub fn group_dims(&self, group: Group) -> Dims {
        let (d, l) = (self.d, self.n_layers);
        match group {
            Group::SelfAttention => (d, d, 4 * l),
            Group::MlpUp => (d, 4 * d, l),
            Group::MlpDown => (4 * d, d, l),
        }
    }

    /// Number of individual weight matrices across all groups.
    pub fn matrix_count(&self) -> usize {
        6 * self.n_layers
    }
}

/// Adaptable weights of one transformer layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub o: Matrix,
    /// `d x 4d`
    pub up: Matrix,
    /// `4d x d`
    pub down: Matrix,
}

impl LayerWeights {
    pub fn role(&self, role: Role) -> &Matrix {
        match role {
            Role::Q => &self.q,
            Role::K => &self.k,
            Role::V => &self.v,
            Role::O => &self.o,
        }
    }

    fn check(&self, cfg: &StackingConfig) -> Result<()> {
        let d = cfg.d;
        let shape = |m: &Matrix| (m.rows(), m.cols());
        let ok = Role::ALL.iter().all(|&r| shape(self.role(r)) == (d, d))
            && shape(&self.up) == (d, 4 * d)
            && shape(&self.down) == (4 * d, d);
        if !ok {
            return Err(TcurError::DimMismatch(format!(
                "layer weights do not match d = {d}"
            )));
        }
        Ok(())
    }
}

/// The three stacked weight tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedWeights {
    pub sa: Tensor3,
    pub up: Tensor3,
    pub down: Tensor3,
}

impl StackedWeights {
    pub fn group(&self, group: Group) -> &Tensor3 {
        match group {
            Group::SelfAttention => &self.sa,
            Group::MlpUp => &self.up,
            Group::MlpDown => &self.down,
        }
    }
}

fn stack(dims: Dims, slices: impl Iterator<Item = Vec<f64>>) -> Result<Tensor3> {
    let data: Vec<f64> = slices.flatten().collect();
    Tensor3::from_vec(dims, data)
}

pub fn stack_layers(layers: &[LayerWeights], cfg: &StackingConfig) -> Result<StackedWeights> {
    if layers.len() != cfg.n_layers {
        return Err(TcurError::DimMismatch(format!(
            "expected {} layers, got {}",
            cfg.n_layers,
            layers.len()
        )));
    }
    for layer in layers {
        layer.check(cfg)?;
    }
    let sa = stack(
        cfg.group_dims(Group::SelfAttention),
        layers
            .iter()
            .flat_map(|l| Role::ALL.map(|r| l.role(r).data().to_vec())),
    )?;
    let up = stack(cfg.group_dims(Group::MlpUp), layers.iter().map(|l| l.up.data().to_vec()))?;
    let down = stack(
        cfg.group_dims(Group::MlpDown),
        layers.iter().map(|l| l.down.data().to_vec()),
    )?;
    Ok(StackedWeights { sa, up, down })
}

pub fn unstack_layers(stacked: &StackedWeights, cfg: &StackingConfig) -> Result<Vec<LayerWeights>> {
    for group in Group::ALL {
        let want = cfg.group_dims(group);
        let got = stacked.group(group).dims();
        if got != want {
            return Err(TcurError::DimMismatch(format!(
                "{} stack has dims {got:?}, expected {want:?}",
                group.name()
            )));
        }
    }
    let slice = |t: &Tensor3, k: usize| Matrix::from_slice(t, k);
    Ok((0..cfg.n_layers)
        .map(|layer| LayerWeights {
            q: slice(&stacked.sa, 4 * layer + Role::Q as usize),
            k: slice(&stacked.sa, 4 * layer + Role::K as usize),
            v: slice(&stacked.sa, 4 * layer + Role::V as usize),
            o: slice(&stacked.sa, 4 * layer + Role::O as usize),
            up: slice(&stacked.up, layer),
            down: slice(&stacked.down, layer),
        })
        .collect())
}

/// A tCURLoRA adapter for one stacked weight tensor.
///
/// `base`, `C` and `R` are fixed at construction; only the core can change.
#[derive(Clone, Debug)]
pub struct Adapter {
    base: Tensor3,
    column_slab: Tensor3,
    row_slab: Tensor3,
    core: Tensor3,
    // Fourier images of the frozen slabs, derived from the fields above.
    c_hat: ComplexTensor3,
    r_hat: ComplexTensor3,
}

impl PartialEq for Adapter {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base
            && self.column_slab == other.column_slab
            && self.row_slab == other.row_slab
            && self.core == other.core
    }
}

/// Decomposes `base` with rank `r` and returns an adapter with a zero core.
pub fn init_adapter(base: &Tensor3, r: usize) -> Result<Adapter> {
    let (n1, n2, n3) = base.dims();
    check_rank(r, n1, n2)?;
    let factors = tcur(base, r, DEFAULT_SV_TOL)?;
    // The sampled intersection belongs to the reconstruction only; the
    // learnable core is a fresh zero tensor.
    Adapter::from_parts(
        base.clone(),
        factors.column_slab().clone(),
        factors.row_slab().clone(),
        Tensor3::zeros((r, r, n3)),
    )
}

impl Adapter {
    pub fn from_parts(base: Tensor3, column_slab: Tensor3, row_slab: Tensor3, core: Tensor3) -> Result<Self> {
        let (n1, n2, n3) = base.dims();
        let r = core.dims().0;
        if column_slab.dims() != (n1, r, n3) || row_slab.dims() != (r, n2, n3) || core.dims() != (r, r, n3) {
            return Err(TcurError::DimMismatch(format!(
                "adapter parts: base {:?}, C {:?}, R {:?}, U {:?}",
                base.dims(),
                column_slab.dims(),
                row_slab.dims(),
                core.dims()
            )));
        }
        let c_hat = fft_mode3(&column_slab);
        let r_hat = fft_mode3(&row_slab);
        Ok(Self {
            base,
            column_slab,
            row_slab,
            core,
            c_hat,
            r_hat,
        })
    }

    pub fn base(&self) -> &Tensor3 {
        &self.base
    }

    pub fn column_slab(&self) -> &Tensor3 {
        &self.column_slab
    }

    pub fn row_slab(&self) -> &Tensor3 {
        &self.row_slab
    }

    pub fn core(&self) -> &Tensor3 {
        &self.core
    }

    pub fn rank(&self) -> usize {
        self.core.dims().0
    }

    pub fn dims(&self) -> Dims {
        self.base.dims()
    }

    /// Number of learnable entries, `r * r * n3`.
    pub fn learnable_params(&self) -> usize {
        self.core.len()
    }

    /// Replaces the learnable core.
    pub fn set_core(&mut self, core: Tensor3) -> Result<()> {
        self.core.require_same_dims(&core)?;
        self.core = core;
        Ok(())
    }

    pub(crate) fn core_mut(&mut self) -> &mut Tensor3 {
        &mut self.core
    }

    /// `C * u * R` for an arbitrary core `u` of the adapter's core shape.
    pub fn delta_for(&self, u: &Tensor3) -> Result<Tensor3> {
        self.core.require_same_dims(u)?;
        let cu = slice_product(&self.c_hat, &fft_mode3(u))?;
        ifft_mode3(&slice_product(&cu, &self.r_hat)?, DEFAULT_IMAG_TOL)
    }

    /// Weight update `C * U * R`.
    pub fn delta(&self) -> Tensor3 {
        self.delta_for(&self.core).expect("core shape is an invariant")
    }

    /// `base + C * U * R`.
    pub fn effective_weights(&self) -> Tensor3 {
        self.base.add(&self.delta()).expect("delta has base dims")
    }

    /// Effective weights for export; the adapter itself is unchanged.
    pub fn merge(&self) -> Tensor3 {
        self.effective_weights()
    }

    /// Adjoint of `u -> C * u * R` applied to `g`: `C^T * g * R^T`.
    pub(crate) fn adjoint_apply(&self, g: &Tensor3) -> Result<Tensor3> {
        self.base.require_same_dims(g)?;
        let ct = conj_transpose_slices(&self.c_hat);
        let rt = conj_transpose_slices(&self.r_hat);
        let inner = slice_product(&ct, &fft_mode3(g))?;
        ifft_mode3(&slice_product(&inner, &rt)?, DEFAULT_IMAG_TOL)
    }
}

/// Learnable core count for one stacked group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GroupParams {
    pub group: Group,
    pub tensor_dims: Dims,
    pub core_dims: Dims,
    pub learnable: usize,
}

/// Learnable adapter entries for a stacking configuration at rank `r`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub rank: usize,
    pub groups: Vec<GroupParams>,
    pub total: usize,
}

/// Learnable entries of the per-matrix CUR baseline: one `r x r` core per
/// weight matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MatrixParamReport {
    pub rank: usize,
    pub n_matrices: usize,
    pub per_matrix: usize,
    pub total: usize,
}

pub const PARAM_CAVEAT: &str = "counts cover learnable adapter cores only; the published \
2.683 M parameter figure for tCURLoRA on UNETR also includes the fully fine-tuned \
convolutional decoder, which is not modeled here";

pub fn count_params(cfg: &StackingConfig, r: usize) -> ParamReport {
    let groups: Vec<GroupParams> = Group::ALL
        .iter()
        .map(|&group| {
            let tensor_dims = cfg.group_dims(group);
            let core_dims = (r, r, tensor_dims.2);
            GroupParams {
                group,
                tensor_dims,
                core_dims,
                learnable: r * r * tensor_dims.2,
            }
        })
        .collect();
    let total = groups.iter().map(|g| g.learnable).sum();
    ParamReport { rank: r, groups, total }
}

pub fn count_params_matrix_cur(cfg: &StackingConfig, r: usize) -> MatrixParamReport {
    let n_matrices = cfg.matrix_count();
    MatrixParamReport {
        rank: r,
        n_matrices,
        per_matrix: r * r,
        total: n_matrices * r * r,
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tCURLoRA learnable cores at r = {}:", self.rank)?;
        for g in &self.groups {
            writeln!(
                f,
                "  {:<5} tensor {:?} -> core {:?}: {} entries",
                g.group.name(),
                g.tensor_dims,
                g.core_dims,
                g.learnable
            )?;
        }
        writeln!(f, "  total: {} entries", self.total)?;
        write!(f, "note: {PARAM_CAVEAT}")
    }
}

impl fmt::Display for MatrixParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "matrix CURLoRA at r = {}: {} matrices x {} entries = {} entries",
            self.rank, self.n_matrices, self.per_matrix, self.total
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rel_error;
    use crate::tproduct::{tprod, tprod_bruteforce};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_slice(&Tensor3::random_normal((rows, cols, 1), rng), 0)
    }

    fn random_layers(cfg: &StackingConfig, rng: &mut ChaCha8Rng) -> Vec<LayerWeights> {
        let d = cfg.d;
        (0..cfg.n_layers)
            .map(|_| LayerWeights {
                q: random_matrix(d, d, rng),
                k: random_matrix(d, d, rng),
                v: random_matrix(d, d, rng),
                o: random_matrix(d, d, rng),
                up: random_matrix(d, 4 * d, rng),
                down: random_matrix(4 * d, d, rng),
            })
            .collect()
    }

    #[test]
    fn unetr_shapes() {
        let cfg = StackingConfig::unetr_base();
        assert_eq!(cfg.group_dims(Group::SelfAttention), (768, 768, 48));
        assert_eq!(cfg.group_dims(Group::MlpUp), (768, 3072, 12));
        assert_eq!(cfg.group_dims(Group::MlpDown), (3072, 768, 12));
        assert_eq!(cfg.head_dim(), 64);
    }

    #[test]
    fn single_layer_shapes_and_round_trip() {
        let cfg = StackingConfig::new(4, 1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layers = random_layers(&cfg, &mut rng);
        let s = stack_layers(&layers, &cfg).unwrap();
        assert_eq!(s.sa.dims(), (4, 4, 4));
        assert_eq!(s.up.dims(), (4, 16, 1));
        assert_eq!(s.down.dims(), (16, 4, 1));
        assert_eq!(unstack_layers(&s, &cfg).unwrap(), layers);
    }

    #[test]
    fn slice_layout_law() {
        let cfg = StackingConfig::new(3, 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layers = random_layers(&cfg, &mut rng);
        let s = stack_layers(&layers, &cfg).unwrap();
        for k in 0..12 {
            let role = Role::ALL[k % 4];
            assert_eq!(s.sa.slice(k), layers[k / 4].role(role).data());
        }
        assert_eq!(s.up.slice(2), layers[2].up.data());
    }

    #[test]
    fn stacking_rejects_mismatch() {
        let cfg = StackingConfig::new(3, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layers = random_layers(&cfg, &mut rng);
        assert!(matches!(stack_layers(&layers[..1], &cfg), Err(TcurError::DimMismatch(_))));
        let mut s = stack_layers(&layers, &cfg).unwrap();
        s.sa = Tensor3::zeros((3, 3, 7));
        assert!(matches!(unstack_layers(&s, &cfg), Err(TcurError::DimMismatch(_))));
    }

    #[test]
    fn zero_core_is_exact_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = Tensor3::random_normal((6, 5, 4), &mut rng);
        let a = init_adapter(&base, 3).unwrap();
        assert!(a.core().is_zero());
        assert_eq!(a.core().dims(), (3, 3, 4));
        assert!(a.delta().is_zero());
        assert_eq!(a.effective_weights(), base);
    }

    #[test]
    fn rank_out_of_range() {
        let base = Tensor3::from_vec((2, 3, 1), vec![1.0; 6]).unwrap();
        assert!(matches!(init_adapter(&base, 3), Err(TcurError::RankOutOfRange { .. })));
        assert!(matches!(init_adapter(&base, 0), Err(TcurError::RankOutOfRange { .. })));
    }

    #[test]
    fn delta_matches_literal_products_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = Tensor3::random_normal((5, 6, 3), &mut rng);
        let mut a = init_adapter(&base, 2).unwrap();
        let u = Tensor3::random_normal((2, 2, 3), &mut rng);
        a.set_core(u.clone()).unwrap();
        let fast = a.delta();
        let slow = tprod_bruteforce(a.column_slab(), &tprod_bruteforce(&u, a.row_slab()).unwrap()).unwrap();
        assert!(rel_error(&fast, &slow).unwrap() <= 1e-10);
        let lit = tprod(a.column_slab(), &tprod(&u, a.row_slab()).unwrap()).unwrap();
        assert!(rel_error(&fast, &lit).unwrap() <= 1e-12);
        // scaling the core scales the update
        let scaled = a.delta_for(&u.scaled(-2.5)).unwrap();
        assert!(rel_error(&scaled, &fast.scaled(-2.5)).unwrap() <= 1e-12);
        assert_eq!(a.merge(), a.effective_weights());
    }

    #[test]
    fn set_core_checks_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = Tensor3::random_normal((4, 4, 2), &mut rng);
        let mut a = init_adapter(&base, 2).unwrap();
        assert!(a.set_core(Tensor3::zeros((3, 3, 2))).is_err());
    }

    #[test]
    fn param_counts() {
        let cfg = StackingConfig::unetr_base();
        let p = count_params(&cfg, 8);
        let cores: Vec<Dims> = p.groups.iter().map(|g| g.core_dims).collect();
        assert_eq!(cores, vec![(8, 8, 48), (8, 8, 12), (8, 8, 12)]);
        assert_eq!(p.groups.iter().map(|g| g.learnable).collect::<Vec<_>>(), vec![3072, 768, 768]);
        assert_eq!(p.total, 4608);
        assert!(p.to_string().contains("2.683 M"));
        let m = count_params_matrix_cur(&cfg, 2);
        assert_eq!((m.n_matrices, m.total), (72, 288));
    }

    #[test]
    fn param_counts_match_enumeration() {
        let cfg = StackingConfig::new(4, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = stack_layers(&random_layers(&cfg, &mut rng), &cfg).unwrap();
        for r in 1..=3 {
            let enumerated: usize = Group::ALL
                .iter()
                .map(|&g| init_adapter(s.group(g), r).unwrap().learnable_params())
                .sum();
            assert_eq!(count_params(&cfg, r).total, enumerated);
        }
    }
}
