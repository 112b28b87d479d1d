//! Finite-horizon system level synthesis for the linearized error dynamics.
//!
//! The stacked error system over blocks `k = 0..=N` is
//!
//! ```text
//! Δζ = 𝒵𝒜 Δζ + 𝒵ℬ Δα + d,     Δα = 𝒦𝒞 Δζ
//! ```
//!
//! and the system response collects the closed-loop maps from `d` (and the
//! output channel `v`) to `(Δζ, Δα)`. Everything is computed blockwise by
//! forward substitution; dense operators are only built on request.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linearization::JacobianPair;

/// Block lower-triangular-ish operator stored as a sparse map of blocks.
/// Missing blocks are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    nblocks: usize,
    row_size: usize,
    col_size: usize,
    blocks: BTreeMap<(usize, usize), DMatrix<f64>>,
}

impl BlockMatrix {
    pub fn zeros(nblocks: usize, row_size: usize, col_size: usize) -> Self {
        Self {
            nblocks,
            row_size,
            col_size,
            blocks: BTreeMap::new(),
        }
    }

    pub fn nblocks(&self) -> usize {
        self.nblocks
    }

    pub fn row_size(&self) -> usize {
        self.row_size
    }

    pub fn col_size(&self) -> usize {
        self.col_size
    }

    /// Stored block, `None` when it is structurally zero.
    pub fn get(&self, k: usize, j: usize) -> Option<&DMatrix<f64>> {
        self.blocks.get(&(k, j))
    }

    /// Block `(k, j)` as an owned matrix (zero if absent).
    pub fn block(&self, k: usize, j: usize) -> DMatrix<f64> {
        self.get(k, j)
            .cloned()
            .unwrap_or_else(|| DMatrix::zeros(self.row_size, self.col_size))
    }

    pub fn set(&mut self, k: usize, j: usize, m: DMatrix<f64>) {
        assert!(
            k < self.nblocks && j < self.nblocks,
            "block index out of range"
        );
        assert_eq!(m.shape(), (self.row_size, self.col_size), "block shape");
        self.blocks.insert((k, j), m);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &DMatrix<f64>)> {
        self.blocks.iter()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nblocks * self.row_size, self.nblocks * self.col_size);
        for ((k, j), m) in &self.blocks {
            out.view_mut((k * self.row_size, j * self.col_size), m.shape())
                .copy_from(m);
        }
        out
    }

    /// Largest absolute entry in any strictly upper block.
    pub fn upper_residual(&self) -> f64 {
        self.blocks
            .iter()
            .filter(|((k, j), _)| j > k)
            .map(|(_, m)| m.amax())
            .fold(0.0, f64::max)
    }

    /// Sum of induced ∞-norms of all stored blocks.
    pub fn block_inf_norm_sum(&self) -> f64 {
        self.blocks.values().map(inf_norm).sum()
    }
}

/// Induced ∞-norm, the largest absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Jacobians over the horizon plus the dimensions needed to stack them.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    n: usize,
    d: usize,
    horizon: usize,
    /// `A_0..A_{N−1}` followed by the terminal zero block.
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
}

/// Stacks `N` Jacobian pairs, appending the terminal zero blocks.
pub fn build_stacked(jacobians: &[JacobianPair], n: usize, d: usize) -> Result<StackedSystem> {
    if jacobians.is_empty() {
        return Err(Error::InvalidInput(
            "need at least one Jacobian pair".into(),
        ));
    }
    let s = n + d;
    let mut a = Vec::with_capacity(jacobians.len() + 1);
    let mut b = Vec::with_capacity(jacobians.len() + 1);
    for jp in jacobians {
        if jp.a.shape() != (s, s) {
            return Err(Error::DimensionMismatch {
                context: "A block",
                expected: s,
                found: jp.a.nrows().max(jp.a.ncols()),
            });
        }
        if jp.b.shape() != (s, 1) {
            return Err(Error::DimensionMismatch {
                context: "B block rows",
                expected: s,
                found: jp.b.nrows(),
            });
        }
        a.push(jp.a.clone());
        b.push(jp.b.clone());
    }
    a.push(DMatrix::zeros(s, s));
    b.push(DMatrix::zeros(s, 1));
    Ok(StackedSystem {
        n,
        d,
        horizon: jacobians.len(),
        a,
        b,
    })
}

impl StackedSystem {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// State block size `n + d`.
    pub fn state_dim(&self) -> usize {
        self.n + self.d
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of blocks, `N + 1`.
    pub fn nblocks(&self) -> usize {
        self.horizon + 1
    }

    pub fn a_block(&self, k: usize) -> &DMatrix<f64> {
        &self.a[k]
    }

    pub fn b_block(&self, k: usize) -> &DMatrix<f64> {
        &self.b[k]
    }

    /// Output matrix `C = [I_n | O]`.
    pub fn c(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.n, self.state_dim());
        c.view_mut((0, 0), (self.n, self.n)).fill_with_identity();
        c
    }

    fn blkdiag(&self, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
        let (r, c) = blocks[0].shape();
        let nb = blocks.len();
        let mut out = DMatrix::zeros(nb * r, nb * c);
        for (k, m) in blocks.iter().enumerate() {
            out.view_mut((k * r, k * c), (r, c)).copy_from(m);
        }
        out
    }

    pub fn a_dense(&self) -> DMatrix<f64> {
        self.blkdiag(&self.a)
    }

    pub fn b_dense(&self) -> DMatrix<f64> {
        self.blkdiag(&self.b)
    }

    pub fn c_dense(&self) -> DMatrix<f64> {
        let c = self.c();
        self.blkdiag(&alloc::vec![c; self.nblocks()])
    }

    /// Block downshift with identity blocks on the first subdiagonal.
    pub fn z_dense(&self) -> DMatrix<f64> {
        let s = self.state_dim();
        let total = s * self.nblocks();
        let mut z = DMatrix::zeros(total, total);
        for i in 0..total - s {
            z[(i + s, i)] = 1.0;
        }
        z
    }
}

/// Causal output-feedback gains `K_{k,j}` (1 × n blocks, `j ≤ k`).
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    k: BlockMatrix,
}

impl GainSchedule {
    pub fn zero(n: usize, horizon: usize) -> Self {
        Self {
            k: BlockMatrix::zeros(horizon + 1, 1, n),
        }
    }

    /// Wraps a block matrix, rejecting nonzero blocks above the diagonal.
    pub fn from_blocks(k: BlockMatrix) -> Result<Self> {
        if k.row_size() != 1 {
            return Err(Error::DimensionMismatch {
                context: "gain block rows",
                expected: 1,
                found: k.row_size(),
            });
        }
        if k.upper_residual() != 0.0 {
            return Err(Error::InvalidInput("gain schedule is not causal".into()));
        }
        Ok(Self { k })
    }

    /// `K_{k,k} = κ (B_k^ξ)ᵀ` on the diagonal, zero elsewhere. Feeds the
    /// current iterate error back along the gradient direction.
    pub fn proportional(sys: &StackedSystem, kappa: f64) -> Self {
        let n = sys.n();
        let mut k = BlockMatrix::zeros(sys.nblocks(), 1, n);
        if kappa != 0.0 {
            for t in 0..sys.horizon() {
                let bxi = sys.b_block(t).rows(0, n).transpose() * kappa;
                if bxi.amax() > 0.0 {
                    k.set(t, t, bxi);
                }
            }
        }
        Self { k }
    }

    pub fn blocks(&self) -> &BlockMatrix {
        &self.k
    }

    pub fn block(&self, k: usize, j: usize) -> DMatrix<f64> {
        self.k.block(k, j)
    }

    pub fn is_zero(&self) -> bool {
        self.k.iter().all(|(_, m)| m.amax() == 0.0)
    }
}

/// The four closed-loop maps `Φζd, Φζv, Φαd, Φαv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemResponse {
    pub zeta_d: BlockMatrix,
    pub zeta_v: BlockMatrix,
    pub alpha_d: BlockMatrix,
    pub alpha_v: BlockMatrix,
}

/// Which of the four maps to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseMap {
    ZetaD,
    ZetaV,
    AlphaD,
    AlphaV,
}

impl SystemResponse {
    pub fn map(&self, which: ResponseMap) -> &BlockMatrix {
        match which {
            ResponseMap::ZetaD => &self.zeta_d,
            ResponseMap::ZetaV => &self.zeta_v,
            ResponseMap::AlphaD => &self.alpha_d,
            ResponseMap::AlphaV => &self.alpha_v,
        }
    }

    pub fn block(&self, which: ResponseMap, k: usize, j: usize) -> DMatrix<f64> {
        self.map(which).block(k, j)
    }

    pub fn nblocks(&self) -> usize {
        self.zeta_d.nblocks()
    }

    /// `[(Φζd)_{k,j}; (Φαd)_{k,j}]`, the map from `d_j` to `(Δζ_k, Δα_k)`.
    pub fn disturbance_block(&self, k: usize, j: usize) -> DMatrix<f64> {
        let x = self.zeta_d.block(k, j);
        let u = self.alpha_d.block(k, j);
        let s = x.ncols();
        let mut out = DMatrix::zeros(x.nrows() + 1, s);
        out.view_mut((0, 0), x.shape()).copy_from(&x);
        out.view_mut((x.nrows(), 0), (1, s)).copy_from(&u);
        out
    }

    /// Regularizer: sum of block ∞-norms over all four maps.
    pub fn regularizer(&self) -> f64 {
        self.zeta_d.block_inf_norm_sum()
            + self.zeta_v.block_inf_norm_sum()
            + self.alpha_d.block_inf_norm_sum()
            + self.alpha_v.block_inf_norm_sum()
    }
}

/// Closed-loop response for the given causal gains by block forward
/// substitution.
pub fn response_from_gains(sys: &StackedSystem, gains: &GainSchedule) -> Result<SystemResponse> {
    let nb = sys.nblocks();
    let (n, s) = (sys.n(), sys.state_dim());
    if gains.blocks().nblocks() != nb || gains.blocks().col_size() != n {
        return Err(Error::DimensionMismatch {
            context: "gain schedule blocks",
            expected: nb,
            found: gains.blocks().nblocks(),
        });
    }
    let kb = gains.blocks();
    let mut zeta_d = BlockMatrix::zeros(nb, s, s);
    let mut alpha_d = BlockMatrix::zeros(nb, 1, s);
    let mut zeta_v = BlockMatrix::zeros(nb, s, n);
    let mut alpha_v = BlockMatrix::zeros(nb, 1, n);

    // Σ_{i ∈ range} K_{k,i} C X_{i,j}, where C X keeps the first n rows.
    let feedback = |k: usize, lo: usize, x: &BlockMatrix, j: usize| -> Option<DMatrix<f64>> {
        let mut acc: Option<DMatrix<f64>> = None;
        for i in lo..=k {
            if let (Some(kk), Some(xi)) = (kb.get(k, i), x.get(i, j)) {
                let term = kk * xi.rows(0, n);
                acc = Some(match acc {
                    Some(a) => a + term,
                    None => term,
                });
            }
        }
        acc
    };

    for j in 0..nb {
        zeta_d.set(j, j, DMatrix::identity(s, s));
        if let Some(u) = feedback(j, j, &zeta_d, j) {
            alpha_d.set(j, j, u);
        }
        for k in j + 1..nb {
            let mut x = sys.a_block(k - 1) * zeta_d.block(k - 1, j);
            if let Some(u) = alpha_d.get(k - 1, j) {
                x += sys.b_block(k - 1) * u;
            }
            zeta_d.set(k, j, x);
            if let Some(u) = feedback(k, j, &zeta_d, j) {
                alpha_d.set(k, j, u);
            }
        }

        if let Some(kjj) = kb.get(j, j) {
            alpha_v.set(j, j, kjj.clone());
        }
        for k in j + 1..nb {
            let mut y = sys.a_block(k - 1) * zeta_v.block(k - 1, j);
            if let Some(v) = alpha_v.get(k - 1, j) {
                y += sys.b_block(k - 1) * v;
            }
            let nonzero = y.amax() != 0.0;
            if nonzero {
                zeta_v.set(k, j, y);
            }
            let mut v = feedback(k, j + 1, &zeta_v, j);
            if let Some(kkj) = kb.get(k, j) {
                v = Some(match v {
                    Some(a) => a + kkj,
                    None => kkj.clone(),
                });
            }
            if let Some(v) = v {
                alpha_v.set(k, j, v);
            }
        }
    }
    Ok(SystemResponse {
        zeta_d,
        zeta_v,
        alpha_d,
        alpha_v,
    })
}

/// Response with zero gains: `Φζd = (I − 𝒵𝒜)⁻¹`, the other maps vanish.
pub fn open_loop_response(sys: &StackedSystem) -> SystemResponse {
    response_from_gains(sys, &GainSchedule::zero(sys.n(), sys.horizon()))
        .expect("zero gains always match the system")
}

/// Recovers `K = Φαv − Φαd Φζd⁻¹ Φζv` blockwise.
pub fn gains_from_response(phi: &SystemResponse) -> Result<GainSchedule> {
    let nb = phi.nblocks();
    let n = phi.zeta_v.col_size();
    // W = Φζd⁻¹ Φζv by block forward substitution, one block column at a time.
    let mut w = BlockMatrix::zeros(nb, phi.zeta_d.row_size(), n);
    let mut diag_inv = Vec::with_capacity(nb);
    for k in 0..nb {
        let dkk = phi.zeta_d.block(k, k);
        let inv = dkk
            .try_inverse()
            .ok_or(Error::Singular("diagonal block of Phi_zd"))?;
        diag_inv.push(inv);
    }
    for j in 0..nb {
        for k in j..nb {
            let mut rhs = phi.zeta_v.block(k, j);
            for i in j..k {
                if let (Some(dki), Some(wij)) = (phi.zeta_d.get(k, i), w.get(i, j)) {
                    rhs -= dki * wij;
                }
            }
            if rhs.amax() != 0.0 {
                w.set(k, j, &diag_inv[k] * rhs);
            }
        }
    }
    let mut kb = BlockMatrix::zeros(nb, 1, n);
    for k in 0..nb {
        for j in 0..=k {
            let mut kk = phi.alpha_v.block(k, j);
            for i in j..=k {
                if let (Some(u), Some(wij)) = (phi.alpha_d.get(k, i), w.get(i, j)) {
                    kk -= u * wij;
                }
            }
            if kk.amax() != 0.0 {
                kb.set(k, j, kk);
            }
        }
    }
    Ok(GainSchedule { k: kb })
}

/// Max-abs residuals of the affine SLS constraints and of causality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseResiduals {
    /// `[I − 𝒵𝒜, −𝒵ℬ] Φ = [I, O]`
    pub controllability: f64,
    /// `Φ [I − 𝒵𝒜; −𝒞] = [I; O]`
    pub observability: f64,
    /// Largest entry in a strictly upper block of any map.
    pub causality: f64,
}

impl ResponseResiduals {
    pub const TOLERANCE: f64 = 1e-8;

    pub fn max(&self) -> f64 {
        self.controllability
            .max(self.observability)
            .max(self.causality)
    }

    pub fn is_valid(&self) -> bool {
        self.max() < Self::TOLERANCE
    }
}

pub fn validate_response(sys: &StackedSystem, phi: &SystemResponse) -> ResponseResiduals {
    let nb = sys.nblocks();
    let (n, s) = (sys.n(), sys.state_dim());
    let c = sys.c();
    let mut ctrl: f64 = 0.0;
    let mut obs: f64 = 0.0;
    for k in 0..nb {
        for j in 0..nb {
            // Row block k of (I − 𝒵𝒜)M − 𝒵ℬU is M_k − A_{k−1}M_{k−1} − B_{k−1}U_{k−1}.
            let mut r1 = phi.zeta_d.block(k, j);
            let mut r2 = phi.zeta_v.block(k, j);
            if k > 0 {
                r1 -= sys.a_block(k - 1) * phi.zeta_d.block(k - 1, j)
                    + sys.b_block(k - 1) * phi.alpha_d.block(k - 1, j);
                r2 -= sys.a_block(k - 1) * phi.zeta_v.block(k - 1, j)
                    + sys.b_block(k - 1) * phi.alpha_v.block(k - 1, j);
            }
            if k == j {
                r1 -= DMatrix::<f64>::identity(s, s);
            }
            ctrl = ctrl.max(r1.amax()).max(r2.amax());

            // Column block j of M(I − 𝒵𝒜) − V𝒞 is M_{·,j} − M_{·,j+1}A_j − V_{·,j}C.
            let mut o1 = phi.zeta_d.block(k, j) - phi.zeta_v.block(k, j) * &c;
            let mut o2 = phi.alpha_d.block(k, j) - phi.alpha_v.block(k, j) * &c;
            if j + 1 < nb {
                o1 -= phi.zeta_d.block(k, j + 1) * sys.a_block(j);
                o2 -= phi.alpha_d.block(k, j + 1) * sys.a_block(j);
            }
            if k == j {
                o1 -= DMatrix::<f64>::identity(s, s);
            }
            obs = obs.max(o1.amax()).max(o2.amax());
        }
    }
    let _ = n;
    let causality = phi
        .zeta_d
        .upper_residual()
        .max(phi.zeta_v.upper_residual())
        .max(phi.alpha_d.upper_residual())
        .max(phi.alpha_v.upper_residual());
    ResponseResiduals {
        controllability: ctrl,
        observability: obs,
        causality,
    }
}
