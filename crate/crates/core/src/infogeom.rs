//! Dense symmetric-matrix kernels and the block geometry of the
//! target/nuisance split `υ = (θ, η)`.
//!
//! Every matrix function (square root, inverse square root, inverse,
//! log-determinant) goes through one symmetric eigendecomposition. An
//! eigenvalue below `RANK_TOL · λ_max` counts as rank deficiency.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

/// Default cap on the full dimension `p*`.
pub const DEFAULT_MAX_DIM: usize = 4096;

/// Relative eigenvalue floor below which a matrix is treated as singular.
pub const RANK_TOL: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Dense real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Checks squareness, symmetry and the default dimension cap.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_max_dim(m, DEFAULT_MAX_DIM)
    }

    pub fn with_max_dim(m: DMatrix<f64>, max_dim: usize) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Domain(format!(
                "matrix is {}x{}, not square",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() > max_dim {
            return Err(Error::Domain(format!(
                "dimension {} exceeds the configured cap {max_dim}",
                m.nrows()
            )));
        }
        let d = m.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if !a.is_finite() || (a - b).abs() > SYMMETRY_TOL * (1.0 + a.abs()) {
                    return Err(Error::Domain(format!(
                        "matrix is not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
            if !m[(i, i)].is_finite() {
                return Err(Error::Domain(format!("non-finite diagonal entry at {i}")));
            }
        }
        Ok(Self(m))
    }

    /// Like [`SymMatrix::new`] but also requires positive semidefiniteness.
    pub fn psd_checked(m: DMatrix<f64>) -> Result<Self> {
        let s = Self::new(m)?;
        let spec = s.spectral();
        if spec.min_eig() < -PSD_TOL * spec.spectral_norm() {
            return Err(Error::NumericalRank {
                block: "PSD-checked matrix".into(),
                min_eig: spec.min_eig(),
                norm: spec.spectral_norm(),
            });
        }
        Ok(s)
    }

    /// Wraps the symmetric part `(m + mᵀ)/2` of an internally computed matrix.
    pub(crate) fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn scaled_identity(d: usize, c: f64) -> Self {
        Self(DMatrix::identity(d, d) * c)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn from_row_slice(d: usize, entries: &[f64]) -> Result<Self> {
        check_dim(d * d, entries.len())?;
        Self::new(DMatrix::from_row_slice(d, d, entries))
    }

    pub fn empty() -> Self {
        Self(DMatrix::zeros(0, 0))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, c: f64) -> Self {
        Self(&self.0 * c)
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &SymMatrix, b: f64) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self(&self.0 * a + &other.0 * b))
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.0 * v))
    }

    /// `‖M^{1/2} v‖`, the norm induced by this matrix.
    pub fn induced_norm(&self, v: &DVector<f64>) -> f64 {
        self.quad_form(v).max(0.0).sqrt()
    }

    pub fn spectral(&self) -> Spectral {
        Spectral::of(self)
    }

    /// Loewner order test `self ≼ other` up to a relative tolerance.
    pub fn loewner_le(&self, other: &SymMatrix) -> bool {
        if self.dim() != other.dim() {
            return false;
        }
        if self.dim() == 0 {
            return true;
        }
        let diff = Self::symmetrize(&other.0 - &self.0);
        let scale = self.spectral().spectral_norm().max(other.spectral().spectral_norm());
        diff.spectral().min_eig() >= -PSD_TOL * scale.max(f64::MIN_POSITIVE)
    }
}

/// Symmetric eigendecomposition `M = U diag(λ) Uᵀ`.
#[derive(Debug, Clone)]
pub struct Spectral {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

impl Spectral {
    fn of(m: &SymMatrix) -> Self {
        if m.dim() == 0 {
            return Self {
                values: DVector::zeros(0),
                vectors: DMatrix::zeros(0, 0),
            };
        }
        let eig = SymmetricEigen::new(m.0.clone());
        Self {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    /// Largest absolute eigenvalue; zero for the empty matrix.
    pub fn spectral_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, &v| a.max(v.abs()))
    }

    pub fn min_eig(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eig(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let d = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..d {
            let fj = f(self.values[j]);
            scaled.column_mut(j).scale_mut(fj);
        }
        SymMatrix::symmetrize(scaled * self.vectors.transpose())
    }

    fn require_pd(&self, block: &str) -> Result<()> {
        if self.values.is_empty() {
            return Ok(());
        }
        let max = self.max_eig();
        let min = self.min_eig();
        if !(max > 0.0) || min <= RANK_TOL * max {
            return Err(Error::NumericalRank {
                block: block.to_string(),
                min_eig: min,
                norm: self.spectral_norm(),
            });
        }
        Ok(())
    }

    fn require_psd(&self, block: &str) -> Result<()> {
        if self.values.is_empty() {
            return Ok(());
        }
        if self.min_eig() < -PSD_TOL * self.spectral_norm() {
            return Err(Error::NumericalRank {
                block: block.to_string(),
                min_eig: self.min_eig(),
                norm: self.spectral_norm(),
            });
        }
        Ok(())
    }

    /// Symmetric PSD square root; small negative eigenvalues are clamped.
    pub fn sqrt(&self, block: &str) -> Result<SymMatrix> {
        self.require_psd(block)?;
        Ok(self.map(|l| l.max(0.0).sqrt()))
    }

    pub fn inv_sqrt(&self, block: &str) -> Result<SymMatrix> {
        self.require_pd(block)?;
        Ok(self.map(|l| 1.0 / l.sqrt()))
    }

    pub fn inverse(&self, block: &str) -> Result<SymMatrix> {
        self.require_pd(block)?;
        Ok(self.map(|l| 1.0 / l))
    }

    pub fn log_det(&self, block: &str) -> Result<f64> {
        self.require_pd(block)?;
        Ok(self.values.iter().map(|l| l.ln()).sum())
    }

    /// `M⁻¹ v` through the eigenbasis.
    pub fn solve(&self, v: &DVector<f64>, block: &str) -> Result<DVector<f64>> {
        check_dim(self.values.len(), v.len())?;
        self.require_pd(block)?;
        let mut coef = self.vectors.transpose() * v;
        for (c, l) in coef.iter_mut().zip(self.values.iter()) {
            *c /= l;
        }
        Ok(&self.vectors * coef)
    }
}

/// All kernels of a positive definite matrix at once.
#[derive(Debug, Clone)]
pub struct MatrixKernels {
    pub sqrt: SymMatrix,
    pub inv_sqrt: SymMatrix,
    pub spectral_norm: f64,
    pub log_det: f64,
    pub min_eig: f64,
}

/// Computes sqrt, inverse sqrt, spectral norm, log-determinant and the
/// minimum eigenvalue of a positive definite matrix.
pub fn matrix_kernels(m: &SymMatrix) -> Result<MatrixKernels> {
    let spec = m.spectral();
    Ok(MatrixKernels {
        sqrt: spec.sqrt("matrix")?,
        inv_sqrt: spec.inv_sqrt("matrix")?,
        spectral_norm: spec.spectral_norm(),
        log_det: spec.log_det("matrix")?,
        min_eig: spec.min_eig(),
    })
}

/// Target/target, target/nuisance and nuisance/nuisance blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    pub tt: SymMatrix,
    pub te: DMatrix<f64>,
    pub ee: SymMatrix,
}

impl Blocks {
    pub fn reassemble(&self) -> SymMatrix {
        let p = self.tt.dim();
        let p1 = self.ee.dim();
        let mut m = DMatrix::zeros(p + p1, p + p1);
        m.view_mut((0, 0), (p, p)).copy_from(self.tt.matrix());
        m.view_mut((0, p), (p, p1)).copy_from(&self.te);
        m.view_mut((p, 0), (p1, p)).copy_from(&self.te.transpose());
        m.view_mut((p, p), (p1, p1)).copy_from(self.ee.matrix());
        SymMatrix(m)
    }
}

/// Splits `m` into its `p × p`, `p × p₁` and `p₁ × p₁` blocks.
pub fn block_split(m: &SymMatrix, p: usize) -> Result<Blocks> {
    let d = m.dim();
    if p < 1 || p > d {
        return Err(Error::Domain(format!(
            "target dimension {p} outside 1..={d}"
        )));
    }
    let p1 = d - p;
    let a = m.matrix();
    Ok(Blocks {
        tt: SymMatrix(a.view((0, 0), (p, p)).into_owned()),
        te: a.view((0, p), (p, p1)).into_owned(),
        ee: SymMatrix(a.view((p, p), (p1, p1)).into_owned()),
    })
}

/// The pair `(D₀², V₀²)` with the target dimension `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockInfoPair {
    d2: SymMatrix,
    v2: SymMatrix,
    p: usize,
}

impl BlockInfoPair {
    pub fn new(d2: SymMatrix, v2: SymMatrix, p: usize) -> Result<Self> {
        check_dim(d2.dim(), v2.dim())?;
        if p < 1 || p > d2.dim() {
            return Err(Error::Domain(format!(
                "target dimension {p} outside 1..={}",
                d2.dim()
            )));
        }
        Ok(Self { d2, v2, p })
    }

    /// Correctly specified case `D₀² = V₀²`.
    pub fn matched(d2: SymMatrix, p: usize) -> Result<Self> {
        Self::new(d2.clone(), d2, p)
    }

    pub fn d2(&self) -> &SymMatrix {
        &self.d2
    }

    pub fn v2(&self) -> &SymMatrix {
        &self.v2
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn p_star(&self) -> usize {
        self.d2.dim()
    }

    pub fn p1(&self) -> usize {
        self.d2.dim() - self.p
    }

    /// `(Dθθ², A, H²)`.
    pub fn d_blocks(&self) -> Blocks {
        block_split(&self.d2, self.p).expect("p validated at construction")
    }

    /// `(Vθθ², B, Q²)`.
    pub fn v_blocks(&self) -> Blocks {
        block_split(&self.v2, self.p).expect("p validated at construction")
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            d2: self.d2.scale(c),
            v2: self.v2.scale(c),
            p: self.p,
        }
    }
}

/// Schur complement `M_tt − M_te M_ee⁻¹ M_teᵀ` of the trailing block.
pub fn schur_complement(m: &SymMatrix, p: usize) -> Result<SymMatrix> {
    let b = block_split(m, p)?;
    if b.ee.dim() == 0 {
        return Ok(b.tt);
    }
    let ee_inv = b.ee.spectral().inverse("nuisance block H²")?;
    let corr = &b.te * ee_inv.matrix() * b.te.transpose();
    Ok(SymMatrix::symmetrize(b.tt.matrix() - corr))
}

/// Efficient information `D̆₀² = Dθθ² − A H⁻² Aᵀ`.
pub fn schur_target(info: &BlockInfoPair) -> Result<SymMatrix> {
    schur_complement(info.d2(), info.p())
}

/// Efficient score and its normalised version.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficientScore {
    /// `∇̆_θ = ∇_θ − A H⁻² ∇_η`.
    pub score: DVector<f64>,
    /// `ξ̆ = (D̆₀²)^{−1/2} ∇̆_θ`.
    pub xi: DVector<f64>,
}

pub fn efficient_score(info: &BlockInfoPair, grad: &DVector<f64>) -> Result<EfficientScore> {
    check_dim(info.p_star(), grad.len())?;
    let p = info.p();
    let b = info.d_blocks();
    let g_theta = grad.rows(0, p).into_owned();
    let score = if info.p1() == 0 {
        g_theta
    } else {
        let g_eta = grad.rows(p, info.p1()).into_owned();
        let h_solve = b.ee.spectral().solve(&g_eta, "nuisance block H²")?;
        g_theta - &b.te * h_solve
    };
    let breve = schur_target(info)?;
    let inv_sqrt = breve.spectral().inv_sqrt("efficient information D̆₀²")?;
    let xi = inv_sqrt.matrix() * &score;
    Ok(EfficientScore { score, xi })
}

/// Smallest constants satisfying the identifiability condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Identifiability {
    pub a_theta: f64,
    pub a_eta: f64,
    pub a_full: f64,
    /// Spectral norm of `Dθθ^{-1} A H⁻² Aᵀ Dθθ^{-1}`; identifiable iff `< 1`.
    pub nu_hat: f64,
}

fn sandwich_norm(d2: &SymMatrix, v2: &SymMatrix, block: &str) -> Result<f64> {
    if d2.dim() == 0 {
        return Ok(0.0);
    }
    let inv = d2.spectral().inv_sqrt(block)?;
    let s = SymMatrix::symmetrize(inv.matrix() * v2.matrix() * inv.matrix());
    Ok(s.spectral().spectral_norm())
}

/// `‖M_tt^{-1/2} M_te M_ee⁻¹ M_teᵀ M_tt^{-1/2}‖∞`.
pub(crate) fn angle_norm(m: &SymMatrix, p: usize) -> Result<f64> {
    let b = block_split(m, p)?;
    if b.ee.dim() == 0 {
        return Ok(0.0);
    }
    let tt_inv = b.tt.spectral().inv_sqrt("target block Dθθ²")?;
    let ee_inv = b.ee.spectral().inverse("nuisance block H²")?;
    let inner = &b.te * ee_inv.matrix() * b.te.transpose();
    let s = SymMatrix::symmetrize(tt_inv.matrix() * inner * tt_inv.matrix());
    Ok(s.spectral().spectral_norm())
}

pub fn identifiability_report(info: &BlockInfoPair) -> Result<Identifiability> {
    let d = info.d_blocks();
    let v = info.v_blocks();
    let a_theta = sandwich_norm(&d.tt, &v.tt, "target block Dθθ²")?.sqrt();
    let a_eta = sandwich_norm(&d.ee, &v.ee, "nuisance block H²")?.sqrt();
    let a_full = sandwich_norm(info.d2(), info.v2(), "full information D₀²")?.sqrt();
    let nu_hat = angle_norm(info.d2(), info.p())?;
    Ok(Identifiability {
        a_theta,
        a_eta,
        a_full,
        nu_hat,
    })
}
