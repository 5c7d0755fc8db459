//! The quasi-likelihood model contract and the built-in models.
//!
//! A model is one realized dataset of a known law. It exposes the
//! log-likelihood `L(υ)`, its gradient, the truth `υ*`, the information pair
//! `(D₀², V₀²)` and, where available, the expected log-likelihood `𝔼L(υ)`.
//! `resample` draws a fresh dataset of the same law.

mod critdim;
mod gaussian;
mod logistic;

use std::fmt::Debug;
use std::io::Write;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::infogeom::{angle_norm, schur_complement, BlockInfoPair, SymMatrix};

pub use critdim::{make_critdim, premise_holds, CritDimConfig, CritDimModel};
pub use gaussian::{make_gaussian_shift, make_quadratic, GaussianShift, QuadraticModel};
pub use logistic::{make_logistic_iid, DesignSpec, LogisticModel, QUADRATURE_SAMPLES};

/// Parameter `υ = (θ, η)` with the split index `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: DVector<f64>,
    p: usize,
}

impl ParamVector {
    pub fn new(values: DVector<f64>, p: usize) -> Result<Self> {
        if p < 1 || p > values.len() {
            return Err(Error::Domain(format!(
                "split index {p} outside 1..={}",
                values.len()
            )));
        }
        Ok(Self { values, p })
    }

    pub fn from_slice(values: &[f64], p: usize) -> Result<Self> {
        Self::new(DVector::from_column_slice(values), p)
    }

    pub fn zeros(p_star: usize, p: usize) -> Result<Self> {
        Self::new(DVector::zeros(p_star), p)
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn p_star(&self) -> usize {
        self.values.len()
    }

    pub fn theta(&self) -> DVector<f64> {
        self.values.rows(0, self.p).into_owned()
    }

    pub fn eta(&self) -> DVector<f64> {
        self.values.rows(self.p, self.values.len() - self.p).into_owned()
    }

    /// Rejoins `θ` and `η`.
    pub fn join(theta: &DVector<f64>, eta: &DVector<f64>) -> Result<Self> {
        let mut v = DVector::zeros(theta.len() + eta.len());
        v.rows_mut(0, theta.len()).copy_from(theta);
        v.rows_mut(theta.len(), eta.len()).copy_from(eta);
        Self::new(v, theta.len())
    }
}

/// Behaviour every model provides. Implementations are immutable; all
/// methods are pure and may be called concurrently.
pub trait QuasiLikelihoodModel: Send + Sync + Debug {
    /// Full dimension `p*`.
    fn dim(&self) -> usize;
    /// Target dimension `p`.
    fn split(&self) -> usize;
    fn sample_size(&self) -> usize;
    fn loglik(&self, upsilon: &DVector<f64>) -> f64;
    fn grad(&self, upsilon: &DVector<f64>) -> DVector<f64>;
    fn truth(&self) -> ParamVector;
    fn info_pair(&self) -> &BlockInfoPair;

    fn expected_loglik(&self, _upsilon: &DVector<f64>) -> Option<f64> {
        None
    }

    /// `∇𝔼L(υ)`; by default central differences of `expected_loglik`.
    fn expected_grad(&self, upsilon: &DVector<f64>) -> Option<DVector<f64>> {
        self.expected_loglik(upsilon)?;
        let mut g = DVector::zeros(upsilon.len());
        let mut u = upsilon.clone();
        for i in 0..upsilon.len() {
            let h = FD_STEP * (1.0 + upsilon[i].abs());
            u[i] = upsilon[i] + h;
            let up = self.expected_loglik(&u)?;
            u[i] = upsilon[i] - h;
            let dn = self.expected_loglik(&u)?;
            u[i] = upsilon[i];
            g[i] = (up - dn) / (2.0 * h);
        }
        Some(g)
    }

    /// Fresh dataset of the same law, fully determined by `seed`.
    fn resample(&self, seed: u64) -> Box<dyn QuasiLikelihoodModel>;

    /// Per-observation information `𝔽` for i.i.d. models.
    fn per_observation_info(&self) -> Option<BlockInfoPair> {
        None
    }

    /// Line-oriented CSV dump of the realized data.
    fn write_dataset(&self, out: &mut dyn Write) -> Result<()>;

    /// `true` when `L` is exactly quadratic in `υ`.
    fn is_quadratic(&self) -> bool {
        false
    }

    fn as_critdim(&self) -> Option<&CritDimModel> {
        None
    }
}

/// Relative step used for finite differences throughout.
pub const FD_STEP: f64 = 1e-5;

/// Central finite-difference gradient of `loglik` with step `1e-5·(1+|υᵢ|)`.
pub fn fd_grad(model: &dyn QuasiLikelihoodModel, upsilon: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(upsilon.len());
    let mut u = upsilon.clone();
    for i in 0..upsilon.len() {
        let h = FD_STEP * (1.0 + upsilon[i].abs());
        u[i] = upsilon[i] + h;
        let up = model.loglik(&u);
        u[i] = upsilon[i] - h;
        let dn = model.loglik(&u);
        u[i] = upsilon[i];
        g[i] = (up - dn) / (2.0 * h);
    }
    g
}

/// Per-observation information `𝔽` and the efficient block `ĭ𝔽`.
pub fn fisher_blocks_iid(model: &dyn QuasiLikelihoodModel) -> Result<(BlockInfoPair, SymMatrix)> {
    let f = model.per_observation_info().ok_or_else(|| {
        Error::Capability("model does not expose per-observation information".into())
    })?;
    let breve = schur_complement(f.d2(), f.p())?;
    Ok((f, breve))
}

/// `‖𝔽θθ^{-1/2} 𝔽θη 𝔽ηη⁻¹ 𝔽θηᵀ 𝔽θθ^{-1/2}‖∞`; identifiability needs `< 1`.
pub fn check_iota(f: &BlockInfoPair) -> Result<f64> {
    angle_norm(f.d2(), f.p())
}

/// Reads a dataset CSV written by `write_dataset` into its header and rows.
pub fn read_dataset(input: impl std::io::Read) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad number {s:?} in dataset: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub(crate) fn write_rows(
    out: &mut dyn Write,
    header: &[String],
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}
