//! I.i.d. logistic regression `P(y = 1 | x) = σ(xᵀυ*)` with
//! `L(υ) = Σᵢ [yᵢxᵢᵀυ − log(1 + exp(xᵢᵀυ))]`.
//!
//! Population quantities (`𝔽`, `𝔼L`) are averages over a fixed quadrature
//! sample of the design law, so they are deterministic and shared by every
//! resampled dataset.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{write_rows, ParamVector, QuasiLikelihoodModel};
use crate::error::{Error, Result};
use crate::infogeom::{BlockInfoPair, SymMatrix};
use crate::seed;

/// Size of the design-law quadrature sample.
pub const QUADRATURE_SAMPLES: usize = 200_000;
const QUADRATURE_SEED: u64 = 0x51AB_1E5E_ED00_0001;

/// Covariate law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DesignSpec {
    /// Independent standard Gaussian columns.
    StandardGaussian,
    /// Unit-variance Gaussian columns with common correlation `rho ∈ [0, 1)`.
    Equicorrelated(f64),
}

impl DesignSpec {
    fn validate(self) -> Result<Self> {
        match self {
            DesignSpec::Equicorrelated(r) if !(0.0..1.0).contains(&r) => Err(Error::Config(format!(
                "equicorrelation {r} outside [0, 1)"
            ))),
            d => Ok(d),
        }
    }

    fn sample_row(self, rng: &mut impl Rng, out: &mut [f64]) {
        match self {
            DesignSpec::StandardGaussian => {
                for v in out.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
            }
            DesignSpec::Equicorrelated(rho) => {
                let common: f64 = StandardNormal.sample(rng);
                let (a, b) = ((1.0 - rho).sqrt(), rho.sqrt());
                for v in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = a * z + b * common;
                }
            }
        }
    }

    fn sample(self, rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(rows, cols);
        let mut buf = vec![0.0; cols];
        for i in 0..rows {
            self.sample_row(rng, &mut buf);
            for (j, &v) in buf.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[derive(Debug)]
struct Quadrature {
    xs: DMatrix<f64>,
    mu: DVector<f64>,
    fisher: BlockInfoPair,
}

impl Quadrature {
    fn build(design: DesignSpec, truth: &ParamVector) -> Result<Self> {
        let d = truth.p_star();
        let mut rng = seed::rng(QUADRATURE_SEED);
        let xs = design.sample(&mut rng, QUADRATURE_SAMPLES, d);
        let eta = &xs * truth.values();
        let mu = eta.map(sigmoid);
        let mut weighted = xs.clone();
        for (k, mut row) in weighted.row_iter_mut().enumerate() {
            row *= (mu[k] * (1.0 - mu[k])).sqrt();
        }
        let f = weighted.transpose() * &weighted / QUADRATURE_SAMPLES as f64;
        let f = SymMatrix::new((&f + f.transpose()) * 0.5)?;
        f.spectral().inv_sqrt("per-observation information 𝔽")?;
        Ok(Self {
            xs,
            mu,
            fisher: BlockInfoPair::matched(f, truth.p())?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LogisticModel {
    design: DesignSpec,
    truth: ParamVector,
    x: DMatrix<f64>,
    y: DVector<f64>,
    quad: Arc<Quadrature>,
    info: BlockInfoPair,
}

/// `n` observations of dimension `p_star` with target split `p`.
pub fn make_logistic_iid(
    n: usize,
    p: usize,
    p_star: usize,
    truth: ParamVector,
    design: DesignSpec,
    seed: u64,
) -> Result<LogisticModel> {
    if truth.p_star() != p_star || truth.p() != p {
        return Err(Error::Config(format!(
            "truth has shape (p={}, p*={}), expected (p={p}, p*={p_star})",
            truth.p(),
            truth.p_star()
        )));
    }
    if n < p_star {
        return Err(Error::Domain(format!("n = {n} is below p* = {p_star}")));
    }
    let design = design.validate()?;
    let quad = Arc::new(Quadrature::build(design, &truth)?);
    let info = quad.fisher.scale(n as f64);
    let mut m = LogisticModel {
        design,
        truth,
        x: DMatrix::zeros(0, p_star),
        y: DVector::zeros(0),
        quad,
        info,
    };
    m.draw(n, seed);
    Ok(m)
}

impl LogisticModel {
    fn draw(&mut self, n: usize, seed: u64) {
        let mut rng = seed::rng(seed);
        self.x = self.design.sample(&mut rng, n, self.truth.p_star());
        let eta = &self.x * self.truth.values();
        self.y = eta.map(|t| if rng.random::<f64>() < sigmoid(t) { 1.0 } else { 0.0 });
    }

    /// Rebuilds a model from a dataset written by `write_dataset`.
    pub fn from_dataset(
        header: &[String],
        rows: &[Vec<f64>],
        truth: ParamVector,
        design: DesignSpec,
    ) -> Result<Self> {
        let d = truth.p_star();
        if header.len() != d + 1 || header[0] != "y" {
            return Err(Error::Parse(format!(
                "logistic dataset needs columns y,x1..x{d}; got {}",
                header.join(",")
            )));
        }
        let n = rows.len();
        let mut m = make_logistic_iid(d.max(1), truth.p(), d, truth, design, 0)?;
        m.x = DMatrix::from_fn(n, d, |i, j| rows[i][j + 1]);
        m.y = DVector::from_fn(n, |i, _| rows[i][0]);
        m.info = m.quad.fisher.scale(n as f64);
        Ok(m)
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }
}

impl QuasiLikelihoodModel for LogisticModel {
    fn dim(&self) -> usize {
        self.truth.p_star()
    }

    fn split(&self) -> usize {
        self.truth.p()
    }

    fn sample_size(&self) -> usize {
        self.y.len()
    }

    fn loglik(&self, u: &DVector<f64>) -> f64 {
        let eta = &self.x * u;
        eta.iter()
            .zip(self.y.iter())
            .map(|(&t, &y)| y * t - softplus(t))
            .sum()
    }

    fn grad(&self, u: &DVector<f64>) -> DVector<f64> {
        let eta = &self.x * u;
        let resid = DVector::from_fn(eta.len(), |i, _| self.y[i] - sigmoid(eta[i]));
        self.x.tr_mul(&resid)
    }

    fn truth(&self) -> ParamVector {
        self.truth.clone()
    }

    fn info_pair(&self) -> &BlockInfoPair {
        &self.info
    }

    fn expected_loglik(&self, u: &DVector<f64>) -> Option<f64> {
        let eta = &self.quad.xs * u;
        let s: f64 = eta
            .iter()
            .zip(self.quad.mu.iter())
            .map(|(&t, &m)| m * t - softplus(t))
            .sum();
        Some(self.sample_size() as f64 * s / QUADRATURE_SAMPLES as f64)
    }

    fn expected_grad(&self, u: &DVector<f64>) -> Option<DVector<f64>> {
        let eta = &self.quad.xs * u;
        let resid = DVector::from_fn(eta.len(), |i, _| self.quad.mu[i] - sigmoid(eta[i]));
        Some(self.quad.xs.tr_mul(&resid) * (self.sample_size() as f64 / QUADRATURE_SAMPLES as f64))
    }

    fn resample(&self, seed: u64) -> Box<dyn QuasiLikelihoodModel> {
        let mut m = self.clone();
        m.draw(self.sample_size(), seed);
        Box::new(m)
    }

    fn per_observation_info(&self) -> Option<BlockInfoPair> {
        Some(self.quad.fisher.clone())
    }

    fn write_dataset(&self, out: &mut dyn Write) -> Result<()> {
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.dim()).map(|j| format!("x{j}")));
        let rows = (0..self.sample_size()).map(|i| {
            let mut r = vec![self.y[i]];
            r.extend(self.x.row(i).iter().copied());
            r
        });
        write_rows(out, &header, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fd_grad, fisher_blocks_iid, read_dataset};

    fn zero_truth(p_star: usize, p: usize) -> ParamVector {
        ParamVector::zeros(p_star, p).unwrap()
    }

    #[test]
    fn quarter_identity_at_zero_truth() {
        let m = make_logistic_iid(100, 2, 4, zero_truth(4, 2), DesignSpec::StandardGaussian, 1).unwrap();
        let f = m.per_observation_info().unwrap();
        let diff = f.d2().matrix() - nalgebra::DMatrix::identity(4, 4) * 0.25;
        assert!(diff.abs().max() < 0.0025, "max dev {}", diff.abs().max());
        let (_, breve) = fisher_blocks_iid(&m).unwrap();
        let diff = breve.matrix() - nalgebra::DMatrix::identity(2, 2) * 0.25;
        assert!(diff.abs().max() < 0.0025);
        assert_eq!(m.info_pair().d2(), &f.d2().scale(100.0));
    }

    #[test]
    fn no_nuisance_breve_equals_f() {
        let m = make_logistic_iid(50, 3, 3, zero_truth(3, 3), DesignSpec::StandardGaussian, 1).unwrap();
        let (f, breve) = fisher_blocks_iid(&m).unwrap();
        assert_eq!(&breve, f.d2());
    }

    #[test]
    fn single_zero_observation_is_constant() {
        let mut m = make_logistic_iid(1, 1, 1, zero_truth(1, 1), DesignSpec::StandardGaussian, 1).unwrap();
        m.x = DMatrix::zeros(1, 1);
        for u in [-3.0, 0.0, 7.0] {
            let v = m.loglik(&DVector::from_element(1, u));
            assert!((v + std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_matches_fd_and_expected_stationary() {
        let truth = ParamVector::from_slice(&[0.4, -0.4, 0.4], 1).unwrap();
        let m = make_logistic_iid(300, 1, 3, truth.clone(), DesignSpec::Equicorrelated(0.3), 9).unwrap();
        let mut rng = seed::rng(4);
        for _ in 0..10 {
            let u = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let (g, f) = (m.grad(&u), fd_grad(&m, &u));
            assert!((&g - &f).norm() <= 1e-5 * g.norm().max(1.0), "{g} vs {f}");
        }
        let eg = m.expected_grad(truth.values()).unwrap();
        assert!(eg.norm() <= 1e-6 * 3.0 * 300.0, "{eg}");
    }

    #[test]
    fn dataset_round_trip() {
        let m = make_logistic_iid(20, 1, 2, zero_truth(2, 1), DesignSpec::StandardGaussian, 3).unwrap();
        let mut buf = Vec::new();
        m.write_dataset(&mut buf).unwrap();
        let (h, rows) = read_dataset(buf.as_slice()).unwrap();
        let r = LogisticModel::from_dataset(&h, &rows, zero_truth(2, 1), DesignSpec::StandardGaussian).unwrap();
        assert_eq!(r.design(), m.design());
        assert_eq!(r.response(), m.response());
    }
}
