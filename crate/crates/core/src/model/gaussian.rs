//! Exactly quadratic models: the Gaussian shift `X ~ N(υ*, I/n)` with
//! `L(υ) = nXᵀυ − n‖υ‖²/2`, and a general quadratic with correlated blocks
//! `L(υ) = ∇₀ᵀ(υ−υ*) − ½‖D(υ−υ*)‖²`, `∇₀ ~ N(0, D²)`.

use std::io::Write;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};

use super::{write_rows, ParamVector, QuasiLikelihoodModel};
use crate::error::{Error, Result};
use crate::infogeom::{BlockInfoPair, SymMatrix};
use crate::seed;

fn standard_normals(seed: u64, d: usize) -> DVector<f64> {
    let mut rng = seed::rng(seed);
    DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng))
}

#[derive(Debug, Clone)]
pub struct GaussianShift {
    n: usize,
    x: DVector<f64>,
    truth: ParamVector,
    info: BlockInfoPair,
}

pub fn make_gaussian_shift(n: usize, truth: ParamVector, seed: u64) -> Result<GaussianShift> {
    if n < 1 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    let d = truth.p_star();
    let scale = 1.0 / (n as f64).sqrt();
    let x = truth.values() + standard_normals(seed, d) * scale;
    let info = BlockInfoPair::matched(SymMatrix::scaled_identity(d, n as f64), truth.p())?;
    Ok(GaussianShift { n, x, truth, info })
}

impl GaussianShift {
    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }
}

impl QuasiLikelihoodModel for GaussianShift {
    fn dim(&self) -> usize {
        self.x.len()
    }

    fn split(&self) -> usize {
        self.truth.p()
    }

    fn sample_size(&self) -> usize {
        self.n
    }

    fn loglik(&self, u: &DVector<f64>) -> f64 {
        let n = self.n as f64;
        n * self.x.dot(u) - 0.5 * n * u.norm_squared()
    }

    fn grad(&self, u: &DVector<f64>) -> DVector<f64> {
        (&self.x - u) * self.n as f64
    }

    fn truth(&self) -> ParamVector {
        self.truth.clone()
    }

    fn info_pair(&self) -> &BlockInfoPair {
        &self.info
    }

    fn expected_loglik(&self, u: &DVector<f64>) -> Option<f64> {
        let n = self.n as f64;
        Some(n * self.truth.values().dot(u) - 0.5 * n * u.norm_squared())
    }

    fn expected_grad(&self, u: &DVector<f64>) -> Option<DVector<f64>> {
        Some((self.truth.values() - u) * self.n as f64)
    }

    fn resample(&self, seed: u64) -> Box<dyn QuasiLikelihoodModel> {
        Box::new(make_gaussian_shift(self.n, self.truth.clone(), seed).expect("validated law"))
    }

    fn write_dataset(&self, out: &mut dyn Write) -> Result<()> {
        let header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        write_rows(out, &header, std::iter::once(self.x.iter().copied().collect()))
    }

    fn is_quadratic(&self) -> bool {
        true
    }
}

/// Quadratic model with arbitrary positive definite curvature `D²`.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    n: usize,
    score: DVector<f64>,
    truth: ParamVector,
    info: BlockInfoPair,
    d: SymMatrix,
}

pub fn make_quadratic(d2: SymMatrix, truth: ParamVector, n: usize, seed: u64) -> Result<QuadraticModel> {
    crate::error::check_dim(d2.dim(), truth.p_star())?;
    let d = d2.spectral().sqrt("curvature D²")?;
    d2.spectral().inv_sqrt("curvature D²")?;
    let score = d.matrix() * standard_normals(seed, d2.dim());
    let info = BlockInfoPair::matched(d2, truth.p())?;
    Ok(QuadraticModel {
        n,
        score,
        truth,
        info,
        d,
    })
}

impl QuadraticModel {
    pub fn score(&self) -> &DVector<f64> {
        &self.score
    }

    /// Same curvature with the score `∇L(υ*)` replaced.
    pub fn with_score(self, score: DVector<f64>) -> Self {
        assert_eq!(score.len(), self.score.len(), "score dimension");
        Self { score, ..self }
    }
}

impl QuasiLikelihoodModel for QuadraticModel {
    fn dim(&self) -> usize {
        self.score.len()
    }

    fn split(&self) -> usize {
        self.truth.p()
    }

    fn sample_size(&self) -> usize {
        self.n
    }

    fn loglik(&self, u: &DVector<f64>) -> f64 {
        let du = u - self.truth.values();
        self.score.dot(&du) - 0.5 * self.info.d2().quad_form(&du)
    }

    fn grad(&self, u: &DVector<f64>) -> DVector<f64> {
        let du = u - self.truth.values();
        &self.score - self.info.d2().matrix() * du
    }

    fn truth(&self) -> ParamVector {
        self.truth.clone()
    }

    fn info_pair(&self) -> &BlockInfoPair {
        &self.info
    }

    fn expected_loglik(&self, u: &DVector<f64>) -> Option<f64> {
        let du = u - self.truth.values();
        Some(-0.5 * self.info.d2().quad_form(&du))
    }

    fn expected_grad(&self, u: &DVector<f64>) -> Option<DVector<f64>> {
        let du = u - self.truth.values();
        Some(-(self.info.d2().matrix() * du))
    }

    fn resample(&self, seed: u64) -> Box<dyn QuasiLikelihoodModel> {
        let score = self.d.matrix() * standard_normals(seed, self.dim());
        Box::new(QuadraticModel {
            score,
            ..self.clone()
        })
    }

    fn write_dataset(&self, out: &mut dyn Write) -> Result<()> {
        let header: Vec<String> = (1..=self.dim()).map(|j| format!("score{j}")).collect();
        write_rows(out, &header, std::iter::once(self.score.iter().copied().collect()))
    }

    fn is_quadratic(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fd_grad;
    use approx::assert_relative_eq;

    fn shift() -> GaussianShift {
        let truth = ParamVector::from_slice(&[0.3, -0.2, 0.1, 0.5], 2).unwrap();
        make_gaussian_shift(50, truth, 11).unwrap()
    }

    #[test]
    fn stationary_at_x() {
        let m = shift();
        let x = m.x().clone();
        assert!(m.grad(&x).norm() == 0.0);
        let other = &x + DVector::from_element(4, 0.01);
        assert!(m.loglik(&x) > m.loglik(&other));
    }

    #[test]
    fn expected_loglik_is_exact_quadratic() {
        let m = shift();
        let t = m.truth().into_values();
        let u = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.0]);
        let diff = m.expected_loglik(&u).unwrap() - m.expected_loglik(&t).unwrap();
        assert_relative_eq!(diff, -25.0 * (&u - &t).norm_squared(), max_relative = 1e-13);
        assert!(m.expected_grad(&t).unwrap().norm() == 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = shift();
        let d2 = SymMatrix::from_row_slice(3, &[3.0, 1.0, 0.5, 1.0, 2.0, 0.2, 0.5, 0.2, 1.5]).unwrap();
        let q = make_quadratic(d2, ParamVector::from_slice(&[0.0, 1.0, 0.0], 1).unwrap(), 10, 3).unwrap();
        for k in 0..10 {
            let u4 = standard_normals(100 + k, 4);
            let (g, f) = (m.grad(&u4), fd_grad(&m, &u4));
            assert!((&g - &f).norm() <= 1e-5 * g.norm().max(1.0));
            let u3 = standard_normals(200 + k, 3);
            let (g, f) = (q.grad(&u3), fd_grad(&q, &u3));
            assert!((&g - &f).norm() <= 1e-5 * g.norm().max(1.0));
        }
    }

    #[test]
    fn resample_reproducible() {
        let m = shift();
        let a = m.resample(5);
        let b = m.resample(5);
        let (mut wa, mut wb) = (Vec::new(), Vec::new());
        a.write_dataset(&mut wa).unwrap();
        b.write_dataset(&mut wb).unwrap();
        assert_eq!(wa, wb);
        let c = m.resample(6);
        let mut wc = Vec::new();
        c.write_dataset(&mut wc).unwrap();
        assert_ne!(wa, wc);
    }
}
