//! Full, constrained and profile maximum likelihood, the Wilks statistic,
//! the Fisher residual and likelihood-based confidence sets.

mod ascent;
mod critdim;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::infogeom::{efficient_score, schur_target};
use crate::model::{ParamVector, QuasiLikelihoodModel};
use crate::seed;

pub use critdim::critdim_solver;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    /// Relative gradient tolerance: stop at `‖∇‖ ≤ grad_tol·(1 + ‖∇L(υ*)‖)`.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Number of starts; the first is `υ*`, the rest are perturbations of it.
    pub restarts: usize,
    pub shrink: f64,
    pub armijo: f64,
    pub restart_seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 500,
            restarts: 1,
            shrink: 0.5,
            armijo: 1e-4,
            restart_seed: 0,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::Config("grad_tol must be positive".into()));
        }
        if self.max_iters == 0 || self.restarts == 0 {
            return Err(Error::Config("max_iters and restarts must be at least 1".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config("shrink must lie in (0, 1)".into()));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::Config("armijo must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub params: ParamVector,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn tolerance(model: &dyn QuasiLikelihoodModel, settings: &OptimizerSettings) -> f64 {
    let g0 = model.grad(model.truth().values()).norm();
    settings.grad_tol * (1.0 + g0)
}

fn restart_starts(
    center: &DVector<f64>,
    scale: &DVector<f64>,
    settings: &OptimizerSettings,
) -> Vec<DVector<f64>> {
    (0..settings.restarts)
        .map(|k| {
            if k == 0 {
                return center.clone();
            }
            let mut rng = seed::rng(seed::split(settings.restart_seed, 0x5157, k as u64));
            DVector::from_fn(center.len(), |i, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                center[i] + z * scale[i]
            })
        })
        .collect()
}

fn pick_best(cands: Vec<(DVector<f64>, ascent::AscentOutcome)>) -> ascent::AscentOutcome {
    let mut best: Option<(f64, ascent::AscentOutcome)> = None;
    for (start, out) in cands {
        let dist = (&out.x - &start).norm();
        let better = match &best {
            None => true,
            Some((bd, b)) => {
                let tie = (out.value - b.value).abs() <= 1e-12 * b.value.abs().max(1.0);
                if tie {
                    dist < *bd
                } else {
                    out.value > b.value
                }
            }
        };
        if better {
            best = Some((dist, out));
        }
    }
    best.expect("at least one start").1
}

/// Global maximizer `υ̃` of `L`. Critical-dimension models go to the
/// dedicated lattice solver.
pub fn full_mle(model: &dyn QuasiLikelihoodModel, settings: &OptimizerSettings) -> Result<MleResult> {
    settings.validate()?;
    if model.as_critdim().is_some() {
        return critdim_solver(model, settings);
    }
    let info = model.info_pair();
    let spec = info.d2().spectral();
    let h0 = spec.inverse("full information D₀²")?;
    let scale = spec.inv_sqrt("full information D₀²")?.matrix().diagonal();
    let tol = tolerance(model, settings);
    let f = |u: &DVector<f64>| model.loglik(u);
    let g = |u: &DVector<f64>| model.grad(u);
    let truth = model.truth();
    let cands = restart_starts(truth.values(), &scale, settings)
        .into_iter()
        .map(|s| {
            let out = ascent::bfgs_ascent(&f, &g, s.clone(), h0.matrix(), tol, settings);
            (s, out)
        })
        .collect();
    let best = pick_best(cands);
    Ok(MleResult {
        params: ParamVector::new(best.x, model.split())?,
        loglik: best.value,
        converged: best.converged,
        iterations: best.iterations,
        grad_norm: best.grad_norm,
    })
}

/// Maximizer `υ̃_θ` of `L` over `η` with `θ` held fixed.
pub fn constrained_mle(
    model: &dyn QuasiLikelihoodModel,
    theta: &DVector<f64>,
    settings: &OptimizerSettings,
) -> Result<MleResult> {
    settings.validate()?;
    let p = model.split();
    check_dim(p, theta.len())?;
    if model.as_critdim().is_some() {
        return Err(Error::Capability(
            "constrained ascent is not supported on the critical-dimension model".into(),
        ));
    }
    let p1 = model.dim() - p;
    let join = |eta: &DVector<f64>| {
        let mut u = DVector::zeros(p + p1);
        u.rows_mut(0, p).copy_from(theta);
        u.rows_mut(p, p1).copy_from(eta);
        u
    };
    if p1 == 0 {
        let u = join(&DVector::zeros(0));
        let loglik = model.loglik(&u);
        return Ok(MleResult {
            params: ParamVector::new(u, p)?,
            loglik,
            converged: true,
            iterations: 0,
            grad_norm: 0.0,
        });
    }
    let blocks = model.info_pair().d_blocks();
    let spec = blocks.ee.spectral();
    let h0 = spec.inverse("nuisance block H²")?;
    let scale = spec.inv_sqrt("nuisance block H²")?.matrix().diagonal();
    let tol = tolerance(model, settings);
    let f = |eta: &DVector<f64>| model.loglik(&join(eta));
    let g = |eta: &DVector<f64>| model.grad(&join(eta)).rows(p, p1).into_owned();
    let eta0 = model.truth().eta();
    let cands = restart_starts(&eta0, &scale, settings)
        .into_iter()
        .map(|s| {
            let out = ascent::bfgs_ascent(&f, &g, s.clone(), h0.matrix(), tol, settings);
            (s, out)
        })
        .collect();
    let best = pick_best(cands);
    Ok(MleResult {
        params: ParamVector::new(join(&best.x), p)?,
        loglik: best.value,
        converged: best.converged,
        iterations: best.iterations,
        grad_norm: best.grad_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profiled {
    pub value: f64,
    pub converged: bool,
}

/// `L̆(θ) = max_η L(θ, η)`.
pub fn profile_loglik(
    model: &dyn QuasiLikelihoodModel,
    theta: &DVector<f64>,
    settings: &OptimizerSettings,
) -> Result<Profiled> {
    let r = constrained_mle(model, theta, settings)?;
    Ok(Profiled {
        value: r.loglik,
        converged: r.converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileFit {
    /// `υ̃`
    pub upsilon_hat: ParamVector,
    /// `υ̃_θ*`
    pub upsilon_hat_constrained: ParamVector,
    /// `θ̃ = Πυ̃`
    pub theta_hat: DVector<f64>,
    /// `L̆(θ̃) − L̆(θ*)`
    pub wilks_t: f64,
    pub xi_breve: DVector<f64>,
    /// `‖D̆₀(θ̃ − θ*) − ξ̆‖`
    pub fisher_residual: f64,
    pub converged_full: bool,
    pub converged_constrained: bool,
}

impl ProfileFit {
    pub fn converged(&self) -> bool {
        self.converged_full && self.converged_constrained
    }
}

pub fn profile_fit(model: &dyn QuasiLikelihoodModel, settings: &OptimizerSettings) -> Result<ProfileFit> {
    let info = model.info_pair();
    let truth = model.truth();
    let full = full_mle(model, settings)?;
    let theta_star = truth.theta();
    let cons = constrained_mle(model, &theta_star, settings)?;
    let es = efficient_score(info, &model.grad(truth.values()))?;
    let breve = schur_target(info)?;
    let breve_sqrt = breve.spectral().sqrt("efficient information D̆₀²")?;
    let theta_hat = full.params.theta();
    let resid = breve_sqrt.matrix() * (&theta_hat - &theta_star) - &es.xi;
    Ok(ProfileFit {
        wilks_t: full.loglik - cons.loglik,
        fisher_residual: resid.norm(),
        xi_breve: es.xi,
        theta_hat,
        upsilon_hat: full.params,
        upsilon_hat_constrained: cons.params,
        converged_full: full.converged,
        converged_constrained: cons.converged,
    })
}

/// `{θ : L̆(θ̃) − L̆(θ) ≤ z}`, carrying `L̆(θ̃) = L(υ̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet {
    pub max_loglik: f64,
    pub z: f64,
    pub converged: bool,
}

impl ConfidenceSet {
    pub fn new(model: &dyn QuasiLikelihoodModel, z: f64, settings: &OptimizerSettings) -> Result<Self> {
        if !(z >= 0.0) {
            return Err(Error::Domain(format!("confidence level z = {z} must be nonnegative")));
        }
        let full = full_mle(model, settings)?;
        Ok(Self {
            max_loglik: full.loglik,
            z,
            converged: full.converged,
        })
    }

    /// Membership of `theta` and whether the profile solve converged.
    pub fn contains(
        &self,
        model: &dyn QuasiLikelihoodModel,
        theta: &DVector<f64>,
        settings: &OptimizerSettings,
    ) -> Result<(bool, bool)> {
        let pl = profile_loglik(model, theta, settings)?;
        Ok((self.max_loglik - pl.value <= self.z, pl.converged && self.converged))
    }
}

pub fn confset_contains(
    model: &dyn QuasiLikelihoodModel,
    theta: &DVector<f64>,
    z: f64,
    settings: &OptimizerSettings,
) -> Result<bool> {
    Ok(ConfidenceSet::new(model, z, settings)?.contains(model, theta, settings)?.0)
}

/// Closed-form `½‖D̆⁻¹∇̆_θ‖²` for an exactly quadratic model.
pub fn quadratic_wilks(model: &dyn QuasiLikelihoodModel) -> Result<f64> {
    let es = efficient_score(model.info_pair(), &model.grad(model.truth().values()))?;
    Ok(0.5 * es.xi.norm_squared())
}
