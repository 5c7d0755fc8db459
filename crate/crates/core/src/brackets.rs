//! Bracketing machinery: the perturbed curvature matrices, the quadratic
//! processes they define, excess terms, the two τ quantities, error
//! magnitudes, the spread, concentration checks, and empirical estimates of
//! the smoothness functions `δ(r)` and `ω(r)`.

use std::io::{Read, Write};

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::estimator::ProfileFit;
use crate::infogeom::{block_split, BlockInfoPair, SymMatrix};
use crate::model::QuasiLikelihoodModel;
use crate::seed;

/// Large-deviation constant: `ℚ = 2.4·p*`.
pub fn q_const(p_star: usize) -> f64 {
    2.4 * p_star as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BracketParams {
    pub delta: f64,
    pub rho: f64,
    pub r0: f64,
    pub nu0: f64,
    pub a: f64,
    pub g: f64,
    pub b: f64,
    pub x: f64,
}

impl BracketParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("delta", self.delta), ("rho", self.rho)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} = {v} must be finite and ≥ 0")));
            }
        }
        for (name, v) in [
            ("r0", self.r0),
            ("nu0", self.nu0),
            ("a", self.a),
            ("g", self.g),
            ("b", self.b),
            ("x", self.x),
        ] {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// `δ(r)` and `ω(r)` on an increasing radius grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessTable {
    radii: Vec<f64>,
    delta_of_r: Vec<f64>,
    omega_of_r: Vec<f64>,
}

impl SmoothnessTable {
    pub fn new(radii: Vec<f64>, delta_of_r: Vec<f64>, omega_of_r: Vec<f64>) -> Result<Self> {
        check_dim(radii.len(), delta_of_r.len())?;
        check_dim(radii.len(), omega_of_r.len())?;
        if radii.iter().any(|&r| !(r > 0.0)) || radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("radii must be positive and strictly increasing".into()));
        }
        if delta_of_r.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::Domain("delta(r) must be nonnegative".into()));
        }
        if let Some(w) = omega_of_r.iter().find(|&&w| !(0.0..=0.5).contains(&w)) {
            return Err(Error::Domain(format!("omega(r) = {w} outside [0, 1/2]")));
        }
        Ok(Self {
            radii,
            delta_of_r,
            omega_of_r,
        })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn delta_of_r(&self) -> &[f64] {
        &self.delta_of_r
    }

    pub fn omega_of_r(&self) -> &[f64] {
        &self.omega_of_r
    }

    fn interp(&self, col: &[f64], r: f64) -> Result<f64> {
        let (Some(&lo), Some(&hi)) = (self.radii.first(), self.radii.last()) else {
            return Err(Error::Range("empty smoothness table".into()));
        };
        if !(r >= lo && r <= hi) {
            return Err(Error::Range(format!("radius {r} outside table range [{lo}, {hi}]")));
        }
        let k = self.radii.partition_point(|&x| x < r);
        if self.radii[k] == r {
            return Ok(col[k]);
        }
        let (r0, r1) = (self.radii[k - 1], self.radii[k]);
        let t = (r - r0) / (r1 - r0);
        Ok(col[k - 1] + t * (col[k] - col[k - 1]))
    }

    pub fn delta_at(&self, r: f64) -> Result<f64> {
        self.interp(&self.delta_of_r, r)
    }

    pub fn omega_at(&self, r: f64) -> Result<f64> {
        self.interp(&self.omega_of_r, r)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["r", "delta_r", "omega_r"])?;
        for i in 0..self.radii.len() {
            w.write_record([
                format!("{:e}", self.radii[i]),
                format!("{:e}", self.delta_of_r[i]),
                format!("{:e}", self.omega_of_r[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != ["r", "delta_r", "omega_r"] {
            return Err(Error::Parse(format!(
                "smoothness table header must be r,delta_r,omega_r; got {}",
                header.join(",")
            )));
        }
        let (mut r, mut d, mut w) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad number {:?}: {e}", &rec[i])))
            };
            r.push(num(0)?);
            d.push(num(1)?);
            w.push(num(2)?);
        }
        Self::new(r, d, w)
    }
}

/// `D_up² = D₀²(1−δ) − ϱV₀²`, `D_dn² = D₀²(1+δ) + ϱV₀²` and their
/// nuisance-block analogues built from `H₀²` and `Q₀²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Brackets {
    pub d_up: SymMatrix,
    pub d_dn: SymMatrix,
    pub h_up: SymMatrix,
    pub h_dn: SymMatrix,
    /// `D_up² ⪰ 0`, the applicability condition of the bracketing bound.
    pub d_up_psd: bool,
    pub h_up_psd: bool,
}

fn is_psd(m: &SymMatrix) -> bool {
    if m.dim() == 0 {
        return true;
    }
    let s = m.spectral();
    s.min_eig() >= -1e-10 * s.spectral_norm()
}

pub fn bracket_matrices(info: &BlockInfoPair, delta: f64, rho: f64) -> Brackets {
    let d0 = info.d2();
    let v0 = info.v2();
    let d_up = d0.combine(1.0 - delta, v0, -rho).expect("shared dimension");
    let d_dn = d0.combine(1.0 + delta, v0, rho).expect("shared dimension");
    let h0 = info.d_blocks().ee;
    let q0 = info.v_blocks().ee;
    let h_up = h0.combine(1.0 - delta, &q0, -rho).expect("shared dimension");
    let h_dn = h0.combine(1.0 + delta, &q0, rho).expect("shared dimension");
    Brackets {
        d_up_psd: is_psd(&d_up),
        h_up_psd: is_psd(&h_up),
        d_up,
        d_dn,
        h_up,
        h_dn,
    }
}

/// `𝕃(υ, υ*) = (υ−υ*)ᵀ∇ − ½‖D(υ−υ*)‖²`.
pub fn bracket_eval(
    upsilon: &DVector<f64>,
    truth: &DVector<f64>,
    grad_at_truth: &DVector<f64>,
    d2: &SymMatrix,
) -> Result<f64> {
    check_dim(d2.dim(), upsilon.len())?;
    check_dim(d2.dim(), truth.len())?;
    check_dim(d2.dim(), grad_at_truth.len())?;
    let du = upsilon - truth;
    Ok(du.dot(grad_at_truth) - 0.5 * d2.quad_form(&du))
}

/// `∇ᵀ(D²)⁻¹∇`.
fn inv_quad(d2: &SymMatrix, grad: &DVector<f64>, block: &str) -> Result<f64> {
    check_dim(d2.dim(), grad.len())?;
    if d2.dim() == 0 {
        return Ok(0.0);
    }
    let y = d2.spectral().solve(grad, block)?;
    Ok(grad.dot(&y))
}

/// `sup_υ 𝕃 = ½‖D⁻¹∇‖²`.
pub fn sup_bracket(d2: &SymMatrix, grad: &DVector<f64>) -> Result<f64> {
    Ok(0.5 * inv_quad(d2, grad, "bracketing matrix D²")?)
}

/// Supremum over `η` with `θ = θ*`: `½‖H⁻¹∇_η‖²`.
pub fn sup_bracket_constrained(h2: &SymMatrix, grad_eta: &DVector<f64>) -> Result<f64> {
    Ok(0.5 * inv_quad(h2, grad_eta, "bracketing matrix H²")?)
}

/// `δ(r₀) + 3ν₀𝔞²ω(r₀)`.
pub fn tau_smooth(params: &BracketParams, table: &SmoothnessTable) -> Result<f64> {
    params.validate()?;
    let d = table.delta_at(params.r0)?;
    let w = table.omega_at(params.r0)?;
    Ok(d + 3.0 * params.nu0 * params.a * params.a * w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauMatrix {
    pub tau: f64,
    /// Upper bound `τ/(1−τ)` on `‖D₀D_up⁻²D₀ − I‖`; infinite once `τ ≥ 1`.
    pub alpha_up_bound: f64,
    /// Upper bound `τ/(1+τ)` on `‖I − D₀D_dn⁻²D₀‖`.
    pub alpha_dn_bound: f64,
    pub infinite: bool,
}

/// `τ = δ + ϱ/𝔞²` with the α bounds it implies.
pub fn tau_matrix(delta: f64, rho: f64, a: f64) -> TauMatrix {
    let tau = delta + rho / (a * a);
    let infinite = tau >= 1.0;
    TauMatrix {
        tau,
        alpha_up_bound: if infinite { f64::INFINITY } else { tau / (1.0 - tau) },
        alpha_dn_bound: tau / (1.0 + tau),
        infinite,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcessTerms {
    pub diamond_up: f64,
    pub diamond_dn: f64,
    pub diamond_up_eta: f64,
    pub diamond_dn_eta: f64,
    /// `‖D₀D_up⁻²D₀ − I‖`
    pub alpha_up: f64,
    /// `‖I − D₀D_dn⁻²D₀‖`
    pub alpha_dn: f64,
    pub alpha_up_eta: f64,
    pub alpha_dn_eta: f64,
    /// Every `⋄` respects its `½α‖D₀⁻¹∇‖²` bound.
    pub bounds_hold: bool,
}

fn alpha(m0: &SymMatrix, m: &SymMatrix, block: &str) -> Result<f64> {
    if m0.dim() == 0 {
        return Ok(0.0);
    }
    let s = m0.spectral().sqrt(block)?;
    let inv = m.spectral().inverse(block)?;
    let k = SymMatrix::symmetrize(s.matrix() * inv.matrix() * s.matrix());
    let diff = k.combine(1.0, &SymMatrix::identity(k.dim()), -1.0)?;
    Ok(diff.spectral().spectral_norm())
}

/// Half-differences of the quadratic forms under the perturbed curvatures.
pub fn excess_terms(info: &BlockInfoPair, delta: f64, rho: f64, grad: &DVector<f64>) -> Result<ExcessTerms> {
    check_dim(info.p_star(), grad.len())?;
    let br = bracket_matrices(info, delta, rho);
    if !br.d_up_psd || !br.h_up_psd {
        return Err(Error::NumericalRank {
            block: "lower bracketing matrix D_up² or H_up²".into(),
            min_eig: br.d_up.spectral().min_eig().min(if br.h_up.dim() > 0 {
                br.h_up.spectral().min_eig()
            } else {
                f64::INFINITY
            }),
            norm: br.d_up.spectral().spectral_norm(),
        });
    }
    let ge = grad.rows(info.p(), info.p1()).into_owned();
    let h0 = info.d_blocks().ee;
    let q0 = inv_quad(info.d2(), grad, "full information D₀²")?;
    let q_up = inv_quad(&br.d_up, grad, "D_up²")?;
    let q_dn = inv_quad(&br.d_dn, grad, "D_dn²")?;
    let qe0 = inv_quad(&h0, &ge, "nuisance block H²")?;
    let qe_up = inv_quad(&br.h_up, &ge, "H_up²")?;
    let qe_dn = inv_quad(&br.h_dn, &ge, "H_dn²")?;
    let t = ExcessTerms {
        diamond_up: 0.5 * (q_up - q0),
        diamond_dn: 0.5 * (q0 - q_dn),
        diamond_up_eta: 0.5 * (qe_up - qe0),
        diamond_dn_eta: 0.5 * (qe0 - qe_dn),
        alpha_up: alpha(info.d2(), &br.d_up, "D_up²")?,
        alpha_dn: alpha(info.d2(), &br.d_dn, "D_dn²")?,
        alpha_up_eta: alpha(&h0, &br.h_up, "H_up²")?,
        alpha_dn_eta: alpha(&h0, &br.h_dn, "H_dn²")?,
        bounds_hold: true,
    };
    let slack = |b: f64| b * (1.0 + 1e-9) + 1e-12;
    let holds = t.diamond_up.abs() <= slack(0.5 * t.alpha_up * q0)
        && t.diamond_dn.abs() <= slack(0.5 * t.alpha_dn * q0)
        && t.diamond_up_eta.abs() <= slack(0.5 * t.alpha_up_eta * qe0)
        && t.diamond_dn_eta.abs() <= slack(0.5 * t.alpha_dn_eta * qe0);
    Ok(ExcessTerms {
        bounds_hold: holds,
        ..t
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrBound {
    /// `ϱ·𝔷(ℚ, x)`
    pub value: f64,
    /// `𝔷(ℚ, x)`
    pub zz: f64,
    /// `1` when `1 + √(x+ℚ) < g/ν₀`, else `2`.
    pub branch: u8,
    /// `𝙲` back-solved from `𝔷 = 𝙲(p* + x)`; reported only.
    pub c_backsolved: f64,
}

/// Error magnitude `ϱ·𝔷(ℚ, x)` with `ℚ = 2.4p*`.
pub fn err_bound(p_star: usize, x: f64, rho: f64, g: f64, nu0: f64) -> ErrBound {
    let xq = x + q_const(p_star);
    let root = 1.0 + xq.sqrt();
    let (zz, branch) = if root < g / nu0 {
        (root * root, 1)
    } else {
        let t = 1.0 + (nu0 / g) * xq + g / (2.0 * nu0);
        (t * t, 2)
    };
    ErrBound {
        value: rho * zz,
        zz,
        branch,
        c_backsolved: zz / (p_star as f64 + x),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadReport {
    pub spread: f64,
    pub tau: f64,
    pub delta_used: f64,
    pub rho_used: f64,
    pub err_up: f64,
    pub err_dn: f64,
    /// `‖D₀⁻¹∇‖²`
    pub quad_full: f64,
    /// `‖H₀⁻¹∇_η‖²`
    pub quad_eta: f64,
}

/// `Δ = 2err_up + 2err_dn + 2τ/(1−τ²)·(‖D₀⁻¹∇‖² + ‖H₀⁻¹∇_η‖²)`.
///
/// The curvature perturbation is `δ = δ(r₀)` and `ϱ = 3ν₀ω(r₀)`, raised to
/// `params.delta`, `params.rho` when those are larger.
pub fn spread(
    info: &BlockInfoPair,
    params: &BracketParams,
    table: &SmoothnessTable,
    grad: &DVector<f64>,
) -> Result<SpreadReport> {
    params.validate()?;
    check_dim(info.p_star(), grad.len())?;
    let delta = table.delta_at(params.r0)?.max(params.delta);
    let rho = (3.0 * params.nu0 * table.omega_at(params.r0)?).max(params.rho);
    let tau = delta + params.a * params.a * rho;
    if tau >= 1.0 {
        return Err(Error::Applicability(format!("tau = {tau} ≥ 1, spread undefined")));
    }
    let eb = err_bound(info.p_star(), params.x, rho, params.g, params.nu0);
    let ge = grad.rows(info.p(), info.p1()).into_owned();
    let quad_full = inv_quad(info.d2(), grad, "full information D₀²")?;
    let quad_eta = inv_quad(&info.d_blocks().ee, &ge, "nuisance block H²")?;
    let spread = 2.0 * eb.value + 2.0 * eb.value + 2.0 * tau / (1.0 - tau * tau) * (quad_full + quad_eta);
    Ok(SpreadReport {
        spread,
        tau,
        delta_used: delta,
        rho_used: rho,
        err_up: eb.value,
        err_dn: eb.value,
        quad_full,
        quad_eta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationEvent {
    /// `‖V₀(υ̃ − υ*)‖ ≤ r`
    pub full: bool,
    /// `‖V₀(υ̃_θ* − υ*)‖ ≤ r`
    pub constrained: bool,
    /// `‖V₀D_dn⁻²∇‖ ≤ r`
    pub score: bool,
    /// `‖Q₀H_dn⁻²∇_η‖ ≤ r`
    pub score_eta: bool,
    pub all: bool,
}

pub fn concentration_event(
    info: &BlockInfoPair,
    brackets: &Brackets,
    r: f64,
    truth: &DVector<f64>,
    fit: &ProfileFit,
    grad: &DVector<f64>,
) -> Result<ConcentrationEvent> {
    check_dim(info.p_star(), grad.len())?;
    let v2 = info.v2();
    let full = v2.induced_norm(&(fit.upsilon_hat.values() - truth)) <= r;
    let constrained = v2.induced_norm(&(fit.upsilon_hat_constrained.values() - truth)) <= r;
    let y = brackets.d_dn.spectral().solve(grad, "D_dn²")?;
    let score = v2.induced_norm(&y) <= r;
    let score_eta = if info.p1() == 0 {
        true
    } else {
        let q0 = block_split(v2, info.p())?.ee;
        let ge = grad.rows(info.p(), info.p1()).into_owned();
        let ye = brackets.h_dn.spectral().solve(&ge, "H_dn²")?;
        q0.induced_norm(&ye) <= r
    };
    Ok(ConcentrationEvent {
        full,
        constrained,
        score,
        score_eta,
        all: full && constrained && score && score_eta,
    })
}

/// Relative rounding allowance in [`wilks_certificate`]: with `Δ = 0` the two
/// sides agree only up to the optimizer's floating-point residue.
pub const CERTIFICATE_ROUNDING: f64 = 1e-9;

/// `|2T − ‖ξ̆‖²| ≤ 2Δ`, up to `CERTIFICATE_ROUNDING·(1 + ‖ξ̆‖²)`.
pub fn wilks_certificate(fit: &ProfileFit, spread: f64) -> bool {
    let xi2 = fit.xi_breve.norm_squared();
    (2.0 * fit.wilks_t - xi2).abs() <= 2.0 * spread + CERTIFICATE_ROUNDING * (1.0 + xi2)
}

/// `‖D₀⁻¹(∇𝔼L(υ) − ∇𝔼L(υ*) + D₀²(υ−υ*))‖ / ‖D₀(υ−υ*)‖`.
fn l0_ratio(
    info: &BlockInfoPair,
    eg: &DVector<f64>,
    eg0: &DVector<f64>,
    du: &DVector<f64>,
) -> Result<f64> {
    let d2 = info.d2();
    let num = eg - eg0 + d2.matrix() * du;
    let q = inv_quad(d2, &num, "full information D₀²")?;
    Ok(q.max(0.0).sqrt() / d2.induced_norm(du))
}

/// Random point on the ellipsoid `‖V₀(υ − υ*)‖ = r`, as the unit-sphere
/// offset `V₀⁻¹γ` to be scaled by `r`.
fn direction(v_inv_sqrt: &SymMatrix, seed: u64) -> DVector<f64> {
    let mut rng = seed::rng(seed);
    let d = v_inv_sqrt.dim();
    let g = DVector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z
    });
    let g = &g / g.norm();
    v_inv_sqrt.matrix() * g
}

/// Either the model's `∇𝔼L` or, failing that, the average gradient over
/// resampled datasets.
struct ExpectedGrad<'a> {
    model: &'a dyn QuasiLikelihoodModel,
    resamples: Vec<Box<dyn QuasiLikelihoodModel>>,
}

impl<'a> ExpectedGrad<'a> {
    fn new(model: &'a dyn QuasiLikelihoodModel, n_resample: usize, seed: u64) -> Result<Self> {
        let has = model.expected_grad(model.truth().values()).is_some();
        if !has && n_resample == 0 {
            return Err(Error::Capability(
                "model has no expected log-likelihood and no resamples were requested".into(),
            ));
        }
        let resamples = if has {
            Vec::new()
        } else {
            (0..n_resample)
                .map(|j| model.resample(seed::split(seed, 0xE6, j as u64)))
                .collect()
        };
        Ok(Self { model, resamples })
    }

    fn at(&self, u: &DVector<f64>) -> DVector<f64> {
        if let Some(g) = self.model.expected_grad(u) {
            return g;
        }
        let mut acc = DVector::zeros(u.len());
        for m in &self.resamples {
            acc += m.grad(u);
        }
        acc / self.resamples.len() as f64
    }
}

/// Default number of resampled datasets when `𝔼L` is unavailable.
pub const DEFAULT_RESAMPLES: usize = 200;

/// `δ̂(r)`: maximum of the local-quadratic ratio over `n_dirs` points on each
/// ellipsoid `‖V₀(υ−υ*)‖ = r`. The same directions serve every radius.
pub fn empirical_delta(
    model: &dyn QuasiLikelihoodModel,
    radii: &[f64],
    n_dirs: usize,
    n_resample: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if radii.is_empty() {
        return Ok(Vec::new());
    }
    let info = model.info_pair();
    let v_inv = info.v2().spectral().inv_sqrt("variability V₀²")?;
    let eg = ExpectedGrad::new(model, n_resample, seed)?;
    let truth = model.truth().into_values();
    let eg0 = eg.at(&truth);
    let per_dir: Vec<Vec<f64>> = (0..n_dirs)
        .into_par_iter()
        .map(|k| {
            let dir = direction(&v_inv, seed::split(seed, 0xD1, k as u64));
            radii
                .iter()
                .map(|&r| {
                    let du = &dir * r;
                    l0_ratio(info, &eg.at(&(&truth + &du)), &eg0, &du)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(column_max(&per_dir, radii.len()))
}

fn column_max(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
    (0..width)
        .map(|j| rows.iter().map(|r| r[j]).fold(0.0_f64, f64::max))
        .collect()
}

/// `ω̂(r)`: maximum over directions and resampled datasets of
/// `‖V₀⁻¹(∇ζ(υ) − ∇ζ(υ*))‖/ν₀` with `ζ = L − 𝔼L`, `ν₀ = 1`, on each
/// ellipsoid `‖V₀(υ−υ*)‖ = r`.
pub fn empirical_omega(
    model: &dyn QuasiLikelihoodModel,
    radii: &[f64],
    n_dirs: usize,
    n_resample: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if radii.is_empty() {
        return Ok(Vec::new());
    }
    if n_resample == 0 {
        return Err(Error::Config("empirical_omega needs at least one resample".into()));
    }
    let info = model.info_pair();
    let v_inv = info.v2().spectral().inv_sqrt("variability V₀²")?;
    let eg = ExpectedGrad::new(model, n_resample, seed)?;
    let truth = model.truth().into_values();
    let eg0 = eg.at(&truth);
    let data: Vec<Box<dyn QuasiLikelihoodModel>> = (0..n_resample)
        .map(|j| model.resample(seed::split(seed, 0x0E, j as u64)))
        .collect();
    let per_dir: Vec<Vec<f64>> = (0..n_dirs)
        .into_par_iter()
        .map(|k| {
            let dir = direction(&v_inv, seed::split(seed, 0xD1, k as u64));
            let egs: Vec<DVector<f64>> = radii.iter().map(|&r| eg.at(&(&truth + &dir * r))).collect();
            radii
                .iter()
                .zip(egs.iter())
                .map(|(&r, egr)| {
                    let u = &truth + &dir * r;
                    data.iter().fold(0.0_f64, |acc, m| {
                        let inc = (m.grad(&u) - egr) - (m.grad(&truth) - &eg0);
                        let w = v_inv.matrix() * inc;
                        acc.max(w.norm())
                    })
                })
                .collect()
        })
        .collect();
    Ok(column_max(&per_dir, radii.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{profile_fit, OptimizerSettings};
    use crate::model::{make_gaussian_shift, make_logistic_iid, DesignSpec, ParamVector};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn unit_info(d: usize, p: usize) -> BlockInfoPair {
        BlockInfoPair::matched(SymMatrix::identity(d), p).unwrap()
    }

    #[test]
    fn bracket_matrix_examples() {
        let info = BlockInfoPair::matched(SymMatrix::from_row_slice(2, &[2.0, 0.3, 0.3, 1.0]).unwrap(), 1).unwrap();
        let b = bracket_matrices(&info, 0.0, 0.0);
        assert_eq!(&b.d_up, info.d2());
        assert_eq!(&b.d_dn, info.d2());
        assert_eq!(b.h_up, info.d_blocks().ee);
        let b = bracket_matrices(&unit_info(3, 1), 0.1, 0.2);
        assert!((b.d_up.matrix() - SymMatrix::scaled_identity(3, 0.7).matrix()).norm() < 1e-15);
        assert!((b.d_dn.matrix() - SymMatrix::scaled_identity(3, 1.3).matrix()).norm() < 1e-15);
        assert!(b.d_up_psd);
        let b = bracket_matrices(&unit_info(3, 1), 0.0, 1.5);
        assert!(!b.d_up_psd);
    }

    #[test]
    fn bracket_eval_examples() {
        let d2 = SymMatrix::from_row_slice(3, &[2.0, 0.5, 0.1, 0.5, 1.5, 0.2, 0.1, 0.2, 1.0]).unwrap();
        let t = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let g = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(bracket_eval(&t, &t, &g, &d2).unwrap(), 0.0);
        let step = d2.spectral().solve(&g, "d").unwrap();
        let v = bracket_eval(&(&t + &step), &t, &g, &d2).unwrap();
        assert_relative_eq!(v, sup_bracket(&d2, &g).unwrap(), max_relative = 1e-13);
        // independent recomputation
        let u = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        let du = &u - &t;
        let mut q = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                q += du[i] * d2.matrix()[(i, j)] * du[j];
            }
        }
        let direct = du[0] * g[0] + du[1] * g[1] + du[2] * g[2] - 0.5 * q;
        assert_relative_eq!(bracket_eval(&u, &t, &g, &d2).unwrap(), direct, max_relative = 1e-14);
    }

    #[test]
    fn sup_examples() {
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(sup_bracket(&SymMatrix::identity(2), &e1).unwrap(), 0.5);
        assert_eq!(sup_bracket(&SymMatrix::identity(2), &DVector::zeros(2)).unwrap(), 0.0);
        assert!(sup_bracket(&SymMatrix::from_diagonal(&[1.0, -1.0]), &e1).is_err());
        let h = SymMatrix::from_diagonal(&[4.0]);
        assert_relative_eq!(sup_bracket_constrained(&h, &DVector::from_vec(vec![2.0])).unwrap(), 0.5);
    }

    #[test]
    fn tau_examples() {
        let p = BracketParams { delta: 0.0, rho: 0.0, r0: 1.0, nu0: 1.0, a: 1.0, g: 1.0, b: 1.0, x: 1.0 };
        let t = SmoothnessTable::new(vec![0.5, 2.0], vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(tau_smooth(&p, &t).unwrap(), 0.0);
        let t = SmoothnessTable::new(vec![1.0], vec![0.01], vec![0.02]).unwrap();
        assert_relative_eq!(tau_smooth(&p, &t).unwrap(), 0.07, epsilon = 1e-15);
        let t = SmoothnessTable::new(vec![1.0], vec![0.01], vec![0.5]).unwrap();
        assert_relative_eq!(tau_smooth(&BracketParams { a: 2.0, ..p }, &t).unwrap(), 6.01, epsilon = 1e-14);
        assert!(matches!(tau_smooth(&BracketParams { r0: 3.0, ..p }, &t), Err(Error::Range(_))));

        let m = tau_matrix(0.0, 0.0, 1.0);
        assert_eq!((m.tau, m.alpha_up_bound, m.alpha_dn_bound), (0.0, 0.0, 0.0));
        let m = tau_matrix(0.1, 0.1, 1.0);
        assert_relative_eq!(m.tau, 0.2, epsilon = 1e-15);
        assert_relative_eq!(m.alpha_up_bound, 0.25, epsilon = 1e-14);
        assert_relative_eq!(m.alpha_dn_bound, 1.0 / 6.0, epsilon = 1e-14);
        assert!(tau_matrix(0.6, 0.4, 1.0).infinite);
        assert!(tau_matrix(0.5, 0.49999, 1.0).alpha_up_bound > 1e4);
    }

    #[test]
    fn smoothness_table_rules() {
        assert!(SmoothnessTable::new(vec![1.0], vec![0.0], vec![0.6]).is_err());
        assert!(SmoothnessTable::new(vec![2.0, 1.0], vec![0.0; 2], vec![0.0; 2]).is_err());
        let t = SmoothnessTable::new(vec![1.0, 3.0], vec![0.0, 0.2], vec![0.1, 0.3]).unwrap();
        assert_relative_eq!(t.delta_at(2.0).unwrap(), 0.1);
        assert_relative_eq!(t.omega_at(1.5).unwrap(), 0.15);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(SmoothnessTable::read_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn excess_examples() {
        let info = unit_info(1, 1);
        let g = DVector::from_vec(vec![1.0]);
        let e = excess_terms(&info, 0.0, 0.0, &g).unwrap();
        assert_eq!((e.diamond_up, e.diamond_dn), (0.0, 0.0));
        let e = excess_terms(&info, 0.1, 0.0, &g).unwrap();
        assert_relative_eq!(2.0 * e.diamond_up, 1.0 / 0.9 - 1.0, epsilon = 1e-14);
        assert_relative_eq!(2.0 * e.diamond_up, 0.1111, epsilon = 1e-4);
        assert!(e.bounds_hold);
        let e = excess_terms(&unit_info(3, 1), 0.2, 0.1, &DVector::zeros(3)).unwrap();
        assert_eq!(e.diamond_up + e.diamond_dn + e.diamond_up_eta + e.diamond_dn_eta, 0.0);
    }

    #[test]
    fn excess_alpha_within_tau_bounds() {
        let mut rng = seed::rng(12);
        for _ in 0..20 {
            let info = BlockInfoPair::matched(random_pd(&mut rng, 4), 2).unwrap();
            let (d, r) = (rng.random_range(0.0..0.2), rng.random_range(0.0..0.2));
            let g = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let e = excess_terms(&info, d, r, &g).unwrap();
            assert!(e.bounds_hold);
            // V₀ = D₀ so 𝔞 = 1 and τ = δ + ϱ
            let tm = tau_matrix(d, r, 1.0);
            assert!(e.alpha_up <= tm.alpha_up_bound * (1.0 + 1e-9));
            assert!(e.alpha_dn <= tm.alpha_dn_bound * (1.0 + 1e-9));
        }
    }

    fn random_pd(rng: &mut impl Rng, d: usize) -> SymMatrix {
        let a = nalgebra::DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::new(&a * a.transpose() + nalgebra::DMatrix::identity(d, d) * 0.5).unwrap()
    }

    #[test]
    fn err_bound_examples() {
        let e = err_bound(10, 2.0, 1.0, 1e3, 1.0);
        assert_eq!(e.branch, 1);
        assert_relative_eq!(e.zz, (1.0 + 26f64.sqrt()).powi(2), epsilon = 1e-12);
        assert_relative_eq!(e.zz, 37.198, epsilon = 1e-3);
        let e = err_bound(10, 50.0, 1.0, 1.0, 1.0);
        assert_eq!(e.branch, 2);
        assert_relative_eq!(e.zz, (1.0 + 74.0 + 0.5f64).powi(2), epsilon = 1e-12);
        assert_eq!(err_bound(10, 2.0, 0.0, 1e3, 1.0).value, 0.0);
    }

    #[test]
    fn spread_examples() {
        let params = BracketParams { delta: 0.0, rho: 0.0, r0: 1.0, nu0: 1.0, a: 1.0, g: 100.0, b: 1.0, x: 1.0 };
        let zero = SmoothnessTable::new(vec![1.0], vec![0.0], vec![0.0]).unwrap();
        let info = unit_info(2, 1);
        let g = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(spread(&info, &params, &zero, &g).unwrap().spread, 0.0);

        // scalar worked instance: D₀² = V₀² = 1, p* = p = 1
        let info = unit_info(1, 1);
        let t = SmoothnessTable::new(vec![1.0], vec![0.05], vec![0.01]).unwrap();
        let g = DVector::from_vec(vec![2.0]);
        let s = spread(&info, &params, &t, &g).unwrap();
        let rho = 0.03;
        let tau = 0.05 + rho;
        let zz = (1.0 + (1.0 + 2.4f64).sqrt()).powi(2);
        let hand = 4.0 * rho * zz + 2.0 * tau / (1.0 - tau * tau) * 4.0;
        assert_relative_eq!(s.spread, hand, max_relative = 1e-13);

        let bad = SmoothnessTable::new(vec![1.0], vec![0.9], vec![0.1]).unwrap();
        assert!(matches!(spread(&info, &params, &bad, &g), Err(Error::Applicability(_))));
    }

    #[test]
    fn spread_monotone() {
        let info = BlockInfoPair::matched(SymMatrix::from_row_slice(2, &[2.0, 0.5, 0.5, 1.0]).unwrap(), 1).unwrap();
        let g = DVector::from_vec(vec![1.0, -1.0]);
        let base = BracketParams { delta: 0.0, rho: 0.0, r0: 1.0, nu0: 1.0, a: 1.0, g: 5.0, b: 1.0, x: 1.0 };
        let s = |d: f64, w: f64, p: BracketParams| {
            let t = SmoothnessTable::new(vec![1.0], vec![d], vec![w]).unwrap();
            spread(&info, &p, &t, &g).unwrap().spread
        };
        let mut prev = 0.0;
        for k in 0..10 {
            let v = s(0.01 * k as f64, 0.01, base);
            assert!(v >= prev);
            prev = v;
        }
        prev = 0.0;
        for k in 0..10 {
            let v = s(0.01, 0.01 * k as f64, base);
            assert!(v >= prev);
            prev = v;
        }
        prev = 0.0;
        for k in 0..10 {
            let v = s(0.01, 0.01, BracketParams { rho: 0.01 * k as f64, ..base });
            assert!(v >= prev);
            prev = v;
        }
        prev = 0.0;
        for k in 1..40 {
            let v = s(0.01, 0.01, BracketParams { x: 0.5 * k as f64, ..base });
            assert!(v >= prev, "x step {k}");
            prev = v;
        }
    }

    #[test]
    fn concentration_trivial_cases() {
        let truth = ParamVector::from_slice(&[0.0, 0.0, 0.0], 1).unwrap();
        let m = make_gaussian_shift(10, truth, 3).unwrap();
        let fit = profile_fit(&m, &OptimizerSettings::default()).unwrap();
        let br = bracket_matrices(m.info_pair(), 0.0, 0.0);
        let g = m.grad(m.truth().values());
        let ev = concentration_event(m.info_pair(), &br, 1e18, m.truth().values(), &fit, &g).unwrap();
        assert!(ev.all);
        let mut at_truth = fit.clone();
        at_truth.upsilon_hat = m.truth();
        at_truth.upsilon_hat_constrained = m.truth();
        let ev = concentration_event(m.info_pair(), &br, 1e-9, m.truth().values(), &at_truth, &DVector::zeros(3)).unwrap();
        assert!(ev.all);
    }

    #[test]
    fn gaussian_shift_smoothness_vanishes() {
        let truth = ParamVector::from_slice(&[0.5, -0.5, 1.0], 1).unwrap();
        let m = make_gaussian_shift(100, truth, 1).unwrap();
        let radii = [0.5, 1.0, 4.0];
        let d = empirical_delta(&m, &radii, 16, 0, 7).unwrap();
        let w = empirical_omega(&m, &radii, 16, 8, 7).unwrap();
        assert!(d.iter().all(|&v| v <= 1e-12), "{d:?}");
        assert!(w.iter().all(|&v| v <= 1e-10), "{w:?}");
        assert!(empirical_delta(&m, &[], 4, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn logistic_delta_increases() {
        let truth = ParamVector::from_slice(&[0.2, -0.2, 0.2], 1).unwrap();
        let m = make_logistic_iid(2000, 1, 3, truth, DesignSpec::StandardGaussian, 5).unwrap();
        let radii = [0.5, 1.0, 2.0, 4.0, 8.0];
        let d = empirical_delta(&m, &radii, 24, 0, 3).unwrap();
        assert!(d.windows(2).all(|w| w[1] >= w[0]), "{d:?}");
    }

    #[test]
    fn empirical_estimates_are_schedule_independent() {
        let truth = ParamVector::from_slice(&[0.2, -0.2, 0.2], 1).unwrap();
        let m = make_logistic_iid(500, 1, 3, truth, DesignSpec::StandardGaussian, 5).unwrap();
        let radii = [1.0, 2.0];
        let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()
            .install(|| empirical_omega(&m, &radii, 8, 4, 3).unwrap());
        let b = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap()
            .install(|| empirical_omega(&m, &radii, 8, 4, 3).unwrap());
        assert_eq!(a, b);
    }
}
