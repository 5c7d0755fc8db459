//! Adversarial model showing that the profile MLE can fail to be root-n
//! consistent once `p³/n` stops vanishing.
//!
//! `X ~ N(0, I/n)` in `R^p`, the target is the first coordinate and
//! `L(υ) = nXᵀυ − n‖υ‖²/2 + n f(υ)‖υ‖³`, where `f = 1` on the lattice-sliced
//! ball `𝒮 = {υ : υ₁ ∈ hℤ, ‖υ‖ ≤ R}` and `f = 0` outside its `δ`-vicinity.
//! Here `β = √(p³/n)`, `h = ½√(β/n)`, `R = √(2p/n) + ½√(β/n)` and `δ = 1/n`.

use std::io::Write;

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};

use super::{write_rows, ParamVector, QuasiLikelihoodModel};
use crate::error::{Error, Result};
use crate::infogeom::{BlockInfoPair, SymMatrix};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct CritDimConfig {
    pub n: usize,
    pub p_n: usize,
    pub seed: u64,
    /// `false` switches the bump off (`f ≡ 0`), leaving the Gaussian shift.
    pub bump: bool,
    /// Fraction of `δ = 1/n` over which the smoothstep falls from 1 to 0.
    pub bump_margin: f64,
}

impl CritDimConfig {
    pub fn new(n: usize, p_n: usize, seed: u64) -> Self {
        Self {
            n,
            p_n,
            seed,
            bump: true,
            bump_margin: 1.0,
        }
    }

    pub fn beta(&self) -> f64 {
        ((self.p_n as f64).powi(3) / self.n as f64).sqrt()
    }

    pub fn delta(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn spacing(&self) -> f64 {
        0.5 * (self.beta() / self.n as f64).sqrt()
    }

    pub fn radius(&self) -> f64 {
        (2.0 * self.p_n as f64 / self.n as f64).sqrt() + self.spacing()
    }
}

/// `(2^{1/3} − 1)/2^{1/6}·√(p/n) ≥ ½(p/n)^{3/4}`.
pub fn premise_holds(n: usize, p_n: usize) -> bool {
    let r = p_n as f64 / n as f64;
    let c = (2f64.cbrt() - 1.0) / 2f64.powf(1.0 / 6.0);
    c * r.sqrt() >= 0.5 * r.powf(0.75)
}

/// Quintic smoothstep on `[0, 1]`.
fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

fn smoothstep_deriv(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

#[derive(Debug, Clone)]
pub struct CritDimModel {
    cfg: CritDimConfig,
    x: DVector<f64>,
    truth: ParamVector,
    info: BlockInfoPair,
    h: f64,
    radius: f64,
    width: f64,
    z_max: i64,
}

pub fn make_critdim(cfg: CritDimConfig) -> Result<CritDimModel> {
    if cfg.p_n < 2 {
        return Err(Error::Config(format!("critical-dimension model needs p_n ≥ 2, got {}", cfg.p_n)));
    }
    if cfg.n < 1 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    if !premise_holds(cfg.n, cfg.p_n) {
        return Err(Error::Config(format!(
            "premise (2^(1/3)-1)/2^(1/6)*sqrt(p/n) >= (p/n)^(3/4)/2 fails for n={}, p_n={}",
            cfg.n, cfg.p_n
        )));
    }
    if !(cfg.bump_margin > 0.0 && cfg.bump_margin <= 1.0) {
        return Err(Error::Config(format!("bump_margin {} outside (0, 1]", cfg.bump_margin)));
    }
    let d = cfg.p_n;
    let mut rng = seed::rng(cfg.seed);
    let scale = 1.0 / (cfg.n as f64).sqrt();
    let x = DVector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    });
    let h = cfg.spacing();
    let radius = cfg.radius();
    let width = cfg.delta() * cfg.bump_margin;
    let info = BlockInfoPair::matched(SymMatrix::scaled_identity(d, cfg.n as f64), 1)?;
    Ok(CritDimModel {
        truth: ParamVector::zeros(d, 1)?,
        z_max: (radius / h).floor() as i64,
        cfg,
        x,
        info,
        h,
        radius,
        width,
    })
}

/// Distance to one slice and the gradient of that distance.
struct SliceDist {
    d: f64,
    du: f64,
    dw_scale: f64,
}

impl CritDimModel {
    pub fn config(&self) -> &CritDimConfig {
        &self.cfg
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn beta(&self) -> f64 {
        self.cfg.beta()
    }

    /// Lattice indices `z` with `|zh| ≤ R`.
    pub fn lattice_range(&self) -> std::ops::RangeInclusive<i64> {
        -self.z_max..=self.z_max
    }

    pub fn lattice_value(&self, z: i64) -> f64 {
        z as f64 * self.h
    }

    /// Radius of the slice `υ₁ = zh` of the ball.
    pub fn slice_radius(&self, z: i64) -> f64 {
        let c = self.lattice_value(z);
        (self.radius * self.radius - c * c).max(0.0).sqrt()
    }

    // For the slice at c with disk radius ρ: if ‖w‖ ≤ ρ the nearest point is
    // (c, w) and the distance is |u − c|; otherwise it is the rim point
    // (c, ρw/‖w‖) at distance √((u−c)² + (‖w‖−ρ)²).
    fn slice_distance(&self, z: i64, u: f64, wn: f64) -> SliceDist {
        let c = self.lattice_value(z);
        let rho = self.slice_radius(z);
        let du = u - c;
        if wn <= rho {
            SliceDist {
                d: du.abs(),
                du: du.signum(),
                dw_scale: 0.0,
            }
        } else {
            let dr = wn - rho;
            let d = du.hypot(dr);
            SliceDist {
                d,
                du: du / d,
                dw_scale: dr / (d * wn),
            }
        }
    }

    /// Distance from `υ` to `𝒮`, using the two nearest lattice slices.
    fn set_distance(&self, u: &DVector<f64>) -> SliceDist {
        let u1 = u[0];
        let wn = u.rows(1, u.len() - 1).norm();
        let k = u1 / self.h;
        let mut best: Option<SliceDist> = None;
        for z in [k.floor(), k.ceil()] {
            let z = (z as i64).clamp(-self.z_max, self.z_max);
            let s = self.slice_distance(z, u1, wn);
            if best.as_ref().is_none_or(|b| s.d < b.d) {
                best = Some(s);
            }
        }
        best.expect("two candidates")
    }

    pub fn distance_to_set(&self, u: &DVector<f64>) -> f64 {
        self.set_distance(u).d
    }

    /// The bump `f(υ) ∈ [0, 1]`.
    pub fn bump(&self, u: &DVector<f64>) -> f64 {
        if !self.cfg.bump {
            return 0.0;
        }
        smoothstep(1.0 - self.distance_to_set(u) / self.width)
    }

    fn bump_and_grad(&self, u: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut g = DVector::zeros(u.len());
        if !self.cfg.bump {
            return (0.0, g);
        }
        let sd = self.set_distance(u);
        let t = 1.0 - sd.d / self.width;
        let f = smoothstep(t);
        let ds = smoothstep_deriv(t);
        if ds != 0.0 {
            let k = -ds / self.width;
            g[0] = k * sd.du;
            for j in 1..u.len() {
                g[j] = k * sd.dw_scale * u[j];
            }
        }
        (f, g)
    }

    /// Log-likelihood restricted to `υ = (c, s·X_w/‖X_w‖)` on slice `c`
    /// where `f = 1`, as a function of `s ∈ [0, ρ]`.
    pub fn slice_objective(&self, c: f64, s: f64) -> f64 {
        let n = self.cfg.n as f64;
        let xw = self.x.rows(1, self.x.len() - 1).norm();
        let r2 = c * c + s * s;
        let bump = if self.cfg.bump { r2 * r2.sqrt() } else { 0.0 };
        n * (self.x[0] * c + xw * s - 0.5 * r2 + bump)
    }

    /// Point `(c, s·X_w/‖X_w‖)`; a zero `X_w` yields `s = 0`.
    pub fn slice_point(&self, c: f64, s: f64) -> DVector<f64> {
        let mut u = DVector::zeros(self.x.len());
        u[0] = c;
        let xw = self.x.rows(1, self.x.len() - 1);
        let nrm = xw.norm();
        if nrm > 0.0 {
            for j in 1..self.x.len() {
                u[j] = s * self.x[j] / nrm;
            }
        }
        u
    }
}

impl QuasiLikelihoodModel for CritDimModel {
    fn dim(&self) -> usize {
        self.x.len()
    }

    fn split(&self) -> usize {
        1
    }

    fn sample_size(&self) -> usize {
        self.cfg.n
    }

    fn loglik(&self, u: &DVector<f64>) -> f64 {
        let n = self.cfg.n as f64;
        let r2 = u.norm_squared();
        n * self.x.dot(u) - 0.5 * n * r2 + n * self.bump(u) * r2 * r2.sqrt()
    }

    fn grad(&self, u: &DVector<f64>) -> DVector<f64> {
        let n = self.cfg.n as f64;
        let r = u.norm();
        let (f, gf) = self.bump_and_grad(u);
        // ∇(f‖υ‖³) = ‖υ‖³∇f + 3f‖υ‖υ
        (&self.x - u) * n + (gf * (r * r * r) + u * (3.0 * f * r)) * n
    }

    fn truth(&self) -> ParamVector {
        self.truth.clone()
    }

    fn info_pair(&self) -> &BlockInfoPair {
        &self.info
    }

    fn resample(&self, seed: u64) -> Box<dyn QuasiLikelihoodModel> {
        let cfg = CritDimConfig {
            seed,
            ..self.cfg.clone()
        };
        Box::new(make_critdim(cfg).expect("validated configuration"))
    }

    fn write_dataset(&self, out: &mut dyn Write) -> Result<()> {
        let header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        write_rows(out, &header, std::iter::once(self.x.iter().copied().collect()))
    }

    fn is_quadratic(&self) -> bool {
        !self.cfg.bump
    }

    fn as_critdim(&self) -> Option<&CritDimModel> {
        Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fd_grad;
    use proptest::prelude::*;
    use rand::Rng;

    fn model(n: usize, p: usize) -> CritDimModel {
        make_critdim(CritDimConfig::new(n, p, 42)).unwrap()
    }

    #[test]
    fn geometry_by_substitution() {
        let c = CritDimConfig::new(1_000_000, 100, 0);
        assert!((c.beta() - 1.0).abs() < 1e-12);
        assert!((c.spacing() - 5e-4).abs() < 1e-15);
        assert!((c.radius() - (0.0002f64.sqrt() + 5e-4)).abs() < 1e-15);
    }

    #[test]
    fn premise_enforced() {
        assert!(premise_holds(10_000, 22));
        assert!(!premise_holds(100, 50));
        assert!(matches!(
            make_critdim(CritDimConfig::new(100, 50, 0)),
            Err(Error::Config(msg)) if msg.contains("premise")
        ));
        assert!(make_critdim(CritDimConfig::new(100, 1, 0)).is_err());
    }

    #[test]
    fn on_set_and_outside_vicinity() {
        let m = model(10_000, 22);
        let u = m.slice_point(m.lattice_value(2), 0.5 * m.slice_radius(2));
        assert_eq!(m.distance_to_set(&u), 0.0);
        assert_eq!(m.bump(&u), 1.0);
        let mut far = u.clone();
        far[0] += 0.5 * m.spacing();
        assert!(m.distance_to_set(&far) >= m.config().delta());
        let n = 10_000.0;
        let expected = n * m.x().dot(&far) - 0.5 * n * far.norm_squared();
        assert_eq!(m.loglik(&far), expected);
    }

    #[test]
    fn grad_matches_fd_at_random_points() {
        let m = model(10_000, 22);
        let mut rng = seed::rng(8);
        // A central difference straddling the thin vicinity is meaningless,
        // so points that close to the set are redrawn; the vicinity itself is
        // covered by the next test with a finer step.
        let clearance = m.config().delta() + 10.0 * crate::model::FD_STEP;
        let mut checked = 0;
        while checked < 10 {
            let u = DVector::from_fn(22, |_, _| rng.random_range(-0.02..0.02));
            if m.distance_to_set(&u) < clearance {
                continue;
            }
            checked += 1;
            let (g, f) = (m.grad(&u), fd_grad(&m, &u));
            assert!((&g - &f).norm() <= 1e-5 * g.norm().max(1.0), "{} vs {}", g.norm(), f.norm());
        }
    }

    #[test]
    fn grad_matches_fd_inside_vicinity() {
        let m = model(10_000, 22);
        let mut u = m.slice_point(m.lattice_value(1), 0.3 * m.slice_radius(1));
        u[0] += 0.4 * m.config().delta();
        let g = m.grad(&u);
        let h = 1e-9;
        let mut e = u.clone();
        e[0] += h;
        let up = m.loglik(&e);
        e[0] -= 2.0 * h;
        let fd = (up - m.loglik(&e)) / (2.0 * h);
        assert!((g[0] - fd).abs() <= 1e-4 * g[0].abs().max(1.0), "{} vs {fd}", g[0]);
    }

    #[test]
    fn bump_disabled_is_shift() {
        let mut c = CritDimConfig::new(10_000, 22, 3);
        c.bump = false;
        let m = make_critdim(c).unwrap();
        let u = m.slice_point(0.0, 0.0);
        assert_eq!(m.bump(&u), 0.0);
        assert!(m.grad(m.x()).norm() == 0.0);
    }

    proptest! {
        #[test]
        fn bump_bounded_and_loglik_continuous(z in -5i64..=5, frac in 0.0f64..2.0, s in 0.0f64..1.2, eps in 1e-12f64..1e-9) {
            let m = model(10_000, 22);
            let z = z.clamp(*m.lattice_range().start(), *m.lattice_range().end());
            let c = m.lattice_value(z);
            let mut u = m.slice_point(c, s * m.slice_radius(z));
            u[0] += frac * m.config().delta();
            let f = m.bump(&u);
            prop_assert!((0.0..=1.0).contains(&f));
            if m.distance_to_set(&u) >= m.config().delta() {
                prop_assert_eq!(f, 0.0);
            }
            let mut v = u.clone();
            v[0] += eps;
            let scale = m.loglik(&u).abs().max(1.0);
            prop_assert!((m.loglik(&u) - m.loglik(&v)).abs() <= 1e-3 * scale);
        }
    }
}
