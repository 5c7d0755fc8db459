//! Deviation bounds for quadratic forms `‖Bξ‖²` of sub-Gaussian vectors and
//! the large-deviation radius rules.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brackets::q_const;
use crate::error::{Error, Result};
use crate::infogeom::SymMatrix;
use crate::seed;

/// `(tr B², √(2 tr B⁴), ‖B²‖∞)`.
pub fn qf_features(b: &SymMatrix) -> (f64, f64, f64) {
    let spec = b.spectral();
    let sq: Vec<f64> = spec.eigenvalues().iter().map(|l| l * l).collect();
    let p_bar = sq.iter().sum();
    let v = (2.0 * sq.iter().map(|s| s * s).sum::<f64>()).sqrt();
    let lambda_star = sq.iter().copied().fold(0.0, f64::max);
    (p_bar, v, lambda_star)
}

fn omega_lhs(w: f64) -> f64 {
    w * (1.0 + w) / (1.0 + w * w).sqrt()
}

/// Residual bound accepted for the `ω_c` root.
pub const OMEGA_RESIDUAL: f64 = 1e-12;

/// Root of `ω(1+ω)/√(1+ω²) = g/√p̄`.
pub fn omega_c(g: f64, p_bar: f64) -> Result<f64> {
    if !(g.is_finite() && p_bar.is_finite()) || g <= 0.0 || p_bar <= 0.0 {
        return Err(Error::Domain(format!("omega_c needs finite g > 0 and p_bar > 0, got g={g}, p_bar={p_bar}")));
    }
    let rhs = g / p_bar.sqrt();
    let mut lo = 0.0;
    let mut hi = 1.0 + rhs;
    while omega_lhs(hi) < rhs {
        hi *= 2.0;
    }
    // Absolute stop, tighter than the relative bound 1e-12·(1+RHS); the
    // interval test ends the loop at float resolution for large RHS.
    for _ in 0..4000 {
        let mid = 0.5 * (lo + hi);
        let f = omega_lhs(mid) - rhs;
        if f.abs() <= 0.25 * OMEGA_RESIDUAL || hi - lo <= f64::EPSILON * hi {
            return Ok(mid);
        }
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Residual `|LHS(ω) − g/√p̄|` of the `ω_c` equation.
pub fn omega_c_residual(w: f64, g: f64, p_bar: f64) -> f64 {
    (omega_lhs(w) - g / p_bar.sqrt()).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QFBoundReport {
    pub p_bar: f64,
    pub v: f64,
    pub lambda_star: f64,
    pub omega_c: f64,
    pub mu_c: f64,
    pub y_c: f64,
    pub y_c2: f64,
    pub x_c: f64,
    pub g: f64,
}

/// Full set of critical quantities for `B` and the exponential-moment
/// range `g`.
pub fn critical_quantities(b: &SymMatrix, g: f64) -> Result<QFBoundReport> {
    let spec = b.spectral();
    let (p_bar, v, lambda_star) = qf_features(b);
    if lambda_star > 1.0 {
        return Err(Error::Domain(format!(
            "lambda* = {lambda_star} exceeds 1: replace everywhere B with B/lambda*"
        )));
    }
    if p_bar <= 0.0 {
        return Err(Error::Domain("B = 0 has no critical quantities".into()));
    }
    if g * g < 2.0 * p_bar {
        return Err(Error::Applicability(format!(
            "hypothesis g^2 >= 2 p_bar fails: g^2 = {}, 2 p_bar = {}",
            g * g,
            2.0 * p_bar
        )));
    }
    let w = omega_c(g, p_bar)?;
    let mu_c = (w * w / (1.0 + w * w)).min(2.0 / 3.0);
    let y_c2 = (1.0 + w * w) * p_bar;
    let log_det: f64 = spec.eigenvalues().iter().map(|l| (1.0 - mu_c * l * l).ln()).sum();
    let x_c = 0.5 * (mu_c * y_c2 + log_det);
    Ok(QFBoundReport {
        p_bar,
        v,
        lambda_star,
        omega_c: w,
        mu_c,
        y_c: y_c2.sqrt(),
        y_c2,
        x_c,
        g,
    })
}

/// Which piece of the quantile formula applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantileBranch {
    /// `p̄ + 2v√x`, for `x ≤ v/18`
    Sqrt,
    /// `p̄ + 6x`, for `v/18 < x ≤ x_c`
    Linear,
    /// `(y_c + 2(x−x_c)/g_c)²`, for `x > x_c`
    Tail,
    /// `x > x_c` without a tail slope
    Gated,
}

impl QuantileBranch {
    pub fn label(self) -> &'static str {
        match self {
            QuantileBranch::Sqrt => "sqrt",
            QuantileBranch::Linear => "linear",
            QuantileBranch::Tail => "tail",
            QuantileBranch::Gated => "gated",
        }
    }
}

/// Quantile `𝔷(x, B)` from a report; `None` when the tail is gated.
pub fn quantile_from_report(r: &QFBoundReport, x: f64, tail_slope: Option<f64>) -> Result<(Option<f64>, QuantileBranch)> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("x = {x} must be nonnegative")));
    }
    if x > r.x_c {
        return match tail_slope {
            Some(gc) if gc > 0.0 => {
                let t = r.y_c + 2.0 * (x - r.x_c) / gc;
                Ok((Some(t * t), QuantileBranch::Tail))
            }
            Some(gc) => Err(Error::Domain(format!("tail_slope {gc} must be positive"))),
            None => Ok((None, QuantileBranch::Gated)),
        };
    }
    if x <= r.v / 18.0 {
        Ok((Some(r.p_bar + 2.0 * r.v * x.sqrt()), QuantileBranch::Sqrt))
    } else {
        Ok((Some(r.p_bar + 6.0 * x), QuantileBranch::Linear))
    }
}

/// `𝔷(x, B)`. Beyond `x_c` an explicit `tail_slope` is required.
pub fn qf_quantile(x: f64, b: &SymMatrix, g: f64, tail_slope: Option<f64>) -> Result<f64> {
    let r = critical_quantities(b, g)?;
    match quantile_from_report(&r, x, tail_slope)? {
        (Some(v), _) => Ok(v),
        (None, _) => Err(Error::Capability(format!(
            "x = {x} exceeds x_c = {}; the tail branch needs an explicit tail_slope",
            r.x_c
        ))),
    }
}

/// Tail probability bound `2e^{-x} + 8.4e^{-x_c}`.
pub fn tail_bound(x: f64, x_c: f64) -> f64 {
    2.0 * (-x).exp() + 8.4 * (-x_c).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub x: f64,
    pub value: Option<f64>,
    pub branch: QuantileBranch,
}

pub fn quantile_table(r: &QFBoundReport, x_grid: &[f64], tail_slope: Option<f64>) -> Result<Vec<QuantileRow>> {
    x_grid
        .iter()
        .map(|&x| {
            let (value, branch) = quantile_from_report(r, x, tail_slope)?;
            Ok(QuantileRow { x, value, branch })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub x: f64,
    pub zz: Option<f64>,
    pub empirical: f64,
    pub se: f64,
    pub bound: f64,
    pub pass: bool,
    pub gated: bool,
}

/// Monte Carlo frequency of `‖Bξ‖² ≥ 𝔷(x, B)` for standard Gaussian `ξ`.
/// Each x uses its own derived stream.
pub fn qf_tail_validate(
    b: &SymMatrix,
    g: f64,
    x_grid: &[f64],
    n_mc: usize,
    seed: u64,
    tail_slope: Option<f64>,
) -> Result<Vec<TailCheck>> {
    if n_mc == 0 {
        return Err(Error::Config("n_mc must be positive".into()));
    }
    let (p_bar, _, _) = qf_features(b);
    let report = if p_bar == 0.0 {
        // B = 0: ‖Bξ‖² ≡ 0, no critical point, and 𝔷 = 6x on the linear piece.
        QFBoundReport {
            p_bar: 0.0,
            v: 0.0,
            lambda_star: 0.0,
            omega_c: f64::INFINITY,
            mu_c: 2.0 / 3.0,
            y_c: f64::INFINITY,
            y_c2: f64::INFINITY,
            x_c: f64::INFINITY,
            g,
        }
    } else {
        critical_quantities(b, g)?
    };
    let sq: Vec<f64> = b.spectral().eigenvalues().iter().map(|l| l * l).collect();
    x_grid
        .par_iter()
        .enumerate()
        .map(|(k, &x)| {
            let (zz, _) = quantile_from_report(&report, x, tail_slope)?;
            let bound = tail_bound(x, report.x_c);
            let Some(z) = zz else {
                return Ok(TailCheck { x, zz, empirical: f64::NAN, se: f64::NAN, bound, pass: true, gated: true });
            };
            let mut rng = seed::rng(seed::split(seed, 0x7A11, k as u64));
            let mut hits = 0usize;
            for _ in 0..n_mc {
                let q: f64 = sq
                    .iter()
                    .map(|s| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        s * e * e
                    })
                    .sum();
                if q >= z {
                    hits += 1;
                }
            }
            let empirical = hits as f64 / n_mc as f64;
            let se = crate::stats::binomial_se(empirical, n_mc);
            Ok(TailCheck {
                x,
                zz,
                empirical,
                se,
                bound,
                pass: empirical <= bound + 3.0 * se,
                gated: false,
            })
        })
        .collect()
}

/// `r₀ = 6ν₀√(x + ℚ)/b` with `ℚ = 2.4p*`.
pub fn r0_rule(nu0: f64, b: f64, x: f64, p_star: usize) -> f64 {
    6.0 * nu0 * (x + q_const(p_star)).sqrt() / b
}

/// The two large-deviation conditions `1 + √(x+ℚ) ≤ 3ν₀²g/b` and
/// `6ν₀√(x+ℚ) ≤ rb`, each with a `1e-12` relative allowance for rounding.
pub fn large_dev_check(r: f64, g: f64, b: f64, nu0: f64, x: f64, p_star: usize) -> (bool, bool) {
    let root = (x + q_const(p_star)).sqrt();
    let le = |lhs: f64, rhs: f64| lhs <= rhs + 1e-12 * rhs.abs().max(lhs.abs());
    (le(1.0 + root, 3.0 * nu0 * nu0 * g / b), le(6.0 * nu0 * root, r * b))
}

/// Eigenvalue-sum `log det(I − μB²)`, exposed for cross-checks.
pub fn log_det_i_minus(b: &SymMatrix, mu: f64) -> Result<f64> {
    let m = SymMatrix::identity(b.dim()).combine(1.0, &SymMatrix::symmetrize(b.matrix() * b.matrix()), -mu)?;
    m.spectral().log_det("I - mu B^2")
}

/// Features of a diagonal `B` given as its diagonal entries.
pub fn diag(entries: &[f64]) -> SymMatrix {
    SymMatrix::from_diagonal(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chi2_sf;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn feature_examples() {
        assert_eq!(qf_features(&SymMatrix::identity(2)), (2.0, 2.0, 1.0));
        let (p, v, l) = qf_features(&diag(&[1.0, 0.0]));
        assert_eq!((p, l), (1.0, 1.0));
        assert_relative_eq!(v, 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(qf_features(&diag(&[0.0, 0.0])), (0.0, 0.0, 0.0));
    }

    #[test]
    fn omega_c_examples() {
        let w = omega_c(1e-6, 1.0).unwrap();
        assert_relative_eq!(w, 1e-6, max_relative = 1e-5);
        let w = omega_c(10.0, 2.0).unwrap();
        assert!(w > 6.1 && w < 6.2, "{w}");
        let w = omega_c(2f64.sqrt(), 1.0).unwrap();
        assert_relative_eq!(w, 1.0, epsilon = 1e-12);
        assert!(omega_c(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn omega_c_residual_on_grid() {
        for &g in &[0.01, 0.3, 1.0, 3.0, 10.0, 100.0, 1e4] {
            for &p in &[0.5, 1.0, 5.0, 20.0, 400.0] {
                let w = omega_c(g, p).unwrap();
                let rhs = g / p.sqrt();
                assert!(omega_c_residual(w, g, p) <= OMEGA_RESIDUAL * (1.0 + rhs));
            }
        }
    }

    #[test]
    fn critical_examples() {
        let r = critical_quantities(&SymMatrix::identity(3), 1e4).unwrap();
        assert_eq!(r.mu_c, 2.0 / 3.0);
        assert_relative_eq!(r.y_c2, (1.0 + r.omega_c * r.omega_c) * 3.0, max_relative = 1e-15);
        let r = critical_quantities(&SymMatrix::identity(1), 1e3).unwrap();
        assert_relative_eq!(2.0 * r.x_c, (2.0 / 3.0) * r.y_c2 + (1.0f64 / 3.0).ln(), max_relative = 1e-14);
        let b = diag(&[0.9, 0.5, 0.1, 0.7]);
        let r = critical_quantities(&b, 50.0).unwrap();
        let direct = log_det_i_minus(&b, r.mu_c).unwrap();
        let sum: f64 = [0.9f64, 0.5, 0.1, 0.7].iter().map(|l| (1.0 - r.mu_c * l * l).ln()).sum();
        assert_relative_eq!(direct, sum, max_relative = 1e-12);
        assert_relative_eq!(2.0 * r.x_c, r.mu_c * r.y_c2 + sum, max_relative = 1e-12);
    }

    #[test]
    fn critical_errors() {
        match critical_quantities(&diag(&[2.0, 1.0]), 100.0) {
            Err(Error::Domain(msg)) => assert!(msg.contains("replace everywhere B with B/lambda*")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(critical_quantities(&SymMatrix::identity(5), 1.0), Err(Error::Applicability(_))));
    }

    #[test]
    fn quantile_examples() {
        let b = SymMatrix::identity(2);
        assert_relative_eq!(qf_quantile(1.0 / 9.0, &b, 10.0, None).unwrap(), 10.0 / 3.0, epsilon = 1e-14);
        assert_eq!(qf_quantile(1.0, &b, 10.0, None).unwrap(), 8.0);
        assert_eq!(qf_quantile(0.0, &b, 10.0, None).unwrap(), 2.0);
        let r = critical_quantities(&b, 10.0).unwrap();
        assert!(matches!(qf_quantile(r.x_c + 1.0, &b, 10.0, None), Err(Error::Capability(_))));
        let t = qf_quantile(r.x_c + 1.0, &b, 10.0, Some(2.0)).unwrap();
        assert_relative_eq!(t, (r.y_c + 1.0).powi(2), max_relative = 1e-14);
        let rows = quantile_table(&r, &[0.1, 1.0, r.x_c + 2.0], None).unwrap();
        assert_eq!(rows[2].branch, QuantileBranch::Gated);
        assert_eq!(rows[0].branch, QuantileBranch::Sqrt);
    }

    #[test]
    fn identity_bound_exact_chi2() {
        for &p in &[1usize, 5, 20] {
            let b = SymMatrix::identity(p);
            let g = 10.0 * (p as f64).sqrt();
            for &x in &[0.5, 1.0, 2.0, 4.0] {
                let z = qf_quantile(x, &b, g, None).unwrap();
                assert!(chi2_sf(p as f64, z) <= 2.0 * (-x).exp());
            }
        }
    }

    #[test]
    fn tail_validate_examples() {
        let r = qf_tail_validate(&SymMatrix::identity(5), 100.0, &[2.0], 200_000, 1, None).unwrap();
        assert!((r[0].empirical - chi2_sf(5.0, 17.0)).abs() < 5.0 * r[0].se.max(1e-4));
        assert!(r[0].pass);
        let r = qf_tail_validate(&diag(&[0.0, 0.0]), 10.0, &[0.5, 2.0], 1000, 2, None).unwrap();
        assert!(r.iter().all(|c| c.empirical == 0.0 && c.pass));
        let r = qf_tail_validate(&SymMatrix::identity(1), 10.0, &[0.0], 200_000, 2, None).unwrap();
        assert!((r[0].empirical - 0.3173).abs() < 0.005);
        assert!(r[0].pass);
    }

    #[test]
    fn radius_rules() {
        assert_relative_eq!(r0_rule(1.0, 1.0, 0.6, 1), 6.0 * 3f64.sqrt(), epsilon = 1e-12);
        assert!(r0_rule(1.0, 1e6, 0.6, 1) < 1e-4);
        assert_relative_eq!(r0_rule(2.0, 1.0, 0.6, 1), 2.0 * r0_rule(1.0, 1.0, 0.6, 1), epsilon = 1e-12);
        for &(nu, b, x, p) in &[(1.0, 1.0, 0.6, 1usize), (0.7, 0.3, 5.0, 9), (3.0, 2.0, 1.1, 40)] {
            let r = r0_rule(nu, b, x, p);
            assert!(large_dev_check(r, 1e9, b, nu, x, p).1);
            assert!(!large_dev_check(r * (1.0 - 1e-9), 1e9, b, nu, x, p).1);
        }
        assert!(!large_dev_check(1.0, 0.0, 1.0, 1.0, 1.0, 1).0);
        assert_eq!(large_dev_check(1e9, 1e9, 1.0, 1.0, 1.0, 1), (true, true));
    }

    proptest! {
        #[test]
        fn scaling_law(d in proptest::collection::vec(-1.0f64..1.0, 1..6), c in 0.1f64..3.0) {
            let b = diag(&d);
            let (p, v, l) = qf_features(&b);
            let (pc, vc, lc) = qf_features(&b.scale(c));
            prop_assert!((pc - c * c * p).abs() <= 1e-12 * (1.0 + pc));
            prop_assert!((vc - c * c * v).abs() <= 1e-12 * (1.0 + vc));
            prop_assert!((lc - c * c * l).abs() <= 1e-12 * (1.0 + lc));
        }

        #[test]
        fn quantile_nondecreasing_per_branch(p in 1usize..30, g_mult in 1.5f64..20.0) {
            let b = SymMatrix::identity(p);
            let g = g_mult * (2.0 * p as f64).sqrt();
            let r = critical_quantities(&b, g).unwrap();
            let xs: Vec<f64> = (0..200).map(|k| k as f64 * r.x_c.min(50.0) / 199.0).collect();
            let rows = quantile_table(&r, &xs, None).unwrap();
            for w in rows.windows(2) {
                if w[0].branch == w[1].branch {
                    prop_assert!(w[1].value.unwrap() >= w[0].value.unwrap());
                }
            }
        }

        #[test]
        fn omega_c_lhs_increasing(a in 0.0f64..50.0, h in 1e-6f64..5.0) {
            prop_assert!(omega_lhs(a + h) > omega_lhs(a));
        }
    }
}
