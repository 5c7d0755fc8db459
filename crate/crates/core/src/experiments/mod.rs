//! Seeded Monte Carlo studies: the Wilks law, Fisher residual scaling,
//! confidence coverage, normality of the efficient score, the
//! critical-dimension trichotomy and a scan of the bracketing conditions.
//!
//! Replication `rep` of group `g` draws its data from seed
//! `split(master_seed, g, rep)`. Tasks run on a rayon pool sized by
//! `thread_hint` and are collected in `(group, rep)` order, so rows never
//! depend on scheduling and adding replications leaves earlier rows alone.
//! A replication that errors or fails to converge is kept as a row with
//! `converged = 0` and is excluded from the summary.

mod config;
mod report;
mod summary;

use nalgebra::DVector;
use rayon::prelude::*;

pub use config::{
    plan_groups, CritdimSection, DesignKind, ExperimentConfig, ExperimentKind, GroupPlan, ModelKind, ModelSection,
    Regime, ScanSection, ScheduleSection,
};
pub use report::{
    read_rows_csv, read_tables_csv, summary_json, write_rows_csv, write_tables_csv, ExperimentReport, GroupTable, Row,
};
pub use summary::{
    fisher_beta, scan_r0, summarize, GroupSummary, Summary, Verdict, COVERAGE_SLACK, EXACT_TOL, EXCLUSION_LIMIT,
    KS_MARGIN_ASYMPTOTIC, KS_MARGIN_EXACT,
};

use crate::brackets::{
    bracket_matrices, concentration_event, empirical_delta, empirical_omega, spread, wilks_certificate, BracketParams,
    SmoothnessTable,
};
use crate::error::{Error, Result};
use crate::estimator::{full_mle, profile_fit, ConfidenceSet};
use crate::infogeom::{efficient_score, SymMatrix};
use crate::model::{
    make_critdim, make_gaussian_shift, make_logistic_iid, make_quadratic, CritDimConfig, ParamVector,
    QuasiLikelihoodModel,
};
use crate::seed::split;
use crate::stats::chi2_quantile;

/// Second seed coordinate of the per-group template model, out of the range
/// of replication indices.
const TEMPLATE_STREAM: u64 = u64::MAX;
/// Second seed coordinate of the scan's smoothness estimates.
const TABLE_STREAM: u64 = u64::MAX - 1;

/// Value columns of each study, in row order.
pub fn columns(cfg: &ExperimentConfig, kind: ExperimentKind) -> Vec<String> {
    let names: Vec<String> = match kind {
        ExperimentKind::Wilks => ["wilks_t", "two_t", "xi_sq", "gap", "fisher_residual"]
            .map(String::from)
            .to_vec(),
        ExperimentKind::Fisher => ["fisher_residual", "residual_sq", "wilks_t"].map(String::from).to_vec(),
        ExperimentKind::Coverage => vec!["covered".into()],
        ExperimentKind::Normality => (1..=cfg.model.p)
            .map(|j| format!("xi_{j}"))
            .chain(std::iter::once("xi_sq".into()))
            .collect(),
        ExperimentKind::Critdim => ["dev", "beta_n", "threshold", "hit"].map(String::from).to_vec(),
        ExperimentKind::Scan => [
            "gap",
            "spread",
            "tau",
            "certificate",
            "conc_full",
            "conc_constrained",
            "conc_score",
            "conc_score_eta",
            "conc_all",
        ]
        .map(String::from)
        .to_vec(),
    };
    names
}

/// `υ*` with alternating signs and `‖υ*‖ = truth_scale`.
pub fn truth_vector(cfg: &ExperimentConfig) -> Result<ParamVector> {
    let d = cfg.model.p_star;
    let m = cfg.model.truth_scale / (d as f64).sqrt();
    ParamVector::new(
        DVector::from_fn(d, |i, _| if i % 2 == 0 { m } else { -m }),
        cfg.model.p,
    )
}

/// Model of the configured kind at sample size `n`.
pub fn build_model(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<Box<dyn QuasiLikelihoodModel>> {
    let truth = truth_vector(cfg)?;
    let (p, d) = (cfg.model.p, cfg.model.p_star);
    Ok(match cfg.model.kind {
        ModelKind::Gaussian => Box::new(make_gaussian_shift(n, truth, seed)?),
        ModelKind::Quadratic => {
            let rho = cfg.model.design_rho;
            let nf = n as f64;
            let m = nalgebra::DMatrix::from_fn(d, d, |i, j| nf * if i == j { 1.0 } else { rho });
            Box::new(make_quadratic(SymMatrix::new(m)?, truth, n, seed)?)
        }
        ModelKind::Logistic => Box::new(make_logistic_iid(n, p, d, truth, cfg.design_spec(), seed)?),
    })
}

fn pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.thread_hint)
        .build()
        .map_err(|e| Error::Config(format!("cannot build the worker pool: {e}")))
}

/// Runs `rep_fn(group_index, rep, seed)` for every replication of every
/// group and collects rows in `(group, rep)` order.
fn run_rows<F>(cfg: &ExperimentConfig, plans: &[GroupPlan], width: usize, rep_fn: F) -> Result<Vec<Row>>
where
    F: Fn(usize, u64) -> Result<(bool, Vec<f64>)> + Sync,
{
    let reps = cfg.schedule.replications;
    let total = plans.len() * reps;
    let rows = pool(cfg)?.install(|| {
        (0..total)
            .into_par_iter()
            .map(|t| {
                let (gi, rep) = (t / reps, t % reps);
                let plan = &plans[gi];
                let seed = split(cfg.master_seed, plan.index as u64, rep as u64);
                let (converged, values) = match rep_fn(gi, seed) {
                    Ok((c, v)) => {
                        debug_assert_eq!(v.len(), width);
                        (c, v)
                    }
                    Err(_) => (false, vec![f64::NAN; width]),
                };
                Row {
                    group: plan.index,
                    n: plan.n,
                    dim: plan.dim,
                    rep,
                    seed,
                    converged,
                    values,
                }
            })
            .collect()
    });
    Ok(rows)
}

fn templates(cfg: &ExperimentConfig, plans: &[GroupPlan]) -> Result<Vec<Box<dyn QuasiLikelihoodModel>>> {
    plans
        .iter()
        .map(|g| build_model(cfg, g.n, split(cfg.master_seed, g.index as u64, TEMPLATE_STREAM)))
        .collect()
}

fn finish(
    cfg: &ExperimentConfig,
    kind: ExperimentKind,
    rows: Vec<Row>,
    tables: Vec<GroupTable>,
) -> ExperimentReport {
    let columns = columns(cfg, kind);
    let summary = summarize(cfg, kind, &columns, &rows, &tables);
    ExperimentReport {
        kind,
        config: cfg.clone(),
        columns,
        rows,
        tables,
        summary,
    }
}

fn prepare(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<Vec<GroupPlan>> {
    cfg.validate(kind)?;
    Ok(plan_groups(cfg, kind).0)
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Profile fits per replication: `T`, `2T`, `‖ξ̆‖²`, `|2T − ‖ξ̆‖²|` and the
/// Fisher residual.
pub fn run_wilks(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let kind = ExperimentKind::Wilks;
    let plans = prepare(cfg, kind)?;
    let tpl = templates(cfg, &plans)?;
    let rows = run_rows(cfg, &plans, 5, |gi, seed| {
        let m = tpl[gi].resample(seed);
        let fit = profile_fit(&*m, &cfg.optimizer)?;
        let xi2 = fit.xi_breve.norm_squared();
        let two_t = 2.0 * fit.wilks_t;
        Ok((
            fit.converged(),
            vec![fit.wilks_t, two_t, xi2, (two_t - xi2).abs(), fit.fisher_residual],
        ))
    })?;
    Ok(finish(cfg, kind, rows, Vec::new()))
}

/// Fisher residual `‖D̆₀(θ̃ − θ*) − ξ̆‖` and its square per replication.
pub fn run_fisher(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let kind = ExperimentKind::Fisher;
    let plans = prepare(cfg, kind)?;
    let tpl = templates(cfg, &plans)?;
    let rows = run_rows(cfg, &plans, 3, |gi, seed| {
        let m = tpl[gi].resample(seed);
        let fit = profile_fit(&*m, &cfg.optimizer)?;
        let r = fit.fisher_residual;
        Ok((fit.converged(), vec![r, r * r, fit.wilks_t]))
    })?;
    Ok(finish(cfg, kind, rows, Vec::new()))
}

/// Whether `θ*` lies in the likelihood set with `z = ½χ²_p(1−α)`.
pub fn run_coverage(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let kind = ExperimentKind::Coverage;
    let plans = prepare(cfg, kind)?;
    let tpl = templates(cfg, &plans)?;
    let z = 0.5 * chi2_quantile(cfg.model.p as f64, 1.0 - cfg.alpha);
    let rows = run_rows(cfg, &plans, 1, |gi, seed| {
        let m = tpl[gi].resample(seed);
        let set = ConfidenceSet::new(&*m, z, &cfg.optimizer)?;
        let (inside, converged) = set.contains(&*m, &m.truth().theta(), &cfg.optimizer)?;
        Ok((converged, vec![flag(inside)]))
    })?;
    Ok(finish(cfg, kind, rows, Vec::new()))
}

/// `ξ̆` at the truth, no optimization.
pub fn run_normality(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let kind = ExperimentKind::Normality;
    let plans = prepare(cfg, kind)?;
    let tpl = templates(cfg, &plans)?;
    let rows = run_rows(cfg, &plans, cfg.model.p + 1, |gi, seed| {
        let m = tpl[gi].resample(seed);
        let es = efficient_score(m.info_pair(), &m.grad(m.truth().values()))?;
        let mut v: Vec<f64> = es.xi.iter().copied().collect();
        v.push(es.xi.norm_squared());
        Ok((true, v))
    })?;
    Ok(finish(cfg, kind, rows, Vec::new()))
}

/// `dev = √n|θ̃₁ − X₁|` per replication of each (regime, n) cell.
pub fn run_critdim(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let kind = ExperimentKind::Critdim;
    let plans = prepare(cfg, kind)?;
    let rows = run_rows(cfg, &plans, 4, |gi, seed| {
        let g = &plans[gi];
        let mc = CritDimConfig {
            n: g.n,
            p_n: g.dim,
            seed,
            bump: cfg.critdim.bump,
            bump_margin: cfg.critdim.bump_margin,
        };
        let beta = mc.beta();
        let m = make_critdim(mc)?;
        let r = full_mle(&m, &cfg.optimizer)?;
        let nf = g.n as f64;
        let dev = nf.sqrt() * (r.params.values()[0] - m.x()[0]).abs();
        let thr = beta.sqrt() / 6.0 - 1.0 / nf.sqrt();
        Ok((r.converged, vec![dev, beta, thr, flag(dev >= thr)]))
    })?;
    Ok(finish(cfg, kind, rows, Vec::new()))
}

/// Sorted union of the configured radii and `r₀`.
fn scan_radii(grid: &[f64], r0: f64) -> Vec<f64> {
    let mut r: Vec<f64> = grid.to_vec();
    if !r.contains(&r0) {
        r.push(r0);
    }
    r.sort_by(f64::total_cmp);
    r
}

/// Smoothness tables per group, then per replication the spread, the
/// concentration event at `r₀` and the Wilks certificate.
pub fn run_condition_scan(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let kind = ExperimentKind::Scan;
    let plans = prepare(cfg, kind)?;
    let tpl = templates(cfg, &plans)?;
    let sc = &cfg.scan;
    let mut tables = Vec::new();
    let mut params = Vec::new();
    let mut smooth: Vec<Option<SmoothnessTable>> = Vec::new();
    let pl = pool(cfg)?;
    for (g, m) in plans.iter().zip(&tpl) {
        let r0 = scan_r0(cfg, g.x, g.dim);
        let radii = scan_radii(&sc.radii, r0);
        let seed = split(cfg.master_seed, g.index as u64, TABLE_STREAM);
        let (delta, omega) = pl.install(|| -> Result<_> {
            Ok((
                empirical_delta(&**m, &radii, sc.n_dirs, sc.n_resample, seed)?,
                empirical_omega(&**m, &radii, sc.n_dirs, sc.n_resample, seed)?,
            ))
        })?;
        // A table is only admissible while ω̂ ≤ ½; otherwise the spread is
        // left undefined for the group and the summary says why.
        smooth.push(SmoothnessTable::new(radii.clone(), delta.clone(), omega.clone()).ok());
        params.push(BracketParams {
            delta: 0.0,
            rho: 0.0,
            r0,
            nu0: sc.nu0,
            a: sc.a,
            g: sc.g,
            b: sc.b,
            x: g.x,
        });
        tables.push(GroupTable {
            group: g.index,
            radii,
            delta,
            omega,
        });
    }
    let rows = run_rows(cfg, &plans, 9, |gi, seed| {
        let m = tpl[gi].resample(seed);
        let info = m.info_pair();
        let truth = m.truth().into_values();
        let grad = m.grad(&truth);
        let fit = profile_fit(&*m, &cfg.optimizer)?;
        let bp = &params[gi];
        let sr = smooth[gi].as_ref().and_then(|t| spread(info, bp, t, &grad).ok());
        let t = &tables[gi];
        let i0 = t.radii.iter().position(|&r| r == bp.r0).expect("r0 merged into the grid");
        let (d, rho) = match sr {
            Some(s) => (s.delta_used, s.rho_used),
            None => (t.delta[i0], 3.0 * bp.nu0 * t.omega[i0]),
        };
        let br = bracket_matrices(info, d, rho);
        let ev = concentration_event(info, &br, bp.r0, &truth, &fit, &grad)?;
        let xi2 = fit.xi_breve.norm_squared();
        let (sp, tau, cert) = match sr {
            Some(s) => (s.spread, s.tau, flag(wilks_certificate(&fit, s.spread))),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        Ok((
            fit.converged(),
            vec![
                (2.0 * fit.wilks_t - xi2).abs(),
                sp,
                tau,
                cert,
                flag(ev.full),
                flag(ev.constrained),
                flag(ev.score),
                flag(ev.score_eta),
                flag(ev.all),
            ],
        ))
    })?;
    Ok(finish(cfg, kind, rows, tables))
}

pub fn run(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    match kind {
        ExperimentKind::Wilks => run_wilks(cfg),
        ExperimentKind::Fisher => run_fisher(cfg),
        ExperimentKind::Coverage => run_coverage(cfg),
        ExperimentKind::Normality => run_normality(cfg),
        ExperimentKind::Critdim => run_critdim(cfg),
        ExperimentKind::Scan => run_condition_scan(cfg),
    }
}
