//! Pure summaries of persisted rows. Everything here is a function of
//! `(config, kind, columns, rows, tables)` so a summary recomputed from
//! `rows.csv` matches the original exactly.

use std::collections::BTreeMap;

use serde::Serialize;

use super::config::{plan_groups, ExperimentConfig, ExperimentKind, GroupPlan, ModelKind, Regime};
use super::report::{GroupTable, Row};
use crate::deviation::r0_rule;
use crate::stats::{binomial_se, chi2_cdf, chi2_quantile, ks_critical_05, ks_statistic, median, normal_cdf, quantile};

/// Added to `1.36/√m` when the law of the statistic is exact.
pub const KS_MARGIN_EXACT: f64 = 0.005;
/// Added to `1.36/√m` when the law is only asymptotic.
pub const KS_MARGIN_ASYMPTOTIC: f64 = 0.02;
/// Absolute tolerance for identities that hold exactly on quadratic models.
pub const EXACT_TOL: f64 = 1e-8;
/// Largest admissible share of excluded replications.
pub const EXCLUSION_LIMIT: f64 = 0.01;
pub const COVERAGE_SLACK: f64 = 0.02;
/// Rounding allowance for `δ̂ = ω̂ = 0` on exactly quadratic models.
pub const SMOOTHNESS_ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub group: usize,
    pub label: String,
    pub n: usize,
    pub dim: usize,
    pub included: usize,
    pub excluded: usize,
    pub stats: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub total_rows: usize,
    pub excluded: usize,
    pub groups: Vec<GroupSummary>,
    pub verdicts: Vec<Verdict>,
    pub notes: Vec<String>,
    pub pass: bool,
}

impl Summary {
    pub fn group(&self, label: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.label == label)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

/// Only finite statistics are stored, keeping summaries comparable with `==`.
fn put(stats: &mut BTreeMap<String, f64>, key: impl Into<String>, v: f64) {
    if v.is_finite() {
        stats.insert(key.into(), v);
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    columns: &'a [String],
    verdicts: Vec<Verdict>,
    notes: Vec<String>,
}

impl Ctx<'_> {
    fn col(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    fn values(&self, rows: &[&Row], name: &str) -> Vec<f64> {
        match self.col(name) {
            Some(i) => rows.iter().map(|r| r.values[i]).collect(),
            None => Vec::new(),
        }
    }

    fn verdict(&mut self, name: String, pass: bool, detail: String) {
        self.verdicts.push(Verdict { name, pass, detail });
    }

    fn exact(&self) -> bool {
        self.cfg.model.kind != ModelKind::Logistic
    }
}

fn finite(v: &[f64]) -> Vec<f64> {
    v.iter().copied().filter(|x| x.is_finite()).collect()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn ks_threshold(m: usize, exact: bool) -> f64 {
    ks_critical_05(m) + if exact { KS_MARGIN_EXACT } else { KS_MARGIN_ASYMPTOTIC }
}

pub fn summarize(
    cfg: &ExperimentConfig,
    kind: ExperimentKind,
    columns: &[String],
    rows: &[Row],
    tables: &[GroupTable],
) -> Summary {
    let (plans, notes) = plan_groups(cfg, kind);
    let mut ctx = Ctx {
        cfg,
        columns,
        verdicts: Vec::new(),
        notes,
    };
    let mut groups = Vec::new();
    let mut per_group: Vec<(GroupPlan, Vec<&Row>)> = Vec::new();
    for plan in plans {
        let all: Vec<&Row> = rows.iter().filter(|r| r.group == plan.index).collect();
        let inc: Vec<&Row> = all.iter().copied().filter(|r| r.converged).collect();
        let mut stats = BTreeMap::new();
        if !inc.is_empty() {
            match kind {
                ExperimentKind::Wilks => wilks_stats(&mut ctx, &plan, &inc, &mut stats),
                ExperimentKind::Fisher => fisher_stats(&ctx, &plan, &inc, &mut stats),
                ExperimentKind::Coverage => coverage_stats(&mut ctx, &plan, &inc, &mut stats),
                ExperimentKind::Normality => normality_stats(&mut ctx, &plan, &inc, &mut stats),
                ExperimentKind::Critdim => critdim_stats(&ctx, &plan, &inc, &mut stats),
                ExperimentKind::Scan => scan_stats(&mut ctx, &plan, &inc, tables, &mut stats),
            }
        } else {
            ctx.verdict(format!("data[{}]", plan.label), false, "no converged replications".into());
        }
        groups.push(GroupSummary {
            group: plan.index,
            label: plan.label.clone(),
            n: plan.n,
            dim: plan.dim,
            included: inc.len(),
            excluded: all.len() - inc.len(),
            stats,
        });
        per_group.push((plan, inc));
    }
    match kind {
        ExperimentKind::Fisher => fisher_trend(&mut ctx, &groups),
        ExperimentKind::Critdim => critdim_verdicts(&mut ctx, &per_group, &groups),
        _ => {}
    }
    let excluded = rows.iter().filter(|r| !r.converged).count();
    let share = if rows.is_empty() { 0.0 } else { excluded as f64 / rows.len() as f64 };
    ctx.verdict(
        "exclusions".into(),
        share <= EXCLUSION_LIMIT,
        format!("{excluded} of {} replications excluded", rows.len()),
    );
    let pass = ctx.verdicts.iter().all(|v| v.pass);
    Summary {
        total_rows: rows.len(),
        excluded,
        groups,
        verdicts: ctx.verdicts,
        notes: ctx.notes,
        pass,
    }
}

fn wilks_stats(ctx: &mut Ctx, plan: &GroupPlan, inc: &[&Row], stats: &mut BTreeMap<String, f64>) {
    let p = plan.p as f64;
    let two_t = ctx.values(inc, "two_t");
    let ks = ks_statistic(&two_t, |q| chi2_cdf(p, q));
    let thr = ks_threshold(two_t.len(), ctx.exact());
    put(stats, "ks_2t", ks);
    put(stats, "ks_threshold", thr);
    put(stats, "mean_2t", two_t.iter().sum::<f64>() / two_t.len() as f64);
    for (name, q) in [("q50", 0.5), ("q90", 0.9), ("q95", 0.95), ("q99", 0.99)] {
        put(stats, format!("{name}_2t"), quantile(&two_t, q));
        put(stats, format!("{name}_chi2"), chi2_quantile(p, q));
    }
    let gap = max_of(&ctx.values(inc, "gap"));
    let fr = max_of(&ctx.values(inc, "fisher_residual"));
    put(stats, "max_gap", gap);
    put(stats, "max_fisher_residual", fr);
    ctx.verdict(
        format!("ks_2t[{}]", plan.label),
        ks <= thr,
        format!("KS(2T, chi2_{}) = {ks} against {thr}", plan.p),
    );
    if ctx.exact() {
        ctx.verdict(
            format!("quadratic_exactness[{}]", plan.label),
            gap <= EXACT_TOL && fr <= EXACT_TOL,
            format!("max |2T - |xi|^2| = {gap}, max fisher residual = {fr}"),
        );
    }
}

/// `β_n = (p* + ln n)^{3/2}/√n`.
pub fn fisher_beta(p_star: usize, n: usize) -> f64 {
    (p_star as f64 + (n as f64).ln()).powf(1.5) / (n as f64).sqrt()
}

fn fisher_stats(ctx: &Ctx, plan: &GroupPlan, inc: &[&Row], stats: &mut BTreeMap<String, f64>) {
    let sq = ctx.values(inc, "residual_sq");
    let med = median(&sq);
    let beta = fisher_beta(plan.dim, plan.n);
    put(stats, "median_residual_sq", med);
    put(stats, "beta_n", beta);
    put(stats, "ratio", med / beta);
    put(stats, "max_residual", max_of(&ctx.values(inc, "fisher_residual")));
}

fn fisher_trend(ctx: &mut Ctx, groups: &[GroupSummary]) {
    let ratios: Vec<Option<f64>> = groups.iter().map(|g| g.stats.get("ratio").copied()).collect();
    if ctx.exact() {
        for g in groups {
            let m = g.stats.get("max_residual").copied().unwrap_or(f64::NAN);
            ctx.verdict(format!("residual_zero[{}]", g.label), m <= EXACT_TOL, format!("max residual {m}"));
        }
    }
    if ratios.len() < 2 {
        ctx.notes.push("ratio trend needs at least two sample sizes".into());
        return;
    }
    let mut ok = true;
    let mut detail = Vec::new();
    for w in ratios.windows(2) {
        match (w[0], w[1]) {
            (Some(a), Some(b)) => {
                ok &= b <= 2.0 * a;
                detail.push(format!("{a} -> {b}"));
            }
            _ => ok = false,
        }
    }
    ctx.verdict("ratio_trend".into(), ok, detail.join(", "));
}

fn coverage_stats(ctx: &mut Ctx, plan: &GroupPlan, inc: &[&Row], stats: &mut BTreeMap<String, f64>) {
    let cov = ctx.values(inc, "covered");
    let m = cov.len();
    let f = cov.iter().sum::<f64>() / m as f64;
    let se = binomial_se(f, m);
    let nominal = 1.0 - ctx.cfg.alpha;
    put(stats, "coverage", f);
    put(stats, "se", se);
    put(stats, "nominal", nominal);
    put(stats, "z", 0.5 * chi2_quantile(plan.p as f64, nominal));
    let budget = COVERAGE_SLACK + 3.0 * se;
    ctx.verdict(
        format!("coverage[{}]", plan.label),
        (f - nominal).abs() <= budget,
        format!("coverage {f} vs nominal {nominal}, budget {budget}"),
    );
}

fn normality_stats(ctx: &mut Ctx, plan: &GroupPlan, inc: &[&Row], stats: &mut BTreeMap<String, f64>) {
    let thr = ks_threshold(inc.len(), ctx.exact());
    put(stats, "ks_threshold", thr);
    let mut worst: f64 = 0.0;
    for j in 1..=plan.p {
        let xs = ctx.values(inc, &format!("xi_{j}"));
        let ks = ks_statistic(&xs, normal_cdf);
        worst = worst.max(ks);
        put(stats, format!("ks_xi_{j}"), ks);
    }
    let sq = ctx.values(inc, "xi_sq");
    let ks_sq = ks_statistic(&sq, |q| chi2_cdf(plan.p as f64, q));
    put(stats, "ks_xi_sq", ks_sq);
    ctx.verdict(
        format!("normality[{}]", plan.label),
        worst <= thr && ks_sq <= thr,
        format!("max component KS {worst}, KS(|xi|^2, chi2_{}) {ks_sq}, threshold {thr}", plan.p),
    );
}

fn critdim_stats(ctx: &Ctx, plan: &GroupPlan, inc: &[&Row], stats: &mut BTreeMap<String, f64>) {
    let dev = ctx.values(inc, "dev");
    let hit = ctx.values(inc, "hit");
    put(stats, "median_dev", median(&dev));
    put(stats, "max_dev", max_of(&dev));
    put(stats, "freq_hit", hit.iter().sum::<f64>() / hit.len() as f64);
    put(stats, "p_n", plan.dim as f64);
    let beta = ((plan.dim as f64).powi(3) / plan.n as f64).sqrt();
    put(stats, "beta_n", beta);
    put(stats, "threshold", beta.sqrt() / 6.0 - 1.0 / (plan.n as f64).sqrt());
}

fn critdim_verdicts(ctx: &mut Ctx, per_group: &[(GroupPlan, Vec<&Row>)], groups: &[GroupSummary]) {
    if !ctx.cfg.critdim.bump {
        let m = groups
            .iter()
            .filter_map(|g| g.stats.get("max_dev").copied())
            .fold(0.0_f64, f64::max);
        ctx.verdict("control_zero".into(), m <= 1e-12, format!("max dev {m} with the bump disabled"));
        return;
    }
    let stat = |regime: Regime, key: &str| -> Vec<f64> {
        per_group
            .iter()
            .zip(groups)
            .filter(|((p, _), _)| p.regime == Some(regime))
            .map(|(_, g)| g.stats.get(key).copied().unwrap_or(f64::NAN))
            .collect()
    };
    for &regime in &ctx.cfg.critdim.regimes.clone() {
        match regime {
            Regime::Zero => {
                let med = stat(regime, "median_dev");
                let last = med.last().copied().unwrap_or(f64::NAN);
                ctx.verdict(
                    "zero_median".into(),
                    last <= 0.1,
                    format!("median dev at the largest n = {last} (limit 0.1)"),
                );
            }
            Regime::Const => {
                let fr = stat(regime, "freq_hit");
                let lo = fr.iter().copied().fold(f64::INFINITY, f64::min);
                ctx.verdict(
                    "const_frequency".into(),
                    !fr.is_empty() && lo >= 0.05,
                    format!("smallest frequency of dev above threshold = {lo} (limit 0.05)"),
                );
            }
            Regime::Infinite => {
                let med = stat(regime, "median_dev");
                if med.len() < 3 {
                    ctx.notes.push("infinite regime trend needs three schedule points".into());
                    continue;
                }
                let tail = &med[med.len() - 3..];
                let ok = tail[0] < tail[1] && tail[1] < tail[2];
                ctx.verdict(
                    "infinite_trend".into(),
                    ok,
                    format!("last three medians {} < {} < {}", tail[0], tail[1], tail[2]),
                );
            }
        }
    }
}

/// `r₀` of the condition scan at confidence parameter `x`.
pub fn scan_r0(cfg: &ExperimentConfig, x: f64, p_star: usize) -> f64 {
    r0_rule(cfg.scan.nu0, cfg.scan.b, x, p_star)
}

fn scan_stats(
    ctx: &mut Ctx,
    plan: &GroupPlan,
    inc: &[&Row],
    tables: &[GroupTable],
    stats: &mut BTreeMap<String, f64>,
) {
    let all = ctx.values(inc, "conc_all");
    let cert = ctx.values(inc, "certificate");
    let m = all.len() as f64;
    let freq = all.iter().sum::<f64>() / m;
    let bound = 1.0 - 3.0 * (-plan.x).exp();
    put(stats, "conc_freq", freq);
    put(stats, "conc_bound", bound);
    for c in ["conc_full", "conc_constrained", "conc_score", "conc_score_eta"] {
        let v = ctx.values(inc, c);
        put(stats, format!("{c}_freq"), v.iter().sum::<f64>() / m);
    }
    let spread = finite(&ctx.values(inc, "spread"));
    if !spread.is_empty() {
        put(stats, "mean_spread", spread.iter().sum::<f64>() / spread.len() as f64);
    }
    let tau = finite(&ctx.values(inc, "tau"));
    if let Some(&t) = tau.first() {
        put(stats, "tau_hat", t);
    }
    let on_event: Vec<f64> = all.iter().zip(&cert).filter(|(a, _)| **a == 1.0).map(|(_, c)| *c).collect();
    let cert_ok = on_event.iter().all(|c| *c == 1.0);
    if !on_event.is_empty() {
        put(stats, "certificate_freq_on_event", on_event.iter().sum::<f64>() / on_event.len() as f64);
    }
    let r0 = scan_r0(ctx.cfg, plan.x, plan.dim);
    put(stats, "r0", r0);
    ctx.verdict(
        format!("concentration[{}]", plan.label),
        freq >= bound,
        format!("event frequency {freq} against 1 - 3exp(-x) = {bound}"),
    );
    let Some(t) = tables.iter().find(|t| t.group == plan.index) else {
        ctx.verdict(format!("smoothness[{}]", plan.label), false, "missing smoothness table".into());
        return;
    };
    if let Some(i) = t.radii.iter().position(|&r| r == r0) {
        put(stats, "delta_r0", t.delta[i]);
        put(stats, "omega_r0", t.omega[i]);
        if t.omega[i] > 0.5 {
            ctx.notes.push(format!(
                "{}: omega_hat(r0) = {} exceeds 1/2, spread not assembled",
                plan.label, t.omega[i]
            ));
        }
    }
    let scale = max_of(&t.delta).abs().max(f64::MIN_POSITIVE);
    let mono = t.delta.windows(2).all(|w| w[1] >= w[0] - 1e-12 * scale);
    ctx.verdict(
        format!("delta_monotone[{}]", plan.label),
        mono,
        format!("delta_hat over r = {:?}: {:?}", t.radii, t.delta),
    );
    if ctx.exact() {
        let dm = max_of(&t.delta);
        let om = max_of(&t.omega);
        let tm = tau.iter().copied().fold(0.0_f64, f64::max);
        ctx.verdict(
            format!("smoothness_zero[{}]", plan.label),
            dm <= SMOOTHNESS_ZERO_TOL && om <= SMOOTHNESS_ZERO_TOL && tm <= SMOOTHNESS_ZERO_TOL && cert_ok,
            format!("max delta_hat {dm}, max omega_hat {om}, max tau {tm}, certificates on event hold: {cert_ok}"),
        );
    }
}
