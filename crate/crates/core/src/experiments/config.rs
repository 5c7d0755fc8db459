//! Experiment configuration. Every study reads the same structure; the
//! per-study defaults differ only in model and schedule choices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::OptimizerSettings;
use crate::model::{premise_holds, DesignSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Wilks,
    Fisher,
    Coverage,
    Normality,
    Critdim,
    Scan,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Wilks,
        ExperimentKind::Fisher,
        ExperimentKind::Coverage,
        ExperimentKind::Normality,
        ExperimentKind::Critdim,
        ExperimentKind::Scan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Wilks => "wilks",
            ExperimentKind::Fisher => "fisher",
            ExperimentKind::Coverage => "coverage",
            ExperimentKind::Normality => "normality",
            ExperimentKind::Critdim => "critdim",
            ExperimentKind::Scan => "scan",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `X ~ N(υ*, I/n)`, `L = nXᵀυ − n‖υ‖²/2`.
    Gaussian,
    /// Quadratic with equicorrelated curvature `n((1−ρ)I + ρ11ᵀ)`.
    Quadratic,
    /// IID logistic regression.
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Standard,
    Equicorrelated,
}

/// Growth recipe for `p_n` in the critical-dimension study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// `p_n = ⌊n^{1/4}⌋`, so `β_n → 0`.
    Zero,
    /// `p_n = ⌊(β²n)^{1/3}⌋`, so `β_n ≈ β`.
    Const,
    /// `p_n = ⌊n^{0.45}⌋`, so `β_n → ∞`.
    Infinite,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Zero => "zero",
            Regime::Const => "const",
            Regime::Infinite => "infinite",
        }
    }

    pub fn p_n(self, n: usize, beta: f64) -> usize {
        // The small offset keeps exact powers such as 10000^{1/4} from
        // flooring one below.
        let n = n as f64;
        let v = match self {
            Regime::Zero => n.powf(0.25),
            Regime::Const => (beta * beta * n).cbrt(),
            Regime::Infinite => n.powf(0.45),
        };
        (v + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub design: DesignKind,
    /// Equicorrelation of the logistic design, or of the quadratic curvature.
    pub design_rho: f64,
    /// `‖υ*‖`; the truth alternates in sign with equal magnitudes.
    pub truth_scale: f64,
    pub p: usize,
    pub p_star: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub n: Vec<usize>,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CritdimSection {
    pub regimes: Vec<Regime>,
    /// Target `β` of the constant regime.
    pub beta: f64,
    pub bump: bool,
    pub bump_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    /// Radius grid for `δ̂(r)`, `ω̂(r)`; `r₀` is merged in.
    pub radii: Vec<f64>,
    pub n_dirs: usize,
    pub n_resample: usize,
    pub nu0: f64,
    pub b: f64,
    pub a: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub schedule: ScheduleSection,
    pub master_seed: u64,
    /// Confidence parameter; `None` means `ln n` per sample size.
    pub x: Option<f64>,
    pub alpha: f64,
    /// Worker threads, 0 for the runtime default. Never affects results.
    pub thread_hint: usize,
    pub optimizer: OptimizerSettings,
    pub critdim: CritdimSection,
    pub scan: ScanSection,
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut c = Self {
            model: ModelSection {
                kind: ModelKind::Gaussian,
                design: DesignKind::Standard,
                design_rho: 0.0,
                truth_scale: 0.5,
                p: 2,
                p_star: 10,
            },
            schedule: ScheduleSection {
                n: vec![1000],
                replications: 500,
            },
            master_seed: 1,
            x: None,
            alpha: 0.05,
            thread_hint: 0,
            optimizer: OptimizerSettings::default(),
            critdim: CritdimSection {
                regimes: vec![Regime::Zero, Regime::Const, Regime::Infinite],
                beta: 1.0,
                bump: true,
                bump_margin: 1.0,
            },
            scan: ScanSection {
                radii: vec![0.5, 1.0, 2.0, 4.0, 8.0],
                n_dirs: 20,
                n_resample: 50,
                nu0: 1.0,
                b: 1.0,
                a: 1.0,
                g: 100.0,
            },
        };
        match kind {
            ExperimentKind::Wilks | ExperimentKind::Normality => {}
            ExperimentKind::Coverage => c.schedule.replications = 1000,
            ExperimentKind::Fisher => {
                c.model.kind = ModelKind::Logistic;
                c.model.p_star = 8;
                c.schedule.n = vec![500, 2000, 8000];
                c.schedule.replications = 200;
            }
            ExperimentKind::Critdim => {
                c.schedule.n = vec![1000, 10_000, 30_000, 100_000];
                c.schedule.replications = 200;
            }
            ExperimentKind::Scan => {
                c.model.p_star = 5;
                c.schedule.replications = 100;
            }
        }
        c
    }

    pub fn x_for(&self, n: usize) -> f64 {
        self.x.unwrap_or_else(|| (n as f64).ln())
    }

    pub fn design_spec(&self) -> DesignSpec {
        match self.model.design {
            DesignKind::Standard => DesignSpec::StandardGaussian,
            DesignKind::Equicorrelated => DesignSpec::Equicorrelated(self.model.design_rho),
        }
    }

    pub fn validate(&self, kind: ExperimentKind) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let s = &self.schedule;
        if s.replications == 0 {
            return bad("schedule.replications must be at least 1".into());
        }
        if s.n.is_empty() {
            return bad("schedule.n must be nonempty".into());
        }
        if s.n[0] == 0 || s.n.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("schedule.n must be positive and strictly increasing, got {:?}", s.n));
        }
        if let Some(x) = self.x {
            if !(x > 0.0 && x.is_finite()) {
                return bad(format!("x = {x} must be positive"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        self.optimizer.validate()?;
        if kind == ExperimentKind::Critdim {
            let c = &self.critdim;
            if c.regimes.is_empty() {
                return bad("critdim.regimes must be nonempty".into());
            }
            if !(c.beta > 0.0 && c.beta.is_finite()) {
                return bad(format!("critdim.beta = {} must be positive", c.beta));
            }
            if !(c.bump_margin > 0.0 && c.bump_margin <= 1.0) {
                return bad(format!("critdim.bump_margin = {} outside (0, 1]", c.bump_margin));
            }
            return Ok(());
        }
        let m = &self.model;
        if m.p == 0 || m.p > m.p_star {
            return bad(format!("need 1 ≤ model.p ≤ model.p_star, got p={} p*={}", m.p, m.p_star));
        }
        if !m.truth_scale.is_finite() {
            return bad("model.truth_scale must be finite".into());
        }
        if !(0.0..1.0).contains(&m.design_rho) {
            return bad(format!("model.design_rho = {} outside [0, 1)", m.design_rho));
        }
        if m.kind == ModelKind::Logistic && s.n[0] < m.p_star {
            return bad(format!("logistic needs n ≥ p* = {}, got n = {}", m.p_star, s.n[0]));
        }
        if kind == ExperimentKind::Scan {
            let sc = &self.scan;
            if sc.radii.iter().any(|r| !(*r > 0.0)) || sc.radii.windows(2).any(|w| w[1] <= w[0]) {
                return bad(format!("scan.radii must be positive and increasing, got {:?}", sc.radii));
            }
            if sc.n_dirs == 0 || sc.n_resample == 0 {
                return bad("scan.n_dirs and scan.n_resample must be at least 1".into());
            }
            for (k, v) in [("scan.nu0", sc.nu0), ("scan.b", sc.b), ("scan.a", sc.a), ("scan.g", sc.g)] {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("{k} = {v} must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// One cell of the study: a sample size, and for the critical-dimension
/// study also a regime. `index` is the first seed coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPlan {
    pub index: usize,
    pub label: String,
    pub n: usize,
    /// `p*`, or `p_n` for the critical-dimension study.
    pub dim: usize,
    pub p: usize,
    pub x: f64,
    pub regime: Option<Regime>,
}

/// Groups that will run and notes on those skipped. Critical-dimension
/// groups are indexed `regime·|schedule| + n_index` whether or not they run,
/// so skipping never shifts another group's seeds.
pub fn plan_groups(cfg: &ExperimentConfig, kind: ExperimentKind) -> (Vec<GroupPlan>, Vec<String>) {
    let ns = &cfg.schedule.n;
    let mut notes = Vec::new();
    if kind != ExperimentKind::Critdim {
        let plans = ns
            .iter()
            .enumerate()
            .map(|(i, &n)| GroupPlan {
                index: i,
                label: format!("n={n}"),
                n,
                dim: cfg.model.p_star,
                p: cfg.model.p,
                x: cfg.x_for(n),
                regime: None,
            })
            .collect();
        return (plans, notes);
    }
    let mut plans = Vec::new();
    for (ri, &regime) in cfg.critdim.regimes.iter().enumerate() {
        for (ni, &n) in ns.iter().enumerate() {
            let p_n = regime.p_n(n, cfg.critdim.beta);
            let label = format!("{},n={n}", regime.name());
            if p_n < 2 || !premise_holds(n, p_n) {
                notes.push(format!("skipped {label}: p_n = {p_n} violates the model premise"));
                continue;
            }
            plans.push(GroupPlan {
                index: ri * ns.len() + ni,
                label,
                n,
                dim: p_n,
                p: 1,
                x: cfg.x_for(n),
                regime: Some(regime),
            });
        }
    }
    (plans, notes)
}
