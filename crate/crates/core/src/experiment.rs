//! Monte Carlo experiments: simulate, contaminate, run competing filters on the
//! same observations, and report empirical MSE with standard errors.
//!
//! Replication `k` draws its trajectory from `derive_seed(seed, k, SIMULATE)` and
//! its contamination from `derive_seed(seed, k, CONTAMINATE_HITS)`, so results
//! do not depend on the number of threads. Replications are processed in fixed
//! chunks and the chunk summaries are merged in index order, which makes the
//! report bit-reproducible.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    eso_domination_probe, linearity_test, normality_probe, DominationResult, LinTestResult,
    NormalityResult,
};
use crate::error::{Error, Result};
use crate::expect::Estimate;
use crate::filter::{FilterPlan, FilterSpec};
use crate::rls::{serde_heights, ClipCalibration};
use crate::rng::{derive_seed, purpose};
use crate::ssm::{contaminate, simulate_ideal, ContaminationSpec, ModelSpec};

/// Replications per parallel work unit. Part of the reproducibility contract:
/// changing it changes the floating-point summation order.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// JSON report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    /// Per-time MSE table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse_csv: Option<PathBuf>,
}

/// Diagnostics of the filter errors `x_t - x_hat_{t|t}` across replications at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    /// Defaults to the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Radius of the domination probe (scalar states only); skipped when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domination_r: Option<f64>,
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub horizon: usize,
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contamination: Option<ContaminationSpec>,
    pub filters: Vec<FilterSpec>,
    pub seed: u64,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsSpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| e.within("model"))?;
        if self.horizon < 1 {
            return Err(Error::validation("horizon", "must be at least 1"));
        }
        self.model
            .check_horizon(self.horizon)
            .map_err(|e| e.within("model"))?;
        if self.replications < 1 {
            return Err(Error::validation("replications", "must be at least 1"));
        }
        if self.filters.is_empty() {
            return Err(Error::validation(
                "filters",
                "at least one filter is required",
            ));
        }
        for (i, f) in self.filters.iter().enumerate() {
            f.validate()
                .map_err(|e| e.within(&format!("filters[{i}]")))?;
        }
        if let Some(c) = &self.contamination {
            c.validate(&self.model)
                .map_err(|e| e.within("contamination"))?;
        }
        if let Some(d) = &self.diagnostics {
            let t = d.time.unwrap_or(self.horizon);
            if t < 1 || t > self.horizon {
                return Err(Error::validation(
                    "diagnostics.time",
                    format!("must lie in 1..={}", self.horizon),
                ));
            }
            if !(d.alpha > 0.0 && d.alpha < 1.0) {
                return Err(Error::validation("diagnostics.alpha", "must lie in (0, 1)"));
            }
            if let Some(r) = d.domination_r {
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::validation(
                        "diagnostics.domination_r",
                        "must lie in [0, 1]",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDiagnostics {
    pub time: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linearity: Option<LinTestResult>,
    /// KS probe on the first state component.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normality: Option<NormalityResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domination: Option<DominationResult>,
    /// Diagnostics that could not be computed, with the reason.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub label: String,
    pub spec: FilterSpec,
    /// Set when the filter could not be planned for this model; all numbers are then empty.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Empirical `E|x_t - x_hat_{t|t}|^2` for `t = 1..=T`.
    pub mse: Vec<f64>,
    pub mse_se: Vec<f64>,
    /// Mean over replications of the time-averaged squared error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<Estimate>,
    /// Paired aggregate difference to the first filter (this minus first).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paired_difference: Option<Estimate>,
    #[serde(with = "serde_heights")]
    pub b_schedule: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_calibration: Option<ClipCalibration>,
    /// Trace of the covariance the filter propagates, per time.
    pub trace_sigma_filt: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<FilterDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub crate_version: String,
    pub rng: String,
    pub chunk_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub metadata: Metadata,
    /// Mean fraction of contaminated time steps, with its standard error.
    pub hit_rate: Estimate,
    pub filters: Vec<FilterReport>,
}

/// Mergeable mean/variance accumulator (Chan et al. pairwise update).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }

    fn estimate(&self) -> Estimate {
        let std_error = if self.n < 2.0 {
            f64::INFINITY
        } else {
            (self.m2 / (self.n - 1.0) / self.n).sqrt()
        };
        Estimate {
            value: self.mean,
            std_error,
        }
    }
}

/// Summary of a block of replications.
struct Block {
    per_time: Vec<Vec<Moments>>,
    aggregate: Vec<Moments>,
    paired: Vec<Moments>,
    hits: Moments,
    /// Filter errors at the diagnostics time, per filter, in replication order.
    errors: Vec<Vec<DVector<f64>>>,
}

impl Block {
    fn new(filters: usize, horizon: usize) -> Self {
        Block {
            per_time: vec![vec![Moments::default(); horizon]; filters],
            aggregate: vec![Moments::default(); filters],
            paired: vec![Moments::default(); filters],
            hits: Moments::default(),
            errors: vec![Vec::new(); filters],
        }
    }

    fn merge(&mut self, o: Block) {
        for (a, b) in self.per_time.iter_mut().zip(&o.per_time) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
        for (x, y) in self.aggregate.iter_mut().zip(&o.aggregate) {
            x.merge(y);
        }
        for (x, y) in self.paired.iter_mut().zip(&o.paired) {
            x.merge(y);
        }
        self.hits.merge(&o.hits);
        for (a, b) in self.errors.iter_mut().zip(o.errors) {
            a.extend(b);
        }
    }
}

fn replicate(
    config: &ExperimentConfig,
    plans: &[&FilterPlan],
    diag_time: Option<usize>,
    rep: usize,
    block: &mut Block,
) -> Result<()> {
    let (model, horizon) = (&config.model, config.horizon);
    let ideal = simulate_ideal(
        model,
        horizon,
        derive_seed(config.seed, rep as u64, purpose::SIMULATE),
    )?;
    let traj = match &config.contamination {
        Some(spec) => contaminate(
            model,
            &ideal,
            spec,
            derive_seed(config.seed, rep as u64, purpose::CONTAMINATE_HITS),
        )?,
        None => ideal,
    };
    block.hits.push(traj.hit_rate());
    let mut first_avg = 0.0;
    for (i, plan) in plans.iter().enumerate() {
        let means = plan.run_means(model, &traj.y)?;
        let mut total = 0.0;
        for (k, xhat) in means.iter().enumerate() {
            let err = &traj.x[k + 1] - xhat;
            let sq = err.norm_squared();
            block.per_time[i][k].push(sq);
            total += sq;
            if diag_time == Some(k + 1) {
                block.errors[i].push(err);
            }
        }
        let avg = total / horizon as f64;
        block.aggregate[i].push(avg);
        if i == 0 {
            first_avg = avg;
        }
        block.paired[i].push(avg - first_avg);
    }
    Ok(())
}

fn label_filters(specs: &[FilterSpec]) -> Vec<String> {
    let mut labels: Vec<String> = Vec::with_capacity(specs.len());
    for spec in specs {
        let base = spec.label();
        let seen = labels
            .iter()
            .filter(|l| l.split('#').next() == Some(base.as_str()))
            .count();
        labels.push(if seen == 0 {
            base
        } else {
            format!("{base}#{}", seen + 1)
        });
    }
    labels
}

fn run_diagnostics(
    spec: &DiagnosticsSpec,
    time: usize,
    errors: &[DVector<f64>],
    plan: &FilterPlan,
) -> FilterDiagnostics {
    let mut failures = Vec::new();
    let p = errors.first().map_or(0, |e| e.len());
    let sample = DMatrix::from_fn(errors.len(), p, |i, j| errors[i][j]);
    let linearity = linearity_test(&sample, spec.alpha)
        .map_err(|e| failures.push(format!("linearity: {e}")))
        .ok();
    let first: Vec<f64> = errors.iter().map(|e| e[0]).collect();
    let normality = normality_probe(&first, None)
        .map_err(|e| failures.push(format!("normality: {e}")))
        .ok();
    let domination = spec.domination_r.and_then(|r| {
        let sigma = &plan.steps[time - 1].sigma_filt;
        let sd = sigma[(0, 0)].max(0.0).sqrt();
        let grid: Vec<f64> = (-120..=120).map(|k| k as f64 * sd / 20.0).collect();
        eso_domination_probe(&sample, sigma, r, &grid)
            .map_err(|e| failures.push(format!("domination: {e}")))
            .ok()
    });
    FilterDiagnostics {
        time,
        linearity,
        normality,
        domination,
        failures,
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let horizon = config.horizon;
    let labels = label_filters(&config.filters);
    let plans: Vec<Result<FilterPlan>> = config
        .filters
        .iter()
        .map(|spec| FilterPlan::new(*spec, &config.model, horizon))
        .collect();
    let ok: Vec<&FilterPlan> = plans.iter().filter_map(|p| p.as_ref().ok()).collect();
    let diag_time = config
        .diagnostics
        .as_ref()
        .map(|d| d.time.unwrap_or(horizon));

    let chunks: Vec<(usize, usize)> = (0..config.replications)
        .step_by(CHUNK)
        .map(|start| (start, (start + CHUNK).min(config.replications)))
        .collect();
    let blocks: Vec<Result<Block>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut block = Block::new(ok.len(), horizon);
            for rep in start..end {
                replicate(config, &ok, diag_time, rep, &mut block)?;
            }
            Ok(block)
        })
        .collect();
    let mut total = Block::new(ok.len(), horizon);
    for block in blocks {
        total.merge(block?);
    }

    let mut filters = Vec::with_capacity(plans.len());
    let mut next_ok = 0;
    for ((spec, plan), label) in config.filters.iter().zip(&plans).zip(labels) {
        let report = match plan {
            Err(e) => FilterReport {
                label,
                spec: *spec,
                error: Some(e.to_string()),
                mse: Vec::new(),
                mse_se: Vec::new(),
                aggregate: None,
                paired_difference: None,
                b_schedule: Vec::new(),
                final_calibration: None,
                trace_sigma_filt: Vec::new(),
                diagnostics: None,
            },
            Ok(plan) => {
                let i = next_ok;
                next_ok += 1;
                let est: Vec<Estimate> = total.per_time[i].iter().map(Moments::estimate).collect();
                FilterReport {
                    label,
                    spec: *spec,
                    error: None,
                    mse: est.iter().map(|e| e.value).collect(),
                    mse_se: est.iter().map(|e| e.std_error).collect(),
                    aggregate: Some(total.aggregate[i].estimate()),
                    paired_difference: (i > 0).then(|| total.paired[i].estimate()),
                    b_schedule: plan.b_schedule(),
                    final_calibration: plan.steps.last().and_then(|s| s.calibration.clone()),
                    trace_sigma_filt: plan
                        .steps
                        .iter()
                        .map(|s| crate::linalg::trace(&s.sigma_filt))
                        .collect(),
                    diagnostics: config.diagnostics.as_ref().map(|d| {
                        run_diagnostics(d, diag_time.unwrap_or(horizon), &total.errors[i], plan)
                    }),
                }
            }
        };
        filters.push(report);
    }

    Ok(ExperimentReport {
        config: config.clone(),
        metadata: Metadata {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            rng: "ChaCha20; replication k uses derive_seed(seed, k, purpose)".to_string(),
            chunk_size: CHUNK,
        },
        hit_rate: total.hits.estimate(),
        filters,
    })
}

impl ExperimentReport {
    /// CSV `t,<label>,<label>_se,...` over the filters that ran.
    pub fn mse_csv(&self) -> String {
        let ran: Vec<&FilterReport> = self.filters.iter().filter(|f| f.error.is_none()).collect();
        let mut out = String::from("t");
        for f in &ran {
            out.push_str(&format!(",{},{}_se", f.label, f.label));
        }
        out.push('\n');
        for t in 0..self.config.horizon {
            out.push_str(&(t + 1).to_string());
            for f in &ran {
                out.push_str(&format!(",{},{}", f.mse[t], f.mse_se[t]));
            }
            out.push('\n');
        }
        out
    }

    pub fn filter(&self, label: &str) -> Option<&FilterReport> {
        self.filters.iter().find(|f| f.label == label)
    }
}
