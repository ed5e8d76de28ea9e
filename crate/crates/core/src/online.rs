//! The online learning loop and its reporting.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ImopError, Result};
use crate::linalg::dist_sq;
use crate::loss::{assign_weights, nearest, sampled_efficient_points, Histogram};
use crate::model::{MopInstance, Observation};
use crate::scalarize::{even_grid, WeightGrid};
use crate::update::{algorithm1_update_from, algorithm2_update_from};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Minimize over every weight of the grid.
    Full,
    /// Pick the nearest weight first, then solve once.
    Accelerated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    /// `u_k` spanning `[0, 1]`.
    Even,
    /// `u_k` spanning `[δ, 1 - δ]`.
    Interior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialTheta {
    /// Euclidean projection of the origin onto Θ.
    ProjectZero,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Number of rounds `T`.
    pub rounds: usize,
    /// Number of sampled weights `K`.
    pub k: usize,
    pub eta0: f64,
    pub seed: u64,
    pub grid: GridMode,
    pub initial: InitialTheta,
    /// Measure update wall time. Off by default so logs are reproducible
    /// byte for byte.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Accelerated,
            rounds: 1000,
            k: 41,
            eta0: 5.0,
            seed: 0,
            grid: GridMode::Even,
            initial: InitialTheta::ProjectZero,
            timing: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(ImopError::InvalidParameter("T must be at least 1".into()));
        }
        if self.k < 2 {
            return Err(ImopError::InvalidParameter(format!("K must be at least 2, got {}", self.k)));
        }
        if !(self.eta0 > 0.0) {
            return Err(ImopError::InvalidParameter(format!("eta0 must be positive, got {}", self.eta0)));
        }
        Ok(())
    }

    pub fn weight_grid<S: Scalar>(&self, p: usize) -> Result<WeightGrid<S>> {
        even_grid(p, self.k, self.grid == GridMode::Interior)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog<S> {
    pub t: usize,
    /// `l_K(y_t, θ_t)`, before the update.
    pub loss: S,
    pub k_used: usize,
    /// θ_{t+1}, after the update.
    pub theta: Vec<S>,
    /// Update solve time; zero unless timing is on.
    pub wall_ms: f64,
    /// `‖θ_{t+1} - θ_true‖` when the truth is known.
    pub err: Option<S>,
}

#[derive(Debug, Clone)]
pub struct RunOutput<S> {
    pub theta_initial: Vec<S>,
    pub logs: Vec<RoundLog<S>>,
    pub theta_final: Vec<S>,
    pub grid: WeightGrid<S>,
    /// Observations assigned to weights at θ_final.
    pub histogram: Histogram,
}

/// `η₀ / √t`.
pub fn learning_rate(t: usize, eta0: f64) -> f64 {
    eta0 / (t.max(1) as f64).sqrt()
}

/// Starting point of a run.
pub fn initial_theta<S: Scalar>(instance: &MopInstance<S>, policy: &InitialTheta) -> Result<Vec<S>> {
    let spec = instance.param();
    match policy {
        InitialTheta::ProjectZero => Ok(spec.project(&vec![S::zero(); spec.dim()])),
        InitialTheta::Given(v) => {
            let theta: Vec<S> = v.iter().map(|&x| S::lit(x)).collect();
            spec.check(&theta)?;
            Ok(theta)
        }
    }
}

/// Runs the online loop over `stream`. Errors carry the round index.
pub fn run_online<S: Scalar>(
    instance: &MopInstance<S>,
    stream: &[Observation<S>],
    config: &RunConfig,
    truth: Option<&[S]>,
) -> Result<RunOutput<S>> {
    config.validate()?;
    if stream.len() != config.rounds {
        return Err(ImopError::InvalidInput(format!("stream has {} observations, T = {}", stream.len(), config.rounds)));
    }
    if let Some(tr) = truth {
        if tr.len() != instance.param().dim() {
            return Err(ImopError::DimensionMismatch(format!("truth of length {} for a block of dimension {}", tr.len(), instance.param().dim())));
        }
    }
    let grid = config.weight_grid::<S>(instance.p())?;
    let theta_initial = initial_theta(instance, &config.initial)?;
    let mut theta = theta_initial.clone();
    let mut logs = Vec::with_capacity(stream.len());
    let mut hints: Option<Vec<Vec<usize>>> = None;

    for (i, obs) in stream.iter().enumerate() {
        let t = i + 1;
        let wrap = |e: ImopError| ImopError::Round { round: t, source: Box::new(e) };
        if obs.y.len() != instance.n() {
            return Err(wrap(ImopError::DimensionMismatch(format!("observation of length {} for n = {}", obs.y.len(), instance.n()))));
        }
        let eta = S::lit(learning_rate(t, config.eta0));
        let points = sampled_efficient_points(instance, &theta, &grid, hints.as_deref()).map_err(wrap)?;
        let loss = nearest(&points, &obs.y);

        let start = config.timing.then(Instant::now);
        let result = match config.algorithm {
            Algorithm::Full => algorithm1_update_from(instance, &theta, &obs.y, eta, &grid, &points),
            Algorithm::Accelerated => algorithm2_update_from(instance, &theta, &obs.y, eta, &grid, &points),
        }
        .map_err(wrap)?;
        let wall_ms = start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3);
        if result.stats.singular > 0 {
            log::debug!("round {t}: skipped {} singular active sets", result.stats.singular);
        }

        theta = result.theta_next;
        hints = Some(points.into_iter().map(|p| p.active).collect());
        logs.push(RoundLog {
            t,
            loss: loss.value,
            k_used: result.k_used,
            theta: theta.clone(),
            wall_ms,
            err: truth.map(|tr| dist_sq(&theta, tr).sqrt()),
        });
    }
    let histogram = assign_weights(instance, &theta, &grid, stream)?;
    Ok(RunOutput { theta_initial, logs, theta_final: theta, grid, histogram })
}

/// `R_t = Σ_{s ≤ t} [l_K(y_s, θ_s) - l_K(y_s, θ_ref)]`, using the losses
/// recorded in the logs.
pub fn empirical_regret<S: Scalar>(
    logs: &[RoundLog<S>],
    instance: &MopInstance<S>,
    grid: &WeightGrid<S>,
    observations: &[Observation<S>],
    theta_ref: &[S],
) -> Result<Vec<S>> {
    if logs.len() != observations.len() {
        return Err(ImopError::InvalidInput(format!("{} logs for {} observations", logs.len(), observations.len())));
    }
    let points = sampled_efficient_points(instance, theta_ref, grid, None)?;
    let mut acc = S::zero();
    Ok(logs
        .iter()
        .zip(observations)
        .map(|(l, o)| {
            acc += l.loss - nearest(&points, &o.y).value;
            acc
        })
        .collect())
}

/// Least-squares slope of `log max(R_t, 1e-9)` against `log t` over
/// `t ∈ [from, to]` (rounds numbered from 1).
pub fn loglog_slope(regret: &[f64], from: usize, to: usize) -> f64 {
    let pts: Vec<(f64, f64)> = (from..=to.min(regret.len()))
        .map(|t| ((t as f64).ln(), regret[t - 1].max(1e-9).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Minimum expected count per bin after merging.
pub const MIN_EXPECTED: f64 = 5.0;

/// Pearson statistic `Σ (O - E)² / E` after merging adjacent bins left to
/// right until each expected count reaches [`MIN_EXPECTED`] (a short tail
/// joins the last bin).
pub fn chi_square_statistic(observed: &[f64], expected: &[f64]) -> Result<f64> {
    if observed.len() != expected.len() {
        return Err(ImopError::DimensionMismatch(format!("{} observed bins, {} expected", observed.len(), expected.len())));
    }
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        acc.0 += o;
        acc.1 += e;
        if acc.1 >= MIN_EXPECTED {
            bins.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => return Err(ImopError::InsufficientExpectedCounts),
        }
    }
    if bins.len() < 2 {
        return Err(ImopError::InsufficientExpectedCounts);
    }
    Ok(bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum())
}

/// Bin edges halfway between consecutive grid coordinates, with outer
/// edges 0 and 1.
fn bin_edges(us: &[f64]) -> Vec<f64> {
    let mut edges = vec![0.0];
    edges.extend(us.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    edges.push(1.0);
    edges
}

/// Probability of each bin under Normal(mean, sd) truncated to `[0, 1]`.
pub fn truncated_normal_masses(us: &[f64], mean: f64, sd: f64) -> Result<Vec<f64>> {
    let dist = Normal::new(mean, sd).map_err(|e| ImopError::InvalidParameter(e.to_string()))?;
    let z = dist.cdf(1.0) - dist.cdf(0.0);
    let edges = bin_edges(us);
    Ok(edges.windows(2).map(|w| (dist.cdf(w[1]) - dist.cdf(w[0])) / z).collect())
}

/// Probability of each bin under Uniform(0, 1).
pub fn uniform_masses(us: &[f64]) -> Vec<f64> {
    bin_edges(us).windows(2).map(|w| w[1] - w[0]).collect()
}

/// Writes `t,loss,k_used,err,wall_ms,theta1..thetad`.
pub fn write_rounds_csv<S: Scalar, W: Write>(logs: &[RoundLog<S>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = logs.first().map_or(0, |l| l.theta.len());
    let mut header: Vec<String> = ["t", "loss", "k_used", "err", "wall_ms"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=d).map(|i| format!("theta{i}")));
    w.write_record(&header).map_err(std::io::Error::from)?;
    for l in logs {
        let mut rec = vec![
            l.t.to_string(),
            l.loss.to_string(),
            l.k_used.to_string(),
            l.err.map_or(String::new(), |e| e.to_string()),
            l.wall_ms.to_string(),
        ];
        rec.extend(l.theta.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub w1: Vec<f64>,
    pub counts: Vec<usize>,
    pub proportions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub k: usize,
    pub eta0: f64,
    pub theta_initial: Vec<f64>,
    pub theta_final: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_true: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_error: Option<f64>,
    pub total_loss: f64,
    pub mean_loss: f64,
    pub zero_loss_rounds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_update_ms: Option<f64>,
    pub histogram: HistogramSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi_square: Option<f64>,
}

impl RunSummary {
    pub fn new<S: Scalar>(config: &RunConfig, out: &RunOutput<S>, truth: Option<&[S]>, chi_square: Option<f64>) -> Self {
        let f = |v: &[S]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
        let total_loss: f64 = out.logs.iter().map(|l| l.loss.to_f64_lossy()).sum();
        Self {
            algorithm: config.algorithm,
            rounds: out.logs.len(),
            k: out.grid.len(),
            eta0: config.eta0,
            theta_initial: f(&out.theta_initial),
            theta_final: f(&out.theta_final),
            theta_true: truth.map(f),
            final_error: truth.map(|tr| dist_sq(&out.theta_final, tr).sqrt().to_f64_lossy()),
            total_loss,
            mean_loss: total_loss / out.logs.len().max(1) as f64,
            zero_loss_rounds: out.logs.iter().filter(|l| l.loss < S::lit(crate::loss::ZERO_LOSS)).count(),
            total_update_ms: config.timing.then(|| out.logs.iter().map(|l| l.wall_ms).sum()),
            histogram: HistogramSummary {
                w1: out.grid.first_coordinates().iter().map(|u| u.to_f64_lossy()).collect(),
                counts: out.histogram.counts.clone(),
                proportions: out.histogram.proportions.clone(),
            },
            chi_square,
        }
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self).map_err(|e| ImopError::InvalidInput(e.to_string()))?;
        out.write_all(b"\n")?;
        Ok(())
    }
}
