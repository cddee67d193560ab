//! Monte-Carlo targeting experiment.
//!
//! Each user in the validation split gets a transaction probability from one
//! of four scoring methods; a binomial draw per user decides who is targeted.
//! Per trial we count true positives (targeted last-session buyers) and false
//! positives, and compute the breaking cost point — the per-target cost at
//! which campaign profit is exactly zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::attribution::AttributionModel;
use crate::features::EncodedJourney;
use crate::model::{forward, ModelParams};

#[derive(Debug, Error)]
pub enum TargetingError {
    #[error("no users to simulate over")]
    EmptyPopulation,
    #[error("trials must be >= 1")]
    NoTrials,
    #[error("input vectors have mismatched lengths")]
    LengthMismatch,
    #[error("trial targeted nobody")]
    NoTargets,
    #[error("cost grid must be non-empty and sorted ascending")]
    BadGrid,
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// The four scoring methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MethodKind {
    Random,
    Statistical,
    ModelLinear,
    ModelTimeDecay,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] =
        [MethodKind::Random, MethodKind::Statistical, MethodKind::ModelLinear, MethodKind::ModelTimeDecay];

    pub fn as_str(&self) -> &'static str {
        match self {
            MethodKind::Random => "random",
            MethodKind::Statistical => "statistical",
            MethodKind::ModelLinear => "model_linear",
            MethodKind::ModelTimeDecay => "model_timedecay",
        }
    }
}

/// A scoring method with whatever it needs to run.
pub enum ScoringMethod<'a> {
    /// Uniform probability, no bias.
    Random,
    /// Linear attribution of transactions over all sessions but the last,
    /// plus centered uniform noise, clamped to [0,1].
    Statistical { noise_halfwidth: f64 },
    /// Trained network's transaction-class output at the last session.
    Model { params: &'a ModelParams<f64>, attribution: AttributionModel },
}

impl ScoringMethod<'_> {
    pub fn kind(&self) -> MethodKind {
        match self {
            ScoringMethod::Random => MethodKind::Random,
            ScoringMethod::Statistical { .. } => MethodKind::Statistical,
            ScoringMethod::Model { attribution, .. } => match attribution {
                AttributionModel::Linear => MethodKind::ModelLinear,
                AttributionModel::TimeDecay => MethodKind::ModelTimeDecay,
            },
        }
    }
}

pub const DEFAULT_NOISE_HALFWIDTH: f64 = 0.05;

/// Per-user transaction probability under a scoring method.
///
/// Model scores read the class-5 output of the forward pass at the final
/// session; the final session's own aggregates never enter its inputs (only
/// its hits and the previous session's features do), so there is no leakage.
pub fn score_users(
    method: &ScoringMethod<'_>,
    journeys: &[EncodedJourney<f64>],
    seed: u64,
) -> Result<Vec<f64>, TargetingError> {
    if journeys.is_empty() {
        return Err(TargetingError::EmptyPopulation);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(journeys.len());
    for j in journeys {
        let p = match method {
            ScoringMethod::Random => rng.gen_range(0.0..1.0),
            ScoringMethod::Statistical { noise_halfwidth } => {
                let n = j.n_sessions();
                let base = if n >= 2 {
                    let k = j.class_ids[..n - 1].iter().filter(|&&c| c == 5).count();
                    k as f64 / (n - 1) as f64
                } else {
                    0.0
                };
                let noise = rng.gen_range(-noise_halfwidth..=*noise_halfwidth);
                (base + noise).clamp(0.0, 1.0)
            }
            ScoringMethod::Model { params, .. } => {
                let (preds, _) = forward(params, j)?;
                preds[(j.n_sessions() - 1, 5)]
            }
        };
        scores.push(p);
    }
    Ok(scores)
}

/// One simulated campaign draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialResult {
    pub tp: usize,
    pub fp: usize,
    pub tp_revenue: f64,
}

impl TrialResult {
    pub fn profit(&self, cost: f64) -> f64 {
        self.tp_revenue - (self.tp + self.fp) as f64 * cost
    }
}

/// Monte-Carlo statistics over all trials of one method.
#[derive(Debug, Clone, Serialize)]
pub struct TargetingOutcome {
    pub tp_mean: f64,
    pub tp_std: f64,
    pub fp_mean: f64,
    pub fp_std: f64,
    /// tp_mean relative to the buyer count.
    pub tp_pct: f64,
    /// fp_mean relative to the non-buyer count.
    pub fp_pct: f64,
    pub bp_mean: f64,
    pub bp_std: f64,
    pub trials: usize,
    /// Trials that targeted nobody; they contribute bp = 0.
    pub zero_target_trials: usize,
    pub buyers: usize,
    pub non_buyers: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Run the binomial targeting simulation. Each trial draws its own random
/// stream from (seed, trial index), so results do not depend on scheduling.
pub fn simulate_targeting(
    scores: &[f64],
    bought_last: &[bool],
    revenue_last: &[f64],
    trials: usize,
    seed: u64,
) -> Result<(TargetingOutcome, Vec<TrialResult>), TargetingError> {
    if scores.is_empty() {
        return Err(TargetingError::EmptyPopulation);
    }
    if trials == 0 {
        return Err(TargetingError::NoTrials);
    }
    if scores.len() != bought_last.len() || scores.len() != revenue_last.len() {
        return Err(TargetingError::LengthMismatch);
    }
    let buyers = bought_last.iter().filter(|&&b| b).count();
    let non_buyers = scores.len() - buyers;

    let mut results = Vec::with_capacity(trials);
    let mut zero_target_trials = 0usize;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64 + 1);
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut tp_revenue = 0.0;
        for u in 0..scores.len() {
            if rng.gen_range(0.0..1.0) < scores[u] {
                if bought_last[u] {
                    tp += 1;
                    tp_revenue += revenue_last[u];
                } else {
                    fp += 1;
                }
            }
        }
        if tp + fp == 0 {
            zero_target_trials += 1;
        }
        results.push(TrialResult { tp, fp, tp_revenue });
    }

    let tps: Vec<f64> = results.iter().map(|r| r.tp as f64).collect();
    let fps: Vec<f64> = results.iter().map(|r| r.fp as f64).collect();
    let bps: Vec<f64> = results
        .iter()
        .map(|r| if r.tp + r.fp > 0 { r.tp_revenue / (r.tp + r.fp) as f64 } else { 0.0 })
        .collect();
    let (tp_mean, tp_std) = mean_std(&tps);
    let (fp_mean, fp_std) = mean_std(&fps);
    let (bp_mean, bp_std) = mean_std(&bps);

    let outcome = TargetingOutcome {
        tp_mean,
        tp_std,
        fp_mean,
        fp_std,
        tp_pct: if buyers > 0 { tp_mean / buyers as f64 } else { 0.0 },
        fp_pct: if non_buyers > 0 { fp_mean / non_buyers as f64 } else { 0.0 },
        bp_mean,
        bp_std,
        trials,
        zero_target_trials,
        buyers,
        non_buyers,
    };
    Ok((outcome, results))
}

/// Cost at which profit is exactly zero: total TP revenue over total targets.
pub fn breaking_point(tp_revenue_sum: f64, tp: usize, fp: usize) -> Result<f64, TargetingError> {
    if tp + fp == 0 {
        return Err(TargetingError::NoTargets);
    }
    Ok(tp_revenue_sum / (tp + fp) as f64)
}

/// Mean profit across trials at each grid cost.
#[derive(Debug, Clone, Serialize)]
pub struct ProfitCurve {
    pub points: Vec<(f64, f64)>,
}

pub fn profit_curve(trials: &[TrialResult], grid: &[f64]) -> Result<ProfitCurve, TargetingError> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(TargetingError::BadGrid);
    }
    if trials.is_empty() {
        return Err(TargetingError::EmptyPopulation);
    }
    let n = trials.len() as f64;
    let points = grid
        .iter()
        .map(|&cost| {
            let mean = trials.iter().map(|t| t.profit(cost)).sum::<f64>() / n;
            (cost, mean)
        })
        .collect();
    Ok(ProfitCurve { points })
}

/// 120 log-spaced costs in [0.1, 1000].
pub fn default_cost_grid() -> Vec<f64> {
    let n = 120;
    let (lo, hi) = (0.1f64.ln(), 1000f64.ln());
    (0..n).map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Display floor for non-positive profits on the log-scale plot.
pub const LOG_PLOT_FLOOR: f64 = 0.01;

const SVG_W: f64 = 720.0;
const SVG_H: f64 = 480.0;
const MARGIN: f64 = 60.0;

fn render_svg(curves: &[(String, &ProfitCurve)], log_scale: bool) -> String {
    let palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];
    let y_of = |p: f64| if log_scale { p.max(LOG_PLOT_FLOOR).log10() } else { p };
    let xs: Vec<f64> = curves
        .iter()
        .flat_map(|(_, c)| c.points.iter().map(|&(x, _)| x.max(1e-12).log10()))
        .collect();
    let ys: Vec<f64> =
        curves.iter().flat_map(|(_, c)| c.points.iter().map(|&(_, y)| y_of(y))).collect();
    let (xmin, xmax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
        (a.min(v), b.max(v))
    });
    let (ymin, ymax) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
        (a.min(v), b.max(v))
    });
    let xspan = (xmax - xmin).max(1e-9);
    let yspan = (ymax - ymin).max(1e-9);
    let px = |x: f64| MARGIN + (x - xmin) / xspan * (SVG_W - 2.0 * MARGIN);
    let py = |y: f64| SVG_H - MARGIN - (y - ymin) / yspan * (SVG_H - 2.0 * MARGIN);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" \
         viewBox=\"0 0 {SVG_W} {SVG_H}\">\n\
         <rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">Mean profit vs targeting cost{}</text>\n",
        SVG_W / 2.0,
        if log_scale { " (log scale)" } else { "" }
    );
    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{lb}\" text-anchor=\"middle\" font-size=\"12\">cost (log10)</text>\n",
        m = MARGIN,
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN,
        t = MARGIN,
        cx = SVG_W / 2.0,
        lb = SVG_H - MARGIN / 3.0,
    ));
    // zero-profit line when visible on a linear plot
    if !log_scale && ymin < 0.0 && ymax > 0.0 {
        let y0 = py(0.0);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n",
            MARGIN,
            SVG_W - MARGIN
        ));
    }
    for (i, (name, curve)) in curves.iter().enumerate() {
        let color = palette[i % palette.len()];
        if curve.points.len() == 1 {
            let (x, y) = curve.points[0];
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{color}\"/>\n",
                px(x.max(1e-12).log10()),
                py(y_of(y))
            ));
        } else {
            let path: Vec<String> = curve
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x.max(1e-12).log10()), py(y_of(y))))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                path.join(" ")
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
            SVG_W - MARGIN + 4.0,
            MARGIN + 16.0 * i as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write linear- and log-scale SVG plots plus a delimited table of the
/// plotted points into `dir`.
pub fn render_plots(
    curves: &[(String, ProfitCurve)],
    dir: &std::path::Path,
) -> Result<(), TargetingError> {
    if curves.is_empty() || curves.iter().any(|(_, c)| c.points.is_empty()) {
        return Err(TargetingError::BadGrid);
    }
    std::fs::create_dir_all(dir)?;
    let refs: Vec<(String, &ProfitCurve)> =
        curves.iter().map(|(n, c)| (n.clone(), c)).collect();
    std::fs::write(dir.join("profit_linear.svg"), render_svg(&refs, false))?;
    std::fs::write(dir.join("profit_log.svg"), render_svg(&refs, true))?;

    let mut table = String::from("method,cost,mean_profit\n");
    for (name, curve) in curves {
        for (cost, profit) in &curve.points {
            table.push_str(&format!("{name},{cost},{profit}\n"));
        }
    }
    std::fs::write(dir.join("profit_curve.csv"), table)?;
    Ok(())
}
