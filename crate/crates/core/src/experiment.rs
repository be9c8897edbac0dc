//! Reproducible experiment campaigns: seeded grids of instances, full-path
//! solves, continuous excess minimization, bound comparisons, CSV results,
//! and report generation with log-log slope fits.
//!
//! Determinism contract: a given config and master seed produce a
//! byte-identical results CSV (rows sorted by cell then trial). Per-trial
//! wall-clock timing is therefore opt-in; with `timing` off the `wall_ms`
//! column is written as zero.

use rayon::prelude::*;
use std::io::Write;
use thiserror::Error;

use crate::bounds::{theorem_lower_bound, BoundsError};
use crate::instance::{
    make_theorem1_instance, make_theorem2_instance, sample_design, Instance, InstanceError,
    TheoremTag,
};
use crate::risk::{excess_risk, segment_min_excess, RiskError};
use crate::solver::{compute_path, PathDriver, PathError, PathStop};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed results CSV at line {line}: {message}")]
    MalformedCsv { line: usize, message: String },
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic per-stream seed from `(master, cell, trial)`.
pub fn derive_seed(master: u64, cell: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(cell)) ^ splitmix64(trial ^ 0xa5a5_a5a5_a5a5_a5a5))
}

/// How `p` is chosen for each grid value of `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PRule {
    /// `p = 3 n`, the tightest admissible dimension.
    ThreeN,
    /// Explicit values, one per entry of the `n` grid.
    Explicit(Vec<usize>),
}

/// Path stopping policy for the per-trial solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathStopRule {
    /// Trace the full path to the unconstrained optimum.
    Unconstrained,
    /// Hard caps, forwarded to the solver.
    MaxBudget(f64),
    MaxBreakpoints(usize),
    /// Extend the path until the breakpoint excess has exceeded
    /// `factor * running_min` for `window` consecutive breakpoints. The
    /// continuous minimum tracked so far is returned; sound for the large
    /// noisy cells where the tail of the path only overfits.
    Auto { window: usize, factor: f64 },
}

/// A batch campaign over grids of `n` and `sigma`.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub theorem: TheoremTag,
    pub n_grid: Vec<usize>,
    pub sigma_grid: Vec<f64>,
    pub p_rule: PRule,
    pub trials: usize,
    pub master_seed: u64,
    pub path_stop: PathStopRule,
    /// Measure per-trial wall time. Off by default: the measured values
    /// break byte-level reproducibility of the results file.
    pub timing: bool,
    pub threads: usize,
    pub out: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            theorem: TheoremTag::One,
            n_grid: vec![30],
            sigma_grid: vec![0.0],
            p_rule: PRule::ThreeN,
            trials: 10,
            master_seed: 0,
            path_stop: PathStopRule::Unconstrained,
            timing: false,
            threads: 0,
            out: None,
        }
    }
}

/// Plain-text key-value config: one `key = value` per line, `#` comments.
///
/// Keys: `theorem` (1|2), `n` (comma list), `sigma` (comma list),
/// `p` (comma list matching `n`, default 3n), `trials`, `master_seed`,
/// `path_stop` (`unconstrained` | `auto` | `budget:<x>` | `breakpoints:<k>`),
/// `timing` (true|false), `threads`, `out`.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ExperimentError> {
    let mut config = ExperimentConfig::default();
    let bad = |line: usize, msg: String| ExperimentError::Config(format!("line {line}: {msg}"));
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let line = match line.find('#') {
            Some(pos) => line[..pos].trim(),
            None => line,
        };
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(lineno, format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        let parse_list_usize = |v: &str| -> Result<Vec<usize>, ExperimentError> {
            v.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|e| bad(lineno, format!("bad integer `{t}`: {e}")))
                })
                .collect()
        };
        match key {
            "theorem" => {
                let v: u8 = value
                    .parse()
                    .map_err(|e| bad(lineno, format!("bad theorem `{value}`: {e}")))?;
                config.theorem = TheoremTag::from_u8(v)
                    .map_err(|e| bad(lineno, e.to_string()))?;
            }
            "n" => config.n_grid = parse_list_usize(value)?,
            "p" => config.p_rule = PRule::Explicit(parse_list_usize(value)?),
            "sigma" => {
                config.sigma_grid = value
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|e| bad(lineno, format!("bad sigma `{t}`: {e}")))
                    })
                    .collect::<Result<_, _>>()?;
            }
            "trials" => {
                config.trials = value
                    .parse()
                    .map_err(|e| bad(lineno, format!("bad trials `{value}`: {e}")))?;
            }
            "master_seed" | "seed" => {
                config.master_seed = value
                    .parse()
                    .map_err(|e| bad(lineno, format!("bad seed `{value}`: {e}")))?;
            }
            "path_stop" => {
                config.path_stop = match value {
                    "unconstrained" => PathStopRule::Unconstrained,
                    "auto" => PathStopRule::Auto {
                        window: 200,
                        factor: 2.0,
                    },
                    other => {
                        if let Some(v) = other.strip_prefix("budget:") {
                            PathStopRule::MaxBudget(v.parse().map_err(|e| {
                                bad(lineno, format!("bad budget `{v}`: {e}"))
                            })?)
                        } else if let Some(v) = other.strip_prefix("breakpoints:") {
                            PathStopRule::MaxBreakpoints(v.parse().map_err(|e| {
                                bad(lineno, format!("bad breakpoint cap `{v}`: {e}"))
                            })?)
                        } else {
                            return Err(bad(lineno, format!("unknown path_stop `{other}`")));
                        }
                    }
                };
            }
            "timing" => {
                config.timing = value
                    .parse()
                    .map_err(|e| bad(lineno, format!("bad timing flag `{value}`: {e}")))?;
            }
            "threads" => {
                config.threads = value
                    .parse()
                    .map_err(|e| bad(lineno, format!("bad threads `{value}`: {e}")))?;
            }
            "out" => config.out = Some(value.to_string()),
            other => return Err(bad(lineno, format!("unknown key `{other}`"))),
        }
    }
    if let PRule::Explicit(ref ps) = config.p_rule {
        if ps.len() != config.n_grid.len() {
            return Err(ExperimentError::Config(format!(
                "p list has {} entries but n list has {}",
                ps.len(),
                config.n_grid.len()
            )));
        }
    }
    Ok(config)
}

/// One per-seed record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub theorem: TheoremTag,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    pub seed: u64,
    pub b_at_min: f64,
    pub min_excess: f64,
    pub fast_bound: f64,
    pub slow_bound: Option<f64>,
    pub satisfied_fast: bool,
    pub satisfied_slow: Option<bool>,
    pub breakpoints: usize,
    pub wall_ms: u64,
}

/// Per-cell aggregate.
#[derive(Debug, Clone)]
pub struct CellSummary {
    pub theorem: TheoremTag,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    pub trials: usize,
    /// Reason this cell was skipped (hypothesis violation), if it was.
    pub skipped: Option<String>,
    pub fast_rate: f64,
    pub slow_rate: Option<f64>,
    pub median_min_excess: f64,
    pub fast_pass: bool,
    /// Slow satisfaction rate at least 1/2 within three binomial standard
    /// errors; `None` when the slow bound does not apply.
    pub slow_pass: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub results: Vec<TrialResult>,
    pub cells: Vec<CellSummary>,
}

impl ExperimentOutcome {
    /// Whether every asserted per-cell criterion passed.
    pub fn all_passed(&self) -> bool {
        self.cells.iter().all(|c| {
            c.skipped.is_some() || (c.fast_pass && c.slow_pass.unwrap_or(true))
        })
    }
}

fn build_instance(
    theorem: TheoremTag,
    n: usize,
    p: usize,
    sigma: f64,
) -> Result<Instance, InstanceError> {
    match theorem {
        TheoremTag::One => make_theorem1_instance(n, p, sigma),
        TheoremTag::Two => make_theorem2_instance(n, p, sigma),
    }
}

/// Run one seeded trial: sample, path, continuous minimum excess, bounds.
pub fn run_trial(
    instance: &Instance,
    seed: u64,
    rule: PathStopRule,
    timing: bool,
) -> Result<TrialResult, ExperimentError> {
    let start = std::time::Instant::now();
    let sample = sample_design(instance, seed);
    let (b_at_min, min_excess, breakpoints) = match rule {
        PathStopRule::Unconstrained => {
            let path = compute_path(&sample, PathStop::ToUnconstrained)?;
            let (b, e) = crate::risk::min_excess_over_path(instance, &path)?;
            (b, e, path.breakpoints.len())
        }
        PathStopRule::MaxBudget(b) => {
            let path = compute_path(&sample, PathStop::MaxBudget(b))?;
            let (b, e) = crate::risk::min_excess_over_path(instance, &path)?;
            (b, e, path.breakpoints.len())
        }
        PathStopRule::MaxBreakpoints(k) => {
            let path = compute_path(&sample, PathStop::MaxBreakpoints(k))?;
            let (b, e) = crate::risk::min_excess_over_path(instance, &path)?;
            (b, e, path.breakpoints.len())
        }
        PathStopRule::Auto { window, factor } => {
            let mut driver = PathDriver::new(&sample)?;
            let mut count = 0usize;
            let mut best = f64::INFINITY;
            let mut best_b = 0.0;
            let mut rising = 0usize;
            let mut prev: Option<(Vec<f64>, f64)> = None;
            while let Some(bp) = driver.next_breakpoint()? {
                count += 1;
                let beta = bp.dense_beta(instance.p);
                let bp_excess = excess_risk(instance, &beta)?.excess;
                if let Some((ref prev_beta, prev_budget)) = prev {
                    let (t, val) = segment_min_excess(instance, prev_beta, &beta);
                    if val < best {
                        best = val;
                        best_b = prev_budget + t * (bp.budget - prev_budget);
                    }
                } else if bp_excess < best {
                    best = bp_excess;
                    best_b = bp.budget;
                }
                if bp_excess > factor * best && bp_excess > best + 1e-12 {
                    rising += 1;
                    if rising >= window {
                        break;
                    }
                } else {
                    rising = 0;
                }
                prev = Some((beta, bp.budget));
            }
            (best_b, best, count)
        }
    };
    let (fast_bound, slow) = theorem_lower_bound(instance.theorem, instance.n, instance.sigma)?;
    let slow_bound = if instance.slow_bound_applicable { slow } else { None };
    let wall_ms = if timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    Ok(TrialResult {
        theorem: instance.theorem,
        n: instance.n,
        p: instance.p,
        sigma: instance.sigma,
        seed,
        b_at_min,
        min_excess,
        fast_bound,
        slow_bound,
        satisfied_fast: min_excess >= fast_bound - 1e-12,
        satisfied_slow: slow_bound.map(|s| min_excess >= s - 1e-12),
        breakpoints,
        wall_ms,
    })
}

fn summarize_cell(
    theorem: TheoremTag,
    n: usize,
    p: usize,
    sigma: f64,
    rows: &[TrialResult],
) -> CellSummary {
    let trials = rows.len();
    let fast_hits = rows.iter().filter(|r| r.satisfied_fast).count();
    let fast_rate = fast_hits as f64 / trials.max(1) as f64;
    let slow_applicable: Vec<&TrialResult> =
        rows.iter().filter(|r| r.slow_bound.is_some()).collect();
    let slow_rate = if slow_applicable.is_empty() {
        None
    } else {
        let hits = slow_applicable
            .iter()
            .filter(|r| r.satisfied_slow == Some(true))
            .count();
        Some(hits as f64 / slow_applicable.len() as f64)
    };
    let mut excesses: Vec<f64> = rows.iter().map(|r| r.min_excess).collect();
    excesses.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_min_excess = if excesses.is_empty() {
        f64::NAN
    } else if excesses.len() % 2 == 1 {
        excesses[excesses.len() / 2]
    } else {
        0.5 * (excesses[excesses.len() / 2 - 1] + excesses[excesses.len() / 2])
    };
    let slow_pass = slow_rate.map(|r| {
        let m = slow_applicable.len() as f64;
        r >= 0.5 - 3.0 * (0.25 / m).sqrt()
    });
    CellSummary {
        theorem,
        n,
        p,
        sigma,
        trials,
        skipped: None,
        fast_rate,
        slow_rate,
        median_min_excess,
        fast_pass: fast_hits == trials,
        slow_pass,
    }
}

/// Run the whole campaign. Cells whose hypotheses fail are reported as
/// skipped rather than aborting the run. Trials within a cell run on the
/// rayon pool; the output order is independent of scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    let mut results = Vec::new();
    let mut cells = Vec::new();
    let mut cell_index = 0u64;
    for (n_slot, &n) in config.n_grid.iter().enumerate() {
        let p = match &config.p_rule {
            PRule::ThreeN => 3 * n,
            PRule::Explicit(ps) => ps[n_slot],
        };
        for &sigma in &config.sigma_grid {
            let this_cell = cell_index;
            cell_index += 1;
            let instance = match build_instance(config.theorem, n, p, sigma) {
                Ok(i) => i,
                Err(err) => {
                    cells.push(CellSummary {
                        theorem: config.theorem,
                        n,
                        p,
                        sigma,
                        trials: 0,
                        skipped: Some(err.to_string()),
                        fast_rate: 0.0,
                        slow_rate: None,
                        median_min_excess: f64::NAN,
                        fast_pass: false,
                        slow_pass: None,
                    });
                    continue;
                }
            };
            let trial_rows: Result<Vec<TrialResult>, ExperimentError> = (0..config.trials)
                .into_par_iter()
                .map(|trial| {
                    let seed = derive_seed(config.master_seed, this_cell, trial as u64);
                    run_trial(&instance, seed, config.path_stop, config.timing)
                })
                .collect();
            let trial_rows = trial_rows?;
            cells.push(summarize_cell(config.theorem, n, p, sigma, &trial_rows));
            results.extend(trial_rows);
        }
    }
    Ok(ExperimentOutcome { results, cells })
}

pub const RESULTS_HEADER: &str = "theorem,n,p,sigma,seed,B_at_min,min_excess,fast_bound,slow_bound,satisfied_fast,satisfied_slow,breakpoints,wall_ms";

/// Write results rows in the fixed schema with 17-significant-digit floats.
pub fn write_results_csv<W: Write>(out: &mut W, results: &[TrialResult]) -> std::io::Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in results {
        let slow_bound = r
            .slow_bound
            .map(|v| format!("{v:.16e}"))
            .unwrap_or_default();
        let satisfied_slow = r
            .satisfied_slow
            .map(|v| v.to_string())
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{:.16e},{},{:.16e},{:.16e},{:.16e},{},{},{},{},{}",
            r.theorem.as_u8(),
            r.n,
            r.p,
            r.sigma,
            r.seed,
            r.b_at_min,
            r.min_excess,
            r.fast_bound,
            slow_bound,
            r.satisfied_fast,
            satisfied_slow,
            r.breakpoints,
            r.wall_ms
        )?;
    }
    Ok(())
}

/// Parse a results CSV produced by [`write_results_csv`].
pub fn read_results_csv(text: &str) -> Result<Vec<TrialResult>, ExperimentError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == RESULTS_HEADER => {}
        Some((_, other)) => {
            return Err(ExperimentError::MalformedCsv {
                line: 1,
                message: format!("unexpected header `{other}`"),
            })
        }
        None => {
            return Err(ExperimentError::MalformedCsv {
                line: 1,
                message: "empty file".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(ExperimentError::MalformedCsv {
                line: lineno,
                message: format!("expected 13 fields, got {}", fields.len()),
            });
        }
        let err = |message: String| ExperimentError::MalformedCsv {
            line: lineno,
            message,
        };
        let theorem = TheoremTag::from_u8(
            fields[0]
                .parse::<u8>()
                .map_err(|e| err(format!("theorem: {e}")))?,
        )
        .map_err(|e| err(e.to_string()))?;
        let parse_f64 = |s: &str, what: &str| -> Result<f64, ExperimentError> {
            s.parse::<f64>().map_err(|e| err(format!("{what}: {e}")))
        };
        let slow_bound = if fields[8].is_empty() {
            None
        } else {
            Some(parse_f64(fields[8], "slow_bound")?)
        };
        let satisfied_slow = if fields[10].is_empty() {
            None
        } else {
            Some(
                fields[10]
                    .parse::<bool>()
                    .map_err(|e| err(format!("satisfied_slow: {e}")))?,
            )
        };
        out.push(TrialResult {
            theorem,
            n: fields[1].parse().map_err(|e| err(format!("n: {e}")))?,
            p: fields[2].parse().map_err(|e| err(format!("p: {e}")))?,
            sigma: parse_f64(fields[3], "sigma")?,
            seed: fields[4].parse().map_err(|e| err(format!("seed: {e}")))?,
            b_at_min: parse_f64(fields[5], "B_at_min")?,
            min_excess: parse_f64(fields[6], "min_excess")?,
            fast_bound: parse_f64(fields[7], "fast_bound")?,
            slow_bound,
            satisfied_fast: fields[9]
                .parse()
                .map_err(|e| err(format!("satisfied_fast: {e}")))?,
            satisfied_slow,
            breakpoints: fields[11]
                .parse()
                .map_err(|e| err(format!("breakpoints: {e}")))?,
            wall_ms: fields[12]
                .parse()
                .map_err(|e| err(format!("wall_ms: {e}")))?,
        });
    }
    Ok(out)
}

/// Least-squares slope of `ln(median excess)` against `ln(n)`.
#[derive(Debug, Clone)]
pub struct SlopeFit {
    pub theorem: TheoremTag,
    pub sigma: f64,
    pub points: Vec<(usize, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence half-width; `None` with fewer than 3 points.
    pub ci95: Option<f64>,
}

/// Two-sided 97.5% Student-t quantiles for 1..=30 degrees of freedom.
const T_975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
    2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
    2.052, 2.048, 2.045, 2.042,
];

fn fit_loglog(points: &[(usize, f64)]) -> Option<(f64, f64, Option<f64>)> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let m = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ci = if points.len() >= 3 {
        let rss: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| {
                let fitted = intercept + slope * x;
                (y - fitted) * (y - fitted)
            })
            .sum();
        let df = points.len() - 2;
        let sigma2 = rss / df as f64;
        let se = (sigma2 / sxx).sqrt();
        let t = T_975.get(df - 1).cloned().unwrap_or(1.96);
        Some(t * se)
    } else {
        None
    };
    Some((slope, intercept, ci))
}

/// Aggregated report over a results file.
#[derive(Debug, Clone)]
pub struct Report {
    pub cells: Vec<CellSummary>,
    pub slopes: Vec<SlopeFit>,
    /// Groups with a single cell, flagged instead of fitted.
    pub insufficient_cells: Vec<(TheoremTag, f64)>,
}

/// Aggregate results into per-cell summaries and per-sigma slope fits.
pub fn emit_report(results: &[TrialResult]) -> Report {
    // Group rows by cell in first-seen order.
    let mut order: Vec<(u8, usize, usize, u64)> = Vec::new();
    let mut groups: std::collections::HashMap<(u8, usize, usize, u64), Vec<&TrialResult>> =
        std::collections::HashMap::new();
    for r in results {
        let key = (r.theorem.as_u8(), r.n, r.p, r.sigma.to_bits());
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    let mut cells = Vec::new();
    for key in &order {
        let rows = &groups[key];
        let owned: Vec<TrialResult> = rows.iter().map(|r| (*r).clone()).collect();
        cells.push(summarize_cell(
            TheoremTag::from_u8(key.0).expect("validated on read"),
            key.1,
            key.2,
            f64::from_bits(key.3),
            &owned,
        ));
    }

    // Slope fits per (theorem, sigma) group.
    let mut slope_order: Vec<(u8, u64)> = Vec::new();
    for c in &cells {
        let key = (c.theorem.as_u8(), c.sigma.to_bits());
        if !slope_order.contains(&key) {
            slope_order.push(key);
        }
    }
    let mut slopes = Vec::new();
    let mut insufficient = Vec::new();
    for (tag, sigma_bits) in slope_order {
        let sigma = f64::from_bits(sigma_bits);
        let theorem = TheoremTag::from_u8(tag).unwrap();
        let mut points: Vec<(usize, f64)> = cells
            .iter()
            .filter(|c| {
                c.theorem.as_u8() == tag
                    && c.sigma.to_bits() == sigma_bits
                    && c.skipped.is_none()
                    && c.median_min_excess.is_finite()
                    && c.median_min_excess > 0.0
            })
            .map(|c| (c.n, c.median_min_excess))
            .collect();
        points.sort_by_key(|(n, _)| *n);
        points.dedup_by_key(|(n, _)| *n);
        match fit_loglog(&points) {
            Some((slope, intercept, ci95)) => slopes.push(SlopeFit {
                theorem,
                sigma,
                points,
                slope,
                intercept,
                ci95,
            }),
            None => insufficient.push((theorem, sigma)),
        }
    }
    Report {
        cells,
        slopes,
        insufficient_cells: insufficient,
    }
}

impl Report {
    /// Human-readable summary table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "theorem  n      p      sigma     trials fast_rate slow_rate median_min_excess\n",
        );
        for c in &self.cells {
            if let Some(reason) = &c.skipped {
                out.push_str(&format!(
                    "{:<8} {:<6} {:<6} {:<9.4} skipped: {reason}\n",
                    c.theorem.as_u8(),
                    c.n,
                    c.p,
                    c.sigma
                ));
                continue;
            }
            let slow = c
                .slow_rate
                .map(|r| format!("{r:.3}"))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:<8} {:<6} {:<6} {:<9.4} {:<6} {:<9.3} {:<9} {:.6e}\n",
                c.theorem.as_u8(),
                c.n,
                c.p,
                c.sigma,
                c.trials,
                c.fast_rate,
                slow,
                c.median_min_excess
            ));
        }
        for s in &self.slopes {
            let ci = s
                .ci95
                .map(|w| format!(" +- {w:.3} (95% CI)"))
                .unwrap_or_default();
            out.push_str(&format!(
                "slope[theorem {} sigma {:.4}]: {:.4}{} over {} cells\n",
                s.theorem.as_u8(),
                s.sigma,
                s.slope,
                ci,
                s.points.len()
            ));
        }
        for (t, sigma) in &self.insufficient_cells {
            out.push_str(&format!(
                "slope[theorem {} sigma {sigma:.4}]: insufficient cells\n",
                t.as_u8()
            ));
        }
        out
    }

    /// Per-cell aggregate CSV.
    pub fn write_summary_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "theorem,n,p,sigma,trials,fast_rate,slow_rate,median_min_excess,skipped"
        )?;
        for c in &self.cells {
            let slow = c.slow_rate.map(|r| format!("{r:.16e}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{:.16e},{},{:.16e},{},{:.16e},{}",
                c.theorem.as_u8(),
                c.n,
                c.p,
                c.sigma,
                c.trials,
                c.fast_rate,
                slow,
                c.median_min_excess,
                c.skipped.clone().unwrap_or_default()
            )?;
        }
        Ok(())
    }

    /// Log-log scaling plot with reference slopes -1 and -1/2.
    pub fn write_svg<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let width = 720.0;
        let height = 520.0;
        let margin = 70.0;
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
        )?;
        writeln!(
            out,
            r#"<rect width="{width}" height="{height}" fill="white"/>"#
        )?;
        let mut all: Vec<(f64, f64)> = Vec::new();
        for s in &self.slopes {
            for (n, e) in &s.points {
                all.push(((*n as f64).ln(), e.ln()));
            }
        }
        if all.is_empty() {
            writeln!(
                out,
                r#"<text x="{}" y="{}" font-family="monospace">no data</text>"#,
                margin, margin
            )?;
            writeln!(out, "</svg>")?;
            return Ok(());
        }
        let xmin = all.iter().map(|(x, _)| *x).fold(f64::INFINITY, f64::min);
        let xmax = all.iter().map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
        let ymin = all.iter().map(|(_, y)| *y).fold(f64::INFINITY, f64::min);
        let ymax = all.iter().map(|(_, y)| *y).fold(f64::NEG_INFINITY, f64::max);
        let xspan = (xmax - xmin).max(1e-9);
        let yspan = (ymax - ymin).max(1e-9);
        let to_px = |x: f64, y: f64| -> (f64, f64) {
            (
                margin + (x - xmin) / xspan * (width - 2.0 * margin),
                height - margin - (y - ymin) / yspan * (height - 2.0 * margin),
            )
        };
        // Axes.
        writeln!(
            out,
            r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
            m = margin,
            b = height - margin,
            r = width - margin,
            t = margin
        )?;
        writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="12">ln n</text>"#,
            width - margin - 30.0,
            height - margin + 30.0
        )?;
        writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="monospace" font-size="12">ln median min excess</text>"#,
            8.0, margin - 20.0
        )?;
        // Reference slopes through the first data point.
        let (x0, y0) = all[0];
        for (slope, dash, label) in [(-1.0, "4 4", "slope -1"), (-0.5, "2 6", "slope -1/2")] {
            let (px0, py0) = to_px(x0, y0);
            let (px1, py1) = to_px(xmax, y0 + slope * (xmax - x0));
            writeln!(
                out,
                r#"<line x1="{px0:.2}" y1="{py0:.2}" x2="{px1:.2}" y2="{py1:.2}" stroke="gray" stroke-dasharray="{dash}"/><text x="{px1:.2}" y="{py1:.2}" font-family="monospace" font-size="10" fill="gray">{label}</text>"#
            )?;
        }
        let colors = ["#1f6fb2", "#c23b22", "#2e8540", "#8031a7"];
        for (si, s) in self.slopes.iter().enumerate() {
            let color = colors[si % colors.len()];
            let mut d = String::new();
            for (idx, (n, e)) in s.points.iter().enumerate() {
                let (px, py) = to_px((*n as f64).ln(), e.ln());
                d.push_str(&format!("{}{px:.2} {py:.2} ", if idx == 0 { "M" } else { "L" }));
                writeln!(
                    out,
                    r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{color}"/>"#
                )?;
            }
            writeln!(
                out,
                r#"<path d="{d}" fill="none" stroke="{color}"/><text x="{}" y="{}" font-family="monospace" font-size="11" fill="{color}">theorem {} sigma {:.3} slope {:.3}</text>"#,
                margin + 6.0,
                margin + 16.0 * (si as f64 + 1.0),
                s.theorem.as_u8(),
                s.sigma,
                s.slope
            )?;
        }
        writeln!(out, "</svg>")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_derivation_is_stable_and_spread() {
        let a = derive_seed(42, 0, 0);
        let b = derive_seed(42, 0, 1);
        let c = derive_seed(42, 1, 0);
        let d = derive_seed(43, 0, 0);
        assert_eq!(a, derive_seed(42, 0, 0));
        assert!(a != b && a != c && a != d && b != c);
    }

    #[test]
    fn config_parsing_round_trip() {
        let text = "
# campaign
theorem = 2
n = 30, 60, 120
sigma = 0.0, 0.2
trials = 5
master_seed = 99
path_stop = breakpoints:40
timing = false
threads = 2
out = results.csv
";
        let config = parse_config(text).unwrap();
        assert_eq!(config.theorem, TheoremTag::Two);
        assert_eq!(config.n_grid, vec![30, 60, 120]);
        assert_eq!(config.sigma_grid, vec![0.0, 0.2]);
        assert_eq!(config.trials, 5);
        assert_eq!(config.master_seed, 99);
        assert_eq!(config.path_stop, PathStopRule::MaxBreakpoints(40));
        assert_eq!(config.out.as_deref(), Some("results.csv"));

        assert!(parse_config("nonsense").is_err());
        assert!(parse_config("p = 90\nn = 30, 60").is_err());
        assert!(parse_config("theorem = 7").is_err());
    }

    #[test]
    fn empty_grid_gives_header_only_csv() {
        let config = ExperimentConfig {
            n_grid: vec![],
            ..ExperimentConfig::default()
        };
        let outcome = run_experiment(&config).unwrap();
        assert!(outcome.results.is_empty());
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &outcome.results).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{RESULTS_HEADER}\n"));
    }

    #[test]
    fn invalid_cell_is_skipped_with_reason() {
        let config = ExperimentConfig {
            n_grid: vec![30],
            p_rule: PRule::Explicit(vec![60]),
            trials: 2,
            ..ExperimentConfig::default()
        };
        let outcome = run_experiment(&config).unwrap();
        assert!(outcome.results.is_empty());
        assert_eq!(outcome.cells.len(), 1);
        let reason = outcome.cells[0].skipped.as_ref().unwrap();
        assert!(reason.contains("p >= 3n"), "reason: {reason}");
    }

    #[test]
    fn campaign_is_deterministic_and_readable() {
        let config = ExperimentConfig {
            theorem: TheoremTag::One,
            n_grid: vec![30],
            sigma_grid: vec![0.0],
            trials: 3,
            master_seed: 7,
            ..ExperimentConfig::default()
        };
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        write_results_csv(&mut csv_a, &a.results).unwrap();
        write_results_csv(&mut csv_b, &b.results).unwrap();
        assert_eq!(csv_a, csv_b, "same seed must regenerate bytes");

        let parsed = read_results_csv(&String::from_utf8(csv_a).unwrap()).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed, a.results);
        // Noiseless run leaves the slow columns empty.
        assert!(parsed.iter().all(|r| r.slow_bound.is_none()));
    }

    #[test]
    fn malformed_csv_reports_line_numbers() {
        let text = format!("{RESULTS_HEADER}\n1,30,90,0.0,5,bad,1,1,,true,,4,0\n");
        match read_results_csv(&text) {
            Err(ExperimentError::MalformedCsv { line: 2, .. }) => {}
            other => panic!("expected line-2 error, got {other:?}"),
        }
        match read_results_csv("left,right\n") {
            Err(ExperimentError::MalformedCsv { line: 1, .. }) => {}
            other => panic!("expected header error, got {other:?}"),
        }
    }

    #[test]
    fn slope_fit_recovers_known_exponent() {
        // Synthetic results with excess exactly proportional to 1/n.
        let mut rows = Vec::new();
        for (cell, n) in [30usize, 60, 120, 240].iter().enumerate() {
            for t in 0..3u64 {
                rows.push(TrialResult {
                    theorem: TheoremTag::One,
                    n: *n,
                    p: 3 * n,
                    sigma: 0.0,
                    seed: derive_seed(1, cell as u64, t),
                    b_at_min: 0.5,
                    min_excess: 2.0 / *n as f64,
                    fast_bound: 1e-9,
                    slow_bound: None,
                    satisfied_fast: true,
                    satisfied_slow: None,
                    breakpoints: 10,
                    wall_ms: 0,
                });
            }
        }
        let report = emit_report(&rows);
        assert_eq!(report.slopes.len(), 1);
        let fit = &report.slopes[0];
        assert!((fit.slope + 1.0).abs() < 1e-9, "slope {}", fit.slope);
        assert!(fit.ci95.unwrap() < 1e-6);
        let text = report.render_text();
        assert!(text.contains("slope[theorem 1"));

        let mut svg = Vec::new();
        report.write_svg(&mut svg).unwrap();
        let svg = String::from_utf8(svg).unwrap();
        assert!(svg.contains("slope -1/2"));
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn single_cell_is_flagged_not_fitted() {
        let rows = vec![TrialResult {
            theorem: TheoremTag::One,
            n: 30,
            p: 90,
            sigma: 0.0,
            seed: 1,
            b_at_min: 0.1,
            min_excess: 1e-3,
            fast_bound: 1e-9,
            slow_bound: None,
            satisfied_fast: true,
            satisfied_slow: None,
            breakpoints: 3,
            wall_ms: 0,
        }];
        let report = emit_report(&rows);
        assert!(report.slopes.is_empty());
        assert_eq!(report.insufficient_cells.len(), 1);
        assert!(report.render_text().contains("insufficient cells"));
    }

    #[test]
    fn mixed_sigma_results_get_separate_fits() {
        let mut rows = Vec::new();
        for &sigma in &[0.0, 0.2] {
            for &n in &[400usize, 1600] {
                rows.push(TrialResult {
                    theorem: TheoremTag::One,
                    n,
                    p: 3 * n,
                    sigma,
                    seed: 0,
                    b_at_min: 0.5,
                    min_excess: if sigma == 0.0 {
                        1.0 / n as f64
                    } else {
                        1.0 / (n as f64).sqrt()
                    },
                    fast_bound: 1e-12,
                    slow_bound: None,
                    satisfied_fast: true,
                    satisfied_slow: None,
                    breakpoints: 5,
                    wall_ms: 0,
                });
            }
        }
        let report = emit_report(&rows);
        assert_eq!(report.slopes.len(), 2);
        assert!((report.slopes[0].slope + 1.0).abs() < 1e-9);
        assert!((report.slopes[1].slope + 0.5).abs() < 1e-9);
    }
}
