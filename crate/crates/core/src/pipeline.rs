//! End-to-end orchestration: sampling banks 'n' densities, the SA stage,
//! candidate selection, the SAA stage, benchmarks and calibration, plus the
//! report and trace files every run writes.

use crate::calib::{self, GumbelFitMethod, PanelData};
use crate::config::{CalibrateMode, RunConfig};
use crate::copula::CopulaSpec;
use crate::dist::marginal::Marginal;
use crate::dm::GammaMatrix;
use crate::error::{Error, Result};
use crate::importance::{self, IsSpec, TiltedModel, VarianceReport};
use crate::rng::{derive_seed, StreamRole};
use crate::sa::{self, DensityBank, SaConfig};
use crate::saa::{self, SaaConfig, SortedBank};
use crate::stats;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Plain Monte Carlo AV@R with its asymptotic standard error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub samples: usize,
    pub var: f64,
    pub avar: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaSummary {
    pub t_star: usize,
    pub initial_avar: f64,
    pub var: f64,
    pub avar: f64,
    pub avar_sd_last10: f64,
    /// Final weight columns, one simplex vector per tail slot.
    pub final_gamma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaaSummary {
    pub bank_size: usize,
    pub u_star: f64,
    pub c_star: f64,
    pub standard_error: f64,
    /// Argmax on the full candidate set, one column per tail slot.
    pub gamma_star: Vec<Vec<f64>>,
    /// 1-based candidate labels carrying weight at the argmax, per slot.
    pub winners: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaTraceRow {
    pub t: usize,
    pub var: f64,
    pub avar: f64,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaaGridRow {
    pub gamma: Vec<f64>,
    pub avar: f64,
}

/// The full solve report; everything except `wall_clock_seconds` is a
/// deterministic function of the configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskReport {
    pub config_hash: String,
    pub seed: u64,
    pub p: f64,
    pub dimension: usize,
    pub candidates: usize,
    pub tail_slots: usize,
    pub benchmark: Option<BenchmarkResult>,
    pub sa: SaSummary,
    /// 1-based indices of the candidates kept for the SAA stage, in
    /// selection order.
    pub selected_candidates: Vec<usize>,
    pub saa: SaaSummary,
    pub importance: Option<VarianceReport>,
    pub sa_trace: Vec<SaTraceRow>,
    pub saa_grid: Vec<SaaGridRow>,
    pub wall_clock_seconds: f64,
}

impl RiskReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// CSV of the SA trajectory: iteration, VaR, AV@R, flattened weights.
    pub fn sa_trace_csv(&self) -> String {
        let mut out = String::from("t,var,avar");
        if let Some(first) = self.sa_trace.first() {
            for i in 0..first.gamma.len() {
                out.push_str(&format!(",gamma{}", i + 1));
            }
        }
        out.push('\n');
        for row in &self.sa_trace {
            out.push_str(&format!("{},{},{}", row.t, row.var, row.avar));
            for g in &row.gamma {
                out.push_str(&format!(",{g}"));
            }
            out.push('\n');
        }
        out
    }

    /// CSV of the SAA grid: flattened restricted weights and value.
    pub fn saa_grid_csv(&self) -> String {
        let mut out = String::new();
        if let Some(first) = self.saa_grid.first() {
            let cols: Vec<String> =
                (0..first.gamma.len()).map(|i| format!("gamma{}", i + 1)).collect();
            out.push_str(&cols.join(","));
            out.push_str(",avar\n");
        }
        for row in &self.saa_grid {
            let cols: Vec<String> = row.gamma.iter().map(|g| g.to_string()).collect();
            out.push_str(&cols.join(","));
            out.push_str(&format!(",{}\n", row.avar));
        }
        out
    }
}

/// Hash of the configuration text, recorded in every report.
pub fn config_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    format!("{:x}", hasher.finalize())
}

/// Monte Carlo AV@R of the aggregate under a single copula (no distortion
/// mixture), with the influence-function standard error.
pub fn run_benchmark(cfg: &RunConfig, base_dir: &Path) -> Result<BenchmarkResult> {
    let spec = cfg.build_problem(base_dir)?;
    let copula = cfg.build_benchmark_copula(base_dir)?;
    let samples = cfg.benchmark.as_ref().map_or(1_000_000, |b| b.samples);
    let losses = single_copula_losses(&spec.marginals, &copula, &spec, samples, cfg.seed)?;
    mc_avar(&losses, cfg.problem.p, samples)
}

fn mc_avar(losses: &[f64], p: f64, samples: usize) -> Result<BenchmarkResult> {
    let (var, avar) = sa::empirical_var_avar(losses, p)?;
    let excess: Vec<f64> = losses.iter().map(|&l| (l - var).max(0.0)).collect();
    let se = (stats::variance(&excess) / samples as f64).sqrt() / (1.0 - p);
    Ok(BenchmarkResult { samples, var, avar, standard_error: se })
}

fn single_copula_losses(
    marginals: &[Marginal],
    copula: &CopulaSpec,
    spec: &crate::dm::DMSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let sampler = copula.sampler()?;
    let d = copula.dim();
    let parts = crate::rng::chunks(n);
    let pieces: Result<Vec<Vec<f64>>> = parts
        .par_iter()
        .map(|&(c, _, len)| {
            let mut rng = crate::rng::substream(seed, StreamRole::Benchmark, 0, c);
            let mut row = vec![0.0; d];
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                sampler.draw_into(&mut row, &mut rng);
                for (k, v) in row.iter_mut().enumerate() {
                    *v = marginals[k].quantile_unchecked(v.clamp(1e-300, 1.0 - 1e-16));
                }
                out.push(spec.loss(&row));
            }
            Ok(out)
        })
        .collect();
    Ok(pieces?.into_iter().flatten().collect())
}

/// Runs the full procedure: component banks and density tables, the SA
/// stage, candidate selection, a fresh restricted bank, the SAA grid search,
/// and the optional importance-sampling variance study.
pub fn run_solve(cfg: &RunConfig, base_dir: &Path, hash: &str) -> Result<RiskReport> {
    let started = std::time::Instant::now();
    let spec = cfg.build_problem(base_dir)?;
    let (m, k) = (spec.num_slots(), spec.num_candidates());
    if m == 0 || k == 0 {
        return Err(Error::Config("solve needs tail slots and candidates".into()));
    }
    let alphas = spec.alphas();

    // Step 1: component bank and density tables
    let bank = spec.component_losses(cfg.solve.bank_size, cfg.seed)?;
    let densities = DensityBank::fit(&bank, cfg.solve.kde_grid, cfg.solve.kde_bandwidth)?;

    // Step 2: projected stochastic gradient
    let sa_cfg = SaConfig {
        p: cfg.problem.p,
        step_exponent: cfg.sa.step_exponent,
        sample_size: cfg.sa.sample_size,
        t_min: cfg.sa.t_min,
        t_max: cfg.sa.t_max,
        threshold: cfg.sa.threshold,
        seed: cfg.seed,
    };
    let trace = sa::sa_solve(&spec, &sa_cfg, GammaMatrix::uniform(k, m), &densities)?;
    let last = trace.final_iteration();

    // Dimension reduction
    let k_star = cfg.saa.k_star.min(k);
    let selected = sa::select_copulas(&last.gamma, &last.gradient, &alphas, k_star)?;

    // Step 3: fresh bank on the selected candidates, then the grid search
    let saa_bank =
        spec.component_losses_for(cfg.saa.bank_size, derive_seed(cfg.seed, 0x5AA0), &selected)?;
    let sorted = SortedBank::from_bank(&saa_bank);
    let saa_cfg = SaaConfig {
        p: cfg.problem.p,
        epsilon: cfg.saa.epsilon,
        grid_step: cfg.saa.grid_step,
        refine_rounds: cfg.saa.refine_rounds,
        refine_shrink: cfg.saa.refine_shrink,
        max_grid_points: 2_000_000,
    };
    let result = saa::saa_search(&sorted, &alphas, &saa_cfg)?;
    let se = saa::saa_standard_error(&saa_bank, &result.gamma_star, &alphas, cfg.problem.p, 20)?;
    let gamma_full = result.gamma_full(k)?;
    let winners: Vec<Vec<usize>> = (1..=m)
        .map(|i| {
            gamma_full
                .column(i)
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 1e-9)
                .map(|(j, _)| j + 1)
                .collect()
        })
        .collect();

    // Optional importance-sampling variance study at the SA solution
    let importance = match &cfg.importance {
        None => None,
        Some(section) => {
            let is_spec =
                IsSpec { tilts: section.tilts.clone(), gaussian_shift: section.gaussian_shift.clone() };
            let gamma = &last.gamma;
            let crude_fit = spec.sample_losses(
                gamma,
                section.fit_size,
                derive_seed(cfg.seed, 0x15F1),
                StreamRole::Importance,
                1 << 20,
            )?;
            let tilted = TiltedModel::new(&spec, &is_spec)?;
            let tilted_fit = tilted.sample_losses(
                gamma,
                section.fit_size,
                derive_seed(cfg.seed, 0x15F2),
                1 << 20,
            )?;
            let tables =
                importance::LikelihoodRatioTables::fit(&crude_fit, &tilted_fit, cfg.solve.kde_grid)?;
            Some(importance::variance_study(
                &spec,
                &is_spec,
                gamma,
                &tables,
                cfg.problem.p,
                section.replications,
                section.sample_size,
                derive_seed(cfg.seed, 0x15F3),
            )?)
        }
    };

    let benchmark = match &cfg.benchmark {
        Some(_) => Some(run_benchmark(cfg, base_dir)?),
        None => None,
    };

    Ok(RiskReport {
        config_hash: hash.to_string(),
        seed: cfg.seed,
        p: cfg.problem.p,
        dimension: spec.dim(),
        candidates: k,
        tail_slots: m,
        benchmark,
        sa: SaSummary {
            t_star: trace.t_star,
            initial_avar: trace.iterations[0].avar,
            var: last.var,
            avar: last.avar,
            avar_sd_last10: trace.avar_sd_last10(),
            final_gamma: last.gamma.columns().to_vec(),
        },
        selected_candidates: selected.iter().map(|&j| j + 1).collect(),
        saa: SaaSummary {
            bank_size: cfg.saa.bank_size,
            u_star: result.u_star,
            c_star: result.c_star,
            standard_error: se,
            gamma_star: gamma_full.columns().to_vec(),
            winners,
        },
        importance,
        sa_trace: trace
            .iterations
            .iter()
            .map(|it| SaTraceRow {
                t: it.t,
                var: it.var,
                avar: it.avar,
                gamma: it.gamma.flatten(),
            })
            .collect(),
        saa_grid: result
            .table
            .iter()
            .map(|(gamma, avar)| SaaGridRow { gamma: gamma.clone(), avar: *avar })
            .collect(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationManifest {
    pub mode: String,
    pub observations: usize,
    pub labels: Vec<String>,
    pub marginals: Vec<serde_json::Value>,
    pub dependence: serde_json::Value,
    pub notes: Vec<String>,
}

/// Calibrates marginals and dependence parameters from CSV panels per the
/// `[calibrate]` section.
pub fn run_calibrate(cfg: &RunConfig, base_dir: &Path) -> Result<CalibrationManifest> {
    let section = cfg
        .calibrate
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [calibrate] section".into()))?;
    let data_path = base_dir.join(&section.data);
    let file = std::fs::File::open(&data_path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", data_path.display())))?;
    let panel = PanelData::from_csv(file)?;

    match section.mode {
        CalibrateMode::Market => calibrate_market(section, panel),
        CalibrateMode::FrequencySeverity => {
            let counts_path = section
                .counts
                .as_ref()
                .ok_or_else(|| Error::Config("frequency_severity mode needs counts".into()))?;
            let file = std::fs::File::open(base_dir.join(counts_path))
                .map_err(|e| Error::Config(format!("cannot open counts: {e}")))?;
            let counts = PanelData::from_csv(file)?;
            calibrate_frequency_severity(section, counts, panel)
        }
        CalibrateMode::ParametricIg => calibrate_ig(panel),
    }
}

fn calibrate_market(
    section: &crate::config::CalibrateSection,
    prices: PanelData,
) -> Result<CalibrationManifest> {
    let x = calib::returns_transform(&prices, section.horizon)?;
    let aggregation = crate::dm::Aggregation::SumShifted { shift: 1.0 };
    let (extreme, upper, center) =
        calib::partition_by_aggregate(&x, &aggregation, section.cuts)?;
    let mut marginals = Vec::new();
    for i in 0..x.dim() {
        let column = x.column(i);
        let spliced = calib::build_spliced(&column, section.p_l, section.p_u)?;
        let (lower, upper_tail) = spliced.tails();
        marginals.push(serde_json::json!({
            "label": x.labels[i],
            "kind": "spliced",
            "p_l": section.p_l,
            "p_u": section.p_u,
            "x_l": spliced.lower_boundary(),
            "x_u": spliced.upper_boundary(),
            "lower_shape": lower.shape,
            "lower_scale": lower.scale,
            "upper_shape": upper_tail.shape,
            "upper_scale": upper_tail.scale,
        }));
    }
    let select = |idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&t| x.rows[t].clone()).collect() };
    let center_rows = select(&center);
    let dependence = serde_json::json!({
        "center_linear_correlation": stats::pearson_matrix(&center_rows),
        "regions": [
            region_fits("upper", &select(&upper))?,
            region_fits("extreme", &select(&extreme))?,
        ],
    });
    Ok(CalibrationManifest {
        mode: "market".into(),
        observations: x.len(),
        labels: x.labels.clone(),
        marginals,
        dependence,
        notes: vec![
            format!(
                "partition sizes: extreme {} / upper {} / center {}",
                extreme.len(),
                upper.len(),
                center.len()
            ),
            "grouped-t and joint-ML t fits are not produced here; supply them as fixtures"
                .into(),
        ],
    })
}

fn region_fits(name: &str, rows: &[Vec<f64>]) -> Result<serde_json::Value> {
    let linear = stats::pearson_matrix(rows);
    let tau = calib::kendall_tau_matrix(rows)?;
    let kendall_corr = calib::tau_matrix_to_correlation(&tau)?;
    let pseudo = calib::pseudo_observations(rows);
    let t_fit = calib::fit_t_nu_profile(&pseudo, &kendall_corr)?;
    Ok(serde_json::json!({
        "region": name,
        "observations": rows.len(),
        "linear_correlation": linear,
        "kendall_correlation": kendall_corr.rows(),
        "t_nu_profile": { "nu": t_fit.value, "at_boundary": t_fit.at_boundary },
    }))
}

fn calibrate_frequency_severity(
    section: &crate::config::CalibrateSection,
    counts: PanelData,
    losses: PanelData,
) -> Result<CalibrationManifest> {
    if counts.dim() != losses.dim() || counts.len() != losses.len() {
        return Err(Error::Config("counts and losses panels must align".into()));
    }
    let mut marginals = Vec::new();
    let mut cleaned_rows = losses.rows.clone();
    for row in cleaned_rows.iter_mut() {
        crate::dist::compound::replace_zeros_uniform(row, section.zero_replace_seed);
    }
    for i in 0..losses.dim() {
        let count_col: Vec<u64> = counts.column(i).iter().map(|&c| c.max(0.0) as u64).collect();
        let loss_col: Vec<f64> = cleaned_rows.iter().map(|r| r[i]).collect();
        let (freq, sev) = calib::fit_frequency_severity(&count_col, &loss_col)?;
        marginals.push(serde_json::json!({
            "label": losses.labels[i],
            "kind": "compound",
            "r": freq.r,
            "p": freq.p,
            "mu": sev.mu,
            "sigma": sev.sigma,
        }));
    }
    let pseudo = calib::pseudo_observations(&cleaned_rows);
    let gumbel_mle = calib::fit_gumbel(&pseudo, GumbelFitMethod::Mle)?;
    let gumbel_cvm = calib::fit_gumbel(&pseudo, GumbelFitMethod::CramerVonMises)?;
    let linear = stats::pearson_matrix(&cleaned_rows);
    let tau = calib::kendall_tau_matrix(&cleaned_rows)?;
    let kendall_corr = calib::tau_matrix_to_correlation(&tau)?;
    let t_fit = calib::fit_t_nu_profile(&pseudo, &kendall_corr)?;
    let dependence = serde_json::json!({
        "linear_correlation": linear,
        "kendall_correlation": kendall_corr.rows(),
        "gumbel_mle": { "theta": gumbel_mle.value, "at_boundary": gumbel_mle.at_boundary },
        "gumbel_cvm": { "theta": gumbel_cvm.value, "at_boundary": gumbel_cvm.at_boundary },
        "t_nu_profile": { "nu": t_fit.value, "at_boundary": t_fit.at_boundary },
    });
    Ok(CalibrationManifest {
        mode: "frequency_severity".into(),
        observations: losses.len(),
        labels: losses.labels.clone(),
        marginals,
        dependence,
        notes: vec![format!(
            "zero losses replaced by Uniform(0,1) draws with seed {}",
            section.zero_replace_seed
        )],
    })
}

fn calibrate_ig(panel: PanelData) -> Result<CalibrationManifest> {
    let mut marginals = Vec::new();
    for i in 0..panel.dim() {
        let column = panel.column(i);
        if column.iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain(format!(
                "column {} has nonpositive values; inverse Gaussian needs positive data",
                panel.labels[i]
            )));
        }
        let n = column.len() as f64;
        let mu = stats::mean(&column);
        let inv_gap: f64 = column.iter().map(|&v| 1.0 / v - 1.0 / mu).sum();
        if inv_gap <= 0.0 {
            return Err(Error::Numeric("degenerate inverse Gaussian likelihood".into()));
        }
        let lambda = n / inv_gap;
        marginals.push(serde_json::json!({
            "label": panel.labels[i],
            "kind": "inverse_gaussian",
            "mu": mu,
            "lambda": lambda,
        }));
    }
    Ok(CalibrationManifest {
        mode: "parametric_ig".into(),
        observations: panel.len(),
        labels: panel.labels.clone(),
        marginals,
        dependence: serde_json::json!(null),
        notes: vec![],
    })
}
