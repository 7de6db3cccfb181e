//! Run configuration: a TOML (or JSON) schema describing the problem, the
//! solver stages and the optional importance-sampling and benchmark layers.
//! Unknown keys are rejected everywhere.

use crate::calib;
use crate::copula::{CopulaSpec, CorrelationMatrix, GroupPartition};
use crate::dist::compound::{CompoundMarginal, FrequencySpec, SeveritySpec};
use crate::dist::marginal::Marginal;
use crate::dist::spliced::{GpdTail, SplicedMarginal};
use crate::dist::DistributionSpec;
use crate::distortion::{DistortionFamily, DistortionSet};
use crate::dm::{Aggregation, DMSpec};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub sa: SaSection,
    #[serde(default)]
    pub saa: SaaSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default, rename = "is")]
    pub importance: Option<IsSection>,
    #[serde(default)]
    pub benchmark: Option<BenchmarkSection>,
    #[serde(default)]
    pub calibrate: Option<CalibrateSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// AV@R level.
    pub p: f64,
    pub aggregation: AggregationConfig,
    /// Divides the aggregate loss before any reporting (unit conversion).
    #[serde(default = "one")]
    pub loss_scale: f64,
    pub distortions: DistortionFamily,
    pub marginals: Vec<MarginalConfig>,
    pub central: CopulaConfig,
    #[serde(default)]
    pub candidates: Vec<CopulaConfig>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AggregationConfig {
    Sum,
    SumShifted { shift: f64 },
    ExcessOfLoss { thresholds: Vec<f64> },
}

impl AggregationConfig {
    fn build(&self) -> Aggregation {
        match self {
            AggregationConfig::Sum => Aggregation::Sum,
            AggregationConfig::SumShifted { shift } => Aggregation::SumShifted { shift: *shift },
            AggregationConfig::ExcessOfLoss { thresholds } => {
                Aggregation::ExcessOfLoss { thresholds: thresholds.clone() }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarginalConfig {
    InverseGaussian { mu: f64, lambda: f64 },
    Gpd { shape: f64, scale: f64 },
    Lognormal { mu: f64, sigma: f64 },
    NegBinomial { r: f64, p: f64 },
    Normal { mu: f64, sigma: f64 },
    StudentT { nu: f64 },
    Gamma { shape: f64, scale: f64 },
    ChiSquare { nu: f64 },
    Uniform { a: f64, b: f64 },
    /// Explicit three-piece marginal; the center comes inline or from a
    /// one-column CSV and must run from the lower to the upper boundary.
    Spliced {
        p_l: f64,
        p_u: f64,
        lower_shape: f64,
        lower_scale: f64,
        upper_shape: f64,
        upper_scale: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default)]
        center_file: Option<String>,
    },
    /// Three-piece marginal whose center is reconstructed as the truncated
    /// normal matching the boundary densities of the two GPD tails; used
    /// when only boundary and tail parameters are available.
    SplicedSmooth {
        p_l: f64,
        p_u: f64,
        x_l: f64,
        x_u: f64,
        lower_shape: f64,
        lower_scale: f64,
        upper_shape: f64,
        upper_scale: f64,
        #[serde(default = "default_center_points")]
        center_points: usize,
    },
    /// Compound frequency/severity marginal backed by a stored quantile
    /// table of `table_size` simulated periods.
    Compound {
        r: f64,
        p: f64,
        mu: f64,
        sigma: f64,
        #[serde(default = "default_table_size")]
        table_size: usize,
    },
}

fn default_center_points() -> usize {
    2001
}

fn default_table_size() -> usize {
    10_000_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CopulaConfig {
    Gaussian {
        #[serde(default)]
        correlation: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        correlation_file: Option<String>,
    },
    StudentT {
        nu: f64,
        #[serde(default)]
        correlation: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        correlation_file: Option<String>,
    },
    /// `groups` lists 1-based coordinate indices per block.
    GroupedT {
        nus: Vec<f64>,
        groups: Vec<Vec<usize>>,
        #[serde(default)]
        correlation: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        correlation_file: Option<String>,
    },
    Clayton { theta: f64 },
    Gumbel { theta: f64 },
    Frank { theta: f64 },
    Independence {},
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaSection {
    pub step_exponent: f64,
    pub sample_size: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub threshold: f64,
}

impl Default for SaSection {
    fn default() -> Self {
        SaSection {
            step_exponent: 0.6,
            sample_size: 100_000,
            t_min: 10,
            t_max: 50,
            threshold: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaaSection {
    pub bank_size: usize,
    pub grid_step: f64,
    pub k_star: usize,
    pub refine_rounds: usize,
    pub refine_shrink: f64,
    pub epsilon: Option<f64>,
}

impl Default for SaaSection {
    fn default() -> Self {
        SaaSection {
            bank_size: 10_000_000,
            grid_step: 0.1,
            k_star: 3,
            refine_rounds: 2,
            refine_shrink: 0.5,
            epsilon: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveSection {
    /// Component bank size behind the density tables and the SA stage.
    pub bank_size: usize,
    pub kde_grid: usize,
    pub kde_bandwidth: Option<f64>,
}

impl Default for SolveSection {
    fn default() -> Self {
        SolveSection { bank_size: 1_000_000, kde_grid: 1000, kde_bandwidth: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsSection {
    pub tilts: Vec<f64>,
    pub gaussian_shift: Vec<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_is_samples")]
    pub sample_size: usize,
    #[serde(default = "default_fit_size")]
    pub fit_size: usize,
}

fn default_replications() -> usize {
    50
}

fn default_is_samples() -> usize {
    100_000
}

fn default_fit_size() -> usize {
    1_000_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    #[serde(default = "default_bench_samples")]
    pub samples: usize,
    /// Copula for the benchmark run; the central copula when omitted.
    #[serde(default)]
    pub copula: Option<CopulaConfig>,
}

fn default_bench_samples() -> usize {
    1_000_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    pub mode: CalibrateMode,
    /// Panel CSV: prices (market), per-period losses (frequency/severity) or
    /// raw observations (parametric).
    pub data: String,
    /// Per-period counts panel, frequency/severity mode only.
    #[serde(default)]
    pub counts: Option<String>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_tail_prob")]
    pub p_l: f64,
    #[serde(default = "default_tail_prob")]
    pub p_u: f64,
    #[serde(default = "default_cuts")]
    pub cuts: (f64, f64),
    /// Seed for replacing zero losses by uniforms before severity fits.
    #[serde(default)]
    pub zero_replace_seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CalibrateMode {
    /// Price panel: returns, partition, spliced marginals, dependence fits.
    Market,
    /// Counts and losses panels: negative binomial + lognormal marginals,
    /// Gumbel and correlation fits on pseudo-observations.
    FrequencySeverity,
    /// Each column fitted as an inverse Gaussian law.
    ParametricIg,
}

fn default_horizon() -> usize {
    10
}

fn default_tail_prob() -> f64 {
    0.1
}

fn default_cuts() -> (f64, f64) {
    (0.04, 0.08)
}

impl RunConfig {
    /// Parses TOML, falling back to JSON.
    pub fn from_str_any(text: &str) -> Result<Self> {
        match toml::from_str::<RunConfig>(text) {
            Ok(cfg) => Ok(cfg),
            Err(toml_err) => match serde_json::from_str::<RunConfig>(text) {
                Ok(cfg) => Ok(cfg),
                Err(json_err) => Err(Error::Config(format!(
                    "config parses neither as TOML ({toml_err}) nor as JSON ({json_err})"
                ))),
            },
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = Self::from_str_any(&text)?;
        cfg.validate()?;
        // k_star defaults to min(3, K) when left at the default but the
        // candidate set is smaller
        if cfg.saa.k_star > cfg.problem.candidates.len() && !cfg.problem.candidates.is_empty() {
            return Err(Error::Config(format!(
                "saa.k_star = {} exceeds the {} candidates",
                cfg.saa.k_star,
                cfg.problem.candidates.len()
            )));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.problem.p > 0.0 && self.problem.p < 1.0) {
            return Err(Error::Config(format!(
                "problem.p must lie in (0,1), got {}",
                self.problem.p
            )));
        }
        if self.problem.marginals.len() < 2 {
            return Err(Error::Config("need at least two marginals".into()));
        }
        if let Some(is) = &self.importance {
            let d = self.problem.marginals.len();
            if is.tilts.len() != d || is.gaussian_shift.len() != d {
                return Err(Error::Config(
                    "is.tilts and is.gaussian_shift need one entry per marginal".into(),
                ));
            }
        }
        Ok(())
    }

    /// Builds the runnable problem; file references resolve against
    /// `base_dir`.
    pub fn build_problem(&self, base_dir: &Path) -> Result<DMSpec> {
        let d = self.problem.marginals.len();
        let distortions = DistortionSet::new(self.problem.distortions.clone(), d)?;
        let marginals: Result<Vec<Marginal>> = self
            .problem
            .marginals
            .iter()
            .enumerate()
            .map(|(k, m)| build_marginal(m, base_dir, self.seed, k as u64))
            .collect();
        let central = build_copula(&self.problem.central, d, base_dir)?;
        let candidates: Result<Vec<CopulaSpec>> = self
            .problem
            .candidates
            .iter()
            .map(|c| build_copula(c, d, base_dir))
            .collect();
        DMSpec::new(
            distortions,
            central,
            candidates?,
            marginals?,
            self.problem.aggregation.build(),
        )?
        .with_loss_scale(self.problem.loss_scale)
    }

    pub fn build_benchmark_copula(&self, base_dir: &Path) -> Result<CopulaSpec> {
        let d = self.problem.marginals.len();
        match self.benchmark.as_ref().and_then(|b| b.copula.as_ref()) {
            Some(c) => build_copula(c, d, base_dir),
            None => build_copula(&self.problem.central, d, base_dir),
        }
    }
}

fn build_marginal(cfg: &MarginalConfig, base_dir: &Path, seed: u64, index: u64) -> Result<Marginal> {
    Ok(match cfg {
        MarginalConfig::InverseGaussian { mu, lambda } => {
            parametric(DistributionSpec::InverseGaussian { mu: *mu, lambda: *lambda })?
        }
        MarginalConfig::Gpd { shape, scale } => {
            parametric(DistributionSpec::Gpd { shape: *shape, scale: *scale })?
        }
        MarginalConfig::Lognormal { mu, sigma } => {
            parametric(DistributionSpec::Lognormal { mu: *mu, sigma: *sigma })?
        }
        MarginalConfig::NegBinomial { r, p } => {
            parametric(DistributionSpec::NegBinomial { r: *r, p: *p })?
        }
        MarginalConfig::Normal { mu, sigma } => {
            parametric(DistributionSpec::Normal { mu: *mu, sigma: *sigma })?
        }
        MarginalConfig::StudentT { nu } => parametric(DistributionSpec::StudentT { nu: *nu })?,
        MarginalConfig::Gamma { shape, scale } => {
            parametric(DistributionSpec::Gamma { shape: *shape, scale: *scale })?
        }
        MarginalConfig::ChiSquare { nu } => parametric(DistributionSpec::ChiSquare { nu: *nu })?,
        MarginalConfig::Uniform { a, b } => {
            parametric(DistributionSpec::Uniform { a: *a, b: *b })?
        }
        MarginalConfig::Spliced {
            p_l,
            p_u,
            lower_shape,
            lower_scale,
            upper_shape,
            upper_scale,
            center,
            center_file,
        } => {
            let center = match (center, center_file) {
                (Some(values), None) => values.clone(),
                (None, Some(file)) => read_column(&base_dir.join(file))?,
                _ => {
                    return Err(Error::Config(
                        "spliced marginal needs exactly one of center / center_file".into(),
                    ))
                }
            };
            Marginal::Spliced(SplicedMarginal::new(
                *p_l,
                *p_u,
                GpdTail { shape: *lower_shape, scale: *lower_scale },
                GpdTail { shape: *upper_shape, scale: *upper_scale },
                center,
            )?)
        }
        MarginalConfig::SplicedSmooth {
            p_l,
            p_u,
            x_l,
            x_u,
            lower_shape,
            lower_scale,
            upper_shape,
            upper_scale,
            center_points,
        } => {
            let center =
                calib::smooth_center(*p_l, *p_u, *x_l, *x_u, *lower_scale, *upper_scale, *center_points)?;
            Marginal::Spliced(SplicedMarginal::new(
                *p_l,
                *p_u,
                GpdTail { shape: *lower_shape, scale: *lower_scale },
                GpdTail { shape: *upper_shape, scale: *upper_scale },
                center,
            )?)
        }
        MarginalConfig::Compound { r, p, mu, sigma, table_size } => {
            Marginal::Compound(CompoundMarginal::new(
                FrequencySpec { r: *r, p: *p },
                SeveritySpec { mu: *mu, sigma: *sigma },
                *table_size,
                seed,
                index,
            )?)
        }
    })
}

fn parametric(spec: DistributionSpec) -> Result<Marginal> {
    spec.validate()?;
    Ok(Marginal::Parametric(spec))
}

fn build_copula(cfg: &CopulaConfig, d: usize, base_dir: &Path) -> Result<CopulaSpec> {
    let load = |inline: &Option<Vec<Vec<f64>>>, file: &Option<String>| -> Result<CorrelationMatrix> {
        let entries = match (inline, file) {
            (Some(m), None) => m.clone(),
            (None, Some(f)) => read_matrix(&base_dir.join(f))?,
            _ => {
                return Err(Error::Config(
                    "copula needs exactly one of correlation / correlation_file".into(),
                ))
            }
        };
        // calibrated matrices are printed to few decimals; repair rounding
        CorrelationMatrix::new_repaired(entries)
    };
    let spec = match cfg {
        CopulaConfig::Gaussian { correlation, correlation_file } => {
            CopulaSpec::Gaussian { correlation: load(correlation, correlation_file)? }
        }
        CopulaConfig::StudentT { nu, correlation, correlation_file } => CopulaSpec::StudentT {
            nu: *nu,
            correlation: load(correlation, correlation_file)?,
        },
        CopulaConfig::GroupedT { nus, groups, correlation, correlation_file } => {
            let zero_based: Vec<Vec<usize>> = groups
                .iter()
                .map(|g| {
                    g.iter()
                        .map(|&i| {
                            i.checked_sub(1).ok_or_else(|| {
                                Error::Config("group indices are 1-based".into())
                            })
                        })
                        .collect::<Result<Vec<usize>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            CopulaSpec::GroupedT {
                partition: GroupPartition::new(zero_based, d)?,
                nus: nus.clone(),
                correlation: load(correlation, correlation_file)?,
            }
        }
        CopulaConfig::Clayton { theta } => CopulaSpec::Clayton { theta: *theta, dim: d },
        CopulaConfig::Gumbel { theta } => CopulaSpec::Gumbel { theta: *theta, dim: d },
        CopulaConfig::Frank { theta } => CopulaSpec::Frank { theta: *theta, dim: d },
        CopulaConfig::Independence {} => CopulaSpec::Independence { dim: d },
    };
    if spec.dim() != d {
        return Err(Error::Config(format!(
            "copula dimension {} does not match the {} marginals",
            spec.dim(),
            d
        )));
    }
    spec.validate()?;
    Ok(spec)
}

/// Reads a headerless numeric CSV matrix.
pub fn read_matrix(path: &PathBuf) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        out.push(row.map_err(|e| {
            Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?);
    }
    if out.is_empty() {
        return Err(Error::Config(format!("{} holds no rows", path.display())));
    }
    Ok(out)
}

/// Reads a headerless one-column CSV.
pub fn read_column(path: &PathBuf) -> Result<Vec<f64>> {
    Ok(read_matrix(path)?.into_iter().map(|row| row[0]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[problem]
p = 0.95
aggregation = { kind = "sum" }
distortions = { family = "rational", alpha = 0.1 }
central = { kind = "gaussian", correlation = [[1.0, 0.7], [0.7, 1.0]] }

[[problem.marginals]]
kind = "inverse_gaussian"
mu = 1.0
lambda = 0.5

[[problem.marginals]]
kind = "inverse_gaussian"
mu = 1.0
lambda = 1.2

[[problem.candidates]]
kind = "gumbel"
theta = 1.7095

[[problem.candidates]]
kind = "independence"
"#;

    #[test]
    fn minimal_config_builds() {
        let cfg = RunConfig::from_str_any(MINIMAL).unwrap();
        cfg.validate().unwrap();
        let spec = cfg.build_problem(Path::new(".")).unwrap();
        assert_eq!(spec.dim(), 2);
        assert_eq!(spec.num_candidates(), 2);
        assert_eq!(spec.num_slots(), 2);
        assert_eq!(cfg.sa.t_min, 10);
        assert_eq!(cfg.sa.t_max, 50);
        assert_eq!(cfg.sa.threshold, 0.01);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("seed = 7", "seed = 7\nbogus_key = 1");
        assert!(RunConfig::from_str_any(&bad).is_err());
        let bad_nested = MINIMAL.replace("p = 0.95", "p = 0.95\nmystery = true");
        assert!(RunConfig::from_str_any(&bad_nested).is_err());
    }

    #[test]
    fn json_accepted() {
        let cfg = RunConfig::from_str_any(MINIMAL).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::from_str_any(&json).unwrap();
        assert_eq!(back.seed, 7);
        assert_eq!(back.problem.candidates.len(), 2);
    }

    #[test]
    fn bad_level_rejected() {
        let bad = MINIMAL.replace("p = 0.95", "p = 1.5");
        let cfg = RunConfig::from_str_any(&bad).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn smooth_center_marginal_builds() {
        let toml = r#"
seed = 1
[problem]
p = 0.95
aggregation = { kind = "sum_shifted", shift = 1.0 }
distortions = { family = "piecewise", weights = [0.92, 0.04, 0.04] }
central = { kind = "gaussian", correlation = [[1.0, 0.5], [0.5, 1.0]] }

[[problem.marginals]]
kind = "spliced_smooth"
p_l = 0.1
p_u = 0.1
x_l = -1.0350
x_u = -0.9665
lower_shape = 0.1860
lower_scale = 0.0139
upper_shape = 0.2060
upper_scale = 0.0221

[[problem.marginals]]
kind = "normal"
mu = 0.0
sigma = 1.0

[[problem.candidates]]
kind = "clayton"
theta = 0.5
"#;
        let cfg = RunConfig::from_str_any(toml).unwrap();
        let spec = cfg.build_problem(Path::new(".")).unwrap();
        let q = spec.marginals[0].quantile(0.1).unwrap();
        assert!((q - -1.0350).abs() < 1e-12);
    }
}
