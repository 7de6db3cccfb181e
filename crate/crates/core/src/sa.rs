//! Projected stochastic gradient stage: empirical VaR/AV@R, the
//! likelihood-ratio gradient of AV@R in the mixture weights, Euclidean
//! simplex projection, the ascent loop with its stopping rule, and the
//! candidate-selection procedure used to shrink the problem before the
//! sample-average stage.

use crate::density::{DensityTable, fit_kde_with};
use crate::dm::{ComponentSampleBank, DMSpec, GammaMatrix};
use crate::error::{Error, Result};
use crate::rng::StreamRole;
use crate::stats;

/// Configuration of the stochastic approximation stage.
#[derive(Debug, Clone)]
pub struct SaConfig {
    /// AV@R level.
    pub p: f64,
    /// Step-size exponent `a`; the step at iteration t is `t^-a`.
    pub step_exponent: f64,
    /// Loss sample size per iteration.
    pub sample_size: usize,
    /// Burn-in before the stopping rule applies.
    pub t_min: usize,
    /// Hard iteration cap.
    pub t_max: usize,
    /// 1-norm threshold on consecutive weight matrices.
    pub threshold: f64,
    pub seed: u64,
}

impl SaConfig {
    pub fn new(p: f64, seed: u64) -> Self {
        SaConfig {
            p,
            step_exponent: 0.6,
            sample_size: 100_000,
            t_min: 10,
            t_max: 50,
            threshold: 0.01,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Domain(format!("AV@R level must lie in (0,1), got {}", self.p)));
        }
        if !(self.step_exponent > 0.5 && self.step_exponent <= 1.0) {
            return Err(Error::Domain(format!(
                "step exponent must lie in (0.5, 1], got {}",
                self.step_exponent
            )));
        }
        if self.t_min < 1 || self.t_max < self.t_min {
            return Err(Error::Domain("need 1 <= t_min <= t_max".into()));
        }
        if self.sample_size < 2 {
            return Err(Error::Domain("per-iteration sample size too small".into()));
        }
        Ok(())
    }
}

/// One recorded SA iteration: the iterate, its risk estimates and gradient.
#[derive(Debug, Clone)]
pub struct SaIteration {
    pub t: usize,
    pub gamma: GammaMatrix,
    pub var: f64,
    pub avar: f64,
    /// Gradient rows by tail slot: `gradient[i-1][j]`.
    pub gradient: Vec<Vec<f64>>,
}

/// Full trace of one SA run.
#[derive(Debug, Clone)]
pub struct SaTrace {
    pub iterations: Vec<SaIteration>,
    pub t_star: usize,
}

impl SaTrace {
    pub fn final_iteration(&self) -> &SaIteration {
        self.iterations.last().expect("trace never empty")
    }

    /// Sample standard deviation of the AV@R estimates over the last (up to)
    /// ten iterations.
    pub fn avar_sd_last10(&self) -> f64 {
        let n = self.iterations.len();
        let tail: Vec<f64> = self.iterations[n.saturating_sub(10)..]
            .iter()
            .map(|it| it.avar)
            .collect();
        if tail.len() < 2 {
            0.0
        } else {
            stats::std_dev(&tail)
        }
    }
}

/// Empirical VaR and AV@R of a loss sample.
///
/// The VaR is the `ceil(N p)`-th order statistic and the AV@R adds the mean
/// excess above it scaled by `1/(N(1-p))`.
pub fn empirical_var_avar(losses: &[f64], p: f64) -> Result<(f64, f64)> {
    if losses.is_empty() {
        return Err(Error::Domain("empty loss sample".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("level must lie in (0,1), got {p}")));
    }
    let n = losses.len();
    let rank = (n as f64 * p).ceil() as usize; // 1-based
    let mut work = losses.to_vec();
    let (_, var, _) = work.select_nth_unstable_by(rank - 1, f64::total_cmp);
    let var = *var;
    let excess: f64 = losses.iter().map(|&l| (l - var).max(0.0)).sum();
    let avar = var + excess / (n as f64 * (1.0 - p));
    Ok((var, avar))
}

/// Kernel density tables for every component of the mixture.
#[derive(Debug, Clone)]
pub struct DensityBank {
    g0: DensityTable,
    g: Vec<DensityTable>,
    m: usize,
    k: usize,
}

impl DensityBank {
    /// Fits one table per component of the sample bank.
    pub fn fit(
        bank: &ComponentSampleBank,
        grid_points: usize,
        bandwidth: Option<f64>,
    ) -> Result<Self> {
        let g0 = fit_kde_with(bank.central(), grid_points, bandwidth)?;
        let mut g = Vec::with_capacity(bank.m() * bank.k());
        for i in 1..=bank.m() {
            for j in 0..bank.k() {
                g.push(fit_kde_with(bank.component(i, j), grid_points, bandwidth)?);
            }
        }
        Ok(DensityBank { g0, g, m: bank.m(), k: bank.k() })
    }

    /// Builds a bank from already fitted tables (tests, importance layers).
    pub fn from_tables(g0: DensityTable, g: Vec<DensityTable>, m: usize, k: usize) -> Result<Self> {
        if g.len() != m * k {
            return Err(Error::Domain("need one table per (slot, candidate) pair".into()));
        }
        Ok(DensityBank { g0, g, m, k })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn central(&self) -> &DensityTable {
        &self.g0
    }

    /// Table for tail slot `i` (1-based) and candidate column `j` (0-based).
    pub fn component(&self, i: usize, j: usize) -> &DensityTable {
        &self.g[(i - 1) * self.k + j]
    }

    /// Mixture density `alpha_0 g_0 + sum alpha_i gamma_j^i g_ij` at `x`.
    pub fn mixture_density(&self, gamma: &GammaMatrix, alphas: &[f64], x: f64) -> f64 {
        let mut acc = alphas[0] * self.g0.eval(x);
        for i in 1..=self.m {
            let col = gamma.column(i);
            let mut slot = 0.0;
            for j in 0..self.k {
                slot += col[j] * self.component(i, j).eval(x);
            }
            acc += alphas[i] * slot;
        }
        acc
    }
}

/// Likelihood-ratio gradient of the empirical AV@R in the mixture weights:
/// `grad[i-1][j] = 1/(N(1-p)) sum_l alpha_i g_ij(L_l)/f(L_l) (L_l - var)^+`.
pub fn lr_gradient(
    losses: &[f64],
    var: f64,
    densities: &DensityBank,
    gamma: &GammaMatrix,
    alphas: &[f64],
    p: f64,
) -> Result<Vec<Vec<f64>>> {
    let (m, k) = (densities.m, densities.k);
    if gamma.m() != m || gamma.k() != k {
        return Err(Error::Domain("gamma matrix does not match the density bank".into()));
    }
    if alphas.len() != m + 1 {
        return Err(Error::Domain("need one alpha per component".into()));
    }
    let mut grad = vec![vec![0.0; k]; m];
    for &l in losses {
        if l < var {
            continue;
        }
        let f = densities.mixture_density(gamma, alphas, l);
        let excess = l - var;
        for i in 1..=m {
            for j in 0..k {
                grad[i - 1][j] += alphas[i] * densities.component(i, j).eval(l) / f * excess;
            }
        }
    }
    let scale = 1.0 / (losses.len() as f64 * (1.0 - p));
    for row in grad.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok(grad)
}

/// Euclidean projection onto the standard simplex.
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let k = y.len();
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut lambda = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        acc += u;
        let candidate = (1.0 - acc) / (j + 1) as f64;
        if u + candidate > 0.0 {
            lambda = candidate;
        }
    }
    let mut out: Vec<f64> = y.iter().map(|&v| (v + lambda).max(0.0)).collect();
    // renormalize away accumulated rounding so downstream simplex checks hold
    let total: f64 = out.iter().sum();
    if total > 0.0 && (total - 1.0).abs() > 1e-15 {
        for v in out.iter_mut() {
            *v /= total;
        }
    }
    let _ = k;
    out
}

/// Runs the projected stochastic gradient ascent.
///
/// Each iteration draws a fresh loss sample under the current weights,
/// estimates VaR/AV@R and the LR gradient from the fixed density tables, and
/// projects the ascent step column by column. The loop stops at the first
/// `t >= t_min` whose iterate moved less than `threshold` in 1-norm from its
/// predecessor, or at `t_max`.
pub fn sa_solve(
    spec: &DMSpec,
    cfg: &SaConfig,
    gamma_init: GammaMatrix,
    densities: &DensityBank,
) -> Result<SaTrace> {
    cfg.validate()?;
    if densities.m != spec.num_slots() || densities.k != spec.num_candidates() {
        return Err(Error::State(
            "density tables do not match the problem dimensions; fit them from the \
             component bank first"
                .into(),
        ));
    }
    let alphas = spec.alphas();
    let mut gamma = gamma_init;
    let mut previous: Option<GammaMatrix> = None;
    let mut iterations = Vec::new();
    let mut t_star = cfg.t_max;
    for t in 1..=cfg.t_max {
        let losses =
            spec.sample_losses(&gamma, cfg.sample_size, cfg.seed, StreamRole::SaIteration, t as u64)?;
        let (var, avar) = empirical_var_avar(&losses, cfg.p)?;
        let gradient = lr_gradient(&losses, var, densities, &gamma, &alphas, cfg.p)?;
        iterations.push(SaIteration { t, gamma: gamma.clone(), var, avar, gradient: gradient.clone() });

        if let Some(prev) = &previous {
            if t >= cfg.t_min && gamma.l1_distance(prev) < cfg.threshold {
                t_star = t;
                break;
            }
        }
        if t == cfg.t_max {
            t_star = t;
            break;
        }
        let step = (t as f64).powf(-cfg.step_exponent);
        let mut next = gamma.clone();
        for i in 1..=gamma.m() {
            let col: Vec<f64> = gamma
                .column(i)
                .iter()
                .zip(&gradient[i - 1])
                .map(|(&g, &d)| g + step * d)
                .collect();
            next.set_column(i, project_simplex(&col));
        }
        previous = Some(std::mem::replace(&mut gamma, next));
    }
    Ok(SaTrace { iterations, t_star })
}

/// Iterative row/column elimination that picks `k_star` candidates from the
/// final weight matrix.
///
/// The largest entry wins its candidate a slot; its row and column leave the
/// matrix. Once every column is used the columns are restored (minus the
/// already selected rows) and the sweep continues. Ties go to the larger
/// gradient entry, then to the larger remaining row mass.
pub fn select_copulas(
    gamma: &GammaMatrix,
    gradient: &[Vec<f64>],
    alphas: &[f64],
    k_star: usize,
) -> Result<Vec<usize>> {
    let (k, m) = (gamma.k(), gamma.m());
    if k_star == 0 || k_star > k {
        return Err(Error::Domain(format!(
            "cannot select {k_star} candidates out of {k}"
        )));
    }
    if gradient.len() != m || gradient.iter().any(|row| row.len() != k) {
        return Err(Error::Domain("gradient matrix does not match gamma".into()));
    }
    let tail = &alphas[1..];
    if tail.len() != m {
        return Err(Error::Domain("need one tail weight per slot".into()));
    }
    if tail.iter().any(|&a| (a - tail[0]).abs() > 1e-9) {
        return Err(Error::Domain(
            "candidate selection assumes equal tail weights alpha_1 = ... = alpha_m".into(),
        ));
    }

    let mut selected: Vec<usize> = Vec::with_capacity(k_star);
    let mut row_active = vec![true; k];
    let mut col_active = vec![true; m];
    while selected.len() < k_star {
        if col_active.iter().all(|&c| !c) {
            // all slots used: restore the columns, keep selected rows out
            for c in col_active.iter_mut() {
                *c = true;
            }
        }
        let mut best: Option<(usize, usize)> = None;
        for j in 0..k {
            if !row_active[j] {
                continue;
            }
            for i in 1..=m {
                if !col_active[i - 1] {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bj, bi)) => {
                        let cur = gamma.entry(j, i);
                        let inc = gamma.entry(bj, bi);
                        if cur != inc {
                            cur > inc
                        } else {
                            let cur_g = gradient[i - 1][j];
                            let inc_g = gradient[bi - 1][bj];
                            if cur_g != inc_g {
                                cur_g > inc_g
                            } else {
                                row_mass(gamma, &col_active, j) > row_mass(gamma, &col_active, bj)
                            }
                        }
                    }
                };
                if better {
                    best = Some((j, i));
                }
            }
        }
        let (j, i) = best.expect("active entry exists");
        selected.push(j);
        row_active[j] = false;
        col_active[i - 1] = false;
    }
    Ok(selected)
}

fn row_mass(gamma: &GammaMatrix, col_active: &[bool], j: usize) -> f64 {
    (1..=gamma.m())
        .filter(|&i| col_active[i - 1])
        .map(|i| gamma.entry(j, i))
        .sum()
}
