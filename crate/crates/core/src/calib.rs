//! Calibration pipeline: price-panel ingestion, return transformation,
//! tail/center partitioning, GPD tail fits, spliced-marginal assembly,
//! rank-correlation machinery and the parametric fits used by the case
//! studies.

use crate::copula::{gumbel_log_density, t_copula_log_density, CorrelationMatrix};
use crate::dist::compound::{FrequencySpec, SeveritySpec};
use crate::dist::spliced::{GpdTail, SplicedMarginal};
use crate::dm::Aggregation;
use crate::error::{Error, Result};
use crate::stats;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};
use statrs::function::gamma::ln_gamma;
use std::io::Read;

/// A rectangular panel of observations with column labels and a date index.
#[derive(Debug, Clone)]
pub struct PanelData {
    pub labels: Vec<String>,
    pub dates: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl PanelData {
    pub fn new(labels: Vec<String>, dates: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Domain("panel needs at least two series".into()));
        }
        if rows.len() != dates.len() {
            return Err(Error::Domain("one date per row required".into()));
        }
        if rows.iter().any(|r| r.len() != labels.len()) {
            return Err(Error::Domain("ragged panel rows".into()));
        }
        Ok(PanelData { labels, dates, rows })
    }

    /// Reads a CSV with a header row; the first column is the date index.
    /// Rows with unparsable or missing cells are dropped.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Config(format!("csv header unreadable: {e}")))?
            .clone();
        if headers.len() < 3 {
            return Err(Error::Config("panel csv needs a date column and two series".into()));
        }
        let labels: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
        let mut dates = Vec::new();
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| Error::Config(format!("csv row unreadable: {e}")))?;
            if record.len() != headers.len() {
                continue;
            }
            let parsed: Option<Vec<f64>> =
                record.iter().skip(1).map(|s| s.trim().parse::<f64>().ok()).collect();
            if let Some(values) = parsed {
                dates.push(record[0].to_string());
                rows.push(values);
            }
        }
        PanelData::new(labels, dates, rows)
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[i]).collect()
    }
}

/// Negated price relatives over a holding horizon:
/// `x_{i,t} = -Price_{i,t+horizon} / Price_{i,t}`.
pub fn returns_transform(prices: &PanelData, horizon: usize) -> Result<PanelData> {
    if prices.len() <= horizon {
        return Err(Error::Domain(format!(
            "panel has {} rows, need more than the horizon {horizon}",
            prices.len()
        )));
    }
    for row in &prices.rows {
        if row.iter().any(|&p| p <= 0.0) {
            return Err(Error::Domain("prices must be strictly positive".into()));
        }
    }
    let d = prices.dim();
    let out_len = prices.len() - horizon;
    let rows: Vec<Vec<f64>> = (0..out_len)
        .map(|t| (0..d).map(|i| -prices.rows[t + horizon][i] / prices.rows[t][i]).collect())
        .collect();
    PanelData::new(
        prices.labels.clone(),
        prices.dates[..out_len].to_vec(),
        rows,
    )
}

/// Splits row indices into (extreme, upper, center) by aggregate loss.
///
/// Rows are ranked by aggregate loss descending with ties broken by row
/// index; the top `cuts.0` fraction is extreme, the next up to `cuts.1` is
/// upper, the rest is center.
pub fn partition_by_aggregate(
    x: &PanelData,
    aggregation: &Aggregation,
    cuts: (f64, f64),
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if !(cuts.0 >= 0.0 && cuts.1 >= cuts.0 && cuts.1 < 1.0) {
        return Err(Error::Domain(format!("cut fractions {cuts:?} must be ordered in [0,1)")));
    }
    let d = x.len();
    let mut order: Vec<usize> = (0..d).collect();
    let losses: Vec<f64> = x.rows.iter().map(|r| aggregation.apply(r)).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    let n_extreme = (cuts.0 * d as f64).floor() as usize;
    let n_upper = (cuts.1 * d as f64).floor() as usize;
    let extreme = order[..n_extreme].to_vec();
    let upper = order[n_extreme..n_upper].to_vec();
    let center = order[n_upper..].to_vec();
    Ok((extreme, upper, center))
}

/// Maximum likelihood GPD fit with asymptotic standard errors.
#[derive(Debug, Clone, Copy)]
pub struct GpdFit {
    pub shape: f64,
    pub scale: f64,
    pub shape_se: f64,
    pub scale_se: f64,
}

/// Fits a GPD to positive excesses by profiling the likelihood over
/// `tau = shape/scale`, with the shape constrained to (-0.5, 1).
pub fn fit_gpd_mle(excesses: &[f64]) -> Result<GpdFit> {
    let xs: Vec<f64> = excesses.iter().cloned().filter(|&x| x > 0.0).collect();
    if xs.len() < 30 {
        return Err(Error::Domain(format!(
            "GPD fit needs at least 30 positive excesses, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let max_x = xs.iter().cloned().fold(0.0, f64::max);
    let mean_x = stats::mean(&xs);

    // profile log-likelihood of tau; shape and scale follow analytically
    let profile = |tau: f64| -> Option<(f64, f64, f64)> {
        if tau == 0.0 {
            // exponential restriction
            return Some((-n * (mean_x.ln() + 1.0), 0.0, mean_x));
        }
        if tau <= -1.0 / max_x {
            return None;
        }
        let shape = xs.iter().map(|&x| (1.0 + tau * x).ln()).sum::<f64>() / n;
        if !(shape > -0.5 && shape < 1.0) {
            return None;
        }
        let scale = shape / tau;
        if !(scale > 0.0) {
            return None;
        }
        let ll = -n * (scale.ln() + shape + 1.0);
        ll.is_finite().then_some((ll, shape, scale))
    };

    // coarse scan over a signed geometric tau grid, then golden refinement
    let mut grid = vec![0.0f64];
    let base = 1.0 / mean_x;
    for k in -80..=80 {
        let magnitude = base * 10f64.powf(k as f64 / 20.0);
        grid.push(magnitude);
        if magnitude < 1.0 / max_x {
            grid.push(-magnitude);
        }
    }
    let mut best: Option<(f64, f64)> = None; // (ll, tau)
    for &tau in &grid {
        if let Some((ll, _, _)) = profile(tau) {
            if best.map_or(true, |(b, _)| ll > b) {
                best = Some((ll, tau));
            }
        }
    }
    let (_, tau0) = best.ok_or_else(|| {
        Error::Numeric(format!(
            "GPD likelihood has no admissible point (n={}, mean={mean_x:.4}, max={max_x:.4})",
            xs.len()
        ))
    })?;
    let mut lo = tau0 - base * 0.5;
    let mut hi = tau0 + base * 0.5;
    let obj = |tau: f64| profile(tau).map(|(ll, _, _)| ll).unwrap_or(f64::NEG_INFINITY);
    for _ in 0..120 {
        let m1 = lo + (hi - lo) * 0.381966;
        let m2 = hi - (hi - lo) * 0.381966;
        if obj(m1) < obj(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let tau = 0.5 * (lo + hi);
    let (_, shape, scale) = profile(tau).or_else(|| profile(tau0)).ok_or_else(|| {
        Error::Numeric("GPD profile refinement left the admissible region".into())
    })?;
    let shape_se = ((1.0 + shape) * (1.0 + shape) / n).sqrt();
    let scale_se = (2.0 * scale * scale * (1.0 + shape) / n).sqrt();
    Ok(GpdFit { shape, scale, shape_se, scale_se })
}

/// Exponential-restricted fit (`shape = 0`): the scale MLE is the mean.
pub fn fit_gpd_exponential(excesses: &[f64]) -> Result<f64> {
    let xs: Vec<f64> = excesses.iter().cloned().filter(|&x| x > 0.0).collect();
    if xs.is_empty() {
        return Err(Error::Domain("no positive excesses".into()));
    }
    Ok(stats::mean(&xs))
}

/// Builds the three-piece marginal from one data column: boundary order
/// statistics at the tail probabilities, GPD fits to the excesses, and the
/// sorted center between the boundaries.
pub fn build_spliced(column: &[f64], p_l: f64, p_u: f64) -> Result<SplicedMarginal> {
    if column.len() < 100 {
        return Err(Error::Domain("spliced fit needs at least 100 observations".into()));
    }
    let d = column.len();
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t_l = (d as f64 * p_l).floor() as usize; // 1-based order statistic
    let t_u = (d as f64 * (1.0 - p_u)).ceil() as usize;
    if t_l < 31 || t_u + 30 > d || t_l >= t_u {
        return Err(Error::Domain("tail probabilities leave too few tail observations".into()));
    }
    let x_l = sorted[t_l - 1];
    let x_u = sorted[t_u - 1];
    let lower_excesses: Vec<f64> = sorted[..t_l - 1].iter().map(|&v| x_l - v).collect();
    let upper_excesses: Vec<f64> = sorted[t_u..].iter().map(|&v| v - x_u).collect();
    let lower = fit_gpd_mle(&lower_excesses)?;
    let upper = fit_gpd_mle(&upper_excesses)?;
    SplicedMarginal::new(
        p_l,
        p_u,
        GpdTail { shape: lower.shape, scale: lower.scale },
        GpdTail { shape: upper.shape, scale: upper.scale },
        sorted[t_l - 1..t_u].to_vec(),
    )
}

/// Pairwise Kendall's tau over panel columns.
pub fn kendall_tau_matrix(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if rows.len() < 2 {
        return Err(Error::Domain("need at least two rows".into()));
    }
    let d = rows[0].len();
    let columns: Vec<Vec<f64>> = (0..d).map(|i| rows.iter().map(|r| r[i]).collect()).collect();
    for (i, col) in columns.iter().enumerate() {
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
        if lo == hi {
            return Err(Error::Domain(format!("column {i} is constant")));
        }
    }
    let pairs: Vec<(usize, usize)> =
        (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect();
    let taus: Vec<((usize, usize), f64)> = pairs
        .par_iter()
        .map(|&(i, j)| ((i, j), stats::kendall_tau(&columns[i], &columns[j])))
        .collect();
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        out[i][i] = 1.0;
    }
    for ((i, j), tau) in taus {
        out[i][j] = tau;
        out[j][i] = tau;
    }
    Ok(out)
}

/// Maps Kendall's tau to the Gaussian-scale correlation `sin(pi tau / 2)`.
pub fn tau_to_rho(tau: f64) -> f64 {
    (std::f64::consts::FRAC_PI_2 * tau).sin()
}

/// Elementwise tau-to-rho with positive semidefinite repair.
pub fn tau_matrix_to_correlation(tau: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    let rho: Vec<Vec<f64>> = tau
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &t)| if i == j { 1.0 } else { tau_to_rho(t) })
                .collect()
        })
        .collect();
    CorrelationMatrix::new_repaired(rho)
}

/// Result of a one-dimensional profile fit with a boundary indicator.
#[derive(Debug, Clone, Copy)]
pub struct ProfileFit {
    pub value: f64,
    pub log_likelihood: f64,
    pub at_boundary: bool,
}

/// Profile maximum likelihood for the t-copula degrees of freedom given a
/// fixed correlation matrix, searched over `nu` in `[0.5, 200]`.
pub fn fit_t_nu_profile(pseudo: &[Vec<f64>], corr: &CorrelationMatrix) -> Result<ProfileFit> {
    if pseudo.is_empty() {
        return Err(Error::Domain("no observations".into()));
    }
    let ll = |nu: f64| -> f64 {
        pseudo
            .iter()
            .map(|u| t_copula_log_density(nu, corr, u).unwrap_or(f64::NEG_INFINITY))
            .sum()
    };
    let (lo, hi) = (0.5f64, 200.0f64);
    let fit = golden_max(|x| ll(x.exp()), lo.ln(), hi.ln(), 90);
    if !fit.1.is_finite() {
        return Err(Error::Numeric("t-copula likelihood not finite anywhere".into()));
    }
    let nu = fit.0.exp();
    let at_boundary = nu < lo * 1.05 || nu > hi * 0.95;
    Ok(ProfileFit { value: nu, log_likelihood: fit.1, at_boundary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GumbelFitMethod {
    Mle,
    CramerVonMises,
}

/// Fits the exchangeable Gumbel parameter on pseudo-observations, either by
/// maximum likelihood or by minimizing the Cramer-von Mises distance to the
/// empirical copula, over `theta` in `[1, 50]`.
pub fn fit_gumbel(pseudo: &[Vec<f64>], method: GumbelFitMethod) -> Result<ProfileFit> {
    if pseudo.len() < 2 {
        return Err(Error::Domain("need at least two observations".into()));
    }
    let (lo, hi) = (1.0f64, 50.0f64);
    let objective: Box<dyn Fn(f64) -> f64> = match method {
        GumbelFitMethod::Mle => Box::new(|theta: f64| {
            pseudo
                .iter()
                .map(|u| gumbel_log_density(theta, u).unwrap_or(f64::NEG_INFINITY))
                .sum()
        }),
        GumbelFitMethod::CramerVonMises => {
            let n = pseudo.len();
            let empirical: Vec<f64> = pseudo
                .iter()
                .map(|point| {
                    pseudo
                        .iter()
                        .filter(|other| other.iter().zip(point.iter()).all(|(a, b)| a <= b))
                        .count() as f64
                        / n as f64
                })
                .collect();
            Box::new(move |theta: f64| {
                let gum = crate::copula::CopulaSpec::Gumbel { theta, dim: pseudo[0].len() };
                -pseudo
                    .iter()
                    .zip(&empirical)
                    .map(|(u, &emp)| {
                        let c = gum.archimedean_cdf(u).unwrap_or(f64::NAN);
                        (c - emp) * (c - emp)
                    })
                    .sum::<f64>()
            })
        }
    };
    let fit = golden_max(|x| objective(x), lo, hi, 90);
    if !fit.1.is_finite() {
        return Err(Error::Numeric("Gumbel objective not finite anywhere".into()));
    }
    let at_boundary = fit.0 < lo + 1e-3 || fit.0 > hi - 1e-3;
    Ok(ProfileFit { value: fit.0, log_likelihood: fit.1, at_boundary })
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, iterations: usize) -> (f64, f64) {
    const R: f64 = 0.381_966_011_250_105;
    // coarse scan guards against multimodality before the golden section
    let mut best = (lo, f(lo));
    for k in 0..=40 {
        let x = lo + (hi - lo) * k as f64 / 40.0;
        let y = f(x);
        if y > best.1 {
            best = (x, y);
        }
    }
    let width = (hi - lo) / 40.0;
    lo = (best.0 - width).max(lo);
    hi = (best.0 + width).min(hi);
    for _ in 0..iterations {
        let m1 = lo + (hi - lo) * R;
        let m2 = hi - (hi - lo) * R;
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Negative binomial MLE (profile over `r`) and lognormal moment fit for the
/// frequency/severity records.
pub fn fit_frequency_severity(
    counts: &[u64],
    losses: &[f64],
) -> Result<(FrequencySpec, SeveritySpec)> {
    if counts.is_empty() || counts.iter().all(|&c| c == 0) {
        return Err(Error::Domain("frequency fit needs nonzero counts".into()));
    }
    if losses.len() < 2 || losses.iter().any(|&l| l <= 0.0) {
        return Err(Error::Domain("severity fit needs at least two positive losses".into()));
    }
    let n = counts.len() as f64;
    let mean_c = counts.iter().sum::<u64>() as f64 / n;
    let profile = |r: f64| -> f64 {
        let p = r / (r + mean_c);
        counts
            .iter()
            .map(|&x| ln_gamma(x as f64 + r) - ln_gamma(r) + r * p.ln() + x as f64 * (1.0 - p).ln())
            .sum()
    };
    let fit = golden_max(|x| profile(x.exp()), (1e-3f64).ln(), (1e4f64).ln(), 90);
    let r = fit.0.exp();
    let p = r / (r + mean_c);

    let logs: Vec<f64> = losses.iter().map(|&l| l.ln()).collect();
    let mu = stats::mean(&logs);
    let sigma = stats::std_dev(&logs);
    Ok((FrequencySpec { r, p }, SeveritySpec { mu, sigma }))
}

/// Ranks scaled by `n + 1`, the standard margin-free transform before a
/// copula fit. Ties receive average ranks.
pub fn pseudo_observations(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    let mut out = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| rows[a][j].total_cmp(&rows[b][j]));
        let mut i = 0;
        while i < n {
            let mut k = i + 1;
            while k < n && rows[idx[k]][j] == rows[idx[i]][j] {
                k += 1;
            }
            let avg_rank = (i + 1 + k) as f64 / 2.0; // average of 1-based ranks
            for &row in &idx[i..k] {
                out[row][j] = avg_rank / (n as f64 + 1.0);
            }
            i = k;
        }
    }
    out
}

/// Smooth center for a spliced marginal when only the boundary and tail
/// parameters are available: the truncated normal on `[x_l, x_u]` whose
/// density is continuous with both GPD tails at the boundaries, sampled at
/// `points` equally spaced quantile levels.
pub fn smooth_center(
    p_l: f64,
    p_u: f64,
    x_l: f64,
    x_u: f64,
    scale_l: f64,
    scale_u: f64,
    points: usize,
) -> Result<Vec<f64>> {
    if !(x_l < x_u && p_l > 0.0 && p_u > 0.0 && p_l + p_u < 1.0) {
        return Err(Error::Domain("inconsistent spliced parameters".into()));
    }
    if points < 3 {
        return Err(Error::Domain("need at least three center points".into()));
    }
    let center_mass = 1.0 - p_l - p_u;
    let target_l = p_l / (scale_l * center_mass);
    let target_u = p_u / (scale_u * center_mass);
    let width = x_u - x_l;
    let norm = NormalDist::new(0.0, 1.0).unwrap();

    // density of the corridor-truncated normal at the lower boundary, with
    // the location already pinned by the boundary density ratio
    let log_ratio = (target_l / target_u).ln();
    let density_l = |sigma: f64| -> f64 {
        let mu = 0.5 * (x_l + x_u) - sigma * sigma * log_ratio / width;
        let a = (x_l - mu) / sigma;
        let b = (x_u - mu) / sigma;
        let z = norm.cdf(b) - norm.cdf(a);
        if z <= 0.0 {
            return f64::NAN;
        }
        (-0.5 * a * a).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt() * z)
    };

    // bracket the boundary-density equation over a geometric sigma grid
    let mut solution = None;
    let mut prev: Option<(f64, f64)> = None;
    for k in 0..=600 {
        let sigma = width * 10f64.powf(-2.0 + 4.0 * k as f64 / 600.0);
        let val = density_l(sigma) - target_l;
        if !val.is_finite() {
            prev = None;
            continue;
        }
        if let Some((ps, pv)) = prev {
            if pv.signum() != val.signum() {
                let (mut lo, mut hi) = (ps, sigma);
                let (mut flo, _) = (pv, val);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let fm = density_l(mid) - target_l;
                    if fm.signum() == flo.signum() {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                solution = Some(0.5 * (lo + hi));
                break;
            }
        }
        prev = Some((sigma, val));
    }
    let sigma = solution.ok_or_else(|| {
        Error::Numeric(format!(
            "no truncated-normal center matches boundary densities {target_l:.3} / {target_u:.3}"
        ))
    })?;
    let mu = 0.5 * (x_l + x_u) - sigma * sigma * log_ratio / width;
    let a = (x_l - mu) / sigma;
    let b = (x_u - mu) / sigma;
    let (phi_a, phi_b) = (norm.cdf(a), norm.cdf(b));
    let mut out = Vec::with_capacity(points);
    for k in 0..points {
        let v = k as f64 / (points - 1) as f64;
        let x = if k == 0 {
            x_l
        } else if k == points - 1 {
            x_u
        } else {
            mu + sigma * norm.inverse_cdf(phi_a + v * (phi_b - phi_a))
        };
        out.push(x.clamp(x_l, x_u));
    }
    Ok(out)
}
