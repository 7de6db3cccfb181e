//! Candidate copula families: sampling for all of them, closed-form CDF
//! evaluation for the Archimedean ones, and the exchangeable Gumbel
//! log-density used by the calibration fits.

use crate::dist::{log_series_sample, positive_stable_sample, uniform_open};
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal as NormalDist, StudentsT};

/// Keeps uniforms strictly inside (0,1) after CDF transforms.
fn clamp_unit(u: f64) -> f64 {
    u.clamp(1e-300, 1.0 - 1e-16)
}

/// How to treat correlation inputs that fail positive semidefiniteness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsdPolicy {
    /// Repair eigenvalues in `[-1e-8, 0)`; reject anything below.
    Strict,
    /// Clip any negative eigenvalue up to `-0.1`; used for parameter sets
    /// printed with few decimals.
    Repair,
}

/// A validated correlation matrix: symmetric, unit diagonal, positive
/// semidefinite (possibly after eigenvalue clipping).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    mat: DMatrix<f64>,
}

impl CorrelationMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_policy(entries, PsdPolicy::Strict)
    }

    pub fn new_repaired(entries: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_policy(entries, PsdPolicy::Repair)
    }

    pub fn with_policy(entries: Vec<Vec<f64>>, policy: PsdPolicy) -> Result<Self> {
        let d = entries.len();
        if d < 2 {
            return Err(Error::Domain("correlation matrix needs dimension >= 2".into()));
        }
        if entries.iter().any(|row| row.len() != d) {
            return Err(Error::Domain("correlation matrix is not square".into()));
        }
        let mut mat = DMatrix::from_fn(d, d, |i, j| entries[i][j]);
        for i in 0..d {
            if (mat[(i, i)] - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "diagonal entry ({i},{i}) = {} is not 1",
                    mat[(i, i)]
                )));
            }
            mat[(i, i)] = 1.0;
            for j in 0..i {
                if (mat[(i, j)] - mat[(j, i)]).abs() > 1e-9 {
                    return Err(Error::Domain(format!(
                        "matrix is not symmetric at ({i},{j})"
                    )));
                }
                let v = 0.5 * (mat[(i, j)] + mat[(j, i)]);
                mat[(i, j)] = v;
                mat[(j, i)] = v;
            }
        }
        let eig = mat.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let reject = match policy {
            PsdPolicy::Strict => -1e-8,
            PsdPolicy::Repair => -0.1,
        };
        if min_eig < reject {
            return Err(Error::Domain(format!(
                "correlation matrix is not positive semidefinite: eigenvalue {min_eig:.3e}"
            )));
        }
        if min_eig < 1e-12 {
            // clip and rescale back to unit diagonal
            let mut vals = eig.eigenvalues.clone();
            for v in vals.iter_mut() {
                *v = v.max(1e-12);
            }
            let q = eig.eigenvectors;
            let repaired = &q * DMatrix::from_diagonal(&vals) * q.transpose();
            let scale: Vec<f64> = (0..d).map(|i| repaired[(i, i)].sqrt()).collect();
            mat = DMatrix::from_fn(d, d, |i, j| repaired[(i, j)] / (scale[i] * scale[j]));
            for i in 0..d {
                mat[(i, i)] = 1.0;
            }
        }
        Ok(CorrelationMatrix { mat })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.mat[(i, j)]).collect())
            .collect()
    }

    fn cholesky(&self) -> Result<DMatrix<f64>> {
        // small ridge keeps the factorization alive for clipped matrices
        let d = self.dim();
        let mut m = self.mat.clone();
        let mut ridge = 0.0;
        for _ in 0..6 {
            if let Some(c) = m.clone().cholesky() {
                return Ok(c.l());
            }
            ridge = if ridge == 0.0 { 1e-12 } else { ridge * 100.0 };
            m = self.mat.clone();
            for i in 0..d {
                m[(i, i)] += ridge;
            }
        }
        Err(Error::Numeric("cholesky factorization failed".into()))
    }
}

/// Partition of coordinates sharing a degrees-of-freedom parameter in the
/// grouped t-copula.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPartition {
    groups: Vec<Vec<usize>>,
}

impl GroupPartition {
    /// `groups` holds zero-based coordinate indices and must partition `0..d`.
    pub fn new(groups: Vec<Vec<usize>>, d: usize) -> Result<Self> {
        let mut seen = vec![false; d];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::Domain("empty group".into()));
            }
            for &i in g {
                if i >= d || seen[i] {
                    return Err(Error::Domain(format!(
                        "groups must partition the coordinates; index {i} repeated or out of range"
                    )));
                }
                seen[i] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Domain("groups do not cover all coordinates".into()));
        }
        Ok(GroupPartition { groups })
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

#[derive(Debug, Clone)]
pub enum CopulaSpec {
    Gaussian { correlation: CorrelationMatrix },
    StudentT { nu: f64, correlation: CorrelationMatrix },
    GroupedT { partition: GroupPartition, nus: Vec<f64>, correlation: CorrelationMatrix },
    Clayton { theta: f64, dim: usize },
    Gumbel { theta: f64, dim: usize },
    Frank { theta: f64, dim: usize },
    Independence { dim: usize },
}

impl CopulaSpec {
    pub fn dim(&self) -> usize {
        match self {
            CopulaSpec::Gaussian { correlation } => correlation.dim(),
            CopulaSpec::StudentT { correlation, .. } => correlation.dim(),
            CopulaSpec::GroupedT { correlation, .. } => correlation.dim(),
            CopulaSpec::Clayton { dim, .. }
            | CopulaSpec::Gumbel { dim, .. }
            | CopulaSpec::Frank { dim, .. }
            | CopulaSpec::Independence { dim } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CopulaSpec::Gaussian { .. } => Ok(()),
            CopulaSpec::StudentT { nu, .. } => {
                if *nu > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("t-copula needs nu > 0, got {nu}")))
                }
            }
            CopulaSpec::GroupedT { partition, nus, correlation } => {
                if nus.len() != partition.groups().len() {
                    return Err(Error::Domain(
                        "grouped t-copula needs one nu per group".into(),
                    ));
                }
                if nus.iter().any(|&v| v <= 0.0) {
                    return Err(Error::Domain("grouped t-copula needs nu > 0".into()));
                }
                let total: usize = partition.groups().iter().map(|g| g.len()).sum();
                if total != correlation.dim() {
                    return Err(Error::Domain("group partition does not match dimension".into()));
                }
                Ok(())
            }
            CopulaSpec::Clayton { theta, dim } => {
                check_dim(*dim)?;
                if *theta > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("Clayton needs theta > 0, got {theta}")))
                }
            }
            CopulaSpec::Gumbel { theta, dim } => {
                check_dim(*dim)?;
                if *theta >= 1.0 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("Gumbel needs theta >= 1, got {theta}")))
                }
            }
            CopulaSpec::Frank { theta, dim } => {
                check_dim(*dim)?;
                if *theta >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("Frank needs theta >= 0, got {theta}")))
                }
            }
            CopulaSpec::Independence { dim } => check_dim(*dim),
        }
    }

    /// Prepares a reusable sampler (factorizations, cached distributions).
    pub fn sampler(&self) -> Result<CopulaSampler> {
        self.validate()?;
        Ok(match self {
            CopulaSpec::Gaussian { correlation } => CopulaSampler::Gaussian {
                chol: correlation.cholesky()?,
                norm: NormalDist::new(0.0, 1.0).unwrap(),
            },
            CopulaSpec::StudentT { nu, correlation } => CopulaSampler::StudentT {
                chol: correlation.cholesky()?,
                nu: *nu,
                tdist: StudentsT::new(0.0, 1.0, *nu).unwrap(),
            },
            CopulaSpec::GroupedT { partition, nus, correlation } => {
                let d = correlation.dim();
                let mut group_of = vec![0usize; d];
                for (g, members) in partition.groups().iter().enumerate() {
                    for &i in members {
                        group_of[i] = g;
                    }
                }
                CopulaSampler::GroupedT {
                    chol: correlation.cholesky()?,
                    nus: nus.clone(),
                    group_of,
                    chis: nus.iter().map(|&v| ChiSquared::new(v).unwrap()).collect(),
                    tdists: nus
                        .iter()
                        .map(|&v| StudentsT::new(0.0, 1.0, v).unwrap())
                        .collect(),
                }
            }
            CopulaSpec::Clayton { theta, dim } => {
                CopulaSampler::Clayton { theta: *theta, dim: *dim }
            }
            CopulaSpec::Gumbel { theta, dim } => {
                CopulaSampler::Gumbel { theta: *theta, dim: *dim }
            }
            CopulaSpec::Frank { theta, dim } => CopulaSampler::Frank { theta: *theta, dim: *dim },
            CopulaSpec::Independence { dim } => CopulaSampler::Independence { dim: *dim },
        })
    }

    /// `n` draws as a flat row-major `n x d` matrix of uniforms.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::Domain("sample size must be at least 1".into()));
        }
        let sampler = self.sampler()?;
        let d = self.dim();
        let mut out = vec![0.0; n * d];
        for row in out.chunks_mut(d) {
            sampler.draw_into(row, rng);
        }
        Ok(out)
    }

    /// Closed-form CDF for the Archimedean families and independence.
    pub fn archimedean_cdf(&self, u: &[f64]) -> Result<f64> {
        self.validate()?;
        if u.len() != self.dim() {
            return Err(Error::Domain("point dimension mismatch".into()));
        }
        if u.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::Domain("CDF arguments must lie in (0, 1]".into()));
        }
        match self {
            CopulaSpec::Clayton { theta, .. } => Ok(clayton_cdf(*theta, u)),
            CopulaSpec::Gumbel { theta, .. } => Ok(gumbel_cdf(*theta, u)),
            CopulaSpec::Frank { theta, .. } => Ok(frank_cdf(*theta, u)),
            CopulaSpec::Independence { .. } => Ok(u.iter().product()),
            _ => Err(Error::Domain(
                "closed-form CDF is only available for Archimedean families".into(),
            )),
        }
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d >= 2 {
        Ok(())
    } else {
        Err(Error::Domain("copula dimension must be at least 2".into()))
    }
}

/// Prepared sampler state for one copula.
pub enum CopulaSampler {
    Gaussian {
        chol: DMatrix<f64>,
        norm: NormalDist,
    },
    StudentT {
        chol: DMatrix<f64>,
        nu: f64,
        tdist: StudentsT,
    },
    GroupedT {
        chol: DMatrix<f64>,
        nus: Vec<f64>,
        group_of: Vec<usize>,
        chis: Vec<ChiSquared>,
        tdists: Vec<StudentsT>,
    },
    Clayton {
        theta: f64,
        dim: usize,
    },
    Gumbel {
        theta: f64,
        dim: usize,
    },
    Frank {
        theta: f64,
        dim: usize,
    },
    Independence {
        dim: usize,
    },
}

impl CopulaSampler {
    pub fn dim(&self) -> usize {
        match self {
            CopulaSampler::Gaussian { chol, .. } => chol.nrows(),
            CopulaSampler::StudentT { chol, .. } => chol.nrows(),
            CopulaSampler::GroupedT { chol, .. } => chol.nrows(),
            CopulaSampler::Clayton { dim, .. }
            | CopulaSampler::Gumbel { dim, .. }
            | CopulaSampler::Frank { dim, .. }
            | CopulaSampler::Independence { dim } => *dim,
        }
    }

    /// Fills `out` (length `d`) with one uniform vector.
    pub fn draw_into(&self, out: &mut [f64], rng: &mut impl Rng) {
        match self {
            CopulaSampler::Gaussian { chol, norm } => {
                correlated_normals(chol, out, rng);
                for v in out.iter_mut() {
                    *v = clamp_unit(norm.cdf(*v));
                }
            }
            CopulaSampler::StudentT { chol, nu, tdist } => {
                correlated_normals(chol, out, rng);
                let w = rand_distr::Gamma::new(nu / 2.0, 2.0).unwrap().sample(rng);
                let scale = (nu / w.max(1e-300)).sqrt();
                for v in out.iter_mut() {
                    *v = clamp_unit(tdist.cdf(*v * scale));
                }
            }
            CopulaSampler::GroupedT { chol, nus, group_of, chis, tdists } => {
                correlated_normals(chol, out, rng);
                let common = uniform_open(rng);
                let scales: Vec<f64> = chis
                    .iter()
                    .zip(nus)
                    .map(|(chi, &nu)| (nu / chi.inverse_cdf(common).max(1e-300)).sqrt())
                    .collect();
                for (k, v) in out.iter_mut().enumerate() {
                    let g = group_of[k];
                    *v = clamp_unit(tdists[g].cdf(*v * scales[g]));
                }
            }
            CopulaSampler::Clayton { theta, .. } => {
                let s = rand_distr::Gamma::new(1.0 / theta, 1.0).unwrap().sample(rng);
                for v in out.iter_mut() {
                    let e = -uniform_open(rng).ln();
                    *v = clamp_unit((1.0 + e / s).powf(-1.0 / theta));
                }
            }
            CopulaSampler::Gumbel { theta, .. } => {
                if (*theta - 1.0).abs() < 1e-9 {
                    for v in out.iter_mut() {
                        *v = uniform_open(rng);
                    }
                    return;
                }
                let alpha = 1.0 / theta;
                let s = positive_stable_sample(alpha, rng);
                for v in out.iter_mut() {
                    let e = -uniform_open(rng).ln();
                    *v = clamp_unit((-(e / s).powf(alpha)).exp());
                }
            }
            CopulaSampler::Frank { theta, .. } => {
                if *theta < 1e-9 {
                    for v in out.iter_mut() {
                        *v = uniform_open(rng);
                    }
                    return;
                }
                let p = -(-theta).exp_m1();
                let s = log_series_sample(p, rng) as f64;
                for v in out.iter_mut() {
                    let e = -uniform_open(rng).ln();
                    // psi(t) = -ln(1 - p e^{-t}) / theta
                    *v = clamp_unit(-(-p * (-e / s).exp()).ln_1p() / theta);
                }
            }
            CopulaSampler::Independence { .. } => {
                for v in out.iter_mut() {
                    *v = uniform_open(rng);
                }
            }
        }
    }
}

fn correlated_normals(chol: &DMatrix<f64>, out: &mut [f64], rng: &mut impl Rng) {
    let d = chol.nrows();
    debug_assert_eq!(out.len(), d);
    let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..=i {
            acc += chol[(i, j)] * z[j];
        }
        out[i] = acc;
    }
}

// ---------------------------------------------------------------------------
// Archimedean CDFs
// ---------------------------------------------------------------------------

fn clayton_cdf(theta: f64, u: &[f64]) -> f64 {
    let s: f64 = u.iter().map(|&v| v.powf(-theta)).sum::<f64>() - u.len() as f64 + 1.0;
    s.powf(-1.0 / theta)
}

fn gumbel_cdf(theta: f64, u: &[f64]) -> f64 {
    let s: f64 = u.iter().map(|&v| (-v.ln()).powf(theta)).sum();
    (-s.powf(1.0 / theta)).exp()
}

fn frank_cdf(theta: f64, u: &[f64]) -> f64 {
    if theta < 1e-9 {
        return u.iter().product();
    }
    let d = u.len() as i32;
    let denom = (-theta).exp_m1().powi(d - 1);
    let num: f64 = u.iter().map(|&v| (-theta * v).exp_m1()).product();
    -(num / denom).ln_1p() / theta
}

/// Log-density of the exchangeable Gumbel copula in any dimension.
///
/// Uses the polynomial recursion for the d-th generator derivative: with
/// `x = t^(1/theta)`, `(-1)^d psi^(d)(t) = psi(t) t^-d R_d(x)` where
/// `R_{k+1}(x) = (x/theta + k) R_k(x) - (x/theta) R_k'(x)` and
/// `R_1(x) = x/theta`.
pub fn gumbel_log_density(theta: f64, u: &[f64]) -> Result<f64> {
    if theta < 1.0 {
        return Err(Error::Domain(format!("Gumbel needs theta >= 1, got {theta}")));
    }
    if u.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::Domain("density arguments must lie in (0,1)".into()));
    }
    let d = u.len();
    let alpha = 1.0 / theta;
    let t0: f64 = u.iter().map(|&v| (-v.ln()).powf(theta)).sum();
    let x = t0.powf(alpha);

    // coefficients of R_d
    let mut coeff = vec![0.0f64; d + 1];
    coeff[1] = alpha;
    for k in 1..d {
        let mut next = vec![0.0f64; d + 1];
        for j in 0..=k {
            if coeff[j] == 0.0 {
                continue;
            }
            next[j + 1] += alpha * coeff[j];
            next[j] += (k as f64 - alpha * j as f64) * coeff[j];
        }
        coeff = next;
    }
    let mut r = 0.0;
    for j in (1..=d).rev() {
        r = r * x + coeff[j];
    }
    r *= x;
    let mut log_c = -x - d as f64 * t0.ln() + r.ln();
    for &v in u {
        log_c += theta.ln() + (theta - 1.0) * (-v.ln()).ln() - v.ln();
    }
    Ok(log_c)
}

/// Log-density of the t-copula with fixed correlation matrix, used by the
/// profile likelihood fit of the degrees of freedom.
pub fn t_copula_log_density(nu: f64, correlation: &CorrelationMatrix, u: &[f64]) -> Result<f64> {
    let d = correlation.dim();
    if u.len() != d {
        return Err(Error::Domain("point dimension mismatch".into()));
    }
    let tdist = StudentsT::new(0.0, 1.0, nu).unwrap();
    let x: Vec<f64> = u.iter().map(|&v| tdist.inverse_cdf(v)).collect();
    let m = correlation.as_matrix();
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("correlation matrix not invertible".into()))?;
    let log_det = 2.0 * (0..d).map(|i| chol.l()[(i, i)].ln()).sum::<f64>();
    let xv = nalgebra::DVector::from_column_slice(&x);
    let solved = chol.solve(&xv);
    let quad = xv.dot(&solved);

    let ln_gamma = statrs::function::gamma::ln_gamma;
    let df = d as f64;
    let log_joint = ln_gamma((nu + df) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * df * (nu * std::f64::consts::PI).ln()
        - 0.5 * log_det
        - 0.5 * (nu + df) * (1.0 + quad / nu).ln();
    let log_margins: f64 = x
        .iter()
        .map(|&xi| {
            ln_gamma((nu + 1.0) / 2.0)
                - ln_gamma(nu / 2.0)
                - 0.5 * (nu * std::f64::consts::PI).ln()
                - 0.5 * (nu + 1.0) * (1.0 + xi * xi / nu).ln()
        })
        .sum();
    Ok(log_joint - log_margins)
}
