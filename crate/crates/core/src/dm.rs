//! The distorted-mix model: mixture weights, the factor sampler for the DM
//! copula, component loss distributions and their sample banks.

use crate::copula::{CopulaSampler, CopulaSpec};
use crate::dist::marginal::Marginal;
use crate::distortion::DistortionSet;
use crate::error::{Error, Result};
use crate::rng::{chunks, substream, StreamRole};
use rand::Rng;
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

/// Simplex tolerance for mixture-weight columns.
const SIMPLEX_TOL: f64 = 1e-12;

/// K x m matrix of candidate weights; column `i` is the mixture vector for
/// tail slot `i+1` and lies on the standard simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMatrix {
    k: usize,
    cols: Vec<Vec<f64>>,
}

impl GammaMatrix {
    pub fn new(cols: Vec<Vec<f64>>) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::Domain("gamma matrix needs at least one column".into()));
        }
        let k = cols[0].len();
        if k == 0 {
            return Err(Error::Domain("gamma matrix needs at least one candidate".into()));
        }
        for col in &cols {
            if col.len() != k {
                return Err(Error::Domain("gamma matrix columns differ in length".into()));
            }
            if col.iter().any(|&v| v < -SIMPLEX_TOL || !v.is_finite()) {
                return Err(Error::Domain("gamma entries must be nonnegative".into()));
            }
            let total: f64 = col.iter().sum();
            if (total - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::Domain(format!(
                    "gamma column sums to {total}, not 1"
                )));
            }
        }
        Ok(GammaMatrix { k, cols })
    }

    /// All entries `1/K`. With `m = 0` the matrix is empty and stands for a
    /// center-only model.
    pub fn uniform(k: usize, m: usize) -> Self {
        assert!(k > 0 || m == 0);
        GammaMatrix { k, cols: vec![vec![1.0 / k as f64; k]; m] }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.cols.len()
    }

    /// Column for tail slot `i` (1-based), a simplex vector over candidates.
    pub fn column(&self, i: usize) -> &[f64] {
        &self.cols[i - 1]
    }

    /// Entry for candidate `j` (0-based) in tail slot `i` (1-based).
    pub fn entry(&self, j: usize, i: usize) -> f64 {
        self.cols[i - 1][j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.cols
    }

    pub fn set_column(&mut self, i: usize, col: Vec<f64>) {
        assert_eq!(col.len(), self.k);
        self.cols[i - 1] = col;
    }

    /// Entrywise 1-norm distance, the stopping metric of the SA loop.
    pub fn l1_distance(&self, other: &GammaMatrix) -> f64 {
        self.cols
            .iter()
            .flatten()
            .zip(other.cols.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    /// Entries flattened slot-major: column 1, then column 2, ...
    pub fn flatten(&self) -> Vec<f64> {
        self.cols.iter().flatten().cloned().collect()
    }
}

/// Aggregation map from the loss vector to the scalar loss.
#[derive(Debug, Clone, PartialEq)]
pub enum Aggregation {
    Sum,
    SumShifted { shift: f64 },
    ExcessOfLoss { thresholds: Vec<f64> },
}

impl Aggregation {
    pub fn apply(&self, x: &[f64]) -> f64 {
        match self {
            Aggregation::Sum => x.iter().sum(),
            Aggregation::SumShifted { shift } => x.iter().map(|v| v + shift).sum(),
            Aggregation::ExcessOfLoss { thresholds } => x
                .iter()
                .zip(thresholds)
                .map(|(v, k)| (v - k).max(0.0))
                .sum(),
        }
    }
}

/// Full problem description of the distorted-mix loss model.
#[derive(Debug, Clone)]
pub struct DMSpec {
    pub distortions: DistortionSet,
    pub central: CopulaSpec,
    pub candidates: Vec<CopulaSpec>,
    pub marginals: Vec<Marginal>,
    pub aggregation: Aggregation,
    /// Divides the aggregate loss before reporting; unit conversion only.
    pub loss_scale: f64,
}

impl DMSpec {
    pub fn new(
        distortions: DistortionSet,
        central: CopulaSpec,
        candidates: Vec<CopulaSpec>,
        marginals: Vec<Marginal>,
        aggregation: Aggregation,
    ) -> Result<Self> {
        let d = marginals.len();
        if d < 2 {
            return Err(Error::Domain("need at least two marginals".into()));
        }
        if distortions.dim() != d {
            return Err(Error::Domain(format!(
                "distortion set has dimension {}, marginals {d}",
                distortions.dim()
            )));
        }
        if central.dim() != d {
            return Err(Error::Domain(format!(
                "central copula has dimension {}, marginals {d}",
                central.dim()
            )));
        }
        for (j, c) in candidates.iter().enumerate() {
            if c.dim() != d {
                return Err(Error::Domain(format!(
                    "candidate {} has dimension {}, marginals {d}",
                    j + 1,
                    c.dim()
                )));
            }
            c.validate()?;
        }
        central.validate()?;
        if candidates.is_empty() && distortions.m() > 0 {
            return Err(Error::Domain("candidate set is empty".into()));
        }
        if let Aggregation::ExcessOfLoss { thresholds } = &aggregation {
            if thresholds.len() != d {
                return Err(Error::Domain("one excess threshold per coordinate".into()));
            }
        }
        Ok(DMSpec {
            distortions,
            central,
            candidates,
            marginals,
            aggregation,
            loss_scale: 1.0,
        })
    }

    pub fn with_loss_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain(format!("loss scale must be positive, got {scale}")));
        }
        self.loss_scale = scale;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn num_slots(&self) -> usize {
        self.distortions.m()
    }

    /// Component weights `alpha_0..alpha_m`.
    pub fn alphas(&self) -> Vec<f64> {
        self.distortions.weights()
    }

    fn check_gamma(&self, gamma: &GammaMatrix) -> Result<()> {
        if gamma.m() != self.num_slots()
            || (self.num_slots() > 0 && gamma.k() != self.num_candidates())
        {
            return Err(Error::Domain(format!(
                "gamma matrix is {}x{}, expected {}x{}",
                gamma.k(),
                gamma.m(),
                self.num_candidates(),
                self.num_slots()
            )));
        }
        Ok(())
    }

    /// Aggregate loss in reporting units.
    pub fn loss(&self, x: &[f64]) -> f64 {
        self.aggregation.apply(x) / self.loss_scale
    }

    /// Draws `n` loss vectors from the DM copula generated by `gamma`,
    /// already pushed through the marginal quantiles. Row-major `n x d`.
    pub fn dm_sample(
        &self,
        gamma: &GammaMatrix,
        n: usize,
        seed: u64,
        role: StreamRole,
        task: u64,
    ) -> Result<Vec<f64>> {
        self.check_gamma(gamma)?;
        if n == 0 {
            return Err(Error::Domain("sample size must be at least 1".into()));
        }
        let d = self.dim();
        let samplers = self.samplers()?;
        let mut out = vec![0.0; n * d];
        let parts = chunks(n);
        let slices = split_rows(&mut out, &parts, d);
        slices.into_par_iter().zip(parts.par_iter()).try_for_each(
            |(slice, &(c, _, _))| -> Result<()> {
                let mut rng = substream(seed, role, task, c);
                for row in slice.chunks_mut(d) {
                    self.draw_vector(gamma, &samplers, row, &mut rng)?;
                }
                Ok(())
            },
        )?;
        Ok(out)
    }

    /// Draws `n` scalar aggregate losses under `gamma`.
    pub fn sample_losses(
        &self,
        gamma: &GammaMatrix,
        n: usize,
        seed: u64,
        role: StreamRole,
        task: u64,
    ) -> Result<Vec<f64>> {
        self.check_gamma(gamma)?;
        let d = self.dim();
        let samplers = self.samplers()?;
        let parts = chunks(n);
        let pieces: Result<Vec<Vec<f64>>> = parts
            .par_iter()
            .map(|&(c, _, len)| {
                let mut rng = substream(seed, role, task, c);
                let mut row = vec![0.0; d];
                let mut losses = Vec::with_capacity(len);
                for _ in 0..len {
                    self.draw_vector(gamma, &samplers, &mut row, &mut rng)?;
                    losses.push(self.loss(&row));
                }
                Ok(losses)
            })
            .collect();
        Ok(pieces?.into_iter().flatten().collect())
    }

    fn samplers(&self) -> Result<(CopulaSampler, Vec<CopulaSampler>)> {
        let central = self.central.sampler()?;
        let cands: Result<Vec<CopulaSampler>> =
            self.candidates.iter().map(|c| c.sampler()).collect();
        Ok((central, cands?))
    }

    /// One pass of the factor sampling algorithm: pick the region component,
    /// pick the candidate within the region, sample the component copula,
    /// undistort, and apply the marginal quantile transform.
    fn draw_vector(
        &self,
        gamma: &GammaMatrix,
        samplers: &(CopulaSampler, Vec<CopulaSampler>),
        row: &mut [f64],
        rng: &mut impl Rng,
    ) -> Result<()> {
        let alphas = self.alphas();
        let z1 = pick_index(&alphas, rng);
        let sampler = if z1 == 0 {
            &samplers.0
        } else {
            let z2 = pick_index(gamma.column(z1), rng);
            &samplers.1[z2]
        };
        sampler.draw_into(row, rng);
        for (k, v) in row.iter_mut().enumerate() {
            let u = self.distortions.inverse(z1, *v).clamp(1e-300, 1.0 - 1e-16);
            *v = self.marginals[k].quantile_unchecked(u);
        }
        Ok(())
    }

    /// Draws `n` losses from a single component: copula `which` distorted by
    /// slot `i` (slot 0 uses the central copula).
    fn component_sample(
        &self,
        slot: usize,
        copula: &CopulaSampler,
        n: usize,
        seed: u64,
        task: u64,
    ) -> Result<Vec<f64>> {
        let d = self.dim();
        let parts = chunks(n);
        let pieces: Result<Vec<Vec<f64>>> = parts
            .par_iter()
            .map(|&(c, _, len)| {
                let mut rng = substream(seed, StreamRole::Bank, task, c);
                let mut row = vec![0.0; d];
                let mut losses = Vec::with_capacity(len);
                for _ in 0..len {
                    copula.draw_into(&mut row, &mut rng);
                    for (k, v) in row.iter_mut().enumerate() {
                        let u = self.distortions.inverse(slot, *v).clamp(1e-300, 1.0 - 1e-16);
                        *v = self.marginals[k].quantile_unchecked(u);
                    }
                    losses.push(self.loss(&row));
                }
                Ok(losses)
            })
            .collect();
        Ok(pieces?.into_iter().flatten().collect())
    }

    /// Samples all component loss distributions: the central one and one per
    /// (tail slot, candidate) pair.
    pub fn component_losses(&self, n: usize, seed: u64) -> Result<ComponentSampleBank> {
        self.component_losses_for(n, seed, &(0..self.num_candidates()).collect::<Vec<_>>())
    }

    /// Component bank restricted to the candidate indices in `selected`
    /// (0-based); used after dimension reduction.
    pub fn component_losses_for(
        &self,
        n: usize,
        seed: u64,
        selected: &[usize],
    ) -> Result<ComponentSampleBank> {
        if n == 0 {
            return Err(Error::Domain("bank size must be at least 1".into()));
        }
        for &j in selected {
            if j >= self.num_candidates() {
                return Err(Error::Domain(format!("candidate index {j} out of range")));
            }
        }
        let m = self.num_slots();
        let samplers = self.samplers()?;
        let psi0 = self.component_sample(0, &samplers.0, n, seed, 0)?;
        let mut psi = Vec::with_capacity(m * selected.len());
        for i in 1..=m {
            for (pos, &j) in selected.iter().enumerate() {
                let task = 1 + ((i - 1) * self.num_candidates() + j) as u64;
                let _ = pos;
                psi.push(self.component_sample(i, &samplers.1[j], n, seed, task)?);
            }
        }
        Ok(ComponentSampleBank {
            psi0,
            psi,
            n,
            m,
            candidates: selected.to_vec(),
            seed,
        })
    }
}

fn pick_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (idx, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return idx;
        }
    }
    weights.len() - 1
}

/// Splits a flat row-major buffer into per-chunk mutable slices.
fn split_rows<'a>(
    buf: &'a mut [f64],
    parts: &[(u64, usize, usize)],
    d: usize,
) -> Vec<&'a mut [f64]> {
    let mut rest = buf;
    let mut out = Vec::with_capacity(parts.len());
    for &(_, _, len) in parts {
        let (head, tail) = rest.split_at_mut(len * d);
        out.push(head);
        rest = tail;
    }
    out
}

/// Stored draws of the central component loss and of every (slot, candidate)
/// component, all of equal length.
#[derive(Debug, Clone)]
pub struct ComponentSampleBank {
    psi0: Vec<f64>,
    psi: Vec<Vec<f64>>,
    n: usize,
    m: usize,
    /// Original candidate indices (0-based) backing the `psi` columns.
    candidates: Vec<usize>,
    seed: u64,
}

impl ComponentSampleBank {
    /// Builds a bank from raw component arrays: one central array and
    /// `m * k` tail arrays in slot-major order, all of equal length.
    pub fn from_components(central: Vec<f64>, tail: Vec<Vec<f64>>, m: usize, k: usize) -> Result<Self> {
        if tail.len() != m * k {
            return Err(Error::Domain("need one tail array per (slot, candidate) pair".into()));
        }
        let n = central.len();
        if n == 0 || tail.iter().any(|a| a.len() != n) {
            return Err(Error::Domain("component arrays must share one positive length".into()));
        }
        Ok(ComponentSampleBank { psi0: central, psi: tail, n, m, candidates: (0..k).collect(), seed: 0 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of candidate columns stored per slot.
    pub fn k(&self) -> usize {
        self.candidates.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn candidate_indices(&self) -> &[usize] {
        &self.candidates
    }

    pub fn central(&self) -> &[f64] {
        &self.psi0
    }

    /// Component for tail slot `i` (1-based) and stored column `j` (0-based).
    pub fn component(&self, i: usize, j: usize) -> &[f64] {
        &self.psi[(i - 1) * self.candidates.len() + j]
    }

    /// Empirical mixture CDF at `s` under weights `(alphas, gamma)`.
    ///
    /// `gamma` columns must match the stored candidate columns.
    pub fn mixture_cdf(&self, gamma: &GammaMatrix, alphas: &[f64], s: f64) -> Result<f64> {
        if gamma.k() != self.k() || gamma.m() != self.m {
            return Err(Error::Domain("gamma matrix does not match the bank".into()));
        }
        if alphas.len() != self.m + 1 {
            return Err(Error::Domain("need one alpha per component".into()));
        }
        let frac = |xs: &[f64]| xs.iter().filter(|&&x| x <= s).count() as f64 / self.n as f64;
        let mut total = alphas[0] * frac(&self.psi0);
        for i in 1..=self.m {
            for j in 0..self.k() {
                total += alphas[i] * gamma.entry(j, i) * frac(self.component(i, j));
            }
        }
        Ok(total)
    }

    /// Persists the bank as little-endian doubles plus a JSON sidecar.
    pub fn save(&self, base: &Path, label: &str) -> Result<()> {
        let bin = base.with_extension("bin");
        let mut w = std::io::BufWriter::new(std::fs::File::create(&bin)?);
        for xs in std::iter::once(&self.psi0).chain(self.psi.iter()) {
            for &x in xs {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        let sidecar = serde_json::json!({
            "label": label,
            "n": self.n,
            "m": self.m,
            "candidates": self.candidates,
            "seed": self.seed,
        });
        std::fs::write(
            base.with_extension("json"),
            serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
        )?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(base.with_extension("json"))?)
                .map_err(|e| Error::State(format!("bank sidecar unreadable: {e}")))?;
        let n = sidecar["n"].as_u64().ok_or_else(|| Error::State("sidecar missing n".into()))?
            as usize;
        let m = sidecar["m"].as_u64().ok_or_else(|| Error::State("sidecar missing m".into()))?
            as usize;
        let seed = sidecar["seed"].as_u64().unwrap_or(0);
        let candidates: Vec<usize> = sidecar["candidates"]
            .as_array()
            .ok_or_else(|| Error::State("sidecar missing candidates".into()))?
            .iter()
            .map(|v| v.as_u64().unwrap_or(0) as usize)
            .collect();
        let mut r = std::io::BufReader::new(std::fs::File::open(base.with_extension("bin"))?);
        let mut read_array = |len: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; len * 8];
            r.read_exact(&mut buf)?;
            Ok(buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
        };
        let psi0 = read_array(n)?;
        let mut psi = Vec::with_capacity(m * candidates.len());
        for _ in 0..m * candidates.len() {
            psi.push(read_array(n)?);
        }
        Ok(ComponentSampleBank { psi0, psi, n, m, candidates, seed })
    }
}
