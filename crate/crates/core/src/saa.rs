//! Sample average approximation on the component banks: the sampled
//! first-order condition, bisection for its root, the AV@R objective that
//! reuses one fixed bank for every grid point, and the simplex grid search
//! with adaptive refinement.

use crate::dm::{ComponentSampleBank, GammaMatrix};
use crate::error::{Error, Result};
use crate::stats;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct SaaConfig {
    /// AV@R level.
    pub p: f64,
    /// Tolerance on the probability scale; defaults to half an empirical
    /// CDF step, `0.5 / N`.
    pub epsilon: Option<f64>,
    /// Grid step `h`; `1/h` must be integral.
    pub grid_step: f64,
    /// Adaptive refinement rounds around the incumbent.
    pub refine_rounds: usize,
    /// Contraction factor per refinement round.
    pub refine_shrink: f64,
    /// Upper bound on grid points per sweep.
    pub max_grid_points: usize,
}

impl SaaConfig {
    pub fn new(p: f64) -> Self {
        SaaConfig {
            p,
            epsilon: None,
            grid_step: 0.1,
            refine_rounds: 2,
            refine_shrink: 0.5,
            max_grid_points: 2_000_000,
        }
    }
}

/// One component with sorted values and suffix sums, so that both the
/// empirical CDF and `sum (v - u)^+` cost a binary search.
#[derive(Debug, Clone)]
struct SortedComponent {
    sorted: Vec<f64>,
    suffix: Vec<f64>,
}

impl SortedComponent {
    fn new(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut suffix = vec![0.0; sorted.len() + 1];
        for i in (0..sorted.len()).rev() {
            suffix[i] = suffix[i + 1] + sorted[i];
        }
        SortedComponent { sorted, suffix }
    }

    /// Number of values <= u.
    fn count_le(&self, u: f64) -> usize {
        self.sorted.partition_point(|&v| v <= u)
    }

    /// Number of values < u.
    fn count_lt(&self, u: f64) -> usize {
        self.sorted.partition_point(|&v| v < u)
    }

    /// `sum_k (v_k - u)^+`.
    fn excess(&self, u: f64) -> f64 {
        let idx = self.count_le(u);
        self.suffix[idx] - u * (self.sorted.len() - idx) as f64
    }

    /// Smallest stored value strictly above `u`.
    fn next_above(&self, u: f64) -> Option<f64> {
        self.sorted.get(self.count_le(u)).copied()
    }

    fn quantile(&self, q: f64) -> f64 {
        let idx = ((self.sorted.len() as f64 * q) as usize).min(self.sorted.len() - 1);
        self.sorted[idx]
    }
}

/// A component bank preprocessed for SAA evaluation.
#[derive(Debug, Clone)]
pub struct SortedBank {
    central: SortedComponent,
    comps: Vec<SortedComponent>,
    n: usize,
    m: usize,
    k: usize,
    candidates: Vec<usize>,
}

impl SortedBank {
    pub fn from_bank(bank: &ComponentSampleBank) -> Self {
        let central = SortedComponent::new(bank.central());
        let mut comps = Vec::with_capacity(bank.m() * bank.k());
        for i in 1..=bank.m() {
            for j in 0..bank.k() {
                comps.push(SortedComponent::new(bank.component(i, j)));
            }
        }
        SortedBank {
            central,
            comps,
            n: bank.n(),
            m: bank.m(),
            k: bank.k(),
            candidates: bank.candidate_indices().to_vec(),
        }
    }

    /// Bank restricted to a slice of each component, for batch-based
    /// standard errors.
    pub fn from_bank_slice(bank: &ComponentSampleBank, lo: usize, hi: usize) -> Self {
        let central = SortedComponent::new(&bank.central()[lo..hi]);
        let mut comps = Vec::with_capacity(bank.m() * bank.k());
        for i in 1..=bank.m() {
            for j in 0..bank.k() {
                comps.push(SortedComponent::new(&bank.component(i, j)[lo..hi]));
            }
        }
        SortedBank {
            central,
            comps,
            n: hi - lo,
            m: bank.m(),
            k: bank.k(),
            candidates: bank.candidate_indices().to_vec(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn candidate_indices(&self) -> &[usize] {
        &self.candidates
    }

    fn component(&self, i: usize, j: usize) -> &SortedComponent {
        &self.comps[(i - 1) * self.k + j]
    }

    fn check(&self, gamma: &GammaMatrix, alphas: &[f64]) -> Result<()> {
        if gamma.m() != self.m || gamma.k() != self.k {
            return Err(Error::Domain("gamma matrix does not match the bank".into()));
        }
        if alphas.len() != self.m + 1 {
            return Err(Error::Domain("need one alpha per component".into()));
        }
        Ok(())
    }

    /// Sampled mixture CDF `p̄_N(u)`.
    pub fn pbar(&self, u: f64, gamma: &GammaMatrix, alphas: &[f64]) -> Result<f64> {
        self.check(gamma, alphas)?;
        Ok(self.weighted_count(u, gamma, alphas, false))
    }

    /// Left limit `p̄_N(u-)`, the strict-inequality version.
    pub fn pbar_strict(&self, u: f64, gamma: &GammaMatrix, alphas: &[f64]) -> Result<f64> {
        self.check(gamma, alphas)?;
        Ok(self.weighted_count(u, gamma, alphas, true))
    }

    fn weighted_count(&self, u: f64, gamma: &GammaMatrix, alphas: &[f64], strict: bool) -> f64 {
        let count = |c: &SortedComponent| {
            (if strict { c.count_lt(u) } else { c.count_le(u) }) as f64 / self.n as f64
        };
        let mut total = alphas[0] * count(&self.central);
        for i in 1..=self.m {
            let col = gamma.column(i);
            for j in 0..self.k {
                if col[j] > 0.0 {
                    total += alphas[i] * col[j] * count(self.component(i, j));
                }
            }
        }
        total
    }

    /// Root of the sampled first-order condition by bisection.
    ///
    /// The bracket grows geometrically from the pooled 1% and 99.9%
    /// quantiles. After the tolerance phase the bracket keeps halving and the
    /// returned point snaps to the jump of `p̄_N` across `p`, so the sampled
    /// subgradient condition `p̄_N(ǔ-) <= p <= p̄_N(ǔ)` holds exactly.
    pub fn bisect_u(&self, gamma: &GammaMatrix, alphas: &[f64], p: f64, eps: f64) -> Result<f64> {
        self.check(gamma, alphas)?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("level must lie in (0,1), got {p}")));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in std::iter::once(&self.central).chain(self.comps.iter()) {
            lo = lo.min(c.quantile(0.01));
            hi = hi.max(c.quantile(0.999));
        }
        let span = (hi - lo).max(1e-12);
        let mut step = span;
        let mut grew = 0;
        while self.weighted_count(lo, gamma, alphas, false) >= p {
            lo -= step;
            step *= 2.0;
            grew += 1;
            if grew > 64 {
                return Err(Error::Numeric("no lower bracket for the FOC root".into()));
            }
        }
        step = span;
        grew = 0;
        while self.weighted_count(hi, gamma, alphas, false) <= p {
            hi += step;
            step *= 2.0;
            grew += 1;
            if grew > 64 {
                return Err(Error::Numeric("no upper bracket for the FOC root".into()));
            }
        }

        // tolerance phase as in the sampled-FOC bisection
        let mut p_l = self.weighted_count(lo, gamma, alphas, false);
        let mut p_u = self.weighted_count(hi, gamma, alphas, false);
        let mut iterations = 0;
        while (p_u - p).abs() > eps && (p_l - p).abs() > eps && iterations < 200 {
            let mid = 0.5 * (lo + hi);
            let p_m = self.weighted_count(mid, gamma, alphas, false);
            if p_m > p {
                hi = mid;
                p_u = p_m;
            } else {
                lo = mid;
                p_l = p_m;
            }
            iterations += 1;
        }
        // snap phase: tighten the bracket, then walk to the exact jump point
        for _ in 0..80 {
            if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.weighted_count(mid, gamma, alphas, false) >= p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut point = lo;
        for _ in 0..(self.m * self.k + 2) * 64 {
            let mut next = f64::INFINITY;
            for c in std::iter::once(&self.central).chain(self.comps.iter()) {
                if let Some(v) = c.next_above(point) {
                    next = next.min(v);
                }
            }
            if !next.is_finite() {
                break;
            }
            point = next;
            if self.weighted_count(point, gamma, alphas, false) >= p {
                return Ok(point);
            }
        }
        Ok(hi)
    }

    /// SAA objective at `(gamma, u)`:
    /// `u + sum of weighted mean excesses / (1-p)`.
    pub fn avar_at(&self, gamma: &GammaMatrix, alphas: &[f64], p: f64, u: f64) -> Result<f64> {
        self.check(gamma, alphas)?;
        let scale = 1.0 / ((1.0 - p) * self.n as f64);
        let mut total = u + alphas[0] * self.central.excess(u) * scale;
        for i in 1..=self.m {
            let col = gamma.column(i);
            for j in 0..self.k {
                if col[j] > 0.0 {
                    total += alphas[i] * col[j] * self.component(i, j).excess(u) * scale;
                }
            }
        }
        Ok(total)
    }

    /// Bisection followed by the objective: the SAA value of one grid point.
    pub fn evaluate(&self, gamma: &GammaMatrix, alphas: &[f64], p: f64, eps: f64) -> Result<(f64, f64)> {
        let u = self.bisect_u(gamma, alphas, p, eps)?;
        let c = self.avar_at(gamma, alphas, p, u)?;
        Ok((u, c))
    }
}

/// Batch-based standard error of the SAA value at one weight matrix.
pub fn saa_standard_error(
    bank: &ComponentSampleBank,
    gamma: &GammaMatrix,
    alphas: &[f64],
    p: f64,
    batches: usize,
) -> Result<f64> {
    if batches < 2 || bank.n() < 2 * batches {
        return Err(Error::Domain("need at least two batches of data".into()));
    }
    let size = bank.n() / batches;
    let values: Result<Vec<f64>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let sub = SortedBank::from_bank_slice(bank, b * size, (b + 1) * size);
            let eps = 0.5 / sub.n() as f64;
            Ok(sub.evaluate(gamma, alphas, p, eps)?.1)
        })
        .collect();
    let values = values?;
    Ok(stats::std_dev(&values) / (batches as f64).sqrt())
}

/// All points of the standard simplex with coordinates on a `1/h` lattice.
pub fn simplex_grid(k: usize, h: f64) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::Domain("need at least one coordinate".into()));
    }
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::Domain(format!("grid step must lie in (0,1], got {h}")));
    }
    let resolution = (1.0 / h).round();
    if ((1.0 / h) - resolution).abs() > 1e-9 {
        return Err(Error::Domain(format!("1/h must be integral, got h = {h}")));
    }
    let r = resolution as usize;
    let mut out = Vec::new();
    let mut counts = vec![0usize; k];
    compositions(r, k, 0, &mut counts, &mut out);
    Ok(out)
}

fn compositions(rest: usize, k: usize, idx: usize, counts: &mut [usize], out: &mut Vec<Vec<f64>>) {
    if idx == k - 1 {
        counts[idx] = rest;
        let r: f64 = counts.iter().sum::<usize>() as f64;
        out.push(counts.iter().map(|&c| c as f64 / r).collect());
        return;
    }
    for c in 0..=rest {
        counts[idx] = c;
        compositions(rest - c, k, idx + 1, counts, out);
    }
}

/// Result of the grid search.
#[derive(Debug, Clone)]
pub struct SaaResult {
    /// Arguments of the maximum in the restricted candidate space.
    pub gamma_star: GammaMatrix,
    /// FOC root at the maximum.
    pub u_star: f64,
    /// Worst-case AV@R estimate.
    pub c_star: f64,
    /// Original candidate indices backing the columns of `gamma_star`.
    pub candidate_indices: Vec<usize>,
    /// Every evaluated point: flattened weights (slot-major) and value.
    pub table: Vec<(Vec<f64>, f64)>,
}

impl SaaResult {
    /// Expands the restricted argmax onto the full candidate set.
    pub fn gamma_full(&self, full_k: usize) -> Result<GammaMatrix> {
        let mut cols = Vec::with_capacity(self.gamma_star.m());
        for i in 1..=self.gamma_star.m() {
            let mut col = vec![0.0; full_k];
            for (pos, &j) in self.candidate_indices.iter().enumerate() {
                if j >= full_k {
                    return Err(Error::Domain("candidate index out of range".into()));
                }
                col[j] = self.gamma_star.column(i)[pos];
            }
            cols.push(col);
        }
        GammaMatrix::new(cols)
    }
}

/// Exhaustive evaluation over the product of per-slot simplex grids, with
/// adaptive refinement around the incumbent.
pub fn saa_search(bank: &SortedBank, alphas: &[f64], cfg: &SaaConfig) -> Result<SaaResult> {
    let (m, k) = (bank.m(), bank.k());
    if m == 0 || k == 0 {
        return Err(Error::Domain("bank has no tail components".into()));
    }
    let eps = cfg.epsilon.unwrap_or(0.5 / bank.n() as f64);
    let base = simplex_grid(k, cfg.grid_step)?;
    let per_slot = base.len();
    let total = per_slot.checked_pow(m as u32).filter(|&t| t <= cfg.max_grid_points);
    if total.is_none() {
        return Err(Error::Domain(format!(
            "grid would hold {per_slot}^{m} points, above the cap {}; increase the grid step \
             or select fewer candidates",
            cfg.max_grid_points
        )));
    }

    let mut incumbent: Option<(Vec<f64>, f64, f64, GammaMatrix)> = None;
    let mut table = Vec::new();
    let mut slot_grids: Vec<Vec<Vec<f64>>> = vec![base; m];
    for round in 0..=cfg.refine_rounds {
        let points = product_points(&slot_grids);
        let evaluated: Result<Vec<(Vec<f64>, f64, f64, GammaMatrix)>> = points
            .into_par_iter()
            .map(|cols| {
                let gamma = GammaMatrix::new(cols)?;
                let (u, c) = bank.evaluate(&gamma, alphas, cfg.p, eps)?;
                Ok((gamma.flatten(), u, c, gamma))
            })
            .collect();
        let evaluated = evaluated?;
        for (flat, _, c, _) in &evaluated {
            table.push((flat.clone(), *c));
        }
        for entry in evaluated {
            let better = match &incumbent {
                None => true,
                Some((bflat, _, bc, _)) => {
                    entry.2 > *bc || (entry.2 == *bc && entry.0 < *bflat)
                }
            };
            if better {
                incumbent = Some(entry);
            }
        }
        if round == cfg.refine_rounds {
            break;
        }
        // contract every slot grid toward the incumbent column
        let center = &incumbent.as_ref().expect("nonempty grid").3;
        let shrink = cfg.refine_shrink.powi(round as i32 + 1);
        let fresh = simplex_grid(k, cfg.grid_step)?;
        slot_grids = (1..=m)
            .map(|i| {
                fresh
                    .iter()
                    .map(|g| {
                        g.iter()
                            .zip(center.column(i))
                            .map(|(&gv, &cv)| cv + shrink * (gv - cv))
                            .collect()
                    })
                    .collect()
            })
            .collect();
    }
    let (_, u, c, gamma) = incumbent.expect("nonempty grid");
    Ok(SaaResult {
        gamma_star: gamma,
        u_star: u,
        c_star: c,
        candidate_indices: bank.candidate_indices().to_vec(),
        table,
    })
}

/// Cartesian product of per-slot grids as per-point column lists.
fn product_points(slot_grids: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    let m = slot_grids.len();
    let total: usize = slot_grids.iter().map(|g| g.len()).product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; m];
    loop {
        out.push((0..m).map(|i| slot_grids[i][idx[i]].clone()).collect());
        let mut pos = m;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < slot_grids[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::CopulaSpec;
    use crate::dist::marginal::Marginal;
    use crate::dist::DistributionSpec;
    use crate::distortion::{DistortionFamily, DistortionSet};
    use crate::dm::{Aggregation, DMSpec};
    use crate::rng::{substream, StreamRole};
    use rand::Rng;

    /// Bank whose central and tail components share one array.
    fn identical_bank(values: Vec<f64>, m: usize, k: usize) -> SortedBank {
        let central = SortedComponent::new(&values);
        let comps = vec![central.clone(); m * k];
        SortedBank { central, comps, n: values.len(), m, k, candidates: (0..k).collect() }
    }

    fn alphas_for(m: usize) -> Vec<f64> {
        let tail = 0.05;
        let mut a = vec![1.0 - m as f64 * tail];
        a.extend(std::iter::repeat(tail).take(m));
        a
    }

    #[test]
    fn pbar_limits_and_count() {
        let values: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let bank = identical_bank(values, 2, 2);
        let gamma = GammaMatrix::uniform(2, 2);
        let alphas = alphas_for(2);
        assert!((bank.pbar(f64::INFINITY, &gamma, &alphas).unwrap() - 1.0).abs() < 1e-12);
        assert!(bank.pbar(f64::NEG_INFINITY, &gamma, &alphas).unwrap() == 0.0);
        assert!((bank.pbar(95.0, &gamma, &alphas).unwrap() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn pbar_nondecreasing() {
        let mut rng = substream(51, StreamRole::Scratch, 0, 0);
        let values: Vec<f64> = (0..500).map(|_| rng.random::<f64>() * 10.0).collect();
        let bank = identical_bank(values, 1, 2);
        let gamma = GammaMatrix::new(vec![vec![0.3, 0.7]]).unwrap();
        let alphas = alphas_for(1);
        let mut last = 0.0;
        for i in 0..200 {
            let u = i as f64 / 20.0;
            let v = bank.pbar(u, &gamma, &alphas).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn bisect_identical_uniform_components() {
        let mut rng = substream(52, StreamRole::Scratch, 0, 0);
        let n = 100_000;
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let bank = identical_bank(values, 2, 2);
        let gamma = GammaMatrix::uniform(2, 2);
        let alphas = alphas_for(2);
        let p = 0.95;
        let u = bank.bisect_u(&gamma, &alphas, p, 0.5 / n as f64).unwrap();
        assert!((u - 0.95).abs() < 0.007, "u = {u}");
        // sandwich and step-resolution accuracy
        let at = bank.pbar(u, &gamma, &alphas).unwrap();
        let before = bank.pbar_strict(u, &gamma, &alphas).unwrap();
        assert!(before <= p && p <= at, "{before} <= {p} <= {at}");
        assert!((at - p).abs() <= 1.0 / n as f64);
    }

    #[test]
    fn bisect_degenerate_bank() {
        let bank = identical_bank(vec![7.0; 200], 1, 1);
        let gamma = GammaMatrix::new(vec![vec![1.0]]).unwrap();
        let alphas = alphas_for(1);
        let u = bank.bisect_u(&gamma, &alphas, 0.95, 0.0025).unwrap();
        assert_eq!(u, 7.0);
        let c = bank.avar_at(&gamma, &alphas, 0.95, u).unwrap();
        assert_eq!(c, 7.0);
    }

    #[test]
    fn avar_identical_uniform_components() {
        let mut rng = substream(53, StreamRole::Scratch, 0, 0);
        let n = 100_000;
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let bank = identical_bank(values, 1, 3);
        let gamma = GammaMatrix::new(vec![vec![0.2, 0.5, 0.3]]).unwrap();
        let alphas = alphas_for(1);
        let (_, c) = bank.evaluate(&gamma, &alphas, 0.95, 0.5 / n as f64).unwrap();
        assert!((c - 0.975).abs() < 0.005, "c = {c}");
    }

    #[test]
    fn simplex_grid_counts() {
        assert_eq!(simplex_grid(2, 0.1).unwrap().len(), 11);
        assert_eq!(simplex_grid(3, 0.5).unwrap().len(), 6);
        assert_eq!(simplex_grid(1, 0.25).unwrap(), vec![vec![1.0]]);
        assert!(simplex_grid(2, 0.3).is_err());
        for point in simplex_grid(4, 0.2).unwrap() {
            assert!((point.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    /// Two-candidate spec where the first tail candidate strictly dominates.
    fn dominant_spec() -> (DMSpec, ComponentSampleBank) {
        let corr =
            crate::copula::CorrelationMatrix::new(vec![vec![1.0, 0.2], vec![0.2, 1.0]]).unwrap();
        let spec = DMSpec::new(
            DistortionSet::new(DistortionFamily::Piecewise { weights: vec![0.9, 0.1] }, 2)
                .unwrap(),
            CopulaSpec::Gaussian { correlation: corr },
            vec![CopulaSpec::Gumbel { theta: 4.0, dim: 2 }, CopulaSpec::Independence { dim: 2 }],
            vec![
                Marginal::Parametric(DistributionSpec::Lognormal { mu: 0.0, sigma: 1.0 }),
                Marginal::Parametric(DistributionSpec::Lognormal { mu: 0.0, sigma: 1.0 }),
            ],
            Aggregation::Sum,
        )
        .unwrap();
        let bank = spec.component_losses(60_000, 54).unwrap();
        (spec, bank)
    }

    #[test]
    fn search_puts_mass_on_dominant_candidate() {
        let (spec, bank) = dominant_spec();
        let sorted = SortedBank::from_bank(&bank);
        let cfg = SaaConfig::new(0.95);
        let result = saa_search(&sorted, &spec.alphas(), &cfg).unwrap();
        assert!(result.c_star >= result.table.iter().map(|(_, c)| *c).fold(f64::MIN, f64::max));
        assert_eq!(result.gamma_star.column(1), &[1.0, 0.0]);
        let full = result.gamma_full(2).unwrap();
        assert_eq!(full.entry(0, 1), 1.0);
    }

    #[test]
    fn vertex_optimality_against_fine_grid() {
        // concave objective with stochastically ordered candidates: the fine
        // grid maximum sits at a vertex
        let (spec, bank) = dominant_spec();
        let sorted = SortedBank::from_bank(&bank);
        let alphas = spec.alphas();
        let eps = 0.5 / sorted.n() as f64;
        let mut best = f64::MIN;
        let mut best_g = 0.0;
        for i in 0..=100 {
            let g = i as f64 / 100.0;
            let gamma = GammaMatrix::new(vec![vec![g, 1.0 - g]]).unwrap();
            let (_, c) = sorted.evaluate(&gamma, &alphas, 0.95, eps).unwrap();
            if c > best {
                best = c;
                best_g = g;
            }
        }
        assert!(best_g == 0.0 || best_g == 1.0, "interior max at {best_g}");
    }

    #[test]
    fn saa_value_concave_along_segments() {
        // the SAA value on a fixed bank is an exact min of affine functions
        let (spec, bank) = dominant_spec();
        let sorted = SortedBank::from_bank(&bank);
        let alphas = spec.alphas();
        let eps = 1e-9;
        let mut rng = substream(55, StreamRole::Scratch, 0, 0);
        for _ in 0..10 {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            let eval = |g: f64| {
                let gamma = GammaMatrix::new(vec![vec![g, 1.0 - g]]).unwrap();
                sorted.evaluate(&gamma, &alphas, 0.95, eps).unwrap().1
            };
            let mid = eval(0.5 * (a + b));
            let ends = 0.5 * (eval(a) + eval(b));
            assert!(mid >= ends - 1e-9, "midpoint {mid} below average {ends}");
        }
    }

    #[test]
    fn refinement_does_not_lose_the_incumbent() {
        let (spec, bank) = dominant_spec();
        let sorted = SortedBank::from_bank(&bank);
        let mut coarse = SaaConfig::new(0.95);
        coarse.refine_rounds = 0;
        let mut refined = SaaConfig::new(0.95);
        refined.refine_rounds = 3;
        let a = saa_search(&sorted, &spec.alphas(), &coarse).unwrap();
        let b = saa_search(&sorted, &spec.alphas(), &refined).unwrap();
        assert!(b.c_star >= a.c_star - 1e-12);
    }

    #[test]
    fn grid_cap_enforced() {
        let (spec, bank) = dominant_spec();
        let sorted = SortedBank::from_bank(&bank);
        let mut cfg = SaaConfig::new(0.95);
        cfg.grid_step = 0.01;
        cfg.max_grid_points = 50;
        let err = saa_search(&sorted, &spec.alphas(), &cfg).unwrap_err();
        assert!(format!("{err}").contains("grid"));
    }

    #[test]
    fn batch_standard_error_is_small_and_positive() {
        let (spec, bank) = dominant_spec();
        let gamma = GammaMatrix::new(vec![vec![1.0, 0.0]]).unwrap();
        let se = saa_standard_error(&bank, &gamma, &spec.alphas(), 0.95, 10).unwrap();
        assert!(se > 0.0 && se < 1.0, "se = {se}");
    }
}
