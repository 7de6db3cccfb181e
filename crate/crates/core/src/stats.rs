//! Small statistical utilities shared by the solvers and the test suites:
//! summary statistics, Kolmogorov-Smirnov distances, a two-sample energy
//! test and Kendall's tau for sample pairs.

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// One-sample Kolmogorov-Smirnov statistic against an analytic CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Asymptotic one-sample KS critical value at significance `alpha`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    c_alpha(alpha) / (n as f64).sqrt()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n && j < m {
        let t = xs[i].min(ys[j]);
        while i < n && xs[i] <= t {
            i += 1;
        }
        while j < m && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at significance `alpha`.
pub fn ks_two_sample_critical(n: usize, m: usize, alpha: f64) -> f64 {
    c_alpha(alpha) * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

fn c_alpha(alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt()
}

/// Kendall's tau for a sample of pairs, with tie corrections (tau-b).
///
/// Runs in O(n log n) by counting discordant pairs through a merge sort.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    assert!(n >= 2, "kendall_tau needs at least two observations");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    // Tie counts in x, and joint ties in (x, y).
    let mut ties_x = 0u64;
    let mut ties_xy = 0u64;
    {
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && x[idx[j]] == x[idx[i]] {
                j += 1;
            }
            let run = (j - i) as u64;
            ties_x += run * (run - 1) / 2;
            let mut k = i;
            while k < j {
                let mut l = k + 1;
                while l < j && y[idx[l]] == y[idx[k]] {
                    l += 1;
                }
                let jrun = (l - k) as u64;
                ties_xy += jrun * (jrun - 1) / 2;
                k = l;
            }
            i = j;
        }
    }

    // Discordant pairs = swaps needed to sort y in x-order.
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let swaps = merge_count(&mut ys);

    // Tie counts in y.
    let mut sorted_y = y.to_vec();
    sorted_y.sort_by(f64::total_cmp);
    let mut ties_y = 0u64;
    {
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && sorted_y[j] == sorted_y[i] {
                j += 1;
            }
            let run = (j - i) as u64;
            ties_y += run * (run - 1) / 2;
            i = j;
        }
    }

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let concordant_minus_discordant =
        n0 as i64 - ties_x as i64 - ties_y as i64 + ties_xy as i64 - 2 * swaps as i64;
    let denom = (((n0 - ties_x) as f64) * ((n0 - ties_y) as f64)).sqrt();
    concordant_minus_discordant as f64 / denom
}

fn merge_count(xs: &mut [f64]) -> u64 {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut xs[..mid]) + merge_count(&mut xs[mid..]);
    let left = xs[..mid].to_vec();
    let right = xs[mid..].to_vec();
    let (mut i, mut j) = (0usize, 0usize);
    for slot in xs.iter_mut() {
        if i < left.len() && (j >= right.len() || left[i] <= right[j]) {
            *slot = left[i];
            i += 1;
        } else {
            swaps += (left.len() - i) as u64;
            *slot = right[j];
            j += 1;
        }
    }
    swaps
}

/// Pearson correlation matrix of panel rows.
pub fn pearson_matrix(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    let means: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in i..d {
                cov[i][j] += (r[i] - means[i]) * (r[j] - means[j]);
            }
        }
    }
    let sd: Vec<f64> = (0..d).map(|i| cov[i][i].sqrt()).collect();
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let c = if j >= i { cov[i][j] } else { cov[j][i] };
            out[i][j] = if i == j { 1.0 } else { c / (sd[i] * sd[j]) };
        }
    }
    out
}

/// Two-sample energy distance statistic for multivariate samples.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let cross = pair_mean(a, b);
    let within_a = self_pair_mean(a);
    let within_b = self_pair_mean(b);
    2.0 * cross - within_a - within_b
}

/// Permutation p-value for the energy test of equal distributions.
pub fn energy_test_pvalue(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    permutations: usize,
    rng: &mut impl rand::Rng,
) -> f64 {
    use rand::seq::SliceRandom;
    let observed = energy_distance(a, b);
    let mut pooled: Vec<&Vec<f64>> = a.iter().chain(b.iter()).collect();
    let mut exceed = 0usize;
    for _ in 0..permutations {
        pooled.shuffle(rng);
        let pa: Vec<Vec<f64>> = pooled[..a.len()].iter().map(|v| (*v).clone()).collect();
        let pb: Vec<Vec<f64>> = pooled[a.len()..].iter().map(|v| (*v).clone()).collect();
        if energy_distance(&pa, &pb) >= observed {
            exceed += 1;
        }
    }
    (exceed + 1) as f64 / (permutations + 1) as f64
}

fn pair_mean(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += dist(x, y);
        }
    }
    s / (a.len() as f64 * b.len() as f64)
}

fn self_pair_mean(a: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (i, x) in a.iter().enumerate() {
        for y in &a[i + 1..] {
            s += dist(x, y);
        }
    }
    2.0 * s / (a.len() as f64 * a.len() as f64)
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn ks_uniform_sample_passes() {
        let mut rng = crate::rng::substream(1, crate::rng::StreamRole::Scratch, 0, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d < ks_critical(xs.len(), 0.01), "d = {d}");
    }

    #[test]
    fn ks_detects_shift() {
        let mut rng = crate::rng::substream(2, crate::rng::StreamRole::Scratch, 0, 0);
        let xs: Vec<f64> = (0..5_000).map(|_| rng.random::<f64>() + 0.05).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d > ks_critical(xs.len(), 0.01));
    }

    #[test]
    fn kendall_tau_perfect_concordance() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 2.0 + 1.0).collect();
        assert!((kendall_tau(&x, &y) - 1.0).abs() < 1e-12);
        let yr: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((kendall_tau(&x, &yr) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_tau_matches_naive_on_small_samples() {
        let mut rng = crate::rng::substream(3, crate::rng::StreamRole::Scratch, 0, 0);
        for _ in 0..20 {
            let n = 40;
            let x: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 8.0).floor()).collect();
            let y: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 8.0).floor()).collect();
            let fast = kendall_tau(&x, &y);
            let naive = naive_tau_b(&x, &y);
            assert!((fast - naive).abs() < 1e-12, "{fast} vs {naive}");
        }
    }

    fn naive_tau_b(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut conc, mut disc) = (0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let dx = x[i] - x[j];
                let dy = y[i] - y[j];
                if dx != 0.0 && dy != 0.0 {
                    if (dx > 0.0) == (dy > 0.0) {
                        conc += 1;
                    } else {
                        disc += 1;
                    }
                }
            }
        }
        let n0 = (n * (n - 1) / 2) as f64;
        let ties_x: f64 = {
            let mut s = x.to_vec();
            s.sort_by(f64::total_cmp);
            run_ties(&s)
        };
        let ties_y: f64 = {
            let mut s = y.to_vec();
            s.sort_by(f64::total_cmp);
            run_ties(&s)
        };
        (conc - disc) as f64 / ((n0 - ties_x) * (n0 - ties_y)).sqrt()
    }

    fn run_ties(sorted: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i + 1;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            let r = (j - i) as f64;
            total += r * (r - 1.0) / 2.0;
            i = j;
        }
        total
    }

    #[test]
    fn energy_test_accepts_equal_laws() {
        let mut rng = crate::rng::substream(4, crate::rng::StreamRole::Scratch, 0, 0);
        let a: Vec<Vec<f64>> = (0..300)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let b: Vec<Vec<f64>> = (0..300)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let p = energy_test_pvalue(&a, &b, 99, &mut rng);
        assert!(p > 0.01, "p = {p}");
    }
}
