//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. The three bundled case-study configurations are solved
//! once and shared across criteria.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use dmrisk::config::RunConfig;
use dmrisk::dist::marginal::Marginal;
use dmrisk::dist::DistributionSpec;
use dmrisk::distortion::{DistortionFamily, DistortionSet};
use dmrisk::dm::{Aggregation, DMSpec, GammaMatrix};
use dmrisk::pipeline::{self, RiskReport};
use dmrisk::rng::{substream, StreamRole};
use dmrisk::sa::{self, DensityBank};
use dmrisk::saa::{self, SortedBank};
use dmrisk::stats;
use rand::Rng;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn load_config(name: &str) -> RunConfig {
    RunConfig::from_path(&repo_path(&format!("configs/{name}"))).expect("config loads")
}

fn config_dir() -> PathBuf {
    repo_path("configs")
}

fn solve(name: &str) -> RiskReport {
    let cfg = load_config(name);
    pipeline::run_solve(&cfg, &config_dir(), name).expect("solve runs")
}

fn example1_report() -> &'static RiskReport {
    static REPORT: OnceLock<RiskReport> = OnceLock::new();
    REPORT.get_or_init(|| solve("example1.toml"))
}

fn finance_report() -> &'static RiskReport {
    static REPORT: OnceLock<RiskReport> = OnceLock::new();
    REPORT.get_or_init(|| solve("finance.toml"))
}

fn cyber_report() -> &'static RiskReport {
    static REPORT: OnceLock<RiskReport> = OnceLock::new();
    REPORT.get_or_init(|| solve("cyber.toml"))
}

struct Checks {
    label: &'static str,
    lines: Vec<(String, bool)>,
}

impl Checks {
    fn new(label: &'static str) -> Self {
        Checks { label, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, detail: String) {
        self.lines.push((detail, ok));
    }

    fn band(&mut self, what: &str, value: f64, target: f64, tol: f64) {
        let ok = (value - target).abs() <= tol;
        self.check(ok, format!("{what} = {value:.6} (target {target} +- {tol})"));
    }

    fn finish(self) {
        let all_ok = self.lines.iter().all(|(_, ok)| *ok);
        let verdict = if all_ok { "PASS" } else { "FAIL" };
        let details: Vec<String> = self
            .lines
            .iter()
            .map(|(d, ok)| format!("{} {d}", if *ok { "ok:" } else { "FAIL:" }))
            .collect();
        println!("[{}] {verdict} | {}", self.label, details.join(" | "));
        assert!(all_ok, "[{}] {}", self.label, details.join(" | "));
    }
}

// ---------------------------------------------------------------------------
// 1. Simplex projection against the brute-force QP oracle
// ---------------------------------------------------------------------------

fn brute_force_projection(y: &[f64]) -> Vec<f64> {
    let k = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|&i| mask >> i & 1 == 1).collect();
        let s: f64 = support.iter().map(|&i| y[i]).sum();
        let lambda = (1.0 - s) / support.len() as f64;
        let mut x = vec![0.0; k];
        let mut feasible = true;
        for &i in &support {
            x[i] = y[i] + lambda;
            if x[i] < -1e-12 {
                feasible = false;
            }
        }
        for i in 0..k {
            if mask >> i & 1 == 0 && y[i] + lambda > 1e-12 {
                feasible = false;
            }
        }
        if !feasible {
            continue;
        }
        let dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().map_or(true, |(d, _)| dist < *d) {
            best = Some((dist, x));
        }
    }
    best.expect("feasible support exists").1
}

#[test]
fn criterion_01_simplex_projection_oracle() {
    let mut checks = Checks::new("criterion 01 simplex-projection");
    let started = std::time::Instant::now();
    let mut rng = substream(101, StreamRole::Scratch, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = 2 + (rng.random::<f64>() * 7.0) as usize;
        let y: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect();
        let fast = sa::project_simplex(&y);
        let brute = brute_force_projection(&y);
        for (a, b) in fast.iter().zip(&brute) {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    checks.check(worst <= 1e-10, format!("max deviation {worst:.2e} (<= 1e-10)"));
    checks.check(elapsed < 1.0, format!("runtime {elapsed:.3}s (< 1s)"));
    checks.finish();
}

// ---------------------------------------------------------------------------
// 2. Reconstruction identity of both shipped distortion families
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_distortion_identity() {
    let mut checks = Checks::new("criterion 02 distortion-identity");
    let started = std::time::Instant::now();
    let rational = DistortionSet::new(DistortionFamily::Rational { alpha: 0.1 }, 2).unwrap();
    let piecewise = DistortionSet::new(
        DistortionFamily::Piecewise { weights: vec![0.92, 0.04, 0.04] },
        7,
    )
    .unwrap();
    let e1 = rational.reconstruction_error(10_000);
    let e2 = piecewise.reconstruction_error(10_000);
    checks.check(e1 <= 1e-12, format!("rational family error {e1:.2e} (<= 1e-12)"));
    checks.check(e2 <= 1e-12, format!("piecewise family error {e2:.2e} (<= 1e-12)"));
    let elapsed = started.elapsed().as_secs_f64();
    checks.check(elapsed < 1.0, format!("runtime {elapsed:.3}s (< 1s)"));
    checks.finish();
}

// ---------------------------------------------------------------------------
// 3. AV@R estimator sanity
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_avar_estimator() {
    let mut checks = Checks::new("criterion 03 avar-estimator");
    let mut rng = substream(103, StreamRole::Scratch, 0, 0);
    let uniform: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>()).collect();
    let (_, avar) = sa::empirical_var_avar(&uniform, 0.95).unwrap();
    checks.band("uniform avar", avar, 0.975, 0.002);
    let ladder: Vec<f64> = (1..=100).map(|i| i as f64).collect();
    let (v, c) = sa::empirical_var_avar(&ladder, 0.95).unwrap();
    checks.check(v == 95.0 && c == 98.0, format!("ladder (var, avar) = ({v}, {c}), expected (95, 98)"));
    checks.finish();
}

// ---------------------------------------------------------------------------
// 4. Likelihood-ratio gradient vs common-random-number finite differences
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_gradient_finite_difference() {
    let mut checks = Checks::new("criterion 04 lr-gradient-fd");
    let corr = dmrisk::copula::CorrelationMatrix::new(vec![vec![1.0, 0.3], vec![0.3, 1.0]])
        .unwrap();
    let spec = DMSpec::new(
        DistortionSet::new(DistortionFamily::Piecewise { weights: vec![0.9, 0.1] }, 2).unwrap(),
        dmrisk::copula::CopulaSpec::Gaussian { correlation: corr },
        vec![
            dmrisk::copula::CopulaSpec::Gumbel { theta: 3.0, dim: 2 },
            dmrisk::copula::CopulaSpec::Independence { dim: 2 },
        ],
        vec![
            Marginal::Parametric(DistributionSpec::Lognormal { mu: 0.0, sigma: 0.5 }),
            Marginal::Parametric(DistributionSpec::Lognormal { mu: 0.0, sigma: 0.5 }),
        ],
        Aggregation::Sum,
    )
    .unwrap();
    let p = 0.95;
    let n = 1_000_000;
    let gamma = GammaMatrix::new(vec![vec![0.5, 0.5]]).unwrap();
    let alphas = spec.alphas();

    let bank = spec.component_losses(n, 104).unwrap();
    let densities = DensityBank::fit(&bank, 1000, None).unwrap();
    let losses = spec.sample_losses(&gamma, n, 105, StreamRole::Scratch, 0).unwrap();
    let (var, _) = sa::empirical_var_avar(&losses, p).unwrap();
    let grad = sa::lr_gradient(&losses, var, &densities, &gamma, &alphas, p).unwrap();
    let lr_slope = grad[0][0] - grad[0][1];

    // central finite difference along the simplex edge on the fixed bank
    let sorted = SortedBank::from_bank(&bank);
    let h = 0.05;
    let eps = 0.5 / n as f64;
    let eval = |g: f64| {
        let gm = GammaMatrix::new(vec![vec![g, 1.0 - g]]).unwrap();
        sorted.evaluate(&gm, &alphas, p, eps).unwrap().1
    };
    let fd_slope = (eval(0.5 + h) - eval(0.5 - h)) / (2.0 * h);
    let rel = (lr_slope - fd_slope).abs() / fd_slope.abs();
    checks.check(
        rel <= 0.05,
        format!("LR slope {lr_slope:.5} vs FD slope {fd_slope:.5}, relative error {rel:.4} (<= 0.05)"),
    );
    checks.finish();
}

// ---------------------------------------------------------------------------
// 5. Mixture-law equivalence on random small specifications
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_mixture_equivalence() {
    let mut checks = Checks::new("criterion 05 mixture-equivalence");
    let n = 100_000;
    for trial in 0..10u64 {
        let mut rng = substream(105, StreamRole::Scratch, trial, 0);
        let spec = random_small_spec(&mut rng);
        let k = spec.num_candidates();
        let gamma = {
            let col = |r: &mut rand_chacha::ChaCha12Rng| {
                let raw: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 0.05).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / total).collect::<Vec<f64>>()
            };
            GammaMatrix::new(vec![col(&mut rng), col(&mut rng)]).unwrap()
        };
        let direct = spec
            .sample_losses(&gamma, n, 1000 + trial, StreamRole::Scratch, 1)
            .unwrap();
        let bank = spec.component_losses(n, 2000 + trial).unwrap();
        let alphas = spec.alphas();
        let mut pick_rng = substream(3000 + trial, StreamRole::Scratch, 2, 0);
        let mut counters = vec![0usize; 1 + 2 * k];
        let mut mixed = Vec::with_capacity(n);
        for _ in 0..n {
            let z1 = pick_weighted(&alphas, &mut pick_rng);
            let (arr, idx) = if z1 == 0 {
                (bank.central(), 0)
            } else {
                let z2 = pick_weighted(gamma.column(z1), &mut pick_rng);
                (bank.component(z1, z2), 1 + (z1 - 1) * k + z2)
            };
            mixed.push(arr[counters[idx]]);
            counters[idx] += 1;
        }
        let d = stats::ks_two_sample(&direct, &mixed);
        let crit = stats::ks_two_sample_critical(n, n, 0.01);
        checks.check(d < crit, format!("spec {trial}: ks {d:.5} < {crit:.5}"));
    }
    checks.finish();
}

fn pick_weighted(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn random_small_spec(rng: &mut rand_chacha::ChaCha12Rng) -> DMSpec {
    use dmrisk::copula::{CopulaSpec, CorrelationMatrix};
    let copula = |r: &mut rand_chacha::ChaCha12Rng| -> CopulaSpec {
        match (r.random::<f64>() * 5.0) as usize {
            0 => {
                let rho = r.random::<f64>() * 0.9 - 0.2;
                CopulaSpec::Gaussian {
                    correlation: CorrelationMatrix::new(vec![vec![1.0, rho], vec![rho, 1.0]])
                        .unwrap(),
                }
            }
            1 => CopulaSpec::Clayton { theta: 0.3 + r.random::<f64>() * 2.0, dim: 2 },
            2 => CopulaSpec::Gumbel { theta: 1.0 + r.random::<f64>() * 2.0, dim: 2 },
            3 => CopulaSpec::Frank { theta: 0.5 + r.random::<f64>() * 3.0, dim: 2 },
            _ => CopulaSpec::Independence { dim: 2 },
        }
    };
    let marginal = |r: &mut rand_chacha::ChaCha12Rng| -> Marginal {
        Marginal::Parametric(match (r.random::<f64>() * 4.0) as usize {
            0 => DistributionSpec::Normal { mu: r.random::<f64>(), sigma: 0.5 + r.random::<f64>() },
            1 => DistributionSpec::Lognormal { mu: 0.0, sigma: 0.3 + 0.6 * r.random::<f64>() },
            2 => DistributionSpec::Gamma { shape: 1.0 + 2.0 * r.random::<f64>(), scale: 1.0 },
            _ => DistributionSpec::Uniform { a: 0.0, b: 1.0 + r.random::<f64>() },
        })
    };
    let alpha = 0.05 + 0.15 * rng.random::<f64>();
    DMSpec::new(
        DistortionSet::new(DistortionFamily::Rational { alpha }, 2).unwrap(),
        copula(rng),
        vec![copula(rng), copula(rng)],
        vec![marginal(rng), marginal(rng)],
        Aggregation::Sum,
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// 6. First-order condition of the bisection root
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_foc_bisection() {
    let mut checks = Checks::new("criterion 06 foc-bisection");
    let n = 1_000_000;
    let mut rng = substream(106, StreamRole::Scratch, 0, 0);
    let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();

    // identical-component bank: the mixture CDF is the plain empirical CDF
    let bank = dmrisk::dm::ComponentSampleBank::from_components(
        values.clone(),
        vec![values.clone(); 4],
        2,
        2,
    )
    .unwrap();
    let sorted = SortedBank::from_bank(&bank);
    let gamma = GammaMatrix::uniform(2, 2);
    let alphas = vec![0.9, 0.05, 0.05];
    let p = 0.95;
    let u = sorted.bisect_u(&gamma, &alphas, p, 0.5 / n as f64).unwrap();
    let at = sorted.pbar(u, &gamma, &alphas).unwrap();
    let before = sorted.pbar_strict(u, &gamma, &alphas).unwrap();
    checks.check(
        before <= p && p <= at,
        format!("subgradient sandwich {before:.6} <= {p} <= {at:.6}"),
    );
    checks.check(
        (at - p).abs() <= 1.0 / n as f64,
        format!("|pbar - p| = {:.2e} (<= 1/N = {:.2e})", (at - p).abs(), 1.0 / n as f64),
    );
    let c = sorted.avar_at(&gamma, &alphas, p, u).unwrap();
    let (_, pooled) = sa::empirical_var_avar(&values, p).unwrap();
    // pooled empirical AV@R of the same draws; discrepancy within 3 SE
    let se = {
        let (v, _) = sa::empirical_var_avar(&values, p).unwrap();
        let excess: Vec<f64> = values.iter().map(|&x| (x - v).max(0.0)).collect();
        (stats::variance(&excess) / n as f64).sqrt() / (1.0 - p)
    };
    checks.check(
        (c - pooled).abs() <= 3.0 * se,
        format!("avar {c:.6} vs pooled {pooled:.6} within 3 se = {:.2e}", 3.0 * se),
    );
    checks.finish();
}

// ---------------------------------------------------------------------------
// 7. Two-dimensional case study reproduction
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_example_case_study() {
    let report = example1_report();
    let mut checks = Checks::new("criterion 07 example-case-study");
    let early = report
        .sa_trace
        .iter()
        .take(10)
        .any(|row| row.avar >= 14.3 && row.avar <= 15.1);
    checks.check(
        early,
        format!(
            "SA reaches [14.3, 15.1] within 10 iterations (trace: {:?})",
            report.sa_trace.iter().take(10).map(|r| (r.avar * 100.0).round() / 100.0).collect::<Vec<_>>()
        ),
    );
    let mut selected = report.selected_candidates.clone();
    selected.sort_unstable();
    checks.check(
        selected == vec![1, 3],
        format!("selected candidates {:?} (expected {{C1, C3}})", report.selected_candidates),
    );
    // upper-slot argmax column puts all mass on candidate 3
    let upper = &report.saa.gamma_star[1];
    checks.check(
        (upper[2] - 1.0).abs() < 1e-9,
        format!("upper-slot argmax weights {upper:?} (expected mass 1 on candidate 3)"),
    );
    checks.check(
        report.saa.c_star >= 14.4 && report.saa.c_star <= 15.0,
        format!("saa value {:.4} in [14.4, 15.0]", report.saa.c_star),
    );
    let elapsed = report.wall_clock_seconds;
    checks.check(elapsed < 600.0, format!("solve wall clock {elapsed:.0}s (< 600s)"));
    checks.finish();
}

// ---------------------------------------------------------------------------
// 8. Selection trace on the published sixteen-candidate weight matrix
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_selection_trace() {
    let mut checks = Checks::new("criterion 08 selection-trace");
    let fix = |col: Vec<f64>| {
        let total: f64 = col.iter().sum();
        col.into_iter().map(|v| v / total).collect::<Vec<f64>>()
    };
    let col1 = fix(vec![
        0.0490, 0.0486, 0.0678, 0.0696, 0.0496, 0.0677, 0.0694, 0.0496, 0.0631, 0.0634, 0.0700,
        0.0704, 0.0616, 0.0700, 0.0699, 0.0614,
    ]);
    let col2 = fix(vec![
        0.0652, 0.0653, 0.0617, 0.0609, 0.0652, 0.0614, 0.0616, 0.0658, 0.0624, 0.0628, 0.0612,
        0.0608, 0.0615, 0.0615, 0.0624, 0.0622,
    ]);
    let gamma = GammaMatrix::new(vec![col1, col2]).unwrap();
    let gradient = vec![vec![0.0; 16]; 2];
    let started = std::time::Instant::now();
    let picked = sa::select_copulas(&gamma, &gradient, &[0.92, 0.04, 0.04], 3).unwrap();
    let elapsed = started.elapsed();
    let labels: Vec<usize> = picked.iter().map(|&j| j + 1).collect();
    checks.check(
        labels == vec![12, 8, 14],
        format!("selection order {labels:?} (expected [12, 8, 14])"),
    );
    checks.check(
        elapsed.as_micros() < 10_000,
        format!("runtime {:?} (deterministic, well under 1 ms of work)", elapsed),
    );
    checks.finish();
}

// ---------------------------------------------------------------------------
// 9. Index-portfolio case study with fixtures
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_finance_case_study() {
    let report = finance_report();
    let mut checks = Checks::new("criterion 09 finance-case-study");
    // The published benchmark used the correlation of the entire return
    // panel, which is not part of the printed parameter set; the shipped
    // configuration can only use the central-region matrix, which lands
    // below the published value. Kept as stated so the gap stays visible.
    checks.band(
        "benchmark avar",
        report.benchmark.as_ref().expect("benchmark section").avar,
        0.5132,
        0.01,
    );
    checks.band("initial DM avar", report.sa.initial_avar, 0.652, 0.02);
    checks.band("saa value", report.saa.c_star, 0.6555, 0.01);
    let winners: Vec<Vec<usize>> = report.saa.winners.clone();
    checks.check(
        winners.iter().all(|slot| slot == &vec![12]),
        format!("candidate 12 wins every slot outright: {winners:?}"),
    );
    let elapsed = report.wall_clock_seconds;
    checks.check(elapsed < 1200.0, format!("solve wall clock {elapsed:.0}s (< 1200s)"));
    checks.finish();
}

// ---------------------------------------------------------------------------
// 10. Breach-record case study with fixtures
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_cyber_case_study() {
    let report = cyber_report();
    let mut checks = Checks::new("criterion 10 cyber-case-study");
    // The published marginal table is only consistent with reading its
    // sigma column as the variance of the log data; even then the
    // reproduced levels sit roughly a sixth above the published ones
    // (unrecoverable preprocessing of the breach records). Bands kept as
    // stated so the gap stays visible.
    checks.band(
        "benchmark avar",
        report.benchmark.as_ref().expect("benchmark section").avar,
        45.65,
        1.5,
    );
    checks.band("initial DM avar", report.sa.initial_avar, 49.4, 2.0);
    checks.band("saa value", report.saa.c_star, 53.7, 2.5);
    let gumbel_wins = report
        .saa
        .winners
        .iter()
        .all(|slot| slot.len() == 1 && (slot[0] == 5 || slot[0] == 6));
    checks.check(
        gumbel_wins,
        format!("Gumbel candidates (5/6) win every slot: {:?}", report.saa.winners),
    );
    let elapsed = report.wall_clock_seconds;
    checks.check(elapsed < 1200.0, format!("solve wall clock {elapsed:.0}s (< 1200s)"));
    checks.finish();
}

// ---------------------------------------------------------------------------
// 11. Importance sampling
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_importance_sampling() {
    let mut checks = Checks::new("criterion 11 importance-sampling");
    match dmrisk::importance::esscher_ig(1.0, 0.5, 0.1).unwrap() {
        DistributionSpec::InverseGaussian { mu, .. } => {
            checks.check(
                (mu - 1.2910).abs() < 5e-5,
                format!("tilted mean {mu:.6} (reported 1.2910)"),
            );
        }
        _ => checks.check(false, "tilt did not return an inverse Gaussian".into()),
    }
    match dmrisk::importance::esscher_ig(1.0, 1.2, 0.3).unwrap() {
        DistributionSpec::InverseGaussian { mu, .. } => {
            checks.check(
                (mu - 1.4142).abs() < 5e-5,
                format!("tilted mean {mu:.6} (reported 1.4142)"),
            );
        }
        _ => checks.check(false, "tilt did not return an inverse Gaussian".into()),
    }
    let report = example1_report();
    let is = report.importance.as_ref().expect("is section");
    checks.check(
        is.variance_ratio >= 3.0,
        format!(
            "variance ratio {:.2} over {} paired replications (>= 3)",
            is.variance_ratio, is.replications
        ),
    );
    checks.finish();
}

// ---------------------------------------------------------------------------
// 12. Concavity of the sample objective along simplex segments
// ---------------------------------------------------------------------------

#[test]
fn criterion_12_concavity_segments() {
    let mut checks = Checks::new("criterion 12 concavity");
    let cfg = load_config("example1.toml");
    let spec = cfg.build_problem(&config_dir()).unwrap();
    let bank = spec.component_losses(100_000, 112).unwrap();
    let sorted = SortedBank::from_bank(&bank);
    let alphas = spec.alphas();
    let p = cfg.problem.p;
    let eps = 0.5 / sorted.n() as f64;
    let mut rng = substream(112, StreamRole::Scratch, 1, 0);
    let mut random_gamma = || -> GammaMatrix {
        let col = |r: &mut rand_chacha::ChaCha12Rng| {
            let raw: Vec<f64> = (0..5).map(|_| r.random::<f64>() + 0.01).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / total).collect::<Vec<f64>>()
        };
        GammaMatrix::new(vec![col(&mut rng), col(&mut rng)]).unwrap()
    };
    let mut failures = 0;
    let mut worst_margin = f64::INFINITY;
    for _ in 0..20 {
        let a = random_gamma();
        let b = random_gamma();
        let mid = GammaMatrix::new(
            (1..=2)
                .map(|i| {
                    a.column(i)
                        .iter()
                        .zip(b.column(i))
                        .map(|(&x, &y)| 0.5 * (x + y))
                        .collect()
                })
                .collect(),
        )
        .unwrap();
        let ca = sorted.evaluate(&a, &alphas, p, eps).unwrap().1;
        let cb = sorted.evaluate(&b, &alphas, p, eps).unwrap().1;
        let cm = sorted.evaluate(&mid, &alphas, p, eps).unwrap().1;
        let se_a = saa::saa_standard_error(&bank, &a, &alphas, p, 10).unwrap();
        let se_b = saa::saa_standard_error(&bank, &b, &alphas, p, 10).unwrap();
        let se_m = saa::saa_standard_error(&bank, &mid, &alphas, p, 10).unwrap();
        let pooled = (se_a * se_a + se_b * se_b + se_m * se_m).sqrt();
        let margin = cm - (0.5 * (ca + cb) - 3.0 * pooled);
        worst_margin = worst_margin.min(margin);
        if margin < 0.0 {
            failures += 1;
        }
    }
    checks.check(
        failures == 0,
        format!("20 segments, {failures} violations, worst margin {worst_margin:.4}"),
    );
    checks.finish();
}

// ---------------------------------------------------------------------------
// 13. Determinism of the full solve
// ---------------------------------------------------------------------------

#[test]
fn criterion_13_determinism() {
    let mut checks = Checks::new("criterion 13 determinism");
    let mut cfg = load_config("example1.toml");
    // scaled down: determinism is a structural property, not a size one
    cfg.sa.sample_size = 20_000;
    cfg.sa.t_min = 3;
    cfg.sa.t_max = 5;
    cfg.solve.bank_size = 30_000;
    cfg.saa.bank_size = 30_000;
    cfg.importance = None;
    cfg.benchmark = None;
    let a = pipeline::run_solve(&cfg, &config_dir(), "determinism").unwrap();
    let b = pipeline::run_solve(&cfg, &config_dir(), "determinism").unwrap();
    let strip = |r: &RiskReport| {
        let mut v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        v["wall_clock_seconds"] = serde_json::json!(null);
        v
    };
    checks.check(strip(&a) == strip(&b), "two solves with one seed produce identical reports".into());
    checks.finish();
}
