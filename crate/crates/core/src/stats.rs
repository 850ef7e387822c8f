//! Two-sample tests and the postintervention identifiability check.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::euler::{simulate_at, Grid};
use crate::generator::{compare_generators, test_field_battery};
use crate::intervention::{intervene_sde, InterventionSpec};
use crate::rng;
use crate::scalar::Scalar;
use crate::system::{halton_points, ProbeBox, SdeSystem};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov statistic with the asymptotic p-value.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> Result<TestOutcome> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(TestOutcome {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    })
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let s: f64 = (1..=10)
            .map(|k| {
                let odd = (2 * k - 1) as f64;
                (-odd * odd * pi2 / (8.0 * lambda * lambda)).exp()
            })
            .sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                let k = k as f64;
                sign * (-2.0 * k * k * lambda * lambda).exp()
            })
            .sum();
        2.0 * s
    };
    p.clamp(0.0, 1.0)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Largest pooled sample accepted by [`energy_distance_test`]; the pooled
/// distance matrix is held in memory.
pub const ENERGY_MAX_POOLED: usize = 10_000;

/// Energy-distance statistic `nm/(n+m) · E` with a permutation p-value
/// `(1 + #{T_π ≥ T}) / (1 + n_permutations)`.
pub fn energy_distance_test(a: &[Vec<f64>], b: &[Vec<f64>], n_permutations: usize, seed: u64) -> Result<TestOutcome> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let dim = a[0].len();
    if let Some(bad) = a.iter().chain(b).find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            what: "energy test sample",
            expected: dim,
            found: bad.len(),
        });
    }
    let pooled: Vec<&[f64]> = a.iter().chain(b).map(|v| v.as_slice()).collect();
    let total = pooled.len();
    if total > ENERGY_MAX_POOLED {
        return Err(Error::InvalidArgument(format!(
            "energy test needs at most {ENERGY_MAX_POOLED} pooled points, got {total}; subsample first"
        )));
    }
    let dist: Vec<f64> = (0..total)
        .into_par_iter()
        .flat_map_iter(|i| {
            let pooled = &pooled;
            (0..total).map(move |j| euclid(pooled[i], pooled[j]))
        })
        .collect();
    let row_sums: Vec<f64> = dist.chunks_exact(total).map(|r| r.iter().sum()).collect();
    let grand: f64 = row_sums.iter().sum();
    let (n, m) = (a.len(), b.len());
    let statistic = |labels: &[bool]| {
        let mask: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let (mut sxx, mut syy) = (0.0, 0.0);
        for (i, row) in dist.chunks_exact(total).enumerate() {
            let inside = masked_sum(row, &mask);
            if labels[i] {
                sxx += inside;
            } else {
                syy += row_sums[i] - inside;
            }
        }
        energy_from_sums(grand, sxx, syy, n, m)
    };
    let observed: Vec<bool> = (0..total).map(|i| i < n).collect();
    let t_obs = statistic(&observed);
    let exceed: usize = (0..n_permutations)
        .into_par_iter()
        .map(|k| {
            let mut labels = observed.clone();
            let mut r = rng::stream(seed, k as u64, 0);
            labels.shuffle(&mut r);
            usize::from(statistic(&labels) >= t_obs - 1e-12 * t_obs.abs().max(1e-300))
        })
        .sum();
    Ok(TestOutcome {
        statistic: t_obs,
        p_value: (1 + exceed) as f64 / (1 + n_permutations) as f64,
    })
}

/// `Σ row_j mask_j` with independent accumulators so the loop vectorizes.
fn masked_sum(row: &[f64], mask: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let rc = row.chunks_exact(8);
    let mc = mask.chunks_exact(8);
    let tail: f64 = rc.remainder().iter().zip(mc.remainder()).map(|(r, m)| r * m).sum();
    for (r, m) in rc.zip(mc) {
        for k in 0..8 {
            acc[k] += r[k] * m[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// `sxx`, `syy` are sums over ordered within-group pairs; `grand` over all
/// ordered pairs.
fn energy_from_sums(grand: f64, sxx: f64, syy: f64, n: usize, m: usize) -> f64 {
    let sxy = 0.5 * (grand - sxx - syy);
    let (nf, mf) = (n as f64, m as f64);
    let e = 2.0 * sxy / (nf * mf) - sxx / (nf * nf) - syy / (mf * mf);
    nf * mf / (nf + mf) * e
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentComparison {
    pub mean_z: Vec<f64>,
    pub variance_z: Vec<f64>,
}

/// Per-coordinate two-sample z-scores for means and variances.
pub fn moment_compare(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<MomentComparison> {
    let needed = 2;
    for s in [a, b] {
        if s.len() < needed {
            return Err(Error::InsufficientSample { needed, found: s.len() });
        }
    }
    let dim = a[0].len();
    let moments = |s: &[Vec<f64>], i: usize| {
        let n = s.len() as f64;
        let mean = s.iter().map(|v| v[i]).sum::<f64>() / n;
        let var = s.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = s.iter().map(|v| (v[i] - mean).powi(4)).sum::<f64>() / n;
        (n, mean, var, m4)
    };
    let z = |diff: f64, se2: f64| {
        if diff == 0.0 {
            0.0
        } else if se2 > 0.0 {
            diff / se2.sqrt()
        } else {
            diff.signum() * f64::INFINITY
        }
    };
    let mut mean_z = Vec::with_capacity(dim);
    let mut variance_z = Vec::with_capacity(dim);
    for i in 0..dim {
        let (na, ma, va, qa) = moments(a, i);
        let (nb, mb, vb, qb) = moments(b, i);
        mean_z.push(z(ma - mb, va / na + vb / nb));
        let var_se2 = ((qa - va * va) / na).max(0.0) + ((qb - vb * vb) / nb).max(0.0);
        variance_z.push(z(va - vb, var_se2));
    }
    Ok(MomentComparison { mean_z, variance_z })
}

/// Holm step-down: per test, the threshold it was compared against and
/// whether it was rejected.
pub fn holm(p_values: &[f64], alpha: f64) -> Vec<(f64, bool)> {
    let k = p_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut out = vec![(alpha, false); k];
    let mut rejecting = true;
    for (rank, &i) in order.iter().enumerate() {
        let threshold = alpha / (k - rank) as f64;
        rejecting = rejecting && p_values[i] <= threshold;
        out[i] = (threshold, rejecting);
    }
    out
}

/// Holm-adjusted p-values.
pub fn holm_adjusted(p_values: &[f64]) -> Vec<f64> {
    let k = p_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut out = vec![1.0; k];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((k - rank) as f64 * p_values[i]).min(1.0));
        out[i] = running;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Inconsistent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// Equal generators at every probe and equal initial laws.
    Satisfied,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubTest {
    pub test: String,
    pub time: f64,
    /// `None` for joint tests across coordinates.
    pub coordinate: Option<String>,
    pub statistic: f64,
    pub p_value: f64,
    pub corrected_alpha: f64,
    pub rejected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestReport {
    pub test: String,
    /// Largest KS distance across the marginal tests.
    pub statistic: f64,
    /// Smallest Holm-adjusted p-value.
    pub p_value: Option<f64>,
    /// Threshold the smallest p-value was compared against.
    pub corrected_alpha: f64,
    pub alpha: f64,
    pub verdict: Verdict,
    pub correction: String,
    pub hypothesis: Hypothesis,
    pub generator_diffusion_diff: f64,
    pub generator_drift_diff: f64,
    pub generator_jump_diff: f64,
    pub n_paths: usize,
    pub used_paths: [usize; 2],
    pub exploded_paths: [usize; 2],
    pub breakdown: Vec<SubTest>,
}

impl TestReport {
    /// Assembles a report from raw subtests; Holm correction is applied here.
    pub fn from_subtests(test: &str, mut subtests: Vec<SubTest>, alpha: f64) -> Self {
        let ps: Vec<f64> = subtests.iter().map(|s| s.p_value).collect();
        let decisions = holm(&ps, alpha);
        let adjusted = holm_adjusted(&ps);
        for (s, (thr, rej)) in subtests.iter_mut().zip(&decisions) {
            s.corrected_alpha = *thr;
            s.rejected = *rej;
        }
        let statistic = subtests
            .iter()
            .filter(|s| s.test == "ks")
            .map(|s| s.statistic)
            .fold(0.0, f64::max);
        let any = subtests.iter().any(|s| s.rejected);
        TestReport {
            test: test.to_owned(),
            statistic,
            p_value: adjusted.iter().copied().reduce(f64::min),
            corrected_alpha: alpha / ps.len().max(1) as f64,
            alpha,
            verdict: if any { Verdict::Inconsistent } else { Verdict::Consistent },
            correction: "holm".into(),
            hypothesis: Hypothesis::Satisfied,
            generator_diffusion_diff: 0.0,
            generator_drift_diff: 0.0,
            generator_jump_diff: 0.0,
            n_paths: 0,
            used_paths: [0, 0],
            exploded_paths: [0, 0],
            breakdown: subtests,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentifiabilityOptions {
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub delta: f64,
    pub seed: u64,
    pub alpha: f64,
    pub n_permutations: usize,
    /// Paths per group entering the energy test.
    pub energy_subsample: usize,
    /// Probe points for the generator comparison.
    pub generator_points: usize,
    pub generator_tol: f64,
    pub r_e: f64,
    /// Minimum non-exploded paths per group.
    pub min_paths: usize,
}

impl Default for IdentifiabilityOptions {
    fn default() -> Self {
        Self {
            times: vec![0.5, 1.0],
            n_paths: 10_000,
            delta: 1e-3,
            seed: 0,
            alpha: 0.01,
            n_permutations: 500,
            energy_subsample: 1000,
            generator_points: 256,
            generator_tol: 1e-12,
            r_e: 1.0,
            min_paths: 1000,
        }
    }
}

/// Tests whether two systems yield the same postintervention law.
///
/// The generator comparison decides [`Hypothesis`]; the statistical tests
/// run regardless so that a violated hypothesis can still be shown to matter.
/// Both postintervention systems are simulated with independent seeds.
pub fn identifiability_check<T: Scalar>(
    a: &SdeSystem<T>,
    b: &SdeSystem<T>,
    spec: &InterventionSpec<T>,
    opts: &IdentifiabilityOptions,
) -> Result<TestReport> {
    if opts.times.is_empty() {
        return Err(Error::InvalidArgument("no comparison times".into()));
    }
    if a.p() != b.p() {
        return Err(Error::DimensionMismatch {
            what: "state dimension",
            expected: a.p(),
            found: b.p(),
        });
    }
    let horizon = opts.times.iter().copied().fold(0.0, f64::max);
    let grid = Grid::new(T::of(horizon), T::of(opts.delta))?;
    let indices: Vec<usize> = opts
        .times
        .iter()
        .map(|&t| {
            grid.index_of(T::of(t))
                .ok_or_else(|| Error::InvalidGrid(format!("time {t} is not a multiple of {}", opts.delta)))
        })
        .collect::<Result<_>>()?;

    let p = a.p();
    let bx = a
        .coeff
        .probe_box()
        .cloned()
        .unwrap_or_else(|| ProbeBox::cube(p, T::of(-5.0), T::of(5.0)));
    let points: Vec<Vec<T>> = halton_points(p, opts.generator_points)
        .into_iter()
        .map(|u| {
            u.iter()
                .enumerate()
                .map(|(k, &uk)| bx.lower[k] + (bx.upper[k] - bx.lower[k]) * T::of(uk))
                .collect()
        })
        .collect();
    let centre: Vec<T> = a.initial.mean().to_vec();
    let cmp = compare_generators(a, b, &points, &test_field_battery(&centre), T::of(opts.r_e), T::of(opts.generator_tol))?;
    let hypothesis = if cmp.structurally_equal && a.initial == b.initial {
        Hypothesis::Satisfied
    } else {
        Hypothesis::Violated
    };

    let post_a = intervene_sde(a, spec)?;
    let post_b = intervene_sde(b, spec)?;
    let sa = simulate_at(&post_a, &grid, &indices, opts.n_paths, rng::derive_seed(opts.seed, 1))?;
    let sb = simulate_at(&post_b, &grid, &indices, opts.n_paths, rng::derive_seed(opts.seed, 2))?;
    let used = [sa.n_paths() - sa.exploded_count(), sb.n_paths() - sb.exploded_count()];
    if let Some(&few) = used.iter().find(|&&u| u < opts.min_paths) {
        return Err(Error::InsufficientSample {
            needed: opts.min_paths,
            found: few,
        });
    }

    let labels = &post_a.labels;
    let mut subtests = Vec::new();
    let mut joint_a: Vec<Vec<f64>> = Vec::new();
    let mut joint_b: Vec<Vec<f64>> = Vec::new();
    for (slot, &t) in opts.times.iter().enumerate() {
        let xa = sa.slice(slot);
        let xb = sb.slice(slot);
        for (i, label) in labels.iter().enumerate() {
            let ca: Vec<f64> = xa.iter().map(|r| r[i]).collect();
            let cb: Vec<f64> = xb.iter().map(|r| r[i]).collect();
            let ks = ks_two_sample(&ca, &cb)?;
            subtests.push(SubTest {
                test: "ks".into(),
                time: t,
                coordinate: Some(label.clone()),
                statistic: ks.statistic,
                p_value: ks.p_value,
                corrected_alpha: opts.alpha,
                rejected: false,
            });
        }
        if slot == 0 {
            joint_a = xa;
            joint_b = xb;
        } else {
            for (row, extra) in joint_a.iter_mut().zip(xa) {
                row.extend(extra);
            }
            for (row, extra) in joint_b.iter_mut().zip(xb) {
                row.extend(extra);
            }
        }
    }
    joint_a.truncate(opts.energy_subsample.min(ENERGY_MAX_POOLED / 2));
    joint_b.truncate(opts.energy_subsample.min(ENERGY_MAX_POOLED / 2));
    let energy = energy_distance_test(&joint_a, &joint_b, opts.n_permutations, rng::derive_seed(opts.seed, 3))?;
    subtests.push(SubTest {
        test: "energy".into(),
        time: horizon,
        coordinate: None,
        statistic: energy.statistic,
        p_value: energy.p_value,
        corrected_alpha: opts.alpha,
        rejected: false,
    });

    let mut report = TestReport::from_subtests("identifiability", subtests, opts.alpha);
    report.hypothesis = hypothesis;
    report.generator_diffusion_diff = cmp.max_diffusion_diff;
    report.generator_drift_diff = cmp.max_beta_diff;
    report.generator_jump_diff = cmp.max_jump_diff;
    report.n_paths = opts.n_paths;
    report.used_paths = used;
    report.exploded_paths = [sa.exploded_count(), sb.exploded_count()];
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.sample::<f64, _>(StandardNormal) + shift).collect()
    }

    #[test]
    fn ks_identical_samples() {
        let x = normals(1, 500, 0.0);
        let r = ks_two_sample(&x, &x).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(ks_two_sample(&[], &x).unwrap_err(), Error::EmptySample);
    }

    #[test]
    fn ks_detects_shift() {
        let r = ks_two_sample(&normals(2, 10_000, 0.0), &normals(3, 10_000, 1.0)).unwrap();
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn ks_split_sample_is_calibrated() {
        let accepted = (0..100)
            .filter(|&s| {
                let x = normals(100 + s, 20_000, 0.0);
                ks_two_sample(&x[..10_000], &x[10_000..]).unwrap().p_value > 0.01
            })
            .count();
        assert!(accepted >= 95, "{accepted}");
    }

    #[test]
    fn ks_statistic_by_hand() {
        // ECDF gap is largest right after 2: 2/3 vs 0.
        let r = ks_two_sample(&[1.0, 2.0, 3.0], &[2.5, 3.5, 4.5]).unwrap();
        assert!((r.statistic - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_series_are_continuous() {
        let below = kolmogorov_survival(1.18 - 1e-9);
        let above = kolmogorov_survival(1.18 + 1e-9);
        assert!((below - above).abs() < 1e-8);
        // Known quantile: P(K > 1.358) ≈ 0.05.
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn energy_zero_for_equal_multisets() {
        let a: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * i) as f64 % 7.0]).collect();
        let mut b = a.clone();
        b.reverse();
        let r = energy_distance_test(&a, &b, 50, 1).unwrap();
        assert!(r.statistic.abs() < 1e-9);
        assert!(r.p_value > 0.5);
    }

    #[test]
    fn energy_detects_mean_shift() {
        let mk = |seed, shift| -> Vec<Vec<f64>> {
            let x = normals(seed, 4000, shift);
            x.chunks(2).map(|c| c.to_vec()).collect()
        };
        let r = energy_distance_test(&mk(5, 0.0), &mk(6, 0.5), 200, 2).unwrap();
        assert!(r.p_value < 0.01, "{r:?}");
    }

    #[test]
    fn energy_split_sample_is_calibrated() {
        let accepted = (0..100)
            .filter(|&s| {
                let x = normals(500 + s, 400, 0.0);
                let rows: Vec<Vec<f64>> = x.chunks(2).map(|c| c.to_vec()).collect();
                energy_distance_test(&rows[..100], &rows[100..], 199, s).unwrap().p_value > 0.01
            })
            .count();
        assert!(accepted >= 95, "{accepted}");
    }

    #[test]
    fn energy_rejects_ragged_input() {
        assert!(matches!(
            energy_distance_test(&[vec![1.0]], &[vec![1.0, 2.0]], 10, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn energy_is_deterministic() {
        let a: Vec<Vec<f64>> = normals(8, 100, 0.0).chunks(1).map(|c| c.to_vec()).collect();
        let b: Vec<Vec<f64>> = normals(9, 100, 0.2).chunks(1).map(|c| c.to_vec()).collect();
        assert_eq!(energy_distance_test(&a, &b, 99, 4).unwrap(), energy_distance_test(&a, &b, 99, 4).unwrap());
    }

    #[test]
    fn moments_of_equal_samples() {
        let a: Vec<Vec<f64>> = normals(1, 100, 0.0).chunks(2).map(|c| c.to_vec()).collect();
        let m = moment_compare(&a, &a).unwrap();
        assert!(m.mean_z.iter().chain(&m.variance_z).all(|&z| z == 0.0));
        assert!(matches!(moment_compare(&a[..1], &a), Err(Error::InsufficientSample { .. })));
    }

    #[test]
    fn moments_detect_shift_and_accept_null() {
        let mk = |seed, shift| -> Vec<Vec<f64>> { normals(seed, 5000, shift).chunks(1).map(|c| c.to_vec()).collect() };
        let shifted = moment_compare(&mk(1, 0.0), &mk(2, 0.3)).unwrap();
        assert!(shifted.mean_z[0].abs() > 5.0);
        let same = moment_compare(&mk(3, 0.0), &mk(4, 0.0)).unwrap();
        assert!(same.mean_z[0].abs() < 4.0 && same.variance_z[0].abs() < 4.0);
    }

    #[test]
    fn holm_step_down() {
        let d = holm(&[0.001, 0.04, 0.03, 0.5], 0.05);
        assert_eq!(d[0], (0.0125, true));
        assert_eq!(d[2], (0.05 / 3.0, false));
        assert!(!d[1].1 && !d[3].1);
        let adj = holm_adjusted(&[0.001, 0.04, 0.03, 0.5]);
        assert_eq!(adj, vec![0.004, 0.09, 0.09, 0.5]);
    }

    #[test]
    fn report_verdict_follows_holm() {
        let sub = |p: f64| SubTest {
            test: "ks".into(),
            time: 1.0,
            coordinate: None,
            statistic: 0.1,
            p_value: p,
            corrected_alpha: 0.0,
            rejected: false,
        };
        let r = TestReport::from_subtests("t", vec![sub(0.006), sub(0.2)], 0.01);
        assert_eq!(r.verdict, Verdict::Consistent);
        let r = TestReport::from_subtests("t", vec![sub(0.004), sub(0.2)], 0.01);
        assert_eq!(r.verdict, Verdict::Inconsistent);
        let json = serde_json::to_value(&r).unwrap();
        for key in ["test", "statistic", "p_value", "corrected_alpha", "verdict"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["verdict"], "inconsistent");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn ks_invariant_under_monotone_map(xs in prop::collection::vec(-10.0f64..10.0, 1..60),
                                           ys in prop::collection::vec(-10.0f64..10.0, 1..60)) {
            let f = |v: &f64| (v * 0.3).exp() * 2.0 - 1.0;
            let a = ks_two_sample(&xs, &ys).unwrap();
            let b = ks_two_sample(&xs.iter().map(f).collect::<Vec<_>>(), &ys.iter().map(f).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(a.statistic, b.statistic);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }

        #[test]
        fn energy_nonnegative(xs in prop::collection::vec(-5.0f64..5.0, 2..30),
                              ys in prop::collection::vec(-5.0f64..5.0, 2..30)) {
            let a: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
            let b: Vec<Vec<f64>> = ys.iter().map(|&v| vec![v]).collect();
            let r = energy_distance_test(&a, &b, 9, 0).unwrap();
            prop_assert!(r.statistic >= -1e-9);
            prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        }
    }
}
