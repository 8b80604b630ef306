use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PathEnsemble, Side};
use crate::error::Result;
use crate::law::{local_time_law, ExitLaw};
use crate::tangent::TangentProfile;
use crate::transform::EmbeddingSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassRow {
    pub location: f64,
    pub law_mass: f64,
    pub empirical_mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UiRow {
    pub level: f64,
    /// Fraction of paths reaching `level` before the stop.
    pub hit_fraction: f64,
    /// `|level| * hit_fraction`
    pub diagnostic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub n_paths: usize,
    pub n_finished: usize,
    pub unfinished_fraction: f64,
    /// More than 1% of paths hit `max_steps`.
    pub unfinished_warning: bool,
    pub terminal_fraction: f64,
    pub masses: Vec<MassRow>,
    pub max_mass_discrepancy: f64,
    /// Kolmogorov distance of `B_T` to the exit law.
    pub ks_exit: f64,
    /// Kolmogorov distance of `L_T` to its analytic law.
    pub ks_local_time: f64,
    pub mean_b: f64,
    pub se_mean_b: f64,
    pub mean_abs_b: f64,
    pub se_mean_abs_b: f64,
    pub law_abs_mean: f64,
    pub mean_l: f64,
    pub se_mean_l: f64,
    /// `2 E[B_T^+]`
    pub twice_mean_pos_b: f64,
    pub se_twice_mean_pos_b: f64,
    pub ui: Vec<UiRow>,
}

fn mean_se(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for x in xs {
        n += 1.0;
        s += x;
        s2 += x * x;
    }
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let m = s / n;
    let var = if n > 1.0 {
        ((s2 - n * m * m) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    (m, (var / n).sqrt())
}

/// Kolmogorov distance between a sample and a distribution given by its
/// cdf and left limits.
fn ks_one_sample(
    sorted: &[f64],
    cdf: impl Fn(f64) -> Result<f64>,
    cdf_left: impl Fn(f64) -> Result<f64>,
) -> Result<f64> {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        d = d
            .max((j as f64 / n - cdf(v)?).abs())
            .max((i as f64 / n - cdf_left(v)?).abs());
        i = j;
    }
    Ok(d)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic p-value of a Kolmogorov statistic `d` with effective size `n`.
pub fn kolmogorov_pvalue(d: f64, n: f64) -> f64 {
    let sq = n.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Compare a simulated ensemble with the analytic laws.
///
/// Lattice local times `n dx` are replaced by `(n - U) dx` with `U` uniform
/// before the Kolmogorov distance to the continuous local-time law is taken.
pub fn empirical_stats(
    ensemble: &PathEnsemble,
    law: &ExitLaw,
    spec: &EmbeddingSpec,
    profile: &TangentProfile,
) -> Result<EmpiricalReport> {
    let fin: Vec<_> = ensemble.finished().collect();
    let n = fin.len() as f64;
    let atoms = law.atoms();
    let near = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());

    let masses: Vec<MassRow> = atoms
        .iter()
        .map(|a| MassRow {
            location: a.location,
            law_mass: a.mass,
            empirical_mass: fin.iter().filter(|p| near(p.b_t, a.location)).count() as f64 / n,
        })
        .collect();
    let max_mass_discrepancy = masses
        .iter()
        .map(|m| (m.empirical_mass - m.law_mass).abs())
        .fold(0.0, f64::max);

    let mut b: Vec<f64> = fin.iter().map(|p| p.b_t).collect();
    b.sort_by(f64::total_cmp);
    let law_cdf = |x: f64| -> f64 {
        atoms
            .iter()
            .filter(|a| a.location <= x || near(x, a.location))
            .map(|a| a.mass)
            .sum()
    };
    let law_left = |x: f64| -> f64 {
        atoms
            .iter()
            .filter(|a| a.location < x && !near(x, a.location))
            .map(|a| a.mass)
            .sum()
    };
    let ks_exit = ks_one_sample(&b, |x| Ok(law_cdf(x)), |x| Ok(law_left(x)))?;

    let dx = ensemble.config.dx;
    let l_max = spec.l_max();
    let mut rng = ChaCha8Rng::seed_from_u64(ensemble.config.seed);
    rng.set_stream(u64::MAX);
    let mut l: Vec<f64> = fin
        .iter()
        .map(|p| {
            let u: f64 = rng.gen();
            if p.side == Side::Terminal {
                l_max
            } else {
                ((p.visits as f64 - u) * dx).min(l_max)
            }
        })
        .collect();
    let (mean_l, se_mean_l) = mean_se(l.iter().copied());
    l.sort_by(f64::total_cmp);
    let terminal_mass = spec.terminal_mass();
    let ks_local_time = ks_one_sample(
        &l,
        |x| {
            if x >= l_max {
                Ok(1.0)
            } else {
                Ok(1.0 - local_time_law(spec, profile, x)?)
            }
        },
        |x| {
            if x >= l_max {
                Ok(1.0 - terminal_mass)
            } else {
                Ok(1.0 - local_time_law(spec, profile, x)?)
            }
        },
    )?;

    let (mean_b, se_mean_b) = mean_se(fin.iter().map(|p| p.b_t));
    let (mean_abs_b, se_mean_abs_b) = mean_se(fin.iter().map(|p| p.b_t.abs()));
    let (twice_mean_pos_b, se_half) = mean_se(fin.iter().map(|p| 2.0 * p.b_t.max(0.0)));

    let ui = ensemble
        .config
        .record_levels
        .iter()
        .enumerate()
        .map(|(i, &level)| {
            let hit_fraction = fin.iter().filter(|p| p.crossed_before_stop[i]).count() as f64 / n;
            UiRow {
                level,
                hit_fraction,
                diagnostic: level.abs() * hit_fraction,
            }
        })
        .collect();

    let unfinished_fraction = ensemble.unfinished_fraction();
    Ok(EmpiricalReport {
        n_paths: ensemble.paths.len(),
        n_finished: fin.len(),
        unfinished_fraction,
        unfinished_warning: unfinished_fraction > 0.01,
        terminal_fraction: fin.iter().filter(|p| p.side == Side::Terminal).count() as f64 / n,
        masses,
        max_mass_discrepancy,
        ks_exit,
        ks_local_time,
        mean_b,
        se_mean_b,
        mean_abs_b,
        se_mean_abs_b,
        law_abs_mean: law.abs_mean(),
        mean_l,
        se_mean_l,
        twice_mean_pos_b,
        se_twice_mean_pos_b: se_half,
        ui,
    })
}
