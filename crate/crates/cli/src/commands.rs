use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use skewembed::curve::Violation;
use skewembed::law::{local_time_law, verify_embedding, AtomCheck};
use skewembed::simulate::{
    empirical_stats, estimate_level_local_time, kolmogorov_pvalue, EmpiricalReport, LocalTimeMethod,
};
use skewembed::{
    build_embedding, exit_law, expected_psi, simulate_paths, CenteredAtomicMeasure, CurvePreset,
    EmbedError, EmbeddingSpec, ExitLaw, SimConfig, TangentProfile,
};

use crate::config::{CurveBlock, RunConfig};
use crate::tables::{self, num};
use crate::{Invalid, Numerical};

/// Flag overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.sim.seed = s;
        }
        if let Some(n) = self.paths {
            cfg.sim.n_paths = n;
        }
        if let Some(o) = &self.out {
            cfg.outputs.dir = o.clone();
        }
    }
}

struct Built {
    measure: CenteredAtomicMeasure,
    profile: TangentProfile,
    spec: EmbeddingSpec,
    law: ExitLaw,
}

fn build_checked(cfg: &RunConfig, block: &CurveBlock) -> Result<Built> {
    let measure = cfg.measure()?;
    let curve = block.curve(&measure)?;
    let profile = TangentProfile::build(&measure, &curve, cfg.grid())?;
    let spec = build_embedding(&profile)?;
    let law = exit_law(&profile);
    Ok(Built {
        measure,
        profile,
        spec,
        law,
    })
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = cfg.outputs.dir.as_path();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load(config: &Path, over: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    over.apply(&mut cfg);
    Ok(cfg)
}

#[derive(Serialize)]
struct Admissibility<'a> {
    ok: bool,
    zeta: Option<f64>,
    touches_c: bool,
    violations: &'a [Violation],
}

pub fn build(config: &Path, over: &Overrides) -> Result<()> {
    let cfg = load(config, over)?;
    let measure = cfg.measure()?;
    let curve = cfg.curve_block()?.curve(&measure)?;
    let profile = TangentProfile::build_unchecked(&measure, &curve, cfg.grid())?;
    let report = curve.validate(&profile);
    let dir = out_dir(&cfg)?;
    write_json(
        &dir.join("admissibility.json"),
        &Admissibility {
            ok: report.ok,
            zeta: report.zeta.is_finite().then_some(report.zeta),
            touches_c: report.touches_c,
            violations: &report.violations,
        },
    )?;
    if !report.ok {
        for v in report.violations.iter().take(10) {
            eprintln!("violation at s = {}: h' = {} < {}", v.s, v.lhs, v.rhs);
        }
        return Err(EmbedError::NotAdmissible(Box::new(report)).into());
    }
    let spec = build_embedding(&profile)?;
    let law = exit_law(&profile);
    tables::write_profile(&dir.join("profile.csv"), &profile)?;
    tables::write_spec(&dir.join("spec.csv"), &spec)?;
    tables::write_exit_law(&dir.join("exitlaw.csv"), &law)?;
    println!(
        "built {} rows, l_max = {}, terminal mass {} at {}; wrote {}",
        spec.len(),
        spec.l_max(),
        spec.terminal_mass(),
        spec.terminal_location(),
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EnsembleSummary {
    config: SimConfig,
    preset: CurvePreset,
    l_max: f64,
    ks_exit_pvalue: f64,
    ks_local_time_pvalue: f64,
    report: EmpiricalReport,
}

pub fn simulate(config: &Path, spec_table: Option<&Path>, over: &Overrides) -> Result<()> {
    let cfg = load(config, over)?;
    let built = build_checked(&cfg, cfg.curve_block()?)?;
    let sim_spec = match spec_table {
        Some(p) => tables::read_spec(p)?,
        None => built.spec.clone(),
    };
    let sim = cfg.sim_config();
    let ens = simulate_paths(&sim_spec, &sim)?;
    let report = empirical_stats(&ens, &built.law, &built.spec, &built.profile)?;
    if report.unfinished_warning {
        eprintln!(
            "warning: {:.2}% of paths hit max_steps",
            100.0 * report.unfinished_fraction
        );
    }
    let n = report.n_finished as f64;
    let summary = EnsembleSummary {
        config: sim,
        preset: ens.preset,
        l_max: ens.l_max,
        ks_exit_pvalue: kolmogorov_pvalue(report.ks_exit, n),
        ks_local_time_pvalue: kolmogorov_pvalue(report.ks_local_time, n),
        report,
    };
    let dir = out_dir(&cfg)?;
    write_json(&dir.join("ensemble_summary.json"), &summary)?;

    let mut b: Vec<f64> = ens.finished().map(|p| p.b_t).collect();
    let mut l: Vec<f64> = ens.finished().map(|p| p.l_t).collect();
    b.sort_by(f64::total_cmp);
    l.sort_by(f64::total_cmp);
    let ecdf = |xs: &[f64], x: f64| xs.partition_point(|&v| v <= x) as f64 / xs.len().max(1) as f64;
    let mut rows: Vec<[String; 4]> = Vec::new();
    for a in built.law.atoms() {
        rows.push([
            "b_t".into(),
            num(a.location),
            num(ecdf(&b, a.location)),
            num(built.law.cdf(a.location)),
        ]);
    }
    let k = cfg.sim.ecdf_points.max(2);
    let l_max = built.spec.l_max();
    for i in 0..k {
        let x = l_max * i as f64 / (k - 1) as f64;
        let law = if i + 1 == k {
            1.0
        } else {
            1.0 - local_time_law(&built.spec, &built.profile, x)?
        };
        rows.push(["l_t".into(), num(x), num(ecdf(&l, x)), num(law)]);
    }
    tables::write_rows(
        &dir.join("ecdf.csv"),
        ["quantity", "x", "empirical", "law"],
        rows,
    )?;

    if cfg.outputs.paths_csv_cap > 0 {
        let rows = ens.paths.iter().take(cfg.outputs.paths_csv_cap).map(|p| {
            [
                num(p.b_t),
                num(p.l_t),
                num(p.sup_b),
                num(p.inf_b),
                p.steps.to_string(),
                serde_json::to_value(p.side)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
            ]
        });
        tables::write_rows(
            &dir.join("paths.csv"),
            ["b_t", "l_t", "sup_b", "inf_b", "steps", "side"],
            rows,
        )?;
    }
    println!(
        "{} paths: KS(B_T) = {:.4}, KS(L_T) = {:.4}, E B_T = {:.4} +- {:.4}; wrote {}",
        summary.report.n_paths,
        summary.report.ks_exit,
        summary.report.ks_local_time,
        summary.report.mean_b,
        summary.report.se_mean_b,
        dir.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct CompareRow {
    curve: String,
    estimate: f64,
    se: f64,
    analytic: Option<f64>,
    maximal: bool,
    minimal: bool,
}

pub fn compare(config: &Path, over: &Overrides) -> Result<()> {
    let cfg = load(config, over)?;
    let cmp = cfg
        .compare
        .as_ref()
        .ok_or_else(|| Invalid("compare needs a compare block".into()))?;
    if cmp.curves.is_empty() {
        return Err(Invalid("compare.curves is empty".into()).into());
    }
    let psi = cmp.psi()?;
    let x = cmp.level;
    let mut sim = cfg.sim_config();
    sim.record_levels = vec![x];
    let mut rows = Vec::new();
    for block in &cmp.curves {
        let built = build_checked(&cfg, block)?;
        let ens = simulate_paths(&built.spec, &sim)?;
        let vals: Vec<f64> = estimate_level_local_time(&ens, x, LocalTimeMethod::Crossing)?
            .into_iter()
            .map(|l| psi.value(l))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let e = expected_psi(&built.spec, &built.profile, psi)?;
        let analytic = if x == 0.0 {
            Some(e.at_zero)
        } else {
            e.at_level.filter(|(lv, _)| *lv == x).map(|(_, v)| v)
        };
        rows.push(CompareRow {
            curve: block.label(),
            estimate: mean,
            se: (var / n).sqrt(),
            analytic,
            maximal: false,
            minimal: false,
        });
    }
    let snapshot = rows.clone();
    for r in rows.iter_mut() {
        let within = |o: &CompareRow| 2.0 * (r.se * r.se + o.se * o.se).sqrt();
        r.maximal = snapshot
            .iter()
            .all(|o| r.estimate + within(o) >= o.estimate);
        r.minimal = snapshot
            .iter()
            .all(|o| r.estimate - within(o) <= o.estimate);
    }
    let dir = out_dir(&cfg)?;
    tables::write_rows(
        &dir.join("compare.csv"),
        ["curve", "estimate", "se", "analytic", "maximal", "minimal"],
        rows.iter().map(|r| {
            [
                r.curve.clone(),
                num(r.estimate),
                num(r.se),
                r.analytic.map(num).unwrap_or_default(),
                r.maximal.to_string(),
                r.minimal.to_string(),
            ]
        }),
    )?;
    println!("E {psi}(L^x) at x = {x}");
    println!(
        "{:<18} {:>12} {:>10} {:>12} {:>8} {:>8}",
        "curve", "estimate", "se", "analytic", "maximal", "minimal"
    );
    for r in &rows {
        println!(
            "{:<18} {:>12.5} {:>10.5} {:>12} {:>8} {:>8}",
            r.curve,
            r.estimate,
            r.se,
            r.analytic.map_or("-".into(), |a| format!("{a:.5}")),
            r.maximal,
            r.minimal
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    tolerance: f64,
    pass: bool,
}

#[derive(Serialize)]
struct VerifyReport {
    pass: bool,
    checks: Vec<Check>,
    atoms: Vec<AtomCheck>,
}

const VERIFY_TOLERANCE: f64 = 1e-8;

pub fn verify(config: &Path, over: &Overrides) -> Result<()> {
    let cfg = load(config, over)?;
    let built = build_checked(&cfg, cfg.curve_block()?)?;
    let check = verify_embedding(&built.law, &built.measure);
    let target_abs: f64 = built
        .measure
        .atoms()
        .iter()
        .map(|a| a.location.abs() * a.mass)
        .sum();
    let survival_at_zero = local_time_law(&built.spec, &built.profile, 0.0)?;
    let checks: Vec<Check> = [
        ("max atom discrepancy", check.max_abs_discrepancy),
        ("total mass - 1", built.law.total_mass() - 1.0),
        ("mean of stopped law", built.law.mean()),
        ("E|B_T| - E|target|", built.law.abs_mean() - target_abs),
        ("Pr(L_T >= 0) - 1", survival_at_zero - 1.0),
    ]
    .into_iter()
    .map(|(name, value)| Check {
        name,
        value,
        tolerance: VERIFY_TOLERANCE,
        pass: value.abs() <= VERIFY_TOLERANCE,
    })
    .collect();
    let pass = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!(
            "{} {}: {:.3e} (tolerance {:.0e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
    }
    let dir = out_dir(&cfg)?;
    write_json(
        &dir.join("verify.json"),
        &VerifyReport {
            pass,
            checks,
            atoms: check.rows,
        },
    )?;
    if !pass {
        return Err(Numerical("analytic checks failed".into()).into());
    }
    Ok(())
}
