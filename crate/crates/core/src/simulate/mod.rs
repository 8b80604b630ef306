//! Monte Carlo execution of the stopping rule.
//!
//! The skewed motion is approximated by a walk on the `dx` lattice: away
//! from zero it is a simple random walk; each visit to zero adds `dx` to the
//! local time and starts an excursion that is positive with probability
//! `p(l)`. `B = X + G(L)` is stopped on the barriers of the embedding table.

mod stats;
mod time_change;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::CurvePreset;
use crate::error::{EmbedError, Result};
use crate::transform::EmbeddingSpec;

pub use stats::{
    empirical_stats, kolmogorov_pvalue, ks_two_sample, EmpiricalReport, MassRow, UiRow,
};
pub use time_change::{
    sample_skew_walk, simulate_time_change, SkewFunction, TimeChangeAux, TimeSample,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    SkewWalk,
    TimeChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Lattice step; the time step is `dx^2`.
    pub dx: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Paths still running after this many steps are reported unfinished.
    pub max_steps: u64,
    /// Levels for hitting diagnostics and level local times.
    pub record_levels: Vec<f64>,
    pub scheme: Scheme,
    /// When set, every walk step is built from a finer walk with this step,
    /// so runs at `dx`, `2 dx`, `4 dx`, ... with one seed see the same path.
    pub coupling_dx: Option<f64>,
}

impl SimConfig {
    pub fn new(dx: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            dx,
            n_paths,
            seed,
            max_steps: 100_000_000,
            record_levels: Vec::new(),
            scheme: Scheme::SkewWalk,
            coupling_dx: None,
        }
    }

    fn coupling_depth(&self) -> Result<u32> {
        let Some(fine) = self.coupling_dx else {
            return Ok(0);
        };
        let ratio = self.dx / fine;
        let depth = ratio.log2().round();
        if !(fine > 0.0)
            || !(0.0..=20.0).contains(&depth)
            || (ratio - depth.exp2()).abs() > 1e-9 * ratio
        {
            return Err(EmbedError::Config(format!(
                "dx = {} is not a power-of-two multiple of coupling_dx = {fine}",
                self.dx
            )));
        }
        Ok(depth as u32)
    }

    pub(crate) fn validate_common(&self) -> Result<()> {
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return Err(EmbedError::Config("dx must be positive".into()));
        }
        if self.n_paths == 0 {
            return Err(EmbedError::Config("n_paths must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(EmbedError::Config("max_steps must be positive".into()));
        }
        self.coupling_depth()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upper,
    Lower,
    Terminal,
    Unfinished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub b_t: f64,
    /// Local time of `X` at zero when stopped: `visits * dx`, capped at `l_max`.
    pub l_t: f64,
    pub visits: u64,
    pub sup_b: f64,
    pub inf_b: f64,
    pub steps: u64,
    pub side: Side,
    /// Per recorded level: was it reached strictly before the stop?
    pub crossed_before_stop: Vec<bool>,
    /// Per recorded level: local time of `B` there (discrete Tanaka sum).
    pub level_local_time: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub config: SimConfig,
    pub preset: CurvePreset,
    pub l_max: f64,
    pub terminal_location: f64,
    pub paths: Vec<PathRecord>,
}

impl PathEnsemble {
    pub fn finished(&self) -> impl Iterator<Item = &PathRecord> {
        self.paths.iter().filter(|p| p.side != Side::Unfinished)
    }

    pub fn unfinished_count(&self) -> usize {
        self.paths.len() - self.finished().count()
    }

    pub fn unfinished_fraction(&self) -> f64 {
        self.unfinished_count() as f64 / self.paths.len() as f64
    }
}

/// Random steps for one path: raw bits, optionally coarsened from a finer
/// walk (a coarse step is the first pair of equal fine steps).
struct StepSource {
    rng: ChaCha8Rng,
    buf: u64,
    left: u32,
    depth: u32,
}

impl StepSource {
    fn new(seed: u64, path: u64, depth: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        Self {
            rng,
            buf: 0,
            left: 0,
            depth,
        }
    }

    #[inline(always)]
    fn bit(&mut self) -> bool {
        if self.left == 0 {
            self.buf = self.rng.next_u64();
            self.left = 64;
        }
        let b = self.buf & 1 == 1;
        self.buf >>= 1;
        self.left -= 1;
        b
    }

    fn coarse(&mut self, depth: u32) -> bool {
        if depth == 0 {
            return self.bit();
        }
        loop {
            let a = self.coarse(depth - 1);
            let b = self.coarse(depth - 1);
            if a == b {
                return a;
            }
        }
    }

    #[inline(always)]
    fn step(&mut self) -> bool {
        if self.depth == 0 {
            self.bit()
        } else {
            self.coarse(self.depth)
        }
    }

    /// `true` with probability `p`.
    fn chance(&mut self, p: f64) -> bool {
        if p == 0.5 {
            self.step()
        } else if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            ((self.rng.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64) < p
        }
    }
}

/// Lookup tables of the embedding in the form the walk needs.
struct WalkTable {
    l: Vec<f64>,
    g: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    p: Vec<f64>,
    l_max: f64,
    terminal_location: f64,
}

impl WalkTable {
    fn new(spec: &EmbeddingSpec) -> Self {
        let rows = spec.rows();
        Self {
            l: rows.iter().map(|r| r.l).collect(),
            g: rows.iter().map(|r| r.g).collect(),
            alpha: rows.iter().map(|r| r.alpha).collect(),
            beta: rows.iter().map(|r| r.beta).collect(),
            p: rows.iter().map(|r| r.p).collect(),
            l_max: spec.l_max(),
            terminal_location: spec.terminal_location(),
        }
    }

    /// Advance `cursor` so that `l` lies in `(l[c], l[c + 1]]`; return `G(l)`.
    #[inline]
    fn advance(&self, cursor: &mut usize, l: f64) -> f64 {
        let last = self.l.len() - 1;
        while *cursor + 1 < last && self.l[*cursor + 1] < l {
            *cursor += 1;
        }
        let c = *cursor;
        if last == 0 {
            return self.g[0];
        }
        let t = ((l - self.l[c]) / (self.l[c + 1] - self.l[c])).min(1.0);
        self.g[c] + (self.g[c + 1] - self.g[c]) * t
    }
}

#[inline]
fn tanaka(b0: f64, b1: f64, x: f64) -> f64 {
    let d0 = b0 - x;
    let sgn = if d0 > 0.0 {
        1.0
    } else if d0 < 0.0 {
        -1.0
    } else {
        0.0
    };
    (b1 - x).abs() - d0.abs() - sgn * (b1 - b0)
}

struct LevelTracker {
    levels: Vec<f64>,
    local_time: Vec<f64>,
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl LevelTracker {
    fn new(levels: &[f64]) -> Self {
        Self {
            levels: levels.to_vec(),
            local_time: vec![0.0; levels.len()],
            lo: vec![0; levels.len()],
            hi: vec![0; levels.len()],
        }
    }

    /// Lattice cells next to each level for the current `G`.
    fn locate(&mut self, g: f64, dx: f64) {
        for (i, &x) in self.levels.iter().enumerate() {
            let u = (x - g) / dx;
            self.lo[i] = u.floor().clamp(-1e15, 1e15) as i64;
            self.hi[i] = u.ceil().clamp(-1e15, 1e15) as i64;
        }
    }

    #[inline(always)]
    fn lattice_move(&mut self, x0: i64, x1: i64, g: f64, dx: f64) {
        for i in 0..self.levels.len() {
            if x0 == self.lo[i] || x0 == self.hi[i] {
                let b0 = x0 as f64 * dx + g;
                let b1 = x1 as f64 * dx + g;
                self.local_time[i] += tanaka(b0, b1, self.levels[i]);
            }
        }
    }

    fn jump(&mut self, b0: f64, b1: f64) {
        for (lt, &x) in self.local_time.iter_mut().zip(&self.levels) {
            *lt += tanaka(b0, b1, x);
        }
    }
}

fn run_path<const TRACK: bool>(
    tab: &WalkTable,
    cfg: &SimConfig,
    src: &mut StepSource,
) -> PathRecord {
    let dx = cfg.dx;
    let mut tracker = LevelTracker::new(if TRACK { &cfg.record_levels } else { &[] });
    let mut cursor = 0usize;
    let mut g = tab.g[0];
    let mut sup = g;
    let mut inf = g;
    let mut visits: u64 = 0;
    let mut steps: u64 = 0;

    let (side, b_t) = 'path: {
        if tab.l_max <= 0.0 {
            break 'path (Side::Terminal, tab.terminal_location);
        }
        loop {
            // Visit n covers local time ((n - 1) dx, n dx].
            if visits as f64 * dx >= tab.l_max * (1.0 - 1e-12) {
                break 'path (Side::Terminal, tab.terminal_location);
            }
            visits += 1;
            let l = (visits as f64 * dx).min(tab.l_max);
            let g_new = tab.advance(&mut cursor, l);
            if TRACK && g_new != g {
                tracker.jump(g, g_new);
            }
            g = g_new;
            sup = sup.max(g);
            inf = inf.min(g);
            let k = (cursor + 1).min(tab.l.len() - 1);
            let (alpha, beta) = (tab.alpha[k], tab.beta[k]);
            let a_idx = if alpha.is_finite() {
                ((alpha - g) / dx - 1e-9).ceil() as i64
            } else {
                i64::MAX
            };
            let b_idx = if beta.is_finite() {
                ((beta - g) / dx + 1e-9).floor() as i64
            } else {
                i64::MIN
            };
            if TRACK {
                tracker.locate(g, dx);
            }

            // Walk the distance from zero; the excursion sign is fixed. A step
            // bit always means up, so coupled walks trace the same path.
            let up = src.chance(tab.p[k]);
            let (sign, lim, side, stop_at) = if up {
                (1, a_idx, Side::Upper, alpha)
            } else {
                (-1, b_idx.saturating_neg(), Side::Lower, beta)
            };
            let mut ext: i64 = 0;
            let mut y: i64 = 0;
            loop {
                if steps >= cfg.max_steps {
                    break 'path (Side::Unfinished, (sign * y) as f64 * dx + g);
                }
                let ny = if y == 0 {
                    1
                } else {
                    y + sign * (2 * src.step() as i64 - 1)
                };
                steps += 1;
                if TRACK {
                    tracker.lattice_move(sign * y, sign * ny, g, dx);
                }
                if ny >= lim {
                    let e = (sign * ext) as f64 * dx + g;
                    sup = sup.max(e);
                    inf = inf.min(e);
                    break 'path (side, stop_at);
                }
                if ny == 0 {
                    break;
                }
                y = ny;
                ext = ext.max(y);
            }
            let ext = sign * ext;
            let e = ext as f64 * dx + g;
            sup = sup.max(e);
            inf = inf.min(e);
        }
    };

    let crossed_before_stop = cfg
        .record_levels
        .iter()
        .map(|&lvl| if lvl >= 0.0 { sup >= lvl } else { inf <= lvl })
        .collect();
    PathRecord {
        b_t,
        l_t: (visits as f64 * dx).min(tab.l_max),
        visits,
        sup_b: sup,
        inf_b: inf,
        steps,
        side,
        crossed_before_stop,
        level_local_time: if TRACK {
            tracker.local_time
        } else {
            vec![0.0; cfg.record_levels.len()]
        },
    }
}

/// Simulate `config.n_paths` independent stopped paths of the skew walk.
///
/// Path `i` draws from its own ChaCha stream `(seed, i)`, so the ensemble is
/// the same for any number of worker threads.
pub fn simulate_paths(spec: &EmbeddingSpec, config: &SimConfig) -> Result<PathEnsemble> {
    simulate_paths_with(spec, config, true)
}

/// As [`simulate_paths`]; with `track_levels = false` the level local times
/// are skipped (hitting diagnostics are still recorded).
pub fn simulate_paths_with(
    spec: &EmbeddingSpec,
    config: &SimConfig,
    track_levels: bool,
) -> Result<PathEnsemble> {
    config.validate_common()?;
    if config.scheme != Scheme::SkewWalk {
        return Err(EmbedError::Config(
            "stopped paths are simulated with the skew_walk scheme".into(),
        ));
    }
    let min_barrier = spec
        .rows()
        .iter()
        .skip(1)
        .flat_map(|r| [r.a.abs(), r.b.abs()])
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    if config.dx > min_barrier / 10.0 {
        return Err(EmbedError::Config(format!(
            "dx = {} exceeds a tenth of the smallest barrier distance {min_barrier}",
            config.dx
        )));
    }
    let depth = config.coupling_depth()?;
    let tab = WalkTable::new(spec);
    let track = track_levels && !config.record_levels.is_empty();
    let paths: Vec<PathRecord> = (0..config.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut src = StepSource::new(config.seed, i, depth);
            if track {
                run_path::<true>(&tab, config, &mut src)
            } else {
                run_path::<false>(&tab, config, &mut src)
            }
        })
        .collect();
    Ok(PathEnsemble {
        config: config.clone(),
        preset: spec.meta().preset,
        l_max: spec.l_max(),
        terminal_location: spec.terminal_location(),
        paths,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalTimeMethod {
    /// `L^x = L^X - (sup B ∧ x)`, valid for the local-time-at-`x` construction.
    Identity,
    /// Discrete Tanaka sum recorded during the walk.
    Crossing,
}

/// Per-path local time of `B` at level `x`.
pub fn estimate_level_local_time(
    ensemble: &PathEnsemble,
    x: f64,
    method: LocalTimeMethod,
) -> Result<Vec<f64>> {
    match method {
        LocalTimeMethod::Identity => {
            let ok = match ensemble.preset {
                CurvePreset::LocalTime { level } => level == x,
                CurvePreset::Vallois => x == 0.0,
                _ => false,
            };
            if !ok {
                return Err(EmbedError::WrongPreset);
            }
            Ok(ensemble
                .finished()
                .map(|p| (p.l_t - p.sup_b.min(x)).max(0.0))
                .collect())
        }
        LocalTimeMethod::Crossing => {
            let i = ensemble
                .config
                .record_levels
                .iter()
                .position(|&l| l == x)
                .ok_or_else(|| EmbedError::Config(format!("level {x} was not recorded")))?;
            Ok(ensemble.finished().map(|p| p.level_local_time[i]).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::EmbeddingCurve;
    use crate::measure::CenteredAtomicMeasure;
    use crate::tangent::{GridControl, TangentProfile};
    use crate::transform::build_embedding;

    fn spec(atoms: &[(f64, f64)], preset: CurvePreset) -> EmbeddingSpec {
        let m = CenteredAtomicMeasure::new(atoms).unwrap();
        let c = EmbeddingCurve::preset(preset, &m).unwrap();
        let p = TangentProfile::build(&m, &c, GridControl::default()).unwrap();
        build_embedding(&p).unwrap()
    }

    const MU2: [(f64, f64); 2] = [(-1.0, 0.5), (1.0, 0.5)];

    #[test]
    fn tanaka_counts_visits_and_crossings() {
        assert_eq!(tanaka(0.0, 0.1, 0.0), 0.1);
        assert_eq!(tanaka(0.1, 0.0, 0.0), 0.0);
        assert!((tanaka(-0.05, 0.05, 0.02) - 0.06).abs() < 1e-15);
        assert_eq!(tanaka(0.3, 0.4, 0.0), 0.0);
    }

    #[test]
    fn coupled_steps_are_fair() {
        let mut src = StepSource::new(7, 0, 2);
        let ups = (0..20_000).filter(|_| src.step()).count();
        assert!((ups as f64 / 20_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let sp = spec(&MU2, CurvePreset::Vallois);
        let mut cfg = SimConfig::new(0.05, 200, 11);
        cfg.record_levels = vec![0.5];
        let a = simulate_paths(&sp, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let b = pool.install(|| simulate_paths(&sp, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn azema_yor_local_time_is_running_max() {
        let sp = spec(&MU2, CurvePreset::AzemaYor);
        let cfg = SimConfig::new(0.02, 500, 3);
        let ens = simulate_paths(&sp, &cfg).unwrap();
        for p in &ens.paths {
            assert!(
                (p.l_t.min(1.0) - p.sup_b).abs() < 1e-9,
                "{} {}",
                p.l_t,
                p.sup_b
            );
            assert!(p.b_t == -1.0 || p.b_t == 1.0);
        }
    }

    #[test]
    fn config_errors() {
        let sp = spec(&MU2, CurvePreset::Vallois);
        assert!(simulate_paths(&sp, &SimConfig::new(0.5, 10, 1)).is_err());
        let mut cfg = SimConfig::new(0.01, 10, 1);
        cfg.coupling_dx = Some(0.003);
        assert!(simulate_paths(&sp, &cfg).is_err());
        cfg.coupling_dx = None;
        cfg.scheme = Scheme::TimeChange;
        assert!(simulate_paths(&sp, &cfg).is_err());
    }

    #[test]
    fn degenerate_target_stops_immediately() {
        let sp = spec(&[(0.0, 1.0)], CurvePreset::Vallois);
        let ens = simulate_paths(&sp, &SimConfig::new(0.01, 5, 1)).unwrap();
        assert!(ens
            .paths
            .iter()
            .all(|p| p.side == Side::Terminal && p.steps == 0));
    }

    #[test]
    fn identity_method_needs_matching_preset() {
        let sp = spec(&MU2, CurvePreset::AzemaYor);
        let ens = simulate_paths(&sp, &SimConfig::new(0.05, 5, 1)).unwrap();
        assert!(matches!(
            estimate_level_local_time(&ens, 0.5, LocalTimeMethod::Identity),
            Err(EmbedError::WrongPreset)
        ));
    }
}
