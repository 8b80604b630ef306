//! Unstopped skewed motion at fixed times, by two independent routes: the
//! skew walk, and a time change of an auxiliary symmetric walk.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SimConfig, StepSource};
use crate::error::{EmbedError, Result};
use crate::transform::EmbeddingSpec;

/// A 1-Lipschitz piecewise linear skew function of local time, extended
/// past its last knot with the last slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewFunction {
    knots: Vec<(f64, f64)>,
}

impl SkewFunction {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() || knots[0].0 != 0.0 {
            return Err(EmbedError::Config(
                "skew function must start at l = 0".into(),
            ));
        }
        for w in knots.windows(2) {
            let dl = w[1].0 - w[0].0;
            if !(dl > 0.0) {
                return Err(EmbedError::Config("skew knots must increase in l".into()));
            }
            if (w[1].1 - w[0].1).abs() > dl * (1.0 + 1e-9) {
                return Err(EmbedError::Config(
                    "skew function must be 1-Lipschitz".into(),
                ));
            }
        }
        Ok(Self { knots })
    }

    pub fn zero() -> Self {
        Self {
            knots: vec![(0.0, 0.0)],
        }
    }

    pub fn linear(slope: f64) -> Result<Self> {
        Self::new(vec![(0.0, 0.0), (1.0, slope)])
    }

    pub fn from_spec(spec: &EmbeddingSpec) -> Result<Self> {
        Self::new(spec.rows().iter().map(|r| (r.l, r.g)).collect())
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    fn segment_slope(&self, k: usize) -> f64 {
        let (a, b) = (self.knots[k], self.knots[k + 1]);
        ((b.1 - a.1) / (b.0 - a.0)).clamp(-1.0, 1.0)
    }

    /// Slope on the segment `(l_k, l_{k+1}]` containing `l`.
    pub fn slope_at(&self, l: f64) -> f64 {
        let n = self.knots.len();
        if n == 1 {
            return 0.0;
        }
        let k = self.knots.partition_point(|kn| kn.0 < l).clamp(1, n - 1) - 1;
        self.segment_slope(k)
    }

    pub fn eval(&self, l: f64) -> f64 {
        let n = self.knots.len();
        if n == 1 {
            return self.knots[0].1;
        }
        let k = self.knots.partition_point(|kn| kn.0 < l).clamp(1, n - 1) - 1;
        self.knots[k].1 + self.segment_slope(k) * (l - self.knots[k].0)
    }
}

/// Position and local time at one requested time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSample {
    pub x: f64,
    pub l: f64,
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times.windows(2).any(|w| !(w[1] >= w[0])) || !(times[0] >= 0.0) {
        return Err(EmbedError::Config(
            "times must be nonempty, nonnegative and sorted".into(),
        ));
    }
    Ok(())
}

/// Skew walk without stopping, read at the given times.
pub fn sample_skew_walk(
    skew: &SkewFunction,
    config: &SimConfig,
    times: &[f64],
) -> Result<Vec<Vec<TimeSample>>> {
    config.validate_common()?;
    check_times(times)?;
    let depth = config.coupling_depth()?;
    let dx = config.dx;
    let targets: Vec<u64> = times
        .iter()
        .map(|t| (t / (dx * dx)).round() as u64)
        .collect();
    if targets.last().copied().unwrap_or(0) > config.max_steps {
        return Err(EmbedError::Config(
            "requested time exceeds max_steps".into(),
        ));
    }
    Ok((0..config.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut src = StepSource::new(config.seed, i, depth);
            let mut x: i64 = 0;
            let mut visits: u64 = 0;
            let mut step: u64 = 0;
            let mut out = Vec::with_capacity(times.len());
            for &target in &targets {
                while step < target {
                    x = if x == 0 {
                        visits += 1;
                        let p = 0.5 * (1.0 - skew.slope_at(visits as f64 * dx));
                        if src.chance(p) {
                            1
                        } else {
                            -1
                        }
                    } else if src.step() {
                        x + 1
                    } else {
                        x - 1
                    };
                    step += 1;
                }
                out.push(TimeSample {
                    x: x as f64 * dx,
                    l: visits as f64 * dx,
                });
            }
            out
        })
        .collect())
}

/// Scale functions for the time-change construction.
///
/// With `v' = sqrt(2 / (1 + G'^2))`, `y = v^-1`, `n = (y - G(y)) / 2` and
/// `m = (y + G(y)) / 2`, the skewed motion is `X = 2 n'(Lt) Bt` on
/// `{Bt >= 0}` and `2 m'(Lt) Bt` below, run on the clock
/// `4 int (n'^2 1{Bt >= 0} + m'^2 1{Bt < 0})`, where `Bt` is an auxiliary
/// Brownian motion with local time `Lt`; the local time of `X` is `y(Lt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeChangeAux {
    /// Knots of `v` (auxiliary local time) matching the knots of `G`.
    v_knots: Vec<f64>,
    l_knots: Vec<f64>,
    /// Per segment: `y'`, `n'`, `m'`; the last entry extends to infinity.
    dy: Vec<f64>,
    dn: Vec<f64>,
    dm: Vec<f64>,
}

impl TimeChangeAux {
    pub fn new(skew: &SkewFunction) -> Self {
        let kn = skew.knots();
        let segs = kn.len().saturating_sub(1);
        let slopes: Vec<f64> = if segs == 0 {
            vec![0.0]
        } else {
            (0..segs).map(|k| skew.segment_slope(k)).collect()
        };
        let mut v_knots = vec![0.0];
        for k in 0..segs {
            let dv = (2.0 / (1.0 + slopes[k] * slopes[k])).sqrt();
            v_knots.push(v_knots[k] + dv * (kn[k + 1].0 - kn[k].0));
        }
        let dy: Vec<f64> = slopes
            .iter()
            .map(|s| ((1.0 + s * s) / 2.0).sqrt())
            .collect();
        let dn = slopes
            .iter()
            .zip(&dy)
            .map(|(s, y)| 0.5 * y * (1.0 - s))
            .collect();
        let dm = slopes
            .iter()
            .zip(&dy)
            .map(|(s, y)| 0.5 * y * (1.0 + s))
            .collect();
        Self {
            v_knots,
            l_knots: kn.iter().map(|k| k.0).collect(),
            dy,
            dn,
            dm,
        }
    }

    fn segment(&self, lt: f64) -> usize {
        let n = self.dy.len();
        self.v_knots.partition_point(|&v| v < lt).clamp(1, n.max(1)) - 1
    }

    /// Local time of `X` as a function of the auxiliary local time.
    pub fn y(&self, lt: f64) -> f64 {
        let k = self.segment(lt).min(self.v_knots.len() - 1);
        self.l_knots[k] + self.dy[k.min(self.dy.len() - 1)] * (lt - self.v_knots[k])
    }

    /// `(n', m')` on the segment `(v_k, v_{k+1}]` containing `lt`.
    pub fn slopes_at(&self, lt: f64) -> (f64, f64) {
        let k = self.segment(lt).min(self.dn.len() - 1);
        (self.dn[k], self.dm[k])
    }
}

/// Skewed motion at the given times via the time change.
pub fn simulate_time_change(
    skew: &SkewFunction,
    config: &SimConfig,
    times: &[f64],
) -> Result<Vec<Vec<TimeSample>>> {
    config.validate_common()?;
    check_times(times)?;
    let depth = config.coupling_depth()?;
    let aux = TimeChangeAux::new(skew);
    let dx = config.dx;
    let dx2 = dx * dx;
    Ok((0..config.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut src = StepSource::new(config.seed, i, depth);
            let mut j: i64 = 0;
            let mut lt = 0.0;
            let mut clock = 0.0;
            let mut steps: u64 = 0;
            let (mut dn, mut dm) = aux.slopes_at(0.0);
            let (mut rate_pos, mut rate_neg) = (4.0 * dn * dn * dx2, 4.0 * dm * dm * dx2);
            let mut out = Vec::with_capacity(times.len());
            for &t in times {
                while clock < t && steps < config.max_steps {
                    clock += match j.signum() {
                        1 => rate_pos,
                        -1 => rate_neg,
                        _ => 0.5 * (rate_pos + rate_neg),
                    };
                    j += if src.step() { 1 } else { -1 };
                    steps += 1;
                    // An excursion on a side with zero clock rate is invisible
                    // to X; it only returns to zero.
                    if (j == 1 && rate_pos == 0.0) || (j == -1 && rate_neg == 0.0) {
                        j = 0;
                    }
                    if j == 0 {
                        lt += dx;
                        (dn, dm) = aux.slopes_at(lt);
                        rate_pos = 4.0 * dn * dn * dx2;
                        rate_neg = 4.0 * dm * dm * dx2;
                    }
                }
                let x = if clock < t {
                    f64::NAN
                } else if j >= 0 {
                    2.0 * dn * j as f64 * dx
                } else {
                    2.0 * dm * j as f64 * dx
                };
                out.push(TimeSample { x, l: aux.y(lt) });
            }
            out
        })
        .collect())
}
