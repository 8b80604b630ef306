//! The curve `gamma(s) = (F(s), h(s))` that parameterises the embedding.

use serde::{Deserialize, Serialize};

use crate::error::{EmbedError, Result};
use crate::measure::{CenteredAtomicMeasure, PotentialFunction};
use crate::tangent::TangentProfile;

/// Absolute slack on the slope condition `h' >= max(F' S, F' R)`.
pub const ADMISSIBILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CurvePreset {
    Vallois,
    AzemaYor,
    LocalTime { level: f64 },
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub s: f64,
    pub f: f64,
    pub h: f64,
}

impl Breakpoint {
    pub fn new(s: f64, f: f64, h: f64) -> Self {
        Self { s, f, h }
    }
}

/// Piecewise-linear curve through its breakpoints, starting at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCurve {
    points: Vec<Breakpoint>,
    preset: CurvePreset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub s: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    /// `+inf` when the curve never reaches the potential.
    pub zeta: f64,
    pub ok: bool,
    pub violations: Vec<Violation>,
    pub touches_c: bool,
}

impl EmbeddingCurve {
    pub fn new(points: Vec<Breakpoint>, preset: CurvePreset) -> Result<Self> {
        if points.len() < 2 {
            return Err(EmbedError::BadCurve("need at least two breakpoints".into()));
        }
        let first = points[0];
        if first.s != 0.0 || first.f != 0.0 || first.h != 0.0 {
            return Err(EmbedError::BadCurve(
                "first breakpoint must be (0, 0, 0)".into(),
            ));
        }
        for p in &points {
            if !(p.s.is_finite() && p.f.is_finite() && p.h.is_finite()) {
                return Err(EmbedError::BadCurve("non-finite breakpoint".into()));
            }
        }
        for w in points.windows(2) {
            if !(w[1].s > w[0].s) {
                return Err(EmbedError::BadCurve(format!(
                    "s must be strictly increasing (at s = {})",
                    w[0].s
                )));
            }
            if w[1].f == w[0].f && w[1].h == w[0].h {
                return Err(EmbedError::BadCurve(format!(
                    "stalled segment starting at s = {}",
                    w[0].s
                )));
            }
        }
        Ok(Self { points, preset })
    }

    pub fn custom(points: Vec<Breakpoint>) -> Result<Self> {
        Self::new(points, CurvePreset::Custom)
    }

    /// Named curves, cut off where they first meet the potential.
    pub fn preset(tag: CurvePreset, measure: &CenteredAtomicMeasure) -> Result<Self> {
        let top = measure.max_location();
        let c0 = measure.potential(0.0);
        let origin = Breakpoint::new(0.0, 0.0, 0.0);
        let points = match tag {
            CurvePreset::Vallois => {
                let end = if c0 > 0.0 { c0 } else { 1.0 };
                vec![origin, Breakpoint::new(end, 0.0, end)]
            }
            CurvePreset::AzemaYor => {
                let v = if top > 0.0 { top } else { 1.0 };
                vec![origin, Breakpoint::new(v * std::f64::consts::SQRT_2, v, v)]
            }
            CurvePreset::LocalTime { level } => {
                if !(level >= 0.0) || !level.is_finite() {
                    return Err(EmbedError::BadPreset(format!(
                        "local-time level must be >= 0, got {level}"
                    )));
                }
                if level == 0.0 {
                    let end = if c0 > 0.0 { c0 } else { 1.0 };
                    vec![origin, Breakpoint::new(end, 0.0, end)]
                } else {
                    let cx = measure.potential(level);
                    if level >= top || cx - level <= 1e-12 * (1.0 + level) {
                        // The diagonal meets c before the corner.
                        let v = if top > 0.0 { top } else { 1.0 };
                        vec![origin, Breakpoint::new(v, v, v)]
                    } else {
                        vec![
                            origin,
                            Breakpoint::new(level, level, level),
                            Breakpoint::new(cx, level, cx),
                        ]
                    }
                }
            }
            CurvePreset::Custom => {
                return Err(EmbedError::BadPreset(
                    "custom curves need explicit breakpoints".into(),
                ))
            }
        };
        Self::new(points, tag)
    }

    pub fn points(&self) -> &[Breakpoint] {
        &self.points
    }

    pub fn preset_tag(&self) -> CurvePreset {
        self.preset
    }

    pub fn end_s(&self) -> f64 {
        self.points[self.points.len() - 1].s
    }

    pub fn segment_count(&self) -> usize {
        self.points.len() - 1
    }

    /// Index of the segment `[s_i, s_{i+1})` holding `s`; the last segment
    /// also owns its right end.
    pub fn segment_at(&self, s: f64) -> usize {
        let n = self.segment_count();
        let i = self.points.partition_point(|p| p.s <= s);
        i.saturating_sub(1).min(n - 1)
    }

    /// `(F', h')` on segment `i`.
    pub fn segment_slopes(&self, i: usize) -> (f64, f64) {
        let a = self.points[i];
        let b = self.points[i + 1];
        let ds = b.s - a.s;
        ((b.f - a.f) / ds, (b.h - a.h) / ds)
    }

    pub fn segment_bounds(&self, i: usize) -> (f64, f64) {
        (self.points[i].s, self.points[i + 1].s)
    }

    pub fn eval_on_segment(&self, i: usize, s: f64) -> (f64, f64) {
        let a = self.points[i];
        let (df, dh) = self.segment_slopes(i);
        (a.f + df * (s - a.s), a.h + dh * (s - a.s))
    }

    pub fn eval(&self, s: f64) -> (f64, f64) {
        self.eval_on_segment(self.segment_at(s), s)
    }

    /// Right derivatives `(F'_+(s), h'_+(s))`.
    pub fn right_slopes(&self, s: f64) -> (f64, f64) {
        self.segment_slopes(self.segment_at(s))
    }

    /// First `s` at which `h(s) >= c(F(s))`, or `+inf`.
    pub fn compute_zeta(&self, potential: &PotentialFunction) -> Result<f64> {
        let c0 = potential.eval(self.points[0].f);
        if self.points[0].h > c0 + 1e-12 {
            return Err(EmbedError::CurveAboveC {
                h0: self.points[0].h,
                c0,
            });
        }
        for i in 0..self.segment_count() {
            let a = self.points[i];
            let b = self.points[i + 1];
            let mut ts = vec![0.0, 1.0];
            if b.f != a.f {
                for &k in potential.kinks() {
                    let t = (k - a.f) / (b.f - a.f);
                    if t > 0.0 && t < 1.0 {
                        ts.push(t);
                    }
                }
            }
            ts.sort_by(f64::total_cmp);
            let gap = |t: f64| {
                let f = a.f + t * (b.f - a.f);
                let h = a.h + t * (b.h - a.h);
                (potential.eval(f) - h, h)
            };
            for w in ts.windows(2) {
                let (da, ha) = gap(w[0]);
                if da <= 1e-12 * (1.0 + ha.abs()) {
                    return Ok(a.s + w[0] * (b.s - a.s));
                }
                let (db, hb) = gap(w[1]);
                if db <= 0.0 {
                    let t = w[0] + da / (da - db) * (w[1] - w[0]);
                    return Ok(a.s + t * (b.s - a.s));
                }
                if db <= 1e-12 * (1.0 + hb.abs()) {
                    return Ok(a.s + w[1] * (b.s - a.s));
                }
            }
        }
        Ok(f64::INFINITY)
    }

    /// Check the slope condition at every profile grid point.
    pub fn validate(&self, profile: &TangentProfile) -> AdmissibilityReport {
        let zeta = profile.zeta();
        let touches_c = zeta.is_finite();
        let mut violations = Vec::new();
        let pts = profile.points();
        for p in pts.iter().take(pts.len().saturating_sub(1)) {
            let (df, dh) = self.right_slopes(p.s);
            let rhs = (df * p.lower_slope).max(df * p.upper_slope);
            if dh < rhs - ADMISSIBILITY_TOLERANCE {
                violations.push(Violation {
                    s: p.s,
                    lhs: dh,
                    rhs,
                });
            }
        }
        AdmissibilityReport {
            zeta,
            ok: violations.is_empty() && touches_c,
            violations,
            touches_c,
        }
    }

    /// Same trace, each segment's parameter length scaled by `factors[i]`.
    pub fn reparameterized(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.segment_count() || factors.iter().any(|f| !(*f > 0.0)) {
            return Err(EmbedError::BadCurve(
                "one positive factor per segment".into(),
            ));
        }
        let mut s = 0.0;
        let mut points = vec![self.points[0]];
        for (i, w) in self.points.windows(2).enumerate() {
            s += (w[1].s - w[0].s) * factors[i];
            points.push(Breakpoint::new(s, w[1].f, w[1].h));
        }
        Self::new(points, self.preset)
    }

    /// Cut the curve at parameter `s_end` (inside its range).
    pub fn truncated(&self, s_end: f64) -> Result<Self> {
        let i = self.segment_at(s_end);
        let mut points: Vec<Breakpoint> = self.points[..=i].to_vec();
        if s_end > points[i].s {
            let (f, h) = self.eval_on_segment(i, s_end);
            points.push(Breakpoint::new(s_end, f, h));
        }
        Self::new(points, self.preset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mu2() -> CenteredAtomicMeasure {
        CenteredAtomicMeasure::new(&[(-1.0, 0.5), (1.0, 0.5)]).unwrap()
    }

    fn mu4() -> CenteredAtomicMeasure {
        CenteredAtomicMeasure::new(&[(-2.0, 0.25), (-1.0, 0.25), (1.0, 0.25), (2.0, 0.25)]).unwrap()
    }

    #[test]
    fn vallois_preset_breakpoints() {
        let c = EmbeddingCurve::preset(CurvePreset::Vallois, &mu2()).unwrap();
        assert_eq!(
            c.points(),
            &[
                Breakpoint::new(0.0, 0.0, 0.0),
                Breakpoint::new(1.0, 0.0, 1.0)
            ]
        );
    }

    #[test]
    fn azema_yor_preset_ends_at_touch() {
        let c = EmbeddingCurve::preset(CurvePreset::AzemaYor, &mu2()).unwrap();
        let end = c.points()[1];
        assert!((end.s - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!((end.f, end.h), (1.0, 1.0));
    }

    #[test]
    fn local_time_zero_is_vallois() {
        let lt = EmbeddingCurve::preset(CurvePreset::LocalTime { level: 0.0 }, &mu2()).unwrap();
        let v = EmbeddingCurve::preset(CurvePreset::Vallois, &mu2()).unwrap();
        assert_eq!(lt.points(), v.points());
        assert!(matches!(
            EmbeddingCurve::preset(CurvePreset::LocalTime { level: -1.0 }, &mu2()),
            Err(EmbedError::BadPreset(_))
        ));
    }

    #[test]
    fn local_time_preset_shape() {
        let c = EmbeddingCurve::preset(CurvePreset::LocalTime { level: 0.5 }, &mu4()).unwrap();
        assert_eq!(c.points().len(), 3);
        assert_eq!(c.points()[1], Breakpoint::new(0.5, 0.5, 0.5));
        assert_eq!(c.points()[2], Breakpoint::new(1.5, 0.5, 1.5));
        // Level beyond the support collapses to the diagonal.
        let far = EmbeddingCurve::preset(CurvePreset::LocalTime { level: 5.0 }, &mu4()).unwrap();
        assert_eq!(far.points().len(), 2);
        assert_eq!(far.points()[1], Breakpoint::new(2.0, 2.0, 2.0));
    }

    #[test]
    fn zeta_values() {
        let c2 = mu2().potential_function();
        let c4 = mu4().potential_function();
        let v2 = EmbeddingCurve::preset(CurvePreset::Vallois, &mu2()).unwrap();
        assert!((v2.compute_zeta(&c2).unwrap() - 1.0).abs() < 1e-15);
        let ay2 = EmbeddingCurve::preset(CurvePreset::AzemaYor, &mu2()).unwrap();
        assert!((ay2.compute_zeta(&c2).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let v4 = EmbeddingCurve::preset(CurvePreset::Vallois, &mu4()).unwrap();
        assert!((v4.compute_zeta(&c4).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zeta_interior_root_and_infinity() {
        let c2 = mu2().potential_function();
        // Straight up past c(0) = 1: root inside the segment.
        let up = EmbeddingCurve::custom(vec![
            Breakpoint::new(0.0, 0.0, 0.0),
            Breakpoint::new(4.0, 0.0, 4.0),
        ])
        .unwrap();
        assert!((up.compute_zeta(&c2).unwrap() - 1.0).abs() < 1e-15);
        let shallow = EmbeddingCurve::custom(vec![
            Breakpoint::new(0.0, 0.0, 0.0),
            Breakpoint::new(2.0, 2.0, 1.0),
        ])
        .unwrap();
        assert!(shallow.compute_zeta(&c2).unwrap().is_infinite());
    }

    #[test]
    fn rejects_malformed_curves() {
        assert!(EmbeddingCurve::custom(vec![Breakpoint::new(0.0, 0.0, 0.0)]).is_err());
        assert!(EmbeddingCurve::custom(vec![
            Breakpoint::new(0.0, 0.1, 0.0),
            Breakpoint::new(1.0, 0.0, 1.0)
        ])
        .is_err());
        assert!(EmbeddingCurve::custom(vec![
            Breakpoint::new(0.0, 0.0, 0.0),
            Breakpoint::new(1.0, 0.0, 0.0)
        ])
        .is_err());
        assert!(EmbeddingCurve::custom(vec![
            Breakpoint::new(0.0, 0.0, 0.0),
            Breakpoint::new(0.0, 0.0, 1.0)
        ])
        .is_err());
    }

    #[test]
    fn truncation_and_reparameterisation() {
        let c = EmbeddingCurve::preset(CurvePreset::LocalTime { level: 0.5 }, &mu4()).unwrap();
        let t = c.truncated(1.0).unwrap();
        assert_eq!(t.points().last().unwrap(), &Breakpoint::new(1.0, 0.5, 1.0));
        let r = c.reparameterized(&[2.0, 0.5]).unwrap();
        assert_eq!(r.points()[1].s, 1.0);
        assert_eq!(r.points()[2].s, 1.5);
        assert_eq!(r.eval(1.25), (0.5, 1.0));
    }
}
