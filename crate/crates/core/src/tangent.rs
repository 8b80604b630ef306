//! Tangents from points of the curve to the potential.
//!
//! For a point `(F, h)` under `c`, the upper tangent has slope
//! `R = inf_{x > F} (c(x) - h) / (x - F)` touching `c` at `theta`, and the
//! lower tangent has slope `S = sup_{x < F} (h - c(x)) / (F - x)` touching at
//! `phi`. With `c` piecewise linear both extrema are attained at a kink or in
//! the limit along the asymptotes `c(x) ~ |x|`, whose slopes are `+1` and `-1`.
//!
//! Along a straight curve segment with a fixed contact kink, `R` and `S` are
//! ratios of affine functions of `s`, and the comparison between two contact
//! candidates is linear in `s`. The profile builder exploits that to place
//! every contact switch exactly.

use serde::{Deserialize, Serialize};

use crate::curve::EmbeddingCurve;
use crate::error::{EmbedError, Result};
use crate::measure::{CenteredAtomicMeasure, PotentialFunction};

const TIE_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tangent {
    /// `theta`; `+inf` when the infimum is only reached along the asymptote.
    pub upper_contact: f64,
    /// `phi`; `-inf` when the supremum is only reached along the asymptote.
    pub lower_contact: f64,
    /// `R`
    pub upper_slope: f64,
    /// `S`
    pub lower_slope: f64,
}

impl Tangent {
    pub fn survival(&self) -> f64 {
        0.5 * (self.upper_slope - self.lower_slope)
    }
}

/// Where a tangent touches `c`: a kink (atom index) or the asymptote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Contact {
    Kink(usize),
    Asymptote,
}

fn tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_REL * (1.0 + a.abs().max(b.abs()))
}

/// Tangents from `(f, h)`, with `theta` the supremum and `phi` the infimum of
/// their contact sets. On the potential itself both contacts are `f` and the
/// slopes are the one-sided derivatives of `c`.
pub fn tangent_at(potential: &PotentialFunction, f: f64, h: f64) -> Result<Tangent> {
    let c = potential.eval(f);
    let slack = 1e-12 * (1.0 + c.abs());
    if h > c + slack {
        return Err(EmbedError::PointAboveC { f, h, c });
    }
    if h >= c - slack {
        let (left, right) = potential.derivatives(f);
        return Ok(Tangent {
            upper_contact: f,
            lower_contact: f,
            upper_slope: right,
            lower_slope: left,
        });
    }
    let kinks = potential.kinks();
    let values = potential.values();

    let mut r = 1.0;
    let mut theta = f64::INFINITY;
    for (x, cx) in kinks.iter().zip(values).filter(|(x, _)| **x > f) {
        let g = (cx - h) / (x - f);
        if tie(g, r) {
            theta = theta.max(*x);
        } else if g < r {
            r = g;
            theta = *x;
        }
    }

    let mut s = -1.0;
    let mut phi = f64::NEG_INFINITY;
    for (x, cx) in kinks.iter().zip(values).filter(|(x, _)| **x < f) {
        let g = (h - cx) / (f - x);
        if tie(g, s) {
            phi = phi.min(*x);
        } else if g > s {
            s = g;
            phi = *x;
        }
    }

    Ok(Tangent {
        upper_contact: theta,
        lower_contact: phi,
        upper_slope: r,
        lower_slope: s,
    })
}

/// A stretch of one curve segment on which both contacts are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub s0: f64,
    pub s1: f64,
    pub segment: usize,
    pub upper: Contact,
    pub lower: Contact,
}

/// Full tangent state at one curve position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointState {
    pub s: f64,
    pub f: f64,
    pub h: f64,
    pub df: f64,
    pub dh: f64,
    pub upper_contact: f64,
    pub lower_contact: f64,
    pub upper_slope: f64,
    pub lower_slope: f64,
    pub upper_slope_deriv: f64,
    pub lower_slope_deriv: f64,
}

impl PointState {
    /// `Gamma = (R - S) / 2`
    pub fn survival(&self) -> f64 {
        0.5 * (self.upper_slope - self.lower_slope)
    }

    /// `H'(s) = (2h' - F'(R + S)) / (R - S)`
    pub fn local_time_rate(&self) -> f64 {
        (2.0 * self.dh - self.df * (self.upper_slope + self.lower_slope))
            / (self.upper_slope - self.lower_slope)
    }
}

/// The curve, its potential and the exact contact pieces covering `[0, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveGeometry {
    curve: EmbeddingCurve,
    potential: PotentialFunction,
    pieces: Vec<Piece>,
}

impl CurveGeometry {
    pub fn curve(&self) -> &EmbeddingCurve {
        &self.curve
    }

    pub fn potential(&self) -> &PotentialFunction {
        &self.potential
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn end(&self) -> f64 {
        self.pieces.last().map_or(0.0, |p| p.s1)
    }

    /// Piece with `s0 < s <= s1` (the first piece also owns `s0 = 0`).
    pub fn piece_index(&self, s: f64) -> usize {
        let i = self.pieces.partition_point(|p| p.s1 < s);
        i.min(self.pieces.len().saturating_sub(1))
    }

    /// Piece with `s0 <= s < s1` (the last piece also owns its end).
    pub fn right_piece_index(&self, s: f64) -> usize {
        let i = self.pieces.partition_point(|p| p.s1 <= s);
        i.min(self.pieces.len().saturating_sub(1))
    }

    pub fn state_in_piece(&self, k: usize, s: f64) -> PointState {
        let piece = &self.pieces[k];
        let (f, h) = self.curve.eval_on_segment(piece.segment, s);
        let (df, dh) = self.curve.segment_slopes(piece.segment);
        let kinks = self.potential.kinks();
        let values = self.potential.values();
        let (upper_contact, upper_slope, upper_slope_deriv) = match piece.upper {
            Contact::Asymptote => (f64::INFINITY, 1.0, 0.0),
            Contact::Kink(j) => {
                let gap = kinks[j] - f;
                let r = (values[j] - h) / gap;
                (kinks[j], r, -(dh - df * r) / gap)
            }
        };
        let (lower_contact, lower_slope, lower_slope_deriv) = match piece.lower {
            Contact::Asymptote => (f64::NEG_INFINITY, -1.0, 0.0),
            Contact::Kink(j) => {
                let gap = f - kinks[j];
                let sl = (h - values[j]) / gap;
                (kinks[j], sl, (dh - df * sl) / gap)
            }
        };
        PointState {
            s,
            f,
            h,
            df,
            dh,
            upper_contact,
            lower_contact,
            upper_slope,
            lower_slope,
            upper_slope_deriv,
            lower_slope_deriv,
        }
    }

    /// State with left-continuous contacts.
    pub fn state_at(&self, s: f64) -> PointState {
        self.state_in_piece(self.piece_index(s), s)
    }

    fn build(curve: &EmbeddingCurve, potential: &PotentialFunction, s_end: f64) -> Self {
        let mut pieces = Vec::new();
        for seg in 0..curve.segment_count() {
            let (a, b) = curve.segment_bounds(seg);
            if a >= s_end {
                break;
            }
            let b = b.min(s_end);
            let mut s = a;
            let mut guard = 0usize;
            while s < b {
                guard += 1;
                let (f, h) = curve.eval_on_segment(seg, s);
                let (df, dh) = curve.segment_slopes(seg);
                let upper = right_upper_contact(potential, f, h, df, dh);
                let lower = right_lower_contact(potential, f, h, df, dh);
                let mut next = b;
                next = next.min(next_upper_switch(potential, curve, seg, upper, s, b));
                next = next.min(next_lower_switch(potential, curve, seg, lower, s, b));
                if !(next > s) || guard > 10 * (potential.kinks().len() + 4) * 4 {
                    next = b;
                }
                pieces.push(Piece {
                    s0: s,
                    s1: next,
                    segment: seg,
                    upper,
                    lower,
                });
                s = next;
            }
        }
        Self {
            curve: curve.clone(),
            potential: potential.clone(),
            pieces,
        }
    }
}

/// Upper contact just to the right of `s`: among tied minimisers, the one
/// whose slope decreases fastest, then the farthest.
fn right_upper_contact(pot: &PotentialFunction, f: f64, h: f64, df: f64, dh: f64) -> Contact {
    let kinks = pot.kinks();
    let values = pot.values();
    let mut best = 1.0;
    let mut cands: Vec<(Contact, f64)> = vec![(Contact::Asymptote, 1.0)];
    for (j, (x, cx)) in kinks.iter().zip(values).enumerate() {
        if *x > f {
            let g = (cx - h) / (x - f);
            best = f64::min(best, g);
            cands.push((Contact::Kink(j), g));
        }
    }
    let mut chosen = Contact::Asymptote;
    let mut chosen_rate = f64::INFINITY;
    let mut chosen_x = f64::NEG_INFINITY;
    for (contact, g) in cands {
        if !tie(g, best) {
            continue;
        }
        let (rate, x) = match contact {
            Contact::Asymptote => (0.0, f64::INFINITY),
            Contact::Kink(j) => ((df * best - dh) / (kinks[j] - f), kinks[j]),
        };
        let better = if tie(rate, chosen_rate) {
            x > chosen_x
        } else {
            rate < chosen_rate
        };
        if better {
            chosen = contact;
            chosen_rate = rate;
            chosen_x = x;
        }
    }
    chosen
}

fn right_lower_contact(pot: &PotentialFunction, f: f64, h: f64, df: f64, dh: f64) -> Contact {
    let kinks = pot.kinks();
    let values = pot.values();
    let mut best = -1.0;
    let mut cands: Vec<(Contact, f64)> = vec![(Contact::Asymptote, -1.0)];
    for (j, (x, cx)) in kinks.iter().zip(values).enumerate() {
        if *x < f {
            let g = (h - cx) / (f - x);
            best = f64::max(best, g);
            cands.push((Contact::Kink(j), g));
        }
    }
    let mut chosen = Contact::Asymptote;
    let mut chosen_rate = f64::NEG_INFINITY;
    let mut chosen_x = f64::INFINITY;
    for (contact, g) in cands {
        if !tie(g, best) {
            continue;
        }
        let (rate, x) = match contact {
            Contact::Asymptote => (0.0, f64::NEG_INFINITY),
            Contact::Kink(j) => ((dh - df * best) / (f - kinks[j]), kinks[j]),
        };
        let better = if tie(rate, chosen_rate) {
            x < chosen_x
        } else {
            rate > chosen_rate
        };
        if better {
            chosen = contact;
            chosen_rate = rate;
            chosen_x = x;
        }
    }
    chosen
}

/// First `t` in `(s, b]` where the linear comparison `gap` turns negative.
fn linear_crossing(gap: impl Fn(f64) -> f64, s: f64, b: f64) -> Option<f64> {
    let g0 = gap(s);
    let g1 = gap(b);
    if !(g1 < 0.0) || !(g0 > 0.0) {
        return None;
    }
    let t = s + g0 / (g0 - g1) * (b - s);
    (t > s).then_some(t.min(b))
}

fn next_upper_switch(
    pot: &PotentialFunction,
    curve: &EmbeddingCurve,
    seg: usize,
    current: Contact,
    s: f64,
    b: f64,
) -> f64 {
    let kinks = pot.kinks();
    let values = pot.values();
    let at = |t: f64| curve.eval_on_segment(seg, t);
    let mut next = f64::INFINITY;
    // Negative gap means candidate k has the smaller slope.
    match current {
        Contact::Asymptote => {
            for (k, (&xk, &ck)) in kinks.iter().zip(values).enumerate() {
                let gap = |t: f64| {
                    let (f, h) = at(t);
                    (ck - h) - (xk - f)
                };
                if let Some(t) = linear_crossing(gap, s, b) {
                    if xk > at(t).0 && t < next {
                        next = t;
                    }
                }
                let _ = k;
            }
        }
        Contact::Kink(j) => {
            let (xj, cj) = (kinks[j], values[j]);
            let gap = |t: f64| {
                let (f, h) = at(t);
                (xj - f) - (cj - h)
            };
            if let Some(t) = linear_crossing(gap, s, b) {
                next = next.min(t);
            }
            for (k, (&xk, &ck)) in kinks.iter().zip(values).enumerate() {
                if k == j {
                    continue;
                }
                let gap = |t: f64| {
                    let (f, h) = at(t);
                    (ck - h) * (xj - f) - (cj - h) * (xk - f)
                };
                if let Some(t) = linear_crossing(gap, s, b) {
                    if xk > at(t).0 && t < next {
                        next = t;
                    }
                }
            }
        }
    }
    next
}

fn next_lower_switch(
    pot: &PotentialFunction,
    curve: &EmbeddingCurve,
    seg: usize,
    current: Contact,
    s: f64,
    b: f64,
) -> f64 {
    let kinks = pot.kinks();
    let values = pot.values();
    let at = |t: f64| curve.eval_on_segment(seg, t);
    let mut next = f64::INFINITY;
    // Negative gap means candidate k has the larger slope.
    match current {
        Contact::Asymptote => {
            for (&xk, &ck) in kinks.iter().zip(values) {
                let gap = |t: f64| {
                    let (f, h) = at(t);
                    -(h - ck) - (f - xk)
                };
                if let Some(t) = linear_crossing(gap, s, b) {
                    if xk < at(t).0 && t < next {
                        next = t;
                    }
                }
            }
        }
        Contact::Kink(j) => {
            let (xj, cj) = (kinks[j], values[j]);
            let gap = |t: f64| {
                let (f, h) = at(t);
                (h - cj) + (f - xj)
            };
            if let Some(t) = linear_crossing(gap, s, b) {
                next = next.min(t);
            }
            for (k, (&xk, &ck)) in kinks.iter().zip(values).enumerate() {
                if k == j {
                    continue;
                }
                let gap = |t: f64| {
                    let (f, h) = at(t);
                    (h - cj) * (f - xk) - (h - ck) * (f - xj)
                };
                if let Some(t) = linear_crossing(gap, s, b) {
                    if xk < at(t).0 && t < next {
                        next = t;
                    }
                }
            }
        }
    }
    next
}

/// Grid controls for [`TangentProfile::build`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridControl {
    /// Largest spacing in `s`; `None` means `end / 1000`.
    pub ds_max: Option<f64>,
    /// The construction is cut where `Gamma` falls to this level.
    pub gamma_floor: f64,
    /// Largest relative drop of `Gamma` between neighbouring grid points.
    pub max_survival_drop: f64,
}

impl Default for GridControl {
    fn default() -> Self {
        Self {
            ds_max: None,
            gamma_floor: 1e-6,
            max_survival_drop: 0.01,
        }
    }
}

impl GridControl {
    fn validate(&self) -> Result<()> {
        if let Some(ds) = self.ds_max {
            if !(ds > 0.0) {
                return Err(EmbedError::Config("ds_max must be positive".into()));
            }
        }
        if !(self.gamma_floor > 0.0 && self.gamma_floor < 1.0) {
            return Err(EmbedError::Config("gamma_floor must lie in (0, 1)".into()));
        }
        if !(self.max_survival_drop > 0.0 && self.max_survival_drop < 1.0) {
            return Err(EmbedError::Config(
                "max_survival_drop must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the tabulated profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub s: f64,
    pub f: f64,
    pub h: f64,
    /// `theta(s)`, left-continuous.
    pub upper_contact: f64,
    /// `phi(s)`, left-continuous.
    pub lower_contact: f64,
    pub upper_slope: f64,
    pub lower_slope: f64,
    /// `Gamma(s)`
    pub survival: f64,
    /// Right derivative of `R`.
    pub upper_slope_deriv: f64,
    /// Right derivative of `S`.
    pub lower_slope_deriv: f64,
}

/// Tangent geometry tabulated along the curve up to `min(zeta, cut)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentProfile {
    points: Vec<ProfilePoint>,
    geometry: CurveGeometry,
    zeta: f64,
    truncated: bool,
    gamma_floor: f64,
}

impl TangentProfile {
    /// Build and check admissibility.
    pub fn build(
        measure: &CenteredAtomicMeasure,
        curve: &EmbeddingCurve,
        grid: GridControl,
    ) -> Result<Self> {
        let profile = Self::build_unchecked(measure, curve, grid)?;
        let report = curve.validate(&profile);
        if !report.ok {
            return Err(EmbedError::NotAdmissible(Box::new(report)));
        }
        Ok(profile)
    }

    /// Build without the admissibility check (used to report violations).
    pub fn build_unchecked(
        measure: &CenteredAtomicMeasure,
        curve: &EmbeddingCurve,
        grid: GridControl,
    ) -> Result<Self> {
        grid.validate()?;
        let potential = measure.potential_function();
        let zeta = curve.compute_zeta(&potential)?;
        let s_end = zeta.min(curve.end_s());

        if s_end <= 0.0 {
            let t = tangent_at(&potential, 0.0, 0.0)?;
            let geometry = CurveGeometry {
                curve: curve.clone(),
                potential,
                pieces: Vec::new(),
            };
            let point = ProfilePoint {
                s: 0.0,
                f: 0.0,
                h: 0.0,
                upper_contact: t.upper_contact,
                lower_contact: t.lower_contact,
                upper_slope: t.upper_slope,
                lower_slope: t.lower_slope,
                survival: t.survival(),
                upper_slope_deriv: 0.0,
                lower_slope_deriv: 0.0,
            };
            return Ok(Self {
                points: vec![point],
                geometry,
                zeta,
                truncated: false,
                gamma_floor: grid.gamma_floor,
            });
        }

        let geometry = CurveGeometry::build(curve, &potential, s_end);

        // Cut where survival reaches the floor; the pieces beyond stay exact.
        let mut truncated = false;
        let mut end = geometry.end();
        for (k, piece) in geometry.pieces.iter().enumerate() {
            let g1 = geometry.state_in_piece(k, piece.s1).survival();
            if g1 <= grid.gamma_floor {
                let g0 = geometry.state_in_piece(k, piece.s0).survival();
                end = if g0 <= grid.gamma_floor {
                    piece.s0
                } else {
                    bisect(piece.s0, piece.s1, |s| {
                        geometry.state_in_piece(k, s).survival() > grid.gamma_floor
                    })
                };
                truncated = true;
                break;
            }
        }

        let ds_max = grid.ds_max.unwrap_or(end / 1000.0);
        let mut grid_s = vec![0.0];
        for (k, piece) in geometry.pieces.iter().enumerate() {
            if piece.s0 >= end {
                break;
            }
            let s1 = piece.s1.min(end);
            let mut t = piece.s0;
            while t < s1 {
                let g_t = geometry.state_in_piece(k, t).survival();
                let target = g_t * (1.0 - grid.max_survival_drop);
                let mut next = (t + ds_max).min(s1);
                if geometry.state_in_piece(k, next).survival() < target {
                    next = bisect(t, next, |s| {
                        geometry.state_in_piece(k, s).survival() >= target
                    });
                }
                if s1 - next < 1e-12 * (1.0 + s1.abs()) || !(next > t) {
                    next = s1;
                }
                grid_s.push(next);
                t = next;
            }
        }

        let origin = tangent_at(&potential, 0.0, 0.0)?;
        let n = grid_s.len();
        let points = grid_s
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let left = geometry.state_in_piece(geometry.piece_index(s), s);
                let right_k = if i + 1 == n {
                    geometry.piece_index(s)
                } else {
                    geometry.right_piece_index(s)
                };
                let right = geometry.state_in_piece(right_k, s);
                let (upper_contact, lower_contact) = if i == 0 {
                    (origin.upper_contact, origin.lower_contact)
                } else {
                    (left.upper_contact, left.lower_contact)
                };
                ProfilePoint {
                    s,
                    f: left.f,
                    h: left.h,
                    upper_contact,
                    lower_contact,
                    upper_slope: left.upper_slope,
                    lower_slope: left.lower_slope,
                    survival: left.survival(),
                    upper_slope_deriv: right.upper_slope_deriv,
                    lower_slope_deriv: right.lower_slope_deriv,
                }
            })
            .collect();

        Ok(Self {
            points,
            geometry,
            zeta,
            truncated,
            gamma_floor: grid.gamma_floor,
        })
    }

    pub fn points(&self) -> &[ProfilePoint] {
        &self.points
    }

    pub fn geometry(&self) -> &CurveGeometry {
        &self.geometry
    }

    pub fn curve(&self) -> &EmbeddingCurve {
        self.geometry.curve()
    }

    pub fn pieces(&self) -> &[Piece] {
        self.geometry.pieces()
    }

    /// First touching of `c`; `+inf` if the curve never reaches it.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Last tabulated curve position.
    pub fn end_s(&self) -> f64 {
        self.points[self.points.len() - 1].s
    }

    /// End of the exact geometry, `min(zeta, curve end)`.
    pub fn geometry_end(&self) -> f64 {
        self.geometry.end()
    }

    /// Whether the grid stops at the survival floor rather than at `zeta`.
    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn gamma_floor(&self) -> f64 {
        self.gamma_floor
    }

    pub fn end_point(&self) -> &ProfilePoint {
        &self.points[self.points.len() - 1]
    }

    /// State anywhere on the exact geometry, `0 <= s <= min(zeta, curve end)`.
    pub fn state_at(&self, s: f64) -> Result<PointState> {
        let end = self.geometry.end();
        if !(s >= 0.0 && s <= end * (1.0 + 1e-14)) {
            return Err(EmbedError::OutOfRange {
                what: "s",
                value: s,
                lo: 0.0,
                hi: end,
            });
        }
        if self.geometry.pieces.is_empty() {
            let p = self.points[0];
            return Ok(PointState {
                s: 0.0,
                f: 0.0,
                h: 0.0,
                df: 0.0,
                dh: 0.0,
                upper_contact: p.upper_contact,
                lower_contact: p.lower_contact,
                upper_slope: p.upper_slope,
                lower_slope: p.lower_slope,
                upper_slope_deriv: 0.0,
                lower_slope_deriv: 0.0,
            });
        }
        Ok(self.geometry.state_at(s.min(end)))
    }

    /// `Gamma(s)`
    pub fn survival_at(&self, s: f64) -> Result<f64> {
        Ok(self.state_at(s)?.survival())
    }
}

/// Largest point of `[lo, hi]` where `keep` still holds, for monotone `keep`.
fn bisect(mut lo: f64, mut hi: f64, keep: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if keep(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
