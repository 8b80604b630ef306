//! From curve position to local time: the change of variable `l = H(s)`, the
//! skew function `G = F o H^-1` and the stopping barriers in both the `X` and
//! the `B = X + G(L)` coordinates.

use serde::{Deserialize, Serialize};

use crate::curve::CurvePreset;
use crate::error::{EmbedError, Result};
use crate::quad::gauss_legendre;
use crate::tangent::{Contact, CurveGeometry, TangentProfile};

/// One tabulated point of the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecRow {
    pub s: f64,
    /// Local time `l = H(s)`.
    pub l: f64,
    /// Skew function `G(l)`.
    pub g: f64,
    /// Upper barrier for `X`: `alpha - G`.
    pub a: f64,
    /// Lower barrier for `X`: `beta - G`.
    pub b: f64,
    /// Upper barrier for `B`.
    pub alpha: f64,
    /// Lower barrier for `B`.
    pub beta: f64,
    /// Probability that an excursion started at this local time is positive.
    pub p: f64,
}

/// Scalar data that closes the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecMeta {
    pub l_max: f64,
    pub terminal_mass: f64,
    pub terminal_location: f64,
    /// True when the table stops at the survival floor instead of `zeta`.
    pub truncated: bool,
    pub gamma_floor: f64,
    pub preset: CurvePreset,
}

/// The executable stopping rule.
///
/// `G` is piecewise linear in `l`; `alpha`, `beta` are left-continuous step
/// functions: on `(l_k, l_{k+1}]` they take the value stored at `k + 1`.
#[derive(Debug, Clone)]
pub struct EmbeddingSpec {
    rows: Vec<SpecRow>,
    meta: SpecMeta,
    geometry: Option<CurveGeometry>,
    interval_piece: Vec<usize>,
}

/// Integral of `H'` over `[s0, s1]` inside piece `k`.
pub(crate) fn integrate_rate(geom: &CurveGeometry, k: usize, s0: f64, s1: f64) -> f64 {
    if s1 <= s0 {
        return 0.0;
    }
    let piece = geom.pieces()[k];
    let a = geom.state_in_piece(k, s0);
    let b = geom.state_in_piece(k, s1);
    let affine = (piece.upper == Contact::Asymptote || a.df == 0.0)
        && (piece.lower == Contact::Asymptote || a.df == 0.0);
    if affine {
        // H' = N / D with N, D affine in s.
        let width = s1 - s0;
        let num =
            |p: &crate::tangent::PointState| 2.0 * p.dh - p.df * (p.upper_slope + p.lower_slope);
        let (n0, n1) = (num(&a), num(&b));
        let (d0, d1) = (a.upper_slope - a.lower_slope, b.upper_slope - b.lower_slope);
        let rel = (d1 - d0) / d0;
        if rel.abs() > 1e-4 {
            let nd = (n1 - n0) / width;
            let dd = (d1 - d0) / width;
            return nd / dd * width + (n0 - nd * d0 / dd) / dd * rel.ln_1p();
        }
    }
    gauss_legendre(s0, s1, |s| geom.state_in_piece(k, s).local_time_rate())
}

/// `(1 - G') / 2`, with rounding noise at the reflecting ends removed.
fn skew_from_slope(slope: f64) -> f64 {
    let p = (0.5 * (1.0 - slope)).clamp(0.0, 1.0);
    if p < 1e-12 {
        0.0
    } else if p > 1.0 - 1e-12 {
        1.0
    } else {
        p
    }
}

/// Tabulate the stopping rule on the profile's grid.
pub fn build_embedding(profile: &TangentProfile) -> Result<EmbeddingSpec> {
    let geom = profile.geometry();
    let pts = profile.points();
    let n = pts.len();
    for p in &pts[..n - 1] {
        if !(p.upper_slope - p.lower_slope > 0.0) {
            return Err(EmbedError::DegenerateCurve { s: p.s });
        }
    }

    let mut l = vec![0.0; n];
    let mut interval_piece = Vec::with_capacity(n.saturating_sub(1));
    for k in 0..n.saturating_sub(1) {
        let piece = geom.right_piece_index(pts[k].s);
        interval_piece.push(piece);
        let inc = integrate_rate(geom, piece, pts[k].s, pts[k + 1].s);
        if !(inc > 0.0) {
            return Err(EmbedError::DegenerateCurve { s: pts[k].s });
        }
        l[k + 1] = l[k] + inc;
    }

    let slope = |k: usize| (pts[k + 1].f - pts[k].f) / (l[k + 1] - l[k]);
    let rows = (0..n)
        .map(|k| {
            let g_slope = match (k, n) {
                (_, 1) => 0.0,
                (0, _) => slope(0),
                _ => slope(k - 1),
            };
            let pt = pts[k];
            SpecRow {
                s: pt.s,
                l: l[k],
                g: pt.f,
                a: pt.upper_contact - pt.f,
                b: pt.lower_contact - pt.f,
                alpha: pt.upper_contact,
                beta: pt.lower_contact,
                p: skew_from_slope(g_slope),
            }
        })
        .collect();

    let end = profile.end_point();
    let meta = SpecMeta {
        l_max: l[n - 1],
        terminal_mass: end.survival,
        terminal_location: end.f,
        truncated: profile.is_truncated(),
        gamma_floor: profile.gamma_floor(),
        preset: profile.curve().preset_tag(),
    };
    Ok(EmbeddingSpec {
        rows,
        meta,
        geometry: Some(geom.clone()),
        interval_piece,
    })
}

impl EmbeddingSpec {
    /// Rebuild from a stored table; lookups between rows interpolate linearly.
    pub fn from_table(rows: Vec<SpecRow>, meta: SpecMeta) -> Result<Self> {
        if rows.is_empty() {
            return Err(EmbedError::Config("empty spec table".into()));
        }
        if rows[0].l != 0.0 {
            return Err(EmbedError::Config("spec table must start at l = 0".into()));
        }
        if rows
            .windows(2)
            .any(|w| !(w[1].l > w[0].l) || !(w[1].s > w[0].s))
        {
            return Err(EmbedError::Config(
                "spec table must be strictly increasing in s and l".into(),
            ));
        }
        Ok(Self {
            rows,
            meta,
            geometry: None,
            interval_piece: Vec::new(),
        })
    }

    pub fn rows(&self) -> &[SpecRow] {
        &self.rows
    }

    pub fn meta(&self) -> &SpecMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn l_max(&self) -> f64 {
        self.meta.l_max
    }

    pub fn terminal_mass(&self) -> f64 {
        self.meta.terminal_mass
    }

    pub fn terminal_location(&self) -> f64 {
        self.meta.terminal_location
    }

    pub fn is_truncated(&self) -> bool {
        self.meta.truncated
    }

    /// Whether exact curve geometry is attached (false after a table reload).
    pub fn has_geometry(&self) -> bool {
        self.geometry.is_some()
    }

    /// Index `k` with `l_k < l <= l_{k+1}`, clamped to the table.
    pub fn interval_index(&self, l: f64) -> usize {
        let i = self.rows.partition_point(|r| r.l < l);
        i.clamp(1, self.rows.len().max(2) - 1) - 1
    }

    /// Left-continuous `(alpha(l), beta(l))`.
    pub fn barriers_at(&self, l: f64) -> (f64, f64) {
        if self.rows.len() == 1 {
            return (self.rows[0].alpha, self.rows[0].beta);
        }
        let r = &self.rows[self.interval_index(l) + 1];
        (r.alpha, r.beta)
    }

    /// `G(l)`, linear between rows and constant beyond the table.
    pub fn g_at(&self, l: f64) -> f64 {
        if self.rows.len() == 1 || l <= 0.0 {
            return self.rows[0].g;
        }
        if l >= self.meta.l_max {
            return self.rows[self.rows.len() - 1].g;
        }
        let k = self.interval_index(l);
        let (r0, r1) = (&self.rows[k], &self.rows[k + 1]);
        r0.g + (r1.g - r0.g) * (l - r0.l) / (r1.l - r0.l)
    }

    fn check_l(&self, l: f64) -> Result<()> {
        let hi = self.meta.l_max;
        if !(l >= 0.0 && l <= hi + 1e-12 * (1.0 + hi)) {
            return Err(EmbedError::OutOfRange {
                what: "l",
                value: l,
                lo: 0.0,
                hi,
            });
        }
        Ok(())
    }

    /// `p(l) = (1 - G'(l)) / 2` with the left slope at knots.
    pub fn skew_probability(&self, l: f64) -> Result<f64> {
        self.check_l(l)?;
        if self.rows.len() == 1 {
            return Ok(self.rows[0].p);
        }
        Ok(self.rows[self.interval_index(l) + 1].p)
    }

    /// `H(s)` for `0 <= s <= s_end`.
    pub fn local_time_at(&self, s: f64) -> Result<f64> {
        let end = self.rows[self.rows.len() - 1].s;
        if !(s >= 0.0 && s <= end * (1.0 + 1e-14)) {
            return Err(EmbedError::OutOfRange {
                what: "s",
                value: s,
                lo: 0.0,
                hi: end,
            });
        }
        if self.rows.len() == 1 {
            return Ok(0.0);
        }
        let i = self.rows.partition_point(|r| r.s < s);
        let k = i.clamp(1, self.rows.len() - 1) - 1;
        let (r0, r1) = (&self.rows[k], &self.rows[k + 1]);
        Ok(match &self.geometry {
            Some(geom) => r0.l + integrate_rate(geom, self.interval_piece[k], r0.s, s.min(r1.s)),
            None => r0.l + (r1.l - r0.l) * (s - r0.s) / (r1.s - r0.s),
        })
    }

    /// `H^-1(l)`.
    pub fn invert_h(&self, l: f64) -> Result<f64> {
        self.check_l(l)?;
        if self.rows.len() == 1 || l <= 0.0 {
            return Ok(0.0);
        }
        let l = l.min(self.meta.l_max);
        let k = self.interval_index(l);
        let (r0, r1) = (&self.rows[k], &self.rows[k + 1]);
        let target = l - r0.l;
        let Some(geom) = &self.geometry else {
            return Ok(r0.s + (r1.s - r0.s) * target / (r1.l - r0.l));
        };
        let piece = self.interval_piece[k];
        let (mut lo, mut hi) = (r0.s, r1.s);
        let mut s = r0.s + (r1.s - r0.s) * target / (r1.l - r0.l);
        for _ in 0..100 {
            let err = integrate_rate(geom, piece, r0.s, s) - target;
            if err.abs() <= 1e-15 * (1.0 + l) {
                break;
            }
            if err > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let rate = geom.state_in_piece(piece, s).local_time_rate();
            let newton = s - err / rate;
            s = if newton > lo && newton < hi && rate > 0.0 {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-16 * (1.0 + hi.abs()) {
                break;
            }
        }
        Ok(s)
    }

    pub(crate) fn geometry(&self) -> Option<&CurveGeometry> {
        self.geometry.as_ref()
    }

    pub(crate) fn interval_piece(&self, k: usize) -> usize {
        self.interval_piece[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{CurvePreset, EmbeddingCurve};
    use crate::measure::CenteredAtomicMeasure;
    use crate::tangent::GridControl;

    fn spec(atoms: &[(f64, f64)], preset: CurvePreset) -> EmbeddingSpec {
        let m = CenteredAtomicMeasure::new(atoms).unwrap();
        let c = EmbeddingCurve::preset(preset, &m).unwrap();
        let p = TangentProfile::build(&m, &c, GridControl::default()).unwrap();
        build_embedding(&p).unwrap()
    }

    const MU2: [(f64, f64); 2] = [(-1.0, 0.5), (1.0, 0.5)];
    const MU4: [(f64, f64); 4] = [(-2.0, 0.25), (-1.0, 0.25), (1.0, 0.25), (2.0, 0.25)];

    #[test]
    fn vallois_two_point() {
        let sp = spec(&MU2, CurvePreset::Vallois);
        assert!((sp.local_time_at(0.5).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((sp.invert_h(2f64.ln()).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(sp.invert_h(0.0).unwrap(), 0.0);
        for r in &sp.rows()[1..] {
            assert_eq!((r.g, r.a, r.b, r.p), (0.0, 1.0, -1.0, 0.5));
            assert!((r.l + (1.0 - r.s).ln()).abs() < 1e-10);
        }
        assert!(sp.terminal_mass() <= 1e-6 + 1e-15);
        assert_eq!(sp.skew_probability(1.0).unwrap(), 0.5);
        assert!(sp.skew_probability(sp.l_max() + 1.0).is_err());
    }

    #[test]
    fn vallois_four_point() {
        let sp = spec(&MU4, CurvePreset::Vallois);
        assert!((sp.local_time_at(1.0).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((sp.invert_h(2.0 * 2f64.ln()).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn azema_yor_four_point() {
        let sp = spec(&MU4, CurvePreset::AzemaYor);
        for r in sp.rows() {
            assert!((r.g - r.l).abs() < 1e-12);
            assert_eq!(r.p, 0.0);
            assert_eq!(r.alpha, f64::INFINITY);
        }
        for (l, want) in [
            (0.3, -2.0),
            (0.6, -2.0),
            (0.7, -1.0),
            (1.4, -1.0),
            (1.6, 1.0),
            (1.99, 1.0),
        ] {
            assert_eq!(sp.barriers_at(l).1, want, "l = {l}");
        }
        assert!((sp.terminal_mass() - 0.25).abs() < 1e-12);
        assert!((sp.terminal_location() - 2.0).abs() < 1e-12);
        assert!(!sp.is_truncated());
    }

    #[test]
    fn table_round_trip_interpolates() {
        let sp = spec(&MU2, CurvePreset::Vallois);
        let t = EmbeddingSpec::from_table(sp.rows().to_vec(), *sp.meta()).unwrap();
        assert!(!t.has_geometry());
        assert!((t.invert_h(2f64.ln()).unwrap() - 0.5).abs() < 1e-5);
        assert!(EmbeddingSpec::from_table(vec![], *sp.meta()).is_err());
    }
}
