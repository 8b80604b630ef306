//! Analytic laws of the stopped process: where `B` stops, how much local
//! time it has collected, and expectations of convex functionals of it.

mod dual;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curve::CurvePreset;
use crate::error::{EmbedError, Result};
use crate::measure::{Atom, CenteredAtomicMeasure};
use crate::quad::gauss_legendre_points;
use crate::tangent::{Contact, TangentProfile};
use crate::transform::{integrate_rate, EmbeddingSpec};

pub use dual::{
    balance_point, certificate_from_boundaries, dual_certificate, BoundaryPair, DualCertificate,
};

const MASS_EPS: f64 = 1e-15;

/// `Pr(Y_T >= s) = Gamma(s)` where `Y_T` is the curve position at stopping.
pub fn survival_y(profile: &TangentProfile, s: f64) -> Result<f64> {
    profile.survival_at(s)
}

/// Law of `B_T`, split by the mechanism that stops the path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitLaw {
    /// Mass stopped on the upper barrier, by location.
    pub upper: Vec<Atom>,
    /// Mass stopped on the lower barrier, by location.
    pub lower: Vec<Atom>,
    /// Mass stopped at the end of the curve.
    pub terminal: Atom,
    /// Mass not accounted for by the pieces above.
    pub truncation_mass: f64,
}

fn push_merged(out: &mut Vec<Atom>, location: f64, mass: f64) {
    if mass <= 0.0 {
        return;
    }
    match out.last_mut() {
        Some(last) if last.location == location => last.mass += mass,
        _ => out.push(Atom { location, mass }),
    }
}

/// Exit law from the exact contact pieces, integrated all the way to `zeta`.
///
/// Each piece with a finite upper contact `theta` sends `(R(s0) - R(s1)) / 2`
/// to `theta`, and symmetrically for the lower side. Whatever survival is
/// left at the end of the curve stops at `F` there.
pub fn exit_law(profile: &TangentProfile) -> ExitLaw {
    let geom = profile.geometry();
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    if geom.pieces().is_empty() {
        let p = profile.end_point();
        return ExitLaw {
            upper,
            lower,
            terminal: Atom {
                location: p.f,
                mass: p.survival,
            },
            truncation_mass: 0.0,
        };
    }
    for (k, piece) in geom.pieces().iter().enumerate() {
        let a = geom.state_in_piece(k, piece.s0);
        let b = geom.state_in_piece(k, piece.s1);
        if let Contact::Kink(_) = piece.upper {
            push_merged(
                &mut upper,
                a.upper_contact,
                0.5 * (a.upper_slope - b.upper_slope),
            );
        }
        if let Contact::Kink(_) = piece.lower {
            push_merged(
                &mut lower,
                a.lower_contact,
                0.5 * (b.lower_slope - a.lower_slope),
            );
        }
    }
    let last = geom.pieces().len() - 1;
    let end = geom.state_in_piece(last, geom.end());
    ExitLaw {
        upper,
        lower,
        terminal: Atom {
            location: end.f,
            mass: end.survival(),
        },
        truncation_mass: 0.0,
    }
}

impl ExitLaw {
    pub fn total_mass(&self) -> f64 {
        self.upper
            .iter()
            .chain(&self.lower)
            .map(|a| a.mass)
            .sum::<f64>()
            + self.terminal.mass
            + self.truncation_mass
    }

    /// All stopping locations merged and sorted; zero masses dropped.
    pub fn atoms(&self) -> Vec<Atom> {
        let mut all: Vec<Atom> = self
            .upper
            .iter()
            .chain(&self.lower)
            .chain(std::iter::once(&self.terminal))
            .filter(|a| a.mass > MASS_EPS)
            .copied()
            .collect();
        all.sort_by(|a, b| a.location.total_cmp(&b.location));
        let mut out: Vec<Atom> = Vec::with_capacity(all.len());
        for a in all {
            match out.last_mut() {
                Some(last)
                    if (last.location - a.location).abs() <= 1e-12 * (1.0 + a.location.abs()) =>
                {
                    last.mass += a.mass
                }
                _ => out.push(a),
            }
        }
        out
    }

    /// `Pr(B_T <= x)`
    pub fn cdf(&self, x: f64) -> f64 {
        self.atoms()
            .iter()
            .filter(|a| a.location <= x)
            .map(|a| a.mass)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.atoms().iter().map(|a| a.location * a.mass).sum()
    }

    pub fn abs_mean(&self) -> f64 {
        self.atoms().iter().map(|a| a.location.abs() * a.mass).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomCheck {
    pub location: f64,
    pub target_mass: f64,
    pub law_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCheck {
    pub max_abs_discrepancy: f64,
    pub rows: Vec<AtomCheck>,
}

/// Compare the exit law atom by atom with the target measure.
pub fn verify_embedding(law: &ExitLaw, measure: &CenteredAtomicMeasure) -> EmbeddingCheck {
    let mut rows: Vec<AtomCheck> = measure
        .atoms()
        .iter()
        .map(|a| AtomCheck {
            location: a.location,
            target_mass: a.mass,
            law_mass: 0.0,
        })
        .collect();
    for a in law.atoms() {
        let hit = rows
            .iter_mut()
            .find(|r| (r.location - a.location).abs() <= 1e-9 * (1.0 + a.location.abs()));
        match hit {
            Some(r) => r.law_mass += a.mass,
            None => rows.push(AtomCheck {
                location: a.location,
                target_mass: 0.0,
                law_mass: a.mass,
            }),
        }
    }
    rows.sort_by(|a, b| a.location.total_cmp(&b.location));
    let max_abs_discrepancy = rows
        .iter()
        .map(|r| (r.law_mass - r.target_mass).abs())
        .fold(0.0, f64::max);
    EmbeddingCheck {
        max_abs_discrepancy,
        rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAtom {
    pub location: f64,
    pub local_time: f64,
    pub mass: f64,
}

/// Law of `(B_T, L_T)` discretised on the embedding grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointExitLaw {
    pub entries: Vec<JointAtom>,
}

impl JointExitLaw {
    /// `Pr(L_T >= l)`
    pub fn local_time_survival(&self, l: f64) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.local_time >= l)
            .map(|e| e.mass)
            .sum()
    }

    /// `Pr(B_T = x)` summed over local times.
    pub fn location_mass(&self, x: f64) -> f64 {
        self.entries
            .iter()
            .filter(|e| (e.location - x).abs() <= 1e-12 * (1.0 + x.abs()))
            .map(|e| e.mass)
            .sum()
    }
}

/// Joint law following the executable rule: exits within each grid interval
/// are placed at its local-time midpoint, and everything alive at `l_max`
/// stops at the terminal location.
pub fn joint_exit_law(profile: &TangentProfile, spec: &EmbeddingSpec) -> Result<JointExitLaw> {
    let pts = profile.points();
    let rows = spec.rows();
    let mut entries = Vec::new();
    for k in 0..pts.len().saturating_sub(1) {
        let mid = spec.local_time_at(0.5 * (pts[k].s + pts[k + 1].s))?;
        let up = 0.5 * (pts[k].upper_slope - pts[k + 1].upper_slope);
        let down = 0.5 * (pts[k + 1].lower_slope - pts[k].lower_slope);
        if up > 0.0 {
            entries.push(JointAtom {
                location: rows[k + 1].alpha,
                local_time: mid,
                mass: up,
            });
        }
        if down > 0.0 {
            entries.push(JointAtom {
                location: rows[k + 1].beta,
                local_time: mid,
                mass: down,
            });
        }
    }
    entries.push(JointAtom {
        location: spec.terminal_location(),
        local_time: spec.l_max(),
        mass: spec.terminal_mass(),
    });
    Ok(JointExitLaw { entries })
}

/// `Pr(L_T >= l) = Gamma(H^-1(l))`
pub fn local_time_law(spec: &EmbeddingSpec, profile: &TangentProfile, l: f64) -> Result<f64> {
    let s = spec.invert_h(l)?;
    profile.survival_at(s)
}

/// Convex functions of local time with `Psi(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "param")]
pub enum Psi {
    Zero,
    Linear,
    /// `l^p`, `p >= 1`
    Power(f64),
    /// `e^{k l} - 1 - k l`
    Exponential(f64),
}

impl Psi {
    pub fn value(&self, l: f64) -> f64 {
        match *self {
            Psi::Zero => 0.0,
            Psi::Linear => l,
            Psi::Power(p) => l.max(0.0).powf(p),
            Psi::Exponential(k) => (k * l).exp_m1() - k * l,
        }
    }

    pub fn deriv(&self, l: f64) -> f64 {
        match *self {
            Psi::Zero => 0.0,
            Psi::Linear => 1.0,
            Psi::Power(p) => p * l.max(0.0).powf(p - 1.0),
            Psi::Exponential(k) => k * (k * l).exp_m1(),
        }
    }

    pub fn second_deriv(&self, l: f64) -> f64 {
        match *self {
            Psi::Zero | Psi::Linear => 0.0,
            Psi::Power(1.0) => 0.0,
            Psi::Power(p) => p * (p - 1.0) * l.max(0.0).powf(p - 2.0),
            Psi::Exponential(k) => k * k * (k * l).exp(),
        }
    }
}

impl FromStr for Psi {
    type Err = EmbedError;

    /// Accepts `0`, `l`, `l^p` and `exp(k)`.
    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || EmbedError::Config(format!("unrecognised psi '{s}'; use 0, l, l^p or exp(k)"));
        if t == "0" {
            return Ok(Psi::Zero);
        }
        if t == "l" {
            return Ok(Psi::Linear);
        }
        if let Some(p) = t.strip_prefix("l^") {
            let p: f64 = p.parse().map_err(|_| bad())?;
            if !(p >= 1.0) || !p.is_finite() {
                return Err(EmbedError::Config(format!(
                    "psi power must be >= 1, got {p}"
                )));
            }
            return Ok(if p == 1.0 { Psi::Linear } else { Psi::Power(p) });
        }
        if let Some(k) = t.strip_prefix("exp(").and_then(|r| r.strip_suffix(')')) {
            let k: f64 = k.parse().map_err(|_| bad())?;
            if !k.is_finite() {
                return Err(bad());
            }
            return Ok(Psi::Exponential(k));
        }
        Err(bad())
    }
}

impl fmt::Display for Psi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psi::Zero => write!(f, "0"),
            Psi::Linear => write!(f, "l"),
            Psi::Power(p) => write!(f, "l^{p}"),
            Psi::Exponential(k) => write!(f, "exp({k})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiExpectation {
    /// `E Psi(L_T)` for the local time at zero of `X`.
    pub at_zero: f64,
    /// `(x, E Psi(L_T^x))` for the local-time-at-`x` preset.
    pub at_level: Option<(f64, f64)>,
}

/// `E Psi(L_T - shift)^+ = int Psi'(l - shift) Pr(L_T >= l) dl` over `l > shift`,
/// evaluated in the curve parameter with exact `H`.
fn shifted_expectation(
    spec: &EmbeddingSpec,
    profile: &TangentProfile,
    psi: Psi,
    shift: f64,
) -> Result<f64> {
    let pts = profile.points();
    let Some(geom) = spec.geometry() else {
        return Err(EmbedError::Config(
            "expectations need the exact geometry".into(),
        ));
    };
    let rows = spec.rows();
    let mut total = 0.0;
    for k in 0..pts.len().saturating_sub(1) {
        let (l0, l1) = (rows[k].l, rows[k + 1].l);
        if l1 <= shift {
            continue;
        }
        let piece = spec.interval_piece(k);
        let mut s0 = pts[k].s;
        let s1 = pts[k + 1].s;
        if l0 < shift {
            s0 = spec.invert_h(shift)?.clamp(s0, s1);
        }
        total += gauss_legendre_points(s0, s1)
            .map(|(s, w)| {
                let st = geom.state_in_piece(piece, s);
                let l = l0 + integrate_rate(geom, piece, pts[k].s, s);
                if l <= shift {
                    return 0.0;
                }
                w * psi.deriv(l - shift) * st.survival() * st.local_time_rate()
            })
            .sum::<f64>();
    }
    Ok(total)
}

/// `E Psi(L_T)`, and `E Psi(L_T^x)` for the local-time-at-`x` preset, where
/// `L_T^x = L_T - (sup B ∧ x) = (L_T - x)^+`.
pub fn expected_psi(
    spec: &EmbeddingSpec,
    profile: &TangentProfile,
    psi: Psi,
) -> Result<PsiExpectation> {
    if psi == Psi::Zero {
        return Ok(PsiExpectation {
            at_zero: 0.0,
            at_level: match profile.curve().preset_tag() {
                CurvePreset::LocalTime { level } => Some((level, 0.0)),
                _ => None,
            },
        });
    }
    let at_zero = shifted_expectation(spec, profile, psi, 0.0)?;
    let at_level = match profile.curve().preset_tag() {
        CurvePreset::LocalTime { level } => Some((
            level,
            shifted_expectation(spec, profile, psi, level.max(0.0))?,
        )),
        _ => None,
    };
    Ok(PsiExpectation { at_zero, at_level })
}
