//! Lagrangian certificate that the local-time embedding maximises
//! `E Psi(L_T)` among UI embeddings of a law with a density.
//!
//! Given decreasing `alpha > 0` and increasing `beta < 0` (the Vallois
//! boundaries), the multipliers are
//!
//! ```text
//! A(m)   = 1/2 int_0^m (1/alpha + 1/|beta|)
//! K(u)   = int_0^u Psi''(m) e^{-A(m)} dm
//! J(l)   = int_0^l e^{A} K
//! gamma  = int_0^l e^{A} K / alpha,   eta = int_0^l e^{A} K / beta
//! lambda(b) = J(l_b) - b gamma(l_b)   (b > 0, l_b = alpha^-1(b))
//! lambda(b) = J(l_b) - b eta(l_b)     (b < 0, l_b = beta^-1(b))
//! ```
//!
//! and the bracket `Psi(l) - lambda(b) - gamma(l) b^+ + eta(l) b^- + M(l)/2`,
//! `M = int (gamma - eta)`, must be non-positive while `int lambda f` matches
//! `E Psi(L_T)`.

use serde::{Deserialize, Serialize};

use super::{expected_psi, Psi};
use crate::curve::{CurvePreset, EmbeddingCurve};
use crate::error::{EmbedError, Result};
use crate::measure::{quantile_edges, quantize, DensitySpec};
use crate::tangent::{Contact, GridControl, TangentProfile};
use crate::transform::{build_embedding, EmbeddingSpec};

const TEST_GRID: usize = 200;

/// Piecewise-linear stopping boundaries in local time, as `(l, value)` knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPair {
    pub upper: Vec<(f64, f64)>,
    pub lower: Vec<(f64, f64)>,
}

fn interp(knots: &[(f64, f64)], l: f64) -> f64 {
    let i = knots
        .partition_point(|k| k.0 <= l)
        .clamp(1, knots.len() - 1);
    let (l0, v0) = knots[i - 1];
    let (l1, v1) = knots[i];
    v0 + (v1 - v0) * (l - l0) / (l1 - l0)
}

/// Inverse of a strictly monotone knot table, clamped to its range.
fn inverse(knots: &[(f64, f64)], v: f64) -> f64 {
    let decreasing = knots[0].1 > knots[knots.len() - 1].1;
    let i = if decreasing {
        knots.partition_point(|k| k.1 > v)
    } else {
        knots.partition_point(|k| k.1 < v)
    };
    if i == 0 {
        return knots[0].0;
    }
    if i == knots.len() {
        return knots[knots.len() - 1].0;
    }
    let (l0, v0) = knots[i - 1];
    let (l1, v1) = knots[i];
    l0 + (l1 - l0) * (v - v0) / (v1 - v0)
}

impl BoundaryPair {
    /// The raw step boundaries of a tabulated rule; flat for atomic targets.
    pub fn staircase(spec: &EmbeddingSpec) -> Self {
        let rows = spec.rows();
        let mut upper = Vec::new();
        let mut lower = Vec::new();
        for w in rows.windows(2) {
            upper.push((w[0].l, w[1].alpha));
            upper.push((w[1].l, w[1].alpha));
            lower.push((w[0].l, w[1].beta));
            lower.push((w[1].l, w[1].beta));
        }
        Self { upper, lower }
    }

    /// Check strict monotonicity and signs.
    pub fn validate(&self) -> Result<()> {
        for (knots, sign) in [(&self.upper, 1.0), (&self.lower, -1.0)] {
            if knots.len() < 2 {
                return Err(EmbedError::DegenerateBoundaries { l: 0.0 });
            }
            for w in knots.windows(2) {
                let (l0, v0) = w[0];
                let (l1, v1) = w[1];
                if !(v0.is_finite() && v1.is_finite()) || !(sign * (v0 - v1) > 0.0) {
                    return Err(EmbedError::DegenerateBoundaries { l: l0 });
                }
                if !(l1 > l0) {
                    return Err(EmbedError::DegenerateBoundaries { l: l1 });
                }
            }
            let last = knots.len() - 1;
            if knots[..last].iter().any(|k| !(sign * k.1 > 0.0)) || sign * knots[last].1 < 0.0 {
                return Err(EmbedError::DegenerateBoundaries { l: knots[last].0 });
            }
        }
        Ok(())
    }

    /// Local time at which the first boundary reaches zero.
    pub fn end(&self) -> f64 {
        let zero = |knots: &[(f64, f64)]| {
            let n = knots.len();
            let (l0, v0) = knots[n - 2];
            let (l1, v1) = knots[n - 1];
            if v1 == 0.0 {
                l1
            } else {
                l1 - v1 * (l1 - l0) / (v1 - v0)
            }
        };
        zero(&self.upper).min(zero(&self.lower))
    }

    pub fn alpha(&self, l: f64) -> f64 {
        interp(&self.upper, l)
    }

    pub fn beta(&self, l: f64) -> f64 {
        interp(&self.lower, l)
    }

    /// Continuous boundaries through the switch points of a quantised
    /// Vallois construction: the upper boundary passes through the lower
    /// edge of each quantile cell at the local time its atom stops being
    /// the contact, and symmetrically below; the final segment is extended
    /// linearly to zero.
    pub fn from_quantized_vallois(
        profile: &TangentProfile,
        spec: &EmbeddingSpec,
        edges: &[f64],
    ) -> Result<Self> {
        let geom = profile.geometry();
        let end = profile.end_s();
        let n = edges.len() - 1;
        let mut upper = vec![(0.0, edges[n])];
        let mut lower = vec![(0.0, edges[0])];
        let mut up_prev: Option<usize> = None;
        let mut low_prev: Option<usize> = None;
        for piece in geom.pieces() {
            if piece.s0 > end {
                break;
            }
            if let Contact::Kink(j) = piece.upper {
                if let Some(p) = up_prev {
                    if p != j && edges[p] > 0.0 {
                        upper.push((spec.local_time_at(piece.s0)?, edges[p]));
                    }
                }
                up_prev = Some(j);
            }
            if let Contact::Kink(i) = piece.lower {
                if let Some(p) = low_prev {
                    if p != i && edges[p + 1] < 0.0 {
                        lower.push((spec.local_time_at(piece.s0)?, edges[p + 1]));
                    }
                }
                low_prev = Some(i);
            }
        }
        for knots in [&mut upper, &mut lower] {
            if knots.len() < 2 {
                return Err(EmbedError::DegenerateBoundaries { l: 0.0 });
            }
            let m = knots.len();
            let (l0, v0) = knots[m - 2];
            let (l1, v1) = knots[m - 1];
            knots.push((l1 - v1 * (l1 - l0) / (v1 - v0), 0.0));
        }
        let pair = Self { upper, lower };
        pair.validate()?;
        Ok(pair)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    /// Root of `int_delta^inf b f(b) db = 0`.
    pub delta: f64,
    /// Mass of the target above `delta`.
    pub mass_above_delta: f64,
    pub l_grid: Vec<f64>,
    pub a_l: Vec<f64>,
    pub gamma_l: Vec<f64>,
    pub eta_l: Vec<f64>,
    pub b_grid: Vec<f64>,
    pub lambda_b: Vec<f64>,
    /// `int lambda f`
    pub dual_value: f64,
    /// `E Psi(L_T)` of the primal construction, when one was built.
    pub expected_psi: Option<f64>,
    /// Largest bracket value over the `(b, l)` test grid.
    pub bracket_max: f64,
    /// Upper end of the `l` test range.
    pub l_test_max: f64,
}

/// Root of `int_delta^inf b f(b) db = 0` below zero.
pub fn balance_point(density: &DensitySpec) -> f64 {
    let (lo, _) = density.support();
    let g = |d: f64| density.first_moment_between(d, f64::INFINITY);
    if g(lo) >= -1e-12 {
        return lo;
    }
    let (mut a, mut b) = (lo, 0.0_f64.max(lo));
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if g(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    b
}

/// Certificate for `density` and `psi`, with boundaries taken from a
/// Vallois construction on `n_atoms` equal-mass atoms.
pub fn dual_certificate(
    density: &DensitySpec,
    psi: Psi,
    n_atoms: usize,
) -> Result<DualCertificate> {
    density.validate()?;
    if let DensitySpec::PointMass = density {
        return Err(EmbedError::DegenerateBoundaries { l: 0.0 });
    }
    let delta = balance_point(density);
    let (restricted, z) = density.restricted_above(delta)?;
    let measure = quantize(&restricted, n_atoms)?;
    let edges = quantile_edges(&restricted, n_atoms);
    let curve = EmbeddingCurve::preset(CurvePreset::Vallois, &measure)?;
    let profile = TangentProfile::build(&measure, &curve, GridControl::default())?;
    let spec = build_embedding(&profile)?;
    let boundaries = BoundaryPair::from_quantized_vallois(&profile, &spec, &edges)?;

    let cut = profile
        .points()
        .iter()
        .zip(spec.rows())
        .find(|(p, _)| p.survival <= 0.01)
        .map_or(spec.l_max(), |(_, r)| r.l);
    let l_test_max = cut.min(0.999 * boundaries.end());

    let mut cert = certificate_from_boundaries(density, psi, &boundaries, delta, l_test_max)?;
    cert.mass_above_delta = z;
    cert.expected_psi = Some(z * expected_psi(&spec, &profile, psi)?.at_zero);
    Ok(cert)
}

/// Certificate for given boundaries; `l_test_max` bounds the bracket test.
pub fn certificate_from_boundaries(
    density: &DensitySpec,
    psi: Psi,
    boundaries: &BoundaryPair,
    delta: f64,
    l_test_max: f64,
) -> Result<DualCertificate> {
    boundaries.validate()?;
    let l_end = boundaries.end();
    let top = boundaries.upper[0].1;
    let bottom = delta.max(boundaries.lower[0].1);

    let b_grid: Vec<f64> = (0..TEST_GRID)
        .map(|i| bottom + (top - bottom) * (i as f64 + 0.5) / TEST_GRID as f64)
        .filter(|b| *b != 0.0)
        .collect();
    let l_tests: Vec<f64> = (0..TEST_GRID)
        .map(|i| l_test_max * i as f64 / (TEST_GRID - 1) as f64)
        .collect();

    // Fine grid: uniform, boundary knots, test points, then geometric
    // grading into the end where a boundary reaches zero.
    let h = (2e-4f64).min(l_end / 5000.0);
    let tail = 100.0 * h;
    let mut grid: Vec<f64> = Vec::new();
    let mut l = 0.0;
    while l < l_end - tail {
        grid.push(l);
        l += h;
    }
    let mut d = tail;
    while d > 1e-10 * l_end {
        grid.push(l_end - d);
        d *= 0.997;
    }
    let l_last = l_end - d / 0.997;
    grid.extend(
        boundaries
            .upper
            .iter()
            .chain(&boundaries.lower)
            .map(|k| k.0)
            .filter(|&k| k < l_last),
    );
    let l_b: Vec<f64> = b_grid
        .iter()
        .map(|&b| {
            let l = if b > 0.0 {
                inverse(&boundaries.upper, b)
            } else {
                inverse(&boundaries.lower, b)
            };
            l.min(l_last)
        })
        .collect();
    grid.extend(&l_tests);
    grid.extend(&l_b);
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));

    let n = grid.len();
    let alpha: Vec<f64> = grid.iter().map(|&l| boundaries.alpha(l)).collect();
    let beta: Vec<f64> = grid.iter().map(|&l| boundaries.beta(l)).collect();

    let log_int = |v0: f64, v1: f64, width: f64| {
        let r = (v1 - v0) / v0;
        if r.abs() < 1e-8 {
            width / v0 * (1.0 - 0.5 * r)
        } else {
            width * r.ln_1p() / (v1 - v0)
        }
    };
    let mut a = vec![0.0; n];
    let mut k = vec![0.0; n];
    let mut j = vec![0.0; n];
    let mut gamma = vec![0.0; n];
    let mut eta = vec![0.0; n];
    let mut m = vec![0.0; n];
    for i in 0..n - 1 {
        let w = grid[i + 1] - grid[i];
        a[i + 1] =
            a[i] + 0.5 * (log_int(alpha[i], alpha[i + 1], w) + log_int(-beta[i], -beta[i + 1], w));
        k[i + 1] = k[i]
            + (psi.deriv(grid[i + 1]) - psi.deriv(grid[i]))
                * 0.5
                * ((-a[i]).exp() + (-a[i + 1]).exp());
        let e0 = a[i].exp() * k[i];
        let e1 = a[i + 1].exp() * k[i + 1];
        j[i + 1] = j[i] + 0.5 * w * (e0 + e1);
        gamma[i + 1] = gamma[i] + 0.5 * w * (e0 / alpha[i] + e1 / alpha[i + 1]);
        eta[i + 1] = eta[i] + 0.5 * w * (e0 / beta[i] + e1 / beta[i + 1]);
        m[i + 1] = m[i] + 0.5 * w * (gamma[i] - eta[i] + gamma[i + 1] - eta[i + 1]);
    }

    let node = |l: f64| {
        let i = grid.partition_point(|&g| g < l);
        i.min(n - 1)
    };
    let lambda_at = |b: f64, i: usize| {
        if b > 0.0 {
            j[i] - b * gamma[i]
        } else {
            j[i] - b * eta[i]
        }
    };
    let lambda_b: Vec<f64> = b_grid
        .iter()
        .zip(&l_b)
        .map(|(&b, &l)| lambda_at(b, node(l)))
        .collect();

    let mut bracket_max = f64::NEG_INFINITY;
    for &lt in &l_tests {
        let i = node(lt);
        for (&b, &lam) in b_grid.iter().zip(&lambda_b) {
            let side = if b > 0.0 { gamma[i] * b } else { eta[i] * b };
            let v = psi.value(grid[i]) - lam - side + 0.5 * m[i];
            bracket_max = bracket_max.max(v);
        }
    }

    // int lambda f db, one cell of b per fine-grid cell on each side.
    let mut dual_value = 0.0;
    for i in 0..n - 1 {
        let up = density.mass_between(alpha[i + 1], alpha[i]);
        let down = density.mass_between(beta[i], beta[i + 1]);
        dual_value += 0.5 * (lambda_at(alpha[i], i) + lambda_at(alpha[i + 1], i + 1)) * up;
        dual_value += 0.5 * (lambda_at(beta[i], i) + lambda_at(beta[i + 1], i + 1)) * down;
    }

    Ok(DualCertificate {
        delta,
        mass_above_delta: density.mass_between(delta, f64::INFINITY),
        l_grid: grid,
        a_l: a,
        gamma_l: gamma,
        eta_l: eta,
        b_grid,
        lambda_b,
        dual_value,
        expected_psi: None,
        bracket_max,
        l_test_max,
    })
}
