//! Centred target laws as finite atomic measures, and the potential
//! `c(x) = E|X - x|` they induce.
//!
//! The potential of an atomic law is convex and piecewise linear with kinks
//! exactly at the atoms, which is what lets the tangent geometry downstream
//! be computed by finite searches over kinks.

use serde::{Deserialize, Serialize};

use crate::error::{EmbedError, Result};

/// Default validation slack for mass and mean checks.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

/// A centred probability law with finitely many atoms, sorted by location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteredAtomicMeasure {
    atoms: Vec<Atom>,
    tolerance: f64,
}

impl CenteredAtomicMeasure {
    pub fn new(atoms: &[(f64, f64)]) -> Result<Self> {
        Self::with_tolerance(atoms, DEFAULT_TOLERANCE)
    }

    pub fn with_tolerance(atoms: &[(f64, f64)], tolerance: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(EmbedError::NotProbability { total: 0.0 });
        }
        let mut sorted: Vec<Atom> = atoms
            .iter()
            .map(|&(location, mass)| Atom { location, mass })
            .collect();
        for a in &sorted {
            if !a.location.is_finite() {
                return Err(EmbedError::BadAtom {
                    location: a.location,
                    reason: "location must be finite",
                });
            }
            if !(a.mass > 0.0) || !a.mass.is_finite() {
                return Err(EmbedError::BadAtom {
                    location: a.location,
                    reason: "mass must be positive",
                });
            }
        }
        sorted.sort_by(|a, b| a.location.total_cmp(&b.location));
        for w in sorted.windows(2) {
            if w[0].location == w[1].location {
                return Err(EmbedError::BadAtom {
                    location: w[0].location,
                    reason: "duplicate location",
                });
            }
        }
        let total: f64 = sorted.iter().map(|a| a.mass).sum();
        if (total - 1.0).abs() > tolerance {
            return Err(EmbedError::NotProbability { total });
        }
        let mean: f64 = sorted.iter().map(|a| a.location * a.mass).sum();
        let scale: f64 = sorted
            .iter()
            .map(|a| a.location.abs() * a.mass)
            .sum::<f64>()
            .max(1.0);
        if mean.abs() > tolerance * scale {
            return Err(EmbedError::NotCentered { mean });
        }
        Ok(Self {
            atoms: sorted,
            tolerance,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// The point mass at zero: embedded by `T = 0`.
    pub fn is_degenerate(&self) -> bool {
        self.atoms.len() == 1
    }

    pub fn min_location(&self) -> f64 {
        self.atoms[0].location
    }

    pub fn max_location(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].location
    }

    pub fn support_radius(&self) -> f64 {
        self.min_location().abs().max(self.max_location().abs())
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.location * a.mass).sum()
    }

    pub fn variance(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.location * a.location * a.mass)
            .sum()
    }

    /// `mu((-inf, x))`
    pub fn mass_below(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .take_while(|a| a.location < x)
            .map(|a| a.mass)
            .sum()
    }

    /// `mu((-inf, x])`
    pub fn mass_at_or_below(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .take_while(|a| a.location <= x)
            .map(|a| a.mass)
            .sum()
    }

    /// `mu({x})`
    pub fn mass_at(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .find(|a| a.location == x)
            .map_or(0.0, |a| a.mass)
    }

    /// `c(x) = sum_i p_i |x_i - x|`, evaluated directly.
    pub fn potential(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.mass * (a.location - x).abs())
            .sum()
    }

    /// One-sided derivatives `(c'_-(x), c'_+(x))`.
    pub fn potential_derivatives(&self, x: f64) -> (f64, f64) {
        (
            2.0 * self.mass_below(x) - 1.0,
            2.0 * self.mass_at_or_below(x) - 1.0,
        )
    }

    /// Inverse barycentre `sup{x : E[X | X >= x] <= s}`.
    ///
    /// Saturates at the largest atom once `s` exceeds it.
    pub fn barycenter_inverse(&self, s: f64) -> f64 {
        let slack = 1e-12 * (1.0 + s.abs());
        let mut tail_mass = 0.0;
        let mut tail_moment = 0.0;
        let mut best = self.min_location();
        // Walk from the top so every tail mean is a single accumulation.
        for a in self.atoms.iter().rev() {
            tail_mass += a.mass;
            tail_moment += a.mass * a.location;
            let bary = tail_moment / tail_mass;
            if bary <= s + slack && a.location > best {
                best = a.location;
            }
        }
        best
    }

    pub fn potential_function(&self) -> PotentialFunction {
        PotentialFunction::from_measure(self)
    }
}

/// Piecewise-linear tabulation of `c` at the atoms of a measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialFunction {
    kinks: Vec<f64>,
    values: Vec<f64>,
    left_slopes: Vec<f64>,
    right_slopes: Vec<f64>,
}

impl PotentialFunction {
    pub fn from_measure(measure: &CenteredAtomicMeasure) -> Self {
        let kinks: Vec<f64> = measure.atoms.iter().map(|a| a.location).collect();
        let values = kinks.iter().map(|&x| measure.potential(x)).collect();
        let mut left_slopes = Vec::with_capacity(kinks.len());
        let mut right_slopes = Vec::with_capacity(kinks.len());
        let mut below = 0.0;
        for a in &measure.atoms {
            left_slopes.push(2.0 * below - 1.0);
            below += a.mass;
            right_slopes.push((2.0 * below - 1.0).min(1.0));
        }
        Self {
            kinks,
            values,
            left_slopes,
            right_slopes,
        }
    }

    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn left_slopes(&self) -> &[f64] {
        &self.left_slopes
    }

    pub fn right_slopes(&self) -> &[f64] {
        &self.right_slopes
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.kinks.len();
        if x <= self.kinks[0] || x >= self.kinks[n - 1] {
            return x.abs();
        }
        let j = self.kinks.partition_point(|&k| k <= x) - 1;
        self.values[j] + self.right_slopes[j] * (x - self.kinks[j])
    }

    pub fn derivatives(&self, x: f64) -> (f64, f64) {
        let n = self.kinks.len();
        match self.kinks.binary_search_by(|k| k.total_cmp(&x)) {
            Ok(j) => (self.left_slopes[j], self.right_slopes[j]),
            Err(0) => (-1.0, -1.0),
            Err(j) if j == n => (1.0, 1.0),
            Err(j) => (self.right_slopes[j - 1], self.right_slopes[j - 1]),
        }
    }
}

/// A piecewise-constant probability density, or the point mass at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensitySpec {
    Piecewise { edges: Vec<f64>, heights: Vec<f64> },
    PointMass,
}

impl DensitySpec {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        DensitySpec::Piecewise {
            edges: vec![lo, hi],
            heights: vec![1.0 / (hi - lo)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DensitySpec::PointMass => Ok(()),
            DensitySpec::Piecewise { edges, heights } => {
                if edges.len() < 2 || heights.len() + 1 != edges.len() {
                    return Err(EmbedError::BadDensity(
                        "need n+1 edges for n heights".into(),
                    ));
                }
                if edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| !e.is_finite())
                {
                    return Err(EmbedError::BadDensity(
                        "edges must be finite and strictly increasing".into(),
                    ));
                }
                if heights.iter().any(|h| !(*h >= 0.0) || !h.is_finite()) {
                    return Err(EmbedError::BadDensity("heights must be >= 0".into()));
                }
                let total = self.mass();
                if (total - 1.0).abs() > DEFAULT_TOLERANCE {
                    return Err(EmbedError::BadDensity(format!(
                        "density integrates to {total}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn mass(&self) -> f64 {
        match self {
            DensitySpec::PointMass => 1.0,
            DensitySpec::Piecewise { edges, heights } => heights
                .iter()
                .zip(edges.windows(2))
                .map(|(h, w)| h * (w[1] - w[0]))
                .sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.first_moment_between(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn support(&self) -> (f64, f64) {
        match self {
            DensitySpec::PointMass => (0.0, 0.0),
            DensitySpec::Piecewise { edges, heights } => {
                let lo = heights.iter().position(|&h| h > 0.0).unwrap_or(0);
                let hi = heights.iter().rposition(|&h| h > 0.0).unwrap_or(0);
                (edges[lo], edges[hi + 1])
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            DensitySpec::PointMass => 0.0,
            DensitySpec::Piecewise { edges, heights } => {
                if x < edges[0] || x >= edges[edges.len() - 1] {
                    return 0.0;
                }
                let j = edges.partition_point(|&e| e <= x) - 1;
                heights[j]
            }
        }
    }

    /// `int_a^b f`
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        match self {
            DensitySpec::PointMass => {
                if a <= 0.0 && 0.0 < b {
                    1.0
                } else {
                    0.0
                }
            }
            DensitySpec::Piecewise { edges, heights } => heights
                .iter()
                .zip(edges.windows(2))
                .map(|(h, w)| {
                    let lo = w[0].max(a);
                    let hi = w[1].min(b);
                    if hi > lo {
                        h * (hi - lo)
                    } else {
                        0.0
                    }
                })
                .sum(),
        }
    }

    /// `int_a^b y f(y) dy`
    pub fn first_moment_between(&self, a: f64, b: f64) -> f64 {
        match self {
            DensitySpec::PointMass => 0.0,
            DensitySpec::Piecewise { edges, heights } => heights
                .iter()
                .zip(edges.windows(2))
                .map(|(h, w)| {
                    let lo = w[0].max(a);
                    let hi = w[1].min(b);
                    if hi > lo {
                        0.5 * h * (hi * hi - lo * lo)
                    } else {
                        0.0
                    }
                })
                .sum(),
        }
    }

    /// Smallest `x` with `int_{-inf}^x f = u`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            DensitySpec::PointMass => 0.0,
            DensitySpec::Piecewise { edges, heights } => {
                let mut cum = 0.0;
                for (h, w) in heights.iter().zip(edges.windows(2)) {
                    let m = h * (w[1] - w[0]);
                    if m > 0.0 && cum + m >= u {
                        return (w[0] + (u - cum) / h).min(w[1]);
                    }
                    cum += m;
                }
                self.support().1
            }
        }
    }

    /// Restriction to `[lo, inf)`, renormalised to a probability density.
    pub fn restricted_above(&self, lo: f64) -> Result<(DensitySpec, f64)> {
        match self {
            DensitySpec::PointMass => Ok((DensitySpec::PointMass, 1.0)),
            DensitySpec::Piecewise { edges, heights } => {
                let z = self.mass_between(lo, f64::INFINITY);
                if !(z > 0.0) {
                    return Err(EmbedError::BadDensity("no mass above cut".into()));
                }
                let mut new_edges = vec![lo.max(edges[0])];
                let mut new_heights = Vec::new();
                for (h, w) in heights.iter().zip(edges.windows(2)) {
                    if w[1] <= new_edges[0] {
                        continue;
                    }
                    new_edges.push(w[1]);
                    new_heights.push(h / z);
                }
                Ok((
                    DensitySpec::Piecewise {
                        edges: new_edges,
                        heights: new_heights,
                    },
                    z,
                ))
            }
        }
    }
}

/// Equal-mass quantisation: `n_atoms` atoms at the conditional means of the
/// quantile cells, shifted so the result is exactly centred.
pub fn quantize(density: &DensitySpec, n_atoms: usize) -> Result<CenteredAtomicMeasure> {
    density.validate()?;
    if let DensitySpec::PointMass = density {
        return CenteredAtomicMeasure::new(&[(0.0, 1.0)]);
    }
    if n_atoms == 0 {
        return Err(EmbedError::BadDensity("n_atoms must be positive".into()));
    }
    let mean = density.mean();
    let (lo, hi) = density.support();
    if mean.abs() > DEFAULT_TOLERANCE * lo.abs().max(hi.abs()).max(1.0) {
        return Err(EmbedError::BadDensity(format!("density has mean {mean}")));
    }
    let edges = quantile_edges(density, n_atoms);
    let mass = 1.0 / n_atoms as f64;
    let mut atoms: Vec<(f64, f64)> = edges
        .windows(2)
        .map(|w| (density.first_moment_between(w[0], w[1]) / mass, mass))
        .collect();
    let residual: f64 = atoms.iter().map(|(x, p)| x * p).sum();
    for a in atoms.iter_mut() {
        a.0 -= residual;
    }
    CenteredAtomicMeasure::new(&atoms)
}

/// Cell boundaries of the equal-mass quantisation, `n_atoms + 1` values.
pub fn quantile_edges(density: &DensitySpec, n_atoms: usize) -> Vec<f64> {
    let (lo, hi) = density.support();
    let mut edges: Vec<f64> = (0..=n_atoms)
        .map(|k| density.quantile(k as f64 / n_atoms as f64))
        .collect();
    edges[0] = lo;
    edges[n_atoms] = hi;
    edges
}
