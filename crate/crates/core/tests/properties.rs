use proptest::prelude::*;
use skewembed::curve::Breakpoint;
use skewembed::law::verify_embedding;
use skewembed::{
    build_embedding, exit_law, simulate_paths, tangent_at, CenteredAtomicMeasure, CurvePreset,
    EmbeddingCurve, GridControl, SimConfig, TangentProfile,
};

fn measure_strategy() -> impl Strategy<Value = CenteredAtomicMeasure> {
    prop::collection::vec((-3.0..3.0f64, 0.2..1.0f64), 2..=6).prop_filter_map(
        "degenerate measure",
        |raw| {
            let total: f64 = raw.iter().map(|r| r.1).sum();
            let mean = raw.iter().map(|r| r.0 * r.1).sum::<f64>() / total;
            let atoms: Vec<(f64, f64)> = raw.iter().map(|&(x, w)| (x - mean, w / total)).collect();
            CenteredAtomicMeasure::new(&atoms)
                .ok()
                .filter(|m| !m.is_degenerate())
        },
    )
}

/// Segments as `(df / dh, dh, ds / dh)` in units of the support radius.
fn segments_strategy() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-1.0..=1.0f64, 0.05..0.6f64, 0.5..2.0f64), 1..=4)
}

fn custom_curve(segs: &[(f64, f64, f64)], radius: f64) -> EmbeddingCurve {
    let mut pts = vec![Breakpoint::new(0.0, 0.0, 0.0)];
    for (i, &(u, dh, ds)) in segs.iter().enumerate() {
        let last = *pts.last().unwrap();
        let (u, dh) = if i + 1 == segs.len() {
            (0.9 * u, 4.0 * radius + 1.0)
        } else {
            (u, dh * radius)
        };
        pts.push(Breakpoint::new(
            last.s + ds * dh,
            last.f + u * dh,
            last.h + dh,
        ));
    }
    EmbeddingCurve::custom(pts).unwrap()
}

fn preset_strategy() -> impl Strategy<Value = (CenteredAtomicMeasure, CurvePreset)> {
    (measure_strategy(), 0usize..3, 0.0..1.0f64).prop_map(|(m, k, u)| {
        let preset = match k {
            0 => CurvePreset::Vallois,
            1 => CurvePreset::AzemaYor,
            _ => CurvePreset::LocalTime {
                level: u * m.max_location(),
            },
        };
        (m, preset)
    })
}

/// Brute-force tangent slopes: extremal chords to the kinks, or the
/// asymptotic slopes `+-1`.
fn chord_slopes(m: &CenteredAtomicMeasure, f: f64, h: f64) -> (f64, f64) {
    let mut upper: f64 = 1.0;
    let mut lower: f64 = -1.0;
    for a in m.atoms() {
        let slope = (m.potential(a.location) - h) / (a.location - f);
        if a.location > f {
            upper = upper.min(slope);
        } else if a.location < f {
            lower = lower.max(slope);
        }
    }
    (upper, lower)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn potential_is_convex_and_dominates_abs(m in measure_strategy(), xs in prop::collection::vec(-5.0..5.0f64, 3)) {
        let mut xs = xs;
        xs.sort_by(f64::total_cmp);
        let c: Vec<f64> = xs.iter().map(|&x| m.potential(x)).collect();
        for (x, cx) in xs.iter().zip(&c) {
            prop_assert!(*cx >= x.abs() - 1e-12);
        }
        if xs[2] - xs[0] > 1e-6 {
            let t = (xs[1] - xs[0]) / (xs[2] - xs[0]);
            prop_assert!(c[1] <= (1.0 - t) * c[0] + t * c[2] + 1e-9);
        }
        let far = m.support_radius() + 1.0;
        prop_assert!((m.potential(far) - far).abs() < 1e-9);
        prop_assert!((m.potential(-far) - far).abs() < 1e-9);
    }

    #[test]
    fn tangent_slopes_match_chords(m in measure_strategy(), f in -4.0..4.0f64, depth in 1e-3..2.0f64) {
        let h = m.potential(f) - depth;
        let t = tangent_at(&m.potential_function(), f, h).unwrap();
        let (upper, lower) = chord_slopes(&m, f, h);
        prop_assert!((t.upper_slope - upper).abs() < 1e-10, "{} vs {}", t.upper_slope, upper);
        prop_assert!((t.lower_slope - lower).abs() < 1e-10, "{} vs {}", t.lower_slope, lower);
        prop_assert!(t.upper_slope > t.lower_slope);
    }

    #[test]
    fn presets_embed_the_target((m, preset) in preset_strategy()) {
        let curve = EmbeddingCurve::preset(preset, &m).unwrap();
        let profile = TangentProfile::build(&m, &curve, GridControl::default()).unwrap();
        let law = exit_law(&profile);
        prop_assert!((law.total_mass() - 1.0).abs() < 1e-9);
        prop_assert!(law.mean().abs() < 1e-9);
        prop_assert!(verify_embedding(&law, &m).max_abs_discrepancy < 1e-9);
    }

    #[test]
    fn custom_curves_embed_the_target(m in measure_strategy(), segs in segments_strategy()) {
        let curve = custom_curve(&segs, m.support_radius());
        let built = TangentProfile::build(&m, &curve, GridControl::default());
        prop_assume!(built.is_ok());
        let law = exit_law(&built.unwrap());
        prop_assert!(verify_embedding(&law, &m).max_abs_discrepancy < 1e-9);
    }

    #[test]
    fn profile_is_monotone((m, preset) in preset_strategy()) {
        let curve = EmbeddingCurve::preset(preset, &m).unwrap();
        let profile = TangentProfile::build(&m, &curve, GridControl::default()).unwrap();
        let pts = profile.points();
        prop_assert!((pts[0].survival - 1.0).abs() < 1e-12);
        for w in pts.windows(2) {
            prop_assert!(w[1].s > w[0].s);
            prop_assert!(w[1].survival <= w[0].survival + 1e-12);
            prop_assert!(w[1].survival >= 0.0);
        }
        for p in pts {
            prop_assert!(p.upper_slope <= 1.0 + 1e-12 && p.lower_slope >= -1.0 - 1e-12);
            prop_assert!(p.upper_slope > p.lower_slope);
        }
    }

    #[test]
    fn skew_function_is_lipschitz(m in measure_strategy(), segs in segments_strategy()) {
        let curve = custom_curve(&segs, m.support_radius());
        let built = TangentProfile::build(&m, &curve, GridControl::default());
        prop_assume!(built.is_ok());
        let spec = build_embedding(&built.unwrap()).unwrap();
        for w in spec.rows().windows(2) {
            let dl = w[1].l - w[0].l;
            prop_assert!(dl > 0.0);
            prop_assert!((w[1].g - w[0].g).abs() <= dl * (1.0 + 1e-9) + 1e-12);
        }
        for r in spec.rows() {
            prop_assert!((0.0..=1.0).contains(&r.p));
            prop_assert!(r.alpha >= r.g - 1e-12 && r.beta <= r.g + 1e-12);
            prop_assert!(r.a >= -1e-12 && r.b <= 1e-12);
        }
    }

    #[test]
    fn reparameterisation_leaves_laws_unchanged(
        m in measure_strategy(),
        segs in segments_strategy(),
        factors in prop::collection::vec(0.3..3.0f64, 4),
    ) {
        let curve = custom_curve(&segs, m.support_radius());
        let built = TangentProfile::build(&m, &curve, GridControl::default());
        prop_assume!(built.is_ok());
        let profile = built.unwrap();
        let other = curve.reparameterized(&factors[..curve.segment_count()]).unwrap();
        let profile2 = TangentProfile::build(&m, &other, GridControl::default()).unwrap();
        let (law, law2) = (exit_law(&profile), exit_law(&profile2));
        for a in m.atoms() {
            for x in [a.location - 1e-6, a.location + 1e-6] {
                prop_assert!((law.cdf(x) - law2.cdf(x)).abs() < 1e-9, "cdf at {x}");
            }
        }
        let (s1, s2) = (build_embedding(&profile).unwrap(), build_embedding(&profile2).unwrap());
        prop_assert!((s1.l_max() - s2.l_max()).abs() < 1e-7 * (1.0 + s1.l_max()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), (m, preset) in preset_strategy()) {
        let curve = EmbeddingCurve::preset(preset, &m).unwrap();
        let profile = TangentProfile::build(&m, &curve, GridControl::default()).unwrap();
        let spec = build_embedding(&profile).unwrap();
        let gap = spec
            .rows()
            .iter()
            .skip(1)
            .flat_map(|r| [r.a.abs(), r.b.abs()])
            .filter(|v| v.is_finite())
            .fold(f64::INFINITY, f64::min);
        let cfg = SimConfig::new((gap / 10.0).min(0.05), 50, seed);
        let a = simulate_paths(&spec, &cfg).unwrap();
        let b = simulate_paths(&spec, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}
