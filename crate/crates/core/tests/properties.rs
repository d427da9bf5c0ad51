use dtmc::localization::{smooth_cutoff, theta_from_parts, Thresholds};
use dtmc::noise::{bump, sample_split, GaussianLaw, MixtureLaw, NoiseLaw, UniformBallLaw};
use dtmc::record::{parse_path, path_to_string};
use dtmc::rng::path_rng;
use dtmc::scheme::{euler_scheme_from_fields, simulate_path, Grid};
use dtmc::semigroup::{tv_distance, TvGridSpec};
use dtmc::vectorfield::{from_fn, lie_bracket, lie_bracket_field, FieldRef, KineticDiffusion, KineticDrift, Profile};
use proptest::prelude::*;

fn profile() -> impl Strategy<Value = Profile> {
    prop_oneof![
        (-1.0..1.0f64, -1.0..1.0f64, 0.1..2.0f64).prop_map(|(offset, amp, freq)| Profile::Sine { offset, amp, freq }),
        (0.5..1.5f64, -0.4..0.4f64, 0.1..2.0f64).prop_map(|(offset, amp, scale)| Profile::Tanh { offset, amp, scale }),
        prop::collection::vec(-1.0..1.0f64, 1..4).prop_map(Profile::Poly),
        (-1.0..1.0f64, -1.0..1.0f64, 0.1..2.0f64).prop_map(|(offset, amp, freq)| Profile::TimeSine { offset, amp, freq }),
    ]
}

fn point() -> impl Strategy<Value = ([f64; 2], f64)> {
    ((-2.0..2.0f64, -2.0..2.0f64), 0.0..1.0f64).prop_map(|((a, b), t)| ([a, b], t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bracket_is_antisymmetric(b in profile(), s in profile(), (x, t) in point()) {
        let (v, w): (FieldRef, FieldRef) = (from_fn(KineticDrift(b)), from_fn(KineticDiffusion(s)));
        let vw = lie_bracket(&v, &w, &x, t).unwrap();
        let wv = lie_bracket(&w, &v, &x, t).unwrap();
        for k in 0..2 {
            prop_assert!((vw[k] + wv[k]).abs() <= 1e-12 * (1.0 + vw[k].abs()));
        }
        prop_assert!(lie_bracket(&v, &v, &x, t).unwrap().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn bracket_satisfies_jacobi(a in profile(), b in profile(), c in profile(), (x, t) in point()) {
        let u: FieldRef = from_fn(KineticDrift(a));
        let v: FieldRef = from_fn(KineticDiffusion(b));
        let w: FieldRef = from_fn(KineticDrift(c));
        let j1 = lie_bracket(&u, &lie_bracket_field(&v, &w).unwrap(), &x, t).unwrap();
        let j2 = lie_bracket(&v, &lie_bracket_field(&w, &u).unwrap(), &x, t).unwrap();
        let j3 = lie_bracket(&w, &lie_bracket_field(&u, &v).unwrap(), &x, t).unwrap();
        for k in 0..2 {
            let scale = 1.0 + j1[k].abs() + j2[k].abs() + j3[k].abs();
            prop_assert!((j1[k] + j2[k] + j3[k]).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn cutoffs_lie_in_unit_interval(v in 1.0..100.0f64, x in -200.0..200.0f64) {
        let c = smooth_cutoff(v, x);
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert_eq!(c, smooth_cutoff(v, -x));
        prop_assert!(smooth_cutoff(v, x.abs() + 0.1) <= c);
        let b = bump(v, &[x]);
        prop_assert!((0.0..=1.0).contains(&b));
    }

    #[test]
    fn theta_lies_in_unit_interval(
        eta1 in 1.5..1e4f64,
        eta2 in 1.5..20.0f64,
        g in 0.0..10.0f64,
        det in prop_oneof![Just(f64::INFINITY), 0.0..1e4f64],
        z in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 2), 1..20),
        m in 0.05..0.95f64,
        seed in any::<u64>(),
    ) {
        let thr = Thresholds::manual(eta1, eta2, 0.01).unwrap();
        let chi: Vec<bool> = (0..z.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        let th = theta_from_parts(&thr, g, det, &z, &chi, m);
        prop_assert!((0.0..=1.0).contains(&th.value));
        prop_assert!((0.0..=1.0).contains(&th.det_factor) && (0.0..=1.0).contains(&th.noise_factor));
        if !th.lambda {
            prop_assert_eq!(th.value, 0.0);
        }
    }

    #[test]
    fn split_reconstructs_the_increment(seed in any::<u64>(), k in 2..12i32, which in 0..3usize, n in 1..4usize) {
        let law: Box<dyn NoiseLaw> = match which {
            0 => Box::new(GaussianLaw::new(n).unwrap()),
            1 => Box::new(MixtureLaw::standard(n).unwrap()),
            _ => Box::new(UniformBallLaw::new(n).unwrap()),
        };
        let delta = 2f64.powi(-k);
        let mut rng = path_rng(seed, 0);
        for _ in 0..16 {
            let s = sample_split(&*law, delta, &mut rng).unwrap();
            for i in 0..n {
                let split = if s.chi { s.u[i] } else { s.v[i] };
                prop_assert!((delta.sqrt() * s.z[i] - split).abs() <= 1e-15 * (1.0 + split.abs()));
            }
        }
    }

    #[test]
    fn tv_is_symmetric_and_bounded(
        a in prop::collection::vec(-3.0..3.0f64, 5..60),
        b in prop::collection::vec(-3.0..3.0f64, 5..60),
        h in 0.05..1.0f64,
    ) {
        let a: Vec<Vec<f64>> = a.into_iter().map(|v| vec![v]).collect();
        let b: Vec<Vec<f64>> = b.into_iter().map(|v| vec![v]).collect();
        let spec = TvGridSpec::default();
        let ab = tv_distance(&a, &b, h, &spec).unwrap().value;
        let ba = tv_distance(&b, &a, h, &spec).unwrap().value;
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((-1e-9..=1.0 + 1e-9).contains(&ab));
        prop_assert!(tv_distance(&a, &a, h, &spec).unwrap().value.abs() <= 1e-12);
    }

    #[test]
    fn path_files_round_trip(seed in any::<u64>(), stream in 0..1000u64, k in 2..6i32, steps in 1..12usize, mixture in any::<bool>()) {
        let psi = euler_scheme_from_fields(
            from_fn(KineticDrift(Profile::Sine { offset: 0.0, amp: -0.5, freq: 1.0 })),
            vec![from_fn(KineticDiffusion(Profile::Tanh { offset: 1.0, amp: 0.3, scale: 1.0 }))],
            "kinetic",
        ).unwrap();
        let law: Box<dyn NoiseLaw> = if mixture { Box::new(MixtureLaw::standard(1).unwrap()) } else { Box::new(GaussianLaw::new(1).unwrap()) };
        let delta = 2f64.powi(-k);
        let p = simulate_path(&*psi, &*law, &[0.1, -0.3], Grid::new(delta, delta * steps as f64).unwrap(), seed, stream).unwrap();
        let text = path_to_string(&p).unwrap();
        prop_assert_eq!(parse_path(&text).unwrap(), p);
    }
}
