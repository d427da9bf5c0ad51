//! Monte Carlo duality and integration-by-parts identities at moderate path counts.

use dtmc::localization::Thresholds;
use dtmc::malliavin::DerivativeCap;
use dtmc::noise::{GaussianLaw, MixtureLaw};
use dtmc::scheme::{euler_scheme_from_fields, scheme_from_fn, Grid, RandomWalk, SchemeRef};
use dtmc::semigroup::{duality_check, ibp_identity_check, TestFunction};
use dtmc::vectorfield::{from_fn, KineticDiffusion, KineticDrift, Profile};

fn kinetic() -> SchemeRef {
    euler_scheme_from_fields(
        from_fn(KineticDrift(Profile::Sine { offset: 0.0, amp: -0.5, freq: 1.0 })),
        vec![from_fn(KineticDiffusion(Profile::Tanh { offset: 1.0, amp: 0.3, scale: 1.0 }))],
        "kinetic",
    )
    .unwrap()
}

#[test]
fn duality_random_walk_and_kinetic() {
    let law = GaussianLaw::new(1).unwrap();
    let rw = scheme_from_fn(RandomWalk(1), "rw", None).unwrap();
    let g = TestFunction::Gauss { center: vec![0.3], scale: 0.8 };
    let r = duality_check(&*rw, &law, &[0.0], Grid::new(1.0 / 16.0, 1.0).unwrap(), 0, &g, 20_000, 11, DerivativeCap::default()).unwrap();
    println!("{r:?}");
    assert!(r.z_score.abs() <= 3.0);

    let psi = kinetic();
    let g = TestFunction::Gauss { center: vec![0.2, 0.1], scale: 0.7 };
    for k in 0..2 {
        let r = duality_check(&*psi, &law, &[0.1, 0.0], Grid::new(1.0 / 16.0, 1.0).unwrap(), k, &g, 20_000, 12, DerivativeCap::default()).unwrap();
        println!("{r:?}");
        assert!(r.z_score.abs() <= 3.0);
    }
}

#[test]
fn ibp_random_walk_and_kinetic() {
    let law = GaussianLaw::new(1).unwrap();
    let rw = scheme_from_fn(RandomWalk(1), "rw", None).unwrap();
    let thr = Thresholds::manual(16.0, 50.0, 1.0 / 16.0).unwrap();
    let tests = [TestFunction::Bump { center: vec![0.2], radius: 0.5 }, TestFunction::Sine { k: 0, freq: 1.3 }];
    let rep = ibp_identity_check(&*rw, &law, &[0.0], Grid::new(1.0 / 16.0, 1.0).unwrap(), &thr, &tests, 20_000, 21, DerivativeCap::default()).unwrap();
    for r in &rep.rows {
        println!("{r:?}");
        assert!(r.z_score.abs() <= 3.0);
    }
    let psi = kinetic();
    let mix = MixtureLaw::standard(1).unwrap();
    let thr = Thresholds::manual(400.0, 50.0, 1.0 / 16.0).unwrap();
    let tests = [TestFunction::Gauss { center: vec![0.0, 0.1], scale: 0.4 }, TestFunction::Sine { k: 1, freq: 2.0 }];
    let rep = ibp_identity_check(&*psi, &mix, &[0.1, 0.0], Grid::new(1.0 / 16.0, 1.0).unwrap(), &thr, &tests, 20_000, 22, DerivativeCap::default()).unwrap();
    println!("active {}", rep.active_fraction);
    for r in &rep.rows {
        println!("{r:?}");
        assert!(r.z_score.abs() <= 3.0);
    }
}
