//! Sampled verification of the standing assumptions on both scenarios.

mod common;

use common::{cstr, scalar, v, CSTR_XD};
use mpc_tracking::costs::{verify_assumptions, ScalingFn};
use mpc_tracking::model::{best_reachable_reference_from, sample_references, Reference, Vector};
use mpc_tracking::terminal::{certify, TerminalIngredients};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn scalar_scenario_has_no_violations() {
    let spec = scalar(1, ScalingFn::Linear);
    let refs = sample_references(&spec.model, &spec.cs, 200);
    let r_d = Reference::unchecked(v(&[0.0]), v(&[0.0]));
    let report = verify_assumptions(
        &spec.sc,
        &spec.offset,
        &spec.scaling,
        &spec.model,
        &spec.cs,
        &refs,
        &r_d,
        10_000,
        7,
    );
    assert!(report.passed(), "{report:#?}");
    let cand = report.candidate.unwrap();
    assert!(cand.c1 > 0.0 && cand.c2 > 0.0);
}

#[test]
fn cstr_scenario_has_no_violations() {
    let (spec, r_d) = cstr(1);
    assert!((&r_d.x - v(&CSTR_XD)).amax() <= 1e-4, "{:?}", r_d.x);
    let refs = sample_references(&spec.model, &spec.cs, 200);
    assert!(refs.len() > 50);
    let report = verify_assumptions(
        &spec.sc,
        &spec.offset,
        &spec.scaling,
        &spec.model,
        &spec.cs,
        &refs,
        &r_d,
        10_000,
        7,
    );
    assert!(report.passed(), "{report:#?}");
    let cand = report.candidate.unwrap();
    assert!(cand.c1 > 0.0 && cand.c2 > 0.0);
}

#[test]
fn best_reference_is_a_fixed_point() {
    let (spec, r_d) = cstr(1);
    let again = best_reachable_reference_from(&spec.model, &spec.cs, &spec.offset, &r_d).unwrap();
    assert!(again.reference.distance(&r_d) <= 1e-10);
}

#[test]
fn terminal_ingredients_certify_across_the_reference_set() {
    let (spec, r_d) = cstr(1);
    let refs = sample_references(&spec.model, &spec.cs, 40);
    for r in refs.iter().chain(std::iter::once(&r_d)) {
        let cert = certify(&spec.terminal, &spec.model, &spec.sc, &spec.cs, r, 500, 3).unwrap();
        assert!(cert.passed(), "{r:?}: {cert:#?}");
    }
}

#[test]
fn points_within_the_reported_radius_are_terminal() {
    let (spec, r_d) = cstr(1);
    let cert = certify(
        &spec.terminal,
        &spec.model,
        &spec.sc,
        &spec.cs,
        &r_d,
        200,
        3,
    )
    .unwrap();
    assert!(cert.c_b > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let dir = Vector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        if dir.norm() < 1e-6 {
            continue;
        }
        let x = &r_d.x + dir.normalize() * (cert.c_b * rng.gen_range(0.0..1.0));
        assert!(spec.terminal.contains(&x, &r_d).unwrap());
    }
    assert!(matches!(
        spec.terminal.as_ref(),
        TerminalIngredients::Quadratic(_)
    ));
}
