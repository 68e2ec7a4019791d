#![allow(dead_code)]

use std::sync::Arc;

use mpc_tracking::costs::{OffsetCost, ScalingFn, StageCost};
use mpc_tracking::model::{
    best_reachable_reference, scalar_integrator, BoxSet, ConstraintSet, Cstr, Matrix, Reference,
    Scheme, SystemModel, Vector,
};
use mpc_tracking::nlp::SqpSettings;
use mpc_tracking::ocp::{Mode, OcpSpec};
use mpc_tracking::terminal::{QuadraticTerminal, TerminalIngredients};

pub fn v(x: &[f64]) -> Vector {
    Vector::from_vec(x.to_vec())
}

/// `x+ = x + u`, `Z = [-2, 2] x [-1, 1]`, unit weights, target the origin.
pub fn scalar(horizon: usize, scaling: ScalingFn) -> OcpSpec {
    let one = Matrix::identity(1, 1);
    OcpSpec {
        model: SystemModel::continuous(Arc::new(scalar_integrator()), 1.0, Scheme::Euler).unwrap(),
        cs: ConstraintSet::new(
            1,
            1,
            BoxSet::new(v(&[-2.0, -1.0]), v(&[2.0, 1.0])).unwrap(),
            BoxSet::new(v(&[-1.9, -0.9]), v(&[1.9, 0.9])).unwrap(),
        )
        .unwrap(),
        sc: StageCost::new(one.clone(), one.clone()).unwrap(),
        offset: OffsetCost::new(one.clone(), one, v(&[0.0]), v(&[0.0])).unwrap(),
        scaling,
        terminal: Arc::new(TerminalIngredients::Equality),
        horizon,
        mode: Mode::Tracking,
        settings: SqpSettings::default(),
    }
}

pub const CSTR_X0: [f64; 2] = [0.9492, 0.43];
pub const CSTR_XD: [f64; 2] = [0.2632, 0.6519];

pub fn cstr_model() -> SystemModel {
    SystemModel::continuous(Arc::new(Cstr::default()), 0.1, Scheme::Euler).unwrap()
}

pub fn cstr_constraints() -> ConstraintSet {
    ConstraintSet::new(
        2,
        1,
        BoxSet::new(v(&[0.0, 0.0, 0.0]), v(&[1.0, 1.0, 2.0])).unwrap(),
        BoxSet::new(v(&[0.0529, 0.43, 0.1366]), v(&[0.9492, 0.86, 0.7687])).unwrap(),
    )
    .unwrap()
}

/// The CSTR spec with the quadratic terminal, and the best reachable
/// reference.
pub fn cstr(horizon: usize) -> (OcpSpec, Reference) {
    let model = cstr_model();
    let cs = cstr_constraints();
    let sc = StageCost::new(Matrix::identity(2, 2), Matrix::from_element(1, 1, 0.01)).unwrap();
    // The input target is the equilibrium input at x_d.
    let r_e = mpc_tracking::model::project_to_manifold(&model, &v(&CSTR_XD), &v(&[0.75])).unwrap();
    let offset = OffsetCost::new(
        Matrix::from_diagonal(&v(&[0.01, 1000.0])),
        Matrix::identity(1, 1),
        v(&CSTR_XD),
        r_e.u.clone(),
    )
    .unwrap();
    let r_d = best_reachable_reference(&model, &cs, &offset)
        .unwrap()
        .reference;
    let terminal = QuadraticTerminal::new(&model, &sc, &cs, 200, 200).unwrap();
    let spec = OcpSpec {
        model,
        cs,
        sc,
        offset,
        scaling: ScalingFn::Linear,
        terminal: Arc::new(TerminalIngredients::Quadratic(terminal)),
        horizon,
        mode: Mode::Tracking,
        settings: SqpSettings::default(),
    };
    (spec, r_d)
}
