//! Ready-made example systems with default interventions.
//!
//! Parameter defaults are implementation choices picked for numerical
//! tameness.

use serde::{Deserialize, Serialize};

use crate::driver::{JumpAtom, LevyTriplet};
use crate::error::{Error, Result};
use crate::expr::parse_expression;
use crate::intervention::{ito_system, InterventionSpec, ScalarFn};
use crate::linalg::Matrix;
use crate::ou::{ou_to_system, OuModel};
use crate::scalar::Scalar;
use crate::system::{build_chem_system, CoefficientField, InitialLaw, ProbeBox, SdeSystem};

pub const BUILTIN_NAMES: &[&str] = &[
    "chem",
    "chem-network",
    "ou",
    "two-signatures",
    "two-signatures-b",
    "ito-counterexample",
    "gbm",
    "pure-jump",
    "jump-diffusion",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChemParams {
    pub a: f64,
    pub b11: f64,
    pub b12: f64,
    pub b22: f64,
    pub x0: [f64; 2],
}

impl Default for ChemParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b11: 0.5,
            b12: 0.5,
            b22: 0.5,
            x0: [1.0, 1.0],
        }
    }
}

/// Two-species network `∅ → y`, `y → x`, `x → ∅`, `y → ∅` with drift
/// `(0, a) + B(x, y)`, `B = [[-b11, b12], [-b12, -b22]]`, and diffusion
/// `S diag(√λ)` against four Brownian motions.
pub fn chem<T: Scalar>(params: ChemParams) -> SdeSystem<T> {
    let ChemParams { a, b11, b12, b22, x0 } = params;
    let (a, b11, b12, b22) = (T::of(a), T::of(b11), T::of(b12), T::of(b22));
    let field = CoefficientField::from_fn(2, 5, "chem", move |v: &[T], out| {
        let (x, y) = (v[0], v[1]);
        out[(0, 0)] = -b11 * x + b12 * y;
        out[(1, 0)] = a - b12 * x - b22 * y;
        out[(0, 2)] = (b12 * y).sqrt();
        out[(0, 3)] = -(b11 * x).sqrt();
        out[(1, 1)] = a.sqrt();
        out[(1, 2)] = -(b12 * y).sqrt();
        out[(1, 4)] = -(b22 * y).sqrt();
        Ok(())
    })
    .with_probe_box(ProbeBox::cube(2, T::of(1e-3), T::of(5.0)));
    SdeSystem::new(
        field,
        LevyTriplet::time_and_brownian(4),
        InitialLaw::Fixed(vec![T::of(x0[0]), T::of(x0[1])]),
        vec!["X".into(), "Y".into()],
    )
    .expect("chem system is well formed")
}

/// The same network built from `S` and `λ`, so the drift is exactly `Sλ`.
pub fn chem_network<T: Scalar>(params: ChemParams) -> SdeSystem<T> {
    let s = Matrix::from_f64_rows(&[[0.0, 1.0, -1.0, 0.0], [1.0, -1.0, 0.0, -1.0]]).expect("2x4");
    let rates = [
        format!("{}", params.a),
        format!("{} * x2", params.b12),
        format!("{} * x1", params.b11),
        format!("{} * x2", params.b22),
    ]
    .iter()
    .map(|r| parse_expression(r).expect("rate literal"))
    .collect();
    build_chem_system(
        s,
        rates,
        vec![T::of(params.x0[0]), T::of(params.x0[1])],
        Some(vec!["X".into(), "Y".into()]),
    )
    .expect("chem network is well formed")
}

pub fn ou_model<T: Scalar>() -> OuModel<T> {
    OuModel::new(
        vec![T::zero(), T::zero()],
        Matrix::from_f64_rows(&[[-1.0, 0.5], [0.3, -2.0]]).expect("2x2"),
        Matrix::from_f64_rows(&[[1.0, 0.0], [0.5, 1.0]]).expect("2x2"),
        InitialLaw::Fixed(vec![T::one(), T::one()]),
    )
    .expect("OU model is well formed")
}

pub fn ou_builtin<T: Scalar>() -> SdeSystem<T> {
    ou_to_system(&ou_model())
}

fn radius<T: Scalar>(x: &[T]) -> T {
    (x[0] * x[0] + x[1] * x[1]).sqrt()
}

/// `a(x) = [[x1, 0], [x2²/|x|, −x1x2/|x|]]`, `a(0) = 0`.
pub fn two_signatures_a<T: Scalar>() -> SdeSystem<T> {
    let field = CoefficientField::from_fn(2, 2, "two-signatures a", |x: &[T], out| {
        let r = radius(x);
        if r > T::zero() {
            out[(0, 0)] = x[0];
            out[(1, 0)] = x[1] * x[1] / r;
            out[(1, 1)] = -x[0] * x[1] / r;
        }
        Ok(())
    })
    .with_singular_points(vec![vec![T::zero(), T::zero()]]);
    two_signature_system(field)
}

/// `ã(x) = [[x1²/|x|, x1x2/|x|], [0, x2]]`, `ã(0) = 0`; `ããᵀ = aaᵀ`.
pub fn two_signatures_b<T: Scalar>() -> SdeSystem<T> {
    let field = CoefficientField::from_fn(2, 2, "two-signatures b", |x: &[T], out| {
        let r = radius(x);
        if r > T::zero() {
            out[(0, 0)] = x[0] * x[0] / r;
            out[(0, 1)] = x[0] * x[1] / r;
            out[(1, 1)] = x[1];
        }
        Ok(())
    })
    .with_singular_points(vec![vec![T::zero(), T::zero()]]);
    two_signature_system(field)
}

fn two_signature_system<T: Scalar>(field: CoefficientField<T>) -> SdeSystem<T> {
    SdeSystem::with_default_labels(field, LevyTriplet::brownian(2), InitialLaw::Fixed(vec![T::one(), T::one()]))
        .expect("two-signature system is well formed")
}

/// `dX = X dW`, `X_0 = 1`.
pub fn gbm<T: Scalar>() -> SdeSystem<T> {
    let field = CoefficientField::from_fn(1, 1, "gbm", |x: &[T], out| {
        out[(0, 0)] = x[0];
        Ok(())
    });
    SdeSystem::with_default_labels(field, LevyTriplet::brownian(1), InitialLaw::Fixed(vec![T::one()]))
        .expect("gbm is well formed")
}

/// `dX = dZ` for `Z` a Poisson process with jumps of size 2 at rate 1.
pub fn pure_jump<T: Scalar>() -> SdeSystem<T> {
    let driver = LevyTriplet::new(
        vec![T::zero()],
        Matrix::zeros(1, 1),
        vec![JumpAtom::new(T::one(), vec![T::of(2.0)])],
        T::one(),
    )
    .expect("valid triplet");
    SdeSystem::with_default_labels(
        CoefficientField::constant(Matrix::from_f64_rows(&[[1.0]]).expect("1x1")),
        driver,
        InitialLaw::Fixed(vec![T::zero()]),
    )
    .expect("pure-jump system is well formed")
}

pub fn jump_diffusion_driver<T: Scalar>() -> LevyTriplet<T> {
    let v = |xs: &[f64]| xs.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
    LevyTriplet::new(
        v(&[0.1, -0.2]),
        Matrix::from_f64_rows(&[[0.5, 0.1], [0.1, 0.3]]).expect("2x2"),
        vec![
            JumpAtom::new(T::of(0.8), v(&[0.4, -0.3])),
            JumpAtom::new(T::of(0.5), v(&[1.5, 0.2])),
            JumpAtom::new(T::of(0.3), v(&[-0.2, 0.9])),
        ],
        T::one(),
    )
    .expect("valid triplet")
}

/// Two-dimensional system driven by a jump diffusion with atoms on both
/// sides of the truncation radius.
pub fn jump_diffusion<T: Scalar>() -> SdeSystem<T> {
    let field = CoefficientField::from_fn(2, 2, "jump-diffusion", |x: &[T], out| {
        out[(0, 0)] = T::one() + T::half() * x[1].sin();
        out[(0, 1)] = T::of(0.2) * x[0];
        out[(1, 0)] = T::of(0.3) * x[0].cos();
        out[(1, 1)] = T::half() + T::of(0.1) * x[1] * x[1];
        Ok(())
    });
    SdeSystem::with_default_labels(field, jump_diffusion_driver(), InitialLaw::Fixed(vec![T::half(), -T::half()]))
        .expect("jump-diffusion system is well formed")
}

/// A builtin system with its default intervention.
#[derive(Clone, Debug)]
pub struct Builtin<T> {
    pub name: String,
    pub system: SdeSystem<T>,
    pub intervention: InterventionSpec<T>,
}

pub fn load_builtin<T: Scalar>(name: &str) -> Result<Builtin<T>> {
    let (system, intervention) = match name {
        "chem" => (chem(ChemParams::default()), InterventionSpec::constant(1, T::one())),
        "chem-network" => (chem_network(ChemParams::default()), InterventionSpec::constant(1, T::one())),
        "ou" => (ou_builtin(), InterventionSpec::constant(0, T::of(2.0))),
        "two-signatures" => (two_signatures_a(), InterventionSpec::constant(1, T::one())),
        "two-signatures-b" => (two_signatures_b(), InterventionSpec::constant(1, T::one())),
        "ito-counterexample" => (ito_system(&ScalarFn::square()), InterventionSpec::constant(0, T::one())),
        "gbm" => (gbm(), InterventionSpec::constant(0, T::one())),
        "pure-jump" => (pure_jump(), InterventionSpec::constant(0, T::zero())),
        "jump-diffusion" => (jump_diffusion(), InterventionSpec::constant(1, T::zero())),
        other => return Err(Error::UnknownBuiltin(other.to_owned())),
    };
    Ok(Builtin {
        name: name.to_owned(),
        system,
        intervention,
    })
}

/// Builtins whose driver has jumps.
pub fn jump_builtins<T: Scalar>() -> Vec<Builtin<T>> {
    BUILTIN_NAMES
        .iter()
        .filter_map(|n| load_builtin::<T>(n).ok())
        .filter(|b| b.system.driver.has_jumps())
        .collect()
}
