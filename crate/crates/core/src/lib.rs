//! Lévy-driven SDE systems, their interventions, and numerical checks of
//! the resulting causal semantics.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file fix the scalar type. Statistical
//! tests work in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod builtin;
pub mod driver;
pub mod error;
pub mod euler;
pub mod expr;
pub mod generator;
pub mod intervention;
pub mod linalg;
pub mod ou;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod system;

pub use builtin::{load_builtin, Builtin, ChemParams, BUILTIN_NAMES};
pub use driver::{characteristic_function, psd_factor, sample_increment, IncrementSampler, JumpAtom, LevyTriplet};
pub use error::{Error, Result};
pub use euler::{
    build_euler_sem, check_commutation, convergence_study, euler_path, path_increments, path_noise, simulate,
    simulate_at, simulate_shared, simulate_terminal, CommutationReport, ConvergenceRow, ConvergenceTable, EulerSem,
    Grid, PathEnsemble, SliceSample, TerminalSample,
};
pub use expr::{parse_expression, parse_expression_with, Expression, ParseError, ParseErrorKind};
pub use generator::{
    apply_generator, apply_generator_with, compare_generators, compute_terms, semigroup_estimate,
    test_field_battery, GeneratorComparison, GeneratorForm, GeneratorTerms, ScalarField2, SemigroupEstimate,
};
pub use intervention::{
    embed_constant_intervention, full_process_lift, intervene_sde, intervene_sem, intervene_update,
    ito_counterexample, InterventionSpec, ItoReport, ScalarFn, SemAssignment, SemModel, SemVertex, Target, Zeta,
};
pub use linalg::Matrix;
pub use ou::{gramian, matrix_exp, ou_intervene, ou_marginal, ou_propagate, ou_to_system, ou_transition, GaussianLaw, OuModel};
pub use scalar::Scalar;
pub use stats::{
    energy_distance_test, holm, identifiability_check, ks_two_sample, moment_compare, IdentifiabilityOptions,
    TestOutcome, TestReport, Verdict,
};
pub use system::{
    build_chem_system, probe_signature, CoefficientField, InitialLaw, ProbeBox, ProbeOptions, SdeSystem,
    SignatureGraph,
};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type LevyTriplet64 = LevyTriplet<f64>;
pub type LevyTriplet32 = LevyTriplet<f32>;
pub type SdeSystem64 = SdeSystem<f64>;
pub type SdeSystem32 = SdeSystem<f32>;
pub type PathEnsemble64 = PathEnsemble<f64>;
pub type PathEnsemble32 = PathEnsemble<f32>;
pub type OuModel64 = OuModel<f64>;
pub type OuModel32 = OuModel<f32>;
pub type Grid64 = Grid<f64>;
pub type InterventionSpec64 = InterventionSpec<f64>;
