//! Ornstein–Uhlenbeck systems `dX = B(X − A) dt + σ dW`: construction,
//! interventions and Gaussian transition laws.

use std::sync::Arc;

use serde::Serialize;

use crate::driver::LevyTriplet;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::system::{default_labels, remove_index, CoeffFn, CoefficientField, FieldSource, InitialLaw, SdeSystem, SignatureGraph};

#[derive(Clone, Debug, PartialEq)]
pub struct OuModel<T> {
    pub level: Vec<T>,
    pub reversion: Matrix<T>,
    pub sigma: Matrix<T>,
    pub initial: InitialLaw<T>,
}

impl<T: Scalar> OuModel<T> {
    pub fn new(level: Vec<T>, reversion: Matrix<T>, sigma: Matrix<T>, initial: InitialLaw<T>) -> Result<Self> {
        let p = level.len();
        let check = |what: &'static str, found: usize| {
            if found == p {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what, expected: p, found })
            }
        };
        check("reversion rows", reversion.rows())?;
        check("reversion columns", reversion.cols())?;
        check("sigma rows", sigma.rows())?;
        check("initial state", initial.dim())?;
        Ok(Self {
            level,
            reversion,
            sigma,
            initial,
        })
    }

    pub fn p(&self) -> usize {
        self.level.len()
    }

    pub fn d(&self) -> usize {
        self.sigma.cols()
    }

    /// `σσᵀ`.
    pub fn diffusion(&self) -> Matrix<T> {
        self.sigma.matmul(&self.sigma.transpose())
    }

    /// Edge `i → j` iff `B_ji ≠ 0`.
    pub fn signature(&self) -> SignatureGraph {
        let p = self.p();
        let edges = (0..p).flat_map(|i| (0..p).map(move |j| (i, j)));
        SignatureGraph::from_edges(
            p,
            edges.filter(|&(i, j)| self.reversion[(j, i)] != T::zero()).collect::<Vec<_>>(),
        )
        .expect("edges within range")
    }
}

/// Drift-plus-diffusion encoding against the `(t, W)` driver:
/// `a(x) = [B(x − A) | σ]`.
pub fn ou_to_system<T: Scalar>(model: &OuModel<T>) -> SdeSystem<T> {
    let (p, d) = (model.p(), model.d());
    let (level, b, sigma) = (model.level.clone(), model.reversion.clone(), model.sigma.clone());
    let eval: CoeffFn<T> = Arc::new(move |x: &[T], out: &mut Matrix<T>| {
        for i in 0..p {
            let row = b.row(i);
            let mut drift = T::zero();
            for j in 0..p {
                drift += row[j] * (x[j] - level[j]);
            }
            out[(i, 0)] = drift;
            out.row_mut(i)[1..].copy_from_slice(sigma.row(i));
        }
        Ok(())
    });
    let source = FieldSource::Linear {
        level: model.level.iter().map(|v| v.f64()).collect(),
        reversion: model.reversion.to_f64_rows(),
        sigma: model.sigma.to_f64_rows(),
    };
    let field = CoefficientField::new(p, d + 1, source, eval).with_declared_signature(model.signature());
    SdeSystem::new(field, LevyTriplet::time_and_brownian(d), model.initial.clone(), default_labels(p))
        .expect("OU model dimensions are consistent")
}

/// Postintervention model for `X^m := ζ`:
/// `Ã = α − B̃⁻¹β`, `β_i = B_im (ζ − A_m)`.
pub fn ou_intervene<T: Scalar>(model: &OuModel<T>, m: usize, zeta: T) -> Result<OuModel<T>> {
    let p = model.p();
    if m >= p || p < 2 {
        return Err(Error::InvalidArgument(format!("cannot intervene on x{} of a {p}-dimensional model", m + 1)));
    }
    let b_red = model.reversion.without_row_col(m, m);
    let condition = b_red.condition_one();
    if !(condition.f64() <= 1e12) {
        return Err(Error::SingularReducedReversion {
            condition: condition.f64(),
        });
    }
    let shift = zeta - model.level[m];
    let beta: Vec<T> = (0..p)
        .filter(|&i| i != m)
        .map(|i| model.reversion[(i, m)] * shift)
        .collect();
    let correction = b_red.lu()?.solve(&beta);
    let level = remove_index(&model.level, m)
        .into_iter()
        .zip(correction)
        .map(|(a, c)| a - c)
        .collect();
    OuModel::new(level, b_red, model.sigma.without_row(m), model.initial.without(m)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianLaw<T> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
}

/// `P_t(x, ·) = N(A + e^{tB}(x − A), ∫₀ᵗ e^{sB} σσᵀ e^{sBᵀ} ds)`.
pub fn ou_transition<T: Scalar>(model: &OuModel<T>, x: &[T], t: T) -> Result<GaussianLaw<T>> {
    let p = model.p();
    let start = GaussianLaw {
        mean: x.to_vec(),
        cov: Matrix::zeros(p, p),
    };
    ou_propagate(model, &start, t)
}

/// Law at time `t` of the OU process started from a Gaussian law.
pub fn ou_propagate<T: Scalar>(model: &OuModel<T>, start: &GaussianLaw<T>, t: T) -> Result<GaussianLaw<T>> {
    if t < T::zero() {
        return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
    }
    let e = matrix_exp(&model.reversion.scale(t))?;
    let centred: Vec<T> = start.mean.iter().zip(&model.level).map(|(&x, &a)| x - a).collect();
    let mean = model
        .level
        .iter()
        .zip(e.mul_vec(&centred))
        .map(|(&a, v)| a + v)
        .collect();
    let cov = e
        .congruence(&start.cov)
        .add(&gramian(&model.reversion, &model.diffusion(), t)?)
        .symmetrized();
    Ok(GaussianLaw { mean, cov })
}

/// Law of `X_t` under the model's own initial law.
pub fn ou_marginal<T: Scalar>(model: &OuModel<T>, t: T) -> Result<GaussianLaw<T>> {
    let start = match &model.initial {
        InitialLaw::Fixed(x) => GaussianLaw {
            mean: x.clone(),
            cov: Matrix::zeros(x.len(), x.len()),
        },
        InitialLaw::Gaussian { mean, cov, .. } => GaussianLaw {
            mean: mean.clone(),
            cov: cov.clone(),
        },
    };
    ou_propagate(model, &start, t)
}

const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539_398_330_063_23e-1,
    9.504178996162932e-1,
    2.097847961257068,
    5.371920351148152,
];

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling and squaring with Padé approximants of
/// degree 3 to 13.
pub fn matrix_exp<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            what: "matrix exponential (square)",
            expected: m.rows(),
            found: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("matrix exponential input"));
    }
    let n = m.rows();
    let norm = m.norm_one().f64();
    let low: [&[f64]; 4] = [&PADE3, &PADE5, &PADE7, &PADE9];
    for (theta, coeffs) in THETA.iter().zip(low) {
        if norm <= *theta {
            return pade_low(m, coeffs);
        }
    }
    let s = if norm > THETA[4] {
        (norm / THETA[4]).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = m.scale(T::of(2f64.powi(-s)));
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = r.matmul(&r);
    }
    if !r.is_finite() {
        return Err(Error::NonFinite("matrix exponential overflow"));
    }
    debug_assert_eq!(r.rows(), n);
    Ok(r)
}

fn pade_low<T: Scalar>(m: &Matrix<T>, b: &[f64]) -> Result<Matrix<T>> {
    let n = m.rows();
    let id = Matrix::identity(n);
    let a2 = m.matmul(m);
    let mut power = id.clone();
    let mut u = Matrix::zeros(n, n);
    let mut v = Matrix::zeros(n, n);
    for k in (0..b.len()).step_by(2) {
        v = v.add(&power.scale(T::of(b[k])));
        u = u.add(&power.scale(T::of(b[k + 1])));
        power = power.matmul(&a2);
    }
    let u = m.matmul(&u);
    v.sub(&u).solve_matrix(&v.add(&u))
}

fn pade13<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    let b = |k: usize| T::of(PADE13[k]);
    let n = m.rows();
    let id = Matrix::identity(n);
    let a2 = m.matmul(m);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);
    let inner_u = a6.scale(b(13)).add(&a4.scale(b(11))).add(&a2.scale(b(9)));
    let u = a6
        .matmul(&inner_u)
        .add(&a6.scale(b(7)))
        .add(&a4.scale(b(5)))
        .add(&a2.scale(b(3)))
        .add(&id.scale(b(1)));
    let u = m.matmul(&u);
    let inner_v = a6.scale(b(12)).add(&a4.scale(b(10))).add(&a2.scale(b(8)));
    let v = a6
        .matmul(&inner_v)
        .add(&a6.scale(b(6)))
        .add(&a4.scale(b(4)))
        .add(&a2.scale(b(2)))
        .add(&id.scale(b(0)));
    v.sub(&u).solve_matrix(&v.add(&u))
}

/// `∫₀ᵗ e^{sB} Q e^{sBᵀ} ds` via the exponential of the block matrix
/// `t [[−B, Q], [0, Bᵀ]]`.
pub fn gramian<T: Scalar>(b: &Matrix<T>, q: &Matrix<T>, t: T) -> Result<Matrix<T>> {
    let n = b.rows();
    if !b.is_square() || q.rows() != n || q.cols() != n {
        return Err(Error::DimensionMismatch {
            what: "gramian operands",
            expected: n,
            found: q.rows(),
        });
    }
    if t == T::zero() {
        return Ok(Matrix::zeros(n, n));
    }
    let mut block = Matrix::zeros(2 * n, 2 * n);
    block.set_block(0, 0, &b.scale(-t));
    block.set_block(0, n, &q.scale(t));
    block.set_block(n, n, &b.transpose().scale(t));
    let e = matrix_exp(&block)?;
    let f2 = e.block(n, n, n, n);
    let g1 = e.block(0, n, n, n);
    Ok(f2.transpose().matmul(&g1).symmetrized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervention::{intervene_sde, InterventionSpec};
    use crate::system::{probe_signature, ProbeOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example_model() -> OuModel<f64> {
        OuModel::new(
            vec![0.0, 0.0],
            Matrix::from_rows(&[[-1.0, 0.5], [0.3, -2.0]]).unwrap(),
            Matrix::from_rows(&[[1.0, 0.0], [0.5, 1.0]]).unwrap(),
            InitialLaw::Fixed(vec![1.0, 1.0]),
        )
        .unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix<f64> {
        let data = (0..n * n).map(|_| rng.random_range(-scale..scale)).collect();
        Matrix::from_vec(n, n, data).unwrap()
    }

    #[test]
    fn intervention_example() {
        let post = ou_intervene(&example_model(), 0, 2.0).unwrap();
        assert_eq!(post.reversion, Matrix::from_rows(&[[-2.0]]).unwrap());
        assert!((post.level[0] - 0.3).abs() < 1e-15);
        assert_eq!(post.sigma, Matrix::from_rows(&[[0.5, 1.0]]).unwrap());
        assert_eq!(post.initial, InitialLaw::Fixed(vec![1.0]));
    }

    #[test]
    fn unlinked_target_keeps_level() {
        let mut model = example_model();
        model.reversion[(1, 0)] = 0.0;
        model.level = vec![0.4, -0.7];
        let post = ou_intervene(&model, 0, 9.0).unwrap();
        assert_eq!(post.level, vec![-0.7]);
    }

    #[test]
    fn singular_reduced_reversion_is_an_error() {
        let mut model = example_model();
        model.reversion[(1, 1)] = 0.0;
        assert!(matches!(
            ou_intervene(&model, 0, 1.0),
            Err(Error::SingularReducedReversion { .. })
        ));
    }

    #[test]
    fn closed_form_and_substitution_agree_on_coefficients() {
        let model = OuModel::new(
            vec![0.2, -0.1, 0.5],
            Matrix::from_rows(&[[-1.0, 0.4, 0.2], [0.3, -1.5, 0.0], [0.1, 0.6, -0.8]]).unwrap(),
            Matrix::from_rows(&[[1.0, 0.0], [0.2, 0.7], [0.0, 0.4]]).unwrap(),
            InitialLaw::Fixed(vec![0.0; 3]),
        )
        .unwrap();
        let closed = ou_to_system(&ou_intervene(&model, 1, 1.3).unwrap());
        let substituted = intervene_sde(&ou_to_system(&model), &InterventionSpec::constant(1, 1.3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let y = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let a = closed.coeff.evaluate(&y).unwrap();
            let b = substituted.coeff.evaluate(&y).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-12);
        }
    }

    #[test]
    fn zero_model_stays_put() {
        let model = OuModel::new(
            vec![0.0, 0.0],
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 2),
            InitialLaw::Fixed(vec![1.0, 2.0]),
        )
        .unwrap();
        let law = ou_transition(&model, &[1.0, 2.0], 3.0).unwrap();
        assert_eq!(law.mean, vec![1.0, 2.0]);
        assert_eq!(law.cov, Matrix::zeros(2, 2));
        let sys = ou_to_system(&model);
        assert_eq!(sys.coeff.evaluate(&[5.0, 5.0]).unwrap(), Matrix::zeros(2, 3));
    }

    #[test]
    fn drift_vanishes_at_level() {
        let mut model = example_model();
        model.level = vec![0.7, -1.1];
        let a = ou_to_system(&model).coeff.evaluate(&[0.7, -1.1]).unwrap();
        assert_eq!(a[(0, 0)], 0.0);
        assert_eq!(a[(1, 0)], 0.0);
    }

    #[test]
    fn probed_signature_matches_declared_for_sparse_reversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let mut b = random_matrix(&mut rng, 4, 2.0);
            for v in b.as_mut_slice() {
                if rng.random_bool(0.5) {
                    *v = 0.0;
                }
            }
            let model = OuModel::new(vec![0.0; 4], b, Matrix::identity(4), InitialLaw::Fixed(vec![0.0; 4])).unwrap();
            let sys = ou_to_system(&model);
            let probed = probe_signature(&sys, &ProbeOptions::default_for(&sys.coeff)).unwrap();
            assert_eq!(&probed, sys.coeff.declared_signature().unwrap());
        }
    }

    #[test]
    fn brownian_transition() {
        let model = OuModel::new(
            vec![0.0, 0.0],
            Matrix::zeros(2, 2),
            Matrix::identity(2),
            InitialLaw::Fixed(vec![0.0, 0.0]),
        )
        .unwrap();
        let law = ou_transition(&model, &[0.5, -1.0], 2.0).unwrap();
        assert_eq!(law.mean, vec![0.5, -1.0]);
        assert!(law.cov.max_abs_diff(&Matrix::identity(2).scale(2.0)) < 1e-14);
    }

    #[test]
    fn scalar_transition_at_log_two() {
        let model = OuModel::new(
            vec![0.0],
            Matrix::from_rows(&[[-1.0]]).unwrap(),
            Matrix::from_rows(&[[1.0]]).unwrap(),
            InitialLaw::Fixed(vec![0.0]),
        )
        .unwrap();
        let law = ou_transition(&model, &[3.0], 2f64.ln()).unwrap();
        assert!((law.mean[0] - 1.5).abs() < 1e-14);
        assert!((law.cov[(0, 0)] - 0.375).abs() < 1e-14);
    }

    #[test]
    fn matrix_exp_examples() {
        assert_eq!(matrix_exp(&Matrix::<f64>::zeros(3, 3)).unwrap(), Matrix::identity(3));
        let d = matrix_exp(&Matrix::from_diag(&[1.0, -2.0, 0.5])).unwrap();
        for (i, v) in [1f64, -2.0, 0.5].iter().enumerate() {
            assert!((d[(i, i)] - v.exp()).abs() <= 1e-14 * v.exp());
        }
        let nil = matrix_exp(&Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(nil, Matrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap());
        assert!(matrix_exp(&Matrix::from_rows(&[[f64::NAN]]).unwrap()).is_err());
    }

    #[test]
    fn matrix_exp_large_norm_and_rotation() {
        // exp of a scaled rotation generator is a rotation.
        let th: f64 = 40.0;
        let r = matrix_exp(&Matrix::from_rows(&[[0.0, -th], [th, 0.0]]).unwrap()).unwrap();
        let expect = Matrix::from_rows(&[[th.cos(), -th.sin()], [th.sin(), th.cos()]]).unwrap();
        assert!(r.max_abs_diff(&expect) < 1e-11);
        let big = matrix_exp(&Matrix::from_diag(&[-50.0, 3.0])).unwrap();
        assert!((big[(0, 0)] - (-50f64).exp()).abs() < 1e-30);
        assert!((big[(1, 1)] - 3f64.exp()).abs() < 1e-12 * 3f64.exp());
    }

    #[test]
    fn matrix_exp_respects_commuting_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for scale in [0.001, 0.1, 0.5, 1.5, 4.0, 20.0] {
            let a = random_matrix(&mut rng, 3, scale);
            let full = matrix_exp(&a).unwrap();
            let half = matrix_exp(&a.scale(0.5)).unwrap();
            let sq = half.matmul(&half);
            assert!(full.max_abs_diff(&sq) <= 1e-11 * full.max_abs().max(1.0), "scale {scale}");
        }
    }

    #[test]
    fn gramian_trivial_cases() {
        let b = Matrix::from_rows(&[[-1.0, 0.2], [0.0, -0.5]]).unwrap();
        let q = Matrix::from_rows(&[[1.0, 0.3], [0.3, 2.0]]).unwrap();
        assert_eq!(gramian(&b, &q, 0.0).unwrap(), Matrix::zeros(2, 2));
        let g0 = gramian(&Matrix::zeros(2, 2), &q, 1.7).unwrap();
        assert!(g0.max_abs_diff(&q.scale(1.7)) < 1e-14);
    }

    #[test]
    fn gramian_matches_trapezoid_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = random_matrix(&mut rng, 3, 1.0);
        let s = random_matrix(&mut rng, 3, 1.0);
        let q = s.matmul(&s.transpose());
        let t = 1.3;
        let nodes = 10_000;
        let h = t / nodes as f64;
        let step = matrix_exp(&b.scale(h)).unwrap();
        let mut e = Matrix::identity(3);
        let mut acc = Matrix::zeros(3, 3);
        for k in 0..=nodes {
            let w = if k == 0 || k == nodes { 0.5 } else { 1.0 };
            acc = acc.add(&e.congruence(&q).scale(w * h));
            e = step.matmul(&e);
        }
        let g = gramian(&b, &q, t).unwrap();
        assert!(g.max_abs_diff(&acc) < 1e-8, "{}", g.max_abs_diff(&acc));
        assert!(g.is_symmetric(0.0));
        let (vals, _) = g.symmetric_eigen();
        assert!(vals.iter().all(|&v| v >= -1e-10));
    }

    #[test]
    fn transition_semigroup_property() {
        let model = example_model();
        let x = [0.4, -1.2];
        let direct = ou_transition(&model, &x, 1.5).unwrap();
        let first = ou_transition(&model, &x, 0.6).unwrap();
        let composed = ou_propagate(&model, &first, 0.9).unwrap();
        for (a, b) in direct.mean.iter().zip(&composed.mean) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(direct.cov.max_abs_diff(&composed.cov) < 1e-10);
    }

    #[test]
    fn iterated_interventions_stay_ou() {
        let model: OuModel<f64> = OuModel::new(
            vec![0.0; 3],
            Matrix::from_rows(&[[-1.0, 0.4, 0.2], [0.3, -1.5, 0.1], [0.1, 0.6, -0.8]]).unwrap(),
            Matrix::identity(3),
            InitialLaw::Fixed(vec![0.0; 3]),
        )
        .unwrap();
        // x1 := 1 then (new) x1, formerly x2, := -1; and the reverse order.
        let ab = ou_intervene(&ou_intervene(&model, 0, 1.0).unwrap(), 0, -1.0).unwrap();
        let ba = ou_intervene(&ou_intervene(&model, 1, -1.0).unwrap(), 0, 1.0).unwrap();
        assert_eq!(ab.p(), 1);
        assert!((ab.level[0] - ba.level[0]).abs() < 1e-12);
        assert_eq!(ab.reversion, ba.reversion);
    }

    #[test]
    fn equal_reversion_and_diffusion_give_equal_postintervention_laws() {
        // Different σ with the same σσᵀ.
        let model = example_model();
        let c = model.diffusion();
        let chol_like = crate::driver::psd_factor(&c).unwrap();
        let other = OuModel::new(model.level.clone(), model.reversion.clone(), chol_like, model.initial.clone()).unwrap();
        for t in [0.5, 1.0] {
            let ea = matrix_exp(&model.reversion.scale(t)).unwrap();
            let eb = matrix_exp(&other.reversion.scale(t)).unwrap();
            assert!(ea.max_abs_diff(&eb) < 1e-15);
        }
        let pa = ou_intervene(&model, 1, 0.7).unwrap();
        let pb = ou_intervene(&other, 1, 0.7).unwrap();
        for t in [0.5, 1.0] {
            let la = ou_marginal(&pa, t).unwrap();
            let lb = ou_marginal(&pb, t).unwrap();
            assert!((la.mean[0] - lb.mean[0]).abs() < 1e-10);
            assert!(la.cov.max_abs_diff(&lb.cov) < 1e-10);
        }
    }

    #[test]
    fn f32_matrix_exp() {
        let e = matrix_exp(&Matrix::<f32>::from_diag(&[1.0, 2.0])).unwrap();
        assert!((e[(1, 1)] - 2f32.exp()).abs() < 1e-5);
    }
}
