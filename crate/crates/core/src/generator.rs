//! Pointwise evaluation of the Lévy-driven generator, structural generator
//! comparison and the Monte Carlo semigroup check.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::euler::{simulate_terminal, Grid};
use crate::linalg::{dot, norm2, Matrix};
use crate::scalar::Scalar;
use crate::system::{InitialLaw, SdeSystem};

type ValueFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
type GradFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;
type HessFn<T> = Arc<dyn Fn(&[T], &mut Matrix<T>) + Send + Sync>;

/// A `C²` test function with gradient and Hessian. Missing derivatives fall
/// back to central differences with step `1e-5 (1 + ‖x‖)`.
#[derive(Clone)]
pub struct ScalarField2<T> {
    name: String,
    dim: usize,
    value: ValueFn<T>,
    gradient: Option<GradFn<T>>,
    hessian: Option<HessFn<T>>,
}

impl<T> fmt::Debug for ScalarField2<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField2")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_gradient", &self.gradient.is_some())
            .field("analytic_hessian", &self.hessian.is_some())
            .finish()
    }
}

impl<T: Scalar> ScalarField2<T> {
    pub fn from_fn<F>(name: &str, dim: usize, f: F) -> Self
    where
        F: Fn(&[T]) -> T + Send + Sync + 'static,
    {
        Self {
            name: name.to_owned(),
            dim,
            value: Arc::new(f),
            gradient: None,
            hessian: None,
        }
    }

    pub fn with_gradient<F>(mut self, g: F) -> Self
    where
        F: Fn(&[T], &mut [T]) + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn with_hessian<F>(mut self, h: F) -> Self
    where
        F: Fn(&[T], &mut Matrix<T>) + Send + Sync + 'static,
    {
        self.hessian = Some(Arc::new(h));
        self
    }

    /// `q(z) exp(-‖z‖² / 2w²)` with `z = x - center` and the quadratic
    /// prefactor `q(z) = c + b·z + zᵀQz`.
    pub fn gaussian_bump(center: Vec<T>, width: T, c: T, b: Vec<T>, q: Matrix<T>) -> Self {
        let bump = Arc::new(GaussianBump {
            center,
            inv_w2: T::one() / (width * width),
            c,
            b,
            q: q.symmetrized(),
        });
        let (b1, b2, b3) = (bump.clone(), bump.clone(), bump.clone());
        Self {
            name: format!("bump(w={width})"),
            dim: bump.center.len(),
            value: Arc::new(move |x| b1.value(x)),
            gradient: Some(Arc::new(move |x, g| b2.gradient(x, g))),
            hessian: Some(Arc::new(move |x, h| b3.hessian(x, h))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        self.gradient.is_some() && self.hessian.is_some()
    }

    pub fn value(&self, x: &[T]) -> T {
        (self.value)(x)
    }

    fn fd_step(x: &[T]) -> T {
        T::of(1e-5) * (T::one() + norm2(x))
    }

    pub fn gradient(&self, x: &[T], out: &mut [T]) {
        if let Some(g) = &self.gradient {
            return g(x, out);
        }
        let h = Self::fd_step(x);
        let mut y = x.to_vec();
        for i in 0..x.len() {
            y[i] = x[i] + h;
            let up = self.value(&y);
            y[i] = x[i] - h;
            let down = self.value(&y);
            y[i] = x[i];
            out[i] = (up - down) / (h + h);
        }
    }

    pub fn hessian(&self, x: &[T], out: &mut Matrix<T>) {
        if let Some(hf) = &self.hessian {
            return hf(x, out);
        }
        let h = Self::fd_step(x);
        let p = x.len();
        let f0 = self.value(x);
        let mut y = x.to_vec();
        for i in 0..p {
            y[i] = x[i] + h;
            let up = self.value(&y);
            y[i] = x[i] - h;
            let down = self.value(&y);
            y[i] = x[i];
            out[(i, i)] = (up - f0 - f0 + down) / (h * h);
            for j in 0..i {
                let mut corner = |si: T, sj: T| {
                    y[i] = x[i] + si * h;
                    y[j] = x[j] + sj * h;
                    let v = self.value(&y);
                    y[i] = x[i];
                    y[j] = x[j];
                    v
                };
                let (one, neg) = (T::one(), -T::one());
                let v = (corner(one, one) - corner(one, neg) - corner(neg, one) + corner(neg, neg)) / (T::of(4.0) * h * h);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
    }

    /// `αf + βg`.
    pub fn linear_combination(alpha: T, f: &Self, beta: T, g: &Self) -> Self {
        let (fv, gv) = (f.clone(), g.clone());
        let (fg, gg) = (f.clone(), g.clone());
        let (fh, gh) = (f.clone(), g.clone());
        let p = f.dim;
        Self {
            name: format!("{alpha}·{} + {beta}·{}", f.name, g.name),
            dim: p,
            value: Arc::new(move |x| alpha * fv.value(x) + beta * gv.value(x)),
            gradient: Some(Arc::new(move |x, out| {
                let mut tmp = vec![T::zero(); p];
                fg.gradient(x, out);
                gg.gradient(x, &mut tmp);
                for (o, t) in out.iter_mut().zip(tmp) {
                    *o = alpha * *o + beta * t;
                }
            })),
            hessian: Some(Arc::new(move |x, out| {
                let mut tmp = Matrix::zeros(p, p);
                fh.hessian(x, out);
                gh.hessian(x, &mut tmp);
                for (o, &t) in out.as_mut_slice().iter_mut().zip(tmp.as_slice()) {
                    *o = alpha * *o + beta * t;
                }
            })),
        }
    }
}

struct GaussianBump<T> {
    center: Vec<T>,
    inv_w2: T,
    c: T,
    b: Vec<T>,
    q: Matrix<T>,
}

impl<T: Scalar> GaussianBump<T> {
    fn parts(&self, x: &[T]) -> (Vec<T>, T, T) {
        let z: Vec<T> = x.iter().zip(&self.center).map(|(&a, &c)| a - c).collect();
        let g = (-T::half() * dot(&z, &z) * self.inv_w2).exp();
        let qz = self.q.mul_vec(&z);
        let poly = self.c + dot(&self.b, &z) + dot(&z, &qz);
        (z, g, poly)
    }

    fn poly_grad(&self, z: &[T]) -> Vec<T> {
        let qz = self.q.mul_vec(z);
        self.b.iter().zip(qz).map(|(&b, q)| b + q + q).collect()
    }

    fn value(&self, x: &[T]) -> T {
        let (_, g, poly) = self.parts(x);
        poly * g
    }

    fn gradient(&self, x: &[T], out: &mut [T]) {
        let (z, g, poly) = self.parts(x);
        let dq = self.poly_grad(&z);
        for i in 0..z.len() {
            out[i] = (dq[i] - poly * z[i] * self.inv_w2) * g;
        }
    }

    fn hessian(&self, x: &[T], out: &mut Matrix<T>) {
        let (z, g, poly) = self.parts(x);
        let dq = self.poly_grad(&z);
        let w = self.inv_w2;
        for i in 0..z.len() {
            for j in 0..z.len() {
                let delta = if i == j { w } else { T::zero() };
                let v = self.q[(i, j)] + self.q[(i, j)] - dq[i] * z[j] * w - dq[j] * z[i] * w
                    + poly * (z[i] * z[j] * w * w - delta);
                out[(i, j)] = v * g;
            }
        }
    }
}

/// Five bumps with polynomial prefactors of degree ≤ 2, centred on a fixed
/// lattice around `origin`.
pub fn test_field_battery<T: Scalar>(origin: &[T]) -> Vec<ScalarField2<T>> {
    let p = origin.len();
    let at = |offsets: &[f64]| -> Vec<T> {
        (0..p)
            .map(|i| origin[i] + T::of(offsets[i % offsets.len()]))
            .collect()
    };
    let zeros = || vec![T::zero(); p];
    let ramp: Vec<T> = (0..p).map(|i| T::of(0.3 + 0.2 * i as f64)).collect();
    let mut cross = Matrix::zeros(p, p);
    for i in 0..p {
        cross[(i, i)] = T::of(0.25);
        if i + 1 < p {
            cross[(i, i + 1)] = T::of(-0.2);
            cross[(i + 1, i)] = T::of(-0.2);
        }
    }
    vec![
        ScalarField2::gaussian_bump(at(&[0.0]), T::one(), T::one(), zeros(), Matrix::zeros(p, p)),
        ScalarField2::gaussian_bump(at(&[0.5, -0.5]), T::of(0.8), T::one(), ramp.clone(), Matrix::zeros(p, p)),
        ScalarField2::gaussian_bump(at(&[-0.5, 0.5]), T::of(1.2), T::of(0.5), zeros(), cross.clone()),
        ScalarField2::gaussian_bump(at(&[1.0, -1.0]), T::of(1.5), T::of(-0.7), ramp, cross),
        ScalarField2::gaussian_bump(at(&[-1.0, 1.0]), T::of(2.0), T::zero(), zeros(), Matrix::identity(p)),
    ]
}

/// The ingredients of the generator at one point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorTerms<T> {
    pub x: Vec<T>,
    /// `a(x) α`.
    pub drift: Vec<T>,
    /// `β(x) = a(x)α + Σ λ (1_E(a(x)y) − 1_D(y)) a(x)y`.
    pub beta: Vec<T>,
    /// `a(x) C a(x)ᵀ`.
    pub diffusion: Matrix<T>,
    /// Driver atoms `(λ, y, y ∈ D)`.
    pub driver_atoms: Vec<(T, Vec<T>, bool)>,
    /// Pushforward atoms `(λ, a(x)y)`.
    pub atoms: Vec<(T, Vec<T>)>,
    pub r_d: T,
    pub r_e: T,
}

impl<T: Scalar> GeneratorTerms<T> {
    fn in_e(&self, v: &[T]) -> bool {
        norm2(v) <= self.r_e
    }
}

pub fn compute_terms<T: Scalar>(system: &SdeSystem<T>, x: &[T], r_e: T) -> Result<GeneratorTerms<T>> {
    if !(r_e > T::zero()) {
        return Err(Error::InvalidArgument(format!("r_E must be positive, got {r_e}")));
    }
    if x.len() != system.p() {
        return Err(Error::DimensionMismatch {
            what: "generator point",
            expected: system.p(),
            found: x.len(),
        });
    }
    let a = system.coeff.evaluate(x)?;
    let drv = &system.driver;
    let drift = a.mul_vec(drv.alpha());
    let diffusion = a.matmul(drv.cov()).matmul(&a.transpose()).symmetrized();
    let mut beta = drift.clone();
    let mut atoms = Vec::with_capacity(drv.jumps().len());
    let mut driver_atoms = Vec::with_capacity(drv.jumps().len());
    for atom in drv.jumps() {
        let in_d = drv.in_truncation_set(&atom.location);
        let image = a.mul_vec(&atom.location);
        let in_e = norm2(&image) <= r_e;
        let w = match (in_e, in_d) {
            (true, false) => atom.rate,
            (false, true) => -atom.rate,
            _ => T::zero(),
        };
        if w != T::zero() {
            for (b, &v) in beta.iter_mut().zip(&image) {
                *b += w * v;
            }
        }
        driver_atoms.push((atom.rate, atom.location.clone(), in_d));
        atoms.push((atom.rate, image));
    }
    Ok(GeneratorTerms {
        x: x.to_vec(),
        drift,
        beta,
        diffusion,
        driver_atoms,
        atoms,
        r_d: drv.trunc_radius(),
        r_e,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorForm {
    /// Compensation on the driver's truncation set `D`.
    DBased,
    /// Compensation on the state-space ball `E`.
    EBased,
}

/// `Af(x)` from precomputed terms.
pub fn generator_from_terms<T: Scalar>(terms: &GeneratorTerms<T>, f: &ScalarField2<T>, form: GeneratorForm) -> T {
    let p = terms.x.len();
    let x = &terms.x;
    let mut grad = vec![T::zero(); p];
    let mut hess = Matrix::zeros(p, p);
    f.gradient(x, &mut grad);
    f.hessian(x, &mut hess);
    let fx = f.value(x);
    let drift = match form {
        GeneratorForm::DBased => dot(&terms.drift, &grad),
        GeneratorForm::EBased => dot(&terms.beta, &grad),
    };
    let mut second = T::zero();
    for i in 0..p {
        for j in 0..p {
            second += terms.diffusion[(i, j)] * hess[(i, j)];
        }
    }
    let mut jumps = T::zero();
    let mut moved = vec![T::zero(); p];
    for ((rate, image), (_, _, in_d)) in terms.atoms.iter().zip(&terms.driver_atoms) {
        for k in 0..p {
            moved[k] = x[k] + image[k];
        }
        let compensate = match form {
            GeneratorForm::DBased => *in_d,
            GeneratorForm::EBased => terms.in_e(image),
        };
        let mut term = f.value(&moved) - fx;
        if compensate {
            term -= dot(&grad, image);
        }
        jumps += *rate * term;
    }
    drift + T::half() * second + jumps
}

pub fn apply_generator<T: Scalar>(
    system: &SdeSystem<T>,
    f: &ScalarField2<T>,
    x: &[T],
    form: GeneratorForm,
) -> Result<T> {
    apply_generator_with(system, f, x, form, T::one())
}

pub fn apply_generator_with<T: Scalar>(
    system: &SdeSystem<T>,
    f: &ScalarField2<T>,
    x: &[T],
    form: GeneratorForm,
    r_e: T,
) -> Result<T> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("generator point"));
    }
    let terms = compute_terms(system, x, r_e)?;
    Ok(generator_from_terms(&terms, f, form))
}

/// Distance between two discrete state-space jump measures: atoms at the
/// origin are dropped, atoms within 1e-9 are merged, matched rates are
/// compared and unmatched mass is summed.
pub fn jump_measure_distance<T: Scalar>(a: &[(T, Vec<T>)], b: &[(T, Vec<T>)]) -> T {
    let eps = T::of(1e-9);
    let close = |u: &[T], v: &[T]| u.iter().zip(v).all(|(&s, &t)| (s - t).abs() <= eps);
    let merge = |atoms: &[(T, Vec<T>)]| -> Vec<(T, Vec<T>)> {
        let mut out: Vec<(T, Vec<T>)> = Vec::new();
        for (rate, loc) in atoms {
            if loc.iter().all(|v| v.abs() <= eps) {
                continue;
            }
            match out.iter_mut().find(|(_, l)| close(l, loc)) {
                Some(entry) => entry.0 += *rate,
                None => out.push((*rate, loc.clone())),
            }
        }
        out
    };
    let (ma, mut mb) = (merge(a), merge(b));
    let mut dist = T::zero();
    for (rate, loc) in ma {
        match mb.iter().position(|(_, l)| close(l, &loc)) {
            Some(idx) => {
                dist += (rate - mb[idx].0).abs();
                mb.swap_remove(idx);
            }
            None => dist += rate,
        }
    }
    dist + mb.iter().map(|(r, _)| *r).sum::<T>()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointComparison {
    pub x: Vec<f64>,
    pub beta_diff: f64,
    pub diffusion_diff: f64,
    pub jump_diff: f64,
    pub max_functional_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorComparison {
    pub n_points: usize,
    pub n_fields: usize,
    /// Max over points and fields of `|A_A f(x) − A_B f(x)|`.
    pub max_functional_diff: f64,
    pub max_beta_diff: f64,
    pub max_diffusion_diff: f64,
    pub max_jump_diff: f64,
    pub tol: f64,
    /// Every structural distance is within `tol`.
    pub structurally_equal: bool,
    pub points: Vec<PointComparison>,
}

/// Functional and structural comparison of two generators. Both use the
/// E-based form, so drivers with different truncation sets compare fairly.
pub fn compare_generators<T: Scalar>(
    a: &SdeSystem<T>,
    b: &SdeSystem<T>,
    points: &[Vec<T>],
    fields: &[ScalarField2<T>],
    r_e: T,
    tol: T,
) -> Result<GeneratorComparison> {
    if a.p() != b.p() {
        return Err(Error::DimensionMismatch {
            what: "state dimension",
            expected: a.p(),
            found: b.p(),
        });
    }
    let mut rows = Vec::with_capacity(points.len());
    for x in points {
        let ta = compute_terms(a, x, r_e)?;
        let tb = compute_terms(b, x, r_e)?;
        let beta: Vec<T> = ta.beta.iter().zip(&tb.beta).map(|(&u, &v)| u - v).collect();
        let beta_diff = norm2(&beta);
        let diffusion_diff = ta.diffusion.max_abs_diff(&tb.diffusion);
        let jump_diff = jump_measure_distance(&ta.atoms, &tb.atoms);
        let mut functional = T::zero();
        for f in fields {
            let fa = generator_from_terms(&ta, f, GeneratorForm::EBased);
            let fb = generator_from_terms(&tb, f, GeneratorForm::EBased);
            functional = functional.max((fa - fb).abs());
        }
        rows.push(PointComparison {
            x: x.iter().map(|v| v.f64()).collect(),
            beta_diff: beta_diff.f64(),
            diffusion_diff: diffusion_diff.f64(),
            jump_diff: jump_diff.f64(),
            max_functional_diff: functional.f64(),
        });
    }
    let max = |g: fn(&PointComparison) -> f64| rows.iter().map(g).fold(0.0, f64::max);
    let (mb, md, mj) = (max(|r| r.beta_diff), max(|r| r.diffusion_diff), max(|r| r.jump_diff));
    let t = tol.f64();
    Ok(GeneratorComparison {
        n_points: points.len(),
        n_fields: fields.len(),
        max_functional_diff: max(|r| r.max_functional_diff),
        max_beta_diff: mb,
        max_diffusion_diff: md,
        max_jump_diff: mj,
        tol: t,
        structurally_equal: mb <= t && md <= t && mj <= t,
        points: rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SemigroupEstimate {
    /// `(mean f(X_t) − f(x)) / t`.
    pub estimate: f64,
    pub std_error: f64,
    pub used_paths: usize,
    pub exploded_paths: usize,
}

/// Monte Carlo estimate of `(P_t f(x) − f(x)) / t` with `Δ = t / 64`.
pub fn semigroup_estimate<T: Scalar>(
    system: &SdeSystem<T>,
    f: &ScalarField2<T>,
    x: &[T],
    t: T,
    n_paths: usize,
    seed: u64,
) -> Result<SemigroupEstimate> {
    if !(t > T::zero()) {
        return Err(Error::InvalidArgument(format!("time must be positive, got {t}")));
    }
    let started = system.with_initial(InitialLaw::Fixed(x.to_vec()))?;
    let grid = Grid::new(t, t / T::of(64.0))?;
    let sample = simulate_terminal(&started, &grid, n_paths, seed)?;
    let fx = f.value(x).f64();
    let diffs: Vec<f64> = (0..sample.n_paths())
        .map(|i| sample.state(i))
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .map(|s| f.value(s).f64() - fx)
        .collect();
    let n = diffs.len();
    if n < 2 {
        return Err(Error::InsufficientSample { needed: 2, found: n });
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let tt = t.f64();
    Ok(SemigroupEstimate {
        estimate: mean / tt,
        std_error: (var / n as f64).sqrt() / tt,
        used_paths: n,
        exploded_paths: sample.exploded,
    })
}
