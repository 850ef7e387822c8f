//! The intervention operator on SDE systems, structural equation models and
//! Markov update maps.
//!
//! Intervening `X^m := ζ(X^{-m})` in an SDE deletes the `m`-th equation and
//! substitutes `ζ` for `x_m` in every remaining coefficient. The driver is
//! never touched: interventions on the integrators are rejected.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::driver::{IncrementSampler, LevyTriplet};
use crate::error::{Error, Result};
use crate::euler::{path_increments, Grid, PathEnsemble};
use crate::expr::Expression;
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::system::{
    insert_index, remove_index, CoeffFn, CoefficientField, FieldSource, InitialLaw, ProbeBox, SdeSystem,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Target {
    /// Zero-based state coordinate.
    Coordinate(usize),
    /// Zero-based driver coordinate; never a valid target.
    Integrator(usize),
}

/// Intervention value as a function of the remaining coordinates.
pub type ZetaFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

#[derive(Clone)]
pub enum Zeta<T> {
    Constant(T),
    /// Over the remaining `p - 1` coordinates, in their original order.
    Expression(Expression),
    Function {
        name: String,
        f: ZetaFn<T>,
    },
}

impl<T: Scalar> Zeta<T> {
    #[inline]
    pub fn eval(&self, y: &[T]) -> T {
        match self {
            Zeta::Constant(c) => *c,
            Zeta::Expression(e) => e.eval(y),
            Zeta::Function { f, .. } => f(y),
        }
    }

    pub fn as_constant(&self) -> Option<T> {
        match self {
            Zeta::Constant(c) => Some(*c),
            Zeta::Expression(e) if e.is_constant() => Some(e.eval::<T>(&[])),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Zeta::Constant(c) => format!("{c}"),
            Zeta::Expression(e) => e.source().to_owned(),
            Zeta::Function { name, .. } => name.clone(),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Zeta<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Zeta::Constant(c) => write!(f, "Zeta::Constant({c:?})"),
            Zeta::Expression(e) => write!(f, "Zeta::Expression({})", e.source()),
            Zeta::Function { name, .. } => write!(f, "Zeta::Function({name})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct InterventionSpec<T> {
    pub target: Target,
    pub zeta: Zeta<T>,
}

impl<T: Scalar> InterventionSpec<T> {
    pub fn constant(m: usize, value: T) -> Self {
        Self {
            target: Target::Coordinate(m),
            zeta: Zeta::Constant(value),
        }
    }

    /// `expr` is written over the full coordinate names `x1..xp` and must not
    /// read the target coordinate itself.
    pub fn expression(m: usize, expr: &Expression) -> Result<Self> {
        let reduced = expr.without_coordinate(m).ok_or_else(|| {
            Error::InvalidArgument(format!("intervention value `{}` reads its own target x{}", expr.source(), m + 1))
        })?;
        Ok(Self {
            target: Target::Coordinate(m),
            zeta: Zeta::Expression(reduced),
        })
    }

    pub fn function<F>(m: usize, name: &str, f: F) -> Self
    where
        F: Fn(&[T]) -> T + Send + Sync + 'static,
    {
        Self {
            target: Target::Coordinate(m),
            zeta: Zeta::Function {
                name: name.to_owned(),
                f: Arc::new(f),
            },
        }
    }

    pub fn coordinate(&self) -> Result<usize> {
        match self.target {
            Target::Coordinate(m) => Ok(m),
            Target::Integrator(j) => Err(Error::IntegratorIntervention(j)),
        }
    }
}

fn check_target<T: Scalar>(system: &SdeSystem<T>, spec: &InterventionSpec<T>) -> Result<usize> {
    let m = spec.coordinate()?;
    if m >= system.p() {
        return Err(Error::InvalidArgument(format!(
            "intervention target x{} outside 1..{}",
            m + 1,
            system.p()
        )));
    }
    Ok(m)
}

/// Postintervention system of dimension `p - 1` for `X^m := ζ(X^{-m})`.
pub fn intervene_sde<T: Scalar>(system: &SdeSystem<T>, spec: &InterventionSpec<T>) -> Result<SdeSystem<T>> {
    let m = check_target(system, spec)?;
    let (p, d) = (system.p(), system.d());
    if p < 2 {
        return Err(Error::InvalidArgument("cannot intervene on a one-dimensional system".into()));
    }
    let inner = system.coeff.raw_fn().clone();
    let zeta = spec.zeta.clone();
    let eval: CoeffFn<T> = Arc::new(move |y: &[T], out: &mut Matrix<T>| {
        let mut full = vec![T::zero(); p];
        insert_index(y, m, zeta.eval(y), &mut full);
        let mut a = Matrix::zeros(p, d);
        inner(&full, &mut a)?;
        for i in 0..p - 1 {
            let src = if i < m { i } else { i + 1 };
            out.row_mut(i).copy_from_slice(a.row(src));
        }
        Ok(())
    });
    let source = FieldSource::Intervened {
        base: Box::new(system.coeff.source().clone()),
        target: m,
        zeta: spec.zeta.describe(),
    };
    let mut field = CoefficientField::new(p - 1, d, source, eval);
    if let Some(c) = spec.zeta.as_constant() {
        let singular: Vec<Vec<T>> = system
            .coeff
            .singular_points()
            .iter()
            .filter(|s| s[m] == c)
            .map(|s| remove_index(s, m))
            .collect();
        field = field.with_singular_points(singular);
    }
    if let Some(b) = system.coeff.probe_box() {
        field = field.with_probe_box(ProbeBox {
            lower: remove_index(&b.lower, m),
            upper: remove_index(&b.upper, m),
        });
    }
    SdeSystem::new(
        field,
        system.driver.clone(),
        system.initial.without(m)?,
        system
            .labels
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != m)
            .map(|(_, l)| l.clone())
            .collect(),
    )
}

/// `p`-dimensional form of a constant intervention: row `m` of the
/// coefficient is zeroed and `Y^m_0 = ζ`.
pub fn embed_constant_intervention<T: Scalar>(
    system: &SdeSystem<T>,
    spec: &InterventionSpec<T>,
) -> Result<SdeSystem<T>> {
    let m = check_target(system, spec)?;
    let zeta = spec.zeta.as_constant().ok_or(Error::NonConstantEmbedding)?;
    let inner = system.coeff.raw_fn().clone();
    let eval: CoeffFn<T> = Arc::new(move |x: &[T], out: &mut Matrix<T>| {
        inner(x, out)?;
        out.row_mut(m).iter_mut().for_each(|v| *v = T::zero());
        Ok(())
    });
    let source = FieldSource::Embedded {
        base: Box::new(system.coeff.source().clone()),
        target: m,
        zeta: zeta.f64(),
    };
    let mut field = CoefficientField::new(system.p(), system.d(), source, eval)
        .with_singular_points(system.coeff.singular_points().to_vec());
    if let Some(b) = system.coeff.probe_box() {
        field = field.with_probe_box(b.clone());
    }
    let initial = match &system.initial {
        InitialLaw::Fixed(x) => {
            let mut x = x.clone();
            x[m] = zeta;
            InitialLaw::Fixed(x)
        }
        InitialLaw::Gaussian { mean, cov, .. } => {
            let mut mean = mean.clone();
            mean[m] = zeta;
            let mut cov = cov.clone();
            for k in 0..cov.rows() {
                cov[(m, k)] = T::zero();
                cov[(k, m)] = T::zero();
            }
            InitialLaw::gaussian(mean, cov)?
        }
    };
    SdeSystem::new(field, system.driver.clone(), initial, system.labels.clone())
}

/// Re-inserts the intervened coordinate `Y^m_t = ζ(Y^{-m}_t)` into a reduced
/// ensemble.
pub fn full_process_lift<T: Scalar>(
    reduced: &PathEnsemble<T>,
    spec: &InterventionSpec<T>,
    label: &str,
) -> Result<PathEnsemble<T>> {
    let m = spec.coordinate()?;
    let q = reduced.dim();
    if m > q {
        return Err(Error::InvalidArgument(format!("cannot insert coordinate {m} into {q} coordinates")));
    }
    let p = q + 1;
    let steps = reduced.grid().steps() + 1;
    let mut values = Vec::with_capacity(reduced.n_paths() * steps * p);
    let mut full = vec![T::zero(); p];
    for path in 0..reduced.n_paths() {
        for k in 0..steps {
            let y = reduced.state(path, k);
            let z = if y.iter().all(|v| v.is_finite()) {
                spec.zeta.eval(y)
            } else {
                T::nan()
            };
            insert_index(y, m, z, &mut full);
            values.extend_from_slice(&full);
        }
    }
    let mut labels = reduced.labels().to_vec();
    labels.insert(m, label.to_owned());
    reduced.with_values(labels, values)
}

// ---------------------------------------------------------------------------
// Structural equation models

/// Relationship `f_v(parents, noise)`; parent values arrive in the order of
/// the vertex's parent list.
pub type Relation<T> = Arc<dyn Fn(&[T], &[T]) -> T + Send + Sync>;

#[derive(Clone)]
pub struct SemVertex<T> {
    pub label: String,
    pub parents: Vec<usize>,
    pub noise: Option<usize>,
    pub relation: Relation<T>,
}

impl<T> fmt::Debug for SemVertex<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemVertex")
            .field("label", &self.label)
            .field("parents", &self.parents)
            .field("noise", &self.noise)
            .finish()
    }
}

/// Primary variables, noise slots, a DAG (via parent lists) and one
/// relationship per vertex.
#[derive(Clone, Debug)]
pub struct SemModel<T> {
    vertices: Vec<SemVertex<T>>,
    noise_slots: usize,
    order: Vec<usize>,
}

impl<T: Scalar> SemModel<T> {
    pub fn new(vertices: Vec<SemVertex<T>>, noise_slots: usize) -> Result<Self> {
        let n = vertices.len();
        for v in &vertices {
            if let Some(&bad) = v.parents.iter().find(|&&u| u >= n) {
                return Err(Error::InvalidArgument(format!("vertex `{}` has unknown parent {bad}", v.label)));
            }
            if matches!(v.noise, Some(s) if s >= noise_slots) {
                return Err(Error::InvalidArgument(format!("vertex `{}` has unknown noise slot", v.label)));
            }
        }
        let order = topological_order(&vertices).ok_or(Error::NotADag)?;
        Ok(Self {
            vertices,
            noise_slots,
            order,
        })
    }

    pub fn vertices(&self) -> &[SemVertex<T>] {
        &self.vertices
    }

    pub fn noise_slots(&self) -> usize {
        self.noise_slots
    }

    pub fn noise_assignment(&self) -> Vec<Option<usize>> {
        self.vertices.iter().map(|v| v.noise).collect()
    }

    /// All edges `(parent, child)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.vertices
            .iter()
            .enumerate()
            .flat_map(|(c, v)| v.parents.iter().map(move |&p| (p, c)))
            .collect()
    }

    /// Evaluates every vertex in topological order.
    pub fn evaluate(&self, noise: &[&[T]]) -> Vec<T> {
        let mut values = vec![T::nan(); self.vertices.len()];
        let mut buf = Vec::new();
        for &v in &self.order {
            let vert = &self.vertices[v];
            buf.clear();
            buf.extend(vert.parents.iter().map(|&u| values[u]));
            let eps: &[T] = match vert.noise {
                Some(s) => noise[s],
                None => &[],
            };
            values[v] = (vert.relation)(&buf, eps);
        }
        values
    }
}

fn topological_order<T>(vertices: &[SemVertex<T>]) -> Option<Vec<usize>> {
    let n = vertices.len();
    let mut indegree: Vec<usize> = vertices.iter().map(|v| v.parents.len()).collect();
    let mut children = vec![Vec::new(); n];
    for (c, v) in vertices.iter().enumerate() {
        for &p in &v.parents {
            children[p].push(c);
        }
    }
    let mut ready: Vec<usize> = (0..n).rev().filter(|&v| indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop() {
        order.push(v);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(c);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// `target := ζ(X_inputs)`.
#[derive(Clone)]
pub struct SemAssignment<T> {
    pub target: usize,
    pub inputs: Vec<usize>,
    pub zeta: ZetaFn<T>,
}

/// Postintervention SEM: each target's parents become its input set and its
/// relationship becomes `ζ`. Noise assignments are left untouched.
pub fn intervene_sem<T: Scalar>(sem: &SemModel<T>, assignments: &[SemAssignment<T>]) -> Result<SemModel<T>> {
    let n = sem.vertices.len();
    let targets: HashSet<usize> = assignments.iter().map(|a| a.target).collect();
    if targets.len() != assignments.len() {
        return Err(Error::InvalidArgument("duplicate intervention target".into()));
    }
    let mut vertices = sem.vertices.clone();
    for a in assignments {
        if a.target >= n {
            return Err(Error::InvalidArgument(format!("unknown SEM vertex {}", a.target)));
        }
        if let Some(&bad) = a.inputs.iter().find(|&&u| u >= n || targets.contains(&u)) {
            return Err(Error::InvalidArgument(format!(
                "intervention input {bad} must be a non-target vertex"
            )));
        }
        let zeta = a.zeta.clone();
        let v = &mut vertices[a.target];
        v.parents = a.inputs.clone();
        v.relation = Arc::new(move |vals: &[T], _noise: &[T]| zeta(vals));
    }
    SemModel::new(vertices, sem.noise_slots)
}

// ---------------------------------------------------------------------------
// Markov update maps

/// `G(x, u)`: one step of a discrete-time Markov chain.
pub type UpdateFn<T> = Arc<dyn Fn(&[T], &[T]) -> Vec<T> + Send + Sync>;

/// `H_G(y, u)^i = G((y_1, …, ζ(y), …, y_p), u)^i` for `i ≠ m`.
pub fn intervene_update<T: Scalar>(g: UpdateFn<T>, m: usize, zeta: Zeta<T>) -> UpdateFn<T> {
    Arc::new(move |y: &[T], u: &[T]| {
        let mut full = vec![T::zero(); y.len() + 1];
        insert_index(y, m, zeta.eval(y), &mut full);
        remove_index(&g(&full, u), m)
    })
}

/// `G(x, u) = x + a(x) u`, the Euler step as an update map. Coefficient
/// errors produce NaN states.
pub fn euler_update_map<T: Scalar>(system: &SdeSystem<T>) -> UpdateFn<T> {
    let field = system.coeff.clone();
    Arc::new(move |x: &[T], u: &[T]| {
        let mut a = Matrix::zeros(field.p(), field.d());
        match field.eval_into(x, &mut a) {
            Ok(()) => x
                .iter()
                .enumerate()
                .map(|(i, &xi)| xi + crate::linalg::dot(a.row(i), u))
                .collect(),
            Err(_) => vec![T::nan(); x.len()],
        }
    })
}

// ---------------------------------------------------------------------------
// Itô counterexample

/// Twice differentiable `f: R → R` with explicit derivatives.
#[derive(Clone)]
pub struct ScalarFn<T> {
    pub name: String,
    pub value: Arc<dyn Fn(T) -> T + Send + Sync>,
    pub d1: Arc<dyn Fn(T) -> T + Send + Sync>,
    pub d2: Arc<dyn Fn(T) -> T + Send + Sync>,
}

impl<T: Scalar> ScalarFn<T> {
    pub fn square() -> Self {
        Self {
            name: "x^2".into(),
            value: Arc::new(|x| x * x),
            d1: Arc::new(|x| x + x),
            d2: Arc::new(|_| T::of(2.0)),
        }
    }
}

/// The pair `X¹ = W`, `X² = f(0) + ½∫f''(X¹)ds + ∫f'(X¹)dW`, written against
/// the `(t, W)` driver.
pub fn ito_system<T: Scalar>(f: &ScalarFn<T>) -> SdeSystem<T> {
    let (d1, d2) = (f.d1.clone(), f.d2.clone());
    let field = CoefficientField::from_fn(2, 2, &format!("ito pair for f = {}", f.name), move |x, out| {
        out[(0, 1)] = T::one();
        out[(1, 0)] = T::half() * d2(x[0]);
        out[(1, 1)] = d1(x[0]);
        Ok(())
    });
    SdeSystem::new(
        field,
        LevyTriplet::time_and_brownian(1),
        InitialLaw::Fixed(vec![T::zero(), (f.value)(T::zero())]),
        vec!["X1".into(), "X2".into()],
    )
    .expect("ito pair is well formed")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItoReport {
    pub function: String,
    pub zeta: f64,
    pub horizon: f64,
    pub delta: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Max over paths and grid times of `|X² − (f(0) + ½f''(ζ)t + f'(ζ)W_t)|`.
    pub max_dist_closed_form: f64,
    /// Max over paths and grid times of `|X² − f(ζ)|`.
    pub max_dist_constant: f64,
    pub dist_constant_at_t0: f64,
    /// Median over paths of `|X²_T − f(ζ)|`.
    pub median_dist_constant_at_horizon: f64,
    /// Whether the intervened path disagrees with the naive `X² = f(ζ)`.
    pub contradiction: bool,
}

pub fn ito_counterexample<T: Scalar>(
    f: &ScalarFn<T>,
    zeta: T,
    horizon: T,
    delta: T,
    n_paths: usize,
    seed: u64,
) -> Result<ItoReport> {
    let grid = Grid::new(horizon, delta)?;
    let system = ito_system(f);
    let spec = InterventionSpec::constant(0, zeta);
    let reduced = intervene_sde(&system, &spec)?;
    let sampler = IncrementSampler::new(&reduced.driver, grid.delta())?;
    let (f0, fz) = ((f.value)(T::zero()), (f.value)(zeta));
    let drift = T::half() * (f.d2)(zeta);
    let slope = (f.d1)(zeta);

    let mut max_closed = T::zero();
    let mut max_const = T::zero();
    let mut at_t0 = T::zero();
    let mut terminal = Vec::with_capacity(n_paths);
    for path in 0..n_paths {
        let inc = path_increments(&sampler, grid.steps(), seed, path as u64);
        let outcome = crate::euler::euler_path(&reduced.coeff, &[f0], &inc, grid.steps());
        let mut w = T::zero();
        for k in 0..=grid.steps() {
            if k > 0 {
                w += inc[(k - 1) * 2 + 1];
            }
            let x2 = outcome.values[k];
            let closed = f0 + drift * grid.time(k) + slope * w;
            max_closed = max_closed.max((x2 - closed).abs());
            let dc = (x2 - fz).abs();
            max_const = max_const.max(dc);
            if k == 0 {
                at_t0 = at_t0.max(dc);
            }
        }
        terminal.push((outcome.values[grid.steps()] - fz).abs().f64());
    }
    terminal.sort_by(f64::total_cmp);
    let median = if terminal.is_empty() {
        f64::NAN
    } else if terminal.len() % 2 == 1 {
        terminal[terminal.len() / 2]
    } else {
        0.5 * (terminal[terminal.len() / 2 - 1] + terminal[terminal.len() / 2])
    };
    Ok(ItoReport {
        function: f.name.clone(),
        zeta: zeta.f64(),
        horizon: horizon.f64(),
        delta: delta.f64(),
        n_paths,
        seed,
        max_dist_closed_form: max_closed.f64(),
        max_dist_constant: max_const.f64(),
        dist_constant_at_t0: at_t0.f64(),
        median_dist_constant_at_horizon: median,
        contradiction: max_const > T::of(1e-12),
    })
}
