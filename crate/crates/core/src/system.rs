//! SDE systems `X_t = X_0 + ∫ a(X_{s-}) dZ_s`: coefficient fields, initial
//! laws, signatures and the reaction-network builder.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::driver::{psd_factor, LevyTriplet};
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::linalg::{norm2, Matrix};
use crate::scalar::Scalar;

/// Writes `a(x)` into a `p × d` buffer (pre-filled with zeros).
pub type CoeffFn<T> = Arc<dyn Fn(&[T], &mut Matrix<T>) -> Result<()> + Send + Sync>;

/// Where a coefficient field came from; informational only.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSource {
    Closure {
        name: String,
    },
    Expressions {
        entries: Vec<Vec<String>>,
    },
    Linear {
        level: Vec<f64>,
        reversion: Vec<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
    },
    Chem {
        stoichiometry: Vec<Vec<f64>>,
        rates: Vec<String>,
    },
    Intervened {
        base: Box<FieldSource>,
        target: usize,
        zeta: String,
    },
    Embedded {
        base: Box<FieldSource>,
        target: usize,
        zeta: f64,
    },
    Scaled {
        base: Box<FieldSource>,
        factor: f64,
    },
}

/// Axis-aligned sampling box for dependence probing.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeBox<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> ProbeBox<T> {
    pub fn cube(p: usize, lo: T, hi: T) -> Self {
        Self {
            lower: vec![lo; p],
            upper: vec![hi; p],
        }
    }
}

#[derive(Clone)]
pub struct CoefficientField<T> {
    p: usize,
    d: usize,
    eval: CoeffFn<T>,
    source: FieldSource,
    declared: Option<SignatureGraph>,
    singular_points: Vec<Vec<T>>,
    probe_box: Option<ProbeBox<T>>,
}

impl<T> fmt::Debug for CoefficientField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("p", &self.p)
            .field("d", &self.d)
            .field("source", &self.source)
            .field("declared", &self.declared)
            .finish()
    }
}

impl<T: Scalar> CoefficientField<T> {
    pub fn new(p: usize, d: usize, source: FieldSource, eval: CoeffFn<T>) -> Self {
        Self {
            p,
            d,
            eval,
            source,
            declared: None,
            singular_points: Vec::new(),
            probe_box: None,
        }
    }

    pub fn from_fn<F>(p: usize, d: usize, name: &str, f: F) -> Self
    where
        F: Fn(&[T], &mut Matrix<T>) -> Result<()> + Send + Sync + 'static,
    {
        Self::new(p, d, FieldSource::Closure { name: name.to_owned() }, Arc::new(f))
    }

    pub fn constant(m: Matrix<T>) -> Self {
        let (p, d) = (m.rows(), m.cols());
        let name = format!("constant {p}x{d}");
        Self::from_fn(p, d, &name, move |_, out| {
            out.as_mut_slice().copy_from_slice(m.as_slice());
            Ok(())
        })
    }

    /// Field whose entry `(i, j)` is the expression `entries[i][j]`.
    pub fn from_expressions(entries: Vec<Vec<Expression>>) -> Result<Self> {
        let p = entries.len();
        let d = entries.first().map_or(0, Vec::len);
        if p == 0 || d == 0 {
            return Err(Error::InvalidArgument("empty coefficient matrix".into()));
        }
        for row in &entries {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "coefficient expression row",
                    expected: d,
                    found: row.len(),
                });
            }
            for e in row {
                if e.arity() > p {
                    return Err(Error::InvalidArgument(format!(
                        "expression `{}` references x{} but the system has {p} coordinates",
                        e.source(),
                        e.arity()
                    )));
                }
            }
        }
        let source = FieldSource::Expressions {
            entries: entries
                .iter()
                .map(|r| r.iter().map(|e| e.source().to_owned()).collect())
                .collect(),
        };
        let eval: CoeffFn<T> = Arc::new(move |x: &[T], out: &mut Matrix<T>| {
            for (i, row) in entries.iter().enumerate() {
                for (j, e) in row.iter().enumerate() {
                    out[(i, j)] = e.eval(x);
                }
            }
            Ok(())
        });
        Ok(Self::new(p, d, source, eval))
    }

    pub fn with_declared_signature(mut self, sig: SignatureGraph) -> Self {
        self.declared = Some(sig);
        self
    }

    pub fn with_singular_points(mut self, points: Vec<Vec<T>>) -> Self {
        self.singular_points = points;
        self
    }

    pub fn with_probe_box(mut self, b: ProbeBox<T>) -> Self {
        self.probe_box = Some(b);
        self
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn source(&self) -> &FieldSource {
        &self.source
    }

    pub fn declared_signature(&self) -> Option<&SignatureGraph> {
        self.declared.as_ref()
    }

    pub fn singular_points(&self) -> &[Vec<T>] {
        &self.singular_points
    }

    pub fn probe_box(&self) -> Option<&ProbeBox<T>> {
        self.probe_box.as_ref()
    }

    pub(crate) fn raw_fn(&self) -> &CoeffFn<T> {
        &self.eval
    }

    /// `a(x)` into `out`; non-finite results are reported as overflow.
    pub fn eval_into(&self, x: &[T], out: &mut Matrix<T>) -> Result<()> {
        debug_assert_eq!(x.len(), self.p);
        out.fill(T::zero());
        (self.eval)(x, out)?;
        if !out.is_finite() {
            return Err(Error::CoefficientOverflow {
                x: x.iter().map(|v| v.f64()).collect(),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[T]) -> Result<Matrix<T>> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                what: "state vector",
                expected: self.p,
                found: x.len(),
            });
        }
        let mut out = Matrix::zeros(self.p, self.d);
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// `c · a(x)`; the declared signature is kept when `c ≠ 0`.
    pub fn scaled(&self, c: T) -> Self {
        let inner = self.eval.clone();
        let eval: CoeffFn<T> = Arc::new(move |x: &[T], out: &mut Matrix<T>| {
            inner(x, out)?;
            out.as_mut_slice().iter_mut().for_each(|v| *v *= c);
            Ok(())
        });
        Self {
            eval,
            source: FieldSource::Scaled {
                base: Box::new(self.source.clone()),
                factor: c.f64(),
            },
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw<T> {
    Fixed(Vec<T>),
    Gaussian {
        mean: Vec<T>,
        cov: Matrix<T>,
        factor: Matrix<T>,
    },
}

impl<T: Scalar> InitialLaw<T> {
    pub fn gaussian(mean: Vec<T>, cov: Matrix<T>) -> Result<Self> {
        if cov.rows() != mean.len() || cov.cols() != mean.len() {
            return Err(Error::DimensionMismatch {
                what: "initial covariance",
                expected: mean.len(),
                found: cov.rows(),
            });
        }
        let factor = psd_factor(&cov)?;
        Ok(InitialLaw::Gaussian { mean, cov, factor })
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Fixed(x) => x.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn mean(&self) -> &[T] {
        match self {
            InitialLaw::Fixed(x) => x,
            InitialLaw::Gaussian { mean, .. } => mean,
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [T]) {
        match self {
            InitialLaw::Fixed(x) => out.copy_from_slice(x),
            InitialLaw::Gaussian { mean, factor, .. } => {
                let xi: Vec<T> = (0..mean.len())
                    .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                let g = factor.mul_vec(&xi);
                for ((o, &m), gi) in out.iter_mut().zip(mean).zip(g) {
                    *o = m + gi;
                }
            }
        }
    }

    /// Law with coordinate `m` marginalized out.
    pub fn without(&self, m: usize) -> Result<Self> {
        match self {
            InitialLaw::Fixed(x) => Ok(InitialLaw::Fixed(remove_index(x, m))),
            InitialLaw::Gaussian { mean, cov, .. } => {
                InitialLaw::gaussian(remove_index(mean, m), cov.without_row_col(m, m))
            }
        }
    }
}

pub(crate) fn remove_index<T: Copy>(v: &[T], m: usize) -> Vec<T> {
    v.iter()
        .enumerate()
        .filter(|&(i, _)| i != m)
        .map(|(_, &x)| x)
        .collect()
}

pub(crate) fn insert_index<T: Copy>(v: &[T], m: usize, value: T, out: &mut [T]) {
    out[..m].copy_from_slice(&v[..m]);
    out[m] = value;
    out[m + 1..].copy_from_slice(&v[m..]);
}

#[derive(Clone, Debug)]
pub struct SdeSystem<T> {
    pub coeff: CoefficientField<T>,
    pub driver: LevyTriplet<T>,
    pub initial: InitialLaw<T>,
    pub labels: Vec<String>,
}

impl<T: Scalar> SdeSystem<T> {
    pub fn new(
        coeff: CoefficientField<T>,
        driver: LevyTriplet<T>,
        initial: InitialLaw<T>,
        labels: Vec<String>,
    ) -> Result<Self> {
        if coeff.d() != driver.dim() {
            return Err(Error::DimensionMismatch {
                what: "driver dimension",
                expected: coeff.d(),
                found: driver.dim(),
            });
        }
        if initial.dim() != coeff.p() {
            return Err(Error::DimensionMismatch {
                what: "initial state",
                expected: coeff.p(),
                found: initial.dim(),
            });
        }
        if labels.len() != coeff.p() {
            return Err(Error::DimensionMismatch {
                what: "coordinate labels",
                expected: coeff.p(),
                found: labels.len(),
            });
        }
        let distinct: HashSet<&String> = labels.iter().collect();
        if distinct.len() != labels.len() {
            return Err(Error::InvalidArgument("coordinate labels must be distinct".into()));
        }
        Ok(Self {
            coeff,
            driver,
            initial,
            labels,
        })
    }

    /// Labels default to `x1..xp`.
    pub fn with_default_labels(
        coeff: CoefficientField<T>,
        driver: LevyTriplet<T>,
        initial: InitialLaw<T>,
    ) -> Result<Self> {
        let labels = default_labels(coeff.p());
        Self::new(coeff, driver, initial, labels)
    }

    pub fn p(&self) -> usize {
        self.coeff.p()
    }

    pub fn d(&self) -> usize {
        self.coeff.d()
    }

    pub fn with_initial(&self, initial: InitialLaw<T>) -> Result<Self> {
        Self::new(self.coeff.clone(), self.driver.clone(), initial, self.labels.clone())
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Declared signature (verified against the probe) or the probed one.
    pub fn signature(&self) -> Result<SignatureGraph> {
        let probed = probe_signature(self, &ProbeOptions::default_for(&self.coeff))?;
        match self.coeff.declared_signature() {
            Some(declared) => {
                if let Some(&(from, to)) = probed.edges.difference(&declared.edges).next() {
                    return Err(Error::SignatureViolation { from, to });
                }
                Ok(declared.clone())
            }
            None => Ok(probed),
        }
    }
}

pub fn default_labels(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("x{i}")).collect()
}

pub fn evaluate_coeff<T: Scalar>(system: &SdeSystem<T>, x: &[T]) -> Result<Matrix<T>> {
    system.coeff.evaluate(x)
}

/// Directed dependence graph on coordinates; edge `i → j` when row `j` of the
/// coefficient field depends on `x_i`. Indices are zero-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SignatureGraph {
    p: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl SignatureGraph {
    pub fn empty(p: usize) -> Self {
        Self {
            p,
            edges: BTreeSet::new(),
        }
    }

    pub fn from_edges(p: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut g = Self::empty(p);
        for (i, j) in edges {
            g.add_edge(i, j)?;
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, i: usize, j: usize) -> Result<()> {
        if i >= self.p || j >= self.p {
            return Err(Error::InvalidArgument(format!(
                "edge {i}->{j} outside vertex range 0..{}",
                self.p
            )));
        }
        self.edges.insert((i, j));
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.p
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    pub fn is_subgraph_of(&self, other: &SignatureGraph) -> bool {
        self.p == other.p && self.edges.is_subset(&other.edges)
    }

    /// Coordinates whose rows read `x_i`.
    pub fn children(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.0 == i).map(|e| e.1)
    }

    /// Coordinates read by row `j`.
    pub fn parents(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.1 == j).map(|e| e.0)
    }

    pub fn to_dot(&self, labels: &[String]) -> String {
        let mut s = String::from("digraph signature {\n");
        for (k, l) in labels.iter().enumerate().take(self.p) {
            s.push_str(&format!("  n{k} [label=\"{l}\"];\n"));
        }
        for &(i, j) in &self.edges {
            s.push_str(&format!("  n{i} -> n{j};\n"));
        }
        s.push_str("}\n");
        s
    }
}

/// `X^j` is locally unaffected by `X^i` iff there is no edge `i → j`.
pub fn is_locally_unaffected(sig: &SignatureGraph, i: usize, j: usize) -> bool {
    !sig.has_edge(i, j)
}

#[derive(Clone, Debug)]
pub struct ProbeOptions<T> {
    pub n_points: usize,
    pub perturbation: T,
    pub tol: T,
    pub probe_box: Option<ProbeBox<T>>,
}

impl<T: Scalar> ProbeOptions<T> {
    pub fn default_for(field: &CoefficientField<T>) -> Self {
        Self {
            n_points: 256,
            perturbation: T::of(1e-3),
            tol: T::of(1e-9),
            probe_box: field.probe_box().cloned(),
        }
    }
}

const PRIMES: [u32; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Quasi-uniform (Halton) points in `[0, 1)^p`, skipping the origin.
pub fn halton_points(p: usize, n: usize) -> Vec<Vec<f64>> {
    (1..=n as u64)
        .map(|i| {
            (0..p)
                .map(|k| {
                    let base = PRIMES.get(k).copied().unwrap_or(PRIMES[k % PRIMES.len()] + 2 * k as u32) as u64;
                    radical_inverse(i, base)
                })
                .collect()
        })
        .collect()
}

/// Finite-difference dependence probe of the coefficient field.
pub fn probe_signature<T: Scalar>(system: &SdeSystem<T>, opts: &ProbeOptions<T>) -> Result<SignatureGraph> {
    probe_field(&system.coeff, opts)
}

pub fn probe_field<T: Scalar>(field: &CoefficientField<T>, opts: &ProbeOptions<T>) -> Result<SignatureGraph> {
    if opts.n_points == 0 {
        return Err(Error::InvalidArgument("n_points must be at least 1".into()));
    }
    if !(opts.perturbation > T::zero()) || opts.tol < T::zero() {
        return Err(Error::InvalidArgument("perturbation must be positive and tol nonnegative".into()));
    }
    let p = field.p();
    let bx = opts
        .probe_box
        .clone()
        .unwrap_or_else(|| ProbeBox::cube(p, T::of(-5.0), T::of(5.0)));
    let exclusion = T::of(1e-3);
    let mut graph = SignatureGraph::empty(p);
    let mut base = Matrix::zeros(p, field.d());
    let mut moved = Matrix::zeros(p, field.d());
    let mut shifted = vec![T::zero(); p];
    for u in halton_points(p, opts.n_points) {
        let x: Vec<T> = u
            .iter()
            .enumerate()
            .map(|(k, &uk)| bx.lower[k] + (bx.upper[k] - bx.lower[k]) * T::of(uk))
            .collect();
        let near_singular = field.singular_points().iter().any(|s| {
            let diff: Vec<T> = x.iter().zip(s).map(|(&a, &b)| a - b).collect();
            norm2(&diff) < exclusion
        });
        if near_singular {
            continue;
        }
        field.eval_into(&x, &mut base)?;
        for i in 0..p {
            shifted.copy_from_slice(&x);
            shifted[i] += opts.perturbation;
            field.eval_into(&shifted, &mut moved)?;
            for j in 0..p {
                if graph.has_edge(i, j) {
                    continue;
                }
                let changed = base
                    .row(j)
                    .iter()
                    .zip(moved.row(j))
                    .any(|(&a, &b)| (a - b).abs() > opts.tol);
                if changed {
                    graph.add_edge(i, j)?;
                }
            }
        }
    }
    Ok(graph)
}

/// Chemical Langevin system for stoichiometry `S` (p × R) and rate
/// expressions `λ(x)`.
///
/// Drift and diffusion are encoded against the `(t, W¹..W^R)` driver:
/// column 0 of `a(x)` is `S λ(x)`, columns `1..=R` are `S diag(√λ(x))`.
pub fn build_chem_system<T: Scalar>(
    stoichiometry: Matrix<T>,
    rates: Vec<Expression>,
    x0: Vec<T>,
    labels: Option<Vec<String>>,
) -> Result<SdeSystem<T>> {
    let p = stoichiometry.rows();
    let r = stoichiometry.cols();
    if rates.len() != r {
        return Err(Error::DimensionMismatch {
            what: "reaction rates",
            expected: r,
            found: rates.len(),
        });
    }
    if let Some(e) = rates.iter().find(|e| e.arity() > p) {
        return Err(Error::InvalidArgument(format!(
            "rate `{}` references a coordinate beyond x{p}",
            e.source()
        )));
    }
    let source = FieldSource::Chem {
        stoichiometry: stoichiometry.to_f64_rows(),
        rates: rates.iter().map(|e| e.source().to_owned()).collect(),
    };
    let s = stoichiometry;
    let eval: CoeffFn<T> = Arc::new(move |x: &[T], out: &mut Matrix<T>| {
        for (k, rate) in rates.iter().enumerate() {
            let lam = rate.eval(x);
            if lam < T::zero() {
                return Err(Error::NegativeRate {
                    x: x.iter().map(|v| v.f64()).collect(),
                    reaction: k,
                });
            }
            let root = lam.sqrt();
            for i in 0..s.rows() {
                let sik = s[(i, k)];
                if sik != T::zero() {
                    out[(i, 0)] += sik * lam;
                    out[(i, k + 1)] = sik * root;
                }
            }
        }
        Ok(())
    });
    let field = CoefficientField::new(p, r + 1, source, eval)
        .with_probe_box(ProbeBox::cube(p, T::of(1e-3), T::of(5.0)));
    let labels = labels.unwrap_or_else(|| default_labels(p));
    SdeSystem::new(
        field,
        LevyTriplet::time_and_brownian(r),
        InitialLaw::Fixed(x0),
        labels,
    )
}
