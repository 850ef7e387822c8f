//! Euler scheme simulation, the Euler SEM, the commutation check and
//! convergence studies.

use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::driver::IncrementSampler;
use crate::error::{Error, Result};
use crate::intervention::{intervene_sde, intervene_sem, InterventionSpec, Relation, SemAssignment, SemModel, SemVertex};
use crate::linalg::{dot, Matrix};
use crate::rng;
use crate::scalar::Scalar;
use crate::system::{insert_index, CoefficientField, SdeSystem, SignatureGraph};

/// Uniform grid `t_k = kΔ`, `k = 0..=N`, with `NΔ = T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Grid<T> {
    horizon: T,
    delta: T,
    steps: usize,
}

impl<T: Scalar> Grid<T> {
    pub fn new(horizon: T, delta: T) -> Result<Self> {
        if !(horizon > T::zero() && horizon.is_finite()) || !(delta > T::zero() && delta.is_finite()) {
            return Err(Error::InvalidGrid(format!("horizon {horizon} and step {delta} must be positive")));
        }
        let ratio = (horizon / delta).f64();
        let steps = ratio.round();
        if (ratio - steps).abs() >= 1e-9 || steps < 1.0 {
            return Err(Error::InvalidGrid(format!("horizon {horizon} is not a multiple of step {delta}")));
        }
        Ok(Self {
            horizon,
            delta,
            steps: steps as usize,
        })
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, k: usize) -> T {
        T::of(k as f64) * self.delta
    }

    /// Index of the grid time closest to `t`, if it lies on the grid.
    pub fn index_of(&self, t: T) -> Option<usize> {
        let r = (t / self.delta).f64();
        let k = r.round();
        ((r - k).abs() < 1e-9 && k >= 0.0 && k as usize <= self.steps).then_some(k as usize)
    }
}

/// Simulated paths, stored path-major: `values[(path * (N+1) + k) * p + i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble<T> {
    grid: Grid<T>,
    labels: Vec<String>,
    n_paths: usize,
    seed: u64,
    values: Vec<T>,
    /// First grid index holding a non-finite value, per path.
    exploded: Vec<Option<usize>>,
}

impl<T: Scalar> PathEnsemble<T> {
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream id used for path `i`.
    pub fn stream_id(&self, path: usize) -> u64 {
        path as u64
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn state(&self, path: usize, k: usize) -> &[T] {
        let p = self.dim();
        let off = (path * (self.grid.steps + 1) + k) * p;
        &self.values[off..off + p]
    }

    pub fn path(&self, path: usize) -> &[T] {
        let len = (self.grid.steps + 1) * self.dim();
        &self.values[path * len..(path + 1) * len]
    }

    pub fn exploded(&self) -> &[Option<usize>] {
        &self.exploded
    }

    pub fn exploded_count(&self) -> usize {
        self.exploded.iter().filter(|e| e.is_some()).count()
    }

    pub fn exploded_fraction(&self) -> f64 {
        if self.n_paths == 0 {
            0.0
        } else {
            self.exploded_count() as f64 / self.n_paths as f64
        }
    }

    /// States at grid index `k` of every non-exploded path, as `f64` rows.
    pub fn slice(&self, k: usize) -> Vec<Vec<f64>> {
        (0..self.n_paths)
            .filter(|&i| self.exploded[i].is_none())
            .map(|i| self.state(i, k).iter().map(|v| v.f64()).collect())
            .collect()
    }

    /// Same grid and paths, new labels and values.
    pub fn with_values(&self, labels: Vec<String>, values: Vec<T>) -> Result<Self> {
        let expected = self.n_paths * (self.grid.steps + 1) * labels.len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "ensemble values",
                expected,
                found: values.len(),
            });
        }
        Ok(Self {
            grid: self.grid,
            labels,
            n_paths: self.n_paths,
            seed: self.seed,
            values,
            exploded: self.exploded.clone(),
        })
    }

    /// Long-format CSV: `path,t,<labels…>`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        let mut header = vec!["path".to_string(), "t".to_string()];
        header.extend(self.labels.iter().cloned());
        out.write_record(&header).map_err(io)?;
        let mut row = Vec::with_capacity(self.dim() + 2);
        for path in 0..self.n_paths {
            for k in 0..=self.grid.steps {
                row.clear();
                row.push(path.to_string());
                row.push(self.grid.time(k).to_string());
                row.extend(self.state(path, k).iter().map(|v| v.to_string()));
                out.write_record(&row).map_err(io)?;
            }
        }
        out.flush().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv). The seed is not stored in
    /// the file and is set to `seed`.
    pub fn read_csv<R: Read>(r: R, seed: u64) -> Result<Self> {
        let bad = |msg: String| Error::InvalidArgument(format!("csv: {msg}"));
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.len() < 3 || &header[0] != "path" || &header[1] != "t" {
            return Err(bad("header must be `path,t,<labels…>`".into()));
        }
        let labels: Vec<String> = header.iter().skip(2).map(str::to_owned).collect();
        let p = labels.len();
        let parse = |s: &str| s.trim().parse::<T>().map_err(|_| bad(format!("bad number `{s}`")));
        let mut times: Vec<T> = Vec::new();
        let mut values = Vec::new();
        let mut n_paths = 0usize;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != p + 2 {
                return Err(bad(format!("expected {} fields, found {}", p + 2, rec.len())));
            }
            let path: usize = rec[0].trim().parse().map_err(|_| bad(format!("bad path `{}`", &rec[0])))?;
            if path == n_paths {
                n_paths += 1;
            } else if path + 1 != n_paths {
                return Err(bad("rows must be grouped by path in increasing order".into()));
            }
            if path == 0 {
                times.push(parse(&rec[1])?);
            }
            for v in rec.iter().skip(2) {
                values.push(parse(v)?);
            }
        }
        if times.len() < 2 {
            return Err(bad("need at least two grid times".into()));
        }
        let delta = times[1] - times[0];
        let grid = Grid::new(*times.last().expect("nonempty"), delta)?;
        if values.len() != n_paths * times.len() * p || grid.steps + 1 != times.len() {
            return Err(bad("ragged ensemble".into()));
        }
        let exploded = (0..n_paths)
            .map(|i| {
                let len = times.len() * p;
                values[i * len..(i + 1) * len]
                    .iter()
                    .position(|v: &T| !v.is_finite())
                    .map(|pos| pos / p)
            })
            .collect();
        Ok(Self {
            grid,
            labels,
            n_paths,
            seed,
            values,
            exploded,
        })
    }
}

/// Outcome of one Euler path.
#[derive(Clone, Debug)]
pub struct PathOutcome<T> {
    /// `(N+1) × p` values, NaN after an explosion.
    pub values: Vec<T>,
    pub exploded: Option<usize>,
}

/// Initial state and the `N × d` increments of path `path`, drawn in that
/// order from stream `path`.
pub fn path_noise<T: Scalar>(
    system: &SdeSystem<T>,
    sampler: &IncrementSampler<T>,
    steps: usize,
    seed: u64,
    path: u64,
) -> (Vec<T>, Vec<T>) {
    let mut r = rng::stream(seed, path, 0);
    let mut x0 = vec![T::zero(); system.p()];
    system.initial.sample_into(&mut r, &mut x0);
    let inc = increments_from(&mut r, sampler, steps);
    (x0, inc)
}

/// The `N × d` increments of path `path` for a system with a fixed initial
/// state (which consumes no draws).
pub fn path_increments<T: Scalar>(sampler: &IncrementSampler<T>, steps: usize, seed: u64, path: u64) -> Vec<T> {
    let mut r = rng::stream(seed, path, 0);
    increments_from(&mut r, sampler, steps)
}

fn increments_from<T: Scalar>(r: &mut rng::StreamRng, sampler: &IncrementSampler<T>, steps: usize) -> Vec<T> {
    let d = sampler.dim();
    let mut inc = vec![T::zero(); steps * d];
    for chunk in inc.chunks_exact_mut(d) {
        sampler.sample_into(r, chunk);
    }
    inc
}

/// `X_{t_k} = X_{t_{k-1}} + a(X_{t_{k-1}}) ΔZ_k`.
pub fn euler_path<T: Scalar>(field: &CoefficientField<T>, x0: &[T], inc: &[T], steps: usize) -> PathOutcome<T> {
    let (p, d) = (field.p(), field.d());
    let mut values = vec![T::nan(); (steps + 1) * p];
    values[..p].copy_from_slice(x0);
    if !x0.iter().all(|v| v.is_finite()) {
        return PathOutcome {
            values,
            exploded: Some(0),
        };
    }
    let mut a = Matrix::zeros(p, d);
    for k in 1..=steps {
        let (prev, next) = values.split_at_mut(k * p);
        let x = &prev[(k - 1) * p..];
        if field.eval_into(x, &mut a).is_err() {
            return PathOutcome {
                values,
                exploded: Some(k),
            };
        }
        let dz = &inc[(k - 1) * d..k * d];
        for i in 0..p {
            next[i] = x[i] + dot(a.row(i), dz);
        }
        if !next[..p].iter().all(|v| v.is_finite()) {
            next[..p].iter_mut().for_each(|v| *v = T::nan());
            return PathOutcome {
                values,
                exploded: Some(k),
            };
        }
    }
    PathOutcome { values, exploded: None }
}

/// Euler scheme for `n_paths` paths; path `i` draws from stream `i`.
pub fn simulate<T: Scalar>(system: &SdeSystem<T>, grid: &Grid<T>, n_paths: usize, seed: u64) -> Result<PathEnsemble<T>> {
    let sampler = IncrementSampler::new(&system.driver, grid.delta)?;
    let steps = grid.steps;
    let outcomes: Vec<PathOutcome<T>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let (x0, inc) = path_noise(system, &sampler, steps, seed, i as u64);
            euler_path(&system.coeff, &x0, &inc, steps)
        })
        .collect();
    let mut values = Vec::with_capacity(n_paths * (steps + 1) * system.p());
    let mut exploded = Vec::with_capacity(n_paths);
    for o in outcomes {
        values.extend_from_slice(&o.values);
        exploded.push(o.exploded);
    }
    Ok(PathEnsemble {
        grid: *grid,
        labels: system.labels.clone(),
        n_paths,
        seed,
        values,
        exploded,
    })
}

/// States at selected grid indices only; memory is `O(n_paths · |indices| · p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSample<T> {
    pub labels: Vec<String>,
    pub indices: Vec<usize>,
    /// `n_paths × |indices| × p`; exploded paths hold NaN from the explosion on.
    pub values: Vec<T>,
    pub exploded: Vec<bool>,
}

impl<T: Scalar> SliceSample<T> {
    pub fn n_paths(&self) -> usize {
        self.exploded.len()
    }

    pub fn exploded_count(&self) -> usize {
        self.exploded.iter().filter(|&&e| e).count()
    }

    /// State of `path` at the `slot`-th requested index.
    pub fn state(&self, path: usize, slot: usize) -> &[T] {
        let p = self.labels.len();
        let off = (path * self.indices.len() + slot) * p;
        &self.values[off..off + p]
    }

    /// Rows of slot `slot` from non-exploded paths.
    pub fn slice(&self, slot: usize) -> Vec<Vec<f64>> {
        (0..self.n_paths())
            .filter(|&i| !self.exploded[i])
            .map(|i| self.state(i, slot).iter().map(|v| v.f64()).collect())
            .collect()
    }
}

/// Like [`simulate`] but keeps only the states at `indices`; draws are
/// identical.
pub fn simulate_at<T: Scalar>(
    system: &SdeSystem<T>,
    grid: &Grid<T>,
    indices: &[usize],
    n_paths: usize,
    seed: u64,
) -> Result<SliceSample<T>> {
    if let Some(&bad) = indices.iter().find(|&&k| k > grid.steps) {
        return Err(Error::InvalidGrid(format!("grid index {bad} beyond {} steps", grid.steps)));
    }
    let sampler = IncrementSampler::new(&system.driver, grid.delta)?;
    let (p, d) = (system.p(), system.d());
    let last = indices.iter().copied().max().unwrap_or(0);
    let rows: Vec<(Vec<T>, bool)> = (0..n_paths)
        .into_par_iter()
        .map_init(
            || (Matrix::zeros(p, d), vec![T::zero(); d], vec![T::zero(); p]),
            |(a, dz, next), i| {
                let mut out = vec![T::nan(); indices.len() * p];
                let record = |k: usize, x: &[T], out: &mut Vec<T>| {
                    for (slot, _) in indices.iter().enumerate().filter(|&(_, &ki)| ki == k) {
                        out[slot * p..(slot + 1) * p].copy_from_slice(x);
                    }
                };
                let mut r = rng::stream(seed, i as u64, 0);
                let mut x = vec![T::zero(); p];
                system.initial.sample_into(&mut r, &mut x);
                if !x.iter().all(|v| v.is_finite()) {
                    return (out, true);
                }
                record(0, &x, &mut out);
                for k in 1..=last {
                    sampler.sample_into(&mut r, dz);
                    if system.coeff.eval_into(&x, a).is_err() {
                        return (out, true);
                    }
                    for (row, n) in next.iter_mut().enumerate() {
                        *n = x[row] + dot(a.row(row), dz);
                    }
                    if !next.iter().all(|v| v.is_finite()) {
                        return (out, true);
                    }
                    x.copy_from_slice(next);
                    record(k, &x, &mut out);
                }
                (out, false)
            },
        )
        .collect();
    let mut values = Vec::with_capacity(n_paths * indices.len() * p);
    let mut exploded = Vec::with_capacity(n_paths);
    for (v, e) in rows {
        values.extend_from_slice(&v);
        exploded.push(e);
    }
    Ok(SliceSample {
        labels: system.labels.clone(),
        indices: indices.to_vec(),
        values,
        exploded,
    })
}

/// Terminal states only; memory is `O(n_paths · p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalSample<T> {
    pub labels: Vec<String>,
    /// Row-major `n_paths × p`; NaN rows mark exploded paths.
    pub values: Vec<T>,
    pub exploded: usize,
}

impl<T: Scalar> TerminalSample<T> {
    pub fn n_paths(&self) -> usize {
        self.values.len() / self.labels.len().max(1)
    }

    pub fn state(&self, path: usize) -> &[T] {
        let p = self.labels.len();
        &self.values[path * p..(path + 1) * p]
    }
}

/// Like [`simulate`] but keeps only `X_T`; draws are identical.
pub fn simulate_terminal<T: Scalar>(
    system: &SdeSystem<T>,
    grid: &Grid<T>,
    n_paths: usize,
    seed: u64,
) -> Result<TerminalSample<T>> {
    let s = simulate_at(system, grid, &[grid.steps], n_paths, seed)?;
    let exploded = s.exploded_count();
    let mut values = s.values;
    let p = s.labels.len();
    for (i, &e) in s.exploded.iter().enumerate() {
        if e {
            values[i * p..(i + 1) * p].iter_mut().for_each(|v| *v = T::nan());
        }
    }
    Ok(TerminalSample {
        labels: s.labels,
        values,
        exploded,
    })
}

/// Simulates every system on the same increments. Drivers must be
/// bit-identical.
pub fn simulate_shared<T: Scalar>(
    systems: &[&SdeSystem<T>],
    grid: &Grid<T>,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<PathEnsemble<T>>> {
    if let Some(first) = systems.first() {
        if systems.iter().any(|s| s.driver != first.driver) {
            return Err(Error::DriverMismatch);
        }
    }
    systems.iter().map(|s| simulate(s, grid, n_paths, seed)).collect()
}

// ---------------------------------------------------------------------------
// Euler SEM

/// The layered SEM whose vertex `(k, i)` is the Euler value of coordinate `i`
/// at `t_k`. Vertex `(k, i)` has index `k * p + i`; noise slot 0 is the
/// initial state and slot `k ≥ 1` the increment over `(t_{k-1}, t_k]`.
#[derive(Clone, Debug)]
pub struct EulerSem<T> {
    grid: Grid<T>,
    p: usize,
    signature: SignatureGraph,
    sem: SemModel<T>,
}

impl<T: Scalar> EulerSem<T> {
    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn signature(&self) -> &SignatureGraph {
        &self.signature
    }

    pub fn sem(&self) -> &SemModel<T> {
        &self.sem
    }

    pub fn vertex(&self, k: usize, i: usize) -> usize {
        k * self.p + i
    }

    pub fn layer_of(&self, v: usize) -> (usize, usize) {
        (v / self.p, v % self.p)
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.sem.edges()
    }

    pub fn layer_edge_count(&self) -> usize {
        (0..self.p).map(|j| parents_of(&self.signature, j).len()).sum()
    }

    /// Evaluates all vertices on the given initial state and increments.
    pub fn evaluate(&self, x0: &[T], inc: &[T]) -> Vec<T> {
        evaluate_layered(&self.sem, self.p, x0, inc, self.grid.steps)
    }
}

fn evaluate_layered<T: Scalar>(sem: &SemModel<T>, p: usize, x0: &[T], inc: &[T], steps: usize) -> Vec<T> {
    let d = inc.len().checked_div(steps).unwrap_or(0);
    let mut noise: Vec<&[T]> = Vec::with_capacity(steps + 1);
    noise.push(&x0[..p]);
    noise.extend(inc.chunks_exact(d.max(1)).take(steps));
    sem.evaluate(&noise)
}

fn parents_of(sig: &SignatureGraph, j: usize) -> Vec<usize> {
    let mut pa: Vec<usize> = sig.parents(j).collect();
    pa.push(j);
    pa.sort_unstable();
    pa.dedup();
    pa
}

pub fn build_euler_sem<T: Scalar>(system: &SdeSystem<T>, grid: &Grid<T>) -> Result<EulerSem<T>> {
    let signature = system.signature()?;
    let (p, d) = (system.p(), system.d());
    let mut vertices = Vec::with_capacity((grid.steps + 1) * p);
    for i in 0..p {
        vertices.push(SemVertex {
            label: format!("{}@0", system.labels[i]),
            parents: vec![],
            noise: Some(0),
            relation: Arc::new(move |_: &[T], x0: &[T]| x0[i]) as Relation<T>,
        });
    }
    for k in 1..=grid.steps {
        for i in 0..p {
            let pa = parents_of(&signature, i);
            let field = system.coeff.clone();
            let coords = pa.clone();
            let relation: Relation<T> = Arc::new(move |vals: &[T], dz: &[T]| {
                let mut x = vec![T::zero(); p];
                for (&c, &v) in coords.iter().zip(vals) {
                    x[c] = v;
                }
                let mut a = Matrix::zeros(p, d);
                match field.eval_into(&x, &mut a) {
                    Ok(()) => x[i] + dot(a.row(i), dz),
                    Err(_) => T::nan(),
                }
            });
            vertices.push(SemVertex {
                label: format!("{}@{k}", system.labels[i]),
                parents: pa.iter().map(|&j| (k - 1) * p + j).collect(),
                noise: Some(k),
                relation,
            });
        }
    }
    let sem = SemModel::new(vertices, grid.steps + 1)?;
    Ok(EulerSem {
        grid: *grid,
        p,
        signature,
        sem,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommutationReport {
    pub max_abs_diff: f64,
    pub n_paths: usize,
    pub steps: usize,
    pub tol: f64,
    pub exploded_paths: usize,
    pub commutes: bool,
}

/// Compares (A) the intervened Euler SEM with (B) the Euler scheme of the
/// postintervention SDE, both fed the same noise.
///
/// In route A every layer gets `(X_{t_k})^m := ζ((X_{t_k})^{-m})`, so the
/// intervened coordinate always equals `ζ` of the current state, as it does
/// in the lifted postintervention path.
pub fn check_commutation<T: Scalar>(
    system: &SdeSystem<T>,
    spec: &InterventionSpec<T>,
    grid: &Grid<T>,
    n_paths: usize,
    seed: u64,
    tol: T,
) -> Result<CommutationReport> {
    let m = spec.coordinate()?;
    let reduced = intervene_sde(system, spec)?;
    let esem = build_euler_sem(system, grid)?;
    let p = system.p();
    let assignments: Vec<SemAssignment<T>> = (0..=grid.steps)
        .map(|k| {
            let zeta = spec.zeta.clone();
            SemAssignment {
                target: k * p + m,
                inputs: (0..p).filter(|&j| j != m).map(|j| k * p + j).collect(),
                zeta: Arc::new(move |y: &[T]| zeta.eval(y)),
            }
        })
        .collect();
    let intervened = intervene_sem(esem.sem(), &assignments)?;
    let sampler = IncrementSampler::new(&reduced.driver, grid.delta)?;
    let steps = grid.steps;

    let per_path: Vec<(T, bool)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let (y0, inc) = path_noise(&reduced, &sampler, steps, seed, i as u64);
            let route_b = euler_path(&reduced.coeff, &y0, &inc, steps);
            let mut x0 = vec![T::zero(); p];
            insert_index(&y0, m, T::zero(), &mut x0);
            let route_a = evaluate_layered(&intervened, p, &x0, &inc, steps);
            let mut worst = T::zero();
            // The Euler path is undefined past an explosion; compare up to it.
            let valid = route_b.exploded.map_or(steps + 1, |k| k);
            for k in 0..valid {
                let b = &route_b.values[k * (p - 1)..(k + 1) * (p - 1)];
                for (j, &bv) in b.iter().enumerate() {
                    let col = if j < m { j } else { j + 1 };
                    let av = route_a[k * p + col];
                    let diff = match (av.is_finite(), bv.is_finite()) {
                        (true, true) => (av - bv).abs(),
                        (false, false) => T::zero(),
                        _ => T::infinity(),
                    };
                    worst = worst.max(diff);
                }
            }
            (worst, route_b.exploded.is_some())
        })
        .collect();
    let max = per_path.iter().fold(T::zero(), |acc, &(w, _)| acc.max(w));
    Ok(CommutationReport {
        max_abs_diff: max.f64(),
        n_paths,
        steps,
        tol: tol.f64(),
        exploded_paths: per_path.iter().filter(|&&(_, e)| e).count(),
        commutes: max <= tol,
    })
}

// ---------------------------------------------------------------------------
// Convergence

/// Closed-form solution `X_t` given `t`, `Z_t − Z_0` and `X_0`.
pub type ExactSolution<'a, T> = &'a (dyn Fn(T, &[T], &[T]) -> Vec<T> + Sync);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub delta: f64,
    pub rms_sup_error: f64,
    pub used_paths: usize,
    pub exploded_paths: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceTable {
    /// Ordered by decreasing step.
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log RMS` against `log Δ`.
    pub slope: Option<f64>,
    /// RMS error non-increasing as the step shrinks, with 5% slack.
    pub monotone: bool,
    pub reference: String,
}

/// Strong-error study. Every step must divide the horizon and be an integer
/// multiple of the finest step; coarse increments are sums of fine ones.
/// Without `exact`, the finest grid is the reference and is not tabulated.
pub fn convergence_study<T: Scalar>(
    system: &SdeSystem<T>,
    exact: Option<ExactSolution<'_, T>>,
    deltas: &[T],
    horizon: T,
    n_paths: usize,
    seed: u64,
) -> Result<ConvergenceTable> {
    if deltas.is_empty() {
        return Err(Error::InvalidArgument("no step sizes given".into()));
    }
    let mut sorted: Vec<T> = deltas.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sorted.dedup();
    let finest = *sorted.last().expect("nonempty");
    let fine = Grid::new(horizon, finest)?;
    let mut factors = Vec::with_capacity(sorted.len());
    for &delta in &sorted {
        let grid = Grid::new(horizon, delta)?;
        if fine.steps % grid.steps != 0 {
            return Err(Error::InvalidGrid(format!("step {delta} is not a multiple of {finest}")));
        }
        factors.push(fine.steps / grid.steps);
    }
    let tabulated: Vec<usize> = match exact {
        Some(_) => (0..sorted.len()).collect(),
        None => (0..sorted.len() - 1).collect(),
    };
    let sampler = IncrementSampler::new(&system.driver, finest)?;
    let (p, d) = (system.p(), system.d());

    // Per path: sup error per tabulated step (None when exploded).
    let errors: Vec<Vec<Option<f64>>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let (x0, inc) = path_noise(system, &sampler, fine.steps, seed, i as u64);
            let inc = &inc;
            let reference = match exact {
                Some(_) => None,
                None => Some(euler_path(&system.coeff, &x0, inc, fine.steps)),
            };
            tabulated
                .iter()
                .map(|&r| {
                    let f = factors[r];
                    let n = fine.steps / f;
                    let coarse: Vec<T> = (0..n)
                        .flat_map(|k| {
                            (0..d).map(move |j| (0..f).map(|s| inc[(k * f + s) * d + j]).sum::<T>())
                        })
                        .collect();
                    let path = euler_path(&system.coeff, &x0, &coarse, n);
                    if path.exploded.is_some() {
                        return None;
                    }
                    let mut cum = vec![T::zero(); d];
                    let mut sup = T::zero();
                    for k in 0..=n {
                        if k > 0 {
                            for j in 0..d {
                                cum[j] += coarse[(k - 1) * d + j];
                            }
                        }
                        let target: Vec<T> = match (exact, &reference) {
                            (Some(sol), _) => sol(sorted[r] * T::of(k as f64), &cum, &x0),
                            (None, Some(refp)) => {
                                if refp.exploded.is_some() {
                                    return None;
                                }
                                refp.values[k * f * p..(k * f + 1) * p].to_vec()
                            }
                            (None, None) => unreachable!(),
                        };
                        let err: T = path.values[k * p..(k + 1) * p]
                            .iter()
                            .zip(&target)
                            .map(|(&a, &b)| (a - b) * (a - b))
                            .sum::<T>()
                            .sqrt();
                        sup = sup.max(err);
                    }
                    Some(sup.f64())
                })
                .collect()
        })
        .collect();

    let rows: Vec<ConvergenceRow> = tabulated
        .iter()
        .enumerate()
        .map(|(col, &r)| {
            let used: Vec<f64> = errors.iter().filter_map(|e| e[col]).collect();
            let rms = if used.is_empty() {
                f64::NAN
            } else {
                (used.iter().map(|e| e * e).sum::<f64>() / used.len() as f64).sqrt()
            };
            ConvergenceRow {
                delta: sorted[r].f64(),
                rms_sup_error: rms,
                used_paths: used.len(),
                exploded_paths: n_paths - used.len(),
            }
        })
        .collect();
    let slope = log_log_slope(&rows);
    let monotone = rows.windows(2).all(|w| w[1].rms_sup_error <= 1.05 * w[0].rms_sup_error);
    Ok(ConvergenceTable {
        rows,
        slope,
        monotone,
        reference: if exact.is_some() { "exact" } else { "finest grid" }.into(),
    })
}

fn log_log_slope(rows: &[ConvergenceRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.rms_sup_error > 0.0 && r.rms_sup_error.is_finite())
        .map(|r| (r.delta.ln(), r.rms_sup_error.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
