//! Driving Lévy noise described by its characteristic triplet.
//!
//! The jump measure is a finite list of atoms, so the process is a Brownian
//! motion with drift plus independent compound Poisson components. The
//! truncation set is the closed ball of radius `trunc_radius`.

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct JumpAtom<T> {
    pub rate: T,
    pub location: Vec<T>,
}

impl<T: Scalar> JumpAtom<T> {
    pub fn new(rate: T, location: Vec<T>) -> Self {
        Self { rate, location }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevyTriplet<T> {
    alpha: Vec<T>,
    cov: Matrix<T>,
    jumps: Vec<JumpAtom<T>>,
    trunc_radius: T,
    factor: Matrix<T>,
}

impl<T: Scalar> LevyTriplet<T> {
    pub fn new(alpha: Vec<T>, cov: Matrix<T>, jumps: Vec<JumpAtom<T>>, trunc_radius: T) -> Result<Self> {
        let d = alpha.len();
        if d == 0 {
            return Err(Error::InvalidTriplet("dimension must be positive".into()));
        }
        if cov.rows() != d || cov.cols() != d {
            return Err(Error::DimensionMismatch {
                what: "triplet covariance",
                expected: d,
                found: if cov.rows() != d { cov.rows() } else { cov.cols() },
            });
        }
        if alpha.iter().any(|a| !a.is_finite()) || !cov.is_finite() {
            return Err(Error::NonFinite("triplet"));
        }
        let sym_tol = T::of(1e-12) * T::one().max(cov.max_abs());
        if !cov.is_symmetric(sym_tol) {
            return Err(Error::InvalidTriplet("covariance is not symmetric".into()));
        }
        if !(trunc_radius > T::zero()) || !trunc_radius.is_finite() {
            return Err(Error::InvalidTriplet("truncation radius must be positive".into()));
        }
        for (k, atom) in jumps.iter().enumerate() {
            if atom.location.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "jump atom location",
                    expected: d,
                    found: atom.location.len(),
                });
            }
            if !(atom.rate > T::zero()) || !atom.rate.is_finite() {
                return Err(Error::InvalidTriplet(format!("atom {k} has non-positive rate")));
            }
            if atom.location.iter().any(|v| !v.is_finite()) || norm2(&atom.location) == T::zero() {
                return Err(Error::InvalidTriplet(format!("atom {k} sits at the origin")));
            }
        }
        let factor = psd_factor(&cov)?;
        Ok(Self {
            alpha,
            cov,
            jumps,
            trunc_radius,
            factor,
        })
    }

    /// Standard `d`-dimensional Brownian motion.
    pub fn brownian(d: usize) -> Self {
        Self::new(vec![T::zero(); d], Matrix::identity(d), Vec::new(), T::one())
            .expect("standard Brownian triplet is valid")
    }

    /// Driver `(t, W¹, …, W^d)` for drift-plus-diffusion systems: coordinate 0
    /// is deterministic time, the rest an independent standard Brownian motion.
    pub fn time_and_brownian(d: usize) -> Self {
        let mut alpha = vec![T::zero(); d + 1];
        alpha[0] = T::one();
        let mut diag = vec![T::one(); d + 1];
        diag[0] = T::zero();
        Self::new(alpha, Matrix::from_diag(&diag), Vec::new(), T::one())
            .expect("time+Brownian triplet is valid")
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn cov(&self) -> &Matrix<T> {
        &self.cov
    }

    pub fn jumps(&self) -> &[JumpAtom<T>] {
        &self.jumps
    }

    pub fn trunc_radius(&self) -> T {
        self.trunc_radius
    }

    /// Gaussian factor `L` with `L Lᵀ = C`.
    pub fn factor(&self) -> &Matrix<T> {
        &self.factor
    }

    pub fn has_jumps(&self) -> bool {
        !self.jumps.is_empty()
    }

    pub fn in_truncation_set(&self, y: &[T]) -> bool {
        norm2(y) <= self.trunc_radius
    }

    /// Same law, different truncation ball: the drift absorbs the change in
    /// compensated atoms.
    pub fn with_trunc_radius(&self, radius: T) -> Result<Self> {
        let mut alpha = self.alpha.clone();
        for atom in &self.jumps {
            let r = norm2(&atom.location);
            let before = if r <= self.trunc_radius { T::one() } else { T::zero() };
            let after = if r <= radius { T::one() } else { T::zero() };
            for (a, &y) in alpha.iter_mut().zip(&atom.location) {
                *a += atom.rate * y * (after - before);
            }
        }
        Self::new(alpha, self.cov.clone(), self.jumps.clone(), radius)
    }
}

/// Symmetric PSD square-root factor via eigendecomposition.
///
/// Eigenvalues in `[-1e-10·‖C‖, 0)` are clipped to zero; anything more
/// negative is rejected. Columns follow the eigenvalues in descending order.
pub fn psd_factor<T: Scalar>(c: &Matrix<T>) -> Result<Matrix<T>> {
    if !c.is_square() {
        return Err(Error::DimensionMismatch {
            what: "psd factor (columns)",
            expected: c.rows(),
            found: c.cols(),
        });
    }
    let (vals, vecs) = c.symmetric_eigen();
    let norm = vals.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let floor = -T::of(1e-10) * norm;
    if let Some(&min) = vals.last() {
        if min < floor {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: min.f64(),
            });
        }
    }
    let n = c.rows();
    let mut l = vecs;
    for (j, &lam) in vals.iter().enumerate() {
        let s = lam.max(T::zero()).sqrt();
        for i in 0..n {
            l[(i, j)] *= s;
        }
    }
    Ok(l)
}

/// `E exp(i uᵀ Z_t)` for the driver with the given triplet.
pub fn characteristic_function<T: Scalar>(triplet: &LevyTriplet<T>, u: &[T], t: T) -> Complex<T> {
    let i = Complex::new(T::zero(), T::one());
    let cu = triplet.cov.mul_vec(u);
    let mut exponent = i * dot(u, &triplet.alpha) - Complex::from(T::half() * dot(u, &cu));
    for atom in &triplet.jumps {
        let uy = dot(u, &atom.location);
        let mut term = (i * uy).exp() - T::one();
        if triplet.in_truncation_set(&atom.location) {
            term -= i * uy;
        }
        exponent += term * atom.rate;
    }
    (exponent * t).exp()
}

/// Precomputed sampler for increments over a fixed step length.
#[derive(Clone, Debug)]
pub struct IncrementSampler<T> {
    drift: Vec<T>,
    scaled_factor: Matrix<T>,
    gaussian: bool,
    atoms: Vec<(Poisson<f64>, Vec<T>)>,
}

impl<T: Scalar> IncrementSampler<T> {
    pub fn new(triplet: &LevyTriplet<T>, delta: T) -> Result<Self> {
        if !(delta > T::zero()) || !delta.is_finite() {
            return Err(Error::InvalidArgument(format!("step length must be positive, got {delta}")));
        }
        let mut drift = triplet.alpha.clone();
        for atom in &triplet.jumps {
            if triplet.in_truncation_set(&atom.location) {
                for (d, &y) in drift.iter_mut().zip(&atom.location) {
                    *d -= atom.rate * y;
                }
            }
        }
        drift.iter_mut().for_each(|d| *d *= delta);
        let scaled_factor = triplet.factor.scale(delta.sqrt());
        let gaussian = scaled_factor.max_abs() > T::zero();
        let atoms = triplet
            .jumps
            .iter()
            .map(|a| {
                let mean = (a.rate * delta).f64();
                Poisson::new(mean)
                    .map(|p| (p, a.location.clone()))
                    .map_err(|e| Error::InvalidTriplet(format!("poisson intensity {mean}: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            drift,
            scaled_factor,
            gaussian,
            atoms,
        })
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    /// Writes one increment into `out`, consuming draws from `rng`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [T]) {
        let d = self.drift.len();
        out.copy_from_slice(&self.drift);
        if self.gaussian {
            let mut xi = [T::zero(); 16];
            let mut heap;
            let xi: &mut [T] = if d <= 16 {
                &mut xi[..d]
            } else {
                heap = vec![T::zero(); d];
                &mut heap
            };
            for v in xi.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = T::of(z);
            }
            for (i, o) in out.iter_mut().enumerate() {
                let g = dot(self.scaled_factor.row(i), xi);
                *o += g;
            }
        }
        for (poisson, y) in &self.atoms {
            let n = poisson.sample(rng);
            if n > 0.0 {
                let n = T::of(n);
                for (o, &yk) in out.iter_mut().zip(y) {
                    *o += n * yk;
                }
            }
        }
    }
}

/// One increment `Z_{t+δ} − Z_t`.
pub fn sample_increment<T: Scalar, R: Rng + ?Sized>(
    triplet: &LevyTriplet<T>,
    delta: T,
    rng: &mut R,
) -> Result<Vec<T>> {
    let sampler = IncrementSampler::new(triplet, delta)?;
    let mut out = vec![T::zero(); triplet.dim()];
    sampler.sample_into(rng, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_triplet(alpha: f64, cov: f64, jumps: &[(f64, f64)], r: f64) -> LevyTriplet<f64> {
        LevyTriplet::new(
            vec![alpha],
            Matrix::from_rows(&[[cov]]).unwrap(),
            jumps.iter().map(|&(l, y)| JumpAtom::new(l, vec![y])).collect(),
            r,
        )
        .unwrap()
    }

    #[test]
    fn pure_drift_increment_is_exact() {
        let t = scalar_triplet(2.0, 0.0, &[], 1.0);
        let mut r = rng::stream(1, 0, 0);
        assert_eq!(sample_increment(&t, 0.5, &mut r).unwrap(), vec![1.0]);
    }

    #[test]
    fn atom_outside_ball_is_uncompensated() {
        let t = scalar_triplet(0.0, 0.0, &[(2.0, 3.0)], 1.0);
        let mut r = rng::stream(5, 0, 0);
        for _ in 0..200 {
            let z = sample_increment(&t, 0.7, &mut r).unwrap()[0];
            assert!(z >= 0.0 && (z / 3.0).fract() == 0.0, "{z}");
        }
    }

    #[test]
    fn sampling_is_deterministic_in_stream_state() {
        let t = scalar_triplet(0.3, 1.5, &[(1.0, 0.5)], 1.0);
        let a = sample_increment(&t, 0.1, &mut rng::stream(3, 9, 4)).unwrap();
        let b = sample_increment(&t, 0.1, &mut rng::stream(3, 9, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cf_closed_forms() {
        let g = scalar_triplet(0.0, 1.0, &[], 1.0);
        let v = characteristic_function(&g, &[1.0], 1.0);
        assert!((v.re - (-0.5f64).exp()).abs() < 1e-15 && v.im.abs() < 1e-15);

        let j = scalar_triplet(0.0, 0.0, &[(1.0, 2.0)], 1.0);
        for &u in &[0.3, 1.1, -2.0] {
            let v = characteristic_function(&j, &[u], 1.0);
            let expected = (Complex::new(0.0, 2.0 * u).exp() - 1.0).exp();
            assert!((v - expected).norm() < 1e-14);
        }

        let d = scalar_triplet(1.0, 0.0, &[], 1.0);
        for &(u, t) in &[(0.5, 2.0), (-1.5, 0.3)] {
            let v = characteristic_function(&d, &[u], t);
            assert!((v - Complex::new(0.0, t * u).exp()).norm() < 1e-14);
        }
    }

    #[test]
    fn truncation_radius_does_not_change_law() {
        let t = scalar_triplet(0.2, 0.5, &[(1.0, 0.5), (0.4, -2.0)], 1.0);
        let moved = t.with_trunc_radius(3.0).unwrap();
        assert_ne!(t.alpha(), moved.alpha());
        for k in 0..20 {
            let u = -3.0 + 0.3 * k as f64;
            let a = characteristic_function(&t, &[u], 0.7);
            let b = characteristic_function(&moved, &[u], 0.7);
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn psd_factor_examples() {
        let id = Matrix::<f64>::identity(3);
        assert_eq!(psd_factor(&id).unwrap(), id);
        let z = Matrix::<f64>::zeros(2, 2);
        assert_eq!(psd_factor(&z).unwrap(), z);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = Matrix::<f64>::from_vec(4, 4, (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let c = m.transpose().matmul(&m);
            let l = psd_factor(&c).unwrap();
            let rel = l.matmul(&l.transpose()).sub(&c).frobenius_norm() / c.frobenius_norm();
            assert!(rel < 1e-10, "{rel}");
        }
    }

    #[test]
    fn rank_deficient_and_indefinite_covariances() {
        let c = Matrix::<f64>::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let l = psd_factor(&c).unwrap();
        assert!(l.matmul(&l.transpose()).max_abs_diff(&c) < 1e-14);
        let bad = Matrix::<f64>::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(psd_factor(&bad), Err(Error::NotPositiveSemidefinite { .. })));
        assert!(LevyTriplet::new(vec![0.0, 0.0], bad, vec![], 1.0).is_err());
    }

    #[test]
    fn invalid_triplets_are_rejected() {
        let c = Matrix::<f64>::identity(1);
        assert!(LevyTriplet::new(vec![0.0], c.clone(), vec![JumpAtom::new(1.0, vec![0.0])], 1.0).is_err());
        assert!(LevyTriplet::new(vec![0.0], c.clone(), vec![JumpAtom::new(-1.0, vec![1.0])], 1.0).is_err());
        assert!(LevyTriplet::new(vec![0.0], c.clone(), vec![], 0.0).is_err());
        let asym = Matrix::<f64>::from_rows(&[[1.0, 0.1], [0.0, 1.0]]).unwrap();
        assert!(LevyTriplet::new(vec![0.0, 0.0], asym, vec![], 1.0).is_err());
    }

    #[test]
    fn time_coordinate_is_exact() {
        let t = LevyTriplet::<f64>::time_and_brownian(2);
        let sampler = IncrementSampler::new(&t, 0.01).unwrap();
        let mut out = vec![0.0; 3];
        let mut r = rng::stream(2, 0, 1);
        for _ in 0..100 {
            sampler.sample_into(&mut r, &mut out);
            assert_eq!(out[0], 0.01);
        }
    }
}
