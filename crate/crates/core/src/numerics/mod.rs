//! Dense linear algebra, nonlinearities, initialization and the
//! finite-difference gradient oracle.
//!
//! Every routine is a pure function of its arguments and accumulates in a
//! fixed order, so repeated calls are bit-identical.

mod matrix;
mod rng;

pub use matrix::Matrix;
pub use rng::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Logistic sigmoid, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn tanh<T: Scalar>(x: T) -> T {
    x.tanh()
}

#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Subgradient of [`relu`]; 0 at the origin.
#[inline]
pub fn relu_grad<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// Element-wise nonlinearity selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Rectifier,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Rectifier => relu(x),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub fn grad<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Rectifier => relu_grad(x),
        }
    }
}

/// Softmax with max subtraction.
pub fn softmax<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::Empty("softmax input"));
    }
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let mut out: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let z: T = out.iter().copied().sum();
    out.iter_mut().for_each(|p| *p /= z);
    Ok(out)
}

/// `log(softmax(v))`, stable for large logits.
pub fn log_softmax<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::Empty("log_softmax input"));
    }
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("log_softmax input".into()));
    }
    let z: T = v.iter().map(|&x| (x - max).exp()).sum();
    let lz = max + z.ln();
    Ok(v.iter().map(|&x| x - lz).collect())
}

/// `radius * Q` with `Q` the orthogonal factor of a Gaussian matrix.
///
/// `Q` comes from a Householder QR factorization and its columns are
/// sign-flipped so that `R` has a positive diagonal; this makes the result a
/// deterministic function of the Gaussian draw.
pub fn orthogonal_init<T: Scalar>(n: usize, radius: T, rng: &mut Rng) -> Result<Matrix<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("orthogonal_init: n must be >= 1".into()));
    }
    if !(radius > T::zero()) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "orthogonal_init: radius must be positive, got {radius}"
        )));
    }
    let a = Matrix::<f64>::gaussian(n, n, 1.0, rng);
    let (q, r_diag) = householder_qr(a);
    let out = Matrix::from_fn(n, n, |i, j| {
        let s = if r_diag[j] < 0.0 { -1.0 } else { 1.0 };
        T::lit(q[(i, j)] * s) * radius
    });
    Ok(out)
}

/// Householder QR of a square matrix; returns `Q` and the diagonal of `R`.
fn householder_qr(mut a: Matrix<f64>) -> (Matrix<f64>, Vec<f64>) {
    let n = a.rows();
    let mut q = Matrix::<f64>::identity(n);
    let mut r_diag = vec![0.0; n];
    let mut v = vec![0.0; n];
    for k in 0..n {
        let norm = (k..n).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        if k == n - 1 || norm == 0.0 {
            r_diag[k] = a[(k, k)];
            continue;
        }
        let x0 = a[(k, k)];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        for i in k..n {
            v[i] = a[(i, k)];
        }
        v[k] -= alpha;
        let vnorm = (k..n).map(|i| v[i] * v[i]).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            r_diag[k] = a[(k, k)];
            continue;
        }
        for vi in &mut v[k..n] {
            *vi /= vnorm;
        }
        // A <- (I - 2 v v^T) A on rows k..n
        for j in k..n {
            let dot: f64 = (k..n).map(|i| v[i] * a[(i, j)]).sum();
            for i in k..n {
                a[(i, j)] -= 2.0 * v[i] * dot;
            }
        }
        // Q <- Q (I - 2 v v^T) on columns k..n
        for i in 0..n {
            let dot: f64 = (k..n).map(|j| q[(i, j)] * v[j]).sum();
            for j in k..n {
                q[(i, j)] -= 2.0 * dot * v[j];
            }
        }
        r_diag[k] = a[(k, k)];
    }
    (q, r_diag)
}

/// Largest singular value of a square matrix by power iteration on `M^T M`.
///
/// For the scaled orthogonal matrices produced by [`orthogonal_init`] (and
/// for any normal matrix) this equals the spectral radius, which is the
/// quantity the initializer controls.
pub fn spectral_radius<T: Scalar>(m: &Matrix<T>) -> Result<T> {
    if !m.is_square() {
        return Err(Error::Dimension {
            context: "spectral_radius (square matrix required)",
            expected: m.rows(),
            actual: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("spectral_radius input".into()));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(T::zero());
    }
    let mf: Matrix<f64> = m.cast();
    // Fixed, non-symmetric start vector; avoids being orthogonal to the top
    // singular vector for structured inputs such as diagonals.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 + 1.0).sqrt() / (n as f64 + 1.0)).collect();
    normalize(&mut v);
    let mut lambda = 0.0f64;
    for _ in 0..100_000 {
        let mv = mf.matvec(&v);
        let mut w = vec![0.0; n];
        mf.gemv_t_acc(&mv, &mut w);
        let next: f64 = mv.iter().map(|x| x * x).sum();
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wn == 0.0 {
            return Ok(T::zero());
        }
        w.iter_mut().for_each(|x| *x /= wn);
        v = w;
        let done = (next - lambda).abs() <= 1e-16 * next.max(f64::MIN_POSITIVE);
        lambda = next;
        if done {
            break;
        }
    }
    Ok(T::lit(lambda.sqrt()))
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// Central-difference gradient `(f(θ+εe_i) − f(θ−εe_i)) / 2ε`.
pub fn finite_diff_gradient<T, F>(mut f: F, theta: &[T], eps: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    let mut probe = theta.to_vec();
    let two_eps = eps + eps;
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&probe);
        probe[i] = orig - eps;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i}: f(+eps) = {up}, f(-eps) = {down}"
            )));
        }
        grad.push((up - down) / two_eps);
    }
    Ok(grad)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error<T: Scalar>(a: T, b: T, floor: T) -> T {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    #[test]
    fn softmax_uniform_for_equal_logits() {
        let p = softmax(&[0.0f64, 0.0, 0.0]).unwrap();
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_ln2() {
        let p = softmax(&[0.0f64, 2f64.ln()]).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let p = softmax(&[1000.0f64, 0.0]).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        // exp(-1000) underflows to 0 in f64
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(matches!(softmax::<f64>(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn log_softmax_matches_softmax() {
        let v = [0.3f64, -1.2, 2.5, 0.0];
        let p = softmax(&v).unwrap();
        let lp = log_softmax(&v).unwrap();
        for (a, b) in p.iter().zip(&lp) {
            assert!((a.ln() - b).abs() < 1e-14);
        }
    }

    #[test]
    fn orthogonal_one_by_one() {
        let m = orthogonal_init(1, 0.7f64, &mut Rng::new(3)).unwrap();
        assert!((m[(0, 0)].abs() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_rejects_bad_args() {
        assert!(orthogonal_init(0, 1.0f64, &mut Rng::new(0)).is_err());
        assert!(orthogonal_init(3, 0.0f64, &mut Rng::new(0)).is_err());
        assert!(orthogonal_init(3, -1.0f64, &mut Rng::new(0)).is_err());
    }

    fn orthogonality_defect(m: &Matrix<f64>, r: f64) -> f64 {
        let q = m.scaled(1.0 / r);
        q.transpose().matmul(&q).unwrap().max_abs_diff(&Matrix::identity(m.rows()))
    }

    #[test]
    fn orthogonal_columns_for_several_sizes() {
        for &n in &[1usize, 5, 64] {
            for &r in &[1.0f64, 0.4] {
                let m = orthogonal_init(n, r, &mut Rng::new(n as u64)).unwrap();
                assert!(orthogonality_defect(&m, r) < 1e-10, "n={n} r={r}");
            }
        }
    }

    #[test]
    fn orthogonal_radius_controls_spectrum() {
        for &r in &[1.0f64, 0.4] {
            let m = orthogonal_init(64, r, &mut Rng::new(11)).unwrap();
            let rho = spectral_radius(&m).unwrap();
            assert!((rho - r).abs() < 1e-6, "radius {r}: got {rho}");
        }
    }

    #[test]
    fn orthogonal_init_is_seed_reproducible() {
        let a = orthogonal_init(6, 1.0f64, &mut Rng::new(9)).unwrap();
        let b = orthogonal_init(6, 1.0f64, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spectral_radius_simple_cases() {
        let i4 = Matrix::<f64>::identity(4);
        assert!((spectral_radius(&i4).unwrap() - 1.0).abs() < 1e-12);
        let d = Matrix::diag(&[2.0f64, 0.5]);
        assert!((spectral_radius(&d).unwrap() - 2.0).abs() < 1e-12);
        assert!(spectral_radius(&Matrix::<f64>::zeros(2, 3)).is_err());
    }

    #[test]
    fn finite_diff_quadratic() {
        let g = finite_diff_gradient(|t: &[f64]| t.iter().map(|x| x * x).sum(), &[1.0, -2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] + 4.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_constant_and_tanh() {
        let g = finite_diff_gradient(|_: &[f64]| 3.0, &[0.1, 0.2, 0.3], 1e-5).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        let g = finite_diff_gradient(|t: &[f64]| t.iter().map(|x| x.tanh()).sum(), &[0.3], 1e-5).unwrap();
        let exact = 1.0 - 0.3f64.tanh().powi(2);
        assert!((g[0] - exact).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_reports_coordinate() {
        let err = finite_diff_gradient(|t: &[f64]| if t[1] > 0.5 { f64::NAN } else { 0.0 }, &[0.0, 0.5], 1e-3)
            .unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }

    #[test]
    fn rectifier_subgradient_at_zero() {
        assert_eq!(relu_grad(0.0f64), 0.0);
        assert_eq!(relu(-1.0f64), 0.0);
        assert_eq!(Activation::Rectifier.apply(2.0f64), 2.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-16);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in proptest::collection::vec(-50.0f64..50.0, 1..100)) {
            let p = softmax(&v).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn softmax_shift_invariant(v in proptest::collection::vec(-20.0f64..20.0, 1..50), c in -100.0f64..100.0) {
            let p = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
