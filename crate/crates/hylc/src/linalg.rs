//! Small dense vectors and matrices: norms, a pivoted solver and an
//! eigenvalue routine for the Poincaré-map Jacobians (n ≤ 8).

use num_complex::Complex;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn all_finite<T: Scalar>(a: &[T]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidInput("ragged matrix rows".into()));
        }
        Ok(Self { rows: r, cols: c, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[T]) {
        for (i, &x) in v.iter().enumerate() {
            self[(i, j)] = x;
        }
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).fold(T::zero(), |acc, i| acc + self[(i, i)])
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    /// Solves `A x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[T]) -> Option<Vec<T>> {
        let n = self.rows;
        if !self.is_square() || b.len() != n {
            return None;
        }
        let mut a = self.clone();
        let mut x = b.to_vec();
        let scale = a.max_abs().max(T::min_positive_value());
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| {
                a[(i, k)].abs().partial_cmp(&a[(j, k)].abs()).unwrap_or(std::cmp::Ordering::Equal)
            })?;
            if a[(p, k)].abs() <= scale * T::epsilon() * T::lit(16.0) {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(p * n + j, k * n + j);
                }
                x.swap(p, k);
            }
            for i in k + 1..n {
                let f = a[(i, k)] / a[(k, k)];
                for j in k..n {
                    let v = a[(k, j)];
                    a[(i, j)] = a[(i, j)] - f * v;
                }
                x[i] = x[i] - f * x[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..n {
                s = s - a[(k, j)] * x[j];
            }
            x[k] = s / a[(k, k)];
        }
        Some(x)
    }

    /// Determinant via elimination (zero for singular input).
    pub fn det(&self) -> T {
        let n = self.rows;
        let mut a = self.clone();
        let mut det = T::one();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| {
                    a[(i, k)].abs().partial_cmp(&a[(j, k)].abs()).unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(k);
            if a[(p, k)] == T::zero() {
                return T::zero();
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(p * n + j, k * n + j);
                }
                det = -det;
            }
            det = det * a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / a[(k, k)];
                for j in k..n {
                    let v = a[(k, j)];
                    a[(i, j)] = a[(i, j)] - f * v;
                }
            }
        }
        det
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Scalar> Serialize for Matrix<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

/// Largest modulus in a spectrum.
pub fn spectral_radius<T: Scalar>(eigs: &[Complex<T>]) -> T {
    eigs.iter().fold(T::zero(), |acc, z| acc.max(z.norm()))
}

/// All eigenvalues of a square matrix with at most 8 rows.
///
/// Closed-form characteristic roots for n ≤ 2; otherwise Householder
/// reduction to Hessenberg form followed by Francis double-shift QR.
/// Output is sorted by decreasing modulus, then decreasing real part.
pub fn eigenvalues<T: Scalar>(m: &Matrix<T>) -> Result<Vec<Complex<T>>> {
    if !m.is_square() || m.rows() == 0 || m.rows() > 8 {
        return Err(Error::InvalidInput(format!(
            "eigenvalues need a square matrix with 1..=8 rows, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.data.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    let mut eigs = match m.rows() {
        1 => vec![Complex::new(m[(0, 0)], T::zero())],
        2 => eig2(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]),
        _ => {
            let mut a = m.clone();
            hessenberg(&mut a);
            hqr(&mut a)?
        }
    };
    eigs.sort_by(|x, y| {
        y.norm()
            .partial_cmp(&x.norm())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y.re.partial_cmp(&x.re).unwrap_or(std::cmp::Ordering::Equal))
            .then(y.im.partial_cmp(&x.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(eigs)
}

fn eig2<T: Scalar>(a: T, b: T, c: T, d: T) -> Vec<Complex<T>> {
    let half = T::lit(0.5);
    let mean = half * (a + d);
    // (a-d)^2/4 + bc avoids cancellation in tr^2/4 - det
    let disc = half * (a - d) * half * (a - d) + b * c;
    if disc >= T::zero() {
        let r = disc.sqrt();
        // larger root first, smaller one via the product to limit cancellation
        let big = if mean >= T::zero() { mean + r } else { mean - r };
        let det = a * d - b * c;
        let small = if big != T::zero() { det / big } else { mean - r };
        vec![Complex::new(big, T::zero()), Complex::new(small, T::zero())]
    } else {
        let r = (-disc).sqrt();
        vec![Complex::new(mean, r), Complex::new(mean, -r)]
    }
}

fn hessenberg<T: Scalar>(a: &mut Matrix<T>) {
    let n = a.rows();
    let two = T::lit(2.0);
    for k in 0..n.saturating_sub(2) {
        let mut v: Vec<T> = (k + 1..n).map(|i| a[(i, k)]).collect();
        let alpha = norm(&v);
        if alpha == T::zero() {
            continue;
        }
        let alpha = if v[0] > T::zero() { -alpha } else { alpha };
        v[0] = v[0] - alpha;
        let vn = norm(&v);
        if vn == T::zero() {
            continue;
        }
        for x in &mut v {
            *x = *x / vn;
        }
        for j in 0..n {
            let s = (0..v.len()).fold(T::zero(), |acc, i| acc + v[i] * a[(k + 1 + i, j)]);
            for i in 0..v.len() {
                a[(k + 1 + i, j)] = a[(k + 1 + i, j)] - two * v[i] * s;
            }
        }
        for i in 0..n {
            let s = (0..v.len()).fold(T::zero(), |acc, j| acc + a[(i, k + 1 + j)] * v[j]);
            for j in 0..v.len() {
                a[(i, k + 1 + j)] = a[(i, k + 1 + j)] - two * s * v[j];
            }
        }
        for i in k + 2..n {
            a[(i, k)] = T::zero();
        }
    }
}

fn sign<T: Scalar>(a: T, b: T) -> T {
    if b >= T::zero() {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (EISPACK hqr layout).
fn hqr<T: Scalar>(a: &mut Matrix<T>) -> Result<Vec<Complex<T>>> {
    let n = a.rows() as isize;
    let at = |a: &Matrix<T>, i: isize, j: isize| a[(i as usize, j as usize)];
    let mut wr = vec![T::zero(); n as usize];
    let mut wi = vec![T::zero(); n as usize];
    let mut anorm = T::zero();
    for i in 0..n {
        for j in (i - 1).max(0)..n {
            anorm = anorm + at(a, i, j).abs();
        }
    }
    let mut nn = n - 1;
    let mut t = T::zero();
    let (mut p, mut q, mut r) = (T::zero(), T::zero(), T::zero());
    #[allow(unused_assignments)]
    let (mut x, mut y, mut z, mut w) = (T::zero(), T::zero(), T::zero(), T::zero());
    while nn >= 0 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 1 {
                let mut s = at(a, l - 1, l - 1).abs() + at(a, l, l).abs();
                if s == T::zero() {
                    s = anorm;
                }
                if at(a, l, l - 1).abs() + s == s {
                    a[(l as usize, (l - 1) as usize)] = T::zero();
                    break;
                }
                l -= 1;
            }
            x = at(a, nn, nn);
            if l == nn {
                wr[nn as usize] = x + t;
                wi[nn as usize] = T::zero();
                nn -= 1;
            } else {
                y = at(a, nn - 1, nn - 1);
                w = at(a, nn, nn - 1) * at(a, nn - 1, nn);
                if l == nn - 1 {
                    p = T::lit(0.5) * (y - x);
                    q = p * p + w;
                    z = q.abs().sqrt();
                    x = x + t;
                    if q >= T::zero() {
                        z = p + sign(z, p);
                        wr[(nn - 1) as usize] = x + z;
                        wr[nn as usize] = x + z;
                        if z != T::zero() {
                            wr[nn as usize] = x - w / z;
                        }
                        wi[(nn - 1) as usize] = T::zero();
                        wi[nn as usize] = T::zero();
                    } else {
                        wr[(nn - 1) as usize] = x + p;
                        wr[nn as usize] = x + p;
                        wi[(nn - 1) as usize] = -z;
                        wi[nn as usize] = z;
                    }
                    nn -= 2;
                } else {
                    if its == 60 {
                        return Err(Error::EigenNonConvergence);
                    }
                    if its == 10 || its == 20 || its == 40 {
                        // exceptional shift
                        t = t + x;
                        for i in 0..=nn {
                            a[(i as usize, i as usize)] = at(a, i, i) - x;
                        }
                        let s = at(a, nn, nn - 1).abs() + at(a, nn - 1, nn - 2).abs();
                        x = T::lit(0.75) * s;
                        y = x;
                        w = T::lit(-0.4375) * s * s;
                    }
                    its += 1;
                    let mut m = nn - 2;
                    while m >= l {
                        z = at(a, m, m);
                        r = x - z;
                        let s0 = y - z;
                        p = (r * s0 - w) / at(a, m + 1, m) + at(a, m, m + 1);
                        q = at(a, m + 1, m + 1) - z - r - s0;
                        r = at(a, m + 2, m + 1);
                        let s = p.abs() + q.abs() + r.abs();
                        p = p / s;
                        q = q / s;
                        r = r / s;
                        if m == l {
                            break;
                        }
                        let u = at(a, m, m - 1).abs() * (q.abs() + r.abs());
                        let v = p.abs() * (at(a, m - 1, m - 1).abs() + z.abs() + at(a, m + 1, m + 1).abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in m + 2..=nn {
                        a[(i as usize, (i - 2) as usize)] = T::zero();
                        if i != m + 2 {
                            a[(i as usize, (i - 3) as usize)] = T::zero();
                        }
                    }
                    let mut k = m;
                    while k < nn {
                        if k != m {
                            p = at(a, k, k - 1);
                            q = at(a, k + 1, k - 1);
                            r = T::zero();
                            if k != nn - 1 {
                                r = at(a, k + 2, k - 1);
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != T::zero() {
                                p = p / x;
                                q = q / x;
                                r = r / x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != T::zero() {
                            if k == m {
                                if l != m {
                                    a[(k as usize, (k - 1) as usize)] = -at(a, k, k - 1);
                                }
                            } else {
                                a[(k as usize, (k - 1) as usize)] = -s * x;
                            }
                            p = p + s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q = q / p;
                            r = r / p;
                            for j in k..=nn {
                                let (ku, k1, j_) = (k as usize, (k + 1) as usize, j as usize);
                                p = a[(ku, j_)] + q * a[(k1, j_)];
                                if k != nn - 1 {
                                    let k2 = (k + 2) as usize;
                                    p = p + r * a[(k2, j_)];
                                    a[(k2, j_)] = a[(k2, j_)] - p * z;
                                }
                                a[(k1, j_)] = a[(k1, j_)] - p * y;
                                a[(ku, j_)] = a[(ku, j_)] - p * x;
                            }
                            let mmin = if nn < k + 3 { nn } else { k + 3 };
                            for i in l..=mmin {
                                let (iu, ku, k1) = (i as usize, k as usize, (k + 1) as usize);
                                p = x * a[(iu, ku)] + y * a[(iu, k1)];
                                if k != nn - 1 {
                                    let k2 = (k + 2) as usize;
                                    p = p + z * a[(iu, k2)];
                                    a[(iu, k2)] = a[(iu, k2)] - p * r;
                                }
                                a[(iu, k1)] = a[(iu, k1)] - p * q;
                                a[(iu, ku)] = a[(iu, ku)] - p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if l >= nn - 1 {
                break;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).map(|(re, im)| Complex::new(re, im)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(z: Complex<f64>, re: f64, im: f64, tol: f64) -> bool {
        (z.re - re).abs() <= tol && (z.im - im).abs() <= tol
    }

    #[test]
    fn diagonal_two_by_two() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, -0.25]]).unwrap();
        let e = eigenvalues(&m).unwrap();
        assert!(close(e[0], -0.25, 0.0, 1e-15));
        assert!(close(e[1], 0.0, 0.0, 1e-15));
    }

    #[test]
    fn rotation_generator() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let e = eigenvalues(&m).unwrap();
        assert!(close(e[0], 0.0, 1.0, 1e-15));
        assert!(close(e[1], 0.0, -1.0, 1e-15));
    }

    #[test]
    fn companion_matrix_roots() {
        // (x-1)(x-2)(x-3)(x+0.5) = x^4 - 5.5x^3 + 8x^2 - 0.5x - 3
        let m = Matrix::from_rows(&[
            vec![5.5, -8.0, 0.5, 3.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ])
        .unwrap();
        let e = eigenvalues(&m).unwrap();
        let want = [3.0, 2.0, 1.0, -0.5];
        for (z, w) in e.iter().zip(want) {
            assert!(close(*z, w, 0.0, 1e-10), "{z} vs {w}");
        }
    }

    #[test]
    fn complex_pair_in_three_by_three() {
        // block diag(rotation scaled by 2, 0.5) then similarity by a dense matrix
        let d = Matrix::from_rows(&[vec![0.0, 2.0, 0.0], vec![-2.0, 0.0, 0.0], vec![0.0, 0.0, 0.5]]).unwrap();
        let s = Matrix::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 3.0], vec![1.0, 0.0, 1.0]]).unwrap();
        // s^-1 via solving columns
        let mut sinv = Matrix::zeros(3, 3);
        for j in 0..3 {
            let mut e = vec![0.0; 3];
            e[j] = 1.0;
            sinv.set_col(j, &s.solve(&e).unwrap());
        }
        let mut m = Matrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        acc += s[(i, k)] * d[(k, l)] * sinv[(l, j)];
                    }
                }
                m[(i, j)] = acc;
            }
        }
        let e = eigenvalues(&m).unwrap();
        assert!(close(e[0], 0.0, 2.0, 1e-10), "{e:?}");
        assert!(close(e[1], 0.0, -2.0, 1e-10), "{e:?}");
        assert!(close(e[2], 0.5, 0.0, 1e-10), "{e:?}");
    }

    #[test]
    fn solve_and_det() {
        let m: Matrix<f64> = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let x = m.solve(&[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 1.4).abs() < 1e-15);
        assert!((m.det() - 5.0).abs() < 1e-14);
        let sing = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(sing.solve(&[1.0, 1.0]).is_none());
    }

    #[test]
    fn rejects_large_or_ragged() {
        assert!(eigenvalues(&Matrix::<f64>::identity(9)).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
