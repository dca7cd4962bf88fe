//! Small dense linear algebra: symmetric eigendecomposition, Cholesky, one-sided
//! Jacobi SVD and Bunch-Kaufman LDLᵀ with iterative refinement.

use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Copy> Mat<S> {
    pub fn map<T>(&self, f: impl Fn(S) -> T) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }
}

impl<S: Real> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    pub fn diag(d: &[S]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == S::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let row = &self.data[i * self.cols..(i + 1) * self.cols];
                row.iter()
                    .zip(v)
                    .fold(S::zero(), |acc, (a, b)| acc + *a * *b)
            })
            .collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: S) -> Self {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| *v * s).collect(),
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    /// (M + Mᵀ)/2.
    pub fn symmetrize(&self) -> Self {
        let half = S::lit(0.5);
        self.add(&self.transpose()).scale(half)
    }

    pub fn trace(&self) -> S {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius inner product Tr(AᵀB).
    pub fn dot(&self, other: &Self) -> S {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| *a * *b)
            .sum()
    }

    pub fn norm_fro(&self) -> S {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    /// Outer product u vᵀ.
    pub fn outer(u: &[S], v: &[S]) -> Self {
        let mut m = Self::zeros(u.len(), v.len());
        for (i, a) in u.iter().enumerate() {
            for (j, b) in v.iter().enumerate() {
                m[(i, j)] = *a * *b;
            }
        }
        m
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn cast<T: Real>(&self) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::lit(v.to_f64_lossy())).collect(),
        }
    }
}

impl<S> std::ops::Index<(usize, usize)> for Mat<S> {
    type Output = S;
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> std::ops::IndexMut<(usize, usize)> for Mat<S> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

pub fn norm2<S: Real>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

pub fn norm_inf<S: Real>(a: &[S]) -> S {
    a.iter().fold(S::zero(), |m, v| m.max(v.abs()))
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
/// Returns eigenvalues in ascending order and the matching eigenvectors as columns.
pub fn sym_eig<S: Real>(a: &Mat<S>) -> (Vec<S>, Mat<S>) {
    assert!(a.is_square());
    let n = a.rows;
    let mut m = a.symmetrize();
    let mut v = Mat::identity(n);
    let two = S::lit(2.0);
    for _sweep in 0..100 {
        let mut off = S::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off = off + m[(i, j)] * m[(i, j)];
            }
        }
        let diag: S = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
        if off <= S::min_positive_value() || off.sqrt() <= S::eps() * S::eps() * diag.sqrt() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == S::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let t = if theta == S::zero() { S::one() } else { t };
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = S::zero();
                m[(q, p)] = S::zero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(i, i)]
            .partial_cmp(&m[(j, j)])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vecs = Mat::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vecs[(k, new)] = v[(k, old)];
        }
    }
    (vals, vecs)
}

pub fn min_eig<S: Real>(a: &Mat<S>) -> S {
    if a.rows == 0 {
        return S::infinity();
    }
    sym_eig(a).0[0]
}

/// Lower Cholesky factor, `None` when the matrix is not numerically positive definite.
pub fn cholesky<S: Real>(a: &Mat<S>) -> Option<Mat<S>> {
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d = d - l[(j, k)] * l[(j, k)];
        }
        if !(d > S::zero()) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// One-sided Jacobi SVD of a square matrix: `a = U diag(s) Vᵀ`.
pub fn svd_square<S: Real>(a: &Mat<S>) -> (Mat<S>, Vec<S>, Mat<S>) {
    assert!(a.is_square());
    let n = a.rows;
    let mut u = a.clone();
    let mut v = Mat::identity(n);
    let two = S::lit(2.0);
    let tol = S::eps();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (S::zero(), S::zero(), S::zero());
                for k in 0..n {
                    alpha = alpha + u[(k, p)] * u[(k, p)];
                    beta = beta + u[(k, q)] * u[(k, q)];
                    gamma = gamma + u[(k, p)] * u[(k, q)];
                }
                if gamma == S::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (two * gamma);
                let t = zeta.signum() / (zeta.abs() + (S::one() + zeta * zeta).sqrt());
                let t = if zeta == S::zero() { S::one() } else { t };
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let ukp = u[(k, p)];
                    let ukq = u[(k, q)];
                    u[(k, p)] = c * ukp - s * ukq;
                    u[(k, q)] = s * ukp + c * ukq;
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv = vec![S::zero(); n];
    for j in 0..n {
        let nrm = (0..n).map(|k| u[(k, j)] * u[(k, j)]).sum::<S>().sqrt();
        sv[j] = nrm;
        if nrm > S::zero() {
            for k in 0..n {
                u[(k, j)] = u[(k, j)] / nrm;
            }
        }
    }
    (u, sv, v)
}

/// Solves `L x = b` for lower triangular `L`.
pub fn solve_lower<S: Real>(l: &Mat<S>, b: &[S]) -> Vec<S> {
    let n = l.rows;
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s = s - l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

#[derive(Clone, Copy, Debug)]
enum Pivot {
    One,
    Two,
}

/// Bunch-Kaufman factorization `P A Pᵀ = L D Lᵀ` of a symmetric indefinite matrix.
#[derive(Clone, Debug)]
pub struct LdlFactor<S> {
    n: usize,
    l: Mat<S>,
    d: Vec<[S; 4]>,
    pivots: Vec<Pivot>,
    swaps: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingularMatrix;

impl<S: Real> LdlFactor<S> {
    pub fn new(a: &Mat<S>) -> Result<Self, SingularMatrix> {
        assert!(a.is_square());
        let n = a.rows;
        let mut w = a.clone();
        let alpha = (S::one() + S::lit(17.0).sqrt()) / S::lit(8.0);
        let mut pivots = Vec::new();
        let mut d = Vec::new();
        let mut swaps = Vec::new();
        let mut k = 0;
        while k < n {
            let absakk = w[(k, k)].abs();
            let mut imax = k;
            let mut colmax = S::zero();
            for i in (k + 1)..n {
                let v = w[(i, k)].abs();
                if v > colmax {
                    colmax = v;
                    imax = i;
                }
            }
            if absakk.max(colmax) == S::zero() || !absakk.max(colmax).is_finite() {
                return Err(SingularMatrix);
            }
            let (kp, two) = if absakk >= alpha * colmax {
                (k, false)
            } else {
                let mut rowmax = S::zero();
                for j in k..n {
                    if j != imax {
                        rowmax = rowmax.max(w[(imax, j)].abs());
                    }
                }
                if absakk * rowmax >= alpha * colmax * colmax {
                    (k, false)
                } else if w[(imax, imax)].abs() >= alpha * rowmax {
                    (imax, false)
                } else {
                    (imax, true)
                }
            };
            let kk = if two { k + 1 } else { k };
            if kp != kk {
                swap_sym(&mut w, kk, kp);
                swaps.push((kk, kp));
            } else {
                swaps.push((kk, kk));
            }
            if !two {
                let dkk = w[(k, k)];
                if dkk == S::zero() {
                    return Err(SingularMatrix);
                }
                for i in (k + 1)..n {
                    let li = w[(i, k)] / dkk;
                    if li != S::zero() {
                        for j in (k + 1)..=i {
                            let upd = w[(i, j)] - li * w[(j, k)];
                            w[(i, j)] = upd;
                        }
                    }
                }
                for i in (k + 1)..n {
                    w[(i, k)] = w[(i, k)] / dkk;
                }
                mirror_lower(&mut w, k + 1);
                pivots.push(Pivot::One);
                d.push([dkk, S::zero(), S::zero(), S::zero()]);
                k += 1;
            } else {
                let a11 = w[(k, k)];
                let a21 = w[(k + 1, k)];
                let a22 = w[(k + 1, k + 1)];
                let det = a11 * a22 - a21 * a21;
                if det == S::zero() {
                    return Err(SingularMatrix);
                }
                let (i11, i12, i22) = (a22 / det, -a21 / det, a11 / det);
                let mut ls = Vec::with_capacity(n);
                for i in (k + 2)..n {
                    let w1 = w[(i, k)];
                    let w2 = w[(i, k + 1)];
                    ls.push((w1 * i11 + w2 * i12, w1 * i12 + w2 * i22));
                }
                for i in (k + 2)..n {
                    let (l1, l2) = ls[i - k - 2];
                    for j in (k + 2)..=i {
                        let upd = w[(i, j)] - l1 * w[(j, k)] - l2 * w[(j, k + 1)];
                        w[(i, j)] = upd;
                    }
                }
                for i in (k + 2)..n {
                    let (l1, l2) = ls[i - k - 2];
                    w[(i, k)] = l1;
                    w[(i, k + 1)] = l2;
                }
                w[(k + 1, k)] = S::zero();
                mirror_lower(&mut w, k + 2);
                pivots.push(Pivot::Two);
                d.push([a11, a21, a21, a22]);
                k += 2;
            }
        }
        Ok(LdlFactor {
            n,
            l: w,
            d,
            pivots,
            swaps,
        })
    }

    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let n = self.n;
        let mut x = b.to_vec();
        for &(a, b2) in &self.swaps {
            x.swap(a, b2);
        }
        // forward: unit lower L
        let mut k = 0;
        for p in &self.pivots {
            let width = match p {
                Pivot::One => 1,
                Pivot::Two => 2,
            };
            for c in k..k + width {
                let xc = x[c];
                if xc != S::zero() {
                    for i in (k + width)..n {
                        x[i] = x[i] - self.l[(i, c)] * xc;
                    }
                }
            }
            k += width;
        }
        // diagonal
        let mut k = 0;
        for (p, dd) in self.pivots.iter().zip(&self.d) {
            match p {
                Pivot::One => {
                    x[k] = x[k] / dd[0];
                    k += 1;
                }
                Pivot::Two => {
                    let det = dd[0] * dd[3] - dd[1] * dd[2];
                    let (b1, b2) = (x[k], x[k + 1]);
                    x[k] = (dd[3] * b1 - dd[1] * b2) / det;
                    x[k + 1] = (dd[0] * b2 - dd[2] * b1) / det;
                    k += 2;
                }
            }
        }
        // backward: Lᵀ
        let mut starts = Vec::with_capacity(self.pivots.len());
        let mut k = 0;
        for p in &self.pivots {
            let width = match p {
                Pivot::One => 1,
                Pivot::Two => 2,
            };
            starts.push((k, width));
            k += width;
        }
        for &(k, width) in starts.iter().rev() {
            for c in k..k + width {
                let mut s = x[c];
                for i in (k + width)..n {
                    s = s - self.l[(i, c)] * x[i];
                }
                x[c] = s;
            }
        }
        for &(a, b2) in self.swaps.iter().rev() {
            x.swap(a, b2);
        }
        x
    }

    /// Solve followed by `passes` rounds of iterative refinement against `a`.
    pub fn solve_refined(&self, a: &Mat<S>, b: &[S], passes: usize) -> Vec<S> {
        let mut x = self.solve(b);
        for _ in 0..passes {
            let ax = a.matvec(&x);
            let r: Vec<S> = b.iter().zip(&ax).map(|(bi, ai)| *bi - *ai).collect();
            let dx = self.solve(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi = *xi + *di;
            }
        }
        x
    }
}

fn swap_sym<S: Copy>(w: &mut Mat<S>, a: usize, b: usize) {
    if a == b {
        return;
    }
    let n = w.rows;
    for j in 0..n {
        w.data.swap(a * n + j, b * n + j);
    }
    for i in 0..n {
        w.data.swap(i * n + a, i * n + b);
    }
}

fn mirror_lower<S: Copy>(w: &mut Mat<S>, from: usize) {
    let n = w.rows;
    for i in from..n {
        for j in from..i {
            w.data[j * n + i] = w.data[i * n + j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sym_from(vals: &[f64], n: usize) -> Mat<f64> {
        let mut m = Mat::zeros(n, n);
        let mut it = vals.iter();
        for i in 0..n {
            for j in i..n {
                let v = *it.next().unwrap();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn eig_of_known_matrix() {
        let m: Mat<f64> = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let (vals, _) = sym_eig(&m);
        assert!((vals[0] - 1.0).abs() < 1e-14);
        assert!((vals[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn ldl_needs_two_by_two_pivot() {
        let m: Mat<f64> = Mat::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 2.0],
            vec![0.0, 2.0, 1.0],
        ]);
        let f = LdlFactor::new(&m).unwrap();
        let b = vec![1.0f64, 2.0, 3.0];
        let x = f.solve(&b);
        let r = m.matvec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn eig_reconstructs(vals in proptest::collection::vec(-5.0f64..5.0, 15)) {
            let m = sym_from(&vals, 5);
            let (ev, v) = sym_eig(&m);
            let rec = v.matmul(&Mat::diag(&ev)).matmul(&v.transpose());
            prop_assert!(rec.sub(&m).max_abs() < 1e-10);
            prop_assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn ldl_solves_indefinite(vals in proptest::collection::vec(-5.0f64..5.0, 28), rhs in proptest::collection::vec(-1.0f64..1.0, 7)) {
            let m = sym_from(&vals, 7);
            let (ev, _) = sym_eig(&m);
            prop_assume!(ev.iter().all(|e| e.abs() > 1e-3));
            let f = LdlFactor::new(&m).unwrap();
            let x = f.solve_refined(&m, &rhs, 2);
            let r = m.matvec(&x);
            for (ri, bi) in r.iter().zip(&rhs) {
                prop_assert!((ri - bi).abs() < 1e-8);
            }
        }

        #[test]
        fn svd_reconstructs(vals in proptest::collection::vec(-3.0f64..3.0, 16)) {
            let a = Mat { rows: 4, cols: 4, data: vals };
            let (u, s, v) = svd_square(&a);
            let rec = u.matmul(&Mat::diag(&s)).matmul(&v.transpose());
            prop_assert!(rec.sub(&a).max_abs() < 1e-10);
        }

        #[test]
        fn cholesky_of_gram(vals in proptest::collection::vec(-3.0f64..3.0, 16)) {
            let b = Mat { rows: 4, cols: 4, data: vals };
            let g = b.matmul(&b.transpose()).add(&Mat::identity(4));
            let l = cholesky(&g).unwrap();
            prop_assert!(l.matmul(&l.transpose()).sub(&g).max_abs() < 1e-10);
        }
    }
}
