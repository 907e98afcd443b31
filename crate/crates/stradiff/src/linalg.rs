//! Row-major wrappers over the system BLAS/LAPACK (OpenBLAS).
//!
//! Fortran routines are column-major; a row-major buffer read as column-major
//! is the transpose, so every wrapper maps its call accordingly. Each wrapper
//! is tested against a naive reference implementation.

use crate::error::{Result, StradiffError};
use crate::tensor::{Shape, Tensor};
use std::os::raw::{c_char, c_int};

#[link(name = "openblas")]
extern "C" {
    fn dgemm_(
        transa: *const c_char, transb: *const c_char,
        m: *const c_int, n: *const c_int, k: *const c_int,
        alpha: *const f64, a: *const f64, lda: *const c_int,
        b: *const f64, ldb: *const c_int,
        beta: *const f64, c: *mut f64, ldc: *const c_int,
    );
    fn dgemv_(
        trans: *const c_char, m: *const c_int, n: *const c_int,
        alpha: *const f64, a: *const f64, lda: *const c_int,
        x: *const f64, incx: *const c_int,
        beta: *const f64, y: *mut f64, incy: *const c_int,
    );
    fn dger_(
        m: *const c_int, n: *const c_int, alpha: *const f64,
        x: *const f64, incx: *const c_int,
        y: *const f64, incy: *const c_int,
        a: *mut f64, lda: *const c_int,
    );
    fn dtrsv_(
        uplo: *const c_char, trans: *const c_char, diag: *const c_char,
        n: *const c_int, a: *const f64, lda: *const c_int,
        x: *mut f64, incx: *const c_int,
    );
    fn dtrsm_(
        side: *const c_char, uplo: *const c_char, transa: *const c_char, diag: *const c_char,
        m: *const c_int, n: *const c_int, alpha: *const f64,
        a: *const f64, lda: *const c_int,
        b: *mut f64, ldb: *const c_int,
    );
    fn dtrmm_(
        side: *const c_char, uplo: *const c_char, transa: *const c_char, diag: *const c_char,
        m: *const c_int, n: *const c_int, alpha: *const f64,
        a: *const f64, lda: *const c_int,
        b: *mut f64, ldb: *const c_int,
    );
    fn dpotrf_(uplo: *const c_char, n: *const c_int, a: *mut f64, lda: *const c_int, info: *mut c_int);
    fn dpotri_(uplo: *const c_char, n: *const c_int, a: *mut f64, lda: *const c_int, info: *mut c_int);
    fn dgesvd_(
        jobu: *const c_char, jobvt: *const c_char,
        m: *const c_int, n: *const c_int,
        a: *mut f64, lda: *const c_int,
        s: *mut f64,
        u: *mut f64, ldu: *const c_int,
        vt: *mut f64, ldvt: *const c_int,
        work: *mut f64, lwork: *const c_int, info: *mut c_int,
    );
}

const N: c_char = b'N' as c_char;
const T: c_char = b'T' as c_char;
const U: c_char = b'U' as c_char;
const ONE: c_int = 1;

fn dims(t: &Tensor) -> (usize, usize) {
    match t.shape {
        Shape::Matrix(r, c) => (r, c),
        _ => panic!("expected matrix, got {}", t.shape),
    }
}

/// C = op(A)·op(B) with row-major operands.
pub fn matmul_tt(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    let (ar, ac) = dims(a);
    let (br, bc) = dims(b);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(k, k2, "matmul inner dims: {} vs {}", k, k2);
    assert!(m > 0 && n > 0 && k > 0);
    let mut c = vec![0.0; m * n];
    // Row-major product computed as the column-major product of the
    // transposed views with the operand order swapped.
    let (alpha, beta) = (1.0, 0.0);
    unsafe {
        dgemm_(
            if tb { &T } else { &N },
            if ta { &T } else { &N },
            &(n as c_int), &(m as c_int), &(k as c_int),
            &alpha, b.data.as_ptr(), &(bc as c_int),
            a.data.as_ptr(), &(ac as c_int),
            &beta, c.as_mut_ptr(), &(n as c_int),
        );
    }
    Tensor::matrix(m, n, c)
}

/// C = A·B.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    matmul_tt(a, false, b, false)
}

/// y = A·x (transpose=false) or Aᵀ·x (transpose=true).
pub fn matvec(a: &Tensor, x: &Tensor, transpose: bool) -> Tensor {
    let (ar, ac) = dims(a);
    let (xin, yout) = if transpose { (ar, ac) } else { (ac, ar) };
    assert_eq!(x.shape, Shape::Vector(xin), "matvec operand mismatch");
    let mut y = vec![0.0; yout];
    let (alpha, beta) = (1.0, 0.0);
    unsafe {
        dgemv_(
            if transpose { &N } else { &T },
            &(ac as c_int), &(ar as c_int),
            &alpha, a.data.as_ptr(), &(ac as c_int),
            x.data.as_ptr(), &ONE, &beta, y.as_mut_ptr(), &ONE,
        );
    }
    Tensor::vector(y)
}

/// A += alpha·x·yᵀ (rank-1 update of a row-major matrix).
pub fn ger(alpha: f64, x: &Tensor, y: &Tensor, a: &mut Tensor) {
    let (ar, ac) = dims(a);
    assert_eq!(x.shape, Shape::Vector(ar));
    assert_eq!(y.shape, Shape::Vector(ac));
    unsafe {
        dger_(
            &(ac as c_int), &(ar as c_int), &alpha,
            y.data.as_ptr(), &ONE, x.data.as_ptr(), &ONE,
            a.data.as_mut_ptr(), &(ac as c_int),
        );
    }
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
///
/// Returns `L` with explicit zeros above the diagonal and `K = L·Lᵀ`.
pub fn cholesky_lower(k: &Tensor) -> Result<Tensor> {
    let (r, c) = dims(k);
    assert_eq!(r, c, "cholesky needs a square matrix");
    let mut l = k.clone();
    let mut info: c_int = 0;
    // Column-major upper triangle of the buffer is the row-major lower one.
    unsafe { dpotrf_(&U, &(r as c_int), l.data.as_mut_ptr(), &(r as c_int), &mut info) };
    if info > 0 {
        return Err(StradiffError::NotPositiveDefinite { pivot: info as usize - 1 });
    }
    assert_eq!(info, 0, "dpotrf illegal argument {info}");
    for i in 0..r {
        for j in i + 1..r {
            l.data[i * c + j] = 0.0;
        }
    }
    Ok(l)
}

/// Solve L·x = b (transpose=false) or Lᵀ·x = b (transpose=true), L lower triangular.
pub fn tri_solve_lower_vec(l: &Tensor, b: &Tensor, transpose: bool) -> Tensor {
    let (r, c) = dims(l);
    assert_eq!(r, c);
    assert_eq!(b.shape, Shape::Vector(r));
    let mut x = b.clone();
    unsafe {
        dtrsv_(
            &U, if transpose { &N } else { &T }, &N,
            &(r as c_int), l.data.as_ptr(), &(r as c_int),
            x.data.as_mut_ptr(), &ONE,
        );
    }
    x
}

/// Solve op(L)·X = B for X (left solve), L lower triangular, B row-major.
pub fn tri_solve_lower_mat_left(l: &Tensor, b: &Tensor, transpose: bool) -> Tensor {
    let (r, c) = dims(l);
    assert_eq!(r, c);
    let (br, bc) = dims(b);
    assert_eq!(br, r);
    let mut x = b.clone();
    let alpha = 1.0;
    unsafe {
        dtrsm_(
            &(b'R' as c_char), &U, if transpose { &T } else { &N }, &N,
            &(bc as c_int), &(br as c_int), &alpha,
            l.data.as_ptr(), &(r as c_int),
            x.data.as_mut_ptr(), &(bc as c_int),
        );
    }
    x
}

/// Solve X·op(L) = B for X (right solve), L lower triangular, B row-major.
pub fn tri_solve_lower_mat_right(l: &Tensor, b: &Tensor, transpose: bool) -> Tensor {
    let (r, c) = dims(l);
    assert_eq!(r, c);
    let (br, bc) = dims(b);
    assert_eq!(bc, r);
    let mut x = b.clone();
    let alpha = 1.0;
    unsafe {
        dtrsm_(
            &(b'L' as c_char), &U, if transpose { &T } else { &N }, &N,
            &(bc as c_int), &(br as c_int), &alpha,
            l.data.as_ptr(), &(r as c_int),
            x.data.as_mut_ptr(), &(bc as c_int),
        );
    }
    x
}

/// B := op(L)·B, L lower triangular (left triangular multiply).
pub fn trmm_lower_left(l: &Tensor, b: &Tensor, transpose: bool) -> Tensor {
    let (r, c) = dims(l);
    assert_eq!(r, c);
    let (br, bc) = dims(b);
    assert_eq!(br, r);
    let mut x = b.clone();
    let alpha = 1.0;
    unsafe {
        dtrmm_(
            &(b'R' as c_char), &U, if transpose { &T } else { &N }, &N,
            &(bc as c_int), &(br as c_int), &alpha,
            l.data.as_ptr(), &(r as c_int),
            x.data.as_mut_ptr(), &(bc as c_int),
        );
    }
    x
}

/// Full symmetric inverse of K = L·Lᵀ from its lower Cholesky factor.
pub fn spd_inverse_from_chol(l: &Tensor) -> Tensor {
    let (r, c) = dims(l);
    assert_eq!(r, c);
    let mut inv = l.clone();
    let mut info: c_int = 0;
    unsafe { dpotri_(&U, &(r as c_int), inv.data.as_mut_ptr(), &(r as c_int), &mut info) };
    assert_eq!(info, 0, "dpotri failed with info {info}");
    // dpotri filled the row-major lower triangle; mirror it.
    for i in 0..r {
        for j in i + 1..r {
            inv.data[i * c + j] = inv.data[j * c + i];
        }
    }
    inv
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigenvalues_small(a: &Tensor) -> Vec<f64> {
    let (r, c) = dims(a);
    assert_eq!(r, c);
    assert!(r <= 16, "jacobi eigensolver is for small matrices");
    let n = r;
    let mut m: Vec<f64> = a.data.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cos = 1.0 / (t * t + 1.0).sqrt();
                let sin = t * cos;
                for i in 0..n {
                    let aip = m[i * n + p];
                    let aiq = m[i * n + q];
                    m[i * n + p] = cos * aip - sin * aiq;
                    m[i * n + q] = sin * aip + cos * aiq;
                }
                for j in 0..n {
                    let apj = m[p * n + j];
                    let aqj = m[q * n + j];
                    m[p * n + j] = cos * apj - sin * aqj;
                    m[q * n + j] = sin * apj + cos * aqj;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

/// Singular values of a rectangular matrix, descending.
pub fn singular_values(a: &Tensor) -> Vec<f64> {
    let (r, c) = dims(a);
    // The row-major buffer viewed column-major is Aᵀ, which has the same
    // singular values, so pass swapped dimensions.
    let m = c as c_int;
    let n = r as c_int;
    let mut buf = a.data.clone();
    let mut s = vec![0.0f64; r.min(c)];
    let mut info: c_int = 0;
    let mut query = [0.0f64];
    let neg1: c_int = -1;
    unsafe {
        dgesvd_(
            &N, &N, &m, &n, buf.as_mut_ptr(), &m, s.as_mut_ptr(),
            std::ptr::null_mut(), &ONE, std::ptr::null_mut(), &ONE,
            query.as_mut_ptr(), &neg1, &mut info,
        );
        assert_eq!(info, 0, "SVD workspace query failed: info={info}");
        let lwork = query[0] as c_int;
        let mut work = vec![0.0f64; lwork as usize];
        dgesvd_(
            &N, &N, &m, &n, buf.as_mut_ptr(), &m, s.as_mut_ptr(),
            std::ptr::null_mut(), &ONE, std::ptr::null_mut(), &ONE,
            work.as_mut_ptr(), &lwork, &mut info,
        );
        assert_eq!(info, 0, "SVD failed to converge: info={info}");
    }
    s
}

/// Condition number (2-norm) of a rectangular matrix.
pub fn condition_number(a: &Tensor) -> f64 {
    let s = singular_values(a);
    let max = s[0];
    let min = *s.last().unwrap();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
