//! Dense lower-triangular factorization and the handful of triangular
//! routines the model gradients need. Matrices here are small (at most a
//! few hundred rows) and row-major contiguous; hot loops run on raw
//! slices so the inner kernels stay contiguous and vectorizable.

use ndarray::Array2;

use crate::error::{Error, Result};

fn slice_of(m: &Array2<f64>) -> &[f64] {
    m.as_slice().expect("matrices are standard row-major")
}

/// Dot product with four accumulators so the reduction vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let k = 4 * c;
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    let mut s = (s0 + s2) + (s1 + s3);
    for k in 4 * chunks..n {
        s += a[k] * b[k];
    }
    s
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// Fails with the index of the first non-positive pivot.
pub fn cholesky_lower(m: &Array2<f64>) -> Result<Array2<f64>> {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let a = slice_of(m);
    let mut l = vec![0.0; n * n];
    let mut inv_diag = vec![0.0; n];
    for i in 0..n {
        for j in 0..=i {
            // dot product of two finished row prefixes
            let s = a[i * n + j] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: j });
                }
                let d = s.sqrt();
                l[i * n + j] = d;
                inv_diag[j] = 1.0 / d;
            } else {
                l[i * n + j] = s * inv_diag[j];
            }
        }
    }
    Ok(Array2::from_shape_vec((n, n), l).expect("square"))
}

/// y = L x for lower-triangular L.
pub fn tri_lower_matvec(l: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let ls = slice_of(l);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let row = &ls[i * n..i * n + i + 1];
        let mut s = 0.0;
        for k in 0..=i {
            s += row[k] * x[k];
        }
        y[i] = s;
    }
    y
}

/// y = L^T x for lower-triangular L.
pub fn tri_lower_transpose_matvec(l: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let ls = slice_of(l);
    let mut y = vec![0.0; n];
    for i in 0..n {
        // row i of L scaled by x[i] accumulates into y[0..=i]
        let row = &ls[i * n..i * n + i + 1];
        let xi = x[i];
        for k in 0..=i {
            y[k] += row[k] * xi;
        }
    }
    y
}

/// B := B L^{-1} in place (solve X L = B), rows handled independently.
/// The update per pivot is an axpy over contiguous row prefixes.
fn solve_right_lower_inplace(l: &[f64], n: usize, b: &mut [f64]) {
    for j in (0..n).rev() {
        let inv_piv = 1.0 / l[j * n + j];
        let lrow = &l[j * n..j * n + j];
        for i in 0..n {
            let row = &mut b[i * n..i * n + j + 1];
            let x = row[j] * inv_piv;
            row[j] = x;
            for k in 0..j {
                row[k] -= x * lrow[k];
            }
        }
    }
}

fn transpose_square(a: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..i {
            a.swap(i * n + j, j * n + i);
        }
    }
}

/// Reverse-mode sensitivity of a Cholesky factorization.
///
/// Given K = L L^T and the adjoint `l_bar` of L (lower triangle), returns
/// the symmetric adjoint of K so that df = sum_ij K_bar[i,j] dK[i,j] for
/// symmetric perturbations dK. Uses
/// K_bar = 1/2 L^{-T} (Phi(L^T L_bar) + Phi(L^T L_bar)^T) L^{-1}
/// where Phi keeps the lower triangle and halves the diagonal.
#[cfg_attr(not(test), allow(dead_code))] // reference path; the rank-one case below is what runs
pub fn cholesky_reverse(l: &Array2<f64>, l_bar: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let ls = slice_of(l);
    let lb = slice_of(l_bar);
    // lower triangle of T = L^T L_bar
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in i..n {
                acc += ls[k * n + i] * lb[k * n + j];
            }
            if i == j {
                s[i * n + i] = acc;
            } else {
                s[i * n + j] = acc;
                s[j * n + i] = acc;
            }
        }
    }
    finish_reverse(ls, n, s)
}

/// [`cholesky_reverse`] specialized to the rank-one adjoint arising from
/// u = L z (so l_bar = tril(u_bar z^T)): the lower triangle of L^T l_bar
/// is w z^T with w_i = sum_{k >= i} L[k,i] u_bar[k], which skips the
/// cubic-time product entirely.
pub fn cholesky_reverse_rank1(l: &Array2<f64>, u_bar: &[f64], z: &[f64]) -> Array2<f64> {
    let n = l.nrows();
    let ls = slice_of(l);
    let mut w = vec![0.0; n];
    for k in 0..n {
        // column contributions of row k, contiguous in L
        let row = &ls[k * n..k * n + k + 1];
        let ub = u_bar[k];
        for i in 0..=k {
            w[i] += row[i] * ub;
        }
    }
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = w[i] * z[j];
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
        s[i * n + i] = w[i] * z[i];
    }
    finish_reverse(ls, n, s)
}

/// K_bar = 1/2 L^{-T} S L^{-1} for symmetric S (consumed).
fn finish_reverse(ls: &[f64], n: usize, mut s: Vec<f64>) -> Array2<f64> {
    solve_right_lower_inplace(ls, n, &mut s); // S := S L^{-1}
    transpose_square(&mut s, n); // S := L^{-T} S0 (S0 symmetric)
    solve_right_lower_inplace(ls, n, &mut s); // S := L^{-T} S0 L^{-1}
    for v in s.iter_mut() {
        *v *= 0.5;
    }
    Array2::from_shape_vec((n, n), s).expect("square")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let b = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
        let mut a = b.dot(&b.t());
        for i in 0..n {
            a[[i, i]] += n as f64 * 0.5;
        }
        a
    }

    #[test]
    fn cholesky_identity() {
        let eye = Array2::<f64>::eye(4);
        let l = cholesky_lower(&eye).unwrap();
        assert_eq!(l, eye);
    }

    #[test]
    fn cholesky_diagonal() {
        let m = arr2(&[[4.0, 0.0], [0.0, 9.0]]);
        let l = cholesky_lower(&m).unwrap();
        assert_eq!(l, arr2(&[[2.0, 0.0], [0.0, 3.0]]));
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 3, 8, 20] {
            let a = random_spd(n, &mut rng);
            let l = cholesky_lower(&a).unwrap();
            let rec = l.dot(&l.t());
            let num: f64 = (&rec - &a).mapv(|v| v * v).sum().sqrt();
            let den: f64 = a.mapv(|v| v * v).sum().sqrt();
            assert!(num / den <= 1e-8, "rel frobenius error {}", num / den);
        }
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        let m = arr2(&[[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]);
        match cholesky_lower(&m) {
            Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn triangular_matvec_agrees_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd(6, &mut rng);
        let l = cholesky_lower(&a).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = tri_lower_matvec(&l, &x);
        let yt = tri_lower_transpose_matvec(&l, &x);
        for i in 0..6 {
            let mut s = 0.0;
            let mut st = 0.0;
            for j in 0..6 {
                s += l[[i, j]] * x[j];
                st += l[[j, i]] * x[j];
            }
            assert!((y[i] - s).abs() < 1e-12);
            assert!((yt[i] - st).abs() < 1e-12);
        }
    }

    /// Finite-difference check of the Cholesky pullback: for a scalar
    /// function f(L) = sum(W . L), the gradient in K must match central
    /// differences of f(chol(K)) under symmetric perturbations of K.
    #[test]
    fn cholesky_reverse_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 5;
        let a = random_spd(n, &mut rng);
        let w = Array2::from_shape_fn((n, n), |(i, j)| {
            if i >= j {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let l = cholesky_lower(&a).unwrap();
        let k_bar = cholesky_reverse(&l, &w);

        let f = |m: &Array2<f64>| -> f64 {
            let l = cholesky_lower(m).unwrap();
            (&l * &w).sum()
        };
        let h = 1e-6;
        for i in 0..n {
            for j in 0..=i {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[[i, j]] += h;
                ap[[j, i]] = ap[[i, j]];
                am[[i, j]] -= h;
                am[[j, i]] = am[[i, j]];
                let fd = (f(&ap) - f(&am)) / (2.0 * h);
                // symmetric perturbation moves both (i,j) and (j,i)
                let grad = if i == j {
                    k_bar[[i, j]]
                } else {
                    k_bar[[i, j]] + k_bar[[j, i]]
                };
                assert!(
                    (grad - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                    "entry ({i},{j}): analytic {grad} vs fd {fd}"
                );
            }
        }
    }

    /// The rank-one fast path must agree with the general pullback.
    #[test]
    fn rank1_reverse_matches_general_reverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for n in [1usize, 2, 7, 24] {
            let a = random_spd(n, &mut rng);
            let l = cholesky_lower(&a).unwrap();
            let u_bar: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let l_bar = Array2::from_shape_fn((n, n), |(r, c)| {
                if c <= r {
                    u_bar[r] * z[c]
                } else {
                    0.0
                }
            });
            let general = cholesky_reverse(&l, &l_bar);
            let fast = cholesky_reverse_rank1(&l, &u_bar, &z);
            let scale = general.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (g, f) in general.iter().zip(fast.iter()) {
                assert!((g - f).abs() <= 1e-12 * scale, "{g} vs {f}");
            }
        }
    }
}
