//! Flat row-major matrix kernels used by the tape in forward and backward.
//!
//! Single-threaded: results must be bit-identical run to run.

/// out += a [m,k] * b [k,n].
pub fn matmul_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            // Exact zeros (masked attention weights) must leave the
            // accumulator bits untouched.
            if a_ik == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ik * bv;
            }
        }
    }
}

/// out += a [m,c] * b^T where b is [n,c]; out is [m,n].
pub fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, c: usize, n: usize) {
    debug_assert_eq!(a.len(), m * c);
    debug_assert_eq!(b.len(), n * c);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * c..(i + 1) * c];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * c..(j + 1) * c];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// out += a^T * b where a is [m,k] and b is [m,n]; out is [k,n].
pub fn matmul_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            if a_ik == 0.0 {
                continue;
            }
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ik * bv;
            }
        }
    }
}

/// out = x^T for x [rows, cols].
pub fn transpose(x: &[f64], out: &mut [f64], rows: usize, cols: usize) {
    debug_assert_eq!(x.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = x[i * cols + j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::vec;
    use alloc::vec::Vec;

    /// Naive triple-loop reference used as the independent oracle.
    fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a[i * k + kk] * b[kk * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect()
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = Rng::new(42);
        for &(m, k, n) in &[(3usize, 4usize, 2usize), (1, 7, 5), (6, 1, 3), (5, 5, 5)] {
            let a = random_vec(&mut rng, m * k);
            let b = random_vec(&mut rng, k * n);
            let mut out = vec![0.0; m * n];
            matmul_nn(&a, &b, &mut out, m, k, n);
            let want = matmul_oracle(&a, &b, m, k, n);
            for (x, y) in out.iter().zip(&want) {
                assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn nt_and_tn_agree_with_explicit_transpose() {
        let mut rng = Rng::new(9);
        let (m, k, n) = (4usize, 3usize, 5usize);
        let a = random_vec(&mut rng, m * k);
        let b = random_vec(&mut rng, k * n);

        // a * b via nt: need b^T stored as [n,k].
        let mut bt = vec![0.0; k * n];
        transpose(&b, &mut bt, k, n);
        let mut out_nt = vec![0.0; m * n];
        matmul_nt(&a, &bt, &mut out_nt, m, k, n);
        let want = matmul_oracle(&a, &b, m, k, n);
        for (x, y) in out_nt.iter().zip(&want) {
            assert!((x - y).abs() <= 1e-12);
        }

        // a^T * b2 via tn where a is [m,k], b2 is [m,n].
        let b2 = random_vec(&mut rng, m * n);
        let mut out_tn = vec![0.0; k * n];
        matmul_tn(&a, &b2, &mut out_tn, m, k, n);
        let mut at = vec![0.0; m * k];
        transpose(&a, &mut at, m, k);
        let want2 = matmul_oracle(&at, &b2, k, m, n);
        for (x, y) in out_tn.iter().zip(&want2) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn identity_and_selector() {
        // I2 * x == x
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let mut out = vec![0.0; 4];
        matmul_nn(&eye, &x, &mut out, 2, 2, 2);
        assert_eq!(out, x);

        // [[1,0]] * [[a],[b]] == [[a]]
        let sel = vec![1.0, 0.0];
        let col = vec![7.5, -3.0];
        let mut out = vec![0.0; 1];
        matmul_nn(&sel, &col, &mut out, 1, 2, 1);
        assert_eq!(out, vec![7.5]);
    }

    #[test]
    fn transpose_involution() {
        let mut rng = Rng::new(4);
        let x = random_vec(&mut rng, 12);
        let mut t = vec![0.0; 12];
        transpose(&x, &mut t, 3, 4);
        let mut back = vec![0.0; 12];
        transpose(&t, &mut back, 4, 3);
        assert_eq!(x, back);
    }
}
