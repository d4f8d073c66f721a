#![allow(dead_code)]

use gqmu::{Mat, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, l1: usize, l2: usize, k: usize, lo: f64, hi: f64) -> Tensor3 {
    let data = (0..l1 * l2 * k).map(|_| rng.random_range(lo..hi)).collect();
    Tensor3::new(l1, l2, k, data).unwrap()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

pub fn permute_cols(m: &Mat, perm: &[usize]) -> Mat {
    Mat::from_fn(m.rows(), m.cols(), |i, j| m.get(i, perm[j]))
}

/// Dense solve by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Quadratic given by its gradient: builds the Hessian column by column from
/// `grad(e_j) − grad(0)` and solves `H x = −grad(0)`.
pub fn minimize_quadratic(dim: usize, grad: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let zero = vec![0.0; dim];
    let g0 = grad(&zero);
    let mut h = vec![vec![0.0; dim]; dim];
    for j in 0..dim {
        let mut e = zero.clone();
        e[j] = 1.0;
        let gj = grad(&e);
        for i in 0..dim {
            h[i][j] = gj[i] - g0[i];
        }
    }
    gauss_solve(h, g0.iter().map(|v| -v).collect())
}

/// Unprojected S-subproblem minimizer from pixel loops. Returns `x[pixel][n]`
/// flattened pixel-major over `(l1, l2)` in row-major order.
#[allow(clippy::too_many_arguments)]
pub fn s_oracle(
    a: &Mat,
    d: &Mat,
    z_m: &Tensor3,
    z_h: &Tensor3,
    s_qu: &Tensor3,
    t: &Tensor3,
    lambda2: f64,
    mu: f64,
) -> Vec<f64> {
    let (l1, l2, p) = z_m.dims();
    let m = a.rows();
    let n = a.cols();
    let mut da = vec![vec![0.0; n]; p];
    for r in 0..p {
        for c in 0..n {
            for k in 0..m {
                da[r][c] += d.get(r, k) * a.get(k, c);
            }
        }
    }
    let grad = |x: &[f64]| {
        let mut g = vec![0.0; x.len()];
        for i in 0..l1 {
            for j in 0..l2 {
                let px = i * l2 + j;
                let s = &x[px * n..(px + 1) * n];
                for r in 0..p {
                    let res: f64 = (0..n).map(|c| da[r][c] * s[c]).sum::<f64>() - z_m.get(i, j, r);
                    for c in 0..n {
                        g[px * n + c] += da[r][c] * res;
                    }
                }
                for r in 0..m {
                    let res: f64 = (0..n).map(|c| a.get(r, c) * s[c]).sum::<f64>() - z_h.get(i, j, r);
                    for c in 0..n {
                        g[px * n + c] += a.get(r, c) * res;
                    }
                }
                for c in 0..n {
                    g[px * n + c] += lambda2 * (s[c] - s_qu.get(i, j, c)) + mu * (s[c] - t.get(i, j, c));
                }
            }
        }
        g
    };
    minimize_quadratic(l1 * l2 * n, grad)
}

/// Unprojected A-subproblem minimizer under the WSS regularizer, from loops.
/// Returns `A` row-major.
#[allow(clippy::too_many_arguments)]
pub fn a_oracle(
    s: &Tensor3,
    d: &Mat,
    z_m: &Tensor3,
    z_h: &Tensor3,
    w: &[f64],
    c: &[f64],
    lambda3: f64,
    lambda4: f64,
    a_prev: &Mat,
) -> Vec<f64> {
    let (l1, l2, n) = s.dims();
    let p = z_m.channels();
    let m = z_h.channels();
    let grad = |x: &[f64]| {
        let a = |r: usize, k: usize| x[r * n + k];
        let mut g = vec![0.0; m * n];
        for i in 0..l1 {
            for j in 0..l2 {
                let sp: Vec<f64> = (0..n).map(|k| s.get(i, j, k)).collect();
                let fit: Vec<f64> = (0..m).map(|r| (0..n).map(|k| a(r, k) * sp[k]).sum()).collect();
                for r in 0..m {
                    let res = fit[r] - z_h.get(i, j, r);
                    for k in 0..n {
                        g[r * n + k] += res * sp[k];
                    }
                }
                for q in 0..p {
                    let res: f64 = (0..m).map(|r| d.get(q, r) * fit[r]).sum::<f64>() - z_m.get(i, j, q);
                    for r in 0..m {
                        for k in 0..n {
                            g[r * n + k] += d.get(q, r) * res * sp[k];
                        }
                    }
                }
            }
        }
        for r in 0..m {
            for k in 0..n {
                g[r * n + k] += lambda3 * w[k] * (a(r, k) - c[r]) + lambda4 * (a(r, k) - a_prev.get(r, k));
            }
        }
        g
    };
    minimize_quadratic(m * n, grad)
}
