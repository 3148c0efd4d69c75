use nalgebra::DMatrix;

use super::{C64, ONE, ZERO};

/// Matrix exponential by scaling and squaring with a truncated Taylor core.
pub fn expm_dense(a: &DMatrix<C64>) -> DMatrix<C64> {
    assert!(a.is_square(), "expm of a non-square matrix");
    let n = a.nrows();
    let norm = a
        .column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    // Scale until the Taylor core is well inside its radius of fast convergence.
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scale = 2f64.powi(squarings as i32);
    let scaled = a.map(|z| z / scale);
    let mut result = DMatrix::<C64>::identity(n, n);
    let mut term = DMatrix::<C64>::identity(n, n);
    for k in 1..40 {
        term = &term * &scaled / C64::from(k as f64);
        result += &term;
        let tn = term.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if tn < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

pub fn kron_dense(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::from_element(ar * br, ac * bc, ZERO);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

pub fn max_abs_diff_dense(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

#[allow(dead_code)]
pub(crate) fn identity(n: usize) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { ONE } else { ZERO })
}
