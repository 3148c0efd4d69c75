use std::sync::Arc;

use nalgebra::DMatrix;

use super::dense::expm_dense;
use super::{same_space, HilbertSpace, C64, ONE, ZERO};
use crate::error::{Error, Result};

/// Complex sparse matrix over a [`HilbertSpace`], stored in compressed rows.
///
/// Column indices within each row are sorted and explicit zeros are dropped
/// whenever an operator is built through [`SparseOperator::from_triplets`].
#[derive(Clone, Debug)]
pub struct SparseOperator {
    space: Arc<HilbertSpace>,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<C64>,
}

impl SparseOperator {
    pub fn zeros(space: &Arc<HilbertSpace>) -> Self {
        Self {
            space: space.clone(),
            indptr: vec![0; space.dim() + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(space: &Arc<HilbertSpace>) -> Self {
        Self::diagonal(space, |_| ONE)
    }

    pub fn diagonal(space: &Arc<HilbertSpace>, f: impl Fn(usize) -> C64) -> Self {
        let n = space.dim();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        indptr.push(0);
        for i in 0..n {
            let v = f(i);
            if v != ZERO {
                indices.push(i);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            space: space.clone(),
            indptr,
            indices,
            values,
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros removed.
    pub fn from_triplets(
        space: &Arc<HilbertSpace>,
        triplets: impl IntoIterator<Item = (usize, usize, C64)>,
    ) -> Result<Self> {
        let n = space.dim();
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); n];
        for (r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    got: r.max(c) + 1,
                });
            }
            rows[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut iter = row.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                if v != ZERO {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            space: space.clone(),
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(space: &Arc<HilbertSpace>, m: &DMatrix<C64>) -> Result<Self> {
        let n = space.dim();
        if m.shape() != (n, n) {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: m.nrows(),
            });
        }
        Self::from_triplets(
            space,
            (0..n).flat_map(|r| (0..n).map(move |c| (r, c, m[(r, c)]))),
        )
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let n = self.dim();
        let mut m = DMatrix::from_element(n, n, ZERO);
        for r in 0..n {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim()).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => ZERO,
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        if s == ZERO {
            return Self::zeros(&self.space);
        }
        out
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Self, s: C64) -> Result<Self> {
        same_space(&self.space, &other.space)?;
        Self::from_triplets(
            &self.space,
            self.triplets()
                .chain(other.triplets().map(|(r, c, v)| (r, c, v * s))),
        )
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.add_scaled(other, ONE)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add_scaled(other, -ONE)
    }

    /// Weighted sum of operators sharing one space.
    pub fn linear_combination<'a>(
        space: &Arc<HilbertSpace>,
        terms: impl IntoIterator<Item = (C64, &'a SparseOperator)>,
    ) -> Result<Self> {
        let mut trip = Vec::new();
        for (s, op) in terms {
            same_space(space, &op.space)?;
            trip.extend(op.triplets().map(|(r, c, v)| (r, c, v * s)));
        }
        Self::from_triplets(space, trip)
    }

    /// Sparse product `self * other` (Gustavson row accumulation).
    pub fn mul(&self, other: &Self) -> Result<Self> {
        same_space(&self.space, &other.space)?;
        let n = self.dim();
        let mut acc = vec![ZERO; n];
        let mut mark = vec![usize::MAX; n];
        let mut cols: Vec<usize> = Vec::new();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..n {
            cols.clear();
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if mark[c] != r {
                        mark[c] = r;
                        acc[c] = ZERO;
                        cols.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                if acc[c] != ZERO {
                    indices.push(c);
                    values.push(acc[c]);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            space: self.space.clone(),
            indptr,
            indices,
            values,
        })
    }

    pub fn dagger(&self) -> Self {
        Self::from_triplets(&self.space, self.triplets().map(|(r, c, v)| (c, r, v.conj())))
            .expect("transpose stays in range")
    }

    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    /// `y = self * x`.
    #[inline]
    pub fn mul_vec_into(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(y.len(), self.dim());
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = ZERO;
            for k in self.indptr[r]..self.indptr[r + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            *yr = s;
        }
    }

    /// `y += alpha * self * x`.
    #[inline]
    pub fn mul_vec_acc(&self, alpha: C64, x: &[C64], y: &mut [C64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = ZERO;
            for k in self.indptr[r]..self.indptr[r + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            *yr += alpha * s;
        }
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.dim()];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `out = self * m` for a column-major dense `n x n` matrix.
    pub fn mul_dense_into(&self, m: &[C64], out: &mut [C64]) {
        let n = self.dim();
        for (col_in, col_out) in m.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            self.mul_vec_into(col_in, col_out);
        }
    }

    /// `out += alpha * self * m` for a column-major dense `n x n` matrix.
    pub fn mul_dense_acc(&self, alpha: C64, m: &[C64], out: &mut [C64]) {
        let n = self.dim();
        for (col_in, col_out) in m.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            self.mul_vec_acc(alpha, col_in, col_out);
        }
    }

    /// Induced 1-norm (maximum absolute column sum); an upper bound on the
    /// spectral radius.
    pub fn norm_one(&self) -> f64 {
        let mut colsum = vec![0.0; self.dim()];
        for (k, &c) in self.indices.iter().enumerate() {
            colsum[c] += self.values[k].norm();
        }
        colsum.into_iter().fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.max_abs())
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.max_abs_diff(&self.dagger()).expect("same space")
    }

    /// Same matrix reinterpreted on another space of equal dimension.
    pub fn with_space(&self, space: &Arc<HilbertSpace>) -> Result<Self> {
        if space.dim() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.dim(),
                got: space.dim(),
            });
        }
        let mut out = self.clone();
        out.space = space.clone();
        Ok(out)
    }
}

/// Embeds a single-mode operator on `mode` with identities on every other
/// mode.
pub fn tensor_embed(op: &SparseOperator, space: &Arc<HilbertSpace>, mode: &str) -> Result<SparseOperator> {
    let m = space.mode_index(mode)?;
    embed_at(op, space, m)
}

pub(crate) fn embed_at(op: &SparseOperator, space: &Arc<HilbertSpace>, m: usize) -> Result<SparseOperator> {
    let dk = space.mode_dim(m);
    if op.dim() != dk {
        return Err(Error::ShapeMismatch {
            expected: dk,
            got: op.dim(),
        });
    }
    let after = space.stride(m);
    let n = space.dim();
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::with_capacity(op.nnz() * n / dk);
    let mut values = Vec::with_capacity(op.nnz() * n / dk);
    indptr.push(0);
    for row in 0..n {
        let s = row % after;
        let r = (row / after) % dk;
        let p = row / (after * dk);
        let base = p * dk * after + s;
        for (c, v) in op.row(r) {
            indices.push(base + c * after);
            values.push(v);
        }
        indptr.push(indices.len());
    }
    Ok(SparseOperator {
        space: space.clone(),
        indptr,
        indices,
        values,
    })
}

fn single_mode_op(
    space: &Arc<HilbertSpace>,
    mode: &str,
    entries: impl Fn(usize) -> Vec<(usize, usize, C64)>,
) -> Result<SparseOperator> {
    let m = space.mode_index(mode)?;
    let local = space.single_mode(m);
    let op = SparseOperator::from_triplets(&local, entries(space.mode_dim(m)))?;
    embed_at(&op, space, m)
}

/// Lowering operator of `mode`: `<ν−1|a|ν> = √ν`.
pub fn annihilation(space: &Arc<HilbertSpace>, mode: &str) -> Result<SparseOperator> {
    single_mode_op(space, mode, |d| {
        (1..d)
            .map(|nu| (nu - 1, nu, C64::from((nu as f64).sqrt())))
            .collect()
    })
}

pub fn creation(space: &Arc<HilbertSpace>, mode: &str) -> Result<SparseOperator> {
    Ok(annihilation(space, mode)?.dagger())
}

pub fn number(space: &Arc<HilbertSpace>, mode: &str) -> Result<SparseOperator> {
    single_mode_op(space, mode, |d| {
        (1..d).map(|nu| (nu, nu, C64::from(nu as f64))).collect()
    })
}

/// Dense `exp(amp a† − amp* a)` on a single truncated mode of dimension `dim`.
///
/// The generator is truncated first, so the result is exactly unitary and
/// agrees with the untruncated displacement on low Fock levels.
pub fn displacement_matrix(dim: usize, amp: C64) -> DMatrix<C64> {
    let mut gen = DMatrix::from_element(dim, dim, ZERO);
    for nu in 1..dim {
        let s = (nu as f64).sqrt();
        gen[(nu, nu - 1)] = amp * s;
        gen[(nu - 1, nu)] = -amp.conj() * s;
    }
    expm_dense(&gen)
}

pub fn displacement(space: &Arc<HilbertSpace>, mode: &str, amp: C64) -> Result<SparseOperator> {
    let m = space.mode_index(mode)?;
    let d = space.mode_dim(m);
    if amp.norm() * amp.norm() > 0.5 * d as f64 {
        eprintln!(
            "warning: displacement |amp|={:.3} is large for mode `{mode}` of dimension {d}",
            amp.norm()
        );
    }
    let local = space.single_mode(m);
    let op = SparseOperator::from_dense(&local, &displacement_matrix(d, amp))?;
    embed_at(&op, space, m)
}
