//! Complex sparse matrices in compressed row storage, banded direct solves
//! and small dense eigensolves.
//!
//! The finite element systems are complex symmetric (`A = Aᵀ`, not
//! Hermitian) and indefinite. [`solve`] first tries a banded `LDLᵀ`
//! factorization without pivoting, polishes with iterative refinement, and
//! falls back to a banded LU with partial pivoting when the pivots break down
//! or the residual contract is missed.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{PmlError, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_DENSE_LIMIT: usize = 2500;
const SYMMETRY_TOL: f64 = 1e-13;
const BAND_MEMORY_BUDGET: usize = 1 << 31;
const REFINEMENT_STEPS: usize = 3;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone)]
pub struct ComplexSparse {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<Complex64>,
    symmetric: bool,
}

impl ComplexSparse {
    /// Builds CSR storage from unsorted triplets, summing duplicates in input
    /// order so the result is independent of how the triplets were produced
    /// as long as their order is.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, Complex64)>, symmetric: bool) -> Result<Self> {
        if let Some(&(i, j, _)) = triplets.iter().find(|t| t.0 >= n || t.1 >= n) {
            return Err(PmlError::InvalidParameter(format!("entry ({i}, {j}) outside a {n}x{n} matrix")));
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let m = ComplexSparse { n, row_ptr, col_idx, values, symmetric: false };
        if symmetric {
            let defect = m.symmetry_defect();
            if defect > SYMMETRY_TOL {
                return Err(PmlError::InvalidParameter(format!(
                    "matrix flagged symmetric has relative defect {defect:e}"
                )));
            }
        }
        Ok(ComplexSparse { symmetric, ..m })
    }

    pub fn identity(n: usize) -> Self {
        ComplexSparse {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![Complex64::new(1.0, 0.0); n],
            symmetric: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => ZERO,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `max |A_ij - A_ji| / max |A|` (unconjugated transpose).
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).norm());
            }
        }
        worst / scale
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.n).flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j))).max().unwrap_or(0)
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut d = DMatrix::from_element(self.n, self.n, ZERO);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// Coordinate text format: a header line `n nnz`, then one `row col re im`
    /// line per stored entry (0-based indices, 17 significant digits).
    pub fn write_coordinate<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.n, self.nnz())?;
        let mut line = String::new();
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                line.clear();
                let _ = writeln!(line, "{i} {j} {:.16e} {:.16e}", v.re, v.im);
                out.write_all(line.as_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_coordinate<R: BufRead>(input: R, symmetric: bool) -> Result<Self> {
        let bad = |msg: String| PmlError::InvalidParameter(format!("coordinate file: {msg}"));
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| bad("missing header".into()))??;
        let mut it = header.split_whitespace();
        let n: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad header".into()))?;
        let nnz: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad header".into()))?;
        let mut triplets = Vec::with_capacity(nnz);
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad(format!("line {} has {} fields", k + 2, f.len())));
            }
            let parse_err = |_| bad(format!("line {}: unparsable number", k + 2));
            let i: usize = f[0].parse().map_err(|_| bad(format!("line {}: bad row", k + 2)))?;
            let j: usize = f[1].parse().map_err(|_| bad(format!("line {}: bad column", k + 2)))?;
            let re: f64 = f[2].parse().map_err(parse_err)?;
            let im: f64 = f[3].parse().map_err(parse_err)?;
            triplets.push((i, j, Complex64::new(re, im)));
        }
        if triplets.len() != nnz {
            return Err(bad(format!("header announces {nnz} entries, found {}", triplets.len())));
        }
        Self::from_triplets(n, triplets, symmetric)
    }
}

pub fn norm2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn relative_residual(a: &ComplexSparse, x: &[Complex64], b: &[Complex64]) -> f64 {
    let ax = a.matvec(x);
    let r: Vec<Complex64> = ax.iter().zip(b).map(|(u, v)| v - u).collect();
    let nb = norm2(b);
    if nb == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / nb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    BandLdlt,
    BandLu,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<Complex64>,
    /// Achieved `‖Ax - b‖₂ / ‖b‖₂`.
    pub residual: f64,
    pub method: SolveMethod,
}

/// Banded `LDLᵀ` of a complex symmetric matrix; row `i` stores columns
/// `i - bw ..= i` at positions `0 ..= bw`.
#[derive(Debug, Clone)]
struct BandLdlt {
    n: usize,
    bw: usize,
    l: Vec<Complex64>,
    d: Vec<Complex64>,
}

impl BandLdlt {
    fn factor(a: &ComplexSparse, bw: usize) -> Option<Self> {
        let n = a.dim();
        let w = bw + 1;
        let mut l = vec![ZERO; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    l[i * w + (j + bw - i)] = v;
                }
            }
        }
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let mut d = vec![ZERO; n];
        let mut scratch = vec![ZERO; w];
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            let (done, rest) = l.split_at_mut(i * w);
            let row_i = &mut rest[..w];
            for k in lo_i..i {
                let lo = lo_i.max(k.saturating_sub(bw));
                let row_k = &done[k * w..(k + 1) * w];
                let mut acc = row_i[k + bw - i];
                for m in lo..k {
                    acc -= scratch[m + bw - i] * row_k[m + bw - k];
                }
                let lik = acc / d[k];
                row_i[k + bw - i] = lik;
                scratch[k + bw - i] = lik * d[k];
            }
            let mut di = row_i[bw];
            for m in lo_i..i {
                di -= scratch[m + bw - i] * row_i[m + bw - i];
            }
            if !(di.norm() > 1e-13 * scale) || !di.re.is_finite() || !di.im.is_finite() {
                return None;
            }
            d[i] = di;
            row_i[bw] = Complex64::new(1.0, 0.0);
        }
        Some(BandLdlt { n, bw, l, d })
    }

    fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * w..(i + 1) * w];
            let mut acc = y[i];
            for m in i.saturating_sub(bw)..i {
                acc -= row[m + bw - i] * y[m];
            }
            y[i] = acc;
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                acc -= self.l[k * w + (i + bw - k)] * y[k];
            }
            y[i] = acc;
        }
        y
    }
}

/// Banded LU with partial pivoting in LAPACK `gbtrf` storage.
#[derive(Debug, Clone)]
struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<Complex64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    fn ldab(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ldab() + (self.kl + self.ku + i - j)
    }

    fn factor(a: &ComplexSparse, bw: usize) -> Result<Self> {
        let n = a.dim();
        let (kl, ku) = (bw, bw);
        let mut lu = BandLu { n, kl, ku, ab: vec![ZERO; n * (2 * kl + ku + 1)], ipiv: vec![0; n] };
        for i in 0..n {
            for (j, v) in a.row(i) {
                let k = lu.idx(i, j);
                lu.ab[k] = v;
            }
        }
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut p = j;
            let mut best = lu.ab[lu.idx(j, j)].norm();
            for i in j + 1..=j + km {
                let v = lu.ab[lu.idx(i, j)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            lu.ipiv[j] = p;
            if best == 0.0 {
                return Err(PmlError::Solver { reason: format!("zero pivot in column {j}"), residual: f64::INFINITY });
            }
            ju = ju.max((p + ku).min(n - 1));
            if p != j {
                for c in j..=ju {
                    let (a1, a2) = (lu.idx(j, c), lu.idx(p, c));
                    lu.ab.swap(a1, a2);
                }
            }
            let pivot = lu.ab[lu.idx(j, j)];
            for i in j + 1..=j + km {
                let k = lu.idx(i, j);
                lu.ab[k] /= pivot;
            }
            for c in j + 1..=ju {
                let t = lu.ab[lu.idx(j, c)];
                if t == ZERO {
                    continue;
                }
                for i in j + 1..=j + km {
                    let m = lu.ab[lu.idx(i, j)];
                    let k = lu.idx(i, c);
                    lu.ab[k] -= m * t;
                }
            }
        }
        Ok(lu)
    }

    fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut x = b.to_vec();
        for j in 0..n {
            x.swap(j, self.ipiv[j]);
            let km = self.kl.min(n - 1 - j);
            let xj = x[j];
            for i in j + 1..=j + km {
                x[i] -= self.ab[self.idx(i, j)] * xj;
            }
        }
        let ubw = self.kl + self.ku;
        for j in (0..n).rev() {
            x[j] /= self.ab[self.idx(j, j)];
            let xj = x[j];
            for i in j.saturating_sub(ubw)..j {
                x[i] -= self.ab[self.idx(i, j)] * xj;
            }
        }
        x
    }
}

/// A reusable factorization; immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct Factorization {
    matrix: ComplexSparse,
    inner: FactorKind,
}

#[derive(Debug, Clone)]
enum FactorKind {
    Ldlt(BandLdlt),
    Lu(BandLu),
}

impl Factorization {
    pub fn new(a: &ComplexSparse) -> Result<Self> {
        let n = a.dim();
        let bw = a.bandwidth();
        let words = n.saturating_mul(3 * bw + 1);
        if words.saturating_mul(16) > BAND_MEMORY_BUDGET {
            return Err(PmlError::Solver {
                reason: format!("band storage for n = {n}, bandwidth = {bw} exceeds the memory budget"),
                residual: f64::INFINITY,
            });
        }
        let inner = match a.is_symmetric().then(|| BandLdlt::factor(a, bw)).flatten() {
            Some(f) => FactorKind::Ldlt(f),
            None => FactorKind::Lu(BandLu::factor(a, bw)?),
        };
        Ok(Factorization { matrix: a.clone(), inner })
    }

    fn force_lu(a: &ComplexSparse) -> Result<Self> {
        Ok(Factorization { matrix: a.clone(), inner: FactorKind::Lu(BandLu::factor(a, a.bandwidth())?) })
    }

    pub fn method(&self) -> SolveMethod {
        match self.inner {
            FactorKind::Ldlt(_) => SolveMethod::BandLdlt,
            FactorKind::Lu(_) => SolveMethod::BandLu,
        }
    }

    fn apply(&self, b: &[Complex64]) -> Vec<Complex64> {
        match &self.inner {
            FactorKind::Ldlt(f) => f.solve(b),
            FactorKind::Lu(f) => f.solve(b),
        }
    }

    /// Solves with iterative refinement; the achieved residual is returned
    /// and checked against `tol`.
    pub fn solve(&self, b: &[Complex64], tol: f64) -> Result<Solution> {
        if b.len() != self.matrix.dim() {
            return Err(PmlError::InvalidParameter(format!(
                "right-hand side of length {} for a {}-dimensional system",
                b.len(),
                self.matrix.dim()
            )));
        }
        let nb = norm2(b);
        if nb == 0.0 {
            return Ok(Solution { x: vec![ZERO; b.len()], residual: 0.0, method: self.method() });
        }
        let mut x = self.apply(b);
        let mut residual = relative_residual(&self.matrix, &x, b);
        for _ in 0..REFINEMENT_STEPS {
            if residual <= tol {
                break;
            }
            let ax = self.matrix.matvec(&x);
            let r: Vec<Complex64> = b.iter().zip(&ax).map(|(u, v)| u - v).collect();
            let dx = self.apply(&r);
            let candidate: Vec<Complex64> = x.iter().zip(&dx).map(|(u, v)| u + v).collect();
            let res = relative_residual(&self.matrix, &candidate, b);
            if !(res < residual) {
                break;
            }
            x = candidate;
            residual = res;
        }
        if residual <= tol {
            Ok(Solution { x, residual, method: self.method() })
        } else {
            Err(PmlError::Solver { reason: "residual contract not met".into(), residual })
        }
    }
}

/// Solves `A x = b` to relative residual `tol`.
pub fn solve(a: &ComplexSparse, b: &[Complex64], tol: f64) -> Result<Solution> {
    if b.len() != a.dim() {
        return Err(PmlError::InvalidParameter(format!(
            "right-hand side of length {} for a {}-dimensional system",
            b.len(),
            a.dim()
        )));
    }
    let f = Factorization::new(a)?;
    match f.solve(b, tol) {
        Ok(s) => Ok(s),
        Err(e) if f.method() == SolveMethod::BandLdlt => {
            log::debug!("LDLT solve missed the residual contract ({e}); retrying with pivoted LU");
            Factorization::force_lu(a)?.solve(b, tol)
        }
        Err(e) => Err(e),
    }
}

/// All eigenvalues of the densified matrix, sorted by real then imaginary part.
pub fn dense_eig_small(a: &ComplexSparse, limit: usize) -> Result<Vec<Complex64>> {
    let n = a.dim();
    if n > limit {
        return Err(PmlError::SizeLimit { n, limit });
    }
    let mut out: Vec<Complex64> = if a.is_real() && a.symmetry_defect() == 0.0 {
        let d = DMatrix::from_fn(n, n, |i, j| a.get(i, j).re);
        d.symmetric_eigenvalues().iter().map(|&v| Complex64::new(v, 0.0)).collect()
    } else {
        let d = a.to_dense();
        let schur = nalgebra::Schur::try_new(d, f64::EPSILON, 100 * n.max(10)).ok_or_else(|| {
            PmlError::Solver { reason: "Schur iteration did not converge".into(), residual: f64::NAN }
        })?;
        let (_, t) = schur.unpack();
        (0..n).map(|i| t[(i, i)]).collect()
    };
    out.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    Ok(out)
}

/// Coordinate text of the matrix, for debugging.
pub fn format_entries(a: &ComplexSparse) -> String {
    let mut buf = Vec::new();
    a.write_coordinate(&mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}
