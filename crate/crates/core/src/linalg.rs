//! Dense f64 linear algebra.
//!
//! Everything here is deterministic: matrix multiplication accumulates each
//! output element strictly in k-order (row-major, left-to-right) with fused
//! multiply-adds, so results are bit-identical from run to run and identical
//! to the naive triple loop.  The blocked kernel only changes *which*
//! elements are in flight at once, never the per-element operation order.

use crate::error::{CoreError, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a row-major buffer; validates length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::InvalidArgument(format!(
                "buffer length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite {
                context: "matrix construction",
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        self.transpose_into(&mut out)
            .expect("freshly sized transpose output");
        out
    }

    /// Transpose into a caller-owned `cols x rows` matrix (no allocation).
    pub fn transpose_into(&self, out: &mut Matrix) -> Result<()> {
        if out.rows != self.cols || out.cols != self.rows {
            return Err(dim_err("transpose output shape", out, self));
        }
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (j, v) in row.iter().enumerate() {
                out.data[j * self.rows + i] = *v;
            }
        }
        Ok(())
    }

    /// Frobenius norm, accumulated in row-major element order.
    pub fn frobenius_norm(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.data {
            acc = v.mul_add(*v, acc);
        }
        acc.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// self += s * other (elementwise).
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(dim_err("add_scaled", self, other));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = b.mul_add(s, *a);
        }
        Ok(())
    }

    pub fn scale_mut(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

fn dim_err(context: &'static str, a: &Matrix, b: &Matrix) -> CoreError {
    CoreError::DimMismatch {
        context,
        left_rows: a.rows,
        left_cols: a.cols,
        right_rows: b.rows,
        right_cols: b.cols,
    }
}

// ─── Matrix multiplication ──────────────────────────────────────────────
//
// Register-blocked kernel: IB rows of A by a tile of B columns are
// accumulated in registers across the full k loop.  Each c[i][j] element
// still receives its fused multiply-add updates in increasing-k order with
// a single accumulator, which keeps the result bit-identical to the naive
// triple loop while the work vectorizes across j.  On x86-64 with AVX-512
// the tile is written with explicit intrinsics (the autovectorizer does not
// vectorize fma chains); element semantics are identical in both paths, so
// outputs do not depend on which path was compiled.

/// Widest column tile: 4 vectors of 8 lanes.
const MM_WIDE: usize = 32;

// Index loops in the kernels mirror the register/lane layout on purpose.
#[allow(clippy::needless_range_loop, clippy::too_many_arguments)]
#[cfg(all(target_arch = "x86_64", target_feature = "avx512f"))]
mod mm_kernel {
    use core::arch::x86_64::*;

    /// Computes C rows `i0..i0+IB`, columns `j0..j0+8*JV`, from a packed
    /// B tile (`kdim` rows of `8*JV` contiguous doubles).
    ///
    /// Safety: caller guarantees `i0+IB <= m`, `j0+8*JV <= n`,
    /// `a.len() >= m*acols`, `bpack.len() >= kdim*8*JV`, `c.len() >= m*n`.
    #[inline(never)]
    pub unsafe fn tile<const IB: usize, const JV: usize>(
        a: &[f64],
        acols: usize,
        bpack: &[f64],
        c: &mut [f64],
        n: usize,
        i0: usize,
        j0: usize,
    ) {
        let kdim = acols;
        let arows: [*const f64; IB] = std::array::from_fn(|r| a.as_ptr().add((i0 + r) * acols));
        let bp = bpack.as_ptr();
        let mut acc = [[_mm512_setzero_pd(); JV]; IB];
        for kk in 0..kdim {
            let brow = bp.add(kk * (8 * JV));
            let mut bv = [_mm512_setzero_pd(); JV];
            for t in 0..JV {
                bv[t] = _mm512_loadu_pd(brow.add(8 * t));
            }
            for r in 0..IB {
                let av = _mm512_set1_pd(*arows[r].add(kk));
                for t in 0..JV {
                    acc[r][t] = _mm512_fmadd_pd(av, bv[t], acc[r][t]);
                }
            }
        }
        let cp = c.as_mut_ptr();
        for r in 0..IB {
            let crow = cp.add((i0 + r) * n + j0);
            for t in 0..JV {
                _mm512_storeu_pd(crow.add(8 * t), acc[r][t]);
            }
        }
    }

    /// Single-vector tile with a masked store for a ragged tail of
    /// `rem <= 8` columns.  The packed tile is zero-padded to 8 wide.
    /// Same safety contract as `tile`.
    #[inline(never)]
    pub unsafe fn tile_tail<const IB: usize>(
        a: &[f64],
        acols: usize,
        bpack: &[f64],
        c: &mut [f64],
        n: usize,
        i0: usize,
        j0: usize,
        rem: usize,
    ) {
        let kdim = acols;
        let mask: __mmask8 = ((1u16 << rem) - 1) as u8;
        let arows: [*const f64; IB] = std::array::from_fn(|r| a.as_ptr().add((i0 + r) * acols));
        let bp = bpack.as_ptr();
        let mut acc = [_mm512_setzero_pd(); IB];
        for kk in 0..kdim {
            let bv = _mm512_loadu_pd(bp.add(kk * 8));
            for r in 0..IB {
                let av = _mm512_set1_pd(*arows[r].add(kk));
                acc[r] = _mm512_fmadd_pd(av, bv, acc[r]);
            }
        }
        let cp = c.as_mut_ptr();
        for r in 0..IB {
            _mm512_mask_storeu_pd(cp.add((i0 + r) * n + j0), mask, acc[r]);
        }
    }
}

#[allow(clippy::needless_range_loop, clippy::too_many_arguments)]
#[cfg(not(all(target_arch = "x86_64", target_feature = "avx512f")))]
mod mm_kernel {
    /// Portable tile with the same accumulation semantics (single
    /// accumulator per element, fused multiply-add, increasing k).
    #[inline(never)]
    pub unsafe fn tile<const IB: usize, const JV: usize>(
        a: &[f64],
        acols: usize,
        bpack: &[f64],
        c: &mut [f64],
        n: usize,
        i0: usize,
        j0: usize,
    ) {
        let kdim = acols;
        let w = 8 * JV;
        let mut acc = [[0.0f64; super::MM_WIDE]; IB];
        for kk in 0..kdim {
            let brow = &bpack[kk * w..kk * w + w];
            for r in 0..IB {
                let aik = a[(i0 + r) * acols + kk];
                for t in 0..w {
                    acc[r][t] = aik.mul_add(brow[t], acc[r][t]);
                }
            }
        }
        for r in 0..IB {
            let coff = (i0 + r) * n + j0;
            c[coff..coff + w].copy_from_slice(&acc[r][..w]);
        }
    }

    #[inline(never)]
    pub unsafe fn tile_tail<const IB: usize>(
        a: &[f64],
        acols: usize,
        bpack: &[f64],
        c: &mut [f64],
        n: usize,
        i0: usize,
        j0: usize,
        rem: usize,
    ) {
        let kdim = acols;
        let mut acc = [[0.0f64; 8]; IB];
        for kk in 0..kdim {
            let brow = &bpack[kk * 8..kk * 8 + 8];
            for r in 0..IB {
                let aik = a[(i0 + r) * acols + kk];
                for t in 0..8 {
                    acc[r][t] = aik.mul_add(brow[t], acc[r][t]);
                }
            }
        }
        for r in 0..IB {
            let coff = (i0 + r) * n + j0;
            c[coff..coff + rem].copy_from_slice(&acc[r][..rem]);
        }
    }
}

/// Copies B columns `j0..j0+w` into a contiguous `kdim x wpad` buffer
/// (zero-padded to `wpad`), so the kernel's k-loop streams sequential
/// memory instead of striding across B's full row length.
fn pack_b(b: &[f64], kdim: usize, n: usize, j0: usize, w: usize, wpad: usize, out: &mut [f64]) {
    debug_assert!(out.len() >= kdim * wpad);
    for kk in 0..kdim {
        let src = &b[kk * n + j0..kk * n + j0 + w];
        let dst = &mut out[kk * wpad..(kk + 1) * wpad];
        for (d, s) in dst[..w].iter_mut().zip(src) {
            *d = *s;
        }
        for d in &mut dst[w..] {
            *d = 0.0;
        }
    }
}

std::thread_local! {
    /// Per-thread pack buffer so repeated products don't allocate.
    static PACK_SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Standard matrix product `A · B` written into a caller-owned output
/// (the shape of `out` must already be `a.rows x b.cols`).  Hot paths use
/// this to avoid per-call allocation.
///
/// Accumulation order per output element is strictly increasing in k with a
/// single fused-multiply-add accumulator (row-major, left-to-right), so the
/// result is deterministic and independent of the internal blocking.
pub fn matmul_into(out: &mut Matrix, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols != b.rows {
        return Err(dim_err("matmul", a, b));
    }
    if out.rows != a.rows || out.cols != b.cols {
        return Err(dim_err("matmul output shape", out, b));
    }
    let (m, n) = (a.rows, b.cols);
    let kdim = a.cols;
    if m == 0 || n == 0 {
        return Ok(());
    }
    if kdim == 0 {
        out.data.fill(0.0);
        return Ok(());
    }
    let (ad, bd) = (&a.data[..], &b.data[..]);
    PACK_SCRATCH.with(|cell| {
        let mut bpack = cell.borrow_mut();
        if bpack.len() < kdim * MM_WIDE {
            bpack.resize(kdim * MM_WIDE, 0.0);
        }
        let bpack = &mut bpack[..];

        // All tile calls stay within the bounds established here, which is
        // the entire safety contract of the kernels.
        unsafe {
            let cd = &mut out.data[..];
            let mut j0 = 0;
            while j0 + MM_WIDE <= n {
                pack_b(bd, kdim, n, j0, MM_WIDE, MM_WIDE, bpack);
                let mut i0 = 0;
                while i0 + 4 <= m {
                    mm_kernel::tile::<4, 4>(ad, kdim, bpack, cd, n, i0, j0);
                    i0 += 4;
                }
                while i0 < m {
                    mm_kernel::tile::<1, 4>(ad, kdim, bpack, cd, n, i0, j0);
                    i0 += 1;
                }
                j0 += MM_WIDE;
            }
            while j0 + 8 <= n {
                pack_b(bd, kdim, n, j0, 8, 8, bpack);
                let mut i0 = 0;
                while i0 + 4 <= m {
                    mm_kernel::tile::<4, 1>(ad, kdim, bpack, cd, n, i0, j0);
                    i0 += 4;
                }
                while i0 < m {
                    mm_kernel::tile::<1, 1>(ad, kdim, bpack, cd, n, i0, j0);
                    i0 += 1;
                }
                j0 += 8;
            }
            if j0 < n {
                let rem = n - j0;
                pack_b(bd, kdim, n, j0, rem, 8, bpack);
                let mut i0 = 0;
                while i0 + 4 <= m {
                    mm_kernel::tile_tail::<4>(ad, kdim, bpack, cd, n, i0, j0, rem);
                    i0 += 4;
                }
                while i0 < m {
                    mm_kernel::tile_tail::<1>(ad, kdim, bpack, cd, n, i0, j0, rem);
                    i0 += 1;
                }
            }
        }
        Ok(())
    })
}

/// Standard matrix product `A · B` (allocating form of [`matmul_into`]).
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut c = Matrix::zeros(a.rows, b.cols);
    matmul_into(&mut c, a, b)?;
    Ok(c)
}

/// Matrix–vector product `A · x`.
pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.cols != x.len() {
        return Err(CoreError::InvalidArgument(format!(
            "matvec: matrix is {}x{} but vector has length {}",
            a.rows,
            a.cols,
            x.len()
        )));
    }
    let mut out = vec![0.0; a.rows];
    for (i, o) in out.iter_mut().enumerate() {
        let row = a.row(i);
        let mut acc = 0.0f64;
        for (av, xv) in row.iter().zip(x) {
            acc = av.mul_add(*xv, acc);
        }
        *o = acc;
    }
    Ok(out)
}

/// Transposed matrix–vector product `Aᵀ · x` without materializing `Aᵀ`.
pub fn matvec_t(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.rows != x.len() {
        return Err(CoreError::InvalidArgument(format!(
            "matvec_t: matrix is {}x{} but vector has length {}",
            a.rows,
            a.cols,
            x.len()
        )));
    }
    let mut out = vec![0.0; a.cols];
    for (i, &xi) in x.iter().enumerate() {
        let row = a.row(i);
        for (o, av) in out.iter_mut().zip(row) {
            *o = av.mul_add(xi, *o);
        }
    }
    Ok(out)
}

// ─── Vector helpers ──────────────────────────────────────────────────────

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc = x.mul_add(*y, acc);
    }
    acc
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a - b` elementwise.
pub fn vsub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

// ─── Top singular value (power iteration) ───────────────────────────────

/// Result of a top-singular-value power iteration.
#[derive(Debug, Clone)]
pub struct TopSingular {
    pub sigma: f64,
    /// Left singular vector (length = rows).
    pub u: Vec<f64>,
    /// Right singular vector (length = cols).
    pub v: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
}

/// Largest singular value of `a` by power iteration on `AᵀA`, with an
/// optional warm-start vector (e.g. the previous step's right singular
/// vector when tracking a slowly changing matrix).
pub fn top_singular(
    a: &Matrix,
    max_iters: usize,
    tol: f64,
    warm: Option<&[f64]>,
) -> Result<TopSingular> {
    let n = a.cols;
    let m = a.rows;
    if n == 0 || m == 0 {
        return Err(CoreError::InvalidArgument(
            "top_singular on empty matrix".into(),
        ));
    }
    let mut v: Vec<f64> = match warm {
        Some(w) if w.len() == n && norm2(w) > 0.0 => w.to_vec(),
        _ => vec![1.0; n],
    };
    let nv = norm2(&v);
    for x in &mut v {
        *x /= nv;
    }
    let mut sigma = 0.0f64;
    let mut iters = 0;
    let mut converged = false;
    while iters < max_iters {
        iters += 1;
        let av = matvec(a, &v)?;
        let new_sigma = norm2(&av);
        if new_sigma == 0.0 {
            // v is in the null space; a zero product means sigma estimates
            // cannot improve, so stop (final sigma is recomputed below).
            converged = true;
            break;
        }
        let w = matvec_t(a, &av)?;
        let nw = norm2(&w);
        if nw == 0.0 {
            converged = true;
            break;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
        if (new_sigma - sigma).abs() <= tol * new_sigma.max(1e-300) {
            converged = true;
            break;
        }
        sigma = new_sigma;
    }
    let av = matvec(a, &v)?;
    let s = norm2(&av);
    let u = if s > 0.0 {
        av.iter().map(|x| x / s).collect()
    } else {
        let mut u = vec![0.0; m];
        u[0] = 1.0;
        u
    };
    Ok(TopSingular {
        sigma: s,
        u,
        v,
        iters,
        converged,
    })
}

// ─── Symmetric eigenvalues (cyclic Jacobi) ───────────────────────────────

/// Smallest and largest eigenvalue of a symmetric matrix via cyclic Jacobi
/// rotations.  Errors if the matrix is not square or not symmetric to
/// within `1e-12 · max(1, max |a_ij|)`.
pub fn sym_eig_extremes(a: &Matrix) -> Result<(f64, f64)> {
    let evs = sym_eigenvalues(a)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &e in &evs {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    Ok((lo, hi))
}

/// All eigenvalues of a symmetric matrix (unsorted), via cyclic Jacobi.
pub fn sym_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    if a.rows != a.cols {
        return Err(CoreError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    let tol_sym = 1e-12 * a.max_abs().max(1.0);
    let mut max_asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((a.get(i, j) - a.get(j, i)).abs());
        }
    }
    if max_asym > tol_sym {
        return Err(CoreError::NotSymmetric {
            max_asym,
            tol: tol_sym,
        });
    }
    let mut m = a.clone();
    // Symmetrize exactly so rotations preserve symmetry bit-for-bit.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, avg);
            m.set(j, i, avg);
        }
    }
    let fro = m.frobenius_norm().max(1e-300);
    let stop = 1e-14 * fro;
    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = m.get(i, j).mul_add(m.get(i, j), off);
            }
        }
        if off.sqrt() <= stop {
            return Ok((0..n).map(|i| m.get(i, i)).collect());
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= stop / (n as f64) {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q.
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
            }
        }
    }
    Err(CoreError::NoConverge {
        context: "jacobi eigenvalue sweeps",
        iters: max_sweeps,
    })
}

/// All singular values of `a` (unsorted), via eigenvalues of `AᵀA`.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    let ata = matmul(&a.transpose(), a)?;
    let evs = sym_eigenvalues(&ata)?;
    Ok(evs.iter().map(|e| e.max(0.0).sqrt()).collect())
}

// ─── Linear solve (Gaussian elimination) ─────────────────────────────────

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.rows != a.cols {
        return Err(CoreError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if b.len() != a.rows {
        return Err(CoreError::InvalidArgument(format!(
            "solve: matrix is {}x{} but rhs has length {}",
            a.rows,
            a.cols,
            b.len()
        )));
    }
    let n = a.rows;
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let scale = m.max_abs().max(1e-300);
    for col in 0..n {
        let mut piv = col;
        let mut best = m.get(col, col).abs();
        for r in (col + 1)..n {
            let v = m.get(r, col).abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best <= f64::EPSILON * (n as f64) * scale {
            return Err(CoreError::Singular { pivot: best, col });
        }
        if piv != col {
            for j in 0..n {
                let tmp = m.get(col, j);
                m.set(col, j, m.get(piv, j));
                m.set(piv, j, tmp);
            }
            rhs.swap(col, piv);
        }
        let d = m.get(col, col);
        for r in (col + 1)..n {
            let f = m.get(r, col) / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                let v = m.get(r, j) - f * m.get(col, j);
                m.set(r, j, v);
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        for (j, xj) in x.iter().enumerate().skip(i + 1) {
            acc -= m.get(i, j) * xj;
        }
        x[i] = acc / m.get(i, i);
    }
    Ok(x)
}

// ─── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use approx::assert_relative_eq;

    /// Naive triple-loop reference with the same per-element operation
    /// (fused multiply-add, increasing k).
    fn matmul_naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut c = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0f64;
                for k in 0..a.cols() {
                    acc = a.get(i, k).mul_add(b.get(k, j), acc);
                }
                c.set(i, j, acc);
            }
        }
        c
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    #[test]
    fn matmul_matches_naive_bitwise() {
        let mut rng = RngStream::new(1, 1);
        // Cover full tiles, 8-wide tails, scalar tails, and ragged rows.
        let shapes = [
            (4, 4, 4),
            (5, 7, 3),
            (1, 1, 1),
            (3, 2, 39),
            (13, 17, 41),
            (64, 64, 64),
            (33, 50, 70),
            (128, 256, 10),
            (31, 100, 257),
        ];
        for (m, k, n) in shapes {
            let a = random_matrix(m, k, &mut rng);
            let b = random_matrix(k, n, &mut rng);
            let c = matmul(&a, &b).unwrap();
            let r = matmul_naive(&a, &b);
            assert_eq!(c.data(), r.data(), "shape ({m},{k},{n}) not bit-identical");
        }
    }

    #[test]
    fn matmul_known_values() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_dim_mismatch_errors() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        assert!(matches!(
            matmul(&a, &b),
            Err(CoreError::DimMismatch { .. })
        ));
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(CoreError::NonFinite { .. })
        ));
    }

    #[test]
    fn transpose_involution() {
        let mut rng = RngStream::new(2, 2);
        let a = random_matrix(7, 11, &mut rng);
        assert_eq!(a.transpose().transpose().data(), a.data());
        assert_eq!(a.transpose().get(3, 5), a.get(5, 3));
    }

    #[test]
    fn matvec_agrees_with_matmul() {
        let mut rng = RngStream::new(3, 3);
        let a = random_matrix(9, 14, &mut rng);
        let x: Vec<f64> = (0..14).map(|_| rng.normal()).collect();
        let xm = Matrix::from_vec(14, 1, x.clone()).unwrap();
        let via_mm = matmul(&a, &xm).unwrap();
        let via_mv = matvec(&a, &x).unwrap();
        for (i, &v) in via_mv.iter().enumerate() {
            assert_relative_eq!(via_mm.get(i, 0), v, max_relative = 1e-15);
        }
    }

    #[test]
    fn matvec_t_is_transpose_product() {
        let mut rng = RngStream::new(4, 4);
        let a = random_matrix(6, 9, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let direct = matvec(&a.transpose(), &x).unwrap();
        let fused = matvec_t(&a, &x).unwrap();
        for (d, f) in direct.iter().zip(&fused) {
            assert_relative_eq!(d, f, max_relative = 1e-13);
        }
    }

    #[test]
    fn frobenius_known() {
        let a = Matrix::from_vec(2, 2, vec![3.0, 0.0, 4.0, 0.0]).unwrap();
        assert_relative_eq!(a.frobenius_norm(), 5.0, max_relative = 1e-15);
    }

    #[test]
    fn sym_eig_known_2x2() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let a = Matrix::from_vec(2, 2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let (lo, hi) = sym_eig_extremes(&a).unwrap();
        assert_relative_eq!(lo, 1.0, max_relative = 1e-12);
        assert_relative_eq!(hi, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn sym_eig_known_3x3() {
        // diag(5, -2, 7) conjugated by permutation stays {5, -2, 7}.
        let a = Matrix::from_vec(3, 3, vec![5.0, 0.0, 0.0, 0.0, 7.0, 0.0, 0.0, 0.0, -2.0]).unwrap();
        let (lo, hi) = sym_eig_extremes(&a).unwrap();
        assert_relative_eq!(lo, -2.0, max_relative = 1e-12);
        assert_relative_eq!(hi, 7.0, max_relative = 1e-12);
    }

    #[test]
    fn sym_eig_trace_and_det_invariants() {
        // Eigenvalues of a random symmetric matrix must reproduce trace and
        // Frobenius norm (sum and sum of squares) — an independent check
        // that needs no eigen-decomposition oracle.
        let mut rng = RngStream::new(5, 5);
        for n in [2usize, 3, 5, 8, 13] {
            let g = random_matrix(n, n, &mut rng);
            let a = {
                let mut s = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        s.set(i, j, 0.5 * (g.get(i, j) + g.get(j, i)));
                    }
                }
                s
            };
            let evs = sym_eigenvalues(&a).unwrap();
            let trace: f64 = (0..n).map(|i| a.get(i, i)).sum();
            let ev_sum: f64 = evs.iter().sum();
            assert_relative_eq!(trace, ev_sum, max_relative = 1e-10, epsilon = 1e-10);
            let fro2: f64 = a.data().iter().map(|v| v * v).sum();
            let ev_sq: f64 = evs.iter().map(|e| e * e).sum();
            assert_relative_eq!(fro2, ev_sq, max_relative = 1e-10, epsilon = 1e-10);
        }
    }

    #[test]
    fn sym_eig_rejects_asymmetric() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 0.5, 0.1, 1.0]).unwrap();
        assert!(matches!(
            sym_eigenvalues(&a),
            Err(CoreError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn top_singular_matches_jacobi_oracle() {
        // Independent oracle: singular values from Jacobi eigenvalues of
        // AᵀA.  100 random matrices of mixed shapes.
        let mut rng = RngStream::new(6, 6);
        for trial in 0..100 {
            let m = 2 + (trial % 7);
            let n = 2 + (trial % 5);
            let a = random_matrix(m, n, &mut rng);
            let svs = singular_values(&a).unwrap();
            let oracle = svs.iter().fold(0.0f64, |acc, s| acc.max(*s));
            let ts = top_singular(&a, 10_000, 1e-13, None).unwrap();
            assert!(ts.converged, "power iteration failed to converge");
            assert_relative_eq!(ts.sigma, oracle, max_relative = 1e-10, epsilon = 1e-12);
            // u, v are unit vectors with A v = sigma u.
            assert_relative_eq!(norm2(&ts.u), 1.0, max_relative = 1e-10);
            assert_relative_eq!(norm2(&ts.v), 1.0, max_relative = 1e-10);
            let av = matvec(&a, &ts.v).unwrap();
            for (x, y) in av.iter().zip(&ts.u) {
                assert_relative_eq!(*x, ts.sigma * y, epsilon = 1e-8 * ts.sigma.max(1.0));
            }
        }
    }

    #[test]
    fn top_singular_zero_matrix() {
        let a = Matrix::zeros(3, 4);
        let ts = top_singular(&a, 100, 1e-12, None).unwrap();
        assert_eq!(ts.sigma, 0.0);
        assert!(ts.converged);
    }

    #[test]
    fn top_singular_warm_start_converges_faster() {
        let mut rng = RngStream::new(7, 7);
        let a = random_matrix(32, 32, &mut rng);
        let cold = top_singular(&a, 10_000, 1e-13, None).unwrap();
        // Perturb slightly and re-run warm vs cold.
        let mut b = a.clone();
        b.data_mut()[0] += 1e-3;
        let warm = top_singular(&b, 10_000, 1e-13, Some(&cold.v)).unwrap();
        let cold2 = top_singular(&b, 10_000, 1e-13, None).unwrap();
        assert_relative_eq!(warm.sigma, cold2.sigma, max_relative = 1e-9);
        assert!(
            warm.iters <= cold2.iters,
            "warm {} vs cold {}",
            warm.iters,
            cold2.iters
        );
    }

    #[test]
    fn solve_known_system() {
        // x + 2y = 5; 3x - y = 1  =>  x = 1, y = 2.
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, -1.0]).unwrap();
        let x = solve(&a, &[5.0, 1.0]).unwrap();
        assert_relative_eq!(x[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(x[1], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn solve_residual_small_random() {
        let mut rng = RngStream::new(8, 8);
        for n in [2usize, 4, 9, 16] {
            let a = {
                // Diagonally dominated so the system is well-conditioned.
                let mut m = random_matrix(n, n, &mut rng);
                for i in 0..n {
                    let v = m.get(i, i);
                    m.set(i, i, v + n as f64);
                }
                m
            };
            let xtrue: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let b = matvec(&a, &xtrue).unwrap();
            let x = solve(&a, &b).unwrap();
            for (xi, ti) in x.iter().zip(&xtrue) {
                assert_relative_eq!(xi, ti, max_relative = 1e-10, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn solve_singular_errors() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(solve(&a, &[1.0, 2.0]), Err(CoreError::Singular { .. })));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn matmul_blocked_equals_naive(seed in 0u64..500) {
            let mut rng = RngStream::new(seed, 13);
            let m = 1 + (rng.gen_range(40) as usize);
            let k = 1 + (rng.gen_range(40) as usize);
            let n = 1 + (rng.gen_range(70) as usize);
            let a = random_matrix(m, k, &mut rng);
            let b = random_matrix(k, n, &mut rng);
            let c = matmul(&a, &b).unwrap();
            let r = matmul_naive(&a, &b);
            proptest::prop_assert_eq!(c.data(), r.data());
        }
    }
}
