//! BLAS-lite primitives expressed as engine kernels: matrix product,
//! row-broadcast addition, scaled accumulation. No alpha/beta generality on
//! the product; the bias path is an explicit row-add kernel instead.

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::tensor::{MatrixView, MatrixViewMut, Tensor};

/// `c = a * b` (or `c += a * b` with `accumulate`). Parallel over rows of
/// `c`; within a row the k-loop is fixed ascending, so every output element
/// sees the same addition order under every backend.
pub fn gemm(
    eng: &Engine,
    a: &MatrixView<'_>,
    b: &MatrixView<'_>,
    c: &mut MatrixViewMut<'_>,
    accumulate: bool,
) -> Result<()> {
    let (m, k) = (a.rows(), a.cols());
    let (kb, n) = (b.rows(), b.cols());
    if k != kb || c.rows() != m || c.cols() != n {
        return Err(Error::ShapeMismatch(format!(
            "gemm {}x{} * {}x{} -> {}x{}",
            m,
            k,
            kb,
            n,
            c.rows(),
            c.cols()
        )));
    }
    let a_data = a.data();
    let b_data = b.data();
    eng.for_each_row(c, |i, c_row| {
        if !accumulate {
            c_row.fill(0.0);
        }
        let a_row = &a_data[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b_data[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
    });
    Ok(())
}

/// `c[i, j] += v[j]` for all rows i.
pub fn add_vector_to_rows(eng: &Engine, c: &mut MatrixViewMut<'_>, v: &[f32]) -> Result<()> {
    if v.len() != c.cols() {
        return Err(Error::ShapeMismatch(format!(
            "row-add vector length {} vs {} columns",
            v.len(),
            c.cols()
        )));
    }
    eng.for_each_row(c, |_, row| {
        for (cv, &bv) in row.iter_mut().zip(v) {
            *cv += bv;
        }
    });
    Ok(())
}

/// Batched product with a shared left factor: for every block b,
/// `c[b] = a * rhs[b]` (`+=` with `accumulate`), where `rhs` and `c` are
/// `batch` consecutive K x N / M x N blocks. `row_bias[m]`, when given, is
/// added to every element of output row m. One launch covers the whole
/// batch: parallel over all batch * M output rows, k ascending within a row.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batched_gemm_shared_a(
    eng: &Engine,
    a: &MatrixView<'_>,
    rhs: &[f32],
    c: &mut [f32],
    batch: usize,
    n: usize,
    accumulate: bool,
    row_bias: Option<&[f32]>,
) -> Result<()> {
    let (m, k) = (a.rows(), a.cols());
    if rhs.len() != batch * k * n || c.len() != batch * m * n {
        return Err(Error::ShapeMismatch(format!(
            "batched gemm: a {m}x{k}, rhs {} (want {}), c {} (want {})",
            rhs.len(),
            batch * k * n,
            c.len(),
            batch * m * n
        )));
    }
    if let Some(bias) = row_bias {
        if bias.len() != m {
            return Err(Error::ShapeMismatch("row bias length".into()));
        }
    }
    let a_data = a.data();
    eng.for_each_region(batch * m, c, |row_idx, c_row| {
        let block = row_idx / m;
        let i = row_idx % m;
        if !accumulate {
            c_row.fill(0.0);
        }
        let b_block = &rhs[block * k * n..(block + 1) * k * n];
        let a_row = &a_data[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b_block[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aik * bv;
            }
        }
        if let Some(bias) = row_bias {
            let bv = bias[i];
            for cv in c_row.iter_mut() {
                *cv += bv;
            }
        }
    });
    Ok(())
}

/// Batched accumulation `c += sum_b lhs[b] * rhs[b]^T`, where `lhs` holds
/// `batch` M x S blocks and `rhs` holds `batch` P x S blocks. Parallel over
/// the M rows of `c`; blocks and the shared S axis run in fixed ascending
/// order inside one invocation.
pub(crate) fn batched_gemm_acc_bt(
    eng: &Engine,
    lhs: &[f32],
    rhs: &[f32],
    batch: usize,
    s: usize,
    c: &mut MatrixViewMut<'_>,
) -> Result<()> {
    let (m, p) = (c.rows(), c.cols());
    if lhs.len() != batch * m * s || rhs.len() != batch * p * s {
        return Err(Error::ShapeMismatch(format!(
            "batched gemm-bt: lhs {} (want {}), rhs {} (want {})",
            lhs.len(),
            batch * m * s,
            rhs.len(),
            batch * p * s
        )));
    }
    eng.for_each_row(c, |i, c_row| {
        for block in 0..batch {
            let l_row = &lhs[(block * m + i) * s..(block * m + i + 1) * s];
            let r_block = &rhs[block * p * s..(block + 1) * p * s];
            for (cv, r_row) in c_row.iter_mut().zip(r_block.chunks_exact(s)) {
                let mut acc = 0.0f32;
                for (&lv, &rv) in l_row.iter().zip(r_row) {
                    acc += lv * rv;
                }
                *cv += acc;
            }
        }
    });
    Ok(())
}

/// `y = alpha * x + beta * y`, elementwise.
pub fn axpby(eng: &Engine, alpha: f32, x: &Tensor, beta: f32, y: &mut Tensor) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!(
            "axpby {:?} vs {:?}",
            x.shape().dims(),
            y.shape().dims()
        )));
    }
    let x_data = x.data();
    let n = x_data.len();
    eng.for_each_region(n, y.data_mut(), |i, slot| {
        slot[0] = alpha * x_data[i] + beta * slot[0];
    });
    Ok(())
}
