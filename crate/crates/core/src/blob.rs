//! The framework's storage block: a pair of same-shaped tensors, `data` for
//! values flowing forward and `diff` for gradients flowing back.

use crate::error::{Error, Result};
use crate::tensor::{MatrixView, MatrixViewMut, Shape, Tensor};

#[derive(Clone, Debug)]
pub struct Blob {
    shape: Shape,
    data: Tensor,
    diff: Tensor,
}

impl Blob {
    /// Zero-filled data and diff.
    pub fn new(shape: Shape) -> Self {
        let data = Tensor::new(shape.clone(), 0.0);
        let diff = Tensor::new(shape.clone(), 0.0);
        Blob { shape, data, diff }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        Ok(Blob::new(Shape::new(dims)?))
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn count(&self) -> usize {
        self.shape.count()
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Tensor {
        &mut self.data
    }

    pub fn diff(&self) -> &Tensor {
        &self.diff
    }

    pub fn diff_mut(&mut self) -> &mut Tensor {
        &mut self.diff
    }

    /// Simultaneous access; data and diff never alias.
    pub fn data_and_diff_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        (&mut self.data, &mut self.diff)
    }

    /// 2-D view of `data`. With `transposed`, a materialized transposed copy
    /// of the `rows x cols` interpretation is returned (shape cols x rows).
    pub fn data_as_matrix(
        &self,
        rows: usize,
        cols: usize,
        transposed: bool,
    ) -> Result<MatrixView<'_>> {
        matrix_of(&self.data, rows, cols, transposed)
    }

    pub fn diff_as_matrix(
        &self,
        rows: usize,
        cols: usize,
        transposed: bool,
    ) -> Result<MatrixView<'_>> {
        matrix_of(&self.diff, rows, cols, transposed)
    }

    pub fn data_as_matrix_mut(&mut self, rows: usize, cols: usize) -> Result<MatrixViewMut<'_>> {
        self.data.as_matrix_mut(rows, cols)
    }

    pub fn diff_as_matrix_mut(&mut self, rows: usize, cols: usize) -> Result<MatrixViewMut<'_>> {
        self.diff.as_matrix_mut(rows, cols)
    }

    /// `data[i] -= diff[i]`; the solver scales diff beforehand.
    pub fn update(&mut self) {
        for (d, g) in self.data.data_mut().iter_mut().zip(self.diff.data()) {
            *d -= g;
        }
    }

    pub fn zero_diff(&mut self) {
        self.diff.fill(0.0);
    }
}

fn matrix_of(t: &Tensor, rows: usize, cols: usize, transposed: bool) -> Result<MatrixView<'_>> {
    if !transposed {
        return t.as_matrix(rows, cols);
    }
    // Materialized copy; none of the eight blocks mutates a transposed view,
    // so no write-back path exists.
    let mut out = vec![0.0f32; t.len()];
    if rows.checked_mul(cols) != Some(t.len()) {
        return Err(Error::ShapeMismatch(format!(
            "{rows}x{cols} view needs {} elements, storage has {}",
            rows.saturating_mul(cols),
            t.len()
        )));
    }
    crate::tensor::transpose_into(rows, cols, t.data(), &mut out);
    MatrixView::from_owned(cols, rows, out)
}
