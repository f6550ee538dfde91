//! Dense multi-dimensional containers: vector, matrix, cube and 4-D grid in
//! one `Tensor` type, row-major (last dimension fastest), single precision.

use std::borrow::Cow;

use crate::error::{Error, Result};

/// Maximum supported rank; NCHW covers every layer in the framework.
pub const MAX_RANK: usize = 4;

/// Validated list of extents. Every extent is >= 1 and the element count
/// fits in `usize`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::InvalidShape(format!(
                "rank must be 1..={MAX_RANK}, got {}",
                dims.len()
            )));
        }
        let mut count = 1usize;
        for &d in dims {
            if d == 0 {
                return Err(Error::InvalidShape(format!("zero extent in {dims:?}")));
            }
            count = count.checked_mul(d).ok_or_else(|| {
                Error::InvalidShape(format!("element count overflow in {dims:?}"))
            })?;
        }
        Ok(Shape {
            dims: dims.to_vec(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.dims[axis]
    }

    /// Total element count (product of extents).
    pub fn count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row-major strides; stride of the last axis is 1.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.dims.len()];
        for axis in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * self.dims[axis + 1];
        }
        strides
    }

    /// Flat offset of a full coordinate under row-major layout.
    pub fn offset(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dims.len());
        let mut flat = 0;
        let mut stride = 1;
        for axis in (0..self.dims.len()).rev() {
            debug_assert!(coords[axis] < self.dims[axis]);
            flat += coords[axis] * stride;
            stride *= self.dims[axis];
        }
        flat
    }
}

/// Contiguous row-major f32 storage plus its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    /// All elements set to `fill`.
    pub fn new(shape: Shape, fill: f32) -> Self {
        let count = shape.count();
        Tensor {
            shape,
            data: vec![fill; count],
        }
    }

    /// Convenience constructor validating the extents.
    pub fn filled(dims: &[usize], fill: f32) -> Result<Self> {
        Ok(Tensor::new(Shape::new(dims)?, fill))
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Tensor::filled(dims, 0.0)
    }

    pub fn from_vec(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.count() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{dims:?} implies {} elements, got {}",
                shape.count(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn fill(&mut self, value: f32) {
        self.data.fill(value);
    }

    /// Same flat element order under a new shape. Zero-copy: consumes `self`.
    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.count() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {} elements to {dims:?}",
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Read-only 2-D window over the flat storage.
    pub fn as_matrix(&self, rows: usize, cols: usize) -> Result<MatrixView<'_>> {
        MatrixView::from_slice(rows, cols, &self.data)
    }

    /// Writable 2-D window over the flat storage.
    pub fn as_matrix_mut(&mut self, rows: usize, cols: usize) -> Result<MatrixViewMut<'_>> {
        MatrixViewMut::from_slice(rows, cols, &mut self.data)
    }
}

/// Read view of a row-major `rows x cols` matrix. May borrow tensor storage
/// or own a materialized copy (transposed accessors).
#[derive(Debug)]
pub struct MatrixView<'a> {
    rows: usize,
    cols: usize,
    data: Cow<'a, [f32]>,
}

fn check_view(rows: usize, cols: usize, len: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidShape(format!(
            "matrix view {rows}x{cols} has a zero extent"
        )));
    }
    let want = rows.checked_mul(cols).ok_or_else(|| {
        Error::InvalidShape(format!("matrix view {rows}x{cols} overflows"))
    })?;
    if want != len {
        return Err(Error::ShapeMismatch(format!(
            "{rows}x{cols} view needs {want} elements, storage has {len}"
        )));
    }
    Ok(())
}

impl<'a> MatrixView<'a> {
    pub fn from_slice(rows: usize, cols: usize, data: &'a [f32]) -> Result<Self> {
        check_view(rows, cols, data.len())?;
        Ok(MatrixView {
            rows,
            cols,
            data: Cow::Borrowed(data),
        })
    }

    pub fn from_owned(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        check_view(rows, cols, data.len())?;
        Ok(MatrixView {
            rows,
            cols,
            data: Cow::Owned(data),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, i: usize, j: usize) -> f32 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Materialized transpose: out[j, i] == self[i, j].
    pub fn transposed(&self) -> Tensor {
        let mut out = vec![0.0f32; self.rows * self.cols];
        transpose_into(self.rows, self.cols, &self.data, &mut out);
        Tensor {
            shape: Shape::new(&[self.cols, self.rows]).expect("extents already validated"),
            data: out,
        }
    }
}

/// Write view of a row-major `rows x cols` matrix, always borrowing.
#[derive(Debug)]
pub struct MatrixViewMut<'a> {
    rows: usize,
    cols: usize,
    data: &'a mut [f32],
}

impl<'a> MatrixViewMut<'a> {
    pub fn from_slice(rows: usize, cols: usize, data: &'a mut [f32]) -> Result<Self> {
        check_view(rows, cols, data.len())?;
        Ok(MatrixViewMut { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        self.data
    }

    pub fn at(&self, i: usize, j: usize) -> f32 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f32) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = value;
    }

    pub fn as_view(&self) -> MatrixView<'_> {
        MatrixView {
            rows: self.rows,
            cols: self.cols,
            data: Cow::Borrowed(self.data),
        }
    }
}

/// `dst[j * rows + i] = src[i * cols + j]`, sequential copy.
pub fn transpose_into(rows: usize, cols: usize, src: &[f32], dst: &mut [f32]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for i in 0..rows {
        let src_row = &src[i * cols..(i + 1) * cols];
        for (j, &v) in src_row.iter().enumerate() {
            dst[j * rows + i] = v;
        }
    }
}

/// Spec-level transpose operation over a 2-D view.
pub fn transpose(m: &MatrixView<'_>) -> Tensor {
    m.transposed()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_tensor_fill() {
        let t = Tensor::filled(&[2, 3], 0.0).unwrap();
        assert_eq!(t.shape().dims(), &[2, 3]);
        assert_eq!(t.data(), &[0.0; 6]);

        let t = Tensor::filled(&[1], 7.5).unwrap();
        assert_eq!(t.data(), &[7.5]);

        let t = Tensor::filled(&[2, 2, 2], 1.0).unwrap();
        assert_eq!(t.data(), &[1.0; 8]);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Shape::new(&[2, 0]).is_err());
        assert!(Shape::new(&[]).is_err());
        assert!(Shape::new(&[1, 1, 1, 1, 1]).is_err());
    }

    #[test]
    fn row_major_flat_index() {
        // flat index of (i, j) in an RxC matrix is i*C + j
        let s = Shape::new(&[3, 5]).unwrap();
        assert_eq!(s.offset(&[1, 0]), 5);
        assert_eq!(s.offset(&[2, 4]), 14);
        assert_eq!(s.strides(), vec![5, 1]);

        let s4 = Shape::new(&[2, 3, 4, 5]).unwrap();
        assert_eq!(s4.strides(), vec![60, 20, 5, 1]);
        assert_eq!(s4.offset(&[1, 2, 3, 4]), 60 + 40 + 15 + 4);
    }

    #[test]
    fn reshape_preserves_flat_order() {
        let t = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = t.reshape(&[2, 2]).unwrap();
        assert_eq!(t.as_matrix(2, 2).unwrap().row(0), &[1.0, 2.0]);
        assert_eq!(t.as_matrix(2, 2).unwrap().row(1), &[3.0, 4.0]);

        let t = t.reshape(&[2, 3]);
        assert!(t.is_err());

        let t = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let flat_before = t.data().to_vec();
        let t = t.reshape(&[3, 2]).unwrap();
        assert_eq!(t.data(), &flat_before[..]);
    }

    #[test]
    fn reshape_count_mismatch_errors() {
        let t = Tensor::zeros(&[6]).unwrap();
        assert!(t.reshape(&[7]).is_err());
    }

    #[test]
    fn transpose_small() {
        let t = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let tt = transpose(&t.as_matrix(2, 2).unwrap());
        assert_eq!(tt.data(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(tt.shape().dims(), &[2, 2]);

        let row = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let col = transpose(&row.as_matrix(1, 3).unwrap());
        assert_eq!(col.shape().dims(), &[3, 1]);
        assert_eq!(col.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn transpose_is_involution() {
        let mut rng = crate::rng::Pcg32::new(11, 0);
        let data: Vec<f32> = (0..15).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let t = Tensor::from_vec(&[3, 5], data.clone()).unwrap();
        let once = transpose(&t.as_matrix(3, 5).unwrap());
        let twice = transpose(&once.as_matrix(5, 3).unwrap());
        assert_eq!(twice.data(), &data[..]);
    }

    #[test]
    fn as_matrix_row_major_and_errors() {
        let t = Tensor::from_vec(&[4], vec![10.0, 11.0, 12.0, 13.0]).unwrap();
        let m = t.as_matrix(2, 2).unwrap();
        // element (1, 0) is flat index 2
        assert_eq!(m.at(1, 0), 12.0);
        assert!(t.as_matrix(3, 2).is_err());
    }

    #[test]
    fn mut_view_writes_visible_in_tensor() {
        let mut t = Tensor::zeros(&[2, 2]).unwrap();
        {
            let mut m = t.as_matrix_mut(2, 2).unwrap();
            m.set(1, 1, 9.0);
        }
        assert_eq!(t.data()[3], 9.0);
    }
}
