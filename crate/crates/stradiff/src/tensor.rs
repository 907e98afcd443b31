//! Dense row-major tensors of rank 0, 1, or 2 over `f64`.

use std::fmt;

/// Shape of a tensor: scalar, vector, or row-major matrix.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Shape::Scalar => write!(f, "scalar"),
            Shape::Vector(n) => write!(f, "vec[{n}]"),
            Shape::Matrix(r, c) => write!(f, "mat[{r}x{c}]"),
        }
    }
}

/// Dense tensor; `data.len() == shape.len()` always holds.
#[derive(Clone, PartialEq, Debug)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), shape.len(), "data length must match shape {shape}");
        Tensor { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: Shape::Scalar, data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: Shape::Vector(data.len()), data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::new(Shape::Matrix(rows, cols), data)
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![0.0; shape.len()] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a rank-0 tensor.
    pub fn as_scalar(&self) -> f64 {
        assert_eq!(self.shape, Shape::Scalar, "not a scalar: {}", self.shape);
        self.data[0]
    }

    /// Matrix entry (row-major).
    pub fn at(&self, i: usize, j: usize) -> f64 {
        match self.shape {
            Shape::Matrix(_, c) => self.data[i * c + j],
            _ => panic!("at() on non-matrix {}", self.shape),
        }
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        match self.shape {
            Shape::Matrix(_, c) => &mut self.data[i * c + j],
            _ => panic!("at_mut() on non-matrix {}", self.shape),
        }
    }

    /// Column `j` of a matrix as a vector.
    pub fn col(&self, j: usize) -> Tensor {
        match self.shape {
            Shape::Matrix(r, c) => {
                assert!(j < c, "column {j} out of range for {}", self.shape);
                Tensor::vector((0..r).map(|i| self.data[i * c + j]).collect())
            }
            _ => panic!("col() on non-matrix {}", self.shape),
        }
    }

    /// Stack equal-length vectors as the columns of a matrix.
    pub fn from_cols(cols: &[Tensor]) -> Tensor {
        assert!(!cols.is_empty());
        let r = cols[0].len();
        let c = cols.len();
        let mut data = vec![0.0; r * c];
        for (j, col) in cols.iter().enumerate() {
            assert_eq!(col.shape, Shape::Vector(r), "columns must be equal-length vectors");
            for i in 0..r {
                data[i * c + j] = col.data[i];
            }
        }
        Tensor::matrix(r, c, data)
    }

    pub fn transposed(&self) -> Tensor {
        match self.shape {
            Shape::Matrix(r, c) => {
                let mut out = Tensor::zeros(Shape::Matrix(c, r));
                for i in 0..r {
                    for j in 0..c {
                        out.data[j * r + i] = self.data[i * c + j];
                    }
                }
                out
            }
            _ => panic!("transposed() on non-matrix {}", self.shape),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Squared Frobenius / Euclidean norm.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_lengths() {
        assert_eq!(Shape::Scalar.len(), 1);
        assert_eq!(Shape::Vector(5).len(), 5);
        assert_eq!(Shape::Matrix(3, 4).len(), 12);
    }

    #[test]
    fn col_extraction() {
        let m = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m.col(0).data, vec![1.0, 4.0]);
        assert_eq!(m.col(2).data, vec![3.0, 6.0]);
        assert_eq!(m.at(1, 1), 5.0);
    }

    #[test]
    fn from_cols_round_trip() {
        let m = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rebuilt = Tensor::from_cols(&[m.col(0), m.col(1)]);
        assert_eq!(rebuilt, m);
    }

    #[test]
    #[should_panic(expected = "data length")]
    fn shape_mismatch_panics() {
        Tensor::new(Shape::Matrix(2, 2), vec![1.0, 2.0, 3.0]);
    }
}
