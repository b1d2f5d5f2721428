use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Samples stored as the columns of a `d × k` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T: Scalar> {
    points: DMatrix<T>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: DMatrix<T>) -> Self {
        Self { points }
    }

    /// Builds a cloud from row-major point records, one point per row.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "point {bad} has {} coordinates, expected {d}",
                rows[bad].len()
            )));
        }
        Ok(Self::new(DMatrix::from_fn(d, rows.len(), |i, j| rows[j][i])))
    }

    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.points
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.points
    }

    /// Cloud made of the given columns, in order.
    pub fn select(&self, columns: &[usize]) -> Self {
        Self::new(self.points.select_columns(columns))
    }
}

/// Point cloud with one nonnegative class label per column.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCloud<T: Scalar> {
    pub points: PointCloud<T>,
    pub labels: Vec<u32>,
}

impl<T: Scalar> LabeledCloud<T> {
    pub fn new(points: PointCloud<T>, labels: Vec<u32>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::CountMismatch(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn select(&self, columns: &[usize]) -> Self {
        Self {
            points: self.points.select(columns),
            labels: columns.iter().map(|&c| self.labels[c]).collect(),
        }
    }
}
