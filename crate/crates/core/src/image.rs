//! Detector images.

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, row 0 at the top.
    pub data: Vec<f64>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ImageError {
    #[error("image shape mismatch: {0}x{1} vs {2}x{3}")]
    Shape(usize, usize, usize, usize),
    #[error("image count mismatch: {0} vs {1}")]
    Count(usize, usize),
    #[error("{rows}x{cols} does not divide {from_rows}x{from_cols}")]
    Indivisible {
        rows: usize,
        cols: usize,
        from_rows: usize,
        from_cols: usize,
    },
}

impl Image {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Image {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_data(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Image { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn same_shape(&self, o: &Image) -> Result<(), ImageError> {
        if self.rows == o.rows && self.cols == o.cols {
            Ok(())
        } else {
            Err(ImageError::Shape(self.rows, self.cols, o.rows, o.cols))
        }
    }

    /// Sums blocks of pixels down to `rows x cols`. Pixel values are solid
    /// angle integrals, so block sums are the exact coarse-pixel values.
    pub fn block_sum(&self, rows: usize, cols: usize) -> Result<Image, ImageError> {
        if rows == 0 || cols == 0 || !self.rows.is_multiple_of(rows) || !self.cols.is_multiple_of(cols) {
            return Err(ImageError::Indivisible {
                rows,
                cols,
                from_rows: self.rows,
                from_cols: self.cols,
            });
        }
        let fr = self.rows / rows;
        let fc = self.cols / cols;
        let mut out = Image::zeros(rows, cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[(r / fr) * cols + c / fc] += self.get(r, c);
            }
        }
        Ok(out)
    }
}

/// Checks that two image sets have matching counts and shapes.
pub fn check_shapes(a: &[Image], b: &[Image]) -> Result<(), ImageError> {
    if a.len() != b.len() {
        return Err(ImageError::Count(a.len(), b.len()));
    }
    for (x, y) in a.iter().zip(b) {
        x.same_shape(y)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_sum_preserves_total() {
        let img = Image::from_data(4, 6, (0..24).map(|x| x as f64).collect());
        let c = img.block_sum(2, 3).unwrap();
        assert_eq!(c.sum(), img.sum());
        assert_eq!(c.get(0, 0), 0.0 + 1.0 + 6.0 + 7.0);
        assert!(img.block_sum(3, 3).is_err());
    }
}
