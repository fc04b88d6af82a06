use crate::error::{Error, Result};

/// Extents and physical spacing of a dense 2D or 3D grid.
///
/// Voxels are stored x-fastest: `index = x + nx * (y + ny * z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridShape {
    dims: Vec<usize>,
    spacing: Vec<f64>,
}

impl GridShape {
    /// Grid with unit spacing.
    pub fn new(dims: &[usize]) -> Result<Self> {
        Self::with_spacing(dims, &vec![1.0; dims.len()])
    }

    pub fn with_spacing(dims: &[usize], spacing: &[f64]) -> Result<Self> {
        if dims.len() != 2 && dims.len() != 3 {
            return Err(Error::invalid(format!(
                "grid dimension must be 2 or 3, got {}",
                dims.len()
            )));
        }
        if spacing.len() != dims.len() {
            return Err(Error::invalid(format!(
                "spacing has {} components for a {}-D grid",
                spacing.len(),
                dims.len()
            )));
        }
        if let Some(n) = dims.iter().find(|&&n| n < 2) {
            return Err(Error::invalid(format!("grid extent {n} < 2")));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid(format!("spacing {spacing:?} must be finite and positive")));
        }
        Ok(Self {
            dims: dims.to_vec(),
            spacing: spacing.to_vec(),
        })
    }

    #[inline]
    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Number of voxels.
    #[inline]
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    /// Always false; grids have at least 2 voxels per axis.
    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Extents padded to three axes (missing axes have extent 1).
    #[inline]
    pub(crate) fn extents3(&self) -> [usize; 3] {
        [
            self.dims[0],
            self.dims[1],
            if self.dims.len() == 3 { self.dims[2] } else { 1 },
        ]
    }

    /// Linear index strides for each of the three padded axes.
    #[inline]
    pub(crate) fn strides3(&self) -> [usize; 3] {
        let [nx, ny, _] = self.extents3();
        [1, nx, nx * ny]
    }

    #[inline]
    pub fn index(&self, coords: &[usize]) -> usize {
        let s = self.strides3();
        coords.iter().zip(s.iter()).map(|(c, s)| c * s).sum()
    }

    /// Grid coordinates of a linear index, padded to three axes.
    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.extents3();
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// True when every active coordinate is at least `margin` voxels from the border.
    pub fn is_interior(&self, index: usize, margin: usize) -> bool {
        let c = self.coords(index);
        self.dims
            .iter()
            .enumerate()
            .all(|(a, &n)| c[a] >= margin && c[a] + margin < n)
    }

    /// Linear indices of voxels at least `margin` voxels from the border.
    pub fn interior_indices(&self, margin: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_interior(i, margin)).collect()
    }

    pub(crate) fn ensure_same(&self, other: &GridShape, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}
