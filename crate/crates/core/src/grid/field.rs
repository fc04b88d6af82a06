use crate::error::{Error, Result};
use crate::grid::GridShape;
use crate::scalar::Real;

/// Dense grid of real intensities (an image or the atlas).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T> {
    shape: GridShape,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn new(shape: GridShape, values: Vec<T>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::shape(format!(
                "scalar field has {} values for {} voxels",
                values.len(),
                shape.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn filled(shape: GridShape, value: T) -> Self {
        let values = vec![value; shape.len()];
        Self { shape, values }
    }

    pub fn zeros(shape: GridShape) -> Self {
        Self::filled(shape, T::zero())
    }

    /// Field whose value at each voxel is `f(coords)`.
    pub fn from_fn(shape: GridShape, mut f: impl FnMut([usize; 3]) -> T) -> Self {
        let values = (0..shape.len()).map(|i| f(shape.coords(i))).collect();
        Self { shape, values }
    }

    #[inline]
    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, coords: &[usize]) -> T {
        self.values[self.shape.index(coords)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::from_usize_lossy(self.len())
    }

    /// Converts to another scalar type.
    pub fn cast<U: Real>(&self) -> ScalarField<U> {
        ScalarField {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Dense grid of d-vectors in voxel units (velocity or displacement).
///
/// Components are interleaved per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<T> {
    shape: GridShape,
    values: Vec<T>,
}

impl<T: Real> VectorField<T> {
    pub fn new(shape: GridShape, values: Vec<T>) -> Result<Self> {
        let expected = shape.len() * shape.ndim();
        if values.len() != expected {
            return Err(Error::shape(format!(
                "vector field has {} components, expected {expected}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("vector field has non-finite components"));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: GridShape) -> Self {
        let values = vec![T::zero(); shape.len() * shape.ndim()];
        Self { shape, values }
    }

    /// Field whose vector at each voxel is `f(coords)` (first `d` entries used).
    pub fn from_fn(shape: GridShape, mut f: impl FnMut([usize; 3]) -> [T; 3]) -> Self {
        let d = shape.ndim();
        let mut values = Vec::with_capacity(shape.len() * d);
        for i in 0..shape.len() {
            let v = f(shape.coords(i));
            values.extend_from_slice(&v[..d]);
        }
        Self { shape, values }
    }

    pub fn constant(shape: GridShape, v: &[T]) -> Result<Self> {
        if v.len() != shape.ndim() {
            return Err(Error::invalid("constant vector has wrong dimension"));
        }
        let values = v.iter().copied().cycle().take(shape.len() * shape.ndim()).collect();
        Self::new(shape, values)
    }

    #[inline]
    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    #[inline]
    pub fn ndim(&self) -> usize {
        self.shape.ndim()
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Vector at voxel `index`, padded with zeros to three components.
    #[inline]
    pub fn at(&self, index: usize) -> [T; 3] {
        let d = self.ndim();
        let mut out = [T::zero(); 3];
        out[..d].copy_from_slice(&self.values[index * d..index * d + d]);
        out
    }

    /// Component `c` of every voxel as a scalar field.
    pub fn component(&self, c: usize) -> ScalarField<T> {
        let d = self.ndim();
        ScalarField {
            shape: self.shape.clone(),
            values: self.values.iter().skip(c).step_by(d).copied().collect(),
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| v * s).collect(),
        }
    }

    /// Largest Euclidean vector norm over all voxels.
    pub fn max_norm(&self) -> T {
        self.values
            .chunks(self.ndim())
            .map(|c| c.iter().map(|&x| x * x).sum::<T>().sqrt())
            .fold(T::zero(), T::max)
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn add_scaled(&mut self, other: &Self, s: T) {
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> VectorField<U> {
        VectorField {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    /// Builds without the finiteness check; used by hot loops whose inputs are finite.
    pub(crate) fn from_raw(shape: GridShape, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), shape.len() * shape.ndim());
        Self { shape, values }
    }
}

/// Deformation `Φ(x) = x + u(x)` stored as its displacement `u` in voxel units.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationMap<T> {
    displacement: VectorField<T>,
}

impl<T: Real> DeformationMap<T> {
    pub fn identity(shape: GridShape) -> Self {
        Self {
            displacement: VectorField::zeros(shape),
        }
    }

    pub fn from_displacement(displacement: VectorField<T>) -> Self {
        Self { displacement }
    }

    /// Map built from an absolute-coordinate function `x -> Φ(x)`.
    pub fn from_fn(shape: GridShape, mut f: impl FnMut([T; 3]) -> [T; 3]) -> Self {
        let d = shape.ndim();
        let disp = VectorField::from_fn(shape, |c| {
            let x = [
                T::from_usize_lossy(c[0]),
                T::from_usize_lossy(c[1]),
                T::from_usize_lossy(c[2]),
            ];
            let y = f(x);
            let mut u = [T::zero(); 3];
            for a in 0..d {
                u[a] = y[a] - x[a];
            }
            u
        });
        Self { displacement: disp }
    }

    /// Uniform translation by `t` (voxel units).
    pub fn translation(shape: GridShape, t: &[T]) -> Result<Self> {
        Ok(Self {
            displacement: VectorField::constant(shape, t)?,
        })
    }

    #[inline]
    pub fn shape(&self) -> &GridShape {
        self.displacement.shape()
    }

    #[inline]
    pub fn displacement(&self) -> &VectorField<T> {
        &self.displacement
    }

    pub fn into_displacement(self) -> VectorField<T> {
        self.displacement
    }

    /// `Φ(x)` at grid voxel `index`, padded to three components.
    #[inline]
    pub fn point(&self, index: usize) -> [T; 3] {
        let c = self.shape().coords(index);
        let u = self.displacement.at(index);
        let mut p = [T::zero(); 3];
        for a in 0..self.shape().ndim() {
            p[a] = T::from_usize_lossy(c[a]) + u[a];
        }
        p
    }
}

/// Dense grid of segmentation labels; 0 is background, `1..=num_structures` are structures.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelField {
    shape: GridShape,
    labels: Vec<u32>,
    num_structures: u32,
}

impl LabelField {
    pub fn new(shape: GridShape, labels: Vec<u32>, num_structures: u32) -> Result<Self> {
        if labels.len() != shape.len() {
            return Err(Error::shape(format!(
                "label field has {} labels for {} voxels",
                labels.len(),
                shape.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > num_structures) {
            return Err(Error::invalid(format!(
                "label {l} exceeds structure count {num_structures}"
            )));
        }
        Ok(Self {
            shape,
            labels,
            num_structures,
        })
    }

    /// Infers the structure count from the largest label present.
    pub fn from_labels(shape: GridShape, labels: Vec<u32>) -> Result<Self> {
        let k = labels.iter().copied().max().unwrap_or(0);
        Self::new(shape, labels, k)
    }

    #[inline]
    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    #[inline]
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn num_structures(&self) -> u32 {
        self.num_structures
    }

    pub fn count(&self, label: u32) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub(crate) fn with_labels(&self, labels: Vec<u32>) -> Self {
        Self {
            shape: self.shape.clone(),
            labels,
            num_structures: self.num_structures,
        }
    }
}
