//! Uniform periodic grid on the 2n-torus and its finite-difference stencils.
//!
//! Axes are numbered `1..=2n`. Values are stored row-major with axis 1
//! slowest and axis 2n fastest. All stencils are second-order central
//! differences with periodic wraparound, written as differences of
//! neighbouring values so that constant fields differentiate to exactly zero.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{DhymError, Result};
use crate::linalg::{generalized_symmetric_eigenvalues, RMatrix, MAX_N, MAX_REAL};

/// Period of every axis.
pub const PERIOD: f64 = 2.0 * PI;
/// Coarsest admissible resolution.
pub const MIN_POINTS_PER_AXIS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridSpec {
    n: usize,
    points: usize,
}

impl GridSpec {
    /// A grid of `points_per_axis^(2n)` points for complex dimension `n`.
    ///
    /// Resolutions whose spacing does not multiply back to exactly `2π` in
    /// `f64` are rejected; powers of two always qualify.
    pub fn new(n: usize, points_per_axis: usize) -> Result<Self> {
        if n == 0 || n > MAX_N {
            return Err(DhymError::domain(format!(
                "complex dimension must lie in [1, {MAX_N}], got {n}"
            )));
        }
        if points_per_axis < MIN_POINTS_PER_AXIS {
            return Err(DhymError::domain(format!(
                "points_per_axis must be at least {MIN_POINTS_PER_AXIS}, got {points_per_axis}"
            )));
        }
        let spacing = PERIOD / points_per_axis as f64;
        if spacing * points_per_axis as f64 != PERIOD {
            return Err(DhymError::domain(format!(
                "spacing 2π/{points_per_axis} does not multiply back to 2π exactly; choose another resolution"
            )));
        }
        (points_per_axis as u128)
            .checked_pow(2 * n as u32)
            .filter(|&t| t <= usize::MAX as u128)
            .ok_or_else(|| DhymError::domain("grid too large"))?;
        Ok(GridSpec {
            n,
            points: points_per_axis,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn real_dim(&self) -> usize {
        2 * self.n
    }

    #[inline]
    pub fn points_per_axis(&self) -> usize {
        self.points
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        PERIOD / self.points as f64
    }

    /// Total number of grid points.
    #[inline]
    pub fn len(&self) -> usize {
        self.points.pow(2 * self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn check_axis(&self, axis: usize) -> Result<()> {
        if axis == 0 || axis > self.real_dim() {
            Err(DhymError::domain(format!(
                "axis {axis} outside [1, {}]",
                self.real_dim()
            )))
        } else {
            Ok(())
        }
    }

    /// Linear stride of a (1-based) axis.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.points.pow((self.real_dim() - axis) as u32)
    }

    /// Integer coordinate of a point along a (1-based) axis.
    #[inline]
    pub fn coord_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.stride(axis)) % self.points
    }

    /// Physical coordinates `x^1..x^{2n}` of a point; entries past `2n` are zero.
    pub fn coords(&self, idx: usize) -> [f64; MAX_REAL] {
        let h = self.spacing();
        let mut x = [0.0; MAX_REAL];
        let mut rem = idx;
        for axis in (1..=self.real_dim()).rev() {
            x[axis - 1] = (rem % self.points) as f64 * h;
            rem /= self.points;
        }
        x
    }

    /// Index of the neighbour one step forward (`+1`) or backward (`-1`) along `axis`.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, forward: bool) -> usize {
        let stride = self.stride(axis);
        let c = (idx / stride) % self.points;
        if forward {
            if c + 1 == self.points {
                idx - c * stride
            } else {
                idx + stride
            }
        } else if c == 0 {
            idx + (self.points - 1) * stride
        } else {
            idx - stride
        }
    }

    /// Index shifted cyclically by `k` points along `axis`.
    pub fn shifted(&self, idx: usize, axis: usize, k: isize) -> usize {
        let stride = self.stride(axis);
        let c = (idx / stride) % self.points;
        let p = self.points as isize;
        let nc = ((c as isize + k) % p + p) % p;
        idx - c * stride + nc as usize * stride
    }
}

/// Real values sampled on a [`GridSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(DhymError::GridMismatch(format!(
                "expected {} values, got {}",
                spec.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DhymError::domain(format!("non-finite value at point {pos}")));
        }
        Ok(ScalarField { spec, values })
    }

    pub fn constant(spec: GridSpec, c: f64) -> Self {
        ScalarField {
            spec,
            values: vec![c; spec.len()],
        }
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self::constant(spec, 0.0)
    }

    /// Samples `f` at the physical coordinates of every point.
    pub fn from_fn<F>(spec: GridSpec, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let d = spec.real_dim();
        let values = (0..spec.len())
            .into_par_iter()
            .map(|idx| f(&spec.coords(idx)[..d]))
            .collect();
        ScalarField { spec, values }
    }

    /// Field from per-point values computed by `f(idx)`.
    pub fn from_index_fn<F>(spec: GridSpec, f: F) -> Self
    where
        F: Fn(usize) -> f64 + Sync,
    {
        let values = (0..spec.len()).into_par_iter().map(&f).collect();
        ScalarField { spec, values }
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        ScalarField {
            spec: self.spec,
            values: self.values.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self> {
        self.require_same_grid(other)?;
        Ok(ScalarField {
            spec: self.spec,
            values: self
                .values
                .par_iter()
                .zip(other.values.par_iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_constant(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn require_same_grid(&self, other: &ScalarField) -> Result<()> {
        require_grid(&self.spec, &other.spec)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the smallest value (first one on ties).
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v < self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Uniform-weight average, the discrete stand-in for `∫_M · χⁿ` with unit volume.
    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }

    /// The field shifted so that its mean vanishes.
    pub fn mean_zero(&self) -> Self {
        let m = self.mean();
        self.map(|v| v - m)
    }

    /// True when every value equals the first one bit-exactly.
    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|v| *v == self.values[0])
    }

    /// Central finite difference of order 1 or 2 along `axis`.
    pub fn diff(&self, axis: usize, order: u8) -> Result<Self> {
        self.spec.check_axis(axis)?;
        let stencil: fn(&[f64], &GridSpec, usize, usize) -> f64 = match order {
            1 => first_derivative,
            2 => second_derivative,
            _ => {
                return Err(DhymError::domain(format!(
                    "derivative order must be 1 or 2, got {order}"
                )))
            }
        };
        let spec = self.spec;
        let v = &self.values;
        Ok(Self::from_index_fn(spec, |idx| stencil(v, &spec, idx, axis)))
    }

    /// Mixed second difference along two distinct axes (cross stencil). Equal
    /// axes fall back to the pure second difference. Symmetric in its axes
    /// bit-for-bit.
    pub fn mixed_diff(&self, axis_a: usize, axis_b: usize) -> Result<Self> {
        self.spec.check_axis(axis_a)?;
        self.spec.check_axis(axis_b)?;
        let spec = self.spec;
        let v = &self.values;
        Ok(Self::from_index_fn(spec, |idx| {
            mixed_derivative(v, &spec, idx, axis_a, axis_b)
        }))
    }

    /// Per-point largest eigenvalue μ₁ of the coordinate Hessian relative to
    /// a real metric.
    pub fn real_hessian_eigen_max(&self, metric: &(impl RealMetric + ?Sized)) -> Result<Self> {
        let spec = self.spec;
        let d = spec.real_dim();
        let v = &self.values;
        let values: Result<Vec<f64>> = (0..spec.len())
            .into_par_iter()
            .map(|idx| {
                let local = LocalDerivatives::at(v, &spec, idx);
                let hess = RMatrix::from_fn(d, |a, b| local.second[a][b]);
                let g = metric.metric_at(idx);
                generalized_symmetric_eigenvalues(&hess, &g).map(|vals| vals[0])
            })
            .collect();
        Ok(ScalarField {
            spec,
            values: values?,
        })
    }
}

pub(crate) fn require_grid(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(DhymError::GridMismatch(format!(
            "n={} N={} vs n={} N={}",
            a.n(),
            a.points_per_axis(),
            b.n(),
            b.points_per_axis()
        )))
    }
}

/// Arithmetic mean with a fixed summation order.
pub fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Pairwise summation in fixed-size blocks; deterministic and accurate enough
/// that the mean of a resolved Fourier mode vanishes to machine precision.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 256;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// A symmetric positive definite real metric on the 2n real directions, per point.
pub trait RealMetric: Sync {
    fn metric_at(&self, idx: usize) -> RMatrix;
}

/// Real metric given either uniformly or as a per-point table.
#[derive(Clone, Debug)]
pub enum MetricField {
    Uniform(RMatrix),
    Pointwise(Vec<RMatrix>),
}

impl RealMetric for MetricField {
    fn metric_at(&self, idx: usize) -> RMatrix {
        match self {
            MetricField::Uniform(m) => *m,
            MetricField::Pointwise(v) => v[idx],
        }
    }
}

#[inline]
pub fn first_derivative(v: &[f64], spec: &GridSpec, idx: usize, axis: usize) -> f64 {
    let p = v[spec.neighbor(idx, axis, true)];
    let m = v[spec.neighbor(idx, axis, false)];
    (p - m) / (2.0 * spec.spacing())
}

#[inline]
pub fn second_derivative(v: &[f64], spec: &GridSpec, idx: usize, axis: usize) -> f64 {
    let h = spec.spacing();
    let c = v[idx];
    let p = v[spec.neighbor(idx, axis, true)];
    let m = v[spec.neighbor(idx, axis, false)];
    ((p - c) - (c - m)) / (h * h)
}

#[inline]
pub fn mixed_derivative(v: &[f64], spec: &GridSpec, idx: usize, axis_a: usize, axis_b: usize) -> f64 {
    if axis_a == axis_b {
        return second_derivative(v, spec, idx, axis_a);
    }
    let (a, b) = if axis_a < axis_b { (axis_a, axis_b) } else { (axis_b, axis_a) };
    let h = spec.spacing();
    let ap = spec.neighbor(idx, a, true);
    let am = spec.neighbor(idx, a, false);
    let pp = v[spec.neighbor(ap, b, true)];
    let pm = v[spec.neighbor(ap, b, false)];
    let mp = v[spec.neighbor(am, b, true)];
    let mm = v[spec.neighbor(am, b, false)];
    ((pp - pm) - (mp - mm)) / (4.0 * h * h)
}

/// All first and second differences of a field at one point.
#[derive(Clone, Copy, Debug)]
pub struct LocalDerivatives {
    pub first: [f64; MAX_REAL],
    pub second: [[f64; MAX_REAL]; MAX_REAL],
}

impl LocalDerivatives {
    pub fn at(v: &[f64], spec: &GridSpec, idx: usize) -> Self {
        let d = spec.real_dim();
        let mut first = [0.0; MAX_REAL];
        let mut second = [[0.0; MAX_REAL]; MAX_REAL];
        for a in 1..=d {
            first[a - 1] = first_derivative(v, spec, idx, a);
            second[a - 1][a - 1] = second_derivative(v, spec, idx, a);
            for b in (a + 1)..=d {
                let m = mixed_derivative(v, spec, idx, a, b);
                second[a - 1][b - 1] = m;
                second[b - 1][a - 1] = m;
            }
        }
        LocalDerivatives { first, second }
    }
}
