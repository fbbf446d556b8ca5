//! Almost Hermitian backgrounds on the torus and the complex Hessian.
//!
//! The almost complex structure is declared through a per-point
//! (1,0)-frame `e_i = Σ_α A_i^α ∂_α` and the metric through `χ_{ij̄}` in
//! that frame. The complex Hessian of a function is
//!
//! ```text
//! (∂∂̄u)(e_i, ē_j) = e_i ē_j u − [e_i, ē_j]^{(0,1)} u
//! ```
//!
//! Expanding with the frame coefficients gives
//! `H_ij = Σ_αβ A_i^α conj(A_j^β) ∂_α∂_β u + Σ_β T_ij^β ∂_β u` where
//! `T_ij^β = e_i(conj A_j^β) − Σ_k β_ij^k conj(A_k^β)` and `β_ij^k` are the
//! coefficients of the (0,1) part of the bracket on `ē_k`. Both `T` and `β`
//! are precomputed once per structure.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{DhymError, Result};
use crate::grid::{
    first_derivative, require_grid, GridSpec, LocalDerivatives, RealMetric, ScalarField,
};
use crate::io::FieldRecord;
use crate::linalg::{complex_inverse, min_eigenvalue, CMatrix, RMatrix, MAX_REAL};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Smallest `|det|` of the 2n×2n frame matrix `[A; conj A]` treated as independent.
pub const FRAME_DET_TOL: f64 = 1e-10;
/// Largest accepted discrepancy between stored and recomputed bracket coefficients.
pub const BRACKET_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub enum Preset {
    /// Constant frame `e_k = (∂_{2k−1} − i∂_{2k})/√2`; Kähler.
    Flat,
    /// `e_2 = flat e_2 + ε sin(x¹) flat e_1`, other fields flat; non-Kähler for ε ≠ 0.
    Twisted { epsilon: f64 },
    /// Frame read from field records; derivatives by central differences.
    Tabulated,
}

impl Preset {
    pub fn id(&self) -> &'static str {
        match self {
            Preset::Flat => "flat",
            Preset::Twisted { .. } => "twisted",
            Preset::Tabulated => "tabulated",
        }
    }
}

/// Frame data at one point (or one class of points sharing the same data).
#[derive(Clone, Debug)]
pub struct PointGeometry {
    n: usize,
    /// `A_i^α` at `i * 2n + α`.
    frame: Vec<Complex64>,
    chi: CMatrix,
    /// `β_ij^k` at `(i * n + j) * n + k`.
    bracket01: Vec<Complex64>,
    /// `T_ij^β` at `(i * n + j) * 2n + β`.
    first_order: Vec<Complex64>,
    /// `|det [A; conj A]|`.
    frame_det: f64,
    /// Real metric `2 Re Σ χ_ij θ^i(∂_α) conj θ^j(∂_β)`; `None` for a degenerate frame.
    real_metric: Option<RMatrix>,
}

impl PointGeometry {
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn frame(&self, i: usize, alpha: usize) -> Complex64 {
        self.frame[i * 2 * self.n + alpha]
    }

    #[inline]
    pub fn chi(&self) -> &CMatrix {
        &self.chi
    }

    #[inline]
    pub fn bracket01(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.bracket01[(i * self.n + j) * self.n + k]
    }

    #[inline]
    pub fn first_order(&self, i: usize, j: usize, beta: usize) -> Complex64 {
        self.first_order[(i * self.n + j) * 2 * self.n + beta]
    }

    pub fn frame_det(&self) -> f64 {
        self.frame_det
    }

    pub fn real_metric(&self) -> Option<&RMatrix> {
        self.real_metric.as_ref()
    }

    /// Raw (unsymmetrized) complex Hessian from first and second derivatives.
    pub fn complex_hessian(&self, first: &[f64], second: &[[f64; MAX_REAL]; MAX_REAL]) -> CMatrix {
        let n = self.n;
        let d = 2 * n;
        let mut h = CMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = ZERO;
                for a in 0..d {
                    let ai = self.frame(i, a);
                    if ai == ZERO {
                        continue;
                    }
                    let mut inner = ZERO;
                    for b in 0..d {
                        inner += self.frame(j, b).conj() * second[a][b];
                    }
                    s += ai * inner;
                }
                for b in 0..d {
                    s += self.first_order(i, j, b) * first[b];
                }
                h[(i, j)] = s;
            }
        }
        h
    }

    /// Applies `e_i` (or `ē_i` when `conjugate`) to a gradient.
    pub fn apply_vector(&self, i: usize, conjugate: bool, gradient: &[f64]) -> Complex64 {
        (0..2 * self.n)
            .map(|a| {
                let c = self.frame(i, a);
                (if conjugate { c.conj() } else { c }) * gradient[a]
            })
            .sum()
    }
}

fn full_frame(frame: &[Complex64], n: usize) -> Vec<Complex64> {
    let d = 2 * n;
    let mut m = vec![ZERO; d * d];
    for i in 0..n {
        for a in 0..d {
            m[i * d + a] = frame[i * d + a];
            m[(n + i) * d + a] = frame[i * d + a].conj();
        }
    }
    m
}

/// Coefficients of a real-coordinate vector `V` on `(e_1..e_n, ē_1..ē_n)`,
/// given `(M^T)^{-1}` for the full frame matrix `M`.
fn decompose(inv_t: &[Complex64], d: usize, v: &[Complex64]) -> Vec<Complex64> {
    (0..d)
        .map(|r| (0..d).map(|a| inv_t[r * d + a] * v[a]).sum())
        .collect()
}

/// `∂_α A_i^β` at `(α * n + i) * 2n + β`.
#[derive(Clone, Debug)]
pub struct FrameDerivatives(Vec<Complex64>);

impl FrameDerivatives {
    fn zeros(n: usize) -> Self {
        FrameDerivatives(vec![ZERO; 2 * n * n * 2 * n])
    }

    #[inline]
    pub fn get(&self, n: usize, alpha: usize, i: usize, beta: usize) -> Complex64 {
        self.0[(alpha * n + i) * 2 * n + beta]
    }

    fn set(&mut self, n: usize, alpha: usize, i: usize, beta: usize, v: Complex64) {
        self.0[(alpha * n + i) * 2 * n + beta] = v;
    }
}

/// Computes the (0,1) bracket coefficients `β_ij^k` of `[e_i, ē_j]` from the frame
/// and its derivatives. `None` when the frame is degenerate.
pub fn bracket_from_derivatives(
    frame: &[Complex64],
    derivs: &FrameDerivatives,
    n: usize,
) -> Option<Vec<Complex64>> {
    let d = 2 * n;
    let m = full_frame(frame, n);
    let mt: Vec<Complex64> = (0..d * d).map(|k| m[(k % d) * d + k / d]).collect();
    let (inv_t, det) = complex_inverse(&mt, d)?;
    if det.norm() <= FRAME_DET_TOL {
        return None;
    }
    let mut out = vec![ZERO; n * n * n];
    for i in 0..n {
        for j in 0..n {
            // [e_i, ē_j]^β = e_i(conj A_j^β) − ē_j(A_i^β)
            let v: Vec<Complex64> = (0..d)
                .map(|b| {
                    (0..d)
                        .map(|a| {
                            frame[i * d + a] * derivs.get(n, a, j, b).conj()
                                - frame[j * d + a].conj() * derivs.get(n, a, i, b)
                        })
                        .sum()
                })
                .collect();
            let coef = decompose(&inv_t, d, &v);
            for k in 0..n {
                out[(i * n + j) * n + k] = coef[n + k];
            }
        }
    }
    Some(out)
}

fn assemble_geometry(
    n: usize,
    frame: Vec<Complex64>,
    chi: CMatrix,
    bracket01: Vec<Complex64>,
    derivs: &FrameDerivatives,
) -> PointGeometry {
    let d = 2 * n;
    let mut first_order = vec![ZERO; n * n * d];
    for i in 0..n {
        for j in 0..n {
            for b in 0..d {
                let mut s = ZERO;
                for a in 0..d {
                    s += frame[i * d + a] * derivs.get(n, a, j, b).conj();
                }
                for k in 0..n {
                    s -= bracket01[(i * n + j) * n + k] * frame[k * d + b].conj();
                }
                first_order[(i * n + j) * d + b] = s;
            }
        }
    }
    let m = full_frame(&frame, n);
    let mt: Vec<Complex64> = (0..d * d).map(|k| m[(k % d) * d + k / d]).collect();
    let (frame_det, real_metric) = match complex_inverse(&mt, d) {
        Some((inv_t, det)) if det.norm() > FRAME_DET_TOL => {
            // θ^i(∂_α) = coefficient i of ∂_α.
            let theta: Vec<Complex64> = (0..d)
                .flat_map(|a| {
                    let mut e = vec![ZERO; d];
                    e[a] = Complex64::new(1.0, 0.0);
                    decompose(&inv_t, d, &e).into_iter().take(n)
                })
                .collect();
            let g = RMatrix::from_fn(d, |a, b| {
                let mut s = ZERO;
                for i in 0..n {
                    for j in 0..n {
                        s += chi[(i, j)] * theta[a * n + i] * theta[b * n + j].conj();
                    }
                }
                2.0 * s.re
            });
            // exact symmetry
            let g = RMatrix::from_fn(d, |a, b| 0.5 * (g[(a, b)] + g[(b, a)]));
            (det.norm(), Some(g))
        }
        Some((_, det)) => (det.norm(), None),
        None => (0.0, None),
    };
    PointGeometry {
        n,
        frame,
        chi,
        bracket01,
        first_order,
        frame_det,
        real_metric,
    }
}

fn flat_frame(n: usize) -> Vec<Complex64> {
    let d = 2 * n;
    let mut f = vec![ZERO; n * d];
    for k in 0..n {
        f[k * d + 2 * k] = Complex64::new(FRAC_1_SQRT_2, 0.0);
        f[k * d + 2 * k + 1] = Complex64::new(0.0, -FRAC_1_SQRT_2);
    }
    f
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum KeyMode {
    Uniform,
    /// Data depends only on the coordinate along this (1-based) axis.
    Axis(usize),
    Pointwise,
}

/// `(M, χ, J)` realized on the torus through a declared (1,0)-frame.
#[derive(Clone, Debug)]
pub struct AlmostHermitianStructure {
    spec: GridSpec,
    preset: Preset,
    key_mode: KeyMode,
    table: Vec<PointGeometry>,
    derivs: Vec<FrameDerivatives>,
}

impl AlmostHermitianStructure {
    /// Builds a preset structure (`flat` or `twisted`).
    pub fn build(preset: Preset, spec: GridSpec) -> Result<Self> {
        let n = spec.n();
        match preset {
            Preset::Flat => {
                let frame = flat_frame(n);
                let derivs = FrameDerivatives::zeros(n);
                let geom = assemble_geometry(
                    n,
                    frame,
                    CMatrix::identity(n),
                    vec![ZERO; n * n * n],
                    &derivs,
                );
                Ok(AlmostHermitianStructure {
                    spec,
                    preset,
                    key_mode: KeyMode::Uniform,
                    table: vec![geom],
                    derivs: vec![derivs],
                })
            }
            Preset::Twisted { epsilon } => {
                if !(epsilon.abs() < 0.5) {
                    return Err(DhymError::domain(format!(
                        "twisted preset needs |ε| < 1/2, got {epsilon}"
                    )));
                }
                if n < 2 {
                    return Err(DhymError::domain("twisted preset needs n ≥ 2"));
                }
                let d = 2 * n;
                let h = spec.spacing();
                let r = FRAC_1_SQRT_2;
                let mut table = Vec::with_capacity(spec.points_per_axis());
                let mut derivs_table = Vec::with_capacity(spec.points_per_axis());
                for c in 0..spec.points_per_axis() {
                    let x1 = c as f64 * h;
                    let s = epsilon * x1.sin();
                    let ds = epsilon * x1.cos();
                    let mut frame = flat_frame(n);
                    frame[d] += Complex64::new(s * r, 0.0);
                    frame[d + 1] += Complex64::new(0.0, -s * r);
                    let mut derivs = FrameDerivatives::zeros(n);
                    derivs.set(n, 0, 1, 0, Complex64::new(ds * r, 0.0));
                    derivs.set(n, 0, 1, 1, Complex64::new(0.0, -ds * r));
                    // [e_1, ē_2]^{0,1} = e_1(s) ē_1 and [e_2, ē_2]^{0,1} = s e_1(s) ē_1.
                    let mut bracket = vec![ZERO; n * n * n];
                    bracket[n] = Complex64::new(ds * r, 0.0);
                    bracket[(n + 1) * n] = Complex64::new(s * ds * r, 0.0);
                    table.push(assemble_geometry(
                        n,
                        frame,
                        CMatrix::identity(n),
                        bracket,
                        &derivs,
                    ));
                    derivs_table.push(derivs);
                }
                Ok(AlmostHermitianStructure {
                    spec,
                    preset,
                    key_mode: KeyMode::Axis(1),
                    table,
                    derivs: derivs_table,
                })
            }
            Preset::Tabulated => Err(DhymError::domain(
                "tabulated structures are built with AlmostHermitianStructure::from_records",
            )),
        }
    }

    /// Structure from tabulated frame coefficients.
    ///
    /// Expects records named `frame[i][a].re` / `frame[i][a].im` for every
    /// `i ∈ 1..=n`, `a ∈ 1..=2n` and optionally `chi[i][j].re` / `.im`
    /// (identity when absent). Frame derivatives are central differences of
    /// the tabulated coefficients; the bracket is derived from them.
    pub fn from_records(records: &[FieldRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| DhymError::Format("empty frame file".into()))?;
        let spec = *first.field.spec();
        let n = spec.n();
        let d = 2 * n;
        let find = |name: &str| -> Result<Option<&ScalarField>> {
            match records.iter().find(|r| r.name == name) {
                Some(r) => {
                    require_grid(&spec, r.field.spec())?;
                    Ok(Some(&r.field))
                }
                None => Ok(None),
            }
        };
        let mut frame_fields = Vec::with_capacity(n * d);
        for i in 1..=n {
            for a in 1..=d {
                let re = find(&format!("frame[{i}][{a}].re"))?
                    .ok_or_else(|| DhymError::Format(format!("missing frame[{i}][{a}].re")))?;
                let im = find(&format!("frame[{i}][{a}].im"))?;
                frame_fields.push((re, im));
            }
        }
        let mut chi_fields = Vec::new();
        for i in 1..=n {
            for j in 1..=n {
                let re = find(&format!("chi[{i}][{j}].re"))?;
                let im = find(&format!("chi[{i}][{j}].im"))?;
                chi_fields.push((re, im));
            }
        }
        let value = |(re, im): &(&ScalarField, Option<&ScalarField>), idx: usize| {
            Complex64::new(re.values()[idx], im.map_or(0.0, |f| f.values()[idx]))
        };
        let (table, derivs): (Vec<_>, Vec<_>) = (0..spec.len())
            .into_par_iter()
            .map(|idx| {
                let frame: Vec<Complex64> = frame_fields.iter().map(|f| value(f, idx)).collect();
                let chi = CMatrix::from_fn(n, |i, j| match chi_fields[i * n + j] {
                    (Some(re), im) => {
                        Complex64::new(re.values()[idx], im.map_or(0.0, |f| f.values()[idx]))
                    }
                    (None, _) => Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0),
                });
                let mut derivs = FrameDerivatives::zeros(n);
                for a in 0..d {
                    for i in 0..n {
                        for b in 0..d {
                            let (re, im) = frame_fields[i * d + b];
                            let dre = first_derivative(re.values(), &spec, idx, a + 1);
                            let dim = im.map_or(0.0, |f| first_derivative(f.values(), &spec, idx, a + 1));
                            derivs.set(n, a, i, b, Complex64::new(dre, dim));
                        }
                    }
                }
                let bracket = bracket_from_derivatives(&frame, &derivs, n)
                    .unwrap_or_else(|| vec![ZERO; n * n * n]);
                (assemble_geometry(n, frame, chi, bracket, &derivs), derivs)
            })
            .unzip();
        Ok(AlmostHermitianStructure {
            spec,
            preset: Preset::Tabulated,
            key_mode: KeyMode::Pointwise,
            table,
            derivs,
        })
    }

    /// Tabulates the frame of this structure as field records.
    pub fn frame_records(&self) -> Vec<FieldRecord> {
        let n = self.spec.n();
        let d = 2 * n;
        let mut out = Vec::new();
        for i in 0..n {
            for a in 0..d {
                for (part, pick) in [("re", true), ("im", false)] {
                    let field = ScalarField::from_index_fn(self.spec, |idx| {
                        let z = self.geometry(idx).frame(i, a);
                        if pick {
                            z.re
                        } else {
                            z.im
                        }
                    });
                    out.push(FieldRecord::new(format!("frame[{}][{}].{part}", i + 1, a + 1), field));
                }
            }
        }
        out
    }

    /// Bracket coefficients as field records named `bracket01[i][j][k].re/.im`.
    pub fn bracket_records(&self) -> Vec<FieldRecord> {
        let n = self.spec.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for (part, pick) in [("re", true), ("im", false)] {
                        let field = ScalarField::from_index_fn(self.spec, |idx| {
                            let z = self.geometry(idx).bracket01(i, j, k);
                            if pick {
                                z.re
                            } else {
                                z.im
                            }
                        });
                        out.push(FieldRecord::new(
                            format!("bracket01[{}][{}][{}].{part}", i + 1, j + 1, k + 1),
                            field,
                        ));
                    }
                }
            }
        }
        out
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn preset(&self) -> &Preset {
        &self.preset
    }

    #[inline]
    fn key(&self, idx: usize) -> usize {
        match self.key_mode {
            KeyMode::Uniform => 0,
            KeyMode::Axis(axis) => self.spec.coord_index(idx, axis),
            KeyMode::Pointwise => idx,
        }
    }

    #[inline]
    pub fn geometry(&self, idx: usize) -> &PointGeometry {
        &self.table[self.key(idx)]
    }

    pub fn frame_derivatives(&self, idx: usize) -> &FrameDerivatives {
        &self.derivs[self.key(idx)]
    }

    #[inline]
    pub fn chi(&self, idx: usize) -> &CMatrix {
        self.geometry(idx).chi()
    }

    /// True when χ is the same matrix at every point.
    pub fn chi_is_uniform(&self) -> bool {
        let c0 = self.table[0].chi;
        self.table.iter().all(|g| g.chi == c0)
    }

    /// Max-norm over the grid of all bracket coefficients.
    pub fn bracket_max_norm(&self) -> f64 {
        self.table
            .iter()
            .flat_map(|g| g.bracket01.iter())
            .fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Raw complex Hessian at one point, before symmetrization.
    pub fn complex_hessian_at(&self, u: &[f64], idx: usize) -> CMatrix {
        let local = LocalDerivatives::at(u, &self.spec, idx);
        self.geometry(idx).complex_hessian(&local.first, &local.second)
    }

    /// Replaces the table entry at one point's key. Intended for building
    /// deliberately broken structures in diagnostics.
    pub fn with_frame_override(mut self, idx: usize, frame: Vec<Complex64>) -> Result<Self> {
        let n = self.spec.n();
        if frame.len() != n * 2 * n {
            return Err(DhymError::domain("frame override has the wrong length"));
        }
        let key = self.key(idx);
        let old = &self.table[key];
        let derivs = self.derivs[key].clone();
        let bracket = old.bracket01.clone();
        self.table[key] = assemble_geometry(n, frame, old.chi, bracket, &derivs);
        Ok(self)
    }
}

impl RealMetric for AlmostHermitianStructure {
    fn metric_at(&self, idx: usize) -> RMatrix {
        self.geometry(idx)
            .real_metric
            .unwrap_or_else(|| RMatrix::zeros(self.spec.real_dim()))
    }
}

/// An n×n complex matrix per grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrixField {
    spec: GridSpec,
    data: Vec<CMatrix>,
    /// Max-norm of the anti-Hermitian part removed by symmetrization.
    defect: f64,
}

impl HermitianMatrixField {
    pub fn from_fn(spec: GridSpec, f: impl Fn(usize) -> CMatrix + Sync) -> Self {
        let data = (0..spec.len()).into_par_iter().map(&f).collect();
        HermitianMatrixField {
            spec,
            data,
            defect: 0.0,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn at(&self, idx: usize) -> &CMatrix {
        &self.data[idx]
    }

    pub fn defect(&self) -> f64 {
        self.defect
    }

    pub fn is_exactly_hermitian(&self) -> bool {
        self.data.iter().all(|m| m.adjoint() == *m)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(CMatrix::max_abs).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &HermitianMatrixField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.sub(b).max_abs())
            .fold(0.0, f64::max)
    }
}

/// `(∂∂̄u)(e_i, ē_j)` with bracket correction, symmetrized to exact Hermitian
/// form. The removed anti-Hermitian defect is recorded on the result.
pub fn complex_hessian(u: &ScalarField, s: &AlmostHermitianStructure) -> Result<HermitianMatrixField> {
    require_grid(u.spec(), s.spec())?;
    let spec = *u.spec();
    let v = u.values();
    let parts: Vec<(CMatrix, f64)> = (0..spec.len())
        .into_par_iter()
        .map(|idx| s.complex_hessian_at(v, idx).hermitian_part())
        .collect();
    let defect = parts.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(HermitianMatrixField {
        spec,
        data: parts.into_iter().map(|p| p.0).collect(),
        defect,
    })
}

/// The background real (1,1)-form ω in frame components `g_ij`.
///
/// `g = constant + Hess_C(v)` where the optional potential term is stored
/// already evaluated.
#[derive(Clone, Debug)]
pub struct BackgroundForm {
    n: usize,
    constant: CMatrix,
    chi_multiple: Option<f64>,
    varying: Option<HermitianMatrixField>,
}

impl BackgroundForm {
    /// `ω = a·χ`.
    pub fn multiple_of_chi(s: &AlmostHermitianStructure, a: f64) -> Self {
        let n = s.spec().n();
        if s.chi_is_uniform() {
            BackgroundForm {
                n,
                constant: s.chi(0).scale(a),
                chi_multiple: Some(a),
                varying: None,
            }
        } else {
            let spec = *s.spec();
            BackgroundForm {
                n,
                constant: CMatrix::zeros(n),
                chi_multiple: Some(a),
                varying: Some(HermitianMatrixField::from_fn(spec, |idx| s.chi(idx).scale(a))),
            }
        }
    }

    /// Constant matrix in frame components.
    pub fn constant(m: CMatrix) -> Result<Self> {
        let (h, defect) = m.hermitian_part();
        if defect != 0.0 {
            return Err(DhymError::domain("background form must be Hermitian"));
        }
        Ok(BackgroundForm {
            n: m.n(),
            constant: h,
            chi_multiple: None,
            varying: None,
        })
    }

    /// Adds `Hess_C(v)` for a generating potential `v`.
    pub fn with_potential(mut self, v: &ScalarField, s: &AlmostHermitianStructure) -> Result<Self> {
        let hv = complex_hessian(v, s)?;
        let spec = *s.spec();
        let merged = match self.varying.take() {
            Some(old) => HermitianMatrixField::from_fn(spec, |idx| old.at(idx).add(hv.at(idx))),
            None => hv,
        };
        self.varying = Some(merged);
        self.chi_multiple = None;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `Some(a)` when ω = a·χ exactly.
    pub fn chi_multiple(&self) -> Option<f64> {
        self.chi_multiple
    }

    #[inline]
    pub fn at(&self, idx: usize) -> CMatrix {
        match &self.varying {
            Some(f) => self.constant.add(f.at(idx)),
            None => self.constant,
        }
    }

    pub fn is_uniform(&self) -> bool {
        self.varying.is_none()
    }
}

/// `g̃ = g + ∂∂̄u` at one point (symmetrized Hessian).
#[inline]
pub fn omega_u_at(g: &BackgroundForm, u: &[f64], s: &AlmostHermitianStructure, idx: usize) -> CMatrix {
    g.at(idx).add(&s.complex_hessian_at(u, idx).hermitian_part().0)
}

/// `ω_u = ω + ∂∂̄u` as a matrix field.
pub fn omega_u(
    g: &BackgroundForm,
    u: &ScalarField,
    s: &AlmostHermitianStructure,
) -> Result<HermitianMatrixField> {
    require_grid(u.spec(), s.spec())?;
    if g.n() != s.spec().n() {
        return Err(DhymError::GridMismatch("background form dimension".into()));
    }
    let hess = complex_hessian(u, s)?;
    let spec = *u.spec();
    let mut out = HermitianMatrixField::from_fn(spec, |idx| g.at(idx).add(hess.at(idx)));
    out.defect = hess.defect;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructureReport {
    pub preset: String,
    pub frame_independent: bool,
    pub min_frame_det: f64,
    pub min_frame_det_point: usize,
    pub chi_positive: bool,
    pub min_chi_eigenvalue: f64,
    pub min_chi_point: usize,
    pub bracket_consistent: bool,
    pub bracket_residual: f64,
    pub bracket_max_norm: f64,
    /// `Some(pass)` only for the flat preset, which must have a vanishing bracket.
    pub flat_bracket_zero: Option<bool>,
}

impl StructureReport {
    pub fn all_pass(&self) -> bool {
        self.frame_independent
            && self.chi_positive
            && self.bracket_consistent
            && self.flat_bracket_zero.unwrap_or(true)
    }
}

/// Checks frame independence, positivity of χ and consistency of the stored
/// bracket coefficients with the frame derivatives, reporting worst points.
pub fn validate_structure(s: &AlmostHermitianStructure) -> StructureReport {
    let n = s.spec().n();
    let mut min_det = f64::INFINITY;
    let mut min_det_point = 0;
    let mut min_chi = f64::INFINITY;
    let mut min_chi_point = 0;
    let mut residual: f64 = 0.0;
    let mut consistent = true;
    let keys = s.table.len();
    for key in 0..keys {
        let geom = &s.table[key];
        let point = match s.key_mode {
            KeyMode::Uniform => 0,
            KeyMode::Axis(axis) => key * s.spec.stride(axis),
            KeyMode::Pointwise => key,
        };
        if geom.frame_det < min_det {
            min_det = geom.frame_det;
            min_det_point = point;
        }
        let ce = min_eigenvalue(&geom.chi);
        if ce < min_chi {
            min_chi = ce;
            min_chi_point = point;
        }
        match bracket_from_derivatives(&geom.frame, &s.derivs[key], n) {
            Some(b) => {
                for (x, y) in b.iter().zip(&geom.bracket01) {
                    residual = residual.max((x - y).norm());
                }
            }
            None => consistent = false,
        }
    }
    let bracket_max_norm = s.bracket_max_norm();
    StructureReport {
        preset: s.preset.id().to_string(),
        frame_independent: min_det > FRAME_DET_TOL,
        min_frame_det: min_det,
        min_frame_det_point: min_det_point,
        chi_positive: min_chi > crate::linalg::MIN_METRIC_EIGENVALUE,
        min_chi_eigenvalue: min_chi,
        min_chi_point,
        bracket_consistent: consistent && residual <= BRACKET_TOL,
        bracket_residual: if consistent { residual } else { f64::INFINITY },
        bracket_max_norm,
        flat_bracket_zero: matches!(s.preset, Preset::Flat).then_some(bracket_max_norm == 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, pts: usize) -> GridSpec {
        GridSpec::new(n, pts).unwrap()
    }

    #[test]
    fn flat_bracket_is_exactly_zero() {
        let s = AlmostHermitianStructure::build(Preset::Flat, grid(2, 16)).unwrap();
        assert_eq!(s.bracket_max_norm(), 0.0);
        let rep = validate_structure(&s);
        assert!(rep.all_pass());
        assert_eq!(rep.bracket_residual, 0.0);
        assert_eq!(rep.flat_bracket_zero, Some(true));
    }

    #[test]
    fn twisted_with_zero_epsilon_matches_flat() {
        let spec = grid(2, 8);
        let flat = AlmostHermitianStructure::build(Preset::Flat, spec).unwrap();
        let tw = AlmostHermitianStructure::build(Preset::Twisted { epsilon: 0.0 }, spec).unwrap();
        let u = ScalarField::from_fn(spec, |x| (x[0] + 2.0 * x[2]).sin() * x[1].cos() + x[3].cos());
        let a = complex_hessian(&u, &flat).unwrap();
        let b = complex_hessian(&u, &tw).unwrap();
        assert_eq!(a, b);
        assert_eq!(tw.bracket_max_norm(), 0.0);
    }

    #[test]
    fn twisted_rejects_large_epsilon_and_small_n() {
        assert!(AlmostHermitianStructure::build(Preset::Twisted { epsilon: 0.5 }, grid(2, 8)).is_err());
        assert!(AlmostHermitianStructure::build(Preset::Twisted { epsilon: 0.1 }, grid(1, 8)).is_err());
    }

    #[test]
    fn twisted_is_not_kahler() {
        let s = AlmostHermitianStructure::build(Preset::Twisted { epsilon: 0.25 }, grid(2, 16)).unwrap();
        assert!(s.bracket_max_norm() > 0.1);
        let rep = validate_structure(&s);
        assert!(rep.all_pass(), "{rep:?}");
        assert!(rep.bracket_residual <= 1e-10);
        assert_eq!(rep.flat_bracket_zero, None);
    }

    #[test]
    fn flat_metric_is_identity() {
        let s = AlmostHermitianStructure::build(Preset::Flat, grid(2, 8)).unwrap();
        let g = s.metric_at(17);
        for a in 0..4 {
            for b in 0..4 {
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((g[(a, b)] - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hessian_of_constant_vanishes() {
        let spec = grid(2, 8);
        let s = AlmostHermitianStructure::build(Preset::Twisted { epsilon: 0.3 }, spec).unwrap();
        let h = complex_hessian(&ScalarField::constant(spec, 4.2), &s).unwrap();
        assert_eq!(h.max_abs(), 0.0);
    }

    #[test]
    fn flat_cosine_hessian() {
        let spec = grid(2, 16);
        let s = AlmostHermitianStructure::build(Preset::Flat, spec).unwrap();
        let u = ScalarField::from_fn(spec, |x| x[0].cos());
        let h = complex_hessian(&u, &s).unwrap();
        let hsp = spec.spacing();
        for idx in (0..spec.len()).step_by(97) {
            let x1 = spec.coords(idx)[0];
            let m = h.at(idx);
            assert!((m[(0, 0)].re + 0.5 * x1.cos()).abs() < hsp * hsp);
            assert!(m[(0, 1)].norm() < 1e-14);
            assert!(m[(1, 1)].norm() < 1e-14);
        }
    }

    #[test]
    fn background_multiple() {
        let spec = grid(2, 8);
        let s = AlmostHermitianStructure::build(Preset::Flat, spec).unwrap();
        let g = BackgroundForm::multiple_of_chi(&s, 1.0f64.tan());
        let w = omega_u(&g, &ScalarField::zeros(spec), &s).unwrap();
        for idx in [0, 100, 4095] {
            let m = w.at(idx);
            assert_eq!(m[(0, 0)].re, 1.0f64.tan());
            assert_eq!(m[(1, 1)].re, 1.0f64.tan());
            assert_eq!(m[(0, 1)].norm(), 0.0);
        }
        assert!((1.0f64.tan() - 1.5574).abs() < 1e-4);
    }

    #[test]
    fn degenerate_frame_is_flagged() {
        let spec = grid(2, 8);
        let s = AlmostHermitianStructure::build(Preset::Flat, spec).unwrap();
        // e_2 := e_1 at every point.
        let mut recs = s.frame_records();
        for i_part in ["re", "im"] {
            for a in 1..=4 {
                let src = recs
                    .iter()
                    .find(|r| r.name == format!("frame[1][{a}].{i_part}"))
                    .unwrap()
                    .field
                    .clone();
                let dst = recs
                    .iter_mut()
                    .find(|r| r.name == format!("frame[2][{a}].{i_part}"))
                    .unwrap();
                dst.field = src;
            }
        }
        let bad = AlmostHermitianStructure::from_records(&recs).unwrap();
        let rep = validate_structure(&bad);
        assert!(!rep.frame_independent);
        assert!(!rep.all_pass());
    }

    #[test]
    fn tabulated_flat_roundtrip() {
        let spec = grid(2, 8);
        let s = AlmostHermitianStructure::build(Preset::Flat, spec).unwrap();
        let t = AlmostHermitianStructure::from_records(&s.frame_records()).unwrap();
        let rep = validate_structure(&t);
        assert!(rep.all_pass(), "{rep:?}");
        assert_eq!(t.bracket_max_norm(), 0.0);
    }
}
