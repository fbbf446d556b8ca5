//! Trigonometric potentials with exact derivatives, used to generate
//! manufactured instances whose data carry no discretization error.

use crate::error::{DhymError, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::linalg::MAX_REAL;

/// `amplitude · cos(Σ_α k_α x^α + shift)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigTerm {
    pub amplitude: f64,
    pub wave: Vec<f64>,
    pub shift: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrigPotential {
    terms: Vec<TrigTerm>,
}

impl TrigPotential {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `a·cos(k·x + shift)`. Wave vectors use real axes in order; missing
    /// trailing entries are zero.
    pub fn cos(mut self, amplitude: f64, wave: &[f64], shift: f64) -> Self {
        self.terms.push(TrigTerm {
            amplitude,
            wave: wave.to_vec(),
            shift,
        });
        self
    }

    /// Adds `a·sin(k·x)`.
    pub fn sin(self, amplitude: f64, wave: &[f64]) -> Self {
        self.cos(amplitude, wave, -std::f64::consts::FRAC_PI_2)
    }

    pub fn terms(&self) -> &[TrigTerm] {
        &self.terms
    }

    /// Wave vectors must be integral so the potential is periodic, and must fit the dimension.
    pub fn check(&self, spec: &GridSpec) -> Result<()> {
        for t in &self.terms {
            if t.wave.len() > spec.real_dim() {
                return Err(DhymError::domain("wave vector longer than the real dimension"));
            }
            if t.wave.iter().any(|k| k.fract() != 0.0) || !t.amplitude.is_finite() {
                return Err(DhymError::domain("wave numbers must be integers"));
            }
        }
        Ok(())
    }

    fn angle(t: &TrigTerm, x: &[f64]) -> f64 {
        t.wave.iter().zip(x).map(|(k, x)| k * x).sum::<f64>() + t.shift
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.amplitude * Self::angle(t, x).cos())
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> [f64; MAX_REAL] {
        let mut g = [0.0; MAX_REAL];
        for t in &self.terms {
            let s = -t.amplitude * Self::angle(t, x).sin();
            for (a, k) in t.wave.iter().enumerate() {
                g[a] += s * k;
            }
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> [[f64; MAX_REAL]; MAX_REAL] {
        let mut h = [[0.0; MAX_REAL]; MAX_REAL];
        for t in &self.terms {
            let c = -t.amplitude * Self::angle(t, x).cos();
            for (a, ka) in t.wave.iter().enumerate() {
                for (b, kb) in t.wave.iter().enumerate() {
                    h[a][b] += c * ka * kb;
                }
            }
        }
        h
    }

    pub fn sample(&self, spec: GridSpec) -> Result<ScalarField> {
        self.check(&spec)?;
        Ok(ScalarField::from_fn(spec, |x| self.value(x)))
    }
}
