//! Run configuration: a TOML document where unknown keys are rejected.

use std::path::{Path, PathBuf};

use dhym_core::phase::is_hypercritical;
use dhym_core::{
    load_records, AlmostHermitianStructure, BackgroundForm, DhymError, GridSpec, PathOptions, Preset,
    ScalarField, SolveOptions, TrigPotential,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub omega: OmegaConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub path: PathConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    Flat,
    Twisted,
    Tabulated,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub preset: PresetName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Taken from the frame file for the tabulated preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_per_axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_file: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_multiple: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialSource>,
}

/// A potential given by preset name, inline cosine terms or a field file.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum PotentialSource {
    Named(String),
    Terms(TermsSource),
    File(FileSource),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TermsSource {
    pub terms: Vec<TermConfig>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub file: PathBuf,
}

/// `amplitude · cos(wave · x + shift)`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub amplitude: f64,
    pub wave: Vec<f64>,
    #[serde(default)]
    pub shift: f64,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Solve,
    Path,
    Manufactured,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum HValue {
    Constant(f64),
    /// Only `"from_u_star"` is accepted.
    Keyword(String),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<HValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_star: Option<PotentialSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_sub: Option<PotentialSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_hat: Option<PotentialSource>,
    /// Initial guess for `solve`; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<PotentialSource>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub residual_tol: f64,
    pub max_newton_iters: usize,
    pub linear_tol: f64,
    pub gmres_restart: usize,
    pub max_linear_iters: usize,
    pub damping: f64,
    pub min_step: f64,
    pub hypercritical_guard_margin: f64,
    /// Random directions for the concavity check in result records.
    pub concavity_trials: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolveOptions::default();
        SolverConfig {
            residual_tol: d.residual_tol,
            max_newton_iters: d.max_newton_iters,
            linear_tol: d.linear_tol,
            gmres_restart: d.gmres_restart,
            max_linear_iters: d.max_linear_iters,
            damping: d.damping,
            min_step: d.min_step,
            hypercritical_guard_margin: d.hypercritical_guard_margin,
            concavity_trials: 100,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            residual_tol: self.residual_tol,
            max_newton_iters: self.max_newton_iters,
            linear_tol: self.linear_tol,
            gmres_restart: self.gmres_restart,
            max_linear_iters: self.max_linear_iters,
            damping: self.damping,
            min_step: self.min_step,
            hypercritical_guard_margin: self.hypercritical_guard_margin,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_growth: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        let d = PathOptions::default();
        PathConfig {
            dt_init: d.dt_init,
            dt_min: d.dt_min,
            dt_growth: d.dt_growth,
        }
    }
}

impl PathConfig {
    pub fn options(&self) -> PathOptions {
        PathOptions {
            dt_init: self.dt_init,
            dt_min: self.dt_min,
            dt_growth: self.dt_growth,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub checkpoint_every: usize,
    pub series_file: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("dhym-output"),
            checkpoint_every: 1,
            series_file: "series.csv".into(),
        }
    }
}

/// Configuration problems; all map to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] DhymError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads, parses and validates a config. Relative file paths are resolved
    /// against the directory of the config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.geometry.frame_file.as_mut() {
            fix(p);
        }
        if let Some(p) = self.problem.h_file.as_mut() {
            fix(p);
        }
        for src in [
            self.omega.potential.as_mut(),
            self.problem.u_star.as_mut(),
            self.problem.u_sub.as_mut(),
            self.problem.u_hat.as_mut(),
            self.problem.u0.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            if let PotentialSource::File(f) = src {
                fix(&mut f.file);
            }
        }
        fix(&mut self.output.directory);
    }

    /// Load-time checks that need no grid data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.geometry;
        match g.preset {
            PresetName::Tabulated => {
                if g.frame_file.is_none() {
                    return Err(invalid("the tabulated preset needs geometry.frame_file"));
                }
                if g.epsilon.is_some() {
                    return Err(invalid("geometry.epsilon applies to the twisted preset only"));
                }
            }
            PresetName::Flat | PresetName::Twisted => {
                if g.frame_file.is_some() {
                    return Err(invalid("geometry.frame_file applies to the tabulated preset only"));
                }
                if g.n.is_none() || g.points_per_axis.is_none() {
                    return Err(invalid("geometry.n and geometry.points_per_axis are required"));
                }
                match (g.preset, g.epsilon) {
                    (PresetName::Twisted, None) => return Err(invalid("the twisted preset needs geometry.epsilon")),
                    (PresetName::Flat, Some(_)) => {
                        return Err(invalid("geometry.epsilon applies to the twisted preset only"))
                    }
                    _ => {}
                }
            }
        }
        if let Some(a) = self.omega.constant_multiple {
            if !(a > 0.0 && a.is_finite()) {
                return Err(invalid(format!("omega.constant_multiple must be positive, got {a}")));
            }
        }
        if self.omega.constant_multiple.is_none() && self.omega.potential.is_none() {
            return Err(invalid("omega needs constant_multiple and/or potential"));
        }
        let p = &self.problem;
        match (&p.h, &p.h_file) {
            (Some(_), Some(_)) => return Err(invalid("give exactly one of problem.h and problem.h_file")),
            (None, None) => return Err(invalid("problem.h or problem.h_file is required")),
            _ => {}
        }
        if let Some(HValue::Keyword(k)) = &p.h {
            if k != "from_u_star" {
                return Err(invalid(format!("problem.h must be a number or \"from_u_star\", got \"{k}\"")));
            }
            if p.u_star.is_none() {
                return Err(invalid("problem.h = \"from_u_star\" needs problem.u_star"));
            }
        }
        if let (Some(HValue::Constant(h)), Some(n)) = (&p.h, self.dimension_hint()) {
            if !is_hypercritical(n, *h) {
                return Err(invalid(format!(
                    "h = {h} is outside the hypercritical range ((n−1)π/2, nπ/2) for n = {n}"
                )));
            }
        }
        if p.mode == Mode::Manufactured && p.u_star.is_none() {
            return Err(invalid("manufactured mode needs problem.u_star"));
        }
        if self.output.checkpoint_every == 0 {
            return Err(invalid("output.checkpoint_every must be at least 1"));
        }
        self.solver.options().validate()?;
        self.path.options().validate()?;
        Ok(())
    }

    fn dimension_hint(&self) -> Option<usize> {
        self.geometry.n
    }
}

/// Grid, structure and background form built from a validated config.
pub struct Setup {
    pub spec: GridSpec,
    pub structure: AlmostHermitianStructure,
    pub omega: BackgroundForm,
}

pub fn build_structure(cfg: &GeometryConfig) -> Result<AlmostHermitianStructure, ConfigError> {
    match cfg.preset {
        PresetName::Tabulated => {
            let file = cfg.frame_file.as_ref().expect("validated");
            let records = load_records(file)?;
            let s = AlmostHermitianStructure::from_records(&records)?;
            if cfg.n.is_some_and(|n| n != s.spec().n())
                || cfg.points_per_axis.is_some_and(|p| p != s.spec().points_per_axis())
            {
                return Err(invalid("frame file grid disagrees with geometry.n / points_per_axis"));
            }
            Ok(s)
        }
        PresetName::Flat | PresetName::Twisted => {
            let spec = GridSpec::new(cfg.n.expect("validated"), cfg.points_per_axis.expect("validated"))?;
            let preset = match cfg.preset {
                PresetName::Flat => Preset::Flat,
                _ => Preset::Twisted {
                    epsilon: cfg.epsilon.expect("validated"),
                },
            };
            Ok(AlmostHermitianStructure::build(preset, spec)?)
        }
    }
}

impl RunConfig {
    /// Adds the background form to an already built structure.
    pub fn setup_with(&self, structure: AlmostHermitianStructure) -> Result<Setup, ConfigError> {
        let spec = *structure.spec();
        if let Some(HValue::Constant(h)) = &self.problem.h {
            if !is_hypercritical(spec.n(), *h) {
                return Err(invalid(format!(
                    "h = {h} is outside the hypercritical range for n = {}",
                    spec.n()
                )));
            }
        }
        let mut omega = match self.omega.constant_multiple {
            Some(a) => BackgroundForm::multiple_of_chi(&structure, a),
            None => BackgroundForm::constant(dhym_core::linalg::CMatrix::zeros(spec.n()))?,
        };
        if let Some(src) = &self.omega.potential {
            let v = sample(src, spec)?;
            omega = omega.with_potential(&v, &structure)?;
        }
        Ok(Setup {
            spec,
            structure,
            omega,
        })
    }
}

/// Named analytic potentials.
pub fn named_potential(name: &str) -> Option<TrigPotential> {
    match name {
        "zero" => Some(TrigPotential::new()),
        // 0.05 cos x¹ + 0.03 sin(x² + x⁴)
        "reference" => Some(
            TrigPotential::new()
                .cos(0.05, &[1.0], 0.0)
                .sin(0.03, &[0.0, 1.0, 0.0, 1.0]),
        ),
        // 0.3 cos(x¹ + x³)
        "diagonal_wave" => Some(TrigPotential::new().cos(0.3, &[1.0, 0.0, 1.0], 0.0)),
        _ => None,
    }
}

/// The analytic form of a source, if it has one.
pub fn analytic(src: &PotentialSource) -> Result<Option<TrigPotential>, ConfigError> {
    match src {
        PotentialSource::Named(name) => named_potential(name)
            .map(Some)
            .ok_or_else(|| invalid(format!("unknown potential preset \"{name}\" (known: zero, reference, diagonal_wave)"))),
        PotentialSource::Terms(t) => Ok(Some(t.terms.iter().fold(TrigPotential::new(), |p, t| {
            p.cos(t.amplitude, &t.wave, t.shift)
        }))),
        PotentialSource::File(_) => Ok(None),
    }
}

pub fn sample(src: &PotentialSource, spec: GridSpec) -> Result<ScalarField, ConfigError> {
    match analytic(src)? {
        Some(p) => {
            p.check(&spec)?;
            Ok(p.sample(spec)?)
        }
        None => {
            let PotentialSource::File(FileSource { file }) = src else {
                unreachable!("analytic sources are handled above")
            };
            let rec = dhym_core::load_field(file)?;
            if *rec.field.spec() != spec {
                return Err(invalid(format!("{} is on a different grid", file.display())));
            }
            Ok(rec.field)
        }
    }
}

pub fn sample_or_zero(src: Option<&PotentialSource>, spec: GridSpec) -> Result<ScalarField, ConfigError> {
    match src {
        Some(s) => sample(s, spec),
        None => Ok(ScalarField::zeros(spec)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[geometry]
preset = "flat"
n = 2
points_per_axis = 8
[omega]
constant_multiple = 1.5
[problem]
mode = "solve"
h = 2.0
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::parse(BASE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.solver.residual_tol, 1e-10);
        assert_eq!(cfg.output.checkpoint_every, 1);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = BASE.replace("h = 2.0", "h = 2.0\nresidual_tol = 1e-3");
        assert!(matches!(RunConfig::parse(&text), Err(ConfigError::Parse(_))));
        let text = format!("{BASE}\n[solver]\nresidual_tolerance = 1e-3\n");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn subcritical_h_rejected() {
        let cfg = RunConfig::parse(&BASE.replace("h = 2.0", "h = 1.0")).unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn exactly_one_h_source() {
        let cfg = RunConfig::parse(&BASE.replace("h = 2.0", "h = 2.0\nh_file = \"h.field\"")).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::parse(&BASE.replace("h = 2.0", "")).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn nonpositive_multiple_rejected() {
        let cfg = RunConfig::parse(&BASE.replace("1.5", "-1.0")).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn resolved_config_roundtrips() {
        let cfg = RunConfig::parse(BASE).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(toml::to_string(&back).unwrap(), text);
    }
}
