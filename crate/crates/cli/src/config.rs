//! Run configuration: one TOML file, every section optional.

use std::path::{Path, PathBuf};

use itp_core::geometry::LayeredProfile;
use itp_core::kernels::{BranchSelection, ContourSpec, Derivative, DistanceMode, Field};
use itp_core::parametrix::interval::SMOOTH_PARTITION;
use itp_core::parametrix::PartitionSpec;
use itp_core::refsolver::{Scheme, TimeStepping};
use itp_core::{Contrast, MetricField};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::Subcommand)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Characteristic roots at frequency points.
    Roots,
    /// Amplitude coefficient tables and transmission residuals.
    Amplitudes,
    /// Leading boundary kernel samples with causality and Gaussian fits.
    Kernel,
    /// Slab parametrix kernel dump.
    Parametrix,
    /// Scalar Levi oracle and the 1-D Levi solve against the reference solver.
    Levi,
    /// Forward trajectory and manufactured-solution convergence.
    Solve,
    /// Discrete Green matrix for one mollified source.
    Green,
    /// Duality pairing, wrong-coupling control and reciprocity.
    Duality,
    /// Linear sampling indicator scan and reconstruction.
    Sample,
    /// Full acceptance suite.
    Accept,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Roots => "roots",
            Experiment::Amplitudes => "amplitudes",
            Experiment::Kernel => "kernel",
            Experiment::Parametrix => "parametrix",
            Experiment::Levi => "levi",
            Experiment::Solve => "solve",
            Experiment::Green => "green",
            Experiment::Duality => "duality",
            Experiment::Sample => "sample",
            Experiment::Accept => "accept",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepping {
    Rannacher,
    CrankNicolson,
    ImplicitEuler,
}

impl From<Stepping> for TimeStepping {
    fn from(s: Stepping) -> Self {
        match s {
            Stepping::Rannacher => TimeStepping::Rannacher,
            Stepping::CrankNicolson => TimeStepping::Pure(Scheme::CrankNicolson),
            Stepping::ImplicitEuler => TimeStepping::Pure(Scheme::ImplicitEuler),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPoint {
    pub xi: [f64; 2],
    /// `[Re tau, Im tau]`.
    pub tau: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RootsConfig {
    pub y3: f64,
    pub points: Vec<FrequencyPoint>,
}

impl Default for RootsConfig {
    fn default() -> Self {
        Self {
            y3: -0.5,
            points: vec![
                FrequencyPoint {
                    xi: [0.0, 0.0],
                    tau: [4.0, 0.0],
                },
                FrequencyPoint {
                    xi: [1.0, 0.5],
                    tau: [4.0, 2.0],
                },
                FrequencyPoint {
                    xi: [-0.3, 2.0],
                    tau: [10.0, -3.0],
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmplitudesConfig {
    pub ell: u8,
    /// 1 or 2.
    pub order: u8,
    pub y3: f64,
    pub s: f64,
    pub y_t: [f64; 2],
    pub point: FrequencyPoint,
    /// Extra random frequency points drawn from the run seed.
    pub random: usize,
    pub tolerance: f64,
}

impl Default for AmplitudesConfig {
    fn default() -> Self {
        Self {
            ell: 1,
            order: 1,
            y3: -0.5,
            s: 0.0,
            y_t: [0.0, 0.0],
            point: FrequencyPoint {
                xi: [0.5, -0.3],
                tau: [4.0, 1.0],
            },
            random: 100,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub ell: u8,
    pub field: Field,
    pub branches: BranchSelection,
    pub derivative: Derivative,
    pub y3: f64,
    /// Lateral offsets `|x' - y'|` along the first axis.
    pub laterals: Vec<f64>,
    pub depths: Vec<f64>,
    /// Time lags `t - s`; negative lags probe causality.
    pub lags: Vec<f64>,
    pub exponent: f64,
    pub distance: DistanceMode,
    pub causality_tolerance: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            ell: 1,
            field: Field::First,
            branches: BranchSelection::Boundary,
            derivative: Derivative::None,
            y3: -0.5,
            laterals: vec![0.0, 0.1, 0.3],
            depths: vec![-0.1, -0.3, -0.6],
            lags: vec![-0.02, 0.005, 0.02, 0.08, 0.2],
            exponent: 1.5,
            distance: DistanceMode::Reflected,
            causality_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParametrixConfig {
    pub depth: f64,
    pub charts: usize,
    /// `(x, y)` pairs inside the slab.
    pub points: Vec<([f64; 3], [f64; 3])>,
    pub lags: Vec<f64>,
}

impl Default for ParametrixConfig {
    fn default() -> Self {
        Self {
            depth: 1.0,
            charts: 3,
            points: [(-0.1, -0.1), (-0.3, -0.1), (-0.5, -0.5), (-0.2, -0.6)]
                .iter()
                .map(|(a, b)| ([0.05, 0.0, *a], [0.0, 0.0, *b]))
                .collect(),
            lags: vec![0.005, 0.02, 0.08],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeviConfig {
    /// Constants of the scalar oracle kernel.
    pub oracle_constants: Vec<f64>,
    /// Oracle steps, coarse to fine.
    pub oracle_steps: Vec<f64>,
    pub oracle_horizon: f64,
    /// Directory written by the parametrix experiment; its partition is reused.
    pub parametrix: Option<PathBuf>,
    /// `(n, dt)` ladder of the interval solve.
    pub ladder: Vec<(usize, f64)>,
    pub ell: u8,
    pub y: f64,
    pub eps: f64,
    pub horizon: f64,
}

impl Default for LeviConfig {
    fn default() -> Self {
        Self {
            oracle_constants: vec![0.5, 2.0],
            oracle_steps: vec![2e-3, 1e-3],
            oracle_horizon: 1.0,
            parametrix: None,
            ladder: vec![(32, 8e-4), (64, 4e-4), (128, 2e-4), (256, 1e-4)],
            ell: 1,
            y: 0.5,
            eps: 0.08,
            horizon: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub n: usize,
    pub dt: f64,
    pub horizon: f64,
    pub stepping: Stepping,
    /// Centre and width of the mollified initial datum in the first field.
    pub initial: (f64, f64),
    /// Every `stride`-th time level goes to the trajectory file.
    pub stride: usize,
    /// Mesh sizes of the manufactured-solution study.
    pub study_sizes: Vec<usize>,
    pub study_dt: f64,
    pub study_horizon: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            n: 64,
            dt: 1e-3,
            horizon: 0.1,
            stepping: Stepping::Rannacher,
            initial: (0.5, 0.05),
            stride: 10,
            study_sizes: vec![16, 32, 64],
            study_dt: 2e-4,
            study_horizon: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreenConfig {
    pub n: usize,
    pub dt: f64,
    pub horizon: f64,
    pub y: f64,
    pub s: f64,
    /// Mollifier width; `2h` when absent.
    pub eps: Option<f64>,
    pub stepping: Stepping,
    pub stride: usize,
}

impl Default for GreenConfig {
    fn default() -> Self {
        Self {
            n: 128,
            dt: 1e-3,
            horizon: 0.1,
            y: 0.5,
            s: 0.02,
            eps: None,
            stepping: Stepping::Rannacher,
            stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualityConfig {
    pub n: usize,
    pub dt: f64,
    pub horizon: f64,
    pub forward_centre: f64,
    pub adjoint_centre: f64,
    pub width: f64,
    pub tolerance: f64,
    /// Mesh sizes of the reciprocity study; `dt = 0.1 h`.
    pub reciprocity_sizes: Vec<usize>,
    pub reciprocity_horizon: f64,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self {
            n: 256,
            dt: 5e-4,
            horizon: 0.2,
            forward_centre: 0.6,
            adjoint_centre: 0.3,
            width: 0.04,
            tolerance: 1e-6,
            reciprocity_sizes: vec![32, 64, 128],
            reciprocity_horizon: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub n: usize,
    pub dt: f64,
    pub horizon: f64,
    pub inclusion: (f64, f64),
    pub s: f64,
    /// Mollifier width; `2h` when absent.
    pub eps: Option<f64>,
    pub alpha_max: f64,
    pub alpha_min: f64,
    pub alpha_count: usize,
    pub probes: (f64, f64),
    pub min_contrast: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            n: 200,
            dt: 5e-4,
            horizon: 0.05,
            inclusion: (0.4, 0.7),
            s: 0.01,
            eps: None,
            alpha_max: 1e-6,
            alpha_min: 1e-14,
            alpha_count: 5,
            probes: (0.1, 0.9),
            min_contrast: 5.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceptConfig {
    /// Criterion ids to run; all when empty.
    pub criteria: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Option<Experiment>,
    pub k: f64,
    pub seed: u64,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    /// Layered metric profile; flat when absent.
    pub metric: Option<LayeredProfile>,
    pub contour: ContourSpec,
    pub partition: PartitionSpec,
    pub roots: RootsConfig,
    pub amplitudes: AmplitudesConfig,
    pub kernel: KernelConfig,
    pub parametrix: ParametrixConfig,
    pub levi: LeviConfig,
    pub solve: SolveConfig,
    pub green: GreenConfig,
    pub duality: DualityConfig,
    pub sample: SampleConfig,
    pub accept: AcceptConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            k: 4.0,
            seed: 0,
            workers: None,
            out: None,
            metric: None,
            contour: ContourSpec::default(),
            partition: SMOOTH_PARTITION,
            roots: RootsConfig::default(),
            amplitudes: AmplitudesConfig::default(),
            kernel: KernelConfig::default(),
            parametrix: ParametrixConfig::default(),
            levi: LeviConfig::default(),
            solve: SolveConfig::default(),
            green: GreenConfig::default(),
            duality: DualityConfig::default(),
            sample: SampleConfig::default(),
            accept: AcceptConfig::default(),
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

fn positive_count(field: &str, v: usize) -> Result<(), CliError> {
    if v > 0 {
        Ok(())
    } else {
        Err(invalid(field, "must be at least 1"))
    }
}

fn source_index(field: &str, ell: u8) -> Result<(), CliError> {
    if ell == 1 || ell == 2 {
        Ok(())
    } else {
        Err(invalid(field, format!("source index must be 1 or 2, got {ell}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn contrast(&self) -> Result<Contrast, CliError> {
        Contrast::new(self.k).map_err(|e| invalid("k", e.to_string()))
    }

    pub fn metric_field(&self) -> MetricField {
        self.metric
            .clone()
            .map(LayeredProfile::into_metric)
            .unwrap_or_else(MetricField::flat)
    }

    /// Checks every invariant that does not need the experiment to run.
    pub fn validate(&self) -> Result<(), CliError> {
        self.contrast()?;
        if let Some(w) = self.workers {
            positive_count("workers", w)?;
        }
        self.contour.validate().map_err(|e| invalid("contour", e.to_string()))?;
        positive("contour.tol", self.contour.tol)?;
        positive("partition.ramp", self.partition.ramp)?;
        positive("partition.gap", self.partition.gap)?;
        positive("partition.chart_width", self.partition.chart_width)?;

        let a = &self.amplitudes;
        source_index("amplitudes.ell", a.ell)?;
        if a.order != 1 && a.order != 2 {
            return Err(invalid("amplitudes.order", format!("must be 1 or 2, got {}", a.order)));
        }
        positive("amplitudes.tolerance", a.tolerance)?;

        let kc = &self.kernel;
        source_index("kernel.ell", kc.ell)?;
        positive("kernel.causality_tolerance", kc.causality_tolerance)?;
        positive("kernel.exponent", kc.exponent)?;
        if kc.lags.is_empty() || kc.laterals.is_empty() || kc.depths.is_empty() {
            return Err(invalid("kernel", "lags, laterals and depths must be non-empty"));
        }

        let p = &self.parametrix;
        positive("parametrix.depth", p.depth)?;
        if p.points.is_empty() || p.lags.is_empty() {
            return Err(invalid("parametrix", "points and lags must be non-empty"));
        }

        let l = &self.levi;
        source_index("levi.ell", l.ell)?;
        positive("levi.eps", l.eps)?;
        positive("levi.horizon", l.horizon)?;
        positive("levi.oracle_horizon", l.oracle_horizon)?;
        for (i, dt) in l.oracle_steps.iter().enumerate() {
            positive(&format!("levi.oracle_steps[{i}]"), *dt)?;
        }
        for (i, (n, dt)) in l.ladder.iter().enumerate() {
            positive_count(&format!("levi.ladder[{i}].n"), *n)?;
            positive(&format!("levi.ladder[{i}].dt"), *dt)?;
        }

        let s = &self.solve;
        positive("solve.dt", s.dt)?;
        positive("solve.horizon", s.horizon)?;
        positive("solve.study_dt", s.study_dt)?;
        positive_count("solve.stride", s.stride)?;

        let g = &self.green;
        positive("green.dt", g.dt)?;
        positive("green.horizon", g.horizon)?;
        positive_count("green.stride", g.stride)?;
        if let Some(e) = g.eps {
            positive("green.eps", e)?;
        }

        let d = &self.duality;
        positive("duality.tolerance", d.tolerance)?;
        positive("duality.width", d.width)?;

        let sm = &self.sample;
        positive("sample.alpha_max", sm.alpha_max)?;
        positive("sample.alpha_min", sm.alpha_min)?;
        positive("sample.min_contrast", sm.min_contrast)?;
        if let Some(e) = sm.eps {
            positive("sample.eps", e)?;
        }
        if !(sm.inclusion.0 < sm.inclusion.1) {
            return Err(invalid("sample.inclusion", "left end must precede the right end"));
        }
        for (i, c) in self.accept.criteria.iter().enumerate() {
            if !(1..=12).contains(c) {
                return Err(invalid(&format!("accept.criteria[{i}]"), format!("no criterion {c}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unit_contrast_names_the_field() {
        let c = RunConfig::from_toml("k = 1.0").unwrap();
        match c.validate() {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "k"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nested_fields_are_reported_by_path() {
        let c = RunConfig::from_toml("[levi]\nladder = [[32, 1e-3], [64, -1e-3]]").unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("levi.ladder[1].dt"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            RunConfig::from_toml("[roots]\ntau = 3"),
            Err(CliError::Parse(_))
        ));
    }

    #[test]
    fn layered_metric_parses() {
        let c = RunConfig::from_toml("[metric]\nprofile = \"quadratic\"\na = 0.5").unwrap();
        assert!(!c.metric_field().is_flat());
    }

    #[test]
    fn config_round_trips() {
        let c = RunConfig {
            experiment: Some(Experiment::Sample),
            seed: 9,
            ..Default::default()
        };
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }
}
