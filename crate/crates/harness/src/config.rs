//! Experiment configuration, loaded from TOML and validated before any suite runs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tblab::accretive::AccretiveStyle;
use tblab::cz::Kernel;
use tblab::fixtures::FixtureSpec;
use tblab::grid::DyadicParams;
use tblab::measure::{conjugate, AtomicMeasure, LatticeSpace, Profile};

/// Environment variable that divides Monte Carlo trial counts by ten.
pub const REDUCED_TRIALS_ENV: &str = "TBLAB_REDUCED_TRIALS";

pub const ALL_SUITES: [&str; 10] = [
    "identities",
    "layers",
    "badcubes",
    "sqfn",
    "carleson",
    "decoupling",
    "matrix",
    "paraproduct",
    "comparable",
    "ledger",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Integrability exponent `p`; the dual exponent is derived.
    pub p: f64,
    pub suites: Vec<String>,
    pub measure: MeasureConfig,
    pub kernel: KernelConfig,
    pub lattice: LatticeConfig,
    pub accretive: AccretiveConfig,
    pub dyadic: DyadicConfig,
    pub sampler: SamplerConfig,
    pub aux: AuxConfig,
    pub battery: BatteryConfig,
    pub badcubes: BadCubesConfig,
    pub sqfn: SqfnConfig,
    pub decoupling: DecouplingConfig,
    pub matrix: MatrixConfig,
    pub ledger: LedgerConfig,
    pub paraproduct: ParaproductConfig,
    pub comparable: ComparableConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    pub dim: usize,
    pub d: f64,
    pub atoms: usize,
    pub profile: Profile,
    /// Load the base measure from a fixture file instead of generating it.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    /// `riesz`, `dipole` or `hilbert`.
    pub name: String,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    pub m: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccretiveConfig {
    pub delta: f64,
    pub style: AccretiveStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DyadicConfig {
    /// Defaults to the largest admissible value for `(d, alpha)`.
    pub gamma: Option<f64>,
    pub r: u32,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_exact: usize,
    pub mc_trials: usize,
    /// Test functions per instance.
    pub ensemble: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuxConfig {
    /// Auxiliary exponent; `2 max(s, p, q)` when absent.
    pub t: Option<f64>,
    /// Collar width for the comparable split.
    pub eta: f64,
}

/// Random fixtures for the algebraic and layer suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryConfig {
    pub fixtures: usize,
    pub atoms: usize,
    pub deltas: Vec<f64>,
    pub styles: Vec<AccretiveStyle>,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BadCubesConfig {
    pub gammas: Vec<f64>,
    pub rs: Vec<u32>,
    pub ns: Vec<i64>,
    pub dims: Vec<usize>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SqfnConfig {
    pub sizes: Vec<usize>,
    pub ps: Vec<f64>,
    pub rhos: Vec<f64>,
    pub deltas: Vec<f64>,
    pub styles: Vec<AccretiveStyle>,
    pub dims: Vec<usize>,
    /// Instances with nontrivial layers per size.
    pub instances: usize,
    /// Separation parameter used only to size the window of single-grid instances.
    pub window_r: u32,
    pub max_growth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecouplingConfig {
    pub sizes: Vec<usize>,
    pub ps: Vec<f64>,
    pub dims: Vec<usize>,
    pub delta: f64,
    /// Layered instances per size (taken from the square-function ladders).
    pub instances: usize,
    /// Test functions per instance.
    pub functions: usize,
    pub trials: usize,
    /// Trials for the comparison against enumeration.
    pub small_trials: usize,
    pub max_cubes: usize,
    pub max_growth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixConfig {
    pub slope_distances: Vec<f64>,
    pub slope_tolerance: f64,
    pub kernel_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    pub rs: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParaproductConfig {
    /// Small enough that deep nesting occurs inside the window.
    pub r: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparableConfig {
    pub collar_rs: Vec<u32>,
    pub collar_dims: Vec<usize>,
    /// The collar probability is estimated at `eta` and `eta / 2`.
    pub collar_eta: f64,
    pub collar_trials: usize,
    /// Separation parameter for the comparable split.
    pub split_r: u32,
    pub max_comparable_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20240607,
            p: 3.0,
            suites: ALL_SUITES.iter().map(|s| s.to_string()).collect(),
            measure: MeasureConfig::default(),
            kernel: KernelConfig::default(),
            lattice: LatticeConfig::default(),
            accretive: AccretiveConfig::default(),
            dyadic: DyadicConfig::default(),
            sampler: SamplerConfig::default(),
            aux: AuxConfig::default(),
            battery: BatteryConfig::default(),
            badcubes: BadCubesConfig::default(),
            sqfn: SqfnConfig::default(),
            decoupling: DecouplingConfig::default(),
            matrix: MatrixConfig::default(),
            ledger: LedgerConfig::default(),
            paraproduct: ParaproductConfig::default(),
            comparable: ComparableConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            d: 0.5,
            atoms: 64,
            profile: Profile::Uniform,
            file: None,
        }
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            name: "riesz".into(),
            eps: 1e-6,
        }
    }
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self { m: 2, rho: 4.0 }
    }
}

impl Default for AccretiveConfig {
    fn default() -> Self {
        Self {
            delta: 0.4,
            style: AccretiveStyle::SignedPerturbation,
        }
    }
}

impl Default for DyadicConfig {
    fn default() -> Self {
        Self {
            gamma: None,
            r: 6,
            alpha: 1.0,
        }
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_exact: 14,
            mc_trials: 4000,
            ensemble: 16,
        }
    }
}

impl Default for AuxConfig {
    fn default() -> Self {
        Self { t: None, eta: 0.1 }
    }
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            fixtures: 50,
            atoms: 64,
            deltas: vec![0.3, 0.5, 0.8],
            styles: vec![
                AccretiveStyle::SignedPerturbation,
                AccretiveStyle::Oscillatory,
            ],
            dims: vec![1, 2],
        }
    }
}

impl Default for BadCubesConfig {
    fn default() -> Self {
        Self {
            gammas: vec![0.1, 0.3],
            rs: vec![4, 8],
            ns: vec![0, 10],
            dims: vec![1, 2],
            trials: 100_000,
        }
    }
}

impl Default for SqfnConfig {
    fn default() -> Self {
        Self {
            sizes: vec![32, 64, 128, 256],
            ps: vec![1.5, 2.0, 3.0],
            rhos: vec![2.0, 4.0],
            deltas: vec![0.6],
            styles: vec![
                AccretiveStyle::SignedPerturbation,
                AccretiveStyle::Oscillatory,
            ],
            dims: vec![1, 2],
            instances: 8,
            window_r: 2,
            max_growth: 1.25,
        }
    }
}

impl Default for DecouplingConfig {
    fn default() -> Self {
        Self {
            sizes: vec![32, 64, 128, 256],
            ps: vec![2.0, 3.0],
            dims: vec![1, 2],
            delta: 0.6,
            instances: 4,
            functions: 4,
            trials: 1000,
            small_trials: 10_000,
            max_cubes: 12,
            max_growth: 1.25,
        }
    }
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            slope_distances: vec![4.0, 8.0, 16.0, 32.0, 64.0, 128.0],
            slope_tolerance: 0.1,
            kernel_samples: 4000,
        }
    }
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self { rs: vec![2, 4, 6] }
    }
}

impl Default for ParaproductConfig {
    fn default() -> Self {
        Self { r: 2 }
    }
}

impl Default for ComparableConfig {
    fn default() -> Self {
        Self {
            collar_rs: vec![2, 4],
            collar_dims: vec![1, 2],
            collar_eta: 0.02,
            collar_trials: 100_000,
            split_r: 2,
            max_comparable_pairs: 400,
        }
    }
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(f) = &cfg.measure.file {
            if f.is_relative() {
                cfg.measure.file = Some(path.parent().unwrap_or(Path::new(".")).join(f));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Dual exponent `q` with `1/p + 1/q = 1`.
    pub fn q(&self) -> f64 {
        conjugate(self.p)
    }

    pub fn params(&self) -> Result<DyadicParams> {
        let d = self.measure.d;
        let gamma = self
            .dyadic
            .gamma
            .unwrap_or_else(|| FixtureSpec::default_gamma(d, self.dyadic.alpha));
        Ok(DyadicParams::new(
            gamma,
            self.dyadic.r,
            self.dyadic.alpha,
            d,
        )?)
    }

    pub fn lattice(&self) -> Result<LatticeSpace> {
        Ok(LatticeSpace::new(self.lattice.m, self.lattice.rho)?)
    }

    pub fn t(&self) -> f64 {
        self.aux.t.unwrap_or_else(|| {
            tblab::randnorm::auxiliary_exponent(self.lattice.rho.max(2.0), self.p)
        })
    }

    pub fn kernel(&self, dim: usize, d: f64) -> Result<Kernel> {
        let eps = self.kernel.eps;
        Ok(match self.kernel.name.as_str() {
            "riesz" => Kernel::riesz(d, eps)?,
            "dipole" => {
                Kernel::random_dipole(tblab::seed::derive(self.seed, "dipole"), dim, d, eps)?
            }
            "hilbert" => Kernel::hilbert(eps)?,
            other => bail!("unknown kernel {other}"),
        })
    }

    /// The configured base fixture.
    pub fn base_spec(&self) -> Result<FixtureSpec> {
        let mut spec = FixtureSpec::new(
            self.seed,
            self.measure.dim,
            self.measure.atoms,
            self.accretive.delta,
            self.accretive.style,
            self.dyadic.r,
        )?
        .with_profile(self.measure.profile);
        spec.d = self.measure.d;
        spec.params = self.params()?;
        Ok(spec)
    }

    /// Base measure: the fixture file when given, otherwise generated.
    pub fn base_measure(&self) -> Result<AtomicMeasure> {
        match &self.measure.file {
            Some(f) => Ok(AtomicMeasure::load(f)
                .with_context(|| format!("loading measure {}", f.display()))?),
            None => Ok(self.base_spec()?.measure()?),
        }
    }

    /// Whether reduced-trial mode is requested through the environment.
    pub fn reduced_from_env() -> bool {
        std::env::var(REDUCED_TRIALS_ENV).is_ok_and(|v| !v.is_empty() && v != "0")
    }

    /// Divide every Monte Carlo trial count by ten.
    pub fn reduce_trials(&mut self) {
        let cut = |n: &mut usize, floor: usize| *n = (*n / 10).max(floor);
        cut(&mut self.sampler.mc_trials, 200);
        cut(&mut self.badcubes.trials, 1000);
        cut(&mut self.decoupling.trials, 100);
        cut(&mut self.decoupling.small_trials, 1000);
        cut(&mut self.comparable.collar_trials, 1000);
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            bail!("p = {} must lie in (1, inf)", self.p);
        }
        for s in &self.suites {
            if !ALL_SUITES.contains(&s.as_str()) {
                bail!("unknown suite {s}");
            }
        }
        if !(1..=2).contains(&self.measure.dim) && self.measure.file.is_none() {
            bail!("measure dimension {} outside 1..=2", self.measure.dim);
        }
        if self.measure.d <= 0.0 || self.measure.d > self.measure.dim as f64 {
            bail!("growth exponent {} outside (0, N]", self.measure.d);
        }
        self.params()?;
        self.lattice()?;
        self.kernel(self.measure.dim, self.measure.d)?;
        if !(self.accretive.delta > 0.0 && self.accretive.delta < 1.0) {
            bail!("delta = {} outside (0, 1)", self.accretive.delta);
        }
        if !(self.aux.eta > 0.0 && self.aux.eta < 0.25) {
            bail!("eta = {} outside (0, 1/4)", self.aux.eta);
        }
        if let Some(t) = self.aux.t {
            if !(t > 1.0) {
                bail!("auxiliary exponent t = {t} must exceed 1");
            }
        }
        if self.sampler.n_exact > 24 || self.sampler.ensemble == 0 || self.sampler.mc_trials < 2 {
            bail!("sampler settings out of range");
        }
        let all_p = self.sqfn.ps.iter().chain(&self.decoupling.ps);
        if all_p.clone().any(|&p| !(p > 1.0 && p.is_finite())) {
            bail!("suite exponents must lie in (1, inf)");
        }
        for &d in self
            .battery
            .deltas
            .iter()
            .chain(&self.sqfn.deltas)
            .chain([&self.decoupling.delta])
        {
            if !(d > 0.0 && d < 1.0) {
                bail!("delta = {d} outside (0, 1)");
            }
        }
        let dims = self
            .battery
            .dims
            .iter()
            .chain(&self.badcubes.dims)
            .chain(&self.sqfn.dims)
            .chain(&self.decoupling.dims);
        if dims
            .clone()
            .chain(&self.comparable.collar_dims)
            .any(|d| !(1..=2).contains(d))
        {
            bail!("suite dimensions must lie in 1..=2");
        }
        if self.decoupling.instances == 0 || self.decoupling.instances > self.sqfn.instances {
            bail!("decoupling instances must lie in 1..=sqfn.instances");
        }
        if self.badcubes.trials < 1000 {
            bail!("bad-cube estimates need at least 1000 trials");
        }
        for &g in &self.badcubes.gammas {
            for &r in &self.badcubes.rs {
                DyadicParams::new(g, r, self.dyadic.alpha, self.measure.d)
                    .with_context(|| format!("bad-cube sweep gamma = {g}, r = {r}"))?;
            }
        }
        if !(self.comparable.collar_eta > 0.0 && self.comparable.collar_eta < 0.25) {
            bail!("collar eta outside (0, 1/4)");
        }
        if self.sqfn.sizes.windows(2).any(|w| w[1] != 2 * w[0])
            || self.decoupling.sizes.windows(2).any(|w| w[1] != 2 * w[0])
        {
            bail!("size series must double");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!((1.0 / c.p + 1.0 / c.q() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("p = 1.0").is_err());
        assert!(ExperimentConfig::from_toml("[dyadic]\ngamma = 0.4").is_err());
        assert!(ExperimentConfig::from_toml("suites = [\"nope\"]").is_err());
        assert!(ExperimentConfig::from_toml("[kernel]\nname = \"gauss\"").is_err());
        assert!(ExperimentConfig::from_toml("[measure]\nunknown = 1").is_err());
        let c =
            ExperimentConfig::from_toml("seed = 5\n[accretive]\nstyle = \"indicator\"").unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.accretive.style, AccretiveStyle::Indicator);
    }
}
