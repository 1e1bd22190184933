//! Run configuration: one TOML file, every section optional, unknown keys rejected.
//!
//! ```toml
//! [model]
//! mor = "on"
//! dictionary = "rb.dict"
//!
//! [optimization]
//! formulation = "uq_robust"
//! optimizer = "sqp"
//!
//! [uncertainty]
//! delta = 0.2
//! method = "sq"
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use pmopt_core::bench::{EMF_TARGET, START};
use pmopt_core::fem::{EmfScale, FemOptions, MaterialTable};
use pmopt_core::geom::{GeometryNumbers, ParamVector};
use pmopt_core::opt::{Kind, PsoOptions, SqpOptions, Uncertainty};
use pmopt_core::rb::GreedyOptions;
use pmopt_core::uq::MomentMethod;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct KindName(pub Kind);

impl TryFrom<String> for KindName {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        Kind::parse(&s).map(KindName).ok_or_else(|| format!("unknown formulation `{s}`"))
    }
}

impl From<KindName> for String {
    fn from(k: KindName) -> String {
        k.0.name().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UqMethod {
    Sq,
    Mc,
    Lin,
}

impl UqMethod {
    pub fn to_core(self) -> MomentMethod {
        match self {
            UqMethod::Sq => MomentMethod::Sq,
            UqMethod::Mc => MomentMethod::Mc,
            UqMethod::Lin => MomentMethod::Lin,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UqMethod::Sq => "sq",
            UqMethod::Mc => "mc",
            UqMethod::Lin => "lin",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sq" => Some(UqMethod::Sq),
            "mc" => Some(UqMethod::Mc),
            "lin" => Some(UqMethod::Lin),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sqp,
    Pso,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sqp => "sqp",
            Optimizer::Pso => "pso",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mor {
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub half_width: f64,
    pub rotor_surface: f64,
    pub airgap: f64,
    pub stator_top: f64,
    pub box_half_width: f64,
    pub box_depth: f64,
    pub probe_x: f64,
    pub notch_width: f64,
    pub notch_depth: f64,
    pub reference: [f64; 3],
}

impl Default for GeometrySection {
    fn default() -> Self {
        let g = GeometryNumbers::default();
        GeometrySection {
            half_width: g.half_width,
            rotor_surface: g.rotor_surface,
            airgap: g.airgap,
            stator_top: g.stator_top,
            box_half_width: g.box_half_width,
            box_depth: g.box_depth,
            probe_x: g.probe_x,
            notch_width: g.notch_width,
            notch_depth: g.notch_depth,
            reference: g.reference.0,
        }
    }
}

impl GeometrySection {
    pub fn numbers(&self) -> GeometryNumbers {
        GeometryNumbers {
            half_width: self.half_width,
            rotor_surface: self.rotor_surface,
            airgap: self.airgap,
            stator_top: self.stator_top,
            box_half_width: self.box_half_width,
            box_depth: self.box_depth,
            probe_x: self.probe_x,
            notch_width: self.notch_width,
            notch_depth: self.notch_depth,
            reference: ParamVector(self.reference),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Lattice refinement of the macro-triangles.
    pub mesh_level: u32,
    pub iron_permeability: f64,
    pub remanence: f64,
    /// EMF at the reference design after calibration, in volts.
    pub emf_calibration: f64,
    pub emf_target: f64,
    pub mor: Mor,
    /// Dictionary file; read if it exists, otherwise written after training.
    pub dictionary: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let fem = FemOptions::default();
        ModelSection {
            mesh_level: fem.level,
            iron_permeability: 500.0,
            remanence: fem.remanence,
            emf_calibration: EMF_TARGET,
            emf_target: EMF_TARGET,
            mor: Mor::Off,
            dictionary: None,
        }
    }
}

impl ModelSection {
    pub fn fem_options(&self) -> FemOptions {
        FemOptions {
            level: self.mesh_level,
            remanence: self.remanence,
            emf: EmfScale::CalibrateTo(self.emf_calibration),
            ..FemOptions::default()
        }
    }

    pub fn materials(&self) -> MaterialTable {
        MaterialTable::with_iron_permeability(self.iron_permeability)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbSection {
    pub tol: f64,
    pub max_dim: usize,
    pub grid: [usize; 3],
    /// Training distance from the design domain, mm.
    pub margin: f64,
}

impl Default for RbSection {
    fn default() -> Self {
        let g = GreedyOptions::default();
        RbSection { tol: g.tol, max_dim: g.max_dim, grid: g.grid, margin: g.margin }
    }
}

impl RbSection {
    pub fn greedy(&self) -> GreedyOptions {
        GreedyOptions { tol: self.tol, max_dim: self.max_dim, grid: self.grid, margin: self.margin }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizationSection {
    pub formulation: KindName,
    pub optimizer: Optimizer,
    pub start: [f64; 3],
    pub tol: f64,
    pub max_iter: usize,
    pub particles: usize,
    pub swarm_iterations: usize,
    pub stall: usize,
}

impl Default for OptimizationSection {
    fn default() -> Self {
        let sqp = SqpOptions::default();
        let pso = PsoOptions::default();
        OptimizationSection {
            formulation: KindName(Kind::Nominal),
            optimizer: Optimizer::Sqp,
            start: START.0,
            tol: sqp.tol,
            max_iter: sqp.max_iter,
            particles: pso.particles,
            swarm_iterations: pso.max_iter,
            stall: pso.stall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintySection {
    /// Half-width of the uniform perturbation of every parameter, mm.
    pub delta: f64,
    pub lambda: f64,
    pub method: UqMethod,
    pub nodes_per_dim: usize,
    pub mc_samples: usize,
}

impl Default for UncertaintySection {
    fn default() -> Self {
        let u = Uncertainty::default();
        UncertaintySection {
            delta: 0.2,
            lambda: u.lambda,
            method: UqMethod::Sq,
            nodes_per_dim: u.nodes_per_dim,
            mc_samples: u.mc_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    /// Monte Carlo moments.
    pub mc: u64,
    pub pso: u64,
    pub audit: u64,
}

impl Default for SeedSection {
    fn default() -> Self {
        SeedSection { mc: 0, pso: 0, audit: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSection {
    /// Zero skips the failure-rate audit.
    pub samples: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        AuditSection { samples: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub deltas: Vec<f64>,
    pub kinds: Vec<KindName>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            deltas: vec![0.2, 0.1, 0.05, 0.0],
            kinds: [Kind::Nominal, Kind::Wc1, Kind::Wc2, Kind::UqRobust, Kind::UqLin].map(KindName).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Worker threads; zero uses every core.
    pub threads: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("pmopt-out"), threads: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometrySection,
    pub model: ModelSection,
    pub rb: RbSection,
    pub optimization: OptimizationSection,
    pub uncertainty: UncertaintySection,
    pub seeds: SeedSection,
    pub audit: AuditSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

/// Hex digest of a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigHash(pub String);

impl fmt::Display for ConfigHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Digest of everything that can change the numbers; the output section
    /// is left out.
    pub fn hash(&self) -> ConfigHash {
        let mut c = self.clone();
        c.output = OutputSection::default();
        ConfigHash(hex(&Sha256::digest(c.to_toml().as_bytes()))[..16].to_string())
    }

    pub fn uncertainty(&self) -> Uncertainty {
        let u = &self.uncertainty;
        Uncertainty {
            half_width: [u.delta; 3],
            lambda: u.lambda,
            method: u.method.to_core(),
            nodes_per_dim: u.nodes_per_dim,
            mc_samples: u.mc_samples,
            seed: self.seeds.mc,
        }
    }

    pub fn sqp(&self) -> SqpOptions {
        SqpOptions { tol: self.optimization.tol, max_iter: self.optimization.max_iter, ..SqpOptions::default() }
    }

    pub fn pso(&self) -> PsoOptions {
        let o = &self.optimization;
        PsoOptions { particles: o.particles, max_iter: o.swarm_iterations, stall: o.stall, seed: self.seeds.pso, ..PsoOptions::default() }
    }

    pub fn kind(&self) -> Kind {
        self.optimization.formulation.0
    }

    pub fn start(&self) -> ParamVector {
        ParamVector(self.optimization.start)
    }

    /// Checks every value before anything is computed.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RunError::Config(m));
        self.geometry.numbers().validate().map_err(|e| RunError::Config(e.to_string()))?;
        let m = &self.model;
        if m.mor == Mor::Off && m.dictionary.is_some() {
            return bad("a dictionary path needs mor = \"on\"".into());
        }
        if !(1..=7).contains(&m.mesh_level) {
            return bad(format!("mesh_level must lie in 1..=7, got {}", m.mesh_level));
        }
        for (name, v) in [
            ("iron_permeability", m.iron_permeability),
            ("remanence", m.remanence),
            ("emf_calibration", m.emf_calibration),
            ("emf_target", m.emf_target),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.rb.tol > 0.0) || self.rb.max_dim == 0 || self.rb.grid.contains(&0) || !(self.rb.margin >= 0.0) {
            return bad("rb tol, max_dim and grid must be positive and margin nonnegative".into());
        }
        let u = &self.uncertainty;
        if !(0.0..=0.2).contains(&u.delta) {
            return bad(format!("delta must lie in [0, 0.2] mm, got {}", u.delta));
        }
        if !(u.lambda >= 0.0 && u.lambda.is_finite()) {
            return bad(format!("lambda must be nonnegative, got {}", u.lambda));
        }
        if u.nodes_per_dim == 0 || u.mc_samples < 2 {
            return bad("nodes_per_dim must be positive and mc_samples at least 2".into());
        }
        let o = &self.optimization;
        if !(o.tol > 0.0) || o.max_iter == 0 || o.particles == 0 || o.swarm_iterations == 0 || o.stall == 0 {
            return bad("optimizer tolerances and counts must be positive".into());
        }
        if o.start.iter().any(|x| !x.is_finite()) {
            return bad("start must be finite".into());
        }
        if self.audit.samples != 0 && self.audit.samples < 1000 {
            return bad(format!("audit samples must be 0 or at least 1000, got {}", self.audit.samples));
        }
        if self.sweep.deltas.iter().any(|d| !(0.0..=0.2).contains(d)) {
            return bad("sweep deltas must lie in [0, 0.2] mm".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::parse("[model]\nmesh = 3\n"), Err(RunError::Config(_))));
        assert!(matches!(RunConfig::parse("[solver]\n"), Err(RunError::Config(_))));
        assert!(matches!(RunConfig::parse("[optimization]\nformulation = \"wc3\"\n"), Err(RunError::Config(_))));
    }

    #[test]
    fn dictionary_without_mor_is_a_config_error() {
        let c = RunConfig::parse("[model]\nmor = \"off\"\ndictionary = \"rb.dict\"\n").unwrap();
        let e = c.validate().unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn hash_ignores_the_output_section() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output.dir = "elsewhere".into();
        b.output.threads = 3;
        assert_eq!(a.hash(), b.hash());
        b.seeds.audit = 9;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = RunConfig::parse("[uncertainty]\ndelta = 0.1\nmethod = \"mc\"\n").unwrap();
        assert_eq!(c.uncertainty.delta, 0.1);
        assert_eq!(c.uncertainty.method, UqMethod::Mc);
        assert_eq!(c.model, ModelSection::default());
    }
}
