//! Run configuration: defaults, TOML/JSON loading, command-line overrides,
//! validation and the canonical hash recorded in every manifest.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use gnmqsim::network_model::{DEFAULT_ANM_CUTOFF, DEFAULT_GNM_CUTOFF, DEFAULT_SPRING};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    #[default]
    Gnm,
    Anm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsChoice {
    #[default]
    Harmonic,
    Langevin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum InitialChoice {
    /// Displacement along one normal mode, zero velocity.
    #[default]
    Mode,
    /// Displacement proportional to the residue index about the chain midpoint.
    Stretch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StateChoice {
    #[default]
    Gaussian,
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OperatorChoice {
    #[default]
    Stiffness,
    Hamiltonian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    #[default]
    Jackson,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DampingChoice {
    #[default]
    Isotropic,
    VelocityOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseChoice {
    #[default]
    VelocityBlock,
    Isotropic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DosConfig {
    pub operator: OperatorChoice,
    pub kernel: KernelChoice,
    pub bins: usize,
    pub grid_points: usize,
}

impl Default for DosConfig {
    fn default() -> Self {
        Self { operator: OperatorChoice::Stiffness, kernel: KernelChoice::Jackson, bins: 40, grid_points: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatePrepConfig {
    pub qubits: u32,
    pub state: StateChoice,
}

impl Default for StatePrepConfig {
    fn default() -> Self {
        Self { qubits: 10, state: StateChoice::Gaussian }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub dynamics: DynamicsChoice,
    pub time: f64,
    pub steps: usize,
    pub initial: InitialChoice,
    /// 1-based index among nonzero modes, ascending frequency.
    pub mode: usize,
    pub amplitude: f64,
    pub gamma: f64,
    pub kbt: f64,
    pub damping: DampingChoice,
    pub noise: NoiseChoice,
    /// Monte Carlo paths for the Langevin cross-check; 0 disables it.
    pub paths: usize,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            dynamics: DynamicsChoice::Harmonic,
            time: 10.0,
            steps: 200,
            initial: InitialChoice::Mode,
            mode: 1,
            amplitude: 0.1,
            gamma: 0.5,
            kbt: 1.0,
            damping: DampingChoice::Isotropic,
            noise: NoiseChoice::VelocityBlock,
            paths: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub gamma: f64,
    /// `R = control_weight · I`.
    pub control_weight: f64,
    /// Displacement weight `K + ridge · λ_max(K) · I`.
    pub ridge: f64,
    /// Extra weight on velocities, `velocity_weight · I`.
    pub velocity_weight: f64,
    /// Finite horizon length; absent means infinite horizon.
    pub horizon: Option<f64>,
    /// Simulation length in units of the slowest closed-loop time constant.
    pub time_constants: f64,
    pub steps: usize,
    pub initial: InitialChoice,
    pub mode: usize,
    pub amplitude: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            gamma: gnmqsim::control::DEFAULT_GAMMA,
            control_weight: gnmqsim::control::DEFAULT_CONTROL_WEIGHT,
            ridge: gnmqsim::control::DEFAULT_RIDGE,
            velocity_weight: 0.0,
            horizon: None,
            time_constants: 50.0,
            steps: 4000,
            initial: InitialChoice::Stretch,
            mode: 1,
            amplitude: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourcesConfig {
    pub min_entries: usize,
    pub max_entries: usize,
    pub width: usize,
}

impl Default for ResourcesConfig {
    fn default() -> Self {
        Self { min_entries: 4, max_entries: 256, width: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub model: ModelChoice,
    /// Resolved to the model default during validation.
    pub cutoff: Option<f64>,
    pub spring: f64,
    #[serde(with = "hex_seed")]
    pub seed: u64,
    pub moments: usize,
    /// Hutchinson probes; 0 selects exact moments.
    pub probes: usize,
    /// Thermal energy for fluctuation profiles.
    pub kbt: f64,
    pub dos: DosConfig,
    pub stateprep: StatePrepConfig,
    pub evolve: EvolveConfig,
    pub control: ControlConfig,
    pub resources: ResourcesConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            out: PathBuf::from("out"),
            model: ModelChoice::Gnm,
            cutoff: None,
            spring: DEFAULT_SPRING,
            seed: 0,
            moments: 100,
            probes: 0,
            kbt: 1.0,
            dos: DosConfig::default(),
            stateprep: StatePrepConfig::default(),
            evolve: EvolveConfig::default(),
            control: ControlConfig::default(),
            resources: ResourcesConfig::default(),
        }
    }
}

mod hex_seed {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{seed:#x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(v),
            Raw::Text(t) => super::parse_seed(&t).map_err(serde::de::Error::custom),
        }
    }
}

/// Hexadecimal with or without a `0x` prefix.
pub fn parse_seed(text: &str) -> Result<u64, String> {
    let digits = text.trim().trim_start_matches("0x").trim_start_matches("0X");
    u64::from_str_radix(digits, 16).map_err(|e| format!("seed {text:?} is not hexadecimal: {e}"))
}

impl RunConfig {
    /// Reads a TOML config, a JSON config, or the `config` field of a manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let bad = |e: String| CliError::Usage(format!("config {}: {e}", path.display()));
        if path.extension().is_some_and(|e| e == "json") {
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            let body = value.get("config").cloned().unwrap_or(value);
            serde_json::from_value(body).map_err(|e| bad(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))
        }
    }

    pub fn resolved_cutoff(&self) -> f64 {
        self.cutoff.unwrap_or(match self.model {
            ModelChoice::Gnm => DEFAULT_GNM_CUTOFF,
            ModelChoice::Anm => DEFAULT_ANM_CUTOFF,
        })
    }

    /// Checks the fields a subcommand reads and fills in derived defaults.
    pub fn validate(&mut self, needs_input: bool) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if needs_input {
            match &self.input {
                None => return usage("--input is required for this subcommand".into()),
                Some(p) if !p.is_file() => return usage(format!("input {} does not exist", p.display())),
                _ => {}
            }
        }
        self.cutoff = Some(self.resolved_cutoff());
        let positive = [
            ("cutoff", self.resolved_cutoff()),
            ("spring", self.spring),
            ("kbt", self.kbt),
            ("evolve.time", self.evolve.time),
            ("evolve.kbt", self.evolve.kbt),
            ("control.control_weight", self.control.control_weight),
            ("control.time_constants", self.control.time_constants),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return usage(format!("{name} must be positive and finite, got {v}"));
            }
        }
        let nonnegative = [
            ("evolve.gamma", self.evolve.gamma),
            ("evolve.amplitude", self.evolve.amplitude),
            ("control.gamma", self.control.gamma),
            ("control.ridge", self.control.ridge),
            ("control.velocity_weight", self.control.velocity_weight),
            ("control.amplitude", self.control.amplitude),
        ];
        for (name, v) in nonnegative {
            if !(v.is_finite() && v >= 0.0) {
                return usage(format!("{name} must be nonnegative and finite, got {v}"));
            }
        }
        if let Some(t) = self.control.horizon {
            if !(t.is_finite() && t > 0.0) {
                return usage(format!("control.horizon must be positive, got {t}"));
            }
        }
        if self.evolve.steps == 0 || self.control.steps == 0 {
            return usage("step counts must be positive".into());
        }
        if self.evolve.mode == 0 || self.control.mode == 0 {
            return usage("mode indices start at 1".into());
        }
        if self.dos.bins == 0 || self.dos.grid_points == 0 {
            return usage("dos.bins and dos.grid_points must be positive".into());
        }
        if !(1..=20).contains(&self.stateprep.qubits) {
            return usage(format!("stateprep.qubits must lie in 1..=20, got {}", self.stateprep.qubits));
        }
        let r = &self.resources;
        if r.min_entries == 0 || r.min_entries > r.max_entries || !(1..=64).contains(&r.width) {
            return usage(format!("resources needs 1 ≤ min_entries ≤ max_entries and width in 1..=64, got {r:?}"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialisation.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_parse_with_and_without_prefix() {
        assert_eq!(parse_seed("0x2a"), Ok(42));
        assert_eq!(parse_seed("ff"), Ok(255));
        assert!(parse_seed("zz").is_err());
    }

    #[test]
    fn toml_round_trip_preserves_hash() {
        let mut c = RunConfig { seed: 0xbeef, moments: 64, ..RunConfig::default() };
        c.dos.kernel = KernelChoice::Dirichlet;
        c.control.horizon = Some(5.0);
        let text = toml::to_string(&c).unwrap();
        assert!(text.contains("seed = \"0xbeef\""));
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("colour = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[dos]\nbinz = 3").is_err());
    }

    #[test]
    fn validation_resolves_cutoff_per_model() {
        let mut c = RunConfig { model: ModelChoice::Anm, ..RunConfig::default() };
        c.validate(false).unwrap();
        assert_eq!(c.cutoff, Some(DEFAULT_ANM_CUTOFF));
        let mut bad = RunConfig { spring: -1.0, ..RunConfig::default() };
        assert!(matches!(bad.validate(false), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::default().validate(true), Err(CliError::Usage(_))));
    }
}
