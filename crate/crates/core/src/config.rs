//! Run configuration: TOML files, preset expansion, validation and hashing.
//!
//! A config file either spells out every section or names a preset and
//! overrides selected keys; the preset table is merged underneath the user's
//! table before deserialization, so partial overrides like changing the
//! injection cost need a single line. Unknown keys are rejected with their
//! key path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{CostSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::func::{DriftFn, JumpFn, VolFn};
use crate::hawkes::{HawkesSpec, StabilityRegime};

/// The controlled mean-reverting cyber-risk application: an
/// Ornstein–Uhlenbeck profitability state dX = (α − δX)dt + σdW + dξ − dN
/// capped at one, a critical single-component Hawkes driver
/// dλ = −q(λ − a)dt + dN, an insured-floor put F(x) = (I − x)⁺ and terminal
/// payoff G(x) = (x⁺)^(1−η)/η, with parameters r = 0, α = 0.5, δ = 1,
/// σ = 0.1, η = 0.1, q = 1, a = 1, T = 1, I = 0.5.
///
/// Reproduction choices not pinned by the source material: the insured floor
/// I = 0.5, the lower domain bound −1, the excitation grid [−0.5, 3]
/// (covering initial intensities 0.5..4; entries below zero encode initial
/// intensities below the baseline a), and the default injection cost 0.01.
pub const OU_CYBER_PRESET: &str = r#"
[model]
drift = { kind = "affine", intercept = 0.5, slope = -1.0 }
vol = { kind = "constant", value = 0.1 }
jump = { kind = "constant", value = -1.0 }
controls_b = [1.0]
controls_g = [0.0]

[hawkes]
baseline = { kind = "constant", value = 1.0 }
components = [{ d = 1.0, q = 1.0 }]
mark_impact = { kind = "constant", value = 1.0 }
mark_measure = { kind = "finite", atoms = [[1.0, 1.0]] }
horizon = 1.0
allow_critical = true

[cost]
stop = { kind = "put", strike = 0.5 }
terminal = { kind = "power-ceiling", eta = 0.1 }
injection = { kind = "constant", value = 0.01 }

[lattice]
h = 0.02
m = 15
upsilon = 1
x_min = -1.0
x_max = 1.0
sigma_min = [-0.5]
sigma_max = [3.0]

[solver]
probes = [[0.0, 1.0]]
h_list = [0.04, 0.02, 0.01, 0.005]
l_list = [1.0, 2.0, 3.0]
paths = 10000
lambda0_grid = [0.5, 1.0, 2.0, 4.0]
phi_variants = ["disabled", 3.0, 0.01]
x0 = 0.0
study_paths = 2000

[simulate]
mode = "sde"
paths = 1
x0 = 0.0
lambda0 = 1.0
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub drift: DriftFn,
    pub vol: VolFn,
    pub jump: JumpFn,
    pub controls_b: Vec<f64>,
    pub controls_g: Vec<f64>,
    /// Optional Lipschitz/growth constant for the sampled coefficient
    /// spot-check; reported as a warning when exceeded.
    #[serde(default)]
    pub lipschitz_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    /// x-grid spacing.
    pub h: f64,
    /// Symmetric domain half-width; shorthand for x in [−L, L], ς in [0, L].
    #[serde(default)]
    pub l: Option<f64>,
    /// ς-grid points per component.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Mark representative count.
    #[serde(default = "default_upsilon")]
    pub upsilon: usize,
    #[serde(default)]
    pub x_min: Option<f64>,
    #[serde(default)]
    pub x_max: Option<f64>,
    #[serde(default)]
    pub sigma_min: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma_max: Option<Vec<f64>>,
}

fn default_m() -> usize {
    21
}

fn default_upsilon() -> usize {
    1
}

/// Injection-cost variant of the stopping study: a number, or "disabled"
/// for the no-injection case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhiVariant {
    Value(f64),
    Keyword(String),
}

impl PhiVariant {
    pub fn as_option(&self) -> Result<Option<f64>> {
        match self {
            PhiVariant::Value(v) => Ok(Some(*v)),
            PhiVariant::Keyword(k) if k == "disabled" => Ok(None),
            PhiVariant::Keyword(k) => Err(Error::config(
                "solver.phi_variants",
                format!("unknown variant `{k}` (use a number or \"disabled\")"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// (x₀, λ₀) probe points for value queries and sweeps.
    #[serde(default = "default_probes")]
    pub probes: Vec<(f64, f64)>,
    #[serde(default = "default_h_list")]
    pub h_list: Vec<f64>,
    #[serde(default = "default_l_list")]
    pub l_list: Vec<f64>,
    /// Rollout path count.
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_lambda0_grid")]
    pub lambda0_grid: Vec<f64>,
    #[serde(default = "default_phi_variants")]
    pub phi_variants: Vec<PhiVariant>,
    /// Start state for rollouts and the stopping study.
    #[serde(default)]
    pub x0: f64,
    /// Rollouts per stopping-study cell.
    #[serde(default = "default_study_paths")]
    pub study_paths: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        toml::from_str("").expect("empty solver section")
    }
}

fn default_probes() -> Vec<(f64, f64)> {
    vec![(0.0, 1.0)]
}

fn default_h_list() -> Vec<f64> {
    vec![0.04, 0.02, 0.01, 0.005]
}

fn default_l_list() -> Vec<f64> {
    vec![1.0, 2.0, 3.0]
}

fn default_paths() -> usize {
    10_000
}

fn default_lambda0_grid() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0]
}

fn default_phi_variants() -> Vec<PhiVariant> {
    vec![
        PhiVariant::Keyword("disabled".to_string()),
        PhiVariant::Value(3.0),
        PhiVariant::Value(0.01),
    ]
}

fn default_study_paths() -> usize {
    2_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// "sde" (exact dynamics) or "chain" (the discrete approximation).
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_one")]
    pub paths: usize,
    /// Step for the SDE simulator; defaults to the lattice Δt.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    /// Explicit initial excitation vector; overrides the λ₀ mapping (needed
    /// for multi-component kernels).
    #[serde(default)]
    pub sigma0: Option<Vec<f64>>,
    /// Scheduled deterministic injections (time, amount).
    #[serde(default)]
    pub injections: Vec<(f64, f64)>,
    #[serde(default)]
    pub stop_time: Option<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        toml::from_str("").expect("empty simulate section")
    }
}

fn default_mode() -> String {
    "sde".to_string()
}

fn default_one() -> usize {
    1
}

fn default_lambda0() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; falls back to $HAWKES_MCA_OUT, then "./out".
    #[serde(default)]
    pub dir: Option<String>,
}

/// Fully merged configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub model: ModelSection,
    pub hawkes: HawkesSpec,
    pub cost: CostSpec,
    pub lattice: LatticeSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// A validated configuration with the resolved model/cost pair.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub raw: RunConfig,
    pub model: ModelSpec,
    pub cost: CostSpec,
    /// 16-hex-digit digest of the resolved configuration.
    pub hash: String,
    pub warnings: Vec<String>,
}

impl Loaded {
    pub fn seed(&self) -> Result<u64> {
        self.raw
            .seed
            .ok_or_else(|| Error::config("seed", "a seed is mandatory for stochastic commands"))
    }

    pub fn output_dir(&self) -> std::path::PathBuf {
        if let Some(dir) = &self.raw.output.dir {
            return dir.into();
        }
        if let Ok(dir) = std::env::var("HAWKES_MCA_OUT") {
            if !dir.is_empty() {
                return dir.into();
            }
        }
        "out".into()
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn preset_table(name: &str) -> Result<toml::Table> {
    match name {
        "ou-cyber" => toml::from_str(OU_CYBER_PRESET)
            .map_err(|e| Error::config("preset", format!("internal preset parse error: {e}"))),
        other => Err(Error::config(
            "preset",
            format!("unknown preset `{other}` (available: ou-cyber)"),
        )),
    }
}

/// Parses, merges the preset (if any), deserializes strictly and validates.
pub fn load_config_str(text: &str) -> Result<Loaded> {
    let user: toml::Table = toml::from_str(text)
        .map_err(|e| Error::config("<config>", format!("TOML parse error: {e}")))?;
    let merged = if let Some(preset_name) = user.get("preset") {
        let name = preset_name
            .as_str()
            .ok_or_else(|| Error::config("preset", "must be a string"))?;
        let mut table = preset_table(name)?;
        merge_tables(&mut table, user.clone());
        table
    } else {
        user
    };
    let raw: RunConfig = merged
        .try_into()
        .map_err(|e| Error::config("<config>", e.to_string()))?;
    resolve(raw)
}

pub fn load_config(path: &Path) -> Result<Loaded> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    load_config_str(&text)
}

/// Builds the model/cost pair, runs every type invariant, and collects
/// non-fatal warnings (stability regime, Lipschitz spot-check).
fn resolve(raw: RunConfig) -> Result<Loaded> {
    let lat = &raw.lattice;
    let (x_lo, x_hi) = match (lat.x_min, lat.x_max, lat.l) {
        (Some(lo), Some(hi), _) => (lo, hi),
        (None, None, Some(l)) => (-l, l),
        (Some(lo), None, Some(l)) => (lo, l),
        (None, Some(hi), Some(l)) => (-l, hi),
        _ => {
            return Err(Error::config(
                "lattice",
                "domain underspecified: give l, or x_min and x_max",
            ))
        }
    };
    let dim = raw.hawkes.components.len();
    let sigma_lo = lat.sigma_min.clone().unwrap_or_else(|| vec![0.0; dim]);
    let default_hi = lat.l.unwrap_or_else(|| x_hi.abs().max(x_lo.abs()));
    let sigma_hi = lat
        .sigma_max
        .clone()
        .unwrap_or_else(|| vec![default_hi; dim]);

    let model = ModelSpec {
        drift: raw.model.drift.clone(),
        vol: raw.model.vol.clone(),
        jump: raw.model.jump.clone(),
        controls_b: raw.model.controls_b.clone(),
        controls_g: raw.model.controls_g.clone(),
        hawkes: raw.hawkes.clone(),
        x_lo,
        x_hi,
        sigma_lo,
        sigma_hi,
    };
    model.validate()?;
    let cost = raw.cost.clone();
    cost.validate(model.hawkes.horizon)?;
    if lat.m < 2 {
        return Err(Error::config("lattice.m", "needs at least 2 points"));
    }
    if lat.upsilon < 1 {
        return Err(Error::config("lattice.upsilon", "must be at least 1"));
    }
    // Fail fast on grid geometry (h dividing the domain, step construction).
    crate::lattice::build_lattice(&model, lat.h, lat.m, lat.upsilon)?;
    for v in &raw.solver.phi_variants {
        v.as_option()?;
    }
    if !matches!(raw.simulate.mode.as_str(), "sde" | "chain") {
        return Err(Error::config(
            "simulate.mode",
            format!("unknown mode `{}` (use sde or chain)", raw.simulate.mode),
        ));
    }

    let mut warnings = Vec::new();
    match model.hawkes.stability_regime() {
        StabilityRegime::Subcritical => {}
        regime => warnings.push(format!(
            "hawkes kernel is {:?} (branching norm {:.4}); finite-horizon runs proceed",
            regime,
            model.hawkes.branching_norm()
        )),
    }
    if let Some(bound) = raw.model.lipschitz_bound {
        warnings.extend(model.lipschitz_warnings(bound));
    }

    let hash = config_hash(&raw);
    Ok(Loaded {
        raw,
        model,
        cost,
        hash,
        warnings,
    })
}

/// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
pub fn config_hash(raw: &RunConfig) -> String {
    let canonical = serde_json::to_string(raw).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::func::{InjectionCostFn, StopPayoffFn, TerminalPayoffFn};

    #[test]
    fn minimal_preset_expands_to_full_config() {
        let loaded = load_config_str("preset = \"ou-cyber\"").unwrap();
        assert_eq!(loaded.cost.stop, StopPayoffFn::Put { strike: 0.5 });
        assert_eq!(
            loaded.cost.terminal,
            TerminalPayoffFn::PowerCeiling { eta: 0.1 }
        );
        assert_eq!(loaded.model.x_hi, 1.0);
        assert_eq!(loaded.model.x_lo, -1.0);
        assert_eq!(loaded.model.sigma_lo, vec![-0.5]);
        assert_eq!(loaded.model.sigma_hi, vec![3.0]);
        assert_eq!(loaded.raw.lattice.h, 0.02);
        assert_eq!(loaded.model.hawkes.components[0].q, 1.0);
        // The critical kernel produces a warning, not an error.
        assert!(loaded.warnings.iter().any(|w| w.contains("Critical")));
    }

    #[test]
    fn preset_override_merges() {
        let text = r#"
preset = "ou-cyber"
seed = 7

[cost]
injection = { kind = "constant", value = 3.0 }
"#;
        let loaded = load_config_str(text).unwrap();
        assert_eq!(
            loaded.cost.injection,
            InjectionCostFn::Constant { value: 3.0 }
        );
        // Everything else still comes from the preset.
        assert_eq!(loaded.cost.stop, StopPayoffFn::Put { strike: 0.5 });
        assert_eq!(loaded.seed().unwrap(), 7);
        // Different configs hash differently; identical ones identically.
        let base = load_config_str("preset = \"ou-cyber\"").unwrap();
        assert_ne!(base.hash, loaded.hash);
        assert_eq!(
            base.hash,
            load_config_str("preset = \"ou-cyber\"").unwrap().hash
        );
    }

    #[test]
    fn bad_grid_spacing_is_rejected_with_values() {
        let text = r#"
preset = "ou-cyber"

[lattice]
h = 0.3
"#;
        let err = load_config_str(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("0.3"), "message should name h: {msg}");
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn unknown_keys_are_rejected_with_path() {
        let text = r#"
preset = "ou-cyber"

[cost]
injectoin = { kind = "constant", value = 3.0 }
"#;
        let err = load_config_str(text).unwrap_err().to_string();
        assert!(err.contains("injectoin"), "got: {err}");
    }

    #[test]
    fn missing_seed_only_fails_when_requested() {
        let loaded = load_config_str("preset = \"ou-cyber\"").unwrap();
        assert!(loaded.seed().is_err());
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(load_config_str("preset = \"nope\"").is_err());
    }
}
