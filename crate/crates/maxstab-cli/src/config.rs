//! Per-subcommand configuration files.
//!
//! Every file is TOML. Keys left out take the defaults printed by
//! `maxstab --schema <subcommand>`; unknown keys are rejected with their
//! location.

use std::path::PathBuf;

use maxstab::censor_sets::SetRecipe;
use maxstab::coupling_lab::{ClassifyProtocol, MatchConfig};
use maxstab::sign_field::{FormulaOptions, ProductFunctional};
use maxstab::spectral_pruning::{GrowthLaw, ProfileSpec, PruningPreset, Target};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Keys shared by all subcommands.
pub trait Common: Serialize + DeserializeOwned + Default {
    fn seed(&self) -> Option<u64>;
    fn set_seed(&mut self, seed: u64);
    fn out(&self) -> Option<&PathBuf>;
}

macro_rules! common {
    ($($t:ty),*) => {$(
        impl Common for $t {
            fn seed(&self) -> Option<u64> {
                self.seed
            }
            fn set_seed(&mut self, seed: u64) {
                self.seed = Some(seed);
            }
            fn out(&self) -> Option<&PathBuf> {
                self.out.as_ref()
            }
        }
    )*};
}

common!(
    ClassifyConfig,
    MatchProbConfig,
    FormulaConfig,
    OracleConfig,
    TimeChangeConfig,
    GenerateConfig,
    PruneConfig,
    ReportConfig
);

fn unit_elementary(intervals: &[[f64; 2]]) -> SetRecipe {
    SetRecipe::Elementary {
        window: [0.0, 1.0],
        intervals: intervals.to_vec(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub set: SetRecipe,
    pub protocol: ClassifyProtocol,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            seed: None,
            out: None,
            set: unit_elementary(&[[0.3, 0.7]]),
            protocol: ClassifyProtocol::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchProbConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub set: SetRecipe,
    /// Maximizers are taken over this interval.
    pub interval: [f64; 2],
    /// Optional restriction `τ ∈ G`, as a union of intervals.
    pub g: Option<Vec<[f64; 2]>>,
    pub levels: Vec<u32>,
    pub replicas: u64,
    pub config: MatchConfig,
}

impl Default for MatchProbConfig {
    fn default() -> Self {
        MatchProbConfig {
            seed: None,
            out: None,
            set: unit_elementary(&[[0.0, 0.6]]),
            interval: [0.0, 1.0],
            g: None,
            levels: vec![8, 10, 12],
            replicas: 2000,
            config: MatchConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FormulaConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub set: SetRecipe,
    pub functional: ProductFunctional,
    pub level: u32,
    pub config: MatchConfig,
    pub options: FormulaOptions,
}

impl Default for FormulaConfig {
    fn default() -> Self {
        FormulaConfig {
            seed: None,
            out: None,
            set: unit_elementary(&[[0.2, 0.7]]),
            functional: ProductFunctional::argmax_only((0.0, 1.0), 0.0, 1.0),
            level: 12,
            config: MatchConfig::default(),
            options: FormulaOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Fixture file; the matrix shipped with the binary when absent.
    pub fixture: Option<PathBuf>,
    /// Monte Carlo replicas of the random-walk model per case; 0 skips it.
    pub mc_replicas: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeChangeConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub set: SetRecipe,
    pub level: u32,
    /// Number of dyadic intervals for the pushforward check.
    pub intervals: usize,
    pub checkpoints: usize,
    pub replicas: u64,
    /// Replicas (the first ones) used for the maxima correspondence.
    pub correspondence_replicas: u64,
    pub config: MatchConfig,
}

impl Default for TimeChangeConfig {
    fn default() -> Self {
        TimeChangeConfig {
            seed: None,
            out: None,
            set: SetRecipe::FatCantor {
                window: [0.0, 1.0],
                depth: 20,
            },
            level: 12,
            intervals: 50,
            checkpoints: 10,
            replicas: 2000,
            correspondence_replicas: 500,
            config: MatchConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub set: SetRecipe,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            seed: None,
            out: None,
            set: SetRecipe::CantorAlpha {
                window: [0.0, 1.0],
                alpha: 4.0,
                depth: 20,
                constant: None,
                cap: None,
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub preset: PruningPreset,
    pub profiles: Vec<ProfileSpec>,
    pub runs: u64,
    /// Start levels for the retention bound; empty skips it.
    pub retention_ms: Vec<u32>,
    /// Hit targets, `theorem_b` presets only.
    pub targets: Vec<Target>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            seed: None,
            out: None,
            preset: PruningPreset::shipped_a(),
            profiles: vec![
                ProfileSpec::FinitePoints {
                    name: "singleton".into(),
                    points: vec![0.1],
                },
                ProfileSpec::Growth {
                    name: "growth".into(),
                    law: GrowthLaw::PresetC,
                    block_depth: 1,
                    block_index: 1,
                },
            ],
            runs: 10_000,
            retention_ms: Vec::new(),
            targets: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Output directories (or evidence.csv files) of earlier runs.
    pub inputs: Vec<PathBuf>,
}

pub fn parse<T: Common>(text: &str) -> Result<T, toml::de::Error> {
    toml::from_str(text)
}

/// Key reference and default file for one subcommand.
pub fn schema(command: &str) -> Option<String> {
    let (about, keys, defaults) = match command {
        "classify-set" => (
            "Classify a set by the refinement trend of the shared-maxima fraction.",
            "set       set recipe, tagged by `kind`: elementary | cantor | subordinator_range | complement |\n          middle_third | fat_cantor | cantor_alpha | sampled_subordinator\nprotocol  levels, replicas, config (match rules), theta_stable, theta_unstable, window",
            toml::to_string(&ClassifyConfig::default()),
        ),
        "match-prob" => (
            "Estimate Q(tau = tau_E in E and G) for the maximizers on an interval, per grid level.",
            "set       set recipe\ninterval  [a, b]\ng         optional list of [lo, hi] intervals\nlevels    grid levels\nreplicas  per level\nconfig    match rules (eta, theta_mem, w, scale_exponent)",
            toml::to_string(&MatchProbConfig::default()),
        ),
        "verify-formula" => (
            "Estimate both sides of the second-moment identity for a product functional.",
            "set         set recipe\nfunctional  pieces = [{ interval, g = { kind = constant | clipped_exp | increment_indicator, .. },\n            selection = { kind = argmax, a, b } | { kind = none } }]\nlevel       grid level\nconfig      match rules\noptions     replicas (>= 1000), sign_salt",
            toml::to_string(&FormulaConfig::default()),
        ),
        "oracle" => (
            "Exact enumeration of both sides of the identity on the random-walk fixture matrix.",
            "fixture      path to a matrix file (version, [[cases]]); the shipped matrix when absent\nmc_replicas  Monte Carlo replicas per case, 0 to skip",
            toml::to_string(&OracleConfig::default()),
        ),
        "time-change" => (
            "Build the time change of a set and check pushforward, variance and maxima correspondence.",
            "set                      set recipe\nlevel                    grid level\nintervals                dyadic intervals for the pushforward check\ncheckpoints              range-grid checkpoints for the variance check\nreplicas                 coupled draws\ncorrespondence_replicas  draws used for maxima correspondence\nconfig                   match rules",
            toml::to_string(&TimeChangeConfig::default()),
        ),
        "generate-set" => (
            "Build a set, certify its density profile when it is a rate-targeted Cantor set, and save its descriptor.",
            "set  set recipe (cantor_alpha accepts optional constant and cap overrides)",
            toml::to_string(&GenerateConfig::default()),
        ),
        "prune" => (
            "Random atom pruning on the dyadic tower, theorem_a or theorem_b preset.",
            "preset        mode = theorem_a { p, c, keep_threshold } | theorem_b { zeta }, n_max, start_level\nprofiles      [{ kind = finite_points | random_singletons | growth, .. }]\nruns          pruning runs\nretention_ms  start levels for the retention bound\ntargets       [{ name, level, atoms }] hit targets for theorem_b",
            toml::to_string(&PruneConfig::default()),
        ),
        "report" => (
            "Aggregate evidence from earlier runs into one summary and ladder charts.",
            "inputs  output directories or evidence.csv files (positional arguments are appended)",
            toml::to_string(&ReportConfig::default()),
        ),
        _ => return None,
    };
    let defaults = defaults.unwrap_or_else(|e| format!("# defaults unavailable: {e}\n"));
    Some(format!(
        "[{command}]\n{about}\n\nkeys (all optional; `seed` and `out` are accepted everywhere):\n{}\n\ndefaults:\n{defaults}",
        indent(keys)
    ))
}

fn indent(s: &str) -> String {
    s.lines().map(|l| format!("  {l}")).collect::<Vec<_>>().join("\n")
}

pub const COMMANDS: [&str; 8] = [
    "classify-set",
    "match-prob",
    "verify-formula",
    "oracle",
    "time-change",
    "generate-set",
    "prune",
    "report",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip<T: Common>() {
        let text = toml::to_string(&T::default()).unwrap();
        let back: T = parse(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
        assert_eq!(toml::to_string(&back).unwrap(), text);
    }

    #[test]
    fn defaults_roundtrip() {
        roundtrip::<ClassifyConfig>();
        roundtrip::<MatchProbConfig>();
        roundtrip::<FormulaConfig>();
        roundtrip::<OracleConfig>();
        roundtrip::<TimeChangeConfig>();
        roundtrip::<GenerateConfig>();
        roundtrip::<PruneConfig>();
        roundtrip::<ReportConfig>();
    }

    #[test]
    fn unknown_keys_are_located() {
        let e = parse::<ClassifyConfig>("seed = 1\n[protocol]\nreplica = 5\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("replica") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn unknown_preset_keys_are_rejected() {
        let mut text = toml::to_string(&PruneConfig::default()).unwrap();
        text = text.replace("n_max = 25", "n_max = 25\nnmax = 3");
        assert!(parse::<PruneConfig>(&text).is_err());
    }

    #[test]
    fn every_command_has_a_schema() {
        for c in COMMANDS {
            assert!(schema(c).unwrap().contains("defaults:"));
        }
        assert!(schema("nope").is_none());
    }
}
