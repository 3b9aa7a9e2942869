//! Random pruning of dyadic atoms and survival of occupancy profiles.
//!
//! At every level `n` of the dyadic tower on `[0, 1]` each atom is pruned
//! independently with probability `p(n)`. A configuration survives from
//! level `m` when none of the atoms it occupies at levels `m..=n_max` is
//! pruned.
//!
//! Pruning draws are keyed: the uniform for atom `(n, i)` in run `r` is a
//! pure function of `(run key, n, i)`. Atoms nobody occupies are never drawn,
//! two configurations sharing an atom see the same draw, and the lazy and
//! eager evaluators agree bit for bit.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{map_replicas, Execution};
use crate::rng;
use crate::stats_report::Estimate;

#[derive(Debug, Error, PartialEq)]
pub enum PruneError {
    #[error("invalid preset: {0}")]
    Preset(String),
    #[error("no tail descriptor for sequence family `{0}`")]
    UnsupportedFamily(&'static str),
    #[error("growth profile `{name}`: f({level}) = {f} is below c({level}) = {c} after having reached it")]
    Growth { name: String, level: u32, f: u64, c: u64 },
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("at least {min} runs are required, got {got}")]
    TooFewRuns { min: u64, got: u64 },
    #[error("eager evaluation is limited to n_max <= {max}, got {got}")]
    TooLarge { max: u32, got: u32 },
    #[error("population has no singleton configurations")]
    NoSingletons,
    #[error("statistics have different shapes and cannot be merged")]
    Mismatch,
}

pub const MAX_LEVEL: u32 = 40;
pub const EAGER_MAX_LEVEL: u32 = 14;

// ---------------------------------------------------------------------------
// tower

/// Dyadic partitions of `[0, 1]` down to `n_max`. Atom `i` at level `n` is
/// `[i 2^-n, (i+1) 2^-n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomTower {
    pub n_max: u32,
}

impl AtomTower {
    pub fn new(n_max: u32) -> Result<Self, PruneError> {
        if n_max == 0 || n_max > MAX_LEVEL {
            return Err(PruneError::Preset(format!("n_max must be in 1..={MAX_LEVEL}")));
        }
        Ok(AtomTower { n_max })
    }

    pub fn atom_count(level: u32) -> u64 {
        1u64 << level
    }

    pub fn atom_of(x: f64, level: u32) -> u64 {
        let k = (x * Self::atom_count(level) as f64).floor();
        (k.max(0.0) as u64).min(Self::atom_count(level) - 1)
    }

    pub fn parent(index: u64) -> u64 {
        index >> 1
    }

    pub fn children(index: u64) -> [u64; 2] {
        [2 * index, 2 * index + 1]
    }

    pub fn bounds(level: u32, index: u64) -> (f64, f64) {
        let h = 1.0 / Self::atom_count(level) as f64;
        (index as f64 * h, (index + 1) as f64 * h)
    }
}

// ---------------------------------------------------------------------------
// sequences and presets

/// `coef · n^-exponent`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sequence {
    Power { coef: f64, exponent: f64 },
    /// Explicit values for levels `1, 2, ...`; no tail descriptor.
    Table { values: Vec<f64> },
}

impl Sequence {
    pub fn power(coef: f64, exponent: f64) -> Self {
        Sequence::Power { coef, exponent }
    }

    pub fn at(&self, n: u32) -> f64 {
        match self {
            Sequence::Power { coef, exponent } => coef * (n as f64).powf(-exponent),
            Sequence::Table { values } => values.get(n as usize - 1).copied().unwrap_or(f64::NAN),
        }
    }
}

/// `ceil(coef · n^exponent · ln(n+1)^log_exponent)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum CountSequence {
    PowerLog { coef: f64, exponent: f64, log_exponent: f64 },
    Table { values: Vec<u64> },
}

impl CountSequence {
    pub fn at(&self, n: u32) -> u64 {
        match self {
            CountSequence::PowerLog {
                coef,
                exponent,
                log_exponent,
            } => {
                let x = (n as f64).powf(*exponent) * ((n + 1) as f64).ln().powf(*log_exponent);
                (coef * x).ceil() as u64
            }
            CountSequence::Table { values } => values.get(n as usize - 1).copied().unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PruneMode {
    /// Direct pruning probabilities with the growth requirement `c(n)`.
    TheoremA {
        p: Sequence,
        c: CountSequence,
        /// Level `n_max` must bring `(1 - p)^c` below this.
        keep_threshold: f64,
    },
    /// `p(n) = 1 - ζ(n)^(2^-n)`.
    TheoremB { zeta: Sequence },
}

// Unknown keys reach the flattened mode, which rejects them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruningPreset {
    #[serde(flatten)]
    pub mode: PruneMode,
    pub n_max: u32,
    /// First level that is pruned.
    pub start_level: u32,
}

impl PruningPreset {
    /// `p(n) = n^-3.5`, `c(n) = ceil(n^3.5 ln(n+1))`, levels 2..=25.
    pub fn shipped_a() -> Self {
        PruningPreset {
            mode: PruneMode::TheoremA {
                p: Sequence::power(1.0, 3.5),
                c: CountSequence::PowerLog {
                    coef: 1.0,
                    exponent: 3.5,
                    log_exponent: 1.0,
                },
                keep_threshold: 0.05,
            },
            n_max: 25,
            start_level: 2,
        }
    }

    /// `ζ(n) = n^-3`, levels 2..=20.
    pub fn shipped_b() -> Self {
        PruningPreset {
            mode: PruneMode::TheoremB {
                zeta: Sequence::power(1.0, 3.0),
            },
            n_max: 20,
            start_level: 2,
        }
    }

    pub fn with_n_max(&self, n_max: u32) -> Self {
        PruningPreset { n_max, ..self.clone() }
    }

    pub fn p(&self, n: u32) -> f64 {
        match &self.mode {
            PruneMode::TheoremA { p, .. } => p.at(n),
            PruneMode::TheoremB { zeta } => -(zeta.at(n).ln() / AtomTower::atom_count(n) as f64).exp_m1(),
        }
    }

    /// `ln(1 - p(n))`.
    pub fn log_keep(&self, n: u32) -> f64 {
        match &self.mode {
            PruneMode::TheoremA { p, .. } => (-p.at(n)).ln_1p(),
            PruneMode::TheoremB { zeta } => zeta.at(n).ln() / AtomTower::atom_count(n) as f64,
        }
    }

    pub fn c(&self, n: u32) -> Option<u64> {
        match &self.mode {
            PruneMode::TheoremA { c, .. } => Some(c.at(n)),
            PruneMode::TheoremB { .. } => None,
        }
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<u32> {
        self.start_level..=self.n_max
    }

    fn check_shape(&self) -> Result<(), PruneError> {
        AtomTower::new(self.n_max)?;
        if self.start_level == 0 || self.start_level > self.n_max {
            return Err(PruneError::Preset(format!(
                "start level {} outside 1..={}",
                self.start_level, self.n_max
            )));
        }
        for n in self.levels() {
            let p = self.p(n);
            if !(p > 0.0 && p < 1.0) {
                return Err(PruneError::Preset(format!("p({n}) = {p} is not in (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub pass: bool,
    pub partial_sum: f64,
    pub tail_bound: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetValidation {
    pub conditions: Vec<ConditionCheck>,
    /// `(m, δ_m)`, mode A only. `δ_m^2` is the partial sum of `p` from `m`
    /// plus the tail bound beyond `n_max`.
    pub delta: Vec<(u32, f64)>,
    pub all_pass: bool,
}

impl PresetValidation {
    pub fn delta_at(&self, m: u32) -> Option<f64> {
        self.delta.iter().find(|d| d.0 == m).map(|d| d.1)
    }
}

fn power_params(s: &Sequence) -> Result<(f64, f64), PruneError> {
    match s {
        Sequence::Power { coef, exponent } => Ok((*coef, *exponent)),
        Sequence::Table { .. } => Err(PruneError::UnsupportedFamily("table")),
    }
}

/// `Σ_{n>N} a n^-q <= a N^(1-q) / (q-1)`, infinite for `q <= 1`.
fn power_tail(a: f64, q: f64, big_n: u32) -> f64 {
    if q <= 1.0 {
        f64::INFINITY
    } else {
        a * (big_n as f64).powf(1.0 - q) / (q - 1.0)
    }
}

/// Check the summability conditions with partial sums and analytic tails.
pub fn validate_preset(preset: &PruningPreset) -> Result<PresetValidation, PruneError> {
    preset.check_shape()?;
    let big_n = preset.n_max;
    let mut conditions = Vec::new();
    let mut delta = Vec::new();
    match &preset.mode {
        PruneMode::TheoremA { p, c, keep_threshold } => {
            let (a, q) = power_params(p)?;
            let (cc, ce, cl) = match c {
                CountSequence::PowerLog {
                    coef,
                    exponent,
                    log_exponent,
                } => (*coef, *exponent, *log_exponent),
                CountSequence::Table { .. } => return Err(PruneError::UnsupportedFamily("table")),
            };
            let partial: f64 = preset.levels().map(|n| preset.p(n)).sum();
            let tail = power_tail(a, q, big_n);
            conditions.push(ConditionCheck {
                name: "sum_p_finite".into(),
                pass: q > 1.0,
                partial_sum: partial,
                tail_bound: tail,
                detail: format!("p(n) = {a} n^-{q}"),
            });

            for m in preset.levels() {
                let s: f64 = (m..=big_n).map(|n| preset.p(n)).sum::<f64>() + tail;
                delta.push((m, s.sqrt()));
            }
            let partial_delta: f64 = delta.iter().map(|d| d.1).sum();
            // Σ_{n>=m} a n^-q <= a q/(q-1) m^(1-q), so δ_m <= K m^-s with s = (q-1)/2
            let s = (q - 1.0) / 2.0;
            let delta_tail = if q > 3.0 {
                let k = (a * q / (q - 1.0)).sqrt();
                k * (big_n as f64).powf(1.0 - s) / (s - 1.0)
            } else {
                f64::INFINITY
            };
            conditions.push(ConditionCheck {
                name: "delta_summable".into(),
                pass: q > 3.0,
                partial_sum: partial_delta,
                tail_bound: delta_tail,
                detail: format!("δ_m decays like m^-{s}"),
            });

            let keep = |n: u32| (c.at(n) as f64 * preset.log_keep(n)).exp();
            // c p ~ a cc n^(ce - q) ln(n+1)^cl
            let diverges = ce > q || (ce == q && cl > 0.0);
            let last = big_n.saturating_sub(4).max(preset.start_level);
            let monotone = (last..big_n).all(|n| keep(n + 1) <= keep(n));
            let at_max = keep(big_n);
            conditions.push(ConditionCheck {
                name: "keep_to_zero".into(),
                pass: diverges && monotone && at_max < *keep_threshold && cc > 0.0,
                partial_sum: at_max,
                tail_bound: 0.0,
                detail: format!(
                    "(1-p)^c at n_max = {at_max:.4}, threshold {keep_threshold}, nonincreasing over {last}..={big_n}: {monotone}"
                ),
            });
        }
        PruneMode::TheoremB { zeta } => {
            let (a, q) = power_params(zeta)?;
            let decreasing = q > 0.0 && a > 0.0 && zeta.at(preset.start_level) < 1.0;
            conditions.push(ConditionCheck {
                name: "zeta_decreasing".into(),
                pass: decreasing,
                partial_sum: zeta.at(big_n),
                tail_bound: 0.0,
                detail: format!("ζ(n) = {a} n^-{q}"),
            });
            let partial: f64 = preset
                .levels()
                .map(|n| {
                    let z = zeta.at(n);
                    -(z * z.ln()).exp_m1()
                })
                .sum();
            // 1 - ζ^ζ <= -ζ ln ζ = a n^-q (q ln n - ln a); integrate the decreasing bound
            let nf = big_n as f64;
            let tail = if q > 1.0 && a <= 1.0 && nf > (1.0 / q).exp() {
                let l = nf.ln();
                a * q * nf.powf(1.0 - q) * (l / (q - 1.0) + 1.0 / (q - 1.0).powi(2)) - a * a.ln() * nf.powf(1.0 - q) / (q - 1.0)
            } else {
                f64::INFINITY
            };
            conditions.push(ConditionCheck {
                name: "sum_one_minus_zeta_pow_zeta".into(),
                pass: q > 1.0 && tail.is_finite(),
                partial_sum: partial,
                tail_bound: tail,
                detail: "1 - ζ^ζ ~ q n^-q ln n".into(),
            });
        }
    }
    let all_pass = conditions.iter().all(|c| c.pass);
    Ok(PresetValidation {
        conditions,
        delta,
        all_pass,
    })
}

// ---------------------------------------------------------------------------
// occupancy profiles

/// Contiguous atoms `start..start+len` at one level.
pub type AtomRun = (u64, u64);

/// How many atoms a growth profile occupies at each level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum GrowthLaw {
    /// `f = c` of the preset.
    PresetC,
    /// `ceil(coef · n^exponent)`.
    Power { coef: f64, exponent: f64 },
    /// Explicit `f(1), f(2), ...`.
    Table { values: Vec<u64> },
    /// Every atom of the block.
    Everything,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileKind {
    FinitePoints { points: Vec<f64> },
    Growth { law: GrowthLaw, block_depth: u32, block_index: u64 },
}

/// A configuration: which atoms it meets at every level `1..=n_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyProfile {
    pub name: String,
    pub kind: ProfileKind,
    /// `atoms[n - 1]`: sorted, disjoint runs at level `n`.
    atoms: Vec<Vec<AtomRun>>,
    /// Uncapped growth law `f(n)`, growth profiles only.
    law_values: Vec<u64>,
}

fn runs_from_sorted(v: &[u64]) -> Vec<AtomRun> {
    let mut out: Vec<AtomRun> = Vec::new();
    for &i in v {
        match out.last_mut() {
            Some((s, l)) if *s + *l == i => *l += 1,
            Some((s, l)) if *s + *l > i => {}
            _ => out.push((i, 1)),
        }
    }
    out
}

fn expand(runs: &[AtomRun]) -> impl Iterator<Item = u64> + '_ {
    runs.iter().flat_map(|&(s, l)| s..s + l)
}

impl OccupancyProfile {
    pub fn finite_points(name: impl Into<String>, points: &[f64], tower: AtomTower) -> Result<Self, PruneError> {
        if points.is_empty() {
            return Err(PruneError::Profile("no points".into()));
        }
        if points.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(PruneError::Profile("points must lie in [0, 1]".into()));
        }
        let atoms = (1..=tower.n_max)
            .map(|n| {
                let mut v: Vec<u64> = points.iter().map(|&x| AtomTower::atom_of(x, n)).collect();
                v.sort_unstable();
                v.dedup();
                runs_from_sorted(&v)
            })
            .collect();
        Ok(OccupancyProfile {
            name: name.into(),
            kind: ProfileKind::FinitePoints { points: points.to_vec() },
            atoms,
            law_values: Vec::new(),
        })
    }

    /// Nested random growth inside the dyadic block `(depth, index)`. At each
    /// level every occupied parent keeps at least one child and the rest of
    /// the `min(f(n), 2^(n - depth))` atoms are drawn uniformly among the
    /// remaining children.
    pub fn growth<R: Rng + ?Sized>(
        name: impl Into<String>,
        law: GrowthLaw,
        block: (u32, u64),
        tower: AtomTower,
        preset: &PruningPreset,
        rng: &mut R,
    ) -> Result<Self, PruneError> {
        let name = name.into();
        let (depth, index) = block;
        if depth >= tower.n_max || index >= AtomTower::atom_count(depth) {
            return Err(PruneError::Profile(format!("block ({depth}, {index}) outside the tower")));
        }
        let f = |n: u32| -> Result<u64, PruneError> {
            Ok(match &law {
                GrowthLaw::PresetC => preset
                    .c(n)
                    .ok_or_else(|| PruneError::Profile("preset_c needs a preset with c(n)".into()))?,
                GrowthLaw::Power { coef, exponent } => (coef * (n as f64).powf(*exponent)).ceil() as u64,
                GrowthLaw::Table { values } => *values
                    .get(n as usize - 1)
                    .ok_or_else(|| PruneError::Profile(format!("table has no entry for level {n}")))?,
                GrowthLaw::Everything => u64::MAX,
            })
        };
        let mut atoms: Vec<Vec<AtomRun>> = Vec::with_capacity(tower.n_max as usize);
        let mut law_values = Vec::with_capacity(tower.n_max as usize);
        let mut prev_k = 1u64;
        for n in 1..=tower.n_max {
            law_values.push(f(n)?);
            if n <= depth {
                atoms.push(vec![(index >> (depth - n), 1)]);
                continue;
            }
            let cap = 1u64 << (n - depth);
            let want = f(n)?.min(cap);
            if want < prev_k {
                return Err(PruneError::Profile(format!(
                    "`{name}`: f({n}) = {want} below the previous level's {prev_k}"
                )));
            }
            if want > 2 * prev_k {
                return Err(PruneError::Profile(format!(
                    "`{name}`: f({n}) = {want} exceeds twice the previous level's {prev_k}"
                )));
            }
            let prev = atoms.last().cloned().unwrap_or_else(|| vec![(index, 1)]);
            let level = if want == cap {
                vec![(index << (n - depth), cap)]
            } else {
                let mut chosen = Vec::with_capacity(want as usize);
                let mut spare = Vec::with_capacity(prev_k as usize);
                for parent in expand(&prev) {
                    let [a, b] = AtomTower::children(parent);
                    if rng.random::<bool>() {
                        chosen.push(a);
                        spare.push(b);
                    } else {
                        chosen.push(b);
                        spare.push(a);
                    }
                }
                let extra = (want - prev_k) as usize;
                for k in sample(rng, spare.len(), extra) {
                    chosen.push(spare[k]);
                }
                chosen.sort_unstable();
                runs_from_sorted(&chosen)
            };
            prev_k = want;
            atoms.push(level);
        }
        Ok(OccupancyProfile {
            name,
            kind: ProfileKind::Growth {
                law,
                block_depth: depth,
                block_index: index,
            },
            atoms,
            law_values,
        })
    }

    pub fn n_max(&self) -> u32 {
        self.atoms.len() as u32
    }

    /// Occupied atoms at `level`.
    pub fn runs(&self, level: u32) -> &[AtomRun] {
        &self.atoms[level as usize - 1]
    }

    /// `K(n)`.
    pub fn k(&self, level: u32) -> u64 {
        self.runs(level).iter().map(|r| r.1).sum()
    }

    pub fn is_singleton(&self) -> bool {
        matches!(&self.kind, ProfileKind::FinitePoints { .. }) && self.atoms.last().is_some_and(|l| l.len() == 1 && l[0].1 == 1)
    }

    /// `f(n) >= c(n)` from some level on through `n_max`.
    fn growth_f_at_least_c(&self, preset: &PruningPreset) -> Result<(), PruneError> {
        if !matches!(self.kind, ProfileKind::Growth { .. }) {
            return Ok(());
        }
        let mut reached = false;
        for n in preset.levels() {
            let Some(c) = preset.c(n) else { return Ok(()) };
            let k = self.law_values[n as usize - 1];
            if k >= c {
                reached = true;
            } else if reached || n == preset.n_max {
                return Err(PruneError::Growth {
                    name: self.name.clone(),
                    level: n,
                    f: k,
                    c,
                });
            }
        }
        Ok(())
    }
}

/// Profile descriptors as they appear in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    FinitePoints {
        name: String,
        points: Vec<f64>,
    },
    /// `count` singletons at uniform positions in `[lo, hi)`.
    RandomSingletons { prefix: String, count: usize, lo: f64, hi: f64 },
    Growth {
        name: String,
        law: GrowthLaw,
        #[serde(default)]
        block_depth: u32,
        #[serde(default)]
        block_index: u64,
    },
}

/// Build a population. Random choices use the OCCUPANCY streams of `seed`.
pub fn build_population(specs: &[ProfileSpec], preset: &PruningPreset, seed: u64) -> Result<Vec<OccupancyProfile>, PruneError> {
    let tower = AtomTower::new(preset.n_max)?;
    let mut out = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        let mut r = rng::stream(seed, rng::tag::OCCUPANCY, k as u64);
        match spec {
            ProfileSpec::FinitePoints { name, points } => out.push(OccupancyProfile::finite_points(name.clone(), points, tower)?),
            ProfileSpec::RandomSingletons { prefix, count, lo, hi } => {
                if !(0.0 <= *lo && lo < hi && *hi <= 1.0) {
                    return Err(PruneError::Profile(format!("singleton range [{lo}, {hi})")));
                }
                for j in 0..*count {
                    let x = r.random_range(*lo..*hi);
                    out.push(OccupancyProfile::finite_points(format!("{prefix}{j}"), &[x], tower)?);
                }
            }
            ProfileSpec::Growth {
                name,
                law,
                block_depth,
                block_index,
            } => out.push(OccupancyProfile::growth(
                name.clone(),
                law.clone(),
                (*block_depth, *block_index),
                tower,
                preset,
                &mut r,
            )?),
        }
    }
    Ok(out)
}

/// Target element: a union of atoms at one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub name: String,
    pub level: u32,
    pub atoms: Vec<u64>,
}

impl Target {
    pub fn left_half() -> Self {
        Target {
            name: "left_half".into(),
            level: 1,
            atoms: vec![0],
        }
    }

    pub fn right_half() -> Self {
        Target {
            name: "right_half".into(),
            level: 1,
            atoms: vec![1],
        }
    }

    /// Atom fraction of the target.
    pub fn fraction(&self) -> f64 {
        self.atoms.len() as f64 / AtomTower::atom_count(self.level) as f64
    }

    fn runs_at(&self, n: u32) -> Vec<AtomRun> {
        if n < self.level {
            return Vec::new();
        }
        let shift = n - self.level;
        self.atoms.iter().map(|&a| (a << shift, 1u64 << shift)).collect()
    }
}

// ---------------------------------------------------------------------------
// pruning runs

/// Source of pruning decisions for one run.
trait PruneDraws {
    fn pruned(&self, level: u32, atom: u64) -> bool;
}

struct LazyDraws<'a> {
    key: u64,
    preset: &'a PruningPreset,
}

impl PruneDraws for LazyDraws<'_> {
    fn pruned(&self, level: u32, atom: u64) -> bool {
        rng::keyed_unit(self.key, level as u64, atom) < self.preset.p(level)
    }
}

struct EagerDraws {
    start: u32,
    table: Vec<Vec<bool>>,
}

impl EagerDraws {
    fn materialize(key: u64, preset: &PruningPreset) -> Self {
        let table = preset
            .levels()
            .map(|n| {
                let p = preset.p(n);
                (0..AtomTower::atom_count(n))
                    .map(|i| rng::keyed_unit(key, n as u64, i) < p)
                    .collect()
            })
            .collect();
        EagerDraws {
            start: preset.start_level,
            table,
        }
    }
}

impl PruneDraws for EagerDraws {
    fn pruned(&self, level: u32, atom: u64) -> bool {
        self.table[(level - self.start) as usize][atom as usize]
    }
}

fn any_pruned(d: &impl PruneDraws, level: u32, runs: &[AtomRun]) -> bool {
    runs.iter().any(|&(s, l)| (s..s + l).any(|i| d.pruned(level, i)))
}

/// Highest level in the preset's range at which the profile has a pruned
/// atom, 0 when none. The profile survives from `m` iff this is below `m`.
fn top_pruned(d: &impl PruneDraws, profile: &OccupancyProfile, preset: &PruningPreset) -> u32 {
    preset
        .levels()
        .rev()
        .find(|&n| any_pruned(d, n, profile.runs(n)))
        .unwrap_or(0)
}

fn run_key(seed: u64, run: u64) -> u64 {
    rng::derive_seed(seed, rng::tag::PRUNE, run)
}

/// Survival records of many runs. `records[run][config]` is the top pruned
/// level of that configuration in that run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalStats {
    pub names: Vec<String>,
    pub singleton: Vec<bool>,
    pub start_level: u32,
    pub n_max: u32,
    /// Closed-form survival from each start level, `oracle[config][m - start]`,
    /// present only for start levels from which the configuration shares
    /// no atom with any other.
    pub oracle: Vec<Vec<Option<f64>>>,
    pub records: Vec<Vec<u32>>,
}

impl SurvivalStats {
    pub fn runs(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn survival(&self, config: usize, m: u32) -> Estimate {
        let k = self.records.iter().filter(|r| r[config] < m).count() as u64;
        Estimate::proportion(format!("survival {} from {m}", self.names[config]), k, self.runs())
    }

    pub fn oracle_at(&self, config: usize, m: u32) -> Option<f64> {
        self.oracle[config].get((m - self.start_level) as usize).copied().flatten()
    }

    /// `r_m` of every run.
    pub fn retention(&self, m: u32) -> Vec<f64> {
        let total = self.singleton.iter().filter(|&&s| s).count();
        self.records
            .iter()
            .map(|r| {
                let alive = r.iter().zip(&self.singleton).filter(|(&t, &s)| s && t < m).count();
                alive as f64 / total as f64
            })
            .collect()
    }

    /// Concatenate the runs of two batches with the same population.
    pub fn merge(&self, other: &SurvivalStats) -> Result<SurvivalStats, PruneError> {
        if self.names != other.names
            || self.start_level != other.start_level
            || self.n_max != other.n_max
            || self.oracle != other.oracle
        {
            return Err(PruneError::Mismatch);
        }
        let mut out = self.clone();
        out.records.extend(other.records.iter().cloned());
        Ok(out)
    }
}

/// Closed-form survival from each start level for configurations whose atoms
/// are not shared with any other configuration.
fn isolated_oracles(population: &[OccupancyProfile], preset: &PruningPreset) -> Vec<Vec<Option<f64>>> {
    let levels: Vec<u32> = preset.levels().collect();
    // per level, is configuration k isolated at that level
    let mut isolated = vec![vec![true; levels.len()]; population.len()];
    for (li, &n) in levels.iter().enumerate() {
        let mut all: Vec<(u64, u64, usize)> = population
            .iter()
            .enumerate()
            .flat_map(|(k, p)| p.runs(n).iter().map(move |&(s, l)| (s, s + l, k)))
            .collect();
        all.sort_unstable();
        let mut reach: Option<(u64, usize)> = None;
        for &(s, e, k) in &all {
            if let Some((re, rk)) = reach {
                if s < re && rk != k {
                    isolated[k][li] = false;
                    isolated[rk][li] = false;
                }
            }
            if reach.is_none_or(|(re, _)| e > re) {
                reach = Some((e, k));
            }
        }
        // overlaps hidden behind a long run
        for w in all.windows(2) {
            if w[1].0 < w[0].1 && w[0].2 != w[1].2 {
                isolated[w[0].2][li] = false;
                isolated[w[1].2][li] = false;
            }
        }
    }
    population
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut out = vec![None; levels.len()];
            let mut log_s = 0.0;
            let mut ok = true;
            for li in (0..levels.len()).rev() {
                ok &= isolated[k][li];
                log_s += p.k(levels[li]) as f64 * preset.log_keep(levels[li]);
                if ok {
                    out[li] = Some(log_s.exp());
                }
            }
            out
        })
        .collect()
}

fn check_population(population: &[OccupancyProfile], preset: &PruningPreset) -> Result<(), PruneError> {
    if population.is_empty() {
        return Err(PruneError::Profile("empty population".into()));
    }
    for p in population {
        if p.n_max() != preset.n_max {
            return Err(PruneError::Profile(format!(
                "`{}` is built for n_max = {}, preset has {}",
                p.name,
                p.n_max(),
                preset.n_max
            )));
        }
        p.growth_f_at_least_c(preset)?;
    }
    Ok(())
}

fn stats_shell(population: &[OccupancyProfile], preset: &PruningPreset, records: Vec<Vec<u32>>) -> SurvivalStats {
    SurvivalStats {
        names: population.iter().map(|p| p.name.clone()).collect(),
        singleton: population.iter().map(|p| p.is_singleton()).collect(),
        start_level: preset.start_level,
        n_max: preset.n_max,
        oracle: isolated_oracles(population, preset),
        records,
    }
}

/// Prune `runs` times and record every configuration's survival.
pub fn run_pruning(
    population: &[OccupancyProfile],
    preset: &PruningPreset,
    runs: u64,
    seed: u64,
    exec: Execution,
) -> Result<SurvivalStats, PruneError> {
    preset.check_shape()?;
    check_population(population, preset)?;
    let records = map_replicas(runs, exec, |r| {
        let d = LazyDraws {
            key: run_key(seed, r),
            preset,
        };
        population.iter().map(|p| top_pruned(&d, p, preset)).collect()
    });
    Ok(stats_shell(population, preset, records))
}

/// Same as [`run_pruning`] but draws every atom of every level up front.
pub fn run_pruning_eager(
    population: &[OccupancyProfile],
    preset: &PruningPreset,
    runs: u64,
    seed: u64,
    exec: Execution,
) -> Result<SurvivalStats, PruneError> {
    preset.check_shape()?;
    if preset.n_max > EAGER_MAX_LEVEL {
        return Err(PruneError::TooLarge {
            max: EAGER_MAX_LEVEL,
            got: preset.n_max,
        });
    }
    check_population(population, preset)?;
    let records = map_replicas(runs, exec, |r| {
        let d = EagerDraws::materialize(run_key(seed, r), preset);
        population.iter().map(|p| top_pruned(&d, p, preset)).collect()
    });
    Ok(stats_shell(population, preset, records))
}

pub const MIN_RETENTION_RUNS: u64 = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionRow {
    pub m: u32,
    pub delta: f64,
    pub vacuous: bool,
    /// Frequency of `r_m <= 1 - δ_m`.
    pub frequency: f64,
    pub stderr: f64,
    pub pass: bool,
    pub mean_retention: f64,
    pub mean_stderr: f64,
    /// `E[r_m] >= 1 - δ_m^2` up to three standard errors.
    pub mean_pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionReport {
    pub rows: Vec<RetentionRow>,
    pub mean_monotone: bool,
    pub all_pass: bool,
}

/// Compare the retention of singletons against `P(r_m <= 1 - δ_m) <= δ_m`
/// and `E[r_m] >= 1 - δ_m^2`.
pub fn check_retention_bound(stats: &SurvivalStats, validation: &PresetValidation, ms: &[u32]) -> Result<RetentionReport, PruneError> {
    if stats.runs() < MIN_RETENTION_RUNS {
        return Err(PruneError::TooFewRuns {
            min: MIN_RETENTION_RUNS,
            got: stats.runs(),
        });
    }
    if !stats.singleton.iter().any(|&s| s) {
        return Err(PruneError::NoSingletons);
    }
    let n = stats.runs() as f64;
    let mut rows = Vec::new();
    for &m in ms {
        let delta = validation
            .delta_at(m)
            .ok_or_else(|| PruneError::Preset(format!("no δ for level {m}")))?;
        let r = stats.retention(m);
        let est = Estimate::from_values("r_m", r.iter().copied());
        let hits = r.iter().filter(|&&x| x <= 1.0 - delta).count() as f64;
        let frequency = hits / n;
        let d = delta.min(1.0);
        let stderr = (d * (1.0 - d) / n).sqrt();
        let vacuous = delta >= 1.0;
        rows.push(RetentionRow {
            m,
            delta,
            vacuous,
            frequency,
            stderr,
            pass: vacuous || frequency <= delta + 3.0 * stderr,
            mean_retention: est.mean(),
            mean_stderr: est.stderr(),
            mean_pass: est.mean() + 3.0 * est.stderr() >= 1.0 - delta * delta,
        });
    }
    let mean_monotone = rows.windows(2).all(|w| w[1].mean_retention >= w[0].mean_retention);
    let all_pass = rows.iter().all(|r| r.pass && r.mean_pass);
    Ok(RetentionReport {
        rows,
        mean_monotone,
        all_pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRow {
    pub target: String,
    pub fraction: f64,
    pub hit: Estimate,
    /// `1 - ∏ ζ(n)^(fraction)` over the levels where the target is a union
    /// of atoms.
    pub oracle: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeBReport {
    pub hits: Vec<HitRow>,
    pub survival: SurvivalStats,
}

/// Mode B: whether some level's pruned set meets each target, and the
/// survival of the population.
pub fn run_pruning_b(
    population: &[OccupancyProfile],
    targets: &[Target],
    preset: &PruningPreset,
    runs: u64,
    seed: u64,
    exec: Execution,
) -> Result<ModeBReport, PruneError> {
    if !matches!(preset.mode, PruneMode::TheoremB { .. }) {
        return Err(PruneError::Preset("mode B run needs a theorem_b preset".into()));
    }
    for t in targets {
        if t.level == 0 || t.level > preset.n_max || t.atoms.iter().any(|&a| a >= AtomTower::atom_count(t.level)) || t.atoms.is_empty() {
            return Err(PruneError::Profile(format!("target `{}` is not a union of atoms", t.name)));
        }
    }
    let survival = run_pruning(population, preset, runs, seed, exec)?;
    let target_runs: Vec<Vec<Vec<AtomRun>>> = targets.iter().map(|t| preset.levels().map(|n| t.runs_at(n)).collect()).collect();
    let hit_records = map_replicas(runs, exec, |r| {
        let d = LazyDraws {
            key: run_key(seed, r),
            preset,
        };
        target_runs
            .iter()
            .map(|levels| preset.levels().zip(levels).any(|(n, runs)| any_pruned(&d, n, runs)))
            .collect::<Vec<bool>>()
    });
    let hits = targets
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let count = hit_records.iter().filter(|h| h[k]).count() as u64;
            let log_miss: f64 = preset
                .levels()
                .filter(|&n| n >= t.level)
                .map(|n| t.fraction() * AtomTower::atom_count(n) as f64 * preset.log_keep(n))
                .sum();
            HitRow {
                target: t.name.clone(),
                fraction: t.fraction(),
                hit: Estimate::proportion(format!("hit {}", t.name), count, runs),
                oracle: -log_miss.exp_m1(),
            }
        })
        .collect();
    Ok(ModeBReport { hits, survival })
}

/// `(level, K(level))` for `level` in the preset range.
pub fn k_profile(profile: &OccupancyProfile, preset: &PruningPreset) -> Vec<(u32, u64)> {
    preset.levels().map(|n| (n, profile.k(n))).collect()
}

/// Atom counts shared between two profiles per level, for diagnostics.
pub fn shared_atoms(a: &OccupancyProfile, b: &OccupancyProfile, level: u32) -> u64 {
    let mut seen: HashMap<u64, ()> = HashMap::new();
    for i in expand(a.runs(level)) {
        seen.insert(i, ());
    }
    expand(b.runs(level)).filter(|i| seen.contains_key(i)).count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tower_relations() {
        assert_eq!(AtomTower::atom_of(0.3, 2), 1);
        assert_eq!(AtomTower::atom_of(1.0, 3), 7);
        assert_eq!(AtomTower::parent(5), 2);
        assert_eq!(AtomTower::children(2), [4, 5]);
        let (a, b) = AtomTower::bounds(3, 5);
        assert!(a <= 0.7 && 0.7 < b);
    }

    #[test]
    fn shipped_a_validates() {
        let v = validate_preset(&PruningPreset::shipped_a()).unwrap();
        assert!(v.all_pass, "{v:?}");
        assert_eq!(v.conditions.len(), 3);
    }

    #[test]
    fn inverse_square_fails_delta() {
        let mut p = PruningPreset::shipped_a();
        p.mode = PruneMode::TheoremA {
            p: Sequence::power(1.0, 2.0),
            c: CountSequence::PowerLog {
                coef: 1.0,
                exponent: 2.0,
                log_exponent: 1.0,
            },
            keep_threshold: 0.05,
        };
        let v = validate_preset(&p).unwrap();
        assert!(v.conditions[0].pass);
        assert!(!v.conditions[1].pass);
    }

    #[test]
    fn shipped_b_validates() {
        let v = validate_preset(&PruningPreset::shipped_b()).unwrap();
        assert!(v.all_pass, "{v:?}");
    }

    #[test]
    fn table_has_no_tail() {
        let mut p = PruningPreset::shipped_a();
        if let PruneMode::TheoremA { p: seq, .. } = &mut p.mode {
            *seq = Sequence::Table { values: vec![0.1; 25] };
        }
        assert_eq!(validate_preset(&p), Err(PruneError::UnsupportedFamily("table")));
    }

    #[test]
    fn growth_counts_follow_law() {
        let preset = PruningPreset::shipped_a();
        let tower = AtomTower::new(preset.n_max).unwrap();
        let mut r = rng::stream(1, rng::tag::OCCUPANCY, 0);
        let g = OccupancyProfile::growth("g", GrowthLaw::PresetC, (1, 1), tower, &preset, &mut r).unwrap();
        for n in 2..=preset.n_max {
            assert_eq!(g.k(n), preset.c(n).unwrap().min(1 << (n - 1)), "level {n}");
            assert!(g.k(n) >= g.k(n - 1));
        }
        // nested: every atom's parent is occupied
        for n in 2..=preset.n_max {
            let parents: Vec<u64> = expand(g.runs(n - 1)).collect();
            assert!(expand(g.runs(n)).all(|i| parents.binary_search(&AtomTower::parent(i)).is_ok()));
        }
    }

    #[test]
    fn slow_growth_is_rejected() {
        let preset = PruningPreset::shipped_a();
        let tower = AtomTower::new(preset.n_max).unwrap();
        let mut r = rng::stream(1, rng::tag::OCCUPANCY, 0);
        let g = OccupancyProfile::growth("slow", GrowthLaw::Power { coef: 1.0, exponent: 2.0 }, (1, 1), tower, &preset, &mut r).unwrap();
        let err = run_pruning(&[g], &preset, 1, 0, Execution::Sequential).unwrap_err();
        assert!(matches!(err, PruneError::Growth { .. }));
    }

    #[test]
    fn isolation_detects_shared_atoms() {
        let preset = PruningPreset::shipped_a().with_n_max(10);
        let tower = AtomTower::new(10).unwrap();
        let a = OccupancyProfile::finite_points("a", &[0.1], tower).unwrap();
        let b = OccupancyProfile::finite_points("b", &[0.1 + 1e-4], tower).unwrap();
        let c = OccupancyProfile::finite_points("c", &[0.9], tower).unwrap();
        let o = isolated_oracles(&[a, b, c], &preset);
        assert!(o[0].iter().all(|x| x.is_none()));
        assert!(o[2].iter().all(|x| x.is_some()));
    }

    #[test]
    fn everything_profile_is_a_single_run() {
        let preset = PruningPreset::shipped_b();
        let tower = AtomTower::new(preset.n_max).unwrap();
        let mut r = rng::stream(1, rng::tag::OCCUPANCY, 0);
        let g = OccupancyProfile::growth("all", GrowthLaw::Everything, (0, 0), tower, &preset, &mut r).unwrap();
        assert_eq!(g.k(20), 1 << 20);
        assert_eq!(g.runs(20).len(), 1);
    }
}
