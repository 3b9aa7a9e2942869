//! Random signs on local maxima, the conditional copy given the data on E,
//! and the second-moment identity
//!
//! ```text
//! E[ ξ(W, ε) · ξ(W_E, ε_E) ] = ∏_p E[ g^p(W) g^p(W_E) ; T^p = T^p_E ∈ E ]
//! ```
//!
//! for product functionals `ξ = ∏_p g^p · ε(T^p)` over a partition into
//! pieces. The left side is estimated through the coupling, the right side
//! from independent replicas, and both are computed exactly on a ±1 random
//! walk by enumeration.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::censor_sets::CensorSet;
use crate::coupling_lab::{CellMasses, CouplingError, CoupledSample, MatchConfig};
use crate::exec::{map_replicas, Execution};
use crate::path_engine::{argmax_nodes, detect_maxima, GridPath, PathError, TimeGrid};
use crate::rng;
use crate::stats_report::Estimate;

#[derive(Debug, Error)]
pub enum SignError {
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("pieces must be contiguous, cover the window and sit on grid nodes: {0}")]
    Partition(String),
    #[error("piece {piece}: {what} reaches outside the piece")]
    OutsidePiece { piece: usize, what: &'static str },
    #[error("piece {0} is not increment-local: output changed when only off-piece increments changed")]
    NotLocal(usize),
    #[error("at least {min} replicas are required, got {got}")]
    Replicas { min: u64, got: u64 },
    #[error("oracle supports at most {max} steps, got {got}")]
    TooManySteps { max: usize, got: usize },
    #[error("invalid discrete case: {0}")]
    Case(String),
}

// ---------------------------------------------------------------------------
// sign fields

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Inherited,
    Resampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignEntry {
    pub index: usize,
    pub sign: i8,
    pub provenance: Provenance,
}

/// Signs on the detected maxima of one path, sorted by node index.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignField {
    pub entries: Vec<SignEntry>,
}

impl SignField {
    pub fn sign_at(&self, index: usize) -> Option<i8> {
        self.entries
            .binary_search_by_key(&index, |e| e.index)
            .ok()
            .map(|k| self.entries[k].sign)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn random_sign<R: Rng + ?Sized>(rng: &mut R) -> i8 {
    if rng.random::<bool>() {
        1
    } else {
        -1
    }
}

/// One uniform sign per maximum of robustness `w`.
pub fn attach_signs<R: Rng + ?Sized>(path: &GridPath, w: usize, rng: &mut R) -> Result<SignField, SignError> {
    let entries = detect_maxima(path, w)?
        .into_iter()
        .map(|m| SignEntry {
            index: m.index,
            sign: random_sign(rng),
            provenance: Provenance::Original,
        })
        .collect();
    Ok(SignField { entries })
}

fn strict_maxima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] > values[i - 1] && values[i] > values[i + 1])
        .collect()
}

/// For each maximum `j` of the second path: the nearest maximum of the first
/// path within `eta` nodes, when both lie in E; ties go left.
pub fn pair_maxima(first: &[usize], second: &[usize], in_e: &[bool], eta: usize) -> Vec<Option<usize>> {
    second
        .iter()
        .map(|&j| {
            if !in_e[j] {
                return None;
            }
            let k = first.partition_point(|&i| i < j.saturating_sub(eta));
            first[k..]
                .iter()
                .take_while(|&&i| i <= j + eta)
                .filter(|&&i| in_e[i])
                .min_by_key(|&&i| (i.abs_diff(j), i))
                .copied()
        })
        .collect()
}

/// Signs for the maxima of `W_E`: inherited from the paired maximum of W
/// when the pair lies in E, fresh otherwise.
pub fn conditional_copy<R: Rng + ?Sized>(
    sample: &CoupledSample,
    masses: &CellMasses,
    field: &SignField,
    config: &MatchConfig,
    rng: &mut R,
) -> Result<(GridPath, SignField), SignError> {
    let in_e = masses.in_e(config.theta_mem);
    let first: Vec<usize> = field.entries.iter().map(|e| e.index).collect();
    let second: Vec<usize> = detect_maxima(&sample.we, config.w)?.into_iter().map(|m| m.index).collect();
    let pairs = pair_maxima(&first, &second, &in_e, config.eta);
    let entries = second
        .iter()
        .zip(pairs)
        .map(|(&j, p)| match p.and_then(|i| field.sign_at(i)) {
            Some(sign) => SignEntry {
                index: j,
                sign,
                provenance: Provenance::Inherited,
            },
            None => SignEntry {
                index: j,
                sign: random_sign(rng),
                provenance: Provenance::Resampled,
            },
        })
        .collect();
    Ok((sample.we.clone(), SignField { entries }))
}

// ---------------------------------------------------------------------------
// product functionals

/// Bounded functional of the increments on one piece.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PieceFunctional {
    Constant { value: f64 },
    /// `min(exp(W(b) - W(a)), clip)`.
    ClippedExp { a: f64, b: f64, clip: f64 },
    /// `1{W(b) - W(a) > threshold}`.
    IncrementIndicator { a: f64, b: f64, threshold: f64 },
}

/// Which maximum a piece selects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Selection {
    /// Maximizer on `[a, b]`, undefined at an endpoint or on a tie.
    Argmax { a: f64, b: f64 },
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    pub interval: [f64; 2],
    pub g: PieceFunctional,
    pub selection: Selection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductFunctional {
    pub pieces: Vec<Piece>,
}

impl ProductFunctional {
    /// One piece covering `window`, `g ≡ 1`, argmax on `[a, b]`.
    pub fn argmax_only(window: (f64, f64), a: f64, b: f64) -> Self {
        ProductFunctional {
            pieces: vec![Piece {
                interval: [window.0, window.1],
                g: PieceFunctional::Constant { value: 1.0 },
                selection: Selection::Argmax { a, b },
            }],
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum GNodes {
    Const(f64),
    ClippedExp { a: usize, b: usize, clip: f64 },
    Indicator { a: usize, b: usize, threshold: f64 },
}

/// A piece resolved to node indices on a grid.
#[derive(Clone, Copy, Debug)]
struct PieceNodes {
    lo: usize,
    hi: usize,
    g: GNodes,
    sel: Option<(usize, usize)>,
}

fn exact_node(grid: &TimeGrid, t: f64) -> Option<usize> {
    let k = grid.nearest_node(t);
    let tol = 1e-9 * grid.dt();
    ((grid.node_time(k) - t).abs() <= tol).then_some(k)
}

fn resolve(f: &ProductFunctional, grid: &TimeGrid) -> Result<Vec<PieceNodes>, SignError> {
    if f.pieces.is_empty() {
        return Err(SignError::Partition("no pieces".into()));
    }
    let node = |t: f64| exact_node(grid, t).ok_or_else(|| SignError::Partition(format!("{t} is not a grid node")));
    let mut out = Vec::with_capacity(f.pieces.len());
    let mut expect = 0usize;
    for (p, piece) in f.pieces.iter().enumerate() {
        let lo = node(piece.interval[0])?;
        let hi = node(piece.interval[1])?;
        if lo != expect || hi <= lo {
            return Err(SignError::Partition(format!("piece {p} = {:?}", piece.interval)));
        }
        expect = hi;
        let inside = |a: f64, b: f64, what| -> Result<(usize, usize), SignError> {
            let (x, y) = (node(a)?, node(b)?);
            if x < lo || y > hi || x > y {
                return Err(SignError::OutsidePiece { piece: p, what });
            }
            Ok((x, y))
        };
        let g = match piece.g {
            PieceFunctional::Constant { value } => GNodes::Const(value),
            PieceFunctional::ClippedExp { a, b, clip } => {
                let (a, b) = inside(a, b, "g")?;
                GNodes::ClippedExp { a, b, clip }
            }
            PieceFunctional::IncrementIndicator { a, b, threshold } => {
                let (a, b) = inside(a, b, "g")?;
                GNodes::Indicator { a, b, threshold }
            }
        };
        let sel = match piece.selection {
            Selection::Argmax { a, b } => {
                let (a, b) = inside(a, b, "selection")?;
                if b < a + 2 {
                    return Err(SignError::OutsidePiece {
                        piece: p,
                        what: "selection (needs two cells)",
                    });
                }
                Some((a, b))
            }
            Selection::None => None,
        };
        out.push(PieceNodes { lo, hi, g, sel });
    }
    if expect != grid.cells() {
        return Err(SignError::Partition("pieces do not reach the window end".into()));
    }
    Ok(out)
}

/// `(g^p, T^p)` computed from the increments on the piece alone. The local
/// path starts at 0 at the piece's left node, so the result depends on
/// nothing else.
fn eval_piece(p: &PieceNodes, increments: &[f64], scratch: &mut Vec<f64>) -> (f64, Option<Option<usize>>) {
    let slice = &increments[p.lo..p.hi];
    scratch.clear();
    scratch.push(0.0);
    let mut x = 0.0;
    for &d in slice {
        x += d;
        scratch.push(x);
    }
    let v = &scratch[..];
    let g = match p.g {
        GNodes::Const(c) => c,
        GNodes::ClippedExp { a, b, clip } => (v[b - p.lo] - v[a - p.lo]).exp().min(clip),
        GNodes::Indicator { a, b, threshold } => {
            if v[b - p.lo] - v[a - p.lo] > threshold {
                1.0
            } else {
                0.0
            }
        }
    };
    let t = p.sel.map(|(a, b)| match argmax_nodes(v, a - p.lo, b - p.lo) {
        Some((i, false)) if i != a - p.lo && i != b - p.lo => Some(i + p.lo),
        _ => None,
    });
    (g, t)
}

/// Perturb every increment outside each piece and require bit-identical
/// output on the piece.
pub fn locality_self_test(functional: &ProductFunctional, grid: &TimeGrid, seed: u64) -> Result<(), SignError> {
    let pieces = resolve(functional, grid)?;
    let mut r = rng::stream(seed, rng::tag::SIGNS, u64::MAX >> 24);
    let mut base = Vec::new();
    crate::path_engine::sample_increments(grid, &mut r, &mut base);
    let mut scratch = Vec::new();
    for (k, p) in pieces.iter().enumerate() {
        let (g0, t0) = eval_piece(p, &base, &mut scratch);
        let mut other = base.clone();
        for (i, d) in other.iter_mut().enumerate() {
            if i < p.lo || i >= p.hi {
                *d += r.random::<f64>() - 0.5;
            }
        }
        let (g1, t1) = eval_piece(p, &other, &mut scratch);
        if g0.to_bits() != g1.to_bits() || t0 != t1 {
            return Err(SignError::NotLocal(k));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FormulaOptions {
    pub replicas: u64,
    /// Selects the batch of fresh signs; estimates must not depend on it.
    pub sign_salt: u64,
}

impl Default for FormulaOptions {
    fn default() -> Self {
        FormulaOptions {
            replicas: 10_000,
            sign_salt: 0,
        }
    }
}

pub const MIN_FORMULA_REPLICAS: u64 = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormulaReport {
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// Per-piece factors of the right side, from the same replicas.
    pub rhs_pieces: Vec<Estimate>,
    /// Product of the per-piece means and its delta-method stderr.
    pub rhs_product: f64,
    pub rhs_product_stderr: f64,
    pub compatible: bool,
}

fn sign_of(field: &[(usize, i8)], i: usize) -> f64 {
    match field.binary_search_by_key(&i, |e| e.0) {
        Ok(k) => field[k].1 as f64,
        Err(_) => 0.0,
    }
}

/// Estimate both sides of the identity for `functional` and `set` on `grid`.
///
/// Left side: `ξ(W, ε) ξ(W_E, ε_E)` averaged over coupled draws, with `ε_E`
/// from [`conditional_copy`] rules (maxima of robustness 1). Right side: the
/// product over pieces of `g^p(W) g^p(W_E) 1{T^p_E paired with T^p in E}`
/// over independent draws.
pub fn verify_probability_formula(
    set: &CensorSet,
    functional: &ProductFunctional,
    grid: &TimeGrid,
    config: &MatchConfig,
    options: &FormulaOptions,
    seed: u64,
    exec: Execution,
) -> Result<FormulaReport, SignError> {
    config.validate()?;
    if options.replicas < MIN_FORMULA_REPLICAS {
        return Err(SignError::Replicas {
            min: MIN_FORMULA_REPLICAS,
            got: options.replicas,
        });
    }
    let pieces = resolve(functional, grid)?;
    locality_self_test(functional, grid, seed)?;
    let masses = CellMasses::new(set, grid)?;
    let in_e = masses.in_e(config.theta_mem);
    let eta = config.eta;
    let sign_seed = rng::derive_seed(seed, rng::tag::SIGNS, options.sign_salt);

    let lhs_values = map_replicas(options.replicas, exec, |i| {
        let mut r = rng::stream(seed, rng::tag::FORMULA_LHS, i);
        let mut rs = rng::stream(sign_seed, rng::tag::SIGNS, i);
        let inc = masses.draw_core_increments(&mut r);
        let w = cumulative(&inc.w);
        let we = cumulative(&inc.we);
        let w_max = strict_maxima(&w);
        let we_max = strict_maxima(&we);
        let eps: Vec<(usize, i8)> = w_max.iter().map(|&i| (i, random_sign(&mut rs))).collect();
        let pairs = pair_maxima(&w_max, &we_max, &in_e, eta);
        let eps_e: Vec<(usize, i8)> = we_max
            .iter()
            .zip(&pairs)
            .map(|(&j, p)| match p {
                Some(i) => (j, sign_of(&eps, *i) as i8),
                None => (j, random_sign(&mut rs)),
            })
            .collect();
        let mut scratch = Vec::new();
        let mut xi = 1.0;
        let mut xi_e = 1.0;
        for p in &pieces {
            let (g, t) = eval_piece(p, &inc.w, &mut scratch);
            let (ge, te) = eval_piece(p, &inc.we, &mut scratch);
            xi *= g;
            xi_e *= ge;
            if let Some(t) = t {
                xi *= t.map_or(0.0, |i| sign_of(&eps, i));
            }
            if let Some(te) = te {
                xi_e *= te.map_or(0.0, |j| sign_of(&eps_e, j));
            }
        }
        xi * xi_e
    });

    let rhs_values = map_replicas(options.replicas, exec, |i| {
        let mut r = rng::stream(seed, rng::tag::FORMULA_RHS, i);
        let inc = masses.draw_core_increments(&mut r);
        let w = cumulative(&inc.w);
        let w_max = strict_maxima(&w);
        let mut scratch = Vec::new();
        pieces
            .iter()
            .map(|p| {
                let (g, t) = eval_piece(p, &inc.w, &mut scratch);
                let (ge, te) = eval_piece(p, &inc.we, &mut scratch);
                let hit = match (t, te) {
                    (None, None) => true,
                    (Some(Some(i)), Some(Some(j))) => pair_maxima(&w_max, &[j], &in_e, eta)[0] == Some(i),
                    _ => false,
                };
                if hit {
                    g * ge
                } else {
                    0.0
                }
            })
            .collect::<Vec<f64>>()
    });

    let lhs = Estimate::from_values("lhs", lhs_values);
    let rhs = Estimate::from_values("rhs", rhs_values.iter().map(|v| v.iter().product::<f64>()));
    let rhs_pieces: Vec<Estimate> = (0..pieces.len())
        .map(|k| Estimate::from_values(format!("rhs_piece_{k}"), rhs_values.iter().map(|v| v[k])))
        .collect();
    let rhs_product: f64 = rhs_pieces.iter().map(|e| e.mean()).product();
    // delta method, pieces treated as independent
    let rhs_product_stderr = rhs_pieces
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let others: f64 = rhs_pieces
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != k)
                .map(|(_, f)| f.mean())
                .product();
            (others * e.stderr()).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    let compatible = (lhs.mean() - rhs.mean()).abs() <= 3.0 * (lhs.stderr().powi(2) + rhs.stderr().powi(2)).sqrt();
    Ok(FormulaReport {
        lhs,
        rhs,
        rhs_pieces,
        rhs_product,
        rhs_product_stderr,
        compatible,
    })
}

fn cumulative(d: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(d.len() + 1);
    let mut x = 0.0;
    v.push(0.0);
    for &y in d {
        x += y;
        v.push(x);
    }
    v
}

// ---------------------------------------------------------------------------
// the ±1 random walk model

pub const ORACLE_MAX_STEPS: usize = 6;

/// Functional of the ±1 steps inside one piece.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscreteG {
    /// `num / den`.
    Constant { num: i64, den: i64 },
    /// `2^min(S, clip)` with `S` the sum of the piece's steps.
    ClippedPow2 { clip: i32 },
    /// `1{step number `step` of the piece is +1}`.
    StepUp { step: usize },
    /// `1{S > threshold}`.
    SumAbove { threshold: i32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiscreteSelection {
    /// Maximizer over walk nodes `lo..=hi`.
    Argmax { lo: usize, hi: usize },
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretePiece {
    /// Steps `cells[0]..cells[1]`, i.e. walk nodes `cells[0]..=cells[1]`.
    pub cells: [usize; 2],
    pub g: DiscreteG,
    pub selection: DiscreteSelection,
}

/// One oracle case: an `n`-step walk, the steps shared with the copy, and a
/// product functional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteCase {
    pub n: usize,
    /// Shared steps (0-based).
    pub e_cells: Vec<usize>,
    pub pieces: Vec<DiscretePiece>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleMatrix {
    pub version: u32,
    pub cases: Vec<DiscreteCase>,
}

impl DiscreteCase {
    pub fn validate(&self) -> Result<(), SignError> {
        if self.n > ORACLE_MAX_STEPS {
            return Err(SignError::TooManySteps {
                max: ORACLE_MAX_STEPS,
                got: self.n,
            });
        }
        if self.n == 0 {
            return Err(SignError::Case("n must be positive".into()));
        }
        if self.e_cells.iter().any(|&c| c >= self.n) {
            return Err(SignError::Case(format!("E cells {:?} outside 0..{}", self.e_cells, self.n)));
        }
        let mut expect = 0;
        for (p, piece) in self.pieces.iter().enumerate() {
            let [a, b] = piece.cells;
            if a != expect || b <= a {
                return Err(SignError::Case(format!("piece {p} cells {:?}", piece.cells)));
            }
            expect = b;
            match piece.g {
                DiscreteG::Constant { den, .. } if den == 0 => {
                    return Err(SignError::Case(format!("piece {p}: zero denominator")))
                }
                DiscreteG::StepUp { step } if step >= b - a => {
                    return Err(SignError::OutsidePiece { piece: p, what: "g" })
                }
                _ => {}
            }
            if let DiscreteSelection::Argmax { lo, hi } = piece.selection {
                if lo < a || hi > b || hi < lo + 2 {
                    return Err(SignError::OutsidePiece {
                        piece: p,
                        what: "selection",
                    });
                }
            }
        }
        if expect != self.n {
            return Err(SignError::Case("pieces do not cover the walk".into()));
        }
        Ok(())
    }

    fn in_e_cell(&self) -> Vec<bool> {
        let mut v = vec![false; self.n];
        for &c in &self.e_cells {
            v[c] = true;
        }
        v
    }
}

fn walk(steps: &[i32]) -> Vec<i32> {
    let mut v = Vec::with_capacity(steps.len() + 1);
    let mut x = 0;
    v.push(0);
    for &s in steps {
        x += s;
        v.push(x);
    }
    v
}

fn eval_discrete_g(g: &DiscreteG, steps: &[i32]) -> BigRational {
    match *g {
        DiscreteG::Constant { num, den } => BigRational::new(BigInt::from(num), BigInt::from(den)),
        DiscreteG::ClippedPow2 { clip } => {
            let e = steps.iter().sum::<i32>().min(clip);
            let two = BigRational::from_integer(BigInt::from(2));
            if e >= 0 {
                num_traits::pow(two, e as usize)
            } else {
                num_traits::pow(two, (-e) as usize).recip()
            }
        }
        DiscreteG::StepUp { step } => bool_rat(steps[step] == 1),
        DiscreteG::SumAbove { threshold } => bool_rat(steps.iter().sum::<i32>() > threshold),
    }
}

fn bool_rat(b: bool) -> BigRational {
    if b {
        BigRational::one()
    } else {
        BigRational::zero()
    }
}

/// Argmax over nodes `lo..=hi` of a walk, `None` at an endpoint or on a tie.
fn discrete_argmax(v: &[i32], lo: usize, hi: usize) -> Option<usize> {
    let best = *v[lo..=hi].iter().max().unwrap();
    let hits: Vec<usize> = (lo..=hi).filter(|&i| v[i] == best).collect();
    match hits.as_slice() {
        [i] if *i != lo && *i != hi => Some(*i),
        _ => None,
    }
}

/// Strict interior local maxima of a walk.
fn discrete_maxima(v: &[i32]) -> Vec<usize> {
    (1..v.len() - 1).filter(|&i| v[i] > v[i - 1] && v[i] > v[i + 1]).collect()
}

fn steps_from_bits(bits: u32, n: usize) -> Vec<i32> {
    (0..n).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect()
}

/// Steps of the copy: shared steps on E, the bits of `y` elsewhere.
fn copy_steps(x: &[i32], in_e: &[bool], y: u32) -> Vec<i32> {
    let mut k = 0;
    x.iter()
        .zip(in_e)
        .map(|(&s, &e)| {
            if e {
                s
            } else {
                let b = if y >> k & 1 == 1 { 1 } else { -1 };
                k += 1;
                b
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub lhs: String,
    pub rhs: String,
    pub equal: bool,
}

/// Exact values of both sides by enumerating every walk, every copy, every
/// sign assignment on the walk's maxima and every fresh sign on the copy's
/// unpaired maxima, all with equal weight.
pub fn brute_force_oracle(case: &DiscreteCase) -> Result<(BigRational, BigRational), SignError> {
    case.validate()?;
    let n = case.n;
    let in_e_cell = case.in_e_cell();
    // node k (interior) is in E when both adjacent steps are
    let node_in_e: Vec<bool> = (0..=n).map(|k| k > 0 && k < n && in_e_cell[k - 1] && in_e_cell[k]).collect();
    let off = in_e_cell.iter().filter(|&&e| !e).count();

    let mut lhs_sum = BigRational::zero();
    for xb in 0..1u32 << n {
        let x = steps_from_bits(xb, n);
        let vx = walk(&x);
        let mx = discrete_maxima(&vx);
        for yb in 0..1u32 << off {
            let xe = copy_steps(&x, &in_e_cell, yb);
            let ve = walk(&xe);
            let me = discrete_maxima(&ve);
            // a maximum of the copy inherits when it is also a maximum of
            // the walk and lies in E
            let inherit: Vec<Option<usize>> = me
                .iter()
                .map(|&j| (node_in_e[j] && mx.contains(&j)).then(|| mx.iter().position(|&i| i == j).unwrap()))
                .collect();
            let fresh: Vec<usize> = (0..me.len()).filter(|&k| inherit[k].is_none()).collect();
            let mut g_prod = BigRational::one();
            let mut sel_x = Vec::new();
            let mut sel_e = Vec::new();
            let mut dead = false;
            for p in &case.pieces {
                let [a, b] = p.cells;
                g_prod *= eval_discrete_g(&p.g, &x[a..b]) * eval_discrete_g(&p.g, &xe[a..b]);
                if let DiscreteSelection::Argmax { lo, hi } = p.selection {
                    match (discrete_argmax(&vx, lo, hi), discrete_argmax(&ve, lo, hi)) {
                        (Some(t), Some(te)) => {
                            sel_x.push(mx.iter().position(|&i| i == t).unwrap());
                            sel_e.push(me.iter().position(|&j| j == te).unwrap());
                        }
                        _ => dead = true,
                    }
                }
            }
            if dead || g_prod.is_zero() {
                continue;
            }
            // average of the sign product over all assignments
            let mut sign_sum: i64 = 0;
            let total = 1u64 << (mx.len() + fresh.len());
            for eb in 0..1u32 << mx.len() {
                for fb in 0..1u32 << fresh.len() {
                    let eps = |k: usize| if eb >> k & 1 == 1 { 1i64 } else { -1 };
                    let eps_e = |k: usize| match inherit[k] {
                        Some(i) => eps(i),
                        None => {
                            let f = fresh.iter().position(|&q| q == k).unwrap();
                            if fb >> f & 1 == 1 {
                                1
                            } else {
                                -1
                            }
                        }
                    };
                    let s: i64 = sel_x.iter().map(|&k| eps(k)).product::<i64>() * sel_e.iter().map(|&k| eps_e(k)).product::<i64>();
                    sign_sum += s;
                }
            }
            lhs_sum += g_prod * BigRational::new(BigInt::from(sign_sum), BigInt::from(total));
        }
    }
    let lhs = lhs_sum / BigRational::from_integer(BigInt::from(1u64 << (n + off)));

    let mut rhs = BigRational::one();
    for p in &case.pieces {
        let [a, b] = p.cells;
        let m = b - a;
        let e_local = &in_e_cell[a..b];
        let off_p = e_local.iter().filter(|&&e| !e).count();
        let mut sum = BigRational::zero();
        for xb in 0..1u32 << m {
            let x = steps_from_bits(xb, m);
            for yb in 0..1u32 << off_p {
                let xe = copy_steps(&x, e_local, yb);
                let hit = match p.selection {
                    DiscreteSelection::None => true,
                    DiscreteSelection::Argmax { lo, hi } => {
                        let vx = walk(&x);
                        let ve = walk(&xe);
                        match (discrete_argmax(&vx, lo - a, hi - a), discrete_argmax(&ve, lo - a, hi - a)) {
                            (Some(t), Some(te)) => t == te && e_local[t - 1] && e_local[t],
                            _ => false,
                        }
                    }
                };
                if hit {
                    sum += eval_discrete_g(&p.g, &x) * eval_discrete_g(&p.g, &xe);
                }
            }
        }
        rhs *= sum / BigRational::from_integer(BigInt::from(1u64 << (m + off_p)));
    }
    Ok((lhs, rhs))
}

/// Monte Carlo version of the oracle on the same discrete model. Left and
/// right sides use independent draws.
pub fn discrete_mc(case: &DiscreteCase, replicas: u64, seed: u64, exec: Execution) -> Result<(Estimate, Estimate), SignError> {
    case.validate()?;
    let n = case.n;
    let in_e_cell = case.in_e_cell();
    let node_in_e: Vec<bool> = (0..=n).map(|k| k > 0 && k < n && in_e_cell[k - 1] && in_e_cell[k]).collect();
    let to_f = |q: BigRational| -> f64 {
        use num_traits::ToPrimitive;
        q.to_f64().unwrap()
    };
    let gval = |g: &DiscreteG, s: &[i32]| to_f(eval_discrete_g(g, s));
    let draw = |r: &mut rand_chacha::ChaCha8Rng| -> (Vec<i32>, Vec<i32>) {
        let x: Vec<i32> = (0..n).map(|_| if r.random::<bool>() { 1 } else { -1 }).collect();
        let xe = x
            .iter()
            .zip(&in_e_cell)
            .map(|(&s, &e)| if e { s } else if r.random::<bool>() { 1 } else { -1 })
            .collect();
        (x, xe)
    };
    let lhs = map_replicas(replicas, exec, |i| {
        let mut r = rng::stream(seed, rng::tag::ORACLE_MC, 2 * i);
        let (x, xe) = draw(&mut r);
        let (vx, ve) = (walk(&x), walk(&xe));
        let mx = discrete_maxima(&vx);
        let eps: Vec<(usize, i8)> = mx.iter().map(|&i| (i, random_sign(&mut r))).collect();
        let eps_e: Vec<(usize, i8)> = discrete_maxima(&ve)
            .into_iter()
            .map(|j| {
                if node_in_e[j] && mx.contains(&j) {
                    (j, sign_of(&eps, j) as i8)
                } else {
                    (j, random_sign(&mut r))
                }
            })
            .collect();
        let mut v = 1.0;
        for p in &case.pieces {
            let [a, b] = p.cells;
            v *= gval(&p.g, &x[a..b]) * gval(&p.g, &xe[a..b]);
            if let DiscreteSelection::Argmax { lo, hi } = p.selection {
                let s = discrete_argmax(&vx, lo, hi).map_or(0.0, |t| sign_of(&eps, t));
                let se = discrete_argmax(&ve, lo, hi).map_or(0.0, |t| sign_of(&eps_e, t));
                v *= s * se;
            }
        }
        v
    });
    let rhs = map_replicas(replicas, exec, |i| {
        let mut r = rng::stream(seed, rng::tag::ORACLE_MC, 2 * i + 1);
        let (x, xe) = draw(&mut r);
        let (vx, ve) = (walk(&x), walk(&xe));
        let mut v = 1.0;
        for p in &case.pieces {
            let [a, b] = p.cells;
            let hit = match p.selection {
                DiscreteSelection::None => true,
                DiscreteSelection::Argmax { lo, hi } => match (discrete_argmax(&vx, lo, hi), discrete_argmax(&ve, lo, hi)) {
                    (Some(t), Some(te)) => t == te && node_in_e[t],
                    _ => false,
                },
            };
            if !hit {
                return 0.0;
            }
            v *= gval(&p.g, &x[a..b]) * gval(&p.g, &xe[a..b]);
        }
        v
    });
    Ok((Estimate::from_values("lhs", lhs), Estimate::from_values("rhs", rhs)))
}

/// Run the oracle over every case of a matrix.
pub fn run_oracle_matrix(matrix: &OracleMatrix) -> Result<Vec<OracleResult>, SignError> {
    if matrix.version != 1 {
        return Err(SignError::Case(format!("unsupported matrix version {}", matrix.version)));
    }
    matrix
        .cases
        .iter()
        .map(|c| {
            let (l, r) = brute_force_oracle(c)?;
            Ok(OracleResult {
                lhs: l.to_string(),
                rhs: r.to_string(),
                equal: l == r,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(n: usize, e: &[usize], pieces: Vec<DiscretePiece>) -> DiscreteCase {
        DiscreteCase {
            n,
            e_cells: e.to_vec(),
            pieces,
        }
    }

    fn one_piece(n: usize, g: DiscreteG, sel: DiscreteSelection) -> Vec<DiscretePiece> {
        vec![DiscretePiece {
            cells: [0, n],
            g,
            selection: sel,
        }]
    }

    #[test]
    fn full_set_two_steps() {
        let c = case(
            2,
            &[0, 1],
            one_piece(2, DiscreteG::Constant { num: 1, den: 1 }, DiscreteSelection::Argmax { lo: 0, hi: 2 }),
        );
        let (l, r) = brute_force_oracle(&c).unwrap();
        assert_eq!(l, r);
        // the peak up-down has probability 1/4
        assert_eq!(l, BigRational::new(1.into(), 4.into()));
    }

    #[test]
    fn empty_set_gives_zero() {
        let c = case(
            2,
            &[],
            one_piece(2, DiscreteG::Constant { num: 1, den: 1 }, DiscreteSelection::Argmax { lo: 0, hi: 2 }),
        );
        let (l, r) = brute_force_oracle(&c).unwrap();
        assert!(l.is_zero() && r.is_zero());
    }

    #[test]
    fn nested_sets_are_monotone() {
        let sel = DiscreteSelection::Argmax { lo: 0, hi: 4 };
        let g = DiscreteG::ClippedPow2 { clip: 1 };
        let big = case(4, &[1, 2], one_piece(4, g.clone(), sel.clone()));
        let small = case(4, &[1], one_piece(4, g, sel));
        let (lb, rb) = brute_force_oracle(&big).unwrap();
        let (ls, rs) = brute_force_oracle(&small).unwrap();
        assert_eq!(lb, rb);
        assert_eq!(ls, rs);
        assert!(rs <= rb);
    }

    #[test]
    fn oracle_refuses_long_walks() {
        let c = case(
            7,
            &[],
            one_piece(7, DiscreteG::Constant { num: 1, den: 1 }, DiscreteSelection::None),
        );
        assert!(matches!(brute_force_oracle(&c), Err(SignError::TooManySteps { .. })));
    }

    #[test]
    fn pairing_prefers_nearest_then_left() {
        let in_e = vec![true; 10];
        assert_eq!(pair_maxima(&[2, 4], &[3], &in_e, 1), vec![Some(2)]);
        assert_eq!(pair_maxima(&[2, 5], &[4], &in_e, 1), vec![Some(5)]);
        assert_eq!(pair_maxima(&[2], &[4], &in_e, 1), vec![None]);
        let mut part = in_e.clone();
        part[2] = false;
        assert_eq!(pair_maxima(&[2, 4], &[3], &part, 1), vec![Some(4)]);
    }

    #[test]
    fn partition_must_cover() {
        let g = TimeGrid::unit(4);
        let mut f = ProductFunctional::argmax_only((0.0, 1.0), 0.0, 1.0);
        assert!(resolve(&f, &g).is_ok());
        f.pieces[0].interval = [0.0, 0.5];
        assert!(resolve(&f, &g).is_err());
        let mut f = ProductFunctional::argmax_only((0.0, 1.0), 0.0, 1.0);
        f.pieces[0].selection = Selection::Argmax { a: 0.0, b: 0.1 };
        assert!(resolve(&f, &g).is_err());
    }

    #[test]
    fn locality_holds_for_basis() {
        let f = ProductFunctional {
            pieces: vec![
                Piece {
                    interval: [0.0, 0.5],
                    g: PieceFunctional::ClippedExp { a: 0.0, b: 0.5, clip: 3.0 },
                    selection: Selection::Argmax { a: 0.0, b: 0.5 },
                },
                Piece {
                    interval: [0.5, 1.0],
                    g: PieceFunctional::IncrementIndicator {
                        a: 0.5,
                        b: 0.75,
                        threshold: 0.0,
                    },
                    selection: Selection::None,
                },
            ],
        };
        locality_self_test(&f, &TimeGrid::unit(8), 3).unwrap();
    }
}
