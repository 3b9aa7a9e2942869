//! The coupling `(W, W', 1_E·W, W_E)` on a grid, and the experiments built
//! on it.
//!
//! Cell `i` carries mass `m_i = λ(E ∩ cell_i)`. Its increments split as
//! `A_i ~ N(0, m_i)` (the part seen by `E`) and `B_i, B'_i, C_i` for the
//! rest, all independent:
//!
//! * `ΔW   = A + B`
//! * `ΔW_E = A + B'`
//! * `Δ(1_E·W) = A`
//! * `ΔW'  = C + B'` with `C ~ N(0, m_i)`
//!
//! so `W` and `W_E` are each Brownian on the grid with `Cov(ΔW_i, ΔW_E,i) = m_i`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::censor_sets::{CensorSet, ElementarySet, SetError};
use crate::exec::{map_replicas, Execution};
use crate::path_engine::{
    argmax_nodes, plateau_maxima, robustness_profile, GridPath, PathError, PlateauMax, TimeGrid,
};
use crate::rng;
use crate::stats_report::{trend, Estimate, StatsError, Trend, TrendReport};

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("grid window [{0}, {1}] is not inside the set window [{2}, {3}]")]
    Window(f64, f64, f64, f64),
    #[error("invalid match configuration: {0}")]
    Config(String),
    #[error("E has zero measure in the window; the time change is degenerate")]
    DegenerateTimeChange,
    #[error("interval [{0}, {1}] is outside the grid window or shorter than two cells")]
    Interval(f64, f64),
}

/// Grid surrogates for matching maxima.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchConfig {
    /// Match tolerance in cells.
    pub eta: usize,
    /// A node is in E when its two adjacent cells are on average at least
    /// this full.
    pub theta_mem: f64,
    /// Minimum robustness of a detected maximum.
    pub w: usize,
    /// When set to `κ`, the robustness used at level `L` is
    /// `max(w, round(2^(L - κ√L)))`, so detected maxima are separated by a
    /// vanishing fraction of the window that still grows in cells.
    pub scale_exponent: Option<f64>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            eta: 1,
            theta_mem: 0.5,
            w: 2,
            scale_exponent: Some(2.0),
        }
    }
}

impl MatchConfig {
    pub fn fixed(w: usize) -> Self {
        MatchConfig {
            w,
            scale_exponent: None,
            ..MatchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), CouplingError> {
        if !(self.theta_mem > 0.0 && self.theta_mem <= 1.0) {
            return Err(CouplingError::Config(format!("theta_mem = {} not in (0, 1]", self.theta_mem)));
        }
        if self.w == 0 {
            return Err(CouplingError::Config("w must be at least 1".into()));
        }
        if let Some(k) = self.scale_exponent {
            if !(k >= 0.0) {
                return Err(CouplingError::Config(format!("scale_exponent = {k}")));
            }
        }
        Ok(())
    }

    /// Robustness used at grid level `level`.
    pub fn radius(&self, level: u32) -> usize {
        let base = match self.scale_exponent {
            None => self.w,
            Some(k) => {
                let l = level as f64;
                (2f64.powf(l - k * l.sqrt())).round().max(0.0) as usize
            }
        };
        let cap = (1usize << level) / 2;
        base.max(self.w).min(cap.max(1))
    }
}

/// Exact per-cell masses of E on a grid.
#[derive(Clone, Debug)]
pub struct CellMasses {
    grid: TimeGrid,
    mass: Vec<f64>,
    /// `λ(E ∩ [t - Δt, t + Δt]) / 2Δt` at each node (one-sided at the ends).
    fill: Vec<f64>,
    sd_in: Vec<f64>,
    sd_out: Vec<f64>,
}

impl CellMasses {
    pub fn new(set: &CensorSet, grid: &TimeGrid) -> Result<Self, CouplingError> {
        let (a, b) = set.window();
        if grid.t_start() < a || grid.t_end() > b {
            return Err(CouplingError::Window(grid.t_start(), grid.t_end(), a, b));
        }
        let dt = grid.dt();
        let n = grid.cells();
        let mut mass = Vec::with_capacity(n);
        for i in 0..n {
            let m = set.measure(grid.node_time(i), grid.node_time(i + 1))?;
            mass.push(m.clamp(0.0, dt));
        }
        // a node's share of E: the mean fill of its two adjacent cells
        let mut dual = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let f = match k {
                0 => mass[0] / dt,
                k if k == n => mass[n - 1] / dt,
                _ => 0.5 * (mass[k - 1] + mass[k]) / dt,
            };
            dual.push(f);
        }
        Ok(Self::from_parts(*grid, mass, dual))
    }

    fn from_parts(grid: TimeGrid, mass: Vec<f64>, dual: Vec<f64>) -> Self {
        let dt = grid.dt();
        let sd_in = mass.iter().map(|m| m.sqrt()).collect();
        let sd_out = mass.iter().map(|m| (dt - m).max(0.0).sqrt()).collect();
        CellMasses {
            grid,
            mass,
            fill: dual,
            sd_in,
            sd_out,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }
    pub fn node_fill(&self) -> &[f64] {
        &self.fill
    }
    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Node membership under the `θ_mem` rule.
    pub fn in_e(&self, theta_mem: f64) -> Vec<bool> {
        self.fill.iter().map(|&f| f >= theta_mem).collect()
    }

    fn draw_abb<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.mass.len();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut bp = Vec::with_capacity(n);
        for i in 0..n {
            let za: f64 = rng.sample(StandardNormal);
            let zb: f64 = rng.sample(StandardNormal);
            let zp: f64 = rng.sample(StandardNormal);
            a.push(za * self.sd_in[i]);
            b.push(zb * self.sd_out[i]);
            bp.push(zp * self.sd_out[i]);
        }
        (a, b, bp)
    }

    /// Node values of `(W, W_E, 1_E·W)` only. Consumes the stream exactly as
    /// [`CellMasses::draw`] does up to the `W'` part, so both produce the
    /// same three paths.
    pub fn draw_core<R: Rng + ?Sized>(&self, rng: &mut R) -> CorePaths {
        let inc = self.draw_core_increments(rng);
        let cum = |d: &[f64]| -> Vec<f64> {
            let mut v = Vec::with_capacity(d.len() + 1);
            let mut x = 0.0;
            v.push(0.0);
            for &y in d {
                x += y;
                v.push(x);
            }
            v
        };
        CorePaths {
            w: cum(&inc.w),
            we: cum(&inc.we),
            censored: cum(&inc.censored),
        }
    }

    /// Cell increments of `(W, W_E, 1_E·W)`, same stream use as
    /// [`CellMasses::draw_core`].
    pub fn draw_core_increments<R: Rng + ?Sized>(&self, rng: &mut R) -> CorePaths {
        let (a, b, bp) = self.draw_abb(rng);
        let w = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let we = a.iter().zip(&bp).map(|(x, y)| x + y).collect();
        CorePaths { w, we, censored: a }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> CoupledSample {
        let (a, b, bp) = self.draw_abb(rng);
        let c: Vec<f64> = self.sd_in.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
        let sum = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p + q).collect() };
        let g = self.grid;
        CoupledSample {
            grid: g,
            w: GridPath::from_increments(g, &sum(&a, &b)),
            w_prime: GridPath::from_increments(g, &sum(&c, &bp)),
            censored: GridPath::from_increments(g, &a),
            we: GridPath::from_increments(g, &sum(&a, &bp)),
            a,
            b,
            b_prime: bp,
            c,
        }
    }
}

/// The three paths used by the match estimators (node values or cell
/// increments, depending on the producer).
#[derive(Clone, Debug)]
pub struct CorePaths {
    pub w: Vec<f64>,
    pub we: Vec<f64>,
    pub censored: Vec<f64>,
}

/// One joint draw with its increment parts kept for reconstruction checks.
#[derive(Clone, Debug)]
pub struct CoupledSample {
    pub grid: TimeGrid,
    pub w: GridPath,
    pub w_prime: GridPath,
    pub censored: GridPath,
    pub we: GridPath,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub b_prime: Vec<f64>,
    pub c: Vec<f64>,
}

pub fn draw_coupled<R: Rng + ?Sized>(set: &CensorSet, grid: &TimeGrid, rng: &mut R) -> Result<CoupledSample, CouplingError> {
    Ok(CellMasses::new(set, grid)?.draw(rng))
}

// ---------------------------------------------------------------------------
// maxima matching

/// Nodes with robustness at least `r` (the strict rule of `detect_maxima`).
fn robust_nodes(values: &[f64], r: usize) -> Vec<usize> {
    robustness_profile(values)
        .iter()
        .enumerate()
        .filter(|(_, &q)| q >= r)
        .map(|(i, _)| i)
        .collect()
}

/// Marks every node within `eta` of a marked node.
fn dilate(n: usize, marks: impl IntoIterator<Item = (usize, usize)>, eta: usize) -> Vec<bool> {
    let mut out = vec![false; n];
    for (lo, hi) in marks {
        let a = lo.saturating_sub(eta);
        let b = (hi + eta).min(n - 1);
        out[a..=b].iter_mut().for_each(|x| *x = true);
    }
    out
}

/// Per-replica counts at one grid level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelCounts {
    /// Maxima of W lying in E.
    pub w_in_e: u64,
    /// Of those, matched by a maximum of W_E in E.
    pub shared: u64,
    /// Of those, matched by a maximum of 1_E·W.
    pub contained: u64,
    /// Maxima of 1_E·W carrying mass.
    pub censored: u64,
    /// Of those, matched by a maximum of W.
    pub censored_in_w: u64,
}

impl LevelCounts {
    fn add(mut self, o: LevelCounts) -> Self {
        self.w_in_e += o.w_in_e;
        self.shared += o.shared;
        self.contained += o.contained;
        self.censored += o.censored;
        self.censored_in_w += o.censored_in_w;
        self
    }
}

fn replica_counts(p: &CorePaths, in_e: &[bool], dual: &[f64], r: usize, eta: usize, swap: bool) -> LevelCounts {
    let n = p.w.len();
    let (first, second) = if swap { (&p.we, &p.w) } else { (&p.w, &p.we) };
    let w_max: Vec<usize> = robust_nodes(first, r).into_iter().filter(|&i| in_e[i]).collect();
    let we_near = dilate(n, robust_nodes(second, r).into_iter().filter(|&i| in_e[i]).map(|i| (i, i)), eta);
    let cens: Vec<PlateauMax> = plateau_maxima(&p.censored, r)
        .into_iter()
        .filter(|q| (q.first..=q.last).any(|k| dual[k] > 0.0))
        .collect();
    let cens_near = dilate(n, cens.iter().map(|q| (q.first, q.last)), eta);
    let w_near = dilate(n, robust_nodes(first, r).into_iter().map(|i| (i, i)), eta);
    LevelCounts {
        w_in_e: w_max.len() as u64,
        shared: w_max.iter().filter(|&&i| we_near[i]).count() as u64,
        contained: w_max.iter().filter(|&&i| cens_near[i]).count() as u64,
        censored: cens.len() as u64,
        censored_in_w: cens.iter().filter(|q| (q.first..=q.last).any(|k| w_near[k])).count() as u64,
    }
}

/// Replica stream index for level `level`, replica `r`.
fn replica_index(level: u32, r: u64) -> u64 {
    ((level as u64) << 28) | r
}

/// Runs the match estimators at one grid.
pub fn level_counts(
    masses: &CellMasses,
    config: &MatchConfig,
    replicas: u64,
    seed: u64,
    exec: Execution,
    swap_roles: bool,
) -> Result<LevelCounts, CouplingError> {
    config.validate()?;
    let level = masses.grid().level();
    let r = config.radius(level);
    let in_e = masses.in_e(config.theta_mem);
    let per = map_replicas(replicas, exec, |i| {
        let mut s = rng::stream(seed, rng::tag::COUPLED, replica_index(level, i));
        let p = masses.draw_core(&mut s);
        replica_counts(&p, &in_e, masses.node_fill(), r, config.eta, swap_roles)
    });
    Ok(per.into_iter().fold(LevelCounts::default(), LevelCounts::add))
}

/// Among maxima of W in E, the fraction matched by a maximum of W_E in E.
pub fn shared_maxima_fraction(
    set: &CensorSet,
    grid: &TimeGrid,
    config: &MatchConfig,
    replicas: u64,
    seed: u64,
    exec: Execution,
) -> Result<Estimate, CouplingError> {
    let c = level_counts(&CellMasses::new(set, grid)?, config, replicas, seed, exec, false)?;
    Ok(Estimate::proportion("shared", c.shared, c.w_in_e))
}

/// Fraction of maxima of W in E that are maxima of `1_E·W`, and the dual
/// fraction of maxima of `1_E·W` that are maxima of W.
pub fn censored_maxima_containment(
    set: &CensorSet,
    grid: &TimeGrid,
    config: &MatchConfig,
    replicas: u64,
    seed: u64,
    exec: Execution,
) -> Result<(Estimate, Estimate), CouplingError> {
    let c = level_counts(&CellMasses::new(set, grid)?, config, replicas, seed, exec, false)?;
    Ok((
        Estimate::proportion("containment", c.contained, c.w_in_e),
        Estimate::proportion("dual_containment", c.censored_in_w, c.censored),
    ))
}

// ---------------------------------------------------------------------------
// maximizers

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchProbReport {
    /// `Q(τ = τ_E ∈ E ∩ G)`.
    pub estimate: Estimate,
    /// Replicas where τ or τ_E is undefined (boundary or tie).
    pub none_rate: Estimate,
}

/// Monte Carlo estimate of `Q(τ = τ_E ∈ E ∩ G)` for the maximizers of W
/// and W_E on `[a, b]`.
#[allow(clippy::too_many_arguments)]
pub fn maximizer_match_prob(
    set: &CensorSet,
    interval: (f64, f64),
    g: Option<&ElementarySet>,
    grid: &TimeGrid,
    config: &MatchConfig,
    replicas: u64,
    seed: u64,
    exec: Execution,
) -> Result<MatchProbReport, CouplingError> {
    config.validate()?;
    let (a, b) = interval;
    let (lo, hi) = grid
        .node_range(a, b)
        .filter(|(lo, hi)| hi >= lo && hi - lo >= 2 && a >= grid.t_start() && b <= grid.t_end())
        .ok_or(CouplingError::Interval(a, b))?;
    let masses = CellMasses::new(set, grid)?;
    let in_e = masses.in_e(config.theta_mem);
    let in_g: Vec<bool> = (0..grid.nodes())
        .map(|k| g.is_none_or(|g| g.contains(grid.node_time(k))))
        .collect();
    let level = grid.level();
    let per = map_replicas(replicas, exec, |i| {
        let mut s = rng::stream(seed, rng::tag::MATCH, replica_index(level, i));
        let p = masses.draw_core(&mut s);
        let tau = interior_argmax(&p.w, lo, hi);
        let tau_e = interior_argmax(&p.we, lo, hi);
        match (tau, tau_e) {
            (Some(i), Some(j)) => (i.abs_diff(j) <= config.eta && in_e[i] && in_g[i], false),
            _ => (false, true),
        }
    });
    let mut est = Estimate::proportion("match", 0, 0);
    let mut none = Estimate::proportion("none", 0, 0);
    for (hit, undefined) in per {
        est.push_bool(hit);
        none.push_bool(undefined);
    }
    Ok(MatchProbReport {
        estimate: est,
        none_rate: none,
    })
}

/// Argmax node on `[lo, hi]`, `None` at an endpoint or on a tie.
fn interior_argmax(values: &[f64], lo: usize, hi: usize) -> Option<usize> {
    match argmax_nodes(values, lo, hi) {
        Some((i, false)) if i != lo && i != hi => Some(i),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// time change

/// `ρ(t) = λ(E ∩ [t_start, t])` at grid nodes and its right-continuous
/// inverse `ζ` on a dyadic range grid.
#[derive(Clone, Debug)]
pub struct TimeChange {
    grid: TimeGrid,
    rho: Vec<f64>,
    range: TimeGrid,
    zeta: Vec<f64>,
}

/// Build the time change of `set` over `grid`.
///
/// The range grid is `[0, ρ(t_end)]` at the largest level whose step is
/// still at least `Δt`.
pub fn build_time_change(set: &CensorSet, grid: &TimeGrid) -> Result<TimeChange, CouplingError> {
    let masses = CellMasses::new(set, grid)?;
    let mut rho = Vec::with_capacity(grid.nodes());
    let mut acc = 0.0;
    rho.push(0.0);
    for m in masses.masses() {
        acc += m;
        rho.push(acc);
    }
    if !(acc > 0.0) {
        return Err(CouplingError::DegenerateTimeChange);
    }
    let level = (acc / grid.dt()).log2().floor().max(0.0) as u32;
    let range = TimeGrid::new(0.0, acc, level)?;
    let t0 = grid.t_start();
    let rho_at = |t: f64| set.measure(t0, t).unwrap_or(0.0);
    let n = grid.cells();
    let mut zeta = Vec::with_capacity(range.nodes());
    for j in 0..range.nodes() {
        let s = range.node_time(j);
        let last = j == range.cells();
        // first node with ρ > s (or ≥ s at the right end)
        let k = if last {
            rho.partition_point(|&r| r < s)
        } else {
            rho.partition_point(|&r| r <= s)
        };
        let k = k.clamp(1, n);
        let (mut lo, mut hi) = (grid.node_time(k - 1), grid.node_time(k));
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            let r = rho_at(mid);
            let above = if last { r >= s } else { r > s };
            if above {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
                break;
            }
        }
        zeta.push(hi);
    }
    Ok(TimeChange { grid: *grid, rho, range, zeta })
}

impl TimeChange {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }
    pub fn range(&self) -> &TimeGrid {
        &self.range
    }
    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }
    pub fn total(&self) -> f64 {
        *self.rho.last().unwrap()
    }

    /// Grid node whose `ρ` is nearest `s_j` among the two bracketing `ζ(s_j)`.
    pub fn source_node(&self, j: usize) -> usize {
        let s = self.range.node_time(j);
        let t = self.zeta[j];
        let dt = self.grid.dt();
        let x = ((t - self.grid.t_start()) / dt).clamp(0.0, self.grid.cells() as f64);
        let lo = (x.floor() as usize).min(self.grid.cells());
        let hi = (lo + 1).min(self.grid.cells());
        if (self.rho[hi] - s).abs() < (self.rho[lo] - s).abs() {
            hi
        } else {
            lo
        }
    }

    /// Lebesgue measure on the range grid pushed through `ζ`, on `(a, b]`.
    pub fn pushforward(&self, a: f64, b: f64) -> f64 {
        let ds = self.range.dt();
        let count = self.zeta[..self.range.cells()].iter().filter(|&&t| t > a && t <= b).count();
        count as f64 * ds
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushforwardRow {
    pub a: f64,
    pub b: f64,
    pub pushed: f64,
    pub measure: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushforwardReport {
    pub rows: Vec<PushforwardRow>,
    pub tolerance: f64,
    pub max_error: f64,
    pub pass: bool,
}

/// Compare the pushforward of Lebesgue through `ζ` with `λ(E ∩ ·)` on the
/// given intervals. Tolerance: two range-grid steps.
pub fn pushforward_check(tc: &TimeChange, set: &CensorSet, intervals: &[(f64, f64)]) -> Result<PushforwardReport, CouplingError> {
    let tolerance = 2.0 * tc.range.dt();
    let mut rows = Vec::with_capacity(intervals.len());
    let mut max_error: f64 = 0.0;
    for &(a, b) in intervals {
        let pushed = tc.pushforward(a, b);
        let measure = set.measure(a, b)?;
        max_error = max_error.max((pushed - measure).abs());
        rows.push(PushforwardRow { a, b, pushed, measure });
    }
    Ok(PushforwardReport {
        rows,
        tolerance,
        max_error,
        pass: max_error <= tolerance,
    })
}

/// `(1_E·W) ∘ ζ` sampled on the range grid.
pub fn time_changed_censored(censored: &[f64], tc: &TimeChange) -> Result<GridPath, CouplingError> {
    if censored.len() != tc.grid.nodes() {
        return Err(CouplingError::Window(
            tc.grid.t_start(),
            tc.grid.t_end(),
            tc.grid.t_start(),
            tc.grid.t_end(),
        ));
    }
    let values = (0..tc.range.nodes()).map(|j| censored[tc.source_node(j)]).collect();
    Ok(GridPath {
        grid: tc.range,
        values,
    })
}

/// Correspondence counts between maxima of `1_E·W` and of its time change.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceCounts {
    pub censored: u64,
    pub censored_matched: u64,
    pub changed: u64,
    pub changed_matched: u64,
}

impl CorrespondenceCounts {
    pub fn rate(&self) -> Estimate {
        Estimate::proportion(
            "correspondence",
            self.censored_matched + self.changed_matched,
            self.censored + self.changed,
        )
    }
}

/// Match maxima of `1_E·W` (robustness `r` on the original grid) with
/// maxima of the time-changed path (robustness `r_range` on the range grid)
/// through `ρ`, with tolerance `eta` range steps. Each side's robust maxima
/// are matched against all maxima of the other side.
pub fn maxima_correspondence(
    censored: &[f64],
    dual: &[f64],
    changed: &GridPath,
    tc: &TimeChange,
    r: usize,
    r_range: usize,
    eta: usize,
) -> CorrespondenceCounts {
    let ds = tc.range.dt();
    let m = tc.range.nodes();
    let to_range = |k: usize| ((tc.rho[k] / ds).round() as usize).min(m - 1);
    let has_mass = |q: &PlateauMax| (q.first..=q.last).any(|k| dual[k] > 0.0);
    let all_c: Vec<PlateauMax> = plateau_maxima(censored, 1).into_iter().filter(has_mass).collect();
    let all_y = plateau_maxima(&changed.values, 1);
    let y_near = dilate(m, all_y.iter().map(|q| (q.first, q.last)), eta);
    let c_near = dilate(m, all_c.iter().map(|q| (to_range(q.first), to_range(q.last))), eta);
    let mut out = CorrespondenceCounts::default();
    for q in all_c.iter().filter(|q| q.robustness >= r) {
        out.censored += 1;
        if (to_range(q.first)..=to_range(q.last)).any(|j| y_near[j]) {
            out.censored_matched += 1;
        }
    }
    for q in all_y.iter().filter(|q| q.robustness >= r_range) {
        out.changed += 1;
        if (q.first..=q.last).any(|j| c_near[j]) {
            out.changed_matched += 1;
        }
    }
    out
}

/// Does the censored path have a maximum (carrying mass) inside `[lo, hi]`?
pub fn censored_has_maximum_in(censored: &[f64], dual: &[f64], lo: usize, hi: usize) -> bool {
    plateau_maxima(censored, 1)
        .iter()
        .any(|q| (q.first.max(lo)..=q.last.min(hi)).any(|k| dual[k] > 0.0))
}

// ---------------------------------------------------------------------------
// classification

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Stable,
    Unstable,
    Negligible,
    Undecided,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "STABLE",
            Verdict::Unstable => "UNSTABLE",
            Verdict::Negligible => "NEGLIGIBLE",
            Verdict::Undecided => "UNDECIDED",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyProtocol {
    pub levels: Vec<u32>,
    pub replicas: u64,
    pub config: MatchConfig,
    /// Top-level fraction needed for STABLE.
    pub theta_stable: f64,
    /// Top-level fraction allowed for UNSTABLE.
    pub theta_unstable: f64,
    /// Grid window; the set window when absent.
    pub window: Option<[f64; 2]>,
}

impl Default for ClassifyProtocol {
    fn default() -> Self {
        ClassifyProtocol {
            levels: (8..=14).collect(),
            replicas: 1000,
            config: MatchConfig::default(),
            theta_stable: 0.85,
            theta_unstable: 0.6,
            window: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    /// Measure of E inside the grid window.
    pub measure: f64,
    pub shared: Option<TrendReport>,
    pub containment: Option<TrendReport>,
    pub shared_verdict: Option<Verdict>,
    pub containment_verdict: Option<Verdict>,
    /// Per-level counts, in ladder order.
    pub counts: Vec<(u32, LevelCounts)>,
}

impl Classification {
    /// Every per-level estimate, labelled by estimator.
    pub fn estimates(&self) -> Vec<(f64, Estimate)> {
        let mut out = Vec::new();
        for (l, c) in &self.counts {
            let p = *l as f64;
            out.push((p, Estimate::proportion("shared", c.shared, c.w_in_e)));
            out.push((p, Estimate::proportion("containment", c.contained, c.w_in_e)));
            out.push((p, Estimate::proportion("dual_containment", c.censored_in_w, c.censored)));
        }
        out
    }
}

fn ladder_verdict(report: &TrendReport, p: &ClassifyProtocol) -> Verdict {
    let top = report.estimates.last().unwrap().mean();
    match report.verdict {
        Trend::Increasing | Trend::Flat if top >= p.theta_stable => Verdict::Stable,
        Trend::Decreasing if top <= p.theta_unstable => Verdict::Unstable,
        _ => Verdict::Undecided,
    }
}

/// Classify `set` by the refinement trend of the shared-maxima fraction and
/// the censored-maxima containment.
pub fn classify_set(set: &CensorSet, protocol: &ClassifyProtocol, seed: u64, exec: Execution) -> Result<Classification, CouplingError> {
    protocol.config.validate()?;
    if protocol.levels.len() < 3 {
        return Err(CouplingError::Stats(StatsError::ShortLadder(protocol.levels.len())));
    }
    let (a, b) = match protocol.window {
        Some(w) => (w[0], w[1]),
        None => set.window(),
    };
    let measure = set.measure(a, b)?;
    let negligible = Classification {
        verdict: Verdict::Negligible,
        measure,
        shared: None,
        containment: None,
        shared_verdict: None,
        containment_verdict: None,
        counts: Vec::new(),
    };
    if measure <= 0.0 {
        return Ok(negligible);
    }
    let mut counts = Vec::with_capacity(protocol.levels.len());
    for &l in &protocol.levels {
        let grid = TimeGrid::new(a, b, l)?;
        let masses = CellMasses::new(set, &grid)?;
        counts.push((l, level_counts(&masses, &protocol.config, protocol.replicas, seed, exec, false)?));
    }
    if counts.iter().all(|(_, c)| c.w_in_e == 0) {
        return Ok(Classification { counts, ..negligible });
    }
    if counts.iter().any(|(_, c)| c.w_in_e == 0) {
        return Ok(Classification {
            verdict: Verdict::Undecided,
            counts,
            ..negligible
        });
    }
    let ladder = |f: fn(&LevelCounts) -> Estimate| -> Vec<(f64, Estimate)> { counts.iter().map(|(l, c)| (*l as f64, f(c))).collect() };
    let shared = trend(&ladder(|c| Estimate::proportion("shared", c.shared, c.w_in_e)))?;
    let containment = trend(&ladder(|c| Estimate::proportion("containment", c.contained, c.w_in_e)))?;
    let sv = ladder_verdict(&shared, protocol);
    let cv = ladder_verdict(&containment, protocol);
    let verdict = if sv == cv { sv } else { Verdict::Undecided };
    Ok(Classification {
        verdict,
        measure,
        shared: Some(shared),
        containment: Some(containment),
        shared_verdict: Some(sv),
        containment_verdict: Some(cv),
        counts,
    })
}
