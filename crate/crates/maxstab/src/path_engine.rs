//! Brownian paths on dyadic grids.
//!
//! A [`GridPath`] holds node values `W(t_k)` for `t_k = t_start + k·Δt`,
//! `k = 0..=2^L`, anchored at `W(t_start) = 0`. Local maxima are strict
//! dominance over a neighbourhood of `w` cells; the largest such `w` is the
//! node's robustness.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Levels above this would not fit comfortably in memory.
pub const MAX_LEVEL: u32 = 26;

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("invalid window [{0}, {1}]")]
    Window(f64, f64),
    #[error("grid level {0} exceeds {MAX_LEVEL}")]
    Level(u32),
    #[error("target level {target} is below the current level {current}")]
    RefineBelow { current: u32, target: u32 },
    #[error("robustness {w} outside 1..={max}")]
    Robustness { w: usize, max: usize },
    #[error("interval [{a}, {b}] is not inside the window or spans fewer than two cells")]
    Interval { a: f64, b: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    level: u32,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, level: u32) -> Result<Self, PathError> {
        if !(t_start.is_finite() && t_end.is_finite() && t_start < t_end) {
            return Err(PathError::Window(t_start, t_end));
        }
        if level > MAX_LEVEL {
            return Err(PathError::Level(level));
        }
        Ok(TimeGrid { t_start, t_end, level })
    }

    pub fn unit(level: u32) -> Self {
        TimeGrid::new(0.0, 1.0, level).expect("unit window")
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }
    pub fn t_end(&self) -> f64 {
        self.t_end
    }
    pub fn level(&self) -> u32 {
        self.level
    }
    pub fn cells(&self) -> usize {
        1usize << self.level
    }
    pub fn nodes(&self) -> usize {
        self.cells() + 1
    }
    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.cells() as f64
    }

    /// Time of node `k`; the last node is exactly `t_end`.
    pub fn node_time(&self, k: usize) -> f64 {
        if k >= self.cells() {
            self.t_end
        } else {
            self.t_start + k as f64 * self.dt()
        }
    }

    pub fn with_level(&self, level: u32) -> Result<Self, PathError> {
        TimeGrid::new(self.t_start, self.t_end, level)
    }

    /// Node indices `lo..=hi` of the nodes lying in `[a, b]`.
    pub fn node_range(&self, a: f64, b: f64) -> Option<(usize, usize)> {
        let dt = self.dt();
        let eps = 1e-9 * dt;
        let lo = ((a - self.t_start - eps) / dt).ceil().max(0.0) as usize;
        let hi = (((b - self.t_start + eps) / dt).floor() as isize).min(self.cells() as isize);
        if hi < lo as isize {
            None
        } else {
            Some((lo, hi as usize))
        }
    }

    /// Node nearest to `t` (ties to the left).
    pub fn nearest_node(&self, t: f64) -> usize {
        let x = (t - self.t_start) / self.dt();
        let k = (x - 0.5).ceil().max(0.0) as usize;
        k.min(self.cells())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl GridPath {
    /// Path from cumulative sums of cell increments, starting at 0.
    pub fn from_increments(grid: TimeGrid, increments: &[f64]) -> Self {
        assert_eq!(increments.len(), grid.cells());
        let mut values = Vec::with_capacity(grid.nodes());
        let mut acc = 0.0;
        values.push(0.0);
        for &d in increments {
            acc += d;
            values.push(acc);
        }
        GridPath { grid, values }
    }

    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Keep every `2^(L - level)`-th node.
    pub fn restrict(&self, level: u32) -> Result<GridPath, PathError> {
        let l = self.grid.level;
        if level > l {
            return Err(PathError::RefineBelow { current: l, target: level });
        }
        let step = 1usize << (l - level);
        Ok(GridPath {
            grid: self.grid.with_level(level)?,
            values: self.values.iter().step_by(step).copied().collect(),
        })
    }

    pub fn shifted(&self, c: f64) -> GridPath {
        GridPath {
            grid: self.grid,
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }
}

/// Strict local maximum of a path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxRecord {
    pub index: usize,
    pub time: f64,
    pub value: f64,
    pub robustness: usize,
}

/// Fill `out` with `grid.cells()` independent N(0, Δt) increments.
pub fn sample_increments<R: Rng + ?Sized>(grid: &TimeGrid, rng: &mut R, out: &mut Vec<f64>) {
    let sd = grid.dt().sqrt();
    out.clear();
    out.extend((0..grid.cells()).map(|_| sd * rng.sample::<f64, _>(StandardNormal)));
}

pub fn sample_path<R: Rng + ?Sized>(grid: &TimeGrid, rng: &mut R) -> GridPath {
    let mut inc = Vec::new();
    sample_increments(grid, rng, &mut inc);
    GridPath::from_increments(*grid, &inc)
}

/// Insert Brownian-bridge midpoints until the path reaches `target_level`.
///
/// Each new midpoint is drawn from N((left + right)/2, Δt_fine/2), where
/// Δt_fine is the cell width after the split.
pub fn refine_bridge<R: Rng + ?Sized>(
    path: &GridPath,
    target_level: u32,
    rng: &mut R,
) -> Result<GridPath, PathError> {
    let current = path.grid.level;
    if target_level < current {
        return Err(PathError::RefineBelow { current, target: target_level });
    }
    let mut grid = path.grid;
    let mut values = path.values.clone();
    while grid.level < target_level {
        grid = grid.with_level(grid.level + 1)?;
        let sd = (grid.dt() / 2.0).sqrt();
        let mut next = Vec::with_capacity(grid.nodes());
        for w in values.windows(2) {
            next.push(w[0]);
            let z: f64 = rng.sample(StandardNormal);
            next.push(0.5 * (w[0] + w[1]) + sd * z);
        }
        next.push(*values.last().expect("nonempty"));
        values = next;
    }
    Ok(GridPath { grid, values })
}

/// Robustness of every node: the largest `r` such that the node strictly
/// exceeds all nodes within `r` cells on both sides, with both sides fully
/// inside the window. Zero when the node is not a strict local maximum.
///
/// Runs in O(n) with two monotone stacks.
pub fn robustness_profile(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut left = vec![0usize; n];
    let mut right = vec![0usize; n];
    let mut stack: Vec<usize> = Vec::with_capacity(64);
    for i in 0..n {
        while let Some(&j) = stack.last() {
            if values[j] < values[i] {
                stack.pop();
            } else {
                break;
            }
        }
        left[i] = match stack.last() {
            Some(&j) => i - j - 1,
            None => i,
        };
        stack.push(i);
    }
    stack.clear();
    for i in (0..n).rev() {
        while let Some(&j) = stack.last() {
            if values[j] < values[i] {
                stack.pop();
            } else {
                break;
            }
        }
        right[i] = match stack.last() {
            Some(&j) => j - i - 1,
            None => n - 1 - i,
        };
        stack.push(i);
    }
    left.iter().zip(&right).map(|(&l, &r)| l.min(r)).collect()
}

fn check_w(grid: &TimeGrid, w: usize) -> Result<(), PathError> {
    let max = (grid.cells() / 2).max(1);
    if w == 0 || w > max {
        return Err(PathError::Robustness { w, max });
    }
    Ok(())
}

/// Strict local maxima with robustness at least `w`, sorted by time.
pub fn detect_maxima(path: &GridPath, w: usize) -> Result<Vec<MaxRecord>, PathError> {
    check_w(&path.grid, w)?;
    let rob = robustness_profile(&path.values);
    Ok(rob
        .iter()
        .enumerate()
        .filter(|(_, &r)| r >= w)
        .map(|(i, &r)| MaxRecord {
            index: i,
            time: path.grid.node_time(i),
            value: path.values[i],
            robustness: r,
        })
        .collect())
}

/// A local maximum that may be a flat run of equal node values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauMax {
    pub first: usize,
    pub last: usize,
    pub value: f64,
    pub robustness: usize,
}

impl PlateauMax {
    /// Node distance from `i` to the run `first..=last`.
    pub fn distance(&self, i: usize) -> usize {
        if i < self.first {
            self.first - i
        } else if i > self.last {
            i - self.last
        } else {
            0
        }
    }
}

/// Maxima of a path that is constant on stretches (a censored path).
///
/// Runs of exactly equal consecutive values are treated as one point; the
/// run is a maximum when the nodes outside it within `w` cells on each side
/// are strictly lower. Robustness is measured in cells from the run's ends.
pub fn detect_plateau_maxima(path: &GridPath, w: usize) -> Result<Vec<PlateauMax>, PathError> {
    check_w(&path.grid, w)?;
    Ok(plateau_maxima(&path.values, w))
}

/// [`detect_plateau_maxima`] on raw node values, any `w >= 1`.
pub fn plateau_maxima(v: &[f64], w: usize) -> Vec<PlateauMax> {
    let w = w.max(1);
    let n = v.len();
    // collapse runs
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[j + 1] == v[i] {
            j += 1;
        }
        runs.push((i, j));
        i = j + 1;
    }
    let rv: Vec<f64> = runs.iter().map(|&(a, _)| v[a]).collect();
    let m = rv.len();
    // nearest run to the left / right with value >= this run's value
    let mut left = vec![None; m];
    let mut right = vec![None; m];
    let mut stack: Vec<usize> = Vec::new();
    for k in 0..m {
        while let Some(&j) = stack.last() {
            if rv[j] < rv[k] {
                stack.pop();
            } else {
                break;
            }
        }
        left[k] = stack.last().copied();
        stack.push(k);
    }
    stack.clear();
    for k in (0..m).rev() {
        while let Some(&j) = stack.last() {
            if rv[j] < rv[k] {
                stack.pop();
            } else {
                break;
            }
        }
        right[k] = stack.last().copied();
        stack.push(k);
    }
    let mut out = Vec::new();
    for k in 0..m {
        let (a, b) = runs[k];
        let l = match left[k] {
            Some(j) => a - runs[j].1 - 1,
            None => a,
        };
        let r = match right[k] {
            Some(j) => runs[j].0 - b - 1,
            None => n - 1 - b,
        };
        let rob = l.min(r);
        if rob >= w {
            out.push(PlateauMax {
                first: a,
                last: b,
                value: rv[k],
                robustness: rob,
            });
        }
    }
    out
}

/// Outcome of an interval argmax.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalArgmax {
    pub record: MaxRecord,
    /// Another node in the interval attains the same value.
    pub tied: bool,
}

/// Argmax of node values over the nodes in `[a, b]`, leftmost on ties.
///
/// Returns `None` when the maximum sits on the first or last node of the
/// interval. Robustness is the distance to the nearer end of the interval.
pub fn argmax_on_interval(path: &GridPath, a: f64, b: f64) -> Result<Option<IntervalArgmax>, PathError> {
    let g = &path.grid;
    let dt = g.dt();
    let slack = 1e-9 * dt;
    if a < g.t_start() - slack || b > g.t_end() + slack || b - a < 2.0 * dt - slack {
        return Err(PathError::Interval { a, b });
    }
    let (lo, hi) = g.node_range(a, b).ok_or(PathError::Interval { a, b })?;
    Ok(argmax_nodes(&path.values, lo, hi).map(|(i, tied)| IntervalArgmax {
        record: MaxRecord {
            index: i,
            time: g.node_time(i),
            value: path.values[i],
            robustness: (i - lo).min(hi - i),
        },
        tied,
    }))
}

/// Argmax over `values[lo..=hi]`: `(index, tied)`, `None` at an endpoint.
pub fn argmax_nodes(values: &[f64], lo: usize, hi: usize) -> Option<(usize, bool)> {
    let mut best = lo;
    let mut tied = false;
    for i in lo + 1..=hi {
        if values[i] > values[best] {
            best = i;
            tied = false;
        } else if values[i] == values[best] {
            tied = true;
        }
    }
    if best == lo || best == hi {
        None
    } else {
        Some((best, tied))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn path_of(values: &[f64]) -> GridPath {
        let level = (values.len() - 1).trailing_zeros();
        GridPath {
            grid: TimeGrid::unit(level),
            values: values.to_vec(),
        }
    }

    #[test]
    fn grid_rejects_bad_window() {
        assert!(TimeGrid::new(1.0, 1.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 40).is_err());
        let g = TimeGrid::new(-1.0, 1.0, 3).unwrap();
        assert_eq!(g.nodes(), 9);
        assert_eq!(g.node_time(8), 1.0);
        assert_eq!(g.node_time(4), 0.0);
    }

    #[test]
    fn level_zero_has_two_nodes() {
        let g = TimeGrid::unit(0);
        let p = sample_path(&g, &mut rng::stream(1, rng::tag::PATH, 0));
        assert_eq!(p.values.len(), 2);
        assert_eq!(p.values[0], 0.0);
    }

    #[test]
    fn same_stream_same_path() {
        let g = TimeGrid::unit(6);
        let a = sample_path(&g, &mut rng::stream(5, rng::tag::PATH, 9));
        let b = sample_path(&g, &mut rng::stream(5, rng::tag::PATH, 9));
        assert_eq!(a, b);
    }

    #[test]
    fn refine_to_same_level_is_identity() {
        let g = TimeGrid::unit(4);
        let p = sample_path(&g, &mut rng::stream(2, rng::tag::PATH, 0));
        let q = refine_bridge(&p, 4, &mut rng::stream(2, rng::tag::REFINE, 0)).unwrap();
        assert_eq!(p, q);
        assert!(refine_bridge(&p, 3, &mut rng::stream(2, rng::tag::REFINE, 0)).is_err());
    }

    #[test]
    fn refine_keeps_coarse_nodes() {
        let g = TimeGrid::unit(4);
        let p = sample_path(&g, &mut rng::stream(3, rng::tag::PATH, 0));
        let q = refine_bridge(&p, 10, &mut rng::stream(3, rng::tag::REFINE, 0)).unwrap();
        assert_eq!(q.values.len(), 1025);
        assert_eq!(q.restrict(4).unwrap(), p);
    }

    #[test]
    fn monotone_path_has_no_maxima() {
        let p = path_of(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(detect_maxima(&p, 1).unwrap().is_empty());
    }

    #[test]
    fn tent_and_tie() {
        let p = path_of(&[0.0, 1.0, 0.0]);
        let m = detect_maxima(&p, 1).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].index, 1);
        assert_eq!(m[0].time, 0.5);
        assert_eq!(m[0].robustness, 1);
        // four values are not a dyadic grid; check the profile directly
        assert_eq!(robustness_profile(&[0.0, 1.0, 1.0, 0.0]), vec![0, 0, 0, 0]);
    }

    #[test]
    fn robustness_counts_dominated_neighbours() {
        let v = [0.0, 1.0, 0.5, 3.0, 2.0, 2.5, 1.0, 0.2, 0.1];
        let r = robustness_profile(&v);
        assert_eq!(r, vec![0, 1, 0, 3, 0, 1, 0, 0, 0]);
        let p = path_of(&v);
        let m: Vec<usize> = detect_maxima(&p, 2).unwrap().iter().map(|m| m.index).collect();
        assert_eq!(m, vec![3]);
        assert!(detect_maxima(&p, 0).is_err());
        assert!(detect_maxima(&p, 5).is_err());
    }

    #[test]
    fn plateau_maxima() {
        let v = [0.0, 1.0, 2.0, 2.0, 2.0, 1.0, 1.5, 1.5, 0.0];
        let p = path_of(&v);
        let m = detect_plateau_maxima(&p, 1).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].first, m[0].last, m[0].robustness), (2, 4, 2));
        assert_eq!((m[1].first, m[1].last, m[1].robustness), (6, 7, 1));
        assert_eq!(m[1].distance(9), 2);
        assert_eq!(m[1].distance(7), 0);
    }

    #[test]
    fn interval_argmax_rules() {
        let p = path_of(&[0.0, 2.0, 1.0, 0.5, 0.0]);
        let r = argmax_on_interval(&p, 0.0, 0.5).unwrap().unwrap();
        assert_eq!(r.record.index, 1);
        assert!(!r.tied);
        let dec = path_of(&[4.0, 3.0, 2.0, 1.0, 0.0]);
        assert!(argmax_on_interval(&dec, 0.0, 1.0).unwrap().is_none());
        assert!(argmax_on_interval(&dec, 0.0, 1.5).is_err());
        assert!(argmax_on_interval(&dec, 0.0, 0.25).is_err());
        let tie = path_of(&[0.0, 2.0, 1.0, 2.0, 0.0]);
        let r = argmax_on_interval(&tie, 0.0, 1.0).unwrap().unwrap();
        assert_eq!(r.record.index, 1);
        assert!(r.tied);
    }

    #[test]
    fn node_range_and_nearest() {
        let g = TimeGrid::unit(3);
        assert_eq!(g.node_range(0.1, 0.6), Some((1, 4)));
        assert_eq!(g.node_range(0.25, 0.5), Some((2, 4)));
        assert_eq!(g.nearest_node(0.0625), 0);
        assert_eq!(g.nearest_node(0.07), 1);
        assert_eq!(g.nearest_node(2.0), 8);
    }
}
