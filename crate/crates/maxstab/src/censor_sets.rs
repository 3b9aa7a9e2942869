//! Censoring sets with exact interval measure.
//!
//! Every set lives in a window `[a, b]` and answers `measure(t, u)`, the
//! Lebesgue measure of `E ∩ [t, u]`, from a closed form or a finite sum.
//! Nothing is sampled at query time, which is what keeps the coupled path
//! law exact at grid nodes.
//!
//! Also here: the density-rate certifier, the `g`-integral classifier, the
//! Cantor builder driven by a target deficit rate, and subordinator ranges.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

pub const MAX_CANTOR_DEPTH: usize = 40;

#[derive(Debug, Error)]
pub enum SetError {
    #[error("invalid window [{0}, {1}]")]
    Window(f64, f64),
    #[error("query [{t}, {u}] leaves the window [{a}, {b}]")]
    OutsideWindow { t: f64, u: f64, a: f64, b: f64 },
    #[error("intervals must be sorted, disjoint and inside the window: {0}")]
    Intervals(String),
    #[error("cantor gaps must lie in [0, 1) and depth must be at most {MAX_CANTOR_DEPTH}: {0}")]
    Cantor(String),
    #[error("subordinator parameters: {0}")]
    Subordinator(String),
    #[error("jump list must be sorted by time with positive sizes: {0}")]
    Jumps(String),
    #[error("rate function: {0}")]
    Rate(String),
    #[error("certification needs at least one base point and 8 scales, got {points} points and {scales} scales")]
    CertifyInput { points: usize, scales: usize },
    #[error("certification failed: exponent {estimate:.3} outside [{lo:.3}, {hi:.3}] for alpha = {alpha}")]
    Certification {
        alpha: f64,
        estimate: f64,
        lo: f64,
        hi: f64,
        report: Box<RateReport>,
    },
    #[error("phi bound needs C' > C > 0 (got C = {0}, C' = {1})")]
    PhiConstants(f64, f64),
    #[error("set has zero measure; no base points can be drawn")]
    EmptySet,
}

// ---------------------------------------------------------------------------
// descriptors

/// Lévy tail of a subordinator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Tail {
    /// No jumps: pure drift.
    None,
    /// `Π̄(x) = scale · x^(-index)`, `0 < index < 1`.
    Stable { index: f64, scale: f64 },
    /// `Π̄(x) = x^(-1) (ln 1/x)^(-gamma) - Π̄(x0)` for `x < x0`, zero above.
    LogTail { gamma: f64, x0: f64 },
}

/// Serializable description of a set: kind tag plus everything needed to
/// rebuild it bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetDescriptor {
    Elementary {
        window: [f64; 2],
        intervals: Vec<[f64; 2]>,
    },
    Cantor {
        window: [f64; 2],
        /// Relative gap fraction removed from the middle of every interval
        /// at each level.
        gaps: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
    },
    SubordinatorRange {
        drift: f64,
        tail: Tail,
        x_min: f64,
        horizon: f64,
        /// `[time, size]` pairs sorted by time.
        jumps: Vec<[f64; 2]>,
    },
    Complement {
        window: [f64; 2],
        of: Box<SetDescriptor>,
    },
}

// ---------------------------------------------------------------------------
// concrete kinds

#[derive(Clone, Debug, PartialEq)]
pub struct ElementarySet {
    window: (f64, f64),
    intervals: Vec<(f64, f64)>,
}

impl ElementarySet {
    pub fn new(window: (f64, f64), intervals: Vec<(f64, f64)>) -> Result<Self, SetError> {
        check_window(window)?;
        for (i, &(l, r)) in intervals.iter().enumerate() {
            if !(l <= r) || l < window.0 || r > window.1 {
                return Err(SetError::Intervals(format!("interval {i} = [{l}, {r}]")));
            }
            if i > 0 && intervals[i - 1].1 >= l {
                return Err(SetError::Intervals(format!("intervals {} and {i} overlap or are unsorted", i - 1)));
            }
        }
        Ok(ElementarySet { window, intervals })
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    fn cumulative(&self, x: f64) -> f64 {
        let mut s = 0.0;
        for &(l, r) in &self.intervals {
            if x <= l {
                break;
            }
            s += x.min(r) - l;
        }
        s
    }

    fn overlap(&self, t: f64, u: f64) -> f64 {
        self.intervals
            .iter()
            .map(|&(l, r)| (u.min(r) - t.max(l)).max(0.0))
            .sum()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|&(l, r)| l <= t && t <= r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CantorSet {
    window: (f64, f64),
    gaps: Vec<f64>,
    /// `lens[k]`: length of a level-k interval.
    lens: Vec<f64>,
    /// `mass[k]`: measure of E inside one level-k interval.
    mass: Vec<f64>,
    alpha: Option<f64>,
}

impl CantorSet {
    pub fn new(window: (f64, f64), gaps: Vec<f64>, alpha: Option<f64>) -> Result<Self, SetError> {
        check_window(window)?;
        if gaps.len() > MAX_CANTOR_DEPTH {
            return Err(SetError::Cantor(format!("depth {}", gaps.len())));
        }
        if let Some(k) = gaps.iter().position(|r| !(0.0..1.0).contains(r)) {
            return Err(SetError::Cantor(format!("gap {} = {}", k + 1, gaps[k])));
        }
        let width = window.1 - window.0;
        let mut lens = vec![width];
        for r in &gaps {
            let l = *lens.last().unwrap();
            lens.push(l * (1.0 - r) / 2.0);
        }
        let total = width * gaps.iter().map(|r| 1.0 - r).product::<f64>();
        let mass: Vec<f64> = (0..=gaps.len()).map(|k| total / (1u64 << k) as f64).collect();
        Ok(CantorSet {
            window,
            gaps,
            lens,
            mass,
            alpha,
        })
    }

    pub fn depth(&self) -> usize {
        self.gaps.len()
    }
    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }
    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    fn cumulative(&self, x: f64) -> f64 {
        let (a, b) = self.window;
        if x <= a {
            return 0.0;
        }
        if x >= b {
            return self.mass[0];
        }
        let mut rel = x - a;
        let mut acc = 0.0;
        for k in 1..=self.depth() {
            let len = self.lens[k - 1];
            let child = self.lens[k];
            if rel <= child {
                // left child
            } else if rel < len - child {
                return acc + self.mass[k];
            } else {
                acc += self.mass[k];
                rel -= len - child;
            }
        }
        let k = self.depth();
        acc + self.mass[k] * (rel / self.lens[k]).clamp(0.0, 1.0)
    }

    pub fn contains(&self, t: f64) -> bool {
        let (a, b) = self.window;
        if t < a || t > b {
            return false;
        }
        let mut rel = t - a;
        for k in 1..=self.depth() {
            let len = self.lens[k - 1];
            let child = self.lens[k];
            if rel <= child {
            } else if rel < len - child {
                return false;
            } else {
                rel -= len - child;
            }
        }
        true
    }

    /// Uniform draw from the depth-K set (each level-K interval equally
    /// likely, uniform inside it).
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut x = self.window.0;
        for k in 1..=self.depth() {
            if rng.random::<bool>() {
                x += self.lens[k - 1] - self.lens[k];
            }
        }
        x + rng.random::<f64>() * self.lens[self.depth()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubordinatorRangeSet {
    drift: f64,
    tail: Tail,
    x_min: f64,
    horizon: f64,
    jumps: Vec<(f64, f64)>,
    gap_left: Vec<f64>,
    gap_right: Vec<f64>,
    /// `prefix[j]`: total size of the first j jumps.
    prefix: Vec<f64>,
    end: f64,
}

impl SubordinatorRangeSet {
    pub fn new(drift: f64, tail: Tail, x_min: f64, horizon: f64, jumps: Vec<(f64, f64)>) -> Result<Self, SetError> {
        validate_subordinator(drift, &tail, x_min)?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(SetError::Subordinator(format!("horizon {horizon}")));
        }
        for (i, &(t, s)) in jumps.iter().enumerate() {
            if !(s > 0.0) || !(0.0..=horizon).contains(&t) || (i > 0 && jumps[i - 1].0 > t) {
                return Err(SetError::Jumps(format!("jump {i} = ({t}, {s})")));
            }
        }
        let mut prefix = vec![0.0];
        let mut gap_left = Vec::with_capacity(jumps.len());
        let mut gap_right = Vec::with_capacity(jumps.len());
        for &(t, s) in &jumps {
            let before = *prefix.last().unwrap();
            let l = drift * t + before;
            gap_left.push(l);
            gap_right.push(l + s);
            prefix.push(before + s);
        }
        let end = drift * horizon + prefix.last().unwrap();
        Ok(SubordinatorRangeSet {
            drift,
            tail,
            x_min,
            horizon,
            jumps,
            gap_left,
            gap_right,
            prefix,
            end,
        })
    }

    /// `X(T)`: right end of the range.
    pub fn end(&self) -> f64 {
        self.end
    }
    pub fn jumps(&self) -> &[(f64, f64)] {
        &self.jumps
    }
    pub fn drift(&self) -> f64 {
        self.drift
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn cumulative(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let x = x.min(self.end);
        let idx = self.gap_right.partition_point(|&r| r <= x);
        let part = if idx < self.gap_left.len() {
            (x - self.gap_left[idx]).max(0.0)
        } else {
            0.0
        };
        x - self.prefix[idx] - part
    }

    pub fn contains(&self, t: f64) -> bool {
        if t < 0.0 || t > self.end {
            return false;
        }
        let idx = self.gap_right.partition_point(|&r| r <= t);
        !(idx < self.gap_left.len() && t > self.gap_left[idx])
    }
}

fn check_window(w: (f64, f64)) -> Result<(), SetError> {
    if w.0.is_finite() && w.1.is_finite() && w.0 < w.1 {
        Ok(())
    } else {
        Err(SetError::Window(w.0, w.1))
    }
}

fn validate_subordinator(drift: f64, tail: &Tail, x_min: f64) -> Result<(), SetError> {
    if !(drift > 0.0 && drift.is_finite()) {
        return Err(SetError::Subordinator(format!("drift must be positive, got {drift}")));
    }
    if !(x_min > 0.0) {
        return Err(SetError::Subordinator(format!("x_min must be positive, got {x_min}")));
    }
    match *tail {
        Tail::None => Ok(()),
        Tail::Stable { index, scale } => {
            if !(index > 0.0 && index < 1.0) || !(scale >= 0.0) {
                Err(SetError::Subordinator(format!("stable index {index}, scale {scale}")))
            } else {
                Ok(())
            }
        }
        Tail::LogTail { gamma, x0 } => {
            if !(gamma > 1.0) {
                Err(SetError::Subordinator(format!("log tail needs gamma > 1, got {gamma}")))
            } else if !(x0 > x_min && x0 <= (-gamma).exp() * (1.0 + 1e-12)) {
                Err(SetError::Subordinator(format!(
                    "log tail needs x_min < x0 <= exp(-gamma) = {} so that the tail is monotone, got x0 = {x0}",
                    (-gamma).exp()
                )))
            } else {
                Ok(())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// the set interface

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Elementary(ElementarySet),
    Cantor(CantorSet),
    Subordinator(SubordinatorRangeSet),
    Complement(Box<CensorSet>),
}

/// A measurable set restricted to a window, with exact interval measure.
#[derive(Clone, Debug, PartialEq)]
pub struct CensorSet {
    window: (f64, f64),
    kind: Kind,
}

impl CensorSet {
    pub fn from_descriptor(d: &SetDescriptor) -> Result<Self, SetError> {
        match d {
            SetDescriptor::Elementary { window, intervals } => Ok(CensorSet {
                window: (window[0], window[1]),
                kind: Kind::Elementary(ElementarySet::new(
                    (window[0], window[1]),
                    intervals.iter().map(|p| (p[0], p[1])).collect(),
                )?),
            }),
            SetDescriptor::Cantor { window, gaps, alpha } => Ok(CensorSet {
                window: (window[0], window[1]),
                kind: Kind::Cantor(CantorSet::new((window[0], window[1]), gaps.clone(), *alpha)?),
            }),
            SetDescriptor::SubordinatorRange {
                drift,
                tail,
                x_min,
                horizon,
                jumps,
            } => {
                let s = SubordinatorRangeSet::new(
                    *drift,
                    tail.clone(),
                    *x_min,
                    *horizon,
                    jumps.iter().map(|p| (p[0], p[1])).collect(),
                )?;
                Ok(CensorSet {
                    window: (0.0, s.end()),
                    kind: Kind::Subordinator(s),
                })
            }
            SetDescriptor::Complement { window, of } => {
                let inner = CensorSet::from_descriptor(of)?;
                let w = (window[0], window[1]);
                check_window(w)?;
                if w.0 < inner.window.0 || w.1 > inner.window.1 {
                    return Err(SetError::Window(w.0, w.1));
                }
                Ok(CensorSet {
                    window: w,
                    kind: Kind::Complement(Box::new(inner)),
                })
            }
        }
    }

    pub fn descriptor(&self) -> SetDescriptor {
        let window = [self.window.0, self.window.1];
        match &self.kind {
            Kind::Elementary(e) => SetDescriptor::Elementary {
                window,
                intervals: e.intervals.iter().map(|&(l, r)| [l, r]).collect(),
            },
            Kind::Cantor(c) => SetDescriptor::Cantor {
                window,
                gaps: c.gaps.clone(),
                alpha: c.alpha,
            },
            Kind::Subordinator(s) => SetDescriptor::SubordinatorRange {
                drift: s.drift,
                tail: s.tail.clone(),
                x_min: s.x_min,
                horizon: s.horizon,
                jumps: s.jumps.iter().map(|&(t, x)| [t, x]).collect(),
            },
            Kind::Complement(inner) => SetDescriptor::Complement {
                window,
                of: Box::new(inner.descriptor()),
            },
        }
    }

    pub fn elementary(window: (f64, f64), intervals: Vec<(f64, f64)>) -> Result<Self, SetError> {
        Ok(CensorSet {
            window,
            kind: Kind::Elementary(ElementarySet::new(window, intervals)?),
        })
    }

    pub fn empty(window: (f64, f64)) -> Result<Self, SetError> {
        CensorSet::elementary(window, vec![])
    }

    pub fn full(window: (f64, f64)) -> Result<Self, SetError> {
        CensorSet::elementary(window, vec![window])
    }

    pub fn cantor(window: (f64, f64), gaps: Vec<f64>) -> Result<Self, SetError> {
        Ok(CensorSet {
            window,
            kind: Kind::Cantor(CantorSet::new(window, gaps, None)?),
        })
    }

    /// Middle-thirds Cantor set at the given depth.
    pub fn middle_third(window: (f64, f64), depth: usize) -> Result<Self, SetError> {
        CensorSet::cantor(window, vec![1.0 / 3.0; depth])
    }

    /// Fat Cantor set: level k removes 2^(k-1) middle gaps of length
    /// 4^(-k) times the window length; the limit has half the window's measure.
    pub fn fat_cantor(window: (f64, f64), depth: usize) -> Result<Self, SetError> {
        let mut gaps = Vec::with_capacity(depth);
        let mut len = 1.0;
        for k in 1..=depth {
            let r = 0.25f64.powi(k as i32) / len;
            gaps.push(r);
            len = len * (1.0 - r) / 2.0;
        }
        CensorSet::cantor(window, gaps)
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            Kind::Elementary(_) => "elementary",
            Kind::Cantor(_) => "cantor",
            Kind::Subordinator(_) => "subordinator_range",
            Kind::Complement(_) => "complement",
        }
    }

    pub fn as_cantor(&self) -> Option<&CantorSet> {
        match &self.kind {
            Kind::Cantor(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_subordinator(&self) -> Option<&SubordinatorRangeSet> {
        match &self.kind {
            Kind::Subordinator(s) => Some(s),
            _ => None,
        }
    }

    /// Measure of `E ∩ [window start, x]`, for `x` clamped into the window.
    pub fn cumulative(&self, x: f64) -> f64 {
        let x = x.clamp(self.window.0, self.window.1);
        match &self.kind {
            Kind::Elementary(e) => e.cumulative(x),
            Kind::Cantor(c) => c.cumulative(x),
            Kind::Subordinator(s) => s.cumulative(x),
            Kind::Complement(inner) => {
                let a = self.window.0;
                (x - a) - inner.measure_clamped(a, x)
            }
        }
    }

    fn measure_clamped(&self, t: f64, u: f64) -> f64 {
        let width = u - t;
        let m = match &self.kind {
            Kind::Elementary(e) => e.overlap(t, u),
            Kind::Complement(inner) => width - inner.measure_clamped(t, u),
            _ => self.cumulative(u) - self.cumulative(t),
        };
        m.clamp(0.0, width.max(0.0))
    }

    /// Exact Lebesgue measure of `E ∩ [t, u]`; the endpoints are swapped
    /// when `t > u`.
    pub fn measure(&self, t: f64, u: f64) -> Result<f64, SetError> {
        let (t, u) = if t <= u { (t, u) } else { (u, t) };
        let (a, b) = self.window;
        let slack = 1e-12 * (b - a);
        if t < a - slack || u > b + slack {
            return Err(SetError::OutsideWindow { t, u, a, b });
        }
        Ok(self.measure_clamped(t.max(a), u.min(b)))
    }

    /// Measure of the whole window.
    pub fn total_measure(&self) -> f64 {
        self.measure_clamped(self.window.0, self.window.1)
    }

    /// Complement within the window.
    pub fn complement(&self) -> CensorSet {
        CensorSet {
            window: self.window,
            kind: Kind::Complement(Box::new(self.clone())),
        }
    }

    /// Same set, viewed through a smaller window.
    pub fn restrict_window(&self, window: (f64, f64)) -> Result<CensorSet, SetError> {
        check_window(window)?;
        if window.0 < self.window.0 || window.1 > self.window.1 {
            return Err(SetError::Window(window.0, window.1));
        }
        // complement of complement keeps exact measures and carries the window
        let inner = CensorSet {
            window: self.window,
            kind: Kind::Complement(Box::new(self.clone())),
        };
        Ok(CensorSet {
            window,
            kind: Kind::Complement(Box::new(inner)),
        })
    }

    /// Membership at the construction depth (closed sets include endpoints).
    pub fn contains(&self, t: f64) -> bool {
        if t < self.window.0 || t > self.window.1 {
            return false;
        }
        match &self.kind {
            Kind::Elementary(e) => e.contains(t),
            Kind::Cantor(c) => c.contains(t),
            Kind::Subordinator(s) => s.contains(t),
            Kind::Complement(inner) => !inner.contains(t),
        }
    }
}

/// Draw `n` base points from E: exact tree descent for Cantor sets,
/// rejection from the window otherwise.
pub fn sample_points_in<R: Rng + ?Sized>(set: &CensorSet, n: usize, rng: &mut R) -> Result<Vec<f64>, SetError> {
    if let Some(c) = set.as_cantor() {
        if c.mass[0] <= 0.0 {
            return Err(SetError::EmptySet);
        }
        return Ok((0..n).map(|_| c.sample_point(rng)).collect());
    }
    let (a, b) = set.window();
    if set.total_measure() <= 0.0 {
        return Err(SetError::EmptySet);
    }
    let mut out = Vec::with_capacity(n);
    let mut tries = 0u64;
    while out.len() < n {
        tries += 1;
        if tries > 1_000_000 + 1000 * n as u64 {
            return Err(SetError::EmptySet);
        }
        let t = a + (b - a) * rng.random::<f64>();
        if set.contains(t) {
            out.push(t);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// rate functions and the g-integral

/// Candidate rate function `g` in the density criteria.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateFamily {
    /// `g(h) = (ln 1/h)^(-beta)`.
    LogPower { beta: f64 },
    /// `g(h) = h^p`.
    Power { p: f64 },
    /// Values of `g` at scales `h`, linearly interpolated in `ln h`.
    Tabulated { h: Vec<f64>, g: Vec<f64> },
}

impl RateFamily {
    pub fn eval(&self, h: f64) -> f64 {
        match self {
            RateFamily::LogPower { beta } => (1.0 / h).ln().powf(-beta),
            RateFamily::Power { p } => h.powf(*p),
            RateFamily::Tabulated { h: hs, g } => {
                // hs sorted decreasing after validation
                let lh = h.ln();
                let mut pairs: Vec<(f64, f64)> = hs.iter().zip(g).map(|(&a, &b)| (a.ln(), b)).collect();
                pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
                if lh <= pairs[0].0 {
                    return pairs[0].1;
                }
                for w in pairs.windows(2) {
                    if lh <= w[1].0 {
                        let f = (lh - w[0].0) / (w[1].0 - w[0].0);
                        return w[0].1 + f * (w[1].1 - w[0].1);
                    }
                }
                pairs.last().unwrap().1
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IntegralClass {
    Converges,
    Diverges,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegralReport {
    pub class: IntegralClass,
    /// `∫ g(h) dh/h` over the probed range, when computed numerically.
    pub partial: Option<f64>,
    /// Upper bound on the remaining tail, when one exists.
    pub tail_bound: Option<f64>,
}

/// Does `∫_{0+} g(h) dh/h` converge?
///
/// Closed form for the two parametric families. For tabulated `g`: the
/// partial integral over the tabulated range plus a tail bound from the
/// local exponent `β(h) = -d ln g / d ln ln(1/h)` at the three smallest
/// scales; all above 1.1 gives CONVERGES, all below 0.9 gives DIVERGES.
pub fn g_integral_classify(g: &RateFamily, h_floor: f64) -> Result<IntegralReport, SetError> {
    match g {
        RateFamily::LogPower { beta } => {
            if !(*beta >= 0.0) {
                return Err(SetError::Rate(format!("(ln 1/h)^(-beta) is not nondecreasing for beta = {beta}")));
            }
            let class = if *beta > 1.0 {
                IntegralClass::Converges
            } else {
                IntegralClass::Diverges
            };
            Ok(IntegralReport {
                class,
                partial: None,
                tail_bound: None,
            })
        }
        RateFamily::Power { p } => {
            if !(*p >= 0.0) {
                return Err(SetError::Rate(format!("h^p is not nondecreasing for p = {p}")));
            }
            let class = if *p > 0.0 {
                IntegralClass::Converges
            } else {
                IntegralClass::Diverges
            };
            Ok(IntegralReport {
                class,
                partial: None,
                tail_bound: None,
            })
        }
        RateFamily::Tabulated { h, g } => {
            if h.len() != g.len() || h.len() < 3 {
                return Err(SetError::Rate("tabulated g needs at least 3 matching (h, g) pairs".into()));
            }
            let mut pts: Vec<(f64, f64)> = h.iter().copied().zip(g.iter().copied()).filter(|(x, _)| *x >= h_floor).collect();
            pts.sort_by(|a, b| b.0.total_cmp(&a.0));
            if pts.len() < 3 {
                return Err(SetError::Rate("fewer than 3 tabulated scales above h_floor".into()));
            }
            for (i, &(x, v)) in pts.iter().enumerate() {
                if !(x > 0.0 && x < 1.0 && v > 0.0) {
                    return Err(SetError::Rate(format!("g must be positive on (0, 1); entry h = {x}, g = {v}")));
                }
                if i > 0 && v > pts[i - 1].1 {
                    return Err(SetError::Rate(format!("g must be nondecreasing in h; fails at h = {x}")));
                }
            }
            let mut partial = 0.0;
            for w in pts.windows(2) {
                partial += 0.5 * (w[0].1 + w[1].1) * (w[0].0 / w[1].0).ln();
            }
            let n = pts.len();
            let local: Vec<f64> = pts[n - 3..]
                .windows(2)
                .map(|w| {
                    let (h0, g0) = w[0];
                    let (h1, g1) = w[1];
                    -(g1.ln() - g0.ln()) / ((1.0 / h1).ln().ln() - (1.0 / h0).ln().ln())
                })
                .collect();
            let lo = local.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = local.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (hl, gl) = pts[n - 1];
            let (class, tail_bound) = if lo > 1.1 {
                // g(h) <= g(hl) (ln(1/hl)/ln(1/h))^lo below hl
                let u = (1.0 / hl).ln();
                (IntegralClass::Converges, Some(gl * u / (lo - 1.0)))
            } else if hi < 0.9 {
                (IntegralClass::Diverges, None)
            } else {
                (IntegralClass::Inconclusive, None)
            };
            Ok(IntegralReport {
                class,
                partial: Some(partial),
                tail_bound,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// density profiles and certification

/// Deficits `|h| - E_{t,t+h}` at one base point, both signs of `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub t: f64,
    pub scales: Vec<f64>,
    pub deficit_plus: Vec<f64>,
    pub deficit_minus: Vec<f64>,
}

pub fn density_profile(set: &CensorSet, t: f64, scales: &[f64]) -> DensityProfile {
    let (a, b) = set.window();
    let mut plus = Vec::with_capacity(scales.len());
    let mut minus = Vec::with_capacity(scales.len());
    for &h in scales {
        // mass outside the window counts as missing
        let up = set.measure_clamped(t, (t + h).min(b));
        let down = set.measure_clamped((t - h).max(a), t);
        plus.push((h - up).clamp(0.0, h));
        minus.push((h - down).clamp(0.0, h));
    }
    DensityProfile {
        t,
        scales: scales.to_vec(),
        deficit_plus: plus,
        deficit_minus: minus,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RateVerdict {
    StableCriterionMet,
    UnstableCriterionMet,
    Gap,
}

impl std::fmt::Display for RateVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RateVerdict::StableCriterionMet => "STABLE-CRITERION-MET",
            RateVerdict::UnstableCriterionMet => "UNSTABLE-CRITERION-MET",
            RateVerdict::Gap => "GAP",
        })
    }
}

/// Slope limits used by the verdict: a ratio curve counts as bounded when it
/// grows no faster than `(ln 1/h)^0.5` across the probed scales, and as
/// bounded below when it decays no faster than `(ln 1/h)^-0.5`.
pub const BOUNDED_SLOPE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub scales: Vec<f64>,
    /// `-slope` of `ln median(min(δ+, δ-)/h)` against `ln ln(1/h)`;
    /// infinite when the deficits vanish.
    pub exponent: f64,
    /// Range of `median(min(δ+, δ-)/h) · (ln 1/h)^exponent` over the scales.
    pub band: (f64, f64),
    pub profiles: Vec<DensityProfile>,
    /// Median over points of `max(δ+, δ-)` divided by the test (i)
    /// denominator `h g² / ln ln(1/(√h g))`, per scale.
    pub curve_i: Vec<f64>,
    /// Same with the test (ii) denominator `h g²`.
    pub curve_ii: Vec<f64>,
    pub slope_i: f64,
    pub slope_ii: f64,
    pub integral: IntegralClass,
    pub verdict: RateVerdict,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Least-squares slope of `ys` against `xs`.
fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Slope of `ln y` against `ln ln(1/h)` over the scales where `y > 0`;
/// NaN with fewer than two such scales.
fn loglog_slope(scales: &[f64], ys: &[f64]) -> f64 {
    let (xs, ls): (Vec<f64>, Vec<f64>) = scales
        .iter()
        .zip(ys)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&h, &y)| ((1.0 / h).ln().ln(), y.ln()))
        .unzip();
    if xs.len() < 2 {
        f64::NAN
    } else {
        ls_slope(&xs, &ls)
    }
}

/// Probe the density deficits of `set` at `points` over `scales` and apply
/// both ratio tests with rate function `g`.
pub fn certify_rate(set: &CensorSet, points: &[f64], scales: &[f64], g: &RateFamily) -> Result<RateReport, SetError> {
    if points.is_empty() || scales.len() < 8 {
        return Err(SetError::CertifyInput {
            points: points.len(),
            scales: scales.len(),
        });
    }
    if let Some(&h) = scales.iter().find(|&&h| !(h > 0.0 && h < 1.0 / std::f64::consts::E)) {
        return Err(SetError::Rate(format!("scale {h} outside (0, 1/e)")));
    }
    let integral = g_integral_classify(g, scales.iter().copied().fold(f64::INFINITY, f64::min))?.class;
    let profiles: Vec<DensityProfile> = points.iter().map(|&t| density_profile(set, t, scales)).collect();
    let mut typical = Vec::with_capacity(scales.len());
    let mut curve_i = Vec::with_capacity(scales.len());
    let mut curve_ii = Vec::with_capacity(scales.len());
    for (j, &h) in scales.iter().enumerate() {
        let mut lo: Vec<f64> = profiles.iter().map(|p| p.deficit_plus[j].min(p.deficit_minus[j]) / h).collect();
        let mut hi: Vec<f64> = profiles.iter().map(|p| p.deficit_plus[j].max(p.deficit_minus[j]) / h).collect();
        typical.push(median(&mut lo));
        let worst = median(&mut hi);
        let gh = g.eval(h);
        let lnln = (1.0 / (h.sqrt() * gh)).ln().ln();
        curve_i.push(worst / (gh * gh / lnln.max(f64::MIN_POSITIVE)));
        curve_ii.push(worst / (gh * gh));
    }
    let slope = loglog_slope(scales, &typical);
    let exponent = if slope.is_nan() { f64::INFINITY } else { -slope };
    let band = if exponent.is_finite() {
        let cs: Vec<f64> = scales
            .iter()
            .zip(&typical)
            .filter(|(_, &y)| y > 0.0)
            .map(|(&h, &y)| y * (1.0 / h).ln().powf(exponent))
            .collect();
        (
            cs.iter().copied().fold(f64::INFINITY, f64::min),
            cs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    } else {
        (0.0, 0.0)
    };
    let slope_i = loglog_slope(scales, &curve_i);
    let slope_ii = loglog_slope(scales, &curve_ii);
    let all_zero = curve_i.iter().all(|&c| c == 0.0);
    let bounded_i = all_zero || slope_i <= BOUNDED_SLOPE;
    let bounded_below_ii = curve_ii.iter().all(|&c| c > 0.0) && slope_ii >= -BOUNDED_SLOPE;
    let verdict = match integral {
        IntegralClass::Converges if bounded_i => RateVerdict::StableCriterionMet,
        IntegralClass::Diverges if bounded_below_ii => RateVerdict::UnstableCriterionMet,
        _ => RateVerdict::Gap,
    };
    Ok(RateReport {
        scales: scales.to_vec(),
        exponent,
        band,
        profiles,
        curve_i,
        curve_ii,
        slope_i,
        slope_ii,
        integral,
        verdict,
    })
}

/// Dyadic scales `2^-k · width` for `k` in `k_lo..=k_hi`.
pub fn dyadic_scales(width: f64, k_lo: u32, k_hi: u32) -> Vec<f64> {
    (k_lo..=k_hi).map(|k| width * 0.5f64.powi(k as i32)).collect()
}

// ---------------------------------------------------------------------------
// building Cantor sets to a target rate

/// Target deficit profile `D(ℓ) = min(cap, constant · (ln 1/ℓ)^(-alpha))`
/// for the relative deficit of an interval of relative length `ℓ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CantorTarget {
    pub alpha: f64,
    pub constant: f64,
    pub cap: f64,
}

impl CantorTarget {
    /// Default constants. Rates with `alpha > 2` use a small constant so the
    /// set keeps most of its mass; `alpha <= 2` uses a large constant and a
    /// higher cap so the deficits are visible at desk-scale grid levels.
    pub fn for_alpha(alpha: f64) -> Self {
        if alpha > 2.0 {
            CantorTarget {
                alpha,
                constant: 0.1,
                cap: 0.2,
            }
        } else {
            CantorTarget {
                alpha,
                constant: 8.0,
                cap: 0.6,
            }
        }
    }

    /// Gap fractions for the given depth. Solves the fixed point between the
    /// interval lengths and the deficits they imply.
    pub fn gaps(&self, depth: usize) -> Vec<f64> {
        let mut lens: Vec<f64> = (0..=depth).map(|k| 0.5f64.powi(k as i32)).collect();
        let mut gaps = vec![0.0; depth];
        for _ in 0..50 {
            let mut d = vec![0.0; depth + 1];
            d[0] = self.cap;
            for k in 1..=depth {
                let v = if self.alpha.is_infinite() {
                    0.0
                } else {
                    (self.constant * (1.0 / lens[k]).ln().powf(-self.alpha)).min(self.cap)
                };
                d[k] = v.min(d[k - 1]);
            }
            if self.alpha.is_infinite() {
                d[0] = 0.0;
            }
            d[depth] = 0.0;
            for k in 1..=depth {
                d[k] = d[k].min(d[k - 1]);
            }
            for k in 1..=depth {
                gaps[k - 1] = (1.0 - (1.0 - d[k - 1]) / (1.0 - d[k])).max(0.0);
            }
            for k in 1..=depth {
                lens[k] = lens[k - 1] * (1.0 - gaps[k - 1]) / 2.0;
            }
        }
        gaps
    }
}

/// Allowed distance between the certified exponent and the target.
pub fn exponent_tolerance(alpha: f64) -> f64 {
    (alpha / 8.0).max(0.4)
}

pub const CERTIFY_POINTS: usize = 2000;
const CERTIFY_SEED: u64 = 0x00C4_4E70;

/// Scale range probed by [`build_cantor`]: `k = 10 ..= depth - 2`.
pub fn certify_scales_for_depth(width: f64, depth: usize) -> Vec<f64> {
    if depth < 12 {
        return Vec::new();
    }
    dyadic_scales(width, 10, depth as u32 - 2)
}

/// Nested-interval set whose deficits follow `h (ln 1/h)^(-alpha)`,
/// certified before it is returned.
pub fn build_cantor(alpha: f64, depth: usize, window: (f64, f64)) -> Result<(CensorSet, Option<RateReport>), SetError> {
    build_cantor_with(CantorTarget::for_alpha(alpha), depth, window)
}

pub fn build_cantor_with(target: CantorTarget, depth: usize, window: (f64, f64)) -> Result<(CensorSet, Option<RateReport>), SetError> {
    let alpha = target.alpha;
    if !(alpha > 0.0) {
        return Err(SetError::Cantor(format!("alpha must be positive, got {alpha}")));
    }
    if depth > MAX_CANTOR_DEPTH {
        return Err(SetError::Cantor(format!("depth {depth}")));
    }
    let gaps = target.gaps(depth);
    let set = CensorSet {
        window,
        kind: Kind::Cantor(CantorSet::new(window, gaps, alpha.is_finite().then_some(alpha))?),
    };
    if alpha.is_infinite() {
        return Ok((set, None));
    }
    let width = window.1 - window.0;
    let scales = certify_scales_for_depth(width, depth);
    let mut rng = rng::stream(CERTIFY_SEED, rng::tag::CERTIFY, depth as u64);
    let points = sample_points_in(&set, CERTIFY_POINTS, &mut rng)?;
    // deficits h (ln 1/h)^-alpha match h g^2 for this g
    let g = RateFamily::LogPower { beta: alpha / 2.0 };
    let report = certify_rate(&set, &points, &scales, &g)?;
    let tol = exponent_tolerance(alpha);
    let (lo, hi) = (alpha - tol, alpha + tol);
    if !(report.exponent >= lo && report.exponent <= hi) {
        return Err(SetError::Certification {
            alpha,
            estimate: report.exponent,
            lo,
            hi,
            report: Box::new(report),
        });
    }
    Ok((set, Some(report)))
}

// ---------------------------------------------------------------------------
// subordinator ranges

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PredictedLabel {
    Stable,
    Unstable,
    Gap,
}

/// Width of the band of log-tail exponents above 3 left unlabelled.
pub const LOG_TAIL_GAP: f64 = 0.5;

/// Label predicted from the tail alone.
///
/// Stable-index tails and log tails with `gamma >= 3 + LOG_TAIL_GAP` are
/// STABLE, log tails with `gamma <= 3` UNSTABLE, anything in between GAP.
pub fn predicted_label(tail: &Tail) -> PredictedLabel {
    match *tail {
        Tail::None | Tail::Stable { .. } => PredictedLabel::Stable,
        Tail::LogTail { gamma, .. } => {
            if gamma <= 3.0 {
                PredictedLabel::Unstable
            } else if gamma < 3.0 + LOG_TAIL_GAP {
                PredictedLabel::Gap
            } else {
                PredictedLabel::Stable
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubordinatorParams {
    pub drift: f64,
    pub tail: Tail,
    pub x_min: f64,
}

impl SubordinatorParams {
    fn log_tail_bar(gamma: f64, x: f64) -> f64 {
        1.0 / (x * (1.0 / x).ln().powf(gamma))
    }

    /// Rate of retained jumps (sizes above `x_min`) per unit time.
    pub fn jump_rate(&self) -> f64 {
        match self.tail {
            Tail::None => 0.0,
            Tail::Stable { index, scale } => scale * self.x_min.powf(-index),
            Tail::LogTail { gamma, x0 } => Self::log_tail_bar(gamma, self.x_min) - Self::log_tail_bar(gamma, x0),
        }
    }

    /// Expected total size of discarded jumps (below `x_min`) per unit time.
    /// This is the expected measure the range set gains from truncation.
    pub fn truncation_bias_rate(&self) -> f64 {
        match self.tail {
            Tail::None => 0.0,
            Tail::Stable { index, scale } => scale * index / (1.0 - index) * self.x_min.powf(1.0 - index),
            Tail::LogTail { gamma, .. } => {
                let l = (1.0 / self.x_min).ln();
                l.powf(1.0 - gamma) / (gamma - 1.0) - l.powf(-gamma)
            }
        }
    }

    fn sample_size<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.tail {
            Tail::None => unreachable!("no jumps to size"),
            Tail::Stable { index, .. } => {
                let u: f64 = 1.0 - rng.random::<f64>();
                self.x_min * u.powf(-1.0 / index)
            }
            Tail::LogTail { gamma, x0 } => {
                let lo = Self::log_tail_bar(gamma, x0);
                let hi = Self::log_tail_bar(gamma, self.x_min);
                let y = lo + (hi - lo) * (1.0 - rng.random::<f64>());
                // Π̄ is decreasing on (0, x0]; bisect in ln x
                let (mut a, mut b) = (self.x_min.ln(), x0.ln());
                for _ in 0..80 {
                    let mid = 0.5 * (a + b);
                    if Self::log_tail_bar(gamma, mid.exp()) > y {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                (0.5 * (a + b)).exp()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubordinatorSample {
    pub set: CensorSet,
    pub predicted: PredictedLabel,
    pub horizon: f64,
    /// Expected measure added by discarding jumps below `x_min`.
    pub truncation_bias: f64,
}

/// Sample the closed range of a subordinator with drift over `[0, horizon]`.
pub fn sample_subordinator_range<R: Rng + ?Sized>(
    params: &SubordinatorParams,
    horizon: f64,
    rng: &mut R,
) -> Result<SubordinatorSample, SetError> {
    validate_subordinator(params.drift, &params.tail, params.x_min)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SetError::Subordinator(format!("horizon {horizon}")));
    }
    let rate = params.jump_rate() * horizon;
    let count = if rate > 0.0 {
        Poisson::new(rate)
            .map_err(|e| SetError::Subordinator(e.to_string()))?
            .sample(rng) as usize
    } else {
        0
    };
    let mut jumps: Vec<(f64, f64)> = (0..count)
        .map(|_| {
            let t = horizon * rng.random::<f64>();
            (t, params.sample_size(rng))
        })
        .collect();
    jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = SubordinatorRangeSet::new(params.drift, params.tail.clone(), params.x_min, horizon, jumps)?;
    Ok(SubordinatorSample {
        set: CensorSet {
            window: (0.0, s.end()),
            kind: Kind::Subordinator(s),
        },
        predicted: predicted_label(&params.tail),
        horizon,
        truncation_bias: params.truncation_bias_rate() * horizon,
    })
}

/// Sample with horizons `1.5·cover/d, 3·cover/d, …` until the range reaches
/// `cover`.
pub fn sample_subordinator_covering<R: Rng + ?Sized>(
    params: &SubordinatorParams,
    cover: f64,
    rng: &mut R,
) -> Result<SubordinatorSample, SetError> {
    validate_subordinator(params.drift, &params.tail, params.x_min)?;
    let mut horizon = 1.5 * cover / params.drift;
    loop {
        let s = sample_subordinator_range(params, horizon, rng)?;
        if s.set.window().1 >= cover {
            return Ok(s);
        }
        horizon *= 2.0;
    }
}

// ---------------------------------------------------------------------------
// the phi bound

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiBoundReport {
    /// `(u, φ(u² / (C' ln ln(1/u))))` for every sampled `u`.
    pub samples: Vec<(f64, f64)>,
    /// Largest sampled `u` such that the inequality holds at every sampled
    /// point up to it; `None` when it fails at the smallest sample.
    pub threshold: Option<f64>,
    pub holds_everywhere: bool,
}

/// Check `φ(u² / (C' ln ln(1/u))) <= u` with `φ(t) = sqrt(C t ln ln(1/t))`
/// at `u = 2^-k` inside `[u_lo, u_hi]`.
pub fn phi_bound_check(c: f64, c_prime: f64, u_lo: f64, u_hi: f64) -> Result<PhiBoundReport, SetError> {
    if !(c > 0.0 && c_prime > c) {
        return Err(SetError::PhiConstants(c, c_prime));
    }
    let k_lo = (1.0 / u_hi).log2().ceil() as i32;
    let k_hi = (1.0 / u_lo).log2().floor() as i32;
    let mut samples = Vec::new();
    for k in (k_lo..=k_hi).rev() {
        let u = 0.5f64.powi(k);
        let lu = (1.0 / u).ln();
        let ll = lu.ln();
        // t = u^2 / (C' ll) underflows for small u; work with ln(1/t)
        let lhs = if ll > 0.0 {
            let lt = 2.0 * lu + (c_prime * ll).ln();
            if lt.ln() > 0.0 {
                u * (c / c_prime * lt.ln() / ll).sqrt()
            } else {
                f64::INFINITY
            }
        } else {
            f64::INFINITY
        };
        samples.push((u, lhs));
    }
    // samples run from small u to large u
    let mut threshold = None;
    for &(u, lhs) in &samples {
        if lhs <= u {
            threshold = Some(u);
        } else {
            break;
        }
    }
    let holds_everywhere = samples.iter().all(|&(u, lhs)| lhs <= u);
    Ok(PhiBoundReport {
        samples,
        threshold,
        holds_everywhere,
    })
}

// ---------------------------------------------------------------------------
// recipes

/// How to obtain a set: either an explicit descriptor or a construction rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetRecipe {
    Elementary {
        window: [f64; 2],
        intervals: Vec<[f64; 2]>,
    },
    Cantor {
        window: [f64; 2],
        gaps: Vec<f64>,
        #[serde(default)]
        alpha: Option<f64>,
    },
    SubordinatorRange {
        drift: f64,
        tail: Tail,
        x_min: f64,
        horizon: f64,
        jumps: Vec<[f64; 2]>,
    },
    Complement {
        window: [f64; 2],
        of: Box<SetRecipe>,
    },
    MiddleThird {
        window: [f64; 2],
        depth: usize,
    },
    FatCantor {
        window: [f64; 2],
        depth: usize,
    },
    CantorAlpha {
        window: [f64; 2],
        alpha: f64,
        depth: usize,
        #[serde(default)]
        constant: Option<f64>,
        #[serde(default)]
        cap: Option<f64>,
    },
    SampledSubordinator {
        drift: f64,
        tail: Tail,
        x_min: f64,
        /// Right end the range has to reach.
        cover: f64,
        /// Stream index for the jump sample.
        #[serde(default)]
        stream: u64,
    },
}

/// A constructed set with side information from its construction.
#[derive(Clone, Debug)]
pub struct BuiltSet {
    pub set: CensorSet,
    pub certification: Option<RateReport>,
    pub predicted: Option<PredictedLabel>,
    pub truncation_bias: Option<f64>,
}

impl SetRecipe {
    pub fn build(&self, seed: u64) -> Result<BuiltSet, SetError> {
        let plain = |set| BuiltSet {
            set,
            certification: None,
            predicted: None,
            truncation_bias: None,
        };
        let w = |p: &[f64; 2]| (p[0], p[1]);
        match self {
            SetRecipe::Elementary { window, intervals } => Ok(plain(CensorSet::from_descriptor(&SetDescriptor::Elementary {
                window: *window,
                intervals: intervals.clone(),
            })?)),
            SetRecipe::Cantor { window, gaps, alpha } => Ok(plain(CensorSet::from_descriptor(&SetDescriptor::Cantor {
                window: *window,
                gaps: gaps.clone(),
                alpha: *alpha,
            })?)),
            SetRecipe::SubordinatorRange {
                drift,
                tail,
                x_min,
                horizon,
                jumps,
            } => {
                let set = CensorSet::from_descriptor(&SetDescriptor::SubordinatorRange {
                    drift: *drift,
                    tail: tail.clone(),
                    x_min: *x_min,
                    horizon: *horizon,
                    jumps: jumps.clone(),
                })?;
                Ok(BuiltSet {
                    set,
                    certification: None,
                    predicted: Some(predicted_label(tail)),
                    truncation_bias: None,
                })
            }
            SetRecipe::Complement { window, of } => {
                let inner = of.build(seed)?;
                let set = inner.set.restrict_window(w(window))?.complement();
                Ok(plain(set))
            }
            SetRecipe::MiddleThird { window, depth } => Ok(plain(CensorSet::middle_third(w(window), *depth)?)),
            SetRecipe::FatCantor { window, depth } => Ok(plain(CensorSet::fat_cantor(w(window), *depth)?)),
            SetRecipe::CantorAlpha {
                window,
                alpha,
                depth,
                constant,
                cap,
            } => {
                let mut t = CantorTarget::for_alpha(*alpha);
                if let Some(c) = constant {
                    t.constant = *c;
                }
                if let Some(c) = cap {
                    t.cap = *c;
                }
                let (set, report) = build_cantor_with(t, *depth, w(window))?;
                Ok(BuiltSet {
                    set,
                    certification: report,
                    predicted: None,
                    truncation_bias: None,
                })
            }
            SetRecipe::SampledSubordinator {
                drift,
                tail,
                x_min,
                cover,
                stream,
            } => {
                let params = SubordinatorParams {
                    drift: *drift,
                    tail: tail.clone(),
                    x_min: *x_min,
                };
                let mut r = rng::stream(seed, rng::tag::SUBORDINATOR, *stream);
                let s = sample_subordinator_covering(&params, *cover, &mut r)?;
                Ok(BuiltSet {
                    set: s.set,
                    certification: None,
                    predicted: Some(s.predicted),
                    truncation_bias: Some(s.truncation_bias),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementary_union_query() {
        let e = CensorSet::elementary((0.0, 3.0), vec![(0.0, 1.0), (2.0, 3.0)]).unwrap();
        assert_eq!(e.measure(0.5, 2.5).unwrap(), 1.0);
        assert_eq!(e.measure(2.5, 0.5).unwrap(), 1.0);
        assert!(e.measure(-1.0, 0.5).is_err());
    }

    #[test]
    fn elementary_rejects_overlap() {
        assert!(CensorSet::elementary((0.0, 1.0), vec![(0.0, 0.5), (0.4, 0.6)]).is_err());
        assert!(CensorSet::elementary((0.0, 1.0), vec![(0.5, 0.6), (0.1, 0.2)]).is_err());
        assert!(CensorSet::elementary((0.0, 1.0), vec![(0.5, 1.5)]).is_err());
        assert!(CensorSet::elementary((0.0, 1.0), vec![(0.5, 0.5)]).is_ok());
    }

    #[test]
    fn middle_third_measure() {
        let c = CensorSet::middle_third((0.0, 1.0), 12).unwrap();
        let expect = (2.0f64 / 3.0).powi(12);
        assert!((c.total_measure() - expect).abs() < 1e-15);
        // symmetric halves
        assert!((c.measure(0.0, 0.5).unwrap() - expect / 2.0).abs() < 1e-15);
    }

    #[test]
    fn fat_cantor_half_measure() {
        let c = CensorSet::fat_cantor((0.0, 1.0), 30).unwrap();
        // removed 1/2 - 2^-31 at depth 30
        assert!((c.total_measure() - (0.5 + 0.5f64.powi(31))).abs() < 1e-12);
    }

    #[test]
    fn complement_examples() {
        let full = CensorSet::full((0.0, 1.0)).unwrap().complement();
        assert_eq!(full.measure(0.1, 0.9).unwrap(), 0.0);
        let half = CensorSet::elementary((0.0, 1.0), vec![(0.0, 0.5)]).unwrap();
        assert_eq!(half.complement().measure(0.25, 0.75).unwrap(), 0.25);
        let twice = half.complement().complement();
        for k in 0..16 {
            let t = k as f64 / 16.0;
            let u = t + 1.0 / 16.0;
            assert_eq!(twice.measure(t, u).unwrap(), half.measure(t, u).unwrap());
        }
    }

    #[test]
    fn cantor_membership_matches_measure() {
        let c = CensorSet::middle_third((0.0, 1.0), 3).unwrap();
        assert!(c.contains(0.0) && c.contains(1.0 / 3.0) && c.contains(2.0 / 3.0));
        assert!(!c.contains(0.5) && !c.contains(0.2));
        let cs = c.as_cantor().unwrap();
        let mut r = rng::stream(1, rng::tag::CERTIFY, 0);
        for _ in 0..100 {
            assert!(cs.contains(cs.sample_point(&mut r)));
        }
    }

    #[test]
    fn subordinator_measure_is_drift_times_horizon() {
        let jumps = vec![[0.1, 0.05], [0.4, 0.2], [0.7, 0.01]];
        let d = SetDescriptor::SubordinatorRange {
            drift: 1.0,
            tail: Tail::Stable { index: 0.5, scale: 1.0 },
            x_min: 1e-6,
            horizon: 1.0,
            jumps,
        };
        let s = CensorSet::from_descriptor(&d).unwrap();
        assert_eq!(s.window(), (0.0, 1.26));
        assert!((s.total_measure() - 1.0).abs() < 1e-15);
        // first gap is (0.1, 0.15)
        assert!((s.measure(0.0, 0.15).unwrap() - 0.1).abs() < 1e-15);
        assert!(!s.contains(0.12));
        assert!(s.contains(0.16));
        assert_eq!(CensorSet::from_descriptor(&s.descriptor()).unwrap(), s);
    }

    #[test]
    fn pure_drift_is_full_interval() {
        let p = SubordinatorParams {
            drift: 1.0,
            tail: Tail::None,
            x_min: 1e-6,
        };
        let s = sample_subordinator_range(&p, 1.0, &mut rng::stream(3, rng::tag::SUBORDINATOR, 0)).unwrap();
        assert_eq!(s.predicted, PredictedLabel::Stable);
        assert_eq!(s.set.window(), (0.0, 1.0));
        assert_eq!(s.set.total_measure(), 1.0);
    }

    #[test]
    fn labels_from_tails() {
        assert_eq!(predicted_label(&Tail::Stable { index: 0.5, scale: 1.0 }), PredictedLabel::Stable);
        assert_eq!(predicted_label(&Tail::LogTail { gamma: 3.0, x0: 0.04 }), PredictedLabel::Unstable);
        assert_eq!(predicted_label(&Tail::LogTail { gamma: 3.2, x0: 0.04 }), PredictedLabel::Gap);
        assert_eq!(predicted_label(&Tail::LogTail { gamma: 5.0, x0: 0.006 }), PredictedLabel::Stable);
    }

    #[test]
    fn log_tail_needs_monotone_range() {
        let p = SubordinatorParams {
            drift: 1.0,
            tail: Tail::LogTail { gamma: 5.0, x0: 0.5 },
            x_min: 1e-6,
        };
        assert!(sample_subordinator_range(&p, 1.0, &mut rng::stream(0, 0, 0)).is_err());
    }

    #[test]
    fn g_integral_closed_forms() {
        let c = |g| g_integral_classify(&g, 1e-6).unwrap().class;
        assert_eq!(c(RateFamily::LogPower { beta: 2.0 }), IntegralClass::Converges);
        assert_eq!(c(RateFamily::LogPower { beta: 1.0 }), IntegralClass::Diverges);
        assert_eq!(c(RateFamily::Power { p: 0.1 }), IntegralClass::Converges);
        assert!(g_integral_classify(&RateFamily::Power { p: -1.0 }, 1e-6).is_err());
    }

    #[test]
    fn g_integral_tabulated() {
        let hs: Vec<f64> = (4..40).map(|k| 0.5f64.powi(k)).collect();
        let tab = |beta: f64| RateFamily::Tabulated {
            h: hs.clone(),
            g: hs.iter().map(|h| (1.0 / h).ln().powf(-beta)).collect(),
        };
        assert_eq!(g_integral_classify(&tab(2.0), 0.0).unwrap().class, IntegralClass::Converges);
        assert_eq!(g_integral_classify(&tab(0.5), 0.0).unwrap().class, IntegralClass::Diverges);
        assert_eq!(g_integral_classify(&tab(1.0), 0.0).unwrap().class, IntegralClass::Inconclusive);
        let bad = RateFamily::Tabulated {
            h: vec![0.1, 0.01, 0.001],
            g: vec![0.1, 0.2, 0.3],
        };
        assert!(g_integral_classify(&bad, 0.0).is_err());
    }

    #[test]
    fn full_window_certifies_stable() {
        let (set, report) = build_cantor(f64::INFINITY, 20, (0.0, 1.0)).unwrap();
        assert!(report.is_none());
        assert_eq!(set.total_measure(), 1.0);
        let pts = sample_points_in(&set, 50, &mut rng::stream(0, 0, 0)).unwrap();
        let r = certify_rate(&set, &pts, &dyadic_scales(1.0, 4, 12), &RateFamily::LogPower { beta: 2.0 }).unwrap();
        assert!(r.curve_i.iter().all(|&c| c == 0.0));
        assert_eq!(r.verdict, RateVerdict::StableCriterionMet);
    }

    #[test]
    fn certify_input_errors() {
        let set = CensorSet::full((0.0, 1.0)).unwrap();
        let g = RateFamily::LogPower { beta: 2.0 };
        assert!(certify_rate(&set, &[], &dyadic_scales(1.0, 4, 12), &g).is_err());
        assert!(certify_rate(&set, &[0.5], &dyadic_scales(1.0, 4, 8), &g).is_err());
    }

    #[test]
    fn phi_bound() {
        let r2 = phi_bound_check(1.0, 2.0, 1e-12, 1e-3).unwrap();
        assert!(r2.holds_everywhere);
        let r101 = phi_bound_check(1.0, 1.01, 1e-300, 0.1).unwrap();
        let r2w = phi_bound_check(1.0, 2.0, 1e-300, 0.1).unwrap();
        let r15 = phi_bound_check(1.0, 1.5, 1e-300, 0.1).unwrap();
        // C' close to C only holds far below f64 range
        assert_eq!(r101.threshold, None);
        assert!(r15.threshold.is_some());
        assert!(r101.threshold <= r15.threshold && r15.threshold <= r2w.threshold);
        assert!(phi_bound_check(1.0, 1.0, 1e-6, 1e-3).is_err());
    }

    #[test]
    fn descriptor_roundtrip_toml() {
        let c = CensorSet::fat_cantor((0.0, 1.0), 6).unwrap().complement();
        let text = toml::to_string(&c.descriptor()).unwrap();
        let back: SetDescriptor = toml::from_str(&text).unwrap();
        let c2 = CensorSet::from_descriptor(&back).unwrap();
        assert_eq!(c2.descriptor(), c.descriptor());
        assert_eq!(toml::to_string(&c2.descriptor()).unwrap(), text);
        let bad = "kind = \"elementary\"\nwindow = [0.0, 1.0]\nintervals = []\nextra = 1\n";
        assert!(toml::from_str::<SetDescriptor>(bad).is_err());
    }
}
