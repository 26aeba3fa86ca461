//! The transfer operator `(φ_g f)(x) = g(x/2) f(x/2) + g((x+1)/2) f((x+1)/2)`
//! on dyadic grids, Riesz-product densities and enclosures of `μ_g(f)`.
//!
//! One application of `φ_g` maps samples on the level-`ℓ` grid to the
//! level-`ℓ−1` grid, because both preimages of a level-`ℓ−1` point are
//! level-`ℓ` points. Iterating from level `m + n` down to `m` therefore
//! evaluates `φ_g^n f` on the level-`m` grid in `Θ(2^{m+n})` operations.
//!
//! Alongside the point values the engine can propagate lower and upper
//! bounds of the iterate over every grid *cell*. Since `μ_g` is an
//! invariant probability measure, `μ_g(f) = μ_g(φ_g^n f)` lies between the
//! infimum and supremum of `φ_g^n f`, which the cell bounds enclose.

use serde::Serialize;

use crate::classify::{check_goodness, classify_unchecked, SpectralKind};
use crate::error::{Error, Result};
use crate::gfunction::{
    estimate_grid_modulus, GFunction, ModulusEstimate, ModulusProfile, DEFAULT_TOLERANCE,
    VALIDATION_LEVEL,
};
use crate::numeric::{log2_add, log2_sub, log2_sum, sin_cos_2pi_dyadic};

/// Default iteration count for enclosures.
pub const DEFAULT_N: u32 = 20;
/// Default output grid level for enclosures.
pub const DEFAULT_LEVEL: u32 = 6;
/// Default cap on `m + n`.
pub const DEFAULT_MAX_TOTAL_LEVEL: u32 = 30;
/// Largest grid held in memory at once; finer stages are processed in
/// cache-sized blocks.
const FULL_GRID_LEVEL: u32 = 20;
/// Results below `2^LOG2_UNDERFLOW` are recomputed in log₂ space.
const LOG2_UNDERFLOW: f64 = -900.0;

/// Storage convention for grid values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Repr {
    Linear,
    /// Values are `log₂` of a non-negative function, `-inf` at zeros.
    Log2,
}

/// Samples of a function on `[0, 1]` at the level-`m` grid `{j / 2^m}`.
///
/// The grid covers `j = 0..2^m`; [`GridFunction::end`] additionally keeps
/// the value at `x = 1`, which differs from the value at 0 for functions
/// that are continuous on `[0, 1]` but not on the circle.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    level: u32,
    data: Vec<f64>,
    repr: Repr,
}

impl GridFunction {
    /// Wrap `2^level` samples; `end` defaults to the periodic value `values[0]`.
    pub fn new(level: u32, mut values: Vec<f64>, end: Option<f64>, repr: Repr) -> Result<Self> {
        if values.len() != 1usize << level {
            return Err(Error::InvalidArgument(format!(
                "level {level} needs {} samples, got {}",
                1usize << level,
                values.len()
            )));
        }
        if repr == Repr::Linear && values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidArgument("samples contain NaN".into()));
        }
        let end = end.unwrap_or(values[0]);
        values.push(end);
        Ok(Self {
            level,
            data: values,
            repr,
        })
    }

    /// Sample a test function on the level-`m` grid.
    pub fn sample(f: &dyn TestFunction, level: u32, repr: Repr) -> Self {
        let mut data = vec![0.0; (1usize << level) + 1];
        f.fill(level, 0, repr == Repr::Log2, &mut data, None);
        Self { level, data, repr }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// The `2^level` samples at `j / 2^level`, `j < 2^level`.
    pub fn values(&self) -> &[f64] {
        &self.data[..self.data.len() - 1]
    }

    /// Value at `x = 1`.
    pub fn end(&self) -> f64 {
        self.data[self.data.len() - 1]
    }

    pub fn repr(&self) -> Repr {
        self.repr
    }

    pub fn is_log_space(&self) -> bool {
        self.repr == Repr::Log2
    }

    /// Grid values including the endpoint `x = 1`.
    pub fn with_end(&self) -> &[f64] {
        &self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_linear(&self) -> Self {
        match self.repr {
            Repr::Linear => self.clone(),
            Repr::Log2 => Self {
                level: self.level,
                data: self.data.iter().map(|v| v.exp2()).collect(),
                repr: Repr::Linear,
            },
        }
    }

    pub fn to_log2(&self) -> Result<Self> {
        match self.repr {
            Repr::Log2 => Ok(self.clone()),
            Repr::Linear => {
                if self.data.iter().any(|v| *v < 0.0) {
                    return Err(Error::InvalidArgument(
                        "log2 representation needs a non-negative function".into(),
                    ));
                }
                Ok(Self {
                    level: self.level,
                    data: self.data.iter().map(|v| v.log2()).collect(),
                    repr: Repr::Log2,
                })
            }
        }
    }

    /// Trapezoidal approximation of `∫_0^1 f`, in the grid's representation.
    pub fn trapezoid(&self) -> f64 {
        trapezoid(&self.data, self.repr == Repr::Log2)
    }

    /// Grid lower estimate of the modulus of continuity on `[0, 1]`.
    pub fn modulus(&self, delta: f64) -> Result<ModulusEstimate> {
        let linear = self.to_linear();
        estimate_grid_modulus(&linear.data, false, delta, self.level)
    }
}

fn trapezoid(points: &[f64], log2: bool) -> f64 {
    let n = points.len() - 1;
    let (first, last) = (points[0], points[n]);
    if log2 {
        let inner = log2_sum(points[1..n].iter().copied());
        let ends = log2_add(first, last) - 1.0;
        log2_add(inner, ends) - (n as f64).log2()
    } else {
        let mut acc = crate::numeric::Compensated::new();
        acc.add(0.5 * first);
        acc.add(0.5 * last);
        for v in &points[1..n] {
            acc.add(*v);
        }
        acc.value() / n as f64
    }
}

/// A function on `[0, 1]` that can be sampled on dyadic grids.
pub trait TestFunction: Sync {
    /// `f(t / 2^level)` for `t ∈ [0, 2^level]`.
    fn value(&self, t: u64, level: u32) -> f64;

    /// `log₂ f(t / 2^level)`; only meaningful for non-negative `f`.
    fn log2_value(&self, t: u64, level: u32) -> f64 {
        self.value(t, level).log2()
    }

    fn is_nonnegative(&self) -> bool {
        false
    }

    /// Fill `points[u] = f((start + u) / 2^level)` and, when requested,
    /// bounds of `f` over the cells between consecutive points
    /// (`points.len() = cells + 1`). Returns true when the bounds are
    /// certified rather than read off the endpoints.
    fn fill(
        &self,
        level: u32,
        start: u64,
        log2: bool,
        points: &mut [f64],
        bounds: Option<(&mut [f64], &mut [f64])>,
    ) -> bool {
        for (u, p) in points.iter_mut().enumerate() {
            let t = start + u as u64;
            *p = if log2 {
                self.log2_value(t, level)
            } else {
                self.value(t, level)
            };
        }
        if let Some((lo, hi)) = bounds {
            endpoint_bounds(points, lo, hi);
        }
        false
    }
}

/// Cell bounds taken from the two endpoint samples.
pub fn endpoint_bounds(points: &[f64], lo: &mut [f64], hi: &mut [f64]) {
    for u in 0..lo.len() {
        let (a, b) = (points[u], points[u + 1]);
        lo[u] = a.min(b);
        hi[u] = a.max(b);
    }
}

/// The constant function `c`.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl TestFunction for Constant {
    fn value(&self, _t: u64, _level: u32) -> f64 {
        self.0
    }

    fn is_nonnegative(&self) -> bool {
        self.0 >= 0.0
    }

    fn fill(
        &self,
        _level: u32,
        _start: u64,
        log2: bool,
        points: &mut [f64],
        bounds: Option<(&mut [f64], &mut [f64])>,
    ) -> bool {
        let v = if log2 { self.0.log2() } else { self.0 };
        points.fill(v);
        if let Some((lo, hi)) = bounds {
            lo.fill(v);
            hi.fill(v);
        }
        true
    }
}

/// Integers `r` with `a·s < r·2^level < a·(s+1)`, up to the first four.
fn interior_multiples(a: u64, s: u64, level: u32) -> impl Iterator<Item = u128> {
    let scale = 1u128 << level;
    let left = a as u128 * s as u128;
    let right = a as u128 * (s as u128 + 1);
    let first = left / scale + 1;
    (first..first + 4).take_while(move |r| r * scale < right)
}

fn trig_fill(
    freq: u64,
    sine: bool,
    level: u32,
    start: u64,
    log2: bool,
    points: &mut [f64],
    bounds: Option<(&mut [f64], &mut [f64])>,
) -> bool {
    if log2 {
        // trig functions change sign; the log2 path is not meaningful
        points.fill(f64::NAN);
        if let Some((lo, hi)) = bounds {
            lo.fill(f64::NAN);
            hi.fill(f64::NAN);
        }
        return false;
    }
    let eval = |t: u64| {
        let phase = ((freq as u128 * t as u128) % (1u128 << level)) as u64;
        let (s, c) = sin_cos_2pi_dyadic(phase, level);
        if sine {
            s
        } else {
            c
        }
    };
    for (u, p) in points.iter_mut().enumerate() {
        *p = eval(start + u as u64);
    }
    if let Some((lo, hi)) = bounds {
        endpoint_bounds(points, lo, hi);
        for u in 0..lo.len() {
            let s = start + u as u64;
            if sine {
                // extrema at 4N x = r with r odd: sin(πr/2) = ±1
                for r in interior_multiples(4 * freq, s, level) {
                    match r % 4 {
                        1 => hi[u] = 1.0,
                        3 => lo[u] = -1.0,
                        _ => {}
                    }
                }
            } else {
                // extrema at 2N x = r: cos(πr) = (−1)^r
                for r in interior_multiples(2 * freq, s, level) {
                    if r % 2 == 0 {
                        hi[u] = 1.0;
                    } else {
                        lo[u] = -1.0;
                    }
                }
            }
        }
    }
    true
}

/// `cos(2π N x)`.
#[derive(Debug, Clone, Copy)]
pub struct Cosine(pub u64);

impl TestFunction for Cosine {
    fn value(&self, t: u64, level: u32) -> f64 {
        let mut p = [0.0];
        trig_fill(self.0, false, level, t, false, &mut p, None);
        p[0]
    }

    fn is_nonnegative(&self) -> bool {
        self.0 == 0
    }

    fn fill(
        &self,
        level: u32,
        start: u64,
        log2: bool,
        points: &mut [f64],
        bounds: Option<(&mut [f64], &mut [f64])>,
    ) -> bool {
        trig_fill(self.0, false, level, start, log2, points, bounds)
    }
}

/// `sin(2π N x)`.
#[derive(Debug, Clone, Copy)]
pub struct Sine(pub u64);

impl TestFunction for Sine {
    fn value(&self, t: u64, level: u32) -> f64 {
        let mut p = [0.0];
        trig_fill(self.0, true, level, t, false, &mut p, None);
        p[0]
    }

    fn fill(
        &self,
        level: u32,
        start: u64,
        log2: bool,
        points: &mut [f64],
        bounds: Option<(&mut [f64], &mut [f64])>,
    ) -> bool {
        trig_fill(self.0, true, level, start, log2, points, bounds)
    }
}

/// A closure on `[0, 1]`; cell bounds are read off the endpoints and are
/// therefore not certified.
pub struct FnTest<F> {
    f: F,
    nonnegative: bool,
}

impl<F: Fn(f64) -> f64 + Sync> FnTest<F> {
    pub fn new(f: F) -> Self {
        Self {
            f,
            nonnegative: false,
        }
    }

    /// Declare `f >= 0`, enabling the log₂ path.
    pub fn nonnegative(f: F) -> Self {
        Self {
            f,
            nonnegative: true,
        }
    }
}

impl<F: Fn(f64) -> f64 + Sync> TestFunction for FnTest<F> {
    fn value(&self, t: u64, level: u32) -> f64 {
        (self.f)(t as f64 * 2f64.powi(-(level as i32)))
    }

    fn is_nonnegative(&self) -> bool {
        self.nonnegative
    }
}

/// Arithmetic used by the dynamic program.
trait Domain {
    const LOG: bool;
    fn weight(g: f64) -> f64;
    fn prod(w: f64, v: f64) -> f64;
    fn add(a: f64, b: f64) -> f64;
    fn lo_term(wl: f64, wu: f64, v: f64) -> f64;
    fn hi_term(wl: f64, wu: f64, v: f64) -> f64;

    /// Bounds of `g_a F_a + g_b F_b` given the ranges of weights and values
    /// over the two preimage cells.
    #[inline(always)]
    fn cell(a: [f64; 4], b: [f64; 4]) -> (f64, f64) {
        let [la, ua, fla, fha] = a;
        let [lb, ub, flb, fhb] = b;
        (
            Self::add(Self::lo_term(la, ua, fla), Self::lo_term(lb, ub, flb)),
            Self::add(Self::hi_term(la, ua, fha), Self::hi_term(lb, ub, fhb)),
        )
    }
}



struct Lin;
struct Log;

impl Domain for Lin {
    const LOG: bool = false;
    #[inline(always)]
    fn weight(g: f64) -> f64 {
        g
    }
    #[inline(always)]
    fn prod(w: f64, v: f64) -> f64 {
        w * v
    }
    #[inline(always)]
    fn add(a: f64, b: f64) -> f64 {
        a + b
    }
    #[inline(always)]
    fn lo_term(wl: f64, wu: f64, v: f64) -> f64 {
        (wl * v).min(wu * v)
    }
    #[inline(always)]
    fn hi_term(wl: f64, wu: f64, v: f64) -> f64 {
        (wl * v).max(wu * v)
    }

    /// Intersects the plain product form with the form centred at
    /// `c = ` midrange of the two cells, `c + g_a (F_a − c) + g_b (F_b − c)`,
    /// which uses `g_a + g_b = 1` and is exact on constants.
    #[inline(always)]
    fn cell(a: [f64; 4], b: [f64; 4]) -> (f64, f64) {
        let [la, ua, fla, fha] = a;
        let [lb, ub, flb, fhb] = b;
        let lo = Self::lo_term(la, ua, fla) + Self::lo_term(lb, ub, flb);
        let hi = Self::hi_term(la, ua, fha) + Self::hi_term(lb, ub, fhb);
        let c = 0.5 * (fla.min(flb) + fha.max(fhb));
        let clo = c + (Self::lo_term(la, ua, fla - c) + Self::lo_term(lb, ub, flb - c));
        let chi = c + (Self::hi_term(la, ua, fha - c) + Self::hi_term(lb, ub, fhb - c));
        (lo.max(clo), hi.min(chi))
    }
}

impl Domain for Log {
    const LOG: bool = true;
    #[inline(always)]
    fn weight(g: f64) -> f64 {
        g.log2()
    }
    #[inline(always)]
    fn prod(w: f64, v: f64) -> f64 {
        if w == f64::NEG_INFINITY || v == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            w + v
        }
    }
    #[inline(always)]
    fn add(a: f64, b: f64) -> f64 {
        log2_add(a, b)
    }
    #[inline(always)]
    fn lo_term(wl: f64, _wu: f64, v: f64) -> f64 {
        Self::prod(wl, v)
    }
    #[inline(always)]
    fn hi_term(_wl: f64, wu: f64, v: f64) -> f64 {
        Self::prod(wu, v)
    }
}

/// Options for [`run_transfer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferOptions {
    pub repr: Repr,
    /// Propagate cell bounds alongside the point values.
    pub bounds: bool,
    /// Subtract a constant before iterating (exact, since `φ_g 1 = 1`) to
    /// keep the cell bounds tight.
    pub shift: bool,
    /// Record the grid range of every intermediate stage.
    pub track_stages: bool,
    pub max_total_level: u32,
}

impl Default for TransferOptions {
    fn default() -> Self {
        Self {
            repr: Repr::Linear,
            bounds: false,
            shift: false,
            track_stages: false,
            max_total_level: DEFAULT_MAX_TOTAL_LEVEL,
        }
    }
}

/// Result of iterating the transfer operator on a grid.
#[derive(Debug, Clone)]
pub struct TransferRun {
    /// `φ_g^n (f − shift)` on the output grid.
    pub point: GridFunction,
    /// Lower bounds of `φ_g^n (f − shift)` on each output cell.
    pub cell_lo: Vec<f64>,
    /// Upper bounds of `φ_g^n (f − shift)` on each output cell.
    pub cell_hi: Vec<f64>,
    /// Grid `(min, max)` of `φ_g^k (f − shift)` at every stage `k = 0..=n`;
    /// empty unless requested.
    pub stage_ranges: Vec<(f64, f64)>,
    /// The subtracted constant, in the run's representation.
    pub shift: f64,
    pub certified: bool,
}

struct Stages {
    ranges: Vec<(f64, f64)>,
}

impl Stages {
    fn new(n: u32, track: bool) -> Self {
        let len = if track { n as usize + 1 } else { 0 };
        Self {
            ranges: vec![(f64::INFINITY, f64::NEG_INFINITY); len],
        }
    }

    #[inline]
    fn update(&mut self, k: usize, values: &[f64]) {
        let Some(r) = self.ranges.get_mut(k) else {
            return;
        };
        let (mut lo, mut hi) = *r;
        for &v in values {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        *r = (lo, hi);
    }
}

/// Subtract `shift` from samples and bounds in place.
fn apply_shift<D: Domain>(shift: f64, data: &mut [f64]) {
    if D::LOG {
        if shift != f64::NEG_INFINITY {
            for v in data {
                *v = log2_sub(*v, shift);
            }
        }
    } else if shift != 0.0 {
        for v in data {
            *v -= shift;
        }
    }
}

/// Linear-space weights for builtins take `g(x + ½) = 1 − g(x)`, which
/// holds to rounding; piecewise g only satisfy it to their tolerance, and
/// log space needs the relative accuracy of a direct evaluation.
fn uses_complement<D: Domain>(g: &GFunction) -> bool {
    !D::LOG && g.builtin().is_some()
}

/// One application of `φ_g` on full arrays: `p` has `2^ℓ + 1` points,
/// `lo`/`hi` have `2^ℓ` cells (or are empty). Works in place.
fn full_stage<D: Domain>(g: &GFunction, level: u32, p: &mut Vec<f64>, lo: &mut Vec<f64>, hi: &mut Vec<f64>) {
    const CHUNK: usize = 1024;
    let h = 1usize << (level - 1);
    let bounds = !lo.is_empty();
    let complement = uses_complement::<D>(g);
    let mut wa = vec![0.0; CHUNK.min(h) + 1];
    let mut wb = vec![0.0; wa.len()];
    let mut c0 = 0;
    while c0 < h {
        // weights at t = c0..=c0+len, the last one shared with the next chunk
        let len = CHUNK.min(h - c0);
        let (wa, wb) = (&mut wa[..=len], &mut wb[..=len]);
        g.eval_dyadic_run(c0 as u64, level, wa);
        if complement {
            wa.iter().zip(wb.iter_mut()).for_each(|(a, b)| *b = 1.0 - a);
        } else {
            g.eval_dyadic_run((c0 + h) as u64, level, wb);
            wa.iter_mut().for_each(|w| *w = D::weight(*w));
            wb.iter_mut().for_each(|w| *w = D::weight(*w));
        }
        for u in 0..len {
            let t = c0 + u;
            p[t] = D::add(D::prod(wa[u], p[t]), D::prod(wb[u], p[t + h]));
        }
        if bounds {
            for u in 0..len {
                let t = c0 + u;
                let (la, ua) = (wa[u].min(wa[u + 1]), wa[u].max(wa[u + 1]));
                let (lb, ub) = (wb[u].min(wb[u + 1]), wb[u].max(wb[u + 1]));
                (lo[t], hi[t]) = D::cell([la, ua, lo[t], hi[t]], [lb, ub, lo[t + h], hi[t + h]]);
            }
        }
        c0 += len;
        if c0 == h {
            // the end point x = 1 pairs t = h with t = 2h
            p[h] = D::add(D::prod(wa[len], p[h]), D::prod(wb[len], p[2 * h]));
        }
    }
    p.truncate(h + 1);
    if bounds {
        lo.truncate(h);
        hi.truncate(h);
    }
}

/// Pick the shift constant from a coarse certified pass over `f`.
fn choose_shift(f: &dyn TestFunction, log2: bool, level: u32) -> f64 {
    let level = level.min(14);
    let cells = 1usize << level;
    let mut points = vec![0.0; cells + 1];
    let mut lo = vec![0.0; cells];
    let mut hi = vec![0.0; cells];
    f.fill(level, 0, log2, &mut points, Some((&mut lo, &mut hi)));
    let min = lo.iter().copied().fold(f64::INFINITY, f64::min);
    let max = hi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if f.is_nonnegative() {
        // stays non-negative after the shift, which the log2 path needs
        min
    } else {
        0.5 * (min + max)
    }
}

/// Iterate `φ_g` `n` times starting from `f` sampled at level `m + n`.
pub fn run_transfer(
    g: &GFunction,
    f: &dyn TestFunction,
    n: u32,
    level: u32,
    opts: &TransferOptions,
) -> Result<TransferRun> {
    let total = level + n;
    if total > opts.max_total_level || total > 62 {
        return Err(Error::MemoryCap {
            total,
            cap: opts.max_total_level.min(62),
        });
    }
    if opts.repr == Repr::Log2 && !f.is_nonnegative() {
        return Err(Error::InvalidArgument(
            "log2 iteration needs a non-negative test function".into(),
        ));
    }
    match opts.repr {
        Repr::Linear => run_domain::<Lin>(g, f, n, level, opts),
        Repr::Log2 => run_domain::<Log>(g, f, n, level, opts),
    }
}

fn run_domain<D: Domain>(
    g: &GFunction,
    f: &dyn TestFunction,
    n: u32,
    level: u32,
    opts: &TransferOptions,
) -> Result<TransferRun> {
    let total = level + n;
    let shift = if opts.shift {
        choose_shift(f, D::LOG, total)
    } else if D::LOG {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    let mut certified = g.monotone_on_half_turns();
    let mut stages = Stages::new(n, opts.track_stages);
    let top = total.min(FULL_GRID_LEVEL.max(level));
    let cells = 1usize << top;
    let mut p = vec![0.0; cells + 1];
    let (mut lo, mut hi) = if opts.bounds {
        (vec![0.0; cells], vec![0.0; cells])
    } else {
        (Vec::new(), Vec::new())
    };

    if top == total {
        let b = opts.bounds.then(|| (&mut lo[..], &mut hi[..]));
        certified &= f.fill(total, 0, D::LOG, &mut p, b);
        apply_shift::<D>(shift, &mut p);
        apply_shift::<D>(shift, &mut lo);
        apply_shift::<D>(shift, &mut hi);
        stages.update(0, &p);
    } else {
        certified &= fused_stages::<D>(g, f, total, top, shift, opts.bounds, &mut p, &mut lo, &mut hi, &mut stages);
    }

    for l in ((level + 1)..=top).rev() {
        full_stage::<D>(g, l, &mut p, &mut lo, &mut hi);
        stages.update((total - l + 1) as usize, &p);
    }
    if !opts.bounds {
        certified = false;
    }
    let point = GridFunction {
        level,
        data: p,
        repr: if D::LOG { Repr::Log2 } else { Repr::Linear },
    };
    Ok(TransferRun {
        point,
        cell_lo: lo,
        cell_hi: hi,
        stage_ranges: stages.ranges,
        shift,
        certified,
    })
}

/// Process the stages above `top` in blocks: the level-`top` outputs
/// `t0..t0+B` depend only on the level-`total` samples
/// `t0 + u + j·2^top`, which are laid out as `2^(total−top)` rows of width
/// `B`. Each stage pairs row `j` with row `j + rows/2`.
#[allow(clippy::too_many_arguments)]
fn fused_stages<D: Domain>(
    g: &GFunction,
    f: &dyn TestFunction,
    total: u32,
    top: u32,
    shift: f64,
    bounds: bool,
    out_p: &mut [f64],
    out_lo: &mut [f64],
    out_hi: &mut [f64],
    stages: &mut Stages,
) -> bool {
    let depth = total - top;
    let stride = 1u64 << top;
    let block = 1usize << top.min(16u32.saturating_sub(depth).max(6));
    let rows0 = 1usize << depth;
    let pw = block + 1;
    let mut p = vec![0.0; rows0 * pw];
    let (mut lo, mut hi) = if bounds {
        (vec![0.0; rows0 * block], vec![0.0; rows0 * block])
    } else {
        (Vec::new(), Vec::new())
    };
    let mut wa = vec![0.0; pw];
    let mut wb = vec![0.0; pw];
    let mut certified = true;
    let complement = uses_complement::<D>(g);

    let mut t0 = 0u64;
    while t0 < stride {
        for j in 0..rows0 {
            let start = t0 + j as u64 * stride;
            let row_p = &mut p[j * pw..(j + 1) * pw];
            let b = if bounds {
                Some((&mut lo[j * block..(j + 1) * block], &mut hi[j * block..(j + 1) * block]))
            } else {
                None
            };
            certified &= f.fill(total, start, D::LOG, row_p, b);
        }
        apply_shift::<D>(shift, &mut p);
        apply_shift::<D>(shift, &mut lo);
        apply_shift::<D>(shift, &mut hi);
        stages.update(0, &p);

        let mut rows = rows0;
        for l in ((top + 1)..=total).rev() {
            let half = rows / 2;
            for j in 0..half {
                let sa = t0 + j as u64 * stride;
                let sb = t0 + (j + half) as u64 * stride;
                g.eval_dyadic_run(sa, l, &mut wa);
                if complement {
                    for u in 0..pw {
                        wb[u] = 1.0 - wa[u];
                    }
                } else {
                    g.eval_dyadic_run(sb, l, &mut wb);
                    for u in 0..pw {
                        wa[u] = D::weight(wa[u]);
                        wb[u] = D::weight(wb[u]);
                    }
                }
                let (pa, pb) = p.split_at_mut((j + half) * pw);
                let pa = &mut pa[j * pw..(j + 1) * pw];
                let pb = &pb[..pw];
                for u in 0..pw {
                    pa[u] = D::add(D::prod(wa[u], pa[u]), D::prod(wb[u], pb[u]));
                }
                if bounds {
                    let (la, lb) = lo.split_at_mut((j + half) * block);
                    let (ha, hb) = hi.split_at_mut((j + half) * block);
                    let la = &mut la[j * block..(j + 1) * block];
                    let ha = &mut ha[j * block..(j + 1) * block];
                    for u in 0..block {
                        let (l1, u1) = (wa[u].min(wa[u + 1]), wa[u].max(wa[u + 1]));
                        let (l2, u2) = (wb[u].min(wb[u + 1]), wb[u].max(wb[u + 1]));
                        (la[u], ha[u]) = D::cell([l1, u1, la[u], ha[u]], [l2, u2, lb[u], hb[u]]);
                    }
                }
            }
            rows = half;
            stages.update((total - l + 1) as usize, &p[..rows * pw]);
        }

        let t = t0 as usize;
        out_p[t..t + pw].copy_from_slice(&p[..pw]);
        if bounds {
            out_lo[t..t + block].copy_from_slice(&lo[..block]);
            out_hi[t..t + block].copy_from_slice(&hi[..block]);
        }
        t0 += block as u64;
    }
    certified
}

/// Apply `φ_g` once to grid samples at level `ℓ >= 1`, giving level `ℓ − 1`.
pub fn apply_transfer(g: &GFunction, f: &GridFunction) -> Result<GridFunction> {
    if f.level == 0 {
        return Err(Error::LevelZero);
    }
    let mut p = f.data.clone();
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    match f.repr {
        Repr::Linear => full_stage::<Lin>(g, f.level, &mut p, &mut lo, &mut hi),
        Repr::Log2 => full_stage::<Log>(g, f.level, &mut p, &mut lo, &mut hi),
    }
    Ok(GridFunction {
        level: f.level - 1,
        data: p,
        repr: f.repr,
    })
}

/// `φ_g^n f` on the level-`m` grid, from `f` sampled at level `m + n`.
pub fn iterate_transfer(g: &GFunction, f: &dyn TestFunction, n: u32, level: u32) -> Result<GridFunction> {
    Ok(run_transfer(g, f, n, level, &TransferOptions::default())?.point)
}

/// The Riesz-product density `g_n(x) = 2^n ∏_{k<n} g(2^k x)` on the
/// level-`m` grid, using `g_{i+1}(x) = 2 g(x) g_i(2x)`.
pub fn density_g_n(g: &GFunction, n: u32, level: u32, log_space: bool) -> GridFunction {
    if level < n {
        log::warn!("density g_{n} sampled at level {level} < {n}: the grid aliases its finest oscillations");
    }
    let size = 1usize << level;
    let mask = size - 1;
    let factor: Vec<f64> = (0..size as u64)
        .map(|t| {
            let v = g.eval_dyadic(t, level);
            if log_space {
                1.0 + v.log2()
            } else {
                2.0 * v
            }
        })
        .collect();
    let mut cur = vec![if log_space { 0.0 } else { 1.0 }; size];
    let mut next = vec![0.0; size];
    for _ in 0..n {
        for t in 0..size {
            let prev = cur[(2 * t) & mask];
            next[t] = if log_space {
                if factor[t] == f64::NEG_INFINITY || prev == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    factor[t] + prev
                }
            } else {
                factor[t] * prev
            };
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let repr = if log_space { Repr::Log2 } else { Repr::Linear };
    let end = cur[0];
    cur.push(end);
    GridFunction {
        level,
        data: cur,
        repr,
    }
}

/// `φ_g^n f` at the single point `t / 2^level`, summing over the preimage
/// tree and pruning branches whose weight is exactly zero.
pub fn point_transfer(g: &GFunction, f: &dyn TestFunction, n: u32, t: u64, level: u32) -> Result<f64> {
    const NODE_BUDGET: usize = 1 << 26;
    if level + n > 62 {
        return Err(Error::MemoryCap {
            total: level + n,
            cap: 62,
        });
    }
    let mut stack = vec![(t, 0u32, 1.0f64)];
    let mut sum = crate::numeric::Compensated::new();
    let mut visited = 0usize;
    while let Some((s, d, w)) = stack.pop() {
        visited += 1;
        if visited > NODE_BUDGET {
            return Err(Error::InvalidArgument(format!(
                "preimage tree of depth {n} exceeds the node budget"
            )));
        }
        if d == n {
            sum.add(w * f.value(s, level + n));
            continue;
        }
        let l = level + d + 1;
        let other = s + (1u64 << (level + d));
        let a = g.eval_dyadic(s, l);
        if a != 0.0 {
            stack.push((s, d + 1, w * a));
        }
        let b = g.eval_dyadic(other, l);
        if b != 0.0 {
            stack.push((other, d + 1, w * b));
        }
    }
    Ok(sum.value())
}

/// An interval enclosing a real number, kept in linear and log₂ form.
///
/// `estimate` is the best point value (the grid average of `φ_g^n f`); it
/// always lies inside `[lo, hi]`, and estimates are additive in `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Enclosure {
    pub lo: f64,
    pub hi: f64,
    pub log2_lo: f64,
    pub log2_hi: f64,
    pub estimate: f64,
    pub log2_estimate: f64,
    /// Grid range of `φ_g^n f` before widening.
    pub raw_lo: f64,
    pub raw_hi: f64,
    /// Widening applied to cover values between grid points.
    pub modulus_pad: f64,
    pub n_iterations: u32,
    pub level: u32,
    /// The widening comes from certified cell bounds rather than a heuristic.
    pub certified: bool,
    pub repr: Repr,
}

impl Enclosure {
    /// The degenerate enclosure `[v, v]`.
    pub fn exact(v: f64) -> Self {
        Self {
            lo: v,
            hi: v,
            log2_lo: v.log2(),
            log2_hi: v.log2(),
            estimate: v,
            log2_estimate: v.log2(),
            raw_lo: v,
            raw_hi: v,
            modulus_pad: 0.0,
            n_iterations: 0,
            level: 0,
            certified: true,
            repr: Repr::Linear,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn raw_width(&self) -> f64 {
        self.raw_hi - self.raw_lo
    }

    /// The central estimate.
    pub fn mid(&self) -> f64 {
        self.estimate
    }

    /// Arithmetic centre `(lo + hi) / 2`.
    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn overlaps(&self, other: &Enclosure) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    /// Enclosure of the sum of the two enclosed quantities.
    pub fn sum(&self, other: &Enclosure) -> Enclosure {
        Enclosure {
            lo: self.lo + other.lo,
            hi: self.hi + other.hi,
            log2_lo: log2_add(self.log2_lo, other.log2_lo),
            log2_hi: log2_add(self.log2_hi, other.log2_hi),
            estimate: self.estimate + other.estimate,
            log2_estimate: log2_add(self.log2_estimate, other.log2_estimate),
            raw_lo: self.raw_lo + other.raw_lo,
            raw_hi: self.raw_hi + other.raw_hi,
            modulus_pad: self.modulus_pad + other.modulus_pad,
            n_iterations: self.n_iterations.min(other.n_iterations),
            level: self.level.min(other.level),
            certified: self.certified && other.certified,
            repr: if self.repr == Repr::Log2 || other.repr == Repr::Log2 {
                Repr::Log2
            } else {
                Repr::Linear
            },
        }
    }

    /// Intersection with another enclosure of the same quantity. The
    /// estimate and bookkeeping fields are kept from `self`.
    pub fn intersect(&self, other: &Enclosure) -> Enclosure {
        let mut e = *self;
        if other.lo > e.lo {
            e.lo = other.lo;
            e.log2_lo = other.log2_lo.max(e.log2_lo);
        }
        if other.hi < e.hi {
            e.hi = other.hi;
            e.log2_hi = other.log2_hi.min(e.log2_hi);
        }
        e.lo = e.lo.min(e.estimate);
        e.hi = e.hi.max(e.estimate);
        e.certified = self.certified && other.certified;
        e
    }

    /// Enclosure of the negated quantity.
    pub fn neg(&self) -> Enclosure {
        Enclosure {
            lo: -self.hi,
            hi: -self.lo,
            log2_lo: f64::NAN,
            log2_hi: f64::NAN,
            estimate: -self.estimate,
            log2_estimate: f64::NAN,
            raw_lo: -self.raw_hi,
            raw_hi: -self.raw_lo,
            ..*self
        }
    }

    fn from_linear_run(run: &TransferRun, n: u32, level: u32) -> Self {
        let c = run.shift;
        let p = run.point.with_end();
        let pmin = p.iter().copied().fold(f64::INFINITY, f64::min);
        let pmax = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let estimate = c + trapezoid(p, false);
        let raw_lo = c + pmin;
        let raw_hi = c + pmax;
        let mut lo = (c + run.cell_lo.iter().copied().fold(f64::INFINITY, f64::min)).min(raw_lo);
        let mut hi = (c + run.cell_hi.iter().copied().fold(f64::NEG_INFINITY, f64::max)).max(raw_hi);
        if !run.certified {
            let pad = heuristic_pad(p);
            lo -= pad;
            hi += pad;
        }
        Self {
            lo,
            hi,
            log2_lo: lo.log2(),
            log2_hi: hi.log2(),
            estimate,
            log2_estimate: estimate.log2(),
            raw_lo,
            raw_hi,
            modulus_pad: (raw_lo - lo).max(hi - raw_hi),
            n_iterations: n,
            level,
            certified: run.certified,
            repr: Repr::Linear,
        }
    }

    fn from_log2_run(run: &TransferRun, n: u32, level: u32) -> Self {
        let c = run.shift;
        let p = run.point.with_end();
        let pmin = p.iter().copied().fold(f64::INFINITY, f64::min);
        let pmax = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log2_estimate = log2_add(c, trapezoid(p, true));
        let raw_lo = log2_add(c, pmin);
        let raw_hi = log2_add(c, pmax);
        let mut log2_lo = log2_add(c, run.cell_lo.iter().copied().fold(f64::INFINITY, f64::min)).min(raw_lo);
        let mut log2_hi = log2_add(c, run.cell_hi.iter().copied().fold(f64::NEG_INFINITY, f64::max)).max(raw_hi);
        if !run.certified {
            let pad = p
                .windows(2)
                .map(|w| (w[1] - w[0]).abs())
                .filter(|d| d.is_finite())
                .fold(0.0, f64::max);
            log2_lo -= pad;
            log2_hi += pad;
        }
        let (lo, hi) = (log2_lo.exp2(), log2_hi.exp2());
        let (rl, rh) = (raw_lo.exp2(), raw_hi.exp2());
        Self {
            lo,
            hi,
            log2_lo,
            log2_hi,
            estimate: log2_estimate.exp2(),
            log2_estimate,
            raw_lo: rl,
            raw_hi: rh,
            modulus_pad: (rl - lo).max(hi - rh),
            n_iterations: n,
            level,
            certified: run.certified,
            repr: Repr::Log2,
        }
    }
}

/// Heuristic off-grid widening: half the largest second difference.
fn heuristic_pad(p: &[f64]) -> f64 {
    p.windows(3)
        .map(|w| (w[0] - 2.0 * w[1] + w[2]).abs())
        .fold(0.0, f64::max)
        * 0.5
}

/// Bound on the modulus of `φ_g^n f` at scale `δ`, iterating
/// `(φ_g f)[δ] <= 2 |f| g[δ/2] + f[δ/2]`:
/// `f[δ/2^n] + 2 |f| Σ_{i=1}^{n} g[δ/2^i]`.
///
/// Because `φ_g` fixes constants, `sup_f` may be replaced by half the
/// oscillation of `f`; in particular a constant `f` gives 0.
pub fn modulus_propagation(
    f_modulus: &ModulusProfile,
    sup_f: f64,
    g_modulus: &ModulusProfile,
    n: u32,
    delta: f64,
) -> Result<f64> {
    let scale = |i: u32| delta * 2f64.powi(-(i as i32));
    let at = |p: &ModulusProfile, d: f64| p.lookup(d).ok_or(Error::MissingModulus { delta: d });
    let base = at(f_modulus, scale(n))?;
    if f_modulus.table.iter().all(|(_, v)| *v == 0.0) {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 1..=n {
        sum += at(g_modulus, scale(i))?;
    }
    Ok(base + 2.0 * sup_f * sum)
}

/// Evaluates `μ_g(f)` enclosures for one g-function; the regime (Dirac
/// measure or general) is decided once at construction.
#[derive(Debug, Clone)]
pub struct MeasureContext<'a> {
    g: &'a GFunction,
    kind: SpectralKind,
    assumed_good: bool,
}

impl<'a> MeasureContext<'a> {
    /// Fails with [`Error::NotGood`] unless `g` satisfies one of the
    /// uniqueness conditions or `assume_good` is set.
    pub fn new(g: &'a GFunction, assume_good: bool) -> Result<Self> {
        let verdict = match check_goodness(g) {
            Ok(report) => report.good,
            Err(Error::IncompleteZeroSpec) => false,
            Err(e) => return Err(e),
        };
        if !verdict && !assume_good {
            return Err(Error::NotGood(
                "uniqueness of the g-measure is not established (declare a complete zero set or assume good)"
                    .into(),
            ));
        }
        let kind = classify_unchecked(g, VALIDATION_LEVEL, DEFAULT_TOLERANCE)?.kind;
        Ok(Self {
            g,
            kind,
            assumed_good: !verdict,
        })
    }

    pub fn g(&self) -> &GFunction {
        self.g
    }

    pub fn kind(&self) -> SpectralKind {
        self.kind
    }

    /// True when goodness was assumed rather than verified.
    pub fn assumed_good(&self) -> bool {
        self.assumed_good
    }

    /// Enclosure of `μ_g(f)`; `repr = None` picks log₂ space only when the
    /// linear result underflows.
    pub fn mu(&self, f: &dyn TestFunction, n: u32, level: u32, repr: Option<Repr>) -> Result<Enclosure> {
        if self.kind == SpectralKind::Pp {
            // μ_g = δ_0, and φ_g^n f(0) = f(0) along the single surviving branch
            let v = point_transfer(self.g, f, n, 0, 0)?;
            let mut e = Enclosure::exact(v);
            e.n_iterations = n;
            e.level = level;
            return Ok(e);
        }
        let run = |repr: Repr| -> Result<Enclosure> {
            let opts = TransferOptions {
                repr,
                bounds: true,
                shift: true,
                ..TransferOptions::default()
            };
            let r = run_transfer(self.g, f, n, level, &opts)?;
            let e = match repr {
                Repr::Linear => Enclosure::from_linear_run(&r, n, level),
                Repr::Log2 => Enclosure::from_log2_run(&r, n, level),
            };
            if e.modulus_pad > e.raw_width() && e.raw_width() > 0.0 {
                log::debug!(
                    "off-grid widening {:e} exceeds the raw grid width {:e}",
                    e.modulus_pad,
                    e.raw_width()
                );
            }
            Ok(e)
        };
        match repr {
            Some(r) => run(r),
            None => {
                let e = run(Repr::Linear)?;
                let tiny = !(e.lo > 0.0) || e.log2_lo < LOG2_UNDERFLOW;
                if f.is_nonnegative() && tiny {
                    let l = run(Repr::Log2)?;
                    Ok(l.intersect(&e))
                } else {
                    Ok(e)
                }
            }
        }
    }
}

/// Enclosure of `μ_g(f)`, refusing g-functions not known to be good.
pub fn mu_of_function(g: &GFunction, f: &dyn TestFunction, n: u32, level: u32) -> Result<Enclosure> {
    MeasureContext::new(g, false)?.mu(f, n, level, None)
}
