//! g-functions on the circle: construction, validation, moduli of
//! continuity and power-law envelopes near the origin.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{dist_to_integer, sin_pi_dyadic, torus, SinPi};

/// Default tolerance for identity and zero checks.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Grid level used by validation scans unless a caller asks otherwise.
pub const VALIDATION_LEVEL: u32 = 14;

/// The closed-form g-functions shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    /// `½(1 − cos 2πx)`, the Thue–Morse g-function.
    Tm,
    /// `2x` on `[0, ½]`, `2(1 − x)` on `(½, 1)`.
    Tent,
    /// `√x`, `1 − √|x − ½|`, `√(1 − x)` on the three quarters.
    Sqrt,
    /// The constant `½`; its g-measure is Lebesgue measure.
    Half,
    /// `½(1 + cos 2πx)`; vanishes at `½`, so the g-measure is `δ_0`.
    Coshift,
}

impl Builtin {
    pub const ALL: [Builtin; 5] = [
        Builtin::Tm,
        Builtin::Tent,
        Builtin::Sqrt,
        Builtin::Half,
        Builtin::Coshift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Tm => "tm",
            Builtin::Tent => "tent",
            Builtin::Sqrt => "sqrt",
            Builtin::Half => "half",
            Builtin::Coshift => "coshift",
        }
    }

    fn valid_names() -> String {
        Self::ALL.iter().map(|b| b.name()).collect::<Vec<_>>().join(", ")
    }

    /// Evaluate from the distance `d ∈ [0, ½]` of `x` to the nearest integer.
    /// Every builtin satisfies `g(x) = g(1 − x)`.
    #[inline]
    fn eval_reduced(self, d: f64) -> f64 {
        match self {
            Builtin::Tm => {
                let s = (std::f64::consts::PI * d).sin();
                s * s
            }
            Builtin::Coshift => {
                let s = (std::f64::consts::PI * (0.5 - d)).sin();
                s * s
            }
            Builtin::Tent => 2.0 * d,
            Builtin::Sqrt => {
                if d <= 0.25 {
                    d.sqrt()
                } else {
                    1.0 - (0.5 - d).sqrt()
                }
            }
            Builtin::Half => 0.5,
        }
    }

    #[inline]
    fn eval_dyadic(self, t: u64, level: u32) -> f64 {
        if level == 0 {
            return self.eval_reduced(0.0);
        }
        let full = 1u64 << level;
        let t = t & (full - 1);
        let d = t.min(full - t);
        match self {
            Builtin::Tm => {
                let s = sin_pi_dyadic(d, level);
                s * s
            }
            Builtin::Coshift => {
                let s = sin_pi_dyadic((full >> 1) - d, level);
                s * s
            }
            _ => self.eval_reduced(d as f64 / full as f64),
        }
    }

    /// `out[u] = g((start + u) / 2^level)`.
    fn eval_dyadic_run(self, start: u64, level: u32, out: &mut [f64]) {
        if level < 2 {
            for (u, o) in out.iter_mut().enumerate() {
                *o = self.eval_dyadic(start + u as u64, level);
            }
            return;
        }
        let full = 1u64 << level;
        let mask = full - 1;
        let sin = SinPi::get();
        match self {
            Builtin::Tm => {
                for (u, o) in out.iter_mut().enumerate() {
                    let t = (start + u as u64) & mask;
                    let s = sin.eval(t.min(full - t), level);
                    *o = s * s;
                }
            }
            Builtin::Coshift => {
                for (u, o) in out.iter_mut().enumerate() {
                    let t = (start + u as u64) & mask;
                    let s = sin.eval((full >> 1) - t.min(full - t), level);
                    *o = s * s;
                }
            }
            _ => {
                for (u, o) in out.iter_mut().enumerate() {
                    *o = self.eval_dyadic(start + u as u64, level);
                }
            }
        }
    }

    fn max_value(self) -> f64 {
        match self {
            Builtin::Half => 0.5,
            _ => 1.0,
        }
    }

    /// Exact modulus of continuity on the torus.
    fn modulus(self, delta: f64) -> f64 {
        if delta <= 0.0 {
            return 0.0;
        }
        match self {
            Builtin::Tm | Builtin::Coshift => (std::f64::consts::PI * delta.min(0.5)).sin(),
            Builtin::Tent => (2.0 * delta).min(1.0),
            Builtin::Sqrt => {
                if delta <= 0.25 {
                    delta.sqrt()
                } else if delta <= 0.5 {
                    1.0 - (0.5 - delta).sqrt()
                } else {
                    1.0
                }
            }
            Builtin::Half => 0.0,
        }
    }

    fn sup_on(self, lo: f64, hi: f64) -> f64 {
        if hi - lo >= 1.0 {
            return self.max_value();
        }
        let peak = match self {
            Builtin::Half => return 0.5,
            Builtin::Coshift => 0.0,
            _ => 0.5,
        };
        if (lo - peak).ceil() <= hi - peak {
            return 1.0;
        }
        self.eval_reduced(dist_to_integer(lo))
            .max(self.eval_reduced(dist_to_integer(hi)))
    }

    fn local_modulus(self, lo: f64, hi: f64, delta: f64) -> f64 {
        let global = self.modulus(delta);
        if hi - lo >= 0.5 {
            return global;
        }
        match self {
            Builtin::Half => 0.0,
            Builtin::Tent => global,
            Builtin::Tm | Builtin::Coshift => {
                // |g'(x)| = π |sin 2πx|, maximal at the quarter points
                let s = if (2.0 * lo - 0.5).ceil() <= 2.0 * hi - 0.5 {
                    1.0
                } else {
                    let at = |x: f64| (std::f64::consts::PI * dist_to_integer(2.0 * x)).sin();
                    at(lo).max(at(hi))
                };
                global.min(std::f64::consts::PI * s * delta)
            }
            Builtin::Sqrt => {
                // |g'(x)| = 1 / (2 √dist(x, ½ℤ))
                if (2.0 * lo).ceil() <= 2.0 * hi {
                    global
                } else {
                    let d = (dist_to_integer(2.0 * lo) / 2.0).min(dist_to_integer(2.0 * hi) / 2.0);
                    global.min(delta / (2.0 * d.sqrt()))
                }
            }
        }
    }

    fn zero_spec(self) -> ZeroSpec {
        let zeros = match self {
            Builtin::Tm | Builtin::Tent | Builtin::Sqrt => vec![ZeroEntry::Rational(Ratio::new(0, 1))],
            Builtin::Half => vec![],
            Builtin::Coshift => vec![ZeroEntry::Rational(Ratio::new(1, 2))],
        };
        ZeroSpec {
            zeros,
            complete: true,
        }
    }

    fn envelope(self) -> Option<ScalingEnvelope> {
        match self {
            Builtin::Tm => Some(ScalingEnvelope {
                c1: 4.0,
                theta1: 2.0,
                c2: std::f64::consts::PI * std::f64::consts::PI,
                theta2: 2.0,
            }),
            Builtin::Tent => Some(ScalingEnvelope {
                c1: 2.0,
                theta1: 1.0,
                c2: 2.0,
                theta2: 1.0,
            }),
            Builtin::Sqrt => Some(ScalingEnvelope {
                c1: 1.0,
                theta1: 0.5,
                c2: std::f64::consts::SQRT_2,
                theta2: 0.5,
            }),
            Builtin::Half | Builtin::Coshift => None,
        }
    }
}

impl FromStr for Builtin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|b| b.name() == s.trim())
            .ok_or_else(|| Error::UnknownBuiltin {
                name: s.trim().to_string(),
                valid: Self::valid_names(),
            })
    }
}

/// One entry of a declared zero set.
#[derive(Debug, Clone, PartialEq)]
pub enum ZeroEntry {
    /// Exact rational zero in `[0, 1)`, kept in lowest terms.
    Rational(Ratio<u64>),
    /// Irrational zero localised in `[lo, hi]`; the flag records the user's
    /// assertion that its doubling orbit is not eventually periodic.
    Irrational {
        lo: f64,
        hi: f64,
        not_eventually_periodic: bool,
    },
}

impl ZeroEntry {
    /// A representative point (the rational itself or the bracket midpoint).
    pub fn point(&self) -> f64 {
        match self {
            ZeroEntry::Rational(q) => *q.numer() as f64 / *q.denom() as f64,
            ZeroEntry::Irrational { lo, hi, .. } => 0.5 * (lo + hi),
        }
    }

    /// Smallest interval known to contain the zero.
    pub fn bracket(&self) -> (f64, f64) {
        match self {
            ZeroEntry::Rational(_) => (self.point(), self.point()),
            ZeroEntry::Irrational { lo, hi, .. } => (*lo, *hi),
        }
    }
}

impl fmt::Display for ZeroEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZeroEntry::Rational(q) => write!(f, "{}/{}", q.numer(), q.denom()),
            ZeroEntry::Irrational { lo, hi, .. } => write!(f, "irr[{lo},{hi}]"),
        }
    }
}

impl FromStr for ZeroEntry {
    type Err = Error;

    /// `p/q`, `p`, or `irr:lo:hi`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |msg: String| Error::Parse { line: 0, msg };
        if let Some(rest) = s.strip_prefix("irr:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 2 {
                return Err(bad(format!("expected irr:lo:hi, got `{s}`")));
            }
            let lo: f64 = parts[0].parse().map_err(|_| bad(format!("bad bound `{}`", parts[0])))?;
            let hi: f64 = parts[1].parse().map_err(|_| bad(format!("bad bound `{}`", parts[1])))?;
            if !(0.0..1.0).contains(&lo) || !(lo..1.0).contains(&hi) {
                return Err(bad(format!("bracket [{lo}, {hi}] must lie in [0, 1)")));
            }
            return Ok(ZeroEntry::Irrational {
                lo,
                hi,
                not_eventually_periodic: true,
            });
        }
        let (p, q) = match s.split_once('/') {
            Some((p, q)) => (p.trim(), q.trim()),
            None => (s, "1"),
        };
        let p: u64 = p.parse().map_err(|_| bad(format!("bad numerator in `{s}`")))?;
        let q: u64 = q.parse().map_err(|_| bad(format!("bad denominator in `{s}`")))?;
        if q == 0 || p >= q && !(p == 0 && q == 1) {
            return Err(bad(format!("zero `{s}` must be a rational in [0, 1)")));
        }
        Ok(ZeroEntry::Rational(Ratio::new(p, q)))
    }
}

/// The declared zero set of a g-function.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZeroSpec {
    pub zeros: Vec<ZeroEntry>,
    /// Asserts that `zeros` is the full zero set.
    pub complete: bool,
}

/// Power-law envelope `c1·x^θ1 ≤ g(x) ≤ c2·x^θ2` on `[0, ½]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingEnvelope {
    pub c1: f64,
    pub theta1: f64,
    pub c2: f64,
    pub theta2: f64,
}

impl ScalingEnvelope {
    pub fn new(c1: f64, theta1: f64, c2: f64, theta2: f64) -> Result<Self> {
        let env = Self {
            c1,
            theta1,
            c2,
            theta2,
        };
        env.check()?;
        Ok(env)
    }

    pub fn check(&self) -> Result<()> {
        let all_positive = [self.c1, self.theta1, self.c2, self.theta2]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive {
            return Err(Error::InvalidArgument(
                "envelope constants must be positive and finite".into(),
            ));
        }
        if self.theta2 > self.theta1 {
            return Err(Error::InvalidArgument(format!(
                "envelope needs theta2 <= theta1, got {} > {}",
                self.theta2, self.theta1
            )));
        }
        Ok(())
    }

    /// `s = min{1, c1}`.
    pub fn lower_scale(&self) -> f64 {
        self.c1.min(1.0)
    }

    /// `S = max{1, c2}`.
    pub fn upper_scale(&self) -> f64 {
        self.c2.max(1.0)
    }
}

/// Tabulated modulus of continuity `δ ↦ f[δ]` at dyadic scales.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusProfile {
    /// `(δ, f[δ])`, scales decreasing.
    pub table: Vec<(f64, f64)>,
    /// `Σ_j f[2^-j δ]` over the tabulated scales.
    pub partial_sum: f64,
    /// Geometric extrapolation of the remaining tail.
    pub tail_estimate: f64,
    /// The tail is extrapolated, never certified.
    pub tail_extrapolated: bool,
    /// Table entries come from a closed-form modulus rather than a grid scan.
    pub certified_terms: bool,
}

impl ModulusProfile {
    /// Tabulate a closed-form modulus at `δ, δ/2, …, δ/2^depth`.
    pub fn from_fn(delta: f64, depth: u32, modulus: impl Fn(f64) -> f64) -> Self {
        let table = (0..=depth)
            .map(|j| {
                let s = delta * 2f64.powi(-(j as i32));
                (s, modulus(s))
            })
            .collect();
        Self::from_table(table, true)
    }

    pub fn from_table(table: Vec<(f64, f64)>, certified_terms: bool) -> Self {
        let partial_sum = table.iter().map(|(_, v)| v).sum();
        let tail_estimate = match table.len() {
            0 => f64::INFINITY,
            1 => {
                if table[0].1 == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            n => {
                let last = table[n - 1].1;
                let prev = table[n - 2].1;
                if last == 0.0 {
                    0.0
                } else if prev > 0.0 && last < prev {
                    let r = last / prev;
                    last * r / (1.0 - r)
                } else {
                    f64::INFINITY
                }
            }
        };
        Self {
            table,
            partial_sum,
            tail_estimate,
            tail_extrapolated: true,
            certified_terms,
        }
    }

    /// Entry at exactly `delta` (scales are dyadic multiples, so compare bitwise).
    pub fn lookup(&self, delta: f64) -> Option<f64> {
        self.table
            .iter()
            .find(|(d, _)| *d == delta)
            .map(|(_, v)| *v)
    }

    pub fn total_estimate(&self) -> f64 {
        self.partial_sum + self.tail_estimate
    }
}

/// A segment of a piecewise g-function on `[lo, hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub lo: f64,
    pub hi: f64,
    pub kind: SegmentKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmentKind {
    /// `Σ c_i x^i` in the absolute coordinate `x`.
    Poly(Vec<f64>),
    /// `Σ c_i cos(2π i x)`.
    Cos(Vec<f64>),
}

impl Segment {
    fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            SegmentKind::Poly(c) => c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci),
            SegmentKind::Cos(c) => c
                .iter()
                .enumerate()
                .map(|(i, ci)| ci * (2.0 * std::f64::consts::PI * i as f64 * x).cos())
                .sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Piecewise {
    segments: Vec<Segment>,
}

impl Piecewise {
    fn eval(&self, x: f64) -> f64 {
        let idx = self
            .segments
            .partition_point(|s| s.hi <= x)
            .min(self.segments.len() - 1);
        self.segments[idx].eval(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Formula {
    Builtin(Builtin),
    Piecewise(Piecewise),
}

/// An evaluatable g-function with its metadata. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GFunction {
    name: String,
    formula: Formula,
    zero_spec: ZeroSpec,
    envelope: Option<ScalingEnvelope>,
    symmetric: bool,
}

impl GFunction {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn builtin(&self) -> Option<Builtin> {
        match self.formula {
            Formula::Builtin(b) => Some(b),
            Formula::Piecewise(_) => None,
        }
    }

    pub fn zero_spec(&self) -> &ZeroSpec {
        &self.zero_spec
    }

    pub fn envelope(&self) -> Option<&ScalingEnvelope> {
        self.envelope.as_ref()
    }

    /// Declares `g(x) = g(1 − x)`.
    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn with_envelope(mut self, envelope: ScalingEnvelope) -> Self {
        self.envelope = Some(envelope);
        self
    }

    pub fn with_zero_spec(mut self, zero_spec: ZeroSpec) -> Self {
        self.zero_spec = zero_spec;
        self
    }

    /// `g(x)` for any real `x`, reduced to the torus.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.formula {
            Formula::Builtin(b) => b.eval_reduced(dist_to_integer(x)),
            Formula::Piecewise(p) => p.eval(torus(x)),
        }
    }

    /// `g(t / 2^level)`, with exact argument reduction on the integer.
    #[inline]
    pub fn eval_dyadic(&self, t: u64, level: u32) -> f64 {
        match &self.formula {
            Formula::Builtin(b) if level < 63 => b.eval_dyadic(t, level),
            _ => self.eval(t as f64 * 2f64.powi(-(level as i32))),
        }
    }

    /// `out[u] = g((start + u) / 2^level)` for a run of consecutive points.
    pub fn eval_dyadic_run(&self, start: u64, level: u32, out: &mut [f64]) {
        match &self.formula {
            Formula::Builtin(b) if level < 63 => b.eval_dyadic_run(start, level, out),
            _ => {
                for (u, o) in out.iter_mut().enumerate() {
                    *o = self.eval_dyadic(start + u as u64, level);
                }
            }
        }
    }

    /// The Riesz-product factor `h = 2g`.
    pub fn riesz_factor(&self, x: f64) -> f64 {
        2.0 * self.eval(x)
    }

    /// Certified modulus of continuity `g[δ]` on the torus, when known in
    /// closed form.
    pub fn modulus(&self, delta: f64) -> Option<f64> {
        match &self.formula {
            Formula::Builtin(b) => Some(b.modulus(delta)),
            Formula::Piecewise(_) => None,
        }
    }

    /// Certified bound on `|g(x) − g(y)|` for `x, y ∈ [lo, hi]`, `|x − y| ≤ δ`.
    pub fn local_modulus(&self, lo: f64, hi: f64, delta: f64) -> Option<f64> {
        match &self.formula {
            Formula::Builtin(b) => Some(b.local_modulus(lo, hi, delta)),
            Formula::Piecewise(_) => None,
        }
    }

    /// Certified `sup g` over the arc `[lo, hi]` (`hi − lo` may exceed 1).
    pub fn sup_on(&self, lo: f64, hi: f64) -> Option<f64> {
        match &self.formula {
            Formula::Builtin(b) => Some(b.sup_on(lo, hi)),
            Formula::Piecewise(_) => None,
        }
    }

    /// True when `g` is monotone on `[0, ½]` and on `[½, 1]`, so that its
    /// range over any dyadic cell of level `>= 1` is spanned by the two
    /// endpoint values.
    pub fn monotone_on_half_turns(&self) -> bool {
        matches!(self.formula, Formula::Builtin(_))
    }

    /// Sample `g` on the level-`m` grid `{j / 2^m}`.
    pub fn sample(&self, level: u32) -> Vec<f64> {
        (0..1u64 << level)
            .map(|t| self.eval_dyadic(t, level))
            .collect()
    }
}

/// Construct one of the builtin g-functions by name.
pub fn make_builtin(name: &str) -> Result<GFunction> {
    let b: Builtin = name.parse()?;
    Ok(from_builtin(b))
}

pub fn from_builtin(b: Builtin) -> GFunction {
    GFunction {
        name: b.name().to_string(),
        formula: Formula::Builtin(b),
        zero_spec: b.zero_spec(),
        envelope: b.envelope(),
        symmetric: !matches!(b, Builtin::Coshift),
    }
}

/// Optional metadata for a piecewise g-function.
#[derive(Debug, Clone, Default)]
pub struct PiecewiseMeta {
    pub name: Option<String>,
    pub zero_spec: ZeroSpec,
    pub symmetric: bool,
    pub envelope: Option<ScalingEnvelope>,
    pub tolerance: Option<f64>,
}

/// Build a piecewise g-function and run [`validate`] on it.
///
/// Segments must tile `[0, 1)` exactly; their order does not matter.
pub fn make_piecewise(
    mut segments: Vec<Segment>,
    meta: PiecewiseMeta,
) -> Result<(GFunction, ValidationReport)> {
    if segments.is_empty() {
        return Err(Error::CoverageGap { at: 0.0 });
    }
    for s in &segments {
        if !(s.lo < s.hi) || !s.lo.is_finite() || !s.hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "segment [{}, {}) is empty or not finite",
                s.lo, s.hi
            )));
        }
        let coeffs = match &s.kind {
            SegmentKind::Poly(c) | SegmentKind::Cos(c) => c,
        };
        if coeffs.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "segment [{}, {}) has no coefficients",
                s.lo, s.hi
            )));
        }
    }
    segments.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    if segments[0].lo > 0.0 {
        return Err(Error::CoverageGap { at: 0.0 });
    }
    if segments[0].lo < 0.0 {
        return Err(Error::Overlap { at: segments[0].lo });
    }
    for w in segments.windows(2) {
        if w[1].lo > w[0].hi {
            return Err(Error::CoverageGap { at: w[0].hi });
        }
        if w[1].lo < w[0].hi {
            return Err(Error::Overlap { at: w[1].lo });
        }
    }
    let last = segments.last().expect("non-empty").hi;
    if last < 1.0 {
        return Err(Error::CoverageGap { at: last });
    }
    if last > 1.0 {
        return Err(Error::Overlap { at: 1.0 });
    }

    let g = GFunction {
        name: meta.name.unwrap_or_else(|| "piecewise".to_string()),
        formula: Formula::Piecewise(Piecewise { segments }),
        zero_spec: meta.zero_spec,
        envelope: meta.envelope,
        symmetric: meta.symmetric,
    };
    let tolerance = meta.tolerance.unwrap_or(DEFAULT_TOLERANCE);
    let report = validate(&g, VALIDATION_LEVEL, tolerance);
    report.ensure(tolerance)?;
    Ok((g, report))
}

/// Parse the textual description `builtin:<name>` or
/// `piecewise:` followed by lines (newline- or `;`-separated):
///
/// ```text
/// zeros 0 1/3 irr:0.30:0.31    # optional; declares a complete zero set
/// symmetric                     # optional flag g(x) = g(1-x)
/// envelope c1 theta1 c2 theta2  # optional power-law envelope
/// tolerance 1e-9                # optional identity tolerance
/// lo hi poly c0 c1 ...          # Σ c_i x^i on [lo, hi)
/// lo hi cos  c0 c1 ...          # Σ c_i cos(2π i x) on [lo, hi)
/// ```
pub fn parse_description(text: &str) -> Result<GFunction> {
    let text = text.trim();
    if let Some(name) = text.strip_prefix("builtin:") {
        return make_builtin(name);
    }
    let body = text.strip_prefix("piecewise:").ok_or_else(|| Error::Parse {
        line: 1,
        msg: "description must start with `builtin:` or `piecewise:`".into(),
    })?;

    let mut meta = PiecewiseMeta::default();
    let mut segments = Vec::new();
    for (idx, raw) in body.split(['\n', ';']).enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse { line: line_no, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let nums = |items: &[&str]| -> Result<Vec<f64>> {
            items
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| perr(format!("bad number `{s}`"))))
                .collect()
        };
        match fields[0] {
            "zeros" => {
                meta.zero_spec.complete = true;
                for z in &fields[1..] {
                    let entry = z.parse::<ZeroEntry>().map_err(|e| match e {
                        Error::Parse { msg, .. } => perr(msg),
                        other => other,
                    })?;
                    meta.zero_spec.zeros.push(entry);
                }
            }
            "symmetric" => meta.symmetric = true,
            "name" => meta.name = fields.get(1).map(|s| s.to_string()),
            "tolerance" => {
                let v = nums(&fields[1..])?;
                meta.tolerance = v.first().copied();
            }
            "envelope" => {
                let v = nums(&fields[1..])?;
                if v.len() != 4 {
                    return Err(perr("envelope needs c1 theta1 c2 theta2".into()));
                }
                meta.envelope = Some(ScalingEnvelope::new(v[0], v[1], v[2], v[3])?);
            }
            _ => {
                if fields.len() < 4 {
                    return Err(perr(format!("expected `lo hi kind coeffs…`, got `{line}`")));
                }
                let bounds = nums(&fields[..2])?;
                let coeffs = nums(&fields[3..])?;
                let kind = match fields[2] {
                    "poly" => SegmentKind::Poly(coeffs),
                    "cos" => SegmentKind::Cos(coeffs),
                    other => return Err(perr(format!("unknown segment kind `{other}`"))),
                };
                segments.push(Segment {
                    lo: bounds[0],
                    hi: bounds[1],
                    kind,
                });
            }
        }
    }
    make_piecewise(segments, meta).map(|(g, _)| g)
}

/// Outcome of the grid checks run on a g-function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub level: u32,
    /// `max |g(x) + g(x + ½) − 1|` over the grid.
    pub identity_residual: f64,
    pub identity_witness: f64,
    /// First grid point where `g ∉ [0, 1]` (beyond tolerance).
    pub range_violation: Option<(f64, f64)>,
    /// `max |g(x) − g(1 − x)|` when the symmetry flag is set.
    pub symmetry_residual: Option<f64>,
    /// Zero-set sanity findings (never fatal).
    pub zero_warnings: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.identity_residual <= tolerance
            && self.range_violation.is_none()
            && self.symmetry_residual.map_or(true, |r| r <= tolerance)
    }

    fn ensure(&self, tolerance: f64) -> Result<()> {
        if self.identity_residual > tolerance {
            return Err(Error::IdentityResidual {
                residual: self.identity_residual,
                at: self.identity_witness,
                tolerance,
            });
        }
        if let Some((x, v)) = self.range_violation {
            return Err(Error::InvalidArgument(format!(
                "g({x}) = {v} lies outside [0, 1]"
            )));
        }
        if let Some(r) = self.symmetry_residual {
            if r > tolerance {
                return Err(Error::InvalidArgument(format!(
                    "symmetry flag contradicted: max |g(x) - g(1-x)| = {r:e}"
                )));
            }
        }
        Ok(())
    }
}

/// `max |g(x) + g(x + ½) − 1|` over the level-`m` grid, with the witnessing point.
pub fn identity_residual(g: &GFunction, level: u32) -> (f64, f64) {
    let level = level.max(1);
    let half = 1u64 << (level - 1);
    let mut worst = (0.0, 0.0);
    for t in 0..half {
        let r = (g.eval_dyadic(t, level) + g.eval_dyadic(t + half, level) - 1.0).abs();
        if r > worst.0 || r.is_nan() {
            worst = (r, t as f64 / (2 * half) as f64);
        }
    }
    worst
}

/// Max grid residual of the g-identity; `level >= 1`.
pub fn validate_g_identity(g: &GFunction, level: u32) -> Result<f64> {
    if level == 0 {
        return Err(Error::LevelZero);
    }
    Ok(identity_residual(g, level).0)
}

/// Run all grid checks (identity, range, symmetry, zero-set sanity).
pub fn validate(g: &GFunction, level: u32, tolerance: f64) -> ValidationReport {
    let level = level.max(1);
    let (identity_residual, identity_witness) = identity_residual(g, level);
    let n = 1u64 << level;
    let scale = 2f64.powi(-(level as i32));
    let values: Vec<f64> = (0..n).map(|t| g.eval_dyadic(t, level)).collect();

    let range_violation = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= -tolerance && **v <= 1.0 + tolerance))
        .map(|(t, v)| (t as f64 * scale, *v));

    let symmetry_residual = g.is_symmetric().then(|| {
        (1..n)
            .map(|t| (values[t as usize] - values[(n - t) as usize]).abs())
            .fold(0.0, f64::max)
    });

    let mut zero_warnings = Vec::new();
    for z in &g.zero_spec().zeros {
        let v = g.eval(z.point());
        if !(v.abs() < tolerance) {
            zero_warnings.push(format!("declared zero {z} has g = {v:e}"));
        }
    }
    const NEIGHBOURHOOD: f64 = 1.0 / 256.0;
    let near_declared = |x: f64| {
        g.zero_spec().zeros.iter().any(|z| {
            let (lo, hi) = z.bracket();
            let d = if x < lo {
                lo - x
            } else if x > hi {
                x - hi
            } else {
                0.0
            };
            d.min(1.0 - d) <= NEIGHBOURHOOD
        })
    };
    if let Some((t, v)) = values
        .iter()
        .enumerate()
        .find(|(t, v)| v.abs() < tolerance && !near_declared(*t as f64 * scale))
    {
        zero_warnings.push(format!(
            "g({}) = {v:e} but no zero is declared nearby",
            t as f64 * scale
        ));
    }
    if !g.zero_spec().complete {
        zero_warnings.push("zero set not declared complete".into());
    }

    ValidationReport {
        level,
        identity_residual,
        identity_witness,
        range_violation,
        symmetry_residual,
        zero_warnings,
    }
}

/// Grid estimate of a modulus of continuity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModulusEstimate {
    /// Max over grid pairs; never exceeds the true modulus.
    pub lower: f64,
    /// Closed-form modulus when available.
    pub upper: Option<f64>,
}

/// Maximum oscillation over all windows of `span + 1` consecutive samples.
/// With `periodic`, windows wrap around the end of the array.
pub fn window_oscillation(values: &[f64], span: usize, periodic: bool) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let global = || {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    };
    if span == 0 {
        return 0.0;
    }
    if (periodic && 2 * span >= n) || (!periodic && span + 1 >= n) {
        return global();
    }
    let len = if periodic { n + span } else { n };
    let at = |i: usize| values[i % n];
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut best = 0.0f64;
    for i in 0..len {
        let v = at(i);
        while maxq.back().is_some_and(|&j| at(j) <= v) {
            maxq.pop_back();
        }
        maxq.push_back(i);
        while minq.back().is_some_and(|&j| at(j) >= v) {
            minq.pop_back();
        }
        minq.push_back(i);
        if i >= span {
            let start = i - span;
            while maxq.front().is_some_and(|&j| j < start) {
                maxq.pop_front();
            }
            while minq.front().is_some_and(|&j| j < start) {
                minq.pop_front();
            }
            best = best.max(at(maxq[0]) - at(minq[0]));
        }
    }
    best
}

fn grid_span(delta: f64, level: u32) -> Result<usize> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1/2], got {delta}"
        )));
    }
    let spacing = 2f64.powi(-(level as i32));
    if spacing > delta {
        return Err(Error::GridTooCoarse { delta, level });
    }
    Ok((delta / spacing).floor() as usize)
}

/// Lower estimate of `g[δ]` from the level-`m` torus grid, upgraded with
/// the closed-form modulus where the builtin provides one.
pub fn estimate_modulus(g: &GFunction, delta: f64, level: u32) -> Result<ModulusEstimate> {
    let span = grid_span(delta, level)?;
    let values = g.sample(level);
    Ok(ModulusEstimate {
        lower: window_oscillation(&values, span, true),
        upper: g.modulus(delta),
    })
}

/// Same estimate for raw samples on `[0, 1]` (`values` includes both
/// endpoints when `periodic` is false).
pub fn estimate_grid_modulus(
    values: &[f64],
    periodic: bool,
    delta: f64,
    level: u32,
) -> Result<ModulusEstimate> {
    let span = grid_span(delta, level)?;
    Ok(ModulusEstimate {
        lower: window_oscillation(values, span, periodic),
        upper: None,
    })
}

/// Finest grid used when a modulus must be estimated by scanning.
const MAX_SCAN_LEVEL: u32 = 22;

/// Partial sums of `g[2^-j δ]` for `j = 0..=depth`, with a geometric tail.
pub fn estimate_summable_variation(g: &GFunction, delta: f64, depth: u32) -> Result<ModulusProfile> {
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be >= 1".into()));
    }
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1/2], got {delta}"
        )));
    }
    if g.modulus(delta).is_some() {
        return Ok(ModulusProfile::from_fn(delta, depth, |d| {
            g.modulus(d).expect("closed-form modulus")
        }));
    }
    let coarse = (-delta.log2()).ceil().max(0.0) as u32;
    let level = (coarse + depth).min(MAX_SCAN_LEVEL);
    let values = g.sample(level);
    let spacing = 2f64.powi(-(level as i32));
    let mut table = Vec::new();
    for j in 0..=depth {
        let s = delta * 2f64.powi(-(j as i32));
        if s < spacing {
            break;
        }
        let span = (s / spacing).floor() as usize;
        table.push((s, window_oscillation(&values, span, true)));
    }
    Ok(ModulusProfile::from_table(table, false))
}

/// Which side of the envelope failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeViolation {
    pub x: f64,
    pub g: f64,
    pub bound: f64,
    pub side: EnvelopeSide,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    pub envelope: ScalingEnvelope,
    pub fitted: bool,
    pub verified: bool,
    pub level: u32,
    pub violation: Option<EnvelopeViolation>,
}

/// Relative slack allowed at points where the envelope is attained exactly.
const ENVELOPE_SLACK: f64 = 1e-12;

/// Check `c1·x^θ1 ≤ g(x) ≤ c2·x^θ2` at every level-`m` grid point of
/// `(0, ½]`.
pub fn verify_envelope(g: &GFunction, env: &ScalingEnvelope, level: u32) -> Option<EnvelopeViolation> {
    let level = level.max(1);
    let scale = 2f64.powi(-(level as i32));
    for t in 1..=(1u64 << (level - 1)) {
        let x = t as f64 * scale;
        let v = g.eval_dyadic(t, level);
        let lower = env.c1 * x.powf(env.theta1);
        if v < lower * (1.0 - ENVELOPE_SLACK) {
            return Some(EnvelopeViolation {
                x,
                g: v,
                bound: lower,
                side: EnvelopeSide::Lower,
            });
        }
        let upper = env.c2 * x.powf(env.theta2);
        if v > upper * (1.0 + ENVELOPE_SLACK) {
            return Some(EnvelopeViolation {
                x,
                g: v,
                bound: upper,
                side: EnvelopeSide::Upper,
            });
        }
    }
    None
}

/// Verify a proposed envelope, or fit one (log-log slope near 0, then
/// constants tightened to the grid extremes) and verify it.
pub fn fit_or_verify_envelope(
    g: &GFunction,
    proposed: Option<&ScalingEnvelope>,
    level: u32,
) -> Result<EnvelopeReport> {
    let at_zero = g.eval(0.0);
    if at_zero.abs() > DEFAULT_TOLERANCE {
        return Err(Error::NoPowerLawScaling { value: at_zero });
    }
    let level = level.max(2);
    let (envelope, fitted) = match proposed {
        Some(env) => {
            env.check()?;
            (*env, false)
        }
        None => (fit_envelope(g, level)?, true),
    };
    let violation = verify_envelope(g, &envelope, level);
    Ok(EnvelopeReport {
        envelope,
        fitted,
        verified: violation.is_none(),
        level,
        violation,
    })
}

fn fit_envelope(g: &GFunction, level: u32) -> Result<ScalingEnvelope> {
    // least squares of log2 g(2^-j) against log2 x = -j over the finest octaves
    let first = level.saturating_sub(8).max(2);
    let pts: Vec<(f64, f64)> = (first..=level)
        .filter_map(|j| {
            let v = g.eval_dyadic(1, j);
            (v > 0.0).then(|| (-(j as f64), v.log2()))
        })
        .collect();
    if pts.len() < 2 {
        return Err(Error::DegenerateFit(
            "g vanishes identically near 0".into(),
        ));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let theta = sxy / sxx;
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::DegenerateFit(format!("fitted exponent {theta}")));
    }
    let scale = 2f64.powi(-(level as i32));
    let (mut c1, mut c2) = (f64::INFINITY, 0.0f64);
    for t in 1..=(1u64 << (level - 1)) {
        let x = t as f64 * scale;
        let ratio = g.eval_dyadic(t, level) / x.powf(theta);
        c1 = c1.min(ratio);
        c2 = c2.max(ratio);
    }
    if !(c1 > 0.0) {
        return Err(Error::DegenerateFit(
            "g has a zero in (0, 1/2]".into(),
        ));
    }
    ScalingEnvelope::new(c1, theta, c2, theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tent_segments() -> Vec<Segment> {
        vec![
            Segment {
                lo: 0.0,
                hi: 0.5,
                kind: SegmentKind::Poly(vec![0.0, 2.0]),
            },
            Segment {
                lo: 0.5,
                hi: 1.0,
                kind: SegmentKind::Poly(vec![2.0, -2.0]),
            },
        ]
    }

    #[test]
    fn builtin_spot_values() {
        assert_eq!(make_builtin("tm").unwrap().eval(0.5), 1.0);
        assert_eq!(make_builtin("tent").unwrap().eval(0.25), 0.5);
        assert_eq!(make_builtin("sqrt").unwrap().eval(0.25), 0.5);
        assert_eq!(make_builtin("half").unwrap().eval(0.3), 0.5);
        assert_eq!(make_builtin("coshift").unwrap().eval(0.0), 1.0);
        assert_eq!(make_builtin("coshift").unwrap().eval(0.5), 0.0);
    }

    #[test]
    fn unknown_builtin_lists_names() {
        let err = make_builtin("cantor").unwrap_err();
        match err {
            Error::UnknownBuiltin { valid, .. } => {
                for b in Builtin::ALL {
                    assert!(valid.contains(b.name()));
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn builtin_metadata() {
        for b in Builtin::ALL {
            let g = from_builtin(b);
            assert!(g.zero_spec().complete);
            let expect_zero = match b {
                Builtin::Half => None,
                Builtin::Coshift => Some(0.5),
                _ => Some(0.0),
            };
            assert_eq!(g.zero_spec().zeros.first().map(|z| z.point()), expect_zero);
            assert_eq!(g.is_symmetric(), b != Builtin::Coshift);
            assert_eq!(
                g.envelope().is_some(),
                matches!(b, Builtin::Tm | Builtin::Tent | Builtin::Sqrt)
            );
        }
    }

    #[test]
    fn dyadic_and_float_evaluation_agree() {
        for b in Builtin::ALL {
            let g = from_builtin(b);
            for level in [0, 1, 3, 10, 30] {
                for t in [0u64, 1, 2, 5, 7, 1 << 20, (1 << 29) + 3] {
                    let x = (t as f64) * 2f64.powi(-(level as i32));
                    let a = g.eval_dyadic(t, level);
                    let b2 = g.eval(x);
                    assert!(
                        (a - b2).abs() <= 1e-15 * a.abs().max(1e-300) + 1e-300
                            || (a - b2).abs() < 4.0 * f64::EPSILON,
                        "{}: t={t} level={level}: {a} vs {b2}",
                        g.name()
                    );
                }
            }
        }
    }

    #[test]
    fn identity_residuals() {
        let tm = make_builtin("tm").unwrap();
        assert!(validate_g_identity(&tm, 12).unwrap() < 1e-12);
        let tent = make_builtin("tent").unwrap();
        assert_eq!(validate_g_identity(&tent, 12).unwrap(), 0.0);
        assert!(matches!(validate_g_identity(&tent, 0), Err(Error::LevelZero)));
        for b in Builtin::ALL {
            let g = from_builtin(b);
            let r = validate(&g, VALIDATION_LEVEL, DEFAULT_TOLERANCE);
            assert!(r.passed(DEFAULT_TOLERANCE), "{b:?}: {r:?}");
            assert!(r.identity_residual < 1e-9);
            if let Some(s) = r.symmetry_residual {
                assert!(s < 1e-12, "{b:?} symmetry residual {s}");
            }
            assert!(r.zero_warnings.is_empty(), "{b:?}: {:?}", r.zero_warnings);
        }
    }

    #[test]
    fn piecewise_tent_matches_builtin() {
        let (g, report) = make_piecewise(tent_segments(), PiecewiseMeta::default()).unwrap();
        assert_eq!(report.identity_residual, 0.0);
        let tent = make_builtin("tent").unwrap();
        for t in 0..(1u64 << 12) {
            assert_eq!(g.eval_dyadic(t, 12), tent.eval_dyadic(t, 12));
        }
    }

    #[test]
    fn identity_map_is_rejected_with_half_residual() {
        let segs = vec![Segment {
            lo: 0.0,
            hi: 1.0,
            kind: SegmentKind::Poly(vec![0.0, 1.0]),
        }];
        match make_piecewise(segs, PiecewiseMeta::default()) {
            Err(Error::IdentityResidual { residual, at, .. }) => {
                assert_eq!(residual, 0.5);
                assert_eq!(at, 0.0);
            }
            other => panic!("expected identity rejection, got {other:?}"),
        }
    }

    #[test]
    fn coverage_errors() {
        assert_eq!(
            make_piecewise(vec![], PiecewiseMeta::default()).unwrap_err(),
            Error::CoverageGap { at: 0.0 }
        );
        let mut gap = tent_segments();
        gap[1].lo = 0.6;
        assert_eq!(
            make_piecewise(gap, PiecewiseMeta::default()).unwrap_err(),
            Error::CoverageGap { at: 0.5 }
        );
        let mut overlap = tent_segments();
        overlap[1].lo = 0.4;
        assert_eq!(
            make_piecewise(overlap, PiecewiseMeta::default()).unwrap_err(),
            Error::Overlap { at: 0.4 }
        );
        let mut short = tent_segments();
        short[1].hi = 0.9;
        assert_eq!(
            make_piecewise(short, PiecewiseMeta::default()).unwrap_err(),
            Error::CoverageGap { at: 0.9 }
        );
    }

    #[test]
    fn parse_builtin_and_piecewise() {
        assert_eq!(parse_description("builtin:tm").unwrap().name(), "tm");
        let g = parse_description(
            "piecewise:\nzeros 0\nsymmetric\nenvelope 2 1 2 1\n0 0.5 poly 0 2\n0.5 1 poly 2 -2\n",
        )
        .unwrap();
        assert!(g.is_symmetric());
        assert!(g.zero_spec().complete);
        assert_eq!(g.envelope().unwrap().c1, 2.0);
        assert_eq!(g.eval(0.25), 0.5);

        let tm = parse_description("piecewise: zeros 0; 0 1 cos 0.5 -0.5").unwrap();
        assert!((tm.eval(0.5) - 1.0).abs() < 1e-15);
        assert!(!tm.zero_spec().zeros.is_empty());

        assert!(matches!(
            parse_description("piecewise:\n0 1 spline 1"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(parse_description("tm"), Err(Error::Parse { .. })));
        assert!(matches!(
            parse_description("builtin:nope"),
            Err(Error::UnknownBuiltin { .. })
        ));
    }

    #[test]
    fn zero_entry_parsing() {
        assert_eq!(
            "2/6".parse::<ZeroEntry>().unwrap(),
            ZeroEntry::Rational(Ratio::new(1, 3))
        );
        assert_eq!("0".parse::<ZeroEntry>().unwrap(), ZeroEntry::Rational(Ratio::new(0, 1)));
        assert!("3/2".parse::<ZeroEntry>().is_err());
        assert!("1/0".parse::<ZeroEntry>().is_err());
        assert!(matches!(
            "irr:0.3:0.31".parse::<ZeroEntry>().unwrap(),
            ZeroEntry::Irrational { .. }
        ));
    }

    #[test]
    fn undeclared_zero_is_flagged() {
        // tent with an empty (but complete) zero set
        let meta = PiecewiseMeta {
            zero_spec: ZeroSpec {
                zeros: vec![],
                complete: true,
            },
            ..Default::default()
        };
        let (_, report) = make_piecewise(tent_segments(), meta).unwrap();
        assert!(report.zero_warnings.iter().any(|w| w.contains("no zero is declared")));
    }

    #[test]
    fn modulus_estimates() {
        let tent = make_builtin("tent").unwrap();
        let est = estimate_modulus(&tent, 2f64.powi(-5), 12).unwrap();
        assert_eq!(est.lower, 2f64.powi(-4));
        assert_eq!(est.upper, Some(2f64.powi(-4)));

        let half = make_builtin("half").unwrap();
        assert_eq!(estimate_modulus(&half, 0.1, 10).unwrap().lower, 0.0);

        let tm = make_builtin("tm").unwrap();
        assert_eq!(estimate_modulus(&tm, 0.5, 8).unwrap().lower, 1.0);

        assert!(matches!(
            estimate_modulus(&tm, 2f64.powi(-10), 8),
            Err(Error::GridTooCoarse { .. })
        ));
    }

    /// O(N·span) pair scan used as an oracle for the sliding-window version.
    fn brute_oscillation(values: &[f64], span: usize, periodic: bool) -> f64 {
        let n = values.len();
        let mut best = 0.0f64;
        for i in 0..n {
            for d in 0..=span {
                let j = i + d;
                if j >= n && !periodic {
                    break;
                }
                best = best.max((values[i] - values[j % n]).abs());
            }
        }
        best
    }

    #[test]
    fn sliding_window_matches_pair_scan() {
        let tm = make_builtin("tm").unwrap();
        let sq = make_builtin("sqrt").unwrap();
        for g in [&tm, &sq] {
            let v = g.sample(8);
            for span in [1, 3, 17, 100, 127, 128] {
                for periodic in [true, false] {
                    let fast = window_oscillation(&v, span, periodic);
                    let slow = brute_oscillation(&v, span.min(v.len()), periodic);
                    assert_eq!(fast, slow, "span {span} periodic {periodic}");
                }
            }
        }
    }

    #[test]
    fn closed_form_moduli_bound_grid_scans() {
        for b in Builtin::ALL {
            let g = from_builtin(b);
            let v = g.sample(12);
            for j in 1..=10 {
                let delta = 2f64.powi(-j);
                let span = (delta * 4096.0) as usize;
                let grid = window_oscillation(&v, span, true);
                let closed = g.modulus(delta).unwrap();
                assert!(grid <= closed + 1e-15, "{b:?} δ=2^-{j}: {grid} > {closed}");
                assert!(grid >= 0.9 * closed - 1e-12, "{b:?} δ=2^-{j}: {grid} ≪ {closed}");
            }
        }
    }

    #[test]
    fn local_modulus_and_sup_are_sound() {
        // random-ish arcs checked against dense sampling
        for b in [Builtin::Tm, Builtin::Tent, Builtin::Sqrt, Builtin::Coshift] {
            let g = from_builtin(b);
            for (lo, len) in [(0.0, 0.01), (0.2, 0.1), (0.49, 0.02), (0.9, 0.2), (1.3, 0.05), (0.26, 0.2)] {
                let hi = lo + len;
                let pts: Vec<f64> = (0..=2000).map(|i| lo + len * i as f64 / 2000.0).collect();
                let sup = pts.iter().map(|&x| g.eval(x)).fold(0.0, f64::max);
                assert!(g.sup_on(lo, hi).unwrap() >= sup - 1e-15, "{b:?} sup on [{lo},{hi}]");
                let delta = len / 200.0;
                let mut osc = 0.0f64;
                for w in pts.windows(11) {
                    osc = osc.max((g.eval(w[0]) - g.eval(w[10])).abs());
                }
                let local = g.local_modulus(lo, hi, delta).unwrap();
                assert!(local >= osc * (1.0 - 1e-9), "{b:?} local on [{lo},{hi}]: {local} < {osc}");
                assert!(local <= g.modulus(delta).unwrap() + 1e-15);
            }
        }
    }

    #[test]
    fn summable_variation_profiles() {
        let half = make_builtin("half").unwrap();
        assert_eq!(estimate_summable_variation(&half, 0.5, 10).unwrap().partial_sum, 0.0);

        let tent = make_builtin("tent").unwrap();
        let p = estimate_summable_variation(&tent, 0.5, 20).unwrap();
        assert!((p.partial_sum - 2.0).abs() < 1e-5);
        assert!(p.tail_extrapolated);

        // tm: brute-force grid scan per scale, compared to the profile
        let tm = make_builtin("tm").unwrap();
        let p = estimate_summable_variation(&tm, 0.5, 20).unwrap();
        assert!(p.partial_sum.is_finite() && p.partial_sum < 3.0);
        let v = tm.sample(14);
        for (j, (delta, term)) in p.table.iter().enumerate().take(12) {
            let span = (delta * 16384.0) as usize;
            let grid = brute_oscillation(&v, span, true);
            assert!((grid - term).abs() < 1e-3 * term.max(1e-12), "j = {j}");
        }
        let ratio = p.table[20].1 / p.table[19].1;
        assert!((ratio - 0.5).abs() < 1e-3);

        // piecewise g falls back to a grid scan
        let (pw, _) = make_piecewise(tent_segments(), PiecewiseMeta::default()).unwrap();
        let q = estimate_summable_variation(&pw, 0.5, 8).unwrap();
        assert!(!q.certified_terms);
        assert!((q.partial_sum - p_tent_partial(8)).abs() < 1e-12);
    }

    fn p_tent_partial(depth: i32) -> f64 {
        (0..=depth).map(|j| 2f64.powi(-j)).sum()
    }

    #[test]
    fn guide_envelopes_verify() {
        for name in ["tm", "tent", "sqrt"] {
            let g = make_builtin(name).unwrap();
            let env = *g.envelope().unwrap();
            let report = fit_or_verify_envelope(&g, Some(&env), 14).unwrap();
            assert!(report.verified, "{name}: {:?}", report.violation);
            let fitted = fit_or_verify_envelope(&g, None, 14).unwrap();
            assert!(fitted.verified, "{name} fitted: {:?}", fitted);
        }
        let tm = make_builtin("tm").unwrap();
        let fitted = fit_or_verify_envelope(&tm, None, 14).unwrap();
        assert!((fitted.envelope.theta1 - 2.0).abs() < 1e-3);
        let sq = fit_or_verify_envelope(&make_builtin("sqrt").unwrap(), None, 14).unwrap();
        assert!((sq.envelope.theta1 - 0.5).abs() < 1e-3);
    }

    #[test]
    fn wrong_envelope_reports_witness() {
        let tm = make_builtin("tm").unwrap();
        let env = ScalingEnvelope::new(5.0, 2.0, 10.0, 2.0).unwrap();
        let report = fit_or_verify_envelope(&tm, Some(&env), 10).unwrap();
        assert!(!report.verified);
        let v = report.violation.unwrap();
        assert_eq!(v.side, EnvelopeSide::Lower);
        assert!(v.g < v.bound);

        let half = make_builtin("half").unwrap();
        assert!(matches!(
            fit_or_verify_envelope(&half, None, 10),
            Err(Error::NoPowerLawScaling { .. })
        ));
        assert!(ScalingEnvelope::new(1.0, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn envelope_verification_is_monotone_in_level() {
        let tm = make_builtin("tm").unwrap();
        let env = ScalingEnvelope::new(4.0, 2.0, 9.5, 2.0).unwrap();
        let mut verified_fine = None;
        for level in (2..=14).rev() {
            let ok = verify_envelope(&tm, &env, level).is_none();
            if let Some(true) = verified_fine {
                assert!(ok, "verified at a finer level but not at {level}");
            }
            verified_fine = Some(ok);
        }
    }
}
