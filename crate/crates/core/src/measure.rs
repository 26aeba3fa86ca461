//! Quantities derived from the g-measure: dyadic interval masses, the
//! distribution function, Fourier coefficients and the Thue–Morse
//! autocorrelation.

use num_rational::Ratio;
use serde::Serialize;

use crate::classify::SpectralKind;
use crate::error::{Error, Result};
use crate::gfunction::GFunction;
use crate::numeric::{fmt_float, log2_add, sin_cos_2pi_dyadic, Compensated};
use crate::transfer::{
    density_g_n, Constant, Cosine, Enclosure, MeasureContext, Repr, Sine, TestFunction,
};

/// The test function whose integral is the mass of `[j/2^k, (j+1)/2^k)`:
/// `f(x) = Π_{i<k} g((x + j) / 2^{k-i})`, i.e. `φ_g^k` applied to the
/// indicator of the interval.
#[derive(Debug, Clone, Copy)]
pub struct DyadicCell<'a> {
    g: &'a GFunction,
    j: u64,
    k: u32,
}

impl<'a> DyadicCell<'a> {
    pub fn new(g: &'a GFunction, j: u64, k: u32) -> Result<Self> {
        if k > 40 {
            return Err(Error::InvalidArgument(format!("dyadic level {k} exceeds 40")));
        }
        if j >> k != 0 {
            return Err(Error::InvalidArgument(format!("index {j} out of range for level {k}")));
        }
        Ok(Self { g, j, k })
    }

    fn factor(&self, t: u64, level: u32, i: u32) -> f64 {
        self.g.eval_dyadic((self.j << level) + t, level + self.k - i)
    }
}

impl TestFunction for DyadicCell<'_> {
    fn value(&self, t: u64, level: u32) -> f64 {
        (0..self.k).map(|i| self.factor(t, level, i)).product()
    }

    fn log2_value(&self, t: u64, level: u32) -> f64 {
        (0..self.k).map(|i| self.factor(t, level, i).log2()).sum()
    }

    fn is_nonnegative(&self) -> bool {
        true
    }

    fn fill(
        &self,
        level: u32,
        start: u64,
        log2: bool,
        points: &mut [f64],
        bounds: Option<(&mut [f64], &mut [f64])>,
    ) -> bool {
        let unit = if log2 { 0.0 } else { 1.0 };
        if self.k == 0 {
            points.fill(unit);
        }
        let mut factor = if self.k > 1 { vec![0.0; points.len()] } else { Vec::new() };
        let mut bounds = bounds;
        if let Some((lo, hi)) = bounds.as_mut() {
            lo.fill(unit);
            hi.fill(unit);
        }
        let base = (self.j << level) + start;
        for i in 0..self.k {
            let target: &mut [f64] = if i == 0 { &mut *points } else { &mut factor };
            self.g.eval_dyadic_run(base, level + self.k - i, target);
            if log2 {
                target.iter_mut().for_each(|a| *a = a.log2());
            }
            if i > 0 {
                if log2 {
                    points.iter_mut().zip(&factor).for_each(|(p, a)| *p += a);
                } else {
                    points.iter_mut().zip(&factor).for_each(|(p, a)| *p *= a);
                }
            }
            let factor: &[f64] = if i == 0 { &*points } else { &factor };
            if let Some((lo, hi)) = bounds.as_mut() {
                for u in 0..lo.len() {
                    let (a, b) = (factor[u], factor[u + 1]);
                    if log2 {
                        lo[u] += a.min(b);
                        hi[u] += a.max(b);
                    } else {
                        lo[u] *= a.min(b);
                        hi[u] *= a.max(b);
                    }
                }
            }
        }
        // each factor ranges over a dyadic cell inside a half turn, where
        // a monotone g attains its extremes at the endpoints
        self.g.monotone_on_half_turns()
    }
}

/// Enclosure of `μ_g([j/2^k, (j+1)/2^k))`.
pub fn dyadic_interval_mass(g: &GFunction, j: u64, k: u32, n: u32, level: u32) -> Result<Enclosure> {
    let ctx = MeasureContext::new(g, false)?;
    interval_mass(&ctx, j, k, n, level)
}

/// [`dyadic_interval_mass`] with an existing context.
pub fn interval_mass(ctx: &MeasureContext, j: u64, k: u32, n: u32, level: u32) -> Result<Enclosure> {
    if k == 0 {
        return ctx.mu(&Constant(1.0), n, level, Some(Repr::Linear));
    }
    let cell = DyadicCell::new(ctx.g(), j, k)?;
    ctx.mu(&cell, n, level, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MassMethod {
    Certified,
    Quadrature,
}

/// Masses of all `2^k` dyadic intervals of one level.
#[derive(Debug, Clone, Serialize)]
pub struct DyadicMassVector {
    pub level: u32,
    pub masses: Vec<Enclosure>,
    pub method: MassMethod,
    /// Intervals whose width target was not reached.
    pub warnings: Vec<String>,
}

impl DyadicMassVector {
    /// Sum of all masses.
    pub fn total(&self) -> Enclosure {
        let mut it = self.masses.iter();
        let first = *it.next().expect("mass vector is never empty");
        it.fold(first, |acc, m| acc.sum(m))
    }

    /// Compensated sum of the central estimates.
    pub fn total_estimate(&self) -> f64 {
        let mut acc = Compensated::new();
        self.masses.iter().for_each(|m| acc.add(m.estimate));
        acc.value()
    }
}

/// Iteration parameters for certified mass vectors.
#[derive(Debug, Clone, Copy)]
pub struct MassOptions {
    pub n: u32,
    pub level: u32,
    /// Intervals wider than this are recomputed with more iterations.
    pub target_width: Option<f64>,
    pub max_n: u32,
}

impl Default for MassOptions {
    fn default() -> Self {
        Self {
            n: 12,
            level: 6,
            target_width: None,
            max_n: 20,
        }
    }
}

/// Certified masses of the level-`k` dyadic intervals.
pub fn mass_vector_certified(ctx: &MeasureContext, k: u32, opts: &MassOptions) -> Result<DyadicMassVector> {
    let mut masses = Vec::with_capacity(1 << k);
    let mut warnings = Vec::new();
    for j in 0..(1u64 << k) {
        let mut n = opts.n;
        let mut e = interval_mass(ctx, j, k, n, opts.level)?;
        if let Some(target) = opts.target_width {
            while e.width() > target && n + 2 <= opts.max_n {
                n += 2;
                e = interval_mass(ctx, j, k, n, opts.level)?;
            }
            if e.width() > target {
                let msg = format!(
                    "interval {j} at level {k}: width {:e} above target {:e} after {n} iterations",
                    e.width(),
                    target
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        masses.push(e);
    }
    Ok(DyadicMassVector {
        level: k,
        masses,
        method: MassMethod::Certified,
        warnings,
    })
}

/// Masses from binning the Riesz-product density `g_N` sampled at `level`
/// (left-point rule, half-open cells). Not certified.
pub fn mass_vector_quadrature(g: &GFunction, k: u32, big_n: u32, level: u32) -> Result<DyadicMassVector> {
    if level < k {
        return Err(Error::GridTooCoarse {
            delta: 2f64.powi(-(k as i32)),
            level,
        });
    }
    let mut warnings = Vec::new();
    if level < big_n + 8 {
        let msg = format!("quadrature level {level} below N + 8 = {}; aliasing possible", big_n + 8);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let density = density_g_n(g, big_n, level, false);
    let per = 1usize << (level - k);
    let step = 2f64.powi(-(level as i32));
    let masses = density
        .values()
        .chunks(per)
        .map(|chunk| {
            let mut acc = Compensated::new();
            chunk.iter().for_each(|v| acc.add(*v));
            let mut e = Enclosure::exact(acc.value() * step);
            e.certified = false;
            e.n_iterations = big_n;
            e.level = level;
            e
        })
        .collect();
    Ok(DyadicMassVector {
        level: k,
        masses,
        method: MassMethod::Quadrature,
        warnings,
    })
}

/// Indices `j` at which the parent mass fails to overlap the sum of its
/// two children. Empty when the vectors are consistent.
pub fn refinement_violations(parent: &DyadicMassVector, child: &DyadicMassVector) -> Result<Vec<u64>> {
    if child.level != parent.level + 1 {
        return Err(Error::InvalidArgument(format!(
            "child level {} is not parent level {} + 1",
            child.level, parent.level
        )));
    }
    Ok(parent
        .masses
        .iter()
        .enumerate()
        .filter(|(j, p)| !p.overlaps(&child.masses[2 * j].sum(&child.masses[2 * j + 1])))
        .map(|(j, _)| j as u64)
        .collect())
}

/// Values of the distribution function `F(x) = μ_g([0, x])` on the grid
/// `x = j / 2^k`, `j = 0..=2^k`.
#[derive(Debug, Clone, Serialize)]
pub struct CdfTable {
    pub level: u32,
    pub values: Vec<Enclosure>,
    /// `log₂` of the central estimate at each grid point.
    pub log2_values: Vec<f64>,
}

impl CdfTable {
    /// Enclosure of `F(x)` at an arbitrary `x ∈ [0, 1]`, using that `F` is
    /// non-decreasing between grid points.
    pub fn at(&self, x: f64) -> Result<Enclosure> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidArgument(format!("F evaluated at {x} outside [0, 1]")));
        }
        let scaled = x * 2f64.powi(self.level as i32);
        let j = scaled.floor() as usize;
        if scaled == j as f64 {
            return Ok(self.values[j]);
        }
        let (a, b) = (&self.values[j], &self.values[j + 1]);
        let mut e = *a;
        e.hi = b.hi;
        e.log2_hi = b.log2_hi;
        e.raw_hi = b.raw_hi;
        e.estimate = a.estimate + (b.estimate - a.estimate) * (scaled - j as f64);
        e.log2_estimate = e.estimate.log2();
        Ok(e)
    }
}

/// Builds `F` from interval masses. `atom` is `μ_g({0})`, which is the
/// value at `x = 0`; the half-open cell masses supply the rest.
pub fn cdf_from_masses(masses: &DyadicMassVector, atom: f64) -> CdfTable {
    let count = masses.masses.len();
    let (mut suffix_lo, mut suffix_hi) = (vec![0.0; count + 1], vec![0.0; count + 1]);
    let (mut acc_lo, mut acc_hi) = (Compensated::new(), Compensated::new());
    for j in (0..count).rev() {
        acc_lo.add(masses.masses[j].lo);
        acc_hi.add(masses.masses[j].hi);
        suffix_lo[j] = acc_lo.value();
        suffix_hi[j] = acc_hi.value();
    }

    let mut values = Vec::with_capacity(count + 1);
    let mut log2_values = Vec::with_capacity(count + 1);
    let mut at_zero = Enclosure::exact(atom);
    at_zero.level = masses.level;
    values.push(at_zero);
    log2_values.push(atom.log2());

    let (mut lo, mut hi, mut est) = (Compensated::new(), Compensated::new(), Compensated::new());
    let (mut l2lo, mut l2hi, mut l2est) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (j, m) in masses.masses.iter().enumerate() {
        lo.add(m.lo);
        hi.add(m.hi);
        est.add(m.estimate);
        l2lo = log2_add(l2lo, m.log2_lo);
        l2hi = log2_add(l2hi, m.log2_hi);
        l2est = log2_add(l2est, m.log2_estimate);
        let mut e = *m;
        // direct prefix sum versus the complement 1 - μ([x, 1))
        let (direct_lo, complement_lo) = (lo.value(), 1.0 - suffix_hi[j + 1]);
        let (direct_hi, complement_hi) = (hi.value(), 1.0 - suffix_lo[j + 1]);
        if direct_lo >= complement_lo {
            e.lo = direct_lo;
            e.log2_lo = if l2lo.is_nan() { direct_lo.log2() } else { l2lo };
        } else {
            e.lo = complement_lo;
            e.log2_lo = complement_lo.log2();
        }
        if direct_hi <= complement_hi {
            e.hi = direct_hi;
            e.log2_hi = if l2hi.is_nan() { direct_hi.log2() } else { l2hi };
        } else {
            e.hi = complement_hi;
            e.log2_hi = complement_hi.log2();
        }
        e.estimate = est.value().clamp(e.lo, e.hi);
        e.log2_estimate = if l2est.is_nan() { e.estimate.log2() } else { l2est };
        e.raw_lo = e.lo;
        e.raw_hi = e.hi;
        e.modulus_pad = 0.0;
        values.push(e);
        log2_values.push(e.log2_estimate);
    }
    CdfTable {
        level: masses.level,
        values,
        log2_values,
    }
}

/// `F` on the level-`k` grid from certified masses.
pub fn cdf(ctx: &MeasureContext, k: u32, opts: &MassOptions) -> Result<CdfTable> {
    let masses = mass_vector_certified(ctx, k, opts)?;
    let atom = if ctx.kind() == SpectralKind::Pp { 1.0 } else { 0.0 };
    Ok(cdf_from_masses(&masses, atom))
}

/// `κ = μ_g([1/2, 1])`. Exactly `1/2` when `g` is declared symmetric.
pub fn kappa(ctx: &MeasureContext, n: u32, level: u32) -> Result<Enclosure> {
    if ctx.kind() == SpectralKind::Pp {
        return Err(Error::InvalidArgument(
            "κ is not defined for a Dirac measure at 0".into(),
        ));
    }
    if ctx.g().is_symmetric() {
        return Ok(Enclosure::exact(0.5));
    }
    interval_mass(ctx, 1, 1, n, level)
}

/// One Fourier–Stieltjes coefficient `μ̂(m) = ∫ e^{-2πimx} dμ(x)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FourierCoefficient {
    pub frequency: u64,
    pub re: Enclosure,
    pub im: Enclosure,
}

#[derive(Debug, Clone, Serialize)]
pub struct FourierTable {
    pub coefficients: Vec<FourierCoefficient>,
}

/// Smallest grid level accepted for frequencies up to `max_freq`.
pub fn required_fourier_level(max_freq: u64) -> u32 {
    let bits = if max_freq <= 1 {
        0
    } else {
        64 - (max_freq - 1).leading_zeros()
    };
    bits + 4
}

/// Enclosures of `μ̂(m)` for `m = 0..=max_freq`. For symmetric `g` the
/// measure is reflection invariant and the imaginary parts vanish.
pub fn fourier_coefficients(ctx: &MeasureContext, max_freq: u64, n: u32, level: u32) -> Result<FourierTable> {
    let required = required_fourier_level(max_freq);
    if level < required {
        return Err(Error::Aliasing {
            frequency: max_freq as usize,
            level,
            required,
        });
    }
    let mut coefficients = Vec::with_capacity(max_freq as usize + 1);
    for m in 0..=max_freq {
        let (re, im) = if m == 0 {
            (Enclosure::exact(1.0), Enclosure::exact(0.0))
        } else {
            let re = ctx.mu(&Cosine(m), n, level, Some(Repr::Linear))?;
            let im = if ctx.g().is_symmetric() {
                Enclosure::exact(0.0)
            } else {
                ctx.mu(&Sine(m), n, level, Some(Repr::Linear))?.neg()
            };
            (re, im)
        };
        coefficients.push(FourierCoefficient { frequency: m, re, im });
    }
    Ok(FourierTable { coefficients })
}

/// Fourier coefficients of the density `g_N` by direct summation on the
/// level grid. Not certified; useful as a cross-check.
pub fn fourier_from_density(g: &GFunction, big_n: u32, level: u32, max_freq: u64) -> Result<FourierTable> {
    let required = required_fourier_level(max_freq);
    if level < required {
        return Err(Error::Aliasing {
            frequency: max_freq as usize,
            level,
            required,
        });
    }
    let density = density_g_n(g, big_n, level, false);
    let scale = 2f64.powi(-(level as i32));
    let coefficients = (0..=max_freq)
        .map(|m| {
            let (mut re, mut im) = (Compensated::new(), Compensated::new());
            for (t, v) in density.values().iter().enumerate() {
                let (s, c) = sin_cos_2pi_dyadic(m.wrapping_mul(t as u64), level);
                re.add(v * c);
                im.add(-v * s);
            }
            let wrap = |x: f64| {
                let mut e = Enclosure::exact(x * scale);
                e.certified = false;
                e.n_iterations = big_n;
                e.level = level;
                e
            };
            FourierCoefficient {
                frequency: m,
                re: wrap(re.value()),
                im: wrap(im.value()),
            }
        })
        .collect();
    Ok(FourierTable { coefficients })
}

/// Pairs `(m, 2m)` whose coefficients fail to overlap. Every g-measure is
/// invariant under doubling, so `μ̂(2m) = μ̂(m)`.
pub fn doubling_violations(table: &FourierTable) -> Vec<u64> {
    let c = &table.coefficients;
    (1..c.len())
        .filter(|&m| 2 * m < c.len())
        .filter(|&m| !(c[m].re.overlaps(&c[2 * m].re) && c[m].im.overlaps(&c[2 * m].im)))
        .map(|m| m as u64)
        .collect()
}

/// Exact autocorrelation of the ±1 Thue–Morse sequence,
/// `η(0) = 1`, `η(1) = -1/3`, `η(2m) = η(m)`,
/// `η(2m+1) = -(η(m) + η(m+1)) / 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AutocorrSeq {
    pub eta: Vec<Ratio<i64>>,
}

pub fn tm_autocorrelation(max_m: usize) -> AutocorrSeq {
    let mut eta = Vec::with_capacity(max_m + 1);
    eta.push(Ratio::from_integer(1));
    if max_m >= 1 {
        eta.push(Ratio::new(-1, 3));
    }
    for m in 2..=max_m {
        let v = if m % 2 == 0 {
            eta[m / 2]
        } else {
            let k = m / 2;
            -(eta[k] + eta[k + 1]) / 2
        };
        eta.push(v);
    }
    AutocorrSeq { eta }
}

pub fn mass_csv(v: &DyadicMassVector) -> String {
    let mut out = String::from("j,k,lo,hi,log2_mid\n");
    for (j, m) in v.masses.iter().enumerate() {
        out.push_str(&format!(
            "{j},{},{},{},{}\n",
            v.level,
            fmt_float(m.lo),
            fmt_float(m.hi),
            fmt_float(m.log2_estimate)
        ));
    }
    out
}

pub fn cdf_csv(t: &CdfTable) -> String {
    let mut out = String::from("x,F_lo,F_hi,log2F_mid\n");
    let scale = 2f64.powi(-(t.level as i32));
    for (j, e) in t.values.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_float(j as f64 * scale),
            fmt_float(e.lo),
            fmt_float(e.hi),
            fmt_float(t.log2_values[j])
        ));
    }
    out
}

pub fn fourier_csv(t: &FourierTable) -> String {
    let mut out = String::from("n,re_lo,re_hi,im_lo,im_hi\n");
    for c in &t.coefficients {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            c.frequency,
            fmt_float(c.re.lo),
            fmt_float(c.re.hi),
            fmt_float(c.im.lo),
            fmt_float(c.im.hi)
        ));
    }
    out
}

pub fn autocorr_csv(s: &AutocorrSeq) -> String {
    let mut out = String::from("m,eta_num,eta_den\n");
    for (m, e) in s.eta.iter().enumerate() {
        out.push_str(&format!("{m},{},{}\n", e.numer(), e.denom()));
    }
    out
}
