//! Two-sided super-polynomial bounds on `F_g(x) = μ_g([0, x])` near 0 and
//! the asymptotic slope of `log₂ F_g(2^-m)` against `m²`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gfunction::ScalingEnvelope;
use crate::measure::{kappa, DyadicCell};
use crate::numeric::fmt_float;
use crate::transfer::{Enclosure, MeasureContext, Repr, DEFAULT_MAX_TOTAL_LEVEL};

/// Closed-form lower and upper bounds on `log₂ F_g(x)` for a g with power-law
/// scaling envelope `env` and `κ = μ_g([1/2, 1])`.
///
/// With `L = log₂ x`, `s = min{1, c1}`, `S = max{1, c2}`:
/// lower `= log₂κ + log₂s − 2θ1 + (−θ1 L / 2 + 5θ1/2 − log₂s) L`,
/// upper `= (−θ2 L / 2 − θ2/2 − log₂S) L`.
pub fn theorem42_bounds(env: &ScalingEnvelope, kappa: f64, x: f64) -> Result<(f64, f64)> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::InvalidArgument(format!("bounds need 0 < x < 1, got {x}")));
    }
    log2_bounds(env, kappa, x.log2())
}

/// [`theorem42_bounds`] at `x = 2^log2_x`, usable far below the f64 range.
pub fn log2_bounds(env: &ScalingEnvelope, kappa: f64, log2_x: f64) -> Result<(f64, f64)> {
    env.check()?;
    if !(kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("κ must be positive, got {kappa}")));
    }
    if !(log2_x < 0.0) {
        return Err(Error::InvalidArgument(format!("bounds need x < 1, got 2^{log2_x}")));
    }
    let l = log2_x;
    let (t1, t2) = (env.theta1, env.theta2);
    let log_s = env.lower_scale().log2();
    let log_big_s = env.upper_scale().log2();
    let lower = kappa.log2() + log_s - 2.0 * t1 + (-0.5 * t1 * l + 2.5 * t1 - log_s) * l;
    let upper = (-0.5 * t2 * l - 0.5 * t2 - log_big_s) * l;
    Ok((lower, upper))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScalingRow {
    pub m: u32,
    pub log2_f_lo: f64,
    pub log2_f_hi: f64,
    pub log2_f_mid: f64,
    pub log2_lower: f64,
    pub log2_upper: f64,
    /// `log₂F / m²`.
    pub ratio: f64,
    /// Iterations used for the final enclosure.
    pub n: u32,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub envelope: ScalingEnvelope,
    pub kappa: Enclosure,
    /// The value of κ entering the lower bound.
    pub kappa_used: f64,
    /// Values of `m` whose sandwich failed or could not be decided.
    pub failures: Vec<u32>,
}

impl ScalingReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Step added to `n` when an enclosure is too wide to decide a row.
const RETRY_STEP: u32 = 4;

/// Encloses `log₂ F_g(2^-m)` for each `m` and checks
/// `lower < log₂F_lo <= log₂F_hi < upper`. Undecided rows are retried with
/// more iterations while the grid budget allows.
pub fn verify_bounds(
    ctx: &MeasureContext,
    env: &ScalingEnvelope,
    m_range: std::ops::RangeInclusive<u32>,
    n: u32,
    level: u32,
) -> Result<ScalingReport> {
    env.check()?;
    if m_range.is_empty() || *m_range.start() == 0 {
        return Err(Error::InvalidArgument("m range must be non-empty and start at 1 or above".into()));
    }
    let kappa_enc = kappa(ctx, n, level)?;
    let kappa_used = if ctx.g().is_symmetric() {
        0.5
    } else {
        kappa_enc.lo
    };
    if !(kappa_used > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "κ enclosure {:?} is not bounded away from 0",
            (kappa_enc.lo, kappa_enc.hi)
        )));
    }

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for m in m_range {
        let (lower, upper) = log2_bounds(env, kappa_used, -(m as f64))?;
        let cell = DyadicCell::new(ctx.g(), 0, m)?;
        let mut n_used = n;
        let (e, passed) = loop {
            let e = ctx.mu(&cell, n_used, level, Some(Repr::Log2))?;
            let passed = lower < e.log2_lo && e.log2_hi < upper;
            let decidable = e.log2_hi < lower || e.log2_lo > upper;
            let next = n_used + RETRY_STEP;
            if passed || decidable || next + level > DEFAULT_MAX_TOTAL_LEVEL {
                break (e, passed);
            }
            log::info!("m = {m}: sandwich undecided at n = {n_used}, retrying");
            n_used = next;
        };
        if !passed {
            log::warn!(
                "m = {m}: log2 F in [{}, {}] not strictly inside ({lower}, {upper})",
                e.log2_lo,
                e.log2_hi
            );
            failures.push(m);
        }
        rows.push(ScalingRow {
            m,
            log2_f_lo: e.log2_lo,
            log2_f_hi: e.log2_hi,
            log2_f_mid: e.log2_estimate,
            log2_lower: lower,
            log2_upper: upper,
            ratio: e.log2_estimate / (m as f64 * m as f64),
            n: n_used,
            passed,
        });
    }
    Ok(ScalingReport {
        rows,
        envelope: *env,
        kappa: kappa_enc,
        kappa_used,
        failures,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub m_min: u32,
    pub band: (f64, f64),
    pub in_band: bool,
}

/// Least-squares fit of `log₂F(2^-m) = a + b m²` over the report rows, with
/// the band `[−θ1/2 − 5θ1/(2 m_min), −θ2/2 + (θ2/2 + log₂S)/m_min]`.
pub fn asymptotic_fit(report: &ScalingReport) -> Result<SlopeFit> {
    let rows = &report.rows;
    if rows.len() < 4 {
        return Err(Error::DegenerateFit(format!("need at least 4 rows, got {}", rows.len())));
    }
    if rows.iter().any(|r| !r.log2_f_mid.is_finite()) {
        return Err(Error::DegenerateFit("non-finite log2 F value".into()));
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.m as f64).powi(2)).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.log2_f_mid).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all m values coincide".into()));
    }
    let slope = sxy / sxx;
    let m_min = rows.iter().map(|r| r.m).min().unwrap_or(1);
    let env = &report.envelope;
    let mm = m_min as f64;
    let band = (
        -0.5 * env.theta1 - 2.5 * env.theta1 / mm,
        -0.5 * env.theta2 + (0.5 * env.theta2 + env.upper_scale().log2()) / mm,
    );
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        m_min,
        band,
        in_band: band.0 <= slope && slope <= band.1,
    })
}

pub fn scaling_csv(report: &ScalingReport) -> String {
    let mut out = String::from("m,log2F_lo,log2F_hi,log2_lower,log2_upper,ratio\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.m,
            fmt_float(r.log2_f_lo),
            fmt_float(r.log2_f_hi),
            fmt_float(r.log2_lower),
            fmt_float(r.log2_upper),
            fmt_float(r.ratio)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gfunction::{from_builtin, Builtin};
    use std::f64::consts::PI;

    fn env(g: Builtin) -> ScalingEnvelope {
        *from_builtin(g).envelope().unwrap()
    }

    #[test]
    fn closed_forms_match_worked_examples() {
        for m in 1..=12 {
            let x = 2f64.powi(-m);
            let l = -(m as f64);
            let (lo, hi) = theorem42_bounds(&env(Builtin::Tm), 0.5, x).unwrap();
            assert!((lo - (-5.0 - l * l + 5.0 * l)).abs() < 1e-9);
            assert!((hi - (-l * l + (-1.0 - 2.0 * PI.log2()) * l)).abs() < 1e-9);
            let (lo, hi) = theorem42_bounds(&env(Builtin::Tent), 0.5, x).unwrap();
            assert!((lo - (-3.0 - 0.5 * l * l + 2.5 * l)).abs() < 1e-9);
            assert!((hi - (-0.5 * l * l - 1.5 * l)).abs() < 1e-9);
            let (lo, hi) = theorem42_bounds(&env(Builtin::Sqrt), 0.5, x).unwrap();
            assert!((lo - (-2.0 - 0.25 * l * l + 1.25 * l)).abs() < 1e-9);
            assert!((hi - (-0.25 * l * l - 0.75 * l)).abs() < 1e-9);
        }
        assert!(theorem42_bounds(&env(Builtin::Tm), 0.5, 1.0).is_err());
    }

    #[test]
    fn bounds_are_ordered() {
        for b in [Builtin::Tm, Builtin::Tent, Builtin::Sqrt] {
            for m in 1..=12 {
                let (lo, hi) = log2_bounds(&env(b), 0.5, -(m as f64)).unwrap();
                assert!(lo < hi, "{b:?} m = {m}");
            }
        }
    }

    #[test]
    fn tent_sandwich_holds() {
        let g = from_builtin(Builtin::Tent);
        let ctx = MeasureContext::new(&g, false).unwrap();
        let report = verify_bounds(&ctx, &env(Builtin::Tent), 1..=6, 12, 6).unwrap();
        assert!(report.passed(), "{:?}", report.failures);
        for w in report.rows.windows(2) {
            assert!(w[1].log2_f_hi < w[0].log2_f_lo);
        }
        assert!(scaling_csv(&report).starts_with("m,log2F_lo"));
    }

    #[test]
    fn lebesgue_fails_wrong_envelope() {
        let g = from_builtin(Builtin::Half);
        let ctx = MeasureContext::new(&g, false).unwrap();
        let report = verify_bounds(&ctx, &env(Builtin::Tm), 1..=8, 4, 4).unwrap();
        assert!(!report.passed());
        assert!(report.failures.contains(&8));
    }

    #[test]
    fn fit_recovers_exact_quadratic() {
        let e = env(Builtin::Tm);
        let rows = (6..=12)
            .map(|m| {
                let y = -(m as f64).powi(2) + 3.0 * m as f64;
                ScalingRow {
                    m,
                    log2_f_lo: y,
                    log2_f_hi: y,
                    log2_f_mid: y,
                    log2_lower: 0.0,
                    log2_upper: 0.0,
                    ratio: 0.0,
                    n: 0,
                    passed: true,
                }
            })
            .collect::<Vec<_>>();
        let report = ScalingReport {
            rows: rows.clone(),
            envelope: e,
            kappa: Enclosure::exact(0.5),
            kappa_used: 0.5,
            failures: vec![],
        };
        let fit = asymptotic_fit(&report).unwrap();
        assert!(fit.slope < -0.7 && fit.slope > -1.0);
        let short = ScalingReport { rows: rows[..3].to_vec(), ..report };
        assert!(matches!(asymptotic_fit(&short), Err(Error::DegenerateFit(_))));
    }
}
