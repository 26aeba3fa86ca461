//! Subcommand implementations. Each returns the text it emitted through
//! [`emit`], so output is byte-identical for identical settings.

use std::io::Write;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use gmeasure::classify::{check_goodness, classify_spectral_type, classify_unchecked};
use gmeasure::gfunction::{
    fit_or_verify_envelope, parse_description, validate as validate_g, GFunction, DEFAULT_TOLERANCE,
    VALIDATION_LEVEL,
};
use gmeasure::measure::{
    autocorr_csv, cdf as cdf_table, cdf_csv, doubling_violations, fourier_coefficients, fourier_csv,
    mass_csv, mass_vector_certified, mass_vector_quadrature, refinement_violations, required_fourier_level,
    tm_autocorrelation, MassOptions,
};
use gmeasure::numeric::fmt_float;
use gmeasure::scaling::{asymptotic_fit, scaling_csv, verify_bounds};
use gmeasure::transfer::{density_g_n, run_transfer, Constant, MeasureContext, TransferOptions};
use gmeasure::{Builtin, Error};

use crate::config::{resolve_g_text, CommonArgs, Format, Method, Settings};

pub enum Status {
    Ok,
    Failed,
}

/// 2 for malformed input or parameters, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(
            Error::UnknownBuiltin { .. }
            | Error::Parse { .. }
            | Error::InvalidArgument(_)
            | Error::MemoryCap { .. }
            | Error::Aliasing { .. }
            | Error::GridTooCoarse { .. }
            | Error::LevelZero
            | Error::IncompleteZeroSpec,
        ) => 2,
        Some(_) => 1,
        None if e.downcast_ref::<std::io::Error>().is_some() => 1,
        None => 2,
    }
}

fn load_g(s: &Settings) -> Result<GFunction> {
    let text = resolve_g_text(&s.g_spec()?)?;
    Ok(parse_description(&text)?)
}

fn emit(s: &Settings, text: &str) -> Result<()> {
    match s.out()? {
        Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn density(args: CommonArgs) -> Result<Status> {
    let s = Settings::load(args)?;
    let g = load_g(&s)?;
    let ns = s.n_list()?.unwrap_or_else(|| vec![1, 2, 3, 6, 11]);
    let level = s.level()?.unwrap_or(12);
    if level > 26 {
        bail!(Error::MemoryCap { total: level, cap: 26 });
    }
    let log2 = s.log2()?;
    let columns: Vec<Vec<f64>> = ns
        .iter()
        .map(|&n| density_g_n(&g, n, level, log2).values().to_vec())
        .collect();
    let scale = 2f64.powi(-(level as i32));
    let text = match s.format()? {
        Format::Csv => {
            let prefix = if log2 { "log2_g_" } else { "g_" };
            let mut out = String::from("x");
            for n in &ns {
                out.push_str(&format!(",{prefix}{n}"));
            }
            out.push('\n');
            for t in 0..(1usize << level) {
                out.push_str(&fmt_float(t as f64 * scale));
                for c in &columns {
                    out.push(',');
                    out.push_str(&fmt_float(c[t]));
                }
                out.push('\n');
            }
            out
        }
        Format::Json => to_json(&json!({
            "g": g.name(),
            "level": level,
            "log2": log2,
            "columns": ns.iter().zip(&columns).map(|(n, c)| json!({"n": n, "values": c})).collect::<Vec<_>>(),
        }))?,
    };
    emit(&s, &text)?;
    Ok(Status::Ok)
}

fn mass_options(s: &Settings) -> Result<MassOptions> {
    Ok(MassOptions {
        n: s.n(10)?,
        level: s.level()?.unwrap_or(4),
        ..MassOptions::default()
    })
}

pub fn mass(args: CommonArgs) -> Result<Status> {
    let s = Settings::load(args)?;
    let g = load_g(&s)?;
    let k = s.k(4)?;
    let v = match s.method()? {
        Method::Certified => {
            let ctx = MeasureContext::new(&g, s.assume_good()?)?;
            mass_vector_certified(&ctx, k, &mass_options(&s)?)?
        }
        Method::Quadrature => {
            let n = s.n(14)?;
            let level = s.level()?.unwrap_or(n + 8).max(k);
            if level > 26 {
                bail!(Error::MemoryCap { total: level, cap: 26 });
            }
            mass_vector_quadrature(&g, k, n, level)?
        }
    };
    let text = match s.format()? {
        Format::Csv => mass_csv(&v),
        Format::Json => to_json(&v)?,
    };
    emit(&s, &text)?;
    Ok(Status::Ok)
}

pub fn cdf(args: CommonArgs) -> Result<Status> {
    let s = Settings::load(args)?;
    let g = load_g(&s)?;
    let ctx = MeasureContext::new(&g, s.assume_good()?)?;
    let table = cdf_table(&ctx, s.k(8)?, &mass_options(&s)?)?;
    let text = match s.format()? {
        Format::Csv => cdf_csv(&table),
        Format::Json => to_json(&table)?,
    };
    emit(&s, &text)?;
    Ok(Status::Ok)
}

pub fn fourier(args: CommonArgs) -> Result<Status> {
    let s = Settings::load(args)?;
    let g = load_g(&s)?;
    let ctx = MeasureContext::new(&g, s.assume_good()?)?;
    let max_freq = s.max_freq(32)?;
    let level = s.level()?.unwrap_or_else(|| required_fourier_level(max_freq).max(9));
    let table = fourier_coefficients(&ctx, max_freq, s.n(14)?, level)?;
    let text = match s.format()? {
        Format::Csv => fourier_csv(&table),
        Format::Json => to_json(&table)?,
    };
    emit(&s, &text)?;
    Ok(Status::Ok)
}

pub fn autocorr_tm(args: CommonArgs) -> Result<Status> {
    let s = Settings::load(args)?;
    let (_, max_m) = s.m_range((0, 32))?;
    let seq = tm_autocorrelation(max_m as usize);
    let text = match s.format()? {
        Format::Csv => autocorr_csv(&seq),
        Format::Json => to_json(
            &seq.eta
                .iter()
                .enumerate()
                .map(|(m, e)| json!({"m": m, "eta_num": e.numer(), "eta_den": e.denom()}))
                .collect::<Vec<_>>(),
        )?,
    };
    emit(&s, &text)?;
    Ok(Status::Ok)
}

pub fn classify(args: CommonArgs) -> Result<Status> {
    let s = Settings::load(args)?;
    let g = load_g(&s)?;
    let goodness = match check_goodness(&g) {
        Ok(r) => Some(r),
        Err(Error::IncompleteZeroSpec) => None,
        Err(e) => return Err(e.into()),
    };
    let assume = s.assume_good()?;
    let (spectral, status, error) = if assume {
        (Some(classify_unchecked(&g, VALIDATION_LEVEL, DEFAULT_TOLERANCE)?), Status::Ok, None)
    } else {
        match classify_spectral_type(&g) {
            Ok(t) => (Some(t), Status::Ok, None),
            Err(e @ (Error::NotGood(_) | Error::IncompleteZeroSpec)) => (None, Status::Failed, Some(e.to_string())),
            Err(e) => return Err(e.into()),
        }
    };
    let text = to_json(&json!({
        "g": g.name(),
        "goodness": goodness,
        "assumed_good": assume,
        "spectral_type": spectral,
        "error": error,
    }))?;
    emit(&s, &text)?;
    Ok(status)
}

pub fn scaling(args: CommonArgs) -> Result<Status> {
    let s = Settings::load(args)?;
    let g = load_g(&s)?;
    let ctx = MeasureContext::new(&g, s.assume_good()?)?;
    let env = match g.envelope() {
        Some(env) => *env,
        None => {
            let report = fit_or_verify_envelope(&g, None, VALIDATION_LEVEL)?;
            if !report.verified {
                bail!(Error::InvalidArgument("fitted scaling envelope failed verification".into()));
            }
            report.envelope
        }
    };
    let (a, b) = s.m_range((1, 10))?;
    let report = verify_bounds(&ctx, &env, a..=b, s.n(12)?, s.level()?.unwrap_or(6))?;
    let fit = asymptotic_fit(&report).ok();
    if let Some(f) = &fit {
        eprintln!(
            "slope of log2 F against m^2: {:.6} (band [{:.6}, {:.6}], {})",
            f.slope,
            f.band.0,
            f.band.1,
            if f.in_band { "inside" } else { "outside" }
        );
    }
    let text = match s.format()? {
        Format::Csv => scaling_csv(&report),
        Format::Json => to_json(&json!({
            "g": g.name(),
            "report": report,
            "fit": fit,
            "passed": report.passed(),
        }))?,
    };
    emit(&s, &text)?;
    Ok(if report.passed() { Status::Ok } else { Status::Failed })
}

#[derive(Serialize)]
struct Check {
    check: &'static str,
    status: &'static str,
    detail: String,
}

impl Check {
    fn new(check: &'static str, passed: bool, detail: String) -> Self {
        Self {
            check,
            status: if passed { "pass" } else { "fail" },
            detail,
        }
    }

    fn skipped(check: &'static str, why: &str) -> Self {
        Self {
            check,
            status: "skip",
            detail: why.into(),
        }
    }
}

fn measure_checks(ctx: &MeasureContext, checks: &mut Vec<Check>) -> Result<()> {
    let g = ctx.g();
    let opts = MassOptions {
        n: 10,
        level: 4,
        ..MassOptions::default()
    };
    let vectors = (0..=4)
        .map(|k| mass_vector_certified(ctx, k, &opts))
        .collect::<gmeasure::Result<Vec<_>>>()?;
    let mut violations = 0;
    for w in vectors.windows(2) {
        violations += refinement_violations(&w[0], &w[1])?.len();
    }
    let last = vectors.last().expect("five levels");
    let total = last.total();
    let est = last.total_estimate();
    checks.push(Check::new(
        "refinement_consistency",
        violations == 0 && total.contains(1.0) && (est - 1.0).abs() < 1e-6,
        format!("{violations} violations, total mass estimate {est}"),
    ));

    let table = fourier_coefficients(ctx, 8, 12, 8)?;
    let doubling = doubling_violations(&table);
    checks.push(Check::new(
        "fourier_doubling",
        doubling.is_empty(),
        format!("{} pairs (m, 2m) disagree", doubling.len()),
    ));
    if g.builtin() == Some(Builtin::Tm) {
        let eta = tm_autocorrelation(8);
        let worst = table
            .coefficients
            .iter()
            .zip(&eta.eta)
            .map(|(c, e)| (c.re.mid() - *e.numer() as f64 / *e.denom() as f64).abs())
            .fold(0.0, f64::max);
        checks.push(Check::new(
            "fourier_autocorrelation",
            worst < 1e-3,
            format!("max deviation {worst:e} for m <= 8"),
        ));
    }
    Ok(())
}

pub fn validate(args: CommonArgs) -> Result<Status> {
    let s = Settings::load(args)?;
    let g = match load_g(&s) {
        Ok(g) => g,
        Err(e) => match e.downcast_ref::<Error>() {
            Some(Error::IdentityResidual { .. } | Error::CoverageGap { .. } | Error::Overlap { .. }) => {
                let checks = vec![
                    Check::new("g_identity", false, e.to_string()),
                    Check::skipped("measure_checks", "g was rejected"),
                ];
                emit(&s, &render_checks(&s, "rejected", &checks)?)?;
                return Ok(Status::Failed);
            }
            _ => return Err(e),
        },
    };
    let mut checks = Vec::new();

    let report = validate_g(&g, VALIDATION_LEVEL, DEFAULT_TOLERANCE);
    let identity_ok = report.passed(DEFAULT_TOLERANCE);
    checks.push(Check::new(
        "g_identity",
        identity_ok,
        format!(
            "residual {:e} at x = {}; range violation: {:?}",
            report.identity_residual, report.identity_witness, report.range_violation
        ),
    ));

    let markov = run_transfer(&g, &Constant(1.0), 1, 12, &TransferOptions::default())?;
    let dev = markov
        .point
        .with_end()
        .iter()
        .map(|v| (v - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "markov_fixed_point",
        dev <= DEFAULT_TOLERANCE,
        format!("max |φ1 - 1| = {dev:e}"),
    ));

    let mut worst: f64 = 0.0;
    for n in 1..=8 {
        worst = worst.max((density_g_n(&g, n, n + 8, false).trapezoid() - 1.0).abs());
    }
    checks.push(Check::new(
        "density_normalization",
        worst < 1e-3,
        format!("max |∫g_n - 1| = {worst:e} for n <= 8"),
    ));

    let good = match check_goodness(&g) {
        Ok(r) => r.good,
        Err(Error::IncompleteZeroSpec) => false,
        Err(e) => return Err(e.into()),
    };
    if !identity_ok {
        checks.push(Check::skipped("measure_checks", "g fails the identity"));
    } else if !good && !s.assume_good()? {
        checks.push(Check::skipped("measure_checks", "uniqueness not established; pass --assume-good"));
    } else {
        let ctx = MeasureContext::new(&g, true)?;
        measure_checks(&ctx, &mut checks)?;
    }

    let failed = checks.iter().any(|c| c.status == "fail");
    emit(&s, &render_checks(&s, g.name(), &checks)?)?;
    Ok(if failed { Status::Failed } else { Status::Ok })
}

fn render_checks(s: &Settings, name: &str, checks: &[Check]) -> Result<String> {
    Ok(match s.format()? {
        Format::Csv => {
            let mut out = String::from("check,status,detail\n");
            for c in checks {
                out.push_str(&format!("{},{},\"{}\"\n", c.check, c.status, c.detail.replace('"', "'")));
            }
            out
        }
        Format::Json => {
            let passed = !checks.iter().any(|c| c.status == "fail");
            to_json(&json!({ "g": name, "checks": checks, "passed": passed }))?
        }
    })
}
