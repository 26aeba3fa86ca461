//! Goodness conditions, spectral type and atoms on periodic orbits.

use std::collections::HashMap;

use num_rational::Ratio;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gfunction::{GFunction, ZeroEntry, DEFAULT_TOLERANCE, VALIDATION_LEVEL};

/// Exact doubling orbit of a rational point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OrbitInfo {
    /// The starting point as `(numerator, denominator)` in lowest terms.
    #[serde(serialize_with = "ser_ratio")]
    pub point: Ratio<u64>,
    pub preperiod: usize,
    pub period: usize,
    /// `T^i(point)` for `i < preperiod + period`.
    #[serde(serialize_with = "ser_ratios")]
    pub orbit: Vec<Ratio<u64>>,
}

fn ratio_string(q: &Ratio<u64>) -> String {
    format!("{}/{}", q.numer(), q.denom())
}

fn ser_ratio<S: serde::Serializer>(q: &Ratio<u64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&ratio_string(q))
}

fn ser_ratios<S: serde::Serializer>(
    qs: &[Ratio<u64>],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(qs.iter().map(ratio_string))
}

impl OrbitInfo {
    /// The periodic part of the orbit.
    pub fn cycle(&self) -> &[Ratio<u64>] {
        &self.orbit[self.preperiod..]
    }
}

/// Iterate `q ↦ 2q mod 1` exactly until a point repeats.
///
/// Numerators stay below the denominator, so the orbit has at most
/// `denom` distinct points and the loop always terminates.
pub fn orbit_eventually_periodic(q: Ratio<u64>) -> Result<OrbitInfo> {
    let d = *q.denom();
    let p0 = *q.numer();
    if p0 >= d {
        return Err(Error::InvalidArgument(format!(
            "{} is not in [0, 1)",
            ratio_string(&q)
        )));
    }
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut nums = Vec::new();
    let mut p = p0;
    loop {
        if let Some(&first) = seen.get(&p) {
            let orbit = nums.iter().map(|&n| Ratio::new(n, d)).collect();
            return Ok(OrbitInfo {
                point: q,
                preperiod: first,
                period: nums.len() - first,
                orbit,
            });
        }
        seen.insert(p, nums.len());
        nums.push(p);
        // 2p mod d without overflow for d < 2^63
        p = if p >= d - p { p - (d - p) } else { 2 * p };
    }
}

/// Which half-open variant of `[1/4, 3/4]` holds all zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SparedEndpoint {
    /// All zeros in `[1/4, 3/4)`.
    ThreeQuarters,
    /// All zeros in `(1/4, 3/4]`.
    OneQuarter,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroOrbitEvidence {
    pub zero: String,
    /// Exact orbit for rational zeros.
    pub orbit: Option<OrbitInfo>,
    /// The zero avoids periodic orbits (only by assertion for irrationals).
    pub avoids_periodic_orbits: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoodnessReport {
    pub condition1: bool,
    pub condition2: bool,
    pub zero_evidence: Vec<ZeroOrbitEvidence>,
    pub condition3: bool,
    pub spared: Option<SparedEndpoint>,
    pub good: bool,
    pub notes: Vec<String>,
    pub assumptions: Vec<String>,
}

fn strictly_inside(z: &ZeroEntry, lo_closed: bool, hi_closed: bool) -> bool {
    match z {
        ZeroEntry::Rational(q) => {
            // compare 4p against q and 3q in exact integers
            let (p, d) = (*q.numer() as u128, *q.denom() as u128);
            let above = if lo_closed { 4 * p >= d } else { 4 * p > d };
            let below = if hi_closed { 4 * p <= 3 * d } else { 4 * p < 3 * d };
            above && below
        }
        ZeroEntry::Irrational { lo, hi, .. } => {
            // an irrational never equals 1/4 or 3/4, so the bracket decides
            *lo >= 0.25 && *hi <= 0.75
        }
    }
}

/// Evaluate the three sufficient conditions for a unique g-measure.
pub fn check_goodness(g: &GFunction) -> Result<GoodnessReport> {
    let spec = g.zero_spec();
    if !spec.complete {
        return Err(Error::IncompleteZeroSpec);
    }
    let mut notes = Vec::new();
    let mut assumptions = Vec::new();

    let condition1 = spec.zeros.len() <= 1;

    let mut zero_evidence = Vec::new();
    for z in &spec.zeros {
        match z {
            ZeroEntry::Rational(q) => {
                let orbit = orbit_eventually_periodic(*q)?;
                zero_evidence.push(ZeroOrbitEvidence {
                    zero: z.to_string(),
                    orbit: Some(orbit),
                    avoids_periodic_orbits: false,
                });
            }
            ZeroEntry::Irrational {
                not_eventually_periodic,
                ..
            } => {
                if *not_eventually_periodic {
                    assumptions.push(format!(
                        "zero {z} is assumed irrational, so its orbit is not eventually periodic"
                    ));
                }
                zero_evidence.push(ZeroOrbitEvidence {
                    zero: z.to_string(),
                    orbit: None,
                    avoids_periodic_orbits: *not_eventually_periodic,
                });
            }
        }
    }
    let condition2 = zero_evidence.iter().all(|e| e.avoids_periodic_orbits);
    if condition2 && spec.zeros.is_empty() {
        notes.push("no zeros: condition 2 holds vacuously".into());
    }

    let spared = if spec.zeros.iter().all(|z| strictly_inside(z, true, false)) {
        Some(SparedEndpoint::ThreeQuarters)
    } else if spec.zeros.iter().all(|z| strictly_inside(z, false, true)) {
        Some(SparedEndpoint::OneQuarter)
    } else {
        None
    };
    let condition3 = spared.is_some();
    notes.push(
        "condition 3 is tested on the half-open intervals [1/4,3/4) and (1/4,3/4]".into(),
    );

    let good = condition1 || condition2 || condition3;
    Ok(GoodnessReport {
        condition1,
        condition2,
        zero_evidence,
        condition3,
        spared,
        good,
        notes,
        assumptions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralKind {
    /// Absolutely continuous (Lebesgue measure).
    Ac,
    /// Pure point (the Dirac mass at 0).
    Pp,
    /// Singular continuous.
    Sc,
}

impl SpectralKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SpectralKind::Ac => "ac",
            SpectralKind::Pp => "pp",
            SpectralKind::Sc => "sc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralType {
    pub kind: SpectralKind,
    pub witness: String,
}

/// Classify the g-measure of a good `g` at the default level and tolerance.
pub fn classify_spectral_type(g: &GFunction) -> Result<SpectralType> {
    classify_spectral_type_at(g, VALIDATION_LEVEL, DEFAULT_TOLERANCE)
}

pub fn classify_spectral_type_at(g: &GFunction, level: u32, tolerance: f64) -> Result<SpectralType> {
    let report = check_goodness(g)?;
    if !report.good {
        return Err(Error::NotGood(
            "none of the three uniqueness conditions holds; classification refused".into(),
        ));
    }
    classify_unchecked(g, level, tolerance)
}

/// Classification without the goodness gate (for callers that override it).
pub fn classify_unchecked(g: &GFunction, level: u32, tolerance: f64) -> Result<SpectralType> {
    let deviation = (0..1u64 << level)
        .map(|t| (g.eval_dyadic(t, level) - 0.5).abs())
        .fold(0.0, f64::max);
    if deviation < tolerance {
        return Ok(SpectralType {
            kind: SpectralKind::Ac,
            witness: format!("max |g - 1/2| = {deviation:e} on the level-{level} grid"),
        });
    }
    let at_half = g.eval(0.5);
    if at_half < tolerance {
        return Ok(SpectralType {
            kind: SpectralKind::Pp,
            witness: format!("g(1/2) = {at_half:e}"),
        });
    }
    Ok(SpectralType {
        kind: SpectralKind::Sc,
        witness: format!(
            "g is not constant (max |g - 1/2| = {deviation:e}) and g(1/2) = {at_half}"
        ),
    })
}

/// Rational periodic orbits of period `<= max_period` along which
/// `g >= 1 - tolerance` everywhere.
pub fn atom_candidates(g: &GFunction, max_period: usize, tolerance: f64) -> Result<Vec<OrbitInfo>> {
    if max_period == 0 || max_period > 20 {
        return Err(Error::InvalidArgument(format!(
            "max_period must lie in 1..=20, got {max_period}"
        )));
    }
    // Periodic points of period p are a/(2^p - 1). Visit each cycle once,
    // from its smallest numerator, with the minimal period.
    let mut found = Vec::new();
    let mut visited = std::collections::HashSet::new();
    for p in 1..=max_period {
        let d = (1u64 << p) - 1;
        for a in 0..d {
            let q = Ratio::new(a, d);
            if visited.contains(&q) {
                continue;
            }
            let info = orbit_eventually_periodic(q)?;
            for x in &info.orbit {
                visited.insert(*x);
            }
            let on_orbit = info.orbit.iter().all(|x| {
                let v = g.eval(*x.numer() as f64 / *x.denom() as f64);
                v >= 1.0 - tolerance
            });
            if on_orbit {
                found.push(info);
            }
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gfunction::{make_builtin, make_piecewise, PiecewiseMeta, Segment, SegmentKind, ZeroSpec};

    fn r(p: u64, q: u64) -> Ratio<u64> {
        Ratio::new(p, q)
    }

    #[test]
    fn orbit_examples() {
        let o = orbit_eventually_periodic(r(0, 1)).unwrap();
        assert_eq!((o.preperiod, o.period), (0, 1));
        assert_eq!(o.orbit, vec![r(0, 1)]);
        let o = orbit_eventually_periodic(r(1, 3)).unwrap();
        assert_eq!((o.preperiod, o.period), (0, 2));
        assert_eq!(o.orbit, vec![r(1, 3), r(2, 3)]);
        let o = orbit_eventually_periodic(r(1, 6)).unwrap();
        assert_eq!((o.preperiod, o.period), (1, 2));
        assert_eq!(o.cycle(), &[r(1, 3), r(2, 3)]);
    }

    #[test]
    fn preperiod_is_the_power_of_two_in_the_denominator() {
        for d in 1u64..=256 {
            for p in 0..d {
                let q = r(p, d);
                let o = orbit_eventually_periodic(q).unwrap();
                let den = *q.denom();
                assert_eq!(o.preperiod as u32, den.trailing_zeros(), "{p}/{d}");
                // T^(pre+per) q = T^pre q
                let step = |x: Ratio<u64>| {
                    let y = x * 2u64;
                    if y >= Ratio::from_integer(1) {
                        y - 1u64
                    } else {
                        y
                    }
                };
                let mut x = q;
                for _ in 0..o.preperiod + o.period {
                    x = step(x);
                }
                assert_eq!(x, o.orbit[o.preperiod]);
            }
        }
    }

    #[test]
    fn large_denominator_terminates() {
        let o = orbit_eventually_periodic(r(1, 999_983)).unwrap();
        assert_eq!(o.preperiod, 0);
        assert!(o.period > 0 && o.period < 999_983);
    }

    #[test]
    fn goodness_of_builtins() {
        let tm = check_goodness(&make_builtin("tm").unwrap()).unwrap();
        assert!(tm.condition1 && tm.good);
        assert!(!tm.condition2);
        let half = check_goodness(&make_builtin("half").unwrap()).unwrap();
        assert!(half.condition1 && half.condition2 && half.condition3);
        let co = check_goodness(&make_builtin("coshift").unwrap()).unwrap();
        assert!(co.condition1 && co.condition3);
    }

    fn tent_with_zeros(zeros: &[&str]) -> GFunction {
        let segs = vec![
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
        ];
        let (g, _) = make_piecewise(segs, PiecewiseMeta::default()).unwrap();
        g.with_zero_spec(ZeroSpec {
            zeros: zeros.iter().map(|z| z.parse().unwrap()).collect(),
            complete: true,
        })
    }

    #[test]
    fn goodness_condition_examples() {
        let inside = check_goodness(&tent_with_zeros(&["5/16", "7/16"])).unwrap();
        assert!(inside.condition3 && !inside.condition1 && inside.good);

        let bad = check_goodness(&tent_with_zeros(&["0", "1/3"])).unwrap();
        assert!(!bad.condition1 && !bad.condition2 && !bad.condition3 && !bad.good);
        assert!(bad.zero_evidence.iter().all(|e| e.orbit.is_some()));

        let both_ends = check_goodness(&tent_with_zeros(&["1/4", "3/4"])).unwrap();
        assert!(!both_ends.condition3);
        let left = check_goodness(&tent_with_zeros(&["1/4", "1/2"])).unwrap();
        assert_eq!(left.spared, Some(SparedEndpoint::ThreeQuarters));
        let right = check_goodness(&tent_with_zeros(&["1/2", "3/4"])).unwrap();
        assert_eq!(right.spared, Some(SparedEndpoint::OneQuarter));

        let irr = check_goodness(&tent_with_zeros(&["irr:0.1:0.11", "irr:0.9:0.91"])).unwrap();
        assert!(irr.condition2 && irr.good);
        assert_eq!(irr.assumptions.len(), 2);

        let incomplete = tent_with_zeros(&[]).with_zero_spec(ZeroSpec::default());
        assert_eq!(check_goodness(&incomplete).unwrap_err(), Error::IncompleteZeroSpec);
    }

    #[test]
    fn trichotomy() {
        let kind = |n: &str| classify_spectral_type(&make_builtin(n).unwrap()).unwrap().kind;
        assert_eq!(kind("half"), SpectralKind::Ac);
        assert_eq!(kind("coshift"), SpectralKind::Pp);
        for n in ["tm", "tent", "sqrt"] {
            assert_eq!(kind(n), SpectralKind::Sc);
        }
        let bad = tent_with_zeros(&["0", "1/3"]);
        assert!(matches!(classify_spectral_type(&bad), Err(Error::NotGood(_))));
    }

    #[test]
    fn verdict_stable_under_refinement() {
        for b in crate::gfunction::Builtin::ALL {
            let g = crate::gfunction::from_builtin(b);
            let a = classify_spectral_type_at(&g, 14, DEFAULT_TOLERANCE).unwrap().kind;
            let c = classify_spectral_type_at(&g, 16, DEFAULT_TOLERANCE).unwrap().kind;
            assert_eq!(a, c);
        }
    }

    #[test]
    fn atoms() {
        let tm = make_builtin("tm").unwrap();
        assert!(atom_candidates(&tm, 12, DEFAULT_TOLERANCE).unwrap().is_empty());
        let half = make_builtin("half").unwrap();
        assert!(atom_candidates(&half, 12, DEFAULT_TOLERANCE).unwrap().is_empty());
        let co = make_builtin("coshift").unwrap();
        let atoms = atom_candidates(&co, 12, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(atoms.len(), 1);
        assert_eq!(atoms[0].orbit, vec![r(0, 1)]);
        assert!(atom_candidates(&co, 21, DEFAULT_TOLERANCE).is_err());
    }
}
