//! Small numerical kernels: base-2 log-sum-exp, compensated summation and
//! table-driven trigonometry on dyadic rationals.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// `log2(2^a + 2^b)`, exact for `-inf` operands.
#[inline]
pub fn log2_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp2().ln_1p() * std::f64::consts::LOG2_E
}

/// `log2(2^a - 2^b)`; `-inf` when `b >= a`.
#[inline]
pub fn log2_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b >= a {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp2()).ln_1p() * std::f64::consts::LOG2_E
}

/// Stable `log2(Σ 2^x_i)`.
pub fn log2_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    let s: f64 = values.iter().map(|&v| (v - max).exp2()).sum();
    max + s.log2()
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Angle resolution of the trig tables: angles are multiples of `π / 2^48`.
const TABLE_BITS: u32 = 48;

pub struct SinCosTables {
    coarse: Vec<(f64, f64)>,
    mid: Vec<(f64, f64)>,
    fine: Vec<(f64, f64)>,
}

fn tables() -> &'static SinCosTables {
    static TABLES: OnceLock<SinCosTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let build = |len: usize, shift: i32| -> Vec<(f64, f64)> {
            (0..len)
                .map(|i| {
                    let a = PI * (i as f64) * 2f64.powi(-shift);
                    (a.sin(), a.cos())
                })
                .collect()
        };
        SinCosTables {
            // top chunk only needs to reach a quarter turn (π/2 = 2^15 · π/2^16)
            coarse: build((1 << 15) + 1, 16),
            mid: build(1 << 16, 32),
            fine: build(1 << 16, 48),
        }
    })
}

/// Handle on the trig tables, for tight loops that evaluate many sines.
#[derive(Clone, Copy)]
pub struct SinPi(&'static SinCosTables);

impl SinPi {
    pub fn get() -> Self {
        SinPi(tables())
    }

    /// `sin(π · num / 2^level)` for `num / 2^level ∈ [0, 1/2]`.
    ///
    /// For `level <= 48` the angle is split into three 16-bit chunks and
    /// recombined with the addition formula; all partial terms are
    /// non-negative in the first quadrant, so the result keeps a relative
    /// error of a few ulps even for tiny angles.
    #[inline]
    pub fn eval(self, num: u64, level: u32) -> f64 {
        debug_assert!(
            (level == 0 && num == 0) || level >= 64 || (level >= 1 && num <= 1u64 << (level - 1))
        );
        if level > TABLE_BITS {
            return (PI * (num as f64 / 2f64.powi(level as i32))).sin();
        }
        let t = num << (TABLE_BITS - level);
        let tab = self.0;
        let (s1, c1) = tab.coarse[(t >> 32) as usize];
        let (s2, c2) = tab.mid[((t >> 16) & 0xffff) as usize];
        let s12 = s1 * c2 + c1 * s2;
        let fine = (t & 0xffff) as usize;
        if fine == 0 {
            return s12;
        }
        let (s3, c3) = tab.fine[fine];
        let c12 = c1 * c2 - s1 * s2;
        s12 * c3 + c12 * s3
    }
}

/// `sin(π · num / 2^level)` for `num / 2^level ∈ [0, 1/2]`; see [`SinPi::eval`].
#[inline]
pub fn sin_pi_dyadic(num: u64, level: u32) -> f64 {
    SinPi::get().eval(num, level)
}

/// `(sin, cos)` of `2π · t / 2^level`, exact quadrant reduction on the integer.
#[inline]
pub fn sin_cos_2pi_dyadic(t: u64, level: u32) -> (f64, f64) {
    match level {
        0 => (0.0, 1.0),
        1 => {
            if t & 1 == 0 {
                (0.0, 1.0)
            } else {
                (0.0, -1.0)
            }
        }
        _ => {
            let t = t & ((1u64 << level) - 1);
            let quarter = 1u64 << (level - 2);
            let q = t >> (level - 2);
            let r = t & (quarter - 1);
            // angle within the quadrant is π · r / 2^(level-1) ∈ [0, π/2)
            let s = sin_pi_dyadic(r, level - 1);
            let c = sin_pi_dyadic(quarter - r, level - 1);
            match q {
                0 => (s, c),
                1 => (c, -s),
                2 => (-s, -c),
                _ => (-c, s),
            }
        }
    }
}

/// Reduce `x` to the torus representative in `[0, 1)`.
#[inline]
pub fn torus(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Distance from `x ∈ [0,1)` to the nearest integer, computed without
/// cancellation for dyadic inputs (`1 - x` is exact on `[1/2, 1]`).
#[inline]
pub fn dist_to_integer(x: f64) -> f64 {
    let r = torus(x);
    if r <= 0.5 {
        r
    } else {
        1.0 - r
    }
}

/// Format a float for tabular output: plain notation for moderate
/// magnitudes, scientific otherwise. Infinities print as `inf`/`-inf`.
pub fn fmt_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || x.is_nan() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log2_add_matches_direct_sum() {
        let cases = [(0.0, 0.0), (-3.0, 2.5), (-1000.0, -1001.0), (10.0, -60.0)];
        for (a, b) in cases {
            let direct = (a as f64).exp2() + (b as f64).exp2();
            if direct > 0.0 && direct.is_finite() {
                assert!((log2_add(a, b) - direct.log2()).abs() < 1e-12);
            }
        }
        assert_eq!(log2_add(f64::NEG_INFINITY, -5.0), -5.0);
        assert_eq!(log2_add(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        // far below the f64 range
        assert!((log2_add(-2000.0, -2000.0) - (-1999.0)).abs() < 1e-12);
    }

    #[test]
    fn log2_sub_inverts_add() {
        let s = log2_add(-40.0, -45.0);
        assert!((log2_sub(s, -45.0) + 40.0).abs() < 1e-12);
        assert_eq!(log2_sub(-3.0, -3.0), f64::NEG_INFINITY);
    }

    #[test]
    fn log2_sum_handles_empty_and_neg_inf() {
        assert_eq!(log2_sum(std::iter::empty()), f64::NEG_INFINITY);
        assert!((log2_sum([0.0, 0.0, 1.0]) - 2.0).abs() < 1e-14);
        assert!((log2_sum([-1500.0, f64::NEG_INFINITY, -1500.0]) + 1499.0).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = Compensated::new();
        acc.add(1.0);
        for _ in 0..1000 {
            acc.add(1e-17);
        }
        acc.add(-1.0);
        assert!((acc.value() - 1e-14).abs() < 1e-24);
    }

    #[test]
    fn dyadic_sine_agrees_with_libm() {
        for level in [1u32, 2, 5, 12, 26, 33, 48] {
            let half = 1u64 << (level - 1);
            let step = (half / 97).max(1);
            let mut num = 0;
            while num <= half {
                let x = num as f64 / 2f64.powi(level as i32);
                let expect = (PI * x).sin();
                let got = sin_pi_dyadic(num, level);
                let tol = 4.0 * f64::EPSILON * expect.abs().max(f64::MIN_POSITIVE);
                assert!((got - expect).abs() <= tol, "level {level} num {num}: {got} vs {expect}");
                num += step;
            }
        }
        // tiny angle keeps relative accuracy
        let got = sin_pi_dyadic(1, 48);
        let expect = PI * 2f64.powi(-48);
        assert!(((got - expect) / expect).abs() < 1e-15);
    }

    #[test]
    fn dyadic_sin_cos_full_turn() {
        let level = 9;
        for t in 0..(1u64 << level) {
            let a = 2.0 * PI * t as f64 / 512.0;
            let (s, c) = sin_cos_2pi_dyadic(t, level);
            assert!((s - a.sin()).abs() < 1e-15, "t = {t}");
            assert!((c - a.cos()).abs() < 1e-15, "t = {t}");
        }
        assert_eq!(sin_cos_2pi_dyadic(1, 1), (0.0, -1.0));
        assert_eq!(sin_cos_2pi_dyadic(3, 0), (0.0, 1.0));
    }

    #[test]
    fn float_formatting() {
        assert_eq!(fmt_float(0.5), "0.5");
        assert_eq!(fmt_float(0.0), "0");
        assert_eq!(fmt_float(1.5e-7), "1.5e-7");
        assert_eq!(fmt_float(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_float(-126.5), "-126.5");
    }

    #[test]
    fn torus_reduction() {
        assert_eq!(torus(1.0), 0.0);
        assert_eq!(torus(-0.25), 0.75);
        assert_eq!(dist_to_integer(0.75), 0.25);
        assert_eq!(dist_to_integer(1.0 - 2f64.powi(-40)), 2f64.powi(-40));
    }
}
