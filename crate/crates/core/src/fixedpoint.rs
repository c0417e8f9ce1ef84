//! Exact fixed-point arithmetic for the amplitude ratio `a = √(c/b)` and the
//! rotation angle `θ = arccos a`.
//!
//! Values are integers interpreted as `value / 2^n`. The square root is an
//! integer Newton iteration on a long-division quotient, so `ã` is the floor
//! of the true value at `n` bits. The arccosine runs a CORDIC vectoring pass
//! on `(a, √(1−a²))` carried with 8 guard bits and rounds once at the end.

use std::sync::OnceLock;

use serde::Serialize;
use thiserror::Error;

/// Largest supported number of fractional bits. CORDIC runs at `n + 8` bits
/// and squares its operands inside `u128`, so `2(n + 8) < 128`.
pub const MAX_FRAC_BITS: u32 = 55;

const GUARD_BITS: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FixedPointError {
    #[error("amplitude ratio requires 0 < c < b, got c = {c}, b = {b}")]
    RatioOutOfRange { c: u64, b: u64 },
    #[error("arccos input {value}/2^{frac_bits} lies outside [0, 1]")]
    ArccosDomain { value: u64, frac_bits: u32 },
    #[error("arccos expects a unit-interval value, got an angle")]
    WrongRange,
    #[error("precision {0} bits is outside 1..={MAX_FRAC_BITS}")]
    Precision(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueRange {
    UnitInterval,
    /// Radians in `[0, π/2]`.
    Angle,
}

/// A non-negative fixed-point number `value / 2^frac_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct FixedPoint {
    value: u64,
    frac_bits: u32,
    range: ValueRange,
}

impl FixedPoint {
    pub fn new(value: u64, frac_bits: u32, range: ValueRange) -> Result<Self, FixedPointError> {
        if frac_bits == 0 || frac_bits > MAX_FRAC_BITS {
            return Err(FixedPointError::Precision(frac_bits));
        }
        let fp = Self {
            value,
            frac_bits,
            range,
        };
        let ok = match range {
            ValueRange::UnitInterval => value <= 1u64 << frac_bits,
            ValueRange::Angle => value <= half_pi(frac_bits) + 1,
        };
        if !ok {
            return Err(FixedPointError::ArccosDomain { value, frac_bits });
        }
        Ok(fp)
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn to_f64(&self) -> f64 {
        self.value as f64 / (1u64 << self.frac_bits) as f64
    }
}

fn check_precision(n: u32) -> Result<(), FixedPointError> {
    if n == 0 || n > MAX_FRAC_BITS {
        Err(FixedPointError::Precision(n))
    } else {
        Ok(())
    }
}

/// `ã = ⌊√(c/b) · 2^n⌋ / 2^n`, so `0 ≤ √(c/b) − ã < 2^{−n}`.
pub fn amplitude_ratio(c: u64, b: u64, n: u32) -> Result<FixedPoint, FixedPointError> {
    check_precision(n)?;
    if c == 0 || c >= b {
        return Err(FixedPointError::RatioOutOfRange { c, b });
    }
    // ⌊c · 4^n / b⌋ by restoring binary long division; c/b < 1 keeps the
    // quotient below 4^n.
    let (b, mut rem) = (b as u128, c as u128);
    let mut quotient = 0u128;
    for _ in 0..2 * n {
        rem <<= 1;
        quotient <<= 1;
        if rem >= b {
            rem -= b;
            quotient |= 1;
        }
    }
    let value = isqrt(quotient) as u64;
    Ok(FixedPoint {
        value,
        frac_bits: n,
        range: ValueRange::UnitInterval,
    })
}

/// `⌊√v⌋` by Newton's iteration.
pub fn isqrt(v: u128) -> u128 {
    if v < 2 {
        return v;
    }
    let bits = 128 - v.leading_zeros();
    let mut x = 1u128 << bits.div_ceil(2);
    loop {
        let y = (x + v / x) >> 1;
        if y >= x {
            return x;
        }
        x = y;
    }
}

/// `θ̃ ≈ arccos(a)` at `n` fractional bits, within `2^{−n}` of the arccosine of
/// the exact input value.
pub fn arccos(a: FixedPoint, n: u32) -> Result<FixedPoint, FixedPointError> {
    check_precision(n)?;
    if a.range != ValueRange::UnitInterval {
        return Err(FixedPointError::WrongRange);
    }
    let one_in = 1u64 << a.frac_bits;
    if a.value > one_in {
        return Err(FixedPointError::ArccosDomain {
            value: a.value,
            frac_bits: a.frac_bits,
        });
    }
    let angle = |value| FixedPoint {
        value,
        frac_bits: n,
        range: ValueRange::Angle,
    };
    if a.value == 0 {
        return Ok(angle(half_pi(n)));
    }
    if a.value == one_in {
        return Ok(angle(0));
    }

    let w = n + GUARD_BITS;
    let x = rescale(a.value as u128, a.frac_bits, w);
    let y = isqrt((1u128 << (2 * w)) - x * x);
    let z = cordic_atan2(y as i128, x as i128, w);
    Ok(angle(round_shift(z.max(0) as u128, w - n) as u64))
}

fn rescale(v: u128, from: u32, to: u32) -> u128 {
    if to >= from {
        v << (to - from)
    } else {
        round_shift(v, from - to)
    }
}

fn round_shift(v: u128, shift: u32) -> u128 {
    if shift == 0 {
        v
    } else {
        (v + (1u128 << (shift - 1))) >> shift
    }
}

/// Vectoring-mode CORDIC: rotates `(x, y)` onto the positive x-axis and
/// accumulates the applied angle, returned at `w` fractional bits.
fn cordic_atan2(mut y: i128, mut x: i128, w: u32) -> i128 {
    let table = atan_table();
    let iterations = (w + 2) as usize;
    let shift = TABLE_BITS - w;
    let mut z = 0i128;
    for (i, atan_i) in table.iter().enumerate().take(iterations) {
        let (dx, dy) = (y >> i, x >> i);
        let step = round_shift(*atan_i as u128, shift) as i128;
        if y >= 0 {
            x += dx;
            y -= dy;
            z += step;
        } else {
            x -= dx;
            y += dy;
            z -= step;
        }
    }
    z
}

const TABLE_BITS: u32 = 100;
const TABLE_LEN: usize = (MAX_FRAC_BITS + GUARD_BITS + 2) as usize;

/// `atan(2^{−i})` at 100 fractional bits.
fn atan_table() -> &'static [i128; TABLE_LEN] {
    static TABLE: OnceLock<[i128; TABLE_LEN]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0i128; TABLE_LEN];
        table[0] = quarter_pi_100();
        for (i, slot) in table.iter_mut().enumerate().skip(1) {
            *slot = atan_pow2_100(i as u32);
        }
        table
    })
}

/// `atan(2^{−i})` for `i ≥ 1` from its alternating Taylor series.
fn atan_pow2_100(i: u32) -> i128 {
    let mut power = (1i128 << TABLE_BITS) >> i;
    let mut sum = 0i128;
    let mut k = 0i128;
    while power != 0 {
        let term = power / (2 * k + 1);
        sum += if k % 2 == 0 { term } else { -term };
        power = power.checked_shr(2 * i).unwrap_or(0);
        k += 1;
    }
    sum
}

/// `atan(1/q)` at 100 fractional bits.
fn atan_inv_100(q: i128) -> i128 {
    let mut power = (1i128 << TABLE_BITS) / q;
    let mut sum = 0i128;
    let mut k = 0i128;
    while power != 0 {
        let term = power / (2 * k + 1);
        sum += if k % 2 == 0 { term } else { -term };
        power /= q * q;
        k += 1;
    }
    sum
}

/// Machin's formula: π/4 = 4·atan(1/5) − atan(1/239).
fn quarter_pi_100() -> i128 {
    4 * atan_inv_100(5) - atan_inv_100(239)
}

/// `π/2` rounded to `n` fractional bits.
pub fn half_pi(n: u32) -> u64 {
    round_shift((2 * quarter_pi_100()) as u128, TABLE_BITS - n) as u64
}
