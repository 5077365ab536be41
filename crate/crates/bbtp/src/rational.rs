//! Exact rational arithmetic helpers.
//!
//! Throughput bounds are kept as exact rationals end to end so that maxima,
//! ties, and speedup ratios are computed without floating-point drift.
//! i128 components are far beyond what any realistic block needs (numerators
//! are cycle counts, denominators are small unroll factors and widths).

use num_rational::Ratio;
use num_traits::{Signed, Zero};

/// Exact rational number used for all throughput bounds.
pub type Rat = Ratio<i128>;

/// Shorthand constructor. Panics if `den` is zero.
pub fn rat(num: i128, den: i128) -> Rat {
    Ratio::new(num, den)
}

/// Rational from an unsigned integer count.
pub fn rat_int(n: u64) -> Rat {
    Ratio::from_integer(n as i128)
}

/// Rounds to two decimal digits, halves away from zero.
pub fn round2(r: Rat) -> Rat {
    let scaled = r * Ratio::from_integer(100);
    let half = rat(1, 2);
    let rounded = if scaled.is_negative() {
        -(-scaled + half).floor()
    } else {
        (scaled + half).floor()
    };
    rounded / Ratio::from_integer(100)
}

/// Formats with exactly two fractional digits ("1.25", "0.00").
pub fn format2(r: Rat) -> String {
    let rounded = round2(r);
    let cents = (rounded * Ratio::from_integer(100)).to_integer();
    let sign = if cents < 0 { "-" } else { "" };
    let cents = cents.abs();
    format!("{}{}.{:02}", sign, cents / 100, cents % 100)
}

/// Formats the exact value as "num/den" (always with a denominator).
pub fn format_exact(r: Rat) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Parses a plain decimal string ("2", "2.50", "-0.5") into an exact rational.
pub fn parse_decimal(s: &str) -> Option<Rat> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    let (sign, digits) = match s.strip_prefix('-') {
        Some(rest) => (-1i128, rest),
        None => (1i128, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    if frac_part.len() > 18 {
        return None;
    }
    let int_val: i128 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().ok()?
    };
    let mut num = int_val;
    let mut den = 1i128;
    for c in frac_part.chars() {
        num = num.checked_mul(10)?.checked_add((c as u8 - b'0') as i128)?;
        den = den.checked_mul(10)?;
    }
    Some(Ratio::new(sign * num, den))
}

/// True if the rational is zero.
pub fn is_zero(r: &Rat) -> bool {
    r.is_zero()
}
