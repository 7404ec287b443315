//! Exact rational helpers on top of `num-rational`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::{Error, Result};

/// Arbitrary-precision rational, always stored reduced with a positive
/// denominator.
pub type Rational = BigRational;

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// `n / d`; panics on a zero denominator.
pub fn ratio(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn zero() -> Rational {
    Rational::zero()
}

pub fn one() -> Rational {
    Rational::one()
}

/// Parses `"num/den"` or a bare integer.
pub fn parse(text: &str) -> Result<Rational> {
    let text = text.trim();
    let (num, den) = match text.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (text, "1"),
    };
    let num: BigInt = num
        .parse()
        .map_err(|_| Error::Parse(format!("bad rational numerator in {text:?}")))?;
    let den: BigInt = den
        .parse()
        .map_err(|_| Error::Parse(format!("bad rational denominator in {text:?}")))?;
    if den.is_zero() {
        return Err(Error::Parse(format!("zero denominator in {text:?}")));
    }
    Ok(Rational::new(num, den))
}

/// Canonical text form: `"num/den"`, or `"num"` for integers.
pub fn format(r: &Rational) -> String {
    r.to_string()
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Huge numerators/denominators: fall back to a scaled division.
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Best rational approximation of `value` with denominator at most
/// `max_den` (continued-fraction convergents and semiconvergents).
pub fn approximate(value: f64, max_den: u64) -> Rational {
    assert!(max_den >= 1);
    if !value.is_finite() {
        return zero();
    }
    let negative = value < 0.0;
    let target = value.abs();

    // Convergents p/q, tracked as (p_{k-2}, q_{k-2}), (p_{k-1}, q_{k-1}).
    let (mut p0, mut q0, mut p1, mut q1) = (0i128, 1i128, 1i128, 0i128);
    let mut x = target;
    let max_den = max_den as i128;
    loop {
        let a = x.floor();
        if a > 1e18 {
            break;
        }
        let a = a as i128;
        let p2 = a * p1 + p0;
        let q2 = a * q1 + q0;
        if q2 > max_den {
            // Largest semiconvergent that still fits.
            let k = (max_den - q0) / q1;
            let (ps, qs) = (k * p1 + p0, k * q1 + q0);
            let conv = p1 as f64 / q1 as f64;
            let semi = ps as f64 / qs as f64;
            if qs > 0 && (semi - target).abs() < (conv - target).abs() {
                p1 = ps;
                q1 = qs;
            }
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        let frac = x - a as f64;
        if frac.abs() < 1e-15 {
            break;
        }
        x = 1.0 / frac;
    }
    let r = Rational::new(BigInt::from(p1), BigInt::from(q1));
    if negative {
        -r
    } else {
        r
    }
}

pub fn is_probability(r: &Rational) -> bool {
    !r.is_negative() && r <= &one()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format() {
        assert_eq!(parse("2/4").unwrap(), ratio(1, 2));
        assert_eq!(parse(" -3 ").unwrap(), int(-3));
        assert_eq!(format(&ratio(6, 3)), "2");
        assert_eq!(format(&ratio(-1, 6)), "-1/6");
        assert!(parse("1/0").is_err());
        assert!(parse("x/2").is_err());
    }

    #[test]
    fn approximation_recovers_small_fractions() {
        assert_eq!(approximate(1.0 / 3.0, 1_000_000), ratio(1, 3));
        assert_eq!(approximate(-5.0 / 12.0, 1_000_000), ratio(-5, 12));
        assert_eq!(approximate(0.0, 10), zero());
        assert_eq!(approximate(3.14159265, 7), ratio(22, 7));
    }
}
