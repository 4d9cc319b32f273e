//! Text formatting of floating-point output.
//!
//! Every number is printed with 17 significant digits so that it parses
//! back to the identical `f64`.

use num_complex::Complex64;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Complex number as `re+imi` (or `re-imi`).
pub fn fmt_complex(z: Complex64) -> String {
    format!("{:.16e}{:+.16e}i", z.re, z.im)
}

/// Parses the `re+imi` form written by [`fmt_complex`], or a plain real.
pub fn parse_complex(s: &str) -> Option<Complex64> {
    let s = s.trim();
    let Some(body) = s.strip_suffix('i') else {
        return s.parse().ok().map(|re| Complex64::new(re, 0.0));
    };
    // Split at the last sign that is not part of an exponent.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'))?;
    let re = body[..split].parse().ok()?;
    let im = body[split..].parse().ok()?;
    Some(Complex64::new(re, im))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        let x = -7.0 / 12.0;
        let s = fmt_f64(x);
        assert_eq!(s, "-5.8333333333333337e-1");
        assert_eq!(s.parse::<f64>().unwrap(), x);
    }

    #[test]
    fn complex_literal_round_trip() {
        for z in [
            Complex64::new(1.5, -2.25e-30),
            Complex64::new(-0.1, 3.0),
            Complex64::new(0.0, 0.0),
        ] {
            let s = fmt_complex(z);
            assert_eq!(parse_complex(&s), Some(z), "{s}");
        }
        assert_eq!(fmt_complex(Complex64::new(-2.0, 0.4)), "-2.0000000000000000e0+4.0000000000000002e-1i");
    }
}
