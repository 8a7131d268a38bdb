//! printf-compatible float formatting for CSV output.

/// Formats like C's `%.12e`: twelve fraction digits and a signed exponent of
/// at least two digits (`1.500000000000e-03`).
pub fn sci12(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{v:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

#[cfg(test)]
mod tests {
    use super::sci12;

    #[test]
    fn matches_printf() {
        assert_eq!(sci12(0.0), "0.000000000000e+00");
        assert_eq!(sci12(1.5e-3), "1.500000000000e-03");
        assert_eq!(sci12(-2.0), "-2.000000000000e+00");
        assert_eq!(sci12(6.02214076e123), "6.022140760000e+123");
        assert_eq!(sci12(f64::NAN), "nan");
    }
}
