//! Number formatting for emitted data files.

/// Formats `x` with 12 significant digits in the style of C's `%.12g`:
/// fixed notation for moderate exponents, scientific otherwise, trailing
/// zeros removed.
pub fn sig12(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

/// `x` rounded to the 12 significant digits that [`sig12`] prints.
pub fn round_sig12(x: f64) -> f64 {
    if x.is_finite() {
        format!("{x:.11e}").parse().expect("formatted float parses")
    } else {
        x
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::{round_sig12, sig12};

    #[test]
    fn rounding_agrees_with_printing() {
        let (a, b) = (5.55977886365e-06, 5.559778863651e-06);
        assert_eq!(round_sig12(a), round_sig12(b));
        assert_eq!(sig12(round_sig12(1.0 / 3.0)), sig12(1.0 / 3.0));
        assert!(round_sig12(f64::NAN).is_nan());
    }

    #[test]
    fn matches_printf_g() {
        assert_eq!(sig12(0.0), "0");
        assert_eq!(sig12(1.0), "1");
        assert_eq!(sig12(200.0), "200");
        assert_eq!(sig12(-2.5), "-2.5");
        assert_eq!(sig12(std::f64::consts::LN_2), "0.69314718056");
        assert_eq!(sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(sig12(123456789012.0), "123456789012");
        assert_eq!(sig12(1234567890123.0), "1.23456789012e+12");
        assert_eq!(sig12(1e-5), "1e-05");
        assert_eq!(sig12(1.5e-7), "1.5e-07");
        assert_eq!(sig12(0.0001), "0.0001");
        assert_eq!(sig12(f64::INFINITY), "inf");
    }
}
