//! Canonical number formatting for CSV output.
//!
//! Every real number in a CSV file is emitted with 9 significant digits,
//! `.` as the decimal separator and no thousands separators. The format
//! is parse-idempotent: parsing an emitted string back to `f64` and
//! re-emitting it reproduces the same bytes, which is what makes
//! loaded-then-saved tables round-trip bit-identically.

/// Format with 9 significant digits.
///
/// Plain decimal while the exponent stays in [-4, 8], scientific
/// (`d.ddddddddeE`) outside that range. Trailing zeros are kept so the
/// digit count is fixed. Non-finite values map to `nan` / `inf` / `-inf`.
pub fn sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.8e}", x);
    let exp: i32 = sci
        .split_once('e')
        .map(|(_, e)| e.parse().unwrap())
        .unwrap();
    if (-4..=8).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        format!("{:.*}", decimals, x)
    } else {
        sci
    }
}

/// Parse a value emitted by [`sig9`] (also accepts any plain f64 literal).
pub fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}
