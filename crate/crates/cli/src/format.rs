//! Number formatting for CSV artifacts: plain decimal notation with 17
//! significant digits.

/// Formats `x` in decimal notation with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let e = x.abs().log10().floor() as i32;
    let decimals = (16 - e).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // "-0.000…" for tiny negatives that round to zero cannot occur since the
    // decimals track the exponent, but normalise a bare minus zero anyway
    if s.trim_start_matches('-')
        .chars()
        .all(|c| c == '0' || c == '.')
    {
        "0".into()
    } else {
        s
    }
}
