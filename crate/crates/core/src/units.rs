//! SPICE numeric literals.
//!
//! Parsing expands engineering suffixes (`f p n u m k meg g t`) into SI reals.
//! Formatting never re-synthesizes a suffix: values are written as plain
//! integers when exact, and otherwise as the shortest decimal that reads back
//! to the same `f64`.

/// Parse a SPICE number such as `1k`, `2.5p`, `10meg`, `50u` or `1e-6`.
///
/// Trailing unit letters after the scale factor are ignored (`10pF`,
/// `1kohm`), matching SPICE. Returns `None` if no numeric prefix exists or
/// the result is not finite.
pub fn parse_value(token: &str) -> Option<f64> {
    let bytes = token.as_bytes();
    let mut end = 0;
    if end < bytes.len() && (bytes[end] == b'+' || bytes[end] == b'-') {
        end += 1;
    }
    let digits_start = end;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end < bytes.len() && bytes[end] == b'.' {
        end += 1;
        while end < bytes.len() && bytes[end].is_ascii_digit() {
            end += 1;
        }
    }
    let mantissa = &token[digits_start..end];
    if mantissa.is_empty() || mantissa == "." {
        return None;
    }
    // exponent only if followed by at least one digit
    if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
        let mut probe = end + 1;
        if probe < bytes.len() && (bytes[probe] == b'+' || bytes[probe] == b'-') {
            probe += 1;
        }
        let exp_digits = probe;
        while probe < bytes.len() && bytes[probe].is_ascii_digit() {
            probe += 1;
        }
        if probe > exp_digits {
            end = probe;
        }
    }
    let number = &token[..end];
    let value = match scale_factor(&token[end..])? {
        Scale::Pow10(0) => number.parse::<f64>().ok()?,
        // fold the suffix into the exponent so `3f` reads exactly as `3e-15`
        Scale::Pow10(exp) if !number.contains(['e', 'E']) => format!("{number}e{exp}").parse().ok()?,
        Scale::Pow10(exp) => number.parse::<f64>().ok()? * 10f64.powi(exp),
        Scale::Factor(f) => number.parse::<f64>().ok()? * f,
    };
    value.is_finite().then_some(value)
}

enum Scale {
    Pow10(i32),
    Factor(f64),
}

fn scale_factor(suffix: &str) -> Option<Scale> {
    let lower = suffix.to_ascii_lowercase();
    if lower.starts_with("meg") {
        return Some(Scale::Pow10(6));
    }
    if lower.starts_with("mil") {
        return Some(Scale::Factor(25.4e-6));
    }
    let exp = match lower.chars().next() {
        None => 0,
        Some('t') => 12,
        Some('g') => 9,
        Some('k') => 3,
        Some('m') => -3,
        Some('u') => -6,
        Some('n') => -9,
        Some('p') => -12,
        Some('f') => -15,
        Some(c) if c.is_ascii_alphabetic() => 0,
        Some(_) => return None,
    };
    Some(Scale::Pow10(exp))
}

/// Render a value as the shortest decimal that round-trips through
/// [`parse_value`].
pub fn format_value(value: f64) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    if value.fract() == 0.0 && value.abs() < 1e15 {
        return format!("{}", value as i64);
    }
    // Debug output of f64 is the shortest round-trip representation
    format!("{value:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes_expand_to_si() {
        assert_eq!(parse_value("1k"), Some(1000.0));
        assert_eq!(parse_value("2.5p"), Some(2.5e-12));
        assert_eq!(parse_value("50u"), Some(5e-5));
        assert_eq!(parse_value("10meg"), Some(1e7));
        assert_eq!(parse_value("10MEG"), Some(1e7));
        assert_eq!(parse_value("1m"), Some(1e-3));
        assert_eq!(parse_value("1M"), Some(1e-3));
        assert_eq!(parse_value("3f"), Some(3e-15));
        assert_eq!(parse_value("-0.7"), Some(-0.7));
        assert_eq!(parse_value("1e-6"), Some(1e-6));
        assert_eq!(parse_value("1.5E3"), Some(1500.0));
        assert_eq!(parse_value("10pF"), Some(1e-11));
        assert_eq!(parse_value("4.7kohm"), Some(4700.0));
        assert_eq!(parse_value("1e"), Some(1.0));
    }

    #[test]
    fn rejects_garbage() {
        assert_eq!(parse_value("abc"), None);
        assert_eq!(parse_value(""), None);
        assert_eq!(parse_value("."), None);
        assert_eq!(parse_value("1.2.3"), None);
        assert_eq!(parse_value("1e999"), None);
    }

    #[test]
    fn formatting_is_suffix_free() {
        assert_eq!(format_value(1000.0), "1000");
        assert_eq!(format_value(2.5e-12), "2.5e-12");
        assert_eq!(format_value(1e-6), "1e-6");
        assert_eq!(format_value(-0.7), "-0.7");
        assert_eq!(format_value(0.0), "0");
        assert_eq!(format_value(5e-5), "5e-5");
    }

    proptest::proptest! {
        #[test]
        fn format_parse_roundtrip(v in proptest::num::f64::NORMAL) {
            let text = format_value(v);
            proptest::prop_assert_eq!(parse_value(&text), Some(v));
        }
    }
}
