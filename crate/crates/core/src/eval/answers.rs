//! Free-form answer matching.
//!
//! Predictions and gold answers are compared after light normalization;
//! strings that both read as numbers are compared numerically so formatting
//! noise ("1,200" vs "1200", float printing) does not count as a miss. No
//! unit or percentage conversion is attempted.

/// Relative tolerance for free-form numeric comparison.
pub const ANSWER_TOLERANCE: f64 = 1e-4;

/// Lowercases, trims, collapses whitespace runs, and strips trailing periods.
pub fn normalize_answer(text: &str) -> String {
    let collapsed = text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.trim_end_matches('.').trim_end().to_string()
}

/// Reads a string as a finite number, accepting thousands separators in the
/// conventional 3-digit grouping ("1,200"). Anything else with commas, or
/// with trailing units ("50%"), is not a number.
pub fn parse_number(text: &str) -> Option<f64> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    if let Ok(v) = t.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    strip_thousands(t)?.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Numeric equality at a relative tolerance with an absolute floor of the
/// same epsilon near zero.
pub fn numbers_match(a: f64, b: f64, tolerance: f64) -> bool {
    a == b || (a - b).abs() <= tolerance * a.abs().max(b.abs()).max(1.0)
}

/// Whether a predicted free-form answer counts as the gold answer.
pub fn answers_match(gold: &str, predicted: &str) -> bool {
    let g = normalize_answer(gold);
    let p = normalize_answer(predicted);
    match (parse_number(&g), parse_number(&p)) {
        (Some(a), Some(b)) => numbers_match(a, b, ANSWER_TOLERANCE),
        _ => g == p,
    }
}

fn strip_thousands(text: &str) -> Option<String> {
    let (int_part, frac) = match text.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (text, None),
    };
    let (sign, digits) = match int_part.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", int_part),
    };
    let groups: Vec<&str> = digits.split(',').collect();
    if groups.len() < 2 {
        return None;
    }
    let all_digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if groups[0].len() > 3 || !all_digits(groups[0]) {
        return None;
    }
    if !groups[1..].iter().all(|g| g.len() == 3 && all_digits(g)) {
        return None;
    }
    if let Some(f) = frac {
        if !all_digits(f) {
            return None;
        }
    }
    let fraction = frac.map(|f| format!(".{f}")).unwrap_or_default();
    Some(format!("{sign}{}{fraction}", groups.concat()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_handles_case_space_and_periods() {
        assert_eq!(normalize_answer("  Paris "), "paris");
        assert_eq!(normalize_answer("A   B."), "a b");
        assert_eq!(normalize_answer("etc.."), "etc");
        assert_eq!(normalize_answer(""), "");
    }

    #[test]
    fn casing_and_padding_do_not_matter() {
        assert!(answers_match("Paris", "paris "));
        assert!(answers_match("New   York", "new york"));
    }

    #[test]
    fn no_unit_conversion() {
        assert!(!answers_match("0.5", "50%"));
    }

    #[test]
    fn thousands_separators_are_stripped() {
        assert!(answers_match("1200", "1,200"));
        assert!(answers_match("-1,234,567.5", "-1234567.5"));
    }

    #[test]
    fn misplaced_commas_stay_strings() {
        assert_eq!(parse_number("1,2"), None);
        assert_eq!(parse_number("12,34"), None);
        assert!(!answers_match("1,2", "12"));
    }

    #[test]
    fn near_numbers_match_within_tolerance() {
        assert!(answers_match("0.333333", "0.3333334"));
        assert!(!answers_match("0.333", "0.334"));
        assert!(answers_match("1e6", "1000000"));
    }

    #[test]
    fn near_zero_uses_the_absolute_floor() {
        assert!(numbers_match(0.0, 0.00005, 1e-4));
        assert!(!numbers_match(0.0, 0.001, 1e-4));
    }

    #[test]
    fn non_finite_parses_are_rejected() {
        assert_eq!(parse_number("inf"), None);
        assert_eq!(parse_number("nan"), None);
        assert!(answers_match("inf", "inf"));
    }
}
