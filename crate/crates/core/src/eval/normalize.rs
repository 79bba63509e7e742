//! Answer normalization shared by the accuracy reward and evaluation.
//!
//! Rules, applied in order to each `|`-separated piece:
//! lowercase, drop currency symbols, collapse whitespace, trim, strip matching
//! surrounding quotes (repeatedly). A piece that then reads as a plain decimal
//! number (optionally with well-formed thousands separators) becomes
//! [`NormalizedAnswer::Numeric`]. Multiple distinct pieces form a set.

use std::cmp::Ordering;
use std::fmt;

use crate::model::{TableTask, TaskKind};

/// Absolute tolerance for numeric equality.
pub const NUMERIC_TOLERANCE: f64 = 1e-6;

const CURRENCY: &[char] = &['$', '€', '£', '¥', '₹', '₩'];
const QUOTES: &[(char, char)] = &[('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’'), ('`', '`')];

#[derive(Debug, Clone, PartialEq)]
pub enum NormalizedAnswer {
    Numeric(f64),
    Text(String),
    /// Deduplicated, sorted by canonical form; always two or more elements.
    List(Vec<NormalizedAnswer>),
}

impl NormalizedAnswer {
    /// Equality with numeric tolerance; lists compare as sets.
    pub fn matches(&self, other: &NormalizedAnswer) -> bool {
        let lhs = self.as_set();
        let rhs = other.as_set();
        lhs.iter().all(|a| rhs.iter().any(|b| a.scalar_matches(b)))
            && rhs.iter().all(|b| lhs.iter().any(|a| a.scalar_matches(b)))
    }

    fn scalar_matches(&self, other: &NormalizedAnswer) -> bool {
        match (self, other) {
            (Self::Numeric(a), Self::Numeric(b)) => (a - b).abs() <= NUMERIC_TOLERANCE,
            (Self::Text(a), Self::Text(b)) => a == b,
            _ => false,
        }
    }

    fn as_set(&self) -> &[NormalizedAnswer] {
        match self {
            Self::List(items) => items,
            single => std::slice::from_ref(single),
        }
    }

    /// Canonical string form; normalizing it yields an equal value.
    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for NormalizedAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Numeric(x) => f.write_str(&format_number(*x)),
            Self::Text(s) => f.write_str(s),
            Self::List(items) => {
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str("|")?;
                    }
                    write!(f, "{item}")?;
                }
                Ok(())
            }
        }
    }
}

/// Formats a number without a trailing `.0` for integral values.
pub fn format_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

pub fn normalize(answer: &str) -> NormalizedAnswer {
    if !answer.contains('|') {
        return normalize_piece(answer);
    }
    let mut items: Vec<NormalizedAnswer> = Vec::new();
    for piece in answer.split('|') {
        let n = normalize_piece(piece);
        if matches!(&n, NormalizedAnswer::Text(s) if s.is_empty()) {
            continue;
        }
        if !items.iter().any(|existing| existing.scalar_matches(&n)) {
            items.push(n);
        }
    }
    match items.len() {
        0 => NormalizedAnswer::Text(String::new()),
        1 => items.pop().unwrap(),
        _ => {
            items.sort_by(compare_canonical);
            NormalizedAnswer::List(items)
        }
    }
}

fn compare_canonical(a: &NormalizedAnswer, b: &NormalizedAnswer) -> Ordering {
    a.canonical().cmp(&b.canonical())
}

fn normalize_piece(raw: &str) -> NormalizedAnswer {
    let lowered: String = raw
        .to_lowercase()
        .chars()
        .filter(|c| !CURRENCY.contains(c))
        .collect();
    let mut text = collapse_whitespace(&lowered);
    loop {
        let stripped = strip_quotes(&text);
        if stripped.len() == text.len() {
            break;
        }
        text = collapse_whitespace(stripped);
    }
    match parse_number(&text) {
        Some(x) => NormalizedAnswer::Numeric(if x == 0.0 { 0.0 } else { x }),
        None => NormalizedAnswer::Text(text),
    }
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_quotes(s: &str) -> &str {
    for &(open, close) in QUOTES {
        if s.chars().count() >= 2 && s.starts_with(open) && s.ends_with(close) {
            return &s[open.len_utf8()..s.len() - close.len_utf8()];
        }
    }
    s
}

/// Plain decimal with optional sign, thousands groups and fraction.
fn parse_number(s: &str) -> Option<f64> {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    if let Some(f) = frac_part {
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    if int_part.is_empty() && frac_part.is_none() {
        return None;
    }
    let digits: String = if int_part.contains(',') {
        let groups: Vec<&str> = int_part.split(',').collect();
        let first_ok = (1..=3).contains(&groups[0].len());
        let rest_ok = groups[1..].iter().all(|g| g.len() == 3);
        if !first_ok || !rest_ok || !groups.iter().all(|g| g.bytes().all(|b| b.is_ascii_digit())) {
            return None;
        }
        groups.concat()
    } else {
        if !int_part.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        int_part.to_string()
    };
    let sign = if s.starts_with('-') { "-" } else { "" };
    let literal = match frac_part {
        Some(f) => format!("{sign}{}.{f}", if digits.is_empty() { "0" } else { &digits }),
        None => format!("{sign}{digits}"),
    };
    literal.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// 1 when the normalized prediction equals the normalized gold set, else 0.
pub fn exact_match(pred: &str, gold: &[String]) -> u8 {
    let p = normalize(pred);
    let g = normalize_gold(gold);
    u8::from(p.matches(&g))
}

fn normalize_gold(gold: &[String]) -> NormalizedAnswer {
    if gold.len() == 1 {
        normalize(&gold[0])
    } else {
        normalize(&gold.join("|"))
    }
}

/// Maps a fact-verification prediction to "1" (entailed) or "0" (refuted).
pub fn normalize_label(label: &str) -> Option<&'static str> {
    match normalize(label) {
        NormalizedAnswer::Numeric(x) => match x {
            1.0 => Some("1"),
            0.0 => Some("0"),
            _ => None,
        },
        NormalizedAnswer::Text(t) => match t.as_str() {
            "true" | "yes" | "entailed" | "supported" => Some("1"),
            "false" | "no" | "refuted" | "not supported" => Some("0"),
            _ => None,
        },
        _ => None,
    }
}

/// Whether `pred` answers `task` correctly: exact match for QA, label accuracy
/// for fact verification. Both the accuracy reward and the evaluation metrics
/// go through this function.
pub fn answer_correct(task: &TableTask, pred: Option<&str>) -> bool {
    let Some(pred) = pred else { return false };
    match task.kind {
        TaskKind::QuestionAnswering => exact_match(pred, &task.gold) == 1,
        TaskKind::FactVerification => {
            normalize_label(pred).is_some_and(|l| Some(l) == normalize_label(&task.gold[0]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn text_folding() {
        assert_eq!(normalize(" Beijing "), NormalizedAnswer::Text("beijing".into()));
        assert_eq!(normalize("\"New   York\""), NormalizedAnswer::Text("new york".into()));
    }

    #[test]
    fn thousands_and_currency() {
        assert_eq!(normalize("1,234.50"), NormalizedAnswer::Numeric(1234.5));
        assert_eq!(normalize("$1,000"), NormalizedAnswer::Numeric(1000.0));
        assert_eq!(normalize("12,34"), NormalizedAnswer::Text("12,34".into()));
    }

    #[test]
    fn list_set_semantics() {
        assert!(normalize("a|b").matches(&normalize("b|a")));
        assert!(normalize("a|b|a").matches(&normalize("b|a")));
        assert!(!normalize("a|b").matches(&normalize("a")));
    }

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match("192", &g(&["192"])), 1);
        assert_eq!(exact_match("192.0", &g(&["192"])), 1);
        assert_eq!(exact_match("192 seconds", &g(&["192"])), 0);
        assert_eq!(exact_match("191", &g(&["192"])), 0);
        assert_eq!(exact_match("b | a", &g(&["a", "b"])), 1);
    }

    #[test]
    fn labels() {
        assert_eq!(normalize_label("Entailed"), Some("1"));
        assert_eq!(normalize_label("0"), Some("0"));
        assert_eq!(normalize_label("maybe"), None);
    }

    /// Brute-force oracle: format a known value in many surface variants.
    fn formatted_variants(whole: u64, cents: u32) -> Vec<(String, f64)> {
        let value = whole as f64 + cents as f64 / 100.0;
        let plain = whole.to_string();
        let mut grouped = String::new();
        for (i, ch) in plain.chars().enumerate() {
            if i > 0 && (plain.len() - i).is_multiple_of(3) {
                grouped.push(',');
            }
            grouped.push(ch);
        }
        vec![
            (plain.clone(), whole as f64),
            (grouped.clone(), whole as f64),
            (format!("{grouped}.{cents:02}"), value),
            (format!("${grouped}.{cents:02}"), value),
            (format!(" €{plain}.{cents:02} "), value),
            (format!("\"{grouped}\""), whole as f64),
        ]
    }

    #[test]
    fn numeric_parser_agrees_with_oracle() {
        for whole in [0u64, 7, 42, 999, 1000, 1234, 98765, 1_000_000, 123_456_789] {
            for cents in [0u32, 5, 50, 99] {
                for (text, value) in formatted_variants(whole, cents) {
                    match normalize(&text) {
                        NormalizedAnswer::Numeric(x) => {
                            assert!((x - value).abs() < 1e-9, "{text}: {x} vs {value}")
                        }
                        other => panic!("{text} normalized to {other:?}"),
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "[ a-zA-Z0-9,.$|'\"-]{0,24}") {
            let once = normalize(&s);
            let twice = normalize(&once.canonical());
            prop_assert!(once.matches(&twice), "{s:?}: {once:?} vs {twice:?}");
            prop_assert_eq!(once.canonical(), twice.canonical());
        }

        #[test]
        fn exact_match_is_symmetric(a in "[ a-c0-9,.|]{0,10}", b in "[ a-c0-9,.|]{0,10}") {
            prop_assert_eq!(exact_match(&a, std::slice::from_ref(&b)), exact_match(&b, std::slice::from_ref(&a)));
        }
    }
}
