//! Partial masking of values before they leave the run store.

use crate::taxonomy::{CharClass, MaskPolicy};

const STAR: char = '*';

fn in_class(c: char, class: CharClass) -> bool {
    c == STAR
        || match class {
            CharClass::Digits => c.is_ascii_digit(),
            CharClass::Alnum => c.is_alphanumeric(),
            CharClass::Any => !c.is_whitespace(),
        }
}

/// Keep/star split for `n` class characters. When the requested keeps would
/// reveal everything, at least half (and at least one) is starred.
fn keep_counts(n: usize, prefix: usize, suffix: usize) -> (usize, usize) {
    if prefix + suffix < n {
        return (prefix, suffix);
    }
    let masked = (n / 2).max(1);
    let avail = n - masked;
    let s = suffix.min(avail / 2);
    let p = prefix.min(avail - s);
    (p, s)
}

fn mask_span(value: &str, class: CharClass, prefix: usize, suffix: usize, collapse: bool) -> String {
    let chars: Vec<char> = value.chars().collect();
    let mut class = class;
    let mut members: Vec<usize> = (0..chars.len()).filter(|&i| in_class(chars[i], class)).collect();
    if members.is_empty() {
        class = CharClass::Any;
        members = (0..chars.len()).filter(|&i| in_class(chars[i], class)).collect();
    }
    let n = members.len();
    if n <= 2 {
        return value.to_string();
    }
    let (p, s) = keep_counts(n, prefix, suffix);
    let first_star = members[p];
    let last_star = members[n - s - 1];
    let mut out = String::with_capacity(value.len());
    for (i, &c) in chars.iter().enumerate() {
        if i < first_star || i > last_star {
            out.push(c);
        } else if in_class(c, class) {
            out.push(STAR);
        } else if !collapse {
            out.push(c);
        }
    }
    out
}

fn mask_email(value: &str, keep_local: usize) -> String {
    let Some((local, domain)) = value.rsplit_once('@') else {
        return mask_span(value, CharClass::Any, 2, 2, false);
    };
    let n = local.chars().count();
    if n == 0 {
        return value.to_string();
    }
    let keep = keep_local.min(n - 1);
    let kept: String = local.chars().take(keep).collect();
    format!("{}{}@{}", kept, "*".repeat(n - keep), domain)
}

/// Mask `value` under `policy`. Masking an already masked value returns it
/// unchanged.
pub fn mask_value(value: &str, policy: &MaskPolicy) -> String {
    match policy {
        MaskPolicy::Span { class, keep_prefix, keep_suffix, collapse_separators } => {
            mask_span(value, *class, *keep_prefix, *keep_suffix, *collapse_separators)
        }
        MaskPolicy::Email { keep_local } => mask_email(value, *keep_local),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{AttributeId, Taxonomy};

    fn policy(attr: &str) -> MaskPolicy {
        Taxonomy::bundled().attribute(&AttributeId::new(attr)).unwrap().mask_policy.clone()
    }

    #[test]
    fn fixed_examples() {
        assert_eq!(mask_value("george.thompson@outlook.com", &policy("Email")), "george.t*******@outlook.com");
        assert_eq!(mask_value("+86 138 4411 5022", &policy("PhoneNumber")), "+86 138 *****022");
    }

    #[test]
    fn short_values_are_starred_at_least_half() {
        let p = MaskPolicy::Span { class: CharClass::Digits, keep_prefix: 5, keep_suffix: 3, collapse_separators: false };
        assert_eq!(mask_value("4821", &p), "4**1");
        assert_eq!(mask_value("12", &p), "12");
        assert_eq!(mask_value("a@b", &policy("Email")), "*@b");
    }

    #[test]
    fn class_fallback() {
        let p = MaskPolicy::Span { class: CharClass::Digits, keep_prefix: 1, keep_suffix: 1, collapse_separators: false };
        assert_eq!(mask_value("hunter", &p), "h****r");
    }

    #[test]
    fn idempotent_on_examples() {
        for (v, a) in [("george.thompson@outlook.com", "Email"), ("+86 138 4411 5022", "PhoneNumber"), ("Li Ming", "Name"), ("Tr0ub4dor&3", "Password"), ("4821", "AuthenticationPIN")] {
            let once = mask_value(v, &policy(a));
            assert_eq!(mask_value(&once, &policy(a)), once, "{a}");
            assert_ne!(once, v, "{a}");
        }
    }
}
