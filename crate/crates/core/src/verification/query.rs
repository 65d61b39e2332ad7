//! Exact-match search query construction.

pub const DEFAULT_PHRASE_LIMIT: usize = 128;

/// Alphanumeric runs of `value` as (char length, text), in order.
fn alnum_runs(value: &str) -> Vec<(usize, &str)> {
    let mut runs = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in value.char_indices().chain([(value.len(), ' ')]) {
        match (c.is_alphanumeric() && i < value.len(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((value[s..i].chars().count(), &value[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    runs
}

/// The string sent to code search for `value`: the whole value when it fits
/// within `limit` characters and has an alphanumeric run of at least six;
/// otherwise its first longest alphanumeric run of at least eight; otherwise
/// the value cut to `limit` characters.
pub fn discriminative_query(value: &str, limit: usize) -> String {
    let value = value.trim();
    let runs = alnum_runs(value);
    let n = value.chars().count();
    if n <= limit && runs.iter().any(|r| r.0 >= 6) {
        return value.to_string();
    }
    let best = runs.iter().fold(None::<(usize, &str)>, |acc, &r| match acc {
        Some(a) if a.0 >= r.0 => Some(a),
        _ => Some(r),
    });
    if let Some((len, text)) = best {
        if len >= 8 {
            return text.chars().take(limit).collect();
        }
    }
    value.chars().take(limit).collect()
}
