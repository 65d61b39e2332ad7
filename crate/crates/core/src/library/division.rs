//! Quartile-based division of a scored line into a template and fragments.

use serde::{Deserialize, Serialize};

use super::scorer::{validate_scores, ScorerError, TokenScores};

pub const DEFAULT_QUARTILE: f64 = 0.25;
const QUOTES: [char; 3] = ['"', '\'', '`'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Template,
    Fragment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub nll: f64,
    pub part: Part,
}

/// A slot in the template. `offset` is the byte offset of the symbol in the
/// template; `prefix`/`suffix` are quote characters absorbed into the slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub symbol: String,
    pub offset: usize,
    pub fragment: usize,
    pub prefix: String,
    pub suffix: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Division {
    pub text: String,
    pub threshold: f64,
    pub tokens: Vec<DivToken>,
    pub template: String,
    pub fragments: Vec<String>,
    pub slots: Vec<Slot>,
}

impl Division {
    /// Rebuild the original text from template, slots and fragments.
    pub fn reconstruct(&self) -> String {
        let mut out = String::new();
        let mut last = 0;
        for s in &self.slots {
            out.push_str(&self.template[last..s.offset]);
            out.push_str(&s.prefix);
            out.push_str(&self.fragments[s.fragment]);
            out.push_str(&s.suffix);
            last = s.offset + s.symbol.len();
        }
        out.push_str(&self.template[last..]);
        out
    }

    pub fn template_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.part == Part::Template).count()
    }
}

/// Nearest-rank quantile: the value at 1-based rank `max(1, ceil(q * n))`
/// of the ascending scores.
pub fn quantile_threshold(scores: &[f64], q: f64) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let mut s = scores.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let rank = ((q * s.len() as f64).ceil() as usize).clamp(1, s.len());
    Some(s[rank - 1])
}

/// Split `text` by its token scores: tokens at or below the quartile
/// threshold form the template, maximal runs of the rest become fragments
/// replaced by the symbol `slot_for(start, end)` chooses for the run's
/// code-point span. Text between tokens may only be whitespace or quotes.
pub fn divide(
    text: &str,
    scores: &TokenScores,
    quartile: f64,
    slot_for: impl Fn(usize, usize) -> String,
) -> Result<Division, ScorerError> {
    validate_scores(text, scores)?;
    let chars: Vec<char> = text.chars().collect();
    let mut prev = 0;
    for t in scores.tokens.iter().map(|t| (t.start, t.end)).chain([(chars.len(), chars.len())]) {
        if let Some(c) = chars[prev..t.0].iter().find(|c| !c.is_whitespace() && !QUOTES.contains(c)) {
            return Err(ScorerError::Protocol(format!("untokenized character {c:?} at {prev}..{}", t.0)));
        }
        prev = t.1;
    }
    let threshold = match quantile_threshold(&scores.nll, quartile) {
        Some(t) => t,
        None => {
            return Ok(Division { text: text.into(), threshold: 0.0, tokens: vec![], template: text.into(), fragments: vec![], slots: vec![] })
        }
    };
    let tokens: Vec<DivToken> = scores
        .tokens
        .iter()
        .zip(&scores.nll)
        .map(|(t, &nll)| DivToken {
            text: t.text.clone(),
            start: t.start,
            end: t.end,
            nll,
            part: if nll <= threshold { Part::Template } else { Part::Fragment },
        })
        .collect();

    let sub = |a: usize, b: usize| chars[a..b].iter().collect::<String>();
    let mut template = String::new();
    let mut fragments = Vec::new();
    let mut slots = Vec::new();
    let mut cursor = 0;
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i].part == Part::Template {
            template.push_str(&sub(cursor, tokens[i].end));
            cursor = tokens[i].end;
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < tokens.len() && tokens[j + 1].part == Part::Fragment {
            j += 1;
        }
        let (start, end) = (tokens[i].start, tokens[j].end);
        let next_start = tokens.get(j + 1).map(|t| t.start).unwrap_or(chars.len());
        let quote = if start > cursor { Some(chars[start - 1]) } else { None };
        let absorb = quote.filter(|q| QUOTES.contains(q) && end < next_start && chars[end] == *q);
        let (prefix, suffix) = match absorb {
            Some(q) => {
                template.push_str(&sub(cursor, start - 1));
                cursor = end + 1;
                (q.to_string(), q.to_string())
            }
            None => {
                template.push_str(&sub(cursor, start));
                cursor = end;
                (String::new(), String::new())
            }
        };
        let symbol = slot_for(start, end);
        slots.push(Slot { symbol: symbol.clone(), offset: template.len(), fragment: fragments.len(), prefix, suffix });
        template.push_str(&symbol);
        fragments.push(sub(start, end));
        i = j + 1;
    }
    template.push_str(&sub(cursor, chars.len()));
    Ok(Division { text: text.into(), threshold, tokens, template, fragments, slots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::scorer::{Scorer, ScoredToken, StubScorer};

    fn scored(words: &[(&str, f64)]) -> (String, TokenScores) {
        let mut text = String::new();
        let mut tokens = Vec::new();
        let mut nll = Vec::new();
        for (i, (w, s)) in words.iter().enumerate() {
            if i > 0 {
                text.push(' ');
            }
            let start = text.chars().count();
            text.push_str(w);
            tokens.push(ScoredToken { text: w.to_string(), start, end: start + w.chars().count() });
            nll.push(*s);
        }
        (text, TokenScores { scorer_id: "t".into(), tokens, nll })
    }

    #[test]
    fn nearest_rank() {
        assert_eq!(quantile_threshold(&[4.0, 1.0, 3.0, 2.0], 0.25), Some(1.0));
        assert_eq!(quantile_threshold(&[5.0, 1.0, 3.0, 2.0, 4.0], 0.25), Some(2.0));
        assert_eq!(quantile_threshold(&[], 0.25), None);
    }

    #[test]
    fn email_line_with_stub() {
        let text = "user.email = 'li.ming@qq.com'";
        let s = StubScorer.score_sequence(text).unwrap();
        let d = divide(text, &s, DEFAULT_QUARTILE, |_, _| "⟨EMAIL⟩".into()).unwrap();
        assert_eq!(d.template, "user.email = ⟨EMAIL⟩");
        assert_eq!(d.fragments, ["li.ming@qq.com"]);
        assert_eq!(d.reconstruct(), text);
    }

    #[test]
    fn runs_are_maximal_and_reconstruct() {
        let (text, s) = scored(&[("a", 1.0), ("b", 9.0), ("c", 8.0), ("d", 0.5), ("e", 7.0)]);
        let d = divide(&text, &s, 0.25, |_, _| "⟨X⟩".into()).unwrap();
        assert_eq!(d.template_count(), 2);
        assert_eq!(d.template, "a ⟨X⟩ d ⟨X⟩");
        assert_eq!(d.fragments, ["b c", "e"]);
        assert_eq!(d.reconstruct(), text);
    }

    #[test]
    fn all_equal_scores_are_template() {
        let (text, s) = scored(&[("a", 2.0), ("b", 2.0), ("c", 2.0)]);
        let d = divide(&text, &s, 0.25, |_, _| "⟨X⟩".into()).unwrap();
        assert!(d.fragments.is_empty());
        assert_eq!(d.template, text);
    }

    #[test]
    fn untokenized_content_is_an_error() {
        let text = "a = b";
        let s = TokenScores {
            scorer_id: "t".into(),
            tokens: vec![ScoredToken { text: "a".into(), start: 0, end: 1 }, ScoredToken { text: "b".into(), start: 4, end: 5 }],
            nll: vec![1.0, 2.0],
        };
        assert!(matches!(divide(text, &s, 0.25, |_, _| "⟨X⟩".into()), Err(ScorerError::Protocol(_))));
    }
}
