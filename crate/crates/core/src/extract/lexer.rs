//! Tolerant tokenizer for literal extraction across common languages.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokKind {
    /// String literal; `text` holds the unescaped-as-written contents.
    Str,
    Num,
    Ident,
    Punct,
    Newline,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokKind,
    pub text: String,
    /// Byte range of the whole token (quotes included for strings).
    pub start: usize,
    pub end: usize,
    /// Byte range of string contents; equals `start..end` for other kinds.
    pub inner: (usize, usize),
}

const STRING_PREFIXES: &[&str] = &["r", "f", "b", "u", "rb", "br", "fr", "rf", "R", "F", "B", "U", "L", "@", "$"];

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

/// Tokenize `src`, skipping whitespace and comments. Unterminated single-line
/// strings become punctuation so a stray apostrophe does not swallow code.
pub fn tokenize(src: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let at = |i: usize| chars.get(i).map(|&(_, c)| c);
    let off = |i: usize| chars.get(i).map(|&(o, _)| o).unwrap_or(src.len());
    let mut out = Vec::new();
    let mut i = 0;
    let mut line_start = true;
    while i < chars.len() {
        let c = chars[i].1;
        if c == '\n' {
            out.push(Token { kind: TokKind::Newline, text: "\n".into(), start: off(i), end: off(i + 1), inner: (off(i), off(i + 1)) });
            i += 1;
            line_start = true;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let was_line_start = line_start;
        line_start = false;
        // comments
        if c == '/' && at(i + 1) == Some('/') {
            while i < chars.len() && chars[i].1 != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && at(i + 1) == Some('*') {
            i += 2;
            while i < chars.len() && !(chars[i].1 == '*' && at(i + 1) == Some('/')) {
                i += 1;
            }
            i = (i + 2).min(chars.len());
            continue;
        }
        if c == '#' && at(i + 1) != Some('[') && at(i + 1) != Some('!') && (was_line_start || at(i + 1).is_none_or(|n| n == ' ')) {
            while i < chars.len() && chars[i].1 != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '"' || c == '\'' || c == '`' {
            if let Some((tok, next)) = lex_string(src, &chars, i, i) {
                out.push(tok);
                i = next;
                continue;
            }
            out.push(punct(src, &chars, i));
            i += 1;
            continue;
        }
        if c.is_ascii_digit() {
            let s = i;
            while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_' || (chars[i].1 == '.' && at(i + 1).is_some_and(|n| n.is_ascii_digit()))) {
                i += 1;
            }
            let text: String = src[off(s)..off(i)].chars().filter(|&c| c != '_').collect();
            out.push(Token { kind: TokKind::Num, text, start: off(s), end: off(i), inner: (off(s), off(i)) });
            continue;
        }
        if is_ident_start(c) || c == '@' {
            let s = i;
            i += 1;
            while i < chars.len() && is_ident_char(chars[i].1) {
                i += 1;
            }
            let word = &src[off(s)..off(i)];
            if STRING_PREFIXES.contains(&word) && matches!(at(i), Some('"' | '\'')) {
                if let Some((tok, next)) = lex_string(src, &chars, i, s) {
                    out.push(tok);
                    i = next;
                    continue;
                }
            }
            if word == "@" {
                out.push(punct(src, &chars, s));
            } else {
                out.push(Token { kind: TokKind::Ident, text: word.to_string(), start: off(s), end: off(i), inner: (off(s), off(i)) });
            }
            continue;
        }
        out.push(punct(src, &chars, i));
        i += 1;
    }
    out
}

fn punct(src: &str, chars: &[(usize, char)], i: usize) -> Token {
    let s = chars[i].0;
    let e = chars.get(i + 1).map(|&(o, _)| o).unwrap_or(src.len());
    Token { kind: TokKind::Punct, text: src[s..e].to_string(), start: s, end: e, inner: (s, e) }
}

/// Lex a string whose opening quote is at char index `q`; the token starts
/// at `tok_start` (earlier when a prefix like `r` or `f` is present).
fn lex_string(src: &str, chars: &[(usize, char)], q: usize, tok_start: usize) -> Option<(Token, usize)> {
    let off = |i: usize| chars.get(i).map(|&(o, _)| o).unwrap_or(src.len());
    let quote = chars[q].1;
    let triple = chars.get(q + 1).map(|c| c.1) == Some(quote) && chars.get(q + 2).map(|c| c.1) == Some(quote);
    if triple {
        let body = q + 3;
        let mut j = body;
        let close = loop {
            if j + 2 >= chars.len() {
                break chars.len();
            }
            if chars[j].1 == quote && chars[j + 1].1 == quote && chars[j + 2].1 == quote {
                break j;
            }
            j += 1;
        };
        let end = (close + 3).min(chars.len());
        let tok = Token {
            kind: TokKind::Str,
            text: src[off(body)..off(close)].to_string(),
            start: off(tok_start),
            end: off(end),
            inner: (off(body), off(close)),
        };
        return Some((tok, end));
    }
    let body = q + 1;
    let mut j = body;
    while j < chars.len() {
        let c = chars[j].1;
        if c == '\\' {
            j += 2;
            continue;
        }
        if c == quote {
            let tok = Token {
                kind: TokKind::Str,
                text: src[off(body)..off(j)].to_string(),
                start: off(tok_start),
                end: off(j + 1),
                inner: (off(body), off(j)),
            };
            return Some((tok, j + 1));
        }
        if c == '\n' && quote != '`' {
            return None;
        }
        j += 1;
    }
    None
}
