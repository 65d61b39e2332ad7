//! Language-lenient scanning of generated code: fenced blocks, function
//! units (brace- or indentation-delimited) and test units.

use std::sync::OnceLock;

use regex::Regex;

/// A fenced region of a model reply. `start..end` is the body's byte range
/// in the reply text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBlock {
    pub lang: String,
    pub body: String,
    pub start: usize,
    pub end: usize,
}

/// Extract ```-fenced blocks. A fence closed on its own opening line is an
/// inline block without a language tag; an unterminated fence runs to the end.
pub fn code_blocks(text: &str) -> Vec<CodeBlock> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(rel) = text[pos..].find("```") {
        let open = pos + rel + 3;
        let line_end = text[open..].find('\n').map(|i| open + i).unwrap_or(text.len());
        if let Some(close_rel) = text[open..line_end].find("```") {
            let end = open + close_rel;
            out.push(CodeBlock {
                lang: String::new(),
                body: text[open..end].to_string(),
                start: open,
                end,
            });
            pos = end + 3;
            continue;
        }
        let tag = text[open..line_end].trim();
        let lang = if !tag.is_empty() && !tag.contains(char::is_whitespace) {
            tag.to_string()
        } else {
            String::new()
        };
        let start = (line_end + 1).min(text.len());
        let (end, next) = match text[start..].find("```") {
            Some(i) => (start + i, start + i + 3),
            None => (text.len(), text.len()),
        };
        out.push(CodeBlock { lang, body: text[start..end].to_string(), start, end });
        pos = next;
        if pos >= text.len() {
            break;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    /// `def` with an indentation-delimited or same-line body.
    Indented,
    /// Header followed by a `{ ... }` body.
    Braced,
    /// Arrow or `=` expression body ending at the line end.
    Expression,
    /// `it(...)` / `test(...)` call with a callback body.
    TestCall,
}

/// A function-like unit within a code string; offsets are byte offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unit {
    pub name: String,
    pub kind: UnitKind,
    pub start: usize,
    pub end: usize,
    pub body_start: usize,
    pub body_end: usize,
    /// Preceded by a decorator or attribute line mentioning "test".
    pub annotated_test: bool,
}

impl Unit {
    pub fn text<'a>(&self, code: &'a str) -> &'a str {
        &code[self.start..self.end]
    }

    pub fn body<'a>(&self, code: &'a str) -> &'a str {
        &code[self.body_start..self.body_end]
    }

    pub fn is_test(&self) -> bool {
        self.kind == UnitKind::TestCall
            || self.annotated_test
            || crate::taxonomy::segments(&self.name).iter().any(|s| s == "test" || s == "tests")
    }
}

const CONTROL_WORDS: &[&str] = &[
    "if", "for", "while", "switch", "catch", "return", "else", "new", "sizeof", "do", "try",
    "synchronized", "using", "lock", "foreach", "with", "elif", "match", "when", "assert",
    "print", "println", "typeof", "await", "yield", "throw", "delete", "super", "this", "case",
    "function", "class", "struct", "enum", "interface", "import", "from", "echo",
];

fn python_def() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\s*)(?:async\s+)?def\s+([A-Za-z_]\w*)\s*\(").unwrap())
}

fn arrow_fn() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^\s*(?:export\s+)?(?:const|let|var)\s+([A-Za-z_$][\w$]*)\s*(?::[^=]+)?=\s*(?:async\s*)?(?:\([^()]*\)|[A-Za-z_$][\w$]*)\s*(?::\s*[^=]+)?=>",
        )
        .unwrap()
    })
}

fn brace_headers() -> &'static [Regex] {
    static RE: OnceLock<Vec<Regex>> = OnceLock::new();
    RE.get_or_init(|| {
        [
            // JS/TS/PHP
            r"\bfunction\s*\*?\s*([A-Za-z_$][\w$]*)\s*\(",
            // JS function expression assigned to a name
            r"^\s*(?:export\s+)?(?:const|let|var)\s+([A-Za-z_$][\w$]*)\s*=\s*(?:async\s+)?function\b",
            // Rust
            r"\bfn\s+([A-Za-z_]\w*)\s*(?:<[^>]*>)?\s*\(",
            // Go, including methods with receivers
            r"\bfunc\s+(?:\([^)]*\)\s*)?([A-Za-z_]\w*)\s*(?:\[[^\]]*\])?\s*\(",
            // Kotlin / Swift
            r"\bfun\s+(?:<[^>]*>\s*)?(?:[\w.]+\.)?([A-Za-z_]\w*)\s*\(",
            r"^\s*(?:(?:public|private|internal|static|override|mutating)\s+)*func\s+([A-Za-z_]\w*)\s*(?:<[^>]*>)?\s*\(",
            // C-family typed definitions: Java, C#, C, C++
            r"^\s*(?:(?:public|private|protected|static|final|async|virtual|override|synchronized|abstract|internal|inline|const|unsafe|extern|sealed|partial)\s+)*[A-Za-z_][\w<>\[\],.?:]*(?:\s*[*&]+\s*|\s+)([A-Za-z_]\w*)\s*\(",
            // JS/TS class methods and object shorthand methods
            r"^\s*(?:(?:public|private|protected|static|async|get|set)\s+)*([A-Za-z_$][\w$]*)\s*\(",
        ]
        .iter()
        .map(|p| Regex::new(p).unwrap())
        .collect()
    })
}

fn test_call() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(it|test|specify)(?:\.\w+)?\s*\(").unwrap())
}

fn line_starts(code: &str) -> Vec<usize> {
    let mut v = vec![0];
    v.extend(code.match_indices('\n').map(|(i, _)| i + 1).filter(|&i| i < code.len()));
    v
}

fn line_at<'a>(code: &'a str, starts: &[usize], i: usize) -> &'a str {
    let s = starts[i];
    let e = starts.get(i + 1).map(|&e| e - 1).unwrap_or(code.len());
    code[s..e].trim_end_matches('\r')
}

fn line_index(starts: &[usize], offset: usize) -> usize {
    match starts.binary_search(&offset) {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1),
    }
}

fn indent_of(line: &str) -> usize {
    line.chars().take_while(|c| *c == ' ' || *c == '\t').map(|c| if c == '\t' { 4 } else { 1 }).sum()
}

/// Skip a string literal or comment starting at `i`, returning the index
/// just past it, or `None` when `i` does not start one.
fn skip_literal(b: &[u8], i: usize) -> Option<usize> {
    let c = b[i];
    if c == b'/' && b.get(i + 1) == Some(&b'/') {
        return Some(b[i..].iter().position(|&x| x == b'\n').map(|p| i + p).unwrap_or(b.len()));
    }
    if c == b'/' && b.get(i + 1) == Some(&b'*') {
        return Some(
            find_seq(b, i + 2, b"*/").map(|p| p + 2).unwrap_or(b.len()),
        );
    }
    if c == b'"' || c == b'\'' || c == b'`' {
        if b[i..].starts_with(b"\"\"\"") || b[i..].starts_with(b"'''") {
            let q = &b[i..i + 3];
            return Some(find_seq(b, i + 3, q).map(|p| p + 3).unwrap_or(b.len()));
        }
        let mut j = i + 1;
        while j < b.len() {
            match b[j] {
                b'\\' => j += 2,
                x if x == c => return Some(j + 1),
                b'\n' if c != b'`' => return None,
                _ => j += 1,
            }
        }
        return None;
    }
    None
}

fn find_seq(b: &[u8], from: usize, pat: &[u8]) -> Option<usize> {
    if from >= b.len() {
        return None;
    }
    b[from..].windows(pat.len()).position(|w| w == pat).map(|p| from + p)
}

/// Index just past the bracket matching `b[open]`.
pub fn match_bracket(code: &str, open: usize) -> Option<usize> {
    let b = code.as_bytes();
    let (o, c) = match b[open] {
        b'{' => (b'{', b'}'),
        b'(' => (b'(', b')'),
        b'[' => (b'[', b']'),
        _ => return None,
    };
    let mut depth = 0usize;
    let mut i = open;
    while i < b.len() {
        if let Some(next) = skip_literal(b, i) {
            i = next;
            continue;
        }
        if b[i] == o {
            depth += 1;
        } else if b[i] == c {
            depth -= 1;
            if depth == 0 {
                return Some(i + 1);
            }
        }
        i += 1;
    }
    None
}

enum BodyStart {
    Brace(usize),
    Expr(usize),
    Decl,
}

/// From just after a parameter list, find how the body starts.
fn find_body(code: &str, from: usize) -> BodyStart {
    let b = code.as_bytes();
    let mut i = from;
    let mut crossed_newline = false;
    let limit = (from + 400).min(b.len());
    while i < limit {
        match b[i] {
            b'{' => return BodyStart::Brace(i),
            b';' => return BodyStart::Decl,
            b'\n' => {
                if crossed_newline {
                    return BodyStart::Decl;
                }
                crossed_newline = true;
                let rest = code[i + 1..].trim_start_matches([' ', '\t']);
                if !rest.starts_with('{') && !rest.starts_with("where") && !rest.starts_with("throws") {
                    return BodyStart::Decl;
                }
            }
            b'=' if b.get(i + 1) == Some(&b'>') => {
                let mut j = i + 2;
                while j < b.len() && (b[j] == b' ' || b[j] == b'\t') {
                    j += 1;
                }
                if b.get(j) == Some(&b'{') {
                    return BodyStart::Brace(j);
                }
                return BodyStart::Expr(line_end(code, j));
            }
            b'=' if !crossed_newline
                && !matches!(b.get(i + 1), Some(b'='))
                && !matches!(b.get(i.wrapping_sub(1)), Some(b'=' | b'!' | b'<' | b'>')) =>
            {
                return BodyStart::Expr(line_end(code, i));
            }
            _ => {}
        }
        i += 1;
    }
    BodyStart::Decl
}

fn line_end(code: &str, from: usize) -> usize {
    code[from..].find('\n').map(|p| from + p).unwrap_or(code.len())
}

fn annotated_test(code: &str, starts: &[usize], line: usize) -> bool {
    let mut i = line;
    while i > 0 {
        i -= 1;
        let l = line_at(code, starts, i).trim();
        if l.is_empty() {
            continue;
        }
        if l.starts_with('@') || l.starts_with("#[") || l.starts_with('[') {
            if l.to_ascii_lowercase().contains("test") || l.contains("[Fact") || l.contains("[Theory") {
                return true;
            }
            continue;
        }
        return false;
    }
    false
}

fn try_python(code: &str, starts: &[usize], li: usize) -> Option<Unit> {
    let line = line_at(code, starts, li);
    let caps = python_def().captures(line)?;
    let header_indent = indent_of(&caps[1]);
    let name = caps[2].to_string();
    let start = starts[li] + caps.get(1).unwrap().end();
    let paren = starts[li] + caps.get(0).unwrap().end() - 1;
    let close = match_bracket(code, paren)?;
    // signature tail up to the colon
    let b = code.as_bytes();
    let mut i = close;
    let mut depth = 0i32;
    while i < b.len() {
        match b[i] {
            b'[' | b'(' => depth += 1,
            b']' | b')' => depth -= 1,
            b':' if depth == 0 => break,
            b'\n' if depth == 0 => return None,
            _ => {}
        }
        i += 1;
    }
    if i >= b.len() {
        return None;
    }
    let colon = i;
    let eol = line_end(code, colon);
    let same_line = code[colon + 1..eol].trim();
    if !same_line.is_empty() && !same_line.starts_with('#') {
        return Some(Unit {
            name,
            kind: UnitKind::Indented,
            start,
            end: eol,
            body_start: colon + 1,
            body_end: eol,
            annotated_test: annotated_test(code, starts, li),
        });
    }
    let first_body_line = line_index(starts, colon) + 1;
    let mut last = None;
    let mut j = first_body_line;
    while j < starts.len() {
        let l = line_at(code, starts, j);
        if !l.trim().is_empty() {
            if indent_of(l) <= header_indent {
                break;
            }
            last = Some(j);
        }
        j += 1;
    }
    let last = last?;
    let end = starts[last] + line_at(code, starts, last).len();
    Some(Unit {
        name,
        kind: UnitKind::Indented,
        start,
        end,
        body_start: starts[first_body_line],
        body_end: end,
        annotated_test: annotated_test(code, starts, li),
    })
}

fn unit_from_body(
    code: &str,
    name: String,
    start: usize,
    after_params: usize,
    annotated: bool,
) -> Option<Unit> {
    match find_body(code, after_params) {
        BodyStart::Brace(open) => {
            let close = match_bracket(code, open)?;
            Some(Unit {
                name,
                kind: UnitKind::Braced,
                start,
                end: close,
                body_start: open + 1,
                body_end: close - 1,
                annotated_test: annotated,
            })
        }
        BodyStart::Expr(end) => Some(Unit {
            name,
            kind: UnitKind::Expression,
            start,
            end,
            body_start: after_params,
            body_end: end,
            annotated_test: annotated,
        }),
        BodyStart::Decl => None,
    }
}

fn try_brace(code: &str, starts: &[usize], li: usize) -> Option<Unit> {
    let line = line_at(code, starts, li);
    let ls = starts[li];
    let content_start = ls + (line.len() - line.trim_start().len());
    let annotated = annotated_test(code, starts, li);

    if let Some(c) = arrow_fn().captures(line) {
        let name = c[1].to_string();
        let arrow = ls + c.get(0).unwrap().end() - 2;
        return unit_from_body(code, name, content_start, arrow, annotated);
    }
    for re in brace_headers() {
        let Some(c) = re.captures(line) else { continue };
        let name = c[1].to_string();
        if CONTROL_WORDS.contains(&name.as_str()) {
            continue;
        }
        let m = c.get(0).unwrap();
        let after = ls + m.end();
        let paren = if m.as_str().ends_with('(') {
            after - 1
        } else {
            match code[after..].find('(').map(|p| after + p) {
                Some(p) if !code[after..p].contains('\n') => p,
                _ => continue,
            }
        };
        let Some(close) = match_bracket(code, paren) else { continue };
        if let Some(u) = unit_from_body(code, name, content_start, close, annotated) {
            return Some(u);
        }
    }
    None
}

fn try_test_call(code: &str, starts: &[usize], li: usize) -> Option<Unit> {
    let line = line_at(code, starts, li);
    let m = test_call().captures(line)?;
    let ls = starts[li];
    let paren = ls + m.get(0).unwrap().end() - 1;
    let close = match_bracket(code, paren)?;
    let mut end = close;
    if code[end..].starts_with(';') {
        end += 1;
    }
    let args = &code[paren + 1..close - 1];
    let name = args
        .trim_start()
        .strip_prefix(['\'', '"', '`'])
        .and_then(|r| r.split(['\'', '"', '`']).next())
        .unwrap_or(&m[1])
        .to_string();
    Some(Unit {
        name,
        kind: UnitKind::TestCall,
        start: ls + (line.len() - line.trim_start().len()),
        end,
        body_start: paren + 1,
        body_end: close - 1,
        annotated_test: false,
    })
}

fn scan(code: &str, tests: bool) -> Vec<Unit> {
    let starts = line_starts(code);
    let mut out = Vec::new();
    let mut li = 0;
    while li < starts.len() {
        let unit = (if tests { try_test_call(code, &starts, li) } else { None })
            .or_else(|| try_python(code, &starts, li))
            .or_else(|| try_brace(code, &starts, li));
        match unit {
            Some(u) if u.end > u.start => {
                li = line_index(&starts, u.end.saturating_sub(1)) + 1;
                out.push(u);
            }
            _ => li += 1,
        }
    }
    out
}

/// Function units in source order. Units found inside an earlier unit's
/// body are not reported separately.
pub fn function_units(code: &str) -> Vec<Unit> {
    scan(code, false)
}

/// Test functions (by name or test annotation) and `it`/`test` calls.
pub fn test_units(code: &str) -> Vec<Unit> {
    scan(code, true).into_iter().filter(Unit::is_test).collect()
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^(?:pass|\.\.\.|todo!\(.*\)|unimplemented!\(.*\)|raisenotimplementederror(?:\(.*\))?|thrownew\w*(?:notimplemented|unsupported)\w*\(.*\)|return|//todo.*|#todo.*)?$",
        )
        .unwrap()
    })
}

fn strip_comments_and_docstrings(body: &str) -> String {
    static DOC: OnceLock<Regex> = OnceLock::new();
    static BLOCK: OnceLock<Regex> = OnceLock::new();
    let doc = DOC.get_or_init(|| Regex::new(r#"(?s)""".*?"""|'''.*?'''"#).unwrap());
    let block = BLOCK.get_or_init(|| Regex::new(r"(?s)/\*.*?\*/").unwrap());
    let s = doc.replace_all(body, "");
    let s = block.replace_all(&s, "");
    s.lines()
        .map(str::trim)
        .filter(|l| !l.starts_with('#') && !l.starts_with("//"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Body is empty or only a stub statement (`pass`, `...`, `todo!()`,
/// `raise NotImplementedError`, ...).
pub fn is_placeholder(unit: &Unit, code: &str) -> bool {
    let body = unit.body(code);
    let body = body.trim_start_matches(['=', '>', ':']);
    let cleaned = strip_comments_and_docstrings(body);
    let compact: String = cleaned.chars().filter(|c| !c.is_whitespace()).collect();
    let compact = compact.trim_end_matches(';');
    let compact = compact.trim_matches(|c| c == '{' || c == '}');
    placeholder_re().is_match(compact)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(units: &[Unit]) -> Vec<&str> {
        units.iter().map(|u| u.name.as_str()).collect()
    }

    #[test]
    fn fenced_blocks() {
        let t = "Intro\n```python\ndef f():\n    return 1\n```\ntext\n```\nx = 1\n```";
        let b = code_blocks(t);
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].lang, "python");
        assert_eq!(b[0].body, "def f():\n    return 1\n");
        assert_eq!(&t[b[0].start..b[0].end], b[0].body);
        assert_eq!(b[1].body, "x = 1\n");
    }

    #[test]
    fn inline_and_unterminated_fences() {
        let b = code_blocks("```def f(x): return x```");
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].body, "def f(x): return x");
        let b = code_blocks("```js\nfunction a() {}\n");
        assert_eq!(b[0].body, "function a() {}\n");
    }

    #[test]
    fn python_units() {
        let code = "import re\n\nMAX = 3\n\ndef validate_email(addr):\n    pattern = r'^.+@.+$'\n\n    return re.match(pattern, addr)\n\nclass A:\n    def save(self, x):\n        pass\n";
        let u = function_units(code);
        assert_eq!(names(&u), ["validate_email", "save"]);
        assert!(u[0].text(code).ends_with("return re.match(pattern, addr)"));
        assert!(!is_placeholder(&u[0], code));
        assert!(is_placeholder(&u[1], code));
    }

    #[test]
    fn one_line_python() {
        let code = "def f(x): return x\n";
        let u = function_units(code);
        assert_eq!(names(&u), ["f"]);
        assert_eq!(u[0].text(code), "def f(x): return x");
    }

    #[test]
    fn brace_languages() {
        let code = r#"
import java.util.*;
public class UserService {
    private static final int MAX = 3;
    public boolean saveUser(String email, String phone) throws IOException {
        if (email == null) { return false; }
        return db.put(email, "}");
    }
}
function sendMail(to) {
  return mailer.send({ to: to });
}
const fmt = (user) => `${user.name} <${user.email}>`;
fn parse_phone(s: &str) -> Option<Phone> {
    todo!()
}
func (s *Store) Lookup(id string) (*User, error) {
    return s.users[id], nil
}
"#;
        let u = function_units(code);
        assert_eq!(names(&u), ["saveUser", "sendMail", "fmt", "parse_phone", "Lookup"]);
        assert!(u[0].text(code).trim_end().ends_with('}'));
        assert!(u[0].text(code).contains("\"}\""));
        assert!(is_placeholder(&u[3], code));
        assert_eq!(u[2].kind, UnitKind::Expression);
    }

    #[test]
    fn calls_are_not_functions() {
        let code = "validate(user);\nprint(x)\nuser = {\n  'a': 1\n}\nif (x) {\n  y();\n}\n";
        assert!(function_units(code).is_empty());
    }

    #[test]
    fn test_units_by_name_annotation_and_call() {
        let py = "import pytest\n\ndef helper():\n    return 1\n\ndef test_email():\n    assert f('a@b.co')\n\ndef test_phone():\n    assert g('+1 415 555 0132')\n";
        assert_eq!(names(&test_units(py)), ["test_email", "test_phone"]);

        let java = "class T {\n  @Test\n  void validEmail() {\n    assertTrue(v(\"x@y.com\"));\n  }\n  void helper() { }\n}\n";
        assert_eq!(names(&test_units(java)), ["validEmail"]);

        let js = "describe('svc', () => {\n  it('stores email', () => {\n    expect(save({ email: 'a@b.co' })).toBe(true);\n  });\n  test('phone', () => { x(); });\n});\n";
        let u = test_units(js);
        assert_eq!(names(&u), ["stores email", "phone"]);
        assert!(u[0].text(js).ends_with("});"));
    }

    #[test]
    fn bracket_matching_skips_strings_and_comments() {
        let code = "{ a = \"}\"; // }\n /* } */ b = '}' }";
        assert_eq!(match_bracket(code, 0), Some(code.len()));
    }
}
