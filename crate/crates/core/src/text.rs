//! Small lexical helpers shared by the ingest, template and lint stages.

/// True for characters that may appear inside a Lean identifier.
pub fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '\'' | '.' | '!' | '?')
}

/// Splits formal or natural text into identifier-like tokens, in order.
///
/// Leading and trailing dots are trimmed so that sentence punctuation does not
/// glue onto names (`"h1."` yields `h1`).
pub fn identifiers(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (start, is_ident_char(c)) {
            (None, true) => start = Some(i),
            (Some(s), false) => {
                push_trimmed(&mut out, &text[s..i]);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        push_trimmed(&mut out, &text[s..]);
    }
    out
}

fn push_trimmed<'a>(out: &mut Vec<&'a str>, tok: &'a str) {
    let tok = tok.trim_matches(|c| matches!(c, '.' | '!' | '?'));
    if !tok.is_empty() {
        out.push(tok);
    }
}

/// Names that cannot be ordinary words: qualified (`Nat.add_assoc`), with an
/// underscore, or with an uppercase letter after the first character
/// (`sInf`). A bare capitalized word like `Even` is not treated as formal.
pub fn looks_formal_name(name: &str) -> bool {
    name.contains('.') || name.contains('_') || name.chars().skip(1).any(char::is_uppercase)
}
