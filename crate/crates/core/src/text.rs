//! Criteria-text tokenization shared by the sentence encoder and the
//! quantity extractor.

/// Lowercases and splits `text` into word, number and symbol tokens.
///
/// * whitespace and punctuation separate tokens and are dropped, except:
/// * `≤ ≥ < > = %` are standalone tokens; `<=`/`>=` become `≤`/`≥`;
/// * a `.` or `,` between digits stays inside the number (`6.5`, `1,000`
///   becomes `1000`);
/// * a `/` or `^` between alphanumerics stays inside the token (`mg/dl`);
/// * a `-` between two digits becomes a standalone `-` token (`18-65`).
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, tokens: &mut Vec<String>| {
        if !cur.is_empty() {
            tokens.push(std::mem::take(cur));
        }
    };
    let is_word = |c: char| c.is_alphanumeric();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let prev = i.checked_sub(1).map(|j| chars[j]);
        let next = chars.get(i + 1).copied();
        if is_word(c) {
            cur.push(c);
        } else if (c == '.' || c == ',')
            && prev.is_some_and(|p| p.is_ascii_digit())
            && next.is_some_and(|n| n.is_ascii_digit())
            && cur.chars().all(|ch| ch.is_ascii_digit() || ch == '.')
        {
            if c == '.' {
                cur.push('.');
            }
        } else if (c == '/' || c == '^')
            && !cur.is_empty()
            && next.is_some_and(is_word)
        {
            cur.push(c);
        } else if c == '-'
            && prev.is_some_and(|p| p.is_ascii_digit())
            && next.is_some_and(|n| n.is_ascii_digit())
        {
            flush(&mut cur, &mut tokens);
            tokens.push("-".to_string());
        } else if (c == '<' || c == '>') && next == Some('=') {
            flush(&mut cur, &mut tokens);
            tokens.push(if c == '<' { "≤" } else { "≥" }.to_string());
            i += 1;
        } else if matches!(c, '≤' | '≥' | '<' | '>' | '=' | '%') {
            flush(&mut cur, &mut tokens);
            tokens.push(c.to_string());
        } else {
            flush(&mut cur, &mut tokens);
        }
        i += 1;
    }
    flush(&mut cur, &mut tokens);
    tokens
}

/// Parses a token made only of digits with at most one decimal point.
pub fn parse_number(token: &str) -> Option<f64> {
    let mut dots = 0;
    let mut digits = 0;
    for c in token.chars() {
        match c {
            '0'..='9' => digits += 1,
            '.' => dots += 1,
            _ => return None,
        }
    }
    if digits == 0 || dots > 1 {
        return None;
    }
    token.parse().ok()
}

/// Digits followed by an ordinal suffix (`1st`, `22nd`, `3rd`, `4th`).
pub fn parse_ordinal(token: &str) -> Option<f64> {
    let split = token.find(|c: char| !c.is_ascii_digit())?;
    let (num, suffix) = token.split_at(split);
    if num.is_empty() || !matches!(suffix, "st" | "nd" | "rd" | "th") {
        return None;
    }
    num.parse().ok()
}
