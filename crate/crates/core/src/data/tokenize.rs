/// A token with its character span `[start, end)` in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| !c.is_alphanumeric() && !c.is_whitespace())
}

/// Lowercasing word tokenizer.
///
/// Alphanumeric runs form tokens; every other non-space character is a token
/// of its own. A `.` or `,` between two digits of a numeric run stays inside
/// the number, so `16.90` and `1,000` survive whole.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_spans(text).into_iter().map(|t| t.text).collect()
}

pub fn tokenize_with_spans(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_alphanumeric() {
            let mut numeric = c.is_ascii_digit();
            i += 1;
            while i < chars.len() {
                let ch = chars[i];
                if ch.is_alphanumeric() {
                    numeric &= ch.is_ascii_digit();
                    i += 1;
                } else if numeric
                    && (ch == '.' || ch == ',')
                    && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
                {
                    i += 1;
                } else {
                    break;
                }
            }
        } else {
            i += 1;
        }
        let text: String = chars[start..i].iter().flat_map(|c| c.to_lowercase()).collect();
        out.push(Token { text, start, end: i });
    }
    out
}

/// Inverse of [`tokenize`] up to whitespace: tokens joined by single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens.iter().map(|t| t.as_ref()).collect::<Vec<_>>().join(" ")
}
