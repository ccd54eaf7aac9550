//! Text normalization and the tokenizer shared by the language-model
//! backends and the overlap metrics.

/// Characters stripped from the end of a phrase during normalization.
const TERMINAL_PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':'];

/// Lowercases, trims, collapses internal whitespace and strips trailing
/// punctuation.
pub fn normalize(text: &str) -> String {
    let collapsed = collapse_whitespace(&text.to_lowercase());
    collapsed
        .trim_end_matches(|c: char| TERMINAL_PUNCTUATION.contains(&c) || c.is_whitespace())
        .to_string()
}

/// Trims and collapses runs of whitespace to a single space, preserving case.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercase whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}
