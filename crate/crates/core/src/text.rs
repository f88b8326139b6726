//! Tokenization shared by token counting and the hashed bag-of-words embedding.

/// Lowercased alphanumeric runs of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn token_count(text: &str) -> usize {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_punctuation_and_lowercases() {
        assert_eq!(tokenize("Deep-Learning, for GRAPHS!"), ["deep", "learning", "for", "graphs"]);
        assert_eq!(token_count("  a..b  "), 2);
        assert!(tokenize("").is_empty());
    }
}
