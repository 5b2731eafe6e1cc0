/// Lowercases and splits on whitespace, peeling leading and trailing ASCII
/// punctuation off each chunk as single-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let start = chars.iter().position(|c| !c.is_ascii_punctuation()).unwrap_or(chars.len());
        let end = chars.iter().rposition(|c| !c.is_ascii_punctuation()).map_or(start, |p| p + 1);
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        out.extend(chars[end.max(start)..].iter().map(|c| c.to_string()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::tokenize;

    #[test]
    fn splits_edge_punctuation_only() {
        assert_eq!(
            tokenize("Hello, how are you doing tonight?"),
            ["hello", ",", "how", "are", "you", "doing", "tonight", "?"]
        );
        assert_eq!(tokenize("don't \"stop\"!!"), ["don't", "\"", "stop", "\"", "!", "!"]);
        assert_eq!(tokenize("..."), [".", ".", "."]);
        assert!(tokenize("   ").is_empty());
    }
}
