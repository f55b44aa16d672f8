use std::collections::HashSet;
use std::io;
use std::path::Path;

/// Deterministic word tokenizer.
///
/// Text is lowercased, then split on whitespace. Each piece sheds leading and
/// trailing non-alphanumeric characters as single-character tokens and a
/// possessive `'s` as its own token. Interior punctuation such as hyphens
/// stays attached.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for piece in lower.split_whitespace() {
        split_piece(piece, &mut out);
    }
    out
}

fn is_possessive(s: &str) -> bool {
    s == "'s" || s == "\u{2019}s"
}

fn split_piece(piece: &str, out: &mut Vec<String>) {
    if is_possessive(piece) {
        out.push(piece.to_string());
        return;
    }
    let chars: Vec<char> = piece.chars().collect();
    let mut end = chars.len();
    while end > 0 && !chars[end - 1].is_alphanumeric() {
        end -= 1;
    }
    let trailing = &chars[end..];
    let mut core = &chars[..end];

    let mut possessive = None;
    let core_str: String = core.iter().collect();
    if is_possessive(&core_str) {
        possessive = Some(core_str);
        core = &[];
    } else if core.len() > 2 && (core_str.ends_with("'s") || core_str.ends_with("\u{2019}s")) {
        possessive = Some(core[core.len() - 2..].iter().collect());
        core = &core[..core.len() - 2];
    }

    let mut inner_end = core.len();
    if possessive.is_some() {
        while inner_end > 0 && !core[inner_end - 1].is_alphanumeric() {
            inner_end -= 1;
        }
    }
    let mut start = 0;
    while start < inner_end && !core[start].is_alphanumeric() {
        out.push(core[start].to_string());
        start += 1;
    }
    if start < inner_end {
        out.push(core[start..inner_end].iter().collect());
    }
    out.extend(core[inner_end..].iter().map(|c| c.to_string()));
    if let Some(p) = possessive {
        out.push(p);
    }
    out.extend(trailing.iter().map(|c| c.to_string()));
}

/// Fixed English stopword list shared by label construction and retrieval.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stopwords {
    words: HashSet<String>,
}

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");

impl Default for Stopwords {
    fn default() -> Self {
        Stopwords::parse(DEFAULT_STOPWORDS)
    }
}

impl Stopwords {
    /// One lowercase word per line; blank lines ignored.
    pub fn parse(text: &str) -> Self {
        Stopwords {
            words: text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_lowercase)
                .collect(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(Stopwords::parse(&std::fs::read_to_string(path)?))
    }

    pub fn empty() -> Self {
        Stopwords { words: HashSet::new() }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn empty_input() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \n\t").is_empty());
    }

    #[test]
    fn trailing_full_stop_detached() {
        assert_eq!(tokenize("The cat sat."), ["the", "cat", "sat", "."]);
    }

    #[test]
    fn possessive_split_and_hyphen_kept() {
        assert_eq!(tokenize("Dick's crack-addiction"), ["dick", "'s", "crack-addiction"]);
    }

    #[test]
    fn leading_and_trailing_punctuation() {
        assert_eq!(
            tokenize("\"Hello,\" she said... (quietly)"),
            ["\"", "hello", ",", "\"", "she", "said", ".", ".", ".", "(", "quietly", ")"]
        );
        assert_eq!(tokenize("roberta's."), ["roberta", "'s", "."]);
        assert_eq!(tokenize("U.S. navy"), ["u.s", ".", "navy"]);
    }

    #[test]
    fn default_stopwords_loaded() {
        let s = Stopwords::default();
        assert!(s.len() >= 140);
        assert!(s.contains("the") && s.contains("of"));
        assert!(!s.contains("violin"));
    }

    proptest! {
        #[test]
        fn idempotent_on_joined_output(text in "[ a-zA-Z0-9.,;:!?'\"()\\-]{0,60}") {
            let once = tokenize(&text);
            let again = tokenize(&once.join(" "));
            prop_assert_eq!(&once, &again);
            for t in &once {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.chars().any(char::is_whitespace));
                prop_assert_eq!(t.to_lowercase(), t.clone());
            }
        }
    }
}
