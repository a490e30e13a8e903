use serde::{Deserialize, Serialize};

/// A token with character (Unicode scalar) offsets into the source text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

const SPLIT_TRAILING: [char; 8] = ['.', ',', ';', ':', '!', '?', '\'', '"'];

/// Splits on whitespace, then detaches one trailing punctuation character
/// from any piece longer than one character.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut piece = String::new();
    let mut piece_start = 0;
    let flush = |piece: &mut String, start: usize, tokens: &mut Vec<Token>| {
        if piece.is_empty() {
            return;
        }
        let len = piece.chars().count();
        let last = piece.chars().last().expect("non-empty piece");
        if len > 1 && SPLIT_TRAILING.contains(&last) {
            let head: String = piece.chars().take(len - 1).collect();
            tokens.push(Token {
                text: head,
                start,
                end: start + len - 1,
            });
            tokens.push(Token {
                text: last.to_string(),
                start: start + len - 1,
                end: start + len,
            });
        } else {
            tokens.push(Token {
                text: std::mem::take(piece),
                start,
                end: start + len,
            });
        }
        piece.clear();
    };
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            flush(&mut piece, piece_start, &mut tokens);
        } else {
            if piece.is_empty() {
                piece_start = i;
            }
            piece.push(c);
        }
    }
    flush(&mut piece, piece_start, &mut tokens);
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn template_sentence() {
        let toks = tokenize("Alice's secret is qwertyui.");
        assert_eq!(texts(&toks), ["Alice's", "secret", "is", "qwertyui", "."]);
        let spans: Vec<_> = toks.iter().map(|t| (t.start, t.end)).collect();
        assert_eq!(spans, [(0, 7), (8, 14), (15, 17), (18, 26), (26, 27)]);
    }

    #[test]
    fn simple_cases() {
        assert_eq!(texts(&tokenize("a b")), ["a", "b"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \t").is_empty());
        assert_eq!(texts(&tokenize(". x!!")), [".", "x!", "!"]);
        assert_eq!(texts(&tokenize("ünï, ok")), ["ünï", ",", "ok"]);
    }

    proptest! {
        #[test]
        fn offsets_reconstruct_text(text in "[a-z.,!' ]{0,40}") {
            let chars: Vec<char> = text.chars().collect();
            let toks = tokenize(&text);
            let mut prev_end = 0;
            for t in &toks {
                prop_assert!(t.start >= prev_end && t.start < t.end);
                let slice: String = chars[t.start..t.end].iter().collect();
                prop_assert_eq!(&slice, &t.text);
                prop_assert!(chars[prev_end..t.start].iter().all(|c| c.is_whitespace()));
                prev_end = t.end;
            }
            prop_assert!(chars[prev_end..].iter().all(|c| c.is_whitespace()));
        }
    }
}
