use super::Article;
use crate::error::{Error, Result};

/// Words that end in a period without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "ft", "lt", "sgt", "capt", "cpl",
    "det", "ofc", "gen", "col", "maj", "gov", "sen", "rep", "rev", "hon", "supt", "insp", "dep",
    "no", "vs", "etc", "inc", "co", "corp", "ltd", "ave", "blvd", "rd", "hwy", "jan", "feb",
    "mar", "apr", "aug", "sept", "sep", "oct", "nov", "dec", "u.s", "a.m", "p.m", "e.g", "i.e",
];

const TERMINATORS: [char; 3] = ['.', '!', '?'];
const CLOSERS: [char; 6] = ['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];

/// Splits `body` into sentences and sentences into lowercase tokens.
pub fn tokenize(article: &Article) -> Result<Article> {
    let sentences = split_sentences(&article.body);
    if sentences.is_empty() {
        return Err(Error::EmptyDocument(article.id.clone()));
    }
    Ok(Article {
        sentences,
        ..article.clone()
    })
}

/// Sentence boundaries fall after `.`, `!` or `?` (plus any closing quotes
/// or brackets) when followed by whitespace and an uppercase letter, unless
/// the period ends a known abbreviation or a single-letter initial.
pub fn split_sentences(text: &str) -> Vec<Vec<String>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (_, c) = chars[i];
        if !TERMINATORS.contains(&c) {
            i += 1;
            continue;
        }
        let term_pos = i;
        let mut j = i + 1;
        while j < chars.len() && (TERMINATORS.contains(&chars[j].1) || CLOSERS.contains(&chars[j].1)) {
            j += 1;
        }
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let boundary = k > j
            && k < chars.len()
            && chars[k].1.is_uppercase()
            && !(c == '.' && ends_with_abbreviation(&chars[..term_pos]));
        if boundary {
            let end = chars.get(j).map_or(text.len(), |&(b, _)| b);
            push_sentence(&mut sentences, &text[start..end]);
            start = chars[k].0;
            i = k;
        } else {
            i = j;
        }
    }
    push_sentence(&mut sentences, &text[start..]);
    sentences
}

fn push_sentence(out: &mut Vec<Vec<String>>, text: &str) {
    let tokens = word_tokens(text);
    if !tokens.is_empty() {
        out.push(tokens);
    }
}

fn ends_with_abbreviation(before: &[(usize, char)]) -> bool {
    let word: String = before
        .iter()
        .rev()
        .take_while(|(_, c)| !c.is_whitespace())
        .map(|&(_, c)| c)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .skip_while(|c| !c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    if word.chars().count() == 1 && word.chars().all(char::is_alphabetic) {
        return true;
    }
    ABBREVIATIONS.contains(&word.as_str())
}

/// Lowercased tokens: maximal alphanumeric runs, with every other
/// non-whitespace character as a token of its own.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn article(body: &str) -> Article {
        Article {
            id: "t".into(),
            city: None,
            state: None,
            date: NaiveDate::from_ymd_opt(2018, 1, 1).unwrap(),
            title: String::new(),
            body: body.into(),
            sentences: vec![],
        }
    }

    fn owned(v: &[&[&str]]) -> Vec<Vec<String>> {
        v.iter().map(|s| s.iter().map(|t| t.to_string()).collect()).collect()
    }

    #[test]
    fn two_simple_sentences() {
        let a = tokenize(&article("He ran. She hid.")).unwrap();
        assert_eq!(a.sentences, owned(&[&["he", "ran", "."], &["she", "hid", "."]]));
    }

    #[test]
    fn abbreviation_does_not_split() {
        let a = tokenize(&article("Dr. Lee spoke.")).unwrap();
        assert_eq!(a.sentences, owned(&[&["dr", ".", "lee", "spoke", "."]]));
    }

    #[test]
    fn initials_and_lowercase_continuations() {
        assert_eq!(split_sentences("J. Smith was cited. It was late.").len(), 2);
        assert_eq!(split_sentences("Police said 3.5 miles away. no split here").len(), 1);
        assert_eq!(split_sentences("\"Stop!\" He ran? Yes.").len(), 3);
    }

    #[test]
    fn whitespace_body_is_empty_document() {
        assert!(matches!(tokenize(&article("  \n\t ")), Err(Error::EmptyDocument(_))));
    }

    proptest! {
        #[test]
        fn tokens_cover_every_visible_character(body in "[A-Za-z0-9 .!?,'\"()\\-\n]{0,200}") {
            let sentences = split_sentences(&body);
            prop_assert!(sentences.iter().all(|s| !s.is_empty()));
            prop_assert!(sentences.iter().flatten().all(|t| !t.is_empty()));
            let joined: String = sentences.iter().flatten().map(String::as_str).collect();
            let expected: String = body
                .chars()
                .filter(|c| !c.is_whitespace())
                .flat_map(char::to_lowercase)
                .collect();
            prop_assert_eq!(joined, expected);
        }
    }
}
