//! Tokenization helpers and the lexicons shared by the text operators and
//! the corpus generator.

pub const PERSONS: &[&str] = &["Smith", "Miller", "Jones", "Garcia", "Chen", "Kumar", "Novak", "Weber"];
pub const COMPANIES: &[&str] = &["Acme", "Globex", "Initech", "Umbrella", "Hooli", "Vandelay", "Stark", "Wayne"];
pub const LOCATIONS: &[&str] = &["Berlin", "Paris", "Tokyo", "Boston", "Lagos", "Lima"];
pub const RELATION_VERBS: &[&str] = &["joined", "acquired", "founded", "leads", "sued", "advises"];
pub const OTHER_VERBS: &[&str] = &["said", "announced", "visited", "met", "reported"];
pub const DETERMINERS: &[&str] = &["the", "a", "an"];
pub const STOPWORDS: &[&str] = &["the", "a", "an", "of", "in", "on", "at", "to", "and"];
pub const ABBREVIATIONS: &[&str] = &["Dr.", "Mr.", "Mrs.", "Ms.", "St."];

/// Space-separated tokens; the generator never emits runs of spaces.
pub fn tokens(text: &str) -> Vec<&str> {
    if text.is_empty() {
        Vec::new()
    } else {
        text.split(' ').collect()
    }
}

/// Token without trailing punctuation.
pub fn bare(tok: &str) -> &str {
    tok.trim_end_matches(['.', ',', ';', ':', '!', '?'])
}

/// Sentence spans `[begin, end)` over token indices. A token ending in a
/// period closes a sentence unless it is a known abbreviation.
pub fn sentence_spans(toks: &[&str]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, t) in toks.iter().enumerate() {
        let closes = (t.ends_with('.') || t.ends_with('!') || t.ends_with('?')) && !ABBREVIATIONS.contains(t);
        if closes {
            spans.push((start, i + 1));
            start = i + 1;
        }
    }
    if start < toks.len() {
        spans.push((start, toks.len()));
    }
    spans
}

pub fn pos_tag(tok: &str) -> &'static str {
    let b = bare(tok);
    let lower = b.to_lowercase();
    if RELATION_VERBS.contains(&lower.as_str()) || OTHER_VERBS.contains(&lower.as_str()) {
        "VB"
    } else if DETERMINERS.contains(&lower.as_str()) {
        "DT"
    } else if b.chars().next().is_some_and(char::is_uppercase) {
        "NNP"
    } else {
        "NN"
    }
}

/// Suffix-stripping stemmer; words of four letters or fewer are left alone.
pub fn stem(tok: &str) -> Option<String> {
    let b = bare(tok);
    if b.chars().count() <= 4 || !b.chars().all(|c| c.is_ascii_lowercase()) {
        return None;
    }
    let punct = &tok[b.len()..];
    for suf in ["ing", "ed", "s"] {
        if let Some(root) = b.strip_suffix(suf) {
            if root.len() >= 3 {
                return Some(format!("{root}{punct}"));
            }
        }
    }
    None
}

pub fn is_stopword(tok: &str) -> bool {
    STOPWORDS.contains(&bare(tok).to_lowercase().as_str())
}

/// Removes `<...>` tags, keeping the surrounding characters.
pub fn strip_markup(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_tag = false;
    for c in s.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => in_tag = false,
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    out
}
