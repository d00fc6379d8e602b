//! Tokenization shared by the scorers and the context-window budget.

use unicode_normalization::UnicodeNormalization;

/// Separator placed after each utterance when utterances are concatenated.
pub const SEPARATOR: &str = "</s>";
pub const TAG_MAFIOSO: &str = "[MAFIOSO]";
pub const TAG_BYSTANDER: &str = "[BYSTANDER]";
pub const TAG_UNKNOWN: &str = "[UNKNOWN]";

/// Tokens that pass through tokenization verbatim.
pub const SPECIAL_TOKENS: [&str; 4] = [SEPARATOR, TAG_MAFIOSO, TAG_BYSTANDER, TAG_UNKNOWN];

const CLITICS: [&str; 7] = ["'s", "'re", "'ll", "'ve", "'d", "'m", "n't"];

pub fn is_special(token: &str) -> bool {
    SPECIAL_TOKENS.contains(&token)
}

/// Splits text into lowercase word, clitic and punctuation tokens.
///
/// Text is NFKC-normalized and lowercased; runs of one punctuation mark
/// ("...", "!!") stay together; English clitics split off ("it's" gives
/// "it", "'s"). The special tokens in [`SPECIAL_TOKENS`] survive unchanged.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        tokenize_chunk(chunk, &mut out);
    }
    out
}

/// Number of tokens `text` occupies.
pub fn token_count(text: &str) -> usize {
    tokenize(text).len()
}

fn tokenize_chunk(chunk: &str, out: &mut Vec<String>) {
    // Special tokens may be glued to surrounding text, e.g. "hi</s>".
    let mut rest = chunk;
    while !rest.is_empty() {
        let hit = SPECIAL_TOKENS
            .iter()
            .filter_map(|s| rest.find(s).map(|pos| (pos, *s)))
            .min_by_key(|(pos, _)| *pos);
        match hit {
            Some((pos, special)) => {
                tokenize_plain(&rest[..pos], out);
                out.push(special.to_owned());
                rest = &rest[pos + special.len()..];
            }
            None => {
                tokenize_plain(rest, out);
                break;
            }
        }
    }
}

fn normalize(text: &str) -> String {
    let lowered: String = text.nfkc().collect::<String>().to_lowercase();
    lowered
        .nfkc()
        .map(|c| match c {
            '\u{2018}' | '\u{2019}' | '\u{02bc}' => '\'',
            other => other,
        })
        .collect()
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

fn tokenize_plain(text: &str, out: &mut Vec<String>) {
    let text = normalize(text);
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if is_word_char(c) {
            let start = i;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            let run: String = chars[start..i].iter().collect();
            split_word_run(&run, out);
        } else {
            let start = i;
            while i < chars.len() && chars[i] == c {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        }
    }
}

/// Splits a run of alphanumerics and apostrophes into words and clitics.
fn split_word_run(run: &str, out: &mut Vec<String>) {
    if !run.contains('\'') || CLITICS.contains(&run) {
        out.push(run.to_owned());
        return;
    }
    let plain = |s: &str| !s.is_empty() && !s.contains('\'');
    if let Some(prefix) = run.strip_suffix("n't") {
        if plain(prefix) {
            out.push(prefix.to_owned());
            out.push("n't".to_owned());
            return;
        }
    }
    if let Some(pos) = run.rfind('\'') {
        let (prefix, suffix) = run.split_at(pos);
        if plain(prefix) && CLITICS.contains(&suffix) {
            out.push(prefix.to_owned());
            out.push(suffix.to_owned());
            return;
        }
    }
    // Quotes and odd apostrophes: words and apostrophe runs become tokens.
    let mut current = String::new();
    let mut current_is_quote = false;
    for c in run.chars() {
        let quote = c == '\'';
        if !current.is_empty() && quote != current_is_quote {
            out.push(std::mem::take(&mut current));
        }
        current_is_quote = quote;
        current.push(c);
    }
    if !current.is_empty() {
        out.push(current);
    }
}
