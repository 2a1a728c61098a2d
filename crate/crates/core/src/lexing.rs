//! Tokenizers for Mizar statements and LaTeX-rendered mathematical sentences.
//!
//! Mizar text frequently concatenates adjacent tokens (`n<m`), so the Mizar
//! tokenizer separates them by longest-match lookup against an article's
//! symbol table. The LaTeX tokenizer splits structural characters into
//! single tokens, keeps `\tag` control sequences intact, and leaves font
//! information alone. Both emit token lists whose single-space join is the
//! canonical tokenized form written to corpus files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexError {
    #[error("unknown character {ch:?} at position {position}")]
    UnknownCharacter { position: usize, ch: char },
    #[error("brace group opened at position {position} never closes")]
    UnbalancedBraces { position: usize },
    #[error("invalid symbol table entry on line {line}: {reason}")]
    InvalidTableEntry { line: usize, reason: String },
}

/// Which side of the aligned corpus a token sequence belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Language {
    Latex,
    Mizar,
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Language::Latex => write!(f, "latex"),
            Language::Mizar => write!(f, "mizar"),
        }
    }
}

/// Ordered surface tokens for one statement.
///
/// Tokens are non-empty and contain no whitespace, so joining with single
/// spaces reproduces the canonical tokenized line.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<String>,
    language: Language,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>, language: Language) -> Self {
        debug_assert!(
            tokens.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)),
            "tokens must be non-empty and whitespace-free"
        );
        TokenSequence { tokens, language }
    }

    /// Parse a canonical tokenized line (whitespace-separated tokens).
    pub fn from_line(line: &str, language: Language) -> Self {
        let tokens = line.split_whitespace().map(str::to_owned).collect();
        TokenSequence { tokens, language }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn language(&self) -> Language {
        self.language
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Canonical single-space join.
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone)]
struct SymbolEntry {
    text: String,
    chars: Vec<char>,
}

/// An article's symbol and identifier files, used to separate concatenated
/// Mizar tokens.
#[derive(Debug, Clone, Default)]
pub struct SymbolTable {
    /// Symbols bucketed by first character, longest first within a bucket.
    buckets: BTreeMap<char, Vec<SymbolEntry>>,
    identifiers: BTreeSet<String>,
    keywords: BTreeSet<String>,
}

impl SymbolTable {
    pub fn new<S: Into<String>>(
        symbols: impl IntoIterator<Item = S>,
        identifiers: impl IntoIterator<Item = S>,
        keywords: impl IntoIterator<Item = S>,
    ) -> Result<Self, LexError> {
        let mut table = SymbolTable::default();
        for s in symbols {
            table.add_symbol(s.into(), 0)?;
        }
        for s in identifiers {
            table.identifiers.insert(validate_entry(s.into(), 0)?);
        }
        for s in keywords {
            table.keywords.insert(validate_entry(s.into(), 0)?);
        }
        table.finish();
        Ok(table)
    }

    fn add_symbol(&mut self, text: String, line: usize) -> Result<(), LexError> {
        let text = validate_entry(text, line)?;
        let chars: Vec<char> = text.chars().collect();
        self.buckets.entry(chars[0]).or_default().push(SymbolEntry { text, chars });
        Ok(())
    }

    /// Sort each bucket longest-first so a linear scan finds the maximal
    /// match, and drop duplicates.
    fn finish(&mut self) {
        for bucket in self.buckets.values_mut() {
            bucket.sort_by(|a, b| {
                b.chars.len().cmp(&a.chars.len()).then_with(|| a.text.cmp(&b.text))
            });
            bucket.dedup_by(|a, b| a.text == b.text);
        }
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.buckets.values().flatten().map(|e| e.text.as_str())
    }

    pub fn identifiers(&self) -> &BTreeSet<String> {
        &self.identifiers
    }

    pub fn keywords(&self) -> &BTreeSet<String> {
        &self.keywords
    }

    /// Longest symbol matching at `pos`, if any.
    fn longest_match(&self, chars: &[char], pos: usize) -> Option<&SymbolEntry> {
        self.buckets.get(&chars[pos])?.iter().find(|entry| {
            chars.len() - pos >= entry.chars.len()
                && chars[pos..pos + entry.chars.len()] == entry.chars[..]
        })
    }

    /// Parse the on-disk table format: one entry per line under `#SYMBOLS`,
    /// `#IDENTIFIERS` and `#KEYWORDS` section headers. Blank lines are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self, LexError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Symbols,
            Identifiers,
            Keywords,
        }
        let mut table = SymbolTable::default();
        let mut section = Section::None;
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            match line {
                "#SYMBOLS" => section = Section::Symbols,
                "#IDENTIFIERS" => section = Section::Identifiers,
                "#KEYWORDS" => section = Section::Keywords,
                entry => match section {
                    Section::None => {
                        return Err(LexError::InvalidTableEntry {
                            line: lineno + 1,
                            reason: "entry before any section header".into(),
                        })
                    }
                    Section::Symbols => table.add_symbol(entry.to_owned(), lineno + 1)?,
                    Section::Identifiers => {
                        table.identifiers.insert(validate_entry(entry.to_owned(), lineno + 1)?);
                    }
                    Section::Keywords => {
                        table.keywords.insert(validate_entry(entry.to_owned(), lineno + 1)?);
                    }
                },
            }
        }
        table.finish();
        Ok(table)
    }

    /// Render the on-disk table format.
    pub fn render(&self) -> String {
        let mut out = String::from("#SYMBOLS\n");
        let mut sorted: Vec<&str> = self.symbols().collect();
        sorted.sort();
        for s in sorted {
            out.push_str(s);
            out.push('\n');
        }
        out.push_str("#IDENTIFIERS\n");
        for s in &self.identifiers {
            out.push_str(s);
            out.push('\n');
        }
        out.push_str("#KEYWORDS\n");
        for s in &self.keywords {
            out.push_str(s);
            out.push('\n');
        }
        out
    }
}

fn validate_entry(text: String, line: usize) -> Result<String, LexError> {
    if text.is_empty() {
        return Err(LexError::InvalidTableEntry { line, reason: "empty entry".into() });
    }
    if text.chars().any(char::is_whitespace) {
        return Err(LexError::InvalidTableEntry {
            line,
            reason: format!("entry {text:?} contains whitespace"),
        });
    }
    Ok(text)
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\''
}

/// Tokenize one Mizar statement by longest-match segmentation.
///
/// At each position the longest symbol-table match wins; otherwise a maximal
/// identifier/number run (letters, digits, underscore, apostrophe) is
/// consumed. Whitespace separates tokens but never produces one.
pub fn tokenize_mizar(raw: &str, table: &SymbolTable) -> Result<TokenSequence, LexError> {
    let chars: Vec<char> = raw.chars().collect();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < chars.len() {
        let c = chars[pos];
        if c.is_whitespace() {
            pos += 1;
            continue;
        }
        if let Some(entry) = table.longest_match(&chars, pos) {
            tokens.push(entry.text.clone());
            pos += entry.chars.len();
            continue;
        }
        if is_ident_char(c) {
            let start = pos;
            while pos < chars.len() && is_ident_char(chars[pos]) {
                pos += 1;
            }
            tokens.push(chars[start..pos].iter().collect());
            continue;
        }
        return Err(LexError::UnknownCharacter { position: pos, ch: c });
    }
    Ok(TokenSequence::new(tokens, Language::Mizar))
}

/// Characters that always form their own LaTeX token.
const LATEX_DELIMS: &[char] = &['$', '{', '}', '[', ']', '(', ')', '^', '_', ',', '.'];

fn is_latex_delim(c: char) -> bool {
    LATEX_DELIMS.contains(&c)
}

/// Tokenize one LaTeX-rendered sentence (markup already stripped).
///
/// Dollar signs, braces, brackets, parentheses, carets, underscores, commas
/// and periods become single tokens; `\tag` control sequences stay intact;
/// any other run of non-delimiter, non-space characters forms a token.
pub fn tokenize_latex(raw: &str) -> TokenSequence {
    let chars: Vec<char> = raw.chars().collect();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < chars.len() {
        let c = chars[pos];
        if c.is_whitespace() {
            pos += 1;
            continue;
        }
        if is_latex_delim(c) {
            tokens.push(c.to_string());
            pos += 1;
            continue;
        }
        if c == '\\' {
            let start = pos;
            pos += 1;
            if pos < chars.len() && chars[pos].is_ascii_alphabetic() {
                while pos < chars.len() && chars[pos].is_ascii_alphabetic() {
                    pos += 1;
                }
            } else if pos < chars.len() {
                // Control symbol like \{ or \, lexes as a two-character token.
                pos += 1;
            }
            tokens.push(chars[start..pos].iter().collect());
            continue;
        }
        let start = pos;
        while pos < chars.len() {
            let c = chars[pos];
            if c.is_whitespace() || is_latex_delim(c) || c == '\\' {
                break;
            }
            pos += 1;
        }
        tokens.push(chars[start..pos].iter().collect());
    }
    TokenSequence::new(tokens, Language::Latex)
}

/// Which LaTeX commands [`strip_markup`] removes.
#[derive(Debug, Clone)]
pub struct MarkupFilter {
    /// Commands removed together with their brace argument.
    pub commands_with_arg: Vec<String>,
    /// Commands removed by themselves.
    pub bare_commands: Vec<String>,
    /// Environments whose `\begin{..}` / `\end{..}` markers are removed.
    pub environments: Vec<String>,
}

impl Default for MarkupFilter {
    fn default() -> Self {
        MarkupFilter {
            commands_with_arg: vec!["label".into(), "ref".into(), "cite".into()],
            bare_commands: vec!["item".into()],
            environments: vec!["itemize".into(), "enumerate".into(), "description".into()],
        }
    }
}

/// Remove cross-referencing tags and itemization markup, leaving
/// mathematical content and font tags untouched.
pub fn strip_markup(raw: &str, filter: &MarkupFilter) -> Result<String, LexError> {
    let chars: Vec<char> = raw.chars().collect();
    let mut out = String::with_capacity(raw.len());
    let mut pos = 0;
    while pos < chars.len() {
        if chars[pos] != '\\' {
            out.push(chars[pos]);
            pos += 1;
            continue;
        }
        let cmd_start = pos;
        let mut cursor = pos + 1;
        let word_start = cursor;
        while cursor < chars.len() && chars[cursor].is_ascii_alphabetic() {
            cursor += 1;
        }
        let word: String = chars[word_start..cursor].iter().collect();

        if word == "begin" || word == "end" {
            let after = skip_ws(&chars, cursor);
            if after < chars.len() && chars[after] == '{' {
                let close = find_group_end(&chars, after)?;
                let env: String = chars[after + 1..close].iter().collect();
                if filter.environments.iter().any(|e| *e == env) {
                    pos = close + 1;
                    continue;
                }
            }
            out.extend(&chars[cmd_start..cursor]);
            pos = cursor;
            continue;
        }
        if filter.commands_with_arg.iter().any(|c| *c == word) {
            let after = skip_ws(&chars, cursor);
            if after < chars.len() && chars[after] == '{' {
                pos = find_group_end(&chars, after)? + 1;
            } else {
                pos = cursor;
            }
            continue;
        }
        if filter.bare_commands.iter().any(|c| *c == word) {
            pos = cursor;
            continue;
        }
        // Any other control sequence passes through untouched.
        if word.is_empty() && cursor < chars.len() {
            cursor += 1; // control symbol such as \{
        }
        out.extend(&chars[cmd_start..cursor]);
        pos = cursor;
    }
    Ok(out)
}

fn skip_ws(chars: &[char], mut pos: usize) -> usize {
    while pos < chars.len() && chars[pos].is_whitespace() {
        pos += 1;
    }
    pos
}

/// Index of the `}` closing the group opened at `open` (which must be `{`).
fn find_group_end(chars: &[char], open: usize) -> Result<usize, LexError> {
    debug_assert_eq!(chars[open], '{');
    let mut depth = 0usize;
    for (i, &c) in chars.iter().enumerate().skip(open) {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(i);
                }
            }
            _ => {}
        }
    }
    Err(LexError::UnbalancedBraces { position: open })
}
