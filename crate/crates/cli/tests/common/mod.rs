#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use miztex::lexing::{self, SymbolTable};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_miztex")
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("failed to spawn miztex")
}

pub fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "miztex {args:?} failed with {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn write(path: &Path, text: &str) {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).unwrap();
    }
    std::fs::write(path, text).unwrap();
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// A scratch directory under the target dir, wiped on creation.
pub fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

pub const SYMBOLS: &str = "#SYMBOLS\n\
c=\n\
=\n\
;\n\
&\n\
\\/\n\
/\\\n\
\\\n\
(\n\
)\n\
+\n\
<\n\
<=\n\
#IDENTIFIERS\n\
#KEYWORDS\n\
implies\n\
is\n\
in\n";

pub fn symbol_table() -> SymbolTable {
    SymbolTable::parse(SYMBOLS).unwrap()
}

/// 64 raw sentence pairs over 8 variables and 8 statement templates, small
/// enough to memorize but varied in shape and length.
pub fn toy_raw_pairs() -> Vec<(String, String)> {
    let vars = ["x", "y", "z", "u", "v", "w", "p", "q"];
    let mut pairs = Vec::new();
    for (i, a) in vars.iter().enumerate() {
        let b = vars[(i + 1) % 8];
        let c = vars[(i + 3) % 8];
        pairs.push((format!("${a} \\subseteq {b}$."), format!("{a} c= {b};")));
        pairs.push((format!("${a} = {b}$."), format!("{a} = {b};")));
        pairs.push((format!("${a} \\in {c}$."), format!("{a} in {c};")));
        pairs.push((
            format!("${a} \\cup {b} = {b} \\cup {a}$."),
            format!("{a} \\/ {b} = {b} \\/ {a};"),
        ));
        pairs.push((
            format!("${a} \\cap {c} \\subseteq {a}$."),
            format!("{a} /\\ {c} c= {a};"),
        ));
        pairs.push((
            format!("${a} \\setminus {b} \\subseteq {a}$."),
            format!("{a} \\ {b} c= {a};"),
        ));
    }
    for (i, a) in vars.iter().enumerate() {
        let b = vars[(i + 2) % 8];
        let c = vars[(i + 5) % 8];
        pairs.push((
            format!("If ${a} \\subseteq {b}$, then ${a} \\cup {b} = {b}$."),
            format!("{a} c= {b} implies {a} \\/ {b} = {b};"),
        ));
        pairs.push((
            format!("If ${a} \\subseteq {b}$ and ${b} \\subseteq {c}$, then ${a} \\subseteq {c}$."),
            format!("{a} c= {b} & {b} c= {c} implies {a} c= {c};"),
        ));
    }
    assert_eq!(pairs.len(), 64);
    pairs
}

/// The toy pairs pre-tokenized with the library tokenizers, rendered as two
/// parallel corpus files.
pub fn toy_tokenized_files() -> (String, String) {
    let table = symbol_table();
    let mut latex = String::new();
    let mut mizar = String::new();
    for (l, m) in toy_raw_pairs() {
        latex.push_str(&lexing::tokenize_latex(&l).joined());
        latex.push('\n');
        mizar.push_str(&lexing::tokenize_mizar(&m, &table).unwrap().joined());
        mizar.push('\n');
    }
    (latex, mizar)
}

pub fn count_exact_lines(hyps: &str, refs: &str) -> usize {
    hyps.lines().zip(refs.lines()).filter(|(h, r)| h == r).count()
}
