//! Bundled benchmark programs and generators for the parameterized ones.

use std::fmt::Write;

pub const BANKING: &str = include_str!("../corpus/banking.mc");
pub const BANKING_CORPUS: &str = include_str!("../corpus/banking_corpus.mc");

/// Two threads: the first sets `x`, performs `p1` writes to `y` and checks
/// `x`; the second performs `p2` writes to `x` and then `p3` writes to `y`.
pub fn parameterized(p1: usize, p2: usize, p3: usize) -> String {
    let mut s = String::from("int x;\nint y;\n\nvoid first() {\n    x = 10;\n");
    for _ in 0..p1 {
        s.push_str("    y = 1;\n");
    }
    s.push_str("    assert(x == 10);\n}\n\nvoid second() {\n");
    for _ in 0..p2 {
        s.push_str("    x = 1;\n");
    }
    for _ in 0..p3 {
        s.push_str("    y = 1;\n");
    }
    s.push_str("}\n\nvoid main() {\n    t1 = async first();\n    t2 = async second();\n}\n");
    s
}

/// Two threads: the first sets `x` and checks it; the second writes a
/// conflicting value and then performs `n` redundant writes to `tmp`.
pub fn redundant_writes(n: usize) -> String {
    let mut s = String::from("int x;\nint tmp;\n\nvoid first() {\n    x = 10;\n    assert(x == 10);\n}\n\nvoid second() {\n    x = 5;\n");
    for _ in 0..n {
        s.push_str("    tmp = 1;\n");
    }
    s.push_str("}\n\nvoid main() {\n    t1 = async first();\n    t2 = async second();\n}\n");
    s
}

/// A named benchmark program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Benchmark {
    pub name: String,
    pub source: String,
}

impl Benchmark {
    fn new(name: impl Into<String>, source: impl Into<String>) -> Self {
        Benchmark {
            name: name.into(),
            source: source.into(),
        }
    }
}

/// Parameter triples of the bundled instances of [`parameterized`].
pub const CORPUS_PARAMETERS: [(usize, usize, usize); 5] =
    [(0, 1, 0), (0, 1, 10), (2, 1, 0), (0, 4, 0), (2, 4, 0)];

/// Every bundled program, in a fixed order.
pub fn all() -> Vec<Benchmark> {
    let mut out = vec![
        Benchmark::new("banking", BANKING),
        Benchmark::new("banking_corpus", BANKING_CORPUS),
        Benchmark::new("redundant_writes_4", redundant_writes(4)),
    ];
    for (p1, p2, p3) in CORPUS_PARAMETERS {
        out.push(Benchmark::new(
            parameterized_name(p1, p2, p3),
            parameterized(p1, p2, p3),
        ));
    }
    out
}

pub fn parameterized_name(p1: usize, p2: usize, p3: usize) -> String {
    let mut s = String::new();
    write!(s, "param_{p1}_{p2}_{p3}").expect("writing to a String");
    s
}

/// Named suites for the bench command.
pub fn suite(name: &str) -> Option<Vec<Benchmark>> {
    let sweep = |points: Vec<(usize, usize, usize)>| {
        points
            .into_iter()
            .map(|(a, b, c)| Benchmark::new(parameterized_name(a, b, c), parameterized(a, b, c)))
            .collect()
    };
    match name {
        "corpus" => Some(all()),
        "size" => Some(sweep((0..=4).map(|k| (0, 1, 10 * k)).collect())),
        "strong-size" => Some(sweep((0..=4).map(|p1| (p1, 1, 0)).collect())),
        "weak-size" => Some(sweep((1..=5).map(|p2| (0, p2, 0)).collect())),
        _ => None,
    }
}

pub const SUITES: &[&str] = &["corpus", "size", "strong-size", "weak-size"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    #[test]
    fn corpus_directory_matches_generators() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/corpus");
        for b in all() {
            let on_disk = std::fs::read_to_string(format!("{dir}/{}.mc", b.name)).unwrap();
            assert_eq!(on_disk, b.source, "{}", b.name);
        }
    }

    #[test]
    fn bundled_programs_parse() {
        for b in all() {
            parse(&b.source).unwrap_or_else(|e| panic!("{}: {e}", b.name));
        }
        for s in SUITES {
            assert!(!suite(s).unwrap().is_empty());
        }
    }
}
