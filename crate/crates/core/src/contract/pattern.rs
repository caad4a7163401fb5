//! A deliberately small regular expression dialect for proposal constraints.
//!
//! Supported: literal characters, `.` (any character), classes `[a-z0-9_]`
//! and `[^...]`, grouping `( )`, alternation `|`, and the postfix operators
//! `* + ?`. Patterns always match the whole input. Metacharacters are
//! escaped with `\`; `\n` and `\t` are the only letter escapes. Anchors,
//! counted repetition and shorthand classes are rejected.
//!
//! Matching simulates the pattern over sets of input positions, so run time
//! is polynomial in pattern and input length.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid pattern at offset {offset}: {message}")]
pub struct PatternError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Node {
    Empty,
    Char(char),
    Any,
    Class { negated: bool, ranges: Vec<(char, char)> },
    Concat(Vec<Node>),
    Alt(Vec<Node>),
    Star(Box<Node>),
    Plus(Box<Node>),
    Optional(Box<Node>),
}

const META: &[char] = &['\\', '.', '[', ']', '(', ')', '*', '+', '?', '|', '{', '}', '^', '$'];

#[derive(Clone, PartialEq, Eq)]
pub struct Pattern {
    source: String,
    root: Node,
}

impl fmt::Debug for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pattern({:?})", self.source)
    }
}

impl Pattern {
    pub fn compile(source: &str) -> Result<Self, PatternError> {
        let chars: Vec<char> = source.chars().collect();
        let mut parser = Parser { chars: &chars, pos: 0 };
        let root = parser.alternation()?;
        if parser.pos != chars.len() {
            return Err(parser.error("unbalanced `)`"));
        }
        Ok(Self {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Full-string match.
    pub fn is_match(&self, input: &str) -> bool {
        let chars: Vec<char> = input.chars().collect();
        let start = BTreeSet::from([0usize]);
        step(&self.root, &chars, &start).contains(&chars.len())
    }
}

/// Positions reachable after matching `node` from any position in `from`.
fn step(node: &Node, input: &[char], from: &BTreeSet<usize>) -> BTreeSet<usize> {
    let single = |pred: &dyn Fn(char) -> bool| -> BTreeSet<usize> {
        from.iter()
            .filter(|&&p| p < input.len() && pred(input[p]))
            .map(|&p| p + 1)
            .collect()
    };
    match node {
        Node::Empty => from.clone(),
        Node::Char(c) => single(&|x| x == *c),
        Node::Any => single(&|_| true),
        Node::Class { negated, ranges } => single(&|x| {
            let hit = ranges.iter().any(|&(lo, hi)| lo <= x && x <= hi);
            hit != *negated
        }),
        Node::Concat(parts) => {
            let mut cur = from.clone();
            for part in parts {
                if cur.is_empty() {
                    break;
                }
                cur = step(part, input, &cur);
            }
            cur
        }
        Node::Alt(options) => options
            .iter()
            .flat_map(|o| step(o, input, from))
            .collect(),
        Node::Optional(inner) => {
            let mut out = from.clone();
            out.extend(step(inner, input, from));
            out
        }
        Node::Star(inner) => closure(inner, input, from.clone()),
        Node::Plus(inner) => {
            let once = step(inner, input, from);
            closure(inner, input, once)
        }
    }
}

fn closure(inner: &Node, input: &[char], mut reached: BTreeSet<usize>) -> BTreeSet<usize> {
    let mut frontier = reached.clone();
    while !frontier.is_empty() {
        let next = step(inner, input, &frontier);
        frontier = next.difference(&reached).copied().collect();
        reached.extend(frontier.iter().copied());
    }
    reached
}

struct Parser<'a> {
    chars: &'a [char],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> PatternError {
        PatternError {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn alternation(&mut self) -> Result<Node, PatternError> {
        let mut options = vec![self.concatenation()?];
        while self.peek() == Some('|') {
            self.pos += 1;
            options.push(self.concatenation()?);
        }
        Ok(if options.len() == 1 {
            options.pop().unwrap()
        } else {
            Node::Alt(options)
        })
    }

    fn concatenation(&mut self) -> Result<Node, PatternError> {
        let mut parts = Vec::new();
        while let Some(c) = self.peek() {
            if c == '|' || c == ')' {
                break;
            }
            parts.push(self.repetition()?);
        }
        Ok(match parts.len() {
            0 => Node::Empty,
            1 => parts.pop().unwrap(),
            _ => Node::Concat(parts),
        })
    }

    fn repetition(&mut self) -> Result<Node, PatternError> {
        let mut node = self.atom()?;
        while let Some(op) = self.peek() {
            node = match op {
                '*' => Node::Star(Box::new(node)),
                '+' => Node::Plus(Box::new(node)),
                '?' => Node::Optional(Box::new(node)),
                _ => break,
            };
            self.pos += 1;
        }
        Ok(node)
    }

    fn atom(&mut self) -> Result<Node, PatternError> {
        let c = self.peek().ok_or_else(|| self.error("unexpected end"))?;
        match c {
            '(' => {
                self.pos += 1;
                let inner = self.alternation()?;
                if self.peek() != Some(')') {
                    return Err(self.error("missing `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            '[' => self.class(),
            '.' => {
                self.pos += 1;
                Ok(Node::Any)
            }
            '\\' => Ok(Node::Char(self.escape()?)),
            '*' | '+' | '?' => Err(self.error("repetition operator with nothing to repeat")),
            '{' | '}' | '^' | '$' | ']' => Err(self.error(&format!("`{c}` is not supported; escape it"))),
            _ => {
                self.pos += 1;
                Ok(Node::Char(c))
            }
        }
    }

    fn escape(&mut self) -> Result<char, PatternError> {
        self.pos += 1;
        let c = self.peek().ok_or_else(|| self.error("dangling `\\`"))?;
        self.pos += 1;
        match c {
            'n' => Ok('\n'),
            't' => Ok('\t'),
            '-' => Ok('-'),
            c if META.contains(&c) => Ok(c),
            _ => Err(PatternError {
                offset: self.pos - 2,
                message: format!("unknown escape `\\{c}`"),
            }),
        }
    }

    fn class(&mut self) -> Result<Node, PatternError> {
        self.pos += 1;
        let negated = self.peek() == Some('^');
        if negated {
            self.pos += 1;
        }
        let mut ranges = Vec::new();
        loop {
            let c = self.peek().ok_or_else(|| self.error("missing `]`"))?;
            if c == ']' {
                self.pos += 1;
                break;
            }
            let lo = self.class_char()?;
            if self.peek() == Some('-') && self.chars.get(self.pos + 1) != Some(&']') {
                self.pos += 1;
                let hi = self.class_char()?;
                if hi < lo {
                    return Err(self.error("reversed class range"));
                }
                ranges.push((lo, hi));
            } else {
                ranges.push((lo, lo));
            }
        }
        if ranges.is_empty() {
            return Err(self.error("empty class"));
        }
        Ok(Node::Class { negated, ranges })
    }

    fn class_char(&mut self) -> Result<char, PatternError> {
        match self.peek() {
            Some('\\') => self.escape(),
            Some('[' | '^') => Err(self.error("escape `[` and `^` inside classes")),
            Some('-') if self.chars.get(self.pos + 1) == Some(&']') => {
                self.pos += 1;
                Ok('-')
            }
            Some('-') => Err(self.error("escape `-` or place it last in the class")),
            Some(c) => {
                self.pos += 1;
                Ok(c)
            }
            None => Err(self.error("missing `]`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basics() {
        let p = Pattern::compile("SE[0-9]+").unwrap();
        assert!(p.is_match("SE5561234"));
        assert!(!p.is_match("SE"));
        assert!(!p.is_match("xSE1"), "matches are anchored");
        let p = Pattern::compile("(ab|c)*d?").unwrap();
        assert!(p.is_match(""));
        assert!(p.is_match("ababcd"));
        assert!(!p.is_match("abb"));
        let p = Pattern::compile("[^a-c]\\.x").unwrap();
        assert!(p.is_match("d.x"));
        assert!(!p.is_match("a.x"));
        assert!(!p.is_match("dyx"));
        assert!(Pattern::compile("").unwrap().is_match(""));
        assert!(Pattern::compile("[a-]").unwrap().is_match("-"));
    }

    #[test]
    fn rejected_syntax() {
        for bad in ["^a", "a$", "a{2}", "(a", "a)", "[a", "*a", "\\d", "[z-a]", "[]", "a\\"] {
            assert!(Pattern::compile(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn nested_stars_terminate() {
        let p = Pattern::compile("(a*)*b").unwrap();
        let input = "a".repeat(200);
        assert!(!p.is_match(&input));
    }

    fn pattern_strategy() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            Just("a".to_string()),
            Just("b".to_string()),
            Just(".".to_string()),
            Just("[ab]".to_string()),
            Just("[^a]".to_string()),
            Just("\\.".to_string()),
        ];
        leaf.prop_recursive(4, 24, 3, |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 1..4).prop_map(|v| v.concat()),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}|{b})")),
                inner.clone().prop_map(|a| format!("({a})*")),
                inner.clone().prop_map(|a| format!("({a})+")),
                inner.prop_map(|a| format!("({a})?")),
            ]
        })
    }

    proptest! {
        // The `regex` crate serves as an independent oracle on the shared subset.
        #[test]
        fn agrees_with_regex_crate(pat in pattern_strategy(), input in "[ab.c]{0,8}") {
            let ours = Pattern::compile(&pat).unwrap();
            let oracle = regex::Regex::new(&format!("(?s)^(?:{pat})$")).unwrap();
            prop_assert_eq!(ours.is_match(&input), oracle.is_match(&input), "pattern {}", pat);
        }
    }
}
