//! Compile a restricted regular-expression subset into a machine.
//!
//! Supported syntax: literal characters, escapes (`\\`, `\|`, `\*`, `\+`,
//! `\?`, `\(`, `\)`, `\[`, `\]`, `\.`, `\^`, `\$`, `\{`, `\}`, `\-`, `\n`,
//! `\t`, `\r`), character classes with ranges (`[a-z0-9]`), grouping `(...)`,
//! alternation `|`, and the quantifiers `*`, `+`, `?`.
//!
//! Everything whose translation into emission probabilities would be either
//! ill-defined or surprising is rejected with
//! [`Error::UnsupportedRegex`](crate::Error::UnsupportedRegex): the `.`
//! wildcard, anchors, counted repetition `{m,n}`, negated classes, group
//! modifiers `(?...)`, perl classes such as `\d`, word boundaries, and
//! backreferences. Malformed patterns are rejected with
//! [`Error::RegexParse`](crate::Error::RegexParse) carrying the character
//! offset of the problem.
//!
//! The compiled machine assigns every matching string a positive
//! probability and every non-matching string probability zero. Probability
//! mass is split uniformly: the unique start state has initial probability
//! one, and each state divides its mass evenly over its options (stopping,
//! if the state is accepting, plus one option per outgoing character edge).
//! For example `a*` compiles to a two-state machine with
//! `P("a"^n) = 2^-(n+1)`.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

use super::{Pfsm, PfsmBuilder};

const MAX_CLASS_SIZE: usize = 4096;

#[derive(Debug)]
enum Ast {
    Empty,
    Literal(char),
    Class(Vec<char>),
    Concat(Vec<Ast>),
    Alternate(Vec<Ast>),
    Star(Box<Ast>),
    Plus(Box<Ast>),
    Optional(Box<Ast>),
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn new(pattern: &str) -> Self {
        Parser { chars: pattern.chars().collect(), pos: 0 }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_ahead(&self, n: usize) -> Option<char> {
        self.chars.get(self.pos + n).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn malformed(&self, position: usize, message: &str) -> Error {
        Error::RegexParse { position, message: message.to_string() }
    }

    fn parse(mut self) -> Result<Ast> {
        let ast = self.alternation()?;
        match self.peek() {
            None => Ok(ast),
            Some(')') => Err(self.malformed(self.pos, "unmatched `)`")),
            Some(c) => Err(self.malformed(self.pos, &format!("unexpected `{c}`"))),
        }
    }

    fn alternation(&mut self) -> Result<Ast> {
        let mut branches = vec![self.sequence()?];
        while self.peek() == Some('|') {
            self.bump();
            branches.push(self.sequence()?);
        }
        if branches.len() == 1 {
            Ok(branches.pop().expect("one branch"))
        } else {
            Ok(Ast::Alternate(branches))
        }
    }

    fn sequence(&mut self) -> Result<Ast> {
        let mut items = Vec::new();
        loop {
            match self.peek() {
                None | Some('|') | Some(')') => break,
                Some('*') | Some('+') | Some('?') => {
                    return Err(self.malformed(self.pos, "quantifier has nothing to repeat"));
                }
                Some(_) => items.push(self.repeat()?),
            }
        }
        match items.len() {
            0 => Ok(Ast::Empty),
            1 => Ok(items.pop().expect("one item")),
            _ => Ok(Ast::Concat(items)),
        }
    }

    fn repeat(&mut self) -> Result<Ast> {
        let atom = self.atom()?;
        let node = match self.peek() {
            Some('*') => {
                self.bump();
                Ast::Star(Box::new(atom))
            }
            Some('+') => {
                self.bump();
                Ast::Plus(Box::new(atom))
            }
            Some('?') => {
                self.bump();
                Ast::Optional(Box::new(atom))
            }
            _ => return Ok(atom),
        };
        if matches!(self.peek(), Some('*') | Some('+') | Some('?')) {
            return Err(self.malformed(self.pos, "stacked quantifier"));
        }
        Ok(node)
    }

    fn atom(&mut self) -> Result<Ast> {
        let position = self.pos;
        let c = self.bump().expect("caller peeked an atom");
        match c {
            '(' => {
                if self.peek() == Some('?') {
                    return Err(Error::UnsupportedRegex("group modifier `(?`".into()));
                }
                let inner = self.alternation()?;
                match self.bump() {
                    Some(')') => Ok(inner),
                    _ => Err(self.malformed(position, "unterminated group")),
                }
            }
            '[' => self.class(position),
            '\\' => self.escape(position).map(Ast::Literal),
            '.' => Err(Error::UnsupportedRegex("wildcard `.`".into())),
            '^' => Err(Error::UnsupportedRegex("anchor `^`".into())),
            '$' => Err(Error::UnsupportedRegex("anchor `$`".into())),
            '{' => Err(Error::UnsupportedRegex("counted repetition `{m,n}`".into())),
            other => Ok(Ast::Literal(other)),
        }
    }

    fn escape(&mut self, position: usize) -> Result<char> {
        let c = match self.bump() {
            Some(c) => c,
            None => return Err(self.malformed(position, "dangling escape")),
        };
        match c {
            '\\' | '|' | '*' | '+' | '?' | '(' | ')' | '[' | ']' | '.' | '^' | '$' | '{'
            | '}' | '-' => Ok(c),
            'n' => Ok('\n'),
            't' => Ok('\t'),
            'r' => Ok('\r'),
            'd' | 'D' | 'w' | 'W' | 's' | 'S' => {
                Err(Error::UnsupportedRegex(format!("character class escape `\\{c}`")))
            }
            'b' | 'B' => Err(Error::UnsupportedRegex(format!("word boundary `\\{c}`"))),
            '0'..='9' => Err(Error::UnsupportedRegex(format!("backreference `\\{c}`"))),
            other => Err(Error::UnsupportedRegex(format!("escape sequence `\\{other}`"))),
        }
    }

    fn class(&mut self, open: usize) -> Result<Ast> {
        if self.peek() == Some('^') {
            return Err(Error::UnsupportedRegex("negated character class".into()));
        }
        let mut chars = BTreeSet::new();
        let mut first = true;
        loop {
            let item_pos = self.pos;
            let lo = match self.bump() {
                None => return Err(self.malformed(open, "unterminated character class")),
                Some(']') if first => return Err(self.malformed(open, "empty character class")),
                Some(']') => break,
                Some('\\') => self.escape(item_pos)?,
                Some(c) => c,
            };
            first = false;
            let ranged = self.peek() == Some('-')
                && self.peek_ahead(1).is_some()
                && self.peek_ahead(1) != Some(']');
            if ranged {
                self.bump();
                let hi_pos = self.pos;
                let hi = match self.bump().expect("lookahead saw a character") {
                    '\\' => self.escape(hi_pos)?,
                    c => c,
                };
                if (hi as u32) < (lo as u32) {
                    return Err(self.malformed(item_pos, "invalid character range"));
                }
                let count = (hi as u32 - lo as u32 + 1) as usize;
                if chars.len() + count > MAX_CLASS_SIZE {
                    return Err(Error::UnsupportedRegex(format!(
                        "character class larger than {MAX_CLASS_SIZE} characters"
                    )));
                }
                for u in (lo as u32)..=(hi as u32) {
                    if let Some(c) = char::from_u32(u) {
                        chars.insert(c);
                    }
                }
            } else {
                if chars.len() + 1 > MAX_CLASS_SIZE {
                    return Err(Error::UnsupportedRegex(format!(
                        "character class larger than {MAX_CLASS_SIZE} characters"
                    )));
                }
                chars.insert(lo);
            }
        }
        Ok(Ast::Class(chars.into_iter().collect()))
    }
}

/// Thompson construction with epsilon edges.
#[derive(Default)]
struct Nfa {
    eps: Vec<Vec<usize>>,
    edges: Vec<Vec<(char, usize)>>,
}

impl Nfa {
    fn add_state(&mut self) -> usize {
        self.eps.push(Vec::new());
        self.edges.push(Vec::new());
        self.eps.len() - 1
    }

    /// Returns the (start, accept) states of the fragment for `ast`.
    fn fragment(&mut self, ast: &Ast) -> (usize, usize) {
        match ast {
            Ast::Empty => {
                let s = self.add_state();
                let t = self.add_state();
                self.eps[s].push(t);
                (s, t)
            }
            Ast::Literal(c) => {
                let s = self.add_state();
                let t = self.add_state();
                self.edges[s].push((*c, t));
                (s, t)
            }
            Ast::Class(chars) => {
                let s = self.add_state();
                let t = self.add_state();
                for &c in chars {
                    self.edges[s].push((c, t));
                }
                (s, t)
            }
            Ast::Concat(items) => {
                let mut iter = items.iter();
                let (start, mut accept) =
                    self.fragment(iter.next().expect("concat is non-empty"));
                for item in iter {
                    let (s, t) = self.fragment(item);
                    self.eps[accept].push(s);
                    accept = t;
                }
                (start, accept)
            }
            Ast::Alternate(branches) => {
                let s = self.add_state();
                let t = self.add_state();
                for branch in branches {
                    let (bs, ba) = self.fragment(branch);
                    self.eps[s].push(bs);
                    self.eps[ba].push(t);
                }
                (s, t)
            }
            Ast::Star(inner) => {
                let s = self.add_state();
                let t = self.add_state();
                let (is, ia) = self.fragment(inner);
                self.eps[s].push(is);
                self.eps[s].push(t);
                self.eps[ia].push(is);
                self.eps[ia].push(t);
                (s, t)
            }
            Ast::Plus(inner) => {
                let s = self.add_state();
                let t = self.add_state();
                let (is, ia) = self.fragment(inner);
                self.eps[s].push(is);
                self.eps[ia].push(is);
                self.eps[ia].push(t);
                (s, t)
            }
            Ast::Optional(inner) => {
                let s = self.add_state();
                let t = self.add_state();
                let (is, ia) = self.fragment(inner);
                self.eps[s].push(is);
                self.eps[s].push(t);
                self.eps[ia].push(t);
                (s, t)
            }
        }
    }

    fn epsilon_closure(&self, from: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![from];
        while let Some(q) = stack.pop() {
            if seen.insert(q) {
                stack.extend(self.eps[q].iter().copied());
            }
        }
        seen
    }
}

/// One state of the epsilon-free automaton.
struct DenseState {
    accepting: bool,
    edges: BTreeSet<(char, usize)>,
}

/// Compile `pattern` into a machine whose support is exactly the language
/// of the pattern (implicitly anchored at both ends).
///
/// See the module documentation for the supported syntax and the uniform
/// probability convention.
pub fn compile_regex(pattern: &str) -> Result<Pfsm> {
    let ast = Parser::new(pattern).parse()?;
    let mut nfa = Nfa::default();
    let (start, accept) = nfa.fragment(&ast);

    let n = nfa.eps.len();
    let closures: Vec<BTreeSet<usize>> = (0..n).map(|q| nfa.epsilon_closure(q)).collect();

    // Keep the start state plus every character-edge target; every other
    // NFA state is only reachable through epsilon moves, which the closure
    // folds away.
    let mut kept = vec![start];
    let mut kept_index = vec![usize::MAX; n];
    kept_index[start] = 0;
    for q in 0..n {
        for &(_, t) in &nfa.edges[q] {
            if kept_index[t] == usize::MAX {
                kept_index[t] = kept.len();
                kept.push(t);
            }
        }
    }

    let mut states: Vec<DenseState> = kept
        .iter()
        .map(|&q| {
            let mut edges = BTreeSet::new();
            for &m in &closures[q] {
                for &(c, t) in &nfa.edges[m] {
                    edges.insert((c, kept_index[t]));
                }
            }
            DenseState { accepting: closures[q].contains(&accept), edges }
        })
        .collect();

    // Drop states that cannot reach an accepting state (their paths carry
    // zero probability mass), then anything the start state no longer
    // reaches.
    let coaccessible = {
        let mut reverse = vec![Vec::new(); states.len()];
        for (q, st) in states.iter().enumerate() {
            for &(_, t) in &st.edges {
                reverse[t].push(q);
            }
        }
        let mut seen = vec![false; states.len()];
        let mut stack: Vec<usize> = states
            .iter()
            .enumerate()
            .filter(|(_, st)| st.accepting)
            .map(|(q, _)| q)
            .collect();
        for &q in &stack {
            seen[q] = true;
        }
        while let Some(q) = stack.pop() {
            for &p in &reverse[q] {
                if !seen[p] {
                    seen[p] = true;
                    stack.push(p);
                }
            }
        }
        seen
    };
    for st in &mut states {
        st.edges.retain(|&(_, t)| coaccessible[t]);
    }
    let reachable = {
        let mut seen = vec![false; states.len()];
        if coaccessible[0] {
            seen[0] = true;
            let mut stack = vec![0];
            while let Some(q) = stack.pop() {
                for &(_, t) in &states[q].edges {
                    if !seen[t] {
                        seen[t] = true;
                        stack.push(t);
                    }
                }
            }
        }
        seen
    };

    let mut final_index = vec![usize::MAX; states.len()];
    let mut count = 0;
    for q in 0..states.len() {
        if reachable[q] && coaccessible[q] {
            final_index[q] = count;
            count += 1;
        }
    }
    // Parsing already guarantees a non-empty language: no anchors, no
    // negation, and classes cannot be empty.
    assert!(final_index[0] == 0, "start state must survive pruning");

    let mut builder = PfsmBuilder::new(count).initial(0, 1.0);
    for (q, st) in states.iter().enumerate() {
        if final_index[q] == usize::MAX {
            continue;
        }
        let options = usize::from(st.accepting) + st.edges.len();
        let p = 1.0 / options as f64;
        if st.accepting {
            builder = builder.stop(final_index[q], p);
        }
        for &(c, t) in &st.edges {
            builder = builder.char_edge(final_index[q], c, final_index[t], p);
        }
    }
    builder.build()
}

#[cfg(test)]
mod tests {
    use super::super::{enumerate_support, forward_log_prob, validate};
    use super::*;

    #[test]
    fn star_compiles_to_the_two_state_machine() {
        let m = compile_regex("a*").unwrap();
        assert_eq!(m.n_states(), 2);
        assert!(validate(&m).is_empty());
        for n in 0..6 {
            let p = forward_log_prob(&m, &"a".repeat(n)).exp();
            let expected = 0.5f64.powi(n as i32 + 1);
            assert!((p - expected).abs() < 1e-15, "n={n}: {p} vs {expected}");
        }
        assert_eq!(forward_log_prob(&m, "b"), f64::NEG_INFINITY);
    }

    #[test]
    fn finite_languages_get_all_the_mass() {
        let m = compile_regex("(ab)|c").unwrap();
        assert!(validate(&m).is_empty());
        let support = enumerate_support(&m, 3).unwrap();
        let strings: Vec<&str> = support.iter().map(|(s, _)| s.as_str()).collect();
        assert_eq!(strings, ["c", "ab"]);
        let mass: f64 = support.iter().map(|(_, p)| p).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ambiguous_alternation_sums_paths() {
        let m = compile_regex("a|aa").unwrap();
        assert!((forward_log_prob(&m, "a").exp() - 0.5).abs() < 1e-12);
        assert!((forward_log_prob(&m, "aa").exp() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn classes_ranges_and_escapes() {
        let m = compile_regex(r"[a-c0]\.x?").unwrap();
        assert!(validate(&m).is_empty());
        for accepted in ["a.", "b.x", "0."] {
            assert!(forward_log_prob(&m, accepted).is_finite(), "{accepted}");
        }
        for rejected in ["d.", "a", "a.xx", "aax"] {
            assert_eq!(forward_log_prob(&m, rejected), f64::NEG_INFINITY, "{rejected}");
        }
    }

    #[test]
    fn dash_is_literal_at_class_edges() {
        let m = compile_regex("[-a]|[a-]").unwrap();
        assert!(forward_log_prob(&m, "-").is_finite());
        assert!(forward_log_prob(&m, "a").is_finite());
    }

    #[test]
    fn empty_pattern_matches_only_the_empty_string() {
        let m = compile_regex("").unwrap();
        assert_eq!(m.n_states(), 1);
        assert!((forward_log_prob(&m, "").exp() - 1.0).abs() < 1e-15);
        assert_eq!(forward_log_prob(&m, "a"), f64::NEG_INFINITY);
    }

    #[test]
    fn unsupported_features_are_named() {
        for (pattern, needle) in [
            ("a.b", "wildcard"),
            ("^a", "anchor"),
            ("a$", "anchor"),
            ("a{2,3}", "counted repetition"),
            ("[^a]", "negated character class"),
            ("(?:a)", "group modifier"),
            (r"\d+", "character class escape"),
            (r"\bx", "word boundary"),
            (r"(a)\1", "backreference"),
            (r"\q", "escape sequence"),
        ] {
            match compile_regex(pattern) {
                Err(Error::UnsupportedRegex(msg)) => {
                    assert!(msg.contains(needle), "{pattern}: {msg}");
                }
                other => panic!("{pattern}: expected unsupported-feature error, got {other:?}"),
            }
        }
    }

    #[test]
    fn malformed_patterns_report_positions() {
        for (pattern, position, needle) in [
            ("(ab", 0, "unterminated group"),
            ("ab)", 2, "unmatched `)`"),
            ("[ab", 0, "unterminated character class"),
            ("a[]", 1, "empty character class"),
            ("[z-a]", 1, "invalid character range"),
            ("*a", 0, "nothing to repeat"),
            ("a**", 2, "stacked quantifier"),
            ("ab\\", 2, "dangling escape"),
        ] {
            match compile_regex(pattern) {
                Err(Error::RegexParse { position: got, message }) => {
                    assert_eq!(got, position, "{pattern}: {message}");
                    assert!(message.contains(needle), "{pattern}: {message}");
                }
                other => panic!("{pattern}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn oversized_classes_are_rejected() {
        let err = compile_regex("[\u{0}-\u{2000}]").unwrap_err();
        assert!(err.to_string().contains("4096"), "{err}");
    }

    /// Every string the machine supports must match the pattern, and vice
    /// versa, checked exhaustively over short strings.
    fn assert_language_matches(pattern: &str) {
        let machine = compile_regex(pattern).unwrap();
        assert!(validate(&machine).is_empty(), "{pattern}");
        let reference = regex::Regex::new(&format!("^(?:{pattern})$")).unwrap();

        let mut strings: Vec<String> = vec![String::new()];
        let mut frontier = strings.clone();
        for _ in 0..4 {
            let mut next = Vec::new();
            for s in &frontier {
                for c in ['a', 'b', 'c'] {
                    let mut extended = s.clone();
                    extended.push(c);
                    next.push(extended);
                }
            }
            strings.extend(next.iter().cloned());
            frontier = next;
        }

        for s in &strings {
            let prob = forward_log_prob(&machine, s).exp();
            let matches = reference.is_match(s);
            assert_eq!(prob > 0.0, matches, "{pattern:?} on {s:?} (prob {prob})");
        }
    }

    #[test]
    fn language_agrees_with_reference_engine() {
        for pattern in [
            "abc",
            "a*b*",
            "(a|b)*c",
            "a+(b|c)?",
            "(ab|ba)+",
            "[ab][bc]",
            "a?b?c?",
            "((a|b)(b|c))*",
            "a|",
            "(a|b)+c*",
        ] {
            assert_language_matches(pattern);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn ast_strategy() -> impl Strategy<Value = String> {
            let leaf = prop_oneof![
                prop::sample::select(vec!["a", "b", "c", "[ab]", "[bc]", "[abc]"])
                    .prop_map(str::to_string),
            ];
            leaf.prop_recursive(3, 24, 4, |inner| {
                prop_oneof![
                    (inner.clone(), inner.clone()).prop_map(|(x, y)| format!("{x}{y}")),
                    (inner.clone(), inner.clone()).prop_map(|(x, y)| format!("({x}|{y})")),
                    inner.clone().prop_map(|x| format!("({x})*")),
                    inner.clone().prop_map(|x| format!("({x})+")),
                    inner.prop_map(|x| format!("({x})?")),
                ]
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn random_patterns_agree_with_reference(pattern in ast_strategy()) {
                assert_language_matches(&pattern);
            }
        }
    }
}
