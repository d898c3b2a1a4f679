//! Brute-force test oracles.
//!
//! These deliberately avoid the dynamic programming of the forward pass:
//! [`brute_force_prob`] enumerates state paths explicitly and
//! [`enumerate_support`] walks the prefix tree of emittable strings. Both are
//! exponential in the worst case and enforce hard size limits, which is the
//! point: they are independent evidence for the fast implementations, not
//! tools for production use.

use crate::error::{Error, Result};

use super::{Pfsm, Symbol};

const MAX_ORACLE_VALUE_LEN: usize = 8;
const MAX_ORACLE_STATES: usize = 8;
const MAX_SUPPORT_ALPHABET: usize = 30;
const MAX_SUPPORT_LEN: usize = 5;

/// String probability by explicit enumeration of every state path.
///
/// Limits: `|value| <= 8`, at most 8 states. Must agree with
/// `exp(forward_log_prob)` to 1e-12 relative for every machine.
pub fn brute_force_prob(machine: &Pfsm, value: &str) -> Result<f64> {
    let len = value.chars().count();
    if len > MAX_ORACLE_VALUE_LEN {
        return Err(Error::OracleLimit(format!(
            "value length {len} exceeds {MAX_ORACLE_VALUE_LEN}"
        )));
    }
    if machine.n_states() > MAX_ORACLE_STATES {
        return Err(Error::OracleLimit(format!(
            "{} states exceed {MAX_ORACLE_STATES}",
            machine.n_states()
        )));
    }

    let symbols: Option<Vec<Symbol>> = value.chars().map(|c| machine.classify(c)).collect();
    let symbols = match symbols {
        Some(s) => s,
        None => return Ok(0.0),
    };

    fn walk(machine: &Pfsm, symbols: &[Symbol], q: usize, pos: usize, acc: f64, total: &mut f64) {
        if pos == symbols.len() {
            *total += acc * machine.final_prob(q);
            return;
        }
        for edge in machine.edges_matching(q, symbols[pos]) {
            walk(machine, symbols, edge.to, pos + 1, acc * edge.prob, total);
        }
    }

    let mut total = 0.0;
    for (q, p) in machine.initial_states() {
        walk(machine, &symbols, q, 0, p, &mut total);
    }
    Ok(total)
}

/// All strings of length at most `max_len` with positive probability,
/// together with their probabilities, sorted by (length, string).
///
/// Limits: alphabet of at most 30 symbols (the catch-all class counts as
/// one), `max_len <= 5`. When the machine has a catch-all class, its
/// enumerated strings spell the class with one representative character that
/// is not in the explicit alphabet (preferring U+FFFD); the probability of
/// such a string is exact for *any* choice of representative, since the class
/// is a single atom.
pub fn enumerate_support(machine: &Pfsm, max_len: usize) -> Result<Vec<(String, f64)>> {
    let alphabet_size = machine.alphabet().len() + usize::from(machine.has_catch_all());
    if alphabet_size > MAX_SUPPORT_ALPHABET {
        return Err(Error::OracleLimit(format!(
            "alphabet of {alphabet_size} symbols exceeds {MAX_SUPPORT_ALPHABET}"
        )));
    }
    if max_len > MAX_SUPPORT_LEN {
        return Err(Error::OracleLimit(format!(
            "max_len {max_len} exceeds {MAX_SUPPORT_LEN}"
        )));
    }

    let mut symbols: Vec<(char, Symbol)> = machine
        .alphabet()
        .iter()
        .map(|&c| (c, Symbol::Char(c)))
        .collect();
    if machine.has_catch_all() {
        let representative = ['\u{FFFD}', '\u{E000}', '\u{10FFFF}']
            .into_iter()
            .find(|c| !machine.alphabet().contains(c))
            .expect("some candidate is outside the explicit alphabet");
        symbols.push((representative, Symbol::Other));
    }

    let mut out = Vec::new();
    let mut prefix = String::new();
    let initial: Vec<f64> = machine.dense_initial().to_vec();

    fn walk(
        machine: &Pfsm,
        symbols: &[(char, Symbol)],
        v: &[f64],
        prefix: &mut String,
        max_len: usize,
        out: &mut Vec<(String, f64)>,
    ) {
        let stop: f64 = (0..machine.n_states())
            .map(|q| v[q] * machine.final_prob(q))
            .sum();
        if stop > 0.0 {
            out.push((prefix.clone(), stop));
        }
        if prefix.chars().count() == max_len {
            return;
        }
        for &(repr, sym) in symbols {
            let mut next = vec![0.0; machine.n_states()];
            let mut any = false;
            for (q, &vq) in v.iter().enumerate() {
                if vq == 0.0 {
                    continue;
                }
                for edge in machine.edges_matching(q, sym) {
                    next[edge.to] += vq * edge.prob;
                    any = true;
                }
            }
            if !any {
                continue;
            }
            prefix.push(repr);
            walk(machine, symbols, &next, prefix, max_len, out);
            prefix.pop();
        }
    }

    walk(machine, &symbols, &initial, &mut prefix, max_len, &mut out);
    out.sort_by(|a, b| (a.0.chars().count(), &a.0).cmp(&(b.0.chars().count(), &b.0)));
    Ok(out)
}
