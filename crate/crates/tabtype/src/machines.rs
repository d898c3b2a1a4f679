//! The built-in machine catalog.
//!
//! A [`MachineCatalog`] holds the ordered list of regular column-type
//! machines (boolean, date, float, integer, string, plus any user additions)
//! together with the two special machines shared by every type: `missing`
//! scores the configured missing-data codes and `anomaly` scores arbitrary
//! Unicode content. The anomaly machine can also be cloned in as a regular
//! type named `xtype` so that columns no regular machine supports still get
//! a meaningful type instead of being declared all-anomalous.
//!
//! The concrete probabilities below are hand-calibrated, and the calibration
//! is part of the contract:
//!
//! - On the strings `"0"` and `"1"`, boolean (0.0075) beats integer (0.005)
//!   by a factor of exactly 1.5, and integer beats float (0.0045). Columns
//!   of bare 0/1 flags therefore read as boolean, while mixed digit columns
//!   fall through to integer.
//! - The anomaly machine scores every non-empty string strictly below any
//!   regular machine that supports it, so a value only reads as anomalous
//!   when nothing else explains it.
//!
//! Enumerated types (boolean, missing, month names inside the date machine)
//! are probabilistic tries: one shared path per common prefix, a stop entry
//! where a code ends, and per-code mass that defaults to uniform. Everything
//! here passes [`validate`](crate::pfsm::validate) with an empty report.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::pfsm::{compile_regex, validate, Pfsm, PfsmBuilder};

/// Missing-data codes recognised out of the box: NULL/NA spellings with
/// their spacing variants, bare punctuation placeholders, sentinel integers,
/// the empty string, and a single space.
pub const BUILTIN_MISSING_CODES: &[&str] = &[
    "Null", "NA", "NULL", "null", "NA ", " NA", "N A", "N/A", "N/ A", "N /A", "#NA", "#N/A",
    "na", " na", "na ", "n a", "n/a", "N/O", "NAN", "NaN", "nan", "-NaN", "-nan", "-", "!", "?",
    "*", ".", "0", "-1", "-9", "-99", "-999", "-9999", "-99999", "", " ",
];

const DIGITS: [char; 10] = ['0', '1', '2', '3', '4', '5', '6', '7', '8', '9'];

const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];

fn digit_fan(mut b: PfsmBuilder, from: usize, to: usize, p: f64) -> PfsmBuilder {
    for d in DIGITS {
        b = b.char_edge(from, d, to, p);
    }
    b
}

/// Unit-probability digit transitions along consecutive states: ten digit
/// edges of 0.1 between each pair.
fn digit_chain(mut b: PfsmBuilder, states: &[usize]) -> PfsmBuilder {
    for w in states.windows(2) {
        b = digit_fan(b, w[0], w[1], 0.1);
    }
    b
}

// ---------------------------------------------------------------------------
// Probabilistic tries for enumerated supports.
// ---------------------------------------------------------------------------

#[derive(Default)]
struct TrieNode {
    stop_weight: f64,
    children: BTreeMap<char, TrieNode>,
}

impl TrieNode {
    /// Returns false when `code` was already present.
    fn insert(&mut self, code: &str, weight: f64) -> bool {
        match code.chars().next() {
            None => {
                if self.stop_weight > 0.0 {
                    return false;
                }
                self.stop_weight = weight;
                true
            }
            Some(c) => self
                .children
                .entry(c)
                .or_default()
                .insert(&code[c.len_utf8()..], weight),
        }
    }

    fn mass(&self) -> f64 {
        self.stop_weight + self.children.values().map(TrieNode::mass).sum::<f64>()
    }

    fn node_count(&self) -> usize {
        1 + self.children.values().map(TrieNode::node_count).sum::<usize>()
    }

    fn from_codes(codes: &[(&str, f64)]) -> Result<TrieNode> {
        let mut root = TrieNode::default();
        for &(code, weight) in codes {
            if !weight.is_finite() || weight <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "weight {weight} for code {code:?} must be positive and finite"
                )));
            }
            if !root.insert(code, weight) {
                return Err(Error::InvalidInput(format!("duplicate code {code:?}")));
            }
        }
        Ok(root)
    }
}

/// Wires `node`'s subtree into the builder rooted at `state`, consuming
/// fresh state numbers from `next`. Each node splits its mass between
/// stopping and its children, so the subtree emits each code with
/// probability `weight / subtree mass`.
fn attach_trie(mut b: PfsmBuilder, node: &TrieNode, state: usize, next: &mut usize) -> PfsmBuilder {
    let total = node.mass();
    if node.stop_weight > 0.0 {
        b = b.stop(state, node.stop_weight / total);
    }
    for (&c, child) in &node.children {
        let child_state = *next;
        *next += 1;
        b = b.char_edge(state, c, child_state, child.mass() / total);
        b = attach_trie(b, child, child_state, next);
    }
    b
}

/// A machine emitting exactly the given codes, each with probability
/// `weight / total weight`.
fn trie_machine(codes: &[(&str, f64)]) -> Result<Pfsm> {
    let root = TrieNode::from_codes(codes)?;
    if root.mass() <= 0.0 {
        return Err(Error::InvalidInput("no codes given".into()));
    }
    let mut next = 1;
    let b = attach_trie(PfsmBuilder::new(root.node_count()).initial(0, 1.0), &root, 0, &mut next);
    b.build()
}

// ---------------------------------------------------------------------------
// Built-in machines.
// ---------------------------------------------------------------------------

/// Optionally signed digit strings. `P("1") = 0.005`.
pub fn build_integer() -> Pfsm {
    let b = PfsmBuilder::new(3)
        .initial(0, 0.5)
        .initial(1, 0.5)
        .char_edge(0, '+', 1, 0.5)
        .char_edge(0, '-', 1, 0.5)
        .stop(2, 0.1);
    let b = digit_fan(b, 1, 2, 0.1);
    let b = digit_fan(b, 2, 2, 0.09);
    b.build().expect("integer machine is well-formed")
}

/// Decimals, plain integers, scientific notation with `e`/`E`, and comma
/// thousands separators (groups of exactly three digits). `P("1") = 0.0045`,
/// below the integer machine, so pure digit columns prefer integer.
pub fn build_float() -> Pfsm {
    const START: usize = 0;
    const SIGN: usize = 1;
    const A1: usize = 2; // one leading digit seen
    const A2: usize = 3;
    const A3: usize = 4;
    const AMORE: usize = 5; // four or more leading digits: comma groups no longer allowed
    const B0: usize = 6; // inside a comma group
    const B1: usize = 7;
    const B2: usize = 8;
    const B3: usize = 9; // comma group complete
    const DOT: usize = 10;
    const FRAC: usize = 11;
    const EXP: usize = 12; // just after 'e'/'E'
    const EXP_SIGN: usize = 13;
    const EXP_DIGITS: usize = 14;

    let mut b = PfsmBuilder::new(15)
        .initial(START, 1.0)
        .char_edge(START, '+', SIGN, 0.05)
        .char_edge(START, '-', SIGN, 0.05)
        .stop(A1, 0.05)
        .stop(A2, 0.05)
        .stop(A3, 0.05)
        .stop(AMORE, 0.05)
        .stop(B3, 0.05)
        .stop(FRAC, 0.1)
        .stop(EXP_DIGITS, 0.1)
        .char_edge(EXP, '+', EXP_SIGN, 0.05)
        .char_edge(EXP, '-', EXP_SIGN, 0.05);
    b = digit_fan(b, START, A1, 0.09);
    b = digit_fan(b, SIGN, A1, 0.1);
    // 1-3 leading digits may be followed by a comma group, a fraction, or an
    // exponent: 14 atoms share the remaining 0.95.
    for (state, digit_target) in [(A1, A2), (A2, A3), (A3, AMORE)] {
        let p = 0.95 / 14.0;
        b = digit_fan(b, state, digit_target, p);
        b = b
            .char_edge(state, ',', B0, p)
            .char_edge(state, '.', DOT, p)
            .char_edge(state, 'e', EXP, p)
            .char_edge(state, 'E', EXP, p);
    }
    // Four or more leading digits: same continuations minus the comma.
    {
        let p = 0.95 / 13.0;
        b = digit_fan(b, AMORE, AMORE, p);
        b = b
            .char_edge(AMORE, '.', DOT, p)
            .char_edge(AMORE, 'e', EXP, p)
            .char_edge(AMORE, 'E', EXP, p);
    }
    // Comma groups are exactly three digits.
    b = digit_chain(b, &[B0, B1, B2, B3]);
    {
        let p = 0.95 / 4.0;
        b = b
            .char_edge(B3, ',', B0, p)
            .char_edge(B3, '.', DOT, p)
            .char_edge(B3, 'e', EXP, p)
            .char_edge(B3, 'E', EXP, p);
    }
    // The fraction needs at least one digit and may hand over to an exponent.
    b = digit_fan(b, DOT, FRAC, 0.1);
    b = digit_fan(b, FRAC, FRAC, 0.075);
    b = b.char_edge(FRAC, 'e', EXP, 0.075).char_edge(FRAC, 'E', EXP, 0.075);
    // Exponent digits.
    b = digit_fan(b, EXP, EXP_DIGITS, 0.09);
    b = digit_fan(b, EXP_SIGN, EXP_DIGITS, 0.1);
    b = digit_fan(b, EXP_DIGITS, EXP_DIGITS, 0.09);
    b.build().expect("float machine is well-formed")
}

/// Letters, digits, and the punctuation set `. , - _ % : ;` — 69 symbols,
/// one initial and one emitting state.
pub fn build_string() -> Pfsm {
    let symbols: Vec<char> = ('a'..='z')
        .chain('A'..='Z')
        .chain('0'..='9')
        .chain(['.', ',', '-', '_', '%', ':', ';'])
        .collect();
    assert_eq!(symbols.len(), 69);
    let mut b = PfsmBuilder::new(2).initial(0, 1.0).stop(1, 0.1);
    for &c in &symbols {
        b = b.char_edge(0, c, 1, 1.0 / 69.0);
        b = b.char_edge(1, c, 1, 0.9 / 69.0);
    }
    b.build().expect("string machine is well-formed")
}

/// Exactly the thirteen boolean spellings. `P("0") = P("1") = 0.0075`,
/// 1.5 times the integer machine's score, so 0/1 flag columns read as
/// boolean; the remaining mass is uniform over the other eleven spellings.
pub fn build_boolean() -> Pfsm {
    let w = (1.0 - 2.0 * 0.0075) / 11.0;
    let codes: Vec<(&str, f64)> = [
        "Yes", "No", "True", "False", "1", "0", "-1", "yes", "Y", "y", "no", "true", "false",
    ]
    .into_iter()
    .map(|code| match code {
        "0" | "1" => (code, 0.0075),
        other => (other, w),
    })
    .collect();
    trie_machine(&codes).expect("boolean machine is well-formed")
}

/// Calendar and clock forms as a union of six equally weighted branches:
/// `YYYYMMDD`; `YYYY-MM-DD` with an optional `THH:MM:SS`; `HH:MM` with an
/// optional `:SS`; bare years restricted to 1000–2999 optionally followed by
/// a year range using one of the separators `-`, `- `, ` `, ` -`, ` - `;
/// `MM-DD-YYYY HH:MM:SS` with an `AM`/`PM` marker; and full month names.
/// Month and day digit positions are deliberately unconstrained.
pub fn build_date() -> Pfsm {
    let months = TrieNode::from_codes(
        &MONTHS.map(|name| (name, 1.0 / 12.0)),
    )
    .expect("month names are distinct");

    let mut next = 0;
    let mut fresh = |count: usize| -> Vec<usize> {
        let states: Vec<usize> = (next..next + count).collect();
        next += count;
        states
    };

    let ymd = fresh(9); // YYYYMMDD
    let iso = fresh(11); // YYYY-MM-DD
    let iso_time = fresh(9); // THH:MM:SS tail
    let clock = fresh(9); // HH:MM[:SS]
    let year = fresh(5); // bare year 1000-2999
    let sep_d = fresh(1)[0]; // year range: saw "-"
    let sep_ds = fresh(1)[0]; // saw "- "
    let sep_s = fresh(1)[0]; // saw " "
    let sep_sd = fresh(1)[0]; // saw " -"
    let sep_sds = fresh(1)[0]; // saw " - "
    let year2 = fresh(4); // second year of a range (first digit already read)
    let us = fresh(23); // MM-DD-YYYY HH:MM:SS AM/PM
    let month_root = next;
    next += months.node_count();
    let n_states = next;

    let mut b = PfsmBuilder::new(n_states)
        .initial(ymd[0], 1.0 / 6.0)
        .initial(iso[0], 1.0 / 6.0)
        .initial(clock[0], 1.0 / 6.0)
        .initial(year[0], 1.0 / 6.0)
        .initial(us[0], 1.0 / 6.0)
        .initial(month_root, 1.0 / 6.0);

    // YYYYMMDD: eight unconstrained digits.
    b = digit_chain(b, &ymd).stop(ymd[8], 1.0);

    // YYYY-MM-DD, optionally THH:MM:SS.
    b = digit_chain(b, &iso[0..5]);
    b = b.char_edge(iso[4], '-', iso[5], 1.0);
    b = digit_chain(b, &iso[5..8]);
    b = b.char_edge(iso[7], '-', iso[8], 1.0);
    b = digit_chain(b, &iso[8..11]);
    b = b.stop(iso[10], 0.5).char_edge(iso[10], 'T', iso_time[0], 0.5);
    b = digit_chain(b, &iso_time[0..3]);
    b = b.char_edge(iso_time[2], ':', iso_time[3], 1.0);
    b = digit_chain(b, &iso_time[3..6]);
    b = b.char_edge(iso_time[5], ':', iso_time[6], 1.0);
    b = digit_chain(b, &iso_time[6..9]).stop(iso_time[8], 1.0);

    // HH:MM, optionally :SS.
    b = digit_chain(b, &clock[0..3]);
    b = b.char_edge(clock[2], ':', clock[3], 1.0);
    b = digit_chain(b, &clock[3..6]);
    b = b.stop(clock[5], 0.5).char_edge(clock[5], ':', clock[6], 0.5);
    b = digit_chain(b, &clock[6..9]).stop(clock[8], 1.0);

    // Bare year 1000-2999, optionally a range to a second such year.
    b = b
        .char_edge(year[0], '1', year[1], 0.5)
        .char_edge(year[0], '2', year[1], 0.5);
    b = digit_chain(b, &year[1..5]);
    b = b
        .stop(year[4], 0.5)
        .char_edge(year[4], '-', sep_d, 0.25)
        .char_edge(year[4], ' ', sep_s, 0.25);
    let into_second_year = |mut b: PfsmBuilder, from: usize, p: f64| -> PfsmBuilder {
        b = b.char_edge(from, '1', year2[0], p);
        b.char_edge(from, '2', year2[0], p)
    };
    b = into_second_year(b, sep_d, 1.0 / 3.0);
    b = b.char_edge(sep_d, ' ', sep_ds, 1.0 / 3.0);
    b = into_second_year(b, sep_ds, 0.5);
    b = into_second_year(b, sep_s, 1.0 / 3.0);
    b = b.char_edge(sep_s, '-', sep_sd, 1.0 / 3.0);
    b = into_second_year(b, sep_sd, 1.0 / 3.0);
    b = b.char_edge(sep_sd, ' ', sep_sds, 1.0 / 3.0);
    b = into_second_year(b, sep_sds, 0.5);
    b = digit_chain(b, &year2).stop(year2[3], 1.0);

    // MM-DD-YYYY HH:MM:SS AM|PM.
    b = digit_chain(b, &us[0..3]);
    b = b.char_edge(us[2], '-', us[3], 1.0);
    b = digit_chain(b, &us[3..6]);
    b = b.char_edge(us[5], '-', us[6], 1.0);
    b = digit_chain(b, &us[6..11]);
    b = b.char_edge(us[10], ' ', us[11], 1.0);
    b = digit_chain(b, &us[11..14]);
    b = b.char_edge(us[13], ':', us[14], 1.0);
    b = digit_chain(b, &us[14..17]);
    b = b.char_edge(us[16], ':', us[17], 1.0);
    b = digit_chain(b, &us[17..20]);
    b = b.char_edge(us[19], ' ', us[20], 1.0);
    b = b
        .char_edge(us[20], 'A', us[21], 0.5)
        .char_edge(us[20], 'P', us[21], 0.5)
        .char_edge(us[21], 'M', us[22], 1.0)
        .stop(us[22], 1.0);

    // Month names.
    let mut trie_next = month_root + 1;
    b = attach_trie(b, &months, month_root, &mut trie_next);

    b.build().expect("date machine is well-formed")
}

/// The built-in missing-data codes, uniformly weighted.
pub fn build_missing() -> Pfsm {
    build_missing_with(&[]).expect("builtin missing codes are distinct")
}

/// The built-in missing-data codes plus `extra_codes`, uniformly weighted.
/// Fails with [`Error::DuplicateMissingCode`] when a code appears twice.
pub fn build_missing_with(extra_codes: &[String]) -> Result<Pfsm> {
    let codes: Vec<&str> = BUILTIN_MISSING_CODES
        .iter()
        .copied()
        .chain(extra_codes.iter().map(String::as_str))
        .collect();
    let w = 1.0 / codes.len() as f64;
    let weighted: Vec<(&str, f64)> = codes.iter().map(|&c| (c, w)).collect();
    trie_machine(&weighted).map_err(|e| match e {
        Error::InvalidInput(msg) if msg.starts_with("duplicate code") => {
            let code = msg.trim_start_matches("duplicate code ").trim_matches('"').to_string();
            Error::DuplicateMissingCode(code)
        }
        other => other,
    })
}

/// Content-blind machine over all of Unicode via the catch-all symbol
/// class: every character scores the same, so a string's probability
/// depends only on its length, `P(len L) = 10^-(2L+1)` for `L >= 1`.
/// That is strictly below every regular machine on that machine's own
/// support (the weakest case is the string machine's
/// `(1/69) * (0.9/69)^(L-1) * 0.1`), so anomaly only wins when nothing
/// else fits. The empty string gets probability zero — the missing
/// machine owns that case.
pub fn build_anomaly() -> Pfsm {
    // States: 0 enters, 1 may stop, 2 is an absorbing trap carrying the
    // bulk of the mass (the machine is deliberately sub-normalized over
    // finite strings).
    PfsmBuilder::new(3)
        .initial(0, 1.0)
        .other_edge(0, 1, 0.01)
        .other_edge(0, 2, 0.99)
        .stop(1, 0.1)
        .other_edge(1, 1, 0.01)
        .other_edge(1, 2, 0.89)
        .other_edge(2, 2, 1.0)
        .build()
        .expect("anomaly machine is well-formed")
}

/// A clone of the anomaly machine for use as a *regular* type: when
/// enabled it absorbs columns whose values no other regular machine
/// supports (serial numbers, currencies, ...), keeping their rows from
/// being labelled anomalous wholesale.
pub fn build_xtype() -> Pfsm {
    build_anomaly()
}

// ---------------------------------------------------------------------------
// Catalog.
// ---------------------------------------------------------------------------

/// Reserved name under which [`build_xtype`] is appended to the regular
/// types.
pub const XTYPE_NAME: &str = "xtype";

const CATALOG_FORMAT: &str = "pfsm-catalog";
const MANIFEST_FORMAT: &str = "catalog-manifest";
const FORMAT_VERSION: u32 = 1;

/// The ordered set of regular type machines plus the shared missing and
/// anomaly machines.
#[derive(Debug, Clone)]
pub struct MachineCatalog {
    regular: Vec<(String, Pfsm)>,
    missing: Pfsm,
    anomaly: Pfsm,
    xtype_enabled: bool,
    missing_codes: Vec<String>,
}

impl MachineCatalog {
    /// The five built-in types in alphabetical order: boolean, date, float,
    /// integer, string.
    pub fn builtin() -> Self {
        MachineCatalog {
            regular: vec![
                ("boolean".to_string(), build_boolean()),
                ("date".to_string(), build_date()),
                ("float".to_string(), build_float()),
                ("integer".to_string(), build_integer()),
                ("string".to_string(), build_string()),
            ],
            missing: build_missing(),
            anomaly: build_anomaly(),
            xtype_enabled: false,
            missing_codes: BUILTIN_MISSING_CODES.iter().map(|&c| c.to_string()).collect(),
        }
    }

    /// Builds the catalog a manifest describes: a subset of the built-in
    /// types (all five when `types` is empty), regex-defined extra types,
    /// extra missing codes, and optionally the xtype.
    pub fn from_manifest(manifest: &CatalogManifest) -> Result<Self> {
        manifest.check_format()?;
        let builtin = MachineCatalog::builtin();
        let mut regular: Vec<(String, Pfsm)> = if manifest.types.is_empty() {
            builtin.regular
        } else {
            let mut chosen = Vec::new();
            for (name, machine) in builtin.regular {
                if manifest.types.contains(&name) {
                    chosen.push((name, machine));
                }
            }
            for requested in &manifest.types {
                if !chosen.iter().any(|(name, _)| name == requested) {
                    return Err(Error::UnknownLabel(requested.clone()));
                }
            }
            if manifest.types.len() != chosen.len() {
                return Err(Error::InvalidInput("manifest lists a type twice".into()));
            }
            chosen
        };
        for regex_type in &manifest.regex_types {
            let name = &regex_type.name;
            let reserved = name == "missing" || name == "anomaly" || name == XTYPE_NAME;
            if reserved || regular.iter().any(|(existing, _)| existing == name) {
                return Err(Error::InvalidInput(format!("type name {name:?} already taken")));
            }
            regular.push((name.clone(), compile_regex(&regex_type.pattern)?));
        }
        let missing = build_missing_with(&manifest.extra_missing_codes)?;
        let mut missing_codes: Vec<String> =
            BUILTIN_MISSING_CODES.iter().map(|&c| c.to_string()).collect();
        missing_codes.extend(manifest.extra_missing_codes.iter().cloned());
        let mut catalog = MachineCatalog {
            regular,
            missing,
            anomaly: build_anomaly(),
            xtype_enabled: false,
            missing_codes,
        };
        if manifest.xtype {
            catalog.enable_xtype();
        }
        Ok(catalog)
    }

    /// A catalog from caller-supplied machines. Every machine must pass
    /// [`validate`] with an empty report, names must be unique, and the
    /// names `missing` and `anomaly` are reserved. A regular type named
    /// `xtype` is allowed only in last position. The missing-code list is
    /// left empty since the given missing machine's support is opaque here.
    pub fn custom(
        regular: Vec<(String, Pfsm)>,
        missing: Pfsm,
        anomaly: Pfsm,
    ) -> Result<Self> {
        if regular.is_empty() {
            return Err(Error::InvalidInput("catalog needs at least one regular type".into()));
        }
        for (i, (name, _)) in regular.iter().enumerate() {
            if name == "missing" || name == "anomaly" {
                return Err(Error::InvalidInput(format!("type name {name:?} is reserved")));
            }
            if name == XTYPE_NAME && i + 1 != regular.len() {
                return Err(Error::InvalidInput("\"xtype\" must be the last regular type".into()));
            }
            if regular[..i].iter().any(|(existing, _)| existing == name) {
                return Err(Error::InvalidInput(format!("duplicate type name {name:?}")));
            }
        }
        let named = regular
            .iter()
            .map(|(name, machine)| (name.as_str(), machine))
            .chain([("missing", &missing), ("anomaly", &anomaly)]);
        for (name, machine) in named {
            if let Some(first) = validate(machine).first() {
                return Err(Error::InvalidMachine(format!("machine {name:?}: {first}")));
            }
        }
        let xtype_enabled = regular.last().map(|(name, _)| name.as_str()) == Some(XTYPE_NAME);
        Ok(MachineCatalog {
            regular,
            missing,
            anomaly,
            xtype_enabled,
            missing_codes: Vec::new(),
        })
    }

    /// Appends the xtype as the last regular type. Idempotent.
    pub fn enable_xtype(&mut self) {
        if !self.xtype_enabled {
            self.regular.push((XTYPE_NAME.to_string(), build_xtype()));
            self.xtype_enabled = true;
        }
    }

    /// Extends the missing machine's support by one code, keeping the
    /// per-code mass uniform.
    pub fn add_missing_code(&mut self, code: &str) -> Result<()> {
        if self.missing_codes.iter().any(|existing| existing == code) {
            return Err(Error::DuplicateMissingCode(code.to_string()));
        }
        let mut extended = self.missing_codes.clone();
        extended.push(code.to_string());
        let extras: Vec<String> = extended
            .iter()
            .filter(|c| !BUILTIN_MISSING_CODES.contains(&c.as_str()))
            .cloned()
            .collect();
        self.missing = build_missing_with(&extras)?;
        self.missing_codes = extended;
        Ok(())
    }

    /// The regular types in catalog order.
    pub fn regular(&self) -> &[(String, Pfsm)] {
        &self.regular
    }

    /// Number of regular types, K.
    pub fn n_types(&self) -> usize {
        self.regular.len()
    }

    /// Regular type names in catalog order.
    pub fn type_names(&self) -> Vec<&str> {
        self.regular.iter().map(|(name, _)| name.as_str()).collect()
    }

    /// Position of a regular type by name.
    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.regular.iter().position(|(existing, _)| existing == name)
    }

    pub fn missing(&self) -> &Pfsm {
        &self.missing
    }

    pub fn anomaly(&self) -> &Pfsm {
        &self.anomaly
    }

    pub fn xtype_enabled(&self) -> bool {
        self.xtype_enabled
    }

    /// The missing machine's support, in registration order.
    pub fn missing_codes(&self) -> &[String] {
        &self.missing_codes
    }

    pub(crate) fn regular_machine_mut(&mut self, index: usize) -> &mut Pfsm {
        &mut self.regular[index].1
    }
}

#[derive(Serialize, Deserialize)]
struct NamedMachineRepr {
    name: String,
    machine: Pfsm,
}

#[derive(Serialize, Deserialize)]
struct CatalogRepr {
    format: String,
    version: u32,
    regular: Vec<NamedMachineRepr>,
    missing: Pfsm,
    anomaly: Pfsm,
    xtype_enabled: bool,
    missing_codes: Vec<String>,
}

impl Serialize for MachineCatalog {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        CatalogRepr {
            format: CATALOG_FORMAT.to_string(),
            version: FORMAT_VERSION,
            regular: self
                .regular
                .iter()
                .map(|(name, machine)| NamedMachineRepr {
                    name: name.clone(),
                    machine: machine.clone(),
                })
                .collect(),
            missing: self.missing.clone(),
            anomaly: self.anomaly.clone(),
            xtype_enabled: self.xtype_enabled,
            missing_codes: self.missing_codes.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MachineCatalog {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = CatalogRepr::deserialize(deserializer)?;
        if repr.format != CATALOG_FORMAT {
            return Err(D::Error::custom(format!(
                "unsupported catalog format {:?}",
                repr.format
            )));
        }
        if repr.version != FORMAT_VERSION {
            return Err(D::Error::custom(format!(
                "unsupported catalog format version {}",
                repr.version
            )));
        }
        let mut regular = Vec::with_capacity(repr.regular.len());
        for entry in repr.regular {
            if regular.iter().any(|(name, _)| *name == entry.name) {
                return Err(D::Error::custom(format!("duplicate type name {:?}", entry.name)));
            }
            regular.push((entry.name, entry.machine));
        }
        if repr.xtype_enabled && regular.last().map(|(name, _)| name.as_str()) != Some(XTYPE_NAME)
        {
            return Err(D::Error::custom(
                "xtype_enabled is set but the last regular type is not \"xtype\"",
            ));
        }
        for (name, machine) in regular
            .iter()
            .chain([(&"missing".to_string(), &repr.missing), (&"anomaly".to_string(), &repr.anomaly)].map(|(n, m)| (n.clone(), m.clone())).iter())
        {
            let report = validate(machine);
            if let Some(first) = report.first() {
                return Err(D::Error::custom(format!("machine {name:?}: {first}")));
            }
        }
        Ok(MachineCatalog {
            regular,
            missing: repr.missing,
            anomaly: repr.anomaly,
            xtype_enabled: repr.xtype_enabled,
            missing_codes: repr.missing_codes,
        })
    }
}

/// Extra regular type defined by a regex pattern in a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegexType {
    pub name: String,
    pub pattern: String,
}

/// Declarative description of a catalog: which built-in types to enable
/// (all five when empty), extra missing codes, extra regex-defined types,
/// and whether to append the xtype.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogManifest {
    #[serde(default = "CatalogManifest::default_format")]
    pub format: String,
    #[serde(default = "CatalogManifest::default_version")]
    pub version: u32,
    #[serde(default)]
    pub types: Vec<String>,
    #[serde(default)]
    pub extra_missing_codes: Vec<String>,
    #[serde(default)]
    pub regex_types: Vec<RegexType>,
    #[serde(default)]
    pub xtype: bool,
}

impl Default for CatalogManifest {
    fn default() -> Self {
        CatalogManifest {
            format: Self::default_format(),
            version: Self::default_version(),
            types: Vec::new(),
            extra_missing_codes: Vec::new(),
            regex_types: Vec::new(),
            xtype: false,
        }
    }
}

impl CatalogManifest {
    fn default_format() -> String {
        MANIFEST_FORMAT.to_string()
    }

    fn default_version() -> u32 {
        FORMAT_VERSION
    }

    fn check_format(&self) -> Result<()> {
        if self.format != MANIFEST_FORMAT {
            return Err(Error::InvalidInput(format!(
                "unsupported manifest format {:?}",
                self.format
            )));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported manifest format version {}",
                self.version
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pfsm::{enumerate_support, forward_log_prob, validate};

    fn prob(machine: &Pfsm, value: &str) -> f64 {
        forward_log_prob(machine, value).exp()
    }

    #[test]
    fn every_builtin_machine_validates_cleanly() {
        let catalog = MachineCatalog::builtin();
        for (name, machine) in catalog.regular() {
            assert!(validate(machine).is_empty(), "{name}");
        }
        assert!(validate(catalog.missing()).is_empty());
        assert!(validate(catalog.anomaly()).is_empty());
    }

    #[test]
    fn integer_support() {
        let m = build_integer();
        assert!(prob(&m, "42") > 0.0);
        assert!(prob(&m, "-007") > 0.0);
        assert_eq!(prob(&m, "4.2"), 0.0);
        assert!((prob(&m, "1") - 0.005).abs() < 1e-15);
    }

    #[test]
    fn float_support() {
        let m = build_float();
        assert!(prob(&m, "1,389,233.15") > 0.0);
        assert!(prob(&m, "1,233.15") > 0.0);
        assert!(prob(&m, "3e8") > 0.0);
        assert!(prob(&m, "-2.5E-10") > 0.0);
        assert!(prob(&m, "0.5") > 0.0);
        assert_eq!(prob(&m, "1.2.3"), 0.0);
        assert_eq!(prob(&m, "12,34.5"), 0.0); // comma groups are exactly three digits
        assert_eq!(prob(&m, "1,2345"), 0.0);
        assert_eq!(prob(&m, "2."), 0.0); // fraction needs a digit
        assert_eq!(prob(&m, ".5"), 0.0); // and so does the integer part
        assert_eq!(prob(&m, "1,234.5e"), 0.0); // and so does the exponent
        assert!(prob(&m, "1,234.5e6") > 0.0);
    }

    #[test]
    fn string_support() {
        let m = build_string();
        assert!(prob(&m, "hello-world_1") > 0.0);
        assert!(prob(&m, "95.5%") > 0.0);
        assert_eq!(prob(&m, "Alzheimer's"), 0.0);
        assert_eq!(prob(&m, "a&b"), 0.0);
        assert_eq!(prob(&m, ""), 0.0);
    }

    #[test]
    fn boolean_support_is_exactly_the_thirteen_spellings() {
        let m = build_boolean();
        let support = enumerate_support(&m, 5).unwrap();
        let mut strings: Vec<&str> = support.iter().map(|(s, _)| s.as_str()).collect();
        strings.sort_unstable();
        let mut expected =
            vec!["Yes", "No", "True", "False", "1", "0", "-1", "yes", "Y", "y", "no", "true", "false"];
        expected.sort_unstable();
        assert_eq!(strings, expected);
        let mass: f64 = support.iter().map(|(_, p)| p).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert!(prob(&m, "Y") > 0.0);
        assert_eq!(prob(&m, "2"), 0.0);
    }

    #[test]
    fn zero_and_one_prefer_boolean_then_integer_then_float() {
        let boolean = build_boolean();
        let integer = build_integer();
        let float = build_float();
        for value in ["0", "1"] {
            let pb = prob(&boolean, value);
            let pi = prob(&integer, value);
            let pf = prob(&float, value);
            assert!(pb > pi && pi > pf, "{value}: {pb} {pi} {pf}");
            assert!((pb / pi - 1.5).abs() < 1e-9, "{value}: ratio {}", pb / pi);
        }
    }

    #[test]
    fn date_support() {
        let m = build_date();
        for accepted in [
            "20170123",
            "2017-01-23",
            "2017-01-23T11:02:52",
            "11:02",
            "11:02:52",
            "1999",
            "1999-2005",
            "1999- 2005",
            "1999 2005",
            "1999 -2005",
            "1999 - 2005",
            "01-23-2017 11:02:52 AM",
            "01-23-2017 11:02:52 PM",
            "January",
            "May",
            "December",
        ] {
            assert!(prob(&m, accepted) > 0.0, "{accepted}");
        }
        for rejected in [
            "3999",      // outside 1000-2999
            "999",       // too short for a year
            "1999-01",   // incomplete second year / ISO form
            "2017-01",   // incomplete ISO date
            "11:2",      // minutes need two digits
            "Janu",      // month prefixes do not stop
            "january",   // case matters
            "1999--2005",
            "2017-01-23 11:02:52", // timestamp requires the T designator
        ] {
            assert_eq!(prob(&m, rejected), 0.0, "{rejected}");
        }
        assert!((prob(&m, "January") - 1.0 / 72.0).abs() < 1e-12);
    }

    #[test]
    fn missing_support_is_uniform_over_the_codes() {
        let m = build_missing();
        assert!(prob(&m, "-99") > 0.0);
        assert!(prob(&m, "N/ A") > 0.0);
        assert!(prob(&m, "") > 0.0);
        assert!(prob(&m, " ") > 0.0);
        assert_eq!(prob(&m, "missing"), 0.0);
        assert_eq!(BUILTIN_MISSING_CODES.len(), 37);
        for code in BUILTIN_MISSING_CODES {
            let p = prob(&m, code);
            assert!((p - 1.0 / 37.0).abs() < 1e-12, "{code:?}: {p}");
        }
    }

    #[test]
    fn anomaly_scores_by_length_only_and_below_regular_machines() {
        let anomaly = build_anomaly();
        assert!(prob(&anomaly, "⟐⟐⟐") > 0.0);
        assert!(prob(&anomaly, " ") > 0.0);
        assert_eq!(prob(&anomaly, ""), 0.0);
        assert_eq!(prob(&anomaly, "ab"), prob(&anomaly, "⟐⟐"));
        for len in 1..6 {
            let expected = 10f64.powi(-(2 * len as i32 + 1));
            assert!((prob(&anomaly, &"x".repeat(len)) - expected).abs() < 1e-15 * expected.max(1.0));
        }

        // Strictly below each regular machine on that machine's support.
        assert!(prob(&anomaly, "5") < prob(&build_integer(), "5"));
        assert!(prob(&anomaly, "0.5") < prob(&build_float(), "0.5"));
        assert!(prob(&anomaly, "No") < prob(&build_boolean(), "No"));
        assert!(prob(&anomaly, "word") < prob(&build_string(), "word"));
        assert!(prob(&anomaly, "2017-01-23") < prob(&build_date(), "2017-01-23"));
        // ... and on the worst case for the margin, a long string-typed value.
        let long = "z".repeat(40);
        assert!(prob(&anomaly, &long) < prob(&build_string(), &long));
    }

    #[test]
    fn xtype_is_the_anomaly_machine() {
        let xtype = build_xtype();
        let anomaly = build_anomaly();
        for value in ["$2949.57", "x", "12"] {
            assert_eq!(prob(&xtype, value), prob(&anomaly, value));
        }
    }

    #[test]
    fn catalog_order_and_lookup() {
        let mut catalog = MachineCatalog::builtin();
        assert_eq!(catalog.type_names(), ["boolean", "date", "float", "integer", "string"]);
        assert_eq!(catalog.type_index("integer"), Some(3));
        assert_eq!(catalog.type_index("xtype"), None);
        assert!(!catalog.xtype_enabled());
        catalog.enable_xtype();
        catalog.enable_xtype(); // idempotent
        assert_eq!(catalog.n_types(), 6);
        assert_eq!(catalog.type_names().last(), Some(&"xtype"));
    }

    #[test]
    fn adding_missing_codes_extends_the_support_uniformly() {
        let mut catalog = MachineCatalog::builtin();
        catalog.add_missing_code("missing").unwrap();
        let p = prob(catalog.missing(), "missing");
        assert!((p - 1.0 / 38.0).abs() < 1e-12);
        assert!((prob(catalog.missing(), "-99") - 1.0 / 38.0).abs() < 1e-12);
        assert!(validate(catalog.missing()).is_empty());

        let err = catalog.add_missing_code("missing").unwrap_err();
        assert!(matches!(err, Error::DuplicateMissingCode(code) if code == "missing"));
        let err = catalog.add_missing_code("-99").unwrap_err();
        assert!(matches!(err, Error::DuplicateMissingCode(_)));
    }

    #[test]
    fn manifest_selects_types_and_compiles_regex_types() {
        let manifest: CatalogManifest = serde_json::from_str(
            r#"{
                "format": "catalog-manifest",
                "version": 1,
                "types": ["integer", "string"],
                "extra_missing_codes": ["void"],
                "regex_types": [{"name": "code", "pattern": "[A-Z][A-Z][0-9]+"}],
                "xtype": true
            }"#,
        )
        .unwrap();
        let catalog = MachineCatalog::from_manifest(&manifest).unwrap();
        assert_eq!(catalog.type_names(), ["integer", "string", "code", "xtype"]);
        assert!(prob(&catalog.regular()[2].1, "AB123") > 0.0);
        assert_eq!(prob(&catalog.regular()[2].1, "ab123"), 0.0);
        assert!(prob(catalog.missing(), "void") > 0.0);
        assert!(catalog.xtype_enabled());
    }

    #[test]
    fn manifest_defaults_select_everything() {
        let manifest: CatalogManifest = serde_json::from_str("{}").unwrap();
        let catalog = MachineCatalog::from_manifest(&manifest).unwrap();
        assert_eq!(catalog.type_names(), ["boolean", "date", "float", "integer", "string"]);
        assert!(!catalog.xtype_enabled());
    }

    #[test]
    fn manifest_errors() {
        let unknown: CatalogManifest =
            serde_json::from_str(r#"{"types": ["decimal"]}"#).unwrap();
        assert!(matches!(
            MachineCatalog::from_manifest(&unknown),
            Err(Error::UnknownLabel(name)) if name == "decimal"
        ));

        let clash: CatalogManifest = serde_json::from_str(
            r#"{"regex_types": [{"name": "integer", "pattern": "[0-9]+"}]}"#,
        )
        .unwrap();
        assert!(MachineCatalog::from_manifest(&clash).is_err());

        let duplicate_code: CatalogManifest =
            serde_json::from_str(r#"{"extra_missing_codes": ["NA"]}"#).unwrap();
        assert!(matches!(
            MachineCatalog::from_manifest(&duplicate_code),
            Err(Error::DuplicateMissingCode(code)) if code == "NA"
        ));

        let bad_format: CatalogManifest =
            serde_json::from_str(r#"{"format": "pfsm-catalog"}"#).unwrap();
        assert!(MachineCatalog::from_manifest(&bad_format).is_err());
    }

    #[test]
    fn catalog_serialization_round_trips() {
        let mut catalog = MachineCatalog::builtin();
        catalog.enable_xtype();
        catalog.add_missing_code("void").unwrap();
        let json = serde_json::to_string(&catalog).unwrap();
        let loaded: MachineCatalog = serde_json::from_str(&json).unwrap();
        assert_eq!(loaded.type_names(), catalog.type_names());
        assert_eq!(loaded.missing_codes(), catalog.missing_codes());
        assert!(loaded.xtype_enabled());
        for ((_, a), (_, b)) in catalog.regular().iter().zip(loaded.regular()) {
            let za = a.z_values();
            let zb = b.z_values();
            assert_eq!(za.len(), zb.len());
            for (x, y) in za.iter().zip(&zb) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(json, serde_json::to_string(&loaded).unwrap());
    }

    #[test]
    fn catalog_deserialization_rejects_other_formats() {
        let mut catalog_json: serde_json::Value =
            serde_json::to_value(MachineCatalog::builtin()).unwrap();
        catalog_json["format"] = "pfsm-machine".into();
        assert!(serde_json::from_value::<MachineCatalog>(catalog_json).is_err());
    }
}
