//! Probabilistic finite-state machines.
//!
//! A PFSM is the tuple of a state set, an alphabet, and three probability
//! tables: initial `I(q)`, final (stop) `F(q)`, and transition `T(q, a, q')`.
//! A machine generates a string by sampling a start state from `I`, then at
//! each state either stopping (probability `F(q)`) or emitting a symbol and
//! moving along one of its outgoing transitions. Normalization therefore
//! requires
//!
//! * `sum_q I(q) = 1`, and
//! * `F(q) + sum_{a,q'} T(q, a, q') = 1` for every state `q`.
//!
//! Every stored probability is mirrored by an unconstrained free parameter
//! (z-value). Probabilities are re-materialized from the z-values through a
//! per-row softmax (one row per state, covering its stop option and all of
//! its outgoing transitions; the initial distribution is its own row), so any
//! gradient step in z-space keeps the machine normalized by construction.
//!
//! Entries absent from the sparse tables are structural zeros: the softmax
//! never produces them and training never creates them.
//!
//! Submodules provide the forward/backward algorithms ([`forward_log_prob`],
//! [`transition_posteriors`]), brute-force test oracles ([`brute_force_prob`],
//! [`enumerate_support`]), and compilation of a regex subset into uniform
//! machines ([`compile_regex`]).

mod forward;
mod oracle;
mod regex;

pub use self::forward::{forward_log_prob, transition_posteriors, TransitionPosteriors};
pub(crate) use self::forward::occupancy_stats;
pub use self::oracle::{brute_force_prob, enumerate_support};
pub use self::regex::compile_regex;

use std::collections::BTreeSet;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numeric::softmax;

/// Tolerance used by [`validate`] for the two normalization invariants.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Serialized spelling of [`Symbol::Other`].
const OTHER_TOKEN: &str = "::other::";

/// A symbol class labelling a transition.
///
/// `Char(c)` matches exactly the character `c`. `Other` is the machine's
/// catch-all class: it matches any character that is *not* in the machine's
/// explicit alphabet. The class counts as a single outcome in row
/// normalization, and the probability of emitting any particular matching
/// character equals the class probability (the class is one atom, not a
/// uniform distribution over its members). This keeps machines over the full
/// Unicode range exactly normalized without enumerating 1,114,112 symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Char(char),
    Other,
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Char(c) => write!(f, "{c}"),
            Symbol::Other => write!(f, "{OTHER_TOKEN}"),
        }
    }
}

impl Serialize for Symbol {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Symbol::Char(c) => serializer.serialize_str(&c.to_string()),
            Symbol::Other => serializer.serialize_str(OTHER_TOKEN),
        }
    }
}

impl<'de> Deserialize<'de> for Symbol {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s == OTHER_TOKEN {
            return Ok(Symbol::Other);
        }
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Ok(Symbol::Char(c)),
            _ => Err(D::Error::custom(format!(
                "symbol must be a single character or {OTHER_TOKEN:?}, got {s:?}"
            ))),
        }
    }
}

/// One outgoing transition of a state.
#[derive(Debug, Clone)]
pub(crate) struct Edge {
    pub symbol: Symbol,
    pub to: usize,
    pub z: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, Default)]
struct StateRow {
    /// Stop (final-state) entry, if this state can terminate a string.
    stop: Option<(f64, f64)>, // (z, prob)
    /// Outgoing transitions, sorted by (symbol, destination).
    edges: Vec<Edge>,
}

impl StateRow {
    fn option_count(&self) -> usize {
        self.edges.len() + usize::from(self.stop.is_some())
    }
}

/// What a free-parameter index refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamKind {
    Initial { state: usize },
    Final { state: usize },
    Transition { from: usize, symbol: Symbol, to: usize },
}

/// The softmax row a free parameter belongs to: either the initial
/// distribution or the option row of one state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ParamRow {
    Initial,
    State(usize),
}

/// A probabilistic finite-state machine.
///
/// Immutable in normal use; training mutates the free parameters through
/// [`Pfsm::set_z_values`], which re-materializes the probability tables.
#[derive(Debug, Clone)]
pub struct Pfsm {
    n_states: usize,
    alphabet: BTreeSet<char>,
    has_catch_all: bool,
    /// Initial entries sorted by state: (state, z, prob).
    initial_entries: Vec<(usize, f64, f64)>,
    /// Dense view of the initial distribution (structural zeros included).
    initial_dense: Vec<f64>,
    rows: Vec<StateRow>,
    /// Start offset of each state's row in the flat parameter layout.
    row_offsets: Vec<usize>,
    param_count: usize,
}

impl Pfsm {
    /// Number of states.
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Explicit alphabet (characters appearing on `Char` transitions).
    pub fn alphabet(&self) -> &BTreeSet<char> {
        &self.alphabet
    }

    /// Whether any transition carries the catch-all class.
    pub fn has_catch_all(&self) -> bool {
        self.has_catch_all
    }

    /// Initial probability of a state (0 for structurally absent entries).
    pub fn initial_prob(&self, state: usize) -> f64 {
        self.initial_dense[state]
    }

    /// Stop probability of a state (0 when the state cannot terminate).
    pub fn final_prob(&self, state: usize) -> f64 {
        self.rows[state].stop.map_or(0.0, |(_, p)| p)
    }

    /// Transition probability, 0 for structurally absent triples.
    pub fn transition_prob(&self, from: usize, symbol: Symbol, to: usize) -> f64 {
        self.edges_matching(from, symbol)
            .iter()
            .find(|e| e.to == to)
            .map_or(0.0, |e| e.prob)
    }

    /// States carrying initial probability mass.
    pub fn initial_states(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.initial_entries.iter().map(|&(q, _, p)| (q, p))
    }

    pub(crate) fn dense_initial(&self) -> &[f64] {
        &self.initial_dense
    }

    pub(crate) fn edges(&self, state: usize) -> &[Edge] {
        &self.rows[state].edges
    }

    /// Whether `state` has a stop entry in the parameter layout. A state can
    /// have one even when its current stop probability rounds to zero.
    pub(crate) fn has_stop_entry(&self, state: usize) -> bool {
        self.rows[state].stop.is_some()
    }

    /// Classify a character against this machine's alphabet. `None` means the
    /// machine has no transition class covering the character, so any string
    /// containing it has probability zero under this machine.
    pub fn classify(&self, c: char) -> Option<Symbol> {
        if self.alphabet.contains(&c) {
            Some(Symbol::Char(c))
        } else if self.has_catch_all {
            Some(Symbol::Other)
        } else {
            None
        }
    }

    /// Edges of `state` whose symbol equals `symbol` (they are kept sorted,
    /// so the matches form one contiguous run).
    pub(crate) fn edges_matching(&self, state: usize, symbol: Symbol) -> &[Edge] {
        let edges = &self.rows[state].edges;
        let lo = edges.partition_point(|e| e.symbol < symbol);
        let hi = edges.partition_point(|e| e.symbol <= symbol);
        &edges[lo..hi]
    }

    /// Total number of free parameters (initial entries, stop entries,
    /// transitions).
    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Free parameters in canonical layout: the initial entries (by state),
    /// then for each state its stop entry (if present) followed by its
    /// transitions sorted by (symbol, destination).
    pub fn z_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count);
        out.extend(self.initial_entries.iter().map(|&(_, z, _)| z));
        for row in &self.rows {
            if let Some((z, _)) = row.stop {
                out.push(z);
            }
            out.extend(row.edges.iter().map(|e| e.z));
        }
        out
    }

    /// Probabilities in the same canonical layout as [`Pfsm::z_values`].
    pub fn layout_probs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count);
        out.extend(self.initial_entries.iter().map(|&(_, _, p)| p));
        for row in &self.rows {
            if let Some((_, p)) = row.stop {
                out.push(p);
            }
            out.extend(row.edges.iter().map(|e| e.prob));
        }
        out
    }

    /// Replace all free parameters (canonical layout) and re-materialize the
    /// probability tables through the softmax.
    pub fn set_z_values(&mut self, z: &[f64]) -> Result<()> {
        if z.len() != self.param_count {
            return Err(Error::InvalidInput(format!(
                "expected {} free parameters, got {}",
                self.param_count,
                z.len()
            )));
        }
        let mut it = z.iter().copied();
        for entry in &mut self.initial_entries {
            entry.1 = it.next().unwrap();
        }
        for row in &mut self.rows {
            if let Some(stop) = &mut row.stop {
                stop.0 = it.next().unwrap();
            }
            for edge in &mut row.edges {
                edge.z = it.next().unwrap();
            }
        }
        self.materialize()
    }

    /// Describe the parameter at a canonical-layout index.
    pub fn param_kind(&self, index: usize) -> ParamKind {
        assert!(index < self.param_count, "parameter index out of range");
        if index < self.initial_entries.len() {
            return ParamKind::Initial {
                state: self.initial_entries[index].0,
            };
        }
        for (q, row) in self.rows.iter().enumerate() {
            let start = self.row_offsets[q];
            if index < start + row.option_count() {
                let mut i = index - start;
                if row.stop.is_some() {
                    if i == 0 {
                        return ParamKind::Final { state: q };
                    }
                    i -= 1;
                }
                let edge = &row.edges[i];
                return ParamKind::Transition {
                    from: q,
                    symbol: edge.symbol,
                    to: edge.to,
                };
            }
        }
        unreachable!("offsets cover all parameters")
    }

    /// Softmax row of each parameter, aligned with the canonical layout.
    pub(crate) fn param_rows(&self) -> Vec<ParamRow> {
        let mut out = Vec::with_capacity(self.param_count);
        out.extend(std::iter::repeat_n(ParamRow::Initial, self.initial_entries.len()));
        for (q, row) in self.rows.iter().enumerate() {
            out.extend(std::iter::repeat_n(ParamRow::State(q), row.option_count()));
        }
        out
    }

    /// Rebuild all probabilities from the free parameters.
    fn materialize(&mut self) -> Result<()> {
        let finite = self.initial_entries.iter().all(|&(_, z, _)| z.is_finite())
            && self.rows.iter().all(|row| {
                row.stop.is_none_or(|(z, _)| z.is_finite())
                    && row.edges.iter().all(|e| e.z.is_finite())
            });
        if !finite {
            return Err(Error::InvalidFreeParameter);
        }
        if !self.initial_entries.is_empty() {
            let zs: Vec<f64> = self.initial_entries.iter().map(|&(_, z, _)| z).collect();
            let ps = softmax(&zs);
            self.initial_dense = vec![0.0; self.n_states];
            for (entry, p) in self.initial_entries.iter_mut().zip(ps) {
                entry.2 = p;
                self.initial_dense[entry.0] = p;
            }
        }
        for row in &mut self.rows {
            if row.option_count() == 0 {
                continue;
            }
            let mut zs = Vec::with_capacity(row.option_count());
            if let Some((z, _)) = row.stop {
                zs.push(z);
            }
            zs.extend(row.edges.iter().map(|e| e.z));
            let ps = softmax(&zs);
            let mut it = ps.into_iter();
            if let Some(stop) = &mut row.stop {
                stop.1 = it.next().unwrap();
            }
            for edge in &mut row.edges {
                edge.prob = it.next().unwrap();
            }
        }
        Ok(())
    }

    fn to_repr(&self) -> MachineRepr {
        // The serialized probabilities are always the softmax of the free
        // parameters, so serializing a loaded machine reproduces its file
        // byte for byte.
        let mut canonical = self.clone();
        canonical
            .materialize()
            .expect("stored free parameters are finite");
        MachineRepr {
            format: MACHINE_FORMAT.to_string(),
            version: FORMAT_VERSION,
            states: canonical.n_states,
            initial: canonical
                .initial_entries
                .iter()
                .map(|&(state, z, p)| InitialRepr { state, z, p })
                .collect(),
            rows: canonical
                .rows
                .iter()
                .enumerate()
                .map(|(state, row)| RowRepr {
                    state,
                    stop: row.stop.map(|(z, p)| EntryRepr { z, p }),
                    edges: row
                        .edges
                        .iter()
                        .map(|e| EdgeRepr {
                            on: e.symbol,
                            to: e.to,
                            z: e.z,
                            p: e.prob,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    fn from_repr(repr: MachineRepr) -> Result<Self> {
        if repr.format != MACHINE_FORMAT {
            return Err(Error::InvalidInput(format!(
                "unsupported machine format {:?}",
                repr.format
            )));
        }
        if repr.version != FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported machine format version {}",
                repr.version
            )));
        }
        if repr.rows.len() != repr.states {
            return Err(Error::InvalidMachine(format!(
                "{} rows for {} states",
                repr.rows.len(),
                repr.states
            )));
        }
        let mut builder = PfsmBuilder::new(repr.states);
        for entry in &repr.initial {
            builder = builder.initial_z(entry.state, entry.z);
        }
        for row in &repr.rows {
            if let Some(stop) = &row.stop {
                builder = builder.stop_z(row.state, stop.z);
            }
            for edge in &row.edges {
                builder = builder.edge_z(row.state, edge.on, edge.to, edge.z);
            }
        }
        builder.build_from_z()
    }
}

const MACHINE_FORMAT: &str = "pfsm-machine";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct InitialRepr {
    state: usize,
    z: f64,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct EntryRepr {
    z: f64,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct EdgeRepr {
    on: Symbol,
    to: usize,
    z: f64,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct RowRepr {
    state: usize,
    stop: Option<EntryRepr>,
    edges: Vec<EdgeRepr>,
}

/// Versioned machine serialization. Free parameters round-trip bit exactly
/// (serde_json emits shortest-round-trip doubles); the `p` fields are
/// informational and recomputed from the z-values on load.
#[derive(Serialize, Deserialize)]
struct MachineRepr {
    format: String,
    version: u32,
    states: usize,
    initial: Vec<InitialRepr>,
    rows: Vec<RowRepr>,
}

impl Serialize for Pfsm {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_repr().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pfsm {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = MachineRepr::deserialize(deserializer)?;
        Pfsm::from_repr(repr).map_err(D::Error::custom)
    }
}

enum BuilderEntry {
    /// Probability given directly; z is its logarithm.
    Prob(f64),
    /// Free parameter given directly (deserialization path); probability is
    /// re-materialized through the softmax.
    Z(f64),
}

/// Incremental [`Pfsm`] construction from probabilities.
///
/// Probabilities are stored as given (so [`validate`] can report broken
/// normalization) with free parameters `z = ln(p)`. When every row sums to 1
/// the softmax reproduces the given probabilities up to rounding.
pub struct PfsmBuilder {
    n_states: usize,
    initial: Vec<(usize, BuilderEntry)>,
    stops: Vec<(usize, BuilderEntry)>,
    edges: Vec<(usize, Symbol, usize, BuilderEntry)>,
}

impl PfsmBuilder {
    pub fn new(n_states: usize) -> Self {
        PfsmBuilder {
            n_states,
            initial: Vec::new(),
            stops: Vec::new(),
            edges: Vec::new(),
        }
    }

    /// Give `state` initial probability `p`.
    pub fn initial(mut self, state: usize, p: f64) -> Self {
        self.initial.push((state, BuilderEntry::Prob(p)));
        self
    }

    /// Give `state` stop (final) probability `p`.
    pub fn stop(mut self, state: usize, p: f64) -> Self {
        self.stops.push((state, BuilderEntry::Prob(p)));
        self
    }

    /// Add the transition `from --symbol--> to` with probability `p`.
    pub fn edge(mut self, from: usize, symbol: Symbol, to: usize, p: f64) -> Self {
        self.edges.push((from, symbol, to, BuilderEntry::Prob(p)));
        self
    }

    /// Convenience for [`PfsmBuilder::edge`] with a concrete character.
    pub fn char_edge(self, from: usize, c: char, to: usize, p: f64) -> Self {
        self.edge(from, Symbol::Char(c), to, p)
    }

    /// Convenience for [`PfsmBuilder::edge`] with the catch-all class.
    pub fn other_edge(self, from: usize, to: usize, p: f64) -> Self {
        self.edge(from, Symbol::Other, to, p)
    }

    fn initial_z(mut self, state: usize, z: f64) -> Self {
        self.initial.push((state, BuilderEntry::Z(z)));
        self
    }

    fn stop_z(mut self, state: usize, z: f64) -> Self {
        self.stops.push((state, BuilderEntry::Z(z)));
        self
    }

    fn edge_z(mut self, from: usize, symbol: Symbol, to: usize, z: f64) -> Self {
        self.edges.push((from, symbol, to, BuilderEntry::Z(z)));
        self
    }

    fn assemble(self) -> Result<Pfsm> {
        if self.n_states == 0 {
            return Err(Error::InvalidMachine("machine has no states".into()));
        }
        let n = self.n_states;
        let check_state = |q: usize, what: &str| -> Result<()> {
            if q >= n {
                return Err(Error::InvalidMachine(format!(
                    "{what} references state {q} but the machine has {n} states"
                )));
            }
            Ok(())
        };
        let entry_values = |e: &BuilderEntry, what: &str| -> Result<(f64, f64)> {
            match *e {
                BuilderEntry::Prob(p) => {
                    if !p.is_finite() || p <= 0.0 {
                        Err(Error::InvalidMachine(format!(
                            "{what} probability {p} must be positive and finite \
                             (omit the entry for a structural zero)"
                        )))
                    } else {
                        Ok((p.ln(), p))
                    }
                }
                BuilderEntry::Z(z) => {
                    if !z.is_finite() {
                        Err(Error::InvalidFreeParameter)
                    } else {
                        Ok((z, f64::NAN)) // materialized below
                    }
                }
            }
        };

        let mut initial_entries: Vec<(usize, f64, f64)> = Vec::new();
        for (q, e) in &self.initial {
            check_state(*q, "initial entry")?;
            if initial_entries.iter().any(|&(s, _, _)| s == *q) {
                return Err(Error::InvalidMachine(format!(
                    "duplicate initial entry for state {q}"
                )));
            }
            let (z, p) = entry_values(e, "initial")?;
            initial_entries.push((*q, z, p));
        }
        initial_entries.sort_by_key(|&(q, _, _)| q);

        let mut rows: Vec<StateRow> = vec![StateRow::default(); n];
        for (q, e) in &self.stops {
            check_state(*q, "stop entry")?;
            if rows[*q].stop.is_some() {
                return Err(Error::InvalidMachine(format!(
                    "duplicate stop entry for state {q}"
                )));
            }
            let (z, p) = entry_values(e, "stop")?;
            rows[*q].stop = Some((z, p));
        }
        let mut alphabet = BTreeSet::new();
        let mut has_catch_all = false;
        for (from, symbol, to, e) in &self.edges {
            check_state(*from, "transition")?;
            check_state(*to, "transition")?;
            if rows[*from]
                .edges
                .iter()
                .any(|edge| edge.symbol == *symbol && edge.to == *to)
            {
                return Err(Error::InvalidMachine(format!(
                    "duplicate transition ({from}, {symbol}, {to})"
                )));
            }
            let (z, p) = entry_values(e, "transition")?;
            match symbol {
                Symbol::Char(c) => {
                    alphabet.insert(*c);
                }
                Symbol::Other => has_catch_all = true,
            }
            rows[*from].edges.push(Edge {
                symbol: *symbol,
                to: *to,
                z,
                prob: p,
            });
        }
        for row in &mut rows {
            row.edges.sort_by_key(|a| (a.symbol, a.to));
        }

        let mut row_offsets = Vec::with_capacity(n);
        let mut offset = initial_entries.len();
        for row in &rows {
            row_offsets.push(offset);
            offset += row.option_count();
        }

        let mut initial_dense = vec![0.0; n];
        for &(q, _, p) in &initial_entries {
            initial_dense[q] = p;
        }

        Ok(Pfsm {
            n_states: n,
            alphabet,
            has_catch_all,
            initial_entries,
            initial_dense,
            rows,
            row_offsets,
            param_count: offset,
        })
    }

    /// Build the machine, keeping the given probabilities verbatim.
    pub fn build(self) -> Result<Pfsm> {
        self.assemble()
    }

    /// Build from free parameters, materializing probabilities via softmax.
    fn build_from_z(self) -> Result<Pfsm> {
        let mut machine = self.assemble()?;
        machine.materialize()?;
        Ok(machine)
    }
}

/// Check the normalization and range invariants of a machine.
///
/// Violations are returned as human-readable strings (an empty report means
/// the machine is valid); broken machines are data to inspect, not errors.
pub fn validate(machine: &Pfsm) -> Vec<String> {
    let mut report = Vec::new();
    let tol = NORMALIZATION_TOLERANCE;

    let initial_sum: f64 = machine.initial_entries.iter().map(|&(_, _, p)| p).sum();
    if (initial_sum - 1.0).abs() > tol {
        report.push(format!("initial probabilities sum {initial_sum}"));
    }
    for &(q, _, p) in &machine.initial_entries {
        if !(0.0..=1.0).contains(&p) {
            report.push(format!("initial probability of state {q} is {p}"));
        }
    }
    for (q, row) in machine.rows.iter().enumerate() {
        let mut sum = 0.0;
        if let Some((_, p)) = row.stop {
            sum += p;
            if !(0.0..=1.0).contains(&p) {
                report.push(format!("stop probability of state {q} is {p}"));
            }
        }
        for edge in &row.edges {
            sum += edge.prob;
            if !(0.0..=1.0).contains(&edge.prob) {
                report.push(format!(
                    "transition ({q}, {}, {}) probability is {}",
                    edge.symbol, edge.to, edge.prob
                ));
            }
        }
        if (sum - 1.0).abs() > tol {
            report.push(format!(
                "state {q} stop plus outgoing probabilities sum {sum}"
            ));
        }
    }
    report
}

/// Rebuild all probabilities from the free parameters.
///
/// The result always passes [`validate`]: each softmax row is normalized by
/// construction. Fails only when a free parameter is NaN or infinite.
pub fn reparameterize(machine: &Pfsm) -> Result<Pfsm> {
    let mut out = machine.clone();
    out.materialize()?;
    Ok(out)
}
