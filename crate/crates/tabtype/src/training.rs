//! Discriminative training of the regular machines.
//!
//! Given labeled columns (x^j, t^j), training ascends
//!
//! ```text
//! Σ_j log p(t = t^j | x^j)
//! ```
//!
//! in the unconstrained z-space of the regular machines (probabilities are
//! softmax views of z, so every optimizer step yields machines that still
//! validate). The missing and anomaly machines keep their hand-crafted
//! parameters and always receive zero gradient.
//!
//! For a column labeled k, the objective splits per column into
//! `L_c − L_f` with `L_c = ln p(k) + Σ_i ln g_k(x_i)` and
//! `L_f = ln Σ_τ exp(ln p(τ) + Σ_i ln g_τ(x_i))`, where
//! `g_τ(x) = π_τ^τ f_τ(x) + π_τ^m p(x|m) + π_τ^a p(x|a)`. Differentiating
//! both terms gives, for machine τ,
//!
//! ```text
//! ∂/∂θ_τ log p(t=k|x) = ([τ=k] − p(t=τ|x)) · Σ_i (π_τ^τ f_τ(x_i) / g_τ(x_i)) · ∂ ln f_τ(x_i)/∂θ_τ
//! ```
//!
//! — the correct machine is pulled up and every machine is pushed down in
//! proportion to its column posterior, so the net force vanishes as the
//! posterior concentrates on the label. `∂ ln f/∂z` comes from the
//! forward-backward occupancies: for a parameter with probability p in
//! softmax row R, it is `occupancy − p · (total visits of R)`.
//!
//! The optimizer is nonlinear conjugate gradient (Polak–Ribière with the
//! non-negativity clamp, optional periodic restarts) with a backtracking
//! Armijo line search, so the trace of accepted objective values never
//! decreases. A central finite-difference oracle over the same free
//! coordinates verifies the analytic gradient in tests.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::inference::{column_log_joint_allow_empty, Column, TypeSystem};
use crate::numeric::log_sum_exp;
use crate::pfsm::{occupancy_stats, validate, ParamKind, ParamRow};

/// One training example: a column and the name of its true type.
#[derive(Debug, Clone)]
pub struct LabeledColumn {
    pub column: Column,
    pub label: String,
}

/// A set of labeled columns.
#[derive(Debug, Clone, Default)]
pub struct TrainingBatch {
    columns: Vec<LabeledColumn>,
}

impl TrainingBatch {
    pub fn new(columns: Vec<LabeledColumn>) -> Self {
        TrainingBatch { columns }
    }

    pub fn columns(&self) -> &[LabeledColumn] {
        &self.columns
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Σ_j log p(t^j | x^j) under `system`; see [`objective`].
    pub fn objective_value(&self, system: &TypeSystem) -> Result<f64> {
        objective(self, system)
    }

    /// Loads a corpus: a labels CSV with header `file,column,type` whose
    /// rows point into CSV tables under `dir`. The `column` field matches a
    /// header name, falling back to a zero-based column index. Short rows
    /// in the data files are padded with empty cells.
    pub fn from_corpus(dir: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<TrainingBatch> {
        let dir = dir.as_ref();
        let labels = labels.as_ref();
        let mut reader = csv::ReaderBuilder::new().from_path(labels).map_err(|e| {
            Error::InvalidInput(format!("cannot read labels file {}: {e}", labels.display()))
        })?;
        let headers = reader.headers()?.clone();
        let field = |name: &str| headers.iter().position(|h| h == name);
        let (file_at, column_at, type_at) = match (field("file"), field("column"), field("type")) {
            (Some(f), Some(c), Some(t)) => (f, c, t),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "labels file {} must have the header file,column,type",
                    labels.display()
                )))
            }
        };

        let mut tables: BTreeMap<String, Vec<Column>> = BTreeMap::new();
        let mut columns = Vec::new();
        for record in reader.records() {
            let record = record?;
            let file = record.get(file_at).unwrap_or("").to_string();
            let column_ref = record.get(column_at).unwrap_or("");
            let label = record.get(type_at).unwrap_or("");
            if !tables.contains_key(&file) {
                let table = read_csv_columns(&dir.join(&file))?;
                tables.insert(file.clone(), table);
            }
            let table = &tables[&file];
            let column = table
                .iter()
                .find(|c| c.name() == column_ref)
                .cloned()
                .or_else(|| {
                    column_ref
                        .parse::<usize>()
                        .ok()
                        .and_then(|i| table.get(i).cloned())
                })
                .ok_or_else(|| {
                    Error::InvalidInput(format!("file {file:?} has no column {column_ref:?}"))
                })?;
            columns.push(LabeledColumn { column, label: label.to_string() });
        }
        Ok(TrainingBatch::new(columns))
    }
}

fn read_csv_columns(path: &Path) -> Result<Vec<Column>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record?;
        for (i, column) in cells.iter_mut().enumerate() {
            column.push(record.get(i).unwrap_or("").to_string());
        }
    }
    Ok(headers
        .into_iter()
        .zip(cells)
        .map(|(name, column_cells)| Column::new(name, column_cells))
        .collect())
}

/// log p(t = label_j | x^j) for each batch column.
///
/// A column whose every type has zero likelihood yields −∞ at its position,
/// which identifies the offender; an empty column contributes the log prior
/// of its label (no evidence either way).
pub fn per_column_objectives(batch: &TrainingBatch, system: &TypeSystem) -> Result<Vec<f64>> {
    batch
        .columns()
        .iter()
        .map(|labeled| {
            let k = system
                .catalog()
                .type_index(&labeled.label)
                .ok_or_else(|| Error::UnknownLabel(labeled.label.clone()))?;
            let log_joint = column_log_joint_allow_empty(&labeled.column, system);
            let total = log_sum_exp(&log_joint);
            if total == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            Ok(log_joint[k] - total)
        })
        .collect()
}

/// Σ_j log p(t^j | x^j). Zero for an empty batch; −∞ when some column has
/// zero likelihood under every type (see [`per_column_objectives`]).
pub fn objective(batch: &TrainingBatch, system: &TypeSystem) -> Result<f64> {
    Ok(per_column_objectives(batch, system)?.iter().sum())
}

/// Gradient of the objective with respect to one machine's free parameters,
/// in the machine's canonical parameter layout (interpret indices with
/// [`crate::pfsm::Pfsm::param_kind`]).
#[derive(Debug, Clone)]
pub struct MachineGradient {
    pub name: String,
    pub values: Vec<f64>,
}

/// Gradients for every machine in the system: the regular machines in
/// catalog order, then `missing` and `anomaly`, which are frozen and always
/// all-zero.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub machines: Vec<MachineGradient>,
}

impl GradientSet {
    fn zeros(system: &TypeSystem) -> GradientSet {
        let catalog = system.catalog();
        let mut machines: Vec<MachineGradient> = catalog
            .regular()
            .iter()
            .map(|(name, machine)| MachineGradient {
                name: name.clone(),
                values: vec![0.0; machine.param_count()],
            })
            .collect();
        machines.push(MachineGradient {
            name: "missing".to_string(),
            values: vec![0.0; catalog.missing().param_count()],
        });
        machines.push(MachineGradient {
            name: "anomaly".to_string(),
            values: vec![0.0; catalog.anomaly().param_count()],
        });
        GradientSet { machines }
    }

    pub fn machine(&self, name: &str) -> Option<&MachineGradient> {
        self.machines.iter().find(|m| m.name == name)
    }
}

/// d ln f / dz for every parameter, accumulated into `grad` with weight
/// `scale`: occupancy minus probability times the owning row's visit count.
fn accumulate_log_prob_gradient(
    probs: &[f64],
    rows: &[ParamRow],
    per_param: &[f64],
    state_visits: &[f64],
    scale: f64,
    grad: &mut [f64],
) {
    for i in 0..grad.len() {
        let visits = match rows[i] {
            ParamRow::Initial => 1.0,
            ParamRow::State(q) => state_visits[q],
        };
        grad[i] += scale * (per_param[i] - probs[i] * visits);
    }
}

/// Exact gradient of [`objective`] for every machine.
///
/// Fails when a column has zero likelihood under every type (the objective
/// is −∞ there and has no gradient) or when an accumulated value turns
/// non-finite.
pub fn analytic_gradient(batch: &TrainingBatch, system: &TypeSystem) -> Result<GradientSet> {
    let catalog = system.catalog();
    let k_types = catalog.n_types();
    let mut gradients = GradientSet::zeros(system);

    // Per-machine layout tables, computed once.
    let layouts: Vec<(Vec<f64>, Vec<ParamRow>)> = catalog
        .regular()
        .iter()
        .map(|(_, machine)| (machine.layout_probs(), machine.param_rows()))
        .collect();

    for labeled in batch.columns() {
        let k = catalog
            .type_index(&labeled.label)
            .ok_or_else(|| Error::UnknownLabel(labeled.label.clone()))?;

        let values: Vec<(&str, f64)> = labeled
            .column
            .uniques()
            .iter()
            .map(|(value, count)| (value.as_str(), *count as f64))
            .collect();
        let scores: Vec<_> = values
            .iter()
            .map(|(value, _)| system.value_scores(value))
            .collect();

        let mut log_joint: Vec<f64> = system.prior().iter().map(|p| p.ln()).collect();
        for ((_, count), score) in values.iter().zip(&scores) {
            for (tau, acc) in log_joint.iter_mut().enumerate().take(k_types) {
                *acc += count * system.log_mixture(score, tau);
            }
        }
        let total = log_sum_exp(&log_joint);
        if total == f64::NEG_INFINITY {
            return Err(Error::NonFinite(format!(
                "gradient: column {:?} has zero likelihood under every type",
                labeled.column.name()
            )));
        }

        for tau in 0..k_types {
            let posterior = (log_joint[tau] - total).exp();
            let coeff = f64::from(u8::from(tau == k)) - posterior;
            if coeff == 0.0 {
                continue;
            }
            let machine = &catalog.regular()[tau].1;
            let (probs, rows) = &layouts[tau];
            let weight = system.weights()[tau];
            let grad = &mut gradients.machines[tau].values;
            for ((value, count), score) in values.iter().zip(&scores) {
                if score.log_f[tau] == f64::NEG_INFINITY {
                    continue; // unsupported value: all path derivatives vanish
                }
                let occ = match occupancy_stats(machine, value) {
                    Some(occ) => occ,
                    None => continue,
                };
                let log_g = system.log_mixture(score, tau);
                let type_share = (weight.regular.ln() + occ.log_prob - log_g).exp();
                accumulate_log_prob_gradient(
                    probs,
                    rows,
                    &occ.per_param,
                    &occ.state_visits,
                    coeff * count * type_share,
                    grad,
                );
            }
        }
    }

    for gradient in &gradients.machines {
        for (i, v) in gradient.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of machine {:?} parameter {i}",
                    gradient.name
                )));
            }
        }
    }
    Ok(gradients)
}

const MAX_ORACLE_PARAMS: usize = 500;

/// Central finite differences of [`objective`] in z-space, over the same
/// free coordinates training moves (regular machines only; the frozen
/// machines report zero). Test oracle: capped at 500 total parameters.
pub fn finite_difference_gradient(
    batch: &TrainingBatch,
    system: &TypeSystem,
    h: f64,
) -> Result<GradientSet> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidInput(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let total: usize = system
        .catalog()
        .regular()
        .iter()
        .map(|(_, machine)| machine.param_count())
        .sum();
    if total > MAX_ORACLE_PARAMS {
        return Err(Error::OracleLimit(format!(
            "{total} free parameters exceed {MAX_ORACLE_PARAMS}"
        )));
    }

    let mut gradients = GradientSet::zeros(system);
    for tau in 0..system.catalog().n_types() {
        let base = system.catalog().regular()[tau].1.z_values();
        let mut scratch = system.clone();
        for i in 0..base.len() {
            let mut z = base.clone();
            z[i] = base[i] + h;
            scratch.catalog_mut().regular_machine_mut(tau).set_z_values(&z)?;
            let plus = objective(batch, &scratch)?;
            z[i] = base[i] - h;
            scratch.catalog_mut().regular_machine_mut(tau).set_z_values(&z)?;
            let minus = objective(batch, &scratch)?;
            gradients.machines[tau].values[i] = (plus - minus) / (2.0 * h);
        }
        scratch.catalog_mut().regular_machine_mut(tau).set_z_values(&base)?;
    }
    Ok(gradients)
}

/// Optimizer settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Maximum accepted conjugate-gradient steps.
    pub max_iters: usize,
    /// Stop when |Δ objective| < tolerance · (1 + |objective|).
    pub tolerance: f64,
    /// Also move initial and stop probabilities; by default only
    /// transition parameters train.
    pub update_initial_final: bool,
    /// Forget conjugacy every this many steps (the Polak–Ribière clamp
    /// already restarts adaptively; this adds a periodic reset).
    pub restart_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iters: 200,
            tolerance: 1e-6,
            update_initial_final: false,
            restart_every: None,
        }
    }
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Free coordinates the optimizer moves: per regular machine, the layout
/// indices of transition parameters (plus initial/final when configured).
fn trainable_coords(system: &TypeSystem, update_initial_final: bool) -> Vec<Vec<usize>> {
    system
        .catalog()
        .regular()
        .iter()
        .map(|(_, machine)| {
            (0..machine.param_count())
                .filter(|&i| {
                    update_initial_final
                        || matches!(machine.param_kind(i), ParamKind::Transition { .. })
                })
                .collect()
        })
        .collect()
}

fn gather(system: &TypeSystem, coords: &[Vec<usize>]) -> Vec<f64> {
    let mut theta = Vec::new();
    for (tau, machine_coords) in coords.iter().enumerate() {
        let z = system.catalog().regular()[tau].1.z_values();
        theta.extend(machine_coords.iter().map(|&i| z[i]));
    }
    theta
}

fn scatter(system: &mut TypeSystem, coords: &[Vec<usize>], theta: &[f64]) -> Result<()> {
    let mut offset = 0;
    for (tau, machine_coords) in coords.iter().enumerate() {
        let machine = system.catalog_mut().regular_machine_mut(tau);
        let mut z = machine.z_values();
        for (slot, &i) in machine_coords.iter().enumerate() {
            z[i] = theta[offset + slot];
        }
        machine.set_z_values(&z)?;
        offset += machine_coords.len();
    }
    Ok(())
}

fn gather_gradient(gradients: &GradientSet, coords: &[Vec<usize>]) -> Vec<f64> {
    let mut flat = Vec::new();
    for (tau, machine_coords) in coords.iter().enumerate() {
        let values = &gradients.machines[tau].values;
        flat.extend(machine_coords.iter().map(|&i| values[i]));
    }
    flat
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backtracking Armijo search along `direction` from `base`. Returns the
/// accepted point and objective, or None when no step length works.
fn line_search(
    batch: &TrainingBatch,
    system: &TypeSystem,
    coords: &[Vec<usize>],
    base: &[f64],
    direction: &[f64],
    slope: f64,
    current: f64,
) -> Result<Option<(Vec<f64>, f64)>> {
    let mut scratch = system.clone();
    let mut step = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        let theta: Vec<f64> = base
            .iter()
            .zip(direction)
            .map(|(b, d)| b + step * d)
            .collect();
        if scatter(&mut scratch, coords, &theta).is_ok() {
            let candidate = objective(batch, &scratch)?;
            if candidate.is_finite() && candidate >= current + ARMIJO_C1 * step * slope {
                return Ok(Some((theta, candidate)));
            }
        }
        step *= 0.5;
    }
    Ok(None)
}

/// Conjugate-gradient ascent of [`objective`] starting from `system`'s
/// current (hand-crafted) parameters. Returns the trained system and the
/// trace of objective values: the initial value followed by the value after
/// each accepted step, which never decreases.
pub fn train(
    batch: &TrainingBatch,
    system: &TypeSystem,
    config: &TrainConfig,
) -> Result<(TypeSystem, Vec<f64>)> {
    let mut trained = system.clone();
    let mut current = objective(batch, &trained)?;
    if !current.is_finite() {
        return Err(Error::NonFinite(format!(
            "objective at initialization is {current}"
        )));
    }
    let mut trace = vec![current];
    let coords = trainable_coords(system, config.update_initial_final);
    if coords.iter().all(Vec::is_empty) || config.max_iters == 0 {
        return Ok((trained, trace));
    }

    let mut g = gather_gradient(&analytic_gradient(batch, &trained)?, &coords);
    let mut direction = g.clone();
    let mut steps_since_restart = 0;
    for _ in 0..config.max_iters {
        let mut slope = dot(&g, &direction);
        if slope <= 0.0 {
            // The conjugate direction stopped being an ascent direction.
            direction = g.clone();
            slope = dot(&g, &g);
        }
        if slope == 0.0 {
            break; // stationary point
        }
        let base = gather(&trained, &coords);
        let mut accepted =
            line_search(batch, &trained, &coords, &base, &direction, slope, current)?;
        if accepted.is_none() && direction != g {
            direction = g.clone();
            slope = dot(&g, &g);
            if slope > 0.0 {
                accepted =
                    line_search(batch, &trained, &coords, &base, &direction, slope, current)?;
            }
        }
        let Some((theta, improved)) = accepted else {
            break;
        };
        scatter(&mut trained, &coords, &theta)?;
        trace.push(improved);
        let converged = (improved - current).abs() < config.tolerance * (1.0 + current.abs());
        current = improved;
        if converged {
            break;
        }

        let g_next = gather_gradient(&analytic_gradient(batch, &trained)?, &coords);
        steps_since_restart += 1;
        let periodic_restart = config
            .restart_every
            .is_some_and(|n| steps_since_restart >= n);
        let beta = if periodic_restart {
            steps_since_restart = 0;
            0.0
        } else {
            let denom = dot(&g, &g);
            if denom == 0.0 {
                0.0
            } else {
                ((dot(&g_next, &g_next) - dot(&g_next, &g)) / denom).max(0.0)
            }
        };
        for (d, gn) in direction.iter_mut().zip(&g_next) {
            *d = gn + beta * *d;
        }
        g = g_next;
    }

    for (name, machine) in trained.catalog().regular() {
        let report = validate(machine);
        assert!(report.is_empty(), "machine {name:?} left normalization: {report:?}");
    }
    Ok((trained, trace))
}
