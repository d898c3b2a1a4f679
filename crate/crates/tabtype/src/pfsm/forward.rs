//! Forward and forward-backward algorithms.
//!
//! The forward pass computes the exact marginal probability of a string over
//! all state paths,
//!
//! ```text
//! p(x) = sum_{q_0..q_L} I(q_0) * prod_l T(q_l, x^l, q_{l+1}) * F(q_L)
//! ```
//!
//! in linear space with per-position rescaling: after every step the state
//! vector is normalized and the log of the scale accumulated, so strings of
//! length 10,000 and beyond neither underflow nor lose precision.
//!
//! The backward pass reuses the forward scales, which makes every posterior
//! quantity (position occupancies, edge occupancies) available in scale-free
//! form regardless of how small `p(x)` is.

use std::collections::BTreeMap;

use super::{Pfsm, Symbol};

/// Classify every character of `value`, or `None` if some character is
/// covered by no transition class of the machine.
fn classify_all(machine: &Pfsm, value: &str) -> Option<Vec<Symbol>> {
    value.chars().map(|c| machine.classify(c)).collect()
}

/// Exact log-probability of `value` under `machine`; negative infinity when
/// the string is outside the machine's support.
pub fn forward_log_prob(machine: &Pfsm, value: &str) -> f64 {
    let symbols = match classify_all(machine, value) {
        Some(s) => s,
        None => return f64::NEG_INFINITY,
    };
    let m = machine.n_states();
    let mut v = machine.dense_initial().to_vec();
    let mut log_scale = 0.0;
    let s0: f64 = v.iter().sum();
    if s0 <= 0.0 {
        return f64::NEG_INFINITY;
    }
    for x in v.iter_mut() {
        *x /= s0;
    }
    log_scale += s0.ln();

    let mut next = vec![0.0; m];
    for &sym in &symbols {
        next.iter_mut().for_each(|x| *x = 0.0);
        for (q, &vq) in v.iter().enumerate() {
            if vq == 0.0 {
                continue;
            }
            for edge in machine.edges_matching(q, sym) {
                next[edge.to] += vq * edge.prob;
            }
        }
        let s: f64 = next.iter().sum();
        if s <= 0.0 {
            return f64::NEG_INFINITY;
        }
        for x in next.iter_mut() {
            *x /= s;
        }
        log_scale += s.ln();
        std::mem::swap(&mut v, &mut next);
    }
    let end: f64 = (0..m).map(|q| v[q] * machine.final_prob(q)).sum();
    if end <= 0.0 {
        return f64::NEG_INFINITY;
    }
    log_scale + end.ln()
}

/// Scaled forward-backward messages for one (machine, string) pair.
///
/// `forward[l][q] * exp(sum of ln_scales[0..=l])` is the true forward message
/// (probability of emitting the first `l` symbols and sitting in state `q`),
/// and `backward[l][q] * end_mass * exp(sum of ln_scales[l+1..])` the true
/// backward message. The products `forward[l][q] * backward[l][q]` are the
/// scale-free position occupancies `p(q_l = q | x)`.
struct ScaledMessages {
    log_prob: f64,
    forward: Vec<Vec<f64>>,
    backward: Vec<Vec<f64>>,
    ln_scales: Vec<f64>,
    end_mass: f64,
}

fn scaled_messages(machine: &Pfsm, symbols: &[Symbol]) -> Option<ScaledMessages> {
    let m = machine.n_states();
    let len = symbols.len();

    let mut forward = Vec::with_capacity(len + 1);
    let mut ln_scales = Vec::with_capacity(len + 1);
    let mut v = machine.dense_initial().to_vec();
    let s0: f64 = v.iter().sum();
    if s0 <= 0.0 {
        return None;
    }
    for x in v.iter_mut() {
        *x /= s0;
    }
    ln_scales.push(s0.ln());
    forward.push(v.clone());
    for &sym in symbols {
        let mut next = vec![0.0; m];
        for q in 0..m {
            let vq = forward.last().unwrap()[q];
            if vq == 0.0 {
                continue;
            }
            for edge in machine.edges_matching(q, sym) {
                next[edge.to] += vq * edge.prob;
            }
        }
        let s: f64 = next.iter().sum();
        if s <= 0.0 {
            return None;
        }
        for x in next.iter_mut() {
            *x /= s;
        }
        ln_scales.push(s.ln());
        forward.push(next);
    }

    let end_mass: f64 = (0..m)
        .map(|q| forward[len][q] * machine.final_prob(q))
        .sum();
    if end_mass <= 0.0 {
        return None;
    }
    let log_prob = ln_scales.iter().sum::<f64>() + end_mass.ln();

    let mut backward = vec![vec![0.0; m]; len + 1];
    for (q, b) in backward[len].iter_mut().enumerate() {
        *b = machine.final_prob(q) / end_mass;
    }
    for l in (0..len).rev() {
        let scale = ln_scales[l + 1].exp();
        for q in 0..m {
            let mut acc = 0.0;
            for edge in machine.edges_matching(q, symbols[l]) {
                acc += edge.prob * backward[l + 1][edge.to];
            }
            backward[l][q] = acc / scale;
        }
    }

    Some(ScaledMessages {
        log_prob,
        forward,
        backward,
        ln_scales,
        end_mass,
    })
}

/// Exact posterior quantities of the forward-backward pass for one string.
#[derive(Debug, Clone)]
pub struct TransitionPosteriors {
    /// Total string probability `p(x)` under the machine.
    pub string_prob: f64,
    /// Per position `l`, the joint `p(q_l = q, q_{l+1} = q', x)` for every
    /// transition used at that position, keyed by `(q, q')`.
    pub joint: Vec<BTreeMap<(usize, usize), f64>>,
    /// Unscaled forward messages: `forward_msgs[l][q]` is the probability of
    /// emitting the first `l` symbols and being in state `q`.
    pub forward_msgs: Vec<Vec<f64>>,
    /// Unscaled backward messages: `backward_msgs[l][q]` is the probability
    /// of emitting the remaining symbols and stopping, given state `q`.
    pub backward_msgs: Vec<Vec<f64>>,
}

/// Forward-backward transition posteriors of `value` under `machine`.
///
/// For strings outside the support, every table is zero and `string_prob`
/// is 0. For supported strings, `sum_{q,q'} joint[l]` equals `string_prob`
/// at every position.
pub fn transition_posteriors(machine: &Pfsm, value: &str) -> TransitionPosteriors {
    let m = machine.n_states();
    let len = value.chars().count();
    let zeros = || vec![vec![0.0; m]; len + 1];
    let symbols = classify_all(machine, value);
    let msgs = symbols.as_ref().and_then(|s| scaled_messages(machine, s));
    let (symbols, msgs) = match (symbols, msgs) {
        (Some(s), Some(msg)) => (s, msg),
        _ => {
            return TransitionPosteriors {
                string_prob: 0.0,
                joint: vec![BTreeMap::new(); len],
                forward_msgs: zeros(),
                backward_msgs: zeros(),
            }
        }
    };

    let string_prob = msgs.log_prob.exp();

    // Prefix sums of the log scales reconstruct the unscaled messages.
    let mut forward_msgs = zeros();
    let mut backward_msgs = zeros();
    let mut prefix = 0.0;
    let total: f64 = msgs.ln_scales.iter().sum();
    for l in 0..=len {
        prefix += msgs.ln_scales[l];
        let fwd_scale = prefix.exp();
        let bwd_scale = (total - prefix).exp() * msgs.end_mass;
        for q in 0..m {
            forward_msgs[l][q] = msgs.forward[l][q] * fwd_scale;
            backward_msgs[l][q] = msgs.backward[l][q] * bwd_scale;
        }
    }

    // joint_l(q, q') = xi_l(q, q') * p(x) with the scale-free
    // xi_l(q, q') = fwd[l][q] * T(q, x^l, q') * bwd[l+1][q'] / c_{l+1}.
    let mut joint = Vec::with_capacity(len);
    for (l, &sym) in symbols.iter().enumerate() {
        let mut slice = BTreeMap::new();
        let inv_scale = (-msgs.ln_scales[l + 1]).exp();
        for q in 0..m {
            let fq = msgs.forward[l][q];
            if fq == 0.0 {
                continue;
            }
            for edge in machine.edges_matching(q, sym) {
                let xi = fq * edge.prob * msgs.backward[l + 1][edge.to] * inv_scale;
                if xi > 0.0 {
                    *slice.entry((q, edge.to)).or_insert(0.0) += xi * string_prob;
                }
            }
        }
        joint.push(slice);
    }

    TransitionPosteriors {
        string_prob,
        joint,
        forward_msgs,
        backward_msgs,
    }
}

/// Scale-free occupancy statistics used by the training gradients.
///
/// `per_param[i]` is the expected number of times the parameter (initial
/// entry, stop entry, or transition) at canonical-layout index `i` is used on
/// a path, under the posterior over accepting paths for the string.
/// `state_visits[q]` is the expected number of visits to state `q` (the total
/// usage of that state's softmax row); the initial row's total usage is
/// always 1.
///
/// The z-space derivative of `log p(x)` is then
/// `per_param[i] - prob[i] * row_usage(row(i))`.
#[derive(Debug, Clone)]
pub(crate) struct OccupancyStats {
    pub log_prob: f64,
    pub per_param: Vec<f64>,
    pub state_visits: Vec<f64>,
}

/// Occupancies of `value` under `machine`, or `None` when the string is
/// outside the support (all derivatives vanish there).
pub(crate) fn occupancy_stats(machine: &Pfsm, value: &str) -> Option<OccupancyStats> {
    let symbols = classify_all(machine, value)?;
    let msgs = scaled_messages(machine, &symbols)?;
    let m = machine.n_states();
    let len = symbols.len();

    let mut per_param = vec![0.0; machine.param_count()];
    let mut state_visits = vec![0.0; m];
    for (fwd_row, bwd_row) in msgs.forward.iter().zip(&msgs.backward) {
        for (visits, (f, b)) in state_visits.iter_mut().zip(fwd_row.iter().zip(bwd_row)) {
            *visits += f * b;
        }
    }

    // Initial entries occupy the head of the layout in state order.
    for (i, (q, _)) in machine.initial_states().enumerate() {
        per_param[i] = msgs.forward[0][q] * msgs.backward[0][q];
    }

    let inv_scales: Vec<f64> = (0..len).map(|l| (-msgs.ln_scales[l + 1]).exp()).collect();
    let mut cursor = machine.initial_states().count();
    for q in 0..m {
        if machine.has_stop_entry(q) {
            per_param[cursor] = msgs.forward[len][q] * msgs.backward[len][q];
            cursor += 1;
        }
        for edge in machine.edges(q) {
            let mut acc = 0.0;
            for l in 0..len {
                if symbols[l] != edge.symbol {
                    continue;
                }
                acc += msgs.forward[l][q]
                    * edge.prob
                    * msgs.backward[l + 1][edge.to]
                    * inv_scales[l];
            }
            per_param[cursor] = acc;
            cursor += 1;
        }
    }
    debug_assert_eq!(cursor, machine.param_count());

    Some(OccupancyStats {
        log_prob: msgs.log_prob,
        per_param,
        state_visits,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::integer_like;
    use super::super::PfsmBuilder;
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn forward_matches_hand_products_on_the_integer_machine() {
        let m = integer_like();
        // "5": 0.5 (initial) * 0.1 (first digit) * 0.1 (stop).
        assert!(close(forward_log_prob(&m, "5"), (0.005f64).ln(), 1e-12));
        // "12": 0.5 * 0.1 * 0.09 * 0.1.
        assert!(close(
            forward_log_prob(&m, "12"),
            (0.5 * 0.1 * 0.09 * 0.1f64).ln(),
            1e-12
        ));
        assert_eq!(forward_log_prob(&m, "+"), f64::NEG_INFINITY);
        assert_eq!(forward_log_prob(&m, "x1"), f64::NEG_INFINITY);
    }

    #[test]
    fn forward_accepts_the_empty_string_on_a_trivial_machine() {
        let m = PfsmBuilder::new(1).initial(0, 1.0).stop(0, 1.0).build().unwrap();
        assert_eq!(forward_log_prob(&m, ""), 0.0);
    }

    #[test]
    fn forward_survives_very_long_strings() {
        let m = integer_like();
        let s: String = std::iter::repeat_n('7', 10_000).collect();
        let lp = forward_log_prob(&m, &s);
        // 0.5 * 0.1 * 0.09^9999 * 0.1 in log space.
        let expected = 0.5f64.ln() + 0.1f64.ln() + 9_999.0 * 0.09f64.ln() + 0.1f64.ln();
        assert!(lp.is_finite());
        assert!(close(lp, expected, 1e-9));
    }

    #[test]
    fn posteriors_concentrate_on_the_unique_path() {
        let m = integer_like();
        let post = transition_posteriors(&m, "5");
        assert!(close(post.string_prob, 0.005, 1e-12));
        assert_eq!(post.joint.len(), 1);
        let slice = &post.joint[0];
        assert_eq!(slice.len(), 1);
        let only = slice.get(&(1, 2)).copied().unwrap();
        assert!(close(only, post.string_prob, 1e-12));
    }

    #[test]
    fn posterior_marginalization_matches_string_prob() {
        let m = integer_like();
        for value in ["5", "12", "-907", "+0001"] {
            let post = transition_posteriors(&m, value);
            assert!(post.string_prob > 0.0);
            for slice in &post.joint {
                let total: f64 = slice.values().sum();
                assert!(close(total, post.string_prob, 1e-12));
            }
            assert!(close(
                post.string_prob,
                forward_log_prob(&m, value).exp(),
                1e-12
            ));
        }
    }

    #[test]
    fn posteriors_split_mass_across_ambiguous_paths() {
        // Two initial states, both emitting 'a' into a final state with
        // different transition probabilities.
        let m = PfsmBuilder::new(3)
            .initial(0, 0.3)
            .initial(1, 0.7)
            .char_edge(0, 'a', 2, 1.0)
            .char_edge(1, 'a', 2, 0.25)
            .char_edge(1, 'a', 1, 0.75)
            .stop(2, 1.0)
            .build()
            .unwrap();
        let post = transition_posteriors(&m, "a");
        let p_top = post.joint[0].get(&(0, 2)).copied().unwrap();
        let p_bottom = post.joint[0].get(&(1, 2)).copied().unwrap();
        assert!(close(p_top, 0.3, 1e-12));
        assert!(close(p_bottom, 0.7 * 0.25, 1e-12));
        assert!(close(post.string_prob, 0.3 + 0.175, 1e-12));
    }

    #[test]
    fn unsupported_strings_yield_zero_posteriors() {
        let m = integer_like();
        let post = transition_posteriors(&m, "ab");
        assert_eq!(post.string_prob, 0.0);
        assert_eq!(post.joint.len(), 2);
        assert!(post.joint.iter().all(|s| s.is_empty()));
        assert!(post.forward_msgs.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn occupancies_describe_expected_row_usage() {
        let m = integer_like();
        let stats = occupancy_stats(&m, "12").unwrap();
        // Unique path: initial state 1, edges 1->2 ('1') and 2->2 ('2'),
        // stop at 2. Every used option has occupancy 1.
        assert!(close(stats.log_prob, (0.5 * 0.1 * 0.09 * 0.1f64).ln(), 1e-12));
        assert!((stats.per_param[1] - 1.0).abs() < 1e-12); // initial entry of state 1
        assert!((stats.state_visits[1] - 1.0).abs() < 1e-12);
        assert!((stats.state_visits[2] - 2.0).abs() < 1e-12); // visited at l=1 and l=2
        let total_initial: f64 = stats.per_param[0] + stats.per_param[1];
        assert!((total_initial - 1.0).abs() < 1e-12);
    }
}
