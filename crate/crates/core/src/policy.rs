//! Causal policy classes, the Bayes-optimal decoder, and exact expected-cost
//! evaluation.
//!
//! Policies are stored extensionally: tables over reachable realizations,
//! keyed by tuple-encoded histories. With deterministic encoders and
//! feedback, the past messages are a function of the observation history, so
//! a full-history policy is keyed by the observation path alone; the
//! structured classes add the constraint that paths sharing a sufficient
//! statistic share a message.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::filter::{
    xi_condition, xi_init, xi_predict, Belief, BeliefTable, MetaBelief, PathLattice,
};
use crate::model::{CostSpec, FiniteModel};

/// A quantizer action: a total map from canonical belief ids to messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Quantizer {
    #[serde(with = "int_key_map")]
    pub map: BTreeMap<usize, usize>,
}

/// Integer keys as strings so reports survive `serde_json::Value` round
/// trips.
mod int_key_map {
    use super::BTreeMap;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, V: Serialize>(
        map: &BTreeMap<usize, V>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.collect_map(map.iter().map(|(k, v)| (k.to_string(), v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, V: Deserialize<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<usize, V>, D::Error> {
        let raw: BTreeMap<String, V> = Deserialize::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| k.parse::<usize>().map(|k| (k, v)))
            .collect::<std::result::Result<_, _>>()
            .map_err(serde::de::Error::custom)
    }
}

mod int_key_map_seq {
    use super::{BTreeMap, Quantizer};
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        stages: &[BTreeMap<usize, Quantizer>],
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        #[derive(serde::Serialize)]
        struct Stage<'a>(#[serde(with = "super::int_key_map")] &'a BTreeMap<usize, Quantizer>);
        let mut seq = s.serialize_seq(Some(stages.len()))?;
        for stage in stages {
            seq.serialize_element(&Stage(stage))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<BTreeMap<usize, Quantizer>>, D::Error> {
        #[derive(serde::Deserialize)]
        struct Stage(#[serde(with = "super::int_key_map")] BTreeMap<usize, Quantizer>);
        let raw: Vec<Stage> = Deserialize::deserialize(d)?;
        Ok(raw.into_iter().map(|s| s.0).collect())
    }
}

/// Per stage, a table from observation paths `y_{[0,t]}` to messages.
/// Reachable `(y_{[0,t]}, q_{[0,t-1]})` realizations carry exactly one
/// message history per observation path, so this keying is equivalent to the
/// composite-policy domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullHistoryPolicy {
    #[serde(with = "path_key_maps")]
    pub stages: Vec<BTreeMap<Vec<usize>, usize>>,
}

/// Per stage, a table from `(canonical belief id, q_{[0,t-1]})` to messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitsenhausenPolicy {
    pub beliefs: Vec<Belief>,
    #[serde(with = "wits_key_maps")]
    pub stages: Vec<BTreeMap<(usize, Vec<usize>), usize>>,
    pub tol: f64,
}

/// Per stage, a quantizer per reachable canonical meta-belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WvPolicy {
    pub beliefs: Vec<Belief>,
    pub metas: Vec<MetaBelief>,
    #[serde(with = "int_key_map_seq")]
    pub stages: Vec<BTreeMap<usize, Quantizer>>,
    pub tol: f64,
}

/// Per stage, a table from message histories `q_{[0,t]}` to decisions.
/// Entries for unreachable histories default to decision 0 and are never
/// scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderPolicy {
    #[serde(with = "path_key_maps")]
    pub stages: Vec<BTreeMap<Vec<usize>, usize>>,
}

/// Any single-encoder policy class accepted by the evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderPolicy {
    Full(FullHistoryPolicy),
    Witsenhausen(WitsenhausenPolicy),
    Wv(WvPolicy),
}

/// Receiver side of the evaluation: the Bayes decoder built per history, or
/// an explicit table.
#[derive(Debug, Clone)]
pub enum Decoder {
    Bayes,
    Explicit(DecoderPolicy),
}

/// `argmin_v sum_x posterior[x] * c[x][v]`, ties broken by lowest index.
pub fn bayes_decode(posterior: &[f64], cost: &[Vec<f64>]) -> usize {
    let num_decisions = cost[0].len();
    let mut best = (f64::INFINITY, 0usize);
    for v in 0..num_decisions {
        let risk: f64 = posterior
            .iter()
            .zip(cost.iter())
            .map(|(&p, row)| p * row[v])
            .sum();
        if risk < best.0 {
            best = (risk, v);
        }
    }
    best.1
}

/// Minimal expected cost against unnormalized posterior weights; the
/// squared-error branch realizes the conditional-mean decoder in closed
/// form. Returns 0 for an empty group.
pub(crate) fn bayes_risk_weighted(weights: &[f64], cost: &CostSpec) -> f64 {
    let mass: f64 = weights.iter().sum();
    if mass <= 0.0 {
        return 0.0;
    }
    match cost {
        CostSpec::Table(table) => {
            let num_decisions = table[0].len();
            let mut best = f64::INFINITY;
            for v in 0..num_decisions {
                let risk: f64 = weights
                    .iter()
                    .zip(table.iter())
                    .map(|(&w, row)| w * row[v])
                    .sum();
                if risk < best {
                    best = risk;
                }
            }
            best
        }
        CostSpec::SquaredError {
            squared_error_target,
        } => {
            let first: f64 = weights
                .iter()
                .zip(squared_error_target.iter())
                .map(|(&w, &t)| w * t)
                .sum();
            let second: f64 = weights
                .iter()
                .zip(squared_error_target.iter())
                .map(|(&w, &t)| w * t * t)
                .sum();
            second - first * first / mass
        }
    }
}

/// Resolve every lattice node at every stage to a message under `policy`.
/// The result is aligned with `lattice.levels`.
pub(crate) fn policy_assignment(
    model: &FiniteModel,
    lattice: &PathLattice,
    policy: &EncoderPolicy,
) -> Result<Vec<Vec<usize>>> {
    match policy {
        EncoderPolicy::Full(p) => assignment_full(lattice, p),
        EncoderPolicy::Witsenhausen(p) => assignment_witsenhausen(lattice, p),
        EncoderPolicy::Wv(p) => assignment_wv(model, lattice, p),
    }
}

fn assignment_full(lattice: &PathLattice, policy: &FullHistoryPolicy) -> Result<Vec<Vec<usize>>> {
    let mut msgs = Vec::with_capacity(lattice.levels.len());
    let mut paths: Vec<Vec<usize>> = Vec::new();
    for (t, level) in lattice.levels.iter().enumerate() {
        let table = policy.stages.get(t).ok_or(Error::PolicyIncomplete {
            time: t,
            key: vec![],
        })?;
        let mut next_paths = Vec::with_capacity(level.len());
        let mut level_msgs = Vec::with_capacity(level.len());
        for node in level {
            let mut path = if t == 0 {
                Vec::new()
            } else {
                paths[node.parent].clone()
            };
            path.push(node.y);
            let msg = *table.get(&path).ok_or(Error::PolicyIncomplete {
                time: t,
                key: path.clone(),
            })?;
            level_msgs.push(msg);
            next_paths.push(path);
        }
        msgs.push(level_msgs);
        paths = next_paths;
    }
    Ok(msgs)
}

fn assignment_witsenhausen(
    lattice: &PathLattice,
    policy: &WitsenhausenPolicy,
) -> Result<Vec<Vec<usize>>> {
    let mut table = BeliefTable::new(policy.tol);
    for b in &policy.beliefs {
        table.insert(b);
    }
    let mut msgs = Vec::with_capacity(lattice.levels.len());
    let mut qhists: Vec<Vec<usize>> = Vec::new();
    for (t, level) in lattice.levels.iter().enumerate() {
        let stage = policy.stages.get(t).ok_or(Error::PolicyIncomplete {
            time: t,
            key: vec![],
        })?;
        let mut next_qhists = Vec::with_capacity(level.len());
        let mut level_msgs = Vec::with_capacity(level.len());
        for node in level {
            let belief =
                Belief::from_unnormalized(&node.weights).expect("lattice nodes have positive mass");
            let belief_id = table.insert(&belief);
            let qhist = if t == 0 {
                Vec::new()
            } else {
                qhists[node.parent].clone()
            };
            let msg = *stage.get(&(belief_id, qhist.clone())).ok_or_else(|| {
                let mut key = vec![belief_id];
                key.extend_from_slice(&qhist);
                Error::PolicyIncomplete { time: t, key }
            })?;
            level_msgs.push(msg);
            let mut next = qhist;
            next.push(msg);
            next_qhists.push(next);
        }
        msgs.push(level_msgs);
        qhists = next_qhists;
    }
    Ok(msgs)
}

fn assignment_wv(
    model: &FiniteModel,
    lattice: &PathLattice,
    policy: &WvPolicy,
) -> Result<Vec<Vec<usize>>> {
    let mut table = BeliefTable::new(policy.tol);
    for b in &policy.beliefs {
        table.insert(b);
    }
    let mut meta_index: HashMap<Vec<(usize, i64)>, usize> = HashMap::new();
    for (i, m) in policy.metas.iter().enumerate() {
        meta_index.insert(m.canonical_key(), i);
    }
    let lookup_meta = |xi: &MetaBelief, t: usize| -> Result<usize> {
        meta_index
            .get(&xi.canonical_key())
            .copied()
            .ok_or(Error::PolicyIncomplete {
                time: t,
                key: vec![],
            })
    };

    // Meta-beliefs evolve per message history; node messages come from the
    // quantizer attached to the branch's meta-belief.
    let mut msgs = Vec::with_capacity(lattice.levels.len());
    let xi0 = xi_init(model, &mut table)?;
    // Branch state per node: index into `branch_xis` of its q-history.
    let mut branch_xis: Vec<MetaBelief> = vec![xi0];
    let mut node_branch: Vec<usize> = Vec::new();
    for (t, level) in lattice.levels.iter().enumerate() {
        let stage = policy.stages.get(t).ok_or(Error::PolicyIncomplete {
            time: t,
            key: vec![],
        })?;
        let mut level_msgs = Vec::with_capacity(level.len());
        let mut next_branch_of: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut next_branch_xis: Vec<MetaBelief> = Vec::new();
        let mut next_node_branch = Vec::with_capacity(level.len());
        for node in level {
            let branch = if t == 0 { 0 } else { node_branch[node.parent] };
            let xi = &branch_xis[branch];
            let meta_id = lookup_meta(xi, t)?;
            let quantizer = stage.get(&meta_id).ok_or(Error::PolicyIncomplete {
                time: t,
                key: vec![meta_id],
            })?;
            let belief =
                Belief::from_unnormalized(&node.weights).expect("lattice nodes have positive mass");
            let belief_id = table.insert(&belief);
            let msg = *quantizer
                .map
                .get(&belief_id)
                .ok_or(Error::QuantizerIncomplete { belief_id })?;
            level_msgs.push(msg);
            let next_branch = match next_branch_of.get(&(branch, msg)) {
                Some(&b) => b,
                None => {
                    let conditioned = xi_condition(xi, &quantizer.map, msg)?;
                    let advanced = xi_predict(model, &conditioned, &mut table);
                    next_branch_xis.push(advanced);
                    let b = next_branch_xis.len() - 1;
                    next_branch_of.insert((branch, msg), b);
                    b
                }
            };
            next_node_branch.push(next_branch);
        }
        msgs.push(level_msgs);
        branch_xis = next_branch_xis;
        node_branch = next_node_branch;
    }
    Ok(msgs)
}

/// Exact expected total cost of a per-node message assignment under the
/// Bayes decoder, via unnormalized posterior groups per message history.
pub(crate) fn assignment_cost_bayes(
    model: &FiniteModel,
    lattice: &PathLattice,
    msgs: &[Vec<usize>],
) -> f64 {
    let n = model.num_states;
    let mut total = 0.0;
    let mut qids: Vec<u64> = Vec::new();
    for (t, level) in lattice.levels.iter().enumerate() {
        let m_t = model.messages(0, t) as u64;
        let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        let mut next_qids = Vec::with_capacity(level.len());
        for (i, node) in level.iter().enumerate() {
            let parent_qid = if t == 0 { 0 } else { qids[node.parent] };
            let qid = parent_qid * m_t + msgs[t][i] as u64;
            next_qids.push(qid);
            let acc = groups.entry(qid).or_insert_with(|| vec![0.0; n]);
            for (x, &w) in node.weights.iter().enumerate() {
                acc[x] += w;
            }
        }
        for weights in groups.values() {
            total += bayes_risk_weighted(weights, &model.cost);
        }
        qids = next_qids;
    }
    total
}

fn assignment_cost_explicit(
    model: &FiniteModel,
    lattice: &PathLattice,
    msgs: &[Vec<usize>],
    decoder: &DecoderPolicy,
) -> Result<f64> {
    let table = match &model.cost {
        CostSpec::Table(t) => t,
        CostSpec::SquaredError { .. } => {
            return Err(Error::Unsupported(
                "explicit decoder tables require a finite decision set; \
                 squared-error costs use the conditional-mean Bayes decoder"
                    .into(),
            ))
        }
    };
    let mut total = 0.0;
    let mut qhists: Vec<Vec<usize>> = Vec::new();
    for (t, level) in lattice.levels.iter().enumerate() {
        let stage = decoder.stages.get(t).ok_or(Error::PolicyIncomplete {
            time: t,
            key: vec![],
        })?;
        let mut next_qhists = Vec::with_capacity(level.len());
        for (i, node) in level.iter().enumerate() {
            let mut qhist = if t == 0 {
                Vec::new()
            } else {
                qhists[node.parent].clone()
            };
            qhist.push(msgs[t][i]);
            let v = *stage.get(&qhist).ok_or(Error::PolicyIncomplete {
                time: t,
                key: qhist.clone(),
            })?;
            if v >= model.num_decisions {
                return Err(Error::Dimension(format!(
                    "decoder decision {v} out of range at time {t}"
                )));
            }
            total += node
                .weights
                .iter()
                .zip(table.iter())
                .map(|(&w, row)| w * row[v])
                .sum::<f64>();
            next_qhists.push(qhist);
        }
        qhists = next_qhists;
    }
    Ok(total)
}

fn check_single_encoder_dims(model: &FiniteModel) -> Result<()> {
    if !model.is_single_encoder() {
        return Err(Error::Unsupported(
            "single-encoder evaluation requires one observation channel; \
             use the multiterminal module for team policies"
                .into(),
        ));
    }
    Ok(())
}

/// Exact expected total cost of any single-encoder policy, enumerating all
/// positive-probability atoms. With `Decoder::Bayes`, the receiver is
/// rebuilt per reachable message history and is optimal for the fixed
/// encoder.
pub fn evaluate_policy(
    model: &FiniteModel,
    policy: &EncoderPolicy,
    decoder: &Decoder,
) -> Result<f64> {
    check_single_encoder_dims(model)?;
    check_policy_dims(model, policy)?;
    let lattice = PathLattice::build(model, model.horizon);
    let msgs = policy_assignment(model, &lattice, policy)?;
    for (t, level) in msgs.iter().enumerate() {
        let m_t = model.messages(0, t);
        if let Some(&bad) = level.iter().find(|&&m| m >= m_t) {
            return Err(Error::Dimension(format!(
                "message {bad} out of range at time {t} (|M_t| = {m_t})"
            )));
        }
    }
    match decoder {
        Decoder::Bayes => Ok(assignment_cost_bayes(model, &lattice, &msgs)),
        Decoder::Explicit(d) => assignment_cost_explicit(model, &lattice, &msgs, d),
    }
}

fn check_policy_dims(model: &FiniteModel, policy: &EncoderPolicy) -> Result<()> {
    let stages = match policy {
        EncoderPolicy::Full(p) => p.stages.len(),
        EncoderPolicy::Witsenhausen(p) => p.stages.len(),
        EncoderPolicy::Wv(p) => p.stages.len(),
    };
    if stages != model.horizon {
        return Err(Error::Dimension(format!(
            "policy has {} stages, model horizon is {}",
            stages, model.horizon
        )));
    }
    Ok(())
}

/// Exact `P(x_t | q_{[0,t]})` for `t = q_hist.len() - 1`, by summing the
/// joint over all consistent observation paths.
pub fn posterior_given_q(
    model: &FiniteModel,
    policy: &EncoderPolicy,
    q_hist: &[usize],
) -> Result<Vec<f64>> {
    check_single_encoder_dims(model)?;
    if q_hist.is_empty() || q_hist.len() > model.horizon {
        return Err(Error::Dimension(format!(
            "history length {} out of range 1..={}",
            q_hist.len(),
            model.horizon
        )));
    }
    let t = q_hist.len() - 1;
    let lattice = PathLattice::build(model, model.horizon);
    let msgs = policy_assignment(model, &lattice, policy)?;
    let mut consistent: Vec<bool> = Vec::new();
    let mut weights = vec![0.0; model.num_states];
    for s in 0..=t {
        let level = &lattice.levels[s];
        let mut next = Vec::with_capacity(level.len());
        for (i, node) in level.iter().enumerate() {
            let parent_ok = s == 0 || consistent[node.parent];
            let ok = parent_ok && msgs[s][i] == q_hist[s];
            next.push(ok);
            if ok && s == t {
                for (x, &w) in node.weights.iter().enumerate() {
                    weights[x] += w;
                }
            }
        }
        consistent = next;
    }
    let mass: f64 = weights.iter().sum();
    if mass <= 0.0 {
        return Err(Error::ImpossibleHistory {
            history: q_hist.to_vec(),
        });
    }
    Ok(weights.iter().map(|w| w / mass).collect())
}

/// Compose the belief recursion with a structured policy's tables to produce
/// the equivalent full-history policy. Costs agree within 1e-12.
pub fn lift_policy(model: &FiniteModel, policy: &EncoderPolicy) -> Result<FullHistoryPolicy> {
    check_single_encoder_dims(model)?;
    check_policy_dims(model, policy)?;
    let lattice = PathLattice::build(model, model.horizon);
    let msgs = policy_assignment(model, &lattice, policy)?;
    let mut stages = Vec::with_capacity(lattice.levels.len());
    let mut paths: Vec<Vec<usize>> = Vec::new();
    for (t, level) in lattice.levels.iter().enumerate() {
        let mut stage = BTreeMap::new();
        let mut next_paths = Vec::with_capacity(level.len());
        for (i, node) in level.iter().enumerate() {
            let mut path = if t == 0 {
                Vec::new()
            } else {
                paths[node.parent].clone()
            };
            path.push(node.y);
            stage.insert(path.clone(), msgs[t][i]);
            next_paths.push(path);
        }
        stages.push(stage);
        paths = next_paths;
    }
    Ok(FullHistoryPolicy { stages })
}

/// Materialize the Bayes decoder for a fixed encoder as an explicit table
/// over reachable message histories (used for report emission and replay).
pub fn materialize_bayes_decoder(
    model: &FiniteModel,
    policy: &EncoderPolicy,
) -> Result<DecoderPolicy> {
    check_single_encoder_dims(model)?;
    let table =
        match &model.cost {
            CostSpec::Table(t) => t.clone(),
            CostSpec::SquaredError { .. } => return Err(Error::Unsupported(
                "squared-error costs use the conditional-mean decoder, which has no finite table"
                    .into(),
            )),
        };
    let lattice = PathLattice::build(model, model.horizon);
    let msgs = policy_assignment(model, &lattice, policy)?;
    let n = model.num_states;
    let mut stages = Vec::with_capacity(lattice.levels.len());
    let mut qhists: Vec<Vec<usize>> = Vec::new();
    for (t, level) in lattice.levels.iter().enumerate() {
        let mut groups: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
        let mut next_qhists = Vec::with_capacity(level.len());
        for (i, node) in level.iter().enumerate() {
            let mut qhist = if t == 0 {
                Vec::new()
            } else {
                qhists[node.parent].clone()
            };
            qhist.push(msgs[t][i]);
            let acc = groups.entry(qhist.clone()).or_insert_with(|| vec![0.0; n]);
            for (x, &w) in node.weights.iter().enumerate() {
                acc[x] += w;
            }
            next_qhists.push(qhist);
        }
        let stage: BTreeMap<Vec<usize>, usize> = groups
            .into_iter()
            .map(|(qhist, weights)| (qhist, bayes_decode(&weights, &table)))
            .collect();
        stages.push(stage);
        qhists = next_qhists;
    }
    Ok(DecoderPolicy { stages })
}

// ---------------------------------------------------------------------------
// Tuple-encoded history keys for JSON serialization
// ---------------------------------------------------------------------------

pub(crate) fn encode_path(path: &[usize]) -> String {
    path.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn decode_path(s: &str) -> std::result::Result<Vec<usize>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.parse::<usize>()
                .map_err(|e| format!("bad history key `{s}`: {e}"))
        })
        .collect()
}

mod path_key_maps {
    use super::*;
    use serde::ser::SerializeSeq;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        stages: &[BTreeMap<Vec<usize>, usize>],
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(stages.len()))?;
        for stage in stages {
            let encoded: BTreeMap<String, usize> =
                stage.iter().map(|(k, &v)| (encode_path(k), v)).collect();
            seq.serialize_element(&encoded)?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<BTreeMap<Vec<usize>, usize>>, D::Error> {
        let raw: Vec<BTreeMap<String, usize>> = serde::Deserialize::deserialize(d)?;
        raw.into_iter()
            .map(|stage| {
                stage
                    .into_iter()
                    .map(|(k, v)| decode_path(&k).map(|p| (p, v)))
                    .collect::<std::result::Result<BTreeMap<_, _>, _>>()
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)
    }
}

mod wits_key_maps {
    use super::*;
    use serde::ser::SerializeSeq;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        stages: &[BTreeMap<(usize, Vec<usize>), usize>],
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(stages.len()))?;
        for stage in stages {
            let encoded: BTreeMap<String, usize> = stage
                .iter()
                .map(|((id, q), &v)| (format!("{id}|{}", encode_path(q)), v))
                .collect();
            seq.serialize_element(&encoded)?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<BTreeMap<(usize, Vec<usize>), usize>>, D::Error> {
        let raw: Vec<BTreeMap<String, usize>> = serde::Deserialize::deserialize(d)?;
        raw.into_iter()
            .map(|stage| {
                stage
                    .into_iter()
                    .map(|(k, v)| {
                        let (id, q) = k
                            .split_once('|')
                            .ok_or_else(|| format!("bad key `{k}`: missing `|`"))?;
                        let id = id
                            .parse::<usize>()
                            .map_err(|e| format!("bad key `{k}`: {e}"))?;
                        Ok(((id, decode_path(q)?), v))
                    })
                    .collect::<std::result::Result<BTreeMap<_, _>, String>>()
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostSpec;

    fn noiseless_model(horizon: usize) -> FiniteModel {
        FiniteModel {
            num_states: 2,
            transition: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            initial: vec![0.5, 0.5],
            obs_channels: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            joint_obs: None,
            cost: CostSpec::Table(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
            num_decisions: 2,
            rate_schedule: vec![vec![2; horizon]],
            horizon,
        }
    }

    fn iid_uniform_rate1(horizon: usize) -> FiniteModel {
        FiniteModel {
            num_states: 2,
            transition: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            initial: vec![0.5, 0.5],
            obs_channels: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            joint_obs: None,
            cost: CostSpec::Table(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
            num_decisions: 2,
            rate_schedule: vec![vec![1; horizon]],
            horizon,
        }
    }

    fn identity_full_policy(model: &FiniteModel) -> FullHistoryPolicy {
        let lattice = PathLattice::build(model, model.horizon);
        let mut stages = Vec::new();
        let mut paths: Vec<Vec<usize>> = Vec::new();
        for (t, level) in lattice.levels.iter().enumerate() {
            let mut stage = BTreeMap::new();
            let mut next = Vec::new();
            for node in level {
                let mut path = if t == 0 {
                    vec![]
                } else {
                    paths[node.parent].clone()
                };
                path.push(node.y);
                stage.insert(path.clone(), node.y % model.messages(0, t));
                next.push(path);
            }
            stages.push(stage);
            paths = next;
        }
        FullHistoryPolicy { stages }
    }

    #[test]
    fn bayes_decode_mode_tie_and_squared() {
        let zero_one = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(bayes_decode(&[0.7, 0.3], &zero_one), 0);
        assert_eq!(bayes_decode(&[0.5, 0.5], &zero_one), 0);
        let squared = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(bayes_decode(&[0.2, 0.8], &squared), 1);
    }

    #[test]
    fn identity_policy_zero_cost_on_noiseless_model() {
        let m = noiseless_model(3);
        let p = EncoderPolicy::Full(identity_full_policy(&m));
        let cost = evaluate_policy(&m, &p, &Decoder::Bayes).unwrap();
        assert!(cost.abs() < 1e-15);
    }

    #[test]
    fn materialized_bayes_decoder_reproduces_bayes_cost() {
        let mut m = noiseless_model(2);
        m.transition = vec![vec![0.7, 0.3], vec![0.4, 0.6]];
        m.obs_channels = vec![vec![vec![0.8, 0.2], vec![0.3, 0.7]]];
        let p = EncoderPolicy::Full(identity_full_policy(&m));
        let bayes = evaluate_policy(&m, &p, &Decoder::Bayes).unwrap();
        let table = materialize_bayes_decoder(&m, &p).unwrap();
        let explicit = evaluate_policy(&m, &p, &Decoder::Explicit(table)).unwrap();
        assert!((bayes - explicit).abs() < 1e-15);
    }

    #[test]
    fn rate_one_uniform_iid_costs_half_per_stage() {
        let m = iid_uniform_rate1(1);
        let p = EncoderPolicy::Full(FullHistoryPolicy {
            stages: vec![BTreeMap::from([(vec![0], 0), (vec![1], 0)])],
        });
        let cost = evaluate_policy(&m, &p, &Decoder::Bayes).unwrap();
        assert!((cost - 0.5).abs() < 1e-15);
    }

    #[test]
    fn posterior_noiseless_identity_is_point_mass() {
        let m = noiseless_model(2);
        let p = EncoderPolicy::Full(identity_full_policy(&m));
        let post = posterior_given_q(&m, &p, &[1]).unwrap();
        assert_eq!(post, vec![0.0, 1.0]);
    }

    #[test]
    fn posterior_rate_one_equals_marginal() {
        let mut m = iid_uniform_rate1(2);
        m.initial = vec![0.3, 0.7];
        let p = EncoderPolicy::Full(FullHistoryPolicy {
            stages: vec![
                BTreeMap::from([(vec![0], 0), (vec![1], 0)]),
                BTreeMap::from([
                    (vec![0, 0], 0),
                    (vec![0, 1], 0),
                    (vec![1, 0], 0),
                    (vec![1, 1], 0),
                ]),
            ],
        });
        let post = posterior_given_q(&m, &p, &[0]).unwrap();
        assert!((post[0] - 0.3).abs() < 1e-12);
        // Second stage marginal is uniform under the uniformizing kernel.
        let post = posterior_given_q(&m, &p, &[0, 0]).unwrap();
        assert!((post[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn posterior_impossible_history_errors() {
        let m = iid_uniform_rate1(1);
        let p = EncoderPolicy::Full(FullHistoryPolicy {
            stages: vec![BTreeMap::from([(vec![0], 0), (vec![1], 0)])],
        });
        assert!(matches!(
            posterior_given_q(&m, &p, &[1]),
            Err(Error::ImpossibleHistory { .. })
        ));
    }

    #[test]
    fn lift_constant_policy_is_constant() {
        let m = noiseless_model(2);
        let mut table = BeliefTable::new(1e-12);
        let b0 = table.insert(&Belief::point_mass(2, 0));
        let b1 = table.insert(&Belief::point_mass(2, 1));
        let stages = vec![
            BTreeMap::from([((b0, vec![]), 1), ((b1, vec![]), 1)]),
            BTreeMap::from([((b0, vec![1]), 0), ((b1, vec![1]), 0)]),
        ];
        let p = EncoderPolicy::Witsenhausen(WitsenhausenPolicy {
            beliefs: table.beliefs().to_vec(),
            stages,
            tol: 1e-12,
        });
        let lifted = lift_policy(&m, &p).unwrap();
        for stage in &lifted.stages {
            let msgs: Vec<usize> = stage.values().copied().collect();
            assert!(msgs.windows(2).all(|w| w[0] == w[1]));
        }
        let c1 = evaluate_policy(&m, &p, &Decoder::Bayes).unwrap();
        let c2 = evaluate_policy(&m, &EncoderPolicy::Full(lifted), &Decoder::Bayes).unwrap();
        assert!((c1 - c2).abs() < 1e-12);
    }

    #[test]
    fn policy_json_round_trip() {
        let m = noiseless_model(2);
        let p = EncoderPolicy::Full(identity_full_policy(&m));
        let text = serde_json::to_string(&p).unwrap();
        let back: EncoderPolicy = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn explicit_decoder_never_beats_bayes() {
        let m = noiseless_model(2);
        let p = EncoderPolicy::Full(identity_full_policy(&m));
        let bayes = evaluate_policy(&m, &p, &Decoder::Bayes).unwrap();
        // A deliberately bad decoder: always decide 0.
        let mut stages = Vec::new();
        for t in 0..2 {
            let mut stage = BTreeMap::new();
            for qhist in all_histories(2, t + 1) {
                stage.insert(qhist, 0);
            }
            stages.push(stage);
        }
        let explicit =
            evaluate_policy(&m, &p, &Decoder::Explicit(DecoderPolicy { stages })).unwrap();
        assert!(bayes <= explicit + 1e-15);
    }

    fn all_histories(base: usize, len: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..len {
            let mut next = Vec::new();
            for h in &out {
                for d in 0..base {
                    let mut h2 = h.clone();
                    h2.push(d);
                    next.push(h2);
                }
            }
            out = next;
        }
        out
    }
}
