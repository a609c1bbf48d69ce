//! Two-encoder team policies, exhaustive team enumeration, and the
//! decentralized signaling counterexample.
//!
//! Three information patterns are implemented:
//!
//! * `Memoryless`: each encoder maps only its current observation to a
//!   message (the non-stationary memoryless team class).
//! * `Separated`: each encoder maps its own-observation belief on the state
//!   together with both encoders' past messages.
//! * `Full`: one-step delayed observation sharing; each encoder sees its
//!   current observation plus both encoders' past observations. Since past
//!   messages are a function of shared past observations under deterministic
//!   policies, this pattern upper-bounds every causal team class, so
//!   agreement with `Memoryless` on i.i.d. sources certifies memoryless
//!   optimality on the instance.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::filter::{Belief, BeliefTable, PathLattice};
use crate::model::{CostSpec, FiniteModel};
use crate::oracle::{SearchOptions, SearchReport};
use crate::policy::bayes_risk_weighted;

/// A two-encoder finite model carrying a joint observation kernel and one
/// rate schedule per encoder.
pub type DecentralizedInstance = FiniteModel;

/// Information pattern of a team policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeamClass {
    Memoryless,
    Separated,
    Full,
}

impl TeamClass {
    pub fn name(&self) -> &'static str {
        match self {
            TeamClass::Memoryless => "memoryless",
            TeamClass::Separated => "separated",
            TeamClass::Full => "full",
        }
    }
}

/// Extensional team policy: per encoder, per stage, a table from that
/// encoder's information realization (tuple-encoded per class) to a message.
///
/// Key encodings:
/// * memoryless: `[y_t]`
/// * separated: `[belief_id, q1_0, q2_0, ..., q1_{t-1}, q2_{t-1}]`
/// * full: `[y_t, y1_0, y2_0, ..., y1_{t-1}, y2_{t-1}]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamPolicy {
    pub class: TeamClass,
    /// `tables[i][t]` is encoder `i`'s table at stage `t`.
    #[serde(with = "team_key_maps")]
    pub tables: Vec<Vec<BTreeMap<Vec<usize>, usize>>>,
    /// Canonical per-encoder belief tables (separated class only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beliefs: Option<Vec<Vec<Belief>>>,
    pub tol: f64,
}

mod team_key_maps {
    use super::BTreeMap;
    use crate::policy::{decode_path, encode_path};
    use serde::ser::SerializeSeq;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        tables: &[Vec<BTreeMap<Vec<usize>, usize>>],
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(tables.len()))?;
        for encoder in tables {
            let encoded: Vec<BTreeMap<String, usize>> = encoder
                .iter()
                .map(|stage| stage.iter().map(|(k, &v)| (encode_path(k), v)).collect())
                .collect();
            seq.serialize_element(&encoded)?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<Vec<BTreeMap<Vec<usize>, usize>>>, D::Error> {
        let raw: Vec<Vec<BTreeMap<String, usize>>> = serde::Deserialize::deserialize(d)?;
        raw.into_iter()
            .map(|encoder| {
                encoder
                    .into_iter()
                    .map(|stage| {
                        stage
                            .into_iter()
                            .map(|(k, v)| decode_path(&k).map(|p| (p, v)))
                            .collect::<std::result::Result<BTreeMap<_, _>, _>>()
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)
    }
}

fn require_two_encoders(model: &FiniteModel) -> Result<()> {
    if model.num_encoders() != 2 {
        return Err(Error::Unsupported(
            "team operations take two-encoder models".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Joint observation lattice
// ---------------------------------------------------------------------------

struct TeamNode {
    parent: usize,
    y: (usize, usize),
    /// `P(joint observation path, x_t = x)`.
    weights: Vec<f64>,
    /// This node's prefix in each encoder's own observation lattice.
    enc_node: [usize; 2],
}

struct TeamLattice {
    levels: Vec<Vec<TeamNode>>,
    /// Canonical own-belief id per encoder per own lattice node.
    enc_belief_ids: [Vec<Vec<usize>>; 2],
    enc_tables: [BeliefTable; 2],
}

fn build_team_lattice(model: &FiniteModel, tol: f64) -> TeamLattice {
    let n = model.num_states;
    let (ny1, ny2) = (model.num_obs(0), model.num_obs(1));
    let horizon = model.horizon;

    // Per-encoder marginal lattices and child lookup per (parent, y).
    let enc_lat = [
        PathLattice::build_for(model, 0, horizon),
        PathLattice::build_for(model, 1, horizon),
    ];
    let child: Vec<Vec<BTreeMap<(usize, usize), usize>>> = enc_lat
        .iter()
        .map(|lat| {
            lat.levels
                .iter()
                .map(|level| {
                    level
                        .iter()
                        .enumerate()
                        .map(|(i, node)| ((node.parent, node.y), i))
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut enc_tables = [BeliefTable::new(tol), BeliefTable::new(tol)];
    let enc_belief_ids: Vec<Vec<Vec<usize>>> = (0..2)
        .map(|i| {
            enc_lat[i]
                .levels
                .iter()
                .map(|level| {
                    level
                        .iter()
                        .map(|node| {
                            enc_tables[i].insert(
                                &Belief::from_unnormalized(&node.weights)
                                    .expect("positive-probability prefix"),
                            )
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut levels: Vec<Vec<TeamNode>> = Vec::with_capacity(horizon);
    let mut first = Vec::new();
    for y1 in 0..ny1 {
        for y2 in 0..ny2 {
            let weights: Vec<f64> = (0..n)
                .map(|x| model.initial[x] * model.joint_obs_prob(x, y1, y2))
                .collect();
            if weights.iter().sum::<f64>() > 0.0 {
                first.push(TeamNode {
                    parent: usize::MAX,
                    y: (y1, y2),
                    weights,
                    enc_node: [
                        child[0][0][&(usize::MAX, y1)],
                        child[1][0][&(usize::MAX, y2)],
                    ],
                });
            }
        }
    }
    levels.push(first);
    for t in 1..horizon {
        let prev = levels.last().unwrap();
        let mut next = Vec::new();
        for (pi, parent) in prev.iter().enumerate() {
            let mut predicted = vec![0.0; n];
            for (x, &w) in parent.weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for xn in 0..n {
                    predicted[xn] += model.transition[x][xn] * w;
                }
            }
            for y1 in 0..ny1 {
                for y2 in 0..ny2 {
                    let weights: Vec<f64> = (0..n)
                        .map(|x| predicted[x] * model.joint_obs_prob(x, y1, y2))
                        .collect();
                    if weights.iter().sum::<f64>() > 0.0 {
                        next.push(TeamNode {
                            parent: pi,
                            y: (y1, y2),
                            weights,
                            enc_node: [
                                child[0][t][&(parent.enc_node[0], y1)],
                                child[1][t][&(parent.enc_node[1], y2)],
                            ],
                        });
                    }
                }
            }
        }
        levels.push(next);
    }
    let mut ids = enc_belief_ids.into_iter();
    let first_ids = ids.next().unwrap();
    let second_ids = ids.next().unwrap();
    TeamLattice {
        levels,
        enc_belief_ids: [first_ids, second_ids],
        enc_tables,
    }
}

impl TeamLattice {
    /// Flattened joint observation history `[y1_0, y2_0, ..., y1_t, y2_t]`.
    fn joint_path(&self, level: usize, node: usize) -> Vec<usize> {
        let mut pairs = Vec::with_capacity(level + 1);
        let mut t = level;
        let mut idx = node;
        loop {
            let n = &self.levels[t][idx];
            pairs.push(n.y);
            if t == 0 {
                break;
            }
            idx = n.parent;
            t -= 1;
        }
        pairs.reverse();
        pairs.into_iter().flat_map(|(a, b)| [a, b]).collect()
    }
}

fn unpack_joint_qhist(model: &FiniteModel, t: usize, mut qid: u64) -> Vec<usize> {
    let mut pairs = vec![(0usize, 0usize); t];
    for s in (0..t).rev() {
        let m1 = model.messages(0, s) as u64;
        let m2 = model.messages(1, s) as u64;
        let pair = qid % (m1 * m2);
        pairs[s] = ((pair / m2) as usize, (pair % m2) as usize);
        qid /= m1 * m2;
    }
    pairs.into_iter().flat_map(|(a, b)| [a, b]).collect()
}

fn stage_cost_grouped(model: &FiniteModel, level: &[TeamNode], qids: &[u64]) -> f64 {
    let mut groups: Vec<(u64, Vec<f64>)> = Vec::with_capacity(level.len());
    for (node, &qid) in level.iter().zip(qids) {
        match groups.iter_mut().find(|(g, _)| *g == qid) {
            Some((_, acc)) => {
                for (x, &w) in node.weights.iter().enumerate() {
                    acc[x] += w;
                }
            }
            None => groups.push((qid, node.weights.clone())),
        }
    }
    groups
        .iter()
        .map(|(_, weights)| bayes_risk_weighted(weights, &model.cost))
        .sum()
}

/// Information key of encoder `i` at stage `t` for a given node, under the
/// class's admissible variables. `parent_qid` packs the joint message
/// history.
fn team_key(
    class: TeamClass,
    model: &FiniteModel,
    lattice: &TeamLattice,
    t: usize,
    node: &TeamNode,
    encoder: usize,
    parent_qid: u64,
) -> Vec<usize> {
    let y_own = if encoder == 0 { node.y.0 } else { node.y.1 };
    match class {
        TeamClass::Memoryless => vec![y_own],
        TeamClass::Separated => {
            let belief_id = lattice.enc_belief_ids[encoder][t][node.enc_node[encoder]];
            let mut key = vec![belief_id];
            key.extend(unpack_joint_qhist(model, t, parent_qid));
            key
        }
        TeamClass::Full => {
            let mut key = vec![y_own];
            if t > 0 {
                key.extend(lattice.joint_path(t - 1, node.parent));
            }
            key
        }
    }
}

struct TeamSearch<'a> {
    model: &'a FiniteModel,
    lattice: &'a TeamLattice,
    class: TeamClass,
    count: u64,
    budget: u64,
    best_cost: f64,
    best: Option<Vec<[Vec<(Vec<usize>, usize)>; 2]>>,
    current: Vec<[Vec<(Vec<usize>, usize)>; 2]>,
}

impl TeamSearch<'_> {
    fn dfs(&mut self, t: usize, acc: f64, parent_qids: &[u64]) -> Result<()> {
        if t == self.model.horizon {
            self.count += 1;
            if self.count > self.budget {
                return Err(Error::BudgetExceeded {
                    required: self.count as f64,
                    budget: self.budget,
                });
            }
            if acc < self.best_cost {
                self.best_cost = acc;
                self.best = Some(self.current.clone());
            }
            return Ok(());
        }
        let level = &self.lattice.levels[t];
        let m1 = self.model.messages(0, t);
        let m2 = self.model.messages(1, t);

        // Per-encoder slot domains, sorted for lexicographic enumeration.
        let mut domains: [std::collections::BTreeSet<Vec<usize>>; 2] = Default::default();
        let mut node_keys: Vec<[Vec<usize>; 2]> = Vec::with_capacity(level.len());
        for node in level {
            let pq = if t == 0 { 0 } else { parent_qids[node.parent] };
            let keys = [
                team_key(self.class, self.model, self.lattice, t, node, 0, pq),
                team_key(self.class, self.model, self.lattice, t, node, 1, pq),
            ];
            for e in 0..2 {
                domains[e].insert(keys[e].clone());
            }
            node_keys.push(keys);
        }
        let ordered: [Vec<Vec<usize>>; 2] = [
            domains[0].iter().cloned().collect(),
            domains[1].iter().cloned().collect(),
        ];
        let slot_of = |e: usize, key: &Vec<usize>| -> usize {
            ordered[e].binary_search(key).expect("key in domain")
        };
        let n1 = ordered[0].len();
        let n2 = ordered[1].len();
        let mut bases = vec![m1; n1];
        bases.extend(vec![m2; n2]);
        let mut digits = vec![0usize; n1 + n2];
        loop {
            let qids: Vec<u64> = level
                .iter()
                .enumerate()
                .map(|(i, node)| {
                    let pq = if t == 0 { 0 } else { parent_qids[node.parent] };
                    let q1 = digits[slot_of(0, &node_keys[i][0])] as u64;
                    let q2 = digits[n1 + slot_of(1, &node_keys[i][1])] as u64;
                    pq * (m1 as u64 * m2 as u64) + q1 * m2 as u64 + q2
                })
                .collect();
            let stage = stage_cost_grouped(self.model, level, &qids);
            self.current[t] = [
                ordered[0]
                    .iter()
                    .enumerate()
                    .map(|(s, k)| (k.clone(), digits[s]))
                    .collect(),
                ordered[1]
                    .iter()
                    .enumerate()
                    .map(|(s, k)| (k.clone(), digits[n1 + s]))
                    .collect(),
            ];
            self.dfs(t + 1, acc + stage, &qids)?;
            if !next_assignment(&mut digits, &bases) {
                break;
            }
        }
        Ok(())
    }
}

fn next_assignment(digits: &mut [usize], bases: &[usize]) -> bool {
    for i in (0..digits.len()).rev() {
        digits[i] += 1;
        if digits[i] < bases[i] {
            return true;
        }
        digits[i] = 0;
    }
    false
}

/// Upper bound on the number of complete policies in a class: the product
/// over encoders and stages of `|M|` raised to the stage's domain size.
/// Exact for the memoryless and full patterns (their domains do not depend
/// on earlier choices); for the separated pattern the q-history count caps
/// the reachable pairs.
fn class_policy_bound(model: &FiniteModel, lattice: &TeamLattice, class: TeamClass) -> f64 {
    let mut total = 1.0f64;
    let mut qhist_count = 1.0f64;
    for (t, level) in lattice.levels.iter().enumerate() {
        for e in 0..2 {
            let domain = match class {
                TeamClass::Memoryless => {
                    let ys: std::collections::BTreeSet<usize> = level
                        .iter()
                        .map(|n| if e == 0 { n.y.0 } else { n.y.1 })
                        .collect();
                    ys.len() as f64
                }
                TeamClass::Full => {
                    let keys: std::collections::BTreeSet<(usize, usize)> = level
                        .iter()
                        .map(|n| (n.parent, if e == 0 { n.y.0 } else { n.y.1 }))
                        .collect();
                    keys.len() as f64
                }
                TeamClass::Separated => {
                    let ids: std::collections::BTreeSet<usize> = level
                        .iter()
                        .map(|n| lattice.enc_belief_ids[e][t][n.enc_node[e]])
                        .collect();
                    (ids.len() as f64 * qhist_count).min(level.len() as f64)
                }
            };
            total *= (model.messages(e, t) as f64).powf(domain);
            if !total.is_finite() {
                return f64::INFINITY;
            }
        }
        qhist_count *= model.messages(0, t) as f64 * model.messages(1, t) as f64;
    }
    total
}

/// Exact minimum of the expected total cost over the tagged team class, with
/// the Bayes decoder on joint message histories.
pub fn enumerate_team(
    model: &DecentralizedInstance,
    class: TeamClass,
    opts: &SearchOptions,
) -> Result<SearchReport> {
    require_two_encoders(model)?;
    let start = Instant::now();
    let lattice = build_team_lattice(model, opts.tol);
    let bound = class_policy_bound(model, &lattice, class);
    if bound > opts.budget as f64 {
        return Err(Error::BudgetExceeded {
            required: bound,
            budget: opts.budget,
        });
    }
    let mut search = TeamSearch {
        model,
        lattice: &lattice,
        class,
        count: 0,
        budget: opts.budget,
        best_cost: f64::INFINITY,
        best: None,
        current: vec![[Vec::new(), Vec::new()]; model.horizon],
    };
    search.dfs(0, 0.0, &[])?;
    let best = search.best.expect("at least one team policy exists");
    let tables: Vec<Vec<BTreeMap<Vec<usize>, usize>>> = (0..2)
        .map(|e| {
            best.iter()
                .map(|stage| stage[e].iter().cloned().collect())
                .collect()
        })
        .collect();
    let beliefs = match class {
        TeamClass::Separated => Some(vec![
            lattice.enc_tables[0].beliefs().to_vec(),
            lattice.enc_tables[1].beliefs().to_vec(),
        ]),
        _ => None,
    };
    let policy = TeamPolicy {
        class,
        tables,
        beliefs,
        tol: opts.tol,
    };
    Ok(SearchReport {
        class_name: format!("team-{}", class.name()),
        num_policies_evaluated: search.count,
        optimal_cost: search.best_cost,
        optimal_policy: serde_json::to_value(&policy).expect("policy serializes"),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Exact expected total cost of an explicit team policy with the Bayes
/// decoder on joint message histories.
pub fn evaluate_team(model: &DecentralizedInstance, policy: &TeamPolicy) -> Result<f64> {
    require_two_encoders(model)?;
    if policy.tables.len() != 2 || policy.tables.iter().any(|t| t.len() != model.horizon) {
        return Err(Error::Dimension(
            "team policy must carry one table per encoder per stage".into(),
        ));
    }
    let lattice = build_team_lattice(model, policy.tol);
    let mut total = 0.0;
    let mut qids: Vec<u64> = Vec::new();
    for (t, level) in lattice.levels.iter().enumerate() {
        let m1 = model.messages(0, t);
        let m2 = model.messages(1, t);
        let mut next_qids = Vec::with_capacity(level.len());
        for node in level {
            let pq = if t == 0 { 0 } else { qids[node.parent] };
            let mut msg = [0usize; 2];
            for e in 0..2 {
                let key = team_key(policy.class, model, &lattice, t, node, e, pq);
                msg[e] = *policy.tables[e][t]
                    .get(&key)
                    .ok_or(Error::PolicyIncomplete {
                        time: t,
                        key: key.clone(),
                    })?;
                let m_e = model.messages(e, t);
                if msg[e] >= m_e {
                    return Err(Error::Dimension(format!(
                        "encoder {e} message {} out of range at time {t} (|M| = {m_e})",
                        msg[e]
                    )));
                }
            }
            next_qids
                .push(pq * (m1 as u64 * m2 as u64) + msg[0] as u64 * m2 as u64 + msg[1] as u64);
        }
        total += stage_cost_grouped(model, level, &next_qids);
        qids = next_qids;
    }
    Ok(total)
}

/// Separated-class optimum minus full-class optimum; non-negative because
/// the separated pattern is a restriction.
pub fn signaling_gap(model: &DecentralizedInstance, opts: &SearchOptions) -> Result<f64> {
    let full = enumerate_team(model, TeamClass::Full, opts)?;
    let separated = enumerate_team(model, TeamClass::Separated, opts)?;
    Ok(separated.optimal_cost - full.optimal_cost)
}

// ---------------------------------------------------------------------------
// The signaling counterexample
// ---------------------------------------------------------------------------

/// Build the exact decentralized instance on which the separated structure
/// fails: three independent uniform bits `z1, z2, z3`, state
/// `x_0 = (z1, z2, 0, 0)`, `x_1 = (0, 0, z2, z3)`, observations
/// `y1 = x(1) xor x(3) xor x(4)`, `y2 = x(1) xor x(2)`, squared-error cost
/// on the fourth coordinate with the conditional-mean receiver, and rates
/// `|M1_0| = |M1_1| = |M2_1| = 2`, `|M2_0| = 1`.
pub fn counterexample_model() -> DecentralizedInstance {
    let n = 16usize;
    let bits = |s: usize| -> (usize, usize, usize, usize) {
        ((s >> 3) & 1, (s >> 2) & 1, (s >> 1) & 1, s & 1)
    };
    let index = |b1: usize, b2: usize, b3: usize, b4: usize| -> usize {
        (b1 << 3) | (b2 << 2) | (b3 << 1) | b4
    };

    // x_0 = (z1, z2, 0, 0) uniform over z1, z2.
    let mut initial = vec![0.0; n];
    for z1 in 0..2 {
        for z2 in 0..2 {
            initial[index(z1, z2, 0, 0)] = 0.25;
        }
    }

    // From any (a, b, c, d): next state is (0, 0, b, z3), z3 uniform.
    let mut transition = vec![vec![0.0; n]; n];
    for s in 0..n {
        let (_, b, _, _) = bits(s);
        for z3 in 0..2 {
            transition[s][index(0, 0, b, z3)] += 0.5;
        }
    }

    // Deterministic parity observations.
    let mut ch1 = vec![vec![0.0; 2]; n];
    let mut ch2 = vec![vec![0.0; 2]; n];
    let mut joint = vec![vec![vec![0.0; 2]; 2]; n];
    for s in 0..n {
        let (b1, b2, b3, b4) = bits(s);
        let y1 = b1 ^ b3 ^ b4;
        let y2 = b1 ^ b2;
        ch1[s][y1] = 1.0;
        ch2[s][y2] = 1.0;
        joint[s][y1][y2] = 1.0;
    }

    let target: Vec<f64> = (0..n).map(|s| (s & 1) as f64).collect();

    FiniteModel {
        num_states: n,
        transition,
        initial,
        obs_channels: vec![ch1, ch2],
        joint_obs: Some(joint),
        cost: CostSpec::SquaredError {
            squared_error_target: target,
        },
        num_decisions: 2,
        rate_schedule: vec![vec![2, 2], vec![1, 2]],
        horizon: 2,
    }
}

/// The explicit zero-cost witness: encoder 1 sends `z1` then `z2 xor z3`,
/// encoder 2 sends nothing then its previous observation `z1 xor z2`.
pub fn counterexample_witness() -> TeamPolicy {
    let model = counterexample_model();
    let lattice = build_team_lattice(&model, 1e-12);
    let mut tables: Vec<Vec<BTreeMap<Vec<usize>, usize>>> =
        vec![vec![BTreeMap::new(); 2], vec![BTreeMap::new(); 2]];
    for node in &lattice.levels[0] {
        tables[0][0].insert(vec![node.y.0], node.y.0);
        tables[1][0].insert(vec![node.y.1], 0);
    }
    for node in &lattice.levels[1] {
        let hist = lattice.joint_path(0, node.parent);
        let y2_0 = hist[1];
        let mut key1 = vec![node.y.0];
        key1.extend_from_slice(&hist);
        tables[0][1].insert(key1, node.y.0);
        let mut key2 = vec![node.y.1];
        key2.extend_from_slice(&hist);
        tables[1][1].insert(key2, y2_0);
    }
    TeamPolicy {
        class: TeamClass::Full,
        tables,
        beliefs: None,
        tol: 1e-12,
    }
}

/// Result of [`run_counterexample`].
#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleReport {
    pub full_cost: f64,
    pub separated_cost: f64,
    pub witness_cost: f64,
    pub witness_policy: TeamPolicy,
}

/// Enumerate both classes on the counterexample and evaluate the explicit
/// witness. All probabilities are dyadic, so the optima are exact: full 0,
/// separated 1/4.
pub fn run_counterexample(opts: &SearchOptions) -> Result<CounterexampleReport> {
    let model = counterexample_model();
    let full = enumerate_team(&model, TeamClass::Full, opts)?;
    let separated = enumerate_team(&model, TeamClass::Separated, opts)?;
    let witness = counterexample_witness();
    let witness_cost = evaluate_team(&model, &witness)?;
    Ok(CounterexampleReport {
        full_cost: full.optimal_cost,
        separated_cost: separated.optimal_cost,
        witness_cost,
        witness_policy: witness,
    })
}
