//! Exact Bayesian filtering for finite models.
//!
//! The belief recursion is the discrete predict-update
//!
//! ```text
//! pi_t(x') ∝ P(y_t | x') * sum_x P(x' | x) * pi_{t-1}(x)
//! ```
//!
//! and the meta-belief `Xi_t = P(pi_t | q_{[0,t-1]})` is a finitely
//! supported distribution over belief points, conditioned by the quantizer
//! partition and propagated through the belief kernel. Zero-probability
//! observation branches are pruned, never carried with weight 0.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::FiniteModel;

/// Default L-infinity tolerance for merging numerically identical beliefs.
pub const CANON_TOL: f64 = 1e-12;

/// Probability vector over source states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    /// Wrap an already-normalized vector; panics if it is not a
    /// distribution within 1e-12.
    pub fn new(probs: Vec<f64>) -> Self {
        let sum: f64 = probs.iter().sum();
        assert!(
            (sum - 1.0).abs() <= 1e-12 && probs.iter().all(|&p| p >= 0.0),
            "belief is not a probability vector: {probs:?}"
        );
        Belief { probs }
    }

    /// Normalize non-negative weights into a belief; `None` if the total
    /// mass is zero.
    pub fn from_unnormalized(weights: &[f64]) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return None;
        }
        Some(Belief {
            probs: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn point_mass(num_states: usize, x: usize) -> Self {
        let mut probs = vec![0.0; num_states];
        probs[x] = 1.0;
        Belief { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn linf_dist(&self, other: &Belief) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `pi_0` from the prior and the first observation.
pub fn belief_init(model: &FiniteModel, y0: usize) -> Result<Belief> {
    belief_init_for(model, 0, y0)
}

/// Encoder-specific variant of [`belief_init`], filtering through that
/// encoder's marginal channel.
pub fn belief_init_for(model: &FiniteModel, encoder: usize, y0: usize) -> Result<Belief> {
    let channel = &model.obs_channels[encoder];
    let weights: Vec<f64> = model
        .initial
        .iter()
        .enumerate()
        .map(|(x, &p)| p * channel[x][y0])
        .collect();
    Belief::from_unnormalized(&weights).ok_or(Error::ZeroProbObservation {
        observation: y0,
        time: 0,
    })
}

/// One predict-update step of the filtering equation.
pub fn belief_step(model: &FiniteModel, prev: &Belief, y: usize) -> Result<Belief> {
    belief_step_for(model, 0, prev, y)
}

pub fn belief_step_for(
    model: &FiniteModel,
    encoder: usize,
    prev: &Belief,
    y: usize,
) -> Result<Belief> {
    let channel = &model.obs_channels[encoder];
    let n = model.num_states;
    let mut weights = vec![0.0; n];
    for (x, &p) in prev.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for xn in 0..n {
            weights[xn] += model.transition[x][xn] * p;
        }
    }
    for (xn, w) in weights.iter_mut().enumerate() {
        *w *= channel[xn][y];
    }
    Belief::from_unnormalized(&weights).ok_or(Error::ZeroProbObservation {
        observation: y,
        time: usize::MAX,
    })
}

/// Predictive probability of the next observation,
/// `P(y | pi) = sum_{x'} P(y|x') sum_x P(x'|x) pi(x)`.
pub fn obs_likelihood(model: &FiniteModel, prev: &Belief, y: usize) -> f64 {
    obs_likelihood_for(model, 0, prev, y)
}

pub fn obs_likelihood_for(model: &FiniteModel, encoder: usize, prev: &Belief, y: usize) -> f64 {
    let channel = &model.obs_channels[encoder];
    let n = model.num_states;
    let mut total = 0.0;
    for (x, &p) in prev.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for xn in 0..n {
            total += p * model.transition[x][xn] * channel[xn][y];
        }
    }
    total
}

/// Canonical table of distinct beliefs. Beliefs within L-infinity distance
/// `tol` share an id; the representative is the first one inserted.
#[derive(Debug, Clone, Serialize)]
pub struct BeliefTable {
    beliefs: Vec<Belief>,
    tol: f64,
}

impl BeliefTable {
    pub fn new(tol: f64) -> Self {
        BeliefTable {
            beliefs: Vec::new(),
            tol,
        }
    }

    pub fn find(&self, b: &Belief) -> Option<usize> {
        self.beliefs.iter().position(|r| r.linf_dist(b) <= self.tol)
    }

    pub fn insert(&mut self, b: &Belief) -> usize {
        match self.find(b) {
            Some(id) => id,
            None => {
                self.beliefs.push(b.clone());
                self.beliefs.len() - 1
            }
        }
    }

    pub fn get(&self, id: usize) -> &Belief {
        &self.beliefs[id]
    }

    pub fn len(&self) -> usize {
        self.beliefs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beliefs.is_empty()
    }

    pub fn beliefs(&self) -> &[Belief] {
        &self.beliefs
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }
}

/// Merge beliefs within `tol` into a canonical table; returns the table and
/// the id each input maps to. Representatives keep first-encountered order.
pub fn canonicalize(beliefs: &[Belief], tol: f64) -> (Vec<Belief>, Vec<usize>) {
    let mut table = BeliefTable::new(tol);
    let ids = beliefs.iter().map(|b| table.insert(b)).collect();
    (table.beliefs, ids)
}

/// Joint path weights `P(y_{[0,t]} = path, x_t = x)` for every
/// positive-probability observation path, one level per stage.
///
/// This is the unnormalized form of the belief tree and the workhorse for
/// exact policy evaluation: normalizing `weights` gives the belief, summing
/// them gives the path probability. Node order is lexicographic in the
/// observation path, so downstream enumeration is reproducible.
#[derive(Debug, Clone)]
pub struct PathLattice {
    pub levels: Vec<Vec<PathNode>>,
}

#[derive(Debug, Clone)]
pub struct PathNode {
    /// Index into the previous level; `usize::MAX` at the root level.
    pub parent: usize,
    /// Observation extending the parent path.
    pub y: usize,
    /// `P(y_{[0,t]}, x_t = x)` for each state `x`.
    pub weights: Vec<f64>,
}

impl PathNode {
    pub fn path_prob(&self) -> f64 {
        self.weights.iter().sum()
    }
}

impl PathLattice {
    /// Build the lattice for a single-encoder model (encoder 0).
    pub fn build(model: &FiniteModel, horizon: usize) -> Self {
        Self::build_for(model, 0, horizon)
    }

    pub fn build_for(model: &FiniteModel, encoder: usize, horizon: usize) -> Self {
        let channel = &model.obs_channels[encoder];
        let n = model.num_states;
        let ny = model.num_obs(encoder);
        let mut levels: Vec<Vec<PathNode>> = Vec::with_capacity(horizon);
        let mut first = Vec::new();
        for y in 0..ny {
            let weights: Vec<f64> = (0..n).map(|x| model.initial[x] * channel[x][y]).collect();
            if weights.iter().sum::<f64>() > 0.0 {
                first.push(PathNode {
                    parent: usize::MAX,
                    y,
                    weights,
                });
            }
        }
        levels.push(first);
        for _ in 1..horizon {
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
                for y in 0..ny {
                    let weights: Vec<f64> = (0..n).map(|x| predicted[x] * channel[x][y]).collect();
                    if weights.iter().sum::<f64>() > 0.0 {
                        next.push(PathNode {
                            parent: pi,
                            y,
                            weights,
                        });
                    }
                }
            }
            levels.push(next);
        }
        PathLattice { levels }
    }

    /// Observation path of a node, root to leaf.
    pub fn obs_path(&self, level: usize, node: usize) -> Vec<usize> {
        let mut path = Vec::with_capacity(level + 1);
        let mut t = level;
        let mut idx = node;
        loop {
            let n = &self.levels[t][idx];
            path.push(n.y);
            if t == 0 {
                break;
            }
            idx = n.parent;
            t -= 1;
        }
        path.reverse();
        path
    }
}

/// A belief reached by one positive-probability observation path.
#[derive(Debug, Clone, Serialize)]
pub struct BeliefNode {
    pub belief: Belief,
    /// Index into the tree's canonical [`BeliefTable`].
    pub belief_id: usize,
    /// Probability of the observation path producing this belief.
    pub path_prob: f64,
    pub obs_path: Vec<usize>,
    /// Index into the previous level (`None` at level 0).
    pub parent: Option<usize>,
}

/// All reachable beliefs per stage, with a shared canonical belief table.
#[derive(Debug, Clone, Serialize)]
pub struct BeliefTree {
    pub levels: Vec<Vec<BeliefNode>>,
    pub table: BeliefTable,
}

/// Materialize the support of the belief process: level `t` holds one node
/// per positive-probability observation path `y_{[0,t]}`.
pub fn build_belief_tree(model: &FiniteModel, horizon: usize, tol: f64) -> Result<BeliefTree> {
    if !model.is_single_encoder() {
        return Err(Error::Unsupported(
            "belief trees are built per encoder; pass a single-encoder model".into(),
        ));
    }
    let lattice = PathLattice::build(model, horizon);
    let mut table = BeliefTable::new(tol);
    let mut levels = Vec::with_capacity(horizon);
    for (t, lat_level) in lattice.levels.iter().enumerate() {
        let mut level = Vec::with_capacity(lat_level.len());
        for (i, node) in lat_level.iter().enumerate() {
            let belief = Belief::from_unnormalized(&node.weights)
                .expect("positive-probability node has positive mass");
            let belief_id = table.insert(&belief);
            level.push(BeliefNode {
                belief,
                belief_id,
                path_prob: node.path_prob(),
                obs_path: lattice.obs_path(t, i),
                parent: if t == 0 { None } else { Some(node.parent) },
            });
        }
        levels.push(level);
    }
    Ok(BeliefTree { levels, table })
}

/// Finitely supported distribution over canonical belief ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaBelief {
    /// `(belief_id, weight)` pairs, ids distinct and ascending, weights
    /// positive and summing to 1.
    pub support: Vec<(usize, f64)>,
}

impl MetaBelief {
    /// Merge duplicate ids, drop zero weights, normalize, sort by id.
    pub fn from_weighted(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (id, w) in pairs {
            if w > 0.0 {
                *merged.entry(id).or_insert(0.0) += w;
            }
        }
        let total: f64 = merged.values().sum();
        assert!(total > 0.0, "meta-belief must have positive total mass");
        MetaBelief {
            support: merged.into_iter().map(|(id, w)| (id, w / total)).collect(),
        }
    }

    /// Stable key for memoization: ids with weights rounded to 12 decimals.
    pub fn canonical_key(&self) -> Vec<(usize, i64)> {
        self.support
            .iter()
            .map(|&(id, w)| (id, (w * 1e12).round() as i64))
            .collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.support.iter().map(|&(_, w)| w).sum()
    }
}

/// `Xi_0`: the distribution of `pi_0` over the first observation, with
/// weights `P(y_0)`.
pub fn xi_init(model: &FiniteModel, table: &mut BeliefTable) -> Result<MetaBelief> {
    xi_init_for(model, 0, table)
}

pub fn xi_init_for(
    model: &FiniteModel,
    encoder: usize,
    table: &mut BeliefTable,
) -> Result<MetaBelief> {
    let ny = model.num_obs(encoder);
    let channel = &model.obs_channels[encoder];
    let mut pairs = Vec::new();
    for y0 in 0..ny {
        let p: f64 = model
            .initial
            .iter()
            .enumerate()
            .map(|(x, &nu)| nu * channel[x][y0])
            .sum();
        if p > 0.0 {
            let belief = belief_init_for(model, encoder, y0)?;
            pairs.push((table.insert(&belief), p));
        }
    }
    Ok(MetaBelief::from_weighted(pairs))
}

/// Restrict a meta-belief to the beliefs the quantizer maps to message `q`
/// and renormalize.
pub fn xi_condition(
    xi: &MetaBelief,
    quantizer: &BTreeMap<usize, usize>,
    q: usize,
) -> Result<MetaBelief> {
    let mut pairs = Vec::new();
    for &(id, w) in &xi.support {
        let msg = *quantizer
            .get(&id)
            .ok_or(Error::QuantizerIncomplete { belief_id: id })?;
        if msg == q {
            pairs.push((id, w));
        }
    }
    if pairs.iter().map(|&(_, w)| w).sum::<f64>() <= 0.0 {
        return Err(Error::ImpossibleMessage { message: q });
    }
    Ok(MetaBelief::from_weighted(pairs))
}

/// Push a meta-belief through the belief kernel: each support point branches
/// over next observations with weight `obs_likelihood`, and the images are
/// canonicalized and merged.
pub fn xi_predict(model: &FiniteModel, xi: &MetaBelief, table: &mut BeliefTable) -> MetaBelief {
    xi_predict_for(model, 0, xi, table)
}

pub fn xi_predict_for(
    model: &FiniteModel,
    encoder: usize,
    xi: &MetaBelief,
    table: &mut BeliefTable,
) -> MetaBelief {
    let ny = model.num_obs(encoder);
    let mut pairs = Vec::new();
    for &(id, w) in &xi.support {
        let belief = table.get(id).clone();
        for y in 0..ny {
            let like = obs_likelihood_for(model, encoder, &belief, y);
            if like > 0.0 {
                let next = belief_step_for(model, encoder, &belief, y)
                    .expect("positive likelihood step succeeds");
                pairs.push((table.insert(&next), w * like));
            }
        }
    }
    MetaBelief::from_weighted(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostSpec;

    fn channel_model() -> FiniteModel {
        FiniteModel {
            num_states: 2,
            transition: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            initial: vec![0.5, 0.5],
            obs_channels: vec![vec![vec![0.8, 0.2], vec![0.3, 0.7]]],
            joint_obs: None,
            cost: CostSpec::Table(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
            num_decisions: 2,
            rate_schedule: vec![vec![2, 2, 2]],
            horizon: 3,
        }
    }

    fn noiseless_model() -> FiniteModel {
        FiniteModel {
            num_states: 2,
            transition: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            initial: vec![0.5, 0.5],
            obs_channels: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            joint_obs: None,
            cost: CostSpec::Table(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
            num_decisions: 2,
            rate_schedule: vec![vec![2, 2]],
            horizon: 2,
        }
    }

    #[test]
    fn init_noiseless_is_point_mass() {
        let m = noiseless_model();
        let b = belief_init(&m, 1).unwrap();
        assert_eq!(b.probs(), &[0.0, 1.0]);
    }

    #[test]
    fn init_bayes_arithmetic() {
        let m = channel_model();
        let b = belief_init(&m, 0).unwrap();
        assert!((b.probs()[0] - 8.0 / 11.0).abs() < 1e-15);
        assert!((b.probs()[1] - 3.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn init_zero_probability_observation_errors() {
        let mut m = noiseless_model();
        m.initial = vec![1.0, 0.0];
        match belief_init(&m, 1) {
            Err(Error::ZeroProbObservation { observation: 1, .. }) => {}
            other => panic!("expected zero-probability error, got {other:?}"),
        }
    }

    #[test]
    fn step_noiseless_identity() {
        let m = noiseless_model();
        let prev = Belief::new(vec![0.5, 0.5]);
        let b = belief_step(&m, &prev, 0).unwrap();
        assert_eq!(b.probs(), &[1.0, 0.0]);
    }

    #[test]
    fn step_identity_transition_matches_bayes() {
        let m = channel_model();
        let prev = Belief::new(vec![0.5, 0.5]);
        let b = belief_step(&m, &prev, 0).unwrap();
        assert!((b.probs()[0] - 8.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn step_uniformizing_transition_gives_uniform() {
        let mut m = channel_model();
        m.transition = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        // Uninformative channel.
        m.obs_channels = vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]];
        let prev = Belief::new(vec![0.9, 0.1]);
        let b = belief_step(&m, &prev, 1).unwrap();
        assert!((b.probs()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn likelihood_matches_arithmetic_and_sums_to_one() {
        let m = channel_model();
        let prev = Belief::new(vec![0.5, 0.5]);
        assert!((obs_likelihood(&m, &prev, 0) - 0.55).abs() < 1e-15);
        let total: f64 = (0..2).map(|y| obs_likelihood(&m, &prev, y)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn likelihood_point_mass_noiseless_is_one() {
        let m = noiseless_model();
        let prev = Belief::point_mass(2, 0);
        assert_eq!(obs_likelihood(&m, &prev, 0), 1.0);
    }

    #[test]
    fn tree_noiseless_two_point_masses_per_level() {
        let m = noiseless_model();
        let tree = build_belief_tree(&m, 2, CANON_TOL).unwrap();
        for level in &tree.levels {
            assert_eq!(level.len(), 2);
            let total: f64 = level.iter().map(|n| n.path_prob).sum();
            assert!((total - 1.0).abs() < 1e-12);
            for node in level {
                assert!(node.belief.probs().contains(&1.0));
            }
        }
        assert_eq!(tree.table.len(), 2);
    }

    #[test]
    fn tree_level_size_counting_bound() {
        let m = channel_model();
        let tree = build_belief_tree(&m, 3, CANON_TOL).unwrap();
        for (t, level) in tree.levels.iter().enumerate() {
            assert!(level.len() <= 2usize.pow(t as u32 + 1));
            let total: f64 = level.iter().map(|n| n.path_prob).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn canonicalize_merges_and_separates() {
        let a = Belief::new(vec![0.3, 0.7]);
        let a2 = Belief::new(vec![0.3 + 1e-15, 0.7 - 1e-15]);
        let b = Belief::new(vec![0.4, 0.6]);
        let (table, ids) = canonicalize(&[a.clone(), a2, a, b], 1e-12);
        assert_eq!(table.len(), 2);
        assert_eq!(ids, vec![0, 0, 0, 1]);
    }

    #[test]
    fn xi_init_noiseless_and_uninformative() {
        let m = noiseless_model();
        let mut table = BeliefTable::new(CANON_TOL);
        let xi = xi_init(&m, &mut table).unwrap();
        assert_eq!(xi.support.len(), 2);
        assert!((xi.support[0].1 - 0.5).abs() < 1e-15);

        let mut m2 = noiseless_model();
        m2.obs_channels = vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]];
        let mut table2 = BeliefTable::new(CANON_TOL);
        let xi2 = xi_init(&m2, &mut table2).unwrap();
        assert_eq!(xi2.support.len(), 1);
        assert_eq!(table2.get(xi2.support[0].0).probs(), &[0.5, 0.5]);
    }

    #[test]
    fn xi_init_bayes_weights() {
        let m = channel_model();
        let mut table = BeliefTable::new(CANON_TOL);
        let xi = xi_init(&m, &mut table).unwrap();
        assert_eq!(xi.support.len(), 2);
        let (id0, w0) = xi.support[0];
        let (id1, w1) = xi.support[1];
        assert!((w0 - 0.55).abs() < 1e-15);
        assert!((w1 - 0.45).abs() < 1e-15);
        assert!((table.get(id0).probs()[0] - 8.0 / 11.0).abs() < 1e-15);
        assert!((table.get(id1).probs()[0] - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn xi_condition_partitions_and_rejects_impossible() {
        let xi = MetaBelief::from_weighted([(0, 0.6), (1, 0.4)]);
        let mut quantizer = BTreeMap::new();
        quantizer.insert(0, 1);
        quantizer.insert(1, 2);
        let conditioned = xi_condition(&xi, &quantizer, 1).unwrap();
        assert_eq!(conditioned.support, vec![(0, 1.0)]);

        let mut same = BTreeMap::new();
        same.insert(0, 1);
        same.insert(1, 1);
        let unchanged = xi_condition(&xi, &same, 1).unwrap();
        assert_eq!(unchanged, xi);
        match xi_condition(&xi, &same, 2) {
            Err(Error::ImpossibleMessage { message: 2 }) => {}
            other => panic!("expected impossible-message error, got {other:?}"),
        }
    }

    #[test]
    fn xi_predict_point_mass_noiseless_fixed_point() {
        let m = noiseless_model();
        let mut table = BeliefTable::new(CANON_TOL);
        let id = table.insert(&Belief::point_mass(2, 1));
        let xi = MetaBelief::from_weighted([(id, 1.0)]);
        let next = xi_predict(&m, &xi, &mut table);
        assert_eq!(next.support, vec![(id, 1.0)]);
    }

    #[test]
    fn xi_predict_conserves_mass() {
        let m = channel_model();
        let mut table = BeliefTable::new(CANON_TOL);
        let xi = xi_init(&m, &mut table).unwrap();
        let next = xi_predict(&m, &xi, &mut table);
        assert!((next.total_weight() - 1.0).abs() < 1e-12);
    }
}
