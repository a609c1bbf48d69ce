//! Backward dynamic programming on the controlled Markov chain whose state
//! is the decoder's meta-belief and whose action is the quantizer applied to
//! the encoder's belief.
//!
//! Reachable meta-beliefs are generated on the fly and memoized by canonical
//! id, so the value table covers exactly the nodes some action sequence can
//! reach. Quantizers are enumerated as all total maps from the support to
//! the message alphabet, including non-surjective ones; at low rates the
//! optimal action is sometimes non-surjective.

use serde::Serialize;
use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::filter::{xi_condition, xi_init, xi_predict, BeliefTable, MetaBelief};
use crate::model::FiniteModel;
use crate::policy::{bayes_risk_weighted, Quantizer, WvPolicy};

/// Options for [`dp_solve`].
#[derive(Debug, Clone)]
pub struct DpOptions {
    /// Cap on (meta-belief, quantizer) evaluations across the whole solve.
    pub max_evaluations: u64,
    /// Belief canonicalization tolerance.
    pub tol: f64,
}

impl Default for DpOptions {
    fn default() -> Self {
        DpOptions {
            max_evaluations: 10_000_000,
            tol: 1e-12,
        }
    }
}

/// One entry of the value table.
#[derive(Debug, Clone, Serialize)]
pub struct DpNode {
    pub time: usize,
    pub meta_id: usize,
    /// Optimal cost-to-go from this node.
    pub value: f64,
    pub best_quantizer: Quantizer,
}

/// Output of [`dp_solve`].
#[derive(Debug, Clone, Serialize)]
pub struct DpSolution {
    pub optimal_cost: f64,
    pub policy: WvPolicy,
    /// Value table over reachable nodes, sorted by (time, meta id).
    pub nodes: Vec<DpNode>,
    pub num_evaluations: u64,
}

/// `G(Xi, Q)`: expected stage cost of quantizer `Q` under meta-belief `Xi`,
/// with the Bayes receiver per message. Mixtures are left unnormalized so
/// the per-message risks already carry their probabilities.
pub fn stage_cost(
    model: &FiniteModel,
    xi: &MetaBelief,
    quantizer: &Quantizer,
    table: &BeliefTable,
) -> f64 {
    let n = model.num_states;
    let mut mixtures: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(id, w) in &xi.support {
        let q = quantizer.map[&id];
        let acc = mixtures.entry(q).or_insert_with(|| vec![0.0; n]);
        for (x, &p) in table.get(id).probs().iter().enumerate() {
            acc[x] += w * p;
        }
    }
    mixtures
        .values()
        .map(|weights| bayes_risk_weighted(weights, &model.cost))
        .sum()
}

struct Dp<'a> {
    model: &'a FiniteModel,
    table: BeliefTable,
    metas: Vec<MetaBelief>,
    meta_index: HashMap<Vec<(usize, i64)>, usize>,
    memo: HashMap<(usize, usize), (f64, Quantizer)>,
    evals: u64,
    max_evals: u64,
}

impl Dp<'_> {
    fn intern(&mut self, xi: MetaBelief) -> usize {
        let key = xi.canonical_key();
        if let Some(&id) = self.meta_index.get(&key) {
            return id;
        }
        self.metas.push(xi);
        let id = self.metas.len() - 1;
        self.meta_index.insert(key, id);
        id
    }

    fn value(&mut self, t: usize, meta_id: usize) -> Result<f64> {
        if t == self.model.horizon {
            return Ok(0.0);
        }
        if let Some((v, _)) = self.memo.get(&(t, meta_id)) {
            return Ok(*v);
        }
        let xi = self.metas[meta_id].clone();
        let m = self.model.messages(0, t);
        let support: Vec<usize> = xi.support.iter().map(|&(id, _)| id).collect();
        let bases = vec![m; support.len()];
        let mut digits = vec![0usize; support.len()];
        let mut best = f64::INFINITY;
        let mut best_quantizer: Option<Quantizer> = None;
        loop {
            self.evals += 1;
            if self.evals > self.max_evals {
                return Err(Error::BudgetExceeded {
                    required: self.evals as f64,
                    budget: self.max_evals,
                });
            }
            let quantizer = Quantizer {
                map: support.iter().zip(&digits).map(|(&b, &d)| (b, d)).collect(),
            };
            let mut total = stage_cost(self.model, &xi, &quantizer, &self.table);
            for q in 0..m {
                let mass: f64 = xi
                    .support
                    .iter()
                    .filter(|&&(b, _)| quantizer.map[&b] == q)
                    .map(|&(_, w)| w)
                    .sum();
                if mass > 0.0 {
                    let conditioned =
                        xi_condition(&xi, &quantizer.map, q).expect("positive-mass message");
                    let advanced = xi_predict(self.model, &conditioned, &mut self.table);
                    let next_id = self.intern(advanced);
                    total += mass * self.value(t + 1, next_id)?;
                }
            }
            if total < best {
                best = total;
                best_quantizer = Some(quantizer);
            }
            if !next_assignment(&mut digits, &bases) {
                break;
            }
        }
        let quantizer = best_quantizer.expect("at least one quantizer exists");
        self.memo.insert((t, meta_id), (best, quantizer));
        Ok(best)
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

/// Solve `V_T = 0`, `V_t(Xi) = min_Q [G(Xi, Q) + sum_q P(q|Xi,Q) V_{t+1}(...)]`
/// over reachable meta-beliefs. `xi_init` already aggregates the first
/// observation, so the optimum is `V_0(Xi_0)` directly.
pub fn dp_solve(model: &FiniteModel, opts: &DpOptions) -> Result<DpSolution> {
    if !model.is_single_encoder() {
        return Err(Error::Unsupported(
            "belief DP takes single-encoder models".into(),
        ));
    }
    let mut dp = Dp {
        model,
        table: BeliefTable::new(opts.tol),
        metas: Vec::new(),
        meta_index: HashMap::new(),
        memo: HashMap::new(),
        evals: 0,
        max_evals: opts.max_evaluations,
    };
    let xi0 = xi_init(model, &mut dp.table)?;
    let root = dp.intern(xi0);
    let optimal_cost = dp.value(0, root)?;

    // Forward pass over optimal actions to collect the reachable value
    // table and the policy stages.
    let mut stages: Vec<BTreeMap<usize, Quantizer>> = vec![BTreeMap::new(); model.horizon];
    let mut nodes: Vec<DpNode> = Vec::new();
    let mut frontier: Vec<usize> = vec![root];
    for t in 0..model.horizon {
        let mut next: Vec<usize> = Vec::new();
        for &meta_id in &frontier {
            if stages[t].contains_key(&meta_id) {
                continue;
            }
            let (value, quantizer) = dp.memo[&(t, meta_id)].clone();
            nodes.push(DpNode {
                time: t,
                meta_id,
                value,
                best_quantizer: quantizer.clone(),
            });
            let xi = dp.metas[meta_id].clone();
            let m = model.messages(0, t);
            for q in 0..m {
                let mass: f64 = xi
                    .support
                    .iter()
                    .filter(|&&(b, _)| quantizer.map[&b] == q)
                    .map(|&(_, w)| w)
                    .sum();
                if mass > 0.0 {
                    let conditioned =
                        xi_condition(&xi, &quantizer.map, q).expect("positive-mass message");
                    let advanced = xi_predict(model, &conditioned, &mut dp.table);
                    let next_id = dp.intern(advanced);
                    if !next.contains(&next_id) {
                        next.push(next_id);
                    }
                }
            }
            stages[t].insert(meta_id, quantizer);
        }
        next.sort_unstable();
        frontier = next;
    }
    nodes.sort_by_key(|n| (n.time, n.meta_id));

    let policy = WvPolicy {
        beliefs: dp.table.beliefs().to_vec(),
        metas: dp.metas.clone(),
        stages,
        tol: opts.tol,
    };
    Ok(DpSolution {
        optimal_cost,
        policy,
        nodes,
        num_evaluations: dp.evals,
    })
}
