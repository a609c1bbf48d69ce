//! Exhaustive enumeration over policy classes: the ground-truth optimizer
//! used to check the structural equivalences on small instances.
//!
//! Enumeration order is lexicographic over table entries with messages in
//! increasing order, and ties keep the first policy encountered, so reports
//! are reproducible byte for byte. The decoder is always the Bayes decoder
//! built per message history; it is optimal for any fixed encoder, which
//! soundly collapses the receiver side of the search.

use serde::Serialize;
use std::collections::BTreeMap;
use std::time::Instant;

use crate::beliefdp::stage_cost;
use crate::error::{Error, Result};
use crate::filter::{
    xi_condition, xi_init, xi_predict, Belief, BeliefTable, MetaBelief, PathLattice, PathNode,
};
use crate::model::FiniteModel;
use crate::policy::{
    bayes_risk_weighted, EncoderPolicy, FullHistoryPolicy, Quantizer, WitsenhausenPolicy, WvPolicy,
};

/// Knobs shared by all enumerations.
#[derive(Debug, Clone)]
pub struct SearchOptions {
    /// Maximum number of complete policies the search may evaluate.
    pub budget: u64,
    /// Belief canonicalization tolerance.
    pub tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            budget: 100_000_000,
            tol: 1e-12,
        }
    }
}

/// Result of one exhaustive search.
#[derive(Debug, Clone, Serialize)]
pub struct SearchReport {
    pub class_name: String,
    pub num_policies_evaluated: u64,
    pub optimal_cost: f64,
    pub optimal_policy: serde_json::Value,
    /// Wall time of the search; reported on stderr by the CLI but excluded
    /// from serialized outputs so identical runs emit identical bytes.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

fn require_single_encoder(model: &FiniteModel) -> Result<()> {
    if !model.is_single_encoder() {
        return Err(Error::Unsupported(
            "class enumerations take single-encoder models; see the multiterminal module".into(),
        ));
    }
    Ok(())
}

/// Number of full-history policies: the product of `|M_t|` to the power of
/// the number of positive-probability observation paths at each stage.
/// Also an upper bound for the structured classes.
fn full_policy_count(model: &FiniteModel, lattice: &PathLattice) -> f64 {
    let mut total = 1.0f64;
    for (t, level) in lattice.levels.iter().enumerate() {
        total *= (model.messages(0, t) as f64).powi(level.len() as i32);
        if !total.is_finite() {
            return f64::INFINITY;
        }
    }
    total
}

fn check_budget(required: f64, budget: u64) -> Result<()> {
    if required > budget as f64 {
        Err(Error::BudgetExceeded { required, budget })
    } else {
        Ok(())
    }
}

/// Rightmost-fastest odometer; returns false once all digits wrapped.
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

/// Group stage weights by message-history id and sum the per-group Bayes
/// risks. Group count is at most the node count, so a linear scan suffices.
fn stage_cost_grouped(model: &FiniteModel, level: &[PathNode], qids: &[u64]) -> f64 {
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

// ---------------------------------------------------------------------------
// Full-history class
// ---------------------------------------------------------------------------

struct FullSearch<'a> {
    model: &'a FiniteModel,
    lattice: &'a PathLattice,
    msgs: Vec<Vec<usize>>,
    count: u64,
    best_cost: f64,
    best: Option<Vec<Vec<usize>>>,
}

impl FullSearch<'_> {
    fn dfs(&mut self, t: usize, acc: f64, parent_qids: &[u64]) {
        if t == self.lattice.levels.len() {
            self.count += 1;
            if acc < self.best_cost {
                self.best_cost = acc;
                self.best = Some(self.msgs.clone());
            }
            return;
        }
        let level = &self.lattice.levels[t];
        let m = self.model.messages(0, t);
        let bases = vec![m; level.len()];
        let mut digits = vec![0usize; level.len()];
        loop {
            let qids: Vec<u64> = level
                .iter()
                .enumerate()
                .map(|(i, node)| {
                    let pq = if t == 0 { 0 } else { parent_qids[node.parent] };
                    pq * m as u64 + digits[i] as u64
                })
                .collect();
            let stage = stage_cost_grouped(self.model, level, &qids);
            self.msgs[t].copy_from_slice(&digits);
            self.dfs(t + 1, acc + stage, &qids);
            if !next_assignment(&mut digits, &bases) {
                break;
            }
        }
    }
}

/// Exact minimum of the expected total cost over all full-history encoder
/// policies with the Bayes decoder.
pub fn enumerate_full(model: &FiniteModel, opts: &SearchOptions) -> Result<SearchReport> {
    enumerate_full_delayed(model, 0, opts)
}

/// Delayed-decoding variant of [`enumerate_full`]: the decision at stage `t`
/// scores against `x_{max(0, t-delay)}`. With `delay as d`, this is the
/// original formulation that state augmentation with that delay reproduces.
pub fn enumerate_full_delayed(
    model: &FiniteModel,
    delay: usize,
    opts: &SearchOptions,
) -> Result<SearchReport> {
    require_single_encoder(model)?;
    let start = Instant::now();
    let lattice = if delay == 0 {
        PathLattice::build(model, model.horizon)
    } else {
        delayed_lattice(model, delay)
    };
    let required = full_policy_count(model, &lattice);
    check_budget(required, opts.budget)?;
    let mut search = FullSearch {
        model,
        lattice: &lattice,
        msgs: lattice.levels.iter().map(|l| vec![0; l.len()]).collect(),
        count: 0,
        best_cost: f64::INFINITY,
        best: None,
    };
    search.dfs(0, 0.0, &[]);
    let best = search.best.expect("at least one policy exists");
    let policy = msgs_to_full_policy(&lattice, &best);
    Ok(SearchReport {
        class_name: "full".into(),
        num_policies_evaluated: search.count,
        optimal_cost: search.best_cost,
        optimal_policy: serde_json::to_value(EncoderPolicy::Full(policy))
            .expect("policy serializes"),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Lattice whose node weights are `P(y_{[0,t]}, x_{max(0, t-delay)} = x)`,
/// so the per-stage Bayes risk scores the delayed state.
fn delayed_lattice(model: &FiniteModel, delay: usize) -> PathLattice {
    let base = PathLattice::build(model, model.horizon);
    let n = model.num_states;
    // Enumerate all positive-probability state paths and fold them onto the
    // observation lattice. Sizes here are small by the enumeration budget.
    let channel = &model.obs_channels[0];
    let mut levels: Vec<Vec<PathNode>> = base
        .levels
        .iter()
        .map(|level| {
            level
                .iter()
                .map(|node| PathNode {
                    parent: node.parent,
                    y: node.y,
                    weights: vec![0.0; n],
                })
                .collect()
        })
        .collect();
    // Map observation prefixes to node indices level by level.
    let mut child: Vec<BTreeMap<(usize, usize), usize>> = Vec::new();
    for level in &base.levels {
        let mut m = BTreeMap::new();
        for (i, node) in level.iter().enumerate() {
            m.insert((node.parent, node.y), i);
        }
        child.push(m);
    }
    // (state path, obs path) atoms, depth-first.
    struct Walk<'a> {
        model: &'a FiniteModel,
        channel: &'a [Vec<f64>],
        levels: &'a mut Vec<Vec<PathNode>>,
        child: &'a [BTreeMap<(usize, usize), usize>],
        delay: usize,
        states: Vec<usize>,
    }
    impl Walk<'_> {
        fn go(&mut self, t: usize, prob: f64, node: usize) {
            let horizon = self.model.horizon;
            let scored = self.states[t.saturating_sub(self.delay)];
            self.levels[t][node].weights[scored] += prob;
            if t + 1 == horizon {
                return;
            }
            let cur = self.states[t];
            for xn in 0..self.model.num_states {
                let pt = self.model.transition[cur][xn];
                if pt == 0.0 {
                    continue;
                }
                for y in 0..self.channel[0].len() {
                    let py = self.channel[xn][y];
                    if py == 0.0 {
                        continue;
                    }
                    if let Some(&next) = self.child[t + 1].get(&(node, y)) {
                        self.states.push(xn);
                        self.go(t + 1, prob * pt * py, next);
                        self.states.pop();
                    }
                }
            }
        }
    }
    let mut walk = Walk {
        model,
        channel,
        levels: &mut levels,
        child: &child,
        delay,
        states: Vec::new(),
    };
    for x0 in 0..n {
        let p0 = model.initial[x0];
        if p0 == 0.0 {
            continue;
        }
        for y in 0..model.num_obs(0) {
            let py = channel[x0][y];
            if py == 0.0 {
                continue;
            }
            if let Some(&node) = walk.child[0].get(&(usize::MAX, y)) {
                walk.states.push(x0);
                walk.go(0, p0 * py, node);
                walk.states.pop();
            }
        }
    }
    PathLattice { levels }
}

fn msgs_to_full_policy(lattice: &PathLattice, msgs: &[Vec<usize>]) -> FullHistoryPolicy {
    let mut stages = Vec::with_capacity(lattice.levels.len());
    for (t, level) in lattice.levels.iter().enumerate() {
        let mut stage = BTreeMap::new();
        for (i, _) in level.iter().enumerate() {
            stage.insert(lattice.obs_path(t, i), msgs[t][i]);
        }
        stages.push(stage);
    }
    FullHistoryPolicy { stages }
}

// ---------------------------------------------------------------------------
// Witsenhausen class
// ---------------------------------------------------------------------------

struct WitsSearch<'a> {
    model: &'a FiniteModel,
    lattice: &'a PathLattice,
    belief_ids: Vec<Vec<usize>>,
    count: u64,
    best_cost: f64,
    /// Per stage: (belief id, packed q-history) -> message, for the best leaf.
    best: Option<Vec<Vec<((usize, u64), usize)>>>,
    current: Vec<Vec<((usize, u64), usize)>>,
}

impl WitsSearch<'_> {
    fn dfs(&mut self, t: usize, acc: f64, parent_qids: &[u64]) {
        if t == self.lattice.levels.len() {
            self.count += 1;
            if acc < self.best_cost {
                self.best_cost = acc;
                self.best = Some(self.current.clone());
            }
            return;
        }
        let level = &self.lattice.levels[t];
        let m = self.model.messages(0, t);
        // Domain: distinct (belief id, q-history) pairs, in sorted order.
        let mut keys: std::collections::BTreeSet<(usize, u64)> = std::collections::BTreeSet::new();
        let mut node_keys = Vec::with_capacity(level.len());
        for (i, node) in level.iter().enumerate() {
            let pq = if t == 0 { 0 } else { parent_qids[node.parent] };
            let key = (self.belief_ids[t][i], pq);
            keys.insert(key);
            node_keys.push(key);
        }
        let ordered: Vec<(usize, u64)> = keys.into_iter().collect();
        let slot_of: BTreeMap<(usize, u64), usize> =
            ordered.iter().enumerate().map(|(s, &k)| (k, s)).collect();
        let bases = vec![m; ordered.len()];
        let mut digits = vec![0usize; ordered.len()];
        loop {
            let qids: Vec<u64> = level
                .iter()
                .enumerate()
                .map(|(i, node)| {
                    let pq = if t == 0 { 0 } else { parent_qids[node.parent] };
                    pq * m as u64 + digits[slot_of[&node_keys[i]]] as u64
                })
                .collect();
            let stage = stage_cost_grouped(self.model, level, &qids);
            self.current[t] = ordered
                .iter()
                .enumerate()
                .map(|(s, &k)| (k, digits[s]))
                .collect();
            self.dfs(t + 1, acc + stage, &qids);
            if !next_assignment(&mut digits, &bases) {
                break;
            }
        }
    }
}

fn unpack_qhist(model: &FiniteModel, t: usize, mut qid: u64) -> Vec<usize> {
    let mut hist = vec![0usize; t];
    for s in (0..t).rev() {
        let m = model.messages(0, s) as u64;
        hist[s] = (qid % m) as usize;
        qid /= m;
    }
    hist
}

/// Exact minimum over policies that use `(pi_t, q_{[0,t-1]})` at each stage.
pub fn enumerate_witsenhausen(model: &FiniteModel, opts: &SearchOptions) -> Result<SearchReport> {
    require_single_encoder(model)?;
    let start = Instant::now();
    let lattice = PathLattice::build(model, model.horizon);
    check_budget(full_policy_count(model, &lattice), opts.budget)?;
    let mut table = BeliefTable::new(opts.tol);
    let belief_ids: Vec<Vec<usize>> = lattice
        .levels
        .iter()
        .map(|level| {
            level
                .iter()
                .map(|node| {
                    table.insert(
                        &Belief::from_unnormalized(&node.weights)
                            .expect("lattice nodes have positive mass"),
                    )
                })
                .collect()
        })
        .collect();
    let mut search = WitsSearch {
        model,
        lattice: &lattice,
        belief_ids,
        count: 0,
        best_cost: f64::INFINITY,
        best: None,
        current: vec![Vec::new(); lattice.levels.len()],
    };
    search.dfs(0, 0.0, &[]);
    let best = search.best.expect("at least one policy exists");
    let stages: Vec<BTreeMap<(usize, Vec<usize>), usize>> = best
        .iter()
        .enumerate()
        .map(|(t, entries)| {
            entries
                .iter()
                .map(|&((belief_id, qid), msg)| ((belief_id, unpack_qhist(model, t, qid)), msg))
                .collect()
        })
        .collect();
    let policy = WitsenhausenPolicy {
        beliefs: table.beliefs().to_vec(),
        stages,
        tol: opts.tol,
    };
    Ok(SearchReport {
        class_name: "witsenhausen".into(),
        num_policies_evaluated: search.count,
        optimal_cost: search.best_cost,
        optimal_policy: serde_json::to_value(EncoderPolicy::Witsenhausen(policy))
            .expect("policy serializes"),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Walrand-Varaiya class (quantizer per reachable meta-belief)
// ---------------------------------------------------------------------------

struct WvSearch<'a> {
    model: &'a FiniteModel,
    table: BeliefTable,
    metas: Vec<MetaBelief>,
    meta_index: std::collections::HashMap<Vec<(usize, i64)>, usize>,
    count: u64,
    best_cost: f64,
    best: Option<Vec<Vec<(usize, Quantizer)>>>,
    current: Vec<Vec<(usize, Quantizer)>>,
    horizon: usize,
    _opts: &'a SearchOptions,
}

impl WvSearch<'_> {
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

    /// `frontier`: distinct reachable meta-beliefs at stage `t` with their
    /// reach probabilities, sorted by meta id.
    fn dfs(&mut self, t: usize, acc: f64, frontier: &[(usize, f64)]) {
        if t == self.horizon {
            self.count += 1;
            if acc < self.best_cost {
                self.best_cost = acc;
                self.best = Some(self.current.clone());
            }
            return;
        }
        let m = self.model.messages(0, t);
        // Joint assignment: one total quantizer per frontier meta-belief.
        let supports: Vec<Vec<usize>> = frontier
            .iter()
            .map(|&(id, _)| self.metas[id].support.iter().map(|&(b, _)| b).collect())
            .collect();
        let total_digits: usize = supports.iter().map(|s| s.len()).sum();
        let bases = vec![m; total_digits];
        let mut digits = vec![0usize; total_digits];
        loop {
            // Slice digits into per-meta quantizers.
            let mut offset = 0;
            let mut quantizers: Vec<Quantizer> = Vec::with_capacity(frontier.len());
            for support in &supports {
                let map: BTreeMap<usize, usize> = support
                    .iter()
                    .enumerate()
                    .map(|(j, &b)| (b, digits[offset + j]))
                    .collect();
                offset += support.len();
                quantizers.push(Quantizer { map });
            }
            // Stage cost and successor frontier.
            let mut stage = 0.0;
            let mut next: BTreeMap<usize, f64> = BTreeMap::new();
            for (&(id, prob), quantizer) in frontier.iter().zip(&quantizers) {
                let xi = self.metas[id].clone();
                stage += prob * stage_cost(self.model, &xi, quantizer, &self.table);
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
                        *next.entry(next_id).or_insert(0.0) += prob * mass;
                    }
                }
            }
            self.current[t] = frontier
                .iter()
                .zip(quantizers)
                .map(|(&(id, _), quantizer)| (id, quantizer))
                .collect();
            let next_frontier: Vec<(usize, f64)> = next.into_iter().collect();
            self.dfs(t + 1, acc + stage, &next_frontier);
            if !next_assignment(&mut digits, &bases) {
                break;
            }
        }
    }
}

/// Exact minimum over policies that choose a quantizer per reachable
/// meta-belief at each stage.
pub fn enumerate_wv(model: &FiniteModel, opts: &SearchOptions) -> Result<SearchReport> {
    require_single_encoder(model)?;
    let start = Instant::now();
    let lattice = PathLattice::build(model, model.horizon);
    check_budget(full_policy_count(model, &lattice), opts.budget)?;
    let mut search = WvSearch {
        model,
        table: BeliefTable::new(opts.tol),
        metas: Vec::new(),
        meta_index: std::collections::HashMap::new(),
        count: 0,
        best_cost: f64::INFINITY,
        best: None,
        current: vec![Vec::new(); model.horizon],
        horizon: model.horizon,
        _opts: opts,
    };
    let xi0 = xi_init(model, &mut search.table)?;
    let root = search.intern(xi0);
    search.dfs(0, 0.0, &[(root, 1.0)]);
    let best = search.best.expect("at least one policy exists");
    let stages: Vec<BTreeMap<usize, Quantizer>> = best
        .iter()
        .map(|entries| entries.iter().cloned().collect())
        .collect();
    let policy = WvPolicy {
        beliefs: search.table.beliefs().to_vec(),
        metas: search.metas.clone(),
        stages,
        tol: opts.tol,
    };
    Ok(SearchReport {
        class_name: "wv".into(),
        num_policies_evaluated: search.count,
        optimal_cost: search.best_cost,
        optimal_policy: serde_json::to_value(EncoderPolicy::Wv(policy)).expect("policy serializes"),
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// One row of [`compare_classes`].
#[derive(Debug, Clone, Serialize)]
pub struct ClassRow {
    pub class: String,
    pub optimal_cost: f64,
    pub gap_to_full: f64,
}

/// Run all three enumerations and report each class's optimum and its gap to
/// the full-history optimum.
pub fn compare_classes(model: &FiniteModel, opts: &SearchOptions) -> Result<Vec<ClassRow>> {
    let full = enumerate_full(model, opts)?;
    let wits = enumerate_witsenhausen(model, opts)?;
    let wv = enumerate_wv(model, opts)?;
    Ok(vec![
        ClassRow {
            class: full.class_name,
            optimal_cost: full.optimal_cost,
            gap_to_full: 0.0,
        },
        ClassRow {
            class: wits.class_name,
            optimal_cost: wits.optimal_cost,
            gap_to_full: wits.optimal_cost - full.optimal_cost,
        },
        ClassRow {
            class: wv.class_name,
            optimal_cost: wv.optimal_cost,
            gap_to_full: wv.optimal_cost - full.optimal_cost,
        },
    ])
}
