//! Source/observation/cost models for the finite-alphabet and
//! linear-Gaussian branches.
//!
//! The functional noise forms `x' = f(x, w)`, `y = g(x, r)` are carried as
//! stochastic kernels `P(x'|x)` and `P(y|x)`; for finite alphabets the two
//! representations are equivalent and the kernels are what every downstream
//! recursion consumes. Correlated two-encoder observations are carried as an
//! explicit joint kernel `P(y1, y2 | x)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result, Violation};

/// Row-sum and marginal tolerance for kernel validation.
pub const KERNEL_TOL: f64 = 1e-12;
/// Symmetry/eigenvalue tolerance for covariance validation.
pub const PSD_TOL: f64 = 1e-10;

/// Per-stage cost of the finite branch.
///
/// `Table` is the standard finite decision set `c[x][v]`. `SquaredError`
/// scores a real-valued reconstruction of `target[x]` against the exact
/// conditional mean; it is what the decentralized signaling instance uses,
/// where the receiver is `E[target(x) | q]` rather than an argmin over a
/// finite set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostSpec {
    Table(Vec<Vec<f64>>),
    SquaredError { squared_error_target: Vec<f64> },
}

impl CostSpec {
    /// Largest per-stage cost any decision rule can incur; used for DP
    /// value bounds.
    pub fn max_entry(&self) -> f64 {
        match self {
            CostSpec::Table(t) => t
                .iter()
                .flat_map(|row| row.iter().copied())
                .fold(0.0, f64::max),
            CostSpec::SquaredError {
                squared_error_target,
            } => {
                let lo = squared_error_target
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                let hi = squared_error_target
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
                (hi - lo) * (hi - lo)
            }
        }
    }
}

/// Finite-alphabet partially observed Markov source with one or two
/// encoders, a per-stage cost, and fixed message alphabets per time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteModel {
    /// |X|
    pub num_states: usize,
    /// `transition[x][x'] = P(x' | x)`, rows sum to 1.
    pub transition: Vec<Vec<f64>>,
    /// Initial distribution of the state.
    pub initial: Vec<f64>,
    /// One kernel per encoder: `obs_channels[i][x][y] = P(y | x)`.
    pub obs_channels: Vec<Vec<Vec<f64>>>,
    /// Optional correlated-observation kernel `joint_obs[x][y1][y2]`.
    /// Its marginals must agree with `obs_channels`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub joint_obs: Option<Vec<Vec<Vec<f64>>>>,
    /// Per-stage cost.
    pub cost: CostSpec,
    /// |U| for the table cost branch (ignored by the squared-error branch,
    /// whose decisions are reals).
    pub num_decisions: usize,
    /// `rate_schedule[i][t]` = |M^i_t|, the message alphabet size of
    /// encoder `i` at time `t`.
    pub rate_schedule: Vec<Vec<usize>>,
    /// Number of stages T; stages are 0..T-1.
    pub horizon: usize,
}

impl FiniteModel {
    pub fn num_encoders(&self) -> usize {
        self.obs_channels.len()
    }

    pub fn is_single_encoder(&self) -> bool {
        self.num_encoders() == 1
    }

    /// Observation alphabet size of encoder `i`.
    pub fn num_obs(&self, encoder: usize) -> usize {
        self.obs_channels[encoder][0].len()
    }

    /// |M^i_t|.
    pub fn messages(&self, encoder: usize, t: usize) -> usize {
        self.rate_schedule[encoder][t]
    }

    /// `P(y1, y2 | x)` whether or not an explicit joint kernel is present;
    /// absent joint kernels mean conditionally independent observations.
    pub fn joint_obs_prob(&self, x: usize, y1: usize, y2: usize) -> f64 {
        match &self.joint_obs {
            Some(j) => j[x][y1][y2],
            None => self.obs_channels[0][x][y1] * self.obs_channels[1][x][y2],
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let n = self.num_states;
        if n < 1 {
            v.push(Violation {
                field: "num_states".into(),
                message: "must be >= 1".into(),
            });
            return v;
        }
        check_kernel(&mut v, "transition", &self.transition, n, n);
        check_distribution(&mut v, "initial", &self.initial, n);
        if self.obs_channels.is_empty() || self.obs_channels.len() > 2 {
            v.push(Violation {
                field: "obs_channels".into(),
                message: format!("expected 1 or 2 channels, got {}", self.obs_channels.len()),
            });
        }
        for (i, ch) in self.obs_channels.iter().enumerate() {
            let ny = ch.first().map_or(0, |row| row.len());
            if ny == 0 {
                v.push(Violation {
                    field: format!("obs_channels[{i}]"),
                    message: "observation alphabet must be non-empty".into(),
                });
                continue;
            }
            check_kernel(&mut v, &format!("obs_channels[{i}]"), ch, n, ny);
        }
        if let Some(j) = &self.joint_obs {
            self.validate_joint_obs(&mut v, j);
        }
        match &self.cost {
            CostSpec::Table(c) => {
                if self.num_decisions < 1 {
                    v.push(Violation {
                        field: "num_decisions".into(),
                        message: "must be >= 1".into(),
                    });
                }
                if c.len() != n {
                    v.push(Violation {
                        field: "cost".into(),
                        message: format!("expected {} rows, got {}", n, c.len()),
                    });
                } else {
                    for (x, row) in c.iter().enumerate() {
                        if row.len() != self.num_decisions {
                            v.push(Violation {
                                field: format!("cost[{x}]"),
                                message: format!(
                                    "expected {} entries, got {}",
                                    self.num_decisions,
                                    row.len()
                                ),
                            });
                            continue;
                        }
                        for (u, &e) in row.iter().enumerate() {
                            if !e.is_finite() || e < 0.0 {
                                v.push(Violation {
                                    field: format!("cost[{x}][{u}]"),
                                    message: format!("must be finite and >= 0, got {e}"),
                                });
                            }
                        }
                    }
                }
            }
            CostSpec::SquaredError {
                squared_error_target,
            } => {
                if squared_error_target.len() != n {
                    v.push(Violation {
                        field: "cost.squared_error_target".into(),
                        message: format!(
                            "expected {} entries, got {}",
                            n,
                            squared_error_target.len()
                        ),
                    });
                }
                for (x, &e) in squared_error_target.iter().enumerate() {
                    if !e.is_finite() {
                        v.push(Violation {
                            field: format!("cost.squared_error_target[{x}]"),
                            message: format!("must be finite, got {e}"),
                        });
                    }
                }
            }
        }
        if self.horizon < 1 {
            v.push(Violation {
                field: "horizon".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.rate_schedule.len() != self.num_encoders() {
            v.push(Violation {
                field: "rate_schedule".into(),
                message: format!(
                    "expected one schedule per encoder ({}), got {}",
                    self.num_encoders(),
                    self.rate_schedule.len()
                ),
            });
        }
        for (i, sched) in self.rate_schedule.iter().enumerate() {
            if sched.len() != self.horizon {
                v.push(Violation {
                    field: format!("rate_schedule[{i}]"),
                    message: format!("expected {} entries, got {}", self.horizon, sched.len()),
                });
            }
            for (t, &m) in sched.iter().enumerate() {
                if m < 1 {
                    v.push(Violation {
                        field: format!("rate_schedule[{i}][{t}]"),
                        message: "message alphabet size must be >= 1".into(),
                    });
                }
            }
        }
        v
    }

    fn validate_joint_obs(&self, v: &mut Vec<Violation>, j: &[Vec<Vec<f64>>]) {
        if self.num_encoders() != 2 {
            v.push(Violation {
                field: "joint_obs".into(),
                message: "joint kernel requires exactly two obs_channels".into(),
            });
            return;
        }
        let (n, ny1, ny2) = (self.num_states, self.num_obs(0), self.num_obs(1));
        if j.len() != n
            || j.iter()
                .any(|m| m.len() != ny1 || m.iter().any(|r| r.len() != ny2))
        {
            v.push(Violation {
                field: "joint_obs".into(),
                message: format!("expected shape [{n}][{ny1}][{ny2}]"),
            });
            return;
        }
        for (x, m) in j.iter().enumerate() {
            let mut total = 0.0;
            for row in m {
                for &e in row {
                    if e.is_nan() || e < 0.0 {
                        v.push(Violation {
                            field: format!("joint_obs[{x}]"),
                            message: format!("negative entry {e}"),
                        });
                    }
                    total += e;
                }
            }
            if (total - 1.0).abs() > KERNEL_TOL {
                v.push(Violation {
                    field: format!("joint_obs[{x}]"),
                    message: format!("entries sum to {total}, expected 1 within {KERNEL_TOL}"),
                });
            }
            for (y1, row) in m.iter().enumerate() {
                let marg: f64 = row.iter().sum();
                if (marg - self.obs_channels[0][x][y1]).abs() > KERNEL_TOL {
                    v.push(Violation {
                        field: format!("joint_obs[{x}][{y1}]"),
                        message: format!(
                            "y1-marginal {marg} differs from obs_channels[0][{x}][{y1}] = {}",
                            self.obs_channels[0][x][y1]
                        ),
                    });
                }
            }
            for y2 in 0..ny2 {
                let marg: f64 = m.iter().map(|row| row[y2]).sum();
                if (marg - self.obs_channels[1][x][y2]).abs() > KERNEL_TOL {
                    v.push(Violation {
                        field: format!("joint_obs[{x}][..][{y2}]"),
                        message: format!(
                            "y2-marginal {marg} differs from obs_channels[1][{x}][{y2}] = {}",
                            self.obs_channels[1][x][y2]
                        ),
                    });
                }
            }
        }
    }

    /// Block the state into `z_t = (x_{t-k+1}, ..., x_t)` with
    /// `k = max(d+1, m)`, so that order-`m` memory in the cost or a decoding
    /// delay of `d` stages reduces to the first-order, zero-delay problem.
    ///
    /// The first `k-1` blocks are padded by repeating `x_0`, so the delayed
    /// per-stage cost reads `c(x_{max(0, t-d)}, v_t)`. Transitions shift the
    /// block left and append a fresh state; the observation channel acts on
    /// the newest coordinate.
    pub fn augment_state(&self, order: usize, delay: usize) -> Result<FiniteModel> {
        if !self.is_single_encoder() {
            return Err(Error::Unsupported(
                "state augmentation is defined for single-encoder models only".into(),
            ));
        }
        if order < 1 {
            return Err(Error::Dimension("augmentation order must be >= 1".into()));
        }
        let block = std::cmp::max(delay + 1, order);
        let n = self.num_states;
        let nz = n.pow(block as u32);

        // Block index: coordinate 0 is the oldest state, block-1 the newest.
        let coords = |z: usize| -> Vec<usize> {
            let mut rem = z;
            let mut c = vec![0usize; block];
            for slot in (0..block).rev() {
                c[slot] = rem % n;
                rem /= n;
            }
            c
        };
        let index = |c: &[usize]| -> usize { c.iter().fold(0, |acc, &u| acc * n + u) };

        let mut transition = vec![vec![0.0; nz]; nz];
        for z in 0..nz {
            let c = coords(z);
            let newest = c[block - 1];
            for b in 0..n {
                let mut shifted: Vec<usize> = c[1..].to_vec();
                shifted.push(b);
                transition[z][index(&shifted)] += self.transition[newest][b];
            }
        }

        let mut initial = vec![0.0; nz];
        for (a, &p) in self.initial.iter().enumerate() {
            initial[index(&vec![a; block])] = p;
        }

        let ny = self.num_obs(0);
        let mut channel = vec![vec![0.0; ny]; nz];
        for z in 0..nz {
            let newest = coords(z)[block - 1];
            channel[z].copy_from_slice(&self.obs_channels[0][newest]);
        }

        let scored = block - 1 - delay;
        let cost = match &self.cost {
            CostSpec::Table(c) => {
                let mut table = vec![vec![0.0; self.num_decisions]; nz];
                for z in 0..nz {
                    table[z].copy_from_slice(&c[coords(z)[scored]]);
                }
                CostSpec::Table(table)
            }
            CostSpec::SquaredError {
                squared_error_target,
            } => CostSpec::SquaredError {
                squared_error_target: (0..nz)
                    .map(|z| squared_error_target[coords(z)[scored]])
                    .collect(),
            },
        };

        Ok(FiniteModel {
            num_states: nz,
            transition,
            initial,
            obs_channels: vec![channel],
            joint_obs: None,
            cost,
            num_decisions: self.num_decisions,
            rate_schedule: self.rate_schedule.clone(),
            horizon: self.horizon,
        })
    }
}

/// Linear-Gaussian source `x' = Ax + w`, `y = Cx + r` with quadratic cost
/// weight `Qcost` and per-time message alphabet sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussModel {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub sigma0: DMatrix<f64>,
    pub qcost: DMatrix<f64>,
    pub horizon: usize,
    pub rate_schedule: Vec<usize>,
}

impl LinearGaussModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let n = self.a.nrows();
        let m = self.c.nrows();
        if self.a.ncols() != n {
            push_dim(&mut v, "lqg.A", n, n, &self.a);
        }
        if self.c.ncols() != n {
            push_dim(&mut v, "lqg.C", m, n, &self.c);
        }
        if self.w.shape() != (n, n) {
            push_dim(&mut v, "lqg.W", n, n, &self.w);
        }
        if self.r.shape() != (m, m) {
            push_dim(&mut v, "lqg.R", m, m, &self.r);
        }
        if self.sigma0.shape() != (n, n) {
            push_dim(&mut v, "lqg.Sigma0", n, n, &self.sigma0);
        }
        if self.qcost.shape() != (n, n) {
            push_dim(&mut v, "lqg.Qcost", n, n, &self.qcost);
        }
        if self.w.shape() == (n, n) {
            check_psd(&mut v, "lqg.W", &self.w, false);
        }
        if self.sigma0.shape() == (n, n) {
            check_psd(&mut v, "lqg.Sigma0", &self.sigma0, false);
        }
        if self.r.shape() == (m, m) {
            check_psd(&mut v, "lqg.R", &self.r, true);
        }
        if self.qcost.shape() == (n, n) {
            check_psd(&mut v, "lqg.Qcost", &self.qcost, true);
        }
        if self.horizon < 1 {
            v.push(Violation {
                field: "lqg.horizon".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.rate_schedule.len() != self.horizon {
            v.push(Violation {
                field: "lqg.rate_schedule".into(),
                message: format!(
                    "expected {} entries, got {}",
                    self.horizon,
                    self.rate_schedule.len()
                ),
            });
        }
        if self.rate_schedule.iter().any(|&r| r < 1) {
            v.push(Violation {
                field: "lqg.rate_schedule".into(),
                message: "message alphabet sizes must be >= 1".into(),
            });
        }
        v
    }
}

fn push_dim(v: &mut Vec<Violation>, field: &str, rows: usize, cols: usize, m: &DMatrix<f64>) {
    v.push(Violation {
        field: field.into(),
        message: format!("expected {rows}x{cols}, got {}x{}", m.nrows(), m.ncols()),
    });
}

fn check_psd(v: &mut Vec<Violation>, field: &str, m: &DMatrix<f64>, strict: bool) {
    let asym = (m - m.transpose()).abs().max();
    if asym > PSD_TOL {
        v.push(Violation {
            field: field.into(),
            message: format!("not symmetric: max |S - S'| = {asym:e}"),
        });
        return;
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min_eig = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if strict {
        if min_eig < PSD_TOL {
            v.push(Violation {
                field: field.into(),
                message: format!("not positive definite: min eigenvalue {min_eig:e}"),
            });
        }
    } else if min_eig < -PSD_TOL {
        v.push(Violation {
            field: field.into(),
            message: format!("not positive semidefinite: min eigenvalue {min_eig:e}"),
        });
    }
}

/// Either branch of the model file format.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Finite(FiniteModel),
    LinearGauss(LinearGaussModel),
}

impl Model {
    pub fn validate(&self) -> Vec<Violation> {
        match self {
            Model::Finite(m) => m.validate(),
            Model::LinearGauss(m) => m.validate(),
        }
    }
}

fn check_distribution(v: &mut Vec<Violation>, field: &str, row: &[f64], len: usize) {
    if row.len() != len {
        v.push(Violation {
            field: field.into(),
            message: format!("expected {} entries, got {}", len, row.len()),
        });
        return;
    }
    let mut sum = 0.0;
    for (j, &e) in row.iter().enumerate() {
        if e.is_nan() || e < 0.0 || !e.is_finite() {
            v.push(Violation {
                field: format!("{field}[{j}]"),
                message: format!("must be a probability in [0,1], got {e}"),
            });
        }
        sum += e;
    }
    if (sum - 1.0).abs() > KERNEL_TOL {
        v.push(Violation {
            field: field.into(),
            message: format!("row sums to {sum}, expected 1 within {KERNEL_TOL}"),
        });
    }
}

fn check_kernel(
    v: &mut Vec<Violation>,
    field: &str,
    kernel: &[Vec<f64>],
    rows: usize,
    cols: usize,
) {
    if kernel.len() != rows {
        v.push(Violation {
            field: field.into(),
            message: format!("expected {} rows, got {}", rows, kernel.len()),
        });
        return;
    }
    for (i, row) in kernel.iter().enumerate() {
        if row.len() != cols {
            v.push(Violation {
                field: format!("{field}[{i}]"),
                message: format!("expected {} entries, got {}", cols, row.len()),
            });
            continue;
        }
        check_distribution(v, &format!("{field}[{i}]"), row, cols);
    }
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

/// A numeric entry in a model file: either a plain real or an exact rational
/// `{"num": p, "den": q}` converted at load.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum FileNum {
    Real(f64),
    Rational { num: i64, den: i64 },
}

impl FileNum {
    fn value(&self) -> Result<f64> {
        match self {
            FileNum::Real(x) => Ok(*x),
            FileNum::Rational { num, den } => {
                if *den == 0 {
                    Err(Error::Parse("rational entry with zero denominator".into()))
                } else {
                    Ok(*num as f64 / *den as f64)
                }
            }
        }
    }
}

fn vec1(v: &[FileNum]) -> Result<Vec<f64>> {
    v.iter().map(FileNum::value).collect()
}

fn vec2(v: &[Vec<FileNum>]) -> Result<Vec<Vec<f64>>> {
    v.iter().map(|r| vec1(r)).collect()
}

fn vec3(v: &[Vec<Vec<FileNum>>]) -> Result<Vec<Vec<Vec<f64>>>> {
    v.iter().map(|m| vec2(m)).collect()
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum FileCost {
    Table(Vec<Vec<FileNum>>),
    SquaredError { squared_error_target: Vec<FileNum> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LqgFile {
    #[serde(rename = "A")]
    a: Vec<Vec<FileNum>>,
    #[serde(rename = "C")]
    c: Vec<Vec<FileNum>>,
    #[serde(rename = "W")]
    w: Vec<Vec<FileNum>>,
    #[serde(rename = "R")]
    r: Vec<Vec<FileNum>>,
    #[serde(rename = "Sigma0")]
    sigma0: Vec<Vec<FileNum>>,
    #[serde(rename = "Qcost")]
    qcost: Vec<Vec<FileNum>>,
    horizon: usize,
    rate_schedule: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    lqg: Option<LqgFile>,
    num_states: Option<usize>,
    transition: Option<Vec<Vec<FileNum>>>,
    initial: Option<Vec<FileNum>>,
    obs_channels: Option<Vec<Vec<Vec<FileNum>>>>,
    joint_obs: Option<Vec<Vec<Vec<FileNum>>>>,
    cost: Option<FileCost>,
    num_decisions: Option<usize>,
    rate_schedule: Option<Vec<Vec<usize>>>,
    horizon: Option<usize>,
}

fn to_dmatrix(name: &str, v: &[Vec<FileNum>]) -> Result<DMatrix<f64>> {
    let rows = v.len();
    let cols = v.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 || v.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse(format!(
            "{name} must be a non-empty rectangular matrix"
        )));
    }
    let data = vec2(v)?;
    Ok(DMatrix::from_fn(rows, cols, |i, j| data[i][j]))
}

/// Parse a model from JSON text. Returns a validation error if any type
/// invariant is violated.
pub fn parse_model(text: &str) -> Result<Model> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let model = if let Some(lqg) = &file.lqg {
        if file.num_states.is_some() || file.transition.is_some() || file.cost.is_some() {
            return Err(Error::Parse(
                "a model file must contain either `lqg` or the finite-model fields, not both"
                    .into(),
            ));
        }
        Model::LinearGauss(LinearGaussModel {
            a: to_dmatrix("lqg.A", &lqg.a)?,
            c: to_dmatrix("lqg.C", &lqg.c)?,
            w: to_dmatrix("lqg.W", &lqg.w)?,
            r: to_dmatrix("lqg.R", &lqg.r)?,
            sigma0: to_dmatrix("lqg.Sigma0", &lqg.sigma0)?,
            qcost: to_dmatrix("lqg.Qcost", &lqg.qcost)?,
            horizon: lqg.horizon,
            rate_schedule: lqg.rate_schedule.clone(),
        })
    } else {
        let missing = |name: &str| Error::Parse(format!("missing required field `{name}`"));
        Model::Finite(FiniteModel {
            num_states: file.num_states.ok_or_else(|| missing("num_states"))?,
            transition: vec2(
                file.transition
                    .as_deref()
                    .ok_or_else(|| missing("transition"))?,
            )?,
            initial: vec1(file.initial.as_deref().ok_or_else(|| missing("initial"))?)?,
            obs_channels: vec3(
                file.obs_channels
                    .as_deref()
                    .ok_or_else(|| missing("obs_channels"))?,
            )?,
            joint_obs: match &file.joint_obs {
                Some(j) => Some(vec3(j)?),
                None => None,
            },
            cost: match file.cost.as_ref().ok_or_else(|| missing("cost"))? {
                FileCost::Table(t) => CostSpec::Table(vec2(t)?),
                FileCost::SquaredError {
                    squared_error_target,
                } => CostSpec::SquaredError {
                    squared_error_target: vec1(squared_error_target)?,
                },
            },
            num_decisions: file.num_decisions.ok_or_else(|| missing("num_decisions"))?,
            rate_schedule: file
                .rate_schedule
                .clone()
                .ok_or_else(|| missing("rate_schedule"))?,
            horizon: file.horizon.ok_or_else(|| missing("horizon"))?,
        })
    };
    let violations = model.validate();
    if violations.is_empty() {
        Ok(model)
    } else {
        Err(Error::Validation(violations))
    }
}

/// Load and validate a model file.
pub fn load_model<P: AsRef<Path>>(path: P) -> Result<Model> {
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io {
        path: path.as_ref().display().to_string(),
        source: e,
    })?;
    parse_model(&text)
}

fn matrix_json(m: &DMatrix<f64>) -> serde_json::Value {
    serde_json::json!((0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

/// Serialize a model back to the documented JSON schema.
pub fn model_to_json(model: &Model) -> serde_json::Value {
    match model {
        Model::Finite(m) => serde_json::to_value(m).expect("finite model serializes"),
        Model::LinearGauss(m) => serde_json::json!({
            "lqg": {
                "A": matrix_json(&m.a),
                "C": matrix_json(&m.c),
                "W": matrix_json(&m.w),
                "R": matrix_json(&m.r),
                "Sigma0": matrix_json(&m.sigma0),
                "Qcost": matrix_json(&m.qcost),
                "horizon": m.horizon,
                "rate_schedule": m.rate_schedule,
            }
        }),
    }
}

/// Write a model to disk in the documented JSON schema.
pub fn save_model<P: AsRef<Path>>(model: &Model, path: P) -> Result<()> {
    let text =
        serde_json::to_string_pretty(&model_to_json(model)).expect("model serializes to JSON");
    std::fs::write(&path, text + "\n").map_err(|e| Error::Io {
        path: path.as_ref().display().to_string(),
        source: e,
    })
}
