//! Seeded random instance generation for the verification suites.
//!
//! Kernel rows are sampled from a flat Dirichlet (normalized unit
//! exponentials) and cost entries uniformly on [0, 1]. A master seed yields
//! per-instance seeds by drawing one u64 per instance, in order, from a
//! ChaCha8 stream seeded with the master; each instance then uses its own
//! ChaCha8 stream, so suites are reproducible and order-independent across
//! machines.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{CostSpec, FiniteModel, LinearGaussModel};

/// Per-instance seeds derived from a master seed.
pub fn derive_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..count).map(|_| rng.random()).collect()
}

fn dirichlet_row<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    // Unit exponentials normalized; 1 - U keeps the log argument in (0, 1].
    let draws: Vec<f64> = (0..len)
        .map(|_| -f64::ln(1.0 - rng.random::<f64>()))
        .collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|d| d / total).collect()
}

fn kernel<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| dirichlet_row(rng, cols)).collect()
}

/// Shape of a random single-encoder instance.
#[derive(Debug, Clone, Copy)]
pub struct SingleSpec {
    pub num_states: usize,
    pub num_obs: usize,
    pub num_messages: usize,
    pub num_decisions: usize,
    pub horizon: usize,
}

/// Random single-encoder model: Dirichlet transition/observation rows and
/// uniform [0,1] costs.
pub fn random_single_model(seed: u64, spec: SingleSpec) -> FiniteModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.num_states;
    let model = FiniteModel {
        num_states: n,
        transition: kernel(&mut rng, n, n),
        initial: dirichlet_row(&mut rng, n),
        obs_channels: vec![kernel(&mut rng, n, spec.num_obs)],
        joint_obs: None,
        cost: CostSpec::Table(
            (0..n)
                .map(|_| {
                    (0..spec.num_decisions)
                        .map(|_| rng.random::<f64>())
                        .collect()
                })
                .collect(),
        ),
        num_decisions: spec.num_decisions,
        rate_schedule: vec![vec![spec.num_messages; spec.horizon]],
        horizon: spec.horizon,
    };
    debug_assert!(model.validate().is_empty());
    model
}

/// Shape of a random i.i.d. two-encoder instance. Rates are per encoder,
/// per stage.
#[derive(Debug, Clone)]
pub struct TeamSpec {
    pub num_states: usize,
    pub num_obs: usize,
    pub num_decisions: usize,
    pub rate_schedule: Vec<Vec<usize>>,
}

/// Random i.i.d.-source team model: every transition row equals the
/// marginal, so the state sequence is independent across time, and the
/// encoders share a random joint observation kernel (correlated
/// observations allowed).
pub fn random_iid_team_model(seed: u64, spec: &TeamSpec) -> FiniteModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.num_states;
    let ny = spec.num_obs;
    let marginal = dirichlet_row(&mut rng, n);
    let joint: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| {
            let flat = dirichlet_row(&mut rng, ny * ny);
            (0..ny)
                .map(|y1| flat[y1 * ny..(y1 + 1) * ny].to_vec())
                .collect()
        })
        .collect();
    let ch1: Vec<Vec<f64>> = joint
        .iter()
        .map(|m| m.iter().map(|row| row.iter().sum()).collect())
        .collect();
    let ch2: Vec<Vec<f64>> = joint
        .iter()
        .map(|m| {
            (0..ny)
                .map(|y2| m.iter().map(|row| row[y2]).sum())
                .collect()
        })
        .collect();
    let horizon = spec.rate_schedule[0].len();
    let model = FiniteModel {
        num_states: n,
        transition: vec![marginal.clone(); n],
        initial: marginal,
        obs_channels: vec![ch1, ch2],
        joint_obs: Some(joint),
        cost: CostSpec::Table(
            (0..n)
                .map(|_| {
                    (0..spec.num_decisions)
                        .map(|_| rng.random::<f64>())
                        .collect()
                })
                .collect(),
        ),
        num_decisions: spec.num_decisions,
        rate_schedule: spec.rate_schedule.clone(),
        horizon,
    };
    debug_assert!(model.validate().is_empty(), "{:?}", model.validate());
    model
}

fn random_spd<R: Rng>(rng: &mut R, dim: usize, ridge: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    &g * g.transpose() / dim as f64 + DMatrix::identity(dim, dim) * ridge
}

/// Random linear-Gaussian model with well-conditioned noise covariances.
pub fn random_lqg_model(
    seed: u64,
    state_dim: usize,
    obs_dim: usize,
    horizon: usize,
    rate: usize,
) -> LinearGaussModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = LinearGaussModel {
        a: DMatrix::from_fn(state_dim, state_dim, |_, _| rng.random::<f64>() * 2.0 - 1.0),
        c: DMatrix::from_fn(obs_dim, state_dim, |_, _| rng.random::<f64>() * 2.0 - 1.0),
        w: random_spd(&mut rng, state_dim, 0.05),
        r: random_spd(&mut rng, obs_dim, 0.1),
        sigma0: random_spd(&mut rng, state_dim, 0.05),
        qcost: DMatrix::identity(state_dim, state_dim),
        horizon,
        rate_schedule: vec![rate; horizon],
    };
    debug_assert!(model.validate().is_empty(), "{:?}", model.validate());
    model
}
