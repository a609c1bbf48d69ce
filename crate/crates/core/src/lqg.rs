//! The linear-Gaussian branch: Kalman filtering, scalar quantizer design,
//! and a seeded Monte Carlo check of the distortion decomposition
//!
//! ```text
//! E||x - E[x|q]||_Q^2 = E||x - m||_Q^2 + E||m - E[m|q]||_Q^2,   m = E[x|y-history]
//! ```
//!
//! which holds because the estimation error is orthogonal to everything
//! measurable with respect to the observation history, messages included.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::LinearGaussModel;

/// Filter state ready to absorb the observation at `time`: `mean` is the
/// posterior mean of the previous stage (zero before the first
/// observation), `pred_cov` is the one-step predictive covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: DVector<f64>,
    pub pred_cov: DMatrix<f64>,
    pub time: usize,
}

impl KalmanState {
    /// Prior state: zero mean and `Sigma0` as the predictive covariance.
    pub fn initial(model: &LinearGaussModel) -> Self {
        KalmanState {
            mean: DVector::zeros(model.state_dim()),
            pred_cov: model.sigma0.clone(),
            time: 0,
        }
    }
}

fn check_psd_input(pred_cov: &DMatrix<f64>) -> Result<()> {
    let asym = (pred_cov - pred_cov.transpose()).abs().max();
    if asym > 1e-10 {
        return Err(Error::Dimension(format!(
            "predictive covariance not symmetric: max asymmetry {asym:e}"
        )));
    }
    let sym = (pred_cov + pred_cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let min_eig = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 {
        return Err(Error::Dimension(format!(
            "predictive covariance not PSD: min eigenvalue {min_eig:e}"
        )));
    }
    Ok(())
}

/// One Riccati update of the predictive covariance,
/// `S+ = A S A' + W - (A S C')(C S C' + R)^{-1}(C S A')`, symmetrized.
pub fn cov_step(model: &LinearGaussModel, pred_cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_psd_input(pred_cov)?;
    let a = &model.a;
    let c = &model.c;
    let s = c * pred_cov * c.transpose() + &model.r;
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Dimension("innovation covariance not invertible".into()))?;
    let asc = a * pred_cov * c.transpose();
    // (A S C') S^{-1} (C S A') via the Cholesky solve.
    let solved = chol.solve(&asc.transpose());
    let next = a * pred_cov * a.transpose() + &model.w - &asc * solved;
    Ok((&next + next.transpose()) * 0.5)
}

/// Absorb one observation: innovation update of the mean with gain
/// `S C'(C S C' + R)^{-1}`, then the Riccati step for the covariance.
pub fn kalman_step(
    model: &LinearGaussModel,
    state: &KalmanState,
    y: &DVector<f64>,
) -> Result<KalmanState> {
    if y.len() != model.obs_dim() {
        return Err(Error::Dimension(format!(
            "observation has dimension {}, expected {}",
            y.len(),
            model.obs_dim()
        )));
    }
    if state.mean.len() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "state mean has dimension {}, expected {}",
            state.mean.len(),
            model.state_dim()
        )));
    }
    let c = &model.c;
    let predicted = &model.a * &state.mean;
    let innovation = y - c * &predicted;
    let s = c * &state.pred_cov * c.transpose() + &model.r;
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Dimension("innovation covariance not invertible".into()))?;
    // Gain K = P C' S^{-1}; computed as (S^{-1} (C P'))' = (S^{-1} C P)'.
    let gain = chol.solve(&(c * &state.pred_cov)).transpose();
    let mean = predicted + &gain * innovation;
    let pred_cov = cov_step(model, &state.pred_cov)?;
    Ok(KalmanState {
        mean,
        pred_cov,
        time: state.time + 1,
    })
}

/// Independent oracle for the filter: exact conditional means
/// `E[x_t | y_{[0,t]}]` by linear solves against the joint covariance of the
/// stacked state/observation vector. Shares no code with `kalman_step`.
pub fn batch_conditional(
    model: &LinearGaussModel,
    y_path: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let horizon = y_path.len();
    if horizon > 20 {
        return Err(Error::Unsupported(
            "batch conditioning is a dense oracle; horizon is capped at 20".into(),
        ));
    }
    let n = model.state_dim();
    let m = model.obs_dim();
    for (t, y) in y_path.iter().enumerate() {
        if y.len() != m {
            return Err(Error::Dimension(format!(
                "observation {t} has dimension {}, expected {m}",
                y.len()
            )));
        }
    }
    // Powers of A and pairwise state covariances
    // Cov(x_s, x_t) = A^s Sigma0 (A^t)' + sum_{j < min(s,t)} A^{s-1-j} W (A^{t-1-j})'.
    let mut powers: Vec<DMatrix<f64>> = vec![DMatrix::identity(n, n)];
    for _ in 1..horizon.max(1) {
        powers.push(&model.a * powers.last().unwrap());
    }
    let cov_x = |s: usize, t: usize| -> DMatrix<f64> {
        let mut cov = &powers[s] * &model.sigma0 * powers[t].transpose();
        for j in 0..s.min(t) {
            cov += &powers[s - 1 - j] * &model.w * powers[t - 1 - j].transpose();
        }
        cov
    };
    let mut means = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let dim = (t + 1) * m;
        let mut joint = DMatrix::zeros(dim, dim);
        let mut cross = DMatrix::zeros(n, dim);
        let mut stacked = DVector::zeros(dim);
        for s in 0..=t {
            for u in 0..=t {
                let block = &model.c * cov_x(s, u) * model.c.transpose()
                    + if s == u {
                        model.r.clone()
                    } else {
                        DMatrix::zeros(m, m)
                    };
                joint.view_mut((s * m, u * m), (m, m)).copy_from(&block);
            }
            let xy = cov_x(t, s) * model.c.transpose();
            cross.view_mut((0, s * m), (n, m)).copy_from(&xy);
            stacked.rows_mut(s * m, m).copy_from(&y_path[s]);
        }
        let chol = joint
            .cholesky()
            .ok_or_else(|| Error::Dimension("joint observation covariance singular".into()))?;
        let solved = chol.solve(&stacked);
        means.push(&cross * solved);
    }
    Ok(means)
}

// ---------------------------------------------------------------------------
// Scalar quantizers
// ---------------------------------------------------------------------------

/// A scalar quantizer given by strictly increasing thresholds and one
/// reproduction point per cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarQuantizer {
    pub thresholds: Vec<f64>,
    pub points: Vec<f64>,
}

impl ScalarQuantizer {
    pub fn levels(&self) -> usize {
        self.points.len()
    }

    /// Cell index of a sample.
    pub fn cell(&self, x: f64) -> usize {
        self.thresholds.iter().take_while(|&&t| x > t).count()
    }

    pub fn reproduce(&self, x: f64) -> f64 {
        self.points[self.cell(x)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerMethod {
    Uniform,
    Lloyd,
}

/// Design a scalar quantizer from samples: `Uniform` spans the sample range
/// with equal-width cells and midpoint reproductions; `Lloyd` iterates
/// centroid/midpoint updates from the uniform initializer until the largest
/// centroid movement is below 1e-9 or 200 iterations.
pub fn design_quantizer(
    samples: &[f64],
    levels: usize,
    method: QuantizerMethod,
) -> Result<ScalarQuantizer> {
    if levels < 1 {
        return Err(Error::Dimension(
            "quantizer needs at least one level".into(),
        ));
    }
    if samples.is_empty() {
        return Err(Error::Dimension("quantizer design needs samples".into()));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let uniform = uniform_quantizer(lo, hi, levels);
    match method {
        QuantizerMethod::Uniform => Ok(uniform),
        QuantizerMethod::Lloyd => Ok(lloyd_iterate(samples, uniform).0),
    }
}

fn uniform_quantizer(lo: f64, hi: f64, levels: usize) -> ScalarQuantizer {
    if levels == 1 {
        return ScalarQuantizer {
            thresholds: vec![],
            points: vec![(lo + hi) * 0.5],
        };
    }
    let width = (hi - lo) / levels as f64;
    let thresholds: Vec<f64> = (1..levels).map(|k| lo + width * k as f64).collect();
    let points: Vec<f64> = (0..levels).map(|k| lo + width * (k as f64 + 0.5)).collect();
    ScalarQuantizer { thresholds, points }
}

/// Lloyd iterations from an initializer; returns the quantizer and the
/// distortion after each iteration (non-increasing).
pub(crate) fn lloyd_iterate(samples: &[f64], init: ScalarQuantizer) -> (ScalarQuantizer, Vec<f64>) {
    let levels = init.levels();
    let mut points = init.points;
    let mut distortions = Vec::new();
    for _ in 0..200 {
        let thresholds: Vec<f64> = points.windows(2).map(|w| (w[0] + w[1]) * 0.5).collect();
        let quantizer = ScalarQuantizer {
            thresholds,
            points: points.clone(),
        };
        let mut sums = vec![0.0; levels];
        let mut counts = vec![0usize; levels];
        let mut distortion = 0.0;
        for &x in samples {
            let cell = quantizer.cell(x);
            sums[cell] += x;
            counts[cell] += 1;
            let e = x - points[cell];
            distortion += e * e;
        }
        distortions.push(distortion / samples.len() as f64);
        let mut movement = 0.0f64;
        let mut next = points.clone();
        for k in 0..levels {
            if counts[k] > 0 {
                let centroid = sums[k] / counts[k] as f64;
                movement = movement.max((centroid - points[k]).abs());
                next[k] = centroid;
            }
        }
        points = next;
        if movement < 1e-9 {
            break;
        }
    }
    let thresholds: Vec<f64> = points.windows(2).map(|w| (w[0] + w[1]) * 0.5).collect();
    (ScalarQuantizer { thresholds, points }, distortions)
}

// ---------------------------------------------------------------------------
// Separation Monte Carlo (scalar pipeline)
// ---------------------------------------------------------------------------

/// Output of [`simulate_separation`]: all terms are sums over stages of
/// per-stage expectations in the `Qcost`-weighted squared norm.
#[derive(Debug, Clone, Serialize)]
pub struct SeparationReport {
    pub total_distortion: f64,
    pub filter_term: f64,
    pub quantize_term: f64,
    /// `|total - filter - quantize| / max(total, eps)`; pure Monte Carlo
    /// noise since the identity is exact.
    pub residual: f64,
    pub n_paths: u64,
    pub seed: u64,
}

const MC_BLOCK: u64 = 10_000;
const PILOT_STREAM_BASE: u64 = 1 << 48;

fn scalar_params(model: &LinearGaussModel) -> Result<(f64, f64, f64, f64, f64, f64)> {
    if model.state_dim() != 1 || model.obs_dim() != 1 {
        return Err(Error::Unsupported(
            "the quantized pipeline is scalar in v1; state and observation must be 1-dim".into(),
        ));
    }
    Ok((
        model.a[(0, 0)],
        model.c[(0, 0)],
        model.w[(0, 0)],
        model.r[(0, 0)],
        model.sigma0[(0, 0)],
        model.qcost[(0, 0)],
    ))
}

/// Per-stage Kalman gains and predictive variances; the covariance
/// recursion is deterministic so it is shared by all paths.
fn scalar_gains(model: &LinearGaussModel) -> Result<Vec<(f64, f64)>> {
    let (_, c, _, r, sigma0, _) = scalar_params(model)?;
    let mut out = Vec::with_capacity(model.horizon);
    let mut cov = DMatrix::from_element(1, 1, sigma0);
    for _ in 0..model.horizon {
        let pred = cov[(0, 0)];
        let gain = pred * c / (c * c * pred + r);
        out.push((gain, pred));
        cov = cov_step(model, &cov)?;
    }
    Ok(out)
}

/// Simulate one path, calling `visit(t, x_t, mean_t)` per stage.
fn walk_path<R: Rng>(
    model: &LinearGaussModel,
    gains: &[(f64, f64)],
    rng: &mut R,
    mut visit: impl FnMut(usize, f64, f64),
) {
    let (a, c, w, r, sigma0, _) = scalar_params(model).expect("checked scalar");
    let mut x = sigma0.sqrt() * rng.sample::<f64, _>(StandardNormal);
    let mut mean = 0.0;
    for (t, &(gain, _)) in gains.iter().enumerate() {
        if t > 0 {
            x = a * x + w.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        let y = c * x + r.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let predicted = a * mean;
        mean = if t == 0 {
            gain * y
        } else {
            predicted + gain * (y - c * predicted)
        };
        visit(t, x, mean);
    }
}

fn block_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw `n` pilot paths and return the filtered means per stage, for
/// quantizer design. Pilot streams are disjoint from evaluation streams.
pub fn pilot_mean_samples(model: &LinearGaussModel, n: u64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let gains = scalar_gains(model)?;
    let horizon = model.horizon;
    let blocks = n.div_ceil(MC_BLOCK);
    let partials: Vec<Vec<Vec<f64>>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, PILOT_STREAM_BASE + b);
            let count = MC_BLOCK.min(n - b * MC_BLOCK);
            let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(count as usize); horizon];
            for _ in 0..count {
                walk_path(model, &gains, &mut rng, |t, _, mean| samples[t].push(mean));
            }
            samples
        })
        .collect();
    let mut merged: Vec<Vec<f64>> = vec![Vec::with_capacity(n as usize); horizon];
    for block in partials {
        for (t, mut s) in block.into_iter().enumerate() {
            merged[t].append(&mut s);
        }
    }
    Ok(merged)
}

/// Two-pass seeded Monte Carlo of the quantized estimation pipeline.
///
/// Pass one simulates `n_paths` paths, quantizes the filtered mean at each
/// stage, and accumulates per-cell means of the filtered mean; pass two
/// replays the same streams and scores the three distortion terms against
/// the frozen per-cell decoder. `quantizers = None` runs the identity
/// pipeline (no quantization), whose quantize term is exactly zero.
pub fn simulate_separation(
    model: &LinearGaussModel,
    quantizers: Option<&[ScalarQuantizer]>,
    n_paths: u64,
    seed: u64,
) -> Result<SeparationReport> {
    let gains = scalar_gains(model)?;
    let (_, _, _, _, _, qcost) = scalar_params(model)?;
    let horizon = model.horizon;
    if let Some(qs) = quantizers {
        if qs.len() != horizon {
            return Err(Error::Dimension(format!(
                "need one quantizer per stage: got {}, horizon {}",
                qs.len(),
                horizon
            )));
        }
    }
    if n_paths == 0 {
        return Err(Error::Dimension("need at least one path".into()));
    }
    let blocks = n_paths.div_ceil(MC_BLOCK);

    // Pass 1: per-(stage, cell) sums of the filtered mean.
    let cell_means: Option<Vec<Vec<f64>>> = match quantizers {
        None => None,
        Some(qs) => {
            let partials: Vec<(Vec<Vec<f64>>, Vec<Vec<u64>>)> = (0..blocks)
                .into_par_iter()
                .map(|b| {
                    let mut rng = block_rng(seed, b);
                    let count = MC_BLOCK.min(n_paths - b * MC_BLOCK);
                    let mut sums: Vec<Vec<f64>> =
                        qs.iter().map(|q| vec![0.0; q.levels()]).collect();
                    let mut counts: Vec<Vec<u64>> =
                        qs.iter().map(|q| vec![0; q.levels()]).collect();
                    for _ in 0..count {
                        walk_path(model, &gains, &mut rng, |t, _, mean| {
                            let cell = qs[t].cell(mean);
                            sums[t][cell] += mean;
                            counts[t][cell] += 1;
                        });
                    }
                    (sums, counts)
                })
                .collect();
            let mut sums: Vec<Vec<f64>> = qs.iter().map(|q| vec![0.0; q.levels()]).collect();
            let mut counts: Vec<Vec<u64>> = qs.iter().map(|q| vec![0; q.levels()]).collect();
            for (bs, bc) in partials {
                for t in 0..horizon {
                    for k in 0..bs[t].len() {
                        sums[t][k] += bs[t][k];
                        counts[t][k] += bc[t][k];
                    }
                }
            }
            Some(
                sums.into_iter()
                    .zip(counts)
                    .map(|(s, c)| {
                        s.into_iter()
                            .zip(c)
                            .map(|(sum, count)| if count > 0 { sum / count as f64 } else { 0.0 })
                            .collect()
                    })
                    .collect(),
            )
        }
    };

    // Pass 2: replay the same streams against the frozen decoder.
    let partials: Vec<(f64, f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, b);
            let count = MC_BLOCK.min(n_paths - b * MC_BLOCK);
            let (mut lhs, mut filt, mut quant) = (0.0, 0.0, 0.0);
            for _ in 0..count {
                walk_path(model, &gains, &mut rng, |t, x, mean| {
                    let decoded = match (&cell_means, quantizers) {
                        (Some(cm), Some(qs)) => cm[t][qs[t].cell(mean)],
                        _ => mean,
                    };
                    lhs += qcost * (x - decoded) * (x - decoded);
                    filt += qcost * (x - mean) * (x - mean);
                    quant += qcost * (mean - decoded) * (mean - decoded);
                });
            }
            (lhs, filt, quant)
        })
        .collect();
    let (mut lhs, mut filt, mut quant) = (0.0, 0.0, 0.0);
    for (l, f, q) in partials {
        lhs += l;
        filt += f;
        quant += q;
    }
    let n = n_paths as f64;
    let (lhs, filt, quant) = (lhs / n, filt / n, quant / n);
    let residual = (lhs - filt - quant).abs() / lhs.max(f64::MIN_POSITIVE);
    Ok(SeparationReport {
        total_distortion: lhs,
        filter_term: filt,
        quantize_term: quant,
        residual,
        n_paths,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(
        a: f64,
        c: f64,
        w: f64,
        r: f64,
        sigma0: f64,
        horizon: usize,
    ) -> LinearGaussModel {
        LinearGaussModel {
            a: DMatrix::from_element(1, 1, a),
            c: DMatrix::from_element(1, 1, c),
            w: DMatrix::from_element(1, 1, w),
            r: DMatrix::from_element(1, 1, r),
            sigma0: DMatrix::from_element(1, 1, sigma0),
            qcost: DMatrix::from_element(1, 1, 1.0),
            horizon,
            rate_schedule: vec![4; horizon],
        }
    }

    #[test]
    fn cov_step_scalar_fixture() {
        let m = scalar_model(1.0, 1.0, 1.0, 1.0, 1.0, 1);
        let next = cov_step(&m, &m.sigma0).unwrap();
        assert_eq!(next[(0, 0)], 1.5);
    }

    #[test]
    fn cov_step_no_noise_large_r_keeps_variance() {
        let m = scalar_model(1.0, 1.0, 0.0, 1e9, 1.0, 1);
        let next = cov_step(&m, &m.sigma0).unwrap();
        assert!((next[(0, 0)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn kalman_single_step_closed_form() {
        let (c, r, sigma0) = (2.0, 0.5, 1.5);
        let m = scalar_model(0.9, c, 0.3, r, sigma0, 3);
        let y0 = 1.25;
        let state =
            kalman_step(&m, &KalmanState::initial(&m), &DVector::from_element(1, y0)).unwrap();
        let expected = sigma0 * c / (c * c * sigma0 + r) * y0;
        assert!((state.mean[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_observations_keep_zero_mean() {
        let m = scalar_model(0.9, 1.0, 0.3, 0.4, 1.0, 5);
        let mut state = KalmanState::initial(&m);
        for _ in 0..5 {
            state = kalman_step(&m, &state, &DVector::from_element(1, 0.0)).unwrap();
            assert_eq!(state.mean[0], 0.0);
        }
    }

    #[test]
    fn batch_matches_kalman_on_scalar_path() {
        let m = scalar_model(0.9, 1.3, 0.3, 0.4, 1.1, 3);
        let ys = [0.7, -0.2, 1.4];
        let y_path: Vec<DVector<f64>> = ys.iter().map(|&y| DVector::from_element(1, y)).collect();
        let batch = batch_conditional(&m, &y_path).unwrap();
        let mut state = KalmanState::initial(&m);
        for (t, y) in y_path.iter().enumerate() {
            state = kalman_step(&m, &state, y).unwrap();
            assert!(
                (state.mean[0] - batch[t][0]).abs() < 1e-8,
                "t={t}: {} vs {}",
                state.mean[0],
                batch[t][0]
            );
        }
    }

    #[test]
    fn batch_deterministic_system_ignores_observations() {
        let mut m = scalar_model(0.9, 1.0, 0.0, 0.4, 0.0, 2);
        m.w = DMatrix::from_element(1, 1, 0.0);
        m.sigma0 = DMatrix::from_element(1, 1, 0.0);
        let y_path = vec![
            DVector::from_element(1, 3.0),
            DVector::from_element(1, -2.0),
        ];
        let means = batch_conditional(&m, &y_path).unwrap();
        // x0 = 0 surely, so every conditional mean is the zero trajectory.
        assert!(means[0][0].abs() < 1e-12);
        assert!(means[1][0].abs() < 1e-12);
    }

    #[test]
    fn quantizer_single_level() {
        let samples = [1.0, 2.0, 4.0];
        let uniform = design_quantizer(&samples, 1, QuantizerMethod::Uniform).unwrap();
        assert_eq!(uniform.points, vec![2.5]);
        let lloyd = design_quantizer(&samples, 1, QuantizerMethod::Lloyd).unwrap();
        assert!((lloyd.points[0] - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn quantizer_symmetric_two_level() {
        let mut samples = vec![-1.0; 1000];
        samples.extend(vec![1.0; 1000]);
        let q = design_quantizer(&samples, 2, QuantizerMethod::Lloyd).unwrap();
        assert_eq!(q.thresholds.len(), 1);
        assert!(q.thresholds[0].abs() < 1e-9);
        assert!((q.points[0] + 1.0).abs() < 1e-9);
        assert!((q.points[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lloyd_distortion_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..20_000)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (_, trace) = lloyd_iterate(&samples, uniform_quantizer(lo, hi, 4));
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn identity_pipeline_has_zero_quantize_term() {
        let m = scalar_model(0.9, 1.0, 0.3, 0.4, 1.0, 3);
        let report = simulate_separation(&m, None, 20_000, 11).unwrap();
        assert_eq!(report.quantize_term, 0.0);
        assert!(report.residual < 1e-12);
    }

    #[test]
    fn simulation_is_reproducible_and_thread_count_independent() {
        let m = scalar_model(0.9, 1.0, 0.3, 0.4, 1.0, 3);
        let samples = pilot_mean_samples(&m, 5_000, 3).unwrap();
        let qs: Vec<ScalarQuantizer> = samples
            .iter()
            .map(|s| design_quantizer(s, 4, QuantizerMethod::Lloyd).unwrap())
            .collect();
        let a = simulate_separation(&m, Some(&qs), 30_000, 3).unwrap();
        let b = simulate_separation(&m, Some(&qs), 30_000, 3).unwrap();
        assert_eq!(a.total_distortion, b.total_distortion);
        assert_eq!(a.quantize_term, b.quantize_term);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let c = pool.install(|| simulate_separation(&m, Some(&qs), 30_000, 3).unwrap());
        assert_eq!(a.total_distortion, c.total_distortion);
    }
}
