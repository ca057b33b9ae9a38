//! Batch gradient descent on `W`, ascent on `M`, with `Y` at its optimum.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_divergence, SmicaState};
use crate::linalg::{spd_condition, symmetrize};
use crate::metrics::{decorrelation_error, mse};
use crate::{Error, Result, SignalMatrix};

const MAX_M_CONDITION: f64 = 1e12;

/// `(1/T) Σ_t ‖y_t‖² x_t x_tᵀ`.
pub fn gamma_inv(x: &SignalMatrix, y: &SignalMatrix) -> Result<DMatrix<f64>> {
    if x.samples() != y.samples() {
        return Err(Error::invalid(format!("x has {} samples, y has {}", x.samples(), y.samples())));
    }
    let xm = x.as_matrix();
    let mut weighted = xm.clone();
    for (mut col, yc) in weighted.column_iter_mut().zip(y.as_matrix().column_iter()) {
        col *= yc.norm_squared();
    }
    let mut g = weighted * xm.transpose();
    g /= x.samples() as f64;
    symmetrize(&mut g);
    Ok(g)
}

fn check_dims(state: &SmicaState, x: &SignalMatrix) -> Result<()> {
    if x.channels() != state.dim() {
        return Err(Error::invalid(format!("state has dimension {}, data has {} channels", state.dim(), x.channels())));
    }
    Ok(())
}

/// The min-max objective with `Γ⁻¹` built from the given outputs.
pub fn loss(state: &SmicaState, x: &SignalMatrix, y: &SignalMatrix) -> Result<f64> {
    check_dims(state, x)?;
    if y.channels() != state.dim() {
        return Err(Error::invalid("output dimension differs from state"));
    }
    let g = gamma_inv(x, y)?;
    let t = x.samples() as f64;
    let (xm, ym) = (x.as_matrix(), y.as_matrix());
    let wx = &state.w * xm;
    let my = &state.m * ym;
    let data = (-2.0 * wx.dot(ym) + ym.dot(&my)) / t;
    let wg = &state.w * g * state.w.transpose();
    let reg: f64 = (0..state.dim()).map(|i| wg[(i, i)] / state.lambda_sq[i] - state.m[(i, i)]).sum();
    Ok(data + reg)
}

/// Solves `M Y = W X`.
pub fn optimal_y(state: &SmicaState, x: &SignalMatrix) -> Result<SignalMatrix> {
    check_dims(state, x)?;
    let cond = spd_condition(&state.m)?;
    if !(cond <= MAX_M_CONDITION) {
        return Err(Error::IllConditioned { condition: cond });
    }
    let chol = state.m.clone().cholesky().ok_or(Error::IllConditioned { condition: cond })?;
    SignalMatrix::new(chol.solve(&(&state.w * x.as_matrix())))
}

/// One alternating update from `Y = optimal_y(state, x)`.
pub fn offline_step(state: &SmicaState, x: &SignalMatrix) -> Result<SmicaState> {
    let y = optimal_y(state, x)?;
    Ok(step_with(state, x, &y))
}

fn step_with(state: &SmicaState, x: &SignalMatrix, y: &SignalMatrix) -> SmicaState {
    let d = state.dim();
    let t = x.samples() as f64;
    let (xm, ym) = (x.as_matrix(), y.as_matrix());
    let g = gamma_inv(x, y).expect("shapes checked by optimal_y");
    let mut wg = &state.w * g;
    for i in 0..d {
        wg.row_mut(i).unscale_mut(state.lambda_sq[i]);
    }
    let yx = ym * xm.transpose() / t;
    let mut next = state.clone();
    next.w += (yx - wg) * (2.0 * state.eta);
    let yy = ym * ym.transpose() / t;
    next.m += (yy - DMatrix::identity(d, d)) * (state.eta / state.tau);
    symmetrize(&mut next.m);
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfflineConfig {
    pub epochs: usize,
    /// Diagnostics are recorded every this many epochs and at the last one.
    pub diagnostics_every: usize,
}

impl OfflineConfig {
    pub fn new(epochs: usize) -> Self {
        Self { epochs, diagnostics_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDiagnostics {
    pub epoch: usize,
    pub objective: f64,
    pub mse: Option<f64>,
    /// `‖(1/T) Y Yᵀ − I‖_F`.
    pub decorrelation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineFitReport {
    pub epochs: usize,
    pub diagnostics: Vec<EpochDiagnostics>,
    pub outputs: SignalMatrix,
    pub state: SmicaState,
}

pub fn fit_offline(
    x: &SignalMatrix,
    config: OfflineConfig,
    state0: SmicaState,
    truth: Option<&SignalMatrix>,
) -> Result<OfflineFitReport> {
    if config.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    state0.validate()?;
    check_dims(&state0, x)?;
    if let Some(s) = truth {
        if s.channels() != x.channels() || s.samples() != x.samples() {
            return Err(Error::invalid("truth shape differs from the mixture"));
        }
    }
    let every = config.diagnostics_every.max(1);
    let mut state = state0;
    let mut diagnostics = Vec::new();
    for epoch in 1..=config.epochs {
        let y = optimal_y(&state, x)?;
        let last = epoch == config.epochs;
        if epoch % every == 0 || last || epoch == 1 {
            diagnostics.push(EpochDiagnostics {
                epoch,
                objective: loss(&state, x, &y)?,
                mse: truth.map(|s| mse(s, &y)).transpose()?,
                decorrelation: decorrelation_error(&y),
            });
        }
        state = step_with(&state, x, &y);
        check_divergence(&state.w, || format!("epoch {epoch}"))?;
    }
    let outputs = optimal_y(&state, x)?;
    Ok(OfflineFitReport { epochs: config.epochs, diagnostics, outputs, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fobi::fobi_separate;
    use crate::linalg::{min_eigenvalue, whiten, whitening_for};
    use crate::smica::online::apply_update;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(d: usize, t: usize, rng: &mut impl Rng) -> SignalMatrix {
        SignalMatrix::new(DMatrix::from_fn(d, t, |_, _| rng.random::<f64>() * 2.0 - 1.0)).unwrap()
    }

    fn random_state(d: usize, rng: &mut impl Rng) -> SmicaState {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        let m = &a * a.transpose() + DMatrix::identity(d, d);
        let mut m = m;
        symmetrize(&mut m);
        let w = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let lambda_sq = (0..d).map(|i| 1.0 + 0.7 * i as f64 + rng.random::<f64>() * 0.1).collect();
        SmicaState::new(w, m, lambda_sq, 0.01, 0.5, 0).unwrap()
    }

    #[test]
    fn gamma_inv_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_signal(3, 7, &mut rng);
        let e1 = SignalMatrix::new(DMatrix::from_fn(3, 7, |i, _| if i == 0 { 1.0 } else { 0.0 })).unwrap();
        let c = crate::linalg::sample_covariance(&x);
        assert!((gamma_inv(&x, &e1).unwrap() - c).amax() < 1e-15);
        assert_eq!(gamma_inv(&x, &SignalMatrix::zeros(3, 7).unwrap()).unwrap(), DMatrix::zeros(3, 3));

        let y = random_signal(3, 7, &mut rng);
        let g = gamma_inv(&x, &y).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for t in 0..7 {
                    let n2: f64 = (0..3).map(|k| y.as_matrix()[(k, t)].powi(2)).sum();
                    acc += n2 * x.as_matrix()[(i, t)] * x.as_matrix()[(j, t)];
                }
                assert!((g[(i, j)] - acc / 7.0).abs() < 1e-12);
            }
        }
        assert!(gamma_inv(&x, &random_signal(3, 6, &mut rng)).is_err());
    }

    fn loss_oracle(s: &SmicaState, x: &SignalMatrix, y: &SignalMatrix) -> f64 {
        let (d, t) = (s.dim(), x.samples());
        let (xm, ym) = (x.as_matrix(), y.as_matrix());
        let mut data = 0.0;
        for k in 0..t {
            for i in 0..d {
                for j in 0..d {
                    data += -2.0 * xm[(j, k)] * s.w[(i, j)] * ym[(i, k)] + ym[(i, k)] * s.m[(i, j)] * ym[(j, k)];
                }
            }
        }
        let g = gamma_inv(x, y).unwrap();
        let mut reg = 0.0;
        for i in 0..d {
            for a in 0..d {
                for b in 0..d {
                    reg += s.w[(i, a)] * g[(a, b)] * s.w[(i, b)] / s.lambda_sq[i];
                }
            }
            reg -= s.m[(i, i)];
        }
        data / t as f64 + reg
    }

    #[test]
    fn loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_signal(2, 5, &mut rng);
        let y = random_signal(2, 5, &mut rng);
        let mut s = random_state(2, &mut rng);
        assert!((loss(&s, &x, &y).unwrap() - loss_oracle(&s, &x, &y)).abs() < 1e-12);

        s.w = DMatrix::zeros(2, 2);
        s.m = DMatrix::identity(2, 2);
        let expected = y.as_matrix().norm_squared() / 5.0 - 2.0;
        assert!((loss(&s, &x, &y).unwrap() - expected).abs() < 1e-12);
        let zero = SignalMatrix::zeros(2, 5).unwrap();
        assert!((loss(&s, &x, &zero).unwrap() + 2.0).abs() < 1e-15);
    }

    #[test]
    fn optimal_y_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_signal(3, 9, &mut rng);
        let mut s = SmicaState::new(DMatrix::identity(3, 3), DMatrix::identity(3, 3), vec![1.0, 2.0, 3.0], 0.01, 0.5, 0)
            .unwrap();
        assert!((optimal_y(&s, &x).unwrap().as_matrix() - x.as_matrix()).amax() < 1e-15);
        s.m *= 2.0;
        assert!((optimal_y(&s, &x).unwrap().as_matrix() - x.as_matrix() / 2.0).amax() < 1e-15);
        let s = random_state(3, &mut rng);
        let y = optimal_y(&s, &x).unwrap();
        let wx = &s.w * x.as_matrix();
        assert!((&s.m * y.as_matrix() - &wx).norm() <= 1e-10 * wx.norm());
        let mut bad = s.clone();
        bad.m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 1e-14]));
        assert!(matches!(optimal_y(&bad, &x), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn zero_eta_leaves_state_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_signal(2, 6, &mut rng);
        let mut s = random_state(2, &mut rng);
        s.eta = 0.0;
        assert_eq!(offline_step(&s, &x).unwrap(), s);
    }

    #[test]
    fn fobi_solution_is_a_fixed_point() {
        let s = crate::data::gen_sources(
            &[crate::data::SourceSpec::Laplace, crate::data::SourceSpec::Sine],
            4000,
            5,
        )
        .unwrap();
        let x = crate::data::mix(&s, &crate::data::reference_mixing()).unwrap();
        let h = whiten(&x, &whitening_for(&x).unwrap()).unwrap();
        let f = fobi_separate(&h).unwrap();
        // Whitened input, orthogonal rotation, M = I and λ² equal to the
        // weighted eigenvalues satisfy both stationarity conditions.
        let state =
            SmicaState::new(f.rotation.clone(), DMatrix::identity(2, 2), f.weighted_eigenvalues.clone(), 5e-3, 0.75, 0)
                .unwrap();
        let next = offline_step(&state, &h).unwrap();
        assert!((&next.w - &state.w).amax() < 1e-9);
        assert!((&next.m - &state.m).amax() < 1e-9);
    }

    fn finite_difference_check(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..=3);
        let t = rng.random_range(d..=8);
        let x = random_signal(d, t, &mut rng);
        let s = random_state(d, &mut rng);
        let y = optimal_y(&s, &x).unwrap();
        let next = offline_step(&s, &x).unwrap();
        let h = 1e-6;
        let mut fd_w = DMatrix::zeros(d, d);
        let mut fd_m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let (mut p, mut q) = (s.clone(), s.clone());
                p.w[(i, j)] += h;
                q.w[(i, j)] -= h;
                fd_w[(i, j)] = (loss(&p, &x, &y).unwrap() - loss(&q, &x, &y).unwrap()) / (2.0 * h);
                let (mut p, mut q) = (s.clone(), s.clone());
                p.m[(i, j)] += h;
                q.m[(i, j)] -= h;
                fd_m[(i, j)] = (loss(&p, &x, &y).unwrap() - loss(&q, &x, &y).unwrap()) / (2.0 * h);
            }
        }
        let dw = &next.w - &s.w;
        let dm = &next.m - &s.m;
        let want_w = -fd_w * s.eta;
        let want_m = fd_m * (s.eta / s.tau);
        assert!((&dw - &want_w).norm() <= 1e-4 * want_w.norm(), "seed {seed}: dW");
        assert!((&dm - &want_m).norm() <= 1e-4 * want_m.norm(), "seed {seed}: dM");
    }

    #[test]
    fn updates_follow_loss_gradient() {
        for seed in 0..10 {
            finite_difference_check(seed);
        }
    }

    #[test]
    fn batch_update_is_mean_of_online_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_signal(3, 40, &mut rng);
        let s = random_state(3, &mut rng);
        let batch = offline_step(&s, &x).unwrap();
        let y = optimal_y(&s, &x).unwrap();
        let mut dw = DMatrix::zeros(3, 3);
        for t in 0..40 {
            let mut single = s.clone();
            let xt: Vec<f64> = x.sample(t).iter().copied().collect();
            let yt: Vec<f64> = y.sample(t).iter().copied().collect();
            let ct: Vec<f64> = (&s.w * x.sample(t)).iter().copied().collect();
            apply_update(&mut single, &xt, &ct, &yt);
            dw += &single.w - &s.w;
        }
        dw /= 40.0;
        assert!((dw - (&batch.w - &s.w)).amax() <= 1e-10);
    }

    #[test]
    fn fit_offline_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_signal(2, 50, &mut rng);
        let s = SmicaState::init(2, vec![1.0, 2.25], 5e-3, 0.75, 1).unwrap();
        assert!(matches!(fit_offline(&x, OfflineConfig::new(0), s.clone(), None), Err(Error::Config(_))));
        let r = fit_offline(&x, OfflineConfig::new(5), s.clone(), None).unwrap();
        assert_eq!(r.epochs, 5);
        assert_eq!(r.diagnostics.len(), 5);
        assert!(r.diagnostics.iter().all(|e| e.mse.is_none()));
        let r2 = fit_offline(&x, OfflineConfig::new(5), s, None).unwrap();
        assert_eq!(r.state, r2.state);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = SignalMatrix::new(random_signal(2, 30, &mut rng).into_matrix() * 50.0).unwrap();
        let s = SmicaState::init(2, vec![1.0, 2.25], 0.4, 0.5, 1).unwrap();
        match fit_offline(&x, OfflineConfig::new(1000), s, None) {
            Err(Error::Divergence { at, .. }) => assert!(at.starts_with("epoch")),
            Err(Error::IllConditioned { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|r| r.state.w.norm())),
        }
    }

    #[test]
    fn quartic_term_constant_on_decorrelated_outputs() {
        // Rows of Y orthogonal with (1/T) Y Yᵀ = I.
        let t = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::from_fn(t, 3, |_, _| rng.random::<f64>() - 0.5);
        let q = a.qr().q();
        let y = q.transpose() * (t as f64).sqrt();
        let l2 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.25, 4.0]));
        let quartic = (y.transpose() * &l2 * &y * y.transpose() * &l2 * &y).trace() / (t * t) as f64;
        let expected = (&l2 * &l2).trace();
        assert!((quartic - expected).abs() <= 1e-9 * expected);
    }

    /// (η, τ) pairs from the benchmark tables.
    pub(crate) const TABLE_RATES: [(f64, f64); 3] = [(5e-3, 0.75), (5e-4, 0.85), (2e-5, 1.5)];

    /// Whitened random mixture; raw colored mixtures can make `W` diverge at
    /// the larger rate before `M` matters.
    fn mixture(d: usize, t: usize, seed: u64) -> SignalMatrix {
        use crate::data::SourceSpec::*;
        let specs = [Laplace, Sine, Square, Sawtooth];
        let s = crate::data::gen_sources(&specs[..d], t, seed).unwrap();
        let x = crate::data::mix(&s, &crate::data::random_mixing(d, seed, 100.0).unwrap()).unwrap();
        whiten(&x, &whitening_for(&x).unwrap()).unwrap()
    }

    #[test]
    fn large_rate_ratio_can_lose_definiteness() {
        // The M step subtracts (η/τ)I; once an eigenvalue of M sits below
        // about η/τ the step overshoots zero even though η < τ.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lost = (0..200u64).any(|seed| {
            let x = random_signal(2, 64, &mut rng);
            let mut s = SmicaState::init(2, vec![1.0, 2.25], 0.3, 0.4, seed).unwrap();
            (0..200).any(|_| match offline_step(&s, &x) {
                Ok(next) => {
                    s = next;
                    min_eigenvalue(&s.m).unwrap() <= 0.0
                }
                Err(_) => true,
            })
        });
        assert!(lost);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn m_stays_positive_definite(seed in 0u64..10_000, d in 2usize..=4, rate in 0usize..3) {
            let (eta, tau) = TABLE_RATES[rate];
            let x = mixture(d, 256, seed);
            let lam: Vec<f64> = (0..d).map(|i| 1.0 + 0.5 * i as f64).collect();
            let mut s = SmicaState::init(d, lam, eta, tau, seed).unwrap();
            for _ in 0..300 {
                s = offline_step(&s, &x).unwrap();
                prop_assert!(min_eigenvalue(&s.m).unwrap() > 0.0);
            }
        }
    }
}
