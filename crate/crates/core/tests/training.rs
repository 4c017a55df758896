use vct_core::couplings::{CouplingKind, KlReduction};
use vct_core::data::GaussianMixture;
use vct_core::networks::MlpSpec;
use vct_core::optim::{LrSchedule, OptimizerConfig, OptimizerKind};
use vct_core::schedules::WeightingKind;
use vct_core::training::{
    draw_step, grad_variance_of_draws, loss_value, ObjectiveConfig, ScheduleConfig, ScheduleMode,
    TrainConfig, TrainState,
};
use vct_core::{DetRng, KernelKind, Tensor, TransitionKernel};

fn config(coupling: CouplingKind, mode: ScheduleMode) -> TrainConfig {
    TrainConfig {
        kernel: TransitionKernel::new(KernelKind::Li, 0.002, 0.1, 0.05).unwrap(),
        schedule: ScheduleConfig {
            mode,
            s0: 10,
            s1: 80,
            ..ScheduleConfig::default()
        },
        coupling,
        model: MlpSpec { hidden_dim: 16, time_embed_dim: 8, ..MlpSpec::consistency_default() },
        encoder: MlpSpec { hidden_dim: 8, ..MlpSpec::encoder_default() },
        objective: ObjectiveConfig {
            weighting: WeightingKind::AdaptiveInverseGap,
            beta: 0.001,
            huber_c: 0.00054 * 2f64.sqrt(),
            kl_reduction: KlReduction::SumDims,
        },
        optimizer: OptimizerConfig {
            kind: OptimizerKind::RAdam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_schedule: LrSchedule::Constant,
        },
        batch_size: 32,
        iterations: 400,
        ema_rate: 0.99,
        clip_norm: 200.0,
        data_dim: 2,
    }
}

fn losses(cfg: &TrainConfig, seed: u64, steps: usize) -> Vec<f64> {
    let data = GaussianMixture::two_gaussians_vertical();
    let mut st = TrainState::init(cfg, seed).unwrap();
    (0..steps).map(|_| st.step(cfg, &data).unwrap().total).collect()
}

#[test]
fn same_seed_same_trace_for_every_coupling_and_mode() {
    for coupling in [CouplingKind::Independent, CouplingKind::MinibatchOt, CouplingKind::Variational] {
        for mode in [ScheduleMode::Ict, ScheduleMode::Ecm] {
            let cfg = config(coupling, mode);
            let a = losses(&cfg, 5, 15);
            assert_eq!(a, losses(&cfg, 5, 15));
            assert_ne!(a, losses(&cfg, 6, 15));
            assert!(a.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn cloned_state_continues_identically() {
    let cfg = config(CouplingKind::Variational, ScheduleMode::Ict);
    let data = GaussianMixture::two_gaussians_vertical();
    let mut st = TrainState::init(&cfg, 9).unwrap();
    for _ in 0..7 {
        st.step(&cfg, &data).unwrap();
    }
    let mut copy = st.clone();
    for _ in 0..7 {
        assert_eq!(st.step(&cfg, &data).unwrap(), copy.step(&cfg, &data).unwrap());
    }
    assert_eq!(st, copy);
}

#[test]
fn encoder_exists_only_for_the_variational_coupling() {
    for (coupling, expect) in [
        (CouplingKind::Independent, false),
        (CouplingKind::MinibatchOt, false),
        (CouplingKind::Variational, true),
    ] {
        let st = TrainState::init(&config(coupling, ScheduleMode::Ict), 0).unwrap();
        assert_eq!(st.encoder.is_some(), expect);
    }
}

#[test]
fn independent_runs_report_zero_kl() {
    let cfg = config(CouplingKind::Independent, ScheduleMode::Ict);
    let data = GaussianMixture::two_gaussians_vertical();
    let mut st = TrainState::init(&cfg, 1).unwrap();
    let b = st.step(&cfg, &data).unwrap();
    assert_eq!((b.kl, b.lambda_kl), (0.0, 0.0));
    assert_eq!(b.total, b.consistency);
    assert_eq!(b.n_k, 11);
}

#[test]
fn variational_kl_weight_follows_the_last_grid_gap() {
    let cfg = config(CouplingKind::Variational, ScheduleMode::Ict);
    let data = GaussianMixture::two_gaussians_vertical();
    let mut st = TrainState::init(&cfg, 1).unwrap();
    let b = st.step(&cfg, &data).unwrap();
    let grid = cfg.grid_at(0).unwrap();
    assert_eq!(b.lambda_kl, 0.001 / grid.last_gap());
    // Fresh encoder outputs N(0, I) exactly.
    assert_eq!(b.kl, 0.0);
}

#[test]
fn target_copy_changes_the_loss_but_not_the_gradient_path() {
    let cfg = config(CouplingKind::Variational, ScheduleMode::Ict);
    let data = GaussianMixture::two_gaussians_vertical();
    let st = TrainState::init(&cfg, 2).unwrap();
    let mut rng = DetRng::seed_from_u64(3);
    let draw = draw_step(&cfg, 0, data.sample(32, &mut rng), &mut rng).unwrap();
    let phi = st.encoder.as_ref().map(|e| &e.phi);
    let base = loss_value(&cfg, &st.theta, &st.theta, phi, &draw).unwrap();
    let mut target = st.theta.clone();
    target.tensors[0].data_mut()[0] += 0.5;
    let moved = loss_value(&cfg, &st.theta, &target, phi, &draw).unwrap();
    assert_ne!(base.consistency, moved.consistency);
    assert_eq!(base.kl, moved.kl);
}

#[test]
fn non_finite_step_leaves_parameters_untouched() {
    let cfg = config(CouplingKind::Variational, ScheduleMode::Ict);
    let data = GaussianMixture::two_gaussians_vertical();
    let mut st = TrainState::init(&cfg, 4).unwrap();
    st.step(&cfg, &data).unwrap();
    st.theta.tensors[0].data_mut()[0] = f64::NAN;
    let before = st.clone();
    let err = st.step(&cfg, &data).unwrap_err();
    assert_eq!(err.k, before.k);
    assert_eq!(st.k, before.k + 1);
    assert_eq!(st.theta_moments, before.theta_moments);
    assert_eq!(st.theta_ema, before.theta_ema);
    assert_eq!(st.encoder, before.encoder);
    assert!(st.theta.tensors[0].data()[0].is_nan());
}

#[test]
fn identical_probe_batches_have_zero_variance() {
    let cfg = config(CouplingKind::Variational, ScheduleMode::Ict);
    let data = GaussianMixture::two_gaussians_vertical();
    let st = TrainState::init(&cfg, 5).unwrap();
    let mut rng = DetRng::seed_from_u64(6);
    let draw = draw_step(&cfg, 0, data.sample(32, &mut rng), &mut rng).unwrap();
    let same = vec![draw.clone(), draw.clone(), draw];
    assert_eq!(grad_variance_of_draws(&cfg, &st, &same).unwrap(), 0.0);
    let other = draw_step(&cfg, 0, data.sample(32, &mut rng), &mut rng).unwrap();
    let mixed = vec![same[0].clone(), other];
    assert!(grad_variance_of_draws(&cfg, &st, &mixed).unwrap() > 0.0);
    assert!(grad_variance_of_draws(&cfg, &st, &same[..1]).is_err());
}

#[test]
fn ot_draw_pairs_noise_at_no_more_than_identity_cost() {
    let cfg = config(CouplingKind::MinibatchOt, ScheduleMode::Ict);
    let data = GaussianMixture::two_gaussians_vertical();
    let mut a = DetRng::seed_from_u64(7);
    let x0 = data.sample(32, &mut a);
    let mut b = a.clone();
    let draw = draw_step(&cfg, 0, x0.clone(), &mut a).unwrap();
    let plain = draw_step(&config(CouplingKind::Independent, ScheduleMode::Ict), 0, x0.clone(), &mut b).unwrap();
    let cost = |e: &Tensor| x0.zip_with(e, "cost", |p, q| (p - q) * (p - q)).unwrap().sum();
    assert!(cost(&draw.eps) <= cost(&plain.eps) + 1e-12);
    assert_eq!(draw.t, plain.t);
}

#[test]
fn sampled_times_are_adjacent_grid_points() {
    let cfg = config(CouplingKind::Independent, ScheduleMode::Ict);
    let mut rng = DetRng::seed_from_u64(8);
    for k in [0u64, 150, 399] {
        let grid = cfg.grid_at(k).unwrap();
        let draw = draw_step(&cfg, k, Tensor::zeros(&[64, 2]), &mut rng).unwrap();
        for (t, r) in draw.t.iter().zip(&draw.r) {
            let i = grid.sigmas.iter().position(|s| s == r).unwrap();
            assert_eq!(grid.sigmas[i + 1], *t);
        }
        assert_eq!(draw.n_k, grid.len());
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = config(CouplingKind::Variational, ScheduleMode::Ict);
    cfg.batch_size = 0;
    assert!(TrainState::init(&cfg, 0).is_err());
    let mut cfg = config(CouplingKind::Variational, ScheduleMode::Ict);
    cfg.ema_rate = 1.0;
    assert!(cfg.validate().is_err());
    let mut cfg = config(CouplingKind::Variational, ScheduleMode::Ict);
    cfg.schedule.s1 = 5;
    assert!(cfg.validate().is_err());
}
