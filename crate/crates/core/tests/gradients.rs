use vct_core::couplings::{CouplingKind, KlReduction};
use vct_core::data::GaussianMixture;
use vct_core::gradcheck::{
    loss_gradient_errors, output_shape, primitive_cases, primitive_gradient_error, random_inputs,
};
use vct_core::networks::{MlpSpec, TimeInput};
use vct_core::optim::{LrSchedule, OptimizerConfig, OptimizerKind};
use vct_core::schedules::WeightingKind;
use vct_core::training::{draw_step, ObjectiveConfig, ScheduleConfig, ScheduleMode, TrainConfig, TrainState};
use vct_core::{DetRng, KernelKind, Tensor, TransitionKernel};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = DetRng::seed_from_u64(11);
    for case in primitive_cases() {
        for point in 0..100 {
            let inputs = random_inputs(&case, &mut rng);
            let shape = output_shape(&case.prim, &inputs).unwrap();
            let weights = rng.normal_tensor(&shape);
            let err = primitive_gradient_error(&case.prim, &inputs, &weights, H).unwrap();
            assert!(err < TOL, "{:?} point {point}: relative error {err:e}", case.prim);
        }
    }
}

#[test]
fn gradients_are_linear_in_the_upstream_weights() {
    // d/dx sum((a w1 + b w2) * f(x)) = a g1 + b g2
    let mut rng = DetRng::seed_from_u64(12);
    let x = rng.normal_tensor(&[4, 3]);
    let w1 = rng.normal_tensor(&[4, 3]);
    let w2 = rng.normal_tensor(&[4, 3]);
    let grad = |w: &Tensor| {
        let mut tape = vct_core::Tape::new();
        let v = tape.param(x.clone());
        let y = tape.gelu(v).unwrap();
        let wc = tape.constant(w.clone());
        let p = tape.mul(y, wc).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap().get(v)
    };
    let combo = w1.zip_with(&w2, "combo", |a, b| 2.0 * a - 0.5 * b).unwrap();
    let lhs = grad(&combo);
    let rhs = grad(&w1).zip_with(&grad(&w2), "combo", |a, b| 2.0 * a - 0.5 * b).unwrap();
    for (a, b) in lhs.data().iter().zip(rhs.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn small_config(kind: KernelKind, coupling: CouplingKind, mode: ScheduleMode) -> TrainConfig {
    let (sigma_max, sigma_min) = match kind {
        KernelKind::Li => (0.1, 0.002),
        KernelKind::Ve => (80.0, 0.002),
    };
    TrainConfig {
        kernel: TransitionKernel::new(kind, sigma_min, sigma_max, 0.05).unwrap(),
        schedule: ScheduleConfig {
            mode,
            s0: 10,
            s1: 80,
            ..ScheduleConfig::default()
        },
        coupling,
        model: MlpSpec {
            hidden_dim: 8,
            depth: 3,
            time_embed_dim: 4,
            time_input: TimeInput::LogSigma,
        },
        encoder: MlpSpec {
            hidden_dim: 6,
            depth: 2,
            ..MlpSpec::encoder_default()
        },
        objective: ObjectiveConfig {
            weighting: WeightingKind::AdaptiveInverseGap,
            beta: 0.5,
            // Large enough that the pseudo-Huber curvature does not dominate
            // the central-difference truncation error.
            huber_c: 0.06,
            kl_reduction: KlReduction::SumDims,
        },
        optimizer: OptimizerConfig {
            kind: OptimizerKind::RAdam,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_schedule: LrSchedule::Constant,
        },
        batch_size: 6,
        iterations: 1000,
        ema_rate: 0.999,
        clip_norm: 200.0,
        data_dim: 2,
    }
}

/// Random encoder weights so the coupling is not the identity at the check point.
fn perturbed(p: &vct_core::ParamSet, rng: &mut DetRng, s: f64) -> vct_core::ParamSet {
    let mut q = p.clone();
    for t in &mut q.tensors {
        for v in t.data_mut() {
            *v += s * rng.normal();
        }
    }
    q
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let data = GaussianMixture::two_gaussians_vertical();
    let mut rng = DetRng::seed_from_u64(13);
    let settings = [
        (KernelKind::Li, CouplingKind::Variational, ScheduleMode::Ict),
        (KernelKind::Ve, CouplingKind::Variational, ScheduleMode::Ict),
        (KernelKind::Li, CouplingKind::Variational, ScheduleMode::Ecm),
        (KernelKind::Li, CouplingKind::Independent, ScheduleMode::Ict),
        (KernelKind::Li, CouplingKind::MinibatchOt, ScheduleMode::Ict),
    ];
    for (idx, &(kind, coupling, mode)) in settings.iter().enumerate() {
        let cfg = small_config(kind, coupling, mode);
        for point in 0..20u64 {
            let state = TrainState::init(&cfg, 100 * idx as u64 + point).unwrap();
            let theta = perturbed(&state.theta, &mut rng, 0.1);
            let target = perturbed(&theta, &mut rng, 0.05);
            let phi = state.encoder.as_ref().map(|e| perturbed(&e.phi, &mut rng, 0.3));
            let x0 = data.sample(cfg.batch_size, &mut rng);
            let draw = draw_step(&cfg, 37 * point, x0, &mut rng).unwrap();
            let errs = loss_gradient_errors(&cfg, &theta, &target, phi.as_ref(), &draw, H).unwrap();
            assert!(errs.theta < TOL, "{kind:?}/{coupling:?}/{mode:?} point {point}: theta {:e}", errs.theta);
            if let Some(e) = errs.phi {
                assert!(e < TOL, "{kind:?}/{coupling:?}/{mode:?} point {point}: phi {e:e}");
            }
            assert_eq!(errs.phi.is_some(), coupling == CouplingKind::Variational);
        }
    }
}
