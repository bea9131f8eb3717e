use candle_core::{Device, Tensor};
use ego3dpose_core::Skeleton;
use ego3dpose_nn::config::{lr_at, OptimizerConfig, TrainConfig};
use ego3dpose_nn::losses::{loss_cos, loss_pose, mse};
use ego3dpose_nn::train::cos_limbs;
use proptest::prelude::*;

fn pose_tensor(v: &[f64]) -> Tensor {
    Tensor::from_vec(v.to_vec(), (1, 16, 3), &Device::Cpu).unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

fn poses() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-80.0..80.0f64, 48)
}

proptest! {
    #[test]
    fn mse_is_symmetric_and_zero_on_equal(a in poses(), b in poses()) {
        let (ta, tb) = (pose_tensor(&a), pose_tensor(&b));
        prop_assert!((scalar(&mse(&ta, &tb).unwrap()) - scalar(&mse(&tb, &ta).unwrap())).abs() < 1e-12);
        prop_assert_eq!(scalar(&mse(&ta, &ta).unwrap()), 0.0);
    }

    #[test]
    fn pose_loss_is_a_translation_invariant_metric(a in poses(), b in poses(), shift in -50.0..50.0f64) {
        let (ta, tb) = (pose_tensor(&a), pose_tensor(&b));
        let d = scalar(&loss_pose(&ta, &tb).unwrap());
        prop_assert!(d >= 0.0);
        prop_assert!(scalar(&loss_pose(&ta, &ta).unwrap()).abs() < 1e-9);
        let moved = scalar(&loss_pose(&(ta + shift).unwrap(), &(tb + shift).unwrap()).unwrap());
        prop_assert!((d - moved).abs() < 1e-8 * d.max(1.0));
    }

    #[test]
    fn cosine_loss_ignores_scale_and_is_bounded(a in poses(), b in poses(), k in 0.1..10.0f64) {
        let limbs = cos_limbs(&Skeleton::unrealego());
        let (ta, tb) = (pose_tensor(&a), pose_tensor(&b));
        let (c, skipped) = loss_cos(&ta, &tb, &limbs).unwrap();
        prop_assert_eq!(skipped, 0);
        let c = scalar(&c);
        prop_assert!(c.abs() <= limbs.len() as f64 + 1e-9);
        let scaled = scalar(&loss_cos(&(ta * k).unwrap(), &tb, &limbs).unwrap().0);
        prop_assert!((c - scaled).abs() < 1e-9);
        let best = scalar(&loss_cos(&tb, &tb, &limbs).unwrap().0);
        prop_assert!((best - limbs.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn schedule_is_flat_then_falls(epochs in 1usize..50, frac in 0.0..1.0f64, t in 0.0..1.0f64, lr in 1e-5..1.0f64) {
        let cfg = TrainConfig {
            epochs,
            decay_start: frac * epochs as f64,
            optimizer: OptimizerConfig::Adam { lr },
            ..TrainConfig::stage1()
        };
        let e = t * epochs as f64;
        let now = lr_at(e, &cfg);
        prop_assert!((0.0..=lr).contains(&now));
        prop_assert!(lr_at(e + 0.01, &cfg) <= now + 1e-15);
        if e <= cfg.decay_start {
            prop_assert_eq!(now, lr);
        }
    }
}
