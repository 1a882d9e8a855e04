use ndarray::{Array1, ArrayView1};

use crate::nn::Mlp;

/// `r + γ·(1 − done)·q_next`, elementwise.
pub fn td_targets(
    rewards: ArrayView1<f64>,
    not_done: ArrayView1<f64>,
    next_q: ArrayView1<f64>,
    gamma: f64,
) -> Array1<f64> {
    let mut y = rewards.to_owned();
    ndarray::Zip::from(&mut y)
        .and(&not_done)
        .and(&next_q)
        .for_each(|y, &nd, &q| *y += gamma * nd * q);
    y
}

/// Penalized target `q − β·u`, optionally floored at zero.
pub fn ood_target(q: f64, u: f64, beta: f64, clip: bool) -> f64 {
    let t = q - beta * u;
    if clip {
        t.max(0.0)
    } else {
        t
    }
}

/// `target ← ρ·target + (1 − ρ)·online`.
pub fn soft_update(online: &Mlp, target: &mut Mlp, rho: f64) {
    target.soft_update_from(online, rho);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use ndarray::array;

    #[test]
    fn terminal_and_myopic_targets_equal_reward() {
        let r = array![1.5, -2.0];
        let y = td_targets(r.view(), array![0.0, 0.0].view(), array![10.0, 3.0].view(), 0.99);
        assert_eq!(y, r);
        let y = td_targets(r.view(), array![1.0, 1.0].view(), array![10.0, 3.0].view(), 0.0);
        assert_eq!(y, r);
        let y = td_targets(r.view(), array![1.0, 0.0].view(), array![10.0, 3.0].view(), 0.5);
        assert_eq!(y, array![6.5, -2.0]);
    }

    #[test]
    fn ood_target_examples() {
        assert_eq!(ood_target(5.0, 2.0, 1.0, false), 3.0);
        assert_eq!(ood_target(1.0, 2.0, 1.0, true), 0.0);
        assert_eq!(ood_target(1.0, 2.0, 1.0, false), -1.0);
        assert_eq!(ood_target(4.2, 9.0, 0.0, false), 4.2);
        // the penalty is linear in β
        let q = 3.0;
        let shift = |b| q - ood_target(q, 0.7, b, false);
        assert!((shift(2.0) - 2.0 * shift(1.0)).abs() < 1e-15);
    }

    #[test]
    fn soft_update_shrinks_the_gap_by_rho() {
        let net = |w: f64| {
            Mlp::from_layers(
                vec![Layer {
                    weight: array![[w, -w]],
                    bias: array![2.0 * w],
                }],
                Activation::Relu,
                Activation::Identity,
            )
            .unwrap()
        };
        let online = net(1.0);
        let mut target = net(-3.0);
        let gap = |t: &Mlp| {
            t.slices()
                .flatten()
                .zip(online.slices().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let before = gap(&target);
        soft_update(&online, &mut target, 5e-3);
        assert!((gap(&target) - 5e-3 * before).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn clipped_target_is_the_floor_of_the_unclipped(q in -50.0f64..50.0, u in 0.0f64..10.0, beta in 0.0f64..5.0) {
            let raw = ood_target(q, u, beta, false);
            proptest::prop_assert!(raw <= q);
            proptest::prop_assert_eq!(ood_target(q, u, beta, true), raw.max(0.0));
        }

        #[test]
        fn td_target_is_affine_in_next_q(r in -5.0f64..5.0, q in -20.0f64..20.0, gamma in 0.0f64..1.0) {
            let y = |q: f64| td_targets(array![r].view(), array![1.0].view(), array![q].view(), gamma)[0];
            proptest::prop_assert!((y(q) - y(0.0) - gamma * q).abs() < 1e-12);
        }
    }
}
