mod common;

use dlms_core::linalg::Mat;
use dlms_core::measurements::{gen_measurements, Ensemble};
use dlms_core::network::{end_to_end, grad, loss, reg_r, trace_hessian, DeepNet};
use dlms_core::regularizers::{
    factorize_min_r, induced_f_depth2, induced_f_prime, induced_f_single,
};
use dlms_core::rng::seeded;
use proptest::prelude::*;

fn random_net(dims: &[usize], seed: u64) -> DeepNet {
    let mut rng = seeded(seed, 9);
    DeepNet::new(
        dims.windows(2)
            .map(|w| Mat::gaussian(w[1], w[0], 0.8, &mut rng))
            .collect(),
    )
    .unwrap()
}

#[test]
fn loss_agrees_with_direct_evaluation() {
    let net = random_net(&[3, 4, 2], 1);
    let target = Mat::gaussian(2, 3, 1.0, &mut seeded(2, 0));
    let ms = gen_measurements(Ensemble::Bernoulli, 7, 3, 2, &target, 2).unwrap();
    let direct = common::loss_direct(net.layers(), &ms);
    assert!((loss(&net, &ms).unwrap() - direct).abs() < 1e-12 * direct.max(1.0));
}

#[test]
fn gradient_matches_central_differences() {
    let net = random_net(&[3, 3, 2, 2], 4);
    let target = Mat::gaussian(2, 3, 1.0, &mut seeded(5, 0));
    let ms = gen_measurements(Ensemble::GaussianIid, 6, 3, 2, &target, 5).unwrap();
    let all: Vec<usize> = (0..ms.len()).collect();
    let g: Vec<f64> = grad(&net, &ms, &all, None)
        .unwrap()
        .iter()
        .flat_map(|m| m.data().to_vec())
        .collect();
    let base = net.params();
    let mut probe = net.clone();
    let h = 1e-6;
    for i in 0..base.len() {
        let mut x = base.clone();
        x[i] += h;
        probe.set_params(&x);
        let fp = common::loss_direct(probe.layers(), &ms);
        x[i] -= 2.0 * h;
        probe.set_params(&x);
        let fm = common::loss_direct(probe.layers(), &ms);
        let fd = (fp - fm) / (2.0 * h);
        assert!(
            (fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0),
            "param {i}: {fd} vs {}",
            g[i]
        );
    }
}

#[test]
fn hessian_trace_on_wider_interpolating_nets() {
    for (k, dims) in [vec![2, 3, 2], vec![3, 2, 2, 2], vec![2, 3, 3, 2]]
        .into_iter()
        .enumerate()
    {
        let net = random_net(&dims, 10 + k as u64);
        let ms = gen_measurements(
            Ensemble::RankOneGaussian,
            4,
            dims[0],
            *dims.last().unwrap(),
            &end_to_end(&net),
            k as u64,
        )
        .unwrap();
        let fd = common::fd_hessian_trace(&net, &ms, 1e-4);
        let t = trace_hessian(&net, &ms).unwrap();
        assert!(
            (t.true_trace - fd).abs() < 1e-5 * fd,
            "{dims:?}: {} vs {fd}",
            t.true_trace
        );
        assert!((t.per_layer.iter().sum::<f64>() - t.paper_trace).abs() < 1e-12 * t.paper_trace);
    }
}

#[test]
fn depth2_oracle_on_bernoulli_measurements() {
    let mut rng = seeded(30, 0);
    let m = Mat::gaussian(3, 3, 1.0, &mut rng);
    let ms = gen_measurements(Ensemble::Bernoulli, 40, 3, 3, &m, 30).unwrap();
    let f = induced_f_depth2(&m, &ms).unwrap();
    let oracle = common::eliminated_depth2_min(&m, &ms, 10, &mut rng);
    assert!((oracle - f).abs() < 1e-6 * f, "{oracle} vs {f}");
}

#[test]
fn single_measurement_oracle_at_depth_two() {
    let mut rng = seeded(31, 0);
    let a = Mat::gaussian(2, 2, 1.0, &mut rng);
    let m = Mat::gaussian(2, 2, 1.0, &mut rng);
    let f = induced_f_single(&a, &m, 2).unwrap();
    let oracle = common::penalty_min_single_trace(&a, &m, &[2, 2, 2], 5, &mut rng);
    assert!((oracle - f).abs() < 1e-3 * f, "{oracle} vs {f}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reg_r_matches_direct_products(seed in 0u64..10_000, depth in 2usize..5) {
        let mut rng = seeded(seed, 0);
        let dims: Vec<usize> = (0..=depth).map(|_| rand::Rng::random_range(&mut rng, 1..5)).collect();
        let net = random_net(&dims, seed);
        let direct = common::reg_r_direct(net.layers());
        prop_assert!((reg_r(&net) - direct).abs() <= 1e-10 * direct.max(1.0));
    }

    #[test]
    fn any_factorization_is_above_closed_form(seed in 0u64..10_000, depth in 2usize..5) {
        let mut rng = seeded(seed, 1);
        let dims = vec![3; depth + 1];
        let m = Mat::gaussian(3, 2, 1.0, &mut rng).matmul(&Mat::gaussian(2, 3, 1.0, &mut rng));
        let floor = induced_f_prime(&m, depth, 3, 3).unwrap();
        let layers = common::random_factorization(&m, &dims, &mut rng);
        prop_assert!(common::reg_r_direct(&layers) >= floor * (1.0 - 1e-10));
        let best = factorize_min_r(&m, &dims, seed).unwrap();
        prop_assert!((best.achieved_value - floor).abs() <= 1e-8 * floor);
    }
}
