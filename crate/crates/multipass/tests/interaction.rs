mod common;

use common::random_neutral_distribution;
use multipass::interaction::{f_nm, interaction_expansion, pairwise_multimolecule_energy, MoleculePlacement, PairInteraction};
use multipass::multipole::{compute_multipoles, direct_coulomb, direct_coulomb_placed};
use multipass::so3::{haar_sample, riem_grad_uv, riem_hess_uv, seeded_rng};
use multipass::stats::zero_mean_test;
use multipass::{MultipoleSet, Rotation};
use nalgebra::Vector3;
use proptest::prelude::*;

fn random_set(seed: u64) -> MultipoleSet {
    let mut rng = seeded_rng(seed);
    compute_multipoles(&random_neutral_distribution(&mut rng, 6), 4).unwrap()
}

fn orders() -> Vec<(usize, usize)> {
    (2..=5).flat_map(|t| (1..t).map(move |n| (n, t - n))).filter(|&(n, m)| n <= 4 && m <= 4).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exchanging_molecules_flips_odd_orders(seed in any::<u64>()) {
        let a = random_set(seed);
        let b = random_set(seed.wrapping_add(1));
        let mut rng = seeded_rng(seed ^ 0x5555);
        let (u, v) = (haar_sample(&mut rng), haar_sample(&mut rng));
        for (n, m) in orders() {
            let forward = f_nm(&a, &b, &u, &v, n, m).unwrap();
            let swapped = f_nm(&b, &a, &v, &u, m, n).unwrap();
            let sign = if (n + m) % 2 == 0 { 1.0 } else { -1.0 };
            let scale = a.order_norm(n) * b.order_norm(m);
            prop_assert!((forward - sign * swapped).abs() <= 1e-10 * scale.max(1e-300), "({},{})", n, m);
        }
    }

    #[test]
    fn global_rotation_leaves_cluster_energy_unchanged(seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let centres = [Vector3::zeros(), Vector3::new(9.0, 1.0, -2.0), Vector3::new(-3.0, 8.5, 4.0)];
        let placements: Vec<MoleculePlacement> = centres
            .iter()
            .enumerate()
            .map(|(k, c)| MoleculePlacement {
                multipoles: random_set(seed.wrapping_add(k as u64)),
                rotation: haar_sample(&mut rng),
                center: (*c).into(),
                support_radius: 1.0,
            })
            .collect();
        let g = haar_sample(&mut rng);
        let turned: Vec<MoleculePlacement> = placements
            .iter()
            .map(|p| MoleculePlacement { rotation: g * p.rotation, center: g.apply(&p.center()).into(), ..p.clone() })
            .collect();
        let before = pairwise_multimolecule_energy(&placements, 5).unwrap();
        let after = pairwise_multimolecule_energy(&turned, 5).unwrap();
        prop_assert!((before - after).abs() <= 1e-9 * before.abs().max(1e-12));
    }

    #[test]
    fn analytic_derivatives_match_differences(seed in any::<u64>(), pick in 0usize..9) {
        let (n, m) = orders()[pick];
        let a = random_set(seed);
        let b = random_set(seed.wrapping_add(7));
        let pair = PairInteraction::new(&a, &b, n, m).unwrap();
        let mut rng = seeded_rng(seed);
        let (u, v) = (haar_sample(&mut rng), haar_sample(&mut rng));
        let f = |x: &Rotation, y: &Rotation| pair.value(x, y);
        let fd = riem_grad_uv(f, &u, &v, 1e-4).unwrap();
        let exact = pair.gradient(&u, &v);
        prop_assert!((fd - exact).norm() <= 1e-6 * exact.norm().max(a.order_norm(n) * b.order_norm(m)));
        let fd_h = riem_hess_uv(f, &u, &v, 1e-3).unwrap();
        let exact_h = pair.hessian(&u, &v);
        prop_assert!((fd_h - exact_h).norm() <= 1e-4 * exact_h.norm().max(a.order_norm(n) * b.order_norm(m)));
    }
}

#[test]
fn expansion_converges_to_the_coulomb_sum() {
    let mut rng = seeded_rng(21);
    let d1 = random_neutral_distribution(&mut rng, 5);
    let d2 = random_neutral_distribution(&mut rng, 5);
    let (u, v) = (haar_sample(&mut rng), haar_sample(&mut rng));
    for l in [30.0, 60.0, 120.0] {
        let direct = direct_coulomb(&d1, &d2, &u, &v, l).unwrap();
        let mut last = f64::INFINITY;
        for order in 2..=5 {
            let (_, value) = interaction_expansion(&d1, &d2, &u, &v, l, order).unwrap();
            let err = (value - direct).abs();
            // Each added order gains a factor of about `radius / L`.
            assert!(err < last * 0.5 || err < 1e-15, "L = {l}, order {order}: {err} after {last}");
            last = err;
        }
    }
}

#[test]
fn cluster_energy_matches_pairwise_direct_sum() {
    let mut rng = seeded_rng(5);
    let dists: Vec<_> = (0..3).map(|_| random_neutral_distribution(&mut rng, 4)).collect();
    let rotations: Vec<Rotation> = (0..3).map(|_| haar_sample(&mut rng)).collect();
    let centres = [Vector3::zeros(), Vector3::new(60.0, 10.0, 0.0), Vector3::new(5.0, -40.0, 70.0)];
    let placements: Vec<MoleculePlacement> = (0..3)
        .map(|k| MoleculePlacement {
            multipoles: compute_multipoles(&dists[k], 4).unwrap(),
            rotation: rotations[k],
            center: centres[k].into(),
            support_radius: dists[k].support_radius(),
        })
        .collect();
    let expansion = pairwise_multimolecule_energy(&placements, 5).unwrap();
    let mut direct = 0.0;
    for i in 0..3 {
        for j in (i + 1)..3 {
            direct += direct_coulomb_placed(&dists[i], &rotations[i], &centres[i], &dists[j], &rotations[j], &centres[j]).unwrap();
        }
    }
    assert!((expansion - direct).abs() <= 1e-3 * direct.abs(), "{expansion} vs {direct}");
}

#[test]
fn haar_average_over_first_rotation_vanishes() {
    let a = random_set(3);
    let b = random_set(4);
    let v = haar_sample(&mut seeded_rng(9));
    let us: Vec<Rotation> = (0..20_000).scan(seeded_rng(10), |rng, _| Some(haar_sample(rng))).collect();
    for (n, m) in orders() {
        let pair = PairInteraction::new(&a, &b, n, m).unwrap();
        let values: Vec<f64> = us.iter().map(|u| pair.value(u, &v)).collect();
        let test = zero_mean_test(&values, 4.0);
        assert!(test.passed, "({n},{m}): mean {} bound {}", test.mean, test.bound);
    }
}
