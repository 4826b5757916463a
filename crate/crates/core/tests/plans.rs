use bfsa::build_plan;
use bfsa::geometry::{blocks_for_size, kdtree_partition, select_landmarks};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn points(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n).map(|_| [rng.random(), rng.random()]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn plan_partitions_every_index(n in 16usize..400, log_m in 0u32..4, p_frac in 0.0..0.5f64, seed in 0u64..1000) {
        let m = 1usize << log_m;
        let pts = points(n, seed);
        let p = ((n as f64) * p_frac) as usize;
        let plan = match build_plan(&pts, m, p) {
            Ok(plan) => plan,
            Err(_) => {
                // Only allowed when landmarks swallow a whole block.
                let lm = select_landmarks(&pts, p).unwrap();
                let cells = kdtree_partition(&pts, m).unwrap();
                prop_assert!(cells.iter().any(|c| c.iter().all(|i| lm.contains(i))));
                return Ok(());
            }
        };
        prop_assert_eq!(plan.num_blocks(), m);
        prop_assert_eq!(plan.p(), p);
        prop_assert_eq!(plan.nq() + plan.p(), n);

        let mut seen = vec![0; n];
        for b in &plan.blocks {
            for &i in b {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));

        // Each bisection level adds at most one point of imbalance.
        let sizes: Vec<usize> = plan.blocks.iter().map(|b| b.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= log_m as usize);

        let owner = plan.block_of();
        for &i in &plan.landmarks {
            prop_assert!(owner[i].is_none());
        }
        let full = plan.full_block_of();
        for (l, b) in plan.blocks_prime.iter().enumerate() {
            for &i in b {
                prop_assert_eq!(full[i], l);
            }
        }

        for k in 0..n {
            prop_assert_eq!(plan.position[plan.perm[k]], k);
        }
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        prop_assert_eq!(plan.unpermute(&plan.permute(&y)), y);
    }

    #[test]
    fn block_count_respects_target_size(n in 1usize..5000, b in 1usize..300) {
        let m = blocks_for_size(n, b);
        prop_assert!(m.is_power_of_two());
        prop_assert!(m <= n);
        // Either blocks fit the target size or the count hit its cap.
        prop_assert!(n.div_ceil(m) <= b || m * 2 > n);
    }
}

#[test]
fn plans_depend_only_on_the_points() {
    let pts = points(300, 1);
    assert_eq!(build_plan(&pts, 8, 20).unwrap(), build_plan(&pts, 8, 20).unwrap());
}

#[test]
fn rejects_invalid_requests() {
    let pts = points(50, 2);
    assert!(build_plan(&pts, 3, 4).is_err());
    assert!(build_plan(&pts, 64, 4).is_err());
    assert!(build_plan(&[], 1, 0).is_err());
}

#[test]
fn landmarks_are_distinct_for_any_count() {
    let pts = points(37, 3);
    for p in 0..=37 {
        let lm = select_landmarks(&pts, p).unwrap();
        assert_eq!(lm.len(), p);
        assert!(lm.windows(2).all(|w| w[0] < w[1]));
    }
    assert_eq!(select_landmarks(&pts, 37).unwrap(), (0..37).collect::<Vec<_>>());
}
