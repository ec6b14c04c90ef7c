mod common;

use cmc_bootstrap::cmc::{
    simulate_dataset, simulate_episode, EpisodicDataset, Policy, StateActionSpace, TransitionKernel,
};
use cmc_bootstrap::counting::{count, estimate, occupation_estimate};
use cmc_bootstrap::env::riverswim;
use cmc_bootstrap::reference_chain::{
    build_reference_chain, embed_episodic, episode_occupation, stationary_distribution, uniform_reset_kernel,
};
use cmc_bootstrap::rng::SeedSpec;
use common::rng;
use proptest::prelude::*;

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn riverswim_behavior() -> (TransitionKernel, Policy) {
    let mdp = riverswim();
    let pi = Policy::action_one_prob(mdp.space(), 0.8).unwrap();
    (mdp.kernel, pi)
}

#[test]
fn counts_match_naive_recount() {
    let (kernel, pi) = riverswim_behavior();
    let data = simulate_dataset(&kernel, &pi, 0, 10, 50, &SeedSpec::new(5), 0).unwrap();
    let counts = count(&data);

    let mut naive = [[[0u64; 6]; 2]; 6];
    for episode in data.episodes() {
        for tr in episode {
            naive[tr.state][tr.action][tr.next_state] += 1;
        }
    }
    for s in 0..6 {
        let mut n_s = 0;
        for a in 0..2 {
            let n_sa: u64 = naive[s][a].iter().sum();
            assert_eq!(counts.n_sa(s, a), n_sa);
            n_s += n_sa;
            for t in 0..6 {
                assert_eq!(counts.n_sat(s, a, t), naive[s][a][t]);
            }
        }
        assert_eq!(counts.n_s(s), n_s);
    }
    assert_eq!(counts.n_total(), 500);
}

#[test]
fn sampled_row_frequencies() {
    let kernel = TransitionKernel::from_nested(&[vec![vec![0.3, 0.7]], vec![vec![0.3, 0.7]]]).unwrap();
    let space = kernel.space();
    let pi = Policy::uniform(space);
    let mut r = rng(1);
    let mut hits = [0usize; 2];
    // always restart from state 0 so every draw uses row (0, 0)
    for _ in 0..100_000 {
        let ep = simulate_episode(&kernel, &pi, 0, 1, &mut r).unwrap();
        hits[ep[0].next_state] += 1;
    }
    assert!((hits[0] as f64 / 1e5 - 0.3).abs() < 0.01);
    assert!((hits[1] as f64 / 1e5 - 0.7).abs() < 0.01);
}

#[test]
fn behaviour_action_frequency() {
    let (kernel, pi) = riverswim_behavior();
    let ep = simulate_episode(&kernel, &pi, 0, 100_000, &mut rng(2)).unwrap();
    let right = ep.iter().filter(|tr| tr.action == 1).count() as f64 / 1e5;
    assert!((right - 0.8).abs() < 0.01, "{right}");
}

#[test]
fn reference_chain_entry_by_hand() {
    let (kernel, pi) = riverswim_behavior();
    let chain = build_reference_chain(&kernel, &pi).unwrap();
    assert_eq!(chain.dim(), 12);
    assert!((chain.entry((0, 1), (1, 1)) - 0.24).abs() < 1e-15);
    for row in chain.as_slice().chunks(12) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn stationary_matches_long_simulation() {
    let (kernel, pi) = riverswim_behavior();
    let p = stationary_distribution(&build_reference_chain(&kernel, &pi).unwrap()).unwrap();
    let ep = simulate_episode(&kernel, &pi, 0, 10_000_000, &mut rng(3)).unwrap();
    let mut occ = vec![0.0; 12];
    for tr in &ep {
        occ[tr.state * 2 + tr.action] += 1e-7;
    }
    assert!(sup_diff(&p, &occ) < 0.005, "{p:?} vs {occ:?}");
}

#[test]
fn empirical_occupation_converges_to_stationary() {
    let (kernel, pi) = riverswim_behavior();
    let p = stationary_distribution(&build_reference_chain(&kernel, &pi).unwrap()).unwrap();
    let data = simulate_dataset(&kernel, &pi, 0, 1, 1_000_000, &SeedSpec::new(4), 0).unwrap();
    let p_hat = occupation_estimate(&count(&data)).unwrap();
    assert!(sup_diff(&p, &p_hat) < 0.01);
}

#[test]
fn estimator_is_ratio_of_counts() {
    let (kernel, pi) = riverswim_behavior();
    let data = simulate_dataset(&kernel, &pi, 0, 4, 25, &SeedSpec::new(6), 0).unwrap();
    let counts = count(&data);
    let model = estimate(&counts);
    for s in 0..6 {
        for a in 0..2 {
            match model.kernel_row(s, a) {
                Some(row) => {
                    for (t, p) in row.iter().enumerate() {
                        assert_eq!(*p, counts.n_sat(s, a, t) as f64 / counts.n_sa(s, a) as f64);
                    }
                }
                None => assert_eq!(counts.n_sa(s, a), 0),
            }
        }
    }
}

#[test]
fn embedding_occupation_scales_by_t_over_t_plus_one() {
    let (kernel, pi) = riverswim_behavior();
    let t = 20;
    let data = simulate_dataset(&kernel, &pi, 0, 10_000, t, &SeedSpec::new(7), 0).unwrap();
    let chain = embed_episodic(&data, &uniform_reset_kernel(6)).unwrap();
    assert_eq!(chain.len(), 10_000 * (t + 1) - 1);
    let expected: Vec<f64> =
        episode_occupation(&kernel, &pi, 0, t).iter().map(|p| p * t as f64 / (t + 1) as f64).collect();
    assert!(sup_diff(&chain.occupation_restricted(), &expected) < 0.01);
}

fn arb_dataset() -> impl Strategy<Value = EpisodicDataset> {
    (1usize..4, 1usize..4, 1usize..6, 1usize..8).prop_flat_map(|(s, a, k, t)| {
        let tr = (0..s, 0..a, 0..s);
        proptest::collection::vec(proptest::collection::vec(tr, t..=t), k..=k).prop_map(move |eps| {
            let space = StateActionSpace::new(s, a).unwrap();
            // chain the episodes so that each transition starts where the last ended
            let episodes = eps
                .into_iter()
                .map(|ep| {
                    let mut cur = ep[0].0;
                    ep.into_iter()
                        .map(|(_, act, next)| {
                            let tr = cmc_bootstrap::cmc::Transition::new(cur, act, next);
                            cur = next;
                            tr
                        })
                        .collect()
                })
                .collect();
            EpisodicDataset::new(space, episodes).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn embedding_preserves_counts(data in arb_dataset()) {
        let chain = embed_episodic(&data, &uniform_reset_kernel(data.space().states)).unwrap();
        prop_assert_eq!(chain.len(), data.num_episodes() * (data.episode_len() + 1) - 1);
        prop_assert_eq!(chain.counts_restricted(), count(&data));
        let resets = chain.actions().iter().filter(|&&a| a == chain.dagger()).count();
        prop_assert_eq!(resets, data.num_episodes() - 1);
    }

    #[test]
    fn counts_are_consistent(data in arb_dataset()) {
        let c = count(&data);
        let space = data.space();
        let mut total = 0;
        for s in 0..space.states {
            let by_pair: u64 = (0..space.actions).map(|a| c.n_sa(s, a)).sum();
            prop_assert_eq!(by_pair, c.n_s(s));
            total += by_pair;
        }
        prop_assert_eq!(total as usize, data.len());
    }
}
