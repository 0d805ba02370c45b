use pbo_core::baselines::{most_frequent_winner, random_duel, random_duel_indices, SparringState};
use pbo_core::bench::make_grid;
use pbo_core::rng::{stream_rng, Stream};
use pbo_core::{Benchmark, Duel, PboError};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn single_point_grid_forces_a_self_duel() {
    let grid = vec![vec![0.25]];
    let d = random_duel(&grid, &mut stream_rng(0, Stream::Policy, 0)).unwrap();
    assert_eq!(d, Duel::new(vec![0.25], vec![0.25]));
    assert!(random_duel(&[], &mut stream_rng(0, Stream::Policy, 0)).is_err());
}

#[test]
fn random_duels_are_uniform() {
    let n = 33;
    let draws = 100_000;
    let mut rng = stream_rng(1, Stream::Policy, 0);
    let mut left = vec![0u32; n];
    let mut right = vec![0u32; n];
    for _ in 0..draws {
        let (l, r) = random_duel_indices(n, &mut rng).unwrap();
        left[l] += 1;
        right[r] += 1;
    }
    let expected = draws as f64 / n as f64;
    // 99th percentile of chi-squared with 32 degrees of freedom.
    let critical = 53.486;
    for counts in [&left, &right] {
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < critical, "{chi2}");
    }
}

#[test]
fn random_duels_are_reproducible() {
    let grid = make_grid(&Benchmark::Forrester.domain(33).unwrap()).unwrap();
    let run = |seed| {
        let mut rng = stream_rng(seed, Stream::Policy, 0);
        (0..20).map(|_| random_duel(&grid, &mut rng).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

#[test]
fn fresh_agents_sweep_the_arms() {
    let mut s = SparringState::new(5).unwrap();
    for k in 0..5 {
        assert_eq!(s.select(), (k, k));
        s.update(k, k, (k % 2) as u8).unwrap();
    }
}

#[test]
fn dominant_mean_wins_once_all_arms_are_pulled() {
    let mut s = SparringState::new(4).unwrap();
    s.update(0, 0, 1).unwrap();
    for k in 1..4 {
        s.update(k, k, 0).unwrap();
    }
    assert_eq!(s.means(0), &[1.0, 0.0, 0.0, 0.0]);
    assert_eq!(s.select().0, 0);
}

#[test]
fn selection_matches_recomputed_indices() {
    let mut s = SparringState::new(6).unwrap();
    let mut oracle = stream_rng(2, Stream::Oracle, 0);
    for _ in 0..200 {
        let (l, r) = s.select();
        let t = s.rounds() as f64;
        for agent in 0..2 {
            let chosen = if agent == 0 { l } else { r };
            let index = |a: usize| {
                let n = s.counts(agent)[a] as f64;
                if n == 0.0 {
                    f64::INFINITY
                } else {
                    s.means(agent)[a] + (2.0 * t.ln() / n).sqrt()
                }
            };
            let best = (0..6).map(index).fold(f64::MIN, f64::max);
            assert_eq!(index(chosen), best);
            assert_eq!(s.ucb_index(agent, chosen), best);
            assert!((0..chosen).all(|a| index(a) < best));
        }
        let y = u8::from(oracle.random::<f64>() < 0.3 + 0.1 * l as f64);
        s.update(l, r, y).unwrap();
    }
}

#[test]
fn updates_track_running_means() {
    let mut s = SparringState::new(3).unwrap();
    s.update(1, 2, 1).unwrap();
    assert_eq!(s.means(0)[1], 1.0);
    assert_eq!(s.means(1)[2], 0.0);
    assert_eq!(s.rounds(), 1);

    let mut rng = stream_rng(4, Stream::Oracle, 0);
    let mut log: Vec<(usize, usize, u8)> = vec![(1, 2, 1)];
    for _ in 0..500 {
        let (l, r, y) = (rng.random_range(0..3), rng.random_range(0..3), rng.random_range(0..2u8));
        s.update(l, r, y).unwrap();
        log.push((l, r, y));
    }
    for arm in 0..3 {
        let left: Vec<f64> = log.iter().filter(|e| e.0 == arm).map(|e| f64::from(e.2)).collect();
        let right: Vec<f64> = log.iter().filter(|e| e.1 == arm).map(|e| 1.0 - f64::from(e.2)).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((s.means(0)[arm] - mean(&left)).abs() < 1e-12);
        assert!((s.means(1)[arm] - mean(&right)).abs() < 1e-12);
        assert_eq!(s.counts(0)[arm] as usize, left.len());
    }
    assert!(matches!(s.update(3, 0, 1), Err(PboError::ArmOutOfRange { .. })));
    assert!(matches!(s.update(0, 0, 2), Err(PboError::InvalidLabel(2))));
}

#[test]
fn recommendation_rules() {
    let mut s = SparringState::new(10).unwrap();
    assert!(matches!(s.recommend(), Err(PboError::EmptyState)));
    s.update(3, 0, 0).unwrap();
    assert_eq!(s.recommend().unwrap(), 3);
    s.update(7, 0, 0).unwrap();
    s.update(2, 0, 0).unwrap();
    s.update(7, 1, 1).unwrap();
    s.update(2, 1, 1).unwrap();
    assert_eq!(s.recommend().unwrap(), 2);
    assert!(SparringState::new(0).is_err());
}

#[test]
fn sparring_finds_the_forrester_minimum() {
    let b = Benchmark::Forrester;
    let grid = make_grid(&b.domain(33).unwrap()).unwrap();
    let g: Vec<f64> = grid.iter().map(|x| b.eval(x).unwrap()).collect();
    let g_min = g.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut good = 0;
    for seed in 0..20 {
        let mut s = SparringState::new(33).unwrap();
        let mut rng = stream_rng(seed, Stream::Oracle, 0);
        for _ in 0..4000 {
            let (l, r) = s.select();
            let p = b.preference_prob(&Duel::new(grid[l].clone(), grid[r].clone())).unwrap();
            s.update(l, r, u8::from(rng.random::<f64>() < p)).unwrap();
        }
        if g[s.recommend().unwrap()] - g_min <= 0.5 {
            good += 1;
        }
    }
    assert!(good >= 15, "{good}/20");
}

#[test]
fn most_frequent_winner_rules() {
    assert_eq!(most_frequent_winner(&[(4, 1, 1), (1, 4, 1), (4, 2, 0)], 5).unwrap(), 1);
    assert_eq!(most_frequent_winner(&[(2, 5, 1), (5, 2, 1)], 6).unwrap(), 2);
    assert!(most_frequent_winner(&[(9, 0, 1)], 5).is_err());
    assert!(most_frequent_winner(&[], 0).is_err());
}

proptest! {
    #[test]
    fn coverage_and_bookkeeping(k in 1usize..60, seed in 0u64..1000, extra in 0usize..100) {
        let mut s = SparringState::new(k).unwrap();
        let mut rng = stream_rng(seed, Stream::Oracle, 0);
        let mut first_left = Vec::new();
        let mut first_right = Vec::new();
        for round in 0..k + extra {
            let (l, r) = s.select();
            if round < k {
                first_left.push(l);
                first_right.push(r);
            }
            s.update(l, r, rng.random_range(0..2u8)).unwrap();
        }
        let all: Vec<usize> = (0..k).collect();
        prop_assert_eq!(&first_left, &all);
        prop_assert_eq!(&first_right, &all);
        for agent in 0..2 {
            prop_assert_eq!(s.counts(agent).iter().sum::<u64>(), s.rounds());
            prop_assert!(s.means(agent).iter().all(|m| (0.0..=1.0).contains(m)));
        }
    }
}
