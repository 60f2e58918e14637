use proptest::prelude::*;

use transducer::dist_sim::{
    heterogeneous_workers, shuffle_order, simulate, DurationModel, LocalOptimizer, Objective, Quadratic,
    ShufflePolicy, SimConfig, SyncPolicy, WorkerModel,
};

fn config(workers: Vec<WorkerModel>, sync: SyncPolicy, total: f64) -> SimConfig {
    SimConfig {
        workers,
        sync,
        total_time: total,
        sync_delay: 0.0,
        optimizer: LocalOptimizer::Sgd { lr: 0.02 },
        average_optimizer_state: false,
        batch_size: 1,
        sample_bytes: 1,
    }
}

proptest! {
    #[test]
    fn seed_orders_are_permutations(seed in any::<u64>(), n in 1usize..200, epoch in 0u64..5) {
        let mut o = shuffle_order(ShufflePolicy::Seed(seed), n, epoch);
        o.sort_unstable();
        prop_assert_eq!(o, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn stride_orders_are_congruent(of in 1usize..6, n in 1usize..50) {
        let mut all = Vec::new();
        for index in 0..of {
            let o = shuffle_order(ShufflePolicy::Stride { index, of }, n, 0);
            prop_assert!(o.iter().all(|i| i % of == index));
            all.extend(o);
        }
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn jittered_workers_sync_to_identical_params(seed in any::<u64>(), tau in 3.0f64..20.0) {
        let obj = Quadratic::random(4, 16, seed);
        let workers: Vec<WorkerModel> = (0..4)
            .map(|i| WorkerModel {
                shuffle: ShufflePolicy::Seed(seed ^ i),
                duration: DurationModel::Jitter { mean: 1.0 + i as f64 * 0.3, spread: 0.4, seed },
            })
            .collect();
        let r = simulate(&config(workers, SyncPolicy::EveryTSeconds(tau), 60.0), &obj, &[0.0; 4]).unwrap();
        for snap in &r.post_sync_params {
            prop_assert!(snap.iter().all(|p| p == &snap[0]));
        }
        let syncs: Vec<f64> = r.trace.iter().filter(|e| e.worker.is_none()).map(|e| e.time).collect();
        prop_assert_eq!(syncs.len(), (60.0 / tau).floor() as usize);
        prop_assert!(r.trace.windows(2).all(|w| w[0].time <= w[1].time));
    }
}

#[test]
fn averaging_drives_the_objective_down() {
    let obj = Quadratic::random(8, 32, 1);
    let init = vec![2.0; 8];
    let r = simulate(
        &config(heterogeneous_workers(4, 1.0, &[3], 2.0, 1), SyncPolicy::EveryTSeconds(10.0), 200.0),
        &obj,
        &init,
    )
    .unwrap();
    let first = obj.value(&init);
    let last = r.trace.iter().rev().find(|e| e.worker.is_none()).unwrap().objective;
    assert!(last < 0.5 * first, "{last} vs {first}");
}

#[test]
fn every_n_waits_for_the_slowest_worker() {
    let obj = Quadratic::random(2, 8, 2);
    let mut c = config(heterogeneous_workers(3, 1.0, &[2], 3.0, 0), SyncPolicy::EveryNSteps(5), 100.0);
    c.sync_delay = 1.0;
    let r = simulate(&c, &obj, &[0.0; 2]).unwrap();
    let syncs: Vec<f64> = r.trace.iter().filter(|e| e.worker.is_none()).map(|e| e.time).collect();
    // each round lasts 5 slow steps plus the sync delay
    assert_eq!(syncs[0], 15.0);
    assert_eq!(syncs[1], 31.0);
    // steps after the last sync belong to an unfinished round
    let synced = 5 * r.syncs as u64;
    assert!(r.steps_per_worker.iter().all(|&s| s >= synced && s < synced + 5));
    assert_eq!(r.steps_per_worker[2], synced + 1);
}

#[test]
fn tsv_trace_has_header_and_sync_rows() {
    let obj = Quadratic::random(2, 4, 3);
    let r = simulate(&config(heterogeneous_workers(2, 1.0, &[], 1.0, 0), SyncPolicy::EveryNSteps(2), 4.0), &obj, &[0.0; 2])
        .unwrap();
    let tsv = r.trace_tsv();
    let mut lines = tsv.lines();
    assert_eq!(lines.next(), Some("time\tworker\tsteps\tobjective"));
    assert_eq!(tsv.lines().filter(|l| l.split('\t').nth(1) == Some("sync")).count(), 2);
}
