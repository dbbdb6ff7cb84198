mod common;

use common::*;
use fedtensor::baselines::run_central;
use fedtensor::data::{partition_patients, synthesize_tensor, PartitionPlan, SynthConfig};
use fedtensor::federation::{
    decode_frame, run_federated, ComputeClock, FederationConfig, Message, Party, TransportKind, DEFAULT_LINK_RATE,
};
use fedtensor::{AdmmConfig, FactorMatrix, SparseTensor};

fn cfg(k: usize, rank: usize, seed: u64) -> FederationConfig {
    FederationConfig {
        hospitals: k,
        admm: AdmmConfig {
            rank,
            omega: 250.0,
            seed,
            ..AdmmConfig::default()
        },
        ..FederationConfig::default()
    }
}

fn instance(seed: u64, k: usize) -> (SparseTensor, Vec<SparseTensor>) {
    let (t, _) = synthesize_tensor(&SynthConfig {
        shape: vec![24, 12, 10],
        rank: 3,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let shards = partition_patients(&t, &PartitionPlan::even(24, k, seed).unwrap()).unwrap();
    (t, shards)
}

#[test]
fn single_hospital_equals_central() {
    let (t, shards) = instance(1, 1);
    let fed = run_federated(&shards, &cfg(1, 3, 1)).unwrap();
    let central = run_central(&t, &cfg(1, 3, 1)).unwrap();
    assert_eq!(fed.trace, central.trace);
    assert!(rel_diff(fed.final_rmse(), central.final_rmse()) <= 1e-6);
    assert_eq!(central.timing.communication_seconds, 0.0);
}

#[test]
fn noiseless_rank_two_is_recovered() {
    let mut rng = rng(71);
    let truth: Vec<FactorMatrix> = [20, 15, 10].iter().map(|&d| random_factor(d, 2, &mut rng)).collect();
    let t = exact_tensor(&truth);
    let shards = partition_patients(&t, &PartitionPlan::even(20, 3, 71).unwrap()).unwrap();
    let run = run_federated(
        &shards,
        &FederationConfig {
            hospitals: 3,
            admm: AdmmConfig {
                rank: 2,
                seed: 71,
                ..AdmmConfig::default()
            },
            ..FederationConfig::default()
        },
    )
    .unwrap();
    assert!(run.final_rmse() <= 1e-2, "rmse {}", run.final_rmse());
}

#[test]
fn fixed_seed_reproduces_traces_bitwise() {
    let (_, shards) = instance(2, 3);
    let a = run_federated(&shards, &cfg(3, 3, 2)).unwrap();
    let b = run_federated(&shards, &cfg(3, 3, 2)).unwrap();
    let bits = |r: &fedtensor::federation::FederatedRun| {
        r.trace
            .iter()
            .map(|t| (t.objective.to_bits(), t.residual.to_bits(), t.rmse.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    for (ma, mb) in a.models.iter().zip(&b.models) {
        for (fa, fb) in ma.factors().iter().zip(mb.factors()) {
            assert_eq!(fa.as_slice(), fb.as_slice());
        }
    }
}

#[test]
fn tcp_and_in_process_traces_agree() {
    let (_, shards) = instance(3, 3);
    let local = run_federated(&shards, &cfg(3, 3, 3)).unwrap();
    let tcp = run_federated(
        &shards,
        &FederationConfig {
            transport: TransportKind::Tcp,
            ..cfg(3, 3, 3)
        },
    )
    .unwrap();
    assert_eq!(local.trace, tcp.trace);
    assert_eq!(local.timing.total_bytes(), tcp.timing.total_bytes());
}

#[test]
fn frame_log_is_clean_and_fully_counted() {
    let (_, shards) = instance(4, 3);
    let run = run_federated(
        &shards,
        &FederationConfig {
            record_frames: true,
            ..cfg(3, 3, 4)
        },
    )
    .unwrap();
    let feature_rows = [12usize, 10];
    let mut up = 0u64;
    let mut down = 0u64;
    for frame in &run.frames {
        let m = decode_frame(&frame.bytes).unwrap();
        let matrix = match &m {
            Message::LocalFeatureFactor { mode, factor, .. } | Message::GlobalFeatureFactor { mode, factor, .. } => {
                Some((mode.get(), factor))
            }
            Message::MultiplierH { mode, multiplier, .. } => Some((mode.get(), multiplier)),
            Message::Hello { .. } | Message::RoundComplete { .. } | Message::Converged { .. } => None,
            other => panic!("unexpected {:?}", other.msg_type()),
        };
        if let Some((mode, f)) = matrix {
            assert!(mode >= 1);
            assert_eq!(f.rows(), feature_rows[mode - 1]);
        }
        match frame.to {
            Party::Coordinator => up += frame.bytes.len() as u64,
            Party::Hospital(_) => down += frame.bytes.len() as u64,
        }
    }
    assert_eq!((up, down), (run.timing.bytes_up, run.timing.bytes_down));
    assert_eq!(
        run.timing.communication_seconds,
        (up + down) as f64 / DEFAULT_LINK_RATE
    );
    let per_iter: u64 = run.timing.iterations.iter().map(|i| i.bytes_up + i.bytes_down).sum();
    assert_eq!(per_iter, up + down);
}

#[test]
fn objective_settles_and_residual_vanishes() {
    for seed in 0..3 {
        let (t, _) = synthesize_tensor(&SynthConfig {
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let shards = partition_patients(&t, &PartitionPlan::even(50, 3, seed).unwrap()).unwrap();
        let run = run_federated(&shards, &cfg(3, 5, seed)).unwrap();
        for w in run.trace.windows(2).skip(4) {
            assert!(w[1].objective <= w[0].objective * 1.01);
        }
        assert!(run.converged);
        assert!(run.trace.last().unwrap().residual < 1e-6);
    }
}

#[test]
fn ops_clock_gives_reproducible_timing() {
    let (_, shards) = instance(5, 2);
    let c = FederationConfig {
        compute_clock: ComputeClock::Ops,
        ..cfg(2, 3, 5)
    };
    let a = run_federated(&shards, &c).unwrap();
    let b = run_federated(&shards, &c).unwrap();
    assert_eq!(a.timing, b.timing);
    assert!(a.timing.computation_seconds > 0.0);
}

#[test]
fn bad_configs_are_rejected() {
    let (_, shards) = instance(6, 2);
    assert!(run_federated(&shards, &cfg(3, 3, 0)).is_err());
    let mut c = cfg(2, 3, 0);
    c.admm.omega = 0.0;
    assert!(run_federated(&shards, &c).is_err());
    let mut c = cfg(2, 3, 0);
    c.link_rate = -1.0;
    assert!(run_federated(&shards, &c).is_err());
}
