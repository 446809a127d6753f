use grasshopper_sca::cpa::{run_attack, AttackId, AttackOptions, CpaError};
use grasshopper_sca::kuznyechik::{key_schedule, MasterKey};
use grasshopper_sca::leakage_sim::{simulate_traces, CipherId, LeakageConfig, MaskingOptions};
use grasshopper_sca::{Block, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(sigma: f64, seed: u64) -> LeakageConfig {
    LeakageConfig {
        sigma,
        seed,
        ..LeakageConfig::default()
    }
}

#[test]
fn wrong_k10_destroys_round9_attack() {
    // four 5000-trace runs pooled: 64 uniform ranks have sd 9.2 around 127.5
    let mut means = Vec::new();
    for run in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xb00 + run);
        let key: [u8; 32] = rng.random();
        let ts = simulate_traces(
            CipherId::Kuznyechik,
            &key,
            5000,
            &cfg(1.0, 0xb000 + run),
            MaskingOptions::default(),
            Execution::Parallel,
        )
        .unwrap();
        let k10 = key_schedule(&MasterKey(key)).k(10);
        let opts = |k10: Block| AttackOptions {
            true_key: Some(key),
            k10: Some(k10),
            ..AttackOptions::default()
        };
        let right = run_attack(&ts, AttackId::KuzRound9, &opts(k10)).unwrap();
        assert_eq!(right.bytes_at_rank_zero(), 16);
        let mut wrong_k10 = k10;
        wrong_k10.0[0] ^= 0x01;
        wrong_k10.0[9] ^= 0x80;
        let wrong = run_attack(&ts, AttackId::KuzRound9, &opts(wrong_k10)).unwrap();
        means.push(wrong.mean_rank().unwrap());
    }
    let m = means.iter().sum::<f64>() / means.len() as f64;
    assert!(
        (96.0..=160.0).contains(&m),
        "pooled mean rank {m} ({means:?})"
    );
}

#[test]
fn aes_success_grows_with_trace_count() {
    let counts = [500, 1000, 2000, 5000];
    let mut mean_zero = [0.0f64; 4];
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xa00 + seed);
        let key: [u8; 32] = rng.random();
        let ts = simulate_traces(
            CipherId::Aes256,
            &key,
            5000,
            &cfg(4.0, 0xa000 + seed),
            MaskingOptions::default(),
            Execution::Parallel,
        )
        .unwrap();
        for (slot, &n) in counts.iter().enumerate() {
            let mut sub = ts.clone();
            sub.traces.truncate(n);
            let rep = run_attack(
                &sub,
                AttackId::AesLastRound,
                &AttackOptions {
                    true_key: Some(key),
                    ..AttackOptions::default()
                },
            )
            .unwrap();
            mean_zero[slot] += rep.bytes_at_rank_zero() as f64 / 5.0;
        }
    }
    assert!(
        mean_zero.windows(2).all(|w| w[0] <= w[1]),
        "bytes at rank 0 by trace count: {mean_zero:?}"
    );
    assert_eq!(mean_zero[3], 16.0);
}

#[test]
fn attacks_refuse_mismatched_targets() {
    let key = [1u8; 32];
    let aes = simulate_traces(
        CipherId::Aes256,
        &key,
        10,
        &cfg(0.0, 1),
        MaskingOptions::default(),
        Execution::Sequential,
    )
    .unwrap();
    let kuz = simulate_traces(
        CipherId::Kuznyechik,
        &key,
        10,
        &cfg(0.0, 1),
        MaskingOptions::default(),
        Execution::Sequential,
    )
    .unwrap();
    assert!(matches!(
        run_attack(&aes, AttackId::KuzLastRoundHw, &AttackOptions::default()),
        Err(CpaError::Incompatible { .. })
    ));
    assert!(matches!(
        run_attack(&kuz, AttackId::AesLastRound, &AttackOptions::default()),
        Err(CpaError::Incompatible { .. })
    ));
    assert_eq!(
        run_attack(&kuz, AttackId::KuzRound9, &AttackOptions::default()),
        Err(CpaError::MissingK10)
    );
}

#[test]
fn reports_are_execution_independent() {
    let key = [0x5eu8; 32];
    let ts = simulate_traces(
        CipherId::Aes256,
        &key,
        800,
        &cfg(1.0, 4),
        MaskingOptions::default(),
        Execution::Parallel,
    )
    .unwrap();
    let run = |exec| {
        run_attack(
            &ts,
            AttackId::AesLastRound,
            &AttackOptions {
                true_key: Some(key),
                exec,
                keep_correlations: true,
                ..AttackOptions::default()
            },
        )
        .unwrap()
    };
    let a = run(Execution::Parallel);
    let b = run(Execution::Sequential);
    assert_eq!(a, b);
    assert_eq!(a.correlations.as_ref().map(Vec::len), Some(16));
    let csv = a.to_csv();
    assert_eq!(csv.lines().count(), 17);
    assert!(csv.starts_with("byte,best_guess,peak_r,sample_index,true_byte,rank,status"));
    for b in &a.bytes {
        assert_eq!(b.true_rank == Some(0), b.best_guess == b.true_byte);
    }
}
