//! Synthetic power traces from simulated register activity.
//!
//! The modelled datapath has a 128-bit state register written once per layer
//! (X, S, L for Kuznyechik; AddRoundKey, SubBytes, ShiftRows, MixColumns for
//! AES) and a round register latched at the end of every round. Key expansion
//! writes its own register. Each write is one event on the trace timeline and
//! emits `samples_per_event` samples of `alpha * leak + beta + noise`, where
//! `leak` is the Hamming weight, Hamming distance, or one bit of the written
//! value. Noise is i.i.d. Gaussian.
//!
//! Every trace draws its plaintext and noise from a ChaCha stream selected by
//! its index, so a set is bit-identical whatever the execution strategy.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aes_target::{aes256_encrypt_with_trace, AesRoundTrace, AES256_ROUNDS};
use crate::block::Block;
use crate::exec::Execution;
use crate::kuznyechik::{
    encrypt_with_trace, key_schedule, MasterKey, RoundTrace, CONSTANTS, ROUNDS,
};
use crate::masking::{
    build_mask_schedule, masked_encrypt_with_trace, MaskGenerator, MaskSource, RemaskPolicy,
};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("unknown cipher id {0}")]
    UnknownCipher(String),
    #[error("trace count must be at least 1")]
    NoTraces,
    #[error("invalid leakage configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CipherId {
    Aes256,
    Kuznyechik,
    KuznyechikMasked,
}

impl CipherId {
    pub fn code(self) -> u8 {
        match self {
            CipherId::Aes256 => 0,
            CipherId::Kuznyechik => 1,
            CipherId::KuznyechikMasked => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, SimError> {
        match code {
            0 => Ok(CipherId::Aes256),
            1 => Ok(CipherId::Kuznyechik),
            2 => Ok(CipherId::KuznyechikMasked),
            c => Err(SimError::UnknownCipher(c.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CipherId::Aes256 => "aes256",
            CipherId::Kuznyechik => "kuznyechik",
            CipherId::KuznyechikMasked => "kuznyechik-masked",
        }
    }

    pub fn is_kuznyechik(self) -> bool {
        matches!(self, CipherId::Kuznyechik | CipherId::KuznyechikMasked)
    }
}

impl fmt::Display for CipherId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CipherId {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "aes256" => Ok(CipherId::Aes256),
            "kuznyechik" => Ok(CipherId::Kuznyechik),
            "kuznyechik-masked" => Ok(CipherId::KuznyechikMasked),
            other => Err(SimError::UnknownCipher(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeakageModel {
    HammingWeight,
    HammingDistance,
    /// One bit of the written value; index 0 is the least significant bit of `x_0`.
    SingleBit(u8),
}

impl LeakageModel {
    /// Noise-free leak of the transition `prev -> curr`.
    pub fn leak(self, prev: &Block, curr: &Block) -> u32 {
        match self {
            LeakageModel::HammingWeight => curr.hamming_weight(),
            LeakageModel::HammingDistance => prev.hamming_distance(*curr),
            LeakageModel::SingleBit(bit) => ((curr.to_u128() >> bit) & 1) as u32,
        }
    }
}

impl FromStr for LeakageModel {
    type Err = SimError;

    /// `hw`, `hd`, or `bit:<index>`.
    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "hw" | "hamming-weight" => Ok(LeakageModel::HammingWeight),
            "hd" | "hamming-distance" => Ok(LeakageModel::HammingDistance),
            _ => {
                let idx = s
                    .strip_prefix("bit:")
                    .and_then(|b| b.parse::<u8>().ok())
                    .filter(|&b| b < 128)
                    .ok_or_else(|| SimError::Config(format!("unknown leakage model {s:?}")))?;
                Ok(LeakageModel::SingleBit(idx))
            }
        }
    }
}

impl fmt::Display for LeakageModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LeakageModel::HammingWeight => f.write_str("hw"),
            LeakageModel::HammingDistance => f.write_str("hd"),
            LeakageModel::SingleBit(b) => write!(f, "bit:{b}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeakageConfig {
    pub model: LeakageModel,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub samples_per_event: u32,
    pub seed: u64,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        LeakageConfig {
            model: LeakageModel::HammingDistance,
            alpha: 1.0,
            beta: 0.0,
            sigma: 0.0,
            samples_per_event: 1,
            seed: 0,
        }
    }
}

impl LeakageConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SimError::Config(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        if self.samples_per_event == 0 {
            return Err(SimError::Config("samples_per_event must be >= 1".into()));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(SimError::Config("alpha and beta must be finite".into()));
        }
        Ok(())
    }

    fn noise(&self) -> Option<Normal<f64>> {
        (self.sigma > 0.0).then(|| Normal::new(0.0, self.sigma).expect("sigma validated"))
    }
}

/// `alpha * leak + beta + N(0, sigma^2)` for one register write.
pub fn leak_value<R: Rng + ?Sized>(
    prev: &Block,
    curr: &Block,
    cfg: &LeakageConfig,
    rng: &mut R,
) -> f64 {
    let base = cfg.alpha * cfg.model.leak(prev, curr) as f64 + cfg.beta;
    match cfg.noise() {
        Some(n) => base + n.sample(rng),
        None => base,
    }
}

/// Masking parameters for the masked Kuznyechik target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct MaskingOptions {
    pub seed: u64,
    pub remask: RemaskPolicy,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventEntry {
    pub label: String,
    pub offset: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub plaintext: Block,
    pub ciphertext: Block,
    pub samples: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    pub cipher: CipherId,
    /// SHA-256 of the key bytes.
    pub key_fingerprint: [u8; 32],
    pub config: LeakageConfig,
    pub events: Vec<EventEntry>,
    pub traces: Vec<Trace>,
}

impl TraceSet {
    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn samples_per_trace(&self) -> usize {
        self.events.len() * self.config.samples_per_event as usize
    }

    pub fn event_offset(&self, label: &str) -> Option<usize> {
        self.events
            .iter()
            .find(|e| e.label == label)
            .map(|e| e.offset as usize)
    }

    /// Sample range covering every event whose label starts with one of `prefixes`.
    /// Matching events must be contiguous on the timeline.
    pub fn window_for(&self, prefixes: &[&str]) -> Option<Range<usize>> {
        let spe = self.config.samples_per_event as usize;
        let hits: Vec<usize> = self
            .events
            .iter()
            .filter(|e| prefixes.iter().any(|p| e.label.starts_with(p)))
            .map(|e| e.offset as usize)
            .collect();
        let (&lo, &hi) = (hits.iter().min()?, hits.iter().max()?);
        Some(lo..hi + spe)
    }

    pub fn sample(&self, trace: usize, index: usize) -> f32 {
        self.traces[trace].samples[index]
    }
}

pub fn key_fingerprint(key: &[u8; 32]) -> [u8; 32] {
    Sha256::digest(key).into()
}

/// Event labels, in timeline order, for `cipher`.
pub fn event_labels(cipher: CipherId) -> Vec<String> {
    let mut v = Vec::new();
    match cipher {
        CipherId::Aes256 => {
            v.extend((1..=AES256_ROUNDS).map(|i| format!("ks.{i:02}")));
            v.push("load".into());
            v.push("r0.ark".into());
            for r in 1..=AES256_ROUNDS {
                v.push(format!("r{r}.sb"));
                v.push(format!("r{r}.sr"));
                if r < AES256_ROUNDS {
                    v.push(format!("r{r}.mc"));
                }
                v.push(format!("r{r}.ark"));
                v.push(format!("r{r}.latch"));
            }
        }
        CipherId::Kuznyechik | CipherId::KuznyechikMasked => {
            v.extend((1..=CONSTANTS).map(|i| format!("ks.{i:02}")));
            v.push("load".into());
            for r in 1..=ROUNDS {
                for layer in ["x", "s", "l", "latch"] {
                    v.push(format!("r{r}.{layer}"));
                }
            }
            v.push("final.x".into());
            if cipher == CipherId::KuznyechikMasked {
                v.push("unmask".into());
            }
        }
    }
    v
}

/// Register writes `(previous value, new value)` of one Kuznyechik
/// encryption, matching [`event_labels`]. For the masked target `ciphertext`
/// differs from `tr.output` and the extra unmask write is appended.
pub fn kuznyechik_transitions(
    tr: &RoundTrace,
    k1: &Block,
    ciphertext: &Block,
    masked: bool,
) -> Vec<(Block, Block)> {
    let mut v = Vec::with_capacity(CONSTANTS + 2 + 4 * ROUNDS + 1);
    let mut key_reg = *k1;
    for &next in &tr.key_expansion {
        v.push((key_reg, next));
        key_reg = next;
    }
    v.push((Block::ZERO, tr.input));
    let mut state = tr.input;
    let mut latch = tr.input;
    for snap in &tr.rounds {
        v.push((state, snap.after_x));
        v.push((snap.after_x, snap.after_s));
        v.push((snap.after_s, snap.after_l));
        v.push((latch, snap.after_l));
        state = snap.after_l;
        latch = snap.after_l;
    }
    v.push((state, tr.output));
    if masked {
        v.push((tr.output, *ciphertext));
    }
    v
}

pub fn aes_transitions(tr: &AesRoundTrace) -> Vec<(Block, Block)> {
    let mut v = Vec::new();
    for w in tr.round_keys.windows(2) {
        v.push((w[0], w[1]));
    }
    v.push((Block::ZERO, tr.input));
    v.push((tr.input, tr.initial));
    let mut latch = tr.initial;
    for snap in &tr.rounds {
        v.push((latch, snap.sub_bytes));
        v.push((snap.sub_bytes, snap.shift_rows));
        let pre_ark = match snap.mix_columns {
            Some(mc) => {
                v.push((snap.shift_rows, mc));
                mc
            }
            None => snap.shift_rows,
        };
        v.push((pre_ark, snap.add_round_key));
        v.push((latch, snap.add_round_key));
        latch = snap.add_round_key;
    }
    v
}

fn trace_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Synthesizes `n` traces of random plaintexts encrypted under `key`.
pub fn simulate_traces(
    cipher: CipherId,
    key: &[u8; 32],
    n: usize,
    cfg: &LeakageConfig,
    masking: MaskingOptions,
    exec: Execution,
) -> Result<TraceSet, SimError> {
    if n == 0 {
        return Err(SimError::NoTraces);
    }
    cfg.validate()?;
    let labels = event_labels(cipher);
    let spe = cfg.samples_per_event as usize;
    let events: Vec<EventEntry> = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| EventEntry {
            label,
            offset: (i * spe) as u32,
        })
        .collect();

    let kuz_keys = cipher
        .is_kuznyechik()
        .then(|| key_schedule(&MasterKey(*key)));
    let shared_mask = (cipher == CipherId::KuznyechikMasked
        && masking.remask == RemaskPolicy::PerKey)
        .then(|| build_mask_schedule(&MaskGenerator::new(masking.seed).fresh_mask()));
    let noise = cfg.noise();

    let traces = exec.map_range(n, |i| {
        let mut rng = trace_rng(cfg.seed, i);
        let plaintext = Block(rng.random());
        let (ciphertext, transitions) = match cipher {
            CipherId::Aes256 => {
                let (c, tr) = aes256_encrypt_with_trace(&plaintext, key);
                (c, aes_transitions(&tr))
            }
            CipherId::Kuznyechik => {
                let rk = kuz_keys.as_ref().expect("kuznyechik keys");
                let (c, tr) = encrypt_with_trace(&plaintext, rk);
                (c, kuznyechik_transitions(&tr, &rk.k(1), &c, false))
            }
            CipherId::KuznyechikMasked => {
                let rk = kuz_keys.as_ref().expect("kuznyechik keys");
                let fresh;
                let ms = match &shared_mask {
                    Some(ms) => ms,
                    None => {
                        let m = MaskGenerator::for_trace(masking.seed, i as u64).fresh_mask();
                        fresh = build_mask_schedule(&m);
                        &fresh
                    }
                };
                let (c, tr) = masked_encrypt_with_trace(&plaintext, rk, ms);
                (c, kuznyechik_transitions(&tr, &rk.k(1), &c, true))
            }
        };
        let mut samples = Vec::with_capacity(transitions.len() * spe);
        for (prev, curr) in &transitions {
            let base = cfg.alpha * cfg.model.leak(prev, curr) as f64 + cfg.beta;
            for _ in 0..spe {
                let v = match &noise {
                    Some(nd) => base + nd.sample(&mut rng),
                    None => base,
                };
                samples.push(v as f32);
            }
        }
        Trace {
            plaintext,
            ciphertext,
            samples,
        }
    });

    Ok(TraceSet {
        cipher,
        key_fingerprint: key_fingerprint(key),
        config: *cfg,
        events,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aes_target::aes256_encrypt;
    use crate::kuznyechik::encrypt;

    fn cfg(model: LeakageModel, sigma: f64) -> LeakageConfig {
        LeakageConfig {
            model,
            sigma,
            seed: 17,
            ..LeakageConfig::default()
        }
    }

    #[test]
    fn leak_value_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = cfg(LeakageModel::HammingWeight, 0.0);
        c.beta = 2.5;
        assert_eq!(leak_value(&Block([3; 16]), &Block::ZERO, &c, &mut rng), 2.5);
        c.model = LeakageModel::HammingDistance;
        let x = Block([0x5a; 16]);
        assert_eq!(leak_value(&x, &x, &c, &mut rng), 2.5);
        let c = cfg(LeakageModel::HammingDistance, 0.0);
        assert_eq!(
            leak_value(&Block([0x0f; 16]), &Block([0xf0; 16]), &c, &mut rng),
            128.0
        );
        let c = cfg(LeakageModel::SingleBit(8), 0.0);
        let mut b = Block::ZERO;
        b.0[1] = 1;
        assert_eq!(leak_value(&Block::ZERO, &b, &c, &mut rng), 1.0);
    }

    #[test]
    fn model_parsing() {
        assert_eq!("hw".parse(), Ok(LeakageModel::HammingWeight));
        assert_eq!("hd".parse(), Ok(LeakageModel::HammingDistance));
        assert_eq!("bit:7".parse(), Ok(LeakageModel::SingleBit(7)));
        assert!("bit:128".parse::<LeakageModel>().is_err());
        assert!("power".parse::<LeakageModel>().is_err());
        assert_eq!(LeakageModel::SingleBit(3).to_string(), "bit:3");
    }

    #[test]
    fn cipher_ids() {
        for c in [
            CipherId::Aes256,
            CipherId::Kuznyechik,
            CipherId::KuznyechikMasked,
        ] {
            assert_eq!(CipherId::from_code(c.code()), Ok(c));
            assert_eq!(c.name().parse::<CipherId>(), Ok(c));
        }
        assert!(CipherId::from_code(9).is_err());
        assert!("des".parse::<CipherId>().is_err());
    }

    #[test]
    fn rejects_bad_requests() {
        let key = [0u8; 32];
        let c = cfg(LeakageModel::HammingDistance, 0.0);
        assert_eq!(
            simulate_traces(
                CipherId::Aes256,
                &key,
                0,
                &c,
                Default::default(),
                Execution::Sequential
            ),
            Err(SimError::NoTraces)
        );
        let mut bad = c;
        bad.sigma = -1.0;
        assert!(matches!(
            simulate_traces(
                CipherId::Aes256,
                &key,
                1,
                &bad,
                Default::default(),
                Execution::Sequential
            ),
            Err(SimError::Config(_))
        ));
        let mut bad = c;
        bad.samples_per_event = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn timeline_lengths_match_labels() {
        let key = [1u8; 32];
        for cipher in [
            CipherId::Aes256,
            CipherId::Kuznyechik,
            CipherId::KuznyechikMasked,
        ] {
            let mut c = cfg(LeakageModel::HammingDistance, 0.0);
            c.samples_per_event = 3;
            let ts = simulate_traces(
                cipher,
                &key,
                2,
                &c,
                Default::default(),
                Execution::Sequential,
            )
            .unwrap();
            assert_eq!(ts.samples_per_trace(), event_labels(cipher).len() * 3);
            assert!(ts
                .traces
                .iter()
                .all(|t| t.samples.len() == ts.samples_per_trace()));
        }
    }

    #[test]
    fn final_xor_sample_is_register_distance() {
        let key = [0x42u8; 32];
        let ts = simulate_traces(
            CipherId::Kuznyechik,
            &key,
            1,
            &cfg(LeakageModel::HammingDistance, 0.0),
            Default::default(),
            Execution::Sequential,
        )
        .unwrap();
        let t = &ts.traces[0];
        let rk = key_schedule(&MasterKey(key));
        let (c, tr) = encrypt_with_trace(&t.plaintext, &rk);
        assert_eq!(c, t.ciphertext);
        let off = ts.event_offset("final.x").unwrap();
        assert_eq!(
            t.samples[off] as f64,
            tr.rounds[8].after_l.hamming_distance(c) as f64
        );
        let off = ts.event_offset("r3.s").unwrap();
        assert_eq!(
            t.samples[off] as u32,
            tr.rounds[2].after_x.hamming_distance(tr.rounds[2].after_s)
        );
    }

    #[test]
    fn ciphertexts_are_real_encryptions() {
        let key = [9u8; 32];
        let c = cfg(LeakageModel::HammingWeight, 1.0);
        for cipher in [
            CipherId::Aes256,
            CipherId::Kuznyechik,
            CipherId::KuznyechikMasked,
        ] {
            let ts = simulate_traces(
                cipher,
                &key,
                20,
                &c,
                Default::default(),
                Execution::Sequential,
            )
            .unwrap();
            for t in &ts.traces {
                let want = match cipher {
                    CipherId::Aes256 => aes256_encrypt(&t.plaintext, &key),
                    _ => encrypt(&t.plaintext, &key_schedule(&MasterKey(key))),
                };
                assert_eq!(t.ciphertext, want);
            }
        }
    }

    #[test]
    fn deterministic_across_strategies() {
        let key = [5u8; 32];
        let c = cfg(LeakageModel::HammingDistance, 2.0);
        let m = MaskingOptions {
            seed: 3,
            remask: RemaskPolicy::PerBlock,
        };
        let a = simulate_traces(
            CipherId::KuznyechikMasked,
            &key,
            64,
            &c,
            m,
            Execution::Parallel,
        )
        .unwrap();
        let b = simulate_traces(
            CipherId::KuznyechikMasked,
            &key,
            64,
            &c,
            m,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(a, b);
        let c2 = LeakageConfig { seed: 18, ..c };
        let d = simulate_traces(
            CipherId::KuznyechikMasked,
            &key,
            64,
            &c2,
            m,
            Execution::Parallel,
        )
        .unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn noiseless_hd_samples_are_integers() {
        let mut c = cfg(LeakageModel::HammingDistance, 0.0);
        c.alpha = 0.5;
        c.beta = 3.0;
        let ts = simulate_traces(
            CipherId::Aes256,
            &[7; 32],
            10,
            &c,
            Default::default(),
            Execution::Parallel,
        )
        .unwrap();
        for t in &ts.traces {
            for &s in &t.samples {
                let k = (s as f64 - 3.0) / 0.5;
                assert_eq!(k, k.round());
            }
        }
    }

    #[test]
    fn noise_adds_sigma_squared_variance() {
        // Sample variance of 1000 draws: relative sd sqrt(2/999) ~ 4.5%, so
        // a 16 +- 2 band on the variance increase is over 2 sigma wide.
        let key = [3u8; 32];
        let var_at = |sigma: f64| {
            let ts = simulate_traces(
                CipherId::Kuznyechik,
                &key,
                1000,
                &cfg(LeakageModel::HammingDistance, sigma),
                Default::default(),
                Execution::Parallel,
            )
            .unwrap();
            // key-expansion events are data independent: pure noise
            let off = ts.event_offset("ks.05").unwrap();
            let xs: Vec<f64> = ts.traces.iter().map(|t| t.samples[off] as f64).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
        };
        let grow = var_at(4.0) - var_at(0.0);
        assert!((14.0..=18.0).contains(&grow), "variance grew by {grow}");
    }

    #[test]
    fn masked_traces_never_carry_masks_and_share_events() {
        let key = [0x11u8; 32];
        let ts = simulate_traces(
            CipherId::KuznyechikMasked,
            &key,
            4,
            &cfg(LeakageModel::HammingDistance, 0.0),
            MaskingOptions {
                seed: 1,
                remask: RemaskPolicy::PerKey,
            },
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(ts.key_fingerprint, key_fingerprint(&key));
        assert_eq!(ts.event_offset("unmask"), Some(ts.samples_per_trace() - 1));
        assert_eq!(
            ts.window_for(&["r9."]),
            Some(ts.event_offset("r9.x").unwrap()..ts.event_offset("final.x").unwrap())
        );
    }
}
