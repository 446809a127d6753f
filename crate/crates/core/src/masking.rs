//! First-order boolean masking of Kuznyechik.
//!
//! The plaintext enters XORed with a 128-bit mask `m`. `X` and `L` are linear
//! so they carry the mask through (`L` turns it into `L(m)`); `S` is replaced
//! per round by recoded tables `S_m` with `S_m(x ^ m) = S(x) ^ m`, one per
//! distinct mask byte. Round `i` therefore runs under mask `L^(i-1)(m)` and the
//! final state is unmasked with `L^9(m)`.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;

use crate::block::{Block, BLOCK_LEN};
use crate::gf_linear::{big_l_pow, LinearTables};
use crate::kuznyechik::{
    key_schedule_traced, x_layer, LayerSnapshot, MasterKey, RoundKeySet, RoundTrace, ROUNDS, SBOX,
};

/// Everything masked encryption needs for one mask value.
#[derive(Clone)]
pub struct MaskSchedule {
    base_mask: Block,
    round_masks: [Block; ROUNDS],
    unmask: Block,
    tables: Vec<[u8; 256]>,
    /// `table_index[round][pos]` selects the entry of `tables` for that byte.
    table_index: [[u16; BLOCK_LEN]; ROUNDS],
}

impl fmt::Debug for MaskSchedule {
    // masks are secret material; only print the shape
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MaskSchedule")
            .field("distinct_tables", &self.tables.len())
            .finish_non_exhaustive()
    }
}

fn masked_table(mask_byte: u8) -> [u8; 256] {
    std::array::from_fn(|x| SBOX[x ^ mask_byte as usize] ^ mask_byte)
}

pub fn build_mask_schedule(m: &Block) -> MaskSchedule {
    let round_masks: [Block; ROUNDS] = std::array::from_fn(|i| big_l_pow(m, i));
    let unmask = LinearTables::get().apply_l(&round_masks[ROUNDS - 1]);

    let mut tables: Vec<[u8; 256]> = Vec::new();
    let mut slot_of = [u16::MAX; 256];
    let mut table_index = [[0u16; BLOCK_LEN]; ROUNDS];
    for (round, mask) in round_masks.iter().enumerate() {
        for pos in 0..BLOCK_LEN {
            let b = mask[pos] as usize;
            if slot_of[b] == u16::MAX {
                slot_of[b] = tables.len() as u16;
                tables.push(masked_table(b as u8));
            }
            table_index[round][pos] = slot_of[b];
        }
    }
    MaskSchedule {
        base_mask: *m,
        round_masks,
        unmask,
        tables,
        table_index,
    }
}

impl MaskSchedule {
    pub fn base_mask(&self) -> Block {
        self.base_mask
    }

    /// Mask in force during round `round` (1-based): `L^(round-1)(m)`.
    pub fn round_mask(&self, round: usize) -> Block {
        self.round_masks[round - 1]
    }

    /// `L^9(m)`, removed after the last key addition.
    pub fn unmask(&self) -> Block {
        self.unmask
    }

    /// The recoded S-box used at byte `pos` of round `round` (1-based).
    pub fn masked_sbox(&self, round: usize, pos: usize) -> &[u8; 256] {
        &self.tables[self.table_index[round - 1][pos] as usize]
    }

    pub fn distinct_tables(&self) -> usize {
        self.tables.len()
    }

    fn masked_s_layer(&self, round: usize, x: &Block) -> Block {
        let idx = &self.table_index[round - 1];
        Block(std::array::from_fn(|pos| {
            self.tables[idx[pos] as usize][x[pos] as usize]
        }))
    }
}

/// Masked encryption. Output equals [`crate::kuznyechik::encrypt`].
pub fn masked_encrypt(p: &Block, rk: &RoundKeySet, ms: &MaskSchedule) -> Block {
    let lin = LinearTables::get();
    let mut s = *p ^ ms.base_mask;
    for round in 1..=ROUNDS {
        s = x_layer(&s, &rk.subkeys[round - 1]);
        s = ms.masked_s_layer(round, &s);
        s = lin.apply_l(&s);
    }
    x_layer(&s, &rk.subkeys[ROUNDS]) ^ ms.unmask
}

/// Masked encryption with the register contents recorded.
///
/// The returned [`RoundTrace`] holds what the datapath actually stores:
/// `input` is `p ^ m`, every snapshot is masked, and `output` is the state
/// after `X[k_10]` but before the `L^9(m)` unmask. The first element of the
/// tuple is the true ciphertext.
pub fn masked_encrypt_with_trace(
    p: &Block,
    rk: &RoundKeySet,
    ms: &MaskSchedule,
) -> (Block, RoundTrace) {
    let lin = LinearTables::get();
    let (_, key_expansion) =
        key_schedule_traced(&MasterKey::from_halves(&rk.subkeys[0], &rk.subkeys[1]));
    let input = *p ^ ms.base_mask;
    let mut rounds = [LayerSnapshot::default(); ROUNDS];
    let mut s = input;
    for (i, snap) in rounds.iter_mut().enumerate() {
        snap.after_x = x_layer(&s, &rk.subkeys[i]);
        snap.after_s = ms.masked_s_layer(i + 1, &snap.after_x);
        snap.after_l = lin.apply_l(&snap.after_s);
        s = snap.after_l;
    }
    let masked_out = x_layer(&s, &rk.subkeys[ROUNDS]);
    (
        masked_out ^ ms.unmask,
        RoundTrace {
            key_expansion,
            input,
            rounds,
            output: masked_out,
        },
    )
}

/// Anything that can hand out fresh 128-bit masks.
pub trait MaskSource {
    fn fresh_mask(&mut self) -> Block;
}

/// Deterministic xorshift64* mask generator. Not cryptographically strong;
/// wrap a real RNG in [`ExternalEntropy`] when that matters.
#[derive(Clone, Debug)]
pub struct MaskGenerator {
    state: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl MaskGenerator {
    pub fn new(seed: u64) -> Self {
        // xorshift state must be nonzero
        let state = splitmix64(seed).max(1);
        MaskGenerator { state }
    }

    /// Independent generator for trace `index`, so parallel synthesis is
    /// reproducible regardless of scheduling.
    pub fn for_trace(seed: u64, index: u64) -> Self {
        MaskGenerator::new(seed ^ splitmix64(index.wrapping_add(0x5eed)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_f491_4f6c_dd1d)
    }
}

impl MaskSource for MaskGenerator {
    fn fresh_mask(&mut self) -> Block {
        let lo = self.next_u64() as u128;
        let hi = self.next_u64() as u128;
        Block::from_u128(hi << 64 | lo)
    }
}

/// Masks drawn from a caller-supplied RNG.
pub struct ExternalEntropy<R: RngCore>(pub R);

impl<R: RngCore> MaskSource for ExternalEntropy<R> {
    fn fresh_mask(&mut self) -> Block {
        let mut b = [0u8; BLOCK_LEN];
        self.0.fill_bytes(&mut b);
        Block(b)
    }
}

/// When a new mask is drawn during trace synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RemaskPolicy {
    /// One mask per key schedule, shared by every block under that key.
    #[default]
    PerKey,
    /// A fresh mask for every encrypted block.
    PerBlock,
}

impl FromStr for RemaskPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "per-key" => Ok(RemaskPolicy::PerKey),
            "per-block" => Ok(RemaskPolicy::PerBlock),
            other => Err(format!("unknown remask policy {other:?}")),
        }
    }
}

impl fmt::Display for RemaskPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RemaskPolicy::PerKey => "per-key",
            RemaskPolicy::PerBlock => "per-block",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf_linear::big_l;
    use crate::kuznyechik::{encrypt, encrypt_with_trace, key_schedule, lsx};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_mask_tables_are_plain_sbox() {
        let ms = build_mask_schedule(&Block::ZERO);
        assert_eq!(ms.distinct_tables(), 1);
        for round in 1..=ROUNDS {
            for pos in 0..BLOCK_LEN {
                assert_eq!(ms.masked_sbox(round, pos), &SBOX);
            }
        }
    }

    #[test]
    fn defining_relation_holds_for_every_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Block(rng.random());
        let ms = build_mask_schedule(&m);
        for round in 1..=ROUNDS {
            let mask = ms.round_mask(round);
            for pos in 0..BLOCK_LEN {
                let t = ms.masked_sbox(round, pos);
                let mb = mask[pos];
                for y in 0..=255u8 {
                    assert_eq!(t[(y ^ mb) as usize], SBOX[y as usize] ^ mb);
                }
                let mut seen = [false; 256];
                t.iter().for_each(|&v| seen[v as usize] = true);
                assert!(seen.iter().all(|&s| s), "table is a permutation");
            }
        }
    }

    #[test]
    fn round_masks_follow_l_powers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Block(rng.random());
        let ms = build_mask_schedule(&m);
        assert_eq!(ms.round_mask(1), m);
        let l8 = (0..8).fold(m, |s, _| big_l(&s));
        assert_eq!(ms.round_mask(9), l8);
        assert_eq!(ms.unmask(), big_l(&l8));
    }

    #[test]
    fn masked_equals_unmasked() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let rk = key_schedule(&MasterKey(rng.random()));
            let p = Block(rng.random());
            let ms = build_mask_schedule(&Block(rng.random()));
            assert_eq!(masked_encrypt(&p, &rk, &ms), encrypt(&p, &rk));
        }
        let rk = key_schedule(&MasterKey([7; 32]));
        let p = Block([9; 16]);
        let zero = build_mask_schedule(&Block::ZERO);
        assert_eq!(masked_encrypt(&p, &rk, &zero), encrypt(&p, &rk));
    }

    #[test]
    fn first_round_intermediate_carries_l_of_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rk = key_schedule(&MasterKey(rng.random()));
        let p = Block(rng.random());
        let m = Block(rng.random());
        let ms = build_mask_schedule(&m);
        let (c, tr) = masked_encrypt_with_trace(&p, &rk, &ms);
        assert_eq!(c, encrypt(&p, &rk));
        assert_eq!(tr.input, p ^ m);
        assert_eq!(tr.rounds[0].after_l, lsx(&p, &rk.k(1)) ^ big_l(&m));
        let (_, plain) = encrypt_with_trace(&p, &rk);
        assert_eq!(tr.output ^ ms.unmask(), plain.output);
    }

    #[test]
    fn generator_is_deterministic() {
        let mut a = MaskGenerator::new(42);
        let mut b = MaskGenerator::new(42);
        for _ in 0..100 {
            assert_eq!(a.fresh_mask(), b.fresh_mask());
        }
        assert_ne!(
            MaskGenerator::new(42).fresh_mask(),
            MaskGenerator::new(43).fresh_mask()
        );
        assert_ne!(MaskGenerator::new(0).fresh_mask(), Block::ZERO);
        assert_eq!(
            MaskGenerator::for_trace(5, 10).fresh_mask(),
            MaskGenerator::for_trace(5, 10).fresh_mask()
        );
        assert_ne!(
            MaskGenerator::for_trace(5, 10).fresh_mask(),
            MaskGenerator::for_trace(5, 11).fresh_mask()
        );
    }

    #[test]
    fn generator_byte_means_are_centred() {
        // uniform byte: mean 127.5, sd 73.9; over 1e4 draws 5 sigma of the mean is ~3.7
        let mut g = MaskGenerator::new(2024);
        let mut sums = [0u64; BLOCK_LEN];
        for _ in 0..10_000 {
            let m = g.fresh_mask();
            for (s, &b) in sums.iter_mut().zip(m.0.iter()) {
                *s += b as u64;
            }
        }
        for s in sums {
            let mean = s as f64 / 10_000.0;
            assert!((112.0..=143.0).contains(&mean), "mean {mean}");
        }
    }

    #[test]
    fn external_entropy_source() {
        let mut src = ExternalEntropy(ChaCha8Rng::seed_from_u64(1));
        assert_ne!(src.fresh_mask(), src.fresh_mask());
    }

    #[test]
    fn remask_policy_parses() {
        assert_eq!("per-key".parse(), Ok(RemaskPolicy::PerKey));
        assert_eq!("per-block".parse(), Ok(RemaskPolicy::PerBlock));
        assert!("sometimes".parse::<RemaskPolicy>().is_err());
        assert_eq!(RemaskPolicy::PerBlock.to_string(), "per-block");
    }
}
