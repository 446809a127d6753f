//! The Kuznyechik (Grasshopper) block cipher, GOST R 34.12-2015.
//!
//! Encryption is nine rounds of `L ∘ S ∘ X[k_i]` followed by `X[k_10]`.
//! Two evaluation paths exist: a reference path built from the layer
//! functions (iterated `R` for `L`) and a fast path that fuses `S` and `L`
//! into sixteen 256-entry tables of 128-bit words. They are tested to be
//! byte-identical.

use std::fmt;
use std::sync::OnceLock;

use thiserror::Error;

use crate::block::{decode_hex, encode_hex, Block, HexError, BLOCK_LEN};
use crate::gf_linear::{big_l, big_l_inv, LinearTables};

pub const ROUNDS: usize = 9;
pub const SUBKEYS: usize = 10;
pub const CONSTANTS: usize = 32;
pub const FEISTEL_STEPS_PER_PAIR: usize = 8;

/// The substitution `pi` (`S'`).
pub const SBOX: [u8; 256] = [
    252, 238, 221, 17, 207, 110, 49, 22, 251, 196, 250, 218, 35, 197, 4, 77, //
    233, 119, 240, 219, 147, 46, 153, 186, 23, 54, 241, 187, 20, 205, 95, 193, //
    249, 24, 101, 90, 226, 92, 239, 33, 129, 28, 60, 66, 139, 1, 142, 79, //
    5, 132, 2, 174, 227, 106, 143, 160, 6, 11, 237, 152, 127, 212, 211, 31, //
    235, 52, 44, 81, 234, 200, 72, 171, 242, 42, 104, 162, 253, 58, 206, 204, //
    181, 112, 14, 86, 8, 12, 118, 18, 191, 114, 19, 71, 156, 183, 93, 135, //
    21, 161, 150, 41, 16, 123, 154, 199, 243, 145, 120, 111, 157, 158, 178, 177, //
    50, 117, 25, 61, 255, 53, 138, 126, 109, 84, 198, 128, 195, 189, 13, 87, //
    223, 245, 36, 169, 62, 168, 67, 201, 215, 121, 214, 246, 124, 34, 185, 3, //
    224, 15, 236, 222, 122, 148, 176, 188, 220, 232, 40, 80, 78, 51, 10, 74, //
    167, 151, 96, 115, 30, 0, 98, 68, 26, 184, 56, 130, 100, 159, 38, 65, //
    173, 69, 70, 146, 39, 94, 85, 47, 140, 163, 165, 125, 105, 213, 149, 59, //
    7, 88, 179, 64, 134, 172, 29, 247, 48, 55, 107, 228, 136, 217, 231, 137, //
    225, 27, 131, 73, 76, 63, 248, 254, 141, 83, 170, 144, 202, 216, 133, 97, //
    32, 113, 103, 164, 45, 43, 9, 91, 203, 155, 37, 208, 190, 229, 108, 82, //
    89, 166, 116, 210, 230, 244, 180, 192, 209, 102, 175, 194, 57, 75, 99, 182, //
];

pub const SBOX_INV: [u8; 256] = invert_sbox(&SBOX);

const fn invert_sbox(sbox: &[u8; 256]) -> [u8; 256] {
    let mut inv = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        inv[sbox[i] as usize] = i as u8;
        i += 1;
    }
    inv
}

pub fn s_layer(x: &Block) -> Block {
    Block(x.0.map(|v| SBOX[v as usize]))
}

pub fn s_layer_inv(x: &Block) -> Block {
    Block(x.0.map(|v| SBOX_INV[v as usize]))
}

#[inline]
pub fn x_layer(x: &Block, k: &Block) -> Block {
    *x ^ *k
}

/// `L(S(X[k](x)))`, one full round on the reference path.
pub fn lsx(x: &Block, k: &Block) -> Block {
    big_l(&s_layer(&x_layer(x, k)))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyScheduleError {
    #[error("pair index {0} out of range, expected 1..=4")]
    PairIndex(usize),
}

/// A 256-bit master key. `bytes[0..16]` (the first 32 hex characters) is `K_1`,
/// `bytes[16..32]` is `K_2`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MasterKey(pub [u8; 32]);

impl MasterKey {
    pub fn from_hex(s: &str) -> Result<Self, HexError> {
        decode_hex::<32>(s).map(MasterKey)
    }

    pub fn to_hex(&self) -> String {
        encode_hex(&self.0)
    }

    pub fn from_halves(k1: &Block, k2: &Block) -> Self {
        let mut bytes = [0u8; 32];
        bytes[..16].copy_from_slice(&k1.to_be_bytes());
        bytes[16..].copy_from_slice(&k2.to_be_bytes());
        MasterKey(bytes)
    }

    pub fn halves(&self) -> (Block, Block) {
        let mut hi = [0u8; BLOCK_LEN];
        let mut lo = [0u8; BLOCK_LEN];
        hi.copy_from_slice(&self.0[..16]);
        lo.copy_from_slice(&self.0[16..]);
        (Block::from_be_bytes(hi), Block::from_be_bytes(lo))
    }
}

impl fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MasterKey({})", self.to_hex())
    }
}

/// Round constant `C_j = L(j)` with `j` encoded in byte `x_0`.
pub fn round_constant(j: usize) -> Block {
    assert!((1..=CONSTANTS).contains(&j), "constant index {j}");
    big_l(&Block::from_u128(j as u128))
}

pub fn round_constants() -> &'static [Block; CONSTANTS] {
    static C: OnceLock<[Block; CONSTANTS]> = OnceLock::new();
    C.get_or_init(|| std::array::from_fn(|i| round_constant(i + 1)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundKeySet {
    /// `subkeys[0]` is `k_1`.
    pub subkeys: [Block; SUBKEYS],
    pub constants: [Block; CONSTANTS],
}

impl RoundKeySet {
    /// 1-based accessor matching `k_1..k_10`.
    pub fn k(&self, i: usize) -> Block {
        self.subkeys[i - 1]
    }
}

/// One Feistel step `F[c](a1, a0) = (LSX[c](a1) ^ a0, a1)`.
fn feistel(c: &Block, a1: Block, a0: Block) -> (Block, Block) {
    (lsx(&a1, c) ^ a0, a1)
}

/// Inverse step `(b1, b0) -> (b0, LSX[c](b0) ^ b1)`.
fn feistel_inv(c: &Block, b1: Block, b0: Block) -> (Block, Block) {
    (b0, lsx(&b0, c) ^ b1)
}

pub fn key_schedule(mk: &MasterKey) -> RoundKeySet {
    key_schedule_traced(mk).0
}

/// Key schedule plus the left Feistel register after each of the 32 steps.
pub fn key_schedule_traced(mk: &MasterKey) -> (RoundKeySet, [Block; CONSTANTS]) {
    let constants = *round_constants();
    let (k1, k2) = mk.halves();
    let mut subkeys = [Block::ZERO; SUBKEYS];
    subkeys[0] = k1;
    subkeys[1] = k2;
    let mut steps = [Block::ZERO; CONSTANTS];
    let (mut a1, mut a0) = (k1, k2);
    for pair in 1..=4 {
        for step in 0..FEISTEL_STEPS_PER_PAIR {
            let j = FEISTEL_STEPS_PER_PAIR * (pair - 1) + step;
            (a1, a0) = feistel(&constants[j], a1, a0);
            steps[j] = a1;
        }
        subkeys[2 * pair] = a1;
        subkeys[2 * pair + 1] = a0;
    }
    (RoundKeySet { subkeys, constants }, steps)
}

/// Recovers the master key from the consecutive pair `(k_{2i+1}, k_{2i+2})`
/// by running the Feistel steps backwards through `C_{8i} .. C_1`.
pub fn recover_master_from_pair(
    k_odd: &Block,
    k_even: &Block,
    pair_index: usize,
) -> Result<MasterKey, KeyScheduleError> {
    if !(1..=4).contains(&pair_index) {
        return Err(KeyScheduleError::PairIndex(pair_index));
    }
    let constants = round_constants();
    let (mut b1, mut b0) = (*k_odd, *k_even);
    for j in (0..FEISTEL_STEPS_PER_PAIR * pair_index).rev() {
        (b1, b0) = feistel_inv(&constants[j], b1, b0);
    }
    Ok(MasterKey::from_halves(&b1, &b0))
}

/// Register values produced by one full round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct LayerSnapshot {
    pub after_x: Block,
    pub after_s: Block,
    pub after_l: Block,
}

/// Every intermediate of one encryption, including key expansion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundTrace {
    /// Left Feistel register after each key-expansion step.
    pub key_expansion: [Block; CONSTANTS],
    pub input: Block,
    pub rounds: [LayerSnapshot; ROUNDS],
    /// State after the final `X[k_10]`, i.e. the ciphertext.
    pub output: Block,
}

/// Reference-path encryption.
pub fn encrypt(p: &Block, rk: &RoundKeySet) -> Block {
    let mut s = *p;
    for k in &rk.subkeys[..ROUNDS] {
        s = lsx(&s, k);
    }
    x_layer(&s, &rk.subkeys[ROUNDS])
}

/// Reference-path encryption recording every layer output. The key-expansion
/// steps are recomputed from `rk`'s first pair.
pub fn encrypt_with_trace(p: &Block, rk: &RoundKeySet) -> (Block, RoundTrace) {
    let (_, key_expansion) =
        key_schedule_traced(&MasterKey::from_halves(&rk.subkeys[0], &rk.subkeys[1]));
    let mut rounds = [LayerSnapshot::default(); ROUNDS];
    let mut s = *p;
    for (snap, k) in rounds.iter_mut().zip(&rk.subkeys[..ROUNDS]) {
        snap.after_x = x_layer(&s, k);
        snap.after_s = s_layer(&snap.after_x);
        snap.after_l = big_l(&snap.after_s);
        s = snap.after_l;
    }
    let c = x_layer(&s, &rk.subkeys[ROUNDS]);
    (
        c,
        RoundTrace {
            key_expansion,
            input: *p,
            rounds,
            output: c,
        },
    )
}

pub fn decrypt(c: &Block, rk: &RoundKeySet) -> Block {
    let mut s = x_layer(c, &rk.subkeys[ROUNDS]);
    for k in rk.subkeys[..ROUNDS].iter().rev() {
        s = x_layer(&s_layer_inv(&big_l_inv(&s)), k);
    }
    s
}

/// `ls[p][v] = L(S(v) at position p)`.
struct FastTables {
    ls: Box<[[u128; 256]; BLOCK_LEN]>,
}

fn fast_tables() -> &'static FastTables {
    static T: OnceLock<FastTables> = OnceLock::new();
    T.get_or_init(|| {
        let lin = LinearTables::get();
        let mut ls = Box::new([[0u128; 256]; BLOCK_LEN]);
        for (pos, row) in ls.iter_mut().enumerate() {
            for (v, entry) in row.iter_mut().enumerate() {
                *entry = lin.l_fused[pos][SBOX[v] as usize];
            }
        }
        FastTables { ls }
    })
}

/// Table-driven encryption; identical output to [`encrypt`].
pub fn encrypt_fast(p: &Block, rk: &RoundKeySet) -> Block {
    let t = fast_tables();
    let mut s = p.to_u128();
    for k in &rk.subkeys[..ROUNDS] {
        let bytes = (s ^ k.to_u128()).to_le_bytes();
        s = bytes
            .iter()
            .enumerate()
            .fold(0u128, |acc, (pos, &v)| acc ^ t.ls[pos][v as usize]);
    }
    Block::from_u128(s ^ rk.subkeys[ROUNDS].to_u128())
}

/// Table-driven decryption: fused `L^-1`, then byte-wise `S^-1`.
pub fn decrypt_fast(c: &Block, rk: &RoundKeySet) -> Block {
    let lin = LinearTables::get();
    let mut s = *c ^ rk.subkeys[ROUNDS];
    for k in rk.subkeys[..ROUNDS].iter().rev() {
        s = s_layer_inv(&lin.apply_l_inv(&s)) ^ *k;
    }
    s
}

/// Convenience wrapper holding an expanded key.
#[derive(Clone, Debug)]
pub struct Kuznyechik {
    keys: RoundKeySet,
}

impl Kuznyechik {
    pub fn new(mk: &MasterKey) -> Self {
        Kuznyechik {
            keys: key_schedule(mk),
        }
    }

    pub fn round_keys(&self) -> &RoundKeySet {
        &self.keys
    }

    pub fn encrypt(&self, p: &Block) -> Block {
        encrypt_fast(p, &self.keys)
    }

    pub fn decrypt(&self, c: &Block) -> Block {
        decrypt_fast(c, &self.keys)
    }
}
