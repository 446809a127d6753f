//! AES-256 with per-layer state capture: the positive control for CPA.
//!
//! Only encryption is provided. Internally the state is a FIPS-197 byte
//! array (column-major, byte 0 first on the wire); at the API boundary it is a
//! [`Block`] whose hex form is the usual FIPS hex string.

use crate::block::Block;

pub const AES256_ROUNDS: usize = 14;
const NK: usize = 8;

const fn xtime(a: u8) -> u8 {
    (a << 1) ^ if a & 0x80 != 0 { 0x1b } else { 0 }
}

const fn aes_mul(mut a: u8, mut b: u8) -> u8 {
    let mut r = 0;
    while b != 0 {
        if b & 1 != 0 {
            r ^= a;
        }
        a = xtime(a);
        b >>= 1;
    }
    r
}

const fn build_sbox() -> [u8; 256] {
    let mut s = [0u8; 256];
    let mut x = 0usize;
    while x < 256 {
        // x^254 is the inverse (and maps 0 to 0)
        let mut inv = 1u8;
        let mut i = 0;
        while i < 254 {
            inv = aes_mul(inv, x as u8);
            i += 1;
        }
        if x == 0 {
            inv = 0;
        }
        let mut y = inv;
        let mut k = 1;
        while k < 5 {
            y ^= inv.rotate_left(k);
            k += 1;
        }
        s[x] = y ^ 0x63;
        x += 1;
    }
    s
}

pub const AES_SBOX: [u8; 256] = build_sbox();

pub const AES_SBOX_INV: [u8; 256] = {
    let mut inv = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        inv[AES_SBOX[i] as usize] = i as u8;
        i += 1;
    }
    inv
};

/// `SHIFT_ROWS_SRC[i]` is the input position that ShiftRows moves to position `i`.
pub const SHIFT_ROWS_SRC: [usize; 16] = {
    let mut t = [0usize; 16];
    let mut i = 0;
    while i < 16 {
        let (row, col) = (i % 4, i / 4);
        t[i] = row + 4 * ((col + row) % 4);
        i += 1;
    }
    t
};

type State = [u8; 16];

/// The fifteen 128-bit round keys of AES-256, FIPS byte order.
pub fn aes256_expand_key(key: &[u8; 32]) -> [State; AES256_ROUNDS + 1] {
    const RCON: [u8; 7] = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40];
    let mut w = [[0u8; 4]; 4 * (AES256_ROUNDS + 1)];
    for (i, word) in w.iter_mut().take(NK).enumerate() {
        word.copy_from_slice(&key[4 * i..4 * i + 4]);
    }
    for i in NK..w.len() {
        let mut t = w[i - 1];
        if i % NK == 0 {
            t.rotate_left(1);
            t = t.map(|b| AES_SBOX[b as usize]);
            t[0] ^= RCON[i / NK - 1];
        } else if i % NK == 4 {
            t = t.map(|b| AES_SBOX[b as usize]);
        }
        for j in 0..4 {
            w[i][j] = w[i - NK][j] ^ t[j];
        }
    }
    std::array::from_fn(|r| {
        let mut k = [0u8; 16];
        for c in 0..4 {
            k[4 * c..4 * c + 4].copy_from_slice(&w[4 * r + c]);
        }
        k
    })
}

/// Round-14 key as a [`Block`]: the target of the last-round attack.
pub fn aes256_last_round_key(key: &[u8; 32]) -> Block {
    Block::from_be_bytes(aes256_expand_key(key)[AES256_ROUNDS])
}

fn sub_bytes(s: &State) -> State {
    s.map(|b| AES_SBOX[b as usize])
}

fn shift_rows(s: &State) -> State {
    std::array::from_fn(|i| s[SHIFT_ROWS_SRC[i]])
}

fn mix_columns(s: &State) -> State {
    let mut out = [0u8; 16];
    for c in 0..4 {
        let col = &s[4 * c..4 * c + 4];
        for r in 0..4 {
            out[4 * c + r] = aes_mul(2, col[r])
                ^ aes_mul(3, col[(r + 1) % 4])
                ^ col[(r + 2) % 4]
                ^ col[(r + 3) % 4];
        }
    }
    out
}

fn add_round_key(s: &State, k: &State) -> State {
    std::array::from_fn(|i| s[i] ^ k[i])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct AesRoundSnapshot {
    pub sub_bytes: Block,
    pub shift_rows: Block,
    /// Absent in the final round.
    pub mix_columns: Option<Block>,
    pub add_round_key: Block,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AesRoundTrace {
    pub round_keys: [Block; AES256_ROUNDS + 1],
    pub input: Block,
    /// State after the initial AddRoundKey.
    pub initial: Block,
    pub rounds: [AesRoundSnapshot; AES256_ROUNDS],
}

impl AesRoundTrace {
    pub fn output(&self) -> Block {
        self.rounds[AES256_ROUNDS - 1].add_round_key
    }
}

pub fn aes256_encrypt(p: &Block, key: &[u8; 32]) -> Block {
    aes256_encrypt_with_trace(p, key).0
}

pub fn aes256_encrypt_with_trace(p: &Block, key: &[u8; 32]) -> (Block, AesRoundTrace) {
    let rk = aes256_expand_key(key);
    let mut s = add_round_key(&p.to_be_bytes(), &rk[0]);
    let initial = Block::from_be_bytes(s);
    let mut rounds = [AesRoundSnapshot::default(); AES256_ROUNDS];
    for (r, snap) in rounds.iter_mut().enumerate() {
        let sb = sub_bytes(&s);
        let sr = shift_rows(&sb);
        let mc = (r + 1 < AES256_ROUNDS).then(|| mix_columns(&sr));
        s = add_round_key(mc.as_ref().unwrap_or(&sr), &rk[r + 1]);
        *snap = AesRoundSnapshot {
            sub_bytes: Block::from_be_bytes(sb),
            shift_rows: Block::from_be_bytes(sr),
            mix_columns: mc.map(Block::from_be_bytes),
            add_round_key: Block::from_be_bytes(s),
        };
    }
    let c = Block::from_be_bytes(s);
    (
        c,
        AesRoundTrace {
            round_keys: rk.map(Block::from_be_bytes),
            input: *p,
            initial,
            rounds,
        },
    )
}

/// Last-round Hamming-distance hypothesis for round-14 key byte `byte_index`
/// (FIPS byte order) under `guess`.
///
/// The round-13 output byte that ends up at position `byte_index` is
/// `InvS(c[byte_index] ^ k)`; it lived in register position
/// `SHIFT_ROWS_SRC[byte_index]`, which is overwritten by the ciphertext byte
/// there. The hypothesis is the Hamming distance of that register transition.
pub fn aes_last_round_hypothesis(c: &Block, byte_index: usize, guess: u8) -> u8 {
    let cb = c.to_be_bytes();
    let before = AES_SBOX_INV[(cb[byte_index] ^ guess) as usize];
    let after = cb[SHIFT_ROWS_SRC[byte_index]];
    (before ^ after).count_ones() as u8
}
