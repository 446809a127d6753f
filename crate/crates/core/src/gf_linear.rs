//! GF(2^8) arithmetic modulo `x^8 + x^7 + x^6 + x + 1` and the Kuznyechik
//! linear layer built on it (`l`, `R`, `L` and their inverses).

use std::ops::{Add, Mul};
use std::sync::OnceLock;

use crate::block::{Block, BLOCK_LEN};

/// `x^8 + x^7 + x^6 + x + 1`, leading term included.
pub const KUZNYECHIK_MODULUS: u16 = 0x1c3;

/// Coefficients of `l`, indexed by byte position: `LINEAR_COEFFS[i]` multiplies `x_i`.
pub const LINEAR_COEFFS: [u8; BLOCK_LEN] = [
    1, 148, 32, 133, 16, 194, 192, 1, 251, 1, 192, 194, 16, 133, 32, 148,
];

/// Multiplication context for one reduction polynomial.
pub struct Field {
    modulus: u16,
    table: Box<[[u8; 256]; 256]>,
}

impl Field {
    /// `modulus` must be a degree-8 polynomial including its `x^8` term.
    pub fn new(modulus: u16) -> Self {
        assert!(
            (0x100..0x200).contains(&modulus),
            "modulus must have degree 8"
        );
        let mut table = Box::new([[0u8; 256]; 256]);
        for a in 0..256usize {
            for b in 0..256usize {
                table[a][b] = mul_shift_reduce(a as u8, b as u8, modulus);
            }
        }
        Field { modulus, table }
    }

    pub fn modulus(&self) -> u16 {
        self.modulus
    }

    #[inline]
    pub fn mul(&self, a: u8, b: u8) -> u8 {
        self.table[a as usize][b as usize]
    }

    /// Row of the multiplication table for a fixed left operand.
    #[inline]
    pub fn row(&self, a: u8) -> &[u8; 256] {
        &self.table[a as usize]
    }
}

/// Interleaved shift-and-reduce multiply. Slow path used to fill tables.
pub fn mul_shift_reduce(mut a: u8, mut b: u8, modulus: u16) -> u8 {
    let low = (modulus & 0xff) as u8;
    let mut acc = 0u8;
    while b != 0 {
        if b & 1 != 0 {
            acc ^= a;
        }
        let carry = a & 0x80 != 0;
        a <<= 1;
        if carry {
            a ^= low;
        }
        b >>= 1;
    }
    acc
}

/// The field used throughout the cipher.
pub fn field() -> &'static Field {
    static FIELD: OnceLock<Field> = OnceLock::new();
    FIELD.get_or_init(|| Field::new(KUZNYECHIK_MODULUS))
}

#[inline]
pub fn gf_mul(a: u8, b: u8) -> u8 {
    field().mul(a, b)
}

/// A byte viewed as an element of GF(2^8); `+` is XOR, `*` is field product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct FieldElement(pub u8);

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);
    pub const ONE: FieldElement = FieldElement(1);

    /// Multiplicative inverse, by search over the table row.
    pub fn inverse(self) -> Option<FieldElement> {
        if self.0 == 0 {
            return None;
        }
        let row = field().row(self.0);
        row.iter()
            .position(|&p| p == 1)
            .map(|i| FieldElement(i as u8))
    }
}

impl Add for FieldElement {
    type Output = FieldElement;
    // characteristic 2: addition is XOR
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn add(self, rhs: FieldElement) -> FieldElement {
        FieldElement(self.0 ^ rhs.0)
    }
}

impl Mul for FieldElement {
    type Output = FieldElement;
    fn mul(self, rhs: FieldElement) -> FieldElement {
        FieldElement(gf_mul(self.0, rhs.0))
    }
}

/// `l(x_15, ..., x_0)`: the field-weighted XOR of all state bytes.
pub fn little_l(x: &Block) -> u8 {
    let f = field();
    x.0.iter()
        .zip(LINEAR_COEFFS.iter())
        .fold(0u8, |acc, (&v, &c)| acc ^ f.mul(c, v))
}

/// `R(x) = l(x) || x_15 || ... || x_1`: bytes move one position down and
/// `l(x)` enters at position 15.
pub fn big_r(x: &Block) -> Block {
    let top = little_l(x);
    let mut out = Block::ZERO;
    out.0[..BLOCK_LEN - 1].copy_from_slice(&x.0[1..]);
    out.0[BLOCK_LEN - 1] = top;
    out
}

pub fn big_r_inv(y: &Block) -> Block {
    let f = field();
    let mut out = Block::ZERO;
    out.0[1..].copy_from_slice(&y.0[..BLOCK_LEN - 1]);
    // the coefficient of x_0 is 1, so it falls out of l directly
    let rest = (1..BLOCK_LEN).fold(0u8, |acc, i| acc ^ f.mul(LINEAR_COEFFS[i], out.0[i]));
    out.0[0] = y.0[BLOCK_LEN - 1] ^ rest;
    out
}

/// `L = R^16`, evaluated by iterating `R`.
pub fn big_l(x: &Block) -> Block {
    (0..BLOCK_LEN).fold(*x, |s, _| big_r(&s))
}

pub fn big_l_inv(x: &Block) -> Block {
    (0..BLOCK_LEN).fold(*x, |s, _| big_r_inv(&s))
}

/// `L^n(x)`, using the fused tables.
pub fn big_l_pow(x: &Block, n: usize) -> Block {
    let t = LinearTables::get();
    (0..n).fold(*x, |s, _| t.apply_l(&s))
}

/// Precomputed forms of the linear layer.
///
/// `l_fused[p][v]` is `L` applied to the block holding `v` at position `p`
/// and zero elsewhere; by linearity `L(x)` is the XOR of `l_fused[p][x_p]`
/// over all positions. `l_inv_fused` is the same for `L^-1`.
pub struct LinearTables {
    pub mul_tables: [[u8; 256]; BLOCK_LEN],
    pub l_fused: Box<[[u128; 256]; BLOCK_LEN]>,
    pub l_inv_fused: Box<[[u128; 256]; BLOCK_LEN]>,
}

impl LinearTables {
    pub fn get() -> &'static LinearTables {
        static TABLES: OnceLock<LinearTables> = OnceLock::new();
        TABLES.get_or_init(LinearTables::build)
    }

    fn build() -> LinearTables {
        let f = field();
        let mut mul_tables = [[0u8; 256]; BLOCK_LEN];
        for (pos, table) in mul_tables.iter_mut().enumerate() {
            *table = *f.row(LINEAR_COEFFS[pos]);
        }
        let mut l_fused = Box::new([[0u128; 256]; BLOCK_LEN]);
        let mut l_inv_fused = Box::new([[0u128; 256]; BLOCK_LEN]);
        for pos in 0..BLOCK_LEN {
            for v in 0..256usize {
                let mut e = Block::ZERO;
                e.0[pos] = v as u8;
                l_fused[pos][v] = big_l(&e).to_u128();
                l_inv_fused[pos][v] = big_l_inv(&e).to_u128();
            }
        }
        LinearTables {
            mul_tables,
            l_fused,
            l_inv_fused,
        }
    }

    #[inline]
    pub fn apply_l(&self, x: &Block) -> Block {
        Block::from_u128(fused(&self.l_fused, x))
    }

    #[inline]
    pub fn apply_l_inv(&self, x: &Block) -> Block {
        Block::from_u128(fused(&self.l_inv_fused, x))
    }

    /// `l(x)` through the per-position multiplication tables.
    #[inline]
    pub fn little_l(&self, x: &Block) -> u8 {
        x.0.iter()
            .enumerate()
            .fold(0u8, |acc, (p, &v)| acc ^ self.mul_tables[p][v as usize])
    }
}

#[inline]
fn fused(table: &[[u128; 256]; BLOCK_LEN], x: &Block) -> u128 {
    x.0.iter()
        .enumerate()
        .fold(0u128, |acc, (p, &v)| acc ^ table[p][v as usize])
}
