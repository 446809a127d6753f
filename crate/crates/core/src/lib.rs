//! Side-channel workbench for the Kuznyechik (Grasshopper) block cipher.
//!
//! - [`gf_linear`], [`kuznyechik`]: the cipher, its key schedule and the
//!   inversion of that schedule from a pair of consecutive subkeys.
//! - [`masking`]: first-order boolean masking with recoded S-boxes.
//! - [`aes_target`]: AES-256, the CPA positive control.
//! - [`leakage_sim`]: Hamming-weight / Hamming-distance / single-bit trace synthesis.
//! - [`cpa`]: Pearson correlation, attack hypotheses, ranking.
//! - [`trace_io`]: the `SCTR` trace file format and CSV export.

pub mod aes_target;
pub mod block;
pub mod cpa;
pub mod exec;
pub mod gf_linear;
pub mod kuznyechik;
pub mod leakage_sim;
pub mod masking;
pub mod trace_io;

pub use block::Block;
pub use exec::Execution;
