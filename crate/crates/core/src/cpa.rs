//! Correlation power analysis.
//!
//! For each target key byte every one of the 256 guesses yields a hypothesis
//! vector over the traces; its Pearson correlation with each trace sample is
//!
//! ```text
//!            sum_d (h_d - mean(h)) (t_d - mean(t))
//! r = ---------------------------------------------------
//!     sqrt( sum_d (h_d - mean(h))^2  sum_d (t_d - mean(t))^2 )
//! ```
//!
//! Guesses are ranked by their peak correlation over an attack window.
//! A hypothesis that is constant over the traces has no correlation at all;
//! such guesses are flagged rather than given a number, and a byte where every
//! guess is constant is reported as structurally infeasible.

use std::fmt::{self, Write as _};
use std::ops::Range;
use std::str::FromStr;

use thiserror::Error;

use crate::aes_target::aes256_last_round_key;
use crate::aes_target::aes_last_round_hypothesis;
use crate::block::{Block, BLOCK_LEN};
use crate::exec::Execution;
use crate::gf_linear::LinearTables;
use crate::kuznyechik::{key_schedule, s_layer_inv, MasterKey, SBOX_INV};
use crate::leakage_sim::{CipherId, TraceSet};

pub const GUESSES: usize = 256;

/// `(score, relative sample index, r)` of a guess's best sample.
pub type Peak = (f64, usize, f64);
const CHUNK: usize = 1024;

#[derive(Debug, Error, PartialEq)]
pub enum CpaError {
    #[error("hypothesis has {hyp} traces but the trace set has {traces}")]
    DimensionMismatch { hyp: usize, traces: usize },
    #[error("need at least 2 traces, got {0}")]
    TooFewTraces(usize),
    #[error("sample window {start}..{end} outside 0..{len}")]
    Window {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("attack {attack} does not apply to {cipher} traces")]
    Incompatible { attack: AttackId, cipher: CipherId },
    #[error("the round-9 attack needs the tenth subkey")]
    MissingK10,
    #[error("unknown attack {0:?}")]
    UnknownAttack(String),
    #[error("report for byte {byte} has no true-key rank")]
    MissingRank { byte: usize },
    #[error("no reports given")]
    NoReports,
}

/// `values[d * 256 + g]`: hypothesis for trace `d` under guess `g`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HypothesisMatrix {
    n_traces: usize,
    values: Vec<u8>,
}

impl HypothesisMatrix {
    pub fn from_fn<F: FnMut(usize, u8) -> u8>(n_traces: usize, mut f: F) -> Self {
        let mut values = Vec::with_capacity(n_traces * GUESSES);
        for d in 0..n_traces {
            values.extend((0..GUESSES).map(|g| f(d, g as u8)));
        }
        HypothesisMatrix { n_traces, values }
    }

    pub fn n_traces(&self) -> usize {
        self.n_traces
    }

    pub fn get(&self, trace: usize, guess: u8) -> u8 {
        self.values[trace * GUESSES + guess as usize]
    }

    pub fn row(&self, trace: usize) -> &[u8] {
        &self.values[trace * GUESSES..(trace + 1) * GUESSES]
    }

    pub fn column(&self, guess: u8) -> Vec<u8> {
        (0..self.n_traces).map(|d| self.get(d, guess)).collect()
    }

    pub fn is_constant(&self, guess: u8) -> bool {
        let first = self.get(0, guess);
        (1..self.n_traces).all(|d| self.get(d, guess) == first)
    }
}

/// Pearson coefficients `r[g][j]` over a window of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    window: Range<usize>,
    r: Vec<Option<f64>>,
    degenerate_guess: Vec<bool>,
    degenerate_sample: Vec<bool>,
}

impl CorrelationMatrix {
    /// Absolute sample indices covered.
    pub fn window(&self) -> Range<usize> {
        self.window.clone()
    }

    pub fn n_samples(&self) -> usize {
        self.window.len()
    }

    /// `None` when the guess's hypothesis or the sample column has zero variance.
    /// `j` is relative to the window start.
    pub fn get(&self, guess: u8, j: usize) -> Option<f64> {
        self.r[guess as usize * self.n_samples() + j]
    }

    pub fn row(&self, guess: u8) -> &[Option<f64>] {
        let w = self.n_samples();
        &self.r[guess as usize * w..(guess as usize + 1) * w]
    }

    pub fn is_degenerate_guess(&self, guess: u8) -> bool {
        self.degenerate_guess[guess as usize]
    }

    pub fn is_degenerate_sample(&self, j: usize) -> bool {
        self.degenerate_sample[j]
    }

    pub fn degenerate_guesses(&self) -> usize {
        self.degenerate_guess.iter().filter(|&&d| d).count()
    }

    /// Peak of `guess`'s row under `stat`: `(score, relative sample, r)`.
    pub fn peak(&self, guess: u8, stat: RankingStatistic) -> Option<Peak> {
        self.row(guess)
            .iter()
            .enumerate()
            .filter_map(|(j, r)| r.map(|r| (stat.score(r), j, r)))
            .fold(None, |best: Option<Peak>, cand| match best {
                Some(b) if b.0 >= cand.0 => Some(b),
                _ => Some(cand),
            })
    }
}

#[derive(Clone)]
struct Partial {
    sh: Vec<i64>,
    shh: Vec<i64>,
    st: Vec<f64>,
    stt: Vec<f64>,
    sht: Vec<f64>,
    t_varies: Vec<bool>,
}

impl Partial {
    fn new(w: usize) -> Self {
        Partial {
            sh: vec![0; GUESSES],
            shh: vec![0; GUESSES],
            st: vec![0.0; w],
            stt: vec![0.0; w],
            sht: vec![0.0; w * GUESSES],
            t_varies: vec![false; w],
        }
    }

    fn merge(&mut self, o: &Partial) {
        let add_i = |a: &mut [i64], b: &[i64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        let add_f = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add_i(&mut self.sh, &o.sh);
        add_i(&mut self.shh, &o.shh);
        add_f(&mut self.st, &o.st);
        add_f(&mut self.stt, &o.stt);
        add_f(&mut self.sht, &o.sht);
        self.t_varies
            .iter_mut()
            .zip(&o.t_varies)
            .for_each(|(a, b)| *a |= b);
    }
}

/// Correlation of every guess with every sample of the trace set.
pub fn pearson_matrix(
    h: &HypothesisMatrix,
    traces: &TraceSet,
) -> Result<CorrelationMatrix, CpaError> {
    pearson_window(
        h,
        traces,
        0..traces.samples_per_trace(),
        Execution::default(),
    )
}

/// Correlation over `window` only.
///
/// Sums are accumulated in one pass over data shifted by the first trace
/// (hypotheses in exact integers), in fixed chunks merged in order, so the
/// result does not depend on `exec`.
pub fn pearson_window(
    h: &HypothesisMatrix,
    traces: &TraceSet,
    window: Range<usize>,
    exec: Execution,
) -> Result<CorrelationMatrix, CpaError> {
    let n = traces.len();
    if h.n_traces() != n {
        return Err(CpaError::DimensionMismatch {
            hyp: h.n_traces(),
            traces: n,
        });
    }
    if n < 2 {
        return Err(CpaError::TooFewTraces(n));
    }
    let len = traces.samples_per_trace();
    if window.start >= window.end || window.end > len {
        return Err(CpaError::Window {
            start: window.start,
            end: window.end,
            len,
        });
    }
    let w = window.len();
    let h0: Vec<i64> = h.row(0).iter().map(|&v| v as i64).collect();
    let t0: Vec<f64> = traces.traces[0].samples[window.clone()]
        .iter()
        .map(|&v| v as f64)
        .collect();

    let n_chunks = n.div_ceil(CHUNK);
    let partials = exec.map_range(n_chunks, |c| {
        let mut p = Partial::new(w);
        let mut hs = [0f64; GUESSES];
        for d in c * CHUNK..((c + 1) * CHUNK).min(n) {
            for (g, &v) in h.row(d).iter().enumerate() {
                let dv = v as i64 - h0[g];
                p.sh[g] += dv;
                p.shh[g] += dv * dv;
                hs[g] = dv as f64;
            }
            let samples = &traces.traces[d].samples[window.clone()];
            for (j, &s) in samples.iter().enumerate() {
                let t = s as f64 - t0[j];
                if t != 0.0 {
                    p.t_varies[j] = true;
                }
                p.st[j] += t;
                p.stt[j] += t * t;
                let acc = &mut p.sht[j * GUESSES..(j + 1) * GUESSES];
                for (a, &hv) in acc.iter_mut().zip(hs.iter()) {
                    *a += hv * t;
                }
            }
        }
        p
    });
    let mut total = Partial::new(w);
    for p in &partials {
        total.merge(p);
    }

    let nf = n as f64;
    let nf_i = n as i64;
    let var_h: Vec<i64> = (0..GUESSES)
        .map(|g| nf_i * total.shh[g] - total.sh[g] * total.sh[g])
        .collect();
    let degenerate_guess: Vec<bool> = var_h.iter().map(|&v| v == 0).collect();
    let var_t: Vec<f64> = (0..w)
        .map(|j| nf * total.stt[j] - total.st[j] * total.st[j])
        .collect();
    let degenerate_sample: Vec<bool> = (0..w)
        .map(|j| !total.t_varies[j] || var_t[j] <= 0.0)
        .collect();

    let mut r = vec![None; GUESSES * w];
    for g in 0..GUESSES {
        if degenerate_guess[g] {
            continue;
        }
        for j in 0..w {
            if degenerate_sample[j] {
                continue;
            }
            let cov = nf * total.sht[j * GUESSES + g] - total.sh[g] as f64 * total.st[j];
            let denom = (var_h[g] as f64 * var_t[j]).sqrt();
            r[g * w + j] = Some((cov / denom).clamp(-1.0, 1.0));
        }
    }
    Ok(CorrelationMatrix {
        window,
        r,
        degenerate_guess,
        degenerate_sample,
    })
}

/// Kuznyechik last round, Hamming-distance model: the final key addition
/// moves `c ^ g` to `c`, whose distance is `HW(g)` for every ciphertext.
pub fn kuz_last_round_hd_hypothesis(c: &Block, byte_index: usize, guess: u8) -> u8 {
    let cb = c[byte_index];
    (cb ^ (cb ^ guess)).count_ones() as u8
}

/// Kuznyechik last round, Hamming-weight model: weight of the round-9 output byte.
pub fn kuz_last_round_hw_hypothesis(c: &Block, byte_index: usize, guess: u8) -> u8 {
    (c[byte_index] ^ guess).count_ones() as u8
}

/// Ninth-round hypothesis with `k_10` known.
///
/// `Y = c ^ k10` is the round-9 output, `S^-1(L^-1(Y))` is the round-9 input
/// after key addition, so XORing the guessed `k_9` byte gives the round-8
/// output byte `Z`. The hypothesis is the distance of the round register
/// moving from `Z` to `Y` at that byte.
pub fn kuz_round9_hypothesis(c: &Block, k10: &Block, byte_index: usize, guess: u8) -> u8 {
    let y = *c ^ *k10;
    let w = LinearTables::get().apply_l_inv(&y);
    let z = SBOX_INV[w[byte_index] as usize] ^ guess;
    (z ^ y[byte_index]).count_ones() as u8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttackId {
    AesLastRound,
    KuzLastRoundHd,
    KuzLastRoundHw,
    KuzRound9,
}

impl AttackId {
    pub fn name(self) -> &'static str {
        match self {
            AttackId::AesLastRound => "aes-last-round",
            AttackId::KuzLastRoundHd => "kuz-last-round-hd",
            AttackId::KuzLastRoundHw => "kuz-last-round-hw",
            AttackId::KuzRound9 => "kuz-round9",
        }
    }

    pub fn compatible_with(self, cipher: CipherId) -> bool {
        match self {
            AttackId::AesLastRound => cipher == CipherId::Aes256,
            _ => cipher.is_kuznyechik(),
        }
    }

    /// Event-label prefixes forming the default attack window.
    pub fn window_prefixes(self) -> &'static [&'static str] {
        match self {
            AttackId::AesLastRound => &["r14."],
            AttackId::KuzLastRoundHd | AttackId::KuzLastRoundHw => &["r9.", "final.", "unmask"],
            AttackId::KuzRound9 => &["r9."],
        }
    }

    /// The round-9 hypothesis is linear in the guess, so `g` and `g ^ 0xff`
    /// give exactly opposite correlations; only the sign separates them.
    pub fn default_statistic(self) -> RankingStatistic {
        match self {
            AttackId::KuzRound9 => RankingStatistic::SignedPeak,
            _ => RankingStatistic::AbsolutePeak,
        }
    }
}

impl fmt::Display for AttackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackId {
    type Err = CpaError;

    fn from_str(s: &str) -> Result<Self, CpaError> {
        [
            AttackId::AesLastRound,
            AttackId::KuzLastRoundHd,
            AttackId::KuzLastRoundHw,
            AttackId::KuzRound9,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| CpaError::UnknownAttack(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankingStatistic {
    /// max |r| over the window
    AbsolutePeak,
    /// max r over the window
    SignedPeak,
}

impl RankingStatistic {
    fn score(self, r: f64) -> f64 {
        match self {
            RankingStatistic::AbsolutePeak => r.abs(),
            RankingStatistic::SignedPeak => r,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RankingStatistic::AbsolutePeak => "abs-peak",
            RankingStatistic::SignedPeak => "signed-peak",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct AttackOptions {
    /// Master key, used only to rank the true subkey bytes.
    pub true_key: Option<[u8; 32]>,
    pub k10: Option<Block>,
    pub window: Option<Range<usize>>,
    pub statistic: Option<RankingStatistic>,
    pub exec: Execution,
    /// Keep the 16 correlation matrices in the report.
    pub keep_correlations: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ByteResult {
    pub byte_index: usize,
    pub best_guess: Option<u8>,
    pub peak_r: Option<f64>,
    /// Absolute sample index of the peak.
    pub peak_sample: Option<usize>,
    pub true_byte: Option<u8>,
    pub true_rank: Option<usize>,
    pub degenerate_guesses: usize,
    /// Every guess gave a constant hypothesis.
    pub structurally_infeasible: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackReport {
    pub attack: AttackId,
    pub cipher: CipherId,
    pub n_traces: usize,
    pub window: Range<usize>,
    pub statistic: RankingStatistic,
    pub bytes: Vec<ByteResult>,
    pub correlations: Option<Vec<CorrelationMatrix>>,
}

impl AttackReport {
    pub fn structurally_infeasible(&self) -> bool {
        self.bytes.iter().all(|b| b.structurally_infeasible)
    }

    pub fn bytes_at_rank_zero(&self) -> usize {
        self.bytes.iter().filter(|b| b.true_rank == Some(0)).count()
    }

    /// Mean true-byte rank, if every byte has one.
    pub fn mean_rank(&self) -> Option<f64> {
        let ranks: Option<Vec<usize>> = self.bytes.iter().map(|b| b.true_rank).collect();
        ranks.map(|r| r.iter().sum::<usize>() as f64 / r.len() as f64)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "attack: {}  cipher: {}  traces: {}  window: {}..{}  statistic: {}",
            self.attack,
            self.cipher,
            self.n_traces,
            self.window.start,
            self.window.end,
            self.statistic.name()
        );
        let _ = writeln!(s, "byte  best  peak_r     sample  true  rank");
        for b in &self.bytes {
            if b.structurally_infeasible {
                let _ = writeln!(
                    s,
                    "{:>4}  structurally infeasible: hypothesis constant for all 256 guesses",
                    b.byte_index
                );
                continue;
            }
            let opt_hex = |v: Option<u8>| v.map_or("--".to_string(), |v| format!("{v:02x}"));
            let _ = writeln!(
                s,
                "{:>4}  {:>4}  {:>9}  {:>6}  {:>4}  {:>4}",
                b.byte_index,
                opt_hex(b.best_guess),
                b.peak_r.map_or("--".into(), |r| format!("{r:+.5}")),
                b.peak_sample.map_or("--".into(), |j| j.to_string()),
                opt_hex(b.true_byte),
                b.true_rank.map_or("--".into(), |r| r.to_string()),
            );
        }
        if self.structurally_infeasible() {
            let _ = writeln!(s, "verdict: structurally infeasible");
        } else if let Some(m) = self.mean_rank() {
            let _ = writeln!(
                s,
                "summary: {}/{} bytes at rank 0, mean rank {:.2}",
                self.bytes_at_rank_zero(),
                self.bytes.len(),
                m
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("byte,best_guess,peak_r,sample_index,true_byte,rank,status\n");
        for b in &self.bytes {
            let status = if b.structurally_infeasible {
                "structurally_infeasible"
            } else {
                "ok"
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                b.byte_index,
                b.best_guess.map_or(String::new(), |v| v.to_string()),
                b.peak_r.map_or(String::new(), |r| format!("{r:.17e}")),
                b.peak_sample.map_or(String::new(), |v| v.to_string()),
                b.true_byte.map_or(String::new(), |v| v.to_string()),
                b.true_rank.map_or(String::new(), |v| v.to_string()),
                status
            );
        }
        s
    }
}

/// Per-trace values every byte's hypothesis needs, computed once.
enum Precomputed {
    Ciphertexts(Vec<Block>),
    /// `(Y, S^-1(L^-1(Y)))` per trace for the round-9 attack
    Round9(Vec<(Block, Block)>),
}

fn true_subkey(attack: AttackId, key: &[u8; 32]) -> Block {
    match attack {
        // FIPS byte order: byte i of the report is byte i of the hex string
        AttackId::AesLastRound => {
            let be = aes256_last_round_key(key).to_be_bytes();
            Block(be)
        }
        AttackId::KuzLastRoundHd | AttackId::KuzLastRoundHw => key_schedule(&MasterKey(*key)).k(10),
        AttackId::KuzRound9 => key_schedule(&MasterKey(*key)).k(9),
    }
}

/// Ranks all 256 guesses for every key byte.
pub fn run_attack(
    traces: &TraceSet,
    attack: AttackId,
    opts: &AttackOptions,
) -> Result<AttackReport, CpaError> {
    if !attack.compatible_with(traces.cipher) {
        return Err(CpaError::Incompatible {
            attack,
            cipher: traces.cipher,
        });
    }
    if attack == AttackId::KuzRound9 && opts.k10.is_none() {
        return Err(CpaError::MissingK10);
    }
    if traces.len() < 2 {
        return Err(CpaError::TooFewTraces(traces.len()));
    }
    let window = match &opts.window {
        Some(w) => w.clone(),
        None => traces
            .window_for(attack.window_prefixes())
            .unwrap_or(0..traces.samples_per_trace()),
    };
    let statistic = opts.statistic.unwrap_or(attack.default_statistic());
    let truth = opts.true_key.as_ref().map(|k| true_subkey(attack, k));

    let pre = match attack {
        AttackId::KuzRound9 => {
            let k10 = opts.k10.expect("checked above");
            let lin = LinearTables::get();
            Precomputed::Round9(
                traces
                    .traces
                    .iter()
                    .map(|t| {
                        let y = t.ciphertext ^ k10;
                        (y, s_layer_inv(&lin.apply_l_inv(&y)))
                    })
                    .collect(),
            )
        }
        _ => Precomputed::Ciphertexts(traces.traces.iter().map(|t| t.ciphertext).collect()),
    };
    let n = traces.len();

    let per_byte = opts.exec.map_range(BLOCK_LEN, |b| {
        let h = match &pre {
            Precomputed::Ciphertexts(cts) => match attack {
                AttackId::AesLastRound => {
                    HypothesisMatrix::from_fn(n, |d, g| aes_last_round_hypothesis(&cts[d], b, g))
                }
                AttackId::KuzLastRoundHd => {
                    HypothesisMatrix::from_fn(n, |d, g| kuz_last_round_hd_hypothesis(&cts[d], b, g))
                }
                _ => {
                    HypothesisMatrix::from_fn(n, |d, g| kuz_last_round_hw_hypothesis(&cts[d], b, g))
                }
            },
            Precomputed::Round9(v) => HypothesisMatrix::from_fn(n, |d, g| {
                let (y, u) = &v[d];
                (u[b] ^ g ^ y[b]).count_ones() as u8
            }),
        };
        let cm = pearson_window(&h, traces, window.clone(), Execution::Sequential)?;
        Ok::<_, CpaError>((rank_byte(&cm, b, truth.map(|t| t[b]), statistic), cm))
    });

    let mut bytes = Vec::with_capacity(BLOCK_LEN);
    let mut mats = Vec::with_capacity(BLOCK_LEN);
    for r in per_byte {
        let (br, cm) = r?;
        bytes.push(br);
        mats.push(cm);
    }
    Ok(AttackReport {
        attack,
        cipher: traces.cipher,
        n_traces: n,
        window,
        statistic,
        bytes,
        correlations: opts.keep_correlations.then_some(mats),
    })
}

/// Guesses in rank order: scored guesses by descending score (ties to the
/// lower guess), then degenerate guesses.
pub fn ranked_guesses(cm: &CorrelationMatrix, stat: RankingStatistic) -> Vec<(u8, Option<Peak>)> {
    let mut scored: Vec<(u8, Option<Peak>)> = (0..=255u8).map(|g| (g, cm.peak(g, stat))).collect();
    scored.sort_by(|a, b| match (a.1, b.1) {
        (Some(x), Some(y)) => y.0.total_cmp(&x.0).then(a.0.cmp(&b.0)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.0.cmp(&b.0),
    });
    scored
}

fn rank_byte(
    cm: &CorrelationMatrix,
    byte_index: usize,
    true_byte: Option<u8>,
    stat: RankingStatistic,
) -> ByteResult {
    let degenerate_guesses = cm.degenerate_guesses();
    let order = ranked_guesses(cm, stat);
    let infeasible = degenerate_guesses == GUESSES || order[0].1.is_none();
    if infeasible {
        return ByteResult {
            byte_index,
            best_guess: None,
            peak_r: None,
            peak_sample: None,
            true_byte,
            true_rank: None,
            degenerate_guesses,
            structurally_infeasible: true,
        };
    }
    let (best, peak) = order[0];
    let (_, j, r) = peak.expect("scored");
    ByteResult {
        byte_index,
        best_guess: Some(best),
        peak_r: Some(r),
        peak_sample: Some(cm.window.start + j),
        true_byte,
        true_rank: true_byte.and_then(|t| order.iter().position(|(g, _)| *g == t)),
        degenerate_guesses,
        structurally_infeasible: false,
    }
}

/// Mean true-byte rank per byte position over repeated experiments.
pub fn guessing_entropy(reports: &[AttackReport]) -> Result<Vec<f64>, CpaError> {
    let first = reports.first().ok_or(CpaError::NoReports)?;
    let mut sums = vec![0usize; first.bytes.len()];
    for rep in reports {
        for (s, b) in sums.iter_mut().zip(&rep.bytes) {
            *s += b
                .true_rank
                .ok_or(CpaError::MissingRank { byte: b.byte_index })?;
        }
    }
    Ok(sums
        .into_iter()
        .map(|s| s as f64 / reports.len() as f64)
        .collect())
}
