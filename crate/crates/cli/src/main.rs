//! `gsca`: batch front end for the grasshopper-sca workbench.
//!
//! Exit status: 0 success, 2 usage error, 3 I/O or trace-file error,
//! 4 attack not applicable to the trace file's cipher.

use std::fs;
use std::hint::black_box;
use std::io::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use grasshopper_sca::aes_target::aes256_encrypt;
use grasshopper_sca::block::decode_hex;
use grasshopper_sca::cpa::{run_attack, AttackId, AttackOptions, CpaError, RankingStatistic};
use grasshopper_sca::kuznyechik::{
    decrypt, encrypt, encrypt_fast, key_schedule, recover_master_from_pair, MasterKey, SUBKEYS,
};
use grasshopper_sca::leakage_sim::{
    key_fingerprint, simulate_traces, CipherId, LeakageConfig, LeakageModel, MaskingOptions,
};
use grasshopper_sca::masking::{
    build_mask_schedule, masked_encrypt, MaskGenerator, MaskSource, RemaskPolicy,
};
use grasshopper_sca::trace_io::{
    export_correlation_csv, export_traces_csv, load_trace_set, save_trace_set, TraceIoError,
};
use grasshopper_sca::{Block, Execution};
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Incompatible(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Incompatible(_) => 4,
        }
    }
}

fn trace_err(path: &Path, e: TraceIoError) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl From<CpaError> for CliError {
    fn from(e: CpaError) -> Self {
        match e {
            CpaError::Incompatible { .. } => CliError::Incompatible(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "gsca", version, about = "Kuznyechik side-channel workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encrypt one block
    Encrypt(CryptArgs),
    /// Decrypt one block
    Decrypt(CryptArgs),
    /// Print the ten round keys, or recover the master key from a subkey pair
    Keyschedule(KeyscheduleArgs),
    /// Simulate power traces and write an SCTR file
    GenTraces(GenArgs),
    /// Run a correlation power analysis attack on an SCTR file
    Attack(AttackArgs),
    /// Measure encryption throughput
    Bench(BenchArgs),
}

#[derive(Args)]
struct KeyArgs {
    /// 256-bit key as 64 hex characters
    #[arg(long, value_parser = parse_key, conflicts_with = "key_file", required_unless_present = "key_file")]
    key: Option<[u8; 32]>,
    /// File holding the key in hex
    #[arg(long)]
    key_file: Option<PathBuf>,
}

impl KeyArgs {
    fn resolve(&self) -> Result<[u8; 32], CliError> {
        match (&self.key, &self.key_file) {
            (Some(k), _) => Ok(*k),
            (None, Some(path)) => {
                let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                parse_key(text.trim())
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
            }
            (None, None) => Err(CliError::Usage("a key is required".into())),
        }
    }
}

#[derive(Args)]
struct CryptArgs {
    #[command(flatten)]
    key: KeyArgs,
    /// 128-bit block as 32 hex characters
    #[arg(long, value_parser = parse_block)]
    block: Block,
    #[arg(long, default_value = "kuznyechik", value_parser = parse_cipher)]
    cipher: CipherId,
    /// Seed for the mask of the masked cipher
    #[arg(long, default_value_t = 0)]
    mask_seed: u64,
}

#[derive(Args)]
struct KeyscheduleArgs {
    /// Master key (not used with --invert)
    #[arg(long, value_parser = parse_key, required_unless_present = "invert")]
    key: Option<[u8; 32]>,
    /// Recover the master key from --pair
    #[arg(long, requires_all = ["pair", "pair_index"])]
    invert: bool,
    /// Pair number i in 1..=4, naming the subkeys K_{2i+1}, K_{2i+2}
    #[arg(long)]
    pair_index: Option<usize>,
    /// The two subkeys, odd one first
    #[arg(long, num_args = 2, value_names = ["K_ODD", "K_EVEN"], value_parser = parse_block)]
    pair: Option<Vec<Block>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RemaskArg {
    PerKey,
    PerBlock,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = parse_cipher)]
    cipher: CipherId,
    #[command(flatten)]
    key: KeyArgs,
    /// Number of traces
    #[arg(short = 'n', long = "traces", value_parser = clap::value_parser!(u32).range(1..))]
    n: u32,
    /// hw, hd, or bit:<index>
    #[arg(long, default_value = "hd", value_parser = parse_model)]
    model: LeakageModel,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    beta: f64,
    /// Standard deviation of the Gaussian noise
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    samples_per_event: u32,
    /// Seed for plaintexts and noise
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed for masks (masked cipher only)
    #[arg(long, default_value_t = 0)]
    mask_seed: u64,
    /// Mask lifetime for the masked cipher
    #[arg(long, value_enum, default_value = "per-key")]
    remask: RemaskArg,
    #[arg(short, long)]
    output: PathBuf,
    /// Also write the traces as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Run single-threaded
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatisticArg {
    AbsPeak,
    SignedPeak,
}

#[derive(Args)]
struct AttackArgs {
    /// SCTR trace file
    #[arg(long)]
    traces: PathBuf,
    /// aes-last-round, kuz-last-round-hd, kuz-last-round-hw or kuz-round9
    #[arg(long, value_parser = parse_attack)]
    attack: AttackId,
    /// Master key, to rank the true subkey bytes
    #[arg(long, value_parser = parse_key)]
    true_key: Option<[u8; 32]>,
    /// Tenth subkey, required by kuz-round9
    #[arg(long, value_parser = parse_block)]
    k10: Option<Block>,
    /// Sample range START..END instead of the attacked round's events
    #[arg(long, value_parser = parse_range)]
    window: Option<Range<usize>>,
    /// Ranking statistic; defaults to signed-peak for kuz-round9, abs-peak otherwise
    #[arg(long, value_enum)]
    statistic: Option<StatisticArg>,
    /// Write the text report here as well as to stdout
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the per-byte results as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Directory for one correlation-matrix CSV per key byte
    #[arg(long)]
    correlations: Option<PathBuf>,
    /// Run single-threaded
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Reference,
    Optimized,
    Both,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "kuznyechik", value_parser = parse_cipher)]
    cipher: CipherId,
    #[arg(long, value_enum, default_value = "both")]
    variant: Variant,
    /// Seconds per variant
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
}

fn parse_key(s: &str) -> Result<[u8; 32], String> {
    decode_hex::<32>(s).map_err(|e| format!("bad key: {e}"))
}

fn parse_block(s: &str) -> Result<Block, String> {
    Block::from_hex(s).map_err(|e| format!("bad block: {e}"))
}

fn parse_cipher(s: &str) -> Result<CipherId, String> {
    s.parse()
        .map_err(|e: grasshopper_sca::leakage_sim::SimError| e.to_string())
}

fn parse_model(s: &str) -> Result<LeakageModel, String> {
    s.parse()
        .map_err(|e: grasshopper_sca::leakage_sim::SimError| e.to_string())
}

fn parse_attack(s: &str) -> Result<AttackId, String> {
    s.parse().map_err(|e: CpaError| e.to_string())
}

fn parse_range(s: &str) -> Result<Range<usize>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected START..END, got {s:?}"))?;
    let a: usize = a.parse().map_err(|_| format!("bad range start {a:?}"))?;
    let b: usize = b.parse().map_err(|_| format!("bad range end {b:?}"))?;
    if a >= b {
        return Err(format!("empty range {s}"));
    }
    Ok(a..b)
}

fn exec(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn cmd_crypt(args: &CryptArgs, decrypting: bool) -> Result<(), CliError> {
    let key = args.key.resolve()?;
    let out = match (args.cipher, decrypting) {
        (CipherId::Aes256, false) => aes256_encrypt(&args.block, &key),
        (CipherId::Aes256, true) => {
            return Err(CliError::Usage(
                "aes256 is only available for encryption".into(),
            ))
        }
        (CipherId::Kuznyechik, false) => encrypt(&args.block, &key_schedule(&MasterKey(key))),
        (CipherId::KuznyechikMasked, false) => {
            let mask = MaskGenerator::new(args.mask_seed).fresh_mask();
            masked_encrypt(
                &args.block,
                &key_schedule(&MasterKey(key)),
                &build_mask_schedule(&mask),
            )
        }
        // decryption has no masked datapath; the result is the same block
        (_, true) => decrypt(&args.block, &key_schedule(&MasterKey(key))),
    };
    println!("{out}");
    Ok(())
}

fn cmd_keyschedule(args: &KeyscheduleArgs) -> Result<(), CliError> {
    if args.invert {
        let pair = args.pair.as_ref().expect("clap enforces --pair");
        let index = args.pair_index.expect("clap enforces --pair-index");
        let mk = recover_master_from_pair(&pair[0], &pair[1], index)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        println!("{}", mk.to_hex());
        return Ok(());
    }
    let key = args.key.expect("clap enforces --key");
    let rk = key_schedule(&MasterKey(key));
    for i in 1..=SUBKEYS {
        println!("K{i:<2} {}", rk.k(i));
    }
    Ok(())
}

fn cmd_gen_traces(args: &GenArgs) -> Result<(), CliError> {
    let key = args.key.resolve()?;
    let cfg = LeakageConfig {
        model: args.model,
        alpha: args.alpha,
        beta: args.beta,
        sigma: args.sigma,
        samples_per_event: args.samples_per_event,
        seed: args.seed,
    };
    let masking = MaskingOptions {
        seed: args.mask_seed,
        remask: match args.remask {
            RemaskArg::PerKey => RemaskPolicy::PerKey,
            RemaskArg::PerBlock => RemaskPolicy::PerBlock,
        },
    };
    let ts = simulate_traces(
        args.cipher,
        &key,
        args.n as usize,
        &cfg,
        masking,
        exec(args.sequential),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let bytes = save_trace_set(&ts, &args.output).map_err(|e| trace_err(&args.output, e))?;
    if let Some(path) = &args.csv {
        let f = fs::File::create(path).map_err(|e| io_err(path, e))?;
        export_traces_csv(&ts, f).map_err(|e| io_err(path, e))?;
    }
    println!(
        "wrote {} {} traces x {} samples ({bytes} bytes) to {}",
        ts.len(),
        ts.cipher,
        ts.samples_per_trace(),
        args.output.display()
    );
    Ok(())
}

fn cmd_attack(args: &AttackArgs) -> Result<(), CliError> {
    let ts = load_trace_set(&args.traces).map_err(|e| trace_err(&args.traces, e))?;
    if !args.attack.compatible_with(ts.cipher) {
        return Err(CpaError::Incompatible {
            attack: args.attack,
            cipher: ts.cipher,
        }
        .into());
    }
    if args.attack == AttackId::KuzRound9 && args.k10.is_none() {
        return Err(CliError::Usage("kuz-round9 needs --k10".into()));
    }
    if let Some(k) = &args.true_key {
        if key_fingerprint(k) != ts.key_fingerprint {
            eprintln!("warning: --true-key does not match the key the traces were generated with");
        }
    }
    let opts = AttackOptions {
        true_key: args.true_key,
        k10: args.k10,
        window: args.window.clone(),
        statistic: args.statistic.map(|s| match s {
            StatisticArg::AbsPeak => RankingStatistic::AbsolutePeak,
            StatisticArg::SignedPeak => RankingStatistic::SignedPeak,
        }),
        exec: exec(args.sequential),
        keep_correlations: args.correlations.is_some(),
    };
    let report = run_attack(&ts, args.attack, &opts)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(path) = &args.report {
        fs::write(path, &text).map_err(|e| io_err(path, e))?;
    }
    if let Some(path) = &args.csv {
        fs::write(path, report.to_csv()).map_err(|e| io_err(path, e))?;
    }
    if let (Some(dir), Some(mats)) = (&args.correlations, &report.correlations) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for (b, cm) in mats.iter().enumerate() {
            let path = dir.join(format!("byte_{b:02}.csv"));
            let f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
            export_correlation_csv(cm, f).map_err(|e| io_err(&path, e))?;
        }
    }
    Ok(())
}

type EncryptFn<'a> = Box<dyn FnMut(Block) -> Block + 'a>;

/// Chains encryptions for at least `duration`; returns (blocks, elapsed).
fn measure(duration: Duration, mut f: impl FnMut(Block) -> Block) -> (u64, Duration) {
    let mut x = Block::from_u128(0x0123_4567_89ab_cdef_fedc_ba98_7654_3210);
    let mut blocks = 0u64;
    let start = Instant::now();
    loop {
        for _ in 0..256 {
            x = f(black_box(x));
        }
        blocks += 256;
        let elapsed = start.elapsed();
        if elapsed >= duration {
            black_box(x);
            return (blocks, elapsed);
        }
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    if !(args.duration.is_finite() && args.duration > 0.0) {
        return Err(CliError::Usage(format!(
            "--duration must be a positive number of seconds, got {}",
            args.duration
        )));
    }
    let duration = Duration::from_secs_f64(args.duration);
    let key: [u8; 32] = std::array::from_fn(|i| (i as u8).wrapping_mul(37) ^ 0x5c);
    let rk = key_schedule(&MasterKey(key));
    let ms = build_mask_schedule(&MaskGenerator::new(1).fresh_mask());

    let mut runs: Vec<(&str, EncryptFn)> = Vec::new();
    let want_ref = args.variant != Variant::Optimized;
    let want_opt = args.variant != Variant::Reference;
    match args.cipher {
        CipherId::Kuznyechik => {
            if want_ref {
                runs.push(("reference", Box::new(|x| encrypt(&x, &rk))));
            }
            if want_opt {
                runs.push(("optimized", Box::new(|x| encrypt_fast(&x, &rk))));
            }
        }
        CipherId::KuznyechikMasked | CipherId::Aes256 => {
            if args.variant == Variant::Optimized {
                return Err(CliError::Usage(format!(
                    "{} has no optimized variant",
                    args.cipher
                )));
            }
            if args.cipher == CipherId::Aes256 {
                runs.push(("reference", Box::new(|x| aes256_encrypt(&x, &key))));
            } else {
                runs.push(("reference", Box::new(|x| masked_encrypt(&x, &rk, &ms))));
            }
        }
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (name, f) in runs.iter_mut() {
        let (blocks, elapsed) = measure(duration, f);
        let secs = elapsed.as_secs_f64();
        let rate = blocks as f64 / secs;
        let _ = writeln!(
            out,
            "{} {name}: {rate:.0} blocks/s {:.2} Mbps ({blocks} blocks in {secs:.2} s)",
            args.cipher,
            rate * 128.0 / 1e6
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Encrypt(a) => cmd_crypt(a, false),
        Command::Decrypt(a) => cmd_crypt(a, true),
        Command::Keyschedule(a) => cmd_keyschedule(a),
        Command::GenTraces(a) => cmd_gen_traces(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gsca: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
