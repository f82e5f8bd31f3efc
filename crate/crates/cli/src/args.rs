use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pio_core::bench::{Backend, BenchConfig};
use pio_core::{DeviceConfig, PioConfig};

#[derive(Debug, Parser)]
#[command(
    name = "pio",
    version,
    about = "PIO B-tree and baseline B+-tree on an emulated parallel flash device"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run workloads against the indexes.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Pick leaf size and queue size from the cost model.
    Tune(TuneArgs),
    /// Measure device latencies for the cost model.
    Calibrate(CalibrateArgs),
    /// Run crash recovery on a logged PIO B-tree.
    Recover(RecoverArgs),
    /// Check the structure of an index stored in a data file.
    Verify(VerifyArgs),
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// One workload on one or both indexes.
    Run(RunArgs),
    /// One parameter swept over a grid, both indexes at each point.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DeviceKind {
    Emu,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Workload {
    Search,
    Insert,
    Mixed,
    Range,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IndexChoice {
    Bplus,
    Pio,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepDim {
    Buffer,
    Opq,
    Range,
    Ratio,
}

#[derive(Debug, Args)]
pub struct DeviceArgs {
    /// Emulated in-memory device or a data file per index.
    #[arg(long, value_enum, default_value_t = DeviceKind::Emu)]
    pub device: DeviceKind,
    /// Directory for data and log files of the file device.
    #[arg(long, default_value = "pio-data")]
    pub data_dir: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub channels: u32,
    #[arg(long, default_value_t = 4096)]
    pub page_size: usize,
    #[arg(long, default_value_t = 100.0)]
    pub read_us: f64,
    #[arg(long, default_value_t = 200.0)]
    pub write_us: f64,
}

impl DeviceArgs {
    pub fn config(&self) -> DeviceConfig {
        DeviceConfig {
            page_size: self.page_size,
            channels: self.channels,
            read_latency_us: self.read_us,
            write_latency_us: self.write_us,
            ..DeviceConfig::default()
        }
    }

    pub fn backend(&self) -> Backend {
        match self.device {
            DeviceKind::Emu => Backend::Emulated,
            DeviceKind::File => Backend::File(self.data_dir.clone()),
        }
    }
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Leaf size of the PIO B-tree in pages (L).
    #[arg(long, default_value_t = 1)]
    pub leaf_segments: u32,
    /// Operation queue size in pages (O).
    #[arg(long, default_value_t = 16)]
    pub opq_pages: usize,
    /// Buffer pool size in pages.
    #[arg(long, default_value_t = 1024)]
    pub pool_pages: usize,
    /// Maximum requests per psync call.
    #[arg(long, default_value_t = 64)]
    pub piomax: usize,
    /// Queue appends between sorts.
    #[arg(long, default_value_t = 5000)]
    pub speriod: usize,
    /// Entries per partial flush.
    #[arg(long, default_value_t = 5000)]
    pub bcnt: usize,
}

impl IndexArgs {
    pub fn config(&self, page_size: usize) -> PioConfig {
        let mut cfg = PioConfig::for_page_size(page_size);
        cfg.tree.pool_pages = self.pool_pages;
        cfg.leaf_segments = self.leaf_segments;
        cfg.opq_pages = self.opq_pages;
        cfg.pio_max = self.piomax;
        cfg.speriod = self.speriod;
        cfg.bcnt = self.bcnt;
        cfg
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Entries bulk loaded before the workload.
    #[arg(long, default_value_t = 1_000_000)]
    pub initial: usize,
    #[arg(long, default_value_t = 2_000_000)]
    pub key_domain: u64,
    /// Bulk-load node fill factor.
    #[arg(long, default_value_t = 0.7)]
    pub fill: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Check every result against an in-memory oracle.
    #[arg(long)]
    pub verify: bool,
}

pub fn bench_config(device: &DeviceArgs, index: &IndexArgs, data: &DataArgs) -> BenchConfig {
    let dev = device.config();
    BenchConfig {
        pio: index.config(dev.page_size),
        device: dev,
        backend: device.backend(),
        initial: data.initial,
        key_domain: data.key_domain,
        fill: data.fill,
        seed: data.seed,
        verify: data.verify,
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub device: DeviceArgs,
    #[command(flatten)]
    pub index_cfg: IndexArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = Workload::Mixed)]
    pub workload: Workload,
    /// Share of inserts in the mixed workload (Ri); the rest are searches.
    #[arg(long, default_value_t = 0.5)]
    pub insert_ratio: f64,
    #[arg(long, default_value_t = 100_000)]
    pub ops: usize,
    /// Range sizes in keys for the range workload.
    #[arg(long, value_delimiter = ',')]
    pub range_sizes: Vec<u64>,
    #[arg(long, value_enum, default_value_t = IndexChoice::Both)]
    pub index: IndexChoice,
    /// Replay this trace file instead of generating a workload.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Take L and O from a report written by `pio tune`.
    #[arg(long)]
    pub tuning: Option<PathBuf>,
    /// Write-ahead log the PIO B-tree (file device only) and keep its files.
    #[arg(long)]
    pub wal: bool,
    /// Stop the PIO run with a simulated crash at POINT, optionally on its
    /// Nth occurrence (POINT[:N]). Needs --wal.
    #[arg(long)]
    pub crash_at: Option<String>,
    /// CSV output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub device: DeviceArgs,
    #[command(flatten)]
    pub index_cfg: IndexArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub dimension: SweepDim,
    /// Grid values; defaults depend on the dimension.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
    /// Operations per grid point.
    #[arg(long, default_value_t = 100_000)]
    pub ops: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub device: DeviceArgs,
    /// Latency report from `pio calibrate`; calibrates the device when absent.
    #[arg(long)]
    pub latencies: Option<PathBuf>,
    /// Search share of the workload (Rs).
    #[arg(long)]
    pub rs: Option<f64>,
    /// Insert share of the workload (Ri).
    #[arg(long)]
    pub ri: Option<f64>,
    /// Index entries (N).
    #[arg(long, default_value_t = 1_000_000.0)]
    pub entries: f64,
    /// Buffer pool pages (M).
    #[arg(long, default_value_t = 1024.0)]
    pub memory: f64,
    /// Node utilization (U).
    #[arg(long, default_value_t = 0.7)]
    pub utilization: f64,
    #[arg(long, default_value_t = 64)]
    pub piomax: usize,
    #[arg(long, default_value_t = 5000.0)]
    pub bcnt: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub device: DeviceArgs,
    #[arg(long, default_value_t = 64)]
    pub piomax: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    /// Data file of the index.
    #[arg(long)]
    pub data: PathBuf,
    /// Write-ahead log file.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = 4096)]
    pub page_size: usize,
    #[arg(long, default_value_t = 1024)]
    pub pool_pages: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Data file of the index.
    #[arg(long)]
    pub data: PathBuf,
    /// Run crash recovery from --log before checking.
    #[arg(long, requires = "log")]
    pub recover: bool,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 4096)]
    pub page_size: usize,
    #[arg(long, default_value_t = 1024)]
    pub pool_pages: usize,
}
