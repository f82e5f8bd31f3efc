use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use super::{generate, initial_keys, replay, Index, IndexKind, ReplayOptions, RunReport, WorkloadKind, WorkloadSpec};
use crate::{Device, DeviceConfig, Error, IndexRecord, PioConfig, Result};

/// Where bench devices keep their pages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    Emulated,
    /// One fresh data file per run inside this directory.
    File(PathBuf),
}

/// Everything a bench run needs besides the workload.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub device: DeviceConfig,
    pub backend: Backend,
    pub pio: PioConfig,
    /// Entries bulk loaded before the workload.
    pub initial: usize,
    pub key_domain: u64,
    /// Bulk-load node fill factor.
    pub fill: f64,
    pub seed: u64,
    pub verify: bool,
}

impl Default for BenchConfig {
    /// Desk scale: 10^6 entries over a 2*10^6 key domain on the default
    /// emulated device.
    fn default() -> Self {
        let device = DeviceConfig::default();
        BenchConfig {
            pio: PioConfig::for_page_size(device.page_size),
            device,
            backend: Backend::Emulated,
            initial: 1_000_000,
            key_domain: 2_000_000,
            fill: 0.7,
            seed: 42,
            verify: false,
        }
    }
}

impl BenchConfig {
    /// One-line `key=value` echo of the configuration.
    pub fn describe(&self) -> String {
        let p = &self.pio;
        format!(
            "page_size={} channels={} read_us={} write_us={} initial={} key_domain={} fill={} seed={} \
             pool_pages={} leaf_segments={} opq_pages={} piomax={} speriod={} bcnt={}",
            self.device.page_size,
            self.device.channels,
            self.device.read_latency_us,
            self.device.write_latency_us,
            self.initial,
            self.key_domain,
            self.fill,
            self.seed,
            p.tree.pool_pages,
            p.leaf_segments,
            p.opq_pages,
            p.pio_max,
            p.speriod,
            p.bcnt,
        )
    }

    fn device_for(&self, tag: &str) -> Result<Device> {
        match &self.backend {
            Backend::Emulated => Device::emulated(self.device.clone()),
            Backend::File(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("{tag}.dat"));
                if path.exists() {
                    std::fs::remove_file(&path)?;
                }
                Device::file(self.device.clone(), path)
            }
        }
    }

    /// Bulk-loaded index and its initial records.
    pub fn build(&self, kind: IndexKind, tag: &str) -> Result<(Index, Vec<IndexRecord>)> {
        let records: Vec<IndexRecord> = initial_keys(self.initial, self.key_domain, self.seed)?
            .into_iter()
            .map(|k| IndexRecord::new(k, k))
            .collect();
        let dev = self.device_for(&format!("{tag}-{kind}"))?;
        Ok((Index::bulk_load(kind, dev, &self.pio, &records, self.fill)?, records))
    }

    /// Builds `kind`, generates `workload` over its keys and replays it.
    pub fn run(&self, kind: IndexKind, workload: &WorkloadSpec) -> Result<RunReport> {
        let (mut index, records) = self.build(kind, "run")?;
        let keys: Vec<_> = records.iter().map(|r| r.key).collect();
        let ops = generate(workload, &keys)?;
        let opts = ReplayOptions {
            verify: self.verify,
            finish: true,
        };
        replay(&mut index, &ops, &records, opts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    /// Buffer pool pages, search-only workload.
    Buffer,
    /// Operation queue pages, insert-only workload.
    Opq,
    /// Range size in keys, range workload.
    Range,
    /// Insert ratio, mixed workload.
    Ratio,
}

impl Dimension {
    pub fn name(self) -> &'static str {
        match self {
            Dimension::Buffer => "buffer",
            Dimension::Opq => "opq",
            Dimension::Range => "range",
            Dimension::Ratio => "ratio",
        }
    }

    /// Grid used when none is given.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            Dimension::Buffer => vec![16.0, 64.0, 256.0, 1024.0],
            Dimension::Opq => vec![1.0, 4.0, 16.0, 64.0],
            Dimension::Range => super::RANGE_SIZES.iter().map(|&s| s as f64).collect(),
            Dimension::Ratio => vec![0.0, 0.25, 0.5, 0.75, 1.0],
        }
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "buffer" => Ok(Dimension::Buffer),
            "opq" => Ok(Dimension::Opq),
            "range" => Ok(Dimension::Range),
            "ratio" => Ok(Dimension::Ratio),
            _ => Err(Error::InvalidInput(format!("unknown sweep dimension {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub experiment: String,
    pub param: &'static str,
    pub value: f64,
    pub report: RunReport,
}

/// Runs both indexes at every grid point of `dim`, each workload `ops` long.
pub fn sweep(base: &BenchConfig, dim: Dimension, grid: &[f64], ops: usize) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("sweep grid is empty".into()));
    }
    let mut rows = Vec::new();
    for &value in grid {
        let mut cfg = base.clone();
        let mut workload = WorkloadSpec::new(WorkloadKind::SearchOnly, ops, cfg.key_domain, cfg.seed.wrapping_add(1));
        let param = match dim {
            Dimension::Buffer => {
                cfg.pio.tree.pool_pages = whole(value, "buffer pages")?;
                "pool_pages"
            }
            Dimension::Opq => {
                cfg.pio.opq_pages = whole(value, "queue pages")?;
                workload.kind = WorkloadKind::InsertOnly;
                "opq_pages"
            }
            Dimension::Range => {
                workload.kind = WorkloadKind::RangeSweep;
                workload.range_sizes = vec![whole(value, "range size")? as u64];
                "range_size"
            }
            Dimension::Ratio => {
                workload.kind = WorkloadKind::Mixed { insert_ratio: value };
                "insert_ratio"
            }
        };
        cfg.pio.validate(cfg.device.page_size)?;
        for kind in IndexKind::ALL {
            rows.push(SweepRow {
                experiment: dim.name().to_string(),
                param,
                value,
                report: cfg.run(kind, &workload)?,
            });
        }
    }
    Ok(rows)
}

fn whole(value: f64, what: &str) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 {
        Ok(value as usize)
    } else {
        Err(Error::InvalidInput(format!(
            "{what} must be a positive integer, got {value}"
        )))
    }
}

pub const CSV_HEADER: &str = "experiment,index,param,value,ops,searches,inserts,deletes,updates,ranges,\
search_us,insert_us,delete_us,update_us,range_us,flush_us,pages_read,pages_written,read_batches,write_batches,\
sim_time_us,sim_us_per_op,sim_ops_per_sec,search_hits,range_records,wall_secs";

/// CSV with a `# config:` comment line, a header row, and one row per
/// sweep row. Only the last column depends on wall-clock time.
pub fn to_csv(cfg: &BenchConfig, rows: &[SweepRow]) -> String {
    let mut out = format!("# config: {}\n{CSV_HEADER}\n", cfg.describe());
    for row in rows {
        let r = &row.report;
        let d = &r.device;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{},{},{},{},{:.3},{:.4},{:.3},{},{},{:.6}",
            row.experiment,
            r.index,
            row.param,
            row.value,
            r.ops,
            r.search.count,
            r.insert.count,
            r.delete.count,
            r.update.count,
            r.range.count,
            r.search.sim_us,
            r.insert.sim_us,
            r.delete.sim_us,
            r.update.sim_us,
            r.range.sim_us,
            r.flush.sim_us,
            d.pages_read,
            d.pages_written,
            d.read_batches,
            d.write_batches,
            d.simulated_time_us,
            r.sim_us_per_op(),
            r.sim_ops_per_sec(),
            r.search_hits,
            r.range_records,
            r.wall_secs,
        );
    }
    out
}
