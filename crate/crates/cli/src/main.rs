mod args;

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use pio_core::bench::{
    generate, parse_trace, replay, sweep, to_csv, Dimension, Index, IndexKind, ReplayOptions, RunReport, SweepRow,
    WorkloadKind, WorkloadSpec,
};
use pio_core::cost::{calibrate, tune, Latencies, TuneInput};
use pio_core::recovery::{CrashPoint, FileLog, Wal};
use pio_core::{Device, DeviceConfig, Error, PioBTree, Result};

use args::{
    bench_config, BenchCommand, CalibrateArgs, Cli, Command, DeviceKind, IndexChoice, RecoverArgs, RunArgs, SweepArgs,
    SweepDim, TuneArgs, VerifyArgs, Workload,
};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(BenchCommand::Run(a)) => bench_run(a),
        Command::Bench(BenchCommand::Sweep(a)) => bench_sweep(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Recover(a) => cmd_recover(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::Usage(_) => 2,
        _ => 1,
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            fs::write(p, text)?;
            eprintln!("wrote {}", p.display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn summary(r: &RunReport) -> String {
    format!(
        "{}: ops={} sim_us_per_op={:.3} sim_ops_per_sec={:.1} pages_read={} pages_written={} search_hits={} range_records={}",
        r.index,
        r.ops,
        r.sim_us_per_op(),
        r.sim_ops_per_sec(),
        r.device.pages_read,
        r.device.pages_written,
        r.search_hits,
        r.range_records
    )
}

/// `l_opt` and `o_opt` from a `pio tune` report.
fn read_tuning(path: &Path) -> Result<(u32, usize)> {
    let text = fs::read_to_string(path)?;
    let field = |name: &str| -> Result<&str> {
        text.lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == name)
            .map(|(_, v)| v.trim())
            .ok_or_else(|| usage(format!("{} has no {name}", path.display())))
    };
    let l = field("l_opt")?.parse().map_err(|_| usage("bad l_opt"))?;
    let o = field("o_opt")?.parse().map_err(|_| usage("bad o_opt"))?;
    Ok((l, o))
}

fn parse_crash(spec: &str) -> Result<(CrashPoint, u64)> {
    let (label, nth) = match spec.split_once(':') {
        Some((l, n)) => (
            l,
            n.parse()
                .map_err(|_| usage(format!("bad occurrence in --crash-at {spec:?}")))?,
        ),
        None => (spec, 1),
    };
    let point = CrashPoint::from_label(label).ok_or_else(|| {
        let labels: Vec<_> = CrashPoint::ALL.iter().map(|p| p.label()).collect();
        usage(format!("unknown crash point {label:?} (one of {})", labels.join(", ")))
    })?;
    if nth == 0 {
        return Err(usage("crash occurrence counts from 1"));
    }
    Ok((point, nth))
}

fn bench_run(a: RunArgs) -> Result<()> {
    let mut cfg = bench_config(&a.device, &a.index_cfg, &a.data);
    if let Some(path) = &a.tuning {
        let (l, o) = read_tuning(path)?;
        cfg.pio.leaf_segments = l;
        cfg.pio.opq_pages = o;
    }
    cfg.pio.validate(cfg.device.page_size)?;
    let crash = a.crash_at.as_deref().map(parse_crash).transpose()?;
    if a.wal && a.device.device != DeviceKind::File {
        return Err(usage("--wal needs --device file"));
    }
    if crash.is_some() && !(a.wal && a.index == IndexChoice::Pio) {
        return Err(usage("--crash-at needs --wal and --index pio"));
    }
    if !(0.0..=1.0).contains(&a.insert_ratio) {
        return Err(usage("--insert-ratio must be in [0, 1]"));
    }
    let trace = a
        .trace
        .as_deref()
        .map(fs::read_to_string)
        .transpose()?
        .map(|t| parse_trace(&t))
        .transpose()?;
    let kinds: &[IndexKind] = match a.index {
        IndexChoice::Bplus => &[IndexKind::Baseline],
        IndexChoice::Pio => &[IndexKind::Pio],
        IndexChoice::Both => &IndexKind::ALL,
    };
    let (experiment, value) = match a.workload {
        Workload::Search => ("search", 0.0),
        Workload::Insert => ("insert", 1.0),
        Workload::Mixed => ("mixed", a.insert_ratio),
        Workload::Range => ("range", 0.0),
    };
    let experiment = if trace.is_some() { "trace" } else { experiment };

    let mut rows = Vec::new();
    for &kind in kinds {
        let (mut index, records) = cfg.build(kind, "run")?;
        let ops = match &trace {
            Some(ops) => ops.clone(),
            None => {
                let kind = match a.workload {
                    Workload::Search => WorkloadKind::SearchOnly,
                    Workload::Insert => WorkloadKind::InsertOnly,
                    Workload::Mixed => WorkloadKind::Mixed {
                        insert_ratio: a.insert_ratio,
                    },
                    Workload::Range => WorkloadKind::RangeSweep,
                };
                let mut spec = WorkloadSpec::new(kind, a.ops, cfg.key_domain, cfg.seed.wrapping_add(1));
                if !a.range_sizes.is_empty() {
                    spec.range_sizes = a.range_sizes.clone();
                }
                let keys: Vec<_> = records.iter().map(|r| r.key).collect();
                generate(&spec, &keys)?
            }
        };
        let wal_path = a.device.data_dir.join(format!("run-{kind}.wal"));
        if a.wal {
            if let Index::Pio(tree) = &mut index {
                if wal_path.exists() {
                    fs::remove_file(&wal_path)?;
                }
                let (wal, _) = Wal::open(Box::new(FileLog::open(&wal_path)?))?;
                tree.attach_wal(wal);
                if let Some((point, nth)) = crash {
                    tree.crash_injector().arm(point, nth);
                }
            }
        }
        let opts = ReplayOptions {
            verify: cfg.verify,
            finish: true,
        };
        let report = match replay(&mut index, &ops, &records, opts) {
            Err(e) if e.is_crash() => {
                let data = a.device.data_dir.join(format!("run-{kind}.dat"));
                println!("{e}; data {} log {}", data.display(), wal_path.display());
                return Ok(());
            }
            r => r?,
        };
        println!("{}", summary(&report));
        if a.wal && kind == IndexKind::Pio {
            index.close()?;
        }
        rows.push(SweepRow {
            experiment: experiment.to_string(),
            param: "insert_ratio",
            value,
            report,
        });
    }
    if let Some(out) = &a.out {
        write_out(Some(out), &to_csv(&cfg, &rows))?;
    }
    Ok(())
}

fn bench_sweep(a: SweepArgs) -> Result<()> {
    let cfg = bench_config(&a.device, &a.index_cfg, &a.data);
    let dim = match a.dimension {
        SweepDim::Buffer => Dimension::Buffer,
        SweepDim::Opq => Dimension::Opq,
        SweepDim::Range => Dimension::Range,
        SweepDim::Ratio => Dimension::Ratio,
    };
    let grid = if a.grid.is_empty() {
        dim.default_grid()
    } else {
        a.grid.clone()
    };
    let rows = sweep(&cfg, dim, &grid, a.ops)?;
    for row in &rows {
        println!("{}={} {}", row.param, row.value, summary(&row.report));
    }
    if let Some(out) = &a.out {
        write_out(Some(out), &to_csv(&cfg, &rows))?;
    }
    Ok(())
}

fn device_for_calibration(a: &args::DeviceArgs) -> Result<(Device, Option<std::path::PathBuf>)> {
    match a.device {
        DeviceKind::Emu => Ok((Device::emulated(a.config())?, None)),
        DeviceKind::File => {
            fs::create_dir_all(&a.data_dir)?;
            let path = a.data_dir.join("calibrate.dat");
            Ok((Device::file(a.config(), &path)?, Some(path)))
        }
    }
}

fn measure(a: &args::DeviceArgs, piomax: usize) -> Result<Latencies> {
    let (mut dev, scratch) = device_for_calibration(a)?;
    let lat = calibrate(&mut dev, piomax)?;
    drop(dev);
    if let Some(path) = scratch {
        fs::remove_file(path)?;
    }
    Ok(lat)
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let lat = measure(&a.device, a.piomax)?;
    write_out(a.out.as_deref(), &lat.to_string())
}

fn cmd_tune(a: TuneArgs) -> Result<()> {
    let (rs, ri) = match (a.rs, a.ri) {
        (Some(rs), Some(ri)) if (rs + ri - 1.0).abs() > 1e-9 => {
            return Err(usage(format!("--rs {rs} and --ri {ri} must sum to 1")));
        }
        (Some(rs), Some(ri)) => (rs, ri),
        (Some(rs), None) => (rs, 1.0 - rs),
        (None, Some(ri)) => (1.0 - ri, ri),
        (None, None) => return Err(usage("give --rs or --ri")),
    };
    if !(0.0..=1.0).contains(&rs) || !(0.0..=1.0).contains(&ri) {
        return Err(usage("--rs and --ri must be in [0, 1]"));
    }
    let latencies = match &a.latencies {
        Some(path) => fs::read_to_string(path)?.parse()?,
        None => measure(&a.device, a.piomax)?,
    };
    let input = TuneInput {
        latencies,
        page_size: a.device.page_size,
        utilization: a.utilization,
        n: a.entries,
        m: a.memory,
        rs,
        ri,
        bcnt: a.bcnt,
    };
    let result = tune(&input)?;
    println!(
        "(L_opt, O_opt) = ({}, {}), S_opt = {}",
        result.l_opt, result.o_opt, result.s_opt
    );
    write_out(a.out.as_deref(), &result.to_string())
}

fn open_data(path: &Path, page_size: usize) -> Result<Device> {
    if !path.is_file() {
        return Err(usage(format!("no data file at {}", path.display())));
    }
    Device::file(
        DeviceConfig {
            page_size,
            ..DeviceConfig::default()
        },
        path,
    )
}

fn recover_tree(data: &Path, log: &Path, page_size: usize, pool_pages: usize) -> Result<PioBTree> {
    if !log.is_file() {
        return Err(usage(format!("no log file at {}", log.display())));
    }
    let dev = open_data(data, page_size)?;
    let (mut tree, report) = PioBTree::recover(dev, Box::new(FileLog::open(log)?), pool_pages)?;
    println!(
        "recovered: log_records={} completed_flushes={} undone_flushes={} undone_pages={} redone_entries={}",
        report.records, report.completed_flushes, report.undone_flushes, report.undone_pages, report.redone_entries
    );
    tree.checkpoint()?;
    Ok(tree)
}

fn cmd_recover(a: RecoverArgs) -> Result<()> {
    let mut tree = recover_tree(&a.data, &a.log, a.page_size, a.pool_pages)?;
    let entries = tree.audit()?;
    tree.close()?;
    println!("index consistent: {entries} entries");
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    let mut index = match (&a.log, a.recover) {
        (Some(log), true) => Index::Pio(recover_tree(&a.data, log, a.page_size, a.pool_pages)?),
        _ => Index::open(open_data(&a.data, a.page_size)?, a.pool_pages)?,
    };
    let kind = index.kind();
    let entries = index.audit().map_err(|e| Error::Verify(e.to_string()))?;
    if a.recover {
        index.close()?;
    }
    println!("{kind} index consistent: {entries} entries");
    Ok(())
}
