use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::device::{Device, PageId};
use crate::{Error, Result};

/// Measured device latencies, in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Latencies {
    pub pr: f64,
    pub pw: f64,
    /// Per-page read / write latency within a batch of `pio_max` pages.
    pub pr_batch: f64,
    pub pw_batch: f64,
    pub pio_max: usize,
    /// Latency of one contiguous read of `k` pages, for each measured `k`.
    pub pr_extent: BTreeMap<u32, f64>,
}

impl Latencies {
    /// Pr(k), interpolated linearly between measured sizes.
    pub fn pr_of(&self, pages: u32) -> f64 {
        if let Some(&v) = self.pr_extent.get(&pages) {
            return v;
        }
        let below = self.pr_extent.range(..pages).next_back();
        let above = self.pr_extent.range(pages..).next();
        match (below, above) {
            (Some((&a, &va)), Some((&b, &vb))) => va + (vb - va) * f64::from(pages - a) / f64::from(b - a),
            (Some((&a, &va)), None) => va * f64::from(pages) / f64::from(a),
            (None, Some((_, &vb))) => vb,
            (None, None) => self.pr * f64::from(pages),
        }
    }
}

impl fmt::Display for Latencies {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pr_us = {:.3}", self.pr)?;
        writeln!(f, "pw_us = {:.3}", self.pw)?;
        writeln!(f, "pio_max = {}", self.pio_max)?;
        writeln!(f, "pr_batch_us = {:.3}", self.pr_batch)?;
        writeln!(f, "pw_batch_us = {:.3}", self.pw_batch)?;
        for (k, v) in &self.pr_extent {
            writeln!(f, "pr_extent_{k}_us = {v:.3}")?;
        }
        Ok(())
    }
}

impl FromStr for Latencies {
    type Err = Error;

    /// Parses the `key = value` report written by `Display`. Unknown keys
    /// are ignored so the report can be embedded in a larger file.
    fn from_str(s: &str) -> Result<Self> {
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for line in s.lines() {
            if let Some((k, v)) = line.split_once('=') {
                fields.insert(k.trim(), v.trim());
            }
        }
        let num = |key: &str| -> Result<f64> {
            let v = fields
                .get(key)
                .ok_or_else(|| Error::InvalidInput(format!("latency report lacks {key}")))?;
            v.parse()
                .map_err(|_| Error::InvalidInput(format!("bad value for {key}: {v:?}")))
        };
        let mut pr_extent = BTreeMap::new();
        for k in fields.keys() {
            if let Some(size) = k.strip_prefix("pr_extent_").and_then(|r| r.strip_suffix("_us")) {
                let size: u32 = size
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad extent key {k:?}")))?;
                pr_extent.insert(size, num(k)?);
            }
        }
        Ok(Latencies {
            pr: num("pr_us")?,
            pw: num("pw_us")?,
            pr_batch: num("pr_batch_us")?,
            pw_batch: num("pw_batch_us")?,
            pio_max: num("pio_max")? as usize,
            pr_extent,
        })
    }
}

/// Extent sizes measured by `calibrate`.
pub const EXTENT_SIZES: [u32; 5] = [1, 2, 4, 8, 16];

/// Measures Pr, Pw, Pr', Pw' and Pr(k) by issuing I/O against a scratch
/// region. Device counters advance by the measurement traffic.
pub fn calibrate(dev: &mut Device, pio_max: usize) -> Result<Latencies> {
    if pio_max == 0 {
        return Err(Error::Config("pio_max must be positive".into()));
    }
    let widest = *EXTENT_SIZES.last().unwrap();
    let span = (pio_max as u32).max(widest);
    let base = dev.alloc_extent(span)?;
    let out = measure(dev, base, span, pio_max);
    dev.free_extent(base, span)?;
    out
}

fn measure(dev: &mut Device, base: PageId, span: u32, pio_max: usize) -> Result<Latencies> {
    let zero = vec![0u8; dev.page_size()];
    let pages: Vec<PageId> = (0..u64::from(span)).map(|i| base.offset(i)).collect();
    let batch: Vec<PageId> = pages[..pio_max].to_vec();

    let pw = timed(dev, |d| d.psync_write(&[(pages[0], &zero[..])]))?;
    let writes: Vec<(PageId, &[u8])> = pages.iter().map(|&p| (p, &zero[..])).collect();
    timed(dev, |d| d.psync_write(&writes))?;
    let pr = timed(dev, |d| d.psync_read(&pages[..1]).map(drop))?;
    let writes: Vec<(PageId, &[u8])> = batch.iter().map(|&p| (p, &zero[..])).collect();
    let pw_batch = timed(dev, |d| d.psync_write(&writes))? / pio_max as f64;
    let pr_batch = timed(dev, |d| d.psync_read(&batch).map(drop))? / pio_max as f64;
    let mut pr_extent = BTreeMap::new();
    for k in EXTENT_SIZES {
        pr_extent.insert(k, timed(dev, |d| d.psync_read_extents(&[(base, k)]).map(drop))?);
    }
    Ok(Latencies {
        pr,
        pw,
        pr_batch,
        pw_batch,
        pio_max,
        pr_extent,
    })
}

fn timed(dev: &mut Device, op: impl FnOnce(&mut Device) -> Result<()>) -> Result<f64> {
    let before = dev.stats();
    op(dev)?;
    Ok(dev.stats().since(&before).simulated_time_us)
}
