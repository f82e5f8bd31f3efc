use std::collections::BTreeMap;

use super::IoKind;

/// Per-batch latency model of a multi-channel flash device.
///
/// A batch of `b` requests is spread over `channels` channels, so it costs
/// `ceil(b / channels)` rounds of the per-request latency. Larger I/O units
/// scale the per-request latency by a sub-linear size curve, and a batch
/// that interleaves reads and writes pays a multiplicative penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyModel {
    pub channels: u32,
    pub read_latency_us: f64,
    pub write_latency_us: f64,
    pub size_latency_curve: BTreeMap<u32, f64>,
    pub interleave_penalty: f64,
}

pub fn default_size_curve() -> BTreeMap<u32, f64> {
    BTreeMap::from([(1, 1.0), (2, 1.0), (4, 1.6), (8, 2.5)])
}

impl LatencyModel {
    pub fn base_latency(&self, kind: IoKind) -> f64 {
        match kind {
            IoKind::Read => self.read_latency_us,
            IoKind::Write => self.write_latency_us,
        }
    }

    /// Latency scale factor for an I/O unit of `pages` pages.
    ///
    /// Exact table hits are returned as-is, sizes between two entries are
    /// interpolated linearly and sizes past the last entry scale linearly
    /// from it.
    pub fn size_factor(&self, pages: u32) -> f64 {
        let pages = pages.max(1);
        if let Some(f) = self.size_latency_curve.get(&pages) {
            return *f;
        }
        let below = self.size_latency_curve.range(..pages).next_back();
        let above = self.size_latency_curve.range(pages..).next();
        match (below, above) {
            (Some((&lo, &flo)), Some((&hi, &fhi))) => {
                let t = f64::from(pages - lo) / f64::from(hi - lo);
                flo + t * (fhi - flo)
            }
            (Some((&lo, &flo)), None) => flo * f64::from(pages) / f64::from(lo),
            (None, Some((&hi, &fhi))) => fhi * f64::from(pages) / f64::from(hi),
            (None, None) => f64::from(pages),
        }
    }

    /// Cost in microseconds of one psync batch.
    pub fn batch_cost(&self, batch_size: usize, kind: IoKind, io_unit_pages: u32, mixed: bool) -> f64 {
        self.batch_cost_with_base(batch_size, self.base_latency(kind), io_unit_pages, mixed)
    }

    pub(crate) fn batch_cost_with_base(&self, batch_size: usize, base: f64, io_unit_pages: u32, mixed: bool) -> f64 {
        if batch_size == 0 {
            return 0.0;
        }
        let rounds = batch_size.div_ceil(self.channels.max(1) as usize) as f64;
        let penalty = if mixed { self.interleave_penalty } else { 1.0 };
        rounds * base * self.size_factor(io_unit_pages) * penalty
    }
}
