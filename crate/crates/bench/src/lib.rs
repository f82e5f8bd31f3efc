//! Fixtures shared by the criterion benchmarks.

use pio_core::bench::{initial_keys, Index, IndexKind};
use pio_core::{Device, DeviceConfig, IndexRecord, Key, PioConfig, Result};

/// Key domain is twice the loaded size, so half the domain is absent.
pub fn domain(n: usize) -> u64 {
    2 * n as u64
}

/// `n` bulk-loaded entries at fill 0.7 on the default emulated device.
pub fn fixture(kind: IndexKind, n: usize, cfg: &PioConfig) -> Result<(Index, Vec<Key>)> {
    let keys = initial_keys(n, domain(n), 7)?;
    let records: Vec<IndexRecord> = keys.iter().map(|&k| IndexRecord::new(k, k)).collect();
    let dev = Device::emulated(DeviceConfig::default())?;
    Ok((Index::bulk_load(kind, dev, cfg, &records, 0.7)?, keys))
}

/// Keys absent from `loaded`, taken in order from the odd slots of the domain.
pub fn fresh_keys(loaded: &[Key], count: usize, domain: u64) -> Vec<Key> {
    let mut it = loaded.iter().peekable();
    let mut out = Vec::with_capacity(count);
    for k in 0..domain {
        while it.next_if(|&&l| l < k).is_some() {}
        if it.peek() != Some(&&k) {
            out.push(k);
            if out.len() == count {
                break;
            }
        }
    }
    out
}
