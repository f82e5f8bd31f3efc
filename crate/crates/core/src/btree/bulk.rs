use super::node::InternalNode;
use crate::device::{Device, PageId};
use crate::{Key, Result};

/// Group sizes for packing `n` items at about `target` per node while
/// keeping every group within `[min, max]` when possible.
pub(crate) fn group_sizes(n: usize, target: usize, min: usize, max: usize) -> Vec<usize> {
    if n == 0 {
        return vec![0];
    }
    let lo = n.div_ceil(max).max(1);
    let hi = (n / min.max(1)).max(1);
    let want = ((n as f64 / target.max(1) as f64).round() as usize).max(1);
    let k = want.clamp(lo, hi.max(lo));
    super::node::even_parts(n, k)
}

/// Records per node for a fill factor `fill` over capacity `cap`.
pub(crate) fn fill_target(cap: usize, fill: f64, min: usize) -> usize {
    ((cap as f64 * fill).round() as usize).clamp(min.max(1), cap)
}

/// Writes queued pages in device-sized batches.
pub(crate) fn write_all(dev: &mut Device, writes: &mut Vec<(PageId, Vec<u8>)>) -> Result<()> {
    let max = dev.config().max_batch;
    for chunk in writes.chunks(max) {
        let refs: Vec<(PageId, &[u8])> = chunk.iter().map(|(p, b)| (*p, b.as_slice())).collect();
        dev.psync_write_extents(&refs)?;
    }
    writes.clear();
    Ok(())
}

/// Builds internal levels over `level` = (low key, child) pairs in key
/// order. Returns the root page and the number of internal levels built.
pub(crate) fn build_internal_levels(
    dev: &mut Device,
    mut level: Vec<(Key, PageId)>,
    fanout: usize,
    fill: f64,
) -> Result<(PageId, usize)> {
    let page_size = dev.page_size();
    let min = fanout.div_ceil(2);
    let target = fill_target(fanout - 1, fill, min);
    let mut levels = 0;
    let mut writes = Vec::new();
    while level.len() > 1 {
        let sizes = if level.len() <= fanout {
            vec![level.len()]
        } else {
            group_sizes(level.len(), target, min, fanout)
        };
        let mut next = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for s in sizes {
            let group = &level[start..start + s];
            let node = InternalNode {
                keys: group[1..].iter().map(|&(k, _)| k).collect(),
                children: group.iter().map(|&(_, p)| p).collect(),
            };
            let page = dev.alloc_page()?;
            writes.push((page, node.encode(page_size)));
            next.push((group[0].0, page));
            start += s;
        }
        write_all(dev, &mut writes)?;
        level = next;
        levels += 1;
    }
    Ok((level[0].1, levels))
}
