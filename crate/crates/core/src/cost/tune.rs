use std::fmt;

use super::{cost_bplus_buffered, cost_pio_buffered, CostProfile, Latencies};
use crate::btree::node::max_fanout;
use crate::{Error, Result};

/// Leaf sizes, in pages, searched by `tune`.
pub const LEAF_GRID: [u32; 5] = [1, 2, 4, 8, 16];
/// Baseline node sizes, in pages, searched for S_opt.
pub const NODE_SIZE_GRID: [u32; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, PartialEq)]
pub struct TuneInput {
    pub latencies: Latencies,
    pub page_size: usize,
    pub utilization: f64,
    pub n: f64,
    /// Buffer pool pages.
    pub m: f64,
    pub rs: f64,
    pub ri: f64,
    pub bcnt: f64,
}

impl TuneInput {
    /// Cost profile of a PIO B-tree with `l`-page leaves and an `o`-page queue.
    pub fn pio_profile(&self, l: u32, o: u32) -> CostProfile {
        CostProfile {
            n: self.n,
            fanout: max_fanout(self.page_size) as f64,
            utilization: self.utilization,
            leaf_segments: f64::from(l),
            pr: self.latencies.pr,
            pw: self.latencies.pw,
            pr_leaf: self.latencies.pr_of(l),
            pr_batch: self.latencies.pr_batch,
            pw_batch: self.latencies.pw_batch,
            rs: self.rs,
            ri: self.ri,
            m: self.m,
            o: f64::from(o),
            bcnt: self.bcnt,
        }
    }

    /// Cost profile of a baseline B+-tree with `size`-page nodes.
    pub fn bplus_profile(&self, size: u32) -> CostProfile {
        let pr = self.latencies.pr_of(size);
        CostProfile {
            fanout: max_fanout(self.page_size * size as usize) as f64,
            leaf_segments: 1.0,
            pr,
            pr_leaf: pr,
            m: (self.m / f64::from(size)).max(1.0),
            o: 0.0,
            ..self.pio_profile(1, 0)
        }
    }

    /// Queue sizes searched: 1, 2, 4, ... up to M/2.
    pub fn opq_grid(&self) -> Vec<u32> {
        std::iter::successors(Some(1u32), |o| o.checked_mul(2))
            .take_while(|&o| f64::from(o) <= self.m / 2.0)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub l_opt: u32,
    pub o_opt: u32,
    pub pio_cost: f64,
    pub s_opt: u32,
    pub bplus_cost: f64,
    /// Every (L, O, cost) evaluated.
    pub grid: Vec<(u32, u32, f64)>,
    /// Every (node size, cost) evaluated.
    pub node_sizes: Vec<(u32, f64)>,
}

/// Grid search for the (L, O) minimizing the buffered PIO cost, and the
/// baseline node size minimizing the buffered B+-tree cost. Ties keep the
/// smaller value.
pub fn tune(input: &TuneInput) -> Result<TuneResult> {
    let o_grid = input.opq_grid();
    if o_grid.is_empty() {
        return Err(Error::Config(format!(
            "buffer of {} pages is too small to tune an operation queue",
            input.m
        )));
    }
    let single_node = input.n < input.pio_profile(1, 1).f_eff();
    let mut grid = Vec::new();
    let mut best: Option<(u32, u32, f64)> = None;
    for l in LEAF_GRID {
        for &o in &o_grid {
            let cost = if single_node {
                input.latencies.pr_of(l)
            } else {
                cost_pio_buffered(&input.pio_profile(l, o))?
            };
            grid.push((l, o, cost));
            if best.is_none_or(|(_, _, c)| cost < c) {
                best = Some((l, o, cost));
            }
        }
    }
    let (l_opt, o_opt, pio_cost) = best.unwrap();

    let mut node_sizes = Vec::new();
    let mut best_s: Option<(u32, f64)> = None;
    for s in NODE_SIZE_GRID {
        let cost = cost_bplus_buffered(&input.bplus_profile(s))?;
        node_sizes.push((s, cost));
        if best_s.is_none_or(|(_, c)| cost < c) {
            best_s = Some((s, cost));
        }
    }
    let (s_opt, bplus_cost) = best_s.unwrap();
    Ok(TuneResult {
        l_opt,
        o_opt,
        pio_cost,
        s_opt,
        bplus_cost,
        grid,
        node_sizes,
    })
}

impl fmt::Display for TuneResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "l_opt = {}", self.l_opt)?;
        writeln!(f, "o_opt = {}", self.o_opt)?;
        writeln!(f, "pio_cost_us = {:.3}", self.pio_cost)?;
        writeln!(f, "s_opt = {}", self.s_opt)?;
        writeln!(f, "bplus_cost_us = {:.3}", self.bplus_cost)?;
        for (l, o, c) in &self.grid {
            writeln!(f, "grid L={l} O={o} cost_us={c:.3}")?;
        }
        for (s, c) in &self.node_sizes {
            writeln!(f, "node_size S={s} cost_us={c:.3}")?;
        }
        Ok(())
    }
}
