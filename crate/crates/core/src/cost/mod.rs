//! Analytical latency predictors for the baseline B+-tree and the PIO
//! B-tree, device calibration, and parameter tuning.
//!
//! Levels are numbered from the root (level 0) down to the leaves
//! (level H-1). Heights are real numbers; sums over levels use integer
//! level indices.

mod calibrate;
mod tune;

pub use calibrate::{calibrate, Latencies};
pub use tune::{tune, TuneInput, TuneResult, LEAF_GRID, NODE_SIZE_GRID};

use crate::{Error, Result};

/// Workload, tree and device parameters for one prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostProfile {
    /// N: indexed entries.
    pub n: f64,
    /// F: maximum pointers per internal node.
    pub fanout: f64,
    /// U: node utilization.
    pub utilization: f64,
    /// L: leaf size in pages.
    pub leaf_segments: f64,
    /// Pr, Pw: single-page random read / write latency.
    pub pr: f64,
    pub pw: f64,
    /// Pr(L): latency of reading one L-page leaf.
    pub pr_leaf: f64,
    /// Pr', Pw': per-page latency inside a PioMax-sized psync batch.
    pub pr_batch: f64,
    pub pw_batch: f64,
    /// Rs, Ri: search and insert ratios, summing to 1.
    pub rs: f64,
    pub ri: f64,
    /// M: buffer pool pages.
    pub m: f64,
    /// O: operation queue pages.
    pub o: f64,
    /// Entries per partial flush.
    pub bcnt: f64,
}

impl CostProfile {
    /// F' = (F - 1) U: average entries per node.
    pub fn f_eff(&self) -> f64 {
        (self.fanout - 1.0) * self.utilization
    }

    /// Queue capacity in entries, O F'/U = O (F - 1).
    pub fn opq_entries(&self) -> f64 {
        self.o * self.f_eff() / self.utilization
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("cost profile: {what}")));
        if self.f_eff() < 2.0 {
            return bad("F' = (F-1)U must be at least 2");
        }
        if self.n < 1.0 {
            return bad("N must be at least 1");
        }
        if (self.rs + self.ri - 1.0).abs() > 1e-9 || self.rs < 0.0 || self.ri < 0.0 {
            return bad("Rs and Ri must be non-negative and sum to 1");
        }
        for (v, what) in [
            (self.pr, "Pr"),
            (self.pw, "Pw"),
            (self.pr_leaf, "Pr(L)"),
            (self.pr_batch, "Pr'"),
            (self.pw_batch, "Pw'"),
        ] {
            if !(v > 0.0) {
                return bad(&format!("{what} must be positive"));
            }
        }
        if self.leaf_segments < 1.0 || self.bcnt < 1.0 || self.m < 1.0 {
            return bad("L, bcnt and M must be at least 1");
        }
        Ok(())
    }
}

/// How the partially buffered level enters the read term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadTerm {
    /// `floor(eta) + 1 - F'^-frac(eta)`, the form the coverage derivation
    /// (H_nb = floor(H - H_b), Cvrg = F'^-frac) produces.
    #[default]
    Floor,
    /// `ceil(eta) + 1 - F'^-frac(eta)`, the form printed with the
    /// buffered B+-tree formula.
    PrintedCeil,
}

/// H = log N / log F'.
pub fn tree_height(n: f64, f_eff: f64) -> Result<f64> {
    if !(n >= 1.0) || !(f_eff >= 2.0) {
        return Err(Error::Config(format!(
            "tree height needs N >= 1 and F' >= 2 (N={n}, F'={f_eff})"
        )));
    }
    Ok(n.log2() / f_eff.log2())
}

/// Node-size utility/cost ratio: log2(entries per node) / node read time.
pub fn utility_cost(entries: f64, read_time: f64) -> f64 {
    entries.log2() / read_time
}

/// Unbuffered B+-tree cost per operation: H Pr + Ri Pw.
pub fn cost_bplus(p: &CostProfile) -> Result<f64> {
    p.validate()?;
    Ok(tree_height(p.n, p.f_eff())? * p.pr + p.ri * p.pw)
}

/// Buffer-pool coverage of a tree of `n` entries with `m` cached nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferGeometry {
    pub last_level: f64,
    /// Buffered height H_b = LastLevel + 1.
    pub h_b: f64,
    /// Non-buffered height H_nb = floor(H - H_b).
    pub h_nb: f64,
    /// Fraction of the partially buffered level that is cached.
    pub cvrg: f64,
    /// eta = log_F'(N / M) - 1.
    pub eta: f64,
    /// The buffer holds every node: no reads remain.
    pub fully_buffered: bool,
}

pub fn buffer_geometry(n: f64, f_eff: f64, m: f64) -> Result<BufferGeometry> {
    if !(m >= 1.0) {
        return Err(Error::Config("buffer must hold at least one node".into()));
    }
    let h = tree_height(n, f_eff)?;
    let last_level = m.ln() / f_eff.ln();
    let h_b = last_level + 1.0;
    let eta = (n / m).ln() / f_eff.ln() - 1.0;
    let gap = h - h_b;
    if gap <= 0.0 {
        return Ok(BufferGeometry {
            last_level,
            h_b,
            h_nb: 0.0,
            cvrg: 1.0,
            eta,
            fully_buffered: true,
        });
    }
    Ok(BufferGeometry {
        last_level,
        h_b,
        h_nb: gap.floor(),
        cvrg: f_eff.powf(-gap.fract()),
        eta,
        fully_buffered: false,
    })
}

/// Expected node reads per lookup given `eta`; 0 once everything is cached.
pub fn read_term(eta: f64, f_eff: f64, form: ReadTerm) -> f64 {
    if eta <= 0.0 {
        return 0.0;
    }
    let whole = match form {
        ReadTerm::Floor => eta.floor(),
        ReadTerm::PrintedCeil => eta.ceil(),
    };
    whole + (1.0 - f_eff.powf(-eta.fract()))
}

/// Buffered B+-tree cost, computed from eta.
pub fn cost_bplus_buffered(p: &CostProfile) -> Result<f64> {
    cost_bplus_buffered_with(p, ReadTerm::Floor)
}

pub fn cost_bplus_buffered_with(p: &CostProfile, form: ReadTerm) -> Result<f64> {
    p.validate()?;
    let eta = (p.n / p.m).ln() / p.f_eff().ln() - 1.0;
    Ok(read_term(eta, p.f_eff(), form) * p.pr + p.ri * p.pw)
}

/// Buffered B+-tree cost, computed from H_nb and Cvrg.
pub fn cost_bplus_buffered_geometry(p: &CostProfile) -> Result<f64> {
    p.validate()?;
    let g = buffer_geometry(p.n, p.f_eff(), p.m)?;
    Ok((g.h_nb + (1.0 - g.cvrg)) * p.pr + p.ri * p.pw)
}

/// PIO B-tree height log_F'(N / L), at least 1 (a single leaf).
pub fn pio_height(p: &CostProfile) -> Result<f64> {
    Ok(tree_height((p.n / p.leaf_segments).max(1.0), p.f_eff())?.max(1.0))
}

/// G(level): queued entries sharing one node read at `level`, clamped to
/// [1, bcnt].
pub fn g_of_level(level: f64, p: &CostProfile) -> Result<f64> {
    let h = pio_height(p)?;
    let f = p.f_eff();
    let nodes = p.n / (f.powf(h - level) * p.leaf_segments);
    Ok((p.opq_entries() / nodes).clamp(1.0, p.bcnt))
}

/// Unbuffered PIO search cost: (H - 1) Pr + Pr(L).
pub fn pio_search(p: &CostProfile) -> Result<f64> {
    Ok((pio_height(p)? - 1.0) * p.pr + p.pr_leaf)
}

/// Unbuffered PIO insert cost: batched internal reads shared by G(level)
/// entries, plus the shared leaf read and write.
pub fn pio_insert(p: &CostProfile) -> Result<f64> {
    let h = pio_height(p)?;
    let mut internal = 0.0;
    for level in 0..internal_levels(h) {
        internal += 1.0 / g_of_level(level as f64, p)?;
    }
    Ok(internal * p.pr_batch + (p.pr_batch + p.pw_batch) / g_of_level(h - 1.0, p)?)
}

fn internal_levels(h: f64) -> usize {
    (h.ceil() as usize).saturating_sub(1)
}

pub fn cost_pio(p: &CostProfile) -> Result<f64> {
    p.validate()?;
    Ok(p.rs * pio_search(p)? + p.ri * pio_insert(p)?)
}

/// eta for the PIO B-tree: the queue takes O pages from the pool.
pub fn pio_eta(p: &CostProfile) -> Result<f64> {
    let mem = p.m - p.o;
    if !(mem >= 1.0) {
        return Err(Error::Config(format!(
            "buffer of {} pages cannot hold an operation queue of {}",
            p.m, p.o
        )));
    }
    Ok((p.n / (p.leaf_segments * mem)).ln() / p.f_eff().ln() - 1.0)
}

/// Buffered PIO search cost. Leaves are never cached, so the internal read
/// term is the B+-tree read term with the leaf level taken out.
pub fn pio_search_buffered(p: &CostProfile, form: ReadTerm) -> Result<f64> {
    let internal = (read_term(pio_eta(p)?, p.f_eff(), form) - 1.0).max(0.0);
    Ok(internal * p.pr + p.pr_leaf)
}

/// Buffered PIO insert cost: internal reads from level ceil(eta) to H-2,
/// less the cached share of the partially buffered level, plus the leaf term.
pub fn pio_insert_buffered(p: &CostProfile) -> Result<f64> {
    let h = pio_height(p)?;
    let eta = pio_eta(p)?;
    let f = p.f_eff();
    let mut internal = 0.0;
    if eta > 0.0 {
        for level in (eta.ceil() as usize)..internal_levels(h) {
            internal += 1.0 / g_of_level(level as f64, p)?;
        }
        let last_level = (p.m - p.o).ln() / f.ln();
        internal -= f.powf(-eta.fract()) / g_of_level(last_level - 1.0, p)?;
        internal = internal.max(0.0);
    }
    Ok(internal * p.pr_batch + (p.pr_batch + p.pw_batch) / g_of_level(h - 1.0, p)?)
}

pub fn cost_pio_buffered(p: &CostProfile) -> Result<f64> {
    cost_pio_buffered_with(p, ReadTerm::Floor)
}

pub fn cost_pio_buffered_with(p: &CostProfile, form: ReadTerm) -> Result<f64> {
    p.validate()?;
    Ok(p.rs * pio_search_buffered(p, form)? + p.ri * pio_insert_buffered(p)?)
}

#[cfg(test)]
mod tests;
