//! Exhaustive planners for small instances, used to certify the dynamic
//! program and to measure the heterogeneous heuristic's gap.

use std::collections::HashMap;
use std::time::Instant;

use crate::cost::{
    comm_time, compute_time, feature_bytes, reference_height, segment_flops, segment_regions,
    sink_regions_for, stage_input_bytes, Cluster, DeviceSpec, PaddingMode, Strip,
};
use crate::error::{Error, Result};
use crate::partition::PieceChain;
use crate::planner::{
    arrangement_order, realize, score_stage, Arrangement, PipelinePlan, StageCostTable,
};

pub const MAX_HOMOGENEOUS_PIECES: usize = 10;
pub const MAX_HOMOGENEOUS_DEVICES: usize = 8;
pub const MAX_HETEROGENEOUS_PIECES: usize = 8;
pub const MAX_HETEROGENEOUS_DEVICES: usize = 6;
pub const MAX_HETEROGENEOUS_HEIGHT: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub best_plan: PipelinePlan,
    pub explored_states: u64,
    pub wall_time_s: f64,
    /// Compared plan's period divided by the oracle's.
    pub gap: Option<f64>,
}

impl OracleReport {
    pub fn compare(&mut self, other: &PipelinePlan) -> f64 {
        // Equal periods count as no gap, including zero-work models.
        let gap = if other.period_s == self.best_plan.period_s {
            1.0
        } else {
            other.period_s / self.best_plan.period_s
        };
        self.gap = Some(gap);
        gap
    }
}

/// All ways to cut `l` pieces into contiguous stages, as (first, last) pairs.
fn contiguous_splits(l: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << (l - 1)) {
        let mut stages = Vec::new();
        let mut start = 0;
        for i in 0..l - 1 {
            if mask & (1 << i) != 0 {
                stages.push((start, i));
                start = i + 1;
            }
        }
        stages.push((start, l - 1));
        out.push(stages);
    }
    out
}

/// Number of (split, device-count) configurations the homogeneous oracle visits.
pub fn homogeneous_state_count(l: usize, d: usize) -> u64 {
    fn binom(n: u64, k: u64) -> u64 {
        if k > n {
            return 0;
        }
        (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
    }
    (1..=l.min(d) as u64)
        .map(|k| binom(l as u64 - 1, k - 1) * binom(d as u64, k))
        .sum()
}

fn for_each_composition(
    k: usize,
    budget: usize,
    prefix: &mut Vec<usize>,
    f: &mut dyn FnMut(&[usize]),
) {
    if prefix.len() == k {
        f(prefix);
        return;
    }
    let left = k - prefix.len() - 1;
    for m in 1..=budget.saturating_sub(left) {
        prefix.push(m);
        for_each_composition(k, budget - m, prefix, f);
        prefix.pop();
    }
}

/// Exact minimum-period plan on a uniform cluster by full enumeration of
/// contiguous splits and device counts (unused devices allowed).
pub fn oracle_homogeneous(chain: &PieceChain, c: &Cluster, t_lim: f64) -> Result<OracleReport> {
    let clock = Instant::now();
    c.validate()?;
    let (l, d) = (chain.len(), c.devices.len());
    if l == 0 {
        return Err(Error::EmptyPieceChain);
    }
    if l > MAX_HOMOGENEOUS_PIECES || d > MAX_HOMOGENEOUS_DEVICES {
        return Err(Error::InstanceTooLarge(format!(
            "{l} pieces on {d} devices exceeds {MAX_HOMOGENEOUS_PIECES} pieces / {MAX_HOMOGENEOUS_DEVICES} devices"
        )));
    }
    if !c.is_uniform() {
        return Err(Error::InvalidCluster(
            "homogeneous oracle needs identical devices".into(),
        ));
    }
    let mut table = StageCostTable::new(chain, c);
    let mut explored = 0u64;
    let mut best: Option<Arrangement> = None;
    let mut failure: Option<Error> = None;
    for split in contiguous_splits(l) {
        if split.len() > d {
            continue;
        }
        let mut visit = |counts: &[usize]| {
            explored += 1;
            if failure.is_some() {
                return;
            }
            let mut period: f64 = 0.0;
            let mut latency = 0.0;
            let mut stages = Vec::with_capacity(split.len());
            for (&(i, j), &m) in split.iter().zip(counts) {
                match table.cost(i, j, m) {
                    Ok(Some(t)) => {
                        period = period.max(t);
                        latency += t;
                        stages.push((i, j, m));
                    }
                    Ok(None) => return,
                    Err(e) => {
                        failure = Some(e);
                        return;
                    }
                }
            }
            if latency > t_lim {
                return;
            }
            let cand = Arrangement {
                period,
                latency,
                stages,
            };
            if best
                .as_ref()
                .is_none_or(|b| arrangement_order(&cand, b).is_lt())
            {
                best = Some(cand);
            }
        };
        for_each_composition(split.len(), d, &mut Vec::new(), &mut visit);
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let Some(best) = best else {
        return Err(Error::Infeasible {
            t_lim_s: t_lim,
            best_effort: None,
        });
    };
    let plan = realize(chain, c, "", t_lim, &best)?;
    Ok(OracleReport {
        best_plan: plan,
        explored_states: explored,
        wall_time_s: clock.elapsed().as_secs_f64(),
        gap: None,
    })
}

/// Distinct device kinds, fastest first, with their multiplicities.
fn device_kinds(c: &Cluster) -> Vec<(DeviceSpec, Vec<String>)> {
    let mut kinds: Vec<(DeviceSpec, Vec<String>)> = Vec::new();
    for d in &c.devices {
        match kinds
            .iter_mut()
            .find(|(k, _)| k.capacity_flops == d.capacity_flops && k.alpha == d.alpha)
        {
            Some((_, names)) => names.push(d.name.clone()),
            None => kinds.push((d.clone(), vec![d.name.clone()])),
        }
    }
    kinds.sort_by(|(a, _), (b, _)| {
        b.capacity_flops
            .total_cmp(&a.capacity_flops)
            .then(a.alpha.total_cmp(&b.alpha))
    });
    kinds
}

/// Per-strip FLOPs and scatter/gather bytes of one segment, cached by row span.
struct StripTable<'a> {
    chain: &'a PieceChain,
    pieces: (usize, usize),
    h: usize,
    bpe: usize,
    cache: HashMap<(usize, usize), (f64, u64, u64)>,
}

impl StripTable<'_> {
    fn get(&mut self, a: usize, b: usize) -> Result<(f64, u64, u64)> {
        if let Some(&v) = self.cache.get(&(a, b)) {
            return Ok(v);
        }
        let g = &self.chain.graph;
        let segment = self.chain.segment(self.pieces.0, self.pieces.1);
        let sinks = sink_regions_for(&segment, g, Strip::new(a, b), self.h);
        let map = segment_regions(&segment, g, &sinks, PaddingMode::Framework)?;
        let flops = segment_flops(&segment, g, &map.actual_out);
        let bin = map
            .inputs
            .values()
            .map(|r| feature_bytes(r, self.bpe))
            .sum();
        let bout = g
            .sinks_of(&segment)
            .into_iter()
            .filter_map(|v| map.required_out.get(&v))
            .map(|r| feature_bytes(r, self.bpe))
            .sum();
        self.cache.insert((a, b), (flops, bin, bout));
        Ok((flops, bin, bout))
    }
}

struct StripSearch<'a, 'b> {
    table: &'b mut StripTable<'a>,
    devices: &'b [DeviceSpec],
    bandwidth: f64,
    transfer: f64,
    best: f64,
    best_cuts: Vec<usize>,
    explored: u64,
}

impl StripSearch<'_, '_> {
    /// Assigns rows `[from, h)` to devices `k..`, tracking the slowest compute and summed comm.
    fn descend(
        &mut self,
        k: usize,
        from: usize,
        comp: f64,
        comm: f64,
        cuts: &mut Vec<usize>,
    ) -> Result<()> {
        let h = self.table.h;
        let m = self.devices.len();
        if comp + self.transfer + comm >= self.best && !self.best_cuts.is_empty() {
            return Ok(());
        }
        let last = k + 1 == m;
        let lo = if last { h } else { from + 1 };
        let hi = if last { h } else { h - (m - k - 1) };
        for end in lo..=hi {
            let (flops, bin, bout) = self.table.get(from, end)?;
            let c = comp.max(compute_time(&self.devices[k], flops)?);
            let t = if k == 0 {
                comm
            } else {
                comm + comm_time(bin, bout, self.bandwidth)
            };
            cuts.push(end);
            if last {
                self.explored += 1;
                let total = c + (self.transfer + t);
                if total < self.best || self.best_cuts.is_empty() {
                    self.best = total;
                    self.best_cuts = cuts.clone();
                }
            } else {
                self.descend(k + 1, end, c, t, cuts)?;
            }
            cuts.pop();
        }
        Ok(())
    }
}

/// Cheapest strips for an ordered device group on pieces `i..=j`.
fn best_strips<'a>(
    chain: &'a PieceChain,
    tables: &mut HashMap<(usize, usize), StripTable<'a>>,
    pieces: (usize, usize),
    devices: &[DeviceSpec],
    c: &Cluster,
    explored: &mut u64,
) -> Result<Option<(f64, Vec<Strip>)>> {
    let segment = chain.segment(pieces.0, pieces.1);
    let h = reference_height(&segment, &chain.graph);
    if devices.len() > h {
        return Ok(None);
    }
    let transfer = if segment.contains(chain.graph.input_index()) {
        0.0
    } else {
        comm_time(
            stage_input_bytes(&segment, &chain.graph, c.bytes_per_element),
            0,
            c.bandwidth_bytes_per_s,
        )
    };
    let mut table = tables.remove(&pieces).unwrap_or_else(|| StripTable {
        chain,
        pieces,
        h,
        bpe: c.bytes_per_element,
        cache: HashMap::new(),
    });
    let mut search = StripSearch {
        table: &mut table,
        devices,
        bandwidth: c.bandwidth_bytes_per_s,
        transfer,
        best: f64::INFINITY,
        best_cuts: Vec::new(),
        explored: 0,
    };
    let result = search.descend(0, 0, 0.0, 0.0, &mut Vec::new());
    let (best, cuts, n) = (search.best, search.best_cuts.clone(), search.explored);
    tables.insert(pieces, table);
    result?;
    *explored += n;
    let mut start = 0;
    let strips = cuts
        .into_iter()
        .map(|e| {
            let s = Strip::new(start, e);
            start = e;
            s
        })
        .collect();
    Ok(Some((best, strips)))
}

#[derive(Clone, Debug)]
struct HetStage {
    pieces: (usize, usize),
    counts: Vec<usize>,
    strips: Vec<Strip>,
    cost: f64,
}

/// Best stage time and strips per (piece range, device kind counts).
type StageBest = HashMap<((usize, usize), Vec<usize>), Option<(f64, Vec<Strip>)>>;

/// Exact minimum-period plan on an arbitrary small cluster: every contiguous
/// split, every assignment of device kinds to stages, and every strip layout
/// (devices ordered fastest first, master first).
pub fn oracle_heterogeneous(chain: &PieceChain, c: &Cluster, t_lim: f64) -> Result<OracleReport> {
    let clock = Instant::now();
    c.validate()?;
    let (l, d) = (chain.len(), c.devices.len());
    if l == 0 {
        return Err(Error::EmptyPieceChain);
    }
    if l > MAX_HETEROGENEOUS_PIECES || d > MAX_HETEROGENEOUS_DEVICES {
        return Err(Error::InstanceTooLarge(format!(
            "{l} pieces on {d} devices exceeds {MAX_HETEROGENEOUS_PIECES} pieces / {MAX_HETEROGENEOUS_DEVICES} devices"
        )));
    }
    let tallest = (0..l)
        .map(|i| reference_height(&chain.pieces[i].vertices, &chain.graph))
        .max()
        .unwrap_or(0);
    if tallest > MAX_HETEROGENEOUS_HEIGHT {
        return Err(Error::InstanceTooLarge(format!(
            "output height {tallest} exceeds {MAX_HETEROGENEOUS_HEIGHT}"
        )));
    }
    let kinds = device_kinds(c);
    let available: Vec<usize> = kinds.iter().map(|(_, n)| n.len()).collect();

    let mut explored = 0u64;
    let mut tables: HashMap<(usize, usize), StripTable> = HashMap::new();
    let mut stage_best: StageBest = HashMap::new();
    let mut best: Option<(Arrangement, Vec<HetStage>)> = None;

    for split in contiguous_splits(l) {
        if split.len() > d {
            continue;
        }
        let mut chosen: Vec<HetStage> = Vec::new();
        let mut left = available.clone();
        het_search(
            &split,
            &mut chosen,
            &mut left,
            &kinds,
            chain,
            c,
            t_lim,
            &mut tables,
            &mut stage_best,
            &mut explored,
            &mut best,
        )?;
    }
    let Some((_, stages)) = best else {
        return Err(Error::Infeasible {
            t_lim_s: t_lim,
            best_effort: None,
        });
    };
    let mut used: Vec<usize> = vec![0; kinds.len()];
    let mut configs = Vec::with_capacity(stages.len());
    for s in &stages {
        let mut group = Vec::new();
        for (k, &n) in s.counts.iter().enumerate() {
            for _ in 0..n {
                let mut dev = kinds[k].0.clone();
                dev.name = kinds[k].1[used[k]].clone();
                used[k] += 1;
                group.push(dev);
            }
        }
        configs.push(score_stage(chain, s.pieces, &group, &s.strips, c)?);
    }
    let plan = PipelinePlan::from_stages(chain.graph.name(), "", t_lim, configs);
    Ok(OracleReport {
        best_plan: plan,
        explored_states: explored,
        wall_time_s: clock.elapsed().as_secs_f64(),
        gap: None,
    })
}

/// Count vectors `v <= left` with at least one device.
fn sub_multisets(left: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &n in left {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..=n).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    out.retain(|v| v.iter().any(|&k| k > 0));
    out
}

#[allow(clippy::too_many_arguments)]
fn het_search<'a>(
    split: &[(usize, usize)],
    chosen: &mut Vec<HetStage>,
    left: &mut Vec<usize>,
    kinds: &[(DeviceSpec, Vec<String>)],
    chain: &'a PieceChain,
    c: &Cluster,
    t_lim: f64,
    tables: &mut HashMap<(usize, usize), StripTable<'a>>,
    stage_best: &mut StageBest,
    explored: &mut u64,
    best: &mut Option<(Arrangement, Vec<HetStage>)>,
) -> Result<()> {
    let k = chosen.len();
    if k == split.len() {
        *explored += 1;
        let period = chosen.iter().map(|s| s.cost).fold(0.0, f64::max);
        let latency: f64 = chosen.iter().map(|s| s.cost).sum();
        if latency > t_lim {
            return Ok(());
        }
        let cand = Arrangement {
            period,
            latency,
            stages: chosen
                .iter()
                .map(|s| (s.pieces.0, s.pieces.1, s.counts.iter().sum()))
                .collect(),
        };
        if best
            .as_ref()
            .is_none_or(|(b, _)| arrangement_order(&cand, b).is_lt())
        {
            *best = Some((cand, chosen.clone()));
        }
        return Ok(());
    }
    let stages_after = split.len() - k - 1;
    for counts in sub_multisets(left) {
        let m: usize = counts.iter().sum();
        if left.iter().sum::<usize>() - m < stages_after {
            continue;
        }
        let key = (split[k], counts.clone());
        let entry = match stage_best.get(&key) {
            Some(e) => e.clone(),
            None => {
                let group: Vec<DeviceSpec> = counts
                    .iter()
                    .enumerate()
                    .flat_map(|(i, &n)| std::iter::repeat_n(kinds[i].0.clone(), n))
                    .collect();
                let e = best_strips(chain, tables, split[k], &group, c, explored)?;
                stage_best.insert(key, e.clone());
                e
            }
        };
        let Some((cost, strips)) = entry else {
            continue;
        };
        for (i, &n) in counts.iter().enumerate() {
            left[i] -= n;
        }
        chosen.push(HetStage {
            pieces: split[k],
            counts,
            strips,
            cost,
        });
        het_search(
            split, chosen, left, kinds, chain, c, t_lim, tables, stage_best, explored, best,
        )?;
        let done = chosen.pop().expect("pushed above");
        for (i, &n) in done.counts.iter().enumerate() {
            left[i] += n;
        }
    }
    Ok(())
}
