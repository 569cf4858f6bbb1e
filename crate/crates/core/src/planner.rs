//! Stage construction: an exact dynamic program over an averaged homogeneous
//! cluster followed by a greedy adaptation to the real devices.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::cost::{
    equal_strips, reference_height, stage_cost, Cluster, CostBreakdown, DeviceSpec, Strip,
};
use crate::error::{Error, Result};
use crate::partition::PieceChain;
use crate::simulator::{device_memory, MemoryEstimate};

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    /// Inclusive, 0-based piece indices.
    pub pieces: (usize, usize),
    /// Device names; the first one is the master.
    pub devices: Vec<String>,
    pub strips: Vec<Strip>,
    pub cost: CostBreakdown,
    pub memory: Vec<MemoryEstimate>,
}

impl StageConfig {
    pub fn master(&self) -> &str {
        &self.devices[0]
    }

    pub fn total_s(&self) -> f64 {
        self.cost.stage_total_s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelinePlan {
    pub model: String,
    pub cluster: String,
    /// `f64::INFINITY` when uncapped.
    pub t_lim_s: f64,
    pub stages: Vec<StageConfig>,
    pub period_s: f64,
    pub latency_s: f64,
}

impl PipelinePlan {
    /// Builds a plan from scored stages; period is the slowest stage and
    /// latency the sum in stage order.
    pub fn from_stages(model: &str, cluster: &str, t_lim_s: f64, stages: Vec<StageConfig>) -> Self {
        let period_s = stages.iter().map(StageConfig::total_s).fold(0.0, f64::max);
        let latency_s = stages.iter().map(StageConfig::total_s).sum();
        PipelinePlan {
            model: model.to_string(),
            cluster: cluster.to_string(),
            t_lim_s,
            stages,
            period_s,
            latency_s,
        }
    }

    pub fn device_count(&self) -> usize {
        self.stages.iter().map(|s| s.devices.len()).sum()
    }

    pub fn ranges(&self) -> Vec<(usize, usize)> {
        self.stages.iter().map(|s| s.pieces).collect()
    }
}

/// Which stage the next device goes to during adaptation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SlotRule {
    /// Stage with the largest remaining requirement per open slot.
    #[default]
    Max,
    /// Stage with the smallest remaining requirement per open slot.
    Min,
}

/// Scores a stage and attaches memory estimates.
pub fn score_stage(
    chain: &PieceChain,
    pieces: (usize, usize),
    devices: &[DeviceSpec],
    strips: &[Strip],
    cluster: &Cluster,
) -> Result<StageConfig> {
    let segment = chain.segment(pieces.0, pieces.1);
    let cost = stage_cost(
        &segment,
        &chain.graph,
        devices,
        strips,
        cluster.bandwidth_bytes_per_s,
        cluster.bytes_per_element,
    )?;
    let memory = device_memory(&segment, &chain.graph, strips, 4)?;
    Ok(StageConfig {
        pieces,
        devices: devices.iter().map(|d| d.name.clone()).collect(),
        strips: strips.to_vec(),
        cost,
        memory,
    })
}

/// Every device gets the mean capacity and mean coefficient.
pub fn averaged_cluster(c: &Cluster) -> Cluster {
    let n = c.devices.len() as f64;
    let cap = c.devices.iter().map(|d| d.capacity_flops).sum::<f64>() / n;
    let alpha = c.devices.iter().map(|d| d.alpha).sum::<f64>() / n;
    Cluster {
        devices: c
            .devices
            .iter()
            .map(|d| DeviceSpec {
                name: d.name.clone(),
                capacity_flops: cap,
                alpha,
            })
            .collect(),
        bandwidth_bytes_per_s: c.bandwidth_bytes_per_s,
        bytes_per_element: c.bytes_per_element,
    }
}

/// Lazily filled table of stage costs on `m` identical devices with equal strips.
pub struct StageCostTable<'a> {
    chain: &'a PieceChain,
    cluster: &'a Cluster,
    device: DeviceSpec,
    cache: HashMap<(usize, usize, usize), Option<f64>>,
    heights: HashMap<(usize, usize), usize>,
}

impl<'a> StageCostTable<'a> {
    pub fn new(chain: &'a PieceChain, cluster: &'a Cluster) -> Self {
        StageCostTable {
            chain,
            cluster,
            device: cluster.devices[0].clone(),
            cache: HashMap::new(),
            heights: HashMap::new(),
        }
    }

    pub fn height(&mut self, i: usize, j: usize) -> usize {
        let chain = self.chain;
        *self
            .heights
            .entry((i, j))
            .or_insert_with(|| reference_height(&chain.segment(i, j), &chain.graph))
    }

    /// Cost of pieces `i..=j` on `m` devices; `None` when the map has fewer rows than devices.
    pub fn cost(&mut self, i: usize, j: usize, m: usize) -> Result<Option<f64>> {
        if let Some(&c) = self.cache.get(&(i, j, m)) {
            return Ok(c);
        }
        let h = self.height(i, j);
        let c = if m > h {
            None
        } else {
            let devices = vec![self.device.clone(); m];
            let segment = self.chain.segment(i, j);
            let cost = stage_cost(
                &segment,
                &self.chain.graph,
                &devices,
                &equal_strips(h, m),
                self.cluster.bandwidth_bytes_per_s,
                self.cluster.bytes_per_element,
            )?;
            Some(cost.stage_total_s)
        };
        self.cache.insert((i, j, m), c);
        Ok(c)
    }

    pub fn evaluations(&self) -> usize {
        self.cache.len()
    }
}

/// A candidate homogeneous arrangement: `(first piece, last piece, devices)` per stage.
#[derive(Clone, Debug, PartialEq)]
pub struct Arrangement {
    pub period: f64,
    pub latency: f64,
    pub stages: Vec<(usize, usize, usize)>,
}

/// Total order used to pick among plans: period, latency, stage count, ranges, device counts.
pub fn arrangement_order(a: &Arrangement, b: &Arrangement) -> Ordering {
    a.period
        .total_cmp(&b.period)
        .then(a.latency.total_cmp(&b.latency))
        .then(a.stages.len().cmp(&b.stages.len()))
        .then_with(|| a.stages.cmp(&b.stages))
}

fn dominates(a: &Arrangement, b: &Arrangement) -> bool {
    a.period <= b.period && a.latency <= b.latency && arrangement_order(a, b) != Ordering::Greater
}

fn insert_front(front: &mut Vec<Arrangement>, cand: Arrangement) {
    if front.iter().any(|e| dominates(e, &cand)) {
        return;
    }
    front.retain(|e| !dominates(&cand, e));
    front.push(cand);
}

/// Pareto fronts of (period, latency) for every prefix of pieces and exact
/// device count, with candidates above `t_lim` dropped.
fn homogeneous_fronts(
    table: &mut StageCostTable,
    l: usize,
    d: usize,
    t_lim: f64,
) -> Result<Vec<Arrangement>> {
    // front[j][q]: first j pieces on exactly q devices.
    let mut front: Vec<Vec<Vec<Arrangement>>> = vec![vec![Vec::new(); d + 1]; l + 1];
    front[0][0].push(Arrangement {
        period: 0.0,
        latency: 0.0,
        stages: Vec::new(),
    });
    for j in 1..=l {
        for s in 0..j {
            for q_prev in 0..d {
                if front[s][q_prev].is_empty() {
                    continue;
                }
                let prev = front[s][q_prev].clone();
                for m in 1..=d - q_prev {
                    let Some(ts) = table.cost(s, j - 1, m)? else {
                        break;
                    };
                    for p in prev.iter().cloned() {
                        let latency = p.latency + ts;
                        if latency > t_lim {
                            continue;
                        }
                        let mut stages = p.stages;
                        stages.push((s, j - 1, m));
                        insert_front(
                            &mut front[j][q_prev + m],
                            Arrangement {
                                period: p.period.max(ts),
                                latency,
                                stages,
                            },
                        );
                    }
                }
            }
        }
    }
    Ok(front.swap_remove(l).into_iter().skip(1).flatten().collect())
}

fn pick_device_order(c: &Cluster) -> Vec<DeviceSpec> {
    let mut devs = c.devices.clone();
    devs.sort_by(|a, b| {
        b.capacity_flops
            .total_cmp(&a.capacity_flops)
            .then(a.alpha.total_cmp(&b.alpha))
    });
    devs
}

/// Materializes an arrangement onto concrete devices handed out in order,
/// using equal strips.
pub fn realize(
    chain: &PieceChain,
    c: &Cluster,
    cluster_name: &str,
    t_lim: f64,
    arrangement: &Arrangement,
) -> Result<PipelinePlan> {
    let devices = pick_device_order(c);
    let mut next = 0;
    let mut stages = Vec::with_capacity(arrangement.stages.len());
    for &(i, j, m) in &arrangement.stages {
        let group = &devices[next..next + m];
        next += m;
        let h = reference_height(&chain.segment(i, j), &chain.graph);
        stages.push(score_stage(chain, (i, j), group, &equal_strips(h, m), c)?);
    }
    Ok(PipelinePlan::from_stages(
        chain.graph.name(),
        cluster_name,
        t_lim,
        stages,
    ))
}

/// Minimum-period plan on a uniform cluster subject to `latency <= t_lim`.
pub fn plan_homogeneous(chain: &PieceChain, c: &Cluster, t_lim: f64) -> Result<PipelinePlan> {
    plan_homogeneous_named(chain, c, "", t_lim)
}

pub fn plan_homogeneous_named(
    chain: &PieceChain,
    c: &Cluster,
    cluster_name: &str,
    t_lim: f64,
) -> Result<PipelinePlan> {
    c.validate()?;
    if chain.is_empty() {
        return Err(Error::EmptyPieceChain);
    }
    if !c.is_uniform() {
        return Err(Error::InvalidCluster(
            "homogeneous planning needs identical devices".into(),
        ));
    }
    let mut table = StageCostTable::new(chain, c);
    let feasible = homogeneous_fronts(&mut table, chain.len(), c.devices.len(), t_lim)?;
    log::info!("stage cost evaluations: {}", table.evaluations());
    if let Some(best) = feasible.iter().min_by(|a, b| arrangement_order(a, b)) {
        return realize(chain, c, cluster_name, t_lim, best);
    }
    let all = homogeneous_fronts(&mut table, chain.len(), c.devices.len(), f64::INFINITY)?;
    let fastest = all.iter().min_by(|a, b| {
        a.latency
            .total_cmp(&b.latency)
            .then_with(|| arrangement_order(a, b))
    });
    let best_effort = match fastest {
        Some(a) => Some(Box::new(realize(chain, c, cluster_name, t_lim, a)?)),
        None => None,
    };
    Err(Error::Infeasible {
        t_lim_s: t_lim,
        best_effort,
    })
}

/// Integer rows proportional to `weights`, each at least one, summing to `h`.
fn proportional_rows(h: usize, weights: &[f64]) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let spare = h - n;
    let exact: Vec<f64> = weights.iter().map(|w| spare as f64 * w / total).collect();
    let mut rows: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = spare - rows.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        rows[k] += 1;
        left -= 1;
    }
    rows.iter().map(|r| r + 1).collect()
}

fn strips_from_rows(rows: &[usize]) -> Vec<Strip> {
    let mut start = 0;
    rows.iter()
        .map(|&r| {
            let s = Strip::new(start, start + r);
            start += r;
            s
        })
        .collect()
}

/// Row allocation minimizing the slowest device's compute time over its
/// halo-inflated strip. Devices beyond the number of rows are dropped from
/// the end of the list; the result has one strip per kept device.
pub fn balance_strips(
    chain: &PieceChain,
    pieces: (usize, usize),
    devices: &[DeviceSpec],
) -> Result<Vec<Strip>> {
    if devices.is_empty() {
        return Err(Error::InvalidStrips("no devices".into()));
    }
    let segment = chain.segment(pieces.0, pieces.1);
    let g = &chain.graph;
    let h = reference_height(&segment, g);
    let mut devices = devices;
    if devices.len() > h {
        log::warn!(
            "stage {:?} has {} rows for {} devices; dropping {}",
            pieces,
            h,
            devices.len(),
            devices.len() - h
        );
        devices = &devices[..h];
    }
    let mut flops_cache: HashMap<(usize, usize), f64> = HashMap::new();
    let mut time = |k: usize, s: Strip| -> Result<f64> {
        let f = match flops_cache.get(&(s.start, s.end)) {
            Some(&f) => f,
            None => {
                let regions = crate::cost::sink_regions_for(&segment, g, s, h);
                let map = crate::cost::segment_regions(
                    &segment,
                    g,
                    &regions,
                    crate::cost::PaddingMode::Framework,
                )?;
                let f = crate::cost::segment_flops(&segment, g, &map.actual_out);
                flops_cache.insert((s.start, s.end), f);
                f
            }
        };
        crate::cost::compute_time(&devices[k], f)
    };
    let weights: Vec<f64> = devices.iter().map(DeviceSpec::speed).collect();
    let mut rows = proportional_rows(h, &weights);
    let eval = |rows: &[usize], time: &mut dyn FnMut(usize, Strip) -> Result<f64>| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (k, s) in strips_from_rows(rows).into_iter().enumerate() {
            worst = worst.max(time(k, s)?);
        }
        Ok(worst)
    };
    let mut current = eval(&rows, &mut time)?;
    loop {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for b in 0..rows.len().saturating_sub(1) {
            for dir in [0, 1] {
                let (from, to) = if dir == 0 { (b, b + 1) } else { (b + 1, b) };
                if rows[from] <= 1 {
                    continue;
                }
                let mut cand = rows.clone();
                cand[from] -= 1;
                cand[to] += 1;
                let t = eval(&cand, &mut time)?;
                if t < current && best.as_ref().is_none_or(|(bt, _)| t < *bt) {
                    best = Some((t, cand));
                }
            }
        }
        match best {
            Some((t, cand)) => {
                current = t;
                rows = cand;
            }
            None => break,
        }
    }
    Ok(strips_from_rows(&rows))
}

/// Reassigns real devices to the stages of a homogeneous plan, fastest first,
/// and rebalances strips for mixed stages.
pub fn adapt_heterogeneous(
    plan_h: &PipelinePlan,
    chain: &PieceChain,
    c: &Cluster,
    rule: SlotRule,
) -> Result<PipelinePlan> {
    c.validate()?;
    let used = plan_h.device_count();
    if c.devices.len() < used {
        return Err(Error::DeviceCountMismatch {
            needed: used,
            available: c.devices.len(),
        });
    }
    let devices = pick_device_order(c);
    let devices = &devices[..used];
    let avg = devices.iter().map(|d| d.capacity_flops).sum::<f64>() / used as f64;

    let n = plan_h.stages.len();
    let slots: Vec<usize> = plan_h.stages.iter().map(|s| s.devices.len()).collect();
    let theta: Vec<f64> = plan_h.stages.iter().map(|s| s.cost.total_flops).collect();
    let mut remaining = theta.clone();
    let mut open = slots.clone();
    let mut groups: Vec<Vec<DeviceSpec>> = vec![Vec::new(); n];
    let mut done: Vec<Option<StageConfig>> = vec![None; n];

    for d in devices {
        let mut pick: Option<(usize, f64)> = None;
        for s in 0..n {
            if open[s] == 0 {
                continue;
            }
            let need = remaining[s] / open[s] as f64;
            let better = match pick {
                None => true,
                Some((_, best)) => match rule {
                    SlotRule::Max => need > best,
                    SlotRule::Min => need < best,
                },
            };
            if better {
                pick = Some((s, need));
            }
        }
        let (s, _) = pick.expect("device count matches open slots");
        groups[s].push(d.clone());
        remaining[s] -= theta[s] * d.capacity_flops / (avg * slots[s] as f64);
        open[s] -= 1;
        if open[s] == 0 {
            let stage = &plan_h.stages[s];
            let group = &groups[s];
            let uniform = group
                .iter()
                .all(|x| x.capacity_flops == group[0].capacity_flops && x.alpha == group[0].alpha);
            let strips = if uniform {
                stage.strips.clone()
            } else {
                balance_strips(chain, stage.pieces, group)?
            };
            let kept = &group[..strips.len()];
            done[s] = Some(score_stage(chain, stage.pieces, kept, &strips, c)?);
        }
    }
    let stages: Vec<StageConfig> = done
        .into_iter()
        .map(|s| s.expect("every stage filled"))
        .collect();
    let plan = PipelinePlan::from_stages(&plan_h.model, &plan_h.cluster, plan_h.t_lim_s, stages);
    if plan.latency_s > plan.t_lim_s {
        return Err(Error::Infeasible {
            t_lim_s: plan.t_lim_s,
            best_effort: Some(Box::new(plan)),
        });
    }
    Ok(plan)
}

/// Homogeneous planning on the averaged cluster followed by adaptation to the real one.
pub fn plan(
    chain: &PieceChain,
    c: &Cluster,
    cluster_name: &str,
    t_lim: f64,
) -> Result<PipelinePlan> {
    plan_with_rule(chain, c, cluster_name, t_lim, SlotRule::Max)
}

pub fn plan_with_rule(
    chain: &PieceChain,
    c: &Cluster,
    cluster_name: &str,
    t_lim: f64,
    rule: SlotRule,
) -> Result<PipelinePlan> {
    let avg = averaged_cluster(c);
    let plan_h = plan_homogeneous_named(chain, &avg, cluster_name, t_lim)?;
    adapt_heterogeneous(&plan_h, chain, c, rule)
}

/// Structural checks of a plan against its chain and cluster.
pub fn validate_plan(plan: &PipelinePlan, chain: &PieceChain, c: &Cluster) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidPlan(m));
    if plan.stages.is_empty() {
        return bad("plan has no stages".into());
    }
    let mut next = 0;
    let mut seen = std::collections::HashSet::new();
    for (k, s) in plan.stages.iter().enumerate() {
        if s.pieces.0 != next || s.pieces.1 < s.pieces.0 || s.pieces.1 >= chain.len() {
            return bad(format!(
                "stage {k} covers pieces {:?}, expected to start at {next}",
                s.pieces
            ));
        }
        next = s.pieces.1 + 1;
        if s.devices.is_empty() || s.devices.len() != s.strips.len() {
            return bad(format!(
                "stage {k} has {} devices and {} strips",
                s.devices.len(),
                s.strips.len()
            ));
        }
        for name in &s.devices {
            if c.device(name).is_none() {
                return bad(format!("stage {k} uses unknown device {name}"));
            }
            if !seen.insert(name.clone()) {
                return bad(format!("device {name} is used by more than one stage"));
            }
        }
        let h = reference_height(&chain.segment(s.pieces.0, s.pieces.1), &chain.graph);
        let mut row = 0;
        for st in &s.strips {
            if st.start != row || st.end <= st.start {
                return bad(format!("stage {k} strips do not tile the output"));
            }
            row = st.end;
        }
        if row != h {
            return bad(format!("stage {k} strips cover {row} of {h} rows"));
        }
    }
    if next != chain.len() {
        return bad(format!("stages cover {next} of {} pieces", chain.len()));
    }
    Ok(())
}

/// Re-scores every stage of `plan` against `c`, keeping its layout.
pub fn rescore(plan: &PipelinePlan, chain: &PieceChain, c: &Cluster) -> Result<PipelinePlan> {
    validate_plan(plan, chain, c)?;
    let stages = plan
        .stages
        .iter()
        .map(|s| {
            let devs: Vec<DeviceSpec> = s
                .devices
                .iter()
                .map(|n| c.device(n).cloned().expect("validated"))
                .collect();
            score_stage(chain, s.pieces, &devs, &s.strips, c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PipelinePlan::from_stages(
        &plan.model,
        &plan.cluster,
        plan.t_lim_s,
        stages,
    ))
}
