//! Discrete-event replay of a pipeline plan over a stream of frames, plus
//! per-device memory estimates.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::{device_region_maps, Cluster, Source, Strip};
use crate::error::{Error, Result};
use crate::graph::{LayerKind, ModelGraph};
use crate::partition::PieceChain;
use crate::planner::{rescore, PipelinePlan, StageConfig};
use crate::vertex_set::VertexSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub model_bytes: u64,
    pub feature_bytes: u64,
}

impl MemoryEstimate {
    pub fn total(&self) -> u64 {
        self.model_bytes + self.feature_bytes
    }
}

/// Weight and bias bytes of every conv layer in the segment.
pub fn model_bytes(segment: &VertexSet, g: &ModelGraph, bytes_per_element: usize) -> u64 {
    segment
        .iter()
        .map(|v| g.layer(v))
        .filter(|l| l.kind == LayerKind::Conv)
        .map(|l| {
            let cin = l.in_channels.unwrap_or(0) as u64;
            let cout = l.out_channels.unwrap_or(0) as u64;
            (l.kernel.0 * l.kernel.1) as u64 * cin * cout + cout
        })
        .sum::<u64>()
        * bytes_per_element as u64
}

/// Model and peak live feature bytes for each strip of a stage.
pub fn device_memory(
    segment: &VertexSet,
    g: &ModelGraph,
    strips: &[Strip],
    bytes_per_element: usize,
) -> Result<Vec<MemoryEstimate>> {
    let weights = model_bytes(segment, g, bytes_per_element);
    let maps = device_region_maps(segment, g, strips)?;
    let sinks = g.sinks_of(segment);
    let mut out = Vec::with_capacity(maps.len());
    for map in maps {
        let order: Vec<usize> = g
            .topo_within(segment)
            .into_iter()
            .filter(|v| map.actual_out.contains_key(v))
            .collect();
        let step: BTreeMap<usize, usize> = order.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let end = order.len();
        // Last step at which a tensor is read; sinks stay alive to the end.
        let last_use = |v: usize| -> usize {
            if sinks.contains(&v) {
                return end;
            }
            g.succs(v)
                .iter()
                .filter_map(|w| step.get(w))
                .copied()
                .max()
                .unwrap_or(0)
        };
        let materialized =
            |v: usize| !matches!(g.layer(v).kind, LayerKind::Input | LayerKind::Output);
        let mut peak = 0u64;
        for (t, &v) in order.iter().enumerate() {
            let mut live = 0u64;
            for (src, r) in &map.inputs {
                let readers: Vec<usize> = match *src {
                    Source::Image => vec![g.input_index()],
                    Source::Layer(u) => g.succs(u).to_vec(),
                };
                let last = readers
                    .iter()
                    .filter_map(|w| step.get(w))
                    .copied()
                    .max()
                    .unwrap_or(0);
                if last >= t {
                    live += r.elements();
                }
            }
            for &u in &order[..=t] {
                if materialized(u) && (u == v || last_use(u) >= t) {
                    live += map.actual_out[&u].elements();
                }
            }
            peak = peak.max(live);
        }
        out.push(MemoryEstimate {
            model_bytes: weights,
            feature_bytes: peak * bytes_per_element as u64,
        });
    }
    Ok(out)
}

/// Memory of every device of a stage, by device name.
pub fn estimate_memory(
    stage: &StageConfig,
    chain: &PieceChain,
) -> Result<Vec<(String, MemoryEstimate)>> {
    let segment = chain.segment(stage.pieces.0, stage.pieces.1);
    let mem = device_memory(&segment, &chain.graph, &stage.strips, 4)?;
    Ok(stage.devices.iter().cloned().zip(mem).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Arrival {
    /// A new frame is offered as soon as the first queue has room.
    Saturated,
    /// Frames are offered every given number of seconds.
    FixedInterval(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub frames: usize,
    pub arrival: Arrival,
    /// Each timed step is stretched by a factor drawn uniformly from `[1, 1 + jitter_pct/100]`.
    pub jitter_pct: f64,
    pub seed: u64,
    pub queue_capacity: usize,
    pub record_events: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            frames: 100,
            arrival: Arrival::Saturated,
            jitter_pct: 0.0,
            seed: 0,
            queue_capacity: 2,
            record_events: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceReport {
    pub device: String,
    pub stage: usize,
    pub utilization_pct: f64,
    pub redundancy_pct: f64,
    pub busy_s: f64,
    pub model_bytes: u64,
    pub feature_bytes: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Arrive,
    Receive,
    Scatter,
    ComputeStart,
    ComputeEnd,
    Gather,
    Depart,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Arrive => "arrive",
            EventKind::Receive => "receive",
            EventKind::Scatter => "scatter",
            EventKind::ComputeStart => "compute_start",
            EventKind::ComputeEnd => "compute_end",
            EventKind::Gather => "gather",
            EventKind::Depart => "depart",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimEvent {
    pub time_s: f64,
    pub event: EventKind,
    pub stage: usize,
    pub device: String,
    pub frame: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimReport {
    pub frames: usize,
    pub warmup_frames: usize,
    pub predicted_period_s: f64,
    pub predicted_latency_s: f64,
    pub measured_period_s: f64,
    pub measured_latency_s: f64,
    /// Frames per minute at the measured period.
    pub throughput_fpm: f64,
    pub per_device: Vec<DeviceReport>,
    pub timeline: Option<Vec<SimEvent>>,
}

/// Timed pieces of one stage at zero jitter.
struct StageTimes {
    transfer_in: f64,
    scatter: Vec<f64>,
    compute: Vec<f64>,
    gather: Vec<f64>,
}

struct Run {
    arrivals: Vec<f64>,
    departures: Vec<f64>,
    /// Compute time per stage, device and frame.
    busy: Vec<Vec<Vec<f64>>>,
    events: Vec<SimEvent>,
}

fn jitter(rng: &mut ChaCha8Rng, j: f64) -> f64 {
    if j == 0.0 {
        1.0
    } else {
        1.0 + rng.gen_range(0.0..=j)
    }
}

fn run(
    plan: &PipelinePlan,
    times: &[StageTimes],
    frames: usize,
    pace: Option<f64>,
    cfg: &SimConfig,
    seed: u64,
    record: bool,
) -> Run {
    let q = cfg.queue_capacity;
    let j = cfg.jitter_pct / 100.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_stages = times.len();
    // start[k][n]: when stage k takes frame n; release[k][n]: when it hands it on.
    let mut start = vec![vec![0.0f64; frames]; n_stages];
    let mut release = vec![vec![0.0f64; frames]; n_stages];
    let mut arrivals = vec![0.0; frames];
    let mut busy: Vec<Vec<Vec<f64>>> = times
        .iter()
        .map(|t| vec![vec![0.0; frames]; t.compute.len()])
        .collect();
    let mut events = Vec::new();

    for n in 0..frames {
        let offered = pace.map_or(0.0, |p| n as f64 * p);
        let room = if n >= q { start[0][n - q] } else { 0.0 };
        arrivals[n] = offered.max(room);
        if record {
            events.push(SimEvent {
                time_s: arrivals[n],
                event: EventKind::Arrive,
                stage: 0,
                device: plan.stages[0].devices[0].clone(),
                frame: n,
            });
        }
        let mut ready = arrivals[n];
        for (k, st) in times.iter().enumerate() {
            let prev_free = if n > 0 { release[k][n - 1] } else { 0.0 };
            let s = ready.max(prev_free);
            start[k][n] = s;
            let devs = &plan.stages[k].devices;
            let mut t = s + st.transfer_in * jitter(&mut rng, j);
            if record {
                events.push(SimEvent {
                    time_s: t,
                    event: EventKind::Receive,
                    stage: k,
                    device: devs[0].clone(),
                    frame: n,
                });
            }
            for (i, sc) in st.scatter.iter().enumerate().skip(1) {
                t += sc * jitter(&mut rng, j);
                if record {
                    events.push(SimEvent {
                        time_s: t,
                        event: EventKind::Scatter,
                        stage: k,
                        device: devs[i].clone(),
                        frame: n,
                    });
                }
            }
            let mut slowest: f64 = 0.0;
            for (i, c) in st.compute.iter().enumerate() {
                let d = c * jitter(&mut rng, j);
                busy[k][i][n] = d;
                slowest = slowest.max(d);
                if record {
                    events.push(SimEvent {
                        time_s: t,
                        event: EventKind::ComputeStart,
                        stage: k,
                        device: devs[i].clone(),
                        frame: n,
                    });
                    events.push(SimEvent {
                        time_s: t + d,
                        event: EventKind::ComputeEnd,
                        stage: k,
                        device: devs[i].clone(),
                        frame: n,
                    });
                }
            }
            t += slowest;
            for (i, ga) in st.gather.iter().enumerate().skip(1) {
                t += ga * jitter(&mut rng, j);
                if record {
                    events.push(SimEvent {
                        time_s: t,
                        event: EventKind::Gather,
                        stage: k,
                        device: devs[i].clone(),
                        frame: n,
                    });
                }
            }
            let blocked = if k + 1 < n_stages && n >= q {
                start[k + 1][n - q]
            } else {
                0.0
            };
            let r = t.max(blocked);
            release[k][n] = r;
            if record {
                events.push(SimEvent {
                    time_s: r,
                    event: EventKind::Depart,
                    stage: k,
                    device: devs[0].clone(),
                    frame: n,
                });
            }
            ready = r;
        }
    }
    events.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    Run {
        arrivals,
        departures: release.last().cloned().unwrap_or_default(),
        busy,
        events,
    }
}

fn warmup(frames: usize) -> usize {
    (frames.div_ceil(10)).min(frames - 1)
}

fn mean_period(departures: &[f64], warm: usize, fallback: f64) -> f64 {
    let n = departures.len();
    if n < 2 {
        return fallback;
    }
    let from = warm.max(1);
    (departures[n - 1] - departures[from - 1]) / (n - from) as f64
}

fn mean_latency(arrivals: &[f64], departures: &[f64], warm: usize) -> f64 {
    let kept = arrivals.len() - warm;
    arrivals[warm..]
        .iter()
        .zip(&departures[warm..])
        .map(|(a, d)| d - a)
        .sum::<f64>()
        / kept as f64
}

/// Replays `plan` on `c`. The plan is re-scored against the cluster first,
/// so predictions and simulation share one cost model.
pub fn simulate(
    plan: &PipelinePlan,
    chain: &PieceChain,
    c: &Cluster,
    cfg: &SimConfig,
) -> Result<SimReport> {
    if cfg.queue_capacity == 0 {
        return Err(Error::Deadlock("queue capacity must be at least 1".into()));
    }
    if cfg.frames == 0 {
        return Err(Error::InvalidFile("frames must be at least 1".into()));
    }
    if cfg.jitter_pct.is_nan() || cfg.jitter_pct < 0.0 {
        return Err(Error::InvalidFile("jitter must be non-negative".into()));
    }
    if let Arrival::FixedInterval(x) = cfg.arrival {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::InvalidFile(
                "arrival interval must be non-negative".into(),
            ));
        }
    }
    let plan = rescore(plan, chain, c)?;
    let b = c.bandwidth_bytes_per_s;
    let times: Vec<StageTimes> = plan
        .stages
        .iter()
        .map(|s| StageTimes {
            transfer_in: s.cost.transfer_in_s,
            scatter: s
                .cost
                .devices
                .iter()
                .map(|d| d.bytes_in as f64 / b)
                .collect(),
            compute: s.cost.devices.iter().map(|d| d.t_comp).collect(),
            gather: s
                .cost
                .devices
                .iter()
                .map(|d| d.bytes_out as f64 / b)
                .collect(),
        })
        .collect();

    let n = cfg.frames;
    let warm = warmup(n);
    let first = match cfg.arrival {
        Arrival::Saturated => run(&plan, &times, n, None, cfg, cfg.seed, cfg.record_events),
        Arrival::FixedInterval(x) => {
            run(&plan, &times, n, Some(x), cfg, cfg.seed, cfg.record_events)
        }
    };
    let period = mean_period(
        &first.departures,
        warm,
        plan.period_s.max(first.departures[0] - first.arrivals[0]),
    );
    let latency = match cfg.arrival {
        Arrival::Saturated => {
            let paced = run(
                &plan,
                &times,
                n,
                Some(period),
                cfg,
                cfg.seed.wrapping_add(1),
                false,
            );
            mean_latency(&paced.arrivals, &paced.departures, warm)
        }
        Arrival::FixedInterval(_) => mean_latency(&first.arrivals, &first.departures, warm),
    };

    let kept = (n - warm) as f64;
    let mut per_device = Vec::new();
    let g = &chain.graph;
    for (k, s) in plan.stages.iter().enumerate() {
        let segment = chain.segment(s.pieces.0, s.pieces.1);
        let whole = crate::cost::unpartitioned_flops(&segment, g);
        let h = crate::cost::reference_height(&segment, g) as f64;
        for (i, d) in s.cost.devices.iter().enumerate() {
            let busy: f64 = first.busy[k][i][warm..].iter().sum();
            let util = if period > 0.0 {
                (busy / (kept * period) * 100.0).min(100.0)
            } else {
                0.0
            };
            let share = whole * s.strips[i].rows() as f64 / h;
            let redundancy = if d.flops > 0.0 {
                ((d.flops - share).max(0.0) / d.flops * 100.0).min(100.0)
            } else {
                0.0
            };
            per_device.push(DeviceReport {
                device: d.name.clone(),
                stage: k,
                utilization_pct: util,
                redundancy_pct: redundancy,
                busy_s: busy,
                model_bytes: s.memory[i].model_bytes,
                feature_bytes: s.memory[i].feature_bytes,
            });
        }
    }
    Ok(SimReport {
        frames: n,
        warmup_frames: warm,
        predicted_period_s: plan.period_s,
        predicted_latency_s: plan.latency_s,
        measured_period_s: period,
        measured_latency_s: latency,
        throughput_fpm: if period > 0.0 {
            60.0 / period
        } else {
            f64::INFINITY
        },
        per_device,
        timeline: cfg.record_events.then_some(first.events),
    })
}
