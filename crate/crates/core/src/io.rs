//! JSON file formats for clusters, piece chains, plans and simulation reports.

use serde::{Deserialize, Serialize};

use crate::cost::{Cluster, DeviceSpec, Strip};
use crate::error::{Error, Result};
use crate::graph::{ModelFile, ModelGraph};
use crate::partition::{PartitionResult, Piece, PieceChain};
use crate::planner::{rescore, PipelinePlan, StageConfig};
use crate::simulator::{SimEvent, SimReport};
use crate::vertex_set::VertexSet;

pub const BYTES_PER_MBPS: f64 = 125_000.0;

/// Rounds to 9 significant digits so written files are reproducible.
pub fn round9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn default_bpe() -> usize {
    4
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceFile {
    pub name: String,
    pub flops: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterFile {
    pub bandwidth_mbps: f64,
    #[serde(default = "default_bpe")]
    pub bytes_per_element: usize,
    pub devices: Vec<DeviceFile>,
}

impl ClusterFile {
    pub fn into_cluster(self) -> Result<Cluster> {
        let c = Cluster {
            devices: self
                .devices
                .into_iter()
                .map(|d| DeviceSpec {
                    name: d.name,
                    capacity_flops: d.flops,
                    alpha: d.alpha,
                })
                .collect(),
            bandwidth_bytes_per_s: self.bandwidth_mbps * BYTES_PER_MBPS,
            bytes_per_element: self.bytes_per_element,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn from_cluster(c: &Cluster) -> Self {
        ClusterFile {
            bandwidth_mbps: c.bandwidth_bytes_per_s / BYTES_PER_MBPS,
            bytes_per_element: c.bytes_per_element,
            devices: c
                .devices
                .iter()
                .map(|d| DeviceFile {
                    name: d.name.clone(),
                    flops: d.capacity_flops,
                    alpha: d.alpha,
                })
                .collect(),
        }
    }
}

pub fn parse_cluster(text: &[u8]) -> Result<Cluster> {
    serde_json::from_slice::<ClusterFile>(text)
        .map_err(json_err)?
        .into_cluster()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceFile {
    pub index: usize,
    pub layer_ids: Vec<i64>,
    pub redundancy_flops: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceChainFile {
    pub model: String,
    pub max_diameter: usize,
    pub pieces: Vec<PieceFile>,
    /// The partitioned model, so the chain file is self-contained.
    pub graph: ModelFile,
}

impl PieceChainFile {
    pub fn from_result(g: &ModelGraph, max_diameter: usize, r: &PartitionResult) -> Self {
        PieceChainFile {
            model: g.name().to_string(),
            max_diameter,
            pieces: r.pieces.iter().map(|p| piece_file(g, p)).collect(),
            graph: g.to_file(),
        }
    }

    pub fn from_chain(chain: &PieceChain) -> Self {
        PieceChainFile {
            model: chain.graph.name().to_string(),
            max_diameter: chain.max_diameter,
            pieces: chain
                .pieces
                .iter()
                .map(|p| piece_file(&chain.graph, p))
                .collect(),
            graph: chain.graph.to_file(),
        }
    }

    pub fn into_chain(self) -> Result<PieceChain> {
        let g = ModelGraph::from_file(&self.graph)?;
        let mut pieces = Vec::with_capacity(self.pieces.len());
        for (i, p) in self.pieces.iter().enumerate() {
            if p.index != i {
                return Err(Error::InvalidPieceChain(format!(
                    "piece {i} has index {}",
                    p.index
                )));
            }
            let mut vertices = VertexSet::new();
            for id in &p.layer_ids {
                let v = g
                    .index_of(*id)
                    .ok_or_else(|| Error::InvalidPieceChain(format!("unknown layer id {id}")))?;
                vertices.insert(v);
            }
            pieces.push(Piece {
                index: i,
                vertices,
                redundancy_flops: p.redundancy_flops as f64,
                interface_in: Vec::new(),
                interface_out: Vec::new(),
            });
        }
        crate::partition::fill_interfaces(&g, &mut pieces);
        PieceChain::new(g, self.max_diameter, pieces)
    }
}

fn piece_file(g: &ModelGraph, p: &Piece) -> PieceFile {
    PieceFile {
        index: p.index,
        layer_ids: p.vertices.iter().map(|v| g.id_of(v)).collect(),
        redundancy_flops: p.redundancy_flops.round() as u64,
    }
}

pub fn parse_piece_chain(text: &[u8]) -> Result<PieceChain> {
    serde_json::from_slice::<PieceChainFile>(text)
        .map_err(json_err)?
        .into_chain()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StripFile {
    pub device: String,
    pub row_start: usize,
    pub row_end: usize,
    pub flops: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub t_comp_s: f64,
    pub t_comm_s: f64,
    pub model_bytes: u64,
    pub feature_bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageFile {
    pub pieces: [usize; 2],
    pub devices: Vec<String>,
    pub master: String,
    pub strips: Vec<StripFile>,
    pub transfer_in_bytes: u64,
    pub t_comp_s: f64,
    pub t_comm_s: f64,
    pub t_stage_s: f64,
    pub redundant_flops: u64,
    pub total_flops: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub model: String,
    pub cluster: String,
    /// `null` for an uncapped plan.
    pub t_lim_s: Option<f64>,
    pub stages: Vec<StageFile>,
    pub period_s: f64,
    pub latency_s: f64,
    /// Embedded pieces, so a plan can be replayed without its partition file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub piece_chain: Option<PieceChainFile>,
}

fn stage_file(s: &StageConfig) -> StageFile {
    StageFile {
        pieces: [s.pieces.0, s.pieces.1],
        devices: s.devices.clone(),
        master: s.master().to_string(),
        strips: s
            .strips
            .iter()
            .zip(&s.cost.devices)
            .zip(&s.memory)
            .map(|((st, d), m)| StripFile {
                device: d.name.clone(),
                row_start: st.start,
                row_end: st.end,
                flops: d.flops.round() as u64,
                bytes_in: d.bytes_in,
                bytes_out: d.bytes_out,
                t_comp_s: round9(d.t_comp),
                t_comm_s: round9(d.t_comm),
                model_bytes: m.model_bytes,
                feature_bytes: m.feature_bytes,
            })
            .collect(),
        transfer_in_bytes: s.cost.transfer_in_bytes,
        t_comp_s: round9(s.cost.stage_compute_s),
        t_comm_s: round9(s.cost.stage_comm_s),
        t_stage_s: round9(s.cost.stage_total_s),
        redundant_flops: s.cost.redundant_flops.round() as u64,
        total_flops: s.cost.total_flops.round() as u64,
    }
}

impl PlanFile {
    pub fn from_plan(p: &PipelinePlan) -> Self {
        PlanFile {
            model: p.model.clone(),
            cluster: p.cluster.clone(),
            t_lim_s: p.t_lim_s.is_finite().then_some(round9(p.t_lim_s)),
            stages: p.stages.iter().map(stage_file).collect(),
            period_s: round9(p.period_s),
            latency_s: round9(p.latency_s),
            piece_chain: None,
        }
    }

    pub fn with_chain(p: &PipelinePlan, chain: &PieceChain) -> Self {
        PlanFile {
            piece_chain: Some(PieceChainFile::from_chain(chain)),
            ..Self::from_plan(p)
        }
    }

    /// Rebuilds the plan layout and re-scores it against `c`.
    pub fn into_plan(self, chain: &PieceChain, c: &Cluster) -> Result<PipelinePlan> {
        if self.model != chain.graph.name() {
            return Err(Error::InvalidPlan(format!(
                "plan is for model {} but pieces are for {}",
                self.model,
                chain.graph.name()
            )));
        }
        let mut stages = Vec::with_capacity(self.stages.len());
        for (k, s) in self.stages.into_iter().enumerate() {
            if s.devices.first() != Some(&s.master) {
                return Err(Error::InvalidPlan(format!(
                    "stage {k} master is not its first device"
                )));
            }
            if s.strips.len() != s.devices.len()
                || s.strips
                    .iter()
                    .zip(&s.devices)
                    .any(|(st, d)| &st.device != d)
            {
                return Err(Error::InvalidPlan(format!(
                    "stage {k} strips do not match its devices"
                )));
            }
            if s.pieces[0] > s.pieces[1] {
                return Err(Error::InvalidPlan(format!(
                    "stage {k} has an empty piece range"
                )));
            }
            let strips = s
                .strips
                .iter()
                .map(|st| Strip::new(st.row_start, st.row_end))
                .collect();
            stages.push(StageConfig {
                pieces: (s.pieces[0], s.pieces[1]),
                devices: s.devices,
                strips,
                cost: Default::default(),
                memory: Vec::new(),
            });
        }
        let shell = PipelinePlan {
            model: self.model,
            cluster: self.cluster,
            t_lim_s: self.t_lim_s.unwrap_or(f64::INFINITY),
            stages,
            period_s: 0.0,
            latency_s: 0.0,
        };
        rescore(&shell, chain, c)
    }
}

pub fn parse_plan(text: &[u8], chain: &PieceChain, c: &Cluster) -> Result<PipelinePlan> {
    serde_json::from_slice::<PlanFile>(text)
        .map_err(json_err)?
        .into_plan(chain, c)
}

/// Parses a plan that carries its own piece chain.
pub fn parse_plan_with_chain(text: &[u8], c: &Cluster) -> Result<(PipelinePlan, PieceChain)> {
    let mut file: PlanFile = serde_json::from_slice(text).map_err(json_err)?;
    let chain = file
        .piece_chain
        .take()
        .ok_or_else(|| Error::InvalidPlan("plan has no embedded piece chain".into()))?
        .into_chain()?;
    let plan = file.into_plan(&chain, c)?;
    Ok((plan, chain))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceRow {
    pub device: String,
    pub stage: usize,
    pub utilization_pct: f64,
    pub redundancy_pct: f64,
    pub model_bytes: u64,
    pub feature_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub model: String,
    pub frames: usize,
    pub warmup_frames: usize,
    pub predicted_period_s: f64,
    pub predicted_latency_s: f64,
    pub measured_period_s: f64,
    pub measured_latency_s: f64,
    pub throughput_fpm: f64,
    pub devices: Vec<DeviceRow>,
}

impl ReportFile {
    pub fn from_report(model: &str, r: &SimReport) -> Self {
        ReportFile {
            model: model.to_string(),
            frames: r.frames,
            warmup_frames: r.warmup_frames,
            predicted_period_s: round9(r.predicted_period_s),
            predicted_latency_s: round9(r.predicted_latency_s),
            measured_period_s: round9(r.measured_period_s),
            measured_latency_s: round9(r.measured_latency_s),
            throughput_fpm: round9(r.throughput_fpm),
            devices: r
                .per_device
                .iter()
                .map(|d| DeviceRow {
                    device: d.device.clone(),
                    stage: d.stage,
                    utilization_pct: round9(d.utilization_pct),
                    redundancy_pct: round9(d.redundancy_pct),
                    model_bytes: d.model_bytes,
                    feature_bytes: d.feature_bytes,
                })
                .collect(),
        }
    }
}

pub fn parse_report(text: &[u8]) -> Result<ReportFile> {
    serde_json::from_slice(text).map_err(json_err)
}

#[derive(Serialize)]
struct EventLine<'a> {
    time_s: f64,
    event: &'a str,
    stage: usize,
    device: &'a str,
    frame: usize,
}

/// One JSON object per line.
pub fn events_to_lines(events: &[SimEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let line = EventLine {
            time_s: round9(e.time_s),
            event: e.event.as_str(),
            stage: e.stage,
            device: &e.device,
            frame: e.frame,
        };
        out.push_str(&serde_json::to_string(&line).expect("plain data serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(round9(1.0), 1.0);
        assert_eq!(round9(0.123456789123), 0.123456789);
        assert_eq!(round9(f64::INFINITY), f64::INFINITY);
        assert_eq!(round9(123456789012.0), 123456789000.0);
    }

    #[test]
    fn cluster_defaults() {
        let c =
            parse_cluster(br#"{"bandwidth_mbps": 50, "devices": [{"name": "a", "flops": 1e9}]}"#)
                .unwrap();
        assert_eq!(c.bandwidth_bytes_per_s, 6_250_000.0);
        assert_eq!(c.bytes_per_element, 4);
        assert_eq!(c.devices[0].alpha, 1.0);
    }

    #[test]
    fn cluster_rejects_bad_capacity() {
        let r = parse_cluster(br#"{"bandwidth_mbps": 50, "devices": [{"name": "a", "flops": 0}]}"#);
        assert!(matches!(r, Err(Error::NonPositiveCapacity(_))));
    }
}
