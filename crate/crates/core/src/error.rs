use thiserror::Error;

use crate::planner::PipelinePlan;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("model has no layers")]
    EmptyModel,
    #[error("layer {layer}: missing required field `{field}`")]
    MissingField { layer: i64, field: &'static str },
    #[error("layer {layer}: {message}")]
    InvalidLayer { layer: i64, message: String },
    #[error("duplicate layer id {0}")]
    DuplicateLayer(i64),
    #[error("edge ({from}, {to}) references an unknown layer")]
    DanglingEdge { from: i64, to: i64 },
    #[error("cycle detected through layer {0}")]
    Cycle(i64),
    #[error("shape mismatch at layer {layer}: {message}")]
    ShapeMismatch { layer: i64, message: String },
    #[error("graph must have exactly one input layer, found {0}")]
    InputCount(usize),
    #[error("graph has no sink layer")]
    NoSink,

    #[error("empty region")]
    EmptyRegion,
    #[error("layer {layer}: input of {input} is too small for kernel {kernel}")]
    KernelTooLarge {
        layer: i64,
        input: usize,
        kernel: usize,
    },
    #[error("no region supplied for sink layer {0}")]
    MissingSinkRegion(i64),
    #[error("no input region supplied for source {0}")]
    MissingSourceRegion(String),
    #[error("empty piece")]
    EmptyPiece,
    #[error("strips do not tile the output height: {0}")]
    InvalidStrips(String),
    #[error("device `{0}` has non-positive capacity or alpha")]
    NonPositiveCapacity(String),
    #[error("invalid cluster: {0}")]
    InvalidCluster(String),

    #[error("chunk of {chunk} layers is too small to retain any piece with margin {margin}")]
    ChunkTooSmall { chunk: usize, margin: usize },
    #[error("empty piece chain")]
    EmptyPieceChain,
    #[error("invalid piece chain: {0}")]
    InvalidPieceChain(String),
    #[error("no configuration satisfies the latency limit of {t_lim_s} s")]
    Infeasible {
        t_lim_s: f64,
        best_effort: Option<Box<PipelinePlan>>,
    },
    #[error("plan needs {needed} devices but the cluster has {available}")]
    DeviceCountMismatch { needed: usize, available: usize },
    #[error("instance too large: {0}")]
    InstanceTooLarge(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("simulation deadlock: {0}")]
    Deadlock(String),
    #[error("invalid file: {0}")]
    InvalidFile(String),
}
