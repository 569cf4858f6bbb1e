//! Decomposition of a model graph into a chain of pieces minimizing the
//! largest per-piece redundancy.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::cost::{piece_redundancy, Region};
use crate::error::{Error, Result};
use crate::graph::{enumerate_ending_pieces, ModelGraph};
use crate::vertex_set::VertexSet;

pub const DEFAULT_MAX_DIAMETER: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    pub index: usize,
    pub vertices: VertexSet,
    pub redundancy_flops: f64,
    /// External tensors consumed by the piece, keyed by producer layer id.
    pub interface_in: Vec<(i64, Region)>,
    /// Tensors the piece hands on (or emits as network output).
    pub interface_out: Vec<(i64, Region)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MemoStats {
    pub table_size: usize,
    pub hits: usize,
    pub redundancy_evaluations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionResult {
    pub pieces: Vec<Piece>,
    pub objective: f64,
    pub memo_stats: MemoStats,
}

/// A model graph together with its piece decomposition, the input of the planner.
#[derive(Clone, Debug)]
pub struct PieceChain {
    pub graph: ModelGraph,
    pub max_diameter: usize,
    pub pieces: Vec<Piece>,
}

impl PieceChain {
    pub fn new(graph: ModelGraph, max_diameter: usize, pieces: Vec<Piece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::EmptyPieceChain);
        }
        let sets: Vec<VertexSet> = pieces.iter().map(|p| p.vertices.clone()).collect();
        validate_chain(&graph, &sets)?;
        Ok(PieceChain {
            graph,
            max_diameter,
            pieces,
        })
    }

    pub fn from_partition(
        graph: ModelGraph,
        max_diameter: usize,
        result: PartitionResult,
    ) -> Result<Self> {
        Self::new(graph, max_diameter, result.pieces)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Union of pieces `i..=j`.
    pub fn segment(&self, i: usize, j: usize) -> VertexSet {
        self.pieces[i..=j]
            .iter()
            .fold(VertexSet::new(), |acc, p| acc.union(&p.vertices))
    }
}

#[derive(Clone, Debug)]
struct Entry {
    /// Piece costs of the best chain, largest first; `costs[0]` is the objective.
    costs: Vec<f64>,
    choice: Option<VertexSet>,
}

/// Largest cost first, then the next largest, and so on; on a common prefix the
/// chain with more pieces wins. Refining plain minimax this way keeps the tail
/// of an optimal chain optimal for the tail on its own.
fn compare_costs(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    b.len().cmp(&a.len())
}

struct Solver<'g> {
    g: &'g ModelGraph,
    max_diameter: usize,
    memo: HashMap<VertexSet, Entry>,
    redundancy: HashMap<VertexSet, f64>,
    stats: MemoStats,
}

/// Vertices of `residual` with an edge into the already removed part.
fn forced_set(g: &ModelGraph, residual: &VertexSet) -> VertexSet {
    residual
        .iter()
        .filter(|&v| g.succs(v).iter().any(|w| !residual.contains(*w)))
        .collect()
}

impl<'g> Solver<'g> {
    fn new(g: &'g ModelGraph, max_diameter: usize) -> Self {
        Solver {
            g,
            max_diameter,
            memo: HashMap::new(),
            redundancy: HashMap::new(),
            stats: MemoStats::default(),
        }
    }

    fn redundancy(&mut self, piece: &VertexSet) -> Result<f64> {
        if let Some(&c) = self.redundancy.get(piece) {
            return Ok(c);
        }
        let c = piece_redundancy(piece, self.g)?;
        self.stats.redundancy_evaluations += 1;
        self.redundancy.insert(piece.clone(), c);
        Ok(c)
    }

    fn solve(&mut self, residual: &VertexSet) -> Result<Vec<f64>> {
        if residual.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(e) = self.memo.get(residual) {
            self.stats.hits += 1;
            return Ok(e.costs.clone());
        }
        let forced = forced_set(self.g, residual);
        let candidates = enumerate_ending_pieces(residual, self.g, &forced, self.max_diameter);
        let mut best: Option<Entry> = None;
        for m in candidates {
            let c = self.redundancy(&m)?;
            let mut costs = self.solve(&residual.difference(&m))?;
            let at = costs.partition_point(|&x| x >= c);
            costs.insert(at, c);
            let better = match &best {
                None => true,
                Some(b) => match compare_costs(&costs, &b.costs) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => Some(&m) < b.choice.as_ref(),
                },
            };
            if better {
                best = Some(Entry {
                    costs,
                    choice: Some(m),
                });
            }
        }
        let best = best.expect("the residual itself is always a candidate");
        let out = best.costs.clone();
        self.memo.insert(residual.clone(), best);
        self.stats.table_size = self.memo.len();
        Ok(out)
    }

    /// Pieces chosen for `residual`, in removal order (output side first).
    fn reconstruct(&self, residual: &VertexSet) -> Vec<VertexSet> {
        let mut out = Vec::new();
        let mut r = residual.clone();
        while !r.is_empty() {
            let m = self.memo[&r].choice.clone().expect("solved residual");
            r = r.difference(&m);
            out.push(m);
        }
        out
    }
}

type Interface = Vec<(i64, Region)>;

fn interfaces(g: &ModelGraph, piece: &VertexSet) -> (Interface, Interface) {
    let mut ins: Vec<(i64, Region)> = Vec::new();
    for v in piece.iter() {
        for &u in g.preds(v) {
            let id = g.id_of(u);
            if !piece.contains(u) && !ins.iter().any(|(i, _)| *i == id) {
                ins.push((id, Region::full(g.out_shape(u))));
            }
        }
    }
    ins.sort_by_key(|(i, _)| *i);
    let outs = g
        .sinks_of(piece)
        .into_iter()
        .map(|v| (g.id_of(v), Region::full(g.out_shape(v))))
        .collect();
    (ins, outs)
}

/// Recomputes the interface lists of every piece.
pub fn fill_interfaces(g: &ModelGraph, pieces: &mut [Piece]) {
    for p in pieces {
        let (i, o) = interfaces(g, &p.vertices);
        p.interface_in = i;
        p.interface_out = o;
    }
}

fn build_pieces(
    g: &ModelGraph,
    chain: Vec<VertexSet>,
    cache: &mut HashMap<VertexSet, f64>,
) -> Result<Vec<Piece>> {
    chain
        .into_iter()
        .enumerate()
        .map(|(index, vertices)| {
            let c = match cache.get(&vertices) {
                Some(&c) => c,
                None => piece_redundancy(&vertices, g)?,
            };
            let (interface_in, interface_out) = interfaces(g, &vertices);
            Ok(Piece {
                index,
                vertices,
                redundancy_flops: c,
                interface_in,
                interface_out,
            })
        })
        .collect()
}

/// Merges pieces without any conv or pool layer into their downstream
/// neighbour (upstream for the last piece). No-op for graphs without windowed layers.
pub fn glue_connectors(g: &ModelGraph, chain: Vec<VertexSet>) -> Vec<VertexSet> {
    if g.windowed_count() == 0 || chain.len() < 2 {
        return chain;
    }
    let has_work = |p: &VertexSet| p.iter().any(|v| g.layer(v).kind.is_windowed());
    let mut out: Vec<VertexSet> = Vec::with_capacity(chain.len());
    let mut pending = VertexSet::new();
    for p in chain {
        let merged = pending.union(&p);
        if has_work(&merged) {
            out.push(merged);
            pending = VertexSet::new();
        } else {
            pending = merged;
        }
    }
    if !pending.is_empty() {
        let last = out.pop().expect("graph has windowed layers");
        out.push(last.union(&pending));
    }
    out
}

fn finish(
    g: &ModelGraph,
    chain: Vec<VertexSet>,
    stats: MemoStats,
    cache: &mut HashMap<VertexSet, f64>,
) -> Result<PartitionResult> {
    let pieces = build_pieces(g, glue_connectors(g, chain), cache)?;
    let objective = pieces
        .iter()
        .map(|p| p.redundancy_flops)
        .fold(0.0, f64::max);
    Ok(PartitionResult {
        pieces,
        objective,
        memo_stats: stats,
    })
}

/// Exact min-max decomposition of a predecessor-closed `view` of the graph,
/// without connector gluing. Pieces are in chain order (input side first).
pub fn partition_view(
    g: &ModelGraph,
    view: &VertexSet,
    max_diameter: usize,
) -> Result<(Vec<VertexSet>, f64, MemoStats)> {
    let mut solver = Solver::new(g, max_diameter);
    let objective = solver.solve(view)?.first().copied().unwrap_or(0.0);
    let mut chain = solver.reconstruct(view);
    chain.reverse();
    Ok((chain, objective, solver.stats))
}

/// Partitions the whole graph into a chain of pieces.
pub fn partition(g: &ModelGraph, max_diameter: usize) -> Result<PartitionResult> {
    let mut solver = Solver::new(g, max_diameter);
    let all = g.all();
    solver.solve(&all)?;
    let mut chain = solver.reconstruct(&all);
    chain.reverse();
    let stats = solver.stats;
    finish(g, chain, stats, &mut solver.redundancy)
}

/// Divide-and-conquer variant for wide graphs: repeatedly solves the last
/// `chunk_layers` layers of the remaining graph and commits only the trailing
/// pieces lying at least `margin_layers` hops from the cut.
pub fn partition_large(
    g: &ModelGraph,
    chunk_layers: usize,
    margin_layers: usize,
    max_diameter: usize,
) -> Result<PartitionResult> {
    if chunk_layers <= 2 * margin_layers {
        return Err(Error::ChunkTooSmall {
            chunk: chunk_layers,
            margin: margin_layers,
        });
    }
    let mut residual = g.all();
    let mut committed: Vec<VertexSet> = Vec::new();
    let mut stats = MemoStats::default();
    let mut cache = HashMap::new();
    while !residual.is_empty() {
        let order = g.topo_within(&residual);
        let whole = order.len() <= chunk_layers;
        let chunk: VertexSet = order[order.len().saturating_sub(chunk_layers)..]
            .iter()
            .copied()
            .collect();
        let mut solver = Solver::new(g, max_diameter);
        solver.solve(&chunk)?;
        let pieces = solver.reconstruct(&chunk);
        stats.table_size += solver.stats.table_size;
        stats.hits += solver.stats.hits;
        stats.redundancy_evaluations += solver.stats.redundancy_evaluations;
        cache.extend(solver.redundancy.drain());
        if whole {
            committed.extend(pieces);
            break;
        }
        let upstream = residual.difference(&chunk);
        let boundary: Vec<usize> = chunk
            .iter()
            .filter(|&v| g.preds(v).iter().any(|u| upstream.contains(*u)))
            .collect();
        let far = |v: usize| {
            boundary.iter().all(|&b| {
                g.undirected_distance(b, v)
                    .is_none_or(|d| d >= margin_layers)
            })
        };
        let kept: Vec<VertexSet> = pieces
            .into_iter()
            .take_while(|p| p.iter().all(far))
            .collect();
        if kept.is_empty() {
            return Err(Error::ChunkTooSmall {
                chunk: chunk_layers,
                margin: margin_layers,
            });
        }
        log::debug!(
            "committing {} pieces from a {}-layer chunk",
            kept.len(),
            chunk.len()
        );
        for p in kept {
            residual = residual.difference(&p);
            committed.push(p);
        }
    }
    committed.reverse();
    finish(g, committed, stats, &mut cache)
}

/// Checks that pieces are disjoint, cover the graph and that every edge
/// stays within a piece or points to a later one.
pub fn validate_chain(g: &ModelGraph, pieces: &[VertexSet]) -> Result<()> {
    let mut owner = vec![usize::MAX; g.len()];
    for (i, p) in pieces.iter().enumerate() {
        if p.is_empty() {
            return Err(Error::InvalidPieceChain(format!("piece {i} is empty")));
        }
        for v in p.iter() {
            if v >= g.len() {
                return Err(Error::InvalidPieceChain(format!(
                    "piece {i} references unknown vertex"
                )));
            }
            if owner[v] != usize::MAX {
                return Err(Error::InvalidPieceChain(format!(
                    "layer {} appears in pieces {} and {i}",
                    g.id_of(v),
                    owner[v]
                )));
            }
            owner[v] = i;
        }
    }
    if let Some(v) = owner.iter().position(|&o| o == usize::MAX) {
        return Err(Error::InvalidPieceChain(format!(
            "layer {} is not in any piece",
            g.id_of(v)
        )));
    }
    for u in 0..g.len() {
        for &v in g.succs(u) {
            if owner[v] < owner[u] {
                return Err(Error::InvalidPieceChain(format!(
                    "edge {} -> {} runs backwards",
                    g.id_of(u),
                    g.id_of(v)
                )));
            }
        }
    }
    Ok(())
}
