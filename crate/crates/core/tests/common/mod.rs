#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use pico_core::cost::{piece_redundancy, Cluster, DeviceSpec};
use pico_core::graph::{self, is_ending_piece, LayerKind, LayerSpec, ModelGraph, Shape};
use pico_core::partition::{partition, PieceChain};
use pico_core::vertex_set::VertexSet;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn load_model(name: &str) -> ModelGraph {
    let text = std::fs::read(fixture(name)).unwrap();
    graph::parse_model(&text).unwrap()
}

pub fn uniform_cluster(n: usize, flops: f64, bandwidth: f64) -> Cluster {
    let devices = (0..n)
        .map(|i| DeviceSpec::new(format!("d{i}"), flops))
        .collect();
    Cluster::new(devices, bandwidth).unwrap()
}

/// Input, then `layers` randomly sized conv/pool layers in a line (a conv
/// first, so there is always work), then output.
pub fn random_chain_model<R: Rng>(rng: &mut R, layers: usize) -> ModelGraph {
    let channels = rng.gen_range(1..=4);
    let mut height = rng.gen_range(12..=40);
    let width = rng.gen_range(8..=32);
    let input = Shape {
        channels,
        height,
        width,
    };
    let mut specs = vec![LayerSpec::connector(0, LayerKind::Input)];
    let mut c = channels;
    for i in 1..=layers as i64 {
        if i > 1 && height >= 8 && rng.gen_bool(0.2) {
            specs.push(LayerSpec::pool(i, (2, 2), (2, 2), (0, 0)));
            height /= 2;
        } else {
            let k = [1, 3, 3, 5][rng.gen_range(0..4)];
            let out = rng.gen_range(1..=8);
            specs.push(LayerSpec::conv(i, (k, k), (1, 1), (k / 2, k / 2), c, out));
            c = out;
        }
    }
    let last = layers as i64 + 1;
    specs.push(LayerSpec::connector(last, LayerKind::Output));
    let edges: Vec<(i64, i64)> = (0..last).map(|i| (i, i + 1)).collect();
    ModelGraph::build("random", input, specs, &edges).unwrap()
}

pub fn random_chain<R: Rng>(rng: &mut R, max_pieces: usize) -> PieceChain {
    let layers = rng.gen_range(1..=max_pieces);
    let g = random_chain_model(rng, layers);
    let result = partition(&g, 5).unwrap();
    PieceChain::from_partition(g, 5, result).unwrap()
}

/// Random DAG with `n` vertices: a single input at 0, same-size 3×3/1×1
/// convs, adds where several edges meet, and one output joining every sink.
pub fn random_dag<R: Rng>(rng: &mut R, n: usize, edge_p: f64) -> ModelGraph {
    let c = 2;
    let input = Shape {
        channels: c,
        height: 16,
        width: 8,
    };
    let inner = n.saturating_sub(2).max(1);
    let mut preds: Vec<Vec<i64>> = vec![Vec::new()];
    for v in 1..=inner {
        let mut p: Vec<i64> = (0..v as i64).filter(|_| rng.gen_bool(edge_p)).collect();
        if p.is_empty() {
            p.push(rng.gen_range(0..v as i64));
        }
        preds.push(p);
    }
    let mut specs = vec![LayerSpec::connector(0, LayerKind::Input)];
    for (v, p) in preds.iter().enumerate().skip(1) {
        let id = v as i64;
        if p.len() > 1 {
            specs.push(LayerSpec::connector(id, LayerKind::Add));
        } else {
            let k = if rng.gen_bool(0.7) { 3 } else { 1 };
            specs.push(LayerSpec::conv(id, (k, k), (1, 1), (k / 2, k / 2), c, c));
        }
    }
    let mut edges: Vec<(i64, i64)> = Vec::new();
    for (v, p) in preds.iter().enumerate() {
        for &u in p {
            edges.push((u, v as i64));
        }
    }
    let out = inner as i64 + 1;
    let sinks: Vec<i64> = (0..=inner as i64)
        .filter(|v| !edges.iter().any(|&(u, _)| u == *v))
        .collect();
    if sinks.len() == 1 {
        edges.push((sinks[0], out));
    } else {
        specs.push(LayerSpec::connector(out, LayerKind::Add));
        for &s in &sinks {
            edges.push((s, out));
        }
    }
    let last = if sinks.len() == 1 { out } else { out + 1 };
    if last != out {
        edges.push((out, last));
    }
    specs.push(LayerSpec::connector(last, LayerKind::Output));
    ModelGraph::build("dag", input, specs, &edges).unwrap()
}

/// Every subset of `view`, as sets.
pub fn subsets(view: &VertexSet) -> Vec<VertexSet> {
    let members = view.to_vec();
    (1u64..(1 << members.len()))
        .map(|mask| {
            members
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &v)| v)
                .collect()
        })
        .collect()
}

/// Ending pieces by exhaustive subset enumeration.
pub fn brute_ending_pieces(
    g: &ModelGraph,
    view: &VertexSet,
    forced: &VertexSet,
    d: usize,
) -> Vec<VertexSet> {
    let mut out: Vec<VertexSet> = subsets(view)
        .into_iter()
        .filter(|s| {
            s == view
                || (forced.is_subset(s)
                    && is_ending_piece(s, view, g)
                    && graph::diameter(s, g).unwrap() <= d)
        })
        .collect();
    out.sort();
    out
}

/// Vertices of `rest` with an edge into `removed`.
pub fn forced_after(g: &ModelGraph, rest: &VertexSet, removed: &VertexSet) -> VertexSet {
    rest.iter()
        .filter(|&v| g.succs(v).iter().any(|w| removed.contains(*w)))
        .collect()
}

/// Minimal largest piece redundancy over every valid chain of ending pieces.
pub fn brute_partition_objective(g: &ModelGraph, d: usize) -> f64 {
    fn go(
        g: &ModelGraph,
        view: &VertexSet,
        forced: &VertexSet,
        d: usize,
        memo: &mut HashMap<(VertexSet, VertexSet), f64>,
    ) -> f64 {
        if view.is_empty() {
            return 0.0;
        }
        let key = (view.clone(), forced.clone());
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let mut best = f64::INFINITY;
        for m in brute_ending_pieces(g, view, forced, d) {
            let rest = view.difference(&m);
            let f = forced_after(g, &rest, &m);
            let c = piece_redundancy(&m, g).unwrap();
            best = best.min(c.max(go(g, &rest, &f, d, memo)));
        }
        memo.insert(key, best);
        best
    }
    go(g, &g.all(), &VertexSet::new(), d, &mut HashMap::new())
}

/// Receptive extent of one output pixel of the piece's sinks, found by marking
/// every input pixel touched on an unbounded grid.
pub fn brute_receptive(piece: &VertexSet, g: &ModelGraph) -> (usize, usize) {
    let order = g.topo_within(piece);
    let mut best = (1, 1);
    for &sink in &order {
        let is_sink = g.succs(sink).is_empty() || g.succs(sink).iter().any(|w| !piece.contains(*w));
        if !is_sink {
            continue;
        }
        let mut marks: HashMap<usize, BTreeSet<(i64, i64)>> = HashMap::new();
        marks.insert(sink, BTreeSet::from([(0, 0)]));
        for &v in order.iter().rev() {
            let Some(out) = marks.get(&v).cloned() else {
                continue;
            };
            let l = g.layer(v);
            let touched: BTreeSet<(i64, i64)> = if l.kind.is_windowed() {
                let (kh, kw) = (l.kernel.0 as i64, l.kernel.1 as i64);
                let (sh, sw) = (l.stride.0 as i64, l.stride.1 as i64);
                let (ph, pw) = (l.padding.0 as i64, l.padding.1 as i64);
                out.iter()
                    .flat_map(|&(r, c)| {
                        (0..kh).flat_map(move |a| {
                            (0..kw).map(move |b| (r * sh - ph + a, c * sw - pw + b))
                        })
                    })
                    .collect()
            } else {
                out
            };
            let external =
                l.kind == LayerKind::Input || g.preds(v).iter().any(|u| !piece.contains(*u));
            if external {
                let span = |f: fn(&(i64, i64)) -> i64| {
                    let lo = touched.iter().map(f).min().unwrap();
                    let hi = touched.iter().map(f).max().unwrap();
                    (hi - lo + 1) as usize
                };
                best = (best.0.max(span(|p| p.0)), best.1.max(span(|p| p.1)));
            }
            for &u in g.preds(v) {
                if piece.contains(u) {
                    marks.entry(u).or_default().extend(touched.iter().copied());
                }
            }
        }
    }
    best
}
