//! Declarative CNN graphs: parsing, validation, ordering and the structural
//! queries the partitioner relies on (width, diameter, ending pieces).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vertex_set::VertexSet;

/// Diameter reported for pieces whose induced subgraph is disconnected.
pub const INFINITE_DIAMETER: usize = usize::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Pool,
    Add,
    Concat,
    Input,
    Output,
}

impl LayerKind {
    /// Conv and pool layers own a sliding window.
    pub fn is_windowed(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::Pool)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// One vertex of the model graph. Connectors and pseudo-layers carry a unit
/// window (kernel 1, stride 1, no padding).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub id: i64,
    pub kind: LayerKind,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub in_channels: Option<usize>,
    pub out_channels: Option<usize>,
}

impl LayerSpec {
    pub fn connector(id: i64, kind: LayerKind) -> Self {
        LayerSpec {
            id,
            kind,
            kernel: (1, 1),
            stride: (1, 1),
            padding: (0, 0),
            in_channels: None,
            out_channels: None,
        }
    }

    pub fn conv(
        id: i64,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        LayerSpec {
            id,
            kind: LayerKind::Conv,
            kernel,
            stride,
            padding,
            in_channels: Some(in_channels),
            out_channels: Some(out_channels),
        }
    }

    pub fn pool(
        id: i64,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Self {
        LayerSpec {
            id,
            kind: LayerKind::Pool,
            kernel,
            stride,
            padding,
            in_channels: None,
            out_channels: None,
        }
    }
}

/// On-disk model description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: String,
    pub input: InputFile,
    pub layers: Vec<LayerFile>,
    pub edges: Vec<[i64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFile {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub id: i64,
    #[serde(rename = "type")]
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
}

/// A validated CNN DAG. Layers are stored densely, sorted by id; every
/// vertex-level API works with these dense indices.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    name: String,
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    index_of: HashMap<i64, usize>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    topo: Vec<usize>,
    out_shapes: Vec<Shape>,
    /// All-pairs undirected hop distance (u16::MAX when unreachable).
    undirected_dist: Vec<Vec<u16>>,
}

pub fn parse_model(text: &[u8]) -> Result<ModelGraph> {
    let file: ModelFile = serde_json::from_slice(text).map_err(|e| Error::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    ModelGraph::from_file(&file)
}

fn layer_from_file(l: &LayerFile) -> Result<LayerSpec> {
    if l.id < 0 {
        return Err(Error::InvalidLayer {
            layer: l.id,
            message: "id must be non-negative".into(),
        });
    }
    let pair = |v: Option<[usize; 2]>, field: &'static str| {
        v.map(|[a, b]| (a, b))
            .ok_or(Error::MissingField { layer: l.id, field })
    };
    match l.kind {
        LayerKind::Conv | LayerKind::Pool => {
            let kernel = pair(l.kernel, "kernel")?;
            let stride = pair(l.stride, "stride")?;
            let padding = pair(l.padding, "padding")?;
            if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                return Err(Error::InvalidLayer {
                    layer: l.id,
                    message: "kernel and stride must be at least 1".into(),
                });
            }
            if l.kind == LayerKind::Pool {
                if stride.0 > kernel.0 || stride.1 > kernel.1 {
                    return Err(Error::InvalidLayer {
                        layer: l.id,
                        message: "pool stride exceeds kernel".into(),
                    });
                }
                if l.in_channels.is_some() || l.out_channels.is_some() {
                    return Err(Error::InvalidLayer {
                        layer: l.id,
                        message: "pool layers take no channel counts".into(),
                    });
                }
                return Ok(LayerSpec::pool(l.id, kernel, stride, padding));
            }
            let cin = l.in_channels.ok_or(Error::MissingField {
                layer: l.id,
                field: "in_channels",
            })?;
            let cout = l.out_channels.ok_or(Error::MissingField {
                layer: l.id,
                field: "out_channels",
            })?;
            if cin == 0 || cout == 0 {
                return Err(Error::InvalidLayer {
                    layer: l.id,
                    message: "channel counts must be at least 1".into(),
                });
            }
            Ok(LayerSpec::conv(l.id, kernel, stride, padding, cin, cout))
        }
        kind => {
            if l.kernel.is_some()
                || l.stride.is_some()
                || l.padding.is_some()
                || l.in_channels.is_some()
                || l.out_channels.is_some()
            {
                return Err(Error::InvalidLayer {
                    layer: l.id,
                    message: format!("{kind:?} layers take no window or channel fields"),
                });
            }
            Ok(LayerSpec::connector(l.id, kind))
        }
    }
}

/// Output extent of a sliding window along one axis, if the input is large enough.
pub(crate) fn window_out(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

impl ModelGraph {
    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let mut specs = file
            .layers
            .iter()
            .map(layer_from_file)
            .collect::<Result<Vec<_>>>()?;
        specs.sort_by_key(|l| l.id);
        let edges = file.edges.iter().map(|&[a, b]| (a, b)).collect::<Vec<_>>();
        let input = Shape {
            channels: file.input.channels,
            height: file.input.height,
            width: file.input.width,
        };
        Self::build(file.name.clone(), input, specs, &edges)
    }

    /// Builds and validates a graph from layers and `(from_id, to_id)` edges.
    pub fn build(
        name: impl Into<String>,
        input_shape: Shape,
        mut layers: Vec<LayerSpec>,
        edges: &[(i64, i64)],
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyModel);
        }
        if input_shape.channels == 0 || input_shape.height == 0 || input_shape.width == 0 {
            return Err(Error::InvalidFile(
                "input dimensions must be positive".into(),
            ));
        }
        layers.sort_by_key(|l| l.id);
        let mut index_of = HashMap::new();
        for (i, l) in layers.iter().enumerate() {
            if index_of.insert(l.id, i).is_some() {
                return Err(Error::DuplicateLayer(l.id));
            }
        }
        let n = layers.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for &(a, b) in edges {
            let (Some(&u), Some(&v)) = (index_of.get(&a), index_of.get(&b)) else {
                return Err(Error::DanglingEdge { from: a, to: b });
            };
            if u == v {
                return Err(Error::Cycle(a));
            }
            if !succs[u].contains(&v) {
                succs[u].push(v);
                preds[v].push(u);
            }
        }
        for l in preds.iter_mut().chain(succs.iter_mut()) {
            l.sort_unstable();
        }

        let inputs: Vec<usize> = (0..n)
            .filter(|&i| layers[i].kind == LayerKind::Input)
            .collect();
        if inputs.len() != 1 {
            return Err(Error::InputCount(inputs.len()));
        }
        for i in 0..n {
            let is_input = layers[i].kind == LayerKind::Input;
            if is_input && !preds[i].is_empty() {
                return Err(Error::InvalidLayer {
                    layer: layers[i].id,
                    message: "input layer cannot have incoming edges".into(),
                });
            }
            if !is_input && preds[i].is_empty() {
                return Err(Error::InvalidLayer {
                    layer: layers[i].id,
                    message: "layer has no inputs (only the input layer may be a source)".into(),
                });
            }
            if layers[i].kind.is_windowed() && preds[i].len() != 1 {
                return Err(Error::InvalidLayer {
                    layer: layers[i].id,
                    message: "conv and pool layers take exactly one input".into(),
                });
            }
        }

        // Kahn's algorithm, smallest id first.
        let mut indeg: Vec<usize> = preds.iter().map(Vec::len).collect();
        let mut heap: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(Reverse(u)) = heap.pop() {
            topo.push(u);
            for &v in &succs[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    heap.push(Reverse(v));
                }
            }
        }
        if topo.len() != n {
            let stuck = (0..n).find(|&i| indeg[i] > 0).unwrap();
            return Err(Error::Cycle(layers[stuck].id));
        }

        let mut out_shapes = vec![input_shape; n];
        for &v in &topo {
            let l = &layers[v];
            let ins: Vec<Shape> = preds[v].iter().map(|&u| out_shapes[u]).collect();
            out_shapes[v] =
                match l.kind {
                    LayerKind::Input => input_shape,
                    LayerKind::Conv | LayerKind::Pool => {
                        let s = ins[0];
                        let channels = match l.kind {
                            LayerKind::Conv => {
                                let cin = l.in_channels.unwrap_or(0);
                                if cin != s.channels {
                                    return Err(Error::ShapeMismatch {
                                        layer: l.id,
                                        message: format!(
                                            "expects {cin} input channels, receives {}",
                                            s.channels
                                        ),
                                    });
                                }
                                l.out_channels.unwrap_or(0)
                            }
                            _ => s.channels,
                        };
                        let height = window_out(s.height, l.kernel.0, l.stride.0, l.padding.0)
                            .ok_or(Error::KernelTooLarge {
                                layer: l.id,
                                input: s.height,
                                kernel: l.kernel.0,
                            })?;
                        let width = window_out(s.width, l.kernel.1, l.stride.1, l.padding.1)
                            .ok_or(Error::KernelTooLarge {
                                layer: l.id,
                                input: s.width,
                                kernel: l.kernel.1,
                            })?;
                        Shape {
                            channels,
                            height,
                            width,
                        }
                    }
                    LayerKind::Add | LayerKind::Output => {
                        if ins.iter().any(|s| *s != ins[0]) {
                            return Err(Error::ShapeMismatch {
                                layer: l.id,
                                message: format!("inputs disagree: {ins:?}"),
                            });
                        }
                        ins[0]
                    }
                    LayerKind::Concat => {
                        if ins
                            .iter()
                            .any(|s| (s.height, s.width) != (ins[0].height, ins[0].width))
                        {
                            return Err(Error::ShapeMismatch {
                                layer: l.id,
                                message: format!("spatial shapes disagree: {ins:?}"),
                            });
                        }
                        Shape {
                            channels: ins.iter().map(|s| s.channels).sum(),
                            ..ins[0]
                        }
                    }
                };
        }

        let undirected_dist = all_pairs_undirected(&preds, &succs);
        Ok(ModelGraph {
            name: name.into(),
            input_shape,
            layers,
            index_of,
            preds,
            succs,
            topo,
            out_shapes,
            undirected_dist,
        })
    }

    pub fn to_file(&self) -> ModelFile {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let windowed = l.kind.is_windowed();
                LayerFile {
                    id: l.id,
                    kind: l.kind,
                    kernel: windowed.then_some([l.kernel.0, l.kernel.1]),
                    stride: windowed.then_some([l.stride.0, l.stride.1]),
                    padding: windowed.then_some([l.padding.0, l.padding.1]),
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                }
            })
            .collect();
        let mut edges = Vec::new();
        for u in 0..self.len() {
            for &v in &self.succs[u] {
                edges.push([self.layers[u].id, self.layers[v].id]);
            }
        }
        ModelFile {
            name: self.name.clone(),
            input: InputFile {
                channels: self.input_shape.channels,
                height: self.input_shape.height,
                width: self.input_shape.width,
            },
            layers,
            edges,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, v: usize) -> &LayerSpec {
        &self.layers[v]
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn index_of(&self, id: i64) -> Option<usize> {
        self.index_of.get(&id).copied()
    }

    pub fn id_of(&self, v: usize) -> i64 {
        self.layers[v].id
    }

    pub fn preds(&self, v: usize) -> &[usize] {
        &self.preds[v]
    }

    pub fn succs(&self, v: usize) -> &[usize] {
        &self.succs[v]
    }

    pub fn edge_count(&self) -> usize {
        self.succs.iter().map(Vec::len).sum()
    }

    /// Full-map output shape of a layer.
    pub fn out_shape(&self, v: usize) -> Shape {
        self.out_shapes[v]
    }

    /// Full-map shape of the tensor a windowed layer consumes.
    pub fn in_shape(&self, v: usize) -> Shape {
        match self.preds[v].first() {
            Some(&u) => self.out_shapes[u],
            None => self.input_shape,
        }
    }

    pub fn all(&self) -> VertexSet {
        VertexSet::full(self.len())
    }

    /// Dense indices in topological order.
    pub fn topo(&self) -> &[usize] {
        &self.topo
    }

    pub fn input_index(&self) -> usize {
        self.topo[0]
    }

    pub fn windowed_count(&self) -> usize {
        self.layers.iter().filter(|l| l.kind.is_windowed()).count()
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.kind == LayerKind::Conv)
            .count()
    }

    /// Undirected hop distance in the whole graph, `None` if unreachable.
    pub fn undirected_distance(&self, u: usize, v: usize) -> Option<usize> {
        let d = self.undirected_dist[u][v];
        (d != u16::MAX).then_some(d as usize)
    }

    /// Members of `segment` that feed a layer outside it, or that have no successors.
    pub fn sinks_of(&self, segment: &VertexSet) -> Vec<usize> {
        segment
            .iter()
            .filter(|&v| {
                self.succs[v].is_empty() || self.succs[v].iter().any(|&w| !segment.contains(w))
            })
            .collect()
    }

    /// Members of `segment` fed from outside it, plus the input layer if present.
    pub fn sources_of(&self, segment: &VertexSet) -> Vec<usize> {
        segment
            .iter()
            .filter(|&v| {
                self.preds[v].is_empty() || self.preds[v].iter().any(|&u| !segment.contains(u))
            })
            .collect()
    }

    /// Members of `segment` in topological order.
    pub fn topo_within(&self, segment: &VertexSet) -> Vec<usize> {
        self.topo
            .iter()
            .copied()
            .filter(|&v| segment.contains(v))
            .collect()
    }
}

fn all_pairs_undirected(preds: &[Vec<usize>], succs: &[Vec<usize>]) -> Vec<Vec<u16>> {
    let n = preds.len();
    let mut out = vec![vec![u16::MAX; n]; n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        let row = &mut out[s];
        row[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            let d = row[u];
            for &w in preds[u].iter().chain(succs[u].iter()) {
                if row[w] == u16::MAX {
                    row[w] = d + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    out
}

/// Layer ids in topological order, ties broken by ascending id.
pub fn topological_order(g: &ModelGraph) -> Vec<i64> {
    g.topo().iter().map(|&v| g.id_of(v)).collect()
}

/// Maximum antichain among conv/pool layers under reachability, computed as
/// the minimum path cover of the transitive closure (Dilworth).
pub fn width(g: &ModelGraph) -> usize {
    let n = g.len();
    let mut reach = vec![VertexSet::new(); n];
    for &v in g.topo().iter().rev() {
        let mut r = VertexSet::new();
        for &w in g.succs(v) {
            r.insert(w);
            r = r.union(&reach[w]);
        }
        reach[v] = r;
    }
    let nodes: Vec<usize> = (0..n).filter(|&v| g.layer(v).kind.is_windowed()).collect();
    let pos: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let adj: Vec<Vec<usize>> = nodes
        .iter()
        .map(|&u| {
            reach[u]
                .iter()
                .filter_map(|w| pos.get(&w).copied())
                .collect()
        })
        .collect();

    // Kuhn's augmenting paths on the bipartite split of the closure.
    let k = nodes.len();
    let mut match_right: Vec<Option<usize>> = vec![None; k];
    fn augment(
        u: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        match_right: &mut [Option<usize>],
    ) -> bool {
        for &w in &adj[u] {
            if seen[w] {
                continue;
            }
            seen[w] = true;
            if match_right[w].is_none_or(|m| augment(m, adj, seen, match_right)) {
                match_right[w] = Some(u);
                return true;
            }
        }
        false
    }
    let mut matching = 0;
    for u in 0..k {
        let mut seen = vec![false; k];
        if augment(u, &adj, &mut seen, &mut match_right) {
            matching += 1;
        }
    }
    k - matching
}

/// Greatest shortest-path distance between members of `piece` inside its
/// induced undirected subgraph; [`INFINITE_DIAMETER`] when disconnected.
pub fn diameter(piece: &VertexSet, g: &ModelGraph) -> Result<usize> {
    if piece.is_empty() {
        return Err(Error::EmptyPiece);
    }
    let members = piece.to_vec();
    let mut best = 0;
    let mut dist: BTreeMap<usize, usize> = BTreeMap::new();
    let mut queue = VecDeque::new();
    for &s in &members {
        dist.clear();
        dist.insert(s, 0);
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for &w in g.preds(u).iter().chain(g.succs(u)) {
                if piece.contains(w) && !dist.contains_key(&w) {
                    dist.insert(w, d + 1);
                    queue.push_back(w);
                }
            }
        }
        if dist.len() < members.len() {
            return Ok(INFINITE_DIAMETER);
        }
        best = best.max(dist.values().copied().max().unwrap_or(0));
    }
    Ok(best)
}

/// Whether `set` is closed under successors inside `view`.
pub fn is_ending_piece(set: &VertexSet, view: &VertexSet, g: &ModelGraph) -> bool {
    set.is_subset(view)
        && set.iter().all(|u| {
            g.succs(u)
                .iter()
                .all(|&v| !view.contains(v) || set.contains(v))
        })
}

/// Every non-empty ending piece of `view` that contains `forced` and has
/// diameter at most `max_diameter`, plus `view` itself unconditionally.
/// Returned in canonical order.
pub fn enumerate_ending_pieces(
    view: &VertexSet,
    g: &ModelGraph,
    forced: &VertexSet,
    max_diameter: usize,
) -> Vec<VertexSet> {
    let mut out = Vec::new();
    if view.is_empty() {
        return out;
    }

    // Successor closure of the forced set within the view.
    let mut base = forced.intersection(view);
    let mut stack: Vec<usize> = base.to_vec();
    while let Some(u) = stack.pop() {
        for &v in g.succs(u) {
            if view.contains(v) && !base.contains(v) {
                base.insert(v);
                stack.push(v);
            }
        }
    }

    let within = |a: usize, b: usize| {
        g.undirected_distance(a, b)
            .is_some_and(|d| d <= max_diameter)
    };
    let base_members = base.to_vec();
    let base_ok = base_members
        .iter()
        .enumerate()
        .all(|(i, &a)| base_members[i + 1..].iter().all(|&b| within(a, b)));

    if base_ok {
        let order: Vec<usize> = g
            .topo()
            .iter()
            .rev()
            .copied()
            .filter(|&v| view.contains(v))
            .collect();
        let mut current = base.clone();
        let mut members = base_members;
        let mut ctx = EnumCtx {
            g,
            view,
            base: &base,
            order: &order,
            max_diameter,
            out: &mut out,
        };
        ctx.descend(0, &mut current, &mut members);
    }

    if !out.iter().any(|s| s == view) {
        out.push(view.clone());
    }
    out.sort();
    out.dedup();
    out
}

struct EnumCtx<'a> {
    g: &'a ModelGraph,
    view: &'a VertexSet,
    base: &'a VertexSet,
    order: &'a [usize],
    max_diameter: usize,
    out: &'a mut Vec<VertexSet>,
}

impl EnumCtx<'_> {
    fn descend(&mut self, i: usize, current: &mut VertexSet, members: &mut Vec<usize>) {
        if i == self.order.len() {
            if !current.is_empty()
                && diameter(current, self.g).is_ok_and(|d| d <= self.max_diameter)
            {
                self.out.push(current.clone());
            }
            return;
        }
        let v = self.order[i];
        if self.base.contains(v) {
            self.descend(i + 1, current, members);
            return;
        }
        let closed = self
            .g
            .succs(v)
            .iter()
            .all(|&w| !self.view.contains(w) || current.contains(w));
        let near = members.iter().all(|&u| {
            self.g
                .undirected_distance(u, v)
                .is_some_and(|d| d <= self.max_diameter)
        });
        if closed && near {
            current.insert(v);
            members.push(v);
            self.descend(i + 1, current, members);
            members.pop();
            current.remove(v);
        }
        self.descend(i + 1, current, members);
    }
}
