//! Feature-region propagation and the closed-form cost of running a segment
//! on a group of devices with height strips.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{LayerKind, LayerSpec, ModelGraph, Shape};
use crate::vertex_set::VertexSet;

/// A horizontal strip of a feature map: full width, `rows` rows starting at `row_start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub channels: usize,
    pub row_start: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Region {
    pub fn new(channels: usize, row_start: usize, rows: usize, cols: usize) -> Self {
        Region {
            channels,
            row_start,
            rows,
            cols,
        }
    }

    pub fn full(shape: Shape) -> Self {
        Region::new(shape.channels, 0, shape.height, shape.width)
    }

    pub fn row_end(&self) -> usize {
        self.row_start + self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn elements(&self) -> u64 {
        (self.channels * self.rows * self.cols) as u64
    }

    /// Smallest strip containing both row spans; an empty side is ignored.
    pub fn hull(&self, other: &Region) -> Region {
        if self.is_empty() {
            return *other;
        }
        if other.is_empty() {
            return *self;
        }
        let start = self.row_start.min(other.row_start);
        let end = self.row_end().max(other.row_end());
        Region::new(self.channels, start, end - start, self.cols.max(other.cols))
    }

    pub fn contains_rows(&self, other: &Region) -> bool {
        other.is_empty() || (self.row_start <= other.row_start && other.row_end() <= self.row_end())
    }
}

/// How padding is applied when a windowed layer runs on a strip.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PaddingMode {
    /// The layer runs on the sub-tensor with its configured padding on every
    /// edge, as a framework executing the layer on a slice would.
    #[default]
    Framework,
    /// Zero padding only at the true borders of the full map.
    BorderOnly,
}

/// Identifies a tensor entering a segment from outside.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    /// The network input frame.
    Image,
    /// Output of a layer outside the segment.
    Layer(usize),
}

/// Required and actual extents of every layer of a segment for one output strip.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegionMap {
    /// Rows each layer must output so that the sink strips are correct.
    pub required_out: BTreeMap<usize, Region>,
    /// Rows each layer computes when fed the required external inputs.
    pub actual_out: BTreeMap<usize, Region>,
    /// Required extent of every external tensor, keyed by producer.
    pub inputs: BTreeMap<Source, Region>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceSpec {
    pub name: String,
    /// FLOP/s.
    pub capacity_flops: f64,
    pub alpha: f64,
}

impl DeviceSpec {
    pub fn new(name: impl Into<String>, capacity_flops: f64) -> Self {
        DeviceSpec {
            name: name.into(),
            capacity_flops,
            alpha: 1.0,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Effective throughput, capacity divided by the regression coefficient.
    pub fn speed(&self) -> f64 {
        self.capacity_flops / self.alpha
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub devices: Vec<DeviceSpec>,
    pub bandwidth_bytes_per_s: f64,
    pub bytes_per_element: usize,
}

impl Cluster {
    pub fn new(devices: Vec<DeviceSpec>, bandwidth_bytes_per_s: f64) -> Result<Self> {
        let c = Cluster {
            devices,
            bandwidth_bytes_per_s,
            bytes_per_element: 4,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::InvalidCluster("cluster has no devices".into()));
        }
        if !(self.bandwidth_bytes_per_s > 0.0 && self.bandwidth_bytes_per_s.is_finite()) {
            return Err(Error::NonPositiveCapacity("bandwidth".into()));
        }
        if self.bytes_per_element == 0 {
            return Err(Error::InvalidCluster(
                "bytes_per_element must be positive".into(),
            ));
        }
        let mut names = std::collections::HashSet::new();
        for d in &self.devices {
            if !(d.capacity_flops > 0.0 && d.capacity_flops.is_finite()) {
                return Err(Error::NonPositiveCapacity(d.name.clone()));
            }
            if !(d.alpha > 0.0 && d.alpha.is_finite()) {
                return Err(Error::InvalidCluster(format!(
                    "device {} has non-positive alpha",
                    d.name
                )));
            }
            if !names.insert(d.name.as_str()) {
                return Err(Error::InvalidCluster(format!(
                    "duplicate device name {}",
                    d.name
                )));
            }
        }
        Ok(())
    }

    pub fn device(&self, name: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.name == name)
    }

    pub fn is_uniform(&self) -> bool {
        self.devices.iter().all(|d| {
            d.capacity_flops == self.devices[0].capacity_flops && d.alpha == self.devices[0].alpha
        })
    }
}

/// Output rows `[start, end)` of a stage over its reference height.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Strip {
    pub start: usize,
    pub end: usize,
}

impl Strip {
    pub fn new(start: usize, end: usize) -> Self {
        Strip { start, end }
    }

    pub fn rows(&self) -> usize {
        self.end - self.start
    }
}

/// `m` contiguous strips of near-equal height (`floor(i·h/m)` boundaries).
pub fn equal_strips(h: usize, m: usize) -> Vec<Strip> {
    (0..m)
        .map(|i| Strip::new(i * h / m, (i + 1) * h / m))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeviceCost {
    pub name: String,
    pub flops: f64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub t_comp: f64,
    pub t_comm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostBreakdown {
    pub devices: Vec<DeviceCost>,
    /// Bytes the master receives from the previous stage.
    pub transfer_in_bytes: u64,
    pub transfer_in_s: f64,
    pub stage_compute_s: f64,
    pub stage_comm_s: f64,
    pub stage_total_s: f64,
    pub redundant_flops: f64,
    pub total_flops: f64,
}

pub fn required_input_region(layer: &LayerSpec, out: &Region, in_shape: Shape) -> Result<Region> {
    if out.is_empty() {
        return Err(Error::EmptyRegion);
    }
    match layer.kind {
        LayerKind::Conv | LayerKind::Pool => {
            let (k, s, p) = (layer.kernel.0, layer.stride.0, layer.padding.0);
            let h = in_shape.height;
            // Hull of the rows actually touched: skip leading windows that lie
            // wholly in the top padding and trailing ones that start past the map.
            let first = out.row_start.max(if p >= k { (p - k) / s + 1 } else { 0 });
            let last = (out.row_end() - 1).min((p + h - 1) / s);
            if first > last {
                return Ok(Region::new(
                    layer.in_channels.unwrap_or(in_shape.channels),
                    0,
                    0,
                    in_shape.width,
                ));
            }
            let lo = (first * s).saturating_sub(p).min(h);
            let hi = (last * s + k).saturating_sub(p).min(h);
            let channels = layer.in_channels.unwrap_or(in_shape.channels);
            Ok(Region::new(
                channels,
                lo,
                hi.saturating_sub(lo),
                in_shape.width,
            ))
        }
        _ => Ok(Region::new(
            in_shape.channels,
            out.row_start,
            out.rows,
            in_shape.width,
        )),
    }
}

/// Unclamped window extent along one axis: `(out-1)·s + k`.
pub fn required_input_extent(out: usize, kernel: usize, stride: usize) -> usize {
    if out == 0 {
        0
    } else {
        (out - 1) * stride + kernel
    }
}

/// Number of outputs a window produces along one axis, `None` if the kernel does not fit.
pub fn forward_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    pad_total: usize,
) -> Option<usize> {
    let padded = input + pad_total;
    (input > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// Rows a windowed layer produces from input rows `input`, positioned on the
/// full output map of height `out_height`.
pub fn forward_output_region(
    layer: &LayerSpec,
    input: &Region,
    in_height: usize,
    out_height: usize,
    mode: PaddingMode,
) -> Result<Region> {
    if input.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let (k, s, p) = (layer.kernel.0, layer.stride.0, layer.padding.0);
    let (a, b) = (input.row_start, input.row_end());
    let (pad_total, start) = match mode {
        PaddingMode::Framework => (2 * p, a / s),
        PaddingMode::BorderOnly => {
            let top = if a == 0 { p } else { 0 };
            let bottom = if b >= in_height { p } else { 0 };
            let start = if a == 0 { 0 } else { (a + p).div_ceil(s) };
            (top + bottom, start)
        }
    };
    let count = forward_extent(b - a, k, s, pad_total).ok_or(Error::KernelTooLarge {
        layer: layer.id,
        input: b - a,
        kernel: k,
    })?;
    let end = (start + count).min(out_height);
    let channels = match layer.kind {
        LayerKind::Conv => layer.out_channels.unwrap_or(input.channels),
        _ => input.channels,
    };
    let cols = forward_extent(
        input.cols,
        layer.kernel.1,
        layer.stride.1,
        2 * layer.padding.1,
    )
    .unwrap_or(0);
    Ok(Region::new(
        channels,
        start.min(end),
        end.saturating_sub(start),
        cols,
    ))
}

/// Walks the segment in reverse topological order, taking the row hull of all
/// consumer demands at each layer. Every sink needs an entry in `sink_regions`
/// (possibly empty); layers left with no demand are omitted from the map.
pub fn propagate_required(
    segment: &VertexSet,
    g: &ModelGraph,
    sink_regions: &BTreeMap<usize, Region>,
) -> Result<RegionMap> {
    let order = g.topo_within(segment);
    let mut map = RegionMap::default();
    let mut required_in: BTreeMap<usize, Region> = BTreeMap::new();
    for &v in order.iter().rev() {
        let shape = g.out_shape(v);
        let mut demand = Region::new(shape.channels, 0, 0, shape.width);
        let is_sink = g.succs(v).is_empty() || g.succs(v).iter().any(|w| !segment.contains(*w));
        if is_sink {
            let r = sink_regions
                .get(&v)
                .ok_or(Error::MissingSinkRegion(g.id_of(v)))?;
            demand = demand.hull(r);
        }
        for &w in g.succs(v) {
            if let Some(r) = required_in.get(&w) {
                demand = demand.hull(&Region::new(
                    shape.channels,
                    r.row_start,
                    r.rows,
                    shape.width,
                ));
            }
        }
        if demand.is_empty() {
            continue;
        }
        let layer = g.layer(v);
        let input = required_input_region(layer, &demand, g.in_shape(v))?;
        map.required_out.insert(v, demand);
        required_in.insert(v, input);
        if layer.kind == LayerKind::Input {
            let e = map.inputs.entry(Source::Image).or_insert(input);
            *e = e.hull(&input);
        }
        for &u in g.preds(v) {
            if !segment.contains(u) {
                let src = g.out_shape(u);
                let r = Region::new(src.channels, input.row_start, input.rows, src.width);
                let e = map.inputs.entry(Source::Layer(u)).or_insert(r);
                *e = e.hull(&r);
            }
        }
    }
    Ok(map)
}

/// Forward pass from the external inputs. Layers in `only` (when given) are
/// the ones evaluated; the rest are skipped.
pub fn propagate_actual(
    segment: &VertexSet,
    g: &ModelGraph,
    source_inputs: &BTreeMap<Source, Region>,
    mode: PaddingMode,
    only: Option<&BTreeMap<usize, Region>>,
) -> Result<BTreeMap<usize, Region>> {
    let mut actual: BTreeMap<usize, Region> = BTreeMap::new();
    for v in g.topo_within(segment) {
        if only.is_some_and(|m| !m.contains_key(&v)) {
            continue;
        }
        let layer = g.layer(v);
        let mut ins = Vec::with_capacity(g.preds(v).len());
        if layer.kind == LayerKind::Input {
            let r = source_inputs
                .get(&Source::Image)
                .ok_or_else(|| Error::MissingSourceRegion("input image".into()))?;
            ins.push(*r);
        }
        for &u in g.preds(v) {
            let r = if segment.contains(u) {
                actual.get(&u).copied()
            } else {
                source_inputs.get(&Source::Layer(u)).copied()
            };
            ins.push(r.ok_or_else(|| Error::MissingSourceRegion(format!("layer {}", g.id_of(u))))?);
        }
        let out = match layer.kind {
            LayerKind::Conv | LayerKind::Pool => {
                let r = forward_output_region(
                    layer,
                    &ins[0],
                    g.in_shape(v).height,
                    g.out_shape(v).height,
                    mode,
                )?;
                Region {
                    cols: g.out_shape(v).width,
                    ..r
                }
            }
            LayerKind::Input => ins[0],
            LayerKind::Add | LayerKind::Output | LayerKind::Concat => {
                let start = ins.iter().map(|r| r.row_start).max().unwrap_or(0);
                let end = ins.iter().map(|r| r.row_end()).min().unwrap_or(0);
                if end < start {
                    return Err(Error::ShapeMismatch {
                        layer: layer.id,
                        message: "inputs cover disjoint rows".into(),
                    });
                }
                let channels = if layer.kind == LayerKind::Concat {
                    ins.iter().map(|r| r.channels).sum()
                } else {
                    ins[0].channels
                };
                Region::new(channels, start, end - start, g.out_shape(v).width)
            }
        };
        actual.insert(v, out);
    }
    Ok(actual)
}

/// Required regions for `sink_regions` followed by the forward pass that
/// realises them.
pub fn segment_regions(
    segment: &VertexSet,
    g: &ModelGraph,
    sink_regions: &BTreeMap<usize, Region>,
    mode: PaddingMode,
) -> Result<RegionMap> {
    let mut map = propagate_required(segment, g, sink_regions)?;
    map.actual_out = propagate_actual(segment, g, &map.inputs, mode, Some(&map.required_out))?;
    Ok(map)
}

pub fn layer_flops(layer: &LayerSpec, out: &Region) -> f64 {
    match layer.kind {
        LayerKind::Conv => {
            let cin = layer.in_channels.unwrap_or(0) as f64;
            let cout = layer.out_channels.unwrap_or(0) as f64;
            (layer.kernel.0 * layer.kernel.1) as f64
                * cin
                * out.rows as f64
                * out.cols as f64
                * cout
        }
        _ => 0.0,
    }
}

/// Sum of per-layer FLOPs over the actual regions of the segment.
pub fn segment_flops(segment: &VertexSet, g: &ModelGraph, actual: &BTreeMap<usize, Region>) -> f64 {
    actual
        .iter()
        .filter(|(v, _)| segment.contains(**v))
        .map(|(&v, r)| layer_flops(g.layer(v), r))
        .sum()
}

/// FLOPs of the segment computed on whole feature maps by one device.
pub fn unpartitioned_flops(segment: &VertexSet, g: &ModelGraph) -> f64 {
    segment
        .iter()
        .map(|v| layer_flops(g.layer(v), &Region::full(g.out_shape(v))))
        .sum()
}

pub fn compute_time(d: &DeviceSpec, flops: f64) -> Result<f64> {
    if d.capacity_flops.is_nan() || d.capacity_flops <= 0.0 {
        return Err(Error::NonPositiveCapacity(d.name.clone()));
    }
    Ok(d.alpha * flops / d.capacity_flops)
}

pub fn feature_bytes(r: &Region, bytes_per_element: usize) -> u64 {
    r.elements() * bytes_per_element as u64
}

pub fn comm_time(bytes_in: u64, bytes_out: u64, bandwidth: f64) -> f64 {
    (bytes_in + bytes_out) as f64 / bandwidth
}

/// Height the stage strips are expressed in: the tallest sink map.
pub fn reference_height(segment: &VertexSet, g: &ModelGraph) -> usize {
    g.sinks_of(segment)
        .into_iter()
        .map(|v| g.out_shape(v).height)
        .max()
        .unwrap_or(0)
}

/// Sink regions for a strip of the reference height, scaled to each sink's height.
pub fn sink_regions_for(
    segment: &VertexSet,
    g: &ModelGraph,
    strip: Strip,
    reference: usize,
) -> BTreeMap<usize, Region> {
    g.sinks_of(segment)
        .into_iter()
        .map(|v| {
            let s = g.out_shape(v);
            let a = strip.start * s.height / reference;
            let b = strip.end * s.height / reference;
            (v, Region::new(s.channels, a, b - a, s.width))
        })
        .collect()
}

fn check_strips(strips: &[Strip], h: usize) -> Result<()> {
    if strips.is_empty() {
        return Err(Error::InvalidStrips("no strips".into()));
    }
    let mut next = 0;
    for s in strips {
        if s.start != next || s.end <= s.start {
            return Err(Error::InvalidStrips(format!(
                "strip [{}, {}) does not continue the tiling at row {next}",
                s.start, s.end
            )));
        }
        next = s.end;
    }
    if next != h {
        return Err(Error::InvalidStrips(format!(
            "strips cover {next} of {h} rows"
        )));
    }
    Ok(())
}

/// Region maps of every device of a stage.
pub fn device_region_maps(
    segment: &VertexSet,
    g: &ModelGraph,
    strips: &[Strip],
) -> Result<Vec<RegionMap>> {
    let h = reference_height(segment, g);
    check_strips(strips, h)?;
    strips
        .iter()
        .map(|&s| {
            segment_regions(
                segment,
                g,
                &sink_regions_for(segment, g, s, h),
                PaddingMode::Framework,
            )
        })
        .collect()
}

/// Bytes the master receives from the previous stage: every external tensor in full.
pub fn stage_input_bytes(segment: &VertexSet, g: &ModelGraph, bytes_per_element: usize) -> u64 {
    let mut producers: Vec<usize> = Vec::new();
    for v in segment.iter() {
        for &u in g.preds(v) {
            if !segment.contains(u) && !producers.contains(&u) {
                producers.push(u);
            }
        }
    }
    producers
        .into_iter()
        .map(|u| feature_bytes(&Region::full(g.out_shape(u)), bytes_per_element))
        .sum()
}

/// Cost of one stage. `devices[0]` is the master; `strips[k]` is the output
/// strip of `devices[k]` over the segment's reference height.
pub fn stage_cost(
    segment: &VertexSet,
    g: &ModelGraph,
    devices: &[DeviceSpec],
    strips: &[Strip],
    bandwidth: f64,
    bytes_per_element: usize,
) -> Result<CostBreakdown> {
    if segment.is_empty() {
        return Err(Error::EmptyPiece);
    }
    if devices.len() != strips.len() {
        return Err(Error::InvalidStrips(format!(
            "{} devices but {} strips",
            devices.len(),
            strips.len()
        )));
    }
    let maps = device_region_maps(segment, g, strips)?;
    let mut out = Vec::with_capacity(devices.len());
    let mut total = 0.0;
    let mut t_comp_max: f64 = 0.0;
    let mut t_comm_sum = 0.0;
    for (k, (d, map)) in devices.iter().zip(&maps).enumerate() {
        let flops = segment_flops(segment, g, &map.actual_out);
        total += flops;
        let t_comp = compute_time(d, flops)?;
        let (bytes_in, bytes_out, t_comm) = if k == 0 {
            (0, 0, 0.0)
        } else {
            let bin: u64 = map
                .inputs
                .values()
                .map(|r| feature_bytes(r, bytes_per_element))
                .sum();
            let bout: u64 = g
                .sinks_of(segment)
                .into_iter()
                .filter_map(|v| map.required_out.get(&v))
                .map(|r| feature_bytes(r, bytes_per_element))
                .sum();
            (bin, bout, comm_time(bin, bout, bandwidth))
        };
        t_comp_max = t_comp_max.max(t_comp);
        t_comm_sum += t_comm;
        out.push(DeviceCost {
            name: d.name.clone(),
            flops,
            bytes_in,
            bytes_out,
            t_comp,
            t_comm,
        });
    }
    let transfer_in_bytes = if segment.contains(g.input_index()) {
        0
    } else {
        stage_input_bytes(segment, g, bytes_per_element)
    };
    let transfer_in_s = comm_time(transfer_in_bytes, 0, bandwidth);
    let stage_comm_s = transfer_in_s + t_comm_sum;
    let redundant = (total - unpartitioned_flops(segment, g)).max(0.0);
    Ok(CostBreakdown {
        devices: out,
        transfer_in_bytes,
        transfer_in_s,
        stage_compute_s: t_comp_max,
        stage_comm_s,
        stage_total_s: t_comp_max + stage_comm_s,
        redundant_flops: redundant,
        total_flops: total,
    })
}

/// Extra FLOPs a piece costs when its sinks are split into two equal height
/// halves, relative to computing it whole.
pub fn piece_redundancy(piece: &VertexSet, g: &ModelGraph) -> Result<f64> {
    if piece.is_empty() {
        return Err(Error::EmptyPiece);
    }
    let h = reference_height(piece, g);
    if h < 2 {
        return Ok(0.0);
    }
    let mut split = 0.0;
    for s in equal_strips(h, 2) {
        let map = segment_regions(
            piece,
            g,
            &sink_regions_for(piece, g, s, h),
            PaddingMode::Framework,
        )?;
        split += segment_flops(piece, g, &map.actual_out);
    }
    Ok((split - unpartitioned_flops(piece, g)).max(0.0))
}

/// Unclamped receptive extent `(rows, cols)` of one output pixel of the
/// piece's sinks, measured on the piece's external inputs. An extent of 1
/// means no halo in that dimension.
pub fn receptive_extent(piece: &VertexSet, g: &ModelGraph) -> (usize, usize) {
    let order = g.topo_within(piece);
    let mut need: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut best = (1, 1);
    for &v in order.iter().rev() {
        let mut e = (0, 0);
        let is_sink = g.succs(v).is_empty() || g.succs(v).iter().any(|w| !piece.contains(*w));
        if is_sink {
            e = (1, 1);
        }
        for &w in g.succs(v) {
            if let Some(&(r, c)) = need.get(&w) {
                e = (e.0.max(r), e.1.max(c));
            }
        }
        let l = g.layer(v);
        let input = if l.kind.is_windowed() {
            (
                required_input_extent(e.0, l.kernel.0, l.stride.0),
                required_input_extent(e.1, l.kernel.1, l.stride.1),
            )
        } else {
            e
        };
        need.insert(v, input);
        let external = l.kind == LayerKind::Input || g.preds(v).iter().any(|u| !piece.contains(*u));
        if external {
            best = (best.0.max(input.0), best.1.max(input.1));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LayerSpec;

    fn conv(k: usize, s: usize, p: usize) -> LayerSpec {
        LayerSpec::conv(1, (k, k), (s, s), (p, p), 1, 1)
    }

    fn shape(h: usize) -> Shape {
        Shape {
            channels: 1,
            height: h,
            width: h,
        }
    }

    #[test]
    fn required_input_examples() {
        let r =
            required_input_region(&conv(3, 2, 0), &Region::new(1, 0, 10, 10), shape(100)).unwrap();
        assert_eq!(r.rows, 21);
        let l = LayerSpec::conv(1, (1, 7), (1, 1), (0, 3), 1, 1);
        let r = required_input_region(&l, &Region::new(1, 0, 224, 224), shape(224)).unwrap();
        assert_eq!((r.row_start, r.rows), (0, 224));
        let r = required_input_region(&conv(1, 1, 0), &Region::new(1, 3, 5, 5), shape(20)).unwrap();
        assert_eq!((r.row_start, r.rows), (3, 5));
        assert!(matches!(
            required_input_region(&conv(3, 1, 1), &Region::new(1, 0, 0, 4), shape(4)),
            Err(Error::EmptyRegion)
        ));
    }

    #[test]
    fn forward_examples() {
        let f = |l: &LayerSpec, h| {
            forward_output_region(l, &Region::new(1, 0, h, h), h, h, PaddingMode::Framework)
        };
        assert_eq!(f(&conv(3, 1, 1), 224).unwrap().rows, 224);
        let pool = LayerSpec::pool(1, (2, 2), (2, 2), (0, 0));
        assert_eq!(f(&pool, 224).unwrap().rows, 112);
        assert!(matches!(
            f(&conv(7, 1, 0), 4),
            Err(Error::KernelTooLarge { .. })
        ));
    }

    #[test]
    fn flops_and_bytes() {
        let l = LayerSpec::conv(1, (3, 3), (1, 1), (1, 1), 64, 64);
        assert_eq!(
            layer_flops(&l, &Region::new(64, 0, 112, 112)),
            462_422_016.0
        );
        assert_eq!(
            layer_flops(
                &LayerSpec::pool(2, (2, 2), (2, 2), (0, 0)),
                &Region::new(3, 0, 5, 5)
            ),
            0.0
        );
        assert_eq!(
            layer_flops(
                &LayerSpec::conv(1, (1, 1), (1, 1), (0, 0), 1, 1),
                &Region::new(1, 0, 1, 1)
            ),
            1.0
        );
        assert_eq!(feature_bytes(&Region::new(64, 0, 112, 112), 4), 3_211_264);
        assert_eq!(feature_bytes(&Region::new(3, 0, 224, 224), 4), 602_112);
        assert_eq!(feature_bytes(&Region::new(3, 0, 0, 224), 4), 0);
    }

    #[test]
    fn times() {
        let d = DeviceSpec::new("a", 5e8);
        assert_eq!(compute_time(&d, 1e9).unwrap(), 2.0);
        assert_eq!(compute_time(&d, 0.0).unwrap(), 0.0);
        assert_eq!(compute_time(&d.clone().with_alpha(2.0), 1e9).unwrap(), 4.0);
        assert!((comm_time(3_211_264, 3_211_264, 6_250_000.0) - 1.0276).abs() < 1e-4);
        assert!(compute_time(&DeviceSpec::new("z", 0.0), 1.0).is_err());
    }

    #[test]
    fn equal_strip_tiling() {
        assert_eq!(
            equal_strips(10, 3),
            vec![Strip::new(0, 3), Strip::new(3, 6), Strip::new(6, 10)]
        );
        assert!(check_strips(&[Strip::new(0, 3), Strip::new(4, 10)], 10).is_err());
        assert!(check_strips(&[Strip::new(0, 10)], 10).is_ok());
    }
}
