//! Causal generative models: a validated DAG of structural equations.
//!
//! Nodes hold whole activation tensors, but the causal variables are single
//! channels: variable `(node, c)` is the 2-d map of channel `c`. The channel
//! graph is derived from the weights, so a channel depends on a parent channel
//! only through a non-zero weight block. The output node is the single sink `Y`
//! and the latent vector `z` supplies the `K` sources.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Activation, ConvTransposeParams, Tensor};

/// Reserved parent name for the latent vector.
pub const LATENT: &str = "z";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentDistribution {
    /// Uniform over each interval.
    Uniform,
    /// Standard normal truncated to each interval.
    TruncatedNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub distribution: LatentDistribution,
    /// One closed interval `[lo, hi]` per latent coordinate.
    pub intervals: Vec<(f64, f64)>,
}

impl LatentSpec {
    pub fn uniform(k: usize, lo: f64, hi: f64) -> Self {
        Self { distribution: LatentDistribution::Uniform, intervals: vec![(lo, hi); k] }
    }

    /// Gaussian latents restricted to `[-3, 3]` per coordinate.
    pub fn truncated_normal(k: usize) -> Self {
        Self { distribution: LatentDistribution::TruncatedNormal, intervals: vec![(-3.0, 3.0); k] }
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    fn validate(&self) -> Result<()> {
        if self.intervals.is_empty() {
            return Err(Error::LatentCount("latent dimension must be positive".into()));
        }
        for (k, &(lo, hi)) in self.intervals.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Validation(format!(
                    "latent interval {k} = [{lo}, {hi}] is not a bounded interval with lo < hi"
                )));
            }
        }
        Ok(())
    }

    /// Draws one latent vector from the declared distribution.
    pub fn sample<T: Scalar>(&self, rng: &mut crate::rng::StreamRng) -> Vec<T> {
        self.intervals
            .iter()
            .map(|&(lo, hi)| {
                let v = match self.distribution {
                    LatentDistribution::Uniform => crate::rng::uniform(rng, lo, hi),
                    LatentDistribution::TruncatedNormal => crate::rng::truncated_normal(rng, lo, hi),
                };
                T::from_f64_lossy(v)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Op {
    /// Fully connected map of the flattened parent onto `[C, H, W]`.
    /// Params: `weight: [in, C*H*W]`, optional `bias: [C*H*W]`.
    Dense { out_shape: [usize; 3] },
    /// Params: `weight: [Cin, Cout, kh, kw]`, optional `bias: [Cout]`.
    ConvTranspose2d {
        #[serde(flatten)]
        params: ConvTransposeParams,
    },
    /// Params: `mean`, `var`, `gamma`, `beta`, each `[C]`.
    BatchNorm { eps: f64 },
    Activation { function: Activation },
    /// Elementwise product with the fixed `mask: [C, H, W]` param.
    Mask,
    /// Sum of same-shaped parents.
    Add,
    /// Channel concatenation of parents with equal spatial size.
    Concat,
    /// Sums channel `c` of the parent into output channel `c % channels`.
    FoldChannels { channels: usize },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Dense { .. } => "dense",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Activation { .. } => "activation",
            Op::Mask => "mask",
            Op::Add => "add",
            Op::Concat => "concat",
            Op::FoldChannels { .. } => "fold_channels",
        }
    }
}

/// One structural equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub op: Op,
    /// Node ids, or [`LATENT`] for the latent vector. Order binds arguments.
    pub parents: Vec<String>,
    /// Role (`weight`, `bias`, `mean`, ...) to weight-store name.
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl NodeSpec {
    pub fn new(id: impl Into<String>, op: Op, parents: &[&str]) -> Self {
        Self {
            id: id.into(),
            op,
            parents: parents.iter().map(|p| p.to_string()).collect(),
            params: BTreeMap::new(),
        }
    }

    pub fn param(mut self, role: &str, weight: impl Into<String>) -> Self {
        self.params.insert(role.to_string(), weight.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDecl {
    pub name: String,
    pub node: String,
    /// Defaults to every channel of `node`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<usize>>,
}

/// Rectangular image region `[y0, y0+h) x [x0, x0+w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

impl Region {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y0 + self.h && x >= self.x0 && x < self.x0 + self.w
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        self.y0 < other.y0 + other.h
            && other.y0 < self.y0 + self.h
            && self.x0 < other.x0 + other.w
            && other.x0 < self.x0 + self.w
    }
}

/// Ground truth carried by constructed generators with planted modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedBlock {
    pub layer: String,
    /// Latent coordinates private to the block.
    pub latents: Vec<usize>,
    /// Indices into the layer's variables.
    pub channels: Vec<usize>,
    pub region: Region,
}

/// Everything needed to build a graph except the weight values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescription {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<String>,
    pub latent: LatentSpec,
    pub nodes: Vec<NodeSpec>,
    pub output: String,
    #[serde(default)]
    pub layers: Vec<LayerDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub planted: Vec<PlantedBlock>,
}

/// Endogenous variable: one channel of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId {
    pub node: usize,
    pub channel: usize,
}

/// Named, ordered set of endogenous variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSel {
    pub name: String,
    pub variables: Vec<VarId>,
}

/// Vertex of the channel-level causal graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Vertex {
    Latent(usize),
    Var(VarId),
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerCheck {
    Yes,
    /// A latent-to-output path avoiding every candidate.
    No { witness: Vec<Vertex> },
    /// Separates, but this element can be dropped.
    NotMinimal { removable: VarId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Latent,
    Node(usize),
}

/// Channel-level adjacency, vertices numbered latents first, then the channels
/// of every non-output node, then `Y`.
#[derive(Debug, Clone)]
struct ChannelGraph {
    k: usize,
    offsets: Vec<usize>,
    output_vertex: usize,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
}

impl ChannelGraph {
    fn len(&self) -> usize {
        self.preds.len()
    }

    /// Forward reachability from `starts`, never entering `blocked` vertices.
    fn reach_forward(&self, starts: &[usize], blocked: &[bool]) -> (Vec<bool>, Vec<usize>) {
        let mut seen = vec![false; self.len()];
        let mut from = vec![usize::MAX; self.len()];
        let mut queue = VecDeque::new();
        for &s in starts {
            if !blocked[s] && !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            for &w in &self.succs[v] {
                if !blocked[w] && !seen[w] {
                    seen[w] = true;
                    from[w] = v;
                    queue.push_back(w);
                }
            }
        }
        (seen, from)
    }

    fn reach_backward(&self, starts: &[usize], blocked: &[bool], cut: &[bool]) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &s in starts {
            if !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            if cut[v] {
                continue;
            }
            for &u in &self.preds[v] {
                if !blocked[u] && !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen
    }
}

/// Values of every node for one latent input.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    latent: Tensor<T>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Trace<T> {
    /// The `[H, W]` map of one variable, as a flat slice.
    pub fn variable(&self, var: VarId) -> &[T] {
        self.values[var.node].plane(0, var.channel)
    }

    pub fn node_value(&self, node: usize) -> &Tensor<T> {
        &self.values[node]
    }

    pub fn latent(&self) -> &[T] {
        self.latent.data()
    }
}

/// Constant assignments `{V := v0}` applied during evaluation.
#[derive(Debug, Clone, Default)]
pub struct Assignments<'a, T> {
    by_node: BTreeMap<usize, Vec<(usize, &'a [T])>>,
}

impl<'a, T: Scalar> Assignments<'a, T> {
    pub fn new() -> Self {
        Self { by_node: BTreeMap::new() }
    }

    pub fn set(&mut self, var: VarId, value: &'a [T]) {
        self.by_node.entry(var.node).or_default().push((var.channel, value));
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }

    fn apply(&self, node: usize, value: &mut Tensor<T>) {
        if let Some(list) = self.by_node.get(&node) {
            for &(ch, v) in list {
                value.plane_mut(0, ch).copy_from_slice(v);
            }
        }
    }

    fn touches(&self, node: usize) -> bool {
        self.by_node.contains_key(&node)
    }
}

#[derive(Debug, Clone)]
pub struct CgmGraph<T> {
    description: ModelDescription,
    weights: BTreeMap<String, Tensor<T>>,
    index: HashMap<String, usize>,
    sources: Vec<Vec<Source>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
    shapes: Vec<[usize; 3]>,
    output: usize,
    layers: Vec<LayerSel>,
    channels: ChannelGraph,
}

/// Validates a model description against its weights and builds the graph.
pub fn build_cgm<T: Scalar>(
    description: ModelDescription,
    weights: BTreeMap<String, Tensor<T>>,
) -> Result<CgmGraph<T>> {
    CgmGraph::build(description, weights)
}

impl<T: Scalar> CgmGraph<T> {
    pub fn build(description: ModelDescription, weights: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        description.latent.validate()?;
        let k = description.latent.dim();
        let n = description.nodes.len();

        let mut index = HashMap::with_capacity(n);
        for (i, node) in description.nodes.iter().enumerate() {
            if node.id == LATENT {
                return Err(Error::Validation(format!("node id `{LATENT}` is reserved")));
            }
            if index.insert(node.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate node id `{}`", node.id)));
            }
        }
        let output = *index
            .get(&description.output)
            .ok_or_else(|| Error::UnknownVariable(format!("output node `{}`", description.output)))?;

        let mut sources = Vec::with_capacity(n);
        let mut children = vec![Vec::new(); n];
        for (i, node) in description.nodes.iter().enumerate() {
            if node.parents.is_empty() {
                return Err(Error::Validation(format!("node `{}` has no parents", node.id)));
            }
            let mut srcs = Vec::with_capacity(node.parents.len());
            for p in &node.parents {
                if p == LATENT {
                    srcs.push(Source::Latent);
                } else {
                    let j = *index.get(p).ok_or_else(|| Error::MissingParent {
                        node: node.id.clone(),
                        parent: p.clone(),
                    })?;
                    srcs.push(Source::Node(j));
                    if !children[j].contains(&i) {
                        children[j].push(i);
                    }
                }
            }
            sources.push(srcs);
        }

        let order = topological_order(&description.nodes, &sources)?;

        if !children[output].is_empty() {
            return Err(Error::Validation(format!(
                "output `{}` feeds other nodes; it must be the sink",
                description.output
            )));
        }
        let sinks: Vec<String> = (0..n)
            .filter(|&i| i != output && children[i].is_empty())
            .map(|i| description.nodes[i].id.clone())
            .collect();
        if !sinks.is_empty() {
            let mut all = vec![description.output.clone()];
            all.extend(sinks);
            return Err(Error::MultipleSinks(all));
        }
        if !sources.iter().flatten().any(|s| *s == Source::Latent) {
            return Err(Error::LatentCount("no node reads the latent vector".into()));
        }

        let mut graph = Self {
            description,
            weights,
            index,
            sources,
            children,
            order,
            shapes: vec![[0; 3]; n],
            output,
            layers: Vec::new(),
            channels: ChannelGraph {
                k,
                offsets: Vec::new(),
                output_vertex: 0,
                preds: Vec::new(),
                succs: Vec::new(),
            },
        };
        graph.infer_shapes()?;
        graph.channels = graph.channel_graph()?;
        graph.layers = graph.resolve_layers()?;
        graph.check_planted()?;
        Ok(graph)
    }

    fn weight(&self, node: usize, role: &str) -> Result<&Tensor<T>> {
        let spec = &self.description.nodes[node];
        let name = spec.params.get(role).ok_or_else(|| {
            Error::MissingWeight(format!("node `{}` has no `{role}` parameter", spec.id))
        })?;
        self.weights.get(name).ok_or_else(|| Error::MissingWeight(name.clone()))
    }

    fn optional_weight(&self, node: usize, role: &str) -> Result<Option<&Tensor<T>>> {
        if self.description.nodes[node].params.contains_key(role) {
            self.weight(node, role).map(Some)
        } else {
            Ok(None)
        }
    }

    fn source_shape(&self, s: Source) -> [usize; 3] {
        match s {
            Source::Latent => [self.channels.k, 1, 1],
            Source::Node(j) => self.shapes[j],
        }
    }

    fn infer_shapes(&mut self) -> Result<()> {
        let k = self.description.latent.dim();
        for &i in &self.order.clone() {
            let spec = &self.description.nodes[i];
            let id = spec.id.clone();
            let ins: Vec<[usize; 3]> = self.sources[i].iter().map(|&s| self.source_shape(s)).collect();
            let shape_err = |msg: String| Error::Shape(format!("node `{id}`: {msg}"));
            let single = |ins: &[[usize; 3]]| -> Result<[usize; 3]> {
                if ins.len() != 1 {
                    return Err(Error::Shape(format!(
                        "node `{id}`: {} takes one parent, got {}",
                        spec.op.kind(),
                        ins.len()
                    )));
                }
                Ok(ins[0])
            };
            let shape = match &spec.op {
                Op::Dense { out_shape } => {
                    let input = single(&ins)?;
                    let in_len: usize = input.iter().product();
                    let out_len: usize = out_shape.iter().product();
                    if out_len == 0 {
                        return Err(shape_err("empty output shape".into()));
                    }
                    let w = self.weight(i, "weight")?;
                    if w.shape().len() != 2 || w.shape()[1] != out_len {
                        return Err(shape_err(format!(
                            "weight {:?} does not map onto {out_shape:?}",
                            w.shape()
                        )));
                    }
                    if w.shape()[0] != in_len {
                        if self.sources[i][0] == Source::Latent {
                            return Err(Error::LatentCount(format!(
                                "node `{id}` weight expects {} latents, latent spec declares {k}",
                                w.shape()[0]
                            )));
                        }
                        return Err(shape_err(format!(
                            "weight {:?} expects {} inputs, parent provides {in_len}",
                            w.shape(),
                            w.shape()[0]
                        )));
                    }
                    if let Some(b) = self.optional_weight(i, "bias")? {
                        if b.shape() != [out_len] {
                            return Err(shape_err(format!("bias {:?} != [{out_len}]", b.shape())));
                        }
                    }
                    *out_shape
                }
                Op::ConvTranspose2d { params } => {
                    let [c, h, w] = single(&ins)?;
                    let kern = self.weight(i, "weight")?;
                    let [kc, co, kh, kw] = kern.shape()[..] else {
                        return Err(shape_err(format!("kernel {:?} is not 4-d", kern.shape())));
                    };
                    if kc != c {
                        return Err(shape_err(format!("kernel {:?} vs {c} input channels", kern.shape())));
                    }
                    if let Some(b) = self.optional_weight(i, "bias")? {
                        if b.shape() != [co] {
                            return Err(shape_err(format!("bias {:?} != [{co}]", b.shape())));
                        }
                    }
                    [co, params.output_side(h, kh)?, params.output_side(w, kw)?]
                }
                Op::BatchNorm { eps } => {
                    let input = single(&ins)?;
                    if *eps < 0.0 {
                        return Err(shape_err("negative eps".into()));
                    }
                    for role in ["mean", "var", "gamma", "beta"] {
                        let t = self.weight(i, role)?;
                        if t.shape() != [input[0]] {
                            return Err(shape_err(format!("{role} {:?} != [{}]", t.shape(), input[0])));
                        }
                    }
                    input
                }
                Op::Activation { .. } => single(&ins)?,
                Op::Mask => {
                    let input = single(&ins)?;
                    let m = self.weight(i, "mask")?;
                    if m.shape() != input {
                        return Err(shape_err(format!("mask {:?} != {input:?}", m.shape())));
                    }
                    input
                }
                Op::Add => {
                    if ins.iter().any(|s| *s != ins[0]) {
                        return Err(shape_err(format!("add of unequal shapes {ins:?}")));
                    }
                    ins[0]
                }
                Op::Concat => {
                    if ins.iter().any(|s| s[1..] != ins[0][1..]) {
                        return Err(shape_err(format!("concat of unequal spatial sizes {ins:?}")));
                    }
                    [ins.iter().map(|s| s[0]).sum(), ins[0][1], ins[0][2]]
                }
                Op::FoldChannels { channels } => {
                    let [c, h, w] = single(&ins)?;
                    if *channels == 0 || c % channels != 0 {
                        return Err(shape_err(format!("{c} channels do not fold into {channels}")));
                    }
                    [*channels, h, w]
                }
            };
            self.shapes[i] = shape;
        }
        Ok(())
    }

    /// Parent channels each output channel of node `i` depends on.
    fn channel_deps(&self, i: usize) -> Result<Vec<Vec<(Source, usize)>>> {
        let [c, h, w] = self.shapes[i];
        let srcs = &self.sources[i];
        let mut deps = vec![Vec::new(); c];
        match &self.description.nodes[i].op {
            Op::Dense { .. } => {
                let [ci_n, ih, iw] = self.source_shape(srcs[0]);
                let (in_plane, out_plane) = (ih * iw, h * w);
                let wt = self.weight(i, "weight")?;
                let cols = c * out_plane;
                for (co, d) in deps.iter_mut().enumerate() {
                    for ci in 0..ci_n {
                        let live = (ci * in_plane..(ci + 1) * in_plane).any(|r| {
                            wt.data()[r * cols + co * out_plane..r * cols + (co + 1) * out_plane]
                                .iter()
                                .any(|v| !v.is_zero())
                        });
                        if live {
                            d.push((srcs[0], ci));
                        }
                    }
                }
            }
            Op::ConvTranspose2d { .. } => {
                let kern = self.weight(i, "weight")?;
                let [cin, cout, kh, kw] = kern.shape()[..] else { unreachable!() };
                let ks = kh * kw;
                for (co, d) in deps.iter_mut().enumerate() {
                    for ci in 0..cin {
                        let s = (ci * cout + co) * ks;
                        if kern.data()[s..s + ks].iter().any(|v| !v.is_zero()) {
                            d.push((srcs[0], ci));
                        }
                    }
                }
            }
            Op::BatchNorm { .. } | Op::Activation { .. } | Op::Mask => {
                for (ch, d) in deps.iter_mut().enumerate() {
                    d.push((srcs[0], ch));
                }
            }
            Op::Add => {
                for (ch, d) in deps.iter_mut().enumerate() {
                    d.extend(srcs.iter().map(|&s| (s, ch)));
                }
            }
            Op::Concat => {
                let mut base = 0;
                for &s in srcs {
                    let cs = self.source_shape(s)[0];
                    for ch in 0..cs {
                        deps[base + ch].push((s, ch));
                    }
                    base += cs;
                }
            }
            Op::FoldChannels { channels } => {
                let cin = self.source_shape(srcs[0])[0];
                for ch in 0..cin {
                    deps[ch % channels].push((srcs[0], ch));
                }
            }
        }
        Ok(deps)
    }

    fn channel_graph(&self) -> Result<ChannelGraph> {
        let k = self.description.latent.dim();
        let n = self.description.nodes.len();
        let mut offsets = vec![usize::MAX; n];
        let mut next = k;
        for (i, off) in offsets.iter_mut().enumerate() {
            if i != self.output {
                *off = next;
                next += self.shapes[i][0];
            }
        }
        let output_vertex = next;
        let mut preds = vec![Vec::new(); next + 1];
        let vertex_of = |s: Source, ch: usize| match s {
            Source::Latent => ch,
            Source::Node(j) => offsets[j] + ch,
        };
        for i in 0..n {
            for (ch, deps) in self.channel_deps(i)?.into_iter().enumerate() {
                let v = if i == self.output { output_vertex } else { vertex_of(Source::Node(i), ch) };
                for (s, pc) in deps {
                    let u = vertex_of(s, pc);
                    if !preds[v].contains(&u) {
                        preds[v].push(u);
                    }
                }
            }
        }
        let mut succs = vec![Vec::new(); next + 1];
        for (v, ps) in preds.iter_mut().enumerate() {
            ps.sort_unstable();
            for &u in ps.iter() {
                succs[u].push(v);
            }
        }
        Ok(ChannelGraph { k, offsets, output_vertex, preds, succs })
    }

    fn resolve_layers(&self) -> Result<Vec<LayerSel>> {
        let mut out = Vec::new();
        for decl in &self.description.layers {
            let node = self.node_index(&decl.node)?;
            let channels: Vec<usize> = match &decl.channels {
                Some(list) => list.clone(),
                None => (0..self.shapes[node][0]).collect(),
            };
            let vars: Vec<VarId> = channels.iter().map(|&channel| VarId { node, channel }).collect();
            self.check_vars(&vars)?;
            if out.iter().any(|l: &LayerSel| l.name == decl.name) {
                return Err(Error::Validation(format!("duplicate layer name `{}`", decl.name)));
            }
            out.push(LayerSel { name: decl.name.clone(), variables: vars });
        }
        Ok(out)
    }

    fn check_planted(&self) -> Result<()> {
        for block in &self.description.planted {
            let layer = self.layer(&block.layer)?;
            if let Some(&c) = block.channels.iter().find(|&&c| c >= layer.variables.len()) {
                return Err(Error::Validation(format!(
                    "planted block channel {c} outside layer `{}`",
                    block.layer
                )));
            }
            if let Some(&z) = block.latents.iter().find(|&&z| z >= self.latent_dim()) {
                return Err(Error::Validation(format!("planted block latent {z} out of range")));
            }
        }
        Ok(())
    }

    /// Checks that variables exist, are endogenous and distinct.
    pub fn check_vars(&self, vars: &[VarId]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &v in vars {
            if v.node >= self.shapes.len() || v.channel >= self.shapes[v.node][0] {
                return Err(Error::UnknownVariable(format!("{v:?}")));
            }
            if v.node == self.output {
                return Err(Error::UnknownVariable(format!(
                    "`{}` is the output, not an endogenous variable",
                    self.node_id(v.node)
                )));
            }
            if !seen.insert(v) {
                return Err(Error::Validation(format!("duplicate variable {}", self.var_name(v))));
            }
        }
        Ok(())
    }

    pub fn description(&self) -> &ModelDescription {
        &self.description
    }

    pub fn weights(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.weights
    }

    pub fn latent(&self) -> &LatentSpec {
        &self.description.latent
    }

    pub fn latent_dim(&self) -> usize {
        self.description.latent.dim()
    }

    pub fn node_count(&self) -> usize {
        self.description.nodes.len()
    }

    pub fn node_index(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::UnknownVariable(format!("node `{id}`")))
    }

    pub fn node_id(&self, node: usize) -> &str {
        &self.description.nodes[node].id
    }

    /// `[C, H, W]` of a node's value.
    pub fn node_shape(&self, node: usize) -> [usize; 3] {
        self.shapes[node]
    }

    pub fn output_node(&self) -> usize {
        self.output
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.shapes[self.output]
    }

    pub fn layers(&self) -> &[LayerSel] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Result<&LayerSel> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::UnknownVariable(format!("layer `{name}`")))
    }

    pub fn planted_blocks(&self) -> &[PlantedBlock] {
        &self.description.planted
    }

    pub fn var(&self, node: &str, channel: usize) -> Result<VarId> {
        let v = VarId { node: self.node_index(node)?, channel };
        self.check_vars(&[v])?;
        Ok(v)
    }

    pub fn var_name(&self, v: VarId) -> String {
        format!("{}:{}", self.node_id(v.node), v.channel)
    }

    pub fn vertex_name(&self, v: &Vertex) -> String {
        match v {
            Vertex::Latent(k) => format!("{LATENT}[{k}]"),
            Vertex::Var(var) => self.var_name(*var),
            Vertex::Output => "Y".into(),
        }
    }

    /// Clamps `z` into the latent intervals, warning when anything moved.
    pub fn clamp_latent(&self, z: &[T]) -> Result<Vec<T>> {
        let spec = &self.description.latent;
        if z.len() != spec.dim() {
            return Err(Error::LatentCount(format!(
                "got {} latent values, model has {}",
                z.len(),
                spec.dim()
            )));
        }
        let mut clamped = 0usize;
        let out = z
            .iter()
            .zip(&spec.intervals)
            .map(|(&v, &(lo, hi))| {
                let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
                let c = if v.is_nan() { lo } else { v.max(lo).min(hi) };
                if c != v {
                    clamped += 1;
                }
                c
            })
            .collect();
        if clamped > 0 {
            log::warn!("{clamped} latent coordinate(s) clamped into the declared intervals");
        }
        Ok(out)
    }

    fn eval_node(&self, i: usize, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let [c, h, w] = self.shapes[i];
        match &self.description.nodes[i].op {
            Op::Dense { .. } => {
                let flat = Tensor::new(vec![1, inputs[0].len()], inputs[0].data().to_vec())?;
                let mut y = tensor::matmul(&flat, self.weight(i, "weight")?)?;
                if let Some(b) = self.optional_weight(i, "bias")? {
                    for (v, &bv) in y.data_mut().iter_mut().zip(b.data()) {
                        *v = *v + bv;
                    }
                }
                y.reshape(vec![1, c, h, w])
            }
            Op::ConvTranspose2d { params } => tensor::conv_transpose2d(
                inputs[0],
                self.weight(i, "weight")?,
                self.optional_weight(i, "bias")?,
                *params,
            ),
            Op::BatchNorm { eps } => tensor::batchnorm_infer(
                inputs[0],
                self.weight(i, "mean")?,
                self.weight(i, "var")?,
                self.weight(i, "gamma")?,
                self.weight(i, "beta")?,
                T::from_f64_lossy(*eps),
            ),
            Op::Activation { function } => Ok(tensor::apply_activation(inputs[0], *function)),
            Op::Mask => {
                let m = self.weight(i, "mask")?;
                let mut y = inputs[0].clone();
                for (v, &mv) in y.data_mut().iter_mut().zip(m.data()) {
                    *v = *v * mv;
                }
                Ok(y)
            }
            Op::Add => {
                let mut y = inputs[0].clone();
                for other in &inputs[1..] {
                    for (v, &o) in y.data_mut().iter_mut().zip(other.data()) {
                        *v = *v + o;
                    }
                }
                Ok(y)
            }
            Op::Concat => {
                let data = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
                Tensor::new(vec![1, c, h, w], data)
            }
            Op::FoldChannels { channels } => {
                let mut y = Tensor::zeros(vec![1, c, h, w]);
                let cin = inputs[0].shape()[1];
                for ch in 0..cin {
                    let src = inputs[0].plane(0, ch);
                    for (v, &s) in y.plane_mut(0, ch % channels).iter_mut().zip(src) {
                        *v = *v + s;
                    }
                }
                Ok(y)
            }
        }
    }

    fn latent_tensor(&self, z: &[T]) -> Result<Tensor<T>> {
        let z = self.clamp_latent(z)?;
        Tensor::new(vec![1, z.len(), 1, 1], z)
    }

    /// Full forward pass under constant assignments, recording every node.
    pub fn trace_with(&self, z: &[T], assignments: &Assignments<'_, T>) -> Result<Trace<T>> {
        let latent = self.latent_tensor(z)?;
        let mut values: Vec<Option<Tensor<T>>> = vec![None; self.node_count()];
        for &i in &self.order {
            let inputs: Vec<&Tensor<T>> = self.sources[i]
                .iter()
                .map(|s| match *s {
                    Source::Latent => &latent,
                    Source::Node(j) => values[j].as_ref().expect("topological order"),
                })
                .collect();
            let mut v = self.eval_node(i, &inputs)?;
            assignments.apply(i, &mut v);
            values[i] = Some(v);
        }
        Ok(Trace { latent, values: values.into_iter().map(Option::unwrap).collect() })
    }

    pub fn trace(&self, z: &[T]) -> Result<Trace<T>> {
        self.trace_with(z, &Assignments::new())
    }

    /// Output `Y(z)` as a `[C, H, W]` tensor.
    pub fn evaluate(&self, z: &[T]) -> Result<Tensor<T>> {
        self.evaluate_with(z, &Assignments::new())
    }

    pub fn evaluate_with(&self, z: &[T], assignments: &Assignments<'_, T>) -> Result<Tensor<T>> {
        let trace = self.trace_with(z, assignments)?;
        self.output_of(trace)
    }

    fn output_of(&self, mut trace: Trace<T>) -> Result<Tensor<T>> {
        let y = std::mem::replace(&mut trace.values[self.output], Tensor::zeros(vec![1]));
        let [c, h, w] = self.shapes[self.output];
        y.reshape(vec![c, h, w])
    }

    /// Output after applying `assignments` on top of a recorded unintervened
    /// pass; only nodes downstream of an assignment are recomputed.
    ///
    /// Bit-identical to [`CgmGraph::evaluate_with`] at the trace's latent.
    pub fn evaluate_from_trace(&self, base: &Trace<T>, assignments: &Assignments<'_, T>) -> Result<Tensor<T>> {
        let mut fresh: Vec<Option<Tensor<T>>> = vec![None; self.node_count()];
        for &i in &self.order {
            let dirty = self.sources[i]
                .iter()
                .any(|s| matches!(*s, Source::Node(j) if fresh[j].is_some()));
            if !dirty && !assignments.touches(i) {
                continue;
            }
            let mut v = if dirty {
                let inputs: Vec<&Tensor<T>> = self.sources[i]
                    .iter()
                    .map(|s| match *s {
                        Source::Latent => &base.latent,
                        Source::Node(j) => fresh[j].as_ref().unwrap_or(&base.values[j]),
                    })
                    .collect();
                self.eval_node(i, &inputs)?
            } else {
                base.values[i].clone()
            };
            assignments.apply(i, &mut v);
            fresh[i] = Some(v);
        }
        let y = fresh[self.output].take().unwrap_or_else(|| base.values[self.output].clone());
        let [c, h, w] = self.shapes[self.output];
        y.reshape(vec![c, h, w])
    }

    /// Output computed from values of the layer's variables alone.
    ///
    /// `values[i]` is the flattened `[H, W]` map of `layer.variables[i]`.
    pub fn evaluate_from_layer(&self, layer: &LayerSel, values: &[&[T]]) -> Result<Tensor<T>> {
        self.check_vars(&layer.variables)?;
        if values.len() != layer.variables.len() {
            return Err(Error::Dimension(format!(
                "layer `{}` has {} variables, got {} values",
                layer.name,
                layer.variables.len(),
                values.len()
            )));
        }
        let mut given: BTreeMap<usize, Vec<(usize, &[T])>> = BTreeMap::new();
        for (&var, &v) in layer.variables.iter().zip(values) {
            let [_, h, w] = self.shapes[var.node];
            if v.len() != h * w {
                return Err(Error::Dimension(format!(
                    "variable {} is {h}x{w}, got {} values",
                    self.var_name(var),
                    v.len()
                )));
            }
            given.entry(var.node).or_default().push((var.channel, v));
        }
        let full: BTreeSet<usize> = given
            .iter()
            .filter(|(&n, list)| list.len() == self.shapes[n][0])
            .map(|(&n, _)| n)
            .collect();

        let mut needed = vec![false; self.node_count()];
        let mut stack = vec![self.output];
        needed[self.output] = true;
        while let Some(i) = stack.pop() {
            if full.contains(&i) {
                continue;
            }
            for s in &self.sources[i] {
                match *s {
                    Source::Latent => return Err(Error::NotSeparating(layer.name.clone())),
                    Source::Node(j) if !needed[j] => {
                        needed[j] = true;
                        stack.push(j);
                    }
                    Source::Node(_) => {}
                }
            }
        }

        let mut vals: Vec<Option<Tensor<T>>> = vec![None; self.node_count()];
        for &i in &self.order {
            if !needed[i] {
                continue;
            }
            let [c, h, w] = self.shapes[i];
            let mut v = if full.contains(&i) {
                Tensor::zeros(vec![1, c, h, w])
            } else {
                let inputs: Vec<&Tensor<T>> = self.sources[i]
                    .iter()
                    .map(|s| match *s {
                        Source::Node(j) => vals[j].as_ref().expect("needed parent"),
                        Source::Latent => unreachable!("checked above"),
                    })
                    .collect();
                self.eval_node(i, &inputs)?
            };
            if let Some(list) = given.get(&i) {
                for &(ch, data) in list {
                    v.plane_mut(0, ch).copy_from_slice(data);
                }
            }
            vals[i] = Some(v);
        }
        let y = vals[self.output].take().expect("output is needed");
        let [c, h, w] = self.shapes[self.output];
        y.reshape(vec![c, h, w])
    }

    fn vertex(&self, v: VarId) -> usize {
        self.channels.offsets[v.node] + v.channel
    }

    fn vertex_label(&self, u: usize) -> Vertex {
        let g = &self.channels;
        if u < g.k {
            return Vertex::Latent(u);
        }
        if u == g.output_vertex {
            return Vertex::Output;
        }
        let node = (0..self.node_count())
            .filter(|&i| i != self.output && g.offsets[i] <= u)
            .max_by_key(|&i| g.offsets[i])
            .expect("vertex belongs to a node");
        Vertex::Var(VarId { node, channel: u - g.offsets[node] })
    }

    /// Checks whether `candidate` intercepts every latent-to-output path and
    /// whether each element is needed for that.
    pub fn is_layer(&self, candidate: &[VarId]) -> Result<LayerCheck> {
        self.check_vars(candidate)?;
        let g = &self.channels;
        let latents: Vec<usize> = (0..g.k).collect();
        let mut blocked = vec![false; g.len()];
        for &v in candidate {
            blocked[self.vertex(v)] = true;
        }
        let (seen, from) = g.reach_forward(&latents, &blocked);
        if seen[g.output_vertex] {
            let mut path = vec![g.output_vertex];
            let mut cur = g.output_vertex;
            while from[cur] != usize::MAX {
                cur = from[cur];
                path.push(cur);
            }
            path.reverse();
            return Ok(LayerCheck::No { witness: path.into_iter().map(|u| self.vertex_label(u)).collect() });
        }
        let no_cut = vec![false; g.len()];
        for &v in candidate {
            let u = self.vertex(v);
            blocked[u] = false;
            let (fwd, _) = g.reach_forward(&latents, &blocked);
            let bwd = g.reach_backward(&[g.output_vertex], &blocked, &no_cut);
            blocked[u] = true;
            if !(fwd[u] && bwd[u]) {
                return Ok(LayerCheck::NotMinimal { removable: v });
            }
        }
        Ok(LayerCheck::Yes)
    }

    /// Latent coordinates with a directed path into any of `vars`.
    pub fn latent_ancestors(&self, vars: &[VarId]) -> Result<BTreeSet<usize>> {
        self.latent_ancestors_cut(vars, &[])
    }

    /// As [`CgmGraph::latent_ancestors`], with incoming edges of `cut` removed.
    pub(crate) fn latent_ancestors_cut(&self, vars: &[VarId], cut: &[VarId]) -> Result<BTreeSet<usize>> {
        self.check_vars(vars)?;
        self.check_vars(cut)?;
        let starts: Vec<usize> = vars.iter().map(|&v| self.vertex(v)).collect();
        Ok(self.ancestors_of_vertices(&starts, cut))
    }

    fn ancestors_of_vertices(&self, starts: &[usize], cut: &[VarId]) -> BTreeSet<usize> {
        let g = &self.channels;
        let mut cut_mask = vec![false; g.len()];
        for &v in cut {
            cut_mask[self.vertex(v)] = true;
        }
        let seen = g.reach_backward(starts, &vec![false; g.len()], &cut_mask);
        (0..g.k).filter(|&k| seen[k]).collect()
    }

    /// Latents with a directed path to `Y`, with incoming edges of `cut` removed.
    pub fn output_latent_ancestors(&self, cut: &[VarId]) -> Result<BTreeSet<usize>> {
        self.check_vars(cut)?;
        Ok(self.ancestors_of_vertices(&[self.channels.output_vertex], cut))
    }

    /// True iff the module and the rest of its layer have a latent ancestor in
    /// common.
    pub fn shares_latent_ancestor(&self, layer: &LayerSel, module: &[VarId]) -> Result<bool> {
        if let Some(v) = module.iter().find(|v| !layer.variables.contains(v)) {
            return Err(Error::Validation(format!(
                "variable {} is not in layer `{}`",
                self.var_name(*v),
                layer.name
            )));
        }
        let rest: Vec<VarId> = layer.variables.iter().copied().filter(|v| !module.contains(v)).collect();
        let a = self.latent_ancestors(module)?;
        let b = self.latent_ancestors(&rest)?;
        Ok(!a.is_disjoint(&b))
    }

    /// Downstream node set of `node` (including itself).
    pub fn descendants(&self, node: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![node];
        while let Some(i) = stack.pop() {
            if seen.insert(i) {
                stack.extend(self.children[i].iter().copied());
            }
        }
        seen
    }
}

fn topological_order(nodes: &[NodeSpec], sources: &[Vec<Source>]) -> Result<Vec<usize>> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let n = nodes.len();
    let mut state = vec![0u8; n];
    let mut order = Vec::with_capacity(n);
    for root in 0..n {
        if state[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        state[root] = 1;
        while let Some(&mut (i, ref mut next)) = stack.last_mut() {
            if *next < sources[i].len() {
                let s = sources[i][*next];
                *next += 1;
                if let Source::Node(j) = s {
                    match state[j] {
                        0 => {
                            state[j] = 1;
                            stack.push((j, 0));
                        }
                        1 => return Err(Error::Cycle(nodes[j].id.clone())),
                        _ => {}
                    }
                }
            } else {
                state[i] = 2;
                order.push(i);
                stack.pop();
            }
        }
    }
    Ok(order)
}

impl fmt::Display for LayerCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerCheck::Yes => write!(f, "yes"),
            LayerCheck::No { witness } => write!(f, "no (witness path of {} vertices)", witness.len()),
            LayerCheck::NotMinimal { removable } => {
                write!(f, "yes, but not minimal (removable {removable:?})")
            }
        }
    }
}

/// Programmatic construction of model descriptions plus weights.
#[derive(Debug, Clone)]
pub struct GraphBuilder<T> {
    description: ModelDescription,
    weights: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> GraphBuilder<T> {
    pub fn new(latent: LatentSpec) -> Self {
        Self {
            description: ModelDescription {
                arch: None,
                latent,
                nodes: Vec::new(),
                output: String::new(),
                layers: Vec::new(),
                planted: Vec::new(),
            },
            weights: BTreeMap::new(),
        }
    }

    pub fn arch(mut self, arch: &str) -> Self {
        self.description.arch = Some(arch.to_string());
        self
    }

    pub fn weight(mut self, name: &str, tensor: Tensor<T>) -> Self {
        self.weights.insert(name.to_string(), tensor);
        self
    }

    pub fn node(mut self, spec: NodeSpec) -> Self {
        self.description.nodes.push(spec);
        self
    }

    pub fn layer(mut self, name: &str, node: &str) -> Self {
        self.description.layers.push(LayerDecl { name: name.into(), node: node.into(), channels: None });
        self
    }

    pub fn planted(mut self, block: PlantedBlock) -> Self {
        self.description.planted.push(block);
        self
    }

    pub fn output(mut self, node: &str) -> Self {
        self.description.output = node.to_string();
        self
    }

    pub fn build(self) -> Result<CgmGraph<T>> {
        CgmGraph::build(self.description, self.weights)
    }
}
