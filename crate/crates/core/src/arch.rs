//! Symbolic checks on encoder/decoder wiring: shape inference and the
//! U-Net-style rules the segmentation networks follow.
//!
//! Graphs are level summaries (one node per resolution level), never weights.
//! Rules:
//!
//! * `R1` decoder upsample count equals the maxpool count,
//! * `R2` every skip connection merges through `add`,
//! * `R3` every `add` sees equal operand shapes (bottleneck convs fix channel gaps),
//! * `R4` a pyramid `concat` gathers one feature per decoder level, all at input resolution,
//! * `R5` a single 1x1, single-channel output head.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Input,
    Conv,
    Maxpool,
    Upsample,
    Add,
    Concat,
    BottleneckConv,
    OutputHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Encoder,
    Decoder,
    Pyramid,
}

fn default_factor() -> usize {
    2
}

fn default_kernel() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerNode {
    pub id: String,
    pub kind: NodeKind,
    /// Output channels of conv-like nodes; ignored elsewhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels_out: Option<usize>,
    /// Scale change of maxpool/upsample nodes.
    #[serde(default = "default_factor")]
    pub spatial_factor: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
}

impl LayerNode {
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        Self {
            id: id.into(),
            kind,
            channels_out: None,
            spatial_factor: 2,
            kernel: 3,
            role: None,
            level: None,
        }
    }

    pub fn channels(mut self, c: usize) -> Self {
        self.channels_out = Some(c);
        self
    }

    pub fn kernel(mut self, k: usize) -> Self {
        self.kernel = k;
        self
    }

    pub fn role(mut self, role: Role, level: u32) -> Self {
        self.role = Some(role);
        self.level = Some(level);
        self
    }

    pub fn pyramid(mut self) -> Self {
        self.role = Some(Role::Pyramid);
        self
    }
}

/// Directed layer graph. Skips name `(encoder node, merge node)`; the merge
/// must be reachable directly or through one bottleneck conv.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchGraph {
    pub nodes: Vec<LayerNode>,
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub skips: Vec<(String, String)>,
}

/// `(height, width, channels)`.
pub type Shape = (usize, usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    R1,
    R2,
    R3,
    R4,
    R5,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub nodes: Vec<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.rule, self.nodes.join(", "), self.message)
    }
}

struct Indexed<'g> {
    graph: &'g ArchGraph,
    index: HashMap<&'g str, usize>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    order: Vec<usize>,
}

impl<'g> Indexed<'g> {
    fn new(graph: &'g ArchGraph) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, n) in graph.nodes.iter().enumerate() {
            if index.insert(n.id.as_str(), i).is_some() {
                return Err(Error::Graph(format!("duplicate node id `{}`", n.id)));
            }
        }
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| Error::Graph(format!("edge refers to unknown node `{id}`")))
        };
        let mut preds = vec![Vec::new(); graph.nodes.len()];
        let mut succs = vec![Vec::new(); graph.nodes.len()];
        for (a, b) in &graph.edges {
            let (a, b) = (lookup(a)?, lookup(b)?);
            preds[b].push(a);
            succs[a].push(b);
        }
        for (a, b) in &graph.skips {
            lookup(a)?;
            lookup(b)?;
        }
        // Kahn's algorithm, ties broken by declaration order
        let mut indegree: Vec<usize> = preds.iter().map(Vec::len).collect();
        let mut ready: VecDeque<usize> = (0..graph.nodes.len()).filter(|i| indegree[*i] == 0).collect();
        let mut order = Vec::with_capacity(graph.nodes.len());
        while let Some(i) = ready.pop_front() {
            order.push(i);
            for &s in &succs[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.push_back(s);
                }
            }
        }
        if order.len() != graph.nodes.len() {
            return Err(Error::Graph("architecture graph has a cycle".into()));
        }
        Ok(Self {
            graph,
            index,
            preds,
            succs,
            order,
        })
    }

    fn node(&self, i: usize) -> &'g LayerNode {
        &self.graph.nodes[i]
    }
}

fn infer(ix: &Indexed<'_>, input: Shape, issues: &mut Vec<Violation>, strict: bool) -> Result<Vec<Shape>> {
    let mut shapes = vec![(0, 0, 0); ix.graph.nodes.len()];
    for &i in &ix.order {
        let n = ix.node(i);
        let ins: Vec<Shape> = ix.preds[i].iter().map(|p| shapes[*p]).collect();
        let arity = |want: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::Graph(format!(
                    "node `{}` ({:?}) needs {want} input(s), has {}",
                    n.id,
                    n.kind,
                    ins.len()
                )))
            }
        };
        let conv_channels = || {
            n.channels_out
                .filter(|c| *c > 0)
                .ok_or_else(|| Error::Graph(format!("node `{}` needs a positive channels_out", n.id)))
        };
        let factor = || {
            if n.spatial_factor < 1 {
                Err(Error::Graph(format!("node `{}` has spatial_factor 0", n.id)))
            } else {
                Ok(n.spatial_factor)
            }
        };
        shapes[i] = match n.kind {
            NodeKind::Input => {
                arity("no", ins.is_empty())?;
                input
            }
            NodeKind::Conv | NodeKind::BottleneckConv | NodeKind::OutputHead => {
                arity("exactly one", ins.len() == 1)?;
                (ins[0].0, ins[0].1, conv_channels()?)
            }
            NodeKind::Maxpool => {
                arity("exactly one", ins.len() == 1)?;
                let f = factor()?;
                let (h, w, c) = ins[0];
                if h % f != 0 || w % f != 0 {
                    return Err(Error::Graph(format!(
                        "input {}x{} is not divisible by 2^pools; `{}` receives {h}x{w}",
                        input.0, input.1, n.id
                    )));
                }
                (h / f, w / f, c)
            }
            NodeKind::Upsample => {
                arity("exactly one", ins.len() == 1)?;
                let f = factor()?;
                (ins[0].0 * f, ins[0].1 * f, ins[0].2)
            }
            NodeKind::Add => {
                arity("at least two", ins.len() >= 2)?;
                if ins.iter().any(|s| *s != ins[0]) {
                    let operands: Vec<String> = ix.preds[i].iter().map(|p| ix.node(*p).id.clone()).collect();
                    let detail: Vec<String> = ix.preds[i]
                        .iter()
                        .zip(&ins)
                        .map(|(p, s)| format!("`{}` {}x{}x{}", ix.node(*p).id, s.0, s.1, s.2))
                        .collect();
                    let message = format!("add `{}` has unequal operands: {}", n.id, detail.join(" vs "));
                    if strict {
                        return Err(Error::Graph(format!("{message}; insert a bottleneck conv")));
                    }
                    let mut nodes = vec![n.id.clone()];
                    nodes.extend(operands);
                    issues.push(Violation {
                        rule: Rule::R3,
                        nodes,
                        message,
                    });
                }
                let c = ins.iter().map(|s| s.2).max().expect("non-empty");
                (ins[0].0, ins[0].1, c)
            }
            NodeKind::Concat => {
                arity("at least one", !ins.is_empty())?;
                if ins.iter().any(|s| (s.0, s.1) != (ins[0].0, ins[0].1)) {
                    let message = format!("concat `{}` mixes spatial sizes", n.id);
                    if strict {
                        return Err(Error::Graph(message));
                    }
                    issues.push(Violation {
                        rule: Rule::R4,
                        nodes: vec![n.id.clone()],
                        message,
                    });
                }
                (ins[0].0, ins[0].1, ins.iter().map(|s| s.2).sum())
            }
        };
    }
    Ok(shapes)
}

/// Shape of every node; fails on indivisible inputs and unequal `add` operands.
pub fn infer_shapes(graph: &ArchGraph, input: Shape) -> Result<BTreeMap<String, Shape>> {
    let ix = Indexed::new(graph)?;
    let shapes = infer(&ix, input, &mut Vec::new(), true)?;
    Ok(graph.nodes.iter().map(|n| n.id.clone()).zip(shapes).collect())
}

fn sorted_ids(ids: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut v: Vec<String> = ids.into_iter().collect();
    v.sort();
    v
}

/// All rule violations; an empty list means the graph conforms.
///
/// Structural errors (cycles, unknown ids, wrong arity, indivisible input)
/// are returned as `Err`, not as violations.
pub fn validate_unet_rules(graph: &ArchGraph, input: Shape) -> Result<Vec<Violation>> {
    let ix = Indexed::new(graph)?;
    let mut out = Vec::new();
    let shapes = infer(&ix, input, &mut out, false)?;
    let of_kind = |k: NodeKind| (0..graph.nodes.len()).filter(move |i| graph.nodes[*i].kind == k);

    // R1
    let pools: Vec<usize> = of_kind(NodeKind::Maxpool).collect();
    let ups: Vec<usize> = of_kind(NodeKind::Upsample)
        .filter(|i| graph.nodes[*i].role != Some(Role::Pyramid))
        .collect();
    if pools.len() != ups.len() {
        out.push(Violation {
            rule: Rule::R1,
            nodes: sorted_ids(pools.iter().chain(&ups).map(|i| graph.nodes[*i].id.clone())),
            message: format!("{} maxpool layers but {} decoder upsample layers", pools.len(), ups.len()),
        });
    }

    // R2
    for (enc, merge) in &graph.skips {
        let (e, m) = (ix.index[enc.as_str()], ix.index[merge.as_str()]);
        let direct = ix.succs[e].contains(&m);
        let via_bottleneck = ix.succs[e]
            .iter()
            .any(|s| graph.nodes[*s].kind == NodeKind::BottleneckConv && ix.succs[*s].contains(&m));
        if graph.nodes[m].kind != NodeKind::Add {
            out.push(Violation {
                rule: Rule::R2,
                nodes: vec![enc.clone(), merge.clone()],
                message: format!("skip from `{enc}` merges via {:?}, not add", graph.nodes[m].kind),
            });
        } else if !direct && !via_bottleneck {
            out.push(Violation {
                rule: Rule::R2,
                nodes: vec![enc.clone(), merge.clone()],
                message: format!("skip from `{enc}` does not reach `{merge}`"),
            });
        }
    }

    // R4
    let levels: BTreeSet<u32> = graph
        .nodes
        .iter()
        .filter(|n| n.role == Some(Role::Decoder))
        .filter_map(|n| n.level)
        .collect();
    let pyramids: Vec<usize> = of_kind(NodeKind::Concat)
        .filter(|i| graph.nodes[*i].role == Some(Role::Pyramid))
        .collect();
    if pyramids.len() != 1 {
        out.push(Violation {
            rule: Rule::R4,
            nodes: sorted_ids(pyramids.iter().map(|i| graph.nodes[*i].id.clone())),
            message: format!("expected one pyramid concat, found {}", pyramids.len()),
        });
    } else {
        let p = pyramids[0];
        let mut gathered: BTreeMap<u32, Vec<String>> = BTreeMap::new();
        for &src in &ix.preds[p] {
            // walk back through pyramid-only nodes to the decoder feature
            let mut cur = src;
            while graph.nodes[cur].role == Some(Role::Pyramid) && ix.preds[cur].len() == 1 {
                cur = ix.preds[cur][0];
            }
            let n = &graph.nodes[cur];
            match (n.role, n.level) {
                (Some(Role::Decoder), Some(l)) => gathered.entry(l).or_default().push(graph.nodes[src].id.clone()),
                _ => out.push(Violation {
                    rule: Rule::R4,
                    nodes: vec![graph.nodes[p].id.clone(), graph.nodes[src].id.clone()],
                    message: format!("pyramid input `{}` does not come from a decoder level", graph.nodes[src].id),
                }),
            }
            let s = shapes[src];
            if (s.0, s.1) != (input.0, input.1) {
                out.push(Violation {
                    rule: Rule::R4,
                    nodes: vec![graph.nodes[p].id.clone(), graph.nodes[src].id.clone()],
                    message: format!(
                        "pyramid input `{}` is {}x{}, not upsampled to {}x{}",
                        graph.nodes[src].id, s.0, s.1, input.0, input.1
                    ),
                });
            }
        }
        for (l, srcs) in &gathered {
            if srcs.len() > 1 {
                let mut nodes = vec![graph.nodes[p].id.clone()];
                nodes.extend(sorted_ids(srcs.iter().cloned()));
                out.push(Violation {
                    rule: Rule::R4,
                    nodes,
                    message: format!("decoder level {l} gathered {} times", srcs.len()),
                });
            }
        }
        let missing: Vec<String> = levels
            .iter()
            .filter(|l| !gathered.contains_key(l))
            .map(u32::to_string)
            .collect();
        if !missing.is_empty() {
            out.push(Violation {
                rule: Rule::R4,
                nodes: vec![graph.nodes[p].id.clone()],
                message: format!("decoder levels {} are not gathered", missing.join(", ")),
            });
        }
    }

    // R5
    let heads: Vec<usize> = of_kind(NodeKind::OutputHead).collect();
    if heads.len() != 1 {
        out.push(Violation {
            rule: Rule::R5,
            nodes: sorted_ids(heads.iter().map(|i| graph.nodes[*i].id.clone())),
            message: format!("expected one output head, found {}", heads.len()),
        });
    }
    for &h in &heads {
        let n = &graph.nodes[h];
        if n.kernel != 1 || n.channels_out != Some(1) {
            out.push(Violation {
                rule: Rule::R5,
                nodes: vec![n.id.clone()],
                message: format!(
                    "output head must be a 1x1 conv to one channel, is {k}x{k} to {:?}",
                    n.channels_out,
                    k = n.kernel
                ),
            });
        }
        if !ix.succs[h].is_empty() {
            out.push(Violation {
                rule: Rule::R5,
                nodes: vec![n.id.clone()],
                message: "output head has consumers".into(),
            });
        }
    }
    out.sort_by(|a, b| (a.rule, &a.nodes).cmp(&(b.rule, &b.nodes)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    Resnet152,
    Densenet169,
    Xception,
    InceptionResnetV2,
}

impl Encoder {
    pub const ALL: [Encoder; 4] = [
        Encoder::Resnet152,
        Encoder::Densenet169,
        Encoder::Xception,
        Encoder::InceptionResnetV2,
    ];

    /// Feature widths at strides 2, 4, 8, 16 and 32 (descriptive fixture data).
    pub fn level_channels(self) -> [usize; 5] {
        match self {
            Encoder::Resnet152 => [64, 256, 512, 1024, 2048],
            Encoder::Densenet169 => [64, 256, 512, 1280, 1664],
            Encoder::Xception => [64, 128, 256, 728, 2048],
            Encoder::InceptionResnetV2 => [64, 192, 320, 1088, 1536],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Encoder::Resnet152 => "resnet152",
            Encoder::Densenet169 => "densenet169",
            Encoder::Xception => "xception",
            Encoder::InceptionResnetV2 => "inception_resnet_v2",
        }
    }
}

impl FromStr for Encoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Encoder::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown encoder `{s}`")))
    }
}

/// Decoder widths from full resolution (level 0) to the deepest level.
pub const DECODER_CHANNELS: [usize; 6] = [32, 64, 64, 128, 256, 256];
pub const FULL_RES_CHANNELS: usize = 32;
pub const PYRAMID_CHANNELS: usize = 64;
pub const DEFAULT_INPUT: Shape = (192, 256, 3);

/// Level-summary encoder/decoder graph with skip adds and a pyramid head.
pub fn builtin_graph(encoder: Encoder) -> ArchGraph {
    let widths = encoder.level_channels();
    let mut enc_widths = vec![FULL_RES_CHANNELS];
    enc_widths.extend(widths);
    let depth = widths.len();
    let mut g = ArchGraph::default();
    let node = |g: &mut ArchGraph, n: LayerNode, from: &[&str]| {
        for f in from {
            g.edges.push(((*f).to_owned(), n.id.clone()));
        }
        g.nodes.push(n);
    };

    node(&mut g, LayerNode::new("input", NodeKind::Input), &[]);
    node(
        &mut g,
        LayerNode::new("enc0", NodeKind::Conv).channels(enc_widths[0]).role(Role::Encoder, 0),
        &["input"],
    );
    for l in 1..=depth {
        let pool = format!("pool{l}");
        node(&mut g, LayerNode::new(&pool, NodeKind::Maxpool), &[&format!("enc{}", l - 1)]);
        node(
            &mut g,
            LayerNode::new(format!("enc{l}"), NodeKind::Conv).channels(enc_widths[l]).role(Role::Encoder, l as u32),
            &[&pool],
        );
    }
    node(
        &mut g,
        LayerNode::new(format!("dec{depth}"), NodeKind::Conv)
            .channels(DECODER_CHANNELS[depth])
            .role(Role::Decoder, depth as u32),
        &[&format!("enc{depth}")],
    );
    for l in (0..depth).rev() {
        let up = format!("up{l}");
        let add = format!("add{l}");
        let enc = format!("enc{l}");
        let carried = DECODER_CHANNELS[l + 1];
        node(&mut g, LayerNode::new(&up, NodeKind::Upsample), &[&format!("dec{}", l + 1)]);
        let skip_src = if enc_widths[l] == carried {
            enc.clone()
        } else {
            let b = format!("bottleneck{l}");
            node(&mut g, LayerNode::new(&b, NodeKind::BottleneckConv).channels(carried).kernel(1), &[&enc]);
            b
        };
        node(&mut g, LayerNode::new(&add, NodeKind::Add), &[&up, &skip_src]);
        g.skips.push((enc, add.clone()));
        node(
            &mut g,
            LayerNode::new(format!("dec{l}"), NodeKind::Conv)
                .channels(DECODER_CHANNELS[l])
                .role(Role::Decoder, l as u32),
            &[&add],
        );
    }
    let mut gathered = Vec::new();
    for l in 0..=depth {
        let mut src = format!("dec{l}");
        for step in 0..l {
            let id = format!("pyr{l}_up{step}");
            node(&mut g, LayerNode::new(&id, NodeKind::Upsample).pyramid(), &[&src]);
            src = id;
        }
        gathered.push(src);
    }
    let refs: Vec<&str> = gathered.iter().map(String::as_str).collect();
    node(&mut g, LayerNode::new("pyramid", NodeKind::Concat).pyramid(), &refs);
    node(
        &mut g,
        LayerNode::new("pyramid_conv", NodeKind::Conv).channels(PYRAMID_CHANNELS).pyramid(),
        &["pyramid"],
    );
    node(
        &mut g,
        LayerNode::new("head", NodeKind::OutputHead).channels(1).kernel(1),
        &["pyramid_conv"],
    );
    g
}

pub fn read_graph(path: &Path) -> Result<ArchGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rules(v: &[Violation]) -> Vec<Rule> {
        v.iter().map(|x| x.rule).collect()
    }

    fn pools_only(n: usize) -> ArchGraph {
        let mut g = ArchGraph::default();
        g.nodes.push(LayerNode::new("in", NodeKind::Input));
        for i in 0..n {
            g.nodes.push(LayerNode::new(format!("p{i}"), NodeKind::Maxpool));
            let prev = if i == 0 { "in".to_owned() } else { format!("p{}", i - 1) };
            g.edges.push((prev, format!("p{i}")));
        }
        g
    }

    #[test]
    fn divisibility() {
        let s = infer_shapes(&pools_only(5), (192, 256, 3)).unwrap();
        assert_eq!(s["p4"], (6, 8, 3));
        assert!(infer_shapes(&pools_only(5), (100, 100, 3)).is_err());
    }

    /// input -> e0(8) -> pool -> e1(16) -> d1(16) -> up -> add(up, e0) -> d0 -> pyramid -> head
    fn toy(bottleneck: bool) -> ArchGraph {
        let mut g = ArchGraph {
            nodes: vec![
                LayerNode::new("in", NodeKind::Input),
                LayerNode::new("e0", NodeKind::Conv).channels(8).role(Role::Encoder, 0),
                LayerNode::new("pool", NodeKind::Maxpool),
                LayerNode::new("e1", NodeKind::Conv).channels(16).role(Role::Encoder, 1),
                LayerNode::new("d1", NodeKind::Conv).channels(16).role(Role::Decoder, 1),
                LayerNode::new("up", NodeKind::Upsample),
                LayerNode::new("add", NodeKind::Add),
                LayerNode::new("d0", NodeKind::Conv).channels(8).role(Role::Decoder, 0),
                LayerNode::new("pup", NodeKind::Upsample).pyramid(),
                LayerNode::new("cat", NodeKind::Concat).pyramid(),
                LayerNode::new("head", NodeKind::OutputHead).channels(1).kernel(1),
            ],
            edges: [
                ("in", "e0"),
                ("e0", "pool"),
                ("pool", "e1"),
                ("e1", "d1"),
                ("d1", "up"),
                ("up", "add"),
                ("add", "d0"),
                ("d1", "pup"),
                ("d0", "cat"),
                ("pup", "cat"),
                ("cat", "head"),
            ]
            .iter()
            .map(|(a, b)| ((*a).to_owned(), (*b).to_owned()))
            .collect(),
            skips: vec![("e0".into(), "add".into())],
        };
        if bottleneck {
            g.nodes.push(LayerNode::new("b0", NodeKind::BottleneckConv).channels(16).kernel(1));
            g.edges.push(("e0".into(), "b0".into()));
            g.edges.push(("b0".into(), "add".into()));
        } else {
            g.edges.push(("e0".into(), "add".into()));
        }
        g
    }

    #[test]
    fn toy_graph_needs_bottleneck() {
        let v = validate_unet_rules(&toy(false), (8, 8, 3)).unwrap();
        assert_eq!(rules(&v), vec![Rule::R3]);
        assert!(v[0].nodes.contains(&"e0".to_owned()) && v[0].nodes.contains(&"up".to_owned()));
        assert!(infer_shapes(&toy(false), (8, 8, 3)).is_err());
        assert!(validate_unet_rules(&toy(true), (8, 8, 3)).unwrap().is_empty());
        let s = infer_shapes(&toy(true), (8, 8, 3)).unwrap();
        assert_eq!(s["head"], (8, 8, 1));
    }

    #[test]
    fn builtins_validate_clean() {
        for e in Encoder::ALL {
            let g = builtin_graph(e);
            assert_eq!(validate_unet_rules(&g, DEFAULT_INPUT).unwrap(), vec![], "{e:?}");
            let s = infer_shapes(&g, DEFAULT_INPUT).unwrap();
            assert_eq!(s["head"], (192, 256, 1));
            assert_eq!(s["enc5"], (6, 8, e.level_channels()[4]));
            let pools = g.nodes.iter().filter(|n| n.kind == NodeKind::Maxpool).count();
            assert_eq!(pools, 5);
            let json = serde_json::to_string(&g).unwrap();
            assert_eq!(serde_json::from_str::<ArchGraph>(&json).unwrap(), g);
        }
        assert!("vgg16".parse::<Encoder>().is_err());
    }

    fn drop_node(g: &mut ArchGraph, id: &str) {
        let from: Vec<String> = g.edges.iter().filter(|(_, b)| b == id).map(|(a, _)| a.clone()).collect();
        let to: Vec<String> = g.edges.iter().filter(|(a, _)| a == id).map(|(_, b)| b.clone()).collect();
        g.edges.retain(|(a, b)| a != id && b != id);
        for f in &from {
            for t in &to {
                g.edges.push((f.clone(), t.clone()));
            }
        }
        g.nodes.retain(|n| n.id != id);
    }

    #[test]
    fn mutations_are_flagged() {
        let mut g = builtin_graph(Encoder::Resnet152);
        drop_node(&mut g, "up2");
        let v = validate_unet_rules(&g, DEFAULT_INPUT).unwrap();
        assert!(rules(&v).contains(&Rule::R1), "{v:?}");

        let mut g = builtin_graph(Encoder::Xception);
        drop_node(&mut g, "bottleneck4");
        let v = validate_unet_rules(&g, DEFAULT_INPUT).unwrap();
        assert_eq!(rules(&v), vec![Rule::R3]);
        assert!(v[0].nodes.contains(&"enc4".to_owned()) && v[0].nodes.contains(&"up4".to_owned()));

        let mut g = builtin_graph(Encoder::Densenet169);
        g.nodes.iter_mut().find(|n| n.id == "add1").unwrap().kind = NodeKind::Concat;
        let v = validate_unet_rules(&g, DEFAULT_INPUT).unwrap();
        assert!(rules(&v).contains(&Rule::R2), "{v:?}");

        let mut g = builtin_graph(Encoder::InceptionResnetV2);
        g.nodes.iter_mut().find(|n| n.id == "head").unwrap().kernel = 3;
        assert_eq!(rules(&validate_unet_rules(&g, DEFAULT_INPUT).unwrap()), vec![Rule::R5]);

        let mut g = builtin_graph(Encoder::Resnet152);
        g.edges.retain(|(a, b)| !(a == "pyr3_up2" && b == "pyramid"));
        g.edges.push(("dec3".into(), "pyramid".into()));
        drop_node(&mut g, "pyr3_up2");
        assert!(rules(&validate_unet_rules(&g, DEFAULT_INPUT).unwrap()).contains(&Rule::R4));
    }

    #[test]
    fn structural_errors() {
        let mut g = toy(true);
        g.edges.push(("head".into(), "in".into()));
        assert!(validate_unet_rules(&g, (8, 8, 3)).is_err());
        let mut g = toy(true);
        g.edges.push(("ghost".into(), "in".into()));
        assert!(infer_shapes(&g, (8, 8, 3)).is_err());
    }

    fn relabel(g: &ArchGraph, order: &[usize]) -> ArchGraph {
        let names: HashMap<String, String> = g
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), format!("n{}", order[i])))
            .collect();
        let mut nodes: Vec<LayerNode> = g
            .nodes
            .iter()
            .map(|n| LayerNode {
                id: names[&n.id].clone(),
                ..n.clone()
            })
            .collect();
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let map = |(a, b): &(String, String)| (names[a].clone(), names[b].clone());
        ArchGraph {
            nodes,
            edges: g.edges.iter().map(map).collect(),
            skips: g.skips.iter().map(map).collect(),
        }
    }

    fn profile(v: &[Violation]) -> BTreeMap<Rule, usize> {
        let mut m = BTreeMap::new();
        for x in v {
            *m.entry(x.rule).or_default() += 1;
        }
        m
    }

    proptest! {
        #[test]
        fn violations_survive_relabeling(
            enc in 0usize..4,
            mutation in 0usize..4,
            order in Just((0..60).collect::<Vec<usize>>()).prop_shuffle(),
        ) {
            let mut g = builtin_graph(Encoder::ALL[enc]);
            match mutation {
                0 => drop_node(&mut g, "up1"),
                1 => drop_node(&mut g, "bottleneck2"),
                2 => g.nodes.iter_mut().find(|n| n.id == "add0").unwrap().kind = NodeKind::Concat,
                _ => {}
            }
            let order: Vec<usize> = order.into_iter().filter(|i| *i < g.nodes.len() + 40).collect();
            let before = validate_unet_rules(&g, DEFAULT_INPUT).unwrap();
            let after = validate_unet_rules(&relabel(&g, &order), DEFAULT_INPUT).unwrap();
            prop_assert_eq!(profile(&before), profile(&after));
        }
    }
}
