//! Recursive blur decomposition into a sharp photo sequence.
//!
//! Level `ℓ` of the plan splits each interval of level `ℓ-1` at its midpoint.
//! The root decomposes the captured triplet; every other node decomposes a
//! half-blurred image from its parent, flanked by the sharp images at its
//! interval ends (the captured shorts at `t = 0` and `t = 1`, estimated
//! midpoints elsewhere). A node's noisy-input count is the number of flanks
//! that are captured shorts.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::{DecompositionTriple, ExposureTriplet, Image};
use crate::net::{check_dims, Decomposer};
use crate::{io, Error, Result};

pub const MAX_LEVELS: u32 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    /// 1-based recursion level.
    pub level: u32,
    /// Interval in units of `1 / 2^levels`.
    pub start: u64,
    pub end: u64,
    /// Index of the parent node; `None` for the root.
    pub parent: Option<usize>,
    pub noisy_inputs: usize,
}

impl PlanNode {
    pub fn midpoint(&self) -> u64 {
        (self.start + self.end) / 2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursionPlan {
    pub levels: u32,
    /// Breadth first: the root, then each level left to right.
    pub nodes: Vec<PlanNode>,
    /// Frames in the long exposure when declared (`2^levels - 1`).
    pub n_frames: Option<usize>,
}

/// Full binary decomposition plan of depth `levels`.
pub fn build_plan(levels: u32, n_frames: Option<usize>) -> Result<RecursionPlan> {
    if levels == 0 || levels > MAX_LEVELS {
        return Err(Error::Argument(format!("levels must be in 1..={MAX_LEVELS}, got {levels}")));
    }
    let span = 1u64 << levels;
    if let Some(n) = n_frames {
        if n as u64 != span - 1 {
            return Err(Error::Argument(format!("{levels} levels resolve {} frames, not {n}", span - 1)));
        }
    }
    let mut nodes = vec![PlanNode { level: 1, start: 0, end: span, parent: None, noisy_inputs: 2 }];
    let mut level_start = 0;
    for level in 2..=levels {
        let level_end = nodes.len();
        for p in level_start..level_end {
            let (a, b) = (nodes[p].start, nodes[p].end);
            let m = (a + b) / 2;
            for (s, e) in [(a, m), (m, b)] {
                let noisy = usize::from(s == 0) + usize::from(e == span);
                nodes.push(PlanNode { level, start: s, end: e, parent: Some(p), noisy_inputs: noisy });
            }
        }
        level_start = level_end;
    }
    Ok(RecursionPlan { levels, nodes, n_frames })
}

impl RecursionPlan {
    pub fn span(&self) -> u64 {
        1 << self.levels
    }

    pub fn output_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn level_nodes(&self, level: u32) -> impl Iterator<Item = (usize, &PlanNode)> {
        self.nodes.iter().enumerate().filter(move |(_, n)| n.level == level)
    }

    /// Timepoints `j / 2^levels` in increasing order.
    pub fn timepoints(&self) -> Vec<f64> {
        (1..self.span()).map(|j| j as f64 / self.span() as f64).collect()
    }

    /// 1-based frame indices of each node's midpoint (in node order) when
    /// `n_frames` is declared.
    pub fn frame_indices(&self) -> Option<Vec<usize>> {
        self.n_frames.map(|_| self.nodes.iter().map(|n| n.midpoint() as usize).collect())
    }

    /// Frames averaged by the image a node decomposes; single-frame nodes
    /// at the deepest level report `None`.
    fn node_frames(&self, node: &PlanNode) -> Option<usize> {
        self.n_frames.map(|_| (node.end - node.start - 1) as usize).filter(|&n| n >= 3)
    }
}

/// Weights used at each node.
#[derive(Clone, Copy, Debug)]
pub enum ModelSet<'a> {
    Single(&'a Decomposer),
    /// Models for two, one and zero noisy inputs.
    Triple { noisy2: &'a Decomposer, noisy1: &'a Decomposer, noisy0: &'a Decomposer },
}

impl<'a> ModelSet<'a> {
    pub fn for_noisy_count(&self, count: usize) -> Result<&'a Decomposer> {
        match (*self, count) {
            (ModelSet::Single(m), _) => Ok(m),
            (ModelSet::Triple { noisy2, .. }, 2) => Ok(noisy2),
            (ModelSet::Triple { noisy1, .. }, 1) => Ok(noisy1),
            (ModelSet::Triple { noisy0, .. }, 0) => Ok(noisy0),
            _ => Err(Error::Config(format!("no model for {count} noisy inputs"))),
        }
    }

    pub fn fingerprints(&self) -> Vec<String> {
        match self {
            ModelSet::Single(m) => vec![m.value_digest()],
            ModelSet::Triple { noisy2, noisy1, noisy0 } => [noisy2, noisy1, noisy0].iter().map(|m| m.value_digest()).collect(),
        }
    }

    fn check_compatible(&self) -> Result<()> {
        if let ModelSet::Triple { noisy2, noisy1, noisy0 } = self {
            if noisy2.config() != noisy1.config() || noisy1.config() != noisy0.config() {
                return Err(Error::Config("the three models have different network configurations".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhotoSequence {
    pub frames: Vec<Image>,
    pub timepoints: Vec<f64>,
    pub plan: RecursionPlan,
}

impl PhotoSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Decompose `triplet` recursively according to `plan`.
pub fn sequence(triplet: &ExposureTriplet, models: ModelSet<'_>, plan: &RecursionPlan) -> Result<PhotoSequence> {
    check_dims(triplet.dims())?;
    models.check_compatible()?;
    if let (Some(n), Some(declared)) = (plan.n_frames, triplet.n_frames_long) {
        if n != declared {
            return Err(Error::Config(format!("plan for {n} frames applied to a {declared}-frame long exposure")));
        }
    }
    let span = plan.span();
    // Sharp image at each plan time (index j in 0..=span), filled as computed.
    let mut sharp: Vec<Option<Image>> = vec![None; span as usize + 1];
    sharp[0] = Some(triplet.short_pre.clone());
    sharp[span as usize] = Some(triplet.short_post.clone());
    let mut outputs: Vec<Option<DecompositionTriple>> = vec![None; plan.nodes.len()];

    for level in 1..=plan.levels {
        let nodes: Vec<(usize, &PlanNode)> = plan.level_nodes(level).collect();
        let results = nodes
            .par_iter()
            .map(|&(i, node)| {
                let long = match node.parent {
                    None => triplet.long.clone(),
                    Some(p) => {
                        let parent = outputs[p].as_ref().expect("parent decomposed first");
                        if node.start == plan.nodes[p].start {
                            parent.first_half.clone()
                        } else {
                            parent.second_half.clone()
                        }
                    }
                };
                let flank = |t: u64| sharp[t as usize].clone().expect("flanking sharp image computed");
                let n_frames = match node.parent {
                    None => triplet.n_frames_long.or(plan.node_frames(node)),
                    Some(_) => plan.node_frames(node),
                };
                let input = ExposureTriplet::new(
                    flank(node.start),
                    long,
                    flank(node.end),
                    n_frames,
                    [node.start == 0, node.end == span],
                )?;
                let model = models.for_noisy_count(node.noisy_inputs)?;
                Ok((i, model.decompose(&input)?))
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, d) in results {
            sharp[plan.nodes[i].midpoint() as usize] = Some(d.mid_sharp.clone());
            outputs[i] = Some(d);
        }
    }
    let frames = sharp[1..span as usize].iter().map(|s| s.clone().expect("every midpoint computed")).collect();
    Ok(PhotoSequence { frames, timepoints: plan.timepoints(), plan: plan.clone() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exposure {
    Short,
    Long,
}

/// Split an alternating `S, L, S, L, ..., S` capture stream into triplets;
/// consecutive triplets share their middle short.
pub fn stream_triplets(captures: &[(Image, Exposure)]) -> Result<Vec<ExposureTriplet>> {
    if captures.len() < 3 || captures.len() % 2 == 0 {
        return Err(Error::Argument(format!(
            "an alternating capture needs S, L, S, ... , S (odd length >= 3); got {} exposures",
            captures.len()
        )));
    }
    for (i, (_, tag)) in captures.iter().enumerate() {
        let want = if i % 2 == 0 { Exposure::Short } else { Exposure::Long };
        if *tag != want {
            return Err(Error::Argument(format!(
                "exposure {} is {:?} but the alternation expects {:?}; every long needs a short on both sides",
                i + 1,
                tag,
                want
            )));
        }
    }
    captures
        .windows(3)
        .step_by(2)
        .map(|w| ExposureTriplet::new(w[0].0.clone(), w[1].0.clone(), w[2].0.clone(), None, [true, true]))
        .collect()
}

/// One sequence per long exposure, in capture order.
pub fn sequence_stream(captures: &[(Image, Exposure)], models: ModelSet<'_>, levels: u32) -> Result<Vec<PhotoSequence>> {
    let plan = build_plan(levels, None)?;
    stream_triplets(captures)?.iter().map(|t| sequence(t, models, &plan)).collect()
}

/// Parse an exposure list: one `S <file>` or `L <file>` entry per line;
/// blank lines and `#` comments are ignored.
pub fn parse_exposure_list(text: &str) -> Result<Vec<(Exposure, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (tag, file) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::format("exposure list", format!("line {}: expected `S <file>` or `L <file>`", n + 1)))?;
        let tag = match tag {
            "S" | "s" => Exposure::Short,
            "L" | "l" => Exposure::Long,
            other => return Err(Error::format("exposure list", format!("line {}: unknown tag {other:?}", n + 1))),
        };
        let file = file.trim();
        if file.contains("..") {
            return Err(Error::format("exposure list", format!("line {}: path {file:?} leaves the capture directory", n + 1)));
        }
        out.push((tag, file.to_string()));
    }
    Ok(out)
}

pub const EXPOSURE_LIST: &str = "exposures.txt";

/// Load `dir/exposures.txt` and its images.
pub fn load_capture_dir(dir: &Path) -> Result<Vec<(Image, Exposure)>> {
    let path = dir.join(EXPOSURE_LIST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_exposure_list(&text)?
        .into_iter()
        .map(|(tag, file)| Ok((io::read_image(&dir.join(file))?, tag)))
        .collect()
}

#[derive(Serialize)]
struct SequenceManifest<'a> {
    format: &'static str,
    version: u32,
    levels: u32,
    timepoints: &'a [f64],
    frames: Vec<String>,
    frame_indices: Option<Vec<usize>>,
    plan: &'a [PlanNode],
    weights: &'a [String],
    config: &'a serde_json::Value,
}

pub const SEQUENCE_MANIFEST: &str = "sequence.json";

/// Write frames as `frame_0001.png`, ... in time order plus a manifest of
/// timepoints, the plan, the weight digests and `config`.
pub fn export_sequence(
    dir: &Path,
    seq: &PhotoSequence,
    weight_digests: &[String],
    config: &serde_json::Value,
    sixteen_bit: bool,
) -> Result<()> {
    let paths = io::write_frames(dir, "frame_", &seq.frames, sixteen_bit)?;
    let frame_indices = seq.plan.n_frames.map(|_| (1..=seq.frames.len()).collect());
    let m = SequenceManifest {
        format: "photoseq-sequence",
        version: 1,
        levels: seq.plan.levels,
        timepoints: &seq.timepoints,
        frames: paths.iter().map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect(),
        frame_indices,
        plan: &seq.plan.nodes,
        weights: weight_digests,
        config,
    };
    let path = dir.join(SEQUENCE_MANIFEST);
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
