//! Region proposals grown by greedy agglomeration of fine superpixels, plus
//! loading of externally computed proposals.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::MergeWeights;
use crate::error::{Error, Result};
use crate::features::{project, FeatureVector, PcaModel};
use crate::imaging::{load_mask_png, Mask, RasterImage, Rect, SuperpixelPartition};
use crate::retrieval::{object_feature, Dictionary};
use crate::sparsecode::{coding_length, omp_encode, tag_probabilities, OmpConfig};

const HIST_BINS: usize = 8;
const HIST_LEN: usize = HIST_BINS * 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectProposal {
    pub mask: Mask,
    pub objectness: f64,
    /// Fine regions whose union is the mask; empty for loaded proposals.
    pub regions: Vec<u32>,
    pub feature: Option<FeatureVector>,
    pub tag_probability: Option<f64>,
}

impl ObjectProposal {
    pub fn new(mask: Mask, objectness: f64) -> Self {
        ObjectProposal {
            mask,
            objectness,
            regions: Vec::new(),
            feature: None,
            tag_probability: None,
        }
    }
}

struct Node {
    size: u64,
    bbox: Rect,
    hist: [f64; HIST_LEN],
    border: u64,
    neighbors: BTreeMap<usize, u64>,
    children: Option<(usize, usize)>,
    alive: bool,
    score: f64,
}

struct Pair {
    sim: f64,
    a: usize,
    b: usize,
}

impl PartialEq for Pair {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pair {}

impl PartialOrd for Pair {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pair {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
    }
}

fn intersection(a: &[f64; HIST_LEN], b: &[f64; HIST_LEN]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum::<f64>() / 3.0
}

struct Merger {
    nodes: Vec<Node>,
    total: f64,
    weights: MergeWeights,
}

impl Merger {
    fn similarity(&self, a: usize, b: usize) -> f64 {
        let (na, nb) = (&self.nodes[a], &self.nodes[b]);
        let joint = (na.size + nb.size) as f64;
        let fill = na.bbox.union(&nb.bbox).area() as f64 - joint;
        self.weights.color * intersection(&na.hist, &nb.hist)
            + self.weights.size * (1.0 - joint / self.total)
            + self.weights.fill * (1.0 - fill / self.total)
    }

    /// Size fraction times colour contrast against the neighbours, scaled by
    /// the share of the perimeter that lies inside the image.
    fn score(&self, n: usize) -> f64 {
        let node = &self.nodes[n];
        let inner: u64 = node.neighbors.values().sum();
        let perimeter = (inner + node.border) as f64;
        if inner == 0 {
            return 0.0;
        }
        let contrast: f64 = node
            .neighbors
            .iter()
            .map(|(&c, &len)| len as f64 * (1.0 - intersection(&node.hist, &self.nodes[c].hist)))
            .sum::<f64>()
            / perimeter;
        node.size as f64 / self.total * contrast * (inner as f64 / perimeter)
    }

    fn merge(&mut self, a: usize, b: usize) -> usize {
        let id = self.nodes.len();
        let (sa, sb) = (self.nodes[a].size as f64, self.nodes[b].size as f64);
        let mut hist = [0.0; HIST_LEN];
        for (k, h) in hist.iter_mut().enumerate() {
            *h = (self.nodes[a].hist[k] * sa + self.nodes[b].hist[k] * sb) / (sa + sb);
        }
        let mut neighbors = BTreeMap::new();
        for src in [a, b] {
            for (&c, &len) in &self.nodes[src].neighbors {
                if c != a && c != b {
                    *neighbors.entry(c).or_insert(0) += len;
                }
            }
        }
        for (&c, &len) in &neighbors {
            let nc = &mut self.nodes[c].neighbors;
            nc.remove(&a);
            nc.remove(&b);
            nc.insert(id, len);
        }
        let node = Node {
            size: self.nodes[a].size + self.nodes[b].size,
            bbox: self.nodes[a].bbox.union(&self.nodes[b].bbox),
            hist,
            border: self.nodes[a].border + self.nodes[b].border,
            neighbors,
            children: Some((a, b)),
            alive: true,
            score: 0.0,
        };
        self.nodes[a].alive = false;
        self.nodes[b].alive = false;
        self.nodes.push(node);
        self.nodes[id].score = self.score(id);
        id
    }

    fn leaves(&self, n: usize, out: &mut Vec<u32>) {
        let mut stack = vec![n];
        while let Some(k) = stack.pop() {
            match self.nodes[k].children {
                Some((a, b)) => stack.extend([a, b]),
                None => out.push(k as u32),
            }
        }
    }
}

/// Greedily merges the most similar adjacent pair of fine regions until one
/// region remains. Every region formed along the way, including the fine
/// regions themselves, is a candidate. Returns the `max_count` candidates
/// with the highest normalized objectness; ties go to the smaller mask, then
/// the earlier-created region.
pub fn generate_proposals(
    img: &RasterImage,
    fine: &SuperpixelPartition,
    max_count: usize,
    weights: &MergeWeights,
) -> Result<Vec<ObjectProposal>> {
    if max_count == 0 {
        return Err(Error::InvalidParameter("maxCount must be at least 1".into()));
    }
    let (w, h) = (img.width(), img.height());
    if (fine.width(), fine.height()) != (w, h) {
        return Err(Error::dims(img.pixel_count(), fine.labels().len()));
    }
    let n = fine.region_count();
    let labels = fine.labels();
    let mut hists = vec![[0.0; HIST_LEN]; n];
    let mut borders = vec![0u64; n];
    let mut edges: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); n];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let r = labels[i] as usize;
            let px = img.pixel_at(i);
            for (c, v) in px.iter().enumerate() {
                hists[r][c * HIST_BINS + (*v as usize * HIST_BINS / 256)] += 1.0;
            }
            borders[r] += u64::from(x == 0) + u64::from(x + 1 == w);
            borders[r] += u64::from(y == 0) + u64::from(y + 1 == h);
            if x + 1 < w {
                let s = labels[i + 1] as usize;
                if s != r {
                    *edges[r].entry(s).or_insert(0) += 1;
                    *edges[s].entry(r).or_insert(0) += 1;
                }
            }
            if y + 1 < h {
                let s = labels[i + w as usize] as usize;
                if s != r {
                    *edges[r].entry(s).or_insert(0) += 1;
                    *edges[s].entry(r).or_insert(0) += 1;
                }
            }
        }
    }
    let mut merger = Merger {
        nodes: Vec::with_capacity(2 * n),
        total: img.pixel_count() as f64,
        weights: *weights,
    };
    for (r, (mut hist, neighbors)) in hists.into_iter().zip(edges).enumerate() {
        let stats = fine.stats(r as u32);
        hist.iter_mut().for_each(|v| *v /= stats.pixel_count as f64);
        merger.nodes.push(Node {
            size: stats.pixel_count as u64,
            bbox: stats.bbox,
            hist,
            border: borders[r],
            neighbors,
            children: None,
            alive: true,
            score: 0.0,
        });
    }
    for r in 0..n {
        merger.nodes[r].score = merger.score(r);
    }

    let mut heap = BinaryHeap::new();
    for a in 0..n {
        for &b in merger.nodes[a].neighbors.keys() {
            if a < b {
                heap.push(Pair {
                    sim: merger.similarity(a, b),
                    a,
                    b,
                });
            }
        }
    }
    while let Some(Pair { a, b, .. }) = heap.pop() {
        if !merger.nodes[a].alive || !merger.nodes[b].alive {
            continue;
        }
        let id = merger.merge(a, b);
        let around: Vec<usize> = merger.nodes[id].neighbors.keys().copied().collect();
        for c in around {
            heap.push(Pair {
                sim: merger.similarity(c, id),
                a: c,
                b: id,
            });
        }
    }

    let max_score = merger.nodes.iter().map(|n| n.score).fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..merger.nodes.len()).collect();
    order.sort_by(|&x, &y| {
        let (nx, ny) = (&merger.nodes[x], &merger.nodes[y]);
        ny.score
            .total_cmp(&nx.score)
            .then(nx.size.cmp(&ny.size))
            .then(x.cmp(&y))
    });
    let mut out = Vec::with_capacity(max_count.min(order.len()));
    let mut member = vec![false; n];
    for &k in order.iter().take(max_count) {
        let mut regions = Vec::new();
        merger.leaves(k, &mut regions);
        regions.sort_unstable();
        member.iter_mut().for_each(|m| *m = false);
        for &r in &regions {
            member[r as usize] = true;
        }
        let bits = labels.iter().map(|&l| member[l as usize]).collect();
        let objectness = if max_score > 0.0 {
            merger.nodes[k].score / max_score
        } else {
            0.0
        };
        out.push(ObjectProposal {
            mask: Mask::from_bits(w, h, bits)?,
            objectness,
            regions,
            feature: None,
            tag_probability: None,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProposalFile {
    pub width: u32,
    pub height: u32,
    pub proposals: Vec<ProposalRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub objectness: f64,
    pub rle: Vec<u32>,
}

/// Reads proposals from an RLE JSON file, or from a directory of binary
/// mask PNGs (one proposal per file, in file-name order, objectness 1).
pub fn load_proposals(path: &Path, width: u32, height: u32) -> Result<Vec<ObjectProposal>> {
    let proposals = if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        let mut out = Vec::with_capacity(files.len());
        for f in files {
            let mask = load_mask_png(&f)?;
            if (mask.width(), mask.height()) != (width, height) {
                return Err(Error::dims(
                    (width * height) as usize,
                    (mask.width() * mask.height()) as usize,
                ));
            }
            out.push(ObjectProposal::new(mask, 1.0));
        }
        out
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::UnreadableFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let file: ProposalFile =
            serde_json::from_slice(&bytes).map_err(|e| Error::MalformedFile(e.to_string()))?;
        if (file.width, file.height) != (width, height) {
            return Err(Error::dims(
                (width * height) as usize,
                (file.width * file.height) as usize,
            ));
        }
        file.proposals
            .into_iter()
            .map(|p| {
                if !(0.0..=1.0).contains(&p.objectness) {
                    return Err(Error::MalformedFile(format!(
                        "objectness {} outside [0, 1]",
                        p.objectness
                    )));
                }
                Ok(ObjectProposal::new(Mask::from_rle(width, height, &p.rle)?, p.objectness))
            })
            .collect::<Result<_>>()?
    };
    for (k, p) in proposals.iter().enumerate() {
        if p.mask.is_empty() {
            return Err(Error::MalformedFile(format!("proposal {k} is empty")));
        }
        if !p.mask.is_connected() {
            log::warn!("proposal {k} is not 4-connected");
        }
    }
    Ok(proposals)
}

/// Codes every proposal's masked-crop feature against the weak and strong
/// dictionaries and fills in `feature` and `tag_probability`.
pub fn score_proposals(
    props: &mut [ObjectProposal],
    img: &RasterImage,
    weak: &Dictionary,
    strong: Option<&Dictionary>,
    pca: &PcaModel,
    cfg: &OmpConfig,
    q: f64,
) -> Result<()> {
    if props.is_empty() {
        return Err(Error::InvalidParameter("no proposals to score".into()));
    }
    let coded: Vec<(FeatureVector, usize)> = props
        .par_iter()
        .map(|p| {
            let raw = object_feature(img, &p.mask)?.ok_or(Error::EmptyMask)?;
            let feature = project(pca, &raw)?;
            if feature.is_degenerate() {
                return Ok((feature, cfg.max_atoms + 1));
            }
            let w = omp_encode(weak, &feature, cfg)?;
            let s = strong.map(|d| omp_encode(d, &feature, cfg)).transpose()?;
            let len = coding_length(Some(&w), s.as_ref(), cfg)?;
            Ok((feature, len))
        })
        .collect::<Result<_>>()?;
    let lengths: Vec<usize> = coded.iter().map(|(_, l)| *l).collect();
    let probs = tag_probabilities(&lengths, q);
    for ((p, (feature, _)), prob) in props.iter_mut().zip(coded).zip(probs) {
        p.feature = Some(feature);
        p.tag_probability = Some(prob);
    }
    Ok(())
}
