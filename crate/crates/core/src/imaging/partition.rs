use std::collections::VecDeque;
use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::mask::{Mask, Rect};
use crate::error::{Error, Result};

/// Granularity of a partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub pixel_count: usize,
    pub bbox: Rect,
    pub centroid: (f64, f64),
}

/// A labelling of every pixel into 4-connected regions `0..region_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelPartition {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    scale: Scale,
    adjacency: Vec<Vec<u32>>,
    stats: Vec<RegionStats>,
}

/// JSON sidecar written next to an exported label map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PartitionSidecar {
    pub region_count: usize,
    pub adjacency: Vec<[u32; 2]>,
}

impl SuperpixelPartition {
    /// Builds a partition from arbitrary integer labels.
    ///
    /// Labels are renumbered densely in raster order of first appearance.
    /// Fails if any label's pixels are not 4-connected.
    pub fn from_labels(width: u32, height: u32, labels: &[u32], scale: Scale) -> Result<Self> {
        let n = width as usize * height as usize;
        if labels.len() != n {
            return Err(Error::dims(n, labels.len()));
        }
        let keys: Vec<u64> = labels.iter().map(|&l| l as u64).collect();
        let (components, count) = label_components(width, height, &keys);
        let mut distinct: Vec<u32> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() != count {
            return Err(Error::InvalidParameter(format!(
                "{} labels form {} connected components",
                distinct.len(),
                count
            )));
        }
        Ok(Self::from_dense(width, height, components, count, scale))
    }

    /// Rebuilds a partition from labels that are already numbered `0..count`,
    /// keeping the numbering. Fails unless every label is present and
    /// 4-connected.
    pub fn from_numbered_labels(
        width: u32,
        height: u32,
        labels: Vec<u32>,
        scale: Scale,
    ) -> Result<Self> {
        let n = width as usize * height as usize;
        if labels.len() != n {
            return Err(Error::dims(n, labels.len()));
        }
        let count = labels.iter().max().map_or(0, |&m| m as usize + 1);
        let mut seen = vec![false; count];
        labels.iter().for_each(|&l| seen[l as usize] = true);
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidParameter("region numbering has gaps".into()));
        }
        let keys: Vec<u64> = labels.iter().map(|&l| l as u64).collect();
        if label_components(width, height, &keys).1 != count {
            return Err(Error::InvalidParameter("a region is not 4-connected".into()));
        }
        Ok(Self::from_dense(width, height, labels, count, scale))
    }

    /// `labels` must already be dense, connected and numbered `0..count`.
    pub(crate) fn from_dense(
        width: u32,
        height: u32,
        labels: Vec<u32>,
        count: usize,
        scale: Scale,
    ) -> Self {
        let w = width as usize;
        let mut stats: Vec<Option<RegionStats>> = vec![None; count];
        let mut sums = vec![(0.0f64, 0.0f64); count];
        let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); count];
        for (i, &l) in labels.iter().enumerate() {
            let (x, y) = ((i % w) as u32, (i / w) as u32);
            let entry = stats[l as usize].get_or_insert(RegionStats {
                pixel_count: 0,
                bbox: Rect::point(x, y),
                centroid: (0.0, 0.0),
            });
            entry.pixel_count += 1;
            entry.bbox.include(x, y);
            sums[l as usize].0 += x as f64;
            sums[l as usize].1 += y as f64;
            if x + 1 < width {
                let r = labels[i + 1];
                if r != l {
                    adjacency[l as usize].push(r);
                    adjacency[r as usize].push(l);
                }
            }
            if y + 1 < height {
                let d = labels[i + w];
                if d != l {
                    adjacency[l as usize].push(d);
                    adjacency[d as usize].push(l);
                }
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        let stats = stats
            .into_iter()
            .zip(sums)
            .map(|(s, (sx, sy))| {
                let mut s = s.expect("dense labels have no empty region");
                let n = s.pixel_count as f64;
                s.centroid = (sx / n, sy / n);
                s
            })
            .collect();
        SuperpixelPartition {
            width,
            height,
            labels,
            scale,
            adjacency,
            stats,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn region_count(&self) -> usize {
        self.stats.len()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_at(&self, x: u32, y: u32) -> u32 {
        self.labels[(y * self.width + x) as usize]
    }

    pub fn neighbors(&self, region: u32) -> &[u32] {
        &self.adjacency[region as usize]
    }

    pub fn are_adjacent(&self, a: u32, b: u32) -> bool {
        self.adjacency[a as usize].binary_search(&b).is_ok()
    }

    pub fn stats(&self, region: u32) -> &RegionStats {
        &self.stats[region as usize]
    }

    pub fn all_stats(&self) -> &[RegionStats] {
        &self.stats
    }

    /// Sorted unique adjacent pairs `(a, b)` with `a < b`.
    pub fn adjacency_pairs(&self) -> Vec<[u32; 2]> {
        let mut pairs = Vec::new();
        for (a, list) in self.adjacency.iter().enumerate() {
            for &b in list.iter().filter(|&&b| b > a as u32) {
                pairs.push([a as u32, b]);
            }
        }
        pairs
    }

    pub fn region_mask(&self, region: u32) -> Mask {
        Mask::from_bits(
            self.width,
            self.height,
            self.labels.iter().map(|&l| l == region).collect(),
        )
        .expect("labels cover the image")
    }

    /// Pixel indices grouped by region.
    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut members: Vec<Vec<u32>> = self
            .stats
            .iter()
            .map(|s| Vec::with_capacity(s.pixel_count))
            .collect();
        for (i, &l) in self.labels.iter().enumerate() {
            members[l as usize].push(i as u32);
        }
        members
    }

    /// Writes a 16-bit grayscale label map and its JSON sidecar.
    pub fn export(&self, png_path: &Path, sidecar_path: &Path) -> Result<()> {
        if self.region_count() > u16::MAX as usize + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} regions do not fit a 16-bit label map",
                self.region_count()
            )));
        }
        let raw: Vec<u16> = self.labels.iter().map(|&l| l as u16).collect();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width, self.height, raw).expect("labels cover the image");
        buf.save(png_path)
            .map_err(|e| Error::MalformedFile(e.to_string()))?;
        let sidecar = PartitionSidecar {
            region_count: self.region_count(),
            adjacency: self.adjacency_pairs(),
        };
        std::fs::write(sidecar_path, serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn import(png_path: &Path, scale: Scale) -> Result<Self> {
        let img = image::open(png_path).map_err(|e| Error::UnreadableFile {
            path: png_path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let gray = img.to_luma16();
        let (w, h) = gray.dimensions();
        let labels: Vec<u32> = gray.into_raw().into_iter().map(u32::from).collect();
        Self::from_labels(w, h, &labels, scale)
    }
}

/// 4-connected components of equal keys, numbered in raster order.
pub(crate) fn label_components(width: u32, height: u32, keys: &[u64]) -> (Vec<u32>, usize) {
    let (w, h) = (width as usize, height as usize);
    let mut out = vec![u32::MAX; keys.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..keys.len() {
        if out[start] != u32::MAX {
            continue;
        }
        out[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let key = keys[i];
            let mut visit = |j: usize| {
                if out[j] == u32::MAX && keys[j] == key {
                    out[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        next += 1;
    }
    (out, next as usize)
}

/// Merges every component flagged in `absorb` into its largest adjacent
/// component allowed by `may_join`, smallest components first. Components
/// with no admissible neighbour stay as they are. Returns dense labels.
pub(crate) fn absorb_components(
    width: u32,
    height: u32,
    components: &[u32],
    count: usize,
    absorb: &[bool],
    may_join: impl Fn(u32, u32) -> bool,
) -> (Vec<u32>, usize) {
    let w = width as usize;
    let h = height as usize;
    let mut members: Vec<Vec<u32>> = vec![Vec::new(); count];
    for (i, &c) in components.iter().enumerate() {
        members[c as usize].push(i as u32);
    }
    let mut parent: Vec<u32> = (0..count as u32).collect();
    let mut size: Vec<usize> = members.iter().map(Vec::len).collect();
    fn find(parent: &mut [u32], mut c: u32) -> u32 {
        while parent[c as usize] != c {
            parent[c as usize] = parent[parent[c as usize] as usize];
            c = parent[c as usize];
        }
        c
    }

    let mut order: Vec<u32> = (0..count as u32).filter(|&c| absorb[c as usize]).collect();
    order.sort_by_key(|&c| (size[c as usize], c));
    for c in order {
        let root = find(&mut parent, c);
        let mut best: Option<u32> = None;
        for &p in &members[root as usize] {
            let i = p as usize;
            let (x, y) = (i % w, i / w);
            let mut candidates = [usize::MAX; 4];
            if x > 0 {
                candidates[0] = i - 1;
            }
            if x + 1 < w {
                candidates[1] = i + 1;
            }
            if y > 0 {
                candidates[2] = i - w;
            }
            if y + 1 < h {
                candidates[3] = i + w;
            }
            for j in candidates.into_iter().filter(|&j| j != usize::MAX) {
                let other = find(&mut parent, components[j]);
                if other == root || !may_join(c, components[j]) {
                    continue;
                }
                best = match best {
                    Some(b)
                        if (size[b as usize], std::cmp::Reverse(b))
                            >= (size[other as usize], std::cmp::Reverse(other)) =>
                    {
                        Some(b)
                    }
                    _ => Some(other),
                };
            }
        }
        if let Some(target) = best {
            parent[root as usize] = target;
            size[target as usize] += size[root as usize];
            let moved = std::mem::take(&mut members[root as usize]);
            members[target as usize].extend(moved);
        }
    }

    let mut remap = vec![u32::MAX; count];
    let mut next = 0u32;
    let mut labels = Vec::with_capacity(components.len());
    for &c in components {
        let root = find(&mut parent, c) as usize;
        if remap[root] == u32::MAX {
            remap[root] = next;
            next += 1;
        }
        labels.push(remap[root]);
    }
    (labels, next as usize)
}

/// Regions smaller than this after intersecting two partitions are merged
/// into a neighbour inside the same coarse region.
pub const MIN_REFINED_REGION: usize = 4;

/// Connected-component-wise intersection of two partitions of the same image.
///
/// Every output region lies inside exactly one coarse and one fine region.
pub fn refine_partition(
    fine: &SuperpixelPartition,
    coarse: &SuperpixelPartition,
) -> Result<SuperpixelPartition> {
    if fine.width != coarse.width || fine.height != coarse.height {
        return Err(Error::dims(
            format!("{}x{}", coarse.width, coarse.height),
            format!("{}x{}", fine.width, fine.height),
        ));
    }
    let keys: Vec<u64> = fine
        .labels
        .iter()
        .zip(&coarse.labels)
        .map(|(&f, &c)| ((c as u64) << 32) | f as u64)
        .collect();
    let (components, count) = label_components(fine.width, fine.height, &keys);
    let mut comp_coarse = vec![0u32; count];
    let mut comp_size = vec![0usize; count];
    for (i, &c) in components.iter().enumerate() {
        comp_coarse[c as usize] = coarse.labels[i];
        comp_size[c as usize] += 1;
    }
    let absorb: Vec<bool> = comp_size.iter().map(|&s| s < MIN_REFINED_REGION).collect();
    // Only merge within one coarse region so the coarse labelling still factors.
    let (labels, count) = absorb_components(
        fine.width,
        fine.height,
        &components,
        count,
        &absorb,
        |a, b| comp_coarse[a as usize] == comp_coarse[b as usize],
    );
    Ok(SuperpixelPartition::from_dense(
        fine.width,
        fine.height,
        labels,
        count,
        Scale::Fine,
    ))
}

/// Bounding box of a region together with all neighbours up to `order` hops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextBox {
    pub order: u32,
    pub rect: Rect,
}

pub fn context_box(part: &SuperpixelPartition, region: u32, order: u32) -> Result<ContextBox> {
    if region as usize >= part.region_count() {
        return Err(Error::InvalidRegion(region));
    }
    if order == 0 {
        return Err(Error::InvalidParameter("context order starts at 1".into()));
    }
    let mut depth = vec![u32::MAX; part.region_count()];
    depth[region as usize] = 0;
    let mut queue = VecDeque::from([region]);
    let mut rect = part.stats(region).bbox;
    while let Some(r) = queue.pop_front() {
        let d = depth[r as usize];
        if d == order {
            continue;
        }
        for &n in part.neighbors(r) {
            if depth[n as usize] == u32::MAX {
                depth[n as usize] = d + 1;
                rect = rect.union(&part.stats(n).bbox);
                queue.push_back(n);
            }
        }
    }
    Ok(ContextBox { order, rect })
}
