//! The annotation session: region labels, clicks, divisions and mask export.
//!
//! Region ids are unified across scales. Coarse region `c` has id `c`; fine
//! region `f` has id `coarse_count + f` and becomes active once its parent
//! coarse region is divided.

mod flips;
mod clicklog;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use flips::{auto_refine, context_features, record_flips, FlipDictionaries, FlipRecord};
pub use clicklog::{read_click_log, write_click_log};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::imaging::{
    refine_partition, segment_superpixels, Mask, RasterImage, Scale, SlicParams,
    SuperpixelPartition,
};
use crate::proposals::{generate_proposals, score_proposals, ObjectProposal};
use crate::retrieval::AgentKnowledge;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ClickKind {
    LeftFlip,
    RightDivide,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClickEvent {
    pub kind: ClickKind,
    pub target: u32,
    pub pre_label: bool,
    pub timestamp: u64,
}

/// Per coarse region: coverage-weighted mean tag probability of every
/// proposal covering its pixels, or 0 where no proposal reaches.
pub fn superpixel_probability(
    coarse: &SuperpixelPartition,
    props: &[ObjectProposal],
) -> Result<Vec<f64>> {
    let n = coarse.labels().len();
    let mut num = vec![0.0; n];
    let mut den = vec![0u32; n];
    for (k, p) in props.iter().enumerate() {
        let prob = p.tag_probability.ok_or_else(|| {
            Error::InvalidParameter(format!("proposal {k} has not been scored"))
        })?;
        if p.mask.bits().len() != n {
            return Err(Error::dims(n, p.mask.bits().len()));
        }
        for (i, _) in p.mask.bits().iter().enumerate().filter(|(_, &b)| b) {
            num[i] += prob;
            den[i] += 1;
        }
    }
    let regions = coarse.region_count();
    let mut rnum = vec![0.0; regions];
    let mut rden = vec![0u64; regions];
    for (i, &l) in coarse.labels().iter().enumerate() {
        rnum[l as usize] += num[i];
        rden[l as usize] += den[i] as u64;
    }
    Ok(rnum
        .into_iter()
        .zip(rden)
        .map(|(s, d)| if d == 0 { 0.0 } else { (s / d as f64).clamp(0.0, 1.0) })
        .collect())
}

/// Label 1 exactly where the probability reaches `beta0`.
pub fn initialize_labels(probs: &[f64], beta0: f64) -> Vec<bool> {
    probs.iter().map(|&p| p >= beta0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionRef {
    Coarse(u32),
    Fine(u32),
}

/// A single image being annotated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SessionSnapshot", try_from = "SessionSnapshot")]
pub struct AnnotationSession {
    image_id: String,
    coarse: SuperpixelPartition,
    fine: SuperpixelPartition,
    parent: Vec<u32>,
    children: Vec<Vec<u32>>,
    probs: Vec<f64>,
    init_labels: Vec<bool>,
    presented: Vec<bool>,
    coarse_labels: Vec<bool>,
    fine_labels: Vec<bool>,
    divided: Vec<bool>,
    auto_flipped: BTreeSet<u32>,
    refined: bool,
    clicks: Vec<ClickEvent>,
    sealed: bool,
}

impl AnnotationSession {
    /// `fine` must refine `coarse`: every fine region lies inside one coarse
    /// region.
    pub fn new(
        image_id: impl Into<String>,
        coarse: SuperpixelPartition,
        fine: SuperpixelPartition,
        probs: Vec<f64>,
        beta0: f64,
    ) -> Result<Self> {
        if (coarse.width(), coarse.height()) != (fine.width(), fine.height()) {
            return Err(Error::dims(coarse.labels().len(), fine.labels().len()));
        }
        if probs.len() != coarse.region_count() {
            return Err(Error::dims(coarse.region_count(), probs.len()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("probabilities must lie in [0, 1]".into()));
        }
        let mut parent = vec![u32::MAX; fine.region_count()];
        for (&f, &c) in fine.labels().iter().zip(coarse.labels()) {
            let slot = &mut parent[f as usize];
            if *slot == u32::MAX {
                *slot = c;
            } else if *slot != c {
                return Err(Error::InvalidParameter(format!(
                    "fine region {f} straddles coarse regions {slot} and {c}"
                )));
            }
        }
        let mut children = vec![Vec::new(); coarse.region_count()];
        for (f, &c) in parent.iter().enumerate() {
            children[c as usize].push(f as u32);
        }
        let labels = initialize_labels(&probs, beta0);
        Ok(AnnotationSession {
            image_id: image_id.into(),
            parent,
            children,
            init_labels: labels.clone(),
            presented: labels.clone(),
            coarse_labels: labels,
            fine_labels: vec![false; fine.region_count()],
            divided: vec![false; coarse.region_count()],
            probs,
            coarse,
            fine,
            auto_flipped: BTreeSet::new(),
            refined: false,
            clicks: Vec::new(),
            sealed: false,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn coarse(&self) -> &SuperpixelPartition {
        &self.coarse
    }

    pub fn fine(&self) -> &SuperpixelPartition {
        &self.fine
    }

    pub fn coarse_count(&self) -> u32 {
        self.coarse.region_count() as u32
    }

    pub fn region_count(&self) -> u32 {
        (self.coarse.region_count() + self.fine.region_count()) as u32
    }

    /// Per coarse region probability that it belongs to the object.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Labels straight from the probability threshold.
    pub fn initial_labels(&self) -> &[bool] {
        &self.init_labels
    }

    /// Labels shown to the annotator before the first click.
    pub fn presented_labels(&self) -> &[bool] {
        &self.presented
    }

    pub fn auto_flipped(&self) -> &BTreeSet<u32> {
        &self.auto_flipped
    }

    pub fn is_refined(&self) -> bool {
        self.refined
    }

    pub fn clicks(&self) -> &[ClickEvent] {
        &self.clicks
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    /// Number of accepted mutations; a sealed session counts one more.
    pub fn revision(&self) -> u64 {
        self.clicks.len() as u64 + u64::from(self.sealed)
    }

    pub fn seal(&mut self) -> Result<()> {
        if self.sealed {
            return Err(Error::SessionSealed);
        }
        self.sealed = true;
        Ok(())
    }

    pub fn is_divided(&self, coarse: u32) -> bool {
        self.divided.get(coarse as usize).copied().unwrap_or(false)
    }

    pub fn resolve(&self, id: u32) -> Result<RegionRef> {
        let cc = self.coarse_count();
        if id < cc {
            Ok(RegionRef::Coarse(id))
        } else if id < self.region_count() {
            Ok(RegionRef::Fine(id - cc))
        } else {
            Err(Error::InvalidRegion(id))
        }
    }

    pub fn is_active(&self, id: u32) -> bool {
        match self.resolve(id) {
            Ok(RegionRef::Coarse(c)) => !self.divided[c as usize],
            Ok(RegionRef::Fine(f)) => self.divided[self.parent[f as usize] as usize],
            Err(_) => false,
        }
    }

    /// Active region ids in ascending order.
    pub fn active_regions(&self) -> Vec<u32> {
        let cc = self.coarse_count();
        let mut out: Vec<u32> = (0..cc).filter(|&c| !self.divided[c as usize]).collect();
        let mut fine: Vec<u32> = (0..cc)
            .filter(|&c| self.divided[c as usize])
            .flat_map(|c| self.children[c as usize].iter().map(move |&f| cc + f))
            .collect();
        fine.sort_unstable();
        out.extend(fine);
        out
    }

    /// Fine ids (unified numbering) that replace coarse region `c` when
    /// divided.
    pub fn children_of(&self, c: u32) -> Result<Vec<u32>> {
        let kids = self.children.get(c as usize).ok_or(Error::InvalidRegion(c))?;
        Ok(kids.iter().map(|&f| self.coarse_count() + f).collect())
    }

    /// Coarse region containing region `id`.
    pub fn coarse_of(&self, id: u32) -> Result<u32> {
        Ok(match self.resolve(id)? {
            RegionRef::Coarse(c) => c,
            RegionRef::Fine(f) => self.parent[f as usize],
        })
    }

    pub fn label(&self, id: u32) -> Result<bool> {
        if !self.is_active(id) {
            self.resolve(id)?;
            return Err(Error::InactiveRegion(id));
        }
        Ok(self.raw_label(id))
    }

    fn raw_label(&self, id: u32) -> bool {
        match self.resolve(id) {
            Ok(RegionRef::Coarse(c)) => self.coarse_labels[c as usize],
            Ok(RegionRef::Fine(f)) => self.fine_labels[f as usize],
            Err(_) => false,
        }
    }

    pub fn pixel_count(&self, id: u32) -> Result<usize> {
        Ok(match self.resolve(id)? {
            RegionRef::Coarse(c) => self.coarse.stats(c).pixel_count,
            RegionRef::Fine(f) => self.fine.stats(f).pixel_count,
        })
    }

    pub fn region_mask(&self, id: u32) -> Result<Mask> {
        Ok(match self.resolve(id)? {
            RegionRef::Coarse(c) => self.coarse.region_mask(c),
            RegionRef::Fine(f) => self.fine.region_mask(f),
        })
    }

    /// Applies a click stamped with the next logical time.
    pub fn apply_click(&mut self, kind: ClickKind, target: u32) -> Result<ClickEvent> {
        let ts = self.clicks.len() as u64;
        self.apply_click_at(kind, target, ts)
    }

    pub fn apply_click_at(&mut self, kind: ClickKind, target: u32, timestamp: u64) -> Result<ClickEvent> {
        if self.sealed {
            return Err(Error::SessionSealed);
        }
        let region = self.resolve(target)?;
        if kind == ClickKind::RightDivide {
            match region {
                RegionRef::Fine(_) => return Err(Error::AlreadyDivided(target)),
                RegionRef::Coarse(c) if self.divided[c as usize] => {
                    return Err(Error::AlreadyDivided(target))
                }
                RegionRef::Coarse(_) => {}
            }
        }
        if !self.is_active(target) {
            return Err(Error::InactiveRegion(target));
        }
        let pre_label = self.raw_label(target);
        match (kind, region) {
            (ClickKind::LeftFlip, RegionRef::Coarse(c)) => {
                self.coarse_labels[c as usize] = !pre_label
            }
            (ClickKind::LeftFlip, RegionRef::Fine(f)) => self.fine_labels[f as usize] = !pre_label,
            (ClickKind::RightDivide, RegionRef::Coarse(c)) => {
                self.divided[c as usize] = true;
                for &f in &self.children[c as usize] {
                    self.fine_labels[f as usize] = pre_label;
                }
            }
            (ClickKind::RightDivide, RegionRef::Fine(_)) => unreachable!(),
        }
        let event = ClickEvent {
            kind,
            target,
            pre_label,
            timestamp,
        };
        self.clicks.push(event.clone());
        Ok(event)
    }

    /// The session as presented, before any click.
    pub fn fresh(&self) -> AnnotationSession {
        let mut s = self.clone();
        s.coarse_labels = self.presented.clone();
        s.fine_labels.iter_mut().for_each(|l| *l = false);
        s.divided.iter_mut().for_each(|d| *d = false);
        s.clicks.clear();
        s.sealed = false;
        s
    }

    /// Re-applies the click log to a fresh copy, checking that every
    /// recorded pre-click label matches.
    pub fn replay(&self) -> Result<AnnotationSession> {
        let mut s = self.fresh();
        s.replay_events(&self.clicks)?;
        Ok(s)
    }

    pub fn replay_events(&mut self, events: &[ClickEvent]) -> Result<()> {
        for (k, e) in events.iter().enumerate() {
            let applied = self.apply_click_at(e.kind, e.target, e.timestamp)?;
            if applied.pre_label != e.pre_label {
                return Err(Error::InvalidParameter(format!(
                    "click {k} on region {} expected label {} but found {}",
                    e.target, e.pre_label, applied.pre_label
                )));
            }
        }
        Ok(())
    }

    /// Pixel mask of all active regions labelled 1.
    pub fn export_mask(&self) -> Mask {
        let bits = self
            .coarse
            .labels()
            .iter()
            .zip(self.fine.labels())
            .map(|(&c, &f)| {
                if self.divided[c as usize] {
                    self.fine_labels[f as usize]
                } else {
                    self.coarse_labels[c as usize]
                }
            })
            .collect();
        Mask::from_bits(self.coarse.width(), self.coarse.height(), bits)
            .expect("partition dimensions match")
    }

    /// Current label of each coarse region; a divided region takes the
    /// area-majority of its children, keeping the presented label on a tie.
    pub fn final_coarse_labels(&self) -> Vec<bool> {
        (0..self.coarse.region_count())
            .map(|c| {
                if !self.divided[c] {
                    return self.coarse_labels[c];
                }
                let (mut on, mut off) = (0usize, 0usize);
                for &f in &self.children[c] {
                    let px = self.fine.stats(f).pixel_count;
                    if self.fine_labels[f as usize] {
                        on += px;
                    } else {
                        off += px;
                    }
                }
                match on.cmp(&off) {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Less => false,
                    std::cmp::Ordering::Equal => self.presented[c],
                }
            })
            .collect()
    }

    pub(crate) fn set_presented(&mut self, coarse: u32, label: bool) {
        self.presented[coarse as usize] = label;
        self.coarse_labels[coarse as usize] = label;
    }

    pub(crate) fn mark_refined(&mut self, flipped: &[u32]) {
        self.refined = true;
        self.auto_flipped.extend(flipped.iter().copied());
    }
}

/// Segments the image, scores proposals against the agent's dictionaries
/// and builds the initial session. Auto-refinement runs when flip
/// dictionaries are supplied.
pub fn prepare_session(
    image_id: &str,
    img: &RasterImage,
    knowledge: &AgentKnowledge,
    flips: Option<&FlipDictionaries>,
    cfg: &PipelineConfig,
) -> Result<AnnotationSession> {
    let max_k = (img.pixel_count() / 4).max(2);
    let params = |k: usize, scale| SlicParams {
        target_regions: k.min(max_k),
        compactness: cfg.compactness,
        iterations: cfg.slic_iterations,
        scale,
    };
    let coarse = segment_superpixels(img, &params(cfg.coarse_regions, Scale::Coarse))?;
    let raw_fine = segment_superpixels(img, &params(cfg.fine_regions, Scale::Fine))?;
    let fine = refine_partition(&raw_fine, &coarse)?;
    let mut props = generate_proposals(img, &fine, cfg.max_proposals, &cfg.merge_weights)?;
    score_proposals(
        &mut props,
        img,
        &knowledge.weak,
        knowledge.strong.as_ref(),
        &knowledge.pca,
        &cfg.omp(),
        cfg.q,
    )?;
    let probs = superpixel_probability(&coarse, &props)?;
    let mut session = AnnotationSession::new(image_id, coarse, fine, probs, cfg.beta0)?;
    if let Some(flips) = flips {
        auto_refine(&mut session, img, flips, &knowledge.pca, cfg)?;
    }
    Ok(session)
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct SessionSnapshot {
    image_id: String,
    width: u32,
    height: u32,
    coarse_map: Vec<u32>,
    fine_map: Vec<u32>,
    probabilities: Vec<f64>,
    initial_labels: Vec<bool>,
    presented_labels: Vec<bool>,
    coarse_labels: Vec<bool>,
    fine_labels: Vec<bool>,
    divided: Vec<bool>,
    auto_flipped: BTreeSet<u32>,
    refined: bool,
    clicks: Vec<ClickEvent>,
    sealed: bool,
}

impl From<AnnotationSession> for SessionSnapshot {
    fn from(s: AnnotationSession) -> Self {
        SessionSnapshot {
            image_id: s.image_id,
            width: s.coarse.width(),
            height: s.coarse.height(),
            coarse_map: s.coarse.labels().to_vec(),
            fine_map: s.fine.labels().to_vec(),
            probabilities: s.probs,
            initial_labels: s.init_labels,
            presented_labels: s.presented,
            coarse_labels: s.coarse_labels,
            fine_labels: s.fine_labels,
            divided: s.divided,
            auto_flipped: s.auto_flipped,
            refined: s.refined,
            clicks: s.clicks,
            sealed: s.sealed,
        }
    }
}

impl TryFrom<SessionSnapshot> for AnnotationSession {
    type Error = Error;

    fn try_from(s: SessionSnapshot) -> Result<Self> {
        let coarse =
            SuperpixelPartition::from_numbered_labels(s.width, s.height, s.coarse_map, Scale::Coarse)?;
        let fine =
            SuperpixelPartition::from_numbered_labels(s.width, s.height, s.fine_map, Scale::Fine)?;
        let mut session = AnnotationSession::new(s.image_id, coarse, fine, s.probabilities, 0.0)?;
        let cc = session.coarse.region_count();
        let fc = session.fine.region_count();
        let lens = [
            (s.initial_labels.len(), cc),
            (s.presented_labels.len(), cc),
            (s.coarse_labels.len(), cc),
            (s.divided.len(), cc),
            (s.fine_labels.len(), fc),
        ];
        if let Some(&(got, want)) = lens.iter().find(|(g, w)| g != w) {
            return Err(Error::dims(want, got));
        }
        if let Some(&bad) = s.auto_flipped.iter().find(|&&r| r as usize >= cc) {
            return Err(Error::InvalidRegion(bad));
        }
        session.init_labels = s.initial_labels;
        session.presented = s.presented_labels;
        session.coarse_labels = s.coarse_labels;
        session.fine_labels = s.fine_labels;
        session.divided = s.divided;
        session.auto_flipped = s.auto_flipped;
        session.refined = s.refined;
        session.clicks = s.clicks;
        session.sealed = s.sealed;
        Ok(session)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 8x4 image: two coarse halves, each split into two 2-column fine
    /// strips.
    fn two_halves(probs: Vec<f64>) -> AnnotationSession {
        let coarse = SuperpixelPartition::from_labels(8, 4, &grid(8, 4, |x, _| x / 4), Scale::Coarse)
            .unwrap();
        let fine =
            SuperpixelPartition::from_labels(8, 4, &grid(8, 4, |x, _| x / 2), Scale::Fine).unwrap();
        AnnotationSession::new("img", coarse, fine, probs, 0.4).unwrap()
    }

    fn grid(w: u32, h: u32, f: impl Fn(u32, u32) -> u32) -> Vec<u32> {
        (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect()
    }

    fn proposal(mask: Mask, p: f64) -> ObjectProposal {
        let mut prop = ObjectProposal::new(mask, 1.0);
        prop.tag_probability = Some(p);
        prop
    }

    #[test]
    fn probability_examples() {
        let coarse =
            SuperpixelPartition::from_labels(8, 4, &grid(8, 4, |x, _| x / 4), Scale::Coarse).unwrap();
        let left = Mask::from_fn(8, 4, |x, _| x < 4);
        let p = superpixel_probability(&coarse, &[proposal(left.clone(), 0.7)]).unwrap();
        assert!((p[0] - 0.7).abs() < 1e-12);
        assert_eq!(p[1], 0.0);
        let p = superpixel_probability(&coarse, &[proposal(left.clone(), 0.2), proposal(left, 0.8)])
            .unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        // Half of the right region covered by a 0.6 proposal, all of it by a
        // 0.0 proposal: (8·0.6) / (8 + 16).
        let half = Mask::from_fn(8, 4, |x, _| x >= 6);
        let right = Mask::from_fn(8, 4, |x, _| x >= 4);
        let p = superpixel_probability(&coarse, &[proposal(half, 0.6), proposal(right, 0.0)]).unwrap();
        assert!((p[1] - 0.2).abs() < 1e-15);
        assert!(superpixel_probability(&coarse, &[ObjectProposal::new(Mask::full(8, 4), 1.0)]).is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(initialize_labels(&[0.4, 0.39, 0.0, 1.0], 0.4), vec![true, false, false, true]);
    }

    #[test]
    fn flip_divide_and_export() {
        let mut s = two_halves(vec![0.9, 0.1]);
        assert_eq!(s.active_regions(), vec![0, 1]);
        assert_eq!(s.export_mask().count(), 16);
        let before = s.export_mask();
        s.apply_click(ClickKind::LeftFlip, 1).unwrap();
        s.apply_click(ClickKind::LeftFlip, 1).unwrap();
        assert_eq!(s.export_mask(), before);

        s.apply_click(ClickKind::RightDivide, 0).unwrap();
        assert_eq!(s.export_mask(), before);
        assert_eq!(s.active_regions(), vec![1, 2, 3]);
        assert!(s.label(2).unwrap());
        assert!(s.label(3).unwrap());
        s.apply_click(ClickKind::LeftFlip, 3).unwrap();
        assert!(s.label(2).unwrap());
        assert!(!s.label(3).unwrap());
        assert_eq!(s.export_mask().count(), 8);

        assert!(matches!(s.apply_click(ClickKind::LeftFlip, 0), Err(Error::InactiveRegion(0))));
        assert!(matches!(s.apply_click(ClickKind::RightDivide, 0), Err(Error::AlreadyDivided(0))));
        assert!(matches!(s.apply_click(ClickKind::RightDivide, 2), Err(Error::AlreadyDivided(2))));
        assert!(matches!(s.apply_click(ClickKind::LeftFlip, 4), Err(Error::InactiveRegion(4))));
        assert!(matches!(s.apply_click(ClickKind::LeftFlip, 9), Err(Error::InvalidRegion(9))));
        assert_eq!(s.clicks().len(), 4);

        let replayed = s.replay().unwrap();
        assert_eq!(replayed.export_mask(), s.export_mask());
        assert_eq!(replayed, s);

        s.seal().unwrap();
        assert_eq!(s.revision(), 5);
        assert!(matches!(s.apply_click(ClickKind::LeftFlip, 1), Err(Error::SessionSealed)));
    }

    #[test]
    fn divided_majority_rule() {
        let mut s = two_halves(vec![0.9, 0.1]);
        s.apply_click(ClickKind::RightDivide, 0).unwrap();
        assert_eq!(s.final_coarse_labels(), vec![true, false]);
        // Equal areas keep the presented label.
        s.apply_click(ClickKind::LeftFlip, 2).unwrap();
        assert_eq!(s.final_coarse_labels(), vec![true, false]);
        s.apply_click(ClickKind::LeftFlip, 3).unwrap();
        assert_eq!(s.final_coarse_labels(), vec![false, false]);
    }

    #[test]
    fn straddling_fine_region_rejected() {
        let coarse =
            SuperpixelPartition::from_labels(8, 4, &grid(8, 4, |x, _| x / 4), Scale::Coarse).unwrap();
        let fine = SuperpixelPartition::from_labels(8, 4, &grid(8, 4, |x, _| (x + 1) / 3), Scale::Fine)
            .unwrap();
        assert!(AnnotationSession::new("i", coarse, fine, vec![0.0, 0.0], 0.4).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut s = two_halves(vec![0.45, 0.1]);
        s.apply_click(ClickKind::RightDivide, 1).unwrap();
        s.apply_click(ClickKind::LeftFlip, 4).unwrap();
        s.seal().unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: AnnotationSession = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
