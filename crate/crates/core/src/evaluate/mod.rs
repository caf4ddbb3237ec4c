//! Pixel metrics, the simulated annotator and the experiment harness.

mod experiment;
mod report;

use serde::{Deserialize, Serialize};

pub use experiment::{
    annotate_image, run_evolvability, simulate_set, EvolvabilityReport, EvolvabilitySplits,
    SetSimulation,
};
pub use report::{Aggregates, Condition, ExperimentReport, ImageResult};

use crate::annotate::{AnnotationSession, ClickKind, RegionRef};
use crate::error::{Error, Result};
use crate::imaging::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MaskMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl MaskMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        // Equal to 2PR / (P + R), with a single rounding.
        let f_measure = ratio(2 * tp, 2 * tp + fp + fn_);
        MaskMetrics {
            precision,
            recall,
            f_measure,
            tp,
            fp,
            fn_,
        }
    }
}

/// Pixel precision, recall and F-measure of `predicted` against `truth`.
/// A zero denominator yields 0.
pub fn mask_metrics(predicted: &Mask, truth: &Mask) -> Result<MaskMetrics> {
    if !predicted.same_dims(truth) {
        return Err(Error::dims(
            format!("{}x{}", truth.width(), truth.height()),
            format!("{}x{}", predicted.width(), predicted.height()),
        ));
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&p, &t) in predicted.bits().iter().zip(truth.bits()) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(MaskMetrics::from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleOutcome {
    pub clicks: usize,
    pub budget_exceeded: bool,
    pub f_measure: f64,
}

/// Truth-overlap band in which the oracle divides a coarse region.
const DIVIDE_BAND: (f64, f64) = (0.2, 0.8);

#[derive(Clone, Copy)]
enum Action {
    Flip(u32),
    Divide(u32),
}

struct Counts {
    tp: i64,
    fp: i64,
    truth: i64,
}

impl Counts {
    fn f(&self, dtp: i64, dfp: i64) -> f64 {
        let tp = self.tp + dtp;
        if tp <= 0 {
            return 0.0;
        }
        2.0 * tp as f64 / (tp + self.fp + dfp + self.truth) as f64
    }
}

/// Replays the ground truth as clicks. Each step takes the action with the
/// largest F gain: a flip of an active region, or for an undivided coarse
/// region whose truth overlap lies strictly inside (0.2, 0.8), a division
/// followed by flipping every child whose majority disagrees. Stops when no
/// action improves F or the next one would exceed `max_clicks`, then seals
/// the session.
pub fn oracle_annotate(
    session: &mut AnnotationSession,
    truth: &Mask,
    max_clicks: usize,
) -> Result<OracleOutcome> {
    let (w, h) = (session.coarse().width(), session.coarse().height());
    if (truth.width(), truth.height()) != (w, h) {
        return Err(Error::dims(format!("{w}x{h}"), format!("{}x{}", truth.width(), truth.height())));
    }
    let cc = session.coarse_count() as usize;
    let mut overlap = vec![0i64; session.region_count() as usize];
    for ((&c, &f), &t) in session
        .coarse()
        .labels()
        .iter()
        .zip(session.fine().labels())
        .zip(truth.bits())
    {
        if t {
            overlap[c as usize] += 1;
            overlap[cc + f as usize] += 1;
        }
    }
    let area: Vec<i64> = (0..session.region_count())
        .map(|id| session.pixel_count(id).map(|a| a as i64))
        .collect::<Result<_>>()?;
    let start = mask_metrics(&session.export_mask(), truth)?;
    let mut counts = Counts {
        tp: start.tp as i64,
        fp: start.fp as i64,
        truth: (start.tp + start.fn_) as i64,
    };
    // Change in (tp, fp) when region `id` switches to `on`.
    let delta = |id: usize, on: bool| -> (i64, i64) {
        let (o, a) = (overlap[id], area[id]);
        if on {
            (o, a - o)
        } else {
            (-o, -(a - o))
        }
    };
    let majority = |id: usize, tie: bool| match (2 * overlap[id]).cmp(&area[id]) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => tie,
    };

    let mut clicks = 0usize;
    let mut budget_exceeded = false;
    loop {
        let current = counts.f(0, 0);
        let mut best: Option<(f64, Action, usize, (i64, i64))> = None;
        for id in session.active_regions() {
            let label = session.label(id)?;
            let i = id as usize;
            let band = matches!(session.resolve(id)?, RegionRef::Coarse(_)) && {
                let frac = overlap[i] as f64 / area[i] as f64;
                frac > DIVIDE_BAND.0 && frac < DIVIDE_BAND.1
            };
            let (action, cost, (dtp, dfp)) = if band {
                let (mut dtp, mut dfp) = if label { delta(i, false) } else { (0, 0) };
                let mut cost = 1;
                for child in session.children_of(id)? {
                    let want = majority(child as usize, label);
                    if want != label {
                        cost += 1;
                    }
                    if want {
                        let (a, b) = delta(child as usize, true);
                        dtp += a;
                        dfp += b;
                    }
                }
                (Action::Divide(id), cost, (dtp, dfp))
            } else {
                (Action::Flip(id), 1, delta(i, !label))
            };
            let gain = counts.f(dtp, dfp) - current;
            if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.0) {
                best = Some((gain, action, cost, (dtp, dfp)));
            }
        }
        let Some((_, action, cost, (dtp, dfp))) = best else { break };
        if clicks + cost > max_clicks {
            budget_exceeded = true;
            break;
        }
        match action {
            Action::Flip(id) => {
                session.apply_click(ClickKind::LeftFlip, id)?;
            }
            Action::Divide(id) => {
                let label = session.label(id)?;
                session.apply_click(ClickKind::RightDivide, id)?;
                for child in session.children_of(id)? {
                    if majority(child as usize, label) != label {
                        session.apply_click(ClickKind::LeftFlip, child)?;
                    }
                }
            }
        }
        clicks += cost;
        counts.tp += dtp;
        counts.fp += dfp;
    }
    if budget_exceeded {
        log::warn!("{}: oracle stopped at the click budget of {max_clicks}", session.image_id());
    }
    if !session.is_sealed() {
        session.seal()?;
    }
    Ok(OracleOutcome {
        clicks,
        budget_exceeded,
        f_measure: counts.f(0, 0),
    })
}
