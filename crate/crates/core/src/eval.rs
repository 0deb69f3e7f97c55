//! Scoring detections against hand-labelled frames.
//!
//! Rates are reported per class group (cars; trucks and buses pooled) and
//! normalised by the group's ground-truth count. Every ground-truth box ends
//! up in exactly one of three buckets (matched with a label from its group,
//! matched with a label from another group, unmatched), so those three rates
//! sum to one. The false-detection rate counts unmatched predictions and can
//! exceed one.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::detection::{iou, BoundingBox, Detection, Label};
use crate::stats::round_to;

/// Labels allowed in ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CountedClass {
    Car,
    Truck,
    Bus,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("label {0:?} is not a counted class (car, truck, bus)")]
pub struct UncountedLabel(pub String);

impl CountedClass {
    pub fn parse(s: &str) -> Result<Self, UncountedLabel> {
        match s {
            "car" => Ok(CountedClass::Car),
            "truck" => Ok(CountedClass::Truck),
            "bus" => Ok(CountedClass::Bus),
            other => Err(UncountedLabel(String::from(other))),
        }
    }

    pub fn as_label(self) -> Label {
        match self {
            CountedClass::Car => Label::Car,
            CountedClass::Truck => Label::Truck,
            CountedClass::Bus => Label::Bus,
        }
    }

    pub fn group(self) -> ClassGroup {
        match self {
            CountedClass::Car => ClassGroup::Car,
            CountedClass::Truck | CountedClass::Bus => ClassGroup::TrucksBuses,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassGroup {
    Car,
    TrucksBuses,
}

impl ClassGroup {
    pub fn of_label(label: Label) -> Option<ClassGroup> {
        match label {
            Label::Car => Some(ClassGroup::Car),
            Label::Truck | Label::Bus => Some(ClassGroup::TrucksBuses),
            Label::Motorcycle | Label::Other => None,
        }
    }
}

impl fmt::Display for ClassGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassGroup::Car => "car",
            ClassGroup::TrucksBuses => "trucks_buses",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthBox {
    pub bbox: BoundingBox,
    pub label: CountedClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthImage {
    pub image_ref: String,
    pub boxes: Vec<GroundTruthBox>,
}

/// One-to-one assignment between ground-truth boxes and predictions, by index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_pred: Vec<usize>,
}

/// Greedy matching: predictions in descending confidence (ties by input
/// order) each claim the unclaimed ground-truth box with the highest IoU at
/// or above `iou_threshold` (ties by lower index). Labels play no part.
pub fn match_detections(
    gt: &[GroundTruthBox],
    preds: &[Detection],
    iou_threshold: f64,
) -> Matching {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .partial_cmp(&preds[a].confidence)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut claimed = alloc::vec![false; gt.len()];
    let mut m = Matching::default();
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gbox) in gt.iter().enumerate() {
            if claimed[g] {
                continue;
            }
            let o = iou(&gbox.bbox, &preds[p].bbox);
            if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        match best {
            Some((g, _)) => {
                claimed[g] = true;
                m.pairs.push((g, p));
            }
            None => m.unmatched_pred.push(p),
        }
    }
    m.unmatched_gt = (0..gt.len()).filter(|&g| !claimed[g]).collect();
    m.pairs.sort_unstable();
    m.unmatched_pred.sort_unstable();
    m
}

/// A labelled frame, the predictions for it, and their matching.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredImage {
    pub gt: Vec<GroundTruthBox>,
    pub preds: Vec<Detection>,
    pub matching: Matching,
}

impl ScoredImage {
    /// Drops predictions outside the counted classes, then matches.
    pub fn new(gt: Vec<GroundTruthBox>, preds: &[Detection], iou_threshold: f64) -> Self {
        let preds: Vec<Detection> = preds
            .iter()
            .filter(|d| d.label.is_counted())
            .copied()
            .collect();
        let matching = match_detections(&gt, &preds, iou_threshold);
        ScoredImage {
            gt,
            preds,
            matching,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GroupCounts {
    pub gt: usize,
    pub matched_correct: usize,
    pub matched_wrong: usize,
    pub undetected: usize,
    pub false_detections: usize,
}

/// Rates rounded to three decimals, with the raw counts they came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMetrics {
    pub counts: GroupCounts,
    pub correctly_identified: f64,
    pub undetected: f64,
    pub misclassified: f64,
    pub falsely_detected: f64,
}

impl GroupMetrics {
    fn from_counts(c: GroupCounts) -> Self {
        let rate = |k: usize| round_to(k as f64 / c.gt as f64, 3);
        GroupMetrics {
            counts: c,
            correctly_identified: rate(c.matched_correct),
            undetected: rate(c.undetected),
            misclassified: rate(c.matched_wrong),
            falsely_detected: rate(c.false_detections),
        }
    }
}

/// Groups without ground truth are `None` rather than zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub car: Option<GroupMetrics>,
    pub trucks_buses: Option<GroupMetrics>,
}

impl EvalMetrics {
    pub fn group(&self, g: ClassGroup) -> Option<&GroupMetrics> {
        match g {
            ClassGroup::Car => self.car.as_ref(),
            ClassGroup::TrucksBuses => self.trucks_buses.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("evaluation needs at least one ground-truth box")]
pub struct NoGroundTruth;

pub fn tally(images: &[ScoredImage]) -> [GroupCounts; 2] {
    let mut counts = [GroupCounts::default(); 2];
    let slot = |g: ClassGroup| g as usize;
    for img in images {
        for b in &img.gt {
            counts[slot(b.label.group())].gt += 1;
        }
        for &(g, p) in &img.matching.pairs {
            let gt_group = img.gt[g].label.group();
            let c = &mut counts[slot(gt_group)];
            if ClassGroup::of_label(img.preds[p].label) == Some(gt_group) {
                c.matched_correct += 1;
            } else {
                c.matched_wrong += 1;
            }
        }
        for &g in &img.matching.unmatched_gt {
            counts[slot(img.gt[g].label.group())].undetected += 1;
        }
        for &p in &img.matching.unmatched_pred {
            if let Some(group) = ClassGroup::of_label(img.preds[p].label) {
                counts[slot(group)].false_detections += 1;
            }
        }
    }
    counts
}

pub fn compute_metrics(images: &[ScoredImage]) -> Result<EvalMetrics, NoGroundTruth> {
    let [car, tb] = tally(images);
    if car.gt + tb.gt == 0 {
        return Err(NoGroundTruth);
    }
    let metrics = |c: GroupCounts| (c.gt > 0).then(|| GroupMetrics::from_counts(c));
    Ok(EvalMetrics {
        car: metrics(car),
        trucks_buses: metrics(tb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn gt(label: CountedClass, b: BoundingBox) -> GroundTruthBox {
        GroundTruthBox { bbox: b, label }
    }

    fn pred(label: Label, confidence: f64, b: BoundingBox) -> Detection {
        Detection { bbox: b, label, confidence }
    }

    #[test]
    fn match_above_threshold() {
        let g = [gt(CountedClass::Car, bx(0.0, 0.0, 10.0, 10.0))];
        // iou = 80 / 120 ~ 0.667
        let p = [pred(Label::Car, 0.9, bx(2.0, 0.0, 10.0, 10.0))];
        let m = match_detections(&g, &p, 0.5);
        assert_eq!(m.pairs, vec![(0, 0)]);
        // iou = 40 / 160 = 0.25
        let p = [pred(Label::Car, 0.9, bx(6.0, 0.0, 10.0, 10.0))];
        let m = match_detections(&g, &p, 0.5);
        assert!(m.pairs.is_empty());
        assert_eq!((m.unmatched_gt, m.unmatched_pred), (vec![0], vec![0]));
    }

    #[test]
    fn higher_confidence_claims_first() {
        let g = [gt(CountedClass::Car, bx(0.0, 0.0, 10.0, 10.0))];
        let p = [
            pred(Label::Car, 0.7, bx(0.0, 0.0, 10.0, 10.0)),
            pred(Label::Car, 0.9, bx(1.0, 0.0, 10.0, 10.0)),
        ];
        let m = match_detections(&g, &p, 0.5);
        assert_eq!(m.pairs, vec![(0, 1)]);
        assert_eq!(m.unmatched_pred, vec![0]);
    }

    // Brute force over every injective partial assignment: the greedy result
    // must be the unique assignment in which no prediction could have taken a
    // strictly better free box at its turn.
    fn all_assignments(n_gt: usize, n_pred: usize) -> Vec<Vec<Option<usize>>> {
        let mut out = vec![vec![]];
        for _ in 0..n_pred {
            let mut next = Vec::new();
            for a in &out {
                next.push({
                    let mut v = a.clone();
                    v.push(None);
                    v
                });
                for g in 0..n_gt {
                    if !a.contains(&Some(g)) {
                        let mut v = a.clone();
                        v.push(Some(g));
                        next.push(v);
                    }
                }
            }
            out = next;
        }
        out
    }

    fn is_greedy_consistent(g: &[GroundTruthBox], p: &[Detection], thr: f64, a: &[Option<usize>]) -> bool {
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&x, &y| p[y].confidence.partial_cmp(&p[x].confidence).unwrap().then(x.cmp(&y)));
        let mut used = vec![false; g.len()];
        for &pi in &order {
            let free_best = (0..g.len())
                .filter(|&k| !used[k])
                .map(|k| (k, iou(&g[k].bbox, &p[pi].bbox)))
                .filter(|&(_, o)| o >= thr)
                .fold(None::<(usize, f64)>, |acc, (k, o)| match acc {
                    Some((_, b)) if b >= o => acc,
                    _ => Some((k, o)),
                });
            match (a[pi], free_best) {
                (None, None) => {}
                (Some(k), Some((kb, _))) if k == kb => used[k] = true,
                _ => return false,
            }
        }
        true
    }

    #[test]
    fn overlapping_predictions_against_exhaustive_search() {
        let g = [gt(CountedClass::Car, bx(0.0, 0.0, 10.0, 10.0))];
        let p = [
            pred(Label::Car, 0.9, bx(1.0, 0.0, 10.0, 10.0)),
            pred(Label::Car, 0.7, bx(0.0, 1.0, 10.0, 10.0)),
        ];
        let m = match_detections(&g, &p, 0.5);
        let candidates: Vec<_> = all_assignments(1, 2)
            .into_iter()
            .filter(|a| is_greedy_consistent(&g, &p, 0.5, a))
            .collect();
        assert_eq!(candidates, vec![vec![Some(0), None]]);
        assert_eq!(m.pairs, vec![(0, 0)]);
        assert_eq!(m.unmatched_pred, vec![1]);
    }

    fn scored(g: Vec<GroundTruthBox>, p: &[Detection]) -> ScoredImage {
        ScoredImage::new(g, p, 0.5)
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let boxes = vec![
            gt(CountedClass::Car, bx(0.0, 0.0, 10.0, 10.0)),
            gt(CountedClass::Truck, bx(50.0, 0.0, 20.0, 12.0)),
        ];
        let perfect: Vec<_> = boxes.iter().map(|b| pred(b.label.as_label(), 0.9, b.bbox)).collect();
        let m = compute_metrics(&[scored(boxes.clone(), &perfect)]).unwrap();
        for g in [m.car.unwrap(), m.trucks_buses.unwrap()] {
            assert_eq!((g.correctly_identified, g.undetected, g.misclassified, g.falsely_detected), (1.0, 0.0, 0.0, 0.0));
        }
        let m = compute_metrics(&[scored(boxes, &[])]).unwrap();
        let c = m.car.unwrap();
        assert_eq!((c.correctly_identified, c.undetected, c.misclassified, c.falsely_detected), (0.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn absent_group_and_no_ground_truth() {
        let boxes = vec![gt(CountedClass::Car, bx(0.0, 0.0, 10.0, 10.0))];
        let m = compute_metrics(&[scored(boxes, &[])]).unwrap();
        assert!(m.trucks_buses.is_none());
        assert_eq!(compute_metrics(&[scored(vec![], &[])]), Err(NoGroundTruth));
    }

    #[test]
    fn truck_bus_confusion_is_correct_for_the_pooled_group() {
        let boxes = vec![gt(CountedClass::Truck, bx(0.0, 0.0, 10.0, 10.0))];
        let m = compute_metrics(&[scored(boxes.clone(), &[pred(Label::Bus, 0.9, bx(0.0, 0.0, 10.0, 10.0))])]).unwrap();
        assert_eq!(m.trucks_buses.unwrap().correctly_identified, 1.0);
        let m = compute_metrics(&[scored(boxes, &[pred(Label::Car, 0.9, bx(0.0, 0.0, 10.0, 10.0))])]).unwrap();
        assert_eq!(m.trucks_buses.unwrap().misclassified, 1.0);
    }

    #[test]
    fn uncounted_predictions_are_ignored() {
        let boxes = vec![gt(CountedClass::Car, bx(0.0, 0.0, 10.0, 10.0))];
        let m = compute_metrics(&[scored(boxes, &[pred(Label::Motorcycle, 0.9, bx(40.0, 0.0, 5.0, 5.0))])]).unwrap();
        assert_eq!(m.car.unwrap().counts.false_detections, 0);
        assert!(CountedClass::parse("motorcycle").is_err());
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<GroundTruthBox>, Vec<Detection>)> {
        let b = (0.0f64..40.0, 0.0f64..40.0, 4.0f64..20.0, 4.0f64..20.0).prop_map(|(x, y, w, h)| bx(x, y, w, h));
        let g = (b.clone(), 0usize..3).prop_map(|(b, l)| gt([CountedClass::Car, CountedClass::Truck, CountedClass::Bus][l], b));
        let p = (b, 0usize..3, 1u8..=20).prop_map(|(b, l, c)| pred(Label::ALL[l], f64::from(c) / 20.0, b));
        (proptest::collection::vec(g, 0..4), proptest::collection::vec(p, 0..4))
    }

    proptest! {
        #[test]
        fn greedy_matches_exhaustive_characterisation((g, p) in arb_instance()) {
            let m = match_detections(&g, &p, 0.5);
            let mut as_assignment = vec![None; p.len()];
            for &(gi, pi) in &m.pairs {
                as_assignment[pi] = Some(gi);
            }
            let consistent: Vec<_> = all_assignments(g.len(), p.len())
                .into_iter()
                .filter(|a| is_greedy_consistent(&g, &p, 0.5, a))
                .collect();
            prop_assert_eq!(consistent, vec![as_assignment]);
        }

        #[test]
        fn matching_is_one_to_one((g, p) in arb_instance()) {
            let m = match_detections(&g, &p, 0.3);
            let mut gs: Vec<_> = m.pairs.iter().map(|x| x.0).chain(m.unmatched_gt.iter().copied()).collect();
            let mut ps: Vec<_> = m.pairs.iter().map(|x| x.1).chain(m.unmatched_pred.iter().copied()).collect();
            gs.sort_unstable();
            ps.sort_unstable();
            prop_assert_eq!(gs, (0..g.len()).collect::<Vec<_>>());
            prop_assert_eq!(ps, (0..p.len()).collect::<Vec<_>>());
        }

        #[test]
        fn buckets_partition_ground_truth((g, p) in arb_instance()) {
            let counts = tally(&[scored(g, &p)]);
            for c in counts {
                prop_assert_eq!(c.matched_correct + c.matched_wrong + c.undetected, c.gt);
            }
        }

        #[test]
        fn raising_the_confidence_floor_is_monotone((g, p) in arb_instance(), floor in 0.0f64..1.0) {
            let before = tally(&[scored(g.clone(), &p)]);
            let kept: Vec<_> = p.iter().filter(|d| d.confidence >= floor).copied().collect();
            let after = tally(&[scored(g, &kept)]);
            for (b, a) in before.iter().zip(&after) {
                prop_assert!(a.false_detections <= b.false_detections);
                prop_assert!(a.matched_correct <= b.matched_correct);
            }
        }

        #[test]
        fn removing_any_prediction_never_adds_false_detections((g, p) in arb_instance(), drop in 0usize..4) {
            prop_assume!(drop < p.len());
            let before = tally(&[scored(g.clone(), &p)]);
            let mut kept = p.clone();
            kept.remove(drop);
            let after = tally(&[scored(g, &kept)]);
            let total = |c: &[GroupCounts; 2]| c[0].false_detections + c[1].false_detections;
            prop_assert!(total(&after) <= total(&before));
        }
    }
}
