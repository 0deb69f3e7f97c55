//! Detector protocol types, a scripted mock backend, and the post-detection
//! filter pipeline.
//!
//! The pretrained detector double-counts vehicles under several labels and
//! emits boxes of implausible size. The filters run in a fixed order:
//! confidence floor, then box size and aspect, then cross-class resolution.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid box ({x}, {y}, {w}, {h}): width and height must be positive and finite")]
pub struct InvalidBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Axis-aligned box in pixels, `(x, y)` being the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, InvalidBox> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(InvalidBox { x, y, w, h });
        }
        Ok(BoundingBox { x, y, w, h })
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn right(&self) -> f64 {
        self.x + self.w
    }
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Intersection with the frame `[0, width] x [0, height]`, or `None` when
    /// nothing of the box remains inside it.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let (fw, fh) = (f64::from(width), f64::from(height));
        let x0 = self.x.clamp(0.0, fw);
        let y0 = self.y.clamp(0.0, fh);
        let x1 = self.right().clamp(0.0, fw);
        let y1 = self.bottom().clamp(0.0, fh);
        BoundingBox::new(x0, y0, x1 - x0, y1 - y0).ok()
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.x >= 0.0
            && self.y >= 0.0
            && self.right() <= f64::from(width)
            && self.bottom() <= f64::from(height)
    }
}

/// Intersection over union; 0 for disjoint or edge-touching boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    // Areas from the corner coordinates, so identical boxes give exactly 1.
    let area = |r: &BoundingBox| (r.right() - r.x) * (r.bottom() - r.y);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Detector output classes. Declaration order is the tie-break order used by
/// cross-class resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Car,
    Truck,
    Bus,
    Motorcycle,
    Other,
}

impl Label {
    pub const ALL: [Label; 5] = [
        Label::Car,
        Label::Truck,
        Label::Bus,
        Label::Motorcycle,
        Label::Other,
    ];

    /// Maps a wire label onto the closed set; anything unrecognised is `Other`.
    pub fn from_wire(s: &str) -> Label {
        match s {
            "car" => Label::Car,
            "truck" => Label::Truck,
            "bus" => Label::Bus,
            "motorcycle" => Label::Motorcycle,
            _ => Label::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Car => "car",
            Label::Truck => "truck",
            Label::Bus => "bus",
            Label::Motorcycle => "motorcycle",
            Label::Other => "other",
        }
    }

    /// Classes that contribute to vehicle counts.
    pub fn is_counted(self) -> bool {
        matches!(self, Label::Car | Label::Truck | Label::Bus)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub label: Label,
    pub confidence: f64,
}

/// One detection as it appears on the wire, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDetection {
    pub label: String,
    pub confidence: f64,
    pub bbox: [f64; 4],
}

/// What the pipeline asks a backend to look at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectRequest {
    pub image_path: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("detections[{index}].{field}: {reason}")]
pub struct ProtocolError {
    pub index: usize,
    pub field: &'static str,
    pub reason: String,
}

/// Validates raw backend output: confidences must lie in `[0, 1]`, boxes must
/// have positive size. Boxes are clamped to the frame; boxes lying wholly
/// outside it are dropped.
pub fn validate_detections(
    raw: &[RawDetection],
    width: u32,
    height: u32,
) -> Result<Vec<Detection>, ProtocolError> {
    let mut out = Vec::with_capacity(raw.len());
    for (index, r) in raw.iter().enumerate() {
        if !(0.0..=1.0).contains(&r.confidence) {
            return Err(ProtocolError {
                index,
                field: "confidence",
                reason: alloc::format!("{} is outside [0, 1]", r.confidence),
            });
        }
        let [x, y, w, h] = r.bbox;
        let bbox = BoundingBox::new(x, y, w, h).map_err(|e| ProtocolError {
            index,
            field: "bbox",
            reason: alloc::format!("{e}"),
        })?;
        if let Some(bbox) = bbox.clamp_to(width, height) {
            out.push(Detection {
                bbox,
                label: Label::from_wire(&r.label),
                confidence: r.confidence,
            });
        }
    }
    Ok(out)
}

/// A source of raw detections: a child process, a service, or a script.
pub trait Detector {
    type Error;

    fn detect_raw(&self, request: &DetectRequest) -> Result<Vec<RawDetection>, Self::Error>;
}

#[derive(Debug, thiserror::Error)]
pub enum DetectError<E> {
    #[error("detector backend failed: {0}")]
    Backend(E),
    #[error("detector protocol violation: {0}")]
    Protocol(#[from] ProtocolError),
}

/// Runs a backend on one frame and validates what comes back.
pub fn detect<D: Detector + ?Sized>(
    request: &DetectRequest,
    backend: &D,
) -> Result<Vec<Detection>, DetectError<D::Error>> {
    let raw = backend
        .detect_raw(request)
        .map_err(DetectError::Backend)?;
    Ok(validate_detections(&raw, request.width, request.height)?)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("mock detector has no script for {0}")]
pub struct UnscriptedImage(pub String);

/// Scripted backend keyed by image path.
///
/// A key matches a request when it equals the request path, or when the
/// request path with its extension removed ends, on a `/` boundary, with the
/// key with its extension removed. Masked copies written under another
/// directory or with another extension therefore still resolve.
#[derive(Debug, Clone, Default)]
pub struct MockDetector {
    script: BTreeMap<String, Vec<RawDetection>>,
}

impl MockDetector {
    pub fn new(script: BTreeMap<String, Vec<RawDetection>>) -> Self {
        MockDetector { script }
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }

    fn lookup(&self, path: &str) -> Option<&Vec<RawDetection>> {
        if let Some(hit) = self.script.get(path) {
            return Some(hit);
        }
        let wanted = strip_extension(path);
        // Longest key wins so nested keys stay unambiguous.
        self.script
            .iter()
            .filter(|(key, _)| {
                let key = strip_extension(key);
                wanted == key
                    || (wanted.len() > key.len()
                        && wanted.ends_with(key)
                        && wanted.as_bytes()[wanted.len() - key.len() - 1] == b'/')
            })
            .max_by_key(|(key, _)| key.len())
            .map(|(_, v)| v)
    }
}

fn strip_extension(path: &str) -> &str {
    let file_start = path.rfind('/').map_or(0, |i| i + 1);
    match path[file_start..].rfind('.') {
        Some(dot) if dot > 0 => &path[..file_start + dot],
        _ => path,
    }
}

impl Detector for MockDetector {
    type Error = UnscriptedImage;

    fn detect_raw(&self, request: &DetectRequest) -> Result<Vec<RawDetection>, Self::Error> {
        self.lookup(&request.image_path)
            .cloned()
            .ok_or_else(|| UnscriptedImage(request.image_path.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FilterConfigError {
    #[error("min_confidence {0} must lie in [0, 1]")]
    Confidence(f64),
    #[error("area bounds must satisfy 0 < min ({0}) < max ({1}) <= 1")]
    Area(f64, f64),
    #[error("aspect bounds must satisfy 0 < min ({0}) < max ({1})")]
    Aspect(f64, f64),
    #[error("cross_class_iou {0} must lie in (0, 1]")]
    CrossClassIou(f64),
    #[error("same_label_nms_iou {0} must lie in (0, 1]")]
    SameLabelIou(f64),
}

/// Thresholds for the post-detection filters. Area bounds are fractions of
/// the frame area; aspect is box width over height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub min_confidence: f64,
    pub min_area_frac: f64,
    pub max_area_frac: f64,
    pub min_aspect: f64,
    pub max_aspect: f64,
    pub cross_class_iou: f64,
    /// Optional same-label suppression after cross-class resolution. Off by
    /// default; the backend is expected to run its own NMS.
    pub same_label_nms_iou: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_confidence: 0.30,
            min_area_frac: 0.0005,
            max_area_frac: 0.25,
            min_aspect: 0.3,
            max_aspect: 4.0,
            cross_class_iou: 0.5,
            same_label_nms_iou: None,
        }
    }
}

fn in_unit_open_closed(v: f64) -> bool {
    v > 0.0 && v <= 1.0
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterConfigError> {
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(FilterConfigError::Confidence(self.min_confidence));
        }
        if !(self.min_area_frac > 0.0
            && self.min_area_frac < self.max_area_frac
            && self.max_area_frac <= 1.0)
        {
            return Err(FilterConfigError::Area(self.min_area_frac, self.max_area_frac));
        }
        if !(self.min_aspect > 0.0 && self.min_aspect < self.max_aspect && self.max_aspect.is_finite())
        {
            return Err(FilterConfigError::Aspect(self.min_aspect, self.max_aspect));
        }
        if !in_unit_open_closed(self.cross_class_iou) {
            return Err(FilterConfigError::CrossClassIou(self.cross_class_iou));
        }
        if let Some(t) = self.same_label_nms_iou {
            if !in_unit_open_closed(t) {
                return Err(FilterConfigError::SameLabelIou(t));
            }
        }
        Ok(())
    }
}

pub fn filter_by_confidence(dets: &[Detection], min_confidence: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.confidence >= min_confidence)
        .copied()
        .collect()
}

/// Whether a box's frame-area fraction and aspect ratio are plausible.
pub fn passes_size(bbox: &BoundingBox, cfg: &FilterConfig, image_w: u32, image_h: u32) -> bool {
    let frame = f64::from(image_w) * f64::from(image_h);
    let area_frac = bbox.area() / frame;
    let aspect = bbox.w() / bbox.h();
    (cfg.min_area_frac..=cfg.max_area_frac).contains(&area_frac)
        && (cfg.min_aspect..=cfg.max_aspect).contains(&aspect)
}

pub fn filter_by_size(
    dets: &[Detection],
    cfg: &FilterConfig,
    image_w: u32,
    image_h: u32,
) -> Vec<Detection> {
    dets.iter()
        .filter(|d| passes_size(&d.bbox, cfg, image_w, image_h))
        .copied()
        .collect()
}

/// `a` beats `b` when it has higher confidence, then the earlier label, then
/// the earlier input position.
fn beats(a: (usize, &Detection), b: (usize, &Detection)) -> bool {
    match a.1.confidence.partial_cmp(&b.1.confidence) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => (a.1.label, a.0) < (b.1.label, b.0),
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Collapses detections of an object reported under several labels.
///
/// Detections with different labels and IoU at or above `cross_class_iou` are
/// joined; each connected component keeps only its best member. Survivors
/// keep their input order.
pub fn resolve_multiclass(dets: &[Detection], cross_class_iou: f64) -> Vec<Detection> {
    let n = dets.len();
    let mut sets = DisjointSets::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if dets[i].label != dets[j].label && iou(&dets[i].bbox, &dets[j].bbox) >= cross_class_iou
            {
                sets.union(i, j);
            }
        }
    }
    let mut best: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..n {
        let root = sets.find(i);
        best.entry(root)
            .and_modify(|cur| {
                if beats((i, &dets[i]), (*cur, &dets[*cur])) {
                    *cur = i;
                }
            })
            .or_insert(i);
    }
    let mut keep: Vec<usize> = best.into_values().collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| dets[i]).collect()
}

/// Greedy per-label non-maximum suppression.
pub fn suppress_same_label(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        if beats((a, &dets[a]), (b, &dets[b])) {
            Ordering::Less
        } else {
            Ordering::Greater
        }
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept.iter().any(|&k| {
            dets[k].label == dets[i].label && iou(&dets[k].bbox, &dets[i].bbox) >= iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept.into_iter().map(|i| dets[i]).collect()
}

/// Confidence floor, then size filter, then cross-class resolution, then the
/// optional same-label suppression.
pub fn run_filter_pipeline(
    dets: &[Detection],
    cfg: &FilterConfig,
    image_w: u32,
    image_h: u32,
) -> Vec<Detection> {
    let confident = filter_by_confidence(dets, cfg.min_confidence);
    let sized = filter_by_size(&confident, cfg, image_w, image_h);
    let resolved = resolve_multiclass(&sized, cfg.cross_class_iou);
    match cfg.same_label_nms_iou {
        Some(t) => suppress_same_label(&resolved, t),
        None => resolved,
    }
}
