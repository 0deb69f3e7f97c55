//! Road region-of-interest masks.
//!
//! A mask is a simple polygon in pixel coordinates. Masking blacks out every
//! pixel whose center falls outside the polygon and leaves the rest untouched,
//! so detector boxes stay in the original frame's coordinates.

use alloc::string::String;
use alloc::vec::Vec;

use crate::raster::{ContentHash, TrafficImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaskError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertex {index} ({x}, {y}) lies outside the {width}x{height} frame")]
    VertexOutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("polygon edges {0} and {1} intersect")]
    SelfIntersection(usize, usize),
    #[error("polygon has zero area")]
    Degenerate,
    #[error("mask frame size must be positive, got {0}x{1}")]
    EmptyFrame(u32, u32),
    #[error("image is {image_w}x{image_h} but mask expects {mask_w}x{mask_h}")]
    DimensionMismatch {
        image_w: u32,
        image_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error("image camera {image} does not match mask camera {mask}")]
    CameraMismatch { image: String, mask: String },
}

/// Validated polygon mask for one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiMask {
    camera_id: String,
    polygon: Vec<Point>,
    image_width: u32,
    image_height: u32,
}

impl RoiMask {
    pub fn new(
        camera_id: impl Into<String>,
        image_width: u32,
        image_height: u32,
        polygon: Vec<Point>,
    ) -> Result<Self, MaskError> {
        if image_width == 0 || image_height == 0 {
            return Err(MaskError::EmptyFrame(image_width, image_height));
        }
        validate_polygon(&polygon, image_width, image_height)?;
        Ok(RoiMask {
            camera_id: camera_id.into(),
            polygon,
            image_width,
            image_height,
        })
    }

    pub fn camera_id(&self) -> &str {
        &self.camera_id
    }

    pub fn polygon(&self) -> &[Point] {
        &self.polygon
    }

    pub fn image_width(&self) -> u32 {
        self.image_width
    }

    pub fn image_height(&self) -> u32 {
        self.image_height
    }

    /// Whether the pixel at column `x`, row `y` survives masking.
    pub fn keeps_pixel(&self, x: u32, y: u32) -> bool {
        point_in_polygon(
            Point::new(f64::from(x) + 0.5, f64::from(y) + 0.5),
            &self.polygon,
        )
    }
}

fn validate_polygon(polygon: &[Point], width: u32, height: u32) -> Result<(), MaskError> {
    let n = polygon.len();
    if n < 3 {
        return Err(MaskError::TooFewVertices(n));
    }
    for (index, p) in polygon.iter().enumerate() {
        let inside = p.x.is_finite()
            && p.y.is_finite()
            && (0.0..=f64::from(width)).contains(&p.x)
            && (0.0..=f64::from(height)).contains(&p.y);
        if !inside {
            return Err(MaskError::VertexOutOfBounds {
                index,
                x: p.x,
                y: p.y,
                width,
                height,
            });
        }
    }
    let edge = |i: usize| (polygon[i], polygon[(i + 1) % n]);
    for i in 0..n {
        let (a, b) = edge(i);
        if a == b {
            return Err(MaskError::Degenerate);
        }
        for j in (i + 1)..n {
            let (c, d) = edge(j);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Adjacent edges share one vertex; they may only meet there.
                let (shared, other_a, other_b) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                if cross(shared, other_a, other_b) == 0.0
                    && dot(shared, other_a, other_b) > 0.0
                {
                    return Err(MaskError::SelfIntersection(i, j));
                }
            } else if segments_intersect(a, b, c, d) {
                return Err(MaskError::SelfIntersection(i, j));
            }
        }
    }
    if signed_area(polygon) == 0.0 {
        return Err(MaskError::Degenerate);
    }
    Ok(())
}

fn signed_area(polygon: &[Point]) -> f64 {
    let n = polygon.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

/// z-component of (a - o) x (b - o).
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn dot(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.x - o.x) + (a.y - o.y) * (b.y - o.y)
}

fn within_bbox(p: Point, a: Point, b: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    cross(a, b, p) == 0.0 && within_bbox(p, a, b)
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

/// Even-odd membership test. Points on an edge or vertex count as inside.
pub fn point_in_polygon(p: Point, polygon: &[Point]) -> bool {
    let n = polygon.len();
    if n == 0 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[j];
        if on_segment(p, a, b) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Blacks out every pixel whose center lies outside the mask polygon and
/// recomputes the content hash over the masked RGB buffer.
pub fn apply_mask(image: &TrafficImage, mask: &RoiMask) -> Result<TrafficImage, MaskError> {
    if image.width() != mask.image_width || image.height() != mask.image_height {
        return Err(MaskError::DimensionMismatch {
            image_w: image.width(),
            image_h: image.height(),
            mask_w: mask.image_width,
            mask_h: mask.image_height,
        });
    }
    if image.camera_id != mask.camera_id {
        return Err(MaskError::CameraMismatch {
            image: image.camera_id.clone(),
            mask: mask.camera_id.clone(),
        });
    }
    let mut pixels = image.pixels.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            if !mask.keeps_pixel(x, y) {
                pixels.set_pixel(x, y, [0, 0, 0]);
            }
        }
    }
    let content_hash = ContentHash::of(pixels.as_bytes());
    Ok(TrafficImage {
        camera_id: image.camera_id.clone(),
        image_timestamp: image.image_timestamp,
        pixels,
        content_hash,
    })
}
