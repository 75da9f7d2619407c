//! Axis-aligned boxes in continuous pixel coordinates.
//!
//! Origin is the top-left corner of the frame and `y` grows downward. Boxes
//! are real-valued so that padding can be applied without rounding; they are
//! only rasterized when a patch is cropped out of an image.

use crate::error::{Error, Result};

/// Frame or patch dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameSize {
    pub width: usize,
    pub height: usize,
}

impl FrameSize {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn as_box(&self) -> BoundingBox {
        BoundingBox::new(0.0, 0.0, self.width as f64, self.height as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// Checked constructor: width and height must be strictly positive and
    /// every coordinate finite.
    pub fn try_new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self::new(x, y, w, h);
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::Invariant(alloc::format!(
                "box ({x}, {y}, {w}, {h}) needs finite coordinates and w, h > 0"
            )))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// `true` when `inner` lies within `self`, allowing each edge to poke out
    /// by at most `tol` pixels.
    pub fn contains_with_tolerance(&self, inner: &BoundingBox, tol: f64) -> bool {
        inner.x >= self.x - tol
            && inner.y >= self.y - tol
            && inner.right() <= self.right() + tol
            && inner.bottom() <= self.bottom() + tol
    }

    pub fn contains(&self, inner: &BoundingBox) -> bool {
        self.contains_with_tolerance(inner, 0.0)
    }

    pub fn center_distance(&self, other: &BoundingBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        libm::hypot(ax - bx, ay - by)
    }
}

/// Intersection over union of two valid boxes, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Intersection of `b` with the frame rectangle.
pub fn clip_box(b: &BoundingBox, frame: FrameSize) -> Result<BoundingBox> {
    let x0 = b.x.max(0.0);
    let y0 = b.y.max(0.0);
    let x1 = b.right().min(frame.width as f64);
    let y1 = b.bottom().min(frame.height as f64);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::EmptyBox);
    }
    Ok(BoundingBox::new(x0, y0, x1 - x0, y1 - y0))
}

/// Scales width and height by `1 + alpha` about the box center.
pub fn expand_box(b: &BoundingBox, alpha: f64) -> BoundingBox {
    BoundingBox::new(
        b.x - 0.5 * alpha * b.w,
        b.y - 0.5 * alpha * b.h,
        b.w * (1.0 + alpha),
        b.h * (1.0 + alpha),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h)
    }

    #[test]
    fn iou_cases() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 0.0, 5.0, 5.0)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &bx(10.0, 0.0, 5.0, 5.0)), 0.0);
        let half = iou(&a, &bx(5.0, 0.0, 10.0, 10.0));
        assert!((half - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn clip_cases() {
        let frame = FrameSize::new(100, 100);
        let inside = bx(10.0, 20.0, 30.0, 40.0);
        assert_eq!(clip_box(&inside, frame).unwrap(), inside);
        assert_eq!(
            clip_box(&bx(-5.0, -5.0, 20.0, 20.0), frame).unwrap(),
            bx(0.0, 0.0, 15.0, 15.0)
        );
        assert_eq!(clip_box(&bx(120.0, 10.0, 10.0, 10.0), frame), Err(Error::EmptyBox));
        assert_eq!(clip_box(&bx(100.0, 10.0, 10.0, 10.0), frame), Err(Error::EmptyBox));
    }

    #[test]
    fn expand_cases() {
        let b = bx(10.0, 10.0, 10.0, 20.0);
        assert_eq!(expand_box(&b, 0.0), b);
        assert_eq!(expand_box(&b, 0.5), bx(7.5, 5.0, 15.0, 30.0));
        for alpha in [0.1, 0.25, 0.5, 1.0, 2.0] {
            let e = expand_box(&b, alpha);
            let expected = 1.0 / ((1.0 + alpha) * (1.0 + alpha));
            assert!((iou(&b, &e) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn try_new_rejects_degenerate() {
        assert!(BoundingBox::try_new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::try_new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BoundingBox::try_new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BoundingBox::try_new(-3.0, 0.0, 1.0, 1.0).is_ok());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn any_box() -> impl Strategy<Value = BoundingBox> {
            (-50.0..150.0f64, -50.0..150.0f64, 0.5..80.0f64, 0.5..80.0f64)
                .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h))
        }

        proptest! {
            #[test]
            fn iou_symmetric_and_bounded(a in any_box(), b in any_box()) {
                let ab = iou(&a, &b);
                prop_assert_eq!(ab, iou(&b, &a));
                prop_assert!((0.0..=1.0).contains(&ab));
                if ab == 1.0 {
                    prop_assert!((a.x - b.x).abs() < 1e-9 && (a.w - b.w).abs() < 1e-9);
                }
            }

            #[test]
            fn expansion_contains_original(b in any_box(), alpha in 0.0..3.0f64) {
                let e = expand_box(&b, alpha);
                prop_assert!(e.contains_with_tolerance(&b, 1e-9));
                let (cx, cy) = b.center();
                let (ex, ey) = e.center();
                prop_assert!((cx - ex).abs() < 1e-9 && (cy - ey).abs() < 1e-9);
            }

            #[test]
            fn clip_is_idempotent(b in any_box()) {
                let frame = FrameSize::new(100, 80);
                if let Ok(c) = clip_box(&b, frame) {
                    prop_assert_eq!(clip_box(&c, frame).unwrap(), c);
                    prop_assert!(frame.as_box().contains(&c));
                }
            }
        }
    }
}
