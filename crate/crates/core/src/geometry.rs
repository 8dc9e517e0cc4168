//! Axis-aligned boxes and the center-based metrics built on them.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Center-size box in pixel units. Width and height are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Panics on non-positive or non-finite sizes.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        assert!(
            w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite(),
            "box size must be positive, got {w}x{h}"
        );
        assert!(cx.is_finite() && cy.is_finite(), "box center must be finite");
        Self { cx, cy, w, h }
    }

    /// Box whose top-left corner is `(x0, y0)`.
    pub fn from_corner(x0: f64, y0: f64, w: f64, h: f64) -> Self {
        Self::new(x0 + w / 2.0, y0 + h / 2.0, w, h)
    }

    /// `(x0, y0, x1, y1)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.cx + dx, self.cy + dy, self.w, self.h)
    }

    pub fn with_center(&self, p: Point) -> Self {
        Self::new(p.x, p.y, self.w, self.h)
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }
}

/// Intersection over union; touching boxes give exactly zero.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = ax1.min(bx1) - ax0.max(bx0);
    let ih = ay1.min(by1) - ay0.max(by0);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn center(b: &BBox) -> Point {
    b.center()
}

/// Center location error.
pub fn cle(a: &BBox, b: &BBox) -> f64 {
    a.center().dist(b.center())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Counts unit cells covered by integer-aligned boxes, refined by `sub`.
    fn raster_iou(a: &BBox, b: &BBox, sub: i64) -> f64 {
        let (ax0, ay0, ax1, ay1) = a.corners();
        let (bx0, by0, bx1, by1) = b.corners();
        let lo_x = ax0.min(bx0).floor() as i64 * sub;
        let hi_x = ax1.max(bx1).ceil() as i64 * sub;
        let lo_y = ay0.min(by0).floor() as i64 * sub;
        let hi_y = ay1.max(by1).ceil() as i64 * sub;
        let (mut inter, mut union) = (0u64, 0u64);
        let s = sub as f64;
        for gy in lo_y..hi_y {
            for gx in lo_x..hi_x {
                let (px, py) = ((gx as f64 + 0.5) / s, (gy as f64 + 0.5) / s);
                let in_a = px > ax0 && px < ax1 && py > ay0 && py < ay1;
                let in_b = px > bx0 && px < bx1 && py > by0 && py < by1;
                inter += (in_a && in_b) as u64;
                union += (in_a || in_b) as u64;
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let b = BBox::new(3.5, -2.0, 7.0, 1.5);
        assert_eq!(iou(&b, &b), 1.0);
        let a = BBox::new(1.0, 1.0, 2.0, 2.0);
        assert_eq!(iou(&a, &BBox::new(10.0, 10.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn iou_half_overlap_is_one_third() {
        let a = BBox::new(1.0, 1.0, 2.0, 2.0);
        let b = BBox::new(2.0, 1.0, 2.0, 2.0);
        let oracle = raster_iou(&a, &b, 8);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou(&a, &b) - oracle).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_have_zero_iou() {
        let a = BBox::from_corner(0.0, 0.0, 32.0, 32.0);
        let b = BBox::from_corner(32.0, 5.0, 32.0, 32.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn center_and_cle() {
        let b = BBox::new(3.0, 4.0, 2.0, 2.0);
        assert_eq!(center(&b), Point::new(3.0, 4.0));
        assert_eq!(center(&b.translate(2.0, -1.0)), Point::new(5.0, 3.0));
        assert_eq!(center(&BBox::new(0.0, 0.0, 5.0, 7.0)), Point::new(0.0, 0.0));
        assert_eq!(cle(&b, &b), 0.0);
        let o = BBox::new(0.0, 0.0, 4.0, 4.0);
        assert_eq!(cle(&o, &BBox::new(3.0, 4.0, 4.0, 4.0)), 5.0);
        assert_eq!(
            cle(&o, &BBox::new(3.0, 4.0, 4.0, 4.0)),
            cle(&BBox::new(0.0, 0.0, 9.0, 9.0), &BBox::new(3.0, 4.0, 9.0, 9.0))
        );
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64)
            .prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h))
    }

    fn arb_int_box() -> impl Strategy<Value = BBox> {
        (-20i32..20, -20i32..20, 1i32..15, 1i32..15)
            .prop_map(|(x, y, w, h)| BBox::from_corner(x as f64, y as f64, w as f64, h as f64))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let v = iou(&a, &b);
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&v));
            let (ax0, ay0, ax1, ay1) = a.corners();
            let (bx0, by0, bx1, by1) = b.corners();
            let disjoint = ax1 <= bx0 || bx1 <= ax0 || ay1 <= by0 || by1 <= ay0;
            prop_assert_eq!(v == 0.0, disjoint);
        }

        #[test]
        fn cle_triangle(a in arb_box(), b in arb_box(), c in arb_box()) {
            prop_assert!(cle(&a, &c) <= cle(&a, &b) + cle(&b, &c) + 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn iou_matches_raster(a in arb_int_box(), b in arb_int_box()) {
            prop_assert!((iou(&a, &b) - raster_iou(&a, &b, 1)).abs() < 1e-3);
        }
    }
}
