//! Plain 2D geometry: points, segments, and the intersection tests the
//! simulator is built on. Walls are zero-thickness segments and touching
//! an endpoint counts as crossing, so all predicates here are inclusive.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: Point) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn dist_sq(&self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Axis-aligned rectangle, inclusive on all edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect {
            min: Point::new(x0.min(x1), y0.min(y1)),
            max: Point::new(x0.max(x1), y0.max(y1)),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub fn new(ax: f64, ay: f64, bx: f64, by: f64) -> Self {
        Segment {
            a: Point::new(ax, ay),
            b: Point::new(bx, by),
        }
    }

    /// Signed area of the triangle (a, b, c); zero means collinear.
    fn orient(a: Point, b: Point, c: Point) -> f64 {
        (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
    }

    /// True when `p` lies exactly on this segment (collinear and inside
    /// the bounding box, endpoints included).
    pub fn contains_point(&self, p: Point) -> bool {
        if Self::orient(self.a, self.b, p) != 0.0 {
            return false;
        }
        p.x >= self.a.x.min(self.b.x)
            && p.x <= self.a.x.max(self.b.x)
            && p.y >= self.a.y.min(self.b.y)
            && p.y <= self.a.y.max(self.b.y)
    }

    /// Inclusive segment-segment intersection: shared endpoints and
    /// collinear overlap both count.
    pub fn intersects(&self, other: &Segment) -> bool {
        let d1 = Self::orient(other.a, other.b, self.a);
        let d2 = Self::orient(other.a, other.b, self.b);
        let d3 = Self::orient(self.a, self.b, other.a);
        let d4 = Self::orient(self.a, self.b, other.b);

        if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
            && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
        {
            return true;
        }
        (d1 == 0.0 && other.contains_point(self.a))
            || (d2 == 0.0 && other.contains_point(self.b))
            || (d3 == 0.0 && self.contains_point(other.a))
            || (d4 == 0.0 && self.contains_point(other.b))
    }

    /// Minimum distance from `p` to this segment.
    pub fn dist_to_point(&self, p: Point) -> f64 {
        let vx = self.b.x - self.a.x;
        let vy = self.b.y - self.a.y;
        let len_sq = vx * vx + vy * vy;
        if len_sq == 0.0 {
            return self.a.dist(p);
        }
        let t = ((p.x - self.a.x) * vx + (p.y - self.a.y) * vy) / len_sq;
        let t = t.clamp(0.0, 1.0);
        p.dist(Point::new(self.a.x + t * vx, self.a.y + t * vy))
    }

    /// True when the segment comes within `radius` of `center`
    /// (boundary inclusive).
    pub fn intersects_disc(&self, center: Point, radius: f64) -> bool {
        self.dist_to_point(center) <= radius
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn proper_crossing() {
        let s1 = Segment::new(0.0, 0.0, 10.0, 10.0);
        let s2 = Segment::new(0.0, 10.0, 10.0, 0.0);
        assert!(s1.intersects(&s2));
    }

    #[test]
    fn disjoint_parallel() {
        let s1 = Segment::new(0.0, 0.0, 10.0, 0.0);
        let s2 = Segment::new(0.0, 1.0, 10.0, 1.0);
        assert!(!s1.intersects(&s2));
    }

    #[test]
    fn touching_endpoint_counts() {
        let s1 = Segment::new(0.0, 0.0, 10.0, 0.0);
        let s2 = Segment::new(10.0, 0.0, 10.0, 10.0);
        assert!(s1.intersects(&s2));
        // T-junction: endpoint in the interior of the other segment.
        let s3 = Segment::new(5.0, 0.0, 5.0, 5.0);
        assert!(s1.intersects(&s3));
    }

    #[test]
    fn collinear_overlap_counts() {
        let s1 = Segment::new(0.0, 0.0, 10.0, 0.0);
        let s2 = Segment::new(5.0, 0.0, 15.0, 0.0);
        assert!(s1.intersects(&s2));
        let s4 = Segment::new(11.0, 0.0, 15.0, 0.0);
        assert!(!s1.intersects(&s4));
    }

    #[test]
    fn disc_intersection() {
        let s = Segment::new(0.0, 0.0, 10.0, 0.0);
        assert!(s.intersects_disc(Point::new(5.0, 3.0), 3.0));
        assert!(!s.intersects_disc(Point::new(5.0, 3.1), 3.0));
        // Segment passing straight through the disc.
        assert!(s.intersects_disc(Point::new(5.0, 0.0), 1.0));
        // Closest point is an endpoint.
        assert!(!s.intersects_disc(Point::new(14.0, 0.0), 3.9));
        assert!(s.intersects_disc(Point::new(14.0, 0.0), 4.0));
    }

    proptest! {
        #[test]
        fn intersection_is_symmetric(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64,
            bx in -50.0..50.0f64, by in -50.0..50.0f64,
            cx in -50.0..50.0f64, cy in -50.0..50.0f64,
            dx in -50.0..50.0f64, dy in -50.0..50.0f64,
        ) {
            let s1 = Segment::new(ax, ay, bx, by);
            let s2 = Segment::new(cx, cy, dx, dy);
            prop_assert_eq!(s1.intersects(&s2), s2.intersects(&s1));
        }

        #[test]
        fn midpoint_always_on_segment(
            ax in -50.0..50.0f64, ay in -50.0..50.0f64,
            t in 0.0..1.0f64,
        ) {
            // Horizontal/vertical segments have exactly representable
            // interior points; those must test as contained.
            let s = Segment::new(ax, ay, ax + 20.0, ay);
            let p = Point::new(ax + t * 20.0, ay);
            prop_assert!(s.contains_point(p));
        }
    }
}
