use tdlab::geom::Point;

fn rot(p: Point, c: Point, th: f64) -> Point {
    let (s, co) = th.sin_cos();
    let (dx, dy) = (p.x - c.x, p.y - c.y);
    Point::new(c.x + co * dx - s * dy, c.y + s * dx + co * dy)
}

// scheme 0: independent rotations (bottom about a, top about b)
// scheme 1: chain from bottom (middle+top about a, then top about moved b)
// scheme 2: chain from top (middle+bottom about b, then bottom about moved a)
fn transform(scheme: usize, a: Point, b: Point, sa: f64, sb: f64, p: Point) -> Point {
    let th_a = sa * 60f64.to_radians();
    let th_b = sb * 60f64.to_radians();
    match scheme {
        0 => {
            if p.y < 100.0 {
                rot(p, a, th_a)
            } else if p.y > 200.0 {
                rot(p, b, th_b)
            } else {
                p
            }
        }
        1 => {
            if p.y < 100.0 {
                p
            } else if p.y <= 200.0 {
                rot(p, a, th_a)
            } else {
                let b_moved = rot(b, a, th_a);
                rot(rot(p, a, th_a), b_moved, th_b)
            }
        }
        _ => {
            if p.y > 200.0 {
                p
            } else if p.y >= 100.0 {
                rot(p, b, th_b)
            } else {
                let a_moved = rot(a, b, th_b);
                rot(rot(p, b, th_b), a_moved, th_a)
            }
        }
    }
}

fn main() {
    let pivots_a = [Point::new(300.0, 100.0), Point::new(350.0, 100.0), Point::new(400.0, 100.0)];
    let pivots_b = [Point::new(0.0, 200.0), Point::new(50.0, 200.0), Point::new(100.0, 200.0)];
    // Sample points per band (dense grid, excluding exact band boundaries).
    let mut bands: Vec<Vec<Point>> = vec![vec![], vec![], vec![]];
    let step = 5.0;
    let mut y = 2.5;
    while y < 300.0 {
        let mut x = 2.5;
        while x <= 400.0 {
            let p = Point::new(x, y);
            let band = if y < 100.0 { 0 } else if y <= 200.0 { 1 } else { 2 };
            bands[band].push(p);
            x += step;
        }
        y += step;
    }
    let mut results: Vec<(f64, String)> = Vec::new();
    for scheme in 0..3usize {
        for &a in &pivots_a {
            for &b in &pivots_b {
                for sa in [-1.0, 1.0] {
                    for sb in [-1.0, 1.0] {
                        // Transform all samples.
                        let imgs: Vec<Vec<Point>> = bands
                            .iter()
                            .map(|band| {
                                band.iter().map(|&p| transform(scheme, a, b, sa, sb, p)).collect()
                            })
                            .collect();
                        // Min distance between different bands' images.
                        let mut min_inter = f64::INFINITY;
                        for i in 0..3 {
                            for j in (i + 1)..3 {
                                for p in &imgs[i] {
                                    for q in &imgs[j] {
                                        min_inter = min_inter.min(p.dist(*q));
                                    }
                                }
                            }
                        }
                        // Across-wall separation (pairs 10 apart straddling walls).
                        let mut min_sep = f64::INFINITY;
                        for k in 0..=60 {
                            let x = k as f64 * 5.0;
                            if x <= 300.0 {
                                let lo = transform(scheme, a, b, sa, sb, Point::new(x, 95.0));
                                let hi = transform(scheme, a, b, sa, sb, Point::new(x, 105.0));
                                min_sep = min_sep.min(lo.dist(hi));
                            }
                            let x2 = 100.0 + x;
                            if x2 <= 400.0 {
                                let lo = transform(scheme, a, b, sa, sb, Point::new(x2, 195.0));
                                let hi = transform(scheme, a, b, sa, sb, Point::new(x2, 205.0));
                                min_sep = min_sep.min(lo.dist(hi));
                            }
                        }
                        // Bounding box of all images.
                        let (mut xmin, mut xmax, mut ymin, mut ymax) =
                            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
                        for band in &imgs {
                            for p in band {
                                xmin = xmin.min(p.x);
                                xmax = xmax.max(p.x);
                                ymin = ymin.min(p.y);
                                ymax = ymax.max(p.y);
                            }
                        }
                        let (w, h) = (xmax - xmin, ymax - ymin);
                        // Require: injectivity margin (> 3: grid spacing diag ~7/2)
                        // and wall separation >= 100.
                        if min_inter > 3.5 && min_sep >= 100.0 {
                            let area = w * h;
                            results.push((
                                area,
                                format!(
                                    "scheme{scheme} a=({},{}) b=({},{}) sa={sa:+} sb={sb:+}: inter={min_inter:.1} sep={min_sep:.1} bbox {w:.0}x{h:.0}"
                                , a.x, a.y, b.x, b.y),
                            ));
                        }
                    }
                }
            }
        }
    }
    results.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    for (_, line) in results.iter().take(12) {
        println!("{line}");
    }
    println!("... {} feasible of 108", results.len());
}
