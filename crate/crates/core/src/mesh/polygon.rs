//! Ear-clipping triangulation of planar polygons with holes.

use nalgebra::Point2;

use crate::tolerance::DEGENERATE_AREA_MM2;

/// Twice the smallest ear area worth emitting; thinner ears would be
/// discarded as degenerate downstream and leave a hole.
const MIN_EAR_CROSS: f64 = 3.0 * DEGENERATE_AREA_MM2;

fn cross(o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

pub(crate) fn signed_area(ring: &[Point2<f64>]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        * 0.5
}

fn in_triangle(p: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>) -> bool {
    cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0
}

/// Triangulates `outer` (any orientation) minus `holes`. Indices refer to
/// the concatenation `outer ++ holes[0] ++ holes[1] ++ …`; triangles are
/// counter-clockwise.
pub(crate) fn triangulate(outer: &[Point2<f64>], holes: &[Vec<Point2<f64>>]) -> Vec<[usize; 3]> {
    let mut pts: Vec<Point2<f64>> = outer.to_vec();
    let mut ring: Vec<usize> = (0..outer.len()).collect();
    if signed_area(outer) < 0.0 {
        ring.reverse();
    }
    let mut hole_rings: Vec<Vec<usize>> = Vec::new();
    for h in holes {
        let base = pts.len();
        pts.extend_from_slice(h);
        let mut r: Vec<usize> = (base..base + h.len()).collect();
        if signed_area(h) > 0.0 {
            r.reverse();
        }
        if r.len() >= 3 {
            hole_rings.push(r);
        }
    }
    // bridge holes from right to left so earlier bridges never block later ones
    hole_rings.sort_by(|a, b| {
        let ma = a.iter().map(|&i| pts[i].x).fold(f64::NEG_INFINITY, f64::max);
        let mb = b.iter().map(|&i| pts[i].x).fold(f64::NEG_INFINITY, f64::max);
        mb.total_cmp(&ma)
    });
    for h in hole_rings {
        ring = bridge(&pts, ring, &h);
    }
    clip_ears(&pts, ring)
}

/// Splices hole ring `h` into `ring` through a mutually visible vertex pair.
fn bridge(pts: &[Point2<f64>], ring: Vec<usize>, h: &[usize]) -> Vec<usize> {
    let (hpos, &m) = h
        .iter()
        .enumerate()
        .max_by(|a, b| pts[*a.1].x.total_cmp(&pts[*b.1].x).then(b.0.cmp(&a.0)))
        .unwrap();
    let mp = pts[m];
    // nearest edge crossing of the +x ray from m
    let n = ring.len();
    let mut best_x = f64::INFINITY;
    let mut best_slot = None;
    for s in 0..n {
        let a = pts[ring[s]];
        let b = pts[ring[(s + 1) % n]];
        if (a.y > mp.y) == (b.y > mp.y) {
            continue;
        }
        let x = a.x + (mp.y - a.y) * (b.x - a.x) / (b.y - a.y);
        if x >= mp.x && x < best_x {
            best_x = x;
            best_slot = Some(if a.x > b.x { s } else { (s + 1) % n });
        }
    }
    let mut slot = match best_slot {
        Some(s) => s,
        None => (0..n)
            .min_by(|&a, &b| {
                (pts[ring[a]] - mp)
                    .norm_squared()
                    .total_cmp(&(pts[ring[b]] - mp).norm_squared())
            })
            .unwrap(),
    };
    // a reflex vertex inside (m, hit, candidate) would block the bridge
    let hit = Point2::new(best_x.min(1e300), mp.y);
    let cand = pts[ring[slot]];
    if best_slot.is_some() {
        let mut best_angle = f64::INFINITY;
        let mut best_d = f64::INFINITY;
        for s in 0..n {
            let p = pts[ring[s]];
            if ring[s] == ring[slot] || p == cand {
                continue;
            }
            let prev = pts[ring[(s + n - 1) % n]];
            let next = pts[ring[(s + 1) % n]];
            let reflex = cross(&prev, &p, &next) <= 0.0;
            let (a, b, c) = if mp.y <= cand.y { (mp, hit, cand) } else { (mp, cand, hit) };
            if reflex && p.x >= mp.x && in_triangle(&p, &a, &b, &c) {
                let d = p - mp;
                let angle = (d.y.abs()).atan2(d.x);
                let dist = d.norm_squared();
                if angle < best_angle || (angle == best_angle && dist < best_d) {
                    best_angle = angle;
                    best_d = dist;
                    slot = s;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(ring.len() + h.len() + 2);
    out.extend_from_slice(&ring[..=slot]);
    for k in 0..=h.len() {
        out.push(h[(hpos + k) % h.len()]);
    }
    out.push(ring[slot]);
    out.extend_from_slice(&ring[slot + 1..]);
    out
}

/// Ear clipping with straight vertices set aside first: a vertex lying on
/// the segment between its neighbours would otherwise end up in a
/// zero-area triangle. Each is spliced back into the triangle that owns
/// its edge.
fn clip_ears(pts: &[Point2<f64>], mut ring: Vec<usize>) -> Vec<[usize; 3]> {
    let mut straight = Vec::new();
    let mut i = 0;
    while ring.len() > 3 && i < ring.len() {
        let n = ring.len();
        let (a, b, c) = (pts[ring[(i + n - 1) % n]], pts[ring[i]], pts[ring[(i + 1) % n]]);
        if cross(&a, &b, &c).abs() <= MIN_EAR_CROSS && (b - a).dot(&(c - b)) > 0.0 {
            straight.push((ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]));
            ring.remove(i);
            i = i.saturating_sub(1);
        } else {
            i += 1;
        }
    }
    let mut out = clip_clean(pts, ring);
    for &(a, b, c) in straight.iter().rev() {
        let owner = out.iter().position(|t| (0..3).any(|k| t[k] == a && t[(k + 1) % 3] == c));
        if let Some(ti) = owner {
            let t = out[ti];
            let k = (0..3).find(|&k| t[k] == a).unwrap();
            let apex = t[(k + 2) % 3];
            out[ti] = [a, b, apex];
            out.push([b, c, apex]);
        }
    }
    out
}

fn clip_clean(pts: &[Point2<f64>], mut ring: Vec<usize>) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(ring.len().saturating_sub(2));
    let mut i = 0;
    let mut stall = 0;
    while ring.len() > 3 {
        let n = ring.len();
        let (ia, ib, ic) = (ring[(i + n - 1) % n], ring[i % n], ring[(i + 1) % n]);
        let (a, b, c) = (pts[ia], pts[ib], pts[ic]);
        let convex = cross(&a, &b, &c) > MIN_EAR_CROSS;
        let is_ear = convex
            && !ring.iter().any(|&j| {
                let p = pts[j];
                p != a && p != b && p != c && in_triangle(&p, &a, &b, &c)
            });
        if is_ear || stall > n {
            if stall > n {
                // no clean ear (degenerate input): clip the most convex corner
                let k = (0..n)
                    .max_by(|&x, &y| {
                        let cx = cross(&pts[ring[(x + n - 1) % n]], &pts[ring[x]], &pts[ring[(x + 1) % n]]);
                        let cy = cross(&pts[ring[(y + n - 1) % n]], &pts[ring[y]], &pts[ring[(y + 1) % n]]);
                        cx.total_cmp(&cy).then(y.cmp(&x))
                    })
                    .unwrap();
                i = k;
                let n = ring.len();
                out.push([ring[(i + n - 1) % n], ring[i], ring[(i + 1) % n]]);
            } else {
                out.push([ia, ib, ic]);
            }
            ring.remove(i % ring.len());
            stall = 0;
            if i >= ring.len() {
                i = 0;
            }
        } else {
            i = (i + 1) % n;
            stall += 1;
        }
    }
    if ring.len() == 3 {
        out.push([ring[0], ring[1], ring[2]]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn area(pts: &[Point2<f64>], tris: &[[usize; 3]]) -> f64 {
        tris.iter()
            .map(|t| 0.5 * cross(&pts[t[0]], &pts[t[1]], &pts[t[2]]))
            .sum()
    }

    fn circle(c: (f64, f64), r: f64, n: usize, ccw: bool) -> Vec<Point2<f64>> {
        (0..n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU * if ccw { 1.0 } else { -1.0 };
                Point2::new(c.0 + r * a.cos(), c.1 + r * a.sin())
            })
            .collect()
    }

    #[test]
    fn straight_vertices_are_kept_in_proper_triangles() {
        // square with extra points on two edges, one of them mid-run
        let ring: Vec<Point2<f64>> = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (2.0, 2.0), (2.0, 1.5), (0.0, 2.0)]
            .iter()
            .map(|&(x, y)| Point2::new(x, y))
            .collect();
        let ring = [ring[0], ring[1], ring[2], ring[4], ring[3], ring[5]];
        let tris = triangulate(&ring, &[]);
        assert_eq!(tris.len(), 4);
        assert!((area(&ring, &tris) - 4.0).abs() < 1e-12);
        for t in &tris {
            assert!(cross(&ring[t[0]], &ring[t[1]], &ring[t[2]]) > MIN_EAR_CROSS, "{t:?}");
        }
    }

    #[test]
    fn concave_polygon() {
        let l = vec![
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 1.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 2.0),
            Point2::new(0.0, 2.0),
        ];
        let t = triangulate(&l, &[]);
        assert_eq!(t.len(), 4);
        assert!((area(&l, &t) - 3.0).abs() < 1e-12);
        assert!(t.iter().all(|t| cross(&l[t[0]], &l[t[1]], &l[t[2]]) > 0.0));
    }

    #[test]
    fn annulus_and_two_holes() {
        let outer = circle((0.0, 0.0), 10.0, 64, false);
        let holes = vec![circle((-4.0, 0.0), 2.0, 24, true), circle((4.0, 1.0), 3.0, 32, true)];
        let t = triangulate(&outer, &holes);
        let mut all = outer.clone();
        for h in &holes {
            all.extend_from_slice(h);
        }
        let expect = signed_area(&outer).abs() - holes.iter().map(|h| signed_area(h).abs()).sum::<f64>();
        assert!((area(&all, &t) - expect).abs() < 1e-9, "{} vs {expect}", area(&all, &t));
        assert_eq!(t.len(), 64 + 24 + 32 + 2 * 2 - 2);
    }
}
