//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

/// Upper hull by exhaustive search: keep the best performance per cost,
/// keep points strictly better than everything cheaper, then drop any point
/// on or below a chord between a cheaper and a dearer survivor.
pub fn brute_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut best: Vec<(f64, f64)> = Vec::new();
    for &(c, p) in points {
        match best.iter_mut().find(|b| b.0 == c) {
            Some(b) => b.1 = b.1.max(p),
            None => best.push((c, p)),
        }
    }
    let pareto: Vec<(f64, f64)> = best
        .iter()
        .copied()
        .filter(|&(c, p)| !best.iter().any(|&(c2, p2)| c2 < c && p2 >= p))
        .collect();
    let mut hull: Vec<(f64, f64)> = pareto
        .iter()
        .copied()
        .filter(|&(c, p)| {
            !pareto.iter().any(|&(c1, p1)| {
                pareto.iter().any(|&(c2, p2)| {
                    c1 < c && c < c2 && {
                        // p on or below the chord, compared without division.
                        (p - p1) * (c2 - c1) <= (p2 - p1) * (c - c1)
                    }
                })
            })
        })
        .collect();
    hull.sort_by(|a, b| a.0.total_cmp(&b.0));
    hull
}

/// Trapezoid area under the vertices, flat at the last vertex out to `b`,
/// divided by the cost range.
pub fn brute_aiq(points: &[(f64, f64)]) -> f64 {
    let hull = brute_hull(points);
    let a = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let b = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut area = 0.0;
    for w in hull.windows(2) {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    let last = hull[hull.len() - 1];
    area += (b - last.0) * last.1;
    area / (b - a)
}

/// Reward written out longhand.
pub fn reward(linear: bool, s: f64, c: f64, lambda: f64) -> f64 {
    if linear {
        s - c / lambda
    } else {
        s * (-(c / lambda)).exp()
    }
}
