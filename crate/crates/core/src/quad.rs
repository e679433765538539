//! Fixed-order Gauss-Legendre panels used to initialize history data.

const GL8_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Calls `f(s, w)` for every node of an 8-point Gauss-Legendre rule on `[a, b]`.
pub(crate) fn gauss_legendre_8(a: f64, b: f64, mut f: impl FnMut(f64, f64)) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
        f(mid - half * x, half * w);
        f(mid + half * x, half * w);
    }
}

/// Panel edges on `[0, end]`: uniform width `h0` up to `1`, then geometric growth
/// by `ratio`, never wider than `max_width`.
pub(crate) fn graded_panels(end: f64, h0: f64, ratio: f64, max_width: f64) -> Vec<f64> {
    let mut edges = vec![0.0];
    let mut s = 0.0;
    let mut h = h0;
    while s < end {
        let next = (s + h).min(end);
        edges.push(next);
        s = next;
        if s >= 1.0 {
            h = (h * ratio).min(max_width);
        }
    }
    edges
}
