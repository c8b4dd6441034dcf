//! Gauss–Legendre rules and their tensor products over boxes.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point rule on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi's initial guess, then Newton on P_n
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor rule over `bounds`, normalized to a probability measure (weights
/// sum to one). Degenerate intervals contribute a single node.
#[derive(Debug, Clone)]
pub struct TensorRule {
    axes: Vec<(Vec<f64>, Vec<f64>)>,
}

impl TensorRule {
    pub fn new(bounds: &[[f64; 2]], nodes: usize) -> Self {
        let (x, w) = gauss_legendre(nodes);
        let axes = bounds
            .iter()
            .map(|&[lo, hi]| {
                if lo == hi {
                    (vec![lo], vec![1.0])
                } else {
                    let mid = 0.5 * (lo + hi);
                    let half = 0.5 * (hi - lo);
                    (x.iter().map(|t| mid + half * t).collect(), w.iter().map(|v| 0.5 * v).collect())
                }
            })
            .collect();
        TensorRule { axes }
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.0.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node `index` (first axis slowest) and its weight.
    pub fn node(&self, mut index: usize) -> (Vec<f64>, f64) {
        let mut point = vec![0.0; self.axes.len()];
        let mut weight = 1.0;
        for (a, (x, w)) in self.axes.iter().enumerate().rev() {
            let k = index % x.len();
            index /= x.len();
            point[a] = x[k];
            weight *= w[k];
        }
        (point, weight)
    }
}
