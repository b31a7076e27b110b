//! One-dimensional quadrature helpers.

/// 8-point Gauss–Legendre nodes and weights on `[-1, 1]`.
const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// Composite 8-point Gauss–Legendre rule with panels no wider than `max_panel`.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl CompositeRule {
    pub fn new(a: f64, b: f64, max_panel: f64) -> Self {
        if b <= a {
            return Self { nodes: Vec::new(), weights: Vec::new() };
        }
        let panels = ((b - a) / max_panel).ceil().max(1.0) as usize;
        let width = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * 8);
        let mut weights = Vec::with_capacity(panels * 8);
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * width;
            for &(x, w) in &GL8 {
                nodes.push(mid + 0.5 * width * x);
                weights.push(0.5 * width * w);
            }
        }
        Self { nodes, weights }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Composite trapezoid weights for `n` equally spaced samples.
pub fn trapezoid_weights(n: usize, step: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let mut w = vec![step; n];
            w[0] = 0.5 * step;
            w[n - 1] = 0.5 * step;
            w
        }
    }
}
