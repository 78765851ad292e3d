//! Symmetric quadrature on the reference triangle, in barycentric coordinates.
//!
//! Weights are normalized to sum to one, so an integral over a physical triangle is
//! `area * sum(w_q f(x_q))`.

#[derive(Debug, Clone)]
pub struct Quadrature {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl Quadrature {
    /// Twelve-point rule exact through degree 6, all weights positive.
    ///
    /// Orbit parameters were re-solved from the moment equations in extended precision.
    pub fn degree6() -> Self {
        const A1: f64 = 0.249_286_745_170_910_421_29;
        const A2: f64 = 0.063_089_014_491_502_228_34;
        const B: f64 = 0.310_352_451_033_784_405_42;
        const C: f64 = 0.053_145_049_844_816_947_353;
        const W1: f64 = 0.116_786_275_726_379_366_03;
        const W2: f64 = 0.050_844_906_370_206_816_921;
        const W3: f64 = 0.082_851_075_618_373_575_194;

        let mut points = Vec::with_capacity(12);
        let mut weights = Vec::with_capacity(12);
        for (a, w) in [(A1, W1), (A2, W2)] {
            let o = 1.0 - 2.0 * a;
            for p in [[o, a, a], [a, o, a], [a, a, o]] {
                points.push(p);
                weights.push(w);
            }
        }
        let d = 1.0 - B - C;
        for p in [[B, C, d], [B, d, C], [C, B, d], [C, d, B], [d, B, C], [d, C, B]] {
            points.push(p);
            weights.push(W3);
        }
        Quadrature { points, weights, degree: 6 }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl Default for Quadrature {
    fn default() -> Self {
        Self::degree6()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn weights_sum_to_one() {
        let q = Quadrature::degree6();
        assert_eq!(q.len(), 12);
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(q.weights.iter().all(|&w| w > 0.0));
        for p in &q.points {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    // Barycentric monomials: int_T l0^a l1^b l2^c = 2|T| a! b! c! / (a+b+c+2)!
    #[test]
    fn exact_through_degree_six() {
        let q = Quadrature::degree6();
        for a in 0..=6u32 {
            for b in 0..=(6 - a) {
                for c in 0..=(6 - a - b) {
                    let approx: f64 = q
                        .points
                        .iter()
                        .zip(&q.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32))
                        .sum();
                    let exact = 2.0 * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2);
                    assert!((approx - exact).abs() < 1e-15, "monomial ({a},{b},{c}): {approx} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn not_exact_at_degree_eight() {
        let q = Quadrature::degree6();
        let approx: f64 = q.points.iter().zip(&q.weights).map(|(p, w)| w * p[0].powi(8)).sum();
        let exact = 2.0 * factorial(8) / factorial(10);
        assert!((approx - exact).abs() > 1e-8);
    }
}
