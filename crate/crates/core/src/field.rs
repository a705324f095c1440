use crate::Point;

/// A smooth scalar field with analytic first and second derivatives.
pub trait SmoothField: Sync {
    fn value(&self, x: &Point) -> f64;
    fn gradient(&self, x: &Point) -> Point;
    fn laplacian(&self, x: &Point) -> f64;
}

/// `Σ c_p x^p` with exponents over the first `dim` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub dim: usize,
    pub terms: Vec<([usize; 3], f64)>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<([usize; 3], f64)>) -> Self {
        Self { dim, terms }
    }

    /// `Σ_d x_d^k`.
    pub fn sum_of_powers(dim: usize, k: usize) -> Self {
        let terms = (0..dim)
            .map(|d| {
                let mut p = [0; 3];
                p[d] = k;
                (p, 1.0)
            })
            .collect();
        Self { dim, terms }
    }

    pub fn degree(&self) -> usize {
        self.terms
            .iter()
            .map(|(p, _)| p.iter().sum())
            .max()
            .unwrap_or(0)
    }

    /// `x_k^e` for `e ≤ degree`, laid out as `table[k * (degree + 1) + e]`.
    fn powers(&self, x: &Point) -> (Vec<f64>, usize) {
        let stride = self.degree() + 1;
        let mut t = vec![1.0; self.dim * stride];
        for k in 0..self.dim {
            for e in 1..stride {
                t[k * stride + e] = t[k * stride + e - 1] * x[k];
            }
        }
        (t, stride)
    }

    /// `∂^n/∂x_k^n` of every term, summed with coefficients.
    fn derivative_sum(&self, t: &[f64], stride: usize, k: usize, n: usize) -> f64 {
        self.terms
            .iter()
            .map(|(p, c)| {
                if p[k] < n {
                    return 0.0;
                }
                let falling: usize = (0..n).map(|i| p[k] - i).product();
                let mut v = c * falling as f64;
                for j in 0..self.dim {
                    let e = if j == k { p[j] - n } else { p[j] };
                    v *= t[j * stride + e];
                }
                v
            })
            .sum()
    }
}

impl SmoothField for Polynomial {
    fn value(&self, x: &Point) -> f64 {
        let (t, stride) = self.powers(x);
        self.derivative_sum(&t, stride, 0, 0)
    }

    fn gradient(&self, x: &Point) -> Point {
        let (t, stride) = self.powers(x);
        let mut g = [0.0; 3];
        for (k, gk) in g.iter_mut().enumerate().take(self.dim) {
            *gk = self.derivative_sum(&t, stride, k, 1);
        }
        g
    }

    fn laplacian(&self, x: &Point) -> f64 {
        let (t, stride) = self.powers(x);
        (0..self.dim)
            .map(|k| self.derivative_sum(&t, stride, k, 2))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_derivatives() {
        // x^3 y - 2 y^2
        let p = Polynomial::new(2, vec![([3, 1, 0], 1.0), ([0, 2, 0], -2.0)]);
        let x = [0.3, -0.7, 0.0];
        assert!((p.value(&x) - (0.027 * -0.7 - 2.0 * 0.49)).abs() < 1e-15);
        let g = p.gradient(&x);
        assert!((g[0] - 3.0 * 0.09 * -0.7).abs() < 1e-15);
        assert!((g[1] - (0.027 + 2.8)).abs() < 1e-15);
        assert!((p.laplacian(&x) - (6.0 * 0.3 * -0.7 - 4.0)).abs() < 1e-14);
        assert_eq!(p.degree(), 4);
    }

    #[test]
    fn polynomial_derivatives_3d() {
        // x y^2 z^3 + 5
        let p = Polynomial::new(3, vec![([1, 2, 3], 1.0), ([0, 0, 0], 5.0)]);
        let (x, y, z) = (0.5, 2.0, -1.5);
        let pt = [x, y, z];
        assert!((p.value(&pt) - (x * y * y * z * z * z + 5.0)).abs() < 1e-14);
        let g = p.gradient(&pt);
        let want = [
            y * y * z.powi(3),
            2.0 * x * y * z.powi(3),
            3.0 * x * y * y * z * z,
        ];
        for k in 0..3 {
            assert!((g[k] - want[k]).abs() < 1e-13, "{k}");
        }
        let lap = 2.0 * x * z.powi(3) + 6.0 * x * y * y * z;
        assert!((p.laplacian(&pt) - lap).abs() < 1e-13);
    }
}
