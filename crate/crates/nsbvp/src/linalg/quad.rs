use nalgebra::{DMatrix, SymmetricEigen};

/// Gauss-Legendre nodes and weights on `[-1, 1]` via Golub-Welsch.
pub fn gauss_legendre(p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(p, p);
    for k in 1..p {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..p)
        .map(|k| (eig.eigenvalues[k], 2.0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// Composite Gauss-Legendre rule on `[0, h]`: one panel `[0, y_min]`, then
/// geometrically growing panels up to `h`.
pub fn graded_panels(y_min: f64, h: f64, panels: usize, p: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(p);
    let mut edges = vec![0.0, y_min];
    let ratio = (h / y_min).powf(1.0 / panels.max(1) as f64);
    for k in 1..=panels {
        edges.push(y_min * ratio.powi(k as i32));
    }
    *edges.last_mut().unwrap() = h;
    let mut nodes = Vec::with_capacity(edges.len() * p);
    let mut weights = Vec::with_capacity(edges.len() * p);
    for e in edges.windows(2) {
        let (a, b) = (e[0], e[1]);
        let half = 0.5 * (b - a);
        for k in 0..p {
            nodes.push(a + half * (x[k] + 1.0));
            weights.push(half * w[k]);
        }
    }
    (nodes, weights)
}

/// Log-spaced grid on `[t_min, t_max]` with trapezoid weights for `dt / t`.
pub fn log_grid(t_min: f64, t_max: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (la, lb) = (t_min.ln(), t_max.ln());
    let h = (lb - la) / (n - 1) as f64;
    let t: Vec<f64> = (0..n).map(|k| (la + h * k as f64).exp()).collect();
    let w: Vec<f64> = (0..n).map(|k| if k == 0 || k == n - 1 { 0.5 * h } else { h }).collect();
    (t, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let i14: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((i14 - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn graded_rule_on_lorentzian() {
        let (y, w) = graded_panels(1e-3, 1e3, 40, 16);
        let a = 0.01;
        let val: f64 = y.iter().zip(&w).map(|(y, w)| w * a / (a * a + y * y)).sum();
        let exact = (1e3 / a).atan();
        assert!((val - exact).abs() < 1e-12);
    }

    #[test]
    fn log_grid_mellin() {
        let (t, w) = log_grid(1e-6, 40.0, 600);
        let val: f64 = t.iter().zip(&w).map(|(t, w)| w * t * (-t).exp()).sum();
        assert!((val - (1.0 - 1e-6)).abs() < 1e-8);
    }
}
