//! Finite differences and quadrature on uniform grids.

/// Finite-difference weights for the `deriv`-th derivative at `x0` from the
/// given stencil abscissae (Fornberg's recursion).
pub fn fornberg_weights(x0: f64, xs: &[f64], deriv: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; deriv + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(deriv);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[deriv]).collect()
}

/// `deriv`-th derivative of samples on a uniform grid of spacing `h`, using a
/// `width`-point stencil centred where possible and shifted at the ends.
pub fn uniform_derivative(values: &[f64], h: f64, deriv: usize, width: usize) -> Vec<f64> {
    let n = values.len();
    let width = width.min(n);
    assert!(width > deriv, "stencil too narrow for derivative order");
    let half = width / 2;
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; width];
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half).min(n - width);
            let offset = i - lo;
            let w = cache[offset].get_or_insert_with(|| {
                let xs: Vec<f64> = (0..width).map(|k| k as f64).collect();
                fornberg_weights(offset as f64, &xs, deriv)
            });
            let sum: f64 = w.iter().zip(&values[lo..lo + width]).map(|(a, b)| a * b).sum();
            sum / h.powi(deriv as i32)
        })
        .collect()
}

/// Cumulative integral `∫_{x_0}^{x_i} f` by the trapezoid rule with the
/// endpoint-derivative correction `h²/12 (f'_a − f'_b)`, fourth-order accurate.
pub fn cumulative_hermite(f: &[f64], df: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..f.len() {
        acc += 0.5 * h * (f[i - 1] + f[i]) + h * h / 12.0 * (df[i - 1] - df[i]);
        out.push(acc);
    }
    out
}

/// Ordinary least-squares line `y ≈ a + b x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Least-squares coefficients for `y ≈ Σ cⱼ basisⱼ` by modified Gram–Schmidt QR.
pub fn least_squares(basis: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = basis.len();
    let mut q: Vec<Vec<f64>> = basis.to_vec();
    let mut r = vec![vec![0.0; k]; k];
    for j in 0..k {
        for i in 0..j {
            let d: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            r[i][j] = d;
            let qi = q[i].clone();
            q[j].iter_mut().zip(&qi).for_each(|(a, b)| *a -= d * b);
        }
        let norm = q[j].iter().map(|a| a * a).sum::<f64>().sqrt();
        r[j][j] = norm;
        q[j].iter_mut().for_each(|a| *a /= norm);
    }
    let qty: Vec<f64> = q.iter().map(|col| col.iter().zip(y).map(|(a, b)| a * b).sum()).collect();
    let mut c = vec![0.0; k];
    for j in (0..k).rev() {
        let tail: f64 = (j + 1..k).map(|i| r[j][i] * c[i]).sum();
        c[j] = (qty[j] - tail) / r[j][j];
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_weights_match_textbook() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 1);
        assert!((w[0] + 0.5).abs() < 1e-15 && w[1].abs() < 1e-15 && (w[2] - 0.5).abs() < 1e-15);
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[0] - 1.0).abs() < 1e-15 && (w[1] + 2.0).abs() < 1e-15);
        let w = fornberg_weights(3.0, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 1);
        let expect = [-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0].map(|v| v / 60.0);
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn derivative_exact_on_polynomials() {
        let h = 0.1;
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * h).collect();
        let f: Vec<f64> = xs.iter().map(|x| x.powi(5) - 2.0 * x * x).collect();
        let d = uniform_derivative(&f, h, 1, 7);
        let d2 = uniform_derivative(&f, h, 2, 7);
        for (i, x) in xs.iter().enumerate() {
            assert!((d[i] - (5.0 * x.powi(4) - 4.0 * x)).abs() < 1e-9, "node {i}");
            assert!((d2[i] - (20.0 * x.powi(3) - 4.0)).abs() < 1e-7, "node {i}");
        }
    }

    #[test]
    fn hermite_quadrature_is_fourth_order() {
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let f: Vec<f64> = (0..=n).map(|i| (2.0 * i as f64 * h).exp()).collect();
            let df: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
            let q = cumulative_hermite(&f, &df, h);
            (q[n] - (2f64.exp() - 1.0) / 2.0).abs()
        };
        let ratio = err(10) / err(20);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn least_squares_recovers_exponential_model() {
        let s: Vec<f64> = (0..50).map(|i| 10.0 + 0.2 * i as f64).collect();
        let e1: Vec<f64> = s.iter().map(|x| (-0.3 * x).exp()).collect();
        let e2: Vec<f64> = e1.iter().map(|x| x * x).collect();
        let y: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| 0.2 - 0.7 * a + 0.1 * b).collect();
        let c = least_squares(&[vec![1.0; 50], e1, e2], &y);
        assert!((c[0] - 0.2).abs() < 1e-12 && (c[1] + 0.7).abs() < 1e-9 && (c[2] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = x.map(|v| 1.5 - 0.25 * v);
        let (a, b) = linear_fit(&x, &y);
        assert!((a - 1.5).abs() < 1e-14 && (b + 0.25).abs() < 1e-14);
    }
}
