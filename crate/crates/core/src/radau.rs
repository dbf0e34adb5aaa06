//! Radau IIA collocation coefficients on the unit interval.

use nalgebra::DMatrix;

use crate::roots::brent;

#[derive(Debug, Clone)]
pub struct RadauTableau {
    /// Collocation points `c_1 < ... < c_s = 1`.
    pub nodes: Vec<f64>,
    /// `D[i][k] = l_k'(c_i)` for the Lagrange basis on `[0, c_1, ..., c_s]`;
    /// row `i` corresponds to `c_{i+1}`, column 0 to the left end.
    pub derivative: DMatrix<f64>,
}

/// Shifted Legendre polynomial `P_k(2x - 1)`.
fn shifted_legendre(k: usize, x: f64) -> f64 {
    let y = 2.0 * x - 1.0;
    let (mut p0, mut p1) = (1.0, y);
    if k == 0 {
        return p0;
    }
    for j in 1..k {
        let jf = j as f64;
        let p2 = ((2.0 * jf + 1.0) * y * p1 - jf * p0) / (jf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Radau IIA points: zeros of `P_s(2x-1) - P_{s-1}(2x-1)` in `(0, 1]`.
pub fn radau_nodes(stages: usize) -> Vec<f64> {
    assert!(stages >= 1);
    let g = |x: f64| shifted_legendre(stages, x) - shifted_legendre(stages - 1, x);
    let grid = 2000;
    let mut nodes = Vec::with_capacity(stages);
    let mut prev_x = 0.0;
    let mut prev = g(0.0);
    for k in 1..grid {
        let x = k as f64 / grid as f64;
        let v = g(x);
        if v == 0.0 {
            nodes.push(x);
        } else if v.signum() != prev.signum() && prev != 0.0 {
            let r = brent(|t| Ok(g(t)), prev_x, x, 1e-16, 200).expect("bracketed Radau node");
            nodes.push(r);
        }
        prev_x = x;
        prev = v;
    }
    nodes.push(1.0);
    assert_eq!(nodes.len(), stages, "Radau node search");
    nodes
}

/// Lagrange basis weights on `points`, evaluated at `x`.
pub fn lagrange_weights(points: &[f64], x: f64) -> Vec<f64> {
    let m = points.len();
    let mut w = vec![1.0; m];
    for k in 0..m {
        for j in 0..m {
            if j != k {
                w[k] *= (x - points[j]) / (points[k] - points[j]);
            }
        }
    }
    w
}

/// Derivatives of the Lagrange basis on `points`, evaluated at `x`.
pub fn lagrange_derivative_weights(points: &[f64], x: f64) -> Vec<f64> {
    let m = points.len();
    let mut w = vec![0.0; m];
    for k in 0..m {
        let denom: f64 = (0..m).filter(|&j| j != k).map(|j| points[k] - points[j]).product();
        let mut sum = 0.0;
        for l in 0..m {
            if l == k {
                continue;
            }
            let prod: f64 = (0..m)
                .filter(|&j| j != k && j != l)
                .map(|j| x - points[j])
                .product();
            sum += prod;
        }
        w[k] = sum / denom;
    }
    w
}

impl RadauTableau {
    pub fn new(stages: usize) -> Self {
        let nodes = radau_nodes(stages);
        let mut points = vec![0.0];
        points.extend_from_slice(&nodes);
        let mut derivative = DMatrix::zeros(stages, stages + 1);
        for (i, &c) in nodes.iter().enumerate() {
            for (k, w) in lagrange_derivative_weights(&points, c).into_iter().enumerate() {
                derivative[(i, k)] = w;
            }
        }
        RadauTableau { nodes, derivative }
    }

    pub fn stages(&self) -> usize {
        self.nodes.len()
    }

    /// `[0, c_1, ..., c_s]`.
    pub fn points(&self) -> Vec<f64> {
        let mut p = vec![0.0];
        p.extend_from_slice(&self.nodes);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_stage_nodes_match_closed_form() {
        let s6 = 6f64.sqrt();
        let c = radau_nodes(3);
        assert!((c[0] - (4.0 - s6) / 10.0).abs() < 1e-14);
        assert!((c[1] - (4.0 + s6) / 10.0).abs() < 1e-14);
        assert_eq!(c[2], 1.0);
        let c2 = radau_nodes(2);
        assert!((c2[0] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn derivative_matrix_is_exact_on_polynomials() {
        for s in [2, 3, 5] {
            let tab = RadauTableau::new(s);
            let pts = tab.points();
            for deg in 0..=s {
                let vals: Vec<f64> = pts.iter().map(|x| x.powi(deg as i32)).collect();
                for (i, &c) in tab.nodes.iter().enumerate() {
                    let d: f64 = (0..=s).map(|k| tab.derivative[(i, k)] * vals[k]).sum();
                    let exact = if deg == 0 { 0.0 } else { deg as f64 * c.powi(deg as i32 - 1) };
                    assert!((d - exact).abs() < 1e-10, "s={s} deg={deg}");
                }
            }
        }
    }

    #[test]
    fn stage_block_inverts_butcher_matrix() {
        // A = D[:, 1..]^{-1}; its last row holds the quadrature weights.
        let tab = RadauTableau::new(3);
        let block = tab.derivative.columns(1, 3).into_owned();
        let a = block.try_inverse().unwrap();
        let s6 = 6f64.sqrt();
        assert!((a[(2, 0)] - (16.0 - s6) / 36.0).abs() < 1e-13);
        assert!((a[(2, 1)] - (16.0 + s6) / 36.0).abs() < 1e-13);
        assert!((a[(2, 2)] - 1.0 / 9.0).abs() < 1e-13);
        assert!((a[(0, 0)] - (88.0 - 7.0 * s6) / 360.0).abs() < 1e-13);
    }

    #[test]
    fn lagrange_weights_partition_unity() {
        let pts = RadauTableau::new(5).points();
        let w = lagrange_weights(&pts, 0.37);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        let w = lagrange_weights(&pts, pts[3]);
        assert!((w[3] - 1.0).abs() < 1e-15 && w[0].abs() < 1e-15);
    }
}
