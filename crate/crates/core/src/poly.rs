//! 1D polynomial machinery on the reference interval [-1, 1]: Legendre
//! recurrences, Gauss and Gauss-Lobatto nodes and weights, nodal (Lagrange)
//! bases and their integrated "edge" counterparts, and quadrature.

use crate::{Error, Result};

const NEWTON_TOL: f64 = 1e-15;
const NEWTON_MAX_ITER: usize = 100;

/// Evaluates the Legendre polynomial `P_n` and its derivative at `x` by the
/// three-term recurrence.
pub fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 1..n {
        let k = k as f64;
        let p_next = ((2.0 * k + 1.0) * x * p - k * p_prev) / (k + 1.0);
        p_prev = p;
        p = p_next;
    }
    // P'_n from the stable downward relation (1-x^2) P'_n = n (P_{n-1} - x P_n).
    let dp = if x.abs() < 1.0 {
        (n as f64) * (p_prev - x * p) / (1.0 - x * x)
    } else {
        // At the endpoints P'_n(±1) = ±1^{n-1} n(n+1)/2.
        let sign = if x > 0.0 { 1.0 } else { (-1.0f64).powi(n as i32 - 1) };
        sign * (n * (n + 1)) as f64 / 2.0
    };
    (p, dp)
}

fn legendre_second_deriv(n: usize, x: f64) -> f64 {
    let (p, dp) = legendre(n, x);
    (2.0 * x * dp - (n * (n + 1)) as f64 * p) / (1.0 - x * x)
}

/// Which family a [`NodeSet`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    GaussLobatto,
    Gauss,
}

/// Quadrature nodes and weights on [-1, 1], sorted ascending.
#[derive(Debug, Clone)]
pub struct NodeSet {
    pub kind: NodeKind,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Enforces exact symmetry about the origin; Newton leaves the two halves
/// equal only to roundoff.
fn symmetrize(xs: &mut [f64]) {
    let n = xs.len();
    for i in 0..n / 2 {
        let s = 0.5 * (xs[i] - xs[n - 1 - i]);
        xs[i] = s;
        xs[n - 1 - i] = -s;
    }
    if n % 2 == 1 {
        xs[n / 2] = 0.0;
    }
}

/// Gauss-Lobatto-Legendre nodes and weights of order `p` (`p + 1` nodes,
/// endpoints included). Exact for polynomials of degree `2p - 1`.
pub fn gll_nodes(p: usize) -> Result<NodeSet> {
    if p < 1 {
        return Err(Error::InvalidParameter(
            "Gauss-Lobatto order must be at least 1".into(),
        ));
    }
    let mut nodes = vec![0.0; p + 1];
    nodes[0] = -1.0;
    nodes[p] = 1.0;
    // Interior nodes are the roots of P'_p; Chebyshev-Lobatto points start Newton.
    for k in 1..p {
        let mut x = -(std::f64::consts::PI * k as f64 / p as f64).cos();
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let (_, dp) = legendre(p, x);
            let ddp = legendre_second_deriv(p, x);
            let dx = dp / ddp;
            x -= dx;
            if dx.abs() <= NEWTON_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NodeSolve(format!(
                "Gauss-Lobatto node {k} of order {p} did not converge"
            )));
        }
        nodes[k] = x;
    }
    symmetrize(&mut nodes);
    let scale = 2.0 / (p * (p + 1)) as f64;
    let weights = nodes
        .iter()
        .map(|&x| {
            let (pv, _) = legendre(p, x);
            scale / (pv * pv)
        })
        .collect();
    Ok(NodeSet {
        kind: NodeKind::GaussLobatto,
        nodes,
        weights,
    })
}

/// Gauss-Legendre nodes and weights with `q` points (endpoints excluded).
/// Exact for polynomials of degree `2q - 1`.
pub fn gauss_nodes(q: usize) -> Result<NodeSet> {
    if q < 1 {
        return Err(Error::InvalidParameter(
            "Gauss rule needs at least one point".into(),
        ));
    }
    let mut nodes = vec![0.0; q];
    for k in 0..q {
        // Chebyshev estimate of the k-th root of P_q, ascending.
        let mut x = -(std::f64::consts::PI * (k as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let (pv, dp) = legendre(q, x);
            let dx = pv / dp;
            x -= dx;
            if dx.abs() <= NEWTON_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NodeSolve(format!(
                "Gauss node {k} of {q} did not converge"
            )));
        }
        nodes[k] = x;
    }
    symmetrize(&mut nodes);
    let weights = nodes
        .iter()
        .map(|&x| {
            let (_, dp) = legendre(q, x);
            2.0 / ((1.0 - x * x) * dp * dp)
        })
        .collect();
    Ok(NodeSet {
        kind: NodeKind::Gauss,
        nodes,
        weights,
    })
}

/// Integrates `f` over [-1, 1] with the given rule.
pub fn quadrature(f: impl Fn(f64) -> f64, rule: &NodeSet) -> f64 {
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &w)| w * f(x))
        .sum()
}

/// Lagrange basis on a fixed node set, with the integrated edge basis and a
/// cached differentiation matrix.
///
/// `lagrange(i, x)` is the cardinal polynomial through the nodes;
/// `edge(i, x)` for `i = 1..=p` is minus the running sum of the cardinal
/// derivatives, normalized so its integral over interval `[x_{i-1}, x_i]` is
/// one and over every other inter-node interval zero.
#[derive(Debug, Clone)]
pub struct Basis1D {
    nodes: Vec<f64>,
    lam: Vec<f64>,
    deriv: Vec<Vec<f64>>,
}

impl Basis1D {
    pub fn new(set: &NodeSet) -> Self {
        Self::from_nodes(set.nodes.clone())
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Self {
        assert!(nodes.len() >= 2, "a nodal basis needs at least two nodes");
        let n = nodes.len();
        // Barycentric weights.
        let lam: Vec<f64> = (0..n)
            .map(|i| {
                let mut w = 1.0;
                for j in 0..n {
                    if j != i {
                        w *= nodes[i] - nodes[j];
                    }
                }
                1.0 / w
            })
            .collect();
        let mut deriv = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut diag = 0.0;
            for j in 0..n {
                if j != i {
                    let d = (lam[j] / lam[i]) / (nodes[i] - nodes[j]);
                    deriv[i][j] = d;
                    diag -= d;
                }
            }
            // Row sums vanish because the cardinal functions sum to one.
            deriv[i][i] = diag;
        }
        Self { nodes, lam, deriv }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of nodes minus one.
    pub fn order(&self) -> usize {
        self.nodes.len() - 1
    }

    /// `h'_j(x_i)`, row `i` = evaluation node, column `j` = basis index.
    pub fn deriv_matrix(&self) -> &[Vec<f64>] {
        &self.deriv
    }

    /// Evaluates the cardinal polynomial `h_i` at `x` (barycentric form;
    /// exact Kronecker delta when `x` hits a node).
    pub fn lagrange(&self, i: usize, x: f64) -> f64 {
        for (m, &xm) in self.nodes.iter().enumerate() {
            if x == xm {
                return if m == i { 1.0 } else { 0.0 };
            }
        }
        let den: f64 = self
            .nodes
            .iter()
            .zip(&self.lam)
            .map(|(&xm, &lm)| lm / (x - xm))
            .sum();
        (self.lam[i] / (x - self.nodes[i])) / den
    }

    /// All cardinal values at `x`.
    pub fn lagrange_all(&self, x: f64) -> Vec<f64> {
        for (m, &xm) in self.nodes.iter().enumerate() {
            if x == xm {
                let mut out = vec![0.0; self.nodes.len()];
                out[m] = 1.0;
                return out;
            }
        }
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.lam)
            .map(|(&xm, &lm)| lm / (x - xm))
            .collect();
        let den: f64 = terms.iter().sum();
        terms.into_iter().map(|t| t / den).collect()
    }

    /// `h'_i(x)` by the sum-of-products expansion.
    pub fn lagrange_deriv(&self, i: usize, x: f64) -> f64 {
        let xi = self.nodes[i];
        let mut acc = 0.0;
        for (m, &xm) in self.nodes.iter().enumerate() {
            if m == i {
                continue;
            }
            let mut term = 1.0 / (xi - xm);
            for (k, &xk) in self.nodes.iter().enumerate() {
                if k != i && k != m {
                    term *= (x - xk) / (xi - xk);
                }
            }
            acc += term;
        }
        acc
    }

    /// All cardinal derivatives at `x`.
    pub fn deriv_all(&self, x: f64) -> Vec<f64> {
        (0..self.nodes.len()).map(|i| self.lagrange_deriv(i, x)).collect()
    }

    /// Evaluates the edge function for interval `i` (1-based, `1..=order`).
    pub fn edge(&self, i: usize, x: f64) -> f64 {
        assert!(i >= 1 && i <= self.order(), "edge index out of range");
        -(0..i).map(|k| self.lagrange_deriv(k, x)).sum::<f64>()
    }

    /// All edge values at `x`, index 0 corresponding to interval 1.
    pub fn edge_all(&self, x: f64) -> Vec<f64> {
        let d = self.deriv_all(x);
        let mut out = Vec::with_capacity(self.order());
        let mut run = 0.0;
        for k in 0..self.order() {
            run -= d[k];
            out.push(run);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Deterministic pseudo-random stream for point sampling.
    struct XorShift(u64);

    impl XorShift {
        fn next_f64(&mut self) -> f64 {
            let mut x = self.0;
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            self.0 = x;
            // Uniform in [-1, 1).
            (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        }
    }

    #[test]
    fn legendre_low_orders_match_closed_forms() {
        let xs = [-0.9, -0.3, 0.0, 0.42, 1.0];
        for &x in &xs {
            assert_abs_diff_eq!(legendre(0, x).0, 1.0);
            assert_abs_diff_eq!(legendre(1, x).0, x);
            assert_abs_diff_eq!(legendre(2, x).0, 1.5 * x * x - 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(
                legendre(3, x).0,
                2.5 * x * x * x - 1.5 * x,
                epsilon = 1e-15
            );
            assert_abs_diff_eq!(legendre(3, x).1, 7.5 * x * x - 1.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn gll_rejects_order_zero() {
        assert!(gll_nodes(0).is_err());
    }

    #[test]
    fn gauss_rejects_zero_points() {
        assert!(gauss_nodes(0).is_err());
    }

    #[test]
    fn gll_order_one() {
        let s = gll_nodes(1).unwrap();
        assert_eq!(s.nodes, vec![-1.0, 1.0]);
        assert_eq!(s.weights, vec![1.0, 1.0]);
    }

    #[test]
    fn gll_order_two() {
        let s = gll_nodes(2).unwrap();
        assert_abs_diff_eq!(s.nodes[0], -1.0);
        assert_abs_diff_eq!(s.nodes[1], 0.0);
        assert_abs_diff_eq!(s.nodes[2], 1.0);
        assert_abs_diff_eq!(s.weights[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.weights[1], 4.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.weights[2], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn gll_order_three() {
        let s = gll_nodes(3).unwrap();
        let r = 1.0 / 5.0f64.sqrt();
        assert_abs_diff_eq!(s.nodes[0], -1.0);
        assert_abs_diff_eq!(s.nodes[1], -r, epsilon = 1e-15);
        assert_abs_diff_eq!(s.nodes[2], r, epsilon = 1e-15);
        assert_abs_diff_eq!(s.nodes[3], 1.0);
        assert_abs_diff_eq!(s.weights[0], 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.weights[1], 5.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.weights[2], 5.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.weights[3], 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn gauss_one_two_three_points() {
        let s1 = gauss_nodes(1).unwrap();
        assert_abs_diff_eq!(s1.nodes[0], 0.0);
        assert_abs_diff_eq!(s1.weights[0], 2.0);

        let s2 = gauss_nodes(2).unwrap();
        let r = 1.0 / 3.0f64.sqrt();
        assert_abs_diff_eq!(s2.nodes[0], -r, epsilon = 1e-15);
        assert_abs_diff_eq!(s2.nodes[1], r, epsilon = 1e-15);
        assert_abs_diff_eq!(s2.weights[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s2.weights[1], 1.0, epsilon = 1e-15);

        let s3 = gauss_nodes(3).unwrap();
        let r3 = (3.0f64 / 5.0).sqrt();
        assert_abs_diff_eq!(s3.nodes[0], -r3, epsilon = 1e-15);
        assert_abs_diff_eq!(s3.nodes[1], 0.0);
        assert_abs_diff_eq!(s3.nodes[2], r3, epsilon = 1e-15);
        assert_abs_diff_eq!(s3.weights[0], 5.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s3.weights[1], 8.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s3.weights[2], 5.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn node_sets_are_sorted_symmetric_and_normalized() {
        for p in 1..=32 {
            for set in [gll_nodes(p).unwrap(), gauss_nodes(p).unwrap()] {
                let n = set.len();
                for i in 1..n {
                    assert!(set.nodes[i] > set.nodes[i - 1]);
                }
                for i in 0..n {
                    assert!(set.nodes[i] >= -1.0 && set.nodes[i] <= 1.0);
                    assert_abs_diff_eq!(set.nodes[i], -set.nodes[n - 1 - i], epsilon = 1e-13);
                    assert!(set.weights[i] > 0.0);
                }
                let total: f64 = set.weights.iter().sum();
                assert_abs_diff_eq!(total, 2.0, epsilon = 1e-13);
                match set.kind {
                    NodeKind::GaussLobatto => {
                        assert_eq!(set.nodes[0], -1.0);
                        assert_eq!(set.nodes[n - 1], 1.0);
                    }
                    NodeKind::Gauss => {
                        assert!(set.nodes[0] > -1.0 && set.nodes[n - 1] < 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn quadrature_frozen_values() {
        let g2 = gauss_nodes(2).unwrap();
        assert_abs_diff_eq!(quadrature(|_| 1.0, &g2), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(quadrature(|x| x * x, &g2), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(quadrature(|x| x * x * x, &g2), 0.0, epsilon = 1e-15);
        let gl3 = gll_nodes(3).unwrap();
        assert_abs_diff_eq!(quadrature(|x| x * x, &gl3), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn gauss_rule_exact_for_degree_2q_minus_1() {
        for q in 1..=8 {
            let rule = gauss_nodes(q).unwrap();
            for k in 0..2 * q {
                let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
                assert_abs_diff_eq!(
                    quadrature(|x| x.powi(k as i32), &rule),
                    exact,
                    epsilon = 1e-13
                );
            }
        }
    }

    #[test]
    fn lagrange_is_kronecker_on_nodes() {
        for p in 1..=16 {
            let basis = Basis1D::new(&gll_nodes(p).unwrap());
            for i in 0..=p {
                for (j, &xj) in basis.nodes().iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(basis.lagrange(i, xj), expect, epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn lagrange_middle_value_order_two() {
        let basis = Basis1D::new(&gll_nodes(2).unwrap());
        assert_abs_diff_eq!(basis.lagrange(1, 0.5), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn partition_of_unity_random_points() {
        for p in [1, 2, 3, 5, 8, 12, 16] {
            let basis = Basis1D::new(&gll_nodes(p).unwrap());
            let mut rng = XorShift(0x9e3779b97f4a7c15 ^ p as u64);
            for _ in 0..100 {
                let x = rng.next_f64();
                let sum: f64 = basis.lagrange_all(x).iter().sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn edge_order_one_is_constant_half() {
        let basis = Basis1D::new(&gll_nodes(1).unwrap());
        for x in [-1.0, -0.4, 0.0, 0.7, 1.0] {
            assert_abs_diff_eq!(basis.edge(1, x), 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn edge_integrals_are_kronecker_over_intervals() {
        // The integral of edge function i over inter-node interval k is delta_ik.
        for p in [1, 2, 3, 6, 10, 16] {
            let set = gll_nodes(p).unwrap();
            let basis = Basis1D::new(&set);
            let rule = gauss_nodes(p + 2).unwrap();
            for i in 1..=p {
                let mut total = 0.0;
                for k in 1..=p {
                    let (a, b) = (set.nodes[k - 1], set.nodes[k]);
                    let half = 0.5 * (b - a);
                    let mid = 0.5 * (a + b);
                    let integral =
                        half * quadrature(|t| basis.edge(i, mid + half * t), &rule);
                    let expect = if i == k { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(integral, expect, epsilon = 1e-11);
                    total += integral;
                }
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn derivative_matrix_is_consistent_with_monomials() {
        for p in 1..=12 {
            let set = gll_nodes(p).unwrap();
            let basis = Basis1D::new(&set);
            let d = basis.deriv_matrix();
            for k in 0..=p {
                for (i, &xi) in set.nodes.iter().enumerate() {
                    let mut val = 0.0;
                    for (j, &xj) in set.nodes.iter().enumerate() {
                        val += d[i][j] * xj.powi(k as i32);
                    }
                    let expect = if k == 0 { 0.0 } else { k as f64 * xi.powi(k as i32 - 1) };
                    assert_abs_diff_eq!(val, expect, epsilon = 1e-11);
                }
            }
        }
    }

    #[test]
    fn edge_matches_negative_running_derivative_sum() {
        let basis = Basis1D::new(&gll_nodes(5).unwrap());
        let mut rng = XorShift(42);
        for _ in 0..50 {
            let x = rng.next_f64();
            let edges = basis.edge_all(x);
            for i in 1..=5 {
                assert_abs_diff_eq!(edges[i - 1], basis.edge(i, x), epsilon = 1e-13);
            }
        }
    }

    proptest! {
        #[test]
        fn lagrange_interpolates_polynomials_exactly(p in 1usize..10, seed in 0u64..1000) {
            // Interpolating a polynomial of degree <= p at the nodes and
            // re-evaluating anywhere reproduces it.
            let set = gll_nodes(p).unwrap();
            let basis = Basis1D::new(&set);
            let mut rng = XorShift(seed.wrapping_mul(0x2545f4914f6cdd1d).wrapping_add(1));
            let coeffs: Vec<f64> = (0..=p).map(|_| rng.next_f64()).collect();
            let poly = |x: f64| coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c);
            let x = rng.next_f64();
            let mut interp = 0.0;
            for (j, &xj) in set.nodes.iter().enumerate() {
                interp += poly(xj) * basis.lagrange(j, x);
            }
            prop_assert!((interp - poly(x)).abs() < 1e-10);
        }

        #[test]
        fn edge_basis_spans_derivatives(p in 1usize..8, seed in 0u64..1000) {
            // d/dx of a nodal interpolant expands exactly in the edge basis
            // with coefficients equal to nodal differences.
            let set = gll_nodes(p).unwrap();
            let basis = Basis1D::new(&set);
            let mut rng = XorShift(seed ^ 0xdeadbeef);
            let vals: Vec<f64> = (0..=p).map(|_| rng.next_f64()).collect();
            let x = rng.next_f64();
            let direct: f64 = (0..=p).map(|j| vals[j] * basis.lagrange_deriv(j, x)).sum();
            let edges = basis.edge_all(x);
            let viaedge: f64 = (1..=p).map(|i| (vals[i] - vals[i - 1]) * edges[i - 1]).sum();
            prop_assert!((direct - viaedge).abs() < 1e-10);
        }
    }
}
