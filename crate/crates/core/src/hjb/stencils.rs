use super::grid::Grid;

/// Finite-difference derivatives of one value slice at every node.
#[derive(Debug, Clone)]
pub struct Derivatives {
    dim: usize,
    m: usize,
    /// `node * dim + axis`
    pub grad: Vec<f64>,
    /// `node * dim * dim + i * dim + j`, symmetric.
    pub hess: Vec<f64>,
}

impl Derivatives {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grad_at(&self, node: usize) -> &[f64] {
        &self.grad[node * self.dim..(node + 1) * self.dim]
    }

    pub fn hess_at(&self, node: usize) -> &[f64] {
        let d2 = self.dim * self.dim;
        &self.hess[node * d2..(node + 1) * d2]
    }

    pub fn j_x(&self, node: usize) -> f64 {
        self.grad[node * self.dim]
    }

    pub fn j_xx(&self, node: usize) -> f64 {
        self.hess[node * self.dim * self.dim]
    }

    /// `J_{x y_k}` for `k = 1..m`.
    pub fn j_xy(&self, node: usize) -> &[f64] {
        let base = node * self.dim * self.dim;
        &self.hess[base + 1..base + 1 + self.m]
    }
}

/// First derivative along `axis`: central inside, one-sided second order
/// on the faces.
pub fn diff1(grid: &Grid, f: &[f64], axis: usize) -> Vec<f64> {
    let ax = grid.axes[axis];
    let s = grid.stride(axis);
    let h = ax.h();
    let n = ax.nodes;
    (0..f.len())
        .map(|node| {
            let i = grid.index_along(node, axis);
            if i == 0 {
                (-3.0 * f[node] + 4.0 * f[node + s] - f[node + 2 * s]) / (2.0 * h)
            } else if i + 1 == n {
                (3.0 * f[node] - 4.0 * f[node - s] + f[node - 2 * s]) / (2.0 * h)
            } else {
                (f[node + s] - f[node - s]) / (2.0 * h)
            }
        })
        .collect()
}

/// Second derivative along `axis`: central inside, one-sided second order
/// on the faces when four nodes are available, first order otherwise.
pub fn diff2(grid: &Grid, f: &[f64], axis: usize) -> Vec<f64> {
    let ax = grid.axes[axis];
    let s = grid.stride(axis);
    let h2 = ax.h() * ax.h();
    let n = ax.nodes;
    (0..f.len())
        .map(|node| {
            let i = grid.index_along(node, axis);
            if i == 0 {
                if n >= 4 {
                    (2.0 * f[node] - 5.0 * f[node + s] + 4.0 * f[node + 2 * s] - f[node + 3 * s]) / h2
                } else {
                    (f[node] - 2.0 * f[node + s] + f[node + 2 * s]) / h2
                }
            } else if i + 1 == n {
                if n >= 4 {
                    (2.0 * f[node] - 5.0 * f[node - s] + 4.0 * f[node - 2 * s] - f[node - 3 * s]) / h2
                } else {
                    (f[node] - 2.0 * f[node - s] + f[node - 2 * s]) / h2
                }
            } else {
                (f[node + s] - 2.0 * f[node] + f[node - s]) / h2
            }
        })
        .collect()
}

/// Gradient and Hessian of a value slice; mixed terms apply [`diff1`]
/// along each axis in turn.
pub fn derivative_stencils(slice: &[f64], grid: &Grid) -> Derivatives {
    let d = grid.dim();
    let nodes = grid.node_count();
    assert_eq!(slice.len(), nodes, "slice length must match the grid");
    let firsts: Vec<Vec<f64>> = (0..d).map(|a| diff1(grid, slice, a)).collect();
    let mut grad = vec![0.0; nodes * d];
    let mut hess = vec![0.0; nodes * d * d];
    for (a, g) in firsts.iter().enumerate() {
        for node in 0..nodes {
            grad[node * d + a] = g[node];
        }
    }
    for i in 0..d {
        let second = diff2(grid, slice, i);
        for node in 0..nodes {
            hess[node * d * d + i * d + i] = second[node];
        }
        for j in i + 1..d {
            let mixed = diff1(grid, &firsts[i], j);
            for node in 0..nodes {
                hess[node * d * d + i * d + j] = mixed[node];
                hess[node * d * d + j * d + i] = mixed[node];
            }
        }
    }
    Derivatives {
        dim: d,
        m: grid.m,
        grad,
        hess,
    }
}
