use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{simulate_paths, Control, Domain, MarketSpec, StatePoint};

/// Default cap on `1 + m + M`.
pub const MAX_STATE_DIM: usize = 3;

/// Uniform axis over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Input(format!("axis needs lo < hi, got [{lo}, {hi}]")));
        }
        if nodes < 3 {
            return Err(Error::Input(format!("axis needs >= 3 nodes, got {nodes}")));
        }
        Ok(Self { lo, hi, nodes })
    }

    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / (self.nodes - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.nodes {
            self.hi
        } else {
            self.lo + i as f64 * self.h()
        }
    }

    /// Cell index and weight of the upper node for linear interpolation,
    /// clamped to the axis.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let s = ((x - self.lo) / self.h()).clamp(0.0, (self.nodes - 1) as f64);
        let i = (s.floor() as usize).min(self.nodes - 2);
        (i, s - i as f64)
    }
}

/// Tensor grid over `(x, y_1..y_m, z_1..z_M)` and a uniform time mesh.
///
/// Nodes are stored row-major with the last axis varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub axes: Vec<Axis>,
    pub m: usize,
    pub big_m: usize,
    pub t_steps: usize,
    pub horizon: f64,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>, m: usize, big_m: usize, t_steps: usize, horizon: f64) -> Result<Self> {
        Self::with_max_dim(axes, m, big_m, t_steps, horizon, MAX_STATE_DIM)
    }

    pub fn with_max_dim(
        axes: Vec<Axis>,
        m: usize,
        big_m: usize,
        t_steps: usize,
        horizon: f64,
        max_dim: usize,
    ) -> Result<Self> {
        if axes.len() != 1 + m + big_m {
            return Err(crate::error::dim_err("grid axes", 1 + m + big_m, axes.len()));
        }
        if axes.len() > max_dim {
            return Err(Error::Unsupported(format!(
                "state dimension {} exceeds the limit {max_dim}",
                axes.len()
            )));
        }
        for a in &axes {
            Axis::new(a.lo, a.hi, a.nodes)?;
        }
        if t_steps == 0 {
            return Err(Error::Input("t_steps must be >= 1".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Input("horizon must be > 0".into()));
        }
        let mut strides = vec![1; axes.len()];
        for i in (0..axes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * axes[i + 1].nodes;
        }
        Ok(Self {
            axes,
            m,
            big_m,
            t_steps,
            horizon,
            strides,
        })
    }

    /// Same spatial grid with a different number of time steps.
    pub fn with_t_steps(&self, t_steps: usize) -> Result<Self> {
        Self::with_max_dim(self.axes.clone(), self.m, self.big_m, t_steps, self.horizon, usize::MAX)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    pub fn slices(&self) -> usize {
        self.t_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.t_steps as f64
    }

    pub fn time(&self, slice: usize) -> f64 {
        if slice == self.t_steps {
            self.horizon
        } else {
            slice as f64 * self.dt()
        }
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Index of `node` along `axis`.
    pub fn index_along(&self, node: usize, axis: usize) -> usize {
        (node / self.strides[axis]) % self.axes[axis].nodes
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        (0..self.dim()).map(|a| self.index_along(node, a)).collect()
    }

    pub fn node_of(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Coordinates `(x, y.., z..)` of a node.
    pub fn coords(&self, node: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|a| self.axes[a].coord(self.index_along(node, a)))
            .collect()
    }

    pub fn is_interior(&self, node: usize) -> bool {
        (0..self.dim()).all(|a| {
            let i = self.index_along(node, a);
            i > 0 && i + 1 < self.axes[a].nodes
        })
    }

    /// Largest mesh width over the spatial axes.
    pub fn h_max(&self) -> f64 {
        self.axes.iter().map(|a| a.h()).fold(0.0, f64::max)
    }

    /// Nodes whose coordinates lie in the central half of every axis; used
    /// for error reporting away from the far-field boundary.
    pub fn in_reporting_band(&self, node: usize) -> bool {
        (0..self.dim()).all(|a| {
            let ax = &self.axes[a];
            let c = self.axes[a].coord(self.index_along(node, a));
            let mid = 0.5 * (ax.lo + ax.hi);
            (c - mid).abs() <= 0.25 * (ax.hi - ax.lo) + 1e-12
        })
    }

    /// Short text form, e.g. `x[-2.08,2.08;41] t[1;400]`.
    pub fn descriptor(&self) -> String {
        let mut parts = Vec::new();
        for (a, ax) in self.axes.iter().enumerate() {
            let name = if a == 0 {
                "x".to_string()
            } else if a <= self.m {
                format!("y{}", a - 1)
            } else {
                format!("z{}", a - 1 - self.m)
            };
            parts.push(format!("{name}[{:.6},{:.6};{}]", ax.lo, ax.hi, ax.nodes));
        }
        parts.push(format!("t[{};{}]", self.horizon, self.t_steps));
        parts.join(" ")
    }
}

/// Node counts and optional overrides used to size a grid for a market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    #[serde(default = "default_factor_nodes")]
    pub ny: usize,
    #[serde(default = "default_factor_nodes")]
    pub nz: usize,
    /// `0` picks the smallest stable count.
    #[serde(default)]
    pub t_steps: usize,
    /// Half-width of the wealth axis around the initial coordinate; the
    /// default covers `[X0/8, 8 X0]`.
    #[serde(default)]
    pub x_half_width: Option<f64>,
}

fn default_factor_nodes() -> usize {
    21
}

impl GridConfig {
    pub fn new(nx: usize) -> Self {
        Self {
            nx,
            ny: default_factor_nodes(),
            nz: default_factor_nodes(),
            t_steps: 0,
            x_half_width: None,
        }
    }
}

struct ZeroControl;

impl Control for ZeroControl {
    fn control(&self, _: &StatePoint<'_>, out: &mut [f64]) {
        out.fill(0.0);
    }
}

const FACTOR_SIZING_PATHS: usize = 2000;
const FACTOR_SIZING_STEPS: usize = 50;
const FACTOR_SIZING_SEED: u64 = 0x5eed;

/// Builds the spatial axes for `spec`. Factor axes cover four standard
/// deviations around the simulated factor mean at every sampled time; the
/// wealth axis covers `[X0/8, 8 X0]` and at least four standard deviations
/// of the largest admissible wealth noise plus the largest drift.
pub fn auto_axes(spec: &MarketSpec, cfg: &GridConfig) -> Result<Vec<Axis>> {
    let x0 = spec.x0();
    let t = spec.horizon();
    let mut axes = Vec::with_capacity(1 + spec.m() + spec.big_m());
    // Largest admissible wealth-coordinate noise and drift over the horizon.
    let c0 = spec.eval_coefficients(spec.eta0(), spec.zeta0(), 0.0)?;
    let theta = (c0.v_inverse()? * &c0.a_tilde).norm();
    let k = spec.k();
    let drift = match spec.domain() {
        Domain::Reals => k.sqrt() * theta,
        Domain::Positive => k.sqrt() * theta + 0.5 * k,
    };
    let spread = 4.0 * (k * t).sqrt() + drift * t;
    let c = spec.coord0();
    let (lo, hi) = match (spec.domain(), cfg.x_half_width) {
        (_, Some(w)) if !(w > 0.0) => {
            return Err(Error::Input("x_half_width must be > 0".into()));
        }
        (_, Some(w)) => (c - w, c + w),
        (Domain::Positive, None) => {
            let w = 8f64.ln().max(spread);
            (c - w, c + w)
        }
        (Domain::Reals, None) => ((x0 / 8.0).min(x0 - spread), (8.0 * x0).max(x0 + spread)),
    };
    axes.push(Axis::new(lo, hi, cfg.nx)?);
    let factors = spec.m() + spec.big_m();
    if factors > 0 {
        let bundle = simulate_paths(spec, &ZeroControl, FACTOR_SIZING_STEPS, FACTOR_SIZING_PATHS, FACTOR_SIZING_SEED)?;
        let start: Vec<f64> = spec.eta0().iter().chain(spec.zeta0()).copied().collect();
        for f in 0..factors {
            let (mut lo, mut hi) = (start[f] - 0.5, start[f] + 0.5);
            for step in 0..=FACTOR_SIZING_STEPS {
                let vals: Vec<f64> = bundle
                    .paths
                    .iter()
                    .filter(|p| p.finite)
                    .map(|p| p.states[step * bundle.state_dim + 1 + f])
                    .collect();
                if vals.is_empty() {
                    return Err(Error::NonFinite("factor paths used for grid sizing".into()));
                }
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                let sd = var.sqrt();
                lo = lo.min(mean - 4.0 * sd);
                hi = hi.max(mean + 4.0 * sd);
            }
            let nodes = if f < spec.m() { cfg.ny } else { cfg.nz };
            axes.push(Axis::new(lo, hi, nodes)?);
        }
    }
    Ok(axes)
}
