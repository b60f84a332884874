//! TOML scenario files and the shipped presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hjb::{GridConfig, Utility};
use crate::market::{Array, Coefficient, Domain, MarketConfig, MarketSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_steps() -> usize {
    250
}

fn default_paths() -> usize {
    100_000
}

fn default_seed() -> u64 {
    42
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            paths: default_paths(),
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Every `slice_stride`-th time slice goes into CSV dumps.
    #[serde(default = "default_stride")]
    pub slice_stride: usize,
}

fn default_directory() -> String {
    "out".into()
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv]
}

fn default_stride() -> usize {
    10
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
            slice_stride: default_stride(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub market: MarketConfig,
    pub utility: Utility,
    #[serde(default = "default_grid")]
    pub grid: GridConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_grid() -> GridConfig {
    GridConfig::new(41)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line that opens `[market.<key>]` or assigns `key = ...`.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    let header = format!("[market.{key}]");
    text.lines().position(|l| {
        let l = l.trim();
        l == header || l.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Best-effort source line for a semantic error about `what`.
fn anchor(text: &str, what: &str) -> usize {
    let key = what.split([':', ' ']).next().unwrap_or(what);
    line_of_key(text, key)
        .or_else(|| text.lines().position(|l| l.trim() == "[market]").map(|i| i + 1))
        .unwrap_or(1)
}

impl ScenarioFile {
    /// Parses and builds the market; every failure carries a line number.
    pub fn parse(text: &str) -> Result<(Self, MarketSpec)> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Scenario {
            line: e.span().map_or(1, |s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        let spec = file.spec_anchored(text)?;
        if let Err(e) = file.utility.validate(spec.domain()) {
            return Err(Error::Scenario {
                line: text.lines().position(|l| l.trim() == "[utility]").map_or(1, |i| i + 1),
                message: e.to_string(),
            });
        }
        Ok((file, spec))
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, MarketSpec)> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn spec_anchored(&self, text: &str) -> Result<MarketSpec> {
        MarketSpec::new(self.market.clone()).map_err(|e| {
            let what = match &e {
                Error::Dimension { what, .. } => what.clone(),
                Error::NonFinite(what) => what.clone(),
                Error::Input(msg) => msg.clone(),
                other => other.to_string(),
            };
            Error::Scenario {
                line: anchor(text, &what),
                message: e.to_string(),
            }
        })
    }

    pub fn spec(&self) -> Result<MarketSpec> {
        MarketSpec::new(self.market.clone())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Source line of the block responsible for a validation violation, if
/// it can be found.
pub fn violation_line(text: &str, block: &str) -> Option<usize> {
    line_of_key(text, block)
}

pub const PRESETS: &[&str] = &[
    "merton_log",
    "merton_power",
    "capped_quadratic",
    "constant_utility",
    "index_factor",
    "multi_index",
];

fn merton_market() -> MarketConfig {
    MarketConfig {
        stocks: 2,
        eta_dim: 0,
        zeta_dim: 0,
        aux_dim: 0,
        constraint_level: 1.0,
        horizon: 1.0,
        initial_wealth: 1.0,
        eta0: vec![],
        zeta0: vec![],
        domain: Domain::Positive,
        appreciation: Coefficient::vector(&[0.08, 0.0975]),
        volatility: Coefficient::matrix(&[&[0.2, 0.0], &[0.05, 0.25]]),
        short_rate: Coefficient::scalar(0.02),
        eta_drift: None,
        eta_stock_loading: None,
        eta_aux_loading: None,
        zeta_drift: None,
        zeta_aux_loading: None,
    }
}

/// Market driven by `m` mean-reverting index factors that shift the
/// appreciation rates of `n` stocks.
fn index_market(m: usize, n: usize) -> MarketConfig {
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 0.18 + 0.02 * i as f64;
        if i > 0 {
            row[i - 1] = 0.04;
        }
    }
    let base: Vec<f64> = (0..n).map(|i| 0.07 + 0.005 * i as f64).collect();
    let dy: Vec<Array> = (0..m)
        .map(|k| Array::Vector((0..n).map(|i| if (i + k) % 2 == 0 { 0.03 } else { 0.01 }).collect()))
        .collect();
    let loading: Vec<Vec<f64>> = (0..m)
        .map(|k| (0..n).map(|i| if i == k { 0.12 } else if i == k + 1 { 0.05 } else { 0.0 }).collect())
        .collect();
    let aux: Vec<Vec<f64>> = (0..m).map(|k| vec![if k == 0 { 0.15 } else { 0.1 }]).collect();
    MarketConfig {
        stocks: n,
        eta_dim: m,
        zeta_dim: 0,
        aux_dim: 1,
        constraint_level: 2.0,
        horizon: 1.0,
        initial_wealth: 1.0,
        eta0: vec![0.0; m],
        zeta0: vec![],
        domain: Domain::Positive,
        appreciation: Coefficient::Affine {
            base: Array::Vector(base),
            dy,
            dz: vec![],
        },
        volatility: Coefficient::Constant { value: Array::Matrix(v) },
        short_rate: Coefficient::scalar(0.02),
        eta_drift: Some(Coefficient::MeanReverting {
            speed: vec![2.0; m],
            level: vec![0.0; m],
        }),
        eta_stock_loading: Some(Coefficient::Constant {
            value: Array::Matrix(loading),
        }),
        eta_aux_loading: Some(Coefficient::Constant { value: Array::Matrix(aux) }),
        zeta_drift: None,
        zeta_aux_loading: None,
    }
}

/// A shipped scenario by name.
pub fn preset(name: &str) -> Result<ScenarioFile> {
    let base = |market, utility, grid| ScenarioFile {
        name: Some(name.to_string()),
        market,
        utility,
        grid,
        mc: McConfig::default(),
        output: OutputConfig::default(),
    };
    let s = match name {
        "merton_log" => base(merton_market(), Utility::Log, GridConfig::new(41)),
        "merton_power" => base(merton_market(), Utility::Power { delta: 0.5 }, GridConfig::new(41)),
        "capped_quadratic" => {
            let mut m = merton_market();
            m.domain = Domain::Reals;
            m.constraint_level = 0.5;
            base(m, Utility::CappedQuadratic { lambda: 0.1, cap: 10.0 }, GridConfig::new(41))
        }
        "constant_utility" => base(merton_market(), Utility::Constant { value: 0.0 }, GridConfig::new(21)),
        "index_factor" => {
            let mut g = GridConfig::new(41);
            g.ny = 21;
            base(index_market(1, 4), Utility::Power { delta: 0.5 }, g)
        }
        "multi_index" => {
            let mut g = GridConfig::new(21);
            g.ny = 11;
            let mut s = base(index_market(2, 5), Utility::Power { delta: 0.5 }, g);
            s.mc.paths = 20_000;
            s
        }
        other => {
            return Err(Error::Input(format!(
                "unknown preset '{other}'; available: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(s)
}
