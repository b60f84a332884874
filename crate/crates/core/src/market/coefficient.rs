//! Closed catalogue of coefficient functions of the factor state `(y, z)`.
//!
//! Every family is evaluated entrywise over a row-major `rows x cols`
//! layout. Vectors are `cols = 1`, the short rate is `1 x 1`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Numeric payload as written in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Array {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl Array {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        if cols == 1 {
            Array::Vector(vec![0.0; rows])
        } else {
            Array::Matrix(vec![vec![0.0; cols]; rows])
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        Array::Matrix(rows.iter().map(|r| r.to_vec()).collect())
    }

    /// Row-major flattening, checked against the expected shape.
    pub fn flatten(&self, rows: usize, cols: usize, what: &str) -> Result<Vec<f64>> {
        let flat: Vec<f64> = match self {
            Array::Scalar(v) => vec![*v],
            Array::Vector(v) => v.clone(),
            Array::Matrix(m) => {
                if !m.is_empty() {
                    let width = m[0].len();
                    if m.iter().any(|r| r.len() != width) {
                        return Err(Error::Input(format!("{what}: ragged matrix rows")));
                    }
                    if rows * cols > 0 && (m.len() != rows || width != cols) {
                        return Err(dim_err(
                            what,
                            format!("{rows}x{cols}"),
                            format!("{}x{}", m.len(), width),
                        ));
                    }
                }
                m.iter().flatten().copied().collect()
            }
        };
        if flat.len() != rows * cols {
            return Err(dim_err(what, format!("{} entries ({rows}x{cols})", rows * cols), flat.len()));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(what.to_string()));
        }
        Ok(flat)
    }
}

/// One coefficient function `F(y, z, t)` from the supported catalogue.
///
/// The catalogue is time-homogeneous: none of the families depend on `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coefficient {
    /// `F = value`.
    Constant { value: Array },
    /// `F = base + sum_k y_k dy[k] + sum_j z_j dz[j]`, each slope shaped like `F`.
    Affine {
        base: Array,
        #[serde(default)]
        dy: Vec<Array>,
        #[serde(default)]
        dz: Vec<Array>,
    },
    /// `F = base + amplitude * tanh(gain_y . y + gain_z . z)`.
    BoundedSmooth {
        base: Array,
        amplitude: Array,
        #[serde(default)]
        gain_y: Vec<f64>,
        #[serde(default)]
        gain_z: Vec<f64>,
    },
    /// Factor drift `speed o (level - state)`; only valid for the factor drifts.
    MeanReverting { speed: Vec<f64>, level: Vec<f64> },
}

impl Coefficient {
    pub fn constant(value: Array) -> Self {
        Coefficient::Constant { value }
    }

    pub fn scalar(value: f64) -> Self {
        Coefficient::Constant {
            value: Array::Scalar(value),
        }
    }

    pub fn vector(value: &[f64]) -> Self {
        Coefficient::Constant {
            value: Array::Vector(value.to_vec()),
        }
    }

    pub fn matrix(rows: &[&[f64]]) -> Self {
        Coefficient::Constant {
            value: Array::from_rows(rows),
        }
    }
}

#[derive(Debug, Clone)]
enum Form {
    Constant(Vec<f64>),
    Affine {
        base: Vec<f64>,
        dy: Vec<Vec<f64>>,
        dz: Vec<Vec<f64>>,
    },
    Smooth {
        base: Vec<f64>,
        amplitude: Vec<f64>,
        gain_y: Vec<f64>,
        gain_z: Vec<f64>,
    },
    MeanReverting {
        speed: Vec<f64>,
        level: Vec<f64>,
    },
}

/// A shape-checked coefficient ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct CompiledCoefficient {
    pub rows: usize,
    pub cols: usize,
    form: Form,
}

impl CompiledCoefficient {
    pub fn compile(
        source: &Coefficient,
        rows: usize,
        cols: usize,
        m: usize,
        big_m: usize,
        allow_mean_reverting: bool,
        what: &str,
    ) -> Result<Self> {
        let form = match source {
            Coefficient::Constant { value } => Form::Constant(value.flatten(rows, cols, what)?),
            Coefficient::Affine { base, dy, dz } => {
                if dy.len() > m {
                    return Err(dim_err(format!("{what}.dy"), format!("at most {m} slopes"), dy.len()));
                }
                if dz.len() > big_m {
                    return Err(dim_err(format!("{what}.dz"), format!("at most {big_m} slopes"), dz.len()));
                }
                let mut dy_flat = dy
                    .iter()
                    .map(|d| d.flatten(rows, cols, &format!("{what}.dy")))
                    .collect::<Result<Vec<_>>>()?;
                dy_flat.resize(m, vec![0.0; rows * cols]);
                let mut dz_flat = dz
                    .iter()
                    .map(|d| d.flatten(rows, cols, &format!("{what}.dz")))
                    .collect::<Result<Vec<_>>>()?;
                dz_flat.resize(big_m, vec![0.0; rows * cols]);
                Form::Affine {
                    base: base.flatten(rows, cols, &format!("{what}.base"))?,
                    dy: dy_flat,
                    dz: dz_flat,
                }
            }
            Coefficient::BoundedSmooth {
                base,
                amplitude,
                gain_y,
                gain_z,
            } => {
                let mut gy = gain_y.clone();
                let mut gz = gain_z.clone();
                if gy.len() > m || gz.len() > big_m {
                    return Err(dim_err(
                        format!("{what}.gain"),
                        format!("gain_y <= {m}, gain_z <= {big_m} entries"),
                        format!("{}, {}", gy.len(), gz.len()),
                    ));
                }
                gy.resize(m, 0.0);
                gz.resize(big_m, 0.0);
                Form::Smooth {
                    base: base.flatten(rows, cols, &format!("{what}.base"))?,
                    amplitude: amplitude.flatten(rows, cols, &format!("{what}.amplitude"))?,
                    gain_y: gy,
                    gain_z: gz,
                }
            }
            Coefficient::MeanReverting { speed, level } => {
                if !allow_mean_reverting {
                    return Err(Error::Input(format!(
                        "{what}: mean_reverting is only valid for factor drifts"
                    )));
                }
                if cols != 1 || speed.len() != rows || level.len() != rows {
                    return Err(dim_err(
                        what,
                        format!("speed and level of length {rows}"),
                        format!("{} and {}", speed.len(), level.len()),
                    ));
                }
                Form::MeanReverting {
                    speed: speed.clone(),
                    level: level.clone(),
                }
            }
        };
        Ok(Self { rows, cols, form })
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            form: Form::Constant(vec![0.0; rows * cols]),
        }
    }

    pub fn is_constant(&self) -> bool {
        match &self.form {
            Form::Constant(_) => true,
            Form::Affine { dy, dz, .. } => dy.iter().chain(dz).all(|d| d.iter().all(|v| *v == 0.0)),
            Form::Smooth { amplitude, .. } => amplitude.iter().all(|v| *v == 0.0),
            Form::MeanReverting { speed, .. } => speed.iter().all(|v| *v == 0.0),
        }
    }

    /// Calls `put(row_major_index, value)` for every entry. `own` is the
    /// state a mean-reverting drift pulls back (`y` for eta, `z` for zeta).
    #[inline]
    pub fn fill(&self, y: &[f64], z: &[f64], own: &[f64], mut put: impl FnMut(usize, f64)) {
        match &self.form {
            Form::Constant(v) => {
                for (i, x) in v.iter().enumerate() {
                    put(i, *x);
                }
            }
            Form::Affine { base, dy, dz } => {
                for (i, b) in base.iter().enumerate() {
                    let mut acc = *b;
                    for (k, slope) in dy.iter().enumerate() {
                        acc += y[k] * slope[i];
                    }
                    for (j, slope) in dz.iter().enumerate() {
                        acc += z[j] * slope[i];
                    }
                    put(i, acc);
                }
            }
            Form::Smooth {
                base,
                amplitude,
                gain_y,
                gain_z,
            } => {
                let arg: f64 = gain_y.iter().zip(y).map(|(g, v)| g * v).sum::<f64>()
                    + gain_z.iter().zip(z).map(|(g, v)| g * v).sum::<f64>();
                let s = arg.tanh();
                for (i, (b, a)) in base.iter().zip(amplitude).enumerate() {
                    put(i, b + a * s);
                }
            }
            Form::MeanReverting { speed, level } => {
                for (i, (k, th)) in speed.iter().zip(level).enumerate() {
                    put(i, k * (th - own[i]));
                }
            }
        }
    }
}
