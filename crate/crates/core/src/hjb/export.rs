//! CSV and binary dumps of solved grids.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic       8 bytes  "FSGRID01"
//! kind        u32      0 value, 1 control, 2 fund coefficients
//! dims        u32      number of spatial axes d
//! axes        d x (f64 lo, f64 hi, u64 nodes)
//! slices      u64      t_steps + 1
//! horizon     f64
//! components  u64
//! data        slices x nodes x components f64, nodes row-major
//!             with the last axis varying fastest
//! ```

use std::io::{Read, Write};

use super::grid::{Axis, Grid};
use super::solver::{PolicyGrid, ValueGrid};
use crate::error::{Error, Result};
use crate::quad_opt::BallCase;

pub const MAGIC: &[u8; 8] = b"FSGRID01";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum DumpKind {
    Value = 0,
    Control = 1,
    FundCoefficients = 2,
}

/// Decoded binary dump.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDump {
    pub kind: DumpKind,
    pub axes: Vec<Axis>,
    pub slices: usize,
    pub horizon: f64,
    pub components: usize,
    pub data: Vec<f64>,
}

fn axis_names(grid: &Grid) -> Vec<String> {
    (0..grid.dim())
        .map(|a| {
            if a == 0 {
                "x".to_string()
            } else if a <= grid.m {
                format!("y_{}", a - 1)
            } else {
                format!("z_{}", a - 1 - grid.m)
            }
        })
        .collect()
}

fn f(v: f64) -> String {
    format!("{v:.17e}")
}

fn case_name(c: BallCase) -> &'static str {
    match c {
        BallCase::Interior => "interior",
        BallCase::BoundaryAlongB => "boundary",
        BallCase::DegenerateBoundary => "degenerate",
        BallCase::Zero => "zero",
    }
}

/// Slices written by the CSV writers; every `stride`-th slice plus the last.
fn slice_list(grid: &Grid, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut ks: Vec<usize> = (0..grid.slices()).step_by(stride).collect();
    if *ks.last().unwrap() != grid.t_steps {
        ks.push(grid.t_steps);
    }
    ks
}

/// One row per `(slice, node)`: `slice, t, x, y.., z.., J`.
pub fn write_value_csv<W: Write>(value: &ValueGrid, slice_stride: usize, out: W) -> Result<()> {
    let grid = &value.grid;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["slice".to_string(), "t".into()];
    header.extend(axis_names(grid));
    header.push("J".into());
    w.write_record(&header)?;
    for k in slice_list(grid, slice_stride) {
        for node in 0..grid.node_count() {
            let mut row = vec![k.to_string(), f(grid.time(k))];
            row.extend(grid.coords(node).into_iter().map(f));
            row.push(f(value.at(node, k)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per `(slice, node)` with the control, fund coefficients,
/// `kappa` and the maximizer case.
pub fn write_policy_csv<W: Write>(policy: &PolicyGrid, slice_stride: usize, out: W) -> Result<()> {
    let grid = &policy.grid;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["slice".to_string(), "t".into()];
    header.extend(axis_names(grid));
    header.extend((0..policy.n).map(|i| format!("u_{i}")));
    header.extend((1..=policy.fund_len()).map(|i| format!("H_{i}")));
    header.extend(["kappa".to_string(), "case".into()]);
    w.write_record(&header)?;
    for k in slice_list(grid, slice_stride) {
        for node in 0..grid.node_count() {
            let mut row = vec![k.to_string(), f(grid.time(k))];
            row.extend(grid.coords(node).into_iter().map(f));
            row.extend(policy.u_at(node, k).iter().copied().map(f));
            row.extend(policy.fund_at(node, k).iter().copied().map(f));
            row.push(f(policy.kappa_at(node, k)));
            row.push(case_name(policy.case_at(node, k)).to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_dump<W: Write>(grid: &Grid, kind: DumpKind, components: usize, data: &[f64], mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(kind as u32).to_le_bytes())?;
    out.write_all(&(grid.dim() as u32).to_le_bytes())?;
    for a in &grid.axes {
        out.write_all(&a.lo.to_le_bytes())?;
        out.write_all(&a.hi.to_le_bytes())?;
        out.write_all(&(a.nodes as u64).to_le_bytes())?;
    }
    out.write_all(&(grid.slices() as u64).to_le_bytes())?;
    out.write_all(&grid.horizon.to_le_bytes())?;
    out.write_all(&(components as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn write_value_binary<W: Write>(value: &ValueGrid, out: W) -> Result<()> {
    write_dump(&value.grid, DumpKind::Value, 1, &value.values, out)
}

pub fn write_policy_binary<W: Write>(policy: &PolicyGrid, out: W) -> Result<()> {
    write_dump(&policy.grid, DumpKind::Control, policy.n, &policy.u, out)
}

pub fn write_fund_binary<W: Write>(policy: &PolicyGrid, out: W) -> Result<()> {
    write_dump(&policy.grid, DumpKind::FundCoefficients, policy.fund_len(), &policy.fund, out)
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_dump<R: Read>(mut r: R) -> Result<GridDump> {
    if &take::<8, _>(&mut r)? != MAGIC {
        return Err(Error::Input("not a grid dump (bad magic)".into()));
    }
    let kind = match u32::from_le_bytes(take(&mut r)?) {
        0 => DumpKind::Value,
        1 => DumpKind::Control,
        2 => DumpKind::FundCoefficients,
        k => return Err(Error::Input(format!("unknown dump kind {k}"))),
    };
    let dims = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut axes = Vec::with_capacity(dims);
    for _ in 0..dims {
        let lo = f64::from_le_bytes(take(&mut r)?);
        let hi = f64::from_le_bytes(take(&mut r)?);
        let nodes = u64::from_le_bytes(take(&mut r)?) as usize;
        axes.push(Axis::new(lo, hi, nodes)?);
    }
    let slices = u64::from_le_bytes(take(&mut r)?) as usize;
    let horizon = f64::from_le_bytes(take(&mut r)?);
    let components = u64::from_le_bytes(take(&mut r)?) as usize;
    let count = slices * components * axes.iter().map(|a| a.nodes).product::<usize>();
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(f64::from_le_bytes(take(&mut r)?));
    }
    Ok(GridDump {
        kind,
        axes,
        slices,
        horizon,
        components,
        data,
    })
}
