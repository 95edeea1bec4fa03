//! Plain-text checkpoints: hyperparameters followed by every array as
//! `name = rows cols v₁ v₂ …` in row-major order, with optional fitted
//! covariance parameters.

use std::fmt::Write as _;
use std::path::Path;

use super::{Activation, FlowArch, FlowNetwork};
use crate::covariance::{CovarianceParams, Smoothness};
use crate::error::{Error, Result};
use crate::kv::{fmt_f64, write_atomic, KvDoc};
use crate::matrix::Matrix;

const COV_KEYS: [&str; 6] = ["sigma2", "l0", "l1", "l2", "tau2", "nu"];

/// Array names for block `j` (1-based), in canonical tensor order.
fn tensor_names(block: usize, layers: usize) -> Vec<String> {
    let mut out = Vec::new();
    for i in 1..=layers {
        out.push(format!("block.{block}.W{i}"));
        if i == 1 {
            out.push(format!("block.{block}.w1"));
        }
        out.push(format!("block.{block}.b{i}"));
    }
    out
}

pub fn to_string(net: &FlowNetwork, params: Option<&CovarianceParams>) -> String {
    let arch = net.arch();
    let mut s = String::new();
    s.push_str("# transport flow checkpoint\n");
    let _ = writeln!(s, "k = {}", arch.blocks);
    let _ = writeln!(s, "L = {}", arch.layers);
    let _ = writeln!(s, "h = {}", arch.hidden);
    let _ = writeln!(s, "activation = {}", arch.activation);
    if let Some(p) = params {
        let _ = writeln!(s, "sigma2 = {}", fmt_f64(p.sigma2));
        let _ = writeln!(s, "l0 = {}", fmt_f64(p.l0));
        let _ = writeln!(s, "l1 = {}", fmt_f64(p.l1));
        let _ = writeln!(s, "l2 = {}", fmt_f64(p.l2));
        let _ = writeln!(s, "tau2 = {}", fmt_f64(p.tau2));
        let _ = writeln!(s, "nu = {}", p.nu);
    }
    for (j, block) in net.blocks.iter().enumerate() {
        for (name, m) in tensor_names(j + 1, arch.layers).iter().zip(block.tensors()) {
            let _ = write!(s, "{name} = {} {}", m.rows(), m.cols());
            for &v in m.as_slice() {
                s.push(' ');
                s.push_str(&fmt_f64(v));
            }
            s.push('\n');
        }
    }
    s
}

pub fn from_str(source: &str, text: &str) -> Result<(FlowNetwork, Option<CovarianceParams>)> {
    let doc = KvDoc::parse(source, text)?;
    let arch = FlowArch {
        blocks: doc.parse_required("k")?,
        layers: doc.parse_required("L")?,
        hidden: doc.parse_required("h")?,
        activation: doc.parse_required::<Activation>("activation")?,
    };
    arch.validate()?;

    let mut allowed: Vec<String> = ["k", "L", "h", "activation"]
        .iter()
        .chain(COV_KEYS.iter())
        .map(|s| s.to_string())
        .collect();
    let mut net = FlowNetwork::zeros(arch)?;
    for (j, block) in net.blocks.iter_mut().enumerate() {
        let names = tensor_names(j + 1, arch.layers);
        for (name, m) in names.iter().zip(block.tensors_mut()) {
            let entry = doc.get(name).ok_or_else(|| Error::Parse {
                path: source.to_string(),
                line: 0,
                column: None,
                message: format!("missing array '{name}'"),
            })?;
            let mut fields = entry.value.split_whitespace();
            let mut dim = || -> Result<usize> {
                fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| doc.error_at(entry, "missing or invalid dimensions"))
            };
            let (rows, cols) = (dim()?, dim()?);
            if (rows, cols) != m.shape() {
                return Err(doc.error_at(
                    entry,
                    format!("expected {:?}, found ({rows}, {cols})", m.shape()),
                ));
            }
            let values = fields
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| doc.error_at(entry, format!("invalid number '{f}'")))
                })
                .collect::<Result<Vec<f64>>>()?;
            *m = Matrix::from_vec(rows, cols, values)
                .map_err(|_| doc.error_at(entry, "wrong number of values"))?;
        }
        allowed.extend(names);
    }
    let allowed: Vec<&str> = allowed.iter().map(String::as_str).collect();
    doc.reject_unknown(&allowed)?;

    let params = if COV_KEYS.iter().any(|k| doc.get(k).is_some()) {
        let p = CovarianceParams {
            sigma2: doc.parse_required("sigma2")?,
            l0: doc.parse_required("l0")?,
            l1: doc.parse_required("l1")?,
            l2: doc.parse_required("l2")?,
            tau2: doc.parse_required("tau2")?,
            nu: doc.parse_required::<Smoothness>("nu")?,
        };
        p.validate()?;
        Some(p)
    } else {
        None
    };
    Ok((net, params))
}

pub fn write(path: &Path, net: &FlowNetwork, params: Option<&CovarianceParams>) -> Result<()> {
    write_atomic(path, &to_string(net, params))
}

pub fn read(path: &Path) -> Result<(FlowNetwork, Option<CovarianceParams>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&path.display().to_string(), &text)
}
