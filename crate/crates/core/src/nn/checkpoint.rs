//! Network checkpoints: a text manifest plus one tensor file per conv layer.
//!
//! `<prefix>.manifest` lists the input channels and one line per layer:
//!
//! ```text
//! network v1
//! input_channels 2
//! layer 0 conv 2 16 time_bias
//! layer 1 relu
//! layer 2 downsample
//! layer 3 upsample
//! layer 4 skip_add 1
//! ```
//!
//! Each conv layer `i` stores its parameters (weights, bias, optional time
//! bias) as a float64 tensor of shape `n×1×1` in `<prefix>.layer<i>.tensor`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::network::{Conv3x3, Layer, Network};
use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::tensor::{Dims, ImageTensor};

fn layer_path(dir: &Path, prefix: &str, i: usize) -> PathBuf {
    dir.join(format!("{prefix}.layer{i}.tensor"))
}

pub fn save_network(net: &Network, dir: &Path, prefix: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("network v1\ninput_channels {}\n", net.input_channels());
    for (i, layer) in net.layers().iter().enumerate() {
        let name = Network::layer_name(layer);
        match layer {
            Layer::Conv(c) => {
                let tb = if c.time_bias.is_some() { " time_bias" } else { "" };
                writeln!(manifest, "layer {i} {name} {} {}{tb}", c.in_channels, c.out_channels)
                    .expect("string write");
                let mut p = c.weights.clone();
                p.extend_from_slice(&c.bias);
                p.extend(c.time_bias);
                let t = ImageTensor::new(Dims::new(p.len(), 1, 1), p)?;
                write_tensor(&layer_path(dir, prefix, i), &t)?;
            }
            Layer::SkipAdd { from } => {
                writeln!(manifest, "layer {i} {name} {from}").expect("string write")
            }
            _ => writeln!(manifest, "layer {i} {name}").expect("string write"),
        }
    }
    let path = dir.join(format!("{prefix}.manifest"));
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn load_network(dir: &Path, prefix: &str) -> Result<Network> {
    let path = dir.join(format!("{prefix}.manifest"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |line: usize, msg: &str| Error::Format {
        offset: line as u64,
        message: format!("{}: line {line}: {msg}", path.display()),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "network v1")) => {}
        _ => return Err(bad(0, "missing 'network v1' header")),
    }
    let input_channels = match lines.next() {
        Some((n, l)) => l
            .strip_prefix("input_channels ")
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| bad(n, "expected input_channels"))?,
        None => return Err(bad(1, "missing input_channels")),
    };
    let mut layers = Vec::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() < 3 || f[0] != "layer" || f[1].parse::<usize>().ok() != Some(layers.len()) {
            return Err(bad(n, "malformed layer line"));
        }
        let num = |k: usize| -> Result<usize> {
            f.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(n, "expected integer field"))
        };
        let layer = match f[2] {
            "conv" => {
                let (ic, oc) = (num(3)?, num(4)?);
                let has_tb = f.get(5) == Some(&"time_bias");
                let p = read_tensor(&layer_path(dir, prefix, layers.len()))?.into_vec();
                let mut c = Conv3x3::zeros(ic, oc);
                if has_tb {
                    c.time_bias = Some(0.0);
                }
                if p.len() != c.num_params() {
                    return Err(bad(n, "parameter tensor length does not match layer shape"));
                }
                let nw = c.weights.len();
                c.weights.copy_from_slice(&p[..nw]);
                c.bias.copy_from_slice(&p[nw..nw + oc]);
                if has_tb {
                    c.time_bias = Some(p[nw + oc]);
                }
                Layer::Conv(c)
            }
            "relu" => Layer::Relu,
            "downsample" => Layer::Downsample,
            "upsample" => Layer::Upsample,
            "skip_add" => Layer::SkipAdd { from: num(3)? },
            other => return Err(bad(n, &format!("unknown layer kind '{other}'"))),
        };
        layers.push(layer);
    }
    Network::new(input_channels, layers)
}
