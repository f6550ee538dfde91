//! Line-oriented net/solver configs: `[layer]` / `[solver]` sections of
//! `key = value` pairs. Blank lines and `#` comments are skipped; unknown
//! keys fail fast.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{
    AccuracyParams, ConvParams, IpParams, PoolMethod, PoolParams, ReluParams,
};
use crate::net::{LayerConfig, LayerDef, NetSpec};
use crate::solver::{LrPolicy, SolverSpec};

struct Section {
    header: String,
    header_line: usize,
    entries: Vec<(String, String, usize)>,
}

fn split_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {line_no}: unterminated section header")))?;
            sections.push(Section {
                header: name.trim().to_string(),
                header_line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {line_no}: expected `key = value`, got '{line}'"))
        })?;
        let section = sections.last_mut().ok_or_else(|| {
            Error::Config(format!("line {line_no}: key outside of any section"))
        })?;
        section
            .entries
            .push((key.trim().to_string(), value.trim().to_string(), line_no));
    }
    Ok(sections)
}

struct Entries {
    map: HashMap<String, (String, usize)>,
    used: std::cell::RefCell<Vec<String>>,
    section_line: usize,
}

impl Entries {
    fn new(section: Section) -> Result<Self> {
        let mut map = HashMap::new();
        for (key, value, line) in section.entries {
            if map.insert(key.clone(), (value, line)).is_some() {
                return Err(Error::Config(format!(
                    "line {line}: duplicate key '{key}'"
                )));
            }
        }
        Ok(Entries {
            map,
            used: std::cell::RefCell::new(Vec::new()),
            section_line: section.header_line,
        })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().push(key.to_string());
        self.map.get(key).map(|(v, _)| v.as_str())
    }

    fn require(&self, key: &str, what: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| {
            Error::Config(format!(
                "line {}: {what} is missing required key '{key}'",
                self.section_line
            ))
        })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => {
                let line = self.map[key].1;
                raw.parse::<T>().map(Some).map_err(|_| {
                    Error::Config(format!("line {line}: cannot parse '{raw}' for key '{key}'"))
                })
            }
        }
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn parse_required<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        self.require(key, what)?;
        Ok(self.parse(key)?.expect("checked above"))
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(other) => {
                let line = self.map[key].1;
                Err(Error::Config(format!(
                    "line {line}: key '{key}' must be true/false, got '{other}'"
                )))
            }
        }
    }

    /// Fail-fast on keys nobody consumed.
    fn finish(self, what: &str) -> Result<()> {
        let used = self.used.into_inner();
        for (key, (_, line)) in &self.map {
            if !used.iter().any(|u| u == key) {
                return Err(Error::Config(format!(
                    "line {line}: unknown key '{key}' in {what}"
                )));
            }
        }
        Ok(())
    }
}

/// Square-or-rectangular geometry keys: `kernel` sets both extents,
/// `kernel_h` / `kernel_w` override per axis; same for stride and pad.
fn geometry(e: &Entries) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let kernel: Option<usize> = e.parse("kernel")?;
    let kernel_h = e.parse("kernel_h")?.or(kernel);
    let kernel_w = e.parse("kernel_w")?.or(kernel);
    let (kernel_h, kernel_w) = match (kernel_h, kernel_w) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            return Err(Error::Config(format!(
                "line {}: kernel size missing (kernel or kernel_h/kernel_w)",
                e.section_line
            )))
        }
    };
    let stride: usize = e.parse_or("stride", 1)?;
    let stride_h = e.parse_or("stride_h", stride)?;
    let stride_w = e.parse_or("stride_w", stride)?;
    let pad: usize = e.parse_or("pad", 0)?;
    let pad_h = e.parse_or("pad_h", pad)?;
    let pad_w = e.parse_or("pad_w", pad)?;
    Ok((kernel_h, kernel_w, stride_h, stride_w, pad_h, pad_w))
}

fn layer_def(section: Section) -> Result<LayerDef> {
    let e = Entries::new(section)?;
    let kind = e.require("type", "layer")?.to_string();
    let name = e.require("name", "layer")?.to_string();
    let bottom = e.get("bottom").map(str::to_string);
    let top = e.get("top").map(str::to_string);

    let config = match kind.as_str() {
        "data" => LayerConfig::Data {
            channels: e.parse_required("channels", "data layer")?,
            height: e.parse_required("height", "data layer")?,
            width: e.parse_required("width", "data layer")?,
        },
        "conv" => {
            let (kernel_h, kernel_w, stride_h, stride_w, pad_h, pad_w) = geometry(&e)?;
            LayerConfig::Conv(ConvParams {
                num_output: e.parse_required("num_output", "conv layer")?,
                kernel_h,
                kernel_w,
                stride_h,
                stride_w,
                pad_h,
                pad_w,
                bias: e.bool_or("bias", true)?,
            })
        }
        "pool" => {
            let (kernel_h, kernel_w, stride_h, stride_w, pad_h, pad_w) = geometry(&e)?;
            let method = match e.require("method", "pool layer")? {
                "max" => PoolMethod::Max,
                "average" | "avg" => PoolMethod::Average,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: pool method must be max or average, got '{other}'",
                        e.section_line
                    )))
                }
            };
            LayerConfig::Pool(PoolParams {
                method,
                kernel_h,
                kernel_w,
                stride_h,
                stride_w,
                pad_h,
                pad_w,
            })
        }
        "ip" => LayerConfig::Ip(IpParams {
            num_output: e.parse_required("num_output", "ip layer")?,
            bias: e.bool_or("bias", true)?,
            transpose: e.bool_or("transpose", false)?,
        }),
        "relu" => LayerConfig::Relu(ReluParams {
            negative_slope: e.parse_or("negative_slope", 0.0)?,
        }),
        "softmax" => LayerConfig::Softmax,
        "softmax_loss" => LayerConfig::SoftmaxLoss {
            loss_weight: e.parse_or("loss_weight", 1.0)?,
        },
        "accuracy" => LayerConfig::Accuracy(AccuracyParams {
            top_k: e.parse_or("top_k", 1)?,
        }),
        other => {
            return Err(Error::Config(format!(
                "line {}: unknown layer type '{other}'",
                e.section_line
            )))
        }
    };
    e.finish(&format!("{kind} layer '{name}'"))?;
    Ok(LayerDef {
        name,
        bottom,
        top,
        config,
    })
}

pub fn parse_net(text: &str) -> Result<NetSpec> {
    let sections = split_sections(text)?;
    if sections.is_empty() {
        return Err(Error::Config("net config has no sections".into()));
    }
    let mut layers = Vec::new();
    for section in sections {
        if section.header != "layer" {
            return Err(Error::Config(format!(
                "line {}: net config only holds [layer] sections, found [{}]",
                section.header_line, section.header
            )));
        }
        layers.push(layer_def(section)?);
    }
    let spec = NetSpec { layers };
    spec.input_dims()?;
    Ok(spec)
}

pub fn parse_solver(text: &str) -> Result<SolverSpec> {
    let mut sections = split_sections(text)?;
    if sections.len() != 1 || sections[0].header != "solver" {
        return Err(Error::Config(
            "solver config must hold exactly one [solver] section".into(),
        ));
    }
    let e = Entries::new(sections.remove(0))?;
    let lr_policy = match e.require("lr_policy", "solver")? {
        "fixed" => LrPolicy::Fixed,
        "inv" => LrPolicy::Inv,
        other => {
            return Err(Error::Config(format!(
                "lr_policy must be fixed or inv, got '{other}'"
            )))
        }
    };
    let spec = SolverSpec {
        base_lr: e.parse_required("base_lr", "solver")?,
        lr_policy,
        gamma: e.parse_or("gamma", 0.0)?,
        power: e.parse_or("power", 0.0)?,
        momentum: e.parse_or("momentum", 0.0)?,
        weight_decay: e.parse_or("weight_decay", 0.0)?,
        max_iter: e.parse_required("max_iter", "solver")?,
        test_interval: e.parse_or("test_interval", 0)?,
        test_iter: e.parse_or("test_iter", 0)?,
        snapshot_interval: e.parse_or("snapshot_interval", 0)?,
        seed: e.parse_or("seed", 1)?,
    };
    e.finish("solver")?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_net(path: &Path) -> Result<NetSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_net(&text)
}

pub fn load_solver(path: &Path) -> Result<SolverSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_solver(&text)
}
