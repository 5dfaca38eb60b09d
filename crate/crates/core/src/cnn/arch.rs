//! Architecture config text format.
//!
//! ```text
//! input 224 224 3
//! mean 0 0 0
//! tap pool5
//! conv name=conv1 out=96 k=7x7 stride=2 pad=0
//! relu name=relu1
//! maxpool name=pool1 k=3 stride=3
//! ```
//!
//! Blank lines and `#` comments are ignored.

use std::path::Path;

use super::{NetError, Params, Shape};

/// One unbound layer line.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: String,
    pub name: String,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub input: Shape,
    pub mean: [f64; 3],
    pub tap: String,
    pub layers: Vec<LayerSpec>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> NetError {
    NetError::Parse { line, msg: msg.into() }
}

fn numbers<T: std::str::FromStr>(line: usize, head: &str, rest: &[&str], n: usize) -> Result<Vec<T>, NetError> {
    if rest.len() != n {
        return Err(parse_err(line, format!("`{head}` takes {n} values")));
    }
    rest.iter()
        .map(|s| s.parse().map_err(|_| parse_err(line, format!("bad `{head}` value `{s}`"))))
        .collect()
}

impl ArchSpec {
    pub fn parse(text: &str) -> Result<ArchSpec, NetError> {
        let mut input = None;
        let mut mean = None;
        let mut tap = None;
        let mut layers: Vec<LayerSpec> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap().trim();
            let tokens: Vec<&str> = content.split_whitespace().collect();
            let Some((&head, rest)) = tokens.split_first() else { continue };
            match head {
                "input" => {
                    let v: Vec<usize> = numbers(line, head, rest, 3)?;
                    if v.contains(&0) {
                        return Err(parse_err(line, "input extents must be at least 1"));
                    }
                    if input.replace(Shape { h: v[0], w: v[1], c: v[2] }).is_some() {
                        return Err(parse_err(line, "duplicate `input`"));
                    }
                }
                "mean" => {
                    let v: Vec<f64> = numbers(line, head, rest, 3)?;
                    if mean.replace([v[0], v[1], v[2]]).is_some() {
                        return Err(parse_err(line, "duplicate `mean`"));
                    }
                }
                "tap" => {
                    let [name] = rest else {
                        return Err(parse_err(line, "`tap` takes one layer name"));
                    };
                    if tap.replace(name.to_string()).is_some() {
                        return Err(parse_err(line, "duplicate `tap`"));
                    }
                }
                kind => {
                    let mut params = Params::new(line);
                    for kv in rest {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| parse_err(line, format!("expected key=value, got `{kv}`")))?;
                        params.insert(k, v)?;
                    }
                    let name = params
                        .get("name")
                        .ok_or_else(|| parse_err(line, "layer needs `name=`"))?
                        .to_string();
                    if layers.iter().any(|l| l.name == name) {
                        return Err(parse_err(line, format!("duplicate layer name `{name}`")));
                    }
                    layers.push(LayerSpec { kind: kind.to_string(), name, params });
                }
            }
        }
        let input = input.ok_or_else(|| parse_err(0, "missing `input` line"))?;
        if layers.is_empty() {
            return Err(parse_err(0, "no layers"));
        }
        let tap = tap.unwrap_or_else(|| layers.last().unwrap().name.clone());
        if !layers.iter().any(|l| l.name == tap) {
            return Err(parse_err(0, format!("tap `{tap}` names no layer")));
        }
        Ok(ArchSpec { input, mean: mean.unwrap_or([0.0; 3]), tap, layers })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ArchSpec, NetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| NetError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "input {} {} {}\nmean {} {} {}\ntap {}\n",
            self.input.h, self.input.w, self.input.c, self.mean[0], self.mean[1], self.mean[2], self.tap
        );
        for l in &self.layers {
            s.push_str(&l.kind);
            s.push_str(&format!(" name={}", l.name));
            for k in l.params.keys().filter(|&k| k != "name") {
                s.push_str(&format!(" {k}={}", l.params.get(k).unwrap()));
            }
            s.push('\n');
        }
        s
    }
}
