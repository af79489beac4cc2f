//! Item records and the line-delimited dataset file.
//!
//! ```text
//! #stylecompat-dataset v1 input_dim=4 num_styles=3 num_types=2 vocab_size=40
//! <id>\t<style>\t<type>\t<f0,f1,...>\t<t0,t1,...>\t<train|val|test>
//! ```
//!
//! Features are written with Rust's shortest round-trip float formatting, so a
//! write/read cycle is bit-exact.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_MAGIC: &str = "#stylecompat-dataset";
pub const DATASET_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One furniture item: a feature vector standing in for the image, its style
/// and furniture-type labels, and meta-data tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemRecord {
    pub id: String,
    pub features: Vec<f64>,
    pub style: usize,
    pub furniture_type: usize,
    pub tokens: Vec<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_dim: usize,
    pub num_styles: usize,
    pub num_types: usize,
    pub vocab_size: usize,
    pub items: Vec<ItemRecord>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (n, it) in self.items.iter().enumerate() {
            self.check_item(it).map_err(|msg| Error::Input(format!("item {n}: {msg}")))?;
            if !seen.insert(it.id.as_str()) {
                return Err(Error::Input(format!("duplicate item id {:?}", it.id)));
            }
        }
        Ok(())
    }

    fn check_item(&self, it: &ItemRecord) -> std::result::Result<(), String> {
        if it.id.is_empty() || it.id.contains(['\t', '\n']) {
            return Err(format!("invalid id {:?}", it.id));
        }
        if it.style >= self.num_styles {
            return Err(format!("style {} out of range [0, {})", it.style, self.num_styles));
        }
        if it.furniture_type >= self.num_types {
            return Err(format!("furniture_type {} out of range [0, {})", it.furniture_type, self.num_types));
        }
        if it.features.len() != self.input_dim {
            return Err(format!(
                "{} features, header declares input_dim={}",
                it.features.len(),
                self.input_dim
            ));
        }
        if it.features.iter().any(|v| !v.is_finite()) {
            return Err("non-finite feature value".into());
        }
        if let Some(t) = it.tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(format!("token {t} outside vocab_size={}", self.vocab_size));
        }
        Ok(())
    }

    pub fn in_split(&self, split: Split) -> Vec<ItemRecord> {
        self.items.iter().filter(|i| i.split == split).cloned().collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{DATASET_MAGIC} {DATASET_VERSION} input_dim={} num_styles={} num_types={} vocab_size={}\n",
            self.input_dim, self.num_styles, self.num_types, self.vocab_size
        );
        for it in &self.items {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                it.id,
                it.style,
                it.furniture_type,
                join(&it.features),
                join(&it.tokens),
                it.split.as_str()
            );
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Dataset> {
        let err = |line: usize, msg: String| Error::Format { path: path.to_path_buf(), line, msg };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty dataset file".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(DATASET_MAGIC) {
            return Err(err(1, format!("missing {DATASET_MAGIC} header")));
        }
        if fields.next() != Some(DATASET_VERSION) {
            return Err(err(1, format!("unsupported version, expected {DATASET_VERSION}")));
        }
        let mut dims = [None; 4];
        let keys = ["input_dim", "num_styles", "num_types", "vocab_size"];
        for f in fields {
            let (k, v) = f.split_once('=').ok_or_else(|| err(1, format!("malformed header field {f:?}")))?;
            let slot = keys
                .iter()
                .position(|&key| key == k)
                .ok_or_else(|| err(1, format!("unknown header field {k:?}")))?;
            dims[slot] =
                Some(v.parse::<usize>().map_err(|_| err(1, format!("header field {k} is not an integer")))?);
        }
        let mut vals = [0usize; 4];
        for (i, d) in dims.iter().enumerate() {
            vals[i] = d.ok_or_else(|| err(1, format!("header missing {}", keys[i])))?;
        }
        let mut ds = Dataset {
            input_dim: vals[0],
            num_styles: vals[1],
            num_types: vals[2],
            vocab_size: vals[3],
            items: Vec::new(),
        };
        let mut seen = HashSet::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(err(lineno, format!("expected 6 tab-separated fields, got {}", cols.len())));
            }
            let num = |s: &str, what: &str| -> Result<usize> {
                s.parse().map_err(|_| err(lineno, format!("field {what}: {s:?} is not an integer")))
            };
            let features = split_list(cols[3])
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| err(lineno, format!("field features: {s:?} is not a number")))
                })
                .collect::<Result<Vec<_>>>()?;
            let tokens = split_list(cols[4]).map(|s| num(s, "tokens")).collect::<Result<Vec<_>>>()?;
            let item = ItemRecord {
                id: cols[0].to_string(),
                style: num(cols[1], "style")?,
                furniture_type: num(cols[2], "furniture_type")?,
                features,
                tokens,
                split: cols[5].parse().map_err(|e: String| err(lineno, format!("field split: {e}")))?,
            };
            ds.check_item(&item).map_err(|m| err(lineno, m))?;
            if !seen.insert(item.id.clone()) {
                return Err(err(lineno, format!("duplicate id {:?}", item.id)));
            }
            ds.items.push(item);
        }
        Ok(ds)
    }

    pub fn read(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').filter(|p| !p.is_empty())
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    let mut s = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{x}");
    }
    s
}
