//! On-disk formats: checkpoints and indexes (tagged JSON), pair files and
//! image sets (line-delimited text).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::curation::Image;
use crate::error::{Error, Result};
use crate::models::{check_params, ModelConfig, ModelParameters, Variant};
use crate::retrieval::EmbeddingIndex;
use crate::sampling::PairSample;

pub const CHECKPOINT_FORMAT: &str = "stylecompat-checkpoint/1";
pub const INDEX_FORMAT: &str = "stylecompat-index/1";
pub const PAIRS_MAGIC: &str = "#stylecompat-pairs v1";
pub const IMAGES_MAGIC: &str = "#stylecompat-images v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    config: ModelConfig,
    variant: Option<Variant>,
    margin: Option<f64>,
    tensors: BTreeMap<String, TensorRecord>,
}

/// Model configuration plus every named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Variant the model was trained as, if any.
    pub variant: Option<Variant>,
    /// Contrastive margin used in training, if any.
    pub margin: Option<f64>,
    pub params: ModelParameters,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        for (name, t) in self.params.iter() {
            if !t.is_finite() {
                return Err(Error::Numerics(format!("refusing to save non-finite tensor {name}")));
            }
        }
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            variant: self.variant,
            margin: self.margin,
            tensors: self
                .params
                .iter()
                .map(|(n, t)| {
                    (n.to_string(), TensorRecord { shape: t.shape().to_vec(), values: t.data().to_vec() })
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).map_err(|e| Error::Input(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Checkpoint> {
        let bad = |msg: String| Error::Format { path: path.to_path_buf(), line: 0, msg };
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("format tag {:?}, expected {CHECKPOINT_FORMAT:?}", file.format)));
        }
        let mut params = ParamStore::new();
        for (name, rec) in file.tensors {
            let t = Tensor::new(rec.shape, rec.values).map_err(|e| bad(format!("tensor {name}: {e}")))?;
            params.insert(name, t);
        }
        file.config.validate()?;
        check_params(&params, &file.config).map_err(|e| bad(e.to_string()))?;
        Ok(Checkpoint { config: file.config, variant: file.variant, margin: file.margin, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = self.to_json()?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text, path)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    index: EmbeddingIndex,
}

pub fn index_to_json(index: &EmbeddingIndex) -> Result<String> {
    let mut s =
        serde_json::to_string_pretty(&IndexFile { format: INDEX_FORMAT.to_string(), index: index.clone() })
            .map_err(|e| Error::Input(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn index_from_json(text: &str, path: &Path) -> Result<EmbeddingIndex> {
    let file: IndexFile = serde_json::from_str(text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if file.format != INDEX_FORMAT {
        return Err(Error::Format {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("format tag {:?}, expected {INDEX_FORMAT:?}", file.format),
        });
    }
    // Re-check the invariants serde cannot.
    let ix = file.index;
    EmbeddingIndex::new(ix.ids().to_vec(), ix.vectors().to_vec(), ix.metric(), ix.meta().to_vec())
}

pub fn save_index(index: &EmbeddingIndex, path: &Path) -> Result<()> {
    std::fs::write(path, index_to_json(index)?).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: &Path) -> Result<EmbeddingIndex> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    index_from_json(&text, path)
}

pub fn pairs_to_text(pairs: &[PairSample]) -> String {
    let mut s = format!("{PAIRS_MAGIC}\n");
    for p in pairs {
        let _ = writeln!(s, "{}\t{}\t{}", p.i, p.j, u8::from(p.compatible));
    }
    s
}

pub fn parse_pairs(text: &str, path: &Path) -> Result<Vec<PairSample>> {
    let err = |line: usize, msg: String| Error::Format { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == PAIRS_MAGIC => {}
        _ => return Err(err(1, format!("missing header {PAIRS_MAGIC:?}"))),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(err(n + 1, format!("expected 3 tab-separated fields, got {}", f.len())));
        }
        let y = match f[2] {
            "1" => true,
            "0" => false,
            other => return Err(err(n + 1, format!("label {other:?} is not 0 or 1"))),
        };
        if f[0] == f[1] {
            return Err(err(n + 1, format!("pair joins {} with itself", f[0])));
        }
        out.push(PairSample::new(f[0], f[1], y));
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text, path)
}

pub fn write_pairs(pairs: &[PairSample], path: &Path) -> Result<()> {
    std::fs::write(path, pairs_to_text(pairs)).map_err(|e| Error::io(path, e))
}

/// One image per line: `id\twidth\theight\tpixels`, pixels comma-separated
/// in row-major order.
pub fn images_to_text(ids: &[String], images: &[Image]) -> Result<String> {
    if ids.len() != images.len() {
        return Err(Error::Input(format!("{} ids but {} images", ids.len(), images.len())));
    }
    let mut s = format!("{IMAGES_MAGIC}\n");
    for (id, img) in ids.iter().zip(images) {
        let _ = write!(s, "{id}\t{}\t{}\t", img.width, img.height);
        for (k, p) in img.pixels.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let _ = write!(s, "{p}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_images(text: &str, path: &Path) -> Result<Vec<(String, Image)>> {
    let err = |line: usize, msg: String| Error::Format { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == IMAGES_MAGIC => {}
        _ => return Err(err(1, format!("missing header {IMAGES_MAGIC:?}"))),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(err(n + 1, format!("expected 4 tab-separated fields, got {}", f.len())));
        }
        let dim = |s: &str, what: &str| {
            s.parse::<usize>().map_err(|_| err(n + 1, format!("{what} {s:?} is not an integer")))
        };
        let (w, h) = (dim(f[1], "width")?, dim(f[2], "height")?);
        let pixels = f[3]
            .split(',')
            .map(|p| {
                p.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(n + 1, format!("pixel {p:?} is not a finite number")))
            })
            .collect::<Result<Vec<_>>>()?;
        let img = Image::new(w, h, pixels).map_err(|e| err(n + 1, e.to_string()))?;
        out.push((f[0].to_string(), img));
    }
    Ok(out)
}

pub fn read_images(path: &Path) -> Result<Vec<(String, Image)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_images(&text, path)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
