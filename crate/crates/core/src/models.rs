//! Trainable networks: a fully connected tanh base standing in for the CNN,
//! the linear embedding layer E, the style classifier C, a one-layer LSTM text
//! encoder and the two projections into the joint image-text space.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bindings, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub base_layers: Vec<usize>,
    /// Number of base layers kept by the short variant.
    pub short_truncate_at: Option<usize>,
    /// Mean-pooling group size applied after truncation.
    pub short_pool: usize,
    pub embedding_dim: usize,
    pub num_styles: usize,
    pub num_types: usize,
    pub text_vocab_size: usize,
    pub token_embed_dim: usize,
    pub lstm_hidden: usize,
    pub joint_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 64,
            base_layers: vec![128, 128, 64],
            short_truncate_at: Some(1),
            short_pool: 2,
            embedding_dim: 256,
            num_styles: 17,
            num_types: 6,
            text_vocab_size: 128,
            token_embed_dim: 300,
            lstm_hidden: 300,
            joint_dim: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("short_pool", self.short_pool),
            ("embedding_dim", self.embedding_dim),
            ("num_styles", self.num_styles),
            ("num_types", self.num_types),
            ("text_vocab_size", self.text_vocab_size),
            ("token_embed_dim", self.token_embed_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("joint_dim", self.joint_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be >= 1")));
            }
        }
        if self.base_layers.is_empty() || self.base_layers.contains(&0) {
            return Err(Error::Config(
                "model.base_layers must be a non-empty list of positive widths".into(),
            ));
        }
        if let Some(t) = self.short_truncate_at {
            if t < 1 || t >= self.base_layers.len() {
                return Err(Error::Config(format!(
                    "model.short_truncate_at = {t} must be in [1, {})",
                    self.base_layers.len()
                )));
            }
            if !self.base_layers[t - 1].is_multiple_of(self.short_pool) {
                return Err(Error::Config(format!(
                    "model.short_pool = {} does not divide layer width {}",
                    self.short_pool,
                    self.base_layers[t - 1]
                )));
            }
        }
        Ok(())
    }

    pub fn base_out_dim(&self) -> usize {
        *self.base_layers.last().expect("validated non-empty")
    }

    fn short_dims(&self) -> Option<(usize, usize)> {
        self.short_truncate_at.map(|t| (t, self.base_layers[t - 1] / self.short_pool))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Canonical,
    Short,
    Categorical,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Canonical => "canonical",
            Variant::Short => "short",
            Variant::Categorical => "categorical",
        }
    }

    /// Names of the head parameters updated in the first training stage.
    pub fn head_params(self) -> &'static [&'static str] {
        match self {
            Variant::Canonical => &["embed.weight", "embed.bias"],
            Variant::Short => &["embed_short.weight", "embed_short.bias"],
            Variant::Categorical => &["embed.weight", "embed.bias", "classifier.weight", "classifier.bias"],
        }
    }

    /// Every parameter the variant's Siamese loss depends on.
    pub fn siamese_params(self, config: &ModelConfig) -> Vec<String> {
        let layers = match self {
            Variant::Short => config.short_truncate_at.unwrap_or(0),
            _ => config.base_layers.len(),
        };
        let mut names: Vec<String> =
            (0..layers).flat_map(|l| [format!("base.{l}.weight"), format!("base.{l}.bias")]).collect();
        names.extend(self.head_params().iter().map(|s| s.to_string()));
        names
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Variant::Canonical),
            "short" => Ok(Variant::Short),
            "categorical" => Ok(Variant::Categorical),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected canonical, short or categorical)"
            ))),
        }
    }
}

pub const LSTM_GATES: [&str; 4] = ["i", "f", "o", "c"];

/// All trainable weights, keyed by name.
pub type ModelParameters = ParamStore;

/// Glorot-uniform weights, zero biases, forget-gate bias 1.
pub fn init_params(config: &ModelConfig, rng: &mut Rng) -> Result<ModelParameters> {
    config.validate()?;
    let mut p = ParamStore::new();
    let mut glorot = |rows: usize, cols: usize| -> Result<Tensor> {
        let s = (6.0 / (rows + cols) as f64).sqrt();
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-s..=s)).collect())
    };

    let mut fan_in = config.input_dim;
    let mut weights = Vec::new();
    for &w in &config.base_layers {
        weights.push(glorot(w, fan_in)?);
        fan_in = w;
    }
    for (l, (wt, &w)) in weights.into_iter().zip(&config.base_layers).enumerate() {
        p.insert(format!("base.{l}.weight"), wt);
        p.insert(format!("base.{l}.bias"), Tensor::zeros(&[w]));
    }
    let out = config.base_out_dim();
    let d = config.embedding_dim;
    p.insert("embed.weight", glorot(d, out)?);
    p.insert("embed.bias", Tensor::zeros(&[d]));
    if let Some((_, pooled)) = config.short_dims() {
        p.insert("embed_short.weight", glorot(d, pooled)?);
        p.insert("embed_short.bias", Tensor::zeros(&[d]));
    }
    p.insert("classifier.weight", glorot(config.num_styles, out)?);
    p.insert("classifier.bias", Tensor::zeros(&[config.num_styles]));

    let (v, e, h) = (config.text_vocab_size, config.token_embed_dim, config.lstm_hidden);
    p.insert("text.token_table", glorot(v, e)?);
    for gate in LSTM_GATES {
        p.insert(format!("lstm.w_{gate}"), glorot(h, e)?);
        p.insert(format!("lstm.u_{gate}"), glorot(h, h)?);
        let bias = if gate == "f" { 1.0 } else { 0.0 };
        p.insert(format!("lstm.b_{gate}"), Tensor::filled(&[h], bias));
    }
    p.insert("joint.visual", glorot(config.joint_dim, out)?);
    p.insert("joint.text", glorot(config.joint_dim, h)?);
    Ok(p)
}

/// Check that every tensor in `params` has the shape `config` implies.
pub fn check_params(params: &ModelParameters, config: &ModelConfig) -> Result<()> {
    config.validate()?;
    let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
    let mut fan_in = config.input_dim;
    for (l, &w) in config.base_layers.iter().enumerate() {
        expected.push((format!("base.{l}.weight"), vec![w, fan_in]));
        expected.push((format!("base.{l}.bias"), vec![w]));
        fan_in = w;
    }
    let (d, out) = (config.embedding_dim, config.base_out_dim());
    expected.push(("embed.weight".into(), vec![d, out]));
    expected.push(("embed.bias".into(), vec![d]));
    if let Some((_, pooled)) = config.short_dims() {
        expected.push(("embed_short.weight".into(), vec![d, pooled]));
        expected.push(("embed_short.bias".into(), vec![d]));
    }
    expected.push(("classifier.weight".into(), vec![config.num_styles, out]));
    expected.push(("classifier.bias".into(), vec![config.num_styles]));
    let (v, e, h) = (config.text_vocab_size, config.token_embed_dim, config.lstm_hidden);
    expected.push(("text.token_table".into(), vec![v, e]));
    for gate in LSTM_GATES {
        expected.push((format!("lstm.w_{gate}"), vec![h, e]));
        expected.push((format!("lstm.u_{gate}"), vec![h, h]));
        expected.push((format!("lstm.b_{gate}"), vec![h]));
    }
    expected.push(("joint.visual".into(), vec![config.joint_dim, out]));
    expected.push(("joint.text".into(), vec![config.joint_dim, h]));

    for (name, shape) in &expected {
        let t = params.get(name)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "parameter {name} has shape {:?}, config implies {shape:?}",
                t.shape()
            )));
        }
        if !t.is_finite() {
            return Err(Error::Numerics(format!("parameter {name} is not finite")));
        }
    }
    if params.len() != expected.len() {
        let extra: Vec<&str> = params.names().filter(|n| !expected.iter().any(|(e, _)| e == n)).collect();
        return Err(Error::Shape(format!("unexpected parameters {extra:?}")));
    }
    Ok(())
}

/// Trainable parameter count of a variant's Siamese branch.
pub fn param_count(params: &ModelParameters, config: &ModelConfig, variant: Variant) -> Result<usize> {
    variant.siamese_params(config).iter().map(|n| params.get(n).map(Tensor::len)).sum()
}

fn input_var(g: &mut Graph, features: &[f64], config: &ModelConfig) -> Result<Var> {
    if features.len() != config.input_dim {
        return Err(Error::Shape(format!(
            "item has {} features, model expects {}",
            features.len(),
            config.input_dim
        )));
    }
    g.constant(Tensor::vector(features.to_vec()))
}

fn affine(g: &mut Graph, b: &Bindings, prefix: &str, x: Var) -> Result<Var> {
    let w = b.get(&format!("{prefix}.weight"))?;
    let bias = b.get(&format!("{prefix}.bias"))?;
    let wx = g.matmul(w, x)?;
    g.add(wx, bias)
}

/// tanh(W x + b) through the first `layers` base layers.
pub fn base_graph(g: &mut Graph, b: &Bindings, x: Var, layers: usize) -> Result<Var> {
    let mut h = x;
    for l in 0..layers {
        let z = affine(g, b, &format!("base.{l}"), h)?;
        h = g.tanh(z)?;
    }
    Ok(h)
}

pub fn embed_graph(g: &mut Graph, b: &Bindings, config: &ModelConfig, x: Var) -> Result<Var> {
    let h = base_graph(g, b, x, config.base_layers.len())?;
    affine(g, b, "embed", h)
}

pub fn embed_short_graph(g: &mut Graph, b: &Bindings, config: &ModelConfig, x: Var) -> Result<Var> {
    let (t, pooled) = config
        .short_dims()
        .ok_or_else(|| Error::Config("short variant needs model.short_truncate_at".into()))?;
    let h = base_graph(g, b, x, t)?;
    let pool = config.short_pool;
    let h = if pool == 1 {
        h
    } else {
        let width = pooled * pool;
        let mut m = vec![0.0; pooled * width];
        for r in 0..pooled {
            for c in r * pool..(r + 1) * pool {
                m[r * width + c] = 1.0 / pool as f64;
            }
        }
        let pm = g.constant(Tensor::matrix(pooled, width, m)?)?;
        g.matmul(pm, h)?
    };
    affine(g, b, "embed_short", h)
}

/// Style logits C(base(x)).
pub fn logits_graph(g: &mut Graph, b: &Bindings, config: &ModelConfig, x: Var) -> Result<Var> {
    let h = base_graph(g, b, x, config.base_layers.len())?;
    affine(g, b, "classifier", h)
}

/// Embedding and (for the categorical variant) style probabilities from one
/// shared base evaluation.
pub fn siamese_graph(
    g: &mut Graph,
    b: &Bindings,
    config: &ModelConfig,
    variant: Variant,
    x: Var,
) -> Result<(Var, Option<Var>)> {
    match variant {
        Variant::Short => Ok((embed_short_graph(g, b, config, x)?, None)),
        Variant::Canonical => Ok((embed_graph(g, b, config, x)?, None)),
        Variant::Categorical => {
            let h = base_graph(g, b, x, config.base_layers.len())?;
            let e = affine(g, b, "embed", h)?;
            let z = affine(g, b, "classifier", h)?;
            Ok((e, Some(g.softmax(z)?)))
        }
    }
}

pub fn check_tokens(tokens: &[usize], config: &ModelConfig) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Input("empty token sequence".into()));
    }
    if let Some(bad) = tokens.iter().find(|&&t| t >= config.text_vocab_size) {
        return Err(Error::Input(format!(
            "token {bad} outside vocabulary of size {}",
            config.text_vocab_size
        )));
    }
    Ok(())
}

/// Final hidden state of the LSTM over the token embeddings.
pub fn text_encode_graph(g: &mut Graph, b: &Bindings, config: &ModelConfig, tokens: &[usize]) -> Result<Var> {
    check_tokens(tokens, config)?;
    let hdim = config.lstm_hidden;
    let table = b.get("text.token_table")?;
    let mut h = g.constant(Tensor::zeros(&[hdim]))?;
    let mut c = g.constant(Tensor::zeros(&[hdim]))?;
    for &tok in tokens {
        let mut onehot = vec![0.0; config.text_vocab_size];
        onehot[tok] = 1.0;
        let oh = g.constant(Tensor::vector(onehot))?;
        let x = g.matmul(oh, table)?;
        let gate = |g: &mut Graph, name: &str| -> Result<Var> {
            let wx = g.matmul(b.get(&format!("lstm.w_{name}"))?, x)?;
            let uh = g.matmul(b.get(&format!("lstm.u_{name}"))?, h)?;
            let s = g.add(wx, uh)?;
            g.add(s, b.get(&format!("lstm.b_{name}"))?)
        };
        let zi = gate(g, "i")?;
        let zf = gate(g, "f")?;
        let zo = gate(g, "o")?;
        let zc = gate(g, "c")?;
        let i = g.sigmoid(zi)?;
        let f = g.sigmoid(zf)?;
        let o = g.sigmoid(zo)?;
        let cand = g.tanh(zc)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        h = g.mul(o, tc)?;
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointSide {
    Visual,
    Text,
}

pub fn project_graph(g: &mut Graph, b: &Bindings, which: JointSide, x: Var) -> Result<Var> {
    let name = match which {
        JointSide::Visual => "joint.visual",
        JointSide::Text => "joint.text",
    };
    let w = b.get(name)?;
    let (wshape, xlen) = (g.value(w).shape().to_vec(), g.value(x).len());
    if wshape[1] != xlen {
        return Err(Error::Shape(format!("{name} expects a {}-dim input, got {xlen}", wshape[1])));
    }
    g.matmul(w, x)
}

fn frozen(params: &ModelParameters) -> Result<(Graph, Bindings)> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, |_| false)?;
    Ok((g, b))
}

pub fn embed(features: &[f64], params: &ModelParameters, config: &ModelConfig) -> Result<Vec<f64>> {
    let (mut g, b) = frozen(params)?;
    let x = input_var(&mut g, features, config)?;
    let e = embed_graph(&mut g, &b, config, x)?;
    Ok(g.value(e).data().to_vec())
}

pub fn embed_short(features: &[f64], params: &ModelParameters, config: &ModelConfig) -> Result<Vec<f64>> {
    let (mut g, b) = frozen(params)?;
    let x = input_var(&mut g, features, config)?;
    let e = embed_short_graph(&mut g, &b, config, x)?;
    Ok(g.value(e).data().to_vec())
}

/// Embedding for whichever Siamese variant was trained.
pub fn embed_variant(
    features: &[f64],
    params: &ModelParameters,
    config: &ModelConfig,
    variant: Variant,
) -> Result<Vec<f64>> {
    match variant {
        Variant::Short => embed_short(features, params, config),
        _ => embed(features, params, config),
    }
}

pub fn base_features(features: &[f64], params: &ModelParameters, config: &ModelConfig) -> Result<Vec<f64>> {
    let (mut g, b) = frozen(params)?;
    let x = input_var(&mut g, features, config)?;
    let h = base_graph(&mut g, &b, x, config.base_layers.len())?;
    Ok(g.value(h).data().to_vec())
}

pub fn classify(features: &[f64], params: &ModelParameters, config: &ModelConfig) -> Result<Vec<f64>> {
    let (mut g, b) = frozen(params)?;
    let x = input_var(&mut g, features, config)?;
    let z = logits_graph(&mut g, &b, config, x)?;
    let p = g.softmax(z)?;
    Ok(g.value(p).data().to_vec())
}

pub fn text_encode(tokens: &[usize], params: &ModelParameters, config: &ModelConfig) -> Result<Vec<f64>> {
    let (mut g, b) = frozen(params)?;
    let h = text_encode_graph(&mut g, &b, config, tokens)?;
    Ok(g.value(h).data().to_vec())
}

pub fn project_joint(x: &[f64], which: JointSide, params: &ModelParameters) -> Result<Vec<f64>> {
    let (mut g, b) = frozen(params)?;
    let xv = g.constant(Tensor::vector(x.to_vec()))?;
    let y = project_graph(&mut g, &b, which, xv)?;
    Ok(g.value(y).data().to_vec())
}

/// x_I: visual projection of the (frozen) base features.
pub fn joint_visual(features: &[f64], params: &ModelParameters, config: &ModelConfig) -> Result<Vec<f64>> {
    let h = base_features(features, params, config)?;
    project_joint(&h, JointSide::Visual, params)
}

/// x_T: text projection of the LSTM encoding.
pub fn joint_text(tokens: &[usize], params: &ModelParameters, config: &ModelConfig) -> Result<Vec<f64>> {
    let h = text_encode(tokens, params, config)?;
    project_joint(&h, JointSide::Text, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use approx::assert_abs_diff_eq;

    fn small() -> ModelConfig {
        ModelConfig {
            input_dim: 6,
            base_layers: vec![8, 6, 4],
            short_truncate_at: Some(1),
            short_pool: 2,
            embedding_dim: 3,
            num_styles: 4,
            num_types: 2,
            text_vocab_size: 10,
            token_embed_dim: 5,
            lstm_hidden: 4,
            joint_dim: 3,
        }
    }

    fn params(cfg: &ModelConfig, seed: u64) -> ModelParameters {
        init_params(cfg, &mut SeedStream::new(seed).rng("init")).unwrap()
    }

    fn features(seed: u64, n: usize) -> Vec<f64> {
        let mut r = SeedStream::new(seed).rng("x");
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    // Straight-line matrix arithmetic, independent of the graph.
    fn mv(w: &Tensor, x: &[f64]) -> Vec<f64> {
        let cols = w.shape()[1];
        w.data().chunks(cols).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    fn layer(p: &ModelParameters, prefix: &str, x: &[f64]) -> Vec<f64> {
        let y = mv(p.get(&format!("{prefix}.weight")).unwrap(), x);
        y.iter().zip(p.get(&format!("{prefix}.bias")).unwrap().data()).map(|(a, b)| a + b).collect()
    }

    fn oracle_base(p: &ModelParameters, x: &[f64], layers: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in 0..layers {
            h = layer(p, &format!("base.{l}"), &h).iter().map(|v| v.tanh()).collect();
        }
        h
    }

    #[test]
    fn config_validation() {
        let mut c = small();
        assert!(c.validate().is_ok());
        c.short_truncate_at = Some(3);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.short_truncate_at = Some(0);
        assert!(c.validate().is_err());
        let mut c = small();
        c.embedding_dim = 0;
        assert!(c.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn init_follows_scheme() {
        let cfg = small();
        let p = params(&cfg, 1);
        check_params(&p, &cfg).unwrap();
        assert!(p.get("lstm.b_f").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(p.get("lstm.b_i").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("base.0.bias").unwrap().data().iter().all(|&v| v == 0.0));
        let s = (6.0f64 / (8 + 6) as f64).sqrt();
        assert!(p.get("base.0.weight").unwrap().data().iter().all(|v| v.abs() <= s));
    }

    #[test]
    fn zero_params_embed_to_zero() {
        let cfg = small();
        let mut p = params(&cfg, 1);
        for (_, t) in p.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = embed(&features(2, 6), &p, &cfg).unwrap();
        assert_eq!(x, vec![0.0; 3]);
    }

    #[test]
    fn identity_base_and_embedding_pass_input_prefix() {
        let cfg = ModelConfig { base_layers: vec![3], short_truncate_at: None, ..small() };
        let mut p = params(&cfg, 1);
        let mut w = vec![0.0; 3 * 6];
        for i in 0..3 {
            w[i * 6 + i] = 1.0;
        }
        p.insert("base.0.weight", Tensor::matrix(3, 6, w).unwrap());
        let mut e = vec![0.0; 9];
        for i in 0..3 {
            e[i * 3 + i] = 1.0;
        }
        p.insert("embed.weight", Tensor::matrix(3, 3, e).unwrap());
        // tanh is identity to first order near zero
        let input = [1e-4, -2e-4, 3e-4, 0.5, 0.5, 0.5];
        let x = embed(&input, &p, &cfg).unwrap();
        for (a, b) in x.iter().zip(&input[..3]) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-11);
        }
    }

    #[test]
    fn embed_matches_matrix_oracle() {
        let cfg = small();
        let p = params(&cfg, 5);
        let f = features(6, 6);
        let got = embed(&f, &p, &cfg).unwrap();
        let want = layer(&p, "embed", &oracle_base(&p, &f, 3));
        for (a, b) in got.iter().zip(&want) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(matches!(embed(&f[..5], &p, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn short_embed_matches_oracle() {
        let cfg = small();
        let p = params(&cfg, 7);
        let f = features(8, 6);
        let got = embed_short(&f, &p, &cfg).unwrap();
        let h = oracle_base(&p, &f, 1);
        let pooled: Vec<f64> = h.chunks(2).map(|c| (c[0] + c[1]) / 2.0).collect();
        let want = layer(&p, "embed_short", &pooled);
        for (a, b) in got.iter().zip(&want) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn short_embed_requires_truncation() {
        let cfg = ModelConfig { short_truncate_at: None, ..small() };
        let p = params(&cfg, 1);
        assert!(matches!(embed_short(&features(1, 6), &p, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn degenerate_truncation_equals_full_prefix_network() {
        // Truncating [8, 6, 4] after two layers with pool 1 is the [8, 6] network.
        let long = ModelConfig { short_truncate_at: Some(2), short_pool: 1, ..small() };
        let p = params(&long, 3);
        let prefix = ModelConfig { base_layers: vec![8, 6], short_truncate_at: None, ..small() };
        let mut q = params(&prefix, 4);
        for n in ["base.0.weight", "base.0.bias", "base.1.weight", "base.1.bias"] {
            q.insert(n, p.get(n).unwrap().clone());
        }
        q.insert("embed.weight", p.get("embed_short.weight").unwrap().clone());
        q.insert("embed.bias", p.get("embed_short.bias").unwrap().clone());
        let f = features(9, 6);
        assert_eq!(embed_short(&f, &p, &long).unwrap(), embed(&f, &q, &prefix).unwrap());
    }

    #[test]
    fn short_has_fewer_parameters_by_default() {
        let cfg = ModelConfig::default();
        let p = params(&cfg, 1);
        let short = param_count(&p, &cfg, Variant::Short).unwrap();
        let full = param_count(&p, &cfg, Variant::Canonical).unwrap();
        assert!(short < full, "{short} vs {full}");
    }

    #[test]
    fn classify_examples() {
        let cfg = small();
        let mut p = params(&cfg, 2);
        let f = features(3, 6);
        let probs = classify(&f, &p, &cfg).unwrap();
        assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        let want = crate::autodiff::softmax_slice(&layer(&p, "classifier", &oracle_base(&p, &f, 3)));
        for (a, b) in probs.iter().zip(&want) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }

        p.insert("classifier.weight", Tensor::zeros(&[4, 4]));
        let u = classify(&f, &p, &cfg).unwrap();
        for v in u {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
        p.insert("classifier.bias", Tensor::vector(vec![0.0, 500.0, 0.0, 0.0]));
        let d = classify(&f, &p, &cfg).unwrap();
        assert!(d[1] > 1.0 - 1e-12);
    }

    #[test]
    fn zero_lstm_gives_zero_state() {
        let cfg = small();
        let mut p = params(&cfg, 1);
        for (name, t) in p.iter_mut() {
            if name.starts_with("lstm.") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        assert_eq!(text_encode(&[1, 2, 3], &p, &cfg).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn single_token_matches_hand_unrolled_step() {
        let cfg = small();
        let p = params(&cfg, 11);
        let tok = 7;
        let e = cfg.token_embed_dim;
        let x = p.get("text.token_table").unwrap().data()[tok * e..(tok + 1) * e].to_vec();
        let gate = |n: &str| -> Vec<f64> {
            // h0 = 0 so the recurrent term vanishes
            mv(p.get(&format!("lstm.w_{n}")).unwrap(), &x)
                .iter()
                .zip(p.get(&format!("lstm.b_{n}")).unwrap().data())
                .map(|(a, b)| a + b)
                .collect()
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (i, o, c) = (gate("i"), gate("o"), gate("c"));
        let want: Vec<f64> = (0..4)
            .map(|k| {
                let cell = sig(i[k]) * c[k].tanh();
                sig(o[k]) * cell.tanh()
            })
            .collect();
        let got = text_encode(&[tok], &p, &cfg).unwrap();
        for (a, b) in got.iter().zip(&want) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn lstm_is_order_sensitive_and_validates_tokens() {
        let cfg = small();
        let p = params(&cfg, 12);
        let ab = text_encode(&[2, 5], &p, &cfg).unwrap();
        let ba = text_encode(&[5, 2], &p, &cfg).unwrap();
        assert_ne!(ab, ba);
        assert!(matches!(text_encode(&[], &p, &cfg), Err(Error::Input(_))));
        assert!(matches!(text_encode(&[10], &p, &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn projection_examples() {
        let cfg = ModelConfig { joint_dim: 4, ..small() };
        let mut p = params(&cfg, 13);
        let x = vec![0.5, -1.0, 2.0, 0.25];
        let want = mv(p.get("joint.visual").unwrap(), &x);
        assert_eq!(project_joint(&x, JointSide::Visual, &p).unwrap(), want);
        p.insert("joint.visual", Tensor::zeros(&[4, 4]));
        assert_eq!(project_joint(&x, JointSide::Visual, &p).unwrap(), vec![0.0; 4]);
        let mut id = vec![0.0; 16];
        for i in 0..4 {
            id[i * 5] = 1.0;
        }
        p.insert("joint.text", Tensor::matrix(4, 4, id).unwrap());
        assert_eq!(project_joint(&x, JointSide::Text, &p).unwrap(), x);
        assert!(matches!(project_joint(&x[..3], JointSide::Text, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn embed_and_classify_share_the_base() {
        let cfg = small();
        let p = params(&cfg, 14);
        let f = features(15, 6);
        let (e0, c0) = (embed(&f, &p, &cfg).unwrap(), classify(&f, &p, &cfg).unwrap());
        let mut q = p.clone();
        q.get_mut("base.1.weight").unwrap().data_mut()[3] += 0.1;
        assert_ne!(embed(&f, &q, &cfg).unwrap(), e0);
        assert_ne!(classify(&f, &q, &cfg).unwrap(), c0);
    }

    #[test]
    fn outputs_finite_for_bounded_inputs() {
        let cfg = small();
        for seed in 0..20 {
            let p = params(&cfg, seed);
            let f: Vec<f64> = features(seed + 100, 6).iter().map(|v| v * 10.0).collect();
            assert!(embed(&f, &p, &cfg).unwrap().iter().all(|v| v.is_finite()));
            let c = classify(&f, &p, &cfg).unwrap();
            assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(joint_text(&[1, 2], &p, &cfg).unwrap().iter().all(|v| v.is_finite()));
        }
    }
}
