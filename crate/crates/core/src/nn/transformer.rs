//! Pre-norm encoder-decoder transformer with sinusoidal positions, GELU
//! feed-forward layers and output logits tied to the embedding table.

use serde::{Deserialize, Serialize};

use super::{Graph, Init, ParameterSet, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub max_input_len: usize,
    pub max_output_len: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers_enc", self.n_layers_enc),
            ("n_layers_dec", self.n_layers_dec),
            ("max_input_len", self.max_input_len),
            ("max_output_len", self.max_output_len),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }
}

pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut out = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * rate;
            out[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(len, d, out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transformer {
    pub config: ModelConfig,
    pub params: ParameterSet,
}

fn init_attention(p: &mut ParameterSet, prefix: &str, d: usize) {
    for w in ["wq", "wk", "wv", "wo"] {
        p.init(&format!("{prefix}.{w}"), &[d, d], Init::Xavier);
    }
}

fn init_ffn(p: &mut ParameterSet, prefix: &str, d: usize, d_ff: usize) {
    p.init(&format!("{prefix}.w1"), &[d, d_ff], Init::Xavier);
    p.init(&format!("{prefix}.b1"), &[d_ff], Init::Zeros);
    p.init(&format!("{prefix}.w2"), &[d_ff, d], Init::Xavier);
    p.init(&format!("{prefix}.b2"), &[d], Init::Zeros);
}

fn init_norm(p: &mut ParameterSet, prefix: &str, d: usize) {
    p.init(&format!("{prefix}.g"), &[d], Init::Ones);
    p.init(&format!("{prefix}.b"), &[d], Init::Zeros);
}

impl Transformer {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut p = ParameterSet::new(seed);
        p.init("embed", &[config.vocab_size, d], Init::Uniform(0.5 * (3.0 / d as f64).sqrt()));
        for i in 0..config.n_layers_enc {
            init_norm(&mut p, &format!("enc.{i}.ln1"), d);
            init_attention(&mut p, &format!("enc.{i}.attn"), d);
            init_norm(&mut p, &format!("enc.{i}.ln2"), d);
            init_ffn(&mut p, &format!("enc.{i}.ffn"), d, config.d_ff());
        }
        init_norm(&mut p, "enc.ln", d);
        for i in 0..config.n_layers_dec {
            init_norm(&mut p, &format!("dec.{i}.ln1"), d);
            init_attention(&mut p, &format!("dec.{i}.self"), d);
            init_norm(&mut p, &format!("dec.{i}.ln2"), d);
            init_attention(&mut p, &format!("dec.{i}.cross"), d);
            init_norm(&mut p, &format!("dec.{i}.ln3"), d);
            init_ffn(&mut p, &format!("dec.{i}.ffn"), d, config.d_ff());
        }
        init_norm(&mut p, "dec.ln", d);
        Ok(Self { config, params: p })
    }

    /// Rebuilds a model from loaded parameters, checking every tensor shape.
    pub fn from_params(config: ModelConfig, params: ParameterSet) -> Result<Self> {
        let reference = Self::new(config.clone(), params.seed)?;
        for (name, t) in reference.params.iter() {
            let got = params.require(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Tensor {
                    tensor: name.clone(),
                    message: format!("shape {:?}, expected {:?}", got.shape(), t.shape()),
                });
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors, expected {}",
                params.len(),
                reference.params.len()
            )));
        }
        Ok(Self { config, params })
    }

    /// Token embeddings scaled by sqrt(d) plus positions.
    pub fn embed(&self, g: &mut Graph, params: &ParameterSet, ids: &[usize]) -> Result<Var> {
        let table = g.param(params, "embed")?;
        let e = g.gather(table, ids)?;
        let e = g.scale(e, (self.config.d_model as f64).sqrt());
        let pe = g.constant(sinusoidal_positions(ids.len(), self.config.d_model));
        g.add(e, pe)
    }

    fn norm(&self, g: &mut Graph, params: &ParameterSet, prefix: &str, x: Var) -> Result<Var> {
        let gamma = g.param(params, &format!("{prefix}.g"))?;
        let beta = g.param(params, &format!("{prefix}.b"))?;
        g.layer_norm(x, gamma, beta)
    }

    fn attention(
        &self,
        g: &mut Graph,
        params: &ParameterSet,
        prefix: &str,
        x: Var,
        memory: Var,
        causal: bool,
    ) -> Result<Var> {
        let d = self.config.d_model;
        let h = self.config.n_heads;
        let dh = d / h;
        let wq = g.param(params, &format!("{prefix}.wq"))?;
        let wk = g.param(params, &format!("{prefix}.wk"))?;
        let wv = g.param(params, &format!("{prefix}.wv"))?;
        let wo = g.param(params, &format!("{prefix}.wo"))?;
        let q = g.matmul(x, wq)?;
        let k = g.matmul(memory, wk)?;
        let v = g.matmul(memory, wv)?;
        let mut heads = Vec::with_capacity(h);
        for head in 0..h {
            let qh = g.slice_cols(q, head * dh, dh)?;
            let kh = g.slice_cols(k, head * dh, dh)?;
            let vh = g.slice_cols(v, head * dh, dh)?;
            let scores = g.matmul_bt(qh, kh)?;
            let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let probs = g.softmax(scores, causal);
            heads.push(g.matmul(probs, vh)?);
        }
        let cat = if h == 1 { heads[0] } else { g.concat_cols(&heads)? };
        g.matmul(cat, wo)
    }

    fn ffn(&self, g: &mut Graph, params: &ParameterSet, prefix: &str, x: Var) -> Result<Var> {
        let w1 = g.param(params, &format!("{prefix}.w1"))?;
        let b1 = g.param(params, &format!("{prefix}.b1"))?;
        let w2 = g.param(params, &format!("{prefix}.w2"))?;
        let b2 = g.param(params, &format!("{prefix}.b2"))?;
        let hdn = g.matmul(x, w1)?;
        let hdn = g.add_row(hdn, b1)?;
        let hdn = g.gelu(hdn);
        let out = g.matmul(hdn, w2)?;
        g.add_row(out, b2)
    }

    /// Encoder states, one row per input token.
    pub fn encode_with(&self, g: &mut Graph, params: &ParameterSet, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Invalid("empty encoder input".into()));
        }
        let mut x = self.embed(g, params, ids)?;
        for i in 0..self.config.n_layers_enc {
            let n = self.norm(g, params, &format!("enc.{i}.ln1"), x)?;
            let a = self.attention(g, params, &format!("enc.{i}.attn"), n, n, false)?;
            x = g.add(x, a)?;
            let n = self.norm(g, params, &format!("enc.{i}.ln2"), x)?;
            let f = self.ffn(g, params, &format!("enc.{i}.ffn"), n)?;
            x = g.add(x, f)?;
        }
        self.norm(g, params, "enc.ln", x)
    }

    /// Decoder logits (`len(ids) x vocab`) with cross-attention to `memory`.
    pub fn decode_with(&self, g: &mut Graph, params: &ParameterSet, memory: Var, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Invalid("empty decoder input".into()));
        }
        let mut x = self.embed(g, params, ids)?;
        for i in 0..self.config.n_layers_dec {
            let n = self.norm(g, params, &format!("dec.{i}.ln1"), x)?;
            let a = self.attention(g, params, &format!("dec.{i}.self"), n, n, true)?;
            x = g.add(x, a)?;
            let n = self.norm(g, params, &format!("dec.{i}.ln2"), x)?;
            let c = self.attention(g, params, &format!("dec.{i}.cross"), n, memory, false)?;
            x = g.add(x, c)?;
            let n = self.norm(g, params, &format!("dec.{i}.ln3"), x)?;
            let f = self.ffn(g, params, &format!("dec.{i}.ffn"), n)?;
            x = g.add(x, f)?;
        }
        let h = self.norm(g, params, "dec.ln", x)?;
        let table = g.param(params, "embed")?;
        g.matmul_bt(h, table)
    }

    pub fn encode(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        self.encode_with(g, &self.params, ids)
    }

    pub fn decode(&self, g: &mut Graph, memory: Var, ids: &[usize]) -> Result<Var> {
        self.decode_with(g, &self.params, memory, ids)
    }
}
