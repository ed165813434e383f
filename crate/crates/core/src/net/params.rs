use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::Tensor;
use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub latent_dim: usize,
    pub dropout: f64,
    pub max_decode_len: usize,
    /// Mix a pointer distribution over source tokens into every output step.
    pub copy_attention: bool,
}

impl ModelConfig {
    /// Desk-scale defaults for a given vocabulary.
    pub fn desk(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: 50,
            hidden_dim: 64,
            n_layers: 2,
            latent_dim: 32,
            dropout: 0.2,
            max_decode_len: 40,
            copy_attention: true,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("n_layers", self.n_layers),
            ("latent_dim", self.latent_dim),
            ("max_decode_len", self.max_decode_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(NetError::Config(format!("{name} must be ≥ 1")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NetError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Forward and backward encoder widths; together they make `hidden_dim`.
    pub fn encoder_split(&self) -> (usize, usize) {
        (self.hidden_dim - self.hidden_dim / 2, self.hidden_dim / 2)
    }

    /// Number of scalar parameters:
    ///
    /// ```text
    /// V·E                                   embedding
    /// Σ_l Σ_dir 4·h_dir·(d_l + h_dir + 1)   encoder, d_0 = E, d_l = H
    /// Σ_l 4H·(d_l + H + 1) + 4H·H           decoder, plus input feeding
    /// L·H·(H + Z + 1)                       initial-state projections
    /// H·H + H·(2H + 1) + V·(H + 1)          attention, combine, output
    /// 2H + 1                                copy gate (if enabled)
    /// Σ_l 4H·(d_l + H + 1) + 2·Z·(2H + 1)   recognition LSTM and heads
    /// ```
    pub fn param_count(&self) -> usize {
        layout(self).0.iter().map(|(_, r, c)| r * c).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmIds {
    pub w_x: usize,
    pub w_h: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadIds {
    pub w_a: usize,
    pub w_b: usize,
    pub b: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Ids {
    pub embed: usize,
    pub enc: Vec<(LstmIds, Option<LstmIds>)>,
    pub dec: Vec<LstmIds>,
    pub dec_feed: usize,
    pub init: Vec<HeadIds>,
    pub attn: usize,
    pub comb: HeadIds,
    pub out_w: usize,
    pub out_b: usize,
    pub gate: Option<HeadIds>,
    pub rec: Vec<LstmIds>,
    pub mu: HeadIds,
    pub log_var: HeadIds,
}

type Shapes = Vec<(String, usize, usize)>;

fn layout(cfg: &ModelConfig) -> (Shapes, Ids) {
    let (e, h, z, v) = (cfg.embed_dim, cfg.hidden_dim, cfg.latent_dim, cfg.vocab_size);
    let (hf, hb) = cfg.encoder_split();
    let mut shapes: Shapes = Vec::new();
    let mut add = |name: String, r: usize, c: usize| {
        shapes.push((name, r, c));
        shapes.len() - 1
    };
    let lstm = |add: &mut dyn FnMut(String, usize, usize) -> usize, prefix: String, input: usize, width: usize| LstmIds {
        w_x: add(format!("{prefix}.w_x"), 4 * width, input),
        w_h: add(format!("{prefix}.w_h"), 4 * width, width),
        b: add(format!("{prefix}.b"), 4 * width, 1),
    };
    let input_dim = |l: usize| if l == 0 { e } else { h };

    let embed = add("embed".into(), v, e);
    let mut enc = Vec::new();
    for l in 0..cfg.n_layers {
        let fwd = lstm(&mut add, format!("enc.{l}.fwd"), input_dim(l), hf);
        let bwd = (hb > 0).then(|| lstm(&mut add, format!("enc.{l}.bwd"), input_dim(l), hb));
        enc.push((fwd, bwd));
    }
    let mut dec = Vec::new();
    for l in 0..cfg.n_layers {
        dec.push(lstm(&mut add, format!("dec.{l}"), input_dim(l), h));
    }
    let dec_feed = add("dec.0.w_feed".into(), 4 * h, h);
    let mut init = Vec::new();
    for l in 0..cfg.n_layers {
        init.push(HeadIds {
            w_a: add(format!("init.{l}.w_v"), h, h),
            w_b: add(format!("init.{l}.w_z"), h, z),
            b: add(format!("init.{l}.b"), h, 1),
        });
    }
    let attn = add("attn.w".into(), h, h);
    let comb = HeadIds { w_a: add("comb.w_h".into(), h, h), w_b: add("comb.w_ctx".into(), h, h), b: add("comb.b".into(), h, 1) };
    let out_w = add("out.w".into(), v, h);
    let out_b = add("out.b".into(), v, 1);
    let gate = cfg.copy_attention.then(|| HeadIds {
        w_a: add("gate.w_h".into(), 1, h),
        w_b: add("gate.w_ctx".into(), 1, h),
        b: add("gate.b".into(), 1, 1),
    });
    let mut rec = Vec::new();
    for l in 0..cfg.n_layers {
        rec.push(lstm(&mut add, format!("rec.{l}"), input_dim(l), h));
    }
    let mu = HeadIds { w_a: add("rec.mu.w_y".into(), z, h), w_b: add("rec.mu.w_v".into(), z, h), b: add("rec.mu.b".into(), z, 1) };
    let log_var = HeadIds {
        w_a: add("rec.log_var.w_y".into(), z, h),
        w_b: add("rec.log_var.w_v".into(), z, h),
        b: add("rec.log_var.b".into(), z, 1),
    };
    let ids = Ids { embed, enc, dec, dec_feed, init, attn, comb, out_w, out_b, gate, rec, mu, log_var };
    (shapes, ids)
}

/// All trainable arrays of the model (θ for the decoder side, φ for the
/// recognition side), in a fixed order determined by the config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ModelParameters {
    pub fn zeros(config: ModelConfig) -> Result<ModelParameters, NetError> {
        config.validate()?;
        let (shapes, _) = layout(&config);
        let names = shapes.iter().map(|(n, _, _)| n.clone()).collect();
        let tensors = shapes.iter().map(|&(_, r, c)| Tensor::zeros(r, c)).collect();
        Ok(ModelParameters { config, names, tensors })
    }

    /// Uniform(±0.1) weights, zero biases, forget-gate biases at 1.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<ModelParameters, NetError> {
        let mut p = ModelParameters::zeros(config)?;
        let ids = p.ids();
        let lstm_biases: Vec<usize> = ids
            .enc
            .iter()
            .flat_map(|(f, b)| std::iter::once(f.b).chain(b.map(|b| b.b)))
            .chain(ids.dec.iter().chain(&ids.rec).map(|l| l.b))
            .collect();
        for (i, (name, t)) in p.names.iter().zip(&mut p.tensors).enumerate() {
            if lstm_biases.contains(&i) {
                let width = t.rows / 4;
                t.data[width..2 * width].iter_mut().for_each(|x| *x = 1.0);
            } else if !name.ends_with(".b") {
                t.data.iter_mut().for_each(|x| *x = rng.random_range(-0.1..0.1));
            }
        }
        Ok(p)
    }

    pub(crate) fn ids(&self) -> Ids {
        layout(&self.config).1
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flat_map(|t| &t.data).all(|x| x.is_finite())
    }

    /// Rebuilds parameters from named arrays, checking every shape against
    /// the config.
    pub fn from_named(config: ModelConfig, arrays: HashMap<String, Tensor>) -> Result<ModelParameters, NetError> {
        let mut p = ModelParameters::zeros(config)?;
        let mut arrays = arrays;
        for (name, slot) in p.names.iter().zip(&mut p.tensors) {
            let t = arrays.remove(name).ok_or_else(|| NetError::Shape(format!("missing array `{name}`")))?;
            if (t.rows, t.cols) != (slot.rows, slot.cols) {
                return Err(NetError::Shape(format!("array `{name}` is {}×{}, expected {}×{}", t.rows, t.cols, slot.rows, slot.cols)));
            }
            *slot = t;
        }
        if let Some(extra) = arrays.keys().next() {
            return Err(NetError::Shape(format!("unexpected array `{extra}`")));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn formula(c: &ModelConfig) -> usize {
        let (v, e, h, z, l) = (c.vocab_size, c.embed_dim, c.hidden_dim, c.latent_dim, c.n_layers);
        let (hf, hb) = (h - h / 2, h / 2);
        let d = |k: usize| if k == 0 { e } else { h };
        let mut n = v * e;
        for k in 0..l {
            n += 4 * hf * (d(k) + hf + 1) + 4 * hb * (d(k) + hb + 1);
            n += 4 * h * (d(k) + h + 1);
            n += 4 * h * (d(k) + h + 1);
        }
        n += 4 * h * h;
        n += l * h * (h + z + 1);
        n += h * h + h * (2 * h + 1) + v * (h + 1);
        if c.copy_attention {
            n += 2 * h + 1;
        }
        n + 2 * z * (2 * h + 1)
    }

    #[test]
    fn param_count_matches_formula() {
        for cfg in [
            ModelConfig::desk(140),
            ModelConfig { hidden_dim: 5, n_layers: 3, copy_attention: false, ..ModelConfig::desk(20) },
            ModelConfig { hidden_dim: 1, n_layers: 1, embed_dim: 1, latent_dim: 1, ..ModelConfig::desk(3) },
        ] {
            assert_eq!(cfg.param_count(), formula(&cfg), "{cfg:?}");
            assert_eq!(ModelParameters::zeros(cfg).unwrap().count(), formula(&cfg));
        }
        // Regression value for the desk config over the default vocabulary.
        assert_eq!(ModelConfig::desk(140).param_count(), formula(&ModelConfig::desk(140)));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ModelConfig { hidden_dim: 0, ..ModelConfig::desk(10) }.validate().is_err());
        assert!(ModelConfig { dropout: 1.0, ..ModelConfig::desk(10) }.validate().is_err());
        assert!(ModelConfig::desk(10).validate().is_ok());
    }

    #[test]
    fn init_is_seeded_and_sets_forget_bias() {
        let cfg = ModelConfig { embed_dim: 4, hidden_dim: 6, latent_dim: 3, ..ModelConfig::desk(12) };
        let a = ModelParameters::init(cfg, &mut rng::seeded(1)).unwrap();
        let b = ModelParameters::init(cfg, &mut rng::seeded(1)).unwrap();
        assert_eq!(a, b);
        let bias = a.get("dec.0.b").unwrap();
        assert_eq!(&bias.data[6..12], &[1.0; 6]);
        assert!(a.get("rec.mu.b").unwrap().data.iter().all(|&x| x == 0.0));
        assert!(a.get("embed").unwrap().data.iter().all(|x| x.abs() < 0.1));
    }

    #[test]
    fn from_named_checks_shapes() {
        let cfg = ModelConfig { embed_dim: 2, hidden_dim: 2, latent_dim: 2, ..ModelConfig::desk(5) };
        let p = ModelParameters::zeros(cfg).unwrap();
        let mut arrays: HashMap<_, _> = p.names.iter().cloned().zip(p.tensors.iter().cloned()).collect();
        assert_eq!(ModelParameters::from_named(cfg, arrays.clone()).unwrap(), p);
        arrays.insert("embed".into(), Tensor::zeros(1, 1));
        assert!(matches!(ModelParameters::from_named(cfg, arrays), Err(NetError::Shape(_))));
    }
}
