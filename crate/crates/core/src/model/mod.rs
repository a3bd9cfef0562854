//! Small encoder for extractive question answering.
//!
//! Inputs are `[CLS] question [SEP] context [SEP]` token ids. Each layer is
//! post-norm: `LN(x + Attn(x))` followed by `LN(h + FFN(h))`, where the FFN
//! is either dense or a switch layer of routed experts. An optional
//! mixture-of-experts head sits on the final hidden states, and a linear span
//! head emits start/end logits. Position 0 (`[CLS]`) doubles as the
//! no-answer sentinel.
//!
//! A batch is packed into one `[sum(T), d]` matrix. Attention runs per
//! sequence; switch routing sees every token in the batch, so expert
//! capacity is shared across the batch.

mod features;
mod span;
mod tokenizer;

pub use features::{featurize, Feature};
pub use span::{
    predict_span, predict_span_within, qa_loss, span_head, SpanPrediction, DEFAULT_MAX_ANSWER_LEN,
};
pub use tokenizer::{tokenize, Token, Vocab, CLS, SEP, UNK};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, concat_rows, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::rng::SeededRng;
use crate::routing::{
    init_expert, init_gate, moe_head_forward, switch_ffn_forward, ExpertFfn, ExpertLoadStats,
    HeadOutput, MoEConfig,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnKind {
    #[default]
    Dense,
    Switch,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    #[default]
    Sinusoidal,
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// 0 means "size of the vocabulary built from the training data".
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub max_seq_len: usize,
    /// One entry per layer; empty means every layer is dense.
    pub ffn_kinds: Vec<FfnKind>,
    /// Routing settings for switch layers.
    pub switch: Option<MoEConfig>,
    pub moe_head: Option<MoEConfig>,
    pub positional: Positional,
    pub dropout: f64,
    pub init_std: f64,
    pub max_answer_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_hidden: 128,
            max_seq_len: 64,
            ffn_kinds: Vec::new(),
            switch: None,
            moe_head: None,
            positional: Positional::Sinusoidal,
            dropout: 0.0,
            init_std: 0.02,
            max_answer_len: DEFAULT_MAX_ANSWER_LEN,
        }
    }
}

impl ModelConfig {
    pub fn ffn_kind(&self, layer: usize) -> FfnKind {
        self.ffn_kinds.get(layer).copied().unwrap_or_default()
    }

    pub fn has_switch_layers(&self) -> bool {
        self.ffn_kinds.contains(&FfnKind::Switch)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_hidden", self.ffn_hidden),
            ("max_seq_len", self.max_seq_len),
            ("max_answer_len", self.max_answer_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model ({}) must be divisible by n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if !self.ffn_kinds.is_empty() && self.ffn_kinds.len() != self.n_layers {
            return Err(Error::config(format!(
                "ffn_kinds lists {} layers but n_layers is {}",
                self.ffn_kinds.len(),
                self.n_layers
            )));
        }
        match (&self.switch, self.has_switch_layers()) {
            (None, true) => {
                return Err(Error::config("switch layers requested without a [switch] section"))
            }
            // switch routing is top-1 whatever `k` says
            (Some(s), _) => MoEConfig { k: 1, ..s.clone() }.validate()?,
            _ => {}
        }
        if let Some(h) = &self.moe_head {
            h.validate()?;
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::config("init_std must be positive"));
        }
        Ok(())
    }
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(...)`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for j in 0..d {
            let rate = 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::matrix(len, d, data).expect("shape matches")
}

/// Random streams used only while training.
#[derive(Clone, Debug)]
pub struct TrainRngs {
    pub dropout: SeededRng,
    pub noise: SeededRng,
}

impl TrainRngs {
    pub fn new(seed: u64) -> Self {
        TrainRngs {
            dropout: SeededRng::substream(seed, "dropout"),
            noise: SeededRng::substream(seed, "routing-noise"),
        }
    }
}

/// Load statistics of one routed layer for one batch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerRouting {
    pub layer: String,
    pub stats: ExpertLoadStats,
    pub aux_loss: f64,
}

pub struct EncoderOutput<'t> {
    /// Packed hidden states `[sum(T), d]`.
    pub hidden: Var<'t>,
    pub lengths: Vec<usize>,
    pub aux_losses: Vec<Var<'t>>,
    pub routing: Vec<LayerRouting>,
}

pub struct ForwardOutput<'t> {
    /// Per-sequence `[T]` start logits.
    pub start_logits: Vec<Var<'t>>,
    pub end_logits: Vec<Var<'t>>,
    pub aux_losses: Vec<Var<'t>>,
    pub routing: Vec<LayerRouting>,
}

#[derive(Clone, Debug)]
pub struct QaModel {
    config: ModelConfig,
    positions: Tensor,
}

impl QaModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let positions = sinusoidal_positions(config.max_seq_len, config.d_model);
        Ok(QaModel { config, positions })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Fresh parameters. Weights are `N(0, init_std^2)`, biases zero, layer
    /// norms identity. The span projection starts at zero so initial logits
    /// are uniform.
    pub fn init_params(&self, rng: &mut impl Rng) -> ParamStore {
        let c = &self.config;
        let (d, std) = (c.d_model, c.init_std);
        let mut p = ParamStore::new();
        let ln = |p: &mut ParamStore, prefix: &str| {
            p.insert(format!("{prefix}.gain"), Tensor::ones(&[d]));
            p.insert(format!("{prefix}.bias"), Tensor::zeros(&[d]));
        };
        p.insert("embed.tokens", Tensor::randn(&[c.vocab_size, d], std, rng));
        if c.positional == Positional::Learned {
            p.insert("embed.positions", Tensor::randn(&[c.max_seq_len, d], std, rng));
        }
        ln(&mut p, "embed.ln");
        for l in 0..c.n_layers {
            let attn = format!("layers.{l}.attn");
            for w in ["q", "k", "v", "o"] {
                p.insert(format!("{attn}.w{w}"), Tensor::randn(&[d, d], std, rng));
                p.insert(format!("{attn}.b{w}"), Tensor::zeros(&[d]));
            }
            ln(&mut p, &format!("layers.{l}.ln1"));
            let ffn = format!("layers.{l}.ffn");
            match (c.ffn_kind(l), &c.switch) {
                (FfnKind::Switch, Some(s)) => {
                    init_gate(&mut p, &ffn, d, s.n_experts, std, rng);
                    for i in 0..s.n_experts {
                        let e = format!("{ffn}.experts.{i}");
                        init_expert(&mut p, &e, (d, s.expert_hidden, d), std, rng);
                    }
                }
                _ => init_expert(&mut p, &ffn, (d, c.ffn_hidden, d), std, rng),
            }
            ln(&mut p, &format!("layers.{l}.ln2"));
        }
        let head_out = match &c.moe_head {
            Some(h) => {
                init_gate(&mut p, "head", d, h.n_experts, std, rng);
                let out = match h.head_output {
                    HeadOutput::Hidden => d,
                    HeadOutput::SpanLogits => 2,
                };
                for i in 0..h.n_experts {
                    let e = format!("head.experts.{i}");
                    init_expert(&mut p, &e, (d, h.expert_hidden, out), std, rng);
                    if out == 2 {
                        p.insert(format!("{e}.w2"), Tensor::zeros(&[h.expert_hidden, 2]));
                    }
                }
                h.head_output
            }
            None => HeadOutput::Hidden,
        };
        if head_out == HeadOutput::Hidden {
            p.insert("span.w", Tensor::zeros(&[d, 2]));
            p.insert("span.b", Tensor::zeros(&[2]));
        }
        p
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::contract("cannot encode an empty sequence"));
        }
        if ids.len() > self.config.max_seq_len {
            return Err(Error::contract(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                ids.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::Vocabulary {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn dropout<'t>(&self, x: Var<'t>, rngs: Option<&mut TrainRngs>) -> Result<Var<'t>> {
        let rate = self.config.dropout;
        match rngs {
            Some(r) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let mut mask = Tensor::zeros(&x.shape());
                for v in mask.data_mut() {
                    if r.dropout.random::<f64>() < keep {
                        *v = 1.0 / keep;
                    }
                }
                x.mul(x.tape().constant(mask))
            }
            _ => Ok(x),
        }
    }

    fn attention<'t>(&self, x: Var<'t>, lengths: &[usize], p: &Bound<'t>, l: usize) -> Result<Var<'t>> {
        let prefix = format!("layers.{l}.attn");
        let proj = |w: &str| -> Result<Var<'t>> {
            x.matmul(p.get(&format!("{prefix}.w{w}"))?)?
                .add_bias(p.get(&format!("{prefix}.b{w}"))?)
        };
        let (q, k, v) = (proj("q")?, proj("k")?, proj("v")?);
        let heads = self.config.n_heads;
        let dh = self.config.d_model / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut seqs = Vec::with_capacity(lengths.len());
        let mut offset = 0;
        for &t in lengths {
            let (qs, ks, vs) = (q.slice_rows(offset, t)?, k.slice_rows(offset, t)?, v.slice_rows(offset, t)?);
            let mut outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = qs.slice_cols(h * dh, dh)?;
                let kh = ks.slice_cols(h * dh, dh)?;
                let vh = vs.slice_cols(h * dh, dh)?;
                let weights = qh.matmul(kh.transpose()?)?.scale(scale).softmax(1)?;
                outs.push(weights.matmul(vh)?);
            }
            seqs.push(concat_cols(&outs)?);
            offset += t;
        }
        concat_rows(&seqs)?
            .matmul(p.get(&format!("{prefix}.wo"))?)?
            .add_bias(p.get(&format!("{prefix}.bo"))?)
    }

    fn layer_norm<'t>(x: Var<'t>, p: &Bound<'t>, prefix: &str) -> Result<Var<'t>> {
        x.layer_norm(p.get(&format!("{prefix}.gain"))?, p.get(&format!("{prefix}.bias"))?)
    }

    /// Runs the encoder over a batch of id sequences. Pass `rngs` while
    /// training to enable dropout and routing noise.
    pub fn encode_batch<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        batch: &[&[usize]],
        mut rngs: Option<&mut TrainRngs>,
    ) -> Result<EncoderOutput<'t>> {
        if batch.is_empty() {
            return Err(Error::contract("cannot encode an empty batch"));
        }
        for ids in batch {
            self.check_ids(ids)?;
        }
        let c = &self.config;
        let lengths: Vec<usize> = batch.iter().map(|s| s.len()).collect();
        let flat: Vec<usize> = batch.iter().flat_map(|s| s.iter().copied()).collect();
        let tokens = p.get("embed.tokens")?.embed(&flat)?;
        let position_ids: Vec<usize> = lengths.iter().flat_map(|&t| 0..t).collect();
        let positions = match c.positional {
            Positional::Learned => p.get("embed.positions")?.embed(&position_ids)?,
            Positional::Sinusoidal => {
                let mut data = Vec::with_capacity(flat.len() * c.d_model);
                for &i in &position_ids {
                    data.extend_from_slice(self.positions.row(i));
                }
                tape.constant(Tensor::matrix(flat.len(), c.d_model, data)?)
            }
        };
        let mut x = Self::layer_norm(tokens.add(positions)?, p, "embed.ln")?;

        let mut aux_losses = Vec::new();
        let mut routing = Vec::new();
        for l in 0..c.n_layers {
            let attn = self.attention(x, &lengths, p, l)?;
            let attn = self.dropout(attn, rngs.as_deref_mut())?;
            let h = Self::layer_norm(x.add(attn)?, p, &format!("layers.{l}.ln1"))?;
            let prefix = format!("layers.{l}.ffn");
            let ffn = match (c.ffn_kind(l), &c.switch) {
                (FfnKind::Switch, Some(s)) => {
                    let noise = rngs.as_deref_mut().map(|r| &mut r.noise);
                    let out = switch_ffn_forward(h, s, &prefix, p, noise)?;
                    routing.push(LayerRouting {
                        layer: prefix,
                        stats: out.stats,
                        aux_loss: out.aux_loss.item(),
                    });
                    aux_losses.push(out.aux_loss);
                    out.y
                }
                _ => ExpertFfn::new(prefix).forward(h, p)?,
            };
            let ffn = self.dropout(ffn, rngs.as_deref_mut())?;
            x = Self::layer_norm(h.add(ffn)?, p, &format!("layers.{l}.ln2"))?;
        }
        Ok(EncoderOutput {
            hidden: x,
            lengths,
            aux_losses,
            routing,
        })
    }

    /// Encoder, optional mixture-of-experts head, and span head.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        batch: &[&[usize]],
        mut rngs: Option<&mut TrainRngs>,
    ) -> Result<ForwardOutput<'t>> {
        let enc = self.encode_batch(p, tape, batch, rngs.as_deref_mut())?;
        let mut aux_losses = enc.aux_losses;
        let mut routing = enc.routing;
        let logits = match &self.config.moe_head {
            Some(h) => {
                let noise = rngs.as_deref_mut().map(|r| &mut r.noise);
                let out = moe_head_forward(enc.hidden, h, "head", p, noise)?;
                routing.push(LayerRouting {
                    layer: "head".to_string(),
                    stats: out.stats,
                    aux_loss: out.aux_loss.item(),
                });
                aux_losses.push(out.aux_loss);
                match h.head_output {
                    HeadOutput::Hidden => span_logits(out.y, p)?,
                    HeadOutput::SpanLogits => out.y,
                }
            }
            None => span_logits(enc.hidden, p)?,
        };
        let mut start_logits = Vec::with_capacity(enc.lengths.len());
        let mut end_logits = Vec::with_capacity(enc.lengths.len());
        let mut offset = 0;
        for &t in &enc.lengths {
            let (s, e) = span::split_logits(logits.slice_rows(offset, t)?)?;
            start_logits.push(s);
            end_logits.push(e);
            offset += t;
        }
        Ok(ForwardOutput {
            start_logits,
            end_logits,
            aux_losses,
            routing,
        })
    }
}

fn span_logits<'t>(hidden: Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
    hidden
        .matmul(p.get("span.w")?)?
        .add_bias(p.get("span.b")?)
}

/// Final hidden states `[T, d_model]` for one sequence, without dropout.
pub fn encode(ids: &[usize], config: &ModelConfig, params: &ParamStore) -> Result<Tensor> {
    let model = QaModel::new(config.clone())?;
    let tape = Tape::new();
    let bound = params.bind(&tape);
    Ok(model.encode_batch(&bound, &tape, &[ids], None)?.hidden.value())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_start_with_sin_cos_of_zero() {
        let pe = sinusoidal_positions(3, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.at(1, 0) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.at(1, 2) - (0.01f64).sin()).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let ok = ModelConfig {
            vocab_size: 10,
            ..ModelConfig::default()
        };
        assert!(ok.validate().is_ok());
        let heads = ModelConfig {
            n_heads: 5,
            ..ok.clone()
        };
        assert!(heads.validate().is_err());
        let missing_switch = ModelConfig {
            ffn_kinds: vec![FfnKind::Switch, FfnKind::Dense],
            ..ok.clone()
        };
        assert!(missing_switch.validate().is_err());
        let wrong_len = ModelConfig {
            ffn_kinds: vec![FfnKind::Dense],
            ..ok
        };
        assert!(wrong_len.validate().is_err());
    }

    #[test]
    fn rejects_bad_ids() {
        let config = ModelConfig {
            vocab_size: 5,
            max_seq_len: 4,
            ..ModelConfig::default()
        };
        let model = QaModel::new(config.clone()).unwrap();
        let params = model.init_params(&mut SeededRng::new(1));
        assert!(matches!(
            encode(&[0, 7], &config, &params),
            Err(Error::Vocabulary { id: 7, vocab_size: 5 })
        ));
        assert!(matches!(encode(&[0; 5], &config, &params), Err(Error::Contract(_))));
        assert_eq!(encode(&[0, 1, 2], &config, &params).unwrap().shape(), &[3, 64]);
    }
}
