use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::FeatureImage;
use crate::autodiff::init::rng;
use crate::autodiff::{read_checkpoint, write_checkpoint, Bound, Graph, ParamStore, Scalar, Var};
use crate::chat::TokenSequence;
use crate::encoders::{Linear, TextConfig, TextEncoder, VisionConfig, VisionEncoder};
use crate::error::{invalid, Error, Result};

use super::{
    concat_head, crossmodal_attention, crossmodal_head, gmu_fuse, ConcatHead, CrossAttnParams,
    GmuParams, NUM_CLASSES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionKind {
    Concat,
    Gmu,
    #[serde(rename = "crossattn")]
    CrossAttention,
}

impl FusionKind {
    pub const ALL: [FusionKind; 3] = [FusionKind::Concat, FusionKind::Gmu, FusionKind::CrossAttention];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Concat => "concat",
            FusionKind::Gmu => "gmu",
            FusionKind::CrossAttention => "crossattn",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "concat" => Ok(FusionKind::Concat),
            "gmu" => Ok(FusionKind::Gmu),
            "cross-attention" | "crossattention" | "cross_attention" | "crossattn" => {
                Ok(FusionKind::CrossAttention)
            }
            other => Err(invalid(format!("unknown fusion kind {other:?}"))),
        }
    }
}

/// Shape of a full model. Both encoders must share a width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vision: VisionConfig,
    pub text: TextConfig,
    pub gmu_dim: usize,
    pub concat_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vision: VisionConfig::default(),
            text: TextConfig::default(),
            gmu_dim: 128,
            concat_hidden: 512,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.vision.validate()?;
        self.text.validate()?;
        if self.vision.encoder.width != self.text.encoder.width {
            return Err(invalid(format!(
                "text width {} differs from vision width {}",
                self.text.encoder.width, self.vision.encoder.width
            )));
        }
        if self.gmu_dim == 0 || self.concat_hidden == 0 {
            return Err(invalid("gmu_dim and concat_hidden must be positive"));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.vision.encoder.width
    }
}

#[derive(Debug, Clone)]
enum Head {
    Concat(ConcatHead),
    Gmu { gmu: GmuParams, out: Linear },
    CrossAttention { attn: CrossAttnParams, out: Linear },
}

/// Stored next to a checkpoint so it can be rebuilt without the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: FusionKind,
    pub config: ModelConfig,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelOutput {
    /// `[B × 2]`
    pub logits: Var,
    /// GMU gate `[B × k]`.
    pub gate: Option<Var>,
    /// Crossmodal score matrices: vision-attends-text and text-attends-vision.
    pub scores: Option<(Var, Var)>,
}

/// Two encoders plus one fusion head, with all weights in one store.
#[derive(Debug, Clone)]
pub struct FusionModel<T: Scalar> {
    pub kind: FusionKind,
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    vision: VisionEncoder,
    text: TextEncoder,
    head: Head,
}

impl<T: Scalar> FusionModel<T> {
    pub fn new(kind: FusionKind, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng(seed);
        let mut params = ParamStore::new();
        let vision = VisionEncoder::register(config.vision, &mut params, &mut rng, "vision")?;
        let text = TextEncoder::register(config.text, &mut params, &mut rng, "text")?;
        let d = config.width();
        let head = match kind {
            FusionKind::Concat => {
                Head::Concat(ConcatHead::register(&mut params, &mut rng, d, config.concat_hidden)?)
            }
            FusionKind::Gmu => {
                let gmu = GmuParams::register(&mut params, &mut rng, d, config.gmu_dim)?;
                let out =
                    Linear::register(&mut params, &mut rng, "head.out", config.gmu_dim, NUM_CLASSES, true)?;
                Head::Gmu { gmu, out }
            }
            FusionKind::CrossAttention => {
                let attn = CrossAttnParams::register(&mut params, &mut rng, d)?;
                let out = Linear::register(&mut params, &mut rng, "head.out", d, NUM_CLASSES, true)?;
                Head::CrossAttention { attn, out }
            }
        };
        Ok(Self {
            kind,
            config,
            params,
            vision,
            text,
            head,
        })
    }

    pub fn meta(&self) -> ModelMeta {
        ModelMeta {
            kind: self.kind,
            config: self.config,
        }
    }

    /// Bind the parameters into `g` and run the forward pass.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        images: &[&FeatureImage],
        tokens: &[&TokenSequence],
    ) -> Result<(Bound, ModelOutput)> {
        let p = self.params.bind(g);
        let out = self.forward_bound(g, &p, images, tokens)?;
        Ok((p, out))
    }

    /// Forward pass with parameters already bound (by [`ParamStore::bind`]
    /// on `self.params`).
    pub fn forward_bound(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        images: &[&FeatureImage],
        tokens: &[&TokenSequence],
    ) -> Result<ModelOutput> {
        if images.len() != tokens.len() {
            return Err(invalid(format!(
                "{} images but {} token sequences",
                images.len(),
                tokens.len()
            )));
        }
        let v = self.vision.encode(g, p, images)?;
        let t = self.text.encode(g, p, tokens)?;
        match &self.head {
            Head::Concat(head) => Ok(ModelOutput {
                logits: concat_head(g, t.cls, v.cls, head, p)?,
                gate: None,
                scores: None,
            }),
            Head::Gmu { gmu, out } => {
                let fused = gmu_fuse(g, t.cls, v.cls, gmu, p)?;
                Ok(ModelOutput {
                    logits: out.forward(g, p, fused.h)?,
                    gate: Some(fused.z),
                    scores: None,
                })
            }
            Head::CrossAttention { attn, out } => {
                let a = crossmodal_attention(
                    g,
                    v.tokens,
                    t.tokens,
                    Some(&t.mask),
                    p[attn.query_a],
                    p[attn.key_b],
                    p[attn.value_b],
                )?;
                let b = crossmodal_attention(
                    g,
                    t.tokens,
                    v.tokens,
                    None,
                    p[attn.query_b],
                    p[attn.key_a],
                    p[attn.value_a],
                )?;
                Ok(ModelOutput {
                    logits: crossmodal_head(g, a.output, b.output, out, p)?,
                    gate: None,
                    scores: Some((a.scores, b.scores)),
                })
            }
        }
    }

    /// Class-1 probabilities and argmax predictions, no gradients kept.
    pub fn predict(
        &self,
        images: &[&FeatureImage],
        tokens: &[&TokenSequence],
    ) -> Result<Vec<(f64, usize)>> {
        let mut g = Graph::new();
        let (_, out) = self.forward(&mut g, images, tokens)?;
        let probs = g.softmax(out.logits, 1)?;
        Ok(g.value(probs)
            .data()
            .chunks(NUM_CLASSES)
            .map(|row| {
                let p1 = row[1].as_f64();
                (p1, usize::from(row[1] > row[0]))
            })
            .collect())
    }

    pub fn cast<U: Scalar>(&self) -> FusionModel<U> {
        FusionModel {
            kind: self.kind,
            config: self.config,
            params: self.params.cast(),
            vision: self.vision.clone(),
            text: self.text.clone(),
            head: self.head.clone(),
        }
    }

    /// Write weights to `path` and the model description to `<path>.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_checkpoint(&mut w, &self.params)?;
        w.flush()?;
        let meta = serde_json::to_string_pretty(&self.meta())?;
        std::fs::write(meta_path(path), meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_str(&std::fs::read_to_string(meta_path(path))?)?;
        let stored = read_checkpoint(BufReader::new(File::open(path)?))?;
        let mut model = FusionModel::<f32>::new(meta.kind, meta.config, 0)?;
        model.params.load_from(&stored)?;
        Ok(model.cast())
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}
