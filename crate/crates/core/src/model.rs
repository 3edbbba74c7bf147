use vhot_numerics::layers::{Embedding, LayerNorm, Linear, Lstm, SanmDecoderBlock, SanmEncoderBlock, TransformerBlock};
use vhot_numerics::{checkpoint, seeded_rng, Init, ParamId, ParamStore, Rng};

use crate::config::ModelConfig;
use crate::error::Result;

/// Parameter-name prefixes of the model's parts.
pub const ASR_PREFIX: &str = "asr.";
pub const VISION_PREFIX: &str = "vision.";
pub const VH_PREFIX: &str = "vh.";
pub const TEXT_PREFIX: &str = "text.";

#[derive(Clone, Debug)]
pub struct SpeechEncoder {
    pub input: Linear,
    pub blocks: Vec<SanmEncoderBlock>,
    pub ln_out: LayerNorm,
}

/// Per-frame firing-weight network of the CIF predictor.
#[derive(Clone, Debug)]
pub struct Predictor {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Clone, Debug)]
pub struct SpeechDecoder {
    pub blocks: Vec<SanmDecoderBlock>,
    pub ln_out: LayerNorm,
    pub out: Linear,
}

#[derive(Clone, Debug)]
pub struct VisionEncoder {
    pub patch: Linear,
    pub position: ParamId,
    pub cls: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub ln_out: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct VhStream {
    pub vision_adapter: Linear,
    pub speech_cls: ParamId,
    pub speech_adapter: TransformerBlock,
    pub encoder: Lstm,
    pub decoder_acoustic: SanmDecoderBlock,
    /// Separate block for the `H^D` branch when sharing is disabled.
    pub decoder_hidden: Option<SanmDecoderBlock>,
    pub out: Linear,
}

impl VhStream {
    pub fn decoder_for_hidden(&self) -> &SanmDecoderBlock {
        self.decoder_hidden.as_ref().unwrap_or(&self.decoder_acoustic)
    }
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub embed: Embedding,
    pub block: TransformerBlock,
    pub adapter: Linear,
}

/// The dual-stream recogniser: ASR stream, vision-hotword stream and the
/// text encoder used by M2, with all weights in one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub encoder: SpeechEncoder,
    pub predictor: Predictor,
    pub token_embed: Embedding,
    pub decoder: SpeechDecoder,
    pub vision: VisionEncoder,
    pub vh: VhStream,
    pub text: TextEncoder,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(seed);
        let mut ps = ParamStore::new();
        let d = cfg.d_model;
        let r = &mut rng;

        let encoder = SpeechEncoder {
            input: Linear::new(&mut ps, "asr.encoder.input", cfg.feat_dim, d, r),
            blocks: (0..cfg.encoder_layers)
                .map(|i| SanmEncoderBlock::new(&mut ps, &format!("asr.encoder.block{i}"), d, cfg.heads, cfg.fsmn_kernel, r))
                .collect(),
            ln_out: LayerNorm::new(&mut ps, "asr.encoder.ln_out", d, r),
        };
        let predictor = Predictor {
            hidden: Linear::new(&mut ps, "asr.predictor.hidden", d, d, r),
            out: Linear::new(&mut ps, "asr.predictor.out", d, 1, r),
        };
        let token_embed = Embedding::new(&mut ps, "asr.token_embed", cfg.vocab_size, d, r);
        let decoder = SpeechDecoder {
            blocks: (0..cfg.decoder_layers)
                .map(|i| SanmDecoderBlock::new(&mut ps, &format!("asr.decoder.block{i}"), d, cfg.heads, cfg.fsmn_kernel, r))
                .collect(),
            ln_out: LayerNorm::new(&mut ps, "asr.decoder.ln_out", d, r),
            out: Linear::new(&mut ps, "asr.decoder.out", d, cfg.vocab_size, r),
        };

        let vision = VisionEncoder {
            patch: Linear::new(&mut ps, "vision.patch", cfg.patch_len, d, r),
            position: ps.add("vision.position", &[cfg.hotwords(), d], Init::Normal { std: 0.02 }, r),
            cls: ps.add("vision.cls", &[1, d], Init::Normal { std: 0.02 }, r),
            blocks: (0..cfg.vision_layers)
                .map(|i| TransformerBlock::new(&mut ps, &format!("vision.block{i}"), d, cfg.heads, r))
                .collect(),
            ln_out: LayerNorm::new(&mut ps, "vision.ln_out", d, r),
        };
        let vh = VhStream {
            vision_adapter: Linear::new(&mut ps, "vh.vision_adapter", d, d, r),
            speech_cls: ps.add("vh.speech_cls", &[1, d], Init::Normal { std: 0.02 }, r),
            speech_adapter: TransformerBlock::new(&mut ps, "vh.speech_adapter", d, cfg.heads, r),
            encoder: Lstm::new(&mut ps, "vh.encoder", d, d, r),
            decoder_acoustic: SanmDecoderBlock::new(&mut ps, "vh.decoder", d, cfg.heads, cfg.fsmn_kernel, r),
            decoder_hidden: (!cfg.share_vh_decoder)
                .then(|| SanmDecoderBlock::new(&mut ps, "vh.decoder_hidden", d, cfg.heads, cfg.fsmn_kernel, r)),
            out: Linear::new(&mut ps, "vh.out", d, cfg.vocab_size, r),
        };
        let text = TextEncoder {
            embed: Embedding::new(&mut ps, "text.embed", cfg.vocab_size, d, r),
            block: TransformerBlock::new(&mut ps, "text.block", d, cfg.heads, r),
            adapter: Linear::new(&mut ps, "text.adapter", d, d, r),
        };
        if !cfg.train_vision {
            ps.set_trainable_prefix(VISION_PREFIX, false);
        }
        Ok(Self {
            cfg,
            store: ps,
            encoder,
            predictor,
            token_embed,
            decoder,
            vision,
            vh,
            text,
        })
    }

    /// Marks every parameter outside the ASR stream as fixed.
    pub fn freeze_vh(&mut self) {
        for prefix in [VISION_PREFIX, VH_PREFIX, TEXT_PREFIX] {
            self.store.set_trainable_prefix(prefix, false);
        }
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        checkpoint::encode(&checkpoint::store_entries(&self.store))
    }

    /// Overwrites all weights from checkpoint bytes; names and shapes must match.
    pub fn load_checkpoint_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let entries = checkpoint::decode(bytes)?;
        checkpoint::apply(&mut self.store, entries)?;
        Ok(())
    }
}

/// Fresh generator for sampler draws, derived from a run seed and a step.
pub fn step_rng(seed: u64, step: u64) -> Rng {
    seeded_rng(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
