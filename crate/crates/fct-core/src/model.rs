//! FCT model: patch-embedding stem, four hierarchical stages of
//! spatial/channel FCT blocks, 2x2 patch-merging transitions, pooled
//! classification head, parameter accounting and checkpoints.
//!
//! One shape table (`param_shapes`) is the single source of truth for
//! construction, analytic parameter counting and checkpoint layout.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attention::{CsaTrace, Normalizer};
use crate::autodiff::{ParamStore, Tape, VarId};
use crate::error::{FctError, Result};
use crate::io;
use crate::rng::Rng;
use crate::spectral::half_len;
use crate::tensor::RealTensor;

pub const LN_EPS: f64 = 1e-5;

/// Which axis a block's attention transforms over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    /// CSA over the flattened spatial token axis; channels mix in Q/K/V.
    Spatial,
    /// CSA over the channel axis; tokens mix in Q/K/V.
    Channel,
}

impl BlockKind {
    pub fn parse(c: char) -> Result<Self> {
        match c {
            's' => Ok(Self::Spatial),
            'c' => Ok(Self::Channel),
            other => Err(FctError::Config(format!("unknown block kind `{other}`"))),
        }
    }

    pub fn tag(self) -> char {
        match self {
            Self::Spatial => 's',
            Self::Channel => 'c',
        }
    }
}

/// Parse a layout string like "sscc" into per-stage kinds.
pub fn parse_kinds(s: &str) -> Result<[BlockKind; 4]> {
    let chars: Vec<char> = s.chars().collect();
    if chars.len() != 4 {
        return Err(FctError::Config(format!(
            "block layout needs 4 stage tags, got `{s}`"
        )));
    }
    Ok([
        BlockKind::parse(chars[0])?,
        BlockKind::parse(chars[1])?,
        BlockKind::parse(chars[2])?,
        BlockKind::parse(chars[3])?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FctConfig {
    pub name: String,
    /// Base channel width; doubles each later stage.
    pub c1: usize,
    pub depths: [usize; 4],
    pub block_kinds: [BlockKind; 4],
    pub mlp_ratio: usize,
    pub num_classes: usize,
    /// Square input side; the stem divides by 4, each transition by 2.
    pub input_size: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    /// Learnable absolute position embedding after the stem (ablation).
    #[serde(default)]
    pub ape: bool,
}

fn default_in_channels() -> usize {
    3
}

impl FctConfig {
    fn preset(name: &str, c1: usize, depths: [usize; 4]) -> Self {
        Self {
            name: name.to_string(),
            c1,
            depths,
            block_kinds: parse_kinds("sscc").expect("static layout"),
            mlp_ratio: 4,
            num_classes: 1000,
            input_size: 224,
            in_channels: 3,
            ape: false,
        }
    }

    pub fn tiny() -> Self {
        Self::preset("fct-t", 96, [3, 3, 6, 3])
    }

    pub fn small() -> Self {
        Self::preset("fct-s", 96, [3, 6, 12, 3])
    }

    pub fn base() -> Self {
        Self::preset("fct-b", 128, [3, 6, 12, 3])
    }

    pub fn large() -> Self {
        Self::preset("fct-l", 192, [3, 6, 12, 3])
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "tiny" | "fct-t" => Ok(Self::tiny()),
            "small" | "fct-s" => Ok(Self::small()),
            "base" | "fct-b" => Ok(Self::base()),
            "large" | "fct-l" => Ok(Self::large()),
            other => Err(FctError::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c1 == 0 || self.num_classes == 0 || self.mlp_ratio == 0 {
            return Err(FctError::Config("zero-sized config field".into()));
        }
        if self.input_size % 32 != 0 {
            return Err(FctError::Config(format!(
                "input_size {} must be divisible by 32 (stem /4, three merges /2)",
                self.input_size
            )));
        }
        for s in 0..4 {
            if self.depths[s] > 0 && self.stage_resolution(s) == 0 {
                return Err(FctError::Config(format!(
                    "stage {} has blocks but zero resolution",
                    s + 1
                )));
            }
            if self.depths[s] > 0
                && self.block_kinds[s] == BlockKind::Spatial
                && self.stage_tokens(s) < 2
            {
                return Err(FctError::Config(format!(
                    "spatial stage {} needs at least 2 tokens",
                    s + 1
                )));
            }
        }
        Ok(())
    }

    /// Channel width of stage s (0-based).
    pub fn stage_channels(&self, s: usize) -> usize {
        self.c1 << s
    }

    /// Side length of the token grid at stage s.
    pub fn stage_resolution(&self, s: usize) -> usize {
        (self.input_size / 4) >> s
    }

    pub fn stage_tokens(&self, s: usize) -> usize {
        let r = self.stage_resolution(s);
        r * r
    }

    /// Index of the deepest stage that has any blocks. Transitions are only
    /// emitted up to this stage, so a zero-depth config is stem + head only.
    pub fn last_active_stage(&self) -> Option<usize> {
        (0..4).rev().find(|&s| self.depths[s] > 0)
    }

    /// Channel width entering the classification head.
    pub fn head_channels(&self) -> usize {
        match self.last_active_stage() {
            Some(s) => self.stage_channels(s),
            None => self.c1,
        }
    }

    /// Transform-axis length (padded to a power of two) of a block at stage s.
    pub fn csa_axis(&self, s: usize) -> usize {
        match self.block_kinds[s] {
            BlockKind::Spatial => self.stage_tokens(s).next_power_of_two(),
            BlockKind::Channel => self.stage_channels(s).next_power_of_two(),
        }
    }

    /// Mixing dimension D of a block at stage s (rows of the CSA field).
    pub fn csa_dim(&self, s: usize) -> usize {
        match self.block_kinds[s] {
            BlockKind::Spatial => self.stage_channels(s),
            BlockKind::Channel => self.stage_tokens(s),
        }
    }
}

/// How a parameter should be initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamInit {
    /// Gaussian * 0.02.
    Weight,
    /// Zeros.
    Zero,
    /// Ones (LayerNorm gains).
    One,
    /// Constant 0.5 (scale position embedding).
    Half,
}

/// Every learnable tensor of the model in deterministic order:
/// (hierarchical name, init rule, shape).
pub fn param_shapes(config: &FctConfig) -> Vec<(String, ParamInit, Vec<usize>)> {
    let mut out = Vec::new();
    let patch_in = 16 * config.in_channels;
    out.push(("stem.weight".into(), ParamInit::Weight, vec![patch_in, config.c1]));
    out.push(("stem.bias".into(), ParamInit::Zero, vec![config.c1]));
    if config.ape {
        out.push((
            "ape".into(),
            ParamInit::Weight,
            vec![config.stage_tokens(0), config.c1],
        ));
    }
    let last = config.last_active_stage();
    for s in 0..4 {
        let c = config.stage_channels(s);
        let d = config.csa_dim(s);
        let l = half_len(config.csa_axis(s));
        let hidden = c * config.mlp_ratio;
        for b in 0..config.depths[s] {
            let p = format!("stage{}.block{}", s + 1, b);
            out.push((format!("{p}.ln1.gain"), ParamInit::One, vec![c]));
            out.push((format!("{p}.ln1.bias"), ParamInit::Zero, vec![c]));
            out.push((format!("{p}.csa.wq"), ParamInit::Weight, vec![d, d]));
            out.push((format!("{p}.csa.wk"), ParamInit::Weight, vec![d, d]));
            out.push((format!("{p}.csa.wv"), ParamInit::Weight, vec![d, d]));
            out.push((format!("{p}.csa.alpha"), ParamInit::Half, vec![l]));
            out.push((format!("{p}.ln2.gain"), ParamInit::One, vec![c]));
            out.push((format!("{p}.ln2.bias"), ParamInit::Zero, vec![c]));
            out.push((format!("{p}.mlp.fc1.weight"), ParamInit::Weight, vec![c, hidden]));
            out.push((format!("{p}.mlp.fc1.bias"), ParamInit::Zero, vec![hidden]));
            out.push((format!("{p}.mlp.fc2.weight"), ParamInit::Weight, vec![hidden, c]));
            out.push((format!("{p}.mlp.fc2.bias"), ParamInit::Zero, vec![c]));
        }
        // transition into stage s+1, only if a deeper stage is active
        if let Some(last) = last {
            if s + 1 <= last {
                out.push((
                    format!("transition{}.weight", s + 1),
                    ParamInit::Weight,
                    vec![4 * c, 2 * c],
                ));
                out.push((
                    format!("transition{}.bias", s + 1),
                    ParamInit::Zero,
                    vec![2 * c],
                ));
            }
        }
    }
    let hc = config.head_channels();
    out.push(("head.norm.gain".into(), ParamInit::One, vec![hc]));
    out.push(("head.norm.bias".into(), ParamInit::Zero, vec![hc]));
    out.push(("head.weight".into(), ParamInit::Weight, vec![hc, config.num_classes]));
    out.push(("head.bias".into(), ParamInit::Zero, vec![config.num_classes]));
    out
}

/// Exact learnable-scalar count of the model a config constructs.
pub fn count_params(config: &FctConfig) -> usize {
    param_shapes(config)
        .iter()
        .map(|(_, _, shape)| shape.iter().product::<usize>())
        .sum()
}

/// Build and initialize the full parameter set deterministically from a seed.
pub fn init_params(config: &FctConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    for (name, init, shape) in param_shapes(config) {
        let t = match init {
            ParamInit::Weight => RealTensor::from_fn(&shape, |_| rng.normal() * 0.02),
            ParamInit::Zero => RealTensor::zeros(&shape),
            ParamInit::One => RealTensor::full(&shape, 1.0),
            ParamInit::Half => RealTensor::full(&shape, 0.5),
        };
        store.insert(&name, t)?;
    }
    Ok(store)
}

/// Tape bindings for one block's parameters.
#[derive(Clone, Copy)]
pub struct BlockIds {
    pub ln1_gain: VarId,
    pub ln1_bias: VarId,
    pub wq: VarId,
    pub wk: VarId,
    pub wv: VarId,
    pub alpha: VarId,
    pub ln2_gain: VarId,
    pub ln2_bias: VarId,
    pub fc1_w: VarId,
    pub fc1_b: VarId,
    pub fc2_w: VarId,
    pub fc2_b: VarId,
}

/// Tape bindings for the whole model, shared across a batch.
pub struct ModelIds {
    pub stem_w: VarId,
    pub stem_b: VarId,
    pub ape: Option<VarId>,
    pub stages: Vec<Vec<BlockIds>>,
    pub transitions: Vec<(VarId, VarId)>,
    pub head_norm_gain: VarId,
    pub head_norm_bias: VarId,
    pub head_w: VarId,
    pub head_b: VarId,
}

pub fn bind_model(tape: &mut Tape, store: &ParamStore, config: &FctConfig) -> Result<ModelIds> {
    let bind = |tape: &mut Tape, name: &str| tape.param(store, name);
    let stem_w = bind(tape, "stem.weight")?;
    let stem_b = bind(tape, "stem.bias")?;
    let ape = if config.ape {
        Some(bind(tape, "ape")?)
    } else {
        None
    };
    let mut stages = Vec::new();
    for s in 0..4 {
        let mut blocks = Vec::new();
        for b in 0..config.depths[s] {
            let p = format!("stage{}.block{}", s + 1, b);
            blocks.push(BlockIds {
                ln1_gain: bind(tape, &format!("{p}.ln1.gain"))?,
                ln1_bias: bind(tape, &format!("{p}.ln1.bias"))?,
                wq: bind(tape, &format!("{p}.csa.wq"))?,
                wk: bind(tape, &format!("{p}.csa.wk"))?,
                wv: bind(tape, &format!("{p}.csa.wv"))?,
                alpha: bind(tape, &format!("{p}.csa.alpha"))?,
                ln2_gain: bind(tape, &format!("{p}.ln2.gain"))?,
                ln2_bias: bind(tape, &format!("{p}.ln2.bias"))?,
                fc1_w: bind(tape, &format!("{p}.mlp.fc1.weight"))?,
                fc1_b: bind(tape, &format!("{p}.mlp.fc1.bias"))?,
                fc2_w: bind(tape, &format!("{p}.mlp.fc2.weight"))?,
                fc2_b: bind(tape, &format!("{p}.mlp.fc2.bias"))?,
            });
        }
        stages.push(blocks);
    }
    let mut transitions = Vec::new();
    if let Some(last) = config.last_active_stage() {
        for s in 1..=last {
            transitions.push((
                bind(tape, &format!("transition{s}.weight"))?,
                bind(tape, &format!("transition{s}.bias"))?,
            ));
        }
    }
    Ok(ModelIds {
        stem_w,
        stem_b,
        ape,
        stages,
        transitions,
        head_norm_gain: bind(tape, "head.norm.gain")?,
        head_norm_bias: bind(tape, "head.norm.bias")?,
        head_w: bind(tape, "head.weight")?,
        head_b: bind(tape, "head.bias")?,
    })
}

/// Complex self-attention on the tape over x of shape [D x n] with n a power
/// of two. Mirrors `attention::csa_forward` op for op so the non-tape
/// implementation serves as its oracle.
pub fn csa_tape(
    tape: &mut Tape,
    x: VarId,
    wq: VarId,
    wk: VarId,
    wv: VarId,
    alpha: VarId,
    normalizer: Normalizer,
    trace: Option<&mut CsaTrace>,
) -> Result<VarId> {
    let n = tape.value(x).cols();
    if !n.is_power_of_two() {
        return Err(FctError::Size(format!(
            "csa requires a power-of-two transform axis (caller pads), got {n}"
        )));
    }
    let l = half_len(n);
    let spec = tape.dft(x)?;
    let xr = tape.slice_cols(spec, 0, l)?;
    let xi = tape.slice_cols(spec, l, l)?;
    let qr = tape.matmul(wq, xr)?;
    let qi = tape.matmul(wq, xi)?;
    let kr = tape.matmul(wk, xr)?;
    let ki = tape.matmul(wk, xi)?;
    let vr = tape.matmul(wv, xr)?;
    let vi = tape.matmul(wv, xi)?;

    let qrt = tape.transpose(qr);
    let qit = tape.transpose(qi);
    let map_r = tape.matmul(qrt, kr)?;
    let map_i = tape.matmul(qit, ki)?;
    let normalize = |tape: &mut Tape, m: VarId| match normalizer {
        Normalizer::Logmax => tape.logmax(m),
        Normalizer::Softmax => tape.softmax(m),
        Normalizer::Identity => m,
    };
    let attn_r = normalize(tape, map_r);
    let attn_i = normalize(tape, map_i);
    tape.check_finite(attn_r, "csa attn_r")?;
    tape.check_finite(attn_i, "csa attn_i")?;
    if let Some(t) = trace {
        t.attn_r = tape.value(attn_r).clone();
        t.attn_i = tape.value(attn_i).clone();
    }

    // alpha * a + (1 - alpha) * b with alpha broadcast over the key axis
    let neg_alpha = tape.scale(alpha, -1.0);
    let one_minus = tape.add_scalar(neg_alpha, 1.0);
    let blend = |tape: &mut Tape, a: VarId, b: VarId| -> Result<VarId> {
        let wa = tape.mul_row_vec(a, alpha)?;
        let wb = tape.mul_row_vec(b, one_minus)?;
        tape.add(wa, wb)
    };
    let fused_r = blend(tape, attn_r, attn_i)?;
    let fused_i = blend(tape, attn_i, attn_r)?;

    let frt = tape.transpose(fused_r);
    let fit = tape.transpose(fused_i);
    let out_r = tape.matmul(vr, frt)?;
    let out_i = tape.matmul(vi, fit)?;
    let packed = tape.concat_cols(out_r, out_i)?;
    tape.idft(packed, n)
}

fn affine_rows(tape: &mut Tape, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
    let y = tape.matmul(x, w)?;
    tape.add_row_vec(y, b)
}

/// One FCT block on tokens x of shape [N x C].
///
/// Spatial kind: LN1 -> transpose to [C x N] -> pad N to a power of two ->
/// CSA over the token axis -> unpad -> transpose -> residual. Channel kind
/// runs CSA directly over the (padded) channel axis. Both finish with
/// LN2 -> MLP(GELU) -> residual.
pub fn fct_block_forward(
    tape: &mut Tape,
    x: VarId,
    ids: &BlockIds,
    kind: BlockKind,
    normalizer: Normalizer,
    stage_name: &str,
    trace: Option<&mut CsaTrace>,
) -> Result<VarId> {
    let (n_tokens, c) = (tape.value(x).rows(), tape.value(x).cols());
    let h = tape.layer_norm(x, ids.ln1_gain, ids.ln1_bias, LN_EPS)?;
    let attn_out = match kind {
        BlockKind::Spatial => {
            let ht = tape.transpose(h);
            let padded_len = n_tokens.next_power_of_two();
            let hp = tape.pad_cols(ht, padded_len)?;
            let y = csa_tape(tape, hp, ids.wq, ids.wk, ids.wv, ids.alpha, normalizer, trace)?;
            let yu = tape.slice_cols(y, 0, n_tokens)?;
            tape.transpose(yu)
        }
        BlockKind::Channel => {
            let padded_len = c.next_power_of_two();
            let hp = tape.pad_cols(h, padded_len)?;
            let y = csa_tape(tape, hp, ids.wq, ids.wk, ids.wv, ids.alpha, normalizer, trace)?;
            tape.slice_cols(y, 0, c)?
        }
    };
    let y1 = tape.add(x, attn_out)?;
    tape.check_finite(y1, &format!("{stage_name} attention residual"))?;

    let h2 = tape.layer_norm(y1, ids.ln2_gain, ids.ln2_bias, LN_EPS)?;
    let f1 = affine_rows(tape, h2, ids.fc1_w, ids.fc1_b)?;
    let g = tape.gelu(f1);
    let f2 = affine_rows(tape, g, ids.fc2_w, ids.fc2_b)?;
    let y = tape.add(y1, f2)?;
    tape.check_finite(y, &format!("{stage_name} mlp residual"))?;
    Ok(y)
}

/// Flat indices that rearrange one image (pixel-major, `ic` interleaved
/// channels, side `s`) into rows of 4x4 patches, offset by `base`.
fn patch_indices(s: usize, ic: usize, base: usize) -> Vec<usize> {
    let r = s / 4;
    let mut idx = Vec::with_capacity(r * r * 16 * ic);
    for py in 0..r {
        for px in 0..r {
            for dy in 0..4 {
                for dx in 0..4 {
                    for c in 0..ic {
                        idx.push(base + ((py * 4 + dy) * s + (px * 4 + dx)) * ic + c);
                    }
                }
            }
        }
    }
    idx
}

/// Flat indices that merge a [res x res x C] token grid (tokens as rows)
/// into [res/2 * res/2] rows of 2x2-concatenated channels.
fn merge_indices(res: usize, c: usize) -> Vec<usize> {
    let half = res / 2;
    let mut idx = Vec::with_capacity(half * half * 4 * c);
    for qy in 0..half {
        for qx in 0..half {
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let tok = (qy * 2 + dy) * res + (qx * 2 + dx);
                for ch in 0..c {
                    idx.push(tok * c + ch);
                }
            }
        }
    }
    idx
}

/// Stem: non-overlapping 4x4 patch linear projection of one image row.
pub fn patch_embed(
    tape: &mut Tape,
    images: VarId,
    image_index: usize,
    config: &FctConfig,
    ids: &ModelIds,
) -> Result<VarId> {
    let s = config.input_size;
    if s % 4 != 0 {
        return Err(FctError::Size(format!("input side {s} not divisible by 4")));
    }
    let ic = config.in_channels;
    let base = image_index * s * s * ic;
    let idx = Arc::new(patch_indices(s, ic, base));
    let r = s / 4;
    let patches = tape.gather(images, idx, &[r * r, 16 * ic])?;
    affine_rows(tape, patches, ids.stem_w, ids.stem_b)
}

/// 2x2 patch merging: [res^2 x C] tokens -> [res^2/4 x 2C].
pub fn stage_transition(
    tape: &mut Tape,
    x: VarId,
    res: usize,
    w: VarId,
    b: VarId,
) -> Result<VarId> {
    if res % 2 != 0 {
        return Err(FctError::Size(format!("merge needs even resolution, got {res}")));
    }
    let c = tape.value(x).cols();
    let idx = Arc::new(merge_indices(res, c));
    let half = res / 2;
    let merged = tape.gather(x, idx, &[half * half, 4 * c])?;
    affine_rows(tape, merged, w, b)
}

/// Full classifier forward for a batch: images [B x S*S*ic] -> logits [B x K].
pub fn forward_classifier(
    tape: &mut Tape,
    images: VarId,
    batch: usize,
    config: &FctConfig,
    ids: &ModelIds,
    normalizer: Normalizer,
) -> Result<VarId> {
    forward_classifier_traced(tape, images, batch, config, ids, normalizer, None)
}

/// As `forward_classifier`, additionally capturing each block's normalized
/// attention maps for the first batch element (offline inspection).
pub fn forward_classifier_traced(
    tape: &mut Tape,
    images: VarId,
    batch: usize,
    config: &FctConfig,
    ids: &ModelIds,
    normalizer: Normalizer,
    mut captures: Option<&mut Vec<(String, CsaTrace)>>,
) -> Result<VarId> {
    config.validate()?;
    let expect = config.input_size * config.input_size * config.in_channels;
    if tape.value(images).shape() != [batch, expect] {
        return Err(FctError::DimMismatch {
            ctx: "forward_classifier images",
            left: tape.value(images).shape().to_vec(),
            right: vec![batch, expect],
        });
    }
    let last = config.last_active_stage();
    let mut logit_rows = Vec::with_capacity(batch);
    for img in 0..batch {
        let mut x = patch_embed(tape, images, img, config, ids)?;
        if let Some(ape) = ids.ape {
            x = tape.add(x, ape)?;
        }
        tape.check_finite(x, "stem")?;
        if let Some(last) = last {
            for s in 0..=last {
                let stage_name = format!("stage{}", s + 1);
                for (b, block) in ids.stages[s].iter().enumerate() {
                    let name = format!("{stage_name}.block{b}");
                    let capture_here = img == 0 && captures.is_some();
                    if capture_here {
                        let mut tr = CsaTrace {
                            attn_r: RealTensor::zeros(&[1]),
                            attn_i: RealTensor::zeros(&[1]),
                        };
                        x = fct_block_forward(
                            tape,
                            x,
                            block,
                            config.block_kinds[s],
                            normalizer,
                            &name,
                            Some(&mut tr),
                        )?;
                        captures
                            .as_deref_mut()
                            .expect("checked above")
                            .push((name, tr));
                    } else {
                        x = fct_block_forward(
                            tape,
                            x,
                            block,
                            config.block_kinds[s],
                            normalizer,
                            &name,
                            None,
                        )?;
                    }
                }
                if s < last {
                    let (w, b) = ids.transitions[s];
                    x = stage_transition(tape, x, config.stage_resolution(s), w, b)?;
                }
            }
        }
        let pooled = tape.mean_rows(x);
        let normed = tape.layer_norm(pooled, ids.head_norm_gain, ids.head_norm_bias, LN_EPS)?;
        let logits = affine_rows(tape, normed, ids.head_w, ids.head_b)?;
        tape.check_finite(logits, "head")?;
        logit_rows.push(logits);
    }
    tape.stack_rows(&logit_rows)
}

/// Checkpoint manifest: config, optimizer step, normalizer and the parameter
/// name -> file-stem map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: FctConfig,
    pub step: u64,
    pub normalizer: String,
    pub params: BTreeMap<String, String>,
}

/// Save parameters plus AdamW moments as FCTT files under `dir`.
pub fn save_checkpoint(
    dir: &Path,
    config: &FctConfig,
    store: &ParamStore,
    normalizer: Normalizer,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut params = BTreeMap::new();
    for (name, p) in store.iter() {
        let stem = name.clone();
        io::write_tensor(&dir.join(format!("{stem}.value.fctt")), &p.value)?;
        io::write_tensor(&dir.join(format!("{stem}.m.fctt")), &p.m)?;
        io::write_tensor(&dir.join(format!("{stem}.v.fctt")), &p.v)?;
        params.insert(name.clone(), stem);
    }
    let manifest = CheckpointManifest {
        config: config.clone(),
        step: store.step,
        normalizer: normalizer.name().to_string(),
        params,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| FctError::Format(format!("manifest encode: {e}")))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(FctConfig, ParamStore, Normalizer)> {
    let raw = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&raw).map_err(|e| FctError::Format(format!("manifest decode: {e}")))?;
    let normalizer = Normalizer::parse(&manifest.normalizer)?;
    let mut store = ParamStore::new();
    for (name, stem) in &manifest.params {
        let value = io::read_tensor(&dir.join(format!("{stem}.value.fctt")))?;
        store.insert(name, value)?;
        let p = store.get_mut(name).expect("just inserted");
        p.m = io::read_tensor(&dir.join(format!("{stem}.m.fctt")))?;
        p.v = io::read_tensor(&dir.join(format!("{stem}.v.fctt")))?;
    }
    store.step = manifest.step;
    // the shape table is the contract; verify the checkpoint matches it
    for (name, _, shape) in param_shapes(&manifest.config) {
        match store.get(&name) {
            Some(p) if p.value.shape() == shape.as_slice() => {}
            Some(p) => {
                return Err(FctError::Format(format!(
                    "checkpoint `{name}` has shape {:?}, config wants {:?}",
                    p.value.shape(),
                    shape
                )))
            }
            None => return Err(FctError::Format(format!("checkpoint missing `{name}`"))),
        }
    }
    Ok((manifest.config, store, normalizer))
}
