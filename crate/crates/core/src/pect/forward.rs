//! Adapter-augmented forward pass.

use super::adapters::{check_unit, ForwardMode, PathId, PectAdapters, PectBlockParams, PectConfig};
use super::lora::{ForwardContext, LoraVars};
use crate::autodiff::ops::DEFAULT_LAYER_NORM_EPS;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::transformer::model::{
    causal_multi_head, embed, linear, lm_head, swiglu, BlockVars, ModelVars, SwiGluVars,
};
use crate::transformer::{BlockWeights, ModelConfig};

#[derive(Clone, Copy, Debug)]
pub struct QkvVars {
    pub q: LoraVars,
    pub k: LoraVars,
    pub v: LoraVars,
}

#[derive(Clone, Copy, Debug)]
pub struct PectBlockVars {
    pub independent: [QkvVars; 2],
    pub shared_k: LoraVars,
    pub shared_v: LoraVars,
    pub projection: [SwiGluVars; 2],
}

/// Adapters recorded on a tape, with each leaf under its checkpoint name.
#[derive(Clone, Debug)]
pub struct PectVars {
    pub blocks: Vec<PectBlockVars>,
    pub named: Vec<(String, Var)>,
}

impl PectVars {
    pub fn register(tape: &mut Tape, adapters: &PectAdapters, trainable: bool) -> Self {
        let blocks: Vec<PectBlockVars> = adapters
            .blocks
            .iter()
            .map(|b| register_block(tape, b, trainable))
            .collect();
        let mut named = Vec::new();
        for (i, b) in blocks.iter().enumerate() {
            for p in PathId::ALL {
                let a = &b.independent[p.index()];
                for (m, lv) in [("q", a.q), ("k", a.k), ("v", a.v)] {
                    named.push((format!("block.{i}.{p}.{m}.A"), lv.a));
                    named.push((format!("block.{i}.{p}.{m}.B"), lv.b));
                }
            }
            for (m, lv) in [("k", b.shared_k), ("v", b.shared_v)] {
                named.push((format!("block.{i}.shared.{m}.A"), lv.a));
                named.push((format!("block.{i}.shared.{m}.B"), lv.b));
            }
            for p in PathId::ALL {
                let w = &b.projection[p.index()];
                named.push((format!("block.{i}.{p}.projection.gate"), w.gate));
                named.push((format!("block.{i}.{p}.projection.up"), w.up));
                named.push((format!("block.{i}.{p}.projection.down"), w.down));
            }
        }
        PectVars { blocks, named }
    }
}

fn register_block(tape: &mut Tape, b: &PectBlockParams, trainable: bool) -> PectBlockVars {
    let qkv = |p: PathId, tape: &mut Tape| {
        let a = b.path(p);
        QkvVars {
            q: LoraVars::register(tape, &a.q, trainable),
            k: LoraVars::register(tape, &a.k, trainable),
            v: LoraVars::register(tape, &a.v, trainable),
        }
    };
    let tdp = qkv(PathId::Tdp, tape);
    let cgp = qkv(PathId::Cgp, tape);
    PectBlockVars {
        independent: [tdp, cgp],
        shared_k: LoraVars::register(tape, &b.shared.k, trainable),
        shared_v: LoraVars::register(tape, &b.shared.v, trainable),
        projection: [
            SwiGluVars::register(tape, &b.projection(PathId::Tdp).weights, trainable),
            SwiGluVars::register(tape, &b.projection(PathId::Cgp).weights, trainable),
        ],
    }
}

/// Query, key and value projections for one path on normalised input `x`.
#[allow(clippy::too_many_arguments)]
pub fn path_qkv(
    tape: &mut Tape,
    base: &BlockVars,
    pb: &PectBlockVars,
    path: PathId,
    x: Var,
    lambda: f64,
    ctx: &mut ForwardContext<'_>,
) -> Result<(Var, Var, Var)> {
    check_unit("lambda", lambda)?;
    let own = pb.independent[path.index()];
    let coeff = path.shared_coeff(lambda);

    let q0 = linear(tape, x, base.wq)?;
    let dq = own.q.apply(tape, x, ctx)?;
    let q = tape.add(q0, dq)?;

    let mut kv = |w: Var, own_ad: LoraVars, shared: LoraVars, tape: &mut Tape| -> Result<Var> {
        let base_out = linear(tape, x, w)?;
        let d_own = own_ad.apply(tape, x, ctx)?;
        let d_shared = shared.apply(tape, x, ctx)?;
        let d_shared = tape.scale(d_shared, coeff);
        let s = tape.add(base_out, d_own)?;
        tape.add(s, d_shared)
    };
    let k = kv(base.wk, own.k, pb.shared_k, tape)?;
    let v = kv(base.wv, own.v, pb.shared_v, tape)?;
    Ok((q, k, v))
}

/// Keys and values of `path` for `[T × d]` input `x`, with dropout off.
pub fn pect_kv(
    block: &BlockWeights,
    params: &PectBlockParams,
    lambda: f64,
    path: PathId,
    x: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let base = BlockVars {
        ln1_gain: tape.constant(block.ln1_gain.clone()),
        ln1_bias: tape.constant(block.ln1_bias.clone()),
        wq: tape.constant(block.wq.clone()),
        wk: tape.constant(block.wk.clone()),
        wv: tape.constant(block.wv.clone()),
        wo: tape.constant(block.wo.clone()),
        ln2_gain: tape.constant(block.ln2_gain.clone()),
        ln2_bias: tape.constant(block.ln2_bias.clone()),
        ffn: SwiGluVars::register(&mut tape, &block.ffn, false),
    };
    let pb = register_block(&mut tape, params, false);
    let xv = tape.constant(x.clone());
    let (_, k, v) = path_qkv(&mut tape, &base, &pb, path, xv, lambda, &mut ForwardContext::inference())?;
    Ok((tape.value(k).clone(), tape.value(v).clone()))
}

/// Output of one adapted block.
#[derive(Clone, Copy, Debug)]
pub struct BlockOutput {
    pub active: Var,
    /// The other path's `x′` in dual mode.
    pub other: Option<Var>,
}

struct PathState {
    /// Post-attention layer norm, the projection input.
    n2: Var,
    /// `h + FFN(n2)`.
    ffn_out: Var,
}

#[allow(clippy::too_many_arguments)]
fn path_state(
    tape: &mut Tape,
    base: &BlockVars,
    pb: &PectBlockVars,
    path: PathId,
    x: Var,
    n1: Var,
    n_heads: usize,
    lambda: f64,
    ctx: &mut ForwardContext<'_>,
) -> Result<PathState> {
    let (q, k, v) = path_qkv(tape, base, pb, path, n1, lambda, ctx)?;
    let att = causal_multi_head(tape, q, k, v, n_heads)?;
    let a = linear(tape, att.heads, base.wo)?;
    let h = tape.add(x, a)?;
    let n2 = tape.layer_norm(h, base.ln2_gain, base.ln2_bias, DEFAULT_LAYER_NORM_EPS)?;
    let f = swiglu(tape, n2, &base.ffn)?;
    let ffn_out = tape.add(h, f)?;
    Ok(PathState { n2, ffn_out })
}

/// Pre-norm block with per-path attention adapters and, in dual mode, the
/// cross-path projection term added beside the FFN:
/// `x′_p = h_p + F(LN₂(h_p)) + c_p · L_q(LN₂(h_q))` with `q` the other path,
/// `c_TDP = γ` and `c_CGP = 1 − γ`.
#[allow(clippy::too_many_arguments)]
pub fn pect_block_forward(
    tape: &mut Tape,
    base: &BlockVars,
    pb: &PectBlockVars,
    x: Var,
    active: PathId,
    mode: ForwardMode,
    cfg: &PectConfig,
    n_heads: usize,
    ctx: &mut ForwardContext<'_>,
) -> Result<BlockOutput> {
    check_unit("gamma", cfg.gamma)?;
    let n1 = tape.layer_norm(x, base.ln1_gain, base.ln1_bias, DEFAULT_LAYER_NORM_EPS)?;
    match mode {
        ForwardMode::Single => {
            let s = path_state(tape, base, pb, active, x, n1, n_heads, cfg.lambda, ctx)?;
            Ok(BlockOutput {
                active: s.ffn_out,
                other: None,
            })
        }
        ForwardMode::Dual => {
            let mut states = Vec::with_capacity(2);
            for p in PathId::ALL {
                states.push(path_state(tape, base, pb, p, x, n1, n_heads, cfg.lambda, ctx)?);
            }
            let mut outs = [x; 2];
            for p in PathId::ALL {
                let q = p.other();
                let cross = swiglu(tape, states[q.index()].n2, &pb.projection[q.index()])?;
                let cross = tape.scale(cross, p.cross_coeff(cfg.gamma));
                outs[p.index()] = tape.add(states[p.index()].ffn_out, cross)?;
            }
            Ok(BlockOutput {
                active: outs[active.index()],
                other: Some(outs[active.other().index()]),
            })
        }
    }
}

/// `[T × vocab]` logits through `path`.
#[allow(clippy::too_many_arguments)]
pub fn pect_model_forward(
    tape: &mut Tape,
    base: &ModelVars,
    pect: &PectVars,
    model_cfg: &ModelConfig,
    cfg: &PectConfig,
    ids: &[usize],
    path: PathId,
    mode: ForwardMode,
    ctx: &mut ForwardContext<'_>,
) -> Result<Var> {
    if base.blocks.len() != pect.blocks.len() {
        return Err(Error::Shape(format!(
            "{} base blocks but {} adapter blocks",
            base.blocks.len(),
            pect.blocks.len()
        )));
    }
    let mut x = embed(tape, base, model_cfg, ids)?;
    for (b, pb) in base.blocks.iter().zip(&pect.blocks) {
        x = pect_block_forward(tape, b, pb, x, path, mode, cfg, model_cfg.n_heads, ctx)?.active;
    }
    lm_head(tape, base, x)
}
