use super::adapters::{check_unit, PathId, PectBlockParams};
use super::lora::LoraAdapter;
use super::model::PectModel;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::transformer::{BaseWeights, BlockWeights};

fn fold(w: &Tensor, own: &LoraAdapter, shared: Option<(&LoraAdapter, f64)>) -> Result<Tensor> {
    let mut out = w.add(&own.delta_matrix()?)?;
    if let Some((s, coeff)) = shared {
        out = out.add(&s.delta_matrix()?.scale(coeff))?;
    }
    Ok(out)
}

/// Dense `W + BA` (plus the weighted shared update on K and V) for one block.
pub fn merge_block(block: &BlockWeights, params: &PectBlockParams, lambda: f64, path: PathId) -> Result<BlockWeights> {
    check_unit("lambda", lambda)?;
    let own = params.path(path);
    let c = path.shared_coeff(lambda);
    Ok(BlockWeights {
        wq: fold(&block.wq, &own.q, None)?,
        wk: fold(&block.wk, &own.k, Some((&params.shared.k, c)))?,
        wv: fold(&block.wv, &own.v, Some((&params.shared.v, c)))?,
        ..block.clone()
    })
}

/// Base weights with `path`'s attention adapters folded in. The result
/// reproduces the single-mode forward; projection layers have no dense form
/// and are dropped.
pub fn merge_path_adapters(model: &PectModel, path: PathId) -> Result<BaseWeights> {
    if model.is_training() {
        return Err(Error::Contract("cannot merge adapters while the model is in training mode".into()));
    }
    let lambda = model.adapters.config.lambda;
    let blocks = model
        .base
        .weights
        .blocks
        .iter()
        .zip(&model.adapters.blocks)
        .map(|(b, p)| merge_block(b, p, lambda, path))
        .collect::<Result<_>>()?;
    Ok(BaseWeights {
        blocks,
        ..model.base.weights.clone()
    })
}
