use serde::Serialize;

use crate::transformer::ModelConfig;

/// Closed-form parameter accounting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParamCount {
    /// `r · (d_in + d_out)` for one square attention adapter.
    pub per_adapter: usize,
    /// Independent adapters (both paths) plus shared adapters in one block.
    pub adapters_per_block: usize,
    /// Independent q/k/v adapters of one path, all blocks.
    pub per_path_params: usize,
    /// Shared k/v adapters, all blocks.
    pub shared_params: usize,
    /// Both projection layers, all blocks; zero when excluded.
    pub projection_params: usize,
    pub base_params: usize,
    /// What one path adds at deployment: its own adapters plus the shared ones.
    pub deployed_per_path: usize,
    pub total_trainable: usize,
    pub fraction_per_path: f64,
    pub fraction_total: f64,
}

/// Parameters of the base model with the given shape.
pub fn base_param_count(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let per_block = 4 * d * d + 3 * d * cfg.d_ff + 4 * d;
    2 * cfg.vocab_size * d + cfg.max_seq_len * d + cfg.n_layers * per_block + 2 * d
}

pub fn count_trainable(cfg: &ModelConfig, rank: usize, include_projection: bool, p_ff: usize) -> ParamCount {
    let d = cfg.d_model;
    let per_adapter = rank * (d + d);
    let per_path_params = cfg.n_layers * 3 * per_adapter;
    let shared_params = cfg.n_layers * 2 * per_adapter;
    let projection_params = if include_projection {
        cfg.n_layers * 2 * 3 * d * p_ff
    } else {
        0
    };
    let base_params = base_param_count(cfg);
    let deployed_per_path = per_path_params + shared_params;
    let total_trainable = 2 * per_path_params + shared_params + projection_params;
    ParamCount {
        per_adapter,
        adapters_per_block: 3 * 2 + 2,
        per_path_params,
        shared_params,
        projection_params,
        base_params,
        deployed_per_path,
        total_trainable,
        fraction_per_path: deployed_per_path as f64 / base_params as f64,
        fraction_total: total_trainable as f64 / base_params as f64,
    }
}
