#pragma once

#include <memory>
#include <string>

#include "bseg/train.hpp"

namespace bseg {

/// Single-file checkpoint container.
///
/// Layout (little-endian):
///   magic "BSEGCKPT" | u32 version | u64 json_len | json header |
///   u64 n_blobs | blobs
/// Each blob: u32 name_len | name | u32 ndim | i64 dims[] | f64 data[].
/// The JSON header carries the model/train configs, epoch and step; blobs
/// hold every parameter and buffer by registered name plus the optimizer
/// moments ("adam.m.<name>", "adam.v.<name>") and step counter ("adam.t").
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    int64_t epoch = 0;  // completed epochs
    int64_t step = 0;   // global optimizer steps
    std::unique_ptr<Model> model;

    bool has_optimizer = false;
    std::vector<Tensor> adam_m, adam_v;  // parameter registration order
    int64_t adam_t = 0;

    /// Adam bound to the restored model with restored moments (or fresh ones).
    Adam make_optimizer() const;
};

void save_checkpoint(const std::string& path, const Model& model, const TrainConfig& train_cfg,
                     int64_t epoch, int64_t step, const Adam* opt);

/// Throws CheckpointError on bad magic/version or missing/mismatched blobs.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bseg
