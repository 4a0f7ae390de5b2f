#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "bseg/data.hpp"
#include "bseg/losses.hpp"

namespace bseg {

struct TrainConfig {
    double lr = 1e-4;
    int64_t batch = 32;
    int64_t epochs = 90;
    int64_t image_size = 256;
    double alpha = 3.0;
    uint64_t seed = 0;
    std::string checkpoint_dir;  // empty: keep everything in memory
    int boundary_width = 1;
    int64_t max_steps = -1;  // stop after this many optimizer steps (<0: unlimited)

    void validate() const;
};

/// Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8. First/second
/// moment state is kept per parameter in registration order.
class Adam {
public:
    Adam(std::vector<Var> params, double lr);

    void step();
    void zero_grad();

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    int64_t t() const { return t_; }
    size_t size() const { return params_.size(); }
    const Tensor& m(size_t i) const { return m_[i]; }
    const Tensor& v(size_t i) const { return v_[i]; }
    /// Restores moments and step count (checkpoint resume).
    void restore(std::vector<Tensor> m, std::vector<Tensor> v, int64_t t);

private:
    std::vector<Var> params_;
    std::vector<Tensor> m_, v_;
    double lr_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t t_ = 0;
};

struct StepRecord {
    int64_t epoch = 0;
    int64_t step = 0;  // global optimizer step, 1-based after the update
    double ce_sum = 0.0;
    double miou_sum = 0.0;
    double boundary_dice = 0.0;
    double total = 0.0;
};

struct TrainResult {
    std::vector<StepRecord> curve;
    int64_t steps = 0;
    int64_t epochs_completed = 0;
    std::string last_checkpoint;
};

/// Runs the optimizer over `data`. Batch order per epoch is a pure function
/// of (seed, epoch), so resuming from an epoch-boundary checkpoint replays
/// the uninterrupted run exactly. Throws TrainError naming the offending
/// component when the loss goes non-finite, DataError on an empty dataset.
/// Writes one checkpoint per epoch plus `last.ckpt` and appends
/// `losses.csv` when cfg.checkpoint_dir is set.
TrainResult train_model(Model& model, Adam& opt, const std::vector<Sample>& data,
                        const TrainConfig& cfg, int64_t start_epoch = 0,
                        std::ostream* log = nullptr);

}  // namespace bseg
