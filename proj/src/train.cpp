#include "bseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>

#include "bseg/checkpoint.hpp"

namespace bseg {

void TrainConfig::validate() const {
    if (lr < 0.0) throw ConfigError("train config: lr must be >= 0");
    if (batch < 1 || epochs < 1 || image_size < 1 || boundary_width < 1)
        throw ConfigError("train config: batch, epochs, image_size and boundary_width must be >= 1");
    if (alpha < 0.0) throw ConfigError("train config: alpha must be >= 0");
}

Adam::Adam(std::vector<Var> params, double lr) : params_(std::move(params)), lr_(lr) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Var& p : params_) {
        m_.push_back(Tensor::zeros(p->value.shape()));
        v_.push_back(Tensor::zeros(p->value.shape()));
    }
}

void Adam::zero_grad() {
    for (Var& p : params_) p->zero_grad();
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Var& p = params_[i];
        const bool has_grad = !p->grad.empty();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t j = 0; j < p->value.numel(); ++j) {
            const double g = has_grad ? p->grad[j] : 0.0;
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
            p->value[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
        }
    }
}

void Adam::restore(std::vector<Tensor> m, std::vector<Tensor> v, int64_t t) {
    if (m.size() != params_.size() || v.size() != params_.size())
        throw CheckpointError("adam restore: state count mismatch");
    for (size_t i = 0; i < params_.size(); ++i)
        if (!(m[i].shape() == params_[i]->value.shape()) ||
            !(v[i].shape() == params_[i]->value.shape()))
            throw CheckpointError("adam restore: state shape mismatch at index " + std::to_string(i));
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
}

namespace {

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void append_losses_csv(const std::string& dir, const std::vector<StepRecord>& records,
                       size_t from) {
    const std::filesystem::path p = std::filesystem::path(dir) / "losses.csv";
    const bool fresh = !std::filesystem::exists(p);
    std::ofstream os(p, std::ios::app);
    if (fresh) os << "epoch,step,ce_sum,miou_sum,boundary_dice,total\n";
    os << std::setprecision(17);
    for (size_t i = from; i < records.size(); ++i) {
        const StepRecord& r = records[i];
        os << r.epoch << "," << r.step << "," << r.ce_sum << "," << r.miou_sum << ","
           << r.boundary_dice << "," << r.total << "\n";
    }
}

}  // namespace

TrainResult train_model(Model& model, Adam& opt, const std::vector<Sample>& data,
                        const TrainConfig& cfg, int64_t start_epoch, std::ostream* log) {
    cfg.validate();
    if (data.empty()) throw DataError("train: empty dataset");

    TrainResult result;
    const int64_t n = static_cast<int64_t>(data.size());
    int64_t global_step = opt.t();

    for (int64_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        std::vector<int64_t> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        const size_t epoch_record_start = result.curve.size();
        for (int64_t at = 0; at < n; at += cfg.batch) {
            const int64_t take = std::min<int64_t>(cfg.batch, n - at);
            std::vector<int64_t> idxs(order.begin() + at, order.begin() + at + take);
            Batch batch = make_batch(data, idxs);

            SegOutput out = model.forward(batch.images, /*training=*/true);
            LossBreakdown lb =
                total_loss(out, batch.labels, batch.boundaries, cfg.alpha, model.config().classes);
            if (const char* comp = lb.nonfinite_component())
                throw TrainError("train: non-finite loss component '" + std::string(comp) +
                                 "' at epoch " + std::to_string(epoch) + ", step " +
                                 std::to_string(global_step + 1));

            opt.zero_grad();
            backward(lb.total_var);
            opt.step();
            ++global_step;
            ++result.steps;

            StepRecord rec;
            rec.epoch = epoch;
            rec.step = global_step;
            rec.ce_sum = lb.ce[0] + lb.ce[1] + lb.ce[2];
            rec.miou_sum = lb.miou[0] + lb.miou[1] + lb.miou[2];
            rec.boundary_dice = lb.boundary_dice;
            rec.total = lb.total;
            result.curve.push_back(rec);
            if (log)
                (*log) << "epoch " << epoch << " step " << global_step << " ce " << rec.ce_sum
                       << " miou " << rec.miou_sum << " bdice " << rec.boundary_dice << " total "
                       << rec.total << "\n";

            if (cfg.max_steps >= 0 && result.steps >= cfg.max_steps) {
                result.epochs_completed = epoch;
                return result;
            }
        }
        result.epochs_completed = epoch + 1;

        if (!cfg.checkpoint_dir.empty()) {
            std::filesystem::create_directories(cfg.checkpoint_dir);
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%04lld.ckpt",
                          static_cast<long long>(epoch + 1));
            const std::string path = (std::filesystem::path(cfg.checkpoint_dir) / name).string();
            save_checkpoint(path, model, cfg, epoch + 1, global_step, &opt);
            const std::string last =
                (std::filesystem::path(cfg.checkpoint_dir) / "last.ckpt").string();
            save_checkpoint(last, model, cfg, epoch + 1, global_step, &opt);
            result.last_checkpoint = last;
            append_losses_csv(cfg.checkpoint_dir, result.curve, epoch_record_start);
        }
    }
    return result;
}

}  // namespace bseg
