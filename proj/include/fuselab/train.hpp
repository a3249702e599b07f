#pragma once

// Training loop: ℓ1 objective, Adam with a halving staircase learning-rate
// schedule, seeded shuffling, CSV loss history, and resumable checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "fuselab/checkpoint.hpp"
#include "fuselab/errors.hpp"
#include "fuselab/model.hpp"
#include "fuselab/rng.hpp"
#include "fuselab/tensor.hpp"

namespace fuselab {

// Mean over the batch of each sample's ℓ1 norm of the residual (Eq. error
// vector summed in absolute value, then averaged across samples).
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("l1_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    if (pred.shape().empty()) throw ShapeError("l1_loss: scalar inputs not supported");
    const auto batch = pred.shape()[0];
    return scale(sum(abs(sub(pred, target))), T(1) / static_cast<T>(batch));
}

struct TrainConfig {
    double lr0 = 1e-3;
    int epochs = 1;
    int batch_size = 16;
    int halve_every = 100;  // epochs between learning-rate halvings
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;  // 0 disables global-norm clipping
    int checkpoint_every = 1;  // epochs between checkpoint_latest rewrites
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr0 > 0)) throw ConfigError("train: lr0 must be positive");
        if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (halve_every < 1) throw ConfigError("train: halve_every must be >= 1");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
            throw ConfigError("train: betas must lie in [0, 1)");
        if (!(eps > 0)) throw ConfigError("train: eps must be positive");
        if (clip_norm < 0) throw ConfigError("train: clip_norm must be >= 0");
        if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"lr0", lr0},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"halve_every", halve_every},
                {"beta1", beta1},
                {"beta2", beta2},
                {"eps", eps},
                {"clip_norm", clip_norm},
                {"checkpoint_every", checkpoint_every},
                {"seed", seed}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        static const std::vector<std::string> known = {
            "lr0",  "epochs",    "batch_size",       "halve_every", "beta1",
            "beta2", "eps",      "clip_norm",        "checkpoint_every", "seed"};
        for (auto it = j.begin(); it != j.end(); ++it)
            if (std::find(known.begin(), known.end(), it.key()) == known.end())
                throw ConfigError("train config: unknown key \"" + it.key() + "\"");
        TrainConfig c;
        c.lr0 = j.value("lr0", c.lr0);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.halve_every = j.value("halve_every", c.halve_every);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.eps = j.value("eps", c.eps);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.seed = j.value("seed", c.seed);
        c.validate();
        return c;
    }
};

// Staircase schedule: lr0 · 0.5^⌊epoch / halve_every⌋ (epoch is zero-based).
inline double lr_at(const TrainConfig& cfg, int epoch) {
    return cfg.lr0 * std::pow(0.5, epoch / cfg.halve_every);
}

template <typename T>
struct AdamState {
    std::unordered_map<std::string, std::vector<T>> m, v;
    std::uint64_t t = 0;
};

// One Adam update over every parameter that received a gradient.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, const TrainConfig& cfg, double lr) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));

    double grad_sq = 0.0;
    for (auto& [name, p] : params.items()) {
        if (!p.has_grad()) throw ContractError("adam_step: missing gradient for " + name);
        for (T g : p.grad()) {
            if (!std::isfinite(double(g)))
                throw NumericError("adam_step: non-finite gradient in " + name);
            grad_sq += double(g) * double(g);
        }
    }
    double grad_scale = 1.0;
    if (cfg.clip_norm > 0) {
        const double norm = std::sqrt(grad_sq);
        if (norm > cfg.clip_norm) grad_scale = cfg.clip_norm / norm;
    }

    for (auto& [name, p] : params.items()) {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(p.size(), T(0));
        if (v.empty()) v.assign(p.size(), T(0));
        auto& val = p.mutable_data();
        const auto& g = p.grad();
        for (std::int64_t i = 0; i < p.size(); ++i) {
            const T gi = static_cast<T>(double(g[i]) * grad_scale);
            m[i] = static_cast<T>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi);
            v[i] = static_cast<T>(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi);
            const double mhat = double(m[i]) / bc1;
            const double vhat = double(v[i]) / bc2;
            val[i] = static_cast<T>(double(val[i]) - lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

template <typename T>
struct TrainSample {
    Tensor<T> a;   // (1, H, W, c) guide image
    Tensor<T> bu;  // (1, H, W, C) upsampled low-resolution input
    Tensor<T> x;   // (1, H, W, C) reference
};

namespace traindetail {

// Stack samples (all shaped (1, H, W, ch)) along the batch axis.
template <typename T>
Tensor<T> make_batch(const std::vector<TrainSample<T>>& samples,
                     const std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi,
                     const Tensor<T> TrainSample<T>::* field) {
    const auto& first = samples[idx[lo]].*field;
    Shape shape = first.shape();
    shape[0] = static_cast<std::int64_t>(hi - lo);
    std::vector<T> out;
    out.reserve(static_cast<std::size_t>(numel(shape)));
    for (std::size_t i = lo; i < hi; ++i) {
        const auto& t = samples[idx[i]].*field;
        if (t.shape() != first.shape())
            throw ShapeError("fit: inconsistent sample shapes in batch");
        out.insert(out.end(), t.data().begin(), t.data().end());
    }
    return Tensor<T>(std::move(shape), std::move(out));
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace traindetail

template <typename T>
struct FitResult {
    std::vector<double> epoch_losses;  // mean step loss per epoch
    std::uint64_t steps = 0;
    int epochs_run = 0;
};

// Full training loop.  Writes loss_history.csv plus checkpoint_latest.u2ck /
// checkpoint_final.u2ck into out_dir.  When resume is true and a latest
// checkpoint exists, training continues bit-exactly from it.
template <typename T>
FitResult<T> fit(U2Net<T>& net, const std::vector<TrainSample<T>>& samples,
                 const TrainConfig& cfg, const std::filesystem::path& out_dir,
                 bool resume = false) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (samples.empty()) throw ConfigError("fit: empty training set");
    fs::create_directories(out_dir);
    const fs::path csv_path = out_dir / "loss_history.csv";
    const fs::path latest_path = out_dir / "checkpoint_latest.u2ck";
    const fs::path final_path = out_dir / "checkpoint_final.u2ck";

    AdamState<T> opt;
    Rng rng(cfg.seed);
    int start_epoch = 0;

    const nlohmann::json config_echo = {{"model", net.config().to_json()},
                                        {"train", cfg.to_json()}};

    if (resume && fs::exists(latest_path)) {
        auto ck = load_checkpoint<T>(latest_path);
        if (ck.config != config_echo)
            throw ConfigError("fit: checkpoint config does not match current run");
        for (auto& [name, t] : ck.tensors) {
            if (name.rfind("opt.m.", 0) == 0)
                opt.m[name.substr(6)] = t.data();
            else if (name.rfind("opt.v.", 0) == 0)
                opt.v[name.substr(6)] = t.data();
            else {
                auto& p = net.params().get(name);
                if (p.shape() != t.shape())
                    throw FormatError("fit: checkpoint shape mismatch for " + name);
                p.mutable_data() = t.data();
            }
        }
        opt.t = ck.step;
        start_epoch = ck.epoch;
        rng.load_state(ck.rng_state);
    } else {
        std::ofstream csv(csv_path, std::ios::trunc);
        csv << "epoch,step,lr,loss\n";
    }

    auto snapshot = [&](int epoch) {
        Checkpoint<T> ck;
        ck.config = config_echo;
        ck.step = opt.t;
        ck.epoch = epoch;
        ck.rng_state = rng.save_state();
        for (const auto& [name, p] : net.params().items()) {
            ck.tensors.emplace_back(name, Tensor<T>(p.shape(), p.data()));
            ck.tensors.emplace_back("opt.m." + name,
                                    Tensor<T>(p.shape(), opt.m.count(name)
                                                             ? opt.m.at(name)
                                                             : std::vector<T>(p.size(), T(0))));
            ck.tensors.emplace_back("opt.v." + name,
                                    Tensor<T>(p.shape(), opt.v.count(name)
                                                             ? opt.v.at(name)
                                                             : std::vector<T>(p.size(), T(0))));
        }
        return ck;
    };

    FitResult<T> result;
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        // seeded Fisher-Yates shuffle from identity, so each epoch's order is
        // a function of the RNG state alone (required for bit-exact resume)
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);

        const double lr = lr_at(cfg, epoch);
        double loss_sum = 0.0;
        std::size_t nsteps = 0;
        std::ofstream csv(csv_path, std::ios::app);

        for (std::size_t lo = 0; lo < order.size(); lo += std::size_t(cfg.batch_size)) {
            const std::size_t hi = std::min(order.size(), lo + std::size_t(cfg.batch_size));
            auto a = traindetail::make_batch(samples, order, lo, hi, &TrainSample<T>::a);
            auto bu = traindetail::make_batch(samples, order, lo, hi, &TrainSample<T>::bu);
            auto x = traindetail::make_batch(samples, order, lo, hi, &TrainSample<T>::x);

            net.params().zero_grads();
            auto loss = l1_loss(net.forward(a, bu), x);
            const double loss_val = double(loss.item());
            if (!std::isfinite(loss_val))
                throw NumericError("fit: non-finite loss at epoch " + std::to_string(epoch) +
                                   " step " + std::to_string(opt.t) +
                                   " (last good checkpoint kept)");
            backward(loss);
            adam_step(net.params(), opt, cfg, lr);

            loss_sum += loss_val;
            nsteps += 1;
            result.steps = opt.t;
            csv << epoch << ',' << opt.t << ',' << traindetail::fmt_double(lr) << ','
                << traindetail::fmt_double(loss_val) << '\n';
        }
        csv.close();
        result.epoch_losses.push_back(loss_sum / double(nsteps));
        result.epochs_run = epoch + 1;

        if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs)
            save_checkpoint(latest_path, snapshot(epoch + 1));
    }

    save_checkpoint(final_path, snapshot(cfg.epochs));
    return result;
}

}  // namespace fuselab
