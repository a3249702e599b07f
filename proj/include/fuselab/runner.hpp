#pragma once

// Command implementations behind the CLI verbs.  Each command takes a fully
// parsed RunConfig, writes its artifacts (plus the resolved config) into the
// output directory, and throws ConfigError for validation problems or other
// fuselab errors for runtime aborts.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "fuselab/model.hpp"
#include "fuselab/train.hpp"

namespace fuselab {

struct GenConfig {
    int scenes = 10;
    int scene_size = 256;
    int patch = 64;
    int stride = 64;
    double noise_sigma = 0.0;
    double train_split = 0.9;
    double val_split = 0.1;

    void validate() const;
    nlohmann::json to_json() const;
    static GenConfig from_json(const nlohmann::json& j);
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    GenConfig gen;
    std::string precision = "f32";   // "f32" | "f64"
    std::string dataset_dir;         // directory holding manifest.json
    std::string checkpoint;          // for eval / infer
    std::string out_dir = "out";
    std::string eval_split = "val";
    bool oracle_inject = false;      // eval: force O := X (protocol check)

    void validate() const;
    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);

    // Presets encode the two reference hyperparameter sets at desk scale.
    void apply_preset(const std::string& name);  // "wv-like" | "cave-like"
};

// Worker cap from FUSELAB_THREADS (>=1); defaults to 1.
int worker_threads();

void cmd_gen(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg, bool resume = false);
void cmd_eval(const RunConfig& cfg);
void cmd_infer(const RunConfig& cfg, const std::string& a_path, const std::string& b_path);

// In-process verification suites; returns the verdict document and writes it
// to out_dir/verify.json.  Overall pass iff every suite passes.
nlohmann::json cmd_verify(const RunConfig& cfg);

}  // namespace fuselab
