// fuselab — batch CLI for dataset generation, training, evaluation,
// inference and self-verification.
//
// Exit codes: 0 success, 1 validation error, 2 runtime abort.

#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fuselab/runner.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::string variant;
    std::string precision;
    std::string out_dir;
    std::string dataset_dir;
    std::string checkpoint;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON run-config path");
    cmd->add_option("--preset", f.preset, "hyperparameter preset: wv-like | cave-like");
    cmd->add_option("--seed", f.seed, "seed for weights, shuffling and data synthesis");
    cmd->add_option("--variant", f.variant, "model variant: full | v1 | v2 | v3 | v4");
    cmd->add_option("--precision", f.precision, "arithmetic precision: f32 | f64");
    cmd->add_option("--out", f.out_dir, "output directory");
    cmd->add_option("--data", f.dataset_dir, "dataset directory (holds manifest.json)");
    cmd->add_option("--checkpoint", f.checkpoint, "U2CK checkpoint path");
}

fuselab::RunConfig resolve(const CommonFlags& f) {
    fuselab::RunConfig cfg;
    if (!f.config_path.empty()) cfg = fuselab::RunConfig::load(f.config_path);
    if (!f.preset.empty()) cfg.apply_preset(f.preset);
    if (f.seed) {
        cfg.model.seed = *f.seed;
        cfg.train.seed = *f.seed;
    }
    if (!f.variant.empty()) cfg.model.variant = fuselab::variant_from_name(f.variant);
    if (!f.precision.empty()) cfg.precision = f.precision;
    if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
    if (!f.dataset_dir.empty()) cfg.dataset_dir = f.dataset_dir;
    if (!f.checkpoint.empty()) cfg.checkpoint = f.checkpoint;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"u2net spatial-spectral fusion toolkit"};
    app.require_subcommand(1);

    CommonFlags gen_flags, train_flags, eval_flags, infer_flags, verify_flags;
    bool resume = false, oracle_inject = false;
    std::string infer_a, infer_b;

    auto* gen = app.add_subcommand("gen", "synthesize a degraded-pair dataset");
    add_common(gen, gen_flags);

    auto* train = app.add_subcommand("train", "train a model on a generated dataset");
    add_common(train, train_flags);
    train->add_flag("--resume", resume, "continue from checkpoint_latest.u2ck");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    add_common(eval, eval_flags);
    std::string eval_split;
    eval->add_option("--split", eval_split, "manifest split to evaluate (default val)");
    eval->add_flag("--oracle-inject", oracle_inject, "force O := X (protocol self-check)");

    auto* infer = app.add_subcommand("infer", "fuse one (A, B) pair");
    add_common(infer, infer_flags);
    infer->add_option("a", infer_a, "guide image (FCUBE)")->required();
    infer->add_option("b", infer_b, "low-resolution image (FCUBE)")->required();

    auto* verify = app.add_subcommand("verify", "run the in-process verification suites");
    add_common(verify, verify_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            fuselab::cmd_gen(resolve(gen_flags));
        } else if (train->parsed()) {
            fuselab::cmd_train(resolve(train_flags), resume);
        } else if (eval->parsed()) {
            auto cfg = resolve(eval_flags);
            if (!eval_split.empty()) cfg.eval_split = eval_split;
            cfg.oracle_inject = cfg.oracle_inject || oracle_inject;
            fuselab::cmd_eval(cfg);
        } else if (infer->parsed()) {
            fuselab::cmd_infer(resolve(infer_flags), infer_a, infer_b);
        } else if (verify->parsed()) {
            auto verdict = fuselab::cmd_verify(resolve(verify_flags));
            std::printf("%s\n", verdict.dump(2).c_str());
            if (!verdict["pass"].get<bool>()) return 2;
        }
    } catch (const fuselab::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "abort: %s\n", e.what());
        return 2;
    }
    return 0;
}
