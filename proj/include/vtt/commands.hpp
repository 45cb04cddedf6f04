#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vtt/config.hpp"

namespace vtt::inline VTT_PRECISION_NS {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitIo = 3, kExitNumeric = 4, kExitCompat = 5 };

// Maps the library error categories onto the stable exit codes.
int exit_code_for(const std::exception& e);

// Episode e of a run: seeded from (seed, e) only, so any subset can be replayed.
std::vector<Episode> sample_episodes(const Dataset& data, const RunConfig& cfg, std::size_t domain);

struct ConfidenceInterval {
    double mean = 0;
    std::optional<double> half_width;  // 95% normal approximation; absent for one value
};
ConfidenceInterval confidence_interval(const std::vector<double>& values);
std::string format_ci(const ConfidenceInterval& ci);

// Base model: loaded from `base_dir` when given, otherwise pretrained on the
// source domain from the config seed.
DualEncoder obtain_base_model(const RunConfig& cfg, const Dataset& data, const std::optional<std::filesystem::path>& base_dir,
                              std::ostream* log = nullptr);

void cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& out);

struct TrainOptions {
    std::optional<std::filesystem::path> base_dir;
    bool resume = false;
    // Stop every episode after this epoch and leave a resumable state (testing aid).
    std::optional<std::size_t> stop_after_epoch;
};

// Layout of a training output directory:
//   config.json, manifest.json, train.jsonl, base/,
//   episodes/epNNN/{adapter/, vtt/, state/, log.jsonl}
void cmd_train(const RunConfig& cfg, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir,
               const TrainOptions& opt, std::ostream& out);

struct EvalResult {
    std::vector<double> accuracy;  // per episode
    std::vector<std::vector<std::size_t>> predictions;
    ConfidenceInterval ci;
    nlohmann::ordered_json to_json() const;
};

struct EvalRequest {
    std::optional<std::size_t> episodes;  // first n episodes of the run
    bool zero_shot = false;               // ignore adapters
    std::optional<std::filesystem::path> report;
};

// Evaluates the per-episode adapters of a training run; only base/ and
// adapter/ are read, never the VtT modules. A bare model directory is
// evaluated zero-shot on episodes sampled from `cfg`.
EvalResult cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                    const RunConfig& cfg, const EvalRequest& req, std::ostream& out);

struct SweepRequest {
    SweepKind kind = SweepKind::Remove;
    SweepMode mode = SweepMode::ZeroShot;
    std::optional<std::filesystem::path> model_dir;  // base model; pretrained when absent
    std::size_t corrupt_layer = 0;                   // 0 = none
    double corrupt_std = 2.0;
};

SweepReport cmd_sweep(const RunConfig& cfg, const std::filesystem::path& data_dir, const SweepRequest& req,
                      const std::filesystem::path& out_dir, std::ostream& out);

// metric: attention_ratio | cross_domain | cka. `source` is a model directory
// (base bundle or training run) or a feature archive; `other` is the second
// archive for cka.
Report cmd_diagnose(const std::filesystem::path& source, const std::string& metric,
                    const std::optional<std::filesystem::path>& data_dir,
                    const std::optional<std::filesystem::path>& other, const std::filesystem::path& out_dir,
                    std::ostream& out);

// Per-layer vision CLS tokens and final features of every dataset sample.
void cmd_export_features(const std::filesystem::path& model_dir, const std::filesystem::path& data_dir,
                         const std::filesystem::path& out_dir, std::ostream& out);

}  // namespace vtt::inline VTT_PRECISION_NS
