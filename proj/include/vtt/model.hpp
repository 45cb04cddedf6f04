#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtt/encoders.hpp"
#include "vtt/episodes.hpp"

namespace vtt::inline VTT_PRECISION_NS {

using NamedTensors = std::map<std::string, Tensor>;
// Anything with a visit(prefix, fn) walk, wrapped as a callable.
using VisitFn = std::function<void(const ParamVisitor&)>;

NamedTensors snapshot(const VisitFn& visit, bool trainable_only = false);
// Copies tensors into the visited parameters. Every visited name must be
// present with a matching shape, otherwise a compatibility error is raised.
void restore(const VisitFn& visit, const NamedTensors& tensors);
void set_trainable(const VisitFn& visit, bool trainable);

// Directory holding one VTT1 file per tensor and manifest.json.
void save_bundle(const std::filesystem::path& dir, const NamedTensors& tensors,
                 const nlohmann::ordered_json& meta = nlohmann::ordered_json::object());
NamedTensors load_bundle(const std::filesystem::path& dir, nlohmann::ordered_json* meta = nullptr);

struct DualEncoder {
    EncoderConfig cfg;
    VisionEncoder vision;
    TextEncoder text;

    static DualEncoder init(const EncoderConfig& cfg, std::size_t num_classes, Rng& rng);
    std::size_t num_classes() const { return text.vocab.num_classes(); }
    void visit(const ParamVisitor& fn);
};

nlohmann::ordered_json encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::ordered_json& j);

void save_dual_encoder(const std::filesystem::path& dir, DualEncoder& model);
DualEncoder load_dual_encoder(const std::filesystem::path& dir);

struct PretrainConfig {
    std::size_t steps = 150;
    std::size_t batch = 50;
    double lr = 2e-3;
    Scalar tau = Scalar(0.05);
    std::size_t domain = 0;
};

struct PretrainReport {
    std::vector<double> losses;
    double source_accuracy = 0;
};

// CLIP-style supervised pretraining on one domain: image features against the
// class prompt embeddings, both encoders trained.
PretrainReport pretrain(DualEncoder& model, const Dataset& data, const PretrainConfig& cfg, Rng& rng);

// [n x D] unit features without gradients, computed in chunks.
Tensor image_features(const VisionEncoder& enc, const Tensor& images, std::size_t chunk = 64);

// Rows of `table` for each index.
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& rows);

}  // namespace vtt::inline VTT_PRECISION_NS
