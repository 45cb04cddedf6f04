#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtt/dgso.hpp"
#include "vtt/fusion.hpp"
#include "vtt/model.hpp"
#include "vtt/tia.hpp"

namespace vtt::inline VTT_PRECISION_NS {

// vtt: CE plus the VtT objective under DGSO. ce: plain LoRA fine-tuning.
enum class Method { VtT, Ce };

std::string to_string(Method m);
Method parse_method(const std::string& s);

struct Ablations {
    bool fusion = false;  // mu = f, no V-T Fusion
    bool tia = false;     // L_VtT = -cos(mu, f), no text pass
    bool dgso = false;    // no correction and no gate
    bool gate = false;    // correction kept, auxiliary loss never switched off
};

struct FinetuneConfig {
    Method method = Method::VtT;
    std::size_t epochs = 100;
    double lr = 1e-3;
    Scalar tau = Scalar(0.01);
    Scalar beta = 7;
    std::size_t lambda = 50;
    std::size_t lora_rank = 16;
    Scalar lora_alpha = 8;
    std::vector<std::string> lora_targets{"q", "v"};
    std::size_t aug_multiplier = 4;
    Scalar aug_jitter = Scalar(0.02);
    FusionVariant fusion_variant = FusionVariant::VT;
    TiaVariant tia_variant = TiaVariant::Replace;
    std::size_t ssm_state = 4;
    Ablations ablate;
    bool stop_grad_features = false;  // detach f_i inside L_VtT

    void validate() const;
};

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    std::size_t step = 0;   // global optimizer step, 1-based
    double l_ce = 0;
    std::optional<double> l_vtt;
    std::optional<double> conflict;  // C^e
    std::optional<double> window;    // M_e
    LossMode mode = LossMode::Combined;

    nlohmann::ordered_json to_json() const;
};

struct TrainerState {
    std::size_t epoch = 0;
    NamedTensors params;
    nlohmann::ordered_json meta;  // monitor, next mode, adam step count
    NamedTensors adam_m, adam_v;
};

// Fine-tunes vision LoRA (plus the VtT modules) on one episode's support set.
// The base encoders are copied and frozen; the text side never changes.
// `class_features` ([K x D], all classes) replaces the text classifier, as the
// layer sweeps do.
class EpisodeTrainer {
   public:
    EpisodeTrainer(const DualEncoder& base, const Tensor& support_images, std::vector<std::size_t> support_labels,
                   std::vector<std::size_t> classes, const FinetuneConfig& cfg, Rng rng,
                   std::optional<Tensor> class_features = std::nullopt);

    EpochLog run_epoch();
    std::vector<EpochLog> run(std::size_t epochs);

    std::size_t epoch() const { return epoch_; }
    LossMode next_mode() const { return next_mode_; }
    const ConflictMonitor& monitor() const { return monitor_; }
    const VisionEncoder& vision() const { return vision_; }
    const FusionParams& fusion() const { return fusion_; }
    const AbsorberAdapter& absorber() const { return absorber_; }
    // [N x D] text embeddings of the episode classes.
    const Tensor& text_features() const { return text_features_; }

    NamedTensors lora_params() const;
    NamedTensors vtt_params() const;

    TrainerState save_state() const;
    void load_state(const TrainerState& s);

    // Predictions on query images using only the adapted vision encoder.
    std::vector<std::size_t> predict_query(const Tensor& images) const;

   private:
    void visit_trainables(const ParamVisitor& fn);

    const DualEncoder* base_;
    FinetuneConfig cfg_;
    Rng rng_;
    Tensor support_;
    std::vector<std::size_t> labels_;
    std::vector<std::size_t> classes_;
    VisionEncoder vision_;
    FusionParams fusion_;
    AbsorberAdapter absorber_;
    Tensor text_features_;
    std::vector<Tensor> text_traces_;  // l x [K x d], all classes
    ConflictMonitor monitor_;
    Adam adam_;
    std::size_t epoch_ = 0;
    LossMode next_mode_ = LossMode::Combined;
};

// Vision LoRA tensors loaded on top of a base encoder, as used at inference.
VisionEncoder adapted_vision(const DualEncoder& base, const NamedTensors& lora, const FinetuneConfig& cfg);

}  // namespace vtt::inline VTT_PRECISION_NS
