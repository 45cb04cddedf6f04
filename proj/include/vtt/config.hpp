#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtt/diagnostics.hpp"
#include "vtt/episodes.hpp"
#include "vtt/model.hpp"
#include "vtt/trainer.hpp"

namespace vtt::inline VTT_PRECISION_NS {

// Everything a run depends on. Numbers are kept in double so that defaults
// such as tau = 0.01 survive a JSON round trip exactly.
struct RunConfig {
    // encoder
    std::size_t d = 32;
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t patch = 4;
    std::size_t mlp_ratio = 4;
    std::size_t embed_dim = 32;

    // LoRA
    std::size_t lora_rank = 16;
    double lora_alpha = 8;
    std::vector<std::string> lora_placement{"q", "v"};

    // objective and optimization
    std::string method = "vtt";
    double tau = 0.01;
    double beta = 7;
    std::size_t lambda = 50;
    double gamma = 0.2;
    double lr = 1e-3;
    std::size_t epochs = 100;
    bool gate = true;
    std::vector<std::string> ablate;  // fusion | tia | dgso
    std::string fusion_variant = "vt";
    std::string tia_variant = "replace";
    std::size_t ssm_state = 4;
    bool stop_grad_features = false;
    std::size_t aug_multiplier = 4;
    double aug_jitter = 0.02;

    // episodes
    std::size_t episodes = 20;
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t m_query = 15;
    std::size_t source_domain = 0;
    std::size_t target_domain = 1;

    // source-domain pretraining of the dual encoder
    std::size_t pretrain_steps = 150;
    std::size_t pretrain_batch = 50;
    double pretrain_lr = 2e-3;
    double pretrain_tau = 0.05;

    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::size_t checkpoint_every = 10;  // epochs between resumable states, 0 = only at the end

    SyntheticSpec data;

    // Raises ConfigError naming the offending field.
    void validate() const;
    nlohmann::ordered_json to_json() const;
    // Unknown keys are rejected; missing keys keep their defaults.
    static RunConfig from_json(const nlohmann::ordered_json& j);
    std::string dump() const { return to_json().dump(2) + "\n"; }
    std::string hash() const;

    EncoderConfig encoder() const;
    FinetuneConfig finetune() const;
    PretrainConfig pretrain() const;
};

RunConfig load_run_config(const std::string& path);

}  // namespace vtt::inline VTT_PRECISION_NS
