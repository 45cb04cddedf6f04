#include "vtt/config.hpp"

#include <set>

#include "vtt/errors.hpp"
#include "vtt/serialize.hpp"

namespace vtt::inline VTT_PRECISION_NS {

namespace {

void require(bool ok, const std::string& field, const std::string& rule) {
    if (!ok) throw ConfigError("config field '" + field + "' " + rule);
}

// Reads keys out of one JSON object and remembers which were seen, so the
// leftovers can be reported as unknown.
class Reader {
   public:
    Reader(const nlohmann::ordered_json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
        if (!j_.is_object()) throw ConfigError("config section '" + prefix_ + "' must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config field '" + prefix_ + key + "' has the wrong type");
        }
    }

    const nlohmann::ordered_json* section(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError("unknown config field '" + prefix_ + k + "'");
        }
    }

   private:
    const nlohmann::ordered_json& j_;
    std::string prefix_;
    std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
    require(d > 0, "encoder.d", "must be positive");
    require(heads > 0 && d % heads == 0, "encoder.heads", "must divide encoder.d");
    require(layers >= 1, "encoder.layers", "must be >= 1");
    require(patch > 0 && data.image_size % patch == 0, "encoder.patch", "must divide data.image_size");
    require(mlp_ratio > 0, "encoder.mlp_ratio", "must be positive");
    require(embed_dim > 0, "encoder.embed_dim", "must be positive");
    require(lora_rank > 0, "lora.rank", "must be positive");
    require(lora_alpha > 0, "lora.alpha", "must be > 0");
    require(!lora_placement.empty(), "lora.placement", "must name at least one projection");
    for (const auto& p : lora_placement) {
        require(p == "q" || p == "k" || p == "v" || p == "o", "lora.placement", "entries must be q, k, v or o");
    }
    require(method == "vtt" || method == "ce", "train.method", "must be vtt or ce");
    require(tau > 0, "train.tau", "must be > 0");
    require(beta >= 0, "train.beta", "must be >= 0");
    require(lambda >= 1, "train.lambda", "must be >= 1");
    require(gamma >= 0 && gamma <= 1, "train.gamma", "must lie in [0, 1]");
    require(lr > 0, "train.lr", "must be > 0");
    require(epochs >= 1, "train.epochs", "must be >= 1");
    for (const auto& a : ablate) {
        require(a == "fusion" || a == "tia" || a == "dgso", "train.ablate", "entries must be fusion, tia or dgso");
    }
    try {
        parse_fusion_variant(fusion_variant);
    } catch (const Error&) {
        require(false, "train.fusion_variant", "must be one of vt, vt-reverse, vt-2d, v, t, vt-mean, t-mean, v-mean");
    }
    require(tia_variant == "replace" || tia_variant == "append", "train.tia_variant", "must be replace or append");
    require(ssm_state >= 1, "train.ssm_state", "must be >= 1");
    require(aug_multiplier >= 1, "train.aug_multiplier", "must be >= 1");
    require(aug_jitter >= 0, "train.aug_jitter", "must be >= 0");
    require(episodes >= 1, "episodes.count", "must be >= 1");
    require(n_way >= 2 && n_way <= data.num_classes, "episodes.n_way", "must lie in [2, data.num_classes]");
    require(k_shot >= 1, "episodes.k_shot", "must be >= 1");
    require(m_query >= 1, "episodes.m_query", "must be >= 1");
    require(k_shot + m_query <= data.per_class, "episodes.m_query", "plus k_shot exceeds data.per_class");
    require(source_domain < data.domains.size(), "episodes.source_domain", "names a missing domain");
    require(target_domain < data.domains.size(), "episodes.target_domain", "names a missing domain");
    require(pretrain_batch >= 1, "pretrain.batch", "must be >= 1");
    require(pretrain_lr > 0, "pretrain.lr", "must be > 0");
    require(pretrain_tau > 0, "pretrain.tau", "must be > 0");
    require(jobs >= 1, "jobs", "must be >= 1");
    require(data.num_classes >= 2, "data.num_classes", "must be >= 2");
    require(data.per_class >= 1, "data.per_class", "must be >= 1");
    require(data.channels >= 1, "data.channels", "must be >= 1");
    require(data.amplitude_jitter >= 0 && data.amplitude_jitter < 1, "data.amplitude_jitter", "must lie in [0, 1)");
    require(data.clutter >= 0, "data.clutter", "must be >= 0");
    require(!data.domains.empty(), "data.domains", "must list at least one domain");
    for (std::size_t i = 0; i < data.domains.size(); ++i) {
        const auto f = "data.domains[" + std::to_string(i) + "].";
        const auto& s = data.domains[i];
        require(s.noise >= 0, f + "noise", "(sigma) must be >= 0");
        require(s.gain.size() == data.channels, f + "gain", "needs one entry per channel");
        require(s.bias.size() == data.channels, f + "bias", "needs one entry per channel");
        require(!s.permute_patches || data.image_size % 4 == 0, f + "permute_patches", "needs image_size % 4 == 0");
    }
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["encoder"] = {{"d", d}, {"layers", layers}, {"heads", heads}, {"patch", patch}, {"mlp_ratio", mlp_ratio},
                    {"embed_dim", embed_dim}};
    j["lora"] = {{"rank", lora_rank}, {"alpha", lora_alpha}, {"placement", lora_placement}};
    nlohmann::ordered_json t;
    t["method"] = method;
    t["tau"] = tau;
    t["beta"] = beta;
    t["lambda"] = lambda;
    t["gamma"] = gamma;
    t["lr"] = lr;
    t["epochs"] = epochs;
    t["gate"] = gate;
    t["ablate"] = ablate;
    t["fusion_variant"] = fusion_variant;
    t["tia_variant"] = tia_variant;
    t["ssm_state"] = ssm_state;
    t["stop_grad_features"] = stop_grad_features;
    t["aug_multiplier"] = aug_multiplier;
    t["aug_jitter"] = aug_jitter;
    j["train"] = t;
    j["episodes"] = {{"count", episodes},          {"n_way", n_way},
                     {"k_shot", k_shot},           {"m_query", m_query},
                     {"source_domain", source_domain}, {"target_domain", target_domain}};
    j["pretrain"] = {{"steps", pretrain_steps}, {"batch", pretrain_batch}, {"lr", pretrain_lr}, {"tau", pretrain_tau}};
    j["seed"] = seed;
    j["jobs"] = jobs;
    j["checkpoint_every"] = checkpoint_every;
    j["data"] = data.to_json();
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::ordered_json& j) {
    RunConfig c;
    Reader root(j, "");
    if (auto* s = root.section("encoder")) {
        Reader r(*s, "encoder.");
        r.get("d", c.d);
        r.get("layers", c.layers);
        r.get("heads", c.heads);
        r.get("patch", c.patch);
        r.get("mlp_ratio", c.mlp_ratio);
        r.get("embed_dim", c.embed_dim);
        r.finish();
    }
    if (auto* s = root.section("lora")) {
        Reader r(*s, "lora.");
        r.get("rank", c.lora_rank);
        r.get("alpha", c.lora_alpha);
        r.get("placement", c.lora_placement);
        r.finish();
    }
    if (auto* s = root.section("train")) {
        Reader r(*s, "train.");
        r.get("method", c.method);
        r.get("tau", c.tau);
        r.get("beta", c.beta);
        r.get("lambda", c.lambda);
        r.get("gamma", c.gamma);
        r.get("lr", c.lr);
        r.get("epochs", c.epochs);
        r.get("gate", c.gate);
        r.get("ablate", c.ablate);
        r.get("fusion_variant", c.fusion_variant);
        r.get("tia_variant", c.tia_variant);
        r.get("ssm_state", c.ssm_state);
        r.get("stop_grad_features", c.stop_grad_features);
        r.get("aug_multiplier", c.aug_multiplier);
        r.get("aug_jitter", c.aug_jitter);
        r.finish();
    }
    if (auto* s = root.section("episodes")) {
        Reader r(*s, "episodes.");
        r.get("count", c.episodes);
        r.get("n_way", c.n_way);
        r.get("k_shot", c.k_shot);
        r.get("m_query", c.m_query);
        r.get("source_domain", c.source_domain);
        r.get("target_domain", c.target_domain);
        r.finish();
    }
    if (auto* s = root.section("pretrain")) {
        Reader r(*s, "pretrain.");
        r.get("steps", c.pretrain_steps);
        r.get("batch", c.pretrain_batch);
        r.get("lr", c.pretrain_lr);
        r.get("tau", c.pretrain_tau);
        r.finish();
    }
    root.get("seed", c.seed);
    root.get("jobs", c.jobs);
    root.get("checkpoint_every", c.checkpoint_every);
    if (auto* s = root.section("data")) {
        try {
            c.data = SyntheticSpec::from_json(*s);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config section 'data': ") + e.what());
        }
    }
    root.finish();
    return c;
}

std::string RunConfig::hash() const { return fnv1a_hex(to_json().dump()); }

EncoderConfig RunConfig::encoder() const {
    EncoderConfig e;
    e.d = d;
    e.heads = heads;
    e.layers = layers;
    e.mlp_ratio = mlp_ratio;
    e.embed_dim = embed_dim;
    e.image_size = data.image_size;
    e.patch = patch;
    e.channels = data.channels;
    return e;
}

FinetuneConfig RunConfig::finetune() const {
    FinetuneConfig f;
    f.method = parse_method(method);
    f.epochs = epochs;
    f.lr = lr;
    f.tau = static_cast<Scalar>(tau);
    f.beta = static_cast<Scalar>(beta);
    f.lambda = lambda;
    f.lora_rank = lora_rank;
    f.lora_alpha = static_cast<Scalar>(lora_alpha);
    f.lora_targets = lora_placement;
    f.aug_multiplier = aug_multiplier;
    f.aug_jitter = static_cast<Scalar>(aug_jitter);
    f.fusion_variant = parse_fusion_variant(fusion_variant);
    f.tia_variant = parse_tia_variant(tia_variant);
    f.ssm_state = ssm_state;
    f.stop_grad_features = stop_grad_features;
    for (const auto& a : ablate) {
        if (a == "fusion") f.ablate.fusion = true;
        if (a == "tia") f.ablate.tia = true;
        if (a == "dgso") f.ablate.dgso = true;
    }
    f.ablate.gate = !gate;
    return f;
}

PretrainConfig RunConfig::pretrain() const {
    PretrainConfig p;
    p.steps = pretrain_steps;
    p.batch = pretrain_batch;
    p.lr = pretrain_lr;
    p.tau = static_cast<Scalar>(pretrain_tau);
    p.domain = source_domain;
    return p;
}

RunConfig load_run_config(const std::string& path) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return RunConfig::from_json(j);
}

}  // namespace vtt::inline VTT_PRECISION_NS
