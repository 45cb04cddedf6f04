#include "vtt/trainer.hpp"

#include <cmath>

#include "vtt/errors.hpp"
#include "vtt/objective.hpp"

namespace vtt::inline VTT_PRECISION_NS {

std::string to_string(Method m) { return m == Method::VtT ? "vtt" : "ce"; }

Method parse_method(const std::string& s) {
    if (s == "vtt") return Method::VtT;
    if (s == "ce") return Method::Ce;
    throw ParameterError("unknown method '" + s + "' (expected vtt or ce)");
}

void FinetuneConfig::validate() const {
    if (!(tau > 0)) throw ParameterError("tau must be > 0");
    if (!(beta >= 0)) throw ParameterError("beta must be >= 0");
    if (!(lr > 0)) throw ParameterError("lr must be > 0");
    if (lora_rank == 0) throw ParameterError("lora rank must be positive");
    if (!(lora_alpha > 0)) throw ParameterError("lora alpha must be > 0");
    if (lora_targets.empty()) throw ParameterError("lora placement must name at least one projection");
    if (aug_multiplier == 0) throw ParameterError("augmentation multiplier must be positive");
    if (!(aug_jitter >= 0)) throw ParameterError("augmentation jitter must be >= 0");
    if (ssm_state == 0) throw ParameterError("ssm state size must be positive");
}

nlohmann::ordered_json EpochLog::to_json() const {
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["step"] = step;
    j["L_ce"] = l_ce;
    j["L_VtT"] = l_vtt ? nlohmann::ordered_json(*l_vtt) : nlohmann::ordered_json(nullptr);
    j["C"] = conflict ? nlohmann::ordered_json(*conflict) : nlohmann::ordered_json(nullptr);
    j["M_e"] = window ? nlohmann::ordered_json(*window) : nlohmann::ordered_json(nullptr);
    j["mode"] = to_string(mode);
    return j;
}

namespace {

void freeze(VisionEncoder& v) {
    v.visit("", [](const std::string&, Param& p) { p.trainable = false; });
}

void attach_adapters(VisionEncoder& v, const FinetuneConfig& cfg, Rng& rng) {
    for (std::size_t i = 0; i < v.blocks.size(); ++i) {
        Rng r = rng.split(i);
        attach_lora(v.blocks[i].attn, cfg.lora_targets, cfg.lora_rank, cfg.lora_alpha, r);
    }
}

bool is_lora(const std::string& name) { return name.find(".lora_") != std::string::npos; }

double checked(const ad::Var& loss, const char* what, std::size_t epoch) {
    const double v = loss.value().item();
    if (!std::isfinite(v)) {
        throw NumericError(std::string(what) + " is non-finite at epoch " + std::to_string(epoch));
    }
    return v;
}

}  // namespace

VisionEncoder adapted_vision(const DualEncoder& base, const NamedTensors& lora, const FinetuneConfig& cfg) {
    VisionEncoder v = base.vision;
    Rng rng(0);
    attach_adapters(v, cfg, rng);
    NamedTensors want;
    v.visit("vision", [&](const std::string& name, Param& p) {
        if (!is_lora(name)) return;
        auto it = lora.find(name);
        if (it == lora.end()) throw CompatibilityError("adapter file lacks '" + name + "'");
        if (it->second.shape() != p.value.shape()) {
            throw CompatibilityError("adapter '" + name + "' has shape " + shape_str(it->second.shape()) +
                                     ", model expects " + shape_str(p.value.shape()));
        }
        p.value = it->second;
    });
    return v;
}

EpisodeTrainer::EpisodeTrainer(const DualEncoder& base, const Tensor& support_images,
                               std::vector<std::size_t> support_labels, std::vector<std::size_t> classes,
                               const FinetuneConfig& cfg, Rng rng, std::optional<Tensor> class_features)
    : base_(&base),
      cfg_(cfg),
      rng_(rng),
      support_(support_images),
      labels_(std::move(support_labels)),
      classes_(std::move(classes)),
      monitor_(cfg.lambda),
      adam_(cfg.lr) {
    cfg_.validate();
    if (classes_.empty()) throw ParameterError("episode has no classes");
    for (auto c : classes_)
        if (c >= base.num_classes()) throw CompatibilityError("episode class " + std::to_string(c) + " unknown to model");
    for (auto l : labels_)
        if (l >= classes_.size()) throw DataError("support label outside the episode classes");

    vision_ = base.vision;
    freeze(vision_);
    Rng lora_rng = rng_.split(1);
    attach_adapters(vision_, cfg_, lora_rng);

    const auto& ec = base.cfg;
    Rng fusion_rng = rng_.split(2), absorber_rng = rng_.split(3);
    fusion_ = FusionParams::init(ec.d, ec.embed_dim, ec.layers, cfg_.ssm_state, fusion_rng, cfg_.fusion_variant);
    if (cfg_.ablate.tia) {
        // Without the text pass mu itself is compared with f, and a zero mu has no direction.
        fusion_.m2_out = Linear::init(ec.d, ec.embed_dim, fusion_rng);
        fusion_.out = Linear::init(ec.d, ec.embed_dim, fusion_rng);
    }
    absorber_ = AbsorberAdapter::init(ec.embed_dim, ec.d, absorber_rng);

    text_features_ = gather_rows(class_features ? *class_features : class_text_features(base.text), classes_);
    text_traces_ = class_text_traces(base.text);
    if (cfg_.method == Method::Ce) next_mode_ = LossMode::CeOnly;
}

void EpisodeTrainer::visit_trainables(const ParamVisitor& fn) {
    vision_.visit("vision", [&](const std::string& name, Param& p) {
        if (p.trainable) fn(name, p);
    });
    if (cfg_.method == Method::VtT) {
        fusion_.visit("fusion", fn);
        absorber_.visit("absorber", fn);
    }
}

EpochLog EpisodeTrainer::run_epoch() {
    const std::size_t e = ++epoch_;
    Rng aug_rng = rng_.split(1000 + e);
    const auto aug = augment_support(support_, labels_, cfg_.aug_multiplier, cfg_.aug_jitter, aug_rng);
    const std::size_t n = aug.labels.size();

    EpochLog log;
    log.epoch = e;
    log.mode = next_mode_;

    Graph g;
    auto pass = vision_.forward(g, aug.images);
    ad::Var l_ce = cross_entropy_loss(similarity(pass.features, g.constant(text_features_)), aug.labels, cfg_.tau);
    log.l_ce = checked(l_ce, "L_ce", e);

    std::vector<std::string> names;
    std::vector<Param*> params;
    visit_trainables([&](const std::string& name, Param& p) {
        names.push_back(name);
        params.push_back(&p);
    });

    std::vector<Tensor> final_grads;
    if (log.mode == LossMode::CeOnly) {
        g.tape.backward(l_ce);
        for (auto* p : params) final_grads.push_back(g.grad(*p));
    } else {
        std::vector<std::size_t> sample_class(n);
        for (std::size_t i = 0; i < n; ++i) sample_class[i] = classes_[aug.labels[i]];
        ad::Var f = cfg_.stop_grad_features ? ad::detach(pass.features) : pass.features;

        ad::Var mu;
        if (cfg_.ablate.fusion) {
            mu = pass.features;
        } else {
            std::vector<ad::Var> text;
            for (const auto& t : text_traces_) text.push_back(g.constant(gather_rows(t, sample_class)));
            mu = fusion_forward(g, fusion_, pass.trace, text);
        }
        ad::Var l_vtt;
        if (cfg_.ablate.tia) {
            l_vtt = vtt_loss(mu, f);
        } else {
            std::vector<PromptTokens> prompts;
            for (auto c : sample_class) prompts.push_back(tokenize_prompt(base_->text.vocab, c));
            ad::Var absorber = make_absorber(g, absorber_, mu);
            ad::Var injected = inject_absorber(g, base_->text, prompts, absorber, cfg_.tia_variant);
            l_vtt = vtt_loss(absorb(g, base_->text, injected, n), f);
        }
        log.l_vtt = checked(l_vtt, "L_VtT", e);
        ad::Var l_comb = combined_loss(l_ce, l_vtt, cfg_.beta);
        checked(l_comb, "L_comb", e);

        g.tape.backward(l_ce);
        std::vector<Tensor> g_ce;
        for (auto* p : params) g_ce.push_back(g.grad(*p));
        g.tape.backward(l_comb);

        std::vector<double> conflicts;
        for (std::size_t k = 0; k < params.size(); ++k) {
            Tensor g_comb = g.grad(*params[k]);
            if (is_lora(names[k])) conflicts.push_back(grad_cosine(g_ce[k], g_comb));
            final_grads.push_back(cfg_.ablate.dgso ? g_comb : correct_gradient(g_ce[k], g_comb));
        }
        const double c = mean_conflict(conflicts);
        monitor_.push(c);
        const double m = monitor_.window_mean(monitor_.queue().size());
        log.conflict = c;
        log.window = m;
        next_mode_ = (cfg_.ablate.dgso || cfg_.ablate.gate) ? LossMode::Combined : monitor_.select_loss(m);
    }
    adam_.step(params, final_grads);
    log.step = adam_.steps();
    return log;
}

std::vector<EpochLog> EpisodeTrainer::run(std::size_t epochs) {
    std::vector<EpochLog> logs;
    for (std::size_t i = 0; i < epochs; ++i) logs.push_back(run_epoch());
    return logs;
}

NamedTensors EpisodeTrainer::lora_params() const {
    NamedTensors out;
    const_cast<VisionEncoder&>(vision_).visit("vision", [&](const std::string& name, Param& p) {
        if (is_lora(name)) out.emplace(name, p.value);
    });
    return out;
}

NamedTensors EpisodeTrainer::vtt_params() const {
    NamedTensors out;
    if (cfg_.method != Method::VtT) return out;
    auto keep = [&](const std::string& name, Param& p) { out.emplace(name, p.value); };
    const_cast<FusionParams&>(fusion_).visit("fusion", keep);
    const_cast<AbsorberAdapter&>(absorber_).visit("absorber", keep);
    return out;
}

TrainerState EpisodeTrainer::save_state() const {
    TrainerState s;
    s.epoch = epoch_;
    std::vector<std::string> names;
    const_cast<EpisodeTrainer*>(this)->visit_trainables([&](const std::string& name, Param& p) {
        names.push_back(name);
        s.params.emplace(name, p.value);
    });
    for (std::size_t k = 0; k < adam_.first_moments().size(); ++k) {
        s.adam_m.emplace(names[k], adam_.first_moments()[k]);
        s.adam_v.emplace(names[k], adam_.second_moments()[k]);
    }
    s.meta["epoch"] = epoch_;
    s.meta["adam_steps"] = adam_.steps();
    s.meta["next_mode"] = to_string(next_mode_);
    s.meta["monitor"] = monitor_.to_json();
    s.meta["method"] = to_string(cfg_.method);
    return s;
}

void EpisodeTrainer::load_state(const TrainerState& s) {
    std::vector<std::string> names;
    visit_trainables([&](const std::string& name, Param& p) {
        auto it = s.params.find(name);
        if (it == s.params.end() || it->second.shape() != p.value.shape()) {
            throw CompatibilityError("checkpoint does not match trainable '" + name + "'");
        }
        p.value = it->second;
        names.push_back(name);
    });
    try {
        if (s.meta.at("method").get<std::string>() != to_string(cfg_.method)) {
            throw CompatibilityError("checkpoint was written by a different method");
        }
        epoch_ = s.meta.at("epoch").get<std::size_t>();
        const auto steps = s.meta.at("adam_steps").get<std::size_t>();
        next_mode_ = s.meta.at("next_mode").get<std::string>() == "ce_only" ? LossMode::CeOnly : LossMode::Combined;
        monitor_ = ConflictMonitor::from_json(s.meta.at("monitor"));
        std::vector<Tensor> m, v;
        if (steps > 0) {
            for (const auto& name : names) {
                auto im = s.adam_m.find(name), iv = s.adam_v.find(name);
                if (im == s.adam_m.end() || iv == s.adam_v.end()) {
                    throw IntegrityError("checkpoint lacks optimizer moments for '" + name + "'");
                }
                m.push_back(im->second);
                v.push_back(iv->second);
            }
        }
        adam_.restore(steps, std::move(m), std::move(v));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("trainer state: ") + e.what());
    }
}

std::vector<std::size_t> EpisodeTrainer::predict_query(const Tensor& images) const {
    return predict(similarity(image_features(vision_, images), text_features_));
}

}  // namespace vtt::inline VTT_PRECISION_NS
