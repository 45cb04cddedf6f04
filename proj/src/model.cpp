#include "vtt/model.hpp"

#include <cmath>

#include "vtt/dgso.hpp"
#include "vtt/errors.hpp"
#include "vtt/objective.hpp"
#include "vtt/serialize.hpp"

namespace vtt::inline VTT_PRECISION_NS {

NamedTensors snapshot(const VisitFn& visit, bool trainable_only) {
    NamedTensors out;
    visit([&](const std::string& name, Param& p) {
        if (!trainable_only || p.trainable) out.emplace(name, p.value);
    });
    return out;
}

void restore(const VisitFn& visit, const NamedTensors& tensors) {
    visit([&](const std::string& name, Param& p) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw CompatibilityError("missing parameter '" + name + "'");
        if (it->second.shape() != p.value.shape()) {
            throw CompatibilityError("parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                                     ", model expects " + shape_str(p.value.shape()));
        }
        p.value = it->second;
    });
}

void set_trainable(const VisitFn& visit, bool trainable) {
    visit([&](const std::string&, Param& p) { p.trainable = trainable; });
}

void save_bundle(const std::filesystem::path& dir, const NamedTensors& tensors, const nlohmann::ordered_json& meta) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    nlohmann::ordered_json manifest;
    manifest["format"] = "vtt-params";
    manifest["version"] = 1;
    manifest["tensors"] = nlohmann::ordered_json::array();
    for (const auto& [name, t] : tensors) {
        write_tensor(dir / (name + ".vtt"), t);
        manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
    }
    manifest["meta"] = meta;
    write_json_file(dir / "manifest.json", manifest);
}

NamedTensors load_bundle(const std::filesystem::path& dir, nlohmann::ordered_json* meta) {
    if (!std::filesystem::is_directory(dir)) throw IoError("parameter directory not found: " + dir.string());
    const auto manifest = read_json_file(dir / "manifest.json");
    NamedTensors out;
    try {
        if (manifest.at("format").get<std::string>() != "vtt-params") {
            throw FormatError(dir.string() + " is not a parameter bundle");
        }
        for (const auto& e : manifest.at("tensors")) {
            const auto name = e.at("name").get<std::string>();
            Tensor t = read_tensor(dir / (name + ".vtt"));
            if (t.shape() != e.at("shape").get<Shape>()) {
                throw IntegrityError("tensor '" + name + "' does not match its manifest shape");
            }
            out.emplace(name, std::move(t));
        }
        if (meta) *meta = manifest.value("meta", nlohmann::ordered_json::object());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(dir.string() + "/manifest.json: " + e.what());
    }
    return out;
}

DualEncoder DualEncoder::init(const EncoderConfig& cfg, std::size_t num_classes, Rng& rng) {
    Rng rv = rng.split(1), rt = rng.split(2);
    return DualEncoder{cfg, VisionEncoder::init(cfg, rv), TextEncoder::init(cfg, num_classes, rt)};
}

void DualEncoder::visit(const ParamVisitor& fn) {
    vision.visit("vision", fn);
    text.visit("text", fn);
}

nlohmann::ordered_json encoder_config_to_json(const EncoderConfig& c) {
    return {{"d", c.d},           {"heads", c.heads}, {"layers", c.layers},         {"mlp_ratio", c.mlp_ratio},
            {"embed_dim", c.embed_dim}, {"image_size", c.image_size}, {"patch", c.patch}, {"channels", c.channels}};
}

EncoderConfig encoder_config_from_json(const nlohmann::ordered_json& j) {
    EncoderConfig c;
    c.d = j.value("d", c.d);
    c.heads = j.value("heads", c.heads);
    c.layers = j.value("layers", c.layers);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.image_size = j.value("image_size", c.image_size);
    c.patch = j.value("patch", c.patch);
    c.channels = j.value("channels", c.channels);
    return c;
}

void save_dual_encoder(const std::filesystem::path& dir, DualEncoder& model) {
    nlohmann::ordered_json meta;
    meta["kind"] = "dual-encoder";
    meta["encoder"] = encoder_config_to_json(model.cfg);
    meta["num_classes"] = model.num_classes();
    save_bundle(dir, snapshot([&](const ParamVisitor& fn) { model.visit(fn); }), meta);
}

DualEncoder load_dual_encoder(const std::filesystem::path& dir) {
    nlohmann::ordered_json meta;
    auto tensors = load_bundle(dir, &meta);
    if (meta.value("kind", std::string()) != "dual-encoder") {
        throw CompatibilityError(dir.string() + " does not hold a dual encoder");
    }
    EncoderConfig cfg;
    std::size_t classes = 0;
    try {
        cfg = encoder_config_from_json(meta.at("encoder"));
        classes = meta.at("num_classes").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(dir.string() + ": " + e.what());
    }
    Rng rng(0);
    auto model = DualEncoder::init(cfg, classes, rng);
    restore([&](const ParamVisitor& fn) { model.visit(fn); }, tensors);
    return model;
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& rows) {
    const std::size_t c = table.cols();
    std::vector<Scalar> out;
    out.reserve(rows.size() * c);
    for (auto r : rows) {
        if (r >= table.rows()) throw DimensionError("gather_rows index out of range");
        out.insert(out.end(), table.data().begin() + static_cast<std::ptrdiff_t>(r * c),
                   table.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
    }
    return Tensor({rows.size(), c}, std::move(out));
}

Tensor image_features(const VisionEncoder& enc, const Tensor& images, std::size_t chunk) {
    if (images.rank() != 4) throw DimensionError("image_features expects [n x H x W x C]");
    const std::size_t n = images.dim(0), px = images.numel() / n;
    std::vector<Scalar> out;
    for (std::size_t s = 0; s < n; s += chunk) {
        const std::size_t m = std::min(chunk, n - s);
        Shape shape = images.shape();
        shape[0] = m;
        Tensor part(shape, std::vector<Scalar>(images.data().begin() + static_cast<std::ptrdiff_t>(s * px),
                                               images.data().begin() + static_cast<std::ptrdiff_t>((s + m) * px)));
        Graph g(false);
        const auto f = enc.forward(g, part).features.value();
        out.insert(out.end(), f.data().begin(), f.data().end());
    }
    return Tensor({n, enc.cfg.embed_dim}, std::move(out));
}

PretrainReport pretrain(DualEncoder& model, const Dataset& data, const PretrainConfig& cfg, Rng& rng) {
    if (cfg.batch == 0 || cfg.tau <= 0) throw ParameterError("pretrain needs batch > 0 and tau > 0");
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (data.domains[i] == cfg.domain) pool.push_back(i);
    if (pool.empty()) throw DataError("no samples in pretraining domain " + std::to_string(cfg.domain));
    if (data.num_classes != model.num_classes()) throw CompatibilityError("dataset and model class counts differ");

    std::vector<Param*> params;
    model.visit([&](const std::string&, Param& p) {
        if (p.trainable) params.push_back(&p);
    });
    std::vector<PromptTokens> prompts;
    for (std::size_t c = 0; c < model.num_classes(); ++c) prompts.push_back(tokenize_prompt(model.text.vocab, c));

    Adam adam(cfg.lr);
    PretrainReport report;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Rng r = rng.split(step);
        const auto pick = r.sample_without_replacement(pool.size(), std::min(cfg.batch, pool.size()));
        std::vector<std::size_t> idx, labels;
        for (auto p : pick) {
            idx.push_back(pool[p]);
            labels.push_back(data.labels[pool[p]]);
        }
        Graph g;
        auto f = model.vision.forward(g, data.gather(idx)).features;
        auto t = model.text.forward(g, prompts).features;
        auto loss = cross_entropy_loss(similarity(f, t), labels, cfg.tau);
        const double l = loss.value().item();
        if (!std::isfinite(l)) throw NumericError("pretraining loss became non-finite at step " + std::to_string(step));
        report.losses.push_back(l);
        g.tape.backward(loss);
        std::vector<Tensor> grads;
        for (auto* p : params) grads.push_back(g.grad(*p));
        adam.step(params, grads);
    }
    const auto feats = image_features(model.vision, data.gather(pool));
    std::vector<std::size_t> labels;
    for (auto i : pool) labels.push_back(data.labels[i]);
    report.source_accuracy = accuracy(predict(similarity(feats, class_text_features(model.text))), labels);
    return report;
}

}  // namespace vtt::inline VTT_PRECISION_NS
