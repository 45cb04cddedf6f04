#include "vtt/commands.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "vtt/errors.hpp"
#include "vtt/objective.hpp"
#include "vtt/serialize.hpp"

namespace vtt::inline VTT_PRECISION_NS {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParameterError*>(&e) ||
        dynamic_cast<const DataError*>(&e) || dynamic_cast<const VocabularyError*>(&e)) {
        return kExitConfig;
    }
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
        dynamic_cast<const IntegrityError*>(&e)) {
        return kExitIo;
    }
    if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const DegenerateInputError*>(&e)) return kExitNumeric;
    if (dynamic_cast<const CompatibilityError*>(&e)) return kExitCompat;
    return kExitFailure;
}

std::vector<Episode> sample_episodes(const Dataset& data, const RunConfig& cfg, std::size_t domain) {
    std::vector<Episode> out;
    const Rng root = Rng(cfg.seed).split(0xE915);
    for (std::size_t e = 0; e < cfg.episodes; ++e) {
        Rng r = root.split(e);
        out.push_back(sample_episode(data, cfg.n_way, cfg.k_shot, cfg.m_query, r, domain));
    }
    return out;
}

ConfidenceInterval confidence_interval(const std::vector<double>& values) {
    if (values.empty()) throw ContractError("confidence interval of no values");
    ConfidenceInterval ci;
    double s = 0.0;
    for (double v : values) s += v;
    ci.mean = s / static_cast<double>(values.size());
    if (values.size() < 2) return ci;
    double ss = 0.0;
    for (double v : values) ss += (v - ci.mean) * (v - ci.mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    ci.half_width = 1.96 * sd / std::sqrt(static_cast<double>(values.size()));
    return ci;
}

std::string format_ci(const ConfidenceInterval& ci) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100 * ci.mean << " +- ";
    if (ci.half_width) os << 100 * *ci.half_width;
    else os << "n/a";
    return os.str();
}

namespace {

void check_images(const EncoderConfig& enc, const Dataset& data) {
    if (data.images.dim(1) != enc.image_size || data.images.dim(2) != enc.image_size ||
        data.images.dim(3) != enc.channels) {
        throw CompatibilityError("dataset images are " + shape_str({data.images.dim(1), data.images.dim(2), data.images.dim(3)}) +
                                 ", model expects " + std::to_string(enc.image_size) + "x" +
                                 std::to_string(enc.image_size) + "x" + std::to_string(enc.channels));
    }
}

void check_model(const DualEncoder& model, const RunConfig& cfg, const Dataset& data) {
    const auto a = encoder_config_to_json(model.cfg), b = encoder_config_to_json(cfg.encoder());
    if (a != b) throw CompatibilityError("model encoder " + a.dump() + " does not match config " + b.dump());
    if (model.num_classes() != data.num_classes) {
        throw CompatibilityError("model knows " + std::to_string(model.num_classes()) + " classes, dataset has " +
                                 std::to_string(data.num_classes));
    }
    check_images(model.cfg, data);
}

std::string episode_dir_name(std::size_t e) {
    std::ostringstream os;
    os << "ep" << std::setw(3) << std::setfill('0') << e;
    return os.str();
}

nlohmann::ordered_json episode_json(std::size_t index, const Episode& ep) {
    nlohmann::ordered_json j;
    j["index"] = index;
    j["classes"] = ep.classes;
    j["support"] = ep.support;
    j["support_labels"] = ep.support_labels;
    j["query"] = ep.query;
    j["query_labels"] = ep.query_labels;
    return j;
}

Episode episode_from_json(const nlohmann::ordered_json& j) {
    Episode ep;
    ep.classes = j.at("classes").get<std::vector<std::size_t>>();
    ep.support = j.at("support").get<std::vector<std::size_t>>();
    ep.support_labels = j.at("support_labels").get<std::vector<std::size_t>>();
    ep.query = j.at("query").get<std::vector<std::size_t>>();
    ep.query_labels = j.at("query_labels").get<std::vector<std::size_t>>();
    return ep;
}

void save_state(const fs::path& dir, const TrainerState& s) {
    save_bundle(dir / "params", s.params);
    save_bundle(dir / "adam_m", s.adam_m);
    save_bundle(dir / "adam_v", s.adam_v);
    write_json_file(dir / "state.json", s.meta);
}

TrainerState load_state(const fs::path& dir) {
    TrainerState s;
    s.params = load_bundle(dir / "params");
    s.adam_m = load_bundle(dir / "adam_m");
    s.adam_v = load_bundle(dir / "adam_v");
    s.meta = read_json_file(dir / "state.json");
    s.epoch = s.meta.value("epoch", std::size_t{0});
    return s;
}

std::string join_lines(const std::vector<std::string>& lines) {
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
}

// Runs fn(i) for i in [0, n) on `jobs` threads; the exception of the lowest
// failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < std::min(jobs, n); ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

enum class SourceKind { Archive, Bundle, Run };

SourceKind classify_source(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not found: " + dir.string());
    if (fs::exists(dir / "config.json") && fs::is_directory(dir / "base")) return SourceKind::Run;
    const auto manifest = read_json_file(dir / "manifest.json");
    const auto format = manifest.value("format", std::string());
    if (format == "vtt-archive") return SourceKind::Archive;
    if (format == "vtt-params") return SourceKind::Bundle;
    throw FormatError(dir.string() + " is neither a model nor a feature archive");
}

DualEncoder load_model_dir(const fs::path& dir) {
    return load_dual_encoder(classify_source(dir) == SourceKind::Run ? dir / "base" : dir);
}

Tensor as_matrix(const Tensor& t) {
    const std::size_t n = t.dim(0);
    return t.reshape({n, t.numel() / n});
}

struct VisionTraces {
    std::vector<Tensor> layers;  // l x [n x d]
    Tensor features;             // [n x D]
};

VisionTraces vision_traces(const VisionEncoder& enc, const Tensor& images, std::size_t chunk = 64) {
    const std::size_t n = images.dim(0), px = images.numel() / n;
    std::vector<std::vector<Scalar>> layers(enc.blocks.size());
    std::vector<Scalar> feats;
    for (std::size_t s = 0; s < n; s += chunk) {
        const std::size_t m = std::min(chunk, n - s);
        Shape shape = images.shape();
        shape[0] = m;
        Tensor part(shape, std::vector<Scalar>(images.data().begin() + static_cast<std::ptrdiff_t>(s * px),
                                               images.data().begin() + static_cast<std::ptrdiff_t>((s + m) * px)));
        Graph g(false);
        auto pass = enc.forward(g, part);
        for (std::size_t j = 0; j < layers.size(); ++j) {
            const auto& v = pass.trace[j].value();
            layers[j].insert(layers[j].end(), v.data().begin(), v.data().end());
        }
        const auto& f = pass.features.value();
        feats.insert(feats.end(), f.data().begin(), f.data().end());
    }
    VisionTraces out;
    for (auto& l : layers) out.layers.emplace_back(Shape{n, enc.cfg.d}, std::move(l));
    out.features = Tensor({n, enc.cfg.embed_dim}, std::move(feats));
    return out;
}

void write_report_pair(const Report& r, const fs::path& out_dir, const std::string& stem) {
    export_report(r, out_dir / (stem + ".csv"), ReportFormat::Csv);
    export_report(r, out_dir / (stem + ".json"), ReportFormat::Json);
}

}  // namespace

DualEncoder obtain_base_model(const RunConfig& cfg, const Dataset& data, const std::optional<fs::path>& base_dir,
                              std::ostream* log) {
    if (base_dir) {
        auto model = load_model_dir(*base_dir);
        check_model(model, cfg, data);
        return model;
    }
    check_images(cfg.encoder(), data);
    const Rng root = Rng(cfg.seed).split(0xBA5E);
    Rng init_rng = root.split(0), train_rng = root.split(1);
    auto model = DualEncoder::init(cfg.encoder(), data.num_classes, init_rng);
    const auto rep = pretrain(model, data, cfg.pretrain(), train_rng);
    if (log) {
        *log << "pretrained on domain " << cfg.source_domain << " for " << cfg.pretrain_steps
             << " steps, source accuracy " << std::fixed << std::setprecision(2) << 100 * rep.source_accuracy
             << "%\n";
    }
    return model;
}

void cmd_gen_data(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    cfg.validate();
    const auto data = generate_synthetic(cfg.data, cfg.seed);
    save_dataset(out_dir, data);
    out << "dataset " << data.id << ": " << data.num_classes << " classes x " << data.num_domains() << " domains, "
        << data.size() << " images of " << cfg.data.image_size << "x" << cfg.data.image_size << "x"
        << cfg.data.channels << " -> " << out_dir.string() << "\n";
}

void cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out_dir, const TrainOptions& opt,
               std::ostream& out) {
    cfg.validate();
    const auto data = load_dataset(data_dir);
    const auto ft = cfg.finetune();
    std::error_code ec;
    fs::create_directories(out_dir / "episodes", ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    if (opt.resume) {
        if (!fs::exists(out_dir / "config.json")) throw IoError("nothing to resume in " + out_dir.string());
        if (read_text_file(out_dir / "config.json") != cfg.dump()) {
            throw CompatibilityError("resume config differs from the one stored in " + out_dir.string());
        }
    }
    write_text_file(out_dir / "config.json", cfg.dump());

    DualEncoder base = opt.resume && fs::is_directory(out_dir / "base")
                           ? load_dual_encoder(out_dir / "base")
                           : obtain_base_model(cfg, data, opt.base_dir, &out);
    check_model(base, cfg, data);
    if (!(opt.resume && fs::is_directory(out_dir / "base"))) save_dual_encoder(out_dir / "base", base);

    const auto episodes = sample_episodes(data, cfg, cfg.target_domain);
    nlohmann::ordered_json manifest;
    manifest["kind"] = "train-run";
    manifest["dataset_id"] = data.id;
    manifest["config_hash"] = cfg.hash();
    manifest["method"] = cfg.method;
    manifest["seed"] = cfg.seed;
    manifest["episodes"] = nlohmann::ordered_json::array();
    for (std::size_t e = 0; e < episodes.size(); ++e) manifest["episodes"].push_back(episode_json(e, episodes[e]));
    write_json_file(out_dir / "manifest.json", manifest);

    const std::size_t stop = opt.stop_after_epoch ? std::min(*opt.stop_after_epoch, cfg.epochs) : cfg.epochs;
    std::vector<std::string> summaries(episodes.size());
    const Rng train_root = Rng(cfg.seed).split(0x7EA1);

    parallel_for(episodes.size(), cfg.jobs, [&](std::size_t e) {
        const auto& ep = episodes[e];
        const fs::path dir = out_dir / "episodes" / episode_dir_name(e);
        fs::create_directories(dir);
        if (opt.resume && fs::exists(dir / "adapter" / "manifest.json")) {
            summaries[e] = "episode " + std::to_string(e) + ": already complete";
            return;
        }
        EpisodeTrainer tr(base, data.gather(ep.support), ep.support_labels, ep.classes, ft, train_root.split(e));
        std::vector<std::string> lines;
        if (opt.resume && fs::exists(dir / "state" / "state.json")) {
            tr.load_state(load_state(dir / "state"));
            if (fs::exists(dir / "log.jsonl")) {
                std::istringstream is(read_text_file(dir / "log.jsonl"));
                for (std::string line; std::getline(is, line);) {
                    if (line.empty()) continue;
                    if (nlohmann::ordered_json::parse(line).at("epoch").get<std::size_t>() <= tr.epoch()) {
                        lines.push_back(line);
                    }
                }
            }
        }
        std::optional<EpochLog> last;
        while (tr.epoch() < stop) {
            last = tr.run_epoch();
            nlohmann::ordered_json rec;
            rec["episode"] = e;
            const auto fields = last->to_json();
            for (auto& [k, v] : fields.items()) rec[k] = v;
            lines.push_back(rec.dump());
            const bool periodic = cfg.checkpoint_every > 0 && tr.epoch() % cfg.checkpoint_every == 0;
            if (periodic || tr.epoch() == stop) {
                save_state(dir / "state", tr.save_state());
                write_text_file(dir / "log.jsonl", join_lines(lines));
            }
        }
        write_text_file(dir / "log.jsonl", join_lines(lines));
        if (tr.epoch() < cfg.epochs) {
            summaries[e] = "episode " + std::to_string(e) + ": stopped after epoch " + std::to_string(tr.epoch());
            return;
        }
        nlohmann::ordered_json meta;
        meta["episode"] = e;
        meta["epochs"] = tr.epoch();
        meta["method"] = cfg.method;
        meta["lora"] = {{"rank", cfg.lora_rank}, {"alpha", cfg.lora_alpha}, {"placement", cfg.lora_placement}};
        save_bundle(dir / "adapter", tr.lora_params(), meta);
        if (ft.method == Method::VtT) save_bundle(dir / "vtt", tr.vtt_params(), meta);
        std::ostringstream os;
        os << "episode " << e << ": " << tr.epoch() << " epochs";
        if (last) {
            os << ", final L_ce " << std::setprecision(4) << last->l_ce << ", mode " << to_string(last->mode);
        }
        summaries[e] = os.str();
    });

    std::vector<std::string> all;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const auto p = out_dir / "episodes" / episode_dir_name(e) / "log.jsonl";
        if (!fs::exists(p)) continue;
        std::istringstream is(read_text_file(p));
        for (std::string line; std::getline(is, line);)
            if (!line.empty()) all.push_back(line);
    }
    write_text_file(out_dir / "train.jsonl", join_lines(all));
    for (const auto& s : summaries) out << s << "\n";
    out << "wrote " << out_dir.string() << "\n";
}

nlohmann::ordered_json EvalResult::to_json() const {
    nlohmann::ordered_json j;
    j["episodes"] = accuracy.size();
    j["mean_accuracy"] = ci.mean;
    j["ci95"] = ci.half_width ? nlohmann::ordered_json(*ci.half_width) : nlohmann::ordered_json("n/a");
    j["accuracy"] = accuracy;
    j["predictions"] = predictions;
    return j;
}

EvalResult cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, const RunConfig& cfg, const EvalRequest& req,
                    std::ostream& out) {
    const auto data = load_dataset(data_dir);
    const auto kind = classify_source(checkpoint);
    if (kind == SourceKind::Archive) throw CompatibilityError(checkpoint.string() + " is a feature archive, not a checkpoint");

    EvalResult res;
    auto evaluate = [&](const VisionEncoder& vision, const Tensor& text, const Episode& ep) {
        auto pred = predict(similarity(image_features(vision, data.gather(ep.query)), gather_rows(text, ep.classes)));
        res.accuracy.push_back(accuracy(pred, ep.query_labels));
        res.predictions.push_back(std::move(pred));
    };

    if (kind == SourceKind::Bundle) {
        cfg.validate();
        const auto model = load_dual_encoder(checkpoint);
        check_images(model.cfg, data);
        if (model.num_classes() != data.num_classes) throw CompatibilityError("model and dataset class counts differ");
        auto episodes = sample_episodes(data, cfg, cfg.target_domain);
        if (req.episodes) episodes.resize(std::min(*req.episodes, episodes.size()));
        const Tensor text = class_text_features(model.text);
        for (const auto& ep : episodes) evaluate(model.vision, text, ep);
    } else {
        const auto run_cfg = load_run_config((checkpoint / "config.json").string());
        const auto manifest = read_json_file(checkpoint / "manifest.json");
        if (manifest.value("dataset_id", std::string()) != data.id) {
            throw CompatibilityError("checkpoint was trained on dataset '" + manifest.value("dataset_id", std::string()) +
                                     "', got '" + data.id + "'");
        }
        const auto model = load_dual_encoder(checkpoint / "base");
        check_model(model, run_cfg, data);
        const Tensor text = class_text_features(model.text);
        const auto ft = run_cfg.finetune();
        std::size_t n = manifest.at("episodes").size();
        if (req.episodes) {
            if (*req.episodes > n) {
                throw CompatibilityError("checkpoint holds " + std::to_string(n) + " episodes, " +
                                         std::to_string(*req.episodes) + " requested");
            }
            n = *req.episodes;
        }
        for (std::size_t e = 0; e < n; ++e) {
            Episode ep;
            try {
                ep = episode_from_json(manifest.at("episodes").at(e));
            } catch (const nlohmann::json::exception& ex) {
                throw FormatError(std::string("manifest episodes: ") + ex.what());
            }
            if (req.zero_shot) {
                evaluate(model.vision, text, ep);
                continue;
            }
            const fs::path adapter = checkpoint / "episodes" / episode_dir_name(e) / "adapter";
            if (!fs::exists(adapter / "manifest.json")) {
                throw CompatibilityError("episode " + std::to_string(e) + " has no trained adapter");
            }
            evaluate(adapted_vision(model, load_bundle(adapter), ft), text, ep);
        }
    }
    res.ci = confidence_interval(res.accuracy);
    out << (req.zero_shot || kind == SourceKind::Bundle ? "zero-shot " : "") << "accuracy " << format_ci(res.ci)
        << " (95% CI, " << res.accuracy.size() << " episode" << (res.accuracy.size() == 1 ? "" : "s") << ")\n";
    if (req.report) write_json_file(*req.report, res.to_json());
    return res;
}

SweepReport cmd_sweep(const RunConfig& cfg, const fs::path& data_dir, const SweepRequest& req, const fs::path& out_dir,
                      std::ostream& out) {
    cfg.validate();
    const auto data = load_dataset(data_dir);
    auto model = obtain_base_model(cfg, data, req.model_dir, &out);
    if (req.corrupt_layer > 0) {
        Rng r = Rng(cfg.seed).split(0xC0AA);
        corrupt_text_block(model.text, req.corrupt_layer, static_cast<Scalar>(req.corrupt_std), r);
    }
    SweepOptions opt;
    opt.kind = req.kind;
    opt.mode = req.mode;
    opt.gamma = static_cast<Scalar>(cfg.gamma);
    opt.finetune = cfg.finetune();
    opt.seed = cfg.seed;
    opt.dataset_id = data.id;
    opt.config_hash = cfg.hash();
    const auto rep = layer_mask_sweep(model, data, sample_episodes(data, cfg, cfg.target_domain), opt);
    const std::string stem = "sweep_" + to_string(req.kind) + "_" + to_string(req.mode);
    write_report_pair(rep.to_report(), out_dir, stem);
    out << std::fixed << std::setprecision(2) << "baseline " << 100 * rep.baseline << "%\n";
    for (std::size_t i = 0; i < rep.layer_accuracy.size(); ++i) {
        out << to_string(req.kind) << " layer " << i + 1 << ": " << 100 * rep.layer_accuracy[i] << "%\n";
    }
    out << "best layer " << rep.best_layer() << " -> " << (out_dir / (stem + ".csv")).string() << "\n";
    return rep;
}

Report cmd_diagnose(const fs::path& source, const std::string& metric, const std::optional<fs::path>& data_dir,
                    const std::optional<fs::path>& other, const fs::path& out_dir, std::ostream& out) {
    const auto kind = classify_source(source);
    Report rep;
    rep.kind = metric;
    rep.meta["source"] = source.string();

    if (metric == "attention_ratio") {
        if (kind == SourceKind::Archive) throw ParameterError("attention_ratio needs a model, not an archive");
        const auto model = load_model_dir(source);
        std::vector<double> total(model.text.blocks.size(), 0.0);
        for (std::size_t c = 0; c < model.num_classes(); ++c) {
            const auto prompt = tokenize_prompt(model.text.vocab, c);
            const auto trace = encode_text(model.text, prompt).second;
            const auto r = attention_category_ratio(trace.attention, prompt.ids.size() - 1, {prompt.class_pos});
            for (std::size_t j = 0; j < r.size(); ++j) total[j] += r[j];
        }
        for (std::size_t j = 0; j < total.size(); ++j) {
            rep.rows.push_back({j + 1, "category", total[j] / static_cast<double>(model.num_classes())});
        }
    } else if (metric == "cross_domain" || metric == "cka") {
        // Collect named [n x k] matrices with labels and domains.
        std::vector<std::pair<std::string, Tensor>> mats;
        std::vector<std::size_t> labels, domains;
        if (kind == SourceKind::Archive) {
            const auto a = load_feature_archive(source);
            for (const auto& [name, t] : a.tensors) mats.emplace_back(name, as_matrix(t));
            labels = a.labels;
            domains = a.domains;
        } else {
            if (!data_dir) throw ParameterError(metric + " on a model needs --data");
            const auto model = load_model_dir(source);
            const auto data = load_dataset(*data_dir);
            check_images(model.cfg, data);
            const auto tr = vision_traces(model.vision, data.images);
            for (std::size_t j = 0; j < tr.layers.size(); ++j) mats.emplace_back("layer" + std::to_string(j + 1), tr.layers[j]);
            labels = data.labels;
            domains = data.domains;
        }
        if (metric == "cross_domain") {
            if (domains.size() != labels.size()) throw DataError("cross_domain needs domain tags for every sample");
            std::size_t layer = 0;
            for (const auto& [name, m] : mats) {
                const auto r = cross_domain_similarity(m, labels, domains);
                for (const auto& w : r.warnings) out << "warning: " << name << ": " << w << "\n";
                rep.rows.push_back({++layer, name, r.value});
            }
        } else if (other || kind == SourceKind::Archive) {
            std::map<std::string, Tensor> rhs;
            if (other) {
                for (const auto& [name, t] : load_feature_archive(*other).tensors) rhs.emplace(name, as_matrix(t));
            } else {
                for (const auto& [name, t] : mats) rhs.emplace(name, t);
            }
            std::size_t layer = 0;
            for (const auto& [name, m] : mats) {
                auto it = rhs.find(name);
                if (it == rhs.end()) continue;
                rep.rows.push_back({++layer, name, cka(m, it->second)});
            }
            if (rep.rows.empty()) throw DataError("the two archives share no tensor names");
        } else {
            // Model: CKA between source- and target-domain features, paired by (class, index).
            const auto data = load_dataset(*data_dir);
            const std::size_t a = 0, b = data.num_domains() > 1 ? 1 : 0;
            if (a == b) throw DataError("cka across domains needs two domains");
            std::vector<std::size_t> ia, ib;
            for (std::size_t c = 0; c < data.num_classes; ++c) {
                const auto xa = data.indices(c, a), xb = data.indices(c, b);
                for (std::size_t i = 0; i < std::min(xa.size(), xb.size()); ++i) {
                    ia.push_back(xa[i]);
                    ib.push_back(xb[i]);
                }
            }
            std::size_t layer = 0;
            for (const auto& [name, m] : mats) rep.rows.push_back({++layer, name, cka(gather_rows(m, ia), gather_rows(m, ib))});
        }
    } else {
        throw ParameterError("unknown metric '" + metric + "' (expected attention_ratio, cross_domain or cka)");
    }
    write_report_pair(rep, out_dir, metric);
    for (const auto& r : rep.rows) out << metric << " " << r.series << " (" << r.layer << "): " << r.value << "\n";
    return rep;
}

void cmd_export_features(const fs::path& model_dir, const fs::path& data_dir, const fs::path& out_dir,
                         std::ostream& out) {
    const auto model = load_model_dir(model_dir);
    const auto data = load_dataset(data_dir);
    check_images(model.cfg, data);
    const auto tr = vision_traces(model.vision, data.images);
    FeatureArchive a;
    for (std::size_t j = 0; j < tr.layers.size(); ++j) a.tensors.emplace("layer" + std::to_string(j + 1), tr.layers[j]);
    a.tensors.emplace("features", tr.features);
    a.labels = data.labels;
    a.domains = data.domains;
    a.meta["kind"] = "features";
    a.meta["dataset_id"] = data.id;
    save_feature_archive(out_dir, a);
    out << "exported " << a.tensors.size() << " tensors for " << data.size() << " samples -> " << out_dir.string() << "\n";
}

}  // namespace vtt::inline VTT_PRECISION_NS
