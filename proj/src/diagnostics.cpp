#include "vtt/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "vtt/errors.hpp"
#include "vtt/objective.hpp"
#include "vtt/serialize.hpp"

namespace vtt::inline VTT_PRECISION_NS {

nlohmann::ordered_json Report::to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = kind;
    j["meta"] = meta;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json row;
        row["layer"] = r.layer;
        row["series"] = r.series;
        if (std::isfinite(r.value)) row["value"] = r.value;
        else row["value"] = nullptr;
        j["rows"].push_back(row);
    }
    return j;
}

Report Report::from_json(const nlohmann::ordered_json& j) {
    Report r;
    try {
        r.kind = j.at("kind").get<std::string>();
        r.meta = j.value("meta", nlohmann::ordered_json::object());
        for (const auto& row : j.at("rows")) {
            const auto& v = row.at("value");
            r.rows.push_back({row.at("layer").get<std::size_t>(), row.at("series").get<std::string>(),
                              v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("report: ") + e.what());
    }
    return r;
}

ReportFormat parse_report_format(const std::string& s) {
    if (s == "csv") return ReportFormat::Csv;
    if (s == "json") return ReportFormat::Json;
    throw ParameterError("unknown report format '" + s + "'");
}

std::string report_csv(const Report& report) {
    std::ostringstream os;
    os.precision(17);
    os << "layer,series,value\n";
    for (const auto& r : report.rows) {
        os << r.layer << ',' << r.series << ',';
        if (std::isfinite(r.value)) os << r.value;
        else os << "nan";
        os << '\n';
    }
    return os.str();
}

void export_report(const Report& report, const std::filesystem::path& path, ReportFormat format) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
    }
    if (format == ReportFormat::Csv) write_text_file(path, report_csv(report));
    else write_json_file(path, report.to_json());
}

std::string to_string(SweepKind k) { return k == SweepKind::Remove ? "remove" : "emphasize"; }
std::string to_string(SweepMode m) { return m == SweepMode::ZeroShot ? "zero_shot" : "fine_tuned"; }

SweepKind parse_sweep_kind(const std::string& s) {
    if (s == "remove") return SweepKind::Remove;
    if (s == "emphasize") return SweepKind::Emphasize;
    throw ParameterError("unknown sweep kind '" + s + "' (expected remove or emphasize)");
}

SweepMode parse_sweep_mode(const std::string& s) {
    if (s == "zero_shot" || s == "zero-shot") return SweepMode::ZeroShot;
    if (s == "fine_tuned" || s == "fine-tuned") return SweepMode::FineTuned;
    throw ParameterError("unknown sweep mode '" + s + "' (expected zero_shot or fine_tuned)");
}

std::size_t SweepReport::best_layer() const {
    if (layer_accuracy.empty()) throw ContractError("empty sweep report");
    return static_cast<std::size_t>(std::max_element(layer_accuracy.begin(), layer_accuracy.end()) -
                                    layer_accuracy.begin()) + 1;
}

Report SweepReport::to_report() const {
    Report r;
    r.kind = "layer_sweep";
    r.meta["dataset_id"] = dataset_id;
    r.meta["config_hash"] = config_hash;
    r.meta["sweep"] = to_string(kind);
    r.meta["mode"] = to_string(mode);
    if (kind == SweepKind::Emphasize) r.meta["gamma"] = gamma;
    r.meta["episodes"] = episodes;
    r.rows.push_back({0, "baseline", baseline});
    for (std::size_t i = 0; i < layer_accuracy.size(); ++i) r.rows.push_back({i + 1, to_string(kind), layer_accuracy[i]});
    return r;
}

double episode_accuracy(const VisionEncoder& vision, const Dataset& data, const Episode& episode,
                        const Tensor& class_features) {
    const Tensor t = gather_rows(class_features, episode.classes);
    return accuracy(predict(similarity(image_features(vision, data.gather(episode.query)), t)), episode.query_labels);
}

SweepReport layer_mask_sweep(const DualEncoder& model, const Dataset& data, const std::vector<Episode>& episodes,
                             const SweepOptions& opt) {
    const std::size_t l = model.text.blocks.size();
    if (l < 2) throw ParameterError("layer sweep needs at least 2 text layers");
    if (episodes.empty()) throw ParameterError("layer sweep needs at least one episode");

    std::vector<Tensor> classifiers{class_text_features(model.text)};
    for (std::size_t i = 1; i <= l; ++i) {
        classifiers.push_back(opt.kind == SweepKind::Remove
                                  ? class_text_features_masked(model.text, i)
                                  : class_text_features_emphasized(model.text, i, opt.gamma));
    }

    std::vector<double> acc(classifiers.size(), 0.0);
    if (opt.mode == SweepMode::ZeroShot) {
        for (const auto& ep : episodes) {
            const Tensor q = image_features(model.vision, data.gather(ep.query));
            for (std::size_t c = 0; c < classifiers.size(); ++c) {
                acc[c] += accuracy(predict(similarity(q, gather_rows(classifiers[c], ep.classes))), ep.query_labels);
            }
        }
    } else {
        FinetuneConfig ft = opt.finetune;
        ft.method = Method::Ce;
        const Rng root(opt.seed);
        for (std::size_t e = 0; e < episodes.size(); ++e) {
            const auto& ep = episodes[e];
            const Tensor support = data.gather(ep.support), query = data.gather(ep.query);
            for (std::size_t c = 0; c < classifiers.size(); ++c) {
                // Same adapter init for every classifier so the layers differ only in the text side.
                EpisodeTrainer tr(model, support, ep.support_labels, ep.classes, ft, root.split(e), classifiers[c]);
                tr.run(ft.epochs);
                acc[c] += accuracy(tr.predict_query(query), ep.query_labels);
            }
        }
    }

    SweepReport rep;
    rep.dataset_id = opt.dataset_id;
    rep.config_hash = opt.config_hash;
    rep.kind = opt.kind;
    rep.mode = opt.mode;
    rep.gamma = opt.gamma;
    rep.episodes = episodes.size();
    const double n = static_cast<double>(episodes.size());
    rep.baseline = acc[0] / n;
    for (std::size_t i = 1; i < acc.size(); ++i) rep.layer_accuracy.push_back(acc[i] / n);
    return rep;
}

std::vector<double> attention_category_ratio(const std::vector<Tensor>& attention, std::size_t query_row,
                                             const std::vector<std::size_t>& positions) {
    std::vector<double> out;
    for (const auto& a : attention) {
        if (a.rank() != 3) {
            out.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        const std::size_t h = a.dim(0), T = a.dim(1);
        if (a.dim(2) != T) throw DimensionError("attention maps must be [h x T x T]");
        if (query_row >= T) throw ParameterError("query row " + std::to_string(query_row) + " outside " + std::to_string(T) + " tokens");
        for (auto p : positions)
            if (p >= T) throw ParameterError("category position " + std::to_string(p) + " outside " + std::to_string(T) + " tokens");
        double total = 0.0;
        for (std::size_t k = 0; k < h; ++k) {
            const std::size_t base = (k * T + query_row) * T;
            for (auto p : positions) total += a[base + p];
        }
        out.push_back(total / static_cast<double>(h));
    }
    return out;
}

std::vector<std::size_t> top_attended_tokens(const Tensor& attention, std::size_t query_row, std::size_t k) {
    if (attention.rank() != 3 || attention.dim(1) != attention.dim(2)) {
        throw DimensionError("attention maps must be [h x T x T]");
    }
    const std::size_t h = attention.dim(0), T = attention.dim(1);
    if (query_row >= T) throw ParameterError("query row outside the sequence");
    std::vector<double> w(T, 0.0);
    for (std::size_t hd = 0; hd < h; ++hd)
        for (std::size_t j = 0; j < T; ++j) w[j] += attention[(hd * T + query_row) * T + j];
    std::vector<std::size_t> idx(T);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
    idx.resize(std::min(k, T));
    return idx;
}

SimilarityResult cross_domain_similarity(const Tensor& features, const std::vector<std::size_t>& labels,
                                         const std::vector<std::size_t>& domains) {
    if (features.rank() != 2 || features.rows() != labels.size() || labels.size() != domains.size()) {
        throw DimensionError("cross_domain_similarity expects [n x d] features with n labels and n domains");
    }
    const std::size_t n = labels.size(), d = features.cols();
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        norms[i] = norm2(features.data().subspan(i * d, d));
        if (norms[i] == 0) throw DegenerateInputError("feature row " + std::to_string(i) + " is zero");
    }
    SimilarityResult res;
    double total = 0.0;
    const std::size_t classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    for (std::size_t c = 0; c < classes; ++c) {
        double s = 0.0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] != c) continue;
            for (std::size_t j = i + 1; j < n; ++j) {
                if (labels[j] != c || domains[j] == domains[i]) continue;
                s += dot(features.data().subspan(i * d, d), features.data().subspan(j * d, d)) / (norms[i] * norms[j]);
                ++pairs;
            }
        }
        if (pairs == 0) {
            res.warnings.push_back("class " + std::to_string(c) + " has samples from fewer than two domains; skipped");
            continue;
        }
        total += s / static_cast<double>(pairs);
        ++res.classes_used;
    }
    if (res.classes_used == 0) throw DataError("no class has samples from two or more domains");
    res.value = total / static_cast<double>(res.classes_used);
    return res;
}

namespace {

std::vector<double> centered(const Tensor& x) {
    const std::size_t n = x.rows(), d = x.cols();
    std::vector<double> out(n * d);
    for (std::size_t j = 0; j < d; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += x[i * d + j];
        m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) out[i * d + j] = x[i * d + j] - m;
    }
    return out;
}

// || A^T B ||_F^2 for row-major [n x p] and [n x q].
double cross_frobenius_sq(const std::vector<double>& a, std::size_t p, const std::vector<double>& b, std::size_t q,
                          std::size_t n) {
    double total = 0.0;
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < q; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += a[r * p + i] * b[r * q + j];
            total += s * s;
        }
    return total;
}

}  // namespace

double cka(const Tensor& x, const Tensor& y) {
    if (x.rank() != 2 || y.rank() != 2 || x.rows() != y.rows()) {
        throw DimensionError("cka expects [n x d1] and [n x d2] with equal n");
    }
    const std::size_t n = x.rows();
    if (n < 2) throw DimensionError("cka needs at least 2 samples");
    const auto xc = centered(x), yc = centered(y);
    const double xy = cross_frobenius_sq(xc, x.cols(), yc, y.cols(), n);
    const double xx = std::sqrt(cross_frobenius_sq(xc, x.cols(), xc, x.cols(), n));
    const double yy = std::sqrt(cross_frobenius_sq(yc, y.cols(), yc, y.cols(), n));
    if (xx == 0 || yy == 0) throw DegenerateInputError("cka input has zero variance");
    return xy / (xx * yy);
}

void corrupt_text_block(TextEncoder& text, std::size_t layer, Scalar stddev, Rng& rng) {
    if (layer < 1 || layer > text.blocks.size()) throw ParameterError("corrupted layer out of range");
    text.blocks[layer - 1].visit("", [&](const std::string& name, Param& p) {
        if (name.find(".ln") == 0) return;
        std::vector<Scalar> v = p.value.to_vector();
        for (auto& x : v) x += rng.normal(0, stddev);
        p.value = Tensor(p.value.shape(), std::move(v));
    });
}

}  // namespace vtt::inline VTT_PRECISION_NS
