#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtt/trainer.hpp"

namespace vtt::inline VTT_PRECISION_NS {

// Plot-ready rows shared by every report: (layer, series, value).
struct ReportRow {
    std::size_t layer = 0;
    std::string series;
    double value = 0;
};

struct Report {
    std::string kind;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
    std::vector<ReportRow> rows;

    nlohmann::ordered_json to_json() const;
    static Report from_json(const nlohmann::ordered_json& j);
};

enum class ReportFormat { Csv, Json };
ReportFormat parse_report_format(const std::string& s);

// CSV header is fixed: layer,series,value
void export_report(const Report& report, const std::filesystem::path& path, ReportFormat format);
std::string report_csv(const Report& report);

enum class SweepKind { Remove, Emphasize };
enum class SweepMode { ZeroShot, FineTuned };

std::string to_string(SweepKind k);
std::string to_string(SweepMode m);
SweepKind parse_sweep_kind(const std::string& s);
SweepMode parse_sweep_mode(const std::string& s);

struct SweepReport {
    std::string dataset_id;
    std::string config_hash;
    SweepKind kind = SweepKind::Remove;
    SweepMode mode = SweepMode::ZeroShot;
    Scalar gamma = Scalar(0.2);
    std::size_t episodes = 0;
    double baseline = 0;
    std::vector<double> layer_accuracy;  // entry i-1 is layer i

    // Layer with the highest accuracy, lowest index on ties (1-based).
    std::size_t best_layer() const;
    Report to_report() const;
};

struct SweepOptions {
    SweepKind kind = SweepKind::Remove;
    SweepMode mode = SweepMode::ZeroShot;
    Scalar gamma = Scalar(0.2);
    FinetuneConfig finetune;  // fine_tuned mode only; the method is forced to ce
    std::uint64_t seed = 0;
    std::string dataset_id;
    std::string config_hash;
};

// Mean query accuracy over the episodes with text block i removed (or
// emphasized) for each i, plus the unmodified baseline. Fine-tuned mode trains
// a fresh LoRA per episode against each modified text classifier.
SweepReport layer_mask_sweep(const DualEncoder& model, const Dataset& data, const std::vector<Episode>& episodes,
                             const SweepOptions& opt);

// Accuracy of one episode given [K x D] class embeddings for all classes.
double episode_accuracy(const VisionEncoder& vision, const Dataset& data, const Episode& episode,
                        const Tensor& class_features);

// Per layer: attention mass of row `query_row` on `positions`, summed over the
// positions and averaged over heads. attention[j] is [h x T x T]; an empty
// entry (skipped block) yields NaN.
std::vector<double> attention_category_ratio(const std::vector<Tensor>& attention, std::size_t query_row,
                                             const std::vector<std::size_t>& positions);

// Indices of the k columns of row `query_row` with the largest head-averaged weight.
std::vector<std::size_t> top_attended_tokens(const Tensor& attention, std::size_t query_row, std::size_t k);

struct SimilarityResult {
    double value = 0;
    std::size_t classes_used = 0;
    std::vector<std::string> warnings;
};

// Mean over classes of the mean cosine between same-class features drawn from
// different domains. Classes seen in fewer than two domains are skipped.
SimilarityResult cross_domain_similarity(const Tensor& features, const std::vector<std::size_t>& labels,
                                         const std::vector<std::size_t>& domains);

// Linear CKA with column centering, accumulated in double.
double cka(const Tensor& x, const Tensor& y);

// Adds N(0, stddev) noise to every weight of text block `layer` (1-based).
void corrupt_text_block(TextEncoder& text, std::size_t layer, Scalar stddev, Rng& rng);

}  // namespace vtt::inline VTT_PRECISION_NS
