#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vtt/random.hpp"

namespace vtt::inline VTT_PRECISION_NS {

// Per-domain style applied on top of the class pattern.
struct DomainStyle {
    std::vector<double> gain{1, 1, 1};  // per channel
    std::vector<double> bias{0, 0, 0};  // per channel
    double noise = 0.1;                 // Gaussian sigma
    bool permute_patches = false;       // fixed shuffle of 4x4 patches, seeded per domain
};

struct SyntheticSpec {
    std::size_t num_classes = 5;
    std::size_t per_class = 60;  // images per (class, domain)
    std::size_t image_size = 16;
    std::size_t channels = 3;
    std::uint64_t pattern_seed = 7;
    std::size_t max_shift = 2;  // circular translation, pixels
    double amplitude_jitter = 0.2;
    double clutter = 0.35;  // weight of a random distractor pattern
    std::vector<DomainStyle> domains = default_domains();

    static std::vector<DomainStyle> default_domains();
    void validate() const;
    nlohmann::ordered_json to_json() const;
    static SyntheticSpec from_json(const nlohmann::ordered_json& j);
};

struct Dataset {
    std::string id;
    Tensor images;  // [n x H x W x C]
    std::vector<std::size_t> labels;
    std::vector<std::size_t> domains;
    std::size_t num_classes = 0;
    nlohmann::ordered_json spec;

    std::size_t size() const { return labels.size(); }
    Tensor image(std::size_t i) const;
    Tensor gather(const std::vector<std::size_t>& idx) const;  // [k x H x W x C]
    // Indices of every sample with this class and domain, ascending.
    std::vector<std::size_t> indices(std::size_t cls, std::size_t domain) const;
    std::size_t num_domains() const;
};

// Deterministic in (spec, seed). Images of one class share a pattern across
// domains; the domain only contributes the style and noise.
Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

struct Episode {
    std::vector<std::size_t> classes;  // dataset class ids, position = episode label
    std::vector<std::size_t> support;  // dataset indices
    std::vector<std::size_t> query;
    std::vector<std::size_t> support_labels;  // episode-local labels 0..N-1
    std::vector<std::size_t> query_labels;
};

// N classes without replacement, then K + M samples per class without
// replacement from `domain`. Labels are the dataset class ids when N equals
// the number of classes and the classes come out in ascending order;
// in general they index `classes`.
Episode sample_episode(const Dataset& data, std::size_t n_way, std::size_t k_shot, std::size_t m_query, Rng& rng,
                       std::size_t domain);

struct AugmentedSet {
    Tensor images;  // [n*multiplier x H x W x C]
    std::vector<std::size_t> labels;
};

// Original images, then for copy k = 1..multiplier-1 a horizontal flip when k
// is odd, each copy with Gaussian jitter of `jitter` sigma.
AugmentedSet augment_support(const Tensor& images, const std::vector<std::size_t>& labels, std::size_t multiplier,
                             Scalar jitter, Rng& rng);

// Directory of named VTT1 tensors plus manifest.json with labels and domains.
struct FeatureArchive {
    std::map<std::string, Tensor> tensors;
    std::vector<std::size_t> labels;
    std::vector<std::size_t> domains;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

void save_feature_archive(const std::filesystem::path& dir, const FeatureArchive& archive);
FeatureArchive load_feature_archive(const std::filesystem::path& dir);

void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace vtt::inline VTT_PRECISION_NS
