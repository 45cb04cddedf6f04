#include "vtt/episodes.hpp"

#include <algorithm>
#include <cmath>

#include "vtt/errors.hpp"
#include "vtt/serialize.hpp"

namespace vtt::inline VTT_PRECISION_NS {

std::vector<DomainStyle> SyntheticSpec::default_domains() {
    DomainStyle source;
    DomainStyle target;
    target.gain = {0.6, -0.4, 1.4};
    target.bias = {0.3, -0.2, 0.2};
    target.noise = 0.2;
    return {source, target};
}

void SyntheticSpec::validate() const {
    if (num_classes < 2) throw ParameterError("num_classes must be >= 2");
    if (domains.empty()) throw ParameterError("at least one domain is required");
    if (per_class == 0) throw ParameterError("per_class must be positive");
    if (image_size == 0 || channels == 0) throw ParameterError("image dims must be positive");
    if (amplitude_jitter < 0 || amplitude_jitter >= 1) throw ParameterError("amplitude_jitter must be in [0, 1)");
    if (clutter < 0) throw ParameterError("clutter must be >= 0");
    for (std::size_t d = 0; d < domains.size(); ++d) {
        const auto& s = domains[d];
        if (s.noise < 0) throw ParameterError("domains[" + std::to_string(d) + "].noise (sigma) must be >= 0");
        if (s.gain.size() != channels || s.bias.size() != channels) {
            throw ParameterError("domains[" + std::to_string(d) + "] gain/bias need one entry per channel");
        }
        if (s.permute_patches && image_size % 4 != 0) throw ParameterError("patch permutation needs size % 4 == 0");
    }
}

nlohmann::ordered_json SyntheticSpec::to_json() const {
    nlohmann::ordered_json j;
    j["num_classes"] = num_classes;
    j["per_class"] = per_class;
    j["image_size"] = image_size;
    j["channels"] = channels;
    j["pattern_seed"] = pattern_seed;
    j["max_shift"] = max_shift;
    j["amplitude_jitter"] = amplitude_jitter;
    j["clutter"] = clutter;
    j["domains"] = nlohmann::ordered_json::array();
    for (const auto& s : domains) {
        nlohmann::ordered_json d;
        d["gain"] = s.gain;
        d["bias"] = s.bias;
        d["noise"] = s.noise;
        d["permute_patches"] = s.permute_patches;
        j["domains"].push_back(d);
    }
    return j;
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::ordered_json& j) {
    SyntheticSpec s;
    s.num_classes = j.value("num_classes", s.num_classes);
    s.per_class = j.value("per_class", s.per_class);
    s.image_size = j.value("image_size", s.image_size);
    s.channels = j.value("channels", s.channels);
    s.pattern_seed = j.value("pattern_seed", s.pattern_seed);
    s.max_shift = j.value("max_shift", s.max_shift);
    s.amplitude_jitter = j.value("amplitude_jitter", s.amplitude_jitter);
    s.clutter = j.value("clutter", s.clutter);
    if (j.contains("domains")) {
        s.domains.clear();
        for (const auto& d : j.at("domains")) {
            DomainStyle st;
            st.gain = d.value("gain", st.gain);
            st.bias = d.value("bias", st.bias);
            st.noise = d.value("noise", st.noise);
            st.permute_patches = d.value("permute_patches", st.permute_patches);
            s.domains.push_back(st);
        }
    }
    return s;
}

Tensor Dataset::image(std::size_t i) const {
    if (i >= size()) throw DataError("sample index out of range");
    const std::size_t H = images.dim(1), W = images.dim(2), C = images.dim(3), n = H * W * C;
    std::vector<Scalar> px(images.data().begin() + static_cast<std::ptrdiff_t>(i * n),
                           images.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    return Tensor({H, W, C}, std::move(px));
}

Tensor Dataset::gather(const std::vector<std::size_t>& idx) const {
    if (idx.empty()) throw DataError("gather of no samples");
    const std::size_t H = images.dim(1), W = images.dim(2), C = images.dim(3), n = H * W * C;
    std::vector<Scalar> px;
    px.reserve(idx.size() * n);
    for (auto i : idx) {
        if (i >= size()) throw DataError("sample index out of range");
        px.insert(px.end(), images.data().begin() + static_cast<std::ptrdiff_t>(i * n),
                  images.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    }
    return Tensor({idx.size(), H, W, C}, std::move(px));
}

std::vector<std::size_t> Dataset::indices(std::size_t cls, std::size_t domain) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
        if (labels[i] == cls && domains[i] == domain) out.push_back(i);
    return out;
}

std::size_t Dataset::num_domains() const {
    std::size_t m = 0;
    for (auto d : domains) m = std::max(m, d + 1);
    return m;
}

namespace {

// A smooth random image: a few coloured Gaussian blobs plus a coloured grating,
// scaled to unit RMS.
std::vector<double> random_pattern(Rng& rng, std::size_t size, std::size_t channels) {
    std::vector<double> img(size * size * channels, 0.0);
    const double s = static_cast<double>(size);
    for (int blob = 0; blob < 3; ++blob) {
        const double cy = rng.uniform() * s, cx = rng.uniform() * s;
        const double width = 1.5 + rng.uniform() * 3.0;
        std::vector<double> colour(channels);
        for (auto& c : colour) c = 2.0 * rng.uniform() - 1.0;
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
                const double w = std::exp(-(dx * dx + dy * dy) / (2 * width * width));
                for (std::size_t c = 0; c < channels; ++c) img[(y * size + x) * channels + c] += w * colour[c];
            }
    }
    const double theta = rng.uniform() * M_PI, freq = 0.3 + rng.uniform() * 0.9, phase = rng.uniform() * 2 * M_PI;
    std::vector<double> colour(channels);
    for (auto& c : colour) c = 2.0 * rng.uniform() - 1.0;
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double v = 0.6 * std::sin(freq * (std::cos(theta) * static_cast<double>(x) +
                                                    std::sin(theta) * static_cast<double>(y)) + phase);
            for (std::size_t c = 0; c < channels; ++c) img[(y * size + x) * channels + c] += v * colour[c];
        }
    double ss = 0.0;
    for (double v : img) ss += v * v;
    const double rms = std::sqrt(ss / static_cast<double>(img.size()));
    for (double& v : img) v /= rms > 0 ? rms : 1.0;
    return img;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    const std::size_t S = spec.image_size, C = spec.channels, n_px = S * S * C;
    Rng pattern_rng(spec.pattern_seed);
    std::vector<std::vector<double>> patterns;
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
        Rng r = pattern_rng.split(k);
        patterns.push_back(random_pattern(r, S, C));
    }
    // Patch permutations depend only on the domain index and seed.
    std::vector<std::vector<std::size_t>> perms;
    for (std::size_t d = 0; d < spec.domains.size(); ++d) {
        Rng r = Rng(seed).split(0xD0000 + d);
        perms.push_back(r.permutation((S / 4) * (S / 4)));
    }

    Dataset data;
    data.num_classes = spec.num_classes;
    data.spec = spec.to_json();
    data.spec["seed"] = seed;
    data.id = "synthetic-" + fnv1a_hex(data.spec.dump()).substr(0, 12);
    std::vector<Scalar> px;
    px.reserve(spec.domains.size() * spec.num_classes * spec.per_class * n_px);
    const Rng root(seed);
    for (std::size_t d = 0; d < spec.domains.size(); ++d) {
        const auto& style = spec.domains[d];
        for (std::size_t k = 0; k < spec.num_classes; ++k) {
            for (std::size_t i = 0; i < spec.per_class; ++i) {
                Rng r = root.split(d + 1).split(k).split(i);
                const auto span = static_cast<std::size_t>(2 * spec.max_shift + 1);
                const long sy = static_cast<long>(r.below(span)) - static_cast<long>(spec.max_shift);
                const long sx = static_cast<long>(r.below(span)) - static_cast<long>(spec.max_shift);
                const double amp = 1.0 + spec.amplitude_jitter * (2.0 * r.uniform() - 1.0);
                const auto distractor = random_pattern(r, S, C);
                std::vector<double> img(n_px);
                for (std::size_t y = 0; y < S; ++y)
                    for (std::size_t x = 0; x < S; ++x) {
                        const std::size_t yy = static_cast<std::size_t>((static_cast<long>(y + S) - sy) % static_cast<long>(S));
                        const std::size_t xx = static_cast<std::size_t>((static_cast<long>(x + S) - sx) % static_cast<long>(S));
                        for (std::size_t c = 0; c < C; ++c) {
                            img[(y * S + x) * C + c] = amp * patterns[k][(yy * S + xx) * C + c] +
                                                       spec.clutter * distractor[(y * S + x) * C + c];
                        }
                    }
                if (style.permute_patches) {
                    std::vector<double> moved(n_px);
                    const std::size_t g = S / 4;
                    for (std::size_t p = 0; p < g * g; ++p) {
                        const std::size_t q = perms[d][p];
                        for (std::size_t dy = 0; dy < 4; ++dy)
                            for (std::size_t dx = 0; dx < 4; ++dx)
                                for (std::size_t c = 0; c < C; ++c)
                                    moved[(((p / g) * 4 + dy) * S + (p % g) * 4 + dx) * C + c] =
                                        img[(((q / g) * 4 + dy) * S + (q % g) * 4 + dx) * C + c];
                    }
                    img.swap(moved);
                }
                for (std::size_t j = 0; j < n_px; ++j) {
                    const std::size_t c = j % C;
                    const double v = style.gain[c] * img[j] + style.bias[c];
                    px.push_back(static_cast<Scalar>(v + (style.noise > 0 ? r.normal(0, static_cast<Scalar>(style.noise)) : 0)));
                }
                data.labels.push_back(k);
                data.domains.push_back(d);
            }
        }
    }
    data.images = Tensor({data.labels.size(), S, S, C}, std::move(px));
    return data;
}

Episode sample_episode(const Dataset& data, std::size_t n_way, std::size_t k_shot, std::size_t m_query, Rng& rng,
                       std::size_t domain) {
    if (n_way == 0 || k_shot == 0) throw ParameterError("n_way and k_shot must be positive");
    if (n_way > data.num_classes) {
        throw DataError("episode needs " + std::to_string(n_way) + " classes, dataset has " +
                        std::to_string(data.num_classes));
    }
    Episode ep;
    ep.classes = rng.sample_without_replacement(data.num_classes, n_way);
    std::sort(ep.classes.begin(), ep.classes.end());
    for (std::size_t label = 0; label < n_way; ++label) {
        const auto pool = data.indices(ep.classes[label], domain);
        if (pool.size() < k_shot + m_query) {
            throw DataError("class " + std::to_string(ep.classes[label]) + " in domain " + std::to_string(domain) +
                            " has " + std::to_string(pool.size()) + " samples, episode needs " +
                            std::to_string(k_shot + m_query));
        }
        const auto pick = rng.sample_without_replacement(pool.size(), k_shot + m_query);
        for (std::size_t j = 0; j < k_shot; ++j) {
            ep.support.push_back(pool[pick[j]]);
            ep.support_labels.push_back(label);
        }
        for (std::size_t j = k_shot; j < k_shot + m_query; ++j) {
            ep.query.push_back(pool[pick[j]]);
            ep.query_labels.push_back(label);
        }
    }
    return ep;
}

AugmentedSet augment_support(const Tensor& images, const std::vector<std::size_t>& labels, std::size_t multiplier,
                             Scalar jitter, Rng& rng) {
    if (images.rank() != 4 || images.dim(0) != labels.size() || labels.empty()) {
        throw DimensionError("augment_support expects [n x H x W x C] images with n labels");
    }
    if (multiplier == 0) throw ParameterError("augmentation multiplier must be positive");
    if (jitter < 0) throw ParameterError("augmentation jitter must be >= 0");
    const std::size_t n = images.dim(0), H = images.dim(1), W = images.dim(2), C = images.dim(3), px = H * W * C;
    std::vector<Scalar> out(images.data().begin(), images.data().end());
    out.reserve(n * px * multiplier);
    AugmentedSet set;
    set.labels = labels;
    for (std::size_t k = 1; k < multiplier; ++k) {
        const bool flip = k % 2 == 1;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t y = 0; y < H; ++y)
                for (std::size_t x = 0; x < W; ++x)
                    for (std::size_t c = 0; c < C; ++c) {
                        const std::size_t sx = flip ? W - 1 - x : x;
                        const Scalar v = images.data()[i * px + (y * W + sx) * C + c];
                        out.push_back(jitter > 0 ? static_cast<Scalar>(v + rng.normal(0, jitter)) : v);
                    }
            set.labels.push_back(labels[i]);
        }
    }
    set.images = Tensor({n * multiplier, H, W, C}, std::move(out));
    return set;
}

void save_feature_archive(const std::filesystem::path& dir, const FeatureArchive& archive) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    nlohmann::ordered_json manifest;
    manifest["format"] = "vtt-archive";
    manifest["version"] = 1;
    manifest["count"] = archive.labels.size();
    manifest["labels"] = archive.labels;
    manifest["domains"] = archive.domains;
    manifest["tensors"] = nlohmann::ordered_json::array();
    for (const auto& [name, t] : archive.tensors) {
        const std::string file = name + ".vtt";
        write_tensor(dir / file, t);
        manifest["tensors"].push_back({{"name", name}, {"file", file}, {"shape", t.shape()}});
    }
    manifest["meta"] = archive.meta;
    write_json_file(dir / "manifest.json", manifest);
}

FeatureArchive load_feature_archive(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("archive directory not found: " + dir.string());
    const auto manifest = read_json_file(dir / "manifest.json");
    FeatureArchive a;
    try {
        if (manifest.at("format").get<std::string>() != "vtt-archive") throw FormatError("not a vtt archive");
        a.labels = manifest.at("labels").get<std::vector<std::size_t>>();
        a.domains = manifest.value("domains", std::vector<std::size_t>{});
        a.meta = manifest.value("meta", nlohmann::ordered_json::object());
        if (manifest.at("count").get<std::size_t>() != a.labels.size()) {
            throw IntegrityError("manifest count differs from label count");
        }
        for (const auto& entry : manifest.at("tensors")) {
            const auto name = entry.at("name").get<std::string>();
            Tensor t = read_tensor(dir / entry.at("file").get<std::string>());
            if (t.shape() != entry.at("shape").get<Shape>()) {
                throw IntegrityError("tensor '" + name + "' shape " + shape_str(t.shape()) +
                                     " differs from manifest");
            }
            if (t.dim(0) != a.labels.size()) {
                throw IntegrityError("tensor '" + name + "' has " + std::to_string(t.dim(0)) + " rows but " +
                                     std::to_string(a.labels.size()) + " labels");
            }
            a.tensors.emplace(name, std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(dir.string() + "/manifest.json: " + e.what());
    }
    if (!a.domains.empty() && a.domains.size() != a.labels.size()) {
        throw IntegrityError("domain count differs from label count");
    }
    return a;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
    FeatureArchive a;
    a.tensors.emplace("images", data.images);
    a.labels = data.labels;
    a.domains = data.domains;
    a.meta["kind"] = "dataset";
    a.meta["id"] = data.id;
    a.meta["num_classes"] = data.num_classes;
    a.meta["spec"] = data.spec;
    save_feature_archive(dir, a);
}

Dataset load_dataset(const std::filesystem::path& dir) {
    auto a = load_feature_archive(dir);
    auto it = a.tensors.find("images");
    if (it == a.tensors.end() || it->second.rank() != 4) throw IntegrityError("dataset archive lacks an images tensor");
    Dataset d;
    d.images = it->second;
    d.labels = a.labels;
    d.domains = a.domains.empty() ? std::vector<std::size_t>(a.labels.size(), 0) : a.domains;
    d.id = a.meta.value("id", std::string("external"));
    d.spec = a.meta.value("spec", nlohmann::ordered_json::object());
    std::size_t k = 0;
    for (auto l : d.labels) k = std::max(k, l + 1);
    d.num_classes = a.meta.value("num_classes", k);
    return d;
}

}  // namespace vtt::inline VTT_PRECISION_NS
