#include "exprfuse/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "exprfuse/errors.hpp"
#include "exprfuse/io.hpp"
#include "exprfuse/keyvalue.hpp"

namespace exprfuse {

namespace fs = std::filesystem;

namespace {

constexpr unsigned char kFeatureMagic[4] = {'E', 'X', 'F', 'T'};
constexpr std::string_view kLabelHeader = "# exprfuse-labels v1";

[[noreturn]] void data_fail(const std::string& msg) { throw DataError(msg); }

std::string where(const fs::path& path, std::size_t line) { return path.string() + ":" + std::to_string(line); }

bool parse_whole_int(std::string_view s, long long& out) {
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        pos = end + 1;
    }
    return lines;
}

}  // namespace

void write_feature_file(const fs::path& path, const FeatureMatrix& features) {
    if (features.values.size() != features.rows * features.cols) {
        throw DimensionError("feature matrix holds " + std::to_string(features.values.size()) + " values, expected " +
                             std::to_string(features.rows) + "x" + std::to_string(features.cols));
    }
    ByteWriter w;
    w.bytes(kFeatureMagic);
    w.u32(kFeatureFileVersion);
    w.u64(features.rows);
    w.u64(features.cols);
    for (double v : features.values) w.f64(v);
    write_file_atomic(path, w.data());
}

namespace {

struct FeatureHeader {
    std::size_t rows = 0;
    std::size_t cols = 0;
};

FeatureHeader parse_feature_header(ByteReader& r, const fs::path& path) {
    const auto magic = r.bytes(4);
    if (!std::equal(magic.begin(), magic.end(), std::begin(kFeatureMagic))) data_fail(path.string() + ": not a feature file");
    const std::uint32_t version = r.u32();
    if (version != kFeatureFileVersion) {
        data_fail(path.string() + ": unsupported feature file version " + std::to_string(version));
    }
    FeatureHeader h;
    h.rows = r.u64();
    h.cols = r.u64();
    return h;
}

}  // namespace

FeatureMatrix read_feature_file(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes, [](const std::string& m) { data_fail("feature file truncated: " + m); });
    const FeatureHeader h = parse_feature_header(r, path);
    if (h.cols != 0 && h.rows > r.remaining() / 8 / h.cols) {
        data_fail(path.string() + ": header declares " + std::to_string(h.rows) + "x" + std::to_string(h.cols) +
                  " values but the file is shorter");
    }
    FeatureMatrix m;
    m.rows = h.rows;
    m.cols = h.cols;
    m.values.resize(h.rows * h.cols);
    for (double& v : m.values) v = r.f64();
    if (r.remaining() != 0) data_fail(path.string() + ": trailing bytes after feature data");
    return m;
}

std::array<std::size_t, 2> read_feature_header(const fs::path& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (f == nullptr) data_fail("cannot open " + path.string());
    unsigned char head[24];
    const std::size_t got = std::fread(head, 1, sizeof(head), f);
    std::fclose(f);
    ByteReader r(std::span<const unsigned char>(head, got),
                 [](const std::string& m) { data_fail("feature header truncated: " + m); });
    const FeatureHeader h = parse_feature_header(r, path);
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    if (ec || size != 24 + 8 * h.rows * h.cols) {
        data_fail(path.string() + ": file size does not match its " + std::to_string(h.rows) + "x" +
                  std::to_string(h.cols) + " header");
    }
    return {h.rows, h.cols};
}

void write_label_file(const fs::path& path, const std::vector<int>& labels) {
    std::string text(kLabelHeader);
    text += '\n';
    for (int l : labels) {
        if (!is_class_code(l) && l != kIgnoreLabel) throw InputError("label " + std::to_string(l) + " is not a class code");
        text += std::to_string(l);
        text += '\n';
    }
    write_file_atomic(path, text);
}

std::vector<int> read_label_file(const fs::path& path) {
    const std::string text = read_file_text(path);
    std::vector<int> labels;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string line = trim(lines[i]);
        if (line.empty()) {
            if (i + 1 == lines.size()) break;
            data_fail(where(path, i + 1) + ": empty line");
        }
        if (line[0] == '#') {
            if (i == 0 && line == kLabelHeader) continue;
            data_fail(where(path, i + 1) + ": unexpected header '" + line + "'");
        }
        long long v = 0;
        if (!parse_whole_int(line, v) || v < kIgnoreLabel || v >= kLabelCount) {
            data_fail(where(path, i + 1) + ": '" + line + "' is not a label code in 0..7 or " +
                      std::to_string(kIgnoreLabel));
        }
        labels.push_back(static_cast<int>(v));
    }
    return labels;
}

DatasetManifest load_manifest(const fs::path& path, std::size_t feature_dim) {
    if (!fs::exists(path)) data_fail("manifest not found: " + path.string());
    const std::string text = read_file_text(path);
    const fs::path base = path.parent_path();
    DatasetManifest m;
    std::set<std::string> seen;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string loc = where(path, i + 1);
        const std::string line = trim(lines[i]);
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string body = trim(std::string_view(line).substr(1));
            if (body.rfind("version:", 0) == 0) {
                long long v = 0;
                if (!parse_whole_int(trim(std::string_view(body).substr(8)), v) || v != kManifestVersion) {
                    data_fail(loc + ": unsupported manifest version");
                }
            } else if (body.rfind("split:", 0) == 0) {
                m.split = trim(std::string_view(body).substr(6));
            }
            continue;
        }
        std::vector<std::string> fields;
        std::size_t pos = 0;
        const std::string_view raw = lines[i];
        while (true) {
            const std::size_t tab = raw.find('\t', pos);
            fields.push_back(trim(raw.substr(pos, tab == std::string_view::npos ? std::string_view::npos : tab - pos)));
            if (tab == std::string_view::npos) break;
            pos = tab + 1;
        }
        if (fields.size() != 4) {
            data_fail(loc + ": expected 4 tab-separated fields, found " + std::to_string(fields.size()));
        }
        ManifestEntry e;
        e.video_id = fields[0];
        if (e.video_id.empty()) data_fail(loc + ": empty video id");
        if (!seen.insert(e.video_id).second) data_fail(loc + ": duplicate video id '" + e.video_id + "'");
        long long frames = 0;
        if (!parse_whole_int(fields[1], frames) || frames <= 0) {
            data_fail(loc + ": frame count '" + fields[1] + "' is not a positive integer");
        }
        e.frame_count = static_cast<std::size_t>(frames);
        e.features_path = fs::path(fields[2]).is_absolute() ? fs::path(fields[2]) : base / fields[2];
        e.labels_path = fs::path(fields[3]).is_absolute() ? fs::path(fields[3]) : base / fields[3];
        for (const auto* p : {&e.features_path, &e.labels_path}) {
            if (!fs::exists(*p)) data_fail(loc + ": missing file " + p->string());
        }
        std::array<std::size_t, 2> shape{};
        try {
            shape = read_feature_header(e.features_path);
        } catch (const DataError& err) {
            data_fail(loc + ": " + err.what());
        }
        if (shape[0] != e.frame_count) {
            data_fail(loc + ": " + e.features_path.string() + " has " + std::to_string(shape[0]) + " rows, manifest says " +
                      std::to_string(e.frame_count));
        }
        if (shape[1] != feature_dim) {
            data_fail(loc + ": " + e.features_path.string() + " has width " + std::to_string(shape[1]) + ", expected " +
                      std::to_string(feature_dim));
        }
        std::size_t label_count = 0;
        try {
            label_count = read_label_file(e.labels_path).size();
        } catch (const DataError& err) {
            data_fail(loc + ": " + err.what());
        }
        if (label_count != e.frame_count) {
            data_fail(loc + ": " + e.labels_path.string() + " has " + std::to_string(label_count) +
                      " labels, manifest says " + std::to_string(e.frame_count));
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
    std::string text = "# version: " + std::to_string(kManifestVersion) + "\n";
    if (!manifest.split.empty()) text += "# split: " + manifest.split + "\n";
    const fs::path base = path.parent_path();
    auto rel = [&](const fs::path& p) {
        const fs::path r = p.lexically_relative(base);
        return (r.empty() ? p : r).generic_string();
    };
    for (const auto& e : manifest.entries) {
        text += e.video_id + "\t" + std::to_string(e.frame_count) + "\t" + rel(e.features_path) + "\t" +
                rel(e.labels_path) + "\n";
    }
    write_file_atomic(path, text);
}

std::size_t Dataset::frame_count() const {
    std::size_t n = 0;
    for (const auto& v : videos) n += v.frames;
    return n;
}

Dataset load_dataset(const DatasetManifest& manifest, std::size_t feature_dim) {
    Dataset d;
    d.feature_dim = feature_dim;
    for (const auto& e : manifest.entries) {
        FeatureMatrix f = read_feature_file(e.features_path);
        if (f.rows != e.frame_count || f.cols != feature_dim) {
            data_fail(e.features_path.string() + " changed shape since the manifest was loaded");
        }
        VideoRecords v;
        v.video_id = e.video_id;
        v.frames = e.frame_count;
        v.features = std::move(f.values);
        v.labels = read_label_file(e.labels_path);
        if (v.labels.size() != v.frames) data_fail(e.labels_path.string() + " changed since the manifest was loaded");
        for (double x : v.features) {
            if (!std::isfinite(x)) data_fail(e.features_path.string() + " contains NaN or Inf");
        }
        d.videos.push_back(std::move(v));
    }
    return d;
}

std::vector<Window> window_sequences(const Dataset& data, std::size_t length) {
    if (length == 0) throw ConfigError("window length must be positive");
    std::vector<Window> out;
    for (std::size_t v = 0; v < data.videos.size(); ++v) {
        const std::size_t frames = data.videos[v].frames;
        for (std::size_t start = 0; start < frames; start += length) {
            out.push_back({v, start, std::min(length, frames - start)});
        }
    }
    return out;
}

SequenceBatch assemble_batch(const Dataset& data, const std::vector<Window>& windows,
                             std::span<const std::size_t> indices, std::size_t length) {
    if (indices.empty()) throw ContractError("cannot assemble an empty batch");
    const std::size_t d = data.feature_dim;
    SequenceBatch b;
    b.batch = indices.size();
    b.length = length;
    b.feature_dim = d;
    b.features = Tensor({b.batch, length, d});
    b.labels.assign(b.batch * length, kIgnoreLabel);
    b.mask.assign(b.batch * length, 0);
    auto out = b.features.mutable_values();
    for (std::size_t row = 0; row < b.batch; ++row) {
        const Window& w = windows.at(indices[row]);
        if (w.real > length) throw ContractError("window longer than the batch sequence length");
        const VideoRecords& video = data.videos.at(w.video);
        std::copy_n(video.features.begin() + static_cast<std::ptrdiff_t>(w.start * d), w.real * d,
                    out.begin() + static_cast<std::ptrdiff_t>(row * length * d));
        for (std::size_t t = 0; t < w.real; ++t) {
            b.labels[row * length + t] = video.labels[w.start + t];
            b.mask[row * length + t] = 1;
        }
        b.windows.push_back(indices[row]);
    }
    return b;
}

std::vector<std::vector<std::size_t>> sequential_order(std::size_t count, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t start = 0; start < count; start += batch_size) {
        std::vector<std::size_t> g;
        for (std::size_t i = start; i < std::min(count, start + batch_size); ++i) g.push_back(i);
        groups.push_back(std::move(g));
    }
    return groups;
}

std::vector<std::vector<std::size_t>> batch_order(std::size_t count, std::size_t batch_size, Rng& rng) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    std::vector<std::size_t> perm(count);
    for (std::size_t i = 0; i < count; ++i) perm[i] = i;
    rng.shuffle(perm);
    auto groups = sequential_order(count, batch_size);
    for (auto& g : groups)
        for (auto& i : g) i = perm[i];
    return groups;
}

std::vector<SequenceBatch> make_batches(const Dataset& data, const std::vector<Window>& windows,
                                        std::size_t batch_size, Rng& rng) {
    std::vector<SequenceBatch> out;
    for (const auto& g : batch_order(windows.size(), batch_size, rng)) out.push_back(assemble_batch(data, windows, g));
    return out;
}

std::vector<int> real_labels(const SequenceBatch& batch, std::size_t row) {
    std::vector<int> out;
    for (std::size_t t = 0; t < batch.length; ++t) {
        if (batch.mask[row * batch.length + t]) out.push_back(batch.labels[row * batch.length + t]);
    }
    return out;
}

void validate(const FixtureSpec& spec) {
    double total = 0.0;
    for (double p : spec.class_distribution) {
        if (!std::isfinite(p) || p < 0.0) throw ConfigError("fixture class distribution must be finite and nonnegative");
        total += p;
    }
    if (!(total > 0.0)) throw ConfigError("fixture class distribution has no mass");
    if (!std::isfinite(spec.noise) || spec.noise < 0.0) throw ConfigError("fixture noise must be nonnegative");
    if (spec.videos == 0 || spec.frames_per_video == 0) throw ConfigError("fixture needs at least one frame");
    if (spec.feature_dim == 0) throw ConfigError("fixture feature_dim must be positive");
    if (spec.min_segment == 0 || spec.min_segment > spec.max_segment) {
        throw ConfigError("fixture segment lengths must satisfy 0 < min <= max");
    }
}

namespace {

int draw_class(const std::array<double, kLabelCount>& dist, double total, Rng& rng) {
    const double u = rng.uniform() * total;
    double cum = 0.0;
    int last = 0;
    for (int c = 0; c < kLabelCount; ++c) {
        if (dist[c] <= 0.0) continue;
        cum += dist[c];
        last = c;
        if (u < cum) return c;
    }
    return last;
}

}  // namespace

Dataset synthesize_fixture(const FixtureSpec& spec, std::uint64_t split_stream) {
    validate(spec);
    const Rng root(spec.seed);
    Rng mean_rng = root.fork(1);
    std::vector<std::vector<double>> means(kLabelCount, std::vector<double>(spec.feature_dim));
    for (auto& m : means)
        for (double& v : m) v = mean_rng.normal();

    double total = 0.0;
    for (double p : spec.class_distribution) total += p;

    Rng rng = root.fork(100 + split_stream);
    Dataset d;
    d.feature_dim = spec.feature_dim;
    for (std::size_t v = 0; v < spec.videos; ++v) {
        VideoRecords video;
        char id[32];
        std::snprintf(id, sizeof(id), "video%04zu", v);
        video.video_id = id;
        video.frames = spec.frames_per_video;
        video.labels.reserve(video.frames);
        while (video.labels.size() < video.frames) {
            const std::size_t run = spec.min_segment + rng.below(spec.max_segment - spec.min_segment + 1);
            const int c = draw_class(spec.class_distribution, total, rng);
            for (std::size_t i = 0; i < run && video.labels.size() < video.frames; ++i) video.labels.push_back(c);
        }
        video.features.resize(video.frames * spec.feature_dim);
        for (std::size_t f = 0; f < video.frames; ++f) {
            const auto& m = means[video.labels[f]];
            double* row = video.features.data() + f * spec.feature_dim;
            for (std::size_t j = 0; j < spec.feature_dim; ++j) {
                row[j] = spec.noise == 0.0 ? m[j] : m[j] + spec.noise * rng.normal();
            }
        }
        d.videos.push_back(std::move(video));
    }
    return d;
}

fs::path write_dataset(const Dataset& data, const fs::path& dir, const std::string& split) {
    fs::create_directories(dir);
    DatasetManifest m;
    m.split = split;
    for (const auto& v : data.videos) {
        ManifestEntry e;
        e.video_id = v.video_id;
        e.frame_count = v.frames;
        e.features_path = dir / (v.video_id + ".feat");
        e.labels_path = dir / (v.video_id + ".labels");
        write_feature_file(e.features_path, {v.frames, data.feature_dim, v.features});
        write_label_file(e.labels_path, v.labels);
        m.entries.push_back(std::move(e));
    }
    const fs::path manifest = dir / "manifest.tsv";
    write_manifest(manifest, m);
    return manifest;
}

}  // namespace exprfuse
