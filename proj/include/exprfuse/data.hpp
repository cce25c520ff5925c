#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "exprfuse/labels.hpp"
#include "exprfuse/rng.hpp"
#include "exprfuse/tensor.hpp"

namespace exprfuse {

inline constexpr std::size_t kSequenceLength = 64;

// ---- per-video files -------------------------------------------------------
//
// Feature file, little-endian:
//   magic "EXFT", u32 version (1), u64 rows, u64 cols, rows·cols f64 values
//
// Label file, text: an optional "# exprfuse-labels v1" header, then one class
// code per line (0-7, or -1 for an unannotated frame).

inline constexpr std::uint32_t kFeatureFileVersion = 1;

struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;  // row-major
};

void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& features);
// Throws DataError naming the path on a bad header, truncation or trailing bytes.
FeatureMatrix read_feature_file(const std::filesystem::path& path);
// Header only: {rows, cols}.
std::array<std::size_t, 2> read_feature_header(const std::filesystem::path& path);

void write_label_file(const std::filesystem::path& path, const std::vector<int>& labels);
std::vector<int> read_label_file(const std::filesystem::path& path);

// ---- manifests -------------------------------------------------------------
//
// One video per line: video_id<TAB>frame_count<TAB>features_path<TAB>labels_path.
// Relative paths resolve against the manifest's directory. Lines starting
// with '#' are comments, except "# version: N" and "# split: NAME" headers.

inline constexpr int kManifestVersion = 1;

struct ManifestEntry {
    std::string video_id;
    std::size_t frame_count = 0;
    std::filesystem::path features_path;
    std::filesystem::path labels_path;
};

struct DatasetManifest {
    std::string split;
    std::vector<ManifestEntry> entries;
};

// Parses and validates eagerly: ids are unique, every referenced file exists,
// and feature rows and label lines match the declared frame count. Errors
// are DataError with the manifest path and line number.
DatasetManifest load_manifest(const std::filesystem::path& path, std::size_t feature_dim = 888);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// ---- in-memory dataset -------------------------------------------------------

struct VideoRecords {
    std::string video_id;
    std::size_t frames = 0;
    std::vector<double> features;  // [frames × feature_dim]
    std::vector<int> labels;       // [frames]
};

struct Dataset {
    std::size_t feature_dim = 888;
    std::vector<VideoRecords> videos;

    std::size_t frame_count() const;
    bool empty() const { return videos.empty(); }
};

Dataset load_dataset(const DatasetManifest& manifest, std::size_t feature_dim = 888);

// ---- windows and batches -----------------------------------------------------

// A run of up to kSequenceLength consecutive frames of one video.
struct Window {
    std::size_t video = 0;  // index into Dataset::videos
    std::size_t start = 0;  // first frame
    std::size_t real = 0;   // frames present; the rest is padding
};

// Per video, consecutive non-overlapping windows in frame order. The last
// window of a video is padded when the frame count is not a multiple of
// `length`. Windows never span videos.
std::vector<Window> window_sequences(const Dataset& data, std::size_t length = kSequenceLength);

struct SequenceBatch {
    std::size_t batch = 0;
    std::size_t length = 0;
    std::size_t feature_dim = 0;
    Tensor features;                   // [batch × length × feature_dim], zero at padding
    std::vector<int> labels;           // [batch × length], kIgnoreLabel at padding
    std::vector<unsigned char> mask;   // [batch × length], 1 for real frames
    std::vector<std::size_t> windows;  // window index per row
};

SequenceBatch assemble_batch(const Dataset& data, const std::vector<Window>& windows,
                             std::span<const std::size_t> indices, std::size_t length = kSequenceLength);

// One epoch's batch composition: a seeded permutation of [0, count) cut into
// groups of `batch_size`; the last group may be smaller.
std::vector<std::vector<std::size_t>> batch_order(std::size_t count, std::size_t batch_size, Rng& rng);
// Groups in index order, without shuffling (evaluation).
std::vector<std::vector<std::size_t>> sequential_order(std::size_t count, std::size_t batch_size);

std::vector<SequenceBatch> make_batches(const Dataset& data, const std::vector<Window>& windows,
                                        std::size_t batch_size, Rng& rng);

// Real positions of a batch row, in order.
std::vector<int> real_labels(const SequenceBatch& batch, std::size_t row);

// ---- synthetic fixture -------------------------------------------------------

struct FixtureSpec {
    std::size_t videos = 16;
    std::size_t frames_per_video = 256;
    std::array<double, kLabelCount> class_distribution{1, 1, 1, 1, 1, 1, 1, 1};  // unnormalized
    double noise = 0.1;
    std::size_t feature_dim = 888;
    std::size_t min_segment = 8;  // label runs have a length in [min_segment, max_segment]
    std::size_t max_segment = 32;
    std::uint64_t seed = 0;
};

void validate(const FixtureSpec& spec);

// Class means are N(0, 1) per dimension and depend only on the seed, so
// splits generated from one seed share them. Frames are labeled in runs whose
// class is drawn from the distribution; features are mean + noise·N(0, 1).
// `split_stream` selects an independent sample stream for each split.
Dataset synthesize_fixture(const FixtureSpec& spec, std::uint64_t split_stream);

// Writes one feature file and one label file per video plus manifest.tsv
// into `dir`; returns the manifest path.
std::filesystem::path write_dataset(const Dataset& data, const std::filesystem::path& dir, const std::string& split);

}  // namespace exprfuse
