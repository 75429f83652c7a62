#ifndef PNEUMO_DATA_HPP
#define PNEUMO_DATA_HPP

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pneumo/sample.hpp"
#include "pneumo/tensor.hpp"
#include "pneumo/train.hpp"

namespace pneumo {

// ---------------------------------------------------------------------------
// Manifest I/O
//
// Text format, one record per line:
//     <path>,<label>[,<age_months>[,<key=value;key=value;...>]]
// where <label> is NORMAL/PNEUMONIA (case-insensitive) or 0/1. Lines that are
// blank or start with '#' are skipped. Malformed lines raise ParseError with
// the 1-based line number.
// ---------------------------------------------------------------------------
Manifest load_manifest(std::istream& in, const std::string& source_path);
Manifest load_manifest_file(const std::string& path);
void write_manifest_file(const Manifest& manifest, const std::string& path);

// Resolve a record's image path: absolute paths pass through, relative paths
// are interpreted relative to the directory containing the manifest file.
std::string resolve_image_path(const std::string& manifest_source,
                               const std::string& image_path);

// ---------------------------------------------------------------------------
// Image codec (binary PGM "P5" and PPM "P6", maxval 255 only)
// Decoded tensors have shape [channels, height, width] with values in 0..255.
// ---------------------------------------------------------------------------
Tensor decode_pnm(const std::string& bytes);
Tensor decode_pnm_file(const std::string& path);
std::string encode_pnm(const Tensor& image); // P5 for 1 channel, P6 for 3
void write_pnm_file(const Tensor& image, const std::string& path);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

// Bilinear resample with half-pixel alignment and edge clamping.
// Identity when the output size equals the input size.
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

// Map 0..255 intensities to 0..1. Values outside [0,255] raise ValueError.
Tensor normalize_image(const Tensor& image);

// Replicate a single-channel image into three identical channels.
// Three-channel input passes through unchanged.
Tensor replicate_to_rgb(const Tensor& image);

// Full inference-time chain: decode -> 3 channels -> resize -> normalize.
Tensor load_and_preprocess(const std::string& image_file, int out_h = 150,
                           int out_w = 150);

// ---------------------------------------------------------------------------
// Augmentation: random horizontal flip, then random rotation about the image
// centre with bilinear resampling and zero fill outside the source frame.
// With rotation_max_degrees == 0 and flip_prob == 0 the output equals the
// input exactly. Consumes exactly two uniform draws per call.
// ---------------------------------------------------------------------------
struct AugmentConfig {
    float rotation_max_degrees = 15.0f;
    float flip_prob = 0.5f;

    void validate() const;
};

Tensor flip_horizontal(const Tensor& image);
Tensor rotate_bilinear(const Tensor& image, double degrees);
Tensor augment(const Tensor& image, const AugmentConfig& cfg, SeededRng& rng);

// Stream id for the per-sample augmentation generator: sample index offset by
// a fixed base so augmentation streams never collide with the training stream.
inline constexpr std::uint64_t kAugmentStreamBase = 1u << 20;

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------
struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;

    void validate() const; // positive entries summing to 1 (within 1e-9)
};

struct SplitManifests {
    Manifest train;
    Manifest val;
    Manifest test;
};

// Shuffle each class independently with a generator seeded from `seed`, then
// allocate per-class counts by largest remainder so every split receives at
// least the floor of its share. Requires >= 3 records of each label.
SplitManifests split_dataset(const Manifest& manifest, const SplitRatios& ratios,
                             std::uint64_t seed);

// Load every record of a manifest through the preprocessing chain. When `aug`
// is non-null each sample is augmented once using a generator derived from
// (seed, kAugmentStreamBase + record index).
Dataset load_dataset(const Manifest& manifest, const AugmentConfig* aug,
                     std::uint64_t seed, int out_h = 150, int out_w = 150);

// ---------------------------------------------------------------------------
// Synthetic chest-film generator. Writes `n_per_class` PPM images per label
// plus a manifest (manifest.csv) into out_dir and returns the manifest.
// Images come in seeded pairs: the pneumonia image of a pair is the normal
// image plus bright blotches, so its mean intensity is strictly higher.
// ---------------------------------------------------------------------------
Manifest synth_dataset(int n_per_class, std::uint64_t seed,
                       const std::string& out_dir);

} // namespace pneumo

#endif
