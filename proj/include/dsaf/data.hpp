#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsaf/rng.hpp"
#include "dsaf/tensor.hpp"

namespace dsaf {

enum class Split { train, query, gallery };

std::string to_string(Split s);
Split parse_split(const std::string& s);

inline constexpr std::int64_t kUnknownIdentity = -1;

struct SampleRecord {
  std::int64_t sample_id = 0;
  std::int64_t domain_id = 0;
  std::int64_t identity = kUnknownIdentity;
  std::int64_t camera_id = 0;
  Split split = Split::train;
  std::string payload_path;  // relative to the domain directory
  std::uint64_t checksum = 0;
  Tensor<float> image;  // (1, c, h, w)
};

// One domain directory: manifest.txt plus payload files.
struct DomainData {
  std::filesystem::path root;
  std::int64_t domain_id = 0;
  std::vector<SampleRecord> records;

  // Record indices of a split, in manifest order.
  std::vector<std::size_t> indices(Split split) const;
  std::size_t count(Split split) const;
  // True when every record of the split carries an identity.
  bool labeled(Split split) const;
  std::vector<std::int64_t> identities(const std::vector<std::size_t>& idx) const;
  std::vector<std::int64_t> cameras(const std::vector<std::size_t>& idx) const;
  Tensor<float> images(const std::vector<std::size_t>& idx) const;
  Shape image_shape() const;
};

struct DomainStyle {
  std::vector<double> channel_gain;
  std::vector<double> channel_bias;
  int blur_level = 0;  // box blur radius in pixels
  double noise_sigma = 0.0;
};

// Distance used by the minimum-style-distance check: L2 over
// (log gain, bias) plus |blur difference| and |noise difference|.
double style_distance(const DomainStyle& a, const DomainStyle& b);

struct SynthConfig {
  std::size_t num_domains = 2;
  std::size_t train_identities = 30;
  std::size_t test_identities = 15;
  std::size_t images_per_identity = 8;
  std::size_t num_cameras = 2;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 16;
  std::size_t signature_dim = 8;
  // Generated styles: gain exp(0.15 s * u), bias s/2 * v with u, v standard normal per domain.
  double style_distance = 1.0;
  double noise_sigma = 0.05;
  std::vector<int> blur_levels;  // per domain; empty means all 0
  // Explicit per-domain styles override the generated ones.
  std::vector<DomainStyle> styles;
  double camera_strength = 0.1;
  double nuisance_strength = 1.0;  // scales per-image pose/brightness/background jitter
  double min_style_distance = 0.05;
  // When true every domain renders the same identities (same global ids).
  bool shared_identities = false;
  // When false, train records are written with unknown identity.
  bool label_train = true;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<DomainStyle> resolve_styles() const;
};

// Renders one image; exposed for tests. Deterministic in all arguments.
Tensor<float> render_sample(const SynthConfig& cfg, const DomainStyle& style, std::int64_t global_identity,
                            std::size_t image_index, std::int64_t camera_id);

// Writes <out>/domain_<d>/manifest.txt and payloads/<sample_id>.bin per domain.
void generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir);

// Payload file: "DSFI" | u32 c | u32 h | u32 w | c*h*w little-endian float32.
std::vector<std::uint8_t> encode_payload(const Tensor<float>& image);
Tensor<float> decode_payload(const std::vector<std::uint8_t>& bytes, const std::string& what);

DomainData load_domain(const std::filesystem::path& dir);
// A directory with manifest.txt is one domain; otherwise its domain_*
// subdirectories are loaded in name order.
std::vector<DomainData> load_dataset(const std::filesystem::path& dir);
std::vector<std::filesystem::path> domain_dirs(const std::filesystem::path& dir);

struct BatchSpec {
  std::size_t identities = 16;  // P
  std::size_t images_per_identity = 4;  // K
  std::size_t size() const { return identities * images_per_identity; }
};

// Positions into the label vector and the label of each, P groups of K.
struct PkBatch {
  std::vector<std::size_t> positions;
  std::vector<std::int64_t> labels;
};

// Samples P labels (all usable labels if fewer than P) and K positions per
// label; labels with fewer than K members are sampled with replacement.
// Negative labels (noise, unknown) are never selected. Returns nullopt when
// fewer than 2 usable labels exist.
std::optional<PkBatch> sample_pk_batch(std::span<const std::int64_t> labels, const BatchSpec& spec, Rng& rng);

struct AugmentConfig {
  bool flip = true;
  bool crop = true;
  bool random_erasing = false;
  double erasing_probability = 0.5;
};

Tensor<float> flip_horizontal(const Tensor<float>& images);
// Per image: flip with p = 0.5, zero-padded random crop with pad max(1, h/64),
// optional random erasing.
Tensor<float> augment(const Tensor<float>& images, Rng& rng, const AugmentConfig& cfg = {});

}  // namespace dsaf
