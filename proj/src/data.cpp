#include "dsaf/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "dsaf/checkpoint.hpp"

namespace fs = std::filesystem;

namespace dsaf {

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "query") return Split::query;
  if (s == "gallery") return Split::gallery;
  throw DataError("unknown split '" + s + "'");
}

std::vector<std::size_t> DomainData::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].split == split) out.push_back(i);
  return out;
}

std::size_t DomainData::count(Split split) const { return indices(split).size(); }

bool DomainData::labeled(Split split) const {
  bool any = false;
  for (const auto& r : records) {
    if (r.split != split) continue;
    any = true;
    if (r.identity == kUnknownIdentity) return false;
  }
  return any;
}

std::vector<std::int64_t> DomainData::identities(const std::vector<std::size_t>& idx) const {
  std::vector<std::int64_t> out;
  for (std::size_t i : idx) out.push_back(records.at(i).identity);
  return out;
}

std::vector<std::int64_t> DomainData::cameras(const std::vector<std::size_t>& idx) const {
  std::vector<std::int64_t> out;
  for (std::size_t i : idx) out.push_back(records.at(i).camera_id);
  return out;
}

Shape DomainData::image_shape() const {
  if (records.empty()) throw DataError("domain '" + root.string() + "' has no records");
  return records.front().image.shape();
}

Tensor<float> DomainData::images(const std::vector<std::size_t>& idx) const {
  std::vector<Tensor<float>> parts;
  parts.reserve(idx.size());
  for (std::size_t i : idx) parts.push_back(records.at(i).image);
  if (parts.empty()) {
    Shape s = image_shape();
    s.n = 0;
    return Tensor<float>(s);
  }
  return stack_batch<float>(parts);
}

double style_distance(const DomainStyle& a, const DomainStyle& b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.channel_gain.size() && c < b.channel_gain.size(); ++c) {
    const double dg = std::log(a.channel_gain[c]) - std::log(b.channel_gain[c]);
    const double db = a.channel_bias[c] - b.channel_bias[c];
    s += dg * dg + db * db;
  }
  return std::sqrt(s) + std::abs(a.blur_level - b.blur_level) + std::abs(a.noise_sigma - b.noise_sigma);
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& what) { throw ConfigError("synth." + field + ": " + what); };
  if (num_domains == 0) fail("num_domains", "must be at least 1");
  if (train_identities == 0 && test_identities == 0) fail("train_identities", "no identities requested");
  if (num_cameras < 2) fail("num_cameras", "at least 2 cameras are needed for cross-camera evaluation");
  if (test_identities > 0 && images_per_identity < 2 * num_cameras) {
    fail("images_per_identity", "must be at least 2 * num_cameras so every query has a cross-camera match");
  }
  if (images_per_identity == 0) fail("images_per_identity", "must be positive");
  if (channels == 0 || height < 4 || width < 4) fail("height", "images must have channels and be at least 4x4");
  if (signature_dim == 0) fail("signature_dim", "must be positive");
  if (!(style_distance >= 0.0)) fail("style_distance", "must be non-negative");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma", "must be non-negative");
  if (!(camera_strength >= 0.0)) fail("camera_strength", "must be non-negative");
  if (!(nuisance_strength >= 0.0)) fail("nuisance_strength", "must be non-negative");
  if (!(min_style_distance >= 0.0)) fail("min_style_distance", "must be non-negative");
  if (!blur_levels.empty() && blur_levels.size() != num_domains) fail("blur_levels", "needs one entry per domain");
  for (int b : blur_levels)
    if (b < 0 || b > 3) fail("blur_levels", "entries must lie in 0..3");
  if (!styles.empty()) {
    if (styles.size() != num_domains) fail("styles", "needs one entry per domain");
    for (const auto& st : styles) {
      if (st.channel_gain.size() != channels || st.channel_bias.size() != channels) {
        fail("styles", "channel_gain and channel_bias need one value per channel");
      }
      for (double g : st.channel_gain)
        if (!(g > 0.0)) fail("styles", "channel_gain entries must be positive");
      if (st.blur_level < 0 || st.blur_level > 3) fail("styles", "blur_level must lie in 0..3");
      if (!(st.noise_sigma >= 0.0)) fail("styles", "noise_sigma must be non-negative");
    }
  }
  const auto resolved = resolve_styles();
  for (std::size_t a = 0; a < resolved.size(); ++a) {
    for (std::size_t b = a + 1; b < resolved.size(); ++b) {
      const double d = dsaf::style_distance(resolved[a], resolved[b]);
      if (d < min_style_distance) {
        std::ostringstream os;
        os << "domains " << a << " and " << b << " have style distance " << d << " below min_style_distance "
           << min_style_distance;
        fail("min_style_distance", os.str());
      }
    }
  }
}

std::vector<DomainStyle> SynthConfig::resolve_styles() const {
  if (!styles.empty()) return styles;
  std::vector<DomainStyle> out;
  for (std::size_t d = 0; d < num_domains; ++d) {
    Rng rng(derive_seed(seed, {5, d}));
    DomainStyle st;
    for (std::size_t c = 0; c < channels; ++c) {
      st.channel_gain.push_back(std::exp(0.15 * style_distance * normal(rng)));
      st.channel_bias.push_back(0.5 * style_distance * normal(rng));
    }
    st.blur_level = blur_levels.empty() ? 0 : blur_levels[d];
    st.noise_sigma = noise_sigma;
    out.push_back(std::move(st));
  }
  return out;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct IdentityLook {
  std::vector<std::vector<double>> part_color;  // [head, torso, legs][channel]
  double stripe_freq = 2.0;
  double stripe_phase = 0.0;
  double body_width = 0.5;
  double torso_end = 0.58;
};

// The projection from signatures to appearance is shared by all domains.
IdentityLook identity_look(const SynthConfig& cfg, std::int64_t global_identity) {
  const std::size_t k = cfg.signature_dim;
  Rng sig_rng(derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(global_identity)}));
  std::vector<double> z(k);
  for (double& v : z) v = normal(sig_rng);

  Rng proj(derive_seed(cfg.seed, {2}));
  const double scale = 1.5 / std::sqrt(static_cast<double>(k));
  auto project = [&]() {
    double acc = 0.0;
    for (double v : z) acc += normal(proj) * v;
    return acc * scale;
  };
  IdentityLook look;
  look.part_color.assign(3, std::vector<double>(cfg.channels));
  for (auto& part : look.part_color)
    for (double& c : part) c = std::tanh(project());
  look.stripe_freq = 1.5 + 3.0 * sigmoid(project());
  look.stripe_phase = std::numbers::pi * project();
  look.body_width = 0.4 + 0.35 * sigmoid(project());
  look.torso_end = 0.5 + 0.15 * sigmoid(project());
  return look;
}

void box_blur(std::vector<double>& img, std::size_t c, std::size_t h, std::size_t w, int radius) {
  if (radius <= 0) return;
  std::vector<double> out(img.size());
  const long r = radius;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (long y = 0; y < static_cast<long>(h); ++y) {
      for (long x = 0; x < static_cast<long>(w); ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (long dy = -r; dy <= r; ++dy) {
          for (long dx = -r; dx <= r; ++dx) {
            const long yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
            acc += img[(ch * h + yy) * w + xx];
            ++cnt;
          }
        }
        out[(ch * h + y) * w + x] = acc / cnt;
      }
    }
  }
  img.swap(out);
}

}  // namespace

Tensor<float> render_sample(const SynthConfig& cfg, const DomainStyle& style, std::int64_t global_identity,
                            std::size_t image_index, std::int64_t camera_id) {
  const std::size_t C = cfg.channels, H = cfg.height, W = cfg.width;
  const IdentityLook look = identity_look(cfg, global_identity);
  Rng rng(derive_seed(cfg.seed, {3, static_cast<std::uint64_t>(global_identity), image_index}));
  const double js = cfg.nuisance_strength;
  const double dx = std::round(js * uniform(rng, -1.5, 1.5));
  const double dy = std::round(js * uniform(rng, -1.5, 1.5));
  const double width_jitter = 1.0 + 0.1 * js * normal(rng);
  const double brightness = 1.0 + 0.1 * js * normal(rng);
  std::vector<double> background(C);
  for (double& b : background) b = 0.15 * js * normal(rng);

  Rng cam_rng(derive_seed(cfg.seed, {4, static_cast<std::uint64_t>(camera_id)}));
  std::vector<double> cam_gain(C), cam_bias(C);
  for (std::size_t c = 0; c < C; ++c) {
    cam_gain[c] = std::exp(cfg.camera_strength * normal(cam_rng));
    cam_bias[c] = cfg.camera_strength * normal(cam_rng);
  }

  std::vector<double> img(C * H * W);
  const double half_body = 0.5 * look.body_width * width_jitter;
  for (std::size_t y = 0; y < H; ++y) {
    const double v = (static_cast<double>(y) - dy + 0.5) / static_cast<double>(H);
    for (std::size_t x = 0; x < W; ++x) {
      const double u = (static_cast<double>(x) - dx + 0.5) / static_cast<double>(W) - 0.5;
      int part = -1;
      if (v >= 0.04 && v < 0.2 && std::abs(u) < 0.13) {
        part = 0;
      } else if (v >= 0.2 && v < look.torso_end && std::abs(u) < half_body) {
        part = 1;
      } else if (v >= look.torso_end && v < 0.97 && std::abs(u) < 0.8 * half_body && std::abs(u) > 0.03) {
        part = 2;
      }
      for (std::size_t c = 0; c < C; ++c) {
        double val;
        if (part < 0) {
          val = background[c] + 0.1 * (v - 0.5);
        } else {
          val = look.part_color[static_cast<std::size_t>(part)][c];
          if (part == 1) val += 0.35 * std::sin(2.0 * std::numbers::pi * look.stripe_freq * v + look.stripe_phase);
          val *= brightness;
        }
        img[(c * H + y) * W + x] = cam_gain[c] * val + cam_bias[c];
      }
    }
  }
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H * W; ++i) img[c * H * W + i] = style.channel_gain[c] * img[c * H * W + i] + style.channel_bias[c];
  box_blur(img, C, H, W, style.blur_level);
  if (style.noise_sigma > 0.0) {
    for (double& p : img) p += style.noise_sigma * normal(rng);
  }
  std::vector<float> out(img.begin(), img.end());
  return Tensor<float>(Shape{1, C, H, W}, std::move(out));
}

std::vector<std::uint8_t> encode_payload(const Tensor<float>& image) {
  const Shape& s = image.shape();
  if (s.n != 1) throw ShapeError("payload holds a single image, got " + to_string(s));
  std::vector<std::uint8_t> bytes{'D', 'S', 'F', 'I'};
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put32(static_cast<std::uint32_t>(s.c));
  put32(static_cast<std::uint32_t>(s.h));
  put32(static_cast<std::uint32_t>(s.w));
  for (float f : image.data()) put32(std::bit_cast<std::uint32_t>(f));
  return bytes;
}

Tensor<float> decode_payload(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "DSFI", 4) != 0) {
    throw DataError(what + ": payload has a bad header");
  }
  auto get32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[off + i]) << (8 * i);
    return v;
  };
  const Shape s{1, get32(4), get32(8), get32(12)};
  if (bytes.size() != 16 + 4 * s.numel()) throw DataError(what + ": payload size does not match its dimensions");
  std::vector<float> values(s.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = std::bit_cast<float>(get32(16 + 4 * i));
  return Tensor<float>(s, std::move(values));
}

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

void generate_synthetic(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const auto styles = cfg.resolve_styles();
  const std::size_t per_domain = cfg.train_identities + cfg.test_identities;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create '" + out_dir.string() + "': " + ec.message());
  for (std::size_t d = 0; d < cfg.num_domains; ++d) {
    const fs::path dir = out_dir / ("domain_" + std::to_string(d));
    fs::create_directories(dir / "payloads", ec);
    if (ec) throw Error("cannot create '" + dir.string() + "': " + ec.message());
    std::ostringstream manifest;
    manifest << "# dsaf manifest v1\n# sample_id domain_id identity camera_id split payload checksum\n";
    std::int64_t sample_id = 0;
    for (std::size_t local = 0; local < per_domain; ++local) {
      const bool train = local < cfg.train_identities;
      const std::int64_t gid =
          static_cast<std::int64_t>(cfg.shared_identities ? local : d * per_domain + local);
      for (std::size_t i = 0; i < cfg.images_per_identity; ++i) {
        const std::int64_t cam = static_cast<std::int64_t>(i % cfg.num_cameras);
        const Split split = train ? Split::train : (i < cfg.num_cameras ? Split::query : Split::gallery);
        const auto bytes = encode_payload(render_sample(cfg, styles[d], gid, i, cam));
        const std::string rel = "payloads/" + std::to_string(sample_id) + ".bin";
        write_bytes(dir / rel, bytes);
        const bool known = !train || cfg.label_train;
        manifest << sample_id << ' ' << d << ' ' << (known ? std::to_string(gid) : "-") << ' ' << cam << ' '
                 << to_string(split) << ' ' << rel << ' ' << hex64(fnv1a64(bytes.data(), bytes.size())) << '\n';
        ++sample_id;
      }
    }
    const std::string text = manifest.str();
    write_bytes(dir / "manifest.txt", std::vector<std::uint8_t>(text.begin(), text.end()));
  }
}

DomainData load_domain(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.txt";
  std::ifstream in(manifest_path);
  if (!in) throw DataError("missing manifest '" + manifest_path.string() + "'");
  DomainData data;
  data.root = dir;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::int64_t> ids_seen;
  std::set<std::int64_t> domain_ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    SampleRecord r;
    std::string identity, split, checksum, extra;
    if (!(ls >> r.sample_id >> r.domain_id >> identity >> r.camera_id >> split >> r.payload_path >> checksum) ||
        (ls >> extra)) {
      throw DataError(manifest_path.string() + ":" + std::to_string(line_no) + ": expected 7 fields");
    }
    const std::string where = "sample " + std::to_string(r.sample_id) + " (" + manifest_path.string() + ":" +
                              std::to_string(line_no) + ")";
    if (!ids_seen.insert(r.sample_id).second) throw DataError(where + ": duplicate sample_id");
    try {
      r.identity = identity == "-" ? kUnknownIdentity : std::stoll(identity);
      r.split = parse_split(split);
      std::size_t used = 0;
      r.checksum = std::stoull(checksum, &used, 16);
      if (used != checksum.size()) throw DataError("bad checksum");
    } catch (const std::exception& e) {
      throw DataError(where + ": malformed field (" + e.what() + ")");
    }
    if (r.split != Split::train && (r.identity == kUnknownIdentity || r.camera_id < 0)) {
      throw DataError(where + ": query/gallery records need identity and camera_id");
    }
    const fs::path payload = dir / r.payload_path;
    if (!fs::exists(payload)) throw DataError(where + ": payload file '" + payload.string() + "' is missing");
    const auto bytes = read_bytes(payload);
    if (fnv1a64(bytes.data(), bytes.size()) != r.checksum) throw DataError(where + ": payload checksum mismatch");
    r.image = decode_payload(bytes, where);
    if (!r.image.all_finite()) throw DataError(where + ": payload holds non-finite values");
    if (!data.records.empty() && !(r.image.shape() == data.records.front().image.shape())) {
      throw DataError(where + ": image shape " + to_string(r.image.shape()) + " differs from the domain's " +
                      to_string(data.records.front().image.shape()));
    }
    domain_ids.insert(r.domain_id);
    data.records.push_back(std::move(r));
  }
  if (data.records.empty()) throw DataError("manifest '" + manifest_path.string() + "' lists no records");
  if (domain_ids.size() != 1) throw DataError("manifest '" + manifest_path.string() + "' mixes several domain ids");
  data.domain_id = *domain_ids.begin();

  std::set<std::int64_t> train_ids, test_ids;
  for (const auto& r : data.records) {
    if (r.identity == kUnknownIdentity) continue;
    (r.split == Split::train ? train_ids : test_ids).insert(r.identity);
  }
  for (std::int64_t id : train_ids) {
    if (test_ids.count(id)) {
      throw DataError("identity " + std::to_string(id) + " appears in both train and query/gallery of '" +
                      dir.string() + "'");
    }
  }
  return data;
}

std::vector<fs::path> domain_dirs(const fs::path& dir) {
  if (fs::exists(dir / "manifest.txt")) return {dir};
  if (!fs::is_directory(dir)) throw DataError("dataset directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && entry.path().filename().string().starts_with("domain_")) out.push_back(entry.path());
  }
  // domain_10 sorts after domain_9.
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    const std::string sa = a.filename().string(), sb = b.filename().string();
    return sa.size() != sb.size() ? sa.size() < sb.size() : sa < sb;
  });
  if (out.empty()) throw DataError("'" + dir.string() + "' holds neither manifest.txt nor domain_* directories");
  return out;
}

std::vector<DomainData> load_dataset(const fs::path& dir) {
  std::vector<DomainData> out;
  for (const auto& d : domain_dirs(dir)) out.push_back(load_domain(d));
  return out;
}

std::optional<PkBatch> sample_pk_batch(std::span<const std::int64_t> labels, const BatchSpec& spec, Rng& rng) {
  if (spec.identities == 0 || spec.images_per_identity == 0) throw ConfigError("batch P and K must be positive");
  std::map<std::int64_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) groups[labels[i]].push_back(i);
  if (groups.size() < 2) return std::nullopt;

  std::vector<std::int64_t> keys;
  for (const auto& [k, v] : groups) keys.push_back(k);
  const std::size_t p = std::min(spec.identities, keys.size());
  // Partial Fisher-Yates: the first p keys become the chosen labels.
  for (std::size_t i = 0; i < p; ++i) std::swap(keys[i], keys[i + uniform_index(rng, keys.size() - i)]);

  PkBatch batch;
  const std::size_t k = spec.images_per_identity;
  for (std::size_t i = 0; i < p; ++i) {
    std::vector<std::size_t> members = groups[keys[i]];
    if (members.size() >= k) {
      for (std::size_t j = 0; j < k; ++j) std::swap(members[j], members[j + uniform_index(rng, members.size() - j)]);
      members.resize(k);
    } else {
      std::vector<std::size_t> picked;
      for (std::size_t j = 0; j < k; ++j) picked.push_back(members[uniform_index(rng, members.size())]);
      members = std::move(picked);
    }
    for (std::size_t m : members) {
      batch.positions.push_back(m);
      batch.labels.push_back(keys[i]);
    }
  }
  return batch;
}

Tensor<float> flip_horizontal(const Tensor<float>& images) {
  const Shape s = images.shape();
  Tensor<float> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) out.at(n, c, y, s.w - 1 - x) = images.at(n, c, y, x);
  return out;
}

Tensor<float> augment(const Tensor<float>& images, Rng& rng, const AugmentConfig& cfg) {
  const Shape s = images.shape();
  const std::size_t pad = std::max<std::size_t>(1, s.h / 64);
  Tensor<float> out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    const bool flip = cfg.flip && uniform01(rng) < 0.5;
    long oy = 0, ox = 0;
    if (cfg.crop) {
      oy = static_cast<long>(uniform_index(rng, 2 * pad + 1)) - static_cast<long>(pad);
      ox = static_cast<long>(uniform_index(rng, 2 * pad + 1)) - static_cast<long>(pad);
    }
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) {
          const long sy = static_cast<long>(y) + oy;
          const long sx0 = static_cast<long>(x) + ox;
          float v = 0.0f;
          if (sy >= 0 && sx0 >= 0 && sy < static_cast<long>(s.h) && sx0 < static_cast<long>(s.w)) {
            const std::size_t sx = flip ? s.w - 1 - static_cast<std::size_t>(sx0) : static_cast<std::size_t>(sx0);
            v = images.at(n, c, static_cast<std::size_t>(sy), sx);
          }
          out.at(n, c, y, x) = v;
        }
      }
    }
    if (cfg.random_erasing && uniform01(rng) < cfg.erasing_probability) {
      const double area = static_cast<double>(s.h * s.w) * uniform(rng, 0.02, 0.4);
      const double aspect = std::exp(uniform(rng, std::log(0.3), std::log(1.0 / 0.3)));
      const std::size_t eh = std::min(s.h, static_cast<std::size_t>(std::round(std::sqrt(area * aspect))));
      const std::size_t ew = std::min(s.w, static_cast<std::size_t>(std::round(std::sqrt(area / aspect))));
      if (eh > 0 && ew > 0) {
        const std::size_t y0 = uniform_index(rng, s.h - eh + 1), x0 = uniform_index(rng, s.w - ew + 1);
        for (std::size_t c = 0; c < s.c; ++c)
          for (std::size_t y = y0; y < y0 + eh; ++y)
            for (std::size_t x = x0; x < x0 + ew; ++x) out.at(n, c, y, x) = 0.0f;
      }
    }
  }
  return out;
}

}  // namespace dsaf
