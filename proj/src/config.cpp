#include "dsaf/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace dsaf {

namespace {

using nlohmann::json;

// Walks one JSON object, records which keys were read and rejects the rest.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    out = convert<T>(obj_.at(key), field(key));
  }

  template <class T>
  void get_optional(const std::string& key, std::optional<T>& out) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_.at(key).is_null()) return;
    out = convert<T>(obj_.at(key), field(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  std::string field(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) throw ConfigError(path_ + "." + key + ": unknown field");
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
      if (std::is_unsigned_v<T> && v.get<std::int64_t>() < 0 && !v.is_number_unsigned()) {
        throw ConfigError(where + ": expected a non-negative integer");
      }
      return v.get<T>();
    } else {
      // std::vector<U>
      using U = typename T::value_type;
      if (!v.is_array()) throw ConfigError(where + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<U>(v[i], where + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

json parse(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

// --- synth -----------------------------------------------------------------

SynthConfig synth_from(const json& j) {
  SynthConfig c;
  Reader r(j, "synth");
  r.get("num_domains", c.num_domains);
  r.get("train_identities", c.train_identities);
  r.get("test_identities", c.test_identities);
  r.get("images_per_identity", c.images_per_identity);
  r.get("num_cameras", c.num_cameras);
  r.get("channels", c.channels);
  r.get("height", c.height);
  r.get("width", c.width);
  r.get("signature_dim", c.signature_dim);
  r.get("style_distance", c.style_distance);
  r.get("noise_sigma", c.noise_sigma);
  r.get("blur_levels", c.blur_levels);
  r.get("camera_strength", c.camera_strength);
  r.get("nuisance_strength", c.nuisance_strength);
  r.get("min_style_distance", c.min_style_distance);
  r.get("shared_identities", c.shared_identities);
  r.get("label_train", c.label_train);
  r.get("seed", c.seed);
  if (r.has("styles")) {
    const json& arr = r.raw("styles");
    if (!arr.is_array()) throw ConfigError("synth.styles: expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Reader s(arr[i], "synth.styles[" + std::to_string(i) + "]");
      DomainStyle st;
      s.get("channel_gain", st.channel_gain);
      s.get("channel_bias", st.channel_bias);
      s.get("blur_level", st.blur_level);
      s.get("noise_sigma", st.noise_sigma);
      s.finish();
      c.styles.push_back(std::move(st));
    }
  }
  r.finish();
  return c;
}

json synth_to(const SynthConfig& c) {
  json styles = json::array();
  for (const auto& s : c.styles) {
    styles.push_back({{"channel_gain", s.channel_gain},
                      {"channel_bias", s.channel_bias},
                      {"blur_level", s.blur_level},
                      {"noise_sigma", s.noise_sigma}});
  }
  return json{{"num_domains", c.num_domains},
              {"train_identities", c.train_identities},
              {"test_identities", c.test_identities},
              {"images_per_identity", c.images_per_identity},
              {"num_cameras", c.num_cameras},
              {"channels", c.channels},
              {"height", c.height},
              {"width", c.width},
              {"signature_dim", c.signature_dim},
              {"style_distance", c.style_distance},
              {"noise_sigma", c.noise_sigma},
              {"blur_levels", c.blur_levels},
              {"styles", styles},
              {"camera_strength", c.camera_strength},
              {"nuisance_strength", c.nuisance_strength},
              {"min_style_distance", c.min_style_distance},
              {"shared_identities", c.shared_identities},
              {"label_train", c.label_train},
              {"seed", c.seed}};
}

// --- model -----------------------------------------------------------------

ModelConfig model_from(const json& j, const std::string& path) {
  ModelConfig c = ModelConfig::standard();
  Reader r(j, path);
  std::vector<std::size_t> channels, strides;
  for (const auto& b : c.blocks) channels.push_back(b.out_channels), strides.push_back(b.stride);
  r.get("channels", channels);
  r.get("strides", strides);
  if (channels.size() != strides.size()) {
    throw ConfigError(r.field("strides") + ": needs one entry per channels entry (" + std::to_string(channels.size()) + ")");
  }
  std::string norm = "dsan";
  r.get("norm", norm);
  std::vector<std::string> norms;
  r.get("norms", norms);
  std::optional<std::string> base_norm;
  r.get_optional("base_norm", base_norm);
  std::optional<std::vector<std::size_t>> positions;
  r.get_optional("norm_positions", positions);

  auto kind = [&](const std::string& name, const std::string& where) {
    try {
      return parse_norm_kind(name);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  };
  c.blocks.clear();
  for (std::size_t i = 0; i < channels.size(); ++i) c.blocks.push_back({channels[i], strides[i], kind(norm, r.field("norm"))});
  if (!norms.empty()) {
    if (norms.size() != channels.size()) throw ConfigError(r.field("norms") + ": needs one entry per block");
    for (std::size_t i = 0; i < norms.size(); ++i) c.blocks[i].norm = kind(norms[i], r.field("norms"));
  }
  if (positions) {
    try {
      c.set_norm_positions(kind(base_norm.value_or("bn"), r.field("base_norm")), kind(norm, r.field("norm")), *positions);
    } catch (const ConfigError& e) {
      throw ConfigError(r.field("norm_positions") + ": " + e.what());
    }
  }
  r.get("input_channels", c.input_channels);
  r.get("input_height", c.input_height);
  r.get("input_width", c.input_width);
  r.get("convs_per_block", c.convs_per_block);
  r.get("embedding_dim", c.embedding_dim);
  r.get("num_domains", c.num_domains);
  r.get("dsan_share_in_affine", c.dsan.share_in_affine);
  r.get("dsan_enable_in_affine", c.dsan.enable_in_affine);
  r.get("dson_initial_weight", c.dson_initial_weight);
  r.get("dson_learnable", c.dson_learnable);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

json model_to(const ModelConfig& c) {
  std::vector<std::size_t> channels, strides;
  std::vector<std::string> norms;
  for (const auto& b : c.blocks) {
    channels.push_back(b.out_channels);
    strides.push_back(b.stride);
    norms.push_back(to_string(b.norm));
  }
  return json{{"channels", channels},
              {"strides", strides},
              {"norms", norms},
              {"input_channels", c.input_channels},
              {"input_height", c.input_height},
              {"input_width", c.input_width},
              {"convs_per_block", c.convs_per_block},
              {"embedding_dim", c.embedding_dim},
              {"num_domains", c.num_domains},
              {"dsan_share_in_affine", c.dsan.share_in_affine},
              {"dsan_enable_in_affine", c.dsan.enable_in_affine},
              {"dson_initial_weight", c.dson_initial_weight},
              {"dson_learnable", c.dson_learnable},
              {"seed", c.seed}};
}

// --- train -----------------------------------------------------------------

ClusterSettings cluster_from(const json& j, const std::string& path) {
  ClusterSettings s;
  Reader r(j, path);
  r.get("epsilon", s.dbscan.epsilon);
  r.get("min_points", s.dbscan.min_points);
  std::string metric = to_string(s.dbscan.metric);
  r.get("metric", metric);
  try {
    s.dbscan.metric = parse_cluster_metric(metric);
  } catch (const ConfigError& e) {
    throw ConfigError(r.field("metric") + ": " + e.what());
  }
  r.get("epsilon_quantile", s.epsilon_quantile);
  r.finish();
  return s;
}

json cluster_to(const ClusterSettings& s) {
  return json{{"epsilon", s.dbscan.epsilon},
              {"min_points", s.dbscan.min_points},
              {"metric", to_string(s.dbscan.metric)},
              {"epsilon_quantile", s.epsilon_quantile}};
}

TrainConfig train_from(const json& j) {
  TrainConfig c;
  Reader r(j, "train");
  r.get("epochs", c.epochs);
  r.get("iters_per_domain", c.iters_per_domain);
  r.get("learning_rate", c.adam.learning_rate);
  if (r.has("adam")) {
    Reader a(r.raw("adam"), "train.adam");
    a.get("beta1", c.adam.beta1);
    a.get("beta2", c.adam.beta2);
    a.get("epsilon", c.adam.epsilon);
    a.get("weight_decay", c.adam.weight_decay);
    a.finish();
  }
  if (r.has("batch")) {
    Reader b(r.raw("batch"), "train.batch");
    b.get("identities", c.batch.identities);
    b.get("images_per_identity", c.batch.images_per_identity);
    b.finish();
  }
  if (r.has("dbscan")) {
    const json& d = r.raw("dbscan");
    c.clustering.clear();
    if (d.is_array()) {
      for (std::size_t i = 0; i < d.size(); ++i) c.clustering.push_back(cluster_from(d[i], "train.dbscan[" + std::to_string(i) + "]"));
    } else {
      c.clustering.push_back(cluster_from(d, "train.dbscan"));
    }
  }
  if (r.has("triplet")) {
    Reader t(r.raw("triplet"), "train.triplet");
    t.get("margin", c.triplet.margin);
    std::string dist = to_string(c.triplet.distance);
    t.get("distance", dist);
    try {
      c.triplet.distance = parse_triplet_distance(dist);
    } catch (const ConfigError& e) {
      throw ConfigError(t.field("distance") + ": " + e.what());
    }
    t.finish();
  }
  std::string mode = to_string(c.mode);
  r.get("mode", mode);
  try {
    c.mode = parse_run_mode(mode);
  } catch (const ConfigError& e) {
    throw ConfigError(r.field("mode") + ": " + e.what());
  }
  r.get("flip", c.flip);
  r.get("crop", c.crop);
  r.get_optional("random_erasing", c.random_erasing);
  r.get("eval_batch", c.eval_batch);
  r.get("eval_every", c.eval_every);
  r.get("keep_epoch_checkpoints", c.keep_epoch_checkpoints);
  r.get("seed", c.seed);
  if (r.has("model")) {
    c.model = model_from(r.raw("model"), "train.model");
    if (!r.raw("model").contains("seed")) c.model.seed = c.seed;
  } else {
    c.model.seed = c.seed;
  }
  r.finish();
  return c;
}

json train_to(const TrainConfig& c) {
  json clustering = json::array();
  for (const auto& s : c.clustering) clustering.push_back(cluster_to(s));
  return json{{"epochs", c.epochs},
              {"iters_per_domain", c.iters_per_domain},
              {"learning_rate", c.adam.learning_rate},
              {"adam",
               {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}, {"weight_decay", c.adam.weight_decay}}},
              {"batch", {{"identities", c.batch.identities}, {"images_per_identity", c.batch.images_per_identity}}},
              {"dbscan", clustering},
              {"triplet", {{"margin", c.triplet.margin}, {"distance", to_string(c.triplet.distance)}}},
              {"mode", to_string(c.mode)},
              {"flip", c.flip},
              {"crop", c.crop},
              {"random_erasing", c.random_erasing ? json(*c.random_erasing) : json(nullptr)},
              {"eval_batch", c.eval_batch},
              {"eval_every", c.eval_every},
              {"keep_epoch_checkpoints", c.keep_epoch_checkpoints},
              {"seed", c.seed},
              {"model", model_to(c.model)}};
}

template <class F>
auto with_type_errors(F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config value out of range: ") + e.what());
  }
}

}  // namespace

SynthConfig synth_config_from_json(const std::string& text) {
  return with_type_errors([&] { return synth_from(parse(text, "synth config")); });
}

std::string synth_config_to_json(const SynthConfig& cfg) { return synth_to(cfg).dump(2) + "\n"; }

ModelConfig model_config_from_json(const std::string& text) {
  return with_type_errors([&] { return model_from(parse(text, "model config"), "model"); });
}

std::string model_config_to_json(const ModelConfig& cfg) { return model_to(cfg).dump(2) + "\n"; }

TrainConfig train_config_from_json(const std::string& text) {
  return with_type_errors([&] { return train_from(parse(text, "train config")); });
}

std::string train_config_to_json(const TrainConfig& cfg) { return train_to(cfg).dump(2) + "\n"; }

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace dsaf
