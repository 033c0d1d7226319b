#include "dsaf/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "dsaf/config.hpp"
#include "dsaf/rng.hpp"

namespace fs = std::filesystem;

namespace dsaf {

using nlohmann::json;

std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::unDG: return "unDG";
    case RunMode::supervisedDG: return "supervisedDG";
    case RunMode::UDAwoSL: return "UDAwoSL";
  }
  return "?";
}

RunMode parse_run_mode(const std::string& name) {
  for (RunMode m : {RunMode::unDG, RunMode::supervisedDG, RunMode::UDAwoSL})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown mode '" + name + "' (expected unDG|supervisedDG|UDAwoSL)");
}

void ClusterSettings::validate() const {
  if (!(epsilon_quantile >= 0.0 && epsilon_quantile < 1.0)) {
    throw ConfigError("dbscan.epsilon_quantile must lie in [0, 1)");
  }
  dbscan.validate();
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (batch.identities < 1 || batch.images_per_identity < 1) {
    throw ConfigError("train.batch.identities and images_per_identity must be positive");
  }
  if (clustering.empty()) throw ConfigError("train.dbscan needs at least one entry");
  if (clustering.size() != 1 && clustering.size() != model.num_domains) {
    throw ConfigError("train.dbscan has " + std::to_string(clustering.size()) + " entries for " +
                      std::to_string(model.num_domains) + " domains");
  }
  for (const auto& c : clustering) c.validate();
  if (!(triplet.margin >= 0.0)) throw ConfigError("train.triplet.margin must be non-negative");
  if (eval_batch < 1) throw ConfigError("train.eval_batch must be positive");
  Adam check(adam);
  model.validate();
}

const ClusterSettings& TrainConfig::clustering_for(std::size_t domain) const {
  return clustering.size() == 1 ? clustering.front() : clustering.at(domain);
}

AugmentConfig TrainConfig::augment_config() const {
  AugmentConfig a;
  a.flip = flip;
  a.crop = crop;
  a.random_erasing = random_erasing.value_or(mode == RunMode::UDAwoSL);
  return a;
}

void TrainConfig::resolve_model(const std::vector<DomainData>& sources) {
  if (sources.empty()) throw DataError("no source domains given");
  const Shape s = sources.front().image_shape();
  for (const auto& d : sources) {
    if (!(d.image_shape() == s)) {
      throw DataError("source domains disagree on image shape: " + to_string(s) + " vs " + to_string(d.image_shape()));
    }
    if (d.count(Split::train) == 0) throw DataError("domain '" + d.root.string() + "' has no train records");
  }
  model.input_channels = s.c;
  model.input_height = s.h;
  model.input_width = s.w;
  model.num_domains = sources.size();
}

TrainingState::TrainingState(const TrainConfig& cfg) : model(cfg.model), optimizer(cfg.adam) {}

// --- logs --------------------------------------------------------------------

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> number_or_null(const json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

}  // namespace

std::string epoch_log_to_json(const EpochLog& log) {
  json domains = json::array();
  for (const auto& d : log.domains) {
    domains.push_back({{"num_samples", d.num_samples},
                       {"num_clusters", d.num_clusters},
                       {"num_noise", d.num_noise},
                       {"epsilon", d.epsilon},
                       {"ami", optional_number(d.ami)},
                       {"fmi", optional_number(d.fmi)},
                       {"iterations", d.iterations},
                       {"skipped", d.skipped}});
  }
  json evals = json::array();
  for (const auto& r : log.evaluations) evals.push_back(json::parse(report_to_json(r)));
  json doc{{"epoch", log.epoch},
           {"domains", domains},
           {"cls_loss", log.cls_loss},
           {"tri_loss", log.tri_loss},
           {"steps", log.steps},
           {"wall_seconds", log.wall_seconds},
           {"evaluations", evals}};
  return doc.dump();
}

EpochLog epoch_log_from_json(const std::string& line) {
  try {
    const json doc = json::parse(line);
    EpochLog log;
    log.epoch = doc.at("epoch").get<std::size_t>();
    log.cls_loss = doc.at("cls_loss").get<double>();
    log.tri_loss = doc.at("tri_loss").get<double>();
    log.steps = doc.at("steps").get<std::size_t>();
    log.wall_seconds = doc.at("wall_seconds").get<double>();
    for (const auto& d : doc.at("domains")) {
      DomainEpochStats s;
      s.num_samples = d.at("num_samples").get<std::size_t>();
      s.num_clusters = d.at("num_clusters").get<std::size_t>();
      s.num_noise = d.at("num_noise").get<std::size_t>();
      s.epsilon = d.at("epsilon").get<double>();
      s.ami = number_or_null(d.at("ami"));
      s.fmi = number_or_null(d.at("fmi"));
      s.iterations = d.at("iterations").get<std::size_t>();
      s.skipped = d.at("skipped").get<bool>();
      log.domains.push_back(s);
    }
    for (const auto& e : doc.at("evaluations")) log.evaluations.push_back(report_from_json(e.dump()));
    return log;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed run log line: ") + e.what());
  }
}

// --- clustering --------------------------------------------------------------

Tensor<float> extract_features(Backbone<float>& model, const DomainData& data, std::size_t domain,
                               std::size_t batch_size) {
  const auto idx = data.indices(Split::train);
  if (idx.empty()) throw DataError("domain '" + data.root.string() + "' has no train records");
  return normalize_rows(extract_embeddings(model, data.images(idx), FeaturePath::single(domain), batch_size));
}

namespace {

double quantile_radius(const Tensor<float>& features, ClusterMetric metric, double q) {
  const std::size_t n = features.shape().n, d = features.shape().row();
  if (n < 2) return 1e-6;
  const Tensor<float> rows = metric == ClusterMetric::cosine ? normalize_rows(features) : features;
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = double(rows[i * d + k]) - double(rows[j * d + k]);
        acc += diff * diff;
      }
      dist.push_back(metric == ClusterMetric::cosine ? 0.5 * acc : std::sqrt(acc));
    }
  }
  const std::size_t at = std::min(dist.size() - 1, static_cast<std::size_t>(q * static_cast<double>(dist.size())));
  std::nth_element(dist.begin(), dist.begin() + static_cast<long>(at), dist.end());
  return std::max(dist[at], 1e-6);
}

}  // namespace

std::vector<ClusterAssignment> relabel(const std::vector<Tensor<float>>& features, const TrainConfig& cfg,
                                       std::vector<double>* epsilons) {
  std::vector<ClusterAssignment> out;
  if (epsilons) epsilons->clear();
  for (std::size_t d = 0; d < features.size(); ++d) {
    const ClusterSettings& s = cfg.clustering_for(d);
    DbscanConfig db = s.dbscan;
    if (s.epsilon_quantile > 0.0) db.epsilon = quantile_radius(features[d], db.metric, s.epsilon_quantile);
    if (epsilons) epsilons->push_back(db.epsilon);
    out.push_back(dbscan(features[d], db));
  }
  return out;
}

DomainLabels labels_from_assignment(const ClusterAssignment& a) { return DomainLabels{a.labels, a.num_clusters}; }

DomainLabels labels_from_identities(const DomainData& data) {
  const auto idx = data.indices(Split::train);
  std::set<std::int64_t> ids;
  for (std::size_t i : idx) {
    const auto& r = data.records[i];
    if (r.identity == kUnknownIdentity) {
      throw DataError("identities required: sample " + std::to_string(r.sample_id) + " of '" + data.root.string() +
                      "' has no identity");
    }
    ids.insert(r.identity);
  }
  std::map<std::int64_t, std::int64_t> remap;
  for (std::int64_t id : ids) remap.emplace(id, static_cast<std::int64_t>(remap.size()));
  DomainLabels out;
  for (std::size_t i : idx) out.labels.push_back(remap.at(data.records[i].identity));
  out.num_classes = ids.size();
  return out;
}

void rebuild_heads(TrainingState& state, const std::vector<DomainLabels>& labels, std::uint64_t seed) {
  std::vector<std::size_t> classes;
  for (const auto& l : labels) classes.push_back(l.num_classes);
  Rng rng(seed);
  state.heads.rebuild(state.model.embedding_dim(), classes, rng);
  state.optimizer.forget("head.");
}

// --- training ----------------------------------------------------------------

namespace {

std::string layer_stats(TrainingState& state) {
  std::ostringstream os;
  os << std::setprecision(4);
  for (auto* p : state.model.parameters()) {
    double vmax = 0.0, gnorm = 0.0;
    bool finite = true;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      vmax = std::max(vmax, std::abs(double(p->value[i])));
      gnorm += double(p->grad[i]) * double(p->grad[i]);
      finite = finite && std::isfinite(p->value[i]) && std::isfinite(p->grad[i]);
    }
    os << "\n  " << p->name << ": max|w| " << vmax << ", |grad| " << std::sqrt(gnorm) << (finite ? "" : " NON-FINITE");
  }
  return os.str();
}

std::size_t usable_labels(const std::vector<std::int64_t>& labels) {
  std::set<std::int64_t> s;
  for (auto l : labels)
    if (l >= 0) s.insert(l);
  return s.size();
}

}  // namespace

void train_epoch(TrainingState& state, const std::vector<DomainData>& sources, const std::vector<DomainLabels>& labels,
                 const TrainConfig& cfg, std::uint64_t epoch_seed, EpochLog& log, const BatchObserver& observer) {
  const std::size_t D = sources.size();
  if (labels.size() != D) throw Error("train_epoch needs one label set per domain");
  if (log.domains.size() < D) log.domains.resize(D);
  Rng rng(epoch_seed);
  const AugmentConfig aug = cfg.augment_config();

  std::vector<std::vector<std::size_t>> train_idx(D);
  std::vector<std::size_t> iters(D, 0);
  std::vector<bool> active(D, false);
  std::size_t max_iters = 0;
  for (std::size_t d = 0; d < D; ++d) {
    train_idx[d] = sources[d].indices(Split::train);
    if (labels[d].labels.size() != train_idx[d].size()) {
      throw Error("domain " + std::to_string(d) + ": label count differs from train sample count");
    }
    iters[d] = cfg.iters_per_domain > 0 ? cfg.iters_per_domain
                                        : (train_idx[d].size() + cfg.batch.size() - 1) / cfg.batch.size();
    active[d] = state.heads.has_head(d) && usable_labels(labels[d].labels) >= 2;
    log.domains[d].skipped = !active[d];
    if (active[d]) max_iters = std::max(max_iters, iters[d]);
  }

  double cls_sum = 0.0, tri_sum = 0.0;
  std::size_t steps = 0;
  for (std::size_t it = 0; it < max_iters; ++it) {
    for (std::size_t d = 0; d < D; ++d) {
      if (!active[d] || it >= iters[d]) continue;
      auto batch = sample_pk_batch(labels[d].labels, cfg.batch, rng);
      if (!batch) {
        log.domains[d].skipped = true;
        continue;
      }
      std::vector<std::size_t> records;
      for (std::size_t p : batch->positions) records.push_back(train_idx[d][p]);
      const Tensor<float> images = augment(sources[d].images(records), rng, aug);

      for (auto* p : state.model.parameters()) p->zero_grad();
      for (auto* p : state.heads.parameters()) p->zero_grad();
      try {
        Tape<float> tape;
        Var<float> x = tape.input(images, false);
        Var<float> emb = state.model.forward_embed(tape, x, d, Mode::train);
        Var<float> logits = state.heads.classify(tape, emb, d);
        Var<float> cls = losses::cross_entropy(logits, std::span<const std::int64_t>(batch->labels));
        Var<float> tri = losses::triplet_batch_hard(emb, std::span<const std::int64_t>(batch->labels), cfg.triplet);
        Var<float> total = losses::total_loss(cls, tri);
        tape.backward(total);
        for (auto* p : tape.bound_parameters()) {
          if (!p->grad.all_finite()) throw NumericalError("non-finite gradient for " + p->name);
        }
        state.optimizer.step(tape.bound_parameters());
        cls_sum += cls.value()[0];
        tri_sum += tri.value()[0];
      } catch (const NumericalError& e) {
        std::ostringstream os;
        os << e.what() << "\n  domain " << d << ", iteration " << it << ", epoch seed " << epoch_seed
           << "\n  batch sample ids:";
        for (std::size_t r : records) os << ' ' << sources[d].records[r].sample_id;
        os << layer_stats(state);
        throw NumericalError(os.str());
      }
      ++steps;
      ++log.domains[d].iterations;
      if (observer) observer(d, batch->positions, batch->labels);
    }
  }
  log.steps += steps;
  if (steps > 0) {
    log.cls_loss = cls_sum / static_cast<double>(steps);
    log.tri_loss = tri_sum / static_cast<double>(steps);
  }
}

// --- checkpoints -------------------------------------------------------------

CheckpointData make_checkpoint(TrainingState& state, const TrainConfig& cfg) {
  CheckpointData c;
  c.meta["format"] = "dsaf-training";
  c.meta["config"] = train_config_to_json(cfg);
  c.integers["epoch"] = static_cast<std::int64_t>(state.epoch);
  c.tensors = state.model.state_tensors(&c.integers);
  for (auto& [k, t] : state.heads.state_tensors()) c.tensors.emplace(k, t);
  state.optimizer.export_state(c.tensors, c.integers);
  return c;
}

void save_checkpoint(const fs::path& path, TrainingState& state, const TrainConfig& cfg) {
  write_checkpoint(path, make_checkpoint(state, cfg));
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  const CheckpointData c = read_checkpoint(path);
  auto fmt = c.meta.find("format");
  if (fmt == c.meta.end() || fmt->second != "dsaf-training") {
    throw DataError("'" + path.string() + "' is not a training checkpoint");
  }
  auto cfg_it = c.meta.find("config");
  if (cfg_it == c.meta.end()) throw DataError("checkpoint lacks its configuration");
  TrainConfig cfg;
  try {
    cfg = train_config_from_json(cfg_it->second);
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint configuration is invalid: ") + e.what());
  }
  LoadedCheckpoint out{cfg, TrainingState(cfg)};
  out.state.model.load_state_tensors(c.tensors, c.integers);
  out.state.heads.load_state_tensors(c.tensors, cfg.model.num_domains);
  out.state.optimizer.import_state(c.tensors, c.integers);
  auto ep = c.integers.find("epoch");
  if (ep == c.integers.end() || ep->second < 0) throw DataError("checkpoint lacks a valid epoch counter");
  out.state.epoch = static_cast<std::size_t>(ep->second);
  return out;
}

std::uint64_t state_hash(Backbone<float>& model) {
  std::map<std::string, std::int64_t> counts;
  const auto tensors = model.state_tensors(&counts);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, t] : tensors) {
    h = fnv1a64(k.data(), k.size(), h);
    h = fnv1a64(t.data().data(), t.size() * sizeof(float), h);
  }
  for (const auto& [k, v] : counts) {
    h = fnv1a64(k.data(), k.size(), h);
    h = fnv1a64(&v, sizeof v, h);
  }
  return h;
}

// --- run ---------------------------------------------------------------------

namespace {

bool same_run_config(TrainConfig a, TrainConfig b) {
  a.epochs = b.epochs = 0;
  a.eval_every = b.eval_every = 0;
  a.keep_epoch_checkpoints = b.keep_epoch_checkpoints = false;
  return train_config_to_json(a) == train_config_to_json(b);
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw Error("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

std::vector<std::int64_t> train_identities(const DomainData& d) {
  return d.identities(d.indices(Split::train));
}

}  // namespace

RunSummary run(TrainConfig cfg, const std::vector<DomainData>& sources, const fs::path& out_dir, RunOptions options) {
  cfg.resolve_model(sources);
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw Error("cannot create output directory '" + out_dir.string() + "'");

  const fs::path ckpt_path = out_dir / "checkpoint.bin";
  const fs::path log_path = out_dir / "run_log.jsonl";
  const std::size_t D = sources.size();

  std::optional<TrainingState> state;
  RunSummary summary;
  if (options.resume && fs::exists(ckpt_path)) {
    LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
    if (!same_run_config(loaded.config, cfg)) {
      throw ConfigError("checkpoint '" + ckpt_path.string() + "' was written with a different configuration");
    }
    state.emplace(std::move(loaded.state));
    const auto lines = read_lines(log_path);
    if (lines.size() < state->epoch) throw DataError("run log is shorter than the checkpoint's epoch count");
    std::string kept;
    for (std::size_t i = 0; i < state->epoch; ++i) {
      summary.logs.push_back(epoch_log_from_json(lines[i]));
      kept += lines[i] + "\n";
    }
    write_text(log_path, kept);
  } else {
    state.emplace(cfg);
    write_text(log_path, "");
  }

  std::vector<DomainLabels> fixed_labels;
  if (cfg.mode == RunMode::supervisedDG) {
    for (const auto& d : sources) fixed_labels.push_back(labels_from_identities(d));
    if (state->epoch == 0) rebuild_heads(*state, fixed_labels, derive_seed(cfg.seed, {7}));
  }

  std::vector<const DomainData*> eval_targets;
  if (cfg.mode == RunMode::UDAwoSL) {
    for (const auto& d : sources) eval_targets.push_back(&d);
  } else {
    for (const auto& d : options.targets) eval_targets.push_back(&d);
  }
  auto evaluate_all = [&]() {
    std::vector<EvalReport> reports;
    for (const DomainData* t : eval_targets) reports.push_back(evaluate(state->model, *t, all_paths(D)));
    return reports;
  };

  const std::size_t last = std::min(cfg.epochs, options.stop_after.value_or(cfg.epochs));
  while (state->epoch < last) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t epoch = state->epoch + 1;
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, {100, epoch});
    EpochLog log;
    log.epoch = epoch;
    log.domains.resize(D);

    std::vector<DomainLabels> labels;
    if (cfg.mode == RunMode::supervisedDG) {
      labels = fixed_labels;
      for (std::size_t d = 0; d < D; ++d) {
        log.domains[d].num_samples = labels[d].labels.size();
        log.domains[d].num_clusters = labels[d].num_classes;
      }
    } else {
      std::vector<Tensor<float>> features;
      for (std::size_t d = 0; d < D; ++d) features.push_back(extract_features(state->model, sources[d], d, cfg.eval_batch));
      std::vector<double> eps;
      const auto assignments = relabel(features, cfg, &eps);
      for (std::size_t d = 0; d < D; ++d) {
        DomainEpochStats& s = log.domains[d];
        s.num_samples = assignments[d].labels.size();
        s.num_clusters = assignments[d].num_clusters;
        s.num_noise = assignments[d].num_noise();
        s.epsilon = eps[d];
        if (sources[d].labeled(Split::train)) {
          const auto truth = train_identities(sources[d]);
          const auto predicted = with_singleton_noise(assignments[d].labels);
          s.ami = adjusted_mutual_info(predicted, truth);
          s.fmi = fowlkes_mallows(predicted, truth);
        }
        labels.push_back(labels_from_assignment(assignments[d]));
      }
      rebuild_heads(*state, labels, derive_seed(epoch_seed, {1}));
    }

    train_epoch(*state, sources, labels, cfg, derive_seed(epoch_seed, {2}), log, options.observer);
    state->epoch = epoch;

    const bool final_epoch = epoch == cfg.epochs;
    if (final_epoch || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0)) log.evaluations = evaluate_all();
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    save_checkpoint(ckpt_path, *state, cfg);
    if (cfg.keep_epoch_checkpoints) {
      std::ostringstream name;
      name << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".bin";
      fs::create_directories(out_dir / "checkpoints");
      fs::copy_file(ckpt_path, out_dir / "checkpoints" / name.str(), fs::copy_options::overwrite_existing);
    }
    {
      std::ofstream out(log_path, std::ios::app);
      out << epoch_log_to_json(log) << '\n';
      if (!out) throw Error("failed appending to '" + log_path.string() + "'");
    }
    if (options.on_epoch) options.on_epoch(log);
    summary.logs.push_back(std::move(log));
  }

  summary.epochs_completed = state->epoch;
  if (state->epoch == cfg.epochs) {
    if (!summary.logs.empty() && summary.logs.back().epoch == cfg.epochs && !summary.logs.back().evaluations.empty()) {
      summary.final_evaluations = summary.logs.back().evaluations;
    } else {
      summary.final_evaluations = evaluate_all();
    }
    json evals = json::array();
    for (std::size_t i = 0; i < summary.final_evaluations.size(); ++i) {
      const auto& r = summary.final_evaluations[i];
      const std::string name =
          (cfg.mode == RunMode::UDAwoSL ? "eval_source" : "eval_target") + std::to_string(i) + ".json";
      write_text(out_dir / name, report_to_json(r));
      evals.push_back(json::parse(report_to_json(r)));
    }
    const auto ckpt_bytes = encode_checkpoint(read_checkpoint(ckpt_path));
    std::ostringstream hash;
    hash << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(ckpt_bytes.data(), ckpt_bytes.size());
    json doc{{"mode", to_string(cfg.mode)},
             {"epochs_completed", summary.epochs_completed},
             {"checkpoint_fnv1a", hash.str()},
             {"final_epoch", summary.logs.empty() ? json(nullptr) : json::parse(epoch_log_to_json(summary.logs.back()))},
             {"evaluations", evals}};
    write_text(out_dir / "summary.json", doc.dump(2) + "\n");
  }
  return summary;
}

}  // namespace dsaf
