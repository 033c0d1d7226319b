#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>

#include "dsaf/config.hpp"
#include "dsaf/kernels.hpp"
#include "dsaf/pipeline.hpp"

#ifndef DSAF_VERSION
#define DSAF_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace dsaf::cli {

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  const std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw Error("failed writing '" + p.string() + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory '" + dir.string() + "'");
}

// One run_manifest.json per output directory: written when the command starts
// and rewritten with end time, status and artifact hashes when it finishes.
class RunManifest {
 public:
  RunManifest(fs::path dir, std::string command, const std::vector<std::string>& args)
      : dir_(std::move(dir)) {
    doc_ = {{"tool", "dsaf"},
            {"version", DSAF_VERSION},
            {"command", std::move(command)},
            {"argv", args},
            {"seed", nullptr},
            {"config", nullptr},
            {"started_at", utc_now()},
            {"finished_at", nullptr},
            {"status", "running"},
            {"exit_code", nullptr},
            {"artifacts", json::object()}};
    std::string line;
    for (const auto& a : args) line += (line.empty() ? "" : " ") + a;
    doc_["command_line"] = line;
  }

  void set_seed(std::uint64_t seed) { doc_["seed"] = seed; }
  void set_config(const std::string& json_text) { doc_["config"] = json::parse(json_text); }
  // Restricts hashing to these files (relative to the directory).
  void set_artifacts(std::vector<fs::path> files) { only_ = std::move(files); }

  void write() const { write_file(dir_ / "run_manifest.json", doc_.dump(2) + "\n"); }

  void finish(int code) {
    doc_["finished_at"] = utc_now();
    doc_["status"] = code == 0 ? "ok" : "failed";
    doc_["exit_code"] = code;
    json artifacts = json::object();
    std::vector<fs::path> files = only_;
    if (files.empty()) {
      for (const auto& e : fs::recursive_directory_iterator(dir_)) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), dir_);
        if (rel == "run_manifest.json") continue;
        files.push_back(rel);
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& rel : files) {
      if (fs::is_regular_file(dir_ / rel)) artifacts[rel.generic_string()] = file_hash(dir_ / rel);
    }
    doc_["artifacts"] = artifacts;
    write();
  }

 private:
  fs::path dir_;
  json doc_;
  std::vector<fs::path> only_;
};

std::vector<DomainData> load_all(const std::vector<std::string>& dirs) {
  std::vector<DomainData> out;
  for (const auto& d : dirs) {
    auto loaded = load_dataset(d);
    for (auto& x : loaded) out.push_back(std::move(x));
  }
  return out;
}

void check_schema(const TrainConfig& cfg, const std::vector<DomainData>& data) {
  for (const auto& d : data) {
    const Shape s = d.image_shape();
    if (s.c != cfg.model.input_channels || s.h != cfg.model.input_height || s.w != cfg.model.input_width) {
      throw DataError("checkpoint/data schema mismatch: model expects images of " +
                      std::to_string(cfg.model.input_channels) + "x" + std::to_string(cfg.model.input_height) + "x" +
                      std::to_string(cfg.model.input_width) + ", '" + d.root.string() + "' holds " + to_string(s));
    }
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string epoch_line(const EpochLog& log, std::size_t epochs) {
  std::ostringstream os;
  os << "epoch " << log.epoch << "/" << epochs << "  cls " << fmt("%.4f", log.cls_loss) << "  tri "
     << fmt("%.4f", log.tri_loss) << "  steps " << log.steps;
  for (std::size_t d = 0; d < log.domains.size(); ++d) {
    const auto& s = log.domains[d];
    os << "  | d" << d << ": " << s.num_clusters << " clusters, " << s.num_noise << " noise";
    if (s.ami) os << ", AMI " << fmt("%.3f", *s.ami) << ", FMI " << fmt("%.3f", *s.fmi);
    if (s.skipped) os << " (skipped)";
  }
  for (const auto& r : log.evaluations) {
    if (const PathReport* p = r.find("fused")) {
      os << "  | target " << r.target_domain << " fused mAP " << fmt("%.2f", 100.0 * p->metrics.mean_ap);
    }
  }
  return os.str();
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 1;
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return 2;
  return 1;
}

struct Common {
  std::optional<int> threads;
};

void apply_threads(const Common& c) {
  if (c.threads) {
    if (*c.threads < 1) throw ConfigError("--threads must be at least 1");
    kernels::set_num_threads(*c.threads);
  }
}

// --- subcommands ---------------------------------------------------------------

struct SynthArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void cmd_synth(const SynthArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  SynthConfig cfg = a.config.empty() ? SynthConfig{} : synth_config_from_json(read_text_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  ensure_dir(a.out);
  RunManifest manifest(a.out, "synth", argv);
  manifest.set_seed(cfg.seed);
  manifest.set_config(synth_config_to_json(cfg));
  manifest.write();
  generate_synthetic(cfg, a.out);
  write_file(fs::path(a.out) / "synth.json", synth_config_to_json(cfg) + "\n");
  const auto domains = load_dataset(a.out);
  out << "dataset " << a.out << ": " << domains.size() << " domains, seed " << cfg.seed << "\n";
  for (const auto& d : domains) {
    std::set<std::int64_t> ids;
    for (const auto& r : d.records)
      if (r.identity != kUnknownIdentity) ids.insert(r.identity);
    out << "  " << d.root.filename().string() << ": " << ids.size() << " identities, " << d.records.size()
        << " samples (train " << d.count(Split::train) << ", query " << d.count(Split::query) << ", gallery "
        << d.count(Split::gallery) << ")\n";
  }
  manifest.finish(0);
}

struct TrainArgs {
  std::string config;
  std::vector<std::string> sources;
  std::vector<std::string> targets;
  std::string out;
  std::string mode;
  std::optional<std::uint64_t> seed;
  bool resume = false;
};

void cmd_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : train_config_from_json(read_text_file(a.config));
  if (!a.mode.empty()) cfg.mode = parse_run_mode(a.mode);
  if (a.seed) {
    cfg.seed = *a.seed;
    cfg.model.seed = *a.seed;
  }
  const auto sources = load_all(a.sources);
  RunOptions opt;
  opt.targets = load_all(a.targets);
  opt.resume = a.resume;
  cfg.resolve_model(sources);
  cfg.validate();
  check_schema(cfg, opt.targets);
  ensure_dir(a.out);
  RunManifest manifest(a.out, "train", argv);
  manifest.set_seed(cfg.seed);
  manifest.set_config(train_config_to_json(cfg));
  manifest.write();
  write_file(fs::path(a.out) / "train_config.json", json::parse(train_config_to_json(cfg)).dump(2) + "\n");
  opt.on_epoch = [&](const EpochLog& log) { out << epoch_line(log, cfg.epochs) << std::endl; };
  try {
    const RunSummary s = run(cfg, sources, a.out, opt);
    for (const auto& r : s.final_evaluations) out << "\ndomain " << r.target_domain << "\n" << report_table(r);
  } catch (const std::exception& e) {
    manifest.finish(exit_code_for(e));
    throw;
  }
  manifest.finish(0);
}

std::vector<FeaturePath> parse_paths(const std::string& spec, std::size_t num_domains) {
  if (spec == "all") return all_paths(num_domains);
  if (spec == "fused") return {FeaturePath::fused()};
  std::size_t d = 0;
  try {
    std::size_t used = 0;
    d = std::stoul(spec, &used);
    if (used != spec.size()) throw std::invalid_argument(spec);
  } catch (const std::exception&) {
    throw ConfigError("--paths must be fused, all or a domain index, got '" + spec + "'");
  }
  if (d >= num_domains) {
    throw ConfigError("--paths " + spec + ": the checkpoint has " + std::to_string(num_domains) + " domain paths");
  }
  return {FeaturePath::single(d)};
}

const DomainData& pick_domain(const std::vector<DomainData>& data, std::optional<std::int64_t> id) {
  if (!id) {
    if (data.size() != 1) throw ConfigError("the data directory holds several domains; pass --target-domain");
    return data.front();
  }
  for (const auto& d : data)
    if (d.domain_id == *id) return d;
  throw DataError("no domain with id " + std::to_string(*id) + " in the data directory");
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::optional<std::int64_t> target;
  std::string paths = "all";
  std::string out;
};

void cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const auto data = load_dataset(a.data);
  const DomainData& target = pick_domain(data, a.target);
  check_schema(ck.config, {target});
  const auto paths = parse_paths(a.paths, ck.config.model.num_domains);
  const EvalReport report = evaluate(ck.state.model, target, paths);
  out << report_table(report);
  if (!a.out.empty()) {
    ensure_dir(a.out);
    RunManifest manifest(a.out, "eval", argv);
    manifest.set_seed(ck.config.seed);
    manifest.set_config(train_config_to_json(ck.config));
    const fs::path name = "eval_domain" + std::to_string(report.target_domain) + ".json";
    write_file(fs::path(a.out) / name, report_to_json(report) + "\n");
    manifest.set_artifacts({name});
    manifest.finish(0);
  }
}

struct ClusterArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
};

void cmd_cluster_eval(const ClusterArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const auto data = load_dataset(a.data);
  check_schema(ck.config, data);
  const std::size_t D = ck.config.model.num_domains;
  json rows = json::array();
  bool any_unlabeled = false;
  out << "domain  path      samples clusters  noise      AMI      FMI\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const DomainData& d = data[i];
    const FeaturePath path = i < D ? FeaturePath::single(i) : FeaturePath::fused();
    const auto idx = d.indices(Split::train);
    if (idx.empty()) throw DataError("domain '" + d.root.string() + "' has no train records");
    const Tensor<float> f = normalize_rows(extract_embeddings(ck.state.model, d.images(idx), path, ck.config.eval_batch));
    TrainConfig one = ck.config;
    one.clustering = {ck.config.clustering_for(std::min(i, D - 1))};
    std::vector<double> eps;
    relabel({f}, one, &eps);
    DbscanConfig db = one.clustering.front().dbscan;
    db.epsilon = eps.front();
    ClusterQuality q = cluster_quality(f, d.identities(idx), db);
    q.domain = d.domain_id;
    q.path = path.name();
    any_unlabeled = any_unlabeled || !q.ami;
    out << fmt("%6.0f", double(q.domain)) << "  " << std::left << std::setw(8) << q.path << std::right
        << fmt("%9.0f", double(q.num_samples)) << fmt("%9.0f", double(q.num_clusters))
        << fmt("%7.0f", double(q.num_noise)) << (q.ami ? fmt("%9.4f", *q.ami) : std::string("        -"))
        << (q.fmi ? fmt("%9.4f", *q.fmi) : std::string("        -")) << "\n";
    rows.push_back({{"domain", q.domain},
                    {"path", q.path},
                    {"num_samples", q.num_samples},
                    {"num_clusters", q.num_clusters},
                    {"num_noise", q.num_noise},
                    {"epsilon", eps.front()},
                    {"ami", q.ami ? json(*q.ami) : json(nullptr)},
                    {"fmi", q.fmi ? json(*q.fmi) : json(nullptr)}});
  }
  if (any_unlabeled) out << "notice: no ground-truth identities for some domains; reporting cluster counts only\n";
  if (!a.out.empty()) {
    ensure_dir(a.out);
    RunManifest manifest(a.out, "cluster-eval", argv);
    manifest.set_seed(ck.config.seed);
    manifest.set_config(train_config_to_json(ck.config));
    write_file(fs::path(a.out) / "cluster_eval.json", json{{"domains", rows}}.dump(2) + "\n");
    manifest.set_artifacts({"cluster_eval.json"});
    manifest.finish(0);
  }
}

struct ExportArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  bool project = false;
};

void cmd_export(const ExportArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint);
  const auto data = load_dataset(a.data);
  check_schema(ck.config, data);
  const fs::path file(a.out);
  const fs::path dir = file.has_parent_path() ? file.parent_path() : fs::path(".");
  ensure_dir(dir);
  RunManifest manifest(dir, "export", argv);
  manifest.set_seed(ck.config.seed);
  manifest.set_config(train_config_to_json(ck.config));
  export_embeddings(ck.state.model, data, file, a.project);
  manifest.set_artifacts({file.filename()});
  manifest.finish(0);
  out << "wrote " << file.string() << "\n";
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Domain-specific adaptive normalization: synthetic data, training and evaluation", "dsaf"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DSAF_VERSION);
  Common common;
  app.add_option("--threads", common.threads, "Intra-op threads (default: DSAF_THREADS or 1)");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-domain dataset");
  synth->add_option("--config", sa.config, "Synthetic data config (JSON)");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--seed", sa.seed, "Override the config seed");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train on source domains");
  train->add_option("sources", ta.sources, "Source dataset or domain directories")->required();
  train->add_option("--config", ta.config, "Training config (JSON)");
  train->add_option("--target", ta.targets, "Held-out domain directories to evaluate");
  train->add_option("--out", ta.out, "Run directory")->required();
  train->add_option("--mode", ta.mode, "unDG | supervisedDG | UDAwoSL");
  train->add_option("--seed", ta.seed, "Override the config seed");
  train->add_flag("--resume", ta.resume, "Continue from <out>/checkpoint.bin");
  train->add_option("--threads", common.threads, "Intra-op threads");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Retrieval evaluation of a checkpoint");
  eval->add_option("--checkpoint", ea.checkpoint, "Training checkpoint")->required();
  eval->add_option("--data", ea.data, "Dataset or domain directory")->required();
  eval->add_option("--target-domain", ea.target, "Domain id to evaluate");
  eval->add_option("--paths", ea.paths, "fused | all | <domain index>");
  eval->add_option("--out", ea.out, "Directory for the JSON report");
  eval->add_option("--threads", common.threads, "Intra-op threads");

  ClusterArgs ca;
  auto* cluster = app.add_subcommand("cluster-eval", "Cluster train features and compare with identities");
  cluster->add_option("--checkpoint", ca.checkpoint, "Training checkpoint")->required();
  cluster->add_option("--data", ca.data, "Dataset or domain directory")->required();
  cluster->add_option("--out", ca.out, "Directory for cluster_eval.json");
  cluster->add_option("--threads", common.threads, "Intra-op threads");

  ExportArgs xa;
  auto* exp = app.add_subcommand("export", "Write embeddings as CSV");
  exp->add_option("--checkpoint", xa.checkpoint, "Training checkpoint")->required();
  exp->add_option("--data", xa.data, "Dataset or domain directory")->required();
  exp->add_option("--out", xa.out, "Output CSV file")->required();
  exp->add_flag("--project-2d", xa.project, "Write the top two principal components instead");
  exp->add_option("--threads", common.threads, "Intra-op threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    apply_threads(common);
    if (*synth) cmd_synth(sa, args, out);
    if (*train) cmd_train(ta, args, out);
    if (*eval) cmd_eval(ea, args, out);
    if (*cluster) cmd_cluster_eval(ca, args, out);
    if (*exp) cmd_export(xa, args, out);
    return 0;
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    const char* kind = code == 3 ? "numerical error" : code == 2 ? "data error" : "config error";
    err << kind << ": " << e.what() << "\n";
    return code;
  }
}

}  // namespace dsaf::cli
