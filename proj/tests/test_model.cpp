#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "dsaf/checkpoint.hpp"
#include "dsaf/model.hpp"
#include "dsaf/optim.hpp"
#include "oracles/gradcheck.hpp"
#include "support/temp_dir.hpp"

using namespace dsaf;
using namespace dsaf::testing;

namespace {

ModelConfig tiny(NormKind norm, std::size_t domains, std::uint64_t seed = 3) {
  ModelConfig c;
  c.blocks = {{8, 2, norm}, {8, 2, norm}};
  c.input_channels = 3;
  c.input_height = 8;
  c.input_width = 8;
  c.num_domains = domains;
  c.seed = seed;
  return c;
}

template <class T>
Tensor<T> random_images(std::size_t n, const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor<T> t(Shape{n, c.input_channels, c.input_height, c.input_width});
  for (T& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

template <class T>
void randomize_parameters(Backbone<T>& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto* p : m.parameters()) {
    if (p->name.find(".weight") != std::string::npos && p->name.find("conv") != std::string::npos) continue;
    for (T& v : p->value.data()) v = static_cast<T>(u(rng));
  }
}

template <class T>
void copy_parameters(Backbone<T>& from, Backbone<T>& to) {
  auto src = from.parameters();
  auto dst = to.parameters();
  std::map<std::string, Parameter<T>*> by_name;
  for (auto* p : dst) by_name[p->name] = p;
  for (auto* p : src) {
    auto it = by_name.find(p->name);
    if (it != by_name.end()) it->second->value = p->value;
  }
}

template <class T>
void train_steps(Backbone<T>& m, std::size_t domain, int steps, std::uint64_t seed) {
  for (int i = 0; i < steps; ++i) {
    Tensor<T> x = random_images<T>(4, m.config(), seed + i);
    for (T& v : x.data()) v = v * T(1.5) + T(0.3) * static_cast<T>(domain + 1);
    m.embed(x, domain, Mode::train);
  }
}

std::size_t specific_channels(const ModelConfig& c) {
  std::size_t n = 0;
  for (const auto& b : c.blocks) {
    if (b.norm == NormKind::dsan) n += b.out_channels / 2;
    if (b.norm == NormKind::dsbn || b.norm == NormKind::dson) n += b.out_channels;
  }
  return n * c.convs_per_block;
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class T>
bool same_tensors(const std::map<std::string, Tensor<T>>& a, const std::map<std::string, Tensor<T>>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [k, t] : a) {
    auto it = b.find(k);
    if (it == b.end() || !(it->second.shape() == t.shape()) || it->second.storage() != t.storage()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = tiny(NormKind::dsan, 2);
  CHECK_NOTHROW(c.validate());
  c.blocks[0].out_channels = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny(NormKind::dsan, 2);
  c.blocks[0].stride = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny(NormKind::dsan, 0);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig::standard();
  CHECK_THROWS_AS(c.set_norm_positions(NormKind::bn, NormKind::dsan, {4}), ConfigError);
  c.set_norm_positions(NormKind::bn, NormKind::dsan, {0, 1});
  CHECK(c.blocks[0].norm == NormKind::dsan);
  CHECK(c.blocks[2].norm == NormKind::bn);
}

TEST_CASE("standard model shape and embedding length for every domain") {
  ModelConfig c = ModelConfig::standard(NormKind::dsan, 3);
  CHECK(c.blocks.size() == 4);
  CHECK(c.blocks[3].out_channels == 256);
  Backbone<float> m(c);
  const Tensor<float> x = random_images<float>(2, c, 1);
  for (std::size_t d = 0; d < 3; ++d) CHECK(m.embed(x, d, Mode::eval).shape() == Shape{2, 256, 1, 1});
  CHECK_THROWS(m.embed(x, 3, Mode::eval));
  CHECK_THROWS_AS(m.embed(random_images<float>(2, tiny(NormKind::bn, 1), 1), 0, Mode::eval), ShapeError);

  c.embedding_dim = 24;
  Backbone<float> p(c);
  CHECK(p.embed(x, 1, Mode::eval).shape() == Shape{2, 24, 1, 1});
}

TEST_CASE("parameter delta across domain counts is exactly the domain-specific affines and buffers") {
  for (NormKind k : {NormKind::dsan, NormKind::dsbn, NormKind::bn, NormKind::in, NormKind::ibn}) {
    for (std::size_t per_block : {1u, 2u}) {
      ModelConfig c1 = ModelConfig::standard(k, 1);
      c1.convs_per_block = per_block;
      ModelConfig c3 = c1;
      c3.num_domains = 3;
      Backbone<float> m1(c1), m3(c3);
      const std::size_t s = specific_channels(c1);
      CAPTURE(to_string(k));
      CHECK(m3.parameter_count() - m1.parameter_count() == 2 * (3 - 1) * s);
      CHECK(m3.buffer_count() - m1.buffer_count() == 2 * (3 - 1) * s);
    }
  }
  ModelConfig mixed = ModelConfig::standard(NormKind::bn, 1);
  mixed.set_norm_positions(NormKind::bn, NormKind::dsan, {0, 1});
  ModelConfig mixed3 = mixed;
  mixed3.num_domains = 3;
  Backbone<float> a(mixed), b(mixed3);
  CHECK(b.parameter_count() - a.parameter_count() == 2 * 2 * (16 + 32));
}

TEST_CASE("degeneracy chain: one-domain DSBN is BN, one-domain DSAN is IBN (exact)") {
  for (auto [special, plain] : {std::pair{NormKind::dsbn, NormKind::bn}, std::pair{NormKind::dsan, NormKind::ibn}}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      Backbone<double> a(tiny(special, 1, seed)), b(tiny(plain, 1, seed));
      randomize_parameters(a, seed + 10);
      copy_parameters(a, b);
      auto pa = a.parameters();
      auto pb = b.parameters();
      REQUIRE(pa.size() == pb.size());
      for (std::size_t i = 0; i < pa.size(); ++i) pb[i]->value = pa[i]->value;
      for (int step = 0; step < 3; ++step) {
        const Tensor<double> x = random_images<double>(5, a.config(), seed * 100 + step);
        CHECK(a.embed(x, 0, Mode::train).storage() == b.embed(x, 0, Mode::train).storage());
      }
      const Tensor<double> x = random_images<double>(5, a.config(), seed * 7);
      CHECK(a.embed(x, 0, Mode::eval).storage() == b.embed(x, 0, Mode::eval).storage());
    }
  }
}

TEST_CASE("fused features") {
  SUBCASE("one domain equals its single path") {
    Backbone<float> m(tiny(NormKind::dsan, 1));
    train_steps(m, 0, 2, 5);
    const Tensor<float> x = random_images<float>(3, m.config(), 9);
    CHECK(m.forward_fused(x).storage() == m.embed(x, 0, Mode::eval).storage());
  }
  SUBCASE("identical untrained paths: fused equals any path") {
    for (NormKind k : {NormKind::dsan, NormKind::dsbn, NormKind::dson}) {
      Backbone<float> m(tiny(k, 3));
      const Tensor<float> x = random_images<float>(3, m.config(), 4);
      const Tensor<float> f = m.forward_fused(x);
      for (std::size_t d = 0; d < 3; ++d) {
        const Tensor<float> e = m.embed(x, d, Mode::eval);
        for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] == doctest::Approx(e[i]).epsilon(1e-6));
      }
    }
  }
  SUBCASE("divergent paths: fused is the mean of the two path embeddings") {
    Backbone<double> m(tiny(NormKind::dsan, 2));
    train_steps(m, 0, 3, 10);
    train_steps(m, 1, 3, 20);
    const Tensor<double> x = random_images<double>(4, m.config(), 33);
    const Tensor<double> e0 = m.embed(x, 0, Mode::eval), e1 = m.embed(x, 1, Mode::eval);
    double diff = 0.0;
    for (std::size_t i = 0; i < e0.size(); ++i) diff += std::abs(e0[i] - e1[i]);
    CHECK(diff > 0.0);
    const Tensor<double> f = m.forward_fused(x);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] == doctest::Approx((e0[i] + e1[i]) / 2).epsilon(1e-12));
  }
  SUBCASE("train mode is rejected and fusion leaves statistics untouched") {
    Backbone<float> m(tiny(NormKind::dsan, 2));
    train_steps(m, 0, 1, 1);
    const auto before = m.state_tensors();
    const Tensor<float> x = random_images<float>(2, m.config(), 2);
    CHECK_THROWS(m.forward_fused(x, Mode::train));
    m.forward_fused(x);
    CHECK(same_tensors(m.state_tensors(), before));
  }
}

TEST_CASE("train mode updates only the chosen domain's statistics") {
  Backbone<float> m(tiny(NormKind::dsan, 3));
  train_steps(m, 1, 2, 8);
  for (auto* s : m.states()) {
    CHECK(s->at(0).batch_count == 0);
    CHECK(s->at(1).batch_count == 2);
    CHECK(s->at(2).batch_count == 0);
    CHECK(s->at(0).running_mean == std::vector<float>(s->channels(), 0.0f));
  }
}

TEST_CASE("eval forward is permutation-equivariant over the batch") {
  Backbone<double> m(tiny(NormKind::dsan, 2));
  train_steps(m, 0, 2, 3);
  const Tensor<double> x = random_images<double>(5, m.config(), 6);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  const Tensor<double> y = m.embed(x, 0, Mode::eval);
  Tensor<double> xp(x.shape());
  const std::size_t plane = x.shape().row();
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t k = 0; k < plane; ++k) xp[i * plane + k] = x[perm[i] * plane + k];
  const Tensor<double> yp = m.embed(xp, 0, Mode::eval);
  const std::size_t d = y.shape().row();
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t k = 0; k < d; ++k) CHECK(yp[i * d + k] == doctest::Approx(y[perm[i] * d + k]).epsilon(1e-12));
}

TEST_CASE("initialization is deterministic in the seed") {
  Backbone<float> a(tiny(NormKind::dsan, 2, 11)), b(tiny(NormKind::dsan, 2, 11)), c(tiny(NormKind::dsan, 2, 12));
  CHECK(same_tensors(a.state_tensors(), b.state_tensors()));
  CHECK_FALSE(same_tensors(a.state_tensors(), c.state_tensors()));
}

TEST_CASE("full tiny model gradients match finite differences on a parameter sample") {
  for (NormKind k : {NormKind::dsan, NormKind::dsbn, NormKind::dson, NormKind::bn}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      ModelConfig c = tiny(k, 2, seed);
      c.embedding_dim = 6;
      Backbone<double> m(c);
      randomize_parameters(m, seed + 40);
      const Tensor<double> x = random_images<double>(4, c, seed + 50);
      train_steps(m, 1, 2, seed);
      auto fn = [&](Tape<double>& tape) { return m.forward_embed(tape, tape.input(x, false), 1, Mode::eval); };
      const auto r = param_grad_check(fn, m.parameters(), seed, 1e-5, 0.05);
      CAPTURE(to_string(k));
      CHECK(r.checked > 0);
      CHECK(r.max_rel_error < 1e-2);

      auto fn_train = [&](Tape<double>& tape) { return m.forward_embed(tape, tape.input(x, false), 0, Mode::train); };
      const auto rt = param_grad_check(fn_train, m.parameters(), seed + 1, 1e-5, 0.05);
      CHECK(rt.max_rel_error < 1e-2);
    }
  }
}

TEST_CASE("classifier heads") {
  std::mt19937_64 rng(1);
  ClassifierBank<double> bank(4, {2, 0, 4}, rng);
  CHECK(bank.has_head(0));
  CHECK_FALSE(bank.has_head(1));
  CHECK(bank.classes(2) == 4);
  CHECK(bank.parameters().size() == 4);

  Tensor<double> e(Shape{2, 4, 1, 1}, std::vector<double>{1, 0, 0, 0, 0.5, -0.5, 0.5, -0.5});
  {
    auto& h = bank.head(2);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) h.weight.value[i * 4 + j] = i == j ? 1.0 : 0.0;
    for (double& b : h.bias.value.data()) b = 0.0;
    Tape<double> tape;
    CHECK(bank.classify(tape, tape.input(e, false), 2).value().storage() == e.storage());
  }
  {
    auto& h = bank.head(0);
    for (double& v : h.weight.value.data()) v = 0.0;
    for (double& v : h.bias.value.data()) v = 0.0;
    Tape<double> tape;
    CHECK(bank.classify(tape, tape.input(e, false), 0).value().storage() == std::vector<double>(4, 0.0));
  }
  {
    bank.rebuild(4, {3, 1, 0}, rng);
    auto& h = bank.head(0);
    Tape<double> tape;
    const Tensor<double> y = bank.classify(tape, tape.input(e, false), 0).value();
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t k = 0; k < 3; ++k) {
        double acc = h.bias.value[k];
        for (std::size_t j = 0; j < 4; ++j) acc += h.weight.value[k * 4 + j] * e[n * 4 + j];
        CHECK(y[n * 3 + k] == doctest::Approx(acc).epsilon(1e-12));
      }
    CHECK(bank.classes(1) == 1);
    Tape<double> t2;
    CHECK_THROWS(bank.classify(t2, t2.input(e, false), 2));
  }
}

TEST_CASE("adam: first step moves each coordinate by the learning rate against the gradient") {
  Parameter<float> p("w", Tensor<float>(Shape{1, 3, 1, 1}, std::vector<float>{1.0f, -2.0f, 0.5f}));
  p.grad = Tensor<float>(Shape{1, 3, 1, 1}, std::vector<float>{0.3f, -4.0f, 0.0f});
  Adam opt(AdamConfig{0.01, 0.9, 0.999, 1e-8, 0.0});
  opt.step({&p});
  CHECK(p.value[0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(p.value[1] == doctest::Approx(-1.99).epsilon(1e-6));
  CHECK(p.value[2] == 0.5f);

  SUBCASE("matches a double-precision reference over several steps") {
    Parameter<float> q("q", Tensor<float>(Shape{1, 1, 1, 1}, std::vector<float>{0.7f}));
    Adam a(AdamConfig{0.05, 0.9, 0.999, 1e-8, 0.0});
    double x = 0.7, m = 0, v = 0;
    for (int t = 1; t <= 5; ++t) {
      const double g = 2.0 * static_cast<double>(q.value[0]);
      q.grad = Tensor<float>(Shape{1, 1, 1, 1}, std::vector<float>{static_cast<float>(g)});
      a.step({&q});
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      CHECK(q.value[0] == doctest::Approx(x).epsilon(1e-5));
    }
  }
  SUBCASE("zero learning rate is a bit-exact no-op") {
    Parameter<float> q = p;
    const auto before = q.value.storage();
    Adam a(AdamConfig{0.0, 0.9, 0.999, 1e-8, 0.0});
    a.step({&q});
    CHECK(q.value.storage() == before);
  }
  SUBCASE("forget drops moments by prefix; state round-trips") {
    Parameter<float> h("head.d0.weight", Tensor<float>(Shape{1, 2, 1, 1}, std::vector<float>{1, 1}));
    h.grad = Tensor<float>(Shape{1, 2, 1, 1}, std::vector<float>{1, 1});
    opt.step({&h});
    CHECK(opt.slots().size() == 2);
    std::map<std::string, Tensor<float>> t;
    std::map<std::string, std::int64_t> c;
    opt.export_state(t, c);
    Adam copy;
    copy.import_state(t, c);
    CHECK(copy.slots().size() == 2);
    CHECK(copy.slots().at("w").m.storage() == opt.slots().at("w").m.storage());
    CHECK(copy.slots().at("w").steps == 1);
    opt.forget("head.");
    CHECK(opt.slots().size() == 1);
  }
  CHECK_THROWS_AS(Adam(AdamConfig{-1.0}), ConfigError);
}

TEST_CASE("checkpoint: round trip, idempotence and corruption") {
  TempDir dir;
  Backbone<float> m(tiny(NormKind::dsan, 2));
  train_steps(m, 0, 2, 1);
  train_steps(m, 1, 1, 2);
  std::mt19937_64 rng(4);
  ClassifierBank<float> heads(m.embedding_dim(), {3, 5}, rng);

  CheckpointData data;
  data.meta["format"] = "test";
  data.integers["epoch"] = 7;
  data.tensors = m.state_tensors(&data.integers);
  for (auto& [k, t] : heads.state_tensors()) data.tensors.emplace(k, t);
  write_checkpoint(dir / "a.bin", data);

  const CheckpointData back = read_checkpoint(dir / "a.bin");
  CHECK(back.meta == data.meta);
  CHECK(back.integers == data.integers);
  CHECK(same_tensors(back.tensors, data.tensors));
  write_checkpoint(dir / "b.bin", back);
  CHECK(file_bytes(dir / "a.bin") == file_bytes(dir / "b.bin"));

  Backbone<float> restored(tiny(NormKind::dsan, 2, 99));
  restored.load_state_tensors(back.tensors, back.integers);
  ClassifierBank<float> rh;
  rh.load_state_tensors(back.tensors, 2);
  CHECK(rh.classes(1) == 5);
  const Tensor<float> x = random_images<float>(3, m.config(), 5);
  for (std::size_t d = 0; d < 2; ++d) CHECK(restored.embed(x, d, Mode::eval).storage() == m.embed(x, d, Mode::eval).storage());

  auto bytes = file_bytes(dir / "a.bin");
  SUBCASE("truncated") {
    bytes.resize(bytes.size() - 9);
    std::ofstream(dir / "t.bin", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    CHECK_THROWS_AS(read_checkpoint(dir / "t.bin"), DataError);
  }
  SUBCASE("flipped payload byte") {
    bytes[bytes.size() / 2] ^= 0x40;
    CHECK_THROWS_AS(decode_checkpoint(bytes), DataError);
  }
  SUBCASE("bad magic and version") {
    auto b = bytes;
    b[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(b), DataError);
    b = bytes;
    b[8] = 99;
    CHECK_THROWS_AS(decode_checkpoint(b), DataError);
  }
  SUBCASE("shape mismatch when loading into another config") {
    Backbone<float> other(tiny(NormKind::dsbn, 2));
    CHECK_THROWS_AS(other.load_state_tensors(back.tensors, back.integers), DataError);
  }
  CHECK_THROWS_AS(read_checkpoint(dir / "missing.bin"), DataError);
}
