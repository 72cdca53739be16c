#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "mako/dataset.hpp"
#include "mako/error.hpp"

using namespace mako;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "mako_test_dataset";
  fs::create_directories(dir);
  return dir / name;
}

MetaDataset small_meta(SystemKind kind, std::uint64_t seed = 5) {
  DataConfig cfg;
  cfg.num_tasks = 3;
  cfg.episode_len = 50;
  cfg.samples_per_task = 500;
  cfg.seed = seed;
  return generate_meta_dataset(kind, cfg);
}

// Pooled mean/std of the training split, computed independently of the library.
void pooled_moments(const MetaDataset& meta, Eigen::VectorXd& mean, Eigen::VectorXd& std) {
  std::vector<Eigen::VectorXd> cols;
  for (const auto& sub : meta.subdatasets) {
    for (const auto& ep : sub.episodes) {
      if (ep.split != Split::Train) continue;
      for (Eigen::Index k = 0; k < ep.length(); ++k) cols.push_back(ep.states.col(k));
    }
  }
  const auto n = cols.front().size();
  mean = Eigen::VectorXd::Zero(n);
  for (const auto& c : cols) mean += c;
  mean /= static_cast<double>(cols.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(n);
  for (const auto& c : cols) var += (c - mean).cwiseAbs2();
  std = (var / static_cast<double>(cols.size())).cwiseSqrt();
}

}  // namespace

TEST_CASE("sub-dataset shape and input box") {
  const auto p = nominal_params(SystemKind::Cartpole);
  const auto sub = generate_subdataset(p, 500, 250, 3);
  REQUIRE(sub.episodes.size() == 2);
  for (const auto& ep : sub.episodes) {
    CHECK(ep.length() == 250);
    CHECK(ep.states.rows() == 4);
    CHECK(ep.inputs.rows() == 1);
    CHECK(ep.inputs.cols() == 250);
    CHECK(ep.restart.size() == 250);
    CHECK(ep.restart[0] == 1);
    CHECK(ep.states.allFinite());
    CHECK((ep.inputs.array() >= -20.0).all());
    CHECK((ep.inputs.array() <= 20.0).all());
  }
  CHECK_THROWS_AS(generate_subdataset(p, 501, 250, 3), ArgumentError);
}

TEST_CASE("cartpole segments restart after a fall and keep the partial data") {
  const auto p = nominal_params(SystemKind::Cartpole);
  const auto sub = generate_subdataset(p, 2500, 250, 8);
  int restarts = 0;
  for (const auto& ep : sub.episodes) {
    for (Eigen::Index k = 1; k < ep.length(); ++k) {
      if (!ep.restart[static_cast<std::size_t>(k)]) {
        CHECK_FALSE(pole_fallen(p, ep.states.col(k - 1)));
      } else {
        ++restarts;
      }
    }
  }
  CHECK(restarts > 0);
}

TEST_CASE("generation is deterministic in the seed") {
  for (auto kind : {SystemKind::Cartpole, SystemKind::Grn, SystemKind::ReactorSeparator}) {
    const auto a = small_meta(kind);
    const auto b = small_meta(kind);
    CHECK(a == b);
    CHECK_FALSE(a == small_meta(kind, 6));
  }
}

TEST_CASE("process episodes start inside the published initial region") {
  const auto meta = small_meta(SystemKind::ReactorSeparator);
  for (const auto& sub : meta.subdatasets) {
    const Eigen::VectorXd xs = setpoint(sub.params);
    for (const auto& ep : sub.episodes) {
      const Eigen::VectorXd x0 = ep.states.col(0);
      CHECK((x0.array() >= 0.8 * xs.array()).all());
      CHECK((x0.array() <= 1.2 * xs.array()).all());
    }
  }
}

TEST_CASE("normalization statistics") {
  MetaDataset meta;
  meta.kind = SystemKind::Cartpole;
  SubDataset sub;
  Episode ep;
  ep.states = Eigen::MatrixXd(4, 2);
  ep.states << 0, 2, 1, 1, 0, 2, 5, 5;
  ep.inputs = Eigen::MatrixXd(1, 2);
  ep.inputs << 0, 2;
  ep.restart = {1, 0};
  sub.episodes.push_back(ep);
  meta.subdatasets.push_back(sub);

  std::vector<std::string> warnings;
  const auto stats = compute_norm_stats(meta, &warnings);
  CHECK(stats.state_mean[0] == doctest::Approx(1.0));
  CHECK(stats.state_std[0] == doctest::Approx(1.0));
  CHECK(stats.input_mean[0] == doctest::Approx(1.0));
  CHECK(stats.input_std[0] == doctest::Approx(1.0));
  CHECK(stats.state_std[1] == 1e-8);
  CHECK(warnings.size() == 2);
}

TEST_CASE("normalized training split is standardized and invertible") {
  const auto meta = small_meta(SystemKind::ReactorSeparator);
  Eigen::VectorXd mean, std;
  pooled_moments(meta, mean, std);
  CHECK((meta.norm.state_mean - mean).cwiseAbs().maxCoeff() < 1e-9 * (1.0 + mean.cwiseAbs().maxCoeff()));
  CHECK(((meta.norm.state_std - std).array().abs() / std.array()).maxCoeff() < 1e-9);

  const auto z = normalized(meta);
  CHECK(z.normalized);
  Eigen::VectorXd zmean, zstd;
  pooled_moments(z, zmean, zstd);
  CHECK(zmean.cwiseAbs().maxCoeff() < 1e-8);
  CHECK((zstd.array() - 1.0).abs().maxCoeff() < 1e-6);

  const auto re = compute_norm_stats(z);
  CHECK(re.state_mean.cwiseAbs().maxCoeff() < 1e-10);
  CHECK((re.state_std.array() - 1.0).abs().maxCoeff() < 1e-10);

  const auto& raw = meta.subdatasets[0].episodes[0];
  const auto& nz = z.subdatasets[0].episodes[0];
  const Eigen::MatrixXd back = meta.norm.denormalize_state(nz.states);
  CHECK(((back - raw.states).array().abs() / (1.0 + raw.states.array().abs())).maxCoeff() < 1e-12);
  const Eigen::MatrixXd uback = meta.norm.denormalize_input(nz.inputs);
  CHECK(((uback - raw.inputs).array().abs() / (1.0 + raw.inputs.array().abs())).maxCoeff() < 1e-12);
}

TEST_CASE("splits are a pure, disjoint and covering assignment") {
  for (int count : {3, 10, 37}) {
    int val = 0, test = 0;
    for (int i = 0; i < count; ++i) {
      const auto s = split_of(i, count, 42);
      CHECK(s == split_of(i, count, 42));
      val += s == Split::Validation;
      test += s == Split::Test;
    }
    CHECK(val >= 1);
    CHECK(test >= 1);
    CHECK(val == std::max(1, static_cast<int>(std::lround(0.1 * count))));
    CHECK(test == val);
  }
  bool differs = false;
  for (int i = 0; i < 37; ++i) differs |= split_of(i, 37, 1) != split_of(i, 37, 2);
  CHECK(differs);
}

TEST_CASE("windows carry their split and never cross segments") {
  const auto meta = normalized(small_meta(SystemKind::Cartpole));
  const int H = 16;
  std::size_t expected_train = 0;
  for (const auto& sub : meta.subdatasets) {
    for (const auto& ep : sub.episodes) {
      if (ep.split != Split::Train) continue;
      for (Eigen::Index k = 0; k + H < ep.length(); ++k) {
        bool clean = true;
        for (int t = 1; t <= H; ++t) clean &= !ep.restart[static_cast<std::size_t>(k + t)];
        expected_train += clean;
      }
    }
  }
  const auto train = anchored_windows(meta, Split::Train, H);
  CHECK(train.size() == expected_train);
  for (const auto& w : train) CHECK(w.split == Split::Train);

  // no validation or test sample leaks into training windows
  std::set<std::pair<int, double>> held_out;
  for (int t = 0; t < static_cast<int>(meta.subdatasets.size()); ++t) {
    for (const auto& ep : meta.subdatasets[static_cast<std::size_t>(t)].episodes) {
      if (ep.split == Split::Train) continue;
      for (Eigen::Index k = 0; k < ep.length(); ++k) held_out.insert({t, ep.states(0, k)});
    }
  }
  for (const auto& w : train) CHECK(held_out.count({w.task, w.anchor[0]}) == 0);
  for (const auto& w : anchored_windows(meta, Split::Validation, H)) {
    CHECK(w.split == Split::Validation);
    CHECK(held_out.count({w.task, w.anchor[0]}) == 1);
  }
}

TEST_CASE("dataset file round-trip is bit-exact") {
  const auto meta = small_meta(SystemKind::Grn);
  const auto path = temp_file("grn.bin");
  save_meta_dataset(meta, path);
  const auto loaded = load_meta_dataset(path);
  CHECK(loaded == meta);
  CHECK(loaded.kind == SystemKind::Grn);
  CHECK(loaded.subdatasets.size() == 3);
  CHECK(loaded.episode_len == 50);
  CHECK(loaded.seed == 5);
  for (std::size_t i = 0; i < meta.subdatasets.size(); ++i) {
    CHECK(loaded.subdatasets[i].params.uncertain == meta.subdatasets[i].params.uncertain);
  }
}

TEST_CASE("truncated and version-mismatched files are rejected") {
  const auto meta = small_meta(SystemKind::Cartpole);
  const auto path = temp_file("cart.bin");
  save_meta_dataset(meta, path);
  const auto size = fs::file_size(path);

  const auto cut = temp_file("cut.bin");
  fs::copy_file(path, cut, fs::copy_options::overwrite_existing);
  fs::resize_file(cut, size / 2);
  CHECK_THROWS_AS(load_meta_dataset(cut), FormatError);

  const auto bumped = temp_file("bumped.bin");
  fs::copy_file(path, bumped, fs::copy_options::overwrite_existing);
  {
    std::fstream f(bumped, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const char version[4] = {99, 0, 0, 0};
    f.write(version, 4);
  }
  CHECK_THROWS_AS(load_meta_dataset(bumped), FormatError);
  CHECK_THROWS_AS(load_meta_dataset(temp_file("missing.bin")), FormatError);
}

TEST_CASE("manifest lists every task setting") {
  const auto meta = small_meta(SystemKind::Cartpole);
  const auto path = temp_file("manifest.json");
  write_manifest(meta, path);
  std::ifstream in(path);
  const auto j = nlohmann::json::parse(in);
  CHECK(j["system"] == "cartpole");
  CHECK(j["seed"] == 5);
  REQUIRE(j["tasks"].size() == meta.subdatasets.size());
  for (std::size_t i = 0; i < meta.subdatasets.size(); ++i) {
    CHECK(j["tasks"][i]["pole_length"].get<double>() == meta.subdatasets[i].params.uncertain[0]);
    CHECK(j["tasks"][i]["pole_mass"].get<double>() == meta.subdatasets[i].params.uncertain[1]);
  }
}
