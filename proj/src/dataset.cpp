#include "mako/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mako/binary_io.hpp"
#include "mako/error.hpp"
#include "mako/parallel.hpp"

namespace mako {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr io::Magic kDatasetMagic{'M', 'A', 'K', 'O', 'D', 'A', 'T', 'A'};
constexpr io::Magic kEndMagic{'M', 'A', 'K', 'O', '-', 'E', 'N', 'D'};
constexpr std::uint32_t kDatasetVersion = 1;
constexpr int kMaxRegenerations = 100;
constexpr double kStdFloor = 1e-8;

Episode simulate_episode(const SystemParams& params, int episode_len, std::uint64_t seed) {
  const int n = state_dim(params.kind);
  const int m = input_dim(params.kind);
  const VectorXd lo = input_lower(params);
  const VectorXd hi = input_upper(params);
  Rng rng(seed);

  Episode ep;
  ep.states.resize(n, episode_len);
  ep.inputs.resize(m, episode_len);
  ep.restart.assign(static_cast<std::size_t>(episode_len), 0);

  VectorXd x = sample_initial_state(params, rng);
  ep.restart[0] = 1;
  for (int k = 0; k < episode_len; ++k) {
    VectorXd u(m);
    for (int j = 0; j < m; ++j) u[j] = uniform(rng, lo[j], hi[j]);
    ep.states.col(k) = x;
    ep.inputs.col(k) = u;
    if (k + 1 == episode_len) break;
    VectorXd next = step(params, x, u);
    if (pole_fallen(params, next)) {
      // early termination: restart from the initial distribution, keep what we have
      next = sample_initial_state(params, rng);
      ep.restart[static_cast<std::size_t>(k) + 1] = 1;
    }
    x = std::move(next);
  }
  return ep;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// NormStats

MatrixXd NormStats::normalize_state(const MatrixXd& x) const {
  return (x.colwise() - state_mean).array().colwise() / state_std.array();
}

MatrixXd NormStats::denormalize_state(const MatrixXd& z) const {
  return (z.array().colwise() * state_std.array()).matrix().colwise() + state_mean;
}

MatrixXd NormStats::normalize_input(const MatrixXd& u) const {
  return (u.colwise() - input_mean).array().colwise() / input_std.array();
}

MatrixXd NormStats::denormalize_input(const MatrixXd& z) const {
  return (z.array().colwise() * input_std.array()).matrix().colwise() + input_mean;
}

// ---------------------------------------------------------------------------
// Generation

Split split_of(int episode_index, int episode_count, std::uint64_t seed) {
  if (episode_index < 0 || episode_index >= episode_count) {
    throw ArgumentError("split_of: episode index out of range");
  }
  std::vector<int> order(static_cast<std::size_t>(episode_count));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x5b1u));
  std::shuffle(order.begin(), order.end(), rng);
  const auto pos = static_cast<int>(
      std::find(order.begin(), order.end(), episode_index) - order.begin());

  int n_val = static_cast<int>(std::lround(0.1 * episode_count));
  int n_test = n_val;
  if (episode_count >= 3) {
    n_val = std::max(n_val, 1);
    n_test = std::max(n_test, 1);
  }
  const int n_train = episode_count - n_val - n_test;
  if (pos < n_train) return Split::Train;
  if (pos < n_train + n_val) return Split::Validation;
  return Split::Test;
}

SubDataset generate_subdataset(const SystemParams& params, int total_samples, int episode_len,
                               std::uint64_t seed) {
  if (episode_len < 1 || total_samples < episode_len || total_samples % episode_len != 0) {
    throw ArgumentError("generate_subdataset: total_samples must be a positive multiple of "
                        "episode_len");
  }
  const int count = total_samples / episode_len;
  SubDataset sub;
  sub.params = params;
  sub.seed = seed;
  sub.episodes.resize(static_cast<std::size_t>(count));
  std::vector<int> regenerated(static_cast<std::size_t>(count), 0);

  parallel_for(static_cast<std::size_t>(count), [&](std::size_t e) {
    const std::uint64_t episode_seed = derive_seed(seed, e);
    for (int attempt = 0;; ++attempt) {
      try {
        sub.episodes[e] = simulate_episode(params, episode_len, derive_seed(episode_seed, attempt));
        break;
      } catch (const DivergenceError&) {
        if (attempt + 1 >= kMaxRegenerations) throw;
      } catch (const IntegrationError&) {
        if (attempt + 1 >= kMaxRegenerations) throw;
      }
      ++regenerated[e];
    }
    sub.episodes[e].split = split_of(static_cast<int>(e), count, seed);
  });
  sub.regenerated = std::accumulate(regenerated.begin(), regenerated.end(), 0);
  return sub;
}

MetaDataset generate_meta_dataset(SystemKind kind, const DataConfig& config) {
  if (config.num_tasks < 1) throw ArgumentError("generate_meta_dataset: need at least one task");
  MetaDataset meta;
  meta.kind = kind;
  meta.episode_len = config.episode_len;
  meta.seed = config.seed;
  meta.subdatasets.reserve(static_cast<std::size_t>(config.num_tasks));
  for (int i = 0; i < config.num_tasks; ++i) {
    const SystemParams params =
        sample_params(kind, derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(i)),
                      config.constants);
    meta.subdatasets.push_back(generate_subdataset(
        params, config.samples_per_task, config.episode_len,
        derive_seed(config.seed, 2000 + static_cast<std::uint64_t>(i))));
  }
  meta.norm = compute_norm_stats(meta);
  return meta;
}

std::pair<int, int> data_dims(const MetaDataset& meta) {
  std::pair<int, int> dims{-1, -1};
  for (const auto& sub : meta.subdatasets) {
    for (const auto& ep : sub.episodes) {
      const std::pair<int, int> d{static_cast<int>(ep.states.rows()), static_cast<int>(ep.inputs.rows())};
      if (dims.first < 0) dims = d;
      if (d != dims || ep.inputs.cols() != ep.length() ||
          ep.restart.size() != static_cast<std::size_t>(ep.length())) {
        throw ArgumentError("episodes have inconsistent shapes");
      }
    }
  }
  if (dims.first < 0) dims = {state_dim(meta.kind), input_dim(meta.kind)};
  return dims;
}

NormStats compute_norm_stats(const MetaDataset& meta, std::vector<std::string>* warnings) {
  const auto [n, m] = data_dims(meta);
  VectorXd s_sum = VectorXd::Zero(n), s_sq = VectorXd::Zero(n);
  VectorXd u_sum = VectorXd::Zero(m), u_sq = VectorXd::Zero(m);
  double count = 0.0;

  // two passes for numerical stability: means first, then centred squares
  for (const auto& sub : meta.subdatasets) {
    for (const auto& ep : sub.episodes) {
      if (ep.split != Split::Train) continue;
      s_sum += ep.states.rowwise().sum();
      u_sum += ep.inputs.rowwise().sum();
      count += static_cast<double>(ep.length());
    }
  }
  if (count == 0.0) throw ArgumentError("compute_norm_stats: empty training split");
  NormStats stats;
  stats.state_mean = s_sum / count;
  stats.input_mean = u_sum / count;
  for (const auto& sub : meta.subdatasets) {
    for (const auto& ep : sub.episodes) {
      if (ep.split != Split::Train) continue;
      s_sq += (ep.states.colwise() - stats.state_mean).array().square().matrix().rowwise().sum();
      u_sq += (ep.inputs.colwise() - stats.input_mean).array().square().matrix().rowwise().sum();
    }
  }
  stats.state_std = (s_sq / count).cwiseSqrt();
  stats.input_std = (u_sq / count).cwiseSqrt();

  auto floor_std = [&](VectorXd& std_dev, const char* what) {
    for (Eigen::Index i = 0; i < std_dev.size(); ++i) {
      if (std_dev[i] < kStdFloor) {
        std_dev[i] = kStdFloor;
        if (warnings) {
          warnings->push_back(std::string(what) + " dimension " + std::to_string(i) +
                              " is constant; std floored at 1e-8");
        }
      }
    }
  };
  floor_std(stats.state_std, "state");
  floor_std(stats.input_std, "input");
  return stats;
}

MetaDataset normalized(const MetaDataset& meta) {
  if (meta.normalized) return meta;
  MetaDataset out = meta;
  for (auto& sub : out.subdatasets) {
    for (auto& ep : sub.episodes) {
      ep.states = meta.norm.normalize_state(ep.states);
      ep.inputs = meta.norm.normalize_input(ep.inputs);
    }
  }
  out.normalized = true;
  return out;
}

// ---------------------------------------------------------------------------
// Windows

std::vector<WindowSample> anchored_windows(const MetaDataset& meta, Split split, int horizon) {
  if (horizon < 1) throw ArgumentError("anchored_windows: horizon must be positive");
  std::vector<WindowSample> windows;
  for (std::size_t task = 0; task < meta.subdatasets.size(); ++task) {
    for (const auto& ep : meta.subdatasets[task].episodes) {
      if (ep.split != split) continue;
      const Eigen::Index len = ep.length();
      // next_restart[k]: first restart index strictly after k
      std::vector<Eigen::Index> next_restart(static_cast<std::size_t>(len), len);
      for (Eigen::Index k = len - 2; k >= 0; --k) {
        const auto ku = static_cast<std::size_t>(k);
        next_restart[ku] = ep.restart[ku + 1] ? k + 1 : next_restart[ku + 1];
      }
      for (Eigen::Index k = 0; k + horizon < len; ++k) {
        if (next_restart[static_cast<std::size_t>(k)] <= k + horizon) continue;
        WindowSample w;
        w.task = static_cast<int>(task);
        w.split = split;
        w.anchor = ep.states.col(k);
        w.inputs = ep.inputs.middleCols(k, horizon);
        w.targets = ep.states.middleCols(k + 1, horizon);
        windows.push_back(std::move(w));
      }
    }
  }
  return windows;
}

// ---------------------------------------------------------------------------
// Persistence

void save_meta_dataset(const MetaDataset& meta, const std::filesystem::path& path) {
  if (data_dims(meta) != std::pair{state_dim(meta.kind), input_dim(meta.kind)}) {
    throw ArgumentError("dataset dimensions do not match the system kind");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write dataset file " + path.string());
  io::write_header(out, kDatasetMagic, kDatasetVersion);
  io::write_u32(out, static_cast<std::uint32_t>(meta.kind));
  io::write_u32(out, static_cast<std::uint32_t>(state_dim(meta.kind)));
  io::write_u32(out, static_cast<std::uint32_t>(input_dim(meta.kind)));
  io::write_u64(out, meta.subdatasets.size());
  io::write_u64(out, static_cast<std::uint64_t>(meta.episode_len));
  io::write_u64(out, meta.seed);
  io::write_u32(out, meta.normalized ? 1u : 0u);
  io::write_vector(out, meta.norm.state_mean);
  io::write_vector(out, meta.norm.state_std);
  io::write_vector(out, meta.norm.input_mean);
  io::write_vector(out, meta.norm.input_std);
  for (const auto& sub : meta.subdatasets) {
    io::write_string(out, constants_to_json(sub.params.constants));
    io::write_f64(out, sub.params.uncertain[0]);
    io::write_f64(out, sub.params.uncertain[1]);
    io::write_u64(out, sub.seed);
    io::write_u64(out, static_cast<std::uint64_t>(sub.regenerated));
    io::write_u64(out, sub.episodes.size());
    for (const auto& ep : sub.episodes) {
      io::write_u32(out, static_cast<std::uint32_t>(ep.split));
      io::write_string(out, std::string(ep.restart.begin(), ep.restart.end()));
      io::write_matrix(out, ep.states);
      io::write_matrix(out, ep.inputs);
    }
  }
  out.write(kEndMagic.data(), static_cast<std::streamsize>(kEndMagic.size()));
  if (!out) throw ArgumentError("failed writing dataset file " + path.string());
}

MetaDataset load_meta_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset file " + path.string());
  io::read_header(in, kDatasetMagic, kDatasetVersion, "dataset");
  MetaDataset meta;
  const auto kind = io::read_u32(in);
  if (kind > 2) throw FormatError("dataset: unknown system kind");
  meta.kind = static_cast<SystemKind>(kind);
  const auto n = io::read_u32(in);
  const auto m = io::read_u32(in);
  if (n != static_cast<std::uint32_t>(state_dim(meta.kind)) ||
      m != static_cast<std::uint32_t>(input_dim(meta.kind))) {
    throw FormatError("dataset: dimensions do not match system kind");
  }
  const auto num_tasks = io::read_u64(in);
  meta.episode_len = static_cast<int>(io::read_u64(in));
  meta.seed = io::read_u64(in);
  meta.normalized = io::read_u32(in) != 0;
  meta.norm.state_mean = io::read_vector(in);
  meta.norm.state_std = io::read_vector(in);
  meta.norm.input_mean = io::read_vector(in);
  meta.norm.input_std = io::read_vector(in);
  if (num_tasks > 100000) throw FormatError("dataset: implausible task count");
  for (std::uint64_t i = 0; i < num_tasks; ++i) {
    SubDataset sub;
    sub.params.kind = meta.kind;
    sub.params.constants = constants_from_json(io::read_string(in));
    sub.params.uncertain[0] = io::read_f64(in);
    sub.params.uncertain[1] = io::read_f64(in);
    sub.seed = io::read_u64(in);
    sub.regenerated = static_cast<int>(io::read_u64(in));
    const auto episodes = io::read_u64(in);
    if (episodes > 10000000) throw FormatError("dataset: implausible episode count");
    for (std::uint64_t e = 0; e < episodes; ++e) {
      Episode ep;
      const auto split = io::read_u32(in);
      if (split > 2) throw FormatError("dataset: bad split tag");
      ep.split = static_cast<Split>(split);
      const std::string restart = io::read_string(in);
      ep.restart.assign(restart.begin(), restart.end());
      ep.states = io::read_matrix(in);
      ep.inputs = io::read_matrix(in);
      if (ep.states.rows() != n || ep.inputs.rows() != m ||
          ep.states.cols() != ep.inputs.cols() ||
          static_cast<Eigen::Index>(ep.restart.size()) != ep.states.cols()) {
        throw FormatError("dataset: inconsistent episode shapes");
      }
      sub.episodes.push_back(std::move(ep));
    }
    meta.subdatasets.push_back(std::move(sub));
  }
  io::Magic end{};
  in.read(end.data(), static_cast<std::streamsize>(end.size()));
  if (in.gcount() != static_cast<std::streamsize>(end.size()) || end != kEndMagic) {
    throw FormatError("dataset: missing end marker (truncated file?)");
  }
  return meta;
}

void write_manifest(const MetaDataset& meta, const std::filesystem::path& path) {
  using nlohmann::json;
  static const char* names[3][2] = {
      {"pole_length", "pole_mass"}, {"dissociation_K", "input_gain_b1"}, {"T10", "T20"}};
  const auto k = static_cast<int>(meta.kind);
  json j;
  j["system"] = std::string(to_string(meta.kind));
  j["num_tasks"] = meta.subdatasets.size();
  j["episode_len"] = meta.episode_len;
  j["seed"] = meta.seed;
  j["tasks"] = json::array();
  for (std::size_t i = 0; i < meta.subdatasets.size(); ++i) {
    const auto& sub = meta.subdatasets[i];
    json t;
    t["index"] = i;
    t[names[k][0]] = sub.params.uncertain[0];
    t[names[k][1]] = sub.params.uncertain[1];
    t["seed"] = sub.seed;
    t["episodes"] = sub.episodes.size();
    t["regenerated"] = sub.regenerated;
    j["tasks"].push_back(t);
  }
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

bool operator==(const Episode& a, const Episode& b) {
  return a.split == b.split && a.restart == b.restart && a.states.rows() == b.states.rows() &&
         a.states.cols() == b.states.cols() && a.inputs.rows() == b.inputs.rows() &&
         a.inputs.cols() == b.inputs.cols() && a.states == b.states && a.inputs == b.inputs;
}

bool operator==(const MetaDataset& a, const MetaDataset& b) {
  auto same_vec = [](const VectorXd& x, const VectorXd& y) {
    return x.size() == y.size() && x == y;
  };
  if (a.kind != b.kind || a.episode_len != b.episode_len || a.seed != b.seed ||
      a.normalized != b.normalized || a.subdatasets.size() != b.subdatasets.size()) {
    return false;
  }
  if (!same_vec(a.norm.state_mean, b.norm.state_mean) ||
      !same_vec(a.norm.state_std, b.norm.state_std) ||
      !same_vec(a.norm.input_mean, b.norm.input_mean) ||
      !same_vec(a.norm.input_std, b.norm.input_std)) {
    return false;
  }
  for (std::size_t i = 0; i < a.subdatasets.size(); ++i) {
    const auto& x = a.subdatasets[i];
    const auto& y = b.subdatasets[i];
    if (x.params.kind != y.params.kind || x.params.uncertain != y.params.uncertain ||
        constants_to_json(x.params.constants) != constants_to_json(y.params.constants) ||
        x.seed != y.seed || x.regenerated != y.regenerated || x.episodes != y.episodes) {
      return false;
    }
  }
  return true;
}

}  // namespace mako
