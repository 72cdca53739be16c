#pragma once

// Task-indexed meta-dataset of randomly excited trajectories: generation,
// pooled normalization, train/validation/test splits, anchored prediction
// windows, and a bit-exact binary container.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mako/systems.hpp"

namespace mako {

enum class Split : std::uint8_t { Train = 0, Validation = 1, Test = 2 };
std::string_view to_string(Split split);

struct Episode {
  Eigen::MatrixXd states;  // n x T, column k holds x_k
  Eigen::MatrixXd inputs;  // m x T, column k holds u_k applied at x_k
  // restart[k] == 1 when x_k begins a fresh segment (always true at k = 0);
  // transitions never cross a restart.
  std::vector<std::uint8_t> restart;
  Split split = Split::Train;

  Eigen::Index length() const { return states.cols(); }
};

struct SubDataset {
  SystemParams params;
  std::vector<Episode> episodes;
  std::uint64_t seed = 0;
  int regenerated = 0;  // episodes discarded after divergence
};

struct NormStats {
  Eigen::VectorXd state_mean, state_std;
  Eigen::VectorXd input_mean, input_std;

  Eigen::MatrixXd normalize_state(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd denormalize_state(const Eigen::MatrixXd& z) const;
  Eigen::MatrixXd normalize_input(const Eigen::MatrixXd& u) const;
  Eigen::MatrixXd denormalize_input(const Eigen::MatrixXd& z) const;
};

struct MetaDataset {
  SystemKind kind = SystemKind::Cartpole;
  int episode_len = 0;
  std::uint64_t seed = 0;
  std::vector<SubDataset> subdatasets;
  NormStats norm;
  bool normalized = false;
};

struct DataConfig {
  int num_tasks = 4;
  int samples_per_task = 5000;
  int episode_len = 250;
  std::uint64_t seed = 0;
  SystemConstants constants = default_constants();
};

/// (state, input) dimensions carried by the episodes; the system's own when
/// there are none. Throws ArgumentError when episodes disagree.
std::pair<int, int> data_dims(const MetaDataset& meta);

/// Split assignment for one episode: a pure function of (index, count, seed).
/// Episodes are ranked by a seeded permutation; the first 80% train, the
/// next 10% validate and the rest test.
Split split_of(int episode_index, int episode_count, std::uint64_t seed);

SubDataset generate_subdataset(const SystemParams& params, int total_samples, int episode_len,
                               std::uint64_t seed);

/// Samples N task settings, generates each sub-dataset and attaches raw
/// normalization statistics (the data itself stays raw).
MetaDataset generate_meta_dataset(SystemKind kind, const DataConfig& config);

/// Per-dimension mean/std pooled over all training-split samples. Std is the
/// population value floored at 1e-8; floored dimensions are reported through
/// `warnings` when given.
NormStats compute_norm_stats(const MetaDataset& meta, std::vector<std::string>* warnings = nullptr);

/// Copy of `meta` with states and inputs standardized by `meta.norm`.
MetaDataset normalized(const MetaDataset& meta);

void save_meta_dataset(const MetaDataset& meta, const std::filesystem::path& path);
MetaDataset load_meta_dataset(const std::filesystem::path& path);
/// Audit manifest (JSON) listing each sub-dataset's task parameters.
void write_manifest(const MetaDataset& meta, const std::filesystem::path& path);

bool operator==(const Episode& a, const Episode& b);
bool operator==(const MetaDataset& a, const MetaDataset& b);

/// One anchored prediction window: x_k, u_{k..k+H-1} and x_{k+1..k+H}.
struct WindowSample {
  int task = 0;
  Split split = Split::Train;
  Eigen::VectorXd anchor;   // n
  Eigen::MatrixXd inputs;   // m x H
  Eigen::MatrixXd targets;  // n x H
};

/// Every stride-1 window of the given split that stays inside one segment.
std::vector<WindowSample> anchored_windows(const MetaDataset& meta, Split split, int horizon);

}  // namespace mako
