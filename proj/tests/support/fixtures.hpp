#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include <covshift/dataset.hpp>
#include <covshift/nuisance.hpp>

#include "support/oracles.hpp"

namespace fixture {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("covshift_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  std::string write(const std::string& name, const std::string& content) const {
    const auto p = file(name);
    std::ofstream(p) << content;
    return p;
  }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Dataset with a single zero covariate column from a Tiny problem.
inline covshift::Dataset dataset_of(const oracle::Tiny& t) {
  const auto n = static_cast<Eigen::Index>(t.n());
  std::vector<std::uint8_t> s(t.s.begin(), t.s.end());
  return covshift::Dataset(Eigen::MatrixXd::Zero(n, 1), s, t.a, t.y, t.arms);
}

inline covshift::NuisanceFits fits_of(const oracle::Tiny& t) {
  const auto n = static_cast<Eigen::Index>(t.n());
  covshift::NuisanceFits f;
  f.mu.resize(n, t.arms);
  f.pi.resize(n, t.arms);
  f.rho.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    f.rho(i) = t.rho[k];
    for (int a = 0; a < t.arms; ++a) {
      f.mu(i, a) = t.mu[k][static_cast<std::size_t>(a)];
      f.pi(i, a) = t.pi[k][static_cast<std::size_t>(a)];
    }
  }
  f.pi_untrimmed = f.pi;
  f.rho_untrimmed = f.rho;
  return f;
}

// Random tiny problem with n <= 8 and up to 3 arms. Every arm has a study
// row and at least one row is external, so all six estimators are defined.
inline oracle::Tiny random_tiny(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> arms_dist(2, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 2.0);
  oracle::Tiny t;
  t.arms = arms_dist(rng);
  const int n_study_min = t.arms;
  std::uniform_int_distribution<int> n_dist(n_study_min + 1, 8);
  const int n = n_dist(rng);
  std::uniform_int_distribution<int> ext_dist(1, n - n_study_min);
  const int n_ext = ext_dist(rng);
  const int n_study = n - n_ext;
  std::uniform_int_distribution<int> arm_dist(0, t.arms - 1);

  std::vector<int> study_arms;
  for (int a = 0; a < t.arms; ++a) study_arms.push_back(a);
  while (static_cast<int>(study_arms.size()) < n_study) study_arms.push_back(arm_dist(rng));
  std::shuffle(study_arms.begin(), study_arms.end(), rng);

  std::vector<int> is_study(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n_study; ++i) is_study[static_cast<std::size_t>(i)] = 1;
  std::shuffle(is_study.begin(), is_study.end(), rng);

  std::size_t next = 0;
  for (int i = 0; i < n; ++i) {
    const bool study = is_study[static_cast<std::size_t>(i)] == 1;
    t.s.push_back(study ? 1 : 0);
    if (study) {
      t.a.emplace_back(study_arms[next++]);
      t.y.emplace_back(normal(rng));
    } else {
      t.a.emplace_back(std::nullopt);
      t.y.emplace_back(std::nullopt);
    }
    t.rho.push_back(0.05 + 0.9 * unit(rng));
    oracle::Vec p(static_cast<std::size_t>(t.arms));
    double total = 0;
    for (auto& v : p) {
      v = 0.2 + unit(rng);
      total += v;
    }
    for (auto& v : p) v /= total;
    t.pi.push_back(p);
    oracle::Vec m(static_cast<std::size_t>(t.arms));
    for (auto& v : m) v = normal(rng);
    t.mu.push_back(m);
  }
  return t;
}

}  // namespace fixture
