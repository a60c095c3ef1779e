#pragma once

#include <Eigen/Dense>
#include <string>
#include <string_view>
#include <vector>

#include "pplab/errors.hpp"

namespace pplab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Which feature map a difference vector lives in.
enum class Space { phi, psi };

inline std::string_view to_string(Space s) { return s == Space::phi ? "phi" : "psi"; }

inline Space space_from_string(std::string_view s) {
  if (s == "phi") return Space::phi;
  if (s == "psi") return Space::psi;
  throw ValidationError("unknown feature space '" + std::string(s) + "'");
}

/** @brief Feature difference z = f(tau) - f(tau') with preference label o. */
struct PreferenceSample {
  Vec z;
  int o = 1;
  Space space = Space::phi;

  friend bool operator==(const PreferenceSample& a, const PreferenceSample& b) {
    return a.o == b.o && a.space == b.space && a.z.size() == b.z.size() && a.z == b.z;
  }
};

enum class Provenance { clean, synthesized, merged };

class PreferenceDataset {
 public:
  PreferenceDataset() = default;
  explicit PreferenceDataset(Provenance p) : provenance_(p) {}

  void push_back(PreferenceSample s) {
    if (s.o != 1 && s.o != -1) throw ValidationError("label must be +1 or -1");
    if (!s.z.allFinite()) throw ValidationError("non-finite feature difference");
    if (!samples_.empty()) {
      if (s.space != samples_.front().space) throw ValidationError("mixed feature spaces in dataset");
      if (s.z.size() != samples_.front().z.size()) throw ValidationError("mixed feature dimensions in dataset");
    }
    samples_.push_back(std::move(s));
  }

  /// Appends `n` copies of `s`.
  void append(const PreferenceSample& s, std::size_t n) {
    samples_.reserve(samples_.size() + n);
    for (std::size_t i = 0; i < n; ++i) push_back(s);
  }

  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  const PreferenceSample& operator[](std::size_t i) const { return samples_[i]; }
  auto begin() const noexcept { return samples_.begin(); }
  auto end() const noexcept { return samples_.end(); }
  const std::vector<PreferenceSample>& samples() const noexcept { return samples_; }
  Provenance provenance() const noexcept { return provenance_; }
  void set_provenance(Provenance p) noexcept { provenance_ = p; }

  /// Feature dimension, or -1 when empty.
  Eigen::Index dim() const noexcept { return samples_.empty() ? -1 : samples_.front().z.size(); }

  friend bool operator==(const PreferenceDataset& a, const PreferenceDataset& b) {
    return a.samples_ == b.samples_;
  }

 private:
  std::vector<PreferenceSample> samples_;
  Provenance provenance_ = Provenance::clean;
};

/** @brief Clean samples followed by synthesized ones. */
inline PreferenceDataset merge(const PreferenceDataset& clean, const PreferenceDataset& extra) {
  PreferenceDataset out(Provenance::merged);
  for (const auto& s : clean) out.push_back(s);
  for (const auto& s : extra) out.push_back(s);
  return out;
}

}  // namespace pplab
