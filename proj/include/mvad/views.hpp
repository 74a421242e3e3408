#pragma once

#include <cstdint>
#include <vector>

namespace mvad {

// Multi-scale rarity windows, in event steps, strictly increasing.
struct StatusConfig {
  std::vector<std::int32_t> windows{3, 7, 15};

  int k() const { return static_cast<int>(windows.size()); }
  void validate() const;
};

// Short/long frequency-contrast windows, in event steps.
struct FreqConfig {
  std::int32_t h_s = 3;
  std::int32_t h_l = 30;
  double epsilon = 1e-6;
  double clamp_max = 10.0;

  void validate() const;
};

// Synchronized per-session sequences: tokens, rarity counts, frequency contrast.
struct ViewTriplet {
  std::vector<std::int32_t> z;
  std::vector<std::int32_t> s;
  std::vector<double> f;
  std::int64_t clamped_count = 0;  // positions where raw f fell outside [-1, clamp_max]

  void check_invariants(const StatusConfig& status_cfg, const FreqConfig& freq_cfg) const;
};

// Streaming extractors: single pass, rolling state, no window rescans.
std::vector<std::int32_t> status_view(const std::vector<std::int32_t>& z,
                                      const StatusConfig& cfg);
std::vector<double> frequency_view(const std::vector<std::int32_t>& z, const FreqConfig& cfg,
                                   std::int64_t* clamped_count = nullptr);

ViewTriplet derive_views(const std::vector<std::int32_t>& z, const StatusConfig& status_cfg,
                         const FreqConfig& freq_cfg);

// Reference implementations: direct O(T*w) rescans of every window. Kept
// deliberately naive; the streaming versions must match them.
std::vector<std::int32_t> oracle_status(const std::vector<std::int32_t>& z,
                                        const StatusConfig& cfg);
std::vector<double> oracle_frequency(const std::vector<std::int32_t>& z, const FreqConfig& cfg,
                                     std::int64_t* clamped_count = nullptr);

}  // namespace mvad
