#include "mvad/views.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace mvad {

void StatusConfig::validate() const {
  if (windows.empty()) throw std::invalid_argument("StatusConfig: windows must be non-empty");
  std::int32_t prev = 0;
  for (std::int32_t w : windows) {
    if (w <= prev)
      throw std::invalid_argument("StatusConfig: windows must be strictly increasing positive, got " +
                                  std::to_string(w) + " after " + std::to_string(prev));
    prev = w;
  }
}

void FreqConfig::validate() const {
  if (h_s <= 0 || h_l <= 0)
    throw std::invalid_argument("FreqConfig: window lengths must be positive");
  if (h_s >= h_l)
    throw std::invalid_argument("FreqConfig: h_s must be smaller than h_l, got h_s=" +
                                std::to_string(h_s) + " h_l=" + std::to_string(h_l));
  if (!(epsilon > 0.0)) throw std::invalid_argument("FreqConfig: epsilon must be positive");
  if (!(clamp_max > 0.0)) throw std::invalid_argument("FreqConfig: clamp_max must be positive");
}

void ViewTriplet::check_invariants(const StatusConfig& status_cfg,
                                   const FreqConfig& freq_cfg) const {
  if (z.empty() || z.size() != s.size() || z.size() != f.size())
    throw std::runtime_error("ViewTriplet: sequences must be non-empty and equal-length");
  for (std::int32_t v : s)
    if (v < 0 || v > status_cfg.k())
      throw std::runtime_error("ViewTriplet: status value " + std::to_string(v) +
                               " outside [0, " + std::to_string(status_cfg.k()) + "]");
  for (double v : f)
    if (v < -1.0 || v > freq_cfg.clamp_max)
      throw std::runtime_error("ViewTriplet: frequency value " + std::to_string(v) +
                               " outside [-1, clamp_max]");
}

std::vector<std::int32_t> status_view(const std::vector<std::int32_t>& z,
                                      const StatusConfig& cfg) {
  cfg.validate();
  if (z.empty()) throw std::invalid_argument("status_view: empty token sequence");
  const std::int64_t t_len = static_cast<std::int64_t>(z.size());
  std::vector<std::int32_t> s(z.size());
  // Rolling last-seen index per token: the most recent occurrence distance
  // decides membership in every window at once.
  std::unordered_map<std::int32_t, std::int64_t> last_seen;
  last_seen.reserve(z.size());
  for (std::int64_t t = 0; t < t_len; ++t) {
    const auto it = last_seen.find(z[static_cast<std::size_t>(t)]);
    const std::int64_t dist =
        it == last_seen.end() ? std::numeric_limits<std::int64_t>::max() : t - it->second;
    std::int32_t absent = 0;
    for (std::int32_t w : cfg.windows)
      if (dist > w) ++absent;
    s[static_cast<std::size_t>(t)] = absent;
    last_seen[z[static_cast<std::size_t>(t)]] = t;
  }
  return s;
}

namespace {

// Shared core for the streaming and oracle frequency extractors: both produce
// integer counts per window, and the contrast below is computed with the same
// operations in the same order, so results agree bitwise.
inline double freq_contrast(std::int64_t count_s, std::int64_t count_l, const FreqConfig& cfg,
                            std::int64_t* clamped) {
  const double fs = static_cast<double>(count_s) / static_cast<double>(cfg.h_s);
  const double fl = static_cast<double>(count_l) / static_cast<double>(cfg.h_l);
  const double raw = (fs - fl) / (fl + cfg.epsilon);
  double out = raw;
  if (out < -1.0) out = -1.0;
  if (out > cfg.clamp_max) out = cfg.clamp_max;
  if (clamped && out != raw) ++*clamped;
  return out;
}

}  // namespace

std::vector<double> frequency_view(const std::vector<std::int32_t>& z, const FreqConfig& cfg,
                                   std::int64_t* clamped_count) {
  cfg.validate();
  if (z.empty()) throw std::invalid_argument("frequency_view: empty token sequence");
  const std::int64_t t_len = static_cast<std::int64_t>(z.size());
  std::vector<double> f(z.size());
  // Rolling per-token counts over the trailing h_s / h_l positions; tokens
  // falling off the back of a window are evicted as the cursor advances.
  std::unordered_map<std::int32_t, std::int64_t> count_s, count_l;
  count_s.reserve(64);
  count_l.reserve(64);
  auto lookup = [](const std::unordered_map<std::int32_t, std::int64_t>& m, std::int32_t tok) {
    const auto it = m.find(tok);
    return it == m.end() ? std::int64_t{0} : it->second;
  };
  auto evict = [](std::unordered_map<std::int32_t, std::int64_t>& m, std::int32_t tok) {
    const auto it = m.find(tok);
    if (it->second == 1)
      m.erase(it);
    else
      --it->second;
  };
  for (std::int64_t t = 0; t < t_len; ++t) {
    const std::int32_t tok = z[static_cast<std::size_t>(t)];
    f[static_cast<std::size_t>(t)] =
        freq_contrast(lookup(count_s, tok), lookup(count_l, tok), cfg, clamped_count);
    ++count_s[tok];
    ++count_l[tok];
    if (t - cfg.h_s >= 0) evict(count_s, z[static_cast<std::size_t>(t - cfg.h_s)]);
    if (t - cfg.h_l >= 0) evict(count_l, z[static_cast<std::size_t>(t - cfg.h_l)]);
  }
  return f;
}

ViewTriplet derive_views(const std::vector<std::int32_t>& z, const StatusConfig& status_cfg,
                         const FreqConfig& freq_cfg) {
  if (z.empty()) throw std::invalid_argument("derive_views: empty token sequence");
  ViewTriplet out;
  out.z = z;
  out.s = status_view(z, status_cfg);
  out.f = frequency_view(z, freq_cfg, &out.clamped_count);
  return out;
}

std::vector<std::int32_t> oracle_status(const std::vector<std::int32_t>& z,
                                        const StatusConfig& cfg) {
  cfg.validate();
  if (z.empty()) throw std::invalid_argument("oracle_status: empty token sequence");
  const std::int64_t t_len = static_cast<std::int64_t>(z.size());
  std::vector<std::int32_t> s(z.size());
  for (std::int64_t t = 0; t < t_len; ++t) {
    std::int32_t absent = 0;
    for (std::int32_t w : cfg.windows) {
      bool found = false;
      for (std::int64_t j = std::max<std::int64_t>(0, t - w); j < t; ++j)
        if (z[static_cast<std::size_t>(j)] == z[static_cast<std::size_t>(t)]) {
          found = true;
          break;
        }
      if (!found) ++absent;
    }
    s[static_cast<std::size_t>(t)] = absent;
  }
  return s;
}

std::vector<double> oracle_frequency(const std::vector<std::int32_t>& z, const FreqConfig& cfg,
                                     std::int64_t* clamped_count) {
  cfg.validate();
  if (z.empty()) throw std::invalid_argument("oracle_frequency: empty token sequence");
  const std::int64_t t_len = static_cast<std::int64_t>(z.size());
  std::vector<double> f(z.size());
  auto count_in = [&](std::int64_t t, std::int32_t h) {
    std::int64_t count = 0;
    for (std::int64_t j = std::max<std::int64_t>(0, t - h); j < t; ++j)
      if (z[static_cast<std::size_t>(j)] == z[static_cast<std::size_t>(t)]) ++count;
    return count;
  };
  for (std::int64_t t = 0; t < t_len; ++t)
    f[static_cast<std::size_t>(t)] =
        freq_contrast(count_in(t, cfg.h_s), count_in(t, cfg.h_l), cfg, clamped_count);
  return f;
}

}  // namespace mvad
