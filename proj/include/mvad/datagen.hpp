#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mvad/features.hpp"
#include "mvad/pipeline.hpp"
#include "mvad/rng.hpp"

namespace mvad {

// The four statistical anomaly shapes the views are built to expose: an
// unseen behavior, a routine behavior returning after a long absence, a
// short-window rate spike of a rare behavior, and a high-rate behavior
// going quiet.
enum class AnomalyKind { kNovel, kResurfacing, kBurst, kSuppression };

const char* anomaly_kind_name(AnomalyKind kind);
AnomalyKind anomaly_kind_from_name(const std::string& name);

struct GenSpec {
  std::int64_t n_users = 40;
  std::int64_t sessions_per_user = 10;
  std::int64_t session_len_min = 64;
  std::int64_t session_len_max = 128;
  // Master behavior list; each user routinely uses a 4-element subset.
  std::vector<std::string> behaviors = default_behaviors();
  double anomaly_rate = 0.2;
  // Relative draw weights for {novel, resurfacing, burst, suppression}.
  std::array<double, 4> anomaly_mix = {1.0, 1.0, 1.0, 1.0};
  std::uint64_t seed = 1;

  static std::vector<std::string> default_behaviors();
  void validate() const;
};

// One user's routine: a behavior subset with skewed categorical weights, plus
// the master-list remainder available as never-seen behaviors.
struct UserProfile {
  std::string user_id;
  std::vector<std::string> behaviors;
  std::vector<double> weights;            // same length, positive, sums to 1
  std::vector<std::string> novel_pool;    // master behaviors outside the routine
};

// Deterministic per-user profile from the spec seed.
UserProfile make_profile(const GenSpec& spec, std::int64_t user_index);

// Routine session: `length` events drawn from the profile's distribution with
// strictly increasing timestamps starting at start_ts.
Session gen_normal_session(const UserProfile& profile, std::int64_t length,
                           std::int64_t start_ts, Rng& rng);

// Rewrites one session in place to carry exactly one anomaly of the given
// kind and sets its label to 1. Throws when the kind cannot be realized in
// this session, naming the violated constraint.
void inject_anomaly(Session& session, AnomalyKind kind, const UserProfile& profile, Rng& rng);

struct GeneratedData {
  std::vector<Session> sessions;      // labels set on every session
  std::vector<SessionLabel> labels;   // kind = "normal" or the anomaly kind
};

// Full corpus: ceil(anomaly_rate * N) sessions carry one anomaly each, the
// rest are routine. A pure function of the spec (seed included).
GeneratedData gen_dataset(const GenSpec& spec);

// Flattens the generated sessions into (user, ts)-sorted raw events, the
// same shape the log parser emits.
std::vector<RawEvent> flatten_events(const GeneratedData& data);

}  // namespace mvad
