#include "mvad/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace mvad {

namespace {

// 2024-01-01 00:00:00 UTC; session days count up from here.
constexpr std::int64_t kEpochBase = 1704067200;
constexpr std::int64_t kMinStep = 20;    // seconds between events
constexpr std::int64_t kMaxStep = 60;
// Span of preceding events a burst or suppression scrubs clean of its target
// token. Matches the default long frequency window (FreqConfig::h_l == 30)
// and exceeds the widest default status window (15), so at the point of
// return the token is absent from every backward-looking view: the first
// returning event maxes out the status count, and each following one lands at
// the frequency-deviation ceiling because the long window holds nothing older
// than the short window does.
constexpr std::int64_t kClearSpan = 30;
// Resurfacing uses a shorter dormancy: longer than the widest status window
// (15), so the comeback still maxes out the status count, but shorter than
// the long frequency window, so a few older occurrences stay inside it and
// the comeback reads as a moderate frequency shift rather than a ceiling
// spike. The two anomaly kinds thus light up the two views differently.
constexpr std::int64_t kDormancyMin = 16;
constexpr std::int64_t kDormancyMax = 20;
// Spacing of the steady reuse that follows a comeback: wide enough to clear
// the two smaller status windows (3 and 7), inside the widest (15).
constexpr std::int64_t kReuseGapMin = 8;
constexpr std::int64_t kReuseGapMax = 13;

std::string behavior_at(const Session& s, std::size_t i) { return s.events[i].behavior; }

// Draws a behavior from the profile restricted to `allowed` (weights
// renormalized implicitly by rejection over the reduced categorical).
std::string draw_from(const UserProfile& profile, const std::set<std::string>& allowed,
                      Rng& rng) {
  std::vector<std::string> names;
  std::vector<double> weights;
  for (std::size_t i = 0; i < profile.behaviors.size(); ++i)
    if (allowed.count(profile.behaviors[i])) {
      names.push_back(profile.behaviors[i]);
      weights.push_back(profile.weights[i]);
    }
  if (names.empty())
    throw std::logic_error("datagen: internal error: empty replacement candidate set");
  return names[rng.categorical(weights)];
}

std::set<std::string> session_token_set(const Session& s) {
  std::set<std::string> out;
  for (const auto& e : s.events) out.insert(e.behavior);
  return out;
}

std::unordered_map<std::string, std::int64_t> behavior_counts(const Session& s) {
  std::unordered_map<std::string, std::int64_t> out;
  for (const auto& e : s.events) ++out[e.behavior];
  return out;
}

// True when overwriting [first, last) with `token` leaves every other
// behavior in that range with at least one occurrence elsewhere, so the
// session's token set survives the overwrite intact.
bool overwrite_keeps_token_set(const Session& s,
                               const std::unordered_map<std::string, std::int64_t>& total,
                               std::int64_t first, std::int64_t last,
                               const std::string& token) {
  std::unordered_map<std::string, std::int64_t> inside;
  for (std::int64_t i = first; i < last; ++i) ++inside[behavior_at(s, static_cast<std::size_t>(i))];
  for (const auto& [tok, n] : inside)
    if (tok != token && total.at(tok) - n <= 0) return false;
  return true;
}

void require_min_length(const Session& session, AnomalyKind kind, std::int64_t needed) {
  const std::int64_t len = static_cast<std::int64_t>(session.events.size());
  if (len < needed)
    throw std::invalid_argument(std::string("inject_anomaly: ") + anomaly_kind_name(kind) +
                                " needs a session of at least " + std::to_string(needed) +
                                " events, got " + std::to_string(len));
}

void inject_novel(Session& session, const UserProfile& profile, Rng& rng) {
  if (profile.novel_pool.empty())
    throw std::invalid_argument(
        "inject_anomaly: novel is infeasible: the user's routine already covers every behavior");
  const std::size_t len = session.events.size();

  // Splice a few unfamiliar behaviors into the second half, each visit an
  // adjacent triple: the first of a triple of a not-yet-seen behavior maxes
  // out the status count, and each repeat lands within the short frequency
  // window while the long window holds nothing older, which pins the
  // frequency deviation at its ceiling twice per triple. The number of
  // triples grows with session length so the pooled per-session statistics
  // shift by a margin that does not wash out in longer sessions. Insertion
  // points are applied back-to-front so a later splice can never split an
  // earlier triple.
  std::vector<std::size_t> pool_order(profile.novel_pool.size());
  std::iota(pool_order.begin(), pool_order.end(), std::size_t{0});
  rng.shuffle(pool_order);
  const std::size_t n_distinct = std::min<std::size_t>(
      static_cast<std::size_t>(2 + rng.uniform_int(0, 1)), pool_order.size());
  const std::size_t n_triples =
      std::clamp<std::size_t>(len / 24, std::size_t{2}, std::size_t{5});
  std::vector<std::size_t> cuts;
  for (std::size_t k = 0; k < n_triples; ++k)
    cuts.push_back(len / 2 + static_cast<std::size_t>(rng.uniform_int(
                                 0, static_cast<std::int64_t>(len - len / 2))));
  std::sort(cuts.begin(), cuts.end(), std::greater<>());

  std::vector<std::string> seq;
  seq.reserve(len + 3 * n_triples);
  for (const auto& e : session.events) seq.push_back(e.behavior);
  for (std::size_t k = 0; k < n_triples; ++k)
    seq.insert(seq.begin() + static_cast<std::ptrdiff_t>(cuts[k]), 3,
               profile.novel_pool[pool_order[k % n_distinct]]);

  // Rebuild the timestamp ladder from the original start (insertions changed
  // the length).
  std::int64_t ts = session.events.front().ts;
  std::vector<RawEvent> events;
  events.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i > 0) ts += rng.uniform_int(kMinStep, kMaxStep);
    events.push_back({session.user_id, seq[i], ts});
  }
  session.events = std::move(events);
}

void inject_resurfacing(Session& session, const UserProfile& profile, Rng& rng) {
  const std::int64_t len = static_cast<std::int64_t>(session.events.size());
  require_min_length(session, AnomalyKind::kResurfacing, 44);

  // A routine token goes dormant for 16-20 events, comes back as an adjacent
  // pair, and then stays in steady reuse — one occurrence every 8-13 events —
  // through the session's end, with its natural draws in between scrubbed so
  // the spacing holds. The comeback maxes out the status count (dormancy
  // exceeds every status window); each steady reuse clears the two smaller
  // windows but not the widest, so the tail of the session carries a raised
  // per-session status mass rather than a single spike. Dormancy is kept
  // shorter than the long frequency window on purpose: a few pre-dormancy
  // occurrences stay inside it, so no position lands at the frequency
  // ceiling and the pattern is a status-side anomaly.
  const std::int64_t gap = rng.uniform_int(kDormancyMin, kDormancyMax);
  const std::int64_t lo = std::max<std::int64_t>(gap + 8, len / 3);
  const std::int64_t hi = std::max(lo, len / 2);
  const std::int64_t p0 = rng.uniform_int(lo, hi);

  // Live per-behavior counts so scattered overwrites never erase a
  // behavior's last occurrence (the token set, and with it the Jaccard
  // similarity to the uninjected session, must survive).
  std::unordered_map<std::string, std::int64_t> counts = behavior_counts(session);
  std::set<std::string> present = session_token_set(session);

  // Candidates must occur inside (p0-30, p0-gap]: that occurrence both gives
  // the token somewhere to resurface from and keeps the long frequency
  // window non-empty at the comeback.
  std::set<std::string> seen;
  for (std::int64_t i = std::max<std::int64_t>(0, p0 - kClearSpan); i < p0 - gap; ++i)
    seen.insert(behavior_at(session, static_cast<std::size_t>(i)));
  if (present.size() < 2) seen.clear();  // nothing left to backfill the scrub with
  std::vector<std::string> candidates(seen.begin(), seen.end());
  rng.shuffle(candidates);
  for (const auto& token : candidates) {
    if (!overwrite_keeps_token_set(session, counts, p0, p0 + 2, token)) continue;

    std::set<std::string> others = present;
    others.erase(token);
    auto scrub = [&](std::int64_t first, std::int64_t last) {
      for (std::int64_t i = first; i < last; ++i)
        if (behavior_at(session, static_cast<std::size_t>(i)) == token) {
          const std::string repl = draw_from(profile, others, rng);
          --counts[token];
          ++counts[repl];
          session.events[static_cast<std::size_t>(i)].behavior = repl;
        }
    };
    auto overwrite = [&](std::int64_t i) {
      const std::string old = behavior_at(session, static_cast<std::size_t>(i));
      if (old == token) return true;
      if (counts[old] <= 1) return false;
      --counts[old];
      ++counts[token];
      session.events[static_cast<std::size_t>(i)].behavior = token;
      return true;
    };

    scrub(p0 - gap, p0);
    overwrite(p0);  // never fails: overwrite_keeps_token_set vetted [p0, p0+2)
    overwrite(p0 + 1);
    std::int64_t prev = p0 + 1;
    std::int64_t next = prev + rng.uniform_int(kReuseGapMin, kReuseGapMax);
    while (next < len) {
      // Shifting by up to two positions on a survivor-check miss keeps the
      // reuse gap within the widest status window.
      std::int64_t q = next;
      while (q < len && q - prev <= 15 && !overwrite(q)) ++q;
      if (q >= len || q - prev > 15) break;
      scrub(prev + 1, q);
      prev = q;
      next = prev + rng.uniform_int(kReuseGapMin, kReuseGapMax);
    }
    scrub(prev + 1, len);
    return;
  }
  throw std::invalid_argument(
      "inject_anomaly: resurfacing is infeasible: no routine token occurs in the stretch just "
      "before the dormancy gap while leaving another behavior available to backfill the scrub");
}

void inject_burst(Session& session, const UserProfile& profile, Rng& rng) {
  const std::int64_t len = static_cast<std::int64_t>(session.events.size());
  // Run length grows with the session so the pooled per-session frequency
  // mass shifts by a margin that does not wash out in longer sessions.
  const std::int64_t run = std::clamp<std::int64_t>(len / 8, 8, 16);
  require_min_length(session, AnomalyKind::kBurst, kClearSpan + run);

  // The burst token is the user's rarest routine behavior, so its long-window
  // rate stays low while the short-window rate saturates.
  const std::size_t low = static_cast<std::size_t>(
      std::min_element(profile.weights.begin(), profile.weights.end()) -
      profile.weights.begin());
  const std::string token = profile.behaviors[low];

  // Pick a run start late enough for a fully scrubbed long window before it,
  // whose overwritten positions all hold behaviors that survive elsewhere.
  std::vector<std::int64_t> starts;
  for (std::int64_t a = kClearSpan; a + run <= len; ++a) starts.push_back(a);
  rng.shuffle(starts);
  const std::unordered_map<std::string, std::int64_t> total = behavior_counts(session);
  for (std::int64_t a : starts) {
    if (!overwrite_keeps_token_set(session, total, a, a + run, token)) continue;
    std::set<std::string> present = session_token_set(session);
    present.erase(token);
    for (std::int64_t i = a - kClearSpan; i < a; ++i)
      if (behavior_at(session, static_cast<std::size_t>(i)) == token)
        session.events[static_cast<std::size_t>(i)].behavior = draw_from(profile, present, rng);
    for (std::int64_t i = a; i < a + run; ++i)
      session.events[static_cast<std::size_t>(i)].behavior = token;
    return;
  }
  throw std::invalid_argument(
      "inject_anomaly: burst is infeasible: every candidate run would erase some behavior's "
      "only occurrences");
}

void inject_suppression(Session& session, const UserProfile& profile, Rng& rng) {
  const std::int64_t len = static_cast<std::int64_t>(session.events.size());
  // The rebound flurry grows with the session so the pooled per-session
  // frequency mass shifts by a margin that does not wash out in longer
  // sessions.
  const std::int64_t flurry = std::clamp<std::int64_t>(len / 24, 4, 6);
  require_min_length(session, AnomalyKind::kSuppression, 16 + kClearSpan + flurry);

  // Silence the user's most frequent behavior for a kClearSpan-long stretch,
  // then bring it back as a concentrated flurry right after the stretch.
  const std::size_t high = static_cast<std::size_t>(
      std::max_element(profile.weights.begin(), profile.weights.end()) -
      profile.weights.begin());
  const std::string token = profile.behaviors[high];

  std::vector<std::int64_t> starts;
  for (std::int64_t a = 16; a + kClearSpan + flurry <= len; ++a) starts.push_back(a);
  rng.shuffle(starts);
  const std::unordered_map<std::string, std::int64_t> total = behavior_counts(session);
  for (std::int64_t a : starts) {
    bool seen_before = false;
    for (std::int64_t i = 0; i < a; ++i)
      if (behavior_at(session, static_cast<std::size_t>(i)) == token) seen_before = true;
    if (!seen_before) continue;
    const std::int64_t ret = a + kClearSpan;
    if (!overwrite_keeps_token_set(session, total, ret, ret + flurry, token)) continue;

    std::set<std::string> present = session_token_set(session);
    present.erase(token);
    for (std::int64_t i = a; i < ret; ++i)
      if (behavior_at(session, static_cast<std::size_t>(i)) == token)
        session.events[static_cast<std::size_t>(i)].behavior = draw_from(profile, present, rng);
    for (std::int64_t i = ret; i < ret + flurry; ++i)
      session.events[static_cast<std::size_t>(i)].behavior = token;
    return;
  }
  throw std::invalid_argument(
      "inject_anomaly: suppression is infeasible: the high-weight token never occurs before any "
      "candidate span whose return flurry keeps every other behavior alive");
}

}  // namespace

const char* anomaly_kind_name(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::kNovel: return "novel";
    case AnomalyKind::kResurfacing: return "resurfacing";
    case AnomalyKind::kBurst: return "burst";
    case AnomalyKind::kSuppression: return "suppression";
  }
  throw std::logic_error("anomaly_kind_name: unknown kind");
}

AnomalyKind anomaly_kind_from_name(const std::string& name) {
  if (name == "novel") return AnomalyKind::kNovel;
  if (name == "resurfacing") return AnomalyKind::kResurfacing;
  if (name == "burst") return AnomalyKind::kBurst;
  if (name == "suppression") return AnomalyKind::kSuppression;
  throw std::invalid_argument("unknown anomaly kind '" + name +
                              "', expected novel|resurfacing|burst|suppression");
}

std::vector<std::string> GenSpec::default_behaviors() {
  return {"login",      "logout",     "file_read", "file_write",  "file_copy",  "email_send",
          "email_read", "web_browse", "usb_insert", "db_query",   "build_run",  "vpn_connect"};
}

void GenSpec::validate() const {
  if (n_users <= 0)
    throw std::invalid_argument("gen spec: n_users must be positive, got " +
                                std::to_string(n_users));
  if (sessions_per_user <= 0)
    throw std::invalid_argument("gen spec: sessions_per_user must be positive, got " +
                                std::to_string(sessions_per_user));
  if (session_len_min <= 0 || session_len_min > session_len_max)
    throw std::invalid_argument("gen spec: session length range [" +
                                std::to_string(session_len_min) + ", " +
                                std::to_string(session_len_max) + "] is invalid");
  if (behaviors.size() < 8)
    throw std::invalid_argument(
        "gen spec: need at least 8 behaviors (routines use 4, the rest seed the novel pool), "
        "got " + std::to_string(behaviors.size()));
  {
    std::set<std::string> unique(behaviors.begin(), behaviors.end());
    if (unique.size() != behaviors.size())
      throw std::invalid_argument("gen spec: behaviors contain duplicates");
    for (const auto& b : behaviors)
      if (b.empty()) throw std::invalid_argument("gen spec: behaviors must be non-empty strings");
  }
  if (!(anomaly_rate > 0.0 && anomaly_rate < 1.0))
    throw std::invalid_argument("gen spec: anomaly_rate must lie strictly in (0, 1), got " +
                                std::to_string(anomaly_rate));
  double mix_sum = 0.0;
  for (double w : anomaly_mix) {
    if (w < 0.0) throw std::invalid_argument("gen spec: anomaly_mix weights must be non-negative");
    mix_sum += w;
  }
  if (mix_sum <= 0.0)
    throw std::invalid_argument("gen spec: anomaly_mix must have a positive total weight");
}

UserProfile make_profile(const GenSpec& spec, std::int64_t user_index) {
  Rng rng = Rng::derive(spec.seed, "profile", static_cast<std::uint64_t>(user_index));
  UserProfile profile;
  {
    char buf[32];
    std::snprintf(buf, sizeof buf, "user%03lld", static_cast<long long>(user_index));
    profile.user_id = buf;
  }
  const std::int64_t n_routine =
      std::min<std::int64_t>(4, static_cast<std::int64_t>(spec.behaviors.size()));
  std::vector<std::size_t> order(spec.behaviors.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  for (std::int64_t i = 0; i < n_routine; ++i)
    profile.behaviors.push_back(spec.behaviors[order[static_cast<std::size_t>(i)]]);
  for (std::size_t i = static_cast<std::size_t>(n_routine); i < order.size(); ++i)
    profile.novel_pool.push_back(spec.behaviors[order[i]]);

  // Mildly skewed weights: the heaviest/lightest ratio stays under e^0.2 ≈
  // 1.22, so every routine behavior recurs within a handful of events and a
  // token absent for dozens of events is genuinely unusual rather than an
  // artifact of a starved tail behavior. The near-flat profile also keeps
  // per-session pooled view statistics tight across users, which is what
  // makes an injected shift in those statistics stand out.
  double total = 0.0;
  for (std::int64_t i = 0; i < n_routine; ++i) {
    profile.weights.push_back(std::exp(rng.uniform(0.0, 0.2)));
    total += profile.weights.back();
  }
  for (double& w : profile.weights) w /= total;
  return profile;
}

Session gen_normal_session(const UserProfile& profile, std::int64_t length,
                           std::int64_t start_ts, Rng& rng) {
  if (length <= 0)
    throw std::invalid_argument("gen_normal_session: length must be positive, got " +
                                std::to_string(length));
  if (profile.behaviors.empty() || profile.behaviors.size() != profile.weights.size())
    throw std::invalid_argument("gen_normal_session: malformed profile for user '" +
                                profile.user_id + "'");
  Session session;
  session.user_id = profile.user_id;
  session.label = 0;
  std::int64_t ts = start_ts;
  for (std::int64_t i = 0; i < length; ++i) {
    if (i > 0) ts += rng.uniform_int(kMinStep, kMaxStep);
    session.events.push_back(
        {profile.user_id, profile.behaviors[rng.categorical(profile.weights)], ts});
  }
  return session;
}

void inject_anomaly(Session& session, AnomalyKind kind, const UserProfile& profile, Rng& rng) {
  require_min_length(session, kind, 16);
  switch (kind) {
    case AnomalyKind::kNovel: inject_novel(session, profile, rng); break;
    case AnomalyKind::kResurfacing: inject_resurfacing(session, profile, rng); break;
    case AnomalyKind::kBurst: inject_burst(session, profile, rng); break;
    case AnomalyKind::kSuppression: inject_suppression(session, profile, rng); break;
  }
  session.label = 1;
}

GeneratedData gen_dataset(const GenSpec& spec) {
  spec.validate();

  // Which (user, session) slots carry an anomaly, and of which kind.
  const std::int64_t total = spec.n_users * spec.sessions_per_user;
  const std::int64_t n_anom = static_cast<std::int64_t>(
      std::ceil(spec.anomaly_rate * static_cast<double>(total)));
  std::vector<std::int64_t> slots(static_cast<std::size_t>(total));
  std::iota(slots.begin(), slots.end(), std::int64_t{0});
  Rng pick_rng = Rng::derive(spec.seed, "anomaly-pick");
  pick_rng.shuffle(slots);
  std::unordered_set<std::int64_t> anomalous(slots.begin(),
                                             slots.begin() + static_cast<std::ptrdiff_t>(n_anom));
  const std::vector<double> mix(spec.anomaly_mix.begin(), spec.anomaly_mix.end());

  GeneratedData data;
  for (std::int64_t u = 0; u < spec.n_users; ++u) {
    const UserProfile profile = make_profile(spec, u);
    for (std::int64_t i = 0; i < spec.sessions_per_user; ++i) {
      Rng rng = Rng::derive(spec.seed, "session", static_cast<std::uint64_t>(u),
                            static_cast<std::uint64_t>(i));
      const std::int64_t length = rng.uniform_int(spec.session_len_min, spec.session_len_max);
      // Mild daily periodicity: most sessions start in the morning-to-early-
      // afternoon work hours, a few in the evening; one session per day.
      // Work starts stop at 15:00 so a default-length session ends well
      // before the 18:00 bucket edge: a mid-session bucket flip would retag
      // every later event and make routine behavior look brand new.
      const bool off_hours = rng.uniform() < 0.1;
      const std::int64_t start_second = off_hours ? rng.uniform_int(19 * 3600, 22 * 3600 - 1)
                                                  : rng.uniform_int(8 * 3600, 15 * 3600 - 1);
      const std::int64_t start_ts = kEpochBase + i * 86400 + start_second;
      Session session = gen_normal_session(profile, length, start_ts, rng);

      std::string kind_name = "normal";
      if (anomalous.count(u * spec.sessions_per_user + i)) {
        Rng kind_rng = Rng::derive(spec.seed, "anomaly-kind", static_cast<std::uint64_t>(u),
                                   static_cast<std::uint64_t>(i));
        const auto kind = static_cast<AnomalyKind>(kind_rng.categorical(mix));
        Rng inject_rng = Rng::derive(spec.seed, "anomaly-inject", static_cast<std::uint64_t>(u),
                                     static_cast<std::uint64_t>(i));
        inject_anomaly(session, kind, profile, inject_rng);
        kind_name = anomaly_kind_name(kind);
      }

      SessionLabel label;
      label.user = profile.user_id;
      label.session_start_ts = session.events.front().ts;
      label.label = session.label.value();
      label.kind = kind_name;
      data.labels.push_back(std::move(label));
      data.sessions.push_back(std::move(session));
    }
  }
  return data;
}

std::vector<RawEvent> flatten_events(const GeneratedData& data) {
  std::vector<RawEvent> events;
  for (const auto& session : data.sessions)
    events.insert(events.end(), session.events.begin(), session.events.end());
  std::stable_sort(events.begin(), events.end(), [](const RawEvent& a, const RawEvent& b) {
    if (a.user_id != b.user_id) return a.user_id < b.user_id;
    return a.ts < b.ts;
  });
  return events;
}

}  // namespace mvad
