// Copyright 2026 The dpfair Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Interaction ingestion: binarization, dense indexing, the random 8:1:1
// split, static negative sampling and the 80/20 activity grouping.

#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dpfair/common.hpp"
#include "json.hpp"

namespace dpfair {

enum class FeedbackKind { kExplicitRating, kImplicit };

inline FeedbackKind parse_feedback_kind(std::string_view s) {
  if (s == "explicit" || s == "rating") return FeedbackKind::kExplicitRating;
  if (s == "implicit" || s == "click") return FeedbackKind::kImplicit;
  throw InvalidInput("unknown feedback kind '" + std::string(s) + "'");
}

struct RawInteraction {
  std::string user_key;
  std::string item_key;
  double value = 1.0;
  std::optional<std::int64_t> timestamp;
};

struct RejectedRow {
  std::size_t line = 0;
  std::string reason;
};

struct LabeledInteraction {
  std::string user_key;
  std::string item_key;
  int label = 0;
};

struct Interaction {
  Index user = 0;
  Index item = 0;
  auto operator<=>(const Interaction&) const = default;
};

// Ratings are positive iff strictly above 3; any recorded implicit event is
// positive. Non-finite values are rejected with a diagnostic and skipped.
inline std::vector<LabeledInteraction> binarize(
    const std::vector<RawInteraction>& raw, FeedbackKind kind,
    std::vector<RejectedRow>* rejected = nullptr) {
  std::vector<LabeledInteraction> out;
  out.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = raw[i];
    if (!std::isfinite(r.value)) {
      if (rejected) rejected->push_back({i, "non-finite value"});
      continue;
    }
    if (r.user_key.empty() || r.item_key.empty()) {
      if (rejected) rejected->push_back({i, "empty key"});
      continue;
    }
    const int label =
        kind == FeedbackKind::kImplicit ? 1 : (r.value > 3.0 ? 1 : 0);
    out.push_back({r.user_key, r.item_key, label});
  }
  return out;
}

namespace internal {

inline std::vector<std::string> split_fields(const std::string& line,
                                             char delim) {
  std::vector<std::string> fields;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, delim)) fields.push_back(cur);
  if (!line.empty() && line.back() == delim) fields.emplace_back();
  return fields;
}

inline std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    // stod throws out_of_range for inf/nan spellings on some inputs
    if (s == "nan" || s == "NaN") return std::nan("");
    if (s == "inf" || s == "Inf") return HUGE_VAL;
    return std::nullopt;
  }
}

}  // namespace internal

// Reads `user,item,value[,timestamp]` (comma or tab separated, header
// required). Lines that start with '{' are treated as Amazon review JSON
// records with reviewerID/asin/overall/unixReviewTime fields.
inline std::vector<RawInteraction> read_interactions(
    std::istream& in, std::vector<RejectedRow>* rejected = nullptr) {
  std::vector<RawInteraction> rows;
  std::string line;
  std::size_t line_no = 0;
  char delim = ',';
  bool header_seen = false;
  std::size_t ts_col = 3;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (internal::trim(line).empty()) continue;
    if (line.front() == '{') {
      try {
        const auto j = nlohmann::json::parse(line);
        RawInteraction r;
        r.user_key = j.at("reviewerID").get<std::string>();
        r.item_key = j.at("asin").get<std::string>();
        r.value = j.at("overall").get<double>();
        if (j.contains("unixReviewTime"))
          r.timestamp = j["unixReviewTime"].get<std::int64_t>();
        rows.push_back(std::move(r));
      } catch (const std::exception& e) {
        if (rejected) rejected->push_back({line_no, e.what()});
      }
      continue;
    }
    if (!header_seen) {
      delim = line.find('\t') != std::string::npos ? '\t' : ',';
      auto cols = internal::split_fields(line, delim);
      for (auto& c : cols) c = internal::trim(c);
      if (cols.size() < 3 || cols[0] != "user" || cols[1] != "item" ||
          cols[2] != "value") {
        throw InvalidInput("expected header 'user,item,value[,timestamp]'");
      }
      if (cols.size() > 3 && cols[3] != "timestamp")
        throw InvalidInput("unexpected column '" + cols[3] + "'");
      header_seen = true;
      continue;
    }
    auto f = internal::split_fields(line, delim);
    if (f.size() < 3) {
      if (rejected) rejected->push_back({line_no, "too few fields"});
      continue;
    }
    RawInteraction r;
    r.user_key = internal::trim(f[0]);
    r.item_key = internal::trim(f[1]);
    const auto v = internal::parse_double(internal::trim(f[2]));
    if (!v) {
      if (rejected) rejected->push_back({line_no, "unparseable value"});
      continue;
    }
    r.value = *v;
    if (f.size() > ts_col && !internal::trim(f[ts_col]).empty()) {
      try {
        r.timestamp = std::stoll(internal::trim(f[ts_col]));
      } catch (const std::exception&) {
        if (rejected) rejected->push_back({line_no, "bad timestamp"});
        continue;
      }
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

struct DatasetStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  // percentage, 1 - interactions / (users * items)
  double sparsity_percent = 0.0;
};

inline double sparsity_percent(std::size_t users, std::size_t items,
                               std::size_t interactions) {
  if (users == 0 || items == 0) return 0.0;
  return 100.0 * (1.0 - static_cast<double>(interactions) /
                            (static_cast<double>(users) * items));
}

// Statistics of the raw log as delivered (every row counts, before
// binarization).
inline DatasetStats raw_stats(const std::vector<RawInteraction>& raw) {
  std::unordered_set<std::string> users, items;
  for (const auto& r : raw) {
    users.insert(r.user_key);
    items.insert(r.item_key);
  }
  return {users.size(), items.size(), raw.size(),
          sparsity_percent(users.size(), items.size(), raw.size())};
}

struct SplitResult {
  std::vector<Interaction> train;
  std::vector<Interaction> validation;
  std::vector<Interaction> test;
};

// Global random 8:1:1 partition. Validation and test each get
// floor(n / 10); the remainder goes to train.
inline SplitResult split(std::vector<Interaction> positives,
                         std::uint64_t seed) {
  if (positives.size() < 10)
    throw InvalidInput("split needs at least 10 positives, got " +
                       std::to_string(positives.size()));
  std::sort(positives.begin(), positives.end());
  Rng rng = derive_rng(seed, "split");
  for (std::size_t i = positives.size() - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(positives[i], positives[pick(rng)]);
  }
  const std::size_t tenth = positives.size() / 10;
  SplitResult out;
  out.validation.assign(positives.begin(), positives.begin() + tenth);
  out.test.assign(positives.begin() + tenth, positives.begin() + 2 * tenth);
  out.train.assign(positives.begin() + 2 * tenth, positives.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.validation.begin(), out.validation.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// Per-user sorted item lists.
inline std::vector<std::vector<Index>> items_by_user(
    const std::vector<Interaction>& pairs, std::size_t n_users) {
  std::vector<std::vector<Index>> out(n_users);
  for (const auto& p : pairs) out[p.user].push_back(p.item);
  for (auto& v : out) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return out;
}

// One negative per training positive, aligned by position: negatives[i] is
// paired with train[i]. The item is uniform over the items the user has no
// training interaction with.
inline std::vector<Interaction> sample_negatives(
    const std::vector<Interaction>& train, std::size_t n_users,
    std::size_t n_items, std::uint64_t seed) {
  const auto by_user = items_by_user(train, n_users);
  Rng rng = derive_rng(seed, "negatives");
  std::uniform_int_distribution<Index> pick(0, n_items - 1);
  std::vector<Interaction> out;
  out.reserve(train.size());
  for (const auto& p : train) {
    const auto& seen = by_user[p.user];
    if (seen.size() >= n_items)
      throw StageFailure("negatives", "user " + std::to_string(p.user) +
                                          " interacted with every item");
    Index v;
    do {
      v = pick(rng);
    } while (std::binary_search(seen.begin(), seen.end(), v));
    out.push_back({p.user, v});
  }
  return out;
}

class Dataset {
 public:
  static constexpr int kFormatVersion = 1;

  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::vector<std::string> user_keys;
  std::vector<std::string> item_keys;
  std::vector<Interaction> train;
  std::vector<Interaction> negatives;  // aligned with train
  std::vector<Interaction> validation;
  std::vector<Interaction> test;
  std::uint64_t seed = 0;

  // Call after the interaction vectors are filled.
  void index() {
    train_items_ = items_by_user(train, n_users);
    val_items_ = items_by_user(validation, n_users);
    test_items_ = items_by_user(test, n_users);
  }

  std::size_t n() const { return train.size(); }
  const std::vector<Index>& train_items(Index u) const {
    return train_items_.at(u);
  }
  const std::vector<Index>& validation_items(Index u) const {
    return val_items_.at(u);
  }
  const std::vector<Index>& test_items(Index u) const {
    return test_items_.at(u);
  }
  const std::vector<std::vector<Index>>& items_of(std::string_view split)
      const {
    if (split == "train") return train_items_;
    if (split == "validation" || split == "val") return val_items_;
    if (split == "test") return test_items_;
    throw InvalidInput("unknown split '" + std::string(split) + "'");
  }

  void validate() const {
    auto in_range = [&](const std::vector<Interaction>& v) {
      return std::all_of(v.begin(), v.end(), [&](const Interaction& p) {
        return p.user < n_users && p.item < n_items;
      });
    };
    if (!in_range(train) || !in_range(validation) || !in_range(test) ||
        !in_range(negatives))
      throw InvalidInput("dataset index out of range");
    if (negatives.size() != train.size())
      throw InvalidInput("negatives must pair one-to-one with train");
    if (user_keys.size() != n_users || item_keys.size() != n_items)
      throw InvalidInput("key tables do not match index spaces");
  }

 private:
  std::vector<std::vector<Index>> train_items_;
  std::vector<std::vector<Index>> val_items_;
  std::vector<std::vector<Index>> test_items_;
};

// Positives are deduplicated and keys are indexed in lexicographic order, so
// the result does not depend on input row order.
inline Dataset build_dataset(const std::vector<RawInteraction>& raw,
                             FeedbackKind kind, std::uint64_t seed,
                             std::vector<RejectedRow>* rejected = nullptr) {
  const auto labeled = binarize(raw, kind, rejected);
  std::map<std::string, Index> users, items;
  for (const auto& l : labeled) {
    if (l.label != 1) continue;
    users.emplace(l.user_key, 0);
    items.emplace(l.item_key, 0);
  }
  Dataset ds;
  ds.seed = seed;
  for (auto& [key, idx] : users) {
    idx = ds.user_keys.size();
    ds.user_keys.push_back(key);
  }
  for (auto& [key, idx] : items) {
    idx = ds.item_keys.size();
    ds.item_keys.push_back(key);
  }
  ds.n_users = users.size();
  ds.n_items = items.size();
  std::vector<Interaction> positives;
  for (const auto& l : labeled) {
    if (l.label != 1) continue;
    positives.push_back({users.at(l.user_key), items.at(l.item_key)});
  }
  std::sort(positives.begin(), positives.end());
  positives.erase(std::unique(positives.begin(), positives.end()),
                  positives.end());
  auto parts = split(std::move(positives), seed);
  ds.train = std::move(parts.train);
  ds.validation = std::move(parts.validation);
  ds.test = std::move(parts.test);
  ds.negatives = sample_negatives(ds.train, ds.n_users, ds.n_items, seed);
  ds.index();
  return ds;
}

inline DatasetStats dataset_stats(const Dataset& ds) {
  const std::size_t total =
      ds.train.size() + ds.validation.size() + ds.test.size();
  return {ds.n_users, ds.n_items, total,
          sparsity_percent(ds.n_users, ds.n_items, total)};
}

struct UserGroups {
  std::vector<Index> active;    // sorted
  std::vector<Index> inactive;  // sorted
  std::vector<bool> is_active;  // by user index
};

inline std::size_t active_group_size(std::size_t n_users) {
  return (2 * n_users + 9) / 10;  // ceil(0.2 n)
}

// Top ceil(20%) users by training-interaction count; ties go to the lower
// user index.
inline UserGroups group_users(const std::vector<std::size_t>& activity) {
  const std::size_t n = activity.size();
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return activity[a] > activity[b];
  });
  UserGroups g;
  g.is_active.assign(n, false);
  const std::size_t n_active = active_group_size(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (r < n_active) {
      g.is_active[order[r]] = true;
    }
  }
  for (Index u = 0; u < n; ++u)
    (g.is_active[u] ? g.active : g.inactive).push_back(u);
  return g;
}

inline UserGroups group_users(const Dataset& ds) {
  std::vector<std::size_t> counts(ds.n_users, 0);
  for (const auto& p : ds.train) ++counts[p.user];
  return group_users(counts);
}

// --- serialization ---------------------------------------------------------

inline nlohmann::json pairs_to_json(const std::vector<Interaction>& v) {
  auto a = nlohmann::json::array();
  for (const auto& p : v) a.push_back({p.user, p.item});
  return a;
}

inline std::vector<Interaction> pairs_from_json(const nlohmann::json& a) {
  std::vector<Interaction> v;
  v.reserve(a.size());
  for (const auto& p : a) v.push_back({p.at(0).get<Index>(), p.at(1).get<Index>()});
  return v;
}

inline nlohmann::json to_json(const Dataset& ds) {
  nlohmann::json j;
  j["format"] = "dpfair-dataset";
  j["version"] = Dataset::kFormatVersion;
  j["seed"] = ds.seed;
  j["n_users"] = ds.n_users;
  j["n_items"] = ds.n_items;
  j["user_keys"] = ds.user_keys;
  j["item_keys"] = ds.item_keys;
  j["train"] = pairs_to_json(ds.train);
  j["negatives"] = pairs_to_json(ds.negatives);
  j["validation"] = pairs_to_json(ds.validation);
  j["test"] = pairs_to_json(ds.test);
  return j;
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dpfair-dataset")
    throw InvalidInput("not a dataset bundle");
  if (j.at("version").get<int>() != Dataset::kFormatVersion)
    throw InvalidInput("unsupported dataset bundle version");
  Dataset ds;
  ds.seed = j.at("seed").get<std::uint64_t>();
  ds.n_users = j.at("n_users").get<std::size_t>();
  ds.n_items = j.at("n_items").get<std::size_t>();
  ds.user_keys = j.at("user_keys").get<std::vector<std::string>>();
  ds.item_keys = j.at("item_keys").get<std::vector<std::string>>();
  ds.train = pairs_from_json(j.at("train"));
  ds.negatives = pairs_from_json(j.at("negatives"));
  ds.validation = pairs_from_json(j.at("validation"));
  ds.test = pairs_from_json(j.at("test"));
  ds.validate();
  ds.index();
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write " + path);
  out << to_json(ds).dump() << '\n';
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot read " + path);
  return dataset_from_json(nlohmann::json::parse(in));
}

}  // namespace dpfair
