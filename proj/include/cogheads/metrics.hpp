#pragma once

// text-overlap metrics, the composite "unaffected" rule, per-function
// accuracy aggregation, and head-count statistics over importance matrices.

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "probe.hpp"

namespace cogheads::met {

// modified n-gram precision BLEU, no smoothing; n runs to min(max_n, |cand|),
// brevity penalty exp(min(0, 1 - |ref|/|cand|)).
inline double bleu(const std::vector<std::string>& cand, const std::vector<std::string>& ref,
                   int max_n = 4) {
  if (ref.empty()) throw data_error("bleu needs a nonempty reference");
  if (cand.empty()) return 0.0;
  int nmax = std::min<int>(max_n, int(cand.size()));
  double logsum = 0.0;
  for (int n = 1; n <= nmax; ++n) {
    std::map<std::vector<std::string>, int> rc;
    for (size_t i = 0; i + size_t(n) <= ref.size(); ++i)
      rc[std::vector<std::string>(ref.begin() + long(i), ref.begin() + long(i) + n)]++;
    int total = 0, hit = 0;
    for (size_t i = 0; i + size_t(n) <= cand.size(); ++i) {
      ++total;
      auto key = std::vector<std::string>(cand.begin() + long(i), cand.begin() + long(i) + n);
      auto it = rc.find(key);
      if (it != rc.end() && it->second > 0) {
        ++hit;
        --it->second;  // clip: each reference n-gram matches once
      }
    }
    if (total == 0 || hit == 0) return 0.0;
    logsum += std::log(double(hit) / double(total));
  }
  double bp = std::exp(std::min(0.0, 1.0 - double(ref.size()) / double(cand.size())));
  return bp * std::exp(logsum / double(nmax));
}

// longest-common-subsequence F1
inline double rouge_l(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  if (ref.empty()) throw data_error("rouge_l needs a nonempty reference");
  if (cand.empty()) return 0.0;
  size_t a = cand.size(), b = ref.size();
  std::vector<int> prev(b + 1, 0), cur(b + 1, 0);
  for (size_t i = 1; i <= a; ++i) {
    for (size_t j = 1; j <= b; ++j)
      cur[j] = cand[i - 1] == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  int lcs = prev[b];
  if (lcs == 0) return 0.0;
  double p = double(lcs) / double(a), r = double(lcs) / double(b);
  return 2.0 * p * r / (p + r);
}

// the paper's composite rule: an intervened output counts as unaffected when
// either overlap score clears its threshold against the baseline output
inline bool unaffected(const std::vector<std::string>& intervened,
                       const std::vector<std::string>& baseline) {
  return bleu(intervened, baseline) > 0.8 || rouge_l(intervened, baseline) > 0.6;
}

// per-function fraction of heads whose importance exceeds the threshold
inline std::vector<double> sparsity_stat(const std::vector<std::vector<double>>& imp,
                                         double threshold) {
  check(threshold >= 0.0, "sparsity threshold must be nonnegative");
  std::vector<double> out;
  for (const auto& row : imp) {
    check(!row.empty(), "importance row is empty");
    int n = 0;
    for (double v : row) n += v > threshold;
    out.push_back(double(n) / double(row.size()));
  }
  return out;
}

// same statistic with the threshold tied to each row's maximum
inline std::vector<double> sparsity_stat_rowmax(const std::vector<std::vector<double>>& imp,
                                                double frac) {
  std::vector<double> out;
  for (const auto& row : imp) {
    check(!row.empty(), "importance row is empty");
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    int n = 0;
    for (double v : row) n += v > frac * mx;
    out.push_back(double(n) / double(row.size()));
  }
  return out;
}

// per-function change in elbow-selected head count, after minus before
inline std::vector<int> head_count_delta(const std::vector<std::vector<double>>& before,
                                         const std::vector<std::vector<double>>& after) {
  check(before.size() == after.size(), "importance matrices disagree on function count");
  std::vector<int> out;
  for (size_t c = 0; c < before.size(); ++c) {
    check(before[c].size() == after[c].size(), "importance matrices disagree on head count");
    out.push_back(int(probe::elbow_select(after[c]).size()) -
                  int(probe::elbow_select(before[c]).size()));
  }
  return out;
}

struct eval_row {
  int id = 0;
  int step = 0;
  std::string function;   // primary label of the sub-question
  std::string answer;     // model payload as space-joined tokens
  std::string gold;
  bool correct = false;
};

struct eval_report {
  int n = 0;
  double accuracy = 0.0;
  std::map<std::string, int> fn_n;
  std::map<std::string, double> fn_accuracy;
  double affected_rate = -1.0;  // < 0 when no baseline was supplied
  uint64_t plan_hash = 0, corpus_hash = 0, model_hash = 0;
  uint64_t seed = 0;
  std::vector<eval_row> rows;
};

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    size_t j = s.find(' ', i);
    if (j == std::string::npos) j = s.size();
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j + 1;
  }
  return out;
}

// fill the aggregate fields from the rows; affected-rate against a baseline
// report's answers when one is supplied (rows must align one-to-one)
inline void finalize_report(eval_report& rep, const eval_report* baseline = nullptr) {
  rep.n = int(rep.rows.size());
  long hits = 0;
  std::map<std::string, long> fn_hits;
  rep.fn_n.clear();
  rep.fn_accuracy.clear();
  for (const auto& r : rep.rows) {
    hits += r.correct;
    rep.fn_n[r.function]++;
    fn_hits[r.function] += r.correct;
  }
  rep.accuracy = rep.n ? double(hits) / double(rep.n) : 0.0;
  for (const auto& [fn, cnt] : rep.fn_n) rep.fn_accuracy[fn] = double(fn_hits[fn]) / double(cnt);
  if (baseline) {
    check(baseline->rows.size() == rep.rows.size(), "baseline report shape mismatch");
    long affected = 0;
    for (size_t i = 0; i < rep.rows.size(); ++i) {
      auto base_words = split_words(baseline->rows[i].answer);
      auto new_words = split_words(rep.rows[i].answer);
      if (base_words.empty())
        affected += !new_words.empty();
      else if (!unaffected(new_words, base_words))
        ++affected;
    }
    rep.affected_rate = rep.rows.empty() ? 0.0 : double(affected) / double(rep.rows.size());
  }
}

inline nlohmann::ordered_json report_to_json(const eval_report& rep) {
  nlohmann::ordered_json j;
  j["n"] = rep.n;
  j["accuracy"] = rep.accuracy;
  nlohmann::ordered_json fns;
  for (const auto& fn : function_labels()) {
    auto it = rep.fn_n.find(fn);
    if (it == rep.fn_n.end()) continue;
    fns[fn] = {{"n", it->second}, {"accuracy", rep.fn_accuracy.at(fn)}};
  }
  j["functions"] = fns;
  if (rep.affected_rate >= 0.0) j["affected_rate"] = rep.affected_rate;
  j["plan_hash"] = hex64(rep.plan_hash);
  j["corpus_hash"] = hex64(rep.corpus_hash);
  j["model_hash"] = hex64(rep.model_hash);
  j["seed"] = rep.seed;
  return j;
}

}  // namespace cogheads::met
