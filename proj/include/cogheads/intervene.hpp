#pragma once

// intervention plans: negative (scale a head's contribution by epsilon),
// positive (shift along a learned direction), random-head controls, and the
// evaluation harness that scores a hooked model over a corpus split.

#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "metrics.hpp"
#include "trace.hpp"

namespace cogheads::ivn {

using head_set = std::vector<std::pair<int, int>>;  // (layer, head), kept sorted

struct ablation_plan {
  head_set heads;
  double epsilon = 0.001;
};

inline std::vector<head_hook> ablation_hooks(const model& md, const ablation_plan& plan) {
  check(plan.epsilon > 0.0 && plan.epsilon <= 1.0, "epsilon must lie in (0, 1]");
  std::vector<head_hook> hooks;
  for (auto [l, h] : plan.heads) {
    check(l >= 0 && l < md.cfg.n_layers && h >= 0 && h < md.cfg.n_heads,
          "ablation head out of range");
    head_hook hk;
    hk.layer = l;
    hk.head = h;
    hk.scale = plan.epsilon;
    hooks.push_back(std::move(hk));
  }
  return hooks;
}

// uniform draw of head coordinates without replacement, skipping the excluded set
inline head_set random_heads(int n_layers, int n_heads, int count, uint64_t seed,
                             const head_set& exclude = {}) {
  check(count >= 0, "random head count must be nonnegative");
  head_set pool;
  for (int l = 0; l < n_layers; ++l)
    for (int h = 0; h < n_heads; ++h) {
      bool skip = false;
      for (auto [el, eh] : exclude)
        if (el == l && eh == h) { skip = true; break; }
      if (!skip) pool.emplace_back(l, h);
    }
  if (count > int(pool.size()))
    throw usage_error("asked for " + std::to_string(count) + " random heads but only " +
                      std::to_string(pool.size()) + " are available after exclusion");
  auto rng = make_rng(seed, 0x4ead5);
  shuffle_vec(pool, rng);
  pool.resize(size_t(count));
  std::sort(pool.begin(), pool.end());
  return pool;
}

// Eq.-style contrast direction: mean of correct-side activations minus mean
// of incorrect-side activations
inline std::vector<double> steering_direction(const std::vector<std::vector<double>>& correct,
                                              const std::vector<std::vector<double>>& incorrect) {
  if (correct.empty()) throw data_error("steering direction needs correct-side activations");
  if (incorrect.empty()) throw data_error("steering direction needs incorrect-side activations");
  size_t d = correct[0].size();
  std::vector<double> dir(d, 0.0);
  for (const auto& v : correct) {
    check(v.size() == d, "activation length mismatch");
    for (size_t i = 0; i < d; ++i) dir[i] += v[i];
  }
  for (auto& x : dir) x /= double(correct.size());
  std::vector<double> mi(d, 0.0);
  for (const auto& v : incorrect) {
    check(v.size() == d, "activation length mismatch");
    for (size_t i = 0; i < d; ++i) mi[i] += v[i];
  }
  for (size_t i = 0; i < d; ++i) dir[i] -= mi[i] / double(incorrect.size());
  return dir;
}

// population standard deviation of the activations projected onto dir/|dir|.
// a zero direction is a declared degenerate case: sigma 0 plus a warning.
inline double sigma_along(const std::vector<std::vector<double>>& acts,
                          const std::vector<double>& dir) {
  if (acts.empty()) throw data_error("sigma needs at least one activation");
  double nrm = 0.0;
  for (double x : dir) nrm += x * x;
  nrm = std::sqrt(nrm);
  if (nrm == 0.0) {
    std::fprintf(stderr, "warning: zero steering direction, sigma set to 0\n");
    return 0.0;
  }
  std::vector<double> proj;
  for (const auto& v : acts) {
    check(v.size() == dir.size(), "activation length mismatch");
    double s = 0.0;
    for (size_t i = 0; i < dir.size(); ++i) s += v[i] * dir[i];
    proj.push_back(s / nrm);
  }
  return pstdev_of(proj);
}

struct steer_entry {
  std::vector<double> dir;  // residual-stream direction, d entries
  double sigma = 0.0;
};

struct steering_plan {
  std::map<std::pair<int, int>, steer_entry> directions;
  double alpha = 0.1;
};

// shift each listed head by alpha * sigma * unit(dir); a zero direction
// yields a zero shift, so steering it leaves outputs unchanged
inline std::vector<head_hook> steering_hooks(const model& md, const steering_plan& plan) {
  std::vector<head_hook> hooks;
  for (const auto& [lh, ent] : plan.directions) {
    auto [l, h] = lh;
    check(l >= 0 && l < md.cfg.n_layers && h >= 0 && h < md.cfg.n_heads,
          "steering head out of range");
    check(int(ent.dir.size()) == md.cfg.dim, "steering direction length mismatch");
    double nrm = 0.0;
    for (double x : ent.dir) nrm += x * x;
    nrm = std::sqrt(nrm);
    head_hook hk;
    hk.layer = l;
    hk.head = h;
    hk.shift.assign(size_t(md.cfg.dim), 0.0);
    if (nrm > 0.0) {
      double s = plan.alpha * ent.sigma / nrm;
      for (int i = 0; i < md.cfg.dim; ++i) hk.shift[size_t(i)] = s * ent.dir[size_t(i)];
    }
    hooks.push_back(std::move(hk));
  }
  return hooks;
}

inline uint64_t hooks_hash(const std::vector<head_hook>& hooks) {
  uint64_t h = fnv_basis;
  for (const auto& hk : hooks) {
    h = fnv1a(&hk.layer, sizeof hk.layer, h);
    h = fnv1a(&hk.head, sizeof hk.head, h);
    h = fnv1a(&hk.scale, sizeof hk.scale, h);
    if (!hk.shift.empty()) h = fnv1a(hk.shift.data(), hk.shift.size() * sizeof(double), h);
  }
  return h;
}

// run every sub-question of the split under the hooks and score exact match.
// rows are ordered by (example id, step); the function column carries the
// sub-question's primary label.
inline met::eval_report evaluate_with_plan(const model& md,
                                           const std::vector<corp::main_qa>& mains,
                                           const std::vector<head_hook>& hooks = {},
                                           const std::string& mode = "none",
                                           const met::eval_report* baseline = nullptr) {
  if (mains.empty()) throw data_error("cannot evaluate an empty split");
  std::vector<const corp::main_qa*> sorted;
  for (const auto& m : mains) sorted.push_back(&m);
  std::sort(sorted.begin(), sorted.end(),
            [](const corp::main_qa* a, const corp::main_qa* b) { return a->id < b->id; });
  met::eval_report rep;
  rep.plan_hash = hooks_hash(hooks);
  rep.corpus_hash = corp::corpus_hash(mains);
  rep.model_hash = md.content_hash();
  for (const auto* mp : sorted)
    for (int step = 0; step < int(mp->subs.size()); ++step) {
      auto ids = corp::render_ids(md.vb, *mp, step, mode);
      auto g = md.generate(ids, hooks);
      auto payload = g.payload(md.eoa_id);
      met::eval_row row;
      row.id = mp->id;
      row.step = step;
      row.function = mp->subs[size_t(step)].functions.at(0);
      for (int t : payload) {
        if (!row.answer.empty()) row.answer += ' ';
        row.answer += md.vb.names[size_t(t)];
      }
      for (const auto& w : mp->subs[size_t(step)].answer) {
        if (!row.gold.empty()) row.gold += ' ';
        row.gold += w;
      }
      row.correct = row.answer == row.gold;
      rep.rows.push_back(std::move(row));
    }
  met::finalize_report(rep, baseline);
  return rep;
}

}  // namespace cogheads::ivn
