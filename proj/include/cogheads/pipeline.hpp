#pragma once

// end-to-end workflows: corpus -> captures -> probe -> importance -> selection,
// steering-direction estimation on a detuned model, the masked-ratio sweep,
// and deterministic artifact emission (CSV, SVG heatmap, JSON manifest).

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "intervene.hpp"
#include "metrics.hpp"
#include "probe.hpp"
#include "trace.hpp"

namespace cogheads::pipe {

inline const char* tool_version() { return "cogheads 1.0.0"; }

// heads the registry plants for one function label
inline ivn::head_set planted_heads_for(const model& md, const std::string& function) {
  ivn::head_set out;
  for (const auto& s : md.registry)
    if (s.function == function && s.gain > 0.0) out.emplace_back(s.layer, s.head);
  std::sort(out.begin(), out.end());
  return out;
}

struct pipeline_result {
  trace::probe_dataset train_ds, val_ds;
  probe::probe_model pm;
  probe::train_report train_rep;
  std::vector<std::vector<double>> importance;        // functions x (L*M) head slots
  std::vector<std::vector<int>> selected;             // per function, slot indices
  double val_subset_accuracy = 0.0;
};

// attribution scores are signed; ranking and selection go by magnitude
inline std::vector<double> magnitude_row(const std::vector<double>& row) {
  std::vector<double> a(row.size());
  for (size_t i = 0; i < row.size(); ++i) a[i] = std::fabs(row[i]);
  return a;
}

// capture -> train -> attribute -> select, on an already split corpus
inline pipeline_result run_pipeline(const model& md, const std::vector<corp::main_qa>& train_mains,
                                    const std::vector<corp::main_qa>& val_mains, int topk,
                                    const probe::probe_config& pcfg = {},
                                    const std::string& mode = "none") {
  pipeline_result out;
  out.train_ds = trace::build_probe_dataset(md, train_mains, topk, mode);
  out.val_ds = trace::build_probe_dataset(md, val_mains, topk, mode);
  int slots = md.cfg.n_layers * md.cfg.n_heads;
  out.pm = probe::init_probe(slots, 2 * md.cfg.dim, pcfg);
  out.train_rep = probe::train_probe(out.pm, out.train_ds, pcfg);
  out.val_subset_accuracy = probe::subset_accuracy(out.pm, out.val_ds);
  out.importance = probe::importance_matrix(out.pm, out.train_ds);
  for (const auto& row : out.importance)
    out.selected.push_back(probe::elbow_select(magnitude_row(row)));
  return out;
}

inline ivn::head_set slots_to_heads(const std::vector<int>& slots, int n_heads) {
  ivn::head_set out;
  for (int s : slots) out.emplace_back(s / n_heads, s % n_heads);
  std::sort(out.begin(), out.end());
  return out;
}

// per-head correct/incorrect activation pools over one function's sub-questions
struct head_activations {
  std::vector<std::vector<double>> correct, incorrect;
};

inline std::map<std::pair<int, int>, head_activations> collect_function_activations(
    const model& md, const std::vector<corp::main_qa>& mains, const std::string& function,
    const ivn::head_set& heads, int topk, const std::string& mode = "none") {
  const int lm = md.cfg.n_layers * md.cfg.n_heads, d = md.cfg.dim;
  std::map<std::pair<int, int>, head_activations> out;
  for (auto& lh : heads) out[lh];
  for (const auto& m : mains)
    for (int step = 0; step < int(m.subs.size()); ++step) {
      if (m.subs[size_t(step)].functions.at(0) != function) continue;
      auto rec = trace::run_and_capture(md, m, step, mode);
      auto sel = trace::select_topk_tokens(m.subs[size_t(step)].importance, int(rec.gen.size()),
                                           topk);
      auto feat = trace::head_feature(rec, sel, lm, d);
      for (auto& [lh, pools] : out) {
        int slot = lh.first * md.cfg.n_heads + lh.second;
        std::vector<double> v(feat.begin() + slot * d, feat.begin() + (slot + 1) * d);
        (rec.correct ? pools.correct : pools.incorrect).push_back(std::move(v));
      }
    }
  return out;
}

// contrast directions and spreads for each head, from the pooled activations
inline ivn::steering_plan make_steering_plan(
    const std::map<std::pair<int, int>, head_activations>& pools, double alpha = 0.1) {
  ivn::steering_plan plan;
  plan.alpha = alpha;
  for (const auto& [lh, acts] : pools) {
    ivn::steer_entry ent;
    ent.dir = ivn::steering_direction(acts.correct, acts.incorrect);
    std::vector<std::vector<double>> all = acts.correct;
    all.insert(all.end(), acts.incorrect.begin(), acts.incorrect.end());
    ent.sigma = ivn::sigma_along(all, ent.dir);
    plan.directions[lh] = std::move(ent);
  }
  return plan;
}

// rank all head slots for one function by importance, high to low
inline std::vector<int> importance_ranking(const std::vector<double>& row) {
  std::vector<int> idx(row.size());
  for (size_t i = 0; i < row.size(); ++i) idx[i] = int(i);
  std::stable_sort(idx.begin(), idx.end(),
                   [&row](int a, int b) { return row[size_t(a)] > row[size_t(b)]; });
  return idx;
}

struct sweep_point {
  int k = 0;
  double cognitive = 0.0;  // accuracy on the probed function, top-k heads masked
  double random = 0.0;     // same with k random heads (excluding the function's own)
};

// masked-ratio sweep: accuracy on the probed function when ablating the top-K
// heads by importance versus K random heads drawn outside the selected set
inline std::vector<sweep_point> sweep_masked_ratio(const model& md,
                                                   const std::vector<corp::main_qa>& mains,
                                                   const std::string& function,
                                                   const std::vector<double>& imp_row,
                                                   const std::vector<int>& grid, double epsilon,
                                                   uint64_t seed) {
  auto mag = magnitude_row(imp_row);
  auto ranking = importance_ranking(mag);
  auto selected = probe::elbow_select(mag);
  auto exclude = slots_to_heads(selected, md.cfg.n_heads);
  std::vector<sweep_point> out;
  for (int k : grid) {
    check(k >= 0 && k <= int(ranking.size()), "sweep K exceeds head count");
    sweep_point pt;
    pt.k = k;
    ivn::ablation_plan cog;
    cog.epsilon = epsilon;
    cog.heads = slots_to_heads(std::vector<int>(ranking.begin(), ranking.begin() + k),
                               md.cfg.n_heads);
    auto cog_rep = ivn::evaluate_with_plan(md, mains, ivn::ablation_hooks(md, cog));
    pt.cognitive = cog_rep.fn_accuracy.count(function) ? cog_rep.fn_accuracy.at(function) : 0.0;
    ivn::ablation_plan rnd;
    rnd.epsilon = epsilon;
    rnd.heads = ivn::random_heads(md.cfg.n_layers, md.cfg.n_heads, k, seed + uint64_t(k), exclude);
    auto rnd_rep = ivn::evaluate_with_plan(md, mains, ivn::ablation_hooks(md, rnd));
    pt.random = rnd_rep.fn_accuracy.count(function) ? rnd_rep.fn_accuracy.at(function) : 0.0;
    out.push_back(pt);
  }
  return out;
}

// ---- deterministic artifact emission ----

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// importance matrix as CSV: one block per function, layers as rows, heads as columns
inline std::string importance_csv(const std::vector<std::vector<double>>& imp, int n_layers,
                                  int n_heads) {
  check(int(imp.size()) == int(function_labels().size()), "importance row count mismatch");
  std::string s = "function,layer";
  for (int h = 0; h < n_heads; ++h) s += ",h" + std::to_string(h);
  s += "\n";
  for (size_t c = 0; c < imp.size(); ++c) {
    check(int(imp[c].size()) == n_layers * n_heads, "importance row extent mismatch");
    for (int l = 0; l < n_layers; ++l) {
      s += function_labels()[c] + "," + std::to_string(l);
      for (int h = 0; h < n_heads; ++h) s += "," + fmt_double(imp[c][size_t(l * n_heads + h)]);
      s += "\n";
    }
  }
  return s;
}

inline std::vector<std::vector<double>> parse_importance_csv(const std::string& text) {
  std::vector<std::vector<double>> imp(function_labels().size());
  size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++lineno;
    if (lineno == 1 || line.empty()) continue;  // header
    std::vector<std::string> cells;
    size_t p = 0;
    while (p <= line.size()) {
      size_t q = line.find(',', p);
      if (q == std::string::npos) q = line.size();
      cells.push_back(line.substr(p, q - p));
      p = q + 1;
    }
    if (cells.size() < 3) throw data_error("importance csv line " + std::to_string(lineno) +
                                           ": too few columns");
    int c;
    try {
      c = function_index(cells[0]);
    } catch (const usage_error&) {
      throw data_error("importance csv line " + std::to_string(lineno) + ": unknown function " +
                       cells[0]);
    }
    for (size_t i = 2; i < cells.size(); ++i) {
      char* end = nullptr;
      double v = std::strtod(cells[i].c_str(), &end);
      if (end == cells[i].c_str()) throw data_error("importance csv line " +
                                                    std::to_string(lineno) + ": bad number");
      imp[size_t(c)].push_back(v);
    }
  }
  for (const auto& row : imp)
    if (row.empty()) throw data_error("importance csv is missing a function block");
  return imp;
}

// one L x M grid per function with a linear white-to-red ramp and min/max legend
inline std::string heatmap_svg(const std::vector<std::vector<double>>& imp, int n_layers,
                               int n_heads) {
  const int cell = 22, gap = 2, left = 170, top_pad = 8, title_h = 16, legend_h = 16;
  int block_h = title_h + n_layers * (cell + gap) + legend_h + 12;
  int width = left + n_heads * (cell + gap) + 20;
  int height = top_pad + int(imp.size()) * block_h + 8;
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
       "\" height=\"" + std::to_string(height) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (size_t c = 0; c < imp.size(); ++c) {
    const auto& row = imp[c];
    check(int(row.size()) == n_layers * n_heads, "importance row extent mismatch");
    double lo = row[0], hi = row[0];
    for (double v : row) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    int y0 = top_pad + int(c) * block_h;
    s += "<text x=\"4\" y=\"" + std::to_string(y0 + 12) +
         "\" font-family=\"monospace\" font-size=\"12\">" + function_labels()[c] + "</text>\n";
    for (int l = 0; l < n_layers; ++l)
      for (int h = 0; h < n_heads; ++h) {
        double v = row[size_t(l * n_heads + h)];
        double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
        int g = int(255.0 - 215.0 * t + 0.5);
        char color[8];
        std::snprintf(color, sizeof color, "#ff%02x%02x", g, g);
        int x = left + h * (cell + gap);
        int y = y0 + title_h + l * (cell + gap);
        s += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" +
             std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" + color +
             "\"/>\n";
      }
    int ly = y0 + title_h + n_layers * (cell + gap) + 12;
    s += "<text x=\"" + std::to_string(left) + "\" y=\"" + std::to_string(ly) +
         "\" font-family=\"monospace\" font-size=\"10\">min=" + fmt_double(lo) +
         " max=" + fmt_double(hi) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw data_error("cannot write file: " + path);
  f.write(content.data(), std::streamsize(content.size()));
  if (!f) throw data_error("short write: " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open file: " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

struct manifest_info {
  std::string command;
  uint64_t config_hash = 0, corpus_hash = 0, model_hash = 0;
  std::vector<uint64_t> seeds;
  std::vector<std::string> artifacts;
};

// run provenance; wall_clock is the only field allowed to differ between
// reruns with identical inputs
inline void write_manifest(const std::string& path, const manifest_info& info) {
  nlohmann::ordered_json j;
  j["command"] = info.command;
  j["config_hash"] = hex64(info.config_hash);
  j["corpus_hash"] = hex64(info.corpus_hash);
  j["model_hash"] = hex64(info.model_hash);
  j["seeds"] = info.seeds;
  j["artifacts"] = info.artifacts;
  j["tool_version"] = tool_version();
  j["wall_clock_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch()).count();
  write_text(path, j.dump(2) + "\n");
}

}  // namespace cogheads::pipe
