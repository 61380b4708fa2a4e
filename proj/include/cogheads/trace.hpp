#pragma once

// activation tracing: run the model over corpus sub-questions, capture each
// head's post-hook residual contribution at every generated token, and turn
// the captures into per-head feature vectors for the probe.
//
// feature recipe: pick the top-k most informative generated positions (the
// corpus supplies the ranking), average each head's contribution over them,
// then append the head's layer mean so the probe sees both the head itself
// and its layer context. features are stored as f32 so cached datasets are
// byte-stable across runs.

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corpus.hpp"
#include "model.hpp"

namespace cogheads::trace {

struct activation_record {
  int example_id = 0;
  int step = 0;
  std::vector<int> gen;               // generated ids including the end marker if emitted
  std::vector<int> payload;           // generated ids with the end marker stripped
  bool correct = false;
  std::vector<step_capture> caps;     // one per generated token
};

// run one sub-question and capture head contributions at every generated token.
inline activation_record run_and_capture(const model& md, const corp::main_qa& m, int step,
                                         const std::string& mode = "none",
                                         const std::vector<head_hook>& hooks = {}) {
  activation_record rec;
  rec.example_id = m.id;
  rec.step = step;
  auto ids = corp::render_ids(md.vb, m, step, mode);
  auto g = md.generate(ids, hooks, -1, &rec.caps);
  rec.gen = g.ids;
  rec.payload = g.payload(md.eoa_id);
  std::vector<int> gold;
  for (const auto& w : m.subs[size_t(step)].answer) gold.push_back(md.vb.id(w));
  rec.correct = rec.payload == gold;
  return rec;
}

// first k generated positions in ranking order. the ranking lists the most
// informative answer positions first; generated positions it does not cover
// (for instance the end marker) are appended in sequence order.
inline std::vector<int> select_topk_tokens(const std::vector<int>& ranking, int n_gen, int k) {
  if (n_gen <= 0) throw data_error("cannot select answer tokens from an empty generation");
  if (k <= 0) throw usage_error("top-k selection needs k >= 1");
  std::vector<int> order;
  std::vector<char> used(size_t(n_gen), 0);
  for (int p : ranking) {
    if (p < 0 || p >= n_gen || used[size_t(p)]) continue;
    used[size_t(p)] = 1;
    order.push_back(p);
  }
  for (int p = 0; p < n_gen; ++p)
    if (!used[size_t(p)]) order.push_back(p);
  order.resize(size_t(std::min(k, n_gen)));
  return order;
}

// per-head mean contribution over the selected generated positions: L*M rows of d.
inline std::vector<double> head_feature(const activation_record& rec, const std::vector<int>& sel,
                                        int lm, int d) {
  check(!sel.empty(), "head feature needs at least one selected position");
  std::vector<double> out(size_t(lm) * size_t(d), 0.0);
  for (int p : sel) {
    check(p >= 0 && p < int(rec.caps.size()), "selected position outside the capture");
    const auto& c = rec.caps[size_t(p)].contrib;
    check(int(c.size()) == lm * d, "capture block has the wrong extent");
    for (size_t i = 0; i < out.size(); ++i) out[i] += double(c[i]);
  }
  double inv = 1.0 / double(sel.size());
  for (auto& x : out) x *= inv;
  return out;
}

// concat each head's d-vector with its layer's mean over heads: L*M rows of 2d.
inline std::vector<double> augment_with_layer_summary(const std::vector<double>& feat, int n_layers,
                                                      int n_heads, int d) {
  check(int(feat.size()) == n_layers * n_heads * d, "feature block has the wrong extent");
  std::vector<double> out(size_t(n_layers) * size_t(n_heads) * size_t(2 * d), 0.0);
  std::vector<double> lsum(static_cast<size_t>(d));
  for (int l = 0; l < n_layers; ++l) {
    std::fill(lsum.begin(), lsum.end(), 0.0);
    for (int m = 0; m < n_heads; ++m)
      for (int i = 0; i < d; ++i) lsum[size_t(i)] += feat[size_t((l * n_heads + m) * d + i)];
    for (auto& x : lsum) x /= double(n_heads);
    for (int m = 0; m < n_heads; ++m) {
      size_t src = size_t(l * n_heads + m) * size_t(d);
      size_t dst = size_t(l * n_heads + m) * size_t(2 * d);
      for (int i = 0; i < d; ++i) {
        out[dst + size_t(i)] = feat[src + size_t(i)];
        out[dst + size_t(d + i)] = lsum[size_t(i)];
      }
    }
  }
  return out;
}

struct probe_sample {
  int example_id = 0;
  int step = 0;
  uint8_t labels = 0;          // bit i set = function_labels()[i] applies
  std::vector<float> feat;     // L*M slots of 2d
};

struct probe_dataset {
  int n_layers = 0, n_heads = 0, dim = 0;   // feature extent per head slot is 2*dim
  uint64_t model_hash = 0, corpus_hash = 0;
  int k = 0;
  std::vector<probe_sample> samples;
};

inline uint8_t label_mask(const std::vector<std::string>& functions) {
  uint8_t m = 0;
  for (const auto& f : functions) m = uint8_t(m | (1u << function_index(f)));
  return m;
}

// positions feeding the feature mean, by strategy: the ranked top-k (default),
// the first or last generated token, or every generated token
inline std::vector<int> select_positions(const std::string& strategy,
                                         const std::vector<int>& ranking, int n_gen, int k) {
  if (n_gen <= 0) throw data_error("cannot select answer tokens from an empty generation");
  if (strategy == "top-k") return select_topk_tokens(ranking, n_gen, k);
  if (strategy == "first") return {0};
  if (strategy == "last") return {n_gen - 1};
  if (strategy == "full") {
    std::vector<int> all(static_cast<size_t>(n_gen));
    for (int i = 0; i < n_gen; ++i) all[size_t(i)] = i;
    return all;
  }
  throw usage_error("unknown token strategy: " + strategy +
                    " (expected first, last, full, or top-k)");
}

// features for every correctly answered sub-question in the given examples,
// ordered by (example id, step). an empty result is an error: it means the
// model cannot do the tasks, so the failing templates are named.
inline probe_dataset build_probe_dataset(const model& md, const std::vector<corp::main_qa>& mains,
                                         int k, const std::string& mode = "none",
                                         const std::string& strategy = "top-k") {
  probe_dataset ds;
  ds.n_layers = md.cfg.n_layers;
  ds.n_heads = md.cfg.n_heads;
  ds.dim = md.cfg.dim;
  ds.model_hash = md.content_hash();
  ds.corpus_hash = corp::corpus_hash(mains);
  ds.k = k;
  const int lm = md.cfg.n_layers * md.cfg.n_heads, d = md.cfg.dim;
  std::vector<const corp::main_qa*> sorted;
  for (const auto& m : mains) sorted.push_back(&m);
  std::sort(sorted.begin(), sorted.end(),
            [](const corp::main_qa* a, const corp::main_qa* b) { return a->id < b->id; });
  std::set<std::string> failing;
  for (const auto* mp : sorted)
    for (int step = 0; step < int(mp->subs.size()); ++step) {
      auto rec = run_and_capture(md, *mp, step, mode);
      if (!rec.correct) {
        failing.insert(mp->template_id);
        continue;
      }
      auto sel = select_positions(strategy, mp->subs[size_t(step)].importance,
                                  int(rec.gen.size()), k);
      auto aug = augment_with_layer_summary(head_feature(rec, sel, lm, d), md.cfg.n_layers,
                                            md.cfg.n_heads, d);
      probe_sample s;
      s.example_id = mp->id;
      s.step = step;
      s.labels = label_mask(mp->subs[size_t(step)].functions);
      s.feat.assign(aug.begin(), aug.end());
      ds.samples.push_back(std::move(s));
    }
  if (ds.samples.empty()) {
    std::string who;
    for (const auto& t : failing) who += (who.empty() ? "" : ", ") + t;
    throw data_error("no correct answers to probe; failing templates: " +
                     (who.empty() ? std::string("(no examples given)") : who));
  }
  return ds;
}

// binary capture cache. layout (little-endian): "HSC1", u32 version, u32 L,
// u32 M, u32 d, u32 k, u64 count, then per sample u32 example id, u32 step,
// u8 label mask, L*M*2d f32. a json sidecar records the provenance hashes.
inline void write_capture_cache(const std::string& path, const probe_dataset& ds) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw data_error("cannot write capture cache: " + path);
  auto put = [&f](const void* p, size_t n) { f.write(static_cast<const char*>(p), std::streamsize(n)); };
  f.write("HSC1", 4);
  uint32_t v = 1, L = uint32_t(ds.n_layers), M = uint32_t(ds.n_heads), d = uint32_t(ds.dim),
           k = uint32_t(ds.k);
  uint64_t n = ds.samples.size();
  put(&v, 4); put(&L, 4); put(&M, 4); put(&d, 4); put(&k, 4); put(&n, 8);
  size_t want = size_t(ds.n_layers) * size_t(ds.n_heads) * size_t(2 * ds.dim);
  for (const auto& s : ds.samples) {
    check(s.feat.size() == want, "sample feature block has the wrong extent");
    uint32_t id = uint32_t(s.example_id), st = uint32_t(s.step);
    put(&id, 4); put(&st, 4); put(&s.labels, 1);
    put(s.feat.data(), s.feat.size() * 4);
  }
  if (!f) throw data_error("short write to capture cache: " + path);
  f.close();

  nlohmann::ordered_json man;
  man["cache"] = "HSC1";
  man["model_hash"] = hex64(ds.model_hash);
  man["corpus_hash"] = hex64(ds.corpus_hash);
  man["k"] = ds.k;
  man["samples"] = ds.samples.size();
  std::ofstream mf(path + ".manifest.json", std::ios::trunc);
  if (!mf) throw data_error("cannot write cache manifest: " + path + ".manifest.json");
  mf << man.dump(2) << "\n";
}

inline probe_dataset read_capture_cache(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open capture cache: " + path);
  auto get = [&f, &path](void* p, size_t n) {
    f.read(static_cast<char*>(p), std::streamsize(n));
    if (size_t(f.gcount()) != n) throw data_error("capture cache truncated: " + path);
  };
  char magic[4];
  get(magic, 4);
  if (std::memcmp(magic, "HSC1", 4) != 0) throw data_error("not a capture cache: " + path);
  uint32_t v, L, M, d, k;
  uint64_t n;
  get(&v, 4); get(&L, 4); get(&M, 4); get(&d, 4); get(&k, 4); get(&n, 8);
  if (v != 1) throw data_error("unsupported capture cache version");
  probe_dataset ds;
  ds.n_layers = int(L); ds.n_heads = int(M); ds.dim = int(d); ds.k = int(k);
  size_t want = size_t(L) * size_t(M) * size_t(2 * d);
  ds.samples.resize(size_t(n));
  for (auto& s : ds.samples) {
    uint32_t id, st;
    get(&id, 4); get(&st, 4); get(&s.labels, 1);
    s.example_id = int(id); s.step = int(st);
    s.feat.resize(want);
    get(s.feat.data(), want * 4);
  }
  char extra;
  f.read(&extra, 1);
  if (f.gcount() != 0) throw data_error("capture cache has trailing bytes: " + path);

  std::ifstream mf(path + ".manifest.json");
  if (mf) {
    auto man = nlohmann::json::parse(mf, nullptr, false);
    if (!man.is_discarded()) {
      if (man.contains("model_hash"))
        ds.model_hash = std::strtoull(man["model_hash"].get<std::string>().c_str(), nullptr, 16);
      if (man.contains("corpus_hash"))
        ds.corpus_hash = std::strtoull(man["corpus_hash"].get<std::string>().c_str(), nullptr, 16);
    }
  }
  return ds;
}

}  // namespace cogheads::trace
