#pragma once

// synthetic grid-world corpus: scenes, function-labelled subquestion chains
// with analytically computed gold answers, spatial-cue augmentation, and
// line-delimited json serialization.

#include <algorithm>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "channels.hpp"
#include "common.hpp"
#include "tokens.hpp"

namespace cogheads::corp {

using ordered_json = nlohmann::ordered_json;

// --- domain types -------------------------------------------------------------

struct scene_obj {
  int kind = 0, colr = 0, sz = 0, ori = 0, row = 0, col = 0;
};

struct scene_fact {
  int key = 0, val = 0;
};

struct scene_t {
  int grid_n = chan::grid_n;
  std::vector<scene_obj> objects;
  std::vector<scene_fact> facts;

  const scene_obj* at(int r, int c) const {
    for (const auto& o : objects)
      if (o.row == r && o.col == c) return &o;
    return nullptr;
  }
  // the unique object of a kind, or null when absent or ambiguous
  const scene_obj* of_kind(int kind) const {
    const scene_obj* hit = nullptr;
    for (const auto& o : objects)
      if (o.kind == kind) {
        if (hit) return nullptr;
        hit = &o;
      }
    return hit;
  }
};

struct subqaf {
  int step = 0;
  std::vector<std::string> functions;  // multi-label; the first entry is primary
  std::vector<std::string> question;   // word tokens
  std::string ask;                     // answer-start marker token
  std::vector<std::string> answer;     // gold payload tokens (end marker implicit)
  std::vector<int> importance;         // answer-position ranking, payload first
  std::vector<int> bbox_kinds;         // kinds this step names (for bbox mode)
};

struct main_qa {
  int id = 0;
  std::string template_id;
  scene_t scene;
  int match_color = -1;  // counting criterion baked into the cell tokens
  std::vector<std::string> main_q;
  std::vector<std::string> main_a;
  std::vector<subqaf> subs;
  std::string augment = "none";
};

// --- scene generation ---------------------------------------------------------

struct scene_config {
  int grid_n = chan::grid_n;
  int n_objects = 3;
  int n_facts = chan::n_keys;
};

namespace detail {

using cogheads::rand_below;
using cogheads::shuffle_vec;

}  // namespace detail

inline scene_t generate_scene(uint64_t seed, const scene_config& cfg = {}) {
  check(cfg.grid_n == chan::grid_n, "scene grid size is fixed by the channel map");
  if (cfg.n_objects < 0 || cfg.n_objects > cfg.grid_n * cfg.grid_n)
    throw data_error("object count exceeds grid capacity");
  if (cfg.n_facts < 0 || cfg.n_facts > chan::n_keys)
    throw data_error("fact count exceeds the key table");

  rng_t rng = make_rng(seed, 0x5ce17e5);
  scene_t sc;
  sc.grid_n = cfg.grid_n;

  std::vector<std::pair<int, int>> cells;
  for (int r = 0; r < cfg.grid_n; ++r)
    for (int c = 0; c < cfg.grid_n; ++c) cells.emplace_back(r, c);
  detail::shuffle_vec(cells, rng);

  std::vector<int> kind_pool;
  for (int k = 0; k < chan::n_kinds; ++k) kind_pool.push_back(k);
  detail::shuffle_vec(kind_pool, rng);

  for (int i = 0; i < cfg.n_objects; ++i) {
    scene_obj o;
    // kinds stay unique while the table lasts so questions can name objects
    o.kind = i < chan::n_kinds ? kind_pool[size_t(i)] : detail::rand_below(rng, chan::n_kinds);
    o.colr = detail::rand_below(rng, chan::n_colors);
    o.sz = detail::rand_below(rng, chan::n_sizes);
    o.ori = detail::rand_below(rng, chan::n_orients);
    o.row = cells[size_t(i)].first;
    o.col = cells[size_t(i)].second;
    sc.objects.push_back(o);
  }

  std::vector<int> key_pool;
  for (int k = 0; k < chan::n_keys; ++k) key_pool.push_back(k);
  detail::shuffle_vec(key_pool, rng);
  for (int i = 0; i < cfg.n_facts; ++i)
    sc.facts.push_back({key_pool[size_t(i)], detail::rand_below(rng, chan::n_vals)});
  std::sort(sc.facts.begin(), sc.facts.end(),
            [](const scene_fact& a, const scene_fact& b) { return a.key < b.key; });
  return sc;
}

// --- question composition -----------------------------------------------------

namespace detail {

inline std::vector<std::string> qws(std::initializer_list<std::string> words) {
  std::vector<std::string> v;
  for (const auto& w : words) v.push_back(tok::word_token(w));
  return v;
}

inline subqaf mk_sub(int step, std::vector<std::string> functions, std::vector<std::string> q,
                     std::string ask, std::string answer, std::vector<int> bbox = {}) {
  subqaf s;
  s.step = step;
  s.functions = std::move(functions);
  s.question = std::move(q);
  s.ask = std::move(ask);
  s.answer = {std::move(answer)};
  s.importance = {0};
  s.bbox_kinds = std::move(bbox);
  return s;
}

// direction of a as seen from b; requires an axis-aligned pair
inline int dir_of(const scene_obj& a, const scene_obj& b) {
  int dr = a.row - b.row, dc = a.col - b.col;
  check((dr == 0) != (dc == 0), "relative direction needs an axis-aligned pair");
  if (dc == 0) return dr < 0 ? 0 : 1;  // up / down
  return dc < 0 ? 2 : 3;               // left / right
}

// ordered axis-aligned pairs of uniquely named objects
inline std::vector<std::pair<int, int>> axis_pairs(const scene_t& sc) {
  std::vector<std::pair<int, int>> out;
  for (size_t i = 0; i < sc.objects.size(); ++i)
    for (size_t j = 0; j < sc.objects.size(); ++j) {
      if (i == j) continue;
      const auto &a = sc.objects[i], &b = sc.objects[j];
      if ((a.row == b.row) == (a.col == b.col)) continue;
      if (!sc.of_kind(a.kind) || !sc.of_kind(b.kind)) continue;
      out.emplace_back(int(i), int(j));
    }
  return out;
}

// a faces b when its orientation points at b's cell
inline bool is_facing(const scene_obj& a, const scene_obj& b) { return a.ori == dir_of(b, a); }

// pick uniformly, after an even coin over the two gold classes when both exist
template <typename T>
const T& pick_classed(const std::vector<T>& want, const std::vector<T>& other, rng_t& rng) {
  const auto& pool = !want.empty() ? want : other;
  check(!pool.empty(), "empty candidate pool");
  return pool[size_t(rand_below(rng, int(pool.size())))];
}

inline subqaf dec_sub(int step, const subqaf& judged) {
  bool yes = judged.answer.at(0) == "yes";
  return mk_sub(step, {"DecisionMaking"}, qws({"so", "is", "the", "main", "claim", "true"}),
                tok::ask_decide(judged.step), yes ? "true" : "false");
}

inline int count_color(const scene_t& sc, int colr) {
  int m = 0;
  for (const auto& o : sc.objects) m += o.colr == colr ? 1 : 0;
  return m;
}

// equality target: the true ordinal or a nearby decoy, coin-chosen
inline int eq_target(int truth, int lo, int hi, rng_t& rng) {
  if (rand_below(rng, 2) == 0) return truth;
  std::vector<int> alts;
  if (truth - 1 >= lo) alts.push_back(truth - 1);
  if (truth + 1 <= hi) alts.push_back(truth + 1);
  return alts[size_t(rand_below(rng, int(alts.size())))];
}

}  // namespace detail

inline const std::vector<std::string>& template_ids() {
  static const std::vector<std::string> v = {"facing",  "relpos4",  "relpos3", "relpos3w",
                                             "ident2",  "counting", "extract", "extract2",
                                             "size4",   "size3",    "recall4", "recall3"};
  return v;
}

inline main_qa compose_qa(const scene_t& scene, const std::string& template_id, uint64_t seed) {
  using namespace detail;
  rng_t rng = make_rng(seed, 0xc0305e);
  main_qa m;
  m.template_id = template_id;
  m.scene = scene;

  auto kindw = [](const scene_obj& o) { return tok::kinds()[size_t(o.kind)]; };
  auto orientw = [](int d) { return tok::orients()[size_t(d)]; };

  if (template_id == "facing") {
    auto pairs = axis_pairs(scene);
    if (pairs.empty()) throw data_error("facing template needs an axis-aligned pair");
    std::vector<std::pair<int, int>> yes_pairs, no_pairs;
    for (auto& p : pairs)
      (is_facing(scene.objects[size_t(p.first)], scene.objects[size_t(p.second)]) ? yes_pairs
                                                                                  : no_pairs)
          .push_back(p);
    bool want_yes = rand_below(rng, 2) == 0;
    auto pr = pick_classed(want_yes ? yes_pairs : no_pairs, want_yes ? no_pairs : yes_pairs, rng);
    const auto &a = scene.objects[size_t(pr.first)], &b = scene.objects[size_t(pr.second)];
    int d = dir_of(b, a);  // where b sits, seen from a's cell
    m.subs.push_back(mk_sub(0, {"HighLevelVisual"},
                            qws({"what", "is", "the", "thing", "at",
                                 "row" + std::to_string(b.row), "col" + std::to_string(b.col)}),
                            tok::ask_whatat(b.row, b.col), kindw(b)));
    m.subs.push_back(mk_sub(1, {"SpatialPerception", "HighLevelVisual"},
                            qws({"which", "way", "is", "the", kindw(a), "at",
                                 "row" + std::to_string(a.row), "col" + std::to_string(a.col),
                                 "facing"}),
                            tok::ask_whichway_cell(a.kind, a.row, a.col), orientw(a.ori),
                            {a.kind}));
    m.subs.push_back(mk_sub(2, {"SpatialPerception", "HighLevelVisual"},
                            qws({"where", "is", "the", kindw(b), "relative", "to", "the",
                                 kindw(a)}),
                            tok::ask_reldir_cell(b.kind, a.row, a.col), orientw(d),
                            {b.kind, a.kind}));
    m.subs.push_back(mk_sub(3, {"RelationalReasoning"},
                            qws({"is", "the", "second", "direction", "the", "same", "as", "the",
                                 "first"}),
                            tok::ask_rel_same(1, 2), a.ori == d ? "yes" : "no"));
    m.subs.push_back(dec_sub(4, m.subs.back()));
    m.main_q = qws({"is", "the", kindw(a), "facing", "the", kindw(b)});
  } else if (template_id == "relpos4" || template_id == "relpos3") {
    std::vector<int> named;
    for (size_t i = 0; i < scene.objects.size(); ++i)
      if (scene.of_kind(scene.objects[i].kind)) named.push_back(int(i));
    if (named.empty()) throw data_error(template_id + " template needs a uniquely named object");
    const auto& a = scene.objects[size_t(named[size_t(rand_below(rng, int(named.size())))])];
    // a reference cell sharing exactly one axis with the object, so the relative
    // direction is always defined; the cell itself may be empty or occupied
    bool same_row = rand_below(rng, 2) == 0;
    int off = 1 + rand_below(rng, scene.grid_n - 1);
    int rr = same_row ? a.row : (a.row + off) % scene.grid_n;
    int rc = same_row ? (a.col + off) % scene.grid_n : a.col;
    scene_obj ref;
    ref.row = rr;
    ref.col = rc;
    int d = dir_of(a, ref);
    int t = rand_below(rng, 2) == 0 ? d : (d + 1 + rand_below(rng, 3)) % 4;
    int step = 0;
    if (template_id == "relpos4")
      m.subs.push_back(mk_sub(step++, {"HighLevelVisual"},
                              qws({"what", "is", "the", "thing", "at",
                                   "row" + std::to_string(a.row), "col" + std::to_string(a.col)}),
                              tok::ask_whatat(a.row, a.col), kindw(a)));
    m.subs.push_back(mk_sub(step, {"SpatialPerception"},
                            qws({"where", "is", "the", kindw(a), "relative", "to",
                                 "row" + std::to_string(rr), "col" + std::to_string(rc)}),
                            tok::ask_reldir(a.kind, rr, rc), orientw(d), {a.kind}));
    m.subs.push_back(mk_sub(step + 1, {"RelationalReasoning"},
                            qws({"is", "the", "answer", "equal", "to", orientw(t)}),
                            tok::ask_rel_eq(step, t), t == d ? "yes" : "no"));
    m.subs.push_back(dec_sub(step + 2, m.subs.back()));
    m.main_q = qws({"is", "the", kindw(a), orientw(t), "of", "row" + std::to_string(rr),
                    "col" + std::to_string(rc)});
  } else if (template_id == "relpos3w") {
    std::vector<int> named;
    for (size_t i = 0; i < scene.objects.size(); ++i)
      if (scene.of_kind(scene.objects[i].kind)) named.push_back(int(i));
    if (named.empty()) throw data_error("relpos3w template needs a uniquely named object");
    const auto& a = scene.objects[size_t(named[size_t(rand_below(rng, int(named.size())))])];
    int t = rand_below(rng, 2) == 0 ? a.ori : (a.ori + 1 + rand_below(rng, 3)) % 4;
    m.subs.push_back(mk_sub(0, {"SpatialPerception"},
                            qws({"which", "way", "is", "the", kindw(a), "facing"}),
                            tok::ask_whichway(a.kind), orientw(a.ori), {a.kind}));
    m.subs.push_back(mk_sub(1, {"RelationalReasoning"},
                            qws({"is", "the", "answer", "equal", "to", orientw(t)}),
                            tok::ask_rel_eq(0, t), t == a.ori ? "yes" : "no"));
    m.subs.push_back(dec_sub(2, m.subs.back()));
    m.main_q = qws({"is", "the", kindw(a), "facing", orientw(t)});
  } else if (template_id == "ident2") {
    if (scene.objects.empty()) throw data_error("ident2 template needs an object");
    const auto& a = scene.objects[size_t(rand_below(rng, int(scene.objects.size())))];
    m.subs.push_back(mk_sub(0, {"HighLevelVisual"},
                            qws({"what", "is", "the", "thing", "at",
                                 "row" + std::to_string(a.row), "col" + std::to_string(a.col)}),
                            tok::ask_whatat(a.row, a.col), kindw(a)));
    m.subs.push_back(mk_sub(1, {"InfoExtraction"},
                            qws({"what", "was", "the", "answer", "at", "step", "s0"}),
                            tok::ask_extract(0), kindw(a)));
    m.main_q = qws({"what", "was", "the", "thing", "at", "row" + std::to_string(a.row),
                    "col" + std::to_string(a.col)});
  } else if (template_id == "counting" || template_id == "extract") {
    int colr = rand_below(rng, chan::n_colors);
    int cnt = count_color(scene, colr);
    int t = eq_target(cnt, 0, chan::count_bins - 1, rng);
    m.match_color = colr;
    if (cnt >= chan::count_bins) throw data_error("count exceeds the digit table");
    const std::string cw = tok::colors()[size_t(colr)];
    m.subs.push_back(mk_sub(0, {"MathReasoning"}, qws({"how", "many", cw, "things"}),
                            tok::ask_count(), tok::digits()[size_t(cnt)]));
    int step = 1;
    if (template_id == "extract")
      m.subs.push_back(mk_sub(step++, {"InfoExtraction"},
                              qws({"what", "was", "the", "answer", "at", "step", "s0"}),
                              tok::ask_extract(0), tok::digits()[size_t(cnt)]));
    m.subs.push_back(mk_sub(step, {"RelationalReasoning"},
                            qws({"is", "the", "count", "equal", "to", "t" + std::to_string(t)}),
                            tok::ask_rel_eq(step - 1, t), t == cnt ? "yes" : "no"));
    m.subs.push_back(dec_sub(step + 1, m.subs.back()));
    m.main_q = qws({"are", "there", "exactly", "t" + std::to_string(t), cw, "things"});
  } else if (template_id == "extract2") {
    if (scene.objects.size() < 2) throw data_error("extract2 template needs two objects");
    int ia = rand_below(rng, int(scene.objects.size()));
    int ib = rand_below(rng, int(scene.objects.size()) - 1);
    if (ib >= ia) ++ib;
    const auto &a = scene.objects[size_t(ia)], &b = scene.objects[size_t(ib)];
    auto cellq = [&](const scene_obj& o) {
      return qws({"what", "size", "is", "the", "thing", "at", "row" + std::to_string(o.row),
                  "col" + std::to_string(o.col)});
    };
    m.subs.push_back(mk_sub(0, {"LowLevelVisual"}, cellq(a), tok::ask_size(a.row, a.col),
                            tok::sizes()[size_t(a.sz)]));
    m.subs.push_back(mk_sub(1, {"LowLevelVisual"}, cellq(b), tok::ask_size(b.row, b.col),
                            tok::sizes()[size_t(b.sz)]));
    m.subs.push_back(mk_sub(2, {"InfoExtraction"},
                            qws({"what", "was", "the", "answer", "at", "step", "s0"}),
                            tok::ask_extract(0), tok::sizes()[size_t(a.sz)]));
    m.main_q = qws({"what", "size", "was", "the", "first", "thing"});
  } else if (template_id == "size4") {
    if (scene.objects.size() < 2) throw data_error("size4 template needs two objects");
    int ia = rand_below(rng, int(scene.objects.size()));
    int ib = rand_below(rng, int(scene.objects.size()) - 1);
    if (ib >= ia) ++ib;
    const auto &a = scene.objects[size_t(ia)], &b = scene.objects[size_t(ib)];
    auto cellq = [&](const scene_obj& o) {
      return qws({"what", "size", "is", "the", "thing", "at", "row" + std::to_string(o.row),
                  "col" + std::to_string(o.col)});
    };
    m.subs.push_back(mk_sub(0, {"LowLevelVisual"}, cellq(a), tok::ask_size(a.row, a.col),
                            tok::sizes()[size_t(a.sz)]));
    m.subs.push_back(mk_sub(1, {"LowLevelVisual"}, cellq(b), tok::ask_size(b.row, b.col),
                            tok::sizes()[size_t(b.sz)]));
    m.subs.push_back(mk_sub(2, {"RelationalReasoning"},
                            qws({"is", "the", "first", "bigger", "than", "the", "second"}),
                            tok::ask_rel_big(0, 1), a.sz > b.sz ? "yes" : "no"));
    m.subs.push_back(dec_sub(3, m.subs.back()));
    m.main_q = qws({"is", "the", "first", "thing", "bigger", "than", "the", "second"});
  } else if (template_id == "size3") {
    if (scene.objects.empty()) throw data_error("size3 template needs an object");
    const auto& a = scene.objects[size_t(rand_below(rng, int(scene.objects.size())))];
    int t = eq_target(a.sz, 0, chan::n_sizes - 1, rng);
    m.subs.push_back(mk_sub(0, {"LowLevelVisual"},
                            qws({"what", "size", "is", "the", "thing", "at",
                                 "row" + std::to_string(a.row), "col" + std::to_string(a.col)}),
                            tok::ask_size(a.row, a.col), tok::sizes()[size_t(a.sz)]));
    m.subs.push_back(mk_sub(1, {"RelationalReasoning"},
                            qws({"is", "the", "size", "equal", "to", tok::sizes()[size_t(t)]}),
                            tok::ask_rel_eq(0, t), t == a.sz ? "yes" : "no"));
    m.subs.push_back(dec_sub(2, m.subs.back()));
    m.main_q = qws({"is", "the", "thing", "at", "row" + std::to_string(a.row),
                    "col" + std::to_string(a.col), tok::sizes()[size_t(t)]});
  } else if (template_id == "recall4" || template_id == "recall3") {
    int need = template_id == "recall4" ? 2 : 1;
    if (int(scene.facts.size()) < need) throw data_error(template_id + " template needs facts");
    std::vector<int> order;
    for (size_t i = 0; i < scene.facts.size(); ++i) order.push_back(int(i));
    shuffle_vec(order, rng);
    int step = 0;
    for (int i = 0; i < need; ++i) {
      const auto& f = scene.facts[size_t(order[size_t(i)])];
      m.subs.push_back(mk_sub(step++, {"KnowledgeRecall"},
                              qws({"what", "is", "fact", tok::fact_keys()[size_t(f.key)]}),
                              tok::ask_recall(f.key), tok::fact_vals()[size_t(f.val)]));
    }
    const auto& f = scene.facts[size_t(order[size_t(need - 1)])];
    int t = eq_target(f.val, 0, chan::n_vals - 1, rng);
    m.subs.push_back(mk_sub(step, {"RelationalReasoning"},
                            qws({"is", "the", "value", "equal", "to", tok::fact_vals()[size_t(t)]}),
                            tok::ask_rel_eq(step - 1, t), t == f.val ? "yes" : "no"));
    m.subs.push_back(dec_sub(step + 1, m.subs.back()));
    m.main_q = qws({"is", "fact", tok::fact_keys()[size_t(f.key)], "equal", "to",
                    tok::fact_vals()[size_t(t)]});
  } else {
    throw data_error("unknown template: " + template_id);
  }

  m.main_a = {m.subs.back().answer.at(0)};
  return m;
}

// --- rendering ----------------------------------------------------------------

inline const std::vector<std::string>& augment_modes() {
  static const std::vector<std::string> v = {"none", "bbox", "mask", "bbox+mask"};
  return v;
}

inline main_qa augment_spatial_cues(main_qa m, const std::string& mode) {
  const auto& modes = augment_modes();
  if (std::find(modes.begin(), modes.end(), mode) == modes.end())
    throw data_error("unknown augmentation mode: " + mode);
  m.augment = mode;
  return m;
}

// token layout: start token (the attention sink every head drains to), facts,
// scene cells, optional location markers, prior steps as marker + question +
// answer, current question, answer-start marker
inline std::vector<std::string> render_example(const main_qa& m, int step,
                                               const std::string& mode) {
  check(step >= 0 && step < int(m.subs.size()), "step out of range");
  bool bbox = mode == "bbox" || mode == "bbox+mask";
  bool mask = mode == "mask" || mode == "bbox+mask";
  if (!bbox && !mask && mode != "none") throw data_error("unknown augmentation mode: " + mode);

  std::vector<std::string> seq;
  seq.push_back("<bos>");
  for (const auto& f : m.scene.facts) seq.push_back(tok::fact_token(f.key, f.val));
  for (int r = 0; r < m.scene.grid_n; ++r)
    for (int c = 0; c < m.scene.grid_n; ++c) {
      const scene_obj* o = m.scene.at(r, c);
      if (!o) {
        seq.push_back(tok::scene_token(r, c, -1, 0, 0, 0, false, false));
      } else {
        bool match = m.match_color >= 0 && o->colr == m.match_color;
        seq.push_back(tok::scene_token(r, c, o->kind, o->colr, o->sz, o->ori, match, mask));
      }
    }
  if (bbox)
    for (int k : m.subs[size_t(step)].bbox_kinds)
      if (const scene_obj* o = m.scene.of_kind(k))
        seq.push_back(tok::bbox_token(k, o->row, o->col, o->ori));
  for (int j = 0; j < step; ++j) {
    const auto& s = m.subs[size_t(j)];
    seq.push_back(tok::marker_token(j));
    for (const auto& w : s.question) seq.push_back(w);
    seq.push_back(tok::ctx_token(j, s.answer.at(0)));
  }
  for (const auto& w : m.subs[size_t(step)].question) seq.push_back(w);
  seq.push_back(m.subs[size_t(step)].ask);
  return seq;
}

inline std::vector<int> render_ids(const tok::vocab& vb, const main_qa& m, int step,
                                   const std::string& mode) {
  std::vector<int> ids;
  for (const auto& name : render_example(m, step, mode)) ids.push_back(vb.id(name));
  return ids;
}

// --- serialization ------------------------------------------------------------

inline ordered_json to_record(const main_qa& m) {
  ordered_json j;
  j["schema"] = 1;
  j["id"] = m.id;
  j["template"] = m.template_id;
  ordered_json sc;
  sc["n"] = m.scene.grid_n;
  sc["objects"] = ordered_json::array();
  for (const auto& o : m.scene.objects)
    sc["objects"].push_back({o.kind, o.colr, o.sz, o.ori, o.row, o.col});
  sc["facts"] = ordered_json::array();
  for (const auto& f : m.scene.facts) sc["facts"].push_back({f.key, f.val});
  j["scene"] = std::move(sc);
  j["match_color"] = m.match_color;
  j["main_q"] = m.main_q;
  j["main_a"] = m.main_a;
  j["augment"] = m.augment;
  j["subs"] = ordered_json::array();
  for (const auto& s : m.subs) {
    ordered_json js;
    js["step"] = s.step;
    js["functions"] = s.functions;
    js["q"] = s.question;
    js["ask"] = s.ask;
    js["a"] = s.answer;
    js["imp"] = s.importance;
    js["bbox"] = s.bbox_kinds;
    j["subs"].push_back(std::move(js));
  }
  return j;
}

inline main_qa from_record(const ordered_json& j) {
  if (!j.contains("schema") || j.at("schema").get<int>() != 1)
    throw data_error("unsupported corpus schema");
  main_qa m;
  m.id = j.at("id").get<int>();
  m.template_id = j.at("template").get<std::string>();
  const auto& sc = j.at("scene");
  m.scene.grid_n = sc.at("n").get<int>();
  for (const auto& o : sc.at("objects"))
    m.scene.objects.push_back({o.at(0).get<int>(), o.at(1).get<int>(), o.at(2).get<int>(),
                               o.at(3).get<int>(), o.at(4).get<int>(), o.at(5).get<int>()});
  for (const auto& f : sc.at("facts"))
    m.scene.facts.push_back({f.at(0).get<int>(), f.at(1).get<int>()});
  m.match_color = j.at("match_color").get<int>();
  m.main_q = j.at("main_q").get<std::vector<std::string>>();
  m.main_a = j.at("main_a").get<std::vector<std::string>>();
  m.augment = j.at("augment").get<std::string>();
  for (const auto& js : j.at("subs")) {
    subqaf s;
    s.step = js.at("step").get<int>();
    s.functions = js.at("functions").get<std::vector<std::string>>();
    s.question = js.at("q").get<std::vector<std::string>>();
    s.ask = js.at("ask").get<std::string>();
    s.answer = js.at("a").get<std::vector<std::string>>();
    s.importance = js.at("imp").get<std::vector<int>>();
    s.bbox_kinds = js.at("bbox").get<std::vector<int>>();
    m.subs.push_back(std::move(s));
  }
  return m;
}

inline void write_corpus(const std::vector<main_qa>& mains, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open corpus file for writing: " + path);
  for (const auto& m : mains) f << to_record(m).dump() << "\n";
  if (!f) throw data_error("write failed: " + path);
}

inline std::vector<main_qa> read_corpus(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open corpus file: " + path);
  std::vector<main_qa> mains;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      mains.push_back(from_record(ordered_json::parse(line)));
    } catch (const data_error&) {
      throw;
    } catch (const std::exception& e) {
      throw data_error("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return mains;
}

inline uint64_t corpus_hash(const std::vector<main_qa>& mains) {
  uint64_t h = fnv_basis;
  for (const auto& m : mains) {
    std::string line = to_record(m).dump();
    h = fnv1a(line.data(), line.size(), h);
    h = fnv1a("\n", 1, h);
  }
  return h;
}

// content fingerprint of a scene (objects + facts), used for corpus dedupe
inline uint64_t scene_key(const scene_t& sc) {
  uint64_t h = fnv_basis;
  auto mix = [&](int v) { h = fnv1a(&v, sizeof v, h); };
  mix(sc.grid_n);
  for (const auto& o : sc.objects) {
    mix(o.kind);
    mix(o.colr);
    mix(o.sz);
    mix(o.ori);
    mix(o.row);
    mix(o.col);
  }
  for (const auto& f : sc.facts) {
    mix(f.key);
    mix(f.val);
  }
  return h;
}

// --- corpus build -------------------------------------------------------------

struct corpus_config {
  uint64_t seed = 1;
  int n_mains = 1142;  // default sizing: 1,142 mains / 3,759 subquestions
  int min_objects = 2;
  int max_objects = 5;
  int n_facts = chan::n_keys;
};

// template mix; weights chosen so every function label clears the 5% floor and
// the weights sum to the default corpus size, making them exact quotas there
inline const std::vector<std::pair<std::string, int>>& template_weights() {
  static const std::vector<std::pair<std::string, int>> v = {
      {"facing", 90},    {"relpos4", 60}, {"relpos3", 160},  {"relpos3w", 40},
      {"ident2", 80},    {"counting", 165}, {"extract", 75}, {"extract2", 120},
      {"size4", 38},     {"size3", 97},   {"recall4", 60},   {"recall3", 157}};
  return v;
}

// largest-remainder apportionment of n mains across the template weights
inline std::vector<int> template_quotas(int n) {
  const auto& tw = template_weights();
  int total = 0;
  for (const auto& [_, w] : tw) total += w;
  std::vector<int> q(tw.size(), 0);
  std::vector<std::pair<long long, size_t>> rem;
  int used = 0;
  for (size_t i = 0; i < tw.size(); ++i) {
    long long num = (long long)n * tw[i].second;
    q[i] = int(num / total);
    used += q[i];
    rem.emplace_back(num % total, i);
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int i = 0; i < n - used; ++i) q[rem[size_t(i)].second] += 1;
  return q;
}

inline std::vector<main_qa> build_corpus(const corpus_config& cfg = {}) {
  check(cfg.n_mains >= 0, "negative corpus size");
  check(cfg.min_objects >= 2 && cfg.max_objects <= chan::n_kinds &&
            cfg.min_objects <= cfg.max_objects,
        "object count range must stay within the kind table");
  auto quotas = template_quotas(cfg.n_mains);
  std::vector<main_qa> mains;
  std::set<uint64_t> seen;  // scene+facts dedupe keeps rendered sequences distinct
  int id = 0;
  for (size_t ti = 0; ti < template_ids().size(); ++ti) {
    const std::string& tmpl = template_ids()[ti];
    for (int q = 0; q < quotas[ti]; ++q, ++id) {
      bool done = false;
      for (int attempt = 0; attempt < 64 && !done; ++attempt) {
        uint64_t salt = fnv1a(tmpl, fnv1a(&cfg.seed, sizeof cfg.seed)) ^
                        (uint64_t(id) * 0x9e3779b97f4a7c15ull + uint64_t(attempt));
        rng_t rng = make_rng(salt, 7);
        scene_config sc;
        sc.n_objects = cfg.min_objects + detail::rand_below(rng, cfg.max_objects - cfg.min_objects + 1);
        sc.n_facts = cfg.n_facts;
        scene_t scene = generate_scene(rng(), sc);
        uint64_t key = scene_key(scene);
        if (seen.count(key)) continue;
        try {
          main_qa m = compose_qa(scene, tmpl, rng());
          m.id = id;
          seen.insert(key);
          mains.push_back(std::move(m));
          done = true;
        } catch (const data_error&) {
          // scene not applicable to this template; redraw
        }
      }
      if (!done) throw data_error("could not build a scene for template " + tmpl);
    }
  }
  std::sort(mains.begin(), mains.end(),
            [](const main_qa& a, const main_qa& b) { return a.id < b.id; });
  return mains;
}

// 80/20 split keyed on the main-question id
inline bool is_test_main(const main_qa& m) { return m.id % 5 == 4; }

template <typename F>
void split_corpus(const std::vector<main_qa>& mains, std::vector<main_qa>& train,
                  std::vector<main_qa>& test, F&& pred) {
  for (const auto& m : mains) (pred(m) ? test : train).push_back(m);
}

inline void split_corpus(const std::vector<main_qa>& mains, std::vector<main_qa>& train,
                         std::vector<main_qa>& test) {
  split_corpus(mains, train, test, is_test_main);
}

}  // namespace cogheads::corp
