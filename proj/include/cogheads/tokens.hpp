#pragma once

// token schema shared by the corpus renderer and the planted model.
//
// token names are a tiny grammar; the embedder parses a name into the channel
// code it carries. corpus code only manipulates names, the model only reads
// channels, and this file is the single point where the two meet.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "channels.hpp"
#include "common.hpp"

namespace cogheads::tok {

inline const std::vector<std::string>& kinds() {
  static const std::vector<std::string> v = {"dog", "horse", "cat", "ball", "cup"};
  return v;
}
inline const std::vector<std::string>& colors() {
  static const std::vector<std::string> v = {"red", "green", "blue", "yellow"};
  return v;
}
inline const std::vector<std::string>& sizes() {
  static const std::vector<std::string> v = {"small", "large"};
  return v;
}
inline const std::vector<std::string>& orients() {
  static const std::vector<std::string> v = {"up", "down", "left", "right"};
  return v;
}
inline const std::vector<std::string>& fact_keys() {
  static const std::vector<std::string> v = {"k0", "k1", "k2", "k3"};
  return v;
}
inline const std::vector<std::string>& fact_vals() {
  static const std::vector<std::string> v = {"kv0", "kv1", "kv2", "kv3", "kv4"};
  return v;
}
inline const std::vector<std::string>& digits() {
  static const std::vector<std::string> v = {"0", "1", "2", "3", "4", "5"};
  return v;
}

inline int index_in(const std::vector<std::string>& table, const std::string& s) {
  for (size_t i = 0; i < table.size(); ++i)
    if (table[i] == s) return int(i);
  return -1;
}

// location-marker tokens carry their identity at this magnitude: a loud key
// that re-engages weakened identity-keyed lookups even when scene identity
// cues are masked, while the position and pose payloads stay at scene scale
constexpr double bbox_id_boost = 2.0;

// unit axis per direction; x grows rightward (columns), y grows downward (rows)
struct axis {
  int x, y;
};
inline axis dir_axis(int d) {
  static const axis a[4] = {{0, -1}, {0, 1}, {-1, 0}, {1, 0}};  // up down left right
  return a[d];
}
inline int opposite_dir(int d) { return d ^ 1; }  // up<->down, left<->right

// answer lexicon: every emit-able payload token, with its comparison ordinal
struct answer_entry {
  std::string word;
  int ord;        // ordinal used by equality logic; -1 when not comparable
  int yesno;      // +1 / -1 for polar answers, 0 otherwise
  int dir;        // direction index for direction words, -1 otherwise
  int size_sign;  // +1 large, -1 small, 0 otherwise
};

inline const std::vector<answer_entry>& answers() {
  static const std::vector<answer_entry> v = [] {
    std::vector<answer_entry> a;
    for (int i = 0; i < chan::n_colors; ++i) a.push_back({colors()[size_t(i)], i, 0, -1, 0});
    for (int i = 0; i < chan::n_sizes; ++i)
      a.push_back({sizes()[size_t(i)], i, 0, -1, i == 1 ? 1 : -1});
    for (int i = 0; i < chan::n_orients; ++i) a.push_back({orients()[size_t(i)], i, 0, i, 0});
    for (int i = 0; i < int(digits().size()); ++i) a.push_back({digits()[size_t(i)], i, 0, -1, 0});
    for (int i = 0; i < chan::n_vals; ++i) a.push_back({fact_vals()[size_t(i)], i, 0, -1, 0});
    for (int i = 0; i < chan::n_kinds; ++i) a.push_back({kinds()[size_t(i)], -1, 0, -1, 0});
    a.push_back({"yes", -1, 1, -1, 0});
    a.push_back({"no", -1, -1, -1, 0});
    a.push_back({"true", -1, 1, -1, 0});
    a.push_back({"false", -1, -1, -1, 0});
    return a;
  }();
  return v;
}

inline int answer_index(const std::string& word) {
  const auto& a = answers();
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].word == word) return int(i);
  return -1;
}

// +/-1 lexical codes: 6-bit even-parity words, pairwise hamming distance >= 2,
// so the correct answer beats every other by logit margin >= 4 per unit of gate
inline const std::vector<std::array<double, chan::lex_bits>>& lex_codes() {
  static const std::vector<std::array<double, chan::lex_bits>> v = [] {
    std::vector<std::array<double, chan::lex_bits>> codes;
    for (int m = 0; m < 64 && int(codes.size()) < int(answers().size()); ++m) {
      if (__builtin_popcount(unsigned(m)) % 2 != 0) continue;
      std::array<double, chan::lex_bits> c{};
      for (int b = 0; b < chan::lex_bits; ++b) c[size_t(b)] = (m >> b) & 1 ? 1.0 : -1.0;
      codes.push_back(c);
    }
    return codes;
  }();
  return v;
}

// --- token name builders ---------------------------------------------------

inline std::string cell_name(int r, int c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s_r%dc%d", r, c);
  return buf;
}
inline std::string scene_token(int r, int c, int kind, int colr, int sz, int ori, bool match,
                               bool masked) {
  std::string s = masked ? "m" + cell_name(r, c) : cell_name(r, c);
  if (kind >= 0) {
    if (!masked) s += "_" + kinds()[size_t(kind)];
    s += "_" + colors()[size_t(colr)] + "_" + sizes()[size_t(sz)] + "_" + orients()[size_t(ori)];
  }
  if (match) s += "_m";
  return s;
}
inline std::string fact_token(int key, int val) {
  return "fact_" + fact_keys()[size_t(key)] + "_v" + std::to_string(val);
}
inline std::string marker_token(int step) { return "step" + std::to_string(step); }
inline std::string ctx_token(int step, const std::string& answer) {
  return "ctx" + std::to_string(step) + "_" + answer;
}
inline std::string bbox_token(int kind, int r, int c, int ori) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_r%dc%d_", r, c);
  return "bbox_" + kinds()[size_t(kind)] + buf + orients()[size_t(ori)];
}
inline std::string word_token(const std::string& w) { return "w_" + w; }

inline std::string ask_color(int r, int c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ask_color_r%dc%d", r, c);
  return buf;
}
inline std::string ask_size(int r, int c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ask_size_r%dc%d", r, c);
  return buf;
}
inline std::string ask_whichway(int kind) { return "ask_ww_" + kinds()[size_t(kind)]; }
// whichway with the object's cell already located (carries the cell argument)
inline std::string ask_whichway_cell(int kind, int r, int c) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_r%dc%d", r, c);
  return "ask_wwc_" + kinds()[size_t(kind)] + buf;
}
inline std::string ask_reldir(int kind, int r, int c) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_r%dc%d", r, c);
  return "ask_reldir_" + kinds()[size_t(kind)] + buf;
}
// reldir whose reference cell is known to hold an object worth identifying
inline std::string ask_reldir_cell(int kind, int r, int c) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_r%dc%d", r, c);
  return "ask_rdc_" + kinds()[size_t(kind)] + buf;
}
inline std::string ask_whatat(int r, int c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ask_what_r%dc%d", r, c);
  return buf;
}
inline std::string ask_count() { return "ask_count"; }
inline std::string ask_recall(int key) { return "ask_recall_" + fact_keys()[size_t(key)]; }
inline std::string ask_extract(int step) { return "ask_ext_s" + std::to_string(step); }
inline std::string ask_rel_same(int si, int sj) {
  return "ask_relsame_s" + std::to_string(si) + "_s" + std::to_string(sj);
}
inline std::string ask_rel_eq(int step, int target_ord) {
  return "ask_releq_s" + std::to_string(step) + "_t" + std::to_string(target_ord);
}
inline std::string ask_rel_big(int si, int sj) {
  return "ask_relbig_s" + std::to_string(si) + "_s" + std::to_string(sj);
}
inline std::string ask_decide(int step) { return "ask_dec_s" + std::to_string(step); }

// --- embedder ---------------------------------------------------------------

inline std::vector<std::string> split_name(const std::string& s) {
  std::vector<std::string> parts;
  size_t pos = 0;
  while (pos <= s.size()) {
    size_t us = s.find('_', pos);
    parts.push_back(s.substr(pos, us == std::string::npos ? std::string::npos : us - pos));
    if (us == std::string::npos) break;
    pos = us + 1;
  }
  return parts;
}

inline bool parse_cell(const std::string& part, int& r, int& c) {
  // "r{digit}c{digit}"
  if (part.size() != 4 || part[0] != 'r' || part[2] != 'c') return false;
  r = part[1] - '0';
  c = part[3] - '0';
  return r >= 0 && r < chan::grid_n && c >= 0 && c < chan::grid_n;
}

// channel code for a token name; throws usage_error on unknown names
inline std::vector<double> embed_token(const std::string& name) {
  using namespace chan;
  std::vector<double> x(dim, 0.0);
  x[k_const] = 1.0;
  auto set_type = [&](token_type t) { x[size_t(type_flag(t))] = 1.0; };
  auto put_lex = [&](int aidx) {
    const auto& code = lex_codes()[size_t(aidx)];
    for (int b = 0; b < lex_bits; ++b) x[size_t(ans_lex + b)] = code[size_t(b)];
  };

  if (name == "<null>") {
    set_type(tt_ans);
    return x;
  }
  if (name == "<eoa>") {
    set_type(tt_ans);
    return x;
  }
  if (name == "<bos>") {
    set_type(tt_sink);
    return x;
  }
  if (int aidx = answer_index(name); aidx >= 0) {
    set_type(tt_ans);
    put_lex(aidx);
    return x;
  }

  auto parts = split_name(name);
  const std::string& head = parts[0];

  if (head == "w") {  // decorative question word
    set_type(tt_question);
    return x;
  }

  if (head == "s" || head == "ms") {  // grid cell, possibly masked
    set_type(tt_scene);
    int r = 0, c = 0;
    if (parts.size() < 2 || !parse_cell(parts[1], r, c)) throw usage_error("bad cell: " + name);
    x[size_t(row + r)] = 1.0;
    x[size_t(col + c)] = 1.0;
    size_t i = 2;
    if (head == "s" && i < parts.size() && index_in(kinds(), parts[i]) >= 0)
      x[size_t(obj_id + index_in(kinds(), parts[i++]))] = 1.0;
    else if (head == "ms" && i < parts.size() && index_in(colors(), parts[i]) >= 0) {
      // masked cells keep attributes but drop identity
    }
    if (i < parts.size() && index_in(colors(), parts[i]) >= 0)
      x[size_t(color + index_in(colors(), parts[i++]))] = 1.0;
    if (i < parts.size() && index_in(sizes(), parts[i]) >= 0)
      x[size_t(size + index_in(sizes(), parts[i++]))] = 1.0;
    if (i < parts.size() && index_in(orients(), parts[i]) >= 0)
      x[size_t(orient + index_in(orients(), parts[i++]))] = 1.0;
    if (i < parts.size() && parts[i] == "m") {
      x[match_flag] = 1.0;
      ++i;
    }
    if (i != parts.size()) throw usage_error("bad scene token: " + name);
    return x;
  }

  if (head == "fact") {  // fact_k{i}_v{j}
    set_type(tt_fact);
    int key = index_in(fact_keys(), parts.at(1));
    int val = parts.at(2).size() == 2 && parts[2][0] == 'v' ? parts[2][1] - '0' : -1;
    if (key < 0 || val < 0 || val >= n_vals) throw usage_error("bad fact token: " + name);
    x[size_t(fact_key + key)] = 1.0;
    x[size_t(know_pay + val)] = 1.0;
    return x;
  }

  if (head == "bbox") {  // location marker: boosted identity plus position and pose
    set_type(tt_question);
    int kind = index_in(kinds(), parts.at(1));
    int ori = index_in(orients(), parts.at(3));
    int r = 0, c = 0;
    if (kind < 0 || ori < 0 || !parse_cell(parts.at(2), r, c))
      throw usage_error("bad bbox token: " + name);
    x[size_t(obj_id + kind)] = bbox_id_boost;
    x[size_t(row + r)] = 1.0;
    x[size_t(col + c)] = 1.0;
    x[size_t(orient + ori)] = 1.0;
    return x;
  }

  if (head.rfind("step", 0) == 0 && head.size() == 5) {
    set_type(tt_marker);
    return x;
  }

  if (head.rfind("ctx", 0) == 0 && head.size() == 4) {  // ctx{j}_{answer}
    set_type(tt_ctxans);
    int step = head[3] - '0';
    if (step < 0 || step >= n_steps || parts.size() < 2) throw usage_error("bad ctx token: " + name);
    std::string word = name.substr(head.size() + 1);
    int aidx = answer_index(word);
    if (aidx < 0) throw usage_error("bad ctx answer: " + name);
    x[size_t(ans_step + step)] = 1.0;
    put_lex(aidx);
    int lane = step % 2 == 0 ? lane_a : lane_b;
    const auto& a = answers()[size_t(aidx)];
    if (a.dir >= 0) {
      x[size_t(lane + ls_ax)] = dir_axis(a.dir).x;
      x[size_t(lane + ls_ay)] = dir_axis(a.dir).y;
    }
    if (a.size_sign != 0) x[size_t(lane + ls_size)] = a.size_sign;
    if (a.ord >= 0) x[size_t(lane + ls_ord)] = ord_scale * a.ord;
    if (a.yesno != 0) x[size_t(lane + ls_yesno)] = a.yesno;
    x[size_t(lane + ls_valid)] = 1.0;
    return x;
  }

  if (head == "ask") {
    set_type(tt_astart);
    const std::string& kind2 = parts.at(1);
    auto step_of = [&](const std::string& p) {
      if (p.size() != 2 || p[0] != 's' || p[1] < '0' || p[1] >= char('0' + n_steps))
        throw usage_error("bad step arg: " + name);
      return p[1] - '0';
    };
    if (kind2 == "color" || kind2 == "size") {
      int r = 0, c = 0;
      if (!parse_cell(parts.at(2), r, c)) throw usage_error("bad ask cell: " + name);
      x[size_t(intent_flag(kind2 == "color" ? i_color : i_size))] = 1.0;
      x[size_t(arg_cell + r)] = 1.0;
      x[size_t(arg_cell + grid_n + c)] = 1.0;
    } else if (kind2 == "ww" || kind2 == "wwc") {
      int k = index_in(kinds(), parts.at(2));
      if (k < 0) throw usage_error("bad ask kind: " + name);
      x[size_t(intent_flag(i_whichway))] = 1.0;
      x[size_t(arg_objb + k)] = 1.0;
      if (kind2 == "wwc") {
        // the located cell rides along on the content channels, where the
        // identity lookup keys, so this ask also names the cell's occupant
        int r = 0, c = 0;
        if (!parse_cell(parts.at(3), r, c)) throw usage_error("bad ask cell: " + name);
        x[size_t(row + r)] = 1.0;
        x[size_t(col + c)] = 1.0;
      }
    } else if (kind2 == "what") {
      int r = 0, c = 0;
      if (!parse_cell(parts.at(2), r, c)) throw usage_error("bad ask cell: " + name);
      x[size_t(intent_flag(i_whatat))] = 1.0;
      x[size_t(row + r)] = 1.0;
      x[size_t(col + c)] = 1.0;
    } else if (kind2 == "reldir" || kind2 == "rdc") {
      int k = index_in(kinds(), parts.at(2));
      int r = 0, c = 0;
      if (k < 0 || !parse_cell(parts.at(3), r, c)) throw usage_error("bad ask args: " + name);
      x[size_t(intent_flag(i_reldir))] = 1.0;
      x[size_t(arg_obja + k)] = 1.0;
      // reference cell at half strength: enough for the direction comparison's
      // doubled weights, too faint to win the attribute lookup's key race
      x[size_t(arg_cell + r)] = 0.5;
      x[size_t(arg_cell + grid_n + c)] = 0.5;
      if (kind2 == "rdc") {
        // occupied reference: also key the identity lookup at that cell
        x[size_t(row + r)] = 1.0;
        x[size_t(col + c)] = 1.0;
      }
    } else if (kind2 == "count") {
      x[size_t(intent_flag(i_count))] = 1.0;
    } else if (kind2 == "recall") {
      int key = index_in(fact_keys(), parts.at(2));
      if (key < 0) throw usage_error("bad ask key: " + name);
      x[size_t(intent_flag(i_recall))] = 1.0;
      x[size_t(arg_key + key)] = 1.0;
    } else if (kind2 == "ext") {
      x[size_t(arg_stepx + step_of(parts.at(2)))] = 1.0;
    } else if (kind2 == "relsame") {
      x[i_rel_same] = 1.0;
      x[size_t(arg_rel + step_of(parts.at(2)))] = 1.0;
      x[size_t(arg_rel + step_of(parts.at(3)))] = 1.0;
    } else if (kind2 == "releq") {
      const std::string& t = parts.at(3);
      if (t.size() != 2 || t[0] != 't' || t[1] < '0' || t[1] > '5')
        throw usage_error("bad target: " + name);
      x[i_rel_eq] = 1.0;
      x[size_t(arg_rel + step_of(parts.at(2)))] = 1.0;
      x[arg_num] = ord_scale * (t[1] - '0');
    } else if (kind2 == "relbig") {
      x[i_rel_big] = 1.0;
      x[size_t(arg_rel + step_of(parts.at(2)))] = 1.0;
      x[size_t(arg_rel + step_of(parts.at(3)))] = 1.0;
    } else if (kind2 == "dec") {
      int s = step_of(parts.at(2));
      x[size_t(s % 2 == 0 ? i_dec_even : i_dec_odd)] = 1.0;
      x[size_t(arg_stepd + s)] = 1.0;
    } else {
      throw usage_error("unknown ask token: " + name);
    }
    return x;
  }

  throw usage_error("unknown token: " + name);
}

// --- vocabulary --------------------------------------------------------------

struct vocab {
  std::vector<std::string> names;
  std::map<std::string, int> ids;
  std::vector<std::vector<double>> emb;  // [vocab][chan::dim]

  int id(const std::string& name) const {
    auto it = ids.find(name);
    if (it == ids.end()) throw data_error("token not in vocabulary: " + name);
    return it->second;
  }
  int size() const { return int(names.size()); }
};

inline const std::vector<std::string>& question_words() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> w = {"what",  "color", "size",  "is",   "the",   "at",    "which",
                                  "way",   "facing", "where", "rel",  "to",    "how",   "many",
                                  "there", "a",      "does",  "answer", "step", "equal", "value",
                                  "of",    "fact",   "bigger", "than", "object", "count", "same",
                                  "as",
                                  "was",   "toward", "decide", "are",  "things", "exactly", "so",
                                  "claim", "true",   "first",  "second", "thing", "opposite",
                                  "direction", "main", "relative"};
    for (const auto& s : kinds()) w.push_back(s);
    for (const auto& s : colors()) w.push_back(s);
    for (int r = 0; r < chan::grid_n; ++r) w.push_back("row" + std::to_string(r));
    for (int c = 0; c < chan::grid_n; ++c) w.push_back("col" + std::to_string(c));
    for (const auto& s : fact_keys()) w.push_back(s);
    for (const auto& s : fact_vals()) w.push_back(s);
    for (int s = 0; s < chan::n_steps; ++s) w.push_back("s" + std::to_string(s));
    for (int t = 0; t <= 5; ++t) w.push_back("t" + std::to_string(t));
    for (const auto& s : orients()) w.push_back(s);
    for (const auto& s : sizes()) w.push_back(s);
    return w;
  }();
  return v;
}

// full fixed vocabulary; enumeration order defines token ids
inline vocab build_vocab() {
  vocab v;
  auto add = [&](const std::string& name) {
    if (v.ids.count(name)) return;
    v.ids[name] = int(v.names.size());
    v.names.push_back(name);
  };
  add("<null>");  // id 0: graceful no-answer; wins all ties
  add("<eoa>");
  add("<bos>");
  for (const auto& a : answers()) add(a.word);
  for (const auto& w : question_words()) add(word_token(w));
  for (int s = 0; s < chan::n_steps; ++s) add(marker_token(s));
  for (int k = 0; k < chan::n_keys; ++k)
    for (int val = 0; val < chan::n_vals; ++val) add(fact_token(k, val));
  for (int s = 0; s < chan::n_steps; ++s)
    for (const auto& a : answers()) add(ctx_token(s, a.word));
  // grid cells: empty, full, masked, each with/without the match bit where it applies
  for (int r = 0; r < chan::grid_n; ++r)
    for (int c = 0; c < chan::grid_n; ++c) {
      add(scene_token(r, c, -1, 0, 0, 0, false, false));
      add(scene_token(r, c, -1, 0, 0, 0, false, true));
      for (int k = 0; k < chan::n_kinds; ++k)
        for (int colr = 0; colr < chan::n_colors; ++colr)
          for (int sz = 0; sz < chan::n_sizes; ++sz)
            for (int ori = 0; ori < chan::n_orients; ++ori)
              for (int m = 0; m < 2; ++m) add(scene_token(r, c, k, colr, sz, ori, m, false));
      for (int colr = 0; colr < chan::n_colors; ++colr)
        for (int sz = 0; sz < chan::n_sizes; ++sz)
          for (int ori = 0; ori < chan::n_orients; ++ori)
            for (int m = 0; m < 2; ++m) add(scene_token(r, c, 0, colr, sz, ori, m, true));
      for (int k = 0; k < chan::n_kinds; ++k)
        for (int ori = 0; ori < chan::n_orients; ++ori) add(bbox_token(k, r, c, ori));
    }
  for (int r = 0; r < chan::grid_n; ++r)
    for (int c = 0; c < chan::grid_n; ++c) {
      add(ask_color(r, c));
      add(ask_size(r, c));
      add(ask_whatat(r, c));
      for (int k = 0; k < chan::n_kinds; ++k) {
        add(ask_reldir(k, r, c));
        add(ask_reldir_cell(k, r, c));
        add(ask_whichway_cell(k, r, c));
      }
    }
  for (int k = 0; k < chan::n_kinds; ++k) add(ask_whichway(k));
  add(ask_count());
  for (int k = 0; k < chan::n_keys; ++k) add(ask_recall(k));
  for (int s = 0; s < chan::n_steps; ++s) {
    add(ask_extract(s));
    add(ask_decide(s));
    for (int t = 0; t <= 5; ++t) add(ask_rel_eq(s, t));
    for (int s2 = 0; s2 < chan::n_steps; ++s2)
      if (s2 != s) {
        add(ask_rel_same(s, s2));
        add(ask_rel_big(s, s2));
      }
  }
  v.emb.reserve(v.names.size());
  for (const auto& name : v.names) v.emb.push_back(embed_token(name));
  return v;
}

}  // namespace cogheads::tok
