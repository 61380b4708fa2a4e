#pragma once

// residual-stream channel map for the planted model (d = 128)
//
// the embedding is a sparse channel code: every token sets a handful of named
// channels and planted heads / feed-forward units are wired against these names.
// some channel ranges are reused ("squatted") by question-argument codes; each
// squat is safe because the two uses never co-occur at the same position for
// the same question type.

#include <array>
#include <vector>

#include "common.hpp"

namespace cogheads::chan {

constexpr int dim = 128;

// token type flags
constexpr int k_const = 0;  // 1.0 on every token
constexpr int type_base = 1;
enum token_type {
  tt_sink = 0,      // attention-sink start token
  tt_fact,          // prepended knowledge fact
  tt_scene,         // grid cell token
  tt_marker,        // sub-question step marker
  tt_ctxans,        // earlier gold answer in context
  tt_question,      // decorative question word / bbox cue
  tt_astart,        // answer-start token carrying question intent+args
  tt_ans,           // plain answer token
  tt_count
};
constexpr int type_flag(token_type t) { return type_base + int(t); }

// scene / fact content channels
constexpr int obj_id = 9;      // [5] object kind one-hot
constexpr int n_kinds = 5;
constexpr int color = 14;      // [4]
constexpr int n_colors = 4;
constexpr int size = 18;       // [2]
constexpr int n_sizes = 2;
constexpr int orient = 20;     // [4] facing direction one-hot
constexpr int n_orients = 4;
constexpr int row = 24;        // [4] grid row one-hot
constexpr int col = 28;        // [4]
constexpr int grid_n = 4;
constexpr int match_flag = 32; // 1.0 when the cell matches the counting criterion
constexpr int fact_key = 33;   // [4]
constexpr int n_keys = 4;
constexpr int know_pay = 37;   // [5] fact value one-hot
constexpr int n_vals = 5;

// context-answer channels
constexpr int ans_step = 42;   // [4] which step this answer belongs to
constexpr int n_steps = 4;
constexpr int ans_lex = 46;    // [6] +/-1 lexical answer code; also readout staging
constexpr int lex_bits = 6;

// parity lanes: even steps publish their answer payload in lane_a, odd steps in
// lane_b, so a 50/50 two-token gather recovers both operands in order.
// lane layout: [row_val, col_val, axis_x, axis_y, size_val, ord_val, yes_no, valid]
constexpr int lane_a = 52;  // [8]
constexpr int lane_b = 60;  // [8]
constexpr int lane_w = 8;
enum lane_slot {
  ls_row = 0,
  ls_col,
  ls_ax,
  ls_ay,
  ls_size,
  ls_ord,
  ls_yesno,
  ls_valid
};

// scratch destinations for second-operand / gathered payloads
constexpr int gather_a = 68;  // [8] spatial-B row+col; relational lane-a copy
constexpr int gather_b = 76;  // [8] count bins [0..5], math accum [6], math fired [7];
                              //     relational lane-b copy
constexpr int count_bins = 6;
constexpr int math_accum = gather_b + 6;
constexpr int math_fired = gather_b + 7;

constexpr int dir_onehot = 84;  // [4] derived relative-direction one-hot (ffn output)

constexpr int yes_code = 88;    // signed yes/no evidence accumulator

// question intent flags
constexpr int intent = 89;  // [9]
enum intent_id {
  i_color = 0,
  i_size,
  i_whichway,
  i_reldir,
  i_count,
  i_recall,
  i_whatat,
  i_spare7,
  i_spare8
};
constexpr int intent_flag(intent_id i) { return intent + int(i); }

// question argument codes (set only on answer-start tokens). cell-identity
// questions ("what is at r,c") reuse the row/col content channels as their
// argument instead of arg_cell, so the attribute-lookup and identity-lookup
// heads can never fire on each other's questions.
constexpr int arg_cell = 98;    // [8] row one-hot + col one-hot
// 106..110 spare
constexpr int arg_obja = 111;   // [5] first spatial operand kind
constexpr int arg_objb = 116;   // [5] second spatial operand kind
constexpr int arg_key = 121;    // [4] fact key asked for
constexpr int i_dec_even = 125; // decide over an even step's verdict
constexpr int i_dec_odd = 126;  // decide over an odd step's verdict
// 127 holds the facing-toward gate (see below)

// squatted argument ranges (disjoint-by-question-type reuse):
constexpr int arg_stepx = lane_a + 0;  // [4] extraction: which step to repeat
constexpr int arg_rel = lane_a + 4;    // [4] relational: referenced step bits
constexpr int arg_stepd = lane_b + 0;  // [4] decision: which step to judge
constexpr int arg_num = know_pay + 0;  // scalar comparison target (ord units)
// relational subtype gates live on channels nothing else ever writes
constexpr int i_rel_eq = intent + 7;     // ordinal equality check
constexpr int i_rel_big = intent + 8;    // size comparison
constexpr int i_rel_same = 127;          // same-direction check

// scalar encodings shared by embedder and feed-forward logic
constexpr double pos_scale = 0.5;   // row_val = pos_scale * row index
constexpr double ord_scale = 0.25;  // ord_val = ord_scale * answer ordinal

struct range {
  int lo, n;
  std::vector<int> idx() const {
    std::vector<int> v(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) v[size_t(i)] = lo + i;
    return v;
  }
};

// named channel groups used by the planted-head registry
inline range group(const std::string& name) {
  if (name == "obj_id") return {obj_id, n_kinds};
  if (name == "color") return {color, n_colors};
  if (name == "size") return {size, n_sizes};
  if (name == "orient") return {orient, n_orients};
  if (name == "row") return {row, grid_n};
  if (name == "col") return {col, grid_n};
  if (name == "fact_key") return {fact_key, n_keys};
  if (name == "know_pay") return {know_pay, n_vals};
  if (name == "ans_step") return {ans_step, n_steps};
  if (name == "ans_lex") return {ans_lex, lex_bits};
  if (name == "lane_a") return {lane_a, lane_w};
  if (name == "lane_b") return {lane_b, lane_w};
  if (name == "gather_a") return {gather_a, lane_w};
  if (name == "gather_b") return {gather_b, lane_w};
  if (name == "arg_cell") return {arg_cell, 2 * grid_n};
  if (name == "arg_obja") return {arg_obja, n_kinds};
  if (name == "arg_objb") return {arg_objb, n_kinds};
  if (name == "arg_key") return {arg_key, n_keys};
  if (name == "arg_stepx") return {arg_stepx, n_steps};
  if (name == "arg_rel") return {arg_rel, n_steps};
  if (name == "arg_stepd") return {arg_stepd, n_steps};
  if (name == "match_flag") return {match_flag, 1};
  if (name == "type_scene") return {type_flag(tt_scene), 1};
  if (name == "intent_count") return {intent_flag(i_count), 1};
  if (name == "math_accum") return {math_accum, 1};
  if (name == "math_fired") return {math_fired, 1};
  throw usage_error("unknown channel group: " + name);
}

// '+'-joined group list -> flat index vector, order preserved
inline std::vector<int> group_list(const std::string& names) {
  std::vector<int> out;
  size_t pos = 0;
  while (pos <= names.size()) {
    size_t plus = names.find('+', pos);
    std::string one = names.substr(pos, plus == std::string::npos ? std::string::npos : plus - pos);
    if (!one.empty()) {
      auto r = group(one).idx();
      out.insert(out.end(), r.begin(), r.end());
    }
    if (plus == std::string::npos) break;
    pos = plus + 1;
  }
  return out;
}

}  // namespace cogheads::chan
