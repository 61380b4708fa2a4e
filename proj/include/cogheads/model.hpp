#pragma once

// planted-head transformer.
//
// a small multimodal-style decoder whose attention heads are hand-wired so each
// implements one known cognitive function. heads go through the ordinary weight
// path (per-head w_q/w_k/w_v plus a w_o slice added to the residual), attention
// is softmax(q k^T / sqrt(d_h) + causal mask), and feed-forward layers are
// explicit relu unit lists. there is no special-case control flow at inference
// time: behavior is entirely in the weights, so interventions on the head
// contributions mean the same thing they would in a trained model.
//
// the attention sink: every head's query carries a constant-channel component
// matched by a key component only the start token has. a head that is not
// engaged by its argument channels puts all mass on the start token, whose
// value content is zero, so unengaged heads contribute exactly nothing. this
// makes head firing label-selective, which is what interventions measure.

#include <array>
#include <cstring>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "channels.hpp"
#include "common.hpp"
#include "tokens.hpp"

namespace cogheads {

struct model_config {
  int n_layers = 4;
  int n_heads = 8;
  int dim = chan::dim;
  int head_dim = 16;
  double score_scale = 240.0;   // raw attention score for one matched query bit
  double spatial_gain = 1.0;    // detune knob: scales spatial heads' query sharpness
  double decode_theta = 0.35;   // evidence floor of the readout gates
  int max_new = 4;              // decode budget per sub-question
  int max_seq_len = 256;
  double margin_min = 20.0;     // required post-scaling attention logit margin

  std::string canonical() const {
    char buf[224];
    std::snprintf(buf, sizeof buf,
                  "L=%d M=%d d=%d dh=%d s=%.6g g=%.6g th=%.6g mn=%d ml=%d mm=%.6g",
                  n_layers, n_heads, dim, head_dim, score_scale, spatial_gain, decode_theta,
                  max_new, max_seq_len, margin_min);
    return buf;
  }
};

// single-head scaled-dot-product attention over row-major n x head_dim blocks.
// mask, when given, is an additive n x n matrix (0 = keep, -inf = drop).
inline std::vector<double> attention_head_output(const std::vector<double>& queries,
                                                 const std::vector<double>& keys,
                                                 const std::vector<double>& values,
                                                 int n, int head_dim,
                                                 const std::vector<double>* mask = nullptr) {
  check(n > 0 && head_dim > 0, "attention needs a positive token count and head width");
  size_t want = size_t(n) * head_dim;
  check(queries.size() == want && keys.size() == want && values.size() == want,
        "attention query/key/value blocks must all be n x head_dim");
  if (mask)
    check(mask->size() == size_t(n) * n, "attention mask must be n x n");
  for (const auto* blk : {&queries, &keys, &values})
    for (double x : *blk)
      if (std::isnan(x)) throw numeric_error("attention input has a NaN");
  double inv = 1.0 / std::sqrt(double(head_dim));
  std::vector<double> out(want, 0.0), row(n);
  for (int i = 0; i < n; i++) {
    for (int j = 0; j < n; j++) {
      double s = 0.0;
      for (int t = 0; t < head_dim; t++) s += queries[i * head_dim + t] * keys[j * head_dim + t];
      s *= inv;
      if (mask) s += (*mask)[size_t(i) * n + j];
      row[j] = s;
    }
    double hi = row[0];
    for (int j = 1; j < n; j++) hi = std::max(hi, row[j]);
    if (!(hi > -std::numeric_limits<double>::infinity()))
      throw numeric_error("attention row is fully masked");
    double z = 0.0;
    for (int j = 0; j < n; j++) { row[j] = std::exp(row[j] - hi); z += row[j]; }
    for (int j = 0; j < n; j++) {
      double w = row[j] / z;
      if (w == 0.0) continue;
      for (int t = 0; t < head_dim; t++) out[i * head_dim + t] += w * values[j * head_dim + t];
    }
  }
  return out;
}

// one planted head: where it sits, what it matches, and what it copies
struct planted_head_spec {
  int layer = 0;
  int head = 0;
  std::string function;        // function label this head implements
  std::string query_channels;  // '+'-joined groups read at the querying position
  std::string key_channels;    // aligned groups read at candidate positions
  std::string value_channels;  // content copied from the attended position
  std::string dest_channels;   // residual channels the copy lands in
  double gain = 1.0;           // scales query sharpness; 0 would mean inert
  int match_full = 1;          // query bits matched at the intended target
  int match_partial = 0;       // worst-case bits matched at a distractor
  double score_mult = 1.0;     // per-head multiplier on the base score scale
  double sink_bits = -1.0;     // sink bias in units of S; <0 means the midpoint default
  double value_scale = 1.0;    // magnitude of the copied content
  bool partial_without_full = true;  // can a distractor match without the target present?
  bool detunable = false;      // whether the spatial detune knob scales this head
};

inline std::vector<planted_head_spec> default_head_registry() {
  auto h = [](int l, int m, const char* fn, const char* q, const char* k, const char* v,
              const char* d, int mf, int mp) {
    planted_head_spec s;
    s.layer = l;
    s.head = m;
    s.function = fn;
    s.query_channels = q;
    s.key_channels = k;
    s.value_channels = v;
    s.dest_channels = d;
    s.match_full = mf;
    s.match_partial = mp;
    return s;
  };
  std::vector<planted_head_spec> r;
  r.push_back(h(0, 0, "LowLevelVisual", "arg_cell", "row+col", "color+size", "color+size", 2, 1));
  {
    // cell -> occupant identity: keyed on the cell named by the question (riding
    // the content row/col channels, disjoint from arg_cell by construction).
    // the asked cell always exists, so no distractor can out-bid a missing target.
    auto s = h(0, 1, "HighLevelVisual", "row+col", "row+col", "obj_id", "obj_id", 2, 1);
    s.partial_without_full = false;
    r.push_back(s);
  }
  {
    // object -> location: feeds the direction comparison's object-side operand
    auto s = h(0, 2, "SpatialPerception", "arg_obja", "obj_id", "row+col", "gather_a", 1, 0);
    s.detunable = true;  // identity-keyed lookup: the path the detuned model weakens
    r.push_back(s);
  }
  {
    // object -> orientation: answers which-way questions about a named object
    auto s = h(0, 3, "SpatialPerception", "arg_objb", "obj_id", "orient", "orient", 1, 0);
    s.detunable = true;
    r.push_back(s);
  }
  r.push_back(h(0, 4, "KnowledgeRecall", "arg_key", "fact_key", "know_pay", "know_pay", 1, 0));
  r.push_back(h(0, 5, "InfoExtraction", "arg_stepx", "ans_step", "ans_lex", "ans_lex", 1, 0));
  r.push_back(h(0, 6, "MathReasoning", "intent_count", "type_scene", "match_flag+type_scene",
                "math_accum+math_fired", 1, 0));
  r.push_back(h(1, 0, "RelationalReasoning", "arg_rel", "ans_step", "lane_a+lane_b",
                "gather_a+gather_b", 1, 0));
  r.push_back(h(1, 1, "DecisionMaking", "arg_stepd", "ans_step", "lane_a+lane_b",
                "gather_a+gather_b", 1, 0));
  return r;
}

// relu feed-forward unit: h = relu(sum w*x + b); x[out] += w_out * h for each out
struct ffn_unit {
  std::vector<std::pair<int, double>> in;
  double bias = 0.0;
  std::vector<std::pair<int, double>> out;
};

namespace detail {

inline void add_lex_out(ffn_unit& u, const std::string& answer, double w = 1.0) {
  int aidx = tok::answer_index(answer);
  const auto& code = tok::lex_codes()[size_t(aidx)];
  for (int b = 0; b < chan::lex_bits; ++b)
    u.out.emplace_back(chan::ans_lex + b, w * code[size_t(b)]);
}

}  // namespace detail

// fixed piecewise-linear logic per layer; all units are intent- or
// evidence-gated so they only move channels on questions that engage them.
// decode_theta is the evidence floor of the layer-3 readout gates: staged
// answer strength is relu(evidence - theta), so weak deliveries die out.
inline std::vector<ffn_unit> build_ffn_units(int layer, double decode_theta = 0.35) {
  using namespace chan;
  std::vector<ffn_unit> us;
  if (layer == 0) {
    // count bins: cnt = 16*accum + 10*fired - 10 equals the matched-cell count
    // when the math head fired and is <= -10 otherwise. bin_k = [cnt == k] via
    // a difference of two saturating steps.
    for (int k = 0; k < count_bins; ++k) {
      const double in_acc = 32.0, in_fired = 20.0;  // 2*cnt
      const double base = -20.0 - 2.0 * k;
      const double step_bias[4] = {base + 1, base, base - 1, base - 2};
      const double out_sign[4] = {1, -1, -1, 1};
      for (int j = 0; j < 4; ++j) {
        ffn_unit u;
        u.in = {{math_accum, in_acc}, {math_fired, in_fired}};
        u.bias = step_bias[j];
        u.out = {{gather_b + k, out_sign[j]}};
        us.push_back(u);
      }
    }
    // relative direction of the asked object vs the reference cell: compares the
    // object's gathered row/col one-hots against the question's half-scale cell
    // one-hots. the object-side coefficients fold in a presence bonus so an empty
    // gather (drained or ablated lookup) keeps every unit dark instead of
    // comparing against zero. emits a one-hot direction for axis-aligned pairs;
    // downstream reads are intent-gated.
    struct dir_def {
      int slot;
      int a_base, b_base;  // object / reference one-hot ranges for the coordinate
      bool greater;        // fires when the object's coord exceeds the reference's
    };
    const dir_def defs[4] = {
        {0, gather_a, arg_cell, false},                 // up: row_obj < row_ref
        {1, gather_a, arg_cell, true},                  // down
        {2, gather_a + 4, arg_cell + grid_n, false},    // left: col_obj < col_ref
        {3, gather_a + 4, arg_cell + grid_n, true},     // right
    };
    for (const auto& dd : defs) {
      for (int j = 0; j < 2; ++j) {
        ffn_unit u;
        for (int i = 0; i < grid_n; ++i) {
          if (dd.greater) {
            u.in.emplace_back(dd.a_base + i, 2.0 * i + 3.0);
            u.in.emplace_back(dd.b_base + i, -4.0 * i);
          } else {
            u.in.emplace_back(dd.a_base + i, -2.0 * i + 5.0);
            u.in.emplace_back(dd.b_base + i, 4.0 * i);
          }
        }
        u.bias = (dd.greater ? -4.0 : -6.0) - j;
        u.out = {{dir_onehot + dd.slot, j == 0 ? 1.0 : -1.0}};
        us.push_back(u);
      }
    }
  } else if (layer == 1) {
    // same-direction: operands are two gathered direction axes (half scale from
    // the 50/50 pair gather). a gated base unit says yes when both operands are
    // valid; per-axis penalty pairs overturn it on any axis mismatch.
    {
      ffn_unit u;
      u.in = {{i_rel_same, 4.0}, {gather_a + ls_valid, 4.0}, {gather_b + ls_valid, 4.0}};
      u.bias = -7.0;
      u.out = {{yes_code, 1.0}};
      us.push_back(u);
    }
    for (int axis = 0; axis < 2; ++axis) {
      int a = gather_a + (axis == 0 ? ls_ax : ls_ay);
      int b = gather_b + (axis == 0 ? ls_ax : ls_ay);
      for (double sgn : {1.0, -1.0}) {
        ffn_unit u;
        u.in = {{a, 4.0 * sgn}, {b, -4.0 * sgn}, {i_rel_same, 4.0}};
        u.bias = -4.0;
        u.out = {{yes_code, -0.5}};
        us.push_back(u);
      }
    }
    // ordinal equality: tent over z = 4*(operand_ord - target_ord), nonzero only
    // at z = 0; gate and validity are folded into the bias so ungated or ablated
    // inputs keep every unit dark.
    {
      const double peak_bias[3] = {-15.0, -16.0, -17.0};
      const double peak_out[3] = {2.0, -4.0, 2.0};
      for (int j = 0; j < 3; ++j) {
        ffn_unit u;
        u.in = {{gather_a + ls_ord, 4.0}, {gather_b + ls_ord, 4.0}, {arg_num, -4.0},
                {gather_a + ls_valid, 8.0}, {gather_b + ls_valid, 8.0}, {i_rel_eq, 8.0}};
        u.bias = peak_bias[j];
        u.out = {{yes_code, peak_out[j]}};
        us.push_back(u);
      }
      ffn_unit w;
      w.in = {{gather_a + ls_valid, 1.0}, {gather_b + ls_valid, 1.0}, {i_rel_eq, 2.0}};
      w.bias = -2.0;
      w.out = {{yes_code, -1.0}};
      us.push_back(w);
    }
    // size comparison: clamp01 of 2*(size_a - size_b) from the half-scale pair
    {
      const double cl_bias[2] = {-8.0, -9.0};
      const double cl_out[2] = {2.0, -2.0};
      for (int j = 0; j < 2; ++j) {
        ffn_unit u;
        u.in = {{gather_a + ls_size, 2.0}, {gather_b + ls_size, -2.0},
                {gather_a + ls_valid, 4.0}, {gather_b + ls_valid, 4.0}, {i_rel_big, 4.0}};
        u.bias = cl_bias[j];
        u.out = {{yes_code, cl_out[j]}};
        us.push_back(u);
      }
      ffn_unit w;
      w.in = {{gather_a + ls_valid, 1.0}, {gather_b + ls_valid, 1.0}, {i_rel_big, 2.0}};
      w.bias = -2.0;
      w.out = {{yes_code, -1.0}};
      us.push_back(w);
    }
  } else if (layer == 3) {
    // readout staging: each unit moves the +/-1 lexical code of one candidate
    // answer into the staging range, gated by the question intent. evidence
    // lives in head-written channels, so epsilon-scaled heads starve the gates
    // and the null answer wins by default.
    auto gated = [&](int value_chan, intent_id gate, const std::string& answer) {
      ffn_unit u;
      u.in = {{value_chan, 1.0}, {intent_flag(gate), 2.0}};
      u.bias = -2.0 - decode_theta;
      detail::add_lex_out(u, answer);
      us.push_back(u);
    };
    for (int c = 0; c < n_colors; ++c) gated(color + c, i_color, tok::colors()[size_t(c)]);
    for (int s = 0; s < n_sizes; ++s) gated(size + s, i_size, tok::sizes()[size_t(s)]);
    for (int k = 0; k < n_kinds; ++k) gated(obj_id + k, i_whatat, tok::kinds()[size_t(k)]);
    for (int o = 0; o < n_orients; ++o) gated(orient + o, i_whichway, tok::orients()[size_t(o)]);
    for (int d = 0; d < n_orients; ++d) gated(dir_onehot + d, i_reldir, tok::orients()[size_t(d)]);
    for (int k = 0; k < count_bins; ++k) gated(gather_b + k, i_count, tok::digits()[size_t(k)]);
    for (int j = 0; j < n_vals; ++j) gated(know_pay + j, i_recall, tok::fact_vals()[size_t(j)]);
    for (double sgn : {1.0, -1.0}) {  // polar answers ride the signed evidence code
      ffn_unit u;
      u.in = {{yes_code, sgn}};
      detail::add_lex_out(u, sgn > 0 ? "yes" : "no");
      us.push_back(u);
    }
    for (int parity = 0; parity < 2; ++parity) {  // decision over a judged step's verdict
      int src = (parity == 0 ? gather_a : gather_b) + ls_yesno;
      int gate = parity == 0 ? i_dec_even : i_dec_odd;
      for (double sgn : {1.0, -1.0}) {
        ffn_unit u;
        u.in = {{src, sgn}, {gate, 2.0}};
        u.bias = -2.0 - decode_theta;
        detail::add_lex_out(u, sgn > 0 ? "true" : "false");
        us.push_back(u);
      }
    }
  }
  return us;  // layer 2 has no logic: it and its heads are deliberately inert
}

// per-head hook: contribution <- scale * contribution + shift
struct head_hook {
  int layer = 0;
  int head = 0;
  double scale = 1.0;
  std::vector<double> shift;  // empty or dim-sized
};

struct trace_opts {
  bool attn_maps = false;
  bool contribs = false;
  bool residuals = false;
  bool full_logits = false;  // otherwise logits for the last position only
};

struct forward_trace {
  int n = 0;
  int vocab_n = 0;
  std::vector<double> logits;               // [n or 1][vocab_n] row-major
  std::vector<std::vector<double>> attn;     // [L*M] each n*n (if requested)
  std::vector<std::vector<double>> contrib;  // [L*M] each n*dim post-hook (if requested)
  std::vector<std::vector<double>> resid;    // [L+1] each n*dim (if requested)

  double logit_at(int pos, int tok_id, int n_rows) const {
    int row = n_rows == n ? pos : 0;
    return logits[size_t(row) * size_t(vocab_n) + size_t(tok_id)];
  }
};

// per emitted token: the planted-stream snapshot at the position that predicted it
struct step_capture {
  std::vector<float> contrib;  // [L*M*dim] post-hook head contributions
  std::vector<float> resid;    // [L*dim] post-layer residual rows
};

struct generation {
  std::vector<int> ids;  // emitted tokens, including the end marker if reached
  bool ended = false;    // end marker reached within budget

  std::vector<int> payload(int eoa_id) const {
    std::vector<int> p;
    for (int t : ids) {
      if (t == eoa_id) break;
      p.push_back(t);
    }
    return p;
  }
};

class model {
 public:
  model_config cfg;
  tok::vocab vb;
  std::vector<planted_head_spec> registry;
  // dense per-head weights [L*M], each dim x head_dim (w_o is head_dim x dim)
  std::vector<std::vector<double>> w_q, w_k, w_v, w_o;
  // derived sparsity views of the same weights (pure speed, same arithmetic):
  // heads with all-zero w_v contribute exactly zero and can skip the math
  std::vector<char> v_active;
  std::vector<std::vector<std::tuple<int, int, double>>> o_entries;  // (vdim, chan, w)
  std::vector<std::vector<ffn_unit>> ffn;  // [L]
  std::vector<std::tuple<int, int, double>> unembed;  // (channel, token, weight)
  int eoa_id = 0, null_id = 0;

  int head_index(int layer, int head) const { return layer * cfg.n_heads + head; }

  const planted_head_spec* planted_at(int layer, int head) const {
    for (const auto& s : registry)
      if (s.layer == layer && s.head == head) return &s;
    return nullptr;
  }

  uint64_t content_hash() const {
    uint64_t h = fnv1a(cfg.canonical());
    for (const auto& s : registry) {
      h = fnv1a(s.function, h);
      h = fnv1a(s.query_channels + "|" + s.key_channels + "|" + s.value_channels + "|" +
                    s.dest_channels,
                h);
      h = fnv1a(&s.gain, sizeof s.gain, h);
    }
    for (const auto& w : {&w_q, &w_k, &w_v, &w_o})
      for (const auto& m : *w) h = fnv1a(m.data(), m.size() * sizeof(double), h);
    return h;
  }

  forward_trace forward(const std::vector<int>& tokens, const std::vector<head_hook>& hooks = {},
                        const trace_opts& opts = {}) const {
    const int n = int(tokens.size()), d = cfg.dim, dh = cfg.head_dim;
    const int lm = cfg.n_layers * cfg.n_heads;
    check(n >= 1, "forward needs at least one token");
    if (n > cfg.max_seq_len) throw data_error("sequence too long: " + std::to_string(n) +
                                              " tokens, limit " + std::to_string(cfg.max_seq_len));

    // aggregate hooks per head slot
    std::vector<double> hscale(size_t(lm), 1.0);
    std::vector<std::vector<double>> hshift(static_cast<size_t>(lm));
    for (const auto& hk : hooks) {
      check(hk.layer >= 0 && hk.layer < cfg.n_layers && hk.head >= 0 && hk.head < cfg.n_heads,
            "hook head out of range");
      check(hk.shift.empty() || int(hk.shift.size()) == d, "hook shift length");
      int idx = head_index(hk.layer, hk.head);
      hscale[size_t(idx)] *= hk.scale;
      if (!hk.shift.empty()) {
        auto& sh = hshift[size_t(idx)];
        sh.resize(size_t(d), 0.0);
        for (int i = 0; i < d; ++i) sh[size_t(i)] += hk.shift[size_t(i)];
      }
    }

    forward_trace tr;
    tr.n = n;
    tr.vocab_n = vb.size();
    if (opts.attn_maps) tr.attn.assign(size_t(lm), {});
    if (opts.contribs) tr.contrib.assign(size_t(lm), {});

    std::vector<double> x(size_t(n) * size_t(d));
    for (int p = 0; p < n; ++p) {
      int t = tokens[size_t(p)];
      check(t >= 0 && t < vb.size(), "token id out of range");
      std::memcpy(&x[size_t(p) * size_t(d)], vb.emb[size_t(t)].data(), sizeof(double) * size_t(d));
    }
    if (opts.residuals) {
      tr.resid.assign(size_t(cfg.n_layers) + 1, {});
      tr.resid[0] = x;
    }

    const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
    std::vector<double> q(size_t(n) * size_t(dh)), k(q), v(q), scores(static_cast<size_t>(n));
    std::vector<double> layer_add(size_t(n) * size_t(d));

    for (int l = 0; l < cfg.n_layers; ++l) {
      std::fill(layer_add.begin(), layer_add.end(), 0.0);
      for (int m = 0; m < cfg.n_heads; ++m) {
        int hi = head_index(l, m);
        double sc = hscale[size_t(hi)];
        const auto& sh = hshift[size_t(hi)];
        std::vector<double>* amap = opts.attn_maps ? &tr.attn[size_t(hi)] : nullptr;
        std::vector<double>* cmap = opts.contribs ? &tr.contrib[size_t(hi)] : nullptr;
        if (cmap) cmap->assign(size_t(n) * size_t(d), 0.0);
        // a head whose value projection is all-zero contributes scale*0 + shift
        // exactly; skip its attention math unless the map itself was asked for
        if (!v_active[size_t(hi)] && !amap) {
          if (!sh.empty()) {
            for (int p = 0; p < n; ++p) {
              double* add = &layer_add[size_t(p) * size_t(d)];
              double* cm = cmap ? &(*cmap)[size_t(p) * size_t(d)] : nullptr;
              for (int i = 0; i < d; ++i) {
                add[i] += sh[size_t(i)];
                if (cm) cm[i] += sh[size_t(i)];
              }
            }
          }
          continue;
        }
        const auto &wq = w_q[size_t(hi)], &wk = w_k[size_t(hi)], &wv = w_v[size_t(hi)];
        const auto& oe = o_entries[size_t(hi)];
        // projections; token embeddings and residuals stay sparse, so skip zeros
        for (int p = 0; p < n; ++p) {
          const double* xp = &x[size_t(p) * size_t(d)];
          for (int t = 0; t < dh; ++t) {
            double sq = 0, sk = 0, sv = 0;
            for (int i = 0; i < d; ++i) {
              double xv = xp[i];
              if (xv != 0.0) {
                sq += xv * wq[size_t(i) * size_t(dh) + size_t(t)];
                sk += xv * wk[size_t(i) * size_t(dh) + size_t(t)];
                sv += xv * wv[size_t(i) * size_t(dh) + size_t(t)];
              }
            }
            q[size_t(p) * size_t(dh) + size_t(t)] = sq;
            k[size_t(p) * size_t(dh) + size_t(t)] = sk;
            v[size_t(p) * size_t(dh) + size_t(t)] = sv;
          }
        }
        if (amap) amap->assign(size_t(n) * size_t(n), 0.0);
        for (int p = 0; p < n; ++p) {
          scores.assign(size_t(p) + 1, 0.0);
          // causal: only positions <= p; later positions get the mask sentinel,
          // equivalent to dropping them from the softmax entirely
          for (int j = 0; j <= p; ++j) {
            double s = 0;
            for (int t = 0; t < dh; ++t)
              s += q[size_t(p) * size_t(dh) + size_t(t)] * k[size_t(j) * size_t(dh) + size_t(t)];
            scores[size_t(j)] = s * inv_sqrt_dh;
          }
          softmax_inplace(scores);
          if (amap)
            for (int j = 0; j <= p; ++j) (*amap)[size_t(p) * size_t(n) + size_t(j)] = scores[size_t(j)];
          double* add = &layer_add[size_t(p) * size_t(d)];
          double* cm = cmap ? &(*cmap)[size_t(p) * size_t(d)] : nullptr;
          if (!sh.empty()) {
            for (int i = 0; i < d; ++i) {
              add[i] += sh[size_t(i)];
              if (cm) cm[i] += sh[size_t(i)];
            }
          }
          if (oe.empty()) continue;
          // weighted value, then through the (sparse) output projection
          double ctx[64];
          for (int t = 0; t < dh; ++t) {
            double s = 0;
            for (int j = 0; j <= p; ++j) s += scores[size_t(j)] * v[size_t(j) * size_t(dh) + size_t(t)];
            ctx[t] = s;
          }
          for (const auto& [t, ci, w] : oe) {
            double o = ctx[t] * w * sc;
            add[ci] += o;
            if (cm) cm[ci] += o;
          }
        }
      }
      for (size_t i = 0; i < x.size(); ++i) x[i] += layer_add[i];
      // feed-forward: all units read the post-attention stream, then write
      const auto& units = ffn[size_t(l)];
      if (!units.empty()) {
        std::vector<double> h(units.size());
        for (int p = 0; p < n; ++p) {
          double* xp = &x[size_t(p) * size_t(d)];
          for (size_t u = 0; u < units.size(); ++u) {
            double s = units[u].bias;
            for (const auto& [i, w] : units[u].in) s += w * xp[i];
            h[u] = relu(s);
          }
          for (size_t u = 0; u < units.size(); ++u)
            if (h[u] != 0.0)
              for (const auto& [i, w] : units[u].out) xp[i] += w * h[u];
        }
      }
      if (opts.residuals) tr.resid[size_t(l) + 1] = x;
    }

    // unembedding is sparse: only staging, answer-type, and constant channels
    // carry output weight
    int rows = opts.full_logits ? n : 1;
    tr.logits.assign(size_t(rows) * size_t(vb.size()), 0.0);
    for (int r = 0; r < rows; ++r) {
      int p = opts.full_logits ? r : n - 1;
      const double* xp = &x[size_t(p) * size_t(d)];
      double* lp = &tr.logits[size_t(r) * size_t(vb.size())];
      for (const auto& [ci, ti, w] : unembed) lp[ti] += w * xp[ci];
    }
    for (double v2 : tr.logits)
      if (!finite(v2)) throw numeric_error("non-finite logit in forward pass");
    return tr;
  }

  // greedy decode; ties break toward the lowest token id (the null answer)
  int argmax_last(const forward_trace& tr) const {
    const double* lp = &tr.logits[tr.logits.size() - size_t(vb.size())];
    int best = 0;
    for (int t = 1; t < vb.size(); ++t)
      if (lp[t] > lp[best]) best = t;
    return best;
  }

  generation generate(const std::vector<int>& tokens, const std::vector<head_hook>& hooks = {},
                      int max_new = -1, std::vector<step_capture>* caps = nullptr) const {
    if (max_new < 0) max_new = cfg.max_new;
    generation g;
    std::vector<int> seq = tokens;
    trace_opts opts;
    opts.contribs = caps != nullptr;
    opts.residuals = caps != nullptr;
    for (int s = 0; s < max_new; ++s) {
      forward_trace tr = forward(seq, hooks, opts);
      int nxt = argmax_last(tr);
      if (caps) {
        step_capture cap;
        const int d = cfg.dim, lm = cfg.n_layers * cfg.n_heads, p = int(seq.size()) - 1;
        cap.contrib.resize(size_t(lm) * size_t(d));
        for (int hi = 0; hi < lm; ++hi)
          for (int i = 0; i < d; ++i)
            cap.contrib[size_t(hi) * size_t(d) + size_t(i)] =
                float(tr.contrib[size_t(hi)][size_t(p) * size_t(d) + size_t(i)]);
        cap.resid.resize(size_t(cfg.n_layers) * size_t(d));
        for (int l = 0; l < cfg.n_layers; ++l)
          for (int i = 0; i < d; ++i)
            cap.resid[size_t(l) * size_t(d) + size_t(i)] =
                float(tr.resid[size_t(l) + 1][size_t(p) * size_t(d) + size_t(i)]);
        caps->push_back(std::move(cap));
      }
      g.ids.push_back(nxt);
      seq.push_back(nxt);
      if (nxt == eoa_id) {
        g.ended = true;
        break;
      }
    }
    return g;
  }
};

// wire a planted head's weights from its channel spec
inline void plant_head(model& md, const planted_head_spec& s) {
  if (s.gain <= 0.0) return;  // gain 0 marks the head fully inert: leave its weights zero
  const int d = md.cfg.dim, dh = md.cfg.head_dim;
  auto qs = chan::group_list(s.query_channels);
  auto ks = chan::group_list(s.key_channels);
  auto vs = chan::group_list(s.value_channels);
  auto ds = chan::group_list(s.dest_channels);
  check(qs.size() == ks.size(), "query/key channel count mismatch for " + s.function);
  check(vs.size() == ds.size(), "value/dest channel count mismatch for " + s.function);
  check(int(qs.size()) + 1 <= dh, "too many query channels for " + s.function);
  check(int(vs.size()) <= dh, "too many value channels for " + s.function);

  const double S = md.cfg.score_scale * s.score_mult;
  const double sink =
      s.sink_bits >= 0.0 ? md.cfg.score_scale * s.sink_bits
                         : S * 0.5 * double(s.match_full + s.match_partial);
  if (s.gain >= 0.999) {  // margin guarantees only claimed at full sharpness
    double sd = std::sqrt(double(dh));
    check((S * s.match_full - sink) / sd >= md.cfg.margin_min,
          "match does not beat sink for " + s.function);
    if (s.partial_without_full)
      check((sink - S * s.match_partial) / sd >= md.cfg.margin_min,
            "sink does not beat distractors for " + s.function);
    else
      check((S * s.match_full - S * s.match_partial) / sd >= md.cfg.margin_min,
            "match does not beat distractors for " + s.function);
    check(sink / sd >= md.cfg.margin_min, "sink bias too small for " + s.function);
  }

  int hi = md.head_index(s.layer, s.head);
  auto &wq = md.w_q[size_t(hi)], &wk = md.w_k[size_t(hi)], &wv = md.w_v[size_t(hi)],
       &wo = md.w_o[size_t(hi)];
  double root = std::sqrt(S);
  for (size_t i = 0; i < qs.size(); ++i) {
    wq[size_t(qs[i]) * size_t(dh) + i] = root * s.gain;
    wk[size_t(ks[i]) * size_t(dh) + i] = root;
  }
  int sink_dim = int(qs.size());
  double sroot = std::sqrt(sink);
  // the sink row is deliberately not scaled by gain: a weakened query loses the
  // race to the sink and the head drains clean instead of going uniform
  wq[size_t(chan::k_const) * size_t(dh) + size_t(sink_dim)] = sroot;
  wk[size_t(chan::type_flag(chan::tt_sink)) * size_t(dh) + size_t(sink_dim)] = sroot;
  for (size_t i = 0; i < vs.size(); ++i) {
    wv[size_t(vs[i]) * size_t(dh) + i] = s.value_scale;
    wo[i * size_t(d) + size_t(ds[i])] = 1.0;
  }
}

inline model build_model(const model_config& cfg = {},
                         std::vector<planted_head_spec> registry = default_head_registry()) {
  check(cfg.dim == chan::dim, "channel map requires dim 128");
  check(cfg.head_dim >= 2 && cfg.head_dim <= 64, "head_dim out of range");
  check(cfg.dim == cfg.n_heads * cfg.head_dim, "dim must equal n_heads * head_dim");
  model md;
  md.cfg = cfg;
  md.vb = tok::build_vocab();
  const int lm = cfg.n_layers * cfg.n_heads;
  const size_t wsz = size_t(cfg.dim) * size_t(cfg.head_dim);
  md.w_q.assign(size_t(lm), std::vector<double>(wsz, 0.0));
  md.w_k.assign(size_t(lm), std::vector<double>(wsz, 0.0));
  md.w_v.assign(size_t(lm), std::vector<double>(wsz, 0.0));
  md.w_o.assign(size_t(lm), std::vector<double>(wsz, 0.0));
  std::vector<char> seen(size_t(lm), 0);
  for (auto& s : registry) {
    check(s.layer >= 0 && s.layer < cfg.n_layers && s.head >= 0 && s.head < cfg.n_heads,
          "planted head out of range");
    char& slot = seen[size_t(md.head_index(s.layer, s.head))];
    check(!slot, "duplicate planted head at layer " + std::to_string(s.layer) + " head " +
                     std::to_string(s.head));
    slot = 1;
    function_index(s.function);  // validates the label
    if (s.detunable) s.gain *= cfg.spatial_gain;
    plant_head(md, s);
  }
  md.registry = std::move(registry);
  // derived sparsity views: scan the actual weights so the fast paths stay
  // faithful no matter how the matrices were produced
  md.v_active.assign(size_t(lm), 0);
  md.o_entries.assign(size_t(lm), {});
  for (int hi = 0; hi < lm; ++hi) {
    for (double w : md.w_v[size_t(hi)])
      if (w != 0.0) {
        md.v_active[size_t(hi)] = 1;
        break;
      }
    for (int t = 0; t < cfg.head_dim; ++t)
      for (int i = 0; i < cfg.dim; ++i) {
        double w = md.w_o[size_t(hi)][size_t(t) * size_t(cfg.dim) + size_t(i)];
        if (w != 0.0) md.o_entries[size_t(hi)].emplace_back(t, i, w);
      }
  }
  md.ffn.resize(size_t(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) md.ffn[size_t(l)] = build_ffn_units(l, cfg.decode_theta);
  for (const auto& u : md.ffn)
    for (const auto& un : u)
      for (const auto& [i, w] : un.in) check(i >= 0 && i < cfg.dim, "ffn input channel range");

  md.eoa_id = md.vb.id("<eoa>");
  md.null_id = md.vb.id("<null>");
  // unembedding: staging code match + end-marker trigger + null baseline.
  // the null row is what makes epsilon-ablation break answers instead of
  // leaving a rescaled argmax: starved staging loses to the constant 0.5.
  for (int a = 0; a < int(tok::answers().size()); ++a) {
    int tid = md.vb.id(tok::answers()[size_t(a)].word);
    const auto& code = tok::lex_codes()[size_t(a)];
    for (int b = 0; b < chan::lex_bits; ++b)
      md.unembed.emplace_back(chan::ans_lex + b, tid, code[size_t(b)]);
  }
  md.unembed.emplace_back(chan::type_flag(chan::tt_ans), md.eoa_id, 100.0);
  md.unembed.emplace_back(chan::k_const, md.null_id, 0.5);
  return md;
}

}  // namespace cogheads
