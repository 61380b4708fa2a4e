#pragma once

// multilabel probe over head features.
//
// architecture: one shared linear projection maps every head slot's feature
// to proj_dim, the projections are concatenated, a relu hidden layer with
// dropout follows, and 8 sigmoid outputs give per-function scores trained
// with binary cross-entropy and adaptive-moment updates.
//
// the output layer starts at zero so an untrained probe scores exactly 0.5
// everywhere and has an exactly zero importance matrix; the other layers use
// symmetric uniform init scaled by fan-in. all randomness (init, shuffling,
// dropout) comes from the fixed engine, so training is bit-reproducible.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "trace.hpp"

namespace cogheads::probe {

struct probe_config {
  int proj_dim = 64;
  int hidden_dim = 512;
  double lr = 1e-4;
  int epochs = 100;
  int batch_size = 32;
  double dropout = 0.3;
  uint64_t seed = 0;

  std::string canonical() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "p=%d h=%d lr=%.6g e=%d b=%d do=%.6g s=%llu", proj_dim,
                  hidden_dim, lr, epochs, batch_size, dropout, (unsigned long long)seed);
    return buf;
  }
};

struct probe_model {
  int n_slots = 0;    // head positions (layers * heads)
  int feat_dim = 0;   // per-slot feature width
  int proj_dim = 0, hidden_dim = 0, n_out = 0;
  Eigen::MatrixXd wp, w1, w2;
  Eigen::VectorXd bp, b1, b2;
  uint64_t seed = 0;
  uint64_t config_hash = 0;
};

namespace detail {

inline void fill_uniform(Eigen::MatrixXd& m, double bound, rng_t& rng) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = (2.0 * rand_unit(rng) - 1.0) * bound;
}

// gather the dataset into a (feat_dim x n*slots) column block, sample-major
inline Eigen::MatrixXd feature_block(const trace::probe_dataset& ds, int n_slots, int feat_dim) {
  Eigen::MatrixXd f(feat_dim, Eigen::Index(ds.samples.size()) * n_slots);
  for (size_t s = 0; s < ds.samples.size(); ++s) {
    const auto& sm = ds.samples[s];
    check(int(sm.feat.size()) == n_slots * feat_dim, "sample feature extent mismatch");
    for (int j = 0; j < n_slots; ++j)
      for (int i = 0; i < feat_dim; ++i)
        f(i, Eigen::Index(s) * n_slots + j) = double(sm.feat[size_t(j * feat_dim + i)]);
  }
  return f;
}

template <typename Mat>
struct adam_state {
  Mat m, v;
  explicit adam_state(const Mat& like)
      : m(Mat::Zero(like.rows(), like.cols())), v(Mat::Zero(like.rows(), like.cols())) {}
  void step(Mat& w, const Mat& g, double lr, int t) {
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

}  // namespace detail

inline probe_model init_probe(int n_slots, int feat_dim, const probe_config& cfg = {}) {
  check(n_slots > 0 && feat_dim > 0, "probe needs positive slot count and feature width");
  probe_model pm;
  pm.n_slots = n_slots;
  pm.feat_dim = feat_dim;
  pm.proj_dim = cfg.proj_dim;
  pm.hidden_dim = cfg.hidden_dim;
  pm.n_out = int(function_labels().size());
  pm.seed = cfg.seed;
  pm.config_hash = fnv1a(cfg.canonical());
  auto rng = make_rng(cfg.seed, 0x9806e);
  pm.wp.resize(cfg.proj_dim, feat_dim);
  detail::fill_uniform(pm.wp, 1.0 / std::sqrt(double(feat_dim)), rng);
  pm.w1.resize(cfg.hidden_dim, Eigen::Index(cfg.proj_dim) * n_slots);
  detail::fill_uniform(pm.w1, 1.0 / std::sqrt(double(cfg.proj_dim) * n_slots), rng);
  // zero output layer: a fresh probe is exactly uninformative
  pm.w2 = Eigen::MatrixXd::Zero(pm.n_out, cfg.hidden_dim);
  pm.bp = Eigen::VectorXd::Zero(cfg.proj_dim);
  pm.b1 = Eigen::VectorXd::Zero(cfg.hidden_dim);
  pm.b2 = Eigen::VectorXd::Zero(pm.n_out);
  return pm;
}

// forward pass pieces shared by predict / importance / training
namespace detail {

// columns of fcols are the slots of one or more samples, sample-major.
// returns hidden input (proj*slots x B)
inline Eigen::MatrixXd hidden_input(const probe_model& pm, const Eigen::MatrixXd& fcols, int b) {
  Eigen::MatrixXd zp = (pm.wp * fcols).colwise() + pm.bp;
  return Eigen::Map<Eigen::MatrixXd>(zp.data(), Eigen::Index(pm.proj_dim) * pm.n_slots, b);
}

}  // namespace detail

inline std::vector<double> predict(const probe_model& pm, const std::vector<float>& feat) {
  check(int(feat.size()) == pm.n_slots * pm.feat_dim, "feature extent mismatch");
  Eigen::MatrixXd f(pm.feat_dim, pm.n_slots);
  for (int j = 0; j < pm.n_slots; ++j)
    for (int i = 0; i < pm.feat_dim; ++i) f(i, j) = double(feat[size_t(j * pm.feat_dim + i)]);
  Eigen::MatrixXd hin = detail::hidden_input(pm, f, 1);
  Eigen::VectorXd a1 = pm.w1 * hin.col(0) + pm.b1;
  Eigen::VectorXd h = a1.cwiseMax(0.0);
  Eigen::VectorXd x = pm.w2 * h + pm.b2;
  std::vector<double> out(size_t(pm.n_out));
  for (int c = 0; c < pm.n_out; ++c) out[size_t(c)] = 1.0 / (1.0 + std::exp(-x(c)));
  return out;
}

struct train_report {
  double final_loss = 0.0;
  int epochs_run = 0;
};

inline train_report train_probe(probe_model& pm, const trace::probe_dataset& ds,
                                const probe_config& cfg = {}) {
  if (ds.samples.empty()) throw data_error("probe training set is empty");
  const int n = int(ds.samples.size()), S = pm.n_slots, B0 = cfg.batch_size;
  check(B0 >= 1, "batch size must be at least 1");
  Eigen::MatrixXd fall = detail::feature_block(ds, S, pm.feat_dim);
  Eigen::MatrixXd yall(pm.n_out, n);
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < pm.n_out; ++c) yall(c, s) = (ds.samples[size_t(s)].labels >> c) & 1 ? 1.0 : 0.0;

  detail::adam_state<Eigen::MatrixXd> awp(pm.wp), aw1(pm.w1), aw2(pm.w2);
  detail::adam_state<Eigen::VectorXd> abp(pm.bp), ab1(pm.b1), ab2(pm.b2);
  auto rng = make_rng(cfg.seed, 0x7a31);
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[size_t(i)] = i;

  const double keep = 1.0 - cfg.dropout, inv_keep = keep > 0.0 ? 1.0 / keep : 0.0;
  train_report rep;
  int t = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_vec(order, rng);
    double esum = 0.0;
    long ecnt = 0;
    for (int at = 0; at < n; at += B0) {
      int b = std::min(B0, n - at);
      Eigen::MatrixXd f(pm.feat_dim, Eigen::Index(b) * S);
      Eigen::MatrixXd y(pm.n_out, b);
      for (int i = 0; i < b; ++i) {
        int s = order[size_t(at + i)];
        f.middleCols(Eigen::Index(i) * S, S) = fall.middleCols(Eigen::Index(s) * S, S);
        y.col(i) = yall.col(s);
      }
      Eigen::MatrixXd hin = detail::hidden_input(pm, f, b);
      Eigen::MatrixXd a1 = (pm.w1 * hin).colwise() + pm.b1;
      Eigen::MatrixXd h = a1.cwiseMax(0.0);
      Eigen::MatrixXd mask(pm.hidden_dim, b);
      if (cfg.dropout > 0.0) {
        for (Eigen::Index c = 0; c < mask.cols(); ++c)
          for (Eigen::Index r = 0; r < mask.rows(); ++r)
            mask(r, c) = rand_unit(rng) < keep ? inv_keep : 0.0;
        h = h.cwiseProduct(mask);
      }
      Eigen::MatrixXd x = (pm.w2 * h).colwise() + pm.b2;
      // stable bce and its gradient
      double loss = 0.0;
      Eigen::MatrixXd g(pm.n_out, b);
      for (int i = 0; i < b; ++i)
        for (int c = 0; c < pm.n_out; ++c) {
          double xc = x(c, i), yc = y(c, i);
          loss += std::max(xc, 0.0) - xc * yc + std::log1p(std::exp(-std::abs(xc)));
          g(c, i) = 1.0 / (1.0 + std::exp(-xc)) - yc;
        }
      loss /= double(b) * pm.n_out;
      if (!finite(loss))
        throw numeric_error("probe training diverged at epoch " + std::to_string(epoch));
      esum += loss * b;
      ecnt += b;
      g /= double(b) * pm.n_out;

      Eigen::MatrixXd dw2 = g * h.transpose();
      Eigen::VectorXd db2 = g.rowwise().sum();
      Eigen::MatrixXd dh = pm.w2.transpose() * g;
      if (cfg.dropout > 0.0) dh = dh.cwiseProduct(mask);
      Eigen::MatrixXd da1 = (a1.array() > 0.0).select(dh, 0.0);
      Eigen::MatrixXd dw1 = da1 * hin.transpose();
      Eigen::VectorXd db1 = da1.rowwise().sum();
      Eigen::MatrixXd dhin = pm.w1.transpose() * da1;
      Eigen::Map<Eigen::MatrixXd> dzp(dhin.data(), pm.proj_dim, Eigen::Index(b) * S);
      Eigen::MatrixXd dwp = dzp * f.transpose();
      Eigen::VectorXd dbp = dzp.rowwise().sum();

      ++t;
      awp.step(pm.wp, dwp, cfg.lr, t);
      aw1.step(pm.w1, dw1, cfg.lr, t);
      aw2.step(pm.w2, dw2, cfg.lr, t);
      abp.step(pm.bp, dbp, cfg.lr, t);
      ab1.step(pm.b1, db1, cfg.lr, t);
      ab2.step(pm.b2, db2, cfg.lr, t);
    }
    rep.final_loss = esum / double(ecnt);
    rep.epochs_run = epoch + 1;
  }
  return rep;
}

// fraction of samples where every class indicator (score > 0.5) matches
inline double subset_accuracy(const probe_model& pm, const trace::probe_dataset& ds) {
  if (ds.samples.empty()) throw data_error("cannot score an empty dataset");
  long hit = 0;
  for (const auto& s : ds.samples) {
    auto p = predict(pm, s.feat);
    bool all = true;
    for (int c = 0; c < pm.n_out; ++c)
      if ((p[size_t(c)] > 0.5) != bool((s.labels >> c) & 1)) { all = false; break; }
    hit += all;
  }
  return double(hit) / double(ds.samples.size());
}

inline std::vector<double> class_accuracy(const probe_model& pm, const trace::probe_dataset& ds) {
  if (ds.samples.empty()) throw data_error("cannot score an empty dataset");
  std::vector<long> hit(size_t(pm.n_out), 0);
  for (const auto& s : ds.samples) {
    auto p = predict(pm, s.feat);
    for (int c = 0; c < pm.n_out; ++c)
      hit[size_t(c)] += (p[size_t(c)] > 0.5) == bool((s.labels >> c) & 1);
  }
  std::vector<double> out(size_t(pm.n_out));
  for (int c = 0; c < pm.n_out; ++c) out[size_t(c)] = double(hit[size_t(c)]) / double(ds.samples.size());
  return out;
}

// gradient-times-activation attribution: for each class and head slot, the
// gradient of the pre-sigmoid class logit with respect to the slot's raw
// feature, times the feature, summed over its dimensions and averaged over
// the dataset. rows are classes, columns head slots.
inline std::vector<std::vector<double>> importance_matrix(const probe_model& pm,
                                                          const trace::probe_dataset& ds) {
  if (ds.samples.empty()) throw data_error("cannot attribute an empty dataset");
  std::vector<std::vector<double>> imp(size_t(pm.n_out),
                                       std::vector<double>(size_t(pm.n_slots), 0.0));
  Eigen::MatrixXd f(pm.feat_dim, pm.n_slots);
  for (const auto& s : ds.samples) {
    check(int(s.feat.size()) == pm.n_slots * pm.feat_dim, "sample feature extent mismatch");
    for (int j = 0; j < pm.n_slots; ++j)
      for (int i = 0; i < pm.feat_dim; ++i) f(i, j) = double(s.feat[size_t(j * pm.feat_dim + i)]);
    Eigen::MatrixXd hin = detail::hidden_input(pm, f, 1);
    Eigen::VectorXd a1 = pm.w1 * hin.col(0) + pm.b1;
    // one backward pass per class, batched as columns
    Eigen::MatrixXd dh = pm.w2.transpose();                       // hidden x n_out
    Eigen::MatrixXd da1 = (a1.array() > 0.0).replicate(1, pm.n_out).select(dh, 0.0);
    Eigen::MatrixXd dz = pm.w1.transpose() * da1;                 // proj*slots x n_out
    for (int j = 0; j < pm.n_slots; ++j) {
      Eigen::MatrixXd df = pm.wp.transpose() * dz.middleRows(Eigen::Index(j) * pm.proj_dim, pm.proj_dim);
      for (int c = 0; c < pm.n_out; ++c) imp[size_t(c)][size_t(j)] += df.col(c).dot(f.col(j));
    }
  }
  for (auto& row : imp)
    for (auto& v : row) v /= double(ds.samples.size());
  return imp;
}

// pick the heads before the elbow of the sorted importance curve: sort the
// row descending, draw the chord from first to last point, and cut at the
// point farthest from the chord. a flat or linear curve falls back to top-1.
inline std::vector<int> elbow_select(const std::vector<double>& row) {
  if (row.empty()) throw data_error("cannot select heads from an empty importance row");
  const int n = int(row.size());
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&row](int a, int b) { return row[size_t(a)] > row[size_t(b)]; });
  if (n <= 2) return {idx[0]};
  double s0 = row[size_t(idx[0])], sl = row[size_t(idx[size_t(n) - 1])];
  double range = s0 - sl;
  if (range <= 0.0) return {idx[0]};
  // vertical offset from the chord; the perpendicular distance divides every
  // offset by the same factor, so the argmax is identical and this form is
  // invariant under positive affine rescaling of the row
  double best = 0.0;
  int elbow = 1;
  for (int i = 1; i + 1 < n; ++i) {
    double chord = s0 + (sl - s0) * double(i) / double(n - 1);
    double off = std::abs(row[size_t(idx[size_t(i)])] - chord);
    if (off > best + 1e-15 * range) {
      best = off;
      elbow = i;
    }
  }
  if (best <= 1e-9 * range) return {idx[0]};  // curve is linear within tolerance
  return std::vector<int>(idx.begin(), idx.begin() + elbow);
}

// central-difference check of the class-logit feature gradients used by the
// attribution. returns the worst relative error over the probed coordinates.
inline double grad_check(const probe_model& pm, const std::vector<float>& feat, double h,
                         int n_checks = 16, uint64_t seed = 0) {
  if (!(h > 0.0)) throw usage_error("gradient check needs a positive step size");
  check(int(feat.size()) == pm.n_slots * pm.feat_dim, "feature extent mismatch");
  Eigen::MatrixXd f(pm.feat_dim, pm.n_slots);
  for (int j = 0; j < pm.n_slots; ++j)
    for (int i = 0; i < pm.feat_dim; ++i) f(i, j) = double(feat[size_t(j * pm.feat_dim + i)]);
  // analytic gradient, same path as importance_matrix
  Eigen::MatrixXd hin = detail::hidden_input(pm, f, 1);
  Eigen::VectorXd a1 = pm.w1 * hin.col(0) + pm.b1;
  Eigen::MatrixXd dh = pm.w2.transpose();
  Eigen::MatrixXd da1 = (a1.array() > 0.0).replicate(1, pm.n_out).select(dh, 0.0);
  Eigen::MatrixXd dz = pm.w1.transpose() * da1;
  auto eval = [&pm](const Eigen::MatrixXd& fx, int cls) {
    Eigen::MatrixXd hx = detail::hidden_input(pm, fx, 1);
    Eigen::VectorXd ax = pm.w1 * hx.col(0) + pm.b1;
    Eigen::VectorXd xx = pm.w2 * ax.cwiseMax(0.0) + pm.b2;
    return xx(cls);
  };
  auto rng = make_rng(seed, 0x6bad);
  double worst = 0.0;
  for (int it = 0; it < n_checks; ++it) {
    int c = rand_below(rng, pm.n_out);
    int j = rand_below(rng, pm.n_slots);
    int i = rand_below(rng, pm.feat_dim);
    Eigen::MatrixXd df = pm.wp.transpose() * dz.middleRows(Eigen::Index(j) * pm.proj_dim, pm.proj_dim);
    double analytic = df(i, c);
    Eigen::MatrixXd fp = f, fm = f;
    fp(i, j) += h;
    fm(i, j) -= h;
    double numeric = (eval(fp, c) - eval(fm, c)) / (2.0 * h);
    double err = std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
    worst = std::max(worst, err);
  }
  return worst;
}

// probe weight blob: "HSP1", u32 version, u32 dims, u64 seed + config hash,
// then the tensors as f64 in storage order.
inline void save_probe(const std::string& path, const probe_model& pm) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw data_error("cannot write probe blob: " + path);
  auto put = [&f](const void* p, size_t n) { f.write(static_cast<const char*>(p), std::streamsize(n)); };
  f.write("HSP1", 4);
  uint32_t v = 1, vals[5] = {uint32_t(pm.n_slots), uint32_t(pm.feat_dim), uint32_t(pm.proj_dim),
                             uint32_t(pm.hidden_dim), uint32_t(pm.n_out)};
  put(&v, 4);
  put(vals, sizeof vals);
  put(&pm.seed, 8);
  put(&pm.config_hash, 8);
  for (const Eigen::MatrixXd* m : {&pm.wp, &pm.w1, &pm.w2})
    put(m->data(), size_t(m->size()) * 8);
  for (const Eigen::VectorXd* m : {&pm.bp, &pm.b1, &pm.b2})
    put(m->data(), size_t(m->size()) * 8);
  if (!f) throw data_error("short write to probe blob: " + path);
}

inline probe_model load_probe(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open probe blob: " + path);
  auto get = [&f, &path](void* p, size_t n) {
    f.read(static_cast<char*>(p), std::streamsize(n));
    if (size_t(f.gcount()) != n) throw data_error("probe blob truncated: " + path);
  };
  char magic[4];
  get(magic, 4);
  if (std::memcmp(magic, "HSP1", 4) != 0) throw data_error("not a probe blob: " + path);
  uint32_t v, vals[5];
  get(&v, 4);
  if (v != 1) throw data_error("unsupported probe blob version");
  get(vals, sizeof vals);
  probe_model pm;
  pm.n_slots = int(vals[0]);
  pm.feat_dim = int(vals[1]);
  pm.proj_dim = int(vals[2]);
  pm.hidden_dim = int(vals[3]);
  pm.n_out = int(vals[4]);
  get(&pm.seed, 8);
  get(&pm.config_hash, 8);
  pm.wp.resize(pm.proj_dim, pm.feat_dim);
  pm.w1.resize(pm.hidden_dim, Eigen::Index(pm.proj_dim) * pm.n_slots);
  pm.w2.resize(pm.n_out, pm.hidden_dim);
  pm.bp.resize(pm.proj_dim);
  pm.b1.resize(pm.hidden_dim);
  pm.b2.resize(pm.n_out);
  for (Eigen::MatrixXd* m : {&pm.wp, &pm.w1, &pm.w2}) get(m->data(), size_t(m->size()) * 8);
  for (Eigen::VectorXd* m : {&pm.bp, &pm.b1, &pm.b2}) get(m->data(), size_t(m->size()) * 8);
  return pm;
}

}  // namespace cogheads::probe
