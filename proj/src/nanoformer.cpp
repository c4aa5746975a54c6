#include "entlab/nanoformer.hpp"

#include <algorithm>
#include <cmath>

#include "entlab/error.hpp"
#include "entlab/rng.hpp"

namespace entlab {

void ModelConfig::validate() const {
  require(n_layers >= 1, "model: n_layers must be >= 1");
  require(d_model >= 1 && n_heads >= 1 && head_dim >= 1, "model: dimensions must be positive");
  require(n_heads * head_dim == d_model, "model: n_heads * head_dim must equal d_model");
  require(mlp_hidden >= 1, "model: mlp_hidden must be >= 1");
  require(vocab_size >= 2, "model: vocab_size must be >= 2");
  require(max_seq_len >= 2, "model: max_seq_len must be >= 2");
  require(init_scale >= 0.0 && std::isfinite(init_scale), "model: init_scale must be finite and >= 0");
}

ParamLayout ParamLayout::make(const ModelConfig& cfg) {
  ParamLayout p;
  std::size_t off = 0;
  auto add = [&](std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    p.manifest.push_back({std::move(name), std::move(shape), off, n});
    const auto at = off;
    off += n;
    return at;
  };
  const int d = cfg.d_model, h = cfg.mlp_hidden;
  p.tok_emb = add("tok_emb", {cfg.vocab_size, d});
  p.pos_emb = add("pos_emb", {cfg.max_seq_len, d});
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto pre = "layer" + std::to_string(l) + ".";
    LayerLayout L{};
    L.ln1_g = add(pre + "ln1.gain", {d});
    L.ln1_b = add(pre + "ln1.offset", {d});
    L.wq = add(pre + "attn.wq", {d, d});
    L.wk = add(pre + "attn.wk", {d, d});
    L.wv = add(pre + "attn.wv", {d, d});
    L.wo = add(pre + "attn.wo", {d, d});
    L.bo = add(pre + "attn.bo", {d});
    L.ln2_g = add(pre + "ln2.gain", {d});
    L.ln2_b = add(pre + "ln2.offset", {d});
    L.w1 = add(pre + "mlp.w1", {d, h});
    L.b1 = add(pre + "mlp.b1", {h});
    L.w2 = add(pre + "mlp.w2", {h, d});
    L.b2 = add(pre + "mlp.b2", {d});
    p.layers.push_back(L);
  }
  p.lnf_g = add("lnf.gain", {d});
  p.lnf_b = add("lnf.offset", {d});
  p.unembed = add("unembed", {cfg.vocab_size, d});
  p.total = off;
  return p;
}

ModelState ModelState::initialize(const ModelConfig& cfg) {
  cfg.validate();
  ModelState m;
  m.cfg_ = cfg;
  m.layout_ = ParamLayout::make(cfg);
  m.params_.assign(m.layout_.total, 0.0f);
  Rng rng(hash64(cfg.seed, {0x696e6974ULL}));
  const double std = cfg.init_scale / std::sqrt(static_cast<double>(cfg.d_model));
  for (const auto& t : m.layout_.manifest) {
    const auto& n = t.name;
    const bool is_gain = n.ends_with(".gain");
    const bool is_zero = n.ends_with(".offset") || n.ends_with(".bo") || n.ends_with(".b1") ||
                         n.ends_with(".b2") || n == "unembed";
    for (std::size_t i = 0; i < t.size; ++i) {
      float& w = m.params_[t.offset + i];
      if (is_gain)
        w = 1.0f;
      else if (is_zero)
        w = 0.0f;
      else
        w = static_cast<float>(std * standard_normal(rng));
    }
  }
  return m;
}

ModelState ModelState::from_params(const ModelConfig& cfg, std::vector<float> params) {
  cfg.validate();
  ModelState m;
  m.cfg_ = cfg;
  m.layout_ = ParamLayout::make(cfg);
  if (params.size() != m.layout_.total) fail(ErrorCode::kFormat, "parameter count does not match model config");
  m.params_ = std::move(params);
  return m;
}

const TensorInfo& ModelState::tensor(std::string_view name) const {
  for (const auto& t : layout_.manifest)
    if (t.name == name) return t;
  fail(ErrorCode::kNotFound, "no tensor named " + std::string(name));
}

std::span<const float> ModelState::view(std::string_view name) const {
  const auto& t = tensor(name);
  return std::span<const float>(params_).subspan(t.offset, t.size);
}

std::span<float> ModelState::view(std::string_view name) {
  const auto& t = tensor(name);
  return std::span<float>(params_).subspan(t.offset, t.size);
}

std::span<const float> ModelState::unembedding_row(int token) const {
  if (token < 0 || token >= cfg_.vocab_size) fail(ErrorCode::kOutOfRange, "unembedding_row: token out of range");
  return std::span<const float>(params_).subspan(layout_.unembed + static_cast<std::size_t>(token) * cfg_.d_model,
                                                 cfg_.d_model);
}

bool ModelState::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](float x) { return std::isfinite(x); });
}

std::span<const double> ActivationRecord::residual_at(int layer, int t) const {
  return std::span<const double>(residual).subspan((static_cast<std::size_t>(layer) * length + t) * d_model, d_model);
}

std::span<const double> ActivationRecord::head_at(int layer, int head, int t) const {
  return std::span<const double>(heads).subspan(
      ((static_cast<std::size_t>(layer) * n_heads + head) * length + t) * head_dim, head_dim);
}

std::span<const double> ActivationRecord::logits_at(int t) const {
  return std::span<const double>(logits).subspan(static_cast<std::size_t>(t) * vocab, vocab);
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double u) { return 0.5 * u * (1.0 + std::erf(u * kInvSqrt2)); }
double gelu_grad(double u) { return 0.5 * (1.0 + std::erf(u * kInvSqrt2)) + u * kInvSqrt2Pi * std::exp(-0.5 * u * u); }

// Intermediate values of one sequence, kept for the backward pass.
struct LayerCache {
  std::vector<double> x_in, xhat1, rstd1, a1, q, k, v, probs, z, x_mid, xhat2, rstd2, a2, u, g;
};

struct Trace {
  int T = 0;
  std::vector<LayerCache> layers;
  std::vector<double> x_final, xhatf, rstdf, f, logits;
};

void layer_norm(const double* x, const double* gain, const double* offset, int T, int d, double* xhat, double* rstd,
                double* y) {
  for (int t = 0; t < T; ++t) {
    const double* xr = x + t * d;
    double mu = 0.0;
    for (int c = 0; c < d; ++c) mu += xr[c];
    mu /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= d;
    const double r = 1.0 / std::sqrt(var + kLnEps);
    rstd[t] = r;
    for (int c = 0; c < d; ++c) {
      const double h = (xr[c] - mu) * r;
      xhat[t * d + c] = h;
      y[t * d + c] = gain[c] * h + offset[c];
    }
  }
}

void layer_norm_backward(const double* dy, const double* xhat, const double* rstd, const double* gain, int T, int d,
                         double* dx, double* dgain, double* doffset) {
  for (int t = 0; t < T; ++t) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (int c = 0; c < d; ++c) {
      const double dxh = dy[t * d + c] * gain[c];
      mean_dxhat += dxh;
      mean_dxhat_xhat += dxh * xhat[t * d + c];
      dgain[c] += dy[t * d + c] * xhat[t * d + c];
      doffset[c] += dy[t * d + c];
    }
    mean_dxhat /= d;
    mean_dxhat_xhat /= d;
    for (int c = 0; c < d; ++c) {
      const double dxh = dy[t * d + c] * gain[c];
      dx[t * d + c] += rstd[t] * (dxh - mean_dxhat - xhat[t * d + c] * mean_dxhat_xhat);
    }
  }
}

// y[T][out] = x[T][in] * W[in][out] (+ b)
void matmul(const double* x, const double* w, const double* b, int T, int in, int out, double* y) {
  for (int t = 0; t < T; ++t) {
    double* yr = y + t * out;
    for (int o = 0; o < out; ++o) yr[o] = b ? b[o] : 0.0;
    const double* xr = x + t * in;
    for (int i = 0; i < in; ++i) {
      const double xi = xr[i];
      const double* wr = w + i * out;
      for (int o = 0; o < out; ++o) yr[o] += xi * wr[o];
    }
  }
}

// Accumulates dW += x^T dy, db += sum dy, dx += dy W^T.
void matmul_backward(const double* x, const double* w, const double* dy, int T, int in, int out, double* dx,
                     double* dw, double* db) {
  for (int t = 0; t < T; ++t) {
    const double* xr = x + t * in;
    const double* dyr = dy + t * out;
    if (db)
      for (int o = 0; o < out; ++o) db[o] += dyr[o];
    for (int i = 0; i < in; ++i) {
      const double* wr = w + i * out;
      double* dwr = dw + i * out;
      double acc = 0.0;
      for (int o = 0; o < out; ++o) {
        dwr[o] += xr[i] * dyr[o];
        acc += dyr[o] * wr[o];
      }
      if (dx) dx[t * in + i] += acc;
    }
  }
}

void check_tokens(const ModelConfig& cfg, std::span<const int> tokens) {
  if (tokens.empty()) fail(ErrorCode::kInvalidArgument, "forward: empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg.max_seq_len)
    fail(ErrorCode::kOutOfRange, "forward: sequence longer than max_seq_len");
  for (int t : tokens)
    if (t < 0 || t >= cfg.vocab_size) fail(ErrorCode::kOutOfRange, "forward: token id out of range");
}

void check_shifts(const ModelConfig& cfg, std::span<const HeadShift> shifts) {
  for (const auto& s : shifts) {
    if (s.layer < 0 || s.layer >= cfg.n_layers || s.head < 0 || s.head >= cfg.n_heads)
      fail(ErrorCode::kOutOfRange, "head shift site out of range");
    if (static_cast<int>(s.delta.size()) != cfg.head_dim)
      fail(ErrorCode::kInvalidArgument, "head shift must have head_dim entries");
  }
}

void run_forward(const ModelConfig& cfg, const ParamLayout& L, const double* P, std::span<const int> tokens,
                 std::span<const HeadShift> shifts, Trace& tr) {
  const int T = static_cast<int>(tokens.size());
  const int d = cfg.d_model, H = cfg.n_heads, hd = cfg.head_dim, hid = cfg.mlp_hidden, V = cfg.vocab_size;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  tr.T = T;
  tr.layers.resize(cfg.n_layers);

  std::vector<double> x(static_cast<std::size_t>(T) * d);
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < d; ++c)
      x[t * d + c] = P[L.tok_emb + tokens[t] * d + c] + P[L.pos_emb + t * d + c];

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& W = L.layers[l];
    auto& C = tr.layers[l];
    const std::size_t Td = static_cast<std::size_t>(T) * d;
    C.x_in = x;
    C.xhat1.resize(Td);
    C.rstd1.resize(T);
    C.a1.resize(Td);
    layer_norm(x.data(), P + W.ln1_g, P + W.ln1_b, T, d, C.xhat1.data(), C.rstd1.data(), C.a1.data());
    C.q.resize(Td);
    C.k.resize(Td);
    C.v.resize(Td);
    matmul(C.a1.data(), P + W.wq, nullptr, T, d, d, C.q.data());
    matmul(C.a1.data(), P + W.wk, nullptr, T, d, d, C.k.data());
    matmul(C.a1.data(), P + W.wv, nullptr, T, d, d, C.v.data());

    C.probs.assign(static_cast<std::size_t>(H) * T * T, 0.0);
    C.z.assign(Td, 0.0);
    for (int h = 0; h < H; ++h) {
      const int c0 = h * hd;
      for (int t = 0; t < T; ++t) {
        double* pr = C.probs.data() + (static_cast<std::size_t>(h) * T + t) * T;
        double mx = -INFINITY;
        for (int j = 0; j <= t; ++j) {
          double s = 0.0;
          for (int c = 0; c < hd; ++c) s += C.q[t * d + c0 + c] * C.k[j * d + c0 + c];
          pr[j] = s * scale;
          mx = std::max(mx, pr[j]);
        }
        double sum = 0.0;
        for (int j = 0; j <= t; ++j) {
          pr[j] = std::exp(pr[j] - mx);
          sum += pr[j];
        }
        for (int j = 0; j <= t; ++j) pr[j] /= sum;
        for (int c = 0; c < hd; ++c) {
          double acc = 0.0;
          for (int j = 0; j <= t; ++j) acc += pr[j] * C.v[j * d + c0 + c];
          C.z[t * d + c0 + c] = acc;
        }
      }
    }
    for (const auto& s : shifts) {
      if (s.layer != l) continue;
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < hd; ++c) C.z[t * d + s.head * hd + c] += s.delta[c];
    }

    std::vector<double> o(Td);
    matmul(C.z.data(), P + W.wo, P + W.bo, T, d, d, o.data());
    C.x_mid.resize(Td);
    for (std::size_t i = 0; i < Td; ++i) C.x_mid[i] = x[i] + o[i];

    C.xhat2.resize(Td);
    C.rstd2.resize(T);
    C.a2.resize(Td);
    layer_norm(C.x_mid.data(), P + W.ln2_g, P + W.ln2_b, T, d, C.xhat2.data(), C.rstd2.data(), C.a2.data());
    C.u.resize(static_cast<std::size_t>(T) * hid);
    C.g.resize(static_cast<std::size_t>(T) * hid);
    matmul(C.a2.data(), P + W.w1, P + W.b1, T, d, hid, C.u.data());
    for (std::size_t i = 0; i < C.u.size(); ++i) C.g[i] = gelu(C.u[i]);
    std::vector<double> y(Td);
    matmul(C.g.data(), P + W.w2, P + W.b2, T, hid, d, y.data());
    for (std::size_t i = 0; i < Td; ++i) x[i] = C.x_mid[i] + y[i];
  }

  tr.x_final = x;
  const std::size_t Td = static_cast<std::size_t>(T) * d;
  tr.xhatf.resize(Td);
  tr.rstdf.resize(T);
  tr.f.resize(Td);
  layer_norm(x.data(), P + L.lnf_g, P + L.lnf_b, T, d, tr.xhatf.data(), tr.rstdf.data(), tr.f.data());
  tr.logits.assign(static_cast<std::size_t>(T) * V, 0.0);
  for (int t = 0; t < T; ++t)
    for (int v = 0; v < V; ++v) {
      double acc = 0.0;
      for (int c = 0; c < d; ++c) acc += tr.f[t * d + c] * P[L.unembed + v * d + c];
      tr.logits[t * V + v] = acc;
    }
}

// Cross-entropy summed over predicted positions; writes dlogits scaled by `scale` if non-null.
void sequence_ce(const Trace& tr, std::span<const int> tokens, int V, double weight, double scale,
                 std::vector<double>* dlogits, ShiftedMean& acc) {
  const int T = tr.T;
  if (dlogits) dlogits->assign(static_cast<std::size_t>(T) * V, 0.0);
  for (int t = 0; t + 1 < T; ++t) {
    const double* z = tr.logits.data() + t * V;
    double mx = -INFINITY;
    for (int v = 0; v < V; ++v) mx = std::max(mx, z[v]);
    double sum = 0.0;
    for (int v = 0; v < V; ++v) sum += std::exp(z[v] - mx);
    const double lse = mx + std::log(sum);
    const int target = tokens[t + 1];
    acc.add(lse - z[target], weight);
    if (dlogits) {
      for (int v = 0; v < V; ++v) (*dlogits)[t * V + v] = scale * std::exp(z[v] - lse);
      (*dlogits)[t * V + target] -= scale;
    }
  }
}

void run_backward(const ModelConfig& cfg, const ParamLayout& L, const double* P, std::span<const int> tokens,
                  const Trace& tr, const std::vector<double>& dlogits, double* G) {
  const int T = tr.T;
  const int d = cfg.d_model, H = cfg.n_heads, hd = cfg.head_dim, hid = cfg.mlp_hidden, V = cfg.vocab_size;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t Td = static_cast<std::size_t>(T) * d;

  std::vector<double> df(Td, 0.0);
  for (int t = 0; t < T; ++t)
    for (int v = 0; v < V; ++v) {
      const double g = dlogits[t * V + v];
      if (g == 0.0) continue;
      for (int c = 0; c < d; ++c) {
        G[L.unembed + v * d + c] += g * tr.f[t * d + c];
        df[t * d + c] += g * P[L.unembed + v * d + c];
      }
    }
  std::vector<double> dx(Td, 0.0);
  layer_norm_backward(df.data(), tr.xhatf.data(), tr.rstdf.data(), P + L.lnf_g, T, d, dx.data(), G + L.lnf_g,
                      G + L.lnf_b);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& W = L.layers[l];
    const auto& C = tr.layers[l];
    // MLP branch: x_out = x_mid + W2 gelu(W1 LN2(x_mid))
    std::vector<double> dg(static_cast<std::size_t>(T) * hid, 0.0);
    matmul_backward(C.g.data(), P + W.w2, dx.data(), T, hid, d, dg.data(), G + W.w2, G + W.b2);
    for (std::size_t i = 0; i < dg.size(); ++i) dg[i] *= gelu_grad(C.u[i]);
    std::vector<double> da2(Td, 0.0);
    matmul_backward(C.a2.data(), P + W.w1, dg.data(), T, d, hid, da2.data(), G + W.w1, G + W.b1);
    std::vector<double> dx_mid = dx;
    layer_norm_backward(da2.data(), C.xhat2.data(), C.rstd2.data(), P + W.ln2_g, T, d, dx_mid.data(), G + W.ln2_g,
                        G + W.ln2_b);

    // Attention branch: x_mid = x_in + Wo z + bo
    std::vector<double> dz(Td, 0.0);
    matmul_backward(C.z.data(), P + W.wo, dx_mid.data(), T, d, d, dz.data(), G + W.wo, G + W.bo);
    std::vector<double> dq(Td, 0.0), dk(Td, 0.0), dv(Td, 0.0);
    std::vector<double> dp(T);
    for (int h = 0; h < H; ++h) {
      const int c0 = h * hd;
      for (int t = 0; t < T; ++t) {
        const double* pr = C.probs.data() + (static_cast<std::size_t>(h) * T + t) * T;
        double dot = 0.0;
        for (int j = 0; j <= t; ++j) {
          double acc = 0.0;
          for (int c = 0; c < hd; ++c) {
            acc += dz[t * d + c0 + c] * C.v[j * d + c0 + c];
            dv[j * d + c0 + c] += pr[j] * dz[t * d + c0 + c];
          }
          dp[j] = acc;
          dot += pr[j] * acc;
        }
        for (int j = 0; j <= t; ++j) {
          const double ds = pr[j] * (dp[j] - dot) * scale;
          for (int c = 0; c < hd; ++c) {
            dq[t * d + c0 + c] += ds * C.k[j * d + c0 + c];
            dk[j * d + c0 + c] += ds * C.q[t * d + c0 + c];
          }
        }
      }
    }
    std::vector<double> da1(Td, 0.0);
    matmul_backward(C.a1.data(), P + W.wq, dq.data(), T, d, d, da1.data(), G + W.wq, nullptr);
    matmul_backward(C.a1.data(), P + W.wk, dk.data(), T, d, d, da1.data(), G + W.wk, nullptr);
    matmul_backward(C.a1.data(), P + W.wv, dv.data(), T, d, d, da1.data(), G + W.wv, nullptr);
    dx = dx_mid;
    layer_norm_backward(da1.data(), C.xhat1.data(), C.rstd1.data(), P + W.ln1_g, T, d, dx.data(), G + W.ln1_g,
                        G + W.ln1_b);
  }
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < d; ++c) {
      G[L.tok_emb + tokens[t] * d + c] += dx[t * d + c];
      G[L.pos_emb + t * d + c] += dx[t * d + c];
    }
}

std::vector<double> widen(std::span<const float> p) { return std::vector<double>(p.begin(), p.end()); }

double predicted_positions(std::span<const WeightedSequence> batch) {
  double n = 0.0;
  for (const auto& s : batch) n += s.weight * static_cast<double>(s.tokens.size() - 1);
  return n;
}

void check_batch(const ModelConfig& cfg, std::span<const WeightedSequence> batch) {
  if (batch.empty()) fail(ErrorCode::kInvalidArgument, "backward: empty batch");
  for (const auto& s : batch) {
    check_tokens(cfg, s.tokens);
    if (s.tokens.size() < 2) fail(ErrorCode::kInvalidArgument, "backward: sequences need at least 2 tokens");
    if (!(s.weight > 0.0)) fail(ErrorCode::kInvalidArgument, "backward: weights must be positive");
  }
}

}  // namespace

ForwardResult forward(const ModelState& model, std::span<const int> tokens, bool capture,
                      std::span<const HeadShift> shifts) {
  const auto& cfg = model.config();
  check_tokens(cfg, tokens);
  check_shifts(cfg, shifts);
  const auto P = widen(model.params());
  Trace tr;
  run_forward(cfg, model.layout(), P.data(), tokens, shifts, tr);

  ForwardResult out;
  out.length = tr.T;
  out.vocab = cfg.vocab_size;
  out.logits = tr.logits;
  if (capture) {
    auto& a = out.activations;
    a.n_layers = cfg.n_layers;
    a.n_heads = cfg.n_heads;
    a.d_model = cfg.d_model;
    a.head_dim = cfg.head_dim;
    a.vocab = cfg.vocab_size;
    a.length = tr.T;
    const int T = tr.T, d = cfg.d_model, hd = cfg.head_dim;
    for (int l = 0; l < cfg.n_layers; ++l) {
      const auto& next = (l + 1 < cfg.n_layers) ? tr.layers[l + 1].x_in : tr.x_final;
      a.residual.insert(a.residual.end(), next.begin(), next.end());
    }
    a.heads.reserve(static_cast<std::size_t>(cfg.n_layers) * cfg.n_heads * T * hd);
    for (int l = 0; l < cfg.n_layers; ++l)
      for (int h = 0; h < cfg.n_heads; ++h)
        for (int t = 0; t < T; ++t)
          for (int c = 0; c < hd; ++c) a.heads.push_back(tr.layers[l].z[t * d + h * hd + c]);
    a.logits = tr.logits;
    out.captured = true;
  }
  return out;
}

double batch_loss(const ModelState& model, std::span<const WeightedSequence> batch) {
  const auto& cfg = model.config();
  check_batch(cfg, batch);
  const auto P = widen(model.params());
  Trace tr;
  ShiftedMean acc;
  for (const auto& s : batch) {
    run_forward(cfg, model.layout(), P.data(), s.tokens, {}, tr);
    sequence_ce(tr, s.tokens, cfg.vocab_size, s.weight, 0.0, nullptr, acc);
  }
  return acc.value();
}

Gradients backward(const ModelState& model, std::span<const WeightedSequence> batch) {
  const auto& cfg = model.config();
  check_batch(cfg, batch);
  const auto P = widen(model.params());
  const double denom = predicted_positions(batch);
  Gradients out;
  out.values.assign(model.num_params(), 0.0);
  Trace tr;
  std::vector<double> dlogits;
  ShiftedMean acc;
  for (const auto& s : batch) {
    run_forward(cfg, model.layout(), P.data(), s.tokens, {}, tr);
    sequence_ce(tr, s.tokens, cfg.vocab_size, s.weight, s.weight / denom, &dlogits, acc);
    run_backward(cfg, model.layout(), P.data(), s.tokens, tr, dlogits, out.values.data());
  }
  out.loss = acc.value();
  if (!std::isfinite(out.loss)) fail(ErrorCode::kNumerical, "backward: non-finite loss " + std::to_string(out.loss));
  return out;
}

void AdamOptimizer::step(ModelState& model, std::span<const double> grad, const AdamConfig& cfg, double lr) {
  require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0, "adam: betas must lie in [0,1)");
  auto params = model.params();
  require(grad.size() == params.size() && m_.size() == params.size(), "adam: size mismatch");
  const double rate = lr > 0.0 ? lr : cfg.lr;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * grad[i];
    v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    if (m_[i] == 0.0) continue;
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] = static_cast<float>(params[i] - rate * mhat / (std::sqrt(vhat) + cfg.eps));
  }
  if (!model.all_finite()) fail(ErrorCode::kNumerical, "adam: non-finite parameter after step");
}

}  // namespace entlab
