#include "steerlab/surrogate/model.hpp"

#include <array>
#include <cmath>
#include <random>

#include "steerlab/core/error.hpp"

namespace steerlab::surrogate {

template <typename Scalar>
int ParameterSet<Scalar>::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  fail(ErrorCode::InvalidArgument, "no parameter named '" + name + "'");
}

namespace {

constexpr double kNormEps = 1e-5;

struct LinearIdx {
  int w = -1, b = -1;
};
struct NormIdx {
  int gain = -1, bias = -1;
};
struct AttnIdx {
  NormIdx norm;
  LinearIdx q, k, v, o;
};
struct BlockIdx {
  std::array<AttnIdx, 3> attn;
  NormIdx mlp_norm;
  LinearIdx fc1, fc2;
};
struct Layout {
  LinearIdx embed;
  int pos_space = -1, pos_time = -1;
  std::vector<BlockIdx> blocks;
  NormIdx head_norm;
  LinearIdx head;
};

// Walks the parameter layout in a fixed order. With a sink, shapes are
// registered; without one, only indices are produced.
template <typename Scalar>
class LayoutBuilder {
 public:
  explicit LayoutBuilder(ParameterSet<Scalar>* sink) : sink_(sink) {}
  int add(const std::string& name, Index rows, Index cols) {
    if (sink_) return sink_->add(name, rows, cols);
    return next_++;
  }
  LinearIdx linear(const std::string& name, Index in, Index out) {
    return {add(name + ".weight", in, out), add(name + ".bias", 1, out)};
  }
  NormIdx norm(const std::string& name, Index dim) {
    return {add(name + ".gain", 1, dim), add(name + ".bias", 1, dim)};
  }

 private:
  ParameterSet<Scalar>* sink_;
  int next_ = 0;
};

template <typename Scalar>
Layout make_layout(const ModelConfig& c, ParameterSet<Scalar>* sink) {
  LayoutBuilder<Scalar> b(sink);
  Layout l;
  const Index dim = c.embed_dim, hidden = c.mlp_ratio * c.embed_dim;
  l.embed = b.linear("embed", c.patch_features(), dim);
  l.pos_space = b.add("pos.space", c.tokens_per_frame(), dim);
  l.pos_time = b.add("pos.time", c.window_T, dim);
  if (!c.linear_only) {
    static constexpr const char* kAxes[] = {"attn_w", "attn_h", "attn_t"};
    for (Index i = 0; i < c.n_blocks; ++i) {
      const std::string p = "blocks." + std::to_string(i) + ".";
      BlockIdx blk;
      for (int a = 0; a < 3; ++a) {
        const std::string n = p + kAxes[a];
        blk.attn[a].norm = b.norm(n + ".norm", dim);
        blk.attn[a].q = b.linear(n + ".q", dim, dim);
        blk.attn[a].k = b.linear(n + ".k", dim, dim);
        blk.attn[a].v = b.linear(n + ".v", dim, dim);
        blk.attn[a].o = b.linear(n + ".o", dim, dim);
      }
      blk.mlp_norm = b.norm(p + "mlp.norm", dim);
      blk.fc1 = b.linear(p + "mlp.fc1", dim, hidden);
      blk.fc2 = b.linear(p + "mlp.fc2", hidden, dim);
      l.blocks.push_back(blk);
    }
    l.head_norm = b.norm("head.norm", dim);
  }
  l.head = b.linear("head", dim, c.patch_features());
  return l;
}

// Token rows grouped into sequences along one axis (0: W, 1: H, 2: T).
struct AxisPlan {
  Index seq_len = 0;
  std::vector<Index> rows;
  Index sequences() const { return static_cast<Index>(rows.size()) / seq_len; }
};

AxisPlan axis_plan(const ModelConfig& c, int axis) {
  const Index T = c.window_T, W = c.tokens_w(), H = c.tokens_h();
  auto row = [&](Index t, Index w, Index h) { return (t * W + w) * H + h; };
  AxisPlan plan;
  if (axis == 0) {
    plan.seq_len = W;
    for (Index t = 0; t < T; ++t)
      for (Index h = 0; h < H; ++h)
        for (Index w = 0; w < W; ++w) plan.rows.push_back(row(t, w, h));
  } else if (axis == 1) {
    plan.seq_len = H;
    for (Index t = 0; t < T; ++t)
      for (Index w = 0; w < W; ++w)
        for (Index h = 0; h < H; ++h) plan.rows.push_back(row(t, w, h));
  } else {
    plan.seq_len = T;
    for (Index w = 0; w < W; ++w)
      for (Index h = 0; h < H; ++h)
        for (Index t = 0; t < T; ++t) plan.rows.push_back(row(t, w, h));
  }
  return plan;
}

template <typename S>
using Mat = MatrixX<S>;
template <typename S>
using Vec = VectorX<S>;

template <typename S>
struct NormCache {
  Mat<S> xhat;
  Vec<S> rstd;
};
template <typename S>
struct AttnCache {
  NormCache<S> norm;
  Mat<S> y, q, k, v, concat;
  std::vector<Mat<S>> probs;
};
template <typename S>
struct MlpCache {
  NormCache<S> norm;
  Mat<S> y, pre, act;
};
template <typename S>
struct BlockCache {
  std::array<AttnCache<S>, 3> attn;
  MlpCache<S> mlp;
};
template <typename S>
struct Cache {
  Mat<S> patches;
  std::vector<BlockCache<S>> blocks;
  NormCache<S> head_norm;
  Mat<S> z;
};

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, NormCache<S>* cache) {
  const Index n = x.rows();
  Mat<S> xhat(n, x.cols());
  Vec<S> rstd(n);
  for (Index i = 0; i < n; ++i) {
    const S mu = x.row(i).mean();
    const auto centered = (x.row(i).array() - mu).eval();
    const S var = centered.square().mean();
    rstd(i) = S(1) / std::sqrt(var + S(kNormEps));
    xhat.row(i) = centered * rstd(i);
  }
  Mat<S> y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const NormCache<S>& cache, const Mat<S>& gain, Mat<S>& dgain,
                           Mat<S>& dbias) {
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const Mat<S> dxhat = dy.array().rowwise() * gain.row(0).array();
  Mat<S> dx(dy.rows(), dy.cols());
  for (Index i = 0; i < dy.rows(); ++i) {
    const S m1 = dxhat.row(i).mean();
    const S m2 = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
    dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2);
  }
  return dx;
}

template <typename S>
Mat<S> linear(const Mat<S>& x, const ParameterSet<S>& p, LinearIdx idx) {
  Mat<S> y = x * p.values[idx.w];
  y.rowwise() += p.values[idx.b].row(0);
  return y;
}

template <typename S>
Mat<S> linear_backward(const Mat<S>& dy, const Mat<S>& x, const ParameterSet<S>& p, ParameterSet<S>& g,
                       LinearIdx idx) {
  g.values[idx.w].noalias() += x.transpose() * dy;
  g.values[idx.b].row(0) += dy.colwise().sum();
  return dy * p.values[idx.w].transpose();
}

template <typename S>
S gelu(S x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  return S(0.5) * x * (S(1) + std::tanh(S(kC) * (x + S(0.044715) * x * x * x)));
}

template <typename S>
S gelu_grad(S x) {
  constexpr double kC = 0.7978845608028654;
  const S u = S(kC) * (x + S(0.044715) * x * x * x);
  const S th = std::tanh(u);
  return S(0.5) * (S(1) + th) + S(0.5) * x * (S(1) - th * th) * S(kC) * (S(1) + S(3 * 0.044715) * x * x);
}

template <typename S>
Mat<S> attention(const Mat<S>& x, const ParameterSet<S>& p, const AttnIdx& idx, const AxisPlan& plan, Index heads,
                 AttnCache<S>* cache) {
  AttnCache<S> local;
  AttnCache<S>& c = cache ? *cache : local;
  c.y = layer_norm(x, p.values[idx.norm.gain], p.values[idx.norm.bias], &c.norm);
  c.q = linear(c.y, p, idx.q);
  c.k = linear(c.y, p, idx.k);
  c.v = linear(c.y, p, idx.v);
  const Index dim = x.cols(), dh = dim / heads, len = plan.seq_len;
  const S scale = S(1) / std::sqrt(S(dh));
  c.concat.setZero(x.rows(), dim);
  c.probs.assign(static_cast<std::size_t>(plan.sequences() * heads), Mat<S>());
  Mat<S> qs(len, dh), ks(len, dh), vs(len, dh);
  for (Index s = 0; s < plan.sequences(); ++s) {
    const Index* rows = plan.rows.data() + s * len;
    for (Index h = 0; h < heads; ++h) {
      for (Index l = 0; l < len; ++l) {
        qs.row(l) = c.q.block(rows[l], h * dh, 1, dh);
        ks.row(l) = c.k.block(rows[l], h * dh, 1, dh);
        vs.row(l) = c.v.block(rows[l], h * dh, 1, dh);
      }
      Mat<S> probs = (qs * ks.transpose()) * scale;
      for (Index r = 0; r < len; ++r) {
        const S m = probs.row(r).maxCoeff();
        probs.row(r) = (probs.row(r).array() - m).exp();
        probs.row(r) /= probs.row(r).sum();
      }
      const Mat<S> out = probs * vs;
      for (Index l = 0; l < len; ++l) c.concat.block(rows[l], h * dh, 1, dh) = out.row(l);
      c.probs[static_cast<std::size_t>(s * heads + h)] = std::move(probs);
    }
  }
  return linear(c.concat, p, idx.o);
}

template <typename S>
Mat<S> attention_backward(const Mat<S>& dout, const AttnCache<S>& c, const ParameterSet<S>& p, ParameterSet<S>& g,
                          const AttnIdx& idx, const AxisPlan& plan, Index heads) {
  const Mat<S> dconcat = linear_backward(dout, c.concat, p, g, idx.o);
  const Index dim = dout.cols(), dh = dim / heads, len = plan.seq_len;
  const S scale = S(1) / std::sqrt(S(dh));
  Mat<S> dq(dout.rows(), dim), dk(dout.rows(), dim), dv(dout.rows(), dim);
  Mat<S> qs(len, dh), ks(len, dh), vs(len, dh), dos(len, dh);
  for (Index s = 0; s < plan.sequences(); ++s) {
    const Index* rows = plan.rows.data() + s * len;
    for (Index h = 0; h < heads; ++h) {
      for (Index l = 0; l < len; ++l) {
        qs.row(l) = c.q.block(rows[l], h * dh, 1, dh);
        ks.row(l) = c.k.block(rows[l], h * dh, 1, dh);
        vs.row(l) = c.v.block(rows[l], h * dh, 1, dh);
        dos.row(l) = dconcat.block(rows[l], h * dh, 1, dh);
      }
      const Mat<S>& probs = c.probs[static_cast<std::size_t>(s * heads + h)];
      const Mat<S> dprobs = dos * vs.transpose();
      const Mat<S> dvs = probs.transpose() * dos;
      Mat<S> dscores(len, len);
      for (Index r = 0; r < len; ++r) {
        const S dot = (dprobs.row(r).array() * probs.row(r).array()).sum();
        dscores.row(r) = probs.row(r).array() * (dprobs.row(r).array() - dot) * scale;
      }
      const Mat<S> dqs = dscores * ks;
      const Mat<S> dks = dscores.transpose() * qs;
      for (Index l = 0; l < len; ++l) {
        dq.block(rows[l], h * dh, 1, dh) = dqs.row(l);
        dk.block(rows[l], h * dh, 1, dh) = dks.row(l);
        dv.block(rows[l], h * dh, 1, dh) = dvs.row(l);
      }
    }
  }
  Mat<S> dy = linear_backward(dq, c.y, p, g, idx.q);
  dy += linear_backward(dk, c.y, p, g, idx.k);
  dy += linear_backward(dv, c.y, p, g, idx.v);
  return layer_norm_backward(dy, c.norm, p.values[idx.norm.gain], g.values[idx.norm.gain], g.values[idx.norm.bias]);
}

template <typename S>
Mat<S> mlp(const Mat<S>& x, const ParameterSet<S>& p, const BlockIdx& idx, MlpCache<S>* cache) {
  MlpCache<S> local;
  MlpCache<S>& c = cache ? *cache : local;
  c.y = layer_norm(x, p.values[idx.mlp_norm.gain], p.values[idx.mlp_norm.bias], &c.norm);
  c.pre = linear(c.y, p, idx.fc1);
  c.act = c.pre.unaryExpr([](S v) { return gelu(v); });
  return linear(c.act, p, idx.fc2);
}

template <typename S>
Mat<S> mlp_backward(const Mat<S>& dout, const MlpCache<S>& c, const ParameterSet<S>& p, ParameterSet<S>& g,
                    const BlockIdx& idx) {
  const Mat<S> dact = linear_backward(dout, c.act, p, g, idx.fc2);
  const Mat<S> dpre = dact.array() * c.pre.unaryExpr([](S v) { return gelu_grad(v); }).array();
  const Mat<S> dy = linear_backward(dpre, c.y, p, g, idx.fc1);
  return layer_norm_backward(dy, c.norm, p.values[idx.mlp_norm.gain], g.values[idx.mlp_norm.gain],
                             g.values[idx.mlp_norm.bias]);
}

template <typename S>
double normal_std(Index fan_in) {
  return 1.0 / std::sqrt(static_cast<double>(fan_in));
}

}  // namespace

template <typename Scalar>
struct Model<Scalar>::Impl {
  const Model& model;
  Layout layout;
  std::array<AxisPlan, 3> plans;

  explicit Impl(const Model& m) : model(m), layout(make_layout<Scalar>(m.config_, nullptr)) {
    for (int a = 0; a < 3; ++a) plans[static_cast<std::size_t>(a)] = axis_plan(m.config_, a);
  }

  void check_layer(LayerId layer, const char* what) const {
    const ModelConfig& c = model.config_;
    if (c.linear_only || layer.block < 0 || layer.block >= c.n_blocks) {
      fail(ErrorCode::UnknownLayer, std::string(what) + " targets " + layer.name() + " but the model has " +
                                        std::to_string(c.linear_only ? 0 : c.n_blocks) + " blocks");
    }
  }

  Mat<Scalar> patchify(const Tensor4<Scalar>& window) const {
    const ModelConfig& c = model.config_;
    const Index p = c.patch_size, W = c.tokens_w(), H = c.tokens_h();
    Mat<Scalar> out(c.tokens(), c.patch_features());
    for (Index t = 0; t < c.window_T; ++t)
      for (Index w = 0; w < W; ++w)
        for (Index h = 0; h < H; ++h) {
          const Index row = (t * W + w) * H + h;
          for (Index f = 0; f < c.field_count; ++f)
            for (Index py = 0; py < p; ++py)
              for (Index px = 0; px < p; ++px) out(row, (f * p + py) * p + px) = window(t, f, h * p + py, w * p + px);
        }
    return out;
  }

  Tensor3<Scalar> unpatchify(const Mat<Scalar>& d) const {
    const ModelConfig& c = model.config_;
    const Index p = c.patch_size, W = c.tokens_w(), H = c.tokens_h();
    Tensor3<Scalar> out(c.field_count, c.grid_height, c.grid_width);
    for (Index w = 0; w < W; ++w)
      for (Index h = 0; h < H; ++h)
        for (Index f = 0; f < c.field_count; ++f)
          for (Index py = 0; py < p; ++py)
            for (Index px = 0; px < p; ++px) out(f, h * p + py, w * p + px) = d(w * H + h, (f * p + py) * p + px);
    return out;
  }

  Mat<Scalar> patchify_grad(const Tensor3<Scalar>& g) const {
    const ModelConfig& c = model.config_;
    const Index p = c.patch_size, W = c.tokens_w(), H = c.tokens_h();
    Mat<Scalar> out(c.tokens_per_frame(), c.patch_features());
    for (Index w = 0; w < W; ++w)
      for (Index h = 0; h < H; ++h)
        for (Index f = 0; f < c.field_count; ++f)
          for (Index py = 0; py < p; ++py)
            for (Index px = 0; px < p; ++px) out(w * H + h, (f * p + py) * p + px) = g(f, h * p + py, w * p + px);
    return out;
  }

  Mat<Scalar> block(const Mat<Scalar>& x_in, std::size_t b, BlockCache<Scalar>* cache) const {
    const auto& p = model.params_;
    const BlockIdx& idx = layout.blocks[b];
    Mat<Scalar> x = x_in;
    for (std::size_t a = 0; a < 3; ++a) {
      x += attention(x, p, idx.attn[a], plans[a], model.config_.n_heads, cache ? &cache->attn[a] : nullptr);
    }
    x += mlp(x, p, idx, cache ? &cache->mlp : nullptr);
    return x;
  }

  Mat<Scalar> block_backward(const Mat<Scalar>& dout, std::size_t b, const BlockCache<Scalar>& cache,
                             ParameterSet<Scalar>& g) const {
    const auto& p = model.params_;
    const BlockIdx& idx = layout.blocks[b];
    Mat<Scalar> dx = dout;
    dx += mlp_backward(dx, cache.mlp, p, g, idx);
    for (std::size_t a = 3; a-- > 0;) {
      dx += attention_backward(dx, cache.attn[a], p, g, idx.attn[a], plans[a], model.config_.n_heads);
    }
    return dx;
  }

  ForwardResult<Scalar> run(const Tensor4<Scalar>& window, const ForwardOptions<Scalar>& opt,
                            Cache<Scalar>* cache) const {
    const ModelConfig& c = model.config_;
    const auto& p = model.params_;
    const Shape4 expected{c.window_T, c.field_count, c.grid_height, c.grid_width};
    if (shape_of(window) != expected) {
      fail(ErrorCode::ShapeMismatch, "window shape " + shape_string(shape_of(window)) + " expected " +
                                         shape_string(expected));
    }
    if (opt.injector) check_layer(opt.injector->layer, "injector");
    for (const auto& t : opt.taps) check_layer(t, "tap");

    Mat<Scalar> patches = patchify(window);
    Mat<Scalar> x = linear(patches, p, layout.embed);
    const Index per_frame = c.tokens_per_frame();
    for (Index t = 0; t < c.window_T; ++t) {
      x.middleRows(t * per_frame, per_frame) += p.values[layout.pos_space];
      x.middleRows(t * per_frame, per_frame).rowwise() += p.values[layout.pos_time].row(t);
    }
    if (cache) {
      cache->patches = std::move(patches);
      cache->blocks.resize(layout.blocks.size());
    }

    ForwardResult<Scalar> result;
    for (std::size_t b = 0; b < layout.blocks.size(); ++b) {
      if (opt.block_input_probe) opt.block_input_probe(static_cast<int>(b), tokens_to_activation(x, c));
      x = block(x, b, cache ? &cache->blocks[b] : nullptr);
      const LayerId here{static_cast<int>(b)};
      if (opt.injector && opt.injector->layer == here) {
        Tensor4<Scalar> act = tokens_to_activation(x, c);
        opt.injector->transform(act);
        if (shape_of(act) != c.activation_shape()) {
          fail(ErrorCode::ShapeMismatch, "injector changed activation shape to " + shape_string(shape_of(act)));
        }
        x = activation_to_tokens(act, c);
      }
      for (const auto& t : opt.taps) {
        if (t == here) result.taps[here] = {tokens_to_activation(x, c), here, {}};
      }
    }

    const Mat<Scalar> last = x.bottomRows(per_frame);
    Mat<Scalar> z = c.linear_only ? last
                                  : layer_norm(last, p.values[layout.head_norm.gain], p.values[layout.head_norm.bias],
                                               cache ? &cache->head_norm : nullptr);
    result.delta = unpatchify(linear(z, p, layout.head));
    if (cache) cache->z = std::move(z);
    return result;
  }

  Scalar backward(const Tensor4<Scalar>& window, const Tensor3<Scalar>& target, ParameterSet<Scalar>& g) const {
    const ModelConfig& c = model.config_;
    const auto& p = model.params_;
    Cache<Scalar> cache;
    const ForwardResult<Scalar> fwd = run(window, {}, &cache);
    const Scalar loss = mse_loss(fwd.delta, target);
    const Scalar n = static_cast<Scalar>(fwd.delta.size());
    const Tensor3<Scalar> dpred = (fwd.delta - target) * (Scalar(2) / n);

    const Index per_frame = c.tokens_per_frame();
    const Mat<Scalar> dd = patchify_grad(dpred);
    Mat<Scalar> dz = linear_backward(dd, cache.z, p, g, layout.head);
    Mat<Scalar> dx = Mat<Scalar>::Zero(c.tokens(), c.embed_dim);
    if (c.linear_only) {
      dx.bottomRows(per_frame) = dz;
    } else {
      dx.bottomRows(per_frame) = layer_norm_backward(dz, cache.head_norm, p.values[layout.head_norm.gain],
                                                     g.values[layout.head_norm.gain], g.values[layout.head_norm.bias]);
    }
    for (std::size_t b = layout.blocks.size(); b-- > 0;) dx = block_backward(dx, b, cache.blocks[b], g);

    linear_backward(dx, cache.patches, p, g, layout.embed);
    for (Index t = 0; t < c.window_T; ++t) {
      g.values[layout.pos_space] += dx.middleRows(t * per_frame, per_frame);
      g.values[layout.pos_time].row(t) += dx.middleRows(t * per_frame, per_frame).colwise().sum();
    }
    return loss;
  }
};

template <typename Scalar>
Model<Scalar>::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  make_layout<Scalar>(config_, &params_);
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::initialize(const ModelConfig& config, std::uint64_t seed) {
  Model model(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double depth = std::sqrt(2.0 * static_cast<double>(std::max<Index>(1, config.n_blocks)) * 4.0);
  auto& ps = model.params_;
  for (std::size_t i = 0; i < ps.values.size(); ++i) {
    const std::string& name = ps.names[i];
    auto& v = ps.values[i];
    double std_dev = 0.0;
    if (name.ends_with(".gain")) {
      v.setOnes();
      continue;
    }
    if (name.ends_with(".bias")) continue;
    if (name.starts_with("pos.")) {
      std_dev = 0.02;
    } else if (name == "head.weight") {
      std_dev = 0.1 * normal_std<double>(v.rows());
    } else if (name.ends_with(".o.weight") || name.ends_with("fc2.weight")) {
      std_dev = normal_std<double>(v.rows()) / depth;
    } else {
      std_dev = normal_std<double>(v.rows());
    }
    for (Index r = 0; r < v.rows(); ++r)
      for (Index col = 0; col < v.cols(); ++col) v(r, col) = static_cast<Scalar>(std_dev * normal(rng));
  }
  return model;
}

template <typename Scalar>
ForwardResult<Scalar> Model<Scalar>::forward(const Tensor4<Scalar>& window, const ForwardOptions<Scalar>& options) const {
  return Impl(*this).run(window, options, nullptr);
}

template <typename Scalar>
Scalar Model<Scalar>::loss_and_gradient(const Tensor4<Scalar>& window, const Tensor3<Scalar>& target_delta,
                                        ParameterSet<Scalar>& grad) const {
  if (grad.values.size() != params_.values.size()) fail(ErrorCode::ShapeMismatch, "gradient layout mismatch");
  return Impl(*this).backward(window, target_delta, grad);
}

template <typename Scalar>
Scalar mse_loss(const Tensor3<Scalar>& prediction, const Tensor3<Scalar>& target) {
  if (prediction.dimensions() != target.dimensions()) {
    fail(ErrorCode::ShapeMismatch, "prediction " + shape_string(shape_of(prediction)) + " vs target " +
                                       shape_string(shape_of(target)));
  }
  if (prediction.size() == 0) return Scalar(0);
  return (flat(prediction) - flat(target)).squaredNorm() / static_cast<Scalar>(prediction.size());
}

template <typename Scalar>
Tensor4<Scalar> tokens_to_activation(const MatrixX<Scalar>& tokens, const ModelConfig& c) {
  const Index T = c.window_T, C = c.embed_dim, W = c.tokens_w(), H = c.tokens_h();
  if (tokens.rows() != T * W * H || tokens.cols() != C) fail(ErrorCode::ShapeMismatch, "token matrix shape");
  Tensor4<Scalar> out(T, C, W, H);
  for (Index t = 0; t < T; ++t)
    for (Index w = 0; w < W; ++w)
      for (Index h = 0; h < H; ++h) {
        const Index row = (t * W + w) * H + h;
        for (Index ch = 0; ch < C; ++ch) out(t, ch, w, h) = tokens(row, ch);
      }
  return out;
}

template <typename Scalar>
MatrixX<Scalar> activation_to_tokens(const Tensor4<Scalar>& a, const ModelConfig& c) {
  if (shape_of(a) != c.activation_shape()) {
    fail(ErrorCode::ShapeMismatch, "activation " + shape_string(shape_of(a)) + " expected " +
                                       shape_string(c.activation_shape()));
  }
  const Index T = c.window_T, C = c.embed_dim, W = c.tokens_w(), H = c.tokens_h();
  MatrixX<Scalar> out(T * W * H, C);
  for (Index t = 0; t < T; ++t)
    for (Index w = 0; w < W; ++w)
      for (Index h = 0; h < H; ++h) {
        const Index row = (t * W + w) * H + h;
        for (Index ch = 0; ch < C; ++ch) out(row, ch) = a(t, ch, w, h);
      }
  return out;
}

template struct ParameterSet<float>;
template struct ParameterSet<double>;
template class Model<float>;
template class Model<double>;
template float mse_loss(const Tensor3<float>&, const Tensor3<float>&);
template double mse_loss(const Tensor3<double>&, const Tensor3<double>&);
template Tensor4<float> tokens_to_activation(const MatrixX<float>&, const ModelConfig&);
template Tensor4<double> tokens_to_activation(const MatrixX<double>&, const ModelConfig&);
template MatrixX<float> activation_to_tokens(const Tensor4<float>&, const ModelConfig&);
template MatrixX<double> activation_to_tokens(const Tensor4<double>&, const ModelConfig&);

}  // namespace steerlab::surrogate
