#include "slm/model.hpp"

#include <cmath>

#include "slm/errors.hpp"

namespace slm {

std::string to_string(Arch arch) { return arch == Arch::mlp ? "mlp" : "resmlp"; }

Arch parse_arch(const std::string& name) {
  if (name == "mlp") return Arch::mlp;
  if (name == "resmlp") return Arch::resmlp;
  throw ValidationError("unknown arch '" + name + "' (expected mlp or resmlp)");
}

ModelConfig ModelConfig::mlp(std::size_t context_len, std::size_t dim) {
  ModelConfig c;
  c.arch = Arch::mlp;
  c.input_dim = context_len * dim;
  c.output_dim = dim;
  return c;
}

ModelConfig ModelConfig::resmlp(std::size_t context_len, std::size_t dim) {
  ModelConfig c = mlp(context_len, dim);
  c.arch = Arch::resmlp;
  return c;
}

void ModelConfig::validate() const {
  if (input_dim == 0 || hidden_dim == 0 || output_dim == 0) {
    throw ValidationError("model dims must be positive");
  }
  if (arch == Arch::mlp && num_layers == 0) throw ValidationError("num_layers must be positive");
  if (arch == Arch::resmlp && num_residual_blocks == 0) {
    throw ValidationError("num_residual_blocks must be positive");
  }
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    throw ValidationError("dropout_rate must be in [0, 1)");
  }
}

std::vector<std::pair<std::size_t, std::size_t>> ModelConfig::dense_shapes() const {
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  if (arch == Arch::mlp) {
    shapes.emplace_back(hidden_dim, input_dim);
    for (std::size_t l = 1; l < num_layers; ++l) shapes.emplace_back(hidden_dim, hidden_dim);
  } else {
    if (has_input_projection()) shapes.emplace_back(hidden_dim, input_dim);
    for (std::size_t b = 0; b < num_residual_blocks; ++b) {
      shapes.emplace_back(hidden_dim, hidden_dim);
      shapes.emplace_back(hidden_dim, hidden_dim);
    }
  }
  shapes.emplace_back(output_dim, hidden_dim);
  return shapes;
}

std::vector<std::string> tensor_names(const ModelConfig& config) {
  std::vector<std::string> names = {"input_norm.gain", "input_norm.bias"};
  const auto shapes = config.dense_shapes();
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    names.push_back("dense" + std::to_string(l) + ".weight");
    names.push_back("dense" + std::to_string(l) + ".bias");
  }
  names.emplace_back("output_norm.gain");
  names.emplace_back("output_norm.bias");
  return names;
}

std::size_t parameter_count(const ModelConfig& config) {
  std::size_t n = 2 * config.input_dim + 2 * config.output_dim;
  for (auto [out, in] : config.dense_shapes()) n += out * in + out;
  return n;
}

template <typename T>
BasicParams<T> zero_params(const ModelConfig& config) {
  config.validate();
  BasicParams<T> p;
  p.input_norm.gain = Vector<T>::Zero(config.input_dim);
  p.input_norm.bias = Vector<T>::Zero(config.input_dim);
  for (auto [out, in] : config.dense_shapes()) {
    p.layers.push_back({Matrix<T>::Zero(out, in), Vector<T>::Zero(out)});
  }
  p.output_norm.gain = Vector<T>::Zero(config.output_dim);
  p.output_norm.bias = Vector<T>::Zero(config.output_dim);
  return p;
}

template <typename T>
BasicParams<T> BasicParams<T>::zeros_like() const {
  BasicParams<T> z;
  z.input_norm = {Vector<T>::Zero(input_norm.gain.size()), Vector<T>::Zero(input_norm.bias.size())};
  for (const auto& l : layers) {
    z.layers.push_back({Matrix<T>::Zero(l.weight.rows(), l.weight.cols()),
                        Vector<T>::Zero(l.bias.size())});
  }
  z.output_norm = {Vector<T>::Zero(output_norm.gain.size()),
                   Vector<T>::Zero(output_norm.bias.size())};
  return z;
}

template <typename T>
template <typename U>
BasicParams<U> BasicParams<T>::cast() const {
  BasicParams<U> out;
  out.input_norm = {input_norm.gain.template cast<U>(), input_norm.bias.template cast<U>()};
  for (const auto& l : layers) {
    out.layers.push_back({l.weight.template cast<U>(), l.bias.template cast<U>()});
  }
  out.output_norm = {output_norm.gain.template cast<U>(), output_norm.bias.template cast<U>()};
  return out;
}

template <typename T>
std::size_t BasicParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (auto v : tensor_views(*this)) n += v.size();
  return n;
}

template <typename T>
bool BasicParams<T>::all_finite() const {
  for (auto v : tensor_views(*this)) {
    for (T x : v) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

namespace {

template <typename P, typename Span>
std::vector<Span> views_impl(P& params) {
  std::vector<Span> v;
  auto add = [&](auto& t) { v.emplace_back(t.data(), static_cast<std::size_t>(t.size())); };
  add(params.input_norm.gain);
  add(params.input_norm.bias);
  for (auto& l : params.layers) {
    add(l.weight);
    add(l.bias);
  }
  add(params.output_norm.gain);
  add(params.output_norm.bias);
  return v;
}

}  // namespace

template <typename T>
std::vector<std::span<T>> tensor_views(BasicParams<T>& params) {
  return views_impl<BasicParams<T>, std::span<T>>(params);
}

template <typename T>
std::vector<std::span<const T>> tensor_views(const BasicParams<T>& params) {
  return views_impl<const BasicParams<T>, std::span<const T>>(params);
}

template <typename T>
void check_shapes(const BasicParams<T>& params, const ModelConfig& config) {
  auto fail = [](const std::string& what) { throw DimensionError("params do not match config: " + what); };
  if (static_cast<std::size_t>(params.input_norm.gain.size()) != config.input_dim ||
      static_cast<std::size_t>(params.input_norm.bias.size()) != config.input_dim) {
    fail("input_norm");
  }
  if (static_cast<std::size_t>(params.output_norm.gain.size()) != config.output_dim ||
      static_cast<std::size_t>(params.output_norm.bias.size()) != config.output_dim) {
    fail("output_norm");
  }
  const auto shapes = config.dense_shapes();
  if (params.layers.size() != shapes.size()) fail("layer count");
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& layer = params.layers[l];
    if (static_cast<std::size_t>(layer.weight.rows()) != shapes[l].first ||
        static_cast<std::size_t>(layer.weight.cols()) != shapes[l].second ||
        static_cast<std::size_t>(layer.bias.size()) != shapes[l].first) {
      fail("dense" + std::to_string(l));
    }
  }
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zero_params<float>(config);
  Rng rng(seed);
  for (auto& layer : p.layers) {
    const double scale = std::sqrt(2.0 / static_cast<double>(layer.weight.cols()));
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      layer.weight.data()[i] = static_cast<float>(rng.normal() * scale);
    }
  }
  p.input_norm.gain.setOnes();
  p.output_norm.gain.setOnes();
  return p;
}

std::vector<float> layer_norm(std::span<const float> x, std::span<const float> gain,
                              std::span<const float> bias, double eps) {
  if (x.empty()) throw DomainError("layer_norm of an empty vector");
  if (gain.size() != x.size() || bias.size() != x.size()) {
    throw DimensionError("layer_norm gain/bias length mismatch");
  }
  if (!(eps > 0.0)) throw DomainError("layer_norm eps must be positive");
  double mean = 0.0;
  for (float v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (float v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float hat = static_cast<float>((x[i] - mean) * inv);
    out[i] = hat * gain[i] + bias[i];
  }
  return out;
}

namespace {

template <typename T>
void norm_forward(const Matrix<T>& x, const Norm<T>& norm, Matrix<T>& hat, Vector<T>& inv_std,
                  Matrix<T>& out) {
  const Eigen::Index n = x.cols();
  hat.resize(x.rows(), n);
  inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) mean += x(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std(r) = static_cast<T>(inv);
    for (Eigen::Index c = 0; c < n; ++c) hat(r, c) = static_cast<T>((x(r, c) - mean) * inv);
  }
  out = hat.array().rowwise() * norm.gain.transpose().array();
  out.rowwise() += norm.bias.transpose();
}

// Accumulates gain/bias gradients and returns dLoss/dx.
template <typename T>
Matrix<T> norm_backward(const Matrix<T>& grad_out, const Matrix<T>& hat, const Vector<T>& inv_std,
                        const Norm<T>& norm, Norm<T>& grad) {
  grad.gain += (grad_out.cwiseProduct(hat)).colwise().sum().transpose();
  grad.bias += grad_out.colwise().sum().transpose();
  const Matrix<T> dhat = grad_out.array().rowwise() * norm.gain.transpose().array();
  const T n = static_cast<T>(hat.cols());
  Matrix<T> dx(hat.rows(), hat.cols());
  for (Eigen::Index r = 0; r < hat.rows(); ++r) {
    const T mean_d = dhat.row(r).sum() / n;
    const T mean_dh = dhat.row(r).cwiseProduct(hat.row(r)).sum() / n;
    dx.row(r) = inv_std(r) * (dhat.row(r).array() - mean_d - hat.row(r).array() * mean_dh).matrix();
  }
  return dx;
}

template <typename T>
Matrix<T> affine(const Matrix<T>& a, const Dense<T>& layer) {
  Matrix<T> z = a * layer.weight.transpose();
  z.rowwise() += layer.bias.transpose();
  return z;
}

template <typename T>
Matrix<T> relu_grad_mask(const Matrix<T>& pre) {
  return (pre.array() > T(0)).template cast<T>();
}

template <typename T>
void accumulate_dense_grad(Dense<T>& grad, const Matrix<T>& dz, const Matrix<T>& input) {
  grad.weight.noalias() += dz.transpose() * input;
  grad.bias += dz.colwise().sum().transpose();
}

}  // namespace

template <typename T>
ForwardCache<T> forward_batch(const BasicParams<T>& params, const ModelConfig& config,
                              const Matrix<T>& inputs, Mode mode, Rng* dropout_rng,
                              const DropoutMasks<T>* replay_masks) {
  if (static_cast<std::size_t>(inputs.cols()) != config.input_dim) {
    throw DimensionError("input width " + std::to_string(inputs.cols()) + " != input_dim " +
                         std::to_string(config.input_dim));
  }
  const bool drop = mode == Mode::train && config.dropout_rate > 0.0f;
  if (drop && replay_masks == nullptr && dropout_rng == nullptr) {
    throw DomainError("train-mode forward with dropout needs a random source");
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - static_cast<double>(config.dropout_rate)));

  ForwardCache<T> cache;
  auto dropout = [&](Matrix<T>& a) {
    if (!drop) {
      cache.masks.emplace_back();
      return;
    }
    Matrix<T> mask;
    if (replay_masks != nullptr) {
      const std::size_t site = cache.masks.size();
      if (site >= replay_masks->size() || (*replay_masks)[site].rows() != a.rows() ||
          (*replay_masks)[site].cols() != a.cols()) {
        throw DimensionError("replayed dropout mask does not match activation shape");
      }
      mask = (*replay_masks)[site];
    } else {
      mask.resize(a.rows(), a.cols());
      for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = dropout_rng->uniform01() >= config.dropout_rate ? keep_scale : T(0);
      }
    }
    a = a.cwiseProduct(mask);
    cache.masks.push_back(std::move(mask));
  };

  Matrix<T> a;
  norm_forward(inputs, params.input_norm, cache.input_hat, cache.input_inv_std, a);

  std::size_t l = 0;
  auto dense = [&](const Matrix<T>& in) -> const Matrix<T>& {
    cache.layer_inputs.push_back(in);
    cache.layer_pre.push_back(affine(in, params.layers[l++]));
    return cache.layer_pre.back();
  };

  if (config.arch == Arch::mlp) {
    for (std::size_t h = 0; h < config.num_layers; ++h) {
      a = dense(a).cwiseMax(T(0));
      dropout(a);
    }
  } else {
    if (config.has_input_projection()) {
      a = dense(a).cwiseMax(T(0));
      dropout(a);
    }
    for (std::size_t b = 0; b < config.num_residual_blocks; ++b) {
      Matrix<T> u = dense(a).cwiseMax(T(0));
      dropout(u);
      cache.layer_inputs.push_back(u);
      Matrix<T> s = affine(u, params.layers[l++]) + a;
      a = s.cwiseMax(T(0));
      cache.layer_pre.push_back(std::move(s));
    }
  }
  const Matrix<T> out = dense(a);
  norm_forward(out, params.output_norm, cache.output_hat, cache.output_inv_std, cache.output);
  return cache;
}

template <typename T>
BasicParams<T> backward_batch(const BasicParams<T>& params, const ModelConfig& config,
                              const ForwardCache<T>& cache, const Matrix<T>& grad_output) {
  BasicParams<T> grads = params.zeros_like();
  Matrix<T> da = norm_backward(grad_output, cache.output_hat, cache.output_inv_std,
                               params.output_norm, grads.output_norm);

  std::size_t l = params.layers.size() - 1;
  accumulate_dense_grad(grads.layers[l], da, cache.layer_inputs[l]);
  da = da * params.layers[l].weight;

  auto apply_mask = [&](Matrix<T>& d, std::size_t site) {
    const auto& mask = cache.masks[site];
    if (mask.size() != 0) d = d.cwiseProduct(mask);
  };

  std::size_t site = cache.masks.size();
  if (config.arch == Arch::mlp) {
    while (l-- > 0) {
      Matrix<T> dz = da;
      apply_mask(dz, --site);
      dz = dz.cwiseProduct(relu_grad_mask(cache.layer_pre[l]));
      accumulate_dense_grad(grads.layers[l], dz, cache.layer_inputs[l]);
      da = dz * params.layers[l].weight;
    }
  } else {
    for (std::size_t b = 0; b < config.num_residual_blocks; ++b) {
      const std::size_t second = --l;
      const std::size_t first = --l;
      const Matrix<T> ds = da.cwiseProduct(relu_grad_mask(cache.layer_pre[second]));
      accumulate_dense_grad(grads.layers[second], ds, cache.layer_inputs[second]);
      Matrix<T> dz = ds * params.layers[second].weight;
      apply_mask(dz, --site);
      dz = dz.cwiseProduct(relu_grad_mask(cache.layer_pre[first]));
      accumulate_dense_grad(grads.layers[first], dz, cache.layer_inputs[first]);
      da = dz * params.layers[first].weight + ds;
    }
    if (config.has_input_projection()) {
      --l;
      Matrix<T> dz = da;
      apply_mask(dz, --site);
      dz = dz.cwiseProduct(relu_grad_mask(cache.layer_pre[l]));
      accumulate_dense_grad(grads.layers[l], dz, cache.layer_inputs[l]);
      da = dz * params.layers[l].weight;
    }
  }
  // Only the gain/bias gradients of the input norm are needed.
  grads.input_norm.gain += da.cwiseProduct(cache.input_hat).colwise().sum().transpose();
  grads.input_norm.bias += da.colwise().sum().transpose();
  return grads;
}

template <typename T>
Matrix<T> gather_contexts(const EmbeddingMatrix& embeddings,
                          std::span<const std::vector<SentenceId>> contexts) {
  const std::size_t dim = embeddings.dim();
  const std::size_t t = contexts.empty() ? 0 : contexts.front().size();
  Matrix<T> x(contexts.size(), t * dim);
  for (std::size_t r = 0; r < contexts.size(); ++r) {
    if (contexts[r].size() != t) throw DimensionError("contexts have different lengths");
    for (std::size_t s = 0; s < t; ++s) {
      const SentenceId id = contexts[r][s];
      if (id >= embeddings.count()) {
        throw ValidationError("sentence id " + std::to_string(id) + " out of range");
      }
      const auto row = embeddings.row(id);
      for (std::size_t c = 0; c < dim; ++c) x(r, s * dim + c) = static_cast<T>(row[c]);
    }
  }
  return x;
}

std::vector<float> forward(const ModelParams& params, const ModelConfig& config,
                           std::span<const std::span<const float>> context, Mode mode,
                           Rng* dropout_rng) {
  std::size_t width = 0;
  for (auto s : context) width += s.size();
  if (width != config.input_dim) {
    throw DimensionError("context width " + std::to_string(width) + " != input_dim " +
                         std::to_string(config.input_dim));
  }
  Matrix<float> x(1, width);
  std::size_t c = 0;
  for (auto s : context) {
    for (float v : s) x(0, c++) = v;
  }
  const auto cache = forward_batch(params, config, x, mode, dropout_rng);
  return {cache.output.data(), cache.output.data() + cache.output.size()};
}

Matrix<float> predict(const ModelParams& params, const ModelConfig& config,
                      const EmbeddingMatrix& embeddings,
                      std::span<const std::vector<SentenceId>> contexts) {
  constexpr std::size_t kBatch = 256;
  Matrix<float> out(contexts.size(), config.output_dim);
  for (std::size_t begin = 0; begin < contexts.size(); begin += kBatch) {
    const std::size_t n = std::min(kBatch, contexts.size() - begin);
    const Matrix<float> x = gather_contexts<float>(embeddings, contexts.subspan(begin, n));
    const auto cache = forward_batch(params, config, x, Mode::eval, nullptr);
    out.middleRows(begin, n) = cache.output;
  }
  return out;
}

#define SLM_INSTANTIATE(T)                                                                  \
  template struct BasicParams<T>;                                                           \
  template std::vector<std::span<T>> tensor_views(BasicParams<T>&);                         \
  template std::vector<std::span<const T>> tensor_views(const BasicParams<T>&);             \
  template BasicParams<T> zero_params<T>(const ModelConfig&);                               \
  template void check_shapes(const BasicParams<T>&, const ModelConfig&);                    \
  template ForwardCache<T> forward_batch(const BasicParams<T>&, const ModelConfig&,         \
                                         const Matrix<T>&, Mode, Rng*,                      \
                                         const DropoutMasks<T>*);                           \
  template BasicParams<T> backward_batch(const BasicParams<T>&, const ModelConfig&,         \
                                         const ForwardCache<T>&, const Matrix<T>&);         \
  template Matrix<T> gather_contexts<T>(const EmbeddingMatrix&,                             \
                                        std::span<const std::vector<SentenceId>>);

SLM_INSTANTIATE(float)
SLM_INSTANTIATE(double)
#undef SLM_INSTANTIATE

template BasicParams<double> BasicParams<float>::cast<double>() const;
template BasicParams<float> BasicParams<double>::cast<float>() const;
template BasicParams<float> BasicParams<float>::cast<float>() const;

}  // namespace slm
