#include "reve/nn.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace reve::nn {

Activation activation_from_string(const std::string& name) {
  if (name == "identity" || name == "linear") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string activation_to_string(Activation act) {
  switch (act) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "identity";
}

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

std::size_t parse_size(const std::string& s, const char* what) {
  try {
    const long long v = std::stoll(s);
    if (v <= 0) throw std::invalid_argument("non-positive");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("arch: bad ") + what + " '" + s + "'");
  }
}

Tensor apply_activation(const Tensor& t, Activation act) {
  switch (act) {
    case Activation::kIdentity: return t;
    case Activation::kRelu: return relu(t);
    case Activation::kTanh: return tanh(t);
    case Activation::kSigmoid: return sigmoid(t);
  }
  return t;
}

}  // namespace

std::vector<LayerSpec> parse_arch(const std::string& text) {
  std::vector<LayerSpec> layers;
  for (const std::string& item : split(text, ',')) {
    if (item.empty()) throw std::invalid_argument("arch: empty layer entry");
    const auto parts = split(item, ':');
    LayerSpec spec;
    if (parts[0] == "dense") {
      if (parts.size() != 3) throw std::invalid_argument("arch: dense:<units>:<act> expected");
      spec.kind = LayerSpec::Kind::kDense;
      spec.units = parse_size(parts[1], "dense units");
      spec.act = activation_from_string(parts[2]);
    } else if (parts[0] == "conv") {
      if (parts.size() != 5)
        throw std::invalid_argument("arch: conv:<channels>:<kernel>:<pad>:<act> expected");
      spec.kind = LayerSpec::Kind::kConv;
      spec.units = parse_size(parts[1], "conv channels");
      spec.kernel = parse_size(parts[2], "conv kernel");
      spec.pad = static_cast<std::size_t>(std::stoll(parts[3]));
      spec.act = activation_from_string(parts[4]);
    } else if (parts[0] == "maxpool") {
      if (parts.size() != 1) throw std::invalid_argument("arch: maxpool takes no arguments");
      spec.kind = LayerSpec::Kind::kMaxPool;
    } else if (parts[0] == "dropout") {
      if (parts.size() != 2) throw std::invalid_argument("arch: dropout:<keep> expected");
      spec.kind = LayerSpec::Kind::kDropout;
      spec.keep_prob = std::stod(parts[1]);
      if (!(spec.keep_prob > 0.0 && spec.keep_prob <= 1.0)) {
        throw std::invalid_argument("arch: dropout keep probability must be in (0, 1]");
      }
    } else if (parts[0] == "flatten") {
      spec.kind = LayerSpec::Kind::kFlatten;
    } else {
      throw std::invalid_argument("arch: unknown layer '" + parts[0] + "'");
    }
    layers.push_back(spec);
  }
  if (layers.empty()) throw std::invalid_argument("arch: no layers");
  return layers;
}

std::string arch_to_string(const std::vector<LayerSpec>& layers) {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) os << ',';
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerSpec::Kind::kDense:
        os << "dense:" << l.units << ':' << activation_to_string(l.act);
        break;
      case LayerSpec::Kind::kConv:
        os << "conv:" << l.units << ':' << l.kernel << ':' << l.pad << ':'
           << activation_to_string(l.act);
        break;
      case LayerSpec::Kind::kMaxPool: os << "maxpool"; break;
      case LayerSpec::Kind::kDropout: os << "dropout:" << l.keep_prob; break;
      case LayerSpec::Kind::kFlatten: os << "flatten"; break;
    }
  }
  return os.str();
}

// ---------------------------------------------------------- EncoderNetwork

namespace {

// uniform +-sqrt(6 / (fan_in + fan_out)), biases zero
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = (2.0 * rng.uniform() - 1.0) * limit;
  return Tensor::param(std::move(shape), std::move(values));
}

}  // namespace

EncoderNetwork::EncoderNetwork(Shape input_shape, std::vector<LayerSpec> layers, Rng& init_rng)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("EncoderNetwork: no layers");

  Shape cur = input_shape_;  // per-sample shape
  int index = 0;
  for (const LayerSpec& l : layers_) {
    switch (l.kind) {
      case LayerSpec::Kind::kDense: {
        const std::size_t in_dim = shape_numel(cur);
        const std::string base = "enc." + std::to_string(index);
        params_.emplace_back(base + ".weight",
                             glorot_uniform(Shape{in_dim, l.units}, in_dim, l.units, init_rng));
        params_.emplace_back(base + ".bias", Tensor::param(Shape{l.units},
                                                           std::vector<double>(l.units, 0.0)));
        layer_param_.push_back(static_cast<int>(params_.size()) - 2);
        cur = Shape{l.units};
        break;
      }
      case LayerSpec::Kind::kConv: {
        if (cur.size() != 3) {
          throw std::invalid_argument("EncoderNetwork: conv layer needs [C,H,W] input, got " +
                                      shape_str(cur));
        }
        const std::size_t ic = cur[0];
        const std::size_t fan_in = ic * l.kernel * l.kernel;
        const std::size_t fan_out = l.units * l.kernel * l.kernel;
        const std::string base = "enc." + std::to_string(index);
        params_.emplace_back(base + ".kernel",
                             glorot_uniform(Shape{l.units, ic, l.kernel, l.kernel}, fan_in,
                                            fan_out, init_rng));
        params_.emplace_back(base + ".bias", Tensor::param(Shape{l.units},
                                                           std::vector<double>(l.units, 0.0)));
        layer_param_.push_back(static_cast<int>(params_.size()) - 2);
        const std::size_t oh = cur[1] + 2 * l.pad - l.kernel + 1;
        const std::size_t ow = cur[2] + 2 * l.pad - l.kernel + 1;
        cur = Shape{l.units, oh, ow};
        break;
      }
      case LayerSpec::Kind::kMaxPool: {
        if (cur.size() != 3 || cur[1] % 2 != 0 || cur[2] % 2 != 0) {
          throw std::invalid_argument("EncoderNetwork: maxpool needs even [C,H,W], got " +
                                      shape_str(cur));
        }
        layer_param_.push_back(-1);
        cur = Shape{cur[0], cur[1] / 2, cur[2] / 2};
        break;
      }
      case LayerSpec::Kind::kDropout:
      case LayerSpec::Kind::kFlatten: {
        layer_param_.push_back(-1);
        if (l.kind == LayerSpec::Kind::kFlatten) cur = Shape{shape_numel(cur)};
        break;
      }
    }
    ++index;
  }
  output_dim_ = shape_numel(cur);
}

Tensor EncoderNetwork::forward(const Tensor& x, bool train, Rng* rng) const {
  if (x.rank() < 2) {
    throw std::invalid_argument("EncoderNetwork: batch input must have a leading N axis, got " +
                                shape_str(x.shape()));
  }
  {
    Shape per_sample(x.shape().begin() + 1, x.shape().end());
    if (shape_numel(per_sample) != shape_numel(input_shape_)) {
      throw std::invalid_argument("EncoderNetwork: input " + shape_str(x.shape()) +
                                  " does not match expected sample shape " +
                                  shape_str(input_shape_));
    }
  }
  const std::size_t n = x.shape()[0];
  Tensor h = x;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const LayerSpec& l = layers_[li];
    switch (l.kind) {
      case LayerSpec::Kind::kDense: {
        const Tensor& w = params_[static_cast<std::size_t>(layer_param_[li])].second;
        const Tensor& b = params_[static_cast<std::size_t>(layer_param_[li]) + 1].second;
        if (h.rank() != 2) h = reshape(h, Shape{n, h.size() / n});
        h = apply_activation(add(matmul(h, w), b), l.act);
        break;
      }
      case LayerSpec::Kind::kConv: {
        const Tensor& kern = params_[static_cast<std::size_t>(layer_param_[li])].second;
        const Tensor& b = params_[static_cast<std::size_t>(layer_param_[li]) + 1].second;
        h = apply_activation(conv2d(h, kern, b, l.pad), l.act);
        break;
      }
      case LayerSpec::Kind::kMaxPool: h = maxpool2(h); break;
      case LayerSpec::Kind::kDropout: {
        if (!train || l.keep_prob >= 1.0) break;  // keep prob 1 is the identity
        if (!rng) throw std::invalid_argument("EncoderNetwork: dropout needs an rng in training");
        // inverted scaling: mask in {0, 1/keep}, so evaluation needs no change
        std::vector<double> mask(h.size());
        for (double& m : mask) m = rng->uniform() < l.keep_prob ? 1.0 / l.keep_prob : 0.0;
        h = mul(h, Tensor(h.shape(), std::move(mask)));
        break;
      }
      case LayerSpec::Kind::kFlatten: h = reshape(h, Shape{n, h.size() / n}); break;
    }
  }
  if (h.rank() != 2) h = reshape(h, Shape{n, h.size() / n});
  return h;
}

// ------------------------------------------------------------- DecoderHead

DecoderHead::DecoderHead(std::size_t n_classes, std::size_t dim_y, Rng& init_rng) {
  if (n_classes == 0 || dim_y == 0) throw std::invalid_argument("DecoderHead: empty dimensions");
  weight_ = glorot_uniform(Shape{n_classes, dim_y}, dim_y, n_classes, init_rng);
  bias_ = Tensor::param(Shape{n_classes}, std::vector<double>(n_classes, 0.0));
}

void DecoderHead::refresh_projection(double rank_tolerance) {
  linalg::Mat w(n_classes(), dim_y(),
                std::vector<double>(weight_.values().begin(), weight_.values().end()));
  svd_ = linalg::compact_svd(w, rank_tolerance);
  proj_ = linalg::kernel_complement_projection(svd_, dim_y());
  proj_tensor_ = Tensor(Shape{dim_y(), dim_y()}, proj_.p.a);
  has_cache_ = true;
  svd_age_ = 0;
}

void DecoderHead::step_projection(double rank_tolerance, std::size_t period) {
  if (!has_cache_ || svd_age_ >= period) {
    refresh_projection(rank_tolerance);
  }
  ++svd_age_;
}

const linalg::CompactSvd& DecoderHead::svd() const {
  if (!has_cache_) throw std::runtime_error("DecoderHead: projection cache not computed");
  return svd_;
}

const linalg::ProjectionMatrix& DecoderHead::projection() const {
  if (!has_cache_) throw std::runtime_error("DecoderHead: projection cache not computed");
  return proj_;
}

const Tensor& DecoderHead::projection_tensor() const {
  if (!has_cache_) throw std::runtime_error("DecoderHead: projection cache not computed");
  return proj_tensor_;
}

Tensor DecoderHead::logits(const Tensor& h_batch) const {
  if (h_batch.rank() != 2 || h_batch.shape()[1] != dim_y()) {
    throw std::invalid_argument("DecoderHead::logits: batch " + shape_str(h_batch.shape()) +
                                " does not match dim(Y) " + std::to_string(dim_y()));
  }
  return add(matmul(h_batch, transpose(weight_)), bias_);
}

Tensor predict(const DecoderHead& head, const Tensor& h_batch) {
  // value-only path: detach so nothing lands on an active tape
  Tensor logit_values = head.logits(h_batch.detached()).detached();
  auto v = logit_values.values();
  const std::size_t n = logit_values.shape()[0];
  const std::size_t c = logit_values.shape()[1];
  std::vector<double> probs(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    double m = v[i * c];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, v[i * c + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(v[i * c + j] - m);
      sum += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= sum;
  }
  return Tensor(Shape{n, c}, std::move(probs));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("cross_entropy: logits must be [N, C], got " +
                                shape_str(logits.shape()));
  }
  const std::size_t n = logits.shape()[0];
  const std::size_t c = logits.shape()[1];
  if (labels.size() != n) {
    throw std::invalid_argument("cross_entropy: batch size mismatch");
  }
  std::vector<double> onehot(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                  " out of range [0," + std::to_string(c) + ")");
    }
    onehot[i * c + static_cast<std::size_t>(label)] = 1.0;
  }
  const Tensor picked = sum(mul(logits, Tensor(Shape{n, c}, std::move(onehot))), 1, false);
  const Tensor lse = logsumexp(logits, 1, false);
  return mean(sub(lse, picked));
}

double error_rate_percent(const Tensor& probabilities, std::span<const int> labels) {
  const std::size_t n = probabilities.shape()[0];
  const std::size_t c = probabilities.shape()[1];
  if (labels.size() != n) throw std::invalid_argument("error_rate_percent: size mismatch");
  auto v = probabilities.values();
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (v[i * c + j] > v[i * c + arg]) arg = j;
    if (static_cast<int>(arg) != labels[i]) ++wrong;
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(n);
}

// -------------------------------------------------------------- SgdMomentum

SgdMomentum::SgdMomentum(double base_lr, double decay_per_epoch, double momentum,
                         double weight_decay)
    : base_lr_(base_lr), decay_(decay_per_epoch), momentum_(momentum),
      weight_decay_(weight_decay) {
  if (!(base_lr >= 0.0) || !(decay_per_epoch > 0.0)) {
    throw std::invalid_argument("SgdMomentum: bad learning-rate schedule");
  }
}

void SgdMomentum::register_params(const std::vector<std::pair<std::string, Tensor>>& params) {
  for (const auto& [name, tensor] : params) {
    params_.emplace_back(name, tensor);
    velocity_.emplace_back(tensor.size(), 0.0);
  }
}

double SgdMomentum::learning_rate(std::size_t epoch) const {
  return base_lr_ * std::pow(decay_, static_cast<double>(epoch));
}

void SgdMomentum::step(std::size_t epoch) {
  const double lr = learning_rate(epoch);
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi].second;
    if (!p.has_grad()) {
      throw std::runtime_error("sgd_step: missing gradient for parameter '" + params_[pi].first +
                               "'");
    }
    auto g = p.grad();
    auto values = p.values_mut();
    auto& v = velocity_[pi];
    for (std::size_t i = 0; i < values.size(); ++i) {
      v[i] = momentum_ * v[i] + (g[i] + weight_decay_ * values[i]);
      values[i] -= lr * v[i];
    }
    p.zero_grad();
  }
}

}  // namespace reve::nn
