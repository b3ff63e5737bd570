#include "reve/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace reve::data {

Batch LabeledDataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t sample = inputs.size() / size();
  std::vector<double> values(indices.size() * sample);
  std::vector<int> out_labels(indices.size());
  auto v = inputs.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= size()) throw std::invalid_argument("LabeledDataset::batch: index out of range");
    std::memcpy(&values[i * sample], &v[src * sample], sample * sizeof(double));
    out_labels[i] = labels[src];
  }
  Shape shape = inputs.shape();
  shape[0] = indices.size();
  return Batch{Tensor(std::move(shape), std::move(values)), std::move(out_labels)};
}

Batch LabeledDataset::all() const {
  return Batch{inputs, labels};
}

LabeledDataset synth_nuisance_blobs(std::size_t n_classes, std::size_t n_informative_dims,
                                    std::size_t n_nuisance_dims, double noise,
                                    std::size_t n_samples, std::uint64_t seed) {
  if (n_classes == 0 || n_informative_dims == 0 || n_samples == 0) {
    throw std::invalid_argument("synth_nuisance_blobs: dimensions must be positive");
  }
  if (n_classes > n_informative_dims) {
    throw std::invalid_argument("synth_nuisance_blobs: needs n_classes <= n_informative_dims "
                                "for simplex centers");
  }
  const std::size_t dim = n_informative_dims + n_nuisance_dims;

  // centered one-hot vertices: equidistant centers, zero centroid
  const double center_scale = 2.0;
  std::vector<double> centers(n_classes * n_informative_dims, 0.0);
  for (std::size_t k = 0; k < n_classes; ++k) {
    for (std::size_t j = 0; j < n_informative_dims; ++j) {
      double v = (j == k ? 1.0 : 0.0) - (j < n_classes ? 1.0 / static_cast<double>(n_classes) : 0.0);
      centers[k * n_informative_dims + j] = center_scale * v;
    }
  }

  Rng rng(seed);
  std::vector<double> values(n_samples * dim);
  std::vector<int> labels(n_samples);
  for (std::size_t n = 0; n < n_samples; ++n) {
    const std::size_t k = n % n_classes;  // balanced within +-1
    labels[n] = static_cast<int>(k);
    for (std::size_t j = 0; j < dim; ++j) {
      const double center =
          j < n_informative_dims ? centers[k * n_informative_dims + j] : 0.0;
      values[n * dim + j] = center + noise * rng.normal();
    }
  }

  LabeledDataset ds;
  ds.inputs = Tensor(Shape{n_samples, dim}, std::move(values));
  ds.labels = std::move(labels);
  ds.n_classes = n_classes;
  ds.split = "train";
  return ds;
}

std::pair<LabeledDataset, LabeledDataset> make_blobs(const BlobsSpec& spec) {
  Rng streams(spec.seed);
  const std::uint64_t train_seed = streams.fork(1).next_u64();
  const std::uint64_t test_seed = streams.fork(2).next_u64();
  LabeledDataset train = synth_nuisance_blobs(spec.n_classes, spec.informative, spec.nuisance,
                                              spec.noise, spec.n_train, train_seed);
  LabeledDataset test = synth_nuisance_blobs(spec.n_classes, spec.informative, spec.nuisance,
                                             spec.noise, spec.n_test, test_seed);
  test.split = "test";
  normalize_with_train_stats(train, test);
  return {std::move(train), std::move(test)};
}

// -------------------------------------------------------------- IDX loader

namespace {

std::uint32_t read_be_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error(std::string("load_idx: truncated ") + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t limit) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw std::runtime_error("load_idx: cannot open '" + images_path + "'");
  const std::uint32_t img_magic = read_be_u32(img, "image magic");
  if (img_magic != 0x00000803u) {
    throw std::runtime_error("load_idx: bad image magic number");
  }
  const std::uint32_t n_images = read_be_u32(img, "image count");
  const std::uint32_t rows = read_be_u32(img, "rows");
  const std::uint32_t cols = read_be_u32(img, "cols");

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw std::runtime_error("load_idx: cannot open '" + labels_path + "'");
  const std::uint32_t lab_magic = read_be_u32(lab, "label magic");
  if (lab_magic != 0x00000801u) {
    throw std::runtime_error("load_idx: bad label magic number");
  }
  const std::uint32_t n_labels = read_be_u32(lab, "label count");
  if (n_labels != n_images) {
    throw std::runtime_error("load_idx: image count " + std::to_string(n_images) +
                             " does not match label count " + std::to_string(n_labels));
  }

  const std::size_t n = limit > 0 ? std::min<std::size_t>(limit, n_images) : n_images;
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;

  std::vector<unsigned char> raw(n * pixels);
  img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!img) throw std::runtime_error("load_idx: truncated image data");
  std::vector<unsigned char> raw_labels(n);
  lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(n));
  if (!lab) throw std::runtime_error("load_idx: truncated label data");

  std::vector<double> values(n * pixels);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = raw[i] / 255.0;
  std::vector<int> labels(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = raw_labels[i];
    max_label = std::max(max_label, labels[i]);
  }

  LabeledDataset ds;
  ds.inputs = Tensor(Shape{n, 1, rows, cols}, std::move(values));
  ds.labels = std::move(labels);
  ds.n_classes = static_cast<std::size_t>(max_label) + 1;
  ds.split = "train";
  return ds;
}

// ----------------------------------------------------------- normalization

namespace {

// per-channel for [N,C,H,W], per-coordinate for [N,D]
struct ChannelView {
  std::size_t channels = 0;
  std::size_t chan_stride = 0;  // elements per channel per sample
  std::size_t sample_size = 0;
};

ChannelView channel_view(const LabeledDataset& ds) {
  ChannelView v;
  const Shape& s = ds.inputs.shape();
  v.sample_size = ds.inputs.size() / ds.size();
  if (s.size() == 4) {
    v.channels = s[1];
    v.chan_stride = s[2] * s[3];
  } else {
    v.channels = v.sample_size;
    v.chan_stride = 1;
  }
  return v;
}

void apply_stats(LabeledDataset& ds, const std::vector<double>& mean,
                 const std::vector<double>& stddev) {
  const ChannelView v = channel_view(ds);
  auto values = ds.inputs.values_mut();
  for (std::size_t n = 0; n < ds.size(); ++n)
    for (std::size_t c = 0; c < v.channels; ++c)
      for (std::size_t i = 0; i < v.chan_stride; ++i) {
        double& x = values[n * v.sample_size + c * v.chan_stride + i];
        x = (x - mean[c]) / stddev[c];
      }
  ds.channel_mean = mean;
  ds.channel_std = stddev;
}

}  // namespace

void normalize_with_train_stats(LabeledDataset& train) {
  if (train.split != "train") {
    throw std::invalid_argument("normalize_with_train_stats: statistics must come from the "
                                "train split");
  }
  const ChannelView v = channel_view(train);
  std::vector<double> mean(v.channels, 0.0), stddev(v.channels, 0.0);
  const double count = static_cast<double>(train.size() * v.chan_stride);
  auto values = train.inputs.values();
  for (std::size_t n = 0; n < train.size(); ++n)
    for (std::size_t c = 0; c < v.channels; ++c)
      for (std::size_t i = 0; i < v.chan_stride; ++i)
        mean[c] += values[n * v.sample_size + c * v.chan_stride + i];
  for (double& m : mean) m /= count;
  for (std::size_t n = 0; n < train.size(); ++n)
    for (std::size_t c = 0; c < v.channels; ++c)
      for (std::size_t i = 0; i < v.chan_stride; ++i) {
        const double d = values[n * v.sample_size + c * v.chan_stride + i] - mean[c];
        stddev[c] += d * d;
      }
  for (double& s : stddev) s = std::sqrt(s / count);
  for (double& s : stddev) {
    if (s == 0.0) s = 1.0;  // constant channel stays constant
  }
  apply_stats(train, mean, stddev);
}

void normalize_with_train_stats(LabeledDataset& train, LabeledDataset& test) {
  normalize_with_train_stats(train);
  apply_stats(test, train.channel_mean, train.channel_std);
}

// ------------------------------------------------------------ augmentation

Batch augment(const Batch& batch, std::size_t pad, std::size_t crop, double hflip_prob,
              Rng& rng) {
  if (batch.inputs.rank() != 4) {
    throw std::invalid_argument("augment: expected image batch [N,C,H,W], got " +
                                shape_str(batch.inputs.shape()));
  }
  const std::size_t n = batch.inputs.shape()[0], c = batch.inputs.shape()[1];
  const std::size_t h = batch.inputs.shape()[2], w = batch.inputs.shape()[3];
  const std::size_t padded_h = h + 2 * pad, padded_w = w + 2 * pad;
  // crop == 0 restores the original extents; an explicit crop is square
  const std::size_t crop_h = crop == 0 ? h : crop;
  const std::size_t crop_w = crop == 0 ? w : crop;
  if (crop_h > padded_h || crop_w > padded_w) {
    throw std::invalid_argument("augment: crop " + std::to_string(crop) +
                                " larger than padded image " + std::to_string(padded_h) + "x" +
                                std::to_string(padded_w));
  }

  auto in = batch.inputs.values();
  std::vector<double> out(n * c * crop_h * crop_w, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t oy = rng.uniform_index(padded_h - crop_h + 1);
    const std::size_t ox = rng.uniform_index(padded_w - crop_w + 1);
    const bool flip = rng.uniform() < hflip_prob;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < crop_h; ++y)
        for (std::size_t x = 0; x < crop_w; ++x) {
          // source position in the padded frame
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy + y) -
                                    static_cast<std::ptrdiff_t>(pad);
          const std::size_t tx = flip ? crop_w - 1 - x : x;
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox + tx) -
                                    static_cast<std::ptrdiff_t>(pad);
          double v = 0.0;  // zero fill outside the original image
          if (sy >= 0 && sy < static_cast<std::ptrdiff_t>(h) && sx >= 0 &&
              sx < static_cast<std::ptrdiff_t>(w)) {
            v = in[((b * c + ch) * h + static_cast<std::size_t>(sy)) * w +
                   static_cast<std::size_t>(sx)];
          }
          out[((b * c + ch) * crop_h + y) * crop_w + x] = v;
        }
  }
  return Batch{Tensor(Shape{n, c, crop_h, crop_w}, std::move(out)), batch.labels};
}

}  // namespace reve::data
